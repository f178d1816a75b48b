//! Turns a resolved configuration into a model, a grid, a time step and
//! initial data.

use lieflow::fixtures::{sech, su2_a, su2_field, u3_potential, u3_regular_a};
use lieflow::gridcalc::{stable_dt, DecayClass, Field, LineGrid};
use lieflow::hierarchy::HierarchyContext;
use lieflow::liecore::{AlgebraElement, AlgebraTag, CMat, Family, C64, I};
use lieflow::symspace::{catalog, sample_components, SpaceId, SymmetricSpaceSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::output::read_field_jsonl;
use crate::CliError;

pub struct Model {
    pub tag: AlgebraTag,
    pub a: AlgebraElement,
    pub b: AlgebraElement,
    pub j: usize,
    pub space: Option<SymmetricSpaceSpec>,
    pub ctx: HierarchyContext,
}

fn cfg_err(m: impl Into<String>) -> CliError {
    CliError::Config(m.into())
}

pub fn parse_tag(s: &str) -> Result<AlgebraTag, CliError> {
    let split = s.find(|c: char| c.is_ascii_digit()).ok_or_else(|| cfg_err(format!("algebra '{s}' has no size")))?;
    let n: usize = s[split..].parse().map_err(|_| cfg_err(format!("bad algebra size in '{s}'")))?;
    let family = match &s[..split] {
        "u" => Family::U,
        "su" => Family::Su,
        "so" => Family::So,
        "sp" => Family::Sp,
        f => return Err(cfg_err(format!("unknown algebra family '{f}'; use u, su, so or sp"))),
    };
    Ok(AlgebraTag::new(family, n)?)
}

/// `none`, `grkcn:n,k`, `sn:n`, `gr2rn2:n`, `so2nun:n` or `spnun:n`.
pub fn parse_space(s: &str) -> Result<Option<SpaceId>, CliError> {
    if s == "none" {
        return Ok(None);
    }
    let (name, args) = s.split_once(':').ok_or_else(|| cfg_err(format!("space '{s}' needs ':' and sizes")))?;
    let nums = args
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| cfg_err(format!("bad size '{v}' in space '{s}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    let one = || match nums[..] {
        [n] => Ok(n),
        _ => Err(cfg_err(format!("space '{name}' takes one size"))),
    };
    Ok(Some(match name {
        "grkcn" => match nums[..] {
            [n, k] => SpaceId::GrkCn { n, k },
            _ => return Err(cfg_err("grkcn takes n,k")),
        },
        "sn" => SpaceId::Sn { n: one()? },
        "gr2rn2" => SpaceId::Gr2Rn2 { n: one()? },
        "so2nun" => SpaceId::SO2nUn { n: one()? },
        "spnun" => SpaceId::SpnUn { n: one()? },
        _ => return Err(cfg_err(format!("unknown space '{name}'"))),
    }))
}

/// `diag:d1,...,dn` gives `i diag(d)` projected into the algebra.
fn parse_element(tag: AlgebraTag, s: &str, key: &str) -> Result<AlgebraElement, CliError> {
    let body = s
        .strip_prefix("diag:")
        .ok_or_else(|| cfg_err(format!("{key} must be 'default' or 'diag:d1,...,dn', got '{s}'")))?;
    let d = body
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| cfg_err(format!("bad entry '{v}' in {key}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if d.len() != tag.size() {
        return Err(cfg_err(format!("{key} has {} entries for matrices of size {}", d.len(), tag.size())));
    }
    let m = CMat::from_diagonal(&nalgebra::DVector::from_iterator(d.len(), d.iter().map(|&v| I * v)));
    if tag.membership_defect(&m) > 1e-12 {
        return Err(cfg_err(format!("{key} = {s} is not in {tag:?}")));
    }
    Ok(AlgebraElement::new(tag, m)?)
}

pub fn model(cfg: &RunConfig) -> Result<Model, CliError> {
    let j: usize = cfg.get("j")?;
    if j == 0 {
        return Err(cfg_err("j must be at least 1"));
    }
    let space = parse_space(cfg.str("space"))?.map(catalog).transpose()?;
    let (tag, a) = match &space {
        Some(s) => {
            if cfg.str("a") != "default" {
                return Err(cfg_err("a is fixed by the symmetric space; leave it at 'default'"));
            }
            (s.tag, s.a.clone())
        }
        None => {
            let tag = parse_tag(cfg.str("algebra"))?;
            let a = match cfg.str("a") {
                "default" if tag == AlgebraTag::su(2) => su2_a(),
                "default" if tag == AlgebraTag::u(3) => u3_regular_a(),
                "default" => return Err(cfg_err(format!("no default a for {tag:?}; give a = diag:..."))),
                other => parse_element(tag, other, "a")?,
            };
            (tag, a)
        }
    };
    let b = match cfg.str("b") {
        "a" => a.clone(),
        other => parse_element(tag, other, "b")?,
    };
    let ctx = HierarchyContext::new(&a, &b, j)?;
    Ok(Model { tag, a, b, j, space, ctx })
}

pub fn grid(cfg: &RunConfig) -> Result<LineGrid, CliError> {
    Ok(LineGrid::new(cfg.get("grid.L")?, cfg.get("grid.N")?)?.with_accuracy(cfg.get("grid.acc")?)?)
}

/// `auto` is the explicit stability bound for the flow order. A larger
/// explicit step needs `time.allow_unstable = true`.
pub fn time_step(cfg: &RunConfig, g: &LineGrid, order: usize) -> Result<f64, CliError> {
    let bound = stable_dt(g.h, order).ok();
    match cfg.str("time.dt") {
        "auto" => bound.ok_or_else(|| cfg_err(format!("no automatic step for order {order}; set time.dt"))),
        _ => {
            let dt: f64 = cfg.get("time.dt")?;
            if !(dt > 0.0) {
                return Err(cfg_err("time.dt must be positive"));
            }
            if let Some(b) = bound {
                if dt > b && !cfg.flag("time.allow_unstable")? {
                    return Err(cfg_err(format!(
                        "time.dt = {dt} exceeds the stability bound {b:.3e}; set time.allow_unstable = true to force it"
                    )));
                }
            }
            Ok(dt)
        }
    }
}

pub fn t_final(cfg: &RunConfig) -> Result<f64, CliError> {
    let t: f64 = cfg.get("time.T")?;
    if !(t >= 0.0) {
        return Err(cfg_err("time.T must be non-negative"));
    }
    Ok(t)
}

/// A fixed off-centraliser direction of unit norm, chosen by the seed.
fn direction(m: &Model, seed: u64) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = m.ctx.cd.pi1_m(&m.tag.random(&mut rng, 1.0));
    let n = w.norm();
    w.unscale(n)
}

pub fn initial_data(cfg: &RunConfig, m: &Model, g: LineGrid) -> Result<Field, CliError> {
    let amp: f64 = cfg.get("init.amp")?;
    let k: f64 = cfg.get("init.k")?;
    let seed: u64 = cfg.get("seed")?;
    let u = match cfg.str("init") {
        "zero" => Field::zeros(g, m.tag),
        "sech" if m.tag == AlgebraTag::su(2) && m.space.is_none() => {
            su2_field(g, |x| C64::from_polar(amp * sech(x), k * x))?
        }
        "sech" => {
            let w = direction(m, seed);
            Field::from_fn(g, m.tag, DecayClass::Decaying, |x| w.scale(amp * sech(x) * (k * x).cos()))?
        }
        "u3" => {
            if m.tag != AlgebraTag::u(3) || m.a.m != u3_regular_a().m {
                return Err(cfg_err("init = u3 needs algebra = u3 with the default a"));
            }
            u3_potential(g, amp)?
        }
        "components" => {
            let s = m.space.as_ref().ok_or_else(|| cfg_err("init = components needs a space"))?;
            s.embed(g, &sample_components(s, g, seed))?.scale(amp)
        }
        "file" => {
            let path = cfg.str("init.file");
            if path.is_empty() {
                return Err(cfg_err("init = file needs init.file"));
            }
            let values = read_field_jsonl(std::path::Path::new(path), m.tag.size())?;
            if values.len() != g.n {
                return Err(cfg_err(format!("{path}: {} samples on a grid of {}", values.len(), g.n)));
            }
            Field::new(g, m.tag, values, DecayClass::Free)?
        }
        other => return Err(cfg_err(format!("unknown init '{other}'"))),
    };
    Ok(u.with_class(DecayClass::Decaying))
}

/// Stride and a step no larger than `dt` that split `[0, t]` into exactly
/// `output.snapshots` intervals.
pub fn stride(cfg: &RunConfig, t: f64, dt: f64) -> Result<(usize, f64), CliError> {
    let snaps: usize = cfg.get("output.snapshots")?;
    if snaps == 0 {
        return Err(cfg_err("output.snapshots must be at least 1"));
    }
    if t == 0.0 {
        return Ok((1, dt));
    }
    let stride = ((t / (dt * snaps as f64)).ceil() as usize).max(1);
    // Slightly above t / steps so that the integrator's ceil lands on `snaps`.
    Ok((stride, t / (snaps * stride) as f64 * (1.0 + 1e-12)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tags_and_spaces() {
        assert_eq!(parse_tag("su2").unwrap(), AlgebraTag::su(2));
        assert_eq!(parse_tag("sp3").unwrap(), AlgebraTag::sp(3));
        assert!(parse_tag("gl2").is_err());
        assert!(matches!(parse_space("sn:3").unwrap(), Some(SpaceId::Sn { n: 3 })));
        assert!(matches!(parse_space("grkcn:4,2").unwrap(), Some(SpaceId::GrkCn { n: 4, k: 2 })));
        assert!(parse_space("none").unwrap().is_none());
        assert!(parse_space("grkcn:4").is_err());
    }

    #[test]
    fn diagonal_elements() {
        let a = parse_element(AlgebraTag::u(3), "diag:1,0.3,-0.8", "a").unwrap();
        assert_eq!(a.m, u3_regular_a().m);
        assert!(parse_element(AlgebraTag::su(2), "diag:1,1", "a").is_err());
        assert!(parse_element(AlgebraTag::su(2), "diag:1", "a").is_err());
    }
}

//! Explicit solutions: vacuum frames, SU(n) dressing by simple factors,
//! N-solitons, normalization of frames to curves, and finite type solutions.

use std::sync::Arc;

use crate::devmap::{curve_flow_rhs, develop, Curve};
use crate::error::{LieError, Result};
use crate::gridcalc::{derivative_values, limit_at_left, rk4_step, DecayClass, Field, LineGrid, TAU_DECAY};
use crate::hierarchy::{flow_rhs, HierarchyContext};
use crate::liecore::{comm, AlgebraTag, CMat, C64, ONE};

/// Simple factors are not evaluated closer than this to their pole.
pub const POLE_GUARD: f64 = 1e-6;
/// Smallest admissible singular-value ratio of a dressed subspace basis.
pub const TAU_RANK: f64 = 1e-10;
/// Largest admissible mixed-partial residual of a finite type solution.
pub const TAU_COMPAT: f64 = 1e-4;

/// `E(x, t, lambda) = exp(a lambda x + b lambda^j t)`, the frame of `u = 0`.
/// Unitary for real `lambda`.
pub fn vacuum_frame(ctx: &HierarchyContext, lambda: C64, x: f64, t: f64) -> CMat {
    let m = ctx.a() * (lambda * x) + &ctx.b * (lambda.powu(ctx.j as u32) * t);
    m.exp()
}

/// A pole `z` off the real axis and a proper subspace `V` of `C^n`.
#[derive(Clone, Debug)]
pub struct BacklundDatum {
    pub z: C64,
    /// Orthonormal columns spanning `V`.
    pub basis: CMat,
}

impl BacklundDatum {
    pub fn new(z: C64, basis: CMat) -> Result<Self> {
        if z.im.abs() <= POLE_GUARD {
            return Err(LieError::domain("BacklundDatum", "z must lie off the real axis", z.im.abs()));
        }
        let (n, m) = basis.shape();
        if m == 0 || m >= n {
            return Err(LieError::Shape(format!("subspace of dimension {m} in C^{n} is not proper")));
        }
        let d = (basis.adjoint() * &basis - CMat::identity(m, m)).norm();
        if d > 1e-10 {
            return Err(LieError::domain("BacklundDatum", "basis is not orthonormal", d));
        }
        Ok(BacklundDatum { z, basis })
    }

    /// Orthonormalises the given spanning columns first.
    pub fn from_span(z: C64, span: &CMat) -> Result<Self> {
        let p = hermitian_projector(span, "BacklundDatum::from_span")?;
        let m = span.ncols();
        let svd = p.svd(true, false);
        let u = svd.u.ok_or_else(|| LieError::numerical("BacklundDatum::from_span", "SVD failed"))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|x, y| svd.singular_values[*y].partial_cmp(&svd.singular_values[*x]).unwrap());
        let cols: Vec<_> = order[..m].iter().map(|&c| u.column(c).into_owned()).collect();
        BacklundDatum::new(z, CMat::from_columns(&cols))
    }

    pub fn projector(&self) -> CMat {
        &self.basis * self.basis.adjoint()
    }
}

/// Orthogonal projector onto the column span of `w`, which must have full
/// column rank.
fn hermitian_projector(w: &CMat, op: &'static str) -> Result<CMat> {
    let mut w = w.clone();
    for mut c in w.column_iter_mut() {
        let n = c.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(LieError::numerical(op, "degenerate subspace basis"));
        }
        c /= C64::from(n);
    }
    let svd = w.clone().svd(true, false);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if smin < TAU_RANK * smax {
        return Err(LieError::numerical(op, format!("subspace rank collapse (ratio {:.1e})", smin / smax)));
    }
    let u = svd.u.ok_or_else(|| LieError::numerical(op, "SVD failed"))?;
    Ok(&u * u.adjoint())
}

fn guard(lambda: C64, pole: C64, op: &'static str) -> Result<()> {
    let d = (lambda - pole).norm();
    if d < POLE_GUARD {
        return Err(LieError::domain(op, "evaluation at the pole", d));
    }
    Ok(())
}

/// `f_{z,pi}(lambda) = I + (conj z - z)/(lambda - conj z) pi^perp`.
fn factor(z: C64, pi: &CMat, lambda: C64) -> Result<CMat> {
    guard(lambda, z.conj(), "simple_factor")?;
    let n = pi.nrows();
    let perp = CMat::identity(n, n) - pi;
    Ok(CMat::identity(n, n) + perp * ((z.conj() - z) / (lambda - z.conj())))
}

/// `f_{z,pi}(lambda)^{-1} = pi + (lambda - conj z)/(lambda - z) pi^perp`.
fn factor_inv(z: C64, pi: &CMat, lambda: C64) -> Result<CMat> {
    guard(lambda, z, "simple_factor_inv")?;
    let n = pi.nrows();
    let perp = CMat::identity(n, n) - pi;
    Ok(pi + perp * ((lambda - z.conj()) / (lambda - z)))
}

pub fn simple_factor(d: &BacklundDatum, lambda: C64) -> Result<CMat> {
    factor(d.z, &d.projector(), lambda)
}

pub fn simple_factor_inv(d: &BacklundDatum, lambda: C64) -> Result<CMat> {
    factor_inv(d.z, &d.projector(), lambda)
}

/// A solution of a `(b, j)`-flow known through its frame, with
/// `E^{-1} E_x = a lambda + u` and `E(0, 0, lambda) = I`.
pub trait FrameField: Send + Sync {
    fn frame(&self, x: f64, t: f64, lambda: C64) -> Result<CMat>;
    fn potential(&self, x: f64, t: f64) -> Result<CMat>;
}

struct Vacuum {
    ctx: HierarchyContext,
}

impl FrameField for Vacuum {
    fn frame(&self, x: f64, t: f64, lambda: C64) -> Result<CMat> {
        Ok(vacuum_frame(&self.ctx, lambda, x, t))
    }

    fn potential(&self, _x: f64, _t: f64) -> Result<CMat> {
        Ok(self.ctx.tag().zero())
    }
}

/// One dressing step over a base solution. Every evaluation calls the base
/// frame twice, so N steps cost `2^N` vacuum evaluations.
struct Dressed {
    base: Arc<dyn FrameField>,
    z: C64,
    basis: CMat,
    pi: CMat,
    a: CMat,
}

impl Dressed {
    /// `pi~(x, t)`, the projector onto `E(x, t, z)^* V`.
    fn moved_projector(&self, x: f64, t: f64) -> Result<CMat> {
        let e = self.base.frame(x, t, self.z)?;
        hermitian_projector(&(e.adjoint() * &self.basis), "backlund")
    }
}

impl FrameField for Dressed {
    fn frame(&self, x: f64, t: f64, lambda: C64) -> Result<CMat> {
        let pt = self.moved_projector(x, t)?;
        let e = self.base.frame(x, t, lambda)?;
        Ok(factor(self.z, &self.pi, lambda)? * e * factor_inv(self.z, &pt, lambda)?)
    }

    fn potential(&self, x: f64, t: f64) -> Result<CMat> {
        let pt = self.moved_projector(x, t)?;
        Ok(self.base.potential(x, t)? + comm(&pt, &self.a) * (self.z - self.z.conj()))
    }
}

/// A vacuum solution dressed by a sequence of simple factors.
#[derive(Clone)]
pub struct SolitonSolution {
    pub ctx: HierarchyContext,
    pub data: Vec<BacklundDatum>,
    frame: Arc<dyn FrameField>,
}

impl std::fmt::Debug for SolitonSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolitonSolution").field("data", &self.data).finish()
    }
}

impl SolitonSolution {
    /// Dressing uses the SU(n) reality condition, so the algebra must be u(n) or su(n).
    pub fn vacuum(ctx: &HierarchyContext) -> Result<Self> {
        use crate::liecore::Family;
        if !matches!(ctx.tag().family, Family::U | Family::Su) {
            return Err(LieError::Unsupported(
                "dressing is implemented for the unitary reality condition only".into(),
            ));
        }
        Ok(SolitonSolution {
            ctx: ctx.clone(),
            data: Vec::new(),
            frame: Arc::new(Vacuum { ctx: ctx.clone() }),
        })
    }

    pub fn tag(&self) -> AlgebraTag {
        self.ctx.tag()
    }

    pub fn frame(&self, x: f64, t: f64, lambda: C64) -> Result<CMat> {
        self.frame.frame(x, t, lambda)
    }

    pub fn potential(&self, x: f64, t: f64) -> Result<CMat> {
        self.frame.potential(x, t)
    }

    /// The potential sampled on a grid at time `t`, as a decaying field.
    pub fn field(&self, grid: LineGrid, t: f64) -> Result<Field> {
        let values = grid.xs().iter().map(|&x| self.potential(x, t)).collect::<Result<Vec<_>>>()?;
        Field::new(grid, self.tag(), values, DecayClass::Decaying)
    }

    /// One dressing step; the new pole must differ from the existing ones.
    pub fn backlund(&self, d: &BacklundDatum) -> Result<Self> {
        if d.basis.nrows() != self.tag().size() {
            return Err(LieError::Shape(format!(
                "subspace of C^{} for an algebra of {}x{} matrices",
                d.basis.nrows(),
                self.tag().size(),
                self.tag().size()
            )));
        }
        if let Some(p) = self.data.iter().find(|p| (p.z - d.z).norm() < POLE_GUARD || (p.z.conj() - d.z).norm() < POLE_GUARD) {
            return Err(LieError::domain("backlund", "pole coincides with an earlier pole", (p.z - d.z).norm()));
        }
        let mut data = self.data.clone();
        data.push(d.clone());
        Ok(SolitonSolution {
            ctx: self.ctx.clone(),
            data,
            frame: Arc::new(Dressed {
                base: self.frame.clone(),
                z: d.z,
                basis: d.basis.clone(),
                pi: d.projector(),
                a: self.ctx.a().clone(),
            }),
        })
    }
}

/// Repeated dressing of the vacuum.
pub fn n_soliton(ctx: &HierarchyContext, data: &[BacklundDatum]) -> Result<SolitonSolution> {
    data.iter().try_fold(SolitonSolution::vacuum(ctx)?, |s, d| s.backlund(d))
}

/// Fourth-order central difference in time.
fn time_derivative(f: impl Fn(f64) -> Result<Field>, t: f64, dt: f64) -> Result<Field> {
    let p2 = f(t + 2.0 * dt)?;
    let p1 = f(t + dt)?;
    let m1 = f(t - dt)?;
    let m2 = f(t - 2.0 * dt)?;
    Ok(m2.sub(&p2).add(&p1.sub(&m1).scale(8.0)).scale(1.0 / (12.0 * dt)))
}

/// `sup |u_t - flow_rhs(u)|` at time `t`, with `u_t` by central differences of step `dt`.
pub fn flow_residual(sol: &SolitonSolution, grid: LineGrid, t: f64, dt: f64) -> Result<f64> {
    let ut = time_derivative(|s| sol.field(grid, s), t, dt)?;
    let rhs = flow_rhs(&sol.ctx, &sol.field(grid, t)?)?;
    Ok(ut.sup_diff(&rhs))
}

/// `sup |E^{-1} E_x - (a lambda + u)|` over the given points, by central differences.
pub fn frame_residual(sol: &SolitonSolution, points: &[(f64, f64)], lambda: C64) -> Result<f64> {
    let dx = 1e-3;
    let mut worst = 0.0f64;
    for &(x, t) in points {
        let e = sol.frame(x, t, lambda)?;
        let ex = (sol.frame(x - 2.0 * dx, t, lambda)? - sol.frame(x + 2.0 * dx, t, lambda)?
            + (sol.frame(x + dx, t, lambda)? - sol.frame(x - dx, t, lambda)?) * C64::from(8.0))
            / C64::from(12.0 * dx);
        let inv = e
            .try_inverse()
            .ok_or_else(|| LieError::numerical("frame_residual", "singular frame"))?;
        let target = sol.ctx.a() * lambda + sol.potential(x, t)?;
        worst = worst.max((inv * ex - target).norm());
    }
    Ok(worst)
}

/// Curves `gamma(., t) = c^{-1} k a k^{-1} c` built from the frame at `lambda = 0`.
#[derive(Clone, Debug)]
pub struct SolitonCurve {
    pub times: Vec<f64>,
    pub curves: Vec<Curve>,
    /// Left limit of the frame on the first slice.
    pub c: CMat,
    /// Largest deviation of the left limit on later slices from `c`.
    pub c_drift: f64,
}

fn frame_slice(frame: &dyn FrameField, grid: LineGrid, t: f64) -> Result<Vec<CMat>> {
    grid.xs().iter().map(|&x| frame.frame(x, t, ONE * 0.0)).collect()
}

/// Normalizes the `lambda = 0` frame so that every slice starts at `a`.
pub fn soliton_to_curve(sol: &SolitonSolution, grid: LineGrid, times: &[f64]) -> Result<SolitonCurve> {
    if times.is_empty() {
        return Err(LieError::Shape("no time slices requested".into()));
    }
    let a = sol.ctx.cd.a.clone();
    let mut c: Option<CMat> = None;
    let mut c_drift = 0.0f64;
    let mut curves = Vec::with_capacity(times.len());
    for &t in times {
        let k = frame_slice(sol.frame.as_ref(), grid, t)?;
        let lim = limit_at_left(&k, TAU_DECAY);
        if !lim.flat {
            return Err(LieError::domain("soliton_to_curve", "frame tail is not flat", lim.tail_deviation));
        }
        let c0 = c.get_or_insert_with(|| lim.value.clone()).clone();
        c_drift = c_drift.max((&lim.value - &c0).norm());
        let ci = c0.adjoint();
        let values = k.iter().map(|k| &ci * k * &a.m * k.adjoint() * &c0).collect();
        let field = Field::raw(grid, a.tag, values);
        curves.push(Curve::new(field, &a)?);
    }
    Ok(SolitonCurve {
        times: times.to_vec(),
        curves,
        c: c.unwrap(),
        c_drift,
    })
}

/// `sup |gamma_t - curve_flow_rhs(gamma)|` for the normalized curve at `t`.
pub fn curve_flow_residual(sol: &SolitonSolution, grid: LineGrid, t: f64, dt: f64) -> Result<f64> {
    let times = [t - 2.0 * dt, t - dt, t, t + dt, t + 2.0 * dt];
    let sc = soliton_to_curve(sol, grid, &times)?;
    let f = |i: usize| sc.curves[i].field.clone();
    let gt = f(0).sub(&f(4)).add(&f(3).sub(&f(1)).scale(8.0)).scale(1.0 / (12.0 * dt));
    let rhs = curve_flow_rhs(&sol.ctx, &develop(&sol.ctx, &sc.curves[2])?)?;
    Ok(gt.sup_diff(&rhs))
}

/// Coefficients `xi_0 = a, xi_1, ..., xi_k` at one point.
#[derive(Clone, Debug)]
pub struct FiniteTypeState {
    pub xi: Vec<CMat>,
}

/// Precomputed data of the finite type system: `a^2 = -mu2 I` and `b = rho a`.
#[derive(Clone, Debug)]
pub struct FiniteTypeModel {
    pub ctx: HierarchyContext,
    pub k: usize,
    pub mu2: f64,
    pub rho: f64,
}

impl FiniteTypeModel {
    pub fn new(ctx: &HierarchyContext, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(LieError::Shape("finite type order must be at least 1".into()));
        }
        let a = ctx.a();
        let n = a.nrows();
        let sq = a * a;
        let mu2 = -sq.trace().re / n as f64;
        let d = (&sq + CMat::identity(n, n) * C64::from(mu2)).norm();
        if mu2 <= 0.0 || d > 1e-10 * mu2.max(1.0) {
            return Err(LieError::Unsupported(
                "finite type solutions need a^2 = -mu^2 I".into(),
            ));
        }
        let rho = (a.adjoint() * &ctx.b).trace().re / a.norm_squared();
        let dr = (&ctx.b - a * C64::from(rho)).norm();
        if dr > 1e-10 * ctx.b.norm().max(1.0) {
            return Err(LieError::Unsupported("finite type solutions need b parallel to a".into()));
        }
        Ok(FiniteTypeModel {
            ctx: ctx.clone(),
            k,
            mu2,
            rho,
        })
    }

    /// Checks `xi_0 = a`, `xi_1` perpendicular to the centraliser, the level
    /// count, and that `xi(lambda)^2` is scalar through order `j`.
    pub fn validate(&self, s: &FiniteTypeState) -> Result<()> {
        if s.xi.len() != self.k + 1 {
            return Err(LieError::Shape(format!("expected {} levels, got {}", self.k + 1, s.xi.len())));
        }
        let d0 = (&s.xi[0] - self.ctx.a()).norm();
        if d0 > 1e-12 {
            return Err(LieError::domain("finite_type", "xi_0 must equal a", d0));
        }
        let d1 = self.ctx.cd.pi0_m(&s.xi[1]).norm();
        if d1 > 1e-10 {
            return Err(LieError::domain("finite_type", "xi_1 must be perpendicular to the centraliser", d1));
        }
        for x in &s.xi {
            let m = self.ctx.tag().membership_defect(x);
            if m > 1e-10 {
                return Err(LieError::domain("finite_type", "coefficient outside the algebra", m));
            }
        }
        let n = s.xi[0].nrows();
        for m in 0..=self.ctx.j.max(self.k) {
            let sq = self.square_coefficient(&s.xi, m);
            let scalar = sq.trace() / C64::from(n as f64);
            let d = (&sq - CMat::identity(n, n) * scalar).norm();
            if d > 1e-10 * sq.norm().max(1.0) {
                return Err(LieError::Unsupported(format!(
                    "xi(lambda)^2 is not scalar at order {m} (defect {d:.1e})"
                )));
            }
        }
        Ok(())
    }

    fn level<'a>(&self, xi: &'a [CMat], i: usize) -> Option<&'a CMat> {
        xi.get(i)
    }

    /// Coefficient of `lambda^{-m}` in `xi(lambda)^2`.
    fn square_coefficient(&self, xi: &[CMat], m: usize) -> CMat {
        let n = xi[0].nrows();
        let mut out = CMat::zeros(n, n);
        for i in 0..=m {
            if let (Some(x), Some(y)) = (self.level(xi, i), self.level(xi, m - i)) {
                out += x * y;
            }
        }
        out
    }

    /// `Q_{b,0..j}(xi_1)` from `Q(lambda) = rho xi(lambda) (xi(lambda)^2 / -mu^2)^{-1/2}`.
    pub fn q_coefficients(&self, xi: &[CMat]) -> Vec<CMat> {
        let j = self.ctx.j;
        let n = xi[0].nrows();
        let r: Vec<f64> = (0..=j)
            .map(|m| (self.square_coefficient(xi, m).trace() / C64::from(n as f64)).re / -self.mu2)
            .collect();
        let c = series_power(&r, -0.5);
        (0..=j)
            .map(|m| {
                let mut q = CMat::zeros(n, n);
                for (i, cl) in c.iter().enumerate().take(m + 1) {
                    if let Some(x) = self.level(xi, m - i) {
                        q += x * C64::from(*cl);
                    }
                }
                q * C64::from(self.rho)
            })
            .collect()
    }

    /// `(xi_i)_x = [xi_{i+1}, a] + [xi_i, xi_1]`, `xi_{k+1} = 0`.
    ///
    /// The bracket order is that of the Q recursion, `xi(lambda)_x =
    /// [xi(lambda), a lambda + xi_1]`, so that `xi_1` solves the `(b, j)`-flow.
    pub fn x_rhs(&self, xi: &Vec<CMat>) -> Result<Vec<CMat>> {
        let a = self.ctx.a();
        let n = a.nrows();
        let mut out = vec![CMat::zeros(n, n)];
        for i in 1..=self.k {
            let mut d = comm(&xi[i], &xi[1]);
            if let Some(next) = xi.get(i + 1) {
                d += comm(next, a);
            }
            out.push(d);
        }
        Ok(out)
    }

    /// `(xi_i)_t = sum_m [xi_{i+j-m}, Q_m]`.
    pub fn t_rhs(&self, xi: &Vec<CMat>) -> Result<Vec<CMat>> {
        let q = self.q_coefficients(xi);
        let j = self.ctx.j;
        let n = xi[0].nrows();
        let mut out = vec![CMat::zeros(n, n)];
        for i in 1..=self.k {
            let mut d = CMat::zeros(n, n);
            for (m, qm) in q.iter().enumerate() {
                if let Some(x) = (i + j).checked_sub(m).and_then(|l| xi.get(l)) {
                    d += comm(x, qm);
                }
            }
            out.push(d);
        }
        Ok(out)
    }
}

/// Coefficients of `r(lambda)^alpha` for a series with `r_0 = 1`.
fn series_power(r: &[f64], alpha: f64) -> Vec<f64> {
    let mut y = vec![1.0];
    for n in 1..r.len() {
        let s: f64 = (1..=n)
            .map(|k| ((alpha + 1.0) * k as f64 - n as f64) * r[k] * y[n - k])
            .sum();
        y.push(s / n as f64);
    }
    y
}

const BLOW_UP: f64 = 1e8;

/// RK4 from `from` through each target in order, with steps no longer than `hmax`.
fn sweep(
    rhs: &impl Fn(&Vec<CMat>) -> Result<Vec<CMat>>,
    s0: &[CMat],
    from: f64,
    targets: &[f64],
    hmax: f64,
) -> Result<Vec<Vec<CMat>>> {
    let mut s = s0.to_vec();
    let mut at = from;
    let mut out = Vec::with_capacity(targets.len());
    let mut step = 0;
    for &target in targets {
        let span = target - at;
        let m = (span.abs() / hmax).ceil() as usize;
        for _ in 0..m {
            s = rk4_step(|y: &Vec<CMat>| rhs(y), &s, span / m as f64)?;
            step += 1;
            if s.iter().any(|x| !x.iter().all(|z| z.is_finite()) || x.norm() > BLOW_UP) {
                return Err(LieError::BlowUp { step });
            }
        }
        at = target;
        out.push(s.clone());
    }
    Ok(out)
}

/// Values over `(x, t)`, stored as `values[t][x]`.
#[derive(Clone, Debug)]
pub struct FiniteTypeSolution {
    pub tag: AlgebraTag,
    pub grid: LineGrid,
    pub times: Vec<f64>,
    pub values: Vec<Vec<FiniteTypeState>>,
    /// Mixed-partial disagreement at the probe points.
    pub compat_residual: f64,
    /// `sup |u_t - (Q_j)_x - [u, Q_j]|` at interior times, `u = xi_1`.
    pub flow_residual: f64,
}

impl FiniteTypeSolution {
    /// Level `i` at time index `ti`, as a field with no decay requirement.
    pub fn xi_field(&self, i: usize, ti: usize) -> Field {
        let v = self.values[ti].iter().map(|s| s.xi[i].clone()).collect();
        Field::raw(self.grid, self.tag, v).with_class(DecayClass::Free)
    }
}

/// Integrates the finite type system from `init` at `(0, 0)`: first in `t`
/// along `x = 0`, then in `x` for each stored time.
pub fn finite_type_solve(
    ctx: &HierarchyContext,
    k: usize,
    init: &FiniteTypeState,
    grid: LineGrid,
    t_final: f64,
    dt: f64,
) -> Result<FiniteTypeSolution> {
    let model = FiniteTypeModel::new(ctx, k)?;
    model.validate(init)?;
    if !(t_final > 0.0 && dt > 0.0) {
        return Err(LieError::Shape("t_final and dt must be positive".into()));
    }
    let nt = (t_final / dt).ceil() as usize;
    let dt = t_final / nt as f64;
    let times: Vec<f64> = (0..=nt).map(|i| i as f64 * dt).collect();
    let xr = |s: &Vec<CMat>| model.x_rhs(s);
    let tr = |s: &Vec<CMat>| model.t_rhs(s);
    let hx = grid.h;
    let mut line = vec![init.xi.clone()];
    line.extend(sweep(&tr, &init.xi, 0.0, &times[1..], dt.min(hx))?);

    let xs = grid.xs();
    let split = xs.partition_point(|&x| x < 0.0);
    let left: Vec<f64> = xs[..split].iter().rev().copied().collect();
    let right = &xs[split..];
    let mut values = Vec::with_capacity(times.len());
    for s0 in &line {
        let mut l = sweep(&xr, s0, 0.0, &left, hx)?;
        l.reverse();
        let r = sweep(&xr, s0, 0.0, right, hx)?;
        values.push(
            l.into_iter()
                .chain(r)
                .map(|xi| FiniteTypeState { xi })
                .collect::<Vec<_>>(),
        );
    }

    // Opposite order at probe points: x along t = 0, then t.
    let mut compat = 0.0f64;
    let probes = [grid.n / 4, grid.n / 2, 3 * grid.n / 4];
    for &pi in &probes {
        let xp = xs[pi];
        let at_x = sweep(&xr, &init.xi, 0.0, &[xp], hx)?.remove(0);
        let at_xt = sweep(&tr, &at_x, 0.0, &[t_final], dt.min(hx))?.remove(0);
        let d = at_xt
            .iter()
            .zip(&values[nt][pi].xi)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        compat = compat.max(d);
    }
    if compat > TAU_COMPAT {
        return Err(LieError::Consistency {
            op: "finite_type_solve",
            residual: compat,
            tolerance: TAU_COMPAT,
        });
    }

    let flow = finite_type_flow_residual(&model, grid, &values, dt)?;
    Ok(FiniteTypeSolution {
        tag: ctx.tag(),
        grid,
        times,
        values,
        compat_residual: compat,
        flow_residual: flow,
    })
}

fn finite_type_flow_residual(
    model: &FiniteTypeModel,
    grid: LineGrid,
    values: &[Vec<FiniteTypeState>],
    dt: f64,
) -> Result<f64> {
    let nt = values.len() - 1;
    let j = model.ctx.j;
    let mut worst = 0.0f64;
    for ti in 2..nt.saturating_sub(1) {
        let u = |t: usize| -> Vec<CMat> { values[t].iter().map(|s| s.xi[1].clone()).collect() };
        let (m2, m1, p1, p2) = (u(ti - 2), u(ti - 1), u(ti + 1), u(ti + 2));
        let q: Vec<CMat> = values[ti].iter().map(|s| model.q_coefficients(&s.xi)[j].clone()).collect();
        let qx = derivative_values(&q, grid.h, 1, grid.acc)?;
        for xi in 0..grid.n {
            let ut = (&m2[xi] - &p2[xi] + (&p1[xi] - &m1[xi]) * C64::from(8.0)) / C64::from(12.0 * dt);
            let ux = &values[ti][xi].xi[1];
            let r = ut - &qx[xi] - comm(ux, &q[xi]);
            worst = worst.max(r.norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{sech, su2_a, su2_from_q, su2_q};
    use crate::liecore::{I, ZERO};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nls() -> HierarchyContext {
        HierarchyContext::a_flow(&su2_a(), 2).unwrap()
    }

    fn datum(z: C64, v: &[C64]) -> BacklundDatum {
        BacklundDatum::from_span(z, &CMat::from_column_slice(v.len(), 1, v)).unwrap()
    }

    #[test]
    fn vacuum_frame_basics() {
        let ctx = nls();
        let lam = C64::new(0.7, -0.3);
        assert!((vacuum_frame(&ctx, ZERO, 1.3, 0.4) - CMat::identity(2, 2)).norm() < 1e-15);
        let e0 = vacuum_frame(&ctx, lam, 1.3, 0.0);
        assert!((e0 - (ctx.a() * (lam * 1.3)).exp()).norm() < 1e-14);
        let sol = SolitonSolution::vacuum(&ctx).unwrap();
        let r = frame_residual(&sol, &[(0.5, 0.2), (-1.0, 0.1)], lam).unwrap();
        assert!(r < 1e-9, "{r}");
        let e = vacuum_frame(&ctx, C64::from(0.8), 2.0, 0.5);
        assert!((e.adjoint() * &e - CMat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn simple_factor_reality_and_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(0.2..2.0));
            let v: Vec<C64> = (0..3).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let d = datum(z, &v);
            let lam = C64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let f = simple_factor(&d, lam).unwrap();
            let fb = simple_factor(&d, lam.conj()).unwrap();
            assert!((fb.adjoint() * f - CMat::identity(3, 3)).norm() < 1e-12);
            assert!((simple_factor(&d, z).unwrap() - d.projector()).norm() < 1e-12);
            assert!((simple_factor(&d, C64::from(1e12)).unwrap() - CMat::identity(3, 3)).norm() < 1e-10);
            assert!((simple_factor(&d, lam).unwrap() * simple_factor_inv(&d, lam).unwrap() - CMat::identity(3, 3)).norm() < 1e-10);
        }
        let d = datum(I, &[ONE, ONE]);
        assert!(matches!(simple_factor(&d, -I), Err(LieError::Domain { .. })));
        assert!(BacklundDatum::new(C64::from(1.0), CMat::from_column_slice(2, 1, &[ONE, ZERO])).is_err());
        assert!(BacklundDatum::new(I, CMat::identity(2, 2)).is_err());
    }

    #[test]
    fn one_soliton_is_the_sech_profile() {
        let ctx = nls();
        let sol = n_soliton(&ctx, &[datum(I, &[ONE, ONE])]).unwrap();
        for &(x, t) in &[(0.0, 0.0), (1.2, 0.3), (-2.5, 0.7)] {
            let q = su2_q(&sol.potential(x, t).unwrap());
            let want = C64::from_polar(sech(x), t);
            assert!((q - want).norm() < 1e-12, "{q} {want}");
        }
    }

    #[test]
    fn invariant_subspace_gives_zero() {
        let ctx = nls();
        let sol = n_soliton(&ctx, &[datum(C64::new(0.3, 0.8), &[ONE, ZERO])]).unwrap();
        assert!(sol.potential(1.0, 0.5).unwrap().norm() < 1e-14);
        assert!(n_soliton(&ctx, &[]).unwrap().potential(0.3, 0.0).unwrap().norm() == 0.0);
    }

    #[test]
    fn one_soliton_solves_the_flow_and_refines() {
        let ctx = nls();
        let sol = n_soliton(&ctx, &[datum(C64::new(0.4, 1.0), &[ONE, C64::new(0.3, 0.8)])]).unwrap();
        let mut errs = Vec::new();
        for n in [256, 512] {
            let g = LineGrid::new(20.0, n).unwrap().with_accuracy(4).unwrap();
            errs.push(flow_residual(&sol, g, 0.3, g.h).unwrap());
        }
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 2.0, "{errs:?}");
        let r = flow_residual(&sol, LineGrid::default(), 0.3, 1e-3).unwrap();
        assert!(r < 1e-4, "{r}");
        let u = sol.field(LineGrid::default(), 0.3).unwrap();
        let skew = u.values.iter().map(|m| (m + m.adjoint()).norm()).fold(0.0, f64::max);
        let pi0 = u.values.iter().map(|m| ctx.cd.pi0_m(m).norm()).fold(0.0, f64::max);
        assert!(skew < 1e-12 && pi0 < 1e-10);
    }

    #[test]
    fn two_soliton_frame_and_reality() {
        let ctx = nls();
        let data = [datum(C64::new(0.5, 0.9), &[ONE, ONE]), datum(C64::new(-0.4, 1.1), &[ONE, C64::new(0.0, 2.0)])];
        let sol = n_soliton(&ctx, &data).unwrap();
        assert!((sol.frame(0.0, 0.0, C64::new(0.3, 0.2)).unwrap() - CMat::identity(2, 2)).norm() < 1e-12);
        let pts = [(0.4, 0.1), (-1.3, 0.6), (2.0, -0.2)];
        for lam in [C64::new(0.3, 0.2), C64::from(-0.7)] {
            let r = frame_residual(&sol, &pts, lam).unwrap();
            assert!(r < 1e-4, "{r}");
            for &(x, t) in &pts {
                let e = sol.frame(x, t, lam).unwrap();
                let eb = sol.frame(x, t, lam.conj()).unwrap();
                assert!((eb.adjoint() * e - CMat::identity(2, 2)).norm() < 1e-8);
            }
        }
        let r = flow_residual(&sol, LineGrid::default(), 0.2, 1e-3).unwrap();
        assert!(r < 1e-3, "{r}");
        let g = LineGrid::default();
        let mass = |t| {
            let u = sol.field(g, t).unwrap();
            crate::hierarchy::conserved_F(&ctx, &u, 0).unwrap()
        };
        assert!((mass(0.0) - mass(0.8)).abs() < 1e-5);
        assert!(n_soliton(&ctx, &[data[0].clone(), data[0].clone()]).is_err());
    }

    #[test]
    fn soliton_curve_normalization() {
        let ctx = nls();
        let sol = n_soliton(&ctx, &[datum(C64::new(0.4, 1.0), &[ONE, C64::new(0.3, 0.8)])]).unwrap();
        let g = LineGrid::default();
        let sc = soliton_to_curve(&sol, g, &[0.0, 0.25, 0.5]).unwrap();
        assert!(sc.c_drift < 1e-6, "{}", sc.c_drift);
        assert!((sc.c.adjoint() * &sc.c - CMat::identity(2, 2)).norm() < 1e-10);
        let r = curve_flow_residual(&sol, g, 0.25, 1e-3).unwrap();
        assert!(r < 1e-3, "{r}");
        let vac = SolitonSolution::vacuum(&ctx).unwrap();
        let sc = soliton_to_curve(&vac, LineGrid::new(10.0, 64).unwrap(), &[0.0, 1.0]).unwrap();
        assert!(sc.curves.iter().all(|c| c.values().iter().all(|v| (v - ctx.a()).norm() < 1e-14)));
    }

    #[test]
    fn series_power_inverts_square_root() {
        let r = [1.0, 0.3, -0.2, 0.05];
        let c = series_power(&r, -0.5);
        // c^2 r = 1 as series.
        for n in 0..4 {
            let mut s = 0.0;
            for i in 0..=n {
                for l in 0..=(n - i) {
                    s += c[i] * c[l] * r[n - i - l];
                }
            }
            assert!((s - if n == 0 { 1.0 } else { 0.0 }).abs() < 1e-14);
        }
    }

    fn random_init(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> FiniteTypeState {
        let tag = AlgebraTag::su(2);
        let mut xi = vec![su2_a().m];
        xi.push(su2_from_q(C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale));
        for _ in 2..=k {
            xi.push(tag.random(rng, scale));
        }
        FiniteTypeState { xi }
    }

    #[test]
    fn finite_type_stationary_and_level_equations() {
        let ctx = nls();
        let g = LineGrid::new(5.0, 64).unwrap();
        let init = FiniteTypeState { xi: vec![su2_a().m, CMat::zeros(2, 2), CMat::zeros(2, 2)] };
        let sol = finite_type_solve(&ctx, 2, &init, g, 0.2, 0.05).unwrap();
        assert!(sol.values.iter().flatten().all(|s| s.xi[1].norm() == 0.0 && s.xi[2].norm() == 0.0));
        let model = FiniteTypeModel::new(&ctx, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_init(&mut rng, 2, 0.4);
        let d = model.x_rhs(&s.xi).unwrap();
        let want1 = comm(&s.xi[2], &s.xi[0]);
        let want2 = comm(&s.xi[2], &s.xi[1]);
        assert!((&d[1] - want1).norm() < 1e-15 && (&d[2] - want2).norm() < 1e-15);
        // Q_0 = b and Q_1 = xi_1.
        let q = model.q_coefficients(&s.xi);
        assert!((&q[0] - ctx.a()).norm() < 1e-15 && (&q[1] - &s.xi[1]).norm() < 1e-14);
        let bad = HierarchyContext::a_flow(&crate::fixtures::u3_regular_a(), 2).unwrap();
        assert!(matches!(FiniteTypeModel::new(&bad, 2), Err(LieError::Unsupported(_))));
    }

    #[test]
    fn finite_type_k2_solves_nls() {
        let ctx = nls();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let init = random_init(&mut rng, 2, 0.3);
        let g = LineGrid::new(5.0, 200).unwrap();
        let sol = finite_type_solve(&ctx, 2, &init, g, 0.5, 0.005).unwrap();
        assert!(sol.compat_residual < 1e-4, "{}", sol.compat_residual);
        assert!(sol.flow_residual < 1e-4, "{}", sol.flow_residual);
        // Independent closed form of the (a,2)-flow: [a, u_xx] - 1/2 [u, [u, [a, u]]].
        let a = ctx.a();
        let ti = sol.times.len() / 2;
        let u = sol.xi_field(1, ti);
        let uxx = derivative_values(&u.values, g.h, 2, g.acc).unwrap();
        let dt = sol.times[1];
        for xi in (10..g.n - 10).step_by(17) {
            let ut = (&sol.values[ti - 1][xi].xi[1] * C64::from(-1.0) + &sol.values[ti + 1][xi].xi[1]) / C64::from(2.0 * dt);
            let uu = &u.values[xi];
            let rhs = comm(a, &uxx[xi]) - comm(uu, &comm(uu, &comm(a, uu))) * C64::from(0.5);
            assert!((ut - rhs).norm() < 1e-4);
        }
    }
}

//! The U-hierarchy on a grid: the Q-sequence, flows, Lax pairs, conserved
//! functionals and the Poisson operators.

// Operator names follow the mathematical symbols (F, J, P, Lambda, H).
#![allow(non_snake_case)]

use std::sync::Arc;

use crate::error::{LieError, Result};
use crate::gridcalc::{
    antiderivative_from_left, derivative, march, Field, Trajectory,
};
use crate::liecore::{
    build_centralizer, comm, is_regular, AlgebraElement, AlgebraTag, CMat,
    CentralizerData, C64, TAU_ALG, TAU_SOLVE,
};

/// Relative tolerance on the centraliser part of `Q_j' + [u, Q_j]`.
pub const TAU_REC: f64 = 1e-6;

/// A choice of `(b, j)` over a fixed base point `a`.
#[derive(Clone, Debug)]
pub struct HierarchyContext {
    pub cd: Arc<CentralizerData>,
    pub b: CMat,
    pub j: usize,
}

impl HierarchyContext {
    /// `b` must commute with `a`; for singular `a` only `b = a` is allowed.
    pub fn new(a: &AlgebraElement, b: &AlgebraElement, j: usize) -> Result<Self> {
        let cd = Arc::new(build_centralizer(a));
        HierarchyContext::with_centralizer(cd, b, j, is_regular(a))
    }

    /// The `(a, j)`-flow.
    pub fn a_flow(a: &AlgebraElement, j: usize) -> Result<Self> {
        HierarchyContext::new(a, a, j)
    }

    fn with_centralizer(
        cd: Arc<CentralizerData>,
        b: &AlgebraElement,
        j: usize,
        regular: bool,
    ) -> Result<Self> {
        if b.tag != cd.tag() {
            return Err(LieError::TagMismatch(format!("{:?} vs {:?}", b.tag, cd.tag())));
        }
        if j == 0 {
            return Err(LieError::Shape("flow order must be at least 1".into()));
        }
        let scale = b.norm().max(1.0);
        let c = comm(&cd.a.m, &b.m).norm();
        if c > TAU_ALG * scale * cd.a.m.norm().max(1.0) {
            return Err(LieError::domain("HierarchyContext", "b does not commute with a", c));
        }
        if !regular {
            let d = (&b.m - &cd.a.m).norm();
            if d > TAU_ALG * scale {
                return Err(LieError::domain(
                    "HierarchyContext",
                    "a is singular, so only b = a is admitted",
                    d,
                ));
            }
        }
        Ok(HierarchyContext {
            cd,
            b: b.m.clone(),
            j,
        })
    }

    /// Same base point with another `(b, j)`.
    pub fn with_flow(&self, b: &AlgebraElement, j: usize) -> Result<Self> {
        let regular = self.cd.kernel_dim() == self.tag().rank();
        HierarchyContext::with_centralizer(self.cd.clone(), b, j, regular)
    }

    pub fn tag(&self) -> AlgebraTag {
        self.cd.tag()
    }

    pub fn a(&self) -> &CMat {
        &self.cd.a.m
    }
}

/// `Q_0, ..., Q_jmax` with per-level diagnostics.
#[derive(Clone, Debug)]
pub struct QSequence {
    pub q: Vec<Field>,
    /// Exact x-derivative of `pi0(Q_j)` fixed by the recursion, `-pi0([u, pi1 Q_j])`.
    pub dq0: Vec<Field>,
    /// `sup |pi0(T_j)|` with the centraliser part differentiated through `dq0`.
    pub t_residual: Vec<f64>,
    /// `sup |pi0(T_j)|` with plain finite differences; pure truncation error.
    pub fd_residual: Vec<f64>,
    /// `max(|Q_j(-L)|, |Q_j(L)|)` for each level.
    pub edge: Vec<f64>,
}

/// Relative tolerance for perpendicularity of quantities built from plain
/// finite differences, where truncation error dominates.
pub const TAU_PERP_FD: f64 = 1e-4;

fn t_field(u: &Field, q: &Field) -> Result<Field> {
    Ok(derivative(q, 1)?.add(&u.bracket(q)))
}

fn pi1_field(cd: &CentralizerData, f: &Field) -> Field {
    f.map(|v| cd.pi1_m(v))
}

fn pi0_field(cd: &CentralizerData, f: &Field) -> Field {
    f.map(|v| cd.pi0_m(v))
}

/// `T = Q' + [u, Q]` with `(pi0 Q)' = dq0`.
fn t_consistent(cd: &CentralizerData, u: &Field, q: &Field, dq0: &Field) -> Result<Field> {
    Ok(derivative(&pi1_field(cd, q), 1)?
        .add(dq0)
        .add(&u.bracket(q)))
}

fn check_t(cd: &CentralizerData, t: &Field) -> Result<f64> {
    let res = pi0_field(cd, t).sup_norm();
    let tol = TAU_REC * t.sup_norm();
    if res > tol && res > 1e-12 {
        return Err(LieError::Consistency {
            op: "q_sequence",
            residual: res,
            tolerance: tol,
        });
    }
    Ok(res)
}

fn check_perp(cd: &CentralizerData, u: &Field) -> Result<()> {
    let r = pi0_field(cd, u).sup_norm();
    if r > TAU_SOLVE * u.sup_norm().max(1.0) {
        return Err(LieError::domain("q_sequence", "u has a centraliser component", r));
    }
    Ok(())
}

/// Next level and the exact derivative of its centraliser part.
fn next_q(cd: &CentralizerData, u: &Field, t: &Field) -> (Field, Field) {
    let p1 = t.map(|v| cd.ad_inv_m(&cd.pi1_m(v)));
    let src = u.bracket(&p1).map(|v| -cd.pi0_m(v));
    let p0 = antiderivative_from_left(&src);
    (p1.add(&p0), src)
}

/// Levels `0..=jmax` of the recursion, `Q_0 = b`, with the centraliser part
/// anchored to vanish at the left end.
pub fn q_sequence_report(ctx: &HierarchyContext, u: &Field, jmax: usize) -> Result<QSequence> {
    if u.tag != ctx.tag() {
        return Err(LieError::TagMismatch(format!("{:?} vs {:?}", u.tag, ctx.tag())));
    }
    let cd = &ctx.cd;
    check_perp(cd, u)?;
    let mut q = vec![Field::constant(u.grid, u.tag, &ctx.b)];
    let mut dq0 = vec![Field::zeros(u.grid, u.tag)];
    let mut t_residual = Vec::with_capacity(jmax);
    let mut fd_residual = Vec::with_capacity(jmax);
    for level in 0..jmax {
        let t = t_consistent(cd, u, &q[level], &dq0[level])?;
        t_residual.push(check_t(cd, &t)?);
        fd_residual.push(if level == 0 {
            0.0
        } else {
            derivative(&pi0_field(cd, &q[level]), 1)?.sup_diff(&dq0[level])
        });
        let (next, src) = next_q(cd, u, &t);
        q.push(next);
        dq0.push(src);
    }
    let n = u.grid.n;
    let edge = q
        .iter()
        .map(|f| f.values[0].norm().max(f.values[n - 1].norm()))
        .collect();
    Ok(QSequence {
        q,
        dq0,
        t_residual,
        fd_residual,
        edge,
    })
}

pub fn q_sequence(ctx: &HierarchyContext, u: &Field, jmax: usize) -> Result<Vec<Field>> {
    Ok(q_sequence_report(ctx, u, jmax)?.q)
}

/// Largest deviation of the `lambda^{-k}` coefficients (`k = 1..jmax`) of
/// `tr((sum Q_j lambda^{-j})^m)` from those of `tr(b^m)`, which vanish.
pub fn check_asymptotic_normalization(qs: &[Field], m: usize) -> f64 {
    let jmax = qs.len() - 1;
    let n = qs[0].grid.n;
    let mut worst: f64 = 0.0;
    for x in 0..n {
        let series: Vec<&CMat> = qs.iter().map(|f| &f.values[x]).collect();
        let mut power: Vec<CMat> = series.iter().map(|v| (*v).clone()).collect();
        for _ in 1..m {
            let mut next: Vec<CMat> = vec![CMat::zeros(power[0].nrows(), power[0].ncols()); jmax + 1];
            for (i, p) in power.iter().enumerate() {
                for (k, s) in series.iter().enumerate() {
                    if i + k <= jmax {
                        next[i + k] += p * *s;
                    }
                }
            }
            power = next;
        }
        for c in power.iter().skip(1) {
            worst = worst.max(c.trace().norm());
        }
    }
    worst
}

/// Right-hand side of the `(b, j)`-flow, `Q_j' + [u, Q_j] = [Q_{j+1}, a]`.
pub fn flow_rhs(ctx: &HierarchyContext, u: &Field) -> Result<Field> {
    let rep = q_sequence_report(ctx, u, ctx.j)?;
    let t = t_consistent(&ctx.cd, u, &rep.q[ctx.j], &rep.dq0[ctx.j])?;
    check_t(&ctx.cd, &t)?;
    Ok(pi1_field(&ctx.cd, &t))
}

/// Snapshots of an integrated flow with the worst centraliser drift.
#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub traj: Trajectory<Field>,
    pub pi0_drift: f64,
}

/// Method of lines with RK4, keeping every `stride`-th state.
pub fn integrate_flow(
    ctx: &HierarchyContext,
    u0: &Field,
    t_final: f64,
    dt: f64,
    stride: usize,
) -> Result<FlowTrajectory> {
    let traj = march(|u: &Field| flow_rhs(ctx, u), u0.clone(), t_final, dt, stride)?;
    let pi0_drift = traj
        .states
        .iter()
        .map(|s| pi0_field(&ctx.cd, s).sup_norm())
        .fold(0.0, f64::max);
    Ok(FlowTrajectory { traj, pi0_drift })
}

/// `theta_lambda = (a lambda + u) dx + (b lambda^j + sum Q_i lambda^{j-i}) dt`.
#[derive(Clone, Debug)]
pub struct LaxConnection {
    pub lambda: C64,
    pub a_part: Field,
    pub b_part: Field,
}

pub fn lax_pair(ctx: &HierarchyContext, u: &Field, lambda: C64) -> Result<LaxConnection> {
    let qs = q_sequence(ctx, u, ctx.j)?;
    let a_l = ctx.a() * lambda;
    let a_part = u.map(|v| v + &a_l);
    let mut b_part = Field::raw(u.grid, u.tag, vec![u.tag.zero(); u.grid.n]);
    for (i, q) in qs.iter().enumerate() {
        let w = lambda.powu((ctx.j - i) as u32);
        for (s, v) in b_part.values.iter_mut().zip(&q.values) {
            *s += v * w;
        }
    }
    Ok(LaxConnection {
        lambda,
        a_part,
        b_part,
    })
}

/// `sup |A_t - B_x - [A, B]|` over interior snapshots, `A_t` by central differences.
pub fn flatness_residual(ctx: &HierarchyContext, traj: &Trajectory<Field>, lambda: C64) -> Result<f64> {
    let k = traj.states.len();
    if k < 3 {
        return Err(LieError::Shape("flatness needs at least three snapshots".into()));
    }
    let mut worst: f64 = 0.0;
    for s in 1..k - 1 {
        let dt = traj.times[s + 1] - traj.times[s - 1];
        let at = traj.states[s + 1].sub(&traj.states[s - 1]).scale(1.0 / dt);
        let lp = lax_pair(ctx, &traj.states[s], lambda)?;
        let bx = derivative(&lp.b_part, 1)?;
        let r = at.sub(&bx).sub(&lp.a_part.bracket(&lp.b_part));
        worst = worst.max(r.sup_norm());
    }
    Ok(worst)
}

/// `F_{b,j}(u) = -(1/(j+1)) integral <Q_{j+2}, a> dx`.
pub fn conserved_F(ctx: &HierarchyContext, u: &Field, j: usize) -> Result<f64> {
    let qs = q_sequence(ctx, u, j + 2)?;
    Ok(conserved_from(ctx, &qs[j + 2], j))
}

fn conserved_from(ctx: &HierarchyContext, q: &Field, j: usize) -> f64 {
    let a = Field::constant(q.grid, q.tag, ctx.a());
    -q.l2_inner(&a) / (j as f64 + 1.0)
}

/// `F_{b,0..=jmax}` from one Q-sequence.
pub fn conserved_all(ctx: &HierarchyContext, u: &Field, jmax: usize) -> Result<Vec<f64>> {
    let qs = q_sequence(ctx, u, jmax + 2)?;
    Ok((0..=jmax).map(|j| conserved_from(ctx, &qs[j + 2], j)).collect())
}

/// `grad F_{b,j} = pi1(Q_{j+1})`.
pub fn grad_F(ctx: &HierarchyContext, u: &Field, j: usize) -> Result<Field> {
    let qs = q_sequence(ctx, u, j + 1)?;
    Ok(pi1_field(&ctx.cd, &qs[j + 1]))
}

/// `J_a(v) = [v, a]`.
pub fn poisson_Ja(ctx: &HierarchyContext, v: &Field) -> Field {
    v.bracket_const(ctx.a())
}

/// `P_u(v) = v_x + pi1([u, v]) + [u, h]`, `h = -integral_{-inf}^x pi0([u, v])`.
pub fn poisson_P(ctx: &HierarchyContext, u: &Field, v: &Field) -> Result<Field> {
    let uv = u.bracket(v);
    let h = antiderivative_from_left(&pi0_field(&ctx.cd, &uv)).scale(-1.0);
    Ok(derivative(v, 1)?
        .add(&pi1_field(&ctx.cd, &uv))
        .add(&u.bracket(&h)))
}

fn ja_inverse(cd: &CentralizerData, w: &Field) -> Result<Field> {
    let res = pi0_field(cd, w).sup_norm();
    if res > TAU_SOLVE * w.sup_norm().max(1.0) {
        return Err(LieError::domain("ad_a_inverse", "argument has a centraliser part", res));
    }
    Ok(w.map(|v| cd.ad_inv_m(v)))
}

/// `(J_k)_u = J_a (J_a^{-1} P_u)^k`.
pub fn poisson_Jk(ctx: &HierarchyContext, u: &Field, v: &Field, k: usize) -> Result<Field> {
    let mut w = v.clone();
    for _ in 0..k {
        w = ja_inverse(&ctx.cd, &poisson_P(ctx, u, &w)?)?;
    }
    Ok(poisson_Ja(ctx, &w))
}

/// `P_u(v)` through an extension `v_ext` with `pi1(v_ext) = v`, `v_ext(-L) = 0`
/// and `v_ext' + [u, v_ext]` perpendicular to the centraliser.
pub fn poisson_P_shortcut(ctx: &HierarchyContext, u: &Field, v: &Field, v_ext: &Field) -> Result<Field> {
    let scale = v_ext.sup_norm().max(1.0);
    let d = pi1_field(&ctx.cd, v_ext).sup_diff(v);
    if d > TAU_SOLVE * scale {
        return Err(LieError::domain("poisson_P_shortcut", "pi1(v_ext) differs from v", d));
    }
    let e = v_ext.values[0].norm();
    if e > TAU_SOLVE * scale {
        return Err(LieError::domain("poisson_P_shortcut", "v_ext does not vanish at -L", e));
    }
    let out = t_field(u, v_ext)?;
    let r = pi0_field(&ctx.cd, &out).sup_norm();
    if r > TAU_PERP_FD * out.sup_norm().max(1.0) {
        return Err(LieError::domain(
            "poisson_P_shortcut",
            "v_ext' + [u, v_ext] has a centraliser part",
            r,
        ));
    }
    // The centraliser part is truncation error only.
    Ok(pi1_field(&ctx.cd, &out))
}

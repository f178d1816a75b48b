//! Discretisation of the line: finite differences, left-anchored
//! antiderivatives, explicit RK4 and group-valued frame integration.

use nalgebra::{DMatrix, DVector};

use crate::error::{LieError, Result};
use crate::liecore::{
    comm, exp_m, group_defect, inner_m, polar_unitary, AlgebraElement, AlgebraTag, CMat,
    GroupElement, TAU_GRP,
};

/// Boundary tolerance for decaying fields.
pub const TAU_DECAY: f64 = 1e-6;

/// Values that live in a real vector space.
pub trait LinVal: Clone {
    fn zeros_like(&self) -> Self;
    /// `self += a * x`.
    fn add_scaled(&mut self, a: f64, x: &Self);
    fn magnitude(&self) -> f64;
}

impl LinVal for CMat {
    fn zeros_like(&self) -> Self {
        CMat::zeros(self.nrows(), self.ncols())
    }
    fn add_scaled(&mut self, a: f64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x.iter()) {
            *s += v * a;
        }
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl LinVal for DMatrix<f64> {
    fn zeros_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn add_scaled(&mut self, a: f64, x: &Self) {
        *self += x * a;
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl LinVal for DVector<f64> {
    fn zeros_like(&self) -> Self {
        DVector::zeros(self.len())
    }
    fn add_scaled(&mut self, a: f64, x: &Self) {
        *self += x * a;
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl LinVal for f64 {
    fn zeros_like(&self) -> Self {
        0.0
    }
    fn add_scaled(&mut self, a: f64, x: &Self) {
        *self += a * x;
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

fn lin_comb<T: LinVal>(terms: &[(f64, &T)]) -> T {
    let mut out = terms[0].1.zeros_like();
    for (w, v) in terms {
        if *w != 0.0 {
            out.add_scaled(*w, v);
        }
    }
    out
}

/// Default formal accuracy of difference and quadrature stencils.
pub const DEFAULT_ACCURACY: usize = 6;

/// Uniform grid `x_i = -L + i h`, `h = 2L/(N-1)`, with the formal order
/// `acc` (4, 6 or 8) of its difference and quadrature stencils.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineGrid {
    pub l: f64,
    pub n: usize,
    pub h: f64,
    pub acc: usize,
}

impl LineGrid {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        if n < 16 {
            return Err(LieError::Shape(format!("grid needs N >= 16, got {n}")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(LieError::Shape(format!("grid half-width must be positive, got {l}")));
        }
        Ok(LineGrid {
            l,
            n,
            h: 2.0 * l / (n as f64 - 1.0),
            acc: DEFAULT_ACCURACY,
        })
    }

    pub fn with_accuracy(mut self, acc: usize) -> Result<Self> {
        if ![4, 6, 8].contains(&acc) {
            return Err(LieError::Unsupported(format!("stencil accuracy {acc}")));
        }
        self.acc = acc;
        Ok(self)
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.l + i as f64 * self.h
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }
}

impl Default for LineGrid {
    fn default() -> Self {
        LineGrid::new(20.0, 1024).expect("default grid")
    }
}

/// Finite-difference weights for derivatives `0..=m` at `z` on `nodes` (Fornberg).
pub fn fd_weights(z: f64, nodes: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Derivative of sampled values with central stencils of formal order `acc`
/// inside and one-sided stencils of the same order near the ends.
pub fn derivative_values<T: LinVal>(vals: &[T], h: f64, order: usize, acc: usize) -> Result<Vec<T>> {
    if !(1..=3).contains(&order) {
        return Err(LieError::Unsupported(format!("derivative of order {order}")));
    }
    let n = vals.len();
    let half = acc / 2 + if order == 3 { 1 } else { 0 };
    let width = order + acc;
    if n < width.max(2 * half + 1) {
        return Err(LieError::Shape(format!("{n} samples too few for order {order}")));
    }
    let scale = h.powi(order as i32);
    let sym: Vec<f64> = (-(half as i64)..=half as i64).map(|k| k as f64).collect();
    let wc: Vec<f64> = fd_weights(0.0, &sym, order)[order]
        .iter()
        .map(|w| w / scale)
        .collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i >= half && i + half < n {
            let terms: Vec<(f64, &T)> = (0..sym.len()).map(|k| (wc[k], &vals[i + k - half])).collect();
            out.push(lin_comb(&terms));
        } else {
            let start = if i < half { 0 } else { n - width };
            let nodes: Vec<f64> = (0..width).map(|k| (start + k) as f64).collect();
            let w = &fd_weights(i as f64, &nodes, order)[order];
            let terms: Vec<(f64, &T)> = (0..width).map(|k| (w[k] / scale, &vals[start + k])).collect();
            out.push(lin_comb(&terms));
        }
    }
    Ok(out)
}

/// Weights of the exact integral over `[lo, hi]` of the interpolant on `nodes`.
pub fn interval_weights(nodes: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let p = nodes.len();
    let v = DMatrix::from_fn(p, p, |k, j| nodes[j].powi(k as i32));
    let m = DVector::from_fn(p, |k, _| {
        let e = k as i32 + 1;
        (hi.powi(e) - lo.powi(e)) / e as f64
    });
    v.lu().solve(&m).expect("distinct nodes").iter().copied().collect()
}

/// Cumulative integral from the left end, zero at the first sample.
///
/// Each interval integrates the interpolant through the `acc` nearest
/// samples, so the error is a smooth `O(h^acc)` function of `x`.
pub fn antiderivative_values<T: LinVal>(vals: &[T], h: f64, acc: usize) -> Vec<T> {
    let n = vals.len();
    let p = acc.min(n);
    let mut out = Vec::with_capacity(n);
    let mut acc_val = vals[0].zeros_like();
    out.push(acc_val.clone());
    let interior_start = |i: usize| -> usize {
        // Nodes i - p/2 .. i + p/2 - 1 around the interval [i-1, i].
        (i as i64 - (p / 2) as i64).clamp(0, (n - p) as i64) as usize
    };
    let mut cache: Vec<(usize, Vec<f64>)> = Vec::new();
    for i in 1..n {
        let start = interior_start(i);
        let offset = i - start;
        let w = match cache.iter().find(|(o, _)| *o == offset) {
            Some((_, w)) => w.clone(),
            None => {
                let nodes: Vec<f64> = (0..p).map(|k| k as f64).collect();
                let w: Vec<f64> = interval_weights(&nodes, offset as f64 - 1.0, offset as f64)
                    .into_iter()
                    .map(|x| x * h)
                    .collect();
                cache.push((offset, w.clone()));
                w
            }
        };
        let terms: Vec<(f64, &T)> = (0..p).map(|k| (w[k], &vals[start + k])).collect();
        acc_val.add_scaled(1.0, &lin_comb(&terms));
        out.push(acc_val.clone());
    }
    out
}

/// Integral over the whole grid, consistent with [`antiderivative_values`].
pub fn quad(vals: &[f64], grid: &LineGrid) -> f64 {
    *antiderivative_values(vals, grid.h, grid.acc).last().expect("non-empty")
}

/// `p`-point Lagrange interpolation at `x_i + theta h`, `theta` in `[0, 1]`,
/// with the window shifted inward near the ends.
pub fn interp_values<T: LinVal>(vals: &[T], i: usize, theta: f64, p: usize) -> T {
    let n = vals.len();
    let p = p.min(n);
    let start = (i as i64 + 1 - (p / 2) as i64).clamp(0, (n - p) as i64) as usize;
    let t = i as f64 + theta - start as f64;
    let nodes: Vec<f64> = (0..p).map(|k| k as f64).collect();
    let w = &fd_weights(t, &nodes, 0)[0];
    let terms: Vec<(f64, &T)> = (0..p).map(|k| (w[k], &vals[start + k])).collect();
    lin_comb(&terms)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayClass {
    Decaying,
    OrbitValued,
    Free,
}

/// Algebra-valued samples on a grid.
#[derive(Clone, Debug)]
pub struct Field {
    pub grid: LineGrid,
    pub tag: AlgebraTag,
    pub values: Vec<CMat>,
    pub class: DecayClass,
}

impl Field {
    /// Validating constructor: sizes, and for decaying fields the end values.
    pub fn new(grid: LineGrid, tag: AlgebraTag, values: Vec<CMat>, class: DecayClass) -> Result<Self> {
        if values.len() != grid.n {
            return Err(LieError::Shape(format!("{} samples for a grid of {}", values.len(), grid.n)));
        }
        let k = tag.size();
        if values.iter().any(|v| v.nrows() != k || v.ncols() != k) {
            return Err(LieError::Shape(format!("samples must be {k}x{k}")));
        }
        if class == DecayClass::Decaying {
            let e = values[0].norm().max(values[grid.n - 1].norm());
            if e >= TAU_DECAY {
                return Err(LieError::domain("Field::new", "decaying field does not vanish at the ends", e));
            }
        }
        Ok(Field { grid, tag, values, class })
    }

    /// Unvalidated constructor for intermediate quantities.
    pub fn raw(grid: LineGrid, tag: AlgebraTag, values: Vec<CMat>) -> Self {
        Field {
            grid,
            tag,
            values,
            class: DecayClass::Free,
        }
    }

    pub fn from_fn(
        grid: LineGrid,
        tag: AlgebraTag,
        class: DecayClass,
        f: impl Fn(f64) -> CMat,
    ) -> Result<Self> {
        let values = grid.xs().into_iter().map(f).collect();
        Field::new(grid, tag, values, class)
    }

    pub fn zeros(grid: LineGrid, tag: AlgebraTag) -> Self {
        Field {
            grid,
            tag,
            values: vec![tag.zero(); grid.n],
            class: DecayClass::Decaying,
        }
    }

    pub fn constant(grid: LineGrid, tag: AlgebraTag, m: &CMat) -> Self {
        Field::raw(grid, tag, vec![m.clone(); grid.n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, i: usize) -> AlgebraElement {
        AlgebraElement {
            tag: self.tag,
            m: self.values[i].clone(),
        }
    }

    pub fn with_class(mut self, class: DecayClass) -> Self {
        self.class = class;
        self
    }

    pub fn map(&self, f: impl Fn(&CMat) -> CMat) -> Field {
        Field::raw(self.grid, self.tag, self.values.iter().map(f).collect())
    }

    pub fn map_indexed(&self, f: impl Fn(usize, &CMat) -> CMat) -> Field {
        Field::raw(
            self.grid,
            self.tag,
            self.values.iter().enumerate().map(|(i, v)| f(i, v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(&CMat, &CMat) -> CMat) -> Field {
        Field::raw(
            self.grid,
            self.tag,
            self.values.iter().zip(&other.values).map(|(a, b)| f(a, b)).collect(),
        )
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|a| a.scale(s))
    }

    /// Pointwise `[self, other]`.
    pub fn bracket(&self, other: &Field) -> Field {
        self.zip_map(other, comm)
    }

    /// Pointwise `[self, m]` with a constant matrix.
    pub fn bracket_const(&self, m: &CMat) -> Field {
        self.map(|a| comm(a, m))
    }

    /// Max over samples of the Frobenius norm.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn sup_diff(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `integral <self, other> dx` with the trace inner product.
    pub fn l2_inner(&self, other: &Field) -> f64 {
        let vals: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| inner_m(a, b))
            .collect();
        quad(&vals, &self.grid)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

pub fn derivative(f: &Field, order: usize) -> Result<Field> {
    let d = derivative_values(&f.values, f.grid.h, order, f.grid.acc)?;
    Ok(Field::raw(f.grid, f.tag, d))
}

pub fn antiderivative_from_left(f: &Field) -> Field {
    Field::raw(f.grid, f.tag, antiderivative_values(&f.values, f.grid.h, f.grid.acc))
}

/// State vectors that explicit integrators can combine.
pub trait OdeState: Clone {
    fn axpy(&self, a: f64, k: &Self) -> Self;
    fn all_finite(&self) -> bool;
}

impl OdeState for Field {
    fn axpy(&self, a: f64, k: &Self) -> Self {
        let mut out = self.clone();
        for (s, v) in out.values.iter_mut().zip(&k.values) {
            s.add_scaled(a, v);
        }
        out
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl<T: LinVal> OdeState for Vec<T> {
    fn axpy(&self, a: f64, k: &Self) -> Self {
        let mut out = self.clone();
        for (s, v) in out.iter_mut().zip(k) {
            s.add_scaled(a, v);
        }
        out
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.magnitude().is_finite())
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<S: OdeState>(rhs: impl Fn(&S) -> Result<S>, s: &S, dt: f64) -> Result<S> {
    let k1 = rhs(s)?;
    let k2 = rhs(&s.axpy(0.5 * dt, &k1))?;
    let k3 = rhs(&s.axpy(0.5 * dt, &k2))?;
    let k4 = rhs(&s.axpy(dt, &k3))?;
    let out = s
        .axpy(dt / 6.0, &k1)
        .axpy(dt / 3.0, &k2)
        .axpy(dt / 3.0, &k3)
        .axpy(dt / 6.0, &k4);
    if !out.all_finite() {
        return Err(LieError::BlowUp { step: 0 });
    }
    Ok(out)
}

/// Snapshots of an explicit time integration.
#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
}

/// RK4 from `t = 0` to `t_final`, keeping every `stride`-th state.
///
/// The step is shrunk so that `t_final` is reached after a whole number of
/// snapshot intervals.
pub fn march<S: OdeState>(
    rhs: impl Fn(&S) -> Result<S>,
    s0: S,
    t_final: f64,
    dt: f64,
    stride: usize,
) -> Result<Trajectory<S>> {
    if !(dt > 0.0) || t_final < 0.0 || stride == 0 {
        return Err(LieError::Shape(format!(
            "march needs dt > 0, t_final >= 0, stride >= 1 (got {dt}, {t_final}, {stride})"
        )));
    }
    let intervals = (t_final / (dt * stride as f64)).ceil() as usize;
    let steps = intervals * stride;
    let dt = if steps == 0 { 0.0 } else { t_final / steps as f64 };
    let mut times = vec![0.0];
    let mut states = vec![s0.clone()];
    let mut s = s0;
    for k in 1..=steps {
        s = rk4_step(&rhs, &s, dt).map_err(|e| e.at_step(k))?;
        if k % stride == 0 {
            times.push(k as f64 * dt);
            states.push(s.clone());
        }
    }
    Ok(Trajectory { times, states })
}

/// Stable explicit step `c_p h^p` for a flow of spatial order `p`.
pub fn stable_dt(h: f64, order: usize) -> Result<f64> {
    let c = match order {
        1 => 0.5,
        2 => 0.2,
        3 => 0.05,
        _ => {
            return Err(LieError::Unsupported(format!(
                "no automatic time step for spatial order {order}; give dt explicitly"
            )))
        }
    };
    Ok(c * h.powi(order as i32))
}

/// Group-valued samples on a grid.
#[derive(Clone, Debug)]
pub struct Frame {
    pub grid: LineGrid,
    pub tag: AlgebraTag,
    pub values: Vec<CMat>,
}

impl Frame {
    pub fn at(&self, i: usize) -> GroupElement {
        GroupElement {
            tag: self.tag,
            m: self.values[i].clone(),
        }
    }

    /// Largest group-constraint violation over the samples.
    pub fn group_defect(&self) -> f64 {
        self.values
            .iter()
            .map(|g| group_defect(self.tag, g))
            .fold(0.0, f64::max)
    }

    /// Pointwise `g X g^{-1}`.
    pub fn conjugate(&self, f: &Field) -> Field {
        Field::raw(
            f.grid,
            f.tag,
            self.values
                .iter()
                .zip(&f.values)
                .map(|(g, x)| g * x * g.adjoint())
                .collect(),
        )
    }

    /// Pointwise `g^{-1} X g`.
    pub fn conjugate_inv(&self, f: &Field) -> Field {
        Field::raw(
            f.grid,
            f.tag,
            self.values
                .iter()
                .zip(&f.values)
                .map(|(g, x)| g.adjoint() * x * g)
                .collect(),
        )
    }

    /// Discrete `g^{-1} g_x` by fourth-order differences.
    pub fn log_derivative(&self) -> Result<Field> {
        let gx = derivative_values(&self.values, self.grid.h, 1, self.grid.acc)?;
        Ok(Field::raw(
            self.grid,
            self.tag,
            self.values
                .iter()
                .zip(&gx)
                .map(|(g, d)| self.tag.project(&(g.adjoint() * d)))
                .collect(),
        ))
    }
}

/// Step rule for `g^{-1} g_x = u`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FrameScheme {
    /// `g_{i+1} = g_i exp(h u(x_{i+1/2}))`, second order.
    Midpoint,
    /// Two-point Gauss Magnus step, fourth order.
    #[default]
    Magnus4,
}

pub fn solve_frame(u: &Field, g0: &GroupElement) -> Result<Frame> {
    solve_frame_with(u, g0, FrameScheme::default())
}

/// Integrates `g^{-1} g_x = u` from `g(-L) = g0`, then polar-reprojects every sample.
pub fn solve_frame_with(u: &Field, g0: &GroupElement, scheme: FrameScheme) -> Result<Frame> {
    if g0.tag != u.tag {
        return Err(LieError::TagMismatch(format!("{:?} vs {:?}", g0.tag, u.tag)));
    }
    let h = u.grid.h;
    let tag = u.tag;
    let mut out = Vec::with_capacity(u.grid.n);
    let mut g = g0.m.clone();
    out.push(g.clone());
    let s3 = 3f64.sqrt();
    let (c1, c2) = (0.5 - s3 / 6.0, 0.5 + s3 / 6.0);
    let p = u.grid.acc;
    for i in 0..u.grid.n - 1 {
        let omega = match scheme {
            FrameScheme::Midpoint => interp_values(&u.values, i, 0.5, p).scale(h),
            FrameScheme::Magnus4 => {
                let a1 = interp_values(&u.values, i, c1, p);
                let a2 = interp_values(&u.values, i, c2, p);
                (&a1 + &a2).scale(0.5 * h) + comm(&a1, &a2).scale(s3 / 12.0 * h * h)
            }
        };
        g = &g * exp_m(tag, &omega);
        out.push(g.clone());
    }
    let mut values = Vec::with_capacity(out.len());
    for g in out {
        values.push(polar_unitary(&g)?);
    }
    let frame = Frame {
        grid: u.grid,
        tag,
        values,
    };
    let d = frame.group_defect();
    if d > TAU_GRP {
        return Err(LieError::numerical(
            "solve_frame",
            format!("group drift {d:.3e} after reprojection"),
        ));
    }
    Ok(frame)
}

/// Boundary value together with the flatness of the adjacent 5% tail.
#[derive(Clone, Debug)]
pub struct LimitEstimate {
    pub value: CMat,
    pub tail_deviation: f64,
    pub flat: bool,
}

fn limit_of(values: &[CMat], left: bool, tol: f64) -> LimitEstimate {
    let n = values.len();
    let tail = (n / 20).max(2).min(n);
    let (value, range): (CMat, Vec<usize>) = if left {
        (values[0].clone(), (0..tail).collect())
    } else {
        (values[n - 1].clone(), (n - tail..n).collect())
    };
    let dev = range.iter().map(|&i| (&values[i] - &value).norm()).fold(0.0, f64::max);
    LimitEstimate {
        value,
        tail_deviation: dev,
        flat: dev <= tol,
    }
}

pub fn limit_at_left(values: &[CMat], tol: f64) -> LimitEstimate {
    limit_of(values, true, tol)
}

pub fn limit_at_right(values: &[CMat], tol: f64) -> LimitEstimate {
    limit_of(values, false, tol)
}

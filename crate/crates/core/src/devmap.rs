//! Curves on an Adjoint orbit, the development map between curves and
//! potentials, the orbit Poisson operators and the induced curve flows.

// Operator names follow the mathematical symbols (F, J, P, Lambda, H).
#![allow(non_snake_case)]

use nalgebra::SymmetricEigen;

use crate::error::{LieError, Result};
use crate::gridcalc::{
    antiderivative_values, derivative, derivative_values, interp_values, quad, rk4_step,
    DecayClass, Field, Frame, LineGrid, Trajectory, TAU_DECAY,
};
use crate::hierarchy::{poisson_P, q_sequence, HierarchyContext};
use crate::liecore::{
    comm, exp_m, inner_m, polar_unitary, AlgebraElement, AlgebraTag, CMat, CentralizerData, Family,
    C64, I, TAU_ALG, TAU_ORBIT,
};

/// Agreement required between the two evaluations of a curve flow.
pub const TAU_XCHECK: f64 = 1e-5;
/// Relative size of the normal part tolerated in a tangent input.
pub const TAU_TANGENT: f64 = 1e-6;

/// Eigen-structure of the base point: the ascending spectrum of `i a` and
/// its clusters of equal eigenvalues.
#[derive(Clone, Debug)]
pub struct OrbitModel {
    pub a: AlgebraElement,
    pub mu: Vec<f64>,
    pub ids: Vec<usize>,
    pub clusters: usize,
    vectors: CMat,
}

fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let h = m.map(|z| z * I);
    let h = (&h + h.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].partial_cmp(&eig.eigenvalues[y]).unwrap());
    let mu = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let v = CMat::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (mu, v)
}

impl OrbitModel {
    pub fn new(a: &AlgebraElement) -> Self {
        let (mu, vectors) = hermitian_eigen(&a.m);
        let scale = mu.iter().fold(1.0f64, |s, m| s.max(m.abs()));
        let mut ids = vec![0usize; mu.len()];
        let mut c = 0;
        for k in 1..mu.len() {
            if mu[k] - mu[k - 1] > 1e-8 * scale {
                c += 1;
            }
            ids[k] = c;
        }
        OrbitModel {
            a: a.clone(),
            mu,
            ids,
            clusters: c + 1,
            vectors,
        }
    }

    pub fn tag(&self) -> AlgebraTag {
        self.a.tag
    }

    pub fn point(&self, m: &CMat) -> OrbitPoint {
        let (_, v) = hermitian_eigen(m);
        OrbitPoint { v }
    }

    /// `ad(a)^2 = -1` on the orthogonal complement of the centraliser.
    pub fn is_hermitian_symmetric(&self) -> bool {
        let n = self.mu.len();
        (0..n).all(|i| {
            (0..n).all(|j| {
                self.ids[i] == self.ids[j] || ((self.mu[i] - self.mu[j]).abs() - 1.0).abs() < 1e-9
            })
        })
    }

    /// Coefficients `beta_k` with `b = sum beta_k P_k(a)`, if `b` is constant
    /// on every eigenspace of `a`.
    pub fn spectral_coefficients(&self, b: &CMat) -> Option<Vec<C64>> {
        let base = OrbitPoint {
            v: self.vectors.clone(),
        };
        let mut beta = Vec::with_capacity(self.clusters);
        let mut rebuilt = CMat::zeros(b.nrows(), b.ncols());
        for k in 0..self.clusters {
            let p = base.projector(self, k);
            let c = (&p * b).trace() / p.trace();
            rebuilt += &p * c;
            beta.push(c);
        }
        let d = (&rebuilt - b).norm();
        (d <= TAU_ALG * b.norm().max(1.0)).then_some(beta)
    }
}

/// Eigenvectors of `i gamma(x)` at one sample, ordered like the model.
#[derive(Clone, Debug)]
pub struct OrbitPoint {
    pub v: CMat,
}

impl OrbitPoint {
    fn to_eig(&self, x: &CMat) -> CMat {
        self.v.adjoint() * x * &self.v
    }

    fn from_eig(&self, y: &CMat) -> CMat {
        &self.v * y * self.v.adjoint()
    }

    /// Orthogonal projection onto the centraliser of `gamma(x)`.
    pub fn normal(&self, model: &OrbitModel, x: &CMat) -> CMat {
        let mut y = self.to_eig(x);
        for r in 0..y.nrows() {
            for c in 0..y.ncols() {
                if model.ids[r] != model.ids[c] {
                    y[(r, c)] = C64::new(0.0, 0.0);
                }
            }
        }
        model.tag().project(&self.from_eig(&y))
    }

    pub fn tangent(&self, model: &OrbitModel, x: &CMat) -> CMat {
        x - self.normal(model, x)
    }

    /// Tangent `xi` with `[xi, gamma] = v`; the normal part of `v` is ignored.
    pub fn ad_inv(&self, model: &OrbitModel, v: &CMat) -> CMat {
        let mut y = self.to_eig(v);
        for r in 0..y.nrows() {
            for c in 0..y.ncols() {
                y[(r, c)] = if model.ids[r] == model.ids[c] {
                    C64::new(0.0, 0.0)
                } else {
                    y[(r, c)] / (I * (model.mu[r] - model.mu[c]))
                };
            }
        }
        model.tag().project(&self.from_eig(&y))
    }

    /// Spectral projector of cluster `k`.
    pub fn projector(&self, model: &OrbitModel, k: usize) -> CMat {
        let n = self.v.nrows();
        let mut p = CMat::zeros(n, n);
        for (col, id) in model.ids.iter().enumerate() {
            if *id == k {
                let c = self.v.column(col);
                p += &c * c.adjoint();
            }
        }
        p
    }

    /// Nearest point with exactly the model spectrum.
    pub fn on_orbit(&self, model: &OrbitModel) -> CMat {
        let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            model.mu.len(),
            model.mu.iter().map(|m| -I * *m),
        ));
        model.tag().project(&self.from_eig(&d))
    }
}

/// Orbit-valued samples pinned to `a` at the left end.
#[derive(Clone, Debug)]
pub struct Curve {
    pub field: Field,
    pub a: AlgebraElement,
}

impl Curve {
    pub fn new(field: Field, a: &AlgebraElement) -> Result<Self> {
        let c = Curve::unchecked(field, a);
        if c.field.tag != a.tag {
            return Err(LieError::TagMismatch(format!("{:?} vs {:?}", c.field.tag, a.tag)));
        }
        let drift = c.spectrum_drift();
        if drift > TAU_ORBIT * a.norm().max(1.0) {
            return Err(LieError::domain("Curve::new", "sample off the orbit of a", drift));
        }
        let e = (&c.field.values[0] - &a.m).norm();
        if e >= TAU_DECAY {
            return Err(LieError::domain("Curve::new", "curve does not start at a", e));
        }
        Ok(c)
    }

    /// No orbit or pinning check; for intermediate integrator stages.
    pub fn unchecked(field: Field, a: &AlgebraElement) -> Self {
        Curve {
            field: field.with_class(DecayClass::OrbitValued),
            a: a.clone(),
        }
    }

    pub fn constant(grid: LineGrid, a: &AlgebraElement) -> Self {
        Curve::unchecked(Field::constant(grid, a.tag, &a.m), a)
    }

    pub fn grid(&self) -> LineGrid {
        self.field.grid
    }

    pub fn values(&self) -> &[CMat] {
        &self.field.values
    }

    /// Largest eigenvalue discrepancy from `a` over the samples.
    pub fn spectrum_drift(&self) -> f64 {
        let model = OrbitModel::new(&self.a);
        self.field
            .values
            .iter()
            .map(|v| {
                let (mu, _) = hermitian_eigen(v);
                mu.iter()
                    .zip(&model.mu)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Pointwise eigen-data of a curve, shared by the orbit operators.
#[derive(Clone, Debug)]
pub struct CurveGeometry {
    pub model: OrbitModel,
    pub points: Vec<OrbitPoint>,
    pub grid: LineGrid,
}

impl CurveGeometry {
    pub fn new(gamma: &Curve) -> Self {
        let model = OrbitModel::new(&gamma.a);
        let points = gamma.values().iter().map(|v| model.point(v)).collect();
        CurveGeometry {
            model,
            points,
            grid: gamma.grid(),
        }
    }

    fn map(&self, f: &Field, op: impl Fn(&OrbitPoint, &CMat) -> CMat) -> Field {
        f.map_indexed(|i, v| op(&self.points[i], v))
    }

    pub fn normal(&self, f: &Field) -> Field {
        self.map(f, |p, v| p.normal(&self.model, v))
    }

    pub fn tangent(&self, f: &Field) -> Field {
        self.map(f, |p, v| p.tangent(&self.model, v))
    }

    /// Tangent solution of `[xi, gamma] = v` samplewise.
    pub fn ad_inv(&self, v: &Field) -> Field {
        self.map(v, |p, x| p.ad_inv(&self.model, x))
    }

    /// Rejects inputs with a normal part beyond [`TAU_TANGENT`], then
    /// returns the tangent part.
    pub fn require_tangent(&self, op: &'static str, f: &Field) -> Result<Field> {
        let nrm = self.normal(f);
        let r = nrm.sup_norm();
        if r > TAU_TANGENT * f.sup_norm().max(1.0) {
            return Err(LieError::domain(op, "input is not tangent to the orbit", r));
        }
        Ok(f.sub(&nrm))
    }

    /// `b(gamma) = sum beta_k P_k(gamma)` when `b` is constant on the
    /// eigenspaces of `a`.
    pub fn spectral_normal(&self, b: &CMat) -> Option<Field> {
        let beta = self.model.spectral_coefficients(b)?;
        let tag = self.model.tag();
        let values = self
            .points
            .iter()
            .map(|p| {
                let mut out = CMat::zeros(b.nrows(), b.ncols());
                for (k, c) in beta.iter().enumerate() {
                    out += p.projector(&self.model, k) * *c;
                }
                tag.project(&out)
            })
            .collect();
        Some(Field::raw(self.grid, tag, values))
    }
}

/// A curve, its frame pinned to the identity at the left end, and its potential.
#[derive(Clone, Debug)]
pub struct DevelopedPair {
    pub gamma: Curve,
    pub g: Frame,
    pub u: Field,
    /// `sup |g a g^{-1} - gamma|`.
    pub defect: f64,
}

fn orbit_defect(g: &Frame, a: &CMat, gamma: &Field) -> f64 {
    g.values
        .iter()
        .zip(&gamma.values)
        .map(|(gi, y)| (gi * a * gi.adjoint() - y).norm())
        .fold(0.0, f64::max)
}

/// `u -> (gamma = g a g^{-1}, g, u)` with `g^{-1} g_x = u`, `g(-L) = I`.
pub fn undevelop(ctx: &HierarchyContext, u: &Field) -> Result<DevelopedPair> {
    let cd = &ctx.cd;
    if u.tag != cd.tag() {
        return Err(LieError::TagMismatch(format!("{:?} vs {:?}", u.tag, cd.tag())));
    }
    let r = u.values.iter().map(|v| cd.pi0_m(v).norm()).fold(0.0, f64::max);
    if r > TAU_ALG * u.sup_norm().max(1.0) {
        return Err(LieError::domain("undevelop", "u has a centraliser component", r));
    }
    let g = crate::gridcalc::solve_frame(u, &crate::liecore::GroupElement::identity(u.tag))?;
    let a = &cd.a.m;
    let values = g.values.iter().map(|gi| gi * a * gi.adjoint()).collect();
    let gamma = Curve::new(
        Field::raw(u.grid, u.tag, values).with_class(DecayClass::OrbitValued),
        &cd.a,
    )?;
    Ok(DevelopedPair {
        gamma,
        g,
        u: u.clone(),
        defect: 0.0,
    })
}

fn dexpinv(om: &CMat, a: &CMat) -> CMat {
    let c1 = comm(om, a);
    let c2 = comm(om, &c1);
    a + c1.scale(0.5) + c2.scale(1.0 / 12.0)
}

/// Integrates `g^{-1} g_x = ad_a^{-1}(g^{-1} gamma_x g)` from `g(-L) = I`
/// with a fourth-order Munthe-Kaas step.
fn develop_frame(cd: &CentralizerData, gamma: &Curve) -> Result<(Frame, Vec<CMat>)> {
    let grid = gamma.grid();
    let (h, p, tag) = (grid.h, grid.acc, cd.tag());
    let gx = derivative_values(gamma.values(), h, 1, p)?;
    let field_at = |i: usize, theta: f64, g: &CMat| -> CMat {
        let d = if theta == 0.0 {
            gx[i].clone()
        } else {
            interp_values(&gx, i, theta, p)
        };
        cd.ad_inv_m(&cd.pi1_m(&(g.adjoint() * d * g)))
    };
    let mut gs = Vec::with_capacity(grid.n);
    let mut g = CMat::identity(tag.size(), tag.size());
    for i in 0..grid.n - 1 {
        gs.push(g.clone());
        let k1 = field_at(i, 0.0, &g).scale(h);
        let h1 = k1.scale(0.5);
        let k2 = dexpinv(&h1, &field_at(i, 0.5, &(&g * exp_m(tag, &h1)))).scale(h);
        let h2 = k2.scale(0.5);
        let k3 = dexpinv(&h2, &field_at(i, 0.5, &(&g * exp_m(tag, &h2)))).scale(h);
        let k4 = dexpinv(&k3, &field_at(i, 1.0, &(&g * exp_m(tag, &k3)))).scale(h);
        let om = (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(1.0 / 6.0);
        g = &g * exp_m(tag, &om);
    }
    gs.push(g);
    let mut values = Vec::with_capacity(gs.len());
    for g in &gs {
        values.push(polar_unitary(g)?);
    }
    let u = (0..grid.n).map(|i| field_at(i, 0.0, &values[i])).collect();
    Ok((Frame { grid, tag, values }, u))
}

/// Curve to potential; verifies `gamma = g a g^{-1}` a posteriori.
pub fn develop(ctx: &HierarchyContext, gamma: &Curve) -> Result<DevelopedPair> {
    let cd = &ctx.cd;
    if (&gamma.a.m - &cd.a.m).norm() > TAU_ALG {
        return Err(LieError::domain(
            "develop",
            "curve base point differs from the context",
            (&gamma.a.m - &cd.a.m).norm(),
        ));
    }
    let gamma = Curve::new(gamma.field.clone(), &gamma.a)?;
    develop_unchecked(cd, &gamma)
}

fn develop_unchecked(cd: &CentralizerData, gamma: &Curve) -> Result<DevelopedPair> {
    let grid = gamma.grid();
    let (g, u) = develop_frame(cd, gamma)?;
    let defect = orbit_defect(&g, &cd.a.m, &gamma.field);
    let tol = 10.0 * grid.h * grid.h;
    if defect > tol {
        return Err(LieError::numerical(
            "develop",
            format!("reconstruction defect {defect:.3e} exceeds {tol:.3e}"),
        ));
    }
    Ok(DevelopedPair {
        gamma: gamma.clone(),
        g,
        u: Field::raw(grid, cd.tag(), u),
        defect,
    })
}

/// `J_gamma(xi) = [xi, gamma]` on tangent fields.
pub fn geo_J(gamma: &Curve, xi: &Field) -> Result<Field> {
    let geom = CurveGeometry::new(gamma);
    geo_J_with(&geom, gamma, xi)
}

pub fn geo_J_with(geom: &CurveGeometry, gamma: &Curve, xi: &Field) -> Result<Field> {
    let xi = geom.require_tangent("geo_J", xi)?;
    Ok(xi.bracket(&gamma.field))
}

/// Tangent `xi` with `[xi, gamma] = v`.
pub fn geo_J_inverse(gamma: &Curve, v: &Field) -> Result<Field> {
    let geom = CurveGeometry::new(gamma);
    geo_J_inverse_with(&geom, v)
}

pub fn geo_J_inverse_with(geom: &CurveGeometry, v: &Field) -> Result<Field> {
    let v = geom.require_tangent("geo_J_inverse", v)?;
    Ok(geom.ad_inv(&v))
}

/// `Lambda_gamma(xi) = g P_u(g^{-1} xi g) g^{-1}`.
pub fn geo_Lambda_conj(ctx: &HierarchyContext, pair: &DevelopedPair, xi: &Field) -> Result<Field> {
    let cd = &ctx.cd;
    let v = pair.g.conjugate_inv(xi);
    let r = v.values.iter().map(|m| cd.pi0_m(m).norm()).fold(0.0, f64::max);
    if r > TAU_TANGENT * xi.sup_norm().max(1.0) {
        return Err(LieError::domain("geo_Lambda_conj", "input is not tangent to the orbit", r));
    }
    let v = v.map(|m| cd.pi1_m(m));
    Ok(pair.g.conjugate(&poisson_P(ctx, &pair.u, &v)?))
}

/// Parallel normal field `b(gamma)` with `b(g a g^{-1}) = g b g^{-1}`.
///
/// Uses the spectral form when `b` is constant on the eigenspaces of `a`
/// and the developed frame otherwise.
pub fn parallel_normal(ctx: &HierarchyContext, gamma: &Curve, b: &CMat) -> Result<Field> {
    let geom = CurveGeometry::new(gamma);
    parallel_normals(ctx, &geom, gamma, &[b.clone()]).map(|mut v| v.remove(0))
}

fn parallel_normals(
    ctx: &HierarchyContext,
    geom: &CurveGeometry,
    gamma: &Curve,
    bs: &[CMat],
) -> Result<Vec<Field>> {
    let spectral: Vec<Option<Field>> = bs.iter().map(|b| geom.spectral_normal(b)).collect();
    if spectral.iter().all(Option::is_some) {
        return Ok(spectral.into_iter().map(Option::unwrap).collect());
    }
    let pair = develop_unchecked(&ctx.cd, gamma)?;
    Ok(bs
        .iter()
        .map(|b| pair.g.conjugate(&Field::constant(gamma.grid(), gamma.a.tag, b)))
        .collect())
}

/// `Lambda_gamma(xi) = nabla_{gamma_x} xi - sum h_i A_{a_i}(gamma_x)`,
/// `h_i = -integral <II(xi, gamma_x), a_i>`, for regular `a`.
pub fn geo_Lambda_geom(ctx: &HierarchyContext, gamma: &Curve, xi: &Field) -> Result<Field> {
    let geom = CurveGeometry::new(gamma);
    let normals = regular_normals(ctx, &geom, gamma)?;
    geo_Lambda_geom_with(&geom, &normals, xi)
}

/// Parallel normals of an orthonormal centraliser basis and their derivatives.
pub struct NormalFrame {
    pub a_hat: Vec<Field>,
    pub a_hat_x: Vec<Field>,
}

pub fn regular_normals(ctx: &HierarchyContext, geom: &CurveGeometry, gamma: &Curve) -> Result<NormalFrame> {
    let cd = &ctx.cd;
    if cd.kernel_dim() != cd.tag().rank() {
        return Err(LieError::Unsupported(
            "geometric Lambda needs a regular base point; use geo_Lambda_conj".into(),
        ));
    }
    let a_hat = parallel_normals(ctx, geom, gamma, &cd.basis_t)?;
    let mut a_hat_x = Vec::with_capacity(a_hat.len());
    for n in &a_hat {
        a_hat_x.push(geom.tangent(&derivative(n, 1)?));
    }
    Ok(NormalFrame { a_hat, a_hat_x })
}

/// Coefficients `h_i = -integral <II(xi, gamma_x), a_i>` of the normal
/// correction `eta = sum h_i a_i`, one vector per normal.
pub fn normal_potentials(geom: &CurveGeometry, normals: &NormalFrame, xi: &Field) -> Result<Vec<Vec<f64>>> {
    let xi_x = derivative(xi, 1)?;
    let second = geom.normal(&xi_x);
    Ok(normals
        .a_hat
        .iter()
        .map(|n| {
            let s: Vec<f64> = second
                .values
                .iter()
                .zip(&n.values)
                .map(|(x, y)| -inner_m(x, y))
                .collect();
            antiderivative_values(&s, geom.grid.h, geom.grid.acc)
        })
        .collect())
}

pub fn geo_Lambda_geom_with(geom: &CurveGeometry, normals: &NormalFrame, xi: &Field) -> Result<Field> {
    let xi = geom.require_tangent("geo_Lambda_geom", xi)?;
    let mut out = geom.tangent(&derivative(&xi, 1)?);
    let hs = normal_potentials(geom, normals, &xi)?;
    for (hi, nx) in hs.iter().zip(&normals.a_hat_x) {
        for (o, (h, d)) in out.values.iter_mut().zip(hi.iter().zip(&nx.values)) {
            *o += d.scale(*h);
        }
    }
    Ok(out)
}

/// Both evaluations of the `(b, j)` curve flow: `g [Q_{b,j}, a] g^{-1}` and
/// `(Lambda J^{-1})^{j-1} (b(gamma))_x`.
pub fn curve_flow_paths(ctx: &HierarchyContext, pair: &DevelopedPair) -> Result<(Field, Field)> {
    let first = curve_flow_conjugated(ctx, pair)?;
    let gamma = &pair.gamma;
    let geom = CurveGeometry::new(gamma);
    let b_hat = parallel_normal_with(&geom, pair, &ctx.b);
    let mut w = geom.tangent(&derivative(&b_hat, 1)?);
    let regular = ctx.cd.kernel_dim() == ctx.tag().rank();
    let normals = if regular && ctx.j > 1 {
        Some(regular_normals(ctx, &geom, gamma)?)
    } else {
        None
    };
    for _ in 1..ctx.j {
        let xi = geom.ad_inv(&w);
        w = match &normals {
            Some(nf) => geo_Lambda_geom_with(&geom, nf, &xi)?,
            None => geom.tangent(&geo_Lambda_conj(ctx, pair, &xi)?),
        };
    }
    Ok((first, w))
}

fn parallel_normal_with(geom: &CurveGeometry, pair: &DevelopedPair, b: &CMat) -> Field {
    geom.spectral_normal(b)
        .unwrap_or_else(|| pair.g.conjugate(&Field::constant(pair.gamma.grid(), pair.gamma.a.tag, b)))
}

/// `g [Q_{b,j}(u), a] g^{-1}`.
pub fn curve_flow_conjugated(ctx: &HierarchyContext, pair: &DevelopedPair) -> Result<Field> {
    let qs = q_sequence(ctx, &pair.u, ctx.j)?;
    Ok(pair.g.conjugate(&qs[ctx.j].bracket_const(ctx.a())))
}

/// The `(b, j)` curve flow, cross-checked between its two forms.
pub fn curve_flow_rhs(ctx: &HierarchyContext, pair: &DevelopedPair) -> Result<Field> {
    let (first, second) = curve_flow_paths(ctx, pair)?;
    let d = first.sup_diff(&second);
    if d > TAU_XCHECK {
        return Err(LieError::Consistency {
            op: "curve_flow_rhs",
            residual: d,
            tolerance: TAU_XCHECK,
        });
    }
    Ok(first)
}

/// `[gamma, gamma_xx]` on orbits with `ad(a)^2 = -1` off the centraliser.
pub fn schrodinger_rhs(gamma: &Curve) -> Result<Field> {
    let model = OrbitModel::new(&gamma.a);
    if !model.is_hermitian_symmetric() {
        return Err(LieError::domain(
            "schrodinger_rhs",
            "ad(a)^2 is not -1 on the complement of the centraliser",
            0.0,
        ));
    }
    Ok(gamma.field.bracket(&derivative(&gamma.field, 2)?))
}

/// `i^{k-1} (gamma^k)_x` on u(n) orbits.
pub fn invariant_poly_rhs(gamma: &Curve, k: usize) -> Result<Field> {
    let tag = gamma.a.tag;
    if tag.family != Family::U {
        return Err(LieError::Unsupported(format!("invariant polynomial flow on {tag:?}")));
    }
    if k == 0 {
        return Err(LieError::Shape("power must be at least 1".into()));
    }
    let c = I.powu(k as u32 - 1);
    let pw = gamma.field.map(|v| {
        let mut p = v.clone();
        for _ in 1..k {
            p = &p * v;
        }
        p * c
    });
    derivative(&pw, 1)
}

/// `integral <gamma - a, b> dx`.
pub fn height_H(gamma: &Curve, b: &CMat) -> f64 {
    let vals: Vec<f64> = gamma
        .values()
        .iter()
        .map(|v| inner_m(&(v - &gamma.a.m), b))
        .collect();
    quad(&vals, &gamma.grid())
}

/// Tangential projection of `b` along the curve.
pub fn grad_height_H(gamma: &Curve, b: &CMat) -> Field {
    let geom = CurveGeometry::new(gamma);
    geom.tangent(&Field::constant(gamma.grid(), gamma.a.tag, b))
}

/// Replaces every sample by the nearest point with the spectrum of `a` and
/// pins the left end; returns the largest correction.
pub fn reproject_to_orbit(gamma: &Curve) -> (Curve, f64) {
    let model = OrbitModel::new(&gamma.a);
    let mut worst: f64 = 0.0;
    // The left end is not pinned to a: a Dirichlet row under the one-sided
    // high-order closures gives d^2/dx^2 eigenvalues with |Im| ~ 1/h^2, which
    // the skew curve flows turn into growth at that rate.
    let values: Vec<CMat> = gamma
        .values()
        .iter()
        .map(|v| {
            let w = model.point(v).on_orbit(&model);
            worst = worst.max((&w - v).norm());
            w
        })
        .collect();
    (
        Curve::unchecked(Field::raw(gamma.grid(), gamma.a.tag, values), &gamma.a),
        worst,
    )
}

/// Curve snapshots with the orbit corrections applied along the way.
#[derive(Clone, Debug)]
pub struct CurveTrajectory {
    pub traj: Trajectory<Field>,
    /// Largest per-step reprojection correction.
    pub max_correction: f64,
    /// Spectrum drift of the stored snapshots after correction.
    pub spectrum_drift: f64,
    /// Largest two-path discrepancy seen at snapshots (zero if unchecked).
    pub xcheck: f64,
}

/// RK4 on an arbitrary curve right-hand side with orbit reprojection after
/// each step; `check` runs on every snapshot.
pub fn integrate_curve_rhs(
    gamma0: &Curve,
    rhs: impl Fn(&Curve) -> Result<Field>,
    check: impl Fn(&Curve) -> Result<f64>,
    t_final: f64,
    dt: f64,
    stride: usize,
) -> Result<CurveTrajectory> {
    if !(dt > 0.0) || t_final < 0.0 || stride == 0 {
        return Err(LieError::Shape("curve integration needs dt > 0 and stride >= 1".into()));
    }
    let a = gamma0.a.clone();
    let intervals = (t_final / (dt * stride as f64)).ceil() as usize;
    let steps = intervals * stride;
    let dt = if steps == 0 { 0.0 } else { t_final / steps as f64 };
    let mut s = gamma0.field.clone();
    let mut times = vec![0.0];
    let mut states = vec![s.clone()];
    let mut max_correction: f64 = 0.0;
    let mut xcheck = check(gamma0)?;
    for k in 1..=steps {
        let next = rk4_step(|f: &Field| rhs(&Curve::unchecked(f.clone(), &a)), &s, dt)
            .map_err(|e| e.at_step(k))?;
        let (c, corr) = reproject_to_orbit(&Curve::unchecked(next, &a));
        max_correction = max_correction.max(corr);
        s = c.field;
        if k % stride == 0 {
            xcheck = xcheck.max(check(&Curve::unchecked(s.clone(), &a))?);
            times.push(k as f64 * dt);
            states.push(s.clone());
        }
    }
    let spectrum_drift = states
        .iter()
        .map(|f| Curve::unchecked(f.clone(), &a).spectrum_drift())
        .fold(0.0, f64::max);
    if spectrum_drift > TAU_ORBIT * a.norm().max(1.0) {
        return Err(LieError::numerical(
            "integrate_curve_flow",
            format!("spectrum drift {spectrum_drift:.3e} after correction"),
        ));
    }
    Ok(CurveTrajectory {
        traj: Trajectory { times, states },
        max_correction,
        spectrum_drift,
        xcheck,
    })
}

/// The `(b, j)` curve flow. Stages use the conjugated form; every snapshot
/// is cross-checked against the geometric form.
pub fn integrate_curve_flow(
    ctx: &HierarchyContext,
    gamma0: &Curve,
    t_final: f64,
    dt: f64,
    stride: usize,
) -> Result<CurveTrajectory> {
    let gamma0 = Curve::new(gamma0.field.clone(), &gamma0.a)?;
    integrate_curve_rhs(
        &gamma0,
        |c| curve_flow_conjugated(ctx, &develop_unchecked(&ctx.cd, c)?),
        |c| {
            let pair = develop_unchecked(&ctx.cd, c)?;
            let (p, q) = curve_flow_paths(ctx, &pair)?;
            let d = p.sup_diff(&q);
            if d > TAU_XCHECK {
                return Err(LieError::Consistency {
                    op: "integrate_curve_flow",
                    residual: d,
                    tolerance: TAU_XCHECK,
                });
            }
            Ok(d)
        },
        t_final,
        dt,
        stride,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{bump, sech, su2_a, su2_field, su2_from_q, u3_potential, u3_regular_a};
    use crate::gridcalc::{stable_dt, LineGrid};
    use crate::hierarchy::integrate_flow;
    use crate::liecore::ONE;

    fn u3_ctx(b: &CMat, j: usize) -> HierarchyContext {
        let a = u3_regular_a();
        HierarchyContext::new(&a, &AlgebraElement { tag: a.tag, m: b.clone() }, j).unwrap()
    }

    fn u3_pair(grid: LineGrid) -> (HierarchyContext, DevelopedPair) {
        let ctx = u3_ctx(&u3_regular_a().m, 1);
        let u = u3_potential(grid, 1.0).unwrap();
        let pair = undevelop(&ctx, &u).unwrap();
        (ctx, pair)
    }

    /// Tangent field `[w, gamma]` from a bump-weighted algebra direction.
    fn tangent_probe(gamma: &Curve, c: f64) -> Field {
        let tag = gamma.a.tag;
        let w0 = tag.project(&CMat::from_fn(tag.size(), tag.size(), |r, k| {
            C64::new(0.3 * r as f64 - 0.2 * k as f64, 0.1 + 0.25 * (r * k) as f64)
        }));
        let g = gamma.grid();
        let w = Field::raw(g, tag, g.xs().iter().map(|x| w0.scale(bump(*x, c, 1.5))).collect());
        w.bracket(&gamma.field)
    }

    #[test]
    fn zero_potential_gives_constant_curve() {
        let g = LineGrid::new(10.0, 64).unwrap();
        let ctx = HierarchyContext::a_flow(&su2_a(), 2).unwrap();
        let pair = undevelop(&ctx, &Field::zeros(g, AlgebraTag::su(2))).unwrap();
        assert!(pair.gamma.values().iter().all(|v| (v - &su2_a().m).norm() < 1e-15));
        let back = develop(&ctx, &pair.gamma).unwrap();
        assert!(back.u.sup_norm() < 1e-15);
        assert!(back.g.values.iter().all(|v| (v - CMat::identity(2, 2)).norm() < 1e-14));
    }

    #[test]
    fn commuting_potential_closed_form() {
        let g = LineGrid::default();
        let ctx = HierarchyContext::a_flow(&su2_a(), 1).unwrap();
        let e = su2_from_q(ONE);
        let u = su2_field(g, |x| C64::new(sech(x), 0.0)).unwrap();
        let pair = undevelop(&ctx, &u).unwrap();
        let mut err: f64 = 0.0;
        for (i, x) in g.xs().into_iter().enumerate() {
            let phi = x.sinh().atan() - (-20f64).sinh().atan();
            let r = exp_m(AlgebraTag::su(2), &e.scale(phi));
            let want = &r * &su2_a().m * r.adjoint();
            err = err.max((&pair.gamma.values()[i] - want).norm());
        }
        assert!(err < 1e-8, "{err}");
        assert!(pair.gamma.spectrum_drift() < 1e-12);
        let back = develop(&ctx, &pair.gamma).unwrap();
        assert!(back.u.sup_diff(&u) < 1e-6);
    }

    fn round_trip(n: usize) -> f64 {
        let g = LineGrid::new(20.0, n).unwrap();
        let ctx = HierarchyContext::a_flow(&su2_a(), 1).unwrap();
        let u = su2_field(g, |x| C64::from_polar(0.8 * sech(x), 0.5 * x)).unwrap();
        let pair = undevelop(&ctx, &u).unwrap();
        develop(&ctx, &pair.gamma).unwrap().u.sup_diff(&u)
    }

    #[test]
    fn development_round_trip_converges() {
        let e: Vec<f64> = [256, 512, 1024].iter().map(|n| round_trip(*n)).collect();
        assert!(e[2] < 1e-4, "{e:?}");
        assert!((e[0] / e[1]).log2() > 2.0 && (e[1] / e[2]).log2() > 2.0, "{e:?}");
    }

    #[test]
    fn develop_rejects_off_orbit_curves() {
        let g = LineGrid::new(10.0, 64).unwrap();
        let ctx = HierarchyContext::a_flow(&su2_a(), 1).unwrap();
        let bad = Curve::unchecked(Field::constant(g, AlgebraTag::su(2), &su2_a().m.scale(1.1)), &su2_a());
        assert!(matches!(develop(&ctx, &bad), Err(LieError::Domain { .. })));
    }

    #[test]
    fn orbit_j_and_its_inverse() {
        let (_, pair) = u3_pair(LineGrid::default());
        let gamma = &pair.gamma;
        let xi = tangent_probe(gamma, 0.5);
        let v = geo_J(gamma, &xi).unwrap();
        assert!(CurveGeometry::new(gamma).normal(&v).sup_norm() < 1e-12);
        assert!(geo_J_inverse(gamma, &v).unwrap().sup_diff(&xi) < 1e-10);
        // J^{-1}(gamma_x) = g u g^{-1}.
        let gx = derivative(&gamma.field, 1).unwrap();
        let got = geo_J_inverse(gamma, &gx).unwrap();
        let e = got.sup_diff(&pair.g.conjugate(&pair.u));
        assert!(e < 1e-6, "{e}");
        let normal = Field::constant(gamma.grid(), gamma.a.tag, &gamma.a.m);
        assert!(geo_J(&Curve::constant(gamma.grid(), &gamma.a), &normal).is_err());
    }

    #[test]
    fn lambda_two_formulas_agree() {
        let (ctx, pair) = u3_pair(LineGrid::default());
        for c in [-1.0, 0.5, 2.0] {
            let xi = tangent_probe(&pair.gamma, c);
            let l1 = geo_Lambda_conj(&ctx, &pair, &xi).unwrap();
            let l2 = geo_Lambda_geom(&ctx, &pair.gamma, &xi).unwrap();
            let e = l1.sup_diff(&l2);
            assert!(e < 1e-6, "c={c}: {e}");
        }
    }

    #[test]
    fn lambda_on_constant_curve_is_derivative() {
        let g = LineGrid::new(10.0, 256).unwrap();
        let ctx = u3_ctx(&u3_regular_a().m, 1);
        let gamma = Curve::constant(g, &u3_regular_a());
        let xi = tangent_probe(&gamma, 0.0);
        let d = derivative(&xi, 1).unwrap();
        assert!(geo_Lambda_geom(&ctx, &gamma, &xi).unwrap().sup_diff(&d) < 1e-12);
        let pair = undevelop(&ctx, &Field::zeros(g, AlgebraTag::u(3))).unwrap();
        assert!(geo_Lambda_conj(&ctx, &pair, &xi).unwrap().sup_diff(&d) < 1e-12);
    }

    #[test]
    fn lambda_is_skew_up_to_the_boundary_term() {
        let (ctx, pair) = u3_pair(LineGrid::default());
        let geom = CurveGeometry::new(&pair.gamma);
        let nf = regular_normals(&ctx, &geom, &pair.gamma).unwrap();
        let x1 = tangent_probe(&pair.gamma, -1.0);
        let x2 = tangent_probe(&pair.gamma, 1.5);
        let l1 = geo_Lambda_geom_with(&geom, &nf, &x1).unwrap();
        let l2 = geo_Lambda_geom_with(&geom, &nf, &x2).unwrap();
        let s = l1.l2_inner(&x2) + x1.l2_inner(&l2);
        let h1 = normal_potentials(&geom, &nf, &x1).unwrap();
        let h2 = normal_potentials(&geom, &nf, &x2).unwrap();
        let n = pair.gamma.grid().n;
        let boundary: f64 = h1.iter().zip(&h2).map(|(a, b)| a[n - 1] * b[n - 1]).sum();
        assert!(boundary.abs() > 1e-3);
        assert!((s - boundary).abs() < 1e-6, "{s} {boundary}");
    }

    #[test]
    fn curve_flow_two_paths() {
        let (_, pair) = u3_pair(LineGrid::default());
        let a = u3_regular_a().m;
        let b = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![I * 0.2, I * -1.0, I * 0.5]));
        for bm in [a.clone(), b] {
            for j in 1..=3 {
                let ctx = u3_ctx(&bm, j);
                let (p, q) = curve_flow_paths(&ctx, &pair).unwrap();
                let e = p.sup_diff(&q);
                assert!(e < 1e-5, "j={j}: {e}");
            }
        }
    }

    #[test]
    fn first_a_flow_is_translation() {
        let (ctx, pair) = u3_pair(LineGrid::default());
        let rhs = curve_flow_rhs(&ctx, &pair).unwrap();
        let gx = derivative(&pair.gamma.field, 1).unwrap();
        assert!(rhs.sup_diff(&gx) < 1e-6);
    }

    #[test]
    fn su2_second_flow_is_schrodinger() {
        let g = LineGrid::default();
        let ctx = HierarchyContext::a_flow(&su2_a(), 2).unwrap();
        let u = su2_field(g, |x| C64::from_polar(0.8 * sech(x), 0.5 * x)).unwrap();
        let pair = undevelop(&ctx, &u).unwrap();
        let rhs = curve_flow_rhs(&ctx, &pair).unwrap();
        let s = schrodinger_rhs(&pair.gamma).unwrap();
        let e = rhs.sup_diff(&s);
        assert!(e < 1e-5, "{e}");
        let (_, p3) = u3_pair(LineGrid::new(20.0, 64).unwrap());
        assert!(schrodinger_rhs(&p3.gamma).is_err());
    }

    #[test]
    fn invariant_polynomial_flows_are_ferapontov() {
        let (_, pair) = u3_pair(LineGrid::default());
        let a = u3_regular_a().m;
        let geom = CurveGeometry::new(&pair.gamma);
        let mut ak = a.clone();
        for k in 1..=3 {
            let rhs = invariant_poly_rhs(&pair.gamma, k).unwrap();
            assert!(geom.normal(&rhs).sup_norm() < 1e-6);
            let b = &ak * I.powu(k as u32 - 1);
            let ctx = u3_ctx(&b, 1);
            let fer = curve_flow_rhs(&ctx, &pair).unwrap();
            let e = rhs.sup_diff(&fer);
            assert!(e < 1e-6, "k={k}: {e}");
            ak = &ak * &a;
        }
    }

    #[test]
    fn height_gradient_is_lambda_hamiltonian() {
        let (ctx, pair) = u3_pair(LineGrid::default());
        let b = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![I * 0.2, I * -1.0, I * 0.5]));
        let grad = grad_height_H(&pair.gamma, &b);
        let lhs = geo_Lambda_geom(&ctx, &pair.gamma, &grad).unwrap();
        let bhat = parallel_normal(&ctx, &pair.gamma, &b).unwrap();
        // With the -tr pairing the Ferapontov field is Lambda of the gradient of -H_b.
        let rhs = derivative(&bhat, 1).unwrap().scale(-1.0);
        let e = lhs.sup_diff(&rhs);
        assert!(e < 1e-5, "{e}");
        assert_eq!(height_H(&Curve::constant(pair.gamma.grid(), &pair.gamma.a), &b), 0.0);
    }

    #[test]
    fn spectral_and_frame_normals_agree() {
        let (ctx, pair) = u3_pair(LineGrid::default());
        let b = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![I * 0.2, I * -1.0, I * 0.5]));
        let geom = CurveGeometry::new(&pair.gamma);
        let s = geom.spectral_normal(&b).unwrap();
        let f = pair.g.conjugate(&Field::constant(pair.gamma.grid(), AlgebraTag::u(3), &b));
        assert!(s.sup_diff(&f) < 1e-10);
        let _ = ctx;
    }

    #[test]
    fn curve_flow_is_stable_on_fine_grids() {
        // A pinned left end grows grid modes at a rate ~ 1/h^2 (about 600 here).
        let g = LineGrid::new(20.0, 1024).unwrap();
        let ctx = HierarchyContext::a_flow(&su2_a(), 2).unwrap();
        let u0 = su2_field(g, |x| C64::from_polar(0.8 * sech(x), 0.5 * x)).unwrap();
        let pair = undevelop(&ctx, &u0).unwrap();
        let ct = integrate_curve_flow(&ctx, &pair.gamma, 0.05, stable_dt(g.h, 2).unwrap(), 50).unwrap();
        assert!(ct.xcheck < 1e-6, "{}", ct.xcheck);
        let left = (&ct.traj.states.last().unwrap().values[0] - &su2_a().m).norm();
        assert!(left < 1e-7, "{left}");
    }

    #[test]
    fn curve_flow_matches_developed_flow() {
        let g = LineGrid::new(15.0, 400).unwrap();
        let ctx = HierarchyContext::a_flow(&su2_a(), 2).unwrap();
        let u0 = su2_field(g, |x| C64::from_polar(0.8 * sech(x), 0.5 * x)).unwrap();
        let pair = undevelop(&ctx, &u0).unwrap();
        let dt = stable_dt(g.h, 2).unwrap();
        let t = 0.05;
        let curves = integrate_curve_flow(&ctx, &pair.gamma, t, dt, 10).unwrap();
        let flows = integrate_flow(&ctx, &u0, t, dt, 10).unwrap();
        let last_u = flows.traj.states.last().unwrap();
        let via_u = undevelop(&ctx, last_u).unwrap();
        let e = curves.traj.states.last().unwrap().sup_diff(&via_u.gamma.field);
        // Bounded by the fourth-order frame truncation of undevelop at this h.
        assert!(e < 5e-5, "{e}");
        assert!(curves.spectrum_drift < 1e-10);
        assert!(curves.xcheck < 1e-5);
    }

    #[test]
    fn constant_curve_is_stationary() {
        let g = LineGrid::new(10.0, 64).unwrap();
        let ctx = HierarchyContext::a_flow(&su2_a(), 2).unwrap();
        let c = Curve::constant(g, &su2_a());
        let tr = integrate_curve_flow(&ctx, &c, 0.01, 1e-3, 5).unwrap();
        assert!(tr.traj.states.iter().all(|s| s.sup_diff(&c.field) < 1e-14));
    }
}

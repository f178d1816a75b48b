//! Symmetric spaces: Cartan decompositions, the explicit Hermitian systems
//! and the rank one sphere, with the identifications that carry each system
//! onto the matrix flows.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LieError, Result};
use crate::fixtures::{bump, sech};
use crate::gridcalc::{derivative_values, DecayClass, Field, LineGrid};
use crate::hierarchy::{flow_rhs, integrate_flow, HierarchyContext};
use crate::liecore::{comm, AlgebraElement, AlgebraTag, CMat, C64, I, ONE, TAU_ALG, TAU_ORBIT, ZERO};

/// The cataloged spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceId {
    /// `Gr(k, C^n) = U(n)/U(k)xU(n-k)`.
    GrkCn { n: usize, k: usize },
    /// `S^n = SO(n+1)/SO(n)`.
    Sn { n: usize },
    /// `Gr(2, R^{n+2}) = SO(n+2)/SO(2)xSO(n)`.
    Gr2Rn2 { n: usize },
    /// `SO(2n)/U(n)`.
    SO2nUn { n: usize },
    /// `Sp(n)/U(n)`.
    SpnUn { n: usize },
}

/// Which form of the matrix NLS the `Gr(k, C^n)` entry reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MnlsConvention {
    /// `q_t = i (q_xx + 2 q q^* q)`, the form produced by the recursion.
    #[default]
    RecursionI,
    /// `q_t = q_xx + 2 q q^* q`.
    Literal,
}

/// A Cartan decomposition with its base point. The involution is
/// `sigma(X) = S X S^{-1}` for a unitary `S` with `S^2 = +-I`.
#[derive(Clone, Debug)]
pub struct SymmetricSpaceSpec {
    pub id: SpaceId,
    pub tag: AlgebraTag,
    pub a: AlgebraElement,
    s: CMat,
    /// `a` lies in `K` with centraliser `K` (Hermitian case) rather than in `P`.
    pub hermitian: bool,
}

fn diag_sign(signs: &[f64]) -> CMat {
    CMat::from_diagonal(&DVector::from_iterator(signs.len(), signs.iter().map(|s| C64::from(*s))))
}

/// `[[0, -I_n], [I_n, 0]]`.
fn block_j(n: usize) -> CMat {
    let mut j = CMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = -ONE;
        j[(n + i, i)] = ONE;
    }
    j
}

pub fn catalog(id: SpaceId) -> Result<SymmetricSpaceSpec> {
    let bad = |m: &str| Err(LieError::Unsupported(format!("{id:?}: {m}")));
    let (tag, a, s, hermitian) = match id {
        SpaceId::GrkCn { n, k } => {
            if k == 0 || k >= n {
                return bad("need 0 < k < n");
            }
            let d: Vec<f64> = (0..n).map(|i| if i < k { 1.0 } else { -1.0 }).collect();
            let a = diag_sign(&d) * (I * 0.5);
            (AlgebraTag::u(n), a, diag_sign(&d), true)
        }
        SpaceId::Sn { n } => {
            if n < 2 {
                return bad("need n >= 2");
            }
            let mut a = CMat::zeros(n + 1, n + 1);
            a[(1, 0)] = ONE;
            a[(0, 1)] = -ONE;
            let d: Vec<f64> = (0..=n).map(|i| if i == 0 { -1.0 } else { 1.0 }).collect();
            (AlgebraTag::so(n + 1), a, diag_sign(&d), false)
        }
        SpaceId::Gr2Rn2 { n } => {
            if n < 1 {
                return bad("need n >= 1");
            }
            let mut a = CMat::zeros(n + 2, n + 2);
            a[(1, 0)] = ONE;
            a[(0, 1)] = -ONE;
            let d: Vec<f64> = (0..n + 2).map(|i| if i < 2 { 1.0 } else { -1.0 }).collect();
            (AlgebraTag::so(n + 2), a, diag_sign(&d), true)
        }
        SpaceId::SO2nUn { n } => {
            if n < 2 {
                return bad("need n >= 2");
            }
            (AlgebraTag::so(2 * n), block_j(n) * C64::from(0.5), block_j(n), true)
        }
        SpaceId::SpnUn { n } => {
            if n < 1 {
                return bad("need n >= 1");
            }
            (AlgebraTag::sp(n), block_j(n) * C64::from(0.5), block_j(n), true)
        }
    };
    let spec = SymmetricSpaceSpec {
        id,
        tag,
        a: AlgebraElement::new(tag, a)?,
        s,
        hermitian,
    };
    let r = spec.invariant_residual();
    if r > 1e-12 {
        return Err(LieError::Consistency {
            op: "catalog",
            residual: r,
            tolerance: 1e-12,
        });
    }
    Ok(spec)
}

impl SymmetricSpaceSpec {
    pub fn sigma(&self, x: &CMat) -> CMat {
        &self.s * x * self.s.adjoint()
    }

    pub fn k_part(&self, x: &CMat) -> CMat {
        (x + self.sigma(x)).scale(0.5)
    }

    pub fn p_part(&self, x: &CMat) -> CMat {
        (x - self.sigma(x)).scale(0.5)
    }

    /// Largest violation over basis elements and pairs of: `sigma^2 = Id`,
    /// `sigma` an automorphism, the Cartan bracket relations, the location of
    /// `a`, and for Hermitian entries `ad(a)^2 = -Id` off the centraliser.
    pub fn invariant_residual(&self) -> f64 {
        let basis = self.tag.basis();
        let mut r = 0.0f64;
        let parts: Vec<(CMat, CMat)> = basis.iter().map(|e| (self.k_part(e), self.p_part(e))).collect();
        for (e, (k, p)) in basis.iter().zip(&parts) {
            r = r.max((self.sigma(&self.sigma(e)) - e).norm());
            r = r.max((k + p - e).norm());
            r = r.max(self.tag.membership_defect(k)).max(self.tag.membership_defect(p));
        }
        for (i, (ki, pi)) in parts.iter().enumerate() {
            for (kj, pj) in &parts[i..] {
                let kk = comm(ki, kj);
                let kp = comm(ki, pj);
                let pk = comm(pi, kj);
                let pp = comm(pi, pj);
                r = r.max(self.p_part(&kk).norm());
                r = r.max(self.k_part(&kp).norm()).max(self.k_part(&pk).norm());
                r = r.max(self.p_part(&pp).norm());
            }
        }
        let a = &self.a.m;
        r = r.max(if self.hermitian { self.p_part(a).norm() } else { self.k_part(a).norm() });
        if self.hermitian {
            for (_, p) in &parts {
                // Centraliser is K, so the complement is P.
                r = r.max((comm(a, &comm(a, p)) + p).norm());
                r = r.max(comm(a, &self.k_part(p)).norm());
            }
            for (k, _) in &parts {
                r = r.max(comm(a, k).norm());
            }
        }
        r
    }
}

/// Component variables of each cataloged system, one entry per grid sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Components {
    /// `q`, complex `k x (n-k)`.
    Complex(Vec<CMat>),
    /// `(X, Y)`: column vectors for `Gr(2, R^{n+2})`, skew (resp. symmetric)
    /// `n x n` matrices for `SO(2n)/U(n)` (resp. `Sp(n)/U(n)`).
    Pair(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>),
    /// `u in R^{n-1}` on `K` for `S^n`.
    Vector(Vec<DVector<f64>>),
}

impl Components {
    pub fn len(&self) -> usize {
        match self {
            Components::Complex(q) => q.len(),
            Components::Pair(x, _) => x.len(),
            Components::Vector(u) => u.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sup_diff(&self, other: &Components) -> f64 {
        let m = |a: f64, b: f64| a.max(b);
        match (self, other) {
            (Components::Complex(a), Components::Complex(b)) => a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, m),
            (Components::Pair(a, b), Components::Pair(c, d)) => a
                .iter()
                .zip(c)
                .chain(b.iter().zip(d))
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, m),
            (Components::Vector(a), Components::Vector(b)) => a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, m),
            _ => f64::INFINITY,
        }
    }
}

impl SymmetricSpaceSpec {
    /// Matrix of a single sample of component variables, in the complement
    /// of the centraliser (Hermitian cases) or in `K` off the centraliser (`S^n`).
    pub fn embed_point(&self, c: &ComponentPoint) -> Result<CMat> {
        let size = self.tag.size();
        let mut m = CMat::zeros(size, size);
        match (self.id, c) {
            (SpaceId::GrkCn { n, k }, ComponentPoint::Complex(q)) => {
                check_shape(q.shape(), (k, n - k))?;
                for r in 0..k {
                    for col in 0..n - k {
                        m[(r, k + col)] = q[(r, col)];
                        m[(k + col, r)] = -q[(r, col)].conj();
                    }
                }
            }
            (SpaceId::Gr2Rn2 { n }, ComponentPoint::Pair(x, y)) => {
                check_shape(x.shape(), (n, 1))?;
                check_shape(y.shape(), (n, 1))?;
                for i in 0..n {
                    m[(0, 2 + i)] = C64::from(x[i]);
                    m[(1, 2 + i)] = C64::from(y[i]);
                    m[(2 + i, 0)] = C64::from(-x[i]);
                    m[(2 + i, 1)] = C64::from(-y[i]);
                }
            }
            (SpaceId::SO2nUn { n }, ComponentPoint::Pair(x, y)) | (SpaceId::SpnUn { n }, ComponentPoint::Pair(x, y)) => {
                check_shape(x.shape(), (n, n))?;
                check_shape(y.shape(), (n, n))?;
                let s = if matches!(self.id, SpaceId::SpnUn { .. }) { I } else { ONE };
                for r in 0..n {
                    for col in 0..n {
                        m[(r, col)] = s * x[(r, col)];
                        m[(r, n + col)] = s * y[(r, col)];
                        m[(n + r, col)] = s * y[(r, col)];
                        m[(n + r, n + col)] = -s * x[(r, col)];
                    }
                }
            }
            (SpaceId::Sn { n }, ComponentPoint::Vector(u)) => {
                check_shape((u.len(), 1), (n - 1, 1))?;
                for i in 0..n - 1 {
                    m[(i + 2, 1)] = C64::from(u[i]);
                    m[(1, i + 2)] = C64::from(-u[i]);
                }
            }
            _ => return Err(LieError::Shape(format!("components do not match {:?}", self.id))),
        }
        let d = self.tag.membership_defect(&m);
        if d > TAU_ALG {
            return Err(LieError::domain("embed", "components violate the symmetry of the space", d));
        }
        Ok(m)
    }

    /// Inverse of [`embed_point`](Self::embed_point); the remaining entries are ignored.
    pub fn coordinates_point(&self, m: &CMat) -> Result<ComponentPoint> {
        check_shape(m.shape(), (self.tag.size(), self.tag.size()))?;
        Ok(match self.id {
            SpaceId::GrkCn { n, k } => ComponentPoint::Complex(m.view((0, k), (k, n - k)).into_owned()),
            SpaceId::Gr2Rn2 { n } => ComponentPoint::Pair(
                DMatrix::from_fn(n, 1, |i, _| m[(0, 2 + i)].re),
                DMatrix::from_fn(n, 1, |i, _| m[(1, 2 + i)].re),
            ),
            SpaceId::SO2nUn { n } => ComponentPoint::Pair(
                DMatrix::from_fn(n, n, |r, c| m[(r, c)].re),
                DMatrix::from_fn(n, n, |r, c| m[(r, n + c)].re),
            ),
            SpaceId::SpnUn { n } => ComponentPoint::Pair(
                DMatrix::from_fn(n, n, |r, c| m[(r, c)].im),
                DMatrix::from_fn(n, n, |r, c| m[(r, n + c)].im),
            ),
            SpaceId::Sn { n } => ComponentPoint::Vector(DVector::from_fn(n - 1, |i, _| m[(i + 2, 1)].re)),
        })
    }

    pub fn embed(&self, grid: LineGrid, c: &Components) -> Result<Field> {
        if c.len() != grid.n {
            return Err(LieError::Shape(format!("{} samples on a grid of {}", c.len(), grid.n)));
        }
        let values = (0..grid.n).map(|i| self.embed_point(&c.point(i))).collect::<Result<Vec<_>>>()?;
        Ok(Field::raw(grid, self.tag, values))
    }

    pub fn coordinates(&self, f: &Field) -> Result<Components> {
        let pts = f.values.iter().map(|m| self.coordinates_point(m)).collect::<Result<Vec<_>>>()?;
        Components::from_points(pts)
    }
}

/// One sample of [`Components`].
#[derive(Clone, Debug, PartialEq)]
pub enum ComponentPoint {
    Complex(CMat),
    Pair(DMatrix<f64>, DMatrix<f64>),
    Vector(DVector<f64>),
}

impl Components {
    pub fn point(&self, i: usize) -> ComponentPoint {
        match self {
            Components::Complex(q) => ComponentPoint::Complex(q[i].clone()),
            Components::Pair(x, y) => ComponentPoint::Pair(x[i].clone(), y[i].clone()),
            Components::Vector(u) => ComponentPoint::Vector(u[i].clone()),
        }
    }

    pub fn from_points(pts: Vec<ComponentPoint>) -> Result<Components> {
        let mixed = || LieError::Shape("mixed component kinds".into());
        match pts.first() {
            None => Err(LieError::Shape("no samples".into())),
            Some(ComponentPoint::Complex(_)) => pts
                .into_iter()
                .map(|p| if let ComponentPoint::Complex(q) = p { Ok(q) } else { Err(mixed()) })
                .collect::<Result<_>>()
                .map(Components::Complex),
            Some(ComponentPoint::Vector(_)) => pts
                .into_iter()
                .map(|p| if let ComponentPoint::Vector(u) = p { Ok(u) } else { Err(mixed()) })
                .collect::<Result<_>>()
                .map(Components::Vector),
            Some(ComponentPoint::Pair(..)) => {
                let (mut xs, mut ys) = (Vec::new(), Vec::new());
                for p in pts {
                    let ComponentPoint::Pair(x, y) = p else { return Err(mixed()) };
                    xs.push(x);
                    ys.push(y);
                }
                Ok(Components::Pair(xs, ys))
            }
        }
    }
}

fn check_shape(got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(LieError::Shape(format!("expected {want:?}, got {got:?}")));
    }
    Ok(())
}

/// `[a, u_xx] - 1/2 [u, [u, [a, u]]]`, the `(a, 2)`-flow of a Hermitian symmetric space.
pub fn hermitian_a2_rhs(spec: &SymmetricSpaceSpec, u: &Field) -> Result<Field> {
    if !spec.hermitian {
        return Err(LieError::Unsupported(format!("{:?} is not Hermitian", spec.id)));
    }
    let a = &spec.a.m;
    let uxx = derivative_values(&u.values, u.grid.h, 2, u.grid.acc)?;
    let values = u
        .values
        .iter()
        .zip(&uxx)
        .map(|(v, vxx)| comm(a, vxx) - comm(v, &comm(v, &comm(a, v))).scale(0.5))
        .collect();
    Ok(Field::raw(u.grid, u.tag, values).with_class(u.class))
}

fn d2<T: crate::gridcalc::LinVal>(v: &[T], grid: &LineGrid) -> Result<Vec<T>> {
    derivative_values(v, grid.h, 2, grid.acc)
}

/// `q_t = q_xx + 2 q q^* q`, times `i` under [`MnlsConvention::RecursionI`].
pub fn mnls_rhs(grid: &LineGrid, q: &[CMat], conv: MnlsConvention) -> Result<Vec<CMat>> {
    let qxx = d2(q, grid)?;
    let s = match conv {
        MnlsConvention::RecursionI => I,
        MnlsConvention::Literal => ONE,
    };
    Ok(q.iter()
        .zip(qxx)
        .map(|(q, qxx)| (qxx + q * q.adjoint() * q * C64::from(2.0)) * s)
        .collect())
}

/// The `Gr(2, R^{n+2})` system in `(X, Y)`.
pub fn gr2_real_rhs(grid: &LineGrid, x: &[DMatrix<f64>], y: &[DMatrix<f64>]) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let (xxx, yxx) = (d2(x, grid)?, d2(y, grid)?);
    let mut xt = Vec::with_capacity(x.len());
    let mut yt = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let (xv, yv) = (&x[i], &y[i]);
        let xy = xv.dot(yv);
        let xx = xv.dot(xv);
        let yy = yv.dot(yv);
        xt.push(-&yxx[i] + xv * xy - yv * (0.5 * (3.0 * xx + yy)));
        yt.push(&xxx[i] + xv * (0.5 * (xx + 3.0 * yy)) - yv * xy);
    }
    Ok((xt, yt))
}

fn mcomm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

/// The `SO(2n)/U(n)` system (`sign = 1`) or the `Sp(n)/U(n)` system (`sign = -1`).
fn pair_system(
    grid: &LineGrid,
    x: &[DMatrix<f64>],
    y: &[DMatrix<f64>],
    sign: f64,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let (xxx, yxx) = (d2(x, grid)?, d2(y, grid)?);
    let mut xt = Vec::with_capacity(x.len());
    let mut yt = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let (xm, ym) = (&x[i], &y[i]);
        let c = mcomm(xm, ym);
        let (x2, y2) = (xm * xm, ym * ym);
        let cubic_x = mcomm(xm, &c) + ym * &y2 * 2.0 + ym * &x2 + &x2 * ym;
        let cubic_y = mcomm(ym, &c) - xm * &x2 * 2.0 - xm * &y2 - &y2 * xm;
        xt.push(-&yxx[i] + cubic_x * sign);
        yt.push(&xxx[i] + cubic_y * sign);
    }
    Ok((xt, yt))
}

pub fn so2n_rhs(grid: &LineGrid, x: &[DMatrix<f64>], y: &[DMatrix<f64>]) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    pair_system(grid, x, y, 1.0)
}

pub fn spn_rhs(grid: &LineGrid, x: &[DMatrix<f64>], y: &[DMatrix<f64>]) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    pair_system(grid, x, y, -1.0)
}

/// `u_t = -(u_xxx + 3/2 |u|^2 u_x)`.
pub fn vmkdv_rhs(grid: &LineGrid, u: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let ux = derivative_values(u, grid.h, 1, grid.acc)?;
    let uxxx = derivative_values(u, grid.h, 3, grid.acc)?;
    Ok(u.iter()
        .zip(ux.iter().zip(&uxxx))
        .map(|(u, (ux, uxxx))| -(uxxx + ux * (1.5 * u.norm_squared())))
        .collect())
}

/// The cataloged right-hand side in component variables.
pub fn component_rhs(spec: &SymmetricSpaceSpec, grid: &LineGrid, c: &Components, conv: MnlsConvention) -> Result<Components> {
    match (spec.id, c) {
        (SpaceId::GrkCn { .. }, Components::Complex(q)) => mnls_rhs(grid, q, conv).map(Components::Complex),
        (SpaceId::Gr2Rn2 { .. }, Components::Pair(x, y)) => gr2_real_rhs(grid, x, y).map(|(a, b)| Components::Pair(a, b)),
        (SpaceId::SO2nUn { .. }, Components::Pair(x, y)) => so2n_rhs(grid, x, y).map(|(a, b)| Components::Pair(a, b)),
        (SpaceId::SpnUn { .. }, Components::Pair(x, y)) => spn_rhs(grid, x, y).map(|(a, b)| Components::Pair(a, b)),
        (SpaceId::Sn { .. }, Components::Vector(u)) => vmkdv_rhs(grid, u).map(Components::Vector),
        _ => Err(LieError::Shape(format!("components do not match {:?}", spec.id))),
    }
}

/// The abstract flow a component system is compared against: the closed
/// Hermitian `(a, 2)`-flow, or the `(a, 3)`-flow of the hierarchy for `S^n`.
pub fn abstract_rhs(spec: &SymmetricSpaceSpec, u: &Field) -> Result<Field> {
    if spec.hermitian {
        hermitian_a2_rhs(spec, u)
    } else {
        flow_rhs(&HierarchyContext::a_flow(&spec.a, 3)?, u)
    }
}

/// `sup |component_rhs(c) - coordinates(abstract_rhs(embed(c)))|`.
pub fn embedding_residual(spec: &SymmetricSpaceSpec, grid: LineGrid, c: &Components, conv: MnlsConvention) -> Result<f64> {
    let u = spec.embed(grid, c)?.with_class(DecayClass::Decaying);
    let via = spec.coordinates(&abstract_rhs(spec, &u)?)?;
    Ok(component_rhs(spec, &grid, c, conv)?.sup_diff(&via))
}

/// Sup over stored times of `|P-part of u(t)|` along the `(a, j)`-flow from `u0`,
/// which must lie in `K`.
pub fn odd_flow_invariance(spec: &SymmetricSpaceSpec, u0: &Field, j: usize, t_final: f64, dt: f64) -> Result<f64> {
    let d0 = u0.values.iter().map(|m| spec.p_part(m).norm()).fold(0.0, f64::max);
    if d0 > TAU_ALG * u0.sup_norm().max(1.0) {
        return Err(LieError::domain("odd_flow_invariance", "initial data not in K", d0));
    }
    let ctx = HierarchyContext::a_flow(&spec.a, j)?;
    let stride = ((t_final / dt) as usize / 20).max(1);
    let traj = integrate_flow(&ctx, u0, t_final, dt, stride)?.traj;
    Ok(traj
        .states
        .iter()
        .flat_map(|s| s.values.iter().map(|m| spec.p_part(m).norm()))
        .fold(0.0, f64::max))
}

/// `P` of `S^n` as `R^n`: `[[0, -v^t], [v, 0]]`.
pub fn sphere_vector(m: &CMat) -> DVector<f64> {
    DVector::from_fn(m.nrows() - 1, |r, _| m[(r + 1, 0)].re)
}

pub fn sphere_matrix(v: &DVector<f64>) -> CMat {
    let n = v.len();
    let mut m = CMat::zeros(n + 1, n + 1);
    for r in 0..n {
        m[(r + 1, 0)] = C64::from(v[r]);
        m[(0, r + 1)] = C64::from(-v[r]);
    }
    m
}

fn check_unit(gamma: &[DVector<f64>], op: &'static str) -> Result<()> {
    let d = gamma.iter().map(|g| (g.norm() - 1.0).abs()).fold(0.0, f64::max);
    if d > TAU_ORBIT {
        return Err(LieError::domain(op, "curve leaves the unit sphere", d));
    }
    Ok(())
}

/// `-(g_xxx + 3 <g_x, g_xx> g + 3/2 |g_x|^2 g_x)` on the unit sphere.
/// Tangent to the sphere only up to the difference truncation.
pub fn sphere_curve_rhs(grid: &LineGrid, gamma: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    check_unit(gamma, "sphere_curve_rhs")?;
    let g1 = derivative_values(gamma, grid.h, 1, grid.acc)?;
    let g2 = derivative_values(gamma, grid.h, 2, grid.acc)?;
    let g3 = derivative_values(gamma, grid.h, 3, grid.acc)?;
    Ok((0..gamma.len())
        .map(|i| -(&g3[i] + &gamma[i] * (3.0 * g1[i].dot(&g2[i])) + &g1[i] * (1.5 * g1[i].norm_squared())))
        .collect())
}

/// `g x g_xx` on the unit sphere of `R^3`.
pub fn hfm_rhs(grid: &LineGrid, gamma: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    if gamma.iter().any(|g| g.len() != 3) {
        return Err(LieError::Shape("HFM curves live in R^3".into()));
    }
    check_unit(gamma, "hfm_rhs")?;
    let g2 = derivative_values(gamma, grid.h, 2, grid.acc)?;
    Ok(gamma.iter().zip(&g2).map(|(g, gxx)| g.cross(gxx)).collect())
}

/// `E_k = -(i/2) sigma_k`, so that `[E_1, E_2] = E_3` cyclically.
pub fn su2_basis() -> [CMat; 3] {
    let h = C64::new(0.0, -0.5);
    [
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]) * h,
        CMat::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]) * h,
        CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]) * h,
    ]
}

pub fn su2_to_r3(m: &CMat) -> DVector<f64> {
    // <E_k, E_l> = delta_kl / 2 under -Re tr.
    let e = su2_basis();
    DVector::from_fn(3, |k, _| 2.0 * crate::liecore::inner_m(m, &e[k]))
}

pub fn r3_to_su2(v: &DVector<f64>) -> CMat {
    let e = su2_basis();
    &e[0] * C64::from(v[0]) + &e[1] * C64::from(v[1]) + &e[2] * C64::from(v[2])
}

/// Uniform entries in `[-1, 1)` with the symmetry of the space.
pub fn random_component_point<R: Rng>(spec: &SymmetricSpaceSpec, rng: &mut R) -> ComponentPoint {
    let mut r = || rng.random_range(-1.0..1.0);
    match spec.id {
        SpaceId::GrkCn { n, k } => ComponentPoint::Complex(CMat::from_fn(k, n - k, |_, _| C64::new(r(), r()))),
        SpaceId::Gr2Rn2 { n } => ComponentPoint::Pair(DMatrix::from_fn(n, 1, |_, _| r()), DMatrix::from_fn(n, 1, |_, _| r())),
        SpaceId::SO2nUn { n } => {
            let x = DMatrix::from_fn(n, n, |_, _| r());
            let y = DMatrix::from_fn(n, n, |_, _| r());
            ComponentPoint::Pair(&x - x.transpose(), &y - y.transpose())
        }
        SpaceId::SpnUn { n } => {
            let x = DMatrix::from_fn(n, n, |_, _| r());
            let y = DMatrix::from_fn(n, n, |_, _| r());
            ComponentPoint::Pair(&x + x.transpose(), &y + y.transpose())
        }
        SpaceId::Sn { n } => ComponentPoint::Vector(DVector::from_fn(n - 1, |_, _| r())),
    }
}

/// Decaying components `c0 sech(x) + c1 exp(-(x-0.7)^2/1.69) cos(0.8x)` with random
/// coefficients drawn from `seed`.
pub fn sample_components(spec: &SymmetricSpaceSpec, grid: LineGrid, seed: u64) -> Components {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0 = random_component_point(spec, &mut rng);
    let c1 = random_component_point(spec, &mut rng);
    let pts = grid
        .xs()
        .iter()
        .map(|&x| {
            let (s0, s1) = (0.6 * sech(x), 0.4 * bump(x, 0.7, 1.3) * (0.8 * x).cos());
            match (&c0, &c1) {
                (ComponentPoint::Complex(a), ComponentPoint::Complex(b)) => ComponentPoint::Complex(a * C64::from(s0) + b * C64::from(s1)),
                (ComponentPoint::Pair(a, b), ComponentPoint::Pair(c, d)) => ComponentPoint::Pair(a * s0 + c * s1, b * s0 + d * s1),
                (ComponentPoint::Vector(a), ComponentPoint::Vector(b)) => ComponentPoint::Vector(a * s0 + b * s1),
                _ => unreachable!(),
            }
        })
        .collect();
    Components::from_points(pts).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devmap::{curve_flow_rhs, develop, schrodinger_rhs, undevelop, Curve};
    use crate::fixtures::{sech, Sphere};
    use crate::gridcalc::{derivative, stable_dt, Field};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_ids() -> Vec<SpaceId> {
        vec![
            SpaceId::GrkCn { n: 2, k: 1 },
            SpaceId::GrkCn { n: 4, k: 2 },
            SpaceId::GrkCn { n: 5, k: 2 },
            SpaceId::Sn { n: 3 },
            SpaceId::Sn { n: 4 },
            SpaceId::Gr2Rn2 { n: 3 },
            SpaceId::SO2nUn { n: 3 },
            SpaceId::SpnUn { n: 2 },
        ]
    }

    #[test]
    fn catalog_invariants() {
        for id in all_ids() {
            let s = catalog(id).unwrap();
            assert!(s.invariant_residual() < 1e-12, "{id:?}");
        }
        assert!(catalog(SpaceId::GrkCn { n: 3, k: 3 }).is_err());
    }

    #[test]
    fn sphere_bases_split_by_the_involution() {
        let s = catalog(SpaceId::Sn { n: 3 }).unwrap();
        let sp = Sphere::new(3);
        for (k, p) in sp.k.iter().zip(&sp.p) {
            assert!(s.p_part(k).norm() < 1e-15 && s.k_part(p).norm() < 1e-15);
            assert!(comm(&s.a.m, k).norm() > 0.5 && comm(&s.a.m, p).norm() > 0.5);
        }
        assert!((&sp.a.m - &s.a.m).norm() == 0.0);
    }

    #[test]
    fn spn_complement_is_purely_imaginary() {
        let s = catalog(SpaceId::SpnUn { n: 2 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = s.tag.random(&mut rng, 1.0);
        let p = s.p_part(&x);
        assert!(p.map(|z| z.re).norm() < 1e-14);
        assert!(s.k_part(&x).map(|z| z.im).norm() < 1e-14);
    }

    #[test]
    fn component_maps_round_trip_and_complex_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for id in all_ids() {
            let s = catalog(id).unwrap();
            let c = random_component_point(&s, &mut rng);
            let m = s.embed_point(&c).unwrap();
            assert_eq!(s.coordinates_point(&m).unwrap(), c);
            if s.hermitian {
                assert!(s.k_part(&m).norm() < 1e-14);
                let jm = s.coordinates_point(&comm(&s.a.m, &m)).unwrap();
                let want = match &c {
                    ComponentPoint::Complex(q) => ComponentPoint::Complex(q * I),
                    ComponentPoint::Pair(x, y) => ComponentPoint::Pair(-y, x.clone()),
                    ComponentPoint::Vector(_) => unreachable!(),
                };
                let d = match (&jm, &want) {
                    (ComponentPoint::Complex(a), ComponentPoint::Complex(b)) => (a - b).norm(),
                    (ComponentPoint::Pair(a, b), ComponentPoint::Pair(c, d)) => (a - c).norm() + (b - d).norm(),
                    _ => f64::INFINITY,
                };
                assert!(d < 1e-14, "{id:?}");
            } else {
                assert!(s.p_part(&m).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_components_give_zero() {
        let g = LineGrid::new(10.0, 64).unwrap();
        for id in all_ids() {
            let s = catalog(id).unwrap();
            let zero = s.coordinates(&Field::zeros(g, s.tag)).unwrap();
            let r = component_rhs(&s, &g, &zero, MnlsConvention::default()).unwrap();
            assert!(r.sup_diff(&zero) == 0.0);
        }
    }

    #[test]
    fn hermitian_closed_form_matches_recursion() {
        let g = LineGrid::default();
        for id in [SpaceId::GrkCn { n: 2, k: 1 }, SpaceId::GrkCn { n: 4, k: 2 }] {
            let s = catalog(id).unwrap();
            let u = s.embed(g, &sample_components(&s, g, 1)).unwrap().with_class(DecayClass::Decaying);
            let ctx = HierarchyContext::a_flow(&s.a, 2).unwrap();
            let d = flow_rhs(&ctx, &u).unwrap().sup_diff(&hermitian_a2_rhs(&s, &u).unwrap());
            assert!(d < 1e-6, "{id:?} {d}");
        }
    }

    #[test]
    fn component_systems_match_the_matrix_flows() {
        let g = LineGrid::default();
        for (id, tol) in [
            (SpaceId::GrkCn { n: 2, k: 1 }, 1e-6),
            (SpaceId::GrkCn { n: 5, k: 2 }, 1e-6),
            (SpaceId::Gr2Rn2 { n: 3 }, 1e-6),
            (SpaceId::SO2nUn { n: 3 }, 1e-6),
            (SpaceId::SpnUn { n: 2 }, 1e-6),
            (SpaceId::Sn { n: 3 }, 1e-5),
            (SpaceId::Sn { n: 4 }, 1e-5),
        ] {
            let s = catalog(id).unwrap();
            let c = sample_components(&s, g, 4);
            let r = embedding_residual(&s, g, &c, MnlsConvention::RecursionI).unwrap();
            assert!(r < tol, "{id:?} {r}");
        }
        let s = catalog(SpaceId::GrkCn { n: 2, k: 1 }).unwrap();
        let c = sample_components(&s, g, 4);
        assert!(embedding_residual(&s, g, &c, MnlsConvention::Literal).unwrap() > 0.1);
    }

    #[test]
    fn vmkdv_scalar_case_is_mkdv() {
        let g = LineGrid::new(15.0, 512).unwrap();
        let u: Vec<DVector<f64>> = g.xs().iter().map(|&x| DVector::from_element(1, 0.7 * sech(x))).collect();
        let r = vmkdv_rhs(&g, &u).unwrap();
        for (i, x) in g.xs().iter().enumerate().step_by(37) {
            let (s, t) = (sech(*x), x.tanh());
            let ux = -0.7 * s * t;
            let uxxx = -0.7 * s * t * (1.0 - 6.0 * s * s);
            let want = -(uxxx + 1.5 * 0.49 * s * s * ux);
            assert!((r[i][0] - want).abs() < 1e-5, "{} {}", r[i][0], want);
        }
    }

    #[test]
    fn odd_flows_keep_k_even_flows_leave_it() {
        let s = catalog(SpaceId::Sn { n: 3 }).unwrap();
        let g = LineGrid::new(15.0, 128).unwrap();
        let u0 = s.embed(g, &sample_components(&s, g, 2)).unwrap().with_class(DecayClass::Decaying);
        let d1 = odd_flow_invariance(&s, &u0, 1, 0.5, 0.01).unwrap();
        assert!(d1 < 1e-8, "{d1}");
        let d3 = odd_flow_invariance(&s, &u0, 3, 0.1, stable_dt(g.h, 3).unwrap()).unwrap();
        assert!(d3 < 1e-6, "{d3}");
        let d2 = odd_flow_invariance(&s, &u0, 2, 0.1, stable_dt(g.h, 2).unwrap()).unwrap();
        assert!(d2 > 1e-2, "{d2}");
    }

    #[test]
    fn great_circle_sphere_rhs() {
        let g = LineGrid::new(10.0, 400).unwrap();
        let gamma: Vec<DVector<f64>> = g.xs().iter().map(|&x| DVector::from_vec(vec![x.cos(), x.sin(), 0.0, 0.0])).collect();
        let r = sphere_curve_rhs(&g, &gamma).unwrap();
        for (i, x) in g.xs().iter().enumerate() {
            let want = DVector::from_vec(vec![x.sin(), -x.cos(), 0.0, 0.0]) * 0.5;
            assert!((&r[i] - want).norm() < 1e-6);
            assert!(r[i].dot(&gamma[i]).abs() < 1e-6);
        }
        let off: Vec<DVector<f64>> = gamma.iter().map(|v| v * 1.1).collect();
        assert!(sphere_curve_rhs(&g, &off).is_err());
    }

    #[test]
    fn su2_r3_identification() {
        let e = su2_basis();
        for k in 0..3 {
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            assert!((comm(&e[i], &e[j]) - &e[k]).norm() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let v = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let w = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let b = su2_to_r3(&comm(&r3_to_su2(&v), &r3_to_su2(&w)));
            assert!((b - v.cross(&w)).norm() < 1e-14);
            assert!((su2_to_r3(&r3_to_su2(&v)) - &v).norm() < 1e-15);
        }
        let a = su2_to_r3(&crate::fixtures::su2_a().m);
        assert!((a.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn schrodinger_flow_on_s2_is_hfm() {
        let g = LineGrid::default();
        let a = crate::fixtures::su2_a();
        let ctx = HierarchyContext::a_flow(&a, 2).unwrap();
        let u = crate::fixtures::su2_field(g, |x| C64::from_polar(0.8 * sech(x), 0.5 * x)).unwrap();
        let pair = undevelop(&ctx, &u).unwrap();
        let gamma: Vec<DVector<f64>> = pair.gamma.values().iter().map(su2_to_r3).collect();
        let norm_gap = gamma.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
        let gamma: Vec<DVector<f64>> = gamma.iter().map(|v| v / v.norm()).collect();
        assert!(norm_gap < 1e-7);
        let h = hfm_rhs(&g, &gamma).unwrap();
        let curve = Curve::new(Field::raw(g, a.tag, gamma.iter().map(r3_to_su2).collect()), &a).unwrap();
        let s = schrodinger_rhs(&curve).unwrap();
        let d = s.values.iter().zip(&h).map(|(m, v)| (su2_to_r3(m) - v).norm()).fold(0.0, f64::max);
        assert!(d < 1e-12, "{d}");
        let c: Vec<DVector<f64>> = vec![DVector::from_vec(vec![0.0, 0.0, 1.0]); g.n];
        assert!(hfm_rhs(&g, &c).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn sphere_curve_flow_matches_matrix_curve_flow() {
        let g = LineGrid::default();
        let s = catalog(SpaceId::Sn { n: 3 }).unwrap();
        let ctx = HierarchyContext::a_flow(&s.a, 3).unwrap();
        let u = s.embed(g, &sample_components(&s, g, 6)).unwrap().with_class(DecayClass::Decaying);
        let pair = undevelop(&ctx, &u).unwrap();
        let p = pair.gamma.values().iter().map(|m| s.k_part(m).norm()).fold(0.0, f64::max);
        assert!(p < 1e-10, "{p}");
        let gamma: Vec<DVector<f64>> = pair.gamma.values().iter().map(sphere_vector).collect();
        let lhs = sphere_curve_rhs(&g, &gamma).unwrap();
        let rhs = curve_flow_rhs(&ctx, &develop(&ctx, &pair.gamma).unwrap()).unwrap();
        let d = rhs.values.iter().zip(&lhs).map(|(m, v)| (sphere_vector(m) - v).norm()).fold(0.0, f64::max);
        assert!(d < 1e-4, "{d}");
        let _ = derivative(&u, 1).unwrap();
    }
}

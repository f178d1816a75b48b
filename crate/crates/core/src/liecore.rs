//! Matrix Lie algebra and group primitives for the compact families
//! u(n), su(n), so(n) and sp(n).
//!
//! Every algebra is stored as anti-Hermitian complex matrices. The inner
//! product is `<X,Y> = -Re tr(XY)` for all families.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LieError, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

/// Structural tolerance for algebra membership.
pub const TAU_ALG: f64 = 1e-10;
/// Unitarity tolerance for group elements.
pub const TAU_GRP: f64 = 1e-10;
/// Linear-solve tolerance.
pub const TAU_SOLVE: f64 = 1e-8;
/// Spectrum tolerance for orbit membership.
pub const TAU_ORBIT: f64 = 1e-7;
/// Relative singular-value cutoff separating ker ad(a) from its image.
pub const KERNEL_CUTOFF: f64 = 1e-9;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    U,
    Su,
    So,
    Sp,
}

/// Ambient algebra. For `Sp` the matrices are `2n x 2n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AlgebraTag {
    pub family: Family,
    pub n: usize,
}

impl AlgebraTag {
    pub fn new(family: Family, n: usize) -> Result<Self> {
        let min = match family {
            Family::U | Family::Sp => 1,
            Family::Su | Family::So => 2,
        };
        if n < min {
            return Err(LieError::Shape(format!("{family:?}({n}) needs n >= {min}")));
        }
        Ok(AlgebraTag { family, n })
    }

    pub fn u(n: usize) -> Self {
        Self::new(Family::U, n).expect("u(n) with n >= 1")
    }
    pub fn su(n: usize) -> Self {
        Self::new(Family::Su, n).expect("su(n) with n >= 2")
    }
    pub fn so(n: usize) -> Self {
        Self::new(Family::So, n).expect("so(n) with n >= 2")
    }
    pub fn sp(n: usize) -> Self {
        Self::new(Family::Sp, n).expect("sp(n) with n >= 1")
    }

    /// Matrix size.
    pub fn size(&self) -> usize {
        match self.family {
            Family::Sp => 2 * self.n,
            _ => self.n,
        }
    }

    /// Real dimension of the algebra.
    pub fn real_dim(&self) -> usize {
        let n = self.n;
        match self.family {
            Family::U => n * n,
            Family::Su => n * n - 1,
            Family::So => n * (n - 1) / 2,
            Family::Sp => n * (2 * n + 1),
        }
    }

    pub fn rank(&self) -> usize {
        let n = self.n;
        match self.family {
            Family::U | Family::Sp => n,
            Family::Su => n - 1,
            Family::So => n / 2,
        }
    }

    pub fn zero(&self) -> CMat {
        CMat::zeros(self.size(), self.size())
    }

    /// Orthonormal basis under the trace inner product.
    pub fn basis(&self) -> Vec<CMat> {
        let n = self.n;
        let mut cands = Vec::new();
        match self.family {
            Family::U | Family::Su | Family::So => {
                let m = self.size();
                for j in 0..m {
                    for k in (j + 1)..m {
                        let mut x = CMat::zeros(m, m);
                        x[(j, k)] = ONE;
                        x[(k, j)] = -ONE;
                        cands.push(x);
                        if self.family != Family::So {
                            let mut y = CMat::zeros(m, m);
                            y[(j, k)] = I;
                            y[(k, j)] = I;
                            cands.push(y);
                        }
                    }
                }
                match self.family {
                    Family::U => {
                        for j in 0..m {
                            let mut d = CMat::zeros(m, m);
                            d[(j, j)] = I;
                            cands.push(d);
                        }
                    }
                    Family::Su => {
                        for j in 0..m - 1 {
                            let mut d = CMat::zeros(m, m);
                            d[(j, j)] = I;
                            d[(j + 1, j + 1)] = -I;
                            cands.push(d);
                        }
                    }
                    _ => {}
                }
            }
            Family::Sp => {
                for a in AlgebraTag::u(n).basis() {
                    let mut x = CMat::zeros(2 * n, 2 * n);
                    x.view_mut((0, 0), (n, n)).copy_from(&a);
                    x.view_mut((n, n), (n, n)).copy_from(&a.map(|z| z.conj()));
                    cands.push(x);
                }
                for j in 0..n {
                    for k in j..n {
                        for s in [ONE, I] {
                            let mut b = CMat::zeros(n, n);
                            b[(j, k)] = s;
                            b[(k, j)] = s;
                            let mut x = CMat::zeros(2 * n, 2 * n);
                            x.view_mut((0, n), (n, n))
                                .copy_from(&(-b.map(|z| z.conj())));
                            x.view_mut((n, 0), (n, n)).copy_from(&b);
                            cands.push(x);
                        }
                    }
                }
            }
        }
        gram_schmidt(cands)
    }

    /// Frobenius-nearest element of the algebra.
    pub fn project(&self, m: &CMat) -> CMat {
        let mut x = (m - m.adjoint()).scale(0.5);
        match self.family {
            Family::U => {}
            Family::Su => {
                let tr = x.trace() / C64::from(self.size() as f64);
                for i in 0..self.size() {
                    x[(i, i)] -= tr;
                }
            }
            Family::So => x.apply(|z| *z = C64::from(z.re)),
            Family::Sp => {
                let j = symplectic_j(self.n);
                let t = &j * x.transpose() * &j;
                x = (x + t).scale(0.5);
            }
        }
        x
    }

    /// Distance of `m` from the algebra, measured by the violated constraints.
    pub fn membership_defect(&self, m: &CMat) -> f64 {
        if m.nrows() != self.size() || m.ncols() != self.size() {
            return f64::INFINITY;
        }
        let mut d = (m + m.adjoint()).norm();
        match self.family {
            Family::U => {}
            Family::Su => d = d.max(m.trace().norm()),
            Family::So => d = d.max(m.map(|z| z.im).norm()),
            Family::Sp => {
                let j = symplectic_j(self.n);
                d = d.max((m.transpose() * &j + &j * m).norm());
            }
        }
        d
    }

    /// Random element with standard normal coordinates in the orthonormal basis.
    pub fn random<R: Rng>(&self, rng: &mut R, scale: f64) -> CMat {
        let mut x = self.zero();
        for e in self.basis() {
            let c: f64 = rng.sample(StandardNormal);
            x += e.scale(c * scale);
        }
        x
    }
}

/// `J = [[0, I], [-I, 0]]` of size `2n`.
pub fn symplectic_j(n: usize) -> CMat {
    let mut j = CMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = ONE;
        j[(n + i, i)] = -ONE;
    }
    j
}

fn gram_schmidt(cands: Vec<CMat>) -> Vec<CMat> {
    let mut out: Vec<CMat> = Vec::new();
    for mut c in cands {
        for _ in 0..2 {
            for e in &out {
                let p = inner_m(&c, e);
                c -= e.scale(p);
            }
        }
        let nrm = inner_m(&c, &c).max(0.0).sqrt();
        if nrm > 1e-12 {
            out.push(c.unscale(nrm));
        }
    }
    out
}

/// `XY - YX` on raw matrices.
pub fn comm(x: &CMat, y: &CMat) -> CMat {
    x * y - y * x
}

/// `-Re tr(XY)` on raw matrices, without forming the product.
pub fn inner_m(x: &CMat, y: &CMat) -> f64 {
    let n = x.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = x[(i, j)] * y[(j, i)];
            s += p.re;
        }
    }
    -s
}

/// Eigenvalues of the Hermitian matrix `i*m`, ascending. `m` must be anti-Hermitian.
pub fn spectrum(m: &CMat) -> DVector<f64> {
    let h = m.map(|z| z * I);
    let h = (&h + h.adjoint()).scale(0.5);
    let mut ev = SymmetricEigen::new(h).eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Max eigenvalue discrepancy between two anti-Hermitian matrices.
pub fn spectrum_distance(x: &CMat, y: &CMat) -> f64 {
    let sx = spectrum(x);
    let sy = spectrum(y);
    (sx - sy).amax()
}

/// Unitary polar factor `W V*` from `m = W S V*`.
pub fn polar_unitary(m: &CMat) -> Result<CMat> {
    let svd = m.clone().svd(true, true);
    let smin = svd.singular_values.min();
    if !(smin > 1e-8) {
        return Err(LieError::numerical(
            "polar_unitary",
            format!("near-singular factor, smallest singular value {smin:.3e}"),
        ));
    }
    let w = svd.u.expect("requested u");
    let vt = svd.v_t.expect("requested v_t");
    Ok(w * vt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraElement {
    pub tag: AlgebraTag,
    pub m: CMat,
}

impl AlgebraElement {
    /// Validates membership to `TAU_ALG` relative to the size of `m`.
    pub fn new(tag: AlgebraTag, m: CMat) -> Result<Self> {
        let d = tag.membership_defect(&m);
        if d > TAU_ALG * m.norm().max(1.0) {
            return Err(LieError::domain(
                "AlgebraElement::new",
                format!("matrix is not in {:?}({})", tag.family, tag.n),
                d,
            ));
        }
        Ok(AlgebraElement { tag, m })
    }

    pub fn zero(tag: AlgebraTag) -> Self {
        AlgebraElement { tag, m: tag.zero() }
    }

    /// Projects an arbitrary matrix onto the algebra.
    pub fn projected(tag: AlgebraTag, m: &CMat) -> Self {
        AlgebraElement {
            tag,
            m: tag.project(m),
        }
    }

    pub fn norm(&self) -> f64 {
        self.m.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        AlgebraElement {
            tag: self.tag,
            m: self.m.scale(s),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        same_tag(self.tag, other.tag)?;
        Ok(AlgebraElement {
            tag: self.tag,
            m: &self.m + &other.m,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        same_tag(self.tag, other.tag)?;
        Ok(AlgebraElement {
            tag: self.tag,
            m: &self.m - &other.m,
        })
    }
}

fn same_tag(a: AlgebraTag, b: AlgebraTag) -> Result<()> {
    if a != b {
        return Err(LieError::TagMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

pub fn bracket(x: &AlgebraElement, y: &AlgebraElement) -> Result<AlgebraElement> {
    same_tag(x.tag, y.tag)?;
    Ok(AlgebraElement {
        tag: x.tag,
        m: comm(&x.m, &y.m),
    })
}

pub fn inner(x: &AlgebraElement, y: &AlgebraElement) -> Result<f64> {
    same_tag(x.tag, y.tag)?;
    Ok(inner_m(&x.m, &y.m))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    pub tag: AlgebraTag,
    pub m: CMat,
}

impl GroupElement {
    pub fn identity(tag: AlgebraTag) -> Self {
        GroupElement {
            tag,
            m: CMat::identity(tag.size(), tag.size()),
        }
    }

    /// Validates the group constraints to `TAU_GRP`.
    pub fn new(tag: AlgebraTag, m: CMat) -> Result<Self> {
        let d = group_defect(tag, &m);
        if d > TAU_GRP {
            return Err(LieError::domain(
                "GroupElement::new",
                format!("matrix is not in the group of {:?}({})", tag.family, tag.n),
                d,
            ));
        }
        Ok(GroupElement { tag, m })
    }

    pub fn inverse(&self) -> Self {
        GroupElement {
            tag: self.tag,
            m: self.m.adjoint(),
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        same_tag(self.tag, other.tag)?;
        Ok(GroupElement {
            tag: self.tag,
            m: &self.m * &other.m,
        })
    }
}

/// Violation of unitarity plus the family constraint.
pub fn group_defect(tag: AlgebraTag, m: &CMat) -> f64 {
    let k = tag.size();
    if m.nrows() != k || m.ncols() != k {
        return f64::INFINITY;
    }
    let mut d = (m.adjoint() * m - CMat::identity(k, k)).norm();
    match tag.family {
        Family::U => {}
        Family::Su => d = d.max((m.determinant() - ONE).norm()),
        Family::So => {
            d = d.max(m.map(|z| z.im).norm());
            d = d.max((m.determinant() - ONE).norm());
        }
        Family::Sp => {
            let j = symplectic_j(tag.n);
            d = d.max((m.transpose() * &j * m - &j).norm());
        }
    }
    d
}

/// Kernel/image splitting of `ad(a)`.
#[derive(Clone, Debug)]
pub struct CentralizerData {
    pub a: AlgebraElement,
    /// Orthonormal basis of the whole algebra.
    pub basis: Vec<CMat>,
    /// Orthonormal basis of the centralizer `ker ad(a)`.
    pub basis_t: Vec<CMat>,
    /// Coordinates map `v -> w` with `[w, a] = v` on the image.
    pinv: DMatrix<f64>,
}

impl CentralizerData {
    pub fn tag(&self) -> AlgebraTag {
        self.a.tag
    }

    pub fn kernel_dim(&self) -> usize {
        self.basis_t.len()
    }

    /// Orthogonal projection onto the centralizer.
    pub fn pi0_m(&self, x: &CMat) -> CMat {
        let mut out = CMat::zeros(x.nrows(), x.ncols());
        for t in &self.basis_t {
            let c = inner_m(x, t);
            if c != 0.0 {
                out += t.scale(c);
            }
        }
        out
    }

    /// Orthogonal projection onto the image of `ad(a)`.
    pub fn pi1_m(&self, x: &CMat) -> CMat {
        x - self.pi0_m(x)
    }

    pub fn pi0(&self, x: &AlgebraElement) -> AlgebraElement {
        AlgebraElement {
            tag: x.tag,
            m: self.pi0_m(&x.m),
        }
    }

    pub fn pi1(&self, x: &AlgebraElement) -> AlgebraElement {
        AlgebraElement {
            tag: x.tag,
            m: self.pi1_m(&x.m),
        }
    }

    /// Solves `[w, a] = pi1(v)` for `w` in the image, ignoring any centralizer part of `v`.
    pub fn ad_inv_m(&self, v: &CMat) -> CMat {
        let d = self.basis.len();
        let c = DVector::from_iterator(d, self.basis.iter().map(|e| inner_m(v, e)));
        let w = &self.pinv * c;
        let mut out = CMat::zeros(v.nrows(), v.ncols());
        for (k, e) in self.basis.iter().enumerate() {
            if w[k] != 0.0 {
                out += e.scale(w[k]);
            }
        }
        out
    }

    /// `[x, a]`.
    pub fn ad_m(&self, x: &CMat) -> CMat {
        comm(x, &self.a.m)
    }
}

pub fn build_centralizer(a: &AlgebraElement) -> CentralizerData {
    let basis = a.tag.basis();
    let d = basis.len();
    let mut op = DMatrix::<f64>::zeros(d, d);
    for (l, el) in basis.iter().enumerate() {
        let img = comm(el, &a.m);
        for (k, ek) in basis.iter().enumerate() {
            op[(k, l)] = inner_m(ek, &img);
        }
    }
    let svd = op.svd(true, true);
    let u = svd.u.expect("requested u");
    let vt = svd.v_t.expect("requested v_t");
    let s = svd.singular_values;
    let smax = s.max();
    let cutoff = KERNEL_CUTOFF * smax;
    let mut pinv = DMatrix::<f64>::zeros(d, d);
    let mut basis_t = Vec::new();
    for i in 0..d {
        if smax > 0.0 && s[i] > cutoff {
            let vi = vt.row(i).transpose();
            let ui = u.column(i);
            pinv += (vi * ui.transpose()).unscale(s[i]);
        } else {
            let mut t = a.tag.zero();
            for (l, el) in basis.iter().enumerate() {
                t += el.scale(vt[(i, l)]);
            }
            basis_t.push(t);
        }
    }
    CentralizerData {
        a: a.clone(),
        basis,
        basis_t,
        pinv,
    }
}

pub fn is_regular(a: &AlgebraElement) -> bool {
    build_centralizer(a).kernel_dim() == a.tag.rank()
}

/// The unique `w` orthogonal to the centralizer with `[w, a] = v`.
pub fn ad_a_inverse(cd: &CentralizerData, v: &AlgebraElement) -> Result<AlgebraElement> {
    same_tag(cd.tag(), v.tag)?;
    let r = cd.pi0_m(&v.m).norm();
    if r > TAU_ALG * v.norm().max(1.0) {
        return Err(LieError::domain(
            "ad_a_inverse",
            "argument has a centralizer component",
            r,
        ));
    }
    Ok(AlgebraElement {
        tag: v.tag,
        m: cd.ad_inv_m(&v.m),
    })
}

/// `g X g^{-1}`.
pub fn conjugate(g: &GroupElement, x: &AlgebraElement) -> Result<AlgebraElement> {
    same_tag(g.tag, x.tag)?;
    Ok(AlgebraElement {
        tag: x.tag,
        m: &g.m * &x.m * g.m.adjoint(),
    })
}

/// Matrix exponential of an algebra element.
pub fn exp_to_group(x: &AlgebraElement) -> GroupElement {
    GroupElement {
        tag: x.tag,
        m: exp_m(x.tag, &x.m),
    }
}

/// Matrix exponential with the real structure of `so` restored.
pub fn exp_m(tag: AlgebraTag, x: &CMat) -> CMat {
    let mut e = x.clone().exp();
    if tag.family == Family::So {
        e.apply(|z| *z = C64::from(z.re));
    }
    e
}

/// Splits `x` at the orbit point `y` into (tangent, normal) parts.
pub fn orbit_projections(y: &AlgebraElement, x: &AlgebraElement) -> Result<(AlgebraElement, AlgebraElement)> {
    same_tag(y.tag, x.tag)?;
    let cd = build_centralizer(y);
    let normal = cd.pi0(x);
    let tangent = x.sub(&normal)?;
    Ok((tangent, normal))
}

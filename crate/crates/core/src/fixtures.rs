//! Reference data shared by tests, the acceptance suite and the CLI.

use crate::error::Result;
use crate::gridcalc::{DecayClass, Field, LineGrid};
use crate::liecore::{AlgebraElement, AlgebraTag, CMat, C64, I, ONE, ZERO};

/// `a = diag(i, -i)/2` in su(2).
pub fn su2_a() -> AlgebraElement {
    let m = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![I * 0.5, -I * 0.5]));
    AlgebraElement { tag: AlgebraTag::su(2), m }
}

/// `q -> [[0, q], [-conj q, 0]]`, the perpendicular part of su(2) for [`su2_a`].
pub fn su2_from_q(q: C64) -> CMat {
    CMat::from_row_slice(2, 2, &[ZERO, q, -q.conj(), ZERO])
}

pub fn su2_q(m: &CMat) -> C64 {
    m[(0, 1)]
}

/// Decaying su(2) field from a complex profile.
pub fn su2_field(grid: LineGrid, q: impl Fn(f64) -> C64) -> Result<Field> {
    Field::from_fn(grid, AlgebraTag::su(2), DecayClass::Decaying, |x| su2_from_q(q(x)))
}

pub fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

/// The round sphere `SO(n+1)/SO(n)`: `a = e_{21} - e_{12}`, and the bases
/// `k_i = e_{i2} - e_{2i}`, `p_i = e_{i1} - e_{1i}` for `3 <= i <= n+1`
/// (stored zero-based).
#[derive(Clone, Debug)]
pub struct Sphere {
    pub n: usize,
    pub tag: AlgebraTag,
    pub a: AlgebraElement,
    pub k: Vec<CMat>,
    pub p: Vec<CMat>,
}

fn unit_skew(size: usize, r: usize, c: usize) -> CMat {
    let mut m = CMat::zeros(size, size);
    m[(r, c)] = ONE;
    m[(c, r)] = -ONE;
    m
}

impl Sphere {
    pub fn new(n: usize) -> Self {
        let tag = AlgebraTag::so(n + 1);
        let size = n + 1;
        let a = AlgebraElement {
            tag,
            m: unit_skew(size, 1, 0),
        };
        let k = (2..size).map(|r| unit_skew(size, r, 1)).collect();
        let p = (2..size).map(|r| unit_skew(size, r, 0)).collect();
        Sphere { n, tag, a, k, p }
    }

    /// Number of coefficient functions `u_i`.
    pub fn dim(&self) -> usize {
        self.n - 1
    }

    /// `sum c_i k_i`.
    pub fn k_combination(&self, c: &[f64]) -> CMat {
        combine(&self.k, c)
    }

    /// `sum c_i p_i`.
    pub fn p_combination(&self, c: &[f64]) -> CMat {
        combine(&self.p, c)
    }

    /// `u = sum u_i(x) k_i` from coefficient profiles.
    pub fn field(&self, grid: LineGrid, u: impl Fn(f64) -> Vec<f64>) -> Result<Field> {
        Field::from_fn(grid, self.tag, DecayClass::Decaying, |x| self.k_combination(&u(x)))
    }

    /// Coefficients on `k_i` of a matrix.
    pub fn k_coefficients(&self, m: &CMat) -> Vec<f64> {
        (2..=self.n).map(|r| m[(r, 1)].re).collect()
    }

    /// Coefficients on `p_i` of a matrix.
    pub fn p_coefficients(&self, m: &CMat) -> Vec<f64> {
        (2..=self.n).map(|r| m[(r, 0)].re).collect()
    }
}

fn combine(basis: &[CMat], c: &[f64]) -> CMat {
    let mut out = CMat::zeros(basis[0].nrows(), basis[0].ncols());
    for (b, ci) in basis.iter().zip(c) {
        out += b.scale(*ci);
    }
    out
}

/// `sech` profiles with distinct amplitudes, `u_i = c_i sech(x)`.
pub fn sphere_sech_coefficients(dim: usize) -> Vec<f64> {
    (0..dim).map(|i| 0.6 - 0.2 * i as f64).collect()
}

/// Regular base point `i diag(1, 0.3, -0.8)` of u(3).
pub fn u3_regular_a() -> AlgebraElement {
    let d = nalgebra::DVector::from_vec(vec![I, I * 0.3, I * -0.8]);
    AlgebraElement {
        tag: AlgebraTag::u(3),
        m: CMat::from_diagonal(&d),
    }
}

/// Off-diagonal u(3) potential built from shifted, modulated sech profiles.
pub fn u3_potential(grid: LineGrid, amp: f64) -> Result<Field> {
    Field::from_fn(grid, AlgebraTag::u(3), DecayClass::Decaying, |x| {
        let q12 = C64::from_polar(amp * 0.5 * sech(x), 0.3 * x);
        let q13 = C64::from_polar(amp * 0.3 * sech(x - 1.0), -0.2 * x);
        let q23 = C64::from_polar(amp * 0.4 * sech(x + 0.5), 0.1 * x);
        let mut m = CMat::zeros(3, 3);
        for (r, c, q) in [(0, 1, q12), (0, 2, q13), (1, 2, q23)] {
            m[(r, c)] = q;
            m[(c, r)] = -q.conj();
        }
        m
    })
}

/// Smooth compactly concentrated weight `exp(-(x - c)^2 / w^2)`.
pub fn bump(x: f64, c: f64, w: f64) -> f64 {
    (-(x - c) * (x - c) / (w * w)).exp()
}

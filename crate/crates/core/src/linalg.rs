//! Small dense complex linear-algebra helpers shared by the solver and models.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Draws from the circular complex normal law CN(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec {
    CVec::from_fn(n, |_, _| complex_normal(rng))
}

pub fn complex_normal_mat<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    // column-major fill keeps the draw order stable across nalgebra versions
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = complex_normal(rng);
        }
    }
    m
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    m.clone().singular_values().iter().copied().collect()
}

pub fn spectral_norm(m: &CMat) -> f64 {
    singular_values(m).into_iter().fold(0.0, f64::max)
}

/// Largest componentwise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest componentwise deviation from (plain) symmetry.
pub fn symmetric_defect(m: &CMat) -> f64 {
    (m - m.transpose()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Inverse of a Hermitian positive-definite matrix, or `None` when its
/// eigenvalue spread exceeds `1 / rcond_floor` or it is not positive.
pub fn hermitian_pd_inverse(m: &CMat, rcond_floor: f64) -> Option<CMat> {
    let ev = hermitian_eigenvalues(m);
    let (lo, hi) = (*ev.first()?, *ev.last()?);
    if !(hi > 0.0) || lo <= rcond_floor * hi {
        return None;
    }
    let inv = m.clone().cholesky()?.inverse();
    Some((&inv + inv.adjoint()) * C64::new(0.5, 0.0))
}

/// Wraps a real scalar as a complex one.
#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

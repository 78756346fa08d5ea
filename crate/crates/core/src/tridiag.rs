//! Unit-diagonal Hermitian tridiagonal covariance
//!
//! ```text
//!     [ 1     c_1                    ]
//!     [ c_1^* 1     c_2              ]
//! S = [       c_2^* .     .          ]
//!     [             .     .  c_{K-1} ]
//!     [                c_{K-1}^*  1  ]
//! ```
//!
//! with off-diagonals clipped to `|c_k| <= 0.4`, which keeps every
//! eigenvalue above `0.2`. Entries of `S^{-1}` follow from the forward and
//! backward continuants
//!
//! ```text
//! theta_i = theta_{i-1} - |c_{i-1}|^2 theta_{i-2},  theta_0 = theta_1 = 1
//! xi_i    = xi_{i+1}    - |c_i|^2     xi_{i+2},     xi_{K+1} = xi_K = 1
//! ```
//!
//! which are the leading and trailing principal minors. They are kept as
//! logarithms of consecutive ratios so that `theta_K` never underflows.

use crate::error::{Error, Result};
use crate::linalg::{re, CMat, CVec, C64, ONE, ZERO};
use crate::score::CellDensity;

/// Largest admissible off-diagonal magnitude.
pub const CLIP_THRESHOLD: f64 = 0.4;

/// Default half-bandwidth for the truncated inverse.
pub const DEFAULT_K_MAX: usize = 10;

/// Clips each entry to magnitude `0.4`, keeping its phase.
pub fn clip_offdiag(raw: &[C64]) -> Vec<C64> {
    raw.iter()
        .map(|&c| {
            let m = c.norm();
            if m <= CLIP_THRESHOLD {
                c
            } else {
                c * (CLIP_THRESHOLD / m)
            }
        })
        .collect()
}

/// Eigenvalues `1 + 2|c| cos(k pi / (K + 1))`, `k = 1..K`, of the
/// tridiagonal matrix with constant off-diagonal magnitude `|c|`.
pub fn eig_constant_c(dim: usize, c: f64) -> Vec<f64> {
    let step = std::f64::consts::PI / (dim as f64 + 1.0);
    (1..=dim).map(|k| 1.0 + 2.0 * c.abs() * (k as f64 * step).cos()).collect()
}

#[derive(Debug, Clone)]
pub struct TridiagCov {
    c: Vec<C64>,
    // log(theta_i), i = 0..=K
    log_theta: Vec<f64>,
    // log(xi_i), i = 1..=K+1, stored at index i (index 0 unused)
    log_xi: Vec<f64>,
}

impl TridiagCov {
    /// Builds from already-clipped off-diagonals `c_1..c_{K-1}`.
    pub fn new(dim: usize, c: Vec<C64>) -> Result<Self> {
        if dim == 0 || c.len() + 1 != dim {
            return Err(Error::Shape(format!("need {} off-diagonal entries for K = {dim}", dim.saturating_sub(1))));
        }
        if let Some(bad) = c.iter().find(|z| z.norm() > CLIP_THRESHOLD + 1e-15) {
            return Err(Error::Config(format!("off-diagonal magnitude {} exceeds {CLIP_THRESHOLD}", bad.norm())));
        }
        let mag2: Vec<f64> = c.iter().map(|z| z.norm_sqr()).collect();

        let mut log_theta = vec![0.0; dim + 1];
        let mut ratio = 1.0; // theta_1 / theta_0
        for i in 2..=dim {
            ratio = 1.0 - mag2[i - 2] / ratio;
            log_theta[i] = log_theta[i - 1] + ratio.ln();
        }

        let mut log_xi = vec![0.0; dim + 2];
        let mut ratio = 1.0; // xi_K / xi_{K+1}
        for i in (1..dim).rev() {
            ratio = 1.0 - mag2[i - 1] / ratio;
            log_xi[i] = log_xi[i + 1] + ratio.ln();
        }
        Ok(Self { c, log_theta, log_xi })
    }

    /// Clips raw estimates `c_hat_k = E[s_k s_{k+1}^*]` and builds the matrix.
    pub fn from_estimates(dim: usize, raw: &[C64]) -> Result<Self> {
        Self::new(dim, clip_offdiag(raw))
    }

    /// Estimates the off-diagonals from unit-variance samples (`K x N_s`).
    pub fn from_samples(s: &CMat) -> Result<Self> {
        let (dim, n) = s.shape();
        let raw: Vec<C64> = (0..dim.saturating_sub(1))
            .map(|k| (0..n).map(|j| s[(k, j)] * s[(k + 1, j)].conj()).sum::<C64>() / re(n as f64))
            .collect();
        Self::from_estimates(dim, &raw)
    }

    pub fn dim(&self) -> usize {
        self.c.len() + 1
    }

    pub fn offdiag(&self) -> &[C64] {
        &self.c
    }

    /// Forward continuant `theta_i`, `0 <= i <= K`.
    pub fn theta(&self, i: usize) -> f64 {
        self.log_theta[i].exp()
    }

    /// Backward continuant `xi_i`, `1 <= i <= K + 1`.
    pub fn xi(&self, i: usize) -> f64 {
        assert!(i >= 1);
        self.log_xi[i].exp()
    }

    /// `log(theta_{i-1} xi_{j+1} / theta_K)` for 1-based `i <= j`.
    fn log_scale(&self, i: usize, j: usize) -> f64 {
        self.log_theta[i - 1] + self.log_xi[j + 1] - self.log_theta[self.dim()]
    }

    /// Entry `(i, j)` (1-based) of the inverse.
    pub fn inverse_entry(&self, i: usize, j: usize) -> C64 {
        let k = self.dim();
        assert!((1..=k).contains(&i) && (1..=k).contains(&j), "index out of range");
        if i == j {
            return re(self.log_scale(i, i).exp());
        }
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        // (-1)^(i+j) c_lo ... c_{hi-1}
        let mut prod = ONE;
        for m in lo..hi {
            prod *= -self.c[m - 1];
        }
        let v = prod * self.log_scale(lo, hi).exp();
        if i < j {
            v
        } else {
            v.conj()
        }
    }

    /// Diagonal of the inverse; real and positive.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        (1..=self.dim()).map(|i| self.log_scale(i, i).exp()).collect()
    }

    /// Inverse entries with `|i - j| <= k_max`, others dropped.
    pub fn banded_inverse(&self, k_max: usize) -> BandedMatrix {
        let dim = self.dim();
        let k_max = k_max.min(dim - 1);
        let mut upper = vec![ZERO; dim * (k_max + 1)];
        for i in 1..=dim {
            let mut prod = ONE;
            upper[(i - 1) * (k_max + 1)] = re(self.log_scale(i, i).exp());
            for off in 1..=k_max {
                let j = i + off;
                if j > dim {
                    break;
                }
                prod *= -self.c[j - 2];
                upper[(i - 1) * (k_max + 1) + off] = prod * self.log_scale(i, j).exp();
            }
        }
        BandedMatrix { dim, k_max, upper }
    }

    /// Explicit dense matrix.
    pub fn to_dense(&self) -> CMat {
        let dim = self.dim();
        let mut m = CMat::identity(dim, dim);
        for (k, &c) in self.c.iter().enumerate() {
            m[(k, k + 1)] = c;
            m[(k + 1, k)] = c.conj();
        }
        m
    }

    /// Matrix-vector product `S v`.
    pub fn mul_vec(&self, v: &CVec) -> CVec {
        let dim = self.dim();
        CVec::from_fn(dim, |i, _| {
            let mut acc = v[i];
            if i + 1 < dim {
                acc += self.c[i] * v[i + 1];
            }
            if i > 0 {
                acc += self.c[i - 1].conj() * v[i - 1];
            }
            acc
        })
    }

    /// Solves `S x = b` by tridiagonal elimination.
    pub fn solve(&self, b: &CVec) -> CVec {
        let dim = self.dim();
        assert_eq!(b.len(), dim);
        let mut sup = vec![ZERO; dim];
        let mut rhs = vec![ZERO; dim];
        rhs[0] = b[0];
        if dim > 1 {
            sup[0] = self.c[0];
        }
        for i in 1..dim {
            let sub = self.c[i - 1].conj();
            let pivot = ONE - sub * sup[i - 1];
            if i + 1 < dim {
                sup[i] = self.c[i] / pivot;
            }
            rhs[i] = (b[i] - sub * rhs[i - 1]) / pivot;
        }
        let mut x = CVec::zeros(dim);
        x[dim - 1] = rhs[dim - 1];
        for i in (0..dim - 1).rev() {
            x[i] = rhs[i] - sup[i] * x[i + 1];
        }
        x
    }
}

/// Hermitian band matrix storing the diagonal and `k_max` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    dim: usize,
    k_max: usize,
    // row-major: entry (i, i + off) at i * (k_max + 1) + off
    upper: Vec<C64>,
}

impl BandedMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_bandwidth(&self) -> usize {
        self.k_max
    }

    /// Entry `(i, j)`, 0-based.
    pub fn get(&self, i: usize, j: usize) -> C64 {
        let (lo, hi, conj) = if i <= j { (i, j, false) } else { (j, i, true) };
        if hi - lo > self.k_max {
            return ZERO;
        }
        let v = self.upper[lo * (self.k_max + 1) + hi - lo];
        if conj {
            v.conj()
        } else {
            v
        }
    }

    pub fn mul_vec(&self, v: &CVec) -> CVec {
        let n = self.dim;
        let mut out = CVec::zeros(n);
        for i in 0..n {
            let row = &self.upper[i * (self.k_max + 1)..(i + 1) * (self.k_max + 1)];
            out[i] += row[0] * v[i];
            for off in 1..=self.k_max {
                let j = i + off;
                if j >= n {
                    break;
                }
                out[i] += row[off] * v[j];
                out[j] += row[off].conj() * v[i];
            }
        }
        out
    }

    pub fn to_dense(&self) -> CMat {
        CMat::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }
}

/// How the score multiplies by the inverse covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TriProduct {
    #[default]
    Exact,
    Banded(usize),
}

/// Circular Gaussian model with unit-diagonal tridiagonal covariance:
/// `phi(s) = (S^{-1} s)^*`.
#[derive(Debug, Clone)]
pub struct TridiagModel {
    cov: TridiagCov,
    product: TriProduct,
    banded: Option<BandedMatrix>,
    inv_diag: Vec<f64>,
}

impl TridiagModel {
    pub fn new(cov: TridiagCov, product: TriProduct) -> Self {
        let banded = match product {
            TriProduct::Exact => None,
            TriProduct::Banded(k_max) => Some(cov.banded_inverse(k_max)),
        };
        let inv_diag = cov.inverse_diagonal();
        Self { cov, product, banded, inv_diag }
    }

    /// Fits to normalized samples (`K x N`).
    pub fn from_samples(x: &CMat, product: TriProduct) -> Result<Self> {
        Ok(Self::new(TridiagCov::from_samples(x)?, product))
    }

    pub fn cov(&self) -> &TridiagCov {
        &self.cov
    }

    pub fn product(&self) -> TriProduct {
        self.product
    }

    fn apply_inverse(&self, v: &CVec) -> CVec {
        match &self.banded {
            None => self.cov.solve(v),
            Some(b) => b.mul_vec(v),
        }
    }
}

impl CellDensity for TridiagModel {
    fn dim(&self) -> usize {
        self.cov.dim()
    }

    fn score(&self, x: &CMat) -> CMat {
        let mut out = CMat::zeros(x.nrows(), x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            let y = self.apply_inverse(&col.into_owned());
            out.set_column(j, &y.conjugate());
        }
        out
    }

    fn score_derivatives(&self, x: &CMat) -> (CMat, CMat) {
        let (r, c) = x.shape();
        (CMat::from_fn(r, c, |k, _| re(self.inv_diag[k])), CMat::zeros(r, c))
    }

    fn log_density(&self, x: &CMat) -> Vec<f64> {
        x.column_iter()
            .map(|col| {
                let v = col.into_owned();
                -v.dotc(&self.cov.solve(&v)).re
            })
            .collect()
    }

    fn analytic_stats(&self) -> Option<(Vec<C64>, Vec<C64>)> {
        Some((vec![ONE; self.dim()], self.inv_diag.iter().map(|&v| re(v)).collect()))
    }
}

//! Source models: score functions of the normalized SOI and the per-cell
//! statistics `nu` and `rho` they induce.
//!
//! A [`SourceModel`] is fitted to the SOI estimates of one `(t, l)` cell
//! (all `K` components at once) and yields a [`CellDensity`] that acts on the
//! normalized samples `s_k / sigma_k`.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_pd_inverse, re, CMat, CVec, C64, ZERO};
use crate::tridiag::{TridiagModel, TriProduct};

/// Smallest admissible `|nu|`.
pub const NU_FLOOR: f64 = 1e-8;

/// Largest admissible scalar circularity coefficient magnitude.
pub const DELTA_CLIP: f64 = 0.99;

/// Relative factor of the default diagonal loading, `mu = 1e-3 tr(Sigma) / K`.
pub const DEFAULT_MU_FACTOR: f64 = 1e-3;

const RCOND_FLOOR: f64 = 1e-13;

/// A model density fitted to one cell, acting on normalized samples
/// (`K x N` matrices, one column per sample).
pub trait CellDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// Score `phi_k = -d log f / d s_k` at each sample.
    fn score(&self, x: &CMat) -> CMat;

    /// Diagonal Wirtinger derivatives `(d phi_k / d s_k^*, d phi_k / d s_k)`.
    fn score_derivatives(&self, x: &CMat) -> (CMat, CMat);

    /// `log f` at each sample, up to an additive constant.
    fn log_density(&self, x: &CMat) -> Vec<f64>;

    /// Closed-form `(nu, rho)`, when the model has them.
    fn analytic_stats(&self) -> Option<(Vec<C64>, Vec<C64>)> {
        None
    }
}

/// Score values and normalizing statistics of one cell.
#[derive(Debug, Clone)]
pub struct CellScores {
    pub phi: CMat,
    pub nu: Vec<C64>,
    pub rho: Vec<C64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceModel {
    Rati,
    /// Non-circular Gaussian; the scalar path is used when `K = 1`.
    Gauss { mu: Option<f64> },
    GaussCirc { mu: Option<f64> },
    GaussTri { product: TriProduct },
}

impl SourceModel {
    pub const NAMES: [&'static str; 4] = ["rati", "gauss", "gauss-circ", "gausstri"];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "rati" => Ok(Self::Rati),
            "gauss" => Ok(Self::Gauss { mu: None }),
            "gauss-circ" => Ok(Self::GaussCirc { mu: None }),
            "gausstri" => Ok(Self::GaussTri { product: TriProduct::Exact }),
            other => Err(Error::Config(format!("unknown source model `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Rati => "rati",
            Self::Gauss { .. } => "gauss",
            Self::GaussCirc { .. } => "gauss-circ",
            Self::GaussTri { .. } => "gausstri",
        }
    }

    /// Fits the model to the SOI estimates `soi` (`K x N_s`) of one cell with
    /// sample variances `sigma2`.
    pub fn fit(&self, soi: &CMat, sigma2: &[f64]) -> Result<Box<dyn CellDensity>> {
        check_cell(soi, sigma2)?;
        let dim = soi.nrows();
        Ok(match *self {
            Self::Rati => Box::new(Rati { dim }),
            Self::Gauss { .. } if dim == 1 => {
                let x = normalize(soi, sigma2);
                let n = x.ncols() as f64;
                let delta = x.iter().map(|z| z * z).sum::<C64>() / n;
                Box::new(ScalarNoncirc::new(clip_delta(delta))?)
            }
            Self::Gauss { mu } => Box::new(GaussianModelState::build(soi, sigma2, mu, true)?),
            Self::GaussCirc { mu } => Box::new(GaussianModelState::build(soi, sigma2, mu, false)?),
            Self::GaussTri { product } => {
                Box::new(TridiagModel::from_samples(&normalize(soi, sigma2), product)?)
            }
        })
    }

    /// Fits the model and evaluates scores and statistics on the cell.
    pub fn evaluate(&self, soi: &CMat, sigma2: &[f64]) -> Result<CellScores> {
        let density = self.fit(soi, sigma2)?;
        cell_scores(density.as_ref(), &normalize(soi, sigma2))
    }
}

fn check_cell(soi: &CMat, sigma2: &[f64]) -> Result<()> {
    if soi.nrows() == 0 || soi.ncols() == 0 || soi.nrows() != sigma2.len() {
        return Err(Error::Shape(format!(
            "cell of {}x{} samples with {} variances",
            soi.nrows(),
            soi.ncols(),
            sigma2.len()
        )));
    }
    if let Some(&bad) = sigma2.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateDirection(bad));
    }
    Ok(())
}

/// Divides row `k` by `sqrt(sigma2[k])`.
pub fn normalize(soi: &CMat, sigma2: &[f64]) -> CMat {
    let mut x = soi.clone();
    for (k, mut row) in x.row_iter_mut().enumerate() {
        row /= re(sigma2[k].sqrt());
    }
    x
}

/// Scores on the normalized samples `x`, with analytic statistics where
/// available and sample averages otherwise.
pub fn cell_scores(density: &dyn CellDensity, x: &CMat) -> Result<CellScores> {
    let phi = density.score(x);
    let (nu, rho) = match density.analytic_stats() {
        Some(stats) => stats,
        None => (empirical_nu(&phi, x), empirical_rho(density, x)),
    };
    if let Some(bad) = nu.iter().find(|v| !(v.norm() >= NU_FLOOR)) {
        return Err(Error::DegenerateNormalization(bad.norm()));
    }
    Ok(CellScores { phi, nu, rho })
}

/// `nu_k = E[phi_k x_k]` over the samples.
pub fn empirical_nu(phi: &CMat, x: &CMat) -> Vec<C64> {
    let n = x.ncols() as f64;
    (0..x.nrows())
        .map(|k| phi.row(k).iter().zip(x.row(k).iter()).map(|(p, s)| p * s).sum::<C64>() / n)
        .collect()
}

/// `rho_k = E[d phi_k / d s_k^*]` over the samples.
pub fn empirical_rho(density: &dyn CellDensity, x: &CMat) -> Vec<C64> {
    let (dconj, _) = density.score_derivatives(x);
    let n = x.ncols() as f64;
    dconj.row_iter().map(|r| r.sum() / n).collect()
}

/// Rational nonlinearity with joint denominator
/// `phi_k(s) = s_k^* / (1 + sum_j |s_j|^2)`.
#[derive(Debug, Clone, Copy)]
pub struct Rati {
    pub dim: usize,
}

fn rati_denominators(x: &CMat) -> Vec<f64> {
    x.column_iter().map(|c| 1.0 + c.iter().map(|z| z.norm_sqr()).sum::<f64>()).collect()
}

/// `phi(s)` for one sample.
pub fn rati_score(s: &CVec) -> CVec {
    let den = 1.0 + s.norm_squared();
    s.map(|z| z.conj() / den)
}

/// `(nu_k, rho_k)` of the rational model over the samples `x` (`K x N`).
pub fn rati_stats(x: &CMat) -> Result<(Vec<C64>, Vec<C64>)> {
    let model = Rati { dim: x.nrows() };
    let phi = model.score(x);
    let nu = empirical_nu(&phi, x);
    if let Some(bad) = nu.iter().find(|v| !(v.norm() >= NU_FLOOR)) {
        return Err(Error::DegenerateNormalization(bad.norm()));
    }
    Ok((nu, empirical_rho(&model, x)))
}

impl CellDensity for Rati {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &CMat) -> CMat {
        let den = rati_denominators(x);
        CMat::from_fn(x.nrows(), x.ncols(), |k, j| x[(k, j)].conj() / den[j])
    }

    fn score_derivatives(&self, x: &CMat) -> (CMat, CMat) {
        let den = rati_denominators(x);
        let dconj = CMat::from_fn(x.nrows(), x.ncols(), |k, j| {
            let d = den[j];
            re(1.0 / d - x[(k, j)].norm_sqr() / (d * d))
        });
        let dplain = CMat::from_fn(x.nrows(), x.ncols(), |k, j| {
            let s = x[(k, j)].conj();
            -(s * s) / (den[j] * den[j])
        });
        (dconj, dplain)
    }

    fn log_density(&self, x: &CMat) -> Vec<f64> {
        rati_denominators(x).into_iter().map(|d| -d.ln()).collect()
    }
}

/// Clips a circularity coefficient to magnitude [`DELTA_CLIP`].
pub fn clip_delta(delta: C64) -> C64 {
    let m = delta.norm();
    if m <= DELTA_CLIP {
        delta
    } else {
        delta * (DELTA_CLIP / m)
    }
}

/// `(s^* - delta^* s) / (1 - |delta|^2)`.
pub fn gauss_score_scalar_noncirc(s: C64, delta: C64) -> Result<C64> {
    let m2 = delta.norm_sqr();
    if !(m2 < 1.0) {
        return Err(Error::ImproperCircularity(delta.norm()));
    }
    Ok((s.conj() - delta.conj() * s) / (1.0 - m2))
}

/// Unit-variance scalar Gaussian with circularity coefficient `delta`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarNoncirc {
    delta: C64,
    inv: f64,
}

impl ScalarNoncirc {
    pub fn new(delta: C64) -> Result<Self> {
        let m2 = delta.norm_sqr();
        if !(m2 < 1.0) {
            return Err(Error::ImproperCircularity(delta.norm()));
        }
        Ok(Self { delta, inv: 1.0 / (1.0 - m2) })
    }

    pub fn delta(&self) -> C64 {
        self.delta
    }
}

impl CellDensity for ScalarNoncirc {
    fn dim(&self) -> usize {
        1
    }

    fn score(&self, x: &CMat) -> CMat {
        let dc = self.delta.conj();
        x.map(|s| (s.conj() - dc * s) * self.inv)
    }

    fn score_derivatives(&self, x: &CMat) -> (CMat, CMat) {
        let (r, c) = x.shape();
        (CMat::from_element(r, c, re(self.inv)), CMat::from_element(r, c, -self.delta.conj() * self.inv))
    }

    fn log_density(&self, x: &CMat) -> Vec<f64> {
        x.iter()
            .map(|&s| -self.inv * (s.norm_sqr() - (self.delta.conj() * s * s).re))
            .collect()
    }

    fn analytic_stats(&self) -> Option<(Vec<C64>, Vec<C64>)> {
        Some((vec![re(1.0)], vec![re(self.inv)]))
    }
}

/// Vector Gaussian model fitted to one cell.
///
/// `sigma`, `gamma`, `p`, `m` are in the scale of the raw SOI estimates;
/// `p_inv` and `lin` act on normalized samples, where
/// `psi(u) = p_inv u^* - lin u`.
#[derive(Debug, Clone)]
pub struct GaussianModelState {
    pub sigma: CMat,
    pub gamma: CMat,
    pub p: CMat,
    pub m: CMat,
    pub lambda: Vec<f64>,
    pub mu: f64,
    p_inv: CMat,
    lin: CMat,
}

impl GaussianModelState {
    /// `mu = None` selects `1e-3 tr(Sigma) / K` for `K > 1` and zero for `K = 1`.
    pub fn build(soi: &CMat, sigma2: &[f64], mu: Option<f64>, noncircular: bool) -> Result<Self> {
        check_cell(soi, sigma2)?;
        let (dim, n) = soi.shape();
        let inv_n = re(1.0 / n as f64);
        let raw = soi * soi.adjoint() * inv_n;
        let raw = (&raw + raw.adjoint()) * re(0.5);
        let mu = match mu {
            Some(v) if v >= 0.0 => v,
            Some(v) => return Err(Error::Config(format!("negative regularization weight {v}"))),
            None if dim > 1 => DEFAULT_MU_FACTOR * raw.diagonal().iter().map(|z| z.re).sum::<f64>() / dim as f64,
            None => 0.0,
        };
        let sigma = raw + CMat::identity(dim, dim) * re(mu);
        let gamma = if noncircular {
            let g = soi * soi.transpose() * inv_n;
            (&g + g.transpose()) * re(0.5)
        } else {
            CMat::zeros(dim, dim)
        };
        let lambda: Vec<f64> = sigma2.iter().map(|v| 1.0 / v.sqrt()).collect();
        Self::from_parts(sigma, gamma, lambda, mu)
    }

    /// State from explicit `Sigma`, `Gamma` and `Lambda = diag(lambda)`.
    pub fn from_parts(sigma: CMat, gamma: CMat, lambda: Vec<f64>, mu: f64) -> Result<Self> {
        let dim = sigma.nrows();
        if sigma.shape() != (dim, dim) || gamma.shape() != (dim, dim) || lambda.len() != dim {
            return Err(Error::Shape("Sigma, Gamma and Lambda must share the dimension K".into()));
        }
        let singular = |what: &str| {
            if mu > 0.0 {
                Error::SingularCovariance(what.to_string())
            } else {
                Error::SingularCovariance(format!("{what} with mu = 0"))
            }
        };
        let sigma_inv = hermitian_pd_inverse(&sigma, RCOND_FLOOR).ok_or_else(|| singular("Sigma"))?;
        let m = gamma.adjoint() * &sigma_inv;
        let p = sigma.conjugate() - &m * &gamma;
        let p = (&p + p.adjoint()) * re(0.5);

        let scale = CMat::from_diagonal(&CVec::from_iterator(dim, lambda.iter().map(|&l| re(l))));
        let inv_scale = CMat::from_diagonal(&CVec::from_iterator(dim, lambda.iter().map(|&l| re(1.0 / l))));
        let p_norm = &scale * &p * &scale;
        let m_norm = &scale * &m * &inv_scale;
        let p_inv = hermitian_pd_inverse(&p_norm, RCOND_FLOOR).ok_or_else(|| singular("P"))?;
        let n = &p_inv * &m_norm;
        let lin = (&n + n.transpose()) * re(0.5);
        Ok(Self { sigma, gamma, p, m, lambda, mu, p_inv, lin })
    }

    /// `P^{-1}` of the normalized model.
    pub fn p_inv(&self) -> &CMat {
        &self.p_inv
    }

    /// `psi(u)` for one normalized sample.
    pub fn score_vector(&self, u: &CVec) -> CVec {
        &self.p_inv * u.conjugate() - &self.lin * u
    }
}

impl CellDensity for GaussianModelState {
    fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    fn score(&self, x: &CMat) -> CMat {
        &self.p_inv * x.conjugate() - &self.lin * x
    }

    fn score_derivatives(&self, x: &CMat) -> (CMat, CMat) {
        let (r, c) = x.shape();
        (
            CMat::from_fn(r, c, |k, _| self.p_inv[(k, k)]),
            CMat::from_fn(r, c, |k, _| -self.lin[(k, k)]),
        )
    }

    fn log_density(&self, x: &CMat) -> Vec<f64> {
        x.column_iter()
            .map(|u| {
                let q = (u.transpose() * &self.p_inv * u.conjugate())[(0, 0)].re;
                let l = (u.transpose() * &self.lin * u)[(0, 0)].re;
                -q + l
            })
            .collect()
    }

    fn analytic_stats(&self) -> Option<(Vec<C64>, Vec<C64>)> {
        let dim = self.dim();
        Some((vec![re(1.0); dim], (0..dim).map(|k| self.p_inv[(k, k)]).collect()))
    }
}

/// Statistics that only enter the full (rank-one including) Hessians.
pub mod diagnostics {
    use super::*;

    /// `(xi_k, eta_k)` with `xi = E[d phi / d s^* |s|^2]`,
    /// `eta = E[d phi / d s s^2]` over the normalized samples `x`.
    pub fn xi_eta(density: &dyn CellDensity, x: &CMat) -> (Vec<C64>, Vec<C64>) {
        let (dconj, dplain) = density.score_derivatives(x);
        let n = x.ncols() as f64;
        let mut xi = vec![ZERO; x.nrows()];
        let mut eta = vec![ZERO; x.nrows()];
        for k in 0..x.nrows() {
            for j in 0..x.ncols() {
                let s = x[(k, j)];
                xi[k] += dconj[(k, j)] * s.norm_sqr();
                eta[k] += dplain[(k, j)] * s * s;
            }
            xi[k] /= n;
            eta[k] /= n;
        }
        (xi, eta)
    }
}

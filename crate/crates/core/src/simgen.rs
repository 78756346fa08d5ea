//! Synthetic CSV mixtures with a known SOI.
//!
//! All randomness of a trial derives from one seed. Every consumer draws
//! from its own ChaCha8 stream, selected with [`stream`]:
//!
//! | purpose            | index                 |
//! |--------------------|-----------------------|
//! | mixing parameters  | dataset `k`           |
//! | SOI coupling       | 0                     |
//! | SOI cell           | `cell_index(k, t, l)` |
//! | background cell    | `cell_index(k, t, l)` |
//! | initialization     | dataset `k`           |
//!
//! so any cell can be regenerated on its own and generation order does not
//! matter.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::data::{Dims, SegmentedDataset};
use crate::error::{Error, Result};
use crate::linalg::{complex_normal, complex_normal_mat, complex_normal_vec, re, CMat, CVec, C64, ONE};
use crate::mixing::CsvParams;
use crate::tridiag::TridiagCov;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Mixing = 1,
    Coupling = 2,
    Soi = 3,
    Background = 4,
    Init = 5,
}

/// Independent generator for `(purpose, index)` under `seed`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | index);
    rng
}

/// How the `K` SOI components relate to each other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coupling {
    /// Independent across datasets.
    Independent,
    /// Independent streams premultiplied by a random matrix with unit-norm rows.
    DependentMix,
    /// Gaussian streams colored to a unit-diagonal tridiagonal covariance
    /// with constant off-diagonal `c`.
    TridiagColored(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialConfig {
    pub datasets: usize,
    pub blocks: usize,
    pub sub_blocks: usize,
    /// Samples per sub-block.
    pub samples: usize,
    pub channels: usize,
    /// Generalized Gaussian shape.
    pub shape: f64,
    /// Circularity coefficient.
    pub delta: C64,
    /// Nonstationarity exponent.
    pub alpha: f64,
    pub seed: u64,
    pub coupling: Coupling,
}

impl TrialConfig {
    pub fn dims(&self) -> Dims {
        Dims {
            datasets: self.datasets,
            blocks: self.blocks,
            sub_blocks: self.sub_blocks,
            samples: self.samples,
            channels: self.channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        if !(self.shape > 0.0) || !self.shape.is_finite() {
            return Err(Error::Config(format!("shape must be positive, got {}", self.shape)));
        }
        if !(self.delta.norm() < 1.0) {
            return Err(Error::ImproperCircularity(self.delta.norm()));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if let Coupling::TridiagColored(c) = self.coupling {
            if !(c.abs() <= crate::tridiag::CLIP_THRESHOLD) {
                return Err(Error::Config(format!("coloring coefficient {c} exceeds 0.4")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub params: CsvParams,
    pub w_star: Vec<CVec>,
    /// `sigma2[t * L + l]`
    pub variances: Vec<f64>,
    /// Sources of each cell, `d x N_s`, SOI in row 0.
    pub sources: Vec<CMat>,
    dims: Dims,
}

impl GroundTruth {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn variance(&self, t: usize, l: usize) -> f64 {
        self.variances[self.dims.slot_index(t, l)]
    }

    pub fn source(&self, k: usize, t: usize, l: usize) -> &CMat {
        &self.sources[self.dims.cell_index(k, t, l)]
    }

    /// Mixing matrices `A_{k,t}`.
    pub fn mixing_matrix(&self, k: usize, t: usize) -> CMat {
        self.params.mixing_matrix(k, t).expect("generated parameters have nonzero gamma")
    }

    /// Ground truth restricted to dataset `k`.
    pub fn select_dataset(&self, k: usize) -> GroundTruth {
        let per = self.dims.blocks * self.dims.sub_blocks;
        let blocks = self.dims.blocks;
        let params = CsvParams::new(
            vec![self.params.beta(k)],
            vec![self.params.h(k).clone()],
            (0..blocks).map(|t| self.params.gamma(k, t)).collect(),
            (0..blocks).map(|t| self.params.g(k, t).clone()).collect(),
            blocks,
        )
        .expect("subset of valid parameters");
        GroundTruth {
            params,
            w_star: vec![self.w_star[k].clone()],
            variances: self.variances.clone(),
            sources: self.sources[k * per..(k + 1) * per].to_vec(),
            dims: Dims { datasets: 1, ..self.dims },
        }
    }
}

/// `[sin(t pi / (T+1)) sin(l pi / (L+1))]^alpha` for 1-based `t`, `l`,
/// laid out as `t * L + l` over 0-based indices.
pub fn variance_profile(blocks: usize, sub_blocks: usize, alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(blocks * sub_blocks);
    for t in 1..=blocks {
        let st = (t as f64 * std::f64::consts::PI / (blocks as f64 + 1.0)).sin();
        for l in 1..=sub_blocks {
            let sl = (l as f64 * std::f64::consts::PI / (sub_blocks as f64 + 1.0)).sin();
            out.push(if alpha == 0.0 { 1.0 } else { (st * sl).powf(alpha) });
        }
    }
    out
}

/// Unit-variance complex generalized Gaussian samples with shape `c` and
/// circularity coefficient `delta`.
pub fn sample_cggd<R: Rng + ?Sized>(n: usize, c: f64, delta: C64, rng: &mut R) -> Result<CVec> {
    if !(c > 0.0) {
        return Err(Error::Config(format!("shape must be positive, got {c}")));
    }
    let m = delta.norm();
    if !(m < 1.0) {
        return Err(Error::ImproperCircularity(m));
    }
    let gamma = Gamma::new(1.0 / c, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let alpha_c = (ln_gamma(1.0 / c) - ln_gamma(2.0 / c)).exp();
    let a = ((1.0 + m).sqrt() + (1.0 - m).sqrt()) / 2.0;
    let b = ((1.0 + m).sqrt() - (1.0 - m).sqrt()) / 2.0;
    let rot = C64::from_polar(1.0, delta.arg() / 2.0);
    Ok(CVec::from_fn(n, |_, _| {
        let g: f64 = gamma.sample(rng);
        let radius = (alpha_c * g.powf(1.0 / c)).sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let z = C64::from_polar(radius, theta);
        (z * a + z.conj() * b) * rot
    }))
}

/// `w_star + eps` with `eps` orthogonal to `w_star` and `|eps|^2 = magnitude2`.
pub fn perturb_init<R: Rng + ?Sized>(w_star: &CVec, magnitude2: f64, rng: &mut R) -> Result<CVec> {
    let n2 = w_star.norm_squared();
    if !(n2 > 0.0) {
        return Err(Error::DegenerateDirection(n2));
    }
    if magnitude2 == 0.0 {
        return Ok(w_star.clone());
    }
    let eps = loop {
        let v = complex_normal_vec(w_star.len(), rng);
        let v = &v - w_star * (w_star.dotc(&v) / n2);
        let norm = v.norm();
        if norm > 1e-8 {
            break v * re(magnitude2.sqrt() / norm);
        }
    };
    Ok(w_star + eps)
}

fn unit_phase<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)
}

/// Random CSV parameters whose mixing vectors have unit-modulus entries in
/// every block, so that the SOI reaches each channel with the same power.
/// `h` is drawn from `CN(0, I / (d - 1))`.
pub fn equalized_params<R: Rng + ?Sized>(channels: usize, blocks: usize, rng: &mut R) -> CsvParams {
    assert!(channels >= 2 && blocks >= 1);
    let m = channels - 1;
    'outer: loop {
        let h = complex_normal_vec(m, rng) / re((m as f64).sqrt());
        let gamma0 = unit_phase(rng);
        let g0 = CVec::from_fn(m, |_, _| unit_phase(rng));
        let beta_conj = (ONE - h.dotc(&g0)) / gamma0;
        if beta_conj.norm() < crate::mixing::MIN_GAMMA {
            continue;
        }
        let mut gamma = vec![gamma0];
        let mut g = vec![g0];
        for _ in 1..blocks {
            match equalized_block(&h, beta_conj, rng) {
                Some((gt, gammat)) => {
                    g.push(gt);
                    gamma.push(gammat);
                }
                None => continue 'outer,
            }
        }
        return CsvParams::new(vec![beta_conj.conj()], vec![h], gamma, g, blocks).expect("consistent shapes");
    }
}

/// Unit-modulus `g` and `gamma` with `beta^* gamma + h^H g = 1` for given
/// `h` and `beta^*`: the phases of `g_2..` are random and the phase of `g_1`
/// puts `1 - h^H g` on the circle of radius `|beta|`.
fn equalized_block<R: Rng + ?Sized>(h: &CVec, beta_conj: C64, rng: &mut R) -> Option<(CVec, C64)> {
    let m = h.len();
    let target = beta_conj.norm();
    let r = h[0].norm();
    for _ in 0..1000 {
        let mut g = CVec::from_fn(m, |_, _| unit_phase(rng));
        let rest: C64 = (1..m).map(|i| h[i].conj() * g[i]).sum();
        let c = ONE - rest;
        let cn = c.norm();
        // |c - r e^{i phi}| = target
        if r == 0.0 || cn == 0.0 {
            continue;
        }
        let cos = (cn * cn + r * r - target * target) / (2.0 * cn * r);
        if !(-1.0..=1.0).contains(&cos) {
            continue;
        }
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let phi = c.arg() + sign * cos.acos();
        // h_1^* g_1 = r e^{i phi}
        g[0] = C64::from_polar(1.0, phi - h[0].conj().arg());
        let gamma = (ONE - h.dotc(&g)) / beta_conj;
        return Some((g, gamma));
    }
    None
}

/// Joins per-dataset parameters into one `CsvParams`.
fn stack_params(parts: Vec<CsvParams>, blocks: usize) -> CsvParams {
    let mut beta = Vec::new();
    let mut h = Vec::new();
    let mut gamma = Vec::new();
    let mut g = Vec::new();
    for p in parts {
        beta.push(p.beta(0));
        h.push(p.h(0).clone());
        for t in 0..blocks {
            gamma.push(p.gamma(0, t));
            g.push(p.g(0, t).clone());
        }
    }
    CsvParams::new(beta, h, gamma, g, blocks).expect("consistent shapes")
}

/// Lower-triangular `L` with `L L^H` the constant-`c` tridiagonal matrix.
pub fn tridiag_cholesky(dim: usize, c: f64) -> CMat {
    let cov = TridiagCov::new(dim, vec![re(c); dim.saturating_sub(1)]).expect("|c| <= 0.4").to_dense();
    cov.cholesky().expect("positive definite").l()
}

/// Draws the mixtures and ground truth of one trial.
pub fn generate_trial(cfg: &TrialConfig) -> Result<(SegmentedDataset, GroundTruth)> {
    cfg.validate()?;
    let dims = cfg.dims();
    let (kk, d, ns) = (cfg.datasets, cfg.channels, cfg.samples);
    let variances = variance_profile(cfg.blocks, cfg.sub_blocks, cfg.alpha);

    let params = stack_params(
        (0..kk)
            .map(|k| equalized_params(d, cfg.blocks, &mut stream(cfg.seed, Purpose::Mixing, k as u64)))
            .collect(),
        cfg.blocks,
    );
    let w_star: Vec<CVec> = (0..kk).map(|k| params.separating_vector(k)).collect();

    let coupling = match cfg.coupling {
        Coupling::Independent => None,
        Coupling::DependentMix => {
            let mut rng = stream(cfg.seed, Purpose::Coupling, 0);
            let mut m = complex_normal_mat(kk, kk, &mut rng);
            for mut row in m.row_iter_mut() {
                let n = row.norm();
                row /= re(n);
            }
            Some(m)
        }
        Coupling::TridiagColored(c) => Some(tridiag_cholesky(kk, c)),
    };
    let (shape, delta) = match cfg.coupling {
        Coupling::TridiagColored(_) => (1.0, cfg.delta),
        _ => (cfg.shape, cfg.delta),
    };

    let mut sources = vec![CMat::zeros(d, ns); dims.cell_count()];
    for t in 0..cfg.blocks {
        for l in 0..cfg.sub_blocks {
            let scale = re(variances[dims.slot_index(t, l)].sqrt());
            let mut soi = CMat::zeros(kk, ns);
            for k in 0..kk {
                let mut rng = stream(cfg.seed, Purpose::Soi, dims.cell_index(k, t, l) as u64);
                soi.set_row(k, &sample_cggd(ns, shape, delta, &mut rng)?.transpose());
            }
            if let Some(m) = &coupling {
                soi = m * soi;
            }
            for k in 0..kk {
                let idx = dims.cell_index(k, t, l);
                let mut rng = stream(cfg.seed, Purpose::Background, idx as u64);
                let cell = &mut sources[idx];
                cell.set_row(0, &(soi.row(k) * scale));
                for i in 1..d {
                    for j in 0..ns {
                        cell[(i, j)] = complex_normal(&mut rng);
                    }
                }
            }
        }
    }
    let data = params.mix(dims, &sources)?;
    Ok((data, GroundTruth { params, w_star, variances, sources, dims }))
}

/// Perturbed initial separating vectors `w_star + eps` with `|eps|^2 = magnitude2`.
pub fn initial_vectors(truth: &GroundTruth, seed: u64, magnitude2: f64) -> Result<Vec<CVec>> {
    truth
        .w_star
        .iter()
        .enumerate()
        .map(|(k, w)| perturb_init(w, magnitude2, &mut stream(seed, Purpose::Init, k as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    #[test]
    fn variance_profile_examples() {
        assert!(variance_profile(3, 4, 0.0).iter().all(|&v| v == 1.0));
        let p = variance_profile(3, 5, 2.0);
        assert!((p[5 + 2] - 1.0).abs() < 1e-15);
        let q = variance_profile(1, 2, 1.0);
        let expected = 3f64.sqrt() / 2.0;
        assert!((q[0] - expected).abs() < 1e-15 && (q[1] - expected).abs() < 1e-15);
    }

    #[test]
    fn cggd_rejects_improper() {
        let mut rng = stream(1, Purpose::Soi, 0);
        assert!(sample_cggd(10, 1.0, re(1.0), &mut rng).is_err());
        assert!(sample_cggd(10, 0.0, re(0.0), &mut rng).is_err());
    }

    #[test]
    fn perturbation_constraints() {
        let mut rng = stream(2, Purpose::Init, 0);
        for d in [2, 3, 6] {
            let w = complex_normal_vec(d, &mut rng);
            let wi = perturb_init(&w, 0.01, &mut rng).unwrap();
            let eps = &wi - &w;
            assert!(w.dotc(&eps).norm() < 1e-12);
            assert!((eps.norm_squared() - 0.01).abs() < 1e-12);
            assert!((wi.norm_squared() - w.norm_squared() - 0.01).abs() < 1e-12);
            assert_eq!(perturb_init(&w, 0.0, &mut rng).unwrap(), w);
        }
        assert!(perturb_init(&CVec::zeros(3), 0.01, &mut rng).is_err());
    }

    #[test]
    fn equalized_mixing_vectors() {
        let mut rng = stream(3, Purpose::Mixing, 0);
        for d in [2, 3, 6, 10] {
            let p = equalized_params(d, 4, &mut rng);
            for t in 0..4 {
                assert!(p.constraint_residual(0, t) < 1e-12);
                assert!(p.mixing_vector(0, t).iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
                let a = p.mixing_matrix(0, t).unwrap();
                let w = p.demixing_matrix(0, t).unwrap();
                assert!(max_abs(&(&w * &a - CMat::identity(d, d))) < 1e-10);
            }
        }
    }

    #[test]
    fn tridiag_coloring_reproduces_covariance() {
        let l = tridiag_cholesky(6, 0.3);
        let cov = &l * l.adjoint();
        for i in 0..6 {
            for j in 0..6 {
                let expected = match (i as usize).abs_diff(j) {
                    0 => 1.0,
                    1 => 0.3,
                    _ => 0.0,
                };
                assert!((cov[(i, j)] - re(expected)).norm() < 1e-12);
            }
        }
    }
}

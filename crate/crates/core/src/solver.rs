//! FastDIVA and QuickIVE iterations.

use crate::data::{BlockStats, Dims, SegmentedDataset};
use crate::error::{Error, Result};
use crate::linalg::{re, singular_values, CMat, CVec, C64};
use crate::score::{CellScores, SourceModel};

/// Smallest admissible `w^H C w`.
pub const DIRECTION_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    FastDiva,
    QuickIve,
}

impl Algorithm {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "fastdiva" => Ok(Self::FastDiva),
            "quickive" => Ok(Self::QuickIve),
            _ => Err(Error::Config(format!("unknown algorithm `{name}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::FastDiva => "FastDIVA",
            Self::QuickIve => "QuickIVE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub model: SourceModel,
    pub tol: f64,
    pub max_iter: usize,
    /// Reciprocal condition number below which the FastDIVA Hessian is
    /// replaced by the QuickIVE one.
    pub hessian_floor: f64,
    /// Keep every iterate of `w` in the returned state.
    pub record_iterates: bool,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, model: SourceModel) -> Self {
        Self { algorithm, model, tol: 1e-6, max_iter: 1000, hessian_floor: 1e-6, record_iterates: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.hessian_floor >= 0.0) {
            return Err(Error::Config(format!("hessian_floor must be non-negative, got {}", self.hessian_floor)));
        }
        Ok(())
    }
}

/// Quantities derived from the current separating vectors.
#[derive(Debug, Clone)]
pub struct Evaluation {
    dims: Dims,
    /// `a[k][t]`
    pub a: Vec<Vec<CVec>>,
    /// SOI estimates per `(t, l)` slot, `K x N_s`.
    pub soi: Vec<CMat>,
    /// `sigma2[slot][k]`
    pub sigma2: Vec<Vec<f64>>,
    pub scores: Vec<CellScores>,
}

impl Evaluation {
    pub fn soi(&self, k: usize, t: usize, l: usize) -> CVec {
        self.soi[self.dims.slot_index(t, l)].row(k).transpose()
    }

    pub fn sigma2(&self, k: usize, t: usize, l: usize) -> f64 {
        self.sigma2[self.dims.slot_index(t, l)][k]
    }

    pub fn scores(&self, t: usize, l: usize) -> &CellScores {
        &self.scores[self.dims.slot_index(t, l)]
    }
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct ExtractionState {
    pub w: Vec<CVec>,
    pub a: Vec<Vec<CVec>>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest `crit` over `k` after each iteration.
    pub crit: Vec<f64>,
    /// FastDIVA iterations that used the QuickIVE Hessian, per `k`.
    pub fallbacks: Vec<usize>,
    /// `w` before the first and after every iteration, when recorded.
    pub iterates: Vec<Vec<CVec>>,
}

fn check_w(dims: Dims, w: &[CVec]) -> Result<()> {
    if w.len() != dims.datasets || w.iter().any(|v| v.len() != dims.channels) {
        return Err(Error::Shape(format!(
            "expected {} separating vectors of length {}",
            dims.datasets, dims.channels
        )));
    }
    Ok(())
}

/// `a[k][t] = C_bar w / (w^H C_bar w)` with `C_bar` the sub-block average.
pub fn update_a(stats: &BlockStats, w: &[CVec]) -> Result<Vec<Vec<CVec>>> {
    let dims = stats.dims();
    check_w(dims, w)?;
    (0..dims.datasets)
        .map(|k| {
            (0..dims.blocks)
                .map(|t| {
                    let cw = stats.block_cov(k, t) * &w[k];
                    let den = w[k].dotc(&cw).re;
                    if !(den >= DIRECTION_FLOOR) {
                        return Err(Error::DegenerateDirection(den));
                    }
                    Ok(cw / re(den))
                })
                .collect()
        })
        .collect()
}

/// SOI estimates `w_k^H x` per slot and their sample variances `w_k^H C w_k`.
pub fn soi_estimates(data: &SegmentedDataset, stats: &BlockStats, w: &[CVec]) -> Result<(Vec<CMat>, Vec<Vec<f64>>)> {
    let dims = data.dims();
    check_w(dims, w)?;
    let mut soi = Vec::with_capacity(dims.blocks * dims.sub_blocks);
    let mut sigma2 = Vec::with_capacity(dims.blocks * dims.sub_blocks);
    for t in 0..dims.blocks {
        for l in 0..dims.sub_blocks {
            let mut s = CMat::zeros(dims.datasets, dims.samples);
            let mut v = Vec::with_capacity(dims.datasets);
            for (k, wk) in w.iter().enumerate() {
                s.set_row(k, &(wk.adjoint() * data.cell(k, t, l)));
                let var = wk.dotc(&(stats.cov(k, t, l) * wk)).re;
                if !(var >= DIRECTION_FLOOR) {
                    return Err(Error::DegenerateDirection(var));
                }
                v.push(var);
            }
            soi.push(s);
            sigma2.push(v);
        }
    }
    Ok((soi, sigma2))
}

/// One pass of the a-update followed by model evaluation on every slot.
pub fn evaluate(data: &SegmentedDataset, stats: &BlockStats, w: &[CVec], model: &SourceModel) -> Result<Evaluation> {
    let a = update_a(stats, w)?;
    let (soi, sigma2) = soi_estimates(data, stats, w)?;
    let scores = soi
        .iter()
        .zip(&sigma2)
        .map(|(s, v)| model.evaluate(s, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { dims: data.dims(), a, soi, sigma2, scores })
}

/// `E[phi_k x / sigma]` on cell `(k, t, l)`.
pub fn score_correlation(data: &SegmentedDataset, ev: &Evaluation, k: usize, t: usize, l: usize) -> CVec {
    let x = data.cell(k, t, l);
    let phi = &ev.scores(t, l).phi;
    let n = x.ncols() as f64;
    let sigma = ev.sigma2(k, t, l).sqrt();
    x * phi.row(k).transpose() / re(n * sigma)
}

/// `grad_k = < a_{k,t} - < nu^{-1} E[phi_k x / sigma] >_l >_t`.
pub fn gradient(data: &SegmentedDataset, ev: &Evaluation) -> Vec<CVec> {
    let dims = data.dims();
    (0..dims.datasets)
        .map(|k| {
            let mut g = CVec::zeros(dims.channels);
            for t in 0..dims.blocks {
                let mut inner = CVec::zeros(dims.channels);
                for l in 0..dims.sub_blocks {
                    let nu = ev.scores(t, l).nu[k];
                    inner += score_correlation(data, ev, k, t, l) / nu;
                }
                g += &ev.a[k][t] - inner / re(dims.sub_blocks as f64);
            }
            g / re(dims.blocks as f64)
        })
        .collect()
}

/// Hessians of both algorithms for dataset `k`: `(FastDIVA, QuickIVE)`.
pub fn hessians(stats: &BlockStats, ev: &Evaluation, k: usize) -> (CMat, CMat) {
    let dims = stats.dims();
    let d = dims.channels;
    let mut fast = CMat::zeros(d, d);
    let mut quick = CMat::zeros(d, d);
    let inv_l = 1.0 / dims.sub_blocks as f64;
    for t in 0..dims.blocks {
        let mut weighted = CMat::zeros(d, d);
        let mut mean_var = 0.0;
        for l in 0..dims.sub_blocks {
            let sc = ev.scores(t, l);
            let var = ev.sigma2(k, t, l);
            mean_var += var * inv_l;
            weighted += stats.cov(k, t, l) * (sc.rho[k] / (sc.nu[k].conj() * var) * inv_l);
        }
        fast += stats.block_cov(k, t) / re(mean_var) - &weighted;
        quick -= weighted;
    }
    let inv_t = re(1.0 / dims.blocks as f64);
    (fast * inv_t, quick * inv_t)
}

/// Hessian used by `algorithm` for dataset `k`, and whether the FastDIVA
/// Hessian was replaced by the QuickIVE one.
pub fn hessian(stats: &BlockStats, ev: &Evaluation, k: usize, algorithm: Algorithm, floor: f64) -> (CMat, bool) {
    let (fast, quick) = hessians(stats, ev, k);
    match algorithm {
        Algorithm::QuickIve => (quick, false),
        Algorithm::FastDiva => {
            let sv = singular_values(&fast);
            let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = sv.iter().copied().fold(0.0, f64::max);
            let scale = hi.max(singular_values(&quick).into_iter().fold(0.0, f64::max));
            let rcond = if scale > 0.0 { lo / scale } else { 0.0 };
            if rcond.is_finite() && rcond >= floor {
                (fast, false)
            } else {
                (quick, true)
            }
        }
    }
}

/// `w - H^{-1} grad`.
pub fn newton_step(w: &CVec, grad: &CVec, h: &CMat, k: usize) -> Result<CVec> {
    let step = h.clone().lu().solve(grad).ok_or(Error::SingularHessian(k))?;
    if step.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularHessian(k));
    }
    Ok(w - step)
}

/// `1 - |w^H w_old| / (|w| |w_old|)`.
pub fn crit(w: &CVec, w_old: &CVec) -> f64 {
    let den = w.norm() * w_old.norm();
    if den == 0.0 {
        return 1.0;
    }
    (1.0 - w.dotc(w_old).norm() / den).max(0.0)
}

/// Iterates from `w_ini` until every `crit < tol` or `max_iter` is reached.
pub fn run(data: &SegmentedDataset, config: &SolverConfig, w_ini: &[CVec]) -> Result<ExtractionState> {
    let stats = BlockStats::new(data);
    run_with_stats(data, &stats, config, w_ini)
}

pub fn run_with_stats(
    data: &SegmentedDataset,
    stats: &BlockStats,
    config: &SolverConfig,
    w_ini: &[CVec],
) -> Result<ExtractionState> {
    config.validate()?;
    let dims = data.dims();
    check_w(dims, w_ini)?;
    if let Some(bad) = w_ini.iter().find(|w| !(w.norm() > 0.0)) {
        return Err(Error::DegenerateDirection(bad.norm()));
    }
    let mut w = w_ini.to_vec();
    let mut crit_trace = Vec::new();
    let mut fallbacks = vec![0; dims.datasets];
    let mut iterates = Vec::new();
    if config.record_iterates {
        iterates.push(w.clone());
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let ev = evaluate(data, stats, &w, &config.model)?;
        let grad = gradient(data, &ev);
        let mut worst: f64 = 0.0;
        let mut next = Vec::with_capacity(dims.datasets);
        for k in 0..dims.datasets {
            let (h, fell_back) = hessian(stats, &ev, k, config.algorithm, config.hessian_floor);
            if fell_back {
                fallbacks[k] += 1;
            }
            let wk = newton_step(&w[k], &grad[k], &h, k)?;
            worst = worst.max(crit(&wk, &w[k]));
            next.push(wk);
        }
        w = next;
        crit_trace.push(worst);
        if config.record_iterates {
            iterates.push(w.clone());
        }
        if worst < config.tol {
            converged = true;
            break;
        }
    }
    let a = update_a(stats, &w)?;
    Ok(ExtractionState { w, a, iterations, converged, crit: crit_trace, fallbacks, iterates })
}

/// Mixing vectors of the sub-blocks, `C_l w / (w^H C_l w)`.
pub fn subblock_mixing_vectors(stats: &BlockStats, w: &[CVec], k: usize, t: usize) -> Vec<CVec> {
    (0..stats.dims().sub_blocks)
        .map(|l| {
            let cw = stats.cov(k, t, l) * &w[k];
            let den = w[k].dotc(&cw).re;
            cw / re(den)
        })
        .collect()
}

/// Complex scalar helper for tests and diagnostics.
pub fn quad(w: &CVec, m: &CMat) -> C64 {
    w.dotc(&(m * w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{complex_normal_mat, complex_normal_vec, hermitian_defect, ONE, ZERO};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_data(dims: Dims, seed: u64) -> SegmentedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..dims.cell_count())
            .map(|i| {
                let scale = 0.5 + (i % 5) as f64 * 0.3;
                complex_normal_mat(dims.channels, dims.samples, &mut rng) * re(scale)
            })
            .collect();
        SegmentedDataset::from_cells(dims, cells).unwrap()
    }

    fn dims(k: usize, t: usize, l: usize, n: usize, d: usize) -> Dims {
        Dims { datasets: k, blocks: t, sub_blocks: l, samples: n, channels: d }
    }

    #[test]
    fn a_update_examples() {
        let dm = dims(1, 1, 1, 2, 2);
        let cell = CMat::identity(2, 2) * re(2f64.sqrt());
        let data = SegmentedDataset::from_cells(dm, vec![cell]).unwrap();
        let stats = BlockStats::new(&data);
        let w = CVec::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
        let a = update_a(&stats, std::slice::from_ref(&w)).unwrap();
        let expected = &w / re(w.norm_squared());
        assert!((&a[0][0] - expected).norm() < 1e-14);

        let cell = CMat::from_vec(2, 1, vec![re(2f64.sqrt()), ZERO]);
        let data = SegmentedDataset::from_cells(dims(1, 1, 1, 1, 2), vec![cell]).unwrap();
        let e1 = CVec::from_vec(vec![ONE, ZERO]);
        let a = update_a(&BlockStats::new(&data), &[e1.clone()]).unwrap();
        assert!((&a[0][0] - e1).norm() < 1e-14);

        let zero = SegmentedDataset::from_cells(dims(1, 1, 1, 1, 2), vec![CMat::zeros(2, 1)]).unwrap();
        let err = update_a(&BlockStats::new(&zero), &[CVec::from_vec(vec![ONE, ZERO])]).unwrap_err();
        assert!(matches!(err, Error::DegenerateDirection(_)));
    }

    #[test]
    fn a_update_is_orthogonal_and_distortionless() {
        let dm = dims(2, 3, 4, 50, 4);
        let data = random_data(dm, 1);
        let stats = BlockStats::new(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<CVec> = (0..2).map(|_| complex_normal_vec(4, &mut rng)).collect();
        let a = update_a(&stats, &w).unwrap();
        for k in 0..2 {
            for t in 0..3 {
                assert!((w[k].dotc(&a[k][t]) - ONE).norm() < 1e-10);
                // B = [g, -gamma I] annihilates a
                let ak = &a[k][t];
                let gamma = ak[0];
                let b = CMat::from_fn(3, 4, |i, j| {
                    if j == 0 {
                        ak[i + 1]
                    } else if i + 1 == j {
                        -gamma
                    } else {
                        ZERO
                    }
                });
                let mut corr = CVec::zeros(3);
                for l in 0..4 {
                    let x = data.cell(k, t, l);
                    let s = w[k].adjoint() * x;
                    let z = &b * x;
                    corr += &z * s.adjoint() / re(x.ncols() as f64);
                }
                assert!(corr.norm() < 1e-10 * data.cell(k, t, 0).norm_squared().max(1.0));
            }
        }
    }

    #[test]
    fn cached_variance_matches_soi_power() {
        let dm = dims(2, 2, 3, 40, 3);
        let data = random_data(dm, 3);
        let stats = BlockStats::new(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<CVec> = (0..2).map(|_| complex_normal_vec(3, &mut rng)).collect();
        let ev = evaluate(&data, &stats, &w, &SourceModel::Rati).unwrap();
        for k in 0..2 {
            for t in 0..2 {
                for l in 0..3 {
                    let s = ev.soi(k, t, l);
                    let p = s.norm_squared() / 40.0;
                    assert!((p - ev.sigma2(k, t, l)).abs() < 1e-10 * p.max(1.0));
                }
            }
        }
    }

    #[test]
    fn circular_gaussian_gradient_and_hessians() {
        let dm = dims(1, 2, 4, 60, 3);
        let data = random_data(dm, 5);
        let stats = BlockStats::new(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = vec![complex_normal_vec(3, &mut rng)];
        let ev = evaluate(&data, &stats, &w, &SourceModel::GaussCirc { mu: None }).unwrap();
        let grad = gradient(&data, &ev);
        let mut expected = CVec::zeros(3);
        for t in 0..2 {
            let al = subblock_mixing_vectors(&stats, &w, 0, t);
            let mean = al.iter().fold(CVec::zeros(3), |acc, v| acc + v) / re(4.0);
            expected += (&ev.a[0][t] - mean) / re(2.0);
        }
        assert!((&grad[0] - &expected).norm() < 1e-12);

        let (fast, quick) = hessians(&stats, &ev, 0);
        let mut fast_ref = CMat::zeros(3, 3);
        let mut quick_ref = CMat::zeros(3, 3);
        for t in 0..2 {
            let var: Vec<f64> = (0..4).map(|l| ev.sigma2(0, t, l)).collect();
            let mean_var = var.iter().sum::<f64>() / 4.0;
            let mut w_avg = CMat::zeros(3, 3);
            for (l, v) in var.iter().enumerate() {
                w_avg += stats.cov(0, t, l) / re(4.0 * v);
            }
            fast_ref += (stats.block_cov(0, t) / re(mean_var) - &w_avg) / re(2.0);
            quick_ref -= w_avg / re(2.0);
        }
        assert!((fast - fast_ref).norm() < 1e-12);
        assert!((&quick - quick_ref).norm() < 1e-12);
        assert!(hermitian_defect(&quick) < 1e-10);
    }

    #[test]
    fn constant_variance_flags_fastdiva_hessian() {
        let dm = dims(1, 1, 3, 30, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cell = complex_normal_mat(3, 30, &mut rng);
        let data = SegmentedDataset::from_cells(dm, vec![cell.clone(), cell.clone(), cell]).unwrap();
        let stats = BlockStats::new(&data);
        let w = vec![complex_normal_vec(3, &mut rng)];
        let ev = evaluate(&data, &stats, &w, &SourceModel::GaussCirc { mu: None }).unwrap();
        let (fast, quick) = hessians(&stats, &ev, 0);
        assert!(fast.norm() < 1e-12 * quick.norm());
        let (h, flagged) = hessian(&stats, &ev, 0, Algorithm::FastDiva, 1e-6);
        assert!(flagged);
        assert_eq!(h, quick);
        let g = gradient(&data, &ev);
        let next = newton_step(&w[0], &g[0], &h, 0).unwrap();
        assert!(next.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn newton_step_examples() {
        let w = CVec::from_vec(vec![ONE, C64::i()]);
        let h = CMat::from_vec(2, 2, vec![re(2.0), re(1.0), re(1.0), re(3.0)]);
        assert_eq!(newton_step(&w, &CVec::zeros(2), &h, 0).unwrap(), w);
        let g = CVec::from_vec(vec![re(1.0), re(2.0)]);
        // [2 1; 1 3] x = [1; 2] -> x = [0.2, 0.6]
        let next = newton_step(&w, &g, &h, 0).unwrap();
        assert!((next[0] - re(0.8)).norm() < 1e-14);
        assert!((next[1] - C64::new(-0.6, 1.0)).norm() < 1e-14);
        assert!(newton_step(&w, &g, &CMat::zeros(2, 2), 3).is_err());
    }

    #[test]
    fn crit_examples() {
        let w = CVec::from_vec(vec![ONE, C64::new(0.5, -2.0)]);
        assert_eq!(crit(&w, &w), 0.0);
        assert!(crit(&(&w * C64::new(0.0, 3.0)), &w) < 1e-15);
        let e1 = CVec::from_vec(vec![ONE, ZERO]);
        let e2 = CVec::from_vec(vec![ZERO, ONE]);
        assert_eq!(crit(&e1, &e2), 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::new(Algorithm::FastDiva, SourceModel::Rati);
        assert!(c.validate().is_ok());
        c.tol = 0.0;
        assert!(c.validate().is_err());
        c.tol = 1e-6;
        c.max_iter = 0;
        assert!(c.validate().is_err());
        assert_eq!(Algorithm::from_name("quickive").unwrap(), Algorithm::QuickIve);
        assert!(Algorithm::from_name("newton").is_err());
    }
}

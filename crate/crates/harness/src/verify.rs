//! Acceptance checks run by `ive verify` and the `acceptance` test target.

use std::fmt;

use ive_core::contrast::{contrast_eval, frozen_gradient, full_hessians_diag, gradient_terms12, FrozenModel};
use ive_core::linalg::{complex_normal_mat, complex_normal_vec, hermitian_eigenvalues, max_abs, re, singular_values, CMat, CVec, C64};
use ive_core::score::{empirical_nu, normalize};
use ive_core::simgen::generate_trial;
use ive_core::solver::{evaluate, gradient, update_a};
use ive_core::tridiag::{eig_constant_c, TridiagCov};
use ive_core::{BlockStats, Coupling, CsvParams, SourceModel, TriProduct, TrialConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    AlgorithmSpec, CouplingSpec, ExperimentKind, ExperimentSpec, Regime, SolverSettings, TrialTemplate, SCHEMA_VERSION,
};
use crate::experiment::{run_experiment, write_outputs, ExperimentOutput, PointSummary};
use crate::HarnessError;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} [{:>2}] {}: {}", self.id, self.name, self.detail)
    }
}

type Outcome = Result<(bool, String), HarnessError>;

struct Check {
    id: u32,
    name: &'static str,
    run: fn(Option<usize>) -> Outcome,
}

const CHECKS: [Check; 11] = [
    Check { id: 1, name: "mixing algebra", run: mixing_algebra },
    Check { id: 2, name: "gradient vs finite differences", run: gradient_oracle },
    Check { id: 3, name: "unit nu for Gaussian models", run: gaussian_unit_nu },
    Check { id: 4, name: "consistency slope", run: consistency_slope },
    Check { id: 5, name: "tridiagonal inverse and spectrum", run: tridiagonal_inverse },
    Check { id: 6, name: "Hessian vs finite differences", run: hessian_oracle },
    Check { id: 7, name: "stationary circular source", run: non_identifiable },
    Check { id: 8, name: "alpha regimes", run: alpha_regimes },
    Check { id: 9, name: "small sample accuracy", run: small_sample },
    Check { id: 10, name: "frequency-domain convergence", run: frequency_domain },
    Check { id: 11, name: "determinism", run: determinism },
];

pub fn check_ids() -> Vec<u32> {
    CHECKS.iter().map(|c| c.id).collect()
}

/// Runs the checks in `only` (all when empty).
pub fn run_checks(threads: Option<usize>, only: &[u32]) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .filter(|c| only.is_empty() || only.contains(&c.id))
        .map(|c| {
            let (passed, detail) = match (c.run)(threads) {
                Ok(v) => v,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult { id: c.id, name: c.name, passed, detail }
        })
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mixing_algebra(_: Option<usize>) -> Outcome {
    let mut worst_inv: f64 = 0.0;
    let mut worst_det: f64 = 0.0;
    let mut r = rng(1);
    for i in 0..100 {
        let d = [2, 3, 6, 10][i % 4];
        let p = CsvParams::random(d, 1, 1, &mut r);
        let a = p.mixing_matrix(0, 0)?;
        let w = p.demixing_matrix(0, 0)?;
        worst_inv = worst_inv.max(max_abs(&(&a * &w - CMat::identity(d, d))));
        let gamma = p.gamma(0, 0);
        let expected = gamma.powi(d as i32 - 2) * if d % 2 == 0 { -1.0 } else { 1.0 };
        worst_det = worst_det.max((w.determinant() - expected).norm() / expected.norm());
    }
    Ok((
        worst_inv < 1e-10 && worst_det < 1e-9,
        format!("max |AW - I| = {worst_inv:.2e} (< 1e-10), max det rel err = {worst_det:.2e} (< 1e-9)"),
    ))
}

/// Central-difference `d f / d w_k^*` of a real function.
fn wirtinger_conj(f: impl Fn(&[CVec]) -> f64, w: &[CVec], k: usize, h: f64) -> CVec {
    CVec::from_fn(w[k].len(), |i, _| {
        let probe = |dir: C64| {
            let mut p = w.to_vec();
            p[k][i] += dir * h;
            let up = f(&p);
            p[k][i] -= dir * (2.0 * h);
            (up - f(&p)) / (2.0 * h)
        };
        C64::new(probe(re(1.0)), probe(C64::i())) * 0.5
    })
}

fn small_trial(datasets: usize, seed: u64) -> Result<(ive_core::SegmentedDataset, ive_core::GroundTruth), HarnessError> {
    let cfg = TrialConfig {
        datasets,
        blocks: 2,
        sub_blocks: 3,
        samples: 80,
        channels: 4,
        shape: 0.7,
        delta: re(0.5),
        alpha: 1.0,
        seed,
        coupling: if datasets > 1 { Coupling::DependentMix } else { Coupling::Independent },
    };
    Ok(generate_trial(&cfg)?)
}

fn gradient_oracle(_: Option<usize>) -> Outcome {
    let mut worst: f64 = 0.0;
    let models = [SourceModel::Rati, SourceModel::Gauss { mu: None }];
    let mut r = rng(2);
    for model in &models {
        for point in 0..20u64 {
            let datasets = 1 + (point as usize % 2);
            let (data, truth) = small_trial(datasets, 200 + point)?;
            let stats = BlockStats::new(&data);
            let w: Vec<CVec> =
                truth.w_star.iter().map(|ws| ws + complex_normal_vec(ws.len(), &mut r) * re(0.3)).collect();
            let frozen = FrozenModel::fit(&data, &stats, &w, model)?;
            for k in 0..datasets {
                let analytic = gradient_terms12(&data, &stats, &w, &frozen, k)?;
                let fd = wirtinger_conj(
                    |p| contrast_eval(&data, &stats, p, &frozen, None).map(|t| t.first_two()).unwrap_or(f64::NAN),
                    &w,
                    k,
                    1e-5,
                );
                worst = worst.max((&analytic - &fd).norm() / analytic.norm());
            }
        }
    }
    Ok((worst < 1e-6, format!("max relative error {worst:.2e} over 20 points x 2 models (< 1e-6)")))
}

/// `K x n` samples whose sample covariance is exactly `L L^H`.
fn with_exact_covariance(chol: &CMat, n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let k = chol.nrows();
    let q = complex_normal_mat(n, k, rng).qr().q();
    chol * q.adjoint() * re((n as f64).sqrt())
}

/// Sample average of `phi_k x_k` for the model fitted to `soi`.
fn sample_nu(model: &SourceModel, soi: &CMat, sigma2: &[f64]) -> Result<Vec<C64>, HarnessError> {
    let x = normalize(soi, sigma2);
    let density = model.fit(soi, sigma2)?;
    Ok(empirical_nu(&density.score(&x), &x))
}

fn gaussian_unit_nu(_: Option<usize>) -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        // non-circular scalar
        let z = complex_normal_mat(1, 500, &mut r);
        let s = z.map(|v| v + v.conj() * 0.4);
        let var = s.iter().map(|v| v.norm_sqr()).sum::<f64>() / 500.0;
        for nu in sample_nu(&SourceModel::Gauss { mu: None }, &s, &[var])? {
            worst = worst.max((nu - 1.0).norm());
        }

        // correlated vector, both circularity variants
        let k = 3 + trial % 3;
        let mix = complex_normal_mat(k, k, &mut r);
        let s = &mix * complex_normal_mat(k, 400, &mut r).map(|v| v + v.conj() * 0.3);
        let vars: Vec<f64> = s.row_iter().map(|row| row.norm_squared() / 400.0).collect();
        for model in [SourceModel::Gauss { mu: Some(0.0) }, SourceModel::GaussCirc { mu: Some(0.0) }] {
            for nu in sample_nu(&model, &s, &vars)? {
                worst = worst.max((nu - 1.0).norm());
            }
        }

        // exactly tridiagonal sample covariance
        let k = 4 + 3 * trial;
        let c: Vec<C64> = (0..k - 1)
            .map(|_| C64::from_polar(r.random_range(0.0..0.35), r.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let chol = TridiagCov::new(k, c)?.to_dense().cholesky().ok_or(HarnessError::Config("not PD".into()))?.l();
        let s = with_exact_covariance(&chol, 300, &mut r);
        for v in sample_nu(&SourceModel::GaussTri { product: TriProduct::Exact }, &s, &vec![1.0; k])? {
            worst = worst.max((v - 1.0).norm());
        }
    }
    Ok((worst < 1e-10, format!("max |nu - 1| = {worst:.2e} (< 1e-10)")))
}

fn consistency_slope(_: Option<usize>) -> Outcome {
    let sizes = [1_000usize, 10_000, 100_000];
    let mut mean_logs = Vec::new();
    for &ns in &sizes {
        let mut acc = 0.0;
        for trial in 0..50u64 {
            let cfg = TrialConfig {
                datasets: 1,
                blocks: 1,
                sub_blocks: 4,
                samples: ns,
                channels: 4,
                shape: 1.0,
                delta: re(0.5),
                alpha: 2.0,
                seed: 4000 + trial,
                coupling: Coupling::Independent,
            };
            let (data, truth) = generate_trial(&cfg)?;
            let stats = BlockStats::new(&data);
            let ev = evaluate(&data, &stats, &truth.w_star, &SourceModel::Gauss { mu: None })?;
            acc += gradient(&data, &ev)[0].norm().ln();
        }
        mean_logs.push(acc / 50.0);
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, mean_logs.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&mean_logs).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    Ok(((slope + 0.5).abs() <= 0.15, format!("log-log slope {slope:.3} (target -0.5 +/- 0.15)")))
}

fn tridiagonal_inverse(_: Option<usize>) -> Outcome {
    let mut r = rng(5);
    let mut inv_err: f64 = 0.0;
    for k in [4usize, 16, 32, 64] {
        for _ in 0..50 {
            let raw: Vec<C64> = (0..k - 1).map(|_| ive_core::linalg::complex_normal(&mut r) * 0.5).collect();
            let cov = TridiagCov::from_estimates(k, &raw)?;
            let dense = cov.to_dense().try_inverse().ok_or(HarnessError::Config("singular".into()))?;
            for i in 0..k {
                for j in 0..k {
                    inv_err = inv_err.max((cov.inverse_entry(i + 1, j + 1) - dense[(i, j)]).norm());
                }
            }
        }
    }
    let mut eig_err: f64 = 0.0;
    for k in [2usize, 3, 8, 33, 100] {
        for c in [0.05, 0.2, 0.4] {
            let phase = C64::from_polar(c, 0.7 * k as f64);
            let dense = TridiagCov::new(k, vec![phase; k - 1])?.to_dense();
            let mut numeric = hermitian_eigenvalues(&dense);
            numeric.sort_by(f64::total_cmp);
            let mut closed = eig_constant_c(k, c);
            closed.sort_by(f64::total_cmp);
            for (a, b) in numeric.iter().zip(&closed) {
                eig_err = eig_err.max((a - b).abs());
            }
        }
    }
    let mut lambda_min = f64::INFINITY;
    for _ in 0..100 {
        let k = r.random_range(2..=256);
        let raw: Vec<C64> = (0..k - 1).map(|_| ive_core::linalg::complex_normal(&mut r) * 3.0).collect();
        let dense = TridiagCov::from_estimates(k, &raw)?.to_dense();
        lambda_min = lambda_min.min(hermitian_eigenvalues(&dense).into_iter().fold(f64::INFINITY, f64::min));
    }
    Ok((
        inv_err < 1e-8 && eig_err < 1e-10 && lambda_min >= 0.2,
        format!("inverse max err {inv_err:.2e} (< 1e-8), eigenvalue err {eig_err:.2e} (< 1e-10), min eigenvalue {lambda_min:.4} (>= 0.2)"),
    ))
}

fn spectral_norm(m: &CMat) -> f64 {
    singular_values(m).into_iter().fold(0.0, f64::max)
}

fn hessian_oracle(_: Option<usize>) -> Outcome {
    let mut worst: f64 = 0.0;
    for trial in 0..10u64 {
        let cfg = TrialConfig {
            datasets: 1,
            blocks: 1,
            sub_blocks: 4,
            samples: 100_000,
            channels: 4,
            shape: 1.0,
            delta: re(0.5),
            alpha: 2.0,
            seed: 6000 + trial,
            coupling: Coupling::Independent,
        };
        let (data, truth) = generate_trial(&cfg)?;
        let stats = BlockStats::new(&data);
        let w = truth.w_star.clone();
        let frozen = FrozenModel::fit(&data, &stats, &w, &SourceModel::Gauss { mu: None })?;
        let a = update_a(&stats, &w)?.remove(0);
        let nu = vec![re(1.0); cfg.sub_blocks];
        let analytic = full_hessians_diag(&data, &stats, &w, &frozen, &nu, 0)?.h2_fixed;
        let d = cfg.channels;
        let h = 1e-6;
        let mut fd = CMat::zeros(d, d);
        for i in 0..d {
            let grad_at = |dir: C64| -> Result<CVec, HarnessError> {
                let mut p = w.clone();
                p[0][i] += dir * h;
                let up = frozen_gradient(&data, &stats, &p, &frozen, &a, &nu, 0)?;
                p[0][i] -= dir * (2.0 * h);
                let down = frozen_gradient(&data, &stats, &p, &frozen, &a, &nu, 0)?;
                Ok((up - down) / re(2.0 * h))
            };
            let dx = grad_at(re(1.0))?;
            let dy = grad_at(C64::i())?;
            let row = (dx - dy * C64::i()) * re(0.5);
            for j in 0..d {
                fd[(i, j)] = row[j];
            }
        }
        worst = worst.max(spectral_norm(&(&analytic - &fd)) / spectral_norm(&fd));
    }
    Ok((worst < 0.05, format!("max spectral-norm relative error {worst:.4} over 10 trials (< 0.05)")))
}

fn alg(algorithm: &str, model: &str, sub_blocks: Option<usize>) -> AlgorithmSpec {
    AlgorithmSpec {
        algorithm: algorithm.into(),
        model: model.into(),
        sub_blocks,
        regime: Regime::Ive,
        label: None,
        mu: None,
        k_max: None,
    }
}

fn experiment(
    kind: ExperimentKind,
    grid: Vec<f64>,
    trials: usize,
    seed: u64,
    template: TrialTemplate,
    algorithms: Vec<AlgorithmSpec>,
) -> ExperimentSpec {
    ExperimentSpec {
        schema_version: SCHEMA_VERSION,
        name: String::new(),
        kind,
        grid,
        trials,
        seed,
        template,
        algorithms,
        solver: SolverSettings::default(),
        init_perturbation: 0.01,
        trim_fraction: 0.01,
    }
}

fn single_mixture(sub_blocks: usize, samples: usize, delta: f64, alpha: f64) -> TrialTemplate {
    TrialTemplate {
        datasets: 1,
        blocks: 1,
        sub_blocks,
        samples,
        channels: 6,
        shape: 1.0,
        delta: [delta, 0.0],
        alpha,
        coupling: CouplingSpec::Independent,
    }
}

fn point<'a>(out: &'a ExperimentOutput, label: &str, index: usize) -> Result<&'a PointSummary, HarnessError> {
    out.summary
        .algorithms
        .iter()
        .find(|a| a.label == label)
        .and_then(|a| a.points.get(index))
        .ok_or_else(|| HarnessError::Config(format!("missing summary for {label}")))
}

fn value(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::INFINITY)
}

fn non_identifiable(threads: Option<usize>) -> Outcome {
    let spec = experiment(
        ExperimentKind::AlphaSweep,
        vec![0.0],
        100,
        7,
        single_mixture(20, 5000, 0.0, 0.0),
        vec![alg("quickive", "gauss-circ", None)],
    );
    let out = run_experiment(&spec, threads)?;
    let p = point(&out, "quickive-gauss-circ-20", 0)?;
    let (init, fin) = (value(p.isr_init_trimmed_mean), value(p.isr_trimmed_mean));
    Ok((
        (fin - init).abs() <= 3.0,
        format!("QuickIVE gauss-circ: init {init:.2} dB, final {fin:.2} dB (|diff| <= 3 dB)"),
    ))
}

fn alpha_regimes(threads: Option<usize>) -> Outcome {
    let spec = experiment(
        ExperimentKind::AlphaSweep,
        vec![0.1, 2.0],
        200,
        8,
        single_mixture(20, 5000, 0.5, 0.0),
        vec![alg("fastdiva", "gauss", None), alg("fastdiva", "rati", Some(1))],
    );
    let out = run_experiment(&spec, threads)?;
    let g = |i| point(&out, "fastdiva-gauss-20", i).map(|p| value(p.isr_trimmed_mean));
    let r = |i| point(&out, "fastdiva-rati-1", i).map(|p| value(p.isr_trimmed_mean));
    let (g0, g2, r0, r2) = (g(0)?, g(1)?, r(0)?, r(1)?);
    let passed = g0 <= -15.0 && r0 >= -15.0 && g2 < g0 && r2 < r0 && g2 <= r2 - 5.0;
    Ok((
        passed,
        format!("alpha=0.1: gauss-20 {g0:.2} dB (<= -15), rati-1 {r0:.2} dB (>= -15); alpha=2: gauss-20 {g2:.2} dB, rati-1 {r2:.2} dB (gap >= 5)"),
    ))
}

fn small_sample(threads: Option<usize>) -> Outcome {
    let template = TrialTemplate { blocks: 3, ..single_mixture(5, 150, 0.5, 2.0) };
    let spec = experiment(ExperimentKind::NSweep, vec![150.0], 200, 9, template, vec![alg("fastdiva", "gauss", None)]);
    let out = run_experiment(&spec, threads)?;
    let isr = value(point(&out, "fastdiva-gauss-5", 0)?.isr_trimmed_mean);
    Ok((isr <= -8.0, format!("FastDIVA gauss at N=150: {isr:.2} dB (<= -8 dB)")))
}

fn frequency_domain(threads: Option<usize>) -> Outcome {
    let template = TrialTemplate {
        datasets: 32,
        blocks: 3,
        sub_blocks: 5,
        samples: 375,
        channels: 10,
        shape: 1.0,
        delta: [0.0, 0.0],
        alpha: 2.0,
        coupling: CouplingSpec::Tridiag(0.3),
    };
    let spec = experiment(
        ExperimentKind::FrequencyDomain,
        vec![],
        50,
        10,
        template,
        vec![alg("fastdiva", "gausstri", None), alg("quickive", "gausstri", None)],
    );
    let out = run_experiment(&spec, threads)?;
    let mut passed = true;
    let mut parts = Vec::new();
    for summary in &out.summary.algorithms {
        let trace = summary.trace.as_ref().ok_or(HarnessError::Config("missing trace".into()))?;
        let best = trace.mean_median.iter().take(11).map(|v| value(*v)).fold(f64::INFINITY, f64::min);
        let runs: Vec<_> = out.records.iter().filter(|r| r.label == summary.label && r.k == 0).collect();
        let fast = runs.iter().filter(|r| r.converged && r.iterations <= 30).count() as f64 / runs.len() as f64;
        passed &= best <= -20.0 && fast >= 0.9;
        parts.push(format!("{}: best median ISR in 10 iterations {best:.2} dB (<= -20), converged within 30 {:.0}% (>= 90%)", summary.label, 100.0 * fast));
    }
    Ok((passed, parts.join("; ")))
}

fn determinism(threads: Option<usize>) -> Outcome {
    let template = TrialTemplate {
        datasets: 2,
        blocks: 2,
        sub_blocks: 4,
        samples: 800,
        channels: 4,
        shape: 0.8,
        delta: [0.3, 0.2],
        alpha: 1.0,
        coupling: CouplingSpec::DependentMix,
    };
    let mut spec = experiment(
        ExperimentKind::IterationTrace,
        vec![],
        6,
        11,
        template,
        vec![alg("fastdiva", "gauss", None), alg("quickive", "rati", Some(2))],
    );
    spec.algorithms.push(AlgorithmSpec { regime: Regime::Ice, ..alg("fastdiva", "gauss", None) });
    let io = |e: std::io::Error| HarnessError::Io("tempdir".into(), e);
    let first = tempfile::tempdir().map_err(io)?;
    let second = tempfile::tempdir().map_err(io)?;
    write_outputs(first.path(), &spec, &run_experiment(&spec, threads)?)?;
    write_outputs(second.path(), &spec, &run_experiment(&spec, Some(1))?)?;
    let mut identical = true;
    for name in ["results.csv", "traces.csv", "summary.json"] {
        let a = std::fs::read(first.path().join(name)).map_err(io)?;
        let b = std::fs::read(second.path().join(name)).map_err(io)?;
        identical &= !a.is_empty() && a == b;
    }
    Ok((identical, format!("results.csv, traces.csv, summary.json byte-identical across two runs: {identical}")))
}

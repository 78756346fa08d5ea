//! Monte-Carlo execution, aggregation, and result files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ive_core::linalg::CVec;
use ive_core::simgen::{generate_trial, initial_vectors};
use ive_core::solver::{run, ExtractionState};
use ive_core::{GroundTruth, SegmentedDataset};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AlgorithmSpec, ExperimentKind, ExperimentSpec, Regime};
use crate::metrics::{isr, median, trimmed_mean};
use crate::HarnessError;

pub const THREADS_ENV: &str = "IVE_THREADS";

/// One (trial, algorithm, dataset) outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub point: f64,
    pub trial: usize,
    pub label: String,
    pub k: usize,
    pub isr_init: f64,
    /// `None` when the run failed.
    pub isr_final: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub fallbacks: usize,
    pub error: Option<String>,
    /// ISR of every iterate, starting with the initialization.
    pub trace: Vec<f64>,
}

/// Seed of one trial, independent of execution order.
pub fn trial_seed(seed: u64, point: usize, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point as u64);
    rng.set_word_pos(2 * trial as u128);
    rng.next_u64()
}

/// Explicit thread count, else `IVE_THREADS`, else the rayon default.
pub fn resolve_threads(explicit: Option<usize>) -> Result<Option<usize>, HarnessError> {
    if explicit.is_some() {
        return Ok(explicit);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| HarnessError::Config(format!("{THREADS_ENV}={v} is not a thread count"))),
        _ => Ok(None),
    }
}

fn records_for(
    point: f64,
    trial: usize,
    label: &str,
    truth: &GroundTruth,
    w0: &[CVec],
    ks: &[usize],
    outcome: Result<ExtractionState, ive_core::Error>,
    traces: bool,
) -> Vec<TrialRecord> {
    ks.iter()
        .enumerate()
        .map(|(local, &k)| {
            let isr_init = isr(&w0[local], truth, k);
            let base = TrialRecord {
                point,
                trial,
                label: label.to_string(),
                k,
                isr_init,
                isr_final: None,
                iterations: 0,
                converged: false,
                fallbacks: 0,
                error: None,
                trace: Vec::new(),
            };
            match &outcome {
                Ok(st) => TrialRecord {
                    isr_final: Some(isr(&st.w[local], truth, k)),
                    iterations: st.iterations,
                    converged: st.converged,
                    fallbacks: st.fallbacks[local],
                    trace: if traces { st.iterates.iter().map(|w| isr(&w[local], truth, k)).collect() } else { Vec::new() },
                    ..base
                },
                Err(e) => TrialRecord { error: Some(e.to_string()), ..base },
            }
        })
        .collect()
}

fn run_algorithm(
    spec: &ExperimentSpec,
    alg: &AlgorithmSpec,
    point: f64,
    trial: usize,
    data: &SegmentedDataset,
    truth: &GroundTruth,
    w0: &[CVec],
) -> Result<Vec<TrialRecord>, HarnessError> {
    let traces = spec.kind.records_traces();
    let cfg = alg.solver_config(&spec.solver, traces)?;
    let label = alg.label(&spec.template);
    let dims = data.dims();
    let processed;
    let data = match alg.sub_blocks {
        Some(l) if l != dims.sub_blocks => {
            processed = data.resegment(l)?;
            &processed
        }
        _ => data,
    };
    Ok(match alg.regime {
        Regime::Ive => {
            let ks: Vec<usize> = (0..dims.datasets).collect();
            records_for(point, trial, &label, truth, w0, &ks, run(data, &cfg, w0), traces)
        }
        Regime::Ice => (0..dims.datasets)
            .flat_map(|k| {
                let single = data.select_dataset(k);
                let init = [w0[k].clone()];
                let outcome = run(&single, &cfg, &init);
                records_for(point, trial, &label, truth, &init, &[k], outcome, traces)
            })
            .collect(),
    })
}

/// Runs every algorithm on one generated trial.
pub fn run_trial(spec: &ExperimentSpec, point_index: usize, trial: usize) -> Result<Vec<TrialRecord>, HarnessError> {
    let point = spec.points()[point_index];
    let seed = trial_seed(spec.seed, point_index, trial);
    let cfg = spec.template.trial_config(spec.kind, point, seed)?;
    let (data, truth) = generate_trial(&cfg)?;
    let w0 = initial_vectors(&truth, seed, spec.init_perturbation)?;
    let mut out = Vec::new();
    for alg in &spec.algorithms {
        out.extend(run_algorithm(spec, alg, point, trial, &data, &truth, &w0)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointSummary {
    pub value: f64,
    pub isr_init_trimmed_mean: Option<f64>,
    pub isr_trimmed_mean: Option<f64>,
    pub isr_median: Option<f64>,
    pub mean_iterations: f64,
    pub converged_fraction: f64,
    pub fallbacks: usize,
    pub failures: usize,
}

/// Per-iteration statistics over trials of the dataset-averaged ISR and of
/// its per-trial minimum and maximum over datasets.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TraceSummary {
    pub iteration: Vec<usize>,
    pub mean_trimmed_mean: Vec<Option<f64>>,
    pub mean_median: Vec<Option<f64>>,
    pub min_median: Vec<Option<f64>>,
    pub max_median: Vec<Option<f64>>,
    /// Fraction of runs whose stopping criterion fell below `tol` by this iteration.
    pub converged_fraction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlgorithmSummary {
    pub label: String,
    pub algorithm: String,
    pub model: String,
    pub sub_blocks: usize,
    pub regime: Regime,
    pub points: Vec<PointSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub name: String,
    pub kind: ExperimentKind,
    pub trials: usize,
    pub seed: u64,
    pub trim_fraction: f64,
    pub algorithms: Vec<AlgorithmSummary>,
}

fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

/// Mean over datasets of one trial's values; failures count as `+inf`.
fn per_trial_means(records: &[&TrialRecord], pick: impl Fn(&TrialRecord) -> f64) -> Vec<f64> {
    let mut trials: Vec<usize> = records.iter().map(|r| r.trial).collect();
    trials.dedup();
    trials
        .iter()
        .map(|&t| {
            let vals: Vec<f64> = records.iter().filter(|r| r.trial == t).map(|r| pick(r)).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect()
}

fn summarize_point(value: f64, records: &[&TrialRecord], trim: f64) -> PointSummary {
    let init = per_trial_means(records, |r| r.isr_init);
    let fin = per_trial_means(records, |r| r.isr_final.unwrap_or(f64::INFINITY));
    let n = records.len().max(1) as f64;
    PointSummary {
        value,
        isr_init_trimmed_mean: finite(trimmed_mean(&init, trim)),
        isr_trimmed_mean: finite(trimmed_mean(&fin, trim)),
        isr_median: finite(median(&fin)),
        mean_iterations: records.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
        converged_fraction: records.iter().filter(|r| r.converged).count() as f64 / n,
        fallbacks: records.iter().map(|r| r.fallbacks).sum(),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
    }
}

fn summarize_trace(records: &[&TrialRecord], trim: f64) -> TraceSummary {
    let mut trials: Vec<usize> = records.iter().map(|r| r.trial).collect();
    trials.dedup();
    let len = records.iter().map(|r| r.trace.len()).max().unwrap_or(0);
    let runs = records.len().max(1) as f64;
    let mut summary = TraceSummary::default();
    for i in 0..len {
        let (mut means, mut mins, mut maxs) = (Vec::new(), Vec::new(), Vec::new());
        for &t in &trials {
            let at: Vec<f64> = records
                .iter()
                .filter(|r| r.trial == t)
                .map(|r| match r.trace.last() {
                    Some(&last) => *r.trace.get(i).unwrap_or(&last),
                    None => f64::INFINITY,
                })
                .collect();
            means.push(at.iter().sum::<f64>() / at.len() as f64);
            mins.push(at.iter().copied().fold(f64::INFINITY, f64::min));
            maxs.push(at.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        summary.iteration.push(i);
        summary.mean_trimmed_mean.push(finite(trimmed_mean(&means, trim)));
        summary.mean_median.push(finite(median(&means)));
        summary.min_median.push(finite(median(&mins)));
        summary.max_median.push(finite(median(&maxs)));
        let done = records.iter().filter(|r| r.converged && r.iterations <= i).count();
        summary.converged_fraction.push(done as f64 / runs);
    }
    summary
}

pub fn summarize(spec: &ExperimentSpec, records: &[TrialRecord]) -> Summary {
    let points = spec.points();
    let algorithms = spec
        .algorithms
        .iter()
        .map(|alg| {
            let label = alg.label(&spec.template);
            let mine: Vec<&TrialRecord> = records.iter().filter(|r| r.label == label).collect();
            let per_point = points
                .iter()
                .map(|&p| {
                    let at: Vec<&TrialRecord> = mine.iter().copied().filter(|r| r.point == p).collect();
                    summarize_point(p, &at, spec.trim_fraction)
                })
                .collect();
            AlgorithmSummary {
                label,
                algorithm: alg.algorithm.clone(),
                model: alg.model.clone(),
                sub_blocks: alg.sub_blocks.unwrap_or(spec.template.sub_blocks),
                regime: alg.regime,
                points: per_point,
                trace: spec.kind.records_traces().then(|| summarize_trace(&mine, spec.trim_fraction)),
            }
        })
        .collect();
    Summary {
        schema_version: crate::config::SCHEMA_VERSION,
        name: spec.name.clone(),
        kind: spec.kind,
        trials: spec.trials,
        seed: spec.seed,
        trim_fraction: spec.trim_fraction,
        algorithms,
    }
}

pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
}

/// Runs all trials of all grid points, in parallel over trials.
pub fn run_experiment(spec: &ExperimentSpec, threads: Option<usize>) -> Result<ExperimentOutput, HarnessError> {
    spec.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| HarnessError::Config(e.to_string()))?;
    let jobs: Vec<(usize, usize)> =
        (0..spec.points().len()).flat_map(|p| (0..spec.trials).map(move |t| (p, t))).collect();
    let batches: Vec<Vec<TrialRecord>> =
        pool.install(|| jobs.par_iter().map(|&(p, t)| run_trial(spec, p, t)).collect::<Result<_, _>>())?;
    let records: Vec<TrialRecord> = batches.into_iter().flatten().collect();
    let summary = summarize(spec, &records);
    Ok(ExperimentOutput { records, summary })
}

/// Seventeen significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

struct PreciseFloats;

impl serde_json::ser::Formatter for PreciseFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(format_float(value).as_bytes())
    }
}

pub fn summary_json(summary: &Summary) -> Result<Vec<u8>, HarnessError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFloats);
    summary.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn results_csv<W: Write>(records: &[TrialRecord], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sweep_value",
        "trial",
        "algorithm",
        "k",
        "isr_init_db",
        "isr_final_db",
        "iterations",
        "converged",
        "fallbacks",
        "error",
    ])?;
    for r in records {
        w.write_record([
            format_float(r.point),
            r.trial.to_string(),
            r.label.clone(),
            r.k.to_string(),
            format_float(r.isr_init),
            r.isr_final.map(format_float).unwrap_or_default(),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.fallbacks.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Io("results".into(), e))?;
    Ok(())
}

pub fn traces_csv<W: Write>(records: &[TrialRecord], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sweep_value", "trial", "algorithm", "k", "iteration", "isr_db"])?;
    for r in records {
        for (i, v) in r.trace.iter().enumerate() {
            w.write_record([
                format_float(r.point),
                r.trial.to_string(),
                r.label.clone(),
                r.k.to_string(),
                i.to_string(),
                format_float(*v),
            ])?;
        }
    }
    w.flush().map_err(|e| HarnessError::Io("traces".into(), e))?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, HarnessError> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| HarnessError::Io(path.display().to_string(), e))
}

/// Writes `results.csv`, `summary.json`, and for trace kinds `traces.csv`.
pub fn write_outputs(dir: &Path, spec: &ExperimentSpec, output: &ExperimentOutput) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
    results_csv(&output.records, create(dir, "results.csv")?)?;
    if spec.kind.records_traces() {
        traces_csv(&output.records, create(dir, "traces.csv")?)?;
    }
    let mut f = create(dir, "summary.json")?;
    f.write_all(&summary_json(&output.summary)?).map_err(|e| HarnessError::Io("summary.json".into(), e))?;
    f.flush().map_err(|e| HarnessError::Io("summary.json".into(), e))?;
    Ok(())
}

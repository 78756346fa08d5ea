//! JSON experiment description.

use std::path::Path;

use ive_core::solver::{Algorithm, SolverConfig};
use ive_core::{Coupling, SourceModel, TriProduct, TrialConfig};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Final ISR against the nonstationarity exponent.
    AlphaSweep,
    /// Final ISR against the total number of samples per dataset.
    NSweep,
    /// Per-iteration ISR at a single operating point.
    IterationTrace,
    /// Per-iteration ISR with min/median/max over datasets.
    FrequencyDomain,
}

impl ExperimentKind {
    pub fn records_traces(self) -> bool {
        matches!(self, Self::IterationTrace | Self::FrequencyDomain)
    }
}

/// Joint extraction over all datasets, or each dataset on its own.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    #[default]
    Ive,
    Ice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingSpec {
    Independent,
    DependentMix,
    Tridiag(f64),
}

impl From<&CouplingSpec> for Coupling {
    fn from(c: &CouplingSpec) -> Self {
        match c {
            CouplingSpec::Independent => Coupling::Independent,
            CouplingSpec::DependentMix => Coupling::DependentMix,
            CouplingSpec::Tridiag(c) => Coupling::TridiagColored(*c),
        }
    }
}

/// Data-generation template. `samples` is the total length `N` per dataset;
/// each cell holds `N / (blocks * sub_blocks)` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialTemplate {
    pub datasets: usize,
    pub blocks: usize,
    pub sub_blocks: usize,
    pub samples: usize,
    pub channels: usize,
    #[serde(default = "one")]
    pub shape: f64,
    #[serde(default)]
    pub delta: [f64; 2],
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "independent")]
    pub coupling: CouplingSpec,
}

fn one() -> f64 {
    1.0
}

fn independent() -> CouplingSpec {
    CouplingSpec::Independent
}

impl TrialTemplate {
    pub fn trial_config(&self, kind: ExperimentKind, point: f64, seed: u64) -> Result<TrialConfig, HarnessError> {
        let mut total = self.samples;
        let mut alpha = self.alpha;
        match kind {
            ExperimentKind::AlphaSweep => alpha = point,
            ExperimentKind::NSweep => total = point as usize,
            _ => {}
        }
        let cells = self.blocks * self.sub_blocks;
        if cells == 0 || total % cells != 0 || total == 0 {
            return Err(HarnessError::Config(format!(
                "N = {total} is not a positive multiple of blocks * sub_blocks = {cells}"
            )));
        }
        Ok(TrialConfig {
            datasets: self.datasets,
            blocks: self.blocks,
            sub_blocks: self.sub_blocks,
            samples: total / cells,
            channels: self.channels,
            shape: self.shape,
            delta: C64::new(self.delta[0], self.delta[1]),
            alpha,
            seed,
            coupling: (&self.coupling).into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub algorithm: String,
    pub model: String,
    /// Sub-blocks used by the algorithm; must divide the generated cell length.
    pub sub_blocks: Option<usize>,
    #[serde(default)]
    pub regime: Regime,
    pub label: Option<String>,
    /// Diagonal loading for the Gaussian models.
    pub mu: Option<f64>,
    /// Band half-width for the tridiagonal model; exact products when absent.
    pub k_max: Option<usize>,
}

impl AlgorithmSpec {
    pub fn label(&self, template: &TrialTemplate) -> String {
        self.label.clone().unwrap_or_else(|| {
            let l = self.sub_blocks.unwrap_or(template.sub_blocks);
            let regime = match self.regime {
                Regime::Ive => "",
                Regime::Ice => "-ice",
            };
            format!("{}-{}-{}{}", self.algorithm, self.model, l, regime)
        })
    }

    pub fn source_model(&self) -> Result<SourceModel, HarnessError> {
        let base = SourceModel::from_name(&self.model)?;
        Ok(match base {
            SourceModel::Gauss { .. } => SourceModel::Gauss { mu: self.mu },
            SourceModel::GaussCirc { .. } => SourceModel::GaussCirc { mu: self.mu },
            SourceModel::GaussTri { .. } => SourceModel::GaussTri {
                product: self.k_max.map_or(TriProduct::Exact, TriProduct::Banded),
            },
            SourceModel::Rati => SourceModel::Rati,
        })
    }

    pub fn solver_config(&self, solver: &SolverSettings, traces: bool) -> Result<SolverConfig, HarnessError> {
        let mut cfg = SolverConfig::new(Algorithm::from_name(&self.algorithm)?, self.source_model()?);
        cfg.tol = solver.tol;
        cfg.max_iter = solver.max_iter;
        cfg.hessian_floor = solver.hessian_floor;
        cfg.record_iterates = traces;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_floor")]
    pub hessian_floor: f64,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    1000
}

fn default_floor() -> f64 {
    1e-6
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: default_tol(), max_iter: default_max_iter(), hessian_floor: default_floor() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub kind: ExperimentKind,
    /// Sweep values; a single value is used for the trace kinds.
    #[serde(default)]
    pub grid: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub template: TrialTemplate,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default = "default_perturbation")]
    pub init_perturbation: f64,
    #[serde(default = "default_trim")]
    pub trim_fraction: f64,
}

fn default_perturbation() -> f64 {
    0.01
}

fn default_trim() -> f64 {
    0.01
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Grid points, with the template value standing in for an empty grid.
    pub fn points(&self) -> Vec<f64> {
        if !self.grid.is_empty() {
            return self.grid.clone();
        }
        match self.kind {
            ExperimentKind::NSweep => vec![self.template.samples as f64],
            _ => vec![self.template.alpha],
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must not be empty".into());
        }
        if self.kind.records_traces() && self.grid.len() > 1 {
            return bad("trace experiments take at most one grid value".into());
        }
        if !(self.init_perturbation > 0.0) {
            return bad("init_perturbation must be positive".into());
        }
        if !(0.0..0.5).contains(&self.trim_fraction) {
            return bad("trim_fraction must lie in [0, 0.5)".into());
        }
        for point in self.points() {
            if self.kind == ExperimentKind::NSweep && (point.fract() != 0.0 || point < 1.0) {
                return bad(format!("N grid value {point} is not a positive integer"));
            }
            let cfg = self.template.trial_config(self.kind, point, 0)?;
            cfg.validate()?;
            for alg in &self.algorithms {
                alg.solver_config(&self.solver, false)?;
                if let Some(l) = alg.sub_blocks {
                    let len = cfg.samples * cfg.sub_blocks;
                    if l == 0 || len % l != 0 {
                        return bad(format!("{}: {l} sub-blocks do not divide block length {len}", alg.label(&self.template)));
                    }
                }
            }
        }
        let mut labels: Vec<String> = self.algorithms.iter().map(|a| a.label(&self.template)).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.algorithms.len() {
            return bad("algorithm labels must be unique".into());
        }
        Ok(())
    }
}

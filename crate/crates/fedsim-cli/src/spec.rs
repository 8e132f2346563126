//! Experiment specification: JSON schema, validation and resolution into
//! engine configs.

use fedsim::engine::{Algorithm, ControlledAveraging, LearningRateSchedule, RunConfig};
use fedsim::problem::{make_synthetic_problem, FederatedProblem, SyntheticSpec};
use fedsim::topology::{make_topology, ring_self_weight_for_zeta, MixingMatrix, TopologyKind};
use fedsim::ModelVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSpec {
    Constant { eta: f64 },
    PlDecay { alpha: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ControlSpec {
    #[default]
    Off,
    PrevRoundMean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub e: usize,
    pub k: usize,
    pub t: usize,
    #[serde(default = "one")]
    pub b: usize,
    pub lr: LrSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyKind>,
    #[serde(default)]
    pub controlled_averaging: ControlSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    /// One of: E, K, eta, B, knob, zeta.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub problem: SyntheticSpec,
    pub run: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    /// Diversity bound fed to the condition checkers; when absent the
    /// post-hoc trajectory maximum is used instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Variance constants for the stochastic checkers (default 0).
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub sigma_sq: f64,
}

/// One sweep-cell configuration with everything resolved; this is the
/// content that gets hashed, so a manifest entry reproduces the run.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedCell {
    pub problem: SyntheticSpec,
    pub run: RunSpec,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_parameter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_value: Option<f64>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.seeds.is_empty() {
            return Err("seeds list must be non-empty".into());
        }
        if self.run.k > self.problem.p {
            return Err(format!(
                "invalid run config: K = {} exceeds p = {} (K must lie in [1, p])",
                self.run.k, self.problem.p
            ));
        }
        if self.run.k < 1 {
            return Err("invalid run config: K must be at least 1".into());
        }
        if self.run.e < 1 {
            return Err("invalid run config: E must be at least 1".into());
        }
        if let Some(sweep) = &self.sweep {
            let known = ["E", "K", "eta", "B", "knob", "zeta"];
            if !known.contains(&sweep.parameter.as_str()) {
                return Err(format!(
                    "unknown sweep parameter '{}' (expected one of {known:?})",
                    sweep.parameter
                ));
            }
            if sweep.values.is_empty() {
                return Err("sweep values must be non-empty".into());
            }
            if sweep.values.iter().any(|v| !v.is_finite()) {
                return Err("sweep values must be finite".into());
            }
            for &v in &sweep.values {
                match sweep.parameter.as_str() {
                    "E" | "K" | "B" => {
                        if v < 1.0 || v.fract() != 0.0 {
                            return Err(format!(
                                "sweep value {v} invalid for integer parameter {}",
                                sweep.parameter
                            ));
                        }
                        if sweep.parameter == "K" && v as usize > self.problem.p {
                            return Err(format!(
                                "invalid sweep: K = {v} exceeds p = {}",
                                self.problem.p
                            ));
                        }
                    }
                    "eta" => {
                        if v <= 0.0 {
                            return Err("sweep eta values must be positive".into());
                        }
                        if !matches!(self.run.lr, LrSpec::Constant { .. }) {
                            return Err("eta sweep requires a constant learning rate".into());
                        }
                    }
                    "knob" => {
                        if v < 0.0 {
                            return Err("sweep knob values must be non-negative".into());
                        }
                    }
                    "zeta" => {
                        if !(0.0..1.0).contains(&v) {
                            return Err("sweep zeta values must lie in [0, 1)".into());
                        }
                        if self.run.algorithm != Algorithm::Nfsgd {
                            return Err("zeta sweep only applies to the networked algorithm".into());
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
        Ok(())
    }

    /// Expands the sweep axis (or a single None cell) times the seed list.
    pub fn cells(&self) -> Result<Vec<ResolvedCell>, String> {
        let mut cells = Vec::new();
        let sweep_points: Vec<Option<f64>> = match &self.sweep {
            Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        };
        for value in sweep_points {
            let mut problem = self.problem.clone();
            let mut run = self.run.clone();
            if let (Some(v), Some(sweep)) = (value, &self.sweep) {
                apply_sweep_value(&mut problem, &mut run, &sweep.parameter, v)?;
            }
            for &seed in &self.seeds {
                cells.push(ResolvedCell {
                    problem: problem.clone(),
                    run: run.clone(),
                    seed,
                    sweep_parameter: self.sweep.as_ref().map(|s| s.parameter.clone()),
                    sweep_value: value,
                });
            }
        }
        Ok(cells)
    }
}

fn apply_sweep_value(
    problem: &mut SyntheticSpec,
    run: &mut RunSpec,
    parameter: &str,
    v: f64,
) -> Result<(), String> {
    match parameter {
        "E" => run.e = v as usize,
        "K" => run.k = v as usize,
        "B" => run.b = v as usize,
        "eta" => match &mut run.lr {
            LrSpec::Constant { eta } => *eta = v,
            LrSpec::PlDecay { .. } => return Err("eta sweep requires a constant rate".into()),
        },
        "knob" => problem.knob = v,
        "zeta" => {
            let s = ring_self_weight_for_zeta(problem.p, v).map_err(|e| e.to_string())?;
            run.topology = Some(TopologyKind::Ring { self_weight: s });
        }
        other => return Err(format!("unknown sweep parameter '{other}'")),
    }
    Ok(())
}

/// Builds the engine-level config for one cell.
pub fn build_run(
    cell: &ResolvedCell,
) -> Result<(FederatedProblem, RunConfig, Option<MixingMatrix>), String> {
    let problem = make_synthetic_problem(&cell.problem).map_err(|e| e.to_string())?;
    let topology = match &cell.run.topology {
        Some(kind) => Some(make_topology(kind, cell.problem.p).map_err(|e| e.to_string())?),
        None => None,
    };
    let lr = match &cell.run.lr {
        LrSpec::Constant { eta } => LearningRateSchedule::Constant { eta: *eta },
        LrSpec::PlDecay { alpha } => {
            let mu = problem.pl_constant().ok_or_else(|| {
                "pl_decay schedule needs a problem with a known PL constant".to_string()
            })?;
            LearningRateSchedule::PlDecay {
                mu,
                alpha: *alpha,
                e: cell.run.e,
            }
        }
    };
    let w0 = match &cell.run.w0 {
        Some(values) => ModelVector::from_vec(values.clone()),
        None => ModelVector::zeros(problem.dim()),
    };
    let mut config = RunConfig::new(cell.run.algorithm, cell.run.e, cell.run.k, cell.run.t, w0);
    config.b = cell.run.b;
    config.lr = lr;
    config.seed = cell.seed;
    config.topology = topology.clone();
    config.controlled_averaging = match cell.run.controlled_averaging {
        ControlSpec::Off => ControlledAveraging::Off,
        ControlSpec::PrevRoundMean => ControlledAveraging::PrevRoundMean,
    };
    Ok((problem, config, topology))
}

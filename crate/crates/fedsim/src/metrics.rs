//! Trajectory recording, convergence-rate fitting and the synchronous
//! baseline used for equivalence testing.

use serde::Serialize;

use crate::error::{FedError, Result};
use crate::model::ModelVector;
use crate::problem::FederatedProblem;

/// Iterates whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Suboptimality is clipped here before taking logs; exact convergence on
/// quadratics otherwise underflows the fit.
const SUBOPT_CLIP: f64 = 1e-300;

/// CSV header shared by every trajectory emitter. Stable across versions.
pub const CSV_HEADER: &str = "t,f_bar,subopt,grad_norm_sq,consensus,diversity,eta";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { t: usize },
}

/// Metrics of one iteration, all evaluated at the virtual average.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub f_bar: f64,
    /// f(w_bar) - f*, present when the problem knows its optimum.
    pub subopt: Option<f64>,
    pub grad_norm_sq: f64,
    /// sum_j q_j || w_bar - w_j ||^2.
    pub consensus: f64,
    /// Weighted gradient diversity at the virtual average; None when the
    /// point is (numerically) globally stationary.
    pub diversity: Option<f64>,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> &TrajectoryRecord {
        self.records.last().expect("trajectory has at least the initial record")
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    /// One CSV row per record under [`CSV_HEADER`]; absent optionals are
    /// empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 64);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let subopt = r.subopt.map(|v| v.to_string()).unwrap_or_default();
            let diversity = r.diversity.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.t, r.f_bar, subopt, r.grad_norm_sq, r.consensus, diversity, r.eta
            ));
        }
        out
    }

    /// Fitted-rate summary for the run manifest.
    pub fn summary(&self, config_hash: &str) -> TrajectorySummary {
        let fit = |model| fit_rate(std::slice::from_ref(self), model).ok();
        TrajectorySummary {
            config_hash: config_hash.to_string(),
            status: self.status,
            iterations: self.records.len().saturating_sub(1),
            final_f_bar: self.last().f_bar,
            final_subopt: self.last().subopt,
            exp_decay: fit(RateModel::ExpDecay).map(|(rate, r2)| RateFit { rate, r_squared: r2 }),
            power_law: fit(RateModel::PowerLaw).map(|(rate, r2)| RateFit { rate, r_squared: r2 }),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySummary {
    pub config_hash: String,
    #[serde(flatten)]
    pub status: RunStatus,
    pub iterations: usize,
    pub final_f_bar: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_subopt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exp_decay: Option<RateFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_law: Option<RateFit>,
}

/// Builds one trajectory record from the virtual average and the per-device
/// models. `models` may be empty for single-model baselines (consensus 0).
pub fn record_point(
    problem: &FederatedProblem,
    t: usize,
    w_bar: &ModelVector,
    models: &[ModelVector],
    eta: f64,
) -> Result<TrajectoryRecord> {
    let grads = problem.local_gradients(w_bar)?;
    let q = problem.weights();
    let mut f_bar = 0.0;
    for (j, &qj) in q.iter().enumerate() {
        f_bar += qj * problem.objective(j).value(w_bar);
    }
    let global_grad = crate::model::weighted_sum(&grads, q);
    let diversity = match crate::problem::weighted_diversity(&grads, q) {
        Ok(v) => Some(v),
        Err(FedError::DegenerateDiversity { .. }) => None,
        Err(e) => return Err(e),
    };
    let consensus = models
        .iter()
        .zip(q)
        .map(|(wj, &qj)| qj * w_bar.dist_sq(wj))
        .sum();
    Ok(TrajectoryRecord {
        t,
        f_bar,
        subopt: problem.f_star().map(|fs| f_bar - fs),
        grad_norm_sq: global_grad.norm_sq(),
        consensus,
        diversity,
        eta,
    })
}

/// Fully synchronous weighted gradient descent:
/// w <- w - eta sum_j q_j grad f_j(w), one shared model. The E = 1, K = p
/// equivalence baseline.
pub fn oracle_sync_gd(
    problem: &FederatedProblem,
    eta: f64,
    t_max: usize,
    w0: &ModelVector,
) -> Result<Trajectory> {
    if eta <= 0.0 || !eta.is_finite() {
        return Err(FedError::invalid("eta must be positive"));
    }
    w0.check_dim(problem.dim())?;
    let mut w = w0.clone();
    let mut records = vec![record_point(problem, 0, &w, &[], eta)?];
    let mut status = RunStatus::Completed;
    for t in 0..t_max {
        let (_, g) = problem.global_value_and_gradient(&w)?;
        w.axpy(-eta, &g);
        if !w.is_finite() || w.norm() > DIVERGENCE_NORM {
            status = RunStatus::Diverged { t };
            break;
        }
        records.push(record_point(problem, t + 1, &w, &[], eta)?);
    }
    Ok(Trajectory { records, status })
}

/// Same dynamics, returning the iterates themselves for per-coordinate
/// equivalence tests.
pub fn sync_gd_iterates(
    problem: &FederatedProblem,
    eta: f64,
    t_max: usize,
    w0: &ModelVector,
) -> Result<Vec<ModelVector>> {
    w0.check_dim(problem.dim())?;
    let mut w = w0.clone();
    let mut out = vec![w.clone()];
    for _ in 0..t_max {
        let (_, g) = problem.global_value_and_gradient(&w)?;
        w.axpy(-eta, &g);
        out.push(w.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateModel {
    /// Slope of log(subopt) against t; a clean contraction (1 - c)^t fits
    /// rate ln(1 - c).
    ExpDecay,
    /// Slope of log(metric) against log(t); metric is subopt when available
    /// and the squared gradient norm otherwise.
    PowerLaw,
}

/// Least-squares slope and R^2 of y against x.
fn slope_r2(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx == 0.0 {
        return (0.0, 1.0);
    }
    let slope = sxy / sxx;
    let ss_res = syy - slope * sxy;
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    (slope, r2)
}

/// Fits a decay model over the final decade of iterations. Several
/// trajectories are reduced to their per-iteration ensemble mean first.
///
/// Returns (rate parameter, R^2 goodness).
pub fn fit_rate(trajectories: &[Trajectory], model: RateModel) -> Result<(f64, f64)> {
    if trajectories.is_empty() {
        return Err(FedError::RateFitUnavailable("no trajectories given".into()));
    }
    let mean_traj;
    let traj = if trajectories.len() == 1 {
        &trajectories[0]
    } else {
        mean_traj = ensemble_mean(trajectories)?.mean_trajectory();
        &mean_traj
    };
    let t_max = traj.records.last().map(|r| r.t).unwrap_or(0);
    let window_lo = t_max / 10;

    let mut points = Vec::new();
    match model {
        RateModel::ExpDecay => {
            for r in &traj.records {
                if r.t < window_lo {
                    continue;
                }
                if let Some(s) = r.subopt {
                    if s > 0.0 {
                        points.push((r.t as f64, s.max(SUBOPT_CLIP).ln()));
                    }
                }
            }
        }
        RateModel::PowerLaw => {
            let use_subopt = traj
                .records
                .iter()
                .filter(|r| r.t >= window_lo.max(1))
                .all(|r| matches!(r.subopt, Some(s) if s > 0.0));
            for r in &traj.records {
                if r.t < window_lo.max(1) {
                    continue;
                }
                let metric = if use_subopt { r.subopt.unwrap() } else { r.grad_norm_sq };
                if metric > 0.0 {
                    points.push(((r.t as f64).ln(), metric.max(SUBOPT_CLIP).ln()));
                }
            }
        }
    }
    if points.len() < 10 {
        return Err(FedError::RateFitUnavailable(format!(
            "only {} usable records in the fit window",
            points.len()
        )));
    }
    Ok(slope_r2(&points))
}

/// Per-iteration mean and standard error over a seed ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleRecord {
    pub t: usize,
    pub f_bar: (f64, f64),
    pub subopt: Option<(f64, f64)>,
    pub grad_norm_sq: (f64, f64),
    pub consensus: (f64, f64),
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub records: Vec<EnsembleRecord>,
    pub runs: usize,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Averages trajectories that share a config except for the seed.
pub fn ensemble_mean(trajectories: &[Trajectory]) -> Result<EnsembleStats> {
    if trajectories.len() < 2 {
        return Err(FedError::invalid("ensemble needs at least 2 trajectories"));
    }
    let len = trajectories[0].records.len();
    if trajectories.iter().any(|t| t.records.len() != len) {
        return Err(FedError::invalid("trajectories have mismatched lengths"));
    }
    let mut records = Vec::with_capacity(len);
    for i in 0..len {
        let t = trajectories[0].records[i].t;
        if trajectories.iter().any(|tr| tr.records[i].t != t) {
            return Err(FedError::invalid("trajectories have mismatched iteration indices"));
        }
        let col = |f: fn(&TrajectoryRecord) -> f64| -> Vec<f64> {
            trajectories.iter().map(|tr| f(&tr.records[i])).collect()
        };
        let subopts: Option<Vec<f64>> = trajectories
            .iter()
            .map(|tr| tr.records[i].subopt)
            .collect();
        records.push(EnsembleRecord {
            t,
            f_bar: mean_se(&col(|r| r.f_bar)),
            subopt: subopts.map(|v| mean_se(&v)),
            grad_norm_sq: mean_se(&col(|r| r.grad_norm_sq)),
            consensus: mean_se(&col(|r| r.consensus)),
            eta: trajectories[0].records[i].eta,
        });
    }
    Ok(EnsembleStats {
        records,
        runs: trajectories.len(),
    })
}

impl EnsembleStats {
    /// Means repackaged as a trajectory so the rate fitters apply.
    pub fn mean_trajectory(&self) -> Trajectory {
        Trajectory {
            records: self
                .records
                .iter()
                .map(|r| TrajectoryRecord {
                    t: r.t,
                    f_bar: r.f_bar.0,
                    subopt: r.subopt.map(|s| s.0),
                    grad_norm_sq: r.grad_norm_sq.0,
                    consensus: r.consensus.0,
                    diversity: None,
                    eta: r.eta,
                })
                .collect(),
            status: RunStatus::Completed,
        }
    }
}

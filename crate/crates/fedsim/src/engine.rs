//! Execution of the three local-descent algorithms.
//!
//! Rounds: round r spans iterations [rE, (r+1)E). Every device takes local
//! steps at each iteration of the round except the last, where the models
//! are combined: server variants average the sampled devices' updated
//! models and broadcast the result to everyone; the networked variant mixes
//! each device with its neighbors. This indexing makes E = 1 coincide with
//! fully synchronous descent.
//!
//! Devices are agnostic to sampling: every device computes and applies its
//! local update each iteration, and the sampled multiset only decides whose
//! models enter the aggregation average.

use crate::error::{FedError, Result};
use crate::metrics::{record_point, Trajectory, TrajectoryRecord, DIVERGENCE_NORM};
use crate::model::{weighted_sum, ModelVector};
use crate::problem::FederatedProblem;
use crate::sampling::{sample_devices, stochastic_gradient, DeviceSample, RngStream};
use crate::topology::MixingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Lfgd,
    Lfsgd,
    Nfsgd,
}

/// Step-size schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum LearningRateSchedule {
    Constant { eta: f64 },
    /// eta_t = 4 / (mu (t + a)) with a = alpha E + 4.
    PlDecay { mu: f64, alpha: f64, e: usize },
}

impl LearningRateSchedule {
    pub fn eta(&self, t: usize) -> f64 {
        match self {
            LearningRateSchedule::Constant { eta } => *eta,
            LearningRateSchedule::PlDecay { mu, alpha, e } => {
                let a = alpha * *e as f64 + 4.0;
                4.0 / (mu * (t as f64 + a))
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, LearningRateSchedule::Constant { .. })
    }

    fn validate(&self) -> Result<()> {
        match self {
            LearningRateSchedule::Constant { eta } => {
                if !(eta.is_finite() && *eta > 0.0) {
                    return Err(FedError::invalid("constant eta must be positive"));
                }
            }
            LearningRateSchedule::PlDecay { mu, alpha, e } => {
                if !(mu.is_finite() && *mu > 0.0) {
                    return Err(FedError::invalid("pl_decay needs a positive mu"));
                }
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(FedError::invalid("pl_decay needs a positive alpha"));
                }
                if *e < 1 {
                    return Err(FedError::invalid("pl_decay needs E >= 1"));
                }
                // The offset a = alpha E + 4 is tied to the averaging period.
            }
        }
        Ok(())
    }
}

/// Maintenance rule for the controlled-averaging corrections c_j.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ControlledAveraging {
    #[default]
    Off,
    /// User-supplied corrections, held fixed for the whole run.
    Frozen(Vec<ModelVector>),
    /// c_j is device j's mean direction over the previous round
    /// (zero during the first round).
    PrevRoundMean,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Local updates per communication round.
    pub e: usize,
    /// Devices aggregated per round. K = p means full participation;
    /// K < p draws K devices with replacement according to q each round.
    pub k: usize,
    /// Total iterations.
    pub t: usize,
    /// Minibatch size for stochastic directions.
    pub b: usize,
    pub lr: LearningRateSchedule,
    pub topology: Option<MixingMatrix>,
    pub controlled_averaging: ControlledAveraging,
    pub seed: u64,
    pub w0: ModelVector,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, e: usize, k: usize, t: usize, w0: ModelVector) -> Self {
        RunConfig {
            algorithm,
            e,
            k,
            t,
            b: 1,
            lr: LearningRateSchedule::Constant { eta: 0.1 },
            topology: None,
            controlled_averaging: ControlledAveraging::Off,
            seed: 0,
            w0,
        }
    }
}

/// Per-device models plus correction state.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub models: Vec<ModelVector>,
    pub corrections: Vec<ModelVector>,
    pub iteration: usize,
}

/// One local update: w_j <- w_j - eta * direction. Exactly one device moves.
pub fn local_step(
    state: &mut WorkerState,
    j: usize,
    direction: &ModelVector,
    eta: f64,
) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(FedError::invalid("eta must be positive"));
    }
    direction.check_dim(state.models[j].dim())?;
    if !direction.is_finite() {
        return Err(FedError::NumericalDivergence {
            t: state.iteration,
            device: j,
        });
    }
    state.models[j].axpy(-eta, direction);
    Ok(())
}

/// Server aggregation: averages [w_j - eta d_j] over the sampled multiset
/// (duplicates counted per multiplicity) and broadcasts the result to every
/// device. Returns the new shared model.
pub fn aggregate_and_broadcast(
    state: &mut WorkerState,
    sample: &DeviceSample,
    directions: &[ModelVector],
    eta: f64,
) -> Result<ModelVector> {
    if sample.is_empty() {
        return Err(FedError::invalid("aggregation needs a non-empty device sample"));
    }
    let dim = state.models[0].dim();
    let mut avg = ModelVector::zeros(dim);
    for &j in sample.members() {
        avg.axpy(1.0, &state.models[j]);
        avg.axpy(-eta, &directions[j]);
    }
    avg.scale(1.0 / sample.len() as f64);
    for m in &mut state.models {
        *m = avg.clone();
    }
    Ok(avg)
}

/// Controlled-averaging correction: each direction becomes
/// g_j - c_j + (1/p) sum_i c_i. The direction sum is preserved exactly.
pub fn apply_controlled_averaging(
    directions: &[ModelVector],
    corrections: &[ModelVector],
) -> Vec<ModelVector> {
    debug_assert_eq!(directions.len(), corrections.len());
    let p = directions.len();
    let dim = directions.first().map_or(0, ModelVector::dim);
    let mut c_mean = ModelVector::zeros(dim);
    for c in corrections {
        c_mean.axpy(1.0 / p as f64, c);
    }
    directions
        .iter()
        .zip(corrections)
        .map(|(g, c)| {
            let mut out = g.clone();
            out.axpy(-1.0, c);
            out.axpy(1.0, &c_mean);
            out
        })
        .collect()
}

/// A stepping simulation of one configured run. `run_lfgd` and friends wrap
/// this; tests and bindings can drive it iteration by iteration and inspect
/// the worker state.
pub struct Simulation<'a> {
    problem: &'a FederatedProblem,
    config: RunConfig,
    state: WorkerState,
    /// Sample for the round currently in progress (server algorithms).
    round_sample: Option<(usize, DeviceSample)>,
    /// Direction accumulators for the PrevRoundMean correction rule.
    round_dir_sums: Vec<ModelVector>,
}

impl<'a> Simulation<'a> {
    pub fn new(problem: &'a FederatedProblem, config: RunConfig) -> Result<Self> {
        let p = problem.num_devices();
        let d = problem.dim();
        config.w0.check_dim(d)?;
        if !config.w0.is_finite() {
            return Err(FedError::invalid("w0 must be finite"));
        }
        if config.e < 1 {
            return Err(FedError::invalid("E must be at least 1"));
        }
        if config.k < 1 || config.k > p {
            return Err(FedError::invalid(format!(
                "K must lie in [1, p] (K = {}, p = {p})",
                config.k
            )));
        }
        config.lr.validate()?;
        if let LearningRateSchedule::PlDecay { e, .. } = &config.lr {
            if *e != config.e {
                return Err(FedError::invalid(
                    "pl_decay schedule built for a different averaging period",
                ));
            }
        }
        match config.algorithm {
            Algorithm::Lfgd => {
                if !config.lr.is_constant() {
                    return Err(FedError::invalid("the full-gradient variant uses a constant rate"));
                }
            }
            Algorithm::Lfsgd => {
                check_batch(problem, config.b)?;
            }
            Algorithm::Nfsgd => {
                if !config.lr.is_constant() {
                    return Err(FedError::invalid("the networked variant uses a constant rate"));
                }
                check_batch(problem, config.b)?;
                let topo = config
                    .topology
                    .as_ref()
                    .ok_or_else(|| FedError::invalid("the networked variant needs a topology"))?;
                if topo.size() != p {
                    return Err(FedError::invalid(format!(
                        "topology is {}x{} but the problem has p = {p}",
                        topo.size(),
                        topo.size()
                    )));
                }
                if config.k != p {
                    return Err(FedError::invalid(
                        "no sampling in the networked variant: K must equal p",
                    ));
                }
                if problem.weights().iter().any(|&q| q <= 0.0) {
                    return Err(FedError::invalid(
                        "the networked variant needs strictly positive weights",
                    ));
                }
            }
        }
        if let ControlledAveraging::Frozen(c) = &config.controlled_averaging {
            if c.len() != p || c.iter().any(|v| v.dim() != d) {
                return Err(FedError::invalid("need one correction of dimension d per device"));
            }
        }

        // Every device starts from the same point.
        let state = WorkerState {
            models: vec![config.w0.clone(); p],
            corrections: vec![ModelVector::zeros(d); p],
            iteration: 0,
        };
        Ok(Simulation {
            problem,
            config,
            state,
            round_sample: None,
            round_dir_sums: vec![ModelVector::zeros(d); p],
        })
    }

    pub fn state(&self) -> &WorkerState {
        &self.state
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    /// The multiset averaged at the end of round `round`. Full participation
    /// when K = p; otherwise K categorical draws keyed by (seed, round).
    pub fn round_sample(&mut self, round: usize) -> Result<&DeviceSample> {
        let p = self.problem.num_devices();
        let needs = match &self.round_sample {
            Some((r, _)) => *r != round,
            None => true,
        };
        if needs {
            let sample = if self.config.k == p {
                DeviceSample::full(p)
            } else {
                let mut rng = RngStream::device_selection(self.config.seed, round);
                sample_devices(&mut rng, self.problem.weights(), self.config.k)?
            };
            self.round_sample = Some((round, sample));
        }
        Ok(&self.round_sample.as_ref().unwrap().1)
    }

    /// The analysis-side average: over the current round's sampled multiset
    /// for the server algorithms, q-weighted over all devices for the
    /// networked one. Physically realized only at communication rounds.
    pub fn virtual_average(&mut self) -> Result<ModelVector> {
        match self.config.algorithm {
            Algorithm::Nfsgd => Ok(weighted_sum(&self.state.models, self.problem.weights())),
            Algorithm::Lfgd | Algorithm::Lfsgd => {
                let round = self.state.iteration / self.config.e;
                let sample = self.round_sample(round)?.clone();
                let mut avg = ModelVector::zeros(self.problem.dim());
                for &j in sample.members() {
                    avg.axpy(1.0, &self.state.models[j]);
                }
                avg.scale(1.0 / sample.len() as f64);
                Ok(avg)
            }
        }
    }

    fn directions(&self, t: usize) -> Result<Vec<ModelVector>> {
        let p = self.problem.num_devices();
        (0..p)
            .map(|j| match self.config.algorithm {
                Algorithm::Lfgd => self.problem.local_gradient(j, &self.state.models[j]),
                Algorithm::Lfsgd | Algorithm::Nfsgd => {
                    let mut rng = RngStream::minibatch(self.config.seed, j, t);
                    stochastic_gradient(
                        self.problem,
                        j,
                        &self.state.models[j],
                        self.config.b,
                        &mut rng,
                    )
                }
            })
            .collect()
    }

    /// Advances one iteration. A divergence error leaves the state at the
    /// offending iteration; the run wrappers turn it into a flagged
    /// partial trajectory.
    pub fn step(&mut self) -> Result<()> {
        let t = self.state.iteration;
        let e = self.config.e;
        let eta = self.config.lr.eta(t);
        let p = self.problem.num_devices();

        let mut dirs = self.directions(t)?;
        for (j, d) in dirs.iter().enumerate() {
            if !d.is_finite() {
                return Err(FedError::NumericalDivergence { t, device: j });
            }
        }
        match &self.config.controlled_averaging {
            ControlledAveraging::Off => {}
            ControlledAveraging::Frozen(c) => {
                dirs = apply_controlled_averaging(&dirs, c);
            }
            ControlledAveraging::PrevRoundMean => {
                for (sum, d) in self.round_dir_sums.iter_mut().zip(&dirs) {
                    sum.axpy(1.0, d);
                }
                dirs = apply_controlled_averaging(&dirs, &self.state.corrections);
            }
        }

        let communicate = (t + 1) % e == 0;
        match self.config.algorithm {
            Algorithm::Lfgd | Algorithm::Lfsgd => {
                if communicate {
                    let round = t / e;
                    let sample = self.round_sample(round)?.clone();
                    aggregate_and_broadcast(&mut self.state, &sample, &dirs, eta)?;
                } else {
                    for j in 0..p {
                        local_step(&mut self.state, j, &dirs[j], eta)?;
                    }
                }
            }
            Algorithm::Nfsgd => {
                if communicate {
                    self.mix(&dirs, eta);
                } else {
                    for j in 0..p {
                        local_step(&mut self.state, j, &dirs[j], eta)?;
                    }
                }
            }
        }

        if communicate {
            if let ControlledAveraging::PrevRoundMean = self.config.controlled_averaging {
                for (c, sum) in self.state.corrections.iter_mut().zip(&mut self.round_dir_sums) {
                    *c = sum.scaled(1.0 / e as f64);
                    sum.scale(0.0);
                }
            }
        }

        for (j, m) in self.state.models.iter().enumerate() {
            if !m.is_finite() || m.norm() > DIVERGENCE_NORM {
                return Err(FedError::NumericalDivergence { t, device: j });
            }
        }
        self.state.iteration += 1;
        Ok(())
    }

    /// Gossip step: w_i <- (1/q_i) sum_j q_j (w_j - eta d_j) W_ji.
    ///
    /// This is the matrix form with q-scaled columns; row sums of W equal to
    /// one make it preserve the weighted average exactly. For uniform
    /// weights it is plain neighbor averaging of the updated models.
    fn mix(&mut self, dirs: &[ModelVector], eta: f64) {
        let w = self.config.topology.as_ref().expect("validated at construction");
        let q = self.problem.weights();
        let p = q.len();
        let dim = self.problem.dim();
        let updated: Vec<ModelVector> = (0..p)
            .map(|j| {
                let mut u = self.state.models[j].clone();
                u.axpy(-eta, &dirs[j]);
                u
            })
            .collect();
        let mut next = Vec::with_capacity(p);
        for i in 0..p {
            let mut acc = ModelVector::zeros(dim);
            for (j, u) in updated.iter().enumerate() {
                let wij = w.get(j, i);
                if wij != 0.0 {
                    acc.axpy(q[j] * wij, u);
                }
            }
            acc.scale(1.0 / q[i]);
            next.push(acc);
        }
        self.state.models = next;
    }

    fn record(&mut self) -> Result<TrajectoryRecord> {
        let t = self.state.iteration;
        let eta = self.config.lr.eta(t);
        let w_bar = self.virtual_average()?;
        record_point(self.problem, t, &w_bar, &self.state.models, eta)
    }

    /// Runs to config.t iterations, recording metrics at every iteration.
    pub fn run(mut self) -> Result<Trajectory> {
        let mut records = vec![self.record()?];
        let mut status = crate::metrics::RunStatus::Completed;
        while self.state.iteration < self.config.t {
            match self.step() {
                Ok(()) => records.push(self.record()?),
                Err(FedError::NumericalDivergence { t, .. }) => {
                    status = crate::metrics::RunStatus::Diverged { t };
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Trajectory { records, status })
    }
}

fn check_batch(problem: &FederatedProblem, b: usize) -> Result<()> {
    if b < 1 {
        return Err(FedError::invalid("batch size must be at least 1"));
    }
    for j in 0..problem.num_devices() {
        let n = problem.objective(j).sample_count();
        if b > n {
            return Err(FedError::invalid(format!(
                "batch size {b} exceeds shard size {n} on device {j}"
            )));
        }
    }
    Ok(())
}

fn expect_algorithm(config: &RunConfig, algorithm: Algorithm) -> Result<()> {
    if config.algorithm != algorithm {
        return Err(FedError::invalid("config built for a different algorithm"));
    }
    Ok(())
}

/// Local full-gradient descent with periodic averaging.
pub fn run_lfgd(problem: &FederatedProblem, config: RunConfig) -> Result<Trajectory> {
    expect_algorithm(&config, Algorithm::Lfgd)?;
    Simulation::new(problem, config)?.run()
}

/// Local minibatch SGD with periodic averaging and device sampling.
pub fn run_lfsgd(problem: &FederatedProblem, config: RunConfig) -> Result<Trajectory> {
    expect_algorithm(&config, Algorithm::Lfsgd)?;
    Simulation::new(problem, config)?.run()
}

/// Networked local SGD with neighbor mixing.
pub fn run_nfsgd(problem: &FederatedProblem, config: RunConfig) -> Result<Trajectory> {
    expect_algorithm(&config, Algorithm::Nfsgd)?;
    Simulation::new(problem, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{make_synthetic_problem, two_point_quadratic, SyntheticSpec};
    use crate::topology::{make_topology, TopologyKind};

    fn lfgd_config(e: usize, k: usize, t: usize, eta: f64, d: usize) -> RunConfig {
        let mut cfg = RunConfig::new(Algorithm::Lfgd, e, k, t, ModelVector::zeros(d));
        cfg.lr = LearningRateSchedule::Constant { eta };
        cfg
    }

    #[test]
    fn local_step_zero_direction_no_move() {
        let mut state = WorkerState {
            models: vec![ModelVector::from_vec(vec![1.0, 2.0]); 2],
            corrections: vec![],
            iteration: 0,
        };
        local_step(&mut state, 0, &ModelVector::zeros(2), 0.5).unwrap();
        assert_eq!(state.models[0].as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn local_step_arithmetic() {
        let mut state = WorkerState {
            models: vec![ModelVector::zeros(2); 2],
            corrections: vec![],
            iteration: 0,
        };
        local_step(&mut state, 0, &ModelVector::from_vec(vec![-1.0, 0.0]), 0.5).unwrap();
        assert_eq!(state.models[0].as_slice(), &[0.5, 0.0]);
        assert_eq!(state.models[1].as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn local_step_descends_quadratic_below_critical_rate() {
        let problem = two_point_quadratic();
        let w = ModelVector::from_vec(vec![0.4, -0.7]);
        let mut state = WorkerState {
            models: vec![w.clone(), w.clone()],
            corrections: vec![],
            iteration: 0,
        };
        let before = problem.local_value(0, &state.models[0]).unwrap();
        let g = problem.local_gradient(0, &state.models[0]).unwrap();
        local_step(&mut state, 0, &g, 1.5).unwrap(); // eta < 2/L = 2
        let after = problem.local_value(0, &state.models[0]).unwrap();
        assert!(after < before);
    }

    #[test]
    fn local_step_rejects_non_finite_direction() {
        let mut state = WorkerState {
            models: vec![ModelVector::zeros(1)],
            corrections: vec![],
            iteration: 7,
        };
        let err = local_step(&mut state, 0, &ModelVector::from_vec(vec![f64::NAN]), 0.1);
        assert!(matches!(
            err,
            Err(FedError::NumericalDivergence { t: 7, device: 0 })
        ));
    }

    #[test]
    fn aggregate_identity_when_directions_zero() {
        let w = ModelVector::from_vec(vec![1.0, -1.0]);
        let mut state = WorkerState {
            models: vec![w.clone(), w.clone()],
            corrections: vec![],
            iteration: 0,
        };
        let sample = DeviceSample::full(2);
        let dirs = vec![ModelVector::zeros(2), ModelVector::zeros(2)];
        let avg = aggregate_and_broadcast(&mut state, &sample, &dirs, 0.5).unwrap();
        assert_eq!(avg.as_slice(), w.as_slice());
        assert_eq!(state.models[1].as_slice(), w.as_slice());
    }

    #[test]
    fn aggregate_single_step_hand_simulation() {
        // p = 2, w0 = 0, gradients w - b_j = (-1,0) and (1,0), eta = 0.5:
        // updates (0.5,0) and (-0.5,0) average to the origin.
        let problem = two_point_quadratic();
        let mut state = WorkerState {
            models: vec![ModelVector::zeros(2), ModelVector::zeros(2)],
            corrections: vec![],
            iteration: 0,
        };
        let dirs: Vec<ModelVector> = (0..2)
            .map(|j| problem.local_gradient(j, &state.models[j]).unwrap())
            .collect();
        let avg =
            aggregate_and_broadcast(&mut state, &DeviceSample::full(2), &dirs, 0.5).unwrap();
        assert!(avg.norm() < 1e-15);
    }

    #[test]
    fn aggregate_duplicate_sample_counts_twice() {
        let mut state = WorkerState {
            models: vec![
                ModelVector::from_vec(vec![1.0, 0.0]),
                ModelVector::from_vec(vec![9.0, 9.0]),
            ],
            corrections: vec![],
            iteration: 0,
        };
        // Multiset {0, 0}: the broadcast equals device 0's update exactly.
        let mut rng = RngStream::device_selection(1, 0);
        let sample = sample_devices(&mut rng, &[1.0, 0.0], 2).unwrap();
        let dirs = vec![
            ModelVector::from_vec(vec![0.5, 0.0]),
            ModelVector::from_vec(vec![1.0, 1.0]),
        ];
        let avg = aggregate_and_broadcast(&mut state, &sample, &dirs, 1.0).unwrap();
        assert_eq!(avg.as_slice(), &[0.5, 0.0]);
        assert_eq!(state.models[1].as_slice(), &[0.5, 0.0]);
    }

    #[test]
    fn controlled_averaging_zero_corrections_identity() {
        let dirs = vec![
            ModelVector::from_vec(vec![1.0, 2.0]),
            ModelVector::from_vec(vec![-1.0, 0.5]),
        ];
        let c = vec![ModelVector::zeros(2), ModelVector::zeros(2)];
        assert_eq!(apply_controlled_averaging(&dirs, &c), dirs);
    }

    #[test]
    fn controlled_averaging_centering_collapses_directions() {
        // c_j = g_j - mean(g) makes every corrected direction the mean.
        let dirs = vec![
            ModelVector::from_vec(vec![2.0, 0.0]),
            ModelVector::from_vec(vec![0.0, 2.0]),
            ModelVector::from_vec(vec![1.0, 1.0]),
        ];
        let mean = ModelVector::from_vec(vec![1.0, 1.0]);
        let c: Vec<ModelVector> = dirs.iter().map(|g| g.sub(&mean)).collect();
        let out = apply_controlled_averaging(&dirs, &c);
        for o in &out {
            assert!(o.dist_sq(&mean) < 1e-28);
        }
    }

    #[test]
    fn controlled_averaging_preserves_direction_sum() {
        let mut rng = RngStream::generator(12, 0);
        let dirs: Vec<ModelVector> = (0..4)
            .map(|_| ModelVector::from_vec((0..3).map(|_| rng.next_normal()).collect()))
            .collect();
        let c: Vec<ModelVector> = (0..4)
            .map(|_| ModelVector::from_vec((0..3).map(|_| rng.next_normal()).collect()))
            .collect();
        let out = apply_controlled_averaging(&dirs, &c);
        let sum_before = weighted_sum(&dirs, &[1.0; 4]);
        let sum_after = weighted_sum(&out, &[1.0; 4]);
        assert!(sum_before.dist_sq(&sum_after) < 1e-24);
    }

    #[test]
    fn controlled_averaging_pairwise_reduction_under_condition() {
        let mut rng = RngStream::generator(13, 0);
        for _ in 0..50 {
            let dirs: Vec<ModelVector> = (0..3)
                .map(|_| ModelVector::from_vec((0..2).map(|_| rng.next_normal()).collect()))
                .collect();
            let c: Vec<ModelVector> = (0..3)
                .map(|_| ModelVector::from_vec((0..2).map(|_| 0.5 * rng.next_normal()).collect()))
                .collect();
            let out = apply_controlled_averaging(&dirs, &c);
            for i in 0..3 {
                for j in (i + 1)..3 {
                    let dg = dirs[j].sub(&dirs[i]);
                    let dc = c[j].sub(&c[i]);
                    let condition = dc.norm_sq() - 2.0 * dg.dot(&dc) <= 0.0;
                    if condition {
                        let before = dg.norm_sq();
                        let after = out[j].sub(&out[i]).norm_sq();
                        assert!(after <= before + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn broadcast_restart_consensus_zero_each_round() {
        let problem = two_point_quadratic();
        let cfg = lfgd_config(4, 2, 40, 0.05, 2);
        let traj = run_lfgd(&problem, cfg).unwrap();
        for r in &traj.records {
            if r.t % 4 == 0 {
                assert_eq!(r.consensus, 0.0, "t = {}", r.t);
            }
        }
    }

    #[test]
    fn homogeneous_problem_zero_consensus_everywhere() {
        let problem = make_synthetic_problem(&SyntheticSpec::quadratic(3, 2, 0.0, 5)).unwrap();
        let mut cfg = lfgd_config(5, 3, 30, 0.1, 2);
        cfg.w0 = ModelVector::from_vec(vec![1.0, -2.0]);
        let traj = run_lfgd(&problem, cfg).unwrap();
        for r in &traj.records {
            assert!(r.consensus < 1e-28);
        }
    }

    #[test]
    fn lfgd_e1_kp_matches_sync_oracle() {
        let problem = two_point_quadratic();
        let mut cfg = lfgd_config(1, 2, 50, 0.3, 2);
        cfg.w0 = ModelVector::from_vec(vec![0.2, 1.0]);
        let mut sim = Simulation::new(&problem, cfg).unwrap();
        let oracle =
            crate::metrics::sync_gd_iterates(&problem, 0.3, 50, &ModelVector::from_vec(vec![0.2, 1.0]))
                .unwrap();
        for step in 0..50 {
            let w_bar = sim.virtual_average().unwrap();
            for (a, b) in w_bar.as_slice().iter().zip(oracle[step].as_slice()) {
                assert!((a - b).abs() <= 1e-12);
            }
            sim.step().unwrap();
        }
    }

    #[test]
    fn lfsgd_full_batch_equals_lfgd() {
        let problem =
            make_synthetic_problem(&SyntheticSpec::least_squares(3, 2, 1.0, 0.5, 8)).unwrap();
        let mut gd = lfgd_config(4, 3, 60, 0.05, 2);
        gd.seed = 11;
        let mut sgd = gd.clone();
        sgd.algorithm = Algorithm::Lfsgd;
        sgd.b = problem.objective(0).sample_count();
        let a = run_lfgd(&problem, gd).unwrap();
        let b = run_lfsgd(&problem, sgd).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert!((x.f_bar - y.f_bar).abs() <= 1e-12);
        }
    }

    #[test]
    fn identical_config_identical_trajectory() {
        let problem =
            make_synthetic_problem(&SyntheticSpec::least_squares(4, 3, 1.0, 0.5, 21)).unwrap();
        let mut cfg = RunConfig::new(Algorithm::Lfsgd, 3, 2, 45, ModelVector::zeros(3));
        cfg.lr = LearningRateSchedule::Constant { eta: 0.05 };
        cfg.seed = 99;
        let a = run_lfsgd(&problem, cfg.clone()).unwrap();
        let b = run_lfsgd(&problem, cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nfsgd_complete_uniform_collapses_to_full_averaging() {
        let problem =
            make_synthetic_problem(&SyntheticSpec::least_squares(4, 2, 1.0, 0.3, 31)).unwrap();
        let topo = make_topology(&TopologyKind::Complete, 4).unwrap();
        let mut cfg = RunConfig::new(Algorithm::Nfsgd, 2, 4, 20, ModelVector::zeros(2));
        cfg.lr = LearningRateSchedule::Constant { eta: 0.1 };
        cfg.topology = Some(topo);
        cfg.seed = 5;
        let mut sim = Simulation::new(&problem, cfg).unwrap();
        for _ in 0..20 {
            sim.step().unwrap();
            if sim.iteration() % 2 == 0 {
                let first = sim.state().models[0].clone();
                for m in &sim.state().models {
                    assert!(m.dist_sq(&first) < 1e-24);
                }
            }
        }
    }

    #[test]
    fn nfsgd_weighted_average_identity_at_mixing_steps() {
        // w_bar after a mixing step equals w_bar - eta * weighted direction
        // sum computed before it, for non-uniform weights too.
        let problem = {
            let mut spec = SyntheticSpec::least_squares(3, 2, 1.0, 0.4, 17);
            spec.weights = crate::problem::WeightsRule::Explicit(vec![0.5, 0.3, 0.2]);
            make_synthetic_problem(&spec).unwrap()
        };
        let topo = make_topology(&TopologyKind::Ring { self_weight: 0.4 }, 3).unwrap();
        let mut cfg = RunConfig::new(Algorithm::Nfsgd, 3, 3, 9, ModelVector::zeros(2));
        cfg.lr = LearningRateSchedule::Constant { eta: 0.05 };
        cfg.topology = Some(topo);
        cfg.seed = 2;
        let mut sim = Simulation::new(&problem, cfg).unwrap();
        let q = problem.weights().to_vec();
        for t in 0..9usize {
            let before = weighted_sum(&sim.state().models, &q);
            let dirs = sim.directions(t).unwrap();
            let gbar = weighted_sum(&dirs, &q);
            sim.step().unwrap();
            if t % 3 == 2 {
                let after = weighted_sum(&sim.state().models, &q);
                let mut expect = before.clone();
                expect.axpy(-0.05, &gbar);
                assert!(
                    after.dist_sq(&expect) < 1e-20,
                    "mixing step broke the weighted-average identity at t = {t}"
                );
            }
        }
    }

    #[test]
    fn divergence_guard_flags_partial_trajectory() {
        let problem = two_point_quadratic();
        // eta far above 2/L blows up the quadratic dynamics.
        let cfg = lfgd_config(1, 2, 500, 25.0, 2);
        let traj = run_lfgd(&problem, {
            let mut c = cfg;
            c.w0 = ModelVector::from_vec(vec![1.0, 1.0]);
            c
        })
        .unwrap();
        assert!(traj.diverged());
        assert!(traj.records.len() < 501);
    }

    #[test]
    fn nfsgd_config_validation() {
        let problem = two_point_quadratic();
        let mut cfg = RunConfig::new(Algorithm::Nfsgd, 2, 2, 10, ModelVector::zeros(2));
        cfg.lr = LearningRateSchedule::Constant { eta: 0.1 };
        // Missing topology.
        assert!(Simulation::new(&problem, cfg.clone()).is_err());
        cfg.topology = Some(make_topology(&TopologyKind::Complete, 2).unwrap());
        cfg.k = 1; // sampling is not allowed
        assert!(Simulation::new(&problem, cfg.clone()).is_err());
        cfg.k = 2;
        cfg.b = 5; // quadratic shards have a single sample
        assert!(Simulation::new(&problem, cfg.clone()).is_err());
        cfg.b = 1;
        assert!(Simulation::new(&problem, cfg).is_ok());
    }

    #[test]
    fn monotone_descent_on_homogeneous_pl_problem() {
        let problem = make_synthetic_problem(&SyntheticSpec::quadratic(4, 3, 0.0, 2)).unwrap();
        let report = crate::conditions::check_lfgd(1e-3, 4, 1.0, 1.0, 1.0).unwrap();
        let eta = 0.9 * report.max_eta.unwrap();
        let mut cfg = lfgd_config(4, 4, 100, eta, 3);
        cfg.w0 = ModelVector::from_vec(vec![2.0, -1.0, 0.5]);
        let traj = run_lfgd(&problem, cfg).unwrap();
        for pair in traj.records.windows(2) {
            assert!(pair[1].f_bar <= pair[0].f_bar * (1.0 + 1e-12));
        }
    }

    #[test]
    fn consensus_deviation_bound_holds_per_iteration() {
        // Full-participation run on a heterogeneous problem: the consensus
        // spread is bounded by 4E times the accumulated squared local
        // gradient norms since the round started.
        let problem = make_synthetic_problem(&SyntheticSpec::quadratic(4, 3, 2.0, 13)).unwrap();
        let e = 5usize;
        let eta = 0.02;
        let mut cfg = lfgd_config(e, 4, 40, eta, 3);
        cfg.w0 = ModelVector::from_vec(vec![0.5, 0.5, -0.5]);
        let mut sim = Simulation::new(&problem, cfg).unwrap();
        let q = problem.weights().to_vec();
        let mut grad_mass: Vec<f64> = Vec::new(); // sum_j q_j ||g_j(w_j^(k))||^2 per k
        for t in 0..40usize {
            let round_start = t / e * e;
            let w_bar = sim.virtual_average().unwrap();
            let consensus: f64 = sim
                .state()
                .models
                .iter()
                .zip(&q)
                .map(|(wj, &qj)| qj * w_bar.dist_sq(wj))
                .sum();
            let bound: f64 = 4.0
                * e as f64
                * eta
                * eta
                * grad_mass[round_start.min(grad_mass.len())..].iter().sum::<f64>();
            assert!(
                consensus <= bound + 1e-9,
                "t = {t}: consensus {consensus} > bound {bound}"
            );
            let mass: f64 = (0..4)
                .map(|j| {
                    q[j] * problem
                        .local_gradient(j, &sim.state().models[j])
                        .unwrap()
                        .norm_sq()
                })
                .sum();
            grad_mass.push(mass);
            sim.step().unwrap();
        }
    }

    #[test]
    fn pl_decay_schedule_values() {
        // eta_t = 4 / (mu (t + a)) with a = alpha E + 4.
        let lr = LearningRateSchedule::PlDecay {
            mu: 0.5,
            alpha: 2.0,
            e: 10,
        };
        let a = 2.0 * 10.0 + 4.0;
        for t in [0usize, 1, 7, 100] {
            let expect = 4.0 / (0.5 * (t as f64 + a));
            assert_eq!(lr.eta(t), expect);
            assert!(lr.eta(t) > 0.0);
        }
    }

    #[test]
    fn sampled_lfsgd_matches_full_participation_on_homogeneous_shards() {
        // Deterministic identical shards: every device computes the same
        // update, so the sampled average equals the full average exactly and
        // the seed-ensemble mean gap is zero (well within 3 standard errors).
        let problem = make_synthetic_problem(&SyntheticSpec::quadratic(4, 2, 0.0, 77)).unwrap();
        let run = |k: usize, seed: u64| {
            let mut cfg = RunConfig::new(Algorithm::Lfsgd, 3, k, 30, ModelVector::from_vec(vec![1.5, -0.5]));
            cfg.lr = LearningRateSchedule::Constant { eta: 0.1 };
            cfg.seed = seed;
            run_lfsgd(&problem, cfg).unwrap()
        };
        let mut gaps = Vec::new();
        for seed in 0..100u64 {
            let sampled = run(2, seed);
            let full = run(4, seed);
            for (a, b) in sampled.records.iter().zip(&full.records) {
                assert!(a.subopt.unwrap() >= -1e-9);
                assert!(b.subopt.unwrap() >= -1e-9);
            }
            gaps.push(sampled.last().subopt.unwrap() - full.last().subopt.unwrap());
        }
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let var = gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / 99.0;
        let se = (var / 100.0).sqrt();
        assert!(mean.abs() <= 3.0 * se.max(1e-15), "mean gap {mean}, se {se}");
    }

    #[test]
    fn prev_round_mean_corrections_update_each_round() {
        let problem = make_synthetic_problem(&SyntheticSpec::quadratic(3, 2, 1.0, 3)).unwrap();
        let mut cfg = lfgd_config(2, 3, 8, 0.05, 2);
        cfg.controlled_averaging = ControlledAveraging::PrevRoundMean;
        cfg.w0 = ModelVector::from_vec(vec![1.0, 1.0]);
        let mut sim = Simulation::new(&problem, cfg).unwrap();
        assert!(sim.state().corrections.iter().all(|c| c.norm() == 0.0));
        for _ in 0..2 {
            sim.step().unwrap();
        }
        // After the first round the corrections hold the round-mean
        // directions, which are non-zero away from the shard optima.
        assert!(sim.state().corrections.iter().any(|c| c.norm() > 0.0));
    }
}

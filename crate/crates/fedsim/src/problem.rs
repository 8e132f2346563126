//! Local objectives, the weighted global objective, gradient diversity and
//! synthetic problem generators.
//!
//! A [`FederatedProblem`] holds p local objectives f_j over per-device data
//! shards together with a weight vector q on the simplex. The global
//! objective is f(w) = sum_j q_j f_j(w). Constants that admit a closed form
//! (smoothness L, PL constant mu, optimum f*, minimizer w*) are computed at
//! construction when the aggregate is quadratic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::model::{weighted_sum, ModelVector};
use crate::sampling::{check_weights, RngStream};

/// Denominator floor for the gradient diversity ratio, in squared-norm
/// units. Below it the weighted mean gradient is treated as zero and
/// diversity is reported as an error rather than a huge ratio.
pub const DIVERSITY_FLOOR: f64 = 1e-24;

const PSD_TOL: f64 = 1e-9;
const SINGULAR_TOL: f64 = 1e-10;

/// One device's objective over its local data shard.
#[derive(Debug, Clone)]
pub enum ObjectiveKind {
    /// f(w) = 1/2 (w - b)^T A (w - b) with A symmetric PSD.
    Quadratic { a: DMatrix<f64>, b: ModelVector },
    /// f(w) = 1/(2n) ||X w - y||^2.
    LeastSquares { x: DMatrix<f64>, y: Vec<f64> },
    /// f(w) = 1/n sum_i log(1 + exp(-y_i x_i^T w)) + reg * sum_k w_k^2/(1+w_k^2).
    ///
    /// The second term is a smooth nonconvex regularizer; reg = 0 recovers
    /// plain logistic regression.
    Logistic { x: DMatrix<f64>, y: Vec<f64>, reg: f64 },
}

#[derive(Debug, Clone)]
pub struct LocalObjective {
    kind: ObjectiveKind,
    dim: usize,
    samples: usize,
    smoothness: f64,
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    // Symmetrize first so tiny asymmetries from construction round-off do
    // not disturb the tridiagonal QR path.
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().cloned().fold(f64::MIN, f64::max)
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LocalObjective {
    /// Quadratic objective 1/2 (w-b)^T A (w-b). A must be symmetric PSD.
    pub fn quadratic(a: DMatrix<f64>, b: ModelVector) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(FedError::invalid("quadratic matrix must be square"));
        }
        if a.nrows() != b.dim() {
            return Err(FedError::DimensionMismatch {
                expected: a.nrows(),
                got: b.dim(),
            });
        }
        let eigs = sym_eigenvalues(&a);
        let max = eigs.iter().cloned().fold(f64::MIN, f64::max);
        let min = eigs.iter().cloned().fold(f64::MAX, f64::min);
        if (&a - a.transpose()).abs().max() > PSD_TOL * max.abs().max(1.0) {
            return Err(FedError::invalid("quadratic matrix must be symmetric"));
        }
        if min < -PSD_TOL * max.abs().max(1.0) {
            return Err(FedError::invalid(format!(
                "quadratic matrix must be positive semidefinite (lambda_min = {min:.3e})"
            )));
        }
        let dim = a.nrows();
        Ok(LocalObjective {
            smoothness: max.max(0.0),
            kind: ObjectiveKind::Quadratic { a, b },
            dim,
            samples: 1,
        })
    }

    /// Isotropic quadratic 1/2 ||w - b||^2.
    pub fn shifted_quadratic(b: ModelVector) -> Self {
        let d = b.dim();
        LocalObjective {
            kind: ObjectiveKind::Quadratic {
                a: DMatrix::identity(d, d),
                b,
            },
            dim: d,
            samples: 1,
            smoothness: 1.0,
        }
    }

    pub fn least_squares(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(FedError::invalid("least-squares shard needs at least one sample"));
        }
        if y.len() != n {
            return Err(FedError::invalid("label count must match row count"));
        }
        let gram = x.transpose() * &x;
        let smoothness = lambda_max(&gram) / n as f64;
        Ok(LocalObjective {
            dim: x.ncols(),
            samples: n,
            smoothness,
            kind: ObjectiveKind::LeastSquares { x, y },
        })
    }

    pub fn logistic(x: DMatrix<f64>, y: Vec<f64>, reg: f64) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(FedError::invalid("logistic shard needs at least one sample"));
        }
        if y.len() != n {
            return Err(FedError::invalid("label count must match row count"));
        }
        if y.iter().any(|&l| l != 1.0 && l != -1.0) {
            return Err(FedError::invalid("logistic labels must be +1 or -1"));
        }
        if reg < 0.0 {
            return Err(FedError::invalid("regularizer weight must be non-negative"));
        }
        let gram = x.transpose() * &x;
        // Per-sample logistic curvature is at most 1/4; the rational
        // regularizer has second derivative bounded by 2.
        let smoothness = lambda_max(&gram) / (4.0 * n as f64) + 2.0 * reg;
        Ok(LocalObjective {
            dim: x.ncols(),
            samples: n,
            smoothness,
            kind: ObjectiveKind::Logistic { x, y, reg },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample_count(&self) -> usize {
        self.samples
    }

    /// Closed-form smoothness constant L_j.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn kind(&self) -> &ObjectiveKind {
        &self.kind
    }

    pub fn value(&self, w: &ModelVector) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic { a, b } => {
                let u = DVector::from_column_slice(w.sub(b).as_slice());
                0.5 * (&u.transpose() * a * &u)[(0, 0)]
            }
            ObjectiveKind::LeastSquares { x, y } => {
                let n = y.len() as f64;
                let mut acc = 0.0;
                for i in 0..y.len() {
                    let r = x.row(i).iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>()
                        - y[i];
                    acc += r * r;
                }
                acc / (2.0 * n)
            }
            ObjectiveKind::Logistic { x, y, reg } => {
                let n = y.len() as f64;
                let mut acc = 0.0;
                for i in 0..y.len() {
                    let z: f64 =
                        x.row(i).iter().zip(w.as_slice()).map(|(a, b)| a * b).sum();
                    acc += stable_softplus(-y[i] * z);
                }
                let mut r = 0.0;
                for &wk in w.as_slice() {
                    r += wk * wk / (1.0 + wk * wk);
                }
                acc / n + reg * r
            }
        }
    }

    /// Exact full-shard gradient.
    pub fn gradient(&self, w: &ModelVector) -> ModelVector {
        let mut out = ModelVector::zeros(self.dim);
        match &self.kind {
            ObjectiveKind::Quadratic { .. } => {
                self.add_sample_gradient(w, 0, 1.0, &mut out);
            }
            ObjectiveKind::LeastSquares { .. } | ObjectiveKind::Logistic { .. } => {
                let n = self.samples;
                for i in 0..n {
                    self.add_sample_gradient(w, i, 1.0 / n as f64, &mut out);
                }
                self.add_deterministic_gradient(w, &mut out);
            }
        }
        out
    }

    /// Adds `scale` times the gradient of the idx-th per-sample loss.
    pub fn add_sample_gradient(&self, w: &ModelVector, idx: usize, scale: f64, acc: &mut ModelVector) {
        match &self.kind {
            ObjectiveKind::Quadratic { a, b } => {
                debug_assert_eq!(idx, 0);
                let u = DVector::from_column_slice(w.sub(b).as_slice());
                let g = a * u;
                for (o, gi) in acc.0.iter_mut().zip(g.iter()) {
                    *o += scale * gi;
                }
            }
            ObjectiveKind::LeastSquares { x, y } => {
                let r = x.row(idx).iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>()
                    - y[idx];
                for (o, xi) in acc.0.iter_mut().zip(x.row(idx).iter()) {
                    *o += scale * r * xi;
                }
            }
            ObjectiveKind::Logistic { x, y, .. } => {
                let z: f64 = x.row(idx).iter().zip(w.as_slice()).map(|(a, b)| a * b).sum();
                let c = -y[idx] * sigmoid(-y[idx] * z);
                for (o, xi) in acc.0.iter_mut().zip(x.row(idx).iter()) {
                    *o += scale * c * xi;
                }
            }
        }
    }

    /// Adds the gradient of any non-finite-sum component (the logistic
    /// regularizer); included in every minibatch gradient.
    pub fn add_deterministic_gradient(&self, w: &ModelVector, acc: &mut ModelVector) {
        if let ObjectiveKind::Logistic { reg, .. } = &self.kind {
            if *reg > 0.0 {
                for (o, &wk) in acc.0.iter_mut().zip(w.as_slice()) {
                    let den = 1.0 + wk * wk;
                    *o += reg * 2.0 * wk / (den * den);
                }
            }
        }
    }

    /// Hessian contribution for quadratic-family objectives, None otherwise.
    fn quadratic_hessian(&self) -> Option<DMatrix<f64>> {
        match &self.kind {
            ObjectiveKind::Quadratic { a, .. } => Some(a.clone()),
            ObjectiveKind::LeastSquares { x, .. } => {
                Some(x.transpose() * x / self.samples as f64)
            }
            ObjectiveKind::Logistic { .. } => None,
        }
    }

    /// Right-hand side of the stationarity system for quadratic-family
    /// objectives (H_j w = rhs_j at the minimizer).
    fn quadratic_rhs(&self) -> Option<DVector<f64>> {
        match &self.kind {
            ObjectiveKind::Quadratic { a, b } => {
                Some(a * DVector::from_column_slice(b.as_slice()))
            }
            ObjectiveKind::LeastSquares { x, y } => {
                Some(x.transpose() * DVector::from_column_slice(y) / self.samples as f64)
            }
            ObjectiveKind::Logistic { .. } => None,
        }
    }
}

/// A federated optimization problem: p weighted local objectives.
#[derive(Debug, Clone)]
pub struct FederatedProblem {
    objectives: Vec<LocalObjective>,
    weights: Vec<f64>,
    dim: usize,
    smoothness: f64,
    pl_constant: Option<f64>,
    f_star: Option<f64>,
    w_star: Option<ModelVector>,
}

impl FederatedProblem {
    /// Builds a problem, validating the weights and computing closed-form
    /// constants where available.
    pub fn new(objectives: Vec<LocalObjective>, weights: Vec<f64>) -> Result<Self> {
        if objectives.is_empty() {
            return Err(FedError::invalid("problem needs at least one objective"));
        }
        if objectives.len() != weights.len() {
            return Err(FedError::invalid("one weight per objective required"));
        }
        check_weights(&weights)?;
        let dim = objectives[0].dim();
        if objectives.iter().any(|o| o.dim() != dim) {
            return Err(FedError::invalid("all objectives must share one dimension"));
        }
        let smoothness = objectives
            .iter()
            .map(LocalObjective::smoothness)
            .fold(0.0, f64::max);

        let mut problem = FederatedProblem {
            objectives,
            weights,
            dim,
            smoothness,
            pl_constant: None,
            f_star: None,
            w_star: None,
        };
        problem.derive_quadratic_constants();
        Ok(problem)
    }

    /// For all-quadratic problems: mu = lambda_min of the aggregate Hessian,
    /// w* solves the aggregate stationarity system, f* = f(w*).
    fn derive_quadratic_constants(&mut self) {
        let mut hessian = DMatrix::zeros(self.dim, self.dim);
        let mut rhs = DVector::zeros(self.dim);
        for (obj, &q) in self.objectives.iter().zip(&self.weights) {
            match (obj.quadratic_hessian(), obj.quadratic_rhs()) {
                (Some(h), Some(r)) => {
                    hessian += h * q;
                    rhs += r * q;
                }
                _ => return,
            }
        }
        let eigs = sym_eigenvalues(&hessian);
        let min = eigs.iter().cloned().fold(f64::MAX, f64::min);
        if min > SINGULAR_TOL {
            self.pl_constant = Some(min);
            if let Some(sol) = hessian.lu().solve(&rhs) {
                let w_star = ModelVector::from_vec(sol.iter().cloned().collect());
                self.f_star = Some(self.value(&w_star));
                self.w_star = Some(w_star);
            }
        }
    }

    /// Declares a PL constant for problems where it is known externally
    /// (non-quadratic objectives never get one automatically).
    pub fn with_pl_constant(mut self, mu: f64, f_star: f64) -> Self {
        self.pl_constant = Some(mu);
        self.f_star = Some(f_star);
        self
    }

    pub fn num_devices(&self) -> usize {
        self.objectives.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn objective(&self, j: usize) -> &LocalObjective {
        &self.objectives[j]
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn pl_constant(&self) -> Option<f64> {
        self.pl_constant
    }

    pub fn f_star(&self) -> Option<f64> {
        self.f_star
    }

    pub fn w_star(&self) -> Option<&ModelVector> {
        self.w_star.as_ref()
    }

    pub fn check_device(&self, j: usize) -> Result<()> {
        if j >= self.objectives.len() {
            return Err(FedError::invalid(format!(
                "device index {j} out of range (p = {})",
                self.objectives.len()
            )));
        }
        Ok(())
    }

    pub fn local_value(&self, j: usize, w: &ModelVector) -> Result<f64> {
        self.check_device(j)?;
        w.check_dim(self.dim)?;
        Ok(self.objectives[j].value(w))
    }

    /// Exact full-shard gradient of f_j at w. Deterministic.
    pub fn local_gradient(&self, j: usize, w: &ModelVector) -> Result<ModelVector> {
        self.check_device(j)?;
        w.check_dim(self.dim)?;
        Ok(self.objectives[j].gradient(w))
    }

    fn value(&self, w: &ModelVector) -> f64 {
        self.objectives
            .iter()
            .zip(&self.weights)
            .map(|(o, &q)| q * o.value(w))
            .sum()
    }

    /// f(w) and its gradient: the q-weighted aggregates of the locals.
    pub fn global_value_and_gradient(&self, w: &ModelVector) -> Result<(f64, ModelVector)> {
        w.check_dim(self.dim)?;
        let mut grad = ModelVector::zeros(self.dim);
        let mut value = 0.0;
        for (obj, &q) in self.objectives.iter().zip(&self.weights) {
            value += q * obj.value(w);
            grad.axpy(q, &obj.gradient(w));
        }
        Ok((value, grad))
    }

    /// All local gradients at a common point.
    pub fn local_gradients(&self, w: &ModelVector) -> Result<Vec<ModelVector>> {
        w.check_dim(self.dim)?;
        Ok(self.objectives.iter().map(|o| o.gradient(w)).collect())
    }

    /// Weighted gradient diversity of the local objectives at w.
    pub fn gradient_diversity(&self, w: &ModelVector) -> Result<f64> {
        let grads = self.local_gradients(w)?;
        weighted_diversity(&grads, &self.weights)
    }

    /// Max diversity over a non-empty probe set; the lambda fed to the
    /// condition checkers. Any degenerate probe propagates as an error.
    pub fn diversity_upper_bound(&self, probe_points: &[ModelVector]) -> Result<f64> {
        if probe_points.is_empty() {
            return Err(FedError::invalid("probe set must be non-empty"));
        }
        let mut max = f64::MIN;
        for w in probe_points {
            max = max.max(self.gradient_diversity(w)?);
        }
        Ok(max)
    }
}

/// Weighted diversity of an arbitrary family of direction vectors:
/// sum_j q_j ||v_j||^2 divided by ||sum_j q_j v_j||^2. Always at least 1 for
/// non-degenerate inputs by Cauchy-Schwarz with weights q.
pub fn weighted_diversity(vectors: &[ModelVector], weights: &[f64]) -> Result<f64> {
    if vectors.len() != weights.len() || vectors.is_empty() {
        return Err(FedError::invalid("one weight per vector required"));
    }
    let numerator: f64 = vectors
        .iter()
        .zip(weights)
        .map(|(v, &q)| q * v.norm_sq())
        .sum();
    let denominator = weighted_sum(vectors, weights).norm_sq();
    if denominator <= DIVERSITY_FLOOR {
        return Err(FedError::DegenerateDiversity { numerator });
    }
    Ok(numerator / denominator)
}

/// How device weights are assigned by the synthetic generators.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsRule {
    /// Named rule: "uniform" or "random".
    Named(String),
    /// Explicit simplex vector.
    Explicit(Vec<f64>),
}

impl Default for WeightsRule {
    fn default() -> Self {
        WeightsRule::Named("uniform".into())
    }
}

/// Specification of a synthetic problem; serializable as the `problem`
/// section of an experiment config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: String,
    pub p: usize,
    pub d: usize,
    pub knob: f64,
    #[serde(default)]
    pub weights: WeightsRule,
    pub seed: u64,
    /// least_squares: residual magnitude giving persistent gradient noise.
    #[serde(default)]
    pub noise: f64,
    /// logistic: samples per shard.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// logistic: weight of the nonconvex regularizer.
    #[serde(default)]
    pub reg: f64,
    /// quadratic: curvature spread; eigenvalues of the shared Hessian are
    /// spaced in [1, 1 + aniso].
    #[serde(default)]
    pub aniso: f64,
}

fn default_samples() -> usize {
    16
}

impl SyntheticSpec {
    pub fn quadratic(p: usize, d: usize, knob: f64, seed: u64) -> Self {
        SyntheticSpec {
            kind: "quadratic".into(),
            p,
            d,
            knob,
            weights: WeightsRule::default(),
            seed,
            noise: 0.0,
            samples: default_samples(),
            reg: 0.0,
            aniso: 0.0,
        }
    }

    pub fn least_squares(p: usize, d: usize, knob: f64, noise: f64, seed: u64) -> Self {
        SyntheticSpec {
            kind: "least_squares".into(),
            noise,
            ..Self::quadratic(p, d, knob, seed)
        }
    }

    pub fn logistic(p: usize, d: usize, knob: f64, samples: usize, reg: f64, seed: u64) -> Self {
        SyntheticSpec {
            kind: "logistic".into(),
            samples,
            reg,
            ..Self::quadratic(p, d, knob, seed)
        }
    }
}

fn resolve_weights(rule: &WeightsRule, p: usize, seed: u64) -> Result<Vec<f64>> {
    match rule {
        WeightsRule::Named(name) => match name.as_str() {
            "uniform" => Ok(vec![1.0 / p as f64; p]),
            "random" => {
                let mut rng = RngStream::generator(seed, 0xD1CE);
                let raw: Vec<f64> = (0..p).map(|_| 0.05 + rng.next_f64()).collect();
                let total: f64 = raw.iter().sum();
                Ok(raw.into_iter().map(|v| v / total).collect())
            }
            other => Err(FedError::invalid(format!("unknown weights rule '{other}'"))),
        },
        WeightsRule::Explicit(q) => {
            if q.len() != p {
                return Err(FedError::invalid("explicit weights must have length p"));
            }
            check_weights(q)?;
            Ok(q.clone())
        }
    }
}

fn unit_direction(rng: &mut RngStream, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Builds a synthetic heterogeneous problem with analytically known L (and,
/// for the quadratic family, mu, f* and w*).
///
/// The heterogeneity knob places shard centers on a sphere of radius `knob`
/// around a common center; knob = 0 yields identical shards on every kind.
/// Identical seeds yield bit-identical problems.
pub fn make_synthetic_problem(spec: &SyntheticSpec) -> Result<FederatedProblem> {
    if spec.p < 1 {
        return Err(FedError::invalid("p must be at least 1"));
    }
    if spec.d < 1 {
        return Err(FedError::invalid("d must be at least 1"));
    }
    if !spec.knob.is_finite() || spec.knob < 0.0 {
        return Err(FedError::invalid("heterogeneity knob must be finite and >= 0"));
    }
    let weights = resolve_weights(&spec.weights, spec.p, spec.seed)?;

    let objectives = match spec.kind.as_str() {
        "quadratic" => synth_quadratic(spec)?,
        "least_squares" => synth_least_squares(spec)?,
        "logistic" => synth_logistic(spec)?,
        other => return Err(FedError::invalid(format!("unknown problem kind '{other}'"))),
    };
    FederatedProblem::new(objectives, weights)
}

/// Shard centers on a sphere of radius knob (all zero when knob = 0).
fn shard_centers(spec: &SyntheticSpec) -> Vec<ModelVector> {
    (0..spec.p)
        .map(|j| {
            if spec.knob == 0.0 {
                ModelVector::zeros(spec.d)
            } else {
                let mut rng = RngStream::generator(spec.seed, 0xB000 + j as u64);
                let u = unit_direction(&mut rng, spec.d);
                ModelVector::from_vec(u.into_iter().map(|x| x * spec.knob).collect())
            }
        })
        .collect()
}

fn synth_quadratic(spec: &SyntheticSpec) -> Result<Vec<LocalObjective>> {
    let d = spec.d;
    let a = if spec.aniso > 0.0 {
        // Shared curvature: random orthogonal basis, eigenvalues spread over
        // [1, 1 + aniso]. Sharing A across devices keeps heterogeneity under
        // the knob's control alone.
        let mut rng = RngStream::generator(spec.seed, 0xA000);
        let gauss = DMatrix::from_fn(d, d, |_, _| rng.next_normal());
        let q = gauss.qr().q();
        let evs = DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0 + spec.aniso * (i as f64) / (d.max(2) - 1) as f64
            } else {
                0.0
            }
        });
        &q * evs * q.transpose()
    } else {
        DMatrix::identity(d, d)
    };
    shard_centers(spec)
        .into_iter()
        .map(|b| LocalObjective::quadratic(a.clone(), b))
        .collect()
}

fn synth_least_squares(spec: &SyntheticSpec) -> Result<Vec<LocalObjective>> {
    let d = spec.d;
    let scale = (d as f64).sqrt();
    shard_centers(spec)
        .into_iter()
        .map(|b| {
            // 2d samples: for each coordinate k, two rows sqrt(d) e_k with
            // labels sqrt(d) b_k +- noise. The shard objective is exactly
            // 1/2 ||w - b||^2 + noise^2/2, so L = mu = 1 with persistent
            // minibatch gradient variance d * noise^2 at the optimum.
            let mut rows = vec![0.0; 2 * d * d];
            let mut y = Vec::with_capacity(2 * d);
            for k in 0..d {
                rows[(2 * k) * d + k] = scale;
                rows[(2 * k + 1) * d + k] = scale;
                y.push(scale * b[k] + spec.noise);
                y.push(scale * b[k] - spec.noise);
            }
            LocalObjective::least_squares(DMatrix::from_row_slice(2 * d, d, &rows), y)
        })
        .collect()
}

fn synth_logistic(spec: &SyntheticSpec) -> Result<Vec<LocalObjective>> {
    let d = spec.d;
    let n = spec.samples;
    if n < 1 {
        return Err(FedError::invalid("logistic shards need at least one sample"));
    }
    // Base shard shared by every device; heterogeneity enters through a
    // per-device mean shift of the features and seeded label flips, both
    // scaled by the knob.
    let mut base_rng = RngStream::generator(spec.seed, 0xBA5E);
    let base: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| base_rng.next_normal()).collect())
        .collect();
    let theta = unit_direction(&mut base_rng, d);
    let base_labels: Vec<f64> = base
        .iter()
        .map(|row| {
            let z: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
            if z >= 0.0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    let flip_prob = (0.2 * spec.knob).min(0.45);

    (0..spec.p)
        .map(|j| {
            let mut rng = RngStream::generator(spec.seed, 0xC000 + j as u64);
            let shift = if spec.knob == 0.0 {
                vec![0.0; d]
            } else {
                unit_direction(&mut rng, d)
                    .into_iter()
                    .map(|v| v * spec.knob)
                    .collect()
            };
            let mut data = vec![0.0; n * d];
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                for k in 0..d {
                    data[i * d + k] = base[i][k] + shift[k];
                }
                let flip = spec.knob > 0.0 && rng.next_f64() < flip_prob;
                labels.push(if flip { -base_labels[i] } else { base_labels[i] });
            }
            LocalObjective::logistic(DMatrix::from_row_slice(n, d, &data), labels, spec.reg)
        })
        .collect()
}

/// The 2-device quadratic with centers +-e1 and uniform weights:
/// w* = 0, f* = 1/2, L = mu = 1. Used widely in tests.
pub fn two_point_quadratic() -> FederatedProblem {
    let b1 = ModelVector::from_vec(vec![1.0, 0.0]);
    let b2 = ModelVector::from_vec(vec![-1.0, 0.0]);
    FederatedProblem::new(
        vec![
            LocalObjective::shifted_quadratic(b1),
            LocalObjective::shifted_quadratic(b2),
        ],
        vec![0.5, 0.5],
    )
    .unwrap()
}

//! Python bindings: the simulator types and operations exposed in-process.
//!
//! ```python
//! import fedsim_py as fs
//! problem = fs.Problem.synthetic("quadratic", p=2, d=2, knob=1.0, seed=7)
//! traj = fs.run_lfgd(problem, e=4, k=2, t=200, eta=0.02, w0=[0.0, 2.0])
//! print(traj.subopt[-1], fs.check_lfgd(0.02, 4, 1.0, 1.0, 2.0)["satisfied"])
//! ```

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fedsim::conditions;
use fedsim::engine::{Algorithm, ControlledAveraging, LearningRateSchedule, RunConfig};
use fedsim::problem::{make_synthetic_problem, SyntheticSpec, WeightsRule};
use fedsim::topology::{make_topology, validate_mixing, TopologyKind};
use fedsim::{FedError, ModelVector};

fn err(e: FedError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vector(values: Vec<f64>) -> ModelVector {
    ModelVector::from_vec(values)
}

/// A federated problem: p weighted local objectives over synthetic shards.
#[pyclass]
struct Problem {
    inner: fedsim::FederatedProblem,
    spec: SyntheticSpec,
}

#[pymethods]
impl Problem {
    /// Build a synthetic problem.
    ///
    /// kind: "quadratic" | "least_squares" | "logistic".
    /// knob: heterogeneity (0 = identical shards).
    /// noise/samples/reg/aniso: kind-specific knobs, see the crate docs.
    #[staticmethod]
    #[pyo3(signature = (kind, p, d, knob, seed, weights=None, noise=0.0, samples=16, reg=0.0, aniso=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        kind: &str,
        p: usize,
        d: usize,
        knob: f64,
        seed: u64,
        weights: Option<Vec<f64>>,
        noise: f64,
        samples: usize,
        reg: f64,
        aniso: f64,
    ) -> PyResult<Self> {
        let spec = SyntheticSpec {
            kind: kind.to_string(),
            p,
            d,
            knob,
            weights: match weights {
                Some(q) => WeightsRule::Explicit(q),
                None => WeightsRule::default(),
            },
            seed,
            noise,
            samples,
            reg,
            aniso,
        };
        Ok(Problem {
            inner: make_synthetic_problem(&spec).map_err(err)?,
            spec,
        })
    }

    /// Build from the same JSON document the CLI accepts as `problem`.
    #[staticmethod]
    fn from_spec_json(text: &str) -> PyResult<Self> {
        let spec: SyntheticSpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Problem {
            inner: make_synthetic_problem(&spec).map_err(err)?,
            spec,
        })
    }

    fn spec_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.spec).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.num_devices()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    /// Smoothness constant L = max_j L_j (closed form).
    #[getter]
    fn smoothness(&self) -> f64 {
        self.inner.smoothness()
    }

    #[getter]
    fn pl_constant(&self) -> Option<f64> {
        self.inner.pl_constant()
    }

    #[getter]
    fn f_star(&self) -> Option<f64> {
        self.inner.f_star()
    }

    #[getter]
    fn w_star(&self) -> Option<Vec<f64>> {
        self.inner.w_star().map(|w| w.as_slice().to_vec())
    }

    fn local_value(&self, j: usize, w: Vec<f64>) -> PyResult<f64> {
        self.inner.local_value(j, &vector(w)).map_err(err)
    }

    /// Exact full-shard gradient of f_j at w.
    fn local_gradient(&self, j: usize, w: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .local_gradient(j, &vector(w))
            .map_err(err)?
            .as_slice()
            .to_vec())
    }

    fn global_value_and_gradient(&self, w: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let (v, g) = self.inner.global_value_and_gradient(&vector(w)).map_err(err)?;
        Ok((v, g.as_slice().to_vec()))
    }

    /// Weighted gradient diversity at w; raises ValueError near global
    /// stationary points.
    fn gradient_diversity(&self, w: Vec<f64>) -> PyResult<f64> {
        self.inner.gradient_diversity(&vector(w)).map_err(err)
    }

    fn diversity_upper_bound(&self, probes: Vec<Vec<f64>>) -> PyResult<f64> {
        let probes: Vec<ModelVector> = probes.into_iter().map(vector).collect();
        self.inner.diversity_upper_bound(&probes).map_err(err)
    }

    /// Minibatch stochastic gradient keyed by (seed, device, iteration).
    fn stochastic_gradient(
        &self,
        j: usize,
        w: Vec<f64>,
        b: usize,
        seed: u64,
        iteration: usize,
    ) -> PyResult<Vec<f64>> {
        let mut rng = fedsim::RngStream::minibatch(seed, j, iteration);
        Ok(
            fedsim::stochastic_gradient(&self.inner, j, &vector(w), b, &mut rng)
                .map_err(err)?
                .as_slice()
                .to_vec(),
        )
    }

    /// Smallest grid (C1, sigma^2) covering the empirical minibatch
    /// variance at the probe points with 10% slack.
    fn fit_variance_constants(
        &self,
        j: usize,
        probes: Vec<Vec<f64>>,
        b: usize,
        trials: usize,
    ) -> PyResult<(f64, f64)> {
        let probes: Vec<ModelVector> = probes.into_iter().map(vector).collect();
        fedsim::fit_variance_constants(&self.inner, j, &probes, b, trials).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(kind={}, p={}, d={}, L={:.4}, mu={:?})",
            self.spec.kind,
            self.inner.num_devices(),
            self.inner.dim(),
            self.inner.smoothness(),
            self.inner.pl_constant(),
        )
    }
}

/// A validated mixing matrix with cached spectral gap.
#[pyclass]
struct Topology {
    inner: fedsim::MixingMatrix,
}

#[pymethods]
impl Topology {
    #[staticmethod]
    fn complete(p: usize) -> PyResult<Self> {
        Ok(Topology {
            inner: make_topology(&TopologyKind::Complete, p).map_err(err)?,
        })
    }

    #[staticmethod]
    fn ring(p: usize, self_weight: f64) -> PyResult<Self> {
        Ok(Topology {
            inner: make_topology(&TopologyKind::Ring { self_weight }, p).map_err(err)?,
        })
    }

    #[staticmethod]
    fn random_geometric(p: usize, radius: f64, seed: u64) -> PyResult<Self> {
        Ok(Topology {
            inner: make_topology(&TopologyKind::RandomGeometric { radius, seed }, p)
                .map_err(err)?,
        })
    }

    /// Validate an explicit matrix (list of rows).
    #[staticmethod]
    fn validate(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(PyValueError::new_err("matrix must be square"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let m = nalgebra::DMatrix::from_row_slice(p, p, &flat);
        Ok(Topology {
            inner: validate_mixing(m).map_err(err)?,
        })
    }

    #[getter]
    fn zeta(&self) -> f64 {
        self.inner.zeta()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.size()
    }

    fn entries(&self) -> Vec<Vec<f64>> {
        let p = self.inner.size();
        (0..p)
            .map(|i| (0..p).map(|j| self.inner.get(i, j)).collect())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Topology(p={}, zeta={:.6})", self.inner.size(), self.inner.zeta())
    }
}

/// Per-iteration metrics of one run.
#[pyclass]
struct Trajectory {
    inner: fedsim::Trajectory,
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn t(&self) -> Vec<usize> {
        self.inner.records.iter().map(|r| r.t).collect()
    }

    #[getter]
    fn f_bar(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.f_bar).collect()
    }

    #[getter]
    fn subopt(&self) -> Vec<Option<f64>> {
        self.inner.records.iter().map(|r| r.subopt).collect()
    }

    #[getter]
    fn grad_norm_sq(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.grad_norm_sq).collect()
    }

    #[getter]
    fn consensus(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.consensus).collect()
    }

    #[getter]
    fn diversity(&self) -> Vec<Option<f64>> {
        self.inner.records.iter().map(|r| r.diversity).collect()
    }

    #[getter]
    fn eta(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.eta).collect()
    }

    #[getter]
    fn diverged(&self) -> bool {
        self.inner.diverged()
    }

    #[getter]
    fn diverged_at(&self) -> Option<usize> {
        match self.inner.status {
            fedsim::RunStatus::Diverged { t } => Some(t),
            fedsim::RunStatus::Completed => None,
        }
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    /// Least-squares decay fit over the final decade.
    /// model: "exp_decay" (slope of log subopt vs t) or "power_law"
    /// (log-log slope). Returns (rate, r_squared).
    fn fit_rate(&self, model: &str) -> PyResult<(f64, f64)> {
        let model = match model {
            "exp_decay" => fedsim::RateModel::ExpDecay,
            "power_law" => fedsim::RateModel::PowerLaw,
            other => return Err(PyValueError::new_err(format!("unknown rate model '{other}'"))),
        };
        fedsim::fit_rate(std::slice::from_ref(&self.inner), model).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }
}

#[allow(clippy::too_many_arguments)]
fn run_config(
    algorithm: Algorithm,
    problem: &Problem,
    e: usize,
    k: usize,
    t: usize,
    b: usize,
    lr: LearningRateSchedule,
    seed: u64,
    w0: Option<Vec<f64>>,
    prev_round_corrections: bool,
) -> RunConfig {
    let w0 = match w0 {
        Some(v) => vector(v),
        None => ModelVector::zeros(problem.inner.dim()),
    };
    let mut cfg = RunConfig::new(algorithm, e, k, t, w0);
    cfg.b = b;
    cfg.lr = lr;
    cfg.seed = seed;
    cfg.controlled_averaging = if prev_round_corrections {
        ControlledAveraging::PrevRoundMean
    } else {
        ControlledAveraging::Off
    };
    cfg
}

/// Local full-gradient descent with periodic averaging.
#[pyfunction]
#[pyo3(signature = (problem, e, k, t, eta, seed=0, w0=None, controlled_averaging=false))]
#[allow(clippy::too_many_arguments)]
fn run_lfgd(
    problem: &Problem,
    e: usize,
    k: usize,
    t: usize,
    eta: f64,
    seed: u64,
    w0: Option<Vec<f64>>,
    controlled_averaging: bool,
) -> PyResult<Trajectory> {
    let cfg = run_config(
        Algorithm::Lfgd,
        problem,
        e,
        k,
        t,
        1,
        LearningRateSchedule::Constant { eta },
        seed,
        w0,
        controlled_averaging,
    );
    Ok(Trajectory {
        inner: fedsim::run_lfgd(&problem.inner, cfg).map_err(err)?,
    })
}

/// Local minibatch SGD with periodic averaging and device sampling.
/// Exactly one of `eta` (constant rate) or `pl_alpha` (decaying schedule
/// 4 / (mu (t + alpha E + 4))) must be given.
#[pyfunction]
#[pyo3(signature = (problem, e, k, t, b, eta=None, pl_alpha=None, seed=0, w0=None, controlled_averaging=false))]
#[allow(clippy::too_many_arguments)]
fn run_lfsgd(
    problem: &Problem,
    e: usize,
    k: usize,
    t: usize,
    b: usize,
    eta: Option<f64>,
    pl_alpha: Option<f64>,
    seed: u64,
    w0: Option<Vec<f64>>,
    controlled_averaging: bool,
) -> PyResult<Trajectory> {
    let lr = match (eta, pl_alpha) {
        (Some(eta), None) => LearningRateSchedule::Constant { eta },
        (None, Some(alpha)) => {
            let mu = problem.inner.pl_constant().ok_or_else(|| {
                PyValueError::new_err("pl_alpha needs a problem with a known PL constant")
            })?;
            LearningRateSchedule::PlDecay { mu, alpha, e }
        }
        _ => {
            return Err(PyValueError::new_err(
                "give exactly one of eta or pl_alpha",
            ))
        }
    };
    let cfg = run_config(
        Algorithm::Lfsgd,
        problem,
        e,
        k,
        t,
        b,
        lr,
        seed,
        w0,
        controlled_averaging,
    );
    Ok(Trajectory {
        inner: fedsim::run_lfsgd(&problem.inner, cfg).map_err(err)?,
    })
}

/// Networked local SGD over a mixing matrix (no device sampling).
#[pyfunction]
#[pyo3(signature = (problem, topology, e, t, b, eta, seed=0, w0=None))]
#[allow(clippy::too_many_arguments)]
fn run_nfsgd(
    problem: &Problem,
    topology: &Topology,
    e: usize,
    t: usize,
    b: usize,
    eta: f64,
    seed: u64,
    w0: Option<Vec<f64>>,
) -> PyResult<Trajectory> {
    let mut cfg = run_config(
        Algorithm::Nfsgd,
        problem,
        e,
        problem.inner.num_devices(),
        t,
        b,
        LearningRateSchedule::Constant { eta },
        seed,
        w0,
        false,
    );
    cfg.topology = Some(topology.inner.clone());
    Ok(Trajectory {
        inner: fedsim::run_nfsgd(&problem.inner, cfg).map_err(err)?,
    })
}

/// Synchronous weighted gradient descent baseline.
#[pyfunction]
#[pyo3(signature = (problem, eta, t, w0=None))]
fn oracle_sync_gd(
    problem: &Problem,
    eta: f64,
    t: usize,
    w0: Option<Vec<f64>>,
) -> PyResult<Trajectory> {
    let w0 = match w0 {
        Some(v) => vector(v),
        None => ModelVector::zeros(problem.inner.dim()),
    };
    Ok(Trajectory {
        inner: fedsim::oracle_sync_gd(&problem.inner, eta, t, &w0).map_err(err)?,
    })
}

/// K i.i.d. categorical draws from q (with replacement), keyed by
/// (seed, round).
#[pyfunction]
fn sample_devices(q: Vec<f64>, k: usize, seed: u64, round: usize) -> PyResult<Vec<usize>> {
    let mut rng = fedsim::RngStream::device_selection(seed, round);
    Ok(fedsim::sample_devices(&mut rng, &q, k)
        .map_err(err)?
        .members()
        .to_vec())
}

/// Controlled-averaging correction g_j - c_j + mean(c).
#[pyfunction]
fn apply_controlled_averaging(
    directions: Vec<Vec<f64>>,
    corrections: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    if directions.len() != corrections.len() || directions.is_empty() {
        return Err(PyValueError::new_err("one correction per direction required"));
    }
    let dirs: Vec<ModelVector> = directions.into_iter().map(vector).collect();
    let c: Vec<ModelVector> = corrections.into_iter().map(vector).collect();
    Ok(fedsim::apply_controlled_averaging(&dirs, &c)
        .into_iter()
        .map(|v| v.as_slice().to_vec())
        .collect())
}

/// Weighted diversity of arbitrary direction vectors.
#[pyfunction]
fn weighted_diversity(vectors: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<f64> {
    let vs: Vec<ModelVector> = vectors.into_iter().map(vector).collect();
    fedsim::weighted_diversity(&vs, &weights).map_err(err)
}

fn report_dict<'py>(
    py: Python<'py>,
    rep: &conditions::ConditionReport,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("satisfied", rep.satisfied)?;
    d.set_item("lhs", rep.lhs)?;
    d.set_item("rhs", rep.rhs)?;
    d.set_item("binding_margin", rep.binding_margin)?;
    d.set_item("max_e", rep.max_e)?;
    d.set_item("max_eta", rep.max_eta)?;
    d.set_item("min_e", rep.min_e)?;
    Ok(d)
}

/// Admissibility of (eta, E) for full-gradient periodic averaging.
#[pyfunction]
#[pyo3(signature = (eta, e, l, mu, lam, strict=false))]
fn check_lfgd<'py>(
    py: Python<'py>,
    eta: f64,
    e: u64,
    l: f64,
    mu: f64,
    lam: f64,
    strict: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let rep = if strict {
        conditions::check_lfgd_strict(eta, e, l, mu, lam)
    } else {
        conditions::check_lfgd(eta, e, l, mu, lam)
    }
    .map_err(err)?;
    report_dict(py, &rep)
}

/// Admissibility of the decaying-rate schedule parameters.
#[pyfunction]
fn check_lfsgd_pl<'py>(
    py: Python<'py>,
    alpha: f64,
    e: u64,
    k: u64,
    lam: f64,
    kappa: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let rep = conditions::check_lfsgd_pl(alpha, e, k, lam, kappa).map_err(err)?;
    report_dict(py, &rep)
}

/// Admissibility for general nonconvex local SGD.
#[pyfunction]
fn check_lfsgd_nonconvex<'py>(
    py: Python<'py>,
    eta: f64,
    e: u64,
    k: u64,
    l: f64,
    lam: f64,
    c1: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let rep = conditions::check_lfsgd_nonconvex(eta, e, k, l, lam, c1).map_err(err)?;
    report_dict(py, &rep)
}

/// Admissibility for networked local SGD, including the simplified
/// sufficient form.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn check_nfsgd<'py>(
    py: Python<'py>,
    eta: f64,
    e: u64,
    p: u64,
    l: f64,
    lam: f64,
    c1: f64,
    zeta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let rep = conditions::check_nfsgd_full(eta, e, p, l, lam, c1, zeta).map_err(err)?;
    let d = report_dict(py, &rep.base)?;
    d.set_item("simplified_lhs", rep.simplified_lhs)?;
    d.set_item("simplified_satisfied", rep.simplified_satisfied)?;
    d.set_item("e_bound_at_prescribed_rate", rep.e_bound_at_prescribed_rate)?;
    Ok(d)
}

#[pymodule]
fn fedsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Problem>()?;
    m.add_class::<Topology>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(run_lfgd, m)?)?;
    m.add_function(wrap_pyfunction!(run_lfsgd, m)?)?;
    m.add_function(wrap_pyfunction!(run_nfsgd, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_sync_gd, m)?)?;
    m.add_function(wrap_pyfunction!(sample_devices, m)?)?;
    m.add_function(wrap_pyfunction!(apply_controlled_averaging, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_diversity, m)?)?;
    m.add_function(wrap_pyfunction!(check_lfgd, m)?)?;
    m.add_function(wrap_pyfunction!(check_lfsgd_pl, m)?)?;
    m.add_function(wrap_pyfunction!(check_lfsgd_nonconvex, m)?)?;
    m.add_function(wrap_pyfunction!(check_nfsgd, m)?)?;
    Ok(())
}

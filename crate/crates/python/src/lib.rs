use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ssdrl::harness::{run_experiment as run, ExperimentConfig, ExperimentKind};
use ssdrl::measures::{self, DominanceVerdict};
use ssdrl::policies::{PolicyConfig, PolicyKind};
use ssdrl::transport::{self, AnnealingSchedule};
use ssdrl::wgf::{self, BellmanTarget, ProximalConfig};

fn err(e: ssdrl::Error) -> PyErr {
    if e.is_usage() || matches!(
        e,
        ssdrl::Error::Domain { .. } | ssdrl::Error::SizeMismatch { .. } | ssdrl::Error::EmptyParticles
    )
    {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn set(values: Vec<f64>) -> PyResult<measures::ParticleSet> {
    measures::ParticleSet::new(values).map_err(err)
}

/// Sorted particles of an empirical return distribution.
#[pyclass(module = "pyssdrl", frozen)]
struct ParticleSet {
    inner: measures::ParticleSet,
}

#[pymethods]
impl ParticleSet {
    #[new]
    fn new(values: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: set(values)? })
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn second_moment(&self) -> f64 {
        self.inner.second_moment()
    }

    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    fn cumulative_quantile(&self, tau: f64) -> PyResult<f64> {
        self.inner.cumulative_quantile(tau).map_err(err)
    }

    fn cvar(&self, tau: f64) -> PyResult<f64> {
        self.inner.cvar(tau).map_err(err)
    }

    /// True when this set weakly dominates `other` in the second order.
    fn dominates(&self, other: &ParticleSet) -> PyResult<bool> {
        measures::ssd_dominates(&self.inner, &other.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("ParticleSet({:?})", self.inner.values())
    }
}

/// Result of an entropic transport solve.
#[pyclass(module = "pyssdrl", frozen, get_all)]
struct Transport {
    f: Vec<f64>,
    g: Vec<f64>,
    plan: Vec<Vec<f64>>,
    distance: f64,
    epsilon: f64,
    sweeps: usize,
}

#[pyfunction]
#[pyo3(signature = (x, y, epsilon = 0.01))]
fn sinkhorn(x: Vec<f64>, y: Vec<f64>, epsilon: f64) -> PyResult<Transport> {
    let schedule = AnnealingSchedule::to_epsilon(epsilon).map_err(err)?;
    let r = transport::sinkhorn_log(&set(x)?, &set(y)?, &schedule).map_err(err)?;
    Ok(Transport {
        plan: r.plan.to_nested(),
        f: r.f,
        g: r.g,
        distance: r.distance,
        epsilon: r.epsilon_final,
        sweeps: r.sweeps,
    })
}

#[pyfunction]
fn exact_w2(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    transport::exact_w2_1d(&set(x)?, &set(y)?).map_err(err)
}

/// "first", "second", "mutual" or "incomparable".
#[pyfunction]
#[pyo3(signature = (a, b, slack = 0.0))]
fn compare(a: Vec<f64>, b: Vec<f64>, slack: f64) -> PyResult<&'static str> {
    Ok(match measures::compare(&set(a)?, &set(b)?, slack).map_err(err)? {
        DominanceVerdict::FirstDominates => "first",
        DominanceVerdict::SecondDominates => "second",
        DominanceVerdict::Mutual => "mutual",
        DominanceVerdict::Incomparable => "incomparable",
    })
}

fn proximal_config(h: f64, epsilon: f64, step_size: f64, steps: usize) -> PyResult<ProximalConfig> {
    ProximalConfig::new(h, epsilon, step_size, steps, 0.0).map_err(err)
}

/// One JKO step from `z_prev` toward `targets`; returns the new particles.
#[pyfunction]
#[pyo3(signature = (z_prev, targets, h = 1.0, epsilon = 0.25, step_size = 0.5, steps = 100))]
fn proximal_step(
    z_prev: Vec<f64>,
    targets: Vec<f64>,
    h: f64,
    epsilon: f64,
    step_size: f64,
    steps: usize,
) -> PyResult<Vec<f64>> {
    let cfg = proximal_config(h, epsilon, step_size, steps)?;
    let targets = BellmanTarget::new(targets).map_err(err)?;
    let out = wgf::proximal_step(&set(z_prev)?, &targets, &cfg).map_err(err)?;
    Ok(out.particles.into_values())
}

/// Proximal loss and its gradient at `z`.
#[pyfunction]
#[pyo3(signature = (z, z_prev, targets, h = 1.0, epsilon = 0.25))]
fn proximal_loss(z: Vec<f64>, z_prev: Vec<f64>, targets: Vec<f64>, h: f64, epsilon: f64) -> PyResult<(f64, Vec<f64>)> {
    let cfg = proximal_config(h, epsilon, 0.5, 1)?;
    let (z, z_prev) = (set(z)?, set(z_prev)?);
    let targets = BellmanTarget::new(targets).map_err(err)?;
    let loss = wgf::proximal_loss(&z, &z_prev, &targets, &cfg).map_err(err)?;
    let grad = wgf::proximal_loss_gradient(&z, &z_prev, &targets, &cfg).map_err(err)?;
    Ok((loss, grad))
}

/// Samples an action from per-action particle lists under `policy`
/// ("ssd", "greedy", "egreedy" or "cvar").
#[pyfunction]
#[pyo3(signature = (dists, policy = "ssd", seed = 0, epsilon = 0.1, alpha = 0.05))]
fn select_action(dists: Vec<Vec<f64>>, policy: &str, seed: u64, epsilon: f64, alpha: f64) -> PyResult<usize> {
    let kind = match policy {
        "ssd" => PolicyKind::Ssd,
        "greedy" => PolicyKind::Greedy,
        "egreedy" => PolicyKind::EpsilonGreedy { epsilon },
        "cvar" => PolicyKind::Cvar {
            alpha,
            epsilon_explore: 0.0,
        },
        other => return Err(PyValueError::new_err(format!("unknown policy `{other}`"))),
    };
    let cfg = PolicyConfig::new(kind);
    cfg.validate().map_err(err)?;
    let dists = dists.into_iter().map(set).collect::<PyResult<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cfg.select(&dists, &mut rng).map_err(err)
}

/// Runs an experiment like the command line does and returns the written paths.
#[pyfunction]
#[pyo3(signature = (kind, config = None, seed = None, trials = None, out = None, threads = None))]
fn run_experiment(
    py: Python<'_>,
    kind: &str,
    config: Option<PathBuf>,
    seed: Option<u64>,
    trials: Option<usize>,
    out: Option<PathBuf>,
    threads: Option<usize>,
) -> PyResult<Vec<PathBuf>> {
    let kind = match kind {
        "regress" => ExperimentKind::Regress,
        "ablate" => ExperimentKind::Ablate,
        "evaluate" => ExperimentKind::Evaluate,
        "control" => ExperimentKind::Control,
        "compare-policies" => ExperimentKind::ComparePolicies,
        other => return Err(PyValueError::new_err(format!("unknown experiment `{other}`"))),
    };
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(kind, &path),
        None => ExperimentConfig::defaults(kind),
    }
    .map_err(err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    let output = py.detach(|| run(&cfg)).map_err(err)?;
    Ok(output.files)
}

#[pymodule]
fn pyssdrl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ParticleSet>()?;
    m.add_class::<Transport>()?;
    m.add_function(wrap_pyfunction!(sinkhorn, m)?)?;
    m.add_function(wrap_pyfunction!(exact_w2, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(proximal_step, m)?)?;
    m.add_function(wrap_pyfunction!(proximal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(select_action, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

//! Python bindings for the `qdpj` crate.

use std::path::PathBuf;

use nalgebra::DVector;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use qdpj::admm::{default_init, threshold_report, AdmmConfig, AveragingMode, CommMode, IterationTrace, RunOutput};
use qdpj::consensus::{default_round_cap, run_dfqac};
use qdpj::experiment::{run_experiment, ExperimentConfig};
use qdpj::probgen::CouplingSpec;

create_exception!(qdpj_py, QdpjError, PyException);

fn err(e: qdpj::Error) -> PyErr {
    QdpjError::new_err(e.to_string())
}

fn level(s: &str) -> PyResult<qdpj::QuantizationLevel> {
    s.parse().map_err(err)
}

fn to_vecs(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|x| x.as_slice().to_vec()).collect()
}

#[pyclass(frozen)]
struct Digraph {
    inner: qdpj::Digraph,
}

#[pymethods]
impl Digraph {
    /// Graph on `n` nodes from `(receiver, sender)` pairs, 0-based.
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(Self { inner: qdpj::Digraph::from_edges(n, edges).map_err(err)? })
    }

    #[staticmethod]
    fn random_strongly_connected(n: usize, density: f64, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: qdpj::Digraph::random_strongly_connected(n, density, seed).map_err(err)? })
    }

    #[staticmethod]
    fn cycle(n: usize) -> PyResult<Self> {
        Ok(Self { inner: qdpj::Digraph::cycle(n).map_err(err)? })
    }

    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn diameter(&self) -> PyResult<usize> {
        self.inner.diameter().map_err(err)
    }

    fn is_strongly_connected(&self) -> bool {
        self.inner.is_strongly_connected()
    }

    fn out_neighbors(&self, i: usize) -> Vec<usize> {
        self.inner.out_neighbors(i).to_vec()
    }

    fn to_edge_list(&self) -> String {
        self.inner.to_edge_list()
    }
}

/// Floor indices `floor(b / delta)` for a level given as text, e.g. "1e-3".
#[pyfunction]
fn quantize_floor(values: Vec<f64>, delta: &str) -> PyResult<Vec<i64>> {
    Ok(level(delta)?.quantize_floor(&values).map_err(err)?.values)
}

#[pyclass(frozen, get_all)]
struct ConsensusOutput {
    estimates: Vec<Vec<f64>>,
    rounds_used: u64,
    pieces_sent: u64,
    bits_estimate: u64,
}

#[pyfunction]
#[pyo3(signature = (inputs, graph, delta, seed, round_cap = None))]
fn consensus(inputs: Vec<Vec<f64>>, graph: &Digraph, delta: &str, seed: u64, round_cap: Option<u64>) -> PyResult<ConsensusOutput> {
    let cap = match round_cap {
        Some(c) => c,
        None => default_round_cap(graph.inner.diameter().map_err(err)?),
    };
    let r = run_dfqac(&inputs, &graph.inner, level(delta)?, seed, cap).map_err(err)?;
    Ok(ConsensusOutput {
        estimates: r.estimates,
        rounds_used: r.rounds_used,
        pieces_sent: r.pieces_sent_total,
        bits_estimate: r.bits_estimate,
    })
}

#[pyclass(frozen)]
struct Instance {
    inner: qdpj::Instance,
}

#[pymethods]
impl Instance {
    /// Seeded standard normal instance. `coupling_rows = None` uses identity coupling.
    #[staticmethod]
    #[pyo3(signature = (n_nodes, local_dim, data_rows, seed, coupling_rows = None, b = None, rho = 0.01, gamma = 1.0))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        n_nodes: usize,
        local_dim: usize,
        data_rows: usize,
        seed: u64,
        coupling_rows: Option<usize>,
        b: Option<Vec<f64>>,
        rho: f64,
        gamma: f64,
    ) -> PyResult<Self> {
        let spec = qdpj::InstanceSpec {
            n_nodes,
            local_dim,
            data_rows,
            seed,
            coupling: coupling_rows.map_or(CouplingSpec::Identity, |rows| CouplingSpec::Random { rows }),
            b: b.unwrap_or_default(),
            ..qdpj::InstanceSpec::default()
        };
        Ok(Self { inner: qdpj::generate(&spec, rho, gamma).map_err(err)? })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self { inner: qdpj::Instance::from_text(text).map_err(err)? })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.problems.len()
    }

    #[getter]
    fn constraint_dim(&self) -> usize {
        self.inner.b.len()
    }

    /// `(x_star, lambda_star, kkt_residual)` of the coupled problem.
    fn kkt_oracle(&self) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, f64)> {
        let s = qdpj::kkt_oracle(&self.inner.problems, &self.inner.b).map_err(err)?;
        Ok((to_vecs(&s.x_star), s.lambda_star.as_slice().to_vec(), s.nu_residual))
    }

    /// Per-node `(theta, prox_min_eigenvalue, margin, passed)`.
    #[pyo3(signature = (rho = 0.01, gamma = 1.0))]
    fn check_params(&self, rho: f64, gamma: f64) -> PyResult<Vec<(f64, f64, f64, bool)>> {
        let config = AdmmConfig { rho, gamma, ..Default::default() };
        let report = threshold_report(&config, &self.inner.problems, self.inner.problems.len()).map_err(err)?;
        Ok(report.nodes.iter().map(|n| (n.theta, n.prox_min_eigenvalue, n.margin, n.passed)).collect())
    }
}

/// Trace columns plus the final primal iterate and multiplier estimates.
#[pyclass(frozen, get_all)]
struct Run {
    k: Vec<usize>,
    residual_norm: Vec<f64>,
    lagrangian_gap: Vec<f64>,
    l1_error: Vec<f64>,
    consensus_rounds: Vec<u64>,
    merit: Vec<f64>,
    pieces_sent: Vec<u64>,
    x: Vec<Vec<f64>>,
    lambda_hat: Vec<Vec<f64>>,
}

impl From<RunOutput> for Run {
    fn from(out: RunOutput) -> Self {
        let col = |f: fn(&IterationTrace) -> Option<f64>| out.trace.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect();
        Run {
            k: out.trace.iter().map(|r| r.k).collect(),
            residual_norm: out.trace.iter().map(|r| r.residual_norm).collect(),
            lagrangian_gap: col(|r| r.lagrangian_gap),
            l1_error: col(|r| r.l1_error),
            consensus_rounds: out.trace.iter().map(|r| r.consensus_rounds).collect(),
            merit: col(|r| r.merit),
            pieces_sent: out.trace.iter().map(|r| r.pieces_sent).collect(),
            x: out.variables.iter().map(|v| v.x.as_slice().to_vec()).collect(),
            lambda_hat: out.variables.iter().map(|v| v.lambda_hat.as_slice().to_vec()).collect(),
        }
    }
}

fn admm_config(rho: f64, gamma: f64, delta: &str, iterations: usize, seed: u64) -> PyResult<AdmmConfig> {
    Ok(AdmmConfig { rho, gamma, level: level(delta)?, max_outer_iterations: iterations, master_seed: seed, ..Default::default() })
}

/// Quantized distributed run; `delta = "0"` is not a level, use `exact=True`
/// for exact averaging instead.
#[pyfunction]
#[pyo3(signature = (instance, graph, iterations, delta = "1e-3", seed = 0, rho = 0.01, gamma = 1.0, exact = false))]
#[allow(clippy::too_many_arguments)]
fn qdpj_admm(
    py: Python<'_>,
    instance: &Instance,
    graph: &Digraph,
    iterations: usize,
    delta: &str,
    seed: u64,
    rho: f64,
    gamma: f64,
    exact: bool,
) -> PyResult<Run> {
    let mut config = admm_config(rho, gamma, delta, iterations, seed)?;
    if exact {
        config.averaging = AveragingMode::Exact;
    }
    let inst = &instance.inner;
    py.detach(|| {
        let saddle = qdpj::kkt_oracle(&inst.problems, &inst.b).ok();
        let init = default_init(&inst.problems, inst.b.len(), &config);
        qdpj::qdpj_admm_run(&inst.problems, &graph.inner, &inst.b, &config, &init, saddle.as_ref())
    })
    .map(Run::from)
    .map_err(err)
}

/// Centralized baseline; `quantized` selects floor-quantized message exchange.
#[pyfunction]
#[pyo3(signature = (instance, iterations, quantized = false, delta = "1e-3", rho = 0.01, gamma = 1.0))]
fn centralized_admm(
    py: Python<'_>,
    instance: &Instance,
    iterations: usize,
    quantized: bool,
    delta: &str,
    rho: f64,
    gamma: f64,
) -> PyResult<Run> {
    let config = admm_config(rho, gamma, delta, iterations, 0)?;
    let mode = if quantized { CommMode::Quantized } else { CommMode::Exact };
    let inst = &instance.inner;
    py.detach(|| {
        let saddle = qdpj::kkt_oracle(&inst.problems, &inst.b).ok();
        let init = default_init(&inst.problems, inst.b.len(), &config);
        qdpj::centralized_pj_admm_run(&inst.problems, &inst.b, &config, &init, mode, saddle.as_ref())
    })
    .map(Run::from)
    .map_err(err)
}

/// Runs a TOML experiment config; returns the written trace paths.
#[pyfunction]
#[pyo3(signature = (config_toml, output_dir = None))]
fn experiment(py: Python<'_>, config_toml: &str, output_dir: Option<PathBuf>) -> PyResult<Vec<PathBuf>> {
    let mut config = ExperimentConfig::from_toml(config_toml).map_err(err)?;
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    py.detach(|| run_experiment(&config)).map(|o| o.trace_files).map_err(err)
}

#[pymodule]
fn qdpj_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("QdpjError", m.py().get_type::<QdpjError>())?;
    m.add_class::<Digraph>()?;
    m.add_class::<Instance>()?;
    m.add_class::<ConsensusOutput>()?;
    m.add_class::<Run>()?;
    m.add_function(wrap_pyfunction!(quantize_floor, m)?)?;
    m.add_function(wrap_pyfunction!(consensus, m)?)?;
    m.add_function(wrap_pyfunction!(qdpj_admm, m)?)?;
    m.add_function(wrap_pyfunction!(centralized_admm, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    Ok(())
}

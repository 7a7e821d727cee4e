//! Experiment driver: config files, sweeps over algorithms and quantization
//! levels, trace export and trace comparison.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::admm::{
    centralized_pj_admm_run, default_init, qdpj_admm_run, read_trace_csv, threshold_report, write_trace_csv, AdmmConfig,
    CommMode, IterationTrace, RunOutput, ThresholdReport,
};
use crate::consensus::{PAYLOAD_INT_BITS, PIECE_HEADER_BITS};
use crate::digraph::Digraph;
use crate::error::{Error, Result};
use crate::metrics::kkt_oracle;
use crate::probgen::{generate, Instance, InstanceSpec};
use crate::quantize::QuantizationLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Qdpj,
    CentralizedExact,
    CentralizedQuantized,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Qdpj, Algorithm::CentralizedQuantized, Algorithm::CentralizedExact];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Qdpj => "qdpj",
            Algorithm::CentralizedExact => "centralized_exact",
            Algorithm::CentralizedQuantized => "centralized_quantized",
        }
    }

    /// Whether the run depends on the quantization level.
    pub fn is_quantized(self) -> bool {
        self != Algorithm::CentralizedExact
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown algorithm {s:?} (expected qdpj, centralized_exact or centralized_quantized)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSpec {
    pub n: usize,
    pub density: f64,
    pub seed: u64,
}

impl Default for GraphSpec {
    fn default() -> Self {
        Self { n: 10, density: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub graph: GraphSpec,
    pub admm: AdmmConfig,
    pub algorithms: Vec<Algorithm>,
    /// Empty means `[admm.level]`.
    pub delta_sweep: Vec<QuantizationLevel>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            instance: InstanceSpec::default(),
            graph: GraphSpec::default(),
            admm: AdmmConfig::default(),
            algorithms: vec![Algorithm::Qdpj],
            delta_sweep: Vec::new(),
            output_dir: PathBuf::from("qdpj-out"),
        }
    }
}

impl ExperimentConfig {
    /// The full-scale Δ sweep with all three algorithms.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            instance: InstanceSpec::full_scale(seed),
            graph: GraphSpec { n: 100, density: 0.1, seed },
            admm: AdmmConfig { master_seed: seed, ..AdmmConfig::default() },
            algorithms: Algorithm::ALL.to_vec(),
            delta_sweep: (3..=6).map(|k| QuantizationLevel::pow10_neg(k).expect("valid level")).collect(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn deltas(&self) -> Vec<QuantizationLevel> {
        if self.delta_sweep.is_empty() { vec![self.admm.level] } else { self.delta_sweep.clone() }
    }

    /// Structural checks; each error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::InvalidParameter(format!("{field}: {why}")));
        if self.graph.n != self.instance.n_nodes {
            return bad("graph.n", format!("{} differs from instance.n_nodes = {}", self.graph.n, self.instance.n_nodes));
        }
        if !(0.0..=1.0).contains(&self.graph.density) {
            return bad("graph.density", format!("{} outside [0, 1]", self.graph.density));
        }
        if self.algorithms.is_empty() {
            return bad("algorithms", "empty".into());
        }
        if !(self.admm.gamma > 0.0 && self.admm.gamma < 2.0) {
            return bad("admm.gamma", format!("{} outside (0, 2)", self.admm.gamma));
        }
        if !(self.admm.rho > 0.0 && self.admm.rho.is_finite()) {
            return bad("admm.rho", format!("{} not positive", self.admm.rho));
        }
        if self.admm.max_outer_iterations == 0 {
            return bad("admm.max_outer_iterations", "must be at least 1".into());
        }
        if self.instance.n_nodes == 0 || self.instance.local_dim == 0 || self.instance.data_rows == 0 {
            return bad("instance", "dimensions must be positive".into());
        }
        Ok(())
    }

    pub fn build_instance(&self) -> Result<Instance> {
        generate(&self.instance, self.admm.rho, self.admm.gamma)
    }

    pub fn build_graph(&self) -> Result<Digraph> {
        Digraph::random_strongly_connected(self.graph.n, self.graph.density, self.graph.seed)
    }
}

/// Trace file name for one (algorithm, Δ) pair; a fractional Δ `p/q` is
/// spelled `poverq`.
pub fn trace_file_name(algorithm: Algorithm, level: QuantizationLevel) -> String {
    if algorithm.is_quantized() {
        format!("{}_delta_{}.csv", algorithm.name(), level.to_string().replace('/', "over"))
    } else {
        format!("{}.csv", algorithm.name())
    }
}

/// Recovers Δ from a trace file name written by [`trace_file_name`].
pub fn delta_from_file_name(path: &Path) -> Option<(String, QuantizationLevel)> {
    let stem = path.file_stem()?.to_str()?;
    let (alg, level) = stem.split_once("_delta_")?;
    Some((alg.to_string(), level.replace("over", "/").parse().ok()?))
}

#[derive(Debug, Clone, Serialize)]
struct RunRecord {
    algorithm: Algorithm,
    delta: Option<QuantizationLevel>,
    file: String,
    final_l1_error: Option<f64>,
    final_residual_norm: f64,
    total_consensus_rounds: u64,
    pieces_sent: u64,
    bits_estimate: u64,
}

#[derive(Debug, Clone, Serialize)]
struct Metadata<'a> {
    version: String,
    entry_distribution: &'static str,
    graph_edges: usize,
    graph_diameter: usize,
    oracle_kkt_residual: f64,
    min_prox_margin: f64,
    runs: Vec<RunRecord>,
    config: &'a ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trace_files: Vec<PathBuf>,
    pub metadata_file: PathBuf,
}

/// `pieces × (m × integer width + header)`
pub fn bits_estimate(pieces: u64, m: usize) -> u64 {
    pieces.saturating_mul(m as u64 * PAYLOAD_INT_BITS + PIECE_HEADER_BITS)
}

pub fn check_params(config: &ExperimentConfig) -> Result<ThresholdReport> {
    config.validate()?;
    let inst = config.build_instance()?;
    threshold_report(&config.admm, &inst.problems, config.instance.n_nodes)
}

pub fn format_threshold_report(report: &ThresholdReport) -> String {
    let mut out = String::from("node theta prox_min_eig margin status\n");
    for n in &report.nodes {
        writeln!(
            out,
            "{} {:e} {:e} {:e} {}",
            n.node,
            n.theta,
            n.prox_min_eigenvalue,
            n.margin,
            if n.passed { "pass" } else { "FAIL" }
        )
        .unwrap();
    }
    writeln!(out, "min_margin {:e}", report.min_margin()).unwrap();
    out
}

fn run_one(
    algorithm: Algorithm,
    level: QuantizationLevel,
    config: &ExperimentConfig,
    inst: &Instance,
    graph: &Digraph,
    saddle: &crate::metrics::SaddlePoint,
) -> Result<RunOutput> {
    let admm = AdmmConfig { level, ..config.admm.clone() };
    let init = default_init(&inst.problems, inst.b.len(), &admm);
    match algorithm {
        Algorithm::Qdpj => qdpj_admm_run(&inst.problems, graph, &inst.b, &admm, &init, Some(saddle)),
        Algorithm::CentralizedExact => {
            centralized_pj_admm_run(&inst.problems, &inst.b, &admm, &init, CommMode::Exact, Some(saddle))
        }
        Algorithm::CentralizedQuantized => {
            centralized_pj_admm_run(&inst.problems, &inst.b, &admm, &init, CommMode::Quantized, Some(saddle))
        }
    }
}

/// Runs every configured (algorithm, Δ) pair, writing one trace CSV each and
/// a `metadata.toml`, all under `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_experiment_observed(config, |_, _| {})
}

/// As [`run_experiment`], reporting each finished run.
pub fn run_experiment_observed(
    config: &ExperimentConfig,
    mut on_run: impl FnMut(&Path, &[IterationTrace]),
) -> Result<ExperimentOutput> {
    config.validate()?;
    let inst = config.build_instance()?;
    let graph = config.build_graph()?;
    let diameter = graph.diameter()?;
    let report = threshold_report(&config.admm, &inst.problems, config.instance.n_nodes)?;
    if !report.passed() && !config.admm.allow_condition_violation {
        return Err(Error::ConditionViolated { nodes: report.failing() });
    }
    let saddle = kkt_oracle(&inst.problems, &inst.b)?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut trace_files = Vec::new();
    let mut runs = Vec::new();
    for &algorithm in &config.algorithms {
        let levels = if algorithm.is_quantized() { config.deltas() } else { vec![config.admm.level] };
        for level in levels {
            let out = run_one(algorithm, level, config, &inst, &graph, &saddle)?;
            let name = trace_file_name(algorithm, level);
            let path = dir.join(&name);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_trace_csv(BufWriter::new(file), &out.trace)?;
            let last = out.trace.last().expect("K >= 1");
            let pieces = out.trace.iter().map(|r| r.pieces_sent).sum();
            runs.push(RunRecord {
                algorithm,
                delta: algorithm.is_quantized().then_some(level),
                file: name,
                final_l1_error: last.l1_error,
                final_residual_norm: last.residual_norm,
                total_consensus_rounds: out.trace.iter().map(|r| r.consensus_rounds).sum(),
                pieces_sent: pieces,
                bits_estimate: bits_estimate(pieces, inst.b.len()),
            });
            on_run(&path, &out.trace);
            trace_files.push(path);
        }
    }

    let meta = Metadata {
        version: concat!("qdpj ", env!("CARGO_PKG_VERSION")).to_string(),
        entry_distribution: "standard_normal",
        graph_edges: graph.edge_count(),
        graph_diameter: diameter,
        oracle_kkt_residual: saddle.nu_residual,
        min_prox_margin: report.min_margin(),
        runs,
        config,
    };
    let metadata_file = dir.join("metadata.toml");
    let text = toml::to_string(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&metadata_file, text).map_err(|e| Error::io(&metadata_file, e))?;
    Ok(ExperimentOutput { trace_files, metadata_file })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub path: PathBuf,
    pub algorithm: Option<String>,
    pub delta: Option<QuantizationLevel>,
    pub iterations: usize,
    pub final_l1_error: Option<f64>,
    /// Mean `l1_error` over the last tenth of the trace.
    pub floor: Option<f64>,
    /// First `k` with `l1_error <= 2 * floor`.
    pub settle_iteration: Option<usize>,
    pub mean_consensus_rounds: f64,
    pub total_pieces: u64,
}

pub fn summarize_trace(path: &Path, trace: &[IterationTrace]) -> TraceSummary {
    let tail = (trace.len() / 10).max(1);
    let l1: Option<Vec<f64>> = trace.iter().map(|r| r.l1_error).collect();
    let floor = l1.as_ref().map(|v| v[v.len() - tail..].iter().sum::<f64>() / tail as f64);
    let settle_iteration = l1
        .as_ref()
        .zip(floor)
        .and_then(|(v, f)| v.iter().position(|&e| e <= 2.0 * f).map(|i| trace[i].k));
    let (algorithm, delta) = match delta_from_file_name(path) {
        Some((a, d)) => (Some(a), Some(d)),
        None => (path.file_stem().and_then(|s| s.to_str()).map(str::to_string), None),
    };
    TraceSummary {
        path: path.to_path_buf(),
        algorithm,
        delta,
        iterations: trace.len(),
        final_l1_error: trace.last().and_then(|r| r.l1_error),
        floor,
        settle_iteration,
        mean_consensus_rounds: trace.iter().map(|r| r.consensus_rounds as f64).sum::<f64>() / trace.len() as f64,
        total_pieces: trace.iter().map(|r| r.pieces_sent).sum(),
    }
}

/// Reads and summarizes traces that share the same `k` axis.
pub fn compare_traces(paths: &[PathBuf]) -> Result<Vec<TraceSummary>> {
    if paths.is_empty() {
        return Err(Error::InvalidParameter("no traces given".into()));
    }
    let mut axis: Option<Vec<usize>> = None;
    let mut out = Vec::new();
    for path in paths {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let trace = read_trace_csv(file, path)?;
        let ks: Vec<usize> = trace.iter().map(|r| r.k).collect();
        match &axis {
            Some(a) if *a != ks => {
                return Err(Error::Schema { path: path.clone(), detail: "k axis differs from the first trace".into() })
            }
            Some(_) => {}
            None => axis = Some(ks),
        }
        out.push(summarize_trace(path, &trace));
    }
    Ok(out)
}

/// For each algorithm with at least two Δ values, whether the floor strictly
/// decreases as Δ decreases.
pub fn floor_ordering(summaries: &[TraceSummary]) -> Vec<(String, bool)> {
    let mut algs: Vec<&str> = summaries.iter().filter(|s| s.delta.is_some()).filter_map(|s| s.algorithm.as_deref()).collect();
    algs.sort_unstable();
    algs.dedup();
    algs.into_iter()
        .filter_map(|alg| {
            let mut pts: Vec<(f64, f64)> = summaries
                .iter()
                .filter(|s| s.algorithm.as_deref() == Some(alg))
                .filter_map(|s| Some((s.delta?.as_f64(), s.floor?)))
                .collect();
            if pts.len() < 2 {
                return None;
            }
            pts.sort_by(|a, b| b.0.total_cmp(&a.0));
            Some((alg.to_string(), pts.windows(2).all(|w| w[1].1 < w[0].1)))
        })
        .collect()
}

pub fn format_summary_table(summaries: &[TraceSummary]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}"));
    let mut out = String::from("trace iterations final_l1 floor settle_k mean_rounds total_pieces\n");
    for s in summaries {
        writeln!(
            out,
            "{} {} {} {} {} {:.2} {}",
            s.path.display(),
            s.iterations,
            opt(s.final_l1_error),
            opt(s.floor),
            s.settle_iteration.map_or_else(|| "-".to_string(), |k| k.to_string()),
            s.mean_consensus_rounds,
            s.total_pieces
        )
        .unwrap();
    }
    for (alg, ok) in floor_ordering(summaries) {
        writeln!(
            out,
            "{alg}: floors {} as delta decreases",
            if ok { "decrease (expected ordering)" } else { "do NOT decrease" }
        )
        .unwrap();
    }
    out
}

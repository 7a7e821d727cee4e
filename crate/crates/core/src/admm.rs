//! Outer loops: the quantized distributed proximal Jacobian ADMM and the
//! centralized proximal Jacobian ADMM baselines, plus the proximal-weight
//! admissibility check.

use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{default_round_cap, derive_seed, ConsensusSim};
use crate::digraph::Digraph;
use crate::error::{Error, Result};
use crate::local_solver::{spectral_norm, LocalProblem, PreparedProx};
use crate::metrics::{coupling_residual, l1_error, lagrangian, merit, SaddlePoint};
use crate::quantize::QuantizationLevel;

/// How `phi_i` is formed from the local coupling term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiReading {
    /// `phi_i = N A_i x_i - b`, whose average is exactly `Σ A_j x_j - b`.
    #[default]
    Consistent,
    /// `phi_i = N (A_i x_i - b)`, averaging to `Σ A_j x_j - N b`.
    Literal,
}

/// How the residual estimates are produced each outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingMode {
    /// The quantized finite-time consensus protocol at level Δ.
    #[default]
    Quantized,
    /// Exact real-valued averaging, the Δ → 0 limit.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DHatInit {
    /// One averaging pass on the initial `x`.
    #[default]
    Consensus,
    /// Independent standard normal draws per node.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaInit {
    #[default]
    Zero,
    /// Independent standard normal draws per node.
    RandomPerNode,
}

/// Message exchange of the centralized baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMode {
    Exact,
    /// `x_i` (node to center) and `λ` (center to node) are floor-quantized.
    Quantized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub rho: f64,
    pub gamma: f64,
    pub level: QuantizationLevel,
    pub max_outer_iterations: usize,
    /// `None` means `10^4 * D` rounds.
    pub consensus_round_cap: Option<u64>,
    pub master_seed: u64,
    pub averaging: AveragingMode,
    pub phi_reading: PhiReading,
    pub d_hat_init: DHatInit,
    pub lambda_init: LambdaInit,
    /// Run even when a proximal weight fails the admissibility check.
    pub allow_condition_violation: bool,
    /// Fill the `wallclock_ms` trace column. Off keeps traces byte-reproducible.
    pub record_wallclock: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 0.01,
            gamma: 1.0,
            level: QuantizationLevel::pow10_neg(3).expect("valid level"),
            max_outer_iterations: 1000,
            consensus_round_cap: None,
            master_seed: 0,
            averaging: AveragingMode::Quantized,
            phi_reading: PhiReading::Consistent,
            d_hat_init: DHatInit::Consensus,
            lambda_init: LambdaInit::Zero,
            allow_condition_violation: false,
            record_wallclock: false,
        }
    }
}

impl AdmmConfig {
    fn check_scalars(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 2.0) {
            return Err(Error::InvalidParameter(format!("gamma = {} outside (0, 2)", self.gamma)));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidParameter(format!("rho = {} must be positive", self.rho)));
        }
        if self.max_outer_iterations < 1 {
            return Err(Error::InvalidParameter("max_outer_iterations must be at least 1".into()));
        }
        if self.consensus_round_cap == Some(0) {
            return Err(Error::InvalidParameter("consensus_round_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Per-node admissibility of `P_i` against `theta_i = rho (N/(2-gamma) - 1) ||A_i||²`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeThreshold {
    pub node: usize,
    pub theta: f64,
    pub prox_min_eigenvalue: f64,
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub nodes: Vec<NodeThreshold>,
}

impl ThresholdReport {
    pub fn passed(&self) -> bool {
        self.nodes.iter().all(|n| n.passed)
    }

    pub fn failing(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| !n.passed).map(|n| n.node).collect()
    }

    pub fn min_margin(&self) -> f64 {
        self.nodes.iter().map(|n| n.margin).fold(f64::INFINITY, f64::min)
    }
}

/// `rho (N/(2-gamma) - 1) ||A||²`
pub fn prox_threshold(rho: f64, gamma: f64, n_nodes: usize, coupling_norm: f64) -> f64 {
    rho * (n_nodes as f64 / (2.0 - gamma) - 1.0) * coupling_norm * coupling_norm
}

/// Computes every node's threshold and margin without failing on violations.
pub fn threshold_report(config: &AdmmConfig, problems: &[LocalProblem], n_nodes: usize) -> Result<ThresholdReport> {
    config.check_scalars()?;
    let nodes = problems
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let theta = prox_threshold(config.rho, config.gamma, n_nodes, spectral_norm(&p.coupling));
            let lmin = p.prox_weight.min_eigenvalue();
            let margin = lmin - theta;
            NodeThreshold { node: i, theta, prox_min_eigenvalue: lmin, margin, passed: margin > 0.0 }
        })
        .collect();
    Ok(ThresholdReport { nodes })
}

/// Threshold report that fails on any violating node unless the config
/// allows violations.
pub fn validate_parameters(config: &AdmmConfig, problems: &[LocalProblem], n_nodes: usize) -> Result<ThresholdReport> {
    let report = threshold_report(config, problems, n_nodes)?;
    if !report.passed() && !config.allow_condition_violation {
        return Err(Error::ConditionViolated { nodes: report.failing() });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeVariables {
    pub x: DVector<f64>,
    pub lambda_hat: DVector<f64>,
    pub d_hat: DVector<f64>,
}

/// One row of an outer-loop trace. Gap, error and merit need a saddle point
/// and are `None` without one.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub k: usize,
    pub residual_norm: f64,
    pub lagrangian_gap: Option<f64>,
    pub l1_error: Option<f64>,
    pub consensus_rounds: u64,
    pub merit: Option<f64>,
    pub wallclock_ms: Option<f64>,
    pub pieces_sent: u64,
    /// `max_i ||d̂_i - d||` against the centrally recomputed residual.
    pub d_hat_error: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub variables: Vec<NodeVariables>,
    pub trace: Vec<IterationTrace>,
}

fn standard_normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(rand_distr::StandardNormal))
}

/// `x = 0`, `λ̂` per `config.lambda_init` and `d̂` per `config.d_hat_init`
/// (zero when it will be recomputed by averaging).
pub fn default_init(problems: &[LocalProblem], constraint_dim: usize, config: &AdmmConfig) -> Vec<NodeVariables> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, u64::MAX));
    problems
        .iter()
        .map(|p| {
            let lambda_hat = match config.lambda_init {
                LambdaInit::Zero => DVector::zeros(constraint_dim),
                LambdaInit::RandomPerNode => standard_normal_vector(&mut rng, constraint_dim),
            };
            let d_hat = match config.d_hat_init {
                DHatInit::Consensus => DVector::zeros(constraint_dim),
                DHatInit::Random => standard_normal_vector(&mut rng, constraint_dim),
            };
            NodeVariables { x: DVector::zeros(p.dim()), lambda_hat, d_hat }
        })
        .collect()
}

fn check_instance(problems: &[LocalProblem], b: &DVector<f64>, init: &[NodeVariables]) -> Result<()> {
    if problems.is_empty() {
        return Err(Error::Dimension("no nodes".into()));
    }
    if init.len() != problems.len() {
        return Err(Error::Dimension(format!(
            "{} initial states for {} nodes",
            init.len(),
            problems.len()
        )));
    }
    let m = b.len();
    for (i, (p, v)) in problems.iter().zip(init).enumerate() {
        if p.constraint_dim() != m || v.x.len() != p.dim() || v.lambda_hat.len() != m || v.d_hat.len() != m {
            return Err(Error::Dimension(format!("node {i} dimensions inconsistent with b in R^{m}")));
        }
    }
    Ok(())
}

fn prepare_all(problems: &[LocalProblem], rho: f64) -> Result<Vec<PreparedProx>> {
    problems.iter().map(|p| PreparedProx::new(p, rho)).collect()
}

struct Averaging<'a> {
    graph: &'a Digraph,
    diameter: usize,
    mode: AveragingMode,
    level: QuantizationLevel,
    cap: u64,
    master_seed: u64,
}

struct Averaged {
    estimates: Vec<DVector<f64>>,
    rounds: u64,
    pieces: u64,
}

impl Averaging<'_> {
    fn run(&self, phi: &[DVector<f64>], index: u64) -> Result<Averaged> {
        match self.mode {
            AveragingMode::Exact => {
                let n = phi.len() as f64;
                let mut avg = DVector::zeros(phi[0].len());
                for p in phi {
                    avg += p;
                }
                avg /= n;
                Ok(Averaged { estimates: vec![avg; phi.len()], rounds: 0, pieces: 0 })
            }
            AveragingMode::Quantized => {
                let inputs: Vec<Vec<f64>> = phi.iter().map(|p| p.as_slice().to_vec()).collect();
                let seed = derive_seed(self.master_seed, index);
                let mut sim = ConsensusSim::with_diameter(&inputs, self.graph, self.diameter, self.level, seed)?;
                let r = sim.run(self.cap)?;
                Ok(Averaged {
                    estimates: r.estimates.into_iter().map(DVector::from_vec).collect(),
                    rounds: r.rounds_used,
                    pieces: r.pieces_sent_total,
                })
            }
        }
    }
}

fn form_phi(problems: &[LocalProblem], xs: &[DVector<f64>], b: &DVector<f64>, reading: PhiReading) -> Vec<DVector<f64>> {
    let n = problems.len() as f64;
    problems
        .iter()
        .zip(xs)
        .map(|(p, x)| match reading {
            PhiReading::Consistent => (&p.coupling * x) * n - b,
            PhiReading::Literal => (&p.coupling * x - b) * n,
        })
        .collect()
}

struct TraceContext<'a> {
    problems: &'a [LocalProblem],
    b: &'a DVector<f64>,
    saddle: Option<&'a SaddlePoint>,
    rho: f64,
    gamma: f64,
    record_wallclock: bool,
    started: Instant,
    l_star: Option<f64>,
}

impl<'a> TraceContext<'a> {
    fn new(problems: &'a [LocalProblem], b: &'a DVector<f64>, saddle: Option<&'a SaddlePoint>, config: &AdmmConfig) -> Self {
        let l_star = saddle.map(|s| lagrangian(&s.x_star, &s.lambda_star, problems, b));
        Self {
            problems,
            b,
            saddle,
            rho: config.rho,
            gamma: config.gamma,
            record_wallclock: config.record_wallclock,
            started: Instant::now(),
            l_star,
        }
    }

    fn row(
        &self,
        k: usize,
        xs: &[DVector<f64>],
        lambdas: &[DVector<f64>],
        d_hats: &[DVector<f64>],
        rounds: u64,
        pieces: u64,
    ) -> IterationTrace {
        let d = coupling_residual(xs, self.problems, self.b);
        let d_hat_error = d_hats.iter().map(|dh| (dh - &d).norm()).fold(0.0, f64::max);
        let (gap, l1, mer) = match (self.saddle, self.l_star) {
            (Some(s), Some(l_star)) => (
                Some(lagrangian(xs, &s.lambda_star, self.problems, self.b) - l_star),
                Some(l1_error(xs, &s.x_star)),
                Some(merit(xs, lambdas, s, self.problems, self.rho, self.gamma)),
            ),
            _ => (None, None, None),
        };
        IterationTrace {
            k,
            residual_norm: d.norm(),
            lagrangian_gap: gap,
            l1_error: l1,
            consensus_rounds: rounds,
            merit: mer,
            wallclock_ms: self
                .record_wallclock
                .then(|| self.started.elapsed().as_secs_f64() * 1e3),
            pieces_sent: pieces,
            d_hat_error,
        }
    }
}

/// Quantized distributed proximal Jacobian ADMM.
///
/// Each outer iteration solves every node's proximal subproblem from the
/// previous iterate, averages `phi_i` over the graph to obtain `d̂_i`, and
/// updates `λ̂_i += gamma rho d̂_i`. Row `k` of the trace describes the
/// iterate after the `k`-th update.
pub fn qdpj_admm_run(
    problems: &[LocalProblem],
    graph: &Digraph,
    b: &DVector<f64>,
    config: &AdmmConfig,
    init: &[NodeVariables],
    saddle: Option<&SaddlePoint>,
) -> Result<RunOutput> {
    qdpj_admm_run_observed(problems, graph, b, config, init, saddle, |_, _| {})
}

/// As [`qdpj_admm_run`], calling `observe(k, variables)` after every outer iteration.
pub fn qdpj_admm_run_observed(
    problems: &[LocalProblem],
    graph: &Digraph,
    b: &DVector<f64>,
    config: &AdmmConfig,
    init: &[NodeVariables],
    saddle: Option<&SaddlePoint>,
    mut observe: impl FnMut(usize, &[NodeVariables]),
) -> Result<RunOutput> {
    check_instance(problems, b, init)?;
    if graph.node_count() != problems.len() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, instance has {}",
            graph.node_count(),
            problems.len()
        )));
    }
    validate_parameters(config, problems, problems.len())?;
    let diameter = graph.diameter()?;
    let prepared = prepare_all(problems, config.rho)?;
    let averaging = Averaging {
        graph,
        diameter,
        mode: config.averaging,
        level: config.level,
        cap: config.consensus_round_cap.unwrap_or_else(|| default_round_cap(diameter)),
        master_seed: config.master_seed,
    };
    let ctx = TraceContext::new(problems, b, saddle, config);
    let mut vars = init.to_vec();

    if config.d_hat_init == DHatInit::Consensus {
        let xs: Vec<_> = vars.iter().map(|v| v.x.clone()).collect();
        let avg = averaging
            .run(&form_phi(problems, &xs, b, config.phi_reading), 0)
            .map_err(|e| Error::OuterIteration { iteration: 0, source: Box::new(e) })?;
        for (v, d) in vars.iter_mut().zip(avg.estimates) {
            v.d_hat = d;
        }
    }

    let step = config.gamma * config.rho;
    let mut trace = Vec::with_capacity(config.max_outer_iterations);
    for k in 1..=config.max_outer_iterations {
        for ((v, p), prep) in vars.iter_mut().zip(problems).zip(&prepared) {
            v.x = prep.step(p, &v.x, &v.d_hat, &v.lambda_hat)?;
        }
        let xs: Vec<_> = vars.iter().map(|v| v.x.clone()).collect();
        let avg = averaging
            .run(&form_phi(problems, &xs, b, config.phi_reading), k as u64)
            .map_err(|e| Error::OuterIteration { iteration: k, source: Box::new(e) })?;
        for (v, d) in vars.iter_mut().zip(avg.estimates) {
            v.lambda_hat += &d * step;
            v.d_hat = d;
        }
        let lambdas: Vec<_> = vars.iter().map(|v| v.lambda_hat.clone()).collect();
        let d_hats: Vec<_> = vars.iter().map(|v| v.d_hat.clone()).collect();
        trace.push(ctx.row(k, &xs, &lambdas, &d_hats, avg.rounds, avg.pieces));
        observe(k, &vars);
    }
    Ok(RunOutput { variables: vars, trace })
}

fn quantize_dvec(v: &DVector<f64>, level: QuantizationLevel) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(level.quantize_floor(v.as_slice())?.dequantize()))
}

/// Centralized proximal Jacobian ADMM with a coordinator. The multiplier
/// starts from `init[0].lambda_hat`.
pub fn centralized_pj_admm_run(
    problems: &[LocalProblem],
    b: &DVector<f64>,
    config: &AdmmConfig,
    init: &[NodeVariables],
    comm_mode: CommMode,
    saddle: Option<&SaddlePoint>,
) -> Result<RunOutput> {
    centralized_pj_admm_run_observed(problems, b, config, init, comm_mode, saddle, |_, _| {})
}

pub fn centralized_pj_admm_run_observed(
    problems: &[LocalProblem],
    b: &DVector<f64>,
    config: &AdmmConfig,
    init: &[NodeVariables],
    comm_mode: CommMode,
    saddle: Option<&SaddlePoint>,
    mut observe: impl FnMut(usize, &[NodeVariables]),
) -> Result<RunOutput> {
    check_instance(problems, b, init)?;
    validate_parameters(config, problems, problems.len())?;
    let prepared = prepare_all(problems, config.rho)?;
    let ctx = TraceContext::new(problems, b, saddle, config);
    let level = config.level;
    let transmit = |v: &DVector<f64>| -> Result<DVector<f64>> {
        match comm_mode {
            CommMode::Exact => Ok(v.clone()),
            CommMode::Quantized => quantize_dvec(v, level),
        }
    };

    let mut xs: Vec<DVector<f64>> = init.iter().map(|v| v.x.clone()).collect();
    let mut lambda = init[0].lambda_hat.clone();
    // What the center holds of each x_i, and what the nodes hold of λ.
    let mut sent_x = xs.iter().map(&transmit).collect::<Result<Vec<_>>>()?;
    let mut sent_lambda = transmit(&lambda)?;
    let step = config.gamma * config.rho;
    let mut trace = Vec::with_capacity(config.max_outer_iterations);
    let mut vars = Vec::new();

    for k in 1..=config.max_outer_iterations {
        let center_residual = coupling_residual(&sent_x, problems, b);
        for (i, (p, prep)) in problems.iter().zip(&prepared).enumerate() {
            // Node i sees Σ_{j≠i} A_j x_j - b through the center and its own x_i exactly.
            let coupled = &center_residual - &p.coupling * &sent_x[i] + &p.coupling * &xs[i];
            xs[i] = prep.step(p, &xs[i], &coupled, &sent_lambda)?;
        }
        sent_x = xs.iter().map(&transmit).collect::<Result<Vec<_>>>()?;
        let d = coupling_residual(&sent_x, problems, b);
        lambda += &d * step;
        sent_lambda = transmit(&lambda)?;

        let true_d = coupling_residual(&xs, problems, b);
        vars = xs
            .iter()
            .map(|x| NodeVariables { x: x.clone(), lambda_hat: lambda.clone(), d_hat: true_d.clone() })
            .collect();
        trace.push(ctx.row(k, &xs, std::slice::from_ref(&lambda), std::slice::from_ref(&d), 0, 0));
        observe(k, &vars);
    }
    Ok(RunOutput { variables: vars, trace })
}

/// Trace CSV header. Columns after `wallclock_ms` are extensions.
pub const TRACE_HEADER: [&str; 9] = [
    "k",
    "residual_norm",
    "lagrangian_gap",
    "l1_error",
    "consensus_rounds",
    "merit",
    "wallclock_ms",
    "pieces_sent",
    "d_hat_error",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(writer: W, trace: &[IterationTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for row in trace {
        w.write_record([
            row.k.to_string(),
            format!("{:e}", row.residual_norm),
            fmt_opt(row.lagrangian_gap),
            fmt_opt(row.l1_error),
            row.consensus_rounds.to_string(),
            fmt_opt(row.merit),
            fmt_opt(row.wallclock_ms),
            row.pieces_sent.to_string(),
            format!("{:e}", row.d_hat_error),
        ])?;
    }
    w.flush().map_err(|e| Error::io("trace", e))
}

pub fn read_trace_csv<R: Read>(reader: R, name: &std::path::Path) -> Result<Vec<IterationTrace>> {
    let schema = |detail: String| Error::Schema { path: name.to_path_buf(), detail };
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(schema(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| schema(format!("bad {} value {:?}", TRACE_HEADER[i], field(i))))
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            if field(i).is_empty() { Ok(None) } else { num(i).map(Some) }
        };
        let int = |i: usize| -> Result<u64> {
            field(i).parse().map_err(|_| schema(format!("bad {} value {:?}", TRACE_HEADER[i], field(i))))
        };
        rows.push(IterationTrace {
            k: int(0)? as usize,
            residual_norm: num(1)?,
            lagrangian_gap: opt(2)?,
            l1_error: opt(3)?,
            consensus_rounds: int(4)?,
            merit: opt(5)?,
            wallclock_ms: opt(6)?,
            pieces_sent: int(7)?,
            d_hat_error: num(8)?,
        });
    }
    if rows.is_empty() {
        return Err(schema("no rows".into()));
    }
    Ok(rows)
}

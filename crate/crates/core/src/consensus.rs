//! Distributed finite-time quantized average consensus.
//!
//! Every node holds an integer mass vector `chi` and a scalar count `xi`
//! whose ratio tracks the running average of the quantized inputs. Each round
//! a node keeps one piece of its mass and pushes the other `xi - 1` pieces to
//! uniformly chosen targets among its out-neighbors and itself. Max/min
//! consensus over a window of `D` rounds (the diameter) detects when every
//! ratio lies within one quantization step, at which point all nodes output
//! the same `min * Δ`.
//!
//! Rounds are synchronous: pieces sent in round `t` are folded in at the end
//! of round `t`, and the max/min fusion in round `t` reads the values every
//! node held at the start of that round.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::digraph::Digraph;
use crate::error::{Error, Result};
use crate::quantize::QuantizationLevel;

/// Bits charged per integer coordinate of a transmitted piece.
pub const PAYLOAD_INT_BITS: u64 = 64;
/// Bits charged per piece for sender/receiver addressing and the count unit.
pub const PIECE_HEADER_BITS: u64 = 64;
/// Default round cap is this many windows of length `D`.
pub const DEFAULT_CAP_PER_DIAMETER: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusNodeState {
    pub chi: Vec<i64>,
    pub xi: u64,
    pub big_m: Vec<i64>,
    pub small_m: Vec<i64>,
    pub tau: u64,
    /// Self followed by the sorted out-neighbors; each is drawn with equal
    /// probability `1 / (1 + out_degree)`.
    pub targets: Vec<usize>,
}

impl ConsensusNodeState {
    pub fn out_probability(&self, target: usize) -> f64 {
        if self.targets.contains(&target) {
            1.0 / self.targets.len() as f64
        } else {
            0.0
        }
    }

    fn window_spread(&self) -> i64 {
        self.big_m
            .iter()
            .zip(&self.small_m)
            .map(|(hi, lo)| hi - lo)
            .max()
            .unwrap_or(0)
    }
}

/// One atomic `(c, 1)` fragment of mass and count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PieceMessage {
    pub payload_chi: Vec<i64>,
    pub payload_count: u64,
    pub sender: usize,
    pub receiver: usize,
    pub round: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusResult {
    /// Per-node estimate `m_i * Δ`; identical across nodes.
    pub estimates: Vec<Vec<f64>>,
    /// The common lattice index `m_i` behind the estimates.
    pub lattice: Vec<i64>,
    pub rounds_used: u64,
    pub pieces_sent_total: u64,
    pub bits_estimate: u64,
}

/// Sets `xi = 2`, `chi = 2 floor(phi / Δ)` and the uniform target law.
pub fn init_consensus(
    inputs: &[Vec<f64>],
    graph: &Digraph,
    level: QuantizationLevel,
) -> Result<Vec<ConsensusNodeState>> {
    if inputs.len() != graph.node_count() {
        return Err(Error::Dimension(format!(
            "{} inputs for {} nodes",
            inputs.len(),
            graph.node_count()
        )));
    }
    let dim = inputs.first().map_or(0, Vec::len);
    inputs
        .iter()
        .enumerate()
        .map(|(i, phi)| {
            if phi.len() != dim {
                return Err(Error::Dimension(format!(
                    "node {i} input has dimension {}, expected {dim}",
                    phi.len()
                )));
            }
            let q = level.quantize_floor(phi)?;
            let chi = q
                .values
                .iter()
                .map(|v| v.checked_mul(2).ok_or(Error::Overflow("consensus init")))
                .collect::<Result<Vec<_>>>()?;
            let mut targets = Vec::with_capacity(1 + graph.out_neighbors(i).len());
            targets.push(i);
            targets.extend_from_slice(graph.out_neighbors(i));
            Ok(ConsensusNodeState {
                chi,
                xi: 2,
                big_m: vec![0; dim],
                small_m: vec![0; dim],
                tau: 0,
                targets,
            })
        })
        .collect()
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

/// Executes round `t` (1-based) for all nodes. `delivered` is overwritten
/// with the pieces sent this round.
pub fn consensus_round(
    states: &mut [ConsensusNodeState],
    graph: &Digraph,
    diameter: usize,
    rngs: &mut [ChaCha8Rng],
    t: u64,
    delivered: &mut Vec<PieceMessage>,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidParameter("rounds start at t = 1".into()));
    }
    let d = diameter.max(1) as u64;
    // Last round's payload buffers are reused for this round's pieces.
    let mut pool: Vec<Vec<i64>> = delivered.drain(..).map(|m| m.payload_chi).collect();

    // Window refresh. `(t - 1) mod D == 0` is `t mod D == 1` for D > 1 and
    // fires every round for D == 1.
    if (t - 1).is_multiple_of(d) {
        for s in states.iter_mut() {
            let xi = s.xi as i64;
            for ((hi, lo), &c) in s.big_m.iter_mut().zip(s.small_m.iter_mut()).zip(&s.chi) {
                *hi = ceil_div(c, xi);
                *lo = c.div_euclid(xi);
            }
        }
    }

    // Max/min fusion over in-neighbors and self, against a start-of-round snapshot.
    let dim = states.first().map_or(0, |s| s.chi.len());
    let mut snapshot = Vec::with_capacity(2 * dim * states.len());
    for s in states.iter() {
        snapshot.extend_from_slice(&s.big_m);
        snapshot.extend_from_slice(&s.small_m);
    }
    for (i, s) in states.iter_mut().enumerate() {
        for &j in graph.in_neighbors(i) {
            let (hi_j, lo_j) = snapshot[2 * dim * j..2 * dim * (j + 1)].split_at(dim);
            for (hi, &h) in s.big_m.iter_mut().zip(hi_j) {
                *hi = (*hi).max(h);
            }
            for (lo, &l) in s.small_m.iter_mut().zip(lo_j) {
                *lo = (*lo).min(l);
            }
        }
    }

    // Mass splitting.
    for (i, (s, rng)) in states.iter_mut().zip(rngs.iter_mut()).enumerate() {
        s.tau = s.xi;
        while s.tau > 1 {
            let xi = s.xi as i64;
            let mut piece = pool.pop().unwrap_or_default();
            piece.clear();
            for c in s.chi.iter_mut() {
                let p = c.div_euclid(xi);
                *c -= p;
                piece.push(p);
            }
            s.xi -= 1;
            s.tau -= 1;
            let receiver = s.targets[rng.random_range(0..s.targets.len())];
            delivered.push(PieceMessage {
                payload_chi: piece,
                payload_count: 1,
                sender: i,
                receiver,
                round: t,
            });
        }
    }

    // Delivery and folding.
    for msg in delivered.iter() {
        let s = &mut states[msg.receiver];
        for (c, p) in s.chi.iter_mut().zip(&msg.payload_chi) {
            *c = c.checked_add(*p).ok_or(Error::Overflow("consensus delivery"))?;
        }
        s.xi += msg.payload_count;
    }
    Ok(())
}

/// True iff `t` closes a window and every node has `||M_i - m_i||_inf <= 1`.
pub fn check_stop(states: &[ConsensusNodeState], diameter: usize, t: u64) -> bool {
    t >= 1 && t.is_multiple_of(diameter.max(1) as u64) && states.iter().all(|s| s.window_spread() <= 1)
}

/// Per-node RNG streams derived from one master seed, so each node's draws
/// do not depend on the order in which nodes are advanced.
pub fn node_rngs(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rng
        })
        .collect()
}

/// splitmix64 finalizer; mixes a master seed with a sub-run index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stepwise simulator over one consensus invocation.
#[derive(Debug)]
pub struct ConsensusSim<'g> {
    graph: &'g Digraph,
    diameter: usize,
    level: QuantizationLevel,
    states: Vec<ConsensusNodeState>,
    rngs: Vec<ChaCha8Rng>,
    round: u64,
    pieces_sent: u64,
    last_delivered: Vec<PieceMessage>,
}

impl<'g> ConsensusSim<'g> {
    pub fn new(
        inputs: &[Vec<f64>],
        graph: &'g Digraph,
        level: QuantizationLevel,
        seed: u64,
    ) -> Result<Self> {
        let diameter = graph.diameter()?;
        Self::with_diameter(inputs, graph, diameter, level, seed)
    }

    /// Uses a precomputed diameter; the caller guarantees strong connectivity.
    pub fn with_diameter(
        inputs: &[Vec<f64>],
        graph: &'g Digraph,
        diameter: usize,
        level: QuantizationLevel,
        seed: u64,
    ) -> Result<Self> {
        let states = init_consensus(inputs, graph, level)?;
        Ok(Self {
            graph,
            diameter,
            level,
            rngs: node_rngs(seed, states.len()),
            states,
            round: 0,
            pieces_sent: 0,
            last_delivered: Vec::new(),
        })
    }

    pub fn states(&self) -> &[ConsensusNodeState] {
        &self.states
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn pieces_sent(&self) -> u64 {
        self.pieces_sent
    }

    pub fn last_delivered(&self) -> &[PieceMessage] {
        &self.last_delivered
    }

    /// Runs the next round; returns whether the stopping rule fired.
    pub fn step(&mut self) -> Result<bool> {
        let t = self.round + 1;
        consensus_round(
            &mut self.states,
            self.graph,
            self.diameter,
            &mut self.rngs,
            t,
            &mut self.last_delivered,
        )?;
        self.round = t;
        self.pieces_sent += self.last_delivered.len() as u64;
        Ok(check_stop(&self.states, self.diameter, t))
    }

    fn max_spread(&self) -> i64 {
        self.states.iter().map(ConsensusNodeState::window_spread).max().unwrap_or(0)
    }

    pub fn result(&self) -> ConsensusResult {
        let dim = self.states.first().map_or(0, |s| s.chi.len());
        let estimates = self
            .states
            .iter()
            .map(|s| s.small_m.iter().map(|&v| self.level.lattice_value(v)).collect())
            .collect();
        ConsensusResult {
            estimates,
            lattice: self.states.first().map(|s| s.small_m.clone()).unwrap_or_default(),
            rounds_used: self.round,
            pieces_sent_total: self.pieces_sent,
            bits_estimate: self.pieces_sent * (dim as u64 * PAYLOAD_INT_BITS + PIECE_HEADER_BITS),
        }
    }

    /// Steps until the stopping rule fires, calling `observe` after each round.
    pub fn run_observed(
        &mut self,
        round_cap: u64,
        mut observe: impl FnMut(&Self) -> Result<()>,
    ) -> Result<ConsensusResult> {
        if round_cap == 0 {
            return Err(Error::InvalidParameter("round cap must be positive".into()));
        }
        loop {
            if self.round >= round_cap {
                return Err(Error::RoundCapExceeded {
                    cap: round_cap,
                    diameter: self.diameter,
                    spread: self.max_spread(),
                });
            }
            let stop = self.step()?;
            observe(self)?;
            if stop {
                return Ok(self.result());
            }
        }
    }

    pub fn run(&mut self, round_cap: u64) -> Result<ConsensusResult> {
        self.run_observed(round_cap, |_| Ok(()))
    }
}

pub fn default_round_cap(diameter: usize) -> u64 {
    DEFAULT_CAP_PER_DIAMETER * diameter.max(1) as u64
}

/// Runs the protocol to completion on a strongly connected graph.
pub fn run_dfqac(
    inputs: &[Vec<f64>],
    graph: &Digraph,
    level: QuantizationLevel,
    seed: u64,
    round_cap: u64,
) -> Result<ConsensusResult> {
    ConsensusSim::new(inputs, graph, level, seed)?.run(round_cap)
}

/// Per-round CSV transcript: one row per node per round.
pub struct TranscriptWriter<W: Write> {
    writer: csv::Writer<W>,
}

fn join(v: &[i64]) -> String {
    v.iter().map(i64::to_string).collect::<Vec<_>>().join(";")
}

impl<W: Write> TranscriptWriter<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(["round", "node", "chi", "xi", "big_m", "small_m", "pieces_sent"])?;
        Ok(Self { writer })
    }

    pub fn record(&mut self, sim: &ConsensusSim<'_>) -> Result<()> {
        let mut sent = vec![0u64; sim.states().len()];
        for msg in sim.last_delivered() {
            sent[msg.sender] += 1;
        }
        for (i, s) in sim.states().iter().enumerate() {
            self.writer.write_record([
                sim.round().to_string(),
                i.to_string(),
                join(&s.chi),
                s.xi.to_string(),
                join(&s.big_m),
                join(&s.small_m),
                sent[i].to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io("transcript", e))
    }
}

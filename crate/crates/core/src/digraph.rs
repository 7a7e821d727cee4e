//! Static directed communication topology.
//!
//! Node ids are `0..n` in memory. The edge-list text format is 1-based:
//! the first line holds `N`, every following line a `receiver sender` pair.
//! Self-loops are implied for every node and never written.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Directed graph with a virtual self-edge at every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    n: usize,
    out_neighbors: Vec<Vec<usize>>,
    in_neighbors: Vec<Vec<usize>>,
}

/// Borrowed neighborhood of one node. Neither set contains the node itself.
#[derive(Debug, Clone, Copy)]
pub struct NeighborView<'a> {
    pub in_neighbors: &'a [usize],
    pub out_neighbors: &'a [usize],
    pub in_degree: usize,
    pub out_degree: usize,
}

impl Digraph {
    /// Builds a graph from `(receiver, sender)` pairs over `0..n`.
    /// Self pairs are accepted and ignored, duplicates collapse.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut out_sets = vec![BTreeSet::new(); n];
        let mut in_sets = vec![BTreeSet::new(); n];
        for (receiver, sender) in edges {
            if receiver >= n || sender >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({receiver}, {sender}) out of range for {n} nodes"
                )));
            }
            if receiver == sender {
                continue;
            }
            out_sets[sender].insert(receiver);
            in_sets[receiver].insert(sender);
        }
        Ok(Self {
            n,
            out_neighbors: out_sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            in_neighbors: in_sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    /// Directed cycle `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn cycle(n: usize) -> Result<Self> {
        Self::from_edges(n, (0..n).map(|i| ((i + 1) % n, i)))
    }

    /// Every ordered pair of distinct nodes is an edge.
    pub fn complete(n: usize) -> Result<Self> {
        Self::from_edges(
            n,
            (0..n).flat_map(|r| (0..n).filter(move |&s| s != r).map(move |s| (r, s))),
        )
    }

    /// Random strongly connected digraph: a random Hamiltonian cycle plus
    /// uniformly chosen extra edges until `edge_density * n * (n - 1)`
    /// non-self edges exist. Deterministic in `(n, edge_density, seed)`.
    pub fn random_strongly_connected(n: usize, edge_density: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        if !(edge_density > 0.0 && edge_density <= 1.0) {
            return Err(Error::InvalidGraph(format!(
                "edge density {edge_density} outside (0, 1]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut present = vec![false; n * n];
        let mut edges = Vec::new();
        if n > 1 {
            for w in 0..n {
                let sender = order[w];
                let receiver = order[(w + 1) % n];
                present[receiver * n + sender] = true;
                edges.push((receiver, sender));
            }
        }
        let possible = n * (n - 1);
        let target = ((edge_density * possible as f64).ceil() as usize).min(possible);
        if edges.len() < target {
            let mut candidates: Vec<(usize, usize)> = (0..n)
                .flat_map(|r| (0..n).map(move |s| (r, s)))
                .filter(|&(r, s)| r != s && !present[r * n + s])
                .collect();
            candidates.shuffle(&mut rng);
            let extra = target - edges.len();
            edges.extend(candidates.into_iter().take(extra));
        }
        Self::from_edges(n, edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Number of non-self directed edges.
    pub fn edge_count(&self) -> usize {
        self.out_neighbors.iter().map(Vec::len).sum()
    }

    pub fn neighbors(&self, i: usize) -> NeighborView<'_> {
        NeighborView {
            in_neighbors: &self.in_neighbors[i],
            out_neighbors: &self.out_neighbors[i],
            in_degree: self.in_neighbors[i].len(),
            out_degree: self.out_neighbors[i].len(),
        }
    }

    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_neighbors[i]
    }

    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    /// All `(receiver, sender)` pairs including the self-loops.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |s| {
            std::iter::once((s, s)).chain(self.out_neighbors[s].iter().map(move |&r| (r, s)))
        })
    }

    fn bfs(&self, source: usize, reverse: bool) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            let next = if reverse { &self.in_neighbors[u] } else { &self.out_neighbors[u] };
            for &v in next {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_strongly_connected(&self) -> bool {
        let forward = self.bfs(0, false);
        let backward = self.bfs(0, true);
        forward.iter().chain(backward.iter()).all(Option::is_some)
    }

    /// Longest shortest directed path. A single node has diameter 1 so that
    /// the consensus window is never empty.
    pub fn diameter(&self) -> Result<usize> {
        if !self.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        let mut d = 1;
        for s in 0..self.n {
            for dist in self.bfs(s, false).into_iter().flatten() {
                d = d.max(dist);
            }
        }
        Ok(d)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for (r, s) in self.edges().filter(|(r, s)| r != s) {
            let _ = writeln!(out, "{} {}", r + 1, s + 1);
        }
        out
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty edge list".into()))?;
        let n: usize = header
            .parse()
            .map_err(|_| Error::Parse(format!("bad node count {header:?}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            let mut field = || -> Result<usize> {
                let tok = parts
                    .next()
                    .ok_or_else(|| Error::Parse(format!("short edge line {line:?}")))?;
                let v: usize = tok
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad node id {tok:?}")))?;
                if v == 0 || v > n {
                    return Err(Error::Parse(format!("node id {v} outside 1..={n}")));
                }
                Ok(v - 1)
            };
            let r = field()?;
            let s = field()?;
            edges.push((r, s));
        }
        Self::from_edges(n, edges)
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list(&text)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list()).map_err(|e| Error::io(path, e))
    }
}

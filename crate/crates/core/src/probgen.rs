//! Seeded random instances and a plain-text instance format.
//!
//! Layout of the text format (whitespace separated, `#` starts a comment):
//!
//! ```text
//! N m
//! b_1 .. b_m
//! n_1 p_1
//! C_1 row-major (p_1 × n_1)
//! e_1 (p_1 values)
//! A_1 row-major (m × n_1)
//! scaled tau | dense P_1 row-major (n_1 × n_1)
//! n_2 p_2
//! ...
//! ```
//!
//! Floats are written in shortest round-trip scientific form, so reading an
//! instance back gives bit-identical data.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::admm::prox_threshold;
use crate::error::{Error, Result};
use crate::local_solver::{spectral_norm, LocalProblem, ProxWeight, QuadraticObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CouplingSpec {
    /// `A_i = I`, so `m = n_i`.
    Identity,
    /// Standard normal `rows × n_i` blocks.
    Random { rows: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceSpec {
    pub n_nodes: usize,
    pub local_dim: usize,
    pub data_rows: usize,
    pub coupling: CouplingSpec,
    /// Right-hand side; empty means the zero vector.
    pub b: Vec<f64>,
    pub seed: u64,
    /// `P_i = tau_i I` with `tau_i = theta_i + rho * tau_slack * ||A_i||²`.
    pub tau_slack: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self::desk(0)
    }
}

impl InstanceSpec {
    /// N = 100, n_i = 100, p = 120, identity coupling, b = 0.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            n_nodes: 100,
            local_dim: 100,
            data_rows: 120,
            coupling: CouplingSpec::Identity,
            b: Vec::new(),
            seed,
            tau_slack: 1e-3,
        }
    }

    /// N = 10, n_i = 5, p = 8.
    pub fn desk(seed: u64) -> Self {
        Self { n_nodes: 10, local_dim: 5, data_rows: 8, ..Self::full_scale(seed) }
    }

    /// N = 20, n_i = 10, p = 12.
    pub fn medium(seed: u64) -> Self {
        Self { n_nodes: 20, local_dim: 10, data_rows: 12, ..Self::full_scale(seed) }
    }

    pub fn constraint_dim(&self) -> usize {
        match self.coupling {
            CouplingSpec::Identity => self.local_dim,
            CouplingSpec::Random { rows } => rows,
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_nodes == 0 || self.local_dim == 0 || self.data_rows == 0 || self.constraint_dim() == 0 {
            return Err(Error::InvalidParameter("instance dimensions must be positive".into()));
        }
        if !self.b.is_empty() && self.b.len() != self.constraint_dim() {
            return Err(Error::Dimension(format!(
                "b has {} entries, constraint dimension is {}",
                self.b.len(),
                self.constraint_dim()
            )));
        }
        if !(self.tau_slack > 0.0) {
            return Err(Error::InvalidParameter("tau_slack must be positive".into()));
        }
        Ok(())
    }
}

/// Problems and right-hand side of one coupled instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub problems: Vec<LocalProblem>,
    pub b: DVector<f64>,
}

/// Draws `C_i`, `e_i` (and `A_i` when random) i.i.d. standard normal from one
/// seeded stream, node by node, and sets `P_i = tau_i I` admissible for
/// the given `rho` and `gamma`.
pub fn generate(spec: &InstanceSpec, rho: f64, gamma: f64) -> Result<Instance> {
    spec.check()?;
    if !(gamma > 0.0 && gamma < 2.0) || !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho = {rho}, gamma = {gamma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, p, m) = (spec.local_dim, spec.data_rows, spec.constraint_dim());
    let mut draw = |rows: usize, cols: usize| {
        DMatrix::from_row_iterator(rows, cols, (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
    };
    let mut problems = Vec::with_capacity(spec.n_nodes);
    for _ in 0..spec.n_nodes {
        let c = draw(p, n);
        let e = DVector::from_column_slice(draw(p, 1).as_slice());
        let a = match spec.coupling {
            CouplingSpec::Identity => DMatrix::identity(n, n),
            CouplingSpec::Random { rows } => draw(rows, n),
        };
        let norm = spectral_norm(&a);
        let tau = prox_threshold(rho, gamma, spec.n_nodes, norm) + rho * spec.tau_slack * norm * norm;
        problems.push(LocalProblem::new(QuadraticObjective::new(c, e)?, a, ProxWeight::Scaled(tau))?);
    }
    let b = if spec.b.is_empty() { DVector::zeros(m) } else { DVector::from_vec(spec.b.clone()) };
    Ok(Instance { problems, b })
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:e}").unwrap();
    }
    out.push('\n');
}

fn push_matrix(out: &mut String, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        push_row(out, m.row(r).iter().copied());
    }
}

struct Tokens<'a> {
    iter: Box<dyn Iterator<Item = &'a str> + 'a>,
}

impl<'a> Tokens<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.iter.next().ok_or_else(|| Error::Parse(format!("instance truncated at {what}")))
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.next(what)?;
        tok.parse().map_err(|_| Error::Parse(format!("bad {what}: {tok:?}")))
    }

    fn floats(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        (0..count).map(|_| self.parse(what)).collect()
    }
}

impl Instance {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {}", self.problems.len(), self.b.len()).unwrap();
        push_row(&mut out, self.b.iter().copied());
        for prob in &self.problems {
            let c = &prob.objective.c;
            writeln!(out, "{} {}", prob.dim(), c.nrows()).unwrap();
            push_matrix(&mut out, c);
            push_row(&mut out, prob.objective.e.iter().copied());
            push_matrix(&mut out, &prob.coupling);
            match &prob.prox_weight {
                ProxWeight::Scaled(tau) => writeln!(out, "scaled {tau:e}").unwrap(),
                ProxWeight::Dense(pm) => {
                    out.push_str("dense\n");
                    push_matrix(&mut out, pm);
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut t = Tokens {
            iter: Box::new(
                text.lines()
                    .map(|l| l.split('#').next().unwrap_or(""))
                    .flat_map(str::split_whitespace),
            ),
        };
        let n_nodes: usize = t.parse("N")?;
        let m: usize = t.parse("m")?;
        let b = DVector::from_vec(t.floats(m, "b")?);
        let mut problems = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let n: usize = t.parse("n_i")?;
            let p: usize = t.parse("p_i")?;
            let c = DMatrix::from_row_slice(p, n, &t.floats(p * n, "C")?);
            let e = DVector::from_vec(t.floats(p, "e")?);
            let a = DMatrix::from_row_slice(m, n, &t.floats(m * n, "A")?);
            let weight = match t.next("prox kind")? {
                "scaled" => ProxWeight::Scaled(t.parse("tau")?),
                "dense" => ProxWeight::Dense(DMatrix::from_row_slice(n, n, &t.floats(n * n, "P")?)),
                other => return Err(Error::Parse(format!("unknown prox kind {other:?}"))),
            };
            problems.push(LocalProblem::new(QuadraticObjective::new(c, e)?, a, weight)?);
        }
        if let Ok(extra) = t.next("end") {
            return Err(Error::Parse(format!("trailing token {extra:?}")));
        }
        Ok(Self { problems, b })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

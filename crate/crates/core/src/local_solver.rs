//! Per-node proximal subproblem
//!
//! ```text
//! argmin_x f(x) + 1/2 ||x - x_prev||²_P + rho/2 ||A x - A x_prev + d_hat + lambda_hat / rho||²
//! ```
//!
//! For `f(x) = 1/2 ||C x - e||²` the minimizer solves the normal equations
//! `(CᵀC + P + rho AᵀA) x = Cᵀe + P x_prev + Aᵀ(rho A x_prev - rho d_hat - lambda_hat)`,
//! whose matrix is constant across iterations and factored once.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// `f(x) = 1/2 ||C x - e||²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub c: DMatrix<f64>,
    pub e: DVector<f64>,
}

impl QuadraticObjective {
    pub fn new(c: DMatrix<f64>, e: DVector<f64>) -> Result<Self> {
        if c.nrows() != e.len() {
            return Err(Error::Dimension(format!(
                "C has {} rows but e has {} entries",
                c.nrows(),
                e.len()
            )));
        }
        Ok(Self { c, e })
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.c * x - &self.e).norm_squared()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.c.tr_mul(&(&self.c * x - &self.e))
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        self.c.tr_mul(&self.c)
    }
}

/// Smooth convex local cost for the Newton path.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Defaults to central differences of the gradient.
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for j in 0..n {
            let step = 1e-6 * (1.0 + x[j].abs());
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[j] += step;
            minus[j] -= step;
            let col = (self.gradient(&plus) - self.gradient(&minus)) / (2.0 * step);
            h.set_column(j, &col);
        }
        0.5 * (&h + h.transpose())
    }
}

impl SmoothObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        QuadraticObjective::dim(self)
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        QuadraticObjective::value(self, x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        QuadraticObjective::gradient(self, x)
    }

    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        QuadraticObjective::hessian(self)
    }
}

/// Proximal weight `P_i`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProxWeight {
    /// `tau * I`
    Scaled(f64),
    Dense(DMatrix<f64>),
}

impl ProxWeight {
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            ProxWeight::Scaled(tau) => DMatrix::identity(n, n) * *tau,
            ProxWeight::Dense(p) => p.clone(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            ProxWeight::Scaled(tau) => v * *tau,
            ProxWeight::Dense(p) => p * v,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            ProxWeight::Scaled(tau) => *tau,
            ProxWeight::Dense(p) => min_eigenvalue(p),
        }
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigenvalues().min()
}

/// One node's data: objective, coupling block `A_i` (m × n_i) and `P_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalProblem {
    pub objective: QuadraticObjective,
    pub coupling: DMatrix<f64>,
    pub prox_weight: ProxWeight,
}

impl LocalProblem {
    pub fn new(
        objective: QuadraticObjective,
        coupling: DMatrix<f64>,
        prox_weight: ProxWeight,
    ) -> Result<Self> {
        let n = objective.dim();
        if coupling.ncols() != n {
            return Err(Error::Dimension(format!(
                "coupling has {} columns, objective dimension {n}",
                coupling.ncols()
            )));
        }
        if let ProxWeight::Dense(p) = &prox_weight {
            if p.nrows() != n || p.ncols() != n {
                return Err(Error::Dimension(format!("P is {}x{}, expected {n}x{n}", p.nrows(), p.ncols())));
            }
            if (p - p.transpose()).amax() > 1e-12 * (1.0 + p.amax()) {
                return Err(Error::InvalidParameter("P must be symmetric".into()));
            }
        }
        Ok(Self { objective, coupling, prox_weight })
    }

    /// `n_i`
    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    /// `m`, the number of coupling rows.
    pub fn constraint_dim(&self) -> usize {
        self.coupling.nrows()
    }

    /// `CᵀC + P + rho AᵀA`
    pub fn subproblem_hessian(&self, rho: f64) -> DMatrix<f64> {
        self.objective.hessian()
            + self.prox_weight.matrix(self.dim())
            + self.coupling.tr_mul(&self.coupling) * rho
    }

    fn check_dims(&self, x_prev: &DVector<f64>, d_hat: &DVector<f64>, lambda_hat: &DVector<f64>) -> Result<()> {
        let (n, m) = (self.dim(), self.constraint_dim());
        if x_prev.len() != n || d_hat.len() != m || lambda_hat.len() != m {
            return Err(Error::Dimension(format!(
                "prox step expects x in R^{n} and d, lambda in R^{m}; got {}, {}, {}",
                x_prev.len(),
                d_hat.len(),
                lambda_hat.len()
            )));
        }
        Ok(())
    }

    /// Right-hand side of the normal equations.
    pub fn prox_rhs(
        &self,
        x_prev: &DVector<f64>,
        d_hat: &DVector<f64>,
        lambda_hat: &DVector<f64>,
        rho: f64,
    ) -> DVector<f64> {
        let a = &self.coupling;
        let inner = (a * x_prev) * rho - d_hat * rho - lambda_hat;
        self.objective.c.tr_mul(&self.objective.e) + self.prox_weight.apply(x_prev) + a.tr_mul(&inner)
    }

    /// Value of the full proximal subproblem at `x`.
    pub fn subproblem_value(
        &self,
        x: &DVector<f64>,
        x_prev: &DVector<f64>,
        d_hat: &DVector<f64>,
        lambda_hat: &DVector<f64>,
        rho: f64,
    ) -> f64 {
        let dx = x - x_prev;
        let pen = &self.coupling * &dx + d_hat + lambda_hat / rho;
        self.objective.value(x) + 0.5 * dx.dot(&self.prox_weight.apply(&dx)) + 0.5 * rho * pen.norm_squared()
    }
}

/// Factored subproblem for a fixed `rho`; reused across outer iterations.
#[derive(Debug, Clone)]
pub struct PreparedProx {
    factor: Cholesky<f64, Dyn>,
    cte: DVector<f64>,
    rho: f64,
}

impl PreparedProx {
    pub fn new(problem: &LocalProblem, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        let h = problem.subproblem_hessian(rho);
        let factor = Cholesky::new(h).ok_or_else(|| {
            Error::NotPositiveDefinite("CᵀC + P + rho AᵀA failed Cholesky".into())
        })?;
        let cte = problem.objective.c.tr_mul(&problem.objective.e);
        Ok(Self { factor, cte, rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn step(
        &self,
        problem: &LocalProblem,
        x_prev: &DVector<f64>,
        d_hat: &DVector<f64>,
        lambda_hat: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        problem.check_dims(x_prev, d_hat, lambda_hat)?;
        let a = &problem.coupling;
        let inner = (a * x_prev) * self.rho - d_hat * self.rho - lambda_hat;
        let rhs = &self.cte + problem.prox_weight.apply(x_prev) + a.tr_mul(&inner);
        Ok(self.factor.solve(&rhs))
    }
}

/// Exact minimizer of the quadratic proximal subproblem.
pub fn prox_step(
    problem: &LocalProblem,
    x_prev: &DVector<f64>,
    d_hat: &DVector<f64>,
    lambda_hat: &DVector<f64>,
    rho: f64,
) -> Result<DVector<f64>> {
    PreparedProx::new(problem, rho)?.step(problem, x_prev, d_hat, lambda_hat)
}

/// Damped Newton on the proximal subproblem of a generic smooth objective.
/// Stops when the subproblem gradient norm drops to `grad_tol`.
#[allow(clippy::too_many_arguments)]
pub fn newton_prox_step(
    objective: &dyn SmoothObjective,
    coupling: &DMatrix<f64>,
    prox_weight: &ProxWeight,
    x_prev: &DVector<f64>,
    d_hat: &DVector<f64>,
    lambda_hat: &DVector<f64>,
    rho: f64,
    grad_tol: f64,
) -> Result<DVector<f64>> {
    const MAX_ITERS: usize = 200;
    let n = objective.dim();
    let ata = coupling.tr_mul(coupling) * rho;
    let p = prox_weight.matrix(n);
    let shift = d_hat + lambda_hat / rho;
    let value = |x: &DVector<f64>| {
        let dx = x - x_prev;
        let pen = coupling * &dx + &shift;
        objective.value(x) + 0.5 * dx.dot(&(&p * &dx)) + 0.5 * rho * pen.norm_squared()
    };
    let gradient = |x: &DVector<f64>| {
        let dx = x - x_prev;
        objective.gradient(x) + &p * &dx + coupling.tr_mul(&(coupling * &dx + &shift)) * rho
    };

    let mut x = x_prev.clone();
    for _ in 0..MAX_ITERS {
        let g = gradient(&x);
        if g.norm() <= grad_tol {
            return Ok(x);
        }
        let h = objective.hessian(&x) + &p + &ata;
        let dir = match Cholesky::new(h) {
            Some(ch) => -ch.solve(&g),
            None => -g.clone(),
        };
        let f0 = value(&x);
        let slope = g.dot(&dir);
        let mut t = 1.0;
        loop {
            let cand = &x + &dir * t;
            if value(&cand) <= f0 + 1e-4 * t * slope || t < 1e-12 {
                x = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let g = gradient(&x);
    if g.norm() <= grad_tol * 10.0 {
        Ok(x)
    } else {
        Err(Error::NoConvergence(format!("Newton prox step stalled at gradient norm {:e}", g.norm())))
    }
}

/// Largest singular value by power iteration on `AᵀA`, stopped when the
/// eigen-residual is within `1e-10` of the Rayleigh quotient.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 || a.amax() == 0.0 {
        return 0.0;
    }
    let ata = a.tr_mul(a);
    // Fixed irregular start so no common structure is orthogonal to it.
    let mut v = DVector::from_fn(n, |j, _| 1.0 + ((j as f64 + 1.0) * 0.618_033_988_749_895).fract());
    v.normalize_mut();
    for _ in 0..100_000 {
        let w = &ata * &v;
        let lambda = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let residual = (&w - &v * lambda).norm();
        v = w / norm;
        if residual <= 1e-10 * lambda.abs() {
            break;
        }
    }
    // ||Av|| / ||v|| rather than sqrt of the Rayleigh quotient: exact for
    // isometries such as the identity.
    (a * &v).norm() / v.norm()
}

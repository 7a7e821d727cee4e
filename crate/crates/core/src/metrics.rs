//! Ground truth and scalar diagnostics: KKT oracle, Lagrangians, the
//! Lyapunov merit, the ergodic-bound constant and weighted successive
//! differences.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::local_solver::{min_eigenvalue, LocalProblem};

/// A primal-dual pair satisfying the KKT conditions of the coupled problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddlePoint {
    pub x_star: Vec<DVector<f64>>,
    pub lambda_star: DVector<f64>,
    /// max of the coupling residual norm and the per-node stationarity norms.
    pub nu_residual: f64,
}

fn constraint_dim(problems: &[LocalProblem], b: &DVector<f64>) -> Result<usize> {
    let m = b.len();
    for (i, p) in problems.iter().enumerate() {
        if p.constraint_dim() != m {
            return Err(Error::Dimension(format!(
                "node {i} coupling has {} rows, b has {m}",
                p.constraint_dim()
            )));
        }
    }
    Ok(m)
}

/// `sum_i A_i x_i - b`
pub fn coupling_residual(x: &[DVector<f64>], problems: &[LocalProblem], b: &DVector<f64>) -> DVector<f64> {
    let mut r = -b.clone();
    for (xi, p) in x.iter().zip(problems) {
        r += &p.coupling * xi;
    }
    r
}

fn kkt_residual(
    x: &[DVector<f64>],
    lambda: &DVector<f64>,
    problems: &[LocalProblem],
    b: &DVector<f64>,
) -> f64 {
    let feas = coupling_residual(x, problems, b).norm();
    problems
        .iter()
        .zip(x)
        .map(|(p, xi)| (p.objective.gradient(xi) + p.coupling.tr_mul(lambda)).norm())
        .fold(feas, f64::max)
}

/// Solves `∇f_i(x_i) + A_iᵀλ = 0`, `Σ A_i x_i = b` by block elimination over
/// `H_i = C_iᵀC_i`; falls back to one dense LU of the full KKT matrix when
/// some `H_i` is singular.
pub fn kkt_oracle(problems: &[LocalProblem], b: &DVector<f64>) -> Result<SaddlePoint> {
    let m = constraint_dim(problems, b)?;
    let factors: Option<Vec<_>> = problems
        .iter()
        .map(|p| Cholesky::new(p.objective.hessian()))
        .collect();
    let (x_star, lambda_star) = match factors {
        Some(factors) => {
            let mut schur = DMatrix::zeros(m, m);
            let mut rhs = -b.clone();
            let mut hinv_cte = Vec::with_capacity(problems.len());
            for (p, f) in problems.iter().zip(&factors) {
                let a = &p.coupling;
                let hinv_at = f.solve(&a.transpose());
                schur += a * &hinv_at;
                let u = f.solve(&p.objective.c.tr_mul(&p.objective.e));
                rhs += a * &u;
                hinv_cte.push(u);
            }
            let lambda = schur
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::NotPositiveDefinite("singular Schur complement".into()))?;
            let x = problems
                .iter()
                .zip(&factors)
                .zip(hinv_cte)
                .map(|((p, f), u)| u - f.solve(&p.coupling.tr_mul(&lambda)))
                .collect();
            (x, lambda)
        }
        None => dense_kkt(problems, b, m)?,
    };
    let nu_residual = kkt_residual(&x_star, &lambda_star, problems, b);
    Ok(SaddlePoint { x_star, lambda_star, nu_residual })
}

fn dense_kkt(problems: &[LocalProblem], b: &DVector<f64>, m: usize) -> Result<(Vec<DVector<f64>>, DVector<f64>)> {
    let total: usize = problems.iter().map(LocalProblem::dim).sum();
    let size = total + m;
    let mut k = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    let mut off = 0;
    for p in problems {
        let n = p.dim();
        k.view_mut((off, off), (n, n)).copy_from(&p.objective.hessian());
        k.view_mut((off, total), (n, m)).copy_from(&p.coupling.transpose());
        k.view_mut((total, off), (m, n)).copy_from(&p.coupling);
        rhs.rows_mut(off, n).copy_from(&p.objective.c.tr_mul(&p.objective.e));
        off += n;
    }
    rhs.rows_mut(total, m).copy_from(b);
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotPositiveDefinite("singular KKT system".into()))?;
    let mut off = 0;
    let x = problems
        .iter()
        .map(|p| {
            let v = sol.rows(off, p.dim()).into_owned();
            off += p.dim();
            v
        })
        .collect();
    Ok((x, sol.rows(total, m).into_owned()))
}

/// `Σ f_i(x_i) + λᵀ(Σ A_i x_i - b)`
pub fn lagrangian(x: &[DVector<f64>], lambda: &DVector<f64>, problems: &[LocalProblem], b: &DVector<f64>) -> f64 {
    let f: f64 = problems.iter().zip(x).map(|(p, xi)| p.objective.value(xi)).sum();
    f + lambda.dot(&coupling_residual(x, problems, b))
}

/// Lagrangian plus `rho/2 ||Σ A_i x_i - b||²`.
pub fn augmented_lagrangian(
    x: &[DVector<f64>],
    lambda: &DVector<f64>,
    problems: &[LocalProblem],
    b: &DVector<f64>,
    rho: f64,
) -> f64 {
    let r = coupling_residual(x, problems, b);
    let f: f64 = problems.iter().zip(x).map(|(p, xi)| p.objective.value(xi)).sum();
    f + lambda.dot(&r) + 0.5 * rho * r.norm_squared()
}

/// `Σ_i ||x_i - x_i*||_1`
pub fn l1_error(x: &[DVector<f64>], x_star: &[DVector<f64>]) -> f64 {
    x.iter().zip(x_star).map(|(a, b)| (a - b).lp_norm(1)).sum()
}

/// `||v||²_W` for `W = P + rho AᵀA`, without forming `W`.
fn prox_metric_sq(p: &LocalProblem, v: &DVector<f64>, rho: f64) -> f64 {
    v.dot(&p.prox_weight.apply(v)) + rho * (&p.coupling * v).norm_squared()
}

/// Lyapunov quantity
/// `1/2 Σ ||x_i - x_i*||²_{P_i + rho A_iᵀA_i} + 1/(2 gamma rho) avg_i ||λ̂_i - λ*||²`.
///
/// With a single (centralized) multiplier pass a one-element slice.
pub fn merit(
    x: &[DVector<f64>],
    lambda_hat: &[DVector<f64>],
    saddle: &SaddlePoint,
    problems: &[LocalProblem],
    rho: f64,
    gamma: f64,
) -> f64 {
    let primal: f64 = problems
        .iter()
        .zip(x)
        .zip(&saddle.x_star)
        .map(|((p, xi), xs)| prox_metric_sq(p, &(xi - xs), rho))
        .sum();
    let dual = if lambda_hat.is_empty() {
        0.0
    } else {
        lambda_hat
            .iter()
            .map(|l| (l - &saddle.lambda_star).norm_squared())
            .sum::<f64>()
            / lambda_hat.len() as f64
    };
    0.5 * primal + dual / (2.0 * gamma * rho)
}

/// Constant `C` of the ergodic bound, evaluated at the initial iterates.
pub fn theorem_constant_c(
    x_init: &[DVector<f64>],
    lambda_init: &[DVector<f64>],
    saddle: &SaddlePoint,
    problems: &[LocalProblem],
    rho: f64,
    gamma: f64,
) -> f64 {
    merit(x_init, lambda_init, saddle, problems, rho, gamma)
}

/// `1/2 Σ ||x_i - x_i'||²_{rho AᵀA + P - (rho/eps_i) AᵀA}`; errors when a weight
/// matrix is indefinite.
pub fn corollary_weighted_diff(
    x_curr: &[DVector<f64>],
    x_next: &[DVector<f64>],
    problems: &[LocalProblem],
    rho: f64,
    epsilons: &[f64],
) -> Result<f64> {
    if epsilons.len() != problems.len() {
        return Err(Error::Dimension(format!(
            "{} epsilons for {} nodes",
            epsilons.len(),
            problems.len()
        )));
    }
    let mut total = 0.0;
    for (i, (((p, a), b), &eps)) in problems.iter().zip(x_curr).zip(x_next).zip(epsilons).enumerate() {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon_{i} must be positive")));
        }
        let n = p.dim();
        let ata = p.coupling.tr_mul(&p.coupling);
        let w = &ata * (rho - rho / eps) + p.prox_weight.matrix(n);
        let lmin = min_eigenvalue(&w);
        if lmin < -1e-12 * (1.0 + w.amax()) {
            return Err(Error::IndefiniteWeight { node: i, min_eigenvalue: lmin });
        }
        let d = a - b;
        total += d.dot(&(&w * &d));
    }
    Ok(0.5 * total)
}

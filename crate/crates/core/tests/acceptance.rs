//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qdpj::admm::{default_init, qdpj_admm_run_observed, validate_parameters};
use qdpj::consensus::ConsensusSim;
use qdpj::experiment::{compare_traces, run_experiment, trace_file_name, Algorithm, ExperimentConfig, GraphSpec};
use qdpj::metrics::{kkt_oracle, l1_error, theorem_constant_c};
use qdpj::probgen::Instance;
use qdpj::{
    centralized_pj_admm_run, generate, qdpj_admm_run, AdmmConfig, AveragingMode, CommMode, Digraph, InstanceSpec,
    LocalProblem, QuantizationLevel,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn lvl(s: &str) -> QuantizationLevel {
    s.parse().unwrap()
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{what} took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
}

/// Criteria 1 and 2 share the same 216 consensus runs.
fn consensus_sweep() -> (Outcome, Outcome) {
    let started = Instant::now();
    let mut runs = 0;
    let mut worst_ratio = 0.0f64;
    let mut rounds_checked = 0u64;
    let mut accuracy: Result<(), String> = Ok(());
    let mut conservation: Result<(), String> = Ok(());
    let levels = [lvl("1"), lvl("0.1"), lvl("1e-3")];
    for seed in 0..72u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(3..=20usize);
        let m = rng.random_range(1..=5usize);
        let density = rng.random_range(0.0..0.5);
        let g = Digraph::random_strongly_connected(n, density, seed).unwrap();
        let phi: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(-50.0..50.0)).collect()).collect();
        let avg: Vec<f64> = (0..m).map(|j| phi.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        for level in levels {
            runs += 1;
            let mut sim = ConsensusSim::new(&phi, &g, level, seed).unwrap();
            let mass0: Vec<i128> =
                (0..m).map(|j| sim.states().iter().map(|s| s.chi[j] as i128).sum()).collect();
            let mut local_cons = Ok(());
            let result = sim.run_observed(1_000_000, |s| {
                let states = s.states();
                let mass: Vec<i128> = (0..m).map(|j| states.iter().map(|st| st.chi[j] as i128).sum()).collect();
                let count: u64 = states.iter().map(|st| st.xi).sum();
                if local_cons.is_ok() && (mass != mass0 || count != 2 * n as u64) {
                    local_cons = Err(format!(
                        "seed {seed} Δ={level} round {}: mass {mass:?} vs {mass0:?}, count {count} vs {}",
                        s.round(),
                        2 * n
                    ));
                }
                rounds_checked += 1;
                Ok(())
            });
            if conservation.is_ok() {
                conservation = local_cons;
            }
            let r = match result {
                Ok(r) => r,
                Err(e) => {
                    if accuracy.is_ok() {
                        accuracy = Err(format!("seed {seed} Δ={level} did not terminate: {e}"));
                    }
                    continue;
                }
            };
            if accuracy.is_err() {
                continue;
            }
            if r.estimates.iter().any(|e| e != &r.estimates[0]) {
                accuracy = Err(format!("seed {seed} Δ={level}: nodes disagree"));
                continue;
            }
            let err = r.estimates[0].iter().zip(&avg).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let bound = 2.0 * (m as f64).sqrt() * level.as_f64();
            worst_ratio = worst_ratio.max(err / bound);
            if err > bound {
                accuracy = Err(format!("seed {seed} Δ={level}: error {err:e} > bound {bound:e}"));
            }
        }
    }
    let elapsed = started.elapsed();
    let acc = accuracy
        .and_then(|_| ensure(runs >= 200, || format!("only {runs} runs")))
        .and_then(|_| within(elapsed, Duration::from_secs(60), "consensus sweep"))
        .map(|_| format!("{runs} runs, worst error/bound = {worst_ratio:.3}, {:.1}s", elapsed.as_secs_f64()));
    let cons = conservation.map(|_| format!("{rounds_checked} rounds checked"));
    (acc, cons)
}

/// Centralized proximal Jacobian ADMM written directly from its definition,
/// with a fresh LU solve per node per iteration.
fn reference_pj_admm(problems: &[LocalProblem], b: &DVector<f64>, rho: f64, gamma: f64, iters: usize) -> Vec<Vec<DVector<f64>>> {
    let mut x: Vec<DVector<f64>> = problems.iter().map(|p| DVector::zeros(p.dim())).collect();
    let mut lambda = DVector::zeros(b.len());
    let mut history = Vec::new();
    for _ in 0..iters {
        let total: DVector<f64> = problems.iter().zip(&x).map(|(p, xi)| &p.coupling * xi).sum();
        let next: Vec<DVector<f64>> = problems
            .iter()
            .zip(&x)
            .map(|(p, xi)| {
                let n = p.dim();
                let c = &p.objective.c;
                let a = &p.coupling;
                let pm = p.prox_weight.matrix(n);
                let others = &total - a * xi - b + &lambda / rho;
                let lhs: DMatrix<f64> = c.transpose() * c + a.transpose() * a * rho + &pm;
                let rhs = c.transpose() * &p.objective.e + &pm * xi - a.transpose() * others * rho;
                lhs.lu().solve(&rhs).expect("nonsingular")
            })
            .collect();
        x = next;
        let r: DVector<f64> = problems.iter().zip(&x).map(|(p, xi)| &p.coupling * xi).sum::<DVector<f64>>() - b;
        lambda += r * (gamma * rho);
        history.push(x.clone());
    }
    history
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let spec = InstanceSpec {
        n_nodes: 5,
        local_dim: 4,
        data_rows: 6,
        coupling: qdpj::CouplingSpec::Random { rows: 3 },
        b: vec![0.5, -1.0, 2.0],
        ..InstanceSpec::desk(17)
    };
    let config = AdmmConfig { max_outer_iterations: 20, averaging: AveragingMode::Exact, ..Default::default() };
    let inst = generate(&spec, config.rho, config.gamma).unwrap();
    let g = Digraph::random_strongly_connected(5, 0.3, 3).unwrap();
    let init = default_init(&inst.problems, 3, &config);
    let mut ours = Vec::new();
    qdpj_admm_run_observed(&inst.problems, &g, &inst.b, &config, &init, None, |_, v| {
        ours.push(v.iter().map(|n| n.x.clone()).collect::<Vec<_>>())
    })
    .map_err(|e| e.to_string())?;
    let reference = reference_pj_admm(&inst.problems, &inst.b, config.rho, config.gamma, 20);
    let mut worst = 0.0f64;
    for (k, (a, b)) in ours.iter().zip(&reference).enumerate() {
        for (xa, xb) in a.iter().zip(b) {
            let d = (xa - xb).amax();
            worst = worst.max(d);
            ensure(d <= 1e-8, || format!("iteration {}: coordinate gap {d:e}", k + 1))?;
        }
    }
    ensure(ours.len() == 20, || format!("{} iterations observed", ours.len()))?;
    within(started.elapsed(), Duration::from_secs(30), "equivalence")?;
    Ok(format!("max coordinate gap over 20 iterations {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let mut worst_l1 = 0.0f64;
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_iters = 0;
    for seed in 0..10 {
        let config = AdmmConfig { max_outer_iterations: 5000, ..Default::default() };
        let inst = generate(&InstanceSpec::desk(100 + seed), config.rho, config.gamma).unwrap();
        let saddle = kkt_oracle(&inst.problems, &inst.b).map_err(|e| e.to_string())?;
        let init = default_init(&inst.problems, inst.b.len(), &config);
        let out = centralized_pj_admm_run(&inst.problems, &inst.b, &config, &init, CommMode::Exact, Some(&saddle))
            .map_err(|e| e.to_string())?;
        let x0: Vec<_> = init.iter().map(|v| v.x.clone()).collect();
        let c0 = theorem_constant_c(&x0, std::slice::from_ref(&init[0].lambda_hat), &saddle, &inst.problems, config.rho, config.gamma);
        let mut prev = c0;
        for row in &out.trace {
            let m = row.merit.unwrap();
            worst_rise = worst_rise.max(m - prev);
            ensure(m <= prev + 1e-12, || format!("seed {seed} k={}: merit rose {:e}", row.k, m - prev))?;
            prev = m;
        }
        let hit = out.trace.iter().find(|r| r.l1_error.unwrap() <= 1e-5);
        let row = hit.ok_or_else(|| {
            format!("seed {seed}: l1 error {:e} after 5000 iterations", out.trace.last().unwrap().l1_error.unwrap())
        })?;
        worst_iters = worst_iters.max(row.k);
        let final_x: Vec<_> = out.variables.iter().map(|v| v.x.clone()).collect();
        worst_l1 = worst_l1.max(l1_error(&final_x, &saddle.x_star));
    }
    within(started.elapsed(), Duration::from_secs(60), "baseline runs")?;
    Ok(format!(
        "10 instances, l1 <= 1e-5 by iteration {worst_iters}, final l1 <= {worst_l1:.1e}, largest merit step {worst_rise:.1e}"
    ))
}

struct MediumRuns {
    inst: Instance,
    config: AdmmConfig,
    saddle: qdpj::SaddlePoint,
    traces: Vec<(QuantizationLevel, Vec<qdpj::IterationTrace>)>,
    elapsed: Duration,
}

fn medium_runs() -> Result<MediumRuns, String> {
    let started = Instant::now();
    let config = AdmmConfig { max_outer_iterations: 2000, master_seed: 5, ..Default::default() };
    let inst = generate(&InstanceSpec::medium(5), config.rho, config.gamma).unwrap();
    let g = Digraph::random_strongly_connected(20, 0.1, 5).unwrap();
    let saddle = kkt_oracle(&inst.problems, &inst.b).map_err(|e| e.to_string())?;
    let mut traces = Vec::new();
    for level in [lvl("1e-2"), lvl("1e-3"), lvl("1e-4")] {
        let c = AdmmConfig { level, ..config.clone() };
        let init = default_init(&inst.problems, inst.b.len(), &c);
        let out = qdpj_admm_run(&inst.problems, &g, &inst.b, &c, &init, Some(&saddle)).map_err(|e| e.to_string())?;
        traces.push((level, out.trace));
    }
    Ok(MediumRuns { inst, config, saddle, traces, elapsed: started.elapsed() })
}

fn tail_mean(trace: &[qdpj::IterationTrace], n: usize) -> f64 {
    trace[trace.len() - n..].iter().map(|r| r.l1_error.unwrap()).sum::<f64>() / n as f64
}

fn criterion_5(runs: &MediumRuns) -> Outcome {
    let floors: Vec<f64> = runs.traces.iter().map(|(_, t)| tail_mean(t, 100)).collect();
    ensure(floors.windows(2).all(|w| w[1] < w[0]), || format!("floors not decreasing: {floors:?}"))?;
    for (level, t) in &runs.traces {
        let (e200, e2000) = (t[199].l1_error.unwrap(), t[1999].l1_error.unwrap());
        ensure(e2000 < e200, || format!("Δ={level}: error at 2000 {e2000:e} not below error at 200 {e200:e}"))?;
    }
    within(runs.elapsed, Duration::from_secs(300), "medium runs")?;
    Ok(format!(
        "floors {:.2e} > {:.2e} > {:.2e}, {:.1}s",
        floors[0],
        floors[1],
        floors[2],
        runs.elapsed.as_secs_f64()
    ))
}

fn criterion_7(runs: &MediumRuns) -> Outcome {
    let init = default_init(&runs.inst.problems, runs.inst.b.len(), &runs.config);
    let x0: Vec<_> = init.iter().map(|v| v.x.clone()).collect();
    let c = theorem_constant_c(&x0, std::slice::from_ref(&init[0].lambda_hat), &runs.saddle, &runs.inst.problems, runs.config.rho, runs.config.gamma);
    let mut report = Vec::new();
    for (level, t) in &runs.traces {
        let gaps: Vec<f64> = t.iter().map(|r| r.lagrangian_gap.unwrap()).collect();
        // Level the gap settles at: the largest gap over the last tenth.
        let plateau = gaps[gaps.len() - gaps.len() / 10..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let v: Vec<f64> = [500usize, 1000, 2000]
            .iter()
            .map(|&k| gaps[..k].iter().sum::<f64>() / k as f64 - c / k as f64)
            .collect();
        let bound = plateau.max(v[0]);
        for (k, vk) in [500, 1000, 2000].iter().zip(&v) {
            ensure(*vk <= bound * (1.0 + 1e-9) + 1e-15, || {
                format!("Δ={level} K={k}: Cesàro excess {vk:e} above bound {bound:e}")
            })?;
        }
        report.push(format!("Δ={level}: [{:.2e}, {:.2e}, {:.2e}] <= {bound:.2e}", v[0], v[1], v[2]));
    }
    Ok(format!("C = {c:.3e}; {}", report.join("; ")))
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = ExperimentConfig::full_scale(1);
    config.admm.max_outer_iterations = 600;
    config.output_dir = dir.path().to_path_buf();
    let out = run_experiment(&config).map_err(|e| e.to_string())?;
    let summaries = compare_traces(&out.trace_files).map_err(|e| e.to_string())?;
    let floor_of = |alg: Algorithm, level: QuantizationLevel| -> Result<(f64, f64), String> {
        let path = dir.path().join(trace_file_name(alg, level));
        let t = qdpj::admm::read_trace_csv(std::fs::File::open(&path).map_err(|e| e.to_string())?, &path)
            .map_err(|e| e.to_string())?;
        Ok((tail_mean(&t, 100), tail_mean(&t[..t.len() - 100], 100)))
    };
    let mut lines = Vec::new();
    let mut prev_q = f64::INFINITY;
    for level in config.deltas() {
        let (q, q_prev) = floor_of(Algorithm::Qdpj, level)?;
        let (cq, _) = floor_of(Algorithm::CentralizedQuantized, level)?;
        ensure((q - q_prev).abs() <= 0.1 * q, || format!("qdpj Δ={level} still moving: {q_prev:e} -> {q:e}"))?;
        ensure(q < prev_q, || format!("qdpj floor at Δ={level} ({q:e}) not below the coarser level ({prev_q:e})"))?;
        ensure(cq >= q, || format!("centralized quantized floor {cq:e} below qdpj floor {q:e} at Δ={level}"))?;
        prev_q = q;
        lines.push(format!("Δ={level}: qdpj {q:.2e}, centralized {cq:.2e}"));
    }
    ensure(summaries.len() == 9, || format!("{} traces written", summaries.len()))?;

    // Determinism: a shorter rerun reproduces the leading rows byte for byte.
    let dir2 = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rerun = config.clone();
    rerun.admm.max_outer_iterations = 20;
    rerun.algorithms = vec![Algorithm::Qdpj];
    rerun.delta_sweep = vec![lvl("1e-6")];
    rerun.output_dir = dir2.path().to_path_buf();
    run_experiment(&rerun).map_err(|e| e.to_string())?;
    let name = trace_file_name(Algorithm::Qdpj, lvl("1e-6"));
    let full = std::fs::read_to_string(dir.path().join(&name)).unwrap();
    let short = std::fs::read_to_string(dir2.path().join(&name)).unwrap();
    ensure(full.starts_with(&short), || "rerun diverged from the full-length trace".into())?;

    let elapsed = started.elapsed();
    within(elapsed, Duration::from_secs(1800), "full-scale sweep")?;
    Ok(format!("{}; {:.0}s", lines.join("; "), elapsed.as_secs_f64()))
}

fn criterion_8() -> Outcome {
    let config = AdmmConfig::default();
    let inst = generate(&InstanceSpec::full_scale(0), config.rho, config.gamma).unwrap();
    let report = validate_parameters(&config, &inst.problems, 100).map_err(|e| e.to_string())?;
    for n in &report.nodes {
        ensure((n.theta - 0.99).abs() <= 1e-15, || format!("node {} theta {:e}", n.node, n.theta))?;
        ensure((n.prox_min_eigenvalue - 0.99001).abs() <= 1e-15, || format!("node {} tau {:e}", n.node, n.prox_min_eigenvalue))?;
        ensure((n.margin - 1e-5).abs() <= 1e-15, || format!("node {} margin {:e}", n.node, n.margin))?;
    }
    let n = &report.nodes[0];
    Ok(format!("theta = {}, tau = {}, margin = {:.6e} on all 100 nodes", n.theta, n.prox_min_eigenvalue, n.margin))
}

fn criterion_9() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = |dir: &Path| ExperimentConfig {
        instance: InstanceSpec::desk(21),
        graph: GraphSpec { n: 10, density: 0.2, seed: 22 },
        admm: AdmmConfig { max_outer_iterations: 200, master_seed: 23, ..Default::default() },
        algorithms: Algorithm::ALL.to_vec(),
        delta_sweep: vec![lvl("1e-2"), lvl("1e-4")],
        output_dir: dir.to_path_buf(),
    };
    let oa = run_experiment(&config(a.path())).map_err(|e| e.to_string())?;
    let ob = run_experiment(&config(b.path())).map_err(|e| e.to_string())?;
    ensure(oa.trace_files.len() == 5, || format!("{} traces", oa.trace_files.len()))?;
    for (fa, fb) in oa.trace_files.iter().zip(&ob.trace_files) {
        let (x, y) = (std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
        ensure(x == y, || format!("{} differs between runs", fa.display()))?;
    }
    Ok(format!("{} trace files byte-identical", oa.trace_files.len()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    })
}

fn report(results: &mut Vec<bool>, n: u32, name: &str, outcome: Outcome) {
    match &outcome {
        Ok(detail) => println!("criterion {n} ({name}): PASS: {detail}"),
        Err(detail) => println!("criterion {n} ({name}): FAIL: {detail}"),
    }
    results.push(outcome.is_ok());
}

fn main() {
    let mut results = Vec::new();
    let (c1, c2) = guarded_pair(consensus_sweep);
    report(&mut results, 1, "consensus accuracy", c1);
    report(&mut results, 2, "mass and count conservation", c2);
    report(&mut results, 3, "exact-averaging equivalence", guarded(criterion_3));
    report(&mut results, 4, "centralized baseline optimality", guarded(criterion_4));
    match guarded_value(medium_runs) {
        Ok(runs) => {
            report(&mut results, 5, "quantization floor ordering", guarded(|| criterion_5(&runs)));
            report(&mut results, 7, "Cesàro bound", guarded(|| criterion_7(&runs)));
        }
        Err(e) => {
            report(&mut results, 5, "quantization floor ordering", Err(e.clone()));
            report(&mut results, 7, "Cesàro bound", Err(e));
        }
    }
    report(&mut results, 8, "parameter gate", guarded(criterion_8));
    report(&mut results, 9, "determinism", guarded(criterion_9));
    // Longest last.
    report(&mut results, 6, "full-scale sweep", guarded(criterion_6));

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn guarded_pair(f: fn() -> (Outcome, Outcome)) -> (Outcome, Outcome) {
    catch_unwind(f).unwrap_or_else(|_| (Err("panic".into()), Err("panic".into())))
}

fn guarded_value<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panic".into()))
}

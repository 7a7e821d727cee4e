use std::path::Path;
use std::process::{Command, Output};

use qdpj::probgen::Instance;
use qdpj::Digraph;

const SMALL: &str = r#"
algorithms = ["qdpj", "centralized_exact", "centralized_quantized"]
delta_sweep = ["1e-2", "1e-3"]

[instance]
n_nodes = 5
local_dim = 3
data_rows = 4
seed = 3

[graph]
n = 5
density = 0.3
seed = 4

[admm]
max_outer_iterations = 25
master_seed = 5
"#;

fn qdpj(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdpj"))
        .args(args)
        .current_dir(cwd)
        .env_remove("QDPJ_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn sorted_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn run_writes_traces_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out_dir in [&a, &b] {
        let out = qdpj(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()], tmp.path());
        assert!(out.status.success(), "{}", text(&out));
    }
    assert_eq!(
        sorted_files(&a),
        [
            "centralized_exact.csv",
            "centralized_quantized_delta_1e-2.csv",
            "centralized_quantized_delta_1e-3.csv",
            "metadata.toml",
            "qdpj_delta_1e-2.csv",
            "qdpj_delta_1e-3.csv",
        ]
    );
    for f in sorted_files(&a).iter().filter(|f| f.ends_with(".csv")) {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    // Nothing leaks outside the output directories.
    assert_eq!(sorted_files(tmp.path()), ["a", "b", "exp.toml"]);
}

#[test]
fn flags_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = qdpj(&["run", "--config", &cfg, "--out", "o", "--algorithm", "qdpj", "--delta", "1/8", "--seed", "9"], tmp.path());
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(sorted_files(&tmp.path().join("o")), ["metadata.toml", "qdpj_delta_1over8.csv"]);
    let meta = std::fs::read_to_string(tmp.path().join("o/metadata.toml")).unwrap();
    assert!(meta.contains("master_seed = 9"), "{meta}");
}

#[test]
fn sweep_defaults_to_all_algorithms_over_four_levels() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL.replace("delta_sweep = [\"1e-2\", \"1e-3\"]\n", "").replace("max_outer_iterations = 25", "max_outer_iterations = 3");
    let cfg = write_config(tmp.path(), &body);
    let out = qdpj(&["sweep", "--config", &cfg, "--out", "s"], tmp.path());
    assert!(out.status.success(), "{}", text(&out));
    let files = sorted_files(&tmp.path().join("s"));
    assert_eq!(files.iter().filter(|f| f.starts_with("qdpj_delta_")).count(), 4);
    assert_eq!(files.iter().filter(|f| f.starts_with("centralized_quantized_delta_")).count(), 4);
    assert!(files.contains(&"centralized_exact.csv".to_string()));
}

#[test]
fn env_var_sets_default_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("25", "2"));
    let out = Command::new(env!("CARGO_BIN_EXE_qdpj"))
        .args(["run", "--config", &cfg, "--algorithm", "centralized_exact"])
        .current_dir(tmp.path())
        .env("QDPJ_OUT_DIR", tmp.path().join("from_env"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(sorted_files(&tmp.path().join("from_env")), ["centralized_exact.csv", "metadata.toml"]);
}

#[test]
fn check_params_prints_margins() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qdpj(&["check-params"], tmp.path());
    assert!(out.status.success(), "{}", text(&out));
    let s = text(&out);
    assert!(s.starts_with("node theta prox_min_eig margin status"), "{s}");
    assert_eq!(s.lines().filter(|l| l.ends_with(" pass")).count(), 10);

    let cfg = write_config(tmp.path(), SMALL);
    let out = qdpj(&["run", "--config", &cfg, "--check-params-only", "--out", "never"], tmp.path());
    assert!(out.status.success());
    assert!(text(&out).contains("min_margin"));
    assert!(!tmp.path().join("never").exists());
}

#[test]
fn validation_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("n = 5", "n = 6"));
    let out = qdpj(&["run", "--config", &cfg, "--out", "x"], tmp.path());
    assert!(!out.status.success());
    assert!(text(&out).contains("graph.n"), "{}", text(&out));

    let cfg = write_config(tmp.path(), &format!("{SMALL}gamma = 2.0\n"));
    let out = qdpj(&["run", "--config", &cfg, "--out", "x"], tmp.path());
    assert!(!out.status.success());
    assert!(text(&out).contains("admm.gamma"), "{}", text(&out));

    let out = qdpj(&["run", "--delta", "0"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn round_cap_failure_names_outer_iteration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}consensus_round_cap = 1\n"));
    let out = qdpj(&["run", "--config", &cfg, "--out", "x", "--algorithm", "qdpj"], tmp.path());
    assert!(!out.status.success());
    assert!(text(&out).contains("outer iteration 0"), "{}", text(&out));
}

#[test]
fn compare_tabulates_and_rejects_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    assert!(qdpj(&["run", "--config", &cfg, "--out", "r", "--algorithm", "qdpj"], tmp.path()).status.success());
    let out = qdpj(&["compare", "r/qdpj_delta_1e-2.csv", "r/qdpj_delta_1e-3.csv"], tmp.path());
    assert!(out.status.success(), "{}", text(&out));
    let s = text(&out);
    assert_eq!(s.lines().count(), 4, "{s}");
    assert!(s.contains("qdpj: floors"), "{s}");

    let out = qdpj(&["compare", "r/qdpj_delta_1e-2.csv"], tmp.path());
    assert_eq!(text(&out).lines().count(), 2);

    std::fs::write(tmp.path().join("empty.csv"), "").unwrap();
    let out = qdpj(&["compare", "empty.csv"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn gen_instance_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = qdpj(&["gen-instance", "--config", &cfg, "--out", "inst"], tmp.path());
    assert!(out.status.success(), "{}", text(&out));
    let config = qdpj::experiment::ExperimentConfig::from_toml(SMALL).unwrap();
    let inst = Instance::read(&tmp.path().join("inst/instance.txt")).unwrap();
    assert_eq!(inst, config.build_instance().unwrap());
    let g = Digraph::read_edge_list(&tmp.path().join("inst/graph.txt")).unwrap();
    assert_eq!(g, config.build_graph().unwrap());
}

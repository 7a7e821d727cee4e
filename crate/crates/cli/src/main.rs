//! `qdpj` experiment driver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qdpj::experiment::{
    check_params, compare_traces, format_summary_table, format_threshold_report, run_experiment_observed, Algorithm,
    ExperimentConfig,
};
use qdpj::{QuantizationLevel, Result};

#[derive(Parser)]
#[command(name = "qdpj", version, about = "Quantized distributed proximal Jacobian ADMM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm (default qdpj) at the configured quantization level(s).
    Run(RunArgs),
    /// Run every algorithm over the Δ sweep (default 1e-3, 1e-4, 1e-5, 1e-6).
    Sweep(RunArgs),
    /// Summarize trace CSVs that share the same iteration axis.
    Compare {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Print each node's proximal-weight threshold and margin.
    CheckParams(ConfigArgs),
    /// Write the generated instance and communication graph as text files.
    GenInstance(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the instance, graph and ADMM master seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, env = "QDPJ_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    base: ConfigArgs,
    /// Comma-separated list of qdpj, centralized_exact, centralized_quantized.
    #[arg(long, value_delimiter = ',')]
    algorithm: Vec<Algorithm>,
    /// Comma-separated quantization levels, e.g. 1e-3,1e-4 or 1/8.
    #[arg(long, value_delimiter = ',')]
    delta: Vec<QuantizationLevel>,
    /// Only print the proximal-weight check.
    #[arg(long)]
    check_params_only: bool,
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::read(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.instance.seed = seed;
        config.graph.seed = seed;
        config.admm.master_seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn print_check(config: &ExperimentConfig) -> Result<ExitCode> {
    let report = check_params(config)?;
    print!("{}", format_threshold_report(&report));
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run(args: &RunArgs, sweep: bool) -> Result<ExitCode> {
    let mut config = load(&args.base)?;
    if !args.algorithm.is_empty() {
        config.algorithms = args.algorithm.clone();
    } else if sweep {
        config.algorithms = Algorithm::ALL.to_vec();
    }
    if !args.delta.is_empty() {
        config.delta_sweep = args.delta.clone();
    } else if sweep && config.delta_sweep.is_empty() {
        config.delta_sweep = (3..=6).map(|k| QuantizationLevel::pow10_neg(k).expect("valid level")).collect();
    }
    if args.check_params_only {
        return print_check(&config);
    }
    let out = run_experiment_observed(&config, |path, trace| {
        let last = trace.last().expect("nonempty trace");
        let l1 = last.l1_error.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
        println!("wrote {} (K = {}, final l1 error {l1})", path.display(), last.k);
    })?;
    println!("wrote {}", out.metadata_file.display());
    Ok(ExitCode::SUCCESS)
}

fn gen_instance(args: &ConfigArgs) -> Result<ExitCode> {
    let config = load(args)?;
    config.validate()?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| qdpj::Error::Io { path: dir.clone(), source: e })?;
    let instance = dir.join("instance.txt");
    let graph = dir.join("graph.txt");
    config.build_instance()?.write(&instance)?;
    config.build_graph()?.write_edge_list(&graph)?;
    println!("wrote {}", instance.display());
    println!("wrote {}", graph.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args, false),
        Command::Sweep(args) => run(args, true),
        Command::Compare { traces } => compare_traces(traces).map(|s| {
            print!("{}", format_summary_table(&s));
            ExitCode::SUCCESS
        }),
        Command::CheckParams(args) => load(args).and_then(|c| print_check(&c)),
        Command::GenInstance(args) => gen_instance(args),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

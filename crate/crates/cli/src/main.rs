use std::error::Error;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dyntrace::bench::{
    read_graph_file, read_sequence_file, run_experiment, write_records, EstimatorKind, ExperimentConfig, Regime,
    SyntheticConfig, Workload,
};
use dyntrace::dynamic_tree::{TreeConfig, TreeMode};
use dyntrace::oracle::QueryLedger;
use dyntrace::seed;
use dyntrace::static_estimators::{HutchPlusPlus, StaticParams, TraceEstimator};

/// Static and dynamic randomized trace estimation.
#[derive(Parser)]
#[command(name = "dyntrace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Random symmetric base matrix with a small perturbation per step.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value = "low")]
        regime: Regime,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Triangle counting on a graph file, or on a random graph when no file is given.
    Graph {
        #[arg(long)]
        file: Option<PathBuf>,
        /// Nodes of the random graph.
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Clique insertions in the random graph.
        #[arg(long, default_value_t = 50)]
        steps: usize,
        /// Edge probability of the random initial graph.
        #[arg(long, default_value_t = 0.05)]
        edge_prob: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// A matrix sequence file.
    File {
        #[arg(long)]
        file: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// One Hutch++ estimate of the first matrix in a sequence file.
    Static {
        #[arg(long)]
        file: PathBuf,
        /// Relative error target.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 1.0, value_parser = parse_p)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Partitioned,
    Flat,
}

#[derive(Args)]
struct RunArgs {
    /// Absolute error target per step.
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Drift bound between steps; measured from the stream when omitted.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1.0, value_parser = parse_p)]
    p: f64,
    /// Total queries per estimator; defaults to the tree's planned cost.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "tree,hutch,diffsum")]
    estimators: Vec<EstimatorKind>,
    #[arg(long, value_enum, default_value = "partitioned")]
    mode: Mode,
    /// Target number of tree groups.
    #[arg(long)]
    groups: Option<usize>,
    /// Worker threads; output does not depend on this.
    #[arg(long)]
    jobs: Option<usize>,
    /// CSV destination, `-` for standard output.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

fn parse_p(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (1.0..=2.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside the allowed range [1, 2]"))
    }
}

type BoxError = Box<dyn Error + Send + Sync>;

fn experiment(workload: Workload, run: &RunArgs) -> Result<(), BoxError> {
    let config = ExperimentConfig {
        p: run.p,
        alpha: run.alpha,
        budget: run.budget,
        tree: TreeConfig {
            mode: match run.mode {
                Mode::Partitioned => TreeMode::Partitioned,
                Mode::Flat => TreeMode::Flat,
            },
            groups: run.groups,
        },
        ..ExperimentConfig::new(run.eps, run.delta)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.jobs.unwrap_or(0))
        .build()?;
    let output = pool.install(|| run_experiment(&workload, &config, &run.estimators, run.trials, run.seed))?;
    let mut csv = Vec::new();
    write_records(&output.records, &mut csv)?;
    if run.out.as_os_str() == "-" {
        io::stdout().lock().write_all(&csv)?;
    } else {
        fs::write(&run.out, &csv).map_err(|e| format!("cannot write {}: {e}", run.out.display()))?;
    }
    for s in &output.summaries {
        eprintln!(
            "{}: mean abs error {:.6e}, mean rel error {:.6e}",
            s.estimator, s.mean_abs_error, s.mean_rel_error
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), BoxError> {
    match cli.command {
        Command::Synth { n, steps, regime, run } => {
            experiment(Workload::Synthetic(SyntheticConfig::new(n, steps, regime, 0)), &run)
        }
        Command::Graph { file, n, steps, edge_prob, run } => {
            let workload = match file {
                Some(path) => Workload::Graph(Arc::new(read_graph_file(&path)?)),
                None => Workload::RandomGraph { nodes: n, edge_prob, steps },
            };
            experiment(workload, &run)
        }
        Command::File { file, run } => experiment(Workload::Sequence(Arc::new(read_sequence_file(&file)?)), &run),
        Command::Static { file, eps, delta, p, seed } => {
            let seq = read_sequence_file(&file)?;
            let first = &seq.matrices[0];
            let mut rng = seed::substream(seed, &[]);
            let mut ledger = QueryLedger::new();
            let est = HutchPlusPlus::new(p)?;
            StaticParams::new(eps, delta, p)?;
            let value = est.estimate(first, eps, delta, &mut rng, &mut ledger)?;
            println!("estimate={} queries={}", value.value, ledger.total());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Wrapped errors already print their cause.
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abrflow::maxmin::{solve_maxmin, OracleError};
use abrflow::metrics::{steady_state_summary, write_csv, MetricsError, Summary};
use abrflow::ratealloc::Algorithm;
use abrflow::scenario::{builtin, load_scenario, Builtin, Scenario, ScenarioError};
use abrflow::sim::{self, SimError};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use thiserror::Error;

mod report;

#[derive(Parser)]
#[command(name = "abrflow", version, about = "Explicit-rate ABR switch simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario, write acr.csv and port.csv, print a summary.
    Run(RunArgs),
    /// Run one scenario under several algorithms and tabulate the results.
    Compare(CompareArgs),
    /// Print the max-min allocation a scenario's switches should reach.
    Oracle(OracleArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Built-in scenario: fig2 or fig3.
    #[arg(long)]
    builtin: Option<Builtin>,
    /// Scenario file.
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct Common {
    #[command(flatten)]
    source: Source,
    /// Output directory for CSV traces.
    #[arg(long, env = "ABRFLOW_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Override the scenario's simulated duration, in seconds.
    #[arg(long, value_name = "SECONDS")]
    duration: Option<f64>,
    /// Reserved for randomized arrivals; current sources are deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trailing fraction of the run averaged in the summary.
    #[arg(long, default_value_t = 0.2)]
    window: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Switch algorithm for every switch, overriding the scenario.
    #[arg(long)]
    alg: Option<Algorithm>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Algorithms to compare (repeat or comma-separate; default all four).
    #[arg(long, value_delimiter = ',')]
    alg: Vec<Algorithm>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    source: Source,
    /// Use this ABR capacity on every switch port instead of the scenario's.
    #[arg(long, value_name = "MBPS")]
    abr_capacity: Option<f64>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("cannot create {}: {source}", path.display())]
    OutDir { path: PathBuf, source: std::io::Error },
}

impl Source {
    fn load(&self) -> Result<Scenario, CliError> {
        match (&self.builtin, &self.scenario) {
            (Some(b), _) => Ok(builtin(*b)),
            (None, Some(path)) => Ok(load_scenario(path)?),
            (None, None) => unreachable!("clap requires one scenario source"),
        }
    }
}

impl Common {
    fn load(&self) -> Result<Scenario, CliError> {
        let scenario = self.source.load()?;
        Ok(match self.duration {
            Some(d) => scenario.with_duration(d),
            None => scenario,
        })
    }
}

struct Outcome {
    algorithm: Algorithm,
    summary: Summary,
}

fn simulate(scenario: &Scenario, out: &Path, window: f64) -> Result<Summary, CliError> {
    let output = sim::run(scenario)?;
    std::fs::create_dir_all(out).map_err(|source| CliError::OutDir {
        path: out.to_owned(),
        source,
    })?;
    write_csv(&output.trace, out)?;
    Ok(steady_state_summary(&output.trace, window)?)
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut scenario = args.common.load()?;
    if let Some(alg) = args.alg {
        scenario = scenario.with_algorithm(alg);
    }
    let summary = simulate(&scenario, &args.common.out, args.common.window)?;
    let oracle = solve_maxmin(&scenario.oracle_problem(None))?;
    print!("{}", report::run_summary(&scenario, &summary, &oracle));
    println!(
        "wrote {} and {}",
        args.common.out.join("acr.csv").display(),
        args.common.out.join("port.csv").display()
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<bool, CliError> {
    let algorithms = if args.alg.is_empty() {
        Algorithm::ALL.to_vec()
    } else {
        args.alg.clone()
    };
    if algorithms.len() < 2 {
        Cli::command()
            .error(ErrorKind::TooFewValues, "compare needs at least two algorithms")
            .exit();
    }
    let base = args.common.load()?;
    let oracle = solve_maxmin(&base.oracle_problem(None))?;

    let results: Vec<(Algorithm, Result<Summary, CliError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = algorithms
            .iter()
            .map(|&alg| {
                let scenario = base.clone().with_algorithm(alg);
                let out = args.common.out.join(alg.name());
                let window = args.common.window;
                scope.spawn(move || (alg, simulate(&scenario, &out, window)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread")).collect()
    });

    let mut outcomes = Vec::new();
    let mut all_ok = true;
    for (alg, result) in results {
        match result {
            Ok(summary) => outcomes.push(Outcome {
                algorithm: alg,
                summary,
            }),
            Err(e) => {
                all_ok = false;
                eprintln!("error: {alg}: {e}");
            }
        }
    }
    print!("{}", report::compare_table(&base, &outcomes, &oracle));
    println!("traces under {}/<algorithm>/", args.common.out.display());
    Ok(all_ok)
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), CliError> {
    let scenario = args.source.load()?;
    let result = solve_maxmin(&scenario.oracle_problem(args.abr_capacity))?;
    print!("{}", report::oracle_table(&scenario, &result));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args).map(|()| true),
        Command::Compare(args) => cmd_compare(args),
        Command::Oracle(args) => cmd_oracle(args).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use atwflow_cli::commands::{cmd_check, cmd_distance, cmd_oracle, cmd_run, cmd_step, Emit, OracleArgs, OracleName, Property};
use atwflow_cli::{parse_scenario, CliError, Outcome, Scenario};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "atwflow", version, about = "Anisotropic mean curvature flow by minimizing movements")]
struct Cli {
    /// worker threads for the data-parallel parts
    #[arg(long, global = true, env = "ATWFLOW_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// output directory; defaults to the scenario's `output`, then `atwflow-out`
    #[arg(long)]
    output: Option<PathBuf>,
    /// overrides the scenario's seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve until extinction or t_max and write trace, rasters, contours and a report
    Run(ScenarioArgs),
    /// One minimizing-movements step from the initial set
    Step(ScenarioArgs),
    /// Signed anisotropic distance to the initial set
    Distance(ScenarioArgs),
    /// Evolve and run a property check
    Check {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value = "all")]
        property: Property,
    },
    /// Evaluate a closed-form evolution
    Oracle {
        #[arg(value_enum)]
        name: OracleName,
        #[arg(long)]
        t: f64,
        /// cross arm length L, initial ball radius or square half-side
        #[arg(long)]
        size: Option<f64>,
        /// a point `x,y` whose arrival time is reported
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "svg")]
        emit: Emit,
    },
}

fn load(a: &ScenarioArgs) -> Result<(Scenario, PathBuf, u64), CliError> {
    let sc = parse_scenario(&a.scenario)?;
    let out = a.output.clone().or_else(|| sc.output.clone()).unwrap_or_else(|| PathBuf::from("atwflow-out"));
    let seed = a.seed.unwrap_or(sc.seed);
    Ok((sc, out, seed))
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Run(a) => {
            let (sc, out, _) = load(&a)?;
            cmd_run(&sc, &out)
        }
        Command::Step(a) => {
            let (sc, out, _) = load(&a)?;
            cmd_step(&sc, &out)
        }
        Command::Distance(a) => {
            let (sc, out, _) = load(&a)?;
            cmd_distance(&sc, &out)
        }
        Command::Check { scenario, property } => {
            let (sc, out, seed) = load(&scenario)?;
            cmd_check(&sc, property, seed, &out)
        }
        Command::Oracle { name, t, size, x, emit } => {
            print!("{}", cmd_oracle(&OracleArgs { name, t, size, point: x, emit })?);
            Ok(Outcome { passed: true })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // help and version are successes, everything else is a usage error
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(o) => ExitCode::from(o.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

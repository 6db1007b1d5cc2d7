use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use game_colocate::selftest::{self, Fault};
use game_colocate::{
    check_tolerance, compare, load_scenario, output, output_dir, parse_seeds, run, write_outputs,
    CliError,
};
use game_sim::{CentralBackend, FilterChoice, Scenario};

#[derive(Parser)]
#[command(
    name = "game-colocate",
    version,
    about = "Cooperative localisation with central and decoupled GAME filters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and report its errors.
    Run(RunArgs),
    /// Run both filters over several seeds and check that they agree.
    Compare(CompareArgs),
    /// Run the numerical self-test suites.
    Selftest {
        /// Inject a known defect to check that the suites catch it.
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Render an error trace CSV as SVG.
    Plot {
        csv: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "Average translation error")]
        title: String,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file, or `planar4` / `spatial4` for the shipped ones.
    #[arg(long, default_value = "planar4")]
    scenario: String,
    /// Override the scenario duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Matrix the central filter carries.
    #[arg(long, value_enum, default_value_t = BackendArg::Inverse)]
    backend: BackendArg,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = FilterArg::Central)]
    filter: FilterArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overridden by GAME_COLOCATE_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write errors.csv.
    #[arg(long)]
    csv: bool,
    /// Write errors.svg.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Seeds, e.g. `1..10` or `1,4,9`.
    #[arg(long, default_value = "1..10")]
    seeds: String,
    /// Largest admissible central/decoupled gap (m and rad).
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    Central,
    Decoupled,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    /// Inverse Hessian (Sigma), the form the decoupled filter reproduces.
    Inverse,
    /// Hessian (P).
    Hessian,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    FlipF,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario, CliError> {
        let mut s = load_scenario(&self.scenario)?;
        if let Some(d) = self.duration {
            s.duration = d;
        }
        Ok(s)
    }

    fn backend(&self) -> CentralBackend {
        match self.backend {
            BackendArg::Inverse => CentralBackend::Inverse,
            BackendArg::Hessian => CentralBackend::Hessian,
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let mut s = args.scenario.load()?;
            if let Some(seed) = args.seed {
                s.seed = seed;
            }
            let choice = match args.filter {
                FilterArg::Central => FilterChoice::Central,
                FilterArg::Decoupled => FilterChoice::Decoupled,
                FilterArg::Both => FilterChoice::Both,
            };
            let (report, log) = run(&s, choice, args.scenario.backend())?;
            println!("{report}");
            if args.csv || args.plot {
                let dir = output_dir(args.out.as_deref());
                let title = format!("{} seed {}", s.name, s.seed);
                for path in write_outputs(&log, &dir, args.csv, args.plot, &title)? {
                    println!("wrote {}", path.display());
                }
            }
            Ok(())
        }
        Command::Compare(args) => {
            let s = args.scenario.load()?;
            let seeds = parse_seeds(&args.seeds)?;
            let summary = compare(&s, &seeds, args.scenario.backend())?;
            println!("{summary}");
            check_tolerance(&summary, args.tol)
        }
        Command::Selftest { inject_fault } => {
            let fault = match inject_fault {
                Some(FaultArg::FlipF) => Fault::FlipF,
                None => Fault::None,
            };
            let results = selftest::run_all(fault);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                return Err(CliError::SelfTest(failed));
            }
            Ok(())
        }
        Command::Plot { csv, output, title } => {
            let text = std::fs::read_to_string(&csv).map_err(|source| CliError::Io {
                path: csv.display().to_string(),
                source,
            })?;
            let out = output.unwrap_or_else(|| csv.with_extension("svg"));
            output::plot_svg(&text, &title, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

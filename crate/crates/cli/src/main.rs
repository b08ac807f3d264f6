use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use rmdim::exec;
use rmdim::experiments::{
    exit_code, reference_config, run_estimate, run_mmdim, run_suite, Format, RunConfig, RunOptions, SuiteReport,
    EXIT_OK, EXIT_VERIFY, REFERENCE_NAMES,
};
use rmdim::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "rmdim", version, about = "Pressure, entropy and metric mean dimension estimates for random dynamical systems")]
struct Cli {
    /// Table format for run outputs and verify reports.
    #[arg(long, value_enum, default_value = "csv", global = true)]
    format: OutFormat,

    /// Worker threads (defaults to RMDIM_THREADS, then all cores).
    #[arg(long, env = "RMDIM_THREADS", global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pressure curve, fiber entropy or mdim slope for one config.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Master seed, replacing the one in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a named verification suite.
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 20240917)]
        seed: u64,
    },
    /// Measure-theoretic mean dimension for the measures of a config.
    Mmdim {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the config of a reference system.
    Reference {
        /// One of the registry names; omit to list them.
        name: Option<String>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let c = RunConfig::load(path)?;
    Ok(match seed {
        Some(s) => c.with_seed(s),
        None => c,
    })
}

fn print_report(r: &SuiteReport, format: OutFormat) {
    match format {
        OutFormat::Json => println!("{}", serde_json::to_string_pretty(r).expect("report serializes")),
        OutFormat::Csv => {
            println!("suite,case,check,lhs,rhs,seed,detail");
            for v in &r.violations {
                println!("{},{},{},{},{},{},\"{}\"", r.suite, v.case, v.check, v.lhs, v.rhs, v.seed, v.detail.replace('"', "'"));
            }
        }
    }
    let status = if r.passed() { "PASS" } else { "FAIL" };
    eprintln!(
        "{status} {}: {} checks over {} cases, {} violations",
        r.suite,
        r.checks,
        r.cases,
        r.violations.len()
    );
}

fn run(cli: Cli) -> Result<i32, Error> {
    if cli.threads == Some(0) {
        return Err(Error::validation("threads", "must be positive"));
    }
    let threads = cli.threads;
    match cli.command {
        Command::Estimate { config, out, seed } => {
            let c = load(&config, seed)?;
            let opts = RunOptions {
                out,
                threads,
                format: cli.format.into(),
            };
            info!("estimate {} ({})", c.name, c.hash());
            let o = run_estimate(&c, &opts)?;
            println!("{}", serde_json::to_string_pretty(&o.summary["result"]).expect("summary serializes"));
            Ok(EXIT_OK)
        }
        Command::Mmdim { config, out, seed } => {
            let c = load(&config, seed)?;
            let opts = RunOptions {
                out,
                threads,
                format: cli.format.into(),
            };
            info!("mmdim {} ({})", c.name, c.hash());
            let o = run_mmdim(&c, &opts)?;
            let r = &o.summary["result"];
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "mdim": r["mdim"],
                    "max_f": r["max_f"],
                    "achieved_gap": r["achieved_gap"],
                    "ranking": r["ranking"],
                }))
                .expect("summary serializes")
            );
            Ok(EXIT_OK)
        }
        Command::Verify { suite, trials, seed } => {
            let r = exec::with_threads(threads, || run_suite(&suite, trials, seed))?;
            print_report(&r, cli.format);
            Ok(if r.passed() { EXIT_OK } else { EXIT_VERIFY })
        }
        Command::Reference { name } => {
            match name {
                None => REFERENCE_NAMES.iter().for_each(|n| println!("{n}")),
                Some(n) => {
                    let c = reference_config(&n)?;
                    println!("{}", serde_json::to_string_pretty(&c).expect("config serializes"));
                }
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}

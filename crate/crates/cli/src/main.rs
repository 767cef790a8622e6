use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use transfers::io::{error_exit_code, run, Command, Format, RunConfig, SuiteLevel, TransferArg, TOL_ENV};

#[derive(Parser, Debug)]
#[command(name = "transfer", version, about = "Evaluate and verify transfers between measures on finite spaces")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,

    /// Seed for every randomized search.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Default tolerance.
    #[arg(long, global = true, env = TOL_ENV)]
    tol: Option<f64>,

    /// Per-solver tolerance, e.g. `--solver-tol ascent=1e-9`. Repeatable.
    #[arg(long = "solver-tol", global = true, value_parser = solver_tol)]
    solver_tol: Vec<(String, f64)>,

    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Json)]
    format: OutFormat,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Json,
    /// Traces for `kam`, barrier entries for `barrier`.
    Csv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Level {
    Fast,
    Full,
}

/// A descriptor file, or a kind name with its parameters in files.
#[derive(Args, Debug)]
struct TransferOpts {
    /// Descriptor file, or a kind such as `mk`, `tv`, `kr`.
    #[arg(long)]
    transfer: String,
    #[arg(long)]
    cost: Option<PathBuf>,
    #[arg(long)]
    space: Option<PathBuf>,
    /// JSON object with the remaining descriptor fields.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl From<TransferOpts> for TransferArg {
    fn from(o: TransferOpts) -> Self {
        TransferArg { spec: o.transfer, cost: o.cost, space: o.space, params: o.params }
    }
}

#[derive(Args, Debug)]
struct Pair {
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nu: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Primal value 𝓣(μ,ν).
    Eval {
        #[command(flatten)]
        transfer: TransferOpts,
        #[command(flatten)]
        pair: Pair,
    },
    /// Primal value against the dual supremum over potentials.
    DualGap {
        #[command(flatten)]
        transfer: TransferOpts,
        #[command(flatten)]
        pair: Pair,
    },
    /// Convolution of descriptor files, in order.
    Convolve {
        #[arg(long = "part", required = true, num_args = 1..)]
        parts: Vec<String>,
        #[command(flatten)]
        pair: Pair,
    },
    /// Tensor product of two descriptors. Measures are one file on the
    /// product space or two factor files.
    Tensor {
        #[arg(long)]
        left: String,
        #[arg(long)]
        right: String,
        #[arg(long, required = true, num_args = 1..=2)]
        mu: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..=2)]
        nu: Vec<PathBuf>,
    },
    /// Check a transport-entropy inequality.
    Ineq {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Effective constant and a weak KAM solution.
    Kam {
        #[command(flatten)]
        transfer: TransferOpts,
        /// Point where the solution is pinned to zero.
        #[arg(long)]
        base_point: Option<String>,
    },
    /// Aubry set and Mather measure.
    Mather {
        #[command(flatten)]
        transfer: TransferOpts,
    },
    /// The barrier h(x,y).
    Barrier {
        #[command(flatten)]
        transfer: TransferOpts,
    },
    /// An entropy and its dual.
    Entropy {
        #[arg(long)]
        entropy: PathBuf,
        #[command(flatten)]
        pair: Pair,
    },
    /// Run the invariant batteries.
    Verify {
        #[arg(long, value_enum, default_value_t = Level::Fast)]
        level: Level,
        /// Directory of descriptor files to parse and build as well.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

fn solver_tol(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected solver=value, got `{s}`"))?;
    let v: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.to_string(), v))
}

fn command(verb: Verb) -> Command {
    match verb {
        Verb::Eval { transfer, pair } => Command::Eval { transfer: transfer.into(), mu: pair.mu, nu: pair.nu },
        Verb::DualGap { transfer, pair } => Command::DualGap { transfer: transfer.into(), mu: pair.mu, nu: pair.nu },
        Verb::Convolve { parts, pair } => {
            Command::Convolve { parts: parts.into_iter().map(TransferArg::file).collect(), mu: pair.mu, nu: pair.nu }
        }
        Verb::Tensor { left, right, mu, nu } => {
            Command::Tensor { left: TransferArg::file(left), right: TransferArg::file(right), mu, nu }
        }
        Verb::Ineq { spec } => Command::Ineq { spec },
        Verb::Kam { transfer, base_point } => Command::Kam { transfer: transfer.into(), base_point },
        Verb::Mather { transfer } => Command::Mather { transfer: transfer.into() },
        Verb::Barrier { transfer } => Command::Barrier { transfer: transfer.into() },
        Verb::Entropy { entropy, pair } => Command::Entropy { entropy, mu: pair.mu, nu: pair.nu },
        Verb::Verify { level, catalog } => Command::Verify {
            level: match level {
                Level::Fast => SuiteLevel::Fast,
                Level::Full => SuiteLevel::Full,
            },
            catalog,
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = RunConfig {
        seed: cli.seed,
        format: match cli.format {
            OutFormat::Json => Format::Json,
            OutFormat::Csv => Format::Csv,
        },
        ..RunConfig::default()
    };
    if let Some(t) = cli.tol {
        cfg.tol = t;
    }
    cfg.tolerances.extend(cli.solver_tol);

    let outcome = match run(&command(cli.verb), &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(error_exit_code(&e) as u8);
        }
    };
    let text = outcome.rendered();
    let written = match &cli.out {
        Some(p) => std::fs::write(p, &text).map_err(|e| format!("{}: {e}", p.display())),
        None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    if !outcome.converged {
        eprintln!("warning: did not converge; see the report provenance");
    }
    ExitCode::from(outcome.exit_code() as u8)
}

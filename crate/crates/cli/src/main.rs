use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tomodeq_cli::commands::{self, CliError, Method};
use tomodeq_cli::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "tomodeq", version, about = "Sparse-angle CT: baselines, self-supervised DEQ training, verification")]
struct Cli {
    /// Run configuration file (`section.key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to TSDQ_WORKERS, then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Extra `section.key=value` overrides, applied after the file.
    #[arg(long = "set", global = true)]
    sets: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Fbp,
    Tv,
    Deq,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate phantoms, full sinograms and masked noisy measurements.
    Simulate,
    /// Reconstruct every measurement listed in a simulate manifest.
    Reconstruct {
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Directory written by `simulate`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the DEQ denoiser (a comma list in train.loss runs a sweep).
    Train {
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the identity and gradient verification suite.
    Verify,
    /// Average per-image metrics grouped by method and sparsity.
    Evaluate {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn workers(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("TSDQ_WORKERS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("TSDQ_WORKERS='{v}' is not a worker count"))),
        _ => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.sets {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = cli.seed {
        cfg.set("run.seed", &s.to_string())?;
    }
    if let Some(n) = workers(cli.workers)? {
        if n == 0 {
            return Err(CliError::Usage("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    commands::prepare_out(&cli.out, &cfg)?;
    match cli.cmd {
        Cmd::Simulate => commands::simulate(&cfg, &cli.out),
        Cmd::Reconstruct { method, input, checkpoint } => {
            let m = match method {
                MethodArg::Fbp => Method::Fbp,
                MethodArg::Tv => Method::Tv,
                MethodArg::Deq => Method::Deq,
            };
            commands::reconstruct(&cfg, m, &input, &cli.out, checkpoint)
        }
        Cmd::Train { resume } => commands::train_cmd(&cfg, &cli.out, resume),
        Cmd::Verify => commands::verify_cmd(&cfg, &cli.out),
        Cmd::Evaluate { dirs } => commands::evaluate(&dirs, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

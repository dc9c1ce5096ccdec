use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lada::config::{Config, StrategyName};
use lada::experiment::{run_ablation, run_experiment, Overrides};
use lada::verify::{run_suite, SUITES};
use lada::Error;

#[derive(Parser)]
#[command(name = "lada", version, about = "Look-ahead active learning with learnable augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured seed and write metrics, aggregates and a manifest.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "runs/latest")]
        out_dir: PathBuf,
    },
    /// Run an oracle suite: grad, beta, selection, policy, or all.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the annotation API until interrupted.
    Serve {
        #[command(flatten)]
        common: Common,
    },
    /// Run a learned-policy strategy next to its fixed-concentration twin.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "runs/ablation")]
        out_dir: PathBuf,
    },
}

fn load(common: &Common) -> lada::Result<Config> {
    let cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let strategy = common.strategy.as_deref().map(StrategyName::parse).transpose()?;
    Overrides {
        seed: common.seed,
        rounds: common.rounds,
        strategy,
    }
    .apply(cfg)
}

fn verify(suite: &str, seed: u64) -> lada::Result<bool> {
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    let mut ok = true;
    for name in names {
        let report = run_suite(name, seed)?;
        for c in &report.checks {
            println!(
                "{} {}/{}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                report.suite,
                c.name,
                c.detail
            );
        }
        ok &= report.passed();
    }
    Ok(ok)
}

fn execute(cli: Cli) -> lada::Result<bool> {
    match cli.command {
        Command::Run { common, out_dir } => {
            let cfg = load(&common)?;
            let summary = run_experiment(&cfg, &out_dir)?;
            println!(
                "best accuracy {:.4} ± {:.4} over {} seeds; output in {}",
                summary.best.0,
                summary.best.1,
                summary.runs.len(),
                summary.out_dir.display()
            );
            Ok(true)
        }
        Command::Verify { suite, seed } => verify(&suite, seed),
        Command::Serve { common } => {
            let cfg = load(&common)?;
            let rt = tokio::runtime::Runtime::new().map_err(|source| Error::Io {
                path: "tokio runtime".into(),
                source,
            })?;
            rt.block_on(lada::service::serve(&cfg))?;
            Ok(true)
        }
        Command::Ablate { common, out_dir } => {
            let cfg = load(&common)?;
            let (learned, fixed) = run_ablation(&cfg, &out_dir)?;
            println!(
                "learned {:.4} ± {:.4}, fixed {:.4} ± {:.4}; output in {}",
                learned.best.0,
                learned.best.1,
                fixed.best.0,
                fixed.best.1,
                out_dir.display()
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use layerlens::config::RunConfig;
use layerlens::pipeline::{run, Command};
use layerlens::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Harvest,
    Synth,
    Train,
    Infer,
    MedianBaseline,
    Eval,
    Demo,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Harvest => Command::Harvest,
            Cmd::Synth => Command::Synth,
            Cmd::Train => Command::Train,
            Cmd::Infer => Command::Infer,
            Cmd::MedianBaseline => Command::MedianBaseline,
            Cmd::Eval => Command::Eval,
            Cmd::Demo => Command::Demo,
        }
    }
}

/// Semantic filtering of microscopy images by learned layer separation.
#[derive(Debug, Parser)]
#[command(name = "layerlens", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

const EXIT_USAGE: u8 = 1;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Ok(n) = std::env::var("LAYERLENS_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size worker pool: {e}");
                }
            }
            _ => {
                eprintln!("error: LAYERLENS_THREADS must be a positive integer, got `{n}`");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| Error::Io {
        path: cli.config.clone(),
        source: e,
    })?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    if let Some(report) = run(cli.command.into(), &cfg, &out)? {
        print!("{}", report.to_tsv());
    }
    Ok(())
}

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cavity_leak_cli::config::RawConfig;
use cavity_leak_cli::run::{run, EXIT_USAGE};

/// Stationary emission rates of undriven atom-cavity systems.
#[derive(Parser, Debug)]
#[command(name = "cavity-leak", version)]
struct Cli {
    /// Configuration file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for sweeps (default: one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// key=value settings applied after the configuration file.
    overrides: Vec<String>,
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };

    let mut raw = RawConfig::default();
    if let Some(path) = &cli.config {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
        };
        if let Err(e) = raw.add_text(&text) {
            return fail(EXIT_USAGE, e);
        }
    }
    if let Err(e) = raw.add_overrides(&cli.overrides) {
        return fail(EXIT_USAGE, e);
    }
    let cfg = match raw.finish() {
        Ok(cfg) => cfg,
        Err(e) => return fail(EXIT_USAGE, e),
    };

    if let Some(workers) = cli.workers {
        if workers == 0 {
            return fail(EXIT_USAGE, "--workers must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            return fail(EXIT_USAGE, e);
        }
    }

    let mut out: Box<dyn Write> = match &cfg.output {
        Some(path) => match File::create(path) {
            Ok(f) => Box::new(BufWriter::new(f)),
            Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
        },
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut err = io::stderr().lock();
    let result = run(&cfg, &mut out, &mut err);
    let flushed = out.flush();
    match (result, flushed) {
        (Ok(()), Ok(())) => ExitCode::SUCCESS,
        (Err(e), _) => fail(e.exit_code(), e),
        (Ok(()), Err(e)) => fail(EXIT_USAGE, e),
    }
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use schouten_lab::{run, Command, Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "schouten-lab", version, about = "Certification suites and solver runs for σ_2-type operators")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration; flags override its top-level fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let mut cfg = match RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("configuration error: {msg}");
            return ExitCode::from(2);
        }
    };
    cfg.apply(
        cli.command,
        &Overrides {
            seed: cli.seed,
            out: cli.out,
            trials: cli.trials,
            suite: cli.suite,
            n: cli.n,
            k: cli.k,
        },
    );
    match run(&cfg) {
        Ok(summary) => {
            let mut out = std::io::stdout().lock();
            for a in &summary.assertions {
                let _ = writeln!(
                    out,
                    "{} {} = {:e} (tolerance {:e}) [{}]",
                    if a.passed { "PASS" } else { "FAIL" },
                    a.name,
                    a.value,
                    a.tolerance,
                    a.anchor
                );
            }
            let _ = writeln!(out, "summary written to {}", cfg.out.join("summary.json").display());
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

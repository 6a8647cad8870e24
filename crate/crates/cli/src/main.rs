use std::process::ExitCode;

use clap::Parser;
use gje_cli::{config, exit, output, Cli, CliError};

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("GJE_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("GJE_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(format!("GJE_THREADS: {e}")))
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    init_threads()?;
    let args = cli.command.common();
    let loaded = config::load(&args.config)?;
    let outcome = gje_cli::commands::run(&cli.command, &loaded)?;
    let json = output::render(&output::Envelope {
        tool: "gje",
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        config_hash: &loaded.hash,
        seed: loaded.config.seed,
        verdict: outcome.status.as_ref(),
        result: &outcome.result,
    })?;
    let dir = args.out.clone().or_else(|| loaded.config.output.dir.as_ref().map(|d| loaded.resolve(d)));
    if let Some(dir) = dir {
        output::write_all(&dir, cli.command.name(), &json, &outcome.tables)?;
    }
    if !args.quiet {
        println!("{json}");
    }
    if let Some(s) = &outcome.status {
        eprintln!("{}: {}", cli.command.name(), s.label);
    }
    Ok(outcome.status.is_none_or(|s| s.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(passed) if passed || !cli.command.common().strict => exit::OK,
        Ok(_) => exit::VERDICT_FAILED,
        Err(e) => {
            eprintln!("gje: {e}");
            exit::ERROR
        }
    };
    ExitCode::from(code as u8)
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};

use memsync::experiments::{parse_config, run, Command, Overrides};
use memsync::params::DecoherenceMode;
use memsync::resolved::DenominatorMode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Analytic,
    Simulate,
    Fig2,
    Sweep,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "paper_literal")]
    PaperLiteral,
    Normalized,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Decoherence {
    Exact,
    Linearized,
}

/// Waiting times and fidelities of memory-synchronized photon sources.
#[derive(Debug, Parser)]
#[command(name = "memsync", version)]
struct Cli {
    command: Cmd,
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Simulation seed, overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Postselection denominator.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Per-pulse decoherence probability from B.
    #[arg(long, value_enum)]
    decoherence: Option<Decoherence>,
}

fn execute(cli: &Cli, command: Command) -> anyhow::Result<memsync::experiments::Outcome> {
    let text = std::fs::read_to_string(&cli.config)
        .with_context(|| format!("reading {}", cli.config.display()))?;
    let mut cfg = parse_config(&text, command)?;
    Overrides {
        seed: cli.seed,
        denominator_mode: cli.mode.map(|m| match m {
            Mode::PaperLiteral => DenominatorMode::PaperLiteral,
            Mode::Normalized => DenominatorMode::Normalized,
        }),
        decoherence: cli.decoherence.map(|d| match d {
            Decoherence::Exact => DecoherenceMode::Exact,
            Decoherence::Linearized => DecoherenceMode::Linearized,
        }),
    }
    .apply(&mut cfg);
    let outcome = run(command, &cfg)?;
    outcome
        .write(&cli.out)
        .with_context(|| format!("writing to {}", cli.out.display()))?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Analytic => Command::Analytic,
        Cmd::Simulate => Command::Simulate,
        Cmd::Fig2 => Command::Fig2,
        Cmd::Sweep => Command::Sweep,
    };
    match execute(&cli, command) {
        Ok(outcome) if outcome.errors.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!("{}", outcome.error_summary());
            ExitCode::from(1)
        }
        Err(e) => {
            let summary = serde_json::json!({
                "command": command.name(),
                "errors": [{ "cell": "run", "message": format!("{e:#}") }],
            });
            eprintln!("{summary}");
            ExitCode::from(2)
        }
    }
}

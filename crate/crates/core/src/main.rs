use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use freebound::cli::{self, Format, Report, RunConfig, Stage};
use freebound::Error;

/// Exit codes: 0 success, 1 I/O, 2 invalid input, 3 solver did not
/// converge, 4 a configured check failed.
#[derive(Parser)]
#[command(
    name = "freebound",
    version,
    about = "Degenerate one-phase free-boundary solver and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every resolution and run the configured stages.
    Run(Args),
    /// Solve and write field dumps `field-<n>.csv` for the stage commands.
    Solve(Args),
    /// Weiss profiles and the almost-monotonicity audit on existing dumps.
    Weiss(Args),
    /// Blow-up sequence at the probe point.
    Blowup(Args),
    /// Singular decomposition, quantitative strata and Minkowski content.
    Strata(Args),
    /// β-numbers of the free-boundary measure.
    Beta(Args),
    /// Free boundary, growth, interior-ball and coarea audits.
    Audit(Args),
    /// Corner angle, density, Lipschitz slope and homogeneity at the probe.
    Stokes(Args),
    /// Rebuild the report from existing dumps with every configured stage.
    Report(Args),
    /// List the scenario keys.
    Keys,
}

#[derive(clap::Args)]
struct Args {
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the scenario.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use this resolution instead of the configured list.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run only this stage (with `run`).
    #[arg(long)]
    only: Option<String>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io(_) => 1,
                _ => 2,
            })
        }
    }
}

fn execute(command: Command) -> freebound::Result<ExitCode> {
    let (args, mode) = match command {
        Command::Keys => {
            for (k, d) in cli::KEYS {
                println!("{k:24} {d}");
            }
            return Ok(ExitCode::SUCCESS);
        }
        Command::Run(a) => (a, Mode::Run),
        Command::Solve(a) => (a, Mode::Solve),
        Command::Weiss(a) => (a, Mode::Stage(Stage::Weiss)),
        Command::Blowup(a) => (a, Mode::Stage(Stage::Blowup)),
        Command::Strata(a) => (a, Mode::Stage(Stage::Strata)),
        Command::Beta(a) => (a, Mode::Stage(Stage::Beta)),
        Command::Audit(a) => (a, Mode::Stage(Stage::Audit)),
        Command::Stokes(a) => (a, Mode::Stage(Stage::Stokes)),
        Command::Report(a) => (a, Mode::Report),
    };
    let mut config = RunConfig::load(&args.config)?;
    if let Some(n) = args.resolution {
        cli::validate_resolution(n)?;
        config.resolutions = vec![n];
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let only = args.only.as_deref().map(Stage::parse).transpose()?;
    let dir = args
        .out
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from(format!("out/{}", config.name)));
    std::fs::create_dir_all(&dir)?;
    let format = match args.format {
        FormatArg::Json => Format::Json,
        FormatArg::Csv => Format::CsvBundle,
    };

    let report = match mode {
        Mode::Run => {
            let stages = only.map_or_else(|| config.active_stages(), |s| vec![s]);
            cli::run_scenario(&config, &stages, Some(&dir))?
        }
        Mode::Solve => cli::run_scenario(&config, &[], Some(&dir))?,
        Mode::Stage(s) => from_dumps(&config, &[s], &dir)?,
        Mode::Report => from_dumps(&config, &config.active_stages(), &dir)?,
    };
    for p in cli::emit_report(&report, format, &dir)? {
        println!("{}", p.display());
    }
    for c in &report.checks {
        println!(
            "{} {}: {} (tolerance {})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    Ok(if !report.converged() {
        ExitCode::from(3)
    } else if !report.passed() {
        ExitCode::from(4)
    } else {
        ExitCode::SUCCESS
    })
}

enum Mode {
    Run,
    Solve,
    Stage(Stage),
    Report,
}

fn from_dumps(config: &RunConfig, stages: &[Stage], dir: &std::path::Path) -> freebound::Result<Report> {
    config.validate()?;
    let mut runs = Vec::new();
    for &n in &config.resolutions {
        let field = cli::load_field(config, dir, n)?;
        let summary = cli::summarize_loaded(config, &field)?;
        runs.push(cli::analyze(config, &field, summary, stages, Some(dir))?);
    }
    Ok(cli::assemble(config, runs, stages))
}

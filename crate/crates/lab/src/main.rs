use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use cascade_lab::{run_all, run_experiment, ExperimentConfig, ExperimentKind, Outcome};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cascade-lab",
    about = "Run cascade / phase-instability experiments"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Single {
    /// TOML config; desk defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write `.cfd` field dumps.
    #[arg(long)]
    dump_fields: bool,
}

#[derive(Subcommand)]
enum Command {
    Simulate(Single),
    LinearLayer(Single),
    Cascade(Single),
    MainTheorem(Single),
    Instability(Single),
    Grenier(Single),
    Series(Single),
    /// Every `*.toml` in a directory, plus `manifest.json`.
    RunAll {
        #[arg(long, default_value = "configs")]
        configs: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        dump_fields: bool,
    },
}

fn print_outcome(o: &Outcome) {
    println!(
        "== {} [{}] {}",
        o.experiment,
        o.config_hash,
        if o.passed { "PASS" } else { "FAIL" }
    );
    for c in &o.checks {
        println!(
            "  {} {:<48} {:>14.6e}  {}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.value,
            c.rule
        );
    }
    for n in &o.notes {
        println!("  note: {n}");
    }
}

fn single(kind: ExperimentKind, args: &Single) -> Result<bool> {
    let cfg = match &args.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            anyhow::ensure!(
                cfg.experiment == kind,
                "{} configures {}, not {}",
                path.display(),
                cfg.experiment.name(),
                kind.name()
            );
            cfg
        }
        None => ExperimentConfig::minimal(kind),
    };
    let outcome = run_experiment(&cfg)?;
    print_outcome(&outcome);
    let dir = cfg
        .output_dir
        .as_deref()
        .map(Path::new)
        .unwrap_or(&args.out);
    for p in outcome.write(dir, args.dump_fields)? {
        log::info!("wrote {}", p.display());
    }
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => single(ExperimentKind::Simulate, a),
        Command::LinearLayer(a) => single(ExperimentKind::LinearLayer, a),
        Command::Cascade(a) => single(ExperimentKind::CascadeLayers, a),
        Command::MainTheorem(a) => single(ExperimentKind::MainTheorem, a),
        Command::Instability(a) => single(ExperimentKind::InstabilityScan, a),
        Command::Grenier(a) => single(ExperimentKind::GrenierConvergence, a),
        Command::Series(a) => single(ExperimentKind::SeriesOrders, a),
        Command::RunAll {
            configs,
            out,
            dump_fields,
        } => run_all(configs, out, *dump_fields)
            .with_context(|| format!("running configs in {}", configs.display()))
            .map(|m| {
                for e in &m.entries {
                    let status = if e.passed { "PASS" } else { "FAIL" };
                    match &e.error {
                        Some(err) => println!("{status} {} error: {err}", e.config),
                        None => println!("{status} {}", e.config),
                    }
                }
                m.all_passed()
            }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

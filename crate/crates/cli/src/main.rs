use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use resperturb_core::harness::{parse_kv, run_experiment, ExperimentConfig, ExperimentKind, RECORD_FILE};

/// Residual perturbation experiments: training, membership attacks, privacy
/// accounting, complexity bounds and the SDE demo.
#[derive(Parser, Debug)]
#[command(name = "resperturb", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a (noise-injected) residual network or ensemble and write a checkpoint
    Train(Global),
    /// Shadow-model membership inference over a sweep of noise levels and ensemble sizes
    Attack(Global),
    /// Calibrate noise for a privacy budget and report achieved budgets
    Accountant(Global),
    /// Rademacher complexity of the ODE and SDE classes with Monte-Carlo checks
    Rademacher(Global),
    /// Forward/backward integration of an image under the swirl field
    SdeDemo(Global),
    /// Compare residual perturbation against DPSGD on utility, leakage and cost
    DpsgdCompare(Global),
}

#[derive(Args, Debug)]
struct Global {
    /// Configuration file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config file)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this
    #[arg(long)]
    threads: Option<usize>,
    /// Extra `key=value` overrides, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Command {
    fn parts(&self) -> (ExperimentKind, &Global) {
        match self {
            Command::Train(g) => (ExperimentKind::Train, g),
            Command::Attack(g) => (ExperimentKind::Attack, g),
            Command::Accountant(g) => (ExperimentKind::Accountant, g),
            Command::Rademacher(g) => (ExperimentKind::Rademacher, g),
            Command::SdeDemo(g) => (ExperimentKind::SdeDemo, g),
            Command::DpsgdCompare(g) => (ExperimentKind::DpsgdCompare, g),
        }
    }
}

fn resolve(kind: ExperimentKind, g: &Global) -> Result<ExperimentConfig> {
    let text = match &g.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let file = parse_kv(&text)?;
    if let Some(k) = file.get("kind") {
        if ExperimentKind::parse(k)? != kind {
            bail!("config file is for `{k}` but the `{}` subcommand was invoked", kind.name());
        }
    }
    let mut overrides = BTreeMap::new();
    overrides.insert("kind".to_string(), kind.name().to_string());
    if let Some(s) = g.seed {
        overrides.insert("seed".into(), s.to_string());
    }
    if let Some(o) = &g.out {
        overrides.insert("out".into(), o.display().to_string());
    }
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        overrides.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(ExperimentConfig::from_text(&text, &overrides)?)
}

fn run(cli: Cli) -> Result<()> {
    let (kind, g) = cli.command.parts();
    if let Some(n) = g.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    let cfg = resolve(kind, g).context("config")?;
    let record = run_experiment(&cfg)?;
    println!("{} finished; record at {}", kind.name(), cfg.out_dir.join(RECORD_FILE).display());
    for (k, v) in &record.metrics {
        if !k.contains(".repeat=") && !k.starts_with("layer_epsilon.") && !k.starts_with("gbm.") {
            println!("  {k} = {v}");
        }
    }
    for (k, v) in &record.nonfinite_metrics {
        println!("  {k} = {v}");
    }
    for note in &record.notes {
        println!("  note: {note}");
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

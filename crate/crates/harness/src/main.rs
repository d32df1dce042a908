use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use fusetrack::fusion::FusionMode;
use fusetrack::tracker::{parse_mode, parse_provider, TrackerConfig};
use fusetrack_harness::report::{run_eval, EvalReport};
use fusetrack_harness::selftest;
use fusetrack_harness::sequence::{load_sequence, save_sequence, Sequence};
use fusetrack_harness::synth::{synth_sequence, SynthSpec};

#[derive(Parser)]
#[command(name = "fusetrack", version, about = "Dual-model correlation filter tracker with adaptive fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track one sequence directory (img/NNNN.jpg + groundtruth_rect.txt).
    Track {
        seq_dir: PathBuf,
        #[command(flatten)]
        opts: RunOptions,
    },
    /// Track every sequence directory listed in a file, one per line.
    Eval {
        list_file: PathBuf,
        #[command(flatten)]
        opts: RunOptions,
    },
    /// Render a synthetic sequence.
    Synth {
        /// Spec file, or one of the presets `smoke`, `distractor`, `default`.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in oracle checks.
    Selftest,
    /// Print the effective tracker configuration.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunOptions {
    /// Tracker config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// adaptive | deep | shallow | fixed:<beta_s>
    #[arg(long)]
    mode: Option<String>,
    /// proxy[:octaves:stride] | file:[stride:]<template>
    #[arg(long)]
    features_deep: Option<String>,
    /// Output directory for per-frame and summary CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write PPM frames with boxes drawn in.
    #[arg(long)]
    overlay: bool,
}

enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Data(e) => e,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<TrackerConfig, Failure> {
    let Some(path) = path else {
        return Ok(TrackerConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    TrackerConfig::parse(&text)
        .with_context(|| format!("in {}", path.display()))
        .map_err(Failure::Config)
}

fn resolve(opts: &RunOptions) -> Result<(TrackerConfig, FusionMode<f64>), Failure> {
    let mut cfg = load_config(opts.config.as_deref())?;
    if let Some(p) = &opts.features_deep {
        cfg.provider_deep = parse_provider(p)
            .map_err(|e| Failure::Config(anyhow!("--features-deep: {e}")))?;
    }
    let mode = match &opts.mode {
        Some(m) => parse_mode(m).map_err(|e| Failure::Config(anyhow!("--mode: {e}")))?,
        None => cfg.fusion,
    };
    cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    Ok((cfg, mode))
}

fn print_report(report: &EvalReport) {
    println!("{:<24} {:>8} {:>8} {:>8} {:>8}", "sequence", "auc", "op50", "op75", "dp20");
    for r in &report.sequences {
        match (&r.metrics, &r.error) {
            (Some(m), None) => println!(
                "{:<24} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                r.name, m.auc, m.op50, m.op75, m.dp20
            ),
            (_, err) => println!("{:<24} error: {}", r.name, err.as_deref().unwrap_or("no result")),
        }
    }
    for f in &report.files {
        eprintln!("wrote {}", f.display());
    }
}

fn evaluate(sequences: &[Sequence], opts: &RunOptions, cfg: &TrackerConfig, mode: FusionMode<f64>) -> Result<EvalReport, Failure> {
    let report = run_eval(sequences, cfg, mode, opts.out.as_deref(), opts.overlay)
        .context("writing reports")
        .map_err(Failure::Data)?;
    print_report(&report);
    Ok(report)
}

/// Sequence directories listed in `list`, relative paths resolved against
/// the list file's directory. Blank lines and `#` comments are skipped.
fn read_list(list: &Path) -> Result<Vec<PathBuf>, Failure> {
    let text = fs::read_to_string(list)
        .with_context(|| format!("reading {}", list.display()))
        .map_err(Failure::Data)?;
    let base = list.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

fn load_spec(spec: &str) -> Result<SynthSpec, Failure> {
    match spec {
        "smoke" => return Ok(SynthSpec::smoke()),
        "distractor" => return Ok(SynthSpec::distractor()),
        "default" => return Ok(SynthSpec::default()),
        _ => {}
    }
    let text = fs::read_to_string(spec)
        .with_context(|| format!("reading {spec}"))
        .map_err(Failure::Config)?;
    SynthSpec::parse(&text)
        .with_context(|| format!("in {spec}"))
        .map_err(Failure::Config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Track { seq_dir, opts } => {
            let (cfg, mode) = resolve(&opts)?;
            let seq = load_sequence(&seq_dir).map_err(|e| Failure::Data(e.into()))?;
            let report = evaluate(std::slice::from_ref(&seq), &opts, &cfg, mode)?;
            if let Some(err) = report.sequences.iter().find_map(|r| r.error.clone()) {
                return Err(Failure::Data(anyhow!("{}: {err}", seq.name)));
            }
        }
        Command::Eval { list_file, opts } => {
            let (cfg, mode) = resolve(&opts)?;
            let dirs = read_list(&list_file)?;
            let sequences = dirs
                .iter()
                .map(|d| load_sequence(d).with_context(|| format!("loading {}", d.display())))
                .collect::<Result<Vec<_>, _>>()
                .map_err(Failure::Data)?;
            evaluate(&sequences, &opts, &cfg, mode)?;
        }
        Command::Synth { spec, seed, out } => {
            let spec = load_spec(&spec)?;
            let seq = synth_sequence(&spec, seed).map_err(|e| Failure::Config(e.into()))?;
            save_sequence(&seq, &out).map_err(|e| Failure::Data(e.into()))?;
            eprintln!("wrote {} frames to {}", seq.len(), out.display());
        }
        Command::Selftest => {
            let results = selftest::run_all();
            for r in &results {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                println!("{tag} {:<28} {:>7.3}s  {}", r.name, r.seconds, r.detail);
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(Failure::Data(anyhow!("{failed} self-test check(s) failed")));
            }
        }
        Command::PrintConfig { config } => {
            let cfg = load_config(config.as_deref())?;
            print!("{}", cfg.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

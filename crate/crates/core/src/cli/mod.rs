//! The `ffc-se` command line: train, enhance, phase-task, grad-check and
//! params. Each command prints human-readable output and appends one
//! `key=value` summary line to `<out>/results.log`.
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage, configuration or
//! input error, 3 failed gradient audit.

mod commands;
mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use commands::{
    append_result, enhance_path, load_data, load_generator, next_run_dir, si_sdr_before_after, summary_fields, train,
    EnhanceRecord, RunData, TrainOptions, TrainOutcome,
};
pub use config::{DataSection, DataSource, ModelSection, NoiseName, OutputSection, RunConfig, SynthSection, TrainSection};

use crate::audit::{run_audit, AUDIT_TOL};
use crate::error::{Error, Result};
use crate::models::{describe_table, published_target, Generator, ModelConfig, ModelKind};
use crate::phase::run_phase_task;
use crate::spectral::StftParams;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ffc-se", version, about = "Fast Fourier convolution speech enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Adversarial training on synthetic pairs or a manifest.
    Train(TrainArgs),
    /// Denoise a WAV file or a directory of WAV files.
    Enhance(EnhanceArgs),
    /// Phase-from-magnitude comparison across model kinds.
    PhaseTask(PhaseArgs),
    /// Finite-difference audit of every differentiable operation.
    GradCheck(GradCheckArgs),
    /// Per-tensor parameter table and total for a generator.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; defaults apply to anything not given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, value_parser = ["synthetic", "manifest"])]
    pub data: Option<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub segment_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parent directory of the run directory and results.log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Model checkpoint or training checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// WAV file or directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Output WAV file or directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Clean reference file or directory; enables SI-SDR reporting.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Directory for results.log (defaults to the output's directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhaseArgs {
    /// TOML run configuration; the `[phase]` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Only run checks whose name contains this string.
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// ffc-ae, ffc-ae-ablated, ffc-unet or vanilla-unet.
    pub kind: String,
    #[arg(long, default_value_t = 32)]
    pub in_ch: usize,
    /// Residual blocks per stage.
    #[arg(long, default_value_t = 9)]
    pub n: usize,
    /// One value for the autoencoders, one per level for the U-Nets
    /// (comma-separated); omitted selects the default.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// U-Net depth.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Print only the total, not the per-tensor table.
    #[arg(long)]
    pub quiet: bool,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidConfig(_)
        | Error::InvalidArgument(_)
        | Error::Io { .. }
        | Error::UnsupportedWav { .. }
        | Error::MalformedWav { .. }
        | Error::Checkpoint { .. } => EXIT_USAGE,
        _ => EXIT_INTERNAL,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn report(out: &Path, fields: &[(&str, String)]) -> Result<()> {
    println!("{}", append_result(out, fields)?);
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(d) = &a.data {
        cfg.data.source = if d == "manifest" { DataSource::Manifest } else { DataSource::Synthetic };
    }
    if let Some(m) = &a.manifest {
        cfg.data.manifest = m.display().to_string();
        if a.data.is_none() {
            cfg.data.source = DataSource::Manifest;
        }
    }
    if let Some(b) = a.batch {
        cfg.train.batch = b;
    }
    if let Some(l) = a.segment_len {
        cfg.train.segment_len = l;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.output.dir = o.display().to_string();
    }
    cfg.validate()?;
    if a.print_config {
        print!("{}", cfg.emit());
        return Ok(EXIT_OK);
    }
    let o = train(
        &cfg,
        &TrainOptions {
            resume: a.resume,
            verbose: true,
        },
    )?;
    if let Some((b, e)) = o.train_si_sdr {
        println!("training pairs: SI-SDR {b:.2} dB noisy -> {e:.2} dB enhanced ({:+.2} dB)", e - b);
    }
    if let Some((b, e)) = o.holdout_si_sdr {
        println!("held-out pairs: SI-SDR {b:.2} dB noisy -> {e:.2} dB enhanced ({:+.2} dB)", e - b);
    }
    println!("run directory: {}", o.run_dir.display());
    report(Path::new(&cfg.output.dir), &summary_fields(&o))?;
    Ok(EXIT_OK)
}

fn cmd_enhance(a: EnhanceArgs) -> Result<i32> {
    let mut model = load_generator(&a.checkpoint)?;
    let records = enhance_path(&mut model, &a.input, &a.output, a.clean.as_deref())?;
    let mut gains = Vec::new();
    for r in &records {
        match r.si_sdr {
            Some((b, e)) => {
                println!("{}: SI-SDR {b:.2} dB -> {e:.2} dB ({:+.2} dB)", r.output.display(), e - b);
                gains.push(e - b);
            }
            None => println!("{}: {} samples", r.output.display(), r.samples),
        }
    }
    let out = a.out.unwrap_or_else(|| {
        if a.output.is_dir() {
            a.output.clone()
        } else {
            a.output.parent().map(Path::to_path_buf).unwrap_or_default()
        }
    });
    let mut fields = vec![
        ("command", "enhance".to_string()),
        ("checkpoint", a.checkpoint.display().to_string()),
        ("files", records.len().to_string()),
    ];
    if !gains.is_empty() {
        fields.push(("mean_si_sdr_gain", format!("{:.3}", gains.iter().sum::<f64>() / gains.len() as f64)));
    }
    report(&out, &fields)?;
    Ok(EXIT_OK)
}

fn cmd_phase(a: PhaseArgs) -> Result<i32> {
    let cfg = load_config(a.config.as_deref())?;
    let mut p = cfg.phase.clone();
    if let Some(s) = a.steps {
        p.steps = s;
    }
    if let Some(s) = a.seeds {
        p.seeds = s;
    }
    let out = a.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let report_ = run_phase_task(&p)?;
    let table = report_.table();
    print!("{table}");
    let dir = next_run_dir(&out, "phase")?;
    std::fs::write(dir.join("table.txt"), &table).map_err(|e| Error::io("writing phase table", e))?;
    let json = serde_json::to_string_pretty(&report_).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json).map_err(|e| Error::io("writing phase report", e))?;
    let (wins, total) = report_.wins(ModelKind::FfcAe, ModelKind::FfcAeAblated);
    let mut fields = vec![
        ("command", "phase-task".to_string()),
        ("run", dir.display().to_string()),
        ("steps", p.steps.to_string()),
        ("ffc_vs_ablated_wins", format!("{wins}/{total}")),
    ];
    for k in &p.kinds {
        let rows: Vec<f64> = report_.rows.iter().filter(|r| r.kind == *k).map(|r| r.metrics.si_sdr).collect();
        let key: &'static str = match k {
            ModelKind::FfcAe => "ffc_ae_si_sdr",
            ModelKind::FfcAeAblated => "ffc_ae_ablated_si_sdr",
            ModelKind::VanillaUnet => "vanilla_unet_si_sdr",
            ModelKind::FfcUnet => "ffc_unet_si_sdr",
        };
        fields.push((key, format!("{:.3}", rows.iter().sum::<f64>() / rows.len() as f64)));
    }
    report(&out, &fields)?;
    Ok(EXIT_OK)
}

fn cmd_grad_check(a: GradCheckArgs) -> Result<i32> {
    let entries = run_audit(a.filter.as_deref())?;
    let mut worst: (f64, &str) = (0.0, "");
    let mut failed = 0;
    for e in &entries {
        println!(
            "{:<20} {:>10.3e}  {}",
            e.name,
            e.max_rel_err,
            if e.passed() { "ok" } else { "FAIL" }
        );
        failed += usize::from(!e.passed());
        if e.max_rel_err >= worst.0 {
            worst = (e.max_rel_err, e.name);
        }
    }
    report(
        &a.out,
        &[
            ("command", "grad-check".to_string()),
            ("checks", entries.len().to_string()),
            ("failed", failed.to_string()),
            ("max_rel_err", format!("{:.3e}", worst.0)),
            ("worst", worst.1.to_string()),
            ("threshold", format!("{AUDIT_TOL:e}")),
        ],
    )?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// Model configuration from `params` arguments.
pub fn params_config(a: &ParamsArgs) -> Result<ModelConfig> {
    let kind = ModelKind::parse(&a.kind)?;
    let section = ModelSection {
        kind,
        in_ch: a.in_ch,
        n_blocks: a.n,
        depth: a.k,
        alpha: a.alpha.clone().unwrap_or_default(),
        seed: 0,
    };
    let cfg = section.to_config();
    cfg.validate()?;
    Ok(cfg)
}

/// `"target 0.42M, deviation +3.78%"` when the configuration has a
/// published size.
pub fn target_line(cfg: &ModelConfig, total: usize) -> Option<String> {
    published_target(cfg).map(|(name, target)| {
        let dev = 100.0 * (total as f64 - target) / target;
        format!("{name}: target {:.2}M, deviation {dev:+.2}%", target / 1e6)
    })
}

fn cmd_params(a: ParamsArgs) -> Result<i32> {
    let cfg = params_config(&a)?;
    let model = Generator::new(cfg.clone(), StftParams::default())?;
    let total = model.count_params();
    if !a.quiet {
        print!("{}", describe_table(&model.describe()));
    }
    println!("total {total} ({:.3}M)", total as f64 / 1e6);
    let target = target_line(&cfg, total);
    if let Some(t) = &target {
        println!("{t}");
    }
    let mut fields = vec![
        ("command", "params".to_string()),
        ("kind", cfg.kind.name().to_string()),
        ("in_ch", cfg.in_ch.to_string()),
        ("n_blocks", cfg.n_blocks.to_string()),
        ("total", total.to_string()),
    ];
    if let Some((_, t)) = published_target(&cfg) {
        fields.push(("target", format!("{t}")));
        fields.push(("deviation_pct", format!("{:.3}", 100.0 * (total as f64 - t) / t)));
    }
    report(&a.out, &fields)?;
    Ok(EXIT_OK)
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::PhaseTask(a) => cmd_phase(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Params(a) => cmd_params(a),
    }
}

/// Entry point of the binary: parses arguments, runs, and maps the
/// outcome to an exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

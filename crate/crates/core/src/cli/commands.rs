use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use super::config::{DataSource, RunConfig};
use crate::audio::{read_wav, si_sdr, synth_pair_with, write_wav, AudioClip, Batcher, Corpus, Pair, PairedDataset};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::models::{enhance_wave, load_model, save_model, Generator};
use crate::tensor::Real;
use crate::training::{load_checkpoint, save_checkpoint, train_step, MetricsLog, StepMetrics, TrainState};

/// Creates `<parent>/<prefix>-NNNN` with the first unused number.
pub fn next_run_dir(parent: &Path, prefix: &str) -> Result<PathBuf> {
    fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    for n in 1.. {
        let dir = parent.join(format!("{prefix}-{n:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(format!("creating {}", dir.display()), e)),
        }
    }
    unreachable!()
}

/// Appends one `key=value ...` line to `<dir>/results.log` and returns it.
pub fn append_result(dir: &Path, fields: &[(&str, String)]) -> Result<String> {
    let line = fields
        .iter()
        .map(|(k, v)| format!("{k}={}", v.replace(char::is_whitespace, "_")))
        .collect::<Vec<_>>()
        .join(" ");
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join("results.log");
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(line)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Training and held-out pairs for a run.
pub struct RunData {
    pub train: Corpus,
    pub holdout: Corpus,
}

pub fn load_data(cfg: &RunConfig) -> Result<RunData> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let spec = cfg.synth.to_spec();
            let make = |seed: u64, name: String| -> Result<Pair> {
                let (clean, noisy) = synth_pair_with(&spec, seed)?;
                Ok(Pair {
                    name,
                    noisy: noisy.samples,
                    clean: clean.samples,
                })
            };
            let train = (0..cfg.data.synth_pairs as u64)
                .map(|i| make(cfg.synth.seed + i, format!("synth-{i}")))
                .collect::<Result<Vec<_>>>()?;
            let holdout = (0..cfg.data.holdout as u64)
                .map(|i| make(cfg.synth.seed + 1_000_000 + i, format!("holdout-{i}")))
                .collect::<Result<Vec<_>>>()?;
            Ok(RunData {
                train: Corpus { items: train },
                holdout: Corpus { items: holdout },
            })
        }
        DataSource::Manifest => {
            let mut all = PairedDataset::from_manifest(Path::new(&cfg.data.manifest), "train")?.load()?;
            let keep = all.items.len().saturating_sub(cfg.data.holdout).max(1);
            let holdout = all.items.split_off(keep.min(all.items.len()));
            Ok(RunData {
                train: all,
                holdout: Corpus { items: holdout },
            })
        }
    }
}

/// Mean SI-SDR of the noisy inputs and of the enhanced outputs.
pub fn si_sdr_before_after(model: &mut Generator, corpus: &Corpus) -> Result<Option<(Real, Real)>> {
    if corpus.items.is_empty() {
        return Ok(None);
    }
    let (mut before, mut after) = (0.0, 0.0);
    for p in &corpus.items {
        before += si_sdr(&p.noisy, &p.clean)?;
        after += si_sdr(&enhance_wave(model, &p.noisy)?, &p.clean)?;
    }
    let n = corpus.items.len() as Real;
    Ok(Some((before / n, after / n)))
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub resume: Option<PathBuf>,
    /// Print a progress line every `train.log_every` steps.
    pub verbose: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub steps: u64,
    pub last: Option<StepMetrics>,
    /// Mean mel loss over the first ten steps of this run and the last ten.
    pub mel_first10: Real,
    pub mel_last10: Real,
    /// (noisy, enhanced) mean SI-SDR on the training pairs and the held-out pairs.
    pub train_si_sdr: Option<(Real, Real)>,
    pub holdout_si_sdr: Option<(Real, Real)>,
    pub seconds: Real,
}

fn mean(v: &[Real]) -> Real {
    if v.is_empty() {
        Real::NAN
    } else {
        v.iter().sum::<Real>() / v.len() as Real
    }
}

/// Runs (or resumes) training into a fresh run directory under
/// `cfg.output.dir`: effective config, metrics (JSON lines and CSV),
/// periodic resumable checkpoints, the final model and a summary.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let mut state = match &opts.resume {
        Some(path) => load_checkpoint(path)?,
        None => TrainState::new(cfg.model.to_config(), cfg.stft, cfg.train_config())?,
    };
    let run_dir = next_run_dir(Path::new(&cfg.output.dir), "train")?;
    write_text(&run_dir.join("config.toml"), &cfg.emit())?;
    let mut log = MetricsLog::open(&run_dir.join("metrics.jsonl"), Some(&run_dir.join("metrics.csv")))?;
    let batcher = Batcher::new(data.train.clone(), cfg.train.segment_len, cfg.train.batch)?;
    let per_epoch = batcher.batches_per_epoch() as u64;

    let start = Instant::now();
    let (mut first, mut recent) = (Vec::new(), Vec::new());
    let mut last = None;
    while state.step < cfg.train.steps {
        if state.data_pos >= per_epoch {
            state.data_epoch_seed = state.rng.gen();
            state.data_pos = 0;
        }
        let batch = batcher.batch(state.data_epoch_seed, state.data_pos as usize)?;
        state.data_pos += 1;
        let m = match train_step(&mut state, &batch.noisy, &batch.clean) {
            Ok(m) => m,
            Err(Error::NonFiniteLoss { step, detail }) => {
                let snap = run_dir.join("nonfinite-snapshot.ckpt");
                save_checkpoint(&state, &snap)?;
                log.flush()?;
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("{detail}; state snapshot written to {}", snap.display()),
                });
            }
            Err(e) => return Err(e),
        };
        log.record(&m)?;
        if first.len() < 10 {
            first.push(m.mel);
        }
        recent.push(m.mel);
        if recent.len() > 10 {
            recent.remove(0);
        }
        if opts.verbose && cfg.train.log_every > 0 && m.step % cfg.train.log_every == 0 {
            println!(
                "step {:>6}  d {:.4}  g {:.4}  adv {:.4}  fm {:.4}  mel {:.4}  ({:.0}s)",
                m.step,
                m.loss_d,
                m.loss_g,
                m.adv,
                m.fm,
                m.mel,
                start.elapsed().as_secs_f64()
            );
        }
        if cfg.train.checkpoint_every > 0 && m.step % cfg.train.checkpoint_every == 0 {
            save_checkpoint(&state, &run_dir.join(format!("step-{:06}.ckpt", m.step)))?;
        }
        last = Some(m);
    }
    log.flush()?;
    save_checkpoint(&state, &run_dir.join("final.ckpt"))?;
    save_model(&state.gen, &run_dir.join("model.ckpt"))?;

    let mut gen = state.gen.clone();
    let outcome = TrainOutcome {
        run_dir,
        steps: state.step,
        last,
        mel_first10: mean(&first),
        mel_last10: mean(&recent),
        train_si_sdr: si_sdr_before_after(&mut gen, &data.train)?,
        holdout_si_sdr: si_sdr_before_after(&mut gen, &data.holdout)?,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_text(&outcome.run_dir.join("summary.txt"), &format!("{}\n", summary_fields(&outcome).iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("\n")))?;
    Ok(outcome)
}

pub fn summary_fields(o: &TrainOutcome) -> Vec<(&'static str, String)> {
    let mut f = vec![
        ("command", "train".to_string()),
        ("run", o.run_dir.display().to_string()),
        ("steps", o.steps.to_string()),
        ("mel_first10", format!("{:.6}", o.mel_first10)),
        ("mel_last10", format!("{:.6}", o.mel_last10)),
    ];
    if let Some((b, a)) = o.train_si_sdr {
        f.push(("train_si_sdr_noisy", format!("{b:.3}")));
        f.push(("train_si_sdr_enhanced", format!("{a:.3}")));
    }
    if let Some((b, a)) = o.holdout_si_sdr {
        f.push(("holdout_si_sdr_noisy", format!("{b:.3}")));
        f.push(("holdout_si_sdr_enhanced", format!("{a:.3}")));
    }
    f.push(("seconds", format!("{:.1}", o.seconds)));
    f
}

/// Loads a generator from either a model checkpoint or a training state.
pub fn load_generator(path: &Path) -> Result<Generator> {
    let c = Container::read(path)?;
    match c.kind.as_str() {
        "train_state" => Ok(load_checkpoint(path)?.gen),
        _ => load_model(path),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhanceRecord {
    pub input: PathBuf,
    pub output: PathBuf,
    pub samples: usize,
    /// (noisy, enhanced) SI-SDR when a clean reference was given.
    pub si_sdr: Option<(Real, Real)>,
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn enhance_one(model: &mut Generator, input: &Path, output: &Path, clean: Option<&Path>) -> Result<EnhanceRecord> {
    let noisy = read_wav(input)?;
    let out = enhance_wave(model, &noisy.samples)?;
    write_wav(output, &AudioClip::new(out.clone(), noisy.sample_rate)?)?;
    let si_sdr = match clean {
        Some(c) => {
            let clean = read_wav(c)?;
            Some((si_sdr(&noisy.samples, &clean.samples)?, si_sdr(&out, &clean.samples)?))
        }
        None => None,
    };
    Ok(EnhanceRecord {
        input: input.to_path_buf(),
        output: output.to_path_buf(),
        samples: out.len(),
        si_sdr,
    })
}

/// Enhances one WAV file or every WAV in a directory. A directory input
/// writes same-named files into `output` (created if needed) and looks up
/// references by name in `clean`.
pub fn enhance_path(model: &mut Generator, input: &Path, output: &Path, clean: Option<&Path>) -> Result<Vec<EnhanceRecord>> {
    if input.is_dir() {
        fs::create_dir_all(output).map_err(|e| Error::io(format!("creating {}", output.display()), e))?;
        let mut records = Vec::new();
        for f in wav_files(input)? {
            let name = f.file_name().expect("listed file has a name");
            let reference = clean.map(|c| c.join(name));
            records.push(enhance_one(model, &f, &output.join(name), reference.as_deref())?);
        }
        Ok(records)
    } else {
        let output = if output.is_dir() {
            output.join(input.file_name().ok_or_else(|| Error::invalid("input has no file name"))?)
        } else {
            output.to_path_buf()
        };
        Ok(vec![enhance_one(model, input, &output, clean)?])
    }
}

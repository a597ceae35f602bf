//! Adversarial training: multi-scale waveform discriminators, LS-GAN,
//! feature-matching and mel losses, Adam, and resumable checkpoints.

mod adam;
mod discriminator;
mod losses;
mod state;

pub use adam::{global_norm, Adam, AdamConfig};
pub use discriminator::{DiscNets, DiscOutput, Discriminators, MIN_DISC_LEN};
pub use losses::{
    discriminator_loss, feature_matching, generator_loss, lsgan_d, lsgan_g, GeneratorLoss, LossWeights, MelLoss,
};
pub use state::{load_checkpoint, save_checkpoint, train_step, StepMetrics, TrainConfig, TrainState};

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Per-step metrics as JSON lines, optionally mirrored to CSV. Both files
/// are opened in append mode.
pub struct MetricsLog {
    jsonl: BufWriter<File>,
    csv: Option<BufWriter<File>>,
}

const CSV_HEADER: &str = "step,loss_d,loss_g,adv,fm,mel,grad_norm_g,grad_norm_d";

fn append(path: &Path) -> Result<(File, bool)> {
    let fresh = !path.exists();
    let f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Ok((f, fresh))
}

impl MetricsLog {
    pub fn open(jsonl: &Path, csv: Option<&Path>) -> Result<Self> {
        let (j, _) = append(jsonl)?;
        let csv = match csv {
            Some(p) => {
                let (f, fresh) = append(p)?;
                let mut w = BufWriter::new(f);
                if fresh {
                    writeln!(w, "{CSV_HEADER}").map_err(|e| Error::io("writing csv header", e))?;
                }
                Some(w)
            }
            None => None,
        };
        Ok(Self {
            jsonl: BufWriter::new(j),
            csv,
        })
    }

    pub fn record(&mut self, m: &StepMetrics) -> Result<()> {
        let line = serde_json::to_string(m).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(self.jsonl, "{line}").map_err(|e| Error::io("writing metrics", e))?;
        if let Some(w) = &mut self.csv {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                m.step, m.loss_d, m.loss_g, m.adv, m.fm, m.mel, m.grad_norm_g, m.grad_norm_d
            )
            .map_err(|e| Error::io("writing metrics csv", e))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.jsonl.flush().map_err(|e| Error::io("flushing metrics", e))?;
        if let Some(w) = &mut self.csv {
            w.flush().map_err(|e| Error::io("flushing metrics csv", e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;

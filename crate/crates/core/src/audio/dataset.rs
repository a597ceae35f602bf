use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::wav::read_wav;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// (noisy, clean) file pairs in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub split: String,
}

impl PairedDataset {
    /// Reads a two-column manifest: one `noisy_path clean_path` pair per
    /// line, whitespace separated. Blank lines and `#` comments are
    /// skipped; relative paths resolve against the manifest's directory.
    pub fn from_manifest(path: &Path, split: impl Into<String>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut pairs = Vec::new();
        let mut problems = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                problems.push(format!("{}:{}: expected 2 columns, got {}", path.display(), n + 1, cols.len()));
                continue;
            }
            pairs.push((base.join(cols[0]), base.join(cols[1])));
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(Self {
            pairs,
            split: split.into(),
        })
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let text: String = self
            .pairs
            .iter()
            .map(|(n, c)| format!("{} {}\n", n.display(), c.display()))
            .collect();
        fs::write(path, text).map_err(|e| Error::io(format!("writing manifest {}", path.display()), e))
    }

    /// Loads every pair. Pairs of unequal length are cropped to the shorter
    /// one with a warning.
    pub fn load(&self) -> Result<Corpus> {
        let mut items = Vec::with_capacity(self.pairs.len());
        for (np, cp) in &self.pairs {
            let mut noisy = read_wav(np)?.samples;
            let mut clean = read_wav(cp)?.samples;
            if noisy.len() != clean.len() {
                let n = noisy.len().min(clean.len());
                log::warn!(
                    "{} and {} differ in length ({} vs {}); cropping to {n}",
                    np.display(),
                    cp.display(),
                    noisy.len(),
                    clean.len()
                );
                noisy.truncate(n);
                clean.truncate(n);
            }
            items.push(Pair {
                name: np.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                noisy,
                clean,
            });
        }
        Ok(Corpus { items })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub name: String,
    pub noisy: Vec<Real>,
    pub clean: Vec<Real>,
}

/// In-memory pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub items: Vec<Pair>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B x segment_len`.
    pub noisy: Tensor,
    pub clean: Tensor,
    /// (pair index, crop offset) per row.
    pub origin: Vec<(usize, usize)>,
    /// Some row was shorter than the segment and was zero-padded.
    pub padded: bool,
}

/// Deterministic, seekable shuffled crops. An epoch visits every pair
/// exactly once in an order fixed by the epoch seed; batch `i` of an epoch
/// can be produced without producing the ones before it.
#[derive(Clone, Debug)]
pub struct Batcher {
    corpus: Corpus,
    pub segment_len: usize,
    pub batch_size: usize,
}

impl Batcher {
    pub fn new(corpus: Corpus, segment_len: usize, batch_size: usize) -> Result<Self> {
        if corpus.items.is_empty() {
            return Err(Error::invalid("batcher: empty dataset"));
        }
        if segment_len == 0 || batch_size == 0 {
            return Err(Error::invalid("batcher: segment length and batch size must be positive"));
        }
        Ok(Self {
            corpus,
            segment_len,
            batch_size,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.corpus.items.len().div_ceil(self.batch_size)
    }

    fn order(&self, epoch_seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.corpus.items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        order
    }

    /// Batch `index` of the epoch shuffled by `epoch_seed`. The last batch
    /// of an epoch may be smaller.
    pub fn batch(&self, epoch_seed: u64, index: usize) -> Result<Batch> {
        if index >= self.batches_per_epoch() {
            return Err(Error::invalid(format!(
                "batch {index} out of range for {} per epoch",
                self.batches_per_epoch()
            )));
        }
        let order = self.order(epoch_seed);
        let rows = &order[index * self.batch_size..((index + 1) * self.batch_size).min(order.len())];
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        rng.set_stream(index as u64 + 1);
        let s = self.segment_len;
        let mut noisy = Vec::with_capacity(rows.len() * s);
        let mut clean = Vec::with_capacity(rows.len() * s);
        let mut origin = Vec::with_capacity(rows.len());
        let mut padded = false;
        for &r in rows {
            let item = &self.corpus.items[r];
            let len = item.clean.len();
            let offset = if len > s { rng.gen_range(0..=len - s) } else { 0 };
            let take = s.min(len);
            noisy.extend_from_slice(&item.noisy[offset..offset + take]);
            clean.extend_from_slice(&item.clean[offset..offset + take]);
            if take < s {
                padded = true;
                noisy.resize(noisy.len() + s - take, 0.0);
                clean.resize(clean.len() + s - take, 0.0);
            }
            origin.push((r, offset));
        }
        Ok(Batch {
            noisy: Tensor::new(&[rows.len(), s], noisy)?,
            clean: Tensor::new(&[rows.len(), s], clean)?,
            origin,
            padded,
        })
    }

    /// Every batch of one epoch, in order.
    pub fn epoch(&self, epoch_seed: u64) -> impl Iterator<Item = Result<Batch>> + '_ {
        (0..self.batches_per_epoch()).map(move |i| self.batch(epoch_seed, i))
    }
}

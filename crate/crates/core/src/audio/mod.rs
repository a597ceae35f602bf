//! WAV I/O, paired datasets and batching, synthetic harmonic data, and
//! SI-SDR.

mod dataset;
mod metric;
mod synth;
mod wav;

pub use dataset::{Batch, Batcher, Corpus, Pair, PairedDataset};
pub use metric::{si_sdr, SI_SDR_CAP_DB};
pub use synth::{harmonic_stack, measured_snr, synth_pair, synth_pair_with, NoiseKind, PhaseInit, SynthSpec};
pub use wav::{encode_wav, parse_wav, quantize, read_wav, write_wav, AudioClip, SAMPLE_RATE};

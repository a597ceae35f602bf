//! STFT analysis/synthesis, log-mel features, and complex/channel packing.

mod mel;
mod stft;

pub use mel::{log_mel, log_mel_var, mel_filterbank, MelParams};
pub use stft::{istft, istft_var, stft, stft_var, Spectrogram, StftParams};

use crate::error::{Error, Result};
use crate::tensor::ops::{concat_tensors, split_tensor};
use crate::tensor::{ComplexTensor, Tensor};

/// Packs a `C x F x T` complex tensor into `2C x F x T` real channels:
/// real parts in channels `0..C`, imaginary parts in `C..2C`.
pub fn complex_to_channels(z: &ComplexTensor) -> Tensor {
    concat_tensors(&[&z.re, &z.im], 0)
}

/// Inverse of [`complex_to_channels`].
pub fn channels_to_complex(x: &Tensor) -> Result<ComplexTensor> {
    let c2 = x.shape()[0];
    if c2 % 2 != 0 {
        return Err(Error::OddLength {
            op: "channels_to_complex",
            axis: 0,
            len: c2,
        });
    }
    let mut parts = split_tensor(x, &[c2 / 2, c2 / 2], 0).into_iter();
    let re = parts.next().unwrap();
    let im = parts.next().unwrap();
    ComplexTensor::new(re, im)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffc::GlobalKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    FfcAe,
    FfcUnet,
    FfcAeAblated,
    VanillaUnet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::FfcAe, Self::FfcUnet, Self::FfcAeAblated, Self::VanillaUnet];

    pub fn name(self) -> &'static str {
        match self {
            Self::FfcAe => "ffc_ae",
            Self::FfcUnet => "ffc_unet",
            Self::FfcAeAblated => "ffc_ae_ablated",
            Self::VanillaUnet => "vanilla_unet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind {s:?}")))
    }

    pub fn is_unet(self) -> bool {
        matches!(self, Self::FfcUnet | Self::VanillaUnet)
    }

    pub fn global(self) -> GlobalKind {
        match self {
            Self::FfcAeAblated => GlobalKind::Conv,
            _ => GlobalKind::Fourier,
        }
    }
}

/// What the generator maps from and to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Real/imaginary spectrogram in, real/imaginary spectrogram out.
    Spectrum,
    /// Magnitude in, (cos, sin) of the phase out.
    Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub in_ch: usize,
    /// Residual blocks per stage.
    pub n_blocks: usize,
    /// U-Net depth K; ignored by the autoencoder kinds.
    pub depth: usize,
    /// One value for the autoencoders, one per level (top to bottom) for
    /// the U-Nets.
    pub alpha: Vec<f64>,
    pub head: Head,
    pub seed: u64,
}

/// `alpha_i = max(0.75 - 0.25 i, 0)` for levels `i = 0..k` (top first).
pub fn alpha_schedule(k: usize) -> Vec<f64> {
    (0..k).map(|i| (0.75 - 0.25 * i as f64).max(0.0)).collect()
}

impl ModelConfig {
    pub fn ffc_ae(in_ch: usize, n_blocks: usize, alpha: f64) -> Self {
        Self {
            kind: ModelKind::FfcAe,
            in_ch,
            n_blocks,
            depth: 0,
            alpha: vec![alpha],
            head: Head::Spectrum,
            seed: 0,
        }
    }

    pub fn ffc_ae_ablated(in_ch: usize, n_blocks: usize, alpha: f64) -> Self {
        Self {
            kind: ModelKind::FfcAeAblated,
            ..Self::ffc_ae(in_ch, n_blocks, alpha)
        }
    }

    pub fn ffc_unet(in_ch: usize, n_blocks: usize, depth: usize) -> Self {
        Self {
            kind: ModelKind::FfcUnet,
            in_ch,
            n_blocks,
            depth,
            alpha: alpha_schedule(depth),
            head: Head::Spectrum,
            seed: 0,
        }
    }

    pub fn vanilla_unet(in_ch: usize, n_blocks: usize, depth: usize) -> Self {
        Self {
            kind: ModelKind::VanillaUnet,
            alpha: vec![0.0; depth],
            ..Self::ffc_unet(in_ch, n_blocks, depth)
        }
    }

    /// FFC-AE-V0: alpha 0.75, N 9, in_ch 32.
    pub fn v0() -> Self {
        Self::ffc_ae(32, 9, 0.75)
    }

    /// FFC-AE-V1: alpha 0.75, N 9, in_ch 64.
    pub fn v1() -> Self {
        Self::ffc_ae(64, 9, 0.75)
    }

    /// FFC-UNet: K 4, N 4, in_ch 32.
    pub fn unet_published() -> Self {
        Self::ffc_unet(32, 4, 4)
    }

    /// Default configuration for `kind` with the published hyperparameters.
    pub fn published_default(kind: ModelKind) -> Self {
        match kind {
            ModelKind::FfcAe => Self::v0(),
            ModelKind::FfcAeAblated => Self::ffc_ae_ablated(32, 9, 0.75),
            ModelKind::FfcUnet => Self::unet_published(),
            ModelKind::VanillaUnet => Self::vanilla_unet(32, 4, 4),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn in_channels(&self) -> usize {
        match self.head {
            Head::Spectrum => 2,
            Head::Phase => 1,
        }
    }

    pub fn out_channels(&self) -> usize {
        2
    }

    /// Time (and frequency) extents entering the network must be multiples
    /// of this.
    pub fn resolution_multiple(&self) -> usize {
        if self.kind.is_unet() {
            1 << self.depth
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.in_ch == 0 {
            problems.push("in_ch must be positive".to_string());
        }
        if self.kind.is_unet() {
            if self.depth == 0 {
                problems.push("U-Net depth K must be at least 1".into());
            }
            if self.depth > 9 {
                problems.push(format!("U-Net depth {} exceeds 9 (512 frequency rows)", self.depth));
            }
            if self.alpha.len() != self.depth {
                problems.push(format!(
                    "alpha schedule has {} entries for depth {}",
                    self.alpha.len(),
                    self.depth
                ));
            }
        } else if self.alpha.len() != 1 {
            problems.push(format!("{} takes a single alpha, got {}", self.kind.name(), self.alpha.len()));
        }
        if self.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            problems.push(format!("alpha values {:?} must lie in [0, 1]", self.alpha));
        }
        if self.kind == ModelKind::VanillaUnet && self.alpha.iter().any(|&a| a != 0.0) {
            problems.push("vanilla_unet has no global branch; alpha must be 0".into());
        }
        if self.head == Head::Phase && self.kind == ModelKind::FfcUnet {
            problems.push("the phase head is defined for ffc_ae, ffc_ae_ablated and vanilla_unet".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Published parameter count of FFC-AE-V0, FFC-AE-V1 and the FFC-UNet.
pub fn published_target(cfg: &ModelConfig) -> Option<(&'static str, f64)> {
    if cfg.head != Head::Spectrum {
        return None;
    }
    let ae = cfg.n_blocks == 9 && cfg.alpha == [0.75];
    match cfg.kind {
        ModelKind::FfcAe if ae && cfg.in_ch == 32 => Some(("FFC-AE-V0", 0.42e6)),
        ModelKind::FfcAe if ae && cfg.in_ch == 64 => Some(("FFC-AE-V1", 1.7e6)),
        ModelKind::FfcAeAblated if ae && cfg.in_ch == 64 => Some(("FFC-AE-V1 (abl.)", 2.9e6)),
        ModelKind::FfcUnet if cfg.in_ch == 32 && cfg.n_blocks == 4 && cfg.depth == 4 && cfg.alpha == alpha_schedule(4) => {
            Some(("FFC-UNet", 7.7e6))
        }
        _ => None,
    }
}

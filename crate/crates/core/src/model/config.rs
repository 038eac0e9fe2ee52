use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the class prior `e_S` reaches the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// `e_S = 0`: no class information.
    Zero,
    /// One learned vector per class.
    Gce,
    /// Sparsemax attention over shared codebooks.
    Cgce,
    /// Per-class affine parameters in every decoder normalization layer.
    Mcce,
    /// A 3D encoder applied to the voxel-mean shape of the class.
    AvgPrior,
}

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 5] = [
        ConditioningMode::Zero,
        ConditioningMode::Gce,
        ConditioningMode::Cgce,
        ConditioningMode::Mcce,
        ConditioningMode::AvgPrior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConditioningMode::Zero => "zero",
            ConditioningMode::Gce => "gce",
            ConditioningMode::Cgce => "cgce",
            ConditioningMode::Mcce => "mcce",
            ConditioningMode::AvgPrior => "avg_prior",
        }
    }
}

impl std::fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConditioningMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown conditioning mode `{s}`")))
    }
}

/// 2D image encoder: stride-2 3×3 convolutions with batch norm and ReLU,
/// then a dense layer to `embed_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub channels: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 32,
            channels: vec![16, 32, 64, 128],
            embed_dim: 128,
        }
    }
}

impl EncoderConfig {
    /// CPU-sized encoder for 32×32 views.
    pub fn desk() -> Self {
        EncoderConfig {
            image_size: 32,
            channels: vec![8, 16, 32],
            embed_dim: 64,
        }
    }

    /// Spatial side length after the convolution stack.
    pub fn final_size(&self) -> usize {
        self.channels.iter().fold(self.image_size, |s, _| s.div_ceil(2))
    }
}

/// 3D decoder: a dense layer to `fc_channels × s0³`, a stack of 4³
/// stride-2 transposed convolutions (each doubling resolution), optional
/// 3³ stride-1 refinement layers, and a 3³ head to one occupancy logit per
/// voxel. Every layer but the head is followed by batch norm and ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub resolution: usize,
    pub fc_channels: usize,
    pub up_channels: Vec<usize>,
    pub refine_channels: Vec<usize>,
}

impl Default for DecoderConfig {
    /// Seven convolutional layers ending at 32³.
    fn default() -> Self {
        DecoderConfig {
            resolution: 32,
            fc_channels: 128,
            up_channels: vec![64, 32, 16, 8],
            refine_channels: vec![8, 8],
        }
    }
}

impl DecoderConfig {
    pub fn desk() -> Self {
        DecoderConfig {
            resolution: 16,
            fc_channels: 32,
            up_channels: vec![16, 8, 4],
            refine_channels: vec![],
        }
    }

    /// Side length of the first 3D feature volume.
    pub fn start_size(&self) -> Result<usize> {
        let f = 1usize << self.up_channels.len();
        if self.resolution == 0 || !self.resolution.is_multiple_of(f) {
            return Err(Error::Config(format!(
                "resolution {} is not divisible by 2^{}",
                self.resolution,
                self.up_channels.len()
            )));
        }
        Ok(self.resolution / f)
    }

    pub fn conv_layers(&self) -> usize {
        self.up_channels.len() + self.refine_channels.len() + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditioningConfig {
    /// Number of codebooks `M`.
    pub codebooks: usize,
    /// Codes per codebook `m`.
    pub codes: usize,
    /// Half-width of the uniform initialization of codes and attention logits.
    pub uniform_init: f64,
    /// Standard deviation of the `N(1, σ)` conditional affine initialization.
    pub affine_init_std: f64,
    /// Channels of the 3D prior encoder's stride-2 convolutions.
    pub prior_channels: Vec<usize>,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        ConditioningConfig {
            codebooks: 5,
            codes: 6,
            uniform_init: 0.4,
            affine_init_std: 0.2,
            prior_channels: vec![4, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub mode: ConditioningMode,
    /// Total number of classes, base then novel.
    pub num_classes: usize,
    pub num_base: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub conditioning: ConditioningConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: ConditioningMode::Gce,
            num_classes: 7,
            num_base: 4,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            conditioning: ConditioningConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn desk(mode: ConditioningMode, num_base: usize, num_classes: usize) -> Self {
        ModelConfig {
            mode,
            num_classes,
            num_base,
            encoder: EncoderConfig::desk(),
            decoder: DecoderConfig::desk(),
            conditioning: ConditioningConfig::default(),
            seed: 0,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.image_size == 0 || e.embed_dim == 0 || e.channels.contains(&0) {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        let d = &self.decoder;
        d.start_size()?;
        if d.fc_channels == 0 || d.up_channels.contains(&0) || d.refine_channels.contains(&0) {
            return Err(Error::Config("decoder channel counts must be positive".into()));
        }
        if self.num_base == 0 || self.num_base > self.num_classes {
            return Err(Error::Config(format!(
                "{} base classes out of {} total",
                self.num_base, self.num_classes
            )));
        }
        let c = &self.conditioning;
        if self.mode == ConditioningMode::Cgce && (c.codebooks == 0 || c.codes == 0) {
            return Err(Error::Config("CGCE needs at least one codebook and code".into()));
        }
        if !(c.uniform_init >= 0.0) || !(c.affine_init_std >= 0.0) {
            return Err(Error::Config("initialization scales must be nonnegative".into()));
        }
        if self.mode == ConditioningMode::AvgPrior && c.prior_channels.contains(&0) {
            return Err(Error::Config("prior encoder channels must be positive".into()));
        }
        Ok(())
    }
}

use sha2::{Digest, Sha256};

use crate::error::{arg, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FinalActivation {
    Tanh,
    Linear,
}

impl FinalActivation {
    pub fn as_str(self) -> &'static str {
        match self {
            FinalActivation::Tanh => "tanh",
            FinalActivation::Linear => "linear",
        }
    }
}

impl std::str::FromStr for FinalActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(FinalActivation::Tanh),
            "linear" => Ok(FinalActivation::Linear),
            other => arg(format!("unknown final activation {other:?}")),
        }
    }
}

/// Encoder-decoder generator layout. Level `l` runs at `1 / 2^l` of the
/// input resolution with `channels[l]` feature maps and `resblocks[l]`
/// residual blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArchConfig {
    pub levels: usize,
    pub channels: Vec<usize>,
    pub resblocks: Vec<usize>,
    /// Kernel of the first and last full-resolution convolutions.
    pub outer_kernel: usize,
    /// Kernel of the stride-2 downsampling and residual convolutions.
    pub kernel: usize,
    /// Kernel of the stride-2 transposed convolutions.
    pub up_kernel: usize,
    pub final_activation: FinalActivation,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return arg(format!("generator needs at least 2 levels, got {}", self.levels));
        }
        if self.channels.len() != self.levels || self.resblocks.len() != self.levels {
            return arg(format!(
                "channels ({}) and resblocks ({}) must have one entry per level ({})",
                self.channels.len(),
                self.resblocks.len(),
                self.levels
            ));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return arg("channel widths must be positive");
        }
        if self.outer_kernel % 2 == 0 || self.kernel % 2 == 0 {
            return arg("outer and residual kernels must be odd to preserve size");
        }
        if self.up_kernel != 4 {
            return arg("transposed convolutions use 4x4 kernels with stride 2 and padding 1");
        }
        Ok(())
    }

    /// Input sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// Stable textual form used for hashing and checkpoint metadata.
    pub fn canonical(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "generator;levels={};channels={};resblocks={};outer_kernel={};kernel={};up_kernel={};final={}",
            self.levels,
            list(&self.channels),
            list(&self.resblocks),
            self.outer_kernel,
            self.kernel,
            self.up_kernel,
            self.final_activation.as_str()
        )
    }

    pub fn hash(&self) -> String {
        hex_digest(self.canonical().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PresetName {
    Reference,
    Proposed,
}

impl PresetName {
    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Reference => "reference",
            PresetName::Proposed => "proposed",
        }
    }
}

impl std::str::FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(PresetName::Reference),
            "proposed" => Ok(PresetName::Proposed),
            other => arg(format!("unknown generator preset {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorPreset {
    pub name: PresetName,
    pub arch: ArchConfig,
}

fn base_arch(channels: Vec<usize>, resblocks: Vec<usize>) -> ArchConfig {
    ArchConfig {
        levels: 3,
        channels,
        resblocks,
        outer_kernel: 7,
        kernel: 3,
        up_kernel: 4,
        final_activation: FinalActivation::Linear,
    }
}

impl GeneratorPreset {
    /// All residual blocks at the lowest resolution.
    pub fn reference() -> Self {
        Self { name: PresetName::Reference, arch: base_arch(vec![16, 32, 64], vec![0, 0, 9]) }
    }

    /// Residual blocks moved to the two highest resolutions.
    pub fn proposed() -> Self {
        Self { name: PresetName::Proposed, arch: base_arch(vec![32, 64, 128], vec![4, 5, 0]) }
    }

    pub fn by_name(name: PresetName) -> Self {
        match name {
            PresetName::Reference => Self::reference(),
            PresetName::Proposed => Self::proposed(),
        }
    }
}

/// Patch discriminator layout: three stride-2 stages then two unit-stride
/// heads, all 4×4 kernels with padding 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub leaky_slope_milli: u32,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 64, leaky_slope_milli: 200 }
    }
}

impl DiscriminatorConfig {
    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope_milli as f64 / 1000.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return arg("discriminator base_channels must be positive");
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        format!("discriminator;base={};slope={}", self.base_channels, self.leaky_slope())
    }

    /// Logit-map size for an input size, or `None` when too small.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        let mut s = size;
        for stride in [2, 2, 2, 1, 1] {
            s = gradcore::conv2d_output_size(s, 4, stride, 1)?;
        }
        Some(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum FeatureWeights {
    FrozenRandom,
    /// Load from a checkpoint whose tensors are prefixed `feat.`.
    Loaded(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FeatureNetConfig {
    pub stages: usize,
    pub channels: Vec<usize>,
    pub seed: u64,
    pub weights: FeatureWeights,
}

impl Default for FeatureNetConfig {
    fn default() -> Self {
        Self { stages: 4, channels: vec![16, 32, 64, 64], seed: 1234, weights: FeatureWeights::FrozenRandom }
    }
}

impl FeatureNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages < 2 {
            return arg(format!("feature network needs at least 2 stages, got {}", self.stages));
        }
        if self.channels.len() != self.stages || self.channels.iter().any(|&c| c == 0) {
            return arg("feature network needs one positive channel count per stage");
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        let ch = self.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        let w = match &self.weights {
            FeatureWeights::FrozenRandom => "frozen_random".to_string(),
            FeatureWeights::Loaded(p) => format!("loaded:{p}"),
        };
        format!("featnet;stages={};channels={ch};seed={};weights={w}", self.stages, self.seed)
    }
}

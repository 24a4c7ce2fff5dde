use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the 8c-channel C5 map is brought to 4c channels before the 2x shuffle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsfScheme {
    /// 1x1 convolution 8c -> 4c (learnable).
    A,
    /// Keep the first 4c channels.
    B,
    /// Shuffle both 4c halves and sum them.
    #[default]
    C,
}

impl fmt::Display for SsfScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            SsfScheme::A => "a",
            SsfScheme::B => "b",
            SsfScheme::C => "c",
        })
    }
}

impl FromStr for SsfScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(SsfScheme::A),
            "b" => Ok(SsfScheme::B),
            "c" => Ok(SsfScheme::C),
            other => Err(Error::config(format!("unknown SSF scheme {other:?}, expected a, b or c"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Nearest,
}

/// Which of the three CE-FPN mechanisms are switched on. All off (with F5/P5
/// kept) is the plain FPN neck.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModuleSet {
    pub ssf: bool,
    pub sce: bool,
    pub cag: bool,
}

impl Default for ModuleSet {
    fn default() -> Self {
        ModuleSet { ssf: true, sce: true, cag: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct NeckConfig {
    /// Pyramid width `c`; backbone channels are `{c, 2c, 4c, 8c}`.
    pub base_channel: usize,
    pub ssf_scheme: SsfScheme,
    /// Bottleneck ratio of the attention MLPs (`c -> c / r -> c`).
    pub attention_reduction: usize,
    /// Sub-pixel upscale factor of the skip fusion. Fixed at 2.
    pub upscale: usize,
    pub interpolation: Interpolation,
    pub include_f5_p5: bool,
    pub modules: ModuleSet,
    /// Bias on every convolution and linear layer.
    pub bias: bool,
}

impl Default for NeckConfig {
    fn default() -> Self {
        NeckConfig::cefpn(256)
    }
}

impl NeckConfig {
    pub const REFERENCE_WIDTH: usize = 256;
    pub const DEFAULT_REDUCTION: usize = 32;

    /// Full CE-FPN: all modules on, F5/P5 removed, scheme c.
    pub fn cefpn(base_channel: usize) -> Self {
        NeckConfig {
            base_channel,
            ssf_scheme: SsfScheme::C,
            attention_reduction: Self::default_reduction(base_channel),
            upscale: 2,
            interpolation: Interpolation::Nearest,
            include_f5_p5: false,
            modules: ModuleSet::default(),
            bias: true,
        }
    }

    /// c = 16 with reduction 4: the configuration used for exhaustive checks.
    pub fn desk() -> Self {
        NeckConfig::cefpn(16)
    }

    /// Plain FPN neck: laterals C2..C5 and post-merge convolutions P2..P5.
    pub fn fpn_baseline(base_channel: usize) -> Self {
        NeckConfig {
            include_f5_p5: true,
            modules: ModuleSet { ssf: false, sce: false, cag: false },
            ..Self::cefpn(base_channel)
        }
    }

    /// Baseline plus skip fusion; F5/P5 stay.
    pub fn ssf_only(base_channel: usize, scheme: SsfScheme) -> Self {
        NeckConfig {
            ssf_scheme: scheme,
            modules: ModuleSet { ssf: true, sce: false, cag: false },
            ..Self::fpn_baseline(base_channel)
        }
    }

    pub fn sce_only(base_channel: usize, include_f5_p5: bool) -> Self {
        NeckConfig {
            include_f5_p5,
            modules: ModuleSet { ssf: false, sce: true, cag: false },
            ..Self::fpn_baseline(base_channel)
        }
    }

    /// Baseline plus guided attention; F5/P5 stay.
    pub fn cag_only(base_channel: usize) -> Self {
        NeckConfig {
            modules: ModuleSet { ssf: false, sce: false, cag: true },
            ..Self::fpn_baseline(base_channel)
        }
    }

    /// 32 when it divides the width, otherwise 4.
    pub fn default_reduction(base_channel: usize) -> usize {
        if base_channel.is_multiple_of(Self::DEFAULT_REDUCTION) {
            Self::DEFAULT_REDUCTION
        } else {
            4
        }
    }

    pub fn backbone_channels(&self) -> [usize; 4] {
        let c = self.base_channel;
        [c, 2 * c, 4 * c, 8 * c]
    }

    pub fn attention_hidden(&self) -> usize {
        self.base_channel / self.attention_reduction.max(1)
    }

    /// Number of lateral / post-merge levels (3, or 4 with F5/P5).
    pub fn merge_levels(&self) -> usize {
        if self.include_f5_p5 {
            4
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.base_channel;
        if c == 0 || !c.is_multiple_of(4) {
            return Err(Error::config(format!("base channel must be a positive multiple of 4, got {c}")));
        }
        if self.attention_reduction == 0 || !c.is_multiple_of(self.attention_reduction) {
            return Err(Error::config(format!(
                "attention reduction {} must divide the base channel {c}",
                self.attention_reduction
            )));
        }
        if self.upscale != 2 {
            return Err(Error::config(format!("SSF upscale factor is fixed at 2, got {}", self.upscale)));
        }
        Ok(())
    }
}

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use cefpn_core::cost::MacConvention;
use cefpn_core::neck::{InputGeometry, NeckConfig, SsfScheme};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Forward,
    Gradcheck,
    Cost,
    #[default]
    All,
}

impl Suite {
    pub fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Synthetic backbone generation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    /// Seeded uniform noise in `[-1, 1)`.
    #[default]
    Noise,
    /// Fixed ramp, independent of the seed.
    Ramp,
}

macro_rules! lowercase_from_str {
    ($t:ty, $what:literal) => {
        impl FromStr for $t {
            type Err = anyhow::Error;

            fn from_str(s: &str) -> anyhow::Result<Self> {
                serde_json::from_value(serde_json::Value::String(s.trim().to_ascii_lowercase()))
                    .map_err(|_| anyhow::anyhow!(concat!("unknown ", $what, " {:?}"), s))
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match serde_json::to_value(self) {
                    Ok(serde_json::Value::String(s)) => f.write_str(&s),
                    _ => Err(fmt::Error),
                }
            }
        }
    };
}

lowercase_from_str!(Suite, "suite");
lowercase_from_str!(Precision, "precision");
lowercase_from_str!(BackboneKind, "backbone");

/// Everything a harness run depends on. Serialised as the config echo in
/// every report; feeding an echo back as `--config` reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub base_channel: usize,
    pub ssf_scheme: SsfScheme,
    /// Attention bottleneck ratio; the width-dependent default when absent.
    pub reduction: Option<usize>,
    pub include_f5_p5: bool,
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    pub suite: Suite,
    pub mac_convention: MacConvention,
    pub precision: Precision,
    pub backbone: BackboneKind,
    /// Parameters sampled by the end-to-end gradient check.
    pub gradcheck_samples: usize,
    /// Output directory; not part of the echo.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            base_channel: 16,
            ssf_scheme: SsfScheme::C,
            reduction: None,
            include_f5_p5: false,
            height: 64,
            width: 64,
            batch: 1,
            suite: Suite::All,
            mac_convention: MacConvention::Two,
            precision: Precision::F64,
            backbone: BackboneKind::Noise,
            gradcheck_samples: 200,
            out: None,
        }
    }
}

impl RunConfig {
    /// Reads a `.toml` or `.json` config file.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => bail!("config file {} must end in .toml or .json", path.display()),
        };
        Ok(cfg)
    }

    pub fn attention_reduction(&self) -> usize {
        self.reduction.unwrap_or_else(|| NeckConfig::default_reduction(self.base_channel))
    }

    pub fn neck_config(&self) -> NeckConfig {
        NeckConfig {
            ssf_scheme: self.ssf_scheme,
            attention_reduction: self.attention_reduction(),
            include_f5_p5: self.include_f5_p5,
            ..NeckConfig::cefpn(self.base_channel)
        }
    }

    pub fn geometry(&self) -> InputGeometry {
        InputGeometry::new(self.batch, self.height, self.width)
    }

    /// Checks geometry and neck constraints; the message names the first
    /// violated one.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.geometry().validate()?;
        self.neck_config().validate()?;
        Ok(())
    }

    /// The echo written into reports: defaults resolved, output path dropped.
    pub fn echo(&self) -> RunConfig {
        RunConfig {
            reduction: Some(self.attention_reduction()),
            out: None,
            ..self.clone()
        }
    }
}

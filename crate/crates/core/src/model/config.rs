use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// How residual features inside a group are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionMode {
    /// Plain residual connection to the previous block only.
    StandardRes,
    /// Every preceding feature added with unit weight.
    AllRes,
    /// Every preceding feature weighted by input-dependent coefficients.
    #[default]
    Dra,
}

/// Squashing applied to the dynamic residual coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrmActivation {
    #[default]
    None,
    Sigmoid,
    Tanh,
}

/// Architectural hyperparameters. Serialized field names follow the
/// conventional symbols (`K`, `N`, `c`) so config files stay short.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Number of residual attention groups.
    #[serde(rename = "K", alias = "groups")]
    pub groups: usize,
    /// Residual blocks per group.
    #[serde(rename = "N", alias = "blocks")]
    pub blocks: usize,
    /// Feature channel width.
    #[serde(rename = "c", alias = "channels")]
    pub channels: usize,
    pub scale: usize,
    #[serde(default = "default_drm_hidden")]
    pub drm_hidden: usize,
    #[serde(default)]
    pub connection_mode: ConnectionMode,
    #[serde(default = "yes")]
    pub rsa_enabled: bool,
    #[serde(default = "yes")]
    pub concat_enabled: bool,
    #[serde(default)]
    pub drm_activation: DrmActivation,
}

fn default_drm_hidden() -> usize {
    16
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Drsan32s,
    Drsan32m,
    Drsan32l,
    Drsan48s,
    Drsan48m,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Drsan32s,
        Preset::Drsan48s,
        Preset::Drsan32m,
        Preset::Drsan32l,
        Preset::Drsan48m,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Drsan32s => "drsan-32s",
            Preset::Drsan32m => "drsan-32m",
            Preset::Drsan32l => "drsan-32l",
            Preset::Drsan48s => "drsan-48s",
            Preset::Drsan48m => "drsan-48m",
        }
    }

    /// `(channels, groups, blocks)`.
    fn dims(self) -> (usize, usize, usize) {
        match self {
            Preset::Drsan32s => (32, 4, 4),
            Preset::Drsan32m => (32, 8, 4),
            Preset::Drsan32l => (32, 10, 4),
            Preset::Drsan48s => (48, 4, 3),
            Preset::Drsan48m => (48, 8, 3),
        }
    }

    pub fn config(self, scale: usize) -> NetworkConfig {
        let (channels, groups, blocks) = self.dims();
        NetworkConfig {
            channels,
            groups,
            blocks,
            ..NetworkConfig::tiny(scale)
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

impl NetworkConfig {
    /// A small full-featured config, handy for tests and demos.
    pub fn tiny(scale: usize) -> Self {
        NetworkConfig {
            groups: 1,
            blocks: 2,
            channels: 8,
            scale,
            drm_hidden: 16,
            connection_mode: ConnectionMode::Dra,
            rsa_enabled: true,
            concat_enabled: true,
            drm_activation: DrmActivation::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.blocks == 0 || self.channels == 0 {
            return Err(Error::Config(format!(
                "K, N and c must be at least 1 (got K={}, N={}, c={})",
                self.groups, self.blocks, self.channels
            )));
        }
        if !matches!(self.scale, 2..=4) {
            return Err(Error::Config(format!("scale must be 2, 3 or 4, got {}", self.scale)));
        }
        if self.drm_hidden == 0 {
            return Err(Error::Config("drm_hidden must be at least 1".into()));
        }
        Ok(())
    }

    /// Length of the per-group coefficient vector, `N(N+1)/2`.
    pub fn coefficient_count(&self) -> usize {
        self.blocks * (self.blocks + 1) / 2
    }

    pub fn has_drm(&self) -> bool {
        self.connection_mode == ConnectionMode::Dra
    }

    /// `(conv output channels, shuffle factor)` per upsampling stage.
    pub fn upsampler_stages(&self) -> Vec<(usize, usize)> {
        if self.scale == 4 {
            vec![(4 * self.channels, 2), (4 * self.channels, 2)]
        } else {
            vec![(self.channels * self.scale * self.scale, self.scale)]
        }
    }

    /// Parses a config JSON. `{"preset": "drsan-32s", "scale": 3}` starts
    /// from a preset and overrides any other given field.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(mut obj) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let merged = match obj.remove("preset") {
            Some(Value::String(name)) => {
                let preset: Preset = name.parse()?;
                let scale = obj.get("scale").and_then(Value::as_u64).unwrap_or(2) as usize;
                let Value::Object(mut base) = serde_json::to_value(preset.config(scale)).expect("config serializes")
                else {
                    unreachable!()
                };
                base.extend(obj);
                Value::Object(base)
            }
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => Value::Object(obj),
        };
        let cfg: NetworkConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

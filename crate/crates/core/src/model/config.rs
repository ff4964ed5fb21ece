use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{D_CN, D_EHR};
use crate::error::{Error, Result};

/// Which input streams the model reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    EhrOnly,
    TextOnly,
    CrossModal,
}

impl Mode {
    pub fn uses_ehr(self) -> bool {
        matches!(self, Mode::EhrOnly | Mode::CrossModal)
    }

    pub fn uses_notes(self) -> bool {
        matches!(self, Mode::TextOnly | Mode::CrossModal)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::EhrOnly => "ehr_only",
            Mode::TextOnly => "text_only",
            Mode::CrossModal => "cross_modal",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "ehr_only" | "ehr" => Ok(Mode::EhrOnly),
            "text_only" | "text" => Ok(Mode::TextOnly),
            "cross_modal" | "cross" => Ok(Mode::CrossModal),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossModalConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub mode: Mode,
    pub d_ehr: usize,
    pub d_cn: usize,
    /// Output width of the head (1 for binary tasks, 25 for phenotyping).
    pub n_outputs: usize,
}

impl Default for CrossModalConfig {
    fn default() -> Self {
        CrossModalConfig {
            d_model: 64,
            n_layers: 1,
            n_heads: 1,
            dropout: 0.2,
            mode: Mode::CrossModal,
            d_ehr: D_EHR,
            d_cn: D_CN,
            n_outputs: 1,
        }
    }
}

impl CrossModalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(Error::Config(format!("d_model must be even and positive, got {}", self.d_model)));
        }
        if !(1..=2).contains(&self.n_layers) {
            return Err(Error::Config(format!("n_layers must be 1 or 2, got {}", self.n_layers)));
        }
        if !(1..=4).contains(&self.n_heads) || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads must be in 1..=4 and divide d_model, got {}",
                self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.n_outputs == 0 || self.d_ehr == 0 || self.d_cn == 0 {
            return Err(Error::Config("input and output widths must be positive".into()));
        }
        Ok(())
    }

    /// Fields that differ from the defaults, for run metadata.
    pub fn overrides(&self) -> Vec<String> {
        let d = CrossModalConfig { mode: self.mode, n_outputs: self.n_outputs, ..Default::default() };
        let mut out = Vec::new();
        if self.d_model != d.d_model {
            out.push(format!("d_model={}", self.d_model));
        }
        if self.n_layers != d.n_layers {
            out.push(format!("n_layers={}", self.n_layers));
        }
        if self.n_heads != d.n_heads {
            out.push(format!("n_heads={}", self.n_heads));
        }
        if self.dropout != d.dropout {
            out.push(format!("dropout={}", self.dropout));
        }
        if self.d_ehr != d.d_ehr {
            out.push(format!("d_ehr={}", self.d_ehr));
        }
        if self.d_cn != d.d_cn {
            out.push(format!("d_cn={}", self.d_cn));
        }
        out
    }
}

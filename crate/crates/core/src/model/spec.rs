//! Architecture descriptions for the CNN and CRNN models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn,
    Crnn,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Crnn => "crnn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(ModelKind::Cnn),
            "crnn" => Ok(ModelKind::Crnn),
            other => Err(Error::Config(format!("unknown model kind `{other}` (expected cnn or crnn)"))),
        }
    }
}

/// Convolutions (one entry per layer, giving its output maps) followed by a
/// max-pool over frequency.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub channels: Vec<usize>,
    pub pool: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: ModelKind,
    pub n_classes: usize,
    /// Feature width (frequency axis of the convolutions).
    pub n_features: usize,
    /// Frames of spectral context per prediction; odd.
    pub context: usize,
    /// Square kernel size, odd. Convolutions are unpadded along time and
    /// zero-padded along frequency.
    pub kernel: usize,
    pub conv: Vec<ConvBlock>,
    /// Hidden dense widths (CNN).
    pub dense: Vec<usize>,
    /// Bidirectional GRU widths per direction (CRNN).
    pub gru: Vec<usize>,
    pub dropout: f64,
}

fn default_stack() -> Vec<ConvBlock> {
    vec![
        ConvBlock { channels: vec![32, 32], pool: 3 },
        ConvBlock { channels: vec![64, 64], pool: 3 },
    ]
}

/// Canonical CNN: 25 frames of context, two dense ReLU layers of 256.
pub fn build_cnn(n_classes: usize) -> NetworkSpec {
    NetworkSpec {
        kind: ModelKind::Cnn,
        n_classes,
        n_features: 168,
        context: 25,
        kernel: 3,
        conv: default_stack(),
        dense: vec![256, 256],
        gru: Vec::new(),
        dropout: 0.3,
    }
}

/// Canonical CRNN: 13 frames of context, two bidirectional GRU layers of 60.
pub fn build_crnn(n_classes: usize) -> NetworkSpec {
    NetworkSpec {
        kind: ModelKind::Crnn,
        n_classes,
        n_features: 168,
        context: 13,
        kernel: 3,
        conv: default_stack(),
        dense: Vec::new(),
        gru: vec![60, 60],
        dropout: 0.3,
    }
}

/// Reduced-width CRNN that trains on a single core in minutes.
pub fn desk_crnn(n_classes: usize) -> NetworkSpec {
    NetworkSpec {
        conv: vec![
            ConvBlock { channels: vec![4, 4], pool: 3 },
            ConvBlock { channels: vec![8, 8], pool: 3 },
        ],
        gru: vec![16, 16],
        dropout: 0.1,
        ..build_crnn(n_classes)
    }
}

/// Reduced-width CNN counterpart of [`desk_crnn`].
pub fn desk_cnn(n_classes: usize) -> NetworkSpec {
    NetworkSpec {
        conv: vec![
            ConvBlock { channels: vec![4, 4], pool: 3 },
            ConvBlock { channels: vec![8, 8], pool: 3 },
        ],
        dense: vec![32, 32],
        dropout: 0.1,
        ..build_cnn(n_classes)
    }
}

impl NetworkSpec {
    pub fn build(kind: ModelKind, n_classes: usize) -> Self {
        match kind {
            ModelKind::Cnn => build_cnn(n_classes),
            ModelKind::Crnn => build_crnn(n_classes),
        }
    }

    pub fn n_conv(&self) -> usize {
        self.conv.iter().map(|b| b.channels.len()).sum()
    }

    /// Frames left of one context window after the unpadded convolutions.
    pub fn conv_window(&self) -> usize {
        self.context - self.n_conv() * (self.kernel - 1)
    }

    pub fn pooled_bins(&self) -> usize {
        self.conv.iter().fold(self.n_features, |f, b| f / b.pool)
    }

    pub fn conv_out_channels(&self) -> usize {
        self.conv.iter().rev().find_map(|b| b.channels.last().copied()).unwrap_or(1)
    }

    /// Width of the flattened per-frame conv output fed to the head.
    pub fn head_input(&self) -> usize {
        self.conv_window() * self.pooled_bins() * self.conv_out_channels()
    }

    /// Frames on each side of a prediction frame that the model reads.
    pub fn half_context(&self) -> usize {
        self.context / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes == 0 {
            return bad("n_classes must be positive".into());
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.context % 2 == 0 {
            return bad(format!("context {} must be odd", self.context));
        }
        if self.context <= self.n_conv() * (self.kernel - 1) {
            return bad(format!("context {} too short for {} convolutions", self.context, self.n_conv()));
        }
        if self.conv.iter().any(|b| b.pool == 0 || b.channels.iter().any(|&c| c == 0)) {
            return bad("conv blocks need positive pool sizes and channel counts".into());
        }
        if self.pooled_bins() == 0 {
            return bad(format!("pooling leaves no frequency bins of {}", self.n_features));
        }
        match self.kind {
            ModelKind::Cnn if !self.gru.is_empty() => return bad("a CNN has no GRU layers".into()),
            ModelKind::Crnn if self.gru.is_empty() => return bad("a CRNN needs at least one GRU layer".into()),
            _ => {}
        }
        if self.dense.iter().chain(&self.gru).any(|&w| w == 0) {
            return bad("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let mut n = 0;
        let mut in_ch = 1;
        for b in &self.conv {
            for &c in &b.channels {
                n += k2 * in_ch * c + c;
                in_ch = c;
            }
        }
        let mut width = self.head_input();
        match self.kind {
            ModelKind::Cnn => {
                for &d in &self.dense {
                    n += width * d + d;
                    width = d;
                }
            }
            ModelKind::Crnn => {
                for &h in &self.gru {
                    n += 2 * 3 * (width * h + h * h + h);
                    width = 2 * h;
                }
            }
        }
        n + width * self.n_classes + self.n_classes
    }
}

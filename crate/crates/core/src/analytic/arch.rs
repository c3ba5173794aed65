use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Fully-connected layer followed by ReLU (except the last).
    Dense,
    /// 1-D convolution with the given tap offsets, e.g. `[-1, 0, 1]`.
    Conv1d { offsets: Vec<isize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Pixel indices wrap around.
    #[default]
    Circular,
    /// Out-of-range pixels read as zero.
    Zero,
}

impl Padding {
    /// Pixel read by tap offset `r` at output pixel `s`, if any.
    #[inline]
    pub fn resolve(self, s: usize, r: isize, d: usize) -> Option<usize> {
        let p = s as isize + r;
        match self {
            Padding::Circular => Some(p.rem_euclid(d as isize) as usize),
            Padding::Zero => (0..d as isize).contains(&p).then_some(p as usize),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Output is the last pre-activation (dense nets).
    Linear,
    /// Output is the pixel average of the last pre-activation.
    AvgPool,
    /// Output is the pixel average of the last layer passed through ReLU.
    AvgPoolRelu,
}

/// Declarative architecture shared by the analytic and finite-width paths.
///
/// Depth is the number of weight layers. Dense nets read inputs as flat
/// vectors of length `input_dim`; conv nets read `pixels` pixels with
/// `input_dim` channels each, laid out pixel by pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: Vec<LayerKind>,
    pub readout: Readout,
    pub input_dim: usize,
    pub pixels: usize,
    #[serde(default)]
    pub padding: Padding,
}

impl ArchSpec {
    pub fn fc(input_dim: usize, depth: usize) -> Self {
        Self {
            layers: vec![LayerKind::Dense; depth],
            readout: Readout::Linear,
            input_dim,
            pixels: 1,
            padding: Padding::Circular,
        }
    }

    pub fn conv1d(channels: usize, pixels: usize, offsets: &[isize], depth: usize) -> Self {
        Self {
            layers: vec![LayerKind::Conv1d { offsets: offsets.to_vec() }; depth],
            readout: Readout::AvgPool,
            input_dim: channels,
            pixels,
            padding: Padding::Circular,
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_readout(mut self, readout: Readout) -> Self {
        self.readout = readout;
        self
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.layers.first(), Some(LayerKind::Conv1d { .. }))
    }

    /// Flat length of one input sample.
    pub fn input_len(&self) -> usize {
        self.input_dim * self.pixels
    }

    /// Tap offsets of layer `l` (0-based); `[0]` for dense layers.
    pub fn offsets(&self, l: usize) -> &[isize] {
        match &self.layers[l] {
            LayerKind::Dense => &[0],
            LayerKind::Conv1d { offsets } => offsets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("depth must be at least 1".into()));
        }
        if self.input_dim == 0 || self.pixels == 0 {
            return Err(Error::InvalidArgument("input_dim and pixels must be positive".into()));
        }
        let conv = self.is_conv();
        for layer in &self.layers {
            match layer {
                LayerKind::Dense if conv => {
                    return Err(Error::InvalidArgument("mixed dense and conv layers".into()))
                }
                LayerKind::Conv1d { .. } if !conv => {
                    return Err(Error::InvalidArgument("mixed dense and conv layers".into()))
                }
                LayerKind::Conv1d { offsets } if offsets.is_empty() => {
                    return Err(Error::InvalidArgument("empty convolution footprint".into()))
                }
                _ => {}
            }
        }
        match (conv, self.readout) {
            (false, Readout::Linear) if self.pixels == 1 => Ok(()),
            (false, _) => Err(Error::InvalidArgument(
                "dense nets use a linear readout and one pixel".into(),
            )),
            (true, Readout::Linear) => Err(Error::InvalidArgument(
                "conv nets need a pooling readout".into(),
            )),
            (true, _) => Ok(()),
        }
    }

    /// Stable 64-bit FNV-1a hash of a canonical text form.
    pub fn fingerprint(&self) -> u64 {
        let text = canonical_text(self);
        fnv1a(text.as_bytes())
    }
}

/// 64-bit FNV-1a hash.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

// Debug output of plain enums and vectors is stable enough for hashing and
// avoids a serde_json dependency in the core crate.
fn canonical_text(arch: &ArchSpec) -> String {
    format!(
        "{:?}|{:?}|{}|{}|{:?}",
        arch.layers, arch.readout, arch.input_dim, arch.pixels, arch.padding
    )
}

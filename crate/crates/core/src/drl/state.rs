use serde::{Deserialize, Serialize};

use crate::nn::LayerMeta;
use crate::{Error, Result};

/// How a layer's action is expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// One protect/leave flag per bit position.
    BitMask,
    /// Number of leading bit positions to protect.
    TopBits,
}

impl ActionMode {
    /// Actor output size for weights of `width` bits.
    pub fn action_dim(self, width: u32) -> usize {
        match self {
            ActionMode::BitMask => width as usize,
            ActionMode::TopBits => 1,
        }
    }

    /// Local state size: six geometry features plus the previous action.
    pub fn state_dim(self, width: u32) -> usize {
        6 + self.action_dim(width)
    }
}

impl std::str::FromStr for ActionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bitmask" | "bit_mask" => Ok(ActionMode::BitMask),
            "topbits" | "top_bits" => Ok(ActionMode::TopBits),
            other => Err(Error::param(format!("unknown action mode {other:?}"))),
        }
    }
}

/// A layer's discrete action.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    /// Flags for positions `0..m`.
    Mask(Vec<bool>),
    /// Protect positions `0..count`.
    Top(u32),
}

impl Action {
    /// Encoding fed to the critic and to the next layer's state, in `[0, 1]`.
    pub fn encode(&self, width: u32) -> Vec<f64> {
        match self {
            Action::Mask(flags) => flags.iter().map(|&f| f64::from(u8::from(f))).collect(),
            Action::Top(count) => vec![f64::from(*count) / f64::from(width)],
        }
    }

    /// Encoding of the constant action that precedes the first layer.
    pub fn initial_encoding(mode: ActionMode, width: u32) -> Vec<f64> {
        vec![0.0; mode.action_dim(width)]
    }
}

/// Rounds raw BitMask outputs (nominally in `[0, 1]`) to flags; values at or
/// above one half protect.
pub fn quantize_bitmask(raw: &[f64]) -> Vec<bool> {
    raw.iter().map(|&x| x >= 0.5).collect()
}

/// Clamps a raw TopBits output (in bit positions) to `[0, width]` and rounds
/// it to the nearest integer.
pub fn quantize_topbits(raw: f64, width: u32) -> u32 {
    let x = if raw.is_nan() { 0.0 } else { raw };
    x.clamp(0.0, f64::from(width)).round() as u32
}

/// Per-feature maxima of the layer geometry, fixed for a run.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEncoder {
    features: Vec<[f64; 6]>,
    mode: ActionMode,
    width: u32,
}

impl StateEncoder {
    pub fn new(metas: &[LayerMeta], mode: ActionMode, width: u32) -> Result<Self> {
        if metas.is_empty() {
            return Err(Error::param("no layers to protect"));
        }
        let raw: Vec<[f64; 6]> = metas.iter().map(LayerMeta::as_features).collect();
        let mut max = [0.0f64; 6];
        for f in &raw {
            for (m, v) in max.iter_mut().zip(f) {
                *m = m.max(*v);
            }
        }
        let features = raw
            .iter()
            .map(|f| {
                let mut out = [0.0; 6];
                for ((o, v), m) in out.iter_mut().zip(f).zip(&max) {
                    *o = if *m > 0.0 { v / m } else { 0.0 };
                }
                out
            })
            .collect();
        Ok(Self {
            features,
            mode,
            width,
        })
    }

    pub fn layers(&self) -> usize {
        self.features.len()
    }

    pub fn mode(&self) -> ActionMode {
        self.mode
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn state_dim(&self) -> usize {
        self.mode.state_dim(self.width)
    }

    pub fn action_dim(&self) -> usize {
        self.mode.action_dim(self.width)
    }

    /// State of layer `layer` given the encoded previous action.
    pub fn state(&self, layer: usize, prev_action: &[f64]) -> Vec<f64> {
        let mut s = self.features[layer].to_vec();
        s.extend_from_slice(prev_action);
        s
    }

    /// States of every layer when the layers take `actions`.
    pub fn states(&self, actions: &[Action]) -> Vec<Vec<f64>> {
        let mut prev = Action::initial_encoding(self.mode, self.width);
        let mut out = Vec::with_capacity(self.layers());
        for (i, a) in actions.iter().enumerate().take(self.layers()) {
            out.push(self.state(i, &prev));
            prev = a.encode(self.width);
        }
        out
    }
}

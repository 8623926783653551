use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use fecnn_core::nn::EvalSet;
use fecnn_core::scheme::PlanEvaluator;
use fecnn_core::{BitMaskVector, Dataset, FixedPointSpec, NetworkModel, WeightRepr};
use serde::{Serialize, Serializer};

pub const DATA_DIR_ENV: &str = "FECNN_DATA_DIR";

/// Weight representation as given on the command line:
/// `float32` or `fixed:<width>:<clamp|auto>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReprChoice {
    Float32,
    /// `clamp: None` takes the largest weight magnitude of the model.
    Fixed {
        width: u32,
        clamp: Option<f64>,
    },
}

impl ReprChoice {
    pub fn resolve(&self, model: &NetworkModel) -> Result<WeightRepr> {
        Ok(match *self {
            ReprChoice::Float32 => WeightRepr::Float32,
            ReprChoice::Fixed { width, clamp: None } => WeightRepr::fixed_for_model(model, width)?,
            ReprChoice::Fixed {
                width,
                clamp: Some(c),
            } => WeightRepr::Fixed(FixedPointSpec::new(c, width)?),
        })
    }

    pub fn width(&self) -> u32 {
        match *self {
            ReprChoice::Float32 => 32,
            ReprChoice::Fixed { width, .. } => width,
        }
    }
}

impl fmt::Display for ReprChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReprChoice::Float32 => f.write_str("float32"),
            ReprChoice::Fixed { width, clamp: None } => write!(f, "fixed:{width}:auto"),
            ReprChoice::Fixed {
                width,
                clamp: Some(c),
            } => write!(f, "fixed:{width}:{c:?}"),
        }
    }
}

impl FromStr for ReprChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["float32"] => Ok(ReprChoice::Float32),
            ["fixed", width] | ["fixed", width, "auto"] => Ok(ReprChoice::Fixed {
                width: parse_width(width)?,
                clamp: None,
            }),
            ["fixed", width, clamp] => {
                let c: f64 = clamp
                    .parse()
                    .with_context(|| format!("fixed-point clamp {clamp:?}"))?;
                if !(c.is_finite() && c > 0.0) {
                    bail!("fixed-point clamp must be positive, got {c}");
                }
                Ok(ReprChoice::Fixed {
                    width: parse_width(width)?,
                    clamp: Some(c),
                })
            }
            _ => {
                bail!("representation must be `float32` or `fixed:<width>:<clamp|auto>`, got {s:?}")
            }
        }
    }
}

fn parse_width(s: &str) -> Result<u32> {
    let w: u32 = s
        .parse()
        .with_context(|| format!("fixed-point width {s:?}"))?;
    if !(2..=32).contains(&w) {
        bail!("fixed-point width {w} not in 2..=32");
    }
    Ok(w)
}

impl Serialize for ReprChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Bit positions as `all` or a list of positions and inclusive ranges,
/// e.g. `1-8` or `0,9-12`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Positions {
    All,
    List(Vec<u32>),
}

impl Positions {
    /// Mask word of the selected positions for `width`-bit weights.
    pub fn word(&self, width: u32) -> Result<u32> {
        match self {
            Positions::All => Ok(BitMaskVector::top(width, width)?.word()),
            Positions::List(ps) => Ok(BitMaskVector::from_positions(ps, width)?.word()),
        }
    }
}

impl fmt::Display for Positions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Positions::All => f.write_str("all"),
            Positions::List(ps) => {
                let text: Vec<String> = ps.iter().map(u32::to_string).collect();
                f.write_str(&text.join(","))
            }
        }
    }
}

impl FromStr for Positions {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(Positions::All);
        }
        let mut out = Vec::new();
        for item in s.split(',') {
            let item = item.trim();
            let (lo, hi) = match item.split_once('-') {
                Some((a, b)) => (a.trim().parse::<u32>()?, b.trim().parse::<u32>()?),
                None => {
                    let v = item
                        .parse::<u32>()
                        .with_context(|| format!("bit position {item:?}"))?;
                    (v, v)
                }
            };
            if lo > hi {
                bail!("empty position range {item:?}");
            }
            out.extend(lo..=hi);
        }
        out.sort_unstable();
        out.dedup();
        Ok(Positions::List(out))
    }
}

impl Serialize for Positions {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub fn load_model(path: &Path) -> Result<NetworkModel> {
    NetworkModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

/// Model, encoding and the first `limit` test images, ready for noisy
/// evaluations.
pub fn load_evaluator(
    model: &Path,
    dataset: &Path,
    repr: ReprChoice,
    limit: usize,
) -> Result<PlanEvaluator> {
    let model = load_model(model)?;
    let test = Dataset::load_split(dataset, "test")
        .with_context(|| format!("loading test split from {}", dataset.display()))?;
    let repr = repr.resolve(&model)?;
    Ok(PlanEvaluator::new(
        model,
        repr,
        EvalSet::new(&test, limit)?,
    )?)
}

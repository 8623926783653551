//! How often each bit position holds a 0 or a 1 across all weights.

use std::path::PathBuf;

use anyhow::Result;
use fecnn_core::codec::{model_to_bits, position_mask};
use fecnn_core::{LayerBits, WeightRepr};
use serde::{Deserialize, Serialize};

use crate::audit::{config_hash, write_rows};
use crate::setup::{load_model, ReprChoice};

#[derive(Clone, Debug, Serialize)]
pub struct BitstatsConfig {
    pub model: PathBuf,
    pub repr: ReprChoice,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitstatsRow {
    pub position: u32,
    pub region: String,
    pub ones: u64,
    pub weights: u64,
    pub p0: f64,
    pub p1: f64,
    pub seed: u64,
    pub config_hash: String,
}

fn region(repr: &WeightRepr, pos: u32) -> &'static str {
    match (repr, pos) {
        (_, 0) => "sign",
        (WeightRepr::Float32, 1..=8) => "exponent",
        (WeightRepr::Float32, _) => "fraction",
        (WeightRepr::Fixed(_), _) => "magnitude",
    }
}

/// Per-position counts of ones over every weight of every layer.
pub fn position_counts(bits: &[LayerBits]) -> (Vec<u64>, u64) {
    let width = bits.first().map_or(0, LayerBits::width);
    let mut ones = vec![0u64; width as usize];
    let mut total = 0u64;
    for layer in bits {
        total += layer.len() as u64;
        for &w in layer.words() {
            for (pos, count) in ones.iter_mut().enumerate() {
                *count += u64::from(w & position_mask(width, pos as u32) != 0);
            }
        }
    }
    (ones, total)
}

pub fn run_bitstats(cfg: &BitstatsConfig) -> Result<Vec<BitstatsRow>> {
    let hash = config_hash(cfg)?;
    let model = load_model(&cfg.model)?;
    let repr = cfg.repr.resolve(&model)?;
    let bits = model_to_bits(&model, &repr)?;
    let (ones, total) = position_counts(&bits);
    Ok(ones
        .iter()
        .enumerate()
        .map(|(pos, &n)| {
            let p1 = n as f64 / total as f64;
            BitstatsRow {
                position: pos as u32,
                region: region(&repr, pos as u32).to_string(),
                ones: n,
                weights: total,
                p0: (total - n) as f64 / total as f64,
                p1,
                seed: cfg.seed,
                config_hash: hash.clone(),
            }
        })
        .collect())
}

pub fn bitstats_to(
    cfg: &BitstatsConfig,
    out: Option<&std::path::Path>,
) -> Result<Vec<BitstatsRow>> {
    let rows = run_bitstats(cfg)?;
    write_rows(out, &rows)?;
    Ok(rows)
}

//! Seeded bit-error injection.
//!
//! Every bit draws its own uniform variate from a counter-based hash of
//! `(seed, layer, weight, bit position)`, so the outcome for a bit does not
//! depend on iteration order, on which other bits are protected, or on how
//! the work is split across threads.
//!
//! Trial `t` of a Monte-Carlo experiment with master seed `s` uses the
//! channel seed [`trial_seed`]`(s, t) = mix64(s + (t + 1) * 0x9E3779B97F4A7C15)`,
//! where `mix64` is the SplitMix64 finalizer.

use rayon::prelude::*;

use crate::codec::{check_same_shape, width_mask, LayerBits};
use crate::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const LAYER_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const TWO_POW_53: f64 = 9_007_199_254_740_992.0;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Channel seed for Monte-Carlo trial `trial` under master seed `seed`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    mix64(seed.wrapping_add(trial.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Independent stream derived from `seed` for a named purpose.
pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix64(seed ^ mix64(salt))
}

#[inline]
fn layer_key(seed: u64, layer: usize) -> u64 {
    mix64(mix64(seed) ^ (layer as u64).wrapping_add(1).wrapping_mul(LAYER_SALT))
}

/// Uniform 53-bit variate in `[0, 1)` for one bit, scaled by 2^53.
#[inline]
fn bit_variate(layer_key: u64, weight: usize, pos: u32) -> f64 {
    let counter = ((weight as u64) << 5) | u64::from(pos);
    (mix64(layer_key ^ mix64(counter.wrapping_add(GOLDEN))) >> 11) as f64
}

/// Uniform variate in `[0, 1)` keyed by `(seed, index)`.
#[inline]
pub(crate) fn keyed_uniform(seed: u64, index: u64) -> f64 {
    (mix64(mix64(seed) ^ mix64(index.wrapping_add(GOLDEN))) >> 11) as f64 / TWO_POW_53
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Symmetric,
    /// Only bits that are 0 may flip.
    ZeroToOne,
    /// Only bits that are 1 may flip.
    OneToZero,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelSpec {
    p: f64,
    direction: Direction,
    seed: u64,
}

impl ChannelSpec {
    pub fn new(p: f64, direction: Direction, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(format!("bit error rate {p} outside [0, 1]")));
        }
        Ok(Self { p, direction, seed })
    }

    pub fn symmetric(p: f64, seed: u64) -> Result<Self> {
        Self::new(p, Direction::Symmetric, seed)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Same channel for Monte-Carlo trial `trial`.
    pub fn for_trial(self, trial: u64) -> Self {
        self.with_seed(trial_seed(self.seed, trial))
    }

    /// Positions of `word` this channel is allowed to flip.
    #[inline]
    fn eligible(&self, word: u32, width: u32) -> u32 {
        match self.direction {
            Direction::Symmetric => width_mask(width),
            Direction::ZeroToOne => !word & width_mask(width),
            Direction::OneToZero => word,
        }
    }
}

/// Flips unprotected bits of `bits` independently with probability `p`.
///
/// `protected` has the same shape as `bits`; a 1 marks a bit the channel
/// cannot touch.
pub fn inject(
    bits: &[LayerBits],
    protected: &[LayerBits],
    chan: &ChannelSpec,
) -> Result<Vec<LayerBits>> {
    check_same_shape(bits, protected)?;
    Ok(inject_with(bits, chan, |layer, weight| {
        protected[layer].words()[weight]
    }))
}

/// [`inject`] with one protection word shared by every weight of a layer.
pub fn inject_masked(
    bits: &[LayerBits],
    layer_masks: &[u32],
    chan: &ChannelSpec,
) -> Result<Vec<LayerBits>> {
    if layer_masks.len() != bits.len() {
        return Err(Error::shape(format!(
            "{} layer masks for {} layers",
            layer_masks.len(),
            bits.len()
        )));
    }
    Ok(inject_with(bits, chan, |layer, _| layer_masks[layer]))
}

/// [`inject`] with nothing protected.
pub fn inject_all(bits: &[LayerBits], chan: &ChannelSpec) -> Vec<LayerBits> {
    inject_with(bits, chan, |_, _| 0)
}

fn inject_with<F>(bits: &[LayerBits], chan: &ChannelSpec, protected: F) -> Vec<LayerBits>
where
    F: Fn(usize, usize) -> u32 + Sync,
{
    let threshold = chan.p * TWO_POW_53;
    bits.par_iter()
        .enumerate()
        .map(|(layer, lb)| {
            let mut out = lb.clone();
            if chan.p == 0.0 {
                return out;
            }
            let width = lb.width();
            let key = layer_key(chan.seed, layer);
            for (weight, word) in out.words_mut().iter_mut().enumerate() {
                let eligible = chan.eligible(*word, width) & !protected(layer, weight);
                if eligible == 0 {
                    continue;
                }
                let mut flips = 0u32;
                let mut rest = eligible;
                while rest != 0 {
                    let bit = rest.trailing_zeros();
                    rest &= rest - 1;
                    let pos = width - 1 - bit;
                    if bit_variate(key, weight, pos) < threshold {
                        flips |= 1 << bit;
                    }
                }
                *word ^= flips;
            }
            out
        })
        .collect()
}

/// Fraction of unprotected bits that differ between `before` and `after`.
///
/// Returns 0 when every bit is protected.
pub fn empirical_flip_rate(
    before: &[LayerBits],
    after: &[LayerBits],
    protected: &[LayerBits],
) -> Result<f64> {
    check_same_shape(before, after)?;
    check_same_shape(before, protected)?;
    let mut exposed = 0u64;
    let mut flipped = 0u64;
    for ((b, a), p) in before.iter().zip(after).zip(protected) {
        let mask = width_mask(b.width());
        for ((&wb, &wa), &wp) in b.words().iter().zip(a.words()).zip(p.words()) {
            let open = !wp & mask;
            exposed += u64::from(open.count_ones());
            flipped += u64::from(((wb ^ wa) & open).count_ones());
        }
    }
    Ok(if exposed == 0 {
        0.0
    } else {
        flipped as f64 / exposed as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_bits() -> Vec<LayerBits> {
        vec![
            LayerBits::new(8, (0..200u32).map(|i| i & 0xff).collect()).unwrap(),
            LayerBits::new(8, vec![0x5a; 77]).unwrap(),
        ]
    }

    fn none_protected(bits: &[LayerBits]) -> Vec<LayerBits> {
        bits.iter()
            .map(|l| LayerBits::filled(l.width(), l.len(), 0))
            .collect()
    }

    fn all_protected(bits: &[LayerBits]) -> Vec<LayerBits> {
        bits.iter()
            .map(|l| LayerBits::filled(l.width(), l.len(), u32::MAX))
            .collect()
    }

    #[test]
    fn zero_rate_is_identity() {
        let bits = sample_bits();
        let chan = ChannelSpec::symmetric(0.0, 3).unwrap();
        assert_eq!(inject(&bits, &none_protected(&bits), &chan).unwrap(), bits);
    }

    #[test]
    fn full_protection_blocks_certain_flips() {
        let bits = sample_bits();
        let chan = ChannelSpec::symmetric(1.0, 3).unwrap();
        assert_eq!(inject(&bits, &all_protected(&bits), &chan).unwrap(), bits);
    }

    #[test]
    fn certain_flip_complements() {
        let bits = sample_bits();
        let chan = ChannelSpec::symmetric(1.0, 3).unwrap();
        let out = inject(&bits, &none_protected(&bits), &chan).unwrap();
        for (a, b) in bits.iter().zip(&out) {
            for (x, y) in a.words().iter().zip(b.words()) {
                assert_eq!(x ^ y, 0xff);
            }
        }
        assert_eq!(
            empirical_flip_rate(&bits, &out, &none_protected(&bits)).unwrap(),
            1.0
        );
        assert_eq!(
            empirical_flip_rate(&bits, &bits, &none_protected(&bits)).unwrap(),
            0.0
        );
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let bits = sample_bits();
        let wrong = vec![LayerBits::filled(8, 3, 0)];
        let chan = ChannelSpec::symmetric(0.1, 0).unwrap();
        assert!(matches!(inject(&bits, &wrong, &chan), Err(Error::Shape(_))));
    }

    #[test]
    fn invalid_rate_is_rejected() {
        assert!(ChannelSpec::symmetric(-0.1, 0).is_err());
        assert!(ChannelSpec::symmetric(1.5, 0).is_err());
    }

    #[test]
    fn outcome_is_independent_of_other_protection() {
        // a bit that flips with mask A also flips with any mask leaving it open
        let bits = sample_bits();
        let chan = ChannelSpec::symmetric(0.3, 99).unwrap();
        let open = inject_masked(&bits, &[0, 0], &chan).unwrap();
        let half = inject_masked(&bits, &[0xf0, 0x0f], &chan).unwrap();
        for ((o, h), mask) in open.iter().zip(&half).zip([0xf0u32, 0x0f]) {
            for (wo, wh) in o.words().iter().zip(h.words()) {
                assert_eq!(wo & !mask, wh & !mask);
            }
        }
    }

    #[test]
    fn trial_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|t| trial_seed(42, t)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}

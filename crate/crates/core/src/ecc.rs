//! Redundancy accounting and probabilistic models of ECC protection.
//!
//! Two code families are modeled. An *ideal* code runs at the capacity of the
//! binary symmetric channel, `1 - H(p)`, and always decodes. A *block* code
//! `(n, k)` corrects up to `t` errors per codeword; a codeword fails when the
//! channel puts more than `t` errors into it, which happens with probability
//! `P[Binomial(n, p) > t]`. No decoder is run: failed blocks simply keep their
//! channel errors, successful blocks are restored.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{derive_seed, inject_all, inject_masked, keyed_uniform, ChannelSpec};
use crate::codec::{width_mask, LayerBits};
use crate::{Error, Result};

const BLOCK_SALT: u64 = 0xB10C_DEC0_DE00_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EccSpec {
    /// Capacity-achieving code; its rate is derived from `p` at use time.
    Ideal,
    /// `(n, k)` block code correcting `t` errors per codeword.
    Block { n: u32, k: u32, t: u32 },
}

impl EccSpec {
    pub fn block(n: u32, k: u32, t: u32) -> Result<Self> {
        if !(0 < k && k < n) {
            return Err(Error::param(format!(
                "block code needs 0 < k < n, got n={n} k={k}"
            )));
        }
        if t == 0 {
            return Err(Error::param("block code must correct at least one error"));
        }
        Ok(EccSpec::Block { n, k, t })
    }

    /// Parity bits per information bit, `(n - k) / k`.
    ///
    /// For the ideal code this is `H(p) / (1 - H(p))`.
    pub fn overhead(&self, p: f64) -> Result<f64> {
        match *self {
            EccSpec::Ideal => ideal_overhead(p),
            EccSpec::Block { n, k, .. } => Ok(f64::from(n - k) / f64::from(k)),
        }
    }

    /// Probability that one codeword fails to decode on a BSC with BER `p`.
    pub fn failure_probability(&self, p: f64) -> f64 {
        match *self {
            EccSpec::Ideal => 0.0,
            EccSpec::Block { n, t, .. } => block_failure_probability(n, t, p),
        }
    }
}

impl fmt::Display for EccSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EccSpec::Ideal => f.write_str("ideal"),
            EccSpec::Block { n, k, t } => write!(f, "bch:{n}:{k}:{t}"),
        }
    }
}

impl FromStr for EccSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "ideal" {
            return Ok(EccSpec::Ideal);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["bch", n, k, t] => {
                let num = |v: &str| {
                    v.parse::<u32>()
                        .map_err(|e| Error::format("ecc spec", format!("{v:?}: {e}")))
                };
                EccSpec::block(num(n)?, num(k)?, num(t)?)
            }
            _ => Err(Error::format(
                "ecc spec",
                format!("expected `ideal` or `bch:<n>:<k>:<t>`, got {s:?}"),
            )),
        }
    }
}

/// Binary entropy in bits; `H(0) = H(1) = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

/// Capacity of the BSC, `1 - H(p)`, for `0 < p < 1`.
pub fn ideal_rate(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param(format!(
            "ideal code rate needs 0 < p < 1, got {p}"
        )));
    }
    Ok(1.0 - binary_entropy(p))
}

fn ideal_overhead(p: f64) -> Result<f64> {
    if p == 0.0 || p == 1.0 {
        return Err(Error::DegenerateChannel(p));
    }
    let rate = ideal_rate(p)?;
    if rate <= 0.0 {
        return Err(Error::param(format!(
            "channel with p = {p} has zero capacity"
        )));
    }
    Ok((1.0 - rate) / rate)
}

/// `P[X > t]` for `X ~ Binomial(n, p)`, summed in log space.
///
/// The tail on the far side of the mean is summed; when that is the lower
/// tail the result is its complement.
pub fn block_failure_probability(n: u32, t: u32, p: f64) -> f64 {
    if t >= n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let upper = f64::from(t) + 1.0 > f64::from(n) * p;
    let range = if upper { (t + 1)..=n } else { 0..=t };
    let tail = log_binomial_sum(n, p, range).exp().min(1.0);
    if upper {
        tail
    } else {
        (1.0 - tail).max(0.0)
    }
}

/// `ln sum_{i in range} C(n, i) p^i q^(n-i)`.
fn log_binomial_sum(n: u32, p: f64, range: std::ops::RangeInclusive<u32>) -> f64 {
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let (lo, hi) = (*range.start(), *range.end());
    let mut ln_choose = 0.0;
    for i in 0..lo {
        ln_choose += f64::from(n - i).ln() - f64::from(i + 1).ln();
    }
    let mut logs = Vec::with_capacity((hi - lo + 1) as usize);
    for i in lo..=hi {
        logs.push(ln_choose + f64::from(i) * ln_p + f64::from(n - i) * ln_q);
        if i < n {
            ln_choose += f64::from(n - i).ln() - f64::from(i + 1).ln();
        }
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    max + sum.ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedundancyReport {
    /// Total weight bits, `m * sum |W_i|`.
    pub k_total: u64,
    /// Protected weight bits, `sum |W_i| * popcount(M_i)`.
    pub k_pro: u64,
    /// `k_pro (n - k) / (k_total k)`.
    pub r: f64,
}

/// Redundancy of a set of per-layer bit masks.
///
/// `masks[i]` is the `width`-bit mask word of layer `i`, which holds
/// `layer_sizes[i]` weights. For a block code the ratio is evaluated from
/// exact integer products with a single rounding.
pub fn redundancy(
    masks: &[u32],
    layer_sizes: &[usize],
    width: u32,
    ecc: &EccSpec,
    p: f64,
) -> Result<RedundancyReport> {
    if masks.len() != layer_sizes.len() {
        return Err(Error::shape(format!(
            "{} masks for {} layers",
            masks.len(),
            layer_sizes.len()
        )));
    }
    if let Some(m) = masks.iter().find(|&&m| m & !width_mask(width) != 0) {
        return Err(Error::shape(format!("mask {m:#x} wider than {width} bits")));
    }
    let total_weights: u64 = layer_sizes.iter().map(|&s| s as u64).sum();
    let k_total = u64::from(width) * total_weights;
    let k_pro: u64 = masks
        .iter()
        .zip(layer_sizes)
        .map(|(m, &s)| s as u64 * u64::from(m.count_ones()))
        .sum();
    let r = if k_pro == 0 {
        // still validates the ideal-code channel
        ecc.overhead(p)?;
        0.0
    } else {
        match *ecc {
            EccSpec::Ideal => (k_pro as f64 / k_total as f64) * ideal_overhead(p)?,
            EccSpec::Block { n, k, .. } => {
                let num = u128::from(k_pro) * u128::from(n - k);
                let den = u128::from(k_total) * u128::from(k);
                num as f64 / den as f64
            }
        }
    };
    Ok(RedundancyReport { k_total, k_pro, r })
}

/// Result of [`simulate_protection`].
#[derive(Clone, Debug)]
pub struct ProtectionOutcome {
    pub bits: Vec<LayerBits>,
    /// Codewords formed from the protected bits (block codes only).
    pub blocks: u64,
    pub failed_blocks: u64,
}

/// Whether codeword `index` fails, for a block-failure stream keyed by `seed`.
pub fn block_fails(seed: u64, index: u64, failure_probability: f64) -> bool {
    failure_probability > 0.0 && keyed_uniform(seed, index) < failure_probability
}

/// Stores `bits` with the layers' masked positions ECC-protected, passes
/// them through `chan`, and returns what the decoder hands back.
///
/// With a block code the protected bits are packed into `k`-bit payloads in
/// layer-major, weight-major, bit-position-minor order; a trailing partial
/// payload counts as a shortened codeword with the same failure probability.
pub fn simulate_protection(
    bits: &[LayerBits],
    masks: &[u32],
    ecc: &EccSpec,
    chan: &ChannelSpec,
) -> Result<ProtectionOutcome> {
    let (n, k, t) = match *ecc {
        EccSpec::Ideal => {
            return Ok(ProtectionOutcome {
                bits: inject_masked(bits, masks, chan)?,
                blocks: 0,
                failed_blocks: 0,
            })
        }
        EccSpec::Block { n, k, t } => (n, k, t),
    };
    if masks.len() != bits.len() {
        return Err(Error::shape(format!(
            "{} masks for {} layers",
            masks.len(),
            bits.len()
        )));
    }
    let fail_p = block_failure_probability(n, t, chan.p());
    let block_seed = derive_seed(chan.seed(), BLOCK_SALT);
    let k = u64::from(k);

    let mut out = inject_all(bits, chan);
    let mut cursor = 0u64;
    let mut cached: Option<(u64, bool)> = None;
    let mut failed_blocks = 0u64;
    let mut fails = |block: u64, failed_blocks: &mut u64| -> bool {
        match cached {
            Some((b, f)) if b == block => f,
            _ => {
                let f = block_fails(block_seed, block, fail_p);
                *failed_blocks += u64::from(f);
                cached = Some((block, f));
                f
            }
        }
    };

    for ((orig, noisy), &mask) in bits.iter().zip(out.iter_mut()).zip(masks) {
        let mask = mask & width_mask(orig.width());
        let per_weight = u64::from(mask.count_ones());
        if per_weight == 0 {
            continue;
        }
        for (&clean, word) in orig.words().iter().zip(noisy.words_mut()) {
            let first = cursor / k;
            let last = (cursor + per_weight - 1) / k;
            if first == last {
                if !fails(first, &mut failed_blocks) {
                    *word = (*word & !mask) | (clean & mask);
                }
            } else {
                // payload boundary inside this weight: walk positions MSB first
                let mut rest = mask;
                let mut offset = 0u64;
                while rest != 0 {
                    let bit = 31 - rest.leading_zeros();
                    rest &= !(1u32 << bit);
                    if !fails((cursor + offset) / k, &mut failed_blocks) {
                        *word = (*word & !(1 << bit)) | (clean & (1 << bit));
                    }
                    offset += 1;
                }
            }
            cursor += per_weight;
        }
    }
    Ok(ProtectionOutcome {
        bits: out,
        blocks: cursor.div_ceil(k),
        failed_blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        assert_eq!("ideal".parse::<EccSpec>().unwrap(), EccSpec::Ideal);
        let bch: EccSpec = "bch:8191:6722:115".parse().unwrap();
        assert_eq!(
            bch,
            EccSpec::Block {
                n: 8191,
                k: 6722,
                t: 115
            }
        );
        assert_eq!(bch.to_string(), "bch:8191:6722:115");
        assert!("bch:10:10:1".parse::<EccSpec>().is_err());
        assert!("bch:10:5:0".parse::<EccSpec>().is_err());
        assert!("hamming".parse::<EccSpec>().is_err());
    }

    #[test]
    fn hand_evaluated_redundancy() {
        let ecc = EccSpec::block(8191, 6787, 110).unwrap();
        let rep = redundancy(&[0b1100_0000], &[100], 8, &ecc, 0.01).unwrap();
        assert_eq!(rep.k_total, 800);
        assert_eq!(rep.k_pro, 200);
        assert!((rep.r - 0.051_716_516_870_487_7).abs() < 1e-16, "{}", rep.r);
    }

    #[test]
    fn empty_and_full_masks() {
        let ecc = EccSpec::block(6, 5, 1).unwrap();
        assert_eq!(
            redundancy(&[0, 0], &[10, 20], 8, &ecc, 0.01).unwrap().r,
            0.0
        );
        assert_eq!(
            redundancy(&[0xff, 0xff], &[10, 20], 8, &ecc, 0.01)
                .unwrap()
                .r,
            0.2
        );
        let ideal = redundancy(&[0xff, 0xff], &[10, 20], 8, &EccSpec::Ideal, 0.01).unwrap();
        assert_eq!(ideal.r, EccSpec::Ideal.overhead(0.01).unwrap());
    }

    #[test]
    fn redundancy_rejects_bad_shapes() {
        let ecc = EccSpec::Ideal;
        assert!(redundancy(&[0], &[1, 2], 8, &ecc, 0.01).is_err());
        assert!(redundancy(&[0x100], &[1], 8, &ecc, 0.01).is_err());
        assert!(matches!(
            redundancy(&[1], &[1], 8, &ecc, 0.0),
            Err(Error::DegenerateChannel(_))
        ));
    }

    #[test]
    fn ideal_rate_values() {
        assert_eq!(ideal_rate(0.5).unwrap(), 0.0);
        assert!((ideal_rate(0.01).unwrap() - 0.919_206_864_104_088_8).abs() < 1e-12);
        assert!((ideal_rate(0.2).unwrap() - ideal_rate(0.8).unwrap()).abs() < 1e-15);
        assert!(ideal_rate(0.0).is_err());
        assert!(ideal_rate(1.0).is_err());
        assert!(EccSpec::Ideal.overhead(0.5).is_err());
    }

    #[test]
    fn failure_probability_edges() {
        assert_eq!(block_failure_probability(8191, 115, 0.0), 0.0);
        assert_eq!(block_failure_probability(100, 100, 0.3), 0.0);
        assert_eq!(block_failure_probability(100, 10, 1.0), 1.0);
        // n = 2, t = 1: P[X = 2] = p^2
        assert!((block_failure_probability(2, 1, 0.3) - 0.09).abs() < 1e-15);
        // n = 3, t = 1: 3p^2(1-p) + p^3
        let p: f64 = 0.2;
        let exact = 3.0 * p * p * (1.0 - p) + p.powi(3);
        assert!((block_failure_probability(3, 1, p) - exact).abs() < 1e-15);
    }

    #[test]
    fn failure_probability_is_monotone() {
        let mut prev = 0.0;
        for i in 1..40 {
            let p = f64::from(i) * 0.0005;
            let f = block_failure_probability(8191, 115, p);
            assert!(f >= prev);
            prev = f;
        }
        let mut prev = 1.0;
        for t in 60..140 {
            let f = block_failure_probability(8191, t, 0.01);
            assert!(f <= prev);
            prev = f;
        }
    }

    fn layers() -> Vec<LayerBits> {
        vec![
            LayerBits::new(8, (0..50u32).map(|i| (i * 37) & 0xff).collect()).unwrap(),
            LayerBits::new(8, (0..30u32).map(|i| (i * 11) & 0xff).collect()).unwrap(),
        ]
    }

    #[test]
    fn ideal_full_mask_is_identity() {
        let bits = layers();
        let chan = ChannelSpec::symmetric(0.4, 5).unwrap();
        let out = simulate_protection(&bits, &[0xff, 0xff], &EccSpec::Ideal, &chan).unwrap();
        assert_eq!(out.bits, bits);
    }

    #[test]
    fn zero_rate_is_identity() {
        let bits = layers();
        let chan = ChannelSpec::symmetric(0.0, 5).unwrap();
        let ecc = EccSpec::block(63, 45, 3).unwrap();
        let out = simulate_protection(&bits, &[0x81, 0x3c], &ecc, &chan).unwrap();
        assert_eq!(out.bits, bits);
        assert_eq!(out.failed_blocks, 0);
    }

    #[test]
    fn block_with_full_correction_matches_ideal() {
        let bits = layers();
        let chan = ChannelSpec::symmetric(0.2, 17).unwrap();
        let masks = [0b1011_0000, 0b0100_0001];
        let ecc = EccSpec::block(40, 7, 40).unwrap();
        let block = simulate_protection(&bits, &masks, &ecc, &chan).unwrap();
        let ideal = simulate_protection(&bits, &masks, &EccSpec::Ideal, &chan).unwrap();
        assert_eq!(block.bits, ideal.bits);
        assert_eq!(block.failed_blocks, 0);
        // 50 * 3 + 30 * 2 = 210 protected bits in payloads of 7
        assert_eq!(block.blocks, 30);
    }

    #[test]
    fn certain_failure_keeps_channel_errors() {
        let bits = layers();
        let chan = ChannelSpec::symmetric(1.0, 17).unwrap();
        let ecc = EccSpec::block(10, 3, 1).unwrap();
        let out = simulate_protection(&bits, &[0xf0, 0x0f], &ecc, &chan).unwrap();
        assert_eq!(out.failed_blocks, out.blocks);
        for (a, b) in bits.iter().zip(&out.bits) {
            for (x, y) in a.words().iter().zip(b.words()) {
                assert_eq!(x ^ y, 0xff);
            }
        }
    }
}

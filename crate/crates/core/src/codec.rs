//! Weight codecs: 32-bit floating point and m-bit sign-magnitude fixed point.
//!
//! Bit position 0 is always the sign bit. A weight's bits are packed into a
//! `u32` word whose most significant used bit is position 0, so position `j`
//! of an `m`-bit word lives at integer bit `m - 1 - j`.
//!
//! The floating-point format is decoded literally as
//! `(-1)^s * 2^(e - 127) * (1.f)`, with no special meaning for the all-zero
//! or all-one exponent. Every one of the 2^32 patterns is therefore an
//! ordinary nonzero value, and the codec is a bijection on bit patterns.

use std::fmt;
use std::str::FromStr;

use crate::nn::NetworkModel;
use crate::{Error, Result};

const FRACTION_BITS: u32 = 23;
const EXPONENT_BIAS: i64 = 127;
/// f64 exponent field for 2^(e - 127) is `e + F64_EXPONENT_OFFSET`.
const F64_EXPONENT_OFFSET: u64 = 1023 - 127;

/// Integer mask selecting bit position `pos` of a `width`-bit word.
#[inline]
pub fn position_mask(width: u32, pos: u32) -> u32 {
    debug_assert!(pos < width && width <= 32);
    1u32 << (width - 1 - pos)
}

/// All-ones mask for a `width`-bit word.
#[inline]
pub fn width_mask(width: u32) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    }
}

fn parse_bit_string(s: &str, width: Option<usize>) -> Result<(u32, u32)> {
    let s = s.trim();
    if s.is_empty() || s.len() > 32 {
        return Err(Error::format(
            "bit string",
            format!("length {} not in 1..=32", s.len()),
        ));
    }
    if let Some(w) = width {
        if s.len() != w {
            return Err(Error::format(
                "bit string",
                format!("expected {w} bits, got {}", s.len()),
            ));
        }
    }
    let mut word = 0u32;
    for c in s.chars() {
        word <<= 1;
        match c {
            '0' => {}
            '1' => word |= 1,
            other => {
                return Err(Error::format(
                    "bit string",
                    format!("unexpected character {other:?}"),
                ))
            }
        }
    }
    Ok((word, s.len() as u32))
}

pub(crate) fn format_bits(word: u32, width: u32, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for pos in 0..width {
        f.write_str(if word & position_mask(width, pos) != 0 {
            "1"
        } else {
            "0"
        })?;
    }
    Ok(())
}

/// The 32 bits of a floating-point weight, `b_0` (sign) first.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bits32(pub u32);

impl Bits32 {
    pub fn bit(self, pos: u32) -> bool {
        self.0 & position_mask(32, pos) != 0
    }

    pub fn sign(self) -> bool {
        self.bit(0)
    }

    pub fn exponent(self) -> u32 {
        (self.0 >> FRACTION_BITS) & 0xff
    }

    pub fn fraction(self) -> u32 {
        self.0 & ((1 << FRACTION_BITS) - 1)
    }
}

impl fmt::Display for Bits32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        format_bits(self.0, 32, f)
    }
}

impl fmt::Debug for Bits32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bits32({self})")
    }
}

impl FromStr for Bits32 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_bit_string(s, Some(32)).map(|(w, _)| Bits32(w))
    }
}

/// Decodes a 32-bit pattern as `(-1)^b0 * 2^((b1..b8) - 127) * (1.b9..b31)`.
///
/// The result is exact: every pattern maps to a normal `f64`.
pub fn decode_float32(bits: Bits32) -> f64 {
    let sign = u64::from(bits.sign()) << 63;
    let exponent = (u64::from(bits.exponent()) + F64_EXPONENT_OFFSET) << 52;
    let fraction = u64::from(bits.fraction()) << (52 - FRACTION_BITS);
    f64::from_bits(sign | exponent | fraction)
}

/// Inverse of [`decode_float32`]; the fraction is rounded to nearest, ties to even.
///
/// Magnitudes below `2^-127`, zero included, round to the smallest magnitude
/// `2^-127` (exponent and fraction all zero) with the sign kept. Magnitudes
/// beyond the largest encodable value and non-finite inputs are range errors.
pub fn encode_float32(w: f64) -> Result<Bits32> {
    if !w.is_finite() {
        return Err(Error::Range(w));
    }
    let sign = u32::from(w.is_sign_negative()) << 31;
    let raw = w.abs().to_bits();
    let biased = (raw >> 52) as i64;
    if biased == 0 {
        // zero or f64-subnormal, far below 2^-127
        return Ok(Bits32(sign));
    }
    let mantissa = raw & ((1u64 << 52) - 1);
    let drop = 52 - FRACTION_BITS;
    let mut fraction = mantissa >> drop;
    let rem = mantissa & ((1u64 << drop) - 1);
    let half = 1u64 << (drop - 1);
    if rem > half || (rem == half && fraction & 1 == 1) {
        fraction += 1;
    }
    let mut exponent = biased - 1023 + EXPONENT_BIAS;
    if fraction == 1 << FRACTION_BITS {
        fraction = 0;
        exponent += 1;
    }
    if exponent < 0 {
        return Ok(Bits32(sign));
    }
    if exponent > 255 {
        return Err(Error::Range(w));
    }
    Ok(Bits32(
        sign | ((exponent as u32) << FRACTION_BITS) | fraction as u32,
    ))
}

/// Clamp bound and width of the sign-magnitude fixed-point format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointSpec {
    clamp: f64,
    width: u32,
}

impl FixedPointSpec {
    pub fn new(clamp: f64, width: u32) -> Result<Self> {
        if !(clamp.is_finite() && clamp > 0.0) {
            return Err(Error::param(format!(
                "fixed-point clamp bound must be positive, got {clamp}"
            )));
        }
        if !(2..=32).contains(&width) {
            return Err(Error::param(format!(
                "fixed-point width must be in 2..=32, got {width}"
            )));
        }
        Ok(Self { clamp, width })
    }

    /// Clamp bound `c`.
    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    /// Width `m` in bits.
    pub fn width(&self) -> u32 {
        self.width
    }

    /// Largest magnitude code, `2^(m-1) - 1`.
    pub fn max_code(&self) -> u32 {
        width_mask(self.width - 1)
    }

    /// Weight units per quantum, `c / (2^(m-1) - 1)`.
    pub fn scale(&self) -> f64 {
        self.clamp / f64::from(self.max_code())
    }
}

/// The `m` bits of a fixed-point weight, `b_0` (sign) first.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitsM {
    word: u32,
    width: u32,
}

impl BitsM {
    pub fn new(word: u32, width: u32) -> Result<Self> {
        if !(1..=32).contains(&width) || word & !width_mask(width) != 0 {
            return Err(Error::shape(format!(
                "word {word:#x} does not fit in {width} bits"
            )));
        }
        Ok(Self { word, width })
    }

    pub fn word(self) -> u32 {
        self.word
    }

    pub fn width(self) -> u32 {
        self.width
    }

    pub fn bit(self, pos: u32) -> bool {
        self.word & position_mask(self.width, pos) != 0
    }
}

impl fmt::Display for BitsM {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        format_bits(self.word, self.width, f)
    }
}

impl fmt::Debug for BitsM {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitsM({self})")
    }
}

impl FromStr for BitsM {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (word, width) = parse_bit_string(s, None)?;
        Ok(Self { word, width })
    }
}

/// `(-1)^b0 * (b1..b_{m-1}) * s`. Negative zero decodes to `0.0`.
pub fn decode_fixed(bits: BitsM, spec: &FixedPointSpec) -> Result<f64> {
    if bits.width != spec.width {
        return Err(Error::shape(format!(
            "{}-bit pattern decoded with a {}-bit spec",
            bits.width, spec.width
        )));
    }
    Ok(decode_fixed_word(bits.word, spec))
}

#[inline]
fn decode_fixed_word(word: u32, spec: &FixedPointSpec) -> f64 {
    let magnitude = word & spec.max_code();
    if magnitude == 0 {
        return 0.0;
    }
    let value = f64::from(magnitude) * spec.scale();
    if word & position_mask(spec.width, 0) != 0 {
        -value
    } else {
        value
    }
}

/// Clamps to `[-c, c]` and rounds the magnitude to the nearest quantum, ties
/// away from zero. Zero is always encoded with a clear sign bit.
pub fn encode_fixed(w: f64, spec: &FixedPointSpec) -> BitsM {
    BitsM {
        word: encode_fixed_word(w, spec),
        width: spec.width,
    }
}

#[inline]
fn encode_fixed_word(w: f64, spec: &FixedPointSpec) -> u32 {
    if w.is_nan() {
        return 0;
    }
    let clamped = w.clamp(-spec.clamp, spec.clamp);
    // f64::round is half-away-from-zero
    let code = ((clamped.abs() / spec.scale()).round() as u32).min(spec.max_code());
    if code != 0 && clamped < 0.0 {
        code | position_mask(spec.width, 0)
    } else {
        code
    }
}

/// Bit representation used for every weight of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightRepr {
    Float32,
    Fixed(FixedPointSpec),
}

impl WeightRepr {
    /// Bits per weight, `m`.
    pub fn width(&self) -> u32 {
        match self {
            WeightRepr::Float32 => 32,
            WeightRepr::Fixed(spec) => spec.width(),
        }
    }

    pub fn encode(&self, w: f64) -> Result<u32> {
        match self {
            WeightRepr::Float32 => encode_float32(w).map(|b| b.0),
            WeightRepr::Fixed(spec) => Ok(encode_fixed_word(w, spec)),
        }
    }

    #[inline]
    pub fn decode(&self, word: u32) -> f64 {
        match self {
            WeightRepr::Float32 => decode_float32(Bits32(word)),
            WeightRepr::Fixed(spec) => decode_fixed_word(word, spec),
        }
    }

    /// Fixed point with `c` = the largest weight magnitude over the whole model.
    pub fn fixed_for_model(model: &NetworkModel, width: u32) -> Result<Self> {
        FixedPointSpec::new(max_abs_weight(model), width).map(WeightRepr::Fixed)
    }
}

pub fn max_abs_weight(model: &NetworkModel) -> f64 {
    model
        .layers()
        .iter()
        .flat_map(|l| l.weights().iter())
        .fold(0.0f64, |acc, w| acc.max(w.abs()))
}

/// Bit matrix of one edge layer: one `width`-bit word per weight, in the
/// layer's canonical weight order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerBits {
    width: u32,
    words: Vec<u32>,
}

impl LayerBits {
    pub fn new(width: u32, words: Vec<u32>) -> Result<Self> {
        if !(1..=32).contains(&width) {
            return Err(Error::param(format!("bit width {width} not in 1..=32")));
        }
        let mask = width_mask(width);
        if let Some(w) = words.iter().find(|&&w| w & !mask != 0) {
            return Err(Error::shape(format!(
                "word {w:#x} does not fit in {width} bits"
            )));
        }
        Ok(Self { width, words })
    }

    /// Every weight carries the same word.
    pub fn filled(width: u32, len: usize, word: u32) -> Self {
        Self {
            width,
            words: vec![word & width_mask(width); len],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn words_mut(&mut self) -> &mut [u32] {
        &mut self.words
    }

    pub fn bit(&self, weight: usize, pos: u32) -> bool {
        self.words[weight] & position_mask(self.width, pos) != 0
    }

    pub fn same_shape(&self, other: &LayerBits) -> bool {
        self.width == other.width && self.words.len() == other.words.len()
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }
}

pub(crate) fn check_same_shape(a: &[LayerBits], b: &[LayerBits]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "{} layers vs {} layers",
            a.len(),
            b.len()
        )));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if !x.same_shape(y) {
            return Err(Error::shape(format!(
                "layer {i}: {}x{} vs {}x{}",
                x.len(),
                x.width,
                y.len(),
                y.width
            )));
        }
    }
    Ok(())
}

/// Encodes every edge-layer weight of `model` (biases are never encoded).
pub fn model_to_bits(model: &NetworkModel, repr: &WeightRepr) -> Result<Vec<LayerBits>> {
    let width = repr.width();
    model
        .layers()
        .iter()
        .map(|layer| {
            let words = layer
                .weights()
                .iter()
                .map(|&w| repr.encode(w))
                .collect::<Result<Vec<_>>>()?;
            Ok(LayerBits { width, words })
        })
        .collect()
}

/// Decodes per-layer bit matrices into per-layer weight vectors.
pub fn bits_to_weights(bits: &[LayerBits], repr: &WeightRepr) -> Vec<Vec<f64>> {
    bits.iter()
        .map(|layer| layer.words.iter().map(|&w| repr.decode(w)).collect())
        .collect()
}

/// Copy of `template` whose edge weights are decoded from `bits`.
pub fn bits_to_model(
    template: &NetworkModel,
    bits: &[LayerBits],
    repr: &WeightRepr,
) -> Result<NetworkModel> {
    let mut model = template.clone();
    decode_into(&mut model, bits, repr)?;
    Ok(model)
}

/// Overwrites `model`'s edge weights with the decoding of `bits`.
pub fn decode_into(model: &mut NetworkModel, bits: &[LayerBits], repr: &WeightRepr) -> Result<()> {
    if bits.len() != model.layers().len() {
        return Err(Error::shape(format!(
            "{} bit matrices for {} layers",
            bits.len(),
            model.layers().len()
        )));
    }
    for (i, (layer, lb)) in model.layers_mut().iter_mut().zip(bits).enumerate() {
        if lb.width != repr.width() || lb.len() != layer.weights().len() {
            return Err(Error::shape(format!(
                "layer {i}: {} words of {} bits for {} weights of {} bits",
                lb.len(),
                lb.width,
                layer.weights().len(),
                repr.width()
            )));
        }
        for (dst, &word) in layer.weights_mut().iter_mut().zip(&lb.words) {
            *dst = repr.decode(word);
        }
    }
    Ok(())
}

use fecnn_core::channel::{
    empirical_flip_rate, inject, inject_all, inject_masked, mix64, trial_seed,
};
use fecnn_core::{ChannelSpec, Direction, LayerBits};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_bits(seed: u64, width: u32, sizes: &[usize]) -> Vec<LayerBits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = if width == 32 {
        u32::MAX
    } else {
        (1 << width) - 1
    };
    sizes
        .iter()
        .map(|&n| {
            LayerBits::new(width, (0..n).map(|_| rng.random::<u32>() & mask).collect()).unwrap()
        })
        .collect()
}

fn filled(bits: &[LayerBits], word: u32) -> Vec<LayerBits> {
    bits.iter()
        .map(|l| LayerBits::filled(l.width(), l.len(), word))
        .collect()
}

#[test]
fn trial_seed_formula() {
    for (s, t) in [(0u64, 0u64), (7, 3), (u64::MAX, 12), (123_456_789, 99_999)] {
        let expected = mix64(s.wrapping_add((t + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        assert_eq!(trial_seed(s, t), expected);
        assert_eq!(
            ChannelSpec::symmetric(0.1, s).unwrap().for_trial(t).seed(),
            expected
        );
    }
    // reference SplitMix64 outputs for state increments of the golden gamma
    assert_eq!(mix64(0x9E37_79B9_7F4A_7C15), 0xE220_A839_7B1D_CDAF);
}

#[test]
fn same_seed_same_errors() {
    let bits = random_bits(1, 32, &[500, 300]);
    let chan = ChannelSpec::symmetric(0.05, 77).unwrap();
    assert_eq!(inject_all(&bits, &chan), inject_all(&bits, &chan));
    assert_ne!(
        inject_all(&bits, &chan),
        inject_all(&bits, &chan.with_seed(78))
    );
}

#[test]
fn calibration_on_a_million_bits() {
    let bits = random_bits(2, 32, &[20_000, 11_250]);
    let total = 32.0 * 31_250.0;
    let p = 0.01;
    let out = inject_all(&bits, &ChannelSpec::symmetric(p, 5).unwrap());
    let rate = empirical_flip_rate(&bits, &out, &filled(&bits, 0)).unwrap();
    let se = (p * (1.0 - p) / total).sqrt();
    assert!((rate - p).abs() < 3.0 * se, "rate {rate}");
}

#[test]
fn protected_bits_never_change() {
    let bits = random_bits(3, 8, &[4000]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let protected =
        vec![LayerBits::new(8, (0..4000).map(|_| rng.random::<u32>() & 0xff).collect()).unwrap()];
    let out = inject(&bits, &protected, &ChannelSpec::symmetric(0.5, 9).unwrap()).unwrap();
    let mut changed = 0;
    for ((b, o), p) in bits[0]
        .words()
        .iter()
        .zip(out[0].words())
        .zip(protected[0].words())
    {
        assert_eq!((b ^ o) & p, 0);
        changed += (b ^ o).count_ones();
    }
    assert!(changed > 1000);
}

#[test]
fn layer_masks_match_per_weight_protection() {
    let bits = random_bits(5, 32, &[300, 200]);
    let chan = ChannelSpec::symmetric(0.2, 11).unwrap();
    let masks = [0xff00_0000u32, 0x4000_0001];
    let a = inject_masked(&bits, &masks, &chan).unwrap();
    let per_weight: Vec<LayerBits> = bits
        .iter()
        .zip(masks)
        .map(|(l, m)| LayerBits::filled(32, l.len(), m))
        .collect();
    assert_eq!(a, inject(&bits, &per_weight, &chan).unwrap());
}

#[test]
fn directional_modes_are_exhaustively_one_sided() {
    let words: Vec<u32> = (0..256).collect();
    let bits = vec![LayerBits::new(8, words.repeat(40)).unwrap()];
    for p in [0.3, 1.0] {
        for seed in 0..4 {
            let up = inject_all(
                &bits,
                &ChannelSpec::new(p, Direction::ZeroToOne, seed).unwrap(),
            );
            let down = inject_all(
                &bits,
                &ChannelSpec::new(p, Direction::OneToZero, seed).unwrap(),
            );
            for ((&b, &u), &d) in bits[0]
                .words()
                .iter()
                .zip(up[0].words())
                .zip(down[0].words())
            {
                assert_eq!(b & !u, 0, "a one became zero under 0->1 noise");
                assert_eq!(!b & d, 0, "a zero became one under 1->0 noise");
                if p == 1.0 {
                    assert_eq!(u, 0xff);
                    assert_eq!(d, 0);
                }
            }
        }
    }
}

#[test]
fn extreme_rates() {
    let bits = random_bits(6, 32, &[100, 50]);
    assert_eq!(
        inject_all(&bits, &ChannelSpec::symmetric(0.0, 1).unwrap()),
        bits
    );
    let flipped = inject_all(&bits, &ChannelSpec::symmetric(1.0, 1).unwrap());
    for (b, f) in bits.iter().zip(&flipped) {
        assert!(b
            .words()
            .iter()
            .zip(f.words())
            .all(|(x, y)| x ^ y == u32::MAX));
    }
    let all = filled(&bits, u32::MAX);
    assert_eq!(
        inject(&bits, &all, &ChannelSpec::symmetric(1.0, 1).unwrap()).unwrap(),
        bits
    );
}

proptest! {
    #[test]
    fn protecting_more_only_removes_flips(seed in any::<u64>(), small in any::<u32>(), extra in any::<u32>()) {
        let bits = random_bits(seed, 32, &[64]);
        let chan = ChannelSpec::symmetric(0.25, seed).unwrap();
        let big = small | extra;
        let a = inject_masked(&bits, &[small], &chan).unwrap();
        let b = inject_masked(&bits, &[big], &chan).unwrap();
        for ((&orig, &x), &y) in bits[0].words().iter().zip(a[0].words()).zip(b[0].words()) {
            prop_assert_eq!((orig ^ y) & !((orig ^ x) & !big), 0);
            prop_assert_eq!((x ^ y) & !big, 0);
        }
    }
}

use fecnn_core::ecc::{binary_entropy, block_failure_probability, redundancy, simulate_protection};
use fecnn_core::{ChannelSpec, EccSpec, LayerBits};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

/// Entropy written with natural logs, independent of the library's version.
fn entropy_nats_to_bits(p: f64) -> f64 {
    (-(p * p.ln()) - (1.0 - p) * (1.0 - p).ln()) / std::f64::consts::LN_2
}

fn bch() -> EccSpec {
    EccSpec::block(8191, 7411, 60).unwrap()
}

#[test]
fn ideal_overhead_at_one_percent() {
    let h = entropy_nats_to_bits(0.01);
    let oracle = h / (1.0 - h);
    let got = EccSpec::Ideal.overhead(0.01).unwrap();
    assert!((got - oracle).abs() < 1e-12);
    assert!((got - 0.08789).abs() < 1e-5, "{got}");
    assert!((binary_entropy(0.01) - h).abs() < 1e-15);
    assert_eq!(binary_entropy(0.0), 0.0);
    assert_eq!(binary_entropy(1.0), 0.0);
    assert_eq!(binary_entropy(0.5), 1.0);
    assert!(EccSpec::Ideal.overhead(0.0).is_err());
    assert!(EccSpec::Ideal.overhead(0.5).is_err());
}

#[test]
fn worked_redundancy_example() {
    // four layers, 32-bit weights, a (1000, 800) code
    let ecc = EccSpec::block(1000, 800, 20).unwrap();
    let sizes = [100usize, 50, 20, 3];
    let masks = [0xff00_0000u32, 0x0000_00ff, 0x8000_0001, 0];
    let rep = redundancy(&masks, &sizes, 32, &ecc, 0.01).unwrap();
    let k_pro = 100 * 8 + 50 * 8 + 20 * 2;
    let k_total = 32 * 173;
    assert_eq!(rep.k_pro, k_pro);
    assert_eq!(rep.k_total, k_total);
    assert_eq!(rep.r, (k_pro as f64 / k_total as f64) * 0.25);
}

#[test]
fn reference_geometry_example() {
    let sizes = [72usize, 1152, 12800, 320];
    let masks = [0x4000_0000u32, 0x4000_0000, 0, 0x6000_0000];
    let ecc = EccSpec::block(1000, 800, 20).unwrap();
    let rep = redundancy(&masks, &sizes, 32, &ecc, 0.01).unwrap();
    assert_eq!(rep.k_pro, 72 + 1152 + 640);
    assert!((rep.r - (1864.0 / (32.0 * 14344.0)) * 0.25).abs() < 1e-15);
}

#[test]
fn thousand_random_plans_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let width = if rng.random_bool(0.5) { 32 } else { 8 };
        let layers = rng.random_range(1..8);
        let sizes: Vec<usize> = (0..layers).map(|_| rng.random_range(1..5000)).collect();
        let wmask = if width == 32 { u32::MAX } else { 0xff };
        let masks: Vec<u32> = (0..layers).map(|_| rng.random::<u32>() & wmask).collect();
        let (n, k) = (8191u32, rng.random_range(4000..8191));
        let ecc = EccSpec::block(n, k, 10).unwrap();
        let mut protected = 0u64;
        let mut total = 0u64;
        for (&m, &s) in masks.iter().zip(&sizes) {
            for _ in 0..s {
                for pos in 0..width {
                    total += 1;
                    protected += u64::from(m >> pos & 1);
                }
            }
        }
        let rep = redundancy(&masks, &sizes, width, &ecc, 0.01).unwrap();
        let expect = (u128::from(protected) * u128::from(n - k)) as f64
            / (u128::from(total) * u128::from(k)) as f64;
        assert_eq!(rep.k_pro, protected);
        assert_eq!(rep.k_total, total);
        assert_eq!(rep.r, expect);
    }
}

#[test]
fn all_ones_plan_is_code_overhead() {
    let ecc = bch();
    for width in [8u32, 32] {
        let wmask = if width == 32 { u32::MAX } else { 0xff };
        let rep = redundancy(&[wmask; 4], &[72, 1152, 12800, 320], width, &ecc, 0.01).unwrap();
        assert_eq!(rep.r, 780.0 / 7411.0);
    }
    let ideal = redundancy(&[u32::MAX; 2], &[3, 9], 32, &EccSpec::Ideal, 0.01).unwrap();
    assert!((ideal.r - EccSpec::Ideal.overhead(0.01).unwrap()).abs() < 1e-15);
    let empty = redundancy(&[0; 2], &[3, 9], 32, &bch(), 0.01).unwrap();
    assert_eq!(empty.r, 0.0);
}

#[test]
fn mask_wider_than_word_is_rejected() {
    assert!(redundancy(&[0x100], &[5], 8, &bch(), 0.01).is_err());
    assert!(redundancy(&[0, 0], &[5], 8, &bch(), 0.01).is_err());
}

#[test]
fn block_failure_against_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let dist = Binomial::new(8191, 0.01).unwrap();
    let draws: Vec<u64> = (0..1_000_000).map(|_| dist.sample(&mut rng)).collect();
    for t in [110u64, 115] {
        let q = block_failure_probability(8191, t as u32, 0.01);
        let hits = draws.iter().filter(|&&x| x > t).count() as f64 / draws.len() as f64;
        let se = (q * (1.0 - q) / draws.len() as f64).sqrt();
        assert!(
            (hits - q).abs() <= 3.0 * se,
            "t={t} exact {q} sampled {hits}"
        );
    }
}

#[test]
fn block_failure_small_cases_by_hand() {
    // n = 3, t = 1: P[X >= 2] = 3 p^2 q + p^3
    let p: f64 = 0.2;
    let exact = 3.0 * p * p * (1.0 - p) + p.powi(3);
    assert!((block_failure_probability(3, 1, p) - exact).abs() < 1e-14);
    assert_eq!(block_failure_probability(3, 3, p), 0.0);
    assert_eq!(block_failure_probability(10, 2, 0.0), 0.0);
    assert_eq!(block_failure_probability(10, 2, 1.0), 1.0);
}

#[test]
fn protection_with_clean_channel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let bits = vec![LayerBits::new(32, (0..1000).map(|_| rng.random()).collect()).unwrap()];
    let chan = ChannelSpec::symmetric(0.0, 3).unwrap();
    for ecc in [EccSpec::Ideal, bch()] {
        let out = simulate_protection(&bits, &[0xffff_0000], &ecc, &chan).unwrap();
        assert_eq!(out.bits, bits);
        assert_eq!(out.failed_blocks, 0);
    }
}

#[test]
fn ideal_protection_restores_masked_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let bits = vec![LayerBits::new(32, (0..5000).map(|_| rng.random()).collect()).unwrap()];
    let chan = ChannelSpec::symmetric(0.3, 3).unwrap();
    let mask = 0x7f80_0000;
    let out = simulate_protection(&bits, &[mask], &EccSpec::Ideal, &chan).unwrap();
    let mut open_flips = 0;
    for (a, b) in bits[0].words().iter().zip(out.bits[0].words()) {
        assert_eq!((a ^ b) & mask, 0);
        open_flips += ((a ^ b) & !mask).count_ones();
    }
    assert!(open_flips > 10_000);
}

#[test]
fn weak_block_code_leaks_errors_into_protected_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let bits = vec![LayerBits::new(32, (0..20_000).map(|_| rng.random()).collect()).unwrap()];
    let ecc = EccSpec::block(255, 239, 2).unwrap();
    let chan = ChannelSpec::symmetric(0.02, 8).unwrap();
    let out = simulate_protection(&bits, &[u32::MAX], &ecc, &chan).unwrap();
    assert_eq!(out.blocks, (20_000u64 * 32).div_ceil(239));
    let q = block_failure_probability(255, 2, 0.02);
    let rate = out.failed_blocks as f64 / out.blocks as f64;
    let se = (q * (1.0 - q) / out.blocks as f64).sqrt();
    assert!((rate - q).abs() < 4.0 * se, "{rate} vs {q}");
    assert_ne!(out.bits, bits);
}

proptest! {
    #[test]
    fn failure_is_monotone(t in 1u32..200, p1 in 0.001f64..0.05, p2 in 0.001f64..0.05) {
        let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
        prop_assert!(block_failure_probability(8191, t, lo) <= block_failure_probability(8191, t, hi) + 1e-15);
        prop_assert!(block_failure_probability(8191, t + 1, lo) <= block_failure_probability(8191, t, lo) + 1e-15);
    }

    #[test]
    fn redundancy_ignores_layer_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes: Vec<usize> = (0..5).map(|_| rng.random_range(1..1000)).collect();
        let masks: Vec<u32> = (0..5).map(|_| rng.random()).collect();
        let a = redundancy(&masks, &sizes, 32, &bch(), 0.01).unwrap();
        let (mut rs, mut rm) = (sizes.clone(), masks.clone());
        rs.reverse();
        rm.reverse();
        let b = redundancy(&rm, &rs, 32, &bch(), 0.01).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn redundancy_is_linear_in_popcount(size in 1usize..10_000, bits in 0u32..33) {
        let mask = if bits == 32 { u32::MAX } else { (1u32 << bits) - 1 };
        let rep = redundancy(&[mask], &[size], 32, &EccSpec::Ideal, 0.01).unwrap();
        let full = EccSpec::Ideal.overhead(0.01).unwrap();
        prop_assert!((rep.r - f64::from(bits) / 32.0 * full).abs() < 1e-15);
    }
}

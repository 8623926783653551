//! Small descriptive statistics used by evaluations and tests.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor `n - 1`); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn std_err(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    std_dev(xs) / (xs.len() as f64).sqrt()
}

/// Standard error of `mean(a) - mean(b)` for independent samples,
/// `sqrt(s_a^2 / n_a + s_b^2 / n_b)`.
pub fn pooled_std_err(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (std_dev(a), std_dev(b));
    (sa * sa / a.len() as f64 + sb * sb / b.len() as f64).sqrt()
}

/// Least-squares non-increasing fit (pool-adjacent-violators).
pub fn isotonic_non_increasing(ys: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(ys.len());
    for &y in ys {
        blocks.push((y, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 2];
            let (s2, n2) = blocks[blocks.len() - 1];
            if s1 / n1 as f64 >= s2 / n2 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s1 + s2, n1 + n2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, n)| std::iter::repeat(s / n as f64).take(n))
        .collect()
}

/// Root-mean-square distance between `ys` and its non-increasing fit.
pub fn isotonic_residual(ys: &[f64]) -> f64 {
    if ys.is_empty() {
        return 0.0;
    }
    let fit = isotonic_non_increasing(ys);
    let ss: f64 = ys.iter().zip(&fit).map(|(y, f)| (y - f) * (y - f)).sum();
    (ss / ys.len() as f64).sqrt()
}

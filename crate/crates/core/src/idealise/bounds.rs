//! Distribution-free sign-count bounds.
//!
//! On a stretch of `m` samples with constant true level `c` and median-zero
//! noise, `#{y_k < c}` is `Bin(m, 1/2)`. The bounds reject with probability at
//! most `alpha_m`, where `alpha_m` splits `alpha` over the dyadic scales up to
//! `n` and over the number of half-overlapping windows of length `m`. Here
//! `n` is the length of the stretch under test, rounded up within its dyadic
//! class (see [`reference_length`]), so the error is controlled per segment.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};

/// Number of dyadic lengths `1, 2, 4, ...` not exceeding `n`.
pub fn dyadic_scales(n: usize) -> usize {
    debug_assert!(n >= 1);
    (usize::BITS - n.leading_zeros()) as usize
}

/// Length whose corrections apply to a tested stretch of `len` samples in a
/// trace of `n`: the longest length with the same number of dyadic scales,
/// capped at `n`.
pub fn reference_length(len: usize, n: usize) -> usize {
    ((1usize << dyadic_scales(len)) - 1).min(n)
}

/// Half-overlapping windows of length `m` in a trace of length `n`.
pub fn window_count(m: usize, n: usize) -> usize {
    (2 * n / m).saturating_sub(1).max(1)
}

/// Per-test level `alpha_m`.
pub fn corrected_alpha(alpha: f64, m: usize, n: usize) -> f64 {
    alpha / (dyadic_scales(n) as f64 * window_count(m, n) as f64)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// `P(Bin(m, 1/2) < q)`.
fn lower_tail(m: usize, q: usize) -> f64 {
    if q == 0 {
        return 0.0;
    }
    Binomial::new(0.5, m as u64)
        .expect("valid binomial")
        .cdf(q as u64 - 1)
}

/// Largest `q <= m/2` with `P(Bin(m, 1/2) < q) <= target`, searched from `guess`.
fn lower_from(m: usize, target: f64, guess: usize) -> usize {
    let cap = m / 2;
    let mut q = guess.min(cap);
    while q > 0 && lower_tail(m, q) > target {
        q -= 1;
    }
    while q < cap && lower_tail(m, q + 1) <= target {
        q += 1;
    }
    q
}

/// `(lower, upper)` for one interval length `m` in a trace of length `n`.
pub fn sign_bounds(alpha: f64, m: usize, n: usize) -> Result<(usize, usize)> {
    check_alpha(alpha)?;
    if m == 0 || m > n {
        return Err(Error::InvalidParam(format!(
            "interval length {m} must lie in 1..={n}"
        )));
    }
    let target = corrected_alpha(alpha, m, n) / 2.0;
    let lower = lower_from(m, target, m / 2);
    Ok((lower, m - lower))
}

/// Bounds for every length `1..=n`, precomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignBounds {
    pub alpha: f64,
    pub n: usize,
    lower: Vec<usize>,
}

impl SignBounds {
    pub fn new(alpha: f64, n: usize) -> Result<Self> {
        check_alpha(alpha)?;
        if n == 0 {
            return Err(Error::EmptyTrace);
        }
        let mut lower = vec![0; n + 1];
        let mut prev = 0;
        for (m, slot) in lower.iter_mut().enumerate().skip(1) {
            let target = corrected_alpha(alpha, m, n) / 2.0;
            prev = lower_from(m, target, prev);
            *slot = prev;
        }
        Ok(Self { alpha, n, lower })
    }

    pub fn lower(&self, m: usize) -> usize {
        self.lower[m]
    }

    pub fn upper(&self, m: usize) -> usize {
        m - self.lower[m]
    }

    /// Whether a test of length `m` can reject anything at all.
    pub fn is_trivial(&self, m: usize) -> bool {
        self.lower[m] == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// `P(Bin(m, 1/2) < q)` by summing the pmf in log space.
    fn tail_by_summation(m: usize, q: usize) -> f64 {
        let ln_fact = |k: usize| (1..=k).map(|x| (x as f64).ln()).sum::<f64>();
        let lm = ln_fact(m);
        (0..q)
            .map(|k| (lm - ln_fact(k) - ln_fact(m - k) - m as f64 * 2f64.ln()).exp())
            .sum()
    }

    #[test]
    fn reference_lengths_stay_in_class() {
        assert_eq!(reference_length(1, 100), 1);
        assert_eq!(reference_length(2, 100), 3);
        assert_eq!(reference_length(3, 100), 3);
        assert_eq!(reference_length(64, 100), 100);
        assert_eq!(reference_length(40, 100), 63);
        for len in 1..300 {
            let r = reference_length(len, 1000);
            assert!(r >= len && dyadic_scales(r) == dyadic_scales(len));
        }
    }

    #[test]
    fn single_sample_is_unconstrained() {
        for alpha in [0.01, 0.1, 0.5, 0.99] {
            assert_eq!(sign_bounds(alpha, 1, 1000).unwrap(), (0, 1));
        }
    }

    #[test]
    fn bounds_match_summation_oracle() {
        let (alpha, m, n) = (0.1, 100, 10_000);
        let (lo, hi) = sign_bounds(alpha, m, n).unwrap();
        let target = alpha / (14.0 * 199.0) / 2.0;
        assert_eq!(dyadic_scales(n), 14);
        assert_eq!(window_count(m, n), 199);
        assert!(tail_by_summation(m, lo) <= target);
        assert!(tail_by_summation(m, lo + 1) > target);
        assert_eq!(hi, m - lo);
        assert!(lo > 20 && lo < 40, "{lo}");
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        assert!(matches!(sign_bounds(0.0, 4, 8), Err(Error::InvalidAlpha(_))));
        assert!(matches!(sign_bounds(1.0, 4, 8), Err(Error::InvalidAlpha(_))));
        assert!(SignBounds::new(f64::NAN, 8).is_err());
    }

    #[test]
    fn table_agrees_with_direct_computation() {
        let n = 700;
        let table = SignBounds::new(0.05, n).unwrap();
        for m in 1..=n {
            let (lo, hi) = sign_bounds(0.05, m, n).unwrap();
            assert_eq!((table.lower(m), table.upper(m)), (lo, hi), "m = {m}");
            assert!(lo <= m / 2 && m / 2 <= hi && hi <= m);
        }
    }

    #[test]
    fn dyadic_bounds_are_monotone() {
        let n = 1 << 14;
        let table = SignBounds::new(0.1, n).unwrap();
        let mut m = 1;
        while 2 * m <= n {
            assert!(table.lower(2 * m) >= table.lower(m));
            assert!(table.upper(2 * m) >= table.upper(m));
            m *= 2;
        }
    }

    #[test]
    fn coverage_under_fair_signs() {
        // A Bernoulli(1/2) count stays inside the bounds at least 1 - alpha_m of the time.
        let (alpha, m, n) = (0.5, 64, 64);
        let (lo, hi) = sign_bounds(alpha, m, n).unwrap();
        let alpha_m = corrected_alpha(alpha, m, n);
        let mut rng = crate::rng::stream(5, 0);
        let reps = 20_000;
        let inside = (0..reps)
            .filter(|_| {
                let c = (0..m).filter(|_| rng.random_bool(0.5)).count();
                (lo..=hi).contains(&c)
            })
            .count();
        let rate = inside as f64 / reps as f64;
        assert!(rate >= 1.0 - alpha_m - 0.005, "{rate} vs {}", 1.0 - alpha_m);
    }
}

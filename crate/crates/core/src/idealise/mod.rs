//! Multiscale quantile segmentation.
//!
//! The fit has the fewest switches such that on every constant stretch, with
//! the first `w = len(taps) - 1` samples after each switch discarded, the
//! number of samples below the fitted level passes a sign test on:
//!
//! * every dyadic window `[i m/2, i m/2 + m)` lying inside the stretch, and
//! * the whole tested stretch.
//!
//! Samples tied with the level may be counted on either side, so for a test
//! on `m` samples with bounds `(lo, hi)` the admissible levels form the closed
//! interval `[y_(lo), y_(hi + 1)]` of order statistics, and a stretch is
//! admissible iff the intersection of these intervals is non-empty.
//! Each stretch is tested at the corrections for its own length class, so
//! longer stretches face stricter window tests. The tests at the corrections
//! for the full trace are the weakest of all; they shrink as the stretch grows
//! and give monotone two-pointer limits that prune the forward and backward
//! dynamic programmes. Among all minimal fits, switch locations minimise the
//! total absolute deviation from the segment levels.

mod bounds;
mod wavelet;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use bounds::{corrected_alpha, dyadic_scales, reference_length, sign_bounds, window_count, SignBounds};
pub use wavelet::WaveletMatrix;

use crate::error::{Error, Result};
use crate::signal::{Recording, StepFunction};

pub const DEFAULT_ALPHA: f64 = 0.1;

/// Constant stretch `[start, end)` in samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Idealisation {
    pub fit: StepFunction,
    pub segments: Vec<Segment>,
    pub alpha: f64,
    pub n_switches: usize,
    pub feasible: bool,
    /// Samples excluded from each test after a switch.
    pub transient: usize,
}

struct SparseTable {
    rows: Vec<Vec<f64>>,
    take_max: bool,
}

impl SparseTable {
    fn new(base: Vec<f64>, take_max: bool) -> Self {
        let pick = |a: f64, b: f64| if take_max { a.max(b) } else { a.min(b) };
        let mut rows = vec![base];
        let mut width = 1;
        while 2 * width <= rows[0].len() {
            let prev = rows.last().expect("non-empty");
            let next = (0..prev.len() - width)
                .map(|i| pick(prev[i], prev[i + width]))
                .collect();
            rows.push(next);
            width *= 2;
        }
        Self { rows, take_max }
    }

    /// Extremum over `l..=r`.
    fn query(&self, l: usize, r: usize) -> f64 {
        let k = (usize::BITS - 1 - (r - l + 1).leading_zeros()) as usize;
        let (a, b) = (self.rows[k][l], self.rows[k][r + 1 - (1 << k)]);
        if self.take_max {
            a.max(b)
        } else {
            a.min(b)
        }
    }
}

/// Window extrema at one dyadic length; tables are shared between length
/// classes with equal bounds.
struct Scale {
    m: usize,
    hop: usize,
    tables: Vec<(SparseTable, SparseTable)>,
    /// Table per length class, `None` where the test is trivial.
    by_class: Vec<Option<usize>>,
}

/// Feasibility oracle for candidate segments.
struct Tester<'a> {
    y: &'a [f64],
    transient: usize,
    wm: WaveletMatrix,
    /// Bounds per length class; the last one covers the full trace.
    classes: Vec<SignBounds>,
    scales: Vec<Scale>,
}

type Interval = (f64, f64);

impl<'a> Tester<'a> {
    fn new(y: &'a [f64], transient: usize, alpha: f64) -> Result<Self> {
        let n = y.len();
        let classes = (1..=dyadic_scales(n))
            .map(|c| SignBounds::new(alpha, reference_length((1 << c) - 1, n)))
            .collect::<Result<Vec<_>>>()?;
        let wm = WaveletMatrix::new(y);
        let mut scales = Vec::new();
        let mut m = 2;
        while m <= n {
            let hop = m / 2;
            let count = (n - m) / hop + 1;
            let mut lowers: Vec<usize> = Vec::new();
            let mut tables = Vec::new();
            let mut by_class = Vec::with_capacity(classes.len());
            for b in &classes {
                if b.n < m || b.is_trivial(m) {
                    by_class.push(None);
                    continue;
                }
                let lower = b.lower(m);
                let idx = match lowers.iter().position(|&l| l == lower) {
                    Some(i) => i,
                    None => {
                        let (lo_k, hi_k) = (lower - 1, b.upper(m));
                        let (mut lo, mut hi) = (Vec::with_capacity(count), Vec::with_capacity(count));
                        for i in 0..count {
                            let s = i * hop;
                            lo.push(wm.quantile(s, s + m, lo_k));
                            hi.push(wm.quantile(s, s + m, hi_k));
                        }
                        tables.push((SparseTable::new(lo, true), SparseTable::new(hi, false)));
                        lowers.push(lower);
                        lowers.len() - 1
                    }
                };
                by_class.push(Some(idx));
            }
            if !tables.is_empty() {
                scales.push(Scale {
                    m,
                    hop,
                    tables,
                    by_class,
                });
            }
            m *= 2;
        }
        Ok(Self {
            y,
            transient,
            wm,
            classes,
            scales,
        })
    }

    fn class_of(len: usize) -> usize {
        dyadic_scales(len) - 1
    }

    /// First tested sample of a segment starting at `s`.
    fn region_start(&self, s: usize) -> usize {
        if s == 0 {
            0
        } else {
            s + self.transient
        }
    }

    /// Window tests of `[a, e)` at the bounds of length class `class`.
    fn dyadic(&self, a: usize, e: usize, class: usize) -> Interval {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        if a >= e {
            return (lo, hi);
        }
        for sc in &self.scales {
            if sc.m > e - a {
                break;
            }
            let Some(t) = sc.by_class[class] else { continue };
            let first = a.div_ceil(sc.hop);
            let last = (e - sc.m) / sc.hop;
            if first <= last {
                let (tl, th) = &sc.tables[t];
                lo = lo.max(tl.query(first, last));
                hi = hi.min(th.query(first, last));
            }
        }
        (lo, hi)
    }

    /// Window tests at the full-trace bounds. These are the weakest, so a
    /// failure rules the segment out at every class.
    fn dyadic_ok(&self, s: usize, e: usize) -> bool {
        let (lo, hi) = self.dyadic(self.region_start(s), e, self.classes.len() - 1);
        lo <= hi
    }

    fn whole(&self, a: usize, e: usize, class: usize) -> Interval {
        let m = e - a;
        let b = &self.classes[class];
        if b.is_trivial(m) {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        (
            self.wm.quantile(a, e, b.lower(m) - 1),
            self.wm.quantile(a, e, b.upper(m)),
        )
    }

    /// Admissible levels `[lo, hi]` for segment `[s, e)`, if any.
    fn admissible(&self, s: usize, e: usize) -> Option<Interval> {
        let a = self.region_start(s);
        if a >= e {
            return Some((f64::NEG_INFINITY, f64::INFINITY));
        }
        let class = Self::class_of(e - a);
        let (dl, dh) = self.dyadic(a, e, class);
        if dl > dh {
            return None;
        }
        let (wl, wh) = self.whole(a, e, class);
        let (lo, hi) = (dl.max(wl), dh.min(wh));
        (lo <= hi).then_some((lo, hi))
    }

    /// Level and absolute-deviation cost of an admissible segment.
    fn level_and_cost(&self, s: usize, e: usize, (lo, hi): Interval) -> (f64, f64) {
        let a = self.region_start(s);
        let level = if a >= e {
            self.wm.median(s, e)
        } else {
            self.wm.median(a, e).clamp(lo, hi)
        };
        (level, self.wm.abs_deviation(s, e, level))
    }

    fn contains(&self, seg: &Segment) -> bool {
        self.admissible(seg.start, seg.end)
            .is_some_and(|(lo, hi)| lo <= seg.level && seg.level <= hi)
            || self.region_start(seg.start) >= seg.end
    }

    fn len(&self) -> usize {
        self.y.len()
    }
}

/// Positions grouped by their DP value, for scanning in increasing value.
#[derive(Default)]
struct Buckets(Vec<Vec<usize>>);

impl Buckets {
    fn push(&mut self, value: usize, pos: usize) {
        if self.0.len() <= value {
            self.0.resize_with(value + 1, Vec::new);
        }
        self.0[value].push(pos);
    }

    fn get(&self, value: usize) -> &[usize] {
        self.0.get(value).map_or(&[], Vec::as_slice)
    }
}

/// `dp[e]`: fewest segments covering `[0, e)`; `s_min[e]`: smallest start
/// whose dyadic tests admit a segment ending at `e`.
fn forward(t: &Tester) -> (Vec<usize>, Vec<usize>) {
    let n = t.len();
    let mut dp = vec![0usize; n + 1];
    let mut s_min = vec![0usize; n + 1];
    let mut buckets = Buckets::default();
    buckets.push(0, 0);
    let mut window: VecDeque<usize> = VecDeque::new();
    let mut p = 0;
    for e in 1..=n {
        while !t.dyadic_ok(p, e) {
            p += 1;
        }
        s_min[e] = p;
        let s_new = e - 1;
        while window.back().is_some_and(|&b| dp[b] >= dp[s_new]) {
            window.pop_back();
        }
        window.push_back(s_new);
        while window.front().is_some_and(|&f| f < p) {
            window.pop_front();
        }
        let k_min = dp[*window.front().expect("e - 1 is always admissible")];
        let mut k = k_min;
        let best = loop {
            let list = buckets.get(k);
            let from = list.partition_point(|&s| s < p);
            let hit = list[from..].iter().rev().find(|&&s| t.admissible(s, e).is_some());
            if hit.is_some() {
                break k;
            }
            k += 1;
            debug_assert!(k <= e);
        };
        dp[e] = best + 1;
        buckets.push(dp[e], e);
    }
    (dp, s_min)
}

/// `back[s]`: fewest segments covering `[s, n)` with a segment starting at `s`.
fn backward(t: &Tester) -> Vec<usize> {
    let n = t.len();
    let mut back = vec![0usize; n + 1];
    let mut buckets = Buckets::default();
    buckets.push(0, n);
    let mut window: VecDeque<usize> = VecDeque::new();
    let mut q = n;
    for s in (0..n).rev() {
        while !t.dyadic_ok(s, q) {
            q -= 1;
        }
        let e_new = s + 1;
        while window.front().is_some_and(|&f| back[f] >= back[e_new]) {
            window.pop_front();
        }
        window.push_front(e_new);
        while window.back().is_some_and(|&b| b > q) {
            window.pop_back();
        }
        let mut k = back[*window.back().expect("s + 1 is always admissible")];
        let best = loop {
            // bucket lists are in decreasing position order
            let list = buckets.get(k);
            let from = list.partition_point(|&e| e > q);
            let hit = list[from..].iter().rev().find(|&&e| t.admissible(s, e).is_some());
            if hit.is_some() {
                break k;
            }
            k += 1;
            debug_assert!(k <= n - s);
        };
        back[s] = best + 1;
        buckets.push(back[s], s);
    }
    back
}

/// Among minimal segmentations, the one with least total absolute deviation.
fn select_switches(t: &Tester, dp: &[usize], back: &[usize], s_min: &[usize]) -> Vec<Segment> {
    let n = t.len();
    let total = dp[n];
    let mut layers: Vec<Vec<usize>> = vec![Vec::new(); total + 1];
    for tau in 0..=n {
        if dp[tau] + back[tau] == total {
            layers[dp[tau]].push(tau);
        }
    }
    // cost and predecessor per node of the current layer
    let mut prev_cost = vec![0.0f64];
    let mut preds: Vec<Vec<(usize, f64)>> = Vec::with_capacity(total);
    for k in 1..=total {
        let (from, to) = (&layers[k - 1], &layers[k]);
        let mut cost = vec![f64::INFINITY; to.len()];
        let mut pred = vec![(usize::MAX, 0.0); to.len()];
        for (j, &e) in to.iter().enumerate() {
            let lo = from.partition_point(|&s| s < s_min[e]);
            for (i, &s) in from.iter().enumerate().skip(lo) {
                if s >= e || !prev_cost[i].is_finite() {
                    if s >= e {
                        break;
                    }
                    continue;
                }
                if let Some(iv) = t.admissible(s, e) {
                    let (level, c) = t.level_and_cost(s, e, iv);
                    let cand = prev_cost[i] + c;
                    if cand < cost[j] {
                        cost[j] = cand;
                        pred[j] = (i, level);
                    }
                }
            }
        }
        preds.push(pred);
        prev_cost = cost;
    }
    let mut segments = Vec::with_capacity(total);
    let mut j = 0;
    for k in (1..=total).rev() {
        let (i, level) = preds[k - 1][j];
        segments.push(Segment {
            start: layers[k - 1][i],
            end: layers[k][j],
            level,
        });
        j = i;
    }
    segments.reverse();
    segments
}

/// Merge neighbours that ended up on the same level.
fn merge_equal(segments: Vec<Segment>) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for seg in segments {
        match out.last_mut() {
            Some(last) if last.level == seg.level => last.end = seg.end,
            _ => out.push(seg),
        }
    }
    out
}

/// Segment the raw samples. Returns the segments and whether each passes its
/// own tests when re-checked.
pub fn segment_samples(y: &[f64], transient: usize, alpha: f64) -> Result<(Vec<Segment>, bool)> {
    if y.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("samples must be finite".into()));
    }
    let t = Tester::new(y, transient, alpha)?;
    let (dp, s_min) = forward(&t);
    let back = backward(&t);
    debug_assert_eq!(dp[y.len()], back[0]);
    let segments = merge_equal(select_switches(&t, &dp, &back, &s_min));
    let feasible = segments.iter().all(|s| t.contains(s));
    Ok((segments, feasible))
}

/// Idealise a recording at error level `alpha`.
pub fn muscle_fit(recording: &Recording, alpha: f64) -> Result<Idealisation> {
    let transient = recording.kernel.transient_samples();
    let (segments, feasible) = segment_samples(&recording.samples, transient, alpha)?;
    let rate = recording.sample_rate;
    let mut breakpoints: Vec<f64> = segments.iter().map(|s| s.start as f64 / rate).collect();
    breakpoints.push(recording.len() as f64 / rate);
    let levels = segments.iter().map(|s| s.level).collect();
    let fit = StepFunction::new(breakpoints, levels)?;
    Ok(Idealisation {
        fit,
        n_switches: segments.len() - 1,
        segments,
        alpha,
        feasible,
        transient,
    })
}

/// Mean over runs of `max(K_hat - K, 0) / max(K_hat, 1)`.
pub fn empirical_fdr(true_k: usize, estimates: &[usize]) -> f64 {
    if estimates.is_empty() {
        return 0.0;
    }
    estimates
        .iter()
        .map(|&k| k.saturating_sub(true_k) as f64 / k.max(1) as f64)
        .sum::<f64>()
        / estimates.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    /// Admissible level interval of `[s, e)` by sorting every test window.
    fn naive_admissible(y: &[f64], s: usize, e: usize, w: usize, alpha: f64) -> Option<(f64, f64)> {
        let n = y.len();
        let a = if s == 0 { 0 } else { s + w };
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        if a >= e {
            return Some((lo, hi));
        }
        let mut windows = vec![(a, e)];
        let mut m = 2;
        while m <= n {
            let hop = m / 2;
            let mut st = 0;
            while st + m <= n {
                if st >= a && st + m <= e {
                    windows.push((st, st + m));
                }
                st += hop;
            }
            m *= 2;
        }
        for (l, r) in windows {
            let (ql, qh) = sign_bounds(alpha, r - l, reference_length(e - a, n)).unwrap();
            if ql == 0 {
                continue;
            }
            let mut v = y[l..r].to_vec();
            v.sort_by(f64::total_cmp);
            lo = lo.max(v[ql - 1]);
            hi = hi.min(v[qh]);
        }
        (lo <= hi).then_some((lo, hi))
    }

    fn naive_min_segments(y: &[f64], w: usize, alpha: f64) -> usize {
        let n = y.len();
        let mut dp = vec![usize::MAX; n + 1];
        dp[0] = 0;
        for e in 1..=n {
            for s in 0..e {
                if dp[s] != usize::MAX && naive_admissible(y, s, e, w, alpha).is_some() {
                    dp[e] = dp[e].min(dp[s] + 1);
                }
            }
        }
        dp[n]
    }

    /// Exhaustive search over all switch sets.
    fn exhaustive_min_segments(y: &[f64], w: usize, alpha: f64) -> usize {
        let n = y.len();
        let mut best = usize::MAX;
        for mask in 0u32..(1 << (n - 1)) {
            let mut cuts = vec![0];
            cuts.extend((1..n).filter(|&i| mask >> (i - 1) & 1 == 1));
            cuts.push(n);
            if cuts
                .windows(2)
                .all(|c| naive_admissible(y, c[0], c[1], w, alpha).is_some())
            {
                best = best.min(cuts.len() - 1);
            }
        }
        best
    }

    fn noisy_steps(levels: &[(usize, f64)], sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::stream(seed, 0);
        let d = Normal::new(0.0, sigma).unwrap();
        levels
            .iter()
            .flat_map(|&(len, c)| std::iter::repeat_n(c, len))
            .map(|c| c + d.sample(&mut rng))
            .collect()
    }

    #[test]
    fn noiseless_constant_has_no_switch() {
        let (segs, feasible) = segment_samples(&[2.5; 300], 3, 0.1).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].level, 2.5);
        assert!(feasible);
    }

    #[test]
    fn clear_step_is_found() {
        let y = noisy_steps(&[(500, 0.0), (500, 1.0)], 0.1, 3);
        let (segs, feasible) = segment_samples(&y, 0, 0.1).unwrap();
        assert!(feasible);
        assert_eq!(segs.len(), 2);
        assert!((segs[1].start as i64 - 500).abs() <= 2);
        assert!(segs[0].level.abs() < 0.05 && (segs[1].level - 1.0).abs() < 0.05);
    }

    #[test]
    fn short_dwells_on_a_ladder_are_resolved() {
        // 16-sample windows are trivial at full-trace corrections here
        let lens = [33usize, 68, 45, 105, 38, 83, 53, 120];
        let steps = [0.0, 1.0, 2.0, 1.0];
        let levels: Vec<(usize, f64)> = (0..96).map(|i| (lens[i % 8], steps[i % 4])).collect();
        let n: usize = levels.iter().map(|l| l.0).sum();
        assert!(SignBounds::new(0.1, n).unwrap().is_trivial(16));
        let y = noisy_steps(&levels, 0.1, 11);
        let (segs, feasible) = segment_samples(&y, 0, 0.1).unwrap();
        assert!(feasible);
        let mut switch = 0;
        let found = levels[..levels.len() - 1]
            .iter()
            .filter(|l| {
                switch += l.0;
                segs.iter().any(|s| (s.start as i64 - switch as i64).abs() <= 2)
            })
            .count();
        assert!(found >= 80, "{found}");
    }

    #[test]
    fn dp_matches_naive_search() {
        for seed in 0..40 {
            let n = 20 + (seed as usize % 21);
            let y = noisy_steps(&[(n / 2, 0.0), (n - n / 2, 0.6)], 0.3, seed);
            for w in [0, 2] {
                for alpha in [0.3, 0.6] {
                    let (segs, feasible) = segment_samples(&y, w, alpha).unwrap();
                    assert!(feasible);
                    assert_eq!(segs.len(), naive_min_segments(&y, w, alpha), "seed {seed}");
                    for s in &segs {
                        let (lo, hi) = naive_admissible(&y, s.start, s.end, w, alpha).unwrap();
                        assert!(lo <= s.level && s.level <= hi);
                    }
                }
            }
        }
    }

    #[test]
    fn dp_matches_exhaustive_search_on_tiny_inputs() {
        for seed in 0..12 {
            let y = noisy_steps(&[(5, 0.0), (4, 1.0), (5, 0.3)], 0.2, 100 + seed);
            let (segs, _) = segment_samples(&y, 1, 0.7).unwrap();
            assert_eq!(segs.len(), exhaustive_min_segments(&y, 1, 0.7));
        }
    }

    #[test]
    fn smaller_alpha_never_adds_switches() {
        for seed in 0..10 {
            let y = noisy_steps(&[(300, 0.0), (40, 0.3), (300, 0.1)], 0.2, seed);
            let mut prev = usize::MAX;
            for alpha in [0.5, 0.2, 0.1, 0.05, 0.01] {
                let k = segment_samples(&y, 2, alpha).unwrap().0.len();
                assert!(k <= prev);
                prev = k;
            }
        }
    }

    #[test]
    fn fdr_formula() {
        assert_eq!(empirical_fdr(2, &[2, 2, 2]), 0.0);
        assert_eq!(empirical_fdr(0, &[1, 0, 0, 0]), 0.25);
        assert_eq!(empirical_fdr(1, &[3]), 2.0 / 3.0);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(segment_samples(&[], 0, 0.1), Err(Error::EmptyTrace)));
        assert!(matches!(
            segment_samples(&[1.0], 0, 1.5),
            Err(Error::InvalidAlpha(_))
        ));
        assert!(segment_samples(&[f64::NAN], 0, 0.1).is_err());
    }
}

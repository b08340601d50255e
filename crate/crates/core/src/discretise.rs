//! Equal-spacing clustering of idealised levels onto a ladder
//! `mu_i = offset + i * spacing`, and the induced open-channel count trace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::StepFunction;
use crate::stats::median;

pub const DEFAULT_GAP_FACTOR: f64 = 3.0;
pub const DEFAULT_MAX_L: usize = 20;

/// Cap on the number of alternating-minimisation restarts per fit.
const MAX_RESTARTS: usize = 200_000;
const MAX_ALTERNATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelLadder {
    pub channels: usize,
    pub offset: f64,
    pub spacing: f64,
    /// Weighted within-group sum of squared deviations.
    pub sse: f64,
}

impl LevelLadder {
    pub fn new(channels: usize, offset: f64, spacing: f64, sse: f64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidParam("ladder needs at least one channel".into()));
        }
        if !(spacing > 0.0) || !spacing.is_finite() || !offset.is_finite() {
            return Err(Error::InvalidParam(format!(
                "ladder spacing must be positive and finite, got {spacing}"
            )));
        }
        Ok(Self {
            channels,
            offset,
            spacing,
            sse,
        })
    }

    pub fn rung(&self, i: usize) -> f64 {
        self.offset + i as f64 * self.spacing
    }

    /// Nearest rung index, clamped to `0..=L`; midpoints go to the lower rung.
    pub fn nearest(&self, x: f64) -> u32 {
        nearest_rung(x, self.offset, self.spacing, self.channels) as u32
    }
}

fn nearest_rung(x: f64, offset: f64, spacing: f64, channels: usize) -> usize {
    let u = (x - offset) / spacing;
    // round half down
    let r = (u - 0.5).ceil();
    if r <= 0.0 {
        0
    } else {
        (r as usize).min(channels)
    }
}

/// Open-channel counts on the sample grid together with the ladder used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTrace {
    values: Vec<u32>,
    ladder: LevelLadder,
}

impl DiscreteTrace {
    pub fn new(values: Vec<u32>, ladder: LevelLadder) -> Result<Self> {
        if let Some(&v) = values.iter().find(|&&v| v as usize > ladder.channels) {
            return Err(Error::InvalidParam(format!(
                "trace value {v} exceeds L = {}",
                ladder.channels
            )));
        }
        Ok(Self { values, ladder })
    }

    /// Unit-spaced ladder at zero; for traces read without conductance information.
    pub fn from_counts(values: Vec<u32>, channels: usize) -> Result<Self> {
        Self::new(values, LevelLadder::new(channels, 0.0, 1.0, 0.0)?)
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn ladder(&self) -> &LevelLadder {
        &self.ladder
    }

    pub fn channels(&self) -> usize {
        self.ladder.channels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Level with its total dwell duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedLevel {
    pub level: f64,
    pub weight: f64,
}

/// Segment levels of a fit weighted by segment duration, equal levels pooled.
pub fn weighted_levels(fit: &StepFunction) -> Vec<WeightedLevel> {
    let mut pairs: Vec<(f64, f64)> = fit
        .levels()
        .iter()
        .zip(fit.breakpoints().windows(2))
        .map(|(&c, w)| (c, w[1] - w[0]))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<WeightedLevel> = Vec::new();
    for (level, weight) in pairs {
        match out.last_mut() {
            Some(last) if last.level == level => last.weight += weight,
            _ => out.push(WeightedLevel { level, weight }),
        }
    }
    out
}

/// A run of sorted levels separated from its neighbours by a wide gap.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGroup {
    pub lo: f64,
    pub hi: f64,
    /// Weighted mean of the member levels.
    pub centre: f64,
    pub weight: f64,
}

/// Largest gap still counted as jitter. Candidate steps between consecutive
/// sorted gaps are those whose upper gap exceeds `gap_factor` times the median
/// gap; the widest such step by ratio is the break, if that ratio also reaches
/// `gap_factor`.
fn gap_threshold(gaps: &[f64], gap_factor: f64) -> Option<f64> {
    let big = gap_factor * median(gaps)?;
    let mut g = gaps.to_vec();
    g.sort_by(f64::total_cmp);
    let (k, ratio) = g
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > big)
        .map(|(k, w)| (k, w[1] / w[0]))
        .fold((0, 0.0f64), |b, (k, r)| if r > b.1 { (k, r) } else { b });
    (ratio >= gap_factor).then(|| g[k])
}

/// Split sorted distinct levels at the natural break between small (jitter)
/// and large (rung) gaps found by [`gap_threshold`].
/// If no step qualifies, or the split leaves groups wider than the gaps
/// between them, every distinct level forms its own group. Light interior
/// groups (filter transients) are dropped.
pub fn level_groups(levels: &[WeightedLevel], gap_factor: f64) -> Result<Vec<LevelGroup>> {
    Ok(grouping(levels, gap_factor)?.0)
}

/// Groups plus whether a jitter/rung break was found.
fn grouping(levels: &[WeightedLevel], gap_factor: f64) -> Result<(Vec<LevelGroup>, bool)> {
    if levels.is_empty() {
        return Err(Error::Empty);
    }
    let mut sorted: Vec<WeightedLevel> = levels.to_vec();
    sorted.sort_by(|a, b| a.level.total_cmp(&b.level));
    sorted.dedup_by(|b, a| {
        if a.level == b.level {
            a.weight += b.weight;
            true
        } else {
            false
        }
    });
    let gaps: Vec<f64> = sorted.windows(2).map(|w| w[1].level - w[0].level).collect();
    if let Some(threshold) = gap_threshold(&gaps, gap_factor) {
        let groups = drop_transient_groups(split_sorted(&sorted, &gaps, threshold));
        if separated(&groups) {
            return Ok((groups, true));
        }
    }
    Ok((split_sorted(&sorted, &gaps, f64::NEG_INFINITY), false))
}

/// Whether every group is narrower than the smallest gap between adjacent
/// groups. A break that leaves a group wider than that (e.g. one stray level
/// far below a dense ladder) is not a jitter/rung break.
fn separated(groups: &[LevelGroup]) -> bool {
    let width = groups.iter().map(|g| g.hi - g.lo).fold(0.0, f64::max);
    groups.windows(2).all(|w| w[1].lo - w[0].hi > width)
}

/// Groups of sorted distinct levels, split at gaps above `threshold`.
fn split_sorted(sorted: &[WeightedLevel], gaps: &[f64], threshold: f64) -> Vec<LevelGroup> {
    let mut groups = Vec::new();
    let mut members: Vec<WeightedLevel> = vec![sorted[0]];
    let close = |members: &[WeightedLevel]| {
        let weight: f64 = members.iter().map(|m| m.weight).sum();
        let centre = if weight > 0.0 {
            members.iter().map(|m| m.level * m.weight).sum::<f64>() / weight
        } else {
            members.iter().map(|m| m.level).sum::<f64>() / members.len() as f64
        };
        LevelGroup {
            lo: members[0].level,
            hi: members[members.len() - 1].level,
            centre,
            weight,
        }
    };
    for (g, next) in gaps.iter().zip(&sorted[1..]) {
        if *g > threshold {
            groups.push(close(&members));
            members.clear();
        }
        members.push(*next);
    }
    groups.push(close(&members));
    groups
}

/// Interior groups lighter than this fraction of their lighter neighbour are
/// filter transients between rungs, not rungs.
const TRANSIENT_WEIGHT_RATIO: f64 = 0.2;

/// Remove transient groups. Occupancy of independent channels is binomial and
/// hence log-concave, so a real interior rung carries at least the weight of
/// its lighter neighbour.
fn drop_transient_groups(groups: Vec<LevelGroup>) -> Vec<LevelGroup> {
    let n = groups.len();
    let transient: Vec<bool> = (0..n)
        .map(|i| {
            i > 0
                && i + 1 < n
                && groups[i].weight < TRANSIENT_WEIGHT_RATIO * groups[i - 1].weight.min(groups[i + 1].weight)
        })
        .collect();
    groups
        .into_iter()
        .zip(transient)
        .filter_map(|(g, t)| (!t).then_some(g))
        .collect()
}

/// Weighted sum `sum w exp(2 pi i f x)` over the levels, as (re, im).
fn lattice_sum(levels: &[WeightedLevel], f: f64) -> (f64, f64) {
    let (mut c, mut s) = (0.0, 0.0);
    for x in levels {
        let phase = std::f64::consts::TAU * f * x.level;
        c += x.weight * phase.cos();
        s += x.weight * phase.sin();
    }
    (c, s)
}

/// Weighted concentration `|sum w exp(2 pi i f x)| / sum w` of the levels
/// on a lattice of frequency `f`.
fn lattice_concentration(levels: &[WeightedLevel], total: f64, f: f64) -> f64 {
    let (c, s) = lattice_sum(levels, f);
    c.hypot(s) / total
}

/// Lattice `phase + k * spacing` fitted to the levels.
#[derive(Debug, Clone, Copy)]
struct Lattice {
    spacing: f64,
    phase: f64,
}

impl Lattice {
    fn rung(&self, x: f64) -> f64 {
        ((x - self.phase) / self.spacing).round()
    }
}

/// Weighted quantile of sorted levels.
fn weighted_quantile(sorted: &[WeightedLevel], total: f64, q: f64) -> f64 {
    let mut acc = 0.0;
    for x in sorted {
        acc += x.weight;
        if acc >= q * total {
            return x.level;
        }
    }
    sorted[sorted.len() - 1].level
}

/// Rung spacing from the periodicity of the levels, for level sets too
/// jittered for the gap rule. Searches lattice frequencies between the decay
/// of the level distribution's envelope (set by its robust spread) and one
/// rung per distinct level (at least `max_l`) over the observed range, and
/// returns the lowest frequency whose concentration is within 5% of the best.
pub fn lattice_spacing(levels: &[WeightedLevel], max_l: usize) -> Option<f64> {
    lattice(levels, max_l).map(|l| l.spacing)
}

fn lattice(levels: &[WeightedLevel], max_l: usize) -> Option<Lattice> {
    let mut pts: Vec<WeightedLevel> = levels.to_vec();
    if pts.iter().all(|x| x.weight <= 0.0) {
        pts.iter_mut().for_each(|x| x.weight = 1.0);
    }
    pts.sort_by(|a, b| a.level.total_cmp(&b.level));
    let total: f64 = pts.iter().map(|x| x.weight).sum();
    let range = pts.last()?.level - pts.first()?.level;
    if !(range > 0.0) || !(total > 0.0) {
        return None;
    }
    let spread = (weighted_quantile(&pts, total, 0.75) - weighted_quantile(&pts, total, 0.25)) / 1.349;
    let f_hi = (max_l.max(pts.len() - 1) as f64 + 0.5) / range;
    // a Gaussian envelope of sd `spread` has |phi| < 0.05 beyond 0.39 / spread
    let f_lo = if spread > 0.0 {
        (0.39 / spread).max(0.5 / range)
    } else {
        0.5 / range
    };
    if f_lo >= f_hi {
        return None;
    }
    let step = 1.0 / (32.0 * range);
    let grid: Vec<f64> = (0..)
        .map(|k| f_lo + k as f64 * step)
        .take_while(|&f| f <= f_hi)
        .collect();
    let r: Vec<f64> = grid
        .iter()
        .map(|&f| lattice_concentration(&pts, total, f))
        .collect();
    let best = r.iter().copied().fold(0.0, f64::max);
    let mut k = r.iter().position(|&v| v >= 0.95 * best)?;
    while k + 1 < r.len() && r[k + 1] > r[k] {
        k += 1;
    }
    // refine on a finer grid around the local maximum
    let (mut f_best, mut r_best) = (grid[k], r[k]);
    for j in -32..=32 {
        let f = grid[k] + f64::from(j) * step / 32.0;
        if f <= 0.0 {
            continue;
        }
        let v = lattice_concentration(&pts, total, f);
        if v > r_best {
            (f_best, r_best) = (f, v);
        }
    }
    let (c, s) = lattice_sum(&pts, f_best);
    Some(Lattice {
        spacing: 1.0 / f_best,
        phase: s.atan2(c) / (std::f64::consts::TAU * f_best),
    })
}

/// Number of channels from the number of level groups, clamped to
/// `1..=max_l`. When the gap rule finds no break among more than two levels,
/// the groups are the lattice rungs spanned by the levels instead, with the
/// lattice from [`lattice_spacing`].
pub fn select_l(levels: &[WeightedLevel], max_l: usize, gap_factor: f64) -> Result<usize> {
    let (groups, broke) = grouping(levels, gap_factor)?;
    let l = match (broke || groups.len() <= 2, lattice(levels, max_l)) {
        (false, Some(lat)) => {
            let span = lat.rung(groups[groups.len() - 1].hi) - lat.rung(groups[0].lo);
            span.max(0.0) as usize
        }
        _ => groups.len().saturating_sub(1),
    };
    Ok(l.clamp(1, max_l.max(1)))
}

/// Like [`select_l`], but counts rungs from a known all-closed `baseline`
/// up to the highest group, using the median spacing between adjacent
/// groups (or the lattice spacing when the gap rule finds no break). Rungs
/// that were never visited are still counted.
pub fn select_l_from_baseline(
    levels: &[WeightedLevel],
    max_l: usize,
    gap_factor: f64,
    baseline: f64,
) -> Result<usize> {
    let (groups, broke) = grouping(levels, gap_factor)?;
    let centres: Vec<f64> = groups.iter().map(|g| g.centre).collect();
    let gaps: Vec<f64> = centres.windows(2).map(|w| w[1] - w[0]).collect();
    let mut top = *centres.last().expect("non-empty");
    let mut delta = median(&gaps);
    if !broke && groups.len() > 2 {
        if let Some(lat) = lattice(levels, max_l) {
            top = lat.phase + lat.rung(groups[groups.len() - 1].hi) * lat.spacing;
            delta = Some(lat.spacing);
        }
    }
    let l = match delta {
        Some(delta) if delta > 0.0 => ((top - baseline) / delta).round().max(0.0) as usize,
        _ => 1,
    };
    Ok(l.clamp(1, max_l.max(1)))
}

/// Weighted SSE of `levels` against a ladder with nearest-rung assignment.
pub fn ladder_sse(levels: &[WeightedLevel], offset: f64, spacing: f64, channels: usize) -> f64 {
    levels
        .iter()
        .map(|x| {
            let r = nearest_rung(x.level, offset, spacing, channels);
            let d = x.level - offset - r as f64 * spacing;
            x.weight * d * d
        })
        .sum()
}

/// Weighted least squares for `(offset, spacing)` given rung labels.
/// With `anchor`, the offset is fixed. `None` if the spacing is not
/// identified or not positive.
pub fn fit_given_labels(
    levels: &[WeightedLevel],
    labels: &[usize],
    anchor: Option<f64>,
) -> Option<(f64, f64)> {
    let (mut sw, mut sa, mut saa, mut sx, mut sax) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, &a) in levels.iter().zip(labels) {
        let a = a as f64;
        sw += x.weight;
        sa += x.weight * a;
        saa += x.weight * a * a;
        sx += x.weight * x.level;
        sax += x.weight * a * x.level;
    }
    let (offset, spacing) = match anchor {
        Some(o) => {
            if saa <= 0.0 {
                return None;
            }
            (o, (sax - o * sa) / saa)
        }
        None => {
            let det = sw * saa - sa * sa;
            if det <= 1e-300 * sw * saa.max(1.0) || det <= 0.0 {
                return None;
            }
            let spacing = (sw * sax - sa * sx) / det;
            ((sx - spacing * sa) / sw, spacing)
        }
    };
    (spacing > 0.0 && spacing.is_finite() && offset.is_finite()).then_some((offset, spacing))
}

fn weighted_sse_labels(levels: &[WeightedLevel], labels: &[usize], o: f64, d: f64) -> f64 {
    levels
        .iter()
        .zip(labels)
        .map(|(x, &a)| {
            let e = x.level - o - a as f64 * d;
            x.weight * e * e
        })
        .sum()
}

/// Alternate nearest-rung assignment and least squares from one start.
fn alternate(
    levels: &[WeightedLevel],
    channels: usize,
    anchor: Option<f64>,
    mut offset: f64,
    mut spacing: f64,
) -> (f64, f64, f64) {
    let mut labels: Vec<usize> = levels
        .iter()
        .map(|x| nearest_rung(x.level, offset, spacing, channels))
        .collect();
    let mut best = (offset, spacing, ladder_sse(levels, offset, spacing, channels));
    for _ in 0..MAX_ALTERNATIONS {
        let Some((o, d)) = fit_given_labels(levels, &labels, anchor) else {
            break;
        };
        let sse_fit = weighted_sse_labels(levels, &labels, o, d);
        if sse_fit < best.2 {
            best = (o, d, sse_fit);
        }
        offset = o;
        spacing = d;
        let next: Vec<usize> = levels
            .iter()
            .map(|x| nearest_rung(x.level, offset, spacing, channels))
            .collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    // report the objective under nearest-rung assignment at the final ladder
    let (o, d, _) = best;
    (o, d, ladder_sse(levels, o, d, channels))
}

/// Minimise `sum_x w(x) (x - mu_{a(x)})^2` over equally spaced ladders with
/// `L + 1` rungs, optionally with the offset pinned to `anchor`.
pub fn equal_spacing_cluster(
    levels: &[WeightedLevel],
    channels: usize,
    anchor: Option<f64>,
) -> Result<LevelLadder> {
    if channels == 0 {
        return Err(Error::InvalidParam("L must be at least 1".into()));
    }
    if levels.iter().any(|x| !x.level.is_finite() || !(x.weight >= 0.0)) {
        return Err(Error::DegenerateInput(
            "levels must be finite with non-negative weights".into(),
        ));
    }
    let mut pts: Vec<WeightedLevel> = levels.to_vec();
    pts.sort_by(|a, b| a.level.total_cmp(&b.level));
    pts.dedup_by(|b, a| {
        if a.level == b.level {
            a.weight += b.weight;
            true
        } else {
            false
        }
    });
    let lo = pts[0].level;
    let hi = pts[pts.len() - 1].level;
    if anchor.is_none() && pts.len() < 2 {
        return Err(Error::DegenerateInput("need at least two distinct levels".into()));
    }
    if let Some(a) = anchor {
        if !a.is_finite() || hi <= a {
            return Err(Error::DegenerateInput(format!(
                "baseline {a} is not below the highest level {hi}"
            )));
        }
    }

    let mut starts: Vec<(f64, f64)> = Vec::new();
    match anchor {
        // rung k at the top level
        Some(a) => {
            for x in &pts {
                if x.level > a {
                    for k in 1..=channels {
                        starts.push((a, (x.level - a) / k as f64));
                    }
                }
            }
        }
        None => {
            // the lowest level sits on rung j and the highest on rung j + k
            let ladders = |p: f64, q: f64, starts: &mut Vec<(f64, f64)>| {
                for k in 1..=channels {
                    let d = (q - p) / k as f64;
                    for j in 0..=channels - k {
                        starts.push((p - j as f64 * d, d));
                    }
                }
            };
            ladders(lo, hi, &mut starts);
            let per_pair = channels * (channels + 1) / 2;
            let pairs = pts.len() * (pts.len() - 1) / 2;
            if pairs * per_pair <= MAX_RESTARTS {
                for p in 0..pts.len() {
                    for q in p + 1..pts.len() {
                        if (p, q) != (0, pts.len() - 1) {
                            ladders(pts[p].level, pts[q].level, &mut starts);
                        }
                    }
                }
            }
        }
    }

    let mut best: Option<(f64, f64, f64)> = None;
    for (o, d) in starts {
        if !(d > 0.0) {
            continue;
        }
        let cand = alternate(&pts, channels, anchor, o, d);
        // strict improvement keeps the earliest start, which anchors rung 0
        // at the lowest level when rungs go unused
        let better = match best {
            None => true,
            Some(b) => cand.2 < b.2 - 1e-12 * (1.0 + b.2.abs()),
        };
        if better {
            best = Some(cand);
        }
    }
    let (offset, spacing, sse) = best.ok_or_else(|| Error::DegenerateInput("no admissible ladder".into()))?;
    LevelLadder::new(channels, offset, spacing, sse)
}

/// Map every sample of the idealised fit to its nearest rung.
pub fn discretise_trace(fit: &StepFunction, ladder: &LevelLadder, sample_rate: f64) -> Result<DiscreteTrace> {
    let bounds = fit.sample_boundaries(sample_rate);
    let n = *bounds.last().expect("non-empty");
    let mut values = Vec::with_capacity(n);
    for (j, &c) in fit.levels().iter().enumerate() {
        let s = ladder.nearest(c);
        values.resize(bounds[j + 1], s);
    }
    DiscreteTrace::new(values, ladder.clone())
}

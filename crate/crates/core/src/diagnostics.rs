//! Model adequacy checks on a count trace: a chi-square test of the Markov
//! property and dwell-time distributions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::discretise::DiscreteTrace;
use crate::error::{Error, Result};

/// Minimum expected count per cell after merging.
const MIN_EXPECTED: f64 = 5.0;

/// Counts of `(S_{k-1}, S_{k+1})` given `S_k = state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub state: u32,
    /// `counts[a][b]`: predecessor `a`, successor `b`.
    pub counts: Vec<Vec<u64>>,
    /// Contribution after merging sparse rows and columns.
    pub statistic: f64,
    pub dof: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovTestResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub contingency: Vec<ContingencyTable>,
}

/// Merge line `from` into line `into` of a row-major table (rows if `rows`).
fn merge_line(t: &mut Vec<Vec<f64>>, rows: bool, from: usize, into: usize) {
    if rows {
        let src = t[from].clone();
        for (d, s) in t[into].iter_mut().zip(src) {
            *d += s;
        }
        t.remove(from);
    } else {
        for row in t.iter_mut() {
            let v = row[from];
            row[into] += v;
            row.remove(from);
        }
    }
}

/// Chi-square independence statistic after merging sparse lines. `None` if
/// fewer than two rows or columns survive.
fn independence_statistic(counts: &[Vec<u64>]) -> Option<(f64, usize)> {
    // drop empty lines first
    let mut t: Vec<Vec<f64>> = counts
        .iter()
        .filter(|r| r.iter().any(|&c| c > 0))
        .map(|r| r.iter().map(|&c| c as f64).collect())
        .collect();
    if t.is_empty() {
        return None;
    }
    let ncol = t[0].len();
    for j in (0..ncol).rev() {
        if t.iter().all(|r| r[j] == 0.0) {
            for r in t.iter_mut() {
                r.remove(j);
            }
        }
    }
    loop {
        let (nr, nc) = (t.len(), t.first().map_or(0, Vec::len));
        if nr < 2 || nc < 2 {
            return None;
        }
        let row_m: Vec<f64> = t.iter().map(|r| r.iter().sum()).collect();
        let col_m: Vec<f64> = (0..nc).map(|j| t.iter().map(|r| r[j]).sum()).collect();
        let total: f64 = row_m.iter().sum();
        let min_expected = row_m.iter().fold(f64::INFINITY, |m, &a| m.min(a))
            * col_m.iter().fold(f64::INFINITY, |m, &b| m.min(b))
            / total;
        if min_expected >= MIN_EXPECTED {
            let mut stat = 0.0;
            for (i, r) in t.iter().enumerate() {
                for (j, &o) in r.iter().enumerate() {
                    let e = row_m[i] * col_m[j] / total;
                    stat += (o - e) * (o - e) / e;
                }
            }
            return Some((stat, (nr - 1) * (nc - 1)));
        }
        // merge the line with the smallest margin into its smaller neighbour
        let argmin = |m: &[f64]| {
            m.iter()
                .enumerate()
                .fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b })
        };
        let (ri, rv) = argmin(&row_m);
        let (ci, cv) = argmin(&col_m);
        let (rows, idx, margins) = if rv <= cv {
            (true, ri, &row_m)
        } else {
            (false, ci, &col_m)
        };
        let into = match (idx.checked_sub(1), (idx + 1 < margins.len()).then_some(idx + 1)) {
            (Some(a), Some(b)) => {
                if margins[a] <= margins[b] {
                    a
                } else {
                    b
                }
            }
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => return None,
        };
        merge_line(&mut t, rows, idx, into);
    }
}

/// Test `P(S_{k+1} | S_k, S_{k-1}) = P(S_{k+1} | S_k)` by chi-square
/// independence of predecessor and successor within each current state;
/// statistics and degrees of freedom add up over states.
pub fn markov_property_test(trace: &DiscreteTrace) -> Result<MarkovTestResult> {
    let v = trace.values();
    if v.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: v.len(),
        });
    }
    let dim = trace.channels() + 1;
    let mut tables = vec![vec![vec![0u64; dim]; dim]; dim];
    for w in v.windows(3) {
        tables[w[1] as usize][w[0] as usize][w[2] as usize] += 1;
    }
    let mut statistic = 0.0;
    let mut dof = 0;
    let mut contingency = Vec::new();
    for (s, counts) in tables.into_iter().enumerate() {
        if counts.iter().flatten().all(|&c| c == 0) {
            continue;
        }
        let (stat, d) = independence_statistic(&counts).unwrap_or((0.0, 0));
        statistic += stat;
        dof += d;
        contingency.push(ContingencyTable {
            state: s as u32,
            counts,
            statistic: stat,
            dof: d,
        });
    }
    if dof == 0 {
        return Err(Error::AllCellsSparse);
    }
    let p_value = ChiSquared::new(dof as f64)
        .expect("positive dof")
        .sf(statistic)
        .clamp(0.0, 1.0);
    Ok(MarkovTestResult {
        statistic,
        dof,
        p_value,
        contingency,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Equal-width histogram over `[0, max]`.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let hi = values.iter().copied().fold(0.0f64, f64::max);
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|k| k as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for &x in values {
        let k = ((x / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellFit {
    pub state: u32,
    /// Dwell durations in seconds.
    pub samples: Vec<f64>,
    /// Exponential rate `1 / mean`, in 1/s.
    pub rate: f64,
    pub histogram: Histogram,
}

/// Maximal runs in `state`, excluding runs that touch either end.
pub fn dwell_runs(values: &[u32], state: u32) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut k = 0;
    while k < values.len() {
        let start = k;
        while k < values.len() && values[k] == values[start] {
            k += 1;
        }
        if values[start] == state && start > 0 && k < values.len() {
            runs.push(k - start);
        }
    }
    runs
}

/// Dwell times in `state` with the exponential rate fit.
pub fn dwell_times(trace: &DiscreteTrace, state: u32, sample_rate: f64) -> Result<DwellFit> {
    if state as usize > trace.channels() {
        return Err(Error::InvalidParam(format!(
            "state {state} exceeds L = {}",
            trace.channels()
        )));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::InvalidParam("sample rate must be positive".into()));
    }
    let samples: Vec<f64> = dwell_runs(trace.values(), state)
        .into_iter()
        .map(|r| r as f64 / sample_rate)
        .collect();
    if samples.is_empty() {
        return Err(Error::NoVisits(state as usize));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let bins = ((samples.len() as f64).sqrt().ceil() as usize).clamp(1, 50);
    Ok(DwellFit {
        state,
        rate: 1.0 / mean,
        histogram: histogram(&samples, bins),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn trace(v: Vec<u32>, l: usize) -> DiscreteTrace {
        DiscreteTrace::from_counts(v, l).unwrap()
    }

    #[test]
    fn interior_dwell_counts() {
        let fit = dwell_times(&trace(vec![0, 1, 1, 0], 1), 1, 1.0).unwrap();
        assert_eq!(fit.samples, vec![2.0]);
        assert_eq!(fit.rate, 0.5);
    }

    #[test]
    fn boundary_runs_are_dropped() {
        assert!(matches!(
            dwell_times(&trace(vec![1, 1, 1], 1), 1, 1.0),
            Err(Error::NoVisits(1))
        ));
        assert!(dwell_times(&trace(vec![1, 1, 1], 1), 2, 1.0).is_err());
    }

    #[test]
    fn geometric_dwell_mean() {
        let p = 0.9;
        let mut rng = crate::rng::stream(1, 0);
        let mut v = Vec::with_capacity(1_000_000);
        let mut s = 0u32;
        for _ in 0..1_000_000 {
            v.push(s);
            if !rng.random_bool(p) {
                s = 1 - s;
            }
        }
        let runs = dwell_runs(&v, 1);
        let mean = runs.iter().sum::<usize>() as f64 / runs.len() as f64;
        assert!((mean - 1.0 / (1.0 - p)).abs() < 0.02 / (1.0 - p), "{mean}");
    }

    #[test]
    fn self_concatenation_doubles_dwells() {
        let v = vec![0, 1, 1, 2, 1, 0, 0, 2, 2, 1, 0];
        for s in 1..=2 {
            let once = dwell_runs(&v, s).len();
            let twice = dwell_runs(&[v.clone(), v.clone()].concat(), s).len();
            assert_eq!(twice, 2 * once);
        }
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.5, 1.0, 1.0, 2.0], 4);
        assert_eq!(h.counts.iter().sum::<u64>(), 5);
        assert_eq!(h.edges.len(), 5);
        assert_eq!(h.counts[3], 1);
    }

    #[test]
    fn fibonacci_mod_three_is_rejected() {
        let mut v = vec![0u32, 1];
        while v.len() < 300 {
            let k = v.len();
            v.push((v[k - 1] + v[k - 2]) % 3);
        }
        let r = markov_property_test(&trace(v, 2)).unwrap();
        assert!(r.p_value < 1e-6, "{}", r.p_value);
    }

    #[test]
    fn period_two_sequence_is_untestable() {
        let v: Vec<u32> = (0..100).map(|k| (k % 2) as u32).collect();
        assert!(matches!(
            markov_property_test(&trace(v, 1)),
            Err(Error::AllCellsSparse)
        ));
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            markov_property_test(&trace(vec![0, 1], 1)),
            Err(Error::TooShort { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn iid_input_is_usually_accepted() {
        let mut rng = crate::rng::stream(9, 0);
        let v: Vec<u32> = (0..10_000).map(|_| u32::from(rng.random_bool(0.5))).collect();
        let r = markov_property_test(&trace(v, 1)).unwrap();
        assert_eq!(r.dof, 2);
        assert!(r.p_value > 0.001);
    }

    #[test]
    fn sparse_lines_are_merged() {
        // one rare predecessor row gets merged, leaving a 2x2 table
        let counts = vec![vec![50, 50, 0], vec![40, 60, 0], vec![1, 0, 0]];
        let (_, dof) = independence_statistic(&counts).unwrap();
        assert_eq!(dof, 1);
    }
}

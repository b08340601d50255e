//! CSV and JSON artifacts.
//!
//! Every CSV may carry a JSON sidecar next to it (`x.csv` -> `x.meta.json`)
//! holding what the columns cannot: sample rate, kernel, ladder, ground truth.
//! Floats are written in shortest round-trip form so reruns are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diagnostics::Histogram;
use crate::discretise::{DiscreteTrace, LevelLadder};
use crate::error::{Error, Result};
use crate::idealise::Idealisation;
use crate::signal::{
    make_kernel, step_from_trace, Kernel, KernelKind, NoiseSpec, Recording, StepFunction, Truth,
};
use crate::vnd::ParamVector;

/// Sidecar path for a CSV artifact.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn time_str(k: usize, rate: f64) -> String {
    format!("{:.9}", k as f64 / rate)
}

/// Run-length encoding `(value, length)` of a count trace.
pub fn run_lengths(values: &[u32]) -> Vec<(u32, usize)> {
    let mut out: Vec<(u32, usize)> = Vec::new();
    for &v in values {
        match out.last_mut() {
            Some((u, n)) if *u == v => *n += 1,
            _ => out.push((v, 1)),
        }
    }
    out
}

fn expand_runs(runs: &[(u32, usize)]) -> Vec<u32> {
    runs.iter()
        .flat_map(|&(v, n)| std::iter::repeat_n(v, n))
        .collect()
}

/// Ground truth in compact form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMeta {
    pub theta: ParamVector,
    pub offset: f64,
    pub spacing: f64,
    /// Open-channel counts as `(value, run length)`.
    pub runs: Vec<(u32, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub sample_rate: f64,
    pub kernel: Kernel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthMeta>,
}

/// Write `time,current` plus the sidecar.
pub fn write_recording(
    path: &Path,
    rec: &Recording,
    noise: Option<&NoiseSpec>,
    seed: Option<u64>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time", "current"])?;
    for (k, y) in rec.samples.iter().enumerate() {
        w.write_record([time_str(k, rec.sample_rate), y.to_string()])?;
    }
    w.flush()?;
    let truth = rec.truth.as_ref().map(|t| TruthMeta {
        theta: t.theta.clone(),
        offset: t.trace.ladder().offset,
        spacing: t.trace.ladder().spacing,
        runs: run_lengths(t.trace.values()),
    });
    write_json(
        &meta_path(path),
        &RecordingMeta {
            sample_rate: rec.sample_rate,
            kernel: rec.kernel.clone(),
            noise: noise.cloned(),
            seed,
            truth,
        },
    )
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

/// Rows of numeric columns, skipping a header line if the first row is not
/// numeric.
fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Option<Vec<f64>> = rec.iter().map(parse_f64).collect();
        match parsed {
            Some(v) => rows.push(v),
            None if i == 0 => continue,
            None => {
                return Err(Error::Parse(format!(
                    "{}: non-numeric row {}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(rows)
}

/// Read a recording from `time,current`, headerless two-column, or
/// single-column CSV. The sample rate comes from `rate`, then the sidecar,
/// then the spacing of the time column; the kernel from `kernel`, then the
/// sidecar, else identity.
pub fn read_recording(path: &Path, rate: Option<f64>, kernel: Option<KernelKind>) -> Result<Recording> {
    let rows = read_numeric_rows(path)?;
    let meta_file = meta_path(path);
    let meta: Option<RecordingMeta> = if meta_file.exists() {
        Some(read_json(&meta_file)?)
    } else {
        None
    };
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) || !(1..=2).contains(&width) {
        return Err(Error::Parse(format!(
            "{}: expected one or two columns per row",
            path.display()
        )));
    }
    let samples: Vec<f64> = rows.iter().map(|r| r[width - 1]).collect();
    let inferred = (width == 2 && rows.len() >= 2)
        .then(|| 1.0 / (rows[1][0] - rows[0][0]))
        .filter(|r| r.is_finite() && *r > 0.0);
    let sample_rate = rate
        .or(meta.as_ref().map(|m| m.sample_rate))
        .or(inferred)
        .ok_or_else(|| Error::InvalidParam("sample rate unknown; pass it explicitly".into()))?;
    let kernel = match (kernel, &meta) {
        (Some(k), _) => make_kernel(k, sample_rate)?,
        (None, Some(m)) if m.kernel.sample_rate == sample_rate => m.kernel.clone(),
        (None, Some(m)) => make_kernel(m.kernel.kind.clone(), sample_rate)?,
        (None, None) => make_kernel(KernelKind::Identity, sample_rate)?,
    };
    let mut rec = Recording::new(samples, sample_rate, kernel)?;
    if let Some(t) = meta.and_then(|m| m.truth) {
        let counts = expand_runs(&t.runs);
        if counts.len() == rec.len() {
            let step = step_from_trace(&counts, t.offset, t.spacing, sample_rate)?;
            let ladder = LevelLadder::new(t.theta.channels(), t.offset, t.spacing, 0.0)?;
            rec.truth = Some(Truth {
                theta: t.theta,
                step,
                trace: DiscreteTrace::new(counts, ladder)?,
            });
        }
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealisationMeta {
    pub sample_rate: f64,
    pub alpha: f64,
    pub n_switches: usize,
    pub feasible: bool,
    pub transient_samples: usize,
}

/// Write `segment_start_time,segment_end_time,level` plus the sidecar.
pub fn write_idealisation(path: &Path, fit: &Idealisation, sample_rate: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["segment_start_time", "segment_end_time", "level"])?;
    for s in &fit.segments {
        w.write_record([
            time_str(s.start, sample_rate),
            time_str(s.end, sample_rate),
            s.level.to_string(),
        ])?;
    }
    w.flush()?;
    write_json(
        &meta_path(path),
        &IdealisationMeta {
            sample_rate,
            alpha: fit.alpha,
            n_switches: fit.n_switches,
            feasible: fit.feasible,
            transient_samples: fit.transient,
        },
    )
}

/// Read an idealisation back as a step function with its sample rate.
pub fn read_idealisation(path: &Path, rate: Option<f64>) -> Result<(StepFunction, f64)> {
    let rows = read_numeric_rows(path)?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != 3) {
        return Err(Error::Parse(format!(
            "{}: expected segment_start_time,segment_end_time,level rows",
            path.display()
        )));
    }
    let meta_file = meta_path(path);
    let sample_rate = match rate {
        Some(r) => r,
        None if meta_file.exists() => read_json::<IdealisationMeta>(&meta_file)?.sample_rate,
        None => {
            return Err(Error::InvalidParam(
                "sample rate unknown; pass it explicitly".into(),
            ))
        }
    };
    let mut breakpoints = vec![rows[0][0]];
    breakpoints.extend(rows.iter().map(|r| r[1]));
    let levels = rows.iter().map(|r| r[2]).collect();
    Ok((StepFunction::new(breakpoints, levels)?, sample_rate))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub sample_rate: f64,
    pub ladder: LevelLadder,
}

/// Write `time,open_channels` plus the ladder sidecar.
pub fn write_discrete_trace(path: &Path, trace: &DiscreteTrace, sample_rate: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time", "open_channels"])?;
    for (k, v) in trace.values().iter().enumerate() {
        w.write_record([time_str(k, sample_rate), v.to_string()])?;
    }
    w.flush()?;
    write_json(
        &meta_path(path),
        &TraceMeta {
            sample_rate,
            ladder: trace.ladder().clone(),
        },
    )
}

/// Read a count trace. `L` comes from `channels`, then the sidecar, else the
/// maximum count observed.
pub fn read_discrete_trace(
    path: &Path,
    rate: Option<f64>,
    channels: Option<usize>,
) -> Result<(DiscreteTrace, f64)> {
    let rows = read_numeric_rows(path)?;
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) || !(1..=2).contains(&width) {
        return Err(Error::Parse(format!(
            "{}: expected time,open_channels rows",
            path.display()
        )));
    }
    let mut values = Vec::with_capacity(rows.len());
    for r in &rows {
        let v = r[width - 1];
        if v < 0.0 || v.fract() != 0.0 || v > f64::from(u32::MAX) {
            return Err(Error::Parse(format!(
                "{}: count {v} is not a non-negative integer",
                path.display()
            )));
        }
        values.push(v as u32);
    }
    let meta_file = meta_path(path);
    let meta: Option<TraceMeta> = if meta_file.exists() {
        Some(read_json(&meta_file)?)
    } else {
        None
    };
    let inferred = (width == 2 && rows.len() >= 2)
        .then(|| 1.0 / (rows[1][0] - rows[0][0]))
        .filter(|r| r.is_finite() && *r > 0.0);
    let sample_rate = rate
        .or(meta.as_ref().map(|m| m.sample_rate))
        .or(inferred)
        .ok_or_else(|| Error::InvalidParam("sample rate unknown; pass it explicitly".into()))?;
    let trace = match (channels, meta) {
        (Some(l), Some(m)) if l == m.ladder.channels => DiscreteTrace::new(values, m.ladder)?,
        (Some(l), _) => DiscreteTrace::from_counts(values, l)?,
        (None, Some(m)) => DiscreteTrace::new(values, m.ladder)?,
        (None, None) => {
            let l = values.iter().copied().max().unwrap_or(0).max(1) as usize;
            DiscreteTrace::from_counts(values, l)?
        }
    };
    Ok((trace, sample_rate))
}

/// Write `bin_left,bin_right,count`.
pub fn write_histogram(path: &Path, h: &Histogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_left", "bin_right", "count"])?;
    for (k, c) in h.counts.iter().enumerate() {
        w.write_record([h.edges[k].to_string(), h.edges[k + 1].to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Write a CSV with the given header and rows of already formatted fields.
pub fn write_table<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(AsRef::as_ref))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idealise::muscle_fit;
    use crate::signal::{synthesize_recording, SynthesisConfig};
    use crate::vnd::InitialState;

    fn simulated() -> (Recording, NoiseSpec) {
        let noise = NoiseSpec::gaussian(0.1);
        let cfg = SynthesisConfig {
            theta: ParamVector::constant(2, 0.95, 0.9).unwrap(),
            n: 300,
            sample_rate: 1000.0,
            offset: 0.0,
            spacing: 1.0,
            kernel: KernelKind::BSpline2,
            noise: noise.clone(),
            init: InitialState::AllClosed,
        };
        (synthesize_recording(&cfg, 3).unwrap(), noise)
    }

    #[test]
    fn recording_round_trip_keeps_samples_and_truth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        let (rec, noise) = simulated();
        write_recording(&path, &rec, Some(&noise), Some(3)).unwrap();
        let back = read_recording(&path, None, None).unwrap();
        assert_eq!(back, rec);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("time,current\n0.000000000,"));
    }

    #[test]
    fn headerless_and_single_column_input() {
        let dir = tempfile::tempdir().unwrap();
        let two = dir.path().join("two.csv");
        std::fs::write(&two, "0.0,1.5\n0.5,2.5\n1.0,3.5\n").unwrap();
        let rec = read_recording(&two, None, None).unwrap();
        assert_eq!(rec.samples, vec![1.5, 2.5, 3.5]);
        assert_eq!(rec.sample_rate, 2.0);

        let one = dir.path().join("one.csv");
        std::fs::write(&one, "current\n1\n2\n").unwrap();
        assert!(read_recording(&one, None, None).is_err());
        let rec = read_recording(&one, Some(19_530.0), None).unwrap();
        assert_eq!(rec.sample_rate, 19_530.0);
    }

    #[test]
    fn garbage_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "time,current\n0,1\nx,y\n").unwrap();
        assert!(matches!(
            read_recording(&p, Some(1.0), None),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn idealisation_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ideal.csv");
        let (rec, _) = simulated();
        let fit = muscle_fit(&rec, 0.1).unwrap();
        write_idealisation(&path, &fit, rec.sample_rate).unwrap();
        let (step, rate) = read_idealisation(&path, None).unwrap();
        assert_eq!(rate, rec.sample_rate);
        assert_eq!(step.levels(), fit.fit.levels());
        assert_eq!(step.sample_boundaries(rate), fit.fit.sample_boundaries(rate));
    }

    #[test]
    fn discrete_trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let ladder = LevelLadder::new(3, 0.5, 2.0, 0.1).unwrap();
        let t = DiscreteTrace::new(vec![0, 1, 3, 2, 2], ladder).unwrap();
        write_discrete_trace(&path, &t, 10.0).unwrap();
        let (back, rate) = read_discrete_trace(&path, None, None).unwrap();
        assert_eq!(back, t);
        assert_eq!(rate, 10.0);
        std::fs::remove_file(meta_path(&path)).unwrap();
        let (back, _) = read_discrete_trace(&path, None, None).unwrap();
        assert_eq!(back.channels(), 3);
    }

    #[test]
    fn run_length_round_trip() {
        let v = vec![0, 0, 1, 2, 2, 2, 0];
        assert_eq!(run_lengths(&v), vec![(0, 2), (1, 1), (2, 3), (0, 1)]);
        assert_eq!(expand_runs(&run_lengths(&v)), v);
    }
}

//! End-to-end analysis of one recording: idealise, choose `L`, cluster,
//! discretise, fit, classify.
//!
//! Each stage is exposed separately so callers can persist intermediate
//! artifacts before a later stage fails.

use serde::{Deserialize, Serialize};

use crate::diagnostics::Histogram;
use crate::discretise::{
    discretise_trace, equal_spacing_cluster, select_l, select_l_from_baseline, weighted_levels,
    DiscreteTrace, LevelLadder, WeightedLevel, DEFAULT_GAP_FACTOR, DEFAULT_MAX_L,
};
use crate::error::{Error, Result};
use crate::idealise::{muscle_fit, Idealisation, DEFAULT_ALPHA};
use crate::infer::{cooperativity_report, empirical_transition_matrix, mde_fit, MdeFit, MdeOptions};
use crate::signal::{Recording, StepFunction, Truth};
use crate::stats::l2_distance;
use crate::vnd::{CooperativityReport, DEFAULT_RATIO_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub alpha: f64,
    /// Fixed channel count; skips selection.
    pub channels: Option<usize>,
    pub max_l: usize,
    pub gap_factor: f64,
    /// Known all-closed conductance; pins the ladder offset.
    pub baseline: Option<f64>,
    pub mde: MdeOptions,
    pub tolerance: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            channels: None,
            max_l: DEFAULT_MAX_L,
            gap_factor: DEFAULT_GAP_FACTOR,
            baseline: None,
            mde: MdeOptions::default(),
            tolerance: DEFAULT_RATIO_TOLERANCE,
        }
    }
}

impl PipelineOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if self.channels == Some(0) || self.max_l == 0 {
            return Err(Error::InvalidParam("L must be at least 1".into()));
        }
        if !(self.gap_factor > 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParam(
                "gap factor must be positive and tolerance non-negative".into(),
            ));
        }
        if self.baseline.is_some_and(|b| !b.is_finite()) {
            return Err(Error::InvalidParam("baseline must be finite".into()));
        }
        Ok(())
    }
}

/// Output of the discretisation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretised {
    pub levels: Vec<WeightedLevel>,
    pub channels: usize,
    pub ladder: LevelLadder,
    pub trace: DiscreteTrace,
}

/// Output of the inference stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Inferred {
    pub fit: MdeFit,
    pub report: CooperativityReport,
}

/// Accuracy of each stage against simulated ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMetrics {
    pub true_channels: usize,
    /// `sum_k (fit(t_k) - f(t_k))^2` over samples.
    pub level_sse: f64,
    pub true_switches: usize,
    /// Fraction of samples whose count differs from the truth.
    pub mismatch_rate: f64,
    /// `||theta_hat - theta*||_2`; absent when the channel counts differ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_l2_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub idealisation: Idealisation,
    pub discretised: Discretised,
    pub inferred: Inferred,
    pub metrics: Option<TruthMetrics>,
}

/// Serializable summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub channels: usize,
    pub ladder: LevelLadder,
    pub alpha: f64,
    pub n_switches: usize,
    pub idealisation_feasible: bool,
    pub objective: f64,
    pub cooperativity: CooperativityReport,
    pub mde: crate::infer::MdeDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthMetrics>,
}

impl PipelineRun {
    pub fn report(&self) -> PipelineReport {
        PipelineReport {
            channels: self.discretised.channels,
            ladder: self.discretised.ladder.clone(),
            alpha: self.idealisation.alpha,
            n_switches: self.idealisation.n_switches,
            idealisation_feasible: self.idealisation.feasible,
            objective: self.inferred.fit.objective,
            cooperativity: self.inferred.report.clone(),
            mde: self.inferred.fit.diagnostics.clone(),
            truth: self.metrics.clone(),
        }
    }
}

pub fn idealise_stage(rec: &Recording, opts: &PipelineOptions) -> Result<Idealisation> {
    opts.validate()?;
    muscle_fit(rec, opts.alpha)
}

/// Choose `L` (unless fixed), fit the ladder and map samples to counts.
pub fn discretise_stage(fit: &StepFunction, sample_rate: f64, opts: &PipelineOptions) -> Result<Discretised> {
    opts.validate()?;
    let levels = weighted_levels(fit);
    let channels = match (opts.channels, opts.baseline) {
        (Some(l), _) => l,
        (None, Some(b)) => select_l_from_baseline(&levels, opts.max_l, opts.gap_factor, b)?,
        (None, None) => select_l(&levels, opts.max_l, opts.gap_factor)?,
    };
    let ladder = equal_spacing_cluster(&levels, channels, opts.baseline)?;
    let trace = discretise_trace(fit, &ladder, sample_rate)?;
    Ok(Discretised {
        levels,
        channels,
        ladder,
        trace,
    })
}

pub fn infer_stage(trace: &DiscreteTrace, opts: &PipelineOptions) -> Result<Inferred> {
    opts.validate()?;
    let q_hat = empirical_transition_matrix(trace)?;
    let fit = mde_fit(&q_hat, trace.channels(), &opts.mde)?;
    let report = cooperativity_report(&fit.theta_hat, opts.tolerance);
    Ok(Inferred { fit, report })
}

pub fn truth_metrics(
    truth: &Truth,
    idealisation: &Idealisation,
    trace: &DiscreteTrace,
    inferred: Option<&Inferred>,
    sample_rate: f64,
) -> Result<TruthMetrics> {
    let n = trace.len();
    let fitted = idealisation.fit.sample(sample_rate, n)?;
    let actual = truth.step.sample(sample_rate, n)?;
    let level_sse = fitted.iter().zip(&actual).map(|(a, b)| (a - b) * (a - b)).sum();
    let mismatches = trace
        .values()
        .iter()
        .zip(truth.trace.values())
        .filter(|(a, b)| a != b)
        .count();
    let theta_l2_error = inferred
        .filter(|inf| inf.fit.theta_hat.channels() == truth.theta.channels())
        .map(|inf| l2_distance(&inf.fit.theta_hat.to_flat(), &truth.theta.to_flat()));
    Ok(TruthMetrics {
        true_channels: truth.theta.channels(),
        level_sse,
        true_switches: truth.step.change_points(),
        mismatch_rate: mismatches as f64 / n.max(1) as f64,
        theta_l2_error,
    })
}

/// Run every stage after idealisation.
pub fn run_from_idealisation(
    rec: &Recording,
    idealisation: Idealisation,
    opts: &PipelineOptions,
) -> Result<PipelineRun> {
    let discretised = discretise_stage(&idealisation.fit, rec.sample_rate, opts)?;
    let inferred = infer_stage(&discretised.trace, opts)?;
    let metrics = rec
        .truth
        .as_ref()
        .map(|t| {
            truth_metrics(
                t,
                &idealisation,
                &discretised.trace,
                Some(&inferred),
                rec.sample_rate,
            )
        })
        .transpose()?;
    Ok(PipelineRun {
        idealisation,
        discretised,
        inferred,
        metrics,
    })
}

pub fn run_pipeline(rec: &Recording, opts: &PipelineOptions) -> Result<PipelineRun> {
    let idealisation = idealise_stage(rec, opts)?;
    run_from_idealisation(rec, idealisation, opts)
}

/// One run per fixed `L`, sharing the idealisation.
pub fn l_sweep(
    rec: &Recording,
    ls: &[usize],
    opts: &PipelineOptions,
) -> Result<Vec<(usize, Result<PipelineRun>)>> {
    let idealisation = idealise_stage(rec, opts)?;
    Ok(ls
        .iter()
        .map(|&l| {
            let o = PipelineOptions {
                channels: Some(l),
                ..opts.clone()
            };
            (l, run_from_idealisation(rec, idealisation.clone(), &o))
        })
        .collect())
}

/// Duration-weighted histogram of idealised levels, counted in samples,
/// over `[min level, max level]`.
pub fn level_histogram(idealisation: &Idealisation, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let segs = &idealisation.segments;
    let lo = segs.iter().map(|s| s.level).fold(f64::INFINITY, f64::min);
    let hi = segs.iter().map(|s| s.level).fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for s in segs {
        let k = (((s.level - lo) / width) as usize).min(bins - 1);
        counts[k] += (s.end - s.start) as u64;
    }
    Histogram { edges, counts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize_recording, KernelKind, NoiseSpec, SynthesisConfig};
    use crate::vnd::{InitialState, ParamVector};

    fn recording(noise: f64, seed: u64) -> Recording {
        let cfg = SynthesisConfig {
            theta: ParamVector::new(2, vec![0.998, 0.996], vec![0.996, 0.998]).unwrap(),
            n: 10_000,
            sample_rate: 10_000.0,
            offset: 0.0,
            spacing: 1.0,
            kernel: KernelKind::BSpline2,
            noise: NoiseSpec::gaussian(noise),
            init: InitialState::AllClosed,
        };
        synthesize_recording(&cfg, seed).unwrap()
    }

    #[test]
    fn low_noise_run_recovers_the_trace() {
        let rec = recording(0.05, 1);
        let run = run_pipeline(&rec, &PipelineOptions::default()).unwrap();
        let m = run.metrics.unwrap();
        assert_eq!(run.discretised.channels, 2);
        assert!(m.mismatch_rate < 0.1, "{m:?}");
        assert!(m.theta_l2_error.unwrap() < 0.02, "{m:?}");
    }

    #[test]
    fn fixed_l_skips_selection() {
        let rec = recording(0.05, 2);
        let opts = PipelineOptions {
            channels: Some(3),
            ..Default::default()
        };
        let run = run_pipeline(&rec, &opts).unwrap();
        assert_eq!(run.discretised.channels, 3);
        assert_eq!(run.inferred.fit.theta_hat.channels(), 3);
        assert!(run.metrics.unwrap().theta_l2_error.is_none());
    }

    #[test]
    fn sweep_yields_one_run_per_l() {
        let rec = recording(0.05, 3);
        let runs = l_sweep(&rec, &[2, 3, 4], &PipelineOptions::default()).unwrap();
        let ls: Vec<usize> = runs.iter().map(|(l, _)| *l).collect();
        assert_eq!(ls, vec![2, 3, 4]);
        for (l, r) in runs {
            assert_eq!(r.unwrap().discretised.channels, l);
        }
    }

    #[test]
    fn level_histogram_counts_every_sample() {
        let rec = recording(0.05, 4);
        let ideal = muscle_fit(&rec, 0.1).unwrap();
        let h = level_histogram(&ideal, 30);
        assert_eq!(h.counts.iter().sum::<u64>(), rec.len() as u64);
    }

    #[test]
    fn invalid_options_are_rejected() {
        let rec = recording(0.05, 5);
        let bad = PipelineOptions {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(matches!(run_pipeline(&rec, &bad), Err(Error::InvalidAlpha(_))));
        let bad = PipelineOptions {
            channels: Some(0),
            ..Default::default()
        };
        assert!(run_pipeline(&rec, &bad).is_err());
    }
}

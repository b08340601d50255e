//! Monte-Carlo studies: parameter errors on two-channel scenarios, channel
//! count and ratio estimates for twenty channels, and the over-segmentation
//! rate of the idealiser on constant recordings.
//!
//! Repetitions run in parallel on the current rayon pool. Each repetition
//! draws from its own derived seed and results are kept in repetition order,
//! so outputs do not depend on the thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretise::select_l_from_baseline;
use crate::error::{Error, Result};
use crate::idealise::{empirical_fdr, muscle_fit, DEFAULT_ALPHA};
use crate::pipeline::{idealise_stage, run_from_idealisation, PipelineOptions, PipelineRun};
use crate::rng::derive_seed;
use crate::signal::{
    make_kernel, measurement_noise, synthesize_recording, KernelKind, NoiseSpec, Recording, SynthesisConfig,
};
use crate::stats::{mean, median};
use crate::vnd::{InitialState, ParamVector, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StudyId {
    #[serde(rename = "fig-errors-zero")]
    ErrorsZero,
    #[serde(rename = "fig-errors-pos")]
    ErrorsPos,
    #[serde(rename = "fig-errors-neg")]
    ErrorsNeg,
    #[serde(rename = "fig-L-hist")]
    LHist,
    #[serde(rename = "fig-ratio-hist")]
    RatioHist,
    #[serde(rename = "fdr-check")]
    FdrCheck,
}

impl StudyId {
    pub const ALL: [StudyId; 6] = [
        StudyId::ErrorsZero,
        StudyId::ErrorsPos,
        StudyId::ErrorsNeg,
        StudyId::LHist,
        StudyId::RatioHist,
        StudyId::FdrCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StudyId::ErrorsZero => "fig-errors-zero",
            StudyId::ErrorsPos => "fig-errors-pos",
            StudyId::ErrorsNeg => "fig-errors-neg",
            StudyId::LHist => "fig-L-hist",
            StudyId::RatioHist => "fig-ratio-hist",
            StudyId::FdrCheck => "fdr-check",
        }
    }

    pub fn default_reps(self) -> usize {
        match self {
            StudyId::ErrorsZero | StudyId::ErrorsPos | StudyId::ErrorsNeg => 100,
            StudyId::LHist | StudyId::RatioHist => 300,
            StudyId::FdrCheck => 500,
        }
    }

    pub fn default_n(self) -> usize {
        match self {
            StudyId::ErrorsZero | StudyId::ErrorsPos | StudyId::ErrorsNeg => 1200,
            StudyId::LHist | StudyId::RatioHist => 100_000,
            StudyId::FdrCheck => 2000,
        }
    }

    /// Salt mixed into the base seed so studies do not share draws.
    fn salt(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for StudyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StudyId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownStudy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Zero,
    Positive,
    Negative,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Zero, Scenario::Positive, Scenario::Negative];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Zero => "zero",
            Scenario::Positive => "positive",
            Scenario::Negative => "negative",
        }
    }

    pub fn verdict(self) -> Verdict {
        match self {
            Scenario::Zero => Verdict::Zero,
            Scenario::Positive => Verdict::Positive,
            Scenario::Negative => Verdict::Negative,
        }
    }

    /// Two-channel parameters `(lambda_0, lambda_1, eta_1, eta_2)`.
    pub fn theta_two(self) -> ParamVector {
        let flat = match self {
            Scenario::Zero => [0.99, 0.99, 0.99, 0.99],
            Scenario::Positive => [0.99, 0.985, 0.985, 0.99],
            Scenario::Negative => [0.985, 0.99, 0.99, 0.985],
        };
        ParamVector::from_flat(&flat).expect("valid scenario")
    }

    /// Parameters for `channels` channels: all 0.99 (zero); 0.98 except the
    /// two end entries (positive); 0.98 at `lambda_0` and on the upper half
    /// of the eta entries (negative).
    pub fn theta_many(self, channels: usize) -> ParamVector {
        let l = channels;
        let mut flat = vec![0.99; 2 * l];
        match self {
            Scenario::Zero => {}
            Scenario::Positive => flat[1..2 * l - 1].iter_mut().for_each(|x| *x = 0.98),
            Scenario::Negative => {
                flat[0] = 0.98;
                flat[l + 1..].iter_mut().for_each(|x| *x = 0.98);
            }
        }
        ParamVector::from_flat(&flat).expect("valid scenario")
    }
}

/// Noise laws of the two-channel scenarios, in panel order.
pub fn noise_models() -> [(&'static str, NoiseSpec); 3] {
    [
        ("cauchy", NoiseSpec::cauchy(0.05)),
        ("mixture", NoiseSpec::mixture(0.85, 0.1, 0.05)),
        ("gaussian", NoiseSpec::gaussian(0.1)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub seed: u64,
    /// Repetitions; the study default when absent.
    pub reps: Option<usize>,
    /// Recording length; the study default when absent.
    pub n: Option<usize>,
    pub sample_rate: f64,
    pub kernel: KernelKind,
    pub alpha: f64,
    /// Significance levels of the over-segmentation check.
    pub fdr_alphas: Vec<f64>,
    /// Upper bound for the selected channel count.
    pub max_l: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            reps: None,
            n: None,
            sample_rate: 10_000.0,
            kernel: KernelKind::BesselFir {
                order: 4,
                cutoff_hz: 1000.0,
            },
            alpha: DEFAULT_ALPHA,
            fdr_alphas: vec![0.05, 0.1],
            max_l: 30,
        }
    }
}

impl StudyConfig {
    fn reps(&self, id: StudyId) -> usize {
        self.reps.unwrap_or(id.default_reps())
    }

    fn n(&self, id: StudyId) -> usize {
        self.n.unwrap_or(id.default_n())
    }

    fn seed(&self, id: StudyId, rep: usize) -> u64 {
        derive_seed(derive_seed(self.seed, id.salt()), rep as u64)
    }

    pub fn synthesis(&self, theta: ParamVector, n: usize, noise: NoiseSpec) -> SynthesisConfig {
        SynthesisConfig {
            theta,
            n,
            sample_rate: self.sample_rate,
            offset: 0.0,
            spacing: 1.0,
            kernel: self.kernel.clone(),
            noise,
            init: InitialState::AllClosed,
        }
    }
}

/// One repetition of a two-channel error study under one noise law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRep {
    pub noise: String,
    pub rep: usize,
    pub seed: u64,
    pub l2_error: Option<f64>,
    pub verdict: Option<Verdict>,
    pub n_switches: Option<usize>,
    pub error: Option<String>,
}

/// Full pipeline with `L = 2` fixed and the closed level known, for each
/// repetition and noise law. Noise laws share the chain and noise stream of a
/// repetition.
pub fn errors_study(scenario: Scenario, cfg: &StudyConfig) -> Vec<ErrorRep> {
    let id = match scenario {
        Scenario::Zero => StudyId::ErrorsZero,
        Scenario::Positive => StudyId::ErrorsPos,
        Scenario::Negative => StudyId::ErrorsNeg,
    };
    let n = cfg.n(id);
    let opts = PipelineOptions {
        alpha: cfg.alpha,
        channels: Some(2),
        baseline: Some(0.0),
        ..Default::default()
    };
    let jobs: Vec<(&'static str, NoiseSpec, usize)> = noise_models()
        .into_iter()
        .flat_map(|(name, spec)| (0..cfg.reps(id)).map(move |rep| (name, spec.clone(), rep)))
        .collect();
    jobs.into_par_iter()
        .map(|(name, noise, rep)| {
            let seed = cfg.seed(id, rep);
            let synth = cfg.synthesis(scenario.theta_two(), n, noise);
            let run = synthesize_recording(&synth, seed).and_then(|rec| run_pipeline_on(&rec, &opts));
            let mut out = ErrorRep {
                noise: name.to_string(),
                rep,
                seed,
                l2_error: None,
                verdict: None,
                n_switches: None,
                error: None,
            };
            match run {
                Ok(run) => {
                    out.l2_error = run.metrics.as_ref().and_then(|m| m.theta_l2_error);
                    out.verdict = Some(run.inferred.report.verdict);
                    out.n_switches = Some(run.idealisation.n_switches);
                }
                Err(e) => out.error = Some(e.to_string()),
            }
            out
        })
        .collect()
}

fn run_pipeline_on(rec: &Recording, opts: &PipelineOptions) -> Result<PipelineRun> {
    let ideal = idealise_stage(rec, opts)?;
    run_from_idealisation(rec, ideal, opts)
}

/// Cooperativity ratios of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSet {
    pub lambda: Vec<f64>,
    pub eta_open: Vec<f64>,
    pub eta_close: Vec<f64>,
}

/// One repetition of a many-channel study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManyChannelRep {
    pub scenario: Scenario,
    pub rep: usize,
    pub seed: u64,
    pub true_channels: usize,
    /// Distinct level groups minus one.
    pub l_hat: Option<usize>,
    /// Rungs from the known closed level to the top group.
    pub l_hat_baseline: Option<usize>,
    pub n_switches: Option<usize>,
    pub true_switches: usize,
    pub ratios: Option<RatioSet>,
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
}

/// Simulate `L = 20` channels, select `L` from the idealised levels, and fit.
pub fn many_channel_study(scenario: Scenario, cfg: &StudyConfig, channels: usize) -> Vec<ManyChannelRep> {
    let id = StudyId::LHist;
    let n = cfg.n(id);
    let opts = PipelineOptions {
        alpha: cfg.alpha,
        max_l: cfg.max_l,
        ..Default::default()
    };
    let salt = Scenario::ALL.iter().position(|&s| s == scenario).expect("listed") as u64;
    (0..cfg.reps(id))
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(cfg.seed(id, rep), salt);
            let synth = cfg.synthesis(scenario.theta_many(channels), n, NoiseSpec::gaussian(0.1));
            let mut out = ManyChannelRep {
                scenario,
                rep,
                seed,
                true_channels: channels,
                l_hat: None,
                l_hat_baseline: None,
                n_switches: None,
                true_switches: 0,
                ratios: None,
                verdict: None,
                error: None,
            };
            let rec = match synthesize_recording(&synth, seed) {
                Ok(rec) => rec,
                Err(e) => {
                    out.error = Some(e.to_string());
                    return out;
                }
            };
            out.true_switches = rec.truth.as_ref().map_or(0, |t| t.step.change_points());
            match run_pipeline_on(&rec, &opts) {
                Ok(run) => {
                    out.l_hat = Some(run.discretised.channels);
                    out.l_hat_baseline =
                        select_l_from_baseline(&run.discretised.levels, opts.max_l, opts.gap_factor, 0.0)
                            .ok();
                    out.n_switches = Some(run.idealisation.n_switches);
                    let r = &run.inferred.report;
                    out.ratios = Some(RatioSet {
                        lambda: r.lambda_ratios.clone(),
                        eta_open: r.eta_open_ratios.clone(),
                        eta_close: r.eta_close_ratios.clone(),
                    });
                    out.verdict = Some(r.verdict);
                }
                Err(e) => out.error = Some(e.to_string()),
            }
            out
        })
        .collect()
}

/// Switches detected on one constant recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrRep {
    pub alpha: f64,
    pub rep: usize,
    pub seed: u64,
    pub k_hat: usize,
}

/// Idealise constant recordings (Gaussian noise, `sigma = 0.1`) at each
/// level in `cfg.fdr_alphas`; every level sees the same recordings.
pub fn fdr_study(cfg: &StudyConfig) -> Result<Vec<FdrRep>> {
    let id = StudyId::FdrCheck;
    let n = cfg.n(id);
    let kernel = make_kernel(cfg.kernel.clone(), cfg.sample_rate)?;
    let noise = NoiseSpec::gaussian(0.1);
    let per_rep: Vec<Result<Vec<FdrRep>>> = (0..cfg.reps(id))
        .into_par_iter()
        .map(|rep| {
            let seed = cfg.seed(id, rep);
            let (samples, _) = measurement_noise(&noise, &kernel, n, seed)?;
            let rec = Recording::new(samples, cfg.sample_rate, kernel.clone())?;
            cfg.fdr_alphas
                .iter()
                .map(|&alpha| {
                    Ok(FdrRep {
                        alpha,
                        rep,
                        seed,
                        k_hat: muscle_fit(&rec, alpha)?.n_switches,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_rep {
        out.extend(r?);
    }
    out.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then(a.rep.cmp(&b.rep)));
    Ok(out)
}

/// CSV table produced by a study.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub id: StudyId,
    pub tables: Vec<Table>,
    pub summary: serde_json::Value,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub reps: usize,
    pub failures: usize,
    pub median_l2: Option<f64>,
    pub mean_l2: Option<f64>,
    pub verdicts: BTreeMap<String, usize>,
    pub correct_fraction: f64,
}

pub fn summarise_errors(scenario: Scenario, reps: &[ErrorRep]) -> BTreeMap<String, ErrorSummary> {
    let mut out = BTreeMap::new();
    for (name, _) in noise_models() {
        let cell: Vec<&ErrorRep> = reps.iter().filter(|r| r.noise == name).collect();
        let errs: Vec<f64> = cell.iter().filter_map(|r| r.l2_error).collect();
        let mut verdicts = BTreeMap::new();
        for v in cell.iter().filter_map(|r| r.verdict) {
            *verdicts.entry(v.to_string()).or_insert(0) += 1;
        }
        let correct = cell
            .iter()
            .filter(|r| r.verdict == Some(scenario.verdict()))
            .count();
        out.insert(
            name.to_string(),
            ErrorSummary {
                reps: cell.len(),
                failures: cell.iter().filter(|r| r.error.is_some()).count(),
                median_l2: median(&errs),
                mean_l2: mean(&errs),
                verdicts,
                correct_fraction: correct as f64 / cell.len().max(1) as f64,
            },
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManyChannelSummary {
    pub reps: usize,
    pub failures: usize,
    /// Estimated `L` to number of repetitions.
    pub l_hat_counts: BTreeMap<usize, usize>,
    pub l_hat_baseline_counts: BTreeMap<usize, usize>,
    /// Fraction of repetitions with `L - 3 <= L_hat <= L`.
    pub within_three: f64,
    pub median_ratio: Option<f64>,
    pub median_lambda_ratio: Option<f64>,
    pub median_eta_open_ratio: Option<f64>,
    pub median_eta_close_ratio: Option<f64>,
}

pub fn summarise_many(reps: &[ManyChannelRep]) -> ManyChannelSummary {
    let mut l_hat_counts = BTreeMap::new();
    let mut l_hat_baseline_counts = BTreeMap::new();
    for r in reps {
        if let Some(l) = r.l_hat {
            *l_hat_counts.entry(l).or_insert(0) += 1;
        }
        if let Some(l) = r.l_hat_baseline {
            *l_hat_baseline_counts.entry(l).or_insert(0) += 1;
        }
    }
    let within = reps
        .iter()
        .filter(|r| {
            r.l_hat
                .is_some_and(|l| l <= r.true_channels && l + 3 >= r.true_channels)
        })
        .count();
    let pooled = |f: fn(&RatioSet) -> &Vec<f64>| {
        let v: Vec<f64> = reps
            .iter()
            .filter_map(|r| r.ratios.as_ref())
            .flat_map(|s| f(s).clone())
            .collect();
        median(&v)
    };
    let all: Vec<f64> = reps
        .iter()
        .filter_map(|r| r.ratios.as_ref())
        .flat_map(|s| s.lambda.iter().chain(&s.eta_open).chain(&s.eta_close).copied())
        .collect();
    ManyChannelSummary {
        reps: reps.len(),
        failures: reps.iter().filter(|r| r.error.is_some()).count(),
        l_hat_counts,
        l_hat_baseline_counts,
        within_three: within as f64 / reps.len().max(1) as f64,
        median_ratio: median(&all),
        median_lambda_ratio: pooled(|s| &s.lambda),
        median_eta_open_ratio: pooled(|s| &s.eta_open),
        median_eta_close_ratio: pooled(|s| &s.eta_close),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrSummary {
    pub alpha: f64,
    pub reps: usize,
    pub empirical_fdr: f64,
    pub mean_k_hat: f64,
}

pub fn summarise_fdr(reps: &[FdrRep], alphas: &[f64]) -> Vec<FdrSummary> {
    alphas
        .iter()
        .map(|&alpha| {
            let ks: Vec<usize> = reps
                .iter()
                .filter(|r| r.alpha == alpha)
                .map(|r| r.k_hat)
                .collect();
            FdrSummary {
                alpha,
                reps: ks.len(),
                empirical_fdr: empirical_fdr(0, &ks),
                mean_k_hat: ks.iter().sum::<usize>() as f64 / ks.len().max(1) as f64,
            }
        })
        .collect()
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    study: StudyId,
    config: &'a StudyConfig,
    reps: usize,
    n: usize,
    results: T,
}

fn summary<T: Serialize>(id: StudyId, cfg: &StudyConfig, results: T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(Summary {
        study: id,
        config: cfg,
        reps: cfg.reps(id),
        n: cfg.n(id),
        results,
    })?)
}

fn many_channel_runs(cfg: &StudyConfig) -> Vec<ManyChannelRep> {
    Scenario::ALL
        .into_iter()
        .flat_map(|s| many_channel_study(s, cfg, 20))
        .collect()
}

fn many_summaries(runs: &[ManyChannelRep]) -> BTreeMap<&'static str, ManyChannelSummary> {
    Scenario::ALL
        .into_iter()
        .map(|s| {
            let reps: Vec<ManyChannelRep> = runs.iter().filter(|r| r.scenario == s).cloned().collect();
            (s.as_str(), summarise_many(&reps))
        })
        .collect()
}

/// Run a study and tabulate its results.
pub fn run_study(id: StudyId, cfg: &StudyConfig) -> Result<StudyOutput> {
    match id {
        StudyId::ErrorsZero | StudyId::ErrorsPos | StudyId::ErrorsNeg => {
            let scenario = match id {
                StudyId::ErrorsZero => Scenario::Zero,
                StudyId::ErrorsPos => Scenario::Positive,
                _ => Scenario::Negative,
            };
            let reps = errors_study(scenario, cfg);
            let rows = reps
                .iter()
                .map(|r| {
                    vec![
                        r.noise.clone(),
                        r.rep.to_string(),
                        r.seed.to_string(),
                        opt(r.l2_error),
                        opt(r.verdict),
                        opt(r.n_switches),
                        r.error.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            Ok(StudyOutput {
                id,
                tables: vec![Table {
                    name: id.as_str().to_string(),
                    header: vec![
                        "noise",
                        "rep",
                        "seed",
                        "l2_error",
                        "verdict",
                        "n_switches",
                        "error",
                    ],
                    rows,
                }],
                summary: summary(id, cfg, summarise_errors(scenario, &reps))?,
            })
        }
        StudyId::LHist => {
            let runs = many_channel_runs(cfg);
            let rows = runs
                .iter()
                .map(|r| {
                    vec![
                        r.scenario.as_str().to_string(),
                        r.rep.to_string(),
                        r.seed.to_string(),
                        opt(r.l_hat),
                        opt(r.l_hat_baseline),
                        opt(r.n_switches),
                        r.true_switches.to_string(),
                        r.error.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            Ok(StudyOutput {
                id,
                tables: vec![Table {
                    name: id.as_str().to_string(),
                    header: vec![
                        "scenario",
                        "rep",
                        "seed",
                        "l_hat",
                        "l_hat_baseline",
                        "n_switches",
                        "true_switches",
                        "error",
                    ],
                    rows,
                }],
                summary: summary(id, cfg, many_summaries(&runs))?,
            })
        }
        StudyId::RatioHist => {
            let runs = many_channel_runs(cfg);
            let mut rows = Vec::new();
            for r in &runs {
                let Some(set) = &r.ratios else { continue };
                let kinds = [
                    ("lambda", &set.lambda),
                    ("eta_open", &set.eta_open),
                    ("eta_close", &set.eta_close),
                ];
                for (kind, values) in kinds {
                    for (i, v) in values.iter().enumerate() {
                        rows.push(vec![
                            r.scenario.as_str().to_string(),
                            r.rep.to_string(),
                            opt(r.l_hat),
                            kind.to_string(),
                            (i + 1).to_string(),
                            v.to_string(),
                        ]);
                    }
                }
            }
            Ok(StudyOutput {
                id,
                tables: vec![Table {
                    name: id.as_str().to_string(),
                    header: vec!["scenario", "rep", "l_hat", "kind", "r", "ratio"],
                    rows,
                }],
                summary: summary(id, cfg, many_summaries(&runs))?,
            })
        }
        StudyId::FdrCheck => {
            let reps = fdr_study(cfg)?;
            let rows = reps
                .iter()
                .map(|r| {
                    vec![
                        r.alpha.to_string(),
                        r.rep.to_string(),
                        r.seed.to_string(),
                        r.k_hat.to_string(),
                    ]
                })
                .collect();
            Ok(StudyOutput {
                id,
                tables: vec![Table {
                    name: id.as_str().to_string(),
                    header: vec!["alpha", "rep", "seed", "k_hat"],
                    rows,
                }],
                summary: summary(id, cfg, summarise_fdr(&reps, &cfg.fdr_alphas))?,
            })
        }
    }
}

/// Write `<table>.csv` files and `<id>.summary.json` into `dir`.
pub fn write_study(dir: &Path, out: &StudyOutput) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in &out.tables {
        let path = dir.join(format!("{}.csv", t.name));
        crate::io::write_table(&path, &t.header, &t.rows)?;
        written.push(path);
    }
    let path = dir.join(format!("{}.summary.json", out.id));
    crate::io::write_json(&path, &out.summary)?;
    written.push(path);
    Ok(written)
}

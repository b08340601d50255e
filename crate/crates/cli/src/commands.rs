//! Subcommand bodies. Each writes its artifacts into the output directory as
//! soon as they exist, so a failing stage leaves the earlier ones behind.

use std::path::{Path, PathBuf};

use idc_core::diagnostics::{dwell_times, markov_property_test, Histogram};
use idc_core::discretise::DiscreteTrace;
use idc_core::idealise::Idealisation;
use idc_core::infer::MdeDiagnostics;
use idc_core::io;
use idc_core::pipeline::{
    discretise_stage, idealise_stage, infer_stage, level_histogram, run_from_idealisation, truth_metrics,
    Inferred, PipelineOptions, PipelineRun,
};
use idc_core::signal::{synthesize_recording, KernelKind, NoiseSpec, Recording, SynthesisConfig};
use idc_core::studies::{run_study, write_study, Scenario, StudyConfig, StudyId, StudyOutput};
use idc_core::vnd::{CooperativityReport, ParamVector};
use idc_core::Error;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::plot::{self, Series};

const DEFAULT_LEVEL_BINS: usize = 100;

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn plots(&self) -> bool {
        self.cfg.plots.unwrap_or(false)
    }

    fn announce(&self, path: &Path) {
        println!("{}", path.display());
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let p = self.path(name);
        io::write_json(&p, value)?;
        self.announce(&p);
        Ok(())
    }

    fn svg(&self, name: &str, svg: &str) -> CliResult<()> {
        let p = self.path(name);
        plot::write(&p, svg)?;
        self.announce(&p);
        Ok(())
    }

    /// Snapshot of the resolved configuration for `command`.
    pub fn snapshot(&self, command: &str) -> CliResult<()> {
        std::fs::create_dir_all(&self.out)?;
        let p = self.path(&format!("{command}.config.toml"));
        std::fs::write(&p, self.cfg.to_toml()?)?;
        self.announce(&p);
        Ok(())
    }
}

fn default_kernel() -> KernelKind {
    KernelKind::BesselFir {
        order: 4,
        cutoff_hz: 1000.0,
    }
}

fn scenario(name: &str) -> CliResult<Scenario> {
    Scenario::ALL
        .into_iter()
        .find(|s| s.as_str() == name)
        .ok_or_else(|| CliError::Config(format!("unknown scenario '{name}' (zero, positive, negative)")))
}

/// Parameters from `theta`, else the named scenario for `L` channels.
fn simulation_theta(cfg: &RunConfig) -> CliResult<ParamVector> {
    if let Some(flat) = &cfg.theta {
        let theta = ParamVector::from_flat(flat).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.channels.is_some_and(|l| l != theta.channels()) {
            return Err(CliError::Config(format!(
                "theta has {} channels but L = {}",
                theta.channels(),
                cfg.channels.unwrap_or_default()
            )));
        }
        return Ok(theta);
    }
    let s = scenario(cfg.scenario.as_deref().unwrap_or("zero"))?;
    Ok(match cfg.channels.unwrap_or(2) {
        0 => return Err(CliError::Config("L must be at least 1".into())),
        2 => s.theta_two(),
        l => s.theta_many(l),
    })
}

/// Fill command-specific defaults; runs before the shared defaults.
pub fn resolve(command: &str, cfg: &mut RunConfig) {
    match command {
        "simulate" => {
            cfg.n.get_or_insert(1200);
            cfg.sample_rate.get_or_insert(10_000.0);
            cfg.kernel.get_or_insert_with(default_kernel);
            cfg.noise.get_or_insert_with(|| NoiseSpec::gaussian(0.1));
            cfg.offset.get_or_insert(0.0);
            cfg.spacing.get_or_insert(1.0);
            if cfg.theta.is_none() {
                cfg.scenario.get_or_insert_with(|| "zero".into());
            }
        }
        "reproduce" => {
            let d = StudyConfig::default();
            cfg.sample_rate.get_or_insert(d.sample_rate);
            cfg.kernel.get_or_insert(d.kernel);
            cfg.max_l.get_or_insert(d.max_l);
        }
        _ => {}
    }
}

pub fn simulate(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let theta = simulation_theta(cfg)?;
    let synth = SynthesisConfig {
        theta,
        n: cfg.n.unwrap_or(1200),
        sample_rate: cfg.sample_rate.unwrap_or(10_000.0),
        offset: cfg.offset.unwrap_or(0.0),
        spacing: cfg.spacing.unwrap_or(1.0),
        kernel: cfg.kernel.clone().unwrap_or_else(default_kernel),
        noise: cfg.noise.clone().unwrap_or_else(|| NoiseSpec::gaussian(0.1)),
        init: Default::default(),
    };
    let seed = cfg.seed.unwrap_or(0);
    let rec = synthesize_recording(&synth, seed).map_err(|e| match e {
        Error::InvalidParam(_)
        | Error::InvalidTheta { .. }
        | Error::OutOfRange { .. }
        | Error::WrongArity { .. } => CliError::Config(e.to_string()),
        e => e.into(),
    })?;
    let path = ctx.path("recording.csv");
    io::write_recording(&path, &rec, Some(&synth.noise), Some(seed))?;
    ctx.announce(&path);
    if ctx.plots() {
        ctx.svg("recording.svg", &trace_svg(&rec, None))?;
    }
    Ok(())
}

fn read_input_recording(ctx: &Context) -> CliResult<Recording> {
    let input = ctx.cfg.require_input()?;
    Ok(io::read_recording(
        input,
        ctx.cfg.sample_rate,
        ctx.cfg.kernel.clone(),
    )?)
}

fn trace_svg(rec: &Recording, ideal: Option<&Idealisation>) -> String {
    let xs: Vec<f64> = (0..rec.len()).map(|k| rec.time(k)).collect();
    let mut series = vec![Series::Line {
        xs: &xs,
        ys: &rec.samples,
        color: "grey",
    }];
    if let Some(i) = ideal {
        series.push(Series::Step {
            xs: i.fit.breakpoints(),
            ys: i.fit.levels(),
            color: "crimson",
        });
    }
    plot::line_plot("recording and idealisation", "time (s)", "current", &series)
}

fn histogram_svg(title: &str, xlabel: &str, h: &Histogram, overlay: Option<&[f64]>) -> String {
    let counts: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    plot::bar_plot(title, xlabel, &h.edges, &counts, overlay)
}

fn write_idealisation_artifacts(ctx: &Context, rec: &Recording, ideal: &Idealisation) -> CliResult<()> {
    let path = ctx.path("idealisation.csv");
    io::write_idealisation(&path, ideal, rec.sample_rate)?;
    ctx.announce(&path);
    let hist = level_histogram(ideal, ctx.cfg.bins.unwrap_or(DEFAULT_LEVEL_BINS));
    let path = ctx.path("level-histogram.csv");
    io::write_histogram(&path, &hist)?;
    ctx.announce(&path);
    if ctx.plots() {
        ctx.svg("idealisation.svg", &trace_svg(rec, Some(ideal)))?;
        ctx.svg(
            "level-histogram.svg",
            &histogram_svg("idealised levels (samples)", "level", &hist, None),
        )?;
    }
    Ok(())
}

pub fn idealise(ctx: &Context) -> CliResult<()> {
    let opts = ctx.cfg.pipeline_options()?;
    let rec = read_input_recording(ctx)?;
    let ideal = idealise_stage(&rec, &opts)?;
    write_idealisation_artifacts(ctx, &rec, &ideal)
}

fn write_trace(ctx: &Context, name: &str, trace: &DiscreteTrace, rate: f64) -> CliResult<()> {
    let path = ctx.path(name);
    io::write_discrete_trace(&path, trace, rate)?;
    ctx.announce(&path);
    Ok(())
}

pub fn discretise(ctx: &Context) -> CliResult<()> {
    let opts = ctx.cfg.pipeline_options()?;
    let input = ctx.cfg.require_input()?;
    let (fit, rate) = io::read_idealisation(input, ctx.cfg.sample_rate)?;
    let d = discretise_stage(&fit, rate, &opts)?;
    write_trace(ctx, "discrete.csv", &d.trace, rate)
}

/// Inference output for a count trace.
#[derive(Serialize)]
struct InferReport<'a> {
    channels: usize,
    objective: f64,
    theta_hat: &'a ParamVector,
    cooperativity: &'a CooperativityReport,
    mde: &'a MdeDiagnostics,
}

fn infer_report(inf: &Inferred) -> InferReport<'_> {
    InferReport {
        channels: inf.fit.theta_hat.channels(),
        objective: inf.fit.objective,
        theta_hat: &inf.fit.theta_hat,
        cooperativity: &inf.report,
        mde: &inf.fit.diagnostics,
    }
}

pub fn infer(ctx: &Context) -> CliResult<()> {
    let opts = ctx.cfg.pipeline_options()?;
    let input = ctx.cfg.require_input()?;
    let (trace, _) = io::read_discrete_trace(input, ctx.cfg.sample_rate, ctx.cfg.channels)?;
    let inf = infer_stage(&trace, &opts)?;
    ctx.json("report.json", &infer_report(&inf))
}

#[derive(Serialize)]
struct SweepEntry {
    #[serde(rename = "L")]
    channels: usize,
    verdict: Option<String>,
    objective: Option<f64>,
    error: Option<String>,
}

pub fn pipeline(ctx: &Context) -> CliResult<()> {
    let opts = ctx.cfg.pipeline_options()?;
    let rec = read_input_recording(ctx)?;
    if let Some(ls) = ctx.cfg.l_sweep.clone() {
        return sweep(ctx, &rec, &ls, &opts);
    }
    let ideal = idealise_stage(&rec, &opts)?;
    write_idealisation_artifacts(ctx, &rec, &ideal)?;
    let disc = discretise_stage(&ideal.fit, rec.sample_rate, &opts)?;
    write_trace(ctx, "discrete.csv", &disc.trace, rec.sample_rate)?;
    let inferred = match infer_stage(&disc.trace, &opts) {
        Ok(inf) => inf,
        Err(e) => {
            if let Some(t) = &rec.truth {
                let m = truth_metrics(t, &ideal, &disc.trace, None, rec.sample_rate)?;
                ctx.json("metrics.json", &m)?;
            }
            return Err(e.into());
        }
    };
    let metrics = rec
        .truth
        .as_ref()
        .map(|t| truth_metrics(t, &ideal, &disc.trace, Some(&inferred), rec.sample_rate))
        .transpose()?;
    let run = PipelineRun {
        idealisation: ideal,
        discretised: disc,
        inferred,
        metrics,
    };
    ctx.json("report.json", &run.report())
}

fn sweep(ctx: &Context, rec: &Recording, ls: &[usize], opts: &PipelineOptions) -> CliResult<()> {
    let ideal = idealise_stage(rec, opts)?;
    write_idealisation_artifacts(ctx, rec, &ideal)?;
    let mut entries = Vec::new();
    let mut failed = None;
    for &l in ls {
        let o = PipelineOptions {
            channels: Some(l),
            ..opts.clone()
        };
        match run_from_idealisation(rec, ideal.clone(), &o) {
            Ok(run) => {
                write_trace(
                    ctx,
                    &format!("discrete-L{l}.csv"),
                    &run.discretised.trace,
                    rec.sample_rate,
                )?;
                ctx.json(&format!("report-L{l}.json"), &run.report())?;
                entries.push(SweepEntry {
                    channels: l,
                    verdict: Some(run.inferred.report.verdict.to_string()),
                    objective: Some(run.inferred.fit.objective),
                    error: None,
                });
            }
            Err(e) => {
                entries.push(SweepEntry {
                    channels: l,
                    verdict: None,
                    objective: None,
                    error: Some(e.to_string()),
                });
                failed.get_or_insert(e);
            }
        }
    }
    ctx.json("sweep.json", &entries)?;
    match failed {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn read_input_trace(ctx: &Context) -> CliResult<(DiscreteTrace, f64)> {
    let input = ctx.cfg.require_input()?;
    Ok(io::read_discrete_trace(
        input,
        ctx.cfg.sample_rate,
        ctx.cfg.channels,
    )?)
}

pub fn markov_test(ctx: &Context) -> CliResult<()> {
    let (trace, _) = read_input_trace(ctx)?;
    let result = markov_property_test(&trace)?;
    ctx.json("markov-test.json", &result)
}

#[derive(Serialize)]
struct DwellEntry {
    state: u32,
    visits: usize,
    mean_seconds: Option<f64>,
    rate: Option<f64>,
    error: Option<String>,
}

pub fn dwell(ctx: &Context) -> CliResult<()> {
    let (trace, rate) = read_input_trace(ctx)?;
    let states = ctx
        .cfg
        .states
        .clone()
        .unwrap_or_else(|| (0..=trace.channels() as u32).collect());
    let mut entries = Vec::new();
    for s in states {
        match dwell_times(&trace, s, rate) {
            Ok(fit) => {
                let n = fit.samples.len() as f64;
                // expected counts per bin under the fitted exponential law
                let expected: Vec<f64> = fit
                    .histogram
                    .edges
                    .windows(2)
                    .map(|w| n * ((-fit.rate * w[0]).exp() - (-fit.rate * w[1]).exp()))
                    .collect();
                let rows: Vec<Vec<String>> = fit
                    .histogram
                    .edges
                    .windows(2)
                    .zip(&fit.histogram.counts)
                    .zip(&expected)
                    .map(|((w, c), e)| vec![w[0].to_string(), w[1].to_string(), c.to_string(), e.to_string()])
                    .collect();
                let path = ctx.path(&format!("dwell-state-{s}.csv"));
                io::write_table(&path, &["bin_left", "bin_right", "count", "expected"], &rows)?;
                ctx.announce(&path);
                if ctx.plots() {
                    ctx.svg(
                        &format!("dwell-state-{s}.svg"),
                        &histogram_svg(
                            &format!("dwell times in state {s}"),
                            "dwell (s)",
                            &fit.histogram,
                            Some(&expected),
                        ),
                    )?;
                }
                entries.push(DwellEntry {
                    state: s,
                    visits: fit.samples.len(),
                    mean_seconds: Some(1.0 / fit.rate),
                    rate: Some(fit.rate),
                    error: None,
                });
            }
            Err(e @ (Error::NoVisits(_) | Error::InvalidParam(_))) => entries.push(DwellEntry {
                state: s,
                visits: 0,
                mean_seconds: None,
                rate: None,
                error: Some(e.to_string()),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    ctx.json("dwell.json", &entries)
}

fn study_config(cfg: &RunConfig) -> StudyConfig {
    let d = StudyConfig::default();
    StudyConfig {
        seed: cfg.seed.unwrap_or(d.seed),
        reps: cfg.reps,
        n: cfg.n,
        sample_rate: cfg.sample_rate.unwrap_or(d.sample_rate),
        kernel: cfg.kernel.clone().unwrap_or(d.kernel),
        alpha: cfg.alpha.unwrap_or(d.alpha),
        fdr_alphas: d.fdr_alphas,
        max_l: cfg.max_l.unwrap_or(d.max_l),
    }
}

pub fn reproduce(ctx: &Context, study: &str) -> CliResult<()> {
    let id: StudyId = study.parse()?;
    let out = run_study(id, &study_config(&ctx.cfg))?;
    for p in write_study(&ctx.out, &out)? {
        ctx.announce(&p);
    }
    if ctx.plots() {
        study_plots(ctx, &out)?;
    }
    Ok(())
}

/// Histogram of `values` with `bins` equal bins over their range.
fn range_histogram(values: &[f64], bins: usize) -> Histogram {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let lo = if lo.is_finite() { lo } else { 0.0 };
    let edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    Histogram { edges, counts }
}

fn study_plots(ctx: &Context, out: &StudyOutput) -> CliResult<()> {
    let Some(table) = out.tables.first() else {
        return Ok(());
    };
    let col = |name: &str| table.header.iter().position(|h| *h == name);
    let (value_col, label, integer) = match out.id {
        StudyId::LHist => (col("l_hat"), "estimated L", true),
        StudyId::RatioHist => (col("ratio"), "ratio", false),
        StudyId::FdrCheck => return Ok(()),
        _ => (col("l2_error"), "l2 error", false),
    };
    let group_col = col("scenario").or(col("noise"));
    let (Some(vc), Some(gc)) = (value_col, group_col) else {
        return Ok(());
    };
    let mut groups: Vec<&str> = table.rows.iter().map(|r| r[gc].as_str()).collect();
    groups.dedup();
    for g in groups {
        let values: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r[gc] == g)
            .filter_map(|r| r[vc].parse().ok())
            .collect();
        if values.is_empty() {
            continue;
        }
        let h = if integer {
            let hi = values.iter().copied().fold(0.0, f64::max) as usize;
            let edges: Vec<f64> = (0..=hi + 1).map(|k| k as f64 - 0.5).collect();
            let mut counts = vec![0u64; hi + 1];
            values.iter().for_each(|&v| counts[v as usize] += 1);
            Histogram { edges, counts }
        } else {
            range_histogram(&values, 30)
        };
        ctx.svg(
            &format!("{}-{g}.svg", out.id),
            &histogram_svg(&format!("{} ({g})", out.id), label, &h, None),
        )?;
    }
    Ok(())
}

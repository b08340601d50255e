//! End-to-end runs on simulated recordings and file round trips.

use idc_core::diagnostics::{dwell_times, markov_property_test};
use idc_core::discretise::DiscreteTrace;
use idc_core::io::{read_discrete_trace, read_recording, write_discrete_trace, write_recording};
use idc_core::pipeline::{l_sweep, run_pipeline, PipelineOptions};
use idc_core::signal::{synthesize_recording, KernelKind, NoiseSpec, SynthesisConfig};
use idc_core::vnd::{InitialState, ParamVector};

fn two_channel(n: usize, noise: NoiseSpec) -> SynthesisConfig {
    SynthesisConfig {
        theta: ParamVector::from_flat(&[0.99, 0.985, 0.985, 0.99]).unwrap(),
        n,
        sample_rate: 1e4,
        offset: 0.0,
        spacing: 1.0,
        kernel: KernelKind::BesselFir {
            order: 4,
            cutoff_hz: 1000.0,
        },
        noise,
        init: InitialState::AllClosed,
    }
}

#[test]
fn two_channel_recording_is_recovered() {
    let rec = synthesize_recording(&two_channel(50_000, NoiseSpec::gaussian(0.1)), 4).unwrap();
    let run = run_pipeline(&rec, &PipelineOptions::default()).unwrap();
    assert_eq!(run.discretised.channels, 2);
    assert!(run.idealisation.feasible);
    let ladder = &run.discretised.ladder;
    assert!((ladder.spacing - 1.0).abs() < 0.1, "{ladder:?}");
    let m = run.metrics.as_ref().expect("simulated truth");
    assert_eq!(m.true_channels, 2);
    // the fit trails each true switch by the filter delay
    assert!(m.mismatch_rate < 0.3, "{}", m.mismatch_rate);
    let err = m.theta_l2_error.expect("same L");
    assert!(err < 0.05, "{err}");
    assert!(run.inferred.fit.objective.is_finite());
}

#[test]
fn heavy_tailed_noise_does_not_break_the_fit() {
    let rec = synthesize_recording(&two_channel(20_000, NoiseSpec::cauchy(0.05)), 9).unwrap();
    let run = run_pipeline(&rec, &PipelineOptions::default()).unwrap();
    assert_eq!(run.discretised.channels, 2);
    assert!(run.metrics.unwrap().mismatch_rate < 0.25);
}

#[test]
fn fixed_channel_count_skips_selection() {
    let rec = synthesize_recording(&two_channel(5_000, NoiseSpec::gaussian(0.1)), 1).unwrap();
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
fn sweep_shares_one_idealisation() {
    let rec = synthesize_recording(&two_channel(5_000, NoiseSpec::gaussian(0.1)), 2).unwrap();
    let runs = l_sweep(&rec, &[2, 3, 4], &PipelineOptions::default()).unwrap();
    assert_eq!(runs.iter().map(|r| r.0).collect::<Vec<_>>(), vec![2, 3, 4]);
    let fits: Vec<_> = runs.into_iter().map(|(_, r)| r.unwrap()).collect();
    assert!(fits.windows(2).all(|w| w[0].idealisation == w[1].idealisation));
    for (run, l) in fits.iter().zip(2..) {
        assert_eq!(run.discretised.channels, l);
    }
}

#[test]
fn recording_and_trace_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let noise = NoiseSpec::mixture(0.85, 0.1, 0.05);
    let rec = synthesize_recording(&two_channel(2_000, noise.clone()), 3).unwrap();
    let path = dir.path().join("rec.csv");
    write_recording(&path, &rec, Some(&noise), Some(3)).unwrap();
    let back = read_recording(&path, None, None).unwrap();
    assert_eq!(back.samples, rec.samples);
    assert_eq!(back.sample_rate, rec.sample_rate);
    assert_eq!(back.kernel, rec.kernel);
    let truth = back.truth.expect("truth kept");
    assert_eq!(truth.trace.values(), rec.truth.as_ref().unwrap().trace.values());

    let trace = DiscreteTrace::from_counts(vec![0, 1, 1, 2, 1, 0], 2).unwrap();
    let tpath = dir.path().join("trace.csv");
    write_discrete_trace(&tpath, &trace, 10.0).unwrap();
    let (t2, rate) = read_discrete_trace(&tpath, None, None).unwrap();
    assert_eq!(rate, 10.0);
    assert_eq!(t2, trace);
}

#[test]
fn simulated_counts_pass_the_markov_test_and_give_dwell_rates() {
    let rec = synthesize_recording(&two_channel(100_000, NoiseSpec::gaussian(0.1)), 5).unwrap();
    let trace = rec.truth.unwrap().trace;
    let m = markov_property_test(&trace).unwrap();
    assert!((0.0..=1.0).contains(&m.p_value));
    assert!(m.dof > 0);
    // all-closed stays with probability lambda_0^2 = 0.9801
    let fit = dwell_times(&trace, 0, 1.0).unwrap();
    let mean = fit.samples.iter().sum::<f64>() / fit.samples.len() as f64;
    assert!((fit.rate - 1.0 / mean).abs() < 1e-12);
    assert!((mean - 1.0 / (1.0 - 0.9801)).abs() < 8.0, "{mean}");
}

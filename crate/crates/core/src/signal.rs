//! Measurement model: piecewise-constant conductance, low-pass filtering and
//! additive noise, `y_k = (rho * f)(t_k) + eps_k`.
//!
//! Samples are indexed from zero; sample `k` sits at `t_k = k / sample_rate`
//! and represents `f` on `[t_k, t_{k+1})`. Kernels are causal: tap `j`
//! weights the input `j` samples in the past.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Cauchy, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::discretise::{DiscreteTrace, LevelLadder};
use crate::error::{Error, Result};
use crate::rng;
use crate::vnd::{simulate_vnd, InitialState, ParamVector};

/// Piecewise-constant function `f(t) = c_j` on `[tau_j, tau_{j+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    /// `tau_0 = 0 < tau_1 < ... < tau_{K+1} = t_max`, in seconds.
    breakpoints: Vec<f64>,
    /// `c_0..c_K`.
    levels: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || breakpoints.len() != levels.len() + 1 {
            return Err(Error::InvalidParam(format!(
                "{} breakpoints cannot bound {} levels",
                breakpoints.len(),
                levels.len()
            )));
        }
        if breakpoints[0] != 0.0 || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParam(
                "breakpoints must start at 0 and increase strictly".into(),
            ));
        }
        if levels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParam("adjacent levels must differ".into()));
        }
        Ok(Self { breakpoints, levels })
    }

    /// Number of change points `K`.
    pub fn change_points(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn t_max(&self) -> f64 {
        *self.breakpoints.last().expect("non-empty")
    }

    /// Segment boundaries expressed in samples at `sample_rate`.
    pub fn sample_boundaries(&self, sample_rate: f64) -> Vec<usize> {
        self.breakpoints
            .iter()
            .map(|&t| (t * sample_rate).round() as usize)
            .collect()
    }

    /// `f(t_k)` for `k = 0..n`.
    pub fn sample(&self, sample_rate: f64, n: usize) -> Result<Vec<f64>> {
        let bounds = self.sample_boundaries(sample_rate);
        let available = *bounds.last().expect("non-empty");
        if n > available {
            return Err(Error::DomainExceeded { n, available });
        }
        let mut out = Vec::with_capacity(n);
        for (j, &c) in self.levels.iter().enumerate() {
            let end = bounds[j + 1].min(n);
            while out.len() < end {
                out.push(c);
            }
        }
        Ok(out)
    }

    /// Build from per-sample values, merging runs of equal values.
    pub fn from_samples(values: &[f64], sample_rate: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let mut breakpoints = vec![0.0];
        let mut levels = vec![values[0]];
        for (k, &v) in values.iter().enumerate().skip(1) {
            if v != *levels.last().expect("non-empty") {
                breakpoints.push(k as f64 / sample_rate);
                levels.push(v);
            }
        }
        breakpoints.push(values.len() as f64 / sample_rate);
        Ok(Self { breakpoints, levels })
    }
}

/// Conductance `offset + spacing * S_k` of an open-channel count trace.
pub fn step_from_trace(counts: &[u32], offset: f64, spacing: f64, sample_rate: f64) -> Result<StepFunction> {
    if !(spacing > 0.0) || !(sample_rate > 0.0) {
        return Err(Error::InvalidParam(
            "spacing and sample rate must be positive".into(),
        ));
    }
    let values: Vec<f64> = counts.iter().map(|&s| offset + spacing * f64::from(s)).collect();
    StepFunction::from_samples(&values, sample_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum KernelKind {
    Identity,
    /// Quadratic B-spline over three sampling intervals (sinc^3 response).
    BSpline2,
    /// Analog Bessel low-pass of the given order and -3 dB cutoff, sampled.
    BesselFir {
        order: usize,
        cutoff_hz: f64,
    },
    Custom {
        taps: Vec<f64>,
    },
}

/// Discrete low-pass kernel with unit DC gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub taps: Vec<f64>,
    pub sample_rate: f64,
}

/// Mass cut-off for truncating an infinite impulse response.
const BESSEL_TAIL_MASS: f64 = 1e-6;
const MAX_TAPS: usize = 1 << 16;

impl Kernel {
    /// Support length `varpi` in seconds.
    pub fn support(&self) -> f64 {
        (self.taps.len() - 1) as f64 / self.sample_rate
    }

    /// Samples after a jump during which the filtered signal is still moving.
    pub fn transient_samples(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.taps.len();
        (0..n / 2).all(|j| (self.taps[j] - self.taps[n - 1 - j]).abs() <= 1e-12)
    }

    /// Causal FIR filter with the first input value extended to the left.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let Some(&first) = input.first() else {
            return Vec::new();
        };
        (0..input.len())
            .map(|k| {
                self.taps
                    .iter()
                    .enumerate()
                    .map(|(j, &w)| w * if j <= k { input[k - j] } else { first })
                    .sum()
            })
            .collect()
    }
}

pub fn make_kernel(kind: KernelKind, sample_rate: f64) -> Result<Kernel> {
    if !(sample_rate > 0.0) || !sample_rate.is_finite() {
        return Err(Error::InvalidParam(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    let taps = match &kind {
        KernelKind::Identity => vec![1.0],
        KernelKind::BSpline2 => quadratic_bspline_taps(),
        KernelKind::BesselFir { order, cutoff_hz } => {
            if !(1..=10).contains(order) {
                return Err(Error::InvalidParam(format!(
                    "Bessel order must lie in 1..=10, got {order}"
                )));
            }
            if !(*cutoff_hz > 0.0) || *cutoff_hz >= sample_rate / 2.0 {
                return Err(Error::InvalidParam(format!(
                    "cutoff {cutoff_hz} Hz must lie in (0, Nyquist)"
                )));
            }
            bessel_taps(*order, *cutoff_hz, sample_rate)
        }
        KernelKind::Custom { taps } => {
            if taps.is_empty() || taps.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::InvalidParam(
                    "custom taps must be non-empty and non-negative".into(),
                ));
            }
            let total: f64 = taps.iter().sum();
            if !(total > 0.0) {
                return Err(Error::InvalidParam("custom taps sum to zero".into()));
            }
            taps.iter().map(|w| w / total).collect()
        }
    };
    Ok(Kernel {
        kind,
        taps,
        sample_rate,
    })
}

/// Quadratic B-spline (three unit boxes convolved) evaluated on the sample grid.
fn quadratic_bspline_taps() -> Vec<f64> {
    // centred B2 on [-3/2, 3/2]
    let b2 = |x: f64| {
        let a = x.abs();
        if a <= 0.5 {
            0.75 - a * a
        } else if a < 1.5 {
            0.5 * (1.5 - a) * (1.5 - a)
        } else {
            0.0
        }
    };
    vec![b2(-1.0), b2(0.0), b2(1.0)]
}

/// Coefficients `a_0..a_N` of the reverse Bessel polynomial (unit DC group delay).
fn bessel_polynomial(order: usize) -> Vec<f64> {
    let fact = |k: usize| (1..=k).map(|x| x as f64).product::<f64>();
    (0..=order)
        .map(|k| fact(2 * order - k) / (2f64.powi((order - k) as i32) * fact(k) * fact(order - k)))
        .collect()
}

/// Roots of a real polynomial (coefficients in ascending order) by Durand-Kerner.
fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len() - 1;
    let lead = coeffs[n];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    let eval = |z: Complex64| {
        monic
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    };
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32 + 1)).collect();
    for _ in 0..1000 {
        let mut delta = 0.0f64;
        for k in 0..n {
            let zk = roots[k];
            let denom = (0..n)
                .filter(|&j| j != k)
                .fold(Complex64::new(1.0, 0.0), |acc, j| acc * (zk - roots[j]));
            let step = eval(zk) / denom;
            roots[k] = zk - step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    roots
}

/// Poles of the analog Bessel low-pass with -3 dB point at `cutoff_hz`.
fn bessel_poles(order: usize, cutoff_hz: f64) -> Vec<Complex64> {
    let coeffs = bessel_polynomial(order);
    let poles = polynomial_roots(&coeffs);
    // |H(jw)|^2 = a0^2 / |theta(jw)|^2; find the -3 dB frequency of the
    // delay-normalised prototype, then rescale poles to the requested cutoff.
    let gain2 = |w: f64| {
        let jw = Complex64::new(0.0, w);
        let den = coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * jw + c);
        coeffs[0] * coeffs[0] / den.norm_sqr()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while gain2(hi) > 0.5 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gain2(mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = 2.0 * std::f64::consts::PI * cutoff_hz / (0.5 * (lo + hi));
    poles.into_iter().map(|p| p * scale).collect()
}

fn bessel_taps(order: usize, cutoff_hz: f64, sample_rate: f64) -> Vec<f64> {
    let poles = bessel_poles(order, cutoff_hz);

    // H(s) = prod(-p) / prod(s - p); partial fractions give h(t) = sum r_k e^{p_k t}
    let gain = poles.iter().fold(Complex64::new(1.0, 0.0), |acc, &p| acc * -p);
    let residues: Vec<Complex64> = poles
        .iter()
        .enumerate()
        .map(|(k, &pk)| {
            let den = poles
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .fold(Complex64::new(1.0, 0.0), |acc, (_, &pj)| acc * (pk - pj));
            gain / den
        })
        .collect();
    // Integral of h over [t0, t1]: every tap gets the mass of its sampling interval.
    let cell_mass = |k: usize| -> f64 {
        let t0 = k as f64 / sample_rate;
        let t1 = (k + 1) as f64 / sample_rate;
        poles
            .iter()
            .zip(&residues)
            .map(|(&p, &r)| r / p * ((p * t1).exp() - (p * t0).exp()))
            .sum::<Complex64>()
            .re
    };
    let slowest = poles.iter().map(|p| -p.re).fold(f64::INFINITY, f64::min);
    // horizon where every exponential has decayed below 1e-14
    let horizon = ((32.0 / slowest) * sample_rate).ceil() as usize + 1;
    let raw: Vec<f64> = (0..horizon.min(MAX_TAPS))
        .map(|k| cell_mass(k).max(0.0))
        .collect();
    let total: f64 = raw.iter().sum();
    let mut cum = 0.0;
    let mut len = raw.len();
    for (k, &w) in raw.iter().enumerate() {
        cum += w;
        if cum >= (1.0 - BESSEL_TAIL_MASS) * total {
            len = k + 1;
            break;
        }
    }
    let kept = &raw[..len];
    let sum: f64 = kept.iter().sum();
    kept.iter().map(|w| w / sum).collect()
}

/// `(rho * f)(t_k)` for `k = 0..n`.
pub fn convolve_sample(f: &StepFunction, kernel: &Kernel, n: usize) -> Result<Vec<f64>> {
    let x = f.sample(kernel.sample_rate, n)?;
    Ok(kernel.filter(&x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian {
        sigma: f64,
    },
    Cauchy {
        scale: f64,
    },
    /// Gaussian with probability `weight_gaussian`, Cauchy otherwise.
    Mixture {
        weight_gaussian: f64,
        sigma: f64,
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Pass the noise through the measurement kernel as well.
    #[serde(default)]
    pub filtered: bool,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            kind: NoiseKind::Gaussian { sigma },
            filtered: false,
        }
    }

    pub fn cauchy(scale: f64) -> Self {
        Self {
            kind: NoiseKind::Cauchy { scale },
            filtered: false,
        }
    }

    pub fn mixture(weight_gaussian: f64, sigma: f64, scale: f64) -> Self {
        Self {
            kind: NoiseKind::Mixture {
                weight_gaussian,
                sigma,
                scale,
            },
            filtered: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            NoiseKind::Gaussian { sigma } => sigma > 0.0,
            NoiseKind::Cauchy { scale } => scale > 0.0,
            NoiseKind::Mixture {
                weight_gaussian,
                sigma,
                scale,
            } => sigma > 0.0 && scale > 0.0 && (0.0..=1.0).contains(&weight_gaussian),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("invalid noise spec {:?}", self.kind)))
        }
    }

    /// `n` white draws from the noise law (before any filtering).
    pub fn draw<R: Rng>(&self, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let out = match self.kind {
            NoiseKind::Gaussian { sigma } => {
                let d = Normal::new(0.0, sigma).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            NoiseKind::Cauchy { scale } => {
                let d = Cauchy::new(0.0, scale).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            NoiseKind::Mixture {
                weight_gaussian,
                sigma,
                scale,
            } => {
                let g = Normal::new(0.0, sigma).expect("validated");
                let c = Cauchy::new(0.0, scale).expect("validated");
                (0..n)
                    .map(|_| {
                        if rng.random::<f64>() < weight_gaussian {
                            g.sample(rng)
                        } else {
                            c.sample(rng)
                        }
                    })
                    .collect()
            }
        };
        Ok(out)
    }
}

/// Noise `eps_k` for a recording: white, or the kernel applied to a white
/// process when `spec.filtered` holds and the kernel is symmetric.
///
/// Returns the samples and whether filtering was actually applied.
pub fn measurement_noise(spec: &NoiseSpec, kernel: &Kernel, n: usize, seed: u64) -> Result<(Vec<f64>, bool)> {
    let mut rng = rng::stream(seed, rng::NOISE_STREAM);
    // Filtering keeps the median at zero only when the kernel cannot skew the
    // law, so asymmetric custom kernels fall back to white noise.
    let filtered =
        spec.filtered && (kernel.is_symmetric() || !matches!(kernel.kind, KernelKind::Custom { .. }));
    if !filtered {
        return Ok((spec.draw(&mut rng, n)?, false));
    }
    let pad = kernel.taps.len() - 1;
    let raw = spec.draw(&mut rng, n + pad)?;
    let out = (0..n)
        .map(|k| {
            kernel
                .taps
                .iter()
                .enumerate()
                .map(|(j, &w)| w * raw[k + pad - j])
                .sum()
        })
        .collect();
    Ok((out, true))
}

/// Ground truth attached to simulated recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub theta: ParamVector,
    pub step: StepFunction,
    pub trace: DiscreteTrace,
}

/// Uniformly sampled current trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub kernel: Kernel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Truth>,
}

impl Recording {
    pub fn new(samples: Vec<f64>, sample_rate: f64, kernel: Kernel) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyTrace);
        }
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidParam("sample rate must be positive".into()));
        }
        if samples.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidParam("samples must be finite".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            kernel,
            truth: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.sample_rate
    }
}

/// Everything needed to simulate one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub theta: ParamVector,
    pub n: usize,
    pub sample_rate: f64,
    pub offset: f64,
    pub spacing: f64,
    pub kernel: KernelKind,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub init: InitialState,
}

/// Simulate a VND-MC, map it to conductance, filter, and add noise.
pub fn synthesize_recording(cfg: &SynthesisConfig, seed: u64) -> Result<Recording> {
    let kernel = make_kernel(cfg.kernel.clone(), cfg.sample_rate)?;
    cfg.noise.validate()?;
    let joint = simulate_vnd(&cfg.theta, cfg.n, seed, &cfg.init)?;
    let counts = joint.into_sum();
    let step = step_from_trace(&counts, cfg.offset, cfg.spacing, cfg.sample_rate)?;
    let clean = convolve_sample(&step, &kernel, cfg.n)?;
    let (noise, _) = measurement_noise(&cfg.noise, &kernel, cfg.n, seed)?;
    let samples = clean.iter().zip(&noise).map(|(s, e)| s + e).collect();
    let channels = cfg.theta.channels();
    let trace = DiscreteTrace::new(counts, LevelLadder::new(channels, cfg.offset, cfg.spacing, 0.0)?)?;
    let mut rec = Recording::new(samples, cfg.sample_rate, kernel)?;
    rec.truth = Some(Truth {
        theta: cfg.theta.clone(),
        step,
        trace,
    });
    Ok(rec)
}

//! Run configuration: a TOML file overlaid by command-line flags, with
//! defaults filled in before a command runs.

use std::path::{Path, PathBuf};

use idc_core::infer::{BranchChoice, MdeOptions};
use idc_core::pipeline::PipelineOptions;
use idc_core::signal::{KernelKind, NoiseKind, NoiseSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Every setting a command may read. Absent fields fall back to defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    #[serde(rename = "L")]
    pub channels: Option<usize>,
    #[serde(rename = "max-L")]
    pub max_l: Option<usize>,
    pub gap_factor: Option<f64>,
    /// Relative tolerance of the cooperativity verdict.
    pub tolerance: Option<f64>,
    /// Known all-closed conductance.
    pub baseline: Option<f64>,
    pub branch: Option<BranchChoice>,
    pub threads: Option<usize>,
    pub plots: Option<bool>,
    pub input: Option<PathBuf>,
    pub sample_rate: Option<f64>,
    pub kernel: Option<KernelKind>,
    pub noise: Option<NoiseSpec>,
    /// Named parameter set for `simulate`: zero, positive or negative.
    pub scenario: Option<String>,
    /// Flat `(lambda_0..lambda_{L-1}, eta_1..eta_L)`; overrides the scenario.
    pub theta: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub offset: Option<f64>,
    pub spacing: Option<f64>,
    pub reps: Option<usize>,
    #[serde(rename = "L-sweep")]
    pub l_sweep: Option<Vec<usize>>,
    /// Histogram bins; chosen per output when absent.
    pub bins: Option<usize>,
    /// States for `dwell`; all states when absent.
    pub states: Option<Vec<u32>>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `top` win.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        let base = self;
        overlay!(base, top; seed, alpha, channels, max_l, gap_factor, tolerance, baseline,
            branch, threads, plots, input, sample_rate, kernel, noise, scenario, theta, n,
            offset, spacing, reps, l_sweep, bins, states)
    }

    /// Fill the settings shared by every command.
    pub fn with_defaults(mut self) -> RunConfig {
        let d = PipelineOptions::default();
        self.seed.get_or_insert(0);
        self.alpha.get_or_insert(d.alpha);
        self.max_l.get_or_insert(d.max_l);
        self.gap_factor.get_or_insert(d.gap_factor);
        self.tolerance.get_or_insert(d.tolerance);
        self.branch.get_or_insert(d.mde.branch);
        self.plots.get_or_insert(false);
        self
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn pipeline_options(&self) -> CliResult<PipelineOptions> {
        let d = PipelineOptions::default();
        let opts = PipelineOptions {
            alpha: self.alpha.unwrap_or(d.alpha),
            channels: self.channels,
            max_l: self.max_l.unwrap_or(d.max_l),
            gap_factor: self.gap_factor.unwrap_or(d.gap_factor),
            baseline: self.baseline,
            mde: MdeOptions {
                branch: self.branch.unwrap_or_default(),
                ..MdeOptions::default()
            },
            tolerance: self.tolerance.unwrap_or(d.tolerance),
        };
        opts.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(opts)
    }

    pub fn require_input(&self) -> CliResult<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::Config("an input file is required (--input)".into()))
    }
}

fn numbers(parts: &[&str], what: &str) -> Result<Vec<f64>, String> {
    parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad number '{p}' in {what}"))
        })
        .collect()
}

/// `identity`, `bspline2`, `bessel:ORDER:CUTOFF_HZ` or `custom:w0,w1,...`.
pub fn parse_kernel(s: &str) -> Result<KernelKind, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["identity"] => Ok(KernelKind::Identity),
        ["bspline2"] => Ok(KernelKind::BSpline2),
        ["bessel", order, cutoff] => Ok(KernelKind::BesselFir {
            order: order.parse().map_err(|_| format!("bad Bessel order '{order}'"))?,
            cutoff_hz: numbers(&[cutoff], "kernel")?[0],
        }),
        ["custom", taps] => Ok(KernelKind::Custom {
            taps: numbers(&taps.split(',').collect::<Vec<_>>(), "kernel")?,
        }),
        _ => Err(format!(
            "unknown kernel '{s}' (identity, bspline2, bessel:ORDER:HZ, custom:TAPS)"
        )),
    }
}

/// `gaussian:SIGMA`, `cauchy:SCALE` or `mixture:WEIGHT:SIGMA:SCALE`, with an
/// optional `+filtered` suffix.
pub fn parse_noise(s: &str) -> Result<NoiseSpec, String> {
    let (body, filtered) = match s.strip_suffix("+filtered") {
        Some(b) => (b, true),
        None => (s, false),
    };
    let parts: Vec<&str> = body.split(':').collect();
    let kind = match parts.as_slice() {
        ["gaussian", rest @ ..] if rest.len() == 1 => NoiseKind::Gaussian {
            sigma: numbers(rest, "noise")?[0],
        },
        ["cauchy", rest @ ..] if rest.len() == 1 => NoiseKind::Cauchy {
            scale: numbers(rest, "noise")?[0],
        },
        ["mixture", rest @ ..] if rest.len() == 3 => {
            let v = numbers(rest, "noise")?;
            NoiseKind::Mixture {
                weight_gaussian: v[0],
                sigma: v[1],
                scale: v[2],
            }
        }
        _ => {
            return Err(format!(
                "unknown noise '{s}' (gaussian:SIGMA, cauchy:SCALE, mixture:W:SIGMA:SCALE)"
            ))
        }
    };
    Ok(NoiseSpec { kind, filtered })
}

/// Comma-separated numbers.
pub fn parse_theta(s: &str) -> Result<Vec<f64>, String> {
    numbers(&s.split(',').collect::<Vec<_>>(), "theta")
}

/// `LO:HI` (inclusive) or a comma-separated list.
pub fn parse_sweep(s: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("bad L sweep '{s}' (LO:HI or a list)");
    if let Some((lo, hi)) = s.split_once(':') {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<usize>().ok().filter(|&l| l > 0).ok_or_else(bad))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_specs() {
        assert_eq!(parse_kernel("bspline2").unwrap(), KernelKind::BSpline2);
        assert_eq!(
            parse_kernel("bessel:4:1000").unwrap(),
            KernelKind::BesselFir {
                order: 4,
                cutoff_hz: 1000.0
            }
        );
        assert!(parse_kernel("boxcar").is_err());
    }

    #[test]
    fn noise_specs() {
        let m = parse_noise("mixture:0.85:0.1:0.05+filtered").unwrap();
        assert!(m.filtered);
        assert_eq!(
            m.kind,
            NoiseKind::Mixture {
                weight_gaussian: 0.85,
                sigma: 0.1,
                scale: 0.05
            }
        );
        assert!(parse_noise("gaussian").is_err());
    }

    #[test]
    fn sweeps() {
        assert_eq!(parse_sweep("2:6").unwrap(), vec![2, 3, 4, 5, 6]);
        assert_eq!(parse_sweep("3,5").unwrap(), vec![3, 5]);
        assert!(parse_sweep("6:2").is_err());
        assert!(parse_sweep("0,1").is_err());
    }

    #[test]
    fn flags_override_file_and_snapshot_round_trips() {
        let file: RunConfig = toml::from_str(
            "seed = 3\nalpha = 0.05\nL = 4\nkernel = { type = \"bessel-fir\", order = 4, cutoff_hz = 1000.0 }\n",
        )
        .unwrap();
        let flags = RunConfig {
            seed: Some(7),
            ..Default::default()
        };
        let merged = file.overlay(flags).with_defaults();
        assert_eq!(merged.seed, Some(7));
        assert_eq!(merged.alpha, Some(0.05));
        assert_eq!(merged.channels, Some(4));
        let back: RunConfig = toml::from_str(&merged.to_toml().unwrap()).unwrap();
        assert_eq!(back, merged);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
    }
}

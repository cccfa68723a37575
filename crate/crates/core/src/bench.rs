//! Simulation harness: test functions, noise simulators, baselines, MISE and
//! benchmark reports.
//!
//! Test functions are evaluated at `t_i = (i + 1) / T`. Mean functions are
//! rescaled to `[0.2, 0.8]`, Poisson intensities to the requested
//! `[min, max]`, and variance functions so that
//! `sd(mean) / mean(sqrt(var)) = snr` (population sd).
//!
//! Random numbers come from ChaCha8 seeded with `seed_from_u64(seed)`, using
//! the replicate index as the stream number, so every replicate is
//! reproducible on any platform.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauss::{self, GaussError, GaussOptions};
use crate::pois::{self, PoisError, Reconstruction};
use crate::wavelet::{self, FilterPair, WaveletError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("unknown test function `{0}`")]
    UnknownFunction(String),
    #[error("intensity range ({min}, {max}) must satisfy 0 < min < max")]
    BadRange { min: f64, max: f64 },
    #[error("snr {0} cannot be reached")]
    BadSnr(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("sd {value} at position {index} must be nonnegative and finite")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error("invalid scenario `{scenario}`: {reason}")]
    InvalidScenario { scenario: String, reason: String },
    #[error("unknown suite `{0}` (valid suites: poisson-tables, gaussian-figures)")]
    UnknownSuite(String),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Gauss(#[from] GaussError),
    #[error(transparent)]
    Pois(#[from] PoisError),
}

/// Mean functions, in canonical spelling.
pub const MEAN_FUNCTIONS: &[&str] = &[
    "spikes",
    "angles",
    "blocks",
    "doppler",
    "bumps",
    "blip",
    "corner",
    "heavisine",
    "bursts",
    "clipped_blocks",
];

/// Variance function shapes.
pub const VAR_FUNCTIONS: &[&str] = &["constant", "texp", "doppler", "bumps", "clipped_blocks"];

pub const SUITES: &[&str] = &["poisson-tables", "gaussian-figures"];

fn canonical(name: &str) -> String {
    let squashed: String = name
        .chars()
        .filter(|c| !matches!(c, ' ' | '-' | '_'))
        .flat_map(char::to_lowercase)
        .collect();
    match squashed.as_str() {
        "clippedblocks" | "cblocks" => "clipped_blocks".into(),
        other => other.into(),
    }
}

const JUMPS: [f64; 11] = [0.1, 0.13, 0.15, 0.23, 0.25, 0.40, 0.44, 0.65, 0.76, 0.78, 0.81];

fn blocks(t: f64) -> f64 {
    const H: [f64; 11] = [4.0, -5.0, 3.0, -4.0, 5.0, -4.2, 2.1, 4.3, -3.1, 2.1, -4.2];
    JUMPS
        .iter()
        .zip(H)
        .map(|(&tj, h)| if t > tj { h } else if t == tj { h / 2.0 } else { 0.0 })
        .sum()
}

fn bumps(t: f64) -> f64 {
    const H: [f64; 11] = [4.0, 5.0, 3.0, 4.0, 5.0, 4.2, 2.1, 4.3, 3.1, 5.1, 4.2];
    const W: [f64; 11] = [
        0.005, 0.005, 0.006, 0.01, 0.01, 0.03, 0.01, 0.01, 0.005, 0.008, 0.005,
    ];
    JUMPS
        .iter()
        .zip(H)
        .zip(W)
        .map(|((&tj, h), w)| h * (1.0 + ((t - tj) / w).abs()).powi(-4))
        .sum()
}

fn heavisine(t: f64) -> f64 {
    4.0 * (4.0 * std::f64::consts::PI * t).sin() - (t - 0.3).signum() - (0.72 - t).signum()
}

fn doppler(t: f64) -> f64 {
    (t * (1.0 - t)).sqrt() * (2.0 * std::f64::consts::PI * 1.05 / (t + 0.05)).sin()
}

fn spikes(t: f64) -> f64 {
    0.75 * (-500.0 * (t - 0.23).powi(2)).exp()
        + 1.5 * (-2000.0 * (t - 0.33).powi(2)).exp()
        + 3.0 * (-8000.0 * (t - 0.47).powi(2)).exp()
        + 2.25 * (-16000.0 * (t - 0.69).powi(2)).exp()
        + 0.5 * (-32000.0 * (t - 0.83).powi(2)).exp()
}

fn angles(t: f64) -> f64 {
    if t <= 0.15 {
        2.0 * t + 0.5
    } else if t <= 0.2 {
        -12.0 * (t - 0.15) + 0.8
    } else if t <= 0.5 {
        0.2
    } else if t <= 0.6 {
        6.0 * (t - 0.5) + 0.2
    } else if t <= 0.65 {
        -10.0 * (t - 0.6) + 0.8
    } else if t <= 0.85 {
        -0.5 * (t - 0.65) + 0.3
    } else {
        2.0 * (t - 0.85) + 0.2
    }
}

fn corner(t: f64) -> f64 {
    if t <= 0.5 {
        623.87 * t.powi(3) * (1.0 - 2.0 * t)
    } else if t <= 0.8 {
        187.161 * (0.125 - t.powi(3)) * t.powi(4)
    } else {
        3708.470441 * (t - 1.0).powi(3)
    }
}

fn blip(t: f64) -> f64 {
    if t <= 0.8 {
        0.32 + 0.6 * t + 0.3 * (-100.0 * (t - 0.3).powi(2)).exp()
    } else {
        -0.28 + 0.6 * t + 0.3 * (-100.0 * (t - 1.3).powi(2)).exp()
    }
}

/// Sudden onsets with exponential decay.
fn bursts(t: f64) -> f64 {
    const ONSET: [f64; 4] = [0.1, 0.3, 0.55, 0.75];
    const HEIGHT: [f64; 4] = [1.0, 0.8, 1.2, 0.6];
    const DECAY: [f64; 4] = [0.02, 0.04, 0.01, 0.06];
    (0..4)
        .filter(|&k| t >= ONSET[k])
        .map(|k| HEIGHT[k] * (-(t - ONSET[k]) / DECAY[k]).exp())
        .sum()
}

fn texp(t: f64) -> f64 {
    1e-4 + 4.0
        * ((-550.0 * (t - 0.2).powi(2)).exp()
            + (-200.0 * (t - 0.5).powi(2)).exp()
            + (-950.0 * (t - 0.8).powi(2)).exp())
}

fn grid(len: usize) -> impl Iterator<Item = f64> {
    (1..=len).map(move |i| i as f64 / len as f64)
}

/// The unscaled test function `name` at `len` grid points.
pub fn raw_shape(name: &str, len: usize) -> Result<Vec<f64>, BenchError> {
    let f: fn(f64) -> f64 = match canonical(name).as_str() {
        "spikes" => spikes,
        "angles" => angles,
        "blocks" => blocks,
        "doppler" => doppler,
        "bumps" => bumps,
        "blip" => blip,
        "corner" => corner,
        "heavisine" => heavisine,
        "bursts" => bursts,
        "clipped_blocks" => |t| blocks(t).max(0.0),
        "texp" => texp,
        _ => return Err(BenchError::UnknownFunction(name.to_string())),
    };
    Ok(grid(len).map(f).collect())
}

/// Affine map of `values` onto `[lo, hi]`; extremes land exactly on the ends.
fn rescale(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = max - min;
    values
        .iter()
        .map(|&v| {
            if span == 0.0 {
                return lo;
            }
            if v == max {
                return hi;
            }
            let u = (v - min) / span;
            (lo + (hi - lo) * u).clamp(lo, hi)
        })
        .collect()
}

/// Mean function rescaled to `[0.2, 0.8]`.
pub fn gen_mean(name: &str, len: usize) -> Result<Vec<f64>, BenchError> {
    if canonical(name) == "texp" {
        return Err(BenchError::UnknownFunction(name.to_string()));
    }
    Ok(rescale(&raw_shape(name, len)?, 0.2, 0.8))
}

/// Poisson intensity rescaled to `[min, max]`.
pub fn gen_intensity(name: &str, len: usize, min: f64, max: f64) -> Result<Vec<f64>, BenchError> {
    if !(min > 0.0 && min < max && max.is_finite()) {
        return Err(BenchError::BadRange { min, max });
    }
    let shape = gen_mean(name, len)?;
    Ok(rescale(&shape, min, max))
}

fn population_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `sd(mean) / mean(sqrt(var))`.
pub fn achieved_snr(mean: &[f64], var: &[f64]) -> f64 {
    let mean_sd = var.iter().map(|v| v.sqrt()).sum::<f64>() / var.len() as f64;
    population_sd(mean) / mean_sd
}

pub const VAR_FLOOR: f64 = 1e-6;

/// Longest signal a scenario may request.
pub const MAX_LEN: usize = 1 << 24;

/// Variance function `name` scaled to reach `snr` against `mean`, floored at
/// [`VAR_FLOOR`].
///
/// `constant` is flat, `texp` is a sum of three Gaussian bumps on a small
/// offset, and the remaining shapes are the corresponding test functions
/// mapped onto `[0, 1]`.
pub fn gen_var(name: &str, len: usize, snr: f64, mean: &[f64]) -> Result<Vec<f64>, BenchError> {
    if mean.len() != len {
        return Err(BenchError::LengthMismatch {
            left: mean.len(),
            right: len,
        });
    }
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(BenchError::BadSnr(snr));
    }
    let shape = match canonical(name).as_str() {
        "constant" => vec![1.0; len],
        "texp" => raw_shape("texp", len)?,
        n @ ("doppler" | "bumps" | "clipped_blocks") => rescale(&raw_shape(n, len)?, 0.0, 1.0),
        _ => return Err(BenchError::UnknownFunction(name.to_string())),
    };
    let root: Vec<f64> = shape.iter().map(|s| s.sqrt()).collect();
    let sd_floor = VAR_FLOOR.sqrt();
    let target = population_sd(mean) / snr;
    let mean_sd = |r: f64| root.iter().map(|s| (r * s).max(sd_floor)).sum::<f64>() / len as f64;
    if !(target > sd_floor) {
        return Err(BenchError::BadSnr(snr));
    }
    // mean_sd is increasing in r; bracket and bisect
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean_sd(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_sd(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = 0.5 * (lo + hi);
    Ok(root.iter().map(|s| (r * s).max(sd_floor).powi(2)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "noise", rename_all = "lowercase")]
pub enum Noise {
    Gaussian { var_fn: String, snr: f64 },
    Poisson { min: f64, max: f64 },
}

impl Noise {
    fn label(&self) -> String {
        match self {
            Noise::Gaussian { var_fn, .. } => var_fn.clone(),
            Noise::Poisson { min, max } => format!("{min}:{max}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub mean_fn: String,
    pub noise: Noise,
    pub len: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), BenchError> {
        let invalid = |reason: String| BenchError::InvalidScenario {
            scenario: self.name.clone(),
            reason,
        };
        wavelet::log2_exact(self.len).map_err(|e| invalid(e.to_string()))?;
        if self.len < 4 || self.len > MAX_LEN {
            return Err(invalid(format!("length must be between 4 and {MAX_LEN}")));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates must be at least 1".into()));
        }
        match &self.noise {
            Noise::Gaussian { var_fn, snr } => {
                let mean = gen_mean(&self.mean_fn, self.len)?;
                gen_var(var_fn, self.len, *snr, &mean)?;
            }
            Noise::Poisson { min, max } => {
                gen_intensity(&self.mean_fn, self.len, *min, *max)?;
            }
        }
        Ok(())
    }
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSample {
    pub y: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSample {
    pub counts: Vec<u64>,
    pub intensity: Vec<f64>,
}

/// Draws `y_t ~ N(mean_t, var_t)` for replicate `replicate`.
pub fn simulate_gaussian(scenario: &Scenario, replicate: usize) -> Result<GaussianSample, BenchError> {
    let Noise::Gaussian { var_fn, snr } = &scenario.noise else {
        return Err(BenchError::InvalidScenario {
            scenario: scenario.name.clone(),
            reason: "not a Gaussian scenario".into(),
        });
    };
    let mean = gen_mean(&scenario.mean_fn, scenario.len)?;
    let var = gen_var(var_fn, scenario.len, *snr, &mean)?;
    let mut rng = replicate_rng(scenario.seed, replicate);
    let y = mean
        .iter()
        .zip(&var)
        .map(|(m, v)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            m + v.sqrt() * z
        })
        .collect();
    Ok(GaussianSample { y, mean, var })
}

/// Draws `y_t ~ Poi(intensity_t)` for replicate `replicate`.
pub fn simulate_poisson(scenario: &Scenario, replicate: usize) -> Result<PoissonSample, BenchError> {
    let Noise::Poisson { min, max } = scenario.noise else {
        return Err(BenchError::InvalidScenario {
            scenario: scenario.name.clone(),
            reason: "not a Poisson scenario".into(),
        });
    };
    let intensity = gen_intensity(&scenario.mean_fn, scenario.len, min, max)?;
    let mut rng = replicate_rng(scenario.seed, replicate);
    let counts = intensity
        .iter()
        .map(|&lambda| {
            let d = Poisson::new(lambda).expect("intensity is positive and finite");
            d.sample(&mut rng) as u64
        })
        .collect();
    Ok(PoissonSample { counts, intensity })
}

/// Sum of squared errors.
pub fn mise(estimate: &[f64], truth: &[f64]) -> Result<f64, BenchError> {
    if estimate.len() != truth.len() {
        return Err(BenchError::LengthMismatch {
            left: estimate.len(),
            right: truth.len(),
        });
    }
    Ok(estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum())
}

fn ti_hard_threshold(y: &[f64], sd: &[f64], filter: &FilterPair) -> Result<Vec<f64>, BenchError> {
    if y.len() != sd.len() {
        return Err(BenchError::LengthMismatch {
            left: y.len(),
            right: sd.len(),
        });
    }
    if let Some(index) = sd.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(BenchError::NonPositiveVariance {
            index,
            value: sd[index],
        });
    }
    let var: Vec<f64> = sd.iter().map(|s| s * s).collect();
    let mut table = wavelet::ndwt(y, filter)?;
    let omega2 = wavelet::propagate_variance(&var, filter)?;
    let factor = (2.0 * (y.len() as f64).ln()).sqrt();
    for (row, w2) in table.details.iter_mut().zip(&omega2) {
        for (d, w2) in row.iter_mut().zip(w2) {
            if d.abs() <= w2.sqrt() * factor {
                *d = 0.0;
            }
        }
    }
    Ok(wavelet::indwt_average(&table, filter)?)
}

/// Translation-invariant hard thresholding with Symmlet8 at the universal
/// threshold `omega * sqrt(2 log T)`, given the noise sd of every point.
pub fn baseline_ti_thresh(y: &[f64], sd: &[f64]) -> Result<Vec<f64>, BenchError> {
    ti_hard_threshold(y, sd, &FilterPair::symmlet8())
}

/// Anscombe transform, TI Haar hard thresholding with unit noise, and the
/// algebraic inverse floored at zero.
pub fn baseline_anscombe(counts: &[u64]) -> Result<Vec<f64>, BenchError> {
    let x: Vec<f64> = counts.iter().map(|&c| 2.0 * (c as f64 + 0.375).sqrt()).collect();
    let smoothed = ti_hard_threshold(&x, &vec![1.0; x.len()], &FilterPair::haar())?;
    // anything at or below the image of a zero count (up to rounding) maps to 0
    let zero_level = 2.0 * 0.375f64.sqrt() * (1.0 + 1e-12);
    Ok(smoothed
        .into_iter()
        .map(|v| {
            if v <= zero_level {
                0.0
            } else {
                (v / 2.0).powi(2) - 0.375
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Gaussian: joint mean and variance. Poisson: delta reconstruction.
    Smash,
    SmashHomo,
    SmashTrueVar,
    TiThresh,
    SmashLogscale,
    Anscombe,
}

impl Method {
    pub const GAUSSIAN: &'static [Method] = &[
        Method::Smash,
        Method::SmashHomo,
        Method::SmashTrueVar,
        Method::TiThresh,
    ];
    pub const POISSON: &'static [Method] = &[Method::Smash, Method::SmashLogscale, Method::Anscombe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Smash => "smash",
            Method::SmashHomo => "smash_homo",
            Method::SmashTrueVar => "smash_true_var",
            Method::TiThresh => "ti_thresh",
            Method::SmashLogscale => "smash_logscale",
            Method::Anscombe => "anscombe",
        }
    }

    fn supports(self, noise: &Noise) -> bool {
        match noise {
            Noise::Gaussian { .. } => Self::GAUSSIAN.contains(&self),
            Noise::Poisson { .. } => Self::POISSON.contains(&self),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of (mean, variance) rounds used by the Gaussian methods.
pub const GAUSS_CYCLES: usize = 2;

fn run_gaussian(method: Method, sample: &GaussianSample) -> Result<Vec<f64>, BenchError> {
    Ok(match method {
        Method::Smash => gauss::smooth_joint(&sample.y, GAUSS_CYCLES)?.mean,
        Method::SmashHomo => {
            let options = GaussOptions {
                homoskedastic: true,
                ..GaussOptions::default()
            };
            gauss::smooth_joint_with(&sample.y, GAUSS_CYCLES, &options)?.mean
        }
        Method::SmashTrueVar => {
            gauss::smooth_mean_known_var(&sample.y, &sample.var, &FilterPair::symmlet8())?.mean
        }
        Method::TiThresh => {
            let sd: Vec<f64> = sample.var.iter().map(|v| v.sqrt()).collect();
            baseline_ti_thresh(&sample.y, &sd)?
        }
        other => unreachable!("{other} is not a Gaussian method"),
    })
}

fn run_poisson(method: Method, sample: &PoissonSample) -> Result<Vec<f64>, BenchError> {
    Ok(match method {
        Method::Smash => pois::smooth_poisson(&sample.counts, Reconstruction::Delta)?.mean,
        Method::SmashLogscale => pois::smooth_poisson(&sample.counts, Reconstruction::Logscale)?.mean,
        Method::Anscombe => baseline_anscombe(&sample.counts)?,
        other => unreachable!("{other} is not a Poisson method"),
    })
}

fn default_len() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub mean_fn: String,
    #[serde(flatten)]
    pub noise: Noise,
    #[serde(default = "default_len")]
    pub len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    pub methods: Vec<Method>,
}

impl ScenarioConfig {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| match &self.noise {
            Noise::Gaussian { var_fn, snr } => format!("{}/{}/snr{}/T{}", self.mean_fn, var_fn, snr, self.len),
            Noise::Poisson { min, max } => format!("{}/{}:{}/T{}", self.mean_fn, min, max, self.len),
        })
    }
}

fn default_seed() -> u64 {
    1
}

fn default_replicates() -> usize {
    10
}

/// A benchmark run: scenarios, each with its own method list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub scenarios: Vec<ScenarioConfig>,
}

/// SplitMix64 finalizer, used to derive per-scenario seeds from the master
/// seed.
fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl BenchConfig {
    /// Resolves and validates every scenario.
    pub fn scenarios(&self) -> Result<Vec<(Scenario, Vec<Method>)>, BenchError> {
        if self.scenarios.is_empty() {
            return Err(BenchError::InvalidScenario {
                scenario: String::new(),
                reason: "no scenarios".into(),
            });
        }
        self.scenarios
            .iter()
            .enumerate()
            .map(|(i, cfg)| {
                let scenario = Scenario {
                    name: cfg.label(),
                    mean_fn: cfg.mean_fn.clone(),
                    noise: cfg.noise.clone(),
                    len: cfg.len,
                    replicates: cfg.replicates.unwrap_or(self.replicates),
                    seed: mix_seed(self.seed, i as u64),
                };
                scenario.validate()?;
                if cfg.methods.is_empty() {
                    return Err(BenchError::InvalidScenario {
                        scenario: scenario.name,
                        reason: "no methods".into(),
                    });
                }
                if let Some(m) = cfg.methods.iter().find(|m| !m.supports(&cfg.noise)) {
                    return Err(BenchError::InvalidScenario {
                        scenario: scenario.name,
                        reason: format!("method {m} does not apply to this noise model"),
                    });
                }
                Ok((scenario, cfg.methods.clone()))
            })
            .collect()
    }
}

/// Built-in scenario suites.
///
/// `poisson-tables`: six intensity shapes at three (min, max) ranges, T=1024.
/// `gaussian-figures`: Spikes with constant variance, Spikes with Clipped
/// Blocks variance and Corner with Doppler variance, SNR 3, T=1024.
pub fn suite(name: &str, seed: u64, replicates: usize) -> Result<BenchConfig, BenchError> {
    let scenarios = match name {
        "poisson-tables" => {
            let mut out = Vec::new();
            for f in ["spikes", "angles", "heavisine", "bursts", "clipped_blocks", "bumps"] {
                for (min, max) in [(0.01, 3.0), (0.125, 8.0), (1.0 / 128.0, 128.0)] {
                    out.push(ScenarioConfig {
                        name: None,
                        mean_fn: f.into(),
                        noise: Noise::Poisson { min, max },
                        len: 1024,
                        replicates: None,
                        methods: vec![Method::Smash, Method::Anscombe],
                    });
                }
            }
            out
        }
        "gaussian-figures" => [("spikes", "constant"), ("spikes", "clipped_blocks"), ("corner", "doppler")]
            .into_iter()
            .map(|(m, v)| ScenarioConfig {
                name: None,
                mean_fn: m.into(),
                noise: Noise::Gaussian {
                    var_fn: v.into(),
                    snr: 3.0,
                },
                len: 1024,
                replicates: None,
                methods: Method::GAUSSIAN.to_vec(),
            })
            .collect(),
        other => return Err(BenchError::UnknownSuite(other.to_string())),
    };
    Ok(BenchConfig {
        seed,
        replicates,
        scenarios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scenario: String,
    pub mean_fn: String,
    pub var_fn_or_range: String,
    #[serde(rename = "T")]
    pub len: usize,
    pub method: Method,
    pub replicate: usize,
    pub mise_sum: Option<f64>,
    pub mise_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub scenario: String,
    pub method: Method,
    pub replicates: usize,
    pub failed: usize,
    pub mean_mise: Option<f64>,
    pub median_mise: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMetadata {
    pub master_seed: u64,
    pub version: String,
    pub rng: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub metadata: BenchMetadata,
    pub records: Vec<BenchRecord>,
    pub summaries: Vec<BenchSummary>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

fn run_cell(scenario: &Scenario, methods: &[Method], replicate: usize) -> Vec<BenchRecord> {
    let record = |method: Method, result: Result<f64, BenchError>| {
        let (mise_sum, error) = match result {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        BenchRecord {
            scenario: scenario.name.clone(),
            mean_fn: scenario.mean_fn.clone(),
            var_fn_or_range: scenario.noise.label(),
            len: scenario.len,
            method,
            replicate,
            mise_sum,
            mise_mean: mise_sum.map(|s| s / scenario.len as f64),
            error,
        }
    };
    match &scenario.noise {
        Noise::Gaussian { .. } => match simulate_gaussian(scenario, replicate) {
            Ok(sample) => methods
                .iter()
                .map(|&m| record(m, run_gaussian(m, &sample).and_then(|est| mise(&est, &sample.mean))))
                .collect(),
            Err(e) => methods.iter().map(|&m| record(m, Err(e.clone()))).collect(),
        },
        Noise::Poisson { .. } => match simulate_poisson(scenario, replicate) {
            Ok(sample) => methods
                .iter()
                .map(|&m| record(m, run_poisson(m, &sample).and_then(|est| mise(&est, &sample.intensity))))
                .collect(),
            Err(e) => methods.iter().map(|&m| record(m, Err(e.clone()))).collect(),
        },
    }
}

/// Runs every (scenario, replicate, method) cell on the current rayon pool.
/// All methods see the same simulated data within a replicate. Failures are
/// recorded per cell and do not stop the run.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    let resolved = config.scenarios()?;
    let cells: Vec<(usize, usize)> = resolved
        .iter()
        .enumerate()
        .flat_map(|(i, (s, _))| (0..s.replicates).map(move |r| (i, r)))
        .collect();
    let records: Vec<BenchRecord> = cells
        .par_iter()
        .map(|&(i, r)| run_cell(&resolved[i].0, &resolved[i].1, r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let mut summaries = Vec::new();
    for (scenario, methods) in &resolved {
        for &method in methods {
            let cell: Vec<&BenchRecord> = records
                .iter()
                .filter(|r| r.scenario == scenario.name && r.method == method)
                .collect();
            let values: Vec<f64> = cell.iter().filter_map(|r| r.mise_sum).collect();
            summaries.push(BenchSummary {
                scenario: scenario.name.clone(),
                method,
                replicates: cell.len(),
                failed: cell.len() - values.len(),
                mean_mise: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
                median_mise: median(&values),
            });
        }
    }
    Ok(BenchReport {
        metadata: BenchMetadata {
            master_seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            rng: "ChaCha8 (seed_from_u64, stream = replicate)".to_string(),
        },
        records,
        summaries,
    })
}

impl BenchReport {
    /// One row per record; failed cells have `NA` MISE fields.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record([
                "scenario",
                "mean_fn",
                "var_fn_or_range",
                "T",
                "method",
                "replicate",
                "mise_sum",
                "mise_mean",
            ])
            .expect("writing to memory");
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        for r in &self.records {
            writer
                .write_record([
                    r.scenario.clone(),
                    r.mean_fn.clone(),
                    r.var_fn_or_range.clone(),
                    r.len.to_string(),
                    r.method.to_string(),
                    r.replicate.to_string(),
                    fmt(r.mise_sum),
                    fmt(r.mise_mean),
                ])
                .expect("writing to memory");
        }
        String::from_utf8(writer.into_inner().expect("flushing to memory")).expect("csv output is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self, scenario: &str, method: Method) -> Option<&BenchSummary> {
        self.summaries
            .iter()
            .find(|s| s.scenario == scenario && s.method == method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means_span_the_target_range() {
        for name in MEAN_FUNCTIONS {
            for len in [64, 1024] {
                let m = gen_mean(name, len).unwrap();
                let min = m.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!((min - 0.2).abs() < 1e-12 && (max - 0.8).abs() < 1e-12, "{name}");
            }
        }
        assert!(matches!(gen_mean("wiggles", 8), Err(BenchError::UnknownFunction(_))));
    }

    #[test]
    fn blocks_are_piecewise_constant() {
        let b = gen_mean("blocks", 1024).unwrap();
        let mut distinct: Vec<f64> = b.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        // 12 plateaus, plus a midpoint value where a jump falls on the grid
        assert!(distinct.len() <= 23);
        let changes = b.windows(2).filter(|w| w[0] != w[1]).count();
        assert!(changes <= 22);
    }

    fn sign_changes(x: &[f64]) -> usize {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.windows(2).filter(|w| (w[0] - m) * (w[1] - m) < 0.0).count()
    }

    #[test]
    fn doppler_slows_down() {
        let d = gen_mean("doppler", 1024).unwrap();
        assert!(sign_changes(&d[..512]) > sign_changes(&d[512..]));
    }

    #[test]
    fn clipped_blocks_is_blocks_clipped_at_zero() {
        let b = raw_shape("blocks", 256).unwrap();
        let c = raw_shape("Clipped Blocks", 256).unwrap();
        for (x, y) in b.iter().zip(&c) {
            assert_eq!(*y, x.max(0.0));
        }
    }

    #[test]
    fn intensity_range_is_exact_and_order_preserving() {
        for name in MEAN_FUNCTIONS {
            let raw = raw_shape(name, 512).unwrap();
            let s = gen_intensity(name, 512, 0.125, 8.0).unwrap();
            assert_eq!(s.iter().cloned().fold(f64::INFINITY, f64::min), 0.125);
            assert_eq!(s.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 8.0);
            for i in 0..511 {
                if raw[i] < raw[i + 1] {
                    assert!(s[i] <= s[i + 1]);
                }
            }
        }
        assert!(matches!(gen_intensity("bumps", 8, 2.0, 2.0), Err(BenchError::BadRange { .. })));
    }

    #[test]
    fn variance_reaches_requested_snr() {
        let mean = gen_mean("spikes", 1024).unwrap();
        let c = gen_var("constant", 1024, 3.0, &mean).unwrap();
        let expected = (population_sd(&mean) / 3.0).powi(2);
        assert!(c.iter().all(|v| (v - expected).abs() < 1e-12 * expected));
        for name in VAR_FUNCTIONS {
            for snr in [1.0, 3.0] {
                let v = gen_var(name, 1024, snr, &mean).unwrap();
                assert!((achieved_snr(&mean, &v) - snr).abs() < 1e-9, "{name}");
                assert!(v.iter().all(|&x| x >= VAR_FLOOR));
            }
        }
    }

    fn gaussian_scenario(seed: u64) -> Scenario {
        Scenario {
            name: "g".into(),
            mean_fn: "spikes".into(),
            noise: Noise::Gaussian {
                var_fn: "texp".into(),
                snr: 3.0,
            },
            len: 64,
            replicates: 1,
            seed,
        }
    }

    fn poisson_scenario(seed: u64) -> Scenario {
        Scenario {
            name: "p".into(),
            mean_fn: "heavisine".into(),
            noise: Noise::Poisson { min: 0.5, max: 6.0 },
            len: 64,
            replicates: 1,
            seed,
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let g = gaussian_scenario(9);
        assert_eq!(simulate_gaussian(&g, 3).unwrap(), simulate_gaussian(&g, 3).unwrap());
        assert_ne!(simulate_gaussian(&g, 3).unwrap().y, simulate_gaussian(&g, 4).unwrap().y);
        let p = poisson_scenario(9);
        assert_eq!(simulate_poisson(&p, 0).unwrap(), simulate_poisson(&p, 0).unwrap());
    }

    #[test]
    fn simulated_moments_match() {
        let g = gaussian_scenario(10);
        let p = poisson_scenario(10);
        let t = 17;
        let n = 10_000;
        let gs: Vec<f64> = (0..n).map(|r| simulate_gaussian(&g, r).unwrap().y[t]).collect();
        let truth = simulate_gaussian(&g, 0).unwrap();
        let m = gs.iter().sum::<f64>() / n as f64;
        let v = gs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v - truth.var[t]).abs() / truth.var[t] < 0.05);

        let ps: Vec<f64> = (0..n).map(|r| simulate_poisson(&p, r).unwrap().counts[t] as f64).collect();
        let lambda = simulate_poisson(&p, 0).unwrap().intensity[t];
        let m = ps.iter().sum::<f64>() / n as f64;
        assert!((m - lambda).abs() < 3.0 * (lambda / n as f64).sqrt());
    }

    #[test]
    fn mise_examples() {
        let truth: Vec<f64> = (0..1024).map(|i| (i as f64).sin()).collect();
        assert_eq!(mise(&truth, &truth).unwrap(), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|x| x + 1.0).collect();
        assert!((mise(&shifted, &truth).unwrap() - 1024.0).abs() < 1e-9);
        assert!(mise(&truth[..3], &truth).is_err());
    }

    #[test]
    fn anscombe_baseline() {
        assert_eq!(baseline_anscombe(&[0; 64]).unwrap(), vec![0.0; 64]);
        let mut rng = replicate_rng(4, 0);
        let d = Poisson::new(64.0).unwrap();
        let counts: Vec<u64> = (0..1024).map(|_| d.sample(&mut rng) as u64).collect();
        let est = baseline_anscombe(&counts).unwrap();
        assert!(est.iter().all(|&v| v.is_finite() && v >= 0.0));
        assert!(est.iter().all(|&v| (v - 64.0).abs() < 6.4));
    }

    #[test]
    fn ti_thresh_baseline() {
        let mut rng = replicate_rng(5, 0);
        let y: Vec<f64> = (0..1024).map(|_| StandardNormal.sample(&mut rng)).collect();
        let est = baseline_ti_thresh(&y, &vec![1.0; 1024]).unwrap();
        assert!(est.iter().map(|v| v * v).sum::<f64>() / 1024.0 < 0.05);

        let exact = baseline_ti_thresh(&y, &vec![0.0; 1024]).unwrap();
        for (a, b) in exact.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }

        let sd: Vec<f64> = (0..64).map(|i| 0.1 + (i % 5) as f64 * 0.05).collect();
        let y = &y[..64];
        let base = baseline_ti_thresh(y, &sd).unwrap();
        let shifted = baseline_ti_thresh(&wavelet::rotate(y, 9), &wavelet::rotate(&sd, 9)).unwrap();
        for (a, b) in wavelet::rotate(&base, 9).iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(baseline_ti_thresh(y, &[-1.0; 64]).is_err());
    }

    fn small_config() -> BenchConfig {
        BenchConfig {
            seed: 42,
            replicates: 3,
            scenarios: vec![ScenarioConfig {
                name: None,
                mean_fn: "bumps".into(),
                noise: Noise::Poisson { min: 0.1, max: 5.0 },
                len: 128,
                replicates: None,
                methods: vec![Method::Smash, Method::Anscombe],
            }],
        }
    }

    #[test]
    fn benchmark_cardinality_and_determinism() {
        let report = run_benchmark(&small_config()).unwrap();
        assert_eq!(report.records.len(), 6);
        assert!(report.records.iter().all(|r| r.mise_sum.unwrap() >= 0.0));
        assert_eq!(report.summaries.len(), 2);
        let again = run_benchmark(&small_config()).unwrap();
        assert_eq!(report.to_csv(), again.to_csv());
        assert_eq!(report.to_json(), again.to_json());
        assert!(report.to_csv().starts_with("scenario,mean_fn,var_fn_or_range,T,method,replicate,mise_sum,mise_mean\n"));
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.scenarios[0].methods = vec![Method::TiThresh];
        assert!(matches!(c.scenarios(), Err(BenchError::InvalidScenario { .. })));
        let mut c = small_config();
        c.scenarios[0].len = 100;
        assert!(c.scenarios().is_err());
        let mut c = small_config();
        c.scenarios[0].mean_fn = "nope".into();
        assert!(c.scenarios().is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let c = small_config();
        let text = serde_json::to_string(&c).unwrap();
        let back: BenchConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let minimal: BenchConfig = serde_json::from_str(
            r#"{"scenarios":[{"mean_fn":"spikes","noise":"gaussian","var_fn":"constant","snr":3,"methods":["smash"]}]}"#,
        )
        .unwrap();
        assert_eq!(minimal.seed, 1);
        assert_eq!(minimal.scenarios[0].len, 1024);
    }

    #[test]
    fn suites_resolve() {
        let p = suite("poisson-tables", 1, 5).unwrap();
        assert_eq!(p.scenarios().unwrap().len(), 18);
        let g = suite("gaussian-figures", 1, 5).unwrap();
        assert_eq!(g.scenarios().unwrap().len(), 3);
        assert!(matches!(suite("nope", 1, 1), Err(BenchError::UnknownSuite(_))));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}

//! Heteroskedastic Gaussian smoothing.
//!
//! Observations are modelled as `y_t = mu_t + e_t` with `e_t ~ N(0, sigma_t^2)`
//! independent. The mean is estimated by shrinking every level of the
//! non-decimated wavelet table of `y` with [`ash`](crate::ash), using the
//! propagated per-cell noise variances as standard errors. The variance is
//! estimated the same way from the squared residuals `Z^2 = (y - mu)^2`, whose
//! own sampling variance is taken as `(2/3) Z^4`. [`smooth_joint`] alternates
//! the two.

use rayon::prelude::*;
use thiserror::Error;

use crate::ash::{self, AshError, FitOptions, ObservationSet};
use crate::wavelet::{self, FilterPair, TiCoefficientTable, WaveletError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaussError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("variance {value} at position {index} must be positive and finite")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error("non-finite observation at position {0}")]
    NonFinite(usize),
    #[error("signal of length {0} is too short")]
    TooShort(usize),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Ash(#[from] AshError),
}

/// Filters used for the two smoothing problems, shrinkage settings, and the
/// homoskedastic switch.
#[derive(Debug, Clone)]
pub struct GaussOptions {
    pub mean_filter: FilterPair,
    pub var_filter: FilterPair,
    /// Collapse every variance estimate to its average.
    pub homoskedastic: bool,
    pub fit: FitOptions,
}

impl Default for GaussOptions {
    fn default() -> Self {
        Self {
            mean_filter: FilterPair::symmlet8(),
            var_filter: FilterPair::haar(),
            homoskedastic: false,
            fit: FitOptions::smoothing(),
        }
    }
}

/// Smoothed mean with its noise sd and an approximate pointwise band
/// `mean +/- 2 * posterior sd`.
///
/// The band treats all wavelet coefficients as independent and averages the
/// per-shift reconstruction variances, so it is only an approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub band_lower: Vec<f64>,
    pub band_upper: Vec<f64>,
    pub iterations: usize,
}

/// Coefficients of the squared residuals and their estimated sampling variances.
#[derive(Debug, Clone, PartialEq)]
pub struct VarCoefficients {
    /// `W Z^2`, with `variances` holding `sum_l (2/3) Z_l^4 W_l^2`.
    pub delta: TiCoefficientTable,
}

impl VarCoefficients {
    pub fn gamma_var(&self) -> &[Vec<f64>] {
        self.delta.variances.as_deref().unwrap_or(&[])
    }
}

/// Mean estimate and the approximate posterior variance of each entry.
struct Shrunk {
    mean: Vec<f64>,
    posterior_var: Vec<f64>,
}

const SE_FLOOR_RELATIVE: f64 = 1e-8;
const VAR_FLOOR_RELATIVE: f64 = 1e-8;
const VAR_FLOOR_ABSOLUTE: f64 = 1e-12;

fn check_finite(values: &[f64]) -> Result<(), GaussError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(GaussError::NonFinite(i)),
        None => Ok(()),
    }
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<(), GaussError> {
    if a.len() != b.len() {
        return Err(GaussError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Shrinks one level; returns posterior means and variances.
fn shrink_level(
    coeffs: &[f64],
    omega2: &[f64],
    fit: &FitOptions,
) -> Result<(Vec<f64>, Vec<f64>), AshError> {
    let max_se = omega2.iter().fold(0.0_f64, |m, v| m.max(v.sqrt()));
    if max_se == 0.0 {
        // noiseless level: coefficients are known exactly
        return Ok((coeffs.to_vec(), vec![0.0; coeffs.len()]));
    }
    let floor = max_se * SE_FLOOR_RELATIVE;
    let se = omega2.iter().map(|v| v.sqrt().max(floor)).collect();
    let obs = ObservationSet::new(coeffs.to_vec(), se)?;
    let (_, post) = ash::shrink_with(&obs, fit)?;
    Ok((post.mean, post.variance))
}

/// Shrinks the TI table of `y` given per-point noise variances `obs_var >= 0`.
fn shrink_ti(
    y: &[f64],
    obs_var: &[f64],
    filter: &FilterPair,
    fit: &FitOptions,
) -> Result<Shrunk, GaussError> {
    let mut table = wavelet::ndwt(y, filter)?;
    let omega2 = wavelet::propagate_variance(obs_var, filter)?;
    let levels = table.levels();
    let len = y.len();

    let shrunk: Vec<(Vec<f64>, Vec<f64>)> = table
        .details
        .par_iter()
        .zip(omega2.par_iter())
        .map(|(row, var)| shrink_level(row, var, fit))
        .collect::<Result<_, _>>()?;

    let mut post_var = Vec::with_capacity(levels);
    for (row, (mean, var)) in table.details.iter_mut().zip(shrunk) {
        *row = mean;
        post_var.push(var);
    }
    let mean = wavelet::indwt_average(&table, filter)?;

    let weights: Vec<f64> = (0..levels)
        .map(|j| (1u64 << j) as f64 / len as f64)
        .collect();
    let mut posterior_var = wavelet::back_propagate_variance(&post_var, &weights, filter)?;
    // the scaling coefficient is not shrunk; its row of W is constant 1/sqrt(T)
    let scaling_var = obs_var.iter().sum::<f64>() / (len as f64 * len as f64);
    posterior_var.iter_mut().for_each(|v| *v += scaling_var);

    Ok(Shrunk {
        mean,
        posterior_var,
    })
}

fn band(mean: &[f64], posterior_var: &[f64]) -> (Vec<f64>, Vec<f64>) {
    mean.iter()
        .zip(posterior_var)
        .map(|(m, v)| {
            let half = 2.0 * v.max(0.0).sqrt();
            (m - half, m + half)
        })
        .unzip()
}

/// Mean estimate when the noise variance of every observation is known.
pub fn smooth_mean_known_var(
    y: &[f64],
    var: &[f64],
    filter: &FilterPair,
) -> Result<GaussianFit, GaussError> {
    smooth_mean_known_var_with(y, var, filter, &FitOptions::smoothing())
}

pub fn smooth_mean_known_var_with(
    y: &[f64],
    var: &[f64],
    filter: &FilterPair,
    fit: &FitOptions,
) -> Result<GaussianFit, GaussError> {
    check_same_len(y, var)?;
    wavelet::log2_exact(y.len())?;
    check_finite(y)?;
    if let Some(index) = var.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(GaussError::NonPositiveVariance {
            index,
            value: var[index],
        });
    }
    let shrunk = shrink_ti(y, var, filter, fit)?;
    let (band_lower, band_upper) = band(&shrunk.mean, &shrunk.posterior_var);
    Ok(GaussianFit {
        mean: shrunk.mean,
        sd: var.iter().map(|v| v.sqrt()).collect(),
        band_lower,
        band_upper,
        iterations: 0,
    })
}

/// Wavelet coefficients of the squared residuals with their variance estimates.
pub fn variance_coefficients(
    y: &[f64],
    mu: &[f64],
    filter: &FilterPair,
) -> Result<VarCoefficients, GaussError> {
    check_same_len(y, mu)?;
    check_finite(y)?;
    check_finite(mu)?;
    let z2: Vec<f64> = y.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).collect();
    let z4: Vec<f64> = z2.iter().map(|z| 2.0 / 3.0 * z * z).collect();
    let mut delta = wavelet::ndwt(&z2, filter)?;
    delta.variances = Some(wavelet::propagate_variance(&z4, filter)?);
    Ok(VarCoefficients { delta })
}

fn variance_floor(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if mean > 0.0 {
        VAR_FLOOR_RELATIVE * mean
    } else {
        VAR_FLOOR_ABSOLUTE
    }
}

/// Variance estimate when the mean is known.
///
/// Output is floored at `1e-8 * mean(Z^2)` (or `1e-12` if every residual is 0).
pub fn estimate_variance_known_mean(
    y: &[f64],
    mu: &[f64],
    filter: &FilterPair,
) -> Result<Vec<f64>, GaussError> {
    estimate_variance_known_mean_with(y, mu, filter, &FitOptions::smoothing())
}

pub fn estimate_variance_known_mean_with(
    y: &[f64],
    mu: &[f64],
    filter: &FilterPair,
    fit: &FitOptions,
) -> Result<Vec<f64>, GaussError> {
    check_same_len(y, mu)?;
    wavelet::log2_exact(y.len())?;
    check_finite(y)?;
    check_finite(mu)?;
    let z2: Vec<f64> = y.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).collect();
    let floor = variance_floor(&z2);
    if z2.iter().all(|&z| z == 0.0) {
        return Ok(vec![floor; y.len()]);
    }
    let z4: Vec<f64> = z2.iter().map(|z| 2.0 / 3.0 * z * z).collect();
    let shrunk = shrink_ti(&z2, &z4, filter, fit)?;
    Ok(shrunk.mean.into_iter().map(|v| v.max(floor)).collect())
}

/// Half the mean squared difference to the two circular neighbours, floored
/// like [`estimate_variance_known_mean`].
pub fn initial_variance(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let raw: Vec<f64> = (0..n)
        .map(|t| {
            let prev = y[(t + n - 1) % n];
            let next = y[(t + 1) % n];
            0.5 * ((y[t] - prev).powi(2) + (y[t] - next).powi(2))
        })
        .collect();
    let floor = variance_floor(&raw);
    raw.into_iter().map(|v| v.max(floor)).collect()
}

fn flatten(var: Vec<f64>) -> Vec<f64> {
    let mean = var.iter().sum::<f64>() / var.len() as f64;
    vec![mean; var.len()]
}

/// Joint mean and variance estimation with default filters.
pub fn smooth_joint(y: &[f64], cycles: usize) -> Result<GaussianFit, GaussError> {
    smooth_joint_with(y, cycles, &GaussOptions::default())
}

/// Initial variance from neighbour differences, then `cycles` rounds of
/// (mean given variance, variance given mean). With `cycles == 0` the result
/// is the mean fit under the initial variance.
pub fn smooth_joint_with(
    y: &[f64],
    cycles: usize,
    options: &GaussOptions,
) -> Result<GaussianFit, GaussError> {
    if y.len() < 4 {
        return Err(GaussError::TooShort(y.len()));
    }
    wavelet::log2_exact(y.len())?;
    check_finite(y)?;

    let mut var = initial_variance(y);
    if options.homoskedastic {
        var = flatten(var);
    }
    let mut shrunk = shrink_ti(y, &var, &options.mean_filter, &options.fit)?;
    for cycle in 0..cycles {
        if cycle > 0 {
            shrunk = shrink_ti(y, &var, &options.mean_filter, &options.fit)?;
        }
        var = estimate_variance_known_mean_with(y, &shrunk.mean, &options.var_filter, &options.fit)?;
        if options.homoskedastic {
            var = flatten(var);
        }
    }
    let (band_lower, band_upper) = band(&shrunk.mean, &shrunk.posterior_var);
    Ok(GaussianFit {
        mean: shrunk.mean,
        sd: var.iter().map(|v| v.sqrt()).collect(),
        band_lower,
        band_upper,
        iterations: cycles,
    })
}

/// Recovers the original samples from a padded series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unpad {
    pub original_len: usize,
    pub padded_len: usize,
}

impl Unpad {
    pub fn apply<T: Copy>(&self, padded: &[T]) -> Vec<T> {
        padded[..self.original_len].to_vec()
    }
}

/// Pads an arbitrary-length series to a periodic power-of-two series.
///
/// The data are mirrored about the right edge and cut to `m = 2^ceil(log2 n)`
/// samples, then that series is mirrored about its right edge again, giving
/// `2m` samples whose first `n` are the input.
pub fn reflect_pad<T: Copy>(y: &[T]) -> Result<(Vec<T>, Unpad), GaussError> {
    let n = y.len();
    if n < 2 {
        return Err(GaussError::TooShort(n));
    }
    let m = n.next_power_of_two();
    let first: Vec<T> = y.iter().chain(y.iter().rev()).take(m).copied().collect();
    let padded: Vec<T> = first.iter().chain(first.iter().rev()).copied().collect();
    let unpad = Unpad {
        original_len: n,
        padded_len: padded.len(),
    };
    Ok((padded, unpad))
}

/// Linear interpolation of `(xs, values)` at `x`; `xs` must be increasing.
/// Queries outside the range take the nearest end value.
pub fn interpolate_linear(xs: &[f64], values: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), values.len());
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if x <= xs[0] {
        return values[0];
    }
    if x >= xs[n - 1] {
        return values[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (values[i - 1], values[i]);
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

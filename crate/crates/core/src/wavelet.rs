//! Periodic orthonormal wavelet transforms on signals of length `T = 2^J`.
//!
//! Two representations are provided:
//!
//! * the decimated pyramid ([`dwt`] / [`idwt`]), i.e. multiplication by the
//!   orthogonal matrix `W` induced by a [`FilterPair`];
//! * the non-decimated, translation-invariant table ([`ndwt`] /
//!   [`indwt_average`]) which holds, at every level, the detail coefficient of
//!   every circulant shift of the input.
//!
//! Boundaries are always periodic. The decomposition is always taken to full
//! depth `J = log2(T)`.
//!
//! # Table layout
//!
//! Tables are level-major. `details[j]` holds level `j` (0 = coarsest, `J-1` =
//! finest) and has `T` entries indexed by position `p`. Cell `(j, p)` is the
//! coefficient whose filter support starts at sample `p`. The decimated
//! coefficient `k` at level `j` of the left-rotated signal `y[(i + s) mod T]`
//! lives at cell `(j, (k * 2^(J-j) + s) mod T)`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

/// Errors raised by the transforms.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveletError {
    #[error("signal length {0} is not a power of two >= 2")]
    NonPowerOfTwoLength(usize),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("malformed coefficient pyramid: {0}")]
    MalformedPyramid(String),
    #[error("malformed coefficient table: {0}")]
    MalformedTable(String),
    #[error("negative variance {value} at position {index}")]
    NegativeVariance { index: usize, value: f64 },
    #[error("filter `{name}` is not orthonormal (deviation {deviation:e})")]
    NotOrthonormal { name: String, deviation: f64 },
}

const ORTHONORMAL_TOL: f64 = 1e-12;

const HAAR_LOW: [f64; 2] = [
    std::f64::consts::FRAC_1_SQRT_2,
    std::f64::consts::FRAC_1_SQRT_2,
];

/// Least-asymmetric Daubechies scaling filter with eight vanishing moments
/// (16 taps), in the same phase convention as the common published tables.
#[rustfmt::skip]
#[allow(clippy::excessive_precision)]
const SYMMLET8_LOW: [f64; 16] = [
    -0.003_382_415_951_005_002_595_458,
    -0.000_542_132_331_800_010_689_347_8,
     0.031_695_087_811_525_991_431_43,
     0.007_607_487_324_976_608_191_921,
    -0.143_294_238_351_272_662_844_1,
    -0.061_273_359_067_811_077_843_05,
     0.481_359_651_259_053_391_589_6,
     0.777_185_751_699_628_028_624_3,
     0.364_441_894_836_178_936_759_6,
    -0.051_945_838_107_881_800_735_71,
    -0.027_219_029_917_103_486_321_96,
     0.049_137_179_673_730_286_786_91,
     0.003_808_752_013_894_489_463_072,
    -0.014_952_258_337_062_199_118_49,
    -0.000_302_920_514_724_133_081_263_9,
     0.001_889_950_332_767_689_184_274,
];

/// An orthonormal two-channel filter bank.
///
/// The detail filter is the quadrature mirror of the scaling filter:
/// `high[n] = (-1)^n * low[L-1-n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPair {
    name: String,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl FilterPair {
    /// Builds a filter pair from scaling taps, validating orthonormality.
    pub fn from_scaling(name: impl Into<String>, low: &[f64]) -> Result<Self, WaveletError> {
        let name = name.into();
        let len = low.len();
        if len < 2 || !len.is_multiple_of(2) {
            return Err(WaveletError::NotOrthonormal {
                name,
                deviation: f64::INFINITY,
            });
        }
        let high: Vec<f64> = (0..len)
            .map(|n| {
                let v = low[len - 1 - n];
                if n % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let filter = Self {
            name,
            low: low.to_vec(),
            high,
        };
        let deviation = filter.orthonormality_deviation();
        if deviation > ORTHONORMAL_TOL {
            return Err(WaveletError::NotOrthonormal {
                name: filter.name,
                deviation,
            });
        }
        Ok(filter)
    }

    pub fn haar() -> Self {
        Self::from_scaling("haar", &HAAR_LOW).expect("haar taps are orthonormal")
    }

    pub fn symmlet8() -> Self {
        Self::from_scaling("symmlet8", &SYMMLET8_LOW).expect("symmlet8 taps are orthonormal")
    }

    /// Looks up a built-in filter by (case-insensitive) name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "haar" => Some(Self::haar()),
            "symmlet8" | "sym8" | "s8" => Some(Self::symmlet8()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    /// Largest violation of the double-shift orthonormality relations.
    pub fn orthonormality_deviation(&self) -> f64 {
        let len = self.low.len() as isize;
        let lag = |a: &[f64], b: &[f64], m: isize| -> f64 {
            (0..len)
                .filter_map(|n| {
                    let k = n + 2 * m;
                    (0..len).contains(&k).then(|| a[n as usize] * b[k as usize])
                })
                .sum()
        };
        let mut worst = 0.0_f64;
        for m in -(len / 2)..=(len / 2) {
            let target = if m == 0 { 1.0 } else { 0.0 };
            worst = worst
                .max((lag(&self.low, &self.low, m) - target).abs())
                .max((lag(&self.high, &self.high, m) - target).abs())
                .max(lag(&self.low, &self.high, m).abs());
        }
        worst
    }
}

/// Decimated pyramid: `details[j]` has `2^j` entries, `j = 0..J`.
#[derive(Debug, Clone, PartialEq)]
pub struct DwtCoefficients {
    pub details: Vec<Vec<f64>>,
    pub scaling: f64,
}

impl DwtCoefficients {
    /// Total number of coefficients (equals the signal length).
    pub fn len(&self) -> usize {
        1 + self.details.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coefficients flattened coarse-to-fine: scaling first, then each level.
    pub fn to_flat(&self) -> Vec<f64> {
        std::iter::once(self.scaling)
            .chain(self.details.iter().flatten().copied())
            .collect()
    }
}

/// Non-decimated (translation-invariant) coefficient table.
#[derive(Debug, Clone, PartialEq)]
pub struct TiCoefficientTable {
    /// `J` rows of `T` detail coefficients, coarsest level first.
    pub details: Vec<Vec<f64>>,
    /// Optional per-cell sampling variances, same shape as `details`.
    pub variances: Option<Vec<Vec<f64>>>,
    /// The coarsest scaling coefficient; identical for every shift.
    pub scaling: f64,
}

impl TiCoefficientTable {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn signal_len(&self) -> usize {
        self.details.first().map_or(0, Vec::len)
    }
}

/// Returns `J` with `n = 2^J`, `J >= 1`.
pub fn log2_exact(n: usize) -> Result<u32, WaveletError> {
    if n < 2 || !n.is_power_of_two() {
        return Err(WaveletError::NonPowerOfTwoLength(n));
    }
    Ok(n.trailing_zeros())
}

fn check_signal(signal: &[f64]) -> Result<u32, WaveletError> {
    let levels = log2_exact(signal.len())?;
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(WaveletError::NonFinite(i));
    }
    Ok(levels)
}

/// Circulant shift moving every sample `shift` places to the right.
pub fn rotate<T: Copy>(values: &[T], shift: usize) -> Vec<T> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let shift = shift % n;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&values[n - shift..]);
    out.extend_from_slice(&values[..n - shift]);
    out
}

/// Periodic decimated wavelet transform (`W * signal`).
pub fn dwt(signal: &[f64], filter: &FilterPair) -> Result<DwtCoefficients, WaveletError> {
    let levels = check_signal(signal)? as usize;
    let mut approx = signal.to_vec();
    let mut details = vec![Vec::new(); levels];
    for j in (0..levels).rev() {
        let len = approx.len();
        let half = len / 2;
        let mut next = vec![0.0; half];
        let mut detail = vec![0.0; half];
        for k in 0..half {
            let (mut a, mut d) = (0.0, 0.0);
            for (n, (&lo, &hi)) in filter.low.iter().zip(&filter.high).enumerate() {
                let x = approx[(2 * k + n) % len];
                a += lo * x;
                d += hi * x;
            }
            next[k] = a;
            detail[k] = d;
        }
        details[j] = detail;
        approx = next;
    }
    Ok(DwtCoefficients {
        details,
        scaling: approx[0],
    })
}

/// Inverse of [`dwt`].
pub fn idwt(coeffs: &DwtCoefficients, filter: &FilterPair) -> Result<Vec<f64>, WaveletError> {
    if coeffs.details.is_empty() {
        return Err(WaveletError::MalformedPyramid("no detail levels".into()));
    }
    for (j, level) in coeffs.details.iter().enumerate() {
        if level.len() != 1 << j {
            return Err(WaveletError::MalformedPyramid(format!(
                "level {j} has {} entries, expected {}",
                level.len(),
                1usize << j
            )));
        }
    }
    let mut approx = vec![coeffs.scaling];
    for detail in &coeffs.details {
        let half = approx.len();
        let len = 2 * half;
        let mut out = vec![0.0; len];
        for k in 0..half {
            for (n, (&lo, &hi)) in filter.low.iter().zip(&filter.high).enumerate() {
                out[(2 * k + n) % len] += lo * approx[k] + hi * detail[k];
            }
        }
        approx = out;
    }
    Ok(approx)
}

/// Non-decimated transform via the a-trous cascade.
///
/// Row `j` holds the level-`j` detail coefficient of every circulant shift.
pub fn ndwt(signal: &[f64], filter: &FilterPair) -> Result<TiCoefficientTable, WaveletError> {
    let levels = check_signal(signal)? as usize;
    let len = signal.len();
    let mut approx = signal.to_vec();
    let mut details = vec![Vec::new(); levels];
    for step in 0..levels {
        let dilation = 1usize << step;
        let mut next = vec![0.0; len];
        let mut detail = vec![0.0; len];
        for p in 0..len {
            let (mut a, mut d) = (0.0, 0.0);
            for (n, (&lo, &hi)) in filter.low.iter().zip(&filter.high).enumerate() {
                let x = approx[(p + n * dilation) % len];
                a += lo * x;
                d += hi * x;
            }
            next[p] = a;
            detail[p] = d;
        }
        details[levels - 1 - step] = detail;
        approx = next;
    }
    Ok(TiCoefficientTable {
        details,
        variances: None,
        scaling: approx[0],
    })
}

fn check_table(table: &TiCoefficientTable) -> Result<(usize, usize), WaveletError> {
    let levels = table.levels();
    let len = table.signal_len();
    if levels == 0 || len != 1 << levels {
        return Err(WaveletError::MalformedTable(format!(
            "{levels} levels of length {len}"
        )));
    }
    if let Some(j) = table.details.iter().position(|row| row.len() != len) {
        return Err(WaveletError::MalformedTable(format!(
            "row {j} has {} entries, expected {len}",
            table.details[j].len()
        )));
    }
    Ok((levels, len))
}

/// Average-basis inverse: the mean over all `T` circulant shifts of the
/// decimated inverse of each shift's coefficients, rotated back.
pub fn indwt_average(table: &TiCoefficientTable, filter: &FilterPair) -> Result<Vec<f64>, WaveletError> {
    let (levels, len) = check_table(table)?;
    let mut approx = vec![table.scaling; len];
    for step in (0..levels).rev() {
        let dilation = 1usize << step;
        let detail = &table.details[levels - 1 - step];
        let mut out = vec![0.0; len];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (n, (&lo, &hi)) in filter.low.iter().zip(&filter.high).enumerate() {
                let q = (i + len - (n * dilation) % len) % len;
                acc += lo * approx[q] + hi * detail[q];
            }
            *slot = 0.5 * acc;
        }
        approx = out;
    }
    Ok(approx)
}

/// Per-level squared equivalent filters, laid out so that
/// `coefficient(j, p) = sum_m sqrt(kernel[j][(p - m) mod T]) * x[m]` in magnitude.
///
/// Row `j` is the squared response of the table to a unit impulse at 0.
pub fn squared_kernels(len: usize, filter: &FilterPair) -> Result<Vec<Vec<f64>>, WaveletError> {
    log2_exact(len)?;
    let mut impulse = vec![0.0; len];
    impulse[0] = 1.0;
    let table = ndwt(&impulse, filter)?;
    Ok(table
        .details
        .into_iter()
        .map(|row| row.into_iter().map(|w| w * w).collect())
        .collect())
}

/// Sampling variance of every table cell for independent inputs with
/// variances `var`: `omega2[j][p] = sum_t var[t] * W[(j,p), t]^2`.
pub fn propagate_variance(var: &[f64], filter: &FilterPair) -> Result<Vec<Vec<f64>>, WaveletError> {
    log2_exact(var.len())?;
    if let Some(i) = var.iter().position(|v| !v.is_finite()) {
        return Err(WaveletError::NonFinite(i));
    }
    if let Some(index) = var.iter().position(|&v| v < 0.0) {
        return Err(WaveletError::NegativeVariance {
            index,
            value: var[index],
        });
    }
    let kernels = squared_kernels(var.len(), filter)?;
    Ok(kernels
        .iter()
        .map(|kernel| circular_convolve(var, kernel))
        .collect())
}

/// Transpose of [`propagate_variance`]: maps per-cell variances back to the
/// signal domain as `sum_p kernel[j][(p - t) mod T] * cell_var[j][p]`, each
/// level weighted by `weights[j]`.
pub(crate) fn back_propagate_variance(
    cell_var: &[Vec<f64>],
    weights: &[f64],
    filter: &FilterPair,
) -> Result<Vec<f64>, WaveletError> {
    let len = cell_var.first().map_or(0, Vec::len);
    let kernels = squared_kernels(len, filter)?;
    let mut out = vec![0.0; len];
    for ((kernel, row), &w) in kernels.iter().zip(cell_var).zip(weights) {
        let reversed: Vec<f64> = (0..len).map(|r| kernel[(len - r) % len]).collect();
        for (o, v) in out.iter_mut().zip(circular_convolve(row, &reversed)) {
            *o += w * v;
        }
    }
    Ok(out)
}

const DIRECT_CONVOLUTION_MAX: usize = 256;

/// `out[p] = sum_q kernel[q] * values[(p - q) mod n]`, clamped at 0 for the
/// nonnegative inputs this is used with.
pub(crate) fn circular_convolve(values: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = values.len();
    debug_assert_eq!(n, kernel.len());
    if n <= DIRECT_CONVOLUTION_MAX {
        return (0..n)
            .map(|p| {
                (0..n)
                    .map(|q| kernel[q] * values[(p + n - q) % n])
                    .sum::<f64>()
                    .max(0.0)
            })
            .collect();
    }
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut b: Vec<Complex<f64>> = kernel.iter().map(|&v| Complex::new(v, 0.0)).collect();
    forward.process(&mut a);
    forward.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inverse.process(&mut a);
    let scale = 1.0 / n as f64;
    a.iter().map(|c| (c.re * scale).max(0.0)).collect()
}

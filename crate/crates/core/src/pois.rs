//! Poisson intensity smoothing with the multiscale binomial decomposition.
//!
//! Counts `y_t ~ Poi(mu_t)` are summarized by block sums at every scale. Each
//! block splits into two halves whose counts are binomial given the parent
//! total, with success probability `p = f(alpha)`, `f(x) = e^x / (1 + e^x)`.
//! The log-odds `alpha` are estimated for every level and every circulant
//! shift, shrunk toward zero per level with [`ash`](crate::ash), and mapped
//! back to intensities averaged over all shifts.
//!
//! Cells use the same layout as [`wavelet`](crate::wavelet) tables: cell
//! `(j, p)` describes the split of the block of length `2^(J-j)` starting at
//! sample `p` (circularly).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ash::{self, AshError, FitOptions, ObservationSet};
use crate::wavelet::{self, WaveletError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoisError {
    #[error("block has no counts on either side")]
    EmptyBlock,
    #[error("malformed table: {0}")]
    MalformedTable(String),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Ash(#[from] AshError),
}

/// Log-odds estimate and standard error for `s` successes and `f` failures,
/// with Tukey's half-count correction when either side is empty.
pub fn gart_estimate(s: u64, f: u64) -> Result<(f64, f64), PoisError> {
    let n = s + f;
    if n == 0 {
        return Err(PoisError::EmptyBlock);
    }
    let (sf, ff, nf) = (s as f64, f as f64, n as f64);
    let alpha = if s == 0 {
        ((sf + 0.5) / (ff + 0.5)).ln() - 0.5
    } else if s == n {
        ((sf + 0.5) / (ff + 0.5)).ln() + 0.5
    } else {
        (sf / ff).ln()
    };
    let v3 = (nf + 1.0) / nf * (1.0 / (sf + 1.0) + 1.0 / (ff + 1.0));
    let v_star = v3 * (1.0 - 2.0 / nf + v3 / 2.0);
    let var = v_star - 0.5 * v3 * v3 * (v3 - 4.0 / nf);
    Ok((alpha, var.sqrt()))
}

/// Translation-invariant table of split estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonTiTable {
    /// `alpha_hat[j][p]`; zero for empty blocks.
    pub alpha_hat: Vec<Vec<f64>>,
    /// Standard errors; `+inf` marks empty blocks that carry no information.
    pub se: Vec<Vec<f64>>,
    pub post_mean: Vec<Vec<f64>>,
    pub post_var: Vec<Vec<f64>>,
    /// `totals[j][p]`: sum of the `2^(J-j)` counts starting at `p`; `totals[J]`
    /// are the counts themselves.
    pub totals: Vec<Vec<u64>>,
    pub grand_total: u64,
}

impl PoissonTiTable {
    pub fn levels(&self) -> usize {
        self.alpha_hat.len()
    }

    pub fn signal_len(&self) -> usize {
        self.totals.last().map_or(0, Vec::len)
    }

    fn check(&self) -> Result<(usize, usize), PoisError> {
        let levels = self.levels();
        let len = self.signal_len();
        if levels == 0 || len != 1 << levels || self.totals.len() != levels + 1 {
            return Err(PoisError::MalformedTable(format!(
                "{levels} levels for {len} samples"
            )));
        }
        for (name, rows) in [
            ("alpha_hat", &self.alpha_hat),
            ("se", &self.se),
            ("post_mean", &self.post_mean),
            ("post_var", &self.post_var),
        ] {
            if rows.len() != levels || rows.iter().any(|r| r.len() != len) {
                return Err(PoisError::MalformedTable(format!("{name} has the wrong shape")));
            }
        }
        if self.totals.iter().any(|r| r.len() != len) {
            return Err(PoisError::MalformedTable("totals have the wrong shape".into()));
        }
        Ok((levels, len))
    }
}

/// Block sums and split estimates for every level and circulant shift.
pub fn build_ti_table(counts: &[u64]) -> Result<PoissonTiTable, PoisError> {
    let levels = wavelet::log2_exact(counts.len())? as usize;
    let len = counts.len();
    let mut totals = vec![Vec::new(); levels + 1];
    totals[levels] = counts.to_vec();
    for j in (0..levels).rev() {
        let half = 1usize << (levels - j - 1);
        let child = &totals[j + 1];
        totals[j] = (0..len).map(|p| child[p] + child[(p + half) % len]).collect();
    }
    let mut alpha_hat = vec![vec![0.0; len]; levels];
    let mut se = vec![vec![f64::INFINITY; len]; levels];
    for j in 0..levels {
        let half = 1usize << (levels - j - 1);
        let child = &totals[j + 1];
        for p in 0..len {
            if let Ok((a, s)) = gart_estimate(child[p], child[(p + half) % len]) {
                alpha_hat[j][p] = a;
                se[j][p] = s;
            }
        }
    }
    let grand_total = counts.iter().sum();
    Ok(PoissonTiTable {
        alpha_hat,
        se,
        post_mean: vec![vec![0.0; len]; levels],
        post_var: vec![vec![0.0; len]; levels],
        totals,
        grand_total,
    })
}

fn shrink_row(alpha: &[f64], se: &[f64], fit: &FitOptions) -> Result<(Vec<f64>, Vec<f64>), AshError> {
    let informative: Vec<usize> = (0..alpha.len()).filter(|&p| se[p].is_finite()).collect();
    let mut mean = vec![0.0; alpha.len()];
    let mut var = vec![0.0; alpha.len()];
    if informative.is_empty() {
        return Ok((mean, var));
    }
    let obs = ObservationSet::new(
        informative.iter().map(|&p| alpha[p]).collect(),
        informative.iter().map(|&p| se[p]).collect(),
    )?;
    let (_, post) = ash::shrink_with(&obs, fit)?;
    for (i, &p) in informative.iter().enumerate() {
        mean[p] = post.mean[i];
        var[p] = post.variance[i];
    }
    Ok((mean, var))
}

/// One shrinkage fit per level, pooled over all `T` cells of the level.
/// Empty blocks are left out of the fit and get a zero posterior.
pub fn shrink_table(table: &mut PoissonTiTable) -> Result<(), PoisError> {
    shrink_table_with(table, &FitOptions::smoothing())
}

pub fn shrink_table_with(table: &mut PoissonTiTable, fit: &FitOptions) -> Result<(), PoisError> {
    table.check()?;
    let shrunk: Vec<(Vec<f64>, Vec<f64>)> = table
        .alpha_hat
        .par_iter()
        .zip(table.se.par_iter())
        .map(|(a, s)| shrink_row(a, s, fit))
        .collect::<Result<_, _>>()?;
    for (j, (mean, var)) in shrunk.into_iter().enumerate() {
        table.post_mean[j] = mean;
        table.post_var[j] = var;
    }
    Ok(())
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logistic_d1(x: f64) -> f64 {
    let f = logistic(x);
    f * (1.0 - f)
}

fn logistic_d2(x: f64) -> f64 {
    let f = logistic(x);
    f * (1.0 - f) * (1.0 - 2.0 * f)
}

/// Second-order delta approximations of a split's moments given the
/// posterior mean and variance of its log-odds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMoments {
    pub p: f64,
    pub q: f64,
    pub p2: f64,
    pub q2: f64,
}

impl SplitMoments {
    pub fn delta(mean: f64, var: f64) -> Self {
        let p = logistic(mean) + 0.5 * logistic_d2(mean) * var;
        let q = logistic(-mean) + 0.5 * logistic_d2(-mean) * var;
        let p2 = p * p + logistic_d1(mean).powi(2) * var;
        let q2 = q * q + logistic_d1(-mean).powi(2) * var;
        Self { p, q, p2, q2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reconstruction {
    /// Posterior mean of the intensity on the raw scale via the delta method.
    #[default]
    Delta,
    /// Exponential of the path sum of log split proportions at the posterior
    /// mean log-odds.
    Logscale,
}

impl std::str::FromStr for Reconstruction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delta" => Ok(Self::Delta),
            "logscale" => Ok(Self::Logscale),
            other => Err(format!("unknown reconstruction `{other}` (expected delta|logscale)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonFit {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub band_lower: Vec<f64>,
    pub band_upper: Vec<f64>,
    pub method: Reconstruction,
}

const MEAN_FLOOR: f64 = 1e-12;

/// Averages root-to-leaf products over all circulant shifts.
///
/// `left[j][p]`/`right[j][p]` are the factors applied to the first/second half
/// of the block at cell `(j, p)`. Every block at level `j + 1` is the first
/// half of one parent and the second half of another, and each role covers
/// half of the shifts that use the block, so averaging the two proposals
/// gives the mean over all shifts.
fn average_over_shifts(root: f64, left: &[Vec<f64>], right: &[Vec<f64>], len: usize) -> Vec<f64> {
    let levels = left.len();
    let mut est = vec![root; len];
    for j in 0..levels {
        let half = 1usize << (levels - j - 1);
        est = (0..len)
            .map(|c| {
                let parent = (c + len - half) % len;
                0.5 * (est[c] * left[j][c] + est[parent] * right[j][parent])
            })
            .collect();
    }
    est
}

fn moments_table(table: &PoissonTiTable) -> Vec<Vec<SplitMoments>> {
    table
        .post_mean
        .iter()
        .zip(&table.post_var)
        .map(|(m, v)| m.iter().zip(v).map(|(&m, &v)| SplitMoments::delta(m, v)).collect())
        .collect()
}

fn select(moments: &[Vec<SplitMoments>], pick: impl Fn(&SplitMoments) -> f64) -> Vec<Vec<f64>> {
    moments.iter().map(|row| row.iter().map(&pick).collect()).collect()
}

fn assemble(table: &PoissonTiTable, mean: Vec<f64>, method: Reconstruction) -> Result<PoissonFit, PoisError> {
    let var = reconstruct_variance(table)?;
    let mean: Vec<f64> = if table.grand_total == 0 {
        mean
    } else {
        mean.into_iter().map(|m| m.max(MEAN_FLOOR)).collect()
    };
    let (band_lower, band_upper) = mean
        .iter()
        .zip(&var)
        .map(|(m, v)| (m - 2.0 * v.sqrt(), m + 2.0 * v.sqrt()))
        .unzip();
    Ok(PoissonFit {
        mean,
        var,
        band_lower,
        band_upper,
        method,
    })
}

/// Delta-method posterior mean of every intensity, averaged over shifts.
pub fn reconstruct_delta(table: &PoissonTiTable) -> Result<PoissonFit, PoisError> {
    let (_, len) = table.check()?;
    let moments = moments_table(table);
    let mean = average_over_shifts(
        table.grand_total as f64,
        &select(&moments, |m| m.p),
        &select(&moments, |m| m.q),
        len,
    );
    assemble(table, mean, Reconstruction::Delta)
}

/// Plug-in reconstruction on the log scale: `log mu_t = log mu_00 + sum of
/// log f(+-E alpha)` along the path, exponentiated and averaged over shifts.
pub fn reconstruct_logscale(table: &PoissonTiTable) -> Result<PoissonFit, PoisError> {
    let (_, len) = table.check()?;
    let log_factor = |sign: f64| -> Vec<Vec<f64>> {
        table
            .post_mean
            .iter()
            .map(|row| row.iter().map(|&m| logistic(sign * m).ln()).collect())
            .collect()
    };
    let (log_left, log_right) = (log_factor(1.0), log_factor(-1.0));
    let exp_rows = |rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        rows.into_iter()
            .map(|r| r.into_iter().map(f64::exp).collect())
            .collect()
    };
    let mean = average_over_shifts(
        table.grand_total as f64,
        &exp_rows(log_left),
        &exp_rows(log_right),
        len,
    );
    assemble(table, mean, Reconstruction::Logscale)
}

/// Posterior variance of every intensity: the shift average of
/// `E(mu_t^2) - E(mu_t)^2`, floored at zero.
pub fn reconstruct_variance(table: &PoissonTiTable) -> Result<Vec<f64>, PoisError> {
    let (_, len) = table.check()?;
    let moments = moments_table(table);
    let root = table.grand_total as f64;
    let second = average_over_shifts(
        root * root,
        &select(&moments, |m| m.p2),
        &select(&moments, |m| m.q2),
        len,
    );
    let mean_sq = average_over_shifts(
        root * root,
        &select(&moments, |m| m.p * m.p),
        &select(&moments, |m| m.q * m.q),
        len,
    );
    Ok(second
        .iter()
        .zip(&mean_sq)
        .map(|(a, b)| (a - b).max(0.0))
        .collect())
}

/// Delta-method intensities for a single circulant shift `shift`, in the
/// original sample order.
pub fn reconstruct_shift(table: &PoissonTiTable, shift: usize) -> Result<Vec<f64>, PoisError> {
    let (levels, len) = table.check()?;
    let moments = moments_table(table);
    let mut est = vec![table.grand_total as f64];
    for (j, row) in moments.iter().enumerate() {
        let block = len >> j;
        let mut next = Vec::with_capacity(est.len() * 2);
        for (k, &e) in est.iter().enumerate() {
            let m = row[(k * block + shift) % len];
            next.push(e * m.p);
            next.push(e * m.q);
        }
        est = next;
    }
    debug_assert_eq!(est.len(), 1 << levels);
    Ok(wavelet::rotate(&est, shift))
}

/// Full pipeline: table, per-level shrinkage, reconstruction.
pub fn smooth_poisson(counts: &[u64], method: Reconstruction) -> Result<PoissonFit, PoisError> {
    smooth_poisson_with(counts, method, &FitOptions::smoothing())
}

pub fn smooth_poisson_with(
    counts: &[u64],
    method: Reconstruction,
    fit: &FitOptions,
) -> Result<PoissonFit, PoisError> {
    let len = counts.len();
    wavelet::log2_exact(len)?;
    if counts.iter().all(|&c| c == 0) {
        let zeros = vec![0.0; len];
        return Ok(PoissonFit {
            mean: zeros.clone(),
            var: zeros.clone(),
            band_lower: zeros.clone(),
            band_upper: zeros,
            method,
        });
    }
    let mut table = build_ti_table(counts)?;
    shrink_table_with(&mut table, fit)?;
    match method {
        Reconstruction::Delta => reconstruct_delta(&table),
        Reconstruction::Logscale => reconstruct_logscale(&table),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn gart_symmetric_split() {
        let (a, se) = gart_estimate(2, 2).unwrap();
        assert_eq!(a, 0.0);
        // V3 = 5/4 * 2/3, V* = V3 (1 - 1/2 + V3/2), se^2 = V* - V3^2 (V3 - 1) / 2
        let v3: f64 = 5.0 / 4.0 * (2.0 / 3.0);
        let v_star = v3 * (0.5 + v3 / 2.0);
        let expected = (v_star - 0.5 * v3 * v3 * (v3 - 1.0)).sqrt();
        assert!((se - expected).abs() < 1e-15);
        assert!((se - 0.9065).abs() < 1e-4);
    }

    #[test]
    fn gart_branches() {
        let (a, _) = gart_estimate(0, 4).unwrap();
        assert!((a - ((0.5f64 / 4.5).ln() - 0.5)).abs() < 1e-15);
        assert!((a + 2.697).abs() < 1e-3);
        let (a, _) = gart_estimate(4, 0).unwrap();
        assert!((a - ((4.5f64 / 0.5).ln() + 0.5)).abs() < 1e-15);
        let (a, _) = gart_estimate(3, 1).unwrap();
        assert!((a - 3f64.ln()).abs() < 1e-15);
        assert_eq!(gart_estimate(0, 0), Err(PoisError::EmptyBlock));
    }

    #[test]
    fn table_hand_example() {
        let t = build_ti_table(&[1, 2, 3, 4]).unwrap();
        assert_eq!(t.grand_total, 10);
        assert!((t.alpha_hat[0][0] - (3f64 / 7.0).ln()).abs() < 1e-15);
        assert!((t.alpha_hat[1][0] - 0.5f64.ln()).abs() < 1e-15);
        assert!((t.alpha_hat[1][2] - 0.75f64.ln()).abs() < 1e-15);
        assert_eq!(t.totals[0], vec![10; 4]);
        assert_eq!(t.totals[1], vec![3, 5, 7, 5]);
    }

    #[test]
    fn table_columns_match_rotated_decompositions() {
        let y: Vec<u64> = vec![0, 3, 1, 0, 7, 2, 0, 5];
        let t = build_ti_table(&y).unwrap();
        for s in 0..8 {
            let rotated: Vec<u64> = (0..8).map(|i| y[(i + s) % 8]).collect();
            for j in 0..3 {
                let block = 8 >> j;
                for k in 0..(1 << j) {
                    let start = k * block;
                    let left: u64 = rotated[start..start + block / 2].iter().sum();
                    let right: u64 = rotated[start + block / 2..start + block].iter().sum();
                    let p = (start + s) % 8;
                    assert_eq!(t.totals[j][p], left + right);
                    match gart_estimate(left, right) {
                        Ok((a, se)) => {
                            assert_eq!(t.alpha_hat[j][p], a);
                            assert_eq!(t.se[j][p], se);
                        }
                        Err(_) => assert!(t.se[j][p].is_infinite()),
                    }
                }
            }
        }
    }

    #[test]
    fn constant_counts_give_zero_log_odds() {
        let t = build_ti_table(&[5; 16]).unwrap();
        assert!(t.alpha_hat.iter().flatten().all(|&a| a == 0.0));
        let mut t = t;
        shrink_table(&mut t).unwrap();
        assert!(t.post_mean.iter().flatten().all(|&a| a == 0.0));
    }

    #[test]
    fn flat_posterior_gives_flat_estimate() {
        let mut t = build_ti_table(&[1, 0, 4, 5]).unwrap();
        t.post_mean.iter_mut().flatten().for_each(|v| *v = 0.0);
        t.post_var.iter_mut().flatten().for_each(|v| *v = 0.0);
        let fit = reconstruct_delta(&t).unwrap();
        assert_eq!(fit.mean, vec![2.5; 4]);
        assert_eq!(reconstruct_logscale(&t).unwrap().mean, fit.mean);
        assert!(fit.var.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_mean_split_stays_half() {
        let m = SplitMoments::delta(0.0, 3.7);
        assert_eq!(m.p, 0.5);
        assert_eq!(m.q, 0.5);
    }

    fn random_shrunk_table(rng: &mut ChaCha8Rng, len: usize) -> PoissonTiTable {
        let counts: Vec<u64> = (0..len).map(|_| rng.random_range(0..20)).collect();
        let mut t = build_ti_table(&counts).unwrap();
        for (m, v) in t.post_mean.iter_mut().flatten().zip(t.post_var.iter_mut().flatten()) {
            *m = rng.random_range(-2.0..2.0);
            *v = rng.random_range(0.0..1.0);
        }
        t
    }

    #[test]
    fn single_shift_matches_path_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let t = random_shrunk_table(&mut rng, 8);
            for s in 0..8 {
                let fast = reconstruct_shift(&t, s).unwrap();
                for i in 0..8usize {
                    // bits c_1..c_3 of i, most significant first
                    let mut mu = t.grand_total as f64;
                    let mut prefix = 0usize;
                    for level in 0..3 {
                        let bit = (i >> (2 - level)) & 1;
                        let cell = (prefix * (8 >> level) + s) % 8;
                        let sm = SplitMoments::delta(t.post_mean[level][cell], t.post_var[level][cell]);
                        mu *= if bit == 0 { sm.p } else { sm.q };
                        prefix = 2 * prefix + bit;
                    }
                    assert!((fast[(i + s) % 8] - mu).abs() < 1e-12 * mu.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn shift_average_matches_explicit_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let t = random_shrunk_table(&mut rng, 16);
        let fit = reconstruct_delta(&t).unwrap();
        let mut brute = vec![0.0; 16];
        for s in 0..16 {
            for (b, v) in brute.iter_mut().zip(reconstruct_shift(&t, s).unwrap()) {
                *b += v / 16.0;
            }
        }
        for (a, b) in fit.mean.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn variance_is_nonnegative_and_zero_without_uncertainty() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let t = random_shrunk_table(&mut rng, 32);
            assert!(reconstruct_variance(&t).unwrap().iter().all(|&v| v >= 0.0));
            let mut certain = t.clone();
            certain.post_var.iter_mut().flatten().for_each(|v| *v = 0.0);
            assert!(reconstruct_variance(&certain)
                .unwrap()
                .iter()
                .all(|&v| v.abs() < 1e-9 * (t.grand_total as f64).powi(2)));
        }
    }

    #[test]
    fn single_split_variance_matches_monte_carlo() {
        let mut t = build_ti_table(&[6, 4]).unwrap();
        t.post_mean[0][0] = 0.4;
        t.post_var[0][0] = 0.09;
        t.post_mean[0][1] = -0.4;
        t.post_var[0][1] = 0.09;
        let var = reconstruct_variance(&t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let d = Normal::new(0.4, 0.3).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|_| 10.0 * logistic(d.sample(&mut rng))).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((var[0] - v).abs() / v < 0.05, "{} vs {v}", var[0]);
    }

    #[test]
    fn logscale_differs_when_uncertain() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let t = random_shrunk_table(&mut rng, 8);
        let a = reconstruct_delta(&t).unwrap();
        let b = reconstruct_logscale(&t).unwrap();
        assert!(a.mean.iter().zip(&b.mean).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn zero_counts_short_circuit() {
        let fit = smooth_poisson(&[0; 64], Reconstruction::Delta).unwrap();
        assert!(fit.mean.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn constant_counts_are_reproduced() {
        for c in [1u64, 3, 17, 64] {
            for method in [Reconstruction::Delta, Reconstruction::Logscale] {
                let fit = smooth_poisson(&[c; 128], method).unwrap();
                assert!(fit.mean.iter().all(|m| (m - c as f64).abs() < 1e-6 * c as f64));
            }
        }
    }

    #[test]
    fn malformed_table_is_rejected() {
        let mut t = build_ti_table(&[1, 2, 3, 4]).unwrap();
        t.post_mean.pop();
        assert!(matches!(reconstruct_delta(&t), Err(PoisError::MalformedTable(_))));
    }
}

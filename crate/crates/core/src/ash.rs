//! Adaptive shrinkage: empirical-Bayes estimation of a zero-centred
//! scale mixture of normals from `(estimate, standard error)` pairs.
//!
//! The model is
//!
//! ```text
//! beta_j ~ g = sum_k pi_k N(0, sigma_k^2)
//! betahat_j | beta_j ~ N(beta_j, se_j^2)
//! ```
//!
//! with the grid `sigma_k` fixed in advance (see [`make_grid`]). Only the
//! mixture weights are estimated, by maximizing the marginal likelihood with
//! EM. Each iteration takes two EM steps and then tries a squared
//! extrapolation and a second-order step over the simplex, keeping whichever
//! candidate has the highest likelihood, so the likelihood never decreases.
//! The objective is concave in the weights, so the starting point only
//! affects speed.

use std::f64::consts::{PI, SQRT_2};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AshError {
    #[error("no observations")]
    EmptyObservations,
    #[error("betahat has {betahat} entries but se has {se}")]
    LengthMismatch { betahat: usize, se: usize },
    #[error("estimate at position {0} is not finite")]
    NonFiniteEstimate(usize),
    #[error("standard error {value} at position {index} must be positive and finite")]
    InvalidStandardError { index: usize, value: f64 },
    #[error("invalid mixture grid: {0}")]
    InvalidGrid(String),
    #[error("mixture weights are not a probability vector (sum {sum})")]
    WeightsNotSimplex { sum: f64 },
    #[error("marginal likelihood is not finite")]
    NonFiniteLikelihood,
}

/// Paired estimates and standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    betahat: Vec<f64>,
    se: Vec<f64>,
}

impl ObservationSet {
    pub fn new(betahat: Vec<f64>, se: Vec<f64>) -> Result<Self, AshError> {
        if betahat.len() != se.len() {
            return Err(AshError::LengthMismatch {
                betahat: betahat.len(),
                se: se.len(),
            });
        }
        if betahat.is_empty() {
            return Err(AshError::EmptyObservations);
        }
        if let Some(i) = betahat.iter().position(|b| !b.is_finite()) {
            return Err(AshError::NonFiniteEstimate(i));
        }
        if let Some(index) = se.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(AshError::InvalidStandardError {
                index,
                value: se[index],
            });
        }
        Ok(Self { betahat, se })
    }

    pub fn len(&self) -> usize {
        self.betahat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betahat.is_empty()
    }

    pub fn betahat(&self) -> &[f64] {
        &self.betahat
    }

    pub fn se(&self) -> &[f64] {
        &self.se
    }
}

/// `g = sum_k weights[k] * N(0, sigma[k]^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrior {
    sigma: Vec<f64>,
    weights: Vec<f64>,
}

const SIMPLEX_TOL: f64 = 1e-12;

impl MixturePrior {
    pub fn new(sigma: Vec<f64>, weights: Vec<f64>) -> Result<Self, AshError> {
        check_grid(&sigma)?;
        if weights.len() != sigma.len() {
            return Err(AshError::InvalidGrid(format!(
                "{} weights for {} components",
                weights.len(),
                sigma.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL
        {
            return Err(AshError::WeightsNotSimplex { sum });
        }
        Ok(Self { sigma, weights })
    }

    /// All mass at zero.
    pub fn point_mass() -> Self {
        Self {
            sigma: vec![0.0],
            weights: vec![1.0],
        }
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

fn check_grid(sigma: &[f64]) -> Result<(), AshError> {
    if sigma.is_empty() {
        return Err(AshError::InvalidGrid("empty grid".into()));
    }
    if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(AshError::InvalidGrid("grid values must be finite and >= 0".into()));
    }
    if sigma.windows(2).any(|w| w[1] < w[0]) {
        return Err(AshError::InvalidGrid("grid must be nondecreasing".into()));
    }
    Ok(())
}

/// Posterior mean and variance of every `beta_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Default grid: `0`, then `min(se)/10` growing by factors of `sqrt(2)` until
/// reaching `2 * sqrt(max(betahat^2 - se^2))` (or one step if that is zero).
pub fn make_grid(obs: &ObservationSet) -> Result<Vec<f64>, AshError> {
    if obs.is_empty() {
        return Err(AshError::EmptyObservations);
    }
    let min_se = obs.se.iter().copied().fold(f64::INFINITY, f64::min);
    let excess = obs
        .betahat
        .iter()
        .zip(&obs.se)
        .map(|(b, s)| b * b - s * s)
        .fold(0.0_f64, f64::max);
    let first = min_se / 10.0;
    let target = if excess > 0.0 {
        2.0 * excess.sqrt()
    } else {
        first * SQRT_2
    };
    let mut grid = vec![0.0, first];
    let mut last = first;
    while last < target {
        last *= SQRT_2;
        grid.push(last);
    }
    Ok(grid)
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Stop when the log-likelihood changes by less than `tol * max(|loglik|, 1)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Extrapolation and second-order steps; plain EM when false.
    pub accelerate: bool,
    /// Dirichlet concentration on the zero-variance component (when the grid
    /// starts at 0). `1.0` leaves the likelihood unpenalized; larger values
    /// favour the null and shrink more.
    pub null_weight: f64,
}

impl FitOptions {
    /// Settings used by the smoothing pipelines: as the default, but with a
    /// null weight of 10, which shrinks pure-noise levels harder.
    pub fn smoothing() -> Self {
        Self {
            null_weight: 10.0,
            ..Self::default()
        }
    }
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
            accelerate: true,
            null_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub prior: MixturePrior,
    /// Unpenalized log-likelihood at the fitted weights.
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective (log-likelihood plus any null penalty) at the start of every
    /// iteration, then at the final iterate.
    pub trace: Vec<f64>,
}

fn log_normal_density(x: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + x * x / var)
}

/// Component likelihoods scaled by the row maximum, plus the log of that maximum.
struct LikelihoodMatrix {
    rows: usize,
    cols: usize,
    scaled: Vec<f64>,
    log_row_max: Vec<f64>,
    /// Dirichlet exponents `alpha_k - 1`.
    penalty: Vec<f64>,
}

impl LikelihoodMatrix {
    fn new(obs: &ObservationSet, sigma: &[f64], penalty: Vec<f64>) -> Result<Self, AshError> {
        let cols = sigma.len();
        let rows = obs.len();
        let mut scaled = vec![0.0; rows * cols];
        let mut log_row_max = vec![0.0; rows];
        let mut logs = vec![0.0; cols];
        for (j, (&b, &s)) in obs.betahat.iter().zip(&obs.se).enumerate() {
            for (l, &sk) in logs.iter_mut().zip(sigma) {
                *l = log_normal_density(b, sk * sk + s * s);
            }
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(AshError::NonFiniteLikelihood);
            }
            log_row_max[j] = max;
            for (dst, l) in scaled[j * cols..(j + 1) * cols].iter_mut().zip(&logs) {
                *dst = (l - max).exp();
            }
        }
        Ok(Self {
            rows,
            cols,
            scaled,
            log_row_max,
            penalty,
        })
    }

    fn loglik(&self, weights: &[f64]) -> f64 {
        self.pass(weights, None)
    }

    fn log_penalty(&self, weights: &[f64]) -> f64 {
        self.penalty
            .iter()
            .zip(weights)
            .filter(|(p, _)| **p != 0.0)
            .map(|(p, w)| p * w.ln())
            .sum()
    }

    /// Penalized log-likelihood; this is what the fit maximizes.
    fn objective(&self, weights: &[f64]) -> f64 {
        self.loglik(weights) + self.log_penalty(weights)
    }

    /// One EM update; returns the objective at `weights` (the input).
    fn em_step(&self, weights: &[f64], out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|g| *g = 0.0);
        let ll = self.pass(weights, Some(out));
        for ((g, &w), p) in out.iter_mut().zip(weights).zip(&self.penalty) {
            *g = *g * w + p;
        }
        normalize(out);
        ll + self.log_penalty(weights)
    }

    fn pass(&self, weights: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let mut ll = 0.0;
        for j in 0..self.rows {
            let row = &self.scaled[j * self.cols..(j + 1) * self.cols];
            let d: f64 = row.iter().zip(weights).map(|(l, w)| l * w).sum();
            if d <= 0.0 {
                ll = f64::NEG_INFINITY;
                continue;
            }
            ll += d.ln() + self.log_row_max[j];
            if let Some(g) = grad.as_deref_mut() {
                let inv = 1.0 / d;
                for (gk, l) in g.iter_mut().zip(row) {
                    *gk += l * inv;
                }
            }
        }
        ll
    }
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major, `n x n`).
fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}

/// Maximizes `g.y - y'Ay/2` over `x = pi + y` in the probability simplex by
/// a primal active-set method; `a` is symmetric positive definite.
fn simplex_qp(a: &[f64], g: &[f64], pi: &[f64]) -> Option<Vec<f64>> {
    let n = pi.len();
    let mut x = pi.to_vec();
    let mut fixed: Vec<bool> = pi.iter().map(|&p| p <= 0.0).collect();
    for _ in 0..(4 * n + 10) {
        let free: Vec<usize> = (0..n).filter(|&k| !fixed[k]).collect();
        if free.is_empty() {
            return None;
        }
        let m = free.len();
        // y on fixed coordinates is -pi (they sit at zero)
        let rhs: Vec<f64> = free
            .iter()
            .map(|&i| {
                g[i] + (0..n)
                    .filter(|&k| fixed[k])
                    .map(|k| a[i * n + k] * pi[k])
                    .sum::<f64>()
            })
            .collect();
        let sub: Vec<f64> = free
            .iter()
            .flat_map(|&i| free.iter().map(move |&j| a[i * n + j]))
            .collect();
        let u = cholesky_solve(&sub, &rhs, m)?;
        let v = cholesky_solve(&sub, &vec![1.0; m], m)?;
        let fixed_mass: f64 = (0..n).filter(|&k| fixed[k]).map(|k| pi[k]).sum();
        let lambda = (u.iter().sum::<f64>() - fixed_mass) / v.iter().sum::<f64>();
        let mut target = vec![0.0; n];
        for (idx, &i) in free.iter().enumerate() {
            target[i] = pi[i] + u[idx] - lambda * v[idx];
        }
        if !target.iter().all(|t| t.is_finite()) {
            return None;
        }
        if free.iter().all(|&i| target[i] >= 0.0) {
            x = target;
            // multipliers of the fixed coordinates
            let y: Vec<f64> = x.iter().zip(pi).map(|(x, p)| x - p).collect();
            let scale = g.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
            let best = (0..n)
                .filter(|&k| fixed[k])
                .map(|k| {
                    let ay: f64 = (0..n).map(|l| a[k * n + l] * y[l]).sum();
                    (k, g[k] - ay - lambda)
                })
                .max_by(|p, q| p.1.total_cmp(&q.1));
            match best {
                Some((k, mu)) if mu > 1e-10 * scale => fixed[k] = false,
                _ => return Some(x),
            }
        } else {
            let mut step = 1.0;
            let mut blocking = None;
            for &i in &free {
                let p = target[i] - x[i];
                if target[i] < 0.0 && p < 0.0 {
                    let s = x[i] / -p;
                    if s < step {
                        step = s;
                        blocking = Some(i);
                    }
                }
            }
            for &i in &free {
                x[i] += step * (target[i] - x[i]);
            }
            if let Some(b) = blocking {
                x[b] = 0.0;
                fixed[b] = true;
            }
            for &i in &free {
                if x[i] < 0.0 {
                    x[i] = 0.0;
                }
            }
        }
    }
    Some(x)
}

impl LikelihoodMatrix {
    /// Sequential quadratic programming step: maximizes the second-order
    /// model of the log-likelihood over the simplex, then backtracks along
    /// the segment toward that point. Returns the new weights only if the
    /// log-likelihood strictly increases.
    fn newton_step(&self, weights: &[f64], ll: f64) -> Option<(Vec<f64>, f64)> {
        let k = self.cols;
        let mut grad = vec![0.0; k];
        let mut neg_hess = vec![0.0; k * k];
        let mut ratio = vec![0.0; k];
        for j in 0..self.rows {
            let row = &self.scaled[j * k..(j + 1) * k];
            let d: f64 = row.iter().zip(weights).map(|(l, w)| l * w).sum();
            if d <= 0.0 {
                return None;
            }
            let inv = 1.0 / d;
            for (r, l) in ratio.iter_mut().zip(row) {
                *r = l * inv;
            }
            for a in 0..k {
                let ra = ratio[a];
                grad[a] += ra;
                if ra != 0.0 {
                    let dst = &mut neg_hess[a * k..a * k + a + 1];
                    for (h, rb) in dst.iter_mut().zip(&ratio[..=a]) {
                        *h += ra * rb;
                    }
                }
            }
        }
        for (a, (&p, &w)) in self.penalty.iter().zip(weights).enumerate() {
            if p != 0.0 && w > 0.0 {
                grad[a] += p / w;
                neg_hess[a * k + a] += p / (w * w);
            }
        }
        let trace: f64 = (0..k).map(|a| neg_hess[a * k + a]).sum();
        let ridge = 1e-10 * trace / k as f64 + f64::MIN_POSITIVE;
        for a in 0..k {
            for b in 0..a {
                neg_hess[b * k + a] = neg_hess[a * k + b];
            }
            neg_hess[a * k + a] += ridge;
        }
        let target = simplex_qp(&neg_hess, &grad, weights)?;
        let mut t = 1.0;
        for _ in 0..30 {
            let mut candidate: Vec<f64> = weights
                .iter()
                .zip(&target)
                .map(|(w, x)| (w + t * (x - w)).max(0.0))
                .collect();
            normalize(&mut candidate);
            let cand_ll = self.objective(&candidate);
            if cand_ll > ll {
                return Some((candidate, cand_ll));
            }
            t *= 0.5;
        }
        None
    }

    /// Moves a little mass onto zero-weight components whose directional
    /// derivative is positive (`sum_j L_jk / d_j` above the multiplier
    /// `n + sum(penalty)`, or any penalized component). Returns the new
    /// weights only if the objective strictly increases.
    fn revive(&self, weights: &[f64], ll: f64) -> Option<(Vec<f64>, f64)> {
        let mut grad = vec![0.0; self.cols];
        self.pass(weights, Some(&mut grad));
        let level = self.rows as f64 + self.penalty.iter().sum::<f64>();
        let mut direction: Vec<f64> = weights
            .iter()
            .zip(&grad)
            .zip(&self.penalty)
            .map(|((&w, &g), &p)| {
                if w != 0.0 {
                    0.0
                } else if p > 0.0 {
                    level
                } else if g > level * (1.0 + 1e-6) {
                    g - level
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = direction.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return None;
        }
        direction.iter_mut().for_each(|d| *d /= total);
        let mut eps = 1e-2;
        for _ in 0..40 {
            let candidate: Vec<f64> = weights
                .iter()
                .zip(&direction)
                .map(|(w, d)| (1.0 - eps) * w + eps * d)
                .collect();
            let cand_ll = self.objective(&candidate);
            if cand_ll > ll {
                return Some((candidate, cand_ll));
            }
            eps *= 0.5;
        }
        None
    }
}

fn normalize(weights: &mut [f64]) {
    let sum: f64 = weights.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        weights.iter_mut().for_each(|w| *w /= sum);
    }
}

/// Maximum-likelihood mixture weights on a fixed grid.
pub fn fit_mixture(obs: &ObservationSet, grid: &[f64]) -> Result<MixtureFit, AshError> {
    fit_mixture_with(obs, grid, &FitOptions::default())
}

pub fn fit_mixture_with(
    obs: &ObservationSet,
    grid: &[f64],
    options: &FitOptions,
) -> Result<MixtureFit, AshError> {
    if obs.is_empty() {
        return Err(AshError::EmptyObservations);
    }
    check_grid(grid)?;
    let k = grid.len();
    if !(options.null_weight >= 1.0 && options.null_weight.is_finite()) {
        return Err(AshError::InvalidGrid(format!(
            "null weight {} must be at least 1",
            options.null_weight
        )));
    }
    let mut penalty = vec![0.0; k];
    if grid[0] == 0.0 {
        penalty[0] = options.null_weight - 1.0;
    }
    let lik = LikelihoodMatrix::new(obs, grid, penalty)?;

    let mut theta = vec![1.0 / k as f64; k];
    let mut ll = lik.objective(&theta);
    if !ll.is_finite() {
        return Err(AshError::NonFiniteLikelihood);
    }
    let mut trace = vec![ll];
    let mut t1 = vec![0.0; k];
    let mut t2 = vec![0.0; k];
    let mut t3 = vec![0.0; k];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iter {
        iterations += 1;
        lik.em_step(&theta, &mut t1);
        let ll1 = lik.em_step(&t1, &mut t2);
        let mut ll2 = lik.objective(&t2);
        let (mut next, mut next_ll) = if ll2 >= ll1 {
            (t2.clone(), ll2)
        } else {
            (t1.clone(), ll1)
        };

        if options.accelerate {
            let r: Vec<f64> = t1.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let v: Vec<f64> = t2
                .iter()
                .zip(&t1)
                .zip(&r)
                .map(|((a, b), r)| a - b - r)
                .collect();
            let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if rn > 0.0 && vn > 0.0 {
                let alpha = (-rn / vn).min(-1.0);
                let mut extrapolated: Vec<f64> = theta
                    .iter()
                    .zip(&r)
                    .zip(&v)
                    .map(|((t, r), v)| (t - 2.0 * alpha * r + alpha * alpha * v).max(0.0))
                    .collect();
                normalize(&mut extrapolated);
                if alpha < -1.0 && extrapolated.iter().all(|w| w.is_finite()) {
                    lik.em_step(&extrapolated, &mut t3);
                    let ll3 = lik.objective(&t3);
                    if ll3 >= next_ll {
                        next.copy_from_slice(&t3);
                        next_ll = ll3;
                    }
                }
            }
        }
        if options.accelerate {
            if let Some((stepped, stepped_ll)) = lik.newton_step(&next, next_ll) {
                next = stepped;
                next_ll = stepped_ll;
            }
        }
        ll2 = next_ll;

        let stalled = ll2 < ll;
        if !stalled {
            let change = ll2 - ll;
            theta = next;
            ll = ll2;
            trace.push(ll);
            if change > options.tol * ll.abs().max(1.0) {
                continue;
            }
        }
        // extrapolation can zero out a component that EM alone would never
        // bring back; revive any that the optimality conditions still want
        match lik.revive(&theta, ll) {
            Some((revived, revived_ll)) => {
                theta = revived;
                ll = revived_ll;
                trace.push(ll);
            }
            None => {
                converged = true;
                break;
            }
        }
    }

    Ok(MixtureFit {
        loglik: lik.loglik(&theta),
        prior: MixturePrior {
            sigma: grid.to_vec(),
            weights: theta,
        },
        iterations,
        converged,
        trace,
    })
}

/// `sum_j log sum_k pi_k N(betahat_j; 0, sigma_k^2 + se_j^2)`.
pub fn loglik(obs: &ObservationSet, prior: &MixturePrior) -> f64 {
    obs.betahat
        .iter()
        .zip(&obs.se)
        .map(|(&b, &s)| {
            let logs: Vec<f64> = prior
                .sigma
                .iter()
                .zip(&prior.weights)
                .filter(|(_, &w)| w > 0.0)
                .map(|(&sk, &w)| w.ln() + log_normal_density(b, sk * sk + s * s))
                .collect();
            log_sum_exp(&logs)
        })
        .sum()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Posterior mean and variance of each effect under `prior`.
pub fn posterior(obs: &ObservationSet, prior: &MixturePrior) -> Result<PosteriorSummary, AshError> {
    let sum: f64 = prior.weights.iter().sum();
    if prior.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(AshError::WeightsNotSimplex { sum });
    }
    let k = prior.len();
    let mut mean = Vec::with_capacity(obs.len());
    let mut variance = Vec::with_capacity(obs.len());
    let mut logw = vec![0.0; k];
    for (&b, &s) in obs.betahat.iter().zip(&obs.se) {
        let s2 = s * s;
        for ((lw, &sk), &w) in logw.iter_mut().zip(&prior.sigma).zip(&prior.weights) {
            *lw = if w > 0.0 {
                w.ln() + log_normal_density(b, sk * sk + s2)
            } else {
                f64::NEG_INFINITY
            };
        }
        let norm = log_sum_exp(&logw);
        let (mut m1, mut m2) = (0.0, 0.0);
        for (&lw, &sk) in logw.iter().zip(&prior.sigma) {
            if lw == f64::NEG_INFINITY || sk == 0.0 {
                continue;
            }
            let resp = (lw - norm).exp();
            let v = sk * sk;
            let shrink = v / (v + s2);
            let cm = b * shrink;
            let cv = shrink * s2;
            m1 += resp * cm;
            m2 += resp * (cv + cm * cm);
        }
        mean.push(m1);
        variance.push((m2 - m1 * m1).max(0.0));
    }
    Ok(PosteriorSummary { mean, variance })
}

/// Grid, fit and posterior in one call.
pub fn shrink(obs: &ObservationSet) -> Result<(MixtureFit, PosteriorSummary), AshError> {
    shrink_with(obs, &FitOptions::default())
}

pub fn shrink_with(
    obs: &ObservationSet,
    options: &FitOptions,
) -> Result<(MixtureFit, PosteriorSummary), AshError> {
    let grid = make_grid(obs)?;
    let fit = fit_mixture_with(obs, &grid, options)?;
    let post = posterior(obs, &fit.prior)?;
    Ok((fit, post))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn obs(b: &[f64], s: &[f64]) -> ObservationSet {
        ObservationSet::new(b.to_vec(), s.to_vec()).unwrap()
    }

    fn normal_pdf(x: f64, var: f64) -> f64 {
        (-0.5 * x * x / var).exp() / (2.0 * PI * var).sqrt()
    }

    #[test]
    fn observation_validation() {
        assert_eq!(
            ObservationSet::new(vec![], vec![]).unwrap_err(),
            AshError::EmptyObservations
        );
        assert!(matches!(
            ObservationSet::new(vec![1.0], vec![0.0]),
            Err(AshError::InvalidStandardError { index: 0, .. })
        ));
        assert!(matches!(
            ObservationSet::new(vec![1.0, 2.0], vec![1.0]),
            Err(AshError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ObservationSet::new(vec![f64::NAN], vec![1.0]),
            Err(AshError::NonFiniteEstimate(0))
        ));
    }

    #[test]
    fn grid_minimum_span() {
        let g = make_grid(&obs(&[0.0, 0.0], &[1.0, 1.0])).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.1).abs() < 1e-15);
        assert!((g[2] - 0.1 * SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn grid_reaches_twice_the_excess_sd() {
        let g = make_grid(&obs(&[10.0], &[1.0])).unwrap();
        let top = *g.last().unwrap();
        assert!(top >= 2.0 * 99f64.sqrt());
        assert!(top / SQRT_2 < 2.0 * 99f64.sqrt());
        for w in g[1..].windows(2) {
            assert!((w[1] / w[0] - SQRT_2).abs() < 1e-12);
        }
    }

    #[test]
    fn loglik_point_mass() {
        let ll = loglik(&obs(&[0.0], &[1.0]), &MixturePrior::point_mass());
        assert!((ll + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn loglik_matches_naive_sum_and_is_additive() {
        let prior = MixturePrior::new(vec![0.0, 0.5, 1.0, 2.0], vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let b = [0.3, -1.2, 2.5, 0.0, 0.7];
        let s = [1.0, 0.5, 1.5, 0.8, 1.1];
        let naive: f64 = b
            .iter()
            .zip(&s)
            .map(|(&b, &s)| {
                prior
                    .sigma()
                    .iter()
                    .zip(prior.weights())
                    .map(|(sk, w)| w * normal_pdf(b, sk * sk + s * s))
                    .sum::<f64>()
                    .ln()
            })
            .sum();
        let all = loglik(&obs(&b, &s), &prior);
        assert!((all - naive).abs() < 1e-12);
        let split = loglik(&obs(&b[..2], &s[..2]), &prior) + loglik(&obs(&b[2..], &s[2..]), &prior);
        assert!((all - split).abs() < 1e-12);
    }

    #[test]
    fn single_observation_fit_reaches_best_component() {
        let o = obs(&[3.0], &[1.0]);
        let grid = make_grid(&o).unwrap();
        let fit = fit_mixture(&o, &grid).unwrap();
        let best = grid
            .iter()
            .map(|sk| normal_pdf(3.0, sk * sk + 1.0))
            .fold(0.0, f64::max);
        let got = loglik(&o, &fit.prior).exp();
        assert!((got - best).abs() < 1e-6, "{got} vs {best}");
    }

    #[test]
    fn two_component_fit_matches_line_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..5 {
            let n = 150;
            let sigma1 = 0.5 + case as f64;
            let frac = 0.2 * case as f64;
            let mut b = Vec::new();
            let mut s = Vec::new();
            for _ in 0..n {
                let se = rng.random_range(0.5..1.5);
                let beta = if rng.random::<f64>() < frac {
                    Normal::new(0.0, sigma1).unwrap().sample(&mut rng)
                } else {
                    0.0
                };
                b.push(beta + se * Normal::new(0.0, 1.0).unwrap().sample(&mut rng));
                s.push(se);
            }
            let o = obs(&b, &s);
            let grid = vec![0.0, sigma1];
            let fit = fit_mixture(&o, &grid).unwrap();
            let mut best = (f64::NEG_INFINITY, 0.0);
            for i in 0..=10_000 {
                let p1 = i as f64 * 1e-4;
                let ll: f64 = b
                    .iter()
                    .zip(&s)
                    .map(|(&b, &s)| {
                        ((1.0 - p1) * normal_pdf(b, s * s) + p1 * normal_pdf(b, sigma1 * sigma1 + s * s)).ln()
                    })
                    .sum();
                if ll > best.0 {
                    best = (ll, p1);
                }
            }
            assert!(
                (fit.prior.weights()[1] - best.1).abs() < 1e-3,
                "case {case}: {} vs {}",
                fit.prior.weights()[1],
                best.1
            );
        }
    }

    #[test]
    fn fit_recovers_single_component_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: f64 = 1.0;
        let sk = 2.0;
        let dist = Normal::new(0.0, (sk * sk + s * s).sqrt()).unwrap();
        let b: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        let o = ObservationSet::new(b.clone(), vec![s; b.len()]).unwrap();
        let grid = make_grid(&o).unwrap();
        let fit = fit_mixture(&o, &grid).unwrap();
        let truth: f64 = b.iter().map(|&x| log_normal_density(x, sk * sk + s * s)).sum();
        // the true scale is not on the grid, but the fit must beat every vertex
        for &sg in &grid {
            let vertex: f64 = b.iter().map(|&x| log_normal_density(x, sg * sg + s * s)).sum();
            assert!(fit.loglik >= vertex - 1e-9 * vertex.abs());
        }
        assert!(((fit.loglik - truth) / truth).abs() < 0.005);
        assert!(fit.converged);
    }

    #[test]
    fn em_trace_is_monotone_and_weights_stay_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..300);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
            let o = obs(&b, &s);
            for accelerate in [true, false] {
                let fit = fit_mixture_with(
                    &o,
                    &make_grid(&o).unwrap(),
                    &FitOptions {
                        accelerate,
                        ..FitOptions::default()
                    },
                )
                .unwrap();
                assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
                let sum: f64 = fit.prior.weights().iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(fit.prior.weights().iter().all(|&w| w >= 0.0));
            }
        }
    }

    #[test]
    fn point_mass_posterior_is_zero() {
        let p = posterior(&obs(&[1.0, -3.0, 7.0], &[1.0, 2.0, 0.1]), &MixturePrior::point_mass()).unwrap();
        assert!(p.mean.iter().chain(&p.variance).all(|&v| v == 0.0));
    }

    #[test]
    fn two_component_posterior_analytic() {
        let prior = MixturePrior::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let p = posterior(&obs(&[1.0], &[1.0]), &prior).unwrap();
        let w0 = 0.5 * normal_pdf(1.0, 1.0);
        let w1 = 0.5 * normal_pdf(1.0, 2.0);
        let r1 = w1 / (w0 + w1);
        let expected_mean = r1 * 0.5;
        let expected_var = r1 * (0.5 + 0.25) - expected_mean * expected_mean;
        assert!((p.mean[0] - expected_mean).abs() < 1e-14);
        assert!((p.mean[0] - 0.237_937_674_655_984).abs() < 1e-12);
        assert!((p.variance[0] - expected_var).abs() < 1e-14);
    }

    #[test]
    fn posterior_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let sigma = vec![0.0, 0.3, 0.9, 2.7];
            let mut w: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            let prior = MixturePrior::new(sigma.clone(), w.clone()).unwrap();
            let b = rng.random_range(-4.0..4.0);
            let s = rng.random_range(0.3..2.0);
            let p = posterior(&obs(&[b], &[s]), &prior).unwrap();

            // Simpson quadrature over the continuous components, point mass added exactly.
            let (lo, hi, n) = (-30.0, 30.0, 60_000);
            let h = (hi - lo) / n as f64;
            let density = |beta: f64| -> f64 {
                sigma[1..]
                    .iter()
                    .zip(&w[1..])
                    .map(|(sk, wk)| wk * normal_pdf(beta, sk * sk))
                    .sum::<f64>()
                    * normal_pdf(b - beta, s * s)
            };
            let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
            for i in 0..=n {
                let x = lo + i as f64 * h;
                let c = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                let d = c * density(x);
                z += d;
                m1 += d * x;
                m2 += d * x * x;
            }
            z *= h / 3.0;
            m1 *= h / 3.0;
            m2 *= h / 3.0;
            z += w[0] * normal_pdf(b, s * s);
            let mean = m1 / z;
            let var = m2 / z - mean * mean;
            assert!((p.mean[0] - mean).abs() < 1e-6, "{} vs {mean}", p.mean[0]);
            assert!((p.variance[0] - var).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_simplex_prior() {
        assert!(matches!(
            MixturePrior::new(vec![0.0, 1.0], vec![0.5, 0.6]),
            Err(AshError::WeightsNotSimplex { .. })
        ));
        assert!(matches!(
            MixturePrior::new(vec![1.0, 0.0], vec![0.5, 0.5]),
            Err(AshError::InvalidGrid(_))
        ));
    }
}

//! (mu/mu_w, lambda)-CMA-ES with weighted recombination, cumulative step-size
//! adaptation and rank-one plus rank-mu covariance updates.
//!
//! Candidates are sampled sequentially from a seeded ChaCha stream and then
//! evaluated in parallel. Ranking uses `(value, candidate index)`, so a run is
//! bit-for-bit reproducible whatever the thread scheduling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmaesSettings {
    /// `None` selects `4 + floor(3 ln d)`.
    pub population: Option<usize>,
    pub sigma0: f64,
    pub max_evals: usize,
    /// Relative spread of the per-generation best value that counts as stagnation.
    pub f_tol: f64,
    /// Absolute spread added to the `f_tol` threshold.
    pub f_tol_abs: f64,
    /// Window (generations) over which `f_tol` is measured.
    pub stagnation_generations: usize,
    /// Resampling attempts for out-of-bounds candidates before clamping.
    pub max_resamples: usize,
}

impl Default for CmaesSettings {
    fn default() -> Self {
        Self {
            population: None,
            sigma0: 0.3,
            max_evals: 20_000,
            f_tol: 1e-6,
            f_tol_abs: 1e-12,
            stagnation_generations: 30,
            max_resamples: 10,
        }
    }
}

impl CmaesSettings {
    pub fn population_for(&self, dim: usize) -> usize {
        self.population
            .unwrap_or_else(|| 4 + (3.0 * (dim as f64).ln()).floor() as usize)
    }
}

/// Box constraints `lower[i] <= x[i] <= upper[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        Self {
            lower: vec![lower; dim],
            upper: vec![upper; dim],
        }
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEvaluations,
    Stagnation,
    /// Step size collapsed below numerical resolution.
    TolX,
    /// Covariance became too ill-conditioned to continue.
    Conditioning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub generations: usize,
    /// Best value of each generation.
    pub history: Vec<f64>,
    pub stop: StopReason,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `f` from `x0` with initial step `settings.sigma0`.
pub fn cmaes_minimize<F>(
    f: F,
    x0: &[f64],
    bounds: Option<&Bounds>,
    settings: &CmaesSettings,
    seed: u64,
) -> Result<CmaesOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::Config("CMA-ES needs at least one dimension".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("CMA-ES start point is not finite".into()));
    }
    if !(settings.sigma0 > 0.0 && settings.sigma0.is_finite()) {
        return Err(Error::Config(format!("sigma0 must be positive, got {}", settings.sigma0)));
    }
    let lambda = settings.population_for(n);
    if lambda < 4 {
        return Err(Error::Config(format!("population must be >= 4, got {lambda}")));
    }
    if let Some(b) = bounds {
        if b.lower.len() != n || b.upper.len() != n {
            return Err(Error::Config(format!(
                "bounds have {}/{} entries for {n} dimensions",
                b.lower.len(),
                b.upper.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| !(b.lower[i] < b.upper[i])) {
            return Err(Error::Config(format!(
                "empty bound interval [{}, {}] in dimension {i}",
                b.lower[i], b.upper[i]
            )));
        }
        if !b.contains(x0) {
            return Err(Error::Config("CMA-ES start point lies outside the bounds".into()));
        }
    }

    let nf = n as f64;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu)
        .map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff)).min(1.0 - c1);
    let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = DVector::from_column_slice(x0);
    let mut sigma = settings.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut basis = DMatrix::<f64>::identity(n, n);
    let mut scales = DVector::<f64>::from_element(n, 1.0);
    let mut pc = DVector::<f64>::zeros(n);
    let mut ps = DVector::<f64>::zeros(n);

    let mut best_x = x0.to_vec();
    let mut best_f = f64::INFINITY;
    let mut history = Vec::new();
    let mut evaluations = 0;
    let mut generation = 0;

    let stop = loop {
        if evaluations + lambda > settings.max_evals {
            break StopReason::MaxEvaluations;
        }

        let mut xs: Vec<DVector<f64>> = Vec::with_capacity(lambda);
        let mut ys: Vec<DVector<f64>> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let mut attempt = 0;
            let (x, y) = loop {
                let z = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                let y = &basis * z.component_mul(&scales);
                let mut x = &mean + sigma * &y;
                match bounds {
                    Some(b) if !b.contains(x.as_slice()) => {
                        attempt += 1;
                        if attempt > settings.max_resamples {
                            b.clamp(x.as_mut_slice());
                            let y = (&x - &mean) / sigma;
                            break (x, y);
                        }
                    }
                    _ => break (x, y),
                }
            };
            xs.push(x);
            ys.push(y);
        }

        let values: Vec<f64> = xs.par_iter().map(|x| sanitize(f(x.as_slice()))).collect();
        evaluations += lambda;
        generation += 1;

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let top = order[0];
        history.push(values[top]);
        if values[top] < best_f {
            best_f = values[top];
            best_x = xs[top].as_slice().to_vec();
        }

        let mut y_w = DVector::<f64>::zeros(n);
        for (w, &i) in weights.iter().zip(&order) {
            y_w += *w * &ys[i];
        }
        mean += sigma * &y_w;

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let inv_sqrt_y = &basis * (basis.transpose() * &y_w).component_div(&scales);
        ps = (1.0 - cs) * &ps + (cs * (2.0 - cs) * mueff).sqrt() * inv_sqrt_y;
        let ps_norm = ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * generation as i32)).sqrt() / chi_n
            < 1.4 + 2.0 / (nf + 1.0);
        let hsig_f = if hsig { 1.0 } else { 0.0 };
        pc = (1.0 - cc) * &pc + hsig_f * (cc * (2.0 - cc) * mueff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, &i) in weights.iter().zip(&order) {
            rank_mu += *w * &ys[i] * ys[i].transpose();
        }
        cov = (1.0 - c1 - cmu) * &cov
            + c1 * (&pc * pc.transpose() + (1.0 - hsig_f) * cc * (2.0 - cc) * &cov)
            + cmu * rank_mu;
        cov = 0.5 * (&cov + cov.transpose());

        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();

        let eig = SymmetricEigen::new(cov.clone());
        basis = eig.eigenvectors;
        let max_eig = eig.eigenvalues.max();
        scales = eig.eigenvalues.map(|l| l.max(1e-300 * max_eig.max(1e-300)).sqrt());
        let min_eig = eig.eigenvalues.min();
        if !(max_eig.is_finite()) || min_eig <= 0.0 || max_eig / min_eig > 1e14 {
            break StopReason::Conditioning;
        }

        let spread = sigma * cov.diagonal().iter().fold(0.0f64, |m, v| m.max(v.sqrt()));
        let magnitude = 1.0 + mean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if spread < 1e-14 * magnitude {
            break StopReason::TolX;
        }

        let window = settings.stagnation_generations;
        if window > 0 && history.len() >= window {
            let recent = &history[history.len() - window..];
            let lo = recent.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo <= settings.f_tol * lo.abs() + settings.f_tol_abs {
                break StopReason::Stagnation;
            }
        }
    };

    Ok(CmaesOutcome {
        x: best_x,
        f: best_f,
        evaluations,
        generations: generation,
        history,
        stop,
    })
}

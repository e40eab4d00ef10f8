//! Diagonal Gaussian mixture over pooled state embeddings.
//!
//! Fitting is expectation-maximization with Dirichlet pseudocounts on the
//! mixing weights (a MAP estimate) and a floor on every variance. Each EM
//! iteration cannot decrease the penalized log-likelihood
//! `sum_i ln p(x_i) + c * sum_k ln alpha_k`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Side of the pooling grid; embeddings have `EMBED_GRID^2` entries.
pub const EMBED_GRID: usize = 4;
pub const EMBED_DIM: usize = EMBED_GRID * EMBED_GRID;
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Average-pools a square `side x side` observation onto a 4x4 grid.
pub fn embed(observation: &Tensor) -> Result<Embedding> {
    let n = observation.len();
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || side % EMBED_GRID != 0 || side == 0 {
        return Err(Error::shape(format!("square observation with side divisible by {EMBED_GRID}"), n));
    }
    let block = side / EMBED_GRID;
    let mut out = vec![0.0; EMBED_DIM];
    for (i, &v) in observation.values().iter().enumerate() {
        let (y, x) = (i / side, i % side);
        out[(y / block) * EMBED_GRID + x / block] += v;
    }
    let inv = 1.0 / (block * block) as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(Embedding(out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    pub components: usize,
    pub iterations: usize,
    /// Dirichlet pseudocount added to every component's responsibility mass.
    pub pseudocount: f64,
    pub variance_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { components: 3, iterations: 20, pseudocount: 1.0, variance_floor: VARIANCE_FLOOR }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let m = weights.len();
        if m == 0 || means.len() != m || variances.len() != m {
            return Err(Error::shape(format!("{m} components"), format!("{} means, {} variances", means.len(), variances.len())));
        }
        let d = means[0].len();
        if means.iter().chain(&variances).any(|v| v.len() != d) {
            return Err(Error::shape(format!("dimension {d}"), "ragged component parameters"));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("weights must form a simplex (sum {sum})")));
        }
        if variances.iter().flatten().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Argument("variances must be positive and finite".into()));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite mean".into()));
        }
        Ok(Self { weights, means, variances })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    fn component_log_pdf(&self, k: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&xi, &mu), &var) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            let d = xi - mu;
            acc += (2.0 * PI * var).ln() + d * d / var;
        }
        -0.5 * acc
    }

    /// `ln sum_k alpha_k N(x | mu_k, Sigma_k)`, evaluated with log-sum-exp.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::shape(self.dim(), x.len()));
        }
        Ok(log_sum_exp((0..self.components()).map(|k| self.weights[k].ln() + self.component_log_pdf(k, x))))
    }

    /// Penalized objective maximized by [`fit`].
    pub fn penalized_log_likelihood(&self, points: &[Embedding], pseudocount: f64) -> Result<f64> {
        let mut ll = 0.0;
        for p in points {
            ll += self.log_density(p.as_slice())?;
        }
        Ok(ll + pseudocount * self.weights.iter().map(|w| w.ln()).sum::<f64>())
    }
}

/// Numerically stable `ln sum exp(v)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn fit(points: &[Embedding], cfg: &GmmConfig, seed: u64) -> Result<GaussianMixture> {
    Ok(fit_traced(points, cfg, seed)?.0)
}

/// Fits a mixture and also returns the penalized log-likelihood before the
/// first iteration and after every iteration.
pub fn fit_traced(points: &[Embedding], cfg: &GmmConfig, seed: u64) -> Result<(GaussianMixture, Vec<f64>)> {
    let m = cfg.components;
    let n = points.len();
    if m == 0 {
        return Err(Error::Argument("mixture needs at least one component".into()));
    }
    if n < m {
        return Err(Error::Argument(format!("{n} points cannot support {m} components")));
    }
    if !(cfg.pseudocount >= 0.0) || !(cfg.variance_floor > 0.0) {
        return Err(Error::Argument("pseudocount must be >= 0 and variance floor > 0".into()));
    }
    let d = points[0].dim();
    if d == 0 || points.iter().any(|p| p.dim() != d) {
        return Err(Error::shape(format!("points of dimension {d}"), "ragged or empty points"));
    }
    if points.iter().any(|p| p.0.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric("non-finite embedding".into()));
    }
    let floor = cfg.variance_floor;

    // global variance as the starting spread of every component
    let mut global_mean = vec![0.0; d];
    for p in points {
        for (g, v) in global_mean.iter_mut().zip(&p.0) {
            *g += v / n as f64;
        }
    }
    let mut global_var = vec![0.0; d];
    for p in points {
        for ((g, v), mu) in global_var.iter_mut().zip(&p.0).zip(&global_mean) {
            *g += (v - mu) * (v - mu) / n as f64;
        }
    }
    global_var.iter_mut().for_each(|v| *v = v.max(floor));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = farthest_point_init(points, m, &mut rng);
    let mut g = GaussianMixture {
        weights: vec![1.0 / m as f64; m],
        means,
        variances: vec![global_var; m],
    };

    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let mut log_r = vec![0.0; m];
    let mut resp = vec![0.0; n * m];
    for _ in 0..cfg.iterations {
        // E-step
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            for (k, lr) in log_r.iter_mut().enumerate() {
                *lr = g.weights[k].ln() + g.component_log_pdf(k, &p.0);
            }
            let lse = log_sum_exp(log_r.iter().copied());
            ll += lse;
            for k in 0..m {
                resp[i * m + k] = (log_r[k] - lse).exp();
            }
        }
        trace.push(ll + cfg.pseudocount * g.weights.iter().map(|w| w.ln()).sum::<f64>());

        // M-step
        let denom = n as f64 + m as f64 * cfg.pseudocount;
        for k in 0..m {
            let nk: f64 = (0..n).map(|i| resp[i * m + k]).sum();
            g.weights[k] = (nk + cfg.pseudocount) / denom;
            if nk <= 1e-12 * n as f64 {
                // empty component: keep its Gaussian, only the weight moves
                continue;
            }
            let mut mean = vec![0.0; d];
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * m + k];
                for (mu, v) in mean.iter_mut().zip(&p.0) {
                    *mu += r * v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= nk);
            let mut var = vec![0.0; d];
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * m + k];
                for ((s, v), mu) in var.iter_mut().zip(&p.0).zip(&mean) {
                    *s += r * (v - mu) * (v - mu);
                }
            }
            var.iter_mut().for_each(|v| *v = (*v / nk).max(floor));
            g.means[k] = mean;
            g.variances[k] = var;
        }
        let total: f64 = g.weights.iter().sum();
        g.weights.iter_mut().for_each(|w| *w /= total);
    }
    trace.push(g.penalized_log_likelihood(points, cfg.pseudocount)?);
    Ok((g, trace))
}

/// Seeded first center, then repeatedly the point farthest from all chosen
/// centers (ties to the lowest index).
fn farthest_point_init<R: Rng>(points: &[Embedding], m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let first = rng.gen_range(0..points.len());
    let mut centers = vec![points[first].0.clone()];
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut nearest: Vec<f64> = points.iter().map(|p| sq(&p.0, &centers[0])).collect();
    while centers.len() < m {
        let (idx, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        let c = points[idx].0.clone();
        for (nd, p) in nearest.iter_mut().zip(points) {
            *nd = nd.min(sq(&p.0, &c));
        }
        centers.push(c);
    }
    centers
}

//! Policy distributions with analytic gradients.
//!
//! Every discrete family over an ordered grid is computed as a vector of
//! unnormalized log-weights `lw_k` together with `∂lw_k/∂μ` and `∂lw_k/∂σ`.
//! Normalizing gives `ln d_k = lw_k − logsumexp(lw)` and
//! `∂ln d_k = ∂lw_k − Σ_j d_j ∂lw_j`, which is shared by all families.
//!
//! Indices are 0-based.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    log_norm_pdf(x).exp()
}

pub fn log_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// ln Φ(x), accurate far into the lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if x < -20.0 {
        let x2 = x * x;
        let inv = 1.0 / x2;
        let series = 1.0 + inv * (-1.0 + inv * (3.0 + inv * (-15.0 + inv * (105.0 - 945.0 * inv))));
        log_norm_pdf(x) - (-x).ln() + series.ln()
    } else if x < 0.0 {
        norm_cdf(x).ln()
    } else {
        (-0.5 * libm::erfc(x / std::f64::consts::SQRT_2)).ln_1p()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// ln(e^a − e^b) for a ≥ b.
fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        a
    } else {
        a + (-(b - a).exp_m1()).ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: f64,
    pub std: f64,
}

impl GaussianParams {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gaussian needs finite mean and positive std, got ({mean}, {std})"
            )));
        }
        Ok(GaussianParams { mean, std })
    }
}

/// Continuous Gaussian policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian(pub GaussianParams);

impl Gaussian {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.0.mean + self.0.std * z
    }

    pub fn log_prob(&self, x: f64) -> f64 {
        let z = (x - self.0.mean) / self.0.std;
        log_norm_pdf(z) - self.0.std.ln()
    }

    pub fn entropy(&self) -> f64 {
        0.5 + LN_SQRT_2PI + self.0.std.ln()
    }

    /// (∂/∂μ, ∂/∂σ) of ln p(x).
    pub fn grad_log_prob(&self, x: f64) -> (f64, f64) {
        let GaussianParams { mean, std } = self.0;
        let z = (x - mean) / std;
        (z / std, (z * z - 1.0) / std)
    }

    pub fn grad_entropy(&self) -> (f64, f64) {
        (0.0, 1.0 / self.0.std)
    }
}

/// Ordered candidate actions a_1 < … < a_m.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationGrid {
    locations: Vec<f64>,
}

impl LocationGrid {
    pub fn new(locations: Vec<f64>) -> Result<Self> {
        if locations.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 locations, got {}",
                locations.len()
            )));
        }
        if locations.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("grid locations must be finite".into()));
        }
        if locations.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "grid locations must be strictly increasing".into(),
            ));
        }
        Ok(LocationGrid { locations })
    }

    /// Integer grid lo, lo+1, …, hi.
    pub fn integers(lo: i64, hi: i64) -> Result<Self> {
        Self::new((lo..=hi).map(|x| x as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    /// Cell k spans the midpoints to its neighbours; the outer cells are
    /// unbounded.
    pub fn cell(&self, k: usize) -> (f64, f64) {
        let a = &self.locations;
        let lo = if k == 0 {
            f64::NEG_INFINITY
        } else {
            0.5 * (a[k - 1] + a[k])
        };
        let hi = if k + 1 == a.len() {
            f64::INFINITY
        } else {
            0.5 * (a[k] + a[k + 1])
        };
        (lo, hi)
    }

    /// Index of the nearest location; ties at a midpoint go to the upper cell.
    pub fn snap(&self, x: f64) -> usize {
        let a = &self.locations;
        (1..a.len())
            .take_while(|&k| x >= 0.5 * (a[k - 1] + a[k]))
            .last()
            .unwrap_or(0)
    }
}

/// A categorical distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(DiscreteDist { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Inverse-CDF draw from a single uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        // u landed in the rounding slack above the last partial sum
        self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    /// ln d_k; −∞ for a zero-probability index.
    pub fn log_prob(&self, k: usize) -> f64 {
        self.probs[k].ln()
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    /// Most probable index, lowest on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = k;
            }
        }
        best
    }
}

/// A grid distribution together with gradients of its log-probabilities
/// with respect to the Gaussian parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredDist {
    dist: DiscreteDist,
    log_probs: Vec<f64>,
    d_mean: Vec<f64>,
    d_std: Vec<f64>,
}

impl ScoredDist {
    fn from_log_weights(lw: Vec<f64>, mut dlw_mean: Vec<f64>, mut dlw_std: Vec<f64>) -> Result<Self> {
        let total = log_sum_exp(&lw);
        if !total.is_finite() {
            return Err(Error::InvalidArgument(
                "all grid cells have zero probability".into(),
            ));
        }
        let log_probs: Vec<f64> = lw.iter().map(|w| w - total).collect();
        let mut probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);
        for k in 0..lw.len() {
            if probs[k] == 0.0 {
                dlw_mean[k] = 0.0;
                dlw_std[k] = 0.0;
            }
        }
        let mean_mu: f64 = probs.iter().zip(&dlw_mean).map(|(p, g)| p * g).sum();
        let mean_sigma: f64 = probs.iter().zip(&dlw_std).map(|(p, g)| p * g).sum();
        let d_mean = dlw_mean.iter().map(|g| g - mean_mu).collect();
        let d_std = dlw_std.iter().map(|g| g - mean_sigma).collect();
        Ok(ScoredDist {
            dist: DiscreteDist { probs },
            log_probs,
            d_mean,
            d_std,
        })
    }

    pub fn dist(&self) -> &DiscreteDist {
        &self.dist
    }

    pub fn into_dist(self) -> DiscreteDist {
        self.dist
    }

    pub fn probs(&self) -> &[f64] {
        self.dist.probs()
    }

    pub fn log_prob(&self, k: usize) -> f64 {
        self.log_probs[k]
    }

    pub fn entropy(&self) -> f64 {
        self.dist.entropy()
    }

    /// (∂/∂μ, ∂/∂σ) of ln d_k.
    pub fn grad_log_prob(&self, k: usize) -> (f64, f64) {
        (self.d_mean[k], self.d_std[k])
    }

    /// (∂/∂μ, ∂/∂σ) of the entropy.
    pub fn grad_entropy(&self) -> (f64, f64) {
        let mut gm = 0.0;
        let mut gs = 0.0;
        for (k, p) in self.dist.probs.iter().enumerate() {
            if *p > 0.0 {
                gm -= p * self.d_mean[k] * self.log_probs[k];
                gs -= p * self.d_std[k] * self.log_probs[k];
            }
        }
        (gm, gs)
    }
}

/// Which way a Gaussian is turned into grid probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GridFamily {
    /// Gaussian mass of each midpoint cell.
    Exact,
    /// Averaged density over uniform samples per cell, `n_samples` per cell.
    Sampled { n_samples: usize },
    /// Softmax over −(a_k − μ)²/(2σ²).
    GSoftmax,
}

/// log Φ(hi) − Φ(lo) and its gradient for standardized bounds.
fn exact_cell(lo: f64, hi: f64, params: GaussianParams) -> (f64, f64, f64) {
    let GaussianParams { mean, std } = params;
    let zl = (lo - mean) / std;
    let zh = (hi - mean) / std;
    let lw = if zh <= 0.0 {
        log_diff_exp(log_norm_cdf(zh), log_norm_cdf(zl))
    } else if zl >= 0.0 {
        log_diff_exp(log_norm_cdf(-zl), log_norm_cdf(-zh))
    } else {
        (1.0 - norm_cdf(zl) - norm_cdf(-zh)).ln()
    };
    if lw == f64::NEG_INFINITY {
        return (lw, 0.0, 0.0);
    }
    // φ(z)/d and z·φ(z)/d, zero at infinite bounds
    let ratio = |z: f64| {
        if z.is_finite() {
            let r = (log_norm_pdf(z) - lw).exp();
            (r, z * r)
        } else {
            (0.0, 0.0)
        }
    };
    let (rl, zrl) = ratio(zl);
    let (rh, zrh) = ratio(zh);
    (lw, (rl - rh) / std, (zrl - zrh) / std)
}

/// Uniform positions inside the bounded cells, `n` stratified draws per cell.
/// Outer cells get an empty list.
pub fn sample_positions<R: Rng + ?Sized>(grid: &LocationGrid, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..grid.len())
        .map(|k| {
            let (lo, hi) = grid.cell(k);
            if !lo.is_finite() || !hi.is_finite() {
                return Vec::new();
            }
            let width = hi - lo;
            (0..n)
                .map(|i| lo + (i as f64 + rng.random::<f64>()) / n as f64 * width)
                .collect()
        })
        .collect()
}

/// Sampled estimator for fixed sample positions. Outer cells use the
/// closed-form tail mass.
pub fn disc_gaussian_sampled_at(
    grid: &LocationGrid,
    params: GaussianParams,
    positions: &[Vec<f64>],
) -> Result<ScoredDist> {
    if positions.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} position lists for {} cells",
            positions.len(),
            grid.len()
        )));
    }
    let m = grid.len();
    let GaussianParams { mean, std } = params;
    let mut lw = vec![0.0; m];
    let mut gm = vec![0.0; m];
    let mut gs = vec![0.0; m];
    let mut log_dens = Vec::new();
    for k in 0..m {
        let (lo, hi) = grid.cell(k);
        if !lo.is_finite() || !hi.is_finite() {
            (lw[k], gm[k], gs[k]) = exact_cell(lo, hi, params);
            continue;
        }
        let us = &positions[k];
        if us.is_empty() {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        log_dens.clear();
        log_dens.extend(us.iter().map(|u| log_norm_pdf((u - mean) / std)));
        let lse = log_sum_exp(&log_dens);
        lw[k] = (hi - lo).ln() + lse - (us.len() as f64).ln() - std.ln();
        let (mut sm, mut ss) = (0.0, 0.0);
        for (u, l) in us.iter().zip(&log_dens) {
            let w = (l - lse).exp();
            let d = u - mean;
            sm += w * d;
            ss += w * d * d;
        }
        gm[k] = sm / (std * std);
        gs[k] = ss / (std * std * std) - 1.0 / std;
    }
    ScoredDist::from_log_weights(lw, gm, gs)
}

/// Grid distribution and gradients for any family. `rng` is only drawn from
/// by the sampled family.
pub fn grid_dist<R: Rng + ?Sized>(
    family: GridFamily,
    grid: &LocationGrid,
    params: GaussianParams,
    rng: &mut R,
) -> Result<ScoredDist> {
    GaussianParams::new(params.mean, params.std)?;
    match family {
        GridFamily::Exact => {
            let (mut lw, mut gm, mut gs) = (Vec::new(), Vec::new(), Vec::new());
            for k in 0..grid.len() {
                let (lo, hi) = grid.cell(k);
                let (w, m, s) = exact_cell(lo, hi, params);
                lw.push(w);
                gm.push(m);
                gs.push(s);
            }
            ScoredDist::from_log_weights(lw, gm, gs)
        }
        GridFamily::Sampled { n_samples } => {
            if n_samples == 0 {
                return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
            }
            let positions = sample_positions(grid, n_samples, rng);
            disc_gaussian_sampled_at(grid, params, &positions)
        }
        GridFamily::GSoftmax => {
            let GaussianParams { mean, std } = params;
            let var = std * std;
            let lw = grid.locations().iter().map(|a| -(a - mean).powi(2) / (2.0 * var)).collect();
            let gm = grid.locations().iter().map(|a| (a - mean) / var).collect();
            let gs = grid.locations().iter().map(|a| (a - mean).powi(2) / (var * std)).collect();
            ScoredDist::from_log_weights(lw, gm, gs)
        }
    }
}

/// Grid families that need no randomness.
pub fn grid_dist_deterministic(
    family: GridFamily,
    grid: &LocationGrid,
    params: GaussianParams,
) -> Result<ScoredDist> {
    if let GridFamily::Sampled { .. } = family {
        return Err(Error::InvalidArgument(
            "the sampled family needs a random stream".into(),
        ));
    }
    grid_dist(family, grid, params, &mut rand::rngs::SmallRng::seed_from_u64(0))
}

pub fn disc_gaussian_exact(grid: &LocationGrid, params: GaussianParams) -> Result<DiscreteDist> {
    grid_dist_deterministic(GridFamily::Exact, grid, params).map(ScoredDist::into_dist)
}

pub fn disc_gaussian_sampled<R: Rng + ?Sized>(
    grid: &LocationGrid,
    params: GaussianParams,
    n_samples: usize,
    rng: &mut R,
) -> Result<DiscreteDist> {
    grid_dist(GridFamily::Sampled { n_samples }, grid, params, rng).map(ScoredDist::into_dist)
}

pub fn gsoftmax(grid: &LocationGrid, params: GaussianParams) -> Result<DiscreteDist> {
    grid_dist_deterministic(GridFamily::GSoftmax, grid, params).map(ScoredDist::into_dist)
}

/// Softmax categorical parameterized directly by logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    dist: DiscreteDist,
    log_probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("logits must be finite and non-empty".into()));
        }
        let total = log_sum_exp(logits);
        let log_probs: Vec<f64> = logits.iter().map(|l| l - total).collect();
        let mut probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);
        Ok(Categorical {
            dist: DiscreteDist { probs },
            log_probs,
        })
    }

    pub fn dist(&self) -> &DiscreteDist {
        &self.dist
    }

    pub fn log_prob(&self, k: usize) -> f64 {
        self.log_probs[k]
    }

    pub fn entropy(&self) -> f64 {
        self.dist.entropy()
    }

    /// ∂ln d_k/∂logits.
    pub fn grad_log_prob(&self, k: usize) -> Vec<f64> {
        let mut g: Vec<f64> = self.dist.probs.iter().map(|p| -p).collect();
        g[k] += 1.0;
        g
    }

    /// ∂H/∂logits.
    pub fn grad_entropy(&self) -> Vec<f64> {
        let h = self.entropy();
        self.dist
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, l)| -p * (l + h))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn p(mean: f64, std: f64) -> GaussianParams {
        GaussianParams::new(mean, std).unwrap()
    }

    fn grid3() -> LocationGrid {
        LocationGrid::new(vec![-1.0, 0.0, 1.0]).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cdf_reference_values() {
        assert!(close(norm_cdf(0.0), 0.5, 1e-15));
        assert!(close(norm_cdf(-0.5), 0.308_537_538_725_986_9, 1e-12));
        assert!(close(norm_cdf(1.96), 0.975_002_104_851_780, 1e-12));
        assert!(close(log_norm_cdf(-30.0), -454.321_243_956_343_2, 1e-9));
        assert!(close(log_norm_cdf(-20.5), -214.066_728_963_263_8, 1e-9));
        assert!(close(log_norm_cdf(-19.9), norm_cdf(-19.9).ln(), 1e-9));
        assert!(close(log_norm_cdf(3.0), norm_cdf(3.0).ln(), 1e-15));
    }

    #[test]
    fn exact_three_point() {
        let d = disc_gaussian_exact(&grid3(), p(0.0, 1.0)).unwrap();
        let pr = d.probs();
        assert!(close(pr[0], 0.30854, 1e-5));
        assert!(close(pr[1], 0.38292, 1e-5));
        assert!(close(pr[2], 0.30854, 1e-5));
    }

    #[test]
    fn exact_concentrates_and_is_symmetric() {
        let g = LocationGrid::integers(-3, 3).unwrap();
        let d = disc_gaussian_exact(&g, p(1.0, 1e-9)).unwrap();
        assert!(close(d.probs()[4], 1.0, 1e-12));
        let d = disc_gaussian_exact(&g, p(0.0, 1.7)).unwrap();
        for k in 0..7 {
            assert!(close(d.probs()[k], d.probs()[6 - k], 1e-14));
        }
    }

    #[test]
    fn invalid_std_is_rejected() {
        assert!(GaussianParams::new(0.0, 0.0).is_err());
        let bad = GaussianParams { mean: 0.0, std: -1.0 };
        assert!(disc_gaussian_exact(&grid3(), bad).is_err());
        assert!(gsoftmax(&grid3(), bad).is_err());
        assert!(LocationGrid::new(vec![0.0, 0.0]).is_err());
        assert!(LocationGrid::new(vec![1.0]).is_err());
    }

    #[test]
    fn sampled_converges_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let exact = disc_gaussian_exact(&grid3(), p(0.0, 1.0)).unwrap();
        let approx = disc_gaussian_sampled(&grid3(), p(0.0, 1.0), 10_000, &mut rng).unwrap();
        for k in 0..3 {
            assert!(close(exact.probs()[k], approx.probs()[k], 0.02));
        }
        let a = disc_gaussian_sampled(&grid3(), p(0.3, 0.7), 16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = disc_gaussian_sampled(&grid3(), p(0.3, 0.7), 16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_flat_limit() {
        let g = LocationGrid::integers(0, 6).unwrap();
        let d = disc_gaussian_sampled(&g, p(3.0, 1e4), 16, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let inner = &d.probs()[1..6];
        for q in inner {
            assert!(close(*q, inner[0], 1e-6));
        }
        assert!(disc_gaussian_sampled(&g, p(3.0, 1.0), 0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn gsoftmax_three_point() {
        let d = gsoftmax(&grid3(), p(0.0, 1.0)).unwrap();
        let e = (-0.5f64).exp();
        assert!(close(d.probs()[0], e / (1.0 + 2.0 * e), 1e-12));
        assert!(close(d.probs()[1], 1.0 / (1.0 + 2.0 * e), 1e-12));
        assert!(close(d.probs()[0], 0.27407, 1e-5));
        let s = grid_dist(GridFamily::GSoftmax, &grid3(), p(0.0, 1.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(close(s.grad_log_prob(1).0, 0.0, 1e-15));
    }

    #[test]
    fn gsoftmax_scale_equivariance() {
        let g = LocationGrid::new(vec![-1.0, 0.5, 2.0, 3.0]).unwrap();
        let c = 4.0;
        let gc = LocationGrid::new(g.locations().iter().map(|a| a * c).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = grid_dist(GridFamily::GSoftmax, &g, p(0.7, 0.9), &mut rng).unwrap();
        let b = grid_dist(GridFamily::GSoftmax, &gc, p(0.7 * c, 0.9 * c), &mut rng).unwrap();
        for k in 0..4 {
            assert!(close(a.grad_log_prob(k).0 / c, b.grad_log_prob(k).0, 1e-12));
        }
    }

    #[test]
    fn sampling_frequencies() {
        let d = DiscreteDist::new(vec![1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..1000).all(|_| d.sample(&mut rng) == 0));
        let d = DiscreteDist::new(vec![0.5, 0.5]).unwrap();
        let n = 1_000_000;
        let ones = (0..n).filter(|_| d.sample(&mut rng) == 1).count();
        assert!(close(ones as f64 / n as f64, 0.5, 0.002));
        let seq = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            (0..20).map(|_| d.sample(&mut r)).collect::<Vec<_>>()
        };
        assert_eq!(seq(7), seq(7));
    }

    #[test]
    fn log_prob_and_entropy() {
        let d = DiscreteDist::new(vec![0.25, 0.75]).unwrap();
        assert!(close(d.log_prob(1), -0.28768, 1e-5));
        let u = DiscreteDist::new(vec![0.2; 5]).unwrap();
        assert!(close(u.entropy(), 5f64.ln(), 1e-12));
        let one = DiscreteDist::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(one.entropy(), 0.0);
        assert_eq!(one.log_prob(0), f64::NEG_INFINITY);
    }

    #[test]
    fn snapping() {
        let g = grid3();
        assert_eq!(g.snap(-7.0), 0);
        assert_eq!(g.snap(-0.5), 1);
        assert_eq!(g.snap(0.49), 1);
        assert_eq!(g.snap(0.5), 2);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn fd_check(family: GridFamily, grid: &LocationGrid, mean: f64, std: f64) {
        let h = 1e-5;
        let eval = |m: f64, s: f64| {
            grid_dist(family, grid, p(m, s), &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
        };
        let base = eval(mean, std);
        let (mp, mm) = (eval(mean + h, std), eval(mean - h, std));
        let (sp, sm) = (eval(mean, std + h), eval(mean, std - h));
        for k in 0..grid.len() {
            if base.probs()[k] < 1e-12 {
                continue;
            }
            let (gm, gs) = base.grad_log_prob(k);
            let nm = (mp.log_prob(k) - mm.log_prob(k)) / (2.0 * h);
            let ns = (sp.log_prob(k) - sm.log_prob(k)) / (2.0 * h);
            assert!(rel_err(gm, nm) < 1e-4, "{family:?} k={k} dμ {gm} vs {nm}");
            assert!(rel_err(gs, ns) < 1e-4, "{family:?} k={k} dσ {gs} vs {ns}");
        }
        let (em, es) = base.grad_entropy();
        let nm = (mp.entropy() - mm.entropy()) / (2.0 * h);
        let ns = (sp.entropy() - sm.entropy()) / (2.0 * h);
        assert!(rel_err(em, nm) < 1e-4, "{family:?} dH/dμ {em} vs {nm}");
        assert!(rel_err(es, ns) < 1e-4, "{family:?} dH/dσ {es} vs {ns}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = LocationGrid::new(vec![-2.0, -0.5, 0.0, 1.0, 2.5]).unwrap();
        for family in [
            GridFamily::Exact,
            GridFamily::Sampled { n_samples: 16 },
            GridFamily::GSoftmax,
        ] {
            fd_check(family, &g, 0.3, 0.8);
            fd_check(family, &g, -1.1, 2.0);
            fd_check(family, &grid3(), 0.0, 1.0);
        }
    }

    #[test]
    fn gaussian_and_categorical_gradients() {
        let h = 1e-5;
        let g = Gaussian(p(0.4, 1.3));
        let x = 1.7;
        let (gm, gs) = g.grad_log_prob(x);
        let nm = (Gaussian(p(0.4 + h, 1.3)).log_prob(x) - Gaussian(p(0.4 - h, 1.3)).log_prob(x)) / (2.0 * h);
        let ns = (Gaussian(p(0.4, 1.3 + h)).log_prob(x) - Gaussian(p(0.4, 1.3 - h)).log_prob(x)) / (2.0 * h);
        assert!(rel_err(gm, nm) < 1e-4 && rel_err(gs, ns) < 1e-4);

        let logits = [0.3, -1.2, 2.0, 0.0];
        let c = Categorical::from_logits(&logits).unwrap();
        let gl = c.grad_log_prob(2);
        let ge = c.grad_entropy();
        for j in 0..4 {
            let mut up = logits;
            let mut dn = logits;
            up[j] += h;
            dn[j] -= h;
            let (cu, cd) = (Categorical::from_logits(&up).unwrap(), Categorical::from_logits(&dn).unwrap());
            assert!(rel_err(gl[j], (cu.log_prob(2) - cd.log_prob(2)) / (2.0 * h)) < 1e-4);
            assert!(rel_err(ge[j], (cu.entropy() - cd.entropy()) / (2.0 * h)) < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn distributions_are_proper(
            start in -5.0f64..5.0,
            gaps in proptest::collection::vec(0.05f64..2.0, 1..11),
            mean in -8.0f64..8.0,
            std in 0.01f64..10.0,
            seed in any::<u64>(),
        ) {
            let mut locs = vec![start];
            for g in gaps {
                locs.push(locs.last().unwrap() + g);
            }
            let grid = LocationGrid::new(locs).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for family in [GridFamily::Exact, GridFamily::Sampled { n_samples: 16 }, GridFamily::GSoftmax] {
                let d = grid_dist(family, &grid, p(mean, std), &mut rng).unwrap();
                let sum: f64 = d.probs().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(d.probs().iter().all(|q| *q >= 0.0));
            }
        }

        #[test]
        fn gsoftmax_argmax_ignores_scale(j in 0usize..6, std in 0.01f64..50.0) {
            let grid = LocationGrid::new(vec![-3.0, -1.0, 0.0, 0.5, 2.0, 4.0]).unwrap();
            let mean = grid.locations()[j];
            let d = gsoftmax(&grid, p(mean, std)).unwrap();
            prop_assert_eq!(d.argmax(), j);
        }
    }
}

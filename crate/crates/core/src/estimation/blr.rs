//! Bayesian logistic regression of the compensation probability on `p_r`.
//!
//! Prior: independent `N(0, sd^2)` on intercept and slope. The MAP estimate
//! comes from a damped Newton ascent on the (strictly concave) log posterior;
//! the posterior is sampled with NUTS started around the MAP.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::ChoiceDataset;
use super::diagnostics::quantile;
use super::nuts::{sample_chains, LogDensity, NutsSettings};
use crate::error::{Error, Result};
use crate::model::{sigmoid, BlrParams};

pub const DEFAULT_PRIOR_SD: f64 = 5.0;
pub const DEFAULT_INTERCEPT_CAP: f64 = 10.0;

/// `ln(sigmoid(z))` without overflow or cancellation.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Log posterior (up to a constant) with analytic derivatives.
#[derive(Debug, Clone)]
pub struct BlrPosterior {
    /// `(p_r, n1, n2)` for non-empty levels.
    obs: Vec<(f64, f64, f64)>,
    prior_sd: f64,
}

impl BlrPosterior {
    pub fn new(dataset: &ChoiceDataset, prior_sd: f64) -> Result<Self> {
        if dataset.total_trials() == 0 {
            return Err(Error::EmptyDataset);
        }
        if !(prior_sd > 0.0) {
            return Err(Error::InvalidParameter(format!("prior sd must be positive, got {prior_sd}")));
        }
        let obs = dataset
            .levels
            .iter()
            .filter(|l| l.total() > 0)
            .map(|l| (l.p_r.get(), f64::from(l.n1), f64::from(l.n2)))
            .collect();
        Ok(BlrPosterior { obs, prior_sd })
    }

    fn prior_precision(&self) -> f64 {
        if self.prior_sd.is_infinite() {
            0.0
        } else {
            1.0 / (self.prior_sd * self.prior_sd)
        }
    }

    pub fn log_density(&self, b0: f64, b1: f64) -> f64 {
        let ll: f64 = self
            .obs
            .iter()
            .map(|&(p, n1, n2)| {
                let eta = b0 + b1 * p;
                n2 * log_sigmoid(eta) + n1 * log_sigmoid(-eta)
            })
            .sum();
        ll - 0.5 * self.prior_precision() * (b0 * b0 + b1 * b1)
    }

    pub fn gradient(&self, b0: f64, b1: f64) -> [f64; 2] {
        let tau = self.prior_precision();
        let mut g = [-tau * b0, -tau * b1];
        for &(p, n1, n2) in &self.obs {
            let r = n2 - (n1 + n2) * sigmoid(b0 + b1 * p);
            g[0] += r;
            g[1] += r * p;
        }
        g
    }

    /// Negative Hessian `[[h00, h01], [h01, h11]]`.
    fn neg_hessian(&self, b0: f64, b1: f64) -> [f64; 3] {
        let tau = self.prior_precision();
        let mut h = [tau, 0.0, tau];
        for &(p, n1, n2) in &self.obs {
            let s = sigmoid(b0 + b1 * p);
            let w = (n1 + n2) * s * (1.0 - s);
            h[0] += w;
            h[1] += w * p;
            h[2] += w * p * p;
        }
        h
    }

    /// Damped Newton ascent from the origin. `None` if it fails to settle,
    /// which only happens without a prior on separable data.
    pub fn mode(&self) -> Option<BlrParams> {
        let (mut b0, mut b1) = (0.0, 0.0);
        let mut f = self.log_density(b0, b1);
        for _ in 0..200 {
            let g = self.gradient(b0, b1);
            if g[0].abs().max(g[1].abs()) < 1e-10 {
                return Some(BlrParams::new(b0, b1));
            }
            let h = self.neg_hessian(b0, b1);
            let det = h[0] * h[2] - h[1] * h[1];
            let (d0, d1) = if det > 1e-300 {
                ((h[2] * g[0] - h[1] * g[1]) / det, (h[0] * g[1] - h[1] * g[0]) / det)
            } else {
                (g[0], g[1])
            };
            let slope = g[0] * d0 + g[1] * d1;
            let mut t = 1.0;
            let accepted = loop {
                let (n0, n1) = (b0 + t * d0, b1 + t * d1);
                let fnew = self.log_density(n0, n1);
                if fnew >= f + 1e-4 * t * slope {
                    break Some((n0, n1, fnew));
                }
                t *= 0.5;
                if t < 1e-12 {
                    break None;
                }
            };
            match accepted {
                Some((n0, n1, fnew)) => {
                    b0 = n0;
                    b1 = n1;
                    f = fnew;
                }
                None => return (g[0].abs().max(g[1].abs()) < 1e-6).then(|| BlrParams::new(b0, b1)),
            }
            if !(b0.is_finite() && b1.is_finite()) {
                return None;
            }
        }
        let g = self.gradient(b0, b1);
        (g[0].abs().max(g[1].abs()) < 1e-6).then(|| BlrParams::new(b0, b1))
    }

    /// Best slope with the intercept held fixed.
    pub fn slope_given_intercept(&self, b0: f64) -> f64 {
        let mut b1 = 0.0;
        for _ in 0..200 {
            let g = self.gradient(b0, b1)[1];
            let h = self.neg_hessian(b0, b1)[2];
            if g.abs() < 1e-12 || h <= 0.0 {
                break;
            }
            let mut step = g / h;
            let f = self.log_density(b0, b1);
            while self.log_density(b0, b1 + step) < f && step.abs() > 1e-15 {
                step *= 0.5;
            }
            b1 += step;
        }
        b1
    }
}

impl LogDensity for BlrPosterior {
    fn dim(&self) -> usize {
        2
    }

    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let g = self.gradient(x[0], x[1]);
        grad.copy_from_slice(&g);
        self.log_density(x[0], x[1])
    }
}

/// True when no HA1 choice was observed: the likelihood then rises in the
/// intercept everywhere and an unpenalized fit pushes it to infinity.
pub fn intercept_unbounded(dataset: &ChoiceDataset) -> bool {
    dataset.total_trials() > 0 && dataset.levels.iter().all(|l| l.n1 == 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub prior_sd: f64,
    pub intercept_cap: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig { prior_sd: DEFAULT_PRIOR_SD, intercept_cap: DEFAULT_INTERCEPT_CAP }
    }
}

/// MAP estimate with the intercept cap.
///
/// The intercept is pinned at the cap, and the slope re-optimized there,
/// when the penalized optimum lies above the cap or when the data contain no
/// HA1 choice at all (see [`intercept_unbounded`]).
pub fn blr_map(dataset: &ChoiceDataset, config: &MapConfig) -> Result<BlrParams> {
    let post = BlrPosterior::new(dataset, config.prior_sd)?;
    let mode = post.mode();
    let over_cap = mode.is_none_or(|m| m.beta0 > config.intercept_cap);
    if over_cap || intercept_unbounded(dataset) {
        let b0 = config.intercept_cap;
        return Ok(BlrParams::new(b0, post.slope_given_intercept(b0)));
    }
    Ok(mode.expect("checked above"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub prior_sd: f64,
    pub target_accept: f64,
    pub max_depth: u32,
    pub max_r_hat: f64,
    pub min_ess: f64,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        PosteriorConfig {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            seed: 0,
            prior_sd: DEFAULT_PRIOR_SD,
            target_accept: 0.8,
            max_depth: 10,
            max_r_hat: 1.05,
            min_ess: 400.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: BlrParams,
    /// Posterior standard deviation of (beta0, beta1).
    pub sd: [f64; 2],
    /// 2.5% and 97.5% quantiles per parameter.
    pub ci95: [[f64; 2]; 2],
    /// Widths of the central 95% intervals.
    pub ci95_width: [f64; 2],
    pub r_hat: [f64; 2],
    pub ess: [f64; 2],
    pub chains: usize,
    pub draws_per_chain: usize,
    pub divergences: usize,
    pub diagnostics_passed: bool,
    /// Trajectory rule of the sampler.
    pub sampler: String,
}

impl PosteriorSummary {
    /// Interval widths, withheld when the diagnostics failed.
    pub fn reportable_ci95_width(&self) -> Option<[f64; 2]> {
        self.diagnostics_passed.then_some(self.ci95_width)
    }
}

/// Samples the posterior with NUTS and summarizes it.
pub fn blr_posterior(dataset: &ChoiceDataset, config: &PosteriorConfig) -> Result<PosteriorSummary> {
    let post = BlrPosterior::new(dataset, config.prior_sd)?;
    if config.chains == 0 || config.samples < 4 {
        return Err(Error::InvalidParameter("need at least one chain and four draws".into()));
    }
    let center = post.mode().unwrap_or(BlrParams::new(0.0, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let jitter = Normal::new(0.0, 1.0).expect("valid normal");
    let inits: Vec<Vec<f64>> = (0..config.chains)
        .map(|_| vec![center.beta0 + jitter.sample(&mut rng), center.beta1 + jitter.sample(&mut rng)])
        .collect();
    let settings = NutsSettings {
        warmup: config.warmup,
        samples: config.samples,
        target_accept: config.target_accept,
        max_depth: config.max_depth,
        adapt_mass: true,
    };
    let out = sample_chains(&post, &inits, &settings, config.seed);
    Ok(summarize(&out, config))
}

fn summarize(out: &super::nuts::MultiChainOutput, config: &PosteriorConfig) -> PosteriorSummary {
    let mut mean = [0.0; 2];
    let mut sd = [0.0; 2];
    let mut ci95 = [[0.0; 2]; 2];
    let mut r_hat = [0.0; 2];
    let mut ess = [0.0; 2];
    for k in 0..2 {
        let mut all = out.coordinate(k).concat();
        let n = all.len() as f64;
        mean[k] = all.iter().sum::<f64>() / n;
        sd[k] = (all.iter().map(|x| (x - mean[k]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        all.sort_by(f64::total_cmp);
        ci95[k] = [quantile(&all, 0.025), quantile(&all, 0.975)];
        r_hat[k] = out.r_hat(k);
        ess[k] = out.ess(k);
    }
    let diagnostics_passed = r_hat.iter().all(|&r| r <= config.max_r_hat) && ess.iter().all(|&e| e >= config.min_ess);
    PosteriorSummary {
        mean: BlrParams::new(mean[0], mean[1]),
        sd,
        ci95,
        ci95_width: [ci95[0][1] - ci95[0][0], ci95[1][1] - ci95[1][0]],
        r_hat,
        ess,
        chains: out.chains.len(),
        draws_per_chain: config.samples,
        divergences: out.divergences(),
        diagnostics_passed,
        sampler: "nuts-multinomial-diag".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_ha2() -> ChoiceDataset {
        ChoiceDataset::from_counts(&[(0.1, 0, 20), (0.3, 0, 20), (0.5, 0, 20), (0.7, 0, 20), (0.9, 0, 20)]).unwrap()
    }

    #[test]
    fn log_sigmoid_is_accurate_in_both_tails() {
        assert!((log_sigmoid(0.0) + 2f64.ln()).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0) == 0.0);
        assert!((log_sigmoid(40.0) + (-40f64).exp()).abs() < 1e-30);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = ChoiceDataset::from_counts(&[(0.1, 8, 2), (0.5, 5, 5), (0.9, 1, 9)]).unwrap();
        let post = BlrPosterior::new(&ds, 5.0).unwrap();
        for &(b0, b1) in &[(0.0, 0.0), (-2.0, 4.0), (3.0, -1.0)] {
            let g = post.gradient(b0, b1);
            let h = 1e-6;
            let fd0 = (post.log_density(b0 + h, b1) - post.log_density(b0 - h, b1)) / (2.0 * h);
            let fd1 = (post.log_density(b0, b1 + h) - post.log_density(b0, b1 - h)) / (2.0 * h);
            assert!((g[0] - fd0).abs() < 1e-6 && (g[1] - fd1).abs() < 1e-6);
        }
    }

    #[test]
    fn all_compensate_engages_cap() {
        let ds = all_ha2();
        assert!(intercept_unbounded(&ds));
        let map = blr_map(&ds, &MapConfig::default()).unwrap();
        assert_eq!(map.beta0, 10.0);
        assert!(map.beta1.is_finite());
        // The penalized optimum alone stays below the cap.
        let mode = BlrPosterior::new(&ds, 5.0).unwrap().mode().unwrap();
        assert!(mode.beta0 < 10.0);
    }

    #[test]
    fn balanced_data_maps_to_origin() {
        let ds = ChoiceDataset::from_counts(&[(0.1, 5, 5), (0.5, 5, 5), (0.9, 5, 5)]).unwrap();
        let map = blr_map(&ds, &MapConfig::default()).unwrap();
        assert!(map.beta0.abs() < 1e-9 && map.beta1.abs() < 1e-9);
    }

    #[test]
    fn flat_prior_recovers_saturated_mle() {
        // Two levels: the MLE interpolates both empirical rates exactly.
        let ds = ChoiceDataset::from_counts(&[(0.2, 80, 20), (0.7, 30, 70)]).unwrap();
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let b1 = (logit(0.7) - logit(0.2)) / 0.5;
        let b0 = logit(0.2) - 0.2 * b1;
        let map = blr_map(&ds, &MapConfig { prior_sd: 1e6, ..MapConfig::default() }).unwrap();
        assert!((map.beta0 - b0).abs() < 1e-2 && (map.beta1 - b1).abs() < 1e-2, "{map:?}");
    }

    #[test]
    fn posterior_rejects_bad_config() {
        let cfg = PosteriorConfig { chains: 0, ..PosteriorConfig::default() };
        assert!(blr_posterior(&all_ha2(), &cfg).is_err());
        assert!(BlrPosterior::new(&all_ha2(), 0.0).is_err());
    }
}

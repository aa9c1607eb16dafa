//! Maximum-likelihood fitting of the CPT-softmax model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{rmse, ChoiceDataset, RmsePoints};
use super::optimize::{latin_hypercube, minimize_box, projected_gradient, BoxSettings, Objective};
use crate::error::{Error, Result};
use crate::model::{cpt_choice_prob, prelec, sigmoid, CptBounds, CptParams, PayoffSpec};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

struct LevelTerm {
    p_r: f64,
    n1: f64,
    n2: f64,
}

fn terms(dataset: &ChoiceDataset) -> Vec<LevelTerm> {
    dataset
        .levels
        .iter()
        .filter(|l| l.total() > 0)
        .map(|l| LevelTerm { p_r: l.p_r.get(), n1: f64::from(l.n1), n2: f64::from(l.n2) })
        .collect()
}

/// `(ln P2, d ln P2 / dz, ln P1, d ln P1 / dz)` for logit `z`, with clamping.
#[inline]
fn log_probs(z: f64) -> (f64, f64, f64, f64) {
    let p2 = sigmoid(z);
    let p1 = sigmoid(-z);
    let (l2, d2) = if p2 < PROB_CLAMP {
        (PROB_CLAMP.ln(), 0.0)
    } else if p2 > 1.0 - PROB_CLAMP {
        ((1.0 - PROB_CLAMP).ln(), 0.0)
    } else {
        (p2.ln(), p1)
    };
    let (l1, d1) = if p1 < PROB_CLAMP {
        (PROB_CLAMP.ln(), 0.0)
    } else if p1 > 1.0 - PROB_CLAMP {
        ((1.0 - PROB_CLAMP).ln(), 0.0)
    } else {
        (p1.ln(), -p2)
    };
    (l2, d2, l1, d1)
}

struct CptObjective<'a> {
    terms: &'a [LevelTerm],
    payoff: PayoffSpec,
}

impl CptObjective<'_> {
    fn value_of(&self, params: &CptParams) -> f64 {
        let span = self.payoff.loss + self.payoff.reward;
        self.terms
            .iter()
            .map(|t| {
                let du = -params.cost + span * prelec(t.p_r, params.alpha, params.beta);
                let (l2, _, l1, _) = log_probs(params.lambda * du);
                -(t.n2 * l2 + t.n1 * l1)
            })
            .sum()
    }

    fn gradient_of(&self, params: &CptParams) -> [f64; 4] {
        let span = self.payoff.loss + self.payoff.reward;
        let CptParams { alpha, beta, cost, lambda } = *params;
        let mut g = [0.0; 4];
        for t in self.terms {
            let w = prelec(t.p_r, alpha, beta);
            let du = -cost + span * w;
            let (_, d2, _, d1) = log_probs(lambda * du);
            let dnll_dz = -(t.n2 * d2 + t.n1 * d1);
            // dw/dalpha and dw/dbeta vanish at the endpoints.
            let (dw_da, dw_db) = if t.p_r > 0.0 && t.p_r < 1.0 {
                let l = -t.p_r.ln();
                let la = l.powf(alpha);
                (-w * beta * la * l.ln(), -w * la)
            } else {
                (0.0, 0.0)
            };
            g[0] += dnll_dz * lambda * span * dw_da;
            g[1] += dnll_dz * lambda * span * dw_db;
            g[2] -= dnll_dz * lambda;
            g[3] += dnll_dz * du;
        }
        g
    }
}

impl Objective<4> for CptObjective<'_> {
    fn value(&self, x: &[f64; 4]) -> f64 {
        self.value_of(&CptParams::from_array(*x))
    }

    fn gradient(&self, x: &[f64; 4]) -> [f64; 4] {
        self.gradient_of(&CptParams::from_array(*x))
    }
}

fn require_trials(dataset: &ChoiceDataset) -> Result<()> {
    if dataset.total_trials() == 0 {
        Err(Error::EmptyDataset)
    } else {
        Ok(())
    }
}

/// Negative log-likelihood of the observed counts.
pub fn nll(dataset: &ChoiceDataset, params: &CptParams, payoff: &PayoffSpec) -> Result<f64> {
    require_trials(dataset)?;
    let terms = terms(dataset);
    Ok(CptObjective { terms: &terms, payoff: *payoff }.value_of(params))
}

/// Analytic gradient of [`nll`] in `(alpha, beta, C, lambda)`.
pub fn nll_gradient(dataset: &ChoiceDataset, params: &CptParams, payoff: &PayoffSpec) -> Result<[f64; 4]> {
    require_trials(dataset)?;
    let terms = terms(dataset);
    Ok(CptObjective { terms: &terms, payoff: *payoff }.gradient_of(params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub starts: usize,
    pub seed: u64,
    pub bounds: CptBounds,
    pub payoff: PayoffSpec,
    pub max_iter: usize,
    /// Optima within this NLL gap of the best one are reported.
    pub optimum_nll_tol: f64,
    /// Reported optima differing by more than this in alpha or beta mark
    /// the weighting function as not identified.
    pub identifiability_tol: f64,
    pub rmse_points: RmsePoints,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            starts: 16,
            seed: 0,
            bounds: CptBounds::STANDARD,
            payoff: PayoffSpec::normalized(0.0),
            max_iter: 500,
            optimum_nll_tol: 1e-6,
            identifiability_tol: 0.5,
            rmse_points: RmsePoints::PerRound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalOptimum {
    pub params: CptParams,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: CptParams,
    pub nll: f64,
    pub rmse: f64,
    pub restarts: usize,
    /// Distinct optima whose NLL is within `optimum_nll_tol` of the best.
    pub local_optima: Vec<LocalOptimum>,
    pub converged: bool,
    /// Infinity norm of the projected gradient at `params`.
    pub projected_gradient_norm: f64,
    /// False when fewer than two levels were observed or when equally good
    /// optima disagree on the weighting parameters.
    pub identifiable: bool,
}

impl FitResult {
    /// Whether two reported optima differ in alpha by more than `alpha_gap`.
    pub fn has_alpha_ambiguity(&self, alpha_gap: f64) -> bool {
        let best = self.nll;
        self.local_optima.iter().any(|a| {
            self.local_optima.iter().any(|b| {
                (a.params.alpha - b.params.alpha).abs() > alpha_gap
                    && (a.nll - best).abs() < 1e-6
                    && (b.nll - best).abs() < 1e-6
            })
        })
    }
}

/// Multi-start box-constrained maximum-likelihood fit.
pub fn fit_cpt(dataset: &ChoiceDataset, config: &FitConfig) -> Result<FitResult> {
    require_trials(dataset)?;
    config.bounds.validate()?;
    if config.starts == 0 {
        return Err(Error::InvalidParameter("at least one start is required".into()));
    }
    let terms = terms(dataset);
    let objective = CptObjective { terms: &terms, payoff: config.payoff };
    let (lo, hi) = (config.bounds.lower, config.bounds.upper);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts = latin_hypercube(config.starts, &lo, &hi, &mut rng);
    let settings = BoxSettings { max_iter: config.max_iter, ..BoxSettings::default() };

    let runs: Vec<_> = starts
        .par_iter()
        .map(|x0| minimize_box(&objective, *x0, &lo, &hi, &settings))
        .collect();

    let best = runs
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start");
    let params = CptParams::from_array(config.bounds.clamp(best.x));

    let mut local_optima: Vec<LocalOptimum> = Vec::new();
    let mut sorted: Vec<_> = runs.iter().filter(|r| r.value - best.value <= config.optimum_nll_tol).collect();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value));
    for r in sorted {
        let distinct = local_optima.iter().all(|o| {
            let x = o.params.to_array();
            (0..4).any(|i| (x[i] - r.x[i]).abs() > 1e-4 * (hi[i] - lo[i]))
        });
        if distinct {
            local_optima.push(LocalOptimum { params: CptParams::from_array(r.x), nll: r.value });
        }
    }

    let weighting_ambiguous = local_optima.iter().any(|o| {
        (o.params.alpha - params.alpha).abs() > config.identifiability_tol
            || (o.params.beta - params.beta).abs() > config.identifiability_tol
    });
    let g = objective.gradient_of(&params);
    let pg = projected_gradient(&params.to_array(), &g, &lo, &hi);

    Ok(FitResult {
        params,
        nll: best.value,
        rmse: rmse(dataset, |p| cpt_choice_prob(p, &params, &config.payoff).get(), config.rmse_points),
        restarts: runs.len(),
        local_optima,
        converged: best.converged,
        projected_gradient_norm: pg.iter().fold(0.0, |m, x| m.max(x.abs())),
        identifiable: dataset.distinct_levels() >= 2 && !weighting_ambiguous,
    })
}

//! Choice models for the relax/compensate decision.
//!
//! A participant picks [`HumanAction::Relax`] (HA1) or [`HumanAction::Compensate`]
//! (HA2) before the robot reveals [`RobotAction::Assist`] (RA1) or
//! [`RobotAction::Perturb`] (RA2). Two descriptions of the compensation
//! probability live here: the CPT-softmax model built on the Prelec weighting
//! function, and a two-parameter logistic curve.
//!
//! Every function is pure and allocation-free except [`softmax_choice`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The participant's pre-Go decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HumanAction {
    /// HA1: no preemptive effort.
    #[serde(rename = "HA1")]
    Relax,
    /// HA2: preload against a possible sideways push.
    #[serde(rename = "HA2")]
    Compensate,
}

impl HumanAction {
    pub const ALL: [HumanAction; 2] = [HumanAction::Relax, HumanAction::Compensate];

    pub fn code(self) -> &'static str {
        match self {
            HumanAction::Relax => "HA1",
            HumanAction::Compensate => "HA2",
        }
    }
}

impl fmt::Display for HumanAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for HumanAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HA1" => Ok(HumanAction::Relax),
            "HA2" => Ok(HumanAction::Compensate),
            other => Err(Error::InvalidParameter(format!("unknown human action {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RobotAction {
    /// RA1: the robot carries the handle straight to the target.
    #[serde(rename = "RA1")]
    Assist,
    /// RA2: the robot pushes the handle sideways.
    #[serde(rename = "RA2")]
    Perturb,
}

impl RobotAction {
    pub fn code(self) -> &'static str {
        match self {
            RobotAction::Assist => "RA1",
            RobotAction::Perturb => "RA2",
        }
    }
}

impl fmt::Display for RobotAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// A value on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::ProbabilityOutOfRange(value))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Outcome values of the payoff table: reward `V` for a successful reach,
/// loss magnitude `G` for a failed one and effort cost `C` of compensating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffSpec {
    #[serde(rename = "v")]
    pub reward: f64,
    #[serde(rename = "g")]
    pub loss: f64,
    #[serde(rename = "c")]
    pub cost: f64,
}

impl PayoffSpec {
    pub fn new(reward: f64, loss: f64, cost: f64) -> Result<Self> {
        if !(reward > 0.0 && reward.is_finite()) {
            return Err(Error::InvalidParameter(format!("reward V must be positive, got {reward}")));
        }
        if !(loss > 0.0 && loss.is_finite()) {
            return Err(Error::InvalidParameter(format!("loss G must be positive, got {loss}")));
        }
        if !(cost >= 0.0 && cost.is_finite()) {
            return Err(Error::InvalidParameter(format!("cost C must be non-negative, got {cost}")));
        }
        Ok(PayoffSpec { reward, loss, cost })
    }

    /// `V = G = 1`, the normalization used for fitting.
    pub fn normalized(cost: f64) -> Self {
        PayoffSpec { reward: 1.0, loss: 1.0, cost }
    }

    pub fn with_cost(self, cost: f64) -> Self {
        PayoffSpec { cost, ..self }
    }
}

impl Default for PayoffSpec {
    fn default() -> Self {
        PayoffSpec::normalized(0.0)
    }
}

/// Box bounds on the CPT-softmax parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CptBounds {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl CptBounds {
    /// alpha in [0.5, 3], beta in [0.5, 5], C in [0.01, 5], lambda in [1, 30].
    pub const STANDARD: CptBounds = CptBounds {
        lower: [0.5, 0.5, 0.01, 1.0],
        upper: [3.0, 5.0, 5.0, 30.0],
    };

    pub fn contains(&self, params: &CptParams) -> bool {
        params
            .to_array()
            .iter()
            .enumerate()
            .all(|(i, &x)| x >= self.lower[i] && x <= self.upper[i])
    }

    pub fn clamp(&self, x: [f64; 4]) -> [f64; 4] {
        std::array::from_fn(|i| x[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter(format!("bad bound [{lo}, {hi}] for {}", CptParams::NAMES[i])));
            }
        }
        if self.lower[0] <= 0.0 || self.lower[1] <= 0.0 || self.lower[2] < 0.0 || self.lower[3] <= 0.0 {
            return Err(Error::InvalidParameter("alpha, beta and lambda must stay positive and C non-negative".into()));
        }
        Ok(())
    }
}

impl Default for CptBounds {
    fn default() -> Self {
        CptBounds::STANDARD
    }
}

/// CPT-softmax parameters: weighting curvature `alpha`, weighting elevation
/// `beta`, effort cost `C` and rationality `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CptParams {
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "c")]
    pub cost: f64,
    pub lambda: f64,
}

impl CptParams {
    pub const NAMES: [&'static str; 4] = ["alpha", "beta", "c", "lambda"];

    /// Builds parameters and checks them against [`CptBounds::STANDARD`].
    pub fn new(alpha: f64, beta: f64, cost: f64, lambda: f64) -> Result<Self> {
        let params = CptParams { alpha, beta, cost, lambda };
        if CptBounds::STANDARD.contains(&params) {
            Ok(params)
        } else {
            Err(Error::InvalidParameter(format!(
                "CPT parameters {:?} outside the standard box",
                params.to_array()
            )))
        }
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        CptParams { alpha: x[0], beta: x[1], cost: x[2], lambda: x[3] }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.cost, self.lambda]
    }
}

/// Intercept and slope of the logistic compensation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlrParams {
    pub beta0: f64,
    pub beta1: f64,
}

impl BlrParams {
    pub fn new(beta0: f64, beta1: f64) -> Self {
        BlrParams { beta0, beta1 }
    }
}

/// Table value of an (action, robot action) pair.
pub fn subjective_value(human: HumanAction, robot: RobotAction, payoff: &PayoffSpec) -> f64 {
    match (human, robot) {
        (HumanAction::Relax, RobotAction::Assist) => payoff.reward,
        (HumanAction::Relax, RobotAction::Perturb) => -payoff.loss,
        (HumanAction::Compensate, _) => payoff.reward - payoff.cost,
    }
}

/// Prelec weighting `exp(-beta * (-ln p)^alpha)` with the endpoint limits
/// `w(0) = 0` and `w(1) = 1`.
pub fn prelec_weight(p: Probability, alpha: f64, beta: f64) -> Probability {
    Probability(prelec(p.get(), alpha, beta))
}

#[inline]
pub(crate) fn prelec(p: f64, alpha: f64, beta: f64) -> f64 {
    debug_assert!(alpha > 0.0 && beta > 0.0);
    if p <= 0.0 {
        0.0
    } else if p >= 1.0 {
        1.0
    } else {
        (-beta * (-p.ln()).powf(alpha)).exp()
    }
}

/// Utility difference `U(HA2) - U(HA1) = -C + (G + V) * w(p_r)`.
///
/// Compensation is treated as a sure outcome worth `V - C`; relaxing is a
/// gamble between `-G` with weight `w(p_r)` and `V` with weight `1 - w(p_r)`.
pub fn delta_utility(p_r: Probability, params: &CptParams, payoff: &PayoffSpec) -> f64 {
    delta_u(p_r.get(), params, payoff)
}

#[inline]
pub(crate) fn delta_u(p_r: f64, params: &CptParams, payoff: &PayoffSpec) -> f64 {
    -params.cost + (payoff.loss + payoff.reward) * prelec(p_r, params.alpha, params.beta)
}

/// How outcome probabilities enter an action's utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityForm {
    /// HA2 is a certain outcome; HA1 weighs the loss by `w(p_r)` and the
    /// reward by `1 - w(p_r)`. This is the form used for fitting.
    #[default]
    CertainCompensation,
    /// Each outcome is weighted independently: `w(1 - p_r)` for RA1 and
    /// `w(p_r)` for RA2. The weights need not sum to one.
    IndependentWeights,
}

/// CPT utility of one action at perturbation probability `p_r`; the effort
/// cost is taken from `params`.
pub fn action_utility(
    human: HumanAction,
    p_r: Probability,
    params: &CptParams,
    payoff: &PayoffSpec,
    form: UtilityForm,
) -> f64 {
    let payoff = payoff.with_cost(params.cost);
    let assist = subjective_value(human, RobotAction::Assist, &payoff);
    let perturb = subjective_value(human, RobotAction::Perturb, &payoff);
    let w_perturb = prelec(p_r.get(), params.alpha, params.beta);
    match (form, human) {
        (UtilityForm::CertainCompensation, HumanAction::Compensate) => assist,
        (UtilityForm::CertainCompensation, HumanAction::Relax) => assist * (1.0 - w_perturb) + perturb * w_perturb,
        (UtilityForm::IndependentWeights, _) => {
            let w_assist = prelec(1.0 - p_r.get(), params.alpha, params.beta);
            assist * w_assist + perturb * w_perturb
        }
    }
}

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability of choosing HA2 under the CPT-softmax model.
pub fn cpt_choice_prob(p_r: Probability, params: &CptParams, payoff: &PayoffSpec) -> Probability {
    Probability(sigmoid(params.lambda * delta_u(p_r.get(), params, payoff)))
}

/// Softmax over action utilities with rationality `lambda`.
pub fn softmax_choice(utilities: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if utilities.is_empty() {
        return Err(Error::InvalidParameter("softmax needs at least one utility".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if utilities.iter().any(|u| !u.is_finite()) {
        return Err(Error::InvalidParameter("utilities must be finite".into()));
    }
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = utilities.iter().map(|u| (lambda * (u - max)).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}

/// Probability of choosing HA2 under the logistic curve.
pub fn blr_choice_prob(p_r: Probability, params: &BlrParams) -> Probability {
    Probability(sigmoid(params.beta0 + params.beta1 * p_r.get()))
}

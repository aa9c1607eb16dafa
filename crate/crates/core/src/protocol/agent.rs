use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{blr_choice_prob, cpt_choice_prob, BlrParams, CptParams, HumanAction, PayoffSpec, Probability};

/// Decision rule of a synthetic participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    AlwaysRelax,
    AlwaysCompensate,
    /// Compensates iff `p_r >= threshold`.
    StepThreshold { threshold: f64 },
    Cpt { params: CptParams, payoff: PayoffSpec },
    Blr { params: BlrParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    #[serde(flatten)]
    pub kind: AgentKind,
    #[serde(default)]
    pub seed: u64,
}

impl AgentSpec {
    pub fn new(kind: AgentKind, seed: u64) -> Result<Self> {
        let spec = AgentSpec { kind, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn always_relax() -> Self {
        AgentSpec { kind: AgentKind::AlwaysRelax, seed: 0 }
    }

    pub fn always_compensate() -> Self {
        AgentSpec { kind: AgentKind::AlwaysCompensate, seed: 0 }
    }

    pub fn cpt(params: CptParams, seed: u64) -> Self {
        AgentSpec { kind: AgentKind::Cpt { params, payoff: PayoffSpec::normalized(params.cost) }, seed }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AgentKind::StepThreshold { threshold } if !(0.0..=1.0).contains(&threshold) => {
                Err(Error::InvalidParameter(format!("threshold {threshold} is outside [0, 1]")))
            }
            AgentKind::Cpt { params, .. }
                if !(params.alpha > 0.0 && params.beta > 0.0 && params.cost >= 0.0 && params.lambda > 0.0) =>
            {
                Err(Error::InvalidParameter(format!("invalid CPT parameters {params:?}")))
            }
            AgentKind::Blr { params } if !(params.beta0.is_finite() && params.beta1.is_finite()) => {
                Err(Error::InvalidParameter("BLR parameters must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Probability that this agent compensates at `p_r`.
    pub fn compensation_probability(&self, p_r: Probability) -> f64 {
        match self.kind {
            AgentKind::AlwaysRelax => 0.0,
            AgentKind::AlwaysCompensate => 1.0,
            AgentKind::StepThreshold { threshold } => f64::from(u8::from(p_r.get() >= threshold)),
            AgentKind::Cpt { params, payoff } => cpt_choice_prob(p_r, &params, &payoff).get(),
            AgentKind::Blr { params } => blr_choice_prob(p_r, &params).get(),
        }
    }

    /// Draws a choice. Deterministic rules never touch `rng`.
    pub fn choose<R: Rng>(&self, p_r: Probability, rng: &mut R) -> HumanAction {
        let p2 = match self.kind {
            AgentKind::AlwaysRelax => return HumanAction::Relax,
            AgentKind::AlwaysCompensate => return HumanAction::Compensate,
            AgentKind::StepThreshold { threshold } => {
                return if p_r.get() >= threshold { HumanAction::Compensate } else { HumanAction::Relax };
            }
            _ => self.compensation_probability(p_r),
        };
        if rng.random::<f64>() < p2 {
            HumanAction::Compensate
        } else {
            HumanAction::Relax
        }
    }
}

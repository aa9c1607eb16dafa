//! From session logs to per-participant summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    blr_map, blr_posterior, fit_cpt, rmse, ChoiceDataset, FitConfig, FitResult, LevelCounts, MapConfig,
    PosteriorConfig, PosteriorSummary,
};
use crate::model::{blr_choice_prob, cpt_choice_prob, BlrParams, CptParams, HumanAction, PayoffSpec, Probability};
use crate::protocol::{SessionLog, TrialRecord};

/// Fraction of a block's trials, failures included, on which HA2 was chosen.
pub fn compensation_probability<'a, I>(block: I) -> Result<Probability>
where
    I: IntoIterator<Item = &'a TrialRecord>,
{
    let (mut n, mut n2) = (0u32, 0u32);
    for t in block {
        n += 1;
        n2 += u32::from(t.human_action == HumanAction::Compensate);
    }
    if n == 0 {
        return Err(Error::EmptyBlock);
    }
    Probability::new(f64::from(n2) / f64::from(n))
}

/// Counts per (round, level); pool with [`ChoiceDataset::pooled`].
pub fn build_choice_dataset(log: &SessionLog) -> Result<ChoiceDataset> {
    dataset_from_trials(&log.trials)
}

pub fn dataset_from_trials(trials: &[TrialRecord]) -> Result<ChoiceDataset> {
    if trials.is_empty() {
        return Err(Error::NoTrials);
    }
    let mut levels: Vec<LevelCounts> = Vec::new();
    for t in trials {
        let entry = match levels.iter_mut().find(|l| l.round == Some(t.round) && l.p_r == t.p_r) {
            Some(e) => e,
            None => {
                levels.push(LevelCounts { p_r: t.p_r, n1: 0, n2: 0, round: Some(t.round) });
                levels.last_mut().expect("just pushed")
            }
        };
        match t.human_action {
            HumanAction::Relax => entry.n1 += 1,
            HumanAction::Compensate => entry.n2 += 1,
        }
    }
    levels.sort_by(|a, b| a.round.cmp(&b.round).then(a.p_r.get().total_cmp(&b.p_r.get())));
    ChoiceDataset::new(levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPoint {
    pub round: u32,
    pub p_r: Probability,
    pub p2: f64,
    pub trials: u32,
}

/// Block-level compensation probabilities, one per recorded block.
pub fn empirical_points(log: &SessionLog) -> Result<Vec<EmpiricalPoint>> {
    log.blocks()
        .into_iter()
        .map(|(round, block)| {
            let trials = log.block_trials(round, block);
            Ok(EmpiricalPoint {
                round,
                p_r: trials[0].p_r,
                p2: compensation_probability(trials.iter().copied())?.get(),
                trials: trials.len() as u32,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cluster {
    AlwaysCompensate,
    TradeOff,
}

/// Always-compensate iff the fitted effort cost is at most `max_cost` or
/// every block-level P2 is at least `min_p2`. Both bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterRule {
    pub max_cost: f64,
    pub min_p2: f64,
}

impl Default for ClusterRule {
    fn default() -> Self {
        ClusterRule { max_cost: 0.05, min_p2: 0.9 }
    }
}

impl ClusterRule {
    pub fn classify(&self, fitted_cost: f64, empirical_p2: &[f64]) -> Cluster {
        let min_p2 = empirical_p2.iter().copied().fold(f64::INFINITY, f64::min);
        if fitted_cost <= self.max_cost || (!empirical_p2.is_empty() && min_p2 >= self.min_p2) {
            Cluster::AlwaysCompensate
        } else {
            Cluster::TradeOff
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "always_compensate iff fitted C <= {} or min block-level P2 >= {}; otherwise trade_off",
            self.max_cost, self.min_p2
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSummary {
    pub participant_id: String,
    pub empirical_p2: Vec<EmpiricalPoint>,
    pub cpt_fit: FitResult,
    pub blr_map: BlrParams,
    pub blr_rmse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blr_posterior: Option<PosteriorSummary>,
    pub cluster: Cluster,
    pub cluster_rule: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub fit: FitConfig,
    pub map: MapConfig,
    /// Skip posterior sampling when `None`.
    pub posterior: Option<PosteriorConfig>,
    pub rule: ClusterRule,
}

/// Fits both models to one participant and assigns a cluster.
pub fn summarize_participant(log: &SessionLog, config: &SummaryConfig) -> Result<ParticipantSummary> {
    let dataset = build_choice_dataset(log)?;
    let empirical_p2 = empirical_points(log)?;
    let cpt_fit = fit_cpt(&dataset, &config.fit)?;
    let map = blr_map(&dataset, &config.map)?;
    let blr_rmse = rmse(&dataset, |p| blr_choice_prob(p, &map).get(), config.fit.rmse_points);
    let blr_posterior = config.posterior.as_ref().map(|pc| blr_posterior(&dataset, pc)).transpose()?;
    let p2s: Vec<f64> = empirical_p2.iter().map(|e| e.p2).collect();
    Ok(ParticipantSummary {
        participant_id: log.participant_id.clone(),
        cluster: config.rule.classify(cpt_fit.params.cost, &p2s),
        cluster_rule: config.rule.describe(),
        empirical_p2,
        cpt_fit,
        blr_map: map,
        blr_rmse,
        blr_posterior,
    })
}

/// Re-labels summaries under `rule`.
pub fn cluster_participants(summaries: &mut [ParticipantSummary], rule: &ClusterRule) {
    for s in summaries.iter_mut() {
        let p2s: Vec<f64> = s.empirical_p2.iter().map(|e| e.p2).collect();
        s.cluster = rule.classify(s.cpt_fit.params.cost, &p2s);
        s.cluster_rule = rule.describe();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Absolute error of (alpha, beta, C, lambda).
    pub abs_error: [f64; 4],
    /// Largest gap between true and fitted choice curves on the grid.
    pub curve_max_abs_error: f64,
    pub grid_points: usize,
    /// Set when equally good optima disagree on alpha by more than 0.5.
    pub non_identifiable: bool,
}

pub fn recovery_report(truth: &CptParams, fit: &FitResult, grid: &[Probability], payoff: &PayoffSpec) -> RecoveryReport {
    let t = truth.to_array();
    let f = fit.params.to_array();
    let curve_max_abs_error = grid
        .iter()
        .map(|&p| (cpt_choice_prob(p, truth, payoff).get() - cpt_choice_prob(p, &fit.params, payoff).get()).abs())
        .fold(0.0, f64::max);
    RecoveryReport {
        abs_error: std::array::from_fn(|i| (t[i] - f[i]).abs()),
        curve_max_abs_error,
        grid_points: grid.len(),
        non_identifiable: fit.has_alpha_ambiguity(0.5),
    }
}

/// `n` evenly spaced points covering [0, 1], endpoints included.
pub fn uniform_grid(n: usize) -> Vec<Probability> {
    match n {
        0 => Vec::new(),
        1 => vec![Probability::ZERO],
        _ => (0..n)
            .map(|i| Probability::new((i as f64 / (n - 1) as f64).min(1.0)).expect("grid inside [0, 1]"))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CurveModel {
    Cpt { params: CptParams, payoff: PayoffSpec },
    Blr { params: BlrParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub p_r: f64,
    pub p2: f64,
}

pub fn curve_export(model: &CurveModel, grid: &[Probability]) -> Vec<CurvePoint> {
    grid.iter()
        .map(|&p| CurvePoint {
            p_r: p.get(),
            p2: match model {
                CurveModel::Cpt { params, payoff } => cpt_choice_prob(p, params, payoff).get(),
                CurveModel::Blr { params } => blr_choice_prob(p, params).get(),
            },
        })
        .collect()
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("p_r,p2\n");
    for pt in points {
        out.push_str(&format!("{},{}\n", pt.p_r, pt.p2));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RobotAction;
    use crate::protocol::{simulate_session, AgentSpec, ProtocolConfig};

    fn trial(action: HumanAction, robot: RobotAction) -> TrialRecord {
        TrialRecord {
            round: 0,
            block: 1,
            p_r: Probability::new(0.3).unwrap(),
            robot_action: robot,
            human_action: action,
            success: crate::protocol::outcome(action, robot),
            chosen_at_ms: 0,
            force_trace: None,
        }
    }

    #[test]
    fn seven_of_ten() {
        let mut block: Vec<TrialRecord> = (0..7).map(|_| trial(HumanAction::Compensate, RobotAction::Perturb)).collect();
        block.extend((0..3).map(|_| trial(HumanAction::Relax, RobotAction::Assist)));
        assert_eq!(compensation_probability(&block).unwrap().get(), 0.7);
        block.reverse();
        assert_eq!(compensation_probability(&block).unwrap().get(), 0.7);
    }

    #[test]
    fn failures_count_in_the_denominator() {
        let mut block: Vec<TrialRecord> = (0..10).map(|_| trial(HumanAction::Relax, RobotAction::Assist)).collect();
        block.extend((0..2).map(|_| trial(HumanAction::Relax, RobotAction::Perturb)));
        assert_eq!(compensation_probability(&block).unwrap().get(), 0.0);
        let all: Vec<TrialRecord> = (0..10).map(|_| trial(HumanAction::Compensate, RobotAction::Assist)).collect();
        assert_eq!(compensation_probability(&all).unwrap().get(), 1.0);
        assert_eq!(compensation_probability(&[]), Err(Error::EmptyBlock));
    }

    #[test]
    fn all_compensate_dataset() {
        let log = simulate_session(&AgentSpec::always_compensate(), &ProtocolConfig::default(), 2, "P").unwrap();
        let ds = build_choice_dataset(&log).unwrap();
        assert_eq!(ds.levels.len(), 10);
        assert!(ds.levels.iter().all(|l| l.n1 == 0));
        assert_eq!(ds.levels.iter().map(|l| l.n2).sum::<u32>(), 100);
        assert_eq!(ds.pooled().levels.len(), 5);
    }

    #[test]
    fn partial_session_keeps_recorded_levels_only() {
        let log = simulate_session(&AgentSpec::always_relax(), &ProtocolConfig::default(), 2, "P").unwrap();
        let first_two: Vec<TrialRecord> =
            log.trials.iter().filter(|t| t.round == 0 && t.block < 2).cloned().collect();
        let ds = dataset_from_trials(&first_two).unwrap();
        let levels: Vec<f64> = ds.levels.iter().map(|l| l.p_r.get()).collect();
        assert_eq!(levels, vec![0.1, 0.3]);
        assert_eq!(dataset_from_trials(&[]), Err(Error::NoTrials));
    }

    #[test]
    fn cluster_rule_boundaries() {
        let rule = ClusterRule::default();
        assert_eq!(rule.classify(0.01, &[1.0; 10]), Cluster::AlwaysCompensate);
        assert_eq!(rule.classify(1.16, &[0.0, 0.2, 0.5, 0.9, 1.0]), Cluster::TradeOff);
        assert_eq!(rule.classify(0.05, &[0.0, 0.5]), Cluster::AlwaysCompensate);
        assert_eq!(rule.classify(2.0, &[0.9, 0.95, 1.0]), Cluster::AlwaysCompensate);
        assert_eq!(rule.classify(2.0, &[]), Cluster::TradeOff);
    }

    #[test]
    fn grid_and_curves() {
        let g = uniform_grid(101);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0].get(), 0.0);
        assert_eq!(g[100].get(), 1.0);
        let flat = curve_export(&CurveModel::Blr { params: BlrParams::new(0.0, 0.0) }, &g);
        assert!(flat.iter().all(|pt| pt.p2 == 0.5));
        let csv = curve_csv(&flat[..2]);
        assert_eq!(csv, "p_r,p2\n0,0.5\n0.01,0.5\n");
        let p02 = CptParams::new(1.61, 1.17, 1.16, 1.76).unwrap();
        let c = curve_export(&CurveModel::Cpt { params: p02, payoff: PayoffSpec::default() }, &uniform_grid(3));
        assert!((c[1].p2 - 0.44985568860374800292).abs() < 1e-13);
        assert_eq!(c[2].p2, sigmoid_of(1.76 * (2.0 - 1.16)));
    }

    fn sigmoid_of(z: f64) -> f64 {
        crate::model::sigmoid(z)
    }
}

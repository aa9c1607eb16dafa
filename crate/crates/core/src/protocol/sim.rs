use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::AgentSpec;
use super::config::{Order, ProtocolConfig};
use super::force::ForceTrace;
use crate::error::{Error, Result};
use crate::model::{HumanAction, Probability, RobotAction};

/// One reach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub round: u32,
    /// Position of the block within its round.
    pub block: u32,
    pub p_r: Probability,
    pub robot_action: RobotAction,
    pub human_action: HumanAction,
    pub success: bool,
    /// Milliseconds from session start to the Go signal, when the choice is
    /// committed.
    pub chosen_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_trace: Option<ForceTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSeed {
    pub round: u32,
    pub block: u32,
    pub p_r: Probability,
    pub seed: u64,
}

/// A participant's full session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub participant_id: String,
    pub order_assigned: Order,
    pub config: ProtocolConfig,
    pub trials: Vec<TrialRecord>,
    pub seeds: Vec<BlockSeed>,
}

impl SessionLog {
    pub fn seed_for(&self, round: u32, block: u32) -> Option<u64> {
        self.seeds.iter().find(|s| s.round == round && s.block == block).map(|s| s.seed)
    }

    /// Trials of one block, in the order they were run.
    pub fn block_trials(&self, round: u32, block: u32) -> Vec<&TrialRecord> {
        self.trials.iter().filter(|t| t.round == round && t.block == block).collect()
    }

    /// Distinct `(round, block)` pairs in order of first appearance.
    pub fn blocks(&self) -> Vec<(u32, u32)> {
        let mut out: Vec<(u32, u32)> = Vec::new();
        for t in &self.trials {
            if !out.contains(&(t.round, t.block)) {
                out.push((t.round, t.block));
            }
        }
        out
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of block `block` in round `round`, derived from the session seed.
pub fn block_seed(session_seed: u64, round: u32, block: u32) -> u64 {
    splitmix64(splitmix64(session_seed) ^ (u64::from(round) << 32 | u64::from(block)))
}

/// I.i.d. robot actions with `P(RA2) = p_r`.
pub fn generate_ra_sequence(p_r: Probability, seed: u64, max_len: usize) -> Vec<RobotAction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..max_len)
        .map(|_| {
            if rng.random::<f64>() < p_r.get() {
                RobotAction::Perturb
            } else {
                RobotAction::Assist
            }
        })
        .collect()
}

/// Compensating always reaches the target; relaxing fails only when pushed.
pub fn outcome(human: HumanAction, robot: RobotAction) -> bool {
    !matches!((human, robot), (HumanAction::Relax, RobotAction::Perturb))
}

fn agent_rng(agent: &AgentSpec, block_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(agent.seed) ^ block_seed);
    rng.set_stream(1);
    rng
}

/// Simulated session clock.
struct Clock {
    now_ms: u64,
    countdown_ms: u64,
    trial_tail_ms: u64,
    rest_ms: u64,
}

impl Clock {
    fn new(config: &ProtocolConfig) -> Self {
        let ms = |s: f64| (s * 1000.0).round() as u64;
        Clock {
            now_ms: 0,
            countdown_ms: ms(config.countdown_s),
            trial_tail_ms: ms(config.movement_window_s + config.reset_s),
            rest_ms: ms(config.rest_between_blocks_s),
        }
    }

    /// Advances through one trial and returns its Go time.
    fn trial(&mut self) -> u64 {
        let go = self.now_ms + self.countdown_ms;
        self.now_ms = go + self.trial_tail_ms;
        go
    }

    fn rest(&mut self) {
        self.now_ms += self.rest_ms;
    }
}

/// Trial loop for one block as a resumable state.
struct BlockRun {
    round: u32,
    block: u32,
    p_r: Probability,
    robot: Vec<RobotAction>,
    rng: ChaCha8Rng,
    next: usize,
    successes: u32,
}

impl BlockRun {
    fn new(agent: &AgentSpec, config: &ProtocolConfig, round: u32, block: u32, p_r: Probability, seed: u64) -> Self {
        BlockRun {
            round,
            block,
            p_r,
            robot: generate_ra_sequence(p_r, seed, config.max_block_len),
            rng: agent_rng(agent, seed),
            next: 0,
            successes: 0,
        }
    }

    fn done(&self, config: &ProtocolConfig) -> bool {
        self.successes >= config.successes_per_block
    }

    fn step(&mut self, agent: &AgentSpec, config: &ProtocolConfig, clock: &mut Clock) -> Result<TrialRecord> {
        let Some(&robot_action) = self.robot.get(self.next) else {
            return Err(Error::UnfinishableBlock {
                round: self.round,
                block: self.block,
                p_r: self.p_r.get(),
                needed: config.successes_per_block,
                max_len: config.max_block_len,
            });
        };
        self.next += 1;
        let human_action = agent.choose(self.p_r, &mut self.rng);
        let success = outcome(human_action, robot_action);
        self.successes += u32::from(success);
        Ok(TrialRecord {
            round: self.round,
            block: self.block,
            p_r: self.p_r,
            robot_action,
            human_action,
            success,
            chosen_at_ms: clock.trial(),
            force_trace: None,
        })
    }
}

/// Runs one block (tagged round 0, block 0) until it reaches the required
/// number of successes.
pub fn simulate_block(agent: &AgentSpec, p_r: Probability, config: &ProtocolConfig, seed: u64) -> Result<Vec<TrialRecord>> {
    agent.validate()?;
    config.validate()?;
    let mut clock = Clock::new(config);
    let mut run = BlockRun::new(agent, config, 0, 0, p_r, seed);
    let mut trials = Vec::new();
    while !run.done(config) {
        trials.push(run.step(agent, config, &mut clock)?);
    }
    Ok(trials)
}

/// Runs every block of every round in the configured order.
pub fn simulate_session(agent: &AgentSpec, config: &ProtocolConfig, seed: u64, participant_id: &str) -> Result<SessionLog> {
    agent.validate()?;
    config.validate()?;
    let mut clock = Clock::new(config);
    let mut trials = Vec::new();
    let mut seeds = Vec::new();

    for round in 0..config.rounds {
        let levels = config.block_levels();
        let mut runs: Vec<BlockRun> = levels
            .iter()
            .enumerate()
            .map(|(b, &p_r)| {
                let s = block_seed(seed, round, b as u32);
                seeds.push(BlockSeed { round, block: b as u32, p_r, seed: s });
                BlockRun::new(agent, config, round, b as u32, p_r, s)
            })
            .collect();

        match config.order {
            Order::Ascending | Order::Descending => {
                for (i, run) in runs.iter_mut().enumerate() {
                    if round > 0 || i > 0 {
                        clock.rest();
                    }
                    while !run.done(config) {
                        trials.push(run.step(agent, config, &mut clock)?);
                    }
                }
            }
            Order::RandomizedPerTrial => {
                let mut picker = ChaCha8Rng::seed_from_u64(block_seed(seed, round, u32::MAX));
                if round > 0 {
                    clock.rest();
                }
                loop {
                    let open: Vec<usize> = (0..runs.len()).filter(|&i| !runs[i].done(config)).collect();
                    if open.is_empty() {
                        break;
                    }
                    let i = open[picker.random_range(0..open.len())];
                    trials.push(runs[i].step(agent, config, &mut clock)?);
                }
            }
        }
    }

    Ok(SessionLog {
        participant_id: participant_id.to_string(),
        order_assigned: config.order,
        config: config.clone(),
        trials,
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::agent::AgentKind;

    fn p(x: f64) -> Probability {
        Probability::new(x).unwrap()
    }

    #[test]
    fn ra_sequence_extremes() {
        assert!(generate_ra_sequence(Probability::ZERO, 3, 500).iter().all(|&r| r == RobotAction::Assist));
        assert!(generate_ra_sequence(Probability::ONE, 3, 500).iter().all(|&r| r == RobotAction::Perturb));
        assert_eq!(generate_ra_sequence(p(0.3), 9, 100), generate_ra_sequence(p(0.3), 9, 100));
        assert_ne!(generate_ra_sequence(p(0.3), 9, 100), generate_ra_sequence(p(0.3), 10, 100));
    }

    #[test]
    fn outcome_rule() {
        assert!(outcome(HumanAction::Compensate, RobotAction::Perturb));
        assert!(outcome(HumanAction::Compensate, RobotAction::Assist));
        assert!(outcome(HumanAction::Relax, RobotAction::Assist));
        assert!(!outcome(HumanAction::Relax, RobotAction::Perturb));
    }

    #[test]
    fn fixed_agents_give_minimal_blocks() {
        let cfg = ProtocolConfig::default();
        let b = simulate_block(&AgentSpec::always_compensate(), p(0.9), &cfg, 1).unwrap();
        assert_eq!(b.len(), 10);
        assert!(b.iter().all(|t| t.success));
        let b = simulate_block(&AgentSpec::always_relax(), Probability::ZERO, &cfg, 1).unwrap();
        assert_eq!(b.len(), 10);
    }

    #[test]
    fn block_budget_exhaustion() {
        let cfg = ProtocolConfig { max_block_len: 50, ..ProtocolConfig::default() };
        let err = simulate_block(&AgentSpec::always_relax(), Probability::ONE, &cfg, 1).unwrap_err();
        assert!(matches!(err, Error::UnfinishableBlock { max_len: 50, .. }));
    }

    #[test]
    fn session_structure() {
        let cfg = ProtocolConfig::default();
        let log = simulate_session(&AgentSpec::always_compensate(), &cfg, 5, "P00").unwrap();
        assert_eq!(log.trials.len(), 100);
        let order: Vec<f64> = log.blocks().iter().map(|&(r, b)| log.block_trials(r, b)[0].p_r.get()).collect();
        assert_eq!(order, vec![0.1, 0.3, 0.5, 0.7, 0.9, 0.1, 0.3, 0.5, 0.7, 0.9]);
        assert_eq!(log.seeds.len(), 10);
        assert_eq!(log.seed_for(1, 2), Some(block_seed(5, 1, 2)));

        let desc = simulate_session(&AgentSpec::always_compensate(), &cfg.clone().with_order(Order::Descending), 5, "P00").unwrap();
        assert_eq!(desc.trials[0].p_r.get(), 0.9);
    }

    #[test]
    fn randomized_order_interleaves_blocks() {
        let cfg = ProtocolConfig::default().with_order(Order::RandomizedPerTrial);
        let agent = AgentSpec::new(AgentKind::StepThreshold { threshold: 0.6 }, 2).unwrap();
        let log = simulate_session(&agent, &cfg, 8, "R").unwrap();
        for (r, b) in log.blocks() {
            let block = log.block_trials(r, b);
            assert_eq!(block.iter().filter(|t| t.success).count(), 10);
            assert!(block.iter().all(|t| t.p_r == block[0].p_r));
        }
        let first_round: Vec<u32> = log.trials.iter().filter(|t| t.round == 0).map(|t| t.block).take(20).collect();
        assert!(first_round.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn clock_accounts_for_rest() {
        let cfg = ProtocolConfig::default();
        let log = simulate_session(&AgentSpec::always_compensate(), &cfg, 1, "T").unwrap();
        assert_eq!(log.trials[0].chosen_at_ms, 3000);
        assert_eq!(log.trials[1].chosen_at_ms, 3000 + 4500);
        // First trial of block two follows a 30 s rest.
        assert_eq!(log.trials[10].chosen_at_ms, 10 * 4500 + 30_000 + 3000);
    }
}

//! Interactive session driven one trial at a time.
//!
//! The robot action of a pending trial is drawn only when the choice is
//! committed, from the same per-block sequence the simulator uses, so a
//! session played with a fixed policy reproduces the simulated log apart
//! from timestamps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HumanAction, Probability, RobotAction};
use crate::protocol::{block_seed, generate_ra_sequence, outcome, BlockSeed, Order, ProtocolConfig, SessionLog, TrialRecord};

/// Hold time that registers as compensating.
pub const HOLD_THRESHOLD_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingChoice,
    ShowingOutcome,
    Rest,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::AwaitingChoice => "awaiting_choice",
            Phase::ShowingOutcome => "showing_outcome",
            Phase::Rest => "rest",
            Phase::Done => "done",
        }
    }
}

/// What the participant needs to see before the Go signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NextTrial {
    pub p_r: Probability,
    pub round: u32,
    pub block: u32,
    pub trial_index: u32,
    /// Successes still missing in this block.
    pub successes_needed: u32,
    pub countdown_seconds: f64,
    /// Pause owed before this trial; nonzero only at the start of a block.
    pub rest_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChoiceOutcome {
    pub human_action: HumanAction,
    pub robot_action: RobotAction,
    pub success: bool,
    pub block_done: bool,
    pub session_done: bool,
}

/// Maps a client report to an action. A hold of at least one second is
/// HA2, a shorter one HA1; an explicit action must agree with the hold.
pub fn resolve_action(human_action: Option<HumanAction>, hold_ms: Option<u64>) -> Result<HumanAction> {
    let from_hold = hold_ms.map(|ms| if ms >= HOLD_THRESHOLD_MS { HumanAction::Compensate } else { HumanAction::Relax });
    match (human_action, from_hold) {
        (Some(a), Some(h)) if a != h => Err(Error::InvalidParameter(format!(
            "humanAction {a} contradicts holdMs {}",
            hold_ms.unwrap_or_default()
        ))),
        (Some(a), _) => Ok(a),
        (None, Some(h)) => Ok(h),
        (None, None) => Err(Error::InvalidParameter("either humanAction or holdMs is required".into())),
    }
}

#[derive(Debug, Clone)]
struct BlockProgress {
    p_r: Probability,
    robot: Vec<RobotAction>,
    next: usize,
    successes: u32,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: String,
    pub config: ProtocolConfig,
    seed: u64,
    phase: Phase,
    round: u32,
    blocks: Vec<BlockProgress>,
    current: Option<usize>,
    picker: ChaCha8Rng,
    trials: Vec<TrialRecord>,
    seeds: Vec<BlockSeed>,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, config: ProtocolConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut state = SessionState {
            session_id: session_id.into(),
            config,
            seed,
            phase: Phase::Rest,
            round: 0,
            blocks: Vec::new(),
            current: None,
            picker: ChaCha8Rng::seed_from_u64(0),
            trials: Vec::new(),
            seeds: Vec::new(),
        };
        state.start_round(0);
        Ok(state)
    }

    fn start_round(&mut self, round: u32) {
        self.round = round;
        self.picker = ChaCha8Rng::seed_from_u64(block_seed(self.seed, round, u32::MAX));
        self.blocks = self
            .config
            .block_levels()
            .into_iter()
            .enumerate()
            .map(|(b, p_r)| {
                let s = block_seed(self.seed, round, b as u32);
                self.seeds.push(BlockSeed { round, block: b as u32, p_r, seed: s });
                BlockProgress { p_r, robot: generate_ra_sequence(p_r, s, self.config.max_block_len), next: 0, successes: 0 }
            })
            .collect();
        self.current = None;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    /// Seeds of every block started so far.
    pub fn seeds(&self) -> &[BlockSeed] {
        &self.seeds
    }

    /// Successes so far in the block of the pending or last trial.
    pub fn successes_this_block(&self) -> u32 {
        self.current.map_or(0, |i| self.blocks[i].successes)
    }

    fn block_done(&self, i: usize) -> bool {
        self.blocks[i].successes >= self.config.successes_per_block
    }

    fn info(&self, i: usize, rest_seconds: f64) -> NextTrial {
        let b = &self.blocks[i];
        NextTrial {
            p_r: b.p_r,
            round: self.round,
            block: i as u32,
            trial_index: b.next as u32,
            successes_needed: self.config.successes_per_block - b.successes,
            countdown_seconds: self.config.countdown_s,
            rest_seconds,
        }
    }

    /// Presents the next trial. Repeated calls while a choice is pending
    /// return the same trial.
    pub fn next(&mut self) -> Result<NextTrial> {
        match self.phase {
            Phase::Done => Err(Error::WrongPhase { operation: "advance", phase: self.phase.name() }),
            Phase::AwaitingChoice => Ok(self.info(self.current.expect("pending trial"), 0.0)),
            Phase::ShowingOutcome | Phase::Rest => {
                let rest = if self.phase == Phase::Rest && !self.trials.is_empty() {
                    self.config.rest_between_blocks_s
                } else {
                    0.0
                };
                if (0..self.blocks.len()).all(|i| self.block_done(i)) {
                    self.start_round(self.round + 1);
                }
                let open: Vec<usize> = (0..self.blocks.len()).filter(|&i| !self.block_done(i)).collect();
                let i = match self.config.order {
                    Order::Ascending | Order::Descending => open[0],
                    Order::RandomizedPerTrial => open[self.picker.random_range(0..open.len())],
                };
                self.current = Some(i);
                self.phase = Phase::AwaitingChoice;
                Ok(self.info(i, rest))
            }
        }
    }

    /// Commits the pending choice, then reveals the robot action.
    pub fn choice(&mut self, human_action: HumanAction, chosen_at_ms: u64) -> Result<ChoiceOutcome> {
        if self.phase != Phase::AwaitingChoice {
            return Err(Error::WrongPhase { operation: "choose", phase: self.phase.name() });
        }
        let i = self.current.expect("pending trial");
        let needed = self.config.successes_per_block;
        let max_len = self.config.max_block_len;
        let round = self.round;
        let b = &mut self.blocks[i];
        let Some(&robot_action) = b.robot.get(b.next) else {
            return Err(Error::UnfinishableBlock { round, block: i as u32, p_r: b.p_r.get(), needed, max_len });
        };
        b.next += 1;
        let success = outcome(human_action, robot_action);
        b.successes += u32::from(success);
        self.trials.push(TrialRecord {
            round,
            block: i as u32,
            p_r: b.p_r,
            robot_action,
            human_action,
            success,
            chosen_at_ms,
            force_trace: None,
        });

        let block_done = self.block_done(i);
        let round_done = (0..self.blocks.len()).all(|j| self.block_done(j));
        let session_done = round_done && round + 1 >= self.config.rounds;
        let sequential = self.config.order != Order::RandomizedPerTrial;
        self.phase = if session_done {
            Phase::Done
        } else if round_done || (block_done && sequential) {
            Phase::Rest
        } else {
            Phase::ShowingOutcome
        };
        Ok(ChoiceOutcome { human_action, robot_action, success, block_done, session_done })
    }

    /// Everything recorded so far.
    pub fn log(&self, participant_id: &str) -> SessionLog {
        SessionLog {
            participant_id: participant_id.to_string(),
            order_assigned: self.config.order,
            config: self.config.clone(),
            trials: self.trials.clone(),
            seeds: self.seeds.clone(),
        }
    }
}

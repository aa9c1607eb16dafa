use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Probability;

/// Order in which a round visits the perturbation levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    #[default]
    Ascending,
    Descending,
    /// Every trial draws its level at random among the levels whose block is
    /// still unfinished in the current round.
    RandomizedPerTrial,
}

impl std::str::FromStr for Order {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascending" | "asc" => Ok(Order::Ascending),
            "descending" | "desc" => Ok(Order::Descending),
            "randomized_per_trial" | "random" => Ok(Order::RandomizedPerTrial),
            other => Err(Error::InvalidParameter(format!("unknown order {other:?}"))),
        }
    }
}

/// Experiment constants. Durations are in seconds, distances in centimetres
/// and forces in newtons. Timing fields are metadata for simulated sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub levels: Vec<Probability>,
    pub successes_per_block: u32,
    pub rounds: u32,
    pub order: Order,
    pub movement_window_s: f64,
    pub target_radius_cm: f64,
    pub target_distance_cm: f64,
    pub force_threshold_n: f64,
    pub pre_go_window_s: f64,
    pub calibration_factor: f64,
    pub rest_between_blocks_s: f64,
    pub countdown_s: f64,
    pub reset_s: f64,
    pub force_sample_rate_hz: f64,
    /// Length of each pre-generated robot-action sequence.
    pub max_block_len: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            levels: [0.1, 0.3, 0.5, 0.7, 0.9].map(|p| Probability::new(p).expect("constant level")).to_vec(),
            successes_per_block: 10,
            rounds: 2,
            order: Order::Ascending,
            movement_window_s: 0.5,
            target_radius_cm: 8.0,
            target_distance_cm: 25.0,
            force_threshold_n: 10.0,
            pre_go_window_s: 1.0,
            calibration_factor: 0.8,
            rest_between_blocks_s: 30.0,
            countdown_s: 3.0,
            reset_s: 1.0,
            force_sample_rate_hz: 100.0,
            max_block_len: 1000,
        }
    }
}

impl ProtocolConfig {
    pub fn with_order(mut self, order: Order) -> Self {
        self.order = order;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.levels.is_empty() {
            return bad("at least one perturbation level is required".into());
        }
        if let Some(p) = self.levels.iter().find(|p| p.get() <= 0.0 || p.get() >= 1.0) {
            return bad(format!("level {p} is not strictly inside (0, 1)"));
        }
        for (i, a) in self.levels.iter().enumerate() {
            if self.levels[..i].contains(a) {
                return bad(format!("level {a} is listed twice"));
            }
        }
        if self.successes_per_block == 0 {
            return bad("successes_per_block must be at least 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if !(self.calibration_factor > 0.0 && self.calibration_factor <= 1.0) {
            return bad(format!("calibration_factor {} is outside (0, 1]", self.calibration_factor));
        }
        if !(self.pre_go_window_s > 0.0 && self.force_sample_rate_hz > 0.0) {
            return bad("pre-Go window and force sample rate must be positive".into());
        }
        if self.max_block_len < self.successes_per_block as usize {
            return bad("max_block_len cannot be shorter than one block".into());
        }
        Ok(())
    }

    /// Levels sorted ascending; block indices under randomized ordering
    /// refer to positions in this list.
    pub fn sorted_levels(&self) -> Vec<Probability> {
        let mut v = self.levels.clone();
        v.sort_by(|a, b| a.get().total_cmp(&b.get()));
        v
    }

    /// Levels in the order blocks are run within a round.
    pub fn block_levels(&self) -> Vec<Probability> {
        let mut v = self.sorted_levels();
        if self.order == Order::Descending {
            v.reverse();
        }
        v
    }

    pub fn total_blocks(&self) -> usize {
        self.rounds as usize * self.levels.len()
    }
}

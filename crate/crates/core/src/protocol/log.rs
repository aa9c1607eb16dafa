//! Line-delimited JSON persistence for session logs.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::config::{Order, ProtocolConfig};
use super::sim::{BlockSeed, SessionLog, TrialRecord};
use crate::error::{Error, Result};
use crate::model::{HumanAction, Probability, RobotAction};

/// One JSONL record. Field order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLine {
    pub participant_id: String,
    pub round: u32,
    pub block: u32,
    pub p_r: Probability,
    pub robot_action: RobotAction,
    pub human_action: HumanAction,
    pub success: bool,
    pub chosen_at_ms: u64,
    pub seed: u64,
}

impl LogLine {
    pub fn new(participant_id: &str, trial: &TrialRecord, seed: u64) -> Self {
        LogLine {
            participant_id: participant_id.to_string(),
            round: trial.round,
            block: trial.block,
            p_r: trial.p_r,
            robot_action: trial.robot_action,
            human_action: trial.human_action,
            success: trial.success,
            chosen_at_ms: trial.chosen_at_ms,
            seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log lines always serialize")
    }

    fn trial(&self) -> TrialRecord {
        TrialRecord {
            round: self.round,
            block: self.block,
            p_r: self.p_r,
            robot_action: self.robot_action,
            human_action: self.human_action,
            success: self.success,
            chosen_at_ms: self.chosen_at_ms,
            force_trace: None,
        }
    }
}

impl SessionLog {
    pub fn lines(&self) -> Vec<LogLine> {
        self.trials
            .iter()
            .map(|t| LogLine::new(&self.participant_id, t, self.seed_for(t.round, t.block).unwrap_or(0)))
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for line in self.lines() {
            writeln!(out, "{}", line.to_json())?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

fn infer_order(trials: &[TrialRecord]) -> Order {
    let first_round: Vec<&TrialRecord> = trials.iter().filter(|t| t.round == trials[0].round).collect();
    let contiguous = first_round.windows(2).all(|w| w[0].block <= w[1].block);
    if !contiguous {
        return Order::RandomizedPerTrial;
    }
    let mut levels: Vec<f64> = Vec::new();
    for t in &first_round {
        if levels.last() != Some(&t.p_r.get()) {
            levels.push(t.p_r.get());
        }
    }
    if levels.windows(2).all(|w| w[0] > w[1]) && levels.len() > 1 {
        Order::Descending
    } else {
        Order::Ascending
    }
}

/// Parses a JSONL log that may interleave several participants; sessions
/// come back in order of first appearance. Blank lines are skipped.
pub fn parse_jsonl(text: &str) -> Result<Vec<SessionLog>> {
    let mut groups: Vec<(String, Vec<LogLine>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: LogLine =
            serde_json::from_str(raw).map_err(|e| Error::MalformedLog { line: i + 1, message: e.to_string() })?;
        if line.success == (line.human_action == HumanAction::Relax && line.robot_action == RobotAction::Perturb) {
            return Err(Error::MalformedLog {
                line: i + 1,
                message: format!("success = {} contradicts {} / {}", line.success, line.human_action, line.robot_action),
            });
        }
        match groups.iter_mut().find(|(id, _)| *id == line.participant_id) {
            Some((_, v)) => v.push(line),
            None => groups.push((line.participant_id.clone(), vec![line])),
        }
    }
    if groups.is_empty() {
        return Err(Error::NoTrials);
    }

    Ok(groups
        .into_iter()
        .map(|(participant_id, lines)| {
            let trials: Vec<TrialRecord> = lines.iter().map(LogLine::trial).collect();
            let mut seeds: Vec<BlockSeed> = Vec::new();
            for l in &lines {
                if !seeds.iter().any(|s| s.round == l.round && s.block == l.block) {
                    seeds.push(BlockSeed { round: l.round, block: l.block, p_r: l.p_r, seed: l.seed });
                }
            }
            let mut levels: Vec<Probability> = Vec::new();
            for t in &trials {
                if !levels.contains(&t.p_r) {
                    levels.push(t.p_r);
                }
            }
            levels.sort_by(|a, b| a.get().total_cmp(&b.get()));
            let order = infer_order(&trials);
            let config = ProtocolConfig {
                levels,
                rounds: trials.iter().map(|t| t.round + 1).max().unwrap_or(1),
                order,
                ..ProtocolConfig::default()
            };
            SessionLog { participant_id, order_assigned: order, config, trials, seeds }
        })
        .collect())
}

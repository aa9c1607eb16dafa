use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Probability;

/// Choice counts observed at one perturbation probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub p_r: Probability,
    /// HA1 (relax) choices.
    pub n1: u32,
    /// HA2 (compensate) choices.
    pub n2: u32,
    /// Round the counts come from; `None` once rounds are pooled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
}

impl LevelCounts {
    pub fn new(p_r: f64, n1: u32, n2: u32) -> Result<Self> {
        Ok(LevelCounts { p_r: Probability::new(p_r)?, n1, n2, round: None })
    }

    pub fn in_round(mut self, round: u32) -> Self {
        self.round = Some(round);
        self
    }

    pub fn total(&self) -> u32 {
        self.n1 + self.n2
    }

    /// Empirical compensation probability, `None` for an empty level.
    pub fn p2(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| f64::from(self.n2) / f64::from(n))
    }
}

/// Per-level HA1/HA2 counts for one participant.
///
/// Levels may carry a round tag, in which case the same `p_r` can appear once
/// per round. Likelihoods are additive over entries, so fitting tagged data
/// is identical to fitting its pooled form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceDataset {
    pub levels: Vec<LevelCounts>,
}

impl ChoiceDataset {
    pub fn new(levels: Vec<LevelCounts>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, a) in levels.iter().enumerate() {
            if levels[..i].iter().any(|b| b.round == a.round && b.p_r == a.p_r) {
                return Err(Error::InvalidParameter(format!(
                    "p_r = {} appears twice in round {:?}",
                    a.p_r, a.round
                )));
            }
        }
        Ok(ChoiceDataset { levels })
    }

    /// Convenience constructor from `(p_r, n1, n2)` triples.
    pub fn from_counts(counts: &[(f64, u32, u32)]) -> Result<Self> {
        let levels = counts
            .iter()
            .map(|&(p, n1, n2)| LevelCounts::new(p, n1, n2))
            .collect::<Result<Vec<_>>>()?;
        ChoiceDataset::new(levels)
    }

    pub fn total_trials(&self) -> u64 {
        self.levels.iter().map(|l| u64::from(l.total())).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_trials() == 0
    }

    /// Merges round-tagged entries sharing a `p_r`, sorted by `p_r`.
    pub fn pooled(&self) -> ChoiceDataset {
        let mut out: Vec<LevelCounts> = Vec::new();
        for l in &self.levels {
            match out.iter_mut().find(|o| o.p_r == l.p_r) {
                Some(o) => {
                    o.n1 += l.n1;
                    o.n2 += l.n2;
                }
                None => out.push(LevelCounts { round: None, ..*l }),
            }
        }
        out.sort_by(|a, b| a.p_r.get().total_cmp(&b.p_r.get()));
        ChoiceDataset { levels: out }
    }

    /// Number of distinct `p_r` values holding at least one observation.
    pub fn distinct_levels(&self) -> usize {
        self.pooled().levels.iter().filter(|l| l.total() > 0).count()
    }

    /// `(p_r, empirical P2)` for every non-empty entry.
    pub fn empirical_points(&self) -> Vec<(f64, f64)> {
        self.levels
            .iter()
            .filter_map(|l| l.p2().map(|p2| (l.p_r.get(), p2)))
            .collect()
    }
}

/// Which empirical points enter [`rmse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmsePoints {
    /// One point per recorded (round, level) block.
    #[default]
    PerRound,
    /// One point per level after pooling rounds.
    Pooled,
}

/// Root mean squared gap between empirical P2 points and a model curve.
pub fn rmse(dataset: &ChoiceDataset, curve: impl Fn(Probability) -> f64, points: RmsePoints) -> f64 {
    let pts = match points {
        RmsePoints::PerRound => dataset.empirical_points(),
        RmsePoints::Pooled => dataset.pooled().empirical_points(),
    };
    if pts.is_empty() {
        return 0.0;
    }
    let sse: f64 = pts
        .iter()
        .map(|&(p, emp)| {
            let d = curve(Probability::new(p).expect("dataset levels are probabilities")) - emp;
            d * d
        })
        .sum();
    (sse / pts.len() as f64).sqrt()
}

//! Accuracy groups (non/low/mid/high) and the non-convergence test.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::data::DatasetName;
use crate::models::Family;
use crate::trainer::TrialRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyGroup {
    Non,
    Low,
    Mid,
    High,
}

impl AccuracyGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            AccuracyGroup::Non => "non",
            AccuracyGroup::Low => "low",
            AccuracyGroup::Mid => "mid",
            AccuracyGroup::High => "high",
        }
    }
}

impl fmt::Display for AccuracyGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AccuracyGroup {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, AnalysisError> {
        match s {
            "non" => Ok(AccuracyGroup::Non),
            "low" => Ok(AccuracyGroup::Low),
            "mid" => Ok(AccuracyGroup::Mid),
            "high" => Ok(AccuracyGroup::High),
            _ => Err(AnalysisError::InvalidArgument(format!("unknown accuracy group `{s}`"))),
        }
    }
}

/// Band edges in accuracy %. A value equal to an edge belongs to the upper band.
///
/// `[0, non_max)` is where `non` may be assigned, `[non_max, low_max)` is low,
/// `[low_max, high_min)` mid and `[high_min, 100]` high. Below `non_max`
/// without a flat loss counts as low.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupThresholds {
    pub non_max: f64,
    pub low_max: f64,
    pub high_min: f64,
}

impl GroupThresholds {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let ok = 0.0 < self.non_max && self.non_max < self.low_max && self.low_max < self.high_min && self.high_min <= 100.0;
        if ok {
            Ok(())
        } else {
            Err(AnalysisError::InvalidThresholds(format!(
                "need 0 < {} < {} < {} <= 100",
                self.non_max, self.low_max, self.high_min
            )))
        }
    }

    /// Band of an accuracy, ignoring the loss-curve test.
    pub fn band(&self, acc: f64) -> AccuracyGroup {
        if acc >= self.high_min {
            AccuracyGroup::High
        } else if acc >= self.low_max {
            AccuracyGroup::Mid
        } else {
            AccuracyGroup::Low
        }
    }
}

/// Defaults per (dataset, family): low/mid split one point above the widest
/// observed low accuracy, high at the observed high minimum.
pub fn default_thresholds(dataset: DatasetName, family: Family) -> GroupThresholds {
    let (low_max, high_min) = match (dataset, family) {
        (DatasetName::Mnist, Family::Dnn) => (56.0, 95.0),
        (DatasetName::Fmnist, Family::Dnn) => (76.0, 95.0),
        (DatasetName::Cifar10, Family::Dnn) => (33.0, 75.0),
        (DatasetName::Mnist, Family::Cnn) => (96.0, 99.5),
        (DatasetName::Fmnist, Family::Cnn) => (91.0, 99.5),
        (DatasetName::Cifar10, Family::Cnn) => (56.0, 80.0),
        (DatasetName::Mnist, Family::Vit) => (31.0, 85.0),
        (DatasetName::Fmnist, Family::Vit) => (41.0, 74.0),
        (DatasetName::Cifar10, Family::Vit) => (21.0, 40.0),
    };
    GroupThresholds { non_max: 15.0, low_max, high_min }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonConvergence {
    /// Largest allowed max − min of the per-epoch loss.
    pub loss_eps: f64,
    /// Inclusive accuracy band (%) around chance.
    pub chance_band: [f64; 2],
}

impl Default for NonConvergence {
    fn default() -> Self {
        NonConvergence { loss_eps: 0.05, chance_band: [8.0, 15.0] }
    }
}

/// Flat loss curve and chance-level final accuracy.
pub fn detect_nonconvergence(record: &TrialRecord, rule: &NonConvergence) -> bool {
    let loss = &record.train_loss;
    if loss.is_empty() || loss.iter().any(|l| !l.is_finite()) {
        return false;
    }
    let max = loss.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = loss.iter().copied().fold(f64::INFINITY, f64::min);
    let [lo, hi] = rule.chance_band;
    max - min < rule.loss_eps && (lo..=hi).contains(&record.final_accuracy)
}

pub fn classify_trial(record: &TrialRecord, thresholds: &GroupThresholds, rule: &NonConvergence) -> AccuracyGroup {
    if detect_nonconvergence(record, rule) {
        AccuracyGroup::Non
    } else {
        thresholds.band(record.final_accuracy)
    }
}

/// Labels every record in place.
pub fn classify_trials(records: &mut [TrialRecord], thresholds: &GroupThresholds, rule: &NonConvergence) -> Result<(), AnalysisError> {
    thresholds.validate()?;
    for r in records {
        r.group = Some(classify_trial(r, thresholds, rule).to_string());
    }
    Ok(())
}

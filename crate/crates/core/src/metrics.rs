//! Aggregation of finished sessions into alignment measurements.
//!
//! All statistics are computed from integer sums (attempt counts and 1–10
//! ratings are integers), so means and sample standard deviations are
//! correctly rounded values independent of summation order. Empty subsets
//! yield `None`, never a made-up zero.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, TextileId};
use crate::game::{GameSession, Judgment, SessionState, MAX_RATING, MIN_RATING};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no task records")]
    Empty,
    #[error("unknown textile id {0}")]
    UnknownId(TextileId),
    #[error("invalid task record {session_id}: {reason}")]
    InvalidRecord { session_id: String, reason: String },
    #[error("report i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Won,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub predicted_id: TextileId,
    pub correct: bool,
    pub validity: Option<u8>,
    pub similarity: Option<u8>,
}

/// One finished task as seen by the metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub session_id: String,
    pub target_id: TextileId,
    pub initial_reference_id: TextileId,
    pub outcome: Outcome,
    pub attempts: Vec<AttemptRecord>,
}

impl TaskRecord {
    /// Record of a session that reached `Won` or `Lost`.
    pub fn from_session(session: &GameSession) -> Option<Self> {
        let outcome = match session.state {
            SessionState::Won => Outcome::Won,
            SessionState::Lost => Outcome::Lost,
            _ => return None,
        };
        Some(Self {
            session_id: session.session_id.clone(),
            target_id: session.assignment.target_id,
            initial_reference_id: session.assignment.reference_id,
            outcome,
            attempts: session
                .attempts
                .iter()
                .map(|a| AttemptRecord {
                    predicted_id: a.predicted_id,
                    correct: a.judgment == Judgment::Correct,
                    validity: a.validity,
                    similarity: a.similarity,
                })
                .collect(),
        })
    }

    pub fn won(&self) -> bool {
        self.outcome == Outcome::Won
    }

    /// Checks internal consistency; `max_attempts` bounds the length when given.
    pub fn validate(&self, max_attempts: Option<usize>) -> Result<(), MetricsError> {
        let fail = |reason: String| MetricsError::InvalidRecord { session_id: self.session_id.clone(), reason };
        let n = self.attempts.len();
        if n == 0 {
            return Err(fail("no attempts".into()));
        }
        if let Some(cap) = max_attempts {
            if n > cap {
                return Err(fail(format!("{n} attempts exceed cap {cap}")));
            }
        }
        for (i, a) in self.attempts.iter().enumerate() {
            let last = i + 1 == n;
            if a.correct {
                if !last {
                    return Err(fail(format!("attempt {} correct but not final", i + 1)));
                }
                if a.validity.is_some() || a.similarity.is_some() {
                    return Err(fail(format!("attempt {} correct but rated", i + 1)));
                }
            } else {
                for r in [a.validity, a.similarity] {
                    match r {
                        Some(r) if (MIN_RATING..=MAX_RATING).contains(&r) => {}
                        other => return Err(fail(format!("attempt {} has rating {other:?}", i + 1))),
                    }
                }
            }
        }
        let final_correct = self.attempts[n - 1].correct;
        match (self.outcome, final_correct) {
            (Outcome::Won, true) | (Outcome::Lost, false) => Ok(()),
            _ => Err(fail(format!("outcome {:?} inconsistent with final judgment", self.outcome))),
        }
    }

    fn failed_attempts(&self) -> impl Iterator<Item = &AttemptRecord> {
        self.attempts.iter().filter(|a| !a.correct)
    }
}

/// Integer win/total pair; `value()` is the ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub wins: u64,
    pub total: u64,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.wins as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRates {
    pub overall: Rate,
    pub per_textile: BTreeMap<TextileId, Rate>,
}

pub fn success_rate(records: &[TaskRecord]) -> Result<SuccessRates, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut per_textile: BTreeMap<TextileId, Rate> = BTreeMap::new();
    for r in records {
        let rate = per_textile.entry(r.target_id).or_insert(Rate { wins: 0, total: 0 });
        rate.total += 1;
        rate.wins += u64::from(r.won());
    }
    let wins = records.iter().filter(|r| r.won()).count() as u64;
    Ok(SuccessRates { overall: Rate { wins, total: records.len() as u64 }, per_textile })
}

/// Mean and sample standard deviation of integer observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: u64,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = u64>) -> Self {
        let (mut n, mut sum, mut sum_sq) = (0u64, 0u128, 0u128);
        for v in values {
            n += 1;
            sum += u128::from(v);
            sum_sq += u128::from(v) * u128::from(v);
        }
        let mean = (n > 0).then(|| sum as f64 / n as f64);
        // Σ(x − x̄)² · n = nΣx² − (Σx)², exact in integers.
        let std = (n > 1).then(|| {
            let n128 = u128::from(n);
            let numerator = n128 * sum_sq - sum * sum;
            (numerator as f64 / (n128 * (n128 - 1)) as f64).sqrt()
        });
        Self { count: n, mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptStats {
    pub all: Summary,
    pub successful: Summary,
}

impl AttemptStats {
    pub fn avg_all(&self) -> f64 {
        self.all.mean.expect("non-empty by construction")
    }

    pub fn avg_successful(&self) -> Option<f64> {
        self.successful.mean
    }
}

pub fn attempt_stats(records: &[TaskRecord]) -> Result<AttemptStats, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(AttemptStats {
        all: Summary::of(records.iter().map(|r| r.attempts.len() as u64)),
        successful: Summary::of(records.iter().filter(|r| r.won()).map(|r| r.attempts.len() as u64)),
    })
}

/// Statistics of one rating scale over failed attempts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingStats {
    pub count: u64,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// `histogram[i]` counts ratings equal to `i + 1`.
    pub histogram: [u64; 10],
}

impl RatingStats {
    fn of(ratings: impl IntoIterator<Item = u8> + Clone) -> Self {
        let mut histogram = [0u64; 10];
        for r in ratings.clone() {
            histogram[usize::from(r - MIN_RATING)] += 1;
        }
        let Summary { count, mean, std } = Summary::of(ratings.into_iter().map(u64::from));
        Self { count, mean, std, histogram }
    }
}

/// Validity and similarity statistics over failed attempts only; a correct
/// guess's implicit 10/10 is excluded.
pub fn score_stats(records: &[TaskRecord]) -> (RatingStats, RatingStats) {
    let failed: Vec<&AttemptRecord> = records.iter().flat_map(TaskRecord::failed_attempts).collect();
    let validity = RatingStats::of(failed.iter().filter_map(|a| a.validity));
    let similarity = RatingStats::of(failed.iter().filter_map(|a| a.similarity));
    (validity, similarity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionMode {
    /// Every attempt contributes a (target, prediction) count.
    #[default]
    PerAttempt,
    /// Only each task's final prediction counts.
    FinalOnly,
}

/// Counts indexed by (actual target, predicted), rows and columns in catalog order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub ids: Vec<TextileId>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    fn index(&self, id: TextileId) -> Option<usize> {
        self.ids.iter().position(|x| *x == id)
    }

    pub fn get(&self, actual: TextileId, predicted: TextileId) -> u64 {
        match (self.index(actual), self.index(predicted)) {
            (Some(a), Some(p)) => self.counts[a][p],
            _ => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.ids.len()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion_matrix(
    records: &[TaskRecord],
    catalog: &Catalog,
    mode: ConfusionMode,
) -> Result<ConfusionMatrix, MetricsError> {
    let ids: Vec<TextileId> = catalog.ids().collect();
    let mut m = ConfusionMatrix { counts: vec![vec![0; ids.len()]; ids.len()], ids };
    for r in records {
        let row = m.index(r.target_id).ok_or(MetricsError::UnknownId(r.target_id))?;
        let counted: &[AttemptRecord] = match mode {
            ConfusionMode::PerAttempt => &r.attempts,
            ConfusionMode::FinalOnly => r.attempts.last().map(std::slice::from_ref).unwrap_or_default(),
        };
        for a in counted {
            let col = m.index(a.predicted_id).ok_or(MetricsError::UnknownId(a.predicted_id))?;
            m.counts[row][col] += 1;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTextileRow {
    pub id: TextileId,
    pub name: String,
    pub appearances: u64,
    pub wins: u64,
    pub success_rate: Option<f64>,
    pub mean_validity: Option<f64>,
    pub mean_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// True when ratings come from a scripted participant, not a human.
    pub synthetic: bool,
    pub std_convention: String,
    pub confusion_mode: ConfusionMode,
    pub total_tasks: u64,
    pub total_attempts: u64,
    pub wins: u64,
    pub overall_success_rate: f64,
    pub per_textile: Vec<PerTextileRow>,
    pub attempts: AttemptStats,
    pub validity: RatingStats,
    pub similarity: RatingStats,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn build(
        records: &[TaskRecord],
        catalog: &Catalog,
        mode: ConfusionMode,
        synthetic: bool,
    ) -> Result<Self, MetricsError> {
        for r in records {
            r.validate(None)?;
        }
        let rates = success_rate(records)?;
        let attempts = attempt_stats(records)?;
        let (validity, similarity) = score_stats(records);
        let confusion = confusion_matrix(records, catalog, mode)?;

        let per_textile = catalog
            .samples()
            .iter()
            .map(|s| {
                let rate = rates.per_textile.get(&s.id).copied().unwrap_or(Rate { wins: 0, total: 0 });
                let targeted: Vec<TaskRecord> = records.iter().filter(|r| r.target_id == s.id).cloned().collect();
                let (v, sim) = score_stats(&targeted);
                PerTextileRow {
                    id: s.id,
                    name: s.name.clone(),
                    appearances: rate.total,
                    wins: rate.wins,
                    success_rate: rate.value(),
                    mean_validity: v.mean,
                    mean_similarity: sim.mean,
                }
            })
            .collect();

        Ok(Self {
            synthetic,
            std_convention: "sample (n-1)".into(),
            confusion_mode: mode,
            total_tasks: rates.overall.total,
            total_attempts: records.iter().map(|r| r.attempts.len() as u64).sum(),
            wins: rates.overall.wins,
            overall_success_rate: rates.overall.value().expect("non-empty"),
            per_textile,
            attempts,
            validity,
            similarity,
            confusion,
        })
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `per_textile.csv`, `histograms.json`, `confusion.csv` and
/// `report.json` into `dir`, creating it if needed.
pub fn export_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    fs::create_dir_all(dir)?;

    let per_textile = dir.join("per_textile.csv");
    let mut w = csv::Writer::from_path(&per_textile)?;
    w.write_record(["id", "name", "success_rate", "mean_validity", "mean_similarity"])?;
    for row in &report.per_textile {
        w.write_record([
            row.id.to_string(),
            row.name.clone(),
            cell(row.success_rate),
            cell(row.mean_validity),
            cell(row.mean_similarity),
        ])?;
    }
    w.flush()?;

    let histograms = dir.join("histograms.json");
    let doc = serde_json::json!({
        "synthetic": report.synthetic,
        "bins": (MIN_RATING..=MAX_RATING).collect::<Vec<_>>(),
        "failed_attempts": report.validity.count,
        "validity": report.validity.histogram,
        "similarity": report.similarity.histogram,
    });
    fs::write(&histograms, serde_json::to_string_pretty(&doc)? + "\n")?;

    let confusion = dir.join("confusion.csv");
    let mut w = csv::Writer::from_path(&confusion)?;
    let mut header = vec!["actual\\predicted".to_owned()];
    header.extend(report.confusion.ids.iter().map(ToString::to_string));
    w.write_record(&header)?;
    for (id, row) in report.confusion.ids.iter().zip(&report.confusion.counts) {
        let mut line = vec![id.to_string()];
        line.extend(row.iter().map(ToString::to_string));
        w.write_record(&line)?;
    }
    w.flush()?;

    let full = dir.join("report.json");
    fs::write(&full, serde_json::to_string_pretty(report)? + "\n")?;

    Ok(vec![per_textile, histograms, confusion, full])
}

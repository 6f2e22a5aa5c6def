use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::{EvalRecord, ItemDatabase};
use crate::pipeline::{PipelineTrace, Variant};

pub const DEFAULT_MS: [usize; 3] = [5, 10, 20];

/// 1-based rank of the record's ground truth in the final list.
pub fn ground_truth_rank(record: &EvalRecord, trace: &PipelineTrace, db: &ItemDatabase) -> Option<usize> {
    let gt = db.catalog_id(record.ground_truth_item)?;
    trace.final_recs.iter().position(|c| *c == gt).map(|p| p + 1)
}

fn check_aligned(records: &[EvalRecord], traces: &[PipelineTrace]) -> Result<(), EvalError> {
    if records.len() != traces.len() {
        return Err(EvalError::Misaligned {
            records: records.len(),
            traces: traces.len(),
        });
    }
    Ok(())
}

/// Fraction of records whose ground truth is among the first `m` recommendations.
pub fn recall_at(records: &[EvalRecord], traces: &[PipelineTrace], db: &ItemDatabase, m: usize) -> Result<f64, EvalError> {
    check_aligned(records, traces)?;
    if records.is_empty() {
        return Ok(0.0);
    }
    let hits = records
        .iter()
        .zip(traces)
        .filter(|(r, t)| ground_truth_rank(r, t, db).is_some_and(|rank| rank <= m))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Recall averaged within each dialogue first, then across dialogues.
pub fn recall_at_macro(
    records: &[EvalRecord],
    traces: &[PipelineTrace],
    db: &ItemDatabase,
    m: usize,
) -> Result<f64, EvalError> {
    check_aligned(records, traces)?;
    let mut per_dialogue: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (r, t) in records.iter().zip(traces) {
        let e = per_dialogue.entry(&r.dialogue_id).or_default();
        e.1 += 1;
        if ground_truth_rank(r, t, db).is_some_and(|rank| rank <= m) {
            e.0 += 1;
        }
    }
    if per_dialogue.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = per_dialogue.values().map(|(h, n)| *h as f64 / *n as f64).sum();
    Ok(sum / per_dialogue.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordDetail {
    pub dialogue_id: String,
    pub target_turn: usize,
    pub ground_truth_item: u32,
    pub rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: Variant,
    #[serde(rename = "K")]
    pub k: usize,
    /// Subset label such as `before`, `after`, `cold_start` or `noise`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub recall_at: BTreeMap<usize, f64>,
    pub n_records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_record: Option<Vec<RecordDetail>>,
}

impl MetricReport {
    pub fn compute(
        variant: Variant,
        k: usize,
        records: &[EvalRecord],
        traces: &[PipelineTrace],
        db: &ItemDatabase,
        ms: &[usize],
        detail: bool,
    ) -> Result<Self, EvalError> {
        let mut recall = BTreeMap::new();
        for &m in ms {
            recall.insert(m, recall_at(records, traces, db, m)?);
        }
        let per_record = detail.then(|| {
            records
                .iter()
                .zip(traces)
                .map(|(r, t)| RecordDetail {
                    dialogue_id: r.dialogue_id.clone(),
                    target_turn: r.target_turn,
                    ground_truth_item: r.ground_truth_item.0,
                    rank: ground_truth_rank(r, t, db),
                })
                .collect()
        });
        let report = Self {
            variant,
            k,
            group: None,
            recall_at: recall,
            n_records: records.len(),
            per_record,
        };
        report.check()?;
        Ok(report)
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    /// Values lie in `[0, 1]` and do not decrease with `M`.
    pub fn check(&self) -> Result<(), EvalError> {
        let mut prev = 0.0;
        for (m, v) in &self.recall_at {
            if !(0.0..=1.0).contains(v) || *v < prev {
                return Err(EvalError::InvalidReport {
                    variant: self.variant,
                    k: self.k,
                    reason: format!("recall@{m} = {v} after {prev}"),
                });
            }
            prev = *v;
        }
        Ok(())
    }
}

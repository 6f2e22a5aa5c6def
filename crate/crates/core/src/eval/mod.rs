//! Offline evaluation: recall@M over single-ground-truth records, K sweeps
//! across ablation variants, recency splits, rank confusion matrices and the
//! item-replacement noise experiment.

mod analysis;
mod metrics;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::corpus::{EvalRecord, ItemDatabase};
use crate::entity_link::LinkError;
use crate::pipeline::{run, PipelineConfig, PipelineError, PipelineInputs, PipelineTrace, Variant};

pub use analysis::{
    noise_replace, rank_confusion, rank_confusion_with_rows, recency_split, ConfusionMatrix, RecencySplit,
    CONFUSION_ROWS, CONFUSION_ROWS_SHOWN,
};
pub use metrics::{ground_truth_rank, recall_at, recall_at_macro, MetricReport, RecordDetail, DEFAULT_MS};

pub const DEFAULT_KS: [usize; 8] = [0, 5, 10, 15, 20, 25, 30, 35];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{records} records but {traces} traces")]
    Misaligned { records: usize, traces: usize },
    #[error("invalid report for {variant} K={k}: {reason}")]
    InvalidReport { variant: Variant, k: usize, reason: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("smoke check failed: {0}")]
    SmokeFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Traces for one configuration plus counts of records that produced no
/// recommendations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordRuns {
    pub traces: Vec<PipelineTrace>,
    /// Records whose generation reply stayed malformed after the retry.
    pub malformed: usize,
    /// Records whose generated titles could not be linked to the catalog.
    pub empty: usize,
}

/// Runs the pipeline on every record in parallel, preserving record order.
/// A record that yields no recommendation scores as a miss; backend errors
/// abort the run.
pub fn run_records(records: &[EvalRecord], cfg: &PipelineConfig, inputs: &PipelineInputs<'_>) -> Result<RecordRuns, EvalError> {
    let results: Vec<Result<(PipelineTrace, u8), PipelineError>> = records
        .par_iter()
        .map(|r| match run(&r.prefix, cfg, inputs) {
            Ok(t) => Ok((t, 0)),
            Err(PipelineError::EmptyRecommendation) => Ok((failed_trace("no linkable recommendation"), 1)),
            Err(PipelineError::Link(e @ LinkError::MalformedCompletion { .. })) => Ok((failed_trace(&e.to_string()), 2)),
            Err(e) => Err(e),
        })
        .collect();
    let mut out = RecordRuns::default();
    for res in results {
        let (trace, kind) = res?;
        match kind {
            1 => out.empty += 1,
            2 => out.malformed += 1,
            _ => {}
        }
        out.traces.push(trace);
    }
    if out.empty + out.malformed > 0 {
        warn!(empty = out.empty, malformed = out.malformed, variant = %cfg.variant, k = cfg.k, "records without recommendations");
    }
    Ok(out)
}

fn failed_trace(reason: &str) -> PipelineTrace {
    PipelineTrace {
        warnings: vec![format!("record failed: {reason}")],
        ..PipelineTrace::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub report: MetricReport,
    pub runs: RecordRuns,
}

/// One report per `(variant, K)`, variants outermost.
pub fn sweep_k(
    records: &[EvalRecord],
    base: &PipelineConfig,
    ks: &[usize],
    variants: &[Variant],
    inputs: &PipelineInputs<'_>,
    detail: bool,
) -> Result<Vec<SweepCell>, EvalError> {
    let mut cells = Vec::with_capacity(ks.len() * variants.len());
    for &variant in variants {
        for &k in ks {
            let cfg = PipelineConfig {
                variant,
                k,
                ..base.clone()
            };
            let runs = run_records(records, &cfg, inputs)?;
            let report = MetricReport::compute(variant, k, records, &runs.traces, inputs.db, &DEFAULT_MS, detail)?;
            cells.push(SweepCell { report, runs });
        }
    }
    Ok(cells)
}

/// Writes one JSON report per line after checking each one.
pub fn write_reports<W: Write>(mut w: W, reports: &[MetricReport]) -> Result<(), EvalError> {
    for r in reports {
        r.check()?;
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format plot data: `variant,K,group,M,recall`.
pub fn write_plot_csv<W: Write>(mut w: W, reports: &[MetricReport]) -> Result<(), EvalError> {
    writeln!(w, "variant,K,group,M,recall")?;
    for r in reports {
        r.check()?;
        for (m, v) in &r.recall_at {
            writeln!(w, "{},{},{},{},{}", r.variant, r.k, r.group.as_deref().unwrap_or(""), m, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reports for the records of one group, computed from already-run traces.
pub fn subset_report(
    variant: Variant,
    k: usize,
    group: &str,
    records: &[EvalRecord],
    traces: &[PipelineTrace],
    keep: impl Fn(&EvalRecord) -> bool,
    db: &ItemDatabase,
) -> Result<MetricReport, EvalError> {
    if records.len() != traces.len() {
        return Err(EvalError::Misaligned {
            records: records.len(),
            traces: traces.len(),
        });
    }
    let (rs, ts): (Vec<EvalRecord>, Vec<PipelineTrace>) = records
        .iter()
        .zip(traces)
        .filter(|(r, _)| keep(r))
        .map(|(r, t)| (r.clone(), t.clone()))
        .unzip();
    Ok(MetricReport::compute(variant, k, &rs, &ts, db, &DEFAULT_MS, false)?.with_group(group))
}

/// Records used by the smoke check.
pub const SMOKE_RECORDS: usize = 10;

/// Outcome of [`smoke_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmokeOutcome {
    pub records: usize,
    pub clean: MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy: Option<MetricReport>,
}

/// Functionality check against a backend: the first [`SMOKE_RECORDS`]
/// records must all produce recommendations without malformed replies, and
/// recall@20 must be nonzero. With a noise seed, recall@5 on the perturbed
/// records must not exceed the clean value.
pub fn smoke_check(
    records: &[EvalRecord],
    cfg: &PipelineConfig,
    inputs: &PipelineInputs<'_>,
    noise_seed: Option<u64>,
) -> Result<SmokeOutcome, EvalError> {
    let records = &records[..records.len().min(SMOKE_RECORDS)];
    if records.is_empty() {
        return Err(EvalError::SmokeFailed("no evaluation records".into()));
    }
    let runs = run_records(records, cfg, inputs)?;
    if runs.malformed > 0 {
        return Err(EvalError::SmokeFailed(format!("{} malformed completions after retry", runs.malformed)));
    }
    let clean = MetricReport::compute(cfg.variant, cfg.k, records, &runs.traces, inputs.db, &DEFAULT_MS, false)?;
    if clean.recall_at.get(&20).copied().unwrap_or(0.0) <= 0.0 {
        return Err(EvalError::SmokeFailed("recall@20 is zero".into()));
    }
    let noisy = match noise_seed {
        Some(seed) => {
            let perturbed = noise_replace(records, inputs.db, seed);
            let runs = run_records(&perturbed, cfg, inputs)?;
            let noisy = MetricReport::compute(cfg.variant, cfg.k, &perturbed, &runs.traces, inputs.db, &DEFAULT_MS, false)?
                .with_group("noise");
            if noisy.recall_at[&5] > clean.recall_at[&5] {
                return Err(EvalError::SmokeFailed(format!(
                    "noisy recall@5 {} exceeds clean {}",
                    noisy.recall_at[&5], clean.recall_at[&5]
                )));
            }
            Some(noisy)
        }
        None => None,
    };
    Ok(SmokeOutcome {
        records: records.len(),
        clean,
        noisy,
    })
}

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EvalRecord, ItemDatabase};
use crate::pipeline::PipelineTrace;

/// Records grouped by the release years of their dialogue's ground truths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecencySplit {
    pub before: Vec<EvalRecord>,
    pub after: Vec<EvalRecord>,
    /// Records left out because a ground truth of their dialogue has no year.
    pub excluded: usize,
}

/// A dialogue is `after` when at least one of its ground-truth items was
/// released in or after `cutoff_year`, and `before` when all are known and
/// earlier. Dialogues with an unknown year and no qualifying item are excluded.
pub fn recency_split(records: &[EvalRecord], db: &ItemDatabase, cutoff_year: i32) -> RecencySplit {
    let mut years: BTreeMap<&str, Vec<Option<i32>>> = BTreeMap::new();
    for r in records {
        let year = db.get(r.ground_truth_item).and_then(|i| i.release_year);
        years.entry(&r.dialogue_id).or_default().push(year);
    }
    let mut out = RecencySplit::default();
    for r in records {
        let ys = &years[r.dialogue_id.as_str()];
        if ys.iter().any(|y| y.is_some_and(|y| y >= cutoff_year)) {
            out.after.push(r.clone());
        } else if ys.iter().all(Option::is_some) {
            out.before.push(r.clone());
        } else {
            out.excluded += 1;
        }
    }
    out
}

/// `counts[i][j]`: how often the `j`-th reflected retrieval item ended up at
/// position `i` of the final recommendations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    #[serde(rename = "K")]
    pub k: usize,
    pub top_rows_shown: usize,
}

pub const CONFUSION_ROWS: usize = 20;
pub const CONFUSION_ROWS_SHOWN: usize = 5;

pub fn rank_confusion(traces: &[PipelineTrace], k: usize) -> ConfusionMatrix {
    rank_confusion_with_rows(traces, k, CONFUSION_ROWS)
}

pub fn rank_confusion_with_rows(traces: &[PipelineTrace], k: usize, rows: usize) -> ConfusionMatrix {
    let mut counts = vec![vec![0u64; k]; rows];
    for t in traces {
        for (j, item) in t.reflected_retrieval.iter().enumerate().take(k) {
            if let Some(i) = t.final_recs.iter().position(|c| c == item) {
                if i < rows {
                    counts[i][j] += 1;
                }
            }
        }
    }
    ConfusionMatrix {
        counts,
        k,
        top_rows_shown: CONFUSION_ROWS_SHOWN,
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// CSV with a `rank` column followed by one column per retrieval position.
    /// Only the first `top_rows_shown` rows are written unless `all_rows`.
    pub fn to_csv(&self, all_rows: bool) -> String {
        let mut s = String::from("rank");
        for j in 1..=self.k {
            s.push_str(&format!(",r{j}"));
        }
        s.push('\n');
        let n = if all_rows {
            self.counts.len()
        } else {
            self.top_rows_shown.min(self.counts.len())
        };
        for (i, row) in self.counts.iter().take(n).enumerate() {
            s.push_str(&(i + 1).to_string());
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Replaces every mention in each prefix with an item drawn uniformly from
/// the database, keeping attitudes. Deterministic for a given seed.
pub fn noise_replace(records: &[EvalRecord], db: &ItemDatabase, seed: u64) -> Vec<EvalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if db.is_empty() {
                return r;
            }
            for turn in &mut r.prefix.turns {
                for m in &mut turn.mentions {
                    m.item = db.items()[rng.gen_range(0..db.len())].title.clone();
                }
            }
            r
        })
        .collect()
}

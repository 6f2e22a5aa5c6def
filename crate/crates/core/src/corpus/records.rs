use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Dialogue, ItemDatabase, ItemId, Speaker};

/// One evaluation sample: a dialogue prefix and a single ground-truth catalog
/// item recommended at `target_turn`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub dialogue_id: String,
    pub prefix: Dialogue,
    pub target_turn: usize,
    pub ground_truth_item: ItemId,
    /// True iff the prefix carries no linked mentions.
    pub cold_start: bool,
}

/// Emits one record per ground-truth catalog item of every system turn, so
/// each record has exactly one ground truth. Mentions that cannot be resolved
/// in `db` or are outside the catalog are not targets.
pub fn make_eval_records(test: &[Dialogue], db: &ItemDatabase) -> Vec<EvalRecord> {
    let mut out = Vec::new();
    for d in test {
        for (k, turn) in d.turns.iter().enumerate() {
            if turn.speaker != Speaker::System {
                continue;
            }
            let targets: BTreeSet<ItemId> = turn
                .mentions
                .iter()
                .filter_map(|m| db.lookup(&m.item))
                .filter(|&id| db.catalog_id(id).is_some())
                .collect();
            if targets.is_empty() {
                continue;
            }
            let prefix = d.prefix(k);
            let cold_start = !prefix.has_mentions();
            for item in targets {
                out.push(EvalRecord {
                    dialogue_id: d.id.clone(),
                    prefix: prefix.clone(),
                    target_turn: k,
                    ground_truth_item: item,
                    cold_start,
                });
            }
        }
    }
    out
}

/// Test-set statistics in the layout of the published dataset table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Test samples whose context mentions at least one item.
    pub conversations: usize,
    /// Test samples whose context mentions no item.
    pub conversations_without_items: usize,
    pub items: usize,
    pub catalog: usize,
}

pub fn dataset_stats(records: &[EvalRecord], db: &ItemDatabase) -> DatasetStats {
    let cold = records.iter().filter(|r| r.cold_start).count();
    DatasetStats {
        conversations: records.len() - cold,
        conversations_without_items: cold,
        items: db.len(),
        catalog: db.catalog_len(),
    }
}

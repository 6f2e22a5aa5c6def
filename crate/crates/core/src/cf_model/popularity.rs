use std::collections::HashSet;

use chrono::NaiveDate;

use crate::corpus::{Dialogue, ItemDatabase, PositivityPolicy};

/// Inclusive date range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    /// The last `days` days up to and including the latest dialogue date.
    pub fn trailing(dialogues: &[Dialogue], days: u32) -> Option<Self> {
        let end = dialogues.iter().map(|d| d.date).max()?;
        let start = end - chrono::Days::new(days.saturating_sub(1) as u64);
        Some(Self { start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

/// `weight[j] = (count[j] + 1) / (max count + 1)` where `count[j]` is the
/// number of dialogues in the window that positively mention catalog item `j`.
/// Without a window every weight is 1.
pub fn compute_pop_weights(
    train: &[Dialogue],
    db: &ItemDatabase,
    policy: &PositivityPolicy,
    window: Option<DateWindow>,
) -> Vec<f64> {
    let mut counts = vec![0u64; db.catalog_len()];
    let Some(window) = window else {
        return vec![1.0; db.catalog_len()];
    };
    for d in train.iter().filter(|d| window.contains(d.date)) {
        let mut seen = HashSet::new();
        for (speaker, m) in d.mentions() {
            if !policy.is_positive(speaker, m.attitude) {
                continue;
            }
            if let Some(c) = db.lookup(&m.item).and_then(|i| db.catalog_id(i)) {
                if seen.insert(c) {
                    counts[c.index()] += 1;
                }
            }
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    counts.iter().map(|&c| (c as f64 + 1.0) / (max + 1.0)).collect()
}

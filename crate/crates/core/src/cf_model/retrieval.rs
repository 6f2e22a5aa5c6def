use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{CfError, SimilarityModel};
use crate::corpus::{CatalogId, Dialogue, ItemDatabase, ItemId, PositivityPolicy};

/// Multi-hot query over the item database.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryVector {
    n_items: usize,
    source_items: Vec<ItemId>,
}

impl QueryVector {
    /// Duplicates collapse; ids are kept sorted.
    pub fn new(n_items: usize, items: impl IntoIterator<Item = ItemId>) -> Result<Self, CfError> {
        let set: BTreeSet<ItemId> = items.into_iter().collect();
        if let Some(bad) = set.iter().find(|i| i.index() >= n_items) {
            return Err(CfError::DimensionMismatch {
                what: "query item id",
                expected: n_items,
                found: bad.index(),
            });
        }
        Ok(Self {
            n_items,
            source_items: set.into_iter().collect(),
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn source_items(&self) -> &[ItemId] {
        &self.source_items
    }

    pub fn is_empty(&self) -> bool {
        self.source_items.is_empty()
    }

    /// The 0/1 vector `r`.
    pub fn dense(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.n_items];
        for i in &self.source_items {
            r[i.index()] = 1.0;
        }
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub catalog_id: CatalogId,
    pub score: f64,
}

/// Catalog items ordered by score descending, ties by ascending id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RetrievalList {
    pub entries: Vec<Retrieved>,
}

impl RetrievalList {
    pub fn ids(&self) -> Vec<CatalogId> {
        self.entries.iter().map(|e| e.catalog_id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `s = rᵀW`, then `s[j] *= pop[j]^beta` when popularity weights are attached.
pub fn score(model: &SimilarityModel, q: &QueryVector) -> Result<Vec<f64>, CfError> {
    if q.n_items() != model.n_items() {
        return Err(CfError::DimensionMismatch {
            what: "query length",
            expected: model.n_items(),
            found: q.n_items(),
        });
    }
    let w = model.weights();
    let mut s = vec![0.0; model.n_catalog()];
    for (j, sj) in s.iter_mut().enumerate() {
        let col = w.column(j);
        *sj = q.source_items().iter().map(|i| col[i.index()]).sum();
    }
    if let Some(pop) = model.pop_weights() {
        if model.beta() != 0.0 {
            for (sj, p) in s.iter_mut().zip(pop) {
                *sj *= p.powf(model.beta());
            }
        }
    }
    Ok(s)
}

/// The `k` best catalog ids outside `exclude`.
pub fn top_k(scores: &[f64], k: usize, exclude: &[CatalogId]) -> RetrievalList {
    if k == 0 {
        return RetrievalList::default();
    }
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|j| !exclude.contains(&CatalogId(*j as u32)))
        .collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    RetrievalList {
        entries: order
            .into_iter()
            .map(|j| Retrieved {
                catalog_id: CatalogId(j as u32),
                score: scores[j],
            })
            .collect(),
    }
}

/// Scores `q` and returns the top `k`, leaving out the query's own catalog
/// items unless `allow_mentioned` is set.
pub fn retrieve(model: &SimilarityModel, q: &QueryVector, k: usize, allow_mentioned: bool) -> Result<RetrievalList, CfError> {
    if k == 0 {
        return Ok(RetrievalList::default());
    }
    let s = score(model, q)?;
    let exclude: Vec<CatalogId> = if allow_mentioned {
        Vec::new()
    } else {
        q.source_items().iter().filter_map(|i| model.catalog_id(*i)).collect()
    };
    Ok(top_k(&s, k, &exclude))
}

/// Positively mentioned items of the prefix under `policy`.
pub fn rewrite_query(prefix: &Dialogue, policy: &PositivityPolicy, db: &ItemDatabase) -> QueryVector {
    let items = prefix.mentions().filter_map(|(speaker, m)| {
        if !policy.is_positive(speaker, m.attitude) {
            return None;
        }
        let id = db.lookup(&m.item);
        if id.is_none() {
            debug!(item = %m.item, "mention not in item database");
        }
        id
    });
    QueryVector::new(db.len(), items).expect("database ids are in range")
}

use std::collections::BTreeSet;
use std::io::{Read, Write};

use super::{CorpusError, Dialogue, ItemDatabase, ItemId, PositivityPolicy};

const MAGIC: &[u8; 8] = b"CRAGRMAT";

/// Binary pseudo-user x item matrix. Each row holds the sorted, distinct item
/// ids the pseudo-user interacted with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionMatrix {
    n_items: usize,
    rows: Vec<Vec<ItemId>>,
}

impl InteractionMatrix {
    /// Builds a matrix from row item lists; duplicates within a row collapse.
    pub fn from_rows(n_items: usize, rows: Vec<Vec<ItemId>>) -> Result<Self, CorpusError> {
        let rows = rows
            .into_iter()
            .map(|r| {
                let set: BTreeSet<ItemId> = r.into_iter().collect();
                if let Some(bad) = set.iter().find(|i| i.index() >= n_items) {
                    return Err(CorpusError::MatrixFormat(format!(
                        "column {} out of range for {n_items} items",
                        bad.0
                    )));
                }
                Ok(set.into_iter().collect())
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { n_items, rows })
    }

    /// Dense 0/1 row-major constructor, mainly for tests and FFI callers.
    pub fn from_dense(n_users: usize, n_items: usize, data: &[u8]) -> Result<Self, CorpusError> {
        if data.len() != n_users * n_items {
            return Err(CorpusError::MatrixFormat(format!(
                "dense buffer has {} entries, expected {}",
                data.len(),
                n_users * n_items
            )));
        }
        let mut rows = Vec::with_capacity(n_users);
        for u in 0..n_users {
            let row = &data[u * n_items..(u + 1) * n_items];
            let mut items = Vec::new();
            for (i, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => items.push(ItemId(i as u32)),
                    _ => return Err(CorpusError::MatrixFormat(format!("entry ({u},{i}) = {v} is not binary"))),
                }
            }
            rows.push(items);
        }
        Ok(Self { n_items, rows })
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn rows(&self) -> &[Vec<ItemId>] {
        &self.rows
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, user: usize, item: ItemId) -> bool {
        self.rows[user].binary_search(&item).is_ok()
    }

    /// Writes the coordinate-list format: 16-byte header (magic, u32 n_users,
    /// u32 n_items) followed by little-endian `(u32 row, u32 col)` pairs.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rows.len() as u32).to_le_bytes())?;
        w.write_all(&(self.n_items as u32).to_le_bytes())?;
        for (u, row) in self.rows.iter().enumerate() {
            for item in row {
                w.write_all(&(u as u32).to_le_bytes())?;
                w.write_all(&item.0.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CorpusError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| CorpusError::MatrixFormat(e.to_string()))?;
        if buf.len() < 16 || &buf[..8] != MAGIC {
            return Err(CorpusError::MatrixFormat("missing CRAGRMAT header".into()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(buf[off..off + 4].try_into().unwrap());
        let n_users = u32_at(8) as usize;
        let n_items = u32_at(12) as usize;
        let body = &buf[16..];
        if body.len() % 8 != 0 {
            return Err(CorpusError::MatrixFormat("truncated coordinate entry".into()));
        }
        let mut rows = vec![Vec::new(); n_users];
        for chunk in body.chunks_exact(8) {
            let u = u32::from_le_bytes(chunk[..4].try_into().unwrap()) as usize;
            let i = u32::from_le_bytes(chunk[4..].try_into().unwrap());
            if u >= n_users {
                return Err(CorpusError::MatrixFormat(format!("row {u} out of range")));
            }
            rows[u].push(ItemId(i));
        }
        Self::from_rows(n_items, rows)
    }
}

/// One row per training dialogue holding its positively mentioned items.
/// Dialogues without positives keep an all-zero row.
pub fn build_interactions(
    train: &[Dialogue],
    db: &ItemDatabase,
    policy: &PositivityPolicy,
) -> Result<InteractionMatrix, CorpusError> {
    let mut rows = Vec::with_capacity(train.len());
    for d in train {
        let mut row = BTreeSet::new();
        for (speaker, m) in d.mentions() {
            let id = db.lookup(&m.item).ok_or_else(|| CorpusError::UnknownItem {
                dialogue: d.id.clone(),
                item: m.item.clone(),
            })?;
            if policy.is_positive(speaker, m.attitude) {
                row.insert(id);
            }
        }
        rows.push(row.into_iter().collect());
    }
    Ok(InteractionMatrix {
        n_items: db.len(),
        rows,
    })
}

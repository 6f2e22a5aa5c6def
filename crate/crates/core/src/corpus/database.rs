use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{CatalogId, Dialogue, ItemId, Speaker};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: ItemId,
    pub title: String,
    pub release_year: Option<i32>,
    pub in_catalog: bool,
    pub catalog_id: Option<CatalogId>,
}

/// One line of the item metadata sidecar.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMetadata {
    pub title: String,
    pub year: Option<i32>,
}

/// The item database with its recommendable catalog subset.
///
/// Item ids follow the lexicographic order of canonical titles, so the
/// database does not depend on dialogue order. Catalog ids are dense and
/// follow ascending item id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemDatabase {
    items: Vec<ItemRecord>,
    by_title: HashMap<String, ItemId>,
    catalog: Vec<ItemId>,
}

impl ItemDatabase {
    /// Builds a database from `(title, in_catalog)` pairs. Duplicate titles are
    /// merged; an item is in the catalog if any occurrence says so.
    pub fn from_titles<I, S>(titles: I) -> Self
    where
        I: IntoIterator<Item = (S, bool)>,
        S: Into<String>,
    {
        let mut merged: BTreeMap<String, bool> = BTreeMap::new();
        for (title, in_catalog) in titles {
            *merged.entry(title.into()).or_default() |= in_catalog;
        }
        let mut items = Vec::with_capacity(merged.len());
        let mut by_title = HashMap::with_capacity(merged.len());
        let mut catalog = Vec::new();
        for (idx, (title, in_catalog)) in merged.into_iter().enumerate() {
            let item_id = ItemId(idx as u32);
            let catalog_id = in_catalog.then(|| {
                catalog.push(item_id);
                CatalogId(catalog.len() as u32 - 1)
            });
            by_title.insert(title.clone(), item_id);
            items.push(ItemRecord {
                item_id,
                release_year: parse_title_year(&title),
                title,
                in_catalog,
                catalog_id,
            });
        }
        Self {
            items,
            by_title,
            catalog,
        }
    }

    /// Fills in release years missing from titles using sidecar metadata.
    pub fn with_metadata(mut self, metadata: &[ItemMetadata]) -> Self {
        for meta in metadata {
            if let (Some(&id), Some(year)) = (self.by_title.get(&meta.title), meta.year) {
                let rec = &mut self.items[id.index()];
                if rec.release_year.is_none() {
                    rec.release_year = Some(year);
                }
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn catalog_len(&self) -> usize {
        self.catalog.len()
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn get(&self, id: ItemId) -> Option<&ItemRecord> {
        self.items.get(id.index())
    }

    pub fn title(&self, id: ItemId) -> &str {
        &self.items[id.index()].title
    }

    pub fn lookup(&self, title: &str) -> Option<ItemId> {
        self.by_title.get(title).copied()
    }

    /// Item id of catalog entry `c` (the ReID map).
    pub fn catalog_item(&self, c: CatalogId) -> ItemId {
        self.catalog[c.index()]
    }

    pub fn catalog_id(&self, id: ItemId) -> Option<CatalogId> {
        self.items.get(id.index()).and_then(|r| r.catalog_id)
    }

    /// Catalog-ordered item ids.
    pub fn catalog_items(&self) -> &[ItemId] {
        &self.catalog
    }

    pub fn catalog_title(&self, c: CatalogId) -> &str {
        self.title(self.catalog_item(c))
    }
}

/// Item database = every mentioned item; catalog = items mentioned in at least
/// one system utterance.
pub fn build_item_database(dialogues: &[Dialogue]) -> ItemDatabase {
    ItemDatabase::from_titles(
        dialogues
            .iter()
            .flat_map(|d| d.mentions())
            .map(|(speaker, m)| (m.item.clone(), speaker == Speaker::System)),
    )
}

/// Parses a trailing `(YYYY)` from an IMDB-style title.
pub fn parse_title_year(title: &str) -> Option<i32> {
    let t = title.trim_end();
    let inner = t.strip_suffix(')')?;
    let open = inner.rfind('(')?;
    let digits = &inner[open + 1..];
    if digits.len() == 4 && digits.bytes().all(|b| b.is_ascii_digit()) {
        digits.parse().ok()
    } else {
        None
    }
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::normalize::normalize_title;
use crate::corpus::{ItemDatabase, ItemId};

/// Thresholds and BM25 parameters for the bi-level matcher.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherConfig {
    /// Minimum character similarity for a character-level match.
    pub tau_char: f64,
    pub bm25_k1: f64,
    pub bm25_b: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            tau_char: 0.80,
            bm25_k1: 1.2,
            bm25_b: 0.75,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub item: ItemId,
    pub score: f64,
}

/// Normalized titles of every database item with a character-similarity scan
/// and a BM25 inverted index over title tokens.
#[derive(Clone, Debug)]
pub struct TitleIndex {
    cfg: MatcherConfig,
    titles: Vec<String>,
    normalized: Vec<String>,
    doc_len: Vec<usize>,
    avg_len: f64,
    postings: HashMap<String, Vec<(u32, u32)>>,
}

impl TitleIndex {
    pub fn build(db: &ItemDatabase, cfg: MatcherConfig) -> Self {
        let titles: Vec<String> = db.items().iter().map(|r| r.title.clone()).collect();
        let normalized: Vec<String> = titles.iter().map(|t| normalize_title(t)).collect();
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(normalized.len());
        for (doc, title) in normalized.iter().enumerate() {
            let tokens: Vec<&str> = title.split(' ').filter(|t| !t.is_empty()).collect();
            doc_len.push(tokens.len());
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t.to_string()).or_default().push((doc as u32, n));
            }
        }
        let avg_len = if doc_len.is_empty() {
            0.0
        } else {
            doc_len.iter().sum::<usize>() as f64 / doc_len.len() as f64
        };
        Self {
            cfg,
            titles,
            normalized,
            doc_len,
            avg_len,
            postings,
        }
    }

    pub fn config(&self) -> &MatcherConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    /// Canonical title of `item`.
    pub fn title(&self, item: ItemId) -> &str {
        &self.titles[item.index()]
    }

    pub fn normalized(&self, item: ItemId) -> &str {
        &self.normalized[item.index()]
    }

    /// Character similarity `1 - lev(a, b) / max(|a|, |b|)` over normalized
    /// strings. Two empty strings are identical.
    pub fn char_similarity(a: &str, b: &str) -> f64 {
        strsim::normalized_levenshtein(a, b)
    }

    /// Best character-level match, or `None` below `tau_char`. Ties go to the
    /// lower item id.
    pub fn char_match(&self, surface: &str) -> Option<Match> {
        let q = normalize_title(surface);
        if q.is_empty() {
            return None;
        }
        let mut best: Option<Match> = None;
        for (i, title) in self.normalized.iter().enumerate() {
            let score = Self::char_similarity(&q, title);
            if best.is_none_or(|b| score > b.score) {
                best = Some(Match {
                    item: ItemId(i as u32),
                    score,
                });
            }
        }
        best.filter(|m| m.score >= self.cfg.tau_char)
    }

    /// BM25 score of every item with at least one query token, indexed by item.
    pub fn bm25_scores(&self, surface: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.normalized.len()];
        let q = normalize_title(surface);
        let mut terms: Vec<&str> = q.split(' ').filter(|t| !t.is_empty()).collect();
        terms.sort_unstable();
        terms.dedup();
        let n = self.normalized.len() as f64;
        let MatcherConfig { bm25_k1: k1, bm25_b: b, .. } = self.cfg;
        for term in terms {
            let Some(list) = self.postings.get(term) else { continue };
            let df = list.len() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            for &(doc, tf) in list {
                let tf = tf as f64;
                let len_norm = 1.0 - b + b * self.doc_len[doc as usize] as f64 / self.avg_len;
                scores[doc as usize] += idf * tf * (k1 + 1.0) / (tf + k1 * len_norm);
            }
        }
        scores
    }

    /// Top-1 BM25 match, or `None` when no query token occurs in any title.
    /// Ties go to the lower item id.
    pub fn word_match(&self, surface: &str) -> Option<Match> {
        let mut best: Option<Match> = None;
        for (i, &score) in self.bm25_scores(surface).iter().enumerate() {
            if score > 0.0 && best.is_none_or(|b| score > b.score) {
                best = Some(Match {
                    item: ItemId(i as u32),
                    score,
                });
            }
        }
        best
    }
}

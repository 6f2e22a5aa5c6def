use std::collections::BTreeMap;

use tracing::warn;

use super::{PipelineConfig, PipelineError, PromptMode};
use crate::cf_model::RetrievalList;
use crate::corpus::{CatalogId, Dialogue, ItemDatabase, ItemId};
use crate::entity_link::parse::{parse_lines, parse_scored_line, parse_title_list, ScoredLine};
use crate::entity_link::{complete_parsed, link_mentions, normalize_title, LinkError, MentionCandidate, TitleIndex};
use crate::llm_gateway::prompts::{AUGMENTATION_PRETEXT, RAG_SUFFIX, REC_SUFFIX};
use crate::llm_gateway::{render_dialogue, Gateway, Slots, TemplateId};

/// Call counter and warning sink shared by the stages of one run.
#[derive(Debug, Default)]
pub struct StageLog {
    pub llm_calls: usize,
    pub warnings: Vec<String>,
}

impl StageLog {
    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }
}

/// Finds the candidate a reply line refers to: normalized equality first,
/// then the closest title above the matcher's character threshold.
fn match_in_list(name: &str, candidates: &[(CatalogId, String)], tau: f64) -> Option<CatalogId> {
    let key = normalize_title(name);
    if let Some((c, _)) = candidates.iter().find(|(_, t)| normalize_title(t) == key) {
        return Some(*c);
    }
    candidates
        .iter()
        .map(|(c, t)| (*c, TitleIndex::char_similarity(&key, &normalize_title(t))))
        .filter(|(_, s)| *s >= tau)
        .fold(None, |best: Option<(CatalogId, f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        })
        .map(|(c, _)| c)
}

fn titled(ids: &[CatalogId], db: &ItemDatabase) -> Vec<(CatalogId, String)> {
    ids.iter().map(|c| (*c, db.catalog_title(*c).to_string())).collect()
}

fn join_titles(items: &[(CatalogId, String)]) -> String {
    items.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join("; ")
}

/// Maps judged reply lines onto candidates; first judgment per item wins.
fn judge(
    lines: Vec<ScoredLine>,
    candidates: &[(CatalogId, String)],
    tau: f64,
    log: &mut StageLog,
) -> BTreeMap<CatalogId, i8> {
    let mut out = BTreeMap::new();
    for line in lines {
        match match_in_list(&line.name, candidates, tau) {
            Some(c) => {
                out.entry(c).or_insert(line.value);
            }
            None => log.warn(format!("reply names {:?}, which was not a candidate", line.name)),
        }
    }
    out
}

/// Keeps the retrieved items the LLM judges relevant to the context.
pub fn context_reflect(
    prefix: &Dialogue,
    retrieval: &RetrievalList,
    db: &ItemDatabase,
    index: &TitleIndex,
    llm: &Gateway,
    log: &mut StageLog,
) -> Result<Vec<CatalogId>, PipelineError> {
    if retrieval.is_empty() {
        return Ok(Vec::new());
    }
    let candidates = titled(&retrieval.ids(), db);
    let slots = Slots::new()
        .with("dialogue", render_dialogue(prefix))
        .with("items", join_titles(&candidates));
    let reply = complete_parsed(
        llm,
        TemplateId::ContextReflect,
        &slots,
        &mut log.llm_calls,
        &mut log.warnings,
        |text| parse_lines(text, "context reflection", |l| parse_scored_line(l, 0, 1)),
    )?;
    let Some(lines) = reply else {
        log.warn("context reflection unusable; keeping the unfiltered retrieval".into());
        return Ok(retrieval.ids());
    };
    let judged = judge(lines, &candidates, index.config().tau_char, log);
    let mut kept = Vec::new();
    for (c, title) in &candidates {
        match judged.get(c) {
            Some(1) => kept.push(*c),
            Some(_) => {}
            None => log.warn(format!("context reflection did not judge {title:?}; dropped")),
        }
    }
    Ok(kept)
}

/// The retrieval block appended to the recommendation prompt; empty when
/// there is nothing to show.
pub fn build_augmentation(items: &[CatalogId], db: &ItemDatabase) -> String {
    if items.is_empty() {
        return String::new();
    }
    let titles: Vec<&str> = items.iter().map(|c| db.catalog_title(*c)).collect();
    format!("{AUGMENTATION_PRETEXT} {}", titles.join("; "))
}

/// Links a generated title to the database without reflection: the two
/// matchers must agree, or the character match is taken when they differ.
pub fn link_generated(title: &str, index: &TitleIndex, log: &mut StageLog) -> Option<ItemId> {
    let c = index.char_match(title);
    let w = index.word_match(title);
    match (c, w) {
        (Some(c), Some(w)) if c.item == w.item => Some(c.item),
        (Some(c), _) => {
            if let Some(w) = w {
                log.warn(format!(
                    "{title:?}: character match {:?} and word match {:?} disagree; using the character match",
                    index.title(c.item),
                    index.title(w.item)
                ));
            }
            Some(c.item)
        }
        (None, Some(w)) => {
            log.warn(format!(
                "{title:?}: only a word match ({:?}); dropped",
                index.title(w.item)
            ));
            None
        }
        (None, None) => {
            log.warn(format!("{title:?} is not in the item database; dropped"));
            None
        }
    }
}

/// Asks the LLM for recommendations and links them to the catalog.
pub fn generate_recommendations(
    prefix: &Dialogue,
    augmentation: &str,
    cfg: &PipelineConfig,
    db: &ItemDatabase,
    index: &TitleIndex,
    llm: &Gateway,
    log: &mut StageLog,
) -> Result<Vec<CatalogId>, PipelineError> {
    let mut slots = Slots::new()
        .with("dialogue", render_dialogue(prefix))
        .with("count", cfg.m_rec.to_string());
    if !augmentation.is_empty() {
        let suffix = match cfg.prompt_mode {
            PromptMode::Rag => RAG_SUFFIX,
            PromptMode::Rec => REC_SUFFIX,
        };
        slots = slots.with("augmentation", augmentation).with("mode", suffix);
    }
    let parse = |text: &str| {
        let p = parse_title_list(text, "recommendation")?;
        if p.items.is_empty() {
            return Err(LinkError::MalformedCompletion {
                what: "recommendation",
                malformed: p.warnings.len(),
                total: p.warnings.len(),
            });
        }
        Ok(p)
    };
    let mut titles = None;
    for attempt in 0..2 {
        let text = llm.complete(TemplateId::Recommend, &slots)?;
        log.llm_calls += 1;
        match parse(&text) {
            Ok(p) => {
                log.warnings.extend(p.warnings);
                titles = Some(p.items);
                break;
            }
            Err(e) if attempt == 0 => warn!(error = %e, "retrying malformed recommendation"),
            Err(e) => return Err(e.into()),
        }
    }
    let mut recs: Vec<CatalogId> = Vec::new();
    for title in titles.unwrap_or_default() {
        let Some(item) = link_generated(&title, index, log) else { continue };
        let Some(c) = db.catalog_id(item) else {
            log.warn(format!("{:?} is not in the catalog; dropped", db.title(item)));
            continue;
        };
        if !recs.contains(&c) {
            recs.push(c);
        }
    }
    if recs.is_empty() {
        return Err(PipelineError::EmptyRecommendation);
    }
    Ok(recs)
}

/// Scores each recommendation in `[-2, 2]` with the LLM and stably sorts by
/// score. Items the reply leaves out score 0.
pub fn reflect_rerank(
    prefix: &Dialogue,
    recs: &[CatalogId],
    db: &ItemDatabase,
    index: &TitleIndex,
    llm: &Gateway,
    log: &mut StageLog,
) -> Result<(Vec<CatalogId>, BTreeMap<CatalogId, i8>), PipelineError> {
    if recs.is_empty() {
        return Ok((Vec::new(), BTreeMap::new()));
    }
    let candidates = titled(recs, db);
    let slots = Slots::new()
        .with("dialogue", render_dialogue(prefix))
        .with("items", join_titles(&candidates));
    let reply = complete_parsed(
        llm,
        TemplateId::Rerank,
        &slots,
        &mut log.llm_calls,
        &mut log.warnings,
        |text| parse_lines(text, "rerank", |l| parse_scored_line(l, -2, 2)),
    )?;
    let judged = match reply {
        Some(lines) => judge(lines, &candidates, index.config().tau_char, log),
        None => {
            log.warn("rerank unusable; keeping the generated order".into());
            BTreeMap::new()
        }
    };
    let scores: BTreeMap<CatalogId, i8> = recs.iter().map(|c| (*c, judged.get(c).copied().unwrap_or(0))).collect();
    let mut order = recs.to_vec();
    order.sort_by_key(|c| std::cmp::Reverse(scores[c]));
    Ok((order, scores))
}

/// Asks the LLM which items a mention-free conversation points to and links
/// them to the database.
pub fn seed_items_cold_start(
    prefix: &Dialogue,
    cfg: &PipelineConfig,
    index: &TitleIndex,
    llm: &Gateway,
    log: &mut StageLog,
) -> Result<Vec<ItemId>, PipelineError> {
    let dialogue = render_dialogue(prefix);
    let slots = Slots::new()
        .with("dialogue", dialogue.clone())
        .with("count", cfg.cold_start_seeds.to_string());
    let reply = complete_parsed(
        llm,
        TemplateId::ColdStartSeeds,
        &slots,
        &mut log.llm_calls,
        &mut log.warnings,
        |text| parse_title_list(text, "cold-start seeds"),
    )?;
    let cands: Vec<MentionCandidate> = reply
        .unwrap_or_default()
        .into_iter()
        .map(|surface| MentionCandidate { surface, attitude: 1 })
        .collect();
    let linked = link_mentions(&cands, index, &dialogue, llm)?;
    log.llm_calls += linked.llm_calls;
    log.warnings.extend(linked.warnings);
    let seeds: Vec<ItemId> = linked.mentions.iter().map(|m| m.item).collect();
    if seeds.is_empty() {
        log.warn("no cold-start seed could be linked; continuing without retrieval".into());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augmentation_format() {
        let db = ItemDatabase::from_titles([("A (2000)", true), ("B", true)]);
        assert_eq!(build_augmentation(&[], &db), "");
        assert_eq!(
            build_augmentation(&[CatalogId(1), CatalogId(0)], &db),
            format!("{AUGMENTATION_PRETEXT} B; A (2000)")
        );
        assert!(!build_augmentation(&[CatalogId(0)], &db).ends_with(';'));
    }

    #[test]
    fn reply_names_match_with_or_without_year() {
        let cands = vec![(CatalogId(0), "Elite Squad (2007)".to_string()), (CatalogId(1), "Elite Squad 2 (2010)".to_string())];
        assert_eq!(match_in_list("Elite Squad", &cands, 0.8), Some(CatalogId(0)));
        assert_eq!(match_in_list("Elite Squad 2", &cands, 0.8), Some(CatalogId(1)));
        assert_eq!(match_in_list("Troll", &cands, 0.8), None);
    }
}

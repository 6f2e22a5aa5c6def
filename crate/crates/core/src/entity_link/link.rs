use serde::{Deserialize, Serialize};
use tracing::warn;

use super::index::{Match, TitleIndex};
use super::normalize::normalize_title;
use super::parse::{parse_entity_reflection, parse_extraction, MentionCandidate, Parsed, ReflectedMethod, ReflectionLine};
use super::LinkError;
use crate::corpus::{ItemId, Mention};
use crate::llm_gateway::prompts::SEP;
use crate::llm_gateway::{Gateway, Slots, TemplateId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMethod {
    Char,
    Word,
    Both,
    None,
    Reflected,
}

/// Both matcher results for one surface string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub surface: String,
    pub char_match: Option<Match>,
    pub word_match: Option<Match>,
}

impl MatchCandidate {
    pub fn compute(surface: &str, index: &TitleIndex) -> Self {
        Self {
            surface: surface.to_string(),
            char_match: index.char_match(surface),
            word_match: index.word_match(surface),
        }
    }

    /// The item both matchers agree on, if any.
    pub fn agreed(&self) -> Option<ItemId> {
        match (self.char_match, self.word_match) {
            (Some(c), Some(w)) if c.item == w.item => Some(c.item),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedMention {
    pub item: ItemId,
    pub surface: String,
    pub attitude: i8,
    pub method: LinkMethod,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkOutcome {
    pub mentions: Vec<LinkedMention>,
    pub warnings: Vec<String>,
    pub llm_calls: usize,
}

impl LinkOutcome {
    /// Converts to corpus mentions carrying canonical titles.
    pub fn corpus_mentions(&self, index: &TitleIndex) -> Vec<Mention> {
        self.mentions
            .iter()
            .map(|m| Mention {
                item: index.title(m.item).to_string(),
                attitude: m.attitude,
            })
            .collect()
    }
}

/// Resolves extracted candidates against the index. Candidates on which the
/// matchers agree are linked directly; those with no match at all are
/// dropped; the rest go to a single batched reflection call.
pub fn link_mentions(
    cands: &[MentionCandidate],
    index: &TitleIndex,
    context: &str,
    llm: &Gateway,
) -> Result<LinkOutcome, LinkError> {
    let mut out = LinkOutcome::default();
    let mut resolved: Vec<Option<(ItemId, LinkMethod)>> = vec![None; cands.len()];
    let mut pending: Vec<(usize, MatchCandidate)> = Vec::new();

    for (i, cand) in cands.iter().enumerate() {
        let m = MatchCandidate::compute(&cand.surface, index);
        if let Some(item) = m.agreed() {
            resolved[i] = Some((item, LinkMethod::Both));
        } else if m.char_match.is_none() && m.word_match.is_none() {
            out.warnings.push(format!("no database match for {:?}", cand.surface));
        } else {
            pending.push((i, m));
        }
    }

    if !pending.is_empty() {
        let matches = pending
            .iter()
            .map(|(_, m)| {
                let title = |x: Option<Match>| x.map_or(" ", |x| index.title(x.item));
                format!("{}{SEP}{}{SEP}{}", m.surface, title(m.char_match), title(m.word_match))
            })
            .collect::<Vec<_>>()
            .join("; ");
        let slots = Slots::new().with("utterance", context).with("matches", matches);
        let reply = complete_parsed(
            llm,
            TemplateId::EntityReflect,
            &slots,
            &mut out.llm_calls,
            &mut out.warnings,
            parse_entity_reflection,
        )?;

        let mut judged = vec![false; pending.len()];
        if let Some(lines) = reply {
            for line in lines {
                let key = normalize_title(&line.raw);
                let slot = pending
                    .iter()
                    .enumerate()
                    .position(|(p, (_, m))| !judged[p] && normalize_title(&m.surface) == key);
                let Some(p) = slot else {
                    out.warnings.push(format!("reflection names unknown mention {:?}", line.raw));
                    continue;
                };
                judged[p] = true;
                let (ci, m) = &pending[p];
                resolved[*ci] = resolve_reflection(&line, m, index, &mut out.warnings);
            }
        }
        for (p, (ci, m)) in pending.iter().enumerate() {
            if judged[p] {
                continue;
            }
            out.warnings.push(format!("no reflection for {:?}; using character match", m.surface));
            resolved[*ci] = m.char_match.map(|c| (c.item, LinkMethod::Char));
        }
    }

    for (cand, r) in cands.iter().zip(resolved) {
        let Some((item, method)) = r else { continue };
        if out.mentions.iter().any(|m| m.item == item) {
            continue;
        }
        out.mentions.push(LinkedMention {
            item,
            surface: cand.surface.clone(),
            attitude: cand.attitude,
            method,
        });
    }
    Ok(out)
}

fn resolve_reflection(
    line: &ReflectionLine,
    m: &MatchCandidate,
    index: &TitleIndex,
    warnings: &mut Vec<String>,
) -> Option<(ItemId, LinkMethod)> {
    if line.method == ReflectedMethod::None || line.correct.is_empty() {
        return None;
    }
    let target = normalize_title(&line.correct);
    let same = |x: Option<Match>| x.filter(|x| index.normalized(x.item) == target).map(|x| x.item);
    let item = same(m.char_match)
        .or_else(|| same(m.word_match))
        .or_else(|| index.char_match(&line.correct).map(|x| x.item));
    if item.is_none() {
        warnings.push(format!("reflected title {:?} is not in the database", line.correct));
    }
    item.map(|i| (i, LinkMethod::Reflected))
}

/// Sends `template`, parses the reply and retries once on a malformed
/// completion. Returns `None` (with a warning) if the retry is malformed too.
pub(crate) fn complete_parsed<T>(
    llm: &Gateway,
    template: TemplateId,
    slots: &Slots,
    llm_calls: &mut usize,
    warnings: &mut Vec<String>,
    parse: impl Fn(&str) -> Result<Parsed<T>, LinkError>,
) -> Result<Option<Vec<T>>, LinkError> {
    for attempt in 0..2 {
        let text = llm.complete(template, slots)?;
        *llm_calls += 1;
        match parse(&text) {
            Ok(p) => {
                warnings.extend(p.warnings);
                return Ok(Some(p.items));
            }
            Err(e) if attempt == 0 => warn!(%template, error = %e, "retrying malformed completion"),
            Err(e) => warnings.push(format!("{e}; falling back")),
        }
    }
    Ok(None)
}

/// Extracts mentions from `utterance` with the LLM and links them.
pub fn extract_and_link(utterance: &str, index: &TitleIndex, llm: &Gateway) -> Result<LinkOutcome, LinkError> {
    let slots = Slots::new().with("utterance", utterance);
    let mut calls = 0;
    let parsed = loop {
        let text = llm.complete(TemplateId::Extract, &slots)?;
        calls += 1;
        match parse_extraction(&text) {
            Ok(p) => break p,
            Err(e) if calls == 1 => warn!(error = %e, "retrying malformed extraction"),
            Err(e) => return Err(e),
        }
    };
    let mut out = link_mentions(&parsed.items, index, utterance, llm)?;
    out.llm_calls += calls;
    let mut warnings = parsed.warnings;
    warnings.append(&mut out.warnings);
    out.warnings = warnings;
    Ok(out)
}

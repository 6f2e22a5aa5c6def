//! The prompt catalog.
//!
//! Each template is a task instruction (sent as the system message) and a
//! format instruction followed by input lines (sent as the user message).
//! Placeholders are written `{name}` and are filled in a single pass, so
//! values that themselves contain braces are never re-expanded.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, GatewayError, Role};
use crate::corpus::Dialogue;

/// Separator between fields of one structured reply line.
pub const SEP: &str = "####";

/// Pretext placed before the semicolon-separated collaborative retrieval.
pub const AUGMENTATION_PRETEXT: &str =
    "Based on movies mentioned in the conversation, here are some movies that are usually liked by other users:";

pub const RAG_SUFFIX: &str =
    "Use the above information at your discretion (i.e., do not confine your recommendation to the above movies).";

pub const REC_SUFFIX: &str = "Consider using the above movies for recommendations.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Extract,
    EntityReflect,
    ContextReflect,
    Recommend,
    Rerank,
    ColdStartSeeds,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::Extract,
        TemplateId::EntityReflect,
        TemplateId::ContextReflect,
        TemplateId::Recommend,
        TemplateId::Rerank,
        TemplateId::ColdStartSeeds,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Extract => "extract",
            TemplateId::EntityReflect => "entity_reflect",
            TemplateId::ContextReflect => "context_reflect",
            TemplateId::Recommend => "recommend",
            TemplateId::Rerank => "rerank",
            TemplateId::ColdStartSeeds => "cold_start_seeds",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| GatewayError::UnknownTemplate(s.to_string()))
    }
}

/// One input line of a template. Optional lines are dropped when their slot
/// is not supplied.
#[derive(Debug)]
pub struct SlotLine {
    pub slot: &'static str,
    pub text: &'static str,
    pub required: bool,
}

#[derive(Debug)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub task: &'static str,
    pub format: &'static str,
    pub lines: &'static [SlotLine],
    /// Placeholders used inside `task`/`format` and their default values.
    pub defaults: &'static [(&'static str, &'static str)],
}

const fn req(slot: &'static str, text: &'static str) -> SlotLine {
    SlotLine {
        slot,
        text,
        required: true,
    }
}

const fn opt(slot: &'static str, text: &'static str) -> SlotLine {
    SlotLine {
        slot,
        text,
        required: false,
    }
}

static EXTRACT: PromptTemplate = PromptTemplate {
    id: TemplateId::Extract,
    task: "Pretend you are a movie recommender system. You (a recommender system) will be given a user's query that seeks movie recommendations. Based on the query, you need to extract movie names mentioned in the user's query and analyze the user's attitude toward each movie. You need to reply with standardized movie names (with grammatical errors corrected and abbreviations fixed), as well as the user's attitude toward the movie.",
    format: "Specifically, the movie names need to be formatted in the IMDB style, with the year bracketed if possible (do not add the year if you are not sure). In addition, the attitude is represented in one of [-2, -1, 0, 1, 2], where -2 stands for very negative, -1 stands for negative, 0 stands for neutral, 1 stands for positive, and 2 stands for very positive. You need to reply with the number as an attitude instead of the textual description. If there are movie names mentioned in the query, list each movie name and the user's attitude (number in -2 to 2) in the form of movie_name####attitude, where different movies are listed in different lines with no extra sentences. Reply NO if no movie names are mentioned in the query.",
    lines: &[req("utterance", "Here is the user's query: {utterance}.")],
    defaults: &[],
};

static ENTITY_REFLECT: PromptTemplate = PromptTemplate {
    id: TemplateId::EntityReflect,
    task: "Pretend you are a movie recommender system. You, as the recommender system, will be given part of the dialogue between a user seeking a movie recommendation and yourself, along with the extracted movie names (which may potentially be incorrect). Even if the extracted movie names are correct, the wording might not be precise. Therefore, you will be provided with the best match for each extracted movie name from an external database using (1) character-level fuzzy match and (2) word-level BM25 match (a space will be provided if no name can be found via the word-level match). Often, since these two matching methods focus on different levels of granularity, their results may not align. Based on the results, you must determine whether each movie name extraction is correct and what the precise movie name for that extracted name should be from the database.",
    format: "To reflect on this, for each extracted movie, you must respond with three terms separated by ####: (1) the raw movie name mentioned in the dialogue (raw refers to the exact text from the dialogue), (2) the precise movie name selected from fuzzy match or BM25 (reply with a space if the movie name extraction is incorrect or if neither match is precise), and (3) the correct extraction method, choosing from [fuzzy, BM25, none, both]. If the fuzzy match and BM25 results differ but both are probable, select the more probable one based on context as the correct name. List the reflection on each movie name in the exact form of raw _name####correct_name####method on a new line with no additional terms or sentences.",
    lines: &[
        req("utterance", "Here is the user's query: {utterance}."),
        req(
            "matches",
            "Here are extracted movie names, fuzzy matches, and BM25 matches from the movie database in the form of extracted_name####fuzzy_match####BM25_match: {matches}.",
        ),
    ],
    defaults: &[],
};

static CONTEXT_REFLECT: PromptTemplate = PromptTemplate {
    id: TemplateId::ContextReflect,
    task: "Pretend you are a movie recommender system. I will give you a conversation between a user and you (a recommender system), as well as movies retrieved from the movie database based on the similarity with movies mentioned by the user in the context. You need to judge whether each retrieved movie is a good recommendation based on the context.",
    format: "You need to reply with the judgment of each movie in a line, in the form of movie_name####judgment, where judgment is a binary number 0, 1. Judgment 0 means the movie is a bad recommendation, whereas judgment 1 means the movie is a good recommendation.",
    lines: &[
        req("dialogue", "Here is the conversation: {dialogue}."),
        req("items", "Here are retrieved movies: {items}."),
    ],
    defaults: &[],
};

static RECOMMEND: PromptTemplate = PromptTemplate {
    id: TemplateId::Recommend,
    task: "Pretend you are a movie recommender system. I will give you a conversation between a user and you (a recommender system). Based on the conversation, you need to reply with {count} movie recommendations without extra sentences.",
    format: "List the standardized title of each movie on a separate line.",
    lines: &[
        req("dialogue", "Here is the conversation: {dialogue}."),
        opt("augmentation", "{augmentation}."),
        opt("mode", "{mode}"),
    ],
    defaults: &[("count", "20")],
};

static RERANK: PromptTemplate = PromptTemplate {
    id: TemplateId::Rerank,
    task: "Pretend you are a movie recommender system. I will give you a conversation between a user and you (a recommender system), as well as some movie candidates from our movie database. You need to rate each retrieved movie as recommendations into five levels based on the conversation: 2 (great), 1 (good), 0 (normal), -1 (not good), -2 (bad).",
    format: "You need to reply with the rating of each movie in a line, in the form of movie_name####rating, where the rating should be an Integer, and 2 means great, 1 means good, 0 means normal, -1 means not good, and -2 means bad.",
    lines: &[
        req("dialogue", "Here is the conversation: {dialogue}."),
        req("items", "Here are the movie candidates: {items}."),
    ],
    defaults: &[],
};

// Not part of the published prompt set; follows the style of the others.
static COLD_START_SEEDS: PromptTemplate = PromptTemplate {
    id: TemplateId::ColdStartSeeds,
    task: "Pretend you are a movie recommender system. I will give you a conversation between a user and you (a recommender system). Based on the conversation, you need to infer {count} movies that the user would probably like, without extra sentences.",
    format: "List the standardized title of each movie on a separate line.",
    lines: &[req("dialogue", "Here is the conversation: {dialogue}.")],
    defaults: &[("count", "5")],
};

pub fn template(id: TemplateId) -> &'static PromptTemplate {
    match id {
        TemplateId::Extract => &EXTRACT,
        TemplateId::EntityReflect => &ENTITY_REFLECT,
        TemplateId::ContextReflect => &CONTEXT_REFLECT,
        TemplateId::Recommend => &RECOMMEND,
        TemplateId::Rerank => &RERANK,
        TemplateId::ColdStartSeeds => &COLD_START_SEEDS,
    }
}

/// Named slot values for rendering.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Slots(BTreeMap<String, String>);

impl Slots {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub template: TemplateId,
    pub messages: Vec<ChatMessage>,
}

pub fn render(id: TemplateId, slots: &Slots) -> Result<RenderedPrompt, GatewayError> {
    let t = template(id);
    let lookup = |name: &str| -> Option<String> {
        slots
            .get(name)
            .map(str::to_string)
            .or_else(|| t.defaults.iter().find(|(k, _)| *k == name).map(|(_, v)| v.to_string()))
    };
    let mut user = fill(t.format, &lookup);
    user.push_str("\n\n");
    let mut first = true;
    for line in t.lines {
        match slots.get(line.slot) {
            Some(_) => {}
            None if line.required => {
                return Err(GatewayError::MissingSlot {
                    template: id,
                    slot: line.slot.to_string(),
                })
            }
            None => continue,
        }
        if !first {
            user.push('\n');
        }
        first = false;
        user.push_str(&fill(line.text, &lookup));
    }
    Ok(RenderedPrompt {
        template: id,
        messages: vec![
            ChatMessage {
                role: Role::System,
                content: fill(t.task, &lookup),
            },
            ChatMessage {
                role: Role::User,
                content: user,
            },
        ],
    })
}

/// Renders a dialogue as `SPEAKER: text` lines.
pub fn render_dialogue(dialogue: &Dialogue) -> String {
    dialogue
        .turns
        .iter()
        .map(|t| format!("{}: {}", t.speaker.as_str(), t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn fill(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name.filter(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')) {
            Some(n) => match lookup(n) {
                Some(v) => {
                    out.push_str(&v);
                    rest = &after[n.len() + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            },
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

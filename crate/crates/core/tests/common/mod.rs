//! Shared fixture corpus and a scripted chat responder.
//!
//! The responder plays the LLM deterministically from a small movie table:
//! it extracts titles it knows, judges relevance by genre keyword, generates
//! genre lists and rates starred titles highest. Transcripts under
//! `tests/fixtures/` are produced by replaying the pipeline against it.

#![allow(dead_code)]

use std::path::PathBuf;

use chrono::NaiveDate;

use crag::corpus::{Dialogue, Mention, Speaker, Split, Utterance};
use crag::entity_link::normalize_title;
use crag::llm_gateway::prompts::AUGMENTATION_PRETEXT;
use crag::llm_gateway::{ChatRequest, GatewayError, TemplateId};

pub struct Movie {
    pub title: &'static str,
    pub genre: &'static str,
    /// Rated 2 by the scripted reranker when the genre matches.
    pub star: bool,
}

const fn mv(title: &'static str, genre: &'static str, star: bool) -> Movie {
    Movie { title, genre, star }
}

pub const MOVIES: &[Movie] = &[
    mv("City of God (2002)", "brazilian", false),
    mv("Bacurau (2019)", "brazilian", false),
    mv("The Enemy Within (2010)", "brazilian", false),
    mv("Elite Squad (2007)", "brazilian", true),
    mv("Elite Squad 2 (2010)", "brazilian", true),
    mv("Central Station (1998)", "brazilian", false),
    mv("Carandiru (2003)", "brazilian", false),
    mv("Pixote (1980)", "brazilian", false),
    mv("Neighboring Sounds (2012)", "brazilian", false),
    mv("Aquarius (2016)", "brazilian", false),
    mv("Amores Perros (2000)", "mexican", false),
    mv("Y Tu Mamá También (2001)", "mexican", false),
    mv("Roma (2018)", "mexican", false),
    mv("The Motorcycle Diaries (2004)", "mexican", false),
    mv("Troll (1986)", "horror", false),
    mv("Pan's Labyrinth (2006)", "horror", false),
    mv("The Descent (2005)", "horror", false),
    mv("It Follows (2014)", "horror", true),
    mv("Hereditary (2018)", "horror", true),
    mv("The Witch (2015)", "horror", false),
    mv("Midsommar (2019)", "horror", false),
    mv("Get Out (2017)", "horror", false),
    mv("The Hangover (2009)", "comedy", false),
    mv("Superbad (2007)", "comedy", false),
    mv("Step Brothers (2008)", "comedy", true),
    mv("Anchorman: The Legend of Ron Burgundy (2004)", "comedy", false),
    mv("Bridesmaids (2011)", "comedy", true),
    mv("Hot Fuzz (2007)", "comedy", false),
    mv("Shaun of the Dead (2004)", "comedy", false),
    mv("Inception (2010)", "scifi", false),
    mv("Interstellar (2014)", "scifi", true),
    mv("Arrival (2016)", "scifi", true),
    mv("Alien (1979)", "scifi", false),
    mv("Predator (1987)", "scifi", false),
    mv("AVP: Alien vs. Predator (2004)", "scifi", false),
    mv("Star Wars: Episode V - The Empire Strikes Back (1980)", "scifi", false),
    mv("Star Wars II - Attack of the Clones (2002)", "scifi", false),
    mv("Star Wars I - The Phantom Menace (1999)", "scifi", false),
    mv("Blade Runner 2049 (2017)", "scifi", false),
    mv("Dune (2021)", "scifi", false),
    mv("Ex Machina (2014)", "scifi", false),
    mv("Man Bites Dog (1992)", "cult", false),
    mv("Martin & Orloff (2002)", "cult", false),
    mv("The Doom Generation (1995)", "cult", false),
];

/// Surface forms the scripted extractor recognizes, with the title it
/// standardizes them to. Longer surfaces are tried first.
pub const SURFACES: &[(&str, &str)] = &[
    ("pans labyrinth", "Pan's Labyrinth"),
    ("martin and orloff", "Martin & Orloff"),
    ("star wars i", "Star Wars I"),
    ("elite squad 2", "Elite Squad 2"),
    ("avp", "AvP"),
];

/// Genre keywords as they appear in user utterances.
pub const GENRE_WORDS: &[(&str, &str)] = &[
    ("brazilian", "brazilian"),
    ("brazil", "brazilian"),
    ("mexican", "mexican"),
    ("horror", "horror"),
    ("scary", "horror"),
    ("comedy", "comedy"),
    ("funny", "comedy"),
    ("sci-fi", "scifi"),
    ("space", "scifi"),
    ("cult", "cult"),
];

pub const FIG2_QUERY: &str = "Could you recommend some Brazilian movies similar to City of God and Bacurau?";

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn movie(title_prefix: &str) -> &'static Movie {
    MOVIES
        .iter()
        .find(|m| bare(m.title) == title_prefix)
        .unwrap_or_else(|| panic!("no fixture movie {title_prefix:?}"))
}

/// Title without the trailing year.
pub fn bare(title: &str) -> &str {
    match title.rfind(" (") {
        Some(i) if title.ends_with(')') => &title[..i],
        _ => title,
    }
}

fn date(day: u32, month: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, month, day).unwrap()
}

fn mention(title: &str, attitude: i8) -> Mention {
    Mention {
        item: movie(title).title.to_string(),
        attitude,
    }
}

/// A two-turn dialogue: the user likes `liked`, the system suggests `recs`.
fn basket(id: String, day: u32, month: u32, split: Split, genre: &str, liked: &[&str], recs: &[&str]) -> Dialogue {
    let user = if liked.is_empty() {
        format!("Can you suggest a {genre} movie?")
    } else {
        format!("I really like {}. Any {genre} suggestions?", liked.join(" and "))
    };
    let sys = format!("You could try {}.", recs.join(", "));
    Dialogue {
        id,
        date: date(day, month),
        split,
        turns: vec![
            Utterance::new(Speaker::User, user).with_mentions(liked.iter().map(|t| mention(t, 2)).collect()),
            Utterance::new(Speaker::System, sys).with_mentions(recs.iter().map(|t| mention(t, 0)).collect()),
        ],
    }
}

/// Training co-occurrence baskets: `(genre, liked by the user, suggested)`.
const TRAIN: &[(&str, &[&str], &[&str])] = &[
    ("brazilian", &["City of God", "Bacurau"], &["The Enemy Within"]),
    ("latin", &["City of God"], &["Amores Perros", "The Enemy Within"]),
    ("latin", &["Bacurau"], &["Roma", "Y Tu Mamá También"]),
    ("latin", &["City of God"], &["Y Tu Mamá También", "Amores Perros"]),
    ("brazilian", &["Bacurau"], &["The Enemy Within", "Roma"]),
    ("latin", &["Amores Perros"], &["Roma", "The Motorcycle Diaries", "City of God"]),
    ("brazilian", &["Elite Squad"], &["Elite Squad 2", "Carandiru"]),
    ("brazilian", &["Central Station"], &["Pixote", "Carandiru"]),
    ("brazilian", &["Elite Squad 2"], &["Central Station", "Aquarius", "Elite Squad"]),
    ("brazilian", &["Neighboring Sounds"], &["Aquarius", "Pixote", "Bacurau"]),
    ("latin", &["The Motorcycle Diaries"], &["Central Station", "Y Tu Mamá También"]),
    ("horror", &["Troll", "Pan's Labyrinth"], &["The Descent"]),
    ("horror", &["It Follows"], &["Hereditary", "The Witch"]),
    ("horror", &["Hereditary"], &["Midsommar", "Get Out", "It Follows"]),
    ("horror", &["The Descent"], &["It Follows", "Get Out"]),
    ("horror", &["Pan's Labyrinth"], &["The Witch", "Midsommar", "Troll"]),
    ("horror", &["Troll"], &["The Descent", "Hereditary", "Pan's Labyrinth"]),
    ("comedy", &["The Hangover", "Superbad"], &["Step Brothers"]),
    ("comedy", &["Anchorman: The Legend of Ron Burgundy"], &["Step Brothers", "Bridesmaids"]),
    ("comedy", &["Hot Fuzz"], &["Shaun of the Dead", "Superbad"]),
    ("comedy", &["The Hangover"], &["Bridesmaids", "Hot Fuzz", "Anchorman: The Legend of Ron Burgundy"]),
    ("comedy", &["Shaun of the Dead"], &["The Hangover", "Hot Fuzz"]),
    ("scifi", &["Inception", "Interstellar"], &["Arrival"]),
    ("scifi", &["Alien"], &["Predator", "AVP: Alien vs. Predator"]),
    ("scifi", &["Blade Runner 2049"], &["Dune", "Arrival", "Ex Machina"]),
    ("scifi", &["Ex Machina"], &["Inception", "Blade Runner 2049", "Interstellar"]),
    ("scifi", &["Star Wars: Episode V - The Empire Strikes Back"], &["Star Wars I - The Phantom Menace", "Star Wars II - Attack of the Clones", "Dune"]),
    ("scifi", &["Interstellar"], &["Ex Machina", "Alien", "Inception"]),
    ("cult", &["Man Bites Dog"], &["Martin & Orloff", "The Doom Generation"]),
    ("cult", &["The Doom Generation"], &["Man Bites Dog", "Shaun of the Dead"]),
];

/// Test dialogues: `(genre, liked, ground truth)`. Empty `liked` is a
/// cold-start context.
const TEST: &[(&str, &[&str], &str)] = &[
    ("brazilian", &["City of God", "Bacurau"], "Elite Squad"),
    ("brazilian", &["Elite Squad"], "Elite Squad 2"),
    ("horror", &["It Follows"], "Hereditary"),
    ("horror", &["Troll", "The Descent"], "Get Out"),
    ("comedy", &["The Hangover"], "Step Brothers"),
    ("comedy", &["Hot Fuzz"], "Shaun of the Dead"),
    ("scifi", &["Inception"], "Interstellar"),
    ("scifi", &["Alien"], "Dune"),
    ("cult", &["Man Bites Dog"], "The Doom Generation"),
    ("comedy", &[], "Bridesmaids"),
];

/// The fixture corpus: training baskets in October and November, ten test
/// dialogues in December.
pub fn corpus() -> Vec<Dialogue> {
    let mut out = Vec::new();
    for (i, (genre, liked, recs)) in TRAIN.iter().enumerate() {
        let month = if i % 2 == 0 { 10 } else { 11 };
        out.push(basket(format!("train-{i:02}"), 1 + (i as u32 % 28), month, Split::Train, genre, liked, recs));
    }
    for (i, (genre, liked, gt)) in TEST.iter().enumerate() {
        out.push(basket(format!("test-{i:02}"), 1 + i as u32, 12, Split::Test, genre, liked, &[gt]));
    }
    out
}

/// Text between `start` and the next occurrence of `end` (or the end).
pub fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let rest = &text[s..];
    Some(match rest.find(end) {
        Some(e) => &rest[..e],
        None => rest,
    })
}

fn genre_of(text: &str) -> Option<&'static str> {
    let lower = text.to_lowercase();
    GENRE_WORDS.iter().find(|(w, _)| lower.contains(w)).map(|(_, g)| *g)
}

fn find_movie(name: &str) -> Option<&'static Movie> {
    let key = normalize_title(name);
    MOVIES.iter().find(|m| normalize_title(m.title) == key)
}

pub fn split_items(s: &str) -> Vec<&str> {
    s.split("; ").map(str::trim).filter(|x| !x.is_empty()).collect()
}

/// Deterministic stand-in for the chat model.
pub fn scripted(req: &ChatRequest) -> Result<String, GatewayError> {
    let user = &req.messages[1].content;
    Ok(match req.template {
        TemplateId::Extract => {
            let utterance = between(user, "Here is the user's query: ", "\u{0}").unwrap();
            extract(utterance.strip_suffix('.').unwrap_or(utterance))
        }
        TemplateId::EntityReflect => {
            let matches = between(user, "extracted_name####fuzzy_match####BM25_match: ", "\u{0}").unwrap();
            let matches = matches.strip_suffix('.').unwrap_or(matches);
            matches
                .split("; ")
                .map(|line| {
                    let f: Vec<&str> = line.split("####").collect();
                    let (raw, fuzzy, bm25) = (f[0], f[1].trim(), f[2].trim());
                    if !bm25.is_empty() && (fuzzy.is_empty() || raw.len() <= 4) {
                        format!("{raw}####{bm25}####BM25")
                    } else if !fuzzy.is_empty() {
                        format!("{raw}####{fuzzy}####fuzzy")
                    } else {
                        format!("{raw}#### ####none")
                    }
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
        TemplateId::ContextReflect => {
            let dialogue = between(user, "Here is the conversation: ", "\nHere are retrieved movies: ").unwrap();
            let items = between(user, "Here are retrieved movies: ", "\u{0}").unwrap();
            let genre = genre_of(dialogue);
            split_items(items.strip_suffix('.').unwrap_or(items))
                .into_iter()
                .map(|t| {
                    let keep = match (genre, find_movie(t)) {
                        (Some(g), Some(m)) => m.genre == g,
                        (None, _) => true,
                        (Some(_), None) => false,
                    };
                    format!("{}####{}", bare(t), keep as u8)
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
        TemplateId::Recommend => {
            let dialogue = between(user, "Here is the conversation: ", "\nBased on movies").unwrap_or_default();
            let dialogue = between(dialogue, "", "\nUse the above").unwrap_or(dialogue);
            let count: usize = between(&req.messages[0].content, "reply with ", " movie recommendations")
                .and_then(|c| c.parse().ok())
                .unwrap_or(20);
            let augmented: Vec<&str> = between(user, &format!("{AUGMENTATION_PRETEXT} "), "\n")
                .map(|a| split_items(a.strip_suffix('.').unwrap_or(a)))
                .unwrap_or_default();
            recommend(dialogue, &augmented, count)
        }
        TemplateId::Rerank => {
            let dialogue = between(user, "Here is the conversation: ", "\nHere are the movie candidates: ").unwrap();
            let items = between(user, "Here are the movie candidates: ", "\u{0}").unwrap();
            let genre = genre_of(dialogue);
            split_items(items.strip_suffix('.').unwrap_or(items))
                .into_iter()
                .map(|t| {
                    let score = match (genre, find_movie(t)) {
                        (Some(g), Some(m)) if m.genre == g && m.star => 2,
                        (Some(g), Some(m)) if m.genre == g => 1,
                        (None, Some(m)) if m.star => 1,
                        (None, _) => 0,
                        _ => -1,
                    };
                    format!("{}####{score}", bare(t))
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
        TemplateId::ColdStartSeeds => {
            let dialogue = between(user, "Here is the conversation: ", "\u{0}").unwrap();
            let genre = genre_of(dialogue).unwrap_or("comedy");
            MOVIES
                .iter()
                .filter(|m| m.genre == genre)
                .take(3)
                .map(|m| bare(m.title))
                .collect::<Vec<_>>()
                .join("\n")
        }
    })
}

fn extract(utterance: &str) -> String {
    let lower = utterance.to_lowercase();
    let mut found: Vec<(usize, String)> = Vec::new();
    let mut taken = vec![false; lower.len()];
    let mut claim = |start: usize, len: usize, name: String, found: &mut Vec<(usize, String)>| {
        if taken[start..start + len].iter().any(|t| *t) {
            return;
        }
        taken[start..start + len].iter_mut().for_each(|t| *t = true);
        found.push((start, name));
    };
    for (surface, name) in SURFACES {
        if let Some(pos) = find_word(&lower, surface) {
            claim(pos, surface.len(), name.to_string(), &mut found);
        }
    }
    let mut by_len: Vec<&Movie> = MOVIES.iter().collect();
    by_len.sort_by_key(|m| std::cmp::Reverse(bare(m.title).len()));
    for m in by_len {
        let name = bare(m.title);
        if let Some(pos) = find_word(&lower, &name.to_lowercase()) {
            claim(pos, name.len(), name.to_string(), &mut found);
        }
    }
    if found.is_empty() {
        return "NO".into();
    }
    found.sort();
    let negative = lower.contains("hated") || lower.contains("didn't like");
    found
        .into_iter()
        .map(|(_, name)| format!("{name}####{}", if negative { -2 } else { 2 }))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Byte offset of `needle` in `hay` at word boundaries.
fn find_word(hay: &str, needle: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(i) = hay[from..].find(needle) {
        let s = from + i;
        let e = s + needle.len();
        let before = hay[..s].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after = hay[e..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before && after {
            return Some(s);
        }
        from = s + 1;
        while !hay.is_char_boundary(from) {
            from += 1;
        }
    }
    None
}

/// Augmented items first, then the genre's titles in table order, skipping
/// anything the dialogue already mentions.
fn recommend(dialogue: &str, augmented: &[&str], count: usize) -> String {
    let lower = dialogue.to_lowercase();
    let genre = genre_of(dialogue).unwrap_or("comedy");
    let mentioned = |t: &str| lower.contains(&bare(t).to_lowercase());
    let mut out: Vec<String> = Vec::new();
    let push = |t: &str, out: &mut Vec<String>| {
        let b = bare(t).to_string();
        if !mentioned(t) && !out.contains(&b) && out.len() < count {
            out.push(b);
        }
    };
    for t in augmented {
        push(t, &mut out);
    }
    for m in MOVIES.iter().filter(|m| m.genre == genre) {
        push(m.title, &mut out);
    }
    if genre == "brazilian" {
        // One title outside the item database, as real generations contain.
        out.push("Tropa de Elite 3".into());
    }
    out.join("\n")
}

/// Fixture configuration. `model` is where `crag fit` writes the weights.
pub fn config_text(dialogues: &std::path::Path, transcript: &std::path::Path, model: &std::path::Path) -> String {
    format!(
        r#"[data]
dialogues = {dialogues:?}
model = {model:?}

[backend]
backend = "replay"
transcript = {transcript:?}
model = "fixture-model"

[cf]
lambda = 5.0

[pipeline]
k = 4
m_rec = 20
"#
    )
}

/// A config pointing at the checked-in fixtures with the model under `dir`.
pub fn temp_config(dir: &std::path::Path) -> PathBuf {
    let fx = fixtures_dir();
    let text = config_text(&fx.join("dialogues.jsonl"), &fx.join("transcript.jsonl"), &dir.join("model.bin"));
    let path = dir.join("crag.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn app_config(dir: &std::path::Path) -> crag::app::AppConfig {
    crag::app::AppConfig::load(&temp_config(dir)).unwrap()
}

/// Engine over the fixture corpus answering from the checked-in transcript.
pub fn replay_engine() -> crag::app::Engine {
    let dir = tempfile::tempdir().unwrap();
    let cfg = app_config(dir.path());
    let gateway = crag::llm_gateway::build_gateway(&cfg.backend).unwrap();
    crag::app::Engine::from_dialogues(cfg, corpus(), gateway).unwrap()
}

/// Engine over the fixture corpus answering from the scripted responder.
pub fn scripted_engine() -> crag::app::Engine {
    let dir = tempfile::tempdir().unwrap();
    let cfg = app_config(dir.path());
    let gateway = crag::llm_gateway::Gateway::from_fn("fixture-model", scripted);
    crag::app::Engine::from_dialogues(cfg, corpus(), gateway).unwrap()
}

/// Free-text queries the replay tests send.
pub const QUERIES: &[&str] = &[
    FIG2_QUERY,
    "Can you suggest a funny movie?",
    "I hated Troll and Pans Labyrinth, give me some horror instead",
    "Anything cult like Martin and Orloff?",
];

/// Retrieval sizes swept in the checked-in transcript.
pub const SWEPT_KS: &[usize] = &[0, 4, 5, 10, 15, 20, 25, 30, 35];

/// Messages of the scripted two-turn service session.
pub const SESSION_SCRIPT: &[&str] = &[FIG2_QUERY, "Thanks! Any comedy like Superbad instead?"];

/// Sends one request to the router and returns the status and JSON body.
pub async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<serde_json::Value>,
) -> (u16, serde_json::Value) {
    use tower::ServiceExt;
    let req = axum::http::Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(axum::body::Body::from(body.map(|b| b.to_string()).unwrap_or_default()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let json = if bytes.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, json)
}

/// Opens a session, sends `texts` in order and returns the responses.
pub async fn drive_session(app: &axum::Router, texts: &[&str]) -> (String, Vec<serde_json::Value>) {
    let (status, created) = call(app, "POST", "/v1/sessions", None).await;
    assert_eq!(status, 201);
    let id = created["session_id"].as_str().unwrap().to_string();
    let mut out = Vec::new();
    for text in texts {
        let (status, body) = call(
            app,
            "POST",
            &format!("/v1/sessions/{id}/messages"),
            Some(serde_json::json!({ "text": text })),
        )
        .await;
        assert_eq!(status, 200, "{body}");
        out.push(body);
    }
    (id, out)
}

pub fn router_for(engine: crag::app::Engine) -> axum::Router {
    let state = std::sync::Arc::new(crag::service::ServiceState::new(std::sync::Arc::new(engine)));
    crag::service::router(state)
}

//! Application wiring shared by the CLI, the HTTP service and the FFI layer.

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

pub use config::{AppConfig, CfConfig, DataConfig, ServiceConfig};

use crate::cf_model::{compute_pop_weights, fit_ease, DateWindow, SimilarityModel};
use crate::corpus::{
    build_interactions, build_item_database, ingest_dialogues, make_eval_records, read_metadata, Dialogue,
    EvalRecord, ItemDatabase, Speaker, Split, Utterance,
};
use crate::entity_link::{extract_and_link, LinkError, LinkOutcome, TitleIndex};
use crate::llm_gateway::{build_gateway, Gateway};
use crate::pipeline::PipelineInputs;
use crate::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Dialogues and the item database derived from them.
pub fn load_corpus(cfg: &AppConfig) -> Result<(Vec<Dialogue>, ItemDatabase)> {
    let dialogues = ingest_dialogues(&cfg.data.dialogues, &cfg.data.ingest_options())?;
    let mut db = build_item_database(&dialogues);
    if let Some(path) = &cfg.data.metadata {
        db = db.with_metadata(&read_metadata(path)?);
    }
    Ok((dialogues, db))
}

#[derive(Serialize, Deserialize)]
struct PopularityFile {
    beta: f64,
    window_days: u32,
    weights: Vec<f64>,
}

/// Fits the similarity model on the training split, attaching popularity
/// weights when `cf.beta > 0`.
pub fn fit_model(cfg: &AppConfig, dialogues: &[Dialogue], db: &ItemDatabase) -> Result<SimilarityModel> {
    let train: Vec<Dialogue> = dialogues.iter().filter(|d| d.split == Split::Train).cloned().collect();
    let r = build_interactions(&train, db, &cfg.policy)?;
    info!(users = r.n_users(), items = r.n_items(), nnz = r.nnz(), lambda = cfg.cf.lambda, "fitting similarity model");
    let mut model = fit_ease(&r, db, cfg.cf.lambda)?;
    if cfg.cf.beta > 0.0 {
        let window = DateWindow::trailing(&train, cfg.cf.pop_window_days);
        let weights = compute_pop_weights(&train, db, &cfg.policy, window);
        model = model.with_popularity(weights, cfg.cf.beta)?;
    }
    Ok(model)
}

pub fn save_model(cfg: &AppConfig, model: &SimilarityModel) -> Result<()> {
    let path = &cfg.data.model;
    let file = File::create(path).map_err(io_err(path))?;
    model.write_to(BufWriter::new(file)).map_err(io_err(path))?;
    let pop_path = cfg.data.popularity_path();
    match model.pop_weights() {
        Some(w) => {
            let body = PopularityFile {
                beta: model.beta(),
                window_days: cfg.cf.pop_window_days,
                weights: w.to_vec(),
            };
            let json = serde_json::to_vec(&body).expect("weights serialize");
            std::fs::write(&pop_path, json).map_err(io_err(&pop_path))?;
        }
        None if pop_path.exists() => std::fs::remove_file(&pop_path).map_err(io_err(&pop_path))?,
        None => {}
    }
    Ok(())
}

pub fn load_model(cfg: &AppConfig, db: &ItemDatabase) -> Result<SimilarityModel> {
    let path = &cfg.data.model;
    let file = File::open(path).map_err(io_err(path))?;
    let mut model = SimilarityModel::read_from(BufReader::new(file), db)?;
    let pop_path = cfg.data.popularity_path();
    if pop_path.exists() {
        let text = std::fs::read(&pop_path).map_err(io_err(&pop_path))?;
        let pop: PopularityFile =
            serde_json::from_slice(&text).map_err(|e| Error::Config(format!("{}: {e}", pop_path.display())))?;
        model = model.with_popularity(pop.weights, pop.beta)?;
    }
    Ok(model)
}

/// Summary of an annotation pass.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationStats {
    pub utterances: usize,
    pub mentions: usize,
    pub llm_calls: usize,
    pub warnings: usize,
    /// Utterances whose extraction reply stayed malformed; they keep no mentions.
    pub malformed: usize,
}

/// Replaces the mentions of every utterance with freshly linked ones.
/// Malformed replies leave the utterance without mentions; backend errors abort.
pub fn annotate_dialogues(
    dialogues: &[Dialogue],
    index: &TitleIndex,
    llm: &Gateway,
) -> Result<(Vec<Dialogue>, AnnotationStats)> {
    let mut stats = AnnotationStats::default();
    let mut out = Vec::with_capacity(dialogues.len());
    for d in dialogues {
        let mut d = d.clone();
        for turn in &mut d.turns {
            stats.utterances += 1;
            match extract_and_link(&turn.text, index, llm) {
                Ok(o) => {
                    stats.llm_calls += o.llm_calls;
                    stats.warnings += o.warnings.len();
                    turn.mentions = o.corpus_mentions(index);
                    stats.mentions += turn.mentions.len();
                }
                Err(e @ LinkError::MalformedCompletion { .. }) => {
                    warn!(dialogue = %d.id, error = %e, "utterance left unannotated");
                    stats.malformed += 1;
                    turn.mentions.clear();
                }
                Err(e) => return Err(e.into()),
            }
        }
        out.push(d);
    }
    Ok((out, stats))
}

/// Everything needed to answer queries.
pub struct Engine {
    pub config: AppConfig,
    pub dialogues: Vec<Dialogue>,
    pub db: ItemDatabase,
    pub index: TitleIndex,
    pub model: SimilarityModel,
    pub gateway: Gateway,
}

impl Engine {
    /// Loads the corpus, the fitted model file and the configured backend.
    pub fn open(config: AppConfig) -> Result<Self> {
        let gateway = build_gateway(&config.backend)?;
        let (dialogues, db) = load_corpus(&config)?;
        let model = load_model(&config, &db)?;
        Ok(Self::assemble(config, dialogues, db, model, gateway))
    }

    /// Builds an engine from in-memory dialogues, fitting the model directly.
    pub fn from_dialogues(config: AppConfig, dialogues: Vec<Dialogue>, gateway: Gateway) -> Result<Self> {
        let db = build_item_database(&dialogues);
        let model = fit_model(&config, &dialogues, &db)?;
        Ok(Self::assemble(config, dialogues, db, model, gateway))
    }

    pub fn assemble(
        config: AppConfig,
        dialogues: Vec<Dialogue>,
        db: ItemDatabase,
        model: SimilarityModel,
        gateway: Gateway,
    ) -> Self {
        let index = TitleIndex::build(&db, config.matcher);
        Self {
            config,
            dialogues,
            db,
            index,
            model,
            gateway,
        }
    }

    pub fn inputs(&self) -> PipelineInputs<'_> {
        PipelineInputs {
            model: &self.model,
            db: &self.db,
            index: &self.index,
            policy: &self.config.policy,
            llm: &self.gateway,
        }
    }

    /// Links `text` and wraps it as a one-turn user dialogue.
    pub fn single_turn(&self, text: &str) -> Result<(Dialogue, LinkOutcome)> {
        let outcome = extract_and_link(text, &self.index, &self.gateway)?;
        let turn = Utterance::new(Speaker::User, text).with_mentions(outcome.corpus_mentions(&self.index));
        let dialogue = Dialogue {
            id: "query".into(),
            date: chrono::Utc::now().date_naive(),
            split: Split::Test,
            turns: vec![turn],
        };
        Ok((dialogue, outcome))
    }

    pub fn split(&self, split: Split) -> Vec<Dialogue> {
        self.dialogues.iter().filter(|d| d.split == split).cloned().collect()
    }

    pub fn eval_records(&self) -> Vec<EvalRecord> {
        make_eval_records(&self.split(Split::Test), &self.db)
    }
}

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, Completion, GatewayError, TemplateId, Usage};

/// One stored exchange, serialized as a single transcript line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub template: TemplateId,
    pub hash: String,
    pub request: ChatRequest,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    #[serde(default)]
    pub latency_ms: u64,
}

/// Exchanges keyed by `(template, request hash)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript {
    entries: BTreeMap<(TemplateId, String), ExchangeRecord>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let err = |message: String| GatewayError::Transcript {
            path: path.to_path_buf(),
            message,
        };
        let file = File::open(path).map_err(|e| err(e.to_string()))?;
        let mut t = Transcript::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExchangeRecord =
                serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", idx + 1)))?;
            t.insert(rec);
        }
        Ok(t)
    }

    pub fn insert(&mut self, rec: ExchangeRecord) {
        self.entries.insert((rec.template, rec.hash.clone()), rec);
    }

    /// Stores `response` as the reply to `request`.
    pub fn insert_reply(&mut self, request: ChatRequest, response: impl Into<String>) {
        self.insert(ExchangeRecord {
            template: request.template,
            hash: request.content_hash(),
            request,
            response: response.into(),
            usage: None,
            latency_ms: 0,
        });
    }

    pub fn get(&self, template: TemplateId, hash: &str) -> Option<&ExchangeRecord> {
        self.entries.get(&(template, hash.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &ExchangeRecord> {
        self.entries.values()
    }

    /// Writes all records sorted by key, one JSON object per line.
    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        for rec in self.entries.values() {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let file = File::create(path).map_err(|e| GatewayError::Transcript {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        self.write_to(file).map_err(|e| GatewayError::Transcript {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Strict replay: every request must have a stored exchange.
pub struct ReplayBackend {
    transcript: Transcript,
}

impl ReplayBackend {
    pub fn new(transcript: Transcript) -> Self {
        Self { transcript }
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let hash = request.content_hash();
        match self.transcript.get(request.template, &hash) {
            Some(rec) => Ok(Completion {
                text: rec.response.clone(),
                usage: rec.usage,
                latency_ms: rec.latency_ms,
            }),
            None => Err(GatewayError::ReplayMiss {
                template: request.template,
                hash,
            }),
        }
    }
}

struct RecordState {
    seen: Transcript,
    sink: Option<(PathBuf, BufWriter<File>)>,
}

/// Forwards to an inner backend and persists each new exchange. Requests
/// already present in the transcript are answered from it.
pub struct RecordingBackend<B> {
    inner: B,
    state: Mutex<RecordState>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    /// Appends to `path`, reusing any exchanges it already holds.
    pub fn open(inner: B, path: &Path) -> Result<Self, GatewayError> {
        let seen = if path.exists() {
            Transcript::load(path)?
        } else {
            Transcript::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Transcript {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        Ok(Self {
            inner,
            state: Mutex::new(RecordState {
                seen,
                sink: Some((path.to_path_buf(), BufWriter::new(file))),
            }),
        })
    }

    /// Records into memory only; see [`RecordingBackend::transcript`].
    pub fn in_memory(inner: B) -> Self {
        Self {
            inner,
            state: Mutex::new(RecordState {
                seen: Transcript::new(),
                sink: None,
            }),
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).seen.clone()
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let hash = request.content_hash();
        {
            let state = self.state.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(rec) = state.seen.get(request.template, &hash) {
                return Ok(Completion {
                    text: rec.response.clone(),
                    usage: rec.usage,
                    latency_ms: rec.latency_ms,
                });
            }
        }
        let completion = self.inner.complete(request)?;
        let rec = ExchangeRecord {
            template: request.template,
            hash,
            request: request.clone(),
            response: completion.text.clone(),
            usage: completion.usage,
            latency_ms: completion.latency_ms,
        };
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if state.seen.get(rec.template, &rec.hash).is_none() {
            if let Some((path, sink)) = state.sink.as_mut() {
                let line = serde_json::to_string(&rec).expect("exchange serializes");
                writeln!(sink, "{line}")
                    .and_then(|_| sink.flush())
                    .map_err(|e| GatewayError::Transcript {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
            }
            state.seen.insert(rec);
        }
        Ok(completion)
    }

    fn is_live(&self) -> bool {
        self.inner.is_live()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{FnBackend, Gateway, Slots};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn replay_hit_is_byte_identical_and_miss_names_key() {
        let probe = Gateway::from_fn("m", |_| Ok(String::new()));
        let slots = Slots::new().with("utterance", "I loved Troll");
        let req = probe.request(TemplateId::Extract, &slots).unwrap();
        let mut t = Transcript::new();
        let reply = "Troll####2\n  trailing spaces  \n";
        t.insert_reply(req.clone(), reply);
        let replay = ReplayBackend::new(t);
        assert_eq!(replay.complete(&req).unwrap().text, reply);

        let other = probe
            .request(TemplateId::Extract, &Slots::new().with("utterance", "nothing"))
            .unwrap();
        match replay.complete(&other) {
            Err(GatewayError::ReplayMiss { template, hash }) => {
                assert_eq!(template, TemplateId::Extract);
                assert_eq!(hash, other.content_hash());
            }
            r => panic!("unexpected {r:?}"),
        }
    }

    #[test]
    fn recording_persists_and_replays_across_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let inner = FnBackend(move |r: &ChatRequest| {
            c.fetch_add(1, Ordering::SeqCst);
            Ok(format!("reply to {}", r.template))
        });
        let rec = Arc::new(RecordingBackend::open(inner, &path).unwrap());
        let gw = Gateway::new(rec.clone(), "m");
        let slots = Slots::new().with("utterance", "x");
        let first = gw.complete(TemplateId::Extract, &slots).unwrap();
        let again = gw.complete(TemplateId::Extract, &slots).unwrap();
        assert_eq!(first, again);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        drop(gw);
        drop(rec);

        let loaded = Transcript::load(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        let replay = Gateway::new(Arc::new(ReplayBackend::new(loaded)), "m");
        assert_eq!(replay.complete(TemplateId::Extract, &slots).unwrap(), first);
    }

    #[test]
    fn save_and_load_round_trip() {
        let gw = Gateway::from_fn("m", |_| Ok(String::new()));
        let mut t = Transcript::new();
        for i in 0..5 {
            let req = gw
                .request(TemplateId::Extract, &Slots::new().with("utterance", i.to_string()))
                .unwrap();
            t.insert_reply(req, format!("r{i}"));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        t.save(&path).unwrap();
        assert_eq!(Transcript::load(&path).unwrap(), t);
    }
}

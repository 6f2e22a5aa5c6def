use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dialogue, Mention, Speaker, Split, Utterance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// Reddit-v2: splits come from the record field or, when absent, from the
    /// start month (last month = test, the month before = validation).
    RedditV2,
    /// Redial: splits come from the record field or [`IngestOptions::default_split`];
    /// a trailing fraction of training dialogues may be held out for validation.
    Redial,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestOptions {
    pub format: DatasetFormat,
    /// Split given to records without a `split` field (Redial only).
    pub default_split: Option<Split>,
    /// Fraction of Redial training dialogues (by file order, taken from the end)
    /// reassigned to validation.
    pub redial_valid_fraction: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            format: DatasetFormat::RedditV2,
            default_split: None,
            redial_valid_fraction: 0.0,
        }
    }
}

impl IngestOptions {
    pub fn new(format: DatasetFormat) -> Self {
        Self {
            format,
            ..Self::default()
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    date: String,
    #[serde(default)]
    split: Option<Split>,
    turns: Vec<RawTurn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTurn {
    speaker: String,
    text: String,
    #[serde(default)]
    mentions: Option<Vec<Mention>>,
}

pub fn ingest_dialogues(path: &Path, opts: &IngestOptions) -> Result<Vec<Dialogue>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dialogues(BufReader::new(file), opts)
}

/// Parses line-delimited dialogue records. Blank lines are skipped.
pub fn parse_dialogues<R: BufRead>(reader: R, opts: &IngestOptions) -> Result<Vec<Dialogue>, CorpusError> {
    let mut dialogues = Vec::new();
    let mut missing_split = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let date = NaiveDate::parse_from_str(&raw.date, "%Y-%m-%d").map_err(|e| CorpusError::InvalidRecord {
            line: line_no,
            reason: format!("bad date {:?}: {e}", raw.date),
        })?;
        if raw.turns.is_empty() {
            return Err(CorpusError::InvalidRecord {
                line: line_no,
                reason: "dialogue has no turns".into(),
            });
        }
        let mut turns = Vec::with_capacity(raw.turns.len());
        for turn in raw.turns {
            let speaker = Speaker::parse(&turn.speaker).ok_or_else(|| CorpusError::UnknownSpeaker {
                line: line_no,
                tag: turn.speaker.clone(),
            })?;
            if turn.text.trim().is_empty() {
                return Err(CorpusError::InvalidRecord {
                    line: line_no,
                    reason: "empty utterance text".into(),
                });
            }
            let mentions = turn.mentions.unwrap_or_default();
            if let Some(bad) = mentions.iter().find(|m| !(-2..=2).contains(&m.attitude) || m.item.trim().is_empty()) {
                return Err(CorpusError::InvalidRecord {
                    line: line_no,
                    reason: format!("invalid mention {:?} (attitude {})", bad.item, bad.attitude),
                });
            }
            turns.push(Utterance {
                speaker,
                text: turn.text,
                mentions,
            });
        }
        let split = match raw.split {
            Some(s) => s,
            None => {
                missing_split.push(dialogues.len());
                Split::Train
            }
        };
        dialogues.push(Dialogue {
            id: raw.id,
            date,
            split,
            turns,
        });
    }

    match opts.format {
        DatasetFormat::RedditV2 => {
            if let Some(default) = opts.default_split {
                for &i in &missing_split {
                    dialogues[i].split = default;
                }
            } else {
                let months = assign_splits_by_month(missing_split.iter().map(|&i| dialogues[i].date));
                for (&i, split) in missing_split.iter().zip(months) {
                    dialogues[i].split = split;
                }
            }
        }
        DatasetFormat::Redial => {
            let default = opts.default_split.unwrap_or(Split::Train);
            for &i in &missing_split {
                dialogues[i].split = default;
            }
            let train: Vec<usize> = (0..dialogues.len())
                .filter(|&i| dialogues[i].split == Split::Train)
                .collect();
            let n_valid = (train.len() as f64 * opts.redial_valid_fraction.clamp(0.0, 1.0)).round() as usize;
            for &i in &train[train.len() - n_valid..] {
                dialogues[i].split = Split::Valid;
            }
        }
    }
    Ok(dialogues)
}

/// Month rule: dialogues starting in the final calendar month are test, those in
/// the calendar month before it are validation, the rest are training.
pub fn assign_splits_by_month(dates: impl IntoIterator<Item = NaiveDate>) -> Vec<Split> {
    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let Some(last) = dates.iter().map(|d| (d.year(), d.month())).max() else {
        return Vec::new();
    };
    let prev = if last.1 == 1 { (last.0 - 1, 12) } else { (last.0, last.1 - 1) };
    dates
        .iter()
        .map(|d| {
            let ym = (d.year(), d.month());
            if ym == last {
                Split::Test
            } else if ym == prev {
                Split::Valid
            } else {
                Split::Train
            }
        })
        .collect()
}

pub fn write_dialogues<W: Write>(writer: W, dialogues: &[Dialogue]) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for d in dialogues {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads the `{"title": str, "year": int}` metadata sidecar.
pub fn read_metadata(path: &Path) -> Result<Vec<super::ItemMetadata>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

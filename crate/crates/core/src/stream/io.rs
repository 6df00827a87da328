//! JSON Lines stream files and tab-separated lexicon files.
//!
//! A stream file starts with one header object followed by one record per
//! note:
//!
//! ```text
//! {"format":"e2mc-stream","version":1,"num_tasks":2,"records":3,"char_vocab":["a",...],
//!  "lexicon":[["rash","symptom"],...],"labels":[{"name":"dermatitis","task":1},...]}
//! {"text":"rash on scalp","entities":["rash","scalp"],"label":"dermatitis","task":1,"split":"train","id":"n1"}
//! ```
//!
//! Only `format` and `version` are required in the header; missing
//! vocabularies are rebuilt from the records (characters from training text,
//! entities from the `entities` lists), and records without `entities` are
//! run through the lexicon.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::split::make_note;
use super::{CharVocab, EntityLexicon, RawRecord, Task, TaskStream};
use crate::error::{Error, Result};

pub const STREAM_FORMAT: &str = "e2mc-stream";
pub const STREAM_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LabelEntry {
    name: String,
    task: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_tasks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    records: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    char_vocab: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lexicon: Option<Vec<(String, String)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<LabelEntry>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entities: Option<Vec<String>>,
    label: String,
    task: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

pub fn write_stream<W: Write>(stream: &TaskStream, mut out: W) -> Result<()> {
    stream.validate()?;
    let mut label_task = vec![0; stream.label_names.len()];
    for t in &stream.tasks {
        for &l in &t.labels {
            label_task[l] = t.id;
        }
    }
    let header = Header {
        format: STREAM_FORMAT.into(),
        version: STREAM_VERSION,
        num_tasks: Some(stream.num_tasks()),
        records: Some(stream.tasks.iter().map(|t| t.train.len() + t.test.len()).sum()),
        char_vocab: Some(stream.char_vocab.chars().iter().map(|c| c.to_string()).collect()),
        lexicon: Some(
            stream
                .lexicon
                .entries()
                .iter()
                .map(|e| (e.surface.clone(), e.entity_type.clone()))
                .collect(),
        ),
        labels: Some(
            stream
                .label_names
                .iter()
                .zip(&label_task)
                .map(|(n, &t)| LabelEntry { name: n.clone(), task: t })
                .collect(),
        ),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for t in &stream.tasks {
        for (split, notes) in [("train", &t.train), ("test", &t.test)] {
            for n in notes {
                let rec = Record {
                    text: n.text.clone(),
                    entities: Some(n.entity_ids.iter().map(|&e| stream.lexicon.surface(e).to_string()).collect()),
                    label: stream.label_names[n.label].clone(),
                    task: t.id,
                    split: Some(split.into()),
                    id: Some(n.source_id.clone()),
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_stream(stream: &TaskStream, path: impl AsRef<Path>) -> Result<()> {
    write_stream(stream, BufWriter::new(File::create(path)?))
}

pub fn load_stream(path: impl AsRef<Path>) -> Result<TaskStream> {
    read_stream(BufReader::new(File::open(path)?))
}

#[derive(Default)]
struct LabelBinder {
    task_of: HashMap<String, usize>,
    order: Vec<(String, usize)>,
}

impl LabelBinder {
    fn bind(&mut self, name: &str, task: usize, line: usize) -> Result<()> {
        match self.task_of.get(name) {
            Some(&t) if t != task => Err(Error::Validation(format!(
                "label `{name}` is assigned to tasks {t} and {task} (line {line}); label sets must be pairwise disjoint"
            ))),
            Some(_) => Ok(()),
            None => {
                self.task_of.insert(name.to_string(), task);
                self.order.push((name.to_string(), task));
                Ok(())
            }
        }
    }
}

fn parse_err(line: usize, msg: impl ToString) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

pub fn read_stream<R: BufRead>(reader: R) -> Result<TaskStream> {
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(parse_err(1, "missing header")),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e))?;
            }
        }
    };
    if header.format != STREAM_FORMAT {
        return Err(parse_err(1, format!("unknown format `{}`", header.format)));
    }
    if header.version != STREAM_VERSION {
        return Err(parse_err(1, format!("unsupported version {}", header.version)));
    }

    let mut records: Vec<(usize, Record)> = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e))?;
        if let Some(s) = &rec.split {
            if s != "train" && s != "test" {
                return Err(parse_err(i + 1, format!("split must be `train` or `test`, got `{s}`")));
            }
        }
        if rec.task == 0 {
            return Err(parse_err(i + 1, "task ids are 1-based"));
        }
        records.push((i + 1, rec));
    }
    if let Some(n) = header.records {
        if n != records.len() {
            return Err(parse_err(
                records.last().map_or(1, |r| r.0),
                format!("header declares {n} records but the file holds {} (truncated?)", records.len()),
            ));
        }
    }

    let num_tasks = header
        .num_tasks
        .unwrap_or_else(|| records.iter().map(|(_, r)| r.task).max().unwrap_or(0));
    if num_tasks == 0 {
        return Err(Error::EmptyInput("stream has no tasks"));
    }

    // label name -> task, checked for disjointness
    let mut binder = LabelBinder::default();
    if let Some(labels) = &header.labels {
        for l in labels {
            binder.bind(&l.name, l.task, 1)?;
        }
    }
    for (line, r) in &records {
        if header.labels.is_some() && !binder.task_of.contains_key(&r.label) {
            return Err(parse_err(*line, format!("label `{}` missing from header", r.label)));
        }
        binder.bind(&r.label, r.task, *line)?;
    }
    let label_task = binder.order;
    if let Some((name, t)) = label_task.iter().find(|(_, t)| *t > num_tasks) {
        return Err(Error::Validation(format!("label `{name}` assigned to task {t} beyond num_tasks {num_tasks}")));
    }

    // class ids: task order, then header/first-appearance order
    let mut label_names = Vec::new();
    let mut label_id = HashMap::new();
    let mut tasks: Vec<Task> = (1..=num_tasks)
        .map(|id| Task {
            id,
            labels: Vec::new(),
            train: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for k in 1..=num_tasks {
        for (name, _) in label_task.iter().filter(|(_, t)| *t == k) {
            label_id.insert(name.clone(), label_names.len());
            tasks[k - 1].labels.push(label_names.len());
            label_names.push(name.clone());
        }
    }

    let char_vocab = match &header.char_vocab {
        Some(chars) => {
            let mut cs = Vec::with_capacity(chars.len());
            for s in chars {
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => cs.push(c),
                    _ => return Err(parse_err(1, format!("char_vocab entry `{s}` is not a single character"))),
                }
            }
            CharVocab::from_chars(cs)
        }
        None => CharVocab::build(
            records
                .iter()
                .filter(|(_, r)| r.split.as_deref() != Some("test"))
                .map(|(_, r)| r.text.as_str()),
        ),
    };
    let lexicon = match &header.lexicon {
        Some(entries) => {
            let mut lex = EntityLexicon::new();
            for (s, t) in entries {
                lex.insert(s, t).map_err(|e| parse_err(1, e))?;
            }
            lex
        }
        None => {
            let mut lex = EntityLexicon::new();
            for (line, r) in &records {
                for e in r.entities.iter().flatten() {
                    lex.insert(e, "entity").map_err(|err| parse_err(*line, err))?;
                }
            }
            lex
        }
    };

    for (line, r) in records {
        let label = label_id[&r.label];
        let raw = RawRecord {
            text: r.text,
            label: r.label,
            source_id: r.id.unwrap_or_else(|| format!("line-{line}")),
            entities: r.entities,
        };
        let note = make_note(&raw, label, &char_vocab, &lexicon).map_err(|e| match e {
            Error::Validation(m) | Error::Config(m) => parse_err(line, m),
            Error::EmptyInput(m) => parse_err(line, format!("empty {m}")),
            other => other,
        })?;
        let task = &mut tasks[r.task - 1];
        if r.split.as_deref() == Some("test") {
            task.test.push(note);
        } else {
            task.train.push(note);
        }
    }
    let stream = TaskStream {
        tasks,
        char_vocab,
        lexicon,
        label_names,
    };
    stream.validate()?;
    Ok(stream)
}

/// Reads `surface<TAB>type` lines; blank lines and `#` comments are skipped.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<EntityLexicon> {
    let mut lex = EntityLexicon::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(t), None) if !s.trim().is_empty() && !t.trim().is_empty() => {
                lex.insert(s, t.trim()).map_err(|e| parse_err(i + 1, e))?;
            }
            _ => return Err(parse_err(i + 1, "expected `surface<TAB>type`")),
        }
    }
    Ok(lex)
}

pub fn save_lexicon(lexicon: &EntityLexicon, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for e in lexicon.entries() {
        writeln!(out, "{}\t{}", e.surface, e.entity_type)?;
    }
    out.flush()?;
    Ok(())
}

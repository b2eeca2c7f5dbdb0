//! Input corpora: multi-label conversation trees and binary-choice records.
//!
//! Two JSONL shapes are accepted. Multi-label records form a conversation
//! forest (each record may name a parent) and carry a map of label scores in
//! `[0, 1]`. Choice records are fill-in-the-blank sentences with two options
//! and the index of the correct one. Parsing validates all structural
//! invariants up front so later stages can assume clean data.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default fill-in-the-blank marker for choice sentences.
pub const DEFAULT_BLANK_MARKER: &str = "_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Prompter,
    Assistant,
}

/// One message in a conversation tree, scored on zero or more label axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelRecord {
    pub id: String,
    pub parent_id: Option<String>,
    pub role: Role,
    pub text: String,
    pub labels: BTreeMap<String, f64>,
}

/// A fill-in-the-blank prompt with two candidate completions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoicePairRecord {
    pub id: String,
    pub sentence: String,
    pub option0: String,
    pub option1: String,
    pub answer_index: u8,
}

impl ChoicePairRecord {
    pub fn correct_option(&self) -> &str {
        if self.answer_index == 0 {
            &self.option0
        } else {
            &self.option1
        }
    }

    pub fn incorrect_option(&self) -> &str {
        if self.answer_index == 0 {
            &self.option1
        } else {
            &self.option0
        }
    }
}

/// One response hanging off a prompt in the conversation forest.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseEntry {
    pub id: String,
    pub text: String,
    pub labels: BTreeMap<String, f64>,
}

/// A prompt together with all of its direct responses (children).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptWithResponses {
    pub prompt_id: String,
    pub prompt_text: String,
    pub responses: Vec<ResponseEntry>,
}

/// Parse output plus the count of ignored unknown keys.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub unknown_keys: usize,
}

#[derive(Deserialize)]
struct RawMultiLabel {
    id: String,
    #[serde(default)]
    parent_id: Option<String>,
    role: Role,
    text: String,
    #[serde(default)]
    labels: BTreeMap<String, f64>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct RawChoice {
    id: String,
    sentence: String,
    option0: String,
    option1: String,
    answer_index: i64,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

pub fn parse_multilabel(path: &Path) -> Result<Parsed<MultiLabelRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_multilabel_reader(BufReader::new(file), &path.display().to_string())
}

pub fn parse_multilabel_reader<R: Read>(
    reader: BufReader<R>,
    source: &str,
) -> Result<Parsed<MultiLabelRecord>> {
    let mut records = Vec::new();
    let mut unknown_keys = 0usize;
    let mut lines_of: Vec<u64> = Vec::new();

    for (line_no, line) in numbered_lines(reader, source)? {
        let raw: RawMultiLabel = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source, line_no, format!("malformed record: {e}")))?;
        unknown_keys += raw.extra.len();

        if raw.text.is_empty() {
            return Err(Error::parse(source, line_no, "empty text"));
        }
        for (label, score) in &raw.labels {
            if !score.is_finite() || !(0.0..=1.0).contains(score) {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("label '{label}': score outside [0,1]: {score}"),
                ));
            }
        }

        records.push(MultiLabelRecord {
            id: raw.id,
            parent_id: raw.parent_id,
            role: raw.role,
            text: raw.text,
            labels: raw.labels,
        });
        lines_of.push(line_no);
    }

    validate_forest(&records, &lines_of, source)?;
    Ok(Parsed {
        records,
        unknown_keys,
    })
}

fn validate_forest(records: &[MultiLabelRecord], lines_of: &[u64], source: &str) -> Result<()> {
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        if index.insert(rec.id.as_str(), i).is_some() {
            return Err(Error::parse(
                source,
                lines_of[i],
                format!("duplicate id '{}'", rec.id),
            ));
        }
    }
    for (i, rec) in records.iter().enumerate() {
        if let Some(parent) = &rec.parent_id {
            if !index.contains_key(parent.as_str()) {
                return Err(Error::parse(
                    source,
                    lines_of[i],
                    format!("dangling parent_id '{parent}'"),
                ));
            }
        }
    }

    // Cycle detection over parent links: 0 = unvisited, 1 = on current walk,
    // 2 = known acyclic.
    let mut state = vec![0u8; records.len()];
    for start in 0..records.len() {
        if state[start] != 0 {
            continue;
        }
        let mut walk = Vec::new();
        let mut cur = start;
        loop {
            if state[cur] == 1 {
                return Err(Error::parse(
                    source,
                    lines_of[cur],
                    format!("parent cycle involving id '{}'", records[cur].id),
                ));
            }
            if state[cur] == 2 {
                break;
            }
            state[cur] = 1;
            walk.push(cur);
            match &records[cur].parent_id {
                Some(p) => cur = index[p.as_str()],
                None => break,
            }
        }
        for i in walk {
            state[i] = 2;
        }
    }
    Ok(())
}

pub fn parse_choice(path: &Path, blank_marker: &str) -> Result<Parsed<ChoicePairRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_choice_reader(BufReader::new(file), &path.display().to_string(), blank_marker)
}

pub fn parse_choice_reader<R: Read>(
    reader: BufReader<R>,
    source: &str,
    blank_marker: &str,
) -> Result<Parsed<ChoicePairRecord>> {
    if blank_marker.is_empty() {
        return Err(Error::config("blank marker must be non-empty"));
    }
    let mut records = Vec::new();
    let mut unknown_keys = 0usize;
    let mut seen_ids: HashSet<String> = HashSet::new();

    for (line_no, line) in numbered_lines(reader, source)? {
        let raw: RawChoice = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source, line_no, format!("malformed record: {e}")))?;
        unknown_keys += raw.extra.len();

        let markers = raw.sentence.matches(blank_marker).count();
        if markers != 1 {
            return Err(Error::parse(
                source,
                line_no,
                format!("sentence must contain exactly one '{blank_marker}', found {markers}"),
            ));
        }
        if raw.option0 == raw.option1 {
            return Err(Error::parse(source, line_no, "option0 equals option1"));
        }
        if raw.answer_index != 0 && raw.answer_index != 1 {
            return Err(Error::parse(
                source,
                line_no,
                format!("answer_index must be 0 or 1, got {}", raw.answer_index),
            ));
        }
        if !seen_ids.insert(raw.id.clone()) {
            return Err(Error::parse(
                source,
                line_no,
                format!("duplicate id '{}'", raw.id),
            ));
        }

        records.push(ChoicePairRecord {
            id: raw.id,
            sentence: raw.sentence,
            option0: raw.option0,
            option1: raw.option1,
            answer_index: raw.answer_index as u8,
        });
    }

    Ok(Parsed {
        records,
        unknown_keys,
    })
}

fn numbered_lines<R: Read>(reader: BufReader<R>, source: &str) -> Result<Vec<(u64, String)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((line_no, line));
    }
    Ok(out)
}

/// Groups each prompt (any record with at least one child) with its direct
/// responses. Records with no children produce no group; a mid-tree record
/// appears both as a response in its parent's group and as the prompt of its
/// own group.
pub fn link_prompt_responses(records: &[MultiLabelRecord]) -> Vec<PromptWithResponses> {
    let mut children: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, rec) in records.iter().enumerate() {
        if let Some(parent) = &rec.parent_id {
            children.entry(parent.as_str()).or_default().push(i);
        }
    }

    let mut groups = Vec::new();
    for rec in records {
        let Some(child_idx) = children.get(rec.id.as_str()) else {
            continue;
        };
        let responses = child_idx
            .iter()
            .map(|&i| ResponseEntry {
                id: records[i].id.clone(),
                text: records[i].text.clone(),
                labels: records[i].labels.clone(),
            })
            .collect();
        groups.push(PromptWithResponses {
            prompt_id: rec.id.clone(),
            prompt_text: rec.text.clone(),
            responses,
        });
    }
    groups
}

pub fn multilabel_to_jsonl(records: &[MultiLabelRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes"))
        .fold(String::new(), |mut acc, line| {
            acc.push_str(&line);
            acc.push('\n');
            acc
        })
}

pub fn choice_to_jsonl(records: &[ChoicePairRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes"))
        .fold(String::new(), |mut acc, line| {
            acc.push_str(&line);
            acc.push('\n');
            acc
        })
}

//! Unification of heterogeneous feedback into one homogeneous corpus.
//!
//! Multi-label score vectors are expanded axis-by-axis into ±1 labeled
//! examples via a cutoff (fixed threshold, median, or first/third quartiles),
//! and binary-choice records become either two ±1 examples or one preference
//! pair. The union of the per-source parts, with exact duplicates collapsed,
//! is the training corpus everything downstream consumes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ChoicePairRecord, PromptWithResponses};
use crate::emit::render_choice;
use crate::error::{Error, Result};

/// Which input family a unified record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Multilabel,
    Choice,
}

/// Whether a high score on an axis marks the preferred response or the
/// dispreferred one (e.g. quality vs. toxicity).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    HigherIsPositive,
    LowerIsPositive,
}

/// An axis to expand, together with its polarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub name: String,
    pub polarity: Polarity,
}

/// How real-valued scores in `[0,1]` are cut into ±1 labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffStrategy {
    /// `score > delta` is positive, everything else negative.
    Threshold { delta: f64 },
    /// Strictly above the median is positive; at or below is negative.
    Median,
    /// At or above Q3 is positive, at or below Q1 negative, the middle band
    /// is discarded. Quartiles are nearest-order-statistic (type-1).
    Quartiles,
}

/// Scope over which median/quartile statistics are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffScope {
    Group,
    Corpus,
}

/// A `(prompt, response)` with a ±1 reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub prompt: String,
    pub response: String,
    pub reward: i8,
    pub source: Source,
    pub axis: Option<String>,
    pub prompt_id: String,
}

/// A `(prompt, chosen, rejected)` preference with a quality margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub margin: f64,
    pub source: Source,
    pub axis: Option<String>,
    /// Empty when read from a training file that omits provenance.
    #[serde(default)]
    pub prompt_id: String,
}

/// A cutoff with its statistics already resolved against a score population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedCutoff {
    Threshold(f64),
    /// `score >= q3` is positive, `score <= q1` negative, between is dropped.
    Band { q1: f64, q3: f64 },
}

impl ResolvedCutoff {
    /// ±1 label for one score, before any polarity flip. `None` means the
    /// score falls in the discarded quartile band.
    fn raw_label(&self, score: f64) -> Option<i8> {
        match *self {
            ResolvedCutoff::Threshold(delta) => Some(if score > delta { 1 } else { -1 }),
            ResolvedCutoff::Band { q1, q3 } => {
                if score >= q3 {
                    Some(1)
                } else if score <= q1 {
                    Some(-1)
                } else {
                    None
                }
            }
        }
    }

    pub fn label(&self, score: f64, polarity: Polarity) -> Option<i8> {
        let raw = self.raw_label(score)?;
        Some(match polarity {
            Polarity::HigherIsPositive => raw,
            Polarity::LowerIsPositive => -raw,
        })
    }
}

/// Resolves a strategy's statistics over the population of `scores`.
///
/// Median of an even-length list is the mean of the two central order
/// statistics. Quartiles are type-1 (nearest order statistic): the `p`th
/// quantile of a sorted list of length `n` is element `ceil(n*p)` (1-based).
pub fn resolve_cutoff(strategy: CutoffStrategy, scores: &[f64]) -> Result<ResolvedCutoff> {
    check_finite(scores)?;
    match strategy {
        CutoffStrategy::Threshold { delta } => {
            if !delta.is_finite() {
                return Err(Error::config("threshold delta must be finite"));
            }
            Ok(ResolvedCutoff::Threshold(delta))
        }
        CutoffStrategy::Median => {
            if scores.is_empty() {
                return Err(Error::data("median cutoff undefined on empty score list"));
            }
            let sorted = sorted_copy(scores);
            Ok(ResolvedCutoff::Threshold(median_of_sorted(&sorted)))
        }
        CutoffStrategy::Quartiles => {
            if scores.is_empty() {
                return Err(Error::data(
                    "quartile cutoff undefined on empty score list",
                ));
            }
            let sorted = sorted_copy(scores);
            Ok(ResolvedCutoff::Band {
                q1: type1_quantile(&sorted, 0.25),
                q3: type1_quantile(&sorted, 0.75),
            })
        }
    }
}

/// Cuts each score into `+1`, `-1`, or `None` (discarded), with the
/// median/quartile statistics computed over `scores` itself.
pub fn binarize(
    scores: &[f64],
    strategy: CutoffStrategy,
    polarity: Polarity,
) -> Result<Vec<Option<i8>>> {
    if scores.is_empty() && matches!(strategy, CutoffStrategy::Threshold { .. }) {
        return Ok(Vec::new());
    }
    let cutoff = resolve_cutoff(strategy, scores)?;
    Ok(scores.iter().map(|&s| cutoff.label(s, polarity)).collect())
}

fn check_finite(scores: &[f64]) -> Result<()> {
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::data(format!("non-finite score {bad}")));
    }
    Ok(())
}

fn sorted_copy(scores: &[f64]) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn type1_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let idx = ((n as f64 * p).ceil() as usize).max(1);
    sorted[idx - 1]
}

fn axis_scores(group: &PromptWithResponses, axis: &str) -> Result<Vec<f64>> {
    group
        .responses
        .iter()
        .map(|r| {
            r.labels.get(axis).copied().ok_or_else(|| {
                Error::data(format!("response '{}' missing axis '{axis}'", r.id))
            })
        })
        .collect()
}

/// Expands one prompt group into ±1 examples, one per (axis, response) whose
/// binarized label survives. Median/quartile statistics are computed over
/// this group's own scores; see [`unify_multilabel`] for corpus scope.
pub fn expand_multilabel(
    group: &PromptWithResponses,
    axes: &[AxisSpec],
    strategy: CutoffStrategy,
) -> Result<Vec<LabeledExample>> {
    let mut cutoffs = BTreeMap::new();
    for axis in axes {
        let scores = axis_scores(group, &axis.name)?;
        cutoffs.insert(axis.name.clone(), resolve_cutoff(strategy, &scores)?);
    }
    expand_multilabel_with_cutoffs(group, axes, &cutoffs)
}

/// Expands one prompt group against externally resolved per-axis cutoffs.
pub fn expand_multilabel_with_cutoffs(
    group: &PromptWithResponses,
    axes: &[AxisSpec],
    cutoffs: &BTreeMap<String, ResolvedCutoff>,
) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for axis in axes {
        let cutoff = cutoffs
            .get(&axis.name)
            .ok_or_else(|| Error::data(format!("no cutoff resolved for axis '{}'", axis.name)))?;
        let scores = axis_scores(group, &axis.name)?;
        for (response, &score) in group.responses.iter().zip(&scores) {
            if let Some(reward) = cutoff.label(score, axis.polarity) {
                out.push(LabeledExample {
                    prompt: group.prompt_text.clone(),
                    response: response.text.clone(),
                    reward,
                    source: Source::Multilabel,
                    axis: Some(axis.name.clone()),
                    prompt_id: group.prompt_id.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Expands every group, computing median/quartile statistics either per
/// group or once over the whole corpus per axis.
pub fn unify_multilabel(
    groups: &[PromptWithResponses],
    axes: &[AxisSpec],
    strategy: CutoffStrategy,
    scope: CutoffScope,
) -> Result<Vec<LabeledExample>> {
    match scope {
        CutoffScope::Group => {
            let mut out = Vec::new();
            for group in groups {
                out.extend(expand_multilabel(group, axes, strategy)?);
            }
            Ok(out)
        }
        CutoffScope::Corpus => {
            let mut cutoffs = BTreeMap::new();
            for axis in axes {
                let mut scores = Vec::new();
                for group in groups {
                    scores.extend(axis_scores(group, &axis.name)?);
                }
                cutoffs.insert(axis.name.clone(), resolve_cutoff(strategy, &scores)?);
            }
            let mut out = Vec::new();
            for group in groups {
                out.extend(expand_multilabel_with_cutoffs(group, axes, &cutoffs)?);
            }
            Ok(out)
        }
    }
}

/// Converts one choice record into two ±1 examples: the sentence filled with
/// the correct option gets `+1`, with the incorrect option `-1`.
pub fn expand_choice(
    record: &ChoicePairRecord,
    blank_marker: &str,
) -> Result<[LabeledExample; 2]> {
    let make = |option: &str, reward: i8| -> Result<LabeledExample> {
        Ok(LabeledExample {
            prompt: render_choice(&record.sentence, option, blank_marker)?,
            response: option.to_owned(),
            reward,
            source: Source::Choice,
            axis: None,
            prompt_id: record.id.clone(),
        })
    };
    Ok([
        make(&record.option0, if record.answer_index == 0 { 1 } else { -1 })?,
        make(&record.option1, if record.answer_index == 1 { 1 } else { -1 })?,
    ])
}

/// Converts one choice record into a preference pair: correct option filled
/// in is chosen, the other rejected. Binary supervision carries no
/// magnitude, so the margin is fixed at 1.0.
pub fn choice_to_preference(record: &ChoicePairRecord, blank_marker: &str) -> Result<PreferencePair> {
    Ok(PreferencePair {
        prompt: record.sentence.clone(),
        chosen: render_choice(&record.sentence, record.correct_option(), blank_marker)?,
        rejected: render_choice(&record.sentence, record.incorrect_option(), blank_marker)?,
        margin: 1.0,
        source: Source::Choice,
        axis: None,
        prompt_id: record.id.clone(),
    })
}

/// Counts reported by [`union_pairs`] / [`union_examples`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnionReport {
    pub total: usize,
    pub per_source: BTreeMap<Source, usize>,
    pub duplicates_removed: usize,
}

fn union_by_key<T: Clone, K: Ord>(parts: &[Vec<T>], key: impl Fn(&T) -> K) -> (Vec<T>, usize) {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut duplicates = 0usize;
    for part in parts {
        for item in part {
            if seen.insert(key(item)) {
                out.push(item.clone());
            } else {
                duplicates += 1;
            }
        }
    }
    (out, duplicates)
}

/// Set union of preference-pair parts. Exact duplicates (same prompt,
/// chosen, rejected, axis) collapse to the first occurrence; concatenation
/// order is otherwise preserved.
pub fn union_pairs(parts: &[Vec<PreferencePair>]) -> (Vec<PreferencePair>, UnionReport) {
    let (out, duplicates_removed) = union_by_key(parts, |p: &PreferencePair| {
        (
            p.prompt.clone(),
            p.chosen.clone(),
            p.rejected.clone(),
            p.axis.clone(),
        )
    });
    let report = UnionReport {
        total: out.len(),
        per_source: count_sources(out.iter().map(|p| p.source)),
        duplicates_removed,
    };
    (out, report)
}

/// Set union of ±1-example parts, keyed on (prompt, response, reward, axis).
pub fn union_examples(parts: &[Vec<LabeledExample>]) -> (Vec<LabeledExample>, UnionReport) {
    let (out, duplicates_removed) = union_by_key(parts, |e: &LabeledExample| {
        (
            e.prompt.clone(),
            e.response.clone(),
            e.reward,
            e.axis.clone(),
        )
    });
    let report = UnionReport {
        total: out.len(),
        per_source: count_sources(out.iter().map(|e| e.source)),
        duplicates_removed,
    };
    (out, report)
}

fn count_sources(sources: impl Iterator<Item = Source>) -> BTreeMap<Source, usize> {
    let mut counts = BTreeMap::new();
    for s in sources {
        *counts.entry(s).or_insert(0) += 1;
    }
    counts
}

/// A unified corpus file holds exactly one record kind.
#[derive(Debug, Clone, PartialEq)]
pub enum UnifiedCorpus {
    Pairs(Vec<PreferencePair>),
    Labeled(Vec<LabeledExample>),
}

impl UnifiedCorpus {
    pub fn len(&self) -> usize {
        match self {
            UnifiedCorpus::Pairs(p) => p.len(),
            UnifiedCorpus::Labeled(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads a unified-corpus JSONL file, detecting the record kind per line.
/// A file mixing pair-form and labeled-form lines is rejected.
pub fn read_unified_jsonl(path: &Path) -> Result<UnifiedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let mut pairs = Vec::new();
    let mut labeled = Vec::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::parse(&source, line_no, format!("malformed record: {e}")))?;
        let is_pair = value.get("chosen").is_some();
        let is_labeled = value.get("response").is_some();
        if is_pair == is_labeled {
            return Err(Error::parse(
                &source,
                line_no,
                "record is neither pair-form nor labeled-form",
            ));
        }
        if is_pair {
            let pair: PreferencePair = serde_json::from_value(value)
                .map_err(|e| Error::parse(&source, line_no, format!("bad pair record: {e}")))?;
            if pair.chosen == pair.rejected {
                return Err(Error::parse(&source, line_no, "chosen equals rejected"));
            }
            if !(pair.margin.is_finite() && pair.margin >= 0.0) {
                return Err(Error::parse(&source, line_no, "margin must be >= 0"));
            }
            pairs.push(pair);
        } else {
            let ex: LabeledExample = serde_json::from_value(value)
                .map_err(|e| Error::parse(&source, line_no, format!("bad labeled record: {e}")))?;
            if ex.reward != 1 && ex.reward != -1 {
                return Err(Error::parse(&source, line_no, "reward must be +1 or -1"));
            }
            labeled.push(ex);
        }
        if !pairs.is_empty() && !labeled.is_empty() {
            return Err(Error::parse(&source, line_no, "mixed record kinds"));
        }
    }

    if labeled.is_empty() {
        Ok(UnifiedCorpus::Pairs(pairs))
    } else {
        Ok(UnifiedCorpus::Labeled(labeled))
    }
}

pub fn write_pairs_jsonl(path: &Path, pairs: &[PreferencePair]) -> Result<usize> {
    write_jsonl(path, pairs)
}

pub fn write_labeled_jsonl(path: &Path, examples: &[LabeledExample]) -> Result<usize> {
    write_jsonl(path, examples)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<usize> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

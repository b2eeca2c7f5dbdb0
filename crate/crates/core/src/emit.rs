//! Prompt/response templates and training-file output.
//!
//! Two templates exist. Choice sentences are completed by substituting the
//! blank marker with an option; conversation pairs use the literal
//! `Prompt: {prompt}\n\nResponse: {response}` form. Both training files are
//! JSONL with a fixed key order so identical inputs produce identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::unify::{PreferencePair, Source};

/// Substitutes `option` for the single occurrence of `blank_marker` in
/// `sentence`. No other characters are altered.
pub fn render_choice(sentence: &str, option: &str, blank_marker: &str) -> Result<String> {
    if blank_marker.is_empty() {
        return Err(Error::config("blank marker must be non-empty"));
    }
    let markers = sentence.matches(blank_marker).count();
    if markers != 1 {
        return Err(Error::data(format!(
            "sentence must contain exactly one '{blank_marker}', found {markers}"
        )));
    }
    Ok(sentence.replacen(blank_marker, option, 1))
}

/// The conversation template, byte-exact: `"Prompt: {p}\n\nResponse: {r}"`.
pub fn render_prompt_response(prompt: &str, response: &str) -> String {
    format!("Prompt: {prompt}\n\nResponse: {response}")
}

#[derive(Serialize)]
struct SftRow<'a> {
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    chosen: Option<&'a str>,
}

/// Splits a pair into the SFT `(prompt, chosen)` row under its source's
/// template. Concatenating the two fields (treating a missing `chosen` as
/// empty) reproduces the full training text.
///
/// - multilabel: `prompt` is the template prefix up to and including
///   `"Response: "`, `chosen` is the response text;
/// - choice: the chosen completion already is the fully rendered sentence,
///   so `prompt` carries it whole and `chosen` is omitted.
pub fn sft_fields(pair: &PreferencePair) -> (String, Option<&str>) {
    match pair.source {
        Source::Multilabel => (
            render_prompt_response(&pair.prompt, ""),
            Some(pair.chosen.as_str()),
        ),
        Source::Choice => (pair.chosen.clone(), None),
    }
}

/// Writes the SFT file: one row per pair, correct response only.
pub fn emit_sft(pairs: &[PreferencePair], out: &Path) -> Result<usize> {
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    for pair in pairs {
        let (prompt, chosen) = sft_fields(pair);
        let row = SftRow {
            prompt: &prompt,
            chosen,
        };
        let line = serde_json::to_string(&row).expect("row serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(pairs.len())
}

#[derive(Serialize)]
struct PreferenceRow<'a> {
    prompt: &'a str,
    chosen: &'a str,
    rejected: &'a str,
    margin: f64,
    source: Source,
    axis: &'a Option<String>,
}

/// Writes the preference training file: six keys per line in fixed order
/// (`prompt`, `chosen`, `rejected`, `margin`, `source`, `axis`).
pub fn emit_preference(pairs: &[PreferencePair], out: &Path) -> Result<usize> {
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    for pair in pairs {
        let row = PreferenceRow {
            prompt: &pair.prompt,
            chosen: &pair.chosen,
            rejected: &pair.rejected,
            margin: pair.margin,
            source: pair.source,
            axis: &pair.axis,
        };
        let line = serde_json::to_string(&row).expect("row serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(pairs.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(source: Source) -> PreferencePair {
        PreferencePair {
            prompt: "the _ was heavier.".into(),
            chosen: "the bag was heavier.".into(),
            rejected: "the box was heavier.".into(),
            margin: 1.0,
            source,
            axis: None,
            prompt_id: "w1".into(),
        }
    }

    #[test]
    fn render_choice_fills_marker() {
        assert_eq!(
            render_choice("the _ was heavier.", "bag", "_").unwrap(),
            "the bag was heavier."
        );
    }

    #[test]
    fn render_choice_with_empty_option_removes_marker() {
        assert_eq!(render_choice("a _ b", "", "_").unwrap(), "a  b");
    }

    #[test]
    fn render_choice_rejects_missing_marker() {
        assert!(render_choice("no marker", "x", "_").is_err());
        assert!(render_choice("two _ markers _", "x", "_").is_err());
    }

    #[test]
    fn prompt_response_template_is_byte_exact() {
        assert_eq!(render_prompt_response("Hi", "Hello"), "Prompt: Hi\n\nResponse: Hello");
        assert_eq!(render_prompt_response("", ""), "Prompt: \n\nResponse: ");
        assert_eq!(
            render_prompt_response("line1\nline2", "r"),
            "Prompt: line1\nline2\n\nResponse: r"
        );
    }

    #[test]
    fn sft_multilabel_row_splits_at_response() {
        let mut p = pair(Source::Multilabel);
        p.prompt = "Q".into();
        p.chosen = "A".into();
        let (prompt, chosen) = sft_fields(&p);
        assert_eq!(prompt, "Prompt: Q\n\nResponse: ");
        assert_eq!(chosen, Some("A"));
        assert_eq!(
            format!("{prompt}{}", chosen.unwrap()),
            render_prompt_response("Q", "A")
        );
    }

    #[test]
    fn sft_choice_row_is_filled_sentence_only() {
        let p = pair(Source::Choice);
        let (prompt, chosen) = sft_fields(&p);
        assert_eq!(prompt, "the bag was heavier.");
        assert_eq!(chosen, None);
    }

    #[test]
    fn sft_file_has_one_line_per_pair_and_no_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sft.jsonl");
        let pairs = vec![pair(Source::Choice), pair(Source::Multilabel)];
        let n = emit_sft(&pairs, &out).unwrap();
        assert_eq!(n, 2);
        let content = std::fs::read_to_string(&out).unwrap();
        assert_eq!(content.lines().count(), 2);
        assert!(!content.contains("rejected"));
        assert!(!content.contains("box"));
    }

    #[test]
    fn empty_sft_input_writes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sft.jsonl");
        assert_eq!(emit_sft(&[], &out).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
    }

    #[test]
    fn preference_line_has_six_keys_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("pref.jsonl");
        emit_preference(&[pair(Source::Choice)], &out).unwrap();
        let content = std::fs::read_to_string(&out).unwrap();
        let line = content.lines().next().unwrap();
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        let object = value.as_object().unwrap();
        assert_eq!(object.len(), 6);
        let positions: Vec<usize> = ["prompt", "chosen", "rejected", "margin", "source", "axis"]
            .iter()
            .map(|key| line.find(&format!("\"{key}\":")).unwrap_or_else(|| panic!("missing {key}")))
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{line}");
    }

    #[test]
    fn preference_output_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let pairs = vec![pair(Source::Choice), pair(Source::Multilabel)];
        emit_preference(&pairs, &a).unwrap();
        emit_preference(&pairs, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn margin_serialization_round_trips() {
        let mut p = pair(Source::Multilabel);
        p.margin = 0.1 + 0.2; // 0.30000000000000004
        let line = serde_json::to_string(&p).unwrap();
        let back: PreferencePair = serde_json::from_str(&line).unwrap();
        assert_eq!(back.margin.to_bits(), p.margin.to_bits());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rendered_length_is_conserved(
                prefix in "[a-z ]{0,12}",
                suffix in "[a-z ]{0,12}",
                option in "[a-z]{0,8}",
            ) {
                let sentence = format!("{prefix}_{suffix}");
                let rendered = render_choice(&sentence, &option, "_").unwrap();
                prop_assert_eq!(rendered.len(), sentence.len() - 1 + option.len());
            }
        }
    }
}

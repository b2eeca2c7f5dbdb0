//! End-to-end pipeline: ingest → unify → select → emit → evaluate → probe,
//! with a run manifest tying artifacts back to input hashes and seeds.
//!
//! A rerun with the same config and inputs writes byte-identical artifacts
//! and an identical manifest modulo its timestamp. If any stage fails, the
//! artifacts written so far are removed.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use unifeed_core::corpus::{
    link_prompt_responses, parse_choice, parse_multilabel, ChoicePairRecord, MultiLabelRecord,
    PromptWithResponses,
};
use unifeed_core::embed::{load_embeddings, provide_embeddings, save_embeddings, EmbeddingMap};
use unifeed_core::emit::{emit_preference, emit_sft};
use unifeed_core::evaluate::evaluate_files;
use unifeed_core::probe::{pairwise_accuracy, pairwise_loss, train_reward, EmbeddedPair, TrainParams};
use unifeed_core::select::{
    best_worst_pair, diversity_sample, kmeans_fit, select_top_fraction, SelectionReport,
};
use unifeed_core::unify::{
    choice_to_preference, expand_choice, union_examples, union_pairs, unify_multilabel,
    write_labeled_jsonl, write_pairs_jsonl, PreferencePair, Source,
};
use unifeed_core::{Error, Result};

use crate::config::{EmbedConfig, RunConfig};
use crate::manifest::{
    sha256_file, EmitCounts, IngestCounts, ProbeCounts, RunManifest, UnifyCounts,
};

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

pub fn run_pipeline(config_path: &Path) -> Result<RunOutcome> {
    let config = RunConfig::load(config_path)?;
    fs::create_dir_all(&config.emit.out_dir).map_err(|e| Error::io(&config.emit.out_dir, e))?;

    let mut manifest = RunManifest::new(sha256_file(config_path)?);
    let mut written: Vec<PathBuf> = Vec::new();
    match run_stages(&config, &mut manifest, &mut written) {
        Ok(()) => {
            let manifest_path = config.emit.out_dir.join("manifest.json");
            manifest.write(&manifest_path)?;
            Ok(RunOutcome {
                manifest,
                manifest_path,
                artifacts: written,
            })
        }
        Err(err) => {
            for path in &written {
                let _ = fs::remove_file(path);
            }
            Err(err)
        }
    }
}

fn run_stages(
    config: &RunConfig,
    manifest: &mut RunManifest,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let out_dir = &config.emit.out_dir;
    let marker = &config.inputs.blank_marker;

    // ingest
    let (ml_records, choice_records, unknown_keys) = ingest_inputs(config, manifest)?;
    let groups = link_prompt_responses(&ml_records);
    manifest.stages.ingest = IngestCounts {
        multilabel_records: ml_records.len(),
        choice_records: choice_records.len(),
        prompt_groups: groups.len(),
        unknown_keys,
    };

    // unify: best/worst pairs per group per axis, plus one pair per choice record
    let mut ml_pairs: Vec<PreferencePair> = Vec::new();
    let mut discarded_single = 0usize;
    let mut degenerate = 0usize;
    for group in &groups {
        if group.responses.len() < 2 {
            discarded_single += 1;
            continue;
        }
        for axis in &config.unify.axes {
            match best_worst_pair(group, &axis.name, axis.polarity)? {
                Some(pair) => ml_pairs.push(pair),
                None => degenerate += 1,
            }
        }
    }
    let choice_pairs: Vec<PreferencePair> = choice_records
        .iter()
        .map(|r| choice_to_preference(r, marker))
        .collect::<Result<_>>()?;
    let (unified, union_report) = union_pairs(&[ml_pairs, choice_pairs]);

    let unified_path = out_dir.join("unified.jsonl");
    write_pairs_jsonl(&unified_path, &unified)?;
    written.push(unified_path.clone());
    manifest.record_artifact("unified.jsonl", &unified_path)?;

    manifest.stages.unify = UnifyCounts {
        pairs: unified.len(),
        per_source: union_report.per_source.clone(),
        duplicates_removed: union_report.duplicates_removed,
        discarded_single_response: discarded_single,
        degenerate_pairs_dropped: degenerate,
        labeled: None,
    };

    if let Some(labeled_out) = &config.unify.labeled_out {
        let ml_examples = unify_multilabel(
            &groups,
            &config.unify.axes,
            config.unify.strategy,
            config.unify.cutoff_scope,
        )?;
        let mut choice_examples = Vec::new();
        for record in &choice_records {
            choice_examples.extend(expand_choice(record, marker)?);
        }
        let (labeled, _) = union_examples(&[ml_examples, choice_examples]);
        write_labeled_jsonl(labeled_out, &labeled)?;
        written.push(labeled_out.clone());
        let name = labeled_out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "labeled.jsonl".to_owned());
        manifest.record_artifact(&name, labeled_out)?;
        manifest.stages.unify.labeled = Some(labeled.len());
    }

    // select: quality fraction first, then cluster-even diversity
    let quality_selected = if config.select.quality_fraction < 1.0 {
        select_top_fraction(&unified, config.select.quality_fraction)?
    } else {
        unified.clone()
    };

    let (selected, mut selection_report) = match &config.select.diversity {
        None => {
            let mut per_source_counts = BTreeMap::new();
            for pair in &quality_selected {
                *per_source_counts.entry(pair.source).or_insert(0) += 1;
            }
            let report = SelectionReport {
                requested_fraction: config.select.quality_fraction,
                selected_count: quality_selected.len(),
                per_cluster_counts: Vec::new(),
                per_source_counts,
                discarded_single_response: 0,
            };
            (quality_selected.clone(), report)
        }
        Some(diversity) => {
            let embed_cfg = config.embed.as_ref().expect("validated by config");
            let embeddings = resolve_embeddings(embed_cfg, &unified, manifest, written)?;
            let embeddings = if diversity.normalize {
                embeddings
                    .iter()
                    .map(|(id, v)| (id.clone(), v.normalized()))
                    .collect()
            } else {
                embeddings
            };
            let model = kmeans_fit(
                &embeddings,
                diversity.k,
                diversity.seed,
                diversity.max_iters,
                diversity.tol,
            )?;
            manifest.seeds.insert("kmeans".to_owned(), diversity.seed);

            let ratios: Option<BTreeMap<Source, f64>> = diversity.preserve_source_ratio.then(|| {
                union_report
                    .per_source
                    .iter()
                    .map(|(&s, &n)| (s, n as f64))
                    .collect()
            });
            let (selected, report) =
                diversity_sample(&quality_selected, &model, diversity.fraction, ratios.as_ref())?;

            let model_path = out_dir.join("cluster_model.json");
            model.save(&model_path)?;
            written.push(model_path.clone());
            manifest.record_artifact("cluster_model.json", &model_path)?;
            manifest.stages.select.per_cluster = Some(report.per_cluster_counts.clone());
            manifest.stages.select.diversity_selected = Some(selected.len());

            let mut composition: Vec<BTreeMap<Source, usize>> =
                vec![BTreeMap::new(); diversity.k];
            for pair in &unified {
                let cluster = model.assignments[&pair.prompt_id];
                *composition[cluster].entry(pair.source).or_insert(0) += 1;
            }
            manifest.stages.select.cluster_source_composition = Some(composition);
            (selected, report)
        }
    };
    selection_report.discarded_single_response = discarded_single;
    manifest.stages.select.quality_selected = quality_selected.len();
    manifest.stages.select.selected = selected.len();

    let report_path = out_dir.join("selection_report.json");
    write_json(&report_path, &selection_report)?;
    written.push(report_path.clone());
    manifest.record_artifact("selection_report.json", &report_path)?;

    let selected_path = out_dir.join("selected.jsonl");
    write_pairs_jsonl(&selected_path, &selected)?;
    written.push(selected_path.clone());
    manifest.record_artifact("selected.jsonl", &selected_path)?;

    // emit
    let sft_path = out_dir.join("sft.jsonl");
    let sft_count = emit_sft(&selected, &sft_path)?;
    written.push(sft_path.clone());
    manifest.record_artifact("sft.jsonl", &sft_path)?;

    let preference_path = out_dir.join("preference.jsonl");
    let preference_count = emit_preference(&selected, &preference_path)?;
    written.push(preference_path.clone());
    manifest.record_artifact("preference.jsonl", &preference_path)?;

    manifest.stages.emit = EmitCounts {
        sft: sft_count,
        preference: preference_count,
    };

    // evaluate
    if let Some(eval) = &config.evaluate {
        let report = evaluate_files(eval.bias.as_deref(), eval.generative.as_deref())?;
        let eval_path = out_dir.join("eval_report.json");
        write_json(&eval_path, &report)?;
        written.push(eval_path.clone());
        manifest.record_artifact("eval_report.json", &eval_path)?;
        manifest.stages.evaluate = Some(report);
    }

    // probe
    if let Some(probe) = &config.probe {
        let text_embeddings = load_embeddings(&probe.embeddings)?;
        let pairs = embedded_pairs(&selected, &text_embeddings)?;
        let params = TrainParams {
            epochs: probe.epochs,
            lr: probe.lr,
            l2: probe.l2,
            seed: probe.seed,
        };
        let model = train_reward(&pairs, &params)?;
        let model_path = out_dir.join("probe_model.json");
        model.save(&model_path)?;
        written.push(model_path.clone());
        manifest.record_artifact("probe_model.json", &model_path)?;
        manifest.seeds.insert("probe".to_owned(), probe.seed);
        manifest.stages.probe = Some(ProbeCounts {
            pairs: pairs.len(),
            training_accuracy: pairwise_accuracy(&model, &pairs)?,
            final_loss: pairwise_loss(&model, &pairs)?,
        });
    }

    Ok(())
}

fn ingest_inputs(
    config: &RunConfig,
    manifest: &mut RunManifest,
) -> Result<(Vec<MultiLabelRecord>, Vec<ChoicePairRecord>, usize)> {
    let mut ml_records = Vec::new();
    let mut unknown = 0usize;
    let mut seen_ids: HashSet<String> = HashSet::new();
    for path in &config.inputs.multilabel {
        manifest.record_input(path)?;
        let parsed = parse_multilabel(path)?;
        unknown += parsed.unknown_keys;
        for record in &parsed.records {
            if !seen_ids.insert(record.id.clone()) {
                return Err(Error::data(format!(
                    "duplicate id '{}' across multilabel inputs",
                    record.id
                )));
            }
        }
        ml_records.extend(parsed.records);
    }

    let mut choice_records = Vec::new();
    let mut seen_choice: HashSet<String> = HashSet::new();
    for path in &config.inputs.choice {
        manifest.record_input(path)?;
        let parsed = parse_choice(path, &config.inputs.blank_marker)?;
        unknown += parsed.unknown_keys;
        for record in &parsed.records {
            if !seen_choice.insert(record.id.clone()) {
                return Err(Error::data(format!(
                    "duplicate id '{}' across choice inputs",
                    record.id
                )));
            }
        }
        choice_records.extend(parsed.records);
    }

    for extra in [
        config.evaluate.as_ref().and_then(|e| e.bias.clone()),
        config.evaluate.as_ref().and_then(|e| e.generative.clone()),
        config.probe.as_ref().map(|p| p.embeddings.clone()),
        config.embed.as_ref().and_then(|e| e.file.clone()),
    ]
    .into_iter()
    .flatten()
    {
        manifest.record_input(&extra)?;
    }

    Ok((ml_records, choice_records, unknown))
}

/// Distinct prompts of the unified corpus, embedded via the configured
/// provider. HTTP fetches are cached to `embed.cache` when set.
fn resolve_embeddings(
    embed_cfg: &EmbedConfig,
    unified: &[PreferencePair],
    manifest: &mut RunManifest,
    written: &mut Vec<PathBuf>,
) -> Result<EmbeddingMap> {
    let mut prompts: BTreeMap<String, String> = BTreeMap::new();
    for pair in unified {
        prompts
            .entry(pair.prompt_id.clone())
            .or_insert_with(|| pair.prompt.clone());
    }
    let texts: Vec<(String, String)> = prompts.into_iter().collect();
    let provider = embed_cfg.provider()?;
    let embeddings = provide_embeddings(&provider, &texts)?;
    if embed_cfg.endpoint.is_some() {
        if let Some(cache) = &embed_cfg.cache {
            save_embeddings(cache, &embeddings)?;
            written.push(cache.clone());
            manifest.record_artifact("embedding_cache.jsonl", cache)?;
        }
    }
    Ok(embeddings)
}

/// Looks up each pair's chosen/rejected embedding by exact response text.
fn embedded_pairs(
    selected: &[PreferencePair],
    by_text: &EmbeddingMap,
) -> Result<Vec<EmbeddedPair>> {
    let mut out = Vec::with_capacity(selected.len());
    for pair in selected {
        let chosen = by_text.get(&pair.chosen).ok_or_else(|| {
            Error::data(format!(
                "probe embeddings missing chosen text of pair '{}'",
                pair.prompt_id
            ))
        })?;
        let rejected = by_text.get(&pair.rejected).ok_or_else(|| {
            Error::data(format!(
                "probe embeddings missing rejected text of pair '{}'",
                pair.prompt_id
            ))
        })?;
        out.push((chosen.values().to_vec(), rejected.values().to_vec()));
    }
    Ok(out)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::data(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Shared helper for the standalone `unify`/`select` subcommands: group
/// multilabel records and emit best/worst pairs on every axis.
pub fn pairs_from_groups(
    groups: &[PromptWithResponses],
    axes: &[unifeed_core::AxisSpec],
) -> Result<Vec<PreferencePair>> {
    let mut pairs = Vec::new();
    for group in groups {
        if group.responses.len() < 2 {
            continue;
        }
        for axis in axes {
            if let Some(pair) = best_worst_pair(group, &axis.name, axis.polarity)? {
                pairs.push(pair);
            }
        }
    }
    Ok(pairs)
}

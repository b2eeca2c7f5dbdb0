use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use unifeed_cli::pipeline::{pairs_from_groups, run_pipeline};
use unifeed_core::corpus::{link_prompt_responses, parse_choice, parse_multilabel};
use unifeed_core::embed::{
    fetch_embeddings, load_embeddings, save_embeddings, EmbeddingMap, HttpProviderConfig,
};
use unifeed_core::emit::{emit_preference, emit_sft};
use unifeed_core::evaluate::evaluate_files;
use unifeed_core::probe::{pairwise_accuracy, pairwise_loss, train_reward, TrainParams};
use unifeed_core::select::{diversity_sample, kmeans_fit, select_top_fraction};
use unifeed_core::unify::{
    choice_to_preference, expand_choice, read_unified_jsonl, union_examples, union_pairs,
    unify_multilabel, write_labeled_jsonl, write_pairs_jsonl, PreferencePair, UnifiedCorpus,
};
use unifeed_core::{AxisSpec, CutoffScope, CutoffStrategy, Error, Polarity, Result, Source};

#[derive(Parser)]
#[command(
    name = "unifeed",
    version,
    about = "Unify heterogeneous feedback datasets, select subsets, emit training files, score outputs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Pairs,
    Labeled,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Median,
    Quartiles,
    Threshold,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Corpus,
    Group,
}

fn parse_axis(raw: &str) -> std::result::Result<AxisSpec, String> {
    let (name, polarity) = raw
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=POLARITY, got '{raw}'"))?;
    if name.is_empty() {
        return Err("axis name must be non-empty".to_owned());
    }
    let polarity = match polarity {
        "higher_is_positive" | "higher" => Polarity::HigherIsPositive,
        "lower_is_positive" | "lower" => Polarity::LowerIsPositive,
        other => return Err(format!("unknown polarity '{other}'")),
    };
    Ok(AxisSpec {
        name: name.to_owned(),
        polarity,
    })
}

#[derive(Subcommand)]
enum Command {
    /// Validate inputs and print corpus statistics as JSON
    Ingest {
        #[arg(long)]
        multilabel: Vec<PathBuf>,
        #[arg(long)]
        choice: Vec<PathBuf>,
        #[arg(long, default_value = "_")]
        blank_marker: String,
    },
    /// Convert inputs into a unified corpus of pairs or ±1 examples
    Unify {
        #[arg(long)]
        multilabel: Vec<PathBuf>,
        #[arg(long)]
        choice: Vec<PathBuf>,
        #[arg(long, default_value = "_")]
        blank_marker: String,
        #[arg(long, value_enum, default_value = "pairs")]
        format: FormatArg,
        /// Axis to expand, as NAME=POLARITY (repeatable)
        #[arg(long = "axis", value_parser = parse_axis)]
        axes: Vec<AxisSpec>,
        #[arg(long, value_enum, default_value = "median")]
        strategy: StrategyArg,
        /// Cutoff for --strategy threshold
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, value_enum, default_value = "corpus")]
        cutoff_scope: ScopeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank pairs by margin and optionally subsample evenly over clusters
    Select {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        quality_fraction: f64,
        /// Precomputed embeddings JSONL keyed by prompt_id
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Embedding service URL (POST {"texts": [...]})
        #[arg(long)]
        embed_endpoint: Option<String>,
        #[arg(long, default_value_t = 32)]
        embed_batch: usize,
        #[arg(long, default_value_t = 30)]
        embed_timeout_secs: u64,
        #[arg(long, default_value_t = 3)]
        embed_retries: usize,
        #[arg(long)]
        embed_dim: Option<usize>,
        /// Cache fetched embeddings to this file
        #[arg(long)]
        embed_cache: Option<PathBuf>,
        /// Diversity fraction taken per cluster; enables clustering
        #[arg(long)]
        diversity_fraction: Option<f64>,
        #[arg(long, default_value_t = unifeed_core::select::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = unifeed_core::select::DEFAULT_MAX_ITERS)]
        max_iters: usize,
        #[arg(long, default_value_t = unifeed_core::select::DEFAULT_TOL)]
        tol: f64,
        /// Unit-normalize embeddings before clustering
        #[arg(long)]
        normalize: bool,
        /// Apportion cluster quotas by the corpus source ratio
        #[arg(long)]
        preserve_source_ratio: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        cluster_model: Option<PathBuf>,
    },
    /// Write SFT and preference training files from selected pairs
    Emit {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        sft: Option<PathBuf>,
        #[arg(long)]
        preference: Option<PathBuf>,
    },
    /// Score bias and generative-accuracy inputs and print the report
    Evaluate {
        #[arg(long)]
        bias: Option<PathBuf>,
        #[arg(long)]
        generative: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the linear reward probe on selected pairs
    Probe {
        #[arg(long)]
        pairs: PathBuf,
        /// Embeddings JSONL keyed by exact response text
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0.0)]
        l2: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole pipeline from a JSON config
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Parse { .. } | Error::Data(_) => 3,
        Error::Io { .. } => 4,
        Error::Remote(_) => 5,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            multilabel,
            choice,
            blank_marker,
        } => cmd_ingest(&multilabel, &choice, &blank_marker),
        Command::Unify {
            multilabel,
            choice,
            blank_marker,
            format,
            axes,
            strategy,
            delta,
            cutoff_scope,
            out,
        } => cmd_unify(UnifyArgs {
            multilabel,
            choice,
            blank_marker,
            format,
            axes,
            strategy,
            delta,
            cutoff_scope,
            out,
        }),
        Command::Select {
            pairs,
            quality_fraction,
            embeddings,
            embed_endpoint,
            embed_batch,
            embed_timeout_secs,
            embed_retries,
            embed_dim,
            embed_cache,
            diversity_fraction,
            k,
            seed,
            max_iters,
            tol,
            normalize,
            preserve_source_ratio,
            out,
            report,
            cluster_model,
        } => cmd_select(SelectArgs {
            pairs,
            quality_fraction,
            embeddings,
            embed_endpoint,
            embed_batch,
            embed_timeout_secs,
            embed_retries,
            embed_dim,
            embed_cache,
            diversity_fraction,
            k,
            seed,
            max_iters,
            tol,
            normalize,
            preserve_source_ratio,
            out,
            report,
            cluster_model,
        }),
        Command::Emit {
            pairs,
            sft,
            preference,
        } => cmd_emit(&pairs, sft.as_deref(), preference.as_deref()),
        Command::Evaluate {
            bias,
            generative,
            out,
        } => cmd_evaluate(bias.as_deref(), generative.as_deref(), out.as_deref()),
        Command::Probe {
            pairs,
            embeddings,
            epochs,
            lr,
            l2,
            seed,
            out,
        } => cmd_probe(&pairs, &embeddings, epochs, lr, l2, seed, out.as_deref()),
        Command::Run { config } => {
            let outcome = run_pipeline(&config)?;
            eprintln!(
                "pipeline complete: {} artifacts, manifest at {}",
                outcome.artifacts.len(),
                outcome.manifest_path.display()
            );
            Ok(())
        }
    }
}

fn cmd_ingest(multilabel: &[PathBuf], choice: &[PathBuf], blank_marker: &str) -> Result<()> {
    let mut ml_records = Vec::new();
    let mut choice_records = Vec::new();
    let mut unknown = 0usize;
    for path in multilabel {
        let parsed = parse_multilabel(path)?;
        unknown += parsed.unknown_keys;
        ml_records.extend(parsed.records);
    }
    for path in choice {
        let parsed = parse_choice(path, blank_marker)?;
        unknown += parsed.unknown_keys;
        choice_records.extend(parsed.records);
    }
    let groups = link_prompt_responses(&ml_records);
    let stats = serde_json::json!({
        "multilabel_records": ml_records.len(),
        "choice_records": choice_records.len(),
        "prompt_groups": groups.len(),
        "unknown_keys": unknown,
    });
    println!("{stats}");
    Ok(())
}

struct UnifyArgs {
    multilabel: Vec<PathBuf>,
    choice: Vec<PathBuf>,
    blank_marker: String,
    format: FormatArg,
    axes: Vec<AxisSpec>,
    strategy: StrategyArg,
    delta: f64,
    cutoff_scope: ScopeArg,
    out: PathBuf,
}

fn cmd_unify(args: UnifyArgs) -> Result<()> {
    if args.multilabel.is_empty() && args.choice.is_empty() {
        return Err(Error::config("at least one input file is required"));
    }
    if !args.multilabel.is_empty() && args.axes.is_empty() {
        return Err(Error::config("--axis is required with multilabel inputs"));
    }
    let mut ml_records = Vec::new();
    for path in &args.multilabel {
        ml_records.extend(parse_multilabel(path)?.records);
    }
    let mut choice_records = Vec::new();
    for path in &args.choice {
        choice_records.extend(parse_choice(path, &args.blank_marker)?.records);
    }
    let groups = link_prompt_responses(&ml_records);

    let strategy = match args.strategy {
        StrategyArg::Median => CutoffStrategy::Median,
        StrategyArg::Quartiles => CutoffStrategy::Quartiles,
        StrategyArg::Threshold => CutoffStrategy::Threshold { delta: args.delta },
    };
    let scope = match args.cutoff_scope {
        ScopeArg::Corpus => CutoffScope::Corpus,
        ScopeArg::Group => CutoffScope::Group,
    };

    match args.format {
        FormatArg::Pairs => {
            let ml_pairs = pairs_from_groups(&groups, &args.axes)?;
            let choice_pairs: Vec<PreferencePair> = choice_records
                .iter()
                .map(|r| choice_to_preference(r, &args.blank_marker))
                .collect::<Result<_>>()?;
            let (unified, report) = union_pairs(&[ml_pairs, choice_pairs]);
            write_pairs_jsonl(&args.out, &unified)?;
            eprintln!(
                "wrote {} pairs to {} ({} duplicates removed)",
                unified.len(),
                args.out.display(),
                report.duplicates_removed
            );
        }
        FormatArg::Labeled => {
            let ml_examples = unify_multilabel(&groups, &args.axes, strategy, scope)?;
            let mut choice_examples = Vec::new();
            for record in &choice_records {
                choice_examples.extend(expand_choice(record, &args.blank_marker)?);
            }
            let (labeled, report) = union_examples(&[ml_examples, choice_examples]);
            write_labeled_jsonl(&args.out, &labeled)?;
            eprintln!(
                "wrote {} labeled examples to {} ({} duplicates removed)",
                labeled.len(),
                args.out.display(),
                report.duplicates_removed
            );
        }
    }
    Ok(())
}

struct SelectArgs {
    pairs: PathBuf,
    quality_fraction: f64,
    embeddings: Option<PathBuf>,
    embed_endpoint: Option<String>,
    embed_batch: usize,
    embed_timeout_secs: u64,
    embed_retries: usize,
    embed_dim: Option<usize>,
    embed_cache: Option<PathBuf>,
    diversity_fraction: Option<f64>,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
    normalize: bool,
    preserve_source_ratio: bool,
    out: PathBuf,
    report: Option<PathBuf>,
    cluster_model: Option<PathBuf>,
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    let pairs = require_pairs(&args.pairs)?;
    let quality_selected = if args.quality_fraction < 1.0 {
        select_top_fraction(&pairs, args.quality_fraction)?
    } else {
        pairs.clone()
    };

    let selected = match args.diversity_fraction {
        None => quality_selected,
        Some(fraction) => {
            let embeddings = select_embeddings(&args, &pairs)?;
            let embeddings: EmbeddingMap = if args.normalize {
                embeddings
                    .iter()
                    .map(|(id, v)| (id.clone(), v.normalized()))
                    .collect()
            } else {
                embeddings
            };
            let model = kmeans_fit(&embeddings, args.k, args.seed, args.max_iters, args.tol)?;
            let ratios: Option<BTreeMap<Source, f64>> = if args.preserve_source_ratio {
                let mut counts: BTreeMap<Source, f64> = BTreeMap::new();
                for pair in &pairs {
                    *counts.entry(pair.source).or_insert(0.0) += 1.0;
                }
                Some(counts)
            } else {
                None
            };
            let (selected, report) =
                diversity_sample(&quality_selected, &model, fraction, ratios.as_ref())?;
            if let Some(path) = &args.cluster_model {
                model.save(path)?;
            }
            if let Some(path) = &args.report {
                let text = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::data(format!("serializing report: {e}")))?;
                std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
            }
            selected
        }
    };
    write_pairs_jsonl(&args.out, &selected)?;
    eprintln!("wrote {} pairs to {}", selected.len(), args.out.display());
    Ok(())
}

fn select_embeddings(args: &SelectArgs, pairs: &[PreferencePair]) -> Result<EmbeddingMap> {
    match (&args.embeddings, &args.embed_endpoint) {
        (Some(path), None) => load_embeddings(path),
        (None, Some(endpoint)) => {
            let mut prompts: BTreeMap<String, String> = BTreeMap::new();
            for pair in pairs {
                prompts
                    .entry(pair.prompt_id.clone())
                    .or_insert_with(|| pair.prompt.clone());
            }
            let texts: Vec<(String, String)> = prompts.into_iter().collect();
            let mut cfg = HttpProviderConfig::new(endpoint.clone());
            cfg.batch_size = args.embed_batch;
            cfg.timeout = Duration::from_secs(args.embed_timeout_secs);
            cfg.max_retries = args.embed_retries;
            cfg.expected_dim = args.embed_dim;
            let map = fetch_embeddings(&cfg, &texts)?;
            if let Some(cache) = &args.embed_cache {
                save_embeddings(cache, &map)?;
            }
            Ok(map)
        }
        (Some(_), Some(_)) => Err(Error::config(
            "set either --embeddings or --embed-endpoint, not both",
        )),
        (None, None) => Err(Error::config("diversity requires embeddings")),
    }
}

fn cmd_emit(pairs: &Path, sft: Option<&Path>, preference: Option<&Path>) -> Result<()> {
    if sft.is_none() && preference.is_none() {
        return Err(Error::config("set --sft and/or --preference output paths"));
    }
    let pairs = require_pairs(pairs)?;
    if let Some(path) = sft {
        let n = emit_sft(&pairs, path)?;
        eprintln!("wrote {n} SFT rows to {}", path.display());
    }
    if let Some(path) = preference {
        let n = emit_preference(&pairs, path)?;
        eprintln!("wrote {n} preference rows to {}", path.display());
    }
    Ok(())
}

fn cmd_evaluate(
    bias: Option<&Path>,
    generative: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    if bias.is_none() && generative.is_none() {
        return Err(Error::config("set --bias and/or --generative input paths"));
    }
    let report = evaluate_files(bias, generative)?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::data(format!("serializing report: {e}")))?;
    match out {
        Some(path) => {
            std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
            eprintln!("wrote report to {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_probe(
    pairs_path: &Path,
    embeddings: &Path,
    epochs: usize,
    lr: f64,
    l2: f64,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let pairs = require_pairs(pairs_path)?;
    let by_text = load_embeddings(embeddings)?;
    let mut embedded = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let chosen = by_text.get(&pair.chosen).ok_or_else(|| {
            Error::data(format!(
                "embeddings missing chosen text of pair '{}'",
                pair.prompt_id
            ))
        })?;
        let rejected = by_text.get(&pair.rejected).ok_or_else(|| {
            Error::data(format!(
                "embeddings missing rejected text of pair '{}'",
                pair.prompt_id
            ))
        })?;
        embedded.push((chosen.values().to_vec(), rejected.values().to_vec()));
    }
    let params = TrainParams {
        epochs,
        lr,
        l2,
        seed,
    };
    let model = train_reward(&embedded, &params)?;
    let summary = serde_json::json!({
        "pairs": embedded.len(),
        "training_accuracy": pairwise_accuracy(&model, &embedded)?,
        "final_loss": pairwise_loss(&model, &embedded)?,
    });
    match out {
        Some(path) => {
            model.save(path)?;
            eprintln!("wrote model to {}", path.display());
            eprintln!("{summary}");
        }
        None => println!("{summary}"),
    }
    Ok(())
}

fn require_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    match read_unified_jsonl(path)? {
        UnifiedCorpus::Pairs(pairs) => Ok(pairs),
        UnifiedCorpus::Labeled(_) => Err(Error::data(format!(
            "{}: expected preference pairs, found labeled examples",
            path.display()
        ))),
    }
}

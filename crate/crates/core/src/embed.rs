//! Prompt embeddings from a precomputed file or an external HTTP service.
//!
//! The pipeline never runs an embedding model in-process. Vectors come either
//! from a JSONL file of `{"id", "vector"}` rows or from a POST endpoint that
//! accepts `{"texts": [...]}` and returns `{"vectors": [[...]]}` in request
//! order. Fetched vectors can be cached back to the file format so reruns are
//! offline-reproducible.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-length vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::data("embedding vector must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("embedding vector contains a non-finite value"));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Unit-length copy (cosine-like distance under squared Euclidean).
    /// A zero vector is returned unchanged.
    pub fn normalized(&self) -> EmbeddingVector {
        let norm = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return self.clone();
        }
        EmbeddingVector {
            values: self.values.iter().map(|v| v / norm).collect(),
        }
    }
}

/// Prompt id to embedding, ordered for deterministic iteration.
pub type EmbeddingMap = BTreeMap<String, EmbeddingVector>;

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMap> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let mut map = EmbeddingMap::new();
    let mut dim: Option<usize> = None;

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: EmbeddingRow = serde_json::from_str(&line)
            .map_err(|e| Error::parse(&source, line_no, format!("malformed record: {e}")))?;
        let vector = EmbeddingVector::new(row.vector)
            .map_err(|e| Error::parse(&source, line_no, e.to_string()))?;
        match dim {
            None => dim = Some(vector.dim()),
            Some(d) if d != vector.dim() => {
                return Err(Error::parse(
                    &source,
                    line_no,
                    format!("dimension mismatch: expected {d}, got {}", vector.dim()),
                ));
            }
            Some(_) => {}
        }
        if map.insert(row.id.clone(), vector).is_some() {
            return Err(Error::parse(
                &source,
                line_no,
                format!("duplicate id '{}'", row.id),
            ));
        }
    }
    Ok(map)
}

pub fn save_embeddings(path: &Path, map: &EmbeddingMap) -> Result<usize> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, vector) in map {
        let row = EmbeddingRow {
            id: id.clone(),
            vector: vector.values.clone(),
        };
        let line = serde_json::to_string(&row).expect("row serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(map.len())
}

/// HTTP provider settings.
#[derive(Debug, Clone)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    pub batch_size: usize,
    pub timeout: Duration,
    pub max_retries: usize,
    /// Parallel in-flight batches; output never depends on completion order.
    pub max_in_flight: usize,
    pub expected_dim: Option<usize>,
    pub retry_base_delay: Duration,
}

impl HttpProviderConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpProviderConfig {
            endpoint: endpoint.into(),
            batch_size: 32,
            timeout: Duration::from_secs(30),
            max_retries: 3,
            max_in_flight: 1,
            expected_dim: None,
            retry_base_delay: Duration::from_millis(100),
        }
    }
}

/// Where embeddings come from.
#[derive(Debug, Clone)]
pub enum EmbeddingProviderConfig {
    File(PathBuf),
    Http(HttpProviderConfig),
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Fetches one vector per `(id, text)` over HTTP. Texts are sent in input
/// order in batches of at most `batch_size`; each batch is retried with
/// exponential backoff up to `max_retries` extra attempts. The result is
/// independent of batch size and of how many batches run concurrently.
pub fn fetch_embeddings(
    cfg: &HttpProviderConfig,
    texts: &[(String, String)],
) -> Result<EmbeddingMap> {
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    {
        let mut seen = std::collections::HashSet::new();
        for (id, _) in texts {
            if !seen.insert(id.as_str()) {
                return Err(Error::data(format!("duplicate embedding id '{id}'")));
            }
        }
    }
    if texts.is_empty() {
        return Ok(EmbeddingMap::new());
    }

    let client = reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| Error::remote(format!("building HTTP client: {e}")))?;

    let batches: Vec<&[(String, String)]> = texts.chunks(cfg.batch_size).collect();
    let mut results: Vec<Option<Vec<Vec<f64>>>> = vec![None; batches.len()];
    let wave_size = cfg.max_in_flight.max(1);

    for (wave_idx, wave) in batches.chunks(wave_size).enumerate() {
        let wave_results = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|batch| scope.spawn(|| fetch_batch(&client, cfg, batch)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fetch thread panicked"))
                .collect::<Vec<_>>()
        });
        for (offset, result) in wave_results.into_iter().enumerate() {
            results[wave_idx * wave_size + offset] = Some(result?);
        }
    }

    // Reassemble by request index and enforce a single dimension.
    let mut map = EmbeddingMap::new();
    let mut dim = cfg.expected_dim;
    for (batch, vectors) in batches.iter().zip(results) {
        let vectors = vectors.expect("every batch resolved");
        for ((id, _), values) in batch.iter().zip(vectors) {
            let vector = EmbeddingVector::new(values)
                .map_err(|e| Error::remote(format!("vector for '{id}': {e}")))?;
            match dim {
                None => dim = Some(vector.dim()),
                Some(d) if d != vector.dim() => {
                    return Err(Error::remote(format!(
                        "vector for '{id}': dimension {} != expected {d}",
                        vector.dim()
                    )));
                }
                Some(_) => {}
            }
            map.insert(id.clone(), vector);
        }
    }
    Ok(map)
}

fn fetch_batch(
    client: &reqwest::blocking::Client,
    cfg: &HttpProviderConfig,
    batch: &[(String, String)],
) -> Result<Vec<Vec<f64>>> {
    let request = EmbedRequest {
        texts: batch.iter().map(|(_, text)| text.as_str()).collect(),
    };
    let mut last_err = String::new();
    for attempt in 0..=cfg.max_retries {
        if attempt > 0 {
            std::thread::sleep(cfg.retry_base_delay * (1u32 << (attempt - 1).min(16)));
        }
        match try_once(client, &cfg.endpoint, &request) {
            Ok(response) => {
                if response.vectors.len() != batch.len() {
                    return Err(Error::remote(format!(
                        "count mismatch: sent {} texts, got {} vectors",
                        batch.len(),
                        response.vectors.len()
                    )));
                }
                return Ok(response.vectors);
            }
            Err(msg) => last_err = msg,
        }
    }
    Err(Error::remote(format!(
        "embedding request failed after {} attempts: {last_err}",
        cfg.max_retries + 1
    )))
}

fn try_once(
    client: &reqwest::blocking::Client,
    endpoint: &str,
    request: &EmbedRequest<'_>,
) -> std::result::Result<EmbedResponse, String> {
    let response = client
        .post(endpoint)
        .json(request)
        .send()
        .map_err(|e| e.to_string())?;
    if !response.status().is_success() {
        return Err(format!("status {}", response.status()));
    }
    response.json::<EmbedResponse>().map_err(|e| e.to_string())
}

/// Resolves embeddings for `texts` from whichever provider is configured.
/// File providers may serve a superset; HTTP fetches exactly `texts`.
pub fn provide_embeddings(
    cfg: &EmbeddingProviderConfig,
    texts: &[(String, String)],
) -> Result<EmbeddingMap> {
    match cfg {
        EmbeddingProviderConfig::File(path) => {
            let map = load_embeddings(path)?;
            let mut out = EmbeddingMap::new();
            for (id, _) in texts {
                let vector = map.get(id).ok_or_else(|| {
                    Error::data(format!(
                        "no embedding for id '{id}' in {}",
                        path.display()
                    ))
                })?;
                out.insert(id.clone(), vector.clone());
            }
            Ok(out)
        }
        EmbeddingProviderConfig::Http(http) => fetch_embeddings(http, texts),
    }
}

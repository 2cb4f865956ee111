use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use textlabel_core::population::Population;
use textlabel_core::rng;

use crate::cache::Cache;
use crate::client::{Client, RetryPolicy};
use crate::error::{ProbeError, Result};
use crate::split::{exact_match, split_text, Split};

/// Probes abort once more than this share of pieces fail.
pub const MAX_FAILURE_RATE: f64 = 0.2;
/// Random original pairs in the embedding baseline.
pub const BASELINE_PAIRS: usize = 1000;

pub const DEFAULT_TEMPLATE: &str =
    "Continue the following text exactly as it is written. Reply with the continuation only.\n\n{prefix}";

fn default_split() -> f64 {
    0.5
}
fn default_template() -> String {
    DEFAULT_TEMPLATE.to_string()
}
fn default_concurrency() -> usize {
    8
}
fn default_token_env() -> Option<String> {
    Some("OPENAI_API_KEY".to_string())
}
fn default_timeout() -> u64 {
    60
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    #[serde(default = "default_template")]
    pub prompt_template: String,
    pub endpoint: String,
    pub model: String,
    pub embed_model: Option<String>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    pub cache_dir: Option<std::path::PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl ProbeConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ProbeConfig {
            split_fraction: default_split(),
            prompt_template: default_template(),
            endpoint: endpoint.into(),
            model: model.into(),
            embed_model: None,
            concurrency: default_concurrency(),
            retry: RetryPolicy::default(),
            cache_dir: None,
            seed: 0,
            token_env: default_token_env(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(ProbeError::Config(format!(
                "split fraction {} must lie in (0, 1)",
                self.split_fraction
            )));
        }
        if self.concurrency == 0 {
            return Err(ProbeError::Config("concurrency must be at least 1".into()));
        }
        if !self.prompt_template.contains("{prefix}") {
            return Err(ProbeError::Config("prompt template lacks a {prefix} placeholder".into()));
        }
        Ok(())
    }

    pub fn prompt(&self, prefix: &str) -> String {
        self.prompt_template.replace("{prefix}", prefix)
    }

    pub fn client(&self) -> Result<Client> {
        let cache = self.cache_dir.as_ref().map(Cache::open).transpose()?;
        Client::new(
            &self.endpoint,
            self.token_env.as_deref(),
            self.retry,
            cache,
            Duration::from_secs(self.timeout_secs),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub id: String,
    pub prefix: String,
    pub separator: String,
    pub true_suffix: String,
    pub generated_suffix: Option<String>,
    pub exact_match: bool,
    pub embedding_distance: Option<f64>,
    pub no_whitespace: bool,
    pub error: Option<String>,
}

impl CompletionRecord {
    pub fn original(&self) -> String {
        format!("{}{}{}", self.prefix, self.separator, self.true_suffix)
    }

    pub fn generated_full(&self) -> Option<String> {
        self.generated_suffix
            .as_ref()
            .map(|g| format!("{}{}{}", self.prefix, self.separator, g))
    }
}

/// Prompts the model with the first part of every piece's text and records
/// whether it reproduces the rest verbatim. Records come back in population
/// order whatever order the requests complete in.
pub async fn run_probe<T>(pop: &Population<T>, config: &ProbeConfig, client: &Client) -> Result<Vec<CompletionRecord>> {
    config.validate()?;
    let splits: Vec<(String, Split)> = pop
        .pieces()
        .iter()
        .map(|p| {
            let text = p.text.as_deref().ok_or_else(|| ProbeError::MissingText(p.id.clone()))?;
            Ok((p.id.clone(), split_text(text, config.split_fraction)?))
        })
        .collect::<Result<_>>()?;
    let splits = Arc::new(splits);
    let mut done: Vec<(usize, CompletionRecord)> = stream::iter(0..splits.len())
        .map(|i| {
            let splits = Arc::clone(&splits);
            async move {
                let (id, split) = &splits[i];
                let answer = client.complete(&config.model, &config.prompt(&split.prefix)).await;
                let (generated, error) = match answer {
                    Ok(g) => (Some(g), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                let record = CompletionRecord {
                    id: id.clone(),
                    prefix: split.prefix.clone(),
                    separator: split.separator.clone(),
                    true_suffix: split.suffix.clone(),
                    exact_match: generated.as_deref().is_some_and(|g| exact_match(g, &split.suffix)),
                    generated_suffix: generated,
                    embedding_distance: None,
                    no_whitespace: split.no_whitespace,
                    error,
                };
                (i, record)
            }
        })
        .buffer_unordered(config.concurrency)
        .collect()
        .await;
    done.sort_by_key(|(i, _)| *i);
    let records: Vec<CompletionRecord> = done.into_iter().map(|(_, r)| r).collect();
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    if failures as f64 > MAX_FAILURE_RATE * records.len() as f64 {
        return Err(ProbeError::Aborted {
            failures,
            total: records.len(),
        });
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n_pieces: usize,
    pub n_failed: usize,
    pub exact_match_count: usize,
    pub mean_distance: Option<f64>,
    pub median_distance: Option<f64>,
    pub random_pair_baseline: f64,
    pub baseline_pairs: usize,
    pub seed: u64,
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

/// `1 - cos(a, b)` on unit-normalized vectors, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (normalize(a), normalize(b));
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    (1.0 - dot).clamp(0.0, 2.0)
}

/// Maps a linear index in `0..n(n-1)/2` to the pair `(i, j)`, `i < j`.
fn pair_at(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    while k >= n - 1 - i {
        k -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + k)
}

/// Original-vs-original pairs for the baseline: all pairs when there are at
/// most [`BASELINE_PAIRS`], otherwise that many distinct pairs drawn with the
/// seed.
pub fn baseline_pairs(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    if total <= BASELINE_PAIRS {
        return (0..total).map(|k| pair_at(k, n)).collect();
    }
    let mut rng = rng::stream(seed, rng::TAG_PAIRS, 0);
    let mut picks = index::sample(&mut rng, total, BASELINE_PAIRS).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|k| pair_at(k, n)).collect()
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { (xs[m - 1] + xs[m]) / 2.0 })
}

/// Fills `embedding_distance` from precomputed embeddings of each record's
/// original and generated text (`None` for failed records) and summarizes.
pub fn report_from_embeddings(
    records: &mut [CompletionRecord],
    originals: &[Vec<f64>],
    generated: &[Option<Vec<f64>>],
    seed: u64,
) -> Result<ProbeReport> {
    if records.len() < 2 {
        return Err(ProbeError::TooFewRecords {
            need: 2,
            got: records.len(),
        });
    }
    let dim = originals[0].len();
    for v in originals.iter().chain(generated.iter().flatten()) {
        if v.len() != dim {
            return Err(ProbeError::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
    }
    for ((r, g), o) in records.iter_mut().zip(generated).zip(originals) {
        r.embedding_distance = g.as_ref().map(|g| cosine_distance(g, o));
    }
    let pairs = baseline_pairs(originals.len(), seed);
    let baseline = pairs
        .iter()
        .map(|&(i, j)| cosine_distance(&originals[i], &originals[j]))
        .sum::<f64>()
        / pairs.len() as f64;
    let distances: Vec<f64> = records.iter().filter_map(|r| r.embedding_distance).collect();
    Ok(ProbeReport {
        n_pieces: records.len(),
        n_failed: records.iter().filter(|r| r.error.is_some()).count(),
        exact_match_count: records.iter().filter(|r| r.exact_match).count(),
        mean_distance: (!distances.is_empty()).then(|| distances.iter().sum::<f64>() / distances.len() as f64),
        median_distance: median(distances),
        random_pair_baseline: baseline,
        baseline_pairs: pairs.len(),
        seed,
    })
}

/// Embeds originals and generated texts, fills per-record distances, and
/// summarizes against the random-pair baseline.
pub async fn probe_report(
    records: &mut [CompletionRecord],
    client: &Client,
    embed_model: &str,
    seed: u64,
) -> Result<ProbeReport> {
    if records.len() < 2 {
        return Err(ProbeError::TooFewRecords {
            need: 2,
            got: records.len(),
        });
    }
    let originals: Vec<String> = records.iter().map(CompletionRecord::original).collect();
    let generated_texts: Vec<String> = records.iter().filter_map(CompletionRecord::generated_full).collect();
    let original_emb = client.embed(embed_model, &originals).await?;
    let mut generated_emb = client.embed(embed_model, &generated_texts).await?.into_iter();
    let generated: Vec<Option<Vec<f64>>> = records
        .iter()
        .map(|r| r.generated_suffix.as_ref().map(|_| generated_emb.next().expect("one per generated text")))
        .collect();
    report_from_embeddings(records, &original_emb, &generated, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_geometry() {
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]) - 1.0).abs() < 1e-15);
        assert!(cosine_distance(&[1.0, 2.0], &[2.0, 4.0]).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn pairs_enumerate_and_sample() {
        let all = baseline_pairs(5, 0);
        assert_eq!(all.len(), 10);
        assert_eq!(all[0], (0, 1));
        assert_eq!(all[9], (3, 4));
        let sampled = baseline_pairs(100, 3);
        assert_eq!(sampled.len(), BASELINE_PAIRS);
        assert!(sampled.iter().all(|&(i, j)| i < j && j < 100));
        let mut dedup = sampled.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), sampled.len());
        assert_eq!(sampled, baseline_pairs(100, 3));
    }

    fn record(id: &str, generated: Option<&str>) -> CompletionRecord {
        CompletionRecord {
            id: id.into(),
            prefix: "a".into(),
            separator: " ".into(),
            true_suffix: "b".into(),
            generated_suffix: generated.map(str::to_string),
            exact_match: generated == Some("b"),
            embedding_distance: None,
            no_whitespace: false,
            error: generated.is_none().then(|| "boom".to_string()),
        }
    }

    #[test]
    fn identical_generations_have_zero_distance() {
        let mut records = vec![record("x", Some("b")), record("y", Some("b")), record("z", None)];
        let originals = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let generated = vec![Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0]), None];
        let report = report_from_embeddings(&mut records, &originals, &generated, 1).unwrap();
        assert_eq!(report.mean_distance, Some(0.0));
        assert_eq!(report.exact_match_count, 2);
        assert_eq!(report.n_failed, 1);
        assert_eq!(report.baseline_pairs, 3);
        assert!(report.random_pair_baseline > 0.0);
        assert_eq!(records[2].embedding_distance, None);

        let bad = vec![Some(vec![1.0]), Some(vec![0.0, 1.0]), None];
        assert!(matches!(
            report_from_embeddings(&mut records, &originals, &bad, 1),
            Err(ProbeError::DimensionMismatch { .. })
        ));
        assert!(report_from_embeddings(&mut records[..1], &originals[..1], &generated[..1], 1).is_err());
    }
}

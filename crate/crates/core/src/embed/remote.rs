use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{EmbeddingKind, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Name of an environment variable holding a bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_batch() -> usize {
    32
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RemoteStats {
    pub requests: usize,
    pub retries: usize,
}

/// Client for `POST {"model", "input": [..]} → {"data": [{"embedding": [..]}]}`.
pub struct RemoteEncoder {
    cfg: RemoteConfig,
    client: JsonClient,
}

impl RemoteEncoder {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        if cfg.batch == 0 || cfg.parallelism == 0 {
            return Err(Error::InvalidConfig(
                "remote encoder batch and parallelism must be >= 1".into(),
            ));
        }
        let key = cfg.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
        let client = JsonClient::new(cfg.retry, key)?;
        Ok(RemoteEncoder { cfg, client })
    }

    /// Embeds `texts` in input order. At most `parallelism` requests are in
    /// flight; the dimension is fixed by the first batch.
    pub fn encode<S: AsRef<str> + Sync>(
        &self,
        texts: &[S],
        kind: EmbeddingKind,
    ) -> Result<(EmbeddingMatrix, RemoteStats)> {
        let chunks: Vec<&[S]> = texts.chunks(self.cfg.batch).collect();
        let results: Mutex<Vec<Option<Result<(Vec<Vec<f32>>, u32)>>>> =
            Mutex::new((0..chunks.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = self.cfg.parallelism.min(chunks.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= chunks.len() {
                        break;
                    }
                    let r = self.request(chunks[i]);
                    let failed = r.is_err();
                    results.lock().unwrap()[i] = Some(r);
                    if failed {
                        next.store(chunks.len(), Ordering::SeqCst);
                    }
                });
            }
        });

        let mut stats = RemoteStats::default();
        let mut matrix: Option<EmbeddingMatrix> = None;
        for (i, slot) in results.into_inner().unwrap().into_iter().enumerate() {
            let (rows, retries) = match slot {
                Some(r) => r?,
                None => continue,
            };
            stats.requests += 1;
            stats.retries += retries as usize;
            if rows.len() != chunks[i].len() {
                return Err(Error::Response(format!(
                    "batch {i}: sent {} texts, received {} embeddings",
                    chunks[i].len(),
                    rows.len()
                )));
            }
            for row in rows {
                let m = matrix.get_or_insert_with(|| EmbeddingMatrix::new(kind, row.len()));
                m.push(&row, false)?;
            }
        }
        let mut m = matrix.unwrap_or_else(|| EmbeddingMatrix::new(kind, 0));
        for (v, t) in texts.iter().enumerate() {
            if t.as_ref().trim().is_empty() && v < m.n() {
                m.empty[v] = true;
            }
        }
        Ok((m, stats))
    }

    fn request<S: AsRef<str>>(&self, texts: &[S]) -> Result<(Vec<Vec<f32>>, u32)> {
        let input: Vec<&str> = texts.iter().map(|t| t.as_ref()).collect();
        let body = json!({ "model": self.cfg.model, "input": input });
        let reply = self.client.post(&self.cfg.endpoint, &body)?;
        Ok((parse_embeddings(&reply.body)?, reply.retries))
    }
}

fn parse_embeddings(body: &Value) -> Result<Vec<Vec<f32>>> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Response("missing \"data\" array".into()))?;
    data.iter()
        .enumerate()
        .map(|(i, item)| {
            let vec = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Response(format!("data[{i}] missing \"embedding\"")))?;
            vec.iter()
                .map(|x| {
                    x.as_f64()
                        .map(|x| x as f32)
                        .ok_or_else(|| Error::Response(format!("data[{i}] has a non-numeric entry")))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_embedding_payload() {
        let body = json!({"data": [{"embedding": [1.0, 2.5]}, {"embedding": [0, -1]}]});
        assert_eq!(
            parse_embeddings(&body).unwrap(),
            vec![vec![1.0, 2.5], vec![0.0, -1.0]]
        );
        assert!(parse_embeddings(&json!({"data": [{"vector": [1.0]}]})).is_err());
        assert!(parse_embeddings(&json!({"embeddings": []})).is_err());
    }
}

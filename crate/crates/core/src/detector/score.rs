use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward, readout, sigmoid, Inputs};
use super::params::FusionParams;
use super::FusionMode;
use crate::error::{Error, Result};
use crate::graph::TextAttributedGraph;
use crate::io;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Anomaly score per node, higher is more anomalous.
    pub scores: Vec<f64>,
}

fn pick<R: Rng>(list: &[usize], cap: usize, rng: &mut R) -> Vec<usize> {
    if list.len() <= cap {
        return list.to_vec();
    }
    index::sample(rng, list.len(), cap).into_iter().map(|i| list[i]).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn score_nodes(
    params: &FusionParams<f32>,
    graph: &TextAttributedGraph,
    x_orig: &Array2<f32>,
    x_verd: &Array2<f32>,
    mode: FusionMode,
    rounds: usize,
    cap: usize,
    seed: u64,
) -> Result<ScoreReport> {
    let keys: Vec<u64> = (0..graph.n() as u64).collect();
    score_nodes_keyed(params, graph, x_orig, x_verd, mode, rounds, cap, seed, &keys)
}

/// Scoring with per-node sampling keys. Each node's rounds draw from a
/// stream derived from `(seed, key)`, neighbor lists and the negative pool
/// are ordered by key, so relabeling nodes together with their keys
/// permutes the scores.
#[allow(clippy::too_many_arguments)]
pub fn score_nodes_keyed(
    params: &FusionParams<f32>,
    graph: &TextAttributedGraph,
    x_orig: &Array2<f32>,
    x_verd: &Array2<f32>,
    mode: FusionMode,
    rounds: usize,
    cap: usize,
    seed: u64,
    keys: &[u64],
) -> Result<ScoreReport> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("scoring needs at least one round".into()));
    }
    let n = graph.n();
    if keys.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: keys.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidGraph("scoring needs at least 2 nodes".into()));
    }
    let adj = graph.normalized_adjacency();
    let inputs = Inputs {
        adj: &adj,
        x_orig,
        x_verd,
        mode,
    };
    let fwd = forward(params, &inputs)?;
    let z = fwd.z.mapv(f64::from);
    let w = params.w.mapv(f64::from);
    let q = fwd.h.mapv(f64::from).dot(&w.t());

    let mut pool: Vec<usize> = (0..n).collect();
    pool.sort_by_key(|&v| keys[v]);
    let mut position = vec![0; n];
    for (i, &v) in pool.iter().enumerate() {
        position[v] = i;
    }
    let keyed_neighbors = |v: usize| {
        let mut nb = graph.neighbors_unchecked(v).to_vec();
        nb.sort_by_key(|&u| keys[u]);
        nb
    };
    let neighbor_lists: Vec<Vec<usize>> = (0..n).map(keyed_neighbors).collect();

    let mut scores = Vec::with_capacity(n);
    for v in 0..n {
        let mut rng = seed::rng(seed, "score", &[keys[v]]);
        let qv: Array1<f64> = q.row(v).to_owned();
        let mut total = 0.0;
        for _ in 0..rounds {
            let pos = pick(&neighbor_lists[v], cap, &mut rng);
            let mut i = rng.gen_range(0..n - 1);
            if i >= position[v] {
                i += 1;
            }
            let u = pool[i];
            let neg = pick(&neighbor_lists[u], cap, &mut rng);
            let s_pos = sigmoid(readout(&z, v, &pos).e.dot(&qv));
            let s_neg = sigmoid(readout(&z, u, &neg).e.dot(&qv));
            total += s_neg - s_pos;
        }
        scores.push(total / rounds as f64);
    }
    Ok(ScoreReport { scores })
}

/// `scores.csv`: `node_id,score` with six decimals.
pub fn write_scores_csv(path: &Path, report: &ScoreReport) -> Result<()> {
    let mut out = String::from("node_id,score\n");
    for (v, s) in report.scores.iter().enumerate() {
        out.push_str(&format!("{v},{s:.6}\n"));
    }
    io::atomic_write(path, out.as_bytes())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut scores = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = |msg: &str| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.into(),
        };
        let (id, score) = line.split_once(',').ok_or_else(|| bad("expected node_id,score"))?;
        let id: usize = id.trim().parse().map_err(|_| bad("bad node_id"))?;
        if id != scores.len() {
            return Err(bad("node ids must be 0..n in order"));
        }
        scores.push(score.trim().parse().map_err(|_| bad("bad score"))?);
    }
    Ok(scores)
}

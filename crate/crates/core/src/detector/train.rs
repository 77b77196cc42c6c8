use std::path::Path;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::model::{backward, Batch, Inputs};
use super::params::{init_params, FusionParams};
use super::{Real, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::TextAttributedGraph;
use crate::io;
use crate::seed;

/// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
pub struct Adam<F> {
    m: FusionParams<F>,
    v: FusionParams<F>,
    t: i32,
}

impl<F: Real> Adam<F> {
    pub fn new(like: &FusionParams<F>) -> Self {
        let z = FusionParams::zeros(like.input_dim(), like.hidden_dim());
        Adam {
            m: z.clone(),
            v: z,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut FusionParams<F>, grad: &FusionParams<F>, lr: F) {
        let (b1, b2, eps) = (F::c(0.9), F::c(0.999), F::c(1e-8));
        self.t += 1;
        let c1 = F::one() - b1.powi(self.t);
        let c2 = F::one() - b2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                *p = *p - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Up to `cap` distinct neighbors of `v`, sampled without replacement.
pub(crate) fn sample_subgraph<R: Rng>(neighbors: &[usize], cap: usize, rng: &mut R) -> Vec<usize> {
    if neighbors.len() <= cap {
        return neighbors.to_vec();
    }
    let mut picked: Vec<usize> = index::sample(rng, neighbors.len(), cap)
        .into_iter()
        .map(|i| neighbors[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Batch over `nodes` with sampled subgraphs; negatives are a random cyclic
/// derangement of the batch, or a random other node for a batch of one.
pub fn sample_batch<R: Rng>(graph: &TextAttributedGraph, nodes: &[usize], cap: usize, rng: &mut R) -> Result<Batch> {
    if nodes.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pos_neighbors = nodes
        .iter()
        .map(|&v| Ok(sample_subgraph(graph.neighbors(v)?, cap, rng)))
        .collect::<Result<Vec<_>>>()?;
    let (neg_nodes, neg_neighbors) = if nodes.len() >= 2 {
        // Sattolo's shuffle yields a single cycle, hence no fixed points.
        let mut perm: Vec<usize> = (0..nodes.len()).collect();
        for i in (1..perm.len()).rev() {
            let j = rng.gen_range(0..i);
            perm.swap(i, j);
        }
        (
            perm.iter().map(|&k| nodes[k]).collect(),
            perm.iter().map(|&k| pos_neighbors[k].clone()).collect(),
        )
    } else {
        let n = graph.n();
        if n < 2 {
            return Err(Error::InvalidGraph("contrastive training needs at least 2 nodes".into()));
        }
        let mut u = rng.gen_range(0..n - 1);
        if u >= nodes[0] {
            u += 1;
        }
        (vec![u], vec![sample_subgraph(graph.neighbors(u)?, cap, rng)])
    };
    Ok(Batch {
        nodes: nodes.to_vec(),
        pos_neighbors,
        neg_nodes,
        neg_neighbors,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FusionParams<f32>,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

pub fn train(
    graph: &TextAttributedGraph,
    x_orig: &Array2<f32>,
    x_verd: &Array2<f32>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if x_orig.nrows() != graph.n() {
        return Err(Error::DimensionMismatch {
            expected: graph.n(),
            got: x_orig.nrows(),
        });
    }
    let mut params = init_params::<f32>(x_orig.ncols(), cfg.hidden_dim, seed::derive(cfg.seed, "train/init", &[]))?;
    let adj = graph.normalized_adjacency();
    let inputs = Inputs {
        adj: &adj,
        x_orig,
        x_verd,
        mode: cfg.fusion_mode,
    };
    let mut adam = Adam::new(&params);
    let (lr, wd) = (cfg.learning_rate as f32, cfg.weight_decay as f32);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng(cfg.seed, "train/epoch", &[epoch as u64]);
        let mut order: Vec<usize> = (0..graph.n()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = sample_batch(graph, chunk, cfg.neighbor_cap, &mut rng)?;
            let (loss, grad) = backward(&params, &batch, &inputs, wd)?;
            if !loss.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "training diverged at epoch {} (loss {loss}); lower train.learning_rate",
                    epoch + 1
                )));
            }
            adam.step(&mut params, &grad, lr);
            total += loss as f64;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        log::debug!("epoch {}: mean loss {mean:.6}", epoch + 1);
        trace.push(mean);
    }
    Ok(TrainOutcome {
        params,
        loss_trace: trace,
    })
}

/// `loss_trace.csv` with a 1-based epoch column.
pub fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{},{l:.6}\n", i + 1));
    }
    io::atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::model::tests::random_inputs;
    use crate::detector::FusionMode;
    use crate::graph::tests::graph;

    fn ring(n: usize) -> TextAttributedGraph {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        graph(n, &edges)
    }

    #[test]
    fn batches_are_derangements_from_true_adjacency() {
        let g = ring(10);
        let mut rng = seed::rng(1, "t", &[]);
        let nodes: Vec<usize> = (0..10).collect();
        for _ in 0..20 {
            let b = sample_batch(&g, &nodes, 1, &mut rng).unwrap();
            b.validate(10).unwrap();
            for (j, &v) in b.nodes.iter().enumerate() {
                assert_ne!(b.neg_nodes[j], v);
                assert_eq!(b.pos_neighbors[j].len(), 1);
                assert!(g.has_edge(v, b.pos_neighbors[j][0]));
            }
        }
        let single = sample_batch(&g, &[3], 8, &mut rng).unwrap();
        assert_ne!(single.neg_nodes[0], 3);
    }

    #[test]
    fn epochs_zero_returns_init() {
        let g = ring(6);
        let (xo, xv) = random_inputs(6, 8, 1);
        let (xo, xv) = (xo.mapv(|v| v as f32), xv.mapv(|v| v as f32));
        let cfg = TrainConfig { epochs: 0, hidden_dim: 4, ..TrainConfig::default() };
        let out = train(&g, &xo, &xv, &cfg).unwrap();
        assert!(out.loss_trace.is_empty());
        assert_eq!(out.params, init_params(8, 4, seed::derive(0, "train/init", &[])).unwrap());
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let g = ring(40);
        let (xo, xv) = random_inputs(40, 16, 2);
        let (xo, xv) = (xo.mapv(|v| v as f32), xv.mapv(|v| v as f32));
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 16,
            hidden_dim: 8,
            learning_rate: 5e-3,
            fusion_mode: FusionMode::Gate,
            ..TrainConfig::default()
        };
        let a = train(&g, &xo, &xv, &cfg).unwrap();
        let b = train(&g, &xo, &xv, &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.params, b.params);
        assert!(a.loss_trace.last().unwrap() < &a.loss_trace[0], "{:?}", a.loss_trace);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = FusionParams::<f64>::zeros(2, 1);
        let mut g = FusionParams::<f64>::zeros(2, 1);
        g.w.fill(3.0);
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 0.1);
        // First step has magnitude lr regardless of gradient scale.
        assert!(p.w.iter().all(|&x| (x + 0.1).abs() < 1e-6));
        assert!(p.w1.iter().all(|&x| x == 0.0));
    }
}

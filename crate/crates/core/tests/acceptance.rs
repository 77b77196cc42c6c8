//! Acceptance criteria 1 to 9. Runs as a plain binary so that every
//! criterion prints exactly one PASS/FAIL line whatever the outcome; the
//! process exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use tagcourt::config::{BackendConfig, Paths, PipelineConfig};
use tagcourt::court::{
    estimate_cost_time, run_court, CostModel, CourtMode, EvidenceStore, ModelTally, OracleBackend,
};
use tagcourt::detector::{
    batch_loss, grad_check, init_params, sample_batch, FusionMode, FusionParams, Inputs,
    TENSOR_NAMES,
};
use tagcourt::embed::{embed_hash_all, EmbeddingKind, EncoderConfig};
use tagcourt::graph::{GroundTruth, Label, NodeRecord, TextAttributedGraph};
use tagcourt::inject::{inject_all, InjectionConfig};
use tagcourt::metrics::{average_precision, roc_auc};
use tagcourt::pipeline::Pipeline;
use tagcourt::synth::{generate_synthetic_tag, SyntheticConfig};
use tagcourt::seed;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_graph(n: usize, rng: &mut impl Rng) -> TextAttributedGraph {
    let nodes = (0..n)
        .map(|id| NodeRecord { id, title: None, text: format!("node {id}") })
        .collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(0.35) {
                edges.push((u, v));
            }
        }
    }
    TextAttributedGraph::from_edges(nodes, edges).unwrap().0
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(2024, "acceptance/c1", &[]);
    let mut worst = (0.0f64, "", 0);
    for g_idx in 0..5 {
        let n = rng.gen_range(6..=10);
        let g = random_graph(n, &mut rng);
        let xo = Array2::from_shape_simple_fn((n, 16), || rng.gen_range(-1.0..1.0));
        let xv = Array2::from_shape_simple_fn((n, 16), || rng.gen_range(-1.0..1.0));
        let adj = g.normalized_adjacency();
        let mut params: FusionParams<f64> = init_params(16, 8, g_idx).unwrap();
        for b in [&mut params.b_f, &mut params.b_i, &mut params.b_o] {
            b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let nodes: Vec<usize> = (0..n).collect();
        let batch = sample_batch(&g, &nodes, 8, &mut rng).unwrap();
        for mode in [FusionMode::Gate, FusionMode::Mean, FusionMode::VerdictOnly, FusionMode::OrigOnly] {
            let inputs = Inputs { adj: &adj, x_orig: &xo, x_verd: &xv, mode };
            let report = grad_check(&params, &batch, &inputs, 1e-3, 1e-5).unwrap();
            assert_eq!(report.per_tensor.len(), TENSOR_NAMES.len());
            if report.max_rel_error >= worst.0 {
                worst = (report.max_rel_error, report.worst_tensor, g_idx);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst.0 <= 1e-4 && secs < 30.0,
        format!(
            "max relative error {:.2e} ({} on graph {}), {secs:.1}s",
            worst.0, worst.1, worst.2
        ),
    )
}

fn c2_loss_sanity() -> Outcome {
    let mut rng = seed::rng(7, "acceptance/c2", &[]);
    let g = random_graph(9, &mut rng);
    let xo = Array2::from_shape_simple_fn((9, 16), || rng.gen_range(-1.0..1.0));
    let xv = Array2::from_shape_simple_fn((9, 16), || rng.gen_range(-1.0..1.0));
    let adj = g.normalized_adjacency();
    let mut params: FusionParams<f64> = init_params(16, 8, 1).unwrap();
    params.w.fill(0.0);
    let nodes: Vec<usize> = (0..9).collect();
    let batch = sample_batch(&g, &nodes, 8, &mut rng).unwrap();
    let inputs = Inputs { adj: &adj, x_orig: &xo, x_verd: &xv, mode: FusionMode::Gate };
    let loss = batch_loss(&params, &batch, &inputs, 0.0).unwrap();
    let gap = (loss - std::f64::consts::LN_2).abs();
    check(gap <= 1e-6, format!("loss {loss:.12}, |loss - ln 2| = {gap:.1e}"))
}

fn concordance(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut good, mut pairs) = (0usize, 0usize);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                if scores[i] > scores[j] {
                    good += 1;
                }
            }
        }
    }
    good as f64 / pairs as f64
}

/// Precision at the rank of each positive, averaged, from the sorted list.
fn direct_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let mut sum = 0.0;
    for (r, &k) in order.iter().enumerate() {
        if labels[k] {
            let above = order[..=r].iter().filter(|&&j| labels[j]).count();
            sum += above as f64 / (r + 1) as f64;
        }
    }
    sum / n_pos as f64
}

fn c3_metric_oracles() -> Outcome {
    let start = Instant::now();
    let scores = [0.91, 0.13, 0.57, 0.42, 0.78, 0.05];
    let (mut auc_checked, mut ap_checked, mut mismatches) = (0, 0, Vec::new());
    for mask in 0u32..64 {
        let labels: Vec<bool> = (0..6).map(|i| mask >> i & 1 == 1).collect();
        let n_pos = labels.iter().filter(|&&l| l).count();
        if n_pos > 0 && n_pos < 6 {
            auc_checked += 1;
            if roc_auc(&scores, &labels).unwrap() != concordance(&scores, &labels) {
                mismatches.push(format!("auc mask {mask:06b}"));
            }
        } else if roc_auc(&scores, &labels).is_ok() {
            mismatches.push(format!("auc defined for single-class mask {mask:06b}"));
        }
        if n_pos > 0 {
            ap_checked += 1;
            if average_precision(&scores, &labels).unwrap() != direct_ap(&scores, &labels) {
                mismatches.push(format!("ap mask {mask:06b}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches.is_empty() && secs < 5.0,
        format!(
            "{auc_checked} AUC and {ap_checked} AP labelings exact, mismatches {mismatches:?}, {secs:.3}s"
        ),
    )
}

fn c4_cost() -> Outcome {
    let tallies = [
        ModelTally { model: "llama-3.1-8b".into(), input_tokens: 317.0 + 410.0, output_tokens: 47.0 + 124.0 },
        ModelTally { model: "llama-3.1-70b".into(), input_tokens: 2257.0, output_tokens: 157.0 },
    ];
    let r = estimate_cost_time(&tallies, &CostModel::llama_3_1(), 169_343).unwrap();
    let two = estimate_cost_time(&tallies, &CostModel { parallelism: 2, ..CostModel::llama_3_1() }, 169_343).unwrap();
    check(
        (r.cost - 86.3).abs() <= 0.5 && (r.minutes - 426.0).abs() <= 5.0 && (two.minutes - r.minutes / 2.0).abs() < 1e-9,
        format!("cost {:.2}, minutes {:.1} (p=2: {:.1})", r.cost, r.minutes, two.minutes),
    )
}

fn c5_injection() -> Outcome {
    let tag = generate_synthetic_tag(&SyntheticConfig {
        n: 2708,
        communities: 7,
        intra_p: 0.004,
        inter_p: 0.0003,
        seed: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let clean = &tag.graph;
    let texts: Vec<&str> = clean.nodes().iter().map(|r| r.text.as_str()).collect();
    let emb = embed_hash_all(&texts, 64, EmbeddingKind::Orig).unwrap();
    let cfg = InjectionConfig { m: 27, q: 9, p: 3, seed: 5, ..InjectionConfig::default() };
    let out = inject_all(clean, &emb, &cfg).unwrap();
    let labels = &out.labels;
    let counts = [
        labels.count(Label::Contextual),
        labels.count(Label::StructuralClique),
        labels.count(Label::StructuralEdge),
    ];
    let mut problems = Vec::new();
    for v in 0..clean.n() {
        let changed = clean.text(v) != out.graph.text(v);
        match labels.label(v) {
            Label::Contextual if !changed => problems.push(format!("contextual {v} text unchanged")),
            Label::Contextual => {}
            _ if changed => problems.push(format!("non-contextual {v} text changed")),
            _ => {}
        }
    }
    let injected = out.report.injected_edge_set();
    for (u, v) in clean.edges() {
        if !out.graph.has_edge(u, v) {
            problems.push(format!("edge {u}-{v} removed"));
        }
    }
    for (u, v) in out.graph.edges() {
        if clean.has_edge(u, v) {
            continue;
        }
        if !injected.contains(&(u, v)) {
            problems.push(format!("unreported edge {u}-{v}"));
        }
        if !labels.label(u).is_structural() && !labels.label(v).is_structural() {
            problems.push(format!("edge {u}-{v} added between non-structural nodes"));
        }
    }
    let contextual = labels.count(Label::Contextual);
    check(
        labels.anomaly_count() == 108 && contextual == 54 && counts[1] == 27 && counts[2] == 27 && problems.is_empty(),
        format!(
            "{} anomalies (contextual {contextual} = insertion 27 + replacement 27, clique {}, edge {}), {} edges added, problems {:?}",
            labels.anomaly_count(),
            counts[1],
            counts[2],
            out.report.edges_added,
            &problems[..problems.len().min(3)]
        ),
    )
}

/// The end-to-end configuration shared by criteria 6 and 9.
fn e2e_config(work: &Path, seed: u64, mode: FusionMode, accuracy: f64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed,
        paths: Paths { work_dir: work.to_path_buf(), ..Paths::default() },
        synthetic: SyntheticConfig { n: 400, communities: 5, ..SyntheticConfig::default() },
        injection: InjectionConfig { m: 5, ..InjectionConfig::default() },
        encoder: EncoderConfig::Hash { dim: 64 },
        backend: BackendConfig::Oracle { accuracy },
        ..PipelineConfig::default()
    };
    cfg.court.court_mode = CourtMode::FullCourt;
    cfg.train.learning_rate = 3e-3;
    cfg.train.epochs = 25;
    cfg.train.batch_size = 64;
    cfg.train.neighbor_cap = 8;
    cfg.train.rounds = 256;
    cfg.train.fusion_mode = mode;
    cfg
}

struct E2eRun {
    gate_auc: f64,
    control_auc: f64,
    first_loss: f64,
    last_loss: f64,
}

fn e2e_seed(seed: u64) -> E2eRun {
    let dir = tempfile::tempdir().unwrap();
    let gate = Pipeline::new(e2e_config(&dir.path().join("gate"), seed, FusionMode::Gate, 0.8)).unwrap();
    gate.run_all().unwrap();
    let trace = tagcourt::io::read_json::<serde_json::Value>(&gate.config().paths.metrics()).unwrap();
    let gate_auc = trace["auc"].as_f64().unwrap();
    let losses: Vec<f64> = std::fs::read_to_string(gate.config().paths.loss_trace())
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    // Control: verdicts from a coin-flip court, ignored by orig_only fusion.
    let control = Pipeline::new(e2e_config(&dir.path().join("control"), seed, FusionMode::OrigOnly, 0.5)).unwrap();
    control.run_all().unwrap();
    let m = tagcourt::io::read_json::<serde_json::Value>(&control.config().paths.metrics()).unwrap();
    E2eRun {
        gate_auc,
        control_auc: m["auc"].as_f64().unwrap(),
        first_loss: losses[0],
        last_loss: *losses.last().unwrap(),
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

fn c6_end_to_end(runs: &[E2eRun], elapsed: Duration) -> Outcome {
    let gate = median(runs.iter().map(|r| r.gate_auc).collect());
    let control = median(runs.iter().map(|r| r.control_auc).collect());
    let per_seed: Vec<String> = runs.iter().map(|r| format!("{:.3}/{:.3}", r.gate_auc, r.control_auc)).collect();
    check(
        gate >= 0.70 && gate >= control + 0.15 && elapsed.as_secs_f64() < 120.0,
        format!(
            "median AUC gate {gate:.3} (need >= 0.70), control {control:.3}, gap {:+.3} (need >= +0.15), per seed gate/control {per_seed:?}, {:.1}s",
            gate - control,
            elapsed.as_secs_f64()
        ),
    )
}

fn c7_court() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = e2e_config(&dir.path().join("work"), 11, FusionMode::Gate, 1.0);
    let pl = Pipeline::new(cfg).unwrap();
    pl.gen_synth().unwrap();
    let report = pl.inject().unwrap();
    let p = &pl.config().paths;
    let g = tagcourt::graph::load_graph(&p.graph_nodes(), &p.graph_edges()).unwrap().graph;
    let truth = GroundTruth::load(&p.labels(), g.n(), None).unwrap();
    let court_cfg = pl.court_config();
    let backend = OracleBackend::new(truth.clone(), report.injected_edge_set(), 1.0, 3).unwrap();
    let store = EvidenceStore::open(&p.store()).unwrap();
    let first = run_court(&g, &court_cfg, &backend, &store).unwrap();
    let verdicts = store.verdicts();
    let correct = verdicts
        .iter()
        .filter(|v| v.judgment.is_accusation() == truth.label(v.node_id).is_anomalous())
        .count();
    let reopened = EvidenceStore::open(&p.store()).unwrap();
    let second = run_court(&g, &court_cfg, &backend, &reopened).unwrap();
    check(
        verdicts.len() == g.n() && correct == g.n() && second.backend_calls == 0 && first.failed.is_empty(),
        format!(
            "{correct}/{} verdicts match ground truth, first run {} calls, rerun {} calls",
            verdicts.len(),
            first.backend_calls,
            second.backend_calls
        ),
    )
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    let run = || {
        let _ = std::fs::remove_dir_all(&work);
        let pl = Pipeline::new(e2e_config(&work, 21, FusionMode::Gate, 0.8)).unwrap();
        pl.run_all().unwrap();
        let p = &pl.config().paths;
        (std::fs::read(p.scores()).unwrap(), std::fs::read(p.metrics()).unwrap())
    };
    let a = run();
    let b = run();
    check(
        a == b,
        format!(
            "scores.csv {} bytes identical: {}, metrics.json identical: {}",
            a.0.len(),
            a.0 == b.0,
            a.1 == b.1
        ),
    )
}

fn c9_training(runs: &[E2eRun]) -> Outcome {
    let traces: Vec<String> = runs.iter().map(|r| format!("{:.3}->{:.3}", r.first_loss, r.last_loss)).collect();
    check(runs.iter().all(|r| r.last_loss < r.first_loss), format!("epoch-mean loss first->last per seed {traces:?}"))
}

fn report(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(detail) => {
            println!("criterion {id} {name}: PASS {detail}");
            true
        }
        Err(detail) => {
            println!("criterion {id} {name}: FAIL {detail}");
            false
        }
    }
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored.
    let mut ok = true;
    ok &= report(1, "gradient correctness", c1_gradients);
    ok &= report(2, "loss sanity", c2_loss_sanity);
    ok &= report(3, "metric oracles", c3_metric_oracles);
    ok &= report(4, "cost/time reproduction", c4_cost);
    ok &= report(5, "injection accounting", c5_injection);

    let start = Instant::now();
    let runs = catch_unwind(|| (0..5).map(e2e_seed).collect::<Vec<_>>());
    let elapsed = start.elapsed();
    match &runs {
        Ok(runs) => {
            ok &= report(6, "end-to-end synthetic detection", || c6_end_to_end(runs, elapsed));
        }
        Err(_) => {
            println!("criterion 6 end-to-end synthetic detection: FAIL pipeline panicked");
            ok = false;
        }
    }
    ok &= report(7, "court correctness", c7_court);
    ok &= report(8, "determinism", c8_determinism);
    match &runs {
        Ok(runs) => ok &= report(9, "training progress", || c9_training(runs)),
        Err(_) => {
            println!("criterion 9 training progress: FAIL pipeline panicked");
            ok = false;
        }
    }
    if !ok {
        std::process::exit(1);
    }
}

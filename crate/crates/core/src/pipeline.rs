//! Stage runners behind the CLI. Each stage reads its inputs from disk and
//! writes its outputs atomically, so any stage can be rerun alone and
//! `run-all` is exactly the sequence of stages.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::config::{BackendConfig, PipelineConfig};
use crate::court::{
    estimate_cost_time, run_court, tallies_from_store, CostReport, CourtConfig, CourtSummary,
    EvidenceStore, HttpBackend, LlmBackend, OracleBackend,
};
use crate::detector::{
    read_scores_csv, score_nodes, train, write_loss_trace, write_scores_csv, FusionParams,
    ScoreReport, TrainConfig, TrainOutcome,
};
use crate::embed::{EmbeddingKind, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::graph::{load_graph, GroundTruth, LoadedGraph};
use crate::inject::{inject_all, InjectionConfig, InjectionReport};
use crate::io;
use crate::metrics::{evaluate, roc_curve, MetricsReport};
use crate::seed;
use crate::synth::{generate_synthetic_tag, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenSynth,
    Inject,
    Embed,
    Court,
    Train,
    Score,
    Eval,
    EstimateCost,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenSynth,
        Stage::Inject,
        Stage::Embed,
        Stage::Court,
        Stage::Train,
        Stage::Score,
        Stage::Eval,
        Stage::EstimateCost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenSynth => "gen-synth",
            Stage::Inject => "inject",
            Stage::Embed => "embed",
            Stage::Court => "court",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Eval => "eval",
            Stage::EstimateCost => "estimate-cost",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Serialize)]
struct Failures<'a> {
    failed: &'a [usize],
}

pub struct Pipeline {
    cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Pipeline { cfg })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// A module's effective seed: its own seed mixed with the root seed.
    pub fn module_seed(&self, label: &str, own: u64) -> u64 {
        seed::derive(self.cfg.seed, label, &[own])
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.module_seed("synthetic", self.cfg.synthetic.seed),
            ..self.cfg.synthetic.clone()
        }
    }

    pub fn injection_config(&self) -> InjectionConfig {
        InjectionConfig {
            seed: self.module_seed("injection", self.cfg.injection.seed),
            ..self.cfg.injection.clone()
        }
    }

    pub fn court_config(&self) -> CourtConfig {
        CourtConfig {
            dataset_profile: self.cfg.dataset_profile,
            seed: self.module_seed("court", self.cfg.court.seed),
            ..self.cfg.court.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.module_seed("train", self.cfg.train.seed),
            ..self.cfg.train.clone()
        }
    }

    fn score_seed(&self) -> u64 {
        self.module_seed("score", self.cfg.train.seed)
    }

    fn graph(&self) -> Result<LoadedGraph> {
        let p = &self.cfg.paths;
        let loaded = load_graph(&p.graph_nodes(), &p.graph_edges())?;
        if loaded.duplicate_edges > 0 {
            log::warn!("{} duplicate edges ignored", loaded.duplicate_edges);
        }
        Ok(loaded)
    }

    fn labels(&self, loaded: &LoadedGraph) -> Result<GroundTruth> {
        GroundTruth::load(&self.cfg.paths.labels(), loaded.graph.n(), loaded.id_map.as_ref())
    }

    fn embeddings(&self, path: &std::path::Path, kind: EmbeddingKind, n: usize) -> Result<EmbeddingMatrix> {
        let m = EmbeddingMatrix::load(path, kind)?;
        if m.n() != n {
            return Err(Error::InvalidGraph(format!(
                "{} has {} rows but the graph has {n} nodes; rerun the stage that writes it",
                path.display(),
                m.n()
            )));
        }
        Ok(m)
    }

    pub fn gen_synth(&self) -> Result<()> {
        let p = &self.cfg.paths;
        let tag = generate_synthetic_tag(&self.synthetic_config())?;
        tag.graph.save(&p.synth_nodes(), &p.synth_edges())?;
        io::write_json_pretty(&p.communities(), &tag.community)?;
        log::info!("gen-synth: n={} m={}", tag.graph.n(), tag.graph.m());
        Ok(())
    }

    pub fn inject(&self) -> Result<InjectionReport> {
        let p = &self.cfg.paths;
        let clean = load_graph(&p.clean_nodes(), &p.clean_edges())?.graph;
        let texts: Vec<&str> = (0..clean.n()).map(|v| clean.text(v)).collect();
        let emb = self.cfg.encoder.encode(&texts, EmbeddingKind::Orig)?;
        let out = inject_all(&clean, &emb, &self.injection_config())?;
        out.graph.save(&p.injected_nodes(), &p.injected_edges())?;
        out.labels.save(&p.injected_labels(), out.graph.n())?;
        io::write_json_pretty(&p.injection_report(), &out.report)?;
        for w in &out.report.warnings {
            log::warn!("inject: {w}");
        }
        log::info!(
            "inject: {} anomalies, {} edges added",
            out.labels.anomaly_count(),
            out.report.edges_added
        );
        Ok(out.report)
    }

    pub fn embed(&self) -> Result<()> {
        let g = self.graph()?.graph;
        let texts: Vec<&str> = (0..g.n()).map(|v| g.text(v)).collect();
        let m = self.cfg.encoder.encode(&texts, EmbeddingKind::Orig)?;
        m.save(&self.cfg.paths.x_orig())?;
        log::info!("embed: {} x {}", m.n(), m.d());
        Ok(())
    }

    fn backend(&self, loaded: &LoadedGraph) -> Result<Box<dyn LlmBackend>> {
        match &self.cfg.backend {
            BackendConfig::Oracle { accuracy } => {
                let truth = self.labels(loaded)?;
                let report_path = self.cfg.paths.injection_report();
                let edges = if report_path.exists() {
                    io::read_json::<InjectionReport>(&report_path)?.injected_edge_set()
                } else {
                    log::warn!(
                        "{} not found; the oracle treats every edge as original",
                        report_path.display()
                    );
                    Default::default()
                };
                let seed = self.module_seed("oracle", self.cfg.court.seed);
                Ok(Box::new(OracleBackend::new(truth, edges, *accuracy, seed)?))
            }
            BackendConfig::Http(http) => Ok(Box::new(HttpBackend::new(http)?)),
        }
    }

    /// Runs Stage I, then embeds every verdict into `x_verd.bin`. Nodes
    /// without a verdict get the empty-text row.
    pub fn court(&self) -> Result<CourtSummary> {
        let loaded = self.graph()?;
        let g = &loaded.graph;
        let backend = self.backend(&loaded)?;
        let store = EvidenceStore::open(&self.cfg.paths.store())?;
        let summary = run_court(g, &self.court_config(), backend.as_ref(), &store)?;
        log::info!("court: {} backend calls", summary.backend_calls);
        if summary.unparseable > 0 {
            log::warn!("court: {} unparseable outputs recorded as non-accusatory", summary.unparseable);
        }
        if !summary.failed.is_empty() {
            log::warn!(
                "court: {} nodes failed; rerun court to retry them",
                summary.failed.len()
            );
        }
        io::write_json_pretty(
            &self.cfg.paths.failures(),
            &Failures {
                failed: &summary.failed,
            },
        )?;
        let texts: Vec<String> = (0..g.n())
            .map(|v| store.verdict(v).map(|x| x.text(self.cfg.verdict_text)).unwrap_or_default())
            .collect();
        let m = self.cfg.encoder.encode(&texts, EmbeddingKind::Verdict)?;
        m.save(&self.cfg.paths.x_verd())?;
        Ok(summary)
    }

    pub fn train(&self) -> Result<TrainOutcome> {
        let g = self.graph()?.graph;
        let p = &self.cfg.paths;
        let xo = self.embeddings(&p.x_orig(), EmbeddingKind::Orig, g.n())?;
        let xv = self.embeddings(&p.x_verd(), EmbeddingKind::Verdict, g.n())?;
        let out = train(&g, &xo.to_array(), &xv.to_array(), &self.train_config())?;
        out.params.save(&p.params())?;
        write_loss_trace(&p.loss_trace(), &out.loss_trace)?;
        if let (Some(first), Some(last)) = (out.loss_trace.first(), out.loss_trace.last()) {
            log::info!("train: loss {first:.4} -> {last:.4}");
        }
        Ok(out)
    }

    pub fn score(&self) -> Result<ScoreReport> {
        let g = self.graph()?.graph;
        let p = &self.cfg.paths;
        let xo = self.embeddings(&p.x_orig(), EmbeddingKind::Orig, g.n())?;
        let xv = self.embeddings(&p.x_verd(), EmbeddingKind::Verdict, g.n())?;
        let params = FusionParams::<f32>::load(&p.params())?;
        let t = &self.cfg.train;
        let report = score_nodes(
            &params,
            &g,
            &xo.to_array(),
            &xv.to_array(),
            t.fusion_mode,
            t.rounds,
            t.neighbor_cap,
            self.score_seed(),
        )?;
        write_scores_csv(&p.scores(), &report)?;
        Ok(report)
    }

    pub fn eval(&self) -> Result<MetricsReport> {
        let p = &self.cfg.paths;
        let labels_path = p.labels();
        if !labels_path.exists() {
            return Err(Error::MissingInput(labels_path));
        }
        let loaded = self.graph()?;
        let scores = read_scores_csv(&p.scores())?;
        if scores.len() != loaded.graph.n() {
            return Err(Error::DimensionMismatch {
                expected: loaded.graph.n(),
                got: scores.len(),
            });
        }
        let labels = self.labels(&loaded)?.binary(scores.len());
        let report = evaluate(&scores, &labels)?;
        io::write_json_pretty(&p.metrics(), &report)?;
        let mut roc = String::from("fpr,tpr\n");
        for (fpr, tpr) in roc_curve(&scores, &labels)? {
            roc.push_str(&format!("{fpr:.6},{tpr:.6}\n"));
        }
        io::atomic_write(&p.roc(), roc.as_bytes())?;
        log::info!("eval: auc {:.4} ap {:.4}", report.auc, report.ap);
        Ok(report)
    }

    pub fn estimate_cost(&self) -> Result<CostReport> {
        let c = &self.cfg.cost;
        let tallies = match &c.tallies {
            Some(t) => t.clone(),
            None => {
                let n = self.graph()?.graph.n();
                let store = EvidenceStore::open(&self.cfg.paths.store())?;
                tallies_from_store(&store.evidence(), &store.verdicts(), n)
            }
        };
        let n = match c.nodes {
            Some(n) => n,
            None => self.graph()?.graph.n() as u64,
        };
        let report = estimate_cost_time(&tallies, &c.pricing, n)?;
        io::write_json_pretty(&self.cfg.paths.cost_report(), &report)?;
        log::info!(
            "estimate-cost: {:.2} for {} nodes, {:.1} min at parallelism {}",
            report.cost,
            report.nodes,
            report.minutes,
            report.parallelism
        );
        Ok(report)
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        log::info!("stage {stage}");
        match stage {
            Stage::GenSynth => self.gen_synth(),
            Stage::Inject => self.inject().map(drop),
            Stage::Embed => self.embed(),
            Stage::Court => self.court().map(drop),
            Stage::Train => self.train().map(drop),
            Stage::Score => self.score().map(drop),
            Stage::Eval => self.eval().map(drop),
            Stage::EstimateCost => self.estimate_cost().map(drop),
        }
    }

    /// Every stage in order, stopping at the first failure. `gen-synth` is
    /// skipped when a clean source graph is configured and `inject` when
    /// the graph under test is supplied directly.
    pub fn run_all(&self) -> Result<()> {
        let p = &self.cfg.paths;
        for stage in Stage::ALL {
            let skip = match stage {
                Stage::GenSynth => p.source_nodes.is_some() || p.nodes.is_some(),
                Stage::Inject => p.nodes.is_some(),
                _ => false,
            };
            if skip {
                log::info!("stage {stage} skipped: input supplied by config");
                continue;
            }
            self.run(stage)?;
        }
        Ok(())
    }
}

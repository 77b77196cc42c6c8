//! The pipeline's JSON configuration. Every section has defaults, unknown
//! keys are rejected and type errors name the offending field as a JSON
//! pointer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::court::{CostModel, CourtConfig, HttpBackendConfig, ModelTally, Profile, VerdictText};
use crate::detector::TrainConfig;
use crate::embed::EncoderConfig;
use crate::error::{Error, Result};
use crate::inject::InjectionConfig;
use crate::synth::SyntheticConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Root seed; each module's own seed is mixed with it by a labeled hash.
    pub seed: u64,
    pub dataset_profile: Profile,
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub injection: InjectionConfig,
    pub encoder: EncoderConfig,
    pub verdict_text: VerdictText,
    pub court: CourtConfig,
    pub backend: BackendConfig,
    pub train: TrainConfig,
    pub cost: CostConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            dataset_profile: Profile::Synthetic,
            paths: Paths::default(),
            synthetic: SyntheticConfig::default(),
            injection: InjectionConfig::default(),
            encoder: EncoderConfig::default(),
            verdict_text: VerdictText::default(),
            court: CourtConfig::default(),
            backend: BackendConfig::default(),
            train: TrainConfig::default(),
            cost: CostConfig::default(),
        }
    }
}

/// Artifact locations. Everything not overridden lives under `work_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub work_dir: PathBuf,
    /// Clean graph fed to `inject`; defaults to the `gen-synth` output.
    pub source_nodes: Option<PathBuf>,
    pub source_edges: Option<PathBuf>,
    /// Graph under test; defaults to the `inject` output.
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub store: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            work_dir: PathBuf::from("work"),
            source_nodes: None,
            source_edges: None,
            nodes: None,
            edges: None,
            labels: None,
            store: None,
        }
    }
}

impl Paths {
    fn at(&self, rel: &str) -> PathBuf {
        self.work_dir.join(rel)
    }

    fn or(&self, over: &Option<PathBuf>, rel: &str) -> PathBuf {
        over.clone().unwrap_or_else(|| self.at(rel))
    }

    pub fn clean_nodes(&self) -> PathBuf {
        self.or(&self.source_nodes, "clean/nodes.jsonl")
    }

    pub fn clean_edges(&self) -> PathBuf {
        self.or(&self.source_edges, "clean/edges.tsv")
    }

    /// Where `gen-synth` writes; independent of the source overrides.
    pub fn synth_nodes(&self) -> PathBuf {
        self.at("clean/nodes.jsonl")
    }

    pub fn synth_edges(&self) -> PathBuf {
        self.at("clean/edges.tsv")
    }

    pub fn communities(&self) -> PathBuf {
        self.at("clean/communities.json")
    }

    /// Where `inject` writes; independent of the graph overrides.
    pub fn injected_nodes(&self) -> PathBuf {
        self.at("graph/nodes.jsonl")
    }

    pub fn injected_edges(&self) -> PathBuf {
        self.at("graph/edges.tsv")
    }

    pub fn injected_labels(&self) -> PathBuf {
        self.at("graph/labels.jsonl")
    }

    pub fn graph_nodes(&self) -> PathBuf {
        self.or(&self.nodes, "graph/nodes.jsonl")
    }

    pub fn graph_edges(&self) -> PathBuf {
        self.or(&self.edges, "graph/edges.tsv")
    }

    pub fn labels(&self) -> PathBuf {
        self.or(&self.labels, "graph/labels.jsonl")
    }

    pub fn injection_report(&self) -> PathBuf {
        self.at("graph/injection_report.json")
    }

    pub fn store(&self) -> PathBuf {
        self.or(&self.store, "store")
    }

    pub fn x_orig(&self) -> PathBuf {
        self.at("x_orig.bin")
    }

    pub fn x_verd(&self) -> PathBuf {
        self.at("x_verd.bin")
    }

    pub fn failures(&self) -> PathBuf {
        self.at("failures.json")
    }

    pub fn params(&self) -> PathBuf {
        self.at("params.bin")
    }

    pub fn loss_trace(&self) -> PathBuf {
        self.at("loss_trace.csv")
    }

    pub fn scores(&self) -> PathBuf {
        self.at("scores.csv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.at("metrics.json")
    }

    pub fn roc(&self) -> PathBuf {
        self.at("roc.csv")
    }

    pub fn cost_report(&self) -> PathBuf {
        self.at("cost.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Answers from the injected ground truth.
    Oracle {
        #[serde(default = "default_accuracy")]
        accuracy: f64,
    },
    Http(HttpBackendConfig),
}

fn default_accuracy() -> f64 {
    0.8
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Oracle {
            accuracy: default_accuracy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub pricing: CostModel,
    /// Per-node token tallies; taken from the evidence store when absent.
    pub tallies: Option<Vec<ModelTally>>,
    /// Node count to extrapolate to; the graph's size when absent.
    pub nodes: Option<u64>,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            pricing: CostModel::default(),
            tallies: None,
            nodes: None,
        }
    }
}

/// Renders a deserialization path as a JSON pointer.
fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

impl PipelineConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            Error::InvalidConfig(format!("{}: {}", pointer(e.path()), e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.court.validate()?;
        self.train.validate()?;
        self.cost.pricing.validate()?;
        if let BackendConfig::Oracle { accuracy } = self.backend {
            if !(0.0..=1.0).contains(&accuracy) {
                return Err(Error::InvalidConfig(format!(
                    "backend.accuracy must lie in [0, 1], got {accuracy}"
                )));
            }
        }
        if let EncoderConfig::Hash { dim } = self.encoder {
            if dim < 8 || !dim.is_power_of_two() {
                return Err(Error::InvalidConfig(format!(
                    "encoder.dim must be a power of two >= 8, got {dim}"
                )));
            }
        }
        if let Some(tallies) = &self.cost.tallies {
            if tallies.iter().any(|t| t.input_tokens < 0.0 || t.output_tokens < 0.0) {
                return Err(Error::InvalidConfig("cost.tallies must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Pretty JSON with every default filled in.
    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvidenceRecord, Verdict};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPricing {
    pub model: String,
    /// Blended price per 10^6 tokens.
    pub price_per_million: f64,
    /// Output speed in tokens per second.
    pub tokens_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub models: Vec<ModelPricing>,
    pub parallelism: usize,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::llama_3_1()
    }
}

impl CostModel {
    /// Llama 3.1 8B prosecutors and 70B judge at hosted-API rates.
    pub fn llama_3_1() -> Self {
        let m = |model: &str, price| ModelPricing {
            model: model.into(),
            price_per_million: price,
            tokens_per_second: 2173.0,
        };
        CostModel {
            models: vec![m("llama-3.1-8b", 0.03), m("llama-3.1-70b", 0.20)],
            parallelism: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::InvalidConfig("cost.parallelism must be >= 1".into()));
        }
        for m in &self.models {
            if !(m.price_per_million > 0.0 && m.tokens_per_second > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "cost model {}: price and speed must be positive",
                    m.model
                )));
            }
        }
        Ok(())
    }

    fn pricing(&self, model: &str) -> Result<&ModelPricing> {
        self.models
            .iter()
            .find(|m| m.model == model)
            .ok_or_else(|| Error::InvalidConfig(format!("no pricing for model {model}")))
    }
}

/// Average tokens per node for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTally {
    pub model: String,
    pub input_tokens: f64,
    pub output_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub cost: f64,
    pub minutes: f64,
    pub nodes: u64,
    pub parallelism: usize,
    pub tallies: Vec<ModelTally>,
}

/// cost = Σ_model (in + out)·price/10^6·n and
/// minutes = Σ_model out/(speed·60)·n/p.
pub fn estimate_cost_time(tallies: &[ModelTally], model: &CostModel, n: u64) -> Result<CostReport> {
    model.validate()?;
    let (mut cost, mut minutes) = (0.0, 0.0);
    for t in tallies {
        if t.input_tokens < 0.0 || t.output_tokens < 0.0 {
            return Err(Error::InvalidConfig(format!("negative token tally for {}", t.model)));
        }
        if t.input_tokens == 0.0 && t.output_tokens == 0.0 {
            continue;
        }
        let p = model.pricing(&t.model)?;
        cost += (t.input_tokens + t.output_tokens) * p.price_per_million / 1e6;
        minutes += t.output_tokens / (p.tokens_per_second * 60.0);
    }
    Ok(CostReport {
        cost: cost * n as f64,
        minutes: minutes * n as f64 / model.parallelism as f64,
        nodes: n,
        parallelism: model.parallelism,
        tallies: tallies.to_vec(),
    })
}

/// Per-node token averages by model over a finished store of `n` nodes.
pub fn tallies_from_store(evidence: &[EvidenceRecord], verdicts: &[Verdict], n: usize) -> Vec<ModelTally> {
    let mut sums: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    let rows = evidence
        .iter()
        .map(|r| (r.model.as_str(), r.prompt_tokens, r.output_tokens))
        .chain(verdicts.iter().map(|v| (v.model.as_str(), v.prompt_tokens, v.output_tokens)));
    for (model, input, output) in rows {
        if input == 0 && output == 0 {
            continue;
        }
        let e = sums.entry(model).or_default();
        e.0 += input;
        e.1 += output;
    }
    let n = n.max(1) as f64;
    sums.into_iter()
        .map(|(model, (i, o))| ModelTally {
            model: model.to_string(),
            input_tokens: i as f64 / n,
            output_tokens: o as f64 / n,
        })
        .collect()
}

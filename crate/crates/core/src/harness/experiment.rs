use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SynthConfig};
use super::metrics::rela_impr;
use super::synth::gen_synthetic;
use super::train::{prepare_dataset, train, EvalReport};
use crate::feedlog::FeedbackEvent;
use crate::model::ModelVariant;
use crate::{Error, Result};

/// Where a run's events come from. Synthetic data is regenerated per seed
/// with the run seed as the generator seed.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Events(Vec<FeedbackEvent>),
    Synthetic(SynthConfig),
}

impl DataSource {
    pub fn events(&self, seed: u64) -> Result<Vec<FeedbackEvent>> {
        match self {
            DataSource::Events(events) => Ok(events.clone()),
            DataSource::Synthetic(cfg) => gen_synthetic(&SynthConfig { seed, ..cfg.clone() }),
        }
    }

    fn synth(&self) -> Option<SynthConfig> {
        match self {
            DataSource::Synthetic(cfg) => Some(cfg.clone()),
            DataSource::Events(_) => None,
        }
    }
}

/// Preprocess, train and evaluate one configuration.
pub fn run_experiment(cfg: &ExperimentConfig, source: &DataSource) -> Result<EvalReport> {
    let events = source.events(cfg.seed)?;
    let dataset = prepare_dataset(&events, cfg)?;
    Ok(train(&dataset, cfg)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: ModelVariant,
    pub auc_mean: f64,
    pub auc_std: f64,
    /// One AUC per seed, in seed order.
    pub aucs: Vec<f64>,
    /// Mean over seeds of the improvement over the average-pooling baseline.
    pub rela_impr_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    pub synth: Option<SynthConfig>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: ModelVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,auc_mean,auc_std,rela_impr_mean\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.variant.name(),
                r.auc_mean,
                r.auc_std,
                r.rela_impr_mean
            ));
        }
        out
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Train every variant in `variants` on every seed. Each seed's data is
/// prepared once and shared by all variants. Relative improvement is taken
/// against the average-pooling baseline of the same seed, which is always
/// trained even when not listed.
pub fn ablate(
    base: &ExperimentConfig,
    source: &DataSource,
    seeds: &[u64],
    variants: &[ModelVariant],
) -> Result<AblationReport> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one variant".into()));
    }
    let mut order: Vec<ModelVariant> = variants.to_vec();
    if !order.contains(&ModelVariant::AvgPoolDnn) {
        order.push(ModelVariant::AvgPoolDnn);
    }
    // aucs[v][s]
    let mut aucs = vec![Vec::with_capacity(seeds.len()); order.len()];
    for &seed in seeds {
        let cfg = ExperimentConfig { seed, ..base.clone() };
        let events = source.events(seed)?;
        let dataset = prepare_dataset(&events, &cfg)?;
        for (slot, &variant) in order.iter().enumerate() {
            let run = ExperimentConfig { variant, ..cfg.clone() };
            aucs[slot].push(train(&dataset, &run)?.1.auc);
        }
    }
    let base_slot = order.iter().position(|&v| v == ModelVariant::AvgPoolDnn).expect("baseline added above");
    let base_aucs = aucs[base_slot].clone();
    let rows = order
        .iter()
        .zip(aucs)
        .filter(|(v, _)| variants.contains(v))
        .map(|(&variant, aucs)| {
            let (auc_mean, auc_std) = mean_std(&aucs);
            let impr = aucs
                .iter()
                .zip(&base_aucs)
                .map(|(&a, &b)| rela_impr(a, b))
                .collect::<Result<Vec<_>>>()?;
            Ok(AblationRow {
                variant,
                auc_mean,
                auc_std,
                rela_impr_mean: mean_std(&impr).0,
                aucs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        config: base.clone(),
        synth: source.synth(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    D,
    L,
}

impl SweepParam {
    pub fn default_values(self) -> Vec<usize> {
        match self {
            SweepParam::D => vec![8, 16, 32, 64, 128],
            SweepParam::L => vec![2, 4, 6, 8, 10],
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d" => Ok(SweepParam::D),
            "l" => Ok(SweepParam::L),
            other => Err(Error::Config(format!("cannot sweep {other}; expected d or l"))),
        }
    }
}

/// One report per value of the swept hyperparameter, in the given order.
pub fn sweep(base: &ExperimentConfig, source: &DataSource, param: SweepParam, values: &[usize]) -> Result<Vec<EvalReport>> {
    values
        .iter()
        .map(|&v| {
            let cfg = match param {
                SweepParam::D => ExperimentConfig { d: v, ..base.clone() },
                SweepParam::L => ExperimentConfig { l: v, ..base.clone() },
            };
            run_experiment(&cfg, source)
        })
        .collect()
}

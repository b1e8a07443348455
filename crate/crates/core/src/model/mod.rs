//! The click model: embeddings, exposure attention over each click's
//! context, projection enhancement of click representations, interest
//! extraction over clicks and contexts, and the prediction head.
//!
//! Ablations and the average-pooling baseline share the same code path and
//! differ only in [`ModelVariant`] and [`IemKind`].

mod layers;

pub use layers::{
    average_pool, embed_context, embed_item, enhance_click, extract_exposure_info, target_attention, EmbedCache,
    EmbeddingTables, ScoringInput,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::diffcore::{
    glorot, mlp3_forward, read_checkpoint, restore_params, save_checkpoint, CheckpointFormat, GradBuffer, Graph, Mlp3,
    ParamStore, Tensor, Var,
};
use crate::feedlog::TrainingSample;
use crate::{Error, Result};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` before the log.
pub const P_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Full,
    /// Per-click contexts replaced by one sequence-level exposure pool.
    NoStm,
    /// Click representations are not enhanced.
    NoPem,
    /// Both interest attentions replaced by average pooling.
    NoIem,
    /// Baseline: mean-pooled clicks and mean-pooled recent exposures.
    AvgPoolDnn,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::Full,
        ModelVariant::NoStm,
        ModelVariant::NoPem,
        ModelVariant::NoIem,
        ModelVariant::AvgPoolDnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::NoStm => "no_stm",
            ModelVariant::NoPem => "no_pem",
            ModelVariant::NoIem => "no_iem",
            ModelVariant::AvgPoolDnn => "avg_pool_dnn",
        }
    }

    /// Whether samples need per-click exposure contexts.
    pub fn needs_contexts(self) -> bool {
        matches!(self, ModelVariant::Full | ModelVariant::NoPem | ModelVariant::NoIem)
    }

    fn enhances(self) -> bool {
        matches!(self, ModelVariant::Full | ModelVariant::NoIem | ModelVariant::NoStm)
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown model variant {s}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IemKind {
    #[default]
    TargetAttention,
    AvgPool,
}

impl std::str::FromStr for IemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "target_attention" | "din" => Ok(IemKind::TargetAttention),
            "avg_pool" | "avgpool" => Ok(IemKind::AvgPool),
            other => Err(Error::Config(format!("unknown interest extractor {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    /// Length of dense feature vectors, when the data carries them.
    pub dense_dim: Option<usize>,
    pub num_items: usize,
    pub num_categories: usize,
    pub variant: ModelVariant,
    pub iem_kind: IemKind,
    pub scoring: ScoringInput,
    pub scorer_hidden: [usize; 2],
    pub head_hidden: [usize; 2],
}

impl ModelConfig {
    pub fn new(d: usize, num_items: usize, num_categories: usize) -> Self {
        ModelConfig {
            d,
            dense_dim: None,
            num_items,
            num_categories,
            variant: ModelVariant::Full,
            iem_kind: IemKind::TargetAttention,
            scoring: ScoringInput::Interaction,
            scorer_hidden: [36, 16],
            head_hidden: [64, 32],
        }
    }

    /// The interest extractor actually used once the variant is applied.
    pub fn effective_iem(&self) -> IemKind {
        match self.variant {
            ModelVariant::NoIem | ModelVariant::AvgPoolDnn => IemKind::AvgPool,
            _ => self.iem_kind,
        }
    }

    pub fn repr_dim(&self) -> usize {
        if self.dense_dim.is_some() {
            3 * self.d
        } else {
            2 * self.d
        }
    }
}

/// Values of the intermediates of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub p: f64,
    pub c: Vec<Vec<f64>>,
    pub e_enh: Vec<Vec<f64>>,
    pub e_clk_star: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub p: Var,
    pub e_tgt: Var,
    pub e_clk: Vec<Var>,
    pub c: Vec<Var>,
    pub e_enh: Vec<Var>,
    pub e_clk_star: Vec<Var>,
    pub h: Var,
    pub g: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tem4Ctr {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub tables: EmbeddingTables,
    pub stm_scorer: Option<Mlp3>,
    pub click_scorer: Option<Mlp3>,
    pub context_scorer: Option<Mlp3>,
    pub head: Mlp3,
}

/// Samples per gradient chunk. Chunks are reduced in a fixed order, so the
/// result does not depend on the number of worker threads.
const GRAD_CHUNK: usize = 32;

impl Tem4Ctr {
    /// Build a model with seeded initial weights. Only the scorers the
    /// variant uses are registered.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.d == 0 || config.num_items == 0 || config.num_categories == 0 {
            return Err(Error::Config("d and vocabulary sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.d;
        let item_table = params.add(
            "emb.item",
            glorot(config.num_items, d, &mut rng),
        )?;
        let category_table = params.add(
            "emb.category",
            glorot(config.num_categories, d, &mut rng),
        )?;
        let dense_proj = match config.dense_dim {
            Some(df) if df > 0 => Some(params.add("emb.dense_proj", glorot(d, df, &mut rng))?),
            Some(_) => return Err(Error::Config("dense feature length must be positive".into())),
            None => None,
        };
        let tables = EmbeddingTables {
            item_table,
            category_table,
            dense_proj,
            num_items: config.num_items,
            num_categories: config.num_categories,
            d,
        };
        let repr = tables.repr_dim();
        let [s1, s2] = config.scorer_hidden;
        let stm_scorer = if config.variant.needs_contexts() {
            Some(Mlp3::register(&mut params, "stm.scorer", [4 * repr, s1, s2, 1], &mut rng)?)
        } else {
            None
        };
        let (click_scorer, context_scorer) = if config.effective_iem() == IemKind::TargetAttention {
            let input = config.scoring.input_dim(repr);
            (
                Some(Mlp3::register(&mut params, "iem.click_scorer", [input, s1, s2, 1], &mut rng)?),
                Some(Mlp3::register(&mut params, "iem.context_scorer", [input, s1, s2, 1], &mut rng)?),
            )
        } else {
            (None, None)
        };
        let [h1, h2] = config.head_hidden;
        let head = Mlp3::register(&mut params, "head", [3 * repr, h1, h2, 1], &mut rng)?;
        Ok(Tem4Ctr {
            config,
            params,
            tables,
            stm_scorer,
            click_scorer,
            context_scorer,
            head,
        })
    }

    /// Rebuild a model from checkpoint entries. Vocabulary sizes and the
    /// dense feature length are read off the embedding shapes, so `config`
    /// only needs the architecture fields.
    pub fn from_checkpoint_entries(mut config: ModelConfig, entries: Vec<(String, Tensor)>) -> Result<Self> {
        let shape_of = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t.shape().to_vec());
        let item = shape_of("emb.item").ok_or_else(|| Error::Checkpoint("missing emb.item".into()))?;
        let cat = shape_of("emb.category").ok_or_else(|| Error::Checkpoint("missing emb.category".into()))?;
        if item.len() != 2 || cat.len() != 2 || item[1] != cat[1] {
            return Err(Error::Checkpoint(format!("embedding shapes {item:?} and {cat:?} disagree")));
        }
        config.num_items = item[0];
        config.num_categories = cat[0];
        config.d = item[1];
        config.dense_dim = shape_of("emb.dense_proj").map(|s| s[1]);
        let mut model = Tem4Ctr::new(config, 0)?;
        restore_params(&mut model.params, entries)?;
        Ok(model)
    }

    pub fn load(config: ModelConfig, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_checkpoint_entries(config, read_checkpoint(std::io::BufReader::new(file))?)
    }

    pub fn save(&self, path: &Path, format: CheckpointFormat) -> Result<()> {
        save_checkpoint(&self.params, path, format)
    }

    /// Record the forward pass of one sample on `graph`.
    pub fn forward_on(&self, graph: &mut Graph<'_>, sample: &TrainingSample) -> Result<ForwardVars> {
        let variant = self.config.variant;
        if variant.needs_contexts() && !sample.has_contexts() {
            return Err(Error::Integrity(format!(
                "sample for user {} has {} contexts for {} history clicks; run preprocessing first",
                sample.user_id,
                sample.contexts.len(),
                sample.history.len()
            )));
        }
        let repr = self.tables.repr_dim();
        let mut cache = EmbedCache::default();
        let e_tgt = cache.embed(graph, &self.tables, &sample.target)?;
        let e_clk = sample
            .history
            .iter()
            .map(|it| cache.embed(graph, &self.tables, it))
            .collect::<Result<Vec<_>>>()?;

        let pooled_exposure = |graph: &mut Graph<'_>, cache: &mut EmbedCache| -> Result<Var> {
            let pool = sample
                .exposure_pool
                .iter()
                .map(|it| cache.embed(graph, &self.tables, it))
                .collect::<Result<Vec<_>>>()?;
            average_pool(graph, &pool, &vec![true; pool.len()], repr)
        };

        // Exposure information per click, and the sequence g pools over.
        let (c, g_seq): (Vec<Var>, Vec<Var>) = match variant {
            ModelVariant::Full | ModelVariant::NoPem | ModelVariant::NoIem => {
                let scorer = self.stm_scorer.as_ref().expect("registered for context variants");
                let mut c = Vec::with_capacity(e_clk.len());
                for (&e, ctx) in e_clk.iter().zip(&sample.contexts) {
                    let items = embed_context(graph, &self.tables, ctx, &mut cache)?;
                    c.push(extract_exposure_info(graph, e, &items, scorer)?);
                }
                (c.clone(), c)
            }
            ModelVariant::NoStm => {
                let shared = pooled_exposure(graph, &mut cache)?;
                (vec![shared; e_clk.len()], vec![shared])
            }
            ModelVariant::AvgPoolDnn => {
                let shared = pooled_exposure(graph, &mut cache)?;
                (Vec::new(), vec![shared])
            }
        };

        let mut e_clk_star = Vec::with_capacity(e_clk.len());
        let mut e_enh = Vec::new();
        if variant.enhances() {
            for (&e, &cj) in e_clk.iter().zip(&c) {
                let (star, enh) = enhance_click(graph, e, cj)?;
                e_clk_star.push(star);
                e_enh.push(enh);
            }
        } else {
            e_clk_star.clone_from(&e_clk);
        }

        let click_mask = vec![true; e_clk_star.len()];
        let g_mask = vec![true; g_seq.len()];
        let (h, g) = match self.config.effective_iem() {
            IemKind::TargetAttention => {
                let cs = self.click_scorer.as_ref().expect("registered for target attention");
                let xs = self.context_scorer.as_ref().expect("registered for target attention");
                (
                    target_attention(graph, e_tgt, &e_clk_star, &click_mask, cs, self.config.scoring)?,
                    target_attention(graph, e_tgt, &g_seq, &g_mask, xs, self.config.scoring)?,
                )
            }
            IemKind::AvgPool => (
                average_pool(graph, &e_clk_star, &click_mask, repr)?,
                average_pool(graph, &g_seq, &g_mask, repr)?,
            ),
        };

        let joined = graph.concat(&[e_tgt, h, g]);
        let logit = mlp3_forward(graph, &self.head, joined)?;
        let p = graph.sigmoid(logit);
        Ok(ForwardVars {
            p,
            e_tgt,
            e_clk,
            c,
            e_enh,
            e_clk_star,
            h,
            g,
        })
    }

    /// Click probability and intermediates for one sample.
    pub fn forward(&self, sample: &TrainingSample) -> Result<ForwardOutput> {
        let mut graph = Graph::new(&self.params);
        let v = self.forward_on(&mut graph, sample)?;
        let vals = |vars: &[Var]| vars.iter().map(|&x| graph.value(x).to_vec()).collect::<Vec<_>>();
        Ok(ForwardOutput {
            p: graph.scalar(v.p),
            c: vals(&v.c),
            e_enh: vals(&v.e_enh),
            e_clk_star: vals(&v.e_clk_star),
            h: graph.value(v.h).to_vec(),
            g: graph.value(v.g).to_vec(),
        })
    }

    pub fn predict(&self, sample: &TrainingSample) -> Result<f64> {
        let mut graph = Graph::new(&self.params);
        let v = self.forward_on(&mut graph, sample)?;
        Ok(graph.scalar(v.p))
    }

    /// Predictions for many samples, in input order.
    pub fn predict_batch(&self, samples: &[TrainingSample]) -> Result<Vec<f64>> {
        samples.par_iter().map(|s| self.predict(s)).collect()
    }

    /// Mean cross-entropy over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[&TrainingSample]) -> Result<(f64, GradBuffer)> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let partials: Vec<(f64, GradBuffer)> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut buf = GradBuffer::for_store(&self.params);
                let mut total = 0.0;
                for sample in chunk {
                    let mut graph = Graph::new(&self.params);
                    let v = self.forward_on(&mut graph, sample)?;
                    let l = sample_loss(&mut graph, v.p, sample.label);
                    total += graph.scalar(l);
                    graph.backward_seeded(l, scale, &mut buf)?;
                }
                Ok((total, buf))
            })
            .collect::<Result<_>>()?;
        let mut parts = partials.into_iter();
        let (mut loss, mut grads) = parts.next().expect("batch is non-empty");
        for (l, g) in parts {
            loss += l;
            grads.add_assign(&g);
        }
        Ok((loss * scale, grads))
    }

    /// Mean cross-entropy over `samples` without gradients.
    pub fn mean_loss(&self, samples: &[TrainingSample]) -> Result<f64> {
        let p = self.predict_batch(samples)?;
        let y: Vec<bool> = samples.iter().map(|s| s.label).collect();
        Ok(loss(&p, &y))
    }
}

/// Per-sample cross-entropy recorded on the graph, with clamping.
pub fn sample_loss(graph: &mut Graph<'_>, p: Var, label: bool) -> Var {
    let pc = graph.clamp(p, P_CLAMP, 1.0 - P_CLAMP);
    if label {
        let lp = graph.ln(pc);
        graph.affine(lp, -1.0, 0.0)
    } else {
        let q = graph.affine(pc, -1.0, 1.0);
        let lq = graph.ln(q);
        graph.affine(lq, -1.0, 0.0)
    }
}

/// `-(1/N) sum(y ln p + (1 - y) ln(1 - p))` with `p` clamped away from 0 and 1.
pub fn loss(p: &[f64], y: &[bool]) -> f64 {
    assert_eq!(p.len(), y.len(), "prediction and label counts differ");
    if p.is_empty() {
        return 0.0;
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / p.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedlog::ItemRecord;
    use crate::stm::ExposureContext;

    fn rec(item: u64, cat: u64, ts: i64) -> ItemRecord {
        ItemRecord {
            item_id: item,
            category_id: cat,
            timestamp: ts,
            dense_feature: None,
        }
    }

    fn ctx(click_ts: i64, items: Vec<ItemRecord>, slots: usize) -> ExposureContext {
        let mut mask = vec![false; slots];
        mask[..items.len()].iter_mut().for_each(|m| *m = true);
        ExposureContext { click_ts, items, mask }
    }

    fn sample(contexts: Vec<ExposureContext>) -> TrainingSample {
        TrainingSample {
            user_id: 1,
            history: vec![rec(2, 0, 10), rec(5, 1, 20)],
            contexts,
            exposure_pool: vec![rec(1, 2, 15)],
            target: rec(4, 1, 30),
            label: true,
            cutoff_ts: None,
        }
    }

    fn model(variant: ModelVariant) -> Tem4Ctr {
        Tem4Ctr::new(
            ModelConfig {
                variant,
                ..ModelConfig::new(4, 8, 3)
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn zero_head_predicts_one_half() {
        let mut m = model(ModelVariant::Full);
        for (w, b) in m.head.layers() {
            m.params.get_mut(w).values_mut().fill(0.0);
            m.params.get_mut(b).values_mut().fill(0.0);
        }
        let s = sample(vec![ctx(10, vec![rec(1, 2, 12)], 2), ctx(20, vec![], 2)]);
        assert_eq!(m.predict(&s).unwrap(), 0.5);
    }

    #[test]
    fn single_click_single_context_passes_through() {
        let m = model(ModelVariant::Full);
        let s = TrainingSample {
            history: vec![rec(2, 0, 10)],
            contexts: vec![ctx(10, vec![rec(1, 2, 12)], 1)],
            ..sample(vec![])
        };
        let out = m.forward(&s).unwrap();
        assert_eq!(out.h, out.e_clk_star[0]);
        assert_eq!(out.g, out.c[0]);
        assert!(out.p > 0.0 && out.p < 1.0);
    }

    #[test]
    fn no_pem_matches_full_on_empty_contexts() {
        let full = model(ModelVariant::Full);
        let mut no_pem = Tem4Ctr::new(
            ModelConfig {
                variant: ModelVariant::NoPem,
                ..full.config.clone()
            },
            0,
        )
        .unwrap();
        no_pem.params = full.params.clone();
        let s = sample(vec![ctx(10, vec![], 2), ctx(20, vec![], 2)]);
        let a = full.forward(&s).unwrap();
        assert!(a.c.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(a.p, no_pem.predict(&s).unwrap());
    }

    #[test]
    fn missing_contexts_are_an_integrity_error() {
        let s = sample(vec![]);
        for v in ModelVariant::ALL {
            let r = model(v).predict(&s);
            if v.needs_contexts() {
                assert!(matches!(r, Err(Error::Integrity(_))), "{v:?}");
            } else {
                assert!(r.is_ok(), "{v:?}");
            }
        }
    }

    #[test]
    fn scorers_registered_per_variant() {
        let full = model(ModelVariant::Full);
        assert!(full.stm_scorer.is_some() && full.click_scorer.is_some());
        let no_iem = Tem4Ctr::new(
            ModelConfig {
                variant: ModelVariant::NoIem,
                iem_kind: IemKind::TargetAttention,
                ..ModelConfig::new(4, 8, 3)
            },
            7,
        )
        .unwrap();
        assert_eq!(no_iem.config.effective_iem(), IemKind::AvgPool);
        assert!(no_iem.click_scorer.is_none() && no_iem.context_scorer.is_none());
        assert!(model(ModelVariant::NoStm).stm_scorer.is_none());
        assert!(model(ModelVariant::AvgPoolDnn).params.len() < full.params.len());
    }

    #[test]
    fn loss_examples() {
        assert!((loss(&[0.5], &[true]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss(&[0.9], &[true]) - 0.105_360_515_657_826_3).abs() < 1e-12);
        assert!((loss(&[0.9, 0.1], &[true, false]) - 0.105_360_515_657_826_3).abs() < 1e-12);
        assert!(loss(&[1.0, 0.0], &[true, false]) <= 1.1e-12);
        assert!(loss(&[0.0], &[true]).is_finite());
        assert_eq!(loss(&[], &[]), 0.0);
    }

    #[test]
    fn variant_names_parse_back() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
        }
        assert_eq!("no-pem".parse::<ModelVariant>().unwrap(), ModelVariant::NoPem);
        assert!("bogus".parse::<ModelVariant>().is_err());
        assert_eq!("din".parse::<IemKind>().unwrap(), IemKind::TargetAttention);
    }
}

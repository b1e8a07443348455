use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::auc;
use crate::diffcore::{adam_step, AdamState};
use crate::feedlog::{
    build_streams, make_test_samples, make_training_samples, read_samples, write_samples, FeedbackEvent, TrainingSample, UserStream,
};
use crate::model::Tem4Ctr;
use crate::stm::preprocess_dataset;
use crate::{derive_seed, Error, Result};

const INIT_STREAM: u64 = 0x696e_6974;
const SHUFFLE_STREAM: u64 = 0x7368_7566;

/// Preprocessed train/test samples plus the vocabulary the model needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub num_items: usize,
    pub num_categories: usize,
    pub dense_dim: Option<usize>,
    /// Settings the samples were cut and searched with.
    pub shape: DataShape,
    pub train: Vec<TrainingSample>,
    pub test: Vec<TrainingSample>,
}

/// The part of an [`ExperimentConfig`] baked into preprocessed samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataShape {
    pub n: usize,
    pub l: usize,
    pub per_side: bool,
    pub past_only: bool,
}

impl DataShape {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        DataShape {
            n: cfg.n,
            l: cfg.l,
            per_side: cfg.per_side,
            past_only: cfg.past_only,
        }
    }

    /// Overwrite the matching fields of `cfg`.
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        cfg.n = self.n;
        cfg.l = self.l;
        cfg.per_side = self.per_side;
        cfg.past_only = self.past_only;
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    num_items: usize,
    num_categories: usize,
    dense_dim: Option<usize>,
    shape: DataShape,
}

impl Dataset {
    /// Write `meta.json`, `train.jsonl` and `test.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = DatasetMeta {
            num_items: self.num_items,
            num_categories: self.num_categories,
            dense_dim: self.dense_dim,
            shape: self.shape,
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
        write_samples(&self.train, BufWriter::new(File::create(dir.join("train.jsonl"))?))?;
        write_samples(&self.test, BufWriter::new(File::create(dir.join("test.jsonl"))?))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
        Ok(Dataset {
            num_items: meta.num_items,
            num_categories: meta.num_categories,
            dense_dim: meta.dense_dim,
            shape: meta.shape,
            train: read_samples(BufReader::new(File::open(dir.join("train.jsonl"))?))?,
            test: read_samples(BufReader::new(File::open(dir.join("test.jsonl"))?))?,
        })
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    /// Relative improvement over the base run, when one was made.
    pub rela_impr_vs_base: Option<f64>,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub config: ExperimentConfig,
    pub seed: u64,
}

/// Split by time and cut samples: each user's last click is the test
/// target, and training samples come only from the stream before it.
/// Contexts and exposure pools are attached to both sides.
pub fn prepare_dataset(events: &[FeedbackEvent], cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let streams = build_streams(events);
    let train_streams: Vec<UserStream> = streams
        .iter()
        .map(|s| match s.clicks().last() {
            Some(last) => s.truncated_before(last.timestamp),
            None => s.clone(),
        })
        .collect();
    let train = make_training_samples(&train_streams, cfg.n, cfg.samples_per_user, cfg.seed)?;
    let test = make_test_samples(&streams, cfg.n, cfg.seed)?;
    let opts = cfg.search_options();
    let pool_len = cfg.l * cfg.n;
    let num_items = events.iter().map(|e| e.item_id as usize + 1).max().unwrap_or(0);
    let num_categories = events.iter().map(|e| e.category_id as usize + 1).max().unwrap_or(0);
    let dense_dim = events.iter().find_map(|e| e.dense_feature.as_ref().map(Vec::len));
    Ok(Dataset {
        num_items,
        num_categories,
        dense_dim,
        shape: DataShape::of(cfg),
        train: preprocess_dataset(&streams, &train, cfg.l, pool_len, opts)?,
        test: preprocess_dataset(&streams, &test, cfg.l, pool_len, opts)?,
    })
}

/// A freshly initialised model for `dataset` under `cfg`.
pub fn init_model(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Tem4Ctr> {
    let mc = cfg.model_config(dataset.num_items, dataset.num_categories, dataset.dense_dim);
    Tem4Ctr::new(mc, derive_seed(cfg.seed, INIT_STREAM))
}

/// Mini-batch Adam over the cross-entropy loss. Returns the mean loss of
/// every epoch. Shuffle order is a function of the seed and epoch only.
pub fn fit(model: &mut Tem4Ctr, samples: &[TrainingSample], cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let mut adam = AdamState::new(&model.params, cfg.adam());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ SHUFFLE_STREAM, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&TrainingSample> = batch.iter().map(|&i| &samples[i]).collect();
            let (loss, grads) = model.loss_and_grad(&refs)?;
            total += loss * refs.len() as f64;
            model.params.zero_grad();
            model.params.accumulate(&grads);
            adam_step(&mut model.params, &mut adam);
        }
        losses.push(total / samples.len() as f64);
    }
    Ok(losses)
}

/// AUC of `model` on `samples`.
pub fn evaluate(model: &Tem4Ctr, samples: &[TrainingSample]) -> Result<f64> {
    let scores = model.predict_batch(samples)?;
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
    auc(&scores, &labels)
}

/// Initialise, fit and evaluate on the final epoch's parameters. The
/// report's config carries the dataset's own [`DataShape`].
pub fn train(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<(Tem4Ctr, EvalReport)> {
    if dataset.train.is_empty() {
        return Err(Error::Config("dataset has no training samples".into()));
    }
    let mut model = init_model(dataset, cfg)?;
    let epoch_losses = fit(&mut model, &dataset.train, cfg)?;
    let auc = evaluate(&model, &dataset.test)?;
    let mut config = cfg.clone();
    dataset.shape.apply(&mut config);
    let report = EvalReport {
        auc,
        rela_impr_vs_base: None,
        epoch_losses,
        train_samples: dataset.train.len(),
        test_samples: dataset.test.len(),
        config,
        seed: cfg.seed,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{gen_synthetic, SynthConfig};

    fn tiny() -> (Dataset, ExperimentConfig) {
        let synth = SynthConfig {
            num_users: 30,
            num_items: 60,
            num_categories: 6,
            events_per_user: 20,
            seed: 3,
            ..SynthConfig::default()
        };
        let cfg = ExperimentConfig {
            d: 4,
            l: 3,
            n: 5,
            epochs: 2,
            batch_size: 16,
            scorer_hidden: [6, 4],
            head_hidden: [8, 4],
            seed: 5,
            ..ExperimentConfig::default()
        };
        let events = gen_synthetic(&synth).unwrap();
        (prepare_dataset(&events, &cfg).unwrap(), cfg)
    }

    #[test]
    fn split_has_no_overlap_in_time() {
        let (data, _) = tiny();
        assert!(!data.train.is_empty() && !data.test.is_empty());
        for s in &data.train {
            let test_pos = data.test.iter().find(|t| t.user_id == s.user_id && t.label).unwrap();
            if s.label {
                assert!(s.target.timestamp < test_pos.target.timestamp);
            }
            assert!(s.history.iter().all(|h| h.timestamp < s.target.timestamp));
            for ctx in &s.contexts {
                assert!(ctx.items.iter().all(|it| it.timestamp < s.target.timestamp));
            }
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let (data, cfg) = tiny();
        let (a, ra) = train(&data, &cfg).unwrap();
        let (b, rb) = train(&data, &cfg).unwrap();
        let bits = |m: &Tem4Ctr| m.params.flat_values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(ra, rb);
        assert_eq!(ra.epoch_losses.len(), 2);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (data, cfg) = tiny();
        let cfg = ExperimentConfig {
            learning_rate: 0.0,
            ..cfg
        };
        let mut model = init_model(&data, &cfg).unwrap();
        let before = model.params.flat_values();
        fit(&mut model, &data.train, &cfg).unwrap();
        assert_eq!(before, model.params.flat_values());
    }

    #[test]
    fn one_step_descends_on_a_positive() {
        let (data, cfg) = tiny();
        let cfg = ExperimentConfig {
            learning_rate: 1e-4,
            epochs: 1,
            ..cfg
        };
        let sample = data.train.iter().find(|s| s.label).unwrap().clone();
        let mut model = init_model(&data, &cfg).unwrap();
        let before = model.mean_loss(std::slice::from_ref(&sample)).unwrap();
        fit(&mut model, std::slice::from_ref(&sample), &cfg).unwrap();
        let after = model.mean_loss(std::slice::from_ref(&sample)).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn dataset_round_trip() {
        let (data, _) = tiny();
        let dir = tempfile::tempdir().unwrap();
        data.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), data);
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        let (mut data, cfg) = tiny();
        data.train.clear();
        assert!(matches!(train(&data, &cfg), Err(Error::Config(_))));
    }
}

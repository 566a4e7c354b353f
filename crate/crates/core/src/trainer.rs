//! Pairwise ranking training.
//!
//! Each epoch shuffles the training outfits, pairs every outfit with one
//! freshly sampled negative (one item replaced), and takes one optimizer
//! step per mini-batch on the mean BPR loss plus L2 weight decay. Batch
//! members are scored in parallel; their gradients are summed in batch
//! order, so results do not depend on the thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{sample_negative_outfit, CompatPair, DatasetSplit, ItemId, ItemTable};
use crate::error::{Error, Result};
use crate::evaluator::auc;
use crate::features::{Channel, FeatureStores, Modality, ModalityConfig};
use crate::graph::CategoryGraph;
use crate::models::{CompatModel, ModelConfig, ModelKind, ScoringContext};
use crate::neural::{sigmoid, softplus, Checkpoint, GradSet, OptimizerKind, OptimizerState, ParamSet};

/// Seed offset for the fixed validation pairs, distinct from epoch streams.
const VALIDATION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta: f64,
    pub lambda_l2: f64,
    pub hidden: usize,
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub model: ModelKind,
    pub modality: Modality,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 16,
            beta: 0.2,
            lambda_l2: 0.001,
            hidden: 12,
            steps: 3,
            optimizer: OptimizerKind::adam(),
            max_epochs: 50,
            patience: 3,
            min_delta: 1e-4,
            seed: 42,
            model: ModelKind::Ngnn,
            modality: Modality::Multimodal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate >= 0.0 && self.learning_rate.is_finite()),
            ("batch_size", self.batch_size > 0),
            ("lambda_l2", self.lambda_l2 >= 0.0 && self.lambda_l2.is_finite()),
            ("hidden", self.hidden > 0),
            ("max_epochs", self.max_epochs > 0),
            ("patience", self.patience > 0),
            ("min_delta", self.min_delta >= 0.0),
        ];
        for (name, ok) in positive {
            if !ok {
                return Err(Error::Argument(format!("{name} is out of range")));
            }
        }
        ModalityConfig::new(self.modality, self.beta)?;
        Ok(())
    }

    pub fn modality_config(&self) -> Result<ModalityConfig> {
        ModalityConfig::new(self.modality, self.beta)
    }

    /// Model layout for `categories`, taking input sizes from `stores`.
    pub fn model_config(
        &self,
        categories: impl IntoIterator<Item = u32>,
        stores: &FeatureStores,
    ) -> Result<ModelConfig> {
        Ok(ModelConfig {
            kind: self.model,
            modality: self.modality_config()?,
            hidden: self.hidden,
            steps: self.steps,
            categories: categories.into_iter().collect(),
            visual_dim: stores.store(Channel::Visual).map(|s| s.dim()),
            text_dim: stores.store(Channel::Text).map(|s| s.dim()),
        })
    }
}

/// `−ln σ(s_pos − s_neg) + λ·Σ‖W‖²` over weights (biases excluded).
pub fn bpr_loss(s_pos: f64, s_neg: f64, lambda_l2: f64, params: &ParamSet) -> f64 {
    softplus(-(s_pos - s_neg)) + lambda_l2 * params.weight_sum_squares()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: Option<f64>,
    /// Wall-clock time; the only field that varies between identical runs.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    /// Epoch (1-based) with the lowest validation loss, earliest on ties.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for e in &self.epochs {
            if best.is_none_or(|b| e.val_loss < b.val_loss) {
                best = Some(e);
            }
        }
        best.map(|e| e.epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_auc,seconds\n");
        for e in &self.epochs {
            let auc = e.val_auc.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.3}",
                e.epoch, e.train_loss, e.val_loss, auc, e.seconds
            );
        }
        out
    }
}

/// True when each of the last `patience` epochs improved on the best
/// validation loss before it by less than `min_delta`.
pub fn early_stop_check(val_losses: &[f64], patience: usize, min_delta: f64) -> bool {
    if patience == 0 || val_losses.len() <= patience {
        return false;
    }
    let split = val_losses.len() - patience;
    let mut best = val_losses[..split].iter().copied().fold(f64::INFINITY, f64::min);
    for &loss in &val_losses[split..] {
        if best - loss >= min_delta {
            return false;
        }
        best = best.min(loss);
    }
    true
}

/// Everything training reads besides the configuration.
pub struct TrainData<'a> {
    pub split: &'a DatasetSplit,
    pub items: &'a ItemTable,
    /// Co-occurrence graph built from the training outfits only.
    pub graph: &'a CategoryGraph,
    pub stores: &'a FeatureStores,
}

impl TrainData<'_> {
    fn context(&self) -> ScoringContext<'_> {
        ScoringContext::new(self.items, self.graph, self.stores)
    }

    /// Distinct items of the training outfits, in first-seen order.
    fn train_corpus(&self) -> Vec<ItemId> {
        let mut seen = std::collections::HashSet::new();
        self.split
            .train
            .iter()
            .flat_map(|o| o.items.iter())
            .filter(|id| seen.insert(id.as_str()))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CompatModel,
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub best_epoch: usize,
    pub history: TrainHistory,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// Writes `best.ckpt`, `last.ckpt` and `history.csv` into `run_dir`.
    pub fn save(&self, run_dir: impl AsRef<Path>) -> Result<()> {
        let dir = run_dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.best.write(dir.join("best.ckpt"))?;
        self.last.write(dir.join("last.ckpt"))?;
        let history = dir.join("history.csv");
        fs::write(&history, self.history.to_csv()).map_err(|e| Error::io(&history, e))
    }
}

struct PairResult {
    loss: f64,
    grads: GradSet,
}

fn pair_gradient(
    model: &CompatModel,
    params: &ParamSet,
    pair: &CompatPair,
    ctx: &ScoringContext<'_>,
) -> Result<PairResult> {
    let pos = model.prepare(&pair.positive.items, ctx)?;
    let neg = model.prepare(&pair.negative.items, ctx)?;
    let cp = model.forward(params, &pos)?;
    let cn = model.forward(params, &neg)?;
    let diff = cp.score() - cn.score();
    let d = sigmoid(-diff);
    let mut grads = model.backward(params, &cp, -d)?;
    model.backward_into(params, &cn, d, &mut grads)?;
    Ok(PairResult {
        loss: softplus(-diff),
        grads,
    })
}

/// Mean BPR data term and AUC over fixed pairs.
pub fn pair_metrics(
    model: &CompatModel,
    params: &ParamSet,
    pairs: &[CompatPair],
    ctx: &ScoringContext<'_>,
) -> Result<(f64, f64)> {
    let scores: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|pair| {
            Ok((
                model.score(params, &pair.positive.items, ctx)?,
                model.score(params, &pair.negative.items, ctx)?,
            ))
        })
        .collect::<Result<_>>()?;
    let loss = scores.iter().map(|(p, n)| softplus(-(p - n))).sum::<f64>() / pairs.len() as f64;
    let (pos, neg): (Vec<f64>, Vec<f64>) = scores.into_iter().unzip();
    Ok((loss, auc(&pos, &neg)?))
}

fn epoch_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains a fresh model; `on_epoch` sees every record as it is produced.
pub fn train(
    config: &TrainConfig,
    data: &TrainData<'_>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.split.train.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let model = CompatModel::new(config.model_config(data.split.category_set.iter().copied(), data.stores)?)?;
    let mut params = model.init_params(config.seed)?;
    let mut optimizer = OptimizerState::new(config.optimizer, &params, config.learning_rate);
    let ctx = data.context();
    let corpus = data.train_corpus();

    let validation_pairs: Vec<CompatPair> = {
        let mut rng = epoch_rng(config.seed, VALIDATION_STREAM);
        data.split
            .validation
            .iter()
            .map(|o| sample_negative_outfit(o, &corpus, &mut rng))
            .collect::<Result<_>>()?
    };
    if validation_pairs.is_empty() {
        log::warn!("validation split is empty; early stopping uses the training loss");
    }

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..data.split.train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let mut rng = epoch_rng(config.seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let pairs: Vec<CompatPair> = order
            .iter()
            .map(|&i| sample_negative_outfit(&data.split.train[i], &corpus, &mut rng))
            .collect::<Result<_>>()?;

        let mut loss_sum = 0.0;
        for (b, batch) in pairs.chunks(config.batch_size).enumerate() {
            let results: Vec<PairResult> = batch
                .par_iter()
                .map(|pair| pair_gradient(&model, &params, pair, &ctx))
                .collect::<Result<_>>()?;
            let l2 = config.lambda_l2 * params.weight_sum_squares();
            let mut grads = GradSet::zeros_like(&params);
            let mut batch_loss = 0.0;
            for r in &results {
                grads.add_scaled(1.0, &r.grads);
                batch_loss += r.loss + l2;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            // Batch objective: summed BPR terms plus one regularizer.
            grads.add_l2(&params, config.lambda_l2);
            optimizer.apply(&mut params, &grads)?;
            loss_sum += batch_loss;
        }
        let train_loss = loss_sum / pairs.len() as f64;

        let (val_loss, val_auc) = if validation_pairs.is_empty() {
            (train_loss, None)
        } else {
            let (l, a) = pair_metrics(&model, &params, &validation_pairs, &ctx)?;
            (l, Some(a))
        };
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auc,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);

        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, params.clone()));
        }
        if early_stop_check(&history.val_losses(), config.patience, config.min_delta) {
            stopped_early = true;
            break;
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    let metadata = |epoch: usize| {
        let mut m = model.config().to_metadata();
        m.insert("epoch".into(), epoch.to_string());
        m.insert("seed".into(), config.seed.to_string());
        m
    };
    let last_epoch = history.epochs.len();
    Ok(TrainOutcome {
        best: Checkpoint {
            metadata: metadata(best_epoch),
            params: best_params,
            optimizer: None,
        },
        last: Checkpoint {
            metadata: metadata(last_epoch),
            params,
            optimizer: Some(optimizer),
        },
        model,
        best_epoch,
        history,
        stopped_early,
    })
}

/// Rebuilds the model described by a checkpoint header and checks that
/// the stored parameters fit it.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<CompatModel> {
    let model = CompatModel::new(ModelConfig::from_metadata(&ckpt.metadata)?)?;
    model.check_params(&ckpt.params)?;
    Ok(model)
}

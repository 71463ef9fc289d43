//! Minibatch training with early stopping, fold splitting and checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::config::{DataConfig, TrainConfig};
use crate::data::{Featurized, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Dims, Mode, Model, ModelConfig};
use crate::optim::{cosine_lr, Adam};
use crate::params::ParamStore;
use crate::rng;
use crate::ssl::{kmeans_plus_plus, ClusterState};
use crate::tensor::Tensor;

/// Events per forward pass when only predictions are needed.
const EVAL_CHUNK: usize = 64;

/// Splits `0..n` into `folds` disjoint test sets whose sizes differ by at
/// most one, each paired with the remaining indices as training set. Both
/// lists are sorted.
pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Input(format!("{n} events cannot fill {folds} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, "kfold"));
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for k in 0..folds {
        let size = n / folds + usize::from(k < n % folds);
        let mut test = perm[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = perm[..start].iter().chain(&perm[start + size..]).copied().collect();
        train.sort_unstable();
        out.push((train, test));
        start += size;
    }
    Ok(out)
}

/// Per-fold seed derived from the root seed.
pub fn fold_seed(root: u64, fold: usize) -> u64 {
    rng::stream_seed(root, &format!("fold{fold}"))
}

/// Shuffled minibatches of `0..n`. A trailing batch of one event is merged
/// into the previous batch so every batch has in-batch negatives.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &format!("shuffle/epoch{epoch}")));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(last);
        }
    }
    batches
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
    /// Batch-summed losses averaged per event.
    pub main_loss: f64,
    pub ssl_loss: Option<f64>,
    pub total_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
}

/// Called after every optimizer step with `(epoch, global_step, model)`.
pub type StepObserver<'a> = dyn FnMut(usize, usize, &Model) + 'a;

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: Model,
    pub optimizer: Adam,
    pub log: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0-based).
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Accuracy and mean cross-entropy of `model` on `events`, evaluation mode.
pub fn validation_scores(model: &Model, events: &[Featurized]) -> Result<(f64, f64)> {
    if events.is_empty() {
        return Err(Error::Input("validation over no events".into()));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for chunk in events.chunks(EVAL_CHUNK) {
        let refs: Vec<&Featurized> = chunk.iter().collect();
        let p = model.predict_proba(&refs)?;
        for (r, f) in chunk.iter().enumerate() {
            let row = p.row(r);
            let pred = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            correct += usize::from(pred == f.label);
            loss -= row[f.label].max(f64::MIN_POSITIVE).ln();
        }
    }
    let n = events.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Projections of every event, stacked in order.
fn all_projections(model: &Model, events: &[Featurized]) -> Result<(Tensor, Tensor)> {
    let mut g_rows = Vec::new();
    let mut t_rows = Vec::new();
    let mut width = (0, 0);
    for chunk in events.chunks(EVAL_CHUNK) {
        let refs: Vec<&Featurized> = chunk.iter().collect();
        let (g, t) = model.projections(&refs)?;
        width = (g.cols(), t.cols());
        g_rows.extend_from_slice(g.data());
        t_rows.extend_from_slice(t.data());
    }
    Ok((
        Tensor::from_vec(events.len(), width.0, g_rows)?,
        Tensor::from_vec(events.len(), width.1, t_rows)?,
    ))
}

fn select_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * t.cols());
    for &r in rows {
        data.extend_from_slice(t.row(r));
    }
    Tensor::from_vec(rows.len(), t.cols(), data)
}

/// Runs the clustering block for one epoch and returns frozen
/// `(graph, text)` assignments for every training event. Centroids are
/// seeded with k-means++ on the first batch's projections the first time.
fn refresh_clusters(
    model: &mut Model,
    train: &[Featurized],
    first_batch: &[usize],
    rounds: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (pg, pt) = all_projections(model, train)?;
    let state: &mut ClusterState = model
        .clusters
        .as_mut()
        .ok_or_else(|| Error::Contract("cluster mode without cluster state".into()))?;
    if !state.is_seeded() {
        let seed_rows: Vec<usize> = if first_batch.len() >= state.k {
            first_batch.to_vec()
        } else {
            (0..train.len()).collect()
        };
        let mut r = rng::stream(seed, "kmeans");
        state.graph_centroids = Some(kmeans_plus_plus(&select_rows(&pg, &seed_rows)?, state.k, &mut r)?);
        state.text_centroids = Some(kmeans_plus_plus(&select_rows(&pt, &seed_rows)?, state.k, &mut r)?);
    }
    for _ in 0..rounds {
        state.update(&pg, &pt)?;
    }
    state.assign(&pg, &pt)
}

/// Validation (accuracy, loss), epoch, parameters and clusters.
type BestEpoch = ((f64, f64), usize, ParamStore, Option<ClusterState>);

/// Trains `model` on `train`, keeping the parameters of the epoch with the
/// best accuracy on `val`, ties broken by the lower validation loss (the
/// last epoch when `val` is empty).
pub fn fit(
    mut model: Model,
    train: &[Featurized],
    val: &[Featurized],
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut StepObserver<'_>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("no training events".into()));
    }
    if model.mode != cfg.mode {
        return Err(Error::Config(format!(
            "model built for {} but configured for {}",
            model.mode, cfg.mode
        )));
    }
    let settings = cfg.loss_settings();
    let steps_per_epoch = epoch_batches(train.len(), cfg.batch_size, seed, 0).len();
    let total_steps = steps_per_epoch * cfg.epochs;
    let lr_min = cfg.lr_min();

    let mut optimizer = Adam::new(&model.store);
    let mut log = Vec::new();
    let mut best: Option<BestEpoch> = None;
    let mut step = 0usize;
    let mut epochs_run = 0;

    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(train.len(), cfg.batch_size, seed, epoch);
        let targets = if model.mode == Mode::Pscd {
            Some(refresh_clusters(&mut model, train, &batches[0], cfg.kmeans_rounds, seed)?)
        } else {
            None
        };
        let mut dropout_rng = rng::stream(seed, &format!("dropout/epoch{epoch}"));
        let epoch_lr = cosine_lr(step, total_steps, cfg.lr_max, lr_min);
        let (mut main_sum, mut ssl_sum, mut total_sum) = (0.0, 0.0, 0.0);

        for batch in &batches {
            let refs: Vec<&Featurized> = batch.iter().map(|&i| &train[i]).collect();
            let batch_targets = targets.as_ref().map(|(ga, ta)| {
                (
                    batch.iter().map(|&i| ga[i]).collect::<Vec<_>>(),
                    batch.iter().map(|&i| ta[i]).collect::<Vec<_>>(),
                )
            });
            let mut tape = Tape::new();
            let vars = model.store.bind(&mut tape)?;
            let parts = model.batch_loss(
                &mut tape,
                &vars,
                &refs,
                settings,
                batch_targets.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())),
                true,
                &mut dropout_rng,
            )?;
            let total = tape.scalar(parts.total);
            if !total.is_finite() {
                return Err(Error::Diverged(format!("loss {total} at epoch {epoch}, step {step}")));
            }
            main_sum += tape.scalar(parts.main);
            ssl_sum += parts.ssl.map_or(0.0, |s| tape.scalar(s));
            total_sum += total;

            tape.backward(parts.total)?;
            let grads = model.store.gradients(&tape, &vars);
            let lr = cosine_lr(step, total_steps, cfg.lr_max, lr_min);
            optimizer.step(&mut model.store, &grads, lr)?;
            step += 1;
            observer(epoch, step, &model);
        }
        epochs_run = epoch + 1;

        let n = train.len() as f64;
        let scores = if val.is_empty() {
            None
        } else {
            Some(validation_scores(&model, val)?)
        };
        log.push(EpochRecord {
            epoch,
            lr: epoch_lr,
            main_loss: main_sum / n,
            ssl_loss: model.mode.has_ssl().then_some(ssl_sum / n),
            total_loss: total_sum / n,
            val_accuracy: scores.map(|s| s.0),
            val_loss: scores.map(|s| s.1),
        });

        let improved = match (scores, &best) {
            (_, None) | (None, _) => true,
            (Some((acc, loss)), Some(((best_acc, best_loss), ..))) => {
                acc > *best_acc || (acc == *best_acc && loss < *best_loss)
            }
        };
        let score = scores.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        if improved {
            best = Some((score, epoch, model.store.clone(), model.clusters.clone()));
        } else if cfg.patience > 0 && best.as_ref().is_some_and(|b| epoch - b.1 >= cfg.patience) {
            break;
        }
    }

    let (_, best_epoch, store, clusters) = best.ok_or_else(|| Error::Contract("no epoch completed".into()))?;
    model.store = store;
    model.clusters = clusters;
    Ok(FitOutcome {
        model,
        optimizer,
        log,
        best_epoch,
        epochs_run,
    })
}

pub const CHECKPOINT_MAGIC: &str = "SRD1";

/// Everything needed to rebuild a trained model and keep training it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub mode: Mode,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dims: Dims,
    pub fold: usize,
    pub epoch: usize,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub optimizer: Adam,
    pub graph_centroids: Option<Tensor>,
    pub text_centroids: Option<Tensor>,
}

impl Checkpoint {
    pub fn new(
        outcome: &FitOutcome,
        vocab: &Vocabulary,
        data: &DataConfig,
        train: &TrainConfig,
        fold: usize,
    ) -> Self {
        let m = &outcome.model;
        let (graph_centroids, text_centroids) = m
            .clusters
            .as_ref()
            .map_or((None, None), |c| (c.graph_centroids.clone(), c.text_centroids.clone()));
        Self {
            magic: CHECKPOINT_MAGIC.into(),
            mode: m.mode,
            data: data.clone(),
            model: m.config.clone(),
            train: train.clone(),
            dims: m.dims,
            fold,
            epoch: outcome.best_epoch,
            vocab: vocab.clone(),
            params: m.store.clone(),
            optimizer: outcome.optimizer.clone(),
            graph_centroids,
            text_centroids,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("unreadable: {e}")))?;
        match value.get("magic").and_then(|m| m.as_str()) {
            Some(CHECKPOINT_MAGIC) => {}
            Some(other) => return Err(Error::Checkpoint(format!("magic {other:?}, expected {CHECKPOINT_MAGIC:?}"))),
            None => return Err(Error::Checkpoint("missing magic".into())),
        }
        let ck: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("malformed: {e}")))?;
        Ok(Checkpoint {
            vocab: ck.vocab.clone().reindexed(),
            ..ck
        })
    }

    /// Writes through a temporary file so a failed save leaves no partial
    /// checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("srd.tmp");
        let text = self.to_json()?;
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rebuilds the model; parameter names and shapes must match the layout
    /// the stored configuration produces.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::init(self.mode, &self.model, self.dims, 0)?;
        model
            .store
            .load_from(&self.params)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(c) = model.clusters.as_mut() {
            c.graph_centroids = self.graph_centroids.clone();
            c.text_centroids = self.text_centroids.clone();
        }
        Ok(model)
    }
}

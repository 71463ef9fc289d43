//! Metrics, cross-validated experiments, early-detection curves and sweeps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{validate_deadlines, Config};
use crate::data::{build_vocabulary, featurize, truncate_by_deadline, EventRecord, Featurized, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Dims, Mode, Model};
use crate::train::{fit, fold_seed, kfold_split, Checkpoint, EpochRecord};

/// Fraction of exact matches.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Input("accuracy over no events".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `confusion[true][predicted]`.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0usize; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::Input(format!("class {} outside {classes} classes", p.max(l))));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when `P + R = 0`; the scores are then reported as 0.
    pub undefined: bool,
}

fn class_metrics(confusion: &[Vec<usize>]) -> Vec<ClassMetrics> {
    let c = confusion.len();
    (0..c)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let predicted: usize = (0..c).map(|l| confusion[l][k]).sum();
            let actual: usize = confusion[k].iter().sum();
            let ratio = |den: usize| if den == 0 { 0.0 } else { tp / den as f64 };
            let (precision, recall) = (ratio(predicted), ratio(actual));
            let undefined = precision + recall == 0.0;
            let f1 = if undefined {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                undefined,
            }
        })
        .collect()
}

/// Per-class precision, recall and F1. A class with `P + R = 0` scores 0
/// and is flagged undefined.
pub fn per_class_metrics(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<ClassMetrics>> {
    Ok(class_metrics(&confusion_matrix(preds, labels, classes)?))
}

pub fn per_class_f1(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    Ok(per_class_metrics(preds, labels, classes)?.into_iter().map(|m| m.f1).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold: Option<usize>,
    pub deadline: Option<f64>,
    pub accuracy: f64,
    pub classes: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<usize>>,
    /// Test events left out because their source post has no known token.
    pub skipped: usize,
}

impl EvalReport {
    pub fn new(preds: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        let confusion = confusion_matrix(preds, labels, classes)?;
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Input("evaluation over no events".into()));
        }
        let trace: usize = (0..classes).map(|k| confusion[k][k]).sum();
        Ok(Self {
            fold: None,
            deadline: None,
            accuracy: trace as f64 / total as f64,
            classes: class_metrics(&confusion),
            confusion,
            skipped: 0,
        })
    }

    pub fn events(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn f1(&self) -> Vec<f64> {
        self.classes.iter().map(|m| m.f1).collect()
    }
}

/// Featurizes `events`, dropping empty ones; returns the number dropped.
pub fn featurize_all(events: &[EventRecord], vocab: &Vocabulary, seq_len: usize) -> Result<(Vec<Featurized>, usize)> {
    let mut out = Vec::with_capacity(events.len());
    let mut skipped = 0;
    for e in events {
        match featurize(e, vocab, seq_len) {
            Ok(f) => out.push(f),
            Err(Error::EmptyEvent) => skipped += 1,
            Err(other) => return Err(other),
        }
    }
    Ok((out, skipped))
}

/// Standard evaluation of whole events.
pub fn evaluate(model: &Model, vocab: &Vocabulary, events: &[EventRecord]) -> Result<EvalReport> {
    let (feats, skipped) = featurize_all(events, vocab, model.config.seq_len)?;
    let mut preds = Vec::with_capacity(feats.len());
    for chunk in feats.chunks(64) {
        let refs: Vec<&Featurized> = chunk.iter().collect();
        preds.extend(model.predict(&refs)?);
    }
    let labels: Vec<usize> = feats.iter().map(|f| f.label).collect();
    let mut report = EvalReport::new(&preds, &labels, model.dims.classes)?;
    report.skipped = skipped;
    Ok(report)
}

/// One report per deadline: every event is cut to the posts visible at the
/// deadline before featurization. The source post, and with it the text
/// view, is always visible.
pub fn early_detection_curve(
    model: &Model,
    vocab: &Vocabulary,
    events: &[EventRecord],
    deadlines: &[f64],
) -> Result<Vec<EvalReport>> {
    validate_deadlines(deadlines)?;
    deadlines
        .iter()
        .map(|&d| {
            let cut: Vec<EventRecord> = events.iter().map(|e| truncate_by_deadline(e, d)).collect();
            let mut r = evaluate(model, vocab, &cut)?;
            r.deadline = Some(d);
            Ok(r)
        })
        .collect()
}

/// Number of classes implied by the labels.
pub fn class_count(events: &[EventRecord]) -> Result<usize> {
    let c = events.iter().map(|e| e.label + 1).max().unwrap_or(0);
    if c < 2 {
        return Err(Error::Input(format!("need at least 2 classes, labels span {c}")));
    }
    Ok(c)
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub reports: Vec<EvalReport>,
    pub log: Vec<EpochRecord>,
    pub checkpoint: Checkpoint,
}

#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub config: Config,
    pub classes: usize,
    pub folds: Vec<FoldResult>,
}

/// Builds the vocabulary on the training split, carves the validation set
/// out of it, trains, and evaluates the test split at every deadline, for
/// every fold in turn.
pub fn cross_validate(
    events: &[EventRecord],
    config: &Config,
    observer: &mut dyn FnMut(usize, usize, usize, &Model),
) -> Result<CrossValidation> {
    config.validate()?;
    let classes = class_count(events)?;
    let tc = &config.train;
    let splits = kfold_split(events.len(), tc.folds, tc.seed)?;
    let mut folds = Vec::with_capacity(splits.len());
    for (k, (train_idx, test_idx)) in splits.into_iter().enumerate() {
        let seed = fold_seed(tc.seed, k);
        let train_events: Vec<EventRecord> = train_idx.iter().map(|&i| events[i].clone()).collect();
        let test_events: Vec<EventRecord> = test_idx.iter().map(|&i| events[i].clone()).collect();

        let vocab = build_vocabulary(&train_events, config.data.min_count, config.data.max_vocab)?;
        let (mut feats, _) = featurize_all(&train_events, &vocab, config.model.seq_len)?;
        if feats.is_empty() {
            return Err(Error::Input(format!("fold {k}: every training event is empty")));
        }
        let n_val = if tc.val_fraction > 0.0 && feats.len() > 2 {
            ((feats.len() as f64 * tc.val_fraction).round() as usize).clamp(1, feats.len() - 2)
        } else {
            0
        };
        {
            use rand::seq::SliceRandom;
            feats.shuffle(&mut crate::rng::stream(seed, "validation"));
        }
        let val = feats.split_off(feats.len() - n_val);

        let dims = Dims {
            features: vocab.len(),
            seq_rows: vocab.sequence_rows(),
            classes,
        };
        let model = Model::init(tc.mode, &config.model, dims, seed)?;
        let mut fold_observer = |e, s, m: &Model| observer(k, e, s, m);
        let outcome = fit(model, &feats, &val, tc, seed, &mut fold_observer)?;

        let mut reports = early_detection_curve(&outcome.model, &vocab, &test_events, &config.eval.deadlines)?;
        for r in &mut reports {
            r.fold = Some(k);
        }
        let checkpoint = Checkpoint::new(&outcome, &vocab, &config.data, tc, k);
        folds.push(FoldResult {
            fold: k,
            reports,
            log: outcome.log,
            checkpoint,
        });
    }
    Ok(CrossValidation {
        config: config.clone(),
        classes,
        folds,
    })
}

impl CrossValidation {
    /// Mean test accuracy over folds at deadline index `d`.
    pub fn mean_accuracy(&self, d: usize) -> f64 {
        let sum: f64 = self.folds.iter().map(|f| f.reports[d].accuracy).sum();
        sum / self.folds.len() as f64
    }

    /// Mean accuracy at the largest deadline.
    pub fn final_accuracy(&self) -> f64 {
        self.mean_accuracy(self.config.eval.deadlines.len() - 1)
    }

    pub fn rows(&self) -> Vec<MetricsRow> {
        let t = &self.config.train;
        self.folds
            .iter()
            .flat_map(|f| {
                f.reports.iter().map(move |r| MetricsRow {
                    mode: t.mode,
                    lambda: t.lambda,
                    tau: t.tau,
                    fold: f.fold,
                    report: r.clone(),
                })
            })
            .collect()
    }

    pub fn summary(&self) -> Summary {
        let t = &self.config.train;
        let deadlines = self
            .config
            .eval
            .deadlines
            .iter()
            .enumerate()
            .map(|(d, &deadline)| {
                let accs: Vec<f64> = self.folds.iter().map(|f| f.reports[d].accuracy).collect();
                let n = accs.len() as f64;
                let mean = accs.iter().sum::<f64>() / n;
                let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
                let mean_f1 = (0..self.classes)
                    .map(|c| self.folds.iter().map(|f| f.reports[d].classes[c].f1).sum::<f64>() / n)
                    .collect();
                DeadlineSummary {
                    deadline: format_deadline(deadline),
                    mean_accuracy: mean,
                    std_accuracy: var.sqrt(),
                    mean_f1,
                }
            })
            .collect();
        Summary {
            mode: t.mode,
            lambda: t.lambda,
            tau: t.tau,
            folds: self.folds.len(),
            classes: self.classes,
            best_epochs: self.folds.iter().map(|f| f.checkpoint.epoch).collect(),
            deadlines,
        }
    }
}

pub fn format_deadline(d: f64) -> String {
    if d.is_infinite() {
        "inf".into()
    } else {
        format!("{d}")
    }
}

/// One CSV row: configuration, fold, deadline and metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub mode: Mode,
    pub lambda: f64,
    pub tau: f64,
    pub fold: usize,
    pub report: EvalReport,
}

/// `mode,lambda,tau,fold,deadline,events,accuracy` followed by F1, then
/// precision, then recall for every class.
pub fn metrics_csv(rows: &[MetricsRow], classes: usize) -> String {
    let mut out = String::from("mode,lambda,tau,fold,deadline,events,accuracy");
    for prefix in ["f1", "precision", "recall"] {
        for c in 0..classes {
            let _ = write!(out, ",{prefix}_class_{c}");
        }
    }
    out.push('\n');
    for row in rows {
        let r = &row.report;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            row.mode,
            row.lambda,
            row.tau,
            row.fold,
            r.deadline.map_or_else(|| "inf".into(), format_deadline),
            r.events(),
            r.accuracy
        );
        for pick in [|m: &ClassMetrics| m.f1, |m: &ClassMetrics| m.precision, |m: &ClassMetrics| m.recall] {
            for m in &r.classes {
                let _ = write!(out, ",{}", pick(m));
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeadlineSummary {
    pub deadline: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub lambda: f64,
    pub tau: f64,
    pub folds: usize,
    pub classes: usize,
    pub best_epochs: Vec<usize>,
    pub deadlines: Vec<DeadlineSummary>,
}

/// Grid of configurations, expanded in mode, then λ, then τ order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub modes: Vec<Mode>,
    pub lambdas: Vec<f64>,
    pub taus: Vec<f64>,
}

impl SweepGrid {
    pub fn configs(&self, base: &Config) -> Result<Vec<Config>> {
        if self.modes.is_empty() || self.lambdas.is_empty() || self.taus.is_empty() {
            return Err(Error::Config("sweep grid has an empty axis".into()));
        }
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &lambda in &self.lambdas {
                for &tau in &self.taus {
                    let mut c = base.clone();
                    c.train.mode = mode;
                    c.train.lambda = lambda;
                    c.train.tau = tau;
                    c.validate()?;
                    out.push(c);
                }
            }
        }
        Ok(out)
    }
}

/// Runs every grid point through [`cross_validate`].
pub fn sweep(
    grid: &SweepGrid,
    base: &Config,
    events: &[EventRecord],
    observer: &mut dyn FnMut(&Config, usize, usize, usize, &Model),
) -> Result<Vec<CrossValidation>> {
    grid.configs(base)?
        .into_iter()
        .map(|c| {
            let cfg = c.clone();
            cross_validate(events, &c, &mut |k, e, s, m| observer(&cfg, k, e, s, m))
        })
        .collect()
}

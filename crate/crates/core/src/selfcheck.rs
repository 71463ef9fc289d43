//! End-to-end gradient check of every training mode at toy dimensions.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, GradCheckReport, Tape};
use crate::data::{build_vocabulary, featurize, generate_synthetic, Featurized};
use crate::error::{Error, Result};
use crate::model::{Dims, LossSettings, Mode, Model, ModelConfig};
use crate::params::Binding;
use crate::rng;
use crate::ssl::{kmeans_plus_plus, kmeans_assign, Similarity};
use crate::tensor::Tensor;

/// Toy sizes for the check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDims {
    pub vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub clusters: usize,
    pub gcn_widths: Vec<usize>,
    pub windows: Vec<usize>,
    pub feature_maps: usize,
    pub proj_dim: usize,
    pub classes: usize,
}

impl Default for ToyDims {
    fn default() -> Self {
        Self {
            vocab: 20,
            d_model: 12,
            heads: 2,
            seq_len: 8,
            batch: 4,
            clusters: 3,
            gcn_widths: vec![8, 6],
            windows: vec![3, 4, 5],
            feature_maps: 4,
            proj_dim: 6,
            classes: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModeCheck {
    pub mode: Mode,
    pub report: GradCheckReport,
}

/// Checks the combined loss of one toy batch in every mode. Parameters are
/// jittered away from their initial values so that no bias sits exactly on
/// a ReLU kink; dropout uses one fixed mask per evaluation.
pub fn gradcheck_suite(dims: &ToyDims, seed: u64, eps: f64, tol: f64) -> Result<Vec<ModeCheck>> {
    let events = generate_synthetic(8 * dims.batch.max(dims.classes), dims.classes, 0.8, seed)?;
    let vocab = build_vocabulary(&events, 1, dims.vocab)?;
    if vocab.len() != dims.vocab {
        return Err(Error::Config(format!(
            "toy corpus has {} distinct tokens, need {}",
            vocab.len(),
            dims.vocab
        )));
    }
    let config = ModelConfig {
        gcn_widths: dims.gcn_widths.clone(),
        d_model: dims.d_model,
        heads: dims.heads,
        seq_len: dims.seq_len,
        windows: dims.windows.clone(),
        feature_maps: dims.feature_maps,
        dropout: 0.5,
        proj_dim: dims.proj_dim,
        clusters: dims.clusters,
    };
    let feats: Vec<Featurized> = events
        .iter()
        .filter(|e| !vocab.is_empty_event(e))
        .take(dims.batch)
        .map(|e| featurize(e, &vocab, dims.seq_len))
        .collect::<Result<_>>()?;
    if feats.len() < dims.batch {
        return Err(Error::Config(format!("toy corpus has only {} usable events", feats.len())));
    }
    let batch: Vec<&Featurized> = feats.iter().collect();
    let model_dims = Dims {
        features: vocab.len(),
        seq_rows: vocab.sequence_rows(),
        classes: dims.classes,
    };
    let settings = LossSettings {
        lambda: 0.5,
        tau: 0.5,
        similarity: Similarity::Dot,
    };

    Mode::ALL
        .iter()
        .map(|&mode| {
            let mut model = Model::init(mode, &config, model_dims, seed)?;
            let mut jitter = rng::stream(seed, "gradcheck/jitter");
            for t in model.store.tensors_mut() {
                for v in t.data_mut() {
                    *v += jitter.random_range(-0.1..0.1);
                }
            }
            let targets = if mode == Mode::Pscd {
                let (pg, pt) = model.projections(&batch)?;
                let mut r = rng::stream(seed, "gradcheck/kmeans");
                let cg = kmeans_plus_plus(&pg, dims.clusters, &mut r)?;
                let ct = kmeans_plus_plus(&pt, dims.clusters, &mut r)?;
                Some((kmeans_assign(&pg, &cg), kmeans_assign(&pt, &ct)))
            } else {
                None
            };
            let params: Vec<(String, Tensor)> = model
                .store
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect();
            let report = grad_check(&params, eps, tol, |tape: &mut Tape, vars| {
                let binding = Binding::from_vars(vars.to_vec());
                let mut dropout = rng::stream(seed, "gradcheck/dropout");
                let parts = model.batch_loss(
                    tape,
                    &binding,
                    &batch,
                    settings,
                    targets.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())),
                    true,
                    &mut dropout,
                )?;
                Ok(parts.total)
            })?;
            Ok(ModeCheck { mode, report })
        })
        .collect()
}

/// Plain-text table of the worst entry per parameter.
pub fn format_checks(checks: &[ModeCheck]) -> String {
    let mut out = String::new();
    for c in checks {
        let status = if c.report.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "{status} {:<7} max_rel_err={:.3e} tol={:.1e}",
            c.mode.name(),
            c.report.max_rel_err,
            c.report.tol
        );
        if !c.report.passed {
            let _ = writeln!(out, "  {:<24} {:>7} {:>14} {:>14} {:>10}", "parameter", "index", "analytic", "numeric", "rel_err");
            for p in c.report.worst_offenders() {
                let _ = writeln!(
                    out,
                    "  {:<24} {:>7} {:>14.6e} {:>14.6e} {:>10.3e}",
                    p.name, p.worst_index, p.analytic, p.numeric, p.rel_err
                );
            }
        }
    }
    out
}

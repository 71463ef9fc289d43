//! Fixtures shared by the benchmarks.

use srd_core::data::{build_vocabulary, featurize, generate_synthetic, Featurized};
use srd_core::model::Dims;
use srd_core::rng;
use srd_core::{Mode, Model, ModelConfig, Tensor};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::uniform(rows, cols, 1.0, &mut rng::stream(seed, "bench/matrix"))
}

/// Featurized synthetic events with the vocabulary built over all of them.
pub fn corpus(n: usize, seq_len: usize) -> (Vec<Featurized>, Dims) {
    let events = generate_synthetic(n, 4, 0.8, 7).expect("synthetic corpus");
    let vocab = build_vocabulary(&events, 2, 5000).expect("vocabulary");
    let feats: Vec<Featurized> = events.iter().filter_map(|e| featurize(e, &vocab, seq_len).ok()).collect();
    let dims = Dims {
        features: vocab.len(),
        seq_rows: vocab.sequence_rows(),
        classes: 4,
    };
    (feats, dims)
}

/// The desk-scale model used for the synthetic experiments.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        gcn_widths: vec![32, 32],
        d_model: 32,
        heads: 4,
        seq_len: 16,
        windows: vec![3, 4, 5],
        feature_maps: 4,
        dropout: 0.5,
        proj_dim: 32,
        clusters: 0,
    }
}

pub fn model(mode: Mode, config: &ModelConfig, dims: Dims) -> Model {
    Model::init(mode, config, dims, 0).expect("model")
}

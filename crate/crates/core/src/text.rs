//! Source-post encoder: token embeddings, one multi-head self-attention
//! layer, then multi-window convolutions with max-over-time pooling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{dropout, Reduce, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Token ids padded or truncated to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub token_ids: Vec<usize>,
    /// `true` for real tokens, `false` for padding.
    pub pad_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn new(ids: &[usize], len: usize) -> Self {
        let mut token_ids: Vec<usize> = ids.iter().copied().take(len).collect();
        let real = token_ids.len();
        token_ids.resize(len, PAD_ID);
        let pad_mask = (0..len).map(|i| i < real).collect();
        Self {
            token_ids,
            pad_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn real_tokens(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }
}

/// Trainable `|V| × d_model` token vectors. Row 0 is the padding row and is
/// held at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub table: ParamId,
}

impl EmbeddingTable {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab_rows: usize,
        d_model: usize,
        rng: &mut R,
    ) -> Self {
        let mut t = Tensor::uniform(vocab_rows, d_model, 0.1, rng);
        if vocab_rows > 0 {
            t.row_mut(PAD_ID).fill(0.0);
        }
        Self {
            table: store.register("text.embedding", t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub heads: usize,
    pub d_k: usize,
    pub w_q: Vec<ParamId>,
    pub w_k: Vec<ParamId>,
    pub w_v: Vec<ParamId>,
    pub w_o: ParamId,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{heads} attention heads do not divide d_model = {d_model}"
            )));
        }
        let d_k = d_model / heads;
        let mut w_q = Vec::with_capacity(heads);
        let mut w_k = Vec::with_capacity(heads);
        let mut w_v = Vec::with_capacity(heads);
        for i in 0..heads {
            w_q.push(store.register(format!("text.attn.q{i}"), Tensor::xavier(d_model, d_k, rng)));
            w_k.push(store.register(format!("text.attn.k{i}"), Tensor::xavier(d_model, d_k, rng)));
            w_v.push(store.register(format!("text.attn.v{i}"), Tensor::xavier(d_model, d_k, rng)));
        }
        let w_o = store.register("text.attn.o", Tensor::xavier(heads * d_k, d_model, rng));
        Ok(Self {
            heads,
            d_k,
            w_q,
            w_k,
            w_v,
            w_o,
        })
    }
}

/// One bank of convolution filters sharing a window size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBank {
    pub window: usize,
    /// `(window · d_model) × feature_maps`; column `f` is filter `f` flattened.
    pub filters: ParamId,
    /// `1 × feature_maps`, one scalar bias per filter.
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub banks: Vec<ConvBank>,
    pub dropout: f64,
}

impl ConvParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d_model: usize,
        windows: &[usize],
        feature_maps: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let banks = windows
            .iter()
            .map(|&w| ConvBank {
                window: w,
                filters: store.register(
                    format!("text.conv{w}.w"),
                    Tensor::xavier(w * d_model, feature_maps, rng),
                ),
                bias: store.register(format!("text.conv{w}.b"), Tensor::zeros(1, feature_maps)),
            })
            .collect();
        Self { banks, dropout }
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        self.banks.iter().map(|b| store.get(b.bias).cols()).sum()
    }

    pub fn max_window(&self) -> usize {
        self.banks.iter().map(|b| b.window).max().unwrap_or(0)
    }
}

/// Row `i` is the embedding of token `i`; padding rows are zero.
pub fn embed(
    tape: &mut Tape,
    vars: &Binding,
    table: &EmbeddingTable,
    seq: &TokenSequence,
) -> Result<Var> {
    tape.lookup(vars[table.table], &seq.token_ids, PAD_ID)
}

/// Multi-head self-attention with `Q = K = V = x`:
/// `Z_i = softmax(x W_i^Q (x W_i^K)^T / √d_k) x W_i^V`, then
/// `Z = [Z_1 .. Z_h] W^O`.
pub fn self_attention(
    tape: &mut Tape,
    vars: &Binding,
    params: &AttentionParams,
    x: Var,
) -> Result<Var> {
    let scale = 1.0 / (params.d_k as f64).sqrt();
    let mut heads = Vec::with_capacity(params.heads);
    for i in 0..params.heads {
        let q = tape.matmul(x, vars[params.w_q[i]])?;
        let k = tape.matmul(x, vars[params.w_k[i]])?;
        let v = tape.matmul(x, vars[params.w_v[i]])?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale)?;
        let weights = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(weights, v)?);
    }
    let z = tape.concat_cols(&heads)?;
    tape.matmul(z, vars[params.w_o])
}

/// For every bank: `ReLU(w · z_{i:i+h-1} + b)` over all windows, max over
/// windows, then the pooled features of every bank concatenated. Inverted
/// dropout is applied to the result in training mode.
pub fn conv_maxpool<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &Binding,
    params: &ConvParams,
    z: Var,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let len = tape.shape(z).0;
    let mut pooled = Vec::with_capacity(params.banks.len());
    for bank in &params.banks {
        if bank.window > len {
            return Err(Error::Config(format!(
                "sequence length {len} shorter than window {}",
                bank.window
            )));
        }
        let windows = tape.unfold(z, bank.window)?;
        let maps = tape.matmul(windows, vars[bank.filters])?;
        let maps = tape.add_bias(maps, vars[bank.bias])?;
        let maps = tape.relu(maps)?;
        pooled.push(tape.reduce(maps, Reduce::MaxCols)?);
    }
    let t = tape.concat_cols(&pooled)?;
    dropout(tape, t, params.dropout, training, rng)
}

/// Full text path, returning the semantic representation `t`.
#[allow(clippy::too_many_arguments)]
pub fn text_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &Binding,
    table: &EmbeddingTable,
    attn: &AttentionParams,
    conv: &ConvParams,
    seq: &TokenSequence,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let x = embed(tape, vars, table, seq)?;
    let z = self_attention(tape, vars, attn, x)?;
    conv_maxpool(tape, vars, conv, z, training, rng)
}

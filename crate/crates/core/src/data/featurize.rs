use super::{EventRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::PropagationGraph;
use crate::tensor::Tensor;
use crate::text::TokenSequence;

/// Model-ready views of one event.
#[derive(Clone, Debug, PartialEq)]
pub struct Featurized {
    pub graph: PropagationGraph,
    pub sequence: TokenSequence,
    pub label: usize,
}

/// Multi-hot presence vector per node (repeats collapse to 1, unknown tokens
/// are dropped) and the source post's token ids, padded or truncated to
/// `seq_len`, with unknown tokens mapped to the unknown id.
///
/// Events whose source post has no in-vocabulary token return
/// [`Error::EmptyEvent`].
pub fn featurize(event: &EventRecord, vocab: &Vocabulary, seq_len: usize) -> Result<Featurized> {
    if vocab.is_empty_event(event) {
        return Err(Error::EmptyEvent);
    }
    featurize_unchecked(event, vocab, seq_len)
}

/// As [`featurize`] but without the empty-event check.
pub fn featurize_unchecked(event: &EventRecord, vocab: &Vocabulary, seq_len: usize) -> Result<Featurized> {
    let graph = graph_view(event, vocab)?;
    let sequence = sequence_view(event, vocab, seq_len);
    Ok(Featurized {
        graph,
        sequence,
        label: event.label,
    })
}

pub fn graph_view(event: &EventRecord, vocab: &Vocabulary) -> Result<PropagationGraph> {
    let mut x = Tensor::zeros(event.nodes.len(), vocab.len());
    for (i, node) in event.nodes.iter().enumerate() {
        for t in &node.tokens {
            if let Some(id) = vocab.id(t) {
                x.set(i, id - 2, 1.0);
            }
        }
    }
    PropagationGraph::new(event.edges(), x)
}

pub fn sequence_view(event: &EventRecord, vocab: &Vocabulary, seq_len: usize) -> TokenSequence {
    let ids: Vec<usize> = event.root().tokens.iter().map(|t| vocab.seq_id(t)).collect();
    TokenSequence::new(&ids, seq_len)
}

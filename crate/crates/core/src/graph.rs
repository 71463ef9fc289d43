//! Propagation-tree encoder: a stack of graph convolutions over the
//! symmetrically normalized reply tree, followed by mean-pool readout.

use rand::Rng;

use crate::autodiff::{Reduce, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Directed reply adjacency: `A[child][parent] = 1` for every edge.
pub fn build_adjacency(edges: &[(usize, usize)], n: usize) -> Result<Tensor> {
    let mut a = Tensor::zeros(n, n);
    for &(child, parent) in edges {
        if child >= n || parent >= n {
            return Err(Error::Input(format!(
                "edge ({child}, {parent}) out of range for {n} nodes"
            )));
        }
        if child == parent {
            return Err(Error::Input(format!("self edge on node {child}")));
        }
        if a.get(child, parent) != 0.0 {
            return Err(Error::Input(format!("duplicate edge ({child}, {parent})")));
        }
        a.set(child, parent, 1.0);
    }
    Ok(a)
}

/// `D^(-1/2) (sym(A) + I) D^(-1/2)` where `sym` makes every reply edge
/// undirected and `D` holds the row sums of `sym(A) + I`.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape {
            op: "normalize_adjacency",
            lhs: a.shape(),
            rhs: (n, n),
        });
    }
    let mut hat = Tensor::identity(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && (a.get(i, j) != 0.0 || a.get(j, i) != 0.0) {
                hat.set(i, j, 1.0);
            }
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / hat.row(i).iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            let v = hat.get(i, j);
            if v != 0.0 {
                hat.set(i, j, v * inv_sqrt[i] * inv_sqrt[j]);
            }
        }
    }
    Ok(hat)
}

/// One event's propagation tree, ready for message passing.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationGraph {
    pub n: usize,
    /// `(child, parent)` node index pairs, as recorded in the event.
    pub edges: Vec<(usize, usize)>,
    pub a_hat_norm: Tensor,
    /// Multi-hot node features, one row per node.
    pub node_features: Tensor,
}

impl PropagationGraph {
    pub fn new(edges: Vec<(usize, usize)>, node_features: Tensor) -> Result<Self> {
        let n = node_features.rows();
        if n == 0 {
            return Err(Error::Input("propagation graph with no nodes".into()));
        }
        let a = build_adjacency(&edges, n)?;
        let a_hat_norm = normalize_adjacency(&a)?;
        Ok(Self {
            n,
            edges,
            a_hat_norm,
            node_features,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }
}

/// Weights `W^(1..L)`; layer `l` maps width `d_{l-1}` to `d_l`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GcnParams {
    pub weights: Vec<ParamId>,
}

impl GcnParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input_dim: usize,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::Config("GCN needs at least one layer".into()));
        }
        let mut weights = Vec::with_capacity(widths.len());
        let mut prev = input_dim;
        for (l, &w) in widths.iter().enumerate() {
            weights.push(store.register(format!("gcn.w{}", l + 1), Tensor::xavier(prev, w, rng)));
            prev = w;
        }
        Ok(Self { weights })
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        self.weights.last().map_or(0, |&w| store.get(w).cols())
    }
}

/// `H^(l) = ReLU(Â_norm · H^(l-1) · W^(l))` for every layer, starting from
/// the multi-hot features. Returns `H^(L)`.
pub fn gcn_forward(
    tape: &mut Tape,
    vars: &Binding,
    params: &GcnParams,
    graph: &PropagationGraph,
) -> Result<Var> {
    let adj = tape.constant(graph.a_hat_norm.clone())?;
    let mut h = tape.constant(graph.node_features.clone())?;
    for &w in &params.weights {
        let hw = tape.matmul(h, vars[w])?;
        let agg = tape.matmul(adj, hw)?;
        h = tape.relu(agg)?;
    }
    Ok(h)
}

/// Column-wise mean over nodes: the propagation representation `g`.
pub fn readout_mean(tape: &mut Tape, h: Var) -> Result<Var> {
    if tape.shape(h).0 == 0 {
        return Err(Error::Input("readout over an empty graph".into()));
    }
    tape.reduce(h, Reduce::MeanRows)
}

pub fn propagation_representation(
    tape: &mut Tape,
    vars: &Binding,
    params: &GcnParams,
    graph: &PropagationGraph,
) -> Result<Var> {
    let h = gcn_forward(tape, vars, params, graph)?;
    readout_mean(tape, h)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn one_layer(store: &mut ParamStore, w: Tensor) -> GcnParams {
        GcnParams {
            weights: vec![store.register("w", w)],
        }
    }

    #[test]
    fn adjacency_examples() {
        assert_eq!(build_adjacency(&[], 1).unwrap(), Tensor::zeros(1, 1));
        assert_eq!(
            build_adjacency(&[(1, 0)], 2).unwrap(),
            Tensor::from_rows(&[&[0.0, 0.0], &[1.0, 0.0]])
        );
        let star = build_adjacency(&[(1, 0), (2, 0)], 3).unwrap();
        assert_eq!(star.row(1), &[1.0, 0.0, 0.0]);
        assert_eq!(star.row(2), &[1.0, 0.0, 0.0]);
        assert_eq!(star.row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn adjacency_errors() {
        assert!(matches!(build_adjacency(&[(2, 0)], 2), Err(Error::Input(_))));
        assert!(matches!(build_adjacency(&[(1, 0), (1, 0)], 2), Err(Error::Input(_))));
        assert!(matches!(build_adjacency(&[(1, 1)], 2), Err(Error::Input(_))));
    }

    #[test]
    fn normalization_examples() {
        let one = normalize_adjacency(&Tensor::zeros(1, 1)).unwrap();
        assert_eq!(one.data(), &[1.0]);

        let chain = normalize_adjacency(&build_adjacency(&[(1, 0)], 2).unwrap()).unwrap();
        for &v in chain.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }

        // Star: root degree 3 (self + 2), children degree 2.
        let star = normalize_adjacency(&build_adjacency(&[(1, 0), (2, 0)], 3).unwrap()).unwrap();
        let root_child = 1.0 / 6f64.sqrt();
        assert!((star.get(0, 1) - root_child).abs() < 1e-15);
        assert!((star.get(2, 0) - root_child).abs() < 1e-15);
        assert!((star.get(0, 1) - 0.40825).abs() < 1e-5);
        assert!((star.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((star.get(1, 1) - 0.5).abs() < 1e-15);
        assert_eq!(star.get(1, 2), 0.0);
    }

    #[test]
    fn normalization_rejects_non_square() {
        assert!(matches!(
            normalize_adjacency(&Tensor::zeros(2, 3)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn single_node_identity_weights_pass_features_through() {
        let mut store = ParamStore::new();
        let p = one_layer(&mut store, Tensor::identity(3));
        let g = PropagationGraph::new(vec![], Tensor::row_vector(&[1.0, 0.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape).unwrap();
        let h = gcn_forward(&mut tape, &vars, &p, &g).unwrap();
        assert_eq!(tape.value(h).data(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn equal_features_are_a_fixed_point() {
        let mut store = ParamStore::new();
        let p = GcnParams {
            weights: vec![
                store.register("w1", Tensor::identity(2)),
                store.register("w2", Tensor::identity(2)),
            ],
        };
        let x = Tensor::from_rows(&[&[0.3, 1.0], &[0.3, 1.0]]);
        let g = PropagationGraph::new(vec![(1, 0)], x.clone()).unwrap();
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape).unwrap();
        let h = gcn_forward(&mut tape, &vars, &p, &g).unwrap();
        assert!(tape.value(h).max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn readout_examples() {
        let mut tape = Tape::new();
        let one = tape.constant(Tensor::row_vector(&[1.0, 2.0])).unwrap();
        let r = readout_mean(&mut tape, one).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0, 2.0]);

        let h = tape.param(Tensor::from_rows(&[&[1.0, 3.0], &[3.0, 1.0], &[2.0, 2.0], &[0.0, 0.0]])).unwrap();
        let r = readout_mean(&mut tape, h).unwrap();
        assert_eq!(tape.value(r).data(), &[1.5, 1.5]);
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(h).unwrap().data().iter().all(|&v| v == 0.25));

        let empty = tape.constant(Tensor::zeros(0, 2)).unwrap();
        assert!(matches!(readout_mean(&mut tape, empty), Err(Error::Input(_))));
    }

    #[test]
    fn feature_dimension_mismatch_is_shape_error() {
        let mut store = ParamStore::new();
        let p = one_layer(&mut store, Tensor::identity(4));
        let g = PropagationGraph::new(vec![], Tensor::row_vector(&[1.0, 0.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape).unwrap();
        assert!(matches!(
            gcn_forward(&mut tape, &vars, &p, &g),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn gcn_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::uniform(4, 5, 1.0, &mut rng).map(|v| v.abs());
        let g = PropagationGraph::new(vec![(1, 0), (2, 0), (3, 1)], x).unwrap();
        let params = vec![
            ("w1".to_string(), Tensor::xavier(5, 4, &mut rng)),
            ("w2".to_string(), Tensor::xavier(4, 3, &mut rng)),
        ];
        let report = crate::autodiff::grad_check(&params, 1e-5, 1e-4, |tape, v| {
            let p = GcnParams {
                weights: vec![ParamId(0), ParamId(1)],
            };
            let binding = Binding::from_vars(v.to_vec());
            let gv = propagation_representation(tape, &binding, &p, &g)?;
            let sq = tape.mul(gv, gv)?;
            tape.sum(sq)
        })
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}

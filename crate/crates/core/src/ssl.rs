//! Self-supervised objectives coupling the propagation view `g` and the
//! semantic view `t` of the same events.
//!
//! * Instance discrimination: an InfoNCE / NT-Xent loss where `(g_i, t_i)`
//!   is the positive pair and `(g_i, t_j)`, `j ≠ i`, are in-batch negatives.
//! * Cluster discrimination: k-means runs separately on each projected view;
//!   each view's classifier is then trained to predict the *other* view's
//!   cluster assignment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    /// Raw inner product.
    #[default]
    Dot,
    /// Inner product of L2-normalized rows.
    Cosine,
}

/// Paired views of one minibatch; row `i` of both tensors is the same event.
#[derive(Clone, Copy, Debug)]
pub struct ViewBatch {
    pub g: Var,
    pub t: Var,
}

/// Affine map followed by ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Head {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.register(format!("{name}.w"), Tensor::xavier(input, output, rng)),
            bias: store.register(format!("{name}.b"), Tensor::zeros(1, output)),
        }
    }
}

/// `E₁` maps `g` and `E₂` maps `t` into a shared `d_proj` space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHeads {
    pub graph: Head,
    pub text: Head,
}

impl ProjectionHeads {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        graph_dim: usize,
        text_dim: usize,
        proj_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            graph: Head::init(store, "ssl.proj_graph", graph_dim, proj_dim, rng),
            text: Head::init(store, "ssl.proj_text", text_dim, proj_dim, rng),
        }
    }
}

/// `ReLU(view · W + b)`.
pub fn project(tape: &mut Tape, vars: &Binding, head: &Head, view: Var) -> Result<Var> {
    let z = tape.matmul(view, vars[head.weight])?;
    let z = tape.add_bias(z, vars[head.bias])?;
    tape.relu(z)
}

/// `Σ_i −log( exp(s(g_i,t_i)/τ) / Σ_j exp(s(g_i,t_j)/τ) )` over the batch.
/// Both views must already share a width (see [`project`]).
pub fn psid_loss(tape: &mut Tape, batch: ViewBatch, tau: f64, sim: Similarity) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let (b, _) = tape.shape(batch.g);
    if b < 2 {
        return Err(Error::Contract(format!(
            "instance discrimination needs at least 2 events per batch, got {b}"
        )));
    }
    if tape.shape(batch.t) != tape.shape(batch.g) {
        return Err(Error::Shape {
            op: "psid_loss",
            lhs: tape.shape(batch.g),
            rhs: tape.shape(batch.t),
        });
    }
    let (g, t) = match sim {
        Similarity::Dot => (batch.g, batch.t),
        Similarity::Cosine => (tape.normalize_rows(batch.g)?, tape.normalize_rows(batch.t)?),
    };
    let tt = tape.transpose(t)?;
    let scores = tape.matmul(g, tt)?;
    let scores = tape.scale(scores, 1.0 / tau)?;
    let diag: Vec<usize> = (0..b).collect();
    cross_entropy(tape, scores, &diag)
}

/// `−Σ_i log softmax(logits_i)[targets_i]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let lsm = tape.log_softmax_rows(logits)?;
    let picked = tape.pick(lsm, targets)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0)
}

/// Nearest centroid in squared Euclidean distance, lowest index on ties.
/// `centroids` is `d × K`, one centroid per column.
pub fn kmeans_assign(points: &Tensor, centroids: &Tensor) -> Vec<usize> {
    assert_eq!(points.cols(), centroids.rows(), "point/centroid width");
    (0..points.rows())
        .map(|i| nearest(points.row(i), centroids).0)
        .collect()
}

fn sq_dist_to_column(p: &[f64], centroids: &Tensor, k: usize) -> f64 {
    p.iter()
        .enumerate()
        .map(|(d, &x)| {
            let diff = x - centroids.get(d, k);
            diff * diff
        })
        .sum()
}

fn nearest(p: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..centroids.cols() {
        let d = sq_dist_to_column(p, centroids, k);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// `Σ_i ‖x_i − S a_i‖²` for the given assignments.
pub fn kmeans_objective(points: &Tensor, centroids: &Tensor, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &k)| sq_dist_to_column(points.row(i), centroids, k))
        .sum()
}

/// Moves every centroid to the mean of its assigned points. A centroid with
/// no points is re-seeded at the point farthest from its own centroid
/// (distinct points for distinct empty clusters).
pub fn kmeans_update(points: &Tensor, assignments: &[usize], centroids: &Tensor) -> Tensor {
    let (d, k) = centroids.shape();
    let mut sums = Tensor::zeros(d, k);
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (dim, &x) in points.row(i).iter().enumerate() {
            sums.set(dim, a, sums.get(dim, a) + x);
        }
    }
    let mut out = centroids.clone();
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for dim in 0..d {
                out.set(dim, c, sums.get(dim, c) * inv);
            }
        }
    }

    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() && points.rows() > 0 {
        let mut far: Vec<(usize, f64)> = assignments
            .iter()
            .enumerate()
            .map(|(i, &a)| (i, sq_dist_to_column(points.row(i), centroids, a)))
            .collect();
        // Farthest first; stable on index for equal distances.
        far.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        for (&c, &(i, _)) in empty.iter().zip(&far) {
            for dim in 0..d {
                out.set(dim, c, points.get(i, dim));
            }
        }
    }
    out
}

/// k-means++ seeding: first centroid uniform, the rest sampled proportional
/// to squared distance from the nearest chosen centroid.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(points: &Tensor, k: usize, rng: &mut R) -> Result<Tensor> {
    let n = points.rows();
    if n == 0 || k == 0 {
        return Err(Error::Input("k-means++ needs points and clusters".into()));
    }
    let d = points.cols();
    let mut centroids = Tensor::zeros(d, k);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    for c in 0..k {
        if c > 0 {
            let dists: Vec<f64> = (0..n)
                .map(|i| {
                    chosen
                        .iter()
                        .map(|&j| {
                            points
                                .row(i)
                                .iter()
                                .zip(points.row(j))
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let total: f64 = dists.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut idx = n - 1;
                for (i, &w) in dists.iter().enumerate() {
                    if u < w {
                        idx = i;
                        break;
                    }
                    u -= w;
                }
                idx
            } else {
                rng.random_range(0..n)
            };
            chosen.push(pick);
        }
        for dim in 0..d {
            centroids.set(dim, c, points.get(chosen[c], dim));
        }
    }
    Ok(centroids)
}

/// One assign-then-update round. Returns the new centroids and the
/// assignments they were computed from.
pub fn kmeans_round(points: &Tensor, centroids: &Tensor) -> (Tensor, Vec<usize>) {
    let a = kmeans_assign(points, centroids);
    let next = kmeans_update(points, &a, centroids);
    (next, a)
}

/// Centroids of both views plus the two swapped-prediction classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub k: usize,
    /// `d_proj × K` centroids of the projected graph view.
    pub graph_centroids: Option<Tensor>,
    /// `d_proj × K` centroids of the projected text view.
    pub text_centroids: Option<Tensor>,
    /// `f₁`: predicts the text-view cluster from the projected graph view.
    pub graph_classifier: ClassifierHead,
    /// `f₂`: predicts the graph-view cluster from the projected text view.
    pub text_classifier: ClassifierHead,
}

/// Affine classifier producing logits over K clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ClassifierHead {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.register(format!("{name}.w"), Tensor::xavier(input, classes, rng)),
            bias: store.register(format!("{name}.b"), Tensor::zeros(1, classes)),
        }
    }

    pub fn logits(&self, tape: &mut Tape, vars: &Binding, x: Var) -> Result<Var> {
        let z = tape.matmul(x, vars[self.weight])?;
        tape.add_bias(z, vars[self.bias])
    }

    pub fn classes(&self, store: &ParamStore) -> usize {
        store.get(self.bias).cols()
    }
}

impl ClusterState {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        proj_dim: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 clusters, got {k}")));
        }
        Ok(Self {
            k,
            graph_centroids: None,
            text_centroids: None,
            graph_classifier: ClassifierHead::init(store, "ssl.cluster_graph", proj_dim, k, rng),
            text_classifier: ClassifierHead::init(store, "ssl.cluster_text", proj_dim, k, rng),
        })
    }

    pub fn is_seeded(&self) -> bool {
        self.graph_centroids.is_some() && self.text_centroids.is_some()
    }

    /// Seeds both centroid matrices with k-means++ on the given projections.
    pub fn seed<R: Rng + ?Sized>(&mut self, graph_proj: &Tensor, text_proj: &Tensor, rng: &mut R) -> Result<()> {
        self.graph_centroids = Some(kmeans_plus_plus(graph_proj, self.k, rng)?);
        self.text_centroids = Some(kmeans_plus_plus(text_proj, self.k, rng)?);
        Ok(())
    }

    /// Frozen-centroid assignments `(a₁, a₂)` for projected views.
    pub fn assign(&self, graph_proj: &Tensor, text_proj: &Tensor) -> Result<(Vec<usize>, Vec<usize>)> {
        match (&self.graph_centroids, &self.text_centroids) {
            (Some(sg), Some(st)) => Ok((kmeans_assign(graph_proj, sg), kmeans_assign(text_proj, st))),
            _ => Err(Error::Contract("cluster centroids used before seeding".into())),
        }
    }

    /// One alternating round on each view's projections.
    pub fn update(&mut self, graph_proj: &Tensor, text_proj: &Tensor) -> Result<()> {
        match (&self.graph_centroids, &self.text_centroids) {
            (Some(sg), Some(st)) => {
                let (ng, _) = kmeans_round(graph_proj, sg);
                let (nt, _) = kmeans_round(text_proj, st);
                self.graph_centroids = Some(ng);
                self.text_centroids = Some(nt);
                Ok(())
            }
            _ => Err(Error::Contract("cluster centroids used before seeding".into())),
        }
    }
}

/// Swapped prediction:
/// `Σ ℓ(f₁(E₁(g)), a₂) + ℓ(f₂(E₂(t)), a₁)` with `ℓ` the softmax
/// cross-entropy. Assignments enter as constants.
pub fn pscd_loss(
    tape: &mut Tape,
    vars: &Binding,
    store: &ParamStore,
    state: &ClusterState,
    projected: ViewBatch,
    graph_assign: &[usize],
    text_assign: &[usize],
) -> Result<Var> {
    for head in [&state.graph_classifier, &state.text_classifier] {
        let c = head.classes(store);
        if c != state.k {
            return Err(Error::Config(format!(
                "cluster classifier has {c} outputs but K = {}",
                state.k
            )));
        }
    }
    if let Some(&bad) = graph_assign.iter().chain(text_assign).find(|&&a| a >= state.k) {
        return Err(Error::Input(format!("assignment {bad} outside {} clusters", state.k)));
    }
    let lg = state.graph_classifier.logits(tape, vars, projected.g)?;
    let lt = state.text_classifier.logits(tape, vars, projected.t)?;
    let from_graph = cross_entropy(tape, lg, text_assign)?;
    let from_text = cross_entropy(tape, lt, graph_assign)?;
    tape.add(from_graph, from_text)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn psid_value(g: Tensor, t: Tensor, tau: f64, sim: Similarity) -> f64 {
        let mut tape = Tape::new();
        let g = tape.constant(g).unwrap();
        let t = tape.constant(t).unwrap();
        let l = psid_loss(&mut tape, ViewBatch { g, t }, tau, sim).unwrap();
        tape.scalar(l)
    }

    #[test]
    fn psid_uniform_similarities() {
        for tau in [0.1, 1.0, 2.0] {
            let g = Tensor::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]);
            let t = Tensor::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]);
            let l = psid_value(g, t, tau, Similarity::Dot);
            assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn psid_hand_evaluated_batch() {
        // s(g1,t1)=1, s(g1,t2)=0, s(g2,t2)=1, s(g2,t1)=0.
        let g = Tensor::identity(2);
        let t = Tensor::identity(2);
        let l = psid_value(g, t, 1.0, Similarity::Dot);
        let expected = 2.0 * (1.0 + (-1f64).exp()).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.6265).abs() < 1e-4);
    }

    #[test]
    fn psid_vanishes_as_positives_dominate() {
        let big = Tensor::from_rows(&[&[40.0, 0.0], &[0.0, 40.0]]);
        let l = psid_value(big.clone(), big, 1.0, Similarity::Dot);
        assert!(l < 1e-100);
    }

    #[test]
    fn psid_rejects_single_event_batches() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::row_vector(&[1.0])).unwrap();
        assert!(matches!(
            psid_loss(&mut tape, ViewBatch { g, t: g }, 1.0, Similarity::Dot),
            Err(Error::Contract(_))
        ));
        let g2 = tape.constant(Tensor::identity(2)).unwrap();
        assert!(matches!(
            psid_loss(&mut tape, ViewBatch { g: g2, t: g2 }, 0.0, Similarity::Dot),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn psid_decreases_with_margin() {
        let mut prev = f64::INFINITY;
        for step in 1..20 {
            let delta = step as f64 * 0.25;
            let g = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
            let t = g.map(|v| if v > 0.0 { delta } else { 0.0 });
            let l = psid_value(g, t, 0.5, Similarity::Dot);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn project_examples() {
        let mut store = ParamStore::new();
        let head = Head {
            weight: store.register("w", Tensor::zeros(3, 2)),
            bias: store.register("b", Tensor::zeros(1, 2)),
        };
        let id_head = Head {
            weight: store.register("wi", Tensor::identity(3)),
            bias: store.register("bi", Tensor::zeros(1, 3)),
        };
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape).unwrap();
        let x = tape.constant(Tensor::row_vector(&[1.0, 2.0, 0.5])).unwrap();
        let z = project(&mut tape, &vars, &head, x).unwrap();
        assert_eq!(tape.value(z).data(), &[0.0, 0.0]);
        let z = project(&mut tape, &vars, &id_head, x).unwrap();
        assert_eq!(tape.value(z), tape.value(x));
        let bad = tape.constant(Tensor::row_vector(&[1.0])).unwrap();
        assert!(matches!(project(&mut tape, &vars, &head, bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn projection_and_psid_gradients_match_finite_differences() {
        let mut r = rng(21);
        let g = Tensor::uniform(4, 5, 1.0, &mut r);
        let t = Tensor::uniform(4, 7, 1.0, &mut r);
        let params = vec![
            ("e1.w".into(), Tensor::xavier(5, 3, &mut r)),
            ("e1.b".into(), Tensor::uniform(1, 3, 0.5, &mut r).map(|v| v + 0.6)),
            ("e2.w".into(), Tensor::xavier(7, 3, &mut r)),
            ("e2.b".into(), Tensor::uniform(1, 3, 0.5, &mut r).map(|v| v + 0.6)),
        ];
        for sim in [Similarity::Dot, Similarity::Cosine] {
            let report = crate::autodiff::grad_check(&params, 1e-5, 1e-4, |tape, v| {
                let vars = Binding::from_vars(v.to_vec());
                let h1 = Head { weight: ParamId(0), bias: ParamId(1) };
                let h2 = Head { weight: ParamId(2), bias: ParamId(3) };
                let gv = tape.constant(g.clone())?;
                let tv = tape.constant(t.clone())?;
                let pg = project(tape, &vars, &h1, gv)?;
                let pt = project(tape, &vars, &h2, tv)?;
                psid_loss(tape, ViewBatch { g: pg, t: pt }, 0.5, sim)
            })
            .unwrap();
            assert!(report.passed, "{sim:?}: {report:?}");
        }
    }

    #[test]
    fn assign_examples() {
        let c = Tensor::from_rows(&[&[1.0, 9.0]]);
        let p = Tensor::from_rows(&[&[0.0], &[10.0], &[9.0], &[5.0]]);
        // 5 is equidistant from 1 and 9: lowest index wins.
        assert_eq!(kmeans_assign(&p, &c), vec![0, 1, 1, 0]);
    }

    #[test]
    fn assign_matches_brute_force_scan() {
        let mut r = rng(4);
        let points = Tensor::uniform(20, 4, 1.0, &mut r);
        let centroids = Tensor::uniform(4, 3, 1.0, &mut r);
        let got = kmeans_assign(&points, &centroids);
        for i in 0..20 {
            let dists: Vec<f64> = (0..3)
                .map(|k| (0..4).map(|d| (points.get(i, d) - centroids.get(d, k)).powi(2)).sum())
                .collect();
            let best = (0..3)
                .min_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap().then(a.cmp(&b)))
                .unwrap();
            assert_eq!(got[i], best);
        }
    }

    #[test]
    fn update_examples() {
        let p = Tensor::from_rows(&[&[0.0, 2.0], &[2.0, 4.0], &[4.0, 0.0]]);
        let c = Tensor::zeros(2, 2);
        let all_one = kmeans_update(&p, &[1, 1, 1], &c);
        assert_eq!(all_one.get(0, 1), 2.0);
        assert_eq!(all_one.get(1, 1), 2.0);
        // Empty cluster 0 re-seeded at the point farthest from centroid 1 (origin).
        assert_eq!((all_one.get(0, 0), all_one.get(1, 0)), (2.0, 4.0));

        let c3 = Tensor::zeros(2, 3);
        let singles = kmeans_update(&p, &[0, 1, 2], &c3);
        assert_eq!(singles, p.transpose());
    }

    #[test]
    fn objective_is_non_increasing_over_rounds() {
        let mut r = rng(12);
        let points = Tensor::uniform(50, 3, 1.0, &mut r);
        let mut c = kmeans_plus_plus(&points, 4, &mut r).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let (next, _) = kmeans_round(&points, &c);
            c = next;
            let obj = kmeans_objective(&points, &c, &kmeans_assign(&points, &c));
            assert!(obj <= prev);
            prev = obj;
        }
    }

    fn pscd_setup(k: usize) -> (ParamStore, ClusterState) {
        let mut store = ParamStore::new();
        let state = ClusterState::init(&mut store, 3, k, &mut rng(1)).unwrap();
        (store, state)
    }

    #[test]
    fn pscd_uniform_logits_give_ln_k() {
        let (mut store, state) = pscd_setup(2);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape).unwrap();
        let g = tape.constant(Tensor::uniform(1, 3, 1.0, &mut rng(2))).unwrap();
        let t = tape.constant(Tensor::uniform(1, 3, 1.0, &mut rng(3))).unwrap();
        let l = pscd_loss(&mut tape, &vars, &store, &state, ViewBatch { g, t }, &[1], &[0]).unwrap();
        // Two terms, each ln 2.
        assert!((tape.scalar(l) - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pscd_peaked_logits_vanish() {
        let (mut store, state) = pscd_setup(2);
        for head in [&state.graph_classifier, &state.text_classifier] {
            store.get_mut(head.weight).data_mut().fill(0.0);
            store.get_mut(head.bias).data_mut().copy_from_slice(&[60.0, -60.0]);
        }
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape).unwrap();
        let g = tape.constant(Tensor::row_vector(&[1.0, 1.0, 1.0])).unwrap();
        let l = pscd_loss(&mut tape, &vars, &store, &state, ViewBatch { g, t: g }, &[0], &[0]).unwrap();
        assert!(tape.scalar(l) < 1e-50);
    }

    #[test]
    fn pscd_is_symmetric_under_view_swap() {
        let (store, state) = pscd_setup(3);
        let g = Tensor::uniform(4, 3, 1.0, &mut rng(5));
        let t = Tensor::uniform(4, 3, 1.0, &mut rng(6));
        let (a1, a2) = (vec![0, 2, 1, 1], vec![2, 2, 0, 1]);
        let eval = |state: &ClusterState, g: &Tensor, t: &Tensor, a1: &[usize], a2: &[usize]| {
            let mut tape = Tape::new();
            let vars = store.bind(&mut tape).unwrap();
            let g = tape.constant(g.clone()).unwrap();
            let t = tape.constant(t.clone()).unwrap();
            let l = pscd_loss(&mut tape, &vars, &store, state, ViewBatch { g, t }, a1, a2).unwrap();
            tape.scalar(l)
        };
        let mut swapped = state.clone();
        std::mem::swap(&mut swapped.graph_classifier, &mut swapped.text_classifier);
        std::mem::swap(&mut swapped.graph_centroids, &mut swapped.text_centroids);
        let l = eval(&state, &g, &t, &a1, &a2);
        let ls = eval(&swapped, &t, &g, &a2, &a1);
        assert!((l - ls).abs() < 1e-12);
    }

    #[test]
    fn pscd_classifier_width_must_match_k() {
        let (store, mut state) = pscd_setup(3);
        state.k = 4;
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape).unwrap();
        let g = tape.constant(Tensor::row_vector(&[1.0, 1.0, 1.0])).unwrap();
        assert!(matches!(
            pscd_loss(&mut tape, &vars, &store, &state, ViewBatch { g, t: g }, &[0], &[0]),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn psid_is_non_negative_and_permutation_invariant(seed in any::<u64>(), b in 2usize..7) {
            let mut r = rng(seed);
            let g = Tensor::uniform(b, 3, 2.0, &mut r);
            let t = Tensor::uniform(b, 3, 2.0, &mut r);
            let l = psid_value(g.clone(), t.clone(), 0.5, Similarity::Dot);
            prop_assert!(l >= 0.0);

            let mut perm: Vec<usize> = (0..b).collect();
            perm.rotate_left(seed as usize % b);
            let permute = |x: &Tensor| {
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for (dst, &src) in perm.iter().enumerate() {
                    out.row_mut(dst).copy_from_slice(x.row(src));
                }
                out
            };
            let lp = psid_value(permute(&g), permute(&t), 0.5, Similarity::Dot);
            prop_assert!((l - lp).abs() < 1e-10);
        }

        #[test]
        fn psid_equals_b_ln_b_for_equal_similarities(b in 2usize..9, v in -3.0f64..3.0) {
            let g = Tensor::filled(b, 2, 1.0);
            let t = Tensor::filled(b, 2, v);
            let l = psid_value(g, t, 0.7, Similarity::Dot);
            prop_assert!((l - b as f64 * (b as f64).ln()).abs() < 1e-9);
        }
    }
}

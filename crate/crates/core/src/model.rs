//! The full detector: both encoders, the self-supervised heads and the
//! classification head, wired according to the training mode.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Tape, Var};
use crate::data::Featurized;
use crate::error::{Error, Result};
use crate::graph::{propagation_representation, GcnParams};
use crate::params::{Binding, ParamId, ParamStore};
use crate::rng;
use crate::ssl::{cross_entropy, project, pscd_loss, psid_loss, ClusterState, ProjectionHeads, Similarity, ViewBatch};
use crate::tensor::Tensor;
use crate::text::{text_forward, AttentionParams, ConvParams, EmbeddingTable};

/// Which views feed the detector and which auxiliary loss is trained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// Detector on `g`, instance discrimination between `g` and `t`.
    #[default]
    #[serde(rename = "psid")]
    Psid,
    /// Detector on `g`, swapped cluster prediction between `g` and `t`.
    #[serde(rename = "pscd")]
    Pscd,
    /// Detector on `[g, t]`, no auxiliary loss.
    #[serde(rename = "concat")]
    Concat,
    /// Detector on `g` only.
    #[serde(rename = "graph")]
    GraphOnly,
    /// Detector on `t` only.
    #[serde(rename = "text")]
    TextOnly,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Psid, Mode::Pscd, Mode::Concat, Mode::GraphOnly, Mode::TextOnly];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Psid => "psid",
            Mode::Pscd => "pscd",
            Mode::Concat => "concat",
            Mode::GraphOnly => "graph",
            Mode::TextOnly => "text",
        }
    }

    pub fn uses_graph(self) -> bool {
        self != Mode::TextOnly
    }

    pub fn uses_text(self) -> bool {
        self != Mode::GraphOnly
    }

    pub fn has_ssl(self) -> bool {
        matches!(self, Mode::Psid | Mode::Pscd)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psid" => Ok(Mode::Psid),
            "pscd" => Ok(Mode::Pscd),
            "concat" => Ok(Mode::Concat),
            "graph" | "graph_only" => Ok(Mode::GraphOnly),
            "text" | "text_only" => Ok(Mode::TextOnly),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected psid, pscd, concat, graph or text"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gcn_widths: Vec<usize>,
    pub d_model: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub windows: Vec<usize>,
    pub feature_maps: usize,
    pub dropout: f64,
    pub proj_dim: usize,
    /// Cluster count; 0 means three times the number of classes.
    pub clusters: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gcn_widths: vec![64, 64],
            d_model: 300,
            heads: 6,
            seq_len: 35,
            windows: vec![3, 4, 5],
            feature_maps: 100,
            dropout: 0.5,
            proj_dim: 64,
            clusters: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.gcn_widths.is_empty() || self.gcn_widths.contains(&0) {
            return bad(format!("gcn_widths must be non-empty and positive, got {:?}", self.gcn_widths));
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("{} heads do not divide d_model = {}", self.heads, self.d_model));
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return bad(format!("windows must be non-empty and positive, got {:?}", self.windows));
        }
        let max_window = self.windows.iter().copied().max().unwrap_or(0);
        if self.seq_len < max_window {
            return bad(format!("seq_len {} shorter than window {max_window}", self.seq_len));
        }
        if self.feature_maps == 0 || self.proj_dim == 0 {
            return bad("feature_maps and proj_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.clusters == 1 {
            return bad("need at least 2 clusters".into());
        }
        Ok(())
    }

    pub fn cluster_count(&self, classes: usize) -> usize {
        if self.clusters == 0 {
            3 * classes
        } else {
            self.clusters
        }
    }
}

/// Sizes fixed by the data rather than the configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Multi-hot width (vocabulary size).
    pub features: usize,
    /// Embedding rows (vocabulary size plus padding and unknown).
    pub seq_rows: usize,
    pub classes: usize,
}

/// `softmax(x W + b)` over the classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorHead {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DetectorHead {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, input: usize, classes: usize, rng: &mut R) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        Ok(Self {
            weight: store.register("detector.w", Tensor::xavier(input, classes, rng)),
            bias: store.register("detector.b", Tensor::zeros(1, classes)),
        })
    }

    pub fn logits(&self, tape: &mut Tape, vars: &Binding, x: Var) -> Result<Var> {
        let z = tape.matmul(x, vars[self.weight])?;
        tape.add_bias(z, vars[self.bias])
    }

    pub fn classes(&self, store: &ParamStore) -> usize {
        store.get(self.bias).cols()
    }
}

/// Class probabilities `softmax(x W + b)` without a tape.
pub fn predict(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if bias.rows() != 1 || bias.cols() != weight.cols() {
        return Err(Error::Shape {
            op: "predict",
            lhs: weight.shape(),
            rhs: bias.shape(),
        });
    }
    let mut z = x.matmul(weight)?;
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(softmax_rows(&z))
}

/// `−Σ log p(true class)` from detector logits.
pub fn main_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, classes) = tape.shape(logits);
    if labels.len() != rows {
        return Err(Error::Input(format!("{} labels for {rows} predictions", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} outside {classes} classes")));
    }
    cross_entropy(tape, logits, labels)
}

/// `main + λ·ssl`. With `λ = 0` (or no auxiliary loss) the result is the
/// main loss node itself.
pub fn total_loss(tape: &mut Tape, main: Var, ssl: Option<Var>, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    match ssl {
        Some(s) if lambda != 0.0 => {
            let weighted = tape.scale(s, lambda)?;
            tape.add(main, weighted)
        }
        _ => Ok(main),
    }
}

/// Text encoder parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub embedding: EmbeddingTable,
    pub attention: AttentionParams,
    pub conv: ConvParams,
}

/// Loss hyperparameters used by [`Model::batch_loss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub lambda: f64,
    pub tau: f64,
    pub similarity: Similarity,
}

/// Encoded views of a batch, one row per event.
#[derive(Clone, Copy, Debug)]
pub struct Views {
    pub g: Option<Var>,
    pub t: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub main: Var,
    pub ssl: Option<Var>,
    pub total: Var,
}

/// All parameters of one model. Tensors are registered, and therefore
/// iterated, in this order: graph encoder, text encoder (embedding,
/// attention, convolutions), projection heads, cluster classifiers,
/// detector. Modules a mode does not use are absent.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub mode: Mode,
    pub config: ModelConfig,
    pub dims: Dims,
    pub store: ParamStore,
    pub gcn: Option<GcnParams>,
    pub text: Option<TextEncoder>,
    pub projection: Option<ProjectionHeads>,
    pub clusters: Option<ClusterState>,
    pub detector: DetectorHead,
}

impl Model {
    /// Each module draws its initial values from its own stream of `seed`,
    /// so a module's initialization does not depend on which other modules
    /// the mode includes.
    pub fn init(mode: Mode, config: &ModelConfig, dims: Dims, seed: u64) -> Result<Self> {
        config.validate()?;
        if dims.features == 0 && mode.uses_graph() {
            return Err(Error::Config("empty vocabulary: no multi-hot features".into()));
        }
        let mut store = ParamStore::new();
        let gcn = if mode.uses_graph() {
            let mut r = rng::stream(seed, "init/gcn");
            Some(GcnParams::init(&mut store, dims.features, &config.gcn_widths, &mut r)?)
        } else {
            None
        };
        let text = if mode.uses_text() {
            let mut r = rng::stream(seed, "init/text");
            let embedding = EmbeddingTable::init(&mut store, dims.seq_rows, config.d_model, &mut r);
            let attention = AttentionParams::init(&mut store, config.d_model, config.heads, &mut r)?;
            let conv = ConvParams::init(
                &mut store,
                config.d_model,
                &config.windows,
                config.feature_maps,
                config.dropout,
                &mut r,
            );
            Some(TextEncoder {
                embedding,
                attention,
                conv,
            })
        } else {
            None
        };
        let d_g = *config.gcn_widths.last().unwrap_or(&0);
        let d_t = config.windows.len() * config.feature_maps;
        let projection = if mode.has_ssl() {
            let mut r = rng::stream(seed, "init/ssl");
            Some(ProjectionHeads::init(&mut store, d_g, d_t, config.proj_dim, &mut r))
        } else {
            None
        };
        let clusters = if mode == Mode::Pscd {
            let mut r = rng::stream(seed, "init/clusters");
            Some(ClusterState::init(
                &mut store,
                config.proj_dim,
                config.cluster_count(dims.classes),
                &mut r,
            )?)
        } else {
            None
        };
        let detector_in = match mode {
            Mode::TextOnly => d_t,
            Mode::Concat => d_g + d_t,
            _ => d_g,
        };
        let mut r = rng::stream(seed, "init/detector");
        let detector = DetectorHead::init(&mut store, detector_in, dims.classes, &mut r)?;
        Ok(Self {
            mode,
            config: config.clone(),
            dims,
            store,
            gcn,
            text,
            projection,
            clusters,
            detector,
        })
    }

    /// Encodes every event of the batch into stacked `g` and `t` rows.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &Binding,
        batch: &[&Featurized],
        training: bool,
        rng: &mut R,
    ) -> Result<Views> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let g = match &self.gcn {
            Some(gcn) => {
                let rows = batch
                    .iter()
                    .map(|f| propagation_representation(tape, vars, gcn, &f.graph))
                    .collect::<Result<Vec<_>>>()?;
                Some(tape.concat_rows(&rows)?)
            }
            None => None,
        };
        let t = match &self.text {
            Some(enc) => {
                let rows = batch
                    .iter()
                    .map(|f| {
                        text_forward(
                            tape,
                            vars,
                            &enc.embedding,
                            &enc.attention,
                            &enc.conv,
                            &f.sequence,
                            training,
                            rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(tape.concat_rows(&rows)?)
            }
            None => None,
        };
        Ok(Views { g, t })
    }

    pub fn detector_logits(&self, tape: &mut Tape, vars: &Binding, views: Views) -> Result<Var> {
        let x = match (self.mode, views.g, views.t) {
            (Mode::TextOnly, _, Some(t)) => t,
            (Mode::Concat, Some(g), Some(t)) => tape.concat_cols(&[g, t])?,
            (Mode::Psid | Mode::Pscd | Mode::GraphOnly, Some(g), _) => g,
            _ => return Err(Error::Contract(format!("views missing for mode {}", self.mode))),
        };
        self.detector.logits(tape, vars, x)
    }

    /// Projected views `(E₁(g), E₂(t))` for the self-supervised modes.
    pub fn project(&self, tape: &mut Tape, vars: &Binding, views: Views) -> Result<ViewBatch> {
        match (&self.projection, views.g, views.t) {
            (Some(p), Some(g), Some(t)) => Ok(ViewBatch {
                g: project(tape, vars, &p.graph, g)?,
                t: project(tape, vars, &p.text, t)?,
            }),
            _ => Err(Error::Contract(format!("mode {} has no projection heads", self.mode))),
        }
    }

    /// Main, auxiliary and combined loss of one batch. `cluster_targets`
    /// holds the frozen `(graph, text)` cluster assignments of the batch
    /// rows and is required in the cluster mode.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &Binding,
        batch: &[&Featurized],
        settings: LossSettings,
        cluster_targets: Option<(&[usize], &[usize])>,
        training: bool,
        rng: &mut R,
    ) -> Result<LossParts> {
        let views = self.encode(tape, vars, batch, training, rng)?;
        let logits = self.detector_logits(tape, vars, views)?;
        let labels: Vec<usize> = batch.iter().map(|f| f.label).collect();
        let main = main_loss(tape, logits, &labels)?;
        let ssl = match self.mode {
            Mode::Psid => {
                let p = self.project(tape, vars, views)?;
                Some(psid_loss(tape, p, settings.tau, settings.similarity)?)
            }
            Mode::Pscd => {
                let p = self.project(tape, vars, views)?;
                let (ga, ta) = cluster_targets
                    .ok_or_else(|| Error::Contract("cluster mode needs frozen assignments".into()))?;
                let state = self.clusters.as_ref().expect("cluster mode has cluster state");
                Some(pscd_loss(tape, vars, &self.store, state, p, ga, ta)?)
            }
            _ => None,
        };
        let total = total_loss(tape, main, ssl, settings.lambda)?;
        Ok(LossParts { main, ssl, total })
    }

    /// Class probabilities for each event, evaluation mode.
    pub fn predict_proba(&self, batch: &[&Featurized]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.store.bind_frozen(&mut tape)?;
        let mut unused = rng::stream(0, "eval");
        let views = self.encode(&mut tape, &vars, batch, false, &mut unused)?;
        let logits = self.detector_logits(&mut tape, &vars, views)?;
        Ok(softmax_rows(tape.value(logits)))
    }

    /// Arg-max class per event, lowest index on ties.
    pub fn predict(&self, batch: &[&Featurized]) -> Result<Vec<usize>> {
        let p = self.predict_proba(batch)?;
        Ok((0..p.rows())
            .map(|r| {
                p.row(r)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    /// Projected `(graph, text)` views in evaluation mode, for clustering.
    pub fn projections(&self, batch: &[&Featurized]) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.store.bind_frozen(&mut tape)?;
        let mut unused = rng::stream(0, "eval");
        let views = self.encode(&mut tape, &vars, batch, false, &mut unused)?;
        let p = self.project(&mut tape, &vars, views)?;
        Ok((tape.value(p.g).clone(), tape.value(p.t).clone()))
    }

    /// Parameter ids of the detector head.
    pub fn detector_ids(&self) -> [ParamId; 2] {
        [self.detector.weight, self.detector.bias]
    }

    /// Parameter ids of the text encoder, empty when the mode has none.
    pub fn text_ids(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.name(id).starts_with("text."))
            .collect()
    }
}

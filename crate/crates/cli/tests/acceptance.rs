//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srd_cli::{cmd_gradcheck, cmd_train, ConfigArgs, GradcheckArgs, TrainArgs};
use srd_core::data::{generate_synthetic, write_events};
use srd_core::eval::{cross_validate, CrossValidation, EvalReport};
use srd_core::graph::{gcn_forward, readout_mean, GcnParams, PropagationGraph};
use srd_core::model::main_loss;
use srd_core::selfcheck::ToyDims;
use srd_core::ssl::{
    kmeans_assign, kmeans_objective, kmeans_plus_plus, kmeans_update, psid_loss, pscd_loss, ClusterState,
    Similarity, ViewBatch,
};
use srd_core::text::{self_attention, AttentionParams};
use srd_core::{Config, EventRecord, Mode, ParamStore, Tape, Tensor};

struct Verdict {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn verdict(name: &'static str, passed: bool, detail: String) -> Verdict {
    Verdict { name, passed, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(rows, cols, 1.0, r)
}

fn gradient_correctness() -> Verdict {
    let dims = ToyDims::default();
    let shape_ok = dims.vocab == 20
        && dims.d_model == 12
        && dims.heads == 2
        && dims.seq_len == 8
        && dims.batch == 4
        && dims.clusters == 3;
    let args = GradcheckArgs {
        dims: "toy".into(),
        seed: 0,
        tol: 1e-4,
        eps: 1e-5,
    };
    let started = Instant::now();
    let result = cmd_gradcheck(&args);
    let elapsed = started.elapsed();
    let passed = shape_ok && result.is_ok() && elapsed < Duration::from_secs(60);
    verdict(
        "gradient correctness",
        passed,
        format!("all five modes at tol 1e-4: {result:?}, {:.1}s (limit 60s)", elapsed.as_secs_f64()),
    )
}

fn analytic_losses() -> Verdict {
    let scalar = |build: &dyn Fn(&mut Tape) -> f64| build(&mut Tape::new());

    let psid = scalar(&|tape| {
        let g = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]])).unwrap();
        let t = tape.constant(Tensor::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]])).unwrap();
        let l = psid_loss(tape, ViewBatch { g, t }, 1.0, Similarity::Dot).unwrap();
        tape.scalar(l)
    });
    let psid_err = (psid - 2.0 * 2f64.ln()).abs();

    let k = 3;
    let pscd = scalar(&|tape| {
        let mut store = ParamStore::new();
        let state = ClusterState::init(&mut store, 4, k, &mut rng(1)).unwrap();
        for t in store.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let vars = store.bind(tape).unwrap();
        let mut r = rng(2);
        let g = tape.constant(random_tensor(1, 4, &mut r)).unwrap();
        let t = tape.constant(random_tensor(1, 4, &mut r)).unwrap();
        let l = pscd_loss(tape, &vars, &store, &state, ViewBatch { g, t }, &[2], &[0]).unwrap();
        tape.scalar(l)
    });
    // Two swapped terms, one event each.
    let pscd_err = (pscd / 2.0 - (k as f64).ln()).abs();

    let b = 5;
    let main = scalar(&|tape| {
        let logits = tape.constant(Tensor::zeros(b, 4)).unwrap();
        let l = main_loss(tape, logits, &[0, 1, 2, 3, 1]).unwrap();
        tape.scalar(l)
    });
    let main_err = (main - b as f64 * 4f64.ln()).abs();

    let worst = psid_err.max(pscd_err).max(main_err);
    verdict(
        "analytic loss values",
        worst < 1e-10,
        format!("|psid - 2ln2| = {psid_err:.1e}, |pscd term - ln3| = {pscd_err:.1e}, |main - 5ln4| = {main_err:.1e} (tol 1e-10)"),
    )
}

fn kmeans_monotonicity() -> Verdict {
    let mut violations = 0;
    let mut steps = 0;
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let points = random_tensor(200, 3, &mut r);
        let mut centroids = kmeans_plus_plus(&points, 6, &mut r).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let assign = kmeans_assign(&points, &centroids);
            let after_assign = kmeans_objective(&points, &centroids, &assign);
            centroids = kmeans_update(&points, &assign, &centroids);
            let after_update = kmeans_objective(&points, &centroids, &assign);
            for obj in [after_assign, after_update] {
                steps += 1;
                if obj > prev {
                    violations += 1;
                }
                prev = obj;
            }
        }
    }
    verdict(
        "k-means monotonicity",
        violations == 0,
        format!("{violations} increases over {steps} half-rounds (10 sets of 200 points, 10 rounds each, exact)"),
    )
}

/// Random reply tree with `n` nodes: node `i > 0` replies to a node before it.
fn random_tree(n: usize, r: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    (1..n).map(|i| (i, r.random_range(0..i))).collect()
}

fn multi_hot(n: usize, d: usize, r: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(n, d);
    for v in t.data_mut() {
        if r.random::<f64>() < 0.3 {
            *v = 1.0;
        }
    }
    t
}

fn gcn_setup(d0: usize, r: &mut ChaCha8Rng) -> (ParamStore, GcnParams) {
    let mut store = ParamStore::new();
    let widths = [r.random_range(2..7), r.random_range(2..7)];
    let params = GcnParams::init(&mut store, d0, &widths, r).unwrap();
    (store, params)
}

fn readout(store: &ParamStore, params: &GcnParams, graph: &PropagationGraph) -> Tensor {
    let mut tape = Tape::new();
    let vars = store.bind_frozen(&mut tape).unwrap();
    let h = gcn_forward(&mut tape, &vars, params, graph).unwrap();
    let g = readout_mean(&mut tape, h).unwrap();
    tape.value(g).clone()
}

fn permutation_invariance() -> Verdict {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    let mut relabelings = 0;
    for _ in 0..10 {
        let n = r.random_range(1..=12);
        let d0 = 8;
        let edges = random_tree(n, &mut r);
        let x = multi_hot(n, d0, &mut r);
        let (store, params) = gcn_setup(d0, &mut r);
        let base = readout(&store, &params, &PropagationGraph::new(edges.clone(), x.clone()).unwrap());
        for _ in 0..100 {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut r);
            let mut px = Tensor::zeros(n, d0);
            for i in 0..n {
                px.row_mut(perm[i]).copy_from_slice(x.row(i));
            }
            let pedges: Vec<(usize, usize)> = edges.iter().map(|&(c, p)| (perm[c], perm[p])).collect();
            let g = readout(&store, &params, &PropagationGraph::new(pedges, px).unwrap());
            worst = worst.max(g.max_abs_diff(&base));
            relabelings += 1;
        }
    }
    verdict(
        "permutation invariance",
        worst <= 1e-12,
        format!("max readout change {worst:.1e} over {relabelings} relabelings of 10 trees up to 12 nodes (tol 1e-12)"),
    )
}

/// Direct loops over nodes: symmetric normalized adjacency with self loops,
/// then `ReLU(Â H W)` per layer.
fn gcn_oracle(n: usize, edges: &[(usize, usize)], x: &Tensor, weights: &[&Tensor]) -> Vec<Vec<f64>> {
    let mut adj = vec![vec![0.0; n]; n];
    for i in 0..n {
        adj[i][i] = 1.0;
    }
    for &(c, p) in edges {
        adj[c][p] = 1.0;
        adj[p][c] = 1.0;
    }
    let deg: Vec<f64> = adj.iter().map(|row| row.iter().sum()).collect();
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
    for w in weights {
        let (din, dout) = w.shape();
        let mut next = vec![vec![0.0; dout]; n];
        for i in 0..n {
            for l in 0..dout {
                let mut s = 0.0;
                for j in 0..n {
                    if adj[i][j] == 0.0 {
                        continue;
                    }
                    let norm = adj[i][j] / (deg[i].sqrt() * deg[j].sqrt());
                    for k in 0..din {
                        s += norm * h[j][k] * w.get(k, l);
                    }
                }
                next[i][l] = s.max(0.0);
            }
        }
        h = next;
    }
    h
}

/// Direct loops per head: scaled dot-product weights with a stable softmax,
/// weighted sum of values, then the output projection.
fn attention_oracle(x: &Tensor, wq: &[&Tensor], wk: &[&Tensor], wv: &[&Tensor], wo: &Tensor) -> Vec<Vec<f64>> {
    let (len, d) = x.shape();
    let proj = |w: &Tensor| -> Vec<Vec<f64>> {
        (0..len)
            .map(|i| (0..w.cols()).map(|c| (0..d).map(|k| x.get(i, k) * w.get(k, c)).sum()).collect())
            .collect()
    };
    let mut concat: Vec<Vec<f64>> = vec![Vec::new(); len];
    for h in 0..wq.len() {
        let (q, k, v) = (proj(wq[h]), proj(wk[h]), proj(wv[h]));
        let dk = wq[h].cols();
        for i in 0..len {
            let scores: Vec<f64> = (0..len)
                .map(|j| (0..dk).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dk {
                concat[i].push((0..len).map(|j| e[j] / z * v[j][c]).sum());
            }
        }
    }
    (0..len)
        .map(|i| (0..wo.cols()).map(|c| (0..concat[i].len()).map(|k| concat[i][k] * wo.get(k, c)).sum()).collect())
        .collect()
}

fn max_diff(t: &Tensor, oracle: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in oracle.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            worst = worst.max((t.get(i, j) - v).abs());
        }
    }
    worst
}

fn oracle_equivalence() -> Verdict {
    let mut r = rng(11);
    let mut gcn_worst: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(1..=12);
        let d0 = r.random_range(3..10);
        let edges = random_tree(n, &mut r);
        let x = multi_hot(n, d0, &mut r);
        let (store, params) = gcn_setup(d0, &mut r);
        let graph = PropagationGraph::new(edges.clone(), x.clone()).unwrap();
        let mut tape = Tape::new();
        let vars = store.bind_frozen(&mut tape).unwrap();
        let h = gcn_forward(&mut tape, &vars, &params, &graph).unwrap();
        let weights: Vec<&Tensor> = params.weights.iter().map(|&w| store.get(w)).collect();
        gcn_worst = gcn_worst.max(max_diff(tape.value(h), &gcn_oracle(n, &edges, &x, &weights)));
    }

    let mut attn_worst: f64 = 0.0;
    for _ in 0..50 {
        let heads = r.random_range(1..=4);
        let d_model = heads * r.random_range(1..=4);
        let len = r.random_range(1..=10);
        let mut store = ParamStore::new();
        let params = AttentionParams::init(&mut store, d_model, heads, &mut r).unwrap();
        let x = random_tensor(len, d_model, &mut r);
        let mut tape = Tape::new();
        let vars = store.bind_frozen(&mut tape).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let z = self_attention(&mut tape, &vars, &params, xv).unwrap();
        let get = |ids: &[srd_core::ParamId]| ids.iter().map(|&i| store.get(i)).collect::<Vec<_>>();
        let oracle = attention_oracle(&x, &get(&params.w_q), &get(&params.w_k), &get(&params.w_v), store.get(params.w_o));
        attn_worst = attn_worst.max(max_diff(tape.value(z), &oracle));
    }
    verdict(
        "oracle equivalence",
        gcn_worst <= 1e-12 && attn_worst <= 1e-12,
        format!("gcn max diff {gcn_worst:.1e}, attention max diff {attn_worst:.1e} on 50 instances each (tol 1e-12)"),
    )
}

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn synthetic_config() -> Config {
    Config::from_file(workspace_root().join("configs/synthetic.toml")).expect("configs/synthetic.toml")
}

fn synthetic_events() -> Vec<EventRecord> {
    generate_synthetic(400, 4, 0.8, 7).expect("synthetic corpus")
}

fn run_mode(events: &[EventRecord], base: &Config, mode: Mode) -> CrossValidation {
    let mut c = base.clone();
    c.train.mode = mode;
    cross_validate(events, &c, &mut |_, _, _, _| {}).expect("cross validation")
}

fn end_to_end(runs: &[(Mode, CrossValidation)], elapsed: Duration) -> Verdict {
    let acc = |m: Mode| runs.iter().find(|r| r.0 == m).unwrap().1.final_accuracy();
    let (psid, concat, graph, text) = (acc(Mode::Psid), acc(Mode::Concat), acc(Mode::GraphOnly), acc(Mode::TextOnly));
    let floor = graph.max(text) - 0.02;
    let passed = psid >= concat && concat >= floor && psid >= 0.80 && elapsed < Duration::from_secs(15 * 60);
    verdict(
        "synthetic end-to-end",
        passed,
        format!(
            "psid {psid:.4} >= concat {concat:.4} >= max(graph {graph:.4}, text {text:.4}) - 0.02 = {floor:.4}; psid >= 0.80; {:.0}s (limit 900s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn without_deadline(r: &EvalReport) -> EvalReport {
    EvalReport {
        deadline: None,
        ..r.clone()
    }
}

fn early_detection(graph: &CrossValidation, text: &CrossValidation) -> Verdict {
    let last = graph.config.eval.deadlines.len() - 1;
    let (g0, ginf) = (graph.mean_accuracy(0), graph.mean_accuracy(last));
    let invariant = text.folds.iter().all(|f| {
        let first = without_deadline(&f.reports[0]);
        f.reports.iter().all(|r| without_deadline(r) == first)
    });
    let curve: Vec<String> = (0..=last).map(|d| format!("{:.4}", graph.mean_accuracy(d))).collect();
    verdict(
        "early detection",
        ginf > g0 && invariant,
        format!(
            "graph accuracy over deadlines [{}]: inf {ginf:.4} > 0 {g0:.4}; text reports identical across deadlines: {invariant}",
            curve.join(", ")
        ),
    )
}

fn lambda_degeneration(events: &[EventRecord], base: &Config) -> Verdict {
    let trace = |mode: Mode| {
        let mut c = base.clone();
        c.train.mode = mode;
        c.train.lambda = 0.0;
        let mut snaps: Vec<Vec<u64>> = Vec::new();
        cross_validate(events, &c, &mut |_, _, _, m| {
            let [w, b] = m.detector_ids();
            let bits = m.store.get(w).data().iter().chain(m.store.get(b).data()).map(|x| x.to_bits()).collect();
            snaps.push(bits);
        })
        .expect("cross validation");
        snaps
    };
    let (psid, graph) = (trace(Mode::Psid), trace(Mode::GraphOnly));
    let first_diff = psid.iter().zip(&graph).position(|(a, b)| a != b);
    verdict(
        "lambda degeneration",
        psid.len() == graph.len() && first_diff.is_none(),
        format!(
            "{} psid steps vs {} graph steps, first differing step: {first_diff:?}",
            psid.len(),
            graph.len()
        ),
    )
}

fn determinism(events: &[EventRecord]) -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    let data = dir.path().join("events.jsonl");
    write_events(&data, events).expect("write events");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let args = TrainArgs {
            data: data.clone(),
            out: out.clone(),
            config: ConfigArgs {
                config: Some(workspace_root().join("configs/synthetic.toml")),
                mode: Some(Mode::Psid),
                seed: Some(7),
                ..ConfigArgs::default()
            },
        };
        cmd_train(&args).expect("train");
        fs::read(out.join("metrics.csv")).expect("metrics.csv")
    };
    let (a, b) = (run("a"), run("b"));
    verdict(
        "determinism",
        !a.is_empty() && a == b,
        format!("two psid training runs: metrics.csv {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    )
}

fn main() -> ExitCode {
    let mut verdicts = vec![
        gradient_correctness(),
        analytic_losses(),
        kmeans_monotonicity(),
        permutation_invariance(),
        oracle_equivalence(),
    ];

    let events = synthetic_events();
    let base = synthetic_config();
    let started = Instant::now();
    let runs: Vec<(Mode, CrossValidation)> = [Mode::Psid, Mode::Concat, Mode::GraphOnly, Mode::TextOnly]
        .into_iter()
        .map(|m| (m, run_mode(&events, &base, m)))
        .collect();
    verdicts.push(end_to_end(&runs, started.elapsed()));
    let find = |m: Mode| &runs.iter().find(|r| r.0 == m).unwrap().1;
    verdicts.push(early_detection(find(Mode::GraphOnly), find(Mode::TextOnly)));
    verdicts.push(lambda_degeneration(&events, &base));
    verdicts.push(determinism(&events));

    for v in &verdicts {
        println!("{} {:<24} {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.passed).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

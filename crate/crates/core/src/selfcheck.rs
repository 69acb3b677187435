//! Runtime verification of the numerical core.
//!
//! Everything here recomputes expected values through an independent route:
//! central finite differences for gradients, dense matrix algebra for the
//! sparse operators, brute-force attention for the graph layers, sorted
//! Monte-Carlo coupling for the Wasserstein closed form, and permutation
//! search for the ranking-metric normalizer. `run_all` executes the whole
//! battery; the CLI exposes it as a command that exits nonzero on failure.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::data::InteractionDataset;
use crate::error::Result;
use crate::eval::{evaluate_scores, ideal_dcg, Split};
use crate::graph::BipartiteGraph;
use crate::loss::{
    anneal_beta, batch_rows, bpr_loss, infonce_filtered, infonce_vanilla, l2_norm_sq, total_loss,
    w2_diag_gauss, LossConfig,
};
use crate::model::{
    forward, gat_layer, score_pairs, ForwardOpts, GatLayerParams, ModelDims, ModelGraphs,
    ModelParams, LEAKY_SLOPE,
};
use crate::tensor::{check_gradient, GradCheckReport, SparseMatrix, Tape, Tensor};

const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-7;
const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn pass(name: impl Into<String>, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            passed: true,
            detail: detail.into(),
        }
    }

    fn fail(name: impl Into<String>, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            passed: false,
            detail: detail.into(),
        }
    }
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

type OpBuilder = Box<dyn Fn(&mut Tape, &[Tensor]) -> Result<Tensor>>;

/// Verify the tape gradient of `op` against central finite differences of a
/// randomly weighted scalarization of its output.
pub fn check_op_gradient(
    op: &OpBuilder,
    inputs: &[Tensor],
    rng: &mut ChaCha20Rng,
) -> Result<GradCheckReport> {
    // probe the output shape
    let mut probe = Tape::disabled();
    let out = op(&mut probe, inputs)?;
    let weights = Tensor::uniform(out.shape().to_vec(), -1.0, 1.0, rng);

    // analytic gradient
    let mut tape = Tape::new();
    let vars: Vec<Tensor> = inputs.iter().map(|t| tape.var(t)).collect();
    let out = op(&mut tape, &vars)?;
    let weighted = tape.mul(&out, &weights)?;
    let loss = tape.sum_all(&weighted)?;
    let grads = tape.backward(&loss)?;
    let mut analytic = Vec::new();
    for v in &vars {
        analytic.extend_from_slice(grads.grad(v)?.data());
    }

    // numeric gradient over the concatenated inputs
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let f = |x: &[f64]| -> Result<f64> {
        let mut tensors = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for shape in &shapes {
            let len: usize = shape.iter().product();
            tensors.push(Tensor::from_vec(shape.clone(), x[offset..offset + len].to_vec())?);
            offset += len;
        }
        let mut tape = Tape::disabled();
        let out = op(&mut tape, &tensors)?;
        let weighted = tape.mul(&out, &weights)?;
        let loss = tape.sum_all(&weighted)?;
        Ok(loss.item())
    };
    check_gradient(f, &flat, &analytic, FD_STEP, REL_TOL, ABS_TOL)
}

/// One random instance per differentiable tensor operation.
fn op_cases(rng: &mut ChaCha20Rng) -> Vec<(&'static str, Vec<Tensor>, OpBuilder)> {
    let mut cases: Vec<(&'static str, Vec<Tensor>, OpBuilder)> = Vec::new();
    let u = |shape: Vec<usize>, lo: f64, hi: f64, rng: &mut ChaCha20Rng| {
        Tensor::uniform(shape, lo, hi, rng)
    };

    let a = u(vec![3, 4], -1.0, 1.0, rng);
    let b = u(vec![4, 2], -1.0, 1.0, rng);
    cases.push(("matmul", vec![a, b], Box::new(|t, i| t.matmul(&i[0], &i[1]))));

    let mut pairs = Vec::new();
    for r in 0..4 {
        for c in 0..3 {
            if rng.random_bool(0.4) {
                pairs.push((r, c, rng.random_range(-1.0..1.0)));
            }
        }
    }
    pairs.push((0, 0, 0.7)); // never empty
    let s = Arc::new(SparseMatrix::from_triplets(4, 3, pairs).unwrap());
    let dense = u(vec![3, 2], -1.0, 1.0, rng);
    cases.push((
        "spmm",
        vec![dense],
        Box::new(move |t, i| t.spmm(&s, &i[0])),
    ));

    let a = u(vec![3, 4], -1.0, 1.0, rng);
    cases.push(("transpose", vec![a], Box::new(|t, i| t.transpose(&i[0]))));

    let a = u(vec![2, 3], -1.0, 1.0, rng);
    let b = u(vec![4, 3], -1.0, 1.0, rng);
    cases.push((
        "concat_rows",
        vec![a, b],
        Box::new(|t, i| t.concat_rows(&i[0], &i[1])),
    ));

    let a = u(vec![5, 2], -1.0, 1.0, rng);
    cases.push((
        "slice_rows",
        vec![a],
        Box::new(|t, i| t.slice_rows(&i[0], 1, 3)),
    ));

    let a = u(vec![4, 2], -1.0, 1.0, rng);
    let idx = Arc::new(vec![0usize, 2, 2, 3, 1]);
    cases.push((
        "gather_rows",
        vec![a],
        Box::new(move |t, i| t.gather_rows(&i[0], &idx)),
    ));

    let a = u(vec![6, 2], -1.0, 1.0, rng);
    let segs = Arc::new(vec![0usize, 1, 0, 2, 1, 2]);
    cases.push((
        "segment_sum",
        vec![a],
        Box::new(move |t, i| t.segment_sum(&i[0], &segs, 3)),
    ));

    let a = u(vec![6], -2.0, 2.0, rng);
    let segs = Arc::new(vec![0usize, 0, 1, 1, 1, 0]);
    cases.push((
        "segment_softmax",
        vec![a],
        Box::new(move |t, i| t.segment_softmax(&i[0], &segs, 2)),
    ));

    for (name, op) in [
        ("add", Box::new(|t: &mut Tape, i: &[Tensor]| t.add(&i[0], &i[1])) as OpBuilder),
        ("sub", Box::new(|t: &mut Tape, i: &[Tensor]| t.sub(&i[0], &i[1]))),
        ("mul", Box::new(|t: &mut Tape, i: &[Tensor]| t.mul(&i[0], &i[1]))),
    ] {
        let a = u(vec![3, 3], -1.0, 1.0, rng);
        let b = u(vec![3, 3], -1.0, 1.0, rng);
        cases.push((name, vec![a, b], op));
    }
    let a = u(vec![3, 3], -1.0, 1.0, rng);
    let b = u(vec![3, 3], 0.3, 1.5, rng);
    cases.push(("div", vec![a, b], Box::new(|t, i| t.div(&i[0], &i[1]))));

    let a = u(vec![2, 3], -1.5, 1.5, rng);
    cases.push(("exp", vec![a], Box::new(|t, i| t.exp(&i[0]))));
    let a = u(vec![2, 3], 0.2, 2.0, rng);
    cases.push(("log", vec![a], Box::new(|t, i| t.log(&i[0]))));
    let a = u(vec![2, 3], -2.0, 2.0, rng);
    cases.push(("sigmoid", vec![a], Box::new(|t, i| t.sigmoid(&i[0]))));
    let a = u(vec![2, 3], -2.0, 2.0, rng);
    cases.push(("softplus", vec![a], Box::new(|t, i| t.softplus(&i[0]))));
    let a = u(vec![2, 3], 0.2, 2.0, rng);
    cases.push(("sqrt", vec![a], Box::new(|t, i| t.sqrt(&i[0]))));
    // keep leaky-relu inputs away from the kink so finite differences stay valid
    let mut a = u(vec![2, 3], 0.05, 1.0, rng);
    for (i, x) in a.data_mut().iter_mut().enumerate() {
        if i % 2 == 0 {
            *x = -*x;
        }
    }
    cases.push((
        "leaky_relu",
        vec![a],
        Box::new(|t, i| t.leaky_relu(&i[0], LEAKY_SLOPE)),
    ));
    let a = u(vec![2, 3], -1.0, 1.0, rng);
    cases.push(("scale", vec![a], Box::new(|t, i| t.scale(&i[0], -1.7))));
    let a = u(vec![2, 3], -1.0, 1.0, rng);
    cases.push(("add_scalar", vec![a], Box::new(|t, i| t.add_scalar(&i[0], 0.37))));

    let a = u(vec![4, 3], -1.0, 1.0, rng);
    let sc = u(vec![4], -1.0, 1.0, rng);
    cases.push((
        "scale_rows",
        vec![a, sc],
        Box::new(|t, i| t.scale_rows(&i[0], &i[1])),
    ));
    let a = u(vec![4, 3], -1.0, 1.0, rng);
    let bias = u(vec![3], -1.0, 1.0, rng);
    cases.push((
        "add_bias",
        vec![a, bias],
        Box::new(|t, i| t.add_bias(&i[0], &i[1])),
    ));

    let a = u(vec![3, 4], -1.0, 1.0, rng);
    cases.push(("row_sum", vec![a], Box::new(|t, i| t.row_sum(&i[0]))));
    let a = u(vec![3, 4], -1.0, 1.0, rng);
    cases.push(("row_mean", vec![a], Box::new(|t, i| t.row_mean(&i[0]))));
    let a = u(vec![3, 4], 0.2, 1.2, rng);
    cases.push((
        "l2_normalize_rows",
        vec![a],
        Box::new(|t, i| t.l2_normalize_rows(&i[0])),
    ));

    let a = u(vec![2, 3], -1.0, 1.0, rng);
    cases.push(("sum_all", vec![a], Box::new(|t, i| t.sum_all(&i[0]))));
    let a = u(vec![2, 3], -1.0, 1.0, rng);
    cases.push(("mean_all", vec![a], Box::new(|t, i| t.mean_all(&i[0]))));
    let a = u(vec![2, 6], -1.0, 1.0, rng);
    cases.push((
        "reshape",
        vec![a],
        Box::new(|t, i| t.reshape(&i[0], vec![3, 4])),
    ));

    let a = u(vec![4], 0.3, 1.0, rng);
    let b = u(vec![4], 0.3, 1.0, rng);
    cases.push(("cosine", vec![a, b], Box::new(|t, i| t.cosine(&i[0], &i[1]))));

    cases
}

/// Gradient checks for every tensor operation, `iterations` random
/// instances each.
pub fn op_gradient_checks(seed: u64, iterations: usize) -> Vec<CheckOutcome> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: std::collections::BTreeMap<&'static str, GradCheckReport> =
        Default::default();
    for _ in 0..iterations {
        for (name, inputs, op) in op_cases(&mut rng) {
            match check_op_gradient(&op, &inputs, &mut rng) {
                Ok(report) => {
                    let slot = worst.entry(name).or_insert_with(|| report.clone());
                    if report.max_rel_error > slot.max_rel_error || !report.passed {
                        *slot = report;
                    }
                }
                Err(e) => {
                    worst.insert(
                        name,
                        GradCheckReport {
                            max_rel_error: f64::INFINITY,
                            max_abs_error: f64::INFINITY,
                            worst_index: 0,
                            passed: false,
                        },
                    );
                    log::error!("gradient check {name} errored: {e}");
                }
            }
        }
    }
    worst
        .into_iter()
        .map(|(name, report)| {
            let detail = format!(
                "max rel err {:.2e}, max abs err {:.2e}",
                report.max_rel_error, report.max_abs_error
            );
            if report.passed {
                CheckOutcome::pass(format!("gradient: {name}"), detail)
            } else {
                CheckOutcome::fail(format!("gradient: {name}"), detail)
            }
        })
        .collect()
}

/// Scalar-function gradient fixture; used by tests to confirm that a wrong
/// backward rule is actually flagged.
pub fn scalar_gradient_outcome<F, G>(name: &str, f: F, analytic: G, x: &[f64]) -> CheckOutcome
where
    F: FnMut(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let grad = analytic(x);
    match check_gradient(f, x, &grad, FD_STEP, REL_TOL, ABS_TOL) {
        Ok(report) if report.passed => CheckOutcome::pass(name, "matches finite differences"),
        Ok(report) => CheckOutcome::fail(
            name,
            format!("max rel err {:.2e}", report.max_rel_error),
        ),
        Err(e) => CheckOutcome::fail(name, e.to_string()),
    }
}

/// spmm against densify-then-multiply on random instances up to 64×64.
pub fn spmm_oracle_check(seed: u64, instances: usize) -> CheckOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    for _ in 0..instances {
        let m = rng.random_range(1..=64);
        let k = rng.random_range(1..=64);
        let n = rng.random_range(1..=8);
        let mut triplets = Vec::new();
        for r in 0..m {
            for c in 0..k {
                if rng.random_bool(0.3) {
                    triplets.push((r, c, rng.random_range(-1.0..1.0)));
                }
            }
        }
        let s = SparseMatrix::from_triplets(m, k, triplets).unwrap();
        let b = Tensor::uniform(vec![k, n], -1.0, 1.0, &mut rng);
        let mut tape = Tape::disabled();
        let got = tape.spmm(&Arc::new(s.clone()), &b).unwrap();
        // dense oracle
        let sd = s.to_dense();
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    want[i * n + j] += sd[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        for (g, w) in got.data().iter().zip(&want) {
            max_err = max_err.max((g - w).abs());
        }
    }
    let detail = format!("max abs err {max_err:.2e} over {instances} instances");
    if max_err <= 1e-12 {
        CheckOutcome::pass("oracle: spmm vs dense", detail)
    } else {
        CheckOutcome::fail("oracle: spmm vs dense", detail)
    }
}

/// Hypergraph operator against the dense normalization chain.
pub fn hypergraph_oracle_check(seed: u64, instances: usize) -> CheckOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    for _ in 0..instances {
        let nu = rng.random_range(1..=40);
        let ng = rng.random_range(1..=24);
        let mut pairs = Vec::new();
        for u in 0..nu {
            for g in 0..ng {
                if rng.random_bool(0.2) {
                    pairs.push((u, g));
                }
            }
        }
        let z = SparseMatrix::binary_from_pairs(nu, ng, pairs).unwrap();
        let op = crate::graph::build_hypergraph(&z).unwrap();
        let got = op.propagation.to_dense();

        // dense chain D_N^{-1/2} T D_E^{-1} Tᵀ D_N^{-1/2}
        let n = nu + ng;
        let mut t = vec![0.0; n * ng];
        for (u, g, _) in z.iter() {
            t[u * ng + g] = 1.0;
        }
        for g in 0..ng {
            t[(nu + g) * ng + g] = 1.0;
        }
        let node_deg: Vec<f64> = (0..n).map(|i| t[i * ng..(i + 1) * ng].iter().sum()).collect();
        let edge_deg: Vec<f64> =
            (0..ng).map(|e| (0..n).map(|i| t[i * ng + e]).sum()).collect();
        for i in 0..n {
            for j in 0..n {
                let mut sum = 0.0;
                for e in 0..ng {
                    let de = if edge_deg[e] > 0.0 { 1.0 / edge_deg[e] } else { 0.0 };
                    sum += t[i * ng + e] * de * t[j * ng + e];
                }
                let di = if node_deg[i] > 0.0 { node_deg[i].sqrt().recip() } else { 0.0 };
                let dj = if node_deg[j] > 0.0 { node_deg[j].sqrt().recip() } else { 0.0 };
                let want = di * sum * dj;
                max_err = max_err.max((got[i * n + j] - want).abs());
            }
        }
    }
    let detail = format!("max abs err {max_err:.2e} over {instances} instances");
    if max_err <= 1e-12 {
        CheckOutcome::pass("oracle: hypergraph operator vs dense chain", detail)
    } else {
        CheckOutcome::fail("oracle: hypergraph operator vs dense chain", detail)
    }
}

/// Dense attention oracle for one layer, per the definition: for each node,
/// logits over its in-neighbors, softmax, weighted sum of transformed
/// sources.
pub fn gat_dense_oracle(
    graph: &BipartiteGraph,
    h: &Tensor,
    layer: &GatLayerParams,
) -> Vec<f64> {
    let n = graph.n_nodes();
    let d = h.row_width();
    let mut hw = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            for k in 0..d {
                hw[i * d + j] += h.data()[i * d + k] * layer.weight.data()[k * d + j];
            }
        }
    }
    let attn = layer.attn.data();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let srcs: Vec<usize> = graph
            .edge_dst
            .iter()
            .zip(graph.edge_src.iter())
            .filter(|(&dst, _)| dst == i)
            .map(|(_, &src)| src)
            .collect();
        let mut logits: Vec<f64> = srcs
            .iter()
            .map(|&j| {
                let mut e = 0.0;
                for c in 0..d {
                    e += attn[c] * hw[i * d + c] + attn[d + c] * hw[j * d + c];
                }
                if e >= 0.0 {
                    e
                } else {
                    LEAKY_SLOPE * e
                }
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for l in &mut logits {
            *l = (*l - max).exp();
        }
        let sum: f64 = logits.iter().sum();
        for (w, &j) in logits.iter().zip(&srcs) {
            let alpha = w / sum;
            for c in 0..d {
                out[i * d + c] += alpha * hw[j * d + c];
            }
        }
    }
    out
}

/// Attention layer against the dense oracle on random ≤10-node graphs.
pub fn gat_oracle_check(seed: u64, instances: usize) -> CheckOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    for _ in 0..instances {
        let n_left = rng.random_range(1..=5);
        let n_right = rng.random_range(1..=5);
        let mut pairs = Vec::new();
        for l in 0..n_left {
            for r in 0..n_right {
                if rng.random_bool(0.4) {
                    pairs.push((l, r));
                }
            }
        }
        let m = SparseMatrix::binary_from_pairs(n_left, n_right, pairs).unwrap();
        let graph = crate::graph::build_bipartite(&m, n_left, n_right).unwrap();
        let d = rng.random_range(1..=4);
        let h = Tensor::uniform(vec![graph.n_nodes(), d], -1.0, 1.0, &mut rng);
        let layer = GatLayerParams {
            weight: Tensor::uniform(vec![d, d], -1.0, 1.0, &mut rng),
            attn: Tensor::uniform(vec![2 * d], -1.0, 1.0, &mut rng),
        };
        let mut tape = Tape::disabled();
        let got = gat_layer(&mut tape, &graph, &h, &layer).unwrap();
        let want = gat_dense_oracle(&graph, &h, &layer);
        for (g, w) in got.data().iter().zip(&want) {
            max_err = max_err.max((g - w).abs());
        }
    }
    let detail = format!("max abs err {max_err:.2e} over {instances} instances");
    if max_err <= 1e-10 {
        CheckOutcome::pass("oracle: attention layer vs dense", detail)
    } else {
        CheckOutcome::fail("oracle: attention layer vs dense", detail)
    }
}

/// Closed-form 2-Wasserstein against the sorted-sample coupling estimate on
/// 1-D Gaussians.
pub fn wasserstein_mc_check(seed: u64, n_samples: usize) -> CheckOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let cases = [
        (0.0, 1.0, 2.0, 1.0),
        (-1.0, 0.5, 1.5, 2.0),
        (3.0, 1.2, 3.0, 0.4),
    ];
    let mut worst = 0.0f64;
    for (m1, s1, m2, s2) in cases {
        let closed = w2_diag_gauss(&[m1], &[s1], &[m2], &[s2]).unwrap();
        let d1 = Normal::new(m1, s1).unwrap();
        let d2 = Normal::new(m2, s2).unwrap();
        let mut xs: Vec<f64> = (0..n_samples).map(|_| d1.sample(&mut rng)).collect();
        let mut ys: Vec<f64> = (0..n_samples).map(|_| d2.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let mean_sq: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n_samples as f64;
        let estimate = mean_sq.sqrt();
        let rel = (estimate - closed).abs() / closed;
        worst = worst.max(rel);
    }
    let detail = format!("worst relative deviation {worst:.4}");
    if worst < 0.02 {
        CheckOutcome::pass("oracle: wasserstein closed form vs coupling", detail)
    } else {
        CheckOutcome::fail("oracle: wasserstein closed form vs coupling", detail)
    }
}

/// Ranking metrics against direct counting and a permutation-maximized DCG
/// normalizer on a small fixed instance.
pub fn metrics_oracle_check() -> CheckOutcome {
    let ds = InteractionDataset::from_internal_split(
        1,
        1,
        5,
        vec![(0, 0)],
        vec![(0, 0)],
        vec![(0, 4)],
        vec![],
        vec![(0, 1), (0, 2)],
    )
    .unwrap();
    let scores = vec![0.9, 0.1, 0.8, 0.7, 0.2]; // candidate ranking: 0, 2, 3, 1
    let k = 3;
    let report = evaluate_scores(&scores, &ds, Split::Test, &[k], 0).unwrap();

    // direct: candidates exclude train group 4; order by score desc
    let mut order: Vec<usize> = vec![0, 1, 2, 3];
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let rel = [1usize, 2];
    let hits = order.iter().take(k).filter(|g| rel.contains(g)).count();
    let want_recall = hits as f64 / rel.len() as f64;
    let dcg: f64 = order
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, g)| rel.contains(g))
        .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    // permutation-maximized normalizer over all 4! candidate orders
    let mut best = 0.0f64;
    let cands = [0usize, 1, 2, 3];
    let mut perm = cands.to_vec();
    let heap = |perm: &mut Vec<usize>, best: &mut f64| {
        fn permute(arr: &mut Vec<usize>, k: usize, rel: &[usize], cutoff: usize, best: &mut f64) {
            if k == 1 {
                let dcg: f64 = arr
                    .iter()
                    .take(cutoff)
                    .enumerate()
                    .filter(|(_, g)| rel.contains(g))
                    .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
                    .sum();
                *best = best.max(dcg);
                return;
            }
            for i in 0..k {
                permute(arr, k - 1, rel, cutoff, best);
                if k % 2 == 0 {
                    arr.swap(i, k - 1);
                } else {
                    arr.swap(0, k - 1);
                }
            }
        }
        permute(perm, 4, &rel, k, best);
    };
    heap(&mut perm, &mut best);
    let want_ndcg = dcg / best;

    let exact = report.recall[0] == want_recall && report.ndcg[0] == want_ndcg;
    let ideal_ok = (best - ideal_dcg(rel.len(), k)).abs() < 1e-15;
    let detail = format!(
        "recall {} vs {}, ndcg {} vs {}, normalizer match {}",
        report.recall[0], want_recall, report.ndcg[0], want_ndcg, ideal_ok
    );
    if exact && ideal_ok {
        CheckOutcome::pass("oracle: ranking metrics vs permutation search", detail)
    } else {
        CheckOutcome::fail("oracle: ranking metrics vs permutation search", detail)
    }
}

/// Structural identities of the loss functions.
pub fn loss_reduction_checks(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let v = Tensor::standard_normal(vec![5, 3], &mut rng);
    let s = Tensor::standard_normal(vec![5, 3], &mut rng);
    let mean = Tensor::standard_normal(vec![5, 3], &mut rng);
    let mut sigma = Tensor::standard_normal(vec![5, 3], &mut rng);
    for x in sigma.data_mut() {
        *x = x.abs() + 0.1;
    }
    let mut tape = Tape::disabled();
    let vanilla = infonce_vanilla(&mut tape, &v, &s, 1.0).unwrap().item();
    let filtered = infonce_filtered(&mut tape, &v, &s, &mean, &sigma, 1.0, 0.0)
        .unwrap()
        .item();
    let diff = (vanilla - filtered).abs();
    out.push(if diff <= 1e-12 {
        CheckOutcome::pass(
            "reduction: filtered equals vanilla at zero threshold",
            format!("|Δ| = {diff:.2e}"),
        )
    } else {
        CheckOutcome::fail(
            "reduction: filtered equals vanilla at zero threshold",
            format!("|Δ| = {diff:.2e}"),
        )
    });

    let all_filtered = infonce_filtered(&mut tape, &v, &s, &mean, &sigma, 1.0, f64::INFINITY)
        .unwrap()
        .item();
    out.push(if all_filtered == 0.0 {
        CheckOutcome::pass(
            "reduction: filtered vanishes at infinite threshold",
            "loss exactly 0",
        )
    } else {
        CheckOutcome::fail(
            "reduction: filtered vanishes at infinite threshold",
            format!("loss {all_filtered}"),
        )
    });

    let pos = Tensor::vector(vec![0.4, -1.0, 2.0]);
    let bpr = bpr_loss(&mut tape, &pos, &pos).unwrap().item();
    let diff = (bpr - std::f64::consts::LN_2).abs();
    out.push(if diff <= 1e-12 {
        CheckOutcome::pass("reduction: pairwise loss at zero margin", format!("|Δ| = {diff:.2e}"))
    } else {
        CheckOutcome::fail("reduction: pairwise loss at zero margin", format!("|Δ| = {diff:.2e}"))
    });

    let beta = anneal_beta(20.0, 0.1, 20.0);
    out.push(if beta == 0.5 {
        CheckOutcome::pass("reduction: annealing midpoint", "β(E) = 0.5 exactly")
    } else {
        CheckOutcome::fail("reduction: annealing midpoint", format!("β(E) = {beta}"))
    });

    out
}

/// The fixed toy used by the end-to-end gradient check: 5 users, 6 items,
/// 4 groups, everything in training.
pub fn gradient_toy() -> (InteractionDataset, ModelGraphs) {
    let user_item = vec![(0, 0), (0, 2), (1, 1), (1, 3), (2, 4), (2, 0), (3, 5), (4, 1)];
    let group_item = vec![(0, 0), (0, 3), (1, 1), (2, 4), (2, 5), (3, 2)];
    let z_train = vec![(0, 0), (0, 1), (1, 1), (2, 2), (3, 3), (4, 0)];
    let ds = InteractionDataset::from_internal_split(
        5,
        6,
        4,
        user_item,
        group_item,
        z_train,
        vec![],
        vec![],
    )
    .unwrap();
    let graphs = ModelGraphs::build(&ds).unwrap();
    (ds, graphs)
}

/// End-to-end check: the gradient of the full joint loss (ranking +
/// both contrastive terms + regularization) with respect to every
/// parameter matches central finite differences on the toy problem.
pub fn e2e_gradient_check(seed: u64) -> Result<GradCheckReport> {
    let (_ds, graphs) = gradient_toy();
    let dims = ModelDims {
        n_users: 5,
        n_items: 6,
        n_groups: 4,
        d: 3,
        layers: 2,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let params = ModelParams::init(&dims, &mut rng);
    let eps = Tensor::standard_normal(vec![5, 3], &mut rng);

    // a fixed valid triplet batch: negatives unobserved for each user
    let users: Arc<Vec<usize>> = Arc::new(vec![0, 1, 2, 3]);
    let pos: Arc<Vec<usize>> = Arc::new(vec![0, 1, 2, 3]);
    let neg: Arc<Vec<usize>> = Arc::new(vec![2, 3, 0, 1]);
    let batch_users = vec![0usize, 1, 2, 3];

    let opts = ForwardOpts::default();
    let mut cfg = LossConfig {
        lambda1: 0.5,
        lambda2: 0.01,
        ..LossConfig::default()
    };
    let epoch = 7.0;

    // Place the Wasserstein threshold inside the widest gap of the observed
    // pairwise distances so the finite-difference probes never flip the
    // false-negative mask.
    {
        let mut tape = Tape::disabled();
        let state = forward(&mut tape, &params, &graphs, &opts, Some(&eps))?;
        let mean = state.u_v_mu_c.data();
        let sig = state.u_v_sigma.data();
        let d = 3;
        let mut dists = Vec::new();
        for i in &batch_users {
            for j in &batch_users {
                if i < j {
                    dists.push(w2_diag_gauss(
                        &mean[i * d..(i + 1) * d],
                        &sig[i * d..(i + 1) * d],
                        &mean[j * d..(j + 1) * d],
                        &sig[j * d..(j + 1) * d],
                    )?);
                }
            }
        }
        dists.sort_by(f64::total_cmp);
        let mut best_gap = (0.0, dists[0] / 2.0);
        for w in dists.windows(2) {
            if w[1] - w[0] > best_gap.0 {
                best_gap = (w[1] - w[0], (w[0] + w[1]) / 2.0);
            }
        }
        cfg.mu_w2 = best_gap.1;
    }

    let loss_of = |tape: &mut Tape, p: &ModelParams| -> Result<Tensor> {
        let state = forward(tape, p, &graphs, &opts, Some(&eps))?;
        let s_pos = score_pairs(tape, &state, &users, &pos, true, true)?;
        let s_neg = score_pairs(tape, &state, &users, &neg, true, true)?;
        let main = bpr_loss(tape, &s_pos, &s_neg)?;
        let uv = batch_rows(tape, &state.u_v_hat, &batch_users)?;
        let us = batch_rows(tape, &state.u_s_hat, &batch_users)?;
        let ssl1 = infonce_vanilla(tape, &uv, &us, cfg.tau)?;
        let mut mask_tape = Tape::disabled();
        let idx = Arc::new(batch_users.clone());
        let mean = mask_tape.gather_rows(&state.u_v_mu_c.detached(), &idx)?;
        let sigma = mask_tape.gather_rows(&state.u_v_sigma.detached(), &idx)?;
        let ssl2 = infonce_filtered(tape, &uv, &us, &mean, &sigma, cfg.tau, cfg.mu_w2)?;
        let l2 = l2_norm_sq(tape, p)?;
        total_loss(tape, &main, Some(&ssl1), Some(&ssl2), &l2, &cfg, epoch, None, false)
    };

    // analytic
    let mut tape = Tape::new();
    let tracked = params.track(&mut tape);
    let loss = loss_of(&mut tape, &tracked)?;
    let grads = tape.backward(&loss)?;
    let mut analytic = Vec::new();
    for (_, t) in tracked.tensors() {
        analytic.extend_from_slice(grads.grad(t)?.data());
    }

    // numeric
    let flat = params.flatten();
    let f = |x: &[f64]| -> Result<f64> {
        let p = ModelParams::from_flat(&dims, x)?;
        let mut tape = Tape::disabled();
        Ok(loss_of(&mut tape, &p)?.item())
    };
    check_gradient(f, &flat, &analytic, FD_STEP, REL_TOL, ABS_TOL)
}

/// The full battery.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.extend(op_gradient_checks(seed, 3));
    out.push(spmm_oracle_check(seed ^ 1, 10));
    out.push(hypergraph_oracle_check(seed ^ 2, 10));
    out.push(gat_oracle_check(seed ^ 3, 10));
    out.push(wasserstein_mc_check(seed ^ 4, 100_000));
    out.push(metrics_oracle_check());
    out.extend(loss_reduction_checks(seed ^ 5));
    match e2e_gradient_check(seed ^ 6) {
        Ok(report) if report.passed => out.push(CheckOutcome::pass(
            "gradient: end-to-end joint loss",
            format!("max rel err {:.2e}", report.max_rel_error),
        )),
        Ok(report) => out.push(CheckOutcome::fail(
            "gradient: end-to-end joint loss",
            format!("max rel err {:.2e}", report.max_rel_error),
        )),
        Err(e) => out.push(CheckOutcome::fail(
            "gradient: end-to-end joint loss",
            e.to_string(),
        )),
    }
    out
}

//! Release-gate acceptance suite. Each test prints one `criterion N:
//! PASS/FAIL` line and asserts it; criteria needing external data print
//! SKIP when the data is absent.

use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use gi_core::data::{generate_synthetic, InteractionDataset, SyntheticSpec};
use gi_core::eval::{evaluate, evaluate_scores, excluded_groups, popularity_scores, Split};
use gi_core::loss::w2_diag_gauss;
use gi_core::model::ModelGraphs;
use gi_core::selfcheck;
use gi_core::train::{train_with_graphs, TrainConfig};

fn criterion_line(id: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("criterion {id}: {tag} — {detail}");
}

/// Criterion 1: every differentiable operation and the full joint loss pass
/// central finite-difference checks (relative error < 1e-4) within 30 s.
#[test]
fn criterion_1_gradient_integrity() {
    let start = Instant::now();
    let ops = selfcheck::op_gradient_checks(17, 100);
    let ops_ok = ops.iter().all(|o| o.passed);
    let e2e = selfcheck::e2e_gradient_check(17).expect("end-to-end check runs");
    let elapsed = start.elapsed().as_secs_f64();
    let passed = ops_ok && e2e.passed && elapsed < 30.0;
    criterion_line(
        "1",
        passed,
        &format!(
            "{} op checks, end-to-end max rel err {:.2e}, {elapsed:.1}s",
            ops.len(),
            e2e.max_rel_error
        ),
    );
    for o in &ops {
        assert!(o.passed, "{}: {}", o.name, o.detail);
    }
    assert!(e2e.passed, "end-to-end gradient check failed");
    assert!(elapsed < 30.0, "gradient checks took {elapsed:.1}s");
}

/// Criterion 2: hypergraph operator equals the dense normalization chain on
/// 20 random instances (≤ 1e-12); attention layer equals the dense oracle
/// on small graphs (≤ 1e-10).
#[test]
fn criterion_2_operator_oracles() {
    let hyper = selfcheck::hypergraph_oracle_check(23, 20);
    let gat = selfcheck::gat_oracle_check(29, 20);
    let passed = hyper.passed && gat.passed;
    criterion_line("2", passed, &format!("{}; {}", hyper.detail, gat.detail));
    assert!(hyper.passed, "{}", hyper.detail);
    assert!(gat.passed, "{}", gat.detail);
}

/// Criterion 3: Wasserstein closed form matches the sorted-coupling
/// Monte-Carlo estimate within 2% and behaves as a metric.
#[test]
fn criterion_3_wasserstein_correctness() {
    let mc = selfcheck::wasserstein_mc_check(31, 100_000);
    let mut rng = ChaCha20Rng::seed_from_u64(37);
    let mut metric_ok = true;
    for _ in 0..1000 {
        let mut draw = |rng: &mut ChaCha20Rng| {
            let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let sigma: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..2.5)).collect();
            (mu, sigma)
        };
        let (m1, s1) = draw(&mut rng);
        let (m2, s2) = draw(&mut rng);
        let (m3, s3) = draw(&mut rng);
        let d12 = w2_diag_gauss(&m1, &s1, &m2, &s2).unwrap();
        let d21 = w2_diag_gauss(&m2, &s2, &m1, &s1).unwrap();
        if d12 != d21 {
            metric_ok = false; // symmetry must be exact
        }
        let d13 = w2_diag_gauss(&m1, &s1, &m3, &s3).unwrap();
        let d23 = w2_diag_gauss(&m2, &s2, &m3, &s3).unwrap();
        if d13 > d12 + d23 + 1e-12 {
            metric_ok = false;
        }
        if w2_diag_gauss(&m1, &s1, &m1, &s1).unwrap() != 0.0 {
            metric_ok = false;
        }
    }
    let passed = mc.passed && metric_ok;
    criterion_line(
        "3",
        passed,
        &format!("{}; metric properties on 1000 triples: {metric_ok}", mc.detail),
    );
    assert!(mc.passed, "{}", mc.detail);
    assert!(metric_ok);
}

/// Criterion 4: loss reductions — filtered ≡ vanilla at μ=0 (1e-12),
/// filtered = 0 at μ=∞, pairwise loss = ln 2 at zero margin (1e-12),
/// β(E) = 0.5 exactly.
#[test]
fn criterion_4_loss_reductions() {
    let checks = selfcheck::loss_reduction_checks(41);
    let passed = checks.iter().all(|c| c.passed);
    let detail: Vec<String> = checks.iter().map(|c| format!("{}: {}", c.name, c.passed)).collect();
    criterion_line("4", passed, &detail.join("; "));
    for c in &checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

/// Brute force over every permutation of the candidate set: recall by
/// counting, NDCG normalized by the permutation-maximal DCG.
fn permutation_oracle(
    scores: &[f64],
    ds: &InteractionDataset,
    split: Split,
    k: usize,
) -> (f64, f64) {
    fn max_dcg(arr: &mut Vec<usize>, k: usize, rel: &[usize], cutoff: usize, best: &mut f64) {
        if k == 1 {
            let dcg: f64 = arr
                .iter()
                .take(cutoff)
                .enumerate()
                .filter(|(_, g)| rel.binary_search(g).is_ok())
                .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
                .sum();
            if dcg > *best {
                *best = dcg;
            }
            return;
        }
        for i in 0..k {
            max_dcg(arr, k - 1, rel, cutoff, best);
            if k % 2 == 0 {
                arr.swap(i, k - 1);
            } else {
                arr.swap(0, k - 1);
            }
        }
    }
    let relevant = match split {
        Split::Train => &ds.z_train,
        Split::Val => &ds.z_val,
        Split::Test => &ds.z_test,
    };
    let (mut recall_sum, mut ndcg_sum, mut n) = (0.0, 0.0, 0usize);
    for u in 0..ds.n_users {
        let (rel, _) = relevant.row(u);
        if rel.is_empty() {
            continue;
        }
        n += 1;
        let excluded = excluded_groups(ds, split, u);
        let mut candidates: Vec<usize> = (0..ds.n_groups)
            .filter(|g| excluded.binary_search(g).is_err())
            .collect();
        let mut order = candidates.clone();
        order.sort_by(|&a, &b| {
            scores[u * ds.n_groups + b]
                .total_cmp(&scores[u * ds.n_groups + a])
                .then(a.cmp(&b))
        });
        let hits = order
            .iter()
            .take(k)
            .filter(|g| rel.binary_search(g).is_ok())
            .count();
        recall_sum += hits as f64 / rel.len() as f64;
        let dcg: f64 = order
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, g)| rel.binary_search(g).is_ok())
            .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
            .sum();
        let mut best = 0.0;
        let len = candidates.len();
        max_dcg(&mut candidates, len, rel, k, &mut best);
        ndcg_sum += dcg / best;
    }
    (recall_sum / n as f64, ndcg_sum / n as f64)
}

/// Criterion 5: Recall@K and NDCG@K equal the permutation oracle exactly on
/// universes of at most 8 groups.
#[test]
fn criterion_5_metric_oracles() {
    let mut rng = ChaCha20Rng::seed_from_u64(43);
    let mut all_exact = true;
    let mut checked = 0usize;
    for trial in 0..6 {
        let n_groups = rng.random_range(4..=8);
        let n_users = 3;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for u in 0..n_users {
            for g in 0..n_groups {
                if rng.random_bool(0.2) {
                    train.push((u, g));
                } else if rng.random_bool(0.4) {
                    test.push((u, g));
                }
            }
        }
        if test.is_empty() {
            test.push((0, 0));
            train.retain(|&p| p != (0, 0));
        }
        let ds = InteractionDataset::from_internal_split(
            n_users,
            1,
            n_groups,
            (0..n_users).map(|u| (u, 0)).collect(),
            vec![(0, 0)],
            train,
            vec![],
            test,
        )
        .unwrap();
        let scores: Vec<f64> = (0..n_users * n_groups)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        for k in [1, 3, 5, 10] {
            let got = evaluate_scores(&scores, &ds, Split::Test, &[k], 0).unwrap();
            let (want_r, want_n) = permutation_oracle(&scores, &ds, Split::Test, k);
            checked += 1;
            if got.recall[0] != want_r || got.ndcg[0] != want_n {
                all_exact = false;
                eprintln!(
                    "trial {trial} k {k}: got ({}, {}), oracle ({want_r}, {want_n})",
                    got.recall[0], got.ndcg[0]
                );
            }
        }
    }
    criterion_line(
        "5",
        all_exact,
        &format!("{checked} instances match the permutation oracle exactly"),
    );
    assert!(all_exact);
}

fn memorization_toy() -> InteractionDataset {
    let z: Vec<(usize, usize)> = (0..20)
        .flat_map(|u| vec![(u, u % 10), (u, (u + 3) % 10)])
        .collect();
    let x: Vec<(usize, usize)> = (0..20)
        .flat_map(|u| vec![(u, u % 30), (u, (u + 7) % 30), (u, (u + 13) % 30)])
        .collect();
    let y: Vec<(usize, usize)> = (0..10)
        .flat_map(|g| vec![(g, g % 30), (g, (g + 11) % 30)])
        .collect();
    InteractionDataset::from_internal_split(20, 30, 10, x, y, z, vec![], vec![]).unwrap()
}

/// Criterion 6: the memorization toy reaches training R@10 ≥ 0.95 within
/// 200 epochs in under two minutes, with loss means non-increasing across
/// consecutive 10-epoch windows.
#[test]
fn criterion_6_learning_capability() {
    let start = Instant::now();
    let ds = memorization_toy();
    let cfg = TrainConfig {
        d: 32,
        layers: 2,
        lr: 0.001,
        batch_size: 8,
        max_epochs: 200,
        patience: 10_000,
        seed: 3,
        eval_ks: vec![10],
        ..TrainConfig::default()
    };
    let graphs = ModelGraphs::build(&ds).unwrap();
    let outcome = train_with_graphs(&ds, &graphs, &cfg).unwrap();
    let report = evaluate(
        &outcome.params,
        &graphs,
        &ds,
        &cfg.forward_opts(),
        true,
        true,
        Split::Train,
        &[10],
        0,
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let recall = report.recall[0];

    let losses: Vec<f64> = outcome.history.iter().map(|r| r.loss_total).collect();
    let window_means: Vec<f64> = losses
        .chunks(10)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let monotone = window_means.windows(2).all(|w| w[1] <= w[0]);

    let passed = recall >= 0.95 && monotone && elapsed < 120.0;
    criterion_line(
        "6",
        passed,
        &format!(
            "training R@10 = {recall:.3}, windows {} -> {:.4} monotone: {monotone}, {elapsed:.1}s",
            window_means[0],
            window_means.last().unwrap()
        ),
    );
    assert!(recall >= 0.95, "training R@10 = {recall}");
    assert!(
        monotone,
        "10-epoch loss windows not monotone: {window_means:?}"
    );
    assert!(elapsed < 120.0, "took {elapsed:.1}s");
}

struct SyntheticRun {
    recall10: f64,
    ndcg10: f64,
    mean_candidates: f64,
}

fn planted_run(dataset_seed: u64, train_seed: u64, no_cl: bool) -> SyntheticRun {
    let spec = SyntheticSpec {
        n_users: 200,
        n_items: 100,
        n_groups: 40,
        n_topics: 4,
        density: 0.08,
        seed: dataset_seed,
    };
    let (ds, _) = generate_synthetic(&spec).unwrap();
    let mut cfg = TrainConfig {
        d: 32,
        layers: 2,
        lr: 0.005,
        batch_size: 1024,
        max_epochs: 200,
        patience: 60,
        seed: train_seed,
        eval_ks: vec![10],
        ..TrainConfig::default()
    };
    if no_cl {
        cfg.ablation.no_ssl1 = true;
        cfg.ablation.no_ssl2 = true;
    }
    let graphs = ModelGraphs::build(&ds).unwrap();
    let outcome = train_with_graphs(&ds, &graphs, &cfg).unwrap();
    let report = evaluate(
        &outcome.params,
        &graphs,
        &ds,
        &cfg.forward_opts(),
        true,
        true,
        Split::Test,
        &[10],
        0,
    )
    .unwrap();
    // mean candidate-set size over evaluated users
    let mut total = 0usize;
    let mut n = 0usize;
    for u in 0..ds.n_users {
        if ds.z_test.row_nnz(u) > 0 {
            total += ds.n_groups - excluded_groups(&ds, Split::Test, u).len();
            n += 1;
        }
    }
    SyntheticRun {
        recall10: report.recall[0],
        ndcg10: report.ndcg[0],
        mean_candidates: total as f64 / n as f64,
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Criterion 7, first part: on the planted-topic dataset, the median test
/// R@10 over three seeds must reach five times the uniform-random baseline
/// K/n_candidate_groups. With 40 groups and K = 10 that threshold is
/// 5·(10/≈38) ≈ 1.3, which exceeds the maximum attainable recall of 1.0, so
/// this criterion cannot pass as stated; the assertion is kept faithful and
/// the measured model-to-baseline ratio is printed alongside.
#[test]
fn criterion_7a_synthetic_signal_vs_uniform() {
    let runs: Vec<SyntheticRun> = (0..3)
        .map(|i| planted_run(41 + i as u64, 1 + i as u64, false))
        .collect();
    let med_recall = median(runs.iter().map(|r| r.recall10).collect());
    let mean_cand =
        runs.iter().map(|r| r.mean_candidates).sum::<f64>() / runs.len() as f64;
    let baseline = 10.0 / mean_cand;
    let threshold = 5.0 * baseline;
    let ratio = med_recall / baseline;
    let passed = med_recall >= threshold;
    criterion_line(
        "7a",
        passed,
        &format!(
            "median test R@10 = {med_recall:.4}, uniform baseline = {baseline:.4}, \
             model/baseline = {ratio:.2}x, required threshold = {threshold:.4} \
             (exceeds the maximum recall of 1.0)"
        ),
    );
    assert!(
        med_recall >= threshold,
        "median R@10 {med_recall:.4} < 5x uniform baseline {threshold:.4}; the threshold \
         exceeds 1.0, the maximum value of recall, so no model can satisfy it at \
         this dataset size (the model does beat the uniform baseline {ratio:.2}x over)"
    );
}

/// Criterion 7, second part: the full model beats the variant without
/// contrastive learning on median NDCG@10 over three seeds.
#[test]
fn criterion_7b_contrastive_learning_direction() {
    let full: Vec<f64> = (0..3)
        .map(|i| planted_run(41 + i as u64, 1 + i as u64, false).ndcg10)
        .collect();
    let no_cl: Vec<f64> = (0..3)
        .map(|i| planted_run(41 + i as u64, 1 + i as u64, true).ndcg10)
        .collect();
    let med_full = median(full.clone());
    let med_no_cl = median(no_cl.clone());
    let passed = med_full >= med_no_cl;
    criterion_line(
        "7b",
        passed,
        &format!(
            "median N@10 full = {med_full:.4} vs without contrastive learning = {med_no_cl:.4} \
             (full per-seed {full:?}, ablated {no_cl:?})"
        ),
    );
    assert!(
        med_full >= med_no_cl,
        "full {med_full:.4} < ablated {med_no_cl:.4}"
    );
}

/// Criterion 8 (conditional): with the public Mafengwo dataset supplied, a
/// run at the published defaults must land test R@10 in [0.33, 0.45] and
/// beat the popularity baseline by ≥ 15% relative NDCG@10. Skipped when the
/// dataset is absent; criteria 1-7 and 9 are the self-contained gate.
#[test]
fn criterion_8_mafengwo_reproduction() {
    let dir = std::env::var_os("GI_MAFENGWO_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mafengwo")
        });
    let ui = dir.join("user_item.txt");
    let gi_path = dir.join("group_item.txt");
    let ug = dir.join("user_group.txt");
    if !(ui.exists() && gi_path.exists() && ug.exists()) {
        println!(
            "criterion 8: SKIP — dataset not supplied (set GI_MAFENGWO_DIR or place \
             user_item.txt, group_item.txt, user_group.txt under data/mafengwo/); advisory"
        );
        return;
    }
    let ds = gi_core::data::load_dataset(&ui, &gi_path, &ug, 0).unwrap();
    assert_eq!(
        (ds.n_users, ds.n_items, ds.n_groups),
        (1269, 999, 972),
        "entity counts differ from the published statistics"
    );
    assert_eq!(ds.total_memberships(), 5574);
    assert_eq!(ds.x.nnz(), 8676);
    assert_eq!(ds.y.nnz(), 2540);

    let cfg = TrainConfig {
        seed: 0,
        loss: gi_core::loss::LossConfig {
            e_anneal: 20.0,
            mu_w2: 1.5,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let graphs = ModelGraphs::build(&ds).unwrap();
    let outcome = train_with_graphs(&ds, &graphs, &cfg).unwrap();
    let report = evaluate(
        &outcome.params,
        &graphs,
        &ds,
        &cfg.forward_opts(),
        true,
        true,
        Split::Test,
        &[10, 20],
        0,
    )
    .unwrap();
    let pop = evaluate_scores(&popularity_scores(&ds), &ds, Split::Test, &[10], 0).unwrap();
    let r10 = report.recall[0];
    let n10 = report.ndcg[0];
    let uplift = n10 / pop.ndcg[0];
    let passed = (0.33..=0.45).contains(&r10) && uplift >= 1.15;
    criterion_line(
        "8",
        passed,
        &format!("test R@10 = {r10:.4} (band [0.33, 0.45]), NDCG@10 {n10:.4} vs popularity {:.4} ({uplift:.2}x)", pop.ndcg[0]),
    );
    assert!((0.33..=0.45).contains(&r10), "R@10 {r10} outside band");
    assert!(uplift >= 1.15, "NDCG uplift {uplift:.3} below 1.15");
}

/// Criterion 9: commands repeated with identical seed and config produce
/// bit-identical metrics and checkpoints.
#[test]
fn criterion_9_determinism() {
    let gi = env!("CARGO_BIN_EXE_gi");
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(gi)
            .args(args)
            .current_dir(dir.path())
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "gi {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    for tag in ["a", "b"] {
        run(&[
            "synth", "--users", "40", "--items", "20", "--groups", "8", "--topics", "2",
            "--density", "0.1", "--seed", "12", "--out", &format!("data_{tag}"),
        ]);
    }
    let cfg = r#"{
        "manifest": "data_a/manifest.json",
        "d": 8, "layers": 1, "lr": 0.01, "batch_size": 32,
        "max_epochs": 8, "patience": 100, "seed": 3, "eval_ks": [5, 10]
    }"#;
    fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    for tag in ["a", "b"] {
        run(&["train", "--config", "cfg.json", "--out", &format!("run_{tag}")]);
    }
    let mut all_equal = true;
    for f in [
        "data_a/z_train.txt",
        "data_a/manifest.json",
    ] {
        let other = f.replace("data_a", "data_b");
        if fs::read(dir.path().join(f)).unwrap() != fs::read(dir.path().join(other)).unwrap() {
            all_equal = false;
        }
    }
    for f in ["checkpoint.bin", "metrics.json", "history.csv", "run_info.json"] {
        let a = fs::read(dir.path().join("run_a").join(f)).unwrap();
        let b = fs::read(dir.path().join("run_b").join(f)).unwrap();
        if a != b {
            all_equal = false;
            eprintln!("{f} differs between identical runs");
        }
    }
    criterion_line(
        "9",
        all_equal,
        "synth and train outputs byte-identical across repeated runs",
    );
    assert!(all_equal);
}


//! Ranking evaluation: Recall@K and NDCG@K over held-out group memberships.
//!
//! For each user with at least one held-out group, every group is ranked
//! except the user's known memberships from earlier phases (train for the
//! validation split; train and validation for the test split; nothing for
//! training-set metrics). Ties break by group id so rankings are
//! deterministic.

use serde::{Deserialize, Serialize};

use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::model::{forward, score_all, ForwardOpts, ModelGraphs, ModelParams};
use crate::tensor::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split {other:?}"))),
        }
    }
}

/// Mean ranking metrics over the evaluable users of one split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub n_evaluated: usize,
    /// Users skipped for having no candidates.
    pub n_skipped: usize,
    pub epoch: usize,
    /// Diagnostic only; excluded from serialized reports so identical runs
    /// produce identical bytes.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }

    /// Aligned plain-text table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "split={} evaluated={} skipped={} epoch={}\n",
            self.split, self.n_evaluated, self.n_skipped, self.epoch
        ));
        out.push_str(&format!("{:>8}", "K"));
        for k in &self.ks {
            out.push_str(&format!("{k:>12}"));
        }
        out.push('\n');
        out.push_str(&format!("{:>8}", "Recall"));
        for r in &self.recall {
            out.push_str(&format!("{r:>12.4}"));
        }
        out.push('\n');
        out.push_str(&format!("{:>8}", "NDCG"));
        for n in &self.ndcg {
            out.push_str(&format!("{n:>12.4}"));
        }
        out.push('\n');
        out
    }
}

/// Relevant memberships of the split under evaluation.
fn relevant_matrix<'a>(ds: &'a InteractionDataset, split: Split) -> &'a crate::tensor::SparseMatrix {
    match split {
        Split::Train => &ds.z_train,
        Split::Val => &ds.z_val,
        Split::Test => &ds.z_test,
    }
}

/// Groups hidden from the candidate list: memberships the model legitimately
/// knows from earlier phases. Training metrics exclude nothing.
pub fn excluded_groups(ds: &InteractionDataset, split: Split, user: usize) -> Vec<usize> {
    let mut out = Vec::new();
    match split {
        Split::Train => {}
        Split::Val => out.extend_from_slice(ds.z_train.row(user).0),
        Split::Test => {
            out.extend_from_slice(ds.z_train.row(user).0);
            out.extend_from_slice(ds.z_val.row(user).0);
        }
    }
    out.sort_unstable();
    out
}

fn dcg_gain(rank: usize) -> f64 {
    // rank is 1-based
    1.0 / ((rank + 1) as f64).log2()
}

/// Ideal DCG for `n_relevant` binary-gain items at cutoff `k`.
pub fn ideal_dcg(n_relevant: usize, k: usize) -> f64 {
    (1..=n_relevant.min(k)).map(dcg_gain).sum()
}

/// Metrics from an explicit score matrix (row-major users × groups).
pub fn evaluate_scores(
    scores: &[f64],
    ds: &InteractionDataset,
    split: Split,
    ks: &[usize],
    epoch: usize,
) -> Result<MetricsReport> {
    if scores.len() != ds.n_users * ds.n_groups {
        return Err(Error::ShapeMismatch {
            op: "evaluate_scores",
            lhs: vec![scores.len()],
            rhs: vec![ds.n_users, ds.n_groups],
        });
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Usage("evaluation cutoffs must be positive".into()));
    }
    let relevant = relevant_matrix(ds, split);
    if relevant.nnz() == 0 {
        return Err(Error::Usage(format!(
            "cannot evaluate: {} split is empty",
            split.name()
        )));
    }
    let start = std::time::Instant::now();
    let mut recall_sums = vec![0.0; ks.len()];
    let mut ndcg_sums = vec![0.0; ks.len()];
    let mut n_evaluated = 0usize;
    let mut n_skipped = 0usize;

    let mut ranking: Vec<(f64, usize)> = Vec::with_capacity(ds.n_groups);
    for u in 0..ds.n_users {
        let (rel, _) = relevant.row(u);
        if rel.is_empty() {
            continue;
        }
        let excluded = excluded_groups(ds, split, u);
        ranking.clear();
        for g in 0..ds.n_groups {
            if excluded.binary_search(&g).is_err() {
                ranking.push((scores[u * ds.n_groups + g], g));
            }
        }
        if ranking.is_empty() {
            n_skipped += 1;
            continue;
        }
        ranking.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        n_evaluated += 1;
        for (ki, &k) in ks.iter().enumerate() {
            let mut hits = 0usize;
            let mut dcg = 0.0;
            for (pos, &(_, g)) in ranking.iter().take(k).enumerate() {
                if rel.binary_search(&g).is_ok() {
                    hits += 1;
                    dcg += dcg_gain(pos + 1);
                }
            }
            recall_sums[ki] += hits as f64 / rel.len() as f64;
            ndcg_sums[ki] += dcg / ideal_dcg(rel.len(), k);
        }
    }
    if n_evaluated == 0 {
        return Err(Error::Usage(format!(
            "no evaluable users in {} split",
            split.name()
        )));
    }
    let denom = n_evaluated as f64;
    Ok(MetricsReport {
        split: split.name().into(),
        ks: ks.to_vec(),
        recall: recall_sums.iter().map(|s| s / denom).collect(),
        ndcg: ndcg_sums.iter().map(|s| s / denom).collect(),
        n_evaluated,
        n_skipped,
        epoch,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Inference forward pass (no sampling) and full score matrix under the
/// given branch flags.
pub fn score_matrix(
    params: &ModelParams,
    graphs: &ModelGraphs,
    fwd: &ForwardOpts,
    include_group_level: bool,
    include_item_level: bool,
) -> Result<Vec<f64>> {
    let mut tape = Tape::disabled();
    let state = forward(&mut tape, params, graphs, fwd, None)?;
    let scores = score_all(&mut tape, &state, include_group_level, include_item_level)?;
    Ok(scores.data().to_vec())
}

/// Model evaluation on one split.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    params: &ModelParams,
    graphs: &ModelGraphs,
    ds: &InteractionDataset,
    fwd: &ForwardOpts,
    include_group_level: bool,
    include_item_level: bool,
    split: Split,
    ks: &[usize],
    epoch: usize,
) -> Result<MetricsReport> {
    let scores = score_matrix(params, graphs, fwd, include_group_level, include_item_level)?;
    evaluate_scores(&scores, ds, split, ks, epoch)
}

/// Popularity baseline: every user ranks groups by training membership
/// count (ties by group id).
pub fn popularity_scores(ds: &InteractionDataset) -> Vec<f64> {
    let counts = ds.z_train.col_counts();
    let mut scores = vec![0.0; ds.n_users * ds.n_groups];
    for u in 0..ds.n_users {
        for g in 0..ds.n_groups {
            scores[u * ds.n_groups + g] = counts[g] as f64;
        }
    }
    scores
}

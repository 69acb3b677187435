//! Planted-topic synthetic datasets.
//!
//! Every user, item and group is assigned one latent topic. Interactions
//! appear with probability `p_in` when the endpoints share a topic and
//! `p_in / 20` otherwise, with `p_in` solved per relation so the expected
//! edge count matches the requested density. Ground-truth labels are
//! returned for diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::InteractionDataset;
use crate::error::{Error, Result};

const CROSS_TOPIC_RATIO: f64 = 20.0;

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_groups: usize,
    pub n_topics: usize,
    pub density: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticLabels {
    pub user_topics: Vec<usize>,
    pub item_topics: Vec<usize>,
    pub group_topics: Vec<usize>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(InteractionDataset, SyntheticLabels)> {
    if spec.n_users == 0 || spec.n_items == 0 || spec.n_groups == 0 {
        return Err(Error::InvalidParameters("all entity counts must be positive".into()));
    }
    if spec.n_topics == 0 || spec.n_topics > spec.n_groups.min(spec.n_items) {
        return Err(Error::InvalidParameters(format!(
            "n_topics must be in 1..=min(n_groups, n_items), got {}",
            spec.n_topics
        )));
    }
    if !(spec.density > 0.0 && spec.density < 1.0) {
        return Err(Error::InvalidParameters(format!(
            "density must be in (0, 1), got {}",
            spec.density
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let assign = |n: usize, rng: &mut ChaCha20Rng| -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..spec.n_topics)).collect()
    };
    let labels = SyntheticLabels {
        user_topics: assign(spec.n_users, &mut rng),
        item_topics: assign(spec.n_items, &mut rng),
        group_topics: assign(spec.n_groups, &mut rng),
    };

    let mut sample_relation = |left: &[usize], right: &[usize]| -> Vec<(usize, usize)> {
        let n_pairs = (left.len() * right.len()) as f64;
        let mut n_in = 0.0f64;
        for &lt in left {
            for &rt in right {
                if lt == rt {
                    n_in += 1.0;
                }
            }
        }
        let n_out = n_pairs - n_in;
        let denom = n_in + n_out / CROSS_TOPIC_RATIO;
        let mut p_in = if denom > 0.0 {
            spec.density * n_pairs / denom
        } else {
            spec.density
        };
        if p_in > 1.0 {
            log::warn!("requested density {} unreachable; clamping p_in", spec.density);
            p_in = 1.0;
        }
        let p_out = p_in / CROSS_TOPIC_RATIO;
        let mut pairs = Vec::new();
        for (l, &lt) in left.iter().enumerate() {
            for (r, &rt) in right.iter().enumerate() {
                let p = if lt == rt { p_in } else { p_out };
                if rng.random_bool(p) {
                    pairs.push((l, r));
                }
            }
        }
        pairs
    };

    let mut user_item = sample_relation(&labels.user_topics, &labels.item_topics);
    let mut group_item = sample_relation(&labels.group_topics, &labels.item_topics);
    let user_group = sample_relation(&labels.user_topics, &labels.group_topics);

    // Edge-list files cannot represent isolated entities, and membership
    // pairs can land in held-out splits, so guarantee training-side anchors:
    // every user gets a user-item edge, every group a group-item edge, and
    // every item ends up in one of the two (same-topic partner preferred).
    let by_topic = |topics: &[usize]| -> Vec<Vec<usize>> {
        let mut buckets = vec![Vec::new(); spec.n_topics];
        for (i, &t) in topics.iter().enumerate() {
            buckets[t].push(i);
        }
        buckets
    };
    let items_by_topic = by_topic(&labels.item_topics);
    let users_by_topic = by_topic(&labels.user_topics);
    let mut pick = |bucket: &[usize], n: usize, rng: &mut ChaCha20Rng| -> usize {
        if bucket.is_empty() {
            rng.random_range(0..n)
        } else {
            bucket[rng.random_range(0..bucket.len())]
        }
    };
    let mut user_has_item = vec![false; spec.n_users];
    let mut group_has_item = vec![false; spec.n_groups];
    let mut item_seen = vec![false; spec.n_items];
    for &(u, v) in &user_item {
        user_has_item[u] = true;
        item_seen[v] = true;
    }
    for &(g, v) in &group_item {
        group_has_item[g] = true;
        item_seen[v] = true;
    }
    for u in 0..spec.n_users {
        if !user_has_item[u] {
            let v = pick(&items_by_topic[labels.user_topics[u]], spec.n_items, &mut rng);
            user_item.push((u, v));
            item_seen[v] = true;
        }
    }
    for g in 0..spec.n_groups {
        if !group_has_item[g] {
            let v = pick(&items_by_topic[labels.group_topics[g]], spec.n_items, &mut rng);
            group_item.push((g, v));
            item_seen[v] = true;
        }
    }
    for v in 0..spec.n_items {
        if !item_seen[v] {
            let u = pick(&users_by_topic[labels.item_topics[v]], spec.n_users, &mut rng);
            user_item.push((u, v));
        }
    }

    for (name, rel) in [
        ("user-item", &user_item),
        ("group-item", &group_item),
        ("user-group", &user_group),
    ] {
        if rel.is_empty() {
            return Err(Error::InvalidParameters(format!(
                "parameters produced an empty {name} relation"
            )));
        }
    }
    let ds = InteractionDataset::from_internal(
        spec.n_users,
        spec.n_items,
        spec.n_groups,
        user_item,
        group_item,
        user_group,
        spec.seed,
    )?;
    Ok((ds, labels))
}

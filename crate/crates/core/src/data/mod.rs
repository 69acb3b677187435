//! Dataset assembly: interaction matrices, the train/val/test split of
//! user–group pairs, cold-start capping, triplet sampling and synthetic
//! data generation.
//!
//! Only the user–group relation is split — the task is to predict group
//! joins, so user–item and group–item interactions stay fully in training.

mod files;
mod sample;
mod synth;

pub use files::{
    load_dataset, load_from_manifest, load_manifest, prepare_dataset, read_edge_file,
    write_edge_file, write_synthetic, DatasetManifest, MANIFEST_VERSION,
};
pub use sample::{TripletBatch, TripletSampler};
pub use synth::{generate_synthetic, SyntheticLabels, SyntheticSpec};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::tensor::SparseMatrix;

/// The three interaction relations with the user–group pairs split 7:1:2.
///
/// Internal ids are contiguous from 0 per entity class; `user_ids` /
/// `item_ids` / `group_ids` map them back to the raw file ids (sorted, so
/// the mapping is a deterministic bijection).
#[derive(Clone, Debug)]
pub struct InteractionDataset {
    pub n_users: usize,
    pub n_items: usize,
    pub n_groups: usize,
    /// user × item interactions
    pub x: SparseMatrix,
    /// group × item interactions
    pub y: SparseMatrix,
    pub z_train: SparseMatrix,
    pub z_val: SparseMatrix,
    pub z_test: SparseMatrix,
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    pub group_ids: Vec<u64>,
}

impl InteractionDataset {
    /// Assemble from internal-id pairs; raw ids default to the identity map.
    /// The user–group pairs are shuffled with `seed` and split 7:1:2, with
    /// the remainder of the integer split assigned to train (so a lone pair
    /// lands in train).
    pub fn from_internal(
        n_users: usize,
        n_items: usize,
        n_groups: usize,
        user_item: Vec<(usize, usize)>,
        group_item: Vec<(usize, usize)>,
        user_group: Vec<(usize, usize)>,
        seed: u64,
    ) -> Result<Self> {
        let x = SparseMatrix::binary_from_pairs(n_users, n_items, user_item)?;
        let y = SparseMatrix::binary_from_pairs(n_groups, n_items, group_item)?;
        let mut pairs: Vec<(usize, usize)> = user_group;
        pairs.sort_unstable();
        pairs.dedup();
        for &(u, g) in &pairs {
            if u >= n_users || g >= n_groups {
                return Err(Error::InvalidDataset(format!(
                    "user-group pair ({u}, {g}) out of range"
                )));
            }
        }
        let (train, val, test) = split_pairs(pairs, seed);
        let z_train = SparseMatrix::binary_from_pairs(n_users, n_groups, train)?;
        let z_val = SparseMatrix::binary_from_pairs(n_users, n_groups, val)?;
        let z_test = SparseMatrix::binary_from_pairs(n_users, n_groups, test)?;
        Self::assemble(n_users, n_items, n_groups, x, y, z_train, z_val, z_test)
    }

    /// Assemble from pre-split internal-id pairs (manifest load path).
    pub fn from_internal_split(
        n_users: usize,
        n_items: usize,
        n_groups: usize,
        user_item: Vec<(usize, usize)>,
        group_item: Vec<(usize, usize)>,
        z_train: Vec<(usize, usize)>,
        z_val: Vec<(usize, usize)>,
        z_test: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let x = SparseMatrix::binary_from_pairs(n_users, n_items, user_item)?;
        let y = SparseMatrix::binary_from_pairs(n_groups, n_items, group_item)?;
        let z_train = SparseMatrix::binary_from_pairs(n_users, n_groups, z_train)?;
        let z_val = SparseMatrix::binary_from_pairs(n_users, n_groups, z_val)?;
        let z_test = SparseMatrix::binary_from_pairs(n_users, n_groups, z_test)?;
        Self::assemble(n_users, n_items, n_groups, x, y, z_train, z_val, z_test)
    }

    fn assemble(
        n_users: usize,
        n_items: usize,
        n_groups: usize,
        x: SparseMatrix,
        y: SparseMatrix,
        z_train: SparseMatrix,
        z_val: SparseMatrix,
        z_test: SparseMatrix,
    ) -> Result<Self> {
        if x.nnz() == 0 {
            return Err(Error::InvalidDataset("user-item relation is empty".into()));
        }
        if y.nnz() == 0 {
            return Err(Error::InvalidDataset("group-item relation is empty".into()));
        }
        if z_train.nnz() + z_val.nnz() + z_test.nnz() == 0 {
            return Err(Error::InvalidDataset("user-group relation is empty".into()));
        }
        let mut ds = InteractionDataset {
            n_users,
            n_items,
            n_groups,
            x,
            y,
            z_train,
            z_val,
            z_test,
            user_ids: (0..n_users as u64).collect(),
            item_ids: (0..n_items as u64).collect(),
            group_ids: (0..n_groups as u64).collect(),
        };
        ds.drop_unseen_users()?;
        ds.validate()?;
        Ok(ds)
    }

    /// Remove val/test pairs of users with no training signal (no user-item
    /// interaction and no training membership); such users cannot be ranked
    /// meaningfully and would leak otherwise-unseen ids into evaluation.
    fn drop_unseen_users(&mut self) -> Result<()> {
        let keep = |ds: &Self, m: &SparseMatrix| -> Result<(SparseMatrix, usize)> {
            let mut kept = Vec::with_capacity(m.nnz());
            let mut dropped = 0usize;
            for (u, g, _) in m.iter() {
                if ds.x.row_nnz(u) > 0 || ds.z_train.row_nnz(u) > 0 {
                    kept.push((u, g));
                } else {
                    dropped += 1;
                }
            }
            Ok((
                SparseMatrix::binary_from_pairs(ds.n_users, ds.n_groups, kept)?,
                dropped,
            ))
        };
        let (val, dropped_val) = keep(self, &self.z_val)?;
        let (test, dropped_test) = keep(self, &self.z_test)?;
        if dropped_val + dropped_test > 0 {
            log::warn!(
                "dropped {} val and {} test pairs of users with no training signal",
                dropped_val,
                dropped_test
            );
        }
        self.z_val = val;
        self.z_test = test;
        Ok(())
    }

    /// Structural invariants: shapes, binary values, pairwise-disjoint splits.
    pub fn validate(&self) -> Result<()> {
        for (name, m, rows, cols) in [
            ("x", &self.x, self.n_users, self.n_items),
            ("y", &self.y, self.n_groups, self.n_items),
            ("z_train", &self.z_train, self.n_users, self.n_groups),
            ("z_val", &self.z_val, self.n_users, self.n_groups),
            ("z_test", &self.z_test, self.n_users, self.n_groups),
        ] {
            m.validate()?;
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::InvalidDataset(format!("{name} has wrong shape")));
            }
            if m.iter().any(|(_, _, v)| v != 1.0) {
                return Err(Error::InvalidDataset(format!("{name} is not binary")));
            }
        }
        for u in 0..self.n_users {
            let (a, _) = self.z_train.row(u);
            let (b, _) = self.z_val.row(u);
            let (c, _) = self.z_test.row(u);
            for g in b {
                if a.binary_search(g).is_ok() || c.binary_search(g).is_ok() {
                    return Err(Error::InvalidDataset(format!(
                        "splits overlap at user {u} group {g}"
                    )));
                }
            }
            for g in c {
                if a.binary_search(g).is_ok() {
                    return Err(Error::InvalidDataset(format!(
                        "splits overlap at user {u} group {g}"
                    )));
                }
            }
        }
        if self.user_ids.len() != self.n_users
            || self.item_ids.len() != self.n_items
            || self.group_ids.len() != self.n_groups
        {
            return Err(Error::InvalidDataset("id table length mismatch".into()));
        }
        Ok(())
    }

    /// Groups of user `u` across all three splits, sorted.
    pub fn all_memberships(&self, u: usize) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        out.extend_from_slice(self.z_train.row(u).0);
        out.extend_from_slice(self.z_val.row(u).0);
        out.extend_from_slice(self.z_test.row(u).0);
        out.sort_unstable();
        out
    }

    pub fn total_memberships(&self) -> usize {
        self.z_train.nnz() + self.z_val.nnz() + self.z_test.nnz()
    }
}

/// Shuffle and split user–group pairs 7:1:2. Sizes are
/// `n_val = ⌊0.1·n⌋`, `n_test = ⌊0.2·n⌋`, and train takes the rest, so
/// rounding remainders always favor train.
pub fn split_pairs(
    mut pairs: Vec<(usize, usize)>,
    seed: u64,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let n = pairs.len();
    let n_val = n / 10;
    let n_test = n / 5;
    let n_train = n - n_val - n_test;
    let test = pairs.split_off(n_train + n_val);
    let val = pairs.split_off(n_train);
    (pairs, val, test)
}

/// Cold-start cap: keep at most `k` training memberships per user
/// (a uniform random subset), leaving val/test untouched.
pub fn cap_memberships<R: Rng>(
    ds: &InteractionDataset,
    k: usize,
    rng: &mut R,
) -> Result<InteractionDataset> {
    if k < 1 {
        return Err(Error::Usage(format!("membership cap k must be >= 1, got {k}")));
    }
    let mut kept: Vec<(usize, usize)> = Vec::with_capacity(ds.z_train.nnz());
    for u in 0..ds.n_users {
        let (groups, _) = ds.z_train.row(u);
        if groups.len() <= k {
            kept.extend(groups.iter().map(|&g| (u, g)));
        } else {
            let chosen = rand::seq::index::sample(rng, groups.len(), k);
            let mut sel: Vec<usize> = chosen.iter().map(|i| groups[i]).collect();
            sel.sort_unstable();
            kept.extend(sel.into_iter().map(|g| (u, g)));
        }
    }
    let mut out = ds.clone();
    out.z_train = SparseMatrix::binary_from_pairs(ds.n_users, ds.n_groups, kept)?;
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy(n_pairs: usize, seed: u64) -> InteractionDataset {
        // one user per pair to keep memberships simple
        let user_group: Vec<(usize, usize)> = (0..n_pairs).map(|i| (i, i % 4)).collect();
        let user_item: Vec<(usize, usize)> = (0..n_pairs).map(|i| (i, 0)).collect();
        InteractionDataset::from_internal(
            n_pairs.max(1),
            1,
            4,
            user_item,
            vec![(0, 0)],
            user_group,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn lone_pair_lands_in_train() {
        let ds = InteractionDataset::from_internal(
            1,
            1,
            1,
            vec![(0, 0)],
            vec![(0, 0)],
            vec![(0, 0)],
            0,
        )
        .unwrap();
        assert_eq!(ds.z_train.nnz(), 1);
        assert_eq!(ds.z_val.nnz(), 0);
        assert_eq!(ds.z_test.nnz(), 0);
    }

    #[test]
    fn ten_pairs_split_seven_one_two() {
        let ds = toy(10, 42);
        assert_eq!(ds.z_train.nnz(), 7);
        assert_eq!(ds.z_val.nnz(), 1);
        assert_eq!(ds.z_test.nnz(), 2);
    }

    #[test]
    fn splits_are_disjoint_and_partition() {
        for seed in 0..5 {
            let ds = toy(23, seed);
            ds.validate().unwrap();
            assert_eq!(ds.total_memberships(), 23);
        }
    }

    #[test]
    fn split_deterministic_in_seed() {
        let a = toy(23, 9);
        let b = toy(23, 9);
        assert_eq!(a.z_train, b.z_train);
        assert_eq!(a.z_val, b.z_val);
        assert_eq!(a.z_test, b.z_test);
    }

    #[test]
    fn unseen_users_dropped_from_val_and_test() {
        // user 1 has no X row and no training membership: its pairs must go.
        // Use a fixed split by constructing via from_internal_split.
        let ds = InteractionDataset::from_internal_split(
            2,
            1,
            2,
            vec![(0, 0)],
            vec![(0, 0)],
            vec![(0, 0)],
            vec![(1, 1)],
            vec![],
        )
        .unwrap();
        assert_eq!(ds.z_val.nnz(), 0);
    }

    #[test]
    fn empty_relation_rejected() {
        let err = InteractionDataset::from_internal(1, 1, 1, vec![], vec![(0, 0)], vec![(0, 0)], 0)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidDataset(_)));
    }

    #[test]
    fn cap_enforces_upper_bound() {
        let user_group: Vec<(usize, usize)> = (0..5).map(|g| (0, g)).collect();
        let ds = InteractionDataset::from_internal(
            1,
            1,
            5,
            vec![(0, 0)],
            vec![(0, 0)],
            user_group,
            1,
        )
        .unwrap();
        let before = ds.z_train.row(0).0.to_vec();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let capped = cap_memberships(&ds, 3, &mut rng).unwrap();
        let after = capped.z_train.row(0).0.to_vec();
        if before.len() > 3 {
            assert_eq!(after.len(), 3);
        }
        // survivors were originally present
        for g in &after {
            assert!(before.contains(g));
        }
        // val/test untouched
        assert_eq!(capped.z_val, ds.z_val);
        assert_eq!(capped.z_test, ds.z_test);
    }

    #[test]
    fn cap_noop_when_k_large() {
        let ds = toy(10, 1);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let capped = cap_memberships(&ds, 100, &mut rng).unwrap();
        assert_eq!(capped.z_train, ds.z_train);
    }

    #[test]
    fn cap_rejects_zero() {
        let ds = toy(10, 1);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        assert!(matches!(
            cap_memberships(&ds, 0, &mut rng),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn cap_k1_leaves_at_most_one() {
        let user_group: Vec<(usize, usize)> = (0..4).flat_map(|u| (0..3).map(move |g| (u, g))).collect();
        let user_item: Vec<(usize, usize)> = (0..4).map(|u| (u, 0)).collect();
        let ds =
            InteractionDataset::from_internal(4, 1, 3, user_item, vec![(0, 0)], user_group, 3)
                .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let capped = cap_memberships(&ds, 1, &mut rng).unwrap();
        for u in 0..4 {
            assert!(capped.z_train.row_nnz(u) <= 1);
        }
    }
}

//! Edge-list files and the dataset manifest.
//!
//! Edge files hold one `left_id right_id` pair per line in ASCII decimal,
//! whitespace-separated; lines starting with `#` and blank lines are
//! ignored. The manifest is a JSON document naming the three raw relation
//! files, the materialized split files, the entity counts and the split
//! seed. Relative paths are resolved against the manifest's directory.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{InteractionDataset, SyntheticLabels};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub user_item: String,
    pub group_item: String,
    pub z_train: String,
    pub z_val: String,
    pub z_test: String,
    pub n_users: usize,
    pub n_items: usize,
    pub n_groups: usize,
    pub split_seed: u64,
}

/// Parse an edge-list file.
pub fn read_edge_file(path: &Path) -> Result<Vec<(u64, u64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let parse = |tok: Option<&str>, lineno: usize| -> Result<u64> {
            let tok = tok.ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: "expected two ids".into(),
            })?;
            tok.parse::<u64>().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: format!("not a non-negative integer: {tok:?}"),
            })
        };
        let left = parse(tokens.next(), lineno)?;
        let right = parse(tokens.next(), lineno)?;
        if tokens.next().is_some() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: "more than two fields".into(),
            });
        }
        pairs.push((left, right));
    }
    Ok(pairs)
}

/// Write pairs sorted, one per line. Output is byte-deterministic.
pub fn write_edge_file(path: &Path, pairs: &[(u64, u64)]) -> Result<()> {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    let mut buf = String::with_capacity(sorted.len() * 12);
    for (l, r) in sorted {
        buf.push_str(&format!("{l} {r}\n"));
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Sorted-dedup raw ids -> internal index lookup.
struct IdMap {
    ids: Vec<u64>,
}

impl IdMap {
    fn build(raw: impl IntoIterator<Item = u64>) -> Self {
        let mut ids: Vec<u64> = raw.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        IdMap { ids }
    }

    fn index(&self, raw: u64) -> usize {
        self.ids.binary_search(&raw).expect("id built from same set")
    }

    fn len(&self) -> usize {
        self.ids.len()
    }
}

fn build_id_maps(
    user_item: &[(u64, u64)],
    group_item: &[(u64, u64)],
    user_group: &[(u64, u64)],
) -> (IdMap, IdMap, IdMap) {
    let users = IdMap::build(
        user_item
            .iter()
            .map(|&(u, _)| u)
            .chain(user_group.iter().map(|&(u, _)| u)),
    );
    let items = IdMap::build(
        user_item
            .iter()
            .map(|&(_, v)| v)
            .chain(group_item.iter().map(|&(_, v)| v)),
    );
    let groups = IdMap::build(
        group_item
            .iter()
            .map(|&(g, _)| g)
            .chain(user_group.iter().map(|&(_, g)| g)),
    );
    (users, items, groups)
}

/// Load the three relations, reindex raw ids to contiguous 0-based internal
/// ids (sorted raw order), and split the user–group pairs 7:1:2 with `seed`.
pub fn load_dataset(
    user_item_path: &Path,
    group_item_path: &Path,
    user_group_path: &Path,
    seed: u64,
) -> Result<InteractionDataset> {
    let ui = read_edge_file(user_item_path)?;
    let gi = read_edge_file(group_item_path)?;
    let ug = read_edge_file(user_group_path)?;
    let (users, items, groups) = build_id_maps(&ui, &gi, &ug);
    let x = ui
        .iter()
        .map(|&(u, v)| (users.index(u), items.index(v)))
        .collect();
    let y = gi
        .iter()
        .map(|&(g, v)| (groups.index(g), items.index(v)))
        .collect();
    let z = ug
        .iter()
        .map(|&(u, g)| (users.index(u), groups.index(g)))
        .collect();
    let mut ds = InteractionDataset::from_internal(
        users.len(),
        items.len(),
        groups.len(),
        x,
        y,
        z,
        seed,
    )?;
    ds.user_ids = users.ids;
    ds.item_ids = items.ids;
    ds.group_ids = groups.ids;
    Ok(ds)
}

/// Split the dataset, write the three split files plus the manifest into
/// `out_dir`, and return the manifest path.
pub fn prepare_dataset(
    user_item_path: &Path,
    group_item_path: &Path,
    user_group_path: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<(DatasetManifest, InteractionDataset, PathBuf)> {
    let ds = load_dataset(user_item_path, group_item_path, user_group_path, seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let raw = |m: &crate::tensor::SparseMatrix, ds: &InteractionDataset| -> Vec<(u64, u64)> {
        m.iter()
            .map(|(u, g, _)| (ds.user_ids[u], ds.group_ids[g]))
            .collect()
    };
    write_edge_file(&out_dir.join("z_train.txt"), &raw(&ds.z_train, &ds))?;
    write_edge_file(&out_dir.join("z_val.txt"), &raw(&ds.z_val, &ds))?;
    write_edge_file(&out_dir.join("z_test.txt"), &raw(&ds.z_test, &ds))?;

    let abs = |p: &Path| -> Result<String> {
        fs::canonicalize(p)
            .map(|q| q.display().to_string())
            .map_err(|e| Error::io(p.display().to_string(), e))
    };
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        user_item: abs(user_item_path)?,
        group_item: abs(group_item_path)?,
        z_train: "z_train.txt".into(),
        z_val: "z_val.txt".into(),
        z_test: "z_test.txt".into(),
        n_users: ds.n_users,
        n_items: ds.n_items,
        n_groups: ds.n_groups,
        split_seed: seed,
    };
    let manifest_path = out_dir.join("manifest.json");
    write_manifest(&manifest_path, &manifest)?;
    Ok((manifest, ds, manifest_path))
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(json.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad manifest: {e}")))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Config(format!(
            "unsupported manifest version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Rebuild the dataset exactly as prepared: raw relations from the original
/// files, the split from the materialized split files, ids from the same
/// sorted-raw-id rule. Counts are validated against the manifest.
pub fn load_from_manifest(manifest_path: &Path) -> Result<InteractionDataset> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let ui = read_edge_file(&resolve(&base, &manifest.user_item))?;
    let gi = read_edge_file(&resolve(&base, &manifest.group_item))?;
    let zt = read_edge_file(&resolve(&base, &manifest.z_train))?;
    let zv = read_edge_file(&resolve(&base, &manifest.z_val))?;
    let zs = read_edge_file(&resolve(&base, &manifest.z_test))?;

    let all_ug: Vec<(u64, u64)> = zt.iter().chain(&zv).chain(&zs).copied().collect();
    let (users, items, groups) = build_id_maps(&ui, &gi, &all_ug);
    if users.len() != manifest.n_users
        || items.len() != manifest.n_items
        || groups.len() != manifest.n_groups
    {
        return Err(Error::InvalidDataset(format!(
            "entity counts {}x{}x{} do not match manifest {}x{}x{}",
            users.len(),
            items.len(),
            groups.len(),
            manifest.n_users,
            manifest.n_items,
            manifest.n_groups
        )));
    }
    let map_ug = |pairs: &[(u64, u64)]| -> Vec<(usize, usize)> {
        pairs
            .iter()
            .map(|&(u, g)| (users.index(u), groups.index(g)))
            .collect()
    };
    let mut ds = InteractionDataset::from_internal_split(
        users.len(),
        items.len(),
        groups.len(),
        ui.iter()
            .map(|&(u, v)| (users.index(u), items.index(v)))
            .collect(),
        gi.iter()
            .map(|&(g, v)| (groups.index(g), items.index(v)))
            .collect(),
        map_ug(&zt),
        map_ug(&zv),
        map_ug(&zs),
    )?;
    ds.user_ids = users.ids;
    ds.item_ids = items.ids;
    ds.group_ids = groups.ids;
    Ok(ds)
}

/// Write a generated dataset as ordinary edge-list files plus manifest and
/// ground-truth topic labels. Returns the manifest path.
pub fn write_synthetic(
    ds: &InteractionDataset,
    labels: &SyntheticLabels,
    seed: u64,
    out_dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let pairs = |m: &crate::tensor::SparseMatrix| -> Vec<(u64, u64)> {
        m.iter().map(|(l, r, _)| (l as u64, r as u64)).collect()
    };
    write_edge_file(&out_dir.join("user_item.txt"), &pairs(&ds.x))?;
    write_edge_file(&out_dir.join("group_item.txt"), &pairs(&ds.y))?;
    write_edge_file(&out_dir.join("z_train.txt"), &pairs(&ds.z_train))?;
    write_edge_file(&out_dir.join("z_val.txt"), &pairs(&ds.z_val))?;
    write_edge_file(&out_dir.join("z_test.txt"), &pairs(&ds.z_test))?;

    let labels_path = out_dir.join("topics.json");
    let json = serde_json::to_string_pretty(labels)
        .map_err(|e| Error::Config(format!("labels serialization: {e}")))?;
    fs::write(&labels_path, json + "\n")
        .map_err(|e| Error::io(labels_path.display().to_string(), e))?;

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        user_item: "user_item.txt".into(),
        group_item: "group_item.txt".into(),
        z_train: "z_train.txt".into(),
        z_val: "z_val.txt".into(),
        z_test: "z_test.txt".into(),
        n_users: ds.n_users,
        n_items: ds.n_items,
        n_groups: ds.n_groups,
        split_seed: seed,
    };
    let manifest_path = out_dir.join("manifest.json");
    write_manifest(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(dir: &Path, name: &str, content: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    #[test]
    fn parse_skips_comments_and_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(dir.path(), "e.txt", "# header\n1 2\n\n  3\t4\n");
        let pairs = read_edge_file(&p).unwrap();
        assert_eq!(pairs, vec![(1, 2), (3, 4)]);
    }

    #[test]
    fn parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(dir.path(), "e.txt", "1 2\n3 x\n");
        let err = read_edge_file(&p).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_extra_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(dir.path(), "e.txt", "1 2 3\n");
        assert!(matches!(read_edge_file(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_file_error_names_path() {
        let err = read_edge_file(Path::new("/nonexistent/edges.txt")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/edges.txt"));
    }

    #[test]
    fn reindexing_is_a_bijection() {
        let dir = tempfile::tempdir().unwrap();
        // raw ids deliberately non-contiguous
        let ui = write_tmp(dir.path(), "ui.txt", "100 7\n5 7\n100 9\n");
        let gi = write_tmp(dir.path(), "gi.txt", "50 7\n60 9\n");
        let ug = write_tmp(dir.path(), "ug.txt", "100 50\n5 60\n");
        let ds = load_dataset(&ui, &gi, &ug, 1).unwrap();
        assert_eq!(ds.n_users, 2);
        assert_eq!(ds.n_items, 2);
        assert_eq!(ds.n_groups, 2);
        assert_eq!(ds.user_ids, vec![5, 100]);
        assert_eq!(ds.item_ids, vec![7, 9]);
        assert_eq!(ds.group_ids, vec![50, 60]);
        // round trip: internal -> raw -> internal
        for (i, &raw) in ds.user_ids.iter().enumerate() {
            assert_eq!(ds.user_ids.binary_search(&raw).unwrap(), i);
        }
    }

    #[test]
    fn prepare_then_load_reproduces_split() {
        let dir = tempfile::tempdir().unwrap();
        let mut ug = String::new();
        let mut ui = String::new();
        for u in 0..10 {
            for g in 0..4 {
                ug.push_str(&format!("{u} {g}\n"));
            }
            ui.push_str(&format!("{u} {} \n", u % 3));
        }
        let ui = write_tmp(dir.path(), "ui.txt", &ui);
        let gi = write_tmp(dir.path(), "gi.txt", "0 0\n1 1\n2 2\n3 0\n");
        let ug = write_tmp(dir.path(), "ug.txt", &ug);
        let out = dir.path().join("prepared");
        let (manifest, ds, manifest_path) = prepare_dataset(&ui, &gi, &ug, 77, &out).unwrap();
        assert_eq!(manifest.n_users, 10);
        let loaded = load_from_manifest(&manifest_path).unwrap();
        assert_eq!(loaded.z_train, ds.z_train);
        assert_eq!(loaded.z_val, ds.z_val);
        assert_eq!(loaded.z_test, ds.z_test);
        assert_eq!(loaded.x, ds.x);
        assert_eq!(loaded.y, ds.y);
    }

    #[test]
    fn prepare_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut ug = String::new();
        for u in 0..10 {
            for g in 0..3 {
                ug.push_str(&format!("{u} {g}\n"));
            }
        }
        let ui = write_tmp(dir.path(), "ui.txt", "0 0\n1 1\n2 0\n3 1\n4 0\n5 1\n6 0\n7 1\n8 0\n9 1\n");
        let gi = write_tmp(dir.path(), "gi.txt", "0 0\n1 1\n2 0\n");
        let ug = write_tmp(dir.path(), "ug.txt", &ug);
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        prepare_dataset(&ui, &gi, &ug, 5, &out_a).unwrap();
        prepare_dataset(&ui, &gi, &ug, 5, &out_b).unwrap();
        for f in ["z_train.txt", "z_val.txt", "z_test.txt"] {
            let a = fs::read(out_a.join(f)).unwrap();
            let b = fs::read(out_b.join(f)).unwrap();
            assert_eq!(a, b, "{f} differs between identical runs");
        }
    }
}

//! Command implementations. Each command prints its results to stdout and
//! writes a reproducibility block (config hash, seed, build id) alongside
//! any file outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use gi_core::checkpoint::{load_checkpoint, save_checkpoint};
use gi_core::data::{
    cap_memberships, generate_synthetic, load_from_manifest, prepare_dataset, write_edge_file,
    write_synthetic, InteractionDataset, SyntheticSpec,
};
use gi_core::eval::{evaluate, MetricsReport, Split};
use gi_core::model::ModelGraphs;
use gi_core::selfcheck;
use gi_core::train::{history_csv, train_with_graphs, TrainOutcome};
use gi_core::{Error, Result};

use crate::config::{AblationConfig, RunConfig};
use crate::report::{table, write_run_info};

/// Salt for the cold-start cap RNG so capping draws are decoupled from the
/// split shuffle that already consumed the base seed.
const COLDSTART_SALT: u64 = 0xC01D_57A7;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn dataset_stats_table(ds: &InteractionDataset) -> String {
    table(
        &[
            "users",
            "items",
            "groups",
            "user-group",
            "user-item",
            "group-item",
        ],
        &[vec![
            ds.n_users.to_string(),
            ds.n_items.to_string(),
            ds.n_groups.to_string(),
            ds.total_memberships().to_string(),
            ds.x.nnz().to_string(),
            ds.y.nnz().to_string(),
        ]],
    )
}

#[derive(Serialize)]
struct PrepareStamp<'a> {
    user_item: &'a str,
    group_item: &'a str,
    user_group: &'a str,
    seed: u64,
    coldstart_k: Option<usize>,
}

/// Split the raw relations, write split files plus manifest, print the
/// dataset statistics.
pub fn cmd_prepare(
    user_item: &Path,
    group_item: &Path,
    user_group: &Path,
    seed: u64,
    coldstart_k: Option<usize>,
    out: &Path,
) -> Result<()> {
    if let Some(k) = coldstart_k {
        if k < 1 {
            return Err(Error::Usage(format!("--coldstart-k must be >= 1, got {k}")));
        }
    }
    let (_, mut ds, manifest_path) =
        prepare_dataset(user_item, group_item, user_group, seed, out)?;
    if let Some(k) = coldstart_k {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ COLDSTART_SALT);
        ds = cap_memberships(&ds, k, &mut rng)?;
        // overwrite the training split with the capped one
        let raw: Vec<(u64, u64)> = ds
            .z_train
            .iter()
            .map(|(u, g, _)| (ds.user_ids[u], ds.group_ids[g]))
            .collect();
        write_edge_file(&out.join("z_train.txt"), &raw)?;
    }
    let stamp = serde_json::to_string_pretty(&PrepareStamp {
        user_item: &user_item.display().to_string(),
        group_item: &group_item.display().to_string(),
        user_group: &user_group.display().to_string(),
        seed,
        coldstart_k,
    })
    .expect("stamp serializes");
    write_run_info(out, &stamp, seed)?;
    println!("{}", dataset_stats_table(&ds));
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

/// Load the manifest named by the config and apply the cold-start cap if
/// requested. Training and evaluation share this path so they always see
/// the same data.
pub fn load_config_dataset(cfg: &RunConfig) -> Result<InteractionDataset> {
    let mut ds = load_from_manifest(Path::new(&cfg.manifest))?;
    if let Some(k) = cfg.coldstart_k {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ COLDSTART_SALT);
        ds = cap_memberships(&ds, k, &mut rng)?;
    }
    Ok(ds)
}

pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub test_report: Option<MetricsReport>,
    pub checkpoint_path: PathBuf,
}

/// Full training run: train, evaluate on the test split, and write
/// checkpoint, history CSV, metrics JSON and the reproducibility block.
pub fn run_training(cfg: &RunConfig, out: &Path) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let ds = load_config_dataset(cfg)?;
    ensure_dir(out)?;
    if cfg.coldstart_k.is_some() {
        // capped training split, for inspection and downstream tooling
        let raw: Vec<(u64, u64)> = ds
            .z_train
            .iter()
            .map(|(u, g, _)| (ds.user_ids[u], ds.group_ids[g]))
            .collect();
        write_edge_file(&out.join("z_train_capped.txt"), &raw)?;
    }
    let tcfg = cfg.to_train_config();
    let graphs = ModelGraphs::build(&ds)?;
    let outcome = train_with_graphs(&ds, &graphs, &tcfg)?;

    let test_report = if ds.z_test.nnz() > 0 {
        Some(evaluate(
            &outcome.params,
            &graphs,
            &ds,
            &tcfg.forward_opts(),
            !tcfg.ablation.no_group_level,
            !tcfg.ablation.no_item_level,
            Split::Test,
            &tcfg.eval_ks,
            outcome.best_epoch.unwrap_or_else(|| outcome.history.len().saturating_sub(1)),
        )?)
    } else {
        None
    };

    let config_json = cfg.canonical_json();
    let checkpoint_path = out.join("checkpoint.bin");
    save_checkpoint(&checkpoint_path, &outcome.params, &config_json)?;
    write_text(&out.join("history.csv"), &history_csv(&outcome.history, &tcfg.eval_ks))?;
    if let Some(report) = &test_report {
        let json = serde_json::to_string_pretty(report)
            .map_err(|e| Error::Config(format!("metrics serialization: {e}")))?;
        write_text(&out.join("metrics.json"), &(json + "\n"))?;
    }
    write_run_info(out, &config_json, cfg.seed)?;
    Ok(TrainArtifacts {
        outcome,
        test_report,
        checkpoint_path,
    })
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let artifacts = run_training(cfg, out)?;
    if let Some(best) = artifacts.outcome.best_epoch {
        println!("best validation epoch: {best}");
    }
    match &artifacts.test_report {
        Some(report) => {
            println!("{}", report.table());
        }
        None => println!("test split empty; no test metrics"),
    }
    println!("checkpoint: {}", artifacts.checkpoint_path.display());
    Ok(())
}

/// Evaluate an existing checkpoint on one split. The dataset comes from the
/// manifest named inside the checkpoint's embedded config.
pub fn cmd_eval(checkpoint: &Path, split: Split, ks: Option<Vec<usize>>) -> Result<MetricsReport> {
    let (params, config_json) = load_checkpoint(checkpoint)?;
    let cfg: RunConfig = serde_json::from_str(&config_json)
        .map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
    let ds = load_config_dataset(&cfg)?;
    let graphs = ModelGraphs::build(&ds)?;
    let tcfg = cfg.to_train_config();
    let ks = ks.unwrap_or_else(|| tcfg.eval_ks.clone());
    let report = evaluate(
        &params,
        &graphs,
        &ds,
        &tcfg.forward_opts(),
        !tcfg.ablation.no_group_level,
        !tcfg.ablation.no_item_level,
        split,
        &ks,
        0,
    )?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("metrics serialization: {e}")))?;
    println!("{json}");
    println!("{}", report.table());
    println!("{}", crate::report::run_info_json(&config_json, cfg.seed).trim_end());
    Ok(report)
}

#[derive(Serialize)]
struct SynthStamp {
    n_users: usize,
    n_items: usize,
    n_groups: usize,
    n_topics: usize,
    density: f64,
    seed: u64,
}

pub fn cmd_synth(spec: &SyntheticSpec, out: &Path) -> Result<()> {
    let (ds, labels) = generate_synthetic(spec)?;
    let manifest_path = write_synthetic(&ds, &labels, spec.seed, out)?;
    let stamp = serde_json::to_string_pretty(&SynthStamp {
        n_users: spec.n_users,
        n_items: spec.n_items,
        n_groups: spec.n_groups,
        n_topics: spec.n_topics,
        density: spec.density,
        seed: spec.seed,
    })
    .expect("stamp serializes");
    write_run_info(out, &stamp, spec.seed)?;
    println!("{}", dataset_stats_table(&ds));
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

/// The ablation ladder: variant id, description, and the flag edit it
/// applies on top of the base configuration.
pub fn ablation_variants() -> Vec<(&'static str, &'static str, fn(&mut AblationConfig))> {
    vec![
        ("A", "w/o group-level interests", |a| a.no_group_level = true),
        ("B", "w/o item-level interests", |a| a.no_item_level = true),
        ("C", "w/o enhancement", |a| {
            a.no_item_enhancement = true;
            a.no_context_enhancement = true;
        }),
        ("D", "w/o item enhancement", |a| a.no_item_enhancement = true),
        ("E", "w/o contextual enhancement", |a| {
            a.no_context_enhancement = true
        }),
        ("F", "w/o contrastive learning", |a| a.no_ssl = true),
        ("G", "w/o vanilla contrastive loss", |a| a.no_ssl1 = true),
        ("H", "w/o filtered contrastive loss", |a| a.no_ssl2 = true),
        ("I", "constant beta 0.5", |a| a.const_beta = Some(0.5)),
    ]
}

pub struct VariantResult {
    pub id: String,
    pub label: String,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
    pub error: Option<String>,
}

/// Run the full model plus variants A–I with a shared seed and split;
/// single-run failures are recorded and the rest continue.
pub fn run_ablation(base: &RunConfig, out: &Path) -> Result<Vec<VariantResult>> {
    base.validate()?;
    ensure_dir(out)?;
    let k = if base.eval_ks.contains(&10) { 10 } else { base.eval_ks[0] };
    let mut results = Vec::new();
    let mut run_one = |id: &str, label: &str, cfg: &RunConfig| {
        let sub = out.join(id);
        match run_training(cfg, &sub) {
            Ok(artifacts) => {
                let (recall, ndcg) = match &artifacts.test_report {
                    Some(r) => (r.recall_at(k), r.ndcg_at(k)),
                    None => (None, None),
                };
                results.push(VariantResult {
                    id: id.into(),
                    label: label.into(),
                    recall,
                    ndcg,
                    error: None,
                });
            }
            Err(e) => results.push(VariantResult {
                id: id.into(),
                label: label.into(),
                recall: None,
                ndcg: None,
                error: Some(e.to_string()),
            }),
        }
    };
    run_one("full", "full model", base);
    for (id, label, edit) in ablation_variants() {
        let mut cfg = base.clone();
        edit(&mut cfg.ablation);
        run_one(id, label, &cfg);
    }
    write_run_info(out, &base.canonical_json(), base.seed)?;
    Ok(results)
}

pub fn variant_table(results: &[VariantResult], k: usize) -> String {
    let fmt = |v: Option<f64>, err: &Option<String>| match (v, err) {
        (_, Some(e)) => format!("failed: {e}"),
        (Some(x), None) => format!("{x:.4}"),
        (None, None) => "-".into(),
    };
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.id.clone(),
                r.label.clone(),
                fmt(r.recall, &r.error),
                fmt(r.ndcg, &r.error),
            ]
        })
        .collect();
    table(
        &["variant", "description", &format!("R@{k}"), &format!("N@{k}")],
        &rows,
    )
}

pub fn cmd_ablate(base: &RunConfig, out: &Path) -> Result<()> {
    let results = run_ablation(base, out)?;
    let k = if base.eval_ks.contains(&10) { 10 } else { base.eval_ks[0] };
    let rendered = variant_table(&results, k);
    let mut csv = format!("variant,description,recall@{k},ndcg@{k},error\n");
    for r in &results {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id,
            r.label,
            r.recall.map(|v| v.to_string()).unwrap_or_default(),
            r.ndcg.map(|v| v.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default()
        ));
    }
    write_text(&out.join("ablate.csv"), &csv)?;
    println!("{rendered}");
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Gamma,
    AnnealEpoch,
    Lambda1,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(SweepParam::Gamma),
            "E" | "e_anneal" => Ok(SweepParam::AnnealEpoch),
            "lambda1" => Ok(SweepParam::Lambda1),
            other => Err(Error::Usage(format!(
                "unknown sweep parameter {other:?}; expected gamma, E or lambda1"
            ))),
        }
    }
}

impl SweepParam {
    pub fn apply(&self, cfg: &mut RunConfig, value: f64) {
        match self {
            SweepParam::Gamma => cfg.gamma = value,
            SweepParam::AnnealEpoch => cfg.loss.e_anneal = value,
            SweepParam::Lambda1 => cfg.loss.lambda1 = value,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::AnnealEpoch => "E",
            SweepParam::Lambda1 => "lambda1",
        }
    }
}

pub struct SweepRow {
    pub value: f64,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
    pub error: Option<String>,
}

/// One training run per value with a shared seed.
pub fn run_sweep(base: &RunConfig, param: SweepParam, values: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Usage("sweep needs at least one value".into()));
    }
    base.validate()?;
    ensure_dir(out)?;
    let k = if base.eval_ks.contains(&10) { 10 } else { base.eval_ks[0] };
    let mut rows = Vec::new();
    for (i, &value) in values.iter().enumerate() {
        let mut cfg = base.clone();
        param.apply(&mut cfg, value);
        let sub = out.join(format!("{}_{i}", param.name()));
        match run_training(&cfg, &sub) {
            Ok(artifacts) => {
                let (recall, ndcg) = match &artifacts.test_report {
                    Some(r) => (r.recall_at(k), r.ndcg_at(k)),
                    None => (None, None),
                };
                rows.push(SweepRow {
                    value,
                    recall,
                    ndcg,
                    error: None,
                });
            }
            Err(e) => rows.push(SweepRow {
                value,
                recall: None,
                ndcg: None,
                error: Some(e.to_string()),
            }),
        }
    }
    write_run_info(out, &base.canonical_json(), base.seed)?;
    Ok(rows)
}

pub fn cmd_sweep(base: &RunConfig, param: SweepParam, values: &[f64], out: &Path) -> Result<()> {
    let rows = run_sweep(base, param, values, out)?;
    let k = if base.eval_ks.contains(&10) { 10 } else { base.eval_ks[0] };
    let fmt = |v: Option<f64>, err: &Option<String>| match (v, err) {
        (_, Some(e)) => format!("failed: {e}"),
        (Some(x), None) => format!("{x:.4}"),
        (None, None) => "-".into(),
    };
    let table_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.value.to_string(),
                fmt(r.recall, &r.error),
                fmt(r.ndcg, &r.error),
            ]
        })
        .collect();
    let rendered = table(
        &[param.name(), &format!("R@{k}"), &format!("N@{k}")],
        &table_rows,
    );
    let mut csv = format!("{},recall@{k},ndcg@{k},error\n", param.name());
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.value,
            r.recall.map(|v| v.to_string()).unwrap_or_default(),
            r.ndcg.map(|v| v.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default()
        ));
    }
    write_text(&out.join("sweep.csv"), &csv)?;
    println!("{rendered}");
    Ok(())
}

/// Run the verification battery; returns whether everything passed.
pub fn cmd_selfcheck(seed: u64) -> bool {
    let outcomes = selfcheck::run_all(seed);
    for o in &outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag}  {} — {}", o.name, o.detail);
    }
    let passed = selfcheck::all_passed(&outcomes);
    let n_pass = outcomes.iter().filter(|o| o.passed).count();
    println!("{n_pass}/{} checks passed", outcomes.len());
    passed
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_c_is_union_of_d_and_e() {
        let variants = ablation_variants();
        let apply = |id: &str| -> AblationConfig {
            let mut a = AblationConfig::default();
            let (_, _, edit) = variants.iter().find(|(v, _, _)| *v == id).unwrap();
            edit(&mut a);
            a
        };
        let c = apply("C");
        let mut de = AblationConfig::default();
        let (_, _, edit_d) = variants.iter().find(|(v, _, _)| *v == "D").unwrap();
        let (_, _, edit_e) = variants.iter().find(|(v, _, _)| *v == "E").unwrap();
        edit_d(&mut de);
        edit_e(&mut de);
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            serde_json::to_string(&de).unwrap()
        );
    }

    #[test]
    fn variants_add_no_parameters() {
        // pure flag edits: every variant config round-trips through the same
        // schema as the full model
        for (_, _, edit) in ablation_variants() {
            let mut a = AblationConfig::default();
            edit(&mut a);
            let json = serde_json::to_string(&a).unwrap();
            let back: AblationConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(json, serde_json::to_string(&back).unwrap());
        }
    }

    #[test]
    fn sweep_param_parsing() {
        assert_eq!("gamma".parse::<SweepParam>().unwrap(), SweepParam::Gamma);
        assert_eq!("E".parse::<SweepParam>().unwrap(), SweepParam::AnnealEpoch);
        assert_eq!(
            "lambda1".parse::<SweepParam>().unwrap(),
            SweepParam::Lambda1
        );
        assert!("tau".parse::<SweepParam>().is_err());
    }
}

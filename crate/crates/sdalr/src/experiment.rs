//! Experiment drivers: task matrices, the ablation ladder, hyperparameter
//! sweeps, embedding export, and run-directory bookkeeping.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::config::{DatasetKind, RunConfig, SweepAxis};
use crate::dataset::synth::synth_benchmark;
use crate::dataset::{jnu, pu, DomainDataset, TransferTask};
use crate::error::{Error, Result};
use crate::labeling::{assign_labels, PseudoLabelAssignment};
use crate::network::{extract_features_probs, Model};
use crate::report::{write_confusion_csv, ReportTable};
use crate::train::{adapt_target, evaluate, stream_rng, train_source, RunRecord};

/// Creates a run directory; an existing non-empty directory requires the
/// explicit overwrite flag.
pub fn create_run_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !overwrite {
            return Err(Error::Config(format!(
                "run directory {} already exists; pass --overwrite to reuse it",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the fully resolved config and its hash into the run directory.
pub fn persist_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    cfg.save(&dir.join("config.toml"))?;
    let hash_path = dir.join("config_hash.txt");
    std::fs::write(&hash_path, cfg.hash()).map_err(|e| Error::io(&hash_path, e))?;
    Ok(())
}

/// Loads one domain of the configured dataset.
pub fn load_domain(cfg: &RunConfig, domain: &str) -> Result<DomainDataset> {
    match cfg.experiment.dataset {
        DatasetKind::Pu => {
            let root = cfg
                .data
                .pu_root
                .as_ref()
                .ok_or_else(|| Error::Config("data.pu_root is not set".into()))?;
            pu::load_pu(root, domain, &cfg.data)
        }
        DatasetKind::Jnu => {
            let root = cfg
                .data
                .jnu_root
                .as_ref()
                .ok_or_else(|| Error::Config("data.jnu_root is not set".into()))?;
            jnu::load_jnu(root, domain, &cfg.data)
        }
        DatasetKind::Synth => {
            let (source, target) = synth_benchmark(&cfg.synth, &cfg.synth_shift, cfg.adapt.seed)?;
            match domain {
                "S" => Ok(source),
                "T" => Ok(target),
                other => Err(Error::Config(format!(
                    "unknown synthetic domain {other} (use S or T)"
                ))),
            }
        }
    }
}

/// Fails fast when the configured dataset root is missing, before any
/// training starts.
pub fn check_data_available(cfg: &RunConfig) -> Result<()> {
    match cfg.experiment.dataset {
        DatasetKind::Pu => match &cfg.data.pu_root {
            Some(root) if root.is_dir() => Ok(()),
            Some(root) => Err(Error::Data(format!(
                "PU root {} does not exist",
                root.display()
            ))),
            None => Err(Error::Config("data.pu_root is not set".into())),
        },
        DatasetKind::Jnu => match &cfg.data.jnu_root {
            Some(root) if root.is_dir() => Ok(()),
            Some(root) => Err(Error::Data(format!(
                "JNU root {} does not exist",
                root.display()
            ))),
            None => Err(Error::Config("data.jnu_root is not set".into())),
        },
        DatasetKind::Synth => Ok(()),
    }
}

/// Trains (or reuses) the source model for a domain. Checkpoints are cached
/// by the source-relevant config hash, so runs that only differ in
/// adaptation settings share them.
pub fn ensure_source_model(cfg: &RunConfig, domain: &str, cache_dir: &Path) -> Result<Model> {
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let path = cache_dir.join(format!("source_{domain}_{}.ckpt", &cfg.source_hash()[..16]));
    if path.is_file() {
        log::info!("reusing source checkpoint {}", path.display());
        return Model::load(&path);
    }
    let dataset = load_domain(cfg, domain)?;
    let (mut model, _) = train_source(&dataset, cfg, None)?;
    model.save(&path)?;
    Ok(model)
}

/// Splits a target into (adaptation pool, evaluation holdout) when the
/// transductive convention is disabled.
fn holdout_split(
    target: &DomainDataset,
    fraction: f64,
    seed: u64,
) -> (DomainDataset, Option<DomainDataset>) {
    if fraction <= 0.0 {
        return (target.clone(), None);
    }
    let mut indices: Vec<usize> = (0..target.len()).collect();
    let mut rng = stream_rng(seed, 30);
    indices.shuffle(&mut rng);
    let n_eval = ((target.len() as f64) * fraction).floor() as usize;
    let (eval_idx, pool_idx) = indices.split_at(n_eval);
    let pick = |idx: &[usize]| DomainDataset {
        samples: idx.iter().map(|&i| target.samples[i].clone()).collect(),
        class_count: target.class_count,
        domain_id: target.domain_id.clone(),
    };
    (pick(pool_idx), Some(pick(eval_idx)))
}

/// One adaptation run: source checkpoint, source-only baseline accuracy,
/// adaptation, final evaluation artifacts.
pub fn run_single_task(
    cfg: &RunConfig,
    task: &TransferTask,
    run_dir: &Path,
    sources_dir: &Path,
) -> Result<RunRecord> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    persist_config(cfg, run_dir)?;
    let source_model = ensure_source_model(cfg, &task.source, sources_dir)?;
    let target = load_domain(cfg, &task.target)?;
    let (pool, holdout) = holdout_split(&target, cfg.experiment.eval_holdout, cfg.adapt.seed);

    let source_accuracy = if target.is_fully_labeled() {
        let eval_set = holdout.as_ref().unwrap_or(&target);
        Some(evaluate(&source_model, eval_set, cfg.adapt.eval_batch)?.accuracy)
    } else {
        None
    };

    let (model, mut record) = adapt_target(&source_model, &pool, cfg, Some(run_dir))?;
    record.task = task.to_string();
    record.source_accuracy = source_accuracy;

    if let Some(holdout_set) = &holdout {
        let report = evaluate(&model, holdout_set, cfg.adapt.eval_batch)?;
        record.final_accuracy = report.accuracy;
        record.final_report = report;
    }

    if !record.final_report.confusion.is_empty() {
        write_confusion_csv(&record.final_report.confusion, &run_dir.join("confusion.csv"))?;
    }
    let record_path = run_dir.join("run_record.json");
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Training(format!("serialize record: {e}")))?;
    std::fs::write(&record_path, json).map_err(|e| Error::io(&record_path, e))?;
    Ok(record)
}

/// Index of every (row, task, seed) cell produced by a driver, so tables can
/// be recomputed from persisted records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub task_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub row: String,
    pub task: String,
    pub seed: u64,
    /// Sweep axis value, when applicable.
    pub value: Option<f64>,
    /// Record path relative to the output directory.
    pub record: PathBuf,
    pub accuracy: f64,
}

fn write_manifest(manifest: &RunManifest, dir: &Path) -> Result<()> {
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Training(format!("serialize manifest: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect()
}

/// Runs every (task, seed) cell for one configuration row and returns the
/// per-task mean accuracies in percent.
fn run_row(
    cfg: &RunConfig,
    row_name: &str,
    tasks: &[TransferTask],
    out_dir: &Path,
    value: Option<f64>,
    entries: &mut Vec<ManifestEntry>,
) -> Result<Vec<f64>> {
    let sources_dir = out_dir.join("sources");
    let mut per_task = vec![];
    for task in tasks {
        let mut acc_sum = 0.0;
        for &seed in &cfg.experiment.seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.adapt.seed = seed;
            let rel = PathBuf::from(format!(
                "tasks/{}_{}_s{seed}",
                sanitize(row_name),
                sanitize(&task.to_string())
            ));
            let run_dir = out_dir.join(&rel);
            let record = run_single_task(&run_cfg, task, &run_dir, &sources_dir)?;
            if !record.final_accuracy.is_finite() {
                return Err(Error::Training(format!(
                    "task {task} produced no evaluable accuracy"
                )));
            }
            acc_sum += record.final_accuracy;
            entries.push(ManifestEntry {
                row: row_name.to_string(),
                task: task.to_string(),
                seed,
                value,
                record: rel.join("run_record.json"),
                accuracy: record.final_accuracy,
            });
        }
        per_task.push(100.0 * acc_sum / cfg.experiment.seeds.len() as f64);
    }
    Ok(per_task)
}

/// Full task matrix with the configured settings.
pub fn run_matrix(cfg: &RunConfig, overwrite: bool) -> Result<ReportTable> {
    cfg.validate()?;
    check_data_available(cfg)?;
    let tasks = cfg.resolved_tasks()?;
    let out_dir = cfg.experiment.output_dir.clone();
    create_run_dir(&out_dir, overwrite)?;
    persist_config(cfg, &out_dir)?;

    let task_names: Vec<String> = tasks.iter().map(|t| t.to_string()).collect();
    let mut table = ReportTable::new("Diagnosis accuracy (%)", task_names.clone());
    let mut entries = vec![];
    let per_task = run_row(cfg, "SDALR", &tasks, &out_dir, None, &mut entries)?;
    table.push_row("SDALR", per_task)?;
    table.write_all(&out_dir, "matrix")?;
    write_manifest(
        &RunManifest {
            kind: "matrix".into(),
            task_names,
            entries,
        },
        &out_dir,
    )?;
    println!("{}", table.to_aligned_text());
    Ok(table)
}

/// The incremental ablation ladder. "voting off" degenerates ballots to the
/// single original-sample label; "uem off" removes unreliable samples from
/// every loss.
pub fn ablation_ladder() -> Vec<(&'static str, bool, bool, bool)> {
    // (name, car, voting, uem)
    vec![
        ("lsc+im", false, false, false),
        ("lsc+im+car", true, false, false),
        ("lsc+im+car+voting", true, true, false),
        ("lsc+im+car+voting+uem", true, true, true),
    ]
}

pub fn run_ablation(cfg: &RunConfig, overwrite: bool) -> Result<ReportTable> {
    cfg.validate()?;
    check_data_available(cfg)?;
    let tasks = cfg.resolved_tasks()?;
    let out_dir = cfg.experiment.output_dir.clone();
    create_run_dir(&out_dir, overwrite)?;
    persist_config(cfg, &out_dir)?;

    let task_names: Vec<String> = tasks.iter().map(|t| t.to_string()).collect();
    let mut table = ReportTable::new("Ablation accuracy (%)", task_names.clone());
    let mut entries = vec![];
    for (name, car, voting, uem) in ablation_ladder() {
        let mut row_cfg = cfg.clone();
        row_cfg.adapt.car = car;
        row_cfg.adapt.voting = voting;
        row_cfg.adapt.uem = uem;
        let per_task = run_row(&row_cfg, name, &tasks, &out_dir, None, &mut entries)?;
        table.push_row(name, per_task)?;
    }
    table.write_all(&out_dir, "ablation")?;
    write_manifest(
        &RunManifest {
            kind: "ablation".into(),
            task_names,
            entries,
        },
        &out_dir,
    )?;
    println!("{}", table.to_aligned_text());
    Ok(table)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub per_task: Vec<(String, f64)>,
    pub average: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepData {
    pub axis: String,
    pub points: Vec<SweepPoint>,
}

/// Sweeps one hyperparameter axis over the configured grid.
pub fn run_sweep(cfg: &RunConfig, axis: SweepAxis, overwrite: bool) -> Result<SweepData> {
    cfg.validate()?;
    check_data_available(cfg)?;
    let tasks = cfg.resolved_tasks()?;
    let out_dir = cfg.experiment.output_dir.clone();
    create_run_dir(&out_dir, overwrite)?;
    persist_config(cfg, &out_dir)?;

    let values = match axis {
        SweepAxis::Beta => cfg.sweep.beta_values.clone(),
        SweepAxis::Threshold => cfg.sweep.threshold_values.clone(),
    };
    let axis_name = match axis {
        SweepAxis::Beta => "beta",
        SweepAxis::Threshold => "threshold",
    };

    let task_names: Vec<String> = tasks.iter().map(|t| t.to_string()).collect();
    let mut entries = vec![];
    let mut points = vec![];
    for &value in &values {
        let mut point_cfg = cfg.clone();
        match axis {
            SweepAxis::Beta => point_cfg.adapt.beta = value,
            SweepAxis::Threshold => point_cfg.adapt.threshold = value,
        }
        let row_name = format!("{axis_name}={value:.2}");
        let per_task = run_row(&point_cfg, &row_name, &tasks, &out_dir, Some(value), &mut entries)?;
        let average = per_task.iter().sum::<f64>() / per_task.len() as f64;
        points.push(SweepPoint {
            value,
            per_task: task_names.iter().cloned().zip(per_task).collect(),
            average,
        });
    }

    // one row per (point, task)
    let csv_path = out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    w.write_record([axis_name, "task", "accuracy_pct"])
        .map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    for p in &points {
        for (task, acc) in &p.per_task {
            w.write_record([format!("{:.4}", p.value), task.clone(), format!("{acc:.2}")])
                .map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
        }
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    // per-point averages for curve plotting
    let summary_path = out_dir.join("sweep_summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)
        .map_err(|e| Error::Data(format!("{}: {e}", summary_path.display())))?;
    w.write_record([axis_name, "average_accuracy_pct"])
        .map_err(|e| Error::Data(format!("{}: {e}", summary_path.display())))?;
    for p in &points {
        w.write_record([format!("{:.4}", p.value), format!("{:.2}", p.average)])
            .map_err(|e| Error::Data(format!("{}: {e}", summary_path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;

    write_manifest(
        &RunManifest {
            kind: "sweep".into(),
            task_names,
            entries,
        },
        &out_dir,
    )?;
    let data = SweepData {
        axis: axis_name.into(),
        points,
    };
    let json_path = out_dir.join("sweep.json");
    let json = serde_json::to_string_pretty(&data)
        .map_err(|e| Error::Training(format!("serialize sweep: {e}")))?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(data)
}

/// CSV of per-sample embeddings: id, true label, pseudo label, features.
pub fn export_embeddings(
    model: &Model,
    dataset: &DomainDataset,
    assignment: Option<&PseudoLabelAssignment>,
    eval_batch: usize,
    path: &Path,
) -> Result<()> {
    let waveforms = dataset.waveform_matrix();
    let (features, _) = extract_features_probs(model, &waveforms, eval_batch)?;
    let dim = features.shape()[1];
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut header = vec!["sample_id".to_string(), "true_label".into(), "pseudo_label".into()];
    header.extend((0..dim).map(|d| format!("f{d}")));
    w.write_record(&header)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for i in 0..dataset.len() {
        let mut row = vec![
            i.to_string(),
            dataset.samples[i]
                .label
                .map(|l| l.to_string())
                .unwrap_or_else(|| "-".into()),
            assignment
                .map(|a| a.labels[i].to_string())
                .unwrap_or_else(|| "-".into()),
        ];
        row.extend(features.row(i).iter().map(|v| format!("{v:.6}")));
        w.write_record(&row)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Recomputes the results table of a finished run directory from its
/// persisted records and verifies the stored accuracies.
pub fn report_from_dir(dir: &Path) -> Result<ReportTable> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;

    let mut rows: Vec<String> = vec![];
    for e in &manifest.entries {
        if !rows.contains(&e.row) {
            rows.push(e.row.clone());
        }
    }
    let mut table = ReportTable::new(
        format!("{} (recomputed)", manifest.kind),
        manifest.task_names.clone(),
    );
    for row in &rows {
        let mut per_task = vec![];
        for task in &manifest.task_names {
            let cells: Vec<f64> = manifest
                .entries
                .iter()
                .filter(|e| &e.row == row && &e.task == task)
                .map(|e| {
                    let record_path = dir.join(&e.record);
                    let text = std::fs::read_to_string(&record_path)
                        .map_err(|err| Error::io(&record_path, err))?;
                    let record: RunRecord = serde_json::from_str(&text)
                        .map_err(|err| Error::Data(format!("{}: {err}", record_path.display())))?;
                    if (record.final_accuracy - e.accuracy).abs() > 1e-9 {
                        return Err(Error::Data(format!(
                            "manifest accuracy {} disagrees with record {}",
                            e.accuracy, record.final_accuracy
                        )));
                    }
                    Ok(record.final_accuracy)
                })
                .collect::<Result<Vec<f64>>>()?;
            if cells.is_empty() {
                return Err(Error::Data(format!("no records for row {row} task {task}")));
            }
            per_task.push(100.0 * cells.iter().sum::<f64>() / cells.len() as f64);
        }
        table.push_row(row.clone(), per_task)?;
    }
    table.verify_averages()?;
    Ok(table)
}

/// Convenience wrapper used by the CLI: label a dataset with the model and
/// dump the ballot audit CSV.
pub fn inspect_pseudo_labels(
    model: &Model,
    dataset: &DomainDataset,
    cfg: &RunConfig,
    path: &Path,
) -> Result<PseudoLabelAssignment> {
    let aug = AugmentConfig {
        zero_fraction: cfg.adapt.zero_fraction,
        flip_negate: cfg.adapt.flip_negate,
    };
    let assignment = assign_labels(
        model,
        dataset,
        cfg.adapt.threshold,
        &aug,
        cfg.adapt.seed,
        cfg.adapt.voting,
        cfg.adapt.eval_batch,
    )?;
    crate::labeling::write_inspection_csv(&assignment, dataset, path)?;
    Ok(assignment)
}

//! Source pre-training and target adaptation loops, the learning-rate
//! schedule, and evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::config::RunConfig;
use crate::dataset::DomainDataset;
use crate::error::{Error, Result};
use crate::labeling::{assign_labels, rebalance, PseudoLabelAssignment};
use crate::losses::{
    car_loss_grad, im_loss_grad, lsc_loss_grad, softmax, softmax_backward, source_ce_grad,
    total_loss, uem_loss_grad, LossBundle, UNRELIABLE,
};
use crate::network::{CheckpointMeta, Model};
use crate::nn::SgdMomentum;

/// Decaying schedule `lr0 * (1 + 10 p)^(-0.75)` for progress `p` in [0,1].
pub fn lr_at(lr0: f64, progress: f64) -> f64 {
    lr0 * (1.0 + 10.0 * progress).powf(-0.75)
}

/// RNG stream ids; every consumer of randomness gets its own stream of the
/// run seed so components stay decoupled.
mod streams {
    pub const MODEL_INIT: u64 = 10;
    pub const SOURCE_SHUFFLE: u64 = 11;
    pub const SOURCE_DROPOUT: u64 = 12;
    pub const ADAPT_SHUFFLE: u64 = 21;
    pub const ADAPT_DROPOUT: u64 = 22;
    pub const REBALANCE: u64 = 23;
    pub const SPLIT: u64 = 24;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for the per-refresh ballot augmentations (splitmix64 mix).
fn refresh_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(epoch as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
}

/// Argmax accuracy and confusion matrix on a labeled dataset, eval mode.
pub fn evaluate(model: &Model, dataset: &DomainDataset, eval_batch: usize) -> Result<EvalReport> {
    if dataset.class_count != model.class_count {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model was built for {}",
            dataset.class_count, model.class_count
        )));
    }
    if !dataset.is_fully_labeled() {
        return Err(Error::Data("evaluation requires a labeled dataset".into()));
    }
    let classes = model.class_count;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let waveforms = dataset.waveform_matrix();
    let n = dataset.len();
    let mut start = 0;
    while start < n {
        let end = (start + eval_batch).min(n);
        let chunk = waveforms.slice(ndarray::s![start..end, ..]).to_owned();
        let probs = model.forward_probs(&chunk)?;
        for (row_idx, i) in (start..end).enumerate() {
            let truth = dataset.samples[i].label.expect("checked labeled");
            let row = probs.row(row_idx);
            let mut pred = 0usize;
            for c in 1..classes {
                if row[c] > row[pred] {
                    pred = c;
                }
            }
            confusion[truth][pred] += 1;
        }
        start = end;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / n as f64;
    let per_class_accuracy = (0..classes)
        .map(|c| {
            let total: usize = confusion[c].iter().sum();
            if total == 0 {
                0.0
            } else {
                confusion[c][c] as f64 / total as f64
            }
        })
        .collect();
    Ok(EvalReport {
        accuracy,
        per_class_accuracy,
        confusion,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceEpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub lr_last: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceRecord {
    pub epochs: Vec<SourceEpochRecord>,
    pub final_val_accuracy: Option<f64>,
    pub config_hash: String,
    pub wall_ms: u128,
}

/// Per-class stratified split; returns (train, validation) index lists.
fn stratified_split(
    dataset: &DomainDataset,
    val_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut per_class: Vec<Vec<usize>> = vec![vec![]; dataset.class_count];
    for (i, s) in dataset.samples.iter().enumerate() {
        if let Some(y) = s.label {
            per_class[y].push(i);
        }
    }
    let mut train = vec![];
    let mut val = vec![];
    for members in &mut per_class {
        members.shuffle(rng);
        let n_val = (members.len() as f64 * val_fraction).floor() as usize;
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn gather_batch(waveforms: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut batch = Array2::zeros((indices.len(), waveforms.shape()[1]));
    for (row, &i) in indices.iter().enumerate() {
        batch.row_mut(row).assign(&waveforms.row(i));
    }
    batch
}

/// Batched index ranges; a trailing singleton is dropped unless it is the
/// only batch (batch statistics degenerate at size one).
fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut ranges = vec![];
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        ranges.push((start, end));
        start = end;
    }
    if ranges.len() > 1 {
        if let Some(&(s, e)) = ranges.last() {
            if e - s < 2 {
                ranges.pop();
            }
        }
    }
    ranges
}

/// Supervised pre-training with cross-entropy on a labeled source domain.
/// An 80/20 stratified split is held out for monitoring only.
pub fn train_source(
    dataset: &DomainDataset,
    cfg: &RunConfig,
    run_dir: Option<&Path>,
) -> Result<(Model, SourceRecord)> {
    let started = Instant::now();
    if !dataset.is_fully_labeled() {
        return Err(Error::Training(
            "source training requires a fully labeled dataset".into(),
        ));
    }
    dataset.validate()?;
    if dataset.window_len() != cfg.model.window_len {
        return Err(Error::Config(format!(
            "dataset windows are {} points but the encoder expects {}",
            dataset.window_len(),
            cfg.model.window_len
        )));
    }

    let seed = cfg.adapt.seed;
    let mut init_rng = stream_rng(seed, streams::MODEL_INIT);
    let mut model = Model::new(cfg.model.clone(), dataset.class_count, &mut init_rng)?;
    model.meta = CheckpointMeta {
        dataset: format!("{:?}", cfg.experiment.dataset).to_lowercase(),
        domain: dataset.domain_id.clone(),
        config_hash: cfg.hash(),
        epoch: 0,
    };

    let mut split_rng = stream_rng(seed, streams::SPLIT);
    let (train_idx, val_idx) = stratified_split(dataset, 0.2, &mut split_rng);
    if train_idx.is_empty() {
        return Err(Error::Training("no training samples after the split".into()));
    }

    let waveforms = dataset.waveform_matrix();
    let labels: Vec<usize> = dataset
        .samples
        .iter()
        .map(|s| s.label.expect("checked labeled"))
        .collect();
    let val_set = subset(dataset, &val_idx);

    let mut shuffle_rng = stream_rng(seed, streams::SOURCE_SHUFFLE);
    let mut dropout_rng = stream_rng(seed, streams::SOURCE_DROPOUT);
    let mut opt = SgdMomentum::new(cfg.adapt.momentum, cfg.adapt.weight_decay);

    let steps_per_epoch = batch_ranges(train_idx.len(), cfg.adapt.batch).len().max(1);
    let total_steps = (cfg.adapt.source_epochs * steps_per_epoch).max(1);
    let mut step = 0usize;
    let mut record = SourceRecord {
        epochs: vec![],
        final_val_accuracy: None,
        config_hash: cfg.hash(),
        wall_ms: 0,
    };

    let mut order = train_idx.clone();
    for epoch in 0..cfg.adapt.source_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut lr_last = cfg.adapt.source_lr;
        for (s, e) in batch_ranges(order.len(), cfg.adapt.batch) {
            let idx = &order[s..e];
            let x = gather_batch(&waveforms, idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();

            model.zero_grads();
            let feats = model.encoder.forward_t(&x, &mut dropout_rng)?;
            let logits = model.classifier.forward_t(&feats);
            let probs = softmax(&logits);
            let (ce, grad_probs) = source_ce_grad(&probs, &y)?;
            if !ce.is_finite() {
                return Err(Error::Training(format!("loss diverged at step {step}")));
            }
            let grad_logits = softmax_backward(&probs, &grad_probs);
            let grad_feats = model.classifier.backward(&grad_logits);
            model.encoder.backward(&grad_feats);

            let lr = lr_at(cfg.adapt.source_lr, step as f64 / total_steps as f64);
            lr_last = lr;
            opt.step(lr, |f| model.visit_trainable(true, f));
            step += 1;
            loss_sum += ce;
            loss_count += 1;
        }

        let val_accuracy = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, &val_set, cfg.adapt.eval_batch)?.accuracy)
        };
        model.meta.epoch = epoch + 1;
        record.epochs.push(SourceEpochRecord {
            epoch,
            train_loss: loss_sum / loss_count.max(1) as f64,
            val_accuracy,
            lr_last,
        });
        log::info!(
            "source epoch {epoch}: loss {:.4} val_acc {:?}",
            loss_sum / loss_count.max(1) as f64,
            val_accuracy
        );
    }
    record.final_val_accuracy = record.epochs.last().and_then(|e| e.val_accuracy);
    record.wall_ms = started.elapsed().as_millis();

    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        model.save(&dir.join(format!("source_{}.ckpt", dataset.domain_id)))?;
        let path = dir.join(format!("source_{}_record.json", dataset.domain_id));
        let json = serde_json::to_string_pretty(&record)
            .map_err(|e| Error::Training(format!("serialize record: {e}")))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok((model, record))
}

fn subset(dataset: &DomainDataset, indices: &[usize]) -> DomainDataset {
    DomainDataset {
        samples: indices.iter().map(|&i| dataset.samples[i].clone()).collect(),
        class_count: dataset.class_count,
        domain_id: dataset.domain_id.clone(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_losses: LossBundle,
    pub reliable_fraction: f64,
    pub pseudo_label_accuracy: Option<f64>,
    pub eval_accuracy: Option<f64>,
    pub lr_last: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub source_accuracy: Option<f64>,
    pub final_accuracy: f64,
    pub final_report: EvalReport,
    pub config_hash: String,
    pub wall_ms: u128,
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    step: usize,
    epoch: usize,
    lr: f64,
    #[serde(flatten)]
    bundle: &'a LossBundle,
}

/// The adaptation loop: per epoch, refresh pseudo-labels and rebalance, then
/// iterate shuffled batches; unreliable rows contribute the entropy term,
/// reliable rows the smoothing/information/cohesion terms. The classifier
/// head stays frozen unless configured otherwise.
pub fn adapt_target(
    source: &Model,
    target: &DomainDataset,
    cfg: &RunConfig,
    run_dir: Option<&Path>,
) -> Result<(Model, RunRecord)> {
    let started = Instant::now();
    target.validate()?;
    if target.class_count != source.class_count {
        return Err(Error::Config(format!(
            "target has {} classes but the source model was trained for {}",
            target.class_count, source.class_count
        )));
    }
    if target.window_len() != source.encoder.cfg.window_len {
        return Err(Error::Shape(format!(
            "target windows are {} points but the encoder expects {}",
            target.window_len(),
            source.encoder.cfg.window_len
        )));
    }

    let seed = cfg.adapt.seed;
    let aug = AugmentConfig {
        zero_fraction: cfg.adapt.zero_fraction,
        flip_negate: cfg.adapt.flip_negate,
    };
    let mut model = source.init_target_from_source();
    model.meta.domain = target.domain_id.clone();
    model.meta.config_hash = cfg.hash();
    model.meta.epoch = 0;

    let mut metrics = match run_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("metrics.jsonl");
            Some(BufWriter::new(
                File::create(&path).map_err(|e| Error::io(&path, e))?,
            ))
        }
        None => None,
    };
    let mut records_file = match run_dir {
        Some(dir) => {
            let path = dir.join("run_records.jsonl");
            Some(BufWriter::new(
                File::create(&path).map_err(|e| Error::io(&path, e))?,
            ))
        }
        None => None,
    };

    let truth = target.labels();
    let mut shuffle_rng = stream_rng(seed, streams::ADAPT_SHUFFLE);
    let mut dropout_rng = stream_rng(seed, streams::ADAPT_DROPOUT);
    let mut rebalance_rng = stream_rng(seed, streams::REBALANCE);
    let mut opt = SgdMomentum::new(cfg.adapt.momentum, cfg.adapt.weight_decay);
    let train_classifier = !cfg.adapt.freeze_classifier;

    let mut epochs: Vec<EpochRecord> = vec![];
    let mut assignment: Option<PseudoLabelAssignment> = None;
    let mut pool: Vec<(ndarray::Array1<f64>, i64)> = vec![];
    let mut step = 0usize;

    for epoch in 0..cfg.adapt.target_epochs {
        let epoch_start = Instant::now();
        let needs_refresh = assignment.is_none()
            || (cfg.adapt.refresh_every > 0 && epoch % cfg.adapt.refresh_every == 0);
        if needs_refresh {
            let fresh = assign_labels(
                &model,
                target,
                cfg.adapt.threshold,
                &aug,
                refresh_seed(seed, epoch),
                cfg.adapt.voting,
                cfg.adapt.eval_batch,
            )?;
            let balanced = rebalance(target, &fresh, &aug, &mut rebalance_rng)?;
            pool = balanced
                .entries
                .iter()
                .filter(|e| cfg.adapt.uem || e.label != UNRELIABLE)
                .map(|e| (e.waveform.clone(), e.label))
                .collect();
            assignment = Some(fresh);
        }
        let assignment_ref = assignment.as_ref().expect("assignment set above");

        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let window = target.window_len();

        let mut sums = LossBundle::default();
        let mut batches = 0usize;
        let mut lr_last = cfg.adapt.target_lr;
        let ranges = batch_ranges(order.len(), cfg.adapt.batch);
        let steps_this_epoch = ranges.len().max(1);
        for (bi, (s, e)) in ranges.iter().enumerate() {
            let idx = &order[*s..*e];
            let mut x = Array2::zeros((idx.len(), window));
            let mut labels: Vec<i64> = Vec::with_capacity(idx.len());
            for (row, &i) in idx.iter().enumerate() {
                x.row_mut(row).assign(&pool[i].0);
                labels.push(pool[i].1);
            }

            model.zero_grads();
            let feats = model.encoder.forward_t(&x, &mut dropout_rng)?;
            let logits = model.classifier.forward_t(&feats);
            let probs = softmax(&logits);

            let (l_lsc, g_lsc) = lsc_loss_grad(&probs, &labels, cfg.adapt.alpha)?;
            let (l_ent, l_div, g_ent, g_div) = im_loss_grad(&probs, &labels)?;
            let (l_uem, g_uem) = if cfg.adapt.uem {
                uem_loss_grad(&probs, &labels)?
            } else {
                (0.0, Array2::zeros(probs.raw_dim()))
            };
            let (l_car, g_car) = if cfg.adapt.car {
                car_loss_grad(&feats, &labels, cfg.adapt.beta, cfg.adapt.car_normalize)?
            } else {
                (0.0, Array2::zeros(feats.raw_dim()))
            };

            let grad_probs = &g_lsc + &g_ent + &g_div + &g_uem;
            let grad_logits = softmax_backward(&probs, &grad_probs);
            let grad_feats = model.classifier.backward(&grad_logits) + &g_car;
            model.encoder.backward(&grad_feats);

            let progress =
                (epoch as f64 + bi as f64 / steps_this_epoch as f64) / cfg.adapt.target_epochs as f64;
            let lr = lr_at(cfg.adapt.target_lr, progress);
            lr_last = lr;
            opt.step(lr, |f| model.visit_trainable(train_classifier, f));

            let reliable = labels.iter().filter(|&&l| l != UNRELIABLE).count();
            let bundle = total_loss(
                l_lsc,
                l_uem,
                l_ent,
                l_div,
                l_car,
                reliable,
                labels.len() - reliable,
            );
            bundle.assert_finite()?;
            if let Some(w) = metrics.as_mut() {
                let line = MetricsLine {
                    step,
                    epoch,
                    lr,
                    bundle: &bundle,
                };
                serde_json::to_writer(&mut *w, &line)
                    .map_err(|e| Error::Training(format!("metrics write: {e}")))?;
                w.write_all(b"\n")
                    .map_err(|e| Error::Training(format!("metrics write: {e}")))?;
            }
            sums.l_lsc += bundle.l_lsc;
            sums.l_uem += bundle.l_uem;
            sums.l_ent += bundle.l_ent;
            sums.l_div += bundle.l_div;
            sums.l_im += bundle.l_im;
            sums.l_car += bundle.l_car;
            sums.l_total += bundle.l_total;
            sums.reliable += bundle.reliable;
            sums.unreliable += bundle.unreliable;
            step += 1;
            batches += 1;
        }

        let b = batches.max(1) as f64;
        let mean_losses = LossBundle {
            l_lsc: sums.l_lsc / b,
            l_uem: sums.l_uem / b,
            l_ent: sums.l_ent / b,
            l_div: sums.l_div / b,
            l_im: sums.l_im / b,
            l_car: sums.l_car / b,
            l_total: sums.l_total / b,
            reliable: sums.reliable,
            unreliable: sums.unreliable,
        };
        let eval_accuracy = if cfg.adapt.eval_every_epoch && target.is_fully_labeled() {
            Some(evaluate(&model, target, cfg.adapt.eval_batch)?.accuracy)
        } else {
            None
        };
        model.meta.epoch = epoch + 1;
        let record = EpochRecord {
            epoch,
            mean_losses,
            reliable_fraction: assignment_ref.reliable_fraction(),
            pseudo_label_accuracy: assignment_ref.reliable_accuracy(&truth),
            eval_accuracy,
            lr_last,
            wall_ms: epoch_start.elapsed().as_millis(),
        };
        if let Some(w) = records_file.as_mut() {
            serde_json::to_writer(&mut *w, &record)
                .map_err(|e| Error::Training(format!("record write: {e}")))?;
            w.write_all(b"\n")
                .map_err(|e| Error::Training(format!("record write: {e}")))?;
            w.flush().map_err(|e| Error::Training(format!("record flush: {e}")))?;
        }
        log::info!(
            "adapt epoch {epoch}: total {:.4} reliable {:.1}% acc {:?}",
            record.mean_losses.l_total,
            record.reliable_fraction * 100.0,
            record.eval_accuracy
        );
        epochs.push(record);
    }
    if let Some(w) = metrics.as_mut() {
        w.flush().map_err(|e| Error::Training(format!("metrics flush: {e}")))?;
    }

    let final_report = if target.is_fully_labeled() {
        evaluate(&model, target, cfg.adapt.eval_batch)?
    } else {
        EvalReport {
            accuracy: f64::NAN,
            per_class_accuracy: vec![],
            confusion: vec![],
        }
    };
    let run_record = RunRecord {
        task: format!("{}->{}", source.meta.domain, target.domain_id),
        seed,
        epochs,
        source_accuracy: None,
        final_accuracy: final_report.accuracy,
        final_report: final_report.clone(),
        config_hash: cfg.hash(),
        wall_ms: started.elapsed().as_millis(),
    };
    if let Some(dir) = run_dir {
        model.save(&dir.join("adapted_model.ckpt"))?;
        let path = dir.join("run_record.json");
        let json = serde_json::to_string_pretty(&run_record)
            .map_err(|e| Error::Training(format!("serialize record: {e}")))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok((model, run_record))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_endpoints_and_monotonicity() {
        let lr0 = 7e-3;
        assert!((lr_at(lr0, 0.0) - lr0).abs() < 1e-15);
        assert!((lr_at(lr0, 1.0) - lr0 * 11f64.powf(-0.75)).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for i in 0..=100 {
            let lr = lr_at(lr0, i as f64 / 100.0);
            assert!(lr < last);
            last = lr;
        }
    }

    #[test]
    fn batch_ranges_drop_trailing_singleton() {
        assert_eq!(batch_ranges(5, 2), vec![(0, 2), (2, 4)]);
        assert_eq!(batch_ranges(4, 2), vec![(0, 2), (2, 4)]);
        assert_eq!(batch_ranges(1, 4), vec![(0, 1)]);
        assert_eq!(batch_ranges(2, 64), vec![(0, 2)]);
    }

    #[test]
    fn refresh_seed_depends_on_epoch() {
        assert_ne!(refresh_seed(0, 0), refresh_seed(0, 1));
        assert_eq!(refresh_seed(5, 3), refresh_seed(5, 3));
    }
}

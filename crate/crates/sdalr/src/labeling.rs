//! Pseudo-label assignment: probability-weighted class prototypes, cosine
//! thresholding, augmentation ballots with strict-majority voting, and class
//! rebalancing by augmented duplication.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{build_augmented_set, random_augment, AugmentConfig, AugmentationKind};
use crate::dataset::DomainDataset;
use crate::error::{Error, Result};
use crate::losses::UNRELIABLE;
use crate::network::{extract_features_probs, Model};

/// Below this soft mass a class prototype is flagged empty and excluded from
/// the similarity argmax.
pub const EMPTY_MASS: f64 = 1e-8;

/// Probability-weighted class centers in feature space.
#[derive(Debug, Clone)]
pub struct PrototypeSet {
    pub centers: Array2<f64>, // [C, d]
    pub soft_mass: Array1<f64>,
    pub empty: Vec<bool>,
    pub feature_dim: usize,
}

impl PrototypeSet {
    pub fn class_count(&self) -> usize {
        self.centers.shape()[0]
    }
}

/// Weighted feature mean per class: `sum_i p_c(x_i) f(x_i) / sum_i p_c(x_i)`.
pub fn compute_prototypes(features: &Array2<f64>, probs: &Array2<f64>) -> Result<PrototypeSet> {
    let (n, dim) = (features.shape()[0], features.shape()[1]);
    let classes = probs.shape()[1];
    if n == 0 {
        return Err(Error::Data("prototypes need at least one sample".into()));
    }
    if probs.shape()[0] != n {
        return Err(Error::Shape(format!(
            "{n} feature rows but {} probability rows",
            probs.shape()[0]
        )));
    }
    let mut centers = Array2::zeros((classes, dim));
    let mut soft_mass = Array1::zeros(classes);
    for i in 0..n {
        for c in 0..classes {
            let p = probs[[i, c]];
            soft_mass[c] += p;
            for d in 0..dim {
                centers[[c, d]] += p * features[[i, d]];
            }
        }
    }
    let mut empty = vec![false; classes];
    for c in 0..classes {
        if soft_mass[c] < EMPTY_MASS {
            empty[c] = true;
            for d in 0..dim {
                centers[[c, d]] = 0.0;
            }
        } else {
            for d in 0..dim {
                centers[[c, d]] /= soft_mass[c];
            }
        }
    }
    Ok(PrototypeSet {
        centers,
        soft_mass,
        empty,
        feature_dim: dim,
    })
}

/// Cosine similarities against every non-empty prototype.
pub fn similarities(feature: ArrayView1<'_, f64>, protos: &PrototypeSet) -> Vec<Option<f64>> {
    let fnorm = feature.iter().map(|v| v * v).sum::<f64>().sqrt();
    (0..protos.class_count())
        .map(|c| {
            if protos.empty[c] || fnorm <= 0.0 {
                return None;
            }
            let center = protos.centers.row(c);
            let cnorm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
            if cnorm <= 0.0 {
                return None;
            }
            let dot: f64 = feature.iter().zip(center.iter()).map(|(a, b)| a * b).sum();
            Some(dot / (fnorm * cnorm))
        })
        .collect()
}

/// Thresholded nearest-prototype label: the argmax class when its cosine
/// similarity strictly exceeds `threshold`, otherwise the unreliable
/// sentinel. Ties break toward the lowest class index.
pub fn initial_label(
    feature: ArrayView1<'_, f64>,
    protos: &PrototypeSet,
    threshold: f64,
) -> Result<(i64, f64)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0,1)")));
    }
    let fnorm = feature.iter().map(|v| v * v).sum::<f64>().sqrt();
    if fnorm <= 0.0 {
        log::warn!("zero-norm feature: cosine undefined, labeling unreliable");
        return Ok((UNRELIABLE, f64::NEG_INFINITY));
    }
    let sims = similarities(feature, protos);
    let mut best: Option<(usize, f64)> = None;
    for (c, s) in sims.iter().enumerate() {
        if let Some(s) = s {
            if best.map(|(_, b)| *s > b).unwrap_or(true) {
                best = Some((c, *s));
            }
        }
    }
    match best {
        Some((c, s)) if s > threshold => Ok((c as i64, s)),
        Some((_, s)) => Ok((UNRELIABLE, s)),
        None => Ok((UNRELIABLE, f64::NEG_INFINITY)),
    }
}

/// Strict-majority vote: the class whose ballot count exceeds m/2, where m is
/// the total ballot count including abstentions (-1 ballots).
pub fn vote(ballots: &[i64]) -> i64 {
    assert!(!ballots.is_empty(), "vote needs at least one ballot");
    let m = ballots.len();
    let mut counts: std::collections::BTreeMap<i64, usize> = std::collections::BTreeMap::new();
    for &b in ballots {
        if b != UNRELIABLE {
            *counts.entry(b).or_insert(0) += 1;
        }
    }
    let mut best_class = UNRELIABLE;
    let mut best_count = 0usize;
    for (&class, &count) in &counts {
        if count > best_count {
            best_count = count;
            best_class = class;
        }
    }
    if 2 * best_count > m {
        best_class
    } else {
        UNRELIABLE
    }
}

/// Final pseudo-labels with the ballots and similarities that produced them.
#[derive(Debug, Clone)]
pub struct PseudoLabelAssignment {
    /// One entry per target sample: class index or the unreliable sentinel.
    pub labels: Vec<i64>,
    /// Max cosine similarity of the original (un-augmented) sample.
    pub top_similarity: Vec<f64>,
    /// Per-sample ballots in set order (original, then the variants).
    pub ballots: Vec<Vec<i64>>,
    pub ballots_per_sample: usize,
}

impl PseudoLabelAssignment {
    pub fn reliable_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNRELIABLE).count()
    }

    pub fn reliable_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.reliable_count() as f64 / self.labels.len() as f64
        }
    }

    /// Accuracy of reliable pseudo-labels against known true labels.
    pub fn reliable_accuracy(&self, truth: &[Option<usize>]) -> Option<f64> {
        let mut hits = 0usize;
        let mut total = 0usize;
        for (l, t) in self.labels.iter().zip(truth.iter()) {
            if *l == UNRELIABLE {
                continue;
            }
            let t = (*t)?;
            total += 1;
            if *l == t as i64 {
                hits += 1;
            }
        }
        if total == 0 {
            None
        } else {
            Some(hits as f64 / total as f64)
        }
    }
}

/// Runs the full labeling pass: prototypes from the original samples, one
/// ballot per member of each sample's augmented set, strict-majority vote.
/// With `voting` disabled the ballot set degenerates to the original sample.
pub fn assign_labels(
    model: &Model,
    target: &DomainDataset,
    threshold: f64,
    aug: &AugmentConfig,
    seed: u64,
    voting: bool,
    eval_batch: usize,
) -> Result<PseudoLabelAssignment> {
    let n = target.len();
    if n == 0 {
        return Err(Error::Data("cannot label an empty dataset".into()));
    }
    let waveforms = target.waveform_matrix();
    let (features, probs) = extract_features_probs(model, &waveforms, eval_batch)?;
    let protos = compute_prototypes(&features, &probs)?;

    let mut ballots: Vec<Vec<i64>> = Vec::with_capacity(n);
    let mut top_similarity = Vec::with_capacity(n);
    for i in 0..n {
        let (label, sim) = initial_label(features.row(i), &protos, threshold)?;
        ballots.push(vec![label]);
        top_similarity.push(sim);
    }

    let ballots_per_sample = if voting { 4 } else { 1 };
    if voting {
        // augmentation parameters are drawn once per refresh, in sample order,
        // so ballots are reproducible given (model, data, seed)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut variant_waves: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::zeros(waveforms.raw_dim()))
            .collect();
        for (i, sample) in target.samples.iter().enumerate() {
            let set = build_augmented_set(&sample.waveform, aug, &mut rng)?;
            for (v, (_, wave)) in set.variants.iter().enumerate() {
                variant_waves[v].row_mut(i).assign(wave);
            }
        }
        for waves in &variant_waves {
            let (vf, _) = extract_features_probs(model, waves, eval_batch)?;
            for i in 0..n {
                let (label, _) = initial_label(vf.row(i), &protos, threshold)?;
                ballots[i].push(label);
            }
        }
    }

    let labels: Vec<i64> = ballots.iter().map(|b| vote(b)).collect();
    Ok(PseudoLabelAssignment {
        labels,
        top_similarity,
        ballots,
        ballots_per_sample,
    })
}

/// One entry of the balanced adaptation pool.
#[derive(Debug, Clone)]
pub struct BalancedEntry {
    pub waveform: Array1<f64>,
    pub label: i64,
    pub is_duplicate: bool,
    pub augmentation: Option<AugmentationKind>,
    /// Index of the originating target sample.
    pub source_index: usize,
}

/// Reliable classes brought to equal counts by augmented duplication;
/// unreliable samples appended unchanged.
#[derive(Debug, Clone)]
pub struct BalancedTargetSet {
    pub entries: Vec<BalancedEntry>,
    pub reliable_per_class: Vec<usize>,
    pub unreliable_count: usize,
}

pub fn rebalance(
    target: &DomainDataset,
    assignment: &PseudoLabelAssignment,
    aug: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BalancedTargetSet> {
    let classes = target.class_count;
    if assignment.labels.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            assignment.labels.len(),
            target.len()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![vec![]; classes];
    let mut unreliable: Vec<usize> = vec![];
    for (i, &l) in assignment.labels.iter().enumerate() {
        if l == UNRELIABLE {
            unreliable.push(i);
        } else {
            members[l as usize].push(i);
        }
    }
    let max_count = members.iter().map(|m| m.len()).max().unwrap_or(0);
    if max_count == 0 {
        return Err(Error::Training(
            "no reliable pseudo-labels; lower the similarity threshold".into(),
        ));
    }

    let mut entries = vec![];
    // originals first, in dataset order
    for (c, class_members) in members.iter().enumerate() {
        for &i in class_members {
            entries.push(BalancedEntry {
                waveform: target.samples[i].waveform.clone(),
                label: c as i64,
                is_duplicate: false,
                augmentation: None,
                source_index: i,
            });
        }
    }
    // duplicates bring every non-empty reliable class up to the maximum count
    for (c, class_members) in members.iter().enumerate() {
        if class_members.is_empty() {
            log::warn!("class {c} has no reliable samples; nothing to duplicate");
            continue;
        }
        for _ in class_members.len()..max_count {
            let pick = class_members[rng.random_range(0..class_members.len())];
            let (kind, wave) = random_augment(&target.samples[pick].waveform, aug, rng)?;
            entries.push(BalancedEntry {
                waveform: wave,
                label: c as i64,
                is_duplicate: true,
                augmentation: Some(kind),
                source_index: pick,
            });
        }
    }
    for &i in &unreliable {
        entries.push(BalancedEntry {
            waveform: target.samples[i].waveform.clone(),
            label: UNRELIABLE,
            is_duplicate: false,
            augmentation: None,
            source_index: i,
        });
    }

    let mut reliable_per_class = vec![0usize; classes];
    for e in &entries {
        if e.label != UNRELIABLE {
            reliable_per_class[e.label as usize] += 1;
        }
    }
    Ok(BalancedTargetSet {
        entries,
        reliable_per_class,
        unreliable_count: unreliable.len(),
    })
}

/// Per-sample audit dump: ballots, similarity, final label, true label.
pub fn write_inspection_csv(
    assignment: &PseudoLabelAssignment,
    target: &DomainDataset,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut header = vec!["index".to_string(), "true_label".to_string()];
    for b in 0..assignment.ballots_per_sample {
        header.push(format!("ballot_{b}"));
    }
    header.push("top_similarity".into());
    header.push("final_label".into());
    w.write_record(&header)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for i in 0..assignment.labels.len() {
        let mut row = vec![
            i.to_string(),
            target.samples[i]
                .label
                .map(|l| l.to_string())
                .unwrap_or_else(|| "-".into()),
        ];
        for b in &assignment.ballots[i] {
            row.push(b.to_string());
        }
        row.push(format!("{:.6}", assignment.top_similarity[i]));
        row.push(assignment.labels[i].to_string());
        w.write_record(&row)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;

    #[test]
    fn single_sample_prototype_is_its_feature() {
        let features = arr2(&[[1.0, 0.0, 2.0]]);
        let probs = arr2(&[[1.0, 0.0]]);
        let p = compute_prototypes(&features, &probs).unwrap();
        assert_eq!(p.centers.row(0).to_vec(), vec![1.0, 0.0, 2.0]);
        assert!(p.empty[1]);
    }

    #[test]
    fn delta_probabilities_give_per_class_features() {
        let features = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let probs = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let p = compute_prototypes(&features, &probs).unwrap();
        assert_eq!(p.centers.row(0).to_vec(), vec![1.0, 2.0]);
        assert_eq!(p.centers.row(1).to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn prototypes_match_scalar_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(1..=20);
            let c = rng.random_range(2..=5);
            let d = rng.random_range(1..=6);
            let features = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
            let mut probs = Array2::from_shape_fn((n, c), |_| rng.random_range(0.01..1.0));
            for mut row in probs.rows_mut() {
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            let got = compute_prototypes(&features, &probs).unwrap();
            for cc in 0..c {
                let mass: f64 = (0..n).map(|i| probs[[i, cc]]).sum();
                for dd in 0..d {
                    let want: f64 =
                        (0..n).map(|i| probs[[i, cc]] * features[[i, dd]]).sum::<f64>() / mass;
                    assert!((got.centers[[cc, dd]] - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn initial_label_self_similarity() {
        let features = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let probs = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let protos = compute_prototypes(&features, &probs).unwrap();
        let (label, sim) = initial_label(features.row(0), &protos, 0.6).unwrap();
        assert_eq!(label, 0);
        assert!((sim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn initial_label_threshold_cases() {
        // prototypes along axes; feature at a known angle
        let features = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let probs = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let protos = compute_prototypes(&features, &probs).unwrap();
        // 45 degrees: similarity 0.707 to both; argmax tie breaks to class 0
        let f = ndarray::arr1(&[1.0, 1.0]);
        let (label, _) = initial_label(f.view(), &protos, 0.6).unwrap();
        assert_eq!(label, 0);
        let (label, _) = initial_label(f.view(), &protos, 0.71).unwrap();
        assert_eq!(label, UNRELIABLE);
    }

    #[test]
    fn zero_norm_feature_is_unreliable() {
        let features = arr2(&[[1.0, 0.0]]);
        let probs = arr2(&[[1.0, 0.0]]);
        let protos = compute_prototypes(&features, &probs).unwrap();
        let f = ndarray::arr1(&[0.0, 0.0]);
        let (label, _) = initial_label(f.view(), &protos, 0.6).unwrap();
        assert_eq!(label, UNRELIABLE);
    }

    #[test]
    fn vote_examples() {
        assert_eq!(vote(&[1, 1, 1, -1]), 1);
        assert_eq!(vote(&[1, 1, -1, -1]), UNRELIABLE);
        assert_eq!(vote(&[0, 0, 1, 1]), UNRELIABLE);
        assert_eq!(vote(&[2]), 2);
        assert_eq!(vote(&[-1]), UNRELIABLE);
    }

    /// Exhaustive brute-force counter used as the voting oracle.
    pub fn vote_oracle(ballots: &[i64]) -> i64 {
        let m = ballots.len();
        let classes: Vec<i64> = {
            let mut v: Vec<i64> = ballots.iter().copied().filter(|&b| b >= 0).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut winner = UNRELIABLE;
        for &k in &classes {
            let count = ballots.iter().filter(|&&b| b == k).count();
            if 2 * count > m {
                winner = k;
            }
        }
        winner
    }

    #[test]
    fn vote_matches_oracle_exhaustively() {
        // all tuples with m in 1..=5, alphabet {-1, 0, 1, 2}
        let alphabet = [-1i64, 0, 1, 2];
        for m in 1..=5usize {
            let mut ballots = vec![0usize; m];
            loop {
                let tuple: Vec<i64> = ballots.iter().map(|&i| alphabet[i]).collect();
                assert_eq!(vote(&tuple), vote_oracle(&tuple), "tuple {tuple:?}");
                // odometer increment
                let mut k = 0;
                loop {
                    ballots[k] += 1;
                    if ballots[k] < alphabet.len() {
                        break;
                    }
                    ballots[k] = 0;
                    k += 1;
                    if k == m {
                        break;
                    }
                }
                if k == m {
                    break;
                }
            }
        }
    }

    fn toy_dataset(labels: &[i64]) -> DomainDataset {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, _)| crate::dataset::SignalSample {
                waveform: Array1::from_shape_fn(16, |t| (i * 16 + t) as f64),
                label: None,
                domain_id: "T".into(),
                source_file: format!("toy:{i}"),
            })
            .collect();
        DomainDataset {
            samples,
            class_count: 3,
            domain_id: "T".into(),
        }
    }

    fn toy_assignment(labels: &[i64]) -> PseudoLabelAssignment {
        PseudoLabelAssignment {
            labels: labels.to_vec(),
            top_similarity: vec![0.9; labels.len()],
            ballots: labels.iter().map(|&l| vec![l]).collect(),
            ballots_per_sample: 1,
        }
    }

    #[test]
    fn rebalance_equalizes_reliable_classes() {
        let labels = vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1, -1, -1, -1];
        let ds = toy_dataset(&labels);
        let assignment = toy_assignment(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = rebalance(&ds, &assignment, &AugmentConfig::default(), &mut rng).unwrap();
        assert_eq!(set.reliable_per_class, vec![8, 8, 0]);
        assert_eq!(set.unreliable_count, 3);
        let duplicates: Vec<_> = set.entries.iter().filter(|e| e.is_duplicate).collect();
        assert_eq!(duplicates.len(), 6);
        assert!(duplicates.iter().all(|e| e.augmentation.is_some()));
        assert!(duplicates.iter().all(|e| e.label == 1));
    }

    #[test]
    fn rebalance_balanced_input_adds_nothing() {
        let labels = vec![0, 1, 0, 1];
        let ds = toy_dataset(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = rebalance(&ds, &toy_assignment(&labels), &AugmentConfig::default(), &mut rng)
            .unwrap();
        assert!(set.entries.iter().all(|e| !e.is_duplicate));
        assert_eq!(set.entries.len(), 4);
    }

    #[test]
    fn rebalance_without_reliable_labels_errors() {
        let labels = vec![-1, -1];
        let ds = toy_dataset(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = rebalance(&ds, &toy_assignment(&labels), &AugmentConfig::default(), &mut rng)
            .unwrap_err();
        assert!(err.to_string().contains("no reliable pseudo-labels"));
    }

    proptest! {
        #[test]
        fn rebalance_invariants_hold(
            labels in proptest::collection::vec(-1i64..3, 1..40),
            seed in 0u64..500,
        ) {
            prop_assume!(labels.iter().any(|&l| l >= 0));
            let ds = toy_dataset(&labels);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = rebalance(&ds, &toy_assignment(&labels), &AugmentConfig::default(), &mut rng)
                .unwrap();
            let max = *set.reliable_per_class.iter().max().unwrap();
            for (&count, had_any) in set
                .reliable_per_class
                .iter()
                .zip((0..3).map(|c| labels.iter().any(|&l| l == c)))
            {
                if had_any {
                    prop_assert_eq!(count, max);
                } else {
                    prop_assert_eq!(count, 0);
                }
            }
            let unreliable_in = labels.iter().filter(|&&l| l < 0).count();
            prop_assert_eq!(set.unreliable_count, unreliable_in);
            let unreliable_out = set.entries.iter().filter(|e| e.label < 0).count();
            prop_assert_eq!(unreliable_out, unreliable_in);
        }
    }
}

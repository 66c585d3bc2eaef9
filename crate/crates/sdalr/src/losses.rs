//! Training objectives: source cross-entropy, label-smoothing cross-entropy
//! on reliable pseudo-labels, entropy maximization on unreliable ones,
//! information maximization, and the cohesion/repulsion feature loss.
//!
//! Every loss comes in a `*_grad` form returning the analytic gradient with
//! respect to its direct inputs (probability rows, or features for the
//! cohesion/repulsion term); those gradients are verified against central
//! finite differences in the acceptance suite.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Sentinel pseudo-label for samples the voting strategy rejects.
pub const UNRELIABLE: i64 = -1;

/// Floor applied inside every logarithm; one-hot rows at convergence would
/// otherwise produce -inf.
pub const LOG_EPS: f64 = 1e-12;

#[inline]
fn ln_clamped(p: f64) -> f64 {
    p.max(LOG_EPS).ln()
}

/// d/dp of `p -> ln(max(p, eps))`: zero below the clamp.
#[inline]
fn ln_clamped_dp(p: f64) -> f64 {
    if p > LOG_EPS {
        1.0 / p
    } else {
        0.0
    }
}

/// Per-batch loss components. `l_car` holds the training form (negated
/// cohesion/repulsion objective) so the total is a plain sum.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct LossBundle {
    pub l_lsc: f64,
    pub l_uem: f64,
    pub l_ent: f64,
    pub l_div: f64,
    pub l_im: f64,
    pub l_car: f64,
    pub l_total: f64,
    pub reliable: usize,
    pub unreliable: usize,
}

impl LossBundle {
    pub fn assert_finite(&self) -> Result<()> {
        for (name, v) in [
            ("l_lsc", self.l_lsc),
            ("l_uem", self.l_uem),
            ("l_ent", self.l_ent),
            ("l_div", self.l_div),
            ("l_im", self.l_im),
            ("l_car", self.l_car),
            ("l_total", self.l_total),
        ] {
            if !v.is_finite() {
                return Err(Error::Training(format!("{name} is not finite: {v}")));
            }
        }
        Ok(())
    }
}

/// Softmax rows with the usual max-shift for stability.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    probs
}

/// Chain rule through softmax: given dL/dp, return dL/dlogits.
pub fn softmax_backward(probs: &Array2<f64>, grad_probs: &Array2<f64>) -> Array2<f64> {
    let mut grad = Array2::zeros(probs.raw_dim());
    for i in 0..probs.shape()[0] {
        let p = probs.row(i);
        let g = grad_probs.row(i);
        let inner: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for c in 0..probs.shape()[1] {
            grad[[i, c]] = p[c] * (g[c] - inner);
        }
    }
    grad
}

fn check_probs(probs: &Array2<f64>) -> Result<()> {
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("probability matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Mean cross-entropy against hard labels.
pub fn source_ce(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    Ok(source_ce_grad(probs, labels)?.0)
}

pub fn source_ce_grad(probs: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_probs(probs)?;
    let (batch, classes) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "got {} labels for batch of {batch}",
            labels.len()
        )));
    }
    let mut grad = Array2::zeros(probs.raw_dim());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Data(format!("label {y} out of range [0,{classes})")));
        }
        let p = probs[[i, y]];
        total -= ln_clamped(p);
        grad[[i, y]] = -ln_clamped_dp(p) / batch as f64;
    }
    Ok((total / batch as f64, grad))
}

/// Smoothed one-hot targets: `(1 - alpha) * onehot + alpha / C`.
pub fn smooth_targets(labels: &[i64], classes: usize, alpha: f64) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0,1)")));
    }
    let mut targets = Array2::from_elem((labels.len(), classes), alpha / classes as f64);
    for (i, &y) in labels.iter().enumerate() {
        if y < 0 || y as usize >= classes {
            return Err(Error::Data(format!(
                "smooth_targets requires reliable labels in [0,{classes}), got {y}"
            )));
        }
        targets[[i, y as usize]] += 1.0 - alpha;
    }
    Ok(targets)
}

/// Label-smoothing cross-entropy over reliable rows; 0 if none are reliable.
pub fn lsc_loss(probs: &Array2<f64>, pseudo: &[i64], alpha: f64) -> Result<f64> {
    Ok(lsc_loss_grad(probs, pseudo, alpha)?.0)
}

pub fn lsc_loss_grad(
    probs: &Array2<f64>,
    pseudo: &[i64],
    alpha: f64,
) -> Result<(f64, Array2<f64>)> {
    check_probs(probs)?;
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0,1)")));
    }
    let (batch, classes) = (probs.shape()[0], probs.shape()[1]);
    debug_assert_eq!(pseudo.len(), batch);
    let reliable: Vec<usize> = (0..batch).filter(|&i| pseudo[i] != UNRELIABLE).collect();
    let mut grad = Array2::zeros(probs.raw_dim());
    if reliable.is_empty() {
        return Ok((0.0, grad));
    }
    let n = reliable.len() as f64;
    let uniform = alpha / classes as f64;
    let mut total = 0.0;
    for &i in &reliable {
        let y = pseudo[i] as usize;
        if y >= classes {
            return Err(Error::Data(format!("pseudo-label {y} out of range")));
        }
        for c in 0..classes {
            let q = uniform + if c == y { 1.0 - alpha } else { 0.0 };
            let p = probs[[i, c]];
            total -= q * ln_clamped(p);
            grad[[i, c]] = -q * ln_clamped_dp(p) / n;
        }
    }
    Ok((total / n, grad))
}

/// Mean of `sum_c p log p` over unreliable rows (negative entropy; driving it
/// down pushes those predictions toward uniform). 0 if none are unreliable.
pub fn uem_loss(probs: &Array2<f64>, pseudo: &[i64]) -> Result<f64> {
    Ok(uem_loss_grad(probs, pseudo)?.0)
}

pub fn uem_loss_grad(probs: &Array2<f64>, pseudo: &[i64]) -> Result<(f64, Array2<f64>)> {
    check_probs(probs)?;
    let batch = probs.shape()[0];
    debug_assert_eq!(pseudo.len(), batch);
    let unreliable: Vec<usize> = (0..batch).filter(|&i| pseudo[i] == UNRELIABLE).collect();
    let mut grad = Array2::zeros(probs.raw_dim());
    if unreliable.is_empty() {
        return Ok((0.0, grad));
    }
    let n = unreliable.len() as f64;
    let mut total = 0.0;
    for &i in &unreliable {
        for c in 0..probs.shape()[1] {
            let p = probs[[i, c]];
            total += p * ln_clamped(p);
            grad[[i, c]] = (ln_clamped(p) + p * ln_clamped_dp(p)) / n;
        }
    }
    Ok((total / n, grad))
}

/// Information maximization over reliable rows:
/// entropy term (mean per-row entropy, to be minimized) and diversity term
/// (`sum_c phat log phat` of the batch-mean prediction, minimized at uniform).
pub fn im_loss(probs: &Array2<f64>, pseudo: &[i64]) -> Result<(f64, f64)> {
    let (l_ent, l_div, _, _) = im_loss_grad(probs, pseudo)?;
    Ok((l_ent, l_div))
}

pub fn im_loss_grad(
    probs: &Array2<f64>,
    pseudo: &[i64],
) -> Result<(f64, f64, Array2<f64>, Array2<f64>)> {
    check_probs(probs)?;
    let (batch, classes) = (probs.shape()[0], probs.shape()[1]);
    debug_assert_eq!(pseudo.len(), batch);
    let reliable: Vec<usize> = (0..batch).filter(|&i| pseudo[i] != UNRELIABLE).collect();
    let mut grad_ent = Array2::zeros(probs.raw_dim());
    let mut grad_div = Array2::zeros(probs.raw_dim());
    if reliable.is_empty() {
        return Ok((0.0, 0.0, grad_ent, grad_div));
    }
    let n = reliable.len() as f64;

    let mut l_ent = 0.0;
    for &i in &reliable {
        for c in 0..classes {
            let p = probs[[i, c]];
            l_ent -= p * ln_clamped(p);
            grad_ent[[i, c]] = -(ln_clamped(p) + p * ln_clamped_dp(p)) / n;
        }
    }
    l_ent /= n;

    let mut mean = Array1::zeros(classes);
    for &i in &reliable {
        mean = mean + probs.row(i);
    }
    mean.mapv_inplace(|v| v / n);
    let mut l_div = 0.0;
    for c in 0..classes {
        let m = mean[c];
        l_div += m * ln_clamped(m);
        let d = (ln_clamped(m) + m * ln_clamped_dp(m)) / n;
        for &i in &reliable {
            grad_div[[i, c]] = d;
        }
    }
    Ok((l_ent, l_div, grad_ent, grad_div))
}

/// Cohesion/repulsion objective on batch features. For each reliable anchor,
/// same-label reliable rows attract and different-label ones repel (scaled by
/// `beta`). Returns the training form: the negated objective, averaged over
/// reliable anchors. 0 with fewer than two reliable rows.
pub fn car_loss(features: &Array2<f64>, pseudo: &[i64], beta: f64, normalize: bool) -> Result<f64> {
    Ok(car_loss_grad(features, pseudo, beta, normalize)?.0)
}

pub fn car_loss_grad(
    features: &Array2<f64>,
    pseudo: &[i64],
    beta: f64,
    normalize: bool,
) -> Result<(f64, Array2<f64>)> {
    if beta <= 0.0 {
        return Err(Error::Config(format!("beta {beta} must be > 0")));
    }
    let (batch, dim) = (features.shape()[0], features.shape()[1]);
    debug_assert_eq!(pseudo.len(), batch);
    let reliable: Vec<usize> = (0..batch).filter(|&i| pseudo[i] != UNRELIABLE).collect();
    let mut grad: Array2<f64> = Array2::zeros(features.raw_dim());
    if reliable.len() < 2 {
        return Ok((0.0, grad));
    }
    let n_anchor = reliable.len() as f64;

    // Work on unit-norm rows when requested; chain back through the
    // normalization at the end.
    let mut norms = vec![1.0; batch];
    let mut z = features.clone();
    if normalize {
        for &i in &reliable {
            let norm = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-30);
            norms[i] = norm;
            z.row_mut(i).mapv_inplace(|v| v / norm);
        }
    }

    // Pair coefficient: +1 same label, -beta different label; symmetric.
    let mut objective = 0.0;
    let mut grad_z: Array2<f64> = Array2::zeros(features.raw_dim());
    for (a, &i) in reliable.iter().enumerate() {
        for &j in reliable.iter().skip(a + 1) {
            let coeff = if pseudo[i] == pseudo[j] { 1.0 } else { -beta };
            let dot: f64 = z.row(i).iter().zip(z.row(j).iter()).map(|(x, y)| x * y).sum();
            // the pair contributes to both anchors
            objective += 2.0 * coeff * dot;
            for d in 0..dim {
                grad_z[[i, d]] += 2.0 * coeff * z[[j, d]] / n_anchor;
                grad_z[[j, d]] += 2.0 * coeff * z[[i, d]] / n_anchor;
            }
        }
    }
    objective /= n_anchor;

    // Training form: minimize the negation.
    let loss = -objective;
    for &i in &reliable {
        if normalize {
            let zi = z.row(i);
            let gi = grad_z.row(i);
            let dot: f64 = gi.iter().zip(zi.iter()).map(|(a, b)| a * b).sum();
            for d in 0..dim {
                let projected: f64 = gi[d] - dot * zi[d];
                grad[[i, d]] = -projected / norms[i];
            }
        } else {
            for d in 0..dim {
                grad[[i, d]] = -grad_z[[i, d]];
            }
        }
    }
    Ok((loss, grad))
}

/// Assembles the bundle; `l_total` is the plain unit-weight sum that the
/// optimizer minimizes.
pub fn total_loss(
    l_lsc: f64,
    l_uem: f64,
    l_ent: f64,
    l_div: f64,
    l_car: f64,
    reliable: usize,
    unreliable: usize,
) -> LossBundle {
    let l_im = l_ent + l_div;
    LossBundle {
        l_lsc,
        l_uem,
        l_ent,
        l_div,
        l_im,
        l_car,
        l_total: l_lsc + l_uem + l_im + l_car,
        reliable,
        unreliable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn uniform_probs(batch: usize, classes: usize) -> Array2<f64> {
        Array2::from_elem((batch, classes), 1.0 / classes as f64)
    }

    #[test]
    fn source_ce_perfect_prediction_is_zero() {
        let mut probs = Array2::zeros((1, 4));
        probs[[0, 2]] = 1.0;
        let l = source_ce(&probs, &[2]).unwrap();
        assert!(l.abs() <= 1e-11);
    }

    #[test]
    fn source_ce_uniform_is_ln_c() {
        let l = source_ce(&uniform_probs(3, 8), &[0, 5, 7]).unwrap();
        assert!((l - (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn source_ce_is_batch_mean() {
        let probs = arr2(&[[0.7, 0.3], [0.2, 0.8]]);
        let l = source_ce(&probs, &[0, 1]).unwrap();
        let expect = (-(0.7f64.ln()) - 0.8f64.ln()) / 2.0;
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn source_ce_rejects_bad_label() {
        let probs = uniform_probs(1, 4);
        assert!(matches!(source_ce(&probs, &[4]), Err(Error::Data(_))));
    }

    #[test]
    fn smooth_targets_values() {
        let t = smooth_targets(&[3], 8, 0.1).unwrap();
        assert!((t[[0, 3]] - 0.9125).abs() < 1e-12);
        assert!((t[[0, 0]] - 0.0125).abs() < 1e-12);
        assert!((t.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_targets_alpha_zero_is_onehot() {
        let t = smooth_targets(&[1], 3, 0.0).unwrap();
        assert_eq!(t.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn smooth_targets_rejects_sentinel() {
        assert!(smooth_targets(&[UNRELIABLE], 3, 0.1).is_err());
    }

    #[test]
    fn lsc_empty_reliable_is_zero() {
        let probs = uniform_probs(3, 4);
        let l = lsc_loss(&probs, &[-1, -1, -1], 0.1).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn lsc_equal_probability_analytic() {
        let probs = uniform_probs(1, 2);
        for label in [0, 1] {
            let l = lsc_loss(&probs, &[label], 0.1).unwrap();
            assert!((l - (2.0f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn lsc_alpha_zero_matches_source_ce() {
        let probs = arr2(&[[0.6, 0.3, 0.1], [0.1, 0.1, 0.8], [0.25, 0.5, 0.25]]);
        let pseudo = [0i64, 2, 1];
        let hard: Vec<usize> = pseudo.iter().map(|&v| v as usize).collect();
        let a = lsc_loss(&probs, &pseudo, 0.0).unwrap();
        let b = source_ce(&probs, &hard).unwrap();
        assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn lsc_matches_scalar_oracle_on_batch() {
        // independent scalar route: sum over samples and classes by hand
        let probs: Array2<f64> = arr2(&[
            [0.5, 0.2, 0.3],
            [0.1, 0.7, 0.2],
            [0.3, 0.3, 0.4],
            [0.05, 0.9, 0.05],
            [0.6, 0.1, 0.3],
        ]);
        let pseudo = [0i64, 1, -1, 2, 0];
        let alpha = 0.1;
        let mut expect = 0.0f64;
        let mut count = 0.0f64;
        for i in 0..5 {
            if pseudo[i] < 0 {
                continue;
            }
            count += 1.0;
            for c in 0..3 {
                let q = if c == pseudo[i] as usize {
                    (1.0 - alpha) + alpha / 3.0
                } else {
                    alpha / 3.0
                };
                expect -= q * probs[[i, c]].ln();
            }
        }
        expect /= count;
        let l = lsc_loss(&probs, &pseudo, alpha).unwrap();
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn uem_uniform_row_analytic() {
        let probs = uniform_probs(1, 8);
        let l = uem_loss(&probs, &[-1]).unwrap();
        assert!((l + (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn uem_onehot_near_zero() {
        let mut probs = Array2::zeros((1, 4));
        probs[[0, 1]] = 1.0;
        let l = uem_loss(&probs, &[-1]).unwrap();
        assert!(l.abs() < 1e-9);
    }

    #[test]
    fn uem_all_reliable_is_zero() {
        let probs = uniform_probs(2, 4);
        assert_eq!(uem_loss(&probs, &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn im_analytic_extremes() {
        // one-hot rows evenly spread: ent ~ 0, div = -ln C
        let classes = 4;
        let mut probs = Array2::zeros((4, classes));
        for i in 0..4 {
            probs[[i, i]] = 1.0;
        }
        let (ent, div) = im_loss(&probs, &[0, 1, 2, 3]).unwrap();
        assert!(ent.abs() < 1e-9);
        assert!((div + (classes as f64).ln()).abs() < 1e-9);

        // uniform rows: ent = ln C, div = -ln C
        let probs = uniform_probs(4, classes);
        let (ent, div) = im_loss(&probs, &[0, 1, 2, 3]).unwrap();
        assert!((ent - (classes as f64).ln()).abs() < 1e-12);
        assert!((div + (classes as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn im_matches_scalar_oracle() {
        let probs: Array2<f64> = arr2(&[
            [0.5, 0.2, 0.3],
            [0.1, 0.7, 0.2],
            [0.3, 0.3, 0.4],
            [0.05, 0.9, 0.05],
        ]);
        let pseudo = [0i64, -1, 2, 1];
        let reliable = [0usize, 2, 3];
        let mut ent = 0.0f64;
        for &i in &reliable {
            for c in 0..3 {
                ent -= probs[[i, c]] * probs[[i, c]].ln();
            }
        }
        ent /= 3.0;
        let mut div = 0.0f64;
        for c in 0..3 {
            let m = reliable.iter().map(|&i| probs[[i, c]]).sum::<f64>() / 3.0;
            div += m * m.ln();
        }
        let (l_ent, l_div) = im_loss(&probs, &pseudo).unwrap();
        assert!((l_ent - ent).abs() < 1e-12);
        assert!((l_div - div).abs() < 1e-12);
    }

    #[test]
    fn div_ignores_unreliable_rows() {
        let base = arr2(&[[0.5, 0.2, 0.3], [0.1, 0.7, 0.2]]);
        let (_, div_a) = im_loss(&base, &[0, 1]).unwrap();
        let extended = arr2(&[
            [0.5, 0.2, 0.3],
            [0.1, 0.7, 0.2],
            [0.9, 0.05, 0.05],
            [0.2, 0.2, 0.6],
        ]);
        let (_, div_b) = im_loss(&extended, &[0, 1, -1, -1]).unwrap();
        assert!((div_a - div_b).abs() < 1e-12);
    }

    #[test]
    fn car_identical_pair_analytic() {
        let features = arr2(&[[1.0, 0.0], [1.0, 0.0]]);
        let (loss, _) = car_loss_grad(&features, &[0, 0], 0.6, true).unwrap();
        assert!((loss + 1.0).abs() < 1e-12); // objective 1, training -1
    }

    #[test]
    fn car_orthogonal_background_is_zero() {
        let features = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let (loss, _) = car_loss_grad(&features, &[0, 1], 0.6, true).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn car_fewer_than_two_reliable_is_zero() {
        let features = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let (loss, grad) = car_loss_grad(&features, &[0, -1], 0.6, true).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn car_matches_pairwise_scalar_oracle() {
        let features = arr2(&[
            [0.3, -0.7, 0.2],
            [1.1, 0.4, -0.3],
            [-0.2, 0.9, 0.5],
            [0.6, 0.6, 0.6],
            [-1.0, 0.2, 0.1],
            [0.4, -0.4, 0.9],
        ]);
        let pseudo = [0i64, 1, 0, -1, 1, 2];
        let beta = 0.6;
        // oracle: O(B^2) loop over anchors in normalized space
        let reliable: Vec<usize> = (0..6).filter(|&i| pseudo[i] >= 0).collect();
        let normed: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let n: f64 = features.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                features.row(i).iter().map(|v| v / n).collect()
            })
            .collect();
        let mut objective = 0.0;
        for &i in &reliable {
            for &j in &reliable {
                if i == j {
                    continue;
                }
                let dot: f64 = normed[i].iter().zip(&normed[j]).map(|(a, b)| a * b).sum();
                if pseudo[i] == pseudo[j] {
                    objective += dot;
                } else {
                    objective -= beta * dot;
                }
            }
        }
        objective /= reliable.len() as f64;
        let (loss, _) = car_loss_grad(&features, &pseudo, beta, true).unwrap();
        assert!((loss + objective).abs() < 1e-12);
    }

    #[test]
    fn car_invariant_to_batch_permutation() {
        let features = arr2(&[
            [0.3, -0.7, 0.2],
            [1.1, 0.4, -0.3],
            [-0.2, 0.9, 0.5],
            [0.6, 0.6, 0.6],
        ]);
        let pseudo = [0i64, 1, 0, 1];
        let (a, _) = car_loss_grad(&features, &pseudo, 0.6, true).unwrap();
        let perm = [2usize, 0, 3, 1];
        let permuted = Array2::from_shape_fn((4, 3), |(i, j)| features[[perm[i], j]]);
        let plabels: Vec<i64> = perm.iter().map(|&i| pseudo[i]).collect();
        let (b, _) = car_loss_grad(&permuted, &plabels, 0.6, true).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn total_is_component_sum() {
        let bundle = total_loss(0.5, -0.2, 0.3, 0.0, -0.1, 3, 1);
        assert!((bundle.l_total - 0.5).abs() < 1e-12);
        assert!((bundle.l_im - 0.3).abs() < 1e-12);
    }

    #[test]
    fn total_with_empty_reliable_is_uem_only() {
        let bundle = total_loss(0.0, -0.7, 0.0, 0.0, 0.0, 0, 4);
        assert!((bundle.l_total + 0.7).abs() < 1e-12);
    }

    #[test]
    fn uem_gradient_steps_increase_entropy() {
        // free logit vector driven through uem: entropy must rise monotonically
        let mut logits = arr2(&[[2.0, -1.0, 0.5, 0.3]]);
        let pseudo = [UNRELIABLE];
        let mut last_entropy = -f64::INFINITY;
        for _ in 0..100 {
            let probs = softmax(&logits);
            let entropy: f64 = -probs.iter().map(|&p| p * ln_clamped(p)).sum::<f64>();
            assert!(entropy >= last_entropy - 1e-12, "entropy decreased");
            last_entropy = entropy;
            let (_, grad_p) = uem_loss_grad(&probs, &pseudo).unwrap();
            let grad_z = softmax_backward(&probs, &grad_p);
            logits = &logits - &(grad_z * 0.1);
        }
        // after 100 steps the row is near the entropy maximum ln 4
        assert!(last_entropy > 0.97 * (4.0f64).ln(), "entropy {last_entropy}");
    }
}

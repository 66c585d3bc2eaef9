//! Fully-connected layers: plain, and weight-normalized for the classifier
//! head (weight rows re-parameterized as magnitude x unit direction).

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{init, join_name, ParamSlot, Visit};

#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Array2<f64>, // [out, in]
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    cache: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let weight = init::xavier_uniform(rng, out_features, in_features);
        Linear {
            in_features,
            out_features,
            grad_weight: Array2::zeros(weight.raw_dim()),
            grad_bias: Array1::zeros(out_features),
            bias: Array1::zeros(out_features),
            weight,
            cache: None,
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn forward_t(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = self.apply(x);
        self.cache = Some(x.clone());
        y
    }

    pub fn forward_e(&self, x: &Array2<f64>) -> Array2<f64> {
        self.apply(x)
    }

    pub fn backward(&mut self, grad_out: &Array2<f64>) -> Array2<f64> {
        let x = self.cache.take().expect("linear backward without forward");
        self.grad_weight = &self.grad_weight + &grad_out.t().dot(&x);
        self.grad_bias = &self.grad_bias + &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight)
    }
}

impl Visit for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamSlot<'_>)) {
        f(ParamSlot {
            name: join_name(prefix, "weight"),
            shape: self.weight.shape().to_vec(),
            trainable: true,
            value: self.weight.as_slice_mut().expect("contiguous"),
            grad: Some(self.grad_weight.as_slice_mut().expect("contiguous")),
        });
        f(ParamSlot {
            name: join_name(prefix, "bias"),
            shape: vec![self.out_features],
            trainable: true,
            value: self.bias.as_slice_mut().expect("contiguous"),
            grad: Some(self.grad_bias.as_slice_mut().expect("contiguous")),
        });
    }
}

/// Weight-normalized linear layer. Each effective weight row is
/// `g * v / ||v||`; rescaling `v` leaves the forward output unchanged.
#[derive(Debug, Clone)]
pub struct WnLinear {
    pub in_features: usize,
    pub out_features: usize,
    pub direction: Array2<f64>, // v, [out, in]
    pub magnitude: Array1<f64>, // g, [out]
    pub bias: Array1<f64>,
    pub grad_direction: Array2<f64>,
    pub grad_magnitude: Array1<f64>,
    pub grad_bias: Array1<f64>,
    cache: Option<WnCache>,
}

#[derive(Debug, Clone)]
struct WnCache {
    input: Array2<f64>,
    effective: Array2<f64>,
}

impl WnLinear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let direction = init::xavier_uniform(rng, out_features, in_features);
        // g starts at ||v|| so the initial effective weight equals v.
        let magnitude = Array1::from_iter(
            direction
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()),
        );
        WnLinear {
            in_features,
            out_features,
            grad_direction: Array2::zeros(direction.raw_dim()),
            grad_magnitude: Array1::zeros(out_features),
            grad_bias: Array1::zeros(out_features),
            bias: Array1::zeros(out_features),
            direction,
            magnitude,
            cache: None,
        }
    }

    /// Effective weight matrix `g * v / ||v||` per row.
    pub fn effective_weight(&self) -> Array2<f64> {
        let mut w = self.direction.clone();
        for (o, mut row) in w.rows_mut().into_iter().enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-30);
            let scale = self.magnitude[o] / norm;
            row.mapv_inplace(|v| v * scale);
        }
        w
    }

    pub fn forward_t(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let effective = self.effective_weight();
        let y = x.dot(&effective.t()) + &self.bias;
        self.cache = Some(WnCache {
            input: x.clone(),
            effective,
        });
        y
    }

    pub fn forward_e(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.effective_weight().t()) + &self.bias
    }

    pub fn backward(&mut self, grad_out: &Array2<f64>) -> Array2<f64> {
        let cache = self.cache.take().expect("wn backward without forward");
        let grad_effective = grad_out.t().dot(&cache.input); // [out, in]
        self.grad_bias = &self.grad_bias + &grad_out.sum_axis(Axis(0));

        for o in 0..self.out_features {
            let v = self.direction.row(o);
            let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt().max(1e-30);
            let ge = grad_effective.row(o);
            let dot: f64 = ge
                .iter()
                .zip(v.iter())
                .map(|(a, b)| a * b / norm)
                .sum();
            self.grad_magnitude[o] += dot;
            let scale = self.magnitude[o] / norm;
            for i in 0..self.in_features {
                let vhat = v[i] / norm;
                self.grad_direction[[o, i]] += scale * (ge[i] - dot * vhat);
            }
        }
        grad_out.dot(&cache.effective)
    }
}

impl Visit for WnLinear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamSlot<'_>)) {
        f(ParamSlot {
            name: join_name(prefix, "direction"),
            shape: self.direction.shape().to_vec(),
            trainable: true,
            value: self.direction.as_slice_mut().expect("contiguous"),
            grad: Some(self.grad_direction.as_slice_mut().expect("contiguous")),
        });
        f(ParamSlot {
            name: join_name(prefix, "magnitude"),
            shape: vec![self.out_features],
            trainable: true,
            value: self.magnitude.as_slice_mut().expect("contiguous"),
            grad: Some(self.grad_magnitude.as_slice_mut().expect("contiguous")),
        });
        f(ParamSlot {
            name: join_name(prefix, "bias"),
            shape: vec![self.out_features],
            trainable: true,
            value: self.bias.as_slice_mut().expect("contiguous"),
            grad: Some(self.grad_bias.as_slice_mut().expect("contiguous")),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rescaling_direction_leaves_output_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = WnLinear::new(5, 3, &mut rng);
        let x = arr2(&[[0.3, -1.0, 0.7, 0.2, 1.5], [2.0, 0.1, -0.4, 0.9, -1.1]]);
        let y1 = layer.forward_e(&x);
        layer.direction.mapv_inplace(|v| v * 17.3);
        let y2 = layer.forward_e(&x);
        for (a, b) in y1.iter().zip(y2.iter()) {
            let rel = (a - b).abs() / a.abs().max(1e-12);
            assert!(rel < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = Linear::new(4, 3, &mut rng);
        let x = arr2(&[[0.5, -0.3, 1.0, 0.2], [1.5, 0.3, -0.8, -0.1]]);
        let y = layer.forward_t(&x);
        let gx = layer.backward(&y);

        let eps = 1e-6;
        let loss = |l: &Linear, x: &Array2<f64>| -> f64 {
            l.forward_e(x).iter().map(|v| v * v / 2.0).sum()
        };
        for idx in [[0, 0], [1, 3], [1, 1]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * eps);
            assert!((gx[idx] - fd).abs() < 1e-6);
        }
        for idx in [[0, 0], [2, 3]] {
            let mut lp = layer.clone();
            lp.weight[idx] += eps;
            let mut lm = layer.clone();
            lm.weight[idx] -= eps;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * eps);
            assert!((layer.grad_weight[idx] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn wn_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layer = WnLinear::new(4, 3, &mut rng);
        let x = arr2(&[[0.5, -0.3, 1.0, 0.2], [1.5, 0.3, -0.8, -0.1]]);
        let y = layer.forward_t(&x);
        let gx = layer.backward(&y);

        let eps = 1e-6;
        let loss = |l: &WnLinear, x: &Array2<f64>| -> f64 {
            l.forward_e(x).iter().map(|v| v * v / 2.0).sum()
        };
        for idx in [[0, 0], [1, 3]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * eps);
            assert!((gx[idx] - fd).abs() < 1e-6);
        }
        for idx in [[0, 0], [2, 2], [1, 1]] {
            let mut lp = layer.clone();
            lp.direction[idx] += eps;
            let mut lm = layer.clone();
            lm.direction[idx] -= eps;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * eps);
            assert!(
                (layer.grad_direction[idx] - fd).abs() < 1e-6,
                "{} vs {fd}",
                layer.grad_direction[idx]
            );
        }
        for o in 0..3 {
            let mut lp = layer.clone();
            lp.magnitude[o] += eps;
            let mut lm = layer.clone();
            lm.magnitude[o] -= eps;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * eps);
            assert!((layer.grad_magnitude[o] - fd).abs() < 1e-6);
        }
    }
}

//! Batch normalization over the channel axis of `[batch, channels, len]`
//! activations, with a 2-D wrapper for fully-connected features.

use ndarray::{Array1, Array2, Array3, Axis};

use super::{join_name, ParamSlot, Visit};

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub grad_gamma: Array1<f64>,
    pub grad_beta: Array1<f64>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    normalized: Array3<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm1d {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNorm1d {
            channels,
            eps,
            momentum,
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            grad_gamma: Array1::zeros(channels),
            grad_beta: Array1::zeros(channels),
            cache: None,
        }
    }

    /// Training forward on `[B, C, L]`: batch statistics, running stats updated.
    pub fn forward3_t(&mut self, x: &Array3<f64>) -> Array3<f64> {
        let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        debug_assert_eq!(channels, self.channels);
        let m = (batch * len) as f64;

        let mut mean = Array1::zeros(channels);
        let mut var = Array1::zeros(channels);
        for c in 0..channels {
            let lane = x.index_axis(Axis(1), c);
            let mu = lane.sum() / m;
            let v = lane.iter().map(|&e| (e - mu) * (e - mu)).sum::<f64>() / m;
            mean[c] = mu;
            var[c] = v;
        }

        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut normalized = Array3::zeros((batch, channels, len));
        let mut y = Array3::zeros((batch, channels, len));
        for b in 0..batch {
            for c in 0..channels {
                for t in 0..len {
                    let n = (x[[b, c, t]] - mean[c]) * inv_std[c];
                    normalized[[b, c, t]] = n;
                    y[[b, c, t]] = self.gamma[c] * n + self.beta[c];
                }
            }
        }

        // Running variance follows the unbiased convention.
        let bessel = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for c in 0..channels {
            self.running_mean[c] =
                (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean[c];
            self.running_var[c] =
                (1.0 - self.momentum) * self.running_var[c] + self.momentum * var[c] * bessel;
        }

        self.cache = Some(BnCache {
            normalized,
            inv_std,
        });
        y
    }

    /// Inference forward: frozen running statistics, no state mutation.
    pub fn forward3_e(&self, x: &Array3<f64>) -> Array3<f64> {
        let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut y = Array3::zeros((batch, channels, len));
        for c in 0..channels {
            let inv = 1.0 / (self.running_var[c] + self.eps).sqrt();
            for b in 0..batch {
                for t in 0..len {
                    y[[b, c, t]] =
                        self.gamma[c] * (x[[b, c, t]] - self.running_mean[c]) * inv + self.beta[c];
                }
            }
        }
        y
    }

    pub fn backward3(&mut self, grad_out: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.take().expect("bn backward without forward");
        let (batch, channels, len) = (
            grad_out.shape()[0],
            grad_out.shape()[1],
            grad_out.shape()[2],
        );
        let m = (batch * len) as f64;
        let mut grad_in = Array3::zeros((batch, channels, len));

        for c in 0..channels {
            let mut sum_gy = 0.0;
            let mut sum_gy_n = 0.0;
            for b in 0..batch {
                for t in 0..len {
                    let gy = grad_out[[b, c, t]];
                    sum_gy += gy;
                    sum_gy_n += gy * cache.normalized[[b, c, t]];
                }
            }
            self.grad_beta[c] += sum_gy;
            self.grad_gamma[c] += sum_gy_n;

            let scale = self.gamma[c] * cache.inv_std[c] / m;
            for b in 0..batch {
                for t in 0..len {
                    let gy = grad_out[[b, c, t]];
                    grad_in[[b, c, t]] = scale
                        * (m * gy - sum_gy - cache.normalized[[b, c, t]] * sum_gy_n);
                }
            }
        }
        grad_in
    }

    pub fn forward2_t(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let x3 = x.clone().insert_axis(Axis(2));
        self.forward3_t(&x3).remove_axis(Axis(2))
    }

    pub fn forward2_e(&self, x: &Array2<f64>) -> Array2<f64> {
        let x3 = x.clone().insert_axis(Axis(2));
        self.forward3_e(&x3).remove_axis(Axis(2))
    }

    pub fn backward2(&mut self, grad_out: &Array2<f64>) -> Array2<f64> {
        let g3 = grad_out.clone().insert_axis(Axis(2));
        self.backward3(&g3).remove_axis(Axis(2))
    }
}

impl Visit for BatchNorm1d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamSlot<'_>)) {
        f(ParamSlot {
            name: join_name(prefix, "gamma"),
            shape: vec![self.channels],
            trainable: true,
            value: self.gamma.as_slice_mut().expect("contiguous"),
            grad: Some(self.grad_gamma.as_slice_mut().expect("contiguous")),
        });
        f(ParamSlot {
            name: join_name(prefix, "beta"),
            shape: vec![self.channels],
            trainable: true,
            value: self.beta.as_slice_mut().expect("contiguous"),
            grad: Some(self.grad_beta.as_slice_mut().expect("contiguous")),
        });
        f(ParamSlot {
            name: join_name(prefix, "running_mean"),
            shape: vec![self.channels],
            trainable: false,
            value: self.running_mean.as_slice_mut().expect("contiguous"),
            grad: None,
        });
        f(ParamSlot {
            name: join_name(prefix, "running_var"),
            shape: vec![self.channels],
            trainable: false,
            value: self.running_var.as_slice_mut().expect("contiguous"),
            grad: None,
        });
    }
}

//! Stateless activations and pooling, each with a small backward cache.

use ndarray::{Array2, Array3};
use rand::Rng;

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Array3<f64>>,
}

impl Relu {
    pub fn forward_t(&mut self, x: &Array3<f64>) -> Array3<f64> {
        let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn forward_e(x: &Array3<f64>) -> Array3<f64> {
        x.mapv(|v| v.max(0.0))
    }

    pub fn backward(&mut self, grad_out: &Array3<f64>) -> Array3<f64> {
        let mask = self.mask.take().expect("relu backward without forward");
        grad_out * &mask
    }
}

/// Mean over the temporal axis: `[B, C, L] -> [B, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    len: usize,
}

impl GlobalAvgPool {
    pub fn forward_t(&mut self, x: &Array3<f64>) -> Array2<f64> {
        self.len = x.shape()[2];
        Self::forward_e(x)
    }

    pub fn forward_e(x: &Array3<f64>) -> Array2<f64> {
        let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut y = Array2::zeros((batch, channels));
        for b in 0..batch {
            for c in 0..channels {
                let mut acc = 0.0;
                for t in 0..len {
                    acc += x[[b, c, t]];
                }
                y[[b, c]] = acc / len as f64;
            }
        }
        y
    }

    pub fn backward(&mut self, grad_out: &Array2<f64>) -> Array3<f64> {
        let (batch, channels) = (grad_out.shape()[0], grad_out.shape()[1]);
        let len = self.len;
        let mut gx = Array3::zeros((batch, channels, len));
        for b in 0..batch {
            for c in 0..channels {
                let g = grad_out[[b, c]] / len as f64;
                for t in 0..len {
                    gx[[b, c, t]] = g;
                }
            }
        }
        gx
    }
}

/// Inverted dropout on 2-D features; identity in eval mode.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<Array2<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate in [0,1)");
        Dropout { rate, mask: None }
    }

    pub fn forward_t(&mut self, x: &Array2<f64>, rng: &mut impl Rng) -> Array2<f64> {
        if self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let mask = Array2::from_shape_fn(
            (x.shape()[0], x.shape()[1]),
            |_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            },
        );
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn forward_e(x: &Array2<f64>) -> Array2<f64> {
        x.clone()
    }

    pub fn backward(&mut self, grad_out: &Array2<f64>) -> Array2<f64> {
        match self.mask.take() {
            Some(mask) => grad_out * &mask,
            None => grad_out.clone(),
        }
    }
}

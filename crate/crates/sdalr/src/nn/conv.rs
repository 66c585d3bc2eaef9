//! 1-D convolution via im2col + matrix multiply.

use ndarray::{Array2, Array3};
use rand::Rng;

use super::{init, join_name, ParamSlot, Visit};
use crate::error::{Error, Result};

/// Bias-free 1-D convolution; batch normalization always follows in this model.
///
/// Weight layout is `[out_channels, in_channels * kernel]` with the kernel
/// index fastest, matching the im2col column order.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Array2<f64>,
    pub grad_weight: Array2<f64>,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    columns: Array2<f64>,
    batch: usize,
    in_len: usize,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = init::kaiming_normal(rng, out_channels, in_channels * kernel);
        let grad_weight = Array2::zeros(weight.raw_dim());
        Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            grad_weight,
            cache: None,
        }
    }

    pub fn out_len(&self, in_len: usize) -> Result<usize> {
        let padded = in_len + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::Shape(format!(
                "input length {in_len} shorter than kernel {}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<usize> {
        let (_, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expected {} input channels, got {c}",
                self.in_channels
            )));
        }
        self.out_len(l)
    }

    /// Training forward: caches the im2col matrix for the backward pass.
    pub fn forward_t(&mut self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let out_len = self.check_input(x)?;
        let columns = self.im2col(x, out_len);
        let y = self.columns_to_output(&columns, x.shape()[0], out_len);
        self.cache = Some(ConvCache {
            columns,
            batch: x.shape()[0],
            in_len: x.shape()[2],
        });
        Ok(y)
    }

    /// Inference forward: no state is touched, safe on a shared reference.
    pub fn forward_e(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let out_len = self.check_input(x)?;
        let columns = self.im2col(x, out_len);
        Ok(self.columns_to_output(&columns, x.shape()[0], out_len))
    }

    /// Accumulates the weight gradient and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Array3<f64>) -> Array3<f64> {
        let cache = self.cache.take().expect("conv backward without forward");
        let (batch, _, out_len) = (
            grad_out.shape()[0],
            grad_out.shape()[1],
            grad_out.shape()[2],
        );
        debug_assert_eq!(batch, cache.batch);

        // [B*T, Cout] view of grad_out.
        let mut gy = Array2::zeros((batch * out_len, self.out_channels));
        for b in 0..batch {
            for co in 0..self.out_channels {
                for t in 0..out_len {
                    gy[[b * out_len + t, co]] = grad_out[[b, co, t]];
                }
            }
        }

        self.grad_weight = &self.grad_weight + &gy.t().dot(&cache.columns);
        let grad_columns = gy.dot(&self.weight);
        self.col2im(&grad_columns, cache.batch, cache.in_len, out_len)
    }

    fn columns_to_output(&self, columns: &Array2<f64>, batch: usize, out_len: usize) -> Array3<f64> {
        let flat = columns.dot(&self.weight.t()); // [B*T, Cout]
        let mut y = Array3::zeros((batch, self.out_channels, out_len));
        for b in 0..batch {
            for co in 0..self.out_channels {
                for t in 0..out_len {
                    y[[b, co, t]] = flat[[b * out_len + t, co]];
                }
            }
        }
        y
    }

    fn im2col(&self, x: &Array3<f64>, out_len: usize) -> Array2<f64> {
        let (batch, cin, in_len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut cols = Array2::zeros((batch * out_len, cin * self.kernel));
        for b in 0..batch {
            for t in 0..out_len {
                let row = b * out_len + t;
                let base = t * self.stride;
                for ci in 0..cin {
                    for k in 0..self.kernel {
                        let pos = base + k;
                        if pos >= self.padding && pos - self.padding < in_len {
                            cols[[row, ci * self.kernel + k]] = x[[b, ci, pos - self.padding]];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(
        &self,
        cols: &Array2<f64>,
        batch: usize,
        in_len: usize,
        out_len: usize,
    ) -> Array3<f64> {
        let cin = self.in_channels;
        let mut x = Array3::zeros((batch, cin, in_len));
        for b in 0..batch {
            for t in 0..out_len {
                let row = b * out_len + t;
                let base = t * self.stride;
                for ci in 0..cin {
                    for k in 0..self.kernel {
                        let pos = base + k;
                        if pos >= self.padding && pos - self.padding < in_len {
                            x[[b, ci, pos - self.padding]] += cols[[row, ci * self.kernel + k]];
                        }
                    }
                }
            }
        }
        x
    }
}

impl Visit for Conv1d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamSlot<'_>)) {
        let shape = self.weight.shape().to_vec();
        f(ParamSlot {
            name: join_name(prefix, "weight"),
            shape,
            trainable: true,
            value: self.weight.as_slice_mut().expect("contiguous"),
            grad: Some(self.grad_weight.as_slice_mut().expect("contiguous")),
        });
    }
}

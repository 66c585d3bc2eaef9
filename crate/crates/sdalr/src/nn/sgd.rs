//! Stochastic gradient descent with momentum and L2 weight decay.

/// Momentum buffers are keyed by visitation order, so one optimizer instance
/// must always be driven with the same parameter set.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        SgdMomentum {
            momentum,
            weight_decay,
            buffers: vec![],
        }
    }

    /// One update at the given learning rate. `visit` must invoke its callback
    /// once per trainable parameter, in a stable order.
    pub fn step(
        &mut self,
        lr: f64,
        visit: impl FnOnce(&mut dyn FnMut(&mut [f64], &[f64])),
    ) {
        let mut index = 0;
        let buffers = &mut self.buffers;
        let momentum = self.momentum;
        let weight_decay = self.weight_decay;
        visit(&mut |value: &mut [f64], grad: &[f64]| {
            if buffers.len() <= index {
                buffers.push(vec![0.0; value.len()]);
            }
            let buf = &mut buffers[index];
            assert_eq!(buf.len(), value.len(), "parameter set changed size");
            for i in 0..value.len() {
                let g = grad[i] + weight_decay * value[i];
                buf[i] = momentum * buf[i] + g;
                value[i] -= lr * buf[i];
            }
            index += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_accumulates() {
        let mut opt = SgdMomentum::new(0.9, 0.0);
        let mut w = vec![1.0];
        let g = vec![1.0];
        opt.step(0.1, |f| f(&mut w, &g));
        assert!((w[0] - 0.9).abs() < 1e-12);
        opt.step(0.1, |f| f(&mut w, &g));
        // second step velocity = 0.9*1 + 1 = 1.9
        assert!((w[0] - (0.9 - 0.19)).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_shrinks_parameters() {
        let mut opt = SgdMomentum::new(0.0, 0.5);
        let mut w = vec![2.0];
        let g = vec![0.0];
        opt.step(0.1, |f| f(&mut w, &g));
        assert!((w[0] - 1.9).abs() < 1e-12);
    }
}

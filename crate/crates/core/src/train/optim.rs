//! Plain Adam with bias correction, no weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::unet::SpikingUNet;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments, in parameter-visit order.
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Parameters whose name ends in `.m` are left untouched when false.
    pub train_thresholds: bool,
}

impl Adam {
    pub fn new(net: &SpikingUNet, lr: f64, beta1: f64, beta2: f64, eps: f64, train_thresholds: bool) -> Self {
        let zeros: Vec<Tensor> = net.named_params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
            train_thresholds,
        }
    }

    pub fn update(&mut self, net: &mut SpikingUNet, grads: &SpikingUNet) -> Result<()> {
        let grads = grads.named_params();
        if grads.len() != self.m.len() {
            return Err(Error::shape("adam", format!("{} grads for {} moments", grads.len(), self.m.len())));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (self.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        let mut i = 0;
        let mut result = Ok(());
        net.for_each_param_mut(|name, p| {
            let idx = i;
            i += 1;
            if result.is_err() || (!self.train_thresholds && name.ends_with(".m")) {
                return;
            }
            let (gname, g) = &grads[idx];
            if gname != name || g.shape() != p.shape() {
                result = Err(Error::shape("adam", format!("gradient {gname} does not match {name}")));
                return;
            }
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
            }
        });
        result
    }
}

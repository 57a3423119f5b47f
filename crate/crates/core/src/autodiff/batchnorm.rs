use super::Tensor;

/// Whether batch norm uses batch statistics (and updates running ones) or
/// the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Learnable scale/shift and running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub name: String,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight of the previous running value in each update.
    pub momentum: f64,
    pub eps: f64,
    pub initialized: bool,
}

impl BatchNormState {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNormState {
            name: name.into(),
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// The first update copies the batch statistics; later ones blend them in.
    pub(crate) fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = if self.initialized { self.momentum } else { 0.0 };
        for (r, b) in self.running_mean.iter_mut().zip(mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(var) {
            *r = (m * *r + (1.0 - m) * b).max(f64::MIN_POSITIVE);
        }
        self.initialized = true;
    }
}

use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `v <- momentum * v + g; w <- w - lr * v`, tensor by tensor.
pub fn sgd_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    velocity: &mut [Tensor<T>],
    lr: T,
    momentum: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((w, g), v) in params.iter().zip(grads).zip(velocity.iter()) {
        w.check_same_shape(g)?;
        w.check_same_shape(v)?;
    }
    for ((w, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = if momentum == T::zero() { gi } else { momentum * *vi + gi };
            *wi = *wi - lr * *vi;
        }
    }
    Ok(())
}

/// Optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(network: &Network<T>, lr: f64, momentum: f64) -> Self {
        Sgd {
            lr: T::from_f64_lossy(lr),
            momentum: T::from_f64_lossy(momentum),
            velocity: network.params().into_iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    pub fn step(&mut self, network: &mut Network<T>, grads: &[Tensor<T>]) -> Result<()> {
        let mut params = network.params_mut();
        sgd_step(&mut params, grads, &mut self.velocity, self.lr, self.momentum)
    }
}

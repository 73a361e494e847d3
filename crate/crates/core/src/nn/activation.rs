use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Nonlinearity applied after a convolution or fully connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Identity => x.clone(),
            Activation::Relu => relu(x),
        }
    }

    /// Gradient through the activation given its *output*. For ReLU,
    /// `out > 0` exactly when the pre-activation was positive.
    pub fn backward<T: Scalar>(self, output: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Activation::Identity => {
                output.check_same_shape(grad)?;
                Ok(grad.clone())
            }
            Activation::Relu => relu_backward(output, grad),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "none",
            Activation::Relu => "relu",
        }
    }
}

/// `max(0, x)` element-wise.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the upstream gradient where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_with(grad, |v, g| if v > T::zero() { g } else { T::zero() })
}

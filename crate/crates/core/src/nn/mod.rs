//! Layer kernels with their backward passes, plus a finite-difference
//! gradient checker.

mod activation;
mod conv;
mod elective;
mod fc;
pub mod gradcheck;
mod loss;

pub use activation::{relu, relu_backward, Activation};
pub use conv::{conv2d, conv2d_backward, conv_output_hw, ConvParams};
pub use elective::{elective_backward, elective_fuse, elective_tie_margin, ElectiveMode, BRANCHES};
pub use fc::{fc_backward, fc_forward, FcParams};
pub use loss::{softmax_xent, softmax_xent_batch, BatchLoss};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradients of one op, mirroring the shapes of its forward inputs and
/// parameters in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T> {
    pub inputs: Vec<Tensor<T>>,
    pub params: Vec<Tensor<T>>,
}

/// Residual sum of two equally shaped responses.
pub fn additive<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.add(b)
}

/// The upstream gradient flows unchanged to both summands.
pub fn additive_backward<T: Scalar>(grad_out: &Tensor<T>) -> GradBundle<T> {
    GradBundle {
        inputs: vec![grad_out.clone(), grad_out.clone()],
        params: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn additive_cases() {
        let a = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![10., 20., 30., 40.]).unwrap();
        assert_eq!(additive(&a, &b).unwrap().data(), &[11., 22., 33., 44.]);
        assert_eq!(additive(&a, &Tensor::zeros_like(&a)).unwrap(), a);
        let big = Tensor::<f32>::zeros(&[1, 32, 64, 64]).unwrap();
        assert_eq!(additive(&big, &big).unwrap().dims(), &[1, 32, 64, 64]);
        let other = Tensor::<f32>::zeros(&[1, 1, 2, 3]).unwrap();
        assert!(matches!(additive(&a, &other), Err(Error::Shape(_))));
    }
}

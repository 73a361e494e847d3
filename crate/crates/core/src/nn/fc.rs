//! Fully connected layer `out = act(M z + b)`.

use super::{Activation, GradBundle};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FcParams<T> {
    /// `out_units x in_len`.
    pub weights: Tensor<T>,
    /// `out_units`.
    pub bias: Tensor<T>,
}

impl<T: Scalar> FcParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weights.dims().len() != 2 {
            return Err(Error::Shape(format!("fc weights must be rank 2, got {}", weights.shape())));
        }
        if bias.dims() != [weights.dims()[0]] {
            return Err(Error::Shape(format!(
                "fc bias {} does not match {} units",
                bias.shape(),
                weights.dims()[0]
            )));
        }
        Ok(FcParams { weights, bias })
    }

    pub fn out_units(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn in_len(&self) -> usize {
        self.weights.dims()[1]
    }
}

/// Batch size of `z`: a rank-1 tensor is a single vector, otherwise the
/// leading axis is the batch and the rest is flattened.
fn batch_of<T: Scalar>(z: &Tensor<T>, params: &FcParams<T>) -> Result<usize> {
    let batch = if z.dims().len() == 1 { 1 } else { z.dims()[0] };
    let per = z.len() / batch;
    if per != params.in_len() {
        return Err(Error::Shape(format!(
            "fc input length {per} does not match weight width {}",
            params.in_len()
        )));
    }
    Ok(batch)
}

fn out_dims(rank1: bool, batch: usize, units: usize) -> Vec<usize> {
    if rank1 {
        vec![units]
    } else {
        vec![batch, units]
    }
}

pub fn fc_forward<T: Scalar>(z: &Tensor<T>, params: &FcParams<T>, act: Activation) -> Result<Tensor<T>> {
    let batch = batch_of(z, params)?;
    let (units, len) = (params.out_units(), params.in_len());
    let m = params.weights.data();
    let mut out = Vec::with_capacity(batch * units);
    for b in 0..batch {
        let zb = &z.data()[b * len..(b + 1) * len];
        for j in 0..units {
            let row = &m[j * len..(j + 1) * len];
            let dot: T = row.iter().zip(zb).map(|(&w, &x)| w * x).sum();
            out.push(dot + params.bias.data()[j]);
        }
    }
    let pre = Tensor::from_vec(&out_dims(z.dims().len() == 1, batch, units), out)?;
    Ok(act.apply(&pre))
}

/// Gradients given the forward input `z`, the forward output and the
/// upstream gradient. `inputs[0]` has the shape of `z`; `params` are
/// `[weights, bias]`.
pub fn fc_backward<T: Scalar>(
    z: &Tensor<T>,
    params: &FcParams<T>,
    act: Activation,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<GradBundle<T>> {
    let batch = batch_of(z, params)?;
    let (units, len) = (params.out_units(), params.in_len());
    if grad_out.len() != batch * units || output.len() != batch * units {
        return Err(Error::Shape(format!(
            "fc upstream gradient {} does not match {batch}x{units}",
            grad_out.shape()
        )));
    }
    let g_pre = act.backward(output, &grad_out.clone().reshape(output.dims())?)?;
    let g = g_pre.data();
    let m = params.weights.data();

    let mut gw = vec![T::zero(); units * len];
    let mut gb = vec![T::zero(); units];
    let mut gz = vec![T::zero(); batch * len];
    for b in 0..batch {
        let zb = &z.data()[b * len..(b + 1) * len];
        let gzb = &mut gz[b * len..(b + 1) * len];
        for j in 0..units {
            let gj = g[b * units + j];
            gb[j] += gj;
            let row = &m[j * len..(j + 1) * len];
            let grow = &mut gw[j * len..(j + 1) * len];
            for i in 0..len {
                grow[i] += gj * zb[i];
                gzb[i] += gj * row[i];
            }
        }
    }
    Ok(GradBundle {
        inputs: vec![Tensor::from_vec(z.dims(), gz)?],
        params: vec![
            Tensor::from_vec(&[units, len], gw)?,
            Tensor::from_vec(&[units], gb)?,
        ],
    })
}

//! Central finite-difference verification of analytic gradients.
//!
//! Every op is reduced to a scalar by projecting its output onto a fixed
//! random tensor `R`, so the analytic gradient is the op's backward pass
//! applied to `R`.

use std::fmt;

use super::{
    additive, additive_backward, conv2d, conv2d_backward, elective_backward, elective_fuse,
    elective_tie_margin, fc_backward, fc_forward, relu, relu_backward, softmax_xent, Activation,
    ConvParams, ElectiveMode, FcParams,
};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Which coordinates to perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coords {
    All,
    /// A seeded random sample drawn uniformly over all coordinates of all
    /// inputs.
    Sample { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub eps: f64,
    pub coords: Coords,
    /// Replace coordinates whose one-sided slopes disagree, i.e. where the
    /// perturbation crosses a kink of a piecewise-linear op.
    pub kink_guard: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            eps: 1e-5,
            coords: Coords::All,
            kink_guard: false,
        }
    }
}

/// Worst coordinate found for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub op: String,
    pub inputs: Vec<InputCheck>,
    pub skipped_kinks: usize,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }

    pub fn worst(&self) -> Option<&InputCheck> {
        self.inputs
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<18} max_rel_err {:.3e}", self.op, self.max_rel_error())?;
        if let Some(w) = self.worst() {
            write!(
                f,
                "  worst {}[{}] analytic {:.6e} numeric {:.6e}",
                w.name, w.worst_index, w.analytic, w.numeric
            )?;
        }
        if self.skipped_kinks > 0 {
            write!(f, "  ({} kink coords resampled)", self.skipped_kinks)?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (1e-8f64).max(analytic.abs() + numeric.abs())
}

/// Compares `analytic[i]` (gradient of `loss` w.r.t. `inputs[i]`) with
/// `(loss(x + eps) - loss(x - eps)) / (2 eps)` coordinate by coordinate.
pub fn gradcheck<F>(
    names: &[&str],
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    opts: GradcheckOptions,
    loss: F,
) -> Result<GradcheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
{
    if names.len() != inputs.len() || analytic.len() != inputs.len() {
        return Err(Error::Argument("names, inputs and gradients must align".into()));
    }
    for (x, g) in inputs.iter().zip(analytic) {
        x.check_same_shape(g)?;
        g.check_finite("analytic gradient")?;
    }
    let mut checks: Vec<InputCheck> = names
        .iter()
        .map(|n| InputCheck {
            name: n.to_string(),
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        })
        .collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let v = loss(xs)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };
    let base = if opts.kink_guard { eval(inputs)? } else { 0.0 };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let eps = opts.eps;
    // Perturbs one coordinate; None when a kink was detected.
    let mut probe = |which: usize, idx: usize| -> Result<Option<f64>> {
        let orig = work[which].data()[idx];
        work[which].data_mut()[idx] = orig + eps;
        let plus = eval(&work)?;
        work[which].data_mut()[idx] = orig - eps;
        let minus = eval(&work)?;
        work[which].data_mut()[idx] = orig;
        if opts.kink_guard {
            let right = (plus - base) / eps;
            let left = (base - minus) / eps;
            let scale = right.abs().max(left.abs()).max(1e-6);
            if (right - left).abs() > 1e-3 * scale {
                return Ok(None);
            }
        }
        Ok(Some((plus - minus) / (2.0 * eps)))
    };

    let record = |checks: &mut Vec<InputCheck>, which: usize, idx: usize, numeric: f64| {
        let a = analytic[which].data()[idx];
        let err = relative_error(a, numeric);
        let c = &mut checks[which];
        c.checked += 1;
        if err >= c.max_rel_error {
            c.max_rel_error = err;
            c.worst_index = idx;
            c.analytic = a;
            c.numeric = numeric;
        }
    };

    let mut skipped = 0;
    match opts.coords {
        Coords::All => {
            for which in 0..inputs.len() {
                for idx in 0..inputs[which].len() {
                    match probe(which, idx)? {
                        Some(n) => record(&mut checks, which, idx, n),
                        None => skipped += 1,
                    }
                }
            }
        }
        Coords::Sample { count, seed } => {
            let total: usize = inputs.iter().map(|t| t.len()).sum();
            let mut flat: Vec<usize> = (0..total).collect();
            SeededRng::new(seed).shuffle(&mut flat);
            let mut done = 0;
            for &g in &flat {
                if done == count {
                    break;
                }
                let mut which = 0;
                let mut idx = g;
                while idx >= inputs[which].len() {
                    idx -= inputs[which].len();
                    which += 1;
                }
                match probe(which, idx)? {
                    Some(n) => {
                        record(&mut checks, which, idx, n);
                        done += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
    }
    Ok(GradcheckReport {
        op: String::new(),
        inputs: checks,
        skipped_kinks: skipped,
    })
}

/// Single ops covered by [`check_op`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Conv { stride: usize },
    Relu,
    Elective(ElectiveMode),
    Additive,
    Fc(Activation),
    Softmax,
}

impl OpKind {
    pub fn all() -> Vec<OpKind> {
        vec![
            OpKind::Conv { stride: 1 },
            OpKind::Conv { stride: 2 },
            OpKind::Relu,
            OpKind::Elective(ElectiveMode::Literal),
            OpKind::Elective(ElectiveMode::NearestBranch),
            OpKind::Additive,
            OpKind::Fc(Activation::Relu),
            OpKind::Softmax,
        ]
    }

    pub fn label(&self) -> String {
        match self {
            OpKind::Conv { stride } => format!("conv/stride{stride}"),
            OpKind::Relu => "relu".into(),
            OpKind::Elective(m) => format!("elective/{m}"),
            OpKind::Additive => "additive".into(),
            OpKind::Fc(a) => format!("fc/{}", a.name()),
            OpKind::Softmax => "softmax_xent".into(),
        }
    }
}

const MAX_RESAMPLES: usize = 200;

fn randn(dims: &[usize], rng: &mut SeededRng) -> Result<Tensor<f64>> {
    Tensor::rand(dims, 1.0, rng)
}

/// Draws fresh inputs until `tie_free` accepts them.
fn sample_generic<F, P>(rng: &mut SeededRng, mut draw: F, tie_free: P) -> Result<Vec<Tensor<f64>>>
where
    F: FnMut(&mut SeededRng) -> Result<Vec<Tensor<f64>>>,
    P: Fn(&[Tensor<f64>]) -> Result<bool>,
{
    for _ in 0..MAX_RESAMPLES {
        let xs = draw(rng)?;
        if tie_free(&xs)? {
            return Ok(xs);
        }
    }
    Err(Error::Numeric(format!(
        "no tie-free sample found in {MAX_RESAMPLES} draws"
    )))
}

/// Checks one op at a random, tie-free point in 64-bit precision.
pub fn check_op(op: OpKind, seed: u64, eps: f64) -> Result<GradcheckReport> {
    let mut rng = SeededRng::new(seed);
    let opts = GradcheckOptions {
        eps,
        ..Default::default()
    };
    let guard = 10.0 * eps;
    let mut report = match op {
        OpKind::Conv { stride } => {
            let size = if stride == 1 { 6 } else { 7 };
            let xs = vec![
                randn(&[1, 2, size, size], &mut rng)?,
                randn(&[3, 2, 3, 3], &mut rng)?,
                randn(&[3], &mut rng)?,
            ];
            let params = |xs: &[Tensor<f64>]| ConvParams::same(xs[1].clone(), xs[2].clone(), stride);
            let proj = randn(conv2d(&xs[0], &params(&xs)?)?.dims(), &mut rng)?;
            let g = conv2d_backward(&xs[0], &params(&xs)?, &proj)?;
            let analytic = [g.inputs[0].clone(), g.params[0].clone(), g.params[1].clone()];
            gradcheck(&["input", "weights", "bias"], &xs, &analytic, opts, |xs| {
                conv2d(&xs[0], &params(xs)?)?.dot(&proj)
            })?
        }
        OpKind::Relu => {
            let xs = sample_generic(
                &mut rng,
                |r| Ok(vec![randn(&[1, 2, 5, 5], r)?]),
                |xs| Ok(xs[0].data().iter().all(|v| v.abs() > guard)),
            )?;
            let proj = randn(xs[0].dims(), &mut rng)?;
            let analytic = [relu_backward(&xs[0], &proj)?];
            gradcheck(&["input"], &xs, &analytic, opts, |xs| relu(&xs[0]).dot(&proj))?
        }
        OpKind::Elective(mode) => {
            let dims = [1, 3, 4, 4];
            let xs = sample_generic(
                &mut rng,
                |r| (0..4).map(|_| randn(&dims, r)).collect(),
                |xs| {
                    let refs: Vec<&Tensor<f64>> = xs.iter().collect();
                    Ok(elective_tie_margin(&refs)? > guard)
                },
            )?;
            let proj = randn(&dims, &mut rng)?;
            let refs: Vec<&Tensor<f64>> = xs.iter().collect();
            let analytic = elective_backward(&refs, &proj, mode)?;
            gradcheck(&["r1x1", "r3x3", "r5x5", "r7x7"], &xs, &analytic, opts, |xs| {
                let refs: Vec<&Tensor<f64>> = xs.iter().collect();
                elective_fuse(&refs, mode)?.dot(&proj)
            })?
        }
        OpKind::Additive => {
            let xs = vec![randn(&[1, 3, 4, 4], &mut rng)?, randn(&[1, 3, 4, 4], &mut rng)?];
            let proj = randn(&[1, 3, 4, 4], &mut rng)?;
            let analytic = additive_backward(&proj).inputs;
            gradcheck(&["a", "b"], &xs, &analytic, opts, |xs| additive(&xs[0], &xs[1])?.dot(&proj))?
        }
        OpKind::Fc(act) => {
            let params = |xs: &[Tensor<f64>]| FcParams::new(xs[1].clone(), xs[2].clone());
            let xs = sample_generic(
                &mut rng,
                |r| Ok(vec![randn(&[2, 12], r)?, randn(&[5, 12], r)?, randn(&[5], r)?]),
                |xs| {
                    let pre = fc_forward(&xs[0], &params(xs)?, Activation::Identity)?;
                    Ok(act == Activation::Identity || pre.data().iter().all(|v| v.abs() > 100.0 * guard))
                },
            )?;
            let p = params(&xs)?;
            let out = fc_forward(&xs[0], &p, act)?;
            let proj = randn(out.dims(), &mut rng)?;
            let g = fc_backward(&xs[0], &p, act, &out, &proj)?;
            let analytic = [g.inputs[0].clone(), g.params[0].clone(), g.params[1].clone()];
            gradcheck(&["z", "weights", "bias"], &xs, &analytic, opts, |xs| {
                fc_forward(&xs[0], &params(xs)?, act)?.dot(&proj)
            })?
        }
        OpKind::Softmax => {
            let xs = vec![randn(&[7], &mut rng)?];
            let label = rng.below(7);
            let (_, grad) = softmax_xent(&xs[0], label)?;
            gradcheck(&["logits"], &xs, &[grad], opts, |xs| Ok(softmax_xent(&xs[0], label)?.0))?
        }
    };
    report.op = op.label();
    Ok(report)
}

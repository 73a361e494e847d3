//! Elective fusion of the four ExFeat branch responses.
//!
//! Per position, with branch responses `r[0..4]`:
//!
//! ```text
//! mid  = (max r + min r) / 2
//! d[i] = |mid - r[i]|
//! out  = mid + min d          (Literal, capped at max r)
//! out  = r[argmin d]          (NearestBranch)
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BRANCHES: usize = 4;

/// How the elective layer turns the branch distances into an output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ElectiveMode {
    /// Midrange plus the smallest branch-to-midrange distance.
    #[default]
    Literal,
    /// The branch value closest to the midrange.
    NearestBranch,
}

impl fmt::Display for ElectiveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElectiveMode::Literal => "literal",
            ElectiveMode::NearestBranch => "nearest",
        })
    }
}

impl FromStr for ElectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(ElectiveMode::Literal),
            "nearest" | "nearest-branch" => Ok(ElectiveMode::NearestBranch),
            other => Err(Error::Config(format!("unknown elective mode `{other}`"))),
        }
    }
}

/// Lowest index of the extreme value under `better`.
#[inline]
fn arg_extreme<T: Scalar>(r: &[T; BRANCHES], better: impl Fn(T, T) -> bool) -> usize {
    let mut best = 0;
    for i in 1..BRANCHES {
        if better(r[i], r[best]) {
            best = i;
        }
    }
    best
}

/// Intermediate quantities at one position.
struct Point<T> {
    imax: usize,
    imin: usize,
    mid: T,
    nearest: usize,
    dist: T,
}

#[inline]
fn analyse<T: Scalar>(r: &[T; BRANCHES]) -> Point<T> {
    let imax = arg_extreme(r, |a, b| a > b);
    let imin = arg_extreme(r, |a, b| a < b);
    let half = T::from_f64_lossy(0.5);
    let mid = half * (r[imax] + r[imin]);
    let d = [
        (mid - r[0]).abs(),
        (mid - r[1]).abs(),
        (mid - r[2]).abs(),
        (mid - r[3]).abs(),
    ];
    let nearest = arg_extreme(&d, |a, b| a < b);
    Point {
        imax,
        imin,
        mid,
        nearest,
        dist: d[nearest],
    }
}

#[inline]
pub(crate) fn fuse_point<T: Scalar>(r: &[T; BRANCHES], mode: ElectiveMode) -> T {
    let p = analyse(r);
    match mode {
        // In exact arithmetic mid + dist <= max; the min() removes a
        // one-ulp rounding overshoot.
        ElectiveMode::Literal => (p.mid + p.dist).min(r[p.imax]),
        ElectiveMode::NearestBranch => r[p.nearest],
    }
}

/// Subgradient of the fused value w.r.t. each branch. Ties go to the lowest
/// branch index; the derivative of `|.|` at 0 is taken as 0.
#[inline]
pub(crate) fn fuse_point_grad<T: Scalar>(r: &[T; BRANCHES], mode: ElectiveMode) -> [T; BRANCHES] {
    let p = analyse(r);
    let mut g = [T::zero(); BRANCHES];
    match mode {
        ElectiveMode::NearestBranch => g[p.nearest] = T::one(),
        ElectiveMode::Literal => {
            let half = T::from_f64_lossy(0.5);
            let mut dmid = [T::zero(); BRANCHES];
            dmid[p.imax] += half;
            dmid[p.imin] += half;
            let diff = p.mid - r[p.nearest];
            let sign = if diff > T::zero() {
                T::one()
            } else if diff < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            for i in 0..BRANCHES {
                let own = if i == p.nearest { T::one() } else { T::zero() };
                g[i] = dmid[i] + sign * (dmid[i] - own);
            }
        }
    }
    g
}

fn check_branches<T: Scalar>(branches: &[&Tensor<T>]) -> Result<()> {
    if branches.len() != BRANCHES {
        return Err(Error::Arity(branches.len()));
    }
    for b in &branches[1..] {
        branches[0].check_same_shape(b)?;
    }
    Ok(())
}

/// Fuses four equally shaped branch responses element-wise.
pub fn elective_fuse<T: Scalar>(branches: &[&Tensor<T>], mode: ElectiveMode) -> Result<Tensor<T>> {
    check_branches(branches)?;
    let (a, b, c, d) = (
        branches[0].data(),
        branches[1].data(),
        branches[2].data(),
        branches[3].data(),
    );
    let mut out = Tensor::zeros_like(branches[0]);
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        *o = fuse_point(&[a[i], b[i], c[i], d[i]], mode);
    }
    Ok(out)
}

/// Gradients w.r.t. each of the four branches.
pub fn elective_backward<T: Scalar>(
    branches: &[&Tensor<T>],
    grad_out: &Tensor<T>,
    mode: ElectiveMode,
) -> Result<Vec<Tensor<T>>> {
    check_branches(branches)?;
    branches[0].check_same_shape(grad_out)?;
    let mut grads: Vec<Tensor<T>> = (0..BRANCHES).map(|_| Tensor::zeros_like(grad_out)).collect();
    let g = grad_out.data();
    for i in 0..g.len() {
        let r = [
            branches[0].data()[i],
            branches[1].data()[i],
            branches[2].data()[i],
            branches[3].data()[i],
        ];
        let local = fuse_point_grad(&r, mode);
        for (k, gk) in grads.iter_mut().enumerate() {
            gk.data_mut()[i] = local[k] * g[i];
        }
    }
    Ok(grads)
}

/// Smallest gap between competing candidates at any position: sorted
/// branch values (argmax/argmin), the two smallest distances (argmin) and
/// the smallest distance itself (sign of `mid - r`). Finite-difference
/// checks need this well above the step size.
pub fn elective_tie_margin<T: Scalar>(branches: &[&Tensor<T>]) -> Result<T> {
    check_branches(branches)?;
    let mut margin = T::infinity();
    for i in 0..branches[0].len() {
        let mut r = [
            branches[0].data()[i],
            branches[1].data()[i],
            branches[2].data()[i],
            branches[3].data()[i],
        ];
        let p = analyse(&r);
        let mut d: Vec<T> = r.iter().map(|&v| (p.mid - v).abs()).collect();
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in r.windows(2) {
            margin = margin.min(w[1] - w[0]);
        }
        margin = margin.min(d[1] - d[0]).min(d[0]);
    }
    Ok(margin)
}

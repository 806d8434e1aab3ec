//! Multi-task training loss under partial labels.
//!
//! Labels arrive per class as +1 (known drivable), -1 (known not, for this
//! view), or 0 (no information). Three branches:
//!
//! * multi-label logistic: sum of log(1 + exp(-y_k f_k)); y_k = 0 makes the
//!   term a constant log 2 with zero gradient, so unknown entries never pull
//!   the parameters;
//! * distance L1, gated per class on a non-negative target (a negative
//!   value is the no-supervision sentinel, while a zero target is real
//!   supervision: the view sits inside its turn);
//! * top-1 cross entropy over classes, applied only when exactly one class
//!   is known positive; all-unknown label vectors contribute exactly zero.

use crate::error::{Error, Result};
use crate::sampler::{ViewSample, ViewType};

/// No-supervision sentinel for distance targets.
pub const DIST_NONE: f64 = -1.0;

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax3(f: &[f64; 3]) -> [f64; 3] {
    let m = f[0].max(f[1]).max(f[2]);
    let e = [(f[0] - m).exp(), (f[1] - m).exp(), (f[2] - m).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

pub fn loss_multilabel(f: &[f64; 3], y: &[i8; 3]) -> f64 {
    (0..3).map(|k| softplus(-(y[k] as f64) * f[k])).sum()
}

pub fn grad_multilabel(f: &[f64; 3], y: &[i8; 3]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for k in 0..3 {
        if y[k] != 0 {
            let yk = y[k] as f64;
            g[k] = -yk * sigmoid(-yk * f[k]);
        }
    }
    g
}

pub fn loss_distance(d: &[f64; 3], y: &[f64; 3]) -> f64 {
    (0..3)
        .filter(|&k| y[k] >= 0.0)
        .map(|k| (d[k] - y[k]).abs())
        .sum()
}

pub fn grad_distance(d: &[f64; 3], y: &[f64; 3]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for k in 0..3 {
        if y[k] >= 0.0 {
            // Subgradient 0 at the kink.
            g[k] = match d[k].partial_cmp(&y[k]) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Less) => -1.0,
                _ => 0.0,
            };
        }
    }
    g
}

/// The label must be all-zero (loss 0) or exactly one +1 with -1 elsewhere.
fn top1_positive_index(y: &[i8; 3]) -> Result<Option<usize>> {
    if y.iter().all(|&v| v == 0) {
        return Ok(None);
    }
    let plus: Vec<usize> = (0..3).filter(|&k| y[k] == 1).collect();
    if plus.len() == 1 && y.iter().filter(|&&v| v == -1).count() == 2 {
        Ok(Some(plus[0]))
    } else {
        Err(Error::InvalidLabel(format!(
            "top-1 label {y:?} is neither all-zero nor one-positive"
        )))
    }
}

pub fn loss_top1(f: &[f64; 3], y: &[i8; 3]) -> Result<f64> {
    match top1_positive_index(y)? {
        None => Ok(0.0),
        Some(i) => {
            let m = f[0].max(f[1]).max(f[2]);
            let lse = m + ((f[0] - m).exp() + (f[1] - m).exp() + (f[2] - m).exp()).ln();
            Ok(-2.0 * (f[i] - lse))
        }
    }
}

pub fn grad_top1(f: &[f64; 3], y: &[i8; 3]) -> Result<[f64; 3]> {
    match top1_positive_index(y)? {
        None => Ok([0.0; 3]),
        Some(i) => {
            let p = softmax3(f);
            let mut g = [0.0; 3];
            for k in 0..3 {
                g[k] = 2.0 * (p[k] - if k == i { 1.0 } else { 0.0 });
            }
            Ok(g)
        }
    }
}

/// Per-class training targets derived from a view's label semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTargets {
    pub multilabel: [i8; 3],
    pub distance: [f64; 3],
    pub top1: [i8; 3],
}

impl ViewTargets {
    pub fn from_sample(sample: &ViewSample) -> Result<Self> {
        sample.validate()?;
        let multilabel = sample.label_vector;
        let mut distance = [DIST_NONE; 3];
        let top1 = match sample.view_type {
            ViewType::Negative => [0i8; 3],
            _ => {
                let i = (0..3).find(|&k| multilabel[k] == 1).unwrap();
                if let Some(d) = sample.distance_label {
                    distance[i] = d;
                }
                let mut t = [-1i8; 3];
                t[i] = 1;
                t
            }
        };
        Ok(ViewTargets {
            multilabel,
            distance,
            top1,
        })
    }
}

/// Loss values per branch, already weighted into `total`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub multilabel: f64,
    pub distance: f64,
    pub top1: f64,
    pub total: f64,
}

/// Weighted total over the three branches for pooled outputs `f` and `d`.
pub fn total_loss(
    f: &[f64; 3],
    d: &[f64; 3],
    targets: &ViewTargets,
    weights: (f64, f64, f64),
) -> Result<LossBreakdown> {
    let multilabel = loss_multilabel(f, &targets.multilabel);
    let distance = loss_distance(d, &targets.distance);
    let top1 = loss_top1(f, &targets.top1)?;
    Ok(LossBreakdown {
        multilabel,
        distance,
        top1,
        total: weights.0 * multilabel + weights.1 * distance + weights.2 * top1,
    })
}

/// Weighted gradients of [`total_loss`] with respect to `f` and `d`.
pub fn total_loss_grads(
    f: &[f64; 3],
    d: &[f64; 3],
    targets: &ViewTargets,
    weights: (f64, f64, f64),
) -> Result<([f64; 3], [f64; 3])> {
    let gm = grad_multilabel(f, &targets.multilabel);
    let gt = grad_top1(f, &targets.top1)?;
    let gd = grad_distance(d, &targets.distance);
    let mut gf = [0.0; 3];
    let mut gdist = [0.0; 3];
    for k in 0..3 {
        gf[k] = weights.0 * gm[k] + weights.2 * gt[k];
        gdist[k] = weights.1 * gd[k];
    }
    Ok((gf, gdist))
}

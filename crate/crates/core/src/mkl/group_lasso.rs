//! Accelerated proximal gradient for the group Lasso.
//!
//! FISTA with a backtracking estimate of the local Lipschitz constant. The
//! momentum sequence restarts whenever a step would increase the objective, in
//! which case a plain proximal step is taken from the current iterate, so the
//! accepted objective values never increase. Memory use is the `N x D`
//! feature matrix plus a handful of length-`N` and length-`D` vectors.

use std::ops::Range;

use log::debug;
use ndarray::{s, Array1, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{block_prox, GroupedFeatures, GroupedLinearModel, LossSpec};
use crate::error::{Error, Result};
use crate::linalg::{gram_dot, norm2, t_dot, ROW_CHUNK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupLassoOptions {
    pub max_iter: usize,
    /// Relative objective change below which optimality is checked.
    pub rel_tol: f64,
    /// Tolerance of the block optimality conditions.
    pub kkt_tol: f64,
    /// Also check optimality every this many iterations; 0 disables.
    pub check_every: usize,
}

impl Default for GroupLassoOptions {
    fn default() -> Self {
        GroupLassoOptions {
            max_iter: 5000,
            rel_tol: 1e-8,
            kkt_tol: 1e-5,
            check_every: 25,
        }
    }
}

impl GroupLassoOptions {
    /// Runs exactly `iterations` proximal steps with no early stopping.
    pub fn fixed_budget(iterations: usize) -> Self {
        GroupLassoOptions {
            max_iter: iterations,
            rel_tol: 0.0,
            kkt_tol: 0.0,
            check_every: 0,
        }
    }
}

/// `lambda * sum_t ||w_t|| + sum_i l(y_i, f_i)`.
pub fn group_lasso_objective(
    w: ArrayView1<'_, f64>,
    f: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
    groups: &[Range<usize>],
    lambda: f64,
    loss: &LossSpec,
) -> f64 {
    lambda * penalty(w, groups) + loss.total(y, f)
}

fn penalty(w: ArrayView1<'_, f64>, groups: &[Range<usize>]) -> f64 {
    groups.iter().map(|g| norm2(w.slice(s![g.clone()]))).sum()
}

/// Smallest penalty at which the zero model is optimal: `max_t ||F_t^T l'(y, 0)||`.
pub fn lambda_max(gf: &GroupedFeatures, y: ArrayView1<'_, f64>, loss: &LossSpec) -> Result<f64> {
    check_targets(gf, y)?;
    let zero = Array1::zeros(y.len());
    let grad = t_dot(gf.features.view(), loss.derivatives(y, zero.view()).view());
    Ok(gf
        .groups
        .iter()
        .map(|g| norm2(grad.slice(s![g.clone()])))
        .fold(0.0, f64::max))
}

fn check_targets(gf: &GroupedFeatures, y: ArrayView1<'_, f64>) -> Result<()> {
    if gf.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows but {} targets",
            gf.nrows(),
            y.len()
        )));
    }
    Ok(())
}

/// Worst violation of the block optimality conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockOptimality {
    /// Largest `||grad_t|| / lambda - 1` over zero blocks (nonpositive when satisfied).
    pub zero_block_excess: f64,
    /// Largest `||grad_t + lambda w_t/||w_t||||` over nonzero blocks.
    pub nonzero_block_residual: f64,
    pub gradient_norm: f64,
    pub satisfied: bool,
}

/// Checks the subgradient conditions of the group-Lasso objective at `w`.
pub fn check_block_optimality(
    features: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    w: ArrayView1<'_, f64>,
    groups: &[Range<usize>],
    lambda: f64,
    loss: &LossSpec,
    tol: f64,
) -> BlockOptimality {
    let f = features.dot(&w);
    let grad = t_dot(features, loss.derivatives(y, f.view()).view());
    let gradient_norm = norm2(grad.view());
    let mut zero_block_excess = f64::NEG_INFINITY;
    let mut nonzero_block_residual: f64 = 0.0;
    for g in groups {
        let wt = w.slice(s![g.clone()]);
        let gt = grad.slice(s![g.clone()]);
        let wn = norm2(wt);
        if wn == 0.0 {
            zero_block_excess = zero_block_excess.max(norm2(gt) / lambda - 1.0);
        } else {
            let r = &gt + &(lambda / wn * &wt);
            nonzero_block_residual = nonzero_block_residual.max(norm2(r.view()));
        }
    }
    let satisfied = zero_block_excess <= tol && nonzero_block_residual <= tol * gradient_norm.max(1.0);
    BlockOptimality {
        zero_block_excess,
        nonzero_block_residual,
        gradient_norm,
        satisfied,
    }
}

const POWER_ITERATIONS: usize = 8;

/// Largest eigenvalue of `F^T F` by power iteration.
fn spectral_norm_sq(features: ArrayView2<'_, f64>) -> f64 {
    let d = features.ncols();
    let mut v = Array1::from_elem(d, 1.0 / (d as f64).sqrt());
    let mut est = 0.0;
    // A rough estimate suffices; backtracking corrects it.
    for _ in 0..POWER_ITERATIONS {
        let u = gram_dot(features, v.view());
        est = norm2(u.view());
        if est == 0.0 {
            return 0.0;
        }
        v = u / est;
    }
    est
}

/// Smooth part of the objective and its gradient at a point, given `F w`.
struct SmoothPoint {
    smooth: f64,
    grad: Array1<f64>,
}

impl SmoothPoint {
    fn at(features: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, loss: &LossSpec, f: Array1<f64>) -> Self {
        SmoothPoint {
            smooth: loss.total(y, f.view()),
            grad: t_dot(features, loss.derivatives(y, f.view()).view()),
        }
    }
}

struct Trial {
    fp: Array1<f64>,
    smooth_p: f64,
    /// Gradient at the extrapolated point that follows if `p` is accepted.
    next: SmoothPoint,
}

/// Evaluates a trial point `p` and, in the same pass over the rows of `F`,
/// the gradient at `z = p + beta (p - x)`. Each row is read once, so an
/// iteration costs one sweep over the features instead of two.
fn fused_trial(
    features: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    loss: &LossSpec,
    p: ArrayView1<'_, f64>,
    fx: ArrayView1<'_, f64>,
    beta: f64,
) -> Trial {
    let n = features.nrows();
    let d = features.ncols();
    let chunks: Vec<(Vec<f64>, f64, f64, Array1<f64>)> = (0..n.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(n);
            let mut fp = Vec::with_capacity(rows.len());
            let (mut smooth_p, mut smooth_z) = (0.0, 0.0);
            let mut grad = Array1::zeros(d);
            for i in rows {
                let row = features.row(i);
                let fi = row.dot(&p);
                let zi = fi + beta * (fi - fx[i]);
                smooth_p += loss.value(y[i], fi);
                smooth_z += loss.value(y[i], zi);
                let g = loss.derivative(y[i], zi);
                if g != 0.0 {
                    grad.scaled_add(g, &row);
                }
                fp.push(fi);
            }
            (fp, smooth_p, smooth_z, grad)
        })
        .collect();
    let mut fp = Vec::with_capacity(n);
    let (mut smooth_p, mut smooth_z) = (0.0, 0.0);
    let mut grad = Array1::zeros(d);
    for (f, sp, sz, g) in chunks {
        fp.extend(f);
        smooth_p += sp;
        smooth_z += sz;
        grad += &g;
    }
    Trial {
        fp: Array1::from(fp),
        smooth_p,
        next: SmoothPoint { smooth: smooth_z, grad },
    }
}

/// Minimizes `lambda * sum_t ||w_t|| + sum_i l(y_i, F_i . w)`.
pub fn train_group_lasso(
    gf: &GroupedFeatures,
    y: ArrayView1<'_, f64>,
    lambda: f64,
    loss: &LossSpec,
    options: &GroupLassoOptions,
) -> Result<GroupedLinearModel> {
    check_targets(gf, y)?;
    loss.validate()?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    let features = gf.features.as_standard_layout();
    let features = features.view();
    let groups = &gf.groups;
    let d = features.ncols();

    // Start below the global bound and let backtracking find the local constant.
    let mut lip = (0.1 * loss.curvature_bound() * spectral_norm_sq(features)).max(1e-12);

    let mut x = Array1::<f64>::zeros(d);
    let mut fx = Array1::<f64>::zeros(y.len());
    let mut obj_x = group_lasso_objective(x.view(), fx.view(), y, groups, lambda, loss);
    let mut z = x.clone();
    let mut at_z = SmoothPoint::at(features, y, loss, fx.clone());
    let mut momentum: f64 = 1.0;
    // zero is optimal exactly when lambda >= lambda_max
    let mut converged = groups.iter().all(|g| norm2(at_z.grad.slice(s![g.clone()])) <= lambda);
    let mut iterations = 0;

    while !converged && iterations < options.max_iter {
        iterations += 1;
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;

        let (p, trial) = loop {
            let p = block_prox((&z - &(&at_z.grad / lip)).view(), groups, lambda / lip);
            let trial = fused_trial(features, y, loss, p.view(), fx.view(), beta);
            let diff = &p - &z;
            let model = at_z.smooth + at_z.grad.dot(&diff) + 0.5 * lip * diff.dot(&diff);
            if trial.smooth_p <= model + 1e-12 * at_z.smooth.abs().max(1.0) || !lip.is_finite() {
                break (p, trial);
            }
            lip *= 2.0;
        };
        let obj_p = trial.smooth_p + lambda * penalty(p.view(), groups);

        if obj_p > obj_x {
            // restart from the current iterate
            if momentum == 1.0 {
                // a plain step from x cannot increase the objective
                debug!("group lasso stalled at iteration {iterations}");
                break;
            }
            momentum = 1.0;
            z.assign(&x);
            at_z = SmoothPoint::at(features, y, loss, fx.clone());
            continue;
        }

        let rel_change = (obj_x - obj_p) / obj_x.abs().max(1e-300);
        z = &p + &(beta * &(&p - &x));
        at_z = trial.next;
        x = p;
        fx = trial.fp;
        obj_x = obj_p;
        momentum = next_momentum;
        // let the step size grow again
        lip *= 0.95;

        let periodic = options.check_every > 0 && iterations % options.check_every == 0;
        if rel_change < options.rel_tol || periodic {
            let kkt = check_block_optimality(features, y, x.view(), groups, lambda, loss, options.kkt_tol);
            if kkt.satisfied {
                converged = true;
                break;
            }
        }
    }

    if !converged && options.kkt_tol > 0.0 {
        converged = check_block_optimality(features, y, x.view(), groups, lambda, loss, options.kkt_tol).satisfied;
    }
    debug!("group lasso: {iterations} iterations, objective {obj_x:e}, converged {converged}");
    Ok(GroupedLinearModel {
        w: x,
        groups: groups.clone(),
        lambda,
        loss: *loss,
        blocks: gf.blocks.clone(),
        seed: gf.seed,
        d_per_kernel: gf.d_per_kernel,
        objective: obj_x,
        iterations,
        converged,
    })
}

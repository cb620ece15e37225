//! Alternating kernel-weight solver used as a reference for the group Lasso.
//!
//! Solves
//!
//! ```text
//! min_{w, d >= 0}  sum_t ||w_t||^2 / (2 d_t) + C sum_i l(y_i, sum_t psi_t(x_i) . w_t) + sum_t d_t
//! ```
//!
//! the way a kernel machine would: per-kernel Gram matrices `K_t = F_t F_t^T`
//! are built once, the `w`-step is solved in the dual (`w_t = d_t F_t^T a`,
//! predictions `K_d a` with `K_d = sum_t d_t K_t`) and the `d`-step has the
//! closed form `d_t = ||w_t|| / sqrt(2)`. Cost and memory are quadratic in
//! `N`, so this is only meant for small instances.

use log::debug;
use ndarray::{Array1, Array2, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use super::{GroupedFeatures, LossKind, LossSpec};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Cholesky};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmklOptions {
    pub max_outer: usize,
    /// Relative objective change that ends the alternation.
    pub rel_tol: f64,
    /// Residual norm at which the inner dual solve stops.
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Kernel weights below this are frozen at zero.
    pub freeze_below: f64,
    /// Largest number of samples accepted.
    pub max_samples: usize,
}

impl Default for GmklOptions {
    fn default() -> Self {
        GmklOptions {
            max_outer: 20_000,
            rel_tol: 1e-10,
            inner_tol: 1e-9,
            max_inner: 100,
            freeze_below: 1e-12,
            max_samples: 2000,
        }
    }
}

impl GmklOptions {
    /// Runs exactly `iterations` alternations with no early stopping.
    pub fn fixed_budget(iterations: usize) -> Self {
        GmklOptions {
            max_outer: iterations,
            rel_tol: 0.0,
            ..GmklOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmklSolution {
    /// Kernel weights.
    pub d: Vec<f64>,
    /// Concatenated block weights in the substituted parameterization.
    pub w: Array1<f64>,
    /// Objective value, on the `C`-scaled kernel-weight scale.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Residual `a + C l'(y, K a)` of the dual stationarity condition.
fn dual_residual(a: &Array1<f64>, f: &Array1<f64>, y: ArrayView1<'_, f64>, c: f64, loss: &LossSpec) -> Array1<f64> {
    a + &(c * &loss.derivatives(y, f.view()))
}

/// Solves `a = -C l'(y, K a)` for fixed combined kernel `K`.
fn dual_solve(
    k: &Array2<f64>,
    y: ArrayView1<'_, f64>,
    c: f64,
    loss: &LossSpec,
    warm: &Array1<f64>,
    options: &GmklOptions,
) -> Result<Array1<f64>> {
    let n = y.len();
    if loss.kind == LossKind::Quadratic {
        // (K + I/C) a = y
        let mut m = k.clone();
        for i in 0..n {
            m[[i, i]] += 1.0 / c;
        }
        return Ok(Cholesky::factor(m.view())?.solve(y));
    }

    let mut a = warm.clone();
    let mut f = k.dot(&a);
    let mut g = dual_residual(&a, &f, y, c, loss);
    let mut gnorm = norm2(g.view());
    for _ in 0..options.max_inner {
        if gnorm <= options.inner_tol {
            break;
        }
        // Newton on g(a) = 0 with J = I + C D K, solved through the SPD
        // system (D^-1 + C K) delta = -D^-1 g.
        let curv = loss.second_derivatives(y, f.view()).mapv(|v| v.max(1e-200));
        let mut m = k * c;
        for i in 0..n {
            m[[i, i]] += 1.0 / curv[i];
        }
        let rhs = Zip::from(&g).and(&curv).map_collect(|gi, ci| -gi / ci);
        let delta = Cholesky::factor(m.view())?.solve(rhs.view());
        let kd = k.dot(&delta);
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let a_new = &a + &(step * &delta);
            let f_new = &f + &(step * &kd);
            let g_new = dual_residual(&a_new, &f_new, y, c, loss);
            let n_new = norm2(g_new.view());
            if n_new <= (1.0 - 1e-4 * step) * gnorm {
                a = a_new;
                f = f_new;
                g = g_new;
                gnorm = n_new;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if !gnorm.is_finite() {
        return Err(Error::Numeric("dual solve diverged".into()));
    }
    Ok(a)
}

/// Alternating minimization over block weights and kernel weights.
///
/// With `lambda = sqrt(2) / C`, `objective / C` equals the group-Lasso
/// objective at the same `w`, and the returned `d` satisfies
/// `d_t = ||w_t|| / sqrt(2)`.
pub fn gmkl_reference(
    gf: &GroupedFeatures,
    y: ArrayView1<'_, f64>,
    c: f64,
    loss: &LossSpec,
    options: &GmklOptions,
) -> Result<GmklSolution> {
    let n = gf.nrows();
    if n != y.len() {
        return Err(Error::Dimension(format!("{n} feature rows but {} targets", y.len())));
    }
    if n > options.max_samples {
        return Err(Error::Parameter(format!(
            "reference solver is limited to {} samples, got {n}",
            options.max_samples
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Parameter(format!("C must be positive, got {c}")));
    }
    loss.validate()?;

    let r = gf.group_count();
    let grams: Vec<Array2<f64>> = (0..r)
        .map(|t| {
            let block = gf.block(t);
            block.dot(&block.t())
        })
        .collect();

    let mut d = vec![1.0; r];
    let mut a = Array1::<f64>::zeros(n);
    let mut w = Array1::<f64>::zeros(gf.ncols());
    let mut prev = f64::INFINITY;
    let mut objective = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_outer {
        iterations += 1;
        let mut k = Array2::<f64>::zeros((n, n));
        for (dt, kt) in d.iter().zip(&grams) {
            if *dt > 0.0 {
                k.scaled_add(*dt, kt);
            }
        }
        a = dual_solve(&k, y, c, loss, &a, options)?;
        let f = k.dot(&a);

        // w_t = d_t F_t^T a, then d_t = ||w_t|| / sqrt(2)
        let mut penalty = 0.0;
        #[allow(clippy::needless_range_loop)]
        for t in 0..r {
            let range = gf.groups[t].clone();
            let wt = if d[t] > 0.0 {
                d[t] * gf.block(t).t().dot(&a)
            } else {
                Array1::zeros(range.len())
            };
            let norm = norm2(wt.view());
            w.slice_mut(ndarray::s![range]).assign(&wt);
            penalty += std::f64::consts::SQRT_2 * norm;
            d[t] = norm / std::f64::consts::SQRT_2;
            if d[t] < options.freeze_below {
                d[t] = 0.0;
            }
        }
        objective = penalty + c * loss.total(y, f.view());
        let rel = (prev - objective).abs() / objective.abs().max(1e-300);
        prev = objective;
        if rel < options.rel_tol {
            converged = true;
            break;
        }
    }
    debug!("gmkl reference: {iterations} alternations, objective {objective:e}");
    Ok(GmklSolution {
        d,
        w,
        objective,
        iterations,
        converged,
    })
}

//! Numerical property checks: gradient fidelity, Monte Carlo convergence,
//! group-Lasso / kernel-weight equivalence, loss approximation and solver
//! optimality.

use std::f64::consts::SQRT_2;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{planted_kernel_regression, uniform_inputs};
use crate::error::{Error, Result};
use crate::exact_kernels::kernel_eval;
use crate::feature_map::{embed, sample_base, BaseSample, KernelFamily, KernelSpec, DEFAULT_SKEW_OFFSET};
use crate::linalg::norm2;
use crate::mkl::{
    build_grouped_features, check_block_optimality, epsilon_insensitive, gmkl_reference, igll_loss, kernel_weights,
    lambda_max, train_group_lasso, GmklOptions, GroupLassoOptions, GroupedFeatures, KernelBlock, LossSpec,
};
use crate::skl::{validation_gradient, validation_objective, SklProblem};

/// Largest `|phi(x)^T phi(y) - k(x, y)|` over `pairs` random pairs in
/// `[0, 1]^m`, for each feature count in `dims`. The same pairs are used for
/// every `d`; each `d` gets its own base sample.
pub fn monte_carlo_max_errors(spec: &KernelSpec, pairs: usize, dims: &[usize], seed: u64) -> Result<Vec<f64>> {
    let m = spec.input_dim();
    let x = uniform_inputs(pairs, m, seed);
    let y = uniform_inputs(pairs, m, seed.wrapping_add(0x9e37_79b9));
    let exact: Vec<f64> = x
        .rows()
        .into_iter()
        .zip(y.rows())
        .map(|(a, b)| kernel_eval(spec, a, b))
        .collect::<Result<_>>()?;
    dims.iter()
        .enumerate()
        .map(|(k, &d)| {
            let base = sample_base(m, d, seed.wrapping_mul(31).wrapping_add(k as u64 + 1))?;
            let px = embed(x.view(), spec, &base)?;
            let py = embed(y.view(), spec, &base)?;
            Ok(px
                .values
                .rows()
                .into_iter()
                .zip(py.values.rows())
                .zip(&exact)
                .map(|((a, b), k)| (a.dot(&b) - k).abs())
                .fold(0.0, f64::max))
        })
        .collect()
}

/// Finite-difference gradient of the validation objective: central
/// differences at relative steps `rel_step` and `rel_step / 2`, combined by
/// Richardson extrapolation.
pub fn finite_difference_gradient(
    sigma: &[f64],
    problem: &SklProblem,
    base: &BaseSample,
    rel_step: f64,
) -> Result<Array1<f64>> {
    (0..sigma.len())
        .map(|i| {
            let central = |h: f64| -> Result<f64> {
                let mut a = sigma.to_vec();
                let mut b = sigma.to_vec();
                a[i] += h;
                b[i] -= h;
                Ok((validation_objective(&a, problem, base)? - validation_objective(&b, problem, base)?) / (2.0 * h))
            };
            let h = rel_step * sigma[i];
            Ok((4.0 * central(0.5 * h)? - central(h)?) / 3.0)
        })
        .collect::<Result<Vec<_>>>()
        .map(Array1::from)
}

/// `||g - g_fd|| / ||g_fd||` for the analytic gradient `g`.
pub fn gradient_relative_error(sigma: &[f64], problem: &SklProblem, base: &BaseSample) -> Result<f64> {
    let g = validation_gradient(sigma, problem, base)?;
    let fd = finite_difference_gradient(sigma, problem, base, 1e-5)?;
    Ok(norm2((&g - &fd).view()) / norm2(fd.view()).max(1e-12))
}

/// A small random hyperparameter-learning instance for `family`.
pub fn random_skl_instance(
    family: KernelFamily,
    n_train: usize,
    n_val: usize,
    m: usize,
    seed: u64,
) -> Result<(SklProblem, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher_sigma: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..4.0)).collect();
    let teacher = KernelSpec::new(family, teacher_sigma, DEFAULT_SKEW_OFFSET)?;
    let data = planted_kernel_regression(n_train + n_val, &teacher, 300, 0.1, seed)?;
    let problem = SklProblem::new(
        data.x.slice(ndarray::s![..n_train, ..]).to_owned(),
        data.y.slice(ndarray::s![..n_train]).to_owned(),
        data.x.slice(ndarray::s![n_train.., ..]).to_owned(),
        data.y.slice(ndarray::s![n_train..]).to_owned(),
        family,
    )?;
    let sigma = (0..m).map(|_| rng.random_range(0.2..8.0)).collect();
    Ok((problem, sigma))
}

/// Agreement between the group Lasso and the alternating reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceGap {
    pub group_lasso_objective: f64,
    /// Reference objective divided by `C`.
    pub reference_objective: f64,
    pub objective_relative_gap: f64,
    /// Largest `|d_t - ||w_t|| / sqrt(2)|`, with `w` from the group Lasso
    /// and `d` from the reference.
    pub kernel_weight_gap: f64,
    pub group_lasso_d: Vec<f64>,
    pub reference_d: Vec<f64>,
    pub group_lasso_converged: bool,
    pub reference_converged: bool,
}

/// Solves both problems with `lambda = sqrt(2) / C` on the same features.
pub fn equivalence_gap(
    gf: &GroupedFeatures,
    y: ndarray::ArrayView1<'_, f64>,
    c: f64,
    loss: &LossSpec,
    gl_options: &GroupLassoOptions,
    gmkl_options: &GmklOptions,
) -> Result<EquivalenceGap> {
    let gl = train_group_lasso(gf, y, SQRT_2 / c, loss, gl_options)?;
    let reference = gmkl_reference(gf, y, c, loss, gmkl_options)?;
    let gl_d = kernel_weights(&gl).d;
    let ref_obj = reference.objective / c;
    Ok(EquivalenceGap {
        group_lasso_objective: gl.objective,
        reference_objective: ref_obj,
        objective_relative_gap: (gl.objective - ref_obj).abs() / gl.objective.abs().max(ref_obj.abs()).max(1e-300),
        kernel_weight_gap: gl_d
            .iter()
            .zip(&reference.d)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
        group_lasso_d: gl_d,
        reference_d: reference.d,
        group_lasso_converged: gl.converged,
        reference_converged: reference.converged,
    })
}

/// Three-kernel instance used by the equivalence checks.
pub fn equivalence_instance(n: usize, d_per_kernel: usize, seed: u64) -> Result<(GroupedFeatures, Array1<f64>)> {
    let m = 3;
    let x = uniform_inputs(n, m, seed);
    let blocks = [
        KernelBlock::new(KernelSpec::isotropic(
            KernelFamily::Gaussian,
            3.0,
            m,
            DEFAULT_SKEW_OFFSET,
        )?),
        KernelBlock::new(KernelSpec::isotropic(
            KernelFamily::SkewedChi2,
            1.0,
            m,
            DEFAULT_SKEW_OFFSET,
        )?),
        KernelBlock::new(KernelSpec::isotropic(
            KernelFamily::SkewedIntersection,
            0.5,
            m,
            DEFAULT_SKEW_OFFSET,
        )?),
    ];
    let gf = build_grouped_features(x.view(), &blocks, d_per_kernel, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let y = Array1::from_iter(
        x.rows()
            .into_iter()
            .map(|r| (4.0 * r[0]).sin() + r[1] + 0.1 * (rng.random::<f64>() - 0.5)),
    );
    Ok((gf, y))
}

/// Result of checking `||w||^2 / (2 d) + d >= sqrt(2) ||w||` on random draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmGmCheck {
    pub draws: usize,
    /// Smallest `(lhs - rhs) / rhs` over random `d` (negative means a violation).
    pub min_slack: f64,
    /// Largest `|lhs - rhs| / rhs` at `d = ||w|| / sqrt(2)`.
    pub max_gap_at_minimizer: f64,
    /// Draws away from the minimizer whose slack was not positive.
    pub spurious_equalities: usize,
}

pub fn am_gm_check(draws: usize, dim: usize, seed: u64) -> AmGmCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_slack = f64::INFINITY;
    let mut max_gap: f64 = 0.0;
    let mut spurious = 0;
    for _ in 0..draws {
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let w = Array2::from_shape_simple_fn((1, dim), || scale * (rng.random::<f64>() - 0.5));
        let nw = norm2(w.row(0));
        let lhs = |d: f64| 0.5 * nw * nw / d + d;
        let rhs = SQRT_2 * nw;
        let dstar = nw / SQRT_2;
        // a random d at least 1% away from the minimizer
        let factor = if rng.random::<bool>() {
            rng.random_range(1.01..10.0)
        } else {
            1.0 / rng.random_range(1.01..10.0)
        };
        let slack = lhs(dstar * factor) - rhs;
        min_slack = min_slack.min(slack / rhs);
        if slack <= 0.0 {
            spurious += 1;
        }
        max_gap = max_gap.max((lhs(dstar) - rhs).abs() / rhs.max(1e-300));
    }
    AmGmCheck {
        draws,
        min_slack,
        max_gap_at_minimizer: max_gap,
        spurious_equalities: spurious,
    }
}

/// `sup |igll - max(0, |r| - eps)|` over `points` residuals evenly covering `[-2, 2]`.
pub fn loss_sup_gap(epsilon: f64, gamma: f64, points: usize) -> f64 {
    (0..points)
        .map(|k| -2.0 + 4.0 * k as f64 / (points - 1).max(1) as f64)
        .map(|r| (igll_loss(0.0, r, epsilon, gamma) - epsilon_insensitive(0.0, r, epsilon)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    /// Measured quantity.
    pub value: f64,
    /// Bound the measurement was compared against.
    pub threshold: f64,
    pub detail: String,
}

impl PropertyCheck {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64, detail: String) -> Self {
        PropertyCheck {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
            detail,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub checks: Vec<PropertyCheck>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Replaces the agreement tolerances (gradient, equivalence, optimality,
    /// minimizer gap) when set.
    pub tolerance: Option<f64>,
    pub gradient_draws: usize,
    pub monte_carlo_seeds: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            tolerance: None,
            gradient_draws: 3,
            monte_carlo_seeds: 5,
        }
    }
}

/// Runs every property check at desk scale.
pub fn run_suite(options: &SuiteOptions) -> Result<SuiteReport> {
    if let Some(t) = options.tolerance {
        if !(t >= 0.0) {
            return Err(Error::Parameter(format!("tolerance must be non-negative, got {t}")));
        }
    }
    let tol = |default: f64| options.tolerance.unwrap_or(default);
    let seed = options.seed;
    let mut checks = Vec::new();

    for (f, family) in KernelFamily::ALL.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for draw in 0..options.gradient_draws {
            let s = seed.wrapping_add(100 * f as u64 + draw as u64);
            let (problem, sigma) = random_skl_instance(family, 60, 30, 2, s)?;
            let base = sample_base(2, 40, s)?;
            worst = worst.max(gradient_relative_error(&sigma, &problem, &base)?);
        }
        checks.push(PropertyCheck::at_most(
            format!("gradient_{family}"),
            worst,
            tol(1e-4),
            format!("largest relative error over {} draws", options.gradient_draws),
        ));
    }

    for family in KernelFamily::ALL {
        let spec = KernelSpec::isotropic(family, 1.0, 3, DEFAULT_SKEW_OFFSET)?;
        let (mut small, mut large, mut at_4000): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for k in 0..options.monte_carlo_seeds {
            let e = monte_carlo_max_errors(&spec, 100, &[500, 4000, 8000], seed.wrapping_add(k as u64))?;
            small += e[0];
            at_4000 = at_4000.max(e[1]);
            large += e[2];
        }
        let ratio = small / large;
        checks.push(PropertyCheck {
            name: format!("monte_carlo_rate_{family}"),
            passed: (2.0..=8.0).contains(&ratio),
            value: ratio,
            threshold: 8.0,
            detail: "mean max error at d=500 over d=8000, expected in [2, 8]".into(),
        });
        checks.push(PropertyCheck::at_most(
            format!("monte_carlo_bound_{family}"),
            at_4000,
            0.08,
            "largest error at d=4000".into(),
        ));
    }

    let (gf, y) = equivalence_instance(120, 20, seed)?;
    for loss in [LossSpec::quadratic(), LossSpec::default()] {
        let gap = equivalence_gap(
            &gf,
            y.view(),
            1.0,
            &loss,
            &GroupLassoOptions::default(),
            &GmklOptions::default(),
        )?;
        let name = format!("{:?}", loss.kind).to_lowercase();
        checks.push(PropertyCheck::at_most(
            format!("equivalence_objective_{name}"),
            gap.objective_relative_gap,
            tol(1e-3),
            format!(
                "group lasso {:e}, reference {:e}",
                gap.group_lasso_objective, gap.reference_objective
            ),
        ));
        checks.push(PropertyCheck::at_most(
            format!("equivalence_kernel_weights_{name}"),
            gap.kernel_weight_gap,
            tol(1e-3),
            format!("d {:?} vs {:?}", gap.group_lasso_d, gap.reference_d),
        ));
    }

    let amgm = am_gm_check(10_000, 5, seed);
    checks.push(PropertyCheck {
        name: "am_gm_inequality".into(),
        passed: amgm.spurious_equalities == 0 && amgm.min_slack > 0.0,
        value: amgm.min_slack,
        threshold: 0.0,
        detail: format!("{} draws, smallest relative slack away from the minimizer", amgm.draws),
    });
    checks.push(PropertyCheck::at_most(
        "am_gm_equality",
        amgm.max_gap_at_minimizer,
        tol(1e-10),
        "relative gap at d = ||w|| / sqrt(2)".into(),
    ));

    for gamma in [1.0, 5.0, 10.0] {
        checks.push(PropertyCheck::at_most(
            format!("loss_gap_gamma_{gamma}"),
            loss_sup_gap(0.1, gamma, 4001),
            4.0 * 2f64.ln() / gamma,
            "sup gap to the exact epsilon-insensitive loss on [-2, 2]".into(),
        ));
    }

    let kkt_tol = tol(1e-5);
    let loss = LossSpec::default();
    let lmax = lambda_max(&gf, y.view(), &loss)?;
    let options = GroupLassoOptions {
        kkt_tol,
        ..GroupLassoOptions::default()
    };
    let model = train_group_lasso(&gf, y.view(), 0.05 * lmax, &loss, &options)?;
    let kkt = check_block_optimality(
        gf.features.view(),
        y.view(),
        model.w.view(),
        &gf.groups,
        model.lambda,
        &loss,
        kkt_tol,
    );
    checks.push(PropertyCheck {
        name: "block_optimality".into(),
        passed: model.converged && kkt.satisfied,
        value: (kkt.nonzero_block_residual / kkt.gradient_norm.max(1.0)).max(kkt.zero_block_excess),
        threshold: kkt_tol,
        detail: format!("converged {}, {} iterations", model.converged, model.iterations),
    });
    let zero = train_group_lasso(&gf, y.view(), lmax, &loss, &GroupLassoOptions::default())?;
    let largest = zero.w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    checks.push(PropertyCheck {
        name: "zero_model_at_lambda_max".into(),
        passed: largest == 0.0,
        value: largest,
        threshold: 0.0,
        detail: "largest |w| at lambda = lambda_max".into(),
    });

    Ok(SuiteReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = run_suite(&SuiteOptions::default()).unwrap();
        let failed: Vec<_> = report.failures().collect();
        assert!(failed.is_empty(), "{failed:#?}");
        assert!(report.checks.len() >= 18);
    }

    #[test]
    fn zero_tolerance_fails() {
        let report = run_suite(&SuiteOptions {
            tolerance: Some(0.0),
            gradient_draws: 1,
            monte_carlo_seeds: 1,
            ..SuiteOptions::default()
        })
        .unwrap();
        assert!(!report.passed());
        assert!(report.failures().any(|c| c.name.starts_with("gradient_")));
        assert!(report.failures().any(|c| c.name.starts_with("equivalence_")));
    }

    #[test]
    fn loss_gap_is_zero_far_from_kinks() {
        assert!(loss_sup_gap(0.1, 1e4, 101) < 1e-3);
    }
}

//! Single-kernel hyperparameter learning on random Fourier features.
//!
//! A ridge model is fit in closed form on the training embedding and the
//! kernel hyperparameters are tuned against the held-out squared error
//!
//! ```text
//! J(sigma) = || phi_sigma(U) beta(sigma) - v ||^2 + rho ||sigma||^2
//! beta(sigma) = (Phi^T Phi + lambda I)^-1 Phi^T y,   Phi = phi_sigma(X)
//! ```
//!
//! The gradient is exact: `d beta / d sigma_i` is obtained by differentiating
//! the normal equations and reusing a single Cholesky factor of `Q`, and the
//! derivative of the feature map only ever appears in matrix-vector products,
//! so memory stays `O(N d + d^2)`.

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::{embed, sample_base, BaseSample, FeatureJacobian, KernelFamily, KernelSpec};
use crate::linalg::{norm2, t_dot, Cholesky};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_RHO: f64 = 1e-3;

/// Condition estimate above which `Q` receives diagonal jitter.
const CONDITION_LIMIT: f64 = 1e12;

/// Factored ridge system `Q = Phi^T Phi + lambda I`.
struct RidgeSystem {
    chol: Cholesky,
    phi_t_y: Array1<f64>,
}

impl RidgeSystem {
    fn new(phi: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter(format!(
                "ridge penalty must be positive, got {lambda}"
            )));
        }
        if phi.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "feature matrix has {} rows but there are {} targets",
                phi.nrows(),
                y.len()
            )));
        }
        if phi.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in ridge inputs".into()));
        }
        let d = phi.ncols();
        let mut q = phi.t().dot(&phi);
        for j in 0..d {
            q[[j, j]] += lambda;
        }
        let mut chol = Cholesky::factor(q.view())?;
        let cond = chol.condition_estimate();
        if cond > CONDITION_LIMIT {
            let jitter = 1e-8 * q.diag().sum() / d as f64;
            warn!("ridge system condition estimate {cond:e}; adding jitter {jitter:e}");
            for j in 0..d {
                q[[j, j]] += jitter;
            }
            chol = Cholesky::factor(q.view())?;
        }
        Ok(RidgeSystem {
            chol,
            phi_t_y: t_dot(phi, y),
        })
    }

    fn beta(&self) -> Array1<f64> {
        self.chol.solve(self.phi_t_y.view())
    }
}

/// Closed-form ridge weights `(Phi^T Phi + lambda I)^-1 Phi^T y`.
pub fn solve_ridge(phi: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, lambda: f64) -> Result<Array1<f64>> {
    Ok(RidgeSystem::new(phi, y, lambda)?.beta())
}

/// Ridge predictor on a random Fourier embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub beta: Array1<f64>,
    pub lambda: f64,
    pub spec: KernelSpec,
    /// Seed of the base sample the weights were fit against.
    pub seed: u64,
}

impl RidgeModel {
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        spec: &KernelSpec,
        base: &BaseSample,
        lambda: f64,
    ) -> Result<Self> {
        let phi = embed(x, spec, base)?;
        let beta = solve_ridge(phi.view(), y, lambda)?;
        Ok(RidgeModel {
            beta,
            lambda,
            spec: spec.clone(),
            seed: base.seed(),
        })
    }

    pub fn feature_count(&self) -> usize {
        self.beta.len()
    }

    /// Regenerates the base sample the model was fit against.
    pub fn base(&self) -> Result<BaseSample> {
        sample_base(self.spec.input_dim(), self.beta.len(), self.seed)
    }

    pub fn check_base(&self, base: &BaseSample) -> Result<()> {
        if base.seed() != self.seed
            || base.feature_count() != self.beta.len()
            || base.input_dim() != self.spec.input_dim()
        {
            return Err(Error::Artifact(format!(
                "model expects base sample (seed {}, d {}, m {}), got (seed {}, d {}, m {})",
                self.seed,
                self.beta.len(),
                self.spec.input_dim(),
                base.seed(),
                base.feature_count(),
                base.input_dim()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>, base: &BaseSample) -> Result<Array1<f64>> {
        self.check_base(base)?;
        Ok(embed(x, &self.spec, base)?.values.dot(&self.beta))
    }

    pub fn to_record(&self) -> RidgeModelRecord {
        RidgeModelRecord {
            family: self.spec.family(),
            sigma: self.spec.sigma().to_vec(),
            c: self.spec.skew_offset(),
            lambda: self.lambda,
            d: self.beta.len(),
            seed: self.seed,
            beta: self.beta.to_vec(),
        }
    }

    pub fn from_record(record: RidgeModelRecord) -> Result<Self> {
        if record.beta.len() != record.d {
            return Err(Error::Artifact(format!(
                "model declares d = {} but has {} weights",
                record.d,
                record.beta.len()
            )));
        }
        if !(record.lambda > 0.0) {
            return Err(Error::Artifact(format!("invalid lambda {}", record.lambda)));
        }
        if record.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Artifact("non-finite model weight".into()));
        }
        Ok(RidgeModel {
            beta: Array1::from(record.beta),
            lambda: record.lambda,
            spec: KernelSpec::new(record.family, record.sigma, record.c)?,
            seed: record.seed,
        })
    }
}

/// Serialized form of a [`RidgeModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModelRecord {
    pub family: KernelFamily,
    pub sigma: Vec<f64>,
    pub c: f64,
    pub lambda: f64,
    pub d: usize,
    pub seed: u64,
    pub beta: Vec<f64>,
}

/// Training and validation data plus the fixed parts of the objective.
#[derive(Debug, Clone)]
pub struct SklProblem {
    pub train_x: Array2<f64>,
    pub train_y: Array1<f64>,
    pub val_x: Array2<f64>,
    pub val_y: Array1<f64>,
    pub family: KernelFamily,
    pub skew_offset: f64,
    /// Weight of the `||sigma||^2` regularizer.
    pub rho: f64,
    /// Ridge penalty.
    pub lambda: f64,
}

impl SklProblem {
    pub fn new(
        train_x: Array2<f64>,
        train_y: Array1<f64>,
        val_x: Array2<f64>,
        val_y: Array1<f64>,
        family: KernelFamily,
    ) -> Result<Self> {
        let problem = SklProblem {
            train_x,
            train_y,
            val_x,
            val_y,
            family,
            skew_offset: crate::feature_map::DEFAULT_SKEW_OFFSET,
            rho: DEFAULT_RHO,
            lambda: DEFAULT_LAMBDA,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_skew_offset(mut self, c: f64) -> Self {
        self.skew_offset = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_x.ncols() != self.val_x.ncols() {
            return Err(Error::Dimension(format!(
                "training inputs have {} columns, validation inputs {}",
                self.train_x.ncols(),
                self.val_x.ncols()
            )));
        }
        if self.train_x.nrows() != self.train_y.len() || self.val_x.nrows() != self.val_y.len() {
            return Err(Error::Dimension("targets do not match input rows".into()));
        }
        if self.train_x.nrows() == 0 || self.val_x.nrows() == 0 {
            return Err(Error::Dimension("empty training or validation set".into()));
        }
        if !(self.rho >= 0.0) || !(self.lambda > 0.0) {
            return Err(Error::Parameter(format!(
                "need rho >= 0 and lambda > 0, got rho = {}, lambda = {}",
                self.rho, self.lambda
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.train_x.ncols()
    }

    pub fn spec(&self, sigma: &[f64]) -> Result<KernelSpec> {
        KernelSpec::new(self.family, sigma.to_vec(), self.skew_offset)
    }
}

/// Objective value and the pieces it was computed from.
#[derive(Debug, Clone)]
pub struct ValidationEval {
    pub objective: f64,
    /// Validation residual `phi(U) beta - v`.
    pub residual: Array1<f64>,
    pub beta: Array1<f64>,
}

impl ValidationEval {
    pub fn mse(&self) -> f64 {
        self.residual.dot(&self.residual) / self.residual.len() as f64
    }
}

fn sigma_penalty(rho: f64, sigma: &[f64]) -> f64 {
    rho * sigma.iter().map(|s| s * s).sum::<f64>()
}

pub fn evaluate(sigma: &[f64], problem: &SklProblem, base: &BaseSample) -> Result<ValidationEval> {
    problem.validate()?;
    let spec = problem.spec(sigma)?;
    let phi = embed(problem.train_x.view(), &spec, base)?;
    let beta = solve_ridge(phi.view(), problem.train_y.view(), problem.lambda)?;
    let phi_u = embed(problem.val_x.view(), &spec, base)?;
    let residual = phi_u.values.dot(&beta) - &problem.val_y;
    let objective = residual.dot(&residual) + sigma_penalty(problem.rho, sigma);
    Ok(ValidationEval {
        objective,
        residual,
        beta,
    })
}

/// `||phi(U) beta - v||^2 + rho ||sigma||^2`.
pub fn validation_objective(sigma: &[f64], problem: &SklProblem, base: &BaseSample) -> Result<f64> {
    Ok(evaluate(sigma, problem, base)?.objective)
}

/// Objective and its exact gradient with respect to `sigma`.
pub fn validation_value_and_gradient(
    sigma: &[f64],
    problem: &SklProblem,
    base: &BaseSample,
) -> Result<(ValidationEval, Array1<f64>)> {
    problem.validate()?;
    let spec = problem.spec(sigma)?;
    let train = FeatureJacobian::new(problem.train_x.view(), &spec, base)?;
    let val = FeatureJacobian::new(problem.val_x.view(), &spec, base)?;
    let phi = train.features().view();
    let phi_u = val.features().view();

    let system = RidgeSystem::new(phi, problem.train_y.view(), problem.lambda)?;
    let beta = system.beta();
    let train_residual = &problem.train_y - &phi.dot(&beta);
    let residual = phi_u.dot(&beta) - &problem.val_y;

    // d beta_i = Q^-1 (dPhi_i^T (y - Phi beta) - Phi^T dPhi_i beta)
    let grad: Vec<f64> = (0..spec.input_dim())
        .into_par_iter()
        .map(|i| {
            let rhs = train.derivative_t_dot(i, train_residual.view())
                - t_dot(phi, train.derivative_dot(i, beta.view()).view());
            let dbeta = system.chol.solve(rhs.view());
            let df = val.derivative_dot(i, beta.view()) + phi_u.dot(&dbeta);
            2.0 * residual.dot(&df) + 2.0 * problem.rho * sigma[i]
        })
        .collect();

    let objective = residual.dot(&residual) + sigma_penalty(problem.rho, sigma);
    Ok((
        ValidationEval {
            objective,
            residual,
            beta,
        },
        Array1::from(grad),
    ))
}

pub fn validation_gradient(sigma: &[f64], problem: &SklProblem, base: &BaseSample) -> Result<Array1<f64>> {
    Ok(validation_value_and_gradient(sigma, problem, base)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DescentMethod {
    #[default]
    GradientDescent,
    Bfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SklOptions {
    pub max_iter: usize,
    /// Stop when the relative objective decrease of an accepted step falls below this.
    pub rel_tol: f64,
    /// Stop when the log-space gradient norm falls below this.
    pub grad_tol: f64,
    pub method: DescentMethod,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for SklOptions {
    fn default() -> Self {
        SklOptions {
            max_iter: 200,
            rel_tol: 1e-6,
            grad_tol: 1e-8,
            method: DescentMethod::GradientDescent,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub sigma: Vec<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimTrace {
    pub records: Vec<TraceRecord>,
}

impl OptimTrace {
    /// Number of accepted steps (the first record is the starting point).
    pub fn accepted_steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn is_non_increasing(&self) -> bool {
        self.records.windows(2).all(|w| w[1].objective <= w[0].objective)
    }
}

#[derive(Debug, Clone)]
pub struct SklFit {
    pub sigma: Vec<f64>,
    pub model: RidgeModel,
    pub trace: OptimTrace,
    pub validation_mse: f64,
}

struct Point {
    log_sigma: Array1<f64>,
    objective: f64,
    /// Gradient with respect to `log sigma`.
    grad: Array1<f64>,
    beta: Array1<f64>,
    residual: Array1<f64>,
}

fn eval_point(log_sigma: Array1<f64>, problem: &SklProblem, base: &BaseSample) -> Result<Point> {
    let sigma: Vec<f64> = log_sigma.iter().map(|t| t.exp()).collect();
    let (eval, grad_sigma) = validation_value_and_gradient(&sigma, problem, base)?;
    let grad = &grad_sigma * &Array1::from(sigma);
    Ok(Point {
        log_sigma,
        objective: eval.objective,
        grad,
        beta: eval.beta,
        residual: eval.residual,
    })
}

/// Minimizes the validation objective over `sigma` by backtracking descent in
/// `log sigma`.
pub fn learn_hyperparameters(
    problem: &SklProblem,
    sigma_init: &[f64],
    base: &BaseSample,
    options: &SklOptions,
) -> Result<SklFit> {
    problem.spec(sigma_init)?;
    let mut current = eval_point(sigma_init.iter().map(|s| s.ln()).collect(), problem, base)
        .map_err(|e| Error::Initialization(format!("objective at sigma_init: {e}")))?;
    if !current.objective.is_finite() || current.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Initialization(format!(
            "non-finite objective {} at sigma_init",
            current.objective
        )));
    }

    let sigma_of = |p: &Point| p.log_sigma.iter().map(|t| t.exp()).collect::<Vec<_>>();
    let mut trace = OptimTrace::default();
    trace.records.push(TraceRecord {
        iteration: 0,
        sigma: sigma_of(&current),
        objective: current.objective,
        gradient_norm: norm2(current.grad.view()),
        step_size: 0.0,
    });

    let m = sigma_init.len();
    let mut inv_hessian = Array2::<f64>::eye(m);
    let mut last_step = 0.0;

    for iteration in 1..=options.max_iter {
        let gnorm = norm2(current.grad.view());
        if gnorm < options.grad_tol {
            break;
        }
        let direction = match options.method {
            DescentMethod::GradientDescent => -&current.grad,
            DescentMethod::Bfgs => {
                let p = -inv_hessian.dot(&current.grad);
                if p.dot(&current.grad) < 0.0 {
                    p
                } else {
                    inv_hessian = Array2::eye(m);
                    -&current.grad
                }
            }
        };
        let slope = direction.dot(&current.grad);
        let mut step = match (options.method, last_step > 0.0) {
            (DescentMethod::Bfgs, _) => 1.0,
            (DescentMethod::GradientDescent, true) => 2.0 * last_step,
            // first trial moves log sigma by at most one unit
            (DescentMethod::GradientDescent, false) => 1.0 / gnorm.max(1.0),
        };

        let mut accepted = None;
        for _ in 0..options.max_backtracks {
            let trial = &current.log_sigma + &(step * &direction);
            if let Ok(p) = eval_point(trial, problem, base) {
                if p.objective.is_finite() && p.objective <= current.objective + options.armijo * step * slope {
                    accepted = Some(p);
                    break;
                }
            }
            step *= options.shrink;
        }
        let Some(next) = accepted else {
            break;
        };

        if options.method == DescentMethod::Bfgs {
            let s = &next.log_sigma - &current.log_sigma;
            let yv = &next.grad - &current.grad;
            let sy = s.dot(&yv);
            if sy > 1e-12 * norm2(s.view()) * norm2(yv.view()) {
                let hy = inv_hessian.dot(&yv);
                let yhy = yv.dot(&hy);
                let rho = 1.0 / sy;
                for a in 0..m {
                    for b in 0..m {
                        inv_hessian[[a, b]] +=
                            (1.0 + rho * yhy) * rho * s[a] * s[b] - rho * (hy[a] * s[b] + s[a] * hy[b]);
                    }
                }
            }
        }

        let rel_change = (current.objective - next.objective) / current.objective.abs().max(1e-300);
        last_step = step;
        current = next;
        trace.records.push(TraceRecord {
            iteration,
            sigma: sigma_of(&current),
            objective: current.objective,
            gradient_norm: norm2(current.grad.view()),
            step_size: step,
        });
        if rel_change < options.rel_tol {
            break;
        }
    }

    let sigma = sigma_of(&current);
    let validation_mse = current.residual.dot(&current.residual) / current.residual.len() as f64;
    Ok(SklFit {
        model: RidgeModel {
            beta: current.beta,
            lambda: problem.lambda,
            spec: problem.spec(&sigma)?,
            seed: base.seed(),
        },
        sigma,
        trace,
        validation_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_map::sample_base;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>())
    }

    fn toy_problem(family: KernelFamily, seed: u64) -> SklProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(40, 2, &mut rng);
        let u = random_matrix(25, 2, &mut rng);
        let target = |r: ndarray::ArrayView1<f64>| (3.0 * r[0]).sin() + r[1] * r[1];
        let y = Array1::from_iter(x.rows().into_iter().map(target));
        let v = Array1::from_iter(u.rows().into_iter().map(target));
        SklProblem::new(x, y, u, v, family).unwrap().with_lambda(0.5)
    }

    #[test]
    fn ridge_known_solutions() {
        let b = solve_ridge(array![[1.0]].view(), array![1.0].view(), 1e-12).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-10);
        let b = solve_ridge(array![[1.0], [1.0]].view(), array![1.0, 1.0].view(), 1.0).unwrap();
        assert!((b[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ridge_normal_equation_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = random_matrix(50, 10, &mut rng);
        let y = Array1::from_shape_simple_fn(50, || rng.random::<f64>() - 0.5);
        let lambda = 0.3;
        let beta = solve_ridge(phi.view(), y.view(), lambda).unwrap();
        let lhs = phi.t().dot(&phi).dot(&beta) + lambda * &beta;
        let r = lhs - phi.t().dot(&y);
        assert!(norm2(r.view()) <= 1e-10);
    }

    #[test]
    fn ridge_errors() {
        let phi = array![[1.0]];
        assert!(matches!(
            solve_ridge(phi.view(), array![1.0].view(), 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            solve_ridge(phi.view(), array![f64::NAN].view(), 1.0),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            solve_ridge(phi.view(), array![1.0, 2.0].view(), 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_residual_objective_and_gradient() {
        let base = sample_base(2, 30, 4).unwrap();
        let mut p = toy_problem(KernelFamily::Gaussian, 1).with_rho(0.0);
        let sigma = [1.3, 0.7];
        let model = RidgeModel::fit(
            p.train_x.view(),
            p.train_y.view(),
            &p.spec(&sigma).unwrap(),
            &base,
            p.lambda,
        )
        .unwrap();
        p.val_y = model.predict(p.val_x.view(), &base).unwrap();
        let obj = validation_objective(&sigma, &p, &base).unwrap();
        assert!(obj < 1e-24, "{obj}");
        let g = validation_gradient(&sigma, &p, &base).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10), "{g}");
    }

    #[test]
    fn regularizer_adds_exactly() {
        let base = sample_base(2, 30, 4).unwrap();
        let p0 = toy_problem(KernelFamily::Gaussian, 2).with_rho(0.0);
        let p1 = p0.clone().with_rho(0.25);
        let sigma = [2.0, 3.0];
        let a = validation_objective(&sigma, &p0, &base).unwrap();
        let b = validation_objective(&sigma, &p1, &base).unwrap();
        assert!((b - a - 0.25 * 13.0).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_independent_recomputation() {
        let base = sample_base(2, 30, 8).unwrap();
        let p = toy_problem(KernelFamily::SkewedChi2, 5);
        let sigma = [0.8, 1.7];
        let obj = validation_objective(&sigma, &p, &base).unwrap();
        // Per-row features and a normal-equation solve through nalgebra.
        let spec = p.spec(&sigma).unwrap();
        let h = base.quantiles(spec.family());
        let feat = |row: ndarray::ArrayView1<f64>| -> Vec<f64> {
            let d = base.feature_count();
            (0..d)
                .map(|j| {
                    let mut a = 2.0 * std::f64::consts::PI * base.phase()[j];
                    for i in 0..2 {
                        a += (row[i] + 0.1).ln() * sigma[i] * h[[j, i]];
                    }
                    (2.0 / d as f64).sqrt() * a.cos()
                })
                .collect()
        };
        let d = base.feature_count();
        let mut q = nalgebra::DMatrix::<f64>::identity(d, d) * p.lambda;
        let mut rhs = nalgebra::DVector::<f64>::zeros(d);
        for (row, &yk) in p.train_x.rows().into_iter().zip(p.train_y.iter()) {
            let f = nalgebra::DVector::from_vec(feat(row));
            q += &f * f.transpose();
            rhs += &f * yk;
        }
        let beta = q.lu().solve(&rhs).unwrap();
        let mut expect = p.rho * (sigma[0] * sigma[0] + sigma[1] * sigma[1]);
        for (row, &vk) in p.val_x.rows().into_iter().zip(p.val_y.iter()) {
            let f = nalgebra::DVector::from_vec(feat(row));
            expect += (f.dot(&beta) - vk).powi(2);
        }
        assert!((obj - expect).abs() <= 1e-10 * expect.max(1.0), "{obj} vs {expect}");
    }

    fn fd_gradient(sigma: &[f64], p: &SklProblem, base: &BaseSample) -> Vec<f64> {
        (0..sigma.len())
            .map(|i| {
                let h = 1e-5 * sigma[i];
                let mut a = sigma.to_vec();
                let mut b = sigma.to_vec();
                a[i] += h;
                b[i] -= h;
                (validation_objective(&a, p, base).unwrap() - validation_objective(&b, p, base).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for family in KernelFamily::ALL {
            for draw in 0..10 {
                let base = sample_base(2, 40, 100 + draw).unwrap();
                let p = toy_problem(family, draw);
                let sigma = [rng.random_range(0.1..10.0), rng.random_range(0.1..10.0)];
                let g = validation_gradient(&sigma, &p, &base).unwrap();
                let fd = Array1::from(fd_gradient(&sigma, &p, &base));
                let err = norm2((&g - &fd).view());
                let scale = norm2(fd.view()).max(1e-8);
                assert!(err <= 1e-4 * scale, "{family} draw {draw}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn large_lambda_gradient_is_regularizer() {
        let base = sample_base(2, 30, 1).unwrap();
        let mut p = toy_problem(KernelFamily::Gaussian, 3).with_lambda(1e12).with_rho(0.1);
        p.val_x = p.train_x.clone();
        p.val_y = p.train_y.clone();
        let sigma = [1.5, 2.5];
        let g = validation_gradient(&sigma, &p, &base).unwrap();
        let reg = array![2.0 * 0.1 * 1.5, 2.0 * 0.1 * 2.5];
        assert!(norm2((&g - &reg).view()) < 1e-6 * norm2(reg.view()), "{g}");
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let base = sample_base(2, 30, 4).unwrap();
        let mut p = toy_problem(KernelFamily::Gaussian, 1).with_rho(0.0);
        let sigma = [1.0, 1.0];
        let model = RidgeModel::fit(
            p.train_x.view(),
            p.train_y.view(),
            &p.spec(&sigma).unwrap(),
            &base,
            p.lambda,
        )
        .unwrap();
        p.val_y = model.predict(p.val_x.view(), &base).unwrap();
        let fit = learn_hyperparameters(&p, &sigma, &base, &SklOptions::default()).unwrap();
        assert_eq!(fit.trace.accepted_steps(), 0);
        assert_eq!(fit.sigma, sigma.to_vec());
    }

    #[test]
    fn descent_trace_is_monotone() {
        let base = sample_base(2, 60, 12).unwrap();
        let p = toy_problem(KernelFamily::SkewedIntersection, 7);
        for method in [DescentMethod::GradientDescent, DescentMethod::Bfgs] {
            let opts = SklOptions {
                method,
                max_iter: 30,
                ..SklOptions::default()
            };
            let fit = learn_hyperparameters(&p, &[1.0, 1.0], &base, &opts).unwrap();
            assert!(fit.trace.is_non_increasing());
            assert!(fit.trace.accepted_steps() > 0);
            let start = fit.trace.records[0].objective;
            assert!(fit.trace.records.last().unwrap().objective < start);
        }
    }

    #[test]
    fn invalid_initialization() {
        let base = sample_base(2, 10, 1).unwrap();
        let p = toy_problem(KernelFamily::Gaussian, 1);
        assert!(learn_hyperparameters(&p, &[1.0, -1.0], &base, &SklOptions::default()).is_err());
        assert!(learn_hyperparameters(&p, &[1.0], &base, &SklOptions::default()).is_err());
    }

    #[test]
    fn model_record_roundtrip_predicts_identically() {
        let base = sample_base(2, 25, 6).unwrap();
        let p = toy_problem(KernelFamily::SkewedChi2, 2);
        let model = RidgeModel::fit(
            p.train_x.view(),
            p.train_y.view(),
            &p.spec(&[1.0, 2.0]).unwrap(),
            &base,
            1.0,
        )
        .unwrap();
        let json = serde_json::to_string(&model.to_record()).unwrap();
        let back = RidgeModel::from_record(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(model, back);
        assert_eq!(
            model.predict(p.val_x.view(), &base).unwrap(),
            back.predict(p.val_x.view(), &base).unwrap()
        );
        let other = sample_base(2, 25, 7).unwrap();
        assert!(matches!(back.predict(p.val_x.view(), &other), Err(Error::Artifact(_))));
    }
}

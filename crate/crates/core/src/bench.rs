//! Synthetic data and the training-time scaling benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_io::{BenchConfig, Dataset};
use crate::error::{Error, Result};
use crate::feature_map::{embed, sample_base, KernelFamily, KernelSpec, DEFAULT_SKEW_OFFSET};
use crate::mkl::{
    build_grouped_features, gmkl_reference, lambda_max, train_group_lasso, GmklOptions, GroupLassoOptions, KernelBlock,
    LossSpec,
};
use crate::skl::{learn_hyperparameters, SklOptions, SklProblem};

// Independent random streams of one generator seed.
const INPUT_STREAM: u64 = 1;
const WEIGHT_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const TEACHER_STREAM: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Inputs drawn uniformly from `[0, 1]^m`.
pub fn uniform_inputs(n: usize, m: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, INPUT_STREAM);
    Array2::from_shape_simple_fn((n, m), || rng.random::<f64>())
}

fn add_noise(y: &mut Array1<f64>, noise_std: f64, seed: u64) -> Result<()> {
    if noise_std == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = stream(seed, NOISE_STREAM);
    y.mapv_inplace(|v| v + normal.sample(&mut rng));
    Ok(())
}

/// Default kernels of the benchmark, one per family.
pub fn default_blocks(r: usize, m: usize) -> Result<Vec<KernelBlock>> {
    let sigmas = [2.0, 1.0, 1.0];
    KernelFamily::ALL
        .iter()
        .zip(sigmas)
        .take(r)
        .map(|(&f, s)| Ok(KernelBlock::new(KernelSpec::isotropic(f, s, m, DEFAULT_SKEW_OFFSET)?)))
        .collect()
}

/// Planted sparse combination of kernel feature blocks.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub blocks: Vec<KernelBlock>,
    pub d_per_kernel: usize,
    /// Seed of the feature draws.
    pub feature_seed: u64,
    /// Weights over all blocks; inactive blocks are zero.
    pub w: Array1<f64>,
    pub noise_std: f64,
}

impl PlantedModel {
    /// Standard normal weights on the `active` blocks.
    pub fn new(
        blocks: Vec<KernelBlock>,
        d_per_kernel: usize,
        active: &[usize],
        noise_std: f64,
        seed: u64,
    ) -> Result<Self> {
        if let Some(&t) = active.iter().find(|&&t| t >= blocks.len()) {
            return Err(Error::Index {
                index: t,
                len: blocks.len(),
            });
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::Parameter(format!(
                "noise std must be non-negative, got {noise_std}"
            )));
        }
        let mut rng = stream(seed, WEIGHT_STREAM);
        let mut w = Array1::zeros(blocks.len() * d_per_kernel);
        for &t in active {
            for j in t * d_per_kernel..(t + 1) * d_per_kernel {
                w[j] = StandardNormal.sample(&mut rng);
            }
        }
        Ok(PlantedModel {
            blocks,
            d_per_kernel,
            feature_seed: seed,
            w,
            noise_std,
        })
    }

    /// Draws `n` noisy examples; `sample_seed` picks the inputs and noise.
    pub fn sample(&self, n: usize, m: usize, sample_seed: u64) -> Result<Dataset> {
        let x = uniform_inputs(n, m, sample_seed);
        let gf = build_grouped_features(x.view(), &self.blocks, self.d_per_kernel, self.feature_seed)?;
        let mut y = gf.features.dot(&self.w);
        add_noise(&mut y, self.noise_std, sample_seed)?;
        Dataset::new(x, y, None)
    }
}

/// Regression data whose noiseless target is a random function drawn from
/// (a fine random-feature approximation of) the kernel `spec`.
pub fn planted_kernel_regression(
    n: usize,
    spec: &KernelSpec,
    teacher_features: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    let m = spec.input_dim();
    let teacher = sample_base(m, teacher_features, seed.wrapping_add(TEACHER_STREAM << 32))?;
    let mut rng = stream(seed, WEIGHT_STREAM);
    let w = Array1::from_shape_simple_fn(teacher_features, || StandardNormal.sample(&mut rng));
    let x = uniform_inputs(n, m, seed);
    let mut y = embed(x.view(), spec, &teacher)?.values.dot(&w);
    add_noise(&mut y, noise_std, seed)?;
    Dataset::new(x, y, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    /// Group Lasso on random Fourier features.
    RffGl,
    /// Single-kernel hyperparameter learning.
    Skl,
    /// Gram-matrix alternating reference.
    GmklReference,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::RffGl => "rff_gl",
            BenchMethod::Skl => "skl",
            BenchMethod::GmklReference => "gmkl_reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: BenchMethod,
    pub n: usize,
    /// Total random features.
    pub d: usize,
    pub r: usize,
    /// Fastest wall time over the repeats; absent when the run failed.
    pub seconds: Option<f64>,
    /// Analytic estimate of the largest working set, in bytes.
    pub peak_memory_bytes: u64,
    /// Mean squared error on a held-out sample.
    pub mse: Option<f64>,
    pub iterations: usize,
    pub error: Option<String>,
}

/// Least-squares fit of `ln seconds = intercept + slope ln n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Root-mean-square residual of the fit in log space.
    pub residual: Option<f64>,
    pub points: usize,
    pub insufficient_points: bool,
}

pub fn fit_log_log(points: &[(usize, f64)]) -> SlopeFit {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, t)| *n > 0 && *t > 0.0 && t.is_finite())
        .map(|&(n, t)| ((n as f64).ln(), t.ln()))
        .collect();
    let k = pts.len();
    let distinct = {
        let mut xs: Vec<u64> = pts.iter().map(|p| p.0.to_bits()).collect();
        xs.sort_unstable();
        xs.dedup();
        xs.len()
    };
    if distinct < 2 {
        return SlopeFit {
            slope: None,
            intercept: None,
            residual: None,
            points: k,
            insufficient_points: true,
        };
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    SlopeFit {
        slope: Some(slope),
        intercept: Some(intercept),
        residual: Some((rss / k as f64).sqrt()),
        points: k,
        insufficient_points: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub fits: BTreeMap<BenchMethod, SlopeFit>,
}

pub const BENCH_CSV_COLUMNS: &str = "method,n,d,r,seconds,peak_memory_bytes,mse,iterations,error";

impl BenchReport {
    pub fn from_records(records: Vec<BenchRecord>) -> Self {
        let mut by_method: BTreeMap<BenchMethod, Vec<(usize, f64)>> = BTreeMap::new();
        for r in &records {
            let entry = by_method.entry(r.method).or_default();
            if let Some(s) = r.seconds {
                entry.push((r.n, s));
            }
        }
        let fits = by_method.into_iter().map(|(m, pts)| (m, fit_log_log(&pts))).collect();
        BenchReport { records, fits }
    }

    pub fn slope(&self, method: BenchMethod) -> Option<f64> {
        self.fits.get(&method).and_then(|f| f.slope)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BenchRecord> {
        self.records.iter().filter(|r| r.error.is_some())
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
        let mut s = format!("{BENCH_CSV_COLUMNS}\n");
        for r in &self.records {
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.method.name(),
                r.n,
                r.d,
                r.r,
                opt(r.seconds),
                r.peak_memory_bytes,
                opt(r.mse),
                r.iterations,
                err
            );
        }
        s
    }
}

/// Samples held out for the accuracy column of every run.
const HELD_OUT: usize = 1000;

struct RunOutcome {
    mse: f64,
    iterations: usize,
}

fn timed<F: FnMut() -> Result<RunOutcome>>(repeats: usize, mut run: F) -> Result<(f64, RunOutcome)> {
    let mut best = f64::INFINITY;
    let mut outcome = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let o = run()?;
        best = best.min(start.elapsed().as_secs_f64());
        outcome = Some(o);
    }
    // Guard against clocks too coarse for tiny runs.
    Ok((best.max(1e-9), outcome.expect("at least one repeat")))
}

fn mse(pred: &Array1<f64>, y: &Array1<f64>) -> f64 {
    (pred - y).mapv(|v| v * v).mean().unwrap_or(f64::NAN)
}

/// Times group-Lasso, SKL and reference training on planted synthetic data.
///
/// Every run executes a fixed number of iterations so the measured time
/// tracks the cost per iteration. Times cover embedding and training but not
/// data generation. Failed runs are recorded and do not stop the benchmark.
pub fn bench_scaling(config: &BenchConfig, loss: &LossSpec, seed: u64) -> Result<BenchReport> {
    let m = config.input_dim;
    let r = config.kernels;
    let dk = config.d_per_kernel;
    let d = r * dk;
    let blocks = default_blocks(r, m)?;
    let planted = PlantedModel::new(blocks.clone(), dk, &[0], config.noise_std, seed)?;
    let test = planted.sample(HELD_OUT, m, seed ^ 0x5eed_7e57)?;
    let mut records = Vec::new();

    let record = |method: BenchMethod, n: usize, mem: u64, res: Result<(f64, RunOutcome)>| {
        let rec = match res {
            Ok((seconds, o)) => BenchRecord {
                method,
                n,
                d,
                r,
                seconds: Some(seconds),
                peak_memory_bytes: mem,
                mse: Some(o.mse),
                iterations: o.iterations,
                error: None,
            },
            Err(e) => {
                warn!("{} at n = {n} failed: {e}", method.name());
                BenchRecord {
                    method,
                    n,
                    d,
                    r,
                    seconds: None,
                    peak_memory_bytes: mem,
                    mse: None,
                    iterations: 0,
                    error: Some(e.to_string()),
                }
            }
        };
        info!("{} n = {n}: {:?} s", method.name(), rec.seconds);
        rec
    };

    for &n in &config.n_grid {
        let data = planted.sample(n, m, seed.wrapping_add(n as u64));
        let data = match data {
            Ok(data) => data,
            Err(e) => {
                records.push(record(BenchMethod::RffGl, n, 0, Err(e)));
                continue;
            }
        };
        let opts = GroupLassoOptions::fixed_budget(config.mkl_iterations);
        // features, their concatenation buffer, gradient and iterate vectors
        let mem = 8 * (2 * n * d + 6 * n + 6 * d) as u64;
        let res = timed(config.repeats, || {
            let gf = build_grouped_features(data.x.view(), &blocks, dk, seed)?;
            let lambda = config.lambda_fraction * lambda_max(&gf, data.y.view(), loss)?;
            let model = train_group_lasso(&gf, data.y.view(), lambda, loss, &opts)?;
            let pred = model.predict(test.x.view())?;
            Ok(RunOutcome {
                mse: mse(&pred, &test.y),
                iterations: model.iterations,
            })
        });
        records.push(record(BenchMethod::RffGl, n, mem, res));

        if config.skl_iterations > 0 {
            let spec = &blocks[0].spec;
            let mem = 8 * (3 * n * d + 2 * d * d + 4 * n) as u64;
            let res = timed(config.repeats, || {
                let n_val = (n / 5).max(1);
                let problem = SklProblem::new(
                    data.x.slice(ndarray::s![n_val.., ..]).to_owned(),
                    data.y.slice(ndarray::s![n_val..]).to_owned(),
                    data.x.slice(ndarray::s![..n_val, ..]).to_owned(),
                    data.y.slice(ndarray::s![..n_val]).to_owned(),
                    spec.family(),
                )?;
                let base = sample_base(m, d, seed)?;
                let options = SklOptions {
                    max_iter: config.skl_iterations,
                    rel_tol: 0.0,
                    grad_tol: 0.0,
                    ..SklOptions::default()
                };
                let fit = learn_hyperparameters(&problem, spec.sigma(), &base, &options)?;
                let pred = fit.model.predict(test.x.view(), &base)?;
                Ok(RunOutcome {
                    mse: mse(&pred, &test.y),
                    iterations: fit.trace.accepted_steps(),
                })
            });
            records.push(record(BenchMethod::Skl, n, mem, res));
        }
    }

    for &n in &config.gmkl_grid {
        let data = match planted.sample(n, m, seed.wrapping_add(n as u64)) {
            Ok(data) => data,
            Err(e) => {
                records.push(record(BenchMethod::GmklReference, n, 0, Err(e)));
                continue;
            }
        };
        let opts = GmklOptions::fixed_budget(config.gmkl_iterations);
        // r Gram matrices, the combined kernel and the Cholesky factor
        let mem = 8 * ((r + 3) * n * n + n * d) as u64;
        let res = timed(config.repeats, || {
            let gf = build_grouped_features(data.x.view(), &blocks, dk, seed)?;
            let lambda = config.lambda_fraction * lambda_max(&gf, data.y.view(), loss)?;
            let sol = gmkl_reference(&gf, data.y.view(), std::f64::consts::SQRT_2 / lambda, loss, &opts)?;
            let test_features = gf.embed_like(test.x.view())?;
            let pred = test_features.dot(&sol.w);
            Ok(RunOutcome {
                mse: mse(&pred, &test.y),
                iterations: sol.iterations,
            })
        });
        records.push(record(BenchMethod::GmklReference, n, mem, res));
    }
    Ok(BenchReport::from_records(records))
}

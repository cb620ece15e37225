use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use fourierkl::bench::{bench_scaling, BenchMethod};
use fourierkl::data_io::{
    load_base_sample, load_config, load_model, parse_dataset_with_dim, save_base_sample, save_model,
    split_train_validation, Dataset, Model, RunConfig,
};
use fourierkl::mkl::{build_grouped_features, check_block_optimality, kernel_weights, lambda_max, train_group_lasso};
use fourierkl::skl::{learn_hyperparameters, SklProblem};
use fourierkl::verify::{run_suite, PropertyCheck, SuiteOptions};
use fourierkl::{embed, sample_base};
use ndarray::{s, Array1, ArrayView1};
use serde_json::{json, Value};

use crate::{Cli, Command, TrainArgs};

/// An input path that does not exist.
#[derive(Debug)]
struct MissingPath(PathBuf);

impl std::fmt::Display for MissingPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: no such file", self.0.display())
    }
}

impl std::error::Error for MissingPath {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    MissingPath,
    Data,
    Artifact,
    Parameter,
    Failure,
}

impl ErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::MissingPath => "missing_path",
            ErrorKind::Data => "data",
            ErrorKind::Artifact => "artifact",
            ErrorKind::Parameter => "parameter",
            ErrorKind::Failure => "failure",
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::MissingPath => 2,
            _ => 1,
        }
    }
}

pub fn error_kind(e: &anyhow::Error) -> ErrorKind {
    for cause in e.chain() {
        if cause.is::<MissingPath>() {
            return ErrorKind::MissingPath;
        }
        if let Some(err) = cause.downcast_ref::<fourierkl::Error>() {
            return match err {
                fourierkl::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                    ErrorKind::MissingPath
                }
                fourierkl::Error::Parse { .. } => ErrorKind::Data,
                fourierkl::Error::Artifact(_) | fourierkl::Error::Json(_) => ErrorKind::Artifact,
                fourierkl::Error::Parameter(_) | fourierkl::Error::Dimension(_) => ErrorKind::Parameter,
                _ => ErrorKind::Failure,
            };
        }
    }
    ErrorKind::Failure
}

struct RunContext {
    config: RunConfig,
    seed: u64,
    out_dir: PathBuf,
}

impl RunContext {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(MissingPath(path).into())
    }
}

/// `flag`, else the configured path, else an error naming both.
fn resolve(flag: Option<PathBuf>, configured: &Option<PathBuf>, flag_name: &str, key: &str) -> Result<PathBuf> {
    let path = flag.or_else(|| configured.clone()).ok_or_else(|| {
        anyhow!(fourierkl::Error::Parameter(format!(
            "no path given: pass --{flag_name} or set paths.{key}"
        )))
    })?;
    existing(path)
}

fn optional(flag: Option<PathBuf>, configured: &Option<PathBuf>) -> Result<Option<PathBuf>> {
    flag.or_else(|| configured.clone()).map(existing).transpose()
}

fn load(path: &Path, dim: Option<usize>) -> Result<Dataset> {
    Ok(parse_dataset_with_dim(path, dim)?)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn mse(pred: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let n = y.len().max(1) as f64;
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

fn test_mse(model: &Model, path: Option<PathBuf>) -> Result<Value> {
    Ok(match path {
        Some(p) => {
            let ds = load(&p, Some(model.input_dim()))?;
            json!(mse(model.predict(ds.x.view())?.view(), ds.y.view()))
        }
        None => Value::Null,
    })
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let config = match cli.global.config {
        Some(p) => load_config(existing(p)?)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    let seed = cli.global.seed.unwrap_or(config.seed);
    let out_dir = cli
        .global
        .out_dir
        .or_else(|| config.paths.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let ctx = RunContext { config, seed, out_dir };

    match cli.command {
        Command::Embed { data, base } => cmd_embed(&ctx, data, base),
        Command::TrainSkl(args) => cmd_train_skl(&ctx, args),
        Command::TrainMkl { data, lambda_fraction } => cmd_train_mkl(&ctx, data, lambda_fraction),
        Command::Predict { model, data } => cmd_predict(&ctx, model, data),
        Command::BenchScaling {
            n_grid,
            lambda_fraction,
        } => cmd_bench(&ctx, n_grid, lambda_fraction),
        Command::VerifyEquivalence { model, data, tolerance } => cmd_verify(&ctx, model, data, tolerance),
    }
}

fn cmd_embed(ctx: &RunContext, data: Option<PathBuf>, base: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = &ctx.config;
    let ds = load(&resolve(data, &cfg.paths.train, "data", "train")?, cfg.input_dim)?;
    let kernel = &cfg.kernels[0];
    let spec = kernel.spec(ds.dim())?;
    let cols = kernel.columns.clone().unwrap_or(0..ds.dim());
    let base = match base {
        Some(p) => load_base_sample(existing(p)?)?,
        None => sample_base(spec.input_dim(), cfg.d, ctx.seed)?,
    };

    let start = Instant::now();
    let phi = embed(ds.x.slice(s![.., cols]), &spec, &base)?;
    let seconds = start.elapsed().as_secs_f64();

    let mut csv = (1..=phi.ncols())
        .map(|j| format!("phi_{j}"))
        .collect::<Vec<_>>()
        .join(",");
    csv.push('\n');
    for row in phi.values.rows() {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        csv.push_str(&line.join(","));
        csv.push('\n');
    }
    write_text(&ctx.out("features.csv"), &csv)?;
    save_base_sample(&base, ctx.out("base.json"))?;
    write_json(
        &ctx.out("embed.metrics.json"),
        &json!({
            "family": spec.family(),
            "sigma": spec.sigma(),
            "n": phi.nrows(),
            "d": phi.ncols(),
            "input_dim": spec.input_dim(),
            "seed": base.seed(),
            "wall_time_seconds": seconds,
        }),
    )?;
    println!("embedded {} samples into {} features", phi.nrows(), phi.ncols());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_skl(ctx: &RunContext, args: TrainArgs) -> Result<ExitCode> {
    let cfg = &ctx.config;
    let kernel = &cfg.kernels[0];
    if kernel.columns.is_some() {
        bail!(fourierkl::Error::Parameter(
            "train-skl learns one kernel over all input columns; remove `columns`".into()
        ));
    }
    let data = load(&resolve(args.train, &cfg.paths.train, "train", "train")?, cfg.input_dim)?;
    let m = data.dim();
    let (train, validation) = match optional(args.validation, &cfg.paths.validation)? {
        Some(p) => (data, load(&p, Some(m))?),
        None => split_train_validation(&data, cfg.validation_fraction, ctx.seed)?,
    };
    let (n_train, n_validation) = (train.len(), validation.len());
    let problem = SklProblem::new(train.x, train.y, validation.x, validation.y, kernel.family)?
        .with_rho(cfg.rho)
        .with_lambda(cfg.lambda)
        .with_skew_offset(kernel.c);
    let sigma_init = kernel.sigma_init.expand(m)?;

    let start = Instant::now();
    let base = sample_base(m, cfg.d, ctx.seed)?;
    let fit = learn_hyperparameters(&problem, &sigma_init, &base, &cfg.skl)?;
    let seconds = start.elapsed().as_secs_f64();

    let train_pred = fit.model.predict(problem.train_x.view(), &base)?;
    let final_objective = fit.trace.records.last().map_or(f64::NAN, |r| r.objective);
    let mut trace = String::from("iteration,objective,gradient_norm\n");
    for r in &fit.trace.records {
        let _ = writeln!(trace, "{},{},{}", r.iteration, r.objective, r.gradient_norm);
    }
    let model = Model::Ridge(fit.model);
    save_model(&model, ctx.out("model.json"))?;
    write_text(&ctx.out("trace.csv"), &trace)?;
    write_json(
        &ctx.out("train-skl.metrics.json"),
        &json!({
            "family": kernel.family,
            "sigma_init": sigma_init,
            "sigma": fit.sigma,
            "d": cfg.d,
            "lambda": cfg.lambda,
            "rho": cfg.rho,
            "seed": ctx.seed,
            "n_train": n_train,
            "n_validation": n_validation,
            "iterations": fit.trace.accepted_steps(),
            "validation_objective": final_objective,
            "train_mse": mse(train_pred.view(), problem.train_y.view()),
            "validation_mse": fit.validation_mse,
            "test_mse": test_mse(&model, optional(args.test, &cfg.paths.test)?)?,
            "trace_non_increasing": fit.trace.is_non_increasing(),
            "wall_time_seconds": seconds,
        }),
    )?;
    println!(
        "sigma {:?}, validation MSE {:.6e} after {} steps",
        fit.sigma,
        fit.validation_mse,
        fit.trace.accepted_steps()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_mkl(ctx: &RunContext, args: TrainArgs, lambda_fraction: Option<f64>) -> Result<ExitCode> {
    let cfg = &ctx.config;
    if let Some(f) = lambda_fraction {
        if !(f > 0.0 && f.is_finite()) {
            bail!(fourierkl::Error::Parameter(format!(
                "--lambda-fraction must be positive, got {f}"
            )));
        }
    }
    let train = load(&resolve(args.train, &cfg.paths.train, "train", "train")?, cfg.input_dim)?;
    let m = train.dim();
    let blocks = cfg
        .kernels
        .iter()
        .map(|k| k.block(m))
        .collect::<fourierkl::Result<Vec<_>>>()?;

    let start = Instant::now();
    let gf = build_grouped_features(train.x.view(), &blocks, cfg.d, ctx.seed)?;
    let lmax = lambda_max(&gf, train.y.view(), &cfg.loss)?;
    let lambda = match (lambda_fraction, cfg.mkl_lambda) {
        (Some(f), _) => f * lmax,
        (None, Some(l)) => l,
        (None, None) => cfg.lambda_fraction * lmax,
    };
    if lambda.is_nan() || lambda <= 0.0 {
        bail!(fourierkl::Error::Parameter(format!(
            "penalty {lambda} is not positive (lambda_max = {lmax})"
        )));
    }
    let model = train_group_lasso(&gf, train.y.view(), lambda, &cfg.loss, &cfg.group_lasso)?;
    let seconds = start.elapsed().as_secs_f64();

    let d_t = kernel_weights(&model).d;
    let kernels: Vec<Value> = blocks
        .iter()
        .zip(&d_t)
        .map(|(b, d)| {
            json!({
                "family": b.spec.family(),
                "sigma": b.spec.sigma(),
                "columns": b.columns.as_ref().map(|r| [r.start, r.end]),
                "d_t": d,
            })
        })
        .collect();
    let train_mse = mse(gf.features.dot(&model.w).view(), train.y.view());
    let summary = json!({
        "lambda": lambda,
        "lambda_max": lmax,
        "lambda_fraction": if lmax > 0.0 { lambda / lmax } else { f64::INFINITY },
        "loss": cfg.loss,
        "d_per_kernel": cfg.d,
        "seed": ctx.seed,
        "n_train": train.len(),
        "objective": model.objective,
        "iterations": model.iterations,
        "converged": model.converged,
        "selected_kernels": d_t.iter().filter(|d| **d > 0.0).count(),
        "kernels": kernels,
        "train_mse": train_mse,
    });
    let model = Model::GroupLasso(model);
    let mut metrics = summary;
    metrics["validation_mse"] = test_mse(&model, optional(args.validation, &cfg.paths.validation)?)?;
    metrics["test_mse"] = test_mse(&model, optional(args.test, &cfg.paths.test)?)?;
    metrics["wall_time_seconds"] = json!(seconds);
    save_model(&model, ctx.out("model.json"))?;
    write_json(&ctx.out("train-mkl.metrics.json"), &metrics)?;
    println!("lambda {lambda:.6e} ({:.3} of lambda_max), d_t {d_t:?}", lambda / lmax);
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(ctx: &RunContext, model: Option<PathBuf>, data: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = &ctx.config;
    let model = load_model(resolve(model, &cfg.paths.model, "model", "model")?)?;
    let ds = load(
        &resolve(data, &cfg.paths.test, "data", "test")?,
        Some(model.input_dim()),
    )?;
    let pred = model.predict(ds.x.view())?;
    let mut csv = String::from("index,prediction,target\n");
    for (i, (p, t)) in pred.iter().zip(&ds.y).enumerate() {
        let _ = writeln!(csv, "{i},{p},{t}");
    }
    write_text(&ctx.out("predictions.csv"), &csv)?;
    let kind = match model {
        Model::Ridge(_) => "ridge",
        Model::GroupLasso(_) => "group_lasso",
    };
    let error = mse(pred.view(), ds.y.view());
    write_json(
        &ctx.out("predict.metrics.json"),
        &json!({ "model": kind, "n": ds.len(), "mse": error }),
    )?;
    println!("{} predictions, MSE {error:.6e}", ds.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(ctx: &RunContext, n_grid: Option<Vec<usize>>, lambda_fraction: Option<f64>) -> Result<ExitCode> {
    let mut bench = ctx.config.bench.clone();
    if let Some(grid) = n_grid {
        bench.n_grid = grid;
    }
    if let Some(f) = lambda_fraction {
        bench.lambda_fraction = f;
    }
    let report = bench_scaling(&bench, &ctx.config.loss, ctx.seed)?;
    write_text(&ctx.out("bench.csv"), &report.to_csv())?;
    write_json(&ctx.out("bench.json"), &serde_json::to_value(&report)?)?;
    for method in [BenchMethod::RffGl, BenchMethod::Skl, BenchMethod::GmklReference] {
        match report.fits.get(&method) {
            Some(fit) if !fit.insufficient_points => println!(
                "{}: slope {:.3} (log-log residual {:.3}, {} points)",
                method.name(),
                fit.slope.unwrap_or(f64::NAN),
                fit.residual.unwrap_or(f64::NAN),
                fit.points
            ),
            Some(fit) => println!("{}: insufficient points ({}) for a slope", method.name(), fit.points),
            None => println!("{}: no successful runs", method.name()),
        }
    }
    for f in report.failures() {
        eprintln!(
            "run failed: {} at N = {}: {}",
            f.method.name(),
            f.n,
            f.error.as_deref().unwrap_or("")
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn model_checks(model: &Model, data: Option<&Dataset>, tol: f64) -> Result<Vec<PropertyCheck>> {
    let finite = |name: &str, v: &Array1<f64>| {
        let bad = v.iter().filter(|x| !x.is_finite()).count();
        PropertyCheck::at_most(name, bad as f64, 0.0, "non-finite values".into())
    };
    let mut checks = Vec::new();
    match model {
        Model::Ridge(m) => checks.push(finite("model_finite_coefficients", &m.beta)),
        Model::GroupLasso(m) => {
            checks.push(finite("model_finite_coefficients", &m.w));
            if let Some(ds) = data {
                let gf = build_grouped_features(ds.x.view(), &m.blocks, m.d_per_kernel, m.seed)?;
                let kkt = check_block_optimality(
                    gf.features.view(),
                    ds.y.view(),
                    m.w.view(),
                    &m.groups,
                    m.lambda,
                    &m.loss,
                    tol,
                );
                checks.push(PropertyCheck::at_most(
                    "model_block_optimality",
                    (kkt.nonzero_block_residual / kkt.gradient_norm.max(1.0)).max(kkt.zero_block_excess),
                    tol,
                    "subgradient conditions of the stored model on the given data".into(),
                ));
            }
        }
    }
    if let Some(ds) = data {
        checks.push(finite("model_finite_predictions", &model.predict(ds.x.view())?));
    }
    Ok(checks)
}

fn cmd_verify(
    ctx: &RunContext,
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    tolerance: Option<f64>,
) -> Result<ExitCode> {
    let cfg = &ctx.config;
    let options = SuiteOptions {
        seed: ctx.seed,
        tolerance,
        ..SuiteOptions::default()
    };
    let mut checks = Vec::new();
    if let Some(path) = optional(model, &cfg.paths.model)? {
        let model = load_model(&path)?;
        let ds = optional(data, &cfg.paths.train)?
            .map(|p| load(&p, Some(model.input_dim())))
            .transpose()?;
        checks.extend(model_checks(&model, ds.as_ref(), tolerance.unwrap_or(cfg.tolerance))?);
    }
    let mut report = run_suite(&options)?;
    checks.append(&mut report.checks);
    report.checks = checks;

    for c in &report.checks {
        println!(
            "{} {}: {:.3e} (threshold {:.3e}) {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold,
            c.detail
        );
    }
    write_json(&ctx.out("verify.json"), &serde_json::to_value(&report)?)?;
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", report.checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "{} of {} checks failed: {}",
            failed.len(),
            report.checks.len(),
            failed.join(", ")
        );
        Ok(ExitCode::FAILURE)
    }
}

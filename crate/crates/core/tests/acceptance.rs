//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits nonzero if any failed.

use std::alloc::{GlobalAlloc, Layout, System};
use std::f64::consts::SQRT_2;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use fourierkl::bench::{bench_scaling, planted_kernel_regression, BenchMethod};
use fourierkl::data_io::BenchConfig;
use fourierkl::feature_map::DEFAULT_SKEW_OFFSET;
use fourierkl::mkl::{
    build_grouped_features, gmkl_reference, kernel_weights, lambda_max, train_group_lasso, GmklOptions,
    GroupLassoOptions, GroupedFeatures, KernelBlock, LossKind, LossSpec,
};
use fourierkl::skl::{
    evaluate, learn_hyperparameters, validation_value_and_gradient, DescentMethod, SklOptions, SklProblem,
};
use fourierkl::verify::{
    am_gm_check, equivalence_gap, equivalence_instance, gradient_relative_error, loss_sup_gap, monte_carlo_max_errors,
    random_skl_instance,
};
use fourierkl::{embed, sample_base, KernelFamily, KernelSpec};
use ndarray::{s, Array1, ArrayView1};

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static LARGEST: AtomicUsize = AtomicUsize::new(0);

fn grew(size: usize) {
    let live = LIVE.fetch_add(size, Ordering::Relaxed) + size;
    PEAK.fetch_max(live, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            LARGEST.fetch_max(layout.size(), Ordering::Relaxed);
            grew(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            LARGEST.fetch_max(layout.size(), Ordering::Relaxed);
            grew(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            LARGEST.fetch_max(new_size, Ordering::Relaxed);
            LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
            grew(new_size);
        }
        p
    }
}

#[global_allocator]
static ALLOCATOR: Counting = Counting;

/// Largest single allocation and peak growth of live bytes while `f` runs.
fn audit<T>(f: impl FnOnce() -> T) -> (T, usize, usize) {
    let base = LIVE.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    LARGEST.store(0, Ordering::Relaxed);
    let out = f();
    let peak = PEAK.load(Ordering::Relaxed).saturating_sub(base);
    (out, LARGEST.load(Ordering::Relaxed), peak)
}

struct Outcome {
    passed: bool,
    summary: String,
}

fn run(id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let passed = out.passed && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" (limit {} s)", l.as_secs()));
    let late = if in_time { "" } else { " [over time limit]" };
    println!(
        "{} criterion {id} {name}: {} | {:.1} s{budget}{late}",
        if passed { "PASS" } else { "FAIL" },
        out.summary,
        elapsed.as_secs_f64()
    );
    passed
}

fn monte_carlo() -> Outcome {
    let seeds = 20;
    let mut passed = true;
    let mut parts = Vec::new();
    for family in KernelFamily::ALL {
        let spec = KernelSpec::isotropic(family, 1.0, 3, DEFAULT_SKEW_OFFSET).unwrap();
        let (mut e500, mut e8000, mut worst4000): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for seed in 0..seeds {
            let e = monte_carlo_max_errors(&spec, 100, &[500, 4000, 8000], 1000 + seed).unwrap();
            e500 += e[0] / seeds as f64;
            worst4000 = worst4000.max(e[1]);
            e8000 += e[2] / seeds as f64;
        }
        let ratio = e500 / e8000;
        passed &= (2.0..=8.0).contains(&ratio) && worst4000 <= 0.08;
        parts.push(format!("{family}: ratio {ratio:.2}, max err at 4000 {worst4000:.4}"));
    }
    Outcome {
        passed,
        summary: parts.join("; "),
    }
}

fn gradient_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut draws = 0;
    for (f, family) in KernelFamily::ALL.into_iter().enumerate() {
        for draw in 0..10u64 {
            let seed = 500 + 50 * f as u64 + draw;
            let (problem, sigma) = random_skl_instance(family, 80, 40, 3, seed).unwrap();
            let base = sample_base(3, 60, seed).unwrap();
            worst = worst.max(gradient_relative_error(&sigma, &problem, &base).unwrap());
            draws += 1;
        }
    }
    Outcome {
        passed: worst <= 1e-4,
        summary: format!("largest relative error {worst:.2e} over {draws} draws (bound 1e-4)"),
    }
}

fn skl_effectiveness() -> Outcome {
    let m = 2;
    let teacher = KernelSpec::isotropic(KernelFamily::Gaussian, 3.0, m, DEFAULT_SKEW_OFFSET).unwrap();
    let data = planted_kernel_regression(600, &teacher, 2000, 0.1, 77).unwrap();
    let (n_train, d) = (400, 300);
    let problem = SklProblem::new(
        data.x.slice(s![..n_train, ..]).to_owned(),
        data.y.slice(s![..n_train]).to_owned(),
        data.x.slice(s![n_train.., ..]).to_owned(),
        data.y.slice(s![n_train..]).to_owned(),
        KernelFamily::Gaussian,
    )
    .unwrap();
    let base = sample_base(m, d, 78).unwrap();
    let grid = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let (best_sigma, best) = grid
        .iter()
        .map(|&g| (g, evaluate(&[g; 2], &problem, &base).unwrap().mse()))
        .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let options = SklOptions {
        method: DescentMethod::Bfgs,
        ..SklOptions::default()
    };
    let fit = learn_hyperparameters(&problem, &[1.0; 2], &base, &options).unwrap();
    Outcome {
        passed: fit.validation_mse <= 1.05 * best,
        summary: format!(
            "learned sigma {:.3?} validation MSE {:.5}, best grid sigma {best_sigma} MSE {best:.5}",
            fit.sigma, fit.validation_mse
        ),
    }
}

fn equivalence() -> Outcome {
    let (gf, y) = equivalence_instance(200, 50, 11).unwrap();
    let mut passed = true;
    let mut parts = Vec::new();
    for loss in [LossSpec::quadratic(), LossSpec::default()] {
        let gap = equivalence_gap(
            &gf,
            y.view(),
            1.0,
            &loss,
            &GroupLassoOptions::default(),
            &GmklOptions::default(),
        )
        .unwrap();
        passed &= gap.objective_relative_gap <= 1e-3 && gap.kernel_weight_gap <= 1e-3;
        parts.push(format!(
            "{:?}: objective gap {:.1e}, d gap {:.1e}",
            loss.kind, gap.objective_relative_gap, gap.kernel_weight_gap
        ));
    }
    // The reference's own d satisfies d_t = ||w_t|| / sqrt(2).
    let sol = gmkl_reference(&gf, y.view(), 1.0, &LossSpec::default(), &GmklOptions::default()).unwrap();
    let own = gf
        .groups
        .iter()
        .zip(&sol.d)
        .map(|(g, d)| (d - norm(sol.w.slice(s![g.clone()])) / SQRT_2).abs())
        .fold(0.0, f64::max);
    passed &= own <= 1e-3;
    let amgm = am_gm_check(10_000, 5, 12);
    passed &= amgm.min_slack > 0.0 && amgm.spurious_equalities == 0 && amgm.max_gap_at_minimizer < 1e-10;
    parts.push(format!(
        "reference d consistency {own:.1e}; AM-GM over {} draws min slack {:.1e}, gap at minimizer {:.1e}",
        amgm.draws, amgm.min_slack, amgm.max_gap_at_minimizer
    ));
    Outcome {
        passed,
        summary: parts.join("; "),
    }
}

fn loss_approximation() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for gamma in [1.0, 5.0, 10.0] {
        let gap = loss_sup_gap(0.1, gamma, 40_001);
        let bound = 4.0 * 2f64.ln() / gamma;
        passed &= gap <= bound;
        parts.push(format!("gamma {gamma}: {gap:.4} <= {bound:.4}"));
    }
    Outcome {
        passed,
        summary: parts.join("; "),
    }
}

fn scaling() -> Outcome {
    let config = BenchConfig::default();
    let report = bench_scaling(&config, &LossSpec::default(), 2024).unwrap();
    let gl = report.slope(BenchMethod::RffGl);
    let gmkl = report.slope(BenchMethod::GmklReference);
    let skl = report.slope(BenchMethod::Skl);
    let failures = report.failures().count();
    let passed = failures == 0 && gl.is_some_and(|s| (s - 1.0).abs() <= 0.25) && gmkl.is_some_and(|s| s > 1.5);
    let fmt = |m: BenchMethod| {
        let f = &report.fits[&m];
        format!(
            "{:.3} (residual {:.3})",
            f.slope.unwrap_or(f64::NAN),
            f.residual.unwrap_or(f64::NAN)
        )
    };
    Outcome {
        passed,
        summary: format!(
            "RFF-GL slope {} over N {:?}; reference slope {} over N {:?}; SKL slope {} (reported only{}); {failures} failed runs",
            fmt(BenchMethod::RffGl),
            config.n_grid,
            fmt(BenchMethod::GmklReference),
            config.gmkl_grid,
            fmt(BenchMethod::Skl),
            if skl.is_some() { "" } else { ", missing" },
        ),
    }
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn logistic(z: f64) -> f64 {
    0.5 * (1.0 + (0.5 * z).tanh())
}

/// Loss derivative written out independently of the library.
fn loss_prime(loss: &LossSpec, y: f64, f: f64) -> f64 {
    match loss.kind {
        LossKind::Quadratic => f - y,
        LossKind::EpsilonIgll => {
            let r = f - y;
            logistic(loss.gamma * (r - loss.epsilon)) - logistic(loss.gamma * (-r - loss.epsilon))
        }
    }
}

fn loss_gradient(gf: &GroupedFeatures, y: &Array1<f64>, w: &Array1<f64>, loss: &LossSpec) -> Array1<f64> {
    let f = gf.features.dot(w);
    let lp = Array1::from_iter(y.iter().zip(&f).map(|(&yi, &fi)| loss_prime(loss, yi, fi)));
    gf.features.t().dot(&lp)
}

fn solver_optimality() -> Outcome {
    let mut runs = 0;
    let mut converged_runs = 0;
    let mut violations = 0;
    let mut nonzero_at_max = 0;
    let mut worst: f64 = 0.0;
    let mut lmax_gap: f64 = 0.0;
    for seed in 0..4u64 {
        let (gf, y) = equivalence_instance(150, 25, 40 + seed).unwrap();
        for loss in [
            LossSpec::quadratic(),
            LossSpec::default(),
            LossSpec::epsilon_igll(0.1, 5.0),
        ] {
            let g0 = loss_gradient(&gf, &y, &Array1::zeros(gf.ncols()), &loss);
            let lmax = gf
                .groups
                .iter()
                .map(|g| norm(g0.slice(s![g.clone()])))
                .fold(0.0, f64::max);
            for frac in [0.01, 0.1, 0.5] {
                let lambda = frac * lmax;
                let model = train_group_lasso(&gf, y.view(), lambda, &loss, &GroupLassoOptions::default()).unwrap();
                runs += 1;
                if !model.converged {
                    continue;
                }
                converged_runs += 1;
                let g = loss_gradient(&gf, &y, &model.w, &loss);
                let gnorm = norm(g.view());
                for grp in &gf.groups {
                    let wt = model.w.slice(s![grp.clone()]);
                    let gt = g.slice(s![grp.clone()]);
                    let wn = norm(wt);
                    let ok = if wn == 0.0 {
                        norm(gt) <= lambda * (1.0 + 1e-5)
                    } else {
                        let r = &gt + &(lambda / wn * &wt);
                        worst = worst.max(norm(r.view()) / gnorm.max(1.0));
                        norm(r.view()) <= 1e-5 * gnorm.max(1.0)
                    };
                    violations += usize::from(!ok);
                }
            }
            let library_lmax = lambda_max(&gf, y.view(), &loss).unwrap();
            lmax_gap = lmax_gap.max((library_lmax - lmax).abs() / lmax);
            for scale in [1.0, 2.0] {
                let model = train_group_lasso(
                    &gf,
                    y.view(),
                    scale * library_lmax,
                    &loss,
                    &GroupLassoOptions::default(),
                )
                .unwrap();
                nonzero_at_max += usize::from(model.w.iter().any(|v| *v != 0.0));
            }
        }
    }
    Outcome {
        passed: violations == 0 && nonzero_at_max == 0 && converged_runs > 0 && lmax_gap <= 1e-12,
        summary: format!(
            "{converged_runs}/{runs} runs converged, {violations} block violations (worst relative residual {worst:.1e}), {nonzero_at_max} nonzero models at lambda >= lambda_max (lambda_max relative disagreement {lmax_gap:.1e})"
        ),
    }
}

fn memory_contract() -> Outcome {
    let n = 3000;
    let m = 3;
    let nn_bytes = n * n * std::mem::size_of::<f64>();
    let mut worst_single = 0;
    let mut worst_peak = 0;
    let mut paths = Vec::new();

    let spec = KernelSpec::isotropic(KernelFamily::SkewedChi2, 1.0, m, DEFAULT_SKEW_OFFSET).unwrap();
    let data = planted_kernel_regression(n + 1000, &spec, 200, 0.1, 5).unwrap();
    let x = data.x.slice(s![..n, ..]).to_owned();
    let y = data.y.slice(s![..n]).to_owned();
    let mut record = |name: &str, largest: usize, peak: usize| {
        worst_single = worst_single.max(largest);
        worst_peak = worst_peak.max(peak);
        paths.push(format!("{name} {:.1} MB", peak as f64 / 1e6));
    };

    let base = sample_base(m, 150, 1).unwrap();
    let (_, largest, peak) = audit(|| embed(x.view(), &spec, &base).unwrap());
    record("embed", largest, peak);

    let problem = SklProblem::new(
        x.clone(),
        y.clone(),
        data.x.slice(s![n.., ..]).to_owned(),
        data.y.slice(s![n..]).to_owned(),
        KernelFamily::SkewedChi2,
    )
    .unwrap();
    let (_, largest, peak) = audit(|| validation_value_and_gradient(&[1.0; 3], &problem, &base).unwrap());
    record("skl gradient", largest, peak);
    let opts = SklOptions {
        max_iter: 2,
        ..SklOptions::default()
    };
    let (_, largest, peak) = audit(|| learn_hyperparameters(&problem, &[1.0; 3], &base, &opts).unwrap());
    record("skl descent", largest, peak);

    let blocks: Vec<KernelBlock> = KernelFamily::ALL
        .iter()
        .map(|&f| KernelBlock::new(KernelSpec::isotropic(f, 1.0, m, DEFAULT_SKEW_OFFSET).unwrap()))
        .collect();
    for loss in [LossSpec::quadratic(), LossSpec::default()] {
        let (model, largest, peak) = audit(|| {
            let gf = build_grouped_features(x.view(), &blocks, 100, 3).unwrap();
            train_group_lasso(&gf, y.view(), 1.0, &loss, &GroupLassoOptions::fixed_budget(20)).unwrap()
        });
        record(&format!("group lasso ({:?})", loss.kind), largest, peak);
        let (_, largest, peak) = audit(|| {
            let w = kernel_weights(&model);
            (model.predict(x.view()).unwrap(), w)
        });
        record("predict", largest, peak);
    }
    let passed = worst_single < nn_bytes && worst_peak < nn_bytes;

    // The audit must be able to see a Gram matrix.
    let nr = 1200;
    let (gf, yr) = equivalence_instance(nr, 20, 2).unwrap();
    let (_, largest, _) = audit(|| {
        gmkl_reference(
            &gf,
            yr.view(),
            1.0,
            &LossSpec::quadratic(),
            &GmklOptions::fixed_budget(1),
        )
        .unwrap()
    });
    let detected = largest >= nr * nr * 8;

    Outcome {
        passed: passed && detected,
        summary: format!(
            "N = {n}: largest allocation {:.1} MB, peak {:.1} MB vs N x N {:.1} MB [{}]; reference solver at N = {nr} allocates {:.1} MB ({})",
            worst_single as f64 / 1e6,
            worst_peak as f64 / 1e6,
            nn_bytes as f64 / 1e6,
            paths.join(", "),
            largest as f64 / 1e6,
            if detected { "detected" } else { "not detected" }
        ),
    }
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run(1, "Monte Carlo approximation", Some(secs(30)), monte_carlo),
        run(2, "gradient fidelity", Some(secs(60)), gradient_fidelity),
        run(3, "SKL effectiveness", Some(secs(120)), skl_effectiveness),
        run(4, "equivalence", Some(secs(60)), equivalence),
        run(5, "loss approximation", Some(secs(5)), loss_approximation),
        run(6, "scaling shape", Some(secs(600)), scaling),
        run(7, "solver optimality", Some(secs(30)), solver_optimality),
        run(8, "memory contract", None, memory_contract),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

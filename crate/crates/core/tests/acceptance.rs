//! Acceptance suite. Runs without the libtest harness so that each criterion
//! prints a single PASS/FAIL line in ordinary `cargo test` output.

use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use wls_core::deform::{
    check_c2_montecarlo, check_c3, generate_dataset, grid_1d, grid_2d, preset, TemplateSpec, BENCHMARK_1D, PRESETS_1D,
    PRESETS_2D,
};
use wls_core::frechet::{
    frechet_coeff_cloud, frechet_fit_1d_default, frechet_fit_gauss, frechet_predict_1d, frechet_predict_gauss,
};
use wls_core::gaussian::{fit_gaussian, gaussian_foc_residual, marginal, marginal_cov, GaussianConfig};
use wls_core::inference::{select, ConditionSpec, Constraint};
use wls_core::linalg::{Matrix, SpdMatrix};
use wls_core::metrics::rate_study;
use wls_core::oracle::{solve_multimarginal, DiscreteProblem};
use wls_core::particle::{fit, gradient_step, normal_equation_residual, objective, ParticleCloud, SolverConfig};
use wls_core::rng::rng_from_seed;
use wls_core::transport::{barycenter_residual, gaussian_w2_squared, w2_squared_1d, GaussianMeasure, QuantileInterp, Univariate};
use wls_core::Design;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Paper error for each benchmark family; thresholds are twice these.
fn particle_threshold(family: &str) -> f64 {
    match family {
        "additive" => 0.15,
        "radial" => 2.0 * 0.143,
        "location_scale" => 2.0 * 0.167,
        "sinusoidal" => 0.08,
        "tanh_warp" => 2.0 * 0.067,
        other => panic!("no threshold for {other}"),
    }
}

struct ParticleRun {
    family: &'static str,
    seed: u64,
    wls_error: f64,
    frechet_error: f64,
    residual: f64,
    secs: f64,
}

fn mean_w2_to_truth(fitted: &[Univariate], truth: &[GaussianMeasure]) -> f64 {
    let total: f64 = fitted
        .iter()
        .zip(truth)
        .map(|(f, g)| w2_squared_1d(f, &Univariate::Gaussian(g.clone())).unwrap().sqrt())
        .sum();
    total / truth.len() as f64
}

fn table5_runs() -> Vec<ParticleRun> {
    let template = TemplateSpec::univariate();
    let mut runs = Vec::new();
    for family in BENCHMARK_1D {
        let spec = preset(family).unwrap();
        for seed in SEEDS {
            let start = Instant::now();
            let ds = generate_dataset(&template, &spec, 50, 500, seed).unwrap();
            let responses: Vec<Univariate> = ds.responses.iter().cloned().map(Univariate::Empirical).collect();
            let config = SolverConfig { seed, batch: None, ..SolverConfig::default() };
            let (cloud, _) = fit(&ds.design, &responses, &config).unwrap();
            let pushed: Vec<Univariate> =
                ds.design.rows().iter().map(|x| Univariate::Empirical(cloud.pushforward(x).unwrap())).collect();
            let fm = frechet_fit_1d_default(&ds.design, &responses).unwrap();
            let fr: Vec<Univariate> =
                ds.design.rows().iter().map(|x| Univariate::Quantiles(frechet_predict_1d(&fm, x).unwrap())).collect();
            runs.push(ParticleRun {
                family,
                seed,
                wls_error: mean_w2_to_truth(&pushed, &ds.truth),
                frechet_error: mean_w2_to_truth(&fr, &ds.truth),
                residual: normal_equation_residual(&cloud, &ds.design, &responses, config.interp).unwrap(),
                secs: start.elapsed().as_secs_f64(),
            });
        }
    }
    runs
}

fn criterion_1(runs: &[ParticleRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for family in BENCHMARK_1D {
        let rs: Vec<&ParticleRun> = runs.iter().filter(|r| r.family == family).collect();
        let mean = rs.iter().map(|r| r.wls_error).sum::<f64>() / rs.len() as f64;
        let fr_mean = rs.iter().map(|r| r.frechet_error).sum::<f64>() / rs.len() as f64;
        let beats = rs.iter().all(|r| r.wls_error < r.frechet_error);
        let secs: f64 = rs.iter().map(|r| r.secs).sum();
        let ok = mean <= particle_threshold(family) && beats && secs <= 300.0;
        pass &= ok;
        parts.push(format!("{family}: wls {mean:.3} (<= {:.3}) frechet {fr_mean:.3} {secs:.0}s", particle_threshold(family)));
        if !beats {
            for r in rs.iter().filter(|r| r.wls_error >= r.frechet_error) {
                parts.push(format!("seed {} not below frechet", r.seed));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

struct GaussRun {
    family: &'static str,
    wls_error: f64,
    frechet_error: f64,
    foc: f64,
}

fn bw_error(a: &[GaussianMeasure], b: &[GaussianMeasure]) -> f64 {
    a.iter().zip(b).map(|(x, y)| gaussian_w2_squared(x, y).unwrap().sqrt()).sum::<f64>() / a.len() as f64
}

fn table6_runs() -> (Vec<GaussRun>, f64) {
    let start = Instant::now();
    let template = TemplateSpec::bivariate();
    let mut runs = Vec::new();
    for family in PRESETS_2D {
        let spec = preset(family).unwrap();
        for seed in SEEDS {
            let ds = generate_dataset(&template, &spec, 50, 500, seed).unwrap();
            let responses: Vec<GaussianMeasure> = ds.responses.iter().map(|r| r.to_gaussian()).collect();
            let config = GaussianConfig { iterations: 300, ..GaussianConfig::default() };
            let (q, _) = fit_gaussian(&ds.design, &responses, &config).unwrap();
            let fitted: Vec<GaussianMeasure> = ds.design.rows().iter().map(|x| marginal(&q, x).unwrap()).collect();
            let fm = frechet_fit_gauss(&ds.design, &responses).unwrap();
            let fr: Vec<GaussianMeasure> =
                ds.design.rows().iter().map(|x| frechet_predict_gauss(&fm, x).unwrap()).collect();
            runs.push(GaussRun {
                family,
                wls_error: bw_error(&fitted, &ds.truth),
                frechet_error: bw_error(&fr, &ds.truth),
                foc: gaussian_foc_residual(&q, &ds.design, &responses).unwrap(),
            });
        }
    }
    (runs, start.elapsed().as_secs_f64())
}

fn criterion_2(runs: &[GaussRun], secs: f64) -> Outcome {
    let mut pass = secs <= 60.0;
    let mut parts = Vec::new();
    for family in PRESETS_2D {
        let rs: Vec<&GaussRun> = runs.iter().filter(|r| r.family == family).collect();
        let w = rs.iter().map(|r| r.wls_error).sum::<f64>() / rs.len() as f64;
        let f = rs.iter().map(|r| r.frechet_error).sum::<f64>() / rs.len() as f64;
        pass &= w <= 0.12 && f >= 0.25;
        parts.push(format!("{family}: wls {w:.3} frechet {f:.3}"));
    }
    parts.push(format!("{secs:.1}s"));
    outcome(pass, parts.join("; "))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let template = TemplateSpec::univariate();
    let ns = [10, 25, 50, 100, 200, 500];
    let seeds: Vec<u64> = (0..10).collect();
    let config = GaussianConfig { iterations: 500, ..GaussianConfig::default() };
    let mut pass = true;
    let mut parts = Vec::new();
    for family in ["additive", "radial", "location_scale"] {
        let study = rate_study(&template, &preset(family).unwrap(), &ns, &seeds, &config).unwrap();
        match study.slope {
            Some(s) => {
                pass &= (-1.2..=-0.4).contains(&s);
                parts.push(format!("{family}: slope {s:.3}"));
            }
            None => {
                pass = false;
                parts.push(format!("{family}: no slope"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 600.0;
    parts.push(format!("{secs:.1}s"));
    outcome(pass, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let mut rng = rng_from_seed(2024);
    let instances = 60;
    let mut worst_above = f64::NEG_INFINITY;
    let mut worst_below = 0.0f64;
    let mut worst_identity = 0.0f64;
    let mut stuck = 0;
    for _ in 0..instances {
        let n = rng.random_range(2..=3usize);
        let m = rng.random_range(1..=3usize);
        let p = rng.random_range(1..=2usize);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| if p == 1 { vec![rng.random_range(0.5..2.0)] } else { vec![1.0, rng.random_range(-2.0..2.0)] })
            .collect();
        let design = Design::new(rows).unwrap();
        let atoms: Vec<Vec<Vec<f64>>> =
            (0..n).map(|_| (0..m).map(|_| vec![rng.random_range(-2.0..2.0)]).collect()).collect();
        let problem = DiscreteProblem::new(design.clone(), atoms.clone()).unwrap();
        let sol = solve_multimarginal(&problem).unwrap();
        // both sides subtract terms of the size of the second moment, so compare relative to it
        let moment = atoms.iter().flatten().map(|a| a[0] * a[0]).sum::<f64>() / (n * m) as f64;
        worst_identity = worst_identity.max((sol.value - sol.value_explained_variance).abs() / moment.max(1.0));

        let responses: Vec<Univariate> =
            atoms.iter().map(|r| Univariate::empirical(r.iter().map(|a| a[0]).collect()).unwrap()).collect();
        // M a multiple of m, step interpolation: every particle objective is the cost of a coupling
        let config = SolverConfig {
            particles: 60,
            interp: QuantileInterp::Step,
            log_every: 500,
            ..SolverConfig::plain(1.0 / design.smoothness(), 3000)
        };
        let (cloud, _) = fit(&design, &responses, &config).unwrap();
        let g = objective(&cloud, &design, &responses).unwrap();
        worst_above = worst_above.max(g - sol.value);
        if g - sol.value > 0.05 {
            stuck += 1;
        }
        worst_below = worst_below.max(sol.value - g);
    }
    let pass = worst_above <= 0.05 && worst_below <= 1e-9 && worst_identity <= 1e-10;
    outcome(
        pass,
        format!(
            "{instances} instances, {stuck} above tolerance: max gap above optimum {worst_above:.2e}, max below {worst_below:.2e}, relative identity error {worst_identity:.2e}"
        ),
    )
}

fn criterion_5(runs: &[ParticleRun], gauss: &[GaussRun]) -> Outcome {
    let particle = runs.iter().map(|r| r.residual).fold(0.0, f64::max);
    let foc = gauss.iter().map(|r| r.foc).fold(0.0, f64::max);
    outcome(particle <= 0.05 && foc <= 1e-3, format!("max particle residual {particle:.2e}, max gaussian residual {foc:.2e}"))
}

fn criterion_6() -> Outcome {
    let mut rng = rng_from_seed(6);
    // constant design: particles converge to the quantile average
    let m = 200;
    let responses: Vec<Univariate> = (0..5)
        .map(|i| {
            let shift = i as f64 - 2.0;
            let scale = 0.5 + 0.3 * i as f64;
            let v: Vec<f64> = (0..m).map(|_| shift + scale * rng.random_range(-1.0f64..1.0).powi(3)).collect();
            Univariate::empirical(v).unwrap()
        })
        .collect();
    let design = Design::constant(5, 1.0).unwrap();
    let particles = 1000;
    let config = SolverConfig {
        particles,
        interp: QuantileInterp::Step,
        ..SolverConfig::plain(1.0 / design.smoothness(), 200)
    };
    let (cloud, _) = fit(&design, &responses, &config).unwrap();
    let mut pushed: Vec<f64> = cloud.predictions(&[1.0]);
    pushed.sort_by(f64::total_cmp);
    let particle_gap = pushed
        .iter()
        .enumerate()
        .map(|(r, z)| {
            let u = (r as f64 + 0.5) / particles as f64;
            let avg = responses.iter().map(|nu| nu.quantile(u, QuantileInterp::Step)).sum::<f64>() / 5.0;
            (z - avg).abs()
        })
        .fold(0.0, f64::max);

    // rank-one design xᵢ = aᵢ x₁: the marginal at x₁ is a weighted barycenter
    let x1 = [1.0, 0.5];
    let a = [1.0, 1.5, 0.7, 2.0];
    let design = Design::new(a.iter().map(|ai| vec![ai * x1[0], ai * x1[1]]).collect()).unwrap();
    let covs: Vec<SpdMatrix> = (0..a.len())
        .map(|_| {
            let l = Matrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            SpdMatrix::new(&l * l.transpose() + Matrix::identity(2, 2) * 0.2).unwrap()
        })
        .collect();
    let responses: Vec<GaussianMeasure> =
        covs.iter().map(|c| GaussianMeasure::new(nalgebra::DVector::zeros(2), c.clone()).unwrap()).collect();
    let config = GaussianConfig { iterations: 5000, tol: 1e-12, ..GaussianConfig::default() };
    let (q, _) = fit_gaussian(&design, &responses, &config).unwrap();
    let s = marginal_cov(&q.cov, 2, &x1).unwrap();
    let total: f64 = a.iter().map(|v| v * v).sum();
    let weights: Vec<f64> = a.iter().map(|v| v * v / total).collect();
    let scaled: Vec<SpdMatrix> =
        covs.iter().zip(&a).map(|(c, ai)| SpdMatrix::new(c.as_matrix() / (ai * ai)).unwrap()).collect();
    let bary = barycenter_residual(&s, &scaled, &weights);
    outcome(
        particle_gap <= 1e-3 && bary <= 1e-6,
        format!("constant design quantile gap {particle_gap:.2e}, rank-one barycenter residual {bary:.2e}"),
    )
}

fn criterion_7() -> Outcome {
    let results: Vec<(f64, usize)> = (0..100u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(7000 + k);
            let n = rng.random_range(2..=5usize);
            let p = rng.random_range(1..=3usize);
            let m = rng.random_range(2..=6usize);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let design = Design::new(rows).unwrap();
            let responses: Vec<Univariate> = (0..n)
                .map(|_| Univariate::empirical((0..m).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap())
                .collect();
            let tau = 1.0 / design.smoothness();
            let mut cloud = ParticleCloud::standard_normal(60, p, k).unwrap();
            let mut g = objective(&cloud, &design, &responses).unwrap();
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..30 {
                cloud = gradient_step(&cloud, &design, &responses, tau, QuantileInterp::Step).unwrap();
                let next = objective(&cloud, &design, &responses).unwrap();
                worst = worst.max(next - g);
                g = next;
            }
            (worst, 30)
        })
        .collect();
    let worst = results.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let steps: usize = results.iter().map(|r| r.1).sum();
    outcome(worst <= 1e-12, format!("100 instances, {steps} steps, largest objective change {worst:.2e}"))
}

fn criterion_8() -> Outcome {
    let draws = 100_000;
    let mut pass = true;
    let mut parts = Vec::new();
    let families: Vec<&str> = PRESETS_1D.iter().chain(PRESETS_2D.iter()).copied().collect();
    for (k, family) in families.iter().enumerate() {
        let spec = preset(family).unwrap();
        let grid = if spec.dim() == 1 { grid_1d(-6.0, 6.0, 25) } else { grid_2d(-3.0, 3.0, 5) };
        let c2 = check_c2_montecarlo(&spec, &grid, draws, 800 + k as u64).unwrap();
        let c3 = check_c3(&spec, &grid, draws, 900 + k as u64).unwrap();
        let ok = c2.max_z <= 3.0 && c3.min_slope >= spec.alpha - 1e-6 && c3.max_slope <= spec.beta + 1e-6;
        pass &= ok;
        parts.push(format!(
            "{family}: z {:.2} slopes [{:.3}, {:.3}] in [{}, {}]",
            c2.max_z, c3.min_slope, c3.max_slope, spec.alpha, spec.beta
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_9() -> Outcome {
    // coefficients (B₀, B₁) of the univariate template are independent
    let template = TemplateSpec::univariate();
    let ds = generate_dataset(&template, &preset("additive").unwrap(), 50, 500, 0).unwrap();
    let responses: Vec<Univariate> = ds.responses.iter().cloned().map(Univariate::Empirical).collect();
    let (wls, _) = fit(&ds.design, &responses, &SolverConfig { seed: 0, batch: None, ..SolverConfig::default() }).unwrap();
    let frechet = frechet_coeff_cloud(&frechet_fit_1d_default(&ds.design, &responses).unwrap()).unwrap();

    let first = Constraint::window(vec![1.0, -1.0], -1.3, -0.7);
    let windows = [("low", -1.5, 0.0), ("mid", 0.5, 1.5), ("high", 2.0, 3.5)];
    let mut wls_counts = Vec::new();
    let mut fr_counts = Vec::new();
    for (_, lo, hi) in windows {
        let spec = ConditionSpec::new(vec![first.clone(), Constraint::window(vec![1.0, 1.0], lo, hi)]).unwrap();
        wls_counts.push(select(&wls, &spec).unwrap().len());
        fr_counts.push(select(&frechet, &spec).unwrap().len());
    }
    let pass = wls_counts.iter().all(|&c| c > 0) && fr_counts.iter().any(|&c| c == 0);
    let show = |c: &[usize]| windows.iter().zip(c).map(|(w, c)| format!("{}={c}", w.0)).collect::<Vec<_>>().join(" ");
    outcome(pass, format!("wls retained {} of {}; frechet retained {} of {}", show(&wls_counts), wls.len(), show(&fr_counts), frechet.len()))
}

fn main() {
    // `cargo test -- <filter>` passes arguments; only the acceptance suite lives here
    let listing = std::env::args().any(|a| a == "--list");
    if listing {
        println!("acceptance: test");
        return;
    }
    let start = Instant::now();
    let table5 = table5_runs();
    let (table6, table6_secs) = table6_runs();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("1 particle fit vs truth and baseline (5 families)", Box::new(|| criterion_1(&table5))),
        ("2 bivariate Gaussian fit vs truth and baseline", Box::new(|| criterion_2(&table6, table6_secs))),
        ("3 rate slope on exact Gaussian responses", Box::new(criterion_3)),
        ("4 particle solver vs exact enumeration", Box::new(criterion_4)),
        ("5 normal-equation residuals at convergence", Box::new(|| criterion_5(&table5, &table6))),
        ("6 barycenter reductions", Box::new(criterion_6)),
        ("7 descent with step 1/eta", Box::new(criterion_7)),
        ("8 noise model conditions", Box::new(criterion_8)),
        ("9 double conditioning contrast", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {name}: {} ({:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of 9 criteria passed in {:.0}s", 9 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}

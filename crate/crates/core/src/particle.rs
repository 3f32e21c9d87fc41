//! Mean-field particle gradient descent for one-dimensional responses.
//!
//! The coefficient law is the uniform measure on `M` particles `β_j ∈ ℝᵖ`.
//! Its marginal at `x` is the empirical measure of `{xᵀβ_j}`; each step moves
//! every particle toward the optimal transport targets of its predictions.

use std::time::Instant;

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{dot, Design};
use crate::error::{check_dim, Error, Result};
use crate::report::{FitReport, TracePoint};
use crate::rng::{rng_from_seed, RNG_NAME};
use crate::transport::{w2_squared_1d, EmpiricalDist, QuantileInterp, Univariate};

/// A uniform empirical measure over `M` coefficient vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ParticleCloud {
    p: usize,
    data: Vec<f64>,
}

impl ParticleCloud {
    pub fn new(particles: Vec<Vec<f64>>) -> Result<Self> {
        if particles.len() < 2 {
            return Err(Error::input("a particle cloud needs at least two particles"));
        }
        let p = particles[0].len();
        if p == 0 {
            return Err(Error::input("particles must have at least one coordinate"));
        }
        let mut data = Vec::with_capacity(p * particles.len());
        for b in &particles {
            check_dim(p, b.len())?;
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::input("particle has non-finite coordinates"));
            }
            data.extend_from_slice(b);
        }
        Ok(ParticleCloud { p, data })
    }

    /// `M` particles with i.i.d. standard normal coordinates.
    pub fn standard_normal(m: usize, p: usize, seed: u64) -> Result<Self> {
        if m < 2 || p == 0 {
            return Err(Error::input("need at least two particles and one coordinate"));
        }
        let mut rng = rng_from_seed(seed);
        let data = (0..m * p).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(ParticleCloud { p, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn particle(&self, j: usize) -> &[f64] {
        &self.data[j * self.p..(j + 1) * self.p]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.p)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.particles().map(<[f64]>::to_vec).collect()
    }

    /// Predictions `xᵀβ_j` in particle order.
    pub fn predictions(&self, x: &[f64]) -> Vec<f64> {
        self.particles().map(|b| dot(x, b)).collect()
    }

    /// The marginal at `x`: the empirical measure of the predictions.
    pub fn pushforward(&self, x: &[f64]) -> Result<EmpiricalDist> {
        check_dim(self.p, x.len())?;
        EmpiricalDist::univariate(self.predictions(x))
    }

    /// The cloud as an empirical measure on `ℝᵖ`.
    pub fn to_empirical(&self) -> Result<EmpiricalDist> {
        EmpiricalDist::new(self.p, self.to_rows())
    }
}

impl TryFrom<Vec<Vec<f64>>> for ParticleCloud {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        ParticleCloud::new(rows)
    }
}

impl From<ParticleCloud> for Vec<Vec<f64>> {
    fn from(c: ParticleCloud) -> Self {
        c.to_rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Number of particles `M`.
    pub particles: usize,
    /// Iteration budget `T`.
    pub iterations: usize,
    /// Base learning rate `τ₀`; the schedule is `τ_k = τ₀ / (1 + decay·k)`.
    pub step: f64,
    pub decay: f64,
    /// Heavy-ball coefficient `ρ`; `0` disables momentum.
    pub momentum: f64,
    /// Rows per iteration, sampled without replacement; `None` uses all rows.
    pub batch: Option<usize>,
    pub seed: u64,
    /// Optional early stop once the normal-equation residual reaches this value.
    pub tol: Option<f64>,
    /// The full-data objective is recorded every `log_every` iterations.
    pub log_every: usize,
    pub interp: QuantileInterp,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            particles: 2000,
            iterations: 3000,
            step: 0.1,
            decay: 1e-3,
            momentum: 0.9,
            batch: Some(5),
            seed: 0,
            tol: None,
            log_every: 100,
            interp: QuantileInterp::Linear,
        }
    }
}

impl SolverConfig {
    /// Full-batch plain gradient descent with a constant step.
    pub fn plain(step: f64, iterations: usize) -> Self {
        SolverConfig {
            step,
            iterations,
            decay: 0.0,
            momentum: 0.0,
            batch: None,
            ..Default::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::input("need at least two particles"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::input(format!("step must be positive, got {}", self.step)));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::input("decay must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if let Some(b) = self.batch {
            if b == 0 || b > n {
                return Err(Error::input(format!("batch size must lie in [1, {n}], got {b}")));
            }
        }
        if self.log_every == 0 {
            return Err(Error::input("log_every must be positive"));
        }
        Ok(())
    }

    pub fn step_at(&self, k: usize) -> f64 {
        self.step / (1.0 + self.decay * k as f64)
    }
}

fn check_problem(cloud: &ParticleCloud, design: &Design, responses: &[Univariate]) -> Result<()> {
    check_dim(design.n(), responses.len())?;
    check_dim(cloud.p(), design.p())
}

/// `G(Q) = (1/n) Σᵢ W₂²(Q_{xᵢ}, νᵢ)` with exact one-dimensional distances.
pub fn objective(cloud: &ParticleCloud, design: &Design, responses: &[Univariate]) -> Result<f64> {
    check_problem(cloud, design, responses)?;
    let total: f64 = design
        .rows()
        .par_iter()
        .zip(responses)
        .map(|(x, nu)| w2_squared_1d(&Univariate::Empirical(cloud.pushforward(x)?), nu))
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(total / design.n() as f64)
}

/// Transport targets `f⁻¹((r + 1/2)/M)` for ranks `r = 0..M`, one table per response.
struct Targets {
    tables: Vec<Vec<f64>>,
}

impl Targets {
    fn new(responses: &[Univariate], m: usize, interp: QuantileInterp) -> Self {
        let tables = responses
            .par_iter()
            .map(|nu| {
                (0..m)
                    .map(|r| nu.quantile((r as f64 + 0.5) / m as f64, interp))
                    .collect()
            })
            .collect();
        Targets { tables }
    }
}

/// Sorted particle orders per row, reused across iterations: predictions
/// move little between steps, so re-sorting the previous order is nearly linear.
struct Orders(Vec<Vec<u32>>);

impl Orders {
    fn new(n: usize, m: usize) -> Self {
        Orders(vec![(0..m as u32).collect(); n])
    }
}

/// Per-particle displacement `(T_{i,j} − z_{i,j}) xᵢ` summed over the rows flagged in `active`.
fn displacement_sum(
    cloud: &ParticleCloud,
    design: &Design,
    targets: &Targets,
    active: &[bool],
    orders: &mut Orders,
) -> Vec<f64> {
    let m = cloud.len();
    let p = cloud.p();
    orders
        .0
        .par_iter_mut()
        .enumerate()
        .filter(|(i, _)| active[*i])
        .fold(
            || vec![0.0; m * p],
            |mut acc, (i, order)| {
                let x = design.row(i);
                let z = cloud.predictions(x);
                // ties broken by particle index, so the order is a function of z alone
                order.sort_by(|&a, &b| z[a as usize].total_cmp(&z[b as usize]).then(a.cmp(&b)));
                let table = &targets.tables[i];
                for (rank, &j) in order.iter().enumerate() {
                    let j = j as usize;
                    let r = table[rank] - z[j];
                    for (a, xv) in acc[j * p..(j + 1) * p].iter_mut().zip(x) {
                        *a += r * xv;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0.0; m * p],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(u, v)| *u += v);
                a
            },
        )
}

/// One full-batch step `β_j ← β_j + (τ/n) Σᵢ (T_{i,j} − xᵢᵀβ_j) xᵢ`, all particles moved simultaneously.
pub fn gradient_step(
    cloud: &ParticleCloud,
    design: &Design,
    responses: &[Univariate],
    tau: f64,
    interp: QuantileInterp,
) -> Result<ParticleCloud> {
    check_problem(cloud, design, responses)?;
    if !(tau > 0.0) {
        return Err(Error::input("step size must be positive"));
    }
    let targets = Targets::new(responses, cloud.len(), interp);
    let mut orders = Orders::new(design.n(), cloud.len());
    let disp = displacement_sum(cloud, design, &targets, &vec![true; design.n()], &mut orders);
    let scale = tau / design.n() as f64;
    let data = cloud.data.iter().zip(&disp).map(|(b, d)| b + scale * d).collect();
    Ok(ParticleCloud { p: cloud.p, data })
}

fn residual_from_targets(cloud: &ParticleCloud, design: &Design, targets: &Targets, orders: &mut Orders) -> f64 {
    let disp = displacement_sum(cloud, design, targets, &vec![true; design.n()], orders);
    let n = design.n() as f64;
    disp.chunks_exact(cloud.p())
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt() / n)
        .sum::<f64>()
        / cloud.len() as f64
}

/// Mean over particles of `‖(1/n) Σᵢ xᵢ (T_{i,j} − xᵢᵀβ_j)‖`.
pub fn normal_equation_residual(
    cloud: &ParticleCloud,
    design: &Design,
    responses: &[Univariate],
    interp: QuantileInterp,
) -> Result<f64> {
    check_problem(cloud, design, responses)?;
    let targets = Targets::new(responses, cloud.len(), interp);
    let mut orders = Orders::new(design.n(), cloud.len());
    Ok(residual_from_targets(cloud, design, &targets, &mut orders))
}

/// Runs the particle scheme from a standard normal initial cloud drawn from `config.seed`.
pub fn fit(design: &Design, responses: &[Univariate], config: &SolverConfig) -> Result<(ParticleCloud, FitReport)> {
    let init = ParticleCloud::standard_normal(config.particles, design.p(), config.seed)?;
    fit_from(init, design, responses, config)
}

/// Runs the particle scheme from a given cloud.
pub fn fit_from(
    init: ParticleCloud,
    design: &Design,
    responses: &[Univariate],
    config: &SolverConfig,
) -> Result<(ParticleCloud, FitReport)> {
    let start = Instant::now();
    let n = design.n();
    config.validate(n)?;
    check_problem(&init, design, responses)?;
    for nu in responses {
        if let Univariate::Empirical(e) = nu {
            check_dim(1, e.dim())?;
        }
    }
    let targets = Targets::new(responses, init.len(), config.interp);
    // batch sampling uses its own stream so the initial cloud does not depend on it
    let mut rng = rng_from_seed(crate::rng::derive_seed(config.seed, 1));
    let batch = config.batch.unwrap_or(n).min(n);
    let mut orders = Orders::new(n, init.len());
    let mut active = vec![true; n];

    let mut cloud = init;
    let mut velocity = vec![0.0; cloud.data.len()];
    let initial_objective = objective(&cloud, design, responses)?;
    let mut trace = vec![TracePoint { iteration: 0, objective: initial_objective }];
    let mut iterations = 0;

    while iterations < config.iterations {
        if batch < n {
            active.iter_mut().for_each(|a| *a = false);
            for i in sample(&mut rng, n, batch) {
                active[i] = true;
            }
        }
        let disp = displacement_sum(&cloud, design, &targets, &active, &mut orders);
        let scale = config.step_at(iterations) / batch as f64;
        for ((b, v), d) in cloud.data.iter_mut().zip(velocity.iter_mut()).zip(&disp) {
            *v = config.momentum * *v + scale * d;
            *b += *v;
        }
        iterations += 1;

        let log_now = iterations % config.log_every == 0 || iterations == config.iterations;
        if log_now {
            let g = objective(&cloud, design, responses)?;
            if !g.is_finite() || cloud.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    iteration: iterations,
                    reason: "non-finite objective".into(),
                });
            }
            trace.push(TracePoint { iteration: iterations, objective: g });
            if let Some(tol) = config.tol {
                if residual_from_targets(&cloud, design, &targets, &mut orders) <= tol {
                    break;
                }
            }
        }
    }

    let final_objective = trace.last().map(|t| t.objective).unwrap_or(initial_objective);
    if final_objective > initial_objective {
        return Err(Error::Divergence {
            iteration: iterations,
            reason: format!(
                "final objective {final_objective} exceeds initial objective {initial_objective}"
            ),
        });
    }
    let report = FitReport {
        objective_trace: trace,
        initial_objective,
        final_objective,
        final_gradient_norm: residual_from_targets(&cloud, design, &targets, &mut orders),
        iterations,
        wall_time_secs: start.elapsed().as_secs_f64(),
        regularized_steps: 0,
        config: serde_json::json!({
            "solver": "particle",
            "rng": RNG_NAME,
            "settings": config,
        }),
    };
    Ok((cloud, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cloud(v: &[f64]) -> ParticleCloud {
        ParticleCloud::new(v.iter().map(|&b| vec![b]).collect()).unwrap()
    }

    fn emp(v: &[f64]) -> Univariate {
        Univariate::empirical(v.to_vec()).unwrap()
    }

    #[test]
    fn objective_examples() {
        let one = Design::new(vec![vec![1.0]]).unwrap();
        assert_eq!(objective(&cloud(&[0.0, 1.0]), &one, &[emp(&[1.0, 0.0])]).unwrap(), 0.0);
        assert_relative_eq!(objective(&cloud(&[0.0, 0.0]), &one, &[emp(&[3.0])]).unwrap(), 9.0);
        assert_relative_eq!(objective(&cloud(&[0.0, 1.0]), &one, &[emp(&[1.0, 2.0])]).unwrap(), 1.0);
        let two = Design::new(vec![vec![1.0], vec![1.0]]).unwrap();
        assert!(objective(&cloud(&[0.0, 1.0]), &two, &[emp(&[1.0])]).is_err());
    }

    #[test]
    fn step_examples() {
        let one = Design::new(vec![vec![1.0]]).unwrap();
        let c = cloud(&[0.0, 1.0]);
        let same = gradient_step(&c, &one, &[emp(&[0.0, 1.0])], 0.3, QuantileInterp::Step).unwrap();
        assert_eq!(same, c);
        let tau = 0.25;
        let moved = gradient_step(&c, &one, &[emp(&[5.0])], tau, QuantileInterp::Linear).unwrap();
        for (b, old) in moved.particles().zip([0.0, 1.0]) {
            assert_relative_eq!(b[0], old + tau * (5.0 - old), epsilon = 1e-15);
        }
    }

    #[test]
    fn contraction_to_point_mass() {
        let one = Design::new(vec![vec![1.0]]).unwrap();
        let cfg = SolverConfig { particles: 4, iterations: 10, log_every: 1, ..SolverConfig::plain(0.5, 10) };
        let init = cloud(&[-1.0, 0.0, 2.0, 3.0]);
        let (fitted, report) = fit_from(init.clone(), &one, &[emp(&[1.0])], &cfg).unwrap();
        for (b, b0) in fitted.particles().zip(init.particles()) {
            // each particle's gap shrinks by the factor (1 − τ) per step
            assert_relative_eq!(b[0] - 1.0, (b0[0] - 1.0) * 0.5f64.powi(10), epsilon = 1e-12);
        }
        assert_eq!(report.iterations, 10);
        assert_eq!(report.objective_trace.len(), 11);
        let resid = normal_equation_residual(&fitted, &one, &[emp(&[1.0])], QuantileInterp::Linear).unwrap();
        assert_relative_eq!(resid, 1.5 * 0.5f64.powi(10), epsilon = 1e-12);
    }

    #[test]
    fn zero_iterations_keep_initial_cloud() {
        let d = Design::new(vec![vec![1.0, 0.5], vec![1.0, -0.5]]).unwrap();
        let r = [emp(&[0.0, 1.0]), emp(&[2.0, 3.0])];
        let cfg = SolverConfig { particles: 10, iterations: 0, seed: 4, ..Default::default() };
        let (c, rep) = fit(&d, &r, &SolverConfig { batch: Some(2), ..cfg.clone() }).unwrap();
        assert_eq!(c, ParticleCloud::standard_normal(10, 2, 4).unwrap());
        assert_eq!(rep.final_objective, rep.initial_objective);
    }

    #[test]
    fn residual_zero_when_matched() {
        let one = Design::new(vec![vec![1.0]]).unwrap();
        let c = cloud(&[0.3, 0.3, 0.3]);
        assert_eq!(normal_equation_residual(&c, &one, &[emp(&[0.3])], QuantileInterp::Linear).unwrap(), 0.0);
        let m = cloud(&[1.0, 2.0]);
        assert_eq!(normal_equation_residual(&m, &one, &[emp(&[2.0, 1.0])], QuantileInterp::Step).unwrap(), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig { momentum: 1.0, ..Default::default() }.validate(10).is_err());
        assert!(SolverConfig { batch: Some(11), ..Default::default() }.validate(10).is_err());
        assert!(SolverConfig { step: 0.0, ..Default::default() }.validate(10).is_err());
        assert!(SolverConfig::default().validate(10).is_ok());
        assert_relative_eq!(SolverConfig::default().step_at(1000), 0.05);
    }

    #[test]
    fn serde_round_trip() {
        let c = ParticleCloud::standard_normal(5, 3, 1).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ParticleCloud>(&s).unwrap(), c);
        assert!(serde_json::from_str::<ParticleCloud>("[[1.0]]").is_err());
    }
}

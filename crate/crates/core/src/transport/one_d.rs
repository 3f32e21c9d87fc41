use super::{
    default_levels, std_normal_pdf, std_normal_quantile, EmpiricalDist, QuantileGrid,
    QuantileInterp, Univariate,
};
use crate::error::{check_dim, Error, Result};

/// Exact squared W₂ between two uniform empirical measures given as sorted atoms.
///
/// Integrates the squared difference of the two step quantile functions over
/// the merged breakpoints `i/m` and `j/n`.
pub fn w2_squared_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (m, n) = (a.len(), b.len());
    if m == n {
        return a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / m as f64;
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0.0;
    let mut acc = 0.0;
    while i < m && j < n {
        // compare (i+1)/m with (j+1)/n exactly
        let lhs = (i as u128 + 1) * n as u128;
        let rhs = (j as u128 + 1) * m as u128;
        let next = if lhs <= rhs {
            (i + 1) as f64 / m as f64
        } else {
            (j + 1) as f64 / n as f64
        };
        acc += (next - prev) * (a[i] - b[j]).powi(2);
        prev = next;
        if lhs <= rhs {
            i += 1;
        }
        if rhs <= lhs {
            j += 1;
        }
    }
    acc
}

/// Exact squared W₂ between a sorted empirical measure and N(mean, sd²).
fn w2_squared_empirical_gaussian(atoms: &[f64], mean: f64, sd: f64) -> f64 {
    let m = atoms.len();
    let mut acc = 0.0;
    let z_at = |k: usize| -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else if k == m {
            f64::INFINITY
        } else {
            std_normal_quantile(k as f64 / m as f64)
        }
    };
    let pdf = |z: f64| if z.is_finite() { std_normal_pdf(z) } else { 0.0 };
    let zpdf = |z: f64| if z.is_finite() { z * std_normal_pdf(z) } else { 0.0 };
    let mut za = z_at(0);
    for (k, &y) in atoms.iter().enumerate() {
        let zb = z_at(k + 1);
        let width = 1.0 / m as f64;
        let c = y - mean;
        // ∫ (c - sd·z(u))² du over the k-th level cell
        let int_z = pdf(za) - pdf(zb);
        let int_z2 = width - (zpdf(zb) - zpdf(za));
        acc += c * c * width - 2.0 * c * sd * int_z + sd * sd * int_z2;
        za = zb;
    }
    acc.max(0.0)
}

fn trapezoid_on_levels(levels: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    levels
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * (f(w[0]) + f(w[1])))
        .sum()
}

/// Squared 2-Wasserstein distance between univariate measures.
///
/// Empirical/empirical and empirical/Gaussian pairs are computed exactly,
/// Gaussian pairs in closed form. Any pair involving a quantile grid is
/// integrated with the trapezoid rule: on the shared levels when both grids
/// agree on at least 500 levels, otherwise on the default 500-level grid.
pub fn w2_squared_1d(a: &Univariate, b: &Univariate) -> Result<f64> {
    use Univariate::*;
    Ok(match (a, b) {
        (Empirical(x), Empirical(y)) => {
            check_dim(1, x.dim())?;
            check_dim(1, y.dim())?;
            w2_squared_sorted(x.values(), y.values())
        }
        (Gaussian(x), Gaussian(y)) => {
            check_dim(1, x.dim())?;
            check_dim(1, y.dim())?;
            (x.mean[0] - y.mean[0]).powi(2) + (x.sd() - y.sd()).powi(2)
        }
        (Empirical(e), Gaussian(g)) | (Gaussian(g), Empirical(e)) => {
            check_dim(1, e.dim())?;
            check_dim(1, g.dim())?;
            w2_squared_empirical_gaussian(e.values(), g.mean[0], g.sd())
        }
        (Quantiles(x), Quantiles(y))
            if x.levels() == y.levels() && x.len() >= super::DEFAULT_GRID_LEVELS =>
        {
            x.values()
                .iter()
                .zip(y.values())
                .map(|(p, q)| (p - q).powi(2))
                .collect::<Vec<_>>()
                .windows(2)
                .zip(x.levels().windows(2))
                .map(|(v, l)| 0.5 * (l[1] - l[0]) * (v[0] + v[1]))
                .sum()
        }
        _ => {
            let levels = default_levels();
            trapezoid_on_levels(&levels, |u| {
                (a.quantile(u, QuantileInterp::Linear) - b.quantile(u, QuantileInterp::Linear)).powi(2)
            })
        }
    })
}

/// Piecewise-linear monotone map through `(source, target)` knots.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneMap {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl MonotoneMap {
    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    /// Exact at knots, linear between knots, constant beyond the outermost ones.
    pub fn eval(&self, z: f64) -> f64 {
        let n = self.xs.len();
        if z <= self.xs[0] {
            return self.ys[0];
        }
        if z >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let hi = self.xs.partition_point(|&x| x < z);
        if self.xs[hi] == z {
            return self.ys[hi];
        }
        let lo = hi - 1;
        let frac = (z - self.xs[lo]) / (self.xs[hi] - self.xs[lo]);
        self.ys[lo] + frac * (self.ys[hi] - self.ys[lo])
    }
}

/// Brenier map `z ↦ f⁻¹(g(z))` from an empirical source to a target quantile function.
///
/// The source CDF uses midpoint ranks, `g(z_(k)) = (k - 0.5)/m`. Tied source
/// atoms share the average of their targets.
pub fn brenier_1d(
    source: &EmpiricalDist,
    target: &Univariate,
    interp: QuantileInterp,
) -> Result<MonotoneMap> {
    check_dim(1, source.dim())?;
    let atoms = source.values();
    let m = atoms.len();
    let mut xs: Vec<f64> = Vec::with_capacity(m);
    let mut ys: Vec<f64> = Vec::with_capacity(m);
    let mut k = 0;
    while k < m {
        let mut end = k + 1;
        while end < m && atoms[end] == atoms[k] {
            end += 1;
        }
        let sum: f64 = (k..end)
            .map(|r| target.quantile((r as f64 + 0.5) / m as f64, interp))
            .sum();
        xs.push(atoms[k]);
        ys.push(sum / (end - k) as f64);
        k = end;
    }
    Ok(MonotoneMap { xs, ys })
}

pub(crate) fn validate_weights(weights: &[f64], count: usize) -> Result<()> {
    check_dim(count, weights.len())?;
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::input("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("weights must sum to 1, got {total}")));
    }
    Ok(())
}

/// W₂ barycenter of univariate measures: the weighted average of their quantile functions.
pub fn barycenter_1d(quantiles: &[QuantileGrid], weights: &[f64]) -> Result<QuantileGrid> {
    let first = quantiles
        .first()
        .ok_or_else(|| Error::input("barycenter of an empty collection"))?;
    validate_weights(weights, quantiles.len())?;
    if quantiles.iter().any(|q| q.levels() != first.levels()) {
        return Err(Error::input("barycenter inputs must share a level grid; resample first"));
    }
    let mut values = vec![0.0; first.len()];
    for (q, &w) in quantiles.iter().zip(weights) {
        for (acc, v) in values.iter_mut().zip(q.values()) {
            *acc += w * v;
        }
    }
    // averaging non-decreasing sequences stays non-decreasing up to rounding
    for k in 1..values.len() {
        if values[k] < values[k - 1] {
            values[k] = values[k - 1];
        }
    }
    QuantileGrid::new(first.levels().to_vec(), values)
}

/// Barycenter of equal-size univariate empirical measures: weighted average of sorted atoms.
pub fn barycenter_empirical(dists: &[EmpiricalDist], weights: &[f64]) -> Result<EmpiricalDist> {
    let first = dists
        .first()
        .ok_or_else(|| Error::input("barycenter of an empty collection"))?;
    validate_weights(weights, dists.len())?;
    let m = first.len();
    for d in dists {
        check_dim(1, d.dim())?;
        check_dim(m, d.len())?;
    }
    let mut atoms = vec![0.0; m];
    for (d, &w) in dists.iter().zip(weights) {
        for (acc, v) in atoms.iter_mut().zip(d.values()) {
            *acc += w * v;
        }
    }
    EmpiricalDist::univariate(atoms)
}

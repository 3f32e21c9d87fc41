//! Exact solutions of tiny discrete problems by enumerating couplings.
//!
//! With `n` uniform responses of `m` atoms each, the least-squares problem is
//! a multimarginal transport problem with cost `E(y₁,…,yₙ)`, the OLS residual
//! of the tuple. Its optimum is attained at a coupling that matches atoms
//! through permutations, so enumerating `(m!)^{n−1}` permutation tuples is exact.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{pinv, spd_sqrt, Matrix, SpdMatrix};

pub const MAX_ROWS: usize = 4;
pub const MAX_ATOMS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteProblem {
    pub design: Design,
    /// `responses[i][k]` is atom `k` of response `i`, a point in `ℝᵈ`.
    pub responses: Vec<Vec<Vec<f64>>>,
}

impl DiscreteProblem {
    pub fn new(design: Design, responses: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = design.n();
        check_dim(n, responses.len())?;
        if n > MAX_ROWS {
            return Err(Error::LimitExceeded(format!("n = {n} exceeds the enumeration bound n <= {MAX_ROWS}")));
        }
        let m = responses[0].len();
        if m == 0 {
            return Err(Error::input("responses need at least one atom"));
        }
        if m > MAX_ATOMS {
            return Err(Error::LimitExceeded(format!("m = {m} exceeds the enumeration bound m <= {MAX_ATOMS}")));
        }
        let d = responses[0][0].len();
        if d == 0 {
            return Err(Error::input("atoms need at least one coordinate"));
        }
        for r in &responses {
            if r.len() != m {
                return Err(Error::input("all responses must have the same number of atoms"));
            }
            for a in r {
                check_dim(d, a.len())?;
                if a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::input("atoms must be finite"));
                }
            }
        }
        Ok(DiscreteProblem { design, responses })
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn m(&self) -> usize {
        self.responses[0].len()
    }

    pub fn d(&self) -> usize {
        self.responses[0][0].len()
    }
}

/// OLS residual `E = (1/n) Σ ‖yᵢ − B*ᵀxᵢ‖²` and the minimal-norm `B* = X⁺Y` (`p × d`).
pub fn inner_ols_cost(y: &[Vec<f64>], design: &Design) -> Result<(f64, Matrix)> {
    check_dim(design.n(), y.len())?;
    let ymat = crate::linalg::matrix_from_rows(y)?;
    let b = pinv(design.matrix())? * &ymat;
    let resid = ymat - design.matrix() * &b;
    Ok((resid.norm_squared() / design.n() as f64, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimarginalSolution {
    pub value: f64,
    /// The same optimum computed as `∫(1/n)‖Y‖² − max ∫(1/n)‖((XᵀX)⁺)^{1/2} XᵀY‖²`.
    pub value_explained_variance: f64,
    /// `matching[i][k]`: atom of response `i` coupled with atom `k` of response 0.
    pub matching: Vec<Vec<usize>>,
    /// Coefficient law: one `vec(B*ᵀ)` per matched tuple, each with mass `1/m`.
    pub coeff_law: Vec<Vec<f64>>,
}

fn tuple_index(atoms: &[usize], m: usize) -> usize {
    atoms.iter().fold(0, |acc, &a| acc * m + a)
}

/// Value of every permutation tuple under a per-atom-tuple cost table, keeping
/// the first optimum found in lexicographic order.
fn enumerate_best(m: usize, n: usize, table: &[f64], maximize: bool) -> (f64, Vec<Vec<usize>>) {
    let perms: Vec<Vec<usize>> = (0..m).permutations(m).collect();
    let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
    let mut atoms = vec![0; n];
    let tuples: Box<dyn Iterator<Item = Vec<&Vec<usize>>>> = if n == 1 {
        Box::new(std::iter::once(Vec::new()))
    } else {
        Box::new((1..n).map(|_| perms.iter()).multi_cartesian_product())
    };
    for choice in tuples {
        let mut total = 0.0;
        for k in 0..m {
            atoms[0] = k;
            for (i, perm) in choice.iter().enumerate() {
                atoms[i + 1] = perm[k];
            }
            total += table[tuple_index(&atoms, m)];
        }
        total /= m as f64;
        let better = match &best {
            None => true,
            Some((v, _)) => {
                let slack = 1e-12 * v.abs().max(1.0);
                if maximize {
                    total > v + slack
                } else {
                    total < v - slack
                }
            }
        };
        if better {
            let mut matching = vec![(0..m).collect::<Vec<_>>()];
            matching.extend(choice.iter().map(|p| (*p).clone()));
            best = Some((total, matching));
        }
    }
    best.expect("at least one coupling")
}

pub fn solve_multimarginal(prob: &DiscreteProblem) -> Result<MultimarginalSolution> {
    let (n, m, d) = (prob.n(), prob.m(), prob.d());
    let x = prob.design.matrix();
    let gram_pinv = pinv(&(x.transpose() * x))?;
    let root = spd_sqrt(&SpdMatrix::psd_projection(&gram_pinv)).into_matrix();
    let size = m.pow(n as u32);
    let mut residual = vec![0.0; size];
    let mut explained = vec![0.0; size];
    let mut atoms = vec![0; n];
    for idx in 0..size {
        let mut rem = idx;
        for i in (0..n).rev() {
            atoms[i] = rem % m;
            rem /= m;
        }
        let y: Vec<Vec<f64>> = (0..n).map(|i| prob.responses[i][atoms[i]].clone()).collect();
        residual[idx] = inner_ols_cost(&y, &prob.design)?.0;
        let ymat = crate::linalg::matrix_from_rows(&y)?;
        explained[idx] = (&root * x.transpose() * ymat).norm_squared() / n as f64;
    }
    let (value, matching) = enumerate_best(m, n, &residual, false);
    let (max_ev, _) = enumerate_best(m, n, &explained, true);
    // ∫(1/n)‖Y‖² dP is the same for every coupling
    let second_moment: f64 = prob
        .responses
        .iter()
        .map(|r| r.iter().map(|a| a.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / m as f64)
        .sum::<f64>()
        / n as f64;

    let mut coeff_law = Vec::with_capacity(m);
    for k in 0..m {
        let y: Vec<Vec<f64>> = (0..n).map(|i| prob.responses[i][matching[i][k]].clone()).collect();
        let (_, b) = inner_ols_cost(&y, &prob.design)?;
        // vec(Bᵀ) lists the rows of B
        coeff_law.push((0..b.nrows()).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| b[(r, c)]).collect());
    }
    Ok(MultimarginalSolution {
        value,
        value_explained_variance: second_moment - max_ev,
        matching,
        coeff_law,
    })
}

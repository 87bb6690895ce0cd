//! Debiased entropic optimal transport between uniformly weighted point
//! clouds, with squared-Euclidean cost.
//!
//! Each transport problem is solved in the log domain: the temperature is
//! annealed from the cloud diameter down to `blur²`, then updates run at
//! `blur²` until the dual potentials stop moving. The cross term uses
//! alternating sweeps backed by Newton steps, the two self terms symmetric
//! averaged sweeps.
//! Inputs are put in a canonical order first, so `S(A, B)` and `S(B, A)`
//! run identical arithmetic.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Final temperature is `blur²`.
    pub blur: f64,
    pub tolerance: f64,
    /// Per transport problem.
    pub max_iterations: usize,
    /// Ratio between consecutive annealing radii.
    pub scaling: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            blur: 0.05,
            tolerance: 1e-6,
            max_iterations: 500,
            scaling: 0.5,
        }
    }
}

struct Cost {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Cost {
    fn between(a: &[Vec<f64>], b: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(a.len() * b.len());
        for x in a {
            for y in b {
                data.push(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum());
            }
        }
        Self {
            rows: a.len(),
            cols: b.len(),
            data,
        }
    }

    fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// `f_i = -ε log Σ_j w_j exp((g_j - C_ij) / ε)` with `log_w` uniform.
    fn softmin(&self, eps: f64, log_w: f64, g: &[f64], out: &mut [f64]) {
        let mut buf = vec![0.0; self.cols];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut m = f64::NEG_INFINITY;
            for ((b, c), gj) in buf.iter_mut().zip(row).zip(g) {
                *b = (gj - c) / eps;
                m = m.max(*b);
            }
            let s: f64 = buf.iter().map(|b| (b - m).exp()).sum();
            *o = -eps * (log_w + m + s.ln());
        }
    }
}

/// Plain sweeps at the final temperature before switching to Newton steps.
const NEWTON_AFTER: usize = 20;

/// Regularised transport cost `⟨α, f⟩ + ⟨β, g⟩` at the dual optimum.
///
/// Plain alternating sweeps stall when the optimal plan is close to block
/// diagonal (well separated clusters). After [`NEWTON_AFTER`] sweeps the
/// solver takes damped Newton steps on the semi-dual in `g` instead, each
/// followed by one sweep that measures the fixed-point residual.
fn entropic_ot(a: &[Vec<f64>], b: &[Vec<f64>], cfg: &SinkhornConfig) -> Result<f64> {
    let c_ab = Cost::between(a, b);
    let c_ba = c_ab.transpose();
    let log_a = -(a.len() as f64).ln();
    let log_b = -(b.len() as f64).ln();

    let eps_final = cfg.blur * cfg.blur;
    let mut f = vec![0.0; a.len()];
    let mut g = vec![0.0; b.len()];
    let mut iterations = 0;
    let mut r2 = c_ab.max();
    while r2 > eps_final {
        c_ab.softmin(r2, log_b, &g, &mut f);
        c_ba.softmin(r2, log_a, &f, &mut g);
        iterations += 1;
        r2 *= cfg.scaling * cfg.scaling;
    }
    let mut residual = f64::INFINITY;
    let mut plain = 0;
    let (mut f_old, mut g_old) = (f.clone(), g.clone());
    while iterations < cfg.max_iterations {
        if plain >= NEWTON_AFTER {
            newton_step(&c_ab, eps_final, log_a, log_b, &mut g);
        }
        f_old.copy_from_slice(&f);
        g_old.copy_from_slice(&g);
        c_ab.softmin(eps_final, log_b, &g, &mut f);
        c_ba.softmin(eps_final, log_a, &f, &mut g);
        iterations += 1;
        plain += 1;
        residual = max_change(&f, &f_old).max(max_change(&g, &g_old));
        if !(residual >= cfg.tolerance) {
            break;
        }
    }
    if !(residual < cfg.tolerance) {
        return Err(Error::ConvergenceFailure { iterations, residual });
    }
    // one more sweep so that g is exactly conjugate to f
    c_ab.softmin(eps_final, log_b, &g, &mut f);
    c_ba.softmin(eps_final, log_a, &f, &mut g);
    Ok(f.iter().sum::<f64>() / a.len() as f64 + g.iter().sum::<f64>() / b.len() as f64)
}

/// Semi-dual `F(g) = ⟨β, g⟩ + ⟨α, f(g)⟩` with `f(g)` the exact row softmin.
/// Returns `F`, its gradient `β - Pᵀ1` and the plan `P`.
fn semi_dual(cost: &Cost, eps: f64, log_a: f64, log_b: f64, g: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut f = vec![0.0; cost.rows];
    cost.softmin(eps, log_b, g, &mut f);
    let mut plan = vec![0.0; cost.data.len()];
    let mut col = vec![0.0; cost.cols];
    for i in 0..cost.rows {
        for j in 0..cost.cols {
            let p = ((f[i] + g[j] - cost.data[i * cost.cols + j]) / eps + log_a + log_b).exp();
            plan[i * cost.cols + j] = p;
            col[j] += p;
        }
    }
    let b = log_b.exp();
    let value = b * g.iter().sum::<f64>() + log_a.exp() * f.iter().sum::<f64>();
    (value, col.iter().map(|c| b - c).collect(), plan)
}

/// One Newton step on the concave semi-dual with Armijo backtracking. The
/// Hessian is `-(diag(Pᵀ1) - PᵀA⁻¹P)/ε`; its constant null direction is
/// removed by adding `11ᵀ`, which the gradient is orthogonal to.
fn newton_step(cost: &Cost, eps: f64, log_a: f64, log_b: f64, g: &mut [f64]) {
    let m = cost.cols;
    let (value, grad, plan) = semi_dual(cost, eps, log_a, log_b, g);
    let p = DMatrix::from_row_slice(cost.rows, m, &plan);
    let col: Vec<f64> = grad.iter().map(|gr| log_b.exp() - gr).collect();
    let mut h = -(p.transpose() * &p) * (-log_a).exp();
    for j in 0..m {
        h[(j, j)] += col[j];
    }
    h /= eps;
    h.add_scalar_mut(1.0 / m as f64);
    let rhs = DVector::from_column_slice(&grad);
    let Some(dir) = h
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| h.lu().solve(&rhs))
    else {
        return;
    };
    let slope: f64 = dir.iter().zip(&grad).map(|(d, gr)| d * gr).sum();
    if !(slope > 0.0) {
        return;
    }
    let mut t = 1.0;
    let mut trial = g.to_vec();
    while t > 1e-6 {
        for ((x, g0), d) in trial.iter_mut().zip(g.iter()).zip(dir.iter()) {
            *x = g0 + t * d;
        }
        let (v, _, _) = semi_dual(cost, eps, log_a, log_b, &trial);
        if v >= value + 1e-4 * t * slope {
            g.copy_from_slice(&trial);
            return;
        }
        t *= 0.5;
    }
}

/// `OT_ε(A, A)`. The self problem has a symmetric optimum `f = g`, reached
/// quickly by averaging each update with the previous potential.
fn entropic_ot_self(a: &[Vec<f64>], cfg: &SinkhornConfig) -> Result<f64> {
    let cost = Cost::between(a, a);
    let log_a = -(a.len() as f64).ln();
    let eps_final = cfg.blur * cfg.blur;

    let mut f = vec![0.0; a.len()];
    let mut next = vec![0.0; a.len()];
    let mut iterations = 0;
    let average = |f: &mut Vec<f64>, next: &mut Vec<f64>, eps: f64, first: bool| {
        cost.softmin(eps, log_a, f, next);
        let change = max_change(next, f);
        for (o, n) in f.iter_mut().zip(next.iter()) {
            *o = if first { *n } else { 0.5 * (*o + n) };
        }
        change
    };
    let mut r2 = cost.max();
    while r2 > eps_final {
        average(&mut f, &mut next, r2, iterations == 0);
        iterations += 1;
        r2 *= cfg.scaling * cfg.scaling;
    }
    let mut residual = f64::INFINITY;
    while iterations < cfg.max_iterations {
        residual = average(&mut f, &mut next, eps_final, iterations == 0);
        iterations += 1;
        if !(residual >= cfg.tolerance) {
            break;
        }
    }
    if !(residual < cfg.tolerance) {
        return Err(Error::ConvergenceFailure { iterations, residual });
    }
    cost.softmin(eps_final, log_a, &f, &mut next);
    Ok(2.0 * next.iter().sum::<f64>() / a.len() as f64)
}

fn max_change(new: &[f64], old: &[f64]) -> f64 {
    new.iter().zip(old).map(|(n, o)| (n - o).abs()).fold(0.0, f64::max)
}

fn check_points(p: &[Vec<f64>], name: &str) -> Result<usize> {
    let first = p
        .first()
        .ok_or_else(|| Error::InvalidInput(format!("{name} point set is empty")))?;
    let d = first.len();
    if p.iter().any(|x| x.len() != d) {
        return Err(Error::InvalidInput(format!("{name} points have mixed dimensions")));
    }
    if p.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{name} points are not finite")));
    }
    Ok(d)
}

fn canonical_order(a: &[Vec<f64>], b: &[Vec<f64>]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

pub fn sinkhorn_divergence(a: &[Vec<f64>], b: &[Vec<f64>], blur: f64) -> Result<f64> {
    sinkhorn_divergence_with(
        a,
        b,
        &SinkhornConfig {
            blur,
            ..SinkhornConfig::default()
        },
    )
}

/// `OT_ε(A,B) - ½OT_ε(A,A) - ½OT_ε(B,B)` with `ε = blur²`.
pub fn sinkhorn_divergence_with(a: &[Vec<f64>], b: &[Vec<f64>], cfg: &SinkhornConfig) -> Result<f64> {
    let da = check_points(a, "first")?;
    let db = check_points(b, "second")?;
    if da != db {
        return Err(Error::Shape {
            context: "sinkhorn point dimension",
            expected: da,
            got: db,
        });
    }
    if !(cfg.blur > 0.0) || !(cfg.scaling > 0.0 && cfg.scaling < 1.0) {
        return Err(Error::InvalidArgument("need blur > 0 and scaling in (0, 1)".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let (a, b) = if canonical_order(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let ab = entropic_ot(a, b, cfg)?;
    let aa = entropic_ot_self(a, cfg)?;
    let bb = entropic_ot_self(b, cfg)?;
    Ok(ab - 0.5 * (aa + bb))
}

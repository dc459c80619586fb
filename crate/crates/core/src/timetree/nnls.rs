//! Least squares with non-negative coefficients and intercept.
//!
//! The solver is a Lawson–Hanson active-set method run on a column-scaled
//! design `[x | 1]`. Each passive-set subproblem is solved through an SVD, so
//! collinear explanatory variables (dense-layer FLOPs and parameter counts are
//! nearly proportional) do not break it. If the active-set loop hits its
//! iteration cap without meeting the KKT tolerance, the iterate is polished by
//! projected gradient descent.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized KKT tolerance: `|a_jᵀ r| / (‖a_j‖·‖y‖)`.
const KKT_TOL: f64 = 1e-10;

/// A non-negative linear law `y = wᵀx + b` plus its in-sample error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub w: Vec<f64>,
    pub b: f64,
    pub n: usize,
    pub mape: f64,
    pub mse: f64,
}

impl LinearFit {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }
}

/// Fits `y ≈ wᵀx + b` with `w, b >= 0`, minimizing mean squared error.
pub fn fit_rows<R: AsRef<[f64]>>(rows: &[R], y: &[f64]) -> Result<LinearFit> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rows.len() != y.len() {
        return Err(Error::invalid(format!("{} rows but {} targets", rows.len(), y.len())));
    }
    let k = rows[0].as_ref().len();
    if rows.iter().any(|r| r.as_ref().len() != k) {
        return Err(Error::invalid("ragged design rows"));
    }
    if rows.iter().flat_map(|r| r.as_ref()).chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in regression data".into()));
    }

    let n = rows.len();
    let mut scale = vec![1.0; k + 1];
    for (j, s) in scale.iter_mut().enumerate().take(k) {
        let max = rows.iter().map(|r| r.as_ref()[j].abs()).fold(0.0, f64::max);
        if max > 0.0 {
            *s = max;
        }
    }
    let a = DMatrix::from_fn(n, k + 1, |i, j| if j == k { 1.0 } else { rows[i].as_ref()[j] / scale[j] });
    let target = DVector::from_column_slice(y);

    let z = solve(&a, &target)?;
    let w: Vec<f64> = (0..k).map(|j| z[j] / scale[j]).collect();
    let b = z[k];

    let mut sq = 0.0;
    let mut pct = 0.0;
    for (row, &yi) in rows.iter().zip(y) {
        let pred = w.iter().zip(row.as_ref()).map(|(w, x)| w * x).sum::<f64>() + b;
        let err = pred - yi;
        sq += err * err;
        pct += if yi != 0.0 { (err / yi).abs() } else { err.abs() };
    }
    Ok(LinearFit { w, b, n, mape: pct / n as f64, mse: sq / n as f64 })
}

/// Solves `min ‖A z − y‖²` subject to `z >= 0`.
pub fn solve(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let p = a.ncols();
    let col_norms: Vec<f64> = (0..p).map(|j| a.column(j).norm()).collect();
    let y_norm = y.norm();
    let mut z = DVector::zeros(p);
    if y_norm == 0.0 {
        return Ok(z);
    }

    let normalized_grad = |z: &DVector<f64>| -> DVector<f64> {
        let g = a.transpose() * (y - a * z);
        DVector::from_fn(p, |j, _| if col_norms[j] > 0.0 { g[j] / (col_norms[j] * y_norm) } else { 0.0 })
    };

    let mut passive = vec![false; p];
    let mut blocked = vec![false; p];
    let mut converged = false;
    for _ in 0..(30 * p + 30) {
        let g = normalized_grad(&z);
        let candidate = (0..p)
            .filter(|&j| !passive[j] && !blocked[j] && g[j] > KKT_TOL)
            .max_by(|&i, &j| g[i].total_cmp(&g[j]));
        let Some(j) = candidate else {
            converged = true;
            break;
        };
        passive[j] = true;
        let before = z.clone();

        for _ in 0..(3 * p + 3) {
            let s = passive_solution(a, y, &passive)?;
            if (0..p).all(|i| !passive[i] || s[i] > 0.0) {
                z = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..p {
                if passive[i] && s[i] <= 0.0 {
                    let denom = z[i] - s[i];
                    let ratio = if denom > 0.0 { z[i] / denom } else { 0.0 };
                    alpha = alpha.min(ratio);
                }
            }
            let alpha = alpha.clamp(0.0, 1.0);
            z += (&s - &z) * alpha;
            for i in 0..p {
                if passive[i] && z[i] <= f64::EPSILON * z.amax().max(1.0) {
                    passive[i] = false;
                    z[i] = 0.0;
                }
            }
        }

        if z == before {
            // Numerically degenerate column: it entered and left without moving z.
            blocked[j] = true;
            passive[j] = false;
        } else {
            blocked.iter_mut().for_each(|b| *b = false);
        }
    }

    let kkt_ok = |z: &DVector<f64>| {
        let g = normalized_grad(z);
        (0..p).all(|j| if z[j] > 0.0 { g[j].abs() <= 1e-8 } else { g[j] <= 1e-8 })
    };
    if !converged || !kkt_ok(&z) {
        z = projected_gradient(a, y, z, 200_000);
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("NNLS produced non-finite coefficients".into()));
    }
    Ok(z)
}

fn passive_solution(a: &DMatrix<f64>, y: &DVector<f64>, passive: &[bool]) -> Result<DVector<f64>> {
    let cols: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let mut out = DVector::zeros(passive.len());
    if cols.is_empty() {
        return Ok(out);
    }
    let sub = a.select_columns(&cols);
    let svd = sub.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * 1e-13;
    let mut sol = svd.solve(y, tol).map_err(|e| Error::Numeric(format!("least-squares subproblem: {e}")))?;
    // Refine through the normal equations `V Σ⁻² Vᵀ Aᵀ r`, which avoids the
    // cancellation in `Uᵀ r`; keep a step only if the residual does not grow.
    let v_t = svd.v_t.as_ref().expect("V requested");
    let mut residual = y - &sub * &sol;
    for _ in 0..3 {
        let mut t = v_t * (sub.transpose() * &residual);
        for (ti, &sv) in t.iter_mut().zip(svd.singular_values.iter()) {
            *ti = if sv > tol { *ti / (sv * sv) } else { 0.0 };
        }
        let next = &sol + v_t.transpose() * t;
        let next_residual = y - &sub * &next;
        if next == sol || next_residual.norm_squared() > residual.norm_squared() {
            break;
        }
        sol = next;
        residual = next_residual;
    }
    for (idx, &j) in cols.iter().enumerate() {
        out[j] = sol[idx];
    }
    Ok(out)
}

/// Accelerated projected gradient on `½‖A z − y‖²`, warm-started at `z`.
fn projected_gradient(a: &DMatrix<f64>, y: &DVector<f64>, z0: DVector<f64>, iters: usize) -> DVector<f64> {
    let ata = a.transpose() * a;
    let aty = a.transpose() * y;
    let lipschitz = ata.symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);
    let step = 1.0 / lipschitz;
    let loss = |z: &DVector<f64>| (a * z - y).norm_squared();

    let mut z = z0.map(|v| v.max(0.0));
    let mut best = z.clone();
    let mut best_loss = loss(&z);
    let mut momentum = z.clone();
    let mut t = 1.0_f64;
    for _ in 0..iters {
        let grad = &ata * &momentum - &aty;
        let next = (&momentum - grad * step).map(|v| v.max(0.0));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        momentum = &next + (&next - &z) * ((t - 1.0) / t_next);
        let moved = (&next - &z).amax();
        z = next;
        t = t_next;
        let l = loss(&z);
        if l < best_loss {
            best_loss = l;
            best = z.clone();
        } else {
            // restart momentum when the objective goes up
            momentum = z.clone();
            t = 1.0;
        }
        if moved <= 1e-16 * z.amax().max(1.0) {
            break;
        }
    }
    best
}

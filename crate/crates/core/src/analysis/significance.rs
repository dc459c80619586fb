use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::layer::LayerKind;
use crate::timetree::Dataset;

/// Columns whose R² against the other columns reaches this are treated as
/// linear combinations of them.
const COLLINEAR_R2: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSignificance {
    pub name: String,
    /// Unconstrained least-squares coefficient in the variable's own units.
    pub coefficient: f64,
    pub t_stat: f64,
    pub p_value: f64,
    /// Constant or collinear column; reported with p = 1 and excluded from the fit.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub kind: LayerKind,
    pub n: usize,
    pub df: usize,
    pub variables: Vec<VariableSignificance>,
}

impl SignificanceReport {
    pub fn get(&self, name: &str) -> Option<&VariableSignificance> {
        self.variables.iter().find(|v| v.name == name)
    }
}

struct Ols {
    beta: DVector<f64>,
    rss: f64,
    gram_inv: DMatrix<f64>,
}

fn ols(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<Ols> {
    let gram = z.transpose() * z;
    let gram_inv = gram.clone().try_inverse().ok_or_else(|| Error::Numeric("singular normal equations".into()))?;
    let svd = z.clone().svd(true, true);
    let beta = svd.solve(y, 1e-12).map_err(|e| Error::Numeric(e.into()))?;
    let rss = (y - z * &beta).norm_squared();
    Ok(Ols { beta, rss, gram_inv })
}

fn design(columns: &[DVector<f64>], keep: &[usize], n: usize) -> DMatrix<f64> {
    let mut z = DMatrix::from_element(n, keep.len() + 1, 1.0);
    for (c, &j) in keep.iter().enumerate() {
        z.set_column(c, &columns[j]);
    }
    z
}

fn r_squared_against(columns: &[DVector<f64>], target: usize, others: &[usize], n: usize) -> f64 {
    if others.is_empty() {
        return 0.0;
    }
    let z = design(columns, others, n);
    let y = &columns[target];
    let svd = z.clone().svd(true, true);
    let Ok(beta) = svd.solve(y, 1e-12) else { return 1.0 };
    let rss = (y - &z * beta).norm_squared();
    let tss = y.iter().map(|v| v * v).sum::<f64>(); // columns are centered
    if tss == 0.0 {
        1.0
    } else {
        1.0 - rss / tss
    }
}

/// Two-sided t-tests on the coefficients of an ordinary least-squares fit
/// of time on the explanatory variables (with intercept).
pub fn coefficient_pvalues(dataset: &Dataset) -> Result<SignificanceReport> {
    let names = dataset.kind().explanatory_names();
    let (df, variables) = ols_significance(names, &dataset.explanatory_rows(), &dataset.times())?;
    Ok(SignificanceReport { kind: dataset.kind(), n: dataset.len(), df, variables })
}

/// Row-level form of [`coefficient_pvalues`]; returns the residual degrees
/// of freedom and one entry per column.
pub fn ols_significance<R: AsRef<[f64]>>(
    names: &[&str],
    rows: &[R],
    y: &[f64],
) -> Result<(usize, Vec<VariableSignificance>)> {
    let k = names.len();
    let n = rows.len();
    if n <= k + 2 {
        return Err(Error::invalid(format!("significance needs more than {} samples, got {n}", k + 2)));
    }
    if y.len() != n || rows.iter().any(|r| r.as_ref().len() != k) {
        return Err(Error::invalid("design rows and targets disagree in shape"));
    }
    if rows.iter().flat_map(|r| r.as_ref()).chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in significance input"));
    }
    let y = DVector::from_column_slice(y);

    // standardize so the collinearity test and the solve are scale-free
    let mut scale = vec![0.0; k];
    let mut columns = Vec::with_capacity(k);
    let mut degenerate = vec![false; k];
    for j in 0..k {
        let col: Vec<f64> = rows.iter().map(|r| r.as_ref()[j]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd <= 1e-12 * mean.abs().max(f64::MIN_POSITIVE) {
            degenerate[j] = true;
            columns.push(DVector::zeros(n));
        } else {
            columns.push(DVector::from_iterator(n, col.iter().map(|v| (v - mean) / sd)));
        }
        scale[j] = sd;
    }
    // drop collinear columns one at a time, last first
    loop {
        let keep: Vec<usize> = (0..k).filter(|&j| !degenerate[j]).collect();
        let dropped = keep.iter().rev().copied().find(|&j| {
            let others: Vec<usize> = keep.iter().copied().filter(|&o| o != j).collect();
            r_squared_against(&columns, j, &others, n) >= COLLINEAR_R2
        });
        match dropped {
            Some(j) => degenerate[j] = true,
            None => break,
        }
    }

    let keep: Vec<usize> = (0..k).filter(|&j| !degenerate[j]).collect();
    let df = n - keep.len() - 1;
    let fit = ols(&design(&columns, &keep, n), &y)?;
    let sigma2 = fit.rss / df as f64;
    let t_dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut variables: Vec<VariableSignificance> = names
        .iter()
        .map(|name| VariableSignificance {
            name: (*name).to_string(),
            coefficient: 0.0,
            t_stat: 0.0,
            p_value: 1.0,
            degenerate: true,
        })
        .collect();
    for (c, &j) in keep.iter().enumerate() {
        let beta = fit.beta[c];
        let se = (sigma2 * fit.gram_inv[(c, c)]).sqrt();
        let t = if se > 0.0 {
            beta / se
        } else if beta == 0.0 {
            0.0
        } else {
            beta.signum() * f64::INFINITY
        };
        let p = if t.is_infinite() { 0.0 } else { (2.0 * t_dist.sf(t.abs())).clamp(0.0, 1.0) };
        variables[j] = VariableSignificance {
            name: names[j].to_string(),
            coefficient: beta / scale[j],
            t_stat: t,
            p_value: p,
            degenerate: false,
        };
    }
    Ok((df, variables))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::StructureConfig;
    use crate::timetree::Sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fc_dataset(seed: u64, n: usize, time: impl Fn(&[f64], &mut ChaCha8Rng) -> f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::new(LayerKind::Fc);
        for _ in 0..n {
            let cfg = StructureConfig::fc(rng.random_range(1..2048), rng.random_range(1..2048));
            let s = Sample::new(cfg, 1.0).unwrap();
            let t = time(&s.explanatory.to_vec(), &mut rng);
            ds.push(cfg, t).unwrap();
        }
        ds
    }

    #[test]
    fn driving_variable_is_significant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<[f64; 3]> = (0..200).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] + 0.1 * rng.random::<f64>()).collect();
        let (df, vars) = ols_significance(&["flops", "mem", "param_size"], &rows, &y).unwrap();
        assert_eq!(df, 200 - 3 - 1);
        assert!(vars[0].p_value < 0.01, "{:?}", vars[0]);
        assert!((vars[0].coefficient - 3.0).abs() < 0.05);
        assert!(vars.iter().all(|v| (0.0..=1.0).contains(&v.p_value)));
    }

    #[test]
    fn dataset_report_has_one_entry_per_variable() {
        let ds = fc_dataset(1, 200, |x, rng| 3.0 * x[0] + 1e5 * rng.random::<f64>());
        let report = coefficient_pvalues(&ds).unwrap();
        assert_eq!(report.variables.len(), 3);
        assert_eq!(report.n, 200);
        assert!(report.variables.iter().all(|v| (0.0..=1.0).contains(&v.p_value)));
    }

    #[test]
    fn too_few_samples() {
        let ds = fc_dataset(2, 5, |x, _| x[0] + 1.0);
        assert!(matches!(coefficient_pvalues(&ds), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn constant_column_is_degenerate() {
        let mut ds = Dataset::new(LayerKind::Gru);
        for i in 1..=30u32 {
            let cfg = StructureConfig::gru(i, 2 * i + (i % 3), 10);
            ds.push(cfg, 1.0 + f64::from(i) * 0.3 + f64::from(i % 5) * 0.01).unwrap();
        }
        let report = coefficient_pvalues(&ds).unwrap();
        let step = report.get("step").unwrap();
        assert!(step.degenerate);
        assert_eq!(step.p_value, 1.0);
    }
}

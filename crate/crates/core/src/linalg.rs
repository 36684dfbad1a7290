//! Small dense linear algebra: symmetric eigendecomposition and SPD solves.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Eigen-decomposition `A = V diag(values) Vᵀ` of a symmetric matrix.
/// `values` are ascending; column `i` of `vectors` pairs with `values[i]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations. Intended for the small (|V| ≤ a few dozen)
/// matrices produced by the hypergraph module.
pub fn symmetric_eigen(a: &Tensor) -> Result<SymmetricEigen> {
    let (n, n2) = a.dims2()?;
    if n != n2 {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    if !a.is_finite() {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let asym = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (a.get2(i, j) - a.get2(j, i)).abs())
        .fold(0.0, f64::max);
    let scale = a.data().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    if asym > 1e-9 * scale {
        return Err(Error::Numerical(format!(
            "matrix is not symmetric (max asymmetry {asym:e}, max entry {scale:e})"
        )));
    }

    let mut m: Vec<f64> = a.data().to_vec();
    let mut v = Tensor::eye(n).into_data();
    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1e-300);

    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = n <= 1;
    for _ in 0..MAX_SWEEPS {
        if off(&m) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off(&m) > tol {
        return Err(Error::Numerical(format!(
            "Jacobi iteration did not converge after {MAX_SWEEPS} sweeps (off-diagonal norm {:e}, Frobenius norm {frob:e})",
            off(&m)
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + new_col] = v[row * n + old_col];
        }
    }
    Ok(SymmetricEigen {
        values,
        vectors: Tensor::new(vec![n, n], vectors)?,
    })
}

impl SymmetricEigen {
    /// `V diag(values) Vᵀ`.
    pub fn reconstruct(&self) -> Tensor {
        let n = self.values.len();
        let mut out = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n)
                    .map(|k| self.vectors.get2(i, k) * self.values[k] * self.vectors.get2(j, k))
                    .sum();
                out.set2(i, j, s);
            }
        }
        out
    }
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major n×n)
/// via Cholesky factorization.
pub fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n || b.len() != n {
        return Err(Error::Dimension(format!(
            "cholesky_solve: matrix of {} entries, rhs of {} for n = {n}",
            a.len(),
            b.len()
        )));
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                // relative pivot test catches rank deficiency lost to rounding
                if d <= 1e-12 * a[i * n + i].abs() || !d.is_finite() {
                    return Err(Error::Numerical(format!(
                        "matrix is not positive definite (pivot {i} = {d:e})"
                    )));
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Ok(x)
}

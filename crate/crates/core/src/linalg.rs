//! Small dense helpers for symmetric positive definite systems.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Lower Cholesky factor of `a`, or `None` if a pivot is not positive.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        {
            let lj = l.row(j);
            for k in 0..j {
                d -= lj[k] * lj[k];
            }
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Factor `a + jitter·I`, escalating jitter ×10 from `start` up to `max`.
/// Returns the factor and the jitter actually used.
pub fn cholesky_jittered(a: &Array2<f64>, start: f64, max: f64) -> Result<(Array2<f64>, f64)> {
    let mut jitter = start;
    let mut work = a.clone();
    loop {
        for i in 0..a.nrows() {
            work[[i, i]] = a[[i, i]] + jitter;
        }
        if let Some(l) = cholesky(&work) {
            return Ok((l, jitter));
        }
        if jitter >= max {
            return Err(Error::Conditioning { jitter });
        }
        jitter = (jitter * 10.0).min(max);
    }
}

/// Solve `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        let row = l.row(i);
        let mut s = x[i];
        for k in 0..i {
            s -= row[k] * x[k];
        }
        x[i] = s / row[i];
    }
    x
}

/// Solve `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_upper_t(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve `(L Lᵀ) x = b`.
pub fn cho_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let y = solve_lower(l, b);
    solve_upper_t(l, y.view())
}

/// `log det(L Lᵀ)`.
pub fn chol_logdet(l: &Array2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn factor_reconstructs() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let r = l.dot(&l.t());
        assert!((&r - &a).iter().all(|v| v.abs() < 1e-12));
        let b = array![1.0, 2.0, 3.0];
        let x = cho_solve(&l, b.view());
        assert!((a.dot(&x) - &b).iter().all(|v| v.abs() < 1e-12));
        let det = 4.0 * (5.0 * 3.0 - 1.0) - 2.0 * (2.0 * 3.0 - 0.4) + 0.4 * (2.0 - 5.0 * 0.4);
        assert!((chol_logdet(&l) - f64::ln(det)).abs() < 1e-12);
    }

    #[test]
    fn jitter_escalates_then_fails() {
        let singular = array![[1.0, 1.0], [1.0, 1.0]];
        let (_, j) = cholesky_jittered(&singular, 1e-8, 1e-4).unwrap();
        assert_eq!(j, 1e-8);
        let indefinite = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            cholesky_jittered(&indefinite, 1e-8, 1e-4),
            Err(Error::Conditioning { .. })
        ));
    }
}

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative diagonal jitter added before factorization, and its ceiling.
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

/// Squared-exponential kernel hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    /// Signal standard deviation.
    pub sigma: f64,
    /// Inverse squared length scales, one per input dimension.
    pub beta: Vec<f64>,
    /// Residual (noise) standard deviation.
    pub lambda: f64,
}

impl GpHyper {
    pub fn new(sigma: f64, beta: Vec<f64>, lambda: f64) -> Self {
        GpHyper { sigma, beta, lambda }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.beta.len() != d {
            return Err(Error::shape(format!(
                "hyperparameters have {} length scales, inputs have {d} dimensions",
                self.beta.len()
            )));
        }
        let positive = self.sigma > 0.0 && self.beta.iter().all(|&b| b > 0.0) && self.lambda >= 0.0;
        let finite = self.sigma.is_finite() && self.lambda.is_finite() && self.beta.iter().all(|b| b.is_finite());
        if !positive || !finite {
            return Err(Error::config(format!("invalid hyperparameters {self:?}")));
        }
        Ok(())
    }

    /// Prior variance of a new observation, `σ² + λ²`.
    pub fn prior_var(&self) -> f64 {
        self.sigma * self.sigma + self.lambda * self.lambda
    }
}

#[inline]
pub(crate) fn sq_exp(a: ArrayView1<f64>, b: ArrayView1<f64>, h: &GpHyper) -> f64 {
    let mut s = 0.0;
    for j in 0..h.beta.len() {
        let d = a[j] - b[j];
        s += h.beta[j] * d * d;
    }
    h.sigma * h.sigma * (-s).exp()
}

/// `σ²·exp(−Σ β_j (a_j − b_j)²)`, plus `λ²` when both arguments are the same
/// training index.
pub fn kernel_eval(a: &[f64], b: &[f64], h: &GpHyper, same_index: bool) -> Result<f64> {
    if a.len() != h.beta.len() || b.len() != h.beta.len() {
        return Err(Error::shape(format!(
            "kernel arguments of length {} and {} with {} length scales",
            a.len(),
            b.len(),
            h.beta.len()
        )));
    }
    let k = sq_exp(ArrayView1::from(a), ArrayView1::from(b), h);
    Ok(if same_index { k + h.lambda * h.lambda } else { k })
}

/// Training covariance `K(X, X)` including the `λ²` diagonal, without jitter.
pub fn build_cov(x: ArrayView2<f64>, h: &GpHyper) -> Result<Array2<f64>> {
    h.validate(x.ncols())?;
    let n = x.nrows();
    let mut k = Array2::zeros((n, n));
    let l2 = h.lambda * h.lambda;
    for i in 0..n {
        let xi = x.row(i);
        k[[i, i]] = h.sigma * h.sigma + l2;
        for j in 0..i {
            let v = sq_exp(xi, x.row(j), h);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(k)
}

/// Cross covariance `K(A, B)` (no noise term).
pub fn cross_cov(a: ArrayView2<f64>, b: ArrayView2<f64>, h: &GpHyper) -> Result<Array2<f64>> {
    h.validate(a.ncols())?;
    if b.ncols() != a.ncols() {
        return Err(Error::shape("cross covariance dimension mismatch"));
    }
    let mut k = Array2::zeros((a.nrows(), b.nrows()));
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            k[[i, j]] = sq_exp(a.row(i), b.row(j), h);
        }
    }
    Ok(k)
}

/// Factor `K + jitter·I` with jitter starting at `1e-10·σ²` and escalating
/// up to `1e-4·σ²`. Returns the lower factor and the jitter used.
pub fn factor_cov(k: &Array2<f64>, h: &GpHyper) -> Result<(Array2<f64>, f64)> {
    let s2 = h.sigma * h.sigma;
    linalg::cholesky_jittered(k, JITTER_START * s2, JITTER_MAX * s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kernel_values() {
        let h = GpHyper::new(2.0, vec![1.0], 0.0);
        assert_eq!(kernel_eval(&[0.3], &[0.3], &h, false).unwrap(), 4.0);
        let h = GpHyper::new(1.0, vec![1.0], 0.5);
        assert!((kernel_eval(&[0.0], &[1.0], &h, false).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((kernel_eval(&[0.0], &[0.0], &h, true).unwrap() - 1.25).abs() < 1e-15);
        let h = GpHyper::new(1.0, vec![1.0, 2.0], 0.0);
        let k = kernel_eval(&[0.0, 0.0], &[1.0, 1.0], &h, false).unwrap();
        assert!((k - (-3.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.049787).abs() < 1e-6);
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let h = GpHyper::new(1.0, vec![1.0, 1.0], 0.0);
        assert!(matches!(kernel_eval(&[0.0], &[0.0], &h, false), Err(Error::Shape(_))));
    }

    #[test]
    fn cov_matches_double_loop() {
        let x = array![[0.1, 0.2], [0.5, -0.3], [1.2, 0.8], [0.1, 0.2]];
        let h = GpHyper::new(1.3, vec![0.7, 2.0], 0.2);
        let k = build_cov(x.view(), &h).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let e = kernel_eval(
                    x.row(i).as_slice().unwrap(),
                    x.row(j).as_slice().unwrap(),
                    &h,
                    i == j,
                )
                .unwrap();
                assert_eq!(k[[i, j]], e);
            }
        }
    }

    #[test]
    fn single_point_cov_and_duplicates() {
        let h = GpHyper::new(2.0, vec![1.0], 0.3);
        let k = build_cov(array![[0.5]].view(), &h).unwrap();
        let (l, jit) = factor_cov(&k, &h).unwrap();
        assert_eq!(jit, 1e-10 * 4.0);
        assert!((l[[0, 0]].powi(2) - (4.0 + 0.09 + 4e-10)).abs() < 1e-12);
        // duplicated rows: λ² keeps the matrix full rank at the starting jitter
        let x = array![[0.5], [0.5], [0.5]];
        let k = build_cov(x.view(), &h).unwrap();
        let (_, jit) = factor_cov(&k, &h).unwrap();
        assert_eq!(jit, 4e-10);
    }
}

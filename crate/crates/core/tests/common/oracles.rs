//! GP and PCA measurements against dense or independent oracles.

use super::jacobi_eigenvalues;
use inverseflow::gp::{kernel_eval, log_posterior, mcmc_fit, GpHyper, GpModel, HyperPrior, McmcConfig, JITTER_START};
use inverseflow::harness::quantile;
use inverseflow::linalg::cholesky;
use inverseflow::mfgp::Fidelity;
use inverseflow::problems::BladeLikeProblem;
use inverseflow::reduce::{pca_fit, ProfileCodec, ProfileMode};
use inverseflow::sampling::{self, normal, uniform_box};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

pub fn dense_k(x: &Array2<f64>, h: &GpHyper) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let a = x.row(i).to_vec();
        let b = x.row(j).to_vec();
        kernel_eval(&a, &b, h, i == j).unwrap()
    })
}

/// Noiseless GP on 20 evenly spaced points. Returns (worst |error|, worst variance).
pub fn gp_interpolation() -> (f64, f64) {
    let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64 / 19.0);
    let f = |t: f64| (6.0 * t).sin() + 0.5 * t;
    let y = x.column(0).mapv(f);
    let model = GpModel::with_hypers(x.clone(), y.clone(), vec![GpHyper::new(1.0, vec![10.0], 0.0)]).unwrap();
    let (mut err, mut var) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let (m, v) = model.predict(&[x[[i, 0]]]).unwrap();
        err = err.max((m - y[i]).abs());
        var = var.max(v);
    }
    (err, var)
}

/// Worst relative error of the log posterior over 40 small random cases.
pub fn log_posterior_vs_dense() -> f64 {
    let mut rng = sampling::rng(3);
    let mut worst = 0.0f64;
    for case in 0..40 {
        let n = 1 + case % 8;
        let d = 1 + case % 3;
        let x = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let y = Array1::from_shape_fn(n, |_| normal(&mut rng));
        let h = GpHyper::new(
            0.5 + rng.random::<f64>(),
            (0..d).map(|_| 0.2 + 2.0 * rng.random::<f64>()).collect(),
            0.05 + 0.3 * rng.random::<f64>(),
        );
        let prior = HyperPrior::default_for(d);
        let mut k = dense_k(&x, &h);
        for i in 0..n {
            k[(i, i)] += JITTER_START * h.sigma * h.sigma;
        }
        let det = k.determinant();
        let inv = k.try_inverse().unwrap();
        let yv = DVector::from_iterator(n, y.iter().copied());
        let quad = (yv.transpose() * &inv * &yv)[(0, 0)];
        let oracle =
            -0.5 * det.ln() - 0.5 * quad - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() + prior.ln_density(&h);
        let got = log_posterior(x.view(), y.view(), &h, &prior).unwrap();
        worst = worst.max((got - oracle).abs() / oracle.abs());
    }
    worst
}

/// Draw y ~ GP(0, k_h) at x.
fn draw_gp(x: &Array2<f64>, h: &GpHyper, rng: &mut sampling::SeededRng) -> Array1<f64> {
    let n = x.nrows();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            k[[i, j]] = kernel_eval(&x.row(i).to_vec(), &x.row(j).to_vec(), h, i == j).unwrap();
        }
        k[[i, i]] += 1e-10;
    }
    let l = cholesky(&k).unwrap();
    let e = Array1::from_shape_fn(n, |_| normal(rng));
    l.dot(&e)
}

pub const SBC_RUNS: usize = 20;

/// How often the 95% interval of (σ, β, λ) covers the generating value.
pub fn sbc_coverage() -> [usize; 3] {
    let truth = GpHyper::new(1.0, vec![4.0], 0.1);
    let prior = HyperPrior::default_for(1);
    let mut cover = [0usize; 3];
    for run in 0..SBC_RUNS as u64 {
        let mut rng = sampling::rng(600 + run);
        let x = Array2::from_shape_fn((40, 1), |_| 2.0 * rng.random::<f64>());
        let y = draw_gp(&x, &truth, &mut rng);
        let cfg = McmcConfig {
            n_steps: 6000,
            n_burn: 2000,
            n_keep: 400,
            seed: 900 + run,
            normalize: false,
            ..McmcConfig::default()
        };
        let draws = mcmc_fit(x, y, &prior, &cfg).unwrap().samples().to_vec();
        let params = [
            draws.iter().map(|h| h.sigma).collect::<Vec<_>>(),
            draws.iter().map(|h| h.beta[0]).collect(),
            draws.iter().map(|h| h.lambda).collect(),
        ];
        let t = [truth.sigma, truth.beta[0], truth.lambda];
        for k in 0..3 {
            if quantile(&params[k], 0.025) <= t[k] && t[k] <= quantile(&params[k], 0.975) {
                cover[k] += 1;
            }
        }
    }
    cover
}

pub fn random_data(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = sampling::rng(seed);
    // Anisotropic so the spectrum is well separated.
    let scales: Vec<f64> = (0..d).map(|j| 2.0f64.powi(-(j as i32) / 2)).collect();
    let mix = Array2::from_shape_fn((d, d), |_| normal(&mut rng));
    let raw = Array2::from_shape_fn((n, d), |(_, j)| scales[j] * normal(&mut rng));
    raw.dot(&mix) + 0.5
}

/// Energy fractions and k at several thresholds against Jacobi eigenvalues.
/// Returns (worst fraction error, every k matched).
pub fn pca_vs_jacobi() -> (f64, bool) {
    let mut worst = 0.0f64;
    let mut k_ok = true;
    for seed in 0..5 {
        let y = random_data(20, 10, seed);
        let mean = y.mean_axis(Axis(0)).unwrap();
        let c = &y - &mean;
        let cov = c.t().dot(&c) / 20.0;
        let ev = jacobi_eigenvalues(cov.rows().into_iter().map(|r| r.to_vec()).collect());
        let total: f64 = ev.iter().sum();
        let basis = pca_fit(y.view(), 1.0, None).unwrap();
        k_ok &= basis.k() == 10;
        worst = worst.max((basis.total_variance - total).abs() / total);
        for (k, f) in basis.energy_fractions.iter().enumerate() {
            worst = worst.max((f - ev[k] / total).abs());
        }
        for thr in [0.5, 0.8, 0.95] {
            let b = pca_fit(y.view(), thr, None).unwrap();
            let mut cum = 0.0;
            let mut k_oracle = 0;
            while cum < thr {
                cum += ev[k_oracle] / total;
                k_oracle += 1;
            }
            k_ok &= b.k() == k_oracle;
            worst = worst.max((b.total_energy_captured - cum).abs());
        }
    }
    (worst, k_ok)
}

/// Worst |reconstruction MSE − discarded energy| over three thresholds.
pub fn reconstruction_vs_discarded() -> f64 {
    let mut worst = 0.0f64;
    for (seed, thr) in [(1u64, 0.6), (2, 0.9), (3, 0.99)] {
        let y = random_data(40, 12, seed);
        let b = pca_fit(y.view(), thr, None).unwrap();
        assert!(b.k() < 12);
        let rec = b.decode_rows(b.encode_rows(y.view()).unwrap().view()).unwrap();
        let mse = (&y - &rec).iter().map(|v| v * v).sum::<f64>() / 40.0;
        let discarded = (1.0 - b.total_energy_captured) * b.total_variance;
        worst = worst.max((mse - discarded).abs());
    }
    worst
}

/// 1000 high-fidelity blade profiles: (raw energy, raw k, codec energy, codec k)
/// with k capped at 8.
pub fn blade_compression() -> (f64, usize, f64, usize) {
    let p = BladeLikeProblem::new(0);
    let mut rng = sampling::rng(12);
    let x = uniform_box(&mut rng, 1000, &vec![0.0; 85], &vec![1.0; 85]);
    let rows = p.eval_rows(&x, Fidelity::High).unwrap();
    let profiles = rows.slice(ndarray::s![.., p.n_scalars()..]).to_owned();
    let raw = pca_fit(profiles.view(), 0.9, Some(8)).unwrap();
    let n = p.profile_len() / 2;
    let codec = ProfileCodec::fit(profiles.view(), &[n, n], ProfileMode::Joint, 0.9, Some(8)).unwrap();
    (raw.total_energy_captured, raw.k(), codec.energy_captured(), codec.n_coefficients())
}

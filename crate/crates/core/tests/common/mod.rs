#![allow(dead_code)]

use inverseflow::cinn::{CinnArch, CinnModel, CinnNorm};
use inverseflow::sampling::{self, SeededRng};

pub mod oracles;

/// Relative error with an absolute floor, so exact zeros compare sanely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn jitter_params(params: Vec<&mut [f64]>, scale: f64, rng: &mut SeededRng) {
    for p in params {
        for v in p.iter_mut() {
            *v += scale * sampling::normal(rng);
        }
    }
}

pub fn arch(n_blocks: usize, hidden: Vec<usize>, cond_hidden: Vec<usize>, d_c: usize, seed: u64) -> CinnArch {
    CinnArch {
        n_blocks,
        hidden,
        cond_hidden,
        d_c,
        s_clamp: 2.0,
        dropout: 0.0,
        seed,
    }
}

/// A model whose coupling nets are no longer zero, so every block is a
/// genuinely non-trivial map.
pub fn random_model(m: usize, d_y: usize, n_blocks: usize, seed: u64) -> CinnModel {
    random_model_scaled(m, d_y, n_blocks, seed, 0.3)
}

pub fn random_model_scaled(m: usize, d_y: usize, n_blocks: usize, seed: u64, scale: f64) -> CinnModel {
    let a = arch(n_blocks, vec![8, 8], vec![6], 3, seed);
    let mut model = CinnModel::new(m, d_y, &a, CinnNorm::identity(m, d_y)).unwrap();
    let mut rng = sampling::rng(seed ^ 0xabcdef);
    jitter_params(model.params_mut(), scale, &mut rng);
    model
}

pub fn normal_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| sampling::normal(rng)).collect()
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

pub mod checks {
    //! Worst-case error measurements shared by the integration and
    //! acceptance suites. Each returns the worst error it saw.

    use super::*;
    use inverseflow::cinn::{cinn_train, loss_and_grad, CinnConfig, DataSource, TrainConfig};
    use inverseflow::numcore::{DenseNet, LrSchedule, Mode};
    use inverseflow::problems::ToyProblem;
    use nalgebra::DMatrix;

    pub const H: f64 = 1e-6;
    /// Small-net gradients below this are compared in absolute terms.
    pub const FLOOR: f64 = 1e-4;
    // The flow loss sums many rows, so a plain step-1e-6 difference is
    // dominated by round-off. A five-point stencil allows a larger step.
    pub const H5: f64 = 1e-5;
    // Its round-off is still about 1e-9 in absolute terms, so tiny
    // flow-loss gradients are compared against this floor instead.
    pub const FLOW_FLOOR: f64 = 1e-3;

    pub fn inf_norm(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn objective(net: &DenseNet, input: &[f64], upstream: &[f64], mode: Mode, seed: u64) -> f64 {
        let out = net.eval_one(input, mode, seed).unwrap();
        out.iter().zip(upstream).map(|(a, b)| a * b).sum()
    }

    /// Every parameter and input gradient of `upstream · net(input)` against
    /// central differences. Returns (worst rel err, parameters checked).
    pub fn net_gradients(dims: &[usize], dropout: f64, mode: Mode, seed: u64) -> (f64, usize) {
        let mut rng = sampling::rng(seed);
        let mut net = DenseNet::mlp(dims, dropout, false, &mut rng).unwrap();
        assert!(net.param_count() <= 100, "net too large for the suite: {}", net.param_count());
        let input = normal_vec(&mut rng, dims[0]);
        let upstream = normal_vec(&mut rng, *dims.last().unwrap());
        let mask_seed = seed + 1000;
        let (grads, gin) = net.grad_one(&input, &upstream, mode, mask_seed).unwrap();
        let analytic: Vec<f64> = grads.slices().into_iter().flatten().copied().collect();
        assert_eq!(analytic.len(), net.param_count());
        let mut worst = 0.0f64;
        let mut k = 0;
        for t in 0..net.params().len() {
            for i in 0..net.params()[t].len() {
                let orig = net.params()[t][i];
                net.params_mut()[t][i] = orig + H;
                let up = objective(&net, &input, &upstream, mode, mask_seed);
                net.params_mut()[t][i] = orig - H;
                let dn = objective(&net, &input, &upstream, mode, mask_seed);
                net.params_mut()[t][i] = orig;
                worst = worst.max(rel_err(analytic[k], (up - dn) / (2.0 * H), FLOOR));
                k += 1;
            }
        }
        for j in 0..input.len() {
            let mut a = input.clone();
            a[j] += H;
            let up = objective(&net, &a, &upstream, mode, mask_seed);
            a[j] -= 2.0 * H;
            let dn = objective(&net, &a, &upstream, mode, mask_seed);
            worst = worst.max(rel_err(gin[j], (up - dn) / (2.0 * H), FLOOR));
        }
        (worst, k)
    }

    /// Full flow loss on an M=4 model. Returns (worst rel err, parameters).
    pub fn flow_loss_gradients(seed: u64, tau: f64) -> (f64, usize) {
        let mut model = random_model(4, 2, 3, seed);
        let mut rng = sampling::rng(seed + 50);
        let xn = sampling::normal_matrix(&mut rng, 6, 4);
        let yn = sampling::normal_matrix(&mut rng, 6, 2).mapv(|v| 0.5 + 0.2 * v);
        let (_, grads) = loss_and_grad(&model, xn.view(), yn.view(), tau, Mode::Infer, None).unwrap();
        let analytic: Vec<f64> = grads.slices().into_iter().flatten().copied().collect();
        assert_eq!(analytic.len(), model.param_count());
        let loss = |m: &CinnModel| loss_and_grad(m, xn.view(), yn.view(), tau, Mode::Infer, None).unwrap().0;
        let mut worst = 0.0f64;
        let mut k = 0;
        for t in 0..model.params().len() {
            for i in 0..model.params()[t].len() {
                let orig = model.params()[t][i];
                let mut at = |d: f64| {
                    model.params_mut()[t][i] = orig + d;
                    let v = loss(&model);
                    model.params_mut()[t][i] = orig;
                    v
                };
                let (p1, m1, p2, m2) = (at(H5), at(-H5), at(2.0 * H5), at(-2.0 * H5));
                let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * H5);
                worst = worst.max(rel_err(analytic[k], fd, FLOW_FLOOR));
                k += 1;
            }
        }
        (worst, k)
    }

    fn fd_logdet(model: &CinnModel, x: &[f64], y: &[f64]) -> f64 {
        let m = x.len();
        let h = 1e-5;
        let mut jac = DMatrix::zeros(m, m);
        for j in 0..m {
            let mut a = x.to_vec();
            a[j] += h;
            let (zp, _) = model.cinn_forward(&a, y).unwrap();
            a[j] -= 2.0 * h;
            let (zm, _) = model.cinn_forward(&a, y).unwrap();
            for i in 0..m {
                jac[(i, j)] = (zp[i] - zm[i]) / (2.0 * h);
            }
        }
        jac.determinant().abs().ln()
    }

    /// 50 random cases for each M in {2,4,6} and L in {1,3}.
    /// Returns (worst rel err, cases).
    pub fn logdet_vs_finite_differences() -> (f64, usize) {
        let mut worst = 0.0f64;
        let mut n = 0;
        for m in [2usize, 4, 6] {
            for l in [1usize, 3] {
                for case in 0..50u64 {
                    let seed = 1000 * m as u64 + 100 * l as u64 + case;
                    let model = random_model(m, 2, l, seed);
                    let mut rng = sampling::rng(seed + 7);
                    let x = normal_vec(&mut rng, m);
                    let y: Vec<f64> = (0..2).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
                    let (_, ld) = model.cinn_forward(&x, &y).unwrap();
                    worst = worst.max(rel_err(ld, fd_logdet(&model, &x, &y), 1e-3));
                    n += 1;
                }
            }
        }
        (worst, n)
    }

    pub fn round_trips(model: &CinnModel, n: usize, seed: u64, x_scale: f64) -> f64 {
        let mut rng = sampling::rng(seed);
        let mut worst = 0.0f64;
        for _ in 0..n {
            let x: Vec<f64> = normal_vec(&mut rng, model.dim()).iter().map(|v| x_scale * v).collect();
            let y: Vec<f64> = (0..model.obs_dim()).map(|_| 2.0 * sampling::normal(&mut rng)).collect();
            let (z, _) = model.cinn_forward(&x, &y).unwrap();
            let back = model.cinn_invert_one(&z, &y).unwrap();
            worst = worst.max(inf_norm(&x, &back));
        }
        worst
    }

    /// 1000 cases spread over five random models of growing size.
    pub fn random_model_round_trips() -> (f64, usize) {
        let mut worst = 0.0f64;
        let mut total = 0;
        for (k, (m, l)) in [(2usize, 1usize), (3, 2), (4, 3), (6, 4), (9, 8)].into_iter().enumerate() {
            let model = random_model_scaled(m, 3, l, 500 + k as u64, 0.1);
            worst = worst.max(round_trips(&model, 200, 900 + k as u64, 1.5));
            total += 200;
        }
        (worst, total)
    }

    /// 1000 per-block round trips over 20 random two-block models.
    pub fn block_round_trips() -> (f64, usize) {
        let mut worst = 0.0f64;
        let mut n = 0;
        for seed in 0..20u64 {
            let m = 2 + (seed as usize % 6);
            let model = random_model(m, 2, 2, 4000 + seed);
            let mut rng = sampling::rng(seed);
            for block in model.blocks() {
                for _ in 0..25 {
                    let x: Vec<f64> = normal_vec(&mut rng, m).iter().map(|v| 2.0 * v).collect();
                    let c = normal_vec(&mut rng, block.cond_dim());
                    let (z, _) = block.coupling_forward(&x, &c).unwrap();
                    let back = block.coupling_inverse(&z, &c).unwrap();
                    worst = worst.max(inf_norm(&x, &back));
                    n += 1;
                }
            }
        }
        (worst, n)
    }

    /// A toy flow trained for 150 online steps.
    pub fn short_toy_model() -> (CinnModel, f64, f64) {
        let problem = ToyProblem::default();
        let cfg = CinnConfig {
            arch: arch(8, vec![32, 32], vec![16], 8, 3),
            train: TrainConfig {
                batch_size: 64,
                epochs: 3,
                steps_per_epoch: 50,
                schedule: LrSchedule::CosineAnneal {
                    lr_start: 3e-3,
                    lr_end: 1e-4,
                    total_steps: 150,
                },
                adam: Default::default(),
                tau: 0.0,
                seed: 4,
                y_noise_std: 0.0,
                pilot_rows: 2000,
                eval_rows: 256,
                checkpoint: None,
            },
        };
        let source = DataSource::Online {
            sample: Box::new(move |rng, n| {
                let (x, y) = problem.sample_pairs(rng, n);
                Ok((x, y.insert_axis(ndarray::Axis(1))))
            }),
            m: 2,
            d_y: 1,
        };
        let t = cinn_train(source, &cfg).unwrap();
        let last = *t.curve.eval_nll.last().unwrap();
        (t.model, t.curve.initial_eval_nll, last)
    }
}

mod common;

use inverseflow::cinn::cinn_loss;
use inverseflow::gp::{GpHyper, GpModel};
use inverseflow::harness::{nrmse, r_squared};
use inverseflow::problems::ToyProblem;
use inverseflow::reduce::pca_fit;
use inverseflow::sampling::{self, latin_hypercube};
use ndarray::{concatenate, Array1, Array2, Axis};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toy_forward_is_even(x1 in -2.0f64..2.0, x2 in -2.0f64..2.0) {
        let p = ToyProblem::default();
        prop_assert_eq!(p.objective(&[x1, x2]), p.objective(&[-x1, -x2]));
    }

    #[test]
    fn ring_points_hit_the_level(y in 0.0f64..20.0, angle in 0.0f64..std::f64::consts::TAU) {
        let p = ToyProblem::default();
        let ring = p.toy_inverse_oracle(y).unwrap();
        let x = [ring.radius * angle.cos(), ring.radius * angle.sin()];
        let f = p.objective(&x);
        prop_assert!((f - ring.radius * ring.radius).abs() <= 1e-12);
    }

    #[test]
    fn metrics_are_affine_invariant(
        truth in prop::collection::vec(-5.0f64..5.0, 3..20),
        noise in prop::collection::vec(-0.5f64..0.5, 20),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let spread = truth.iter().cloned().fold(f64::MIN, f64::max) - truth.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-3);
        let pred: Vec<f64> = truth.iter().zip(&noise).map(|(t, e)| t + e).collect();
        let map = |v: &[f64]| v.iter().map(|x| a * x + b).collect::<Vec<_>>();
        let e0 = nrmse(&pred, &truth).unwrap();
        let e1 = nrmse(&map(&pred), &map(&truth)).unwrap();
        prop_assert!((e0 - e1).abs() <= 1e-9 * (1.0 + e0));
        let r0 = r_squared(&pred, &truth).unwrap();
        let r1 = r_squared(&map(&pred), &map(&truth)).unwrap();
        prop_assert!((r0 - r1).abs() <= 1e-9 * (1.0 + r0.abs()));
    }

    #[test]
    fn coupling_round_trip(seed in 0u64..10_000, m in 2usize..7, scale in 0.1f64..3.0) {
        let model = common::random_model(m, 2, 2, seed);
        let mut rng = sampling::rng(seed);
        let x: Vec<f64> = common::normal_vec(&mut rng, m).iter().map(|v| scale * v).collect();
        let y = [0.3, 0.7];
        let (z, _) = model.cinn_forward(&x, &y).unwrap();
        let back = model.cinn_invert_one(&z, &y).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn pca_ignores_row_order(seed in 0u64..1000) {
        let mut rng = sampling::rng(seed);
        let y = sampling::normal_matrix(&mut rng, 15, 6);
        let mut idx: Vec<usize> = (0..15).collect();
        idx.reverse();
        idx.swap(0, (seed % 15) as usize);
        let yp = y.select(Axis(0), &idx);
        let a = pca_fit(y.view(), 0.9, None).unwrap();
        let b = pca_fit(yp.view(), 0.9, None).unwrap();
        prop_assert_eq!(a.k(), b.k());
        for (fa, fb) in a.energy_fractions.iter().zip(&b.energy_fractions) {
            prop_assert!((fa - fb).abs() <= 1e-10);
        }
        // Components are sign-normalized, so they agree as vectors.
        for (ca, cb) in a.components.iter().zip(&b.components) {
            for (u, v) in ca.iter().zip(cb) {
                prop_assert!((u - v).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn predictive_variance_is_non_negative(seed in 0u64..1000, q in -3.0f64..3.0, lambda in 0.0f64..0.5) {
        let mut rng = sampling::rng(seed);
        let x = Array2::from_shape_fn((10, 1), |_| rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0);
        let y = Array1::from_shape_fn(10, |_| sampling::normal(&mut rng));
        let m = GpModel::with_hypers(x, y, vec![GpHyper::new(1.0, vec![3.0], lambda)]).unwrap();
        let (_, v) = m.predict(&[q]).unwrap();
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn loss_is_a_batch_mean(seed in 0u64..1000, n in 1usize..10) {
        let mut rng = sampling::rng(seed);
        let z = sampling::normal_matrix(&mut rng, n, 3);
        let ld = Array1::from_shape_fn(n, |_| sampling::normal(&mut rng));
        let once = cinn_loss(z.view(), ld.view(), 2.0, 0.01).unwrap();
        let z2 = concatenate(Axis(0), &[z.view(), z.view()]).unwrap();
        let ld2 = concatenate(Axis(0), &[ld.view(), ld.view()]).unwrap();
        let twice = cinn_loss(z2.view(), ld2.view(), 2.0, 0.01).unwrap();
        prop_assert!((once - twice).abs() <= 1e-12 * (1.0 + once.abs()));
    }

    #[test]
    fn lhs_has_one_point_per_stratum(seed in 0u64..1000, n in 1usize..40, d in 1usize..5) {
        let u = latin_hypercube(&mut sampling::rng(seed), n, d);
        for j in 0..d {
            let mut hit = vec![false; n];
            for i in 0..n {
                let k = (u[[i, j]] * n as f64).floor() as usize;
                prop_assert!(k < n && !hit[k]);
                hit[k] = true;
            }
        }
    }
}

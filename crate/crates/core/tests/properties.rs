//! Randomized invariants.

mod support;

use std::path::Path;

use proptest::prelude::*;
use support::configs::{check_round_trip, config};
use velab::analysis::{histogram_divergence, predicted_sigma_eq, surrogate_minimizer};
use velab::checkpoint::Checkpoint;
use velab::flow::{euler_integrate, flow_target, FnField, SamplerConfig};
use velab::harness::artifacts::{points_from_text, points_to_text};
use velab::mixture::{BranchPerturbation, MixtureModel};
use velab::nn::MlpNetwork;
use velab::rng::RngStream;
use velab::tokenizer::{kl_loss, reparameterize_with, ve_var_loss};
use velab::train::ArchSpec;
use velab::Matrix;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn config_round_trips_through_toml_and_json(cfg in config()) {
        if let Err(e) = check_round_trip(&cfg) {
            return Err(TestCaseError::fail(e));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_prior(mu in prop::collection::vec(-5.0f64..5.0, 2..16), lv in prop::collection::vec(-8.0f64..8.0, 2..16)) {
        let n = mu.len().min(lv.len()) / 2 * 2;
        let mu = Matrix::from_vec(n / 2, 2, mu[..n].to_vec()).unwrap();
        let lv = Matrix::from_vec(n / 2, 2, lv[..n].to_vec()).unwrap();
        let k = kl_loss(&mu, &lv).value;
        prop_assert!(k >= 0.0);
        let zeros = Matrix::zeros(n / 2, 2);
        prop_assert_eq!(kl_loss(&zeros, &zeros).value, 0.0);
    }

    #[test]
    fn ve_term_is_decreasing_in_variance(lv in -20.0f64..8.0, step in 1e-3f64..3.0, delta in 1e-10f64..1e-2) {
        let a = ve_var_loss(&Matrix::from_vec(1, 1, vec![lv]).unwrap(), delta);
        let b = ve_var_loss(&Matrix::from_vec(1, 1, vec![lv + step]).unwrap(), delta);
        prop_assert!(b.value < a.value);
        prop_assert!(a.grad.as_slice()[0] < 0.0);
        prop_assert!(a.value <= 1.0 / delta);
    }

    #[test]
    fn reparameterization_is_affine_in_noise(mu in -3.0f64..3.0, lv in -10.0f64..5.0, e in -4.0f64..4.0) {
        let m = Matrix::from_vec(1, 2, vec![mu, -mu]).unwrap();
        let l = Matrix::from_vec(1, 2, vec![lv, lv]).unwrap();
        let z0 = reparameterize_with(&m, &l, &Matrix::zeros(1, 2)).unwrap();
        prop_assert_eq!(z0.as_slice(), m.as_slice());
        let z = reparameterize_with(&m, &l, &Matrix::from_vec(1, 2, vec![e, e]).unwrap()).unwrap();
        let sigma = (0.5 * lv).exp();
        prop_assert!((z.get(0, 0) - (mu + sigma * e)).abs() <= 1e-12 * (1.0 + mu.abs() + (sigma * e).abs()));
    }

    #[test]
    fn flow_path_endpoints_and_velocity(x in prop::array::uniform2(-5.0f64..5.0), z0 in prop::array::uniform2(-5.0f64..5.0), t in 0.0f64..=1.0) {
        let (zt, v) = flow_target(x, z0, t).unwrap();
        for d in 0..2 {
            prop_assert!((v[d] - (x[d] - z0[d])).abs() < 1e-12);
            prop_assert!((zt[d] - ((1.0 - t) * z0[d] + t * x[d])).abs() < 1e-12);
        }
        prop_assert_eq!(flow_target(x, z0, 0.0).unwrap().0, z0);
        prop_assert!(flow_target(x, z0, 1.0 + 1e-9).is_err());
        prop_assert!(flow_target(x, z0, -1e-9).is_err());
    }

    #[test]
    fn euler_transports_constant_field_exactly(v in prop::array::uniform2(-3.0f64..3.0), steps in 1usize..64, n in 0usize..40, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, "prop");
        let mut z0 = Matrix::zeros(n, 2);
        rng.fill_normal(z0.as_mut_slice());
        let field = FnField(move |_z: &[f64], _t: f64| v);
        let z1 = euler_integrate(&field, &z0, SamplerConfig { steps }).unwrap();
        for (a, b) in z1.iter_rows().zip(z0.iter_rows()) {
            for d in 0..2 {
                prop_assert!((a[d] - b[d] - v[d]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn equilibrium_law_scales_as_quartic_root(t in 1e-3f64..1e3, lambda in 1e-6f64..1.0) {
        let a = predicted_sigma_eq(t, lambda).unwrap().sigma;
        let b = predicted_sigma_eq(t, 16.0 * lambda).unwrap().sigma;
        prop_assert!((b / a - 2.0).abs() < 1e-12);
        // surrogate minimizer is the interior minimum of s·T + λ/(s + δ)
        let delta = 1e-8;
        let s = surrogate_minimizer(t, lambda, delta);
        let g = |s: f64| s * t + lambda / (s + delta);
        if s > 0.0 {
            prop_assert!(g(s) <= g(s * 1.01) && g(s) <= g(s * 0.99));
        }
    }

    #[test]
    fn histogram_divergence_is_symmetric(pa in prop::collection::vec(prop::array::uniform2(-4.0f64..4.0), 1..200), pb in prop::collection::vec(prop::array::uniform2(-4.0f64..4.0), 1..200)) {
        let ab = histogram_divergence(&pa, &pb);
        let ba = histogram_divergence(&pb, &pa);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert!(histogram_divergence(&pa, &pa).abs() < 1e-12);
    }

    #[test]
    fn point_tables_round_trip_exactly(pts in prop::collection::vec(prop::array::uniform2(any::<f64>().prop_filter("finite", |v| v.is_finite())), 0..50)) {
        let text = points_to_text(&pts);
        let back = points_from_text(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(back, pts);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(depth in 1usize..5, width in 1usize..12, seed in any::<u64>(), iter in any::<u32>()) {
        let mut rng = RngStream::new(seed, "ck");
        let net = MlpNetwork::new(ArchSpec { depth, hidden: width }.mlp(3, 2), &mut rng).unwrap();
        let mut ck = Checkpoint::new("tokenizer", "abc", iter as u64);
        ck.add_network("decoder", &net);
        ck.add_rng(&rng);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back.network("decoder").unwrap().params_flat(), net.params_flat());
        prop_assert_eq!(back.header.iteration, iter as u64);
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mixture_density_and_sampling(depth in 1u32..4, segs in 1u32..6, seed in any::<u32>(), q in prop::array::uniform2(-3.0f64..3.0), noise in 0.0f64..1.0) {
        let m = MixtureModel::fractal(depth, segs, seed as u64, BranchPerturbation::default()).unwrap();
        let w: f64 = m.components().iter().map(|c| c.weight).sum();
        prop_assert!((w - 1.0).abs() < 1e-12);
        let noisy = m.at_noise(noise).unwrap();
        let ld = noisy.log_density(q);
        prop_assert!(ld.is_finite());
        prop_assert!((noisy.density(q).ln() - ld).abs() < 1e-9 * ld.abs().max(1.0) || noisy.density(q) == 0.0);
        prop_assert_eq!(m.sample(20, 3), m.sample(20, 3));
        // round trip through the text format keeps every parameter
        let back = MixtureModel::from_text(&m.to_text(), Path::new("mem")).unwrap();
        prop_assert_eq!(back.to_text(), m.to_text());
    }
}

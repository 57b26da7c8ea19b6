use fairdyn::features::{outcome_rates, FeatureModel, GaussianScoreModel};
use fairdyn::metrics::{disparity, loss, update_ledger, DisparityKind, LossSpec, RegretLedger};
use fairdyn::types::{clamp_action, GroupSpec};
use fairdyn::ucbfair::{dual_update, q_estimate, softmax_policy, value_estimate};
use fairdyn::voronoi::VoronoiActionSpace;
use proptest::prelude::*;

fn groups(f1: f64) -> GroupSpec {
    GroupSpec::new(vec![f1, 1.0 - f1]).unwrap()
}

proptest! {
    #[test]
    fn valid_loss_weights_never_need_clipping(
        f1 in 0.05f64..0.95, q in prop::array::uniform2(0.0f64..=1.0), a in prop::array::uniform2(0.0f64..=1.0),
        alpha in 0.0f64..=1.0, share in 0.0f64..=1.0,
    ) {
        let spec = LossSpec { alpha, beta: (1.0 - alpha) * share, printed_sign: false };
        prop_assume!(spec.validate().is_ok());
        let r = outcome_rates(&FeatureModel::gaussian(), &groups(f1), &q, &a).unwrap();
        let raw = 1.0 - spec.alpha * r.tp() - spec.beta * r.tn();
        prop_assert!((0.0..=1.0).contains(&raw));
        prop_assert_eq!(loss(&spec, &r), raw);
        let zero_one = 1.0 - r.tp() - r.tn();
        prop_assert!((-1e-12..=1.0).contains(&zero_one));
    }

    #[test]
    fn disparities_lie_in_unit_interval(
        f1 in 0.05f64..0.95, q in prop::array::uniform2(0.0f64..=1.0), a in prop::array::uniform2(0.0f64..=1.0),
    ) {
        let r = outcome_rates(&FeatureModel::gaussian(), &groups(f1), &q, &a).unwrap();
        for kind in DisparityKind::ALL {
            let d = disparity(kind, &r).unwrap();
            prop_assert!((0.0..=1.0).contains(&d), "{kind:?} = {d}");
        }
    }

    #[test]
    fn qualification_parity_ignores_the_action(
        q in prop::array::uniform2(0.0f64..=1.0),
        a in prop::array::uniform2(0.0f64..=1.0), b in prop::array::uniform2(0.0f64..=1.0),
    ) {
        let g = groups(0.5);
        let ra = outcome_rates(&FeatureModel::gaussian(), &g, &q, &a).unwrap();
        let rb = outcome_rates(&FeatureModel::gaussian(), &g, &q, &b).unwrap();
        prop_assert_eq!(disparity(DisparityKind::QR, &ra).unwrap(), disparity(DisparityKind::QR, &rb).unwrap());
    }

    #[test]
    fn gaussian_posterior_increases_in_score(q in 0.01f64..0.99, x in -6.0f64..6.0) {
        let m = GaussianScoreModel::default();
        prop_assert!(m.posterior(q, x + 1e-3) > m.posterior(q, x));
    }

    #[test]
    fn ledger_distortion_is_nonnegative_and_monotone_under_shortfall(
        values in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 1..40),
        level in 0.0f64..5.0,
        shortfall_only in any::<bool>(),
    ) {
        let mut ledger = RegretLedger::new(level);
        let (mut last_regret, mut last_dist) = (0.0, 0.0);
        for (vr, vg) in values {
            // Oracle at or above V_r and, optionally, V_g at or below the level.
            let vg = if shortfall_only { vg.min(level) } else { vg };
            update_ledger(&mut ledger, vr, vg, Some(vr + 0.1));
            prop_assert!(ledger.distortion() >= 0.0);
            prop_assert!(ledger.regret() >= last_regret);
            if shortfall_only {
                prop_assert!(ledger.distortion() >= last_dist);
            }
            last_regret = ledger.regret();
            last_dist = ledger.distortion();
        }
    }

    #[test]
    fn softmax_is_a_distribution(
        q in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..30),
        alpha in 0.0f64..1e6, nu in 0.0f64..10.0,
    ) {
        let (qr, qg): (Vec<f64>, Vec<f64>) = q.into_iter().unzip();
        let p = softmax_policy(alpha, &qr, &qg, nu);
        prop_assert!(p.iter().all(|v| *v >= 0.0 && v.is_finite()));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(p, softmax_policy(alpha, &qr, &qg, nu));
    }

    #[test]
    fn estimates_respect_the_horizon(
        w in prop::collection::vec(-10.0f64..10.0, 3), phi in prop::collection::vec(-2.0f64..2.0, 3),
        beta in 0.0f64..50.0, horizon in 1usize..200,
    ) {
        let h = horizon as f64;
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        prop_assert!(q_estimate(&w, &eye, beta, h, &phi) <= h);
        let v = value_estimate(&[0.5, 0.5], &[q_estimate(&w, &eye, beta, h, &phi), -3.0 * h], h);
        prop_assert!((0.0..=h).contains(&v));
    }

    #[test]
    fn dual_variable_stays_clipped(nu in 0.0f64..=10.0, eta in 0.0f64..5.0, level in 0.0f64..100.0, vg in 0.0f64..100.0) {
        let next = dual_update(nu, eta, level, vg, 10.0);
        prop_assert!((0.0..=10.0).contains(&next));
    }

    #[test]
    fn clamped_actions_lie_in_the_box(raw in prop::collection::vec(-5.0f64..5.0, 2)) {
        let a = clamp_action(&raw, &groups(0.5)).unwrap();
        prop_assert!(a.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn voronoi_loci_are_nearest_and_measures_sum_to_one(
        dims in 1usize..4, per_axis in 1usize..6, probe in prop::collection::vec(0.0f64..=1.0, 3),
    ) {
        let space = VoronoiActionSpace::lattice(dims, per_axis).unwrap();
        prop_assert!((space.region_measures().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let a = &probe[..dims];
        let dist = |l: &[f64]| l.iter().zip(a).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let chosen = dist(space.locus(space.locus_of(a)));
        prop_assert!(chosen <= space.cover_radius() + 1e-12);
        prop_assert!(space.loci().iter().all(|l| chosen <= dist(l) + 1e-12));
    }
}

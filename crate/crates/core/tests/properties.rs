use channel_pac::bound::{compose_bound, kl_diag_gaussian, BoundConfig};
use channel_pac::channel::{self, ChannelSample, ChannelSpec};
use channel_pac::gradcheck::check_network;
use channel_pac::nn::{NetworkSpec, ParamVector};
use channel_pac::rng::Rng;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flatten_round_trip(dims in prop::collection::vec(1usize..7, 2..5), split_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let split = 1 + ((dims.len() as f64 - 1.0) * split_frac) as usize;
        let spec = NetworkSpec::mlp(&dims, split).unwrap();
        let p = ParamVector::init(&spec, 0.5, &mut Rng::new(seed, 0));
        let layers = p.unflatten(&spec);
        prop_assert_eq!(ParamVector::flatten(&spec, &layers).unwrap(), p);
    }

    #[test]
    fn bound_total_is_its_resum(
        n in 1usize..1_000_000,
        lipschitz in 0.0f64..10.0,
        kl in 0.0f64..1e6,
        emp in 0.0f64..1.0,
        gamma in 0.01f64..100.0,
        blocks in 1usize..40,
    ) {
        let channel = ChannelSpec::rayleigh_zf(2 * blocks, gamma).unwrap();
        let r = compose_bound(&BoundConfig::with_defaults(n, lipschitz, channel), emp, kl, channel.d).unwrap();
        prop_assert_eq!(r.total.to_bits(), r.resum().to_bits());
        prop_assert!((r.gap_bound() - (r.total - r.empirical_risk)).abs() <= 1e-9 * r.total.abs().max(1.0));
    }

    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-3.0f64..3.0, 1..20), s in 0.01f64..3.0, sp in 0.01f64..3.0) {
        let sigma = vec![s; mu.len()];
        prop_assert!(kl_diag_gaussian(&mu, &sigma, sp).unwrap() >= 0.0);
    }

    #[test]
    fn erasures_zero_exactly_the_masked_coordinates(p in 0.0f64..1.0, seed in any::<u64>()) {
        let spec = ChannelSpec::bec(12, p).unwrap();
        let s = channel::sample(&spec, &mut Rng::new(seed, 1)).unwrap();
        let mut f: Vec<f64> = (1..=12).map(f64::from).collect();
        s.apply_in_place(&mut f).unwrap();
        if let ChannelSample::Bec { mask } = &s {
            for (i, (&m, &v)) in mask.iter().zip(&f).enumerate() {
                prop_assert_eq!(v, if m == 0.0 { 0.0 } else { (i + 1) as f64 });
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn backprop_matches_finite_differences(seed in any::<u64>()) {
        let r = check_network(seed).unwrap();
        prop_assert!(r.passed(), "{:?}", r);
    }
}

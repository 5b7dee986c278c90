use proptest::prelude::*;
use thinlayer_core::kinetics::{eval_h, KineticsSpec};
use thinlayer_core::macro_flow::BulkGrid;
use thinlayer_core::macro_transport::{
    coupled_step, total_mass, GammaRegime, MembraneSolid, TransportModel, TransportParams,
};

fn kinetics() -> impl Strategy<Value = KineticsSpec> {
    prop_oneof![
        (0.0..5.0f64).prop_map(|k| KineticsSpec::Linear { k }),
        (0.0..5.0f64, 0.0..5.0f64).prop_map(|(k1, k2)| KineticsSpec::Saturating { k1, k2 }),
        Just(KineticsSpec::Zero),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kinetics_respect_their_lipschitz_constant(
        spec in kinetics(),
        a in -50.0..50.0f64, b in -50.0..50.0f64,
        da in -5.0..5.0f64, db in -5.0..5.0f64,
    ) {
        let lhs = (eval_h(&spec, a + da, b + db) - eval_h(&spec, a, b)).abs();
        let rhs = spec.lipschitz_constant() * (da.abs() + db.abs());
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn coupled_steps_cancel_exchange_exactly(
        spec in kinetics(),
        regime in prop_oneof![Just(GammaRegime::MinusOne), Just(GammaRegime::Intermediate)],
        dt in 1e-3..0.2f64,
        zs in 0.05..1.0f64,
        area in 0.0..3.0f64,
        c_f in proptest::collection::vec(0.0..2.0f64, 3 * 3 * 4),
        c_s in proptest::collection::vec(0.0..2.0f64, 3 * 3),
    ) {
        let grid = BulkGrid::new(3, 2, 1.0, 0.5).unwrap();
        let params = TransportParams { regime, d_f: 0.3, d_s: 1.0, kinetics: spec, dt };
        let solid = MembraneSolid::from_measures(zs, area).unwrap().with_d_star([[0.1, 0.0], [0.0, 0.2]]);
        let model = TransportModel::new(grid, params, solid).unwrap();
        let s0 = model.state(c_f, c_s).unwrap();
        let (s1, ledger) = coupled_step(&model, &s0, None).unwrap();
        prop_assert_eq!(ledger.imbalance(), 0.0);
        let (m0, m1) = (total_mass(&model, &s0).total(), total_mass(&model, &s1).total());
        prop_assert!((m1 - m0).abs() <= 1e-12 * (1.0 + m0.abs()));
    }
}

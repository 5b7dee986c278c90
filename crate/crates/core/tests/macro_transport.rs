use std::f64::consts::PI;

use thinlayer_core::geometry::{build_cell, MicrostructureSpec, Primitive};
use thinlayer_core::kinetics::KineticsSpec;
use thinlayer_core::macro_flow::{BulkGrid, FlowState};
use thinlayer_core::macro_transport::{
    coupled_step, exchange_step, step_fluid, step_solid_gamma1, step_solid_gamma_minus1,
    step_solid_ode, total_mass, GammaRegime, MembraneSolid, TransportError, TransportModel,
    TransportParams, TransportState,
};

fn params(regime: GammaRegime, kinetics: KineticsSpec, dt: f64) -> TransportParams {
    TransportParams {
        regime,
        d_f: 0.7,
        d_s: 1.3,
        kinetics,
        dt,
    }
}

fn sphere_solid(n: usize) -> MembraneSolid {
    let cell = build_cell(&MicrostructureSpec {
        resolution: n,
        solids: vec![Primitive::Sphere {
            center: [0.5, 0.5, 0.0],
            radius: 0.3,
        }],
        clearance_check: true,
    })
    .unwrap();
    MembraneSolid::from_cell(&cell).unwrap()
}

fn model(regime: GammaRegime, kinetics: KineticsSpec, dt: f64, grid: BulkGrid) -> TransportModel {
    let solid = sphere_solid(6).with_d_star([[0.2, 0.03], [0.03, 0.15]]);
    TransportModel::new(grid, params(regime, kinetics, dt), solid).unwrap()
}

const REGIMES: [GammaRegime; 3] = [
    GammaRegime::MinusOne,
    GammaRegime::Intermediate,
    GammaRegime::One,
];

fn blob(model: &TransportModel) -> TransportState {
    let g = model.grid();
    let mut s = model.uniform_state(0.0, 0.0);
    s.c_f[g.cell(1, 2, g.n_z)] = 3.0;
    s.c_f[g.cell(2, 2, g.n_z - 1)] = 1.0;
    for (i, c) in s.c_s.iter_mut().enumerate() {
        *c = 0.5 + 0.25 * ((i % 7) as f64);
    }
    s
}

#[test]
fn zero_kinetics_uniform_data_is_stationary() {
    let grid = BulkGrid::new(4, 3, 1.0, 0.5).unwrap();
    for regime in REGIMES {
        let m = model(regime, KineticsSpec::Zero, 0.01, grid);
        let s0 = m.uniform_state(0.4, 1.7);
        let (s1, ledger) = coupled_step(&m, &s0, None).unwrap();
        assert!(s1.c_f.iter().all(|x| (x - 0.4).abs() < 1e-14));
        assert!(s1.c_s.iter().all(|x| (x - 1.7).abs() < 1e-14));
        assert_eq!(ledger.imbalance(), 0.0);
    }
}

#[test]
fn zero_kinetics_conserves_fluid_mass() {
    let grid = BulkGrid::new(5, 3, 1.0, 0.5).unwrap();
    let m = model(GammaRegime::Intermediate, KineticsSpec::Zero, 0.01, grid);
    let mut s = blob(&m);
    let m0 = total_mass(&m, &s).fluid;
    for _ in 0..20 {
        s = step_fluid(&m, &s, None).unwrap().0;
        assert!((total_mass(&m, &s).fluid - m0).abs() < 1e-12 * m0);
    }
}

#[test]
fn exchange_touches_only_interface_layers() {
    let grid = BulkGrid::new(3, 3, 1.0, 0.6).unwrap();
    let (k, a, b, dt) = (0.8, 1.0, 0.25, 1e-3);
    let m = model(
        GammaRegime::Intermediate,
        KineticsSpec::Linear { k },
        dt,
        grid,
    );
    let s0 = m.uniform_state(a, b);
    let (s1, ledger) = exchange_step(&m, &s0).unwrap();
    assert_eq!(ledger.imbalance(), 0.0);
    let gamma = m.solid().exchange_area;
    let zs = m.solid().zs_measure;
    // Midpoint rule on the difference d = c_f − c_s.
    let r = dt * k * gamma * (1.0 / zs + 0.5 / grid.hz());
    let e = dt * k * gamma * (a - b) / (1.0 + 0.5 * r);
    for kk in 0..grid.layers() {
        let expected = if kk + 1 == grid.n_z || kk == grid.n_z {
            a - 0.5 * e / grid.hz()
        } else {
            a
        };
        for j in 0..3 {
            for i in 0..3 {
                assert!((s1.c_f[grid.cell(i, j, kk)] - expected).abs() < 1e-14);
            }
        }
    }
    assert!(s1.c_s.iter().all(|x| (x - (b + e / zs)).abs() < 1e-14));

    // Explicit fluid step: the interface sink is −|Γ| k (a − b) dt per unit area.
    let (s2, ledger) = step_fluid(&m, &s0, None).unwrap();
    let area = grid.sigma_extent * grid.sigma_extent;
    let expected = -gamma * k * (a - b) * dt * area;
    assert!((ledger.fluid_change - expected).abs() < 1e-15);
    let change = total_mass(&m, &s2).fluid - total_mass(&m, &s0).fluid;
    assert!((change - expected).abs() < 1e-13);
}

#[test]
fn ode_step_is_implicit_euler() {
    let grid = BulkGrid::new(2, 1, 1.0, 1.0).unwrap();
    let (k, a, b, dt) = (2.0, 1.0, 0.0, 0.05);
    let m = model(
        GammaRegime::Intermediate,
        KineticsSpec::Linear { k },
        dt,
        grid,
    );
    let s0 = m.uniform_state(a, b);
    let s1 = step_solid_ode(&m, &s0).unwrap();
    let rate = k * m.solid().exchange_area / m.solid().zs_measure;
    let expected = (b + dt * rate * a) / (1.0 + dt * rate);
    assert!(s1.c_s.iter().all(|x| (x - expected).abs() < 1e-15));
    assert_eq!(s1.c_f, s0.c_f);
    assert!(matches!(
        step_solid_gamma1(&m, &s0),
        Err(TransportError::RegimeMismatch { .. })
    ));
}

#[test]
fn solid_source_ledgers_telescope() {
    let grid = BulkGrid::new(4, 2, 1.0, 0.5).unwrap();
    let kin = KineticsSpec::Saturating { k1: 1.5, k2: 0.5 };
    for regime in [GammaRegime::MinusOne, GammaRegime::One] {
        let m = model(regime, kin, 0.02, grid);
        let s0 = blob(&m);
        let s1 = if regime == GammaRegime::One {
            step_solid_gamma1(&m, &s0).unwrap()
        } else {
            step_solid_gamma_minus1(&m, &s0).unwrap()
        };
        // Mass gain equals the explicit fluid sink for the same state.
        let (_, fluid) = step_fluid(&m, &s0, None).unwrap();
        let gain = total_mass(&m, &s1).solid - total_mass(&m, &s0).solid;
        assert!((gain + fluid.fluid_change).abs() < 1e-13, "{regime:?}");
    }
}

#[test]
fn coupled_runs_conserve_and_stay_positive() {
    let grid = BulkGrid::new(4, 3, 1.0, 0.5).unwrap();
    for regime in REGIMES {
        let m = model(regime, KineticsSpec::Linear { k: 3.0 }, 0.01, grid);
        let mut s = blob(&m);
        let m0 = total_mass(&m, &s).total();
        for _ in 0..30 {
            let (next, ledger) = coupled_step(&m, &s, None).unwrap();
            assert_eq!(ledger.imbalance(), 0.0);
            s = next;
            assert!(s.c_f.iter().chain(&s.c_s).all(|x| *x >= -1e-12));
        }
        let drift = (total_mass(&m, &s).total() - m0).abs() / m0;
        assert!(drift < 1e-12, "{regime:?}: {drift}");
    }
}

#[test]
fn zero_surface_tensor_matches_ode_regime_bitwise() {
    let grid = BulkGrid::new(4, 2, 1.0, 0.5).unwrap();
    let kin = KineticsSpec::Saturating { k1: 2.0, k2: 1.0 };
    let p = |r| params(r, kin, 0.01);
    let a = TransportModel::new(
        grid,
        p(GammaRegime::MinusOne),
        MembraneSolid::from_measures(0.3, 1.1)
            .unwrap()
            .with_d_star([[0.0; 2]; 2]),
    )
    .unwrap();
    let b = TransportModel::new(
        grid,
        p(GammaRegime::Intermediate),
        MembraneSolid::from_measures(0.3, 1.1).unwrap(),
    )
    .unwrap();
    let mut sa = blob(&a);
    let mut sb = sa.clone();
    for _ in 0..10 {
        sa = coupled_step(&a, &sa, None).unwrap().0;
        sb = coupled_step(&b, &sb, None).unwrap().0;
        assert_eq!(sa, sb);
    }
}

#[test]
fn lateral_translation_commutes_with_stepping() {
    let grid = BulkGrid::new(4, 2, 1.0, 0.5).unwrap();
    let m = model(
        GammaRegime::MinusOne,
        KineticsSpec::Linear { k: 1.0 },
        0.01,
        grid,
    );
    let s0 = blob(&m);
    let n = grid.n_sigma;
    let shift = |s: &TransportState| {
        let mut out = s.clone();
        for k in 0..grid.layers() {
            for j in 0..n {
                for i in 0..n {
                    out.c_f[grid.cell((i + 1) % n, j, k)] = s.c_f[grid.cell(i, j, k)];
                }
            }
        }
        for j in 0..n {
            for i in 0..n {
                out.c_s[(i + 1) % n + n * j] = s.c_s[i + n * j];
            }
        }
        out
    };
    let mut a = s0.clone();
    let mut b = shift(&s0);
    for _ in 0..5 {
        a = coupled_step(&m, &a, None).unwrap().0;
        b = coupled_step(&m, &b, None).unwrap().0;
    }
    let a = shift(&a);
    for (x, y) in a.c_f.iter().chain(&a.c_s).zip(b.c_f.iter().chain(&b.c_s)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn surface_diffusion_decays_like_heat_equation() {
    let n = 32;
    let grid = BulkGrid::new(n, 1, 1.0, 0.5).unwrap();
    let (d11, zs, dt, steps) = (0.3, 0.5, 1e-4, 100);
    let solid = MembraneSolid::from_measures(zs, 1.0)
        .unwrap()
        .with_d_star([[d11, 0.0], [0.0, 0.1]]);
    let m = TransportModel::new(
        grid,
        params(GammaRegime::MinusOne, KineticsSpec::Zero, dt),
        solid,
    )
    .unwrap();
    let mut s = m.uniform_state(0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            s.c_s[i + n * j] = (2.0 * PI * (i as f64 + 0.5) / n as f64).sin();
        }
    }
    let a0 = s.c_s[n / 4];
    for _ in 0..steps {
        s = step_solid_gamma_minus1(&m, &s).unwrap();
    }
    let observed = -(s.c_s[n / 4] / a0).ln() / (dt * steps as f64);
    let exact = d11 / zs * (2.0 * PI).powi(2);
    assert!(
        (observed / exact - 1.0).abs() < 0.02,
        "{observed} vs {exact}"
    );
}

#[test]
fn advection_respects_cfl_and_conserves() {
    let grid = BulkGrid::new(4, 2, 1.0, 0.5).unwrap();
    let m = model(GammaRegime::Intermediate, KineticsSpec::Zero, 0.05, grid);
    let mut v = FlowState::zero(&grid);
    for k in 0..grid.layers() {
        for j in 0..4 {
            for i in 0..4 {
                v.velocity[grid.u_slot(i, j, k)] = 2.0;
            }
        }
    }
    let s0 = blob(&m);
    let (s1, _) = step_fluid(&m, &s0, Some(&v)).unwrap();
    let (m0, m1) = (total_mass(&m, &s0).fluid, total_mass(&m, &s1).fluid);
    assert!((m0 - m1).abs() < 1e-13 * m0);
    for k in 0..grid.layers() {
        for j in 0..4 {
            for i in 0..4 {
                v.velocity[grid.u_slot(i, j, k)] = 20.0;
            }
        }
    }
    assert!(matches!(
        step_fluid(&m, &s0, Some(&v)),
        Err(TransportError::Cfl { .. })
    ));
}

#[test]
fn saturating_run_converges_first_order_in_dt() {
    let grid = BulkGrid::new(3, 2, 1.0, 0.5).unwrap();
    let kin = KineticsSpec::Saturating { k1: 3.0, k2: 1.0 };
    let run = |dt: f64| {
        let m = model(GammaRegime::Intermediate, kin, dt, grid);
        let mut s = blob(&m);
        let steps = (0.2 / dt).round() as usize;
        for _ in 0..steps {
            s = coupled_step(&m, &s, None).unwrap().0;
        }
        s
    };
    let (a, b, c) = (run(0.02), run(0.01), run(0.005));
    let diff = |x: &TransportState, y: &TransportState| {
        x.c_f
            .iter()
            .chain(&x.c_s)
            .zip(y.c_f.iter().chain(&y.c_s))
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
    };
    let order = (diff(&a, &b) / diff(&b, &c)).log2();
    assert!(order >= 0.9, "{order}");
}

#[test]
fn regime_requirements_are_checked() {
    let grid = BulkGrid::new(2, 1, 1.0, 1.0).unwrap();
    let k = KineticsSpec::Zero;
    let plain = || MembraneSolid::from_measures(0.5, 1.0).unwrap();
    assert!(matches!(
        TransportModel::new(grid, params(GammaRegime::One, k, 0.1), plain()),
        Err(TransportError::MissingCell(_))
    ));
    assert!(matches!(
        TransportModel::new(grid, params(GammaRegime::MinusOne, k, 0.1), plain()),
        Err(TransportError::MissingDiffusionTensor)
    ));
    assert!(
        TransportModel::new(grid, params(GammaRegime::Intermediate, k, -1.0), plain()).is_err()
    );
    assert!(MembraneSolid::from_measures(0.0, 1.0).is_err());
}

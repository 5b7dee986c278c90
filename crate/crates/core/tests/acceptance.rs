//! Acceptance suite: one test per criterion, each writing a single
//! `PASS`/`FAIL` line to stdout (bypassing the harness capture) before asserting.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Matrix2, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thinlayer_core::cell_diffusion::effective_diffusion;
use thinlayer_core::cell_flow::{
    assemble_effective_tensors, coercivity_margin, solve_all_modes, EffectiveFlowTensors, FlowGram,
    Side,
};
use thinlayer_core::geometry::{build_cell, Axis, MicrostructureSpec, Primitive, ReferenceCell};
use thinlayer_core::kinetics::KineticsSpec;
use thinlayer_core::macro_flow::{
    assemble_flow_system, interface_traces, step_flow, BulkGrid, FlowState, ForcingSchedule,
    InterfaceLaw,
};
use thinlayer_core::macro_transport::{
    coupled_step, total_mass, GammaRegime, MembraneSolid, TransportModel, TransportParams,
    TransportState,
};

const CELL_TOL: f64 = 1e-10;
/// The regression value is recorded at a tolerance well below its reproducibility requirement.
const REGRESSION_CELL_TOL: f64 = 1e-12;
const FLOW_TOL: f64 = 1e-10;

// Pinned tolerances.
const EMPTY_CELL_REL: f64 = 0.02;
const EMPTY_K33_ABS: f64 = 1e-6;
const EMPTY_Q_ROW_ABS: f64 = 1e-8;
const CYLINDER_MARGIN_REL: f64 = 1e-10;
const SLAB_D_STAR_ABS: f64 = 1e-10;
const MASS_DRIFT_REL: f64 = 1e-10;
const ODE_ABS: f64 = 1e-6;
const FOURIER_REL: f64 = 0.02;
const UNIFORM_MEAN_ABS: f64 = 1e-3;
const MIN_ORDER: f64 = 1.0;
/// Errors at or below this level are solver round-off; an order is not defined there.
const ROUND_OFF_FLOOR: f64 = 1e-9;

/// Coercivity margin of the 16³ cylinder cell, recorded from this implementation at `REGRESSION_CELL_TOL`.
const CYLINDER_MARGIN_N16: f64 = 1.086_585_408_412_854_3;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{verdict} criterion {id:>2} {name}: {detail}").unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn empty_cell(n: usize) -> ReferenceCell {
    build_cell(&MicrostructureSpec {
        resolution: n,
        solids: vec![],
        clearance_check: false,
    })
    .unwrap()
}

fn cylinder_cell(n: usize) -> ReferenceCell {
    build_cell(&MicrostructureSpec {
        resolution: n,
        solids: vec![Primitive::Cylinder {
            axis: Axis::Z,
            center: [0.5, 0.5, 0.0],
            radius: 0.3,
            length: 1.2,
        }],
        clearance_check: true,
    })
    .unwrap()
}

fn sphere_cell(n: usize) -> ReferenceCell {
    build_cell(&MicrostructureSpec {
        resolution: n,
        solids: vec![Primitive::Sphere {
            center: [0.5, 0.5, 0.0],
            radius: 0.3,
        }],
        clearance_check: true,
    })
    .unwrap()
}

fn tensors_of(cell: &ReferenceCell) -> EffectiveFlowTensors {
    tensors_at(cell, CELL_TOL)
}

fn tensors_at(cell: &ReferenceCell, tol: f64) -> EffectiveFlowTensors {
    let sols = solve_all_modes(cell, tol).unwrap();
    assemble_effective_tensors(&sols, cell).unwrap()
}

fn empty_tensors(n: usize) -> &'static EffectiveFlowTensors {
    static T8: OnceLock<EffectiveFlowTensors> = OnceLock::new();
    static T16: OnceLock<EffectiveFlowTensors> = OnceLock::new();
    static T32: OnceLock<EffectiveFlowTensors> = OnceLock::new();
    let slot = match n {
        8 => &T8,
        16 => &T16,
        32 => &T32,
        _ => unreachable!(),
    };
    slot.get_or_init(|| tensors_of(&empty_cell(n)))
}

fn cylinder_tensors() -> &'static EffectiveFlowTensors {
    static T: OnceLock<EffectiveFlowTensors> = OnceLock::new();
    T.get_or_init(|| tensors_at(&cylinder_cell(16), REGRESSION_CELL_TOL))
}

fn rel(x: f64, target: f64) -> f64 {
    (x - target).abs() / target.abs()
}

#[test]
fn criterion_01_obstacle_free_cell_tensors() {
    // Closed forms: the tangential solutions are linear shear e₁(1 ± z)/2, so
    // D(q):D(q) = 1/8 on a cell of volume 2 and K^±₁₁ = 1/4, M₁₁ = −1/4; the
    // normal solution is plug flow, giving K^±₃₃ = 0 and zero third rows of Q^±.
    let start = Instant::now();
    let t = empty_tensors(32);
    let secs = start.elapsed().as_secs_f64();
    let k33 = t.k_plus[2][2].abs().max(t.k_minus[2][2].abs());
    let q_row = (0..3)
        .map(|c| t.q_plus[2][c].abs().max(t.q_minus[2][c].abs()))
        .fold(0.0, f64::max);
    let errs = [
        rel(t.k_plus[0][0], 0.25),
        rel(t.k_minus[0][0], 0.25),
        rel(t.m[0][0], -0.25),
    ];
    let pass = errs.iter().all(|&e| e <= EMPTY_CELL_REL)
        && k33 <= EMPTY_K33_ABS
        && q_row <= EMPTY_Q_ROW_ABS;
    report(
        1,
        "obstacle-free cell tensors (N=32)",
        pass,
        &format!(
            "K+11={:.12} K-11={:.12} M11={:.12} |K33|={k33:.1e} |Q row 3|={q_row:.1e} solve time {secs:.1}s",
            t.k_plus[0][0], t.k_minus[0][0], t.m[0][0]
        ),
    );
}

fn gram_is_transpose_symmetric(g: &FlowGram) -> bool {
    let mut ok = true;
    for a in Side::BOTH {
        for b in Side::BOTH {
            for i in 1..=3 {
                for j in 1..=3 {
                    if let (Some(x), Some(y)) = (g.get(a, b, i, j), g.get(b, a, j, i)) {
                        ok &= x.to_bits() == y.to_bits();
                    }
                }
            }
        }
    }
    ok
}

fn structure_holds(t: &EffectiveFlowTensors) -> bool {
    let mut ok = gram_is_transpose_symmetric(&t.gram);
    for i in 0..3 {
        for j in 0..3 {
            ok &= t.k_plus[i][j].to_bits() == t.k_plus[j][i].to_bits();
            ok &= t.k_minus[i][j].to_bits() == t.k_minus[j][i].to_bits();
            ok &= t.m[i][j].to_bits() == t.m[j][i].to_bits();
        }
        ok &= t.m[2][i] == 0.0 && t.m[i][2] == 0.0;
    }
    ok
}

#[test]
fn criterion_02_tensor_structure() {
    let off_center = build_cell(&MicrostructureSpec {
        resolution: 8,
        solids: vec![
            Primitive::Sphere {
                center: [0.3, 0.6, 0.2],
                radius: 0.25,
            },
            Primitive::Box {
                min: [0.55, 0.1, -0.5],
                max: [0.9, 0.3, 0.1],
            },
        ],
        clearance_check: true,
    })
    .unwrap();
    let asym = tensors_of(&off_center);
    let cases = [
        ("empty N=8", empty_tensors(8)),
        ("cylinder N=16", cylinder_tensors()),
        ("sphere+box N=8", &asym),
    ];
    let failed: Vec<&str> = cases
        .iter()
        .filter(|(_, t)| !structure_holds(t))
        .map(|(name, _)| *name)
        .collect();
    report(
        2,
        "tensor structure",
        failed.is_empty(),
        &format!(
            "G transpose symmetry, K±/M symmetry and zero third row/column of M bit-exact on {} cells; failing: {failed:?}",
            cases.len()
        ),
    );
}

#[test]
fn criterion_03_coercivity_cylinder() {
    let t = cylinder_tensors();
    let margin = coercivity_margin(t);
    let again = coercivity_margin(&tensors_at(&cylinder_cell(16), REGRESSION_CELL_TOL));
    let drift = rel(margin, CYLINDER_MARGIN_N16);
    let pass = margin > 0.0 && drift <= CYLINDER_MARGIN_REL && again.to_bits() == margin.to_bits();
    report(
        3,
        "coercivity of the cylinder cell (N=16)",
        pass,
        &format!("margin {margin:.17} (recorded {CYLINDER_MARGIN_N16:.17}, rel. drift {drift:.1e}, rerun identical: {})", again.to_bits() == margin.to_bits()),
    );
}

fn sym2(d: [[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(
        d[0][0],
        0.5 * (d[0][1] + d[1][0]),
        0.5 * (d[0][1] + d[1][0]),
        d[1][1],
    )
}

#[test]
fn criterion_04_homogenized_diffusion() {
    let d_s = 1.7;
    let slab = build_cell(&MicrostructureSpec {
        resolution: 8,
        solids: vec![Primitive::Box {
            min: [0.0, 0.0, -0.25],
            max: [1.0, 1.0, 0.25],
        }],
        clearance_check: true,
    })
    .unwrap();
    let ts = effective_diffusion(&slab, d_s, CELL_TOL).unwrap();
    let bound = ts.zs_measure * d_s;
    let slab_err = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| {
            let expected = if i == j { bound } else { 0.0 };
            (ts.d_star[i][j] - expected).abs()
        })
        .fold(0.0, f64::max);

    let geometries = [
        sphere_cell(12),
        cylinder_cell(12),
        build_cell(&MicrostructureSpec {
            resolution: 12,
            solids: vec![
                Primitive::Cylinder {
                    axis: Axis::X,
                    center: [0.5, 0.3, 0.1],
                    radius: 0.2,
                    length: 1.0,
                },
                Primitive::Sphere {
                    center: [0.4, 0.7, -0.2],
                    radius: 0.35,
                },
            ],
            clearance_check: true,
        })
        .unwrap(),
    ];
    let mut worst_low = f64::INFINITY;
    let mut worst_high = f64::INFINITY;
    for cell in &geometries {
        let t = effective_diffusion(cell, d_s, CELL_TOL).unwrap();
        let d = sym2(t.d_star);
        let low = SymmetricEigen::new(d).eigenvalues.min();
        let high = SymmetricEigen::new(Matrix2::identity() * (t.zs_measure * d_s) - d)
            .eigenvalues
            .min();
        let scale = t.zs_measure * d_s;
        worst_low = worst_low.min(low / scale);
        worst_high = worst_high.min(high / scale);
    }
    // Eigenvalue bounds allow relative round-off in the Gram sums.
    let pass = slab_err <= SLAB_D_STAR_ABS && worst_low >= -1e-12 && worst_high >= -1e-12;
    report(
        4,
        "homogenized diffusion",
        pass,
        &format!(
            "slab |D* - |Z_s|D_s I| = {slab_err:.1e}; over {} geometries min eig(D*)/(|Z_s|D_s) = {worst_low:.4}, min eig(|Z_s|D_s I - D*)/(|Z_s|D_s) = {worst_high:.4}",
            geometries.len()
        ),
    );
}

fn random_divergence_free(grid: &BulkGrid, seed: u64, impermeable: bool) -> FlowState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ls = grid.layer_size();
    let nl = grid.layers();
    let mut gen = |len: usize| {
        (0..len)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let mut px = gen(ls * (nl + 1));
    let mut py = gen(ls * (nl + 1));
    let pz = gen(ls * nl);
    if impermeable {
        for c in 0..ls {
            px[grid.n_z * ls + c] = 0.0;
            py[grid.n_z * ls + c] = 0.0;
        }
    }
    FlowState::from_edge_potential(grid, &px, &py, &pz).unwrap()
}

fn synthetic_law(kp: [[f64; 3]; 3], km: [[f64; 3]; 3], m: [[f64; 3]; 3]) -> InterfaceLaw {
    let mut q = [[0.0; 3]; 3];
    q[2][2] = -1.0;
    InterfaceLaw::coupled(EffectiveFlowTensors {
        gram: FlowGram {
            tangential: [[0.0; 4]; 4],
            mixed: [0.0; 4],
            mixed_transposed: [0.0; 4],
            normal: 0.0,
        },
        k_plus: kp,
        k_minus: km,
        m,
        m_asymmetry: 0.0,
        a_plus: [[0.0; 3]; 3],
        a_minus: [[0.0; 3]; 3],
        q_plus: q,
        q_minus: q,
        zf_measure: 1.0,
        resolution: 0,
    })
    .unwrap()
}

fn test_laws() -> Vec<(&'static str, InterfaceLaw)> {
    vec![
        (
            "cylinder",
            InterfaceLaw::coupled(cylinder_tensors().clone()).unwrap(),
        ),
        (
            "anisotropic",
            synthetic_law(
                [[0.6, 0.05, 0.02], [0.05, 0.5, -0.01], [0.02, -0.01, 0.4]],
                [[0.55, 0.0, 0.0], [0.0, 0.45, 0.03], [0.0, 0.03, 0.35]],
                [[-0.2, 0.01, 0.0], [0.01, -0.15, 0.0], [0.0, 0.0, 0.0]],
            ),
        ),
        ("impermeable", InterfaceLaw::impermeable()),
    ]
}

#[test]
fn criterion_05_flow_energy_decay() {
    let grid = BulkGrid::new(16, 8, 1.0, 0.5).unwrap();
    let mut worst_ratio: f64 = 0.0;
    let mut violations = 0;
    let laws = test_laws();
    for (seed, (_, law)) in laws.iter().enumerate() {
        let sys = assemble_flow_system(&grid, law, 0.01, ForcingSchedule::default()).unwrap();
        let impermeable = law.tensors().is_none();
        let mut s = random_divergence_free(&grid, 100 + seed as u64, impermeable);
        let mut e = s.energy(&grid);
        for _ in 0..50 {
            s = step_flow(&s, &sys, FLOW_TOL).unwrap();
            let e1 = s.energy(&grid);
            if e1 > e {
                violations += 1;
            }
            worst_ratio = worst_ratio.max(e1 / e);
            e = e1;
        }
    }
    report(
        5,
        "flow energy decay",
        violations == 0,
        &format!(
            "{} laws x 50 steps on 16x16x8 boxes, {violations} increases, largest E(n+1)/E(n) = {worst_ratio:.6}",
            laws.len()
        ),
    );
}

#[test]
fn criterion_06_normal_velocity_continuity() {
    let grid = BulkGrid::new(16, 8, 1.0, 0.5).unwrap();
    let forcing = ForcingSchedule::Constant {
        plus: [1.0, 0.3, 0.5],
        minus: [-0.4, 0.2, -0.7],
    };
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    let mut max_normal: f64 = 0.0;
    for (seed, (_, law)) in test_laws().iter().enumerate() {
        let sys = assemble_flow_system(&grid, law, 0.02, forcing).unwrap();
        let mut s = random_divergence_free(&grid, 200 + seed as u64, law.tensors().is_none());
        for _ in 0..20 {
            s = step_flow(&s, &sys, FLOW_TOL).unwrap();
            for (vp, vm) in interface_traces(&grid, &s) {
                checked += 1;
                if vp[2].to_bits() != vm[2].to_bits() {
                    mismatches += 1;
                }
                max_normal = max_normal.max(vp[2].abs());
            }
        }
    }
    report(
        6,
        "normal-velocity continuity",
        mismatches == 0 && checked > 0,
        &format!(
            "{checked} trace pairs, {mismatches} differ bitwise (max |v3| on Σ = {max_normal:.3e})"
        ),
    );
}

#[test]
fn criterion_07_impermeable_mode() {
    let grid = BulkGrid::new(12, 6, 1.0, 0.5).unwrap();
    let forcing = ForcingSchedule::Constant {
        plus: [1.0, -0.5, 0.8],
        minus: [0.0; 3],
    };
    let sys = assemble_flow_system(&grid, &InterfaceLaw::impermeable(), 0.05, forcing).unwrap();
    let mut s = FlowState::zero(&grid);
    let n = grid.n_sigma;
    let mut max_sigma_flux: f64 = 0.0;
    let mut max_lower: f64 = 0.0;
    let mut max_upper: f64 = 0.0;
    for _ in 0..20 {
        s = step_flow(&s, &sys, FLOW_TOL).unwrap();
        for j in 0..n {
            for i in 0..n {
                max_sigma_flux = max_sigma_flux.max(s.w(&grid, i, j, grid.n_z).abs());
                for k in 0..grid.n_z {
                    let v = s.cell_velocity(&grid, i, j, k);
                    max_lower = v.iter().fold(max_lower, |m, x| m.max(x.abs()));
                    max_lower = max_lower.max(s.w(&grid, i, j, k).abs());
                }
                for k in grid.n_z..grid.layers() {
                    let v = s.cell_velocity(&grid, i, j, k);
                    max_upper = v.iter().fold(max_upper, |m, x| m.max(x.abs()));
                }
            }
        }
        for (_, vm) in interface_traces(&grid, &s) {
            max_lower = vm.iter().fold(max_lower, |m, x| m.max(x.abs()));
        }
    }
    let pass = max_sigma_flux == 0.0 && max_lower == 0.0 && max_upper > 0.0;
    report(
        7,
        "impermeable mode",
        pass,
        &format!("max |w| on Σ = {max_sigma_flux:e}, max |v| in Ω- = {max_lower:e}, max |v| in Ω+ = {max_upper:.3e}"),
    );
}

fn bumpy_state(model: &TransportModel) -> TransportState {
    let g = model.grid();
    let n = g.n_sigma;
    let mut s = model.uniform_state(0.0, 0.0);
    for k in 0..g.layers() {
        for j in 0..n {
            for i in 0..n {
                let (x, y, z) = (
                    (i as f64 + 0.5) / n as f64,
                    (j as f64 + 0.5) / n as f64,
                    g.z_center(k),
                );
                s.c_f[g.cell(i, j, k)] =
                    1.0 + 0.5 * (2.0 * PI * x).sin() * (2.0 * PI * y).cos() + 0.3 * z;
            }
        }
    }
    for (m, c) in s.c_s.iter_mut().enumerate() {
        *c = 0.2 + 0.1 * ((m % 11) as f64) / 11.0;
    }
    s
}

#[test]
fn criterion_08_transport_conservation() {
    let grid = BulkGrid::new(16, 8, 1.0, 0.5).unwrap();
    let cell = sphere_cell(8);
    let d_star = effective_diffusion(&cell, 1.0, CELL_TOL).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for regime in [
        GammaRegime::MinusOne,
        GammaRegime::Intermediate,
        GammaRegime::One,
    ] {
        let solid = MembraneSolid::from_cell(&cell)
            .unwrap()
            .with_diffusion_tensor(&d_star);
        let params = TransportParams {
            regime,
            d_f: 0.5,
            d_s: 1.0,
            kinetics: KineticsSpec::Linear { k: 2.0 },
            dt: 0.01,
        };
        let model = TransportModel::new(grid, params, solid).unwrap();
        let mut s = bumpy_state(&model);
        let m0 = total_mass(&model, &s).total();
        let mut imbalance_steps = 0;
        let mut exchanged = 0.0;
        for _ in 0..100 {
            let (next, ledger) = coupled_step(&model, &s, None).unwrap();
            if ledger.imbalance() != 0.0 {
                imbalance_steps += 1;
            }
            exchanged += ledger.solid_change.abs();
            s = next;
        }
        let drift = (total_mass(&model, &s).total() - m0).abs() / m0.abs();
        pass &= drift < MASS_DRIFT_REL && imbalance_steps == 0 && exchanged > 0.0;
        details.push(format!(
            "{regime:?} drift {drift:.1e}, inexact exchange steps {imbalance_steps}"
        ));
    }
    report(
        8,
        "transport conservation (16x16x16, 100 steps)",
        pass,
        &details.join("; "),
    );
}

/// Adaptive Dormand–Prince 5(4) integration of `y' = f(y)` from 0 to `t_end`.
fn dormand_prince<const N: usize>(
    f: impl Fn(&[f64; N]) -> [f64; N],
    y0: [f64; N],
    t_end: f64,
    tol: f64,
) -> [f64; N] {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let (mut t, mut y, mut h): (f64, [f64; N], f64) = (0.0, y0, 1e-3);
    while t < t_end {
        h = h.min(t_end - t);
        let mut k = [[0.0; N]; 7];
        for s in 0..7 {
            let mut ys = y;
            for (r, a) in A[s].iter().enumerate().take(s) {
                for i in 0..N {
                    ys[i] += h * a * k[r][i];
                }
            }
            k[s] = f(&ys);
        }
        let mut y5 = y;
        let mut err: f64 = 0.0;
        for i in 0..N {
            let mut d = 0.0;
            for s in 0..7 {
                y5[i] += h * B5[s] * k[s][i];
                d += h * (B5[s] - B4[s]) * k[s][i];
            }
            err = err.max(d.abs() / (tol * (1.0 + y[i].abs())));
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        h *= (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
    }
    y
}

#[test]
fn criterion_09_intermediate_matches_ode_oracle() {
    // One cell layer per box: every fluid cell borders Σ and homogeneous data stays homogeneous,
    // so per unit area 2H c_f' = −|Γ| h and |Z_s| c_s' = |Γ| h.
    let (h_box, zs, gamma, k) = (1.0, 0.4, 1.0, 1.0);
    let grid = BulkGrid::new(4, 1, 1.0, h_box).unwrap();
    let params = TransportParams {
        regime: GammaRegime::Intermediate,
        d_f: 1.0,
        d_s: 1.0,
        kinetics: KineticsSpec::Linear { k },
        dt: 1e-3,
    };
    let model = TransportModel::new(
        grid,
        params,
        MembraneSolid::from_measures(zs, gamma).unwrap(),
    )
    .unwrap();
    let (a0, b0) = (1.0, 0.0);
    let mut s = model.uniform_state(a0, b0);
    for _ in 0..1000 {
        s = coupled_step(&model, &s, None).unwrap().0;
    }
    let oracle = dormand_prince(
        |y: &[f64; 2]| {
            let flux = gamma * k * (y[0] - y[1]);
            [-flux / (2.0 * h_box), flux / zs]
        },
        [a0, b0],
        1.0,
        1e-12,
    );
    let err_f = s
        .c_f
        .iter()
        .map(|x| (x - oracle[0]).abs())
        .fold(0.0, f64::max);
    let err_s = s
        .c_s
        .iter()
        .map(|x| (x - oracle[1]).abs())
        .fold(0.0, f64::max);
    report(
        9,
        "INTERMEDIATE regime vs adaptive RK oracle (T=1, dt=1e-3)",
        err_f <= ODE_ABS && err_s <= ODE_ABS && (s.t - 1.0).abs() < 1e-9,
        &format!(
            "c_f={:.10} (oracle {:.10}, err {err_f:.1e}), c_s={:.10} (oracle {:.10}, err {err_s:.1e})",
            s.c_f[0], oracle[0], s.c_s[0], oracle[1]
        ),
    );
}

#[test]
fn criterion_10_surface_diffusion_fourier_decay() {
    let n = 64;
    let grid = BulkGrid::new(n, 1, 1.0, 0.5).unwrap();
    let (zs, dt, steps) = (0.5, 1e-4, 200);
    let d_star = [[0.3, 0.05], [0.05, 0.2]];
    let solid = MembraneSolid::from_measures(zs, 1.0)
        .unwrap()
        .with_d_star(d_star);
    let params = TransportParams {
        regime: GammaRegime::MinusOne,
        d_f: 1.0,
        d_s: 1.0,
        kinetics: KineticsSpec::Zero,
        dt,
    };
    let model = TransportModel::new(grid, params, solid).unwrap();
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for (p, q) in [(1usize, 0usize), (0, 2), (1, 1)] {
        let mut s = model.uniform_state(0.0, 0.0);
        for j in 0..n {
            for i in 0..n {
                let (x, y) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
                s.c_s[i + n * j] = (2.0 * PI * (p as f64 * x + q as f64 * y)).sin();
            }
        }
        let profile = s.c_s.clone();
        let norm: f64 = profile.iter().map(|x| x * x).sum();
        for _ in 0..steps {
            s = coupled_step(&model, &s, None).unwrap().0;
        }
        let amp: f64 = s.c_s.iter().zip(&profile).map(|(a, b)| a * b).sum::<f64>() / norm;
        let t = dt * steps as f64;
        let kv = [2.0 * PI * p as f64, 2.0 * PI * q as f64];
        let rate = (0..2)
            .map(|a| (0..2).map(|b| kv[a] * d_star[a][b] * kv[b]).sum::<f64>())
            .sum::<f64>()
            / zs;
        let observed = -amp.ln() / t;
        let err = rel(observed, rate);
        worst = worst.max(err);
        details.push(format!("mode ({p},{q}) rate {observed:.4} vs {rate:.4}"));
    }
    report(
        10,
        "MINUS_ONE surface diffusion decay (N=64)",
        worst <= FOURIER_REL,
        &format!("{}; worst rel. error {worst:.2e}", details.join(", ")),
    );
}

#[test]
fn criterion_11_regime_consistency() {
    let grid = BulkGrid::new(8, 4, 1.0, 0.5).unwrap();
    let cell = sphere_cell(8);
    let params = |regime, d_s, k, dt| TransportParams {
        regime,
        d_f: 0.7,
        d_s,
        kinetics: KineticsSpec::Linear { k },
        dt,
    };

    // Surface regime with D* = 0 against the pointwise ODE.
    let sat = |regime| TransportParams {
        kinetics: KineticsSpec::Saturating { k1: 2.0, k2: 1.0 },
        ..params(regime, 1.0, 1.0, 0.005)
    };
    let base = MembraneSolid::from_cell(&cell).unwrap();
    let minus = TransportModel::new(
        grid,
        sat(GammaRegime::MinusOne),
        base.clone().with_d_star([[0.0; 2]; 2]),
    )
    .unwrap();
    let inter = TransportModel::new(grid, sat(GammaRegime::Intermediate), base.clone()).unwrap();
    let mut a = bumpy_state(&minus);
    let mut b = a.clone();
    let mut identical = true;
    for _ in 0..50 {
        a = coupled_step(&minus, &a, None).unwrap().0;
        b = coupled_step(&inter, &b, None).unwrap().0;
        identical &= a
            .c_f
            .iter()
            .chain(&a.c_s)
            .zip(b.c_f.iter().chain(&b.c_s))
            .all(|(x, y)| x.to_bits() == y.to_bits());
    }

    // Cell regime with uniform data: the cell mean follows the ODE once the
    // boundary layer inside the solid has formed.
    let d_s = 100.0;
    let dt = 1e-3;
    let one =
        TransportModel::new(grid, params(GammaRegime::One, d_s, 0.5, dt), base.clone()).unwrap();
    let ode =
        TransportModel::new(grid, params(GammaRegime::Intermediate, d_s, 0.5, dt), base).unwrap();
    let mut so = one.uniform_state(1.0, 0.0);
    let mut si = ode.uniform_state(1.0, 0.0);
    let mut worst: f64 = 0.0;
    let transient = 0.05;
    let zs = one.solid().zs_measure;
    for _ in 0..1000 {
        so = coupled_step(&one, &so, None).unwrap().0;
        si = coupled_step(&ode, &si, None).unwrap().0;
        if so.t >= transient {
            let solid_mean =
                total_mass(&one, &so).solid / (zs * grid.sigma_extent * grid.sigma_extent);
            let fluid_gap = so
                .c_f
                .iter()
                .zip(&si.c_f)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            worst = worst.max((solid_mean - si.c_s[0]).abs()).max(fluid_gap);
        }
    }
    report(
        11,
        "regime consistency",
        identical && worst <= UNIFORM_MEAN_ABS,
        &format!(
            "MINUS_ONE with D*=0 bit-identical to INTERMEDIATE over 50 steps: {identical}; ONE vs INTERMEDIATE max mean deviation for t in [{transient}, {:.2}] = {worst:.2e}",
            so.t
        ),
    );
}

#[test]
fn criterion_12_refinement_convergence() {
    let errors: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|&n| (empty_tensors(n).k_plus[0][0] - 0.25).abs())
        .collect();
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let exact_at_round_off = errors.iter().all(|&e| e <= ROUND_OFF_FLOOR);
    let ordered = orders.iter().all(|&p| p >= MIN_ORDER);
    report(
        12,
        "K+11 refinement over N=8,16,32",
        ordered || exact_at_round_off,
        &format!(
            "errors {:.2e} {:.2e} {:.2e}, observed orders {:.2} {:.2}{}",
            errors[0],
            errors[1],
            errors[2],
            orders[0],
            orders[1],
            if exact_at_round_off {
                " (all errors at solver round-off: the discrete shear solution is exact)"
            } else {
                ""
            }
        ),
    );
}

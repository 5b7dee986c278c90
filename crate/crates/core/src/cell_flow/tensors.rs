//! Effective interface tensors `G`, `K^±`, `M`, `A^±`, `Q^±` and the
//! coercivity margin of the interface form.

use nalgebra::{Matrix5, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{CellBoundaryMode, CellFlowError, CellStokesOperators, Side, StokesCellSolution};
use crate::geometry::ReferenceCell;

pub type Mat3 = [[f64; 3]; 3];

/// Tolerance on `[v⁺]₃ = [v⁻]₃` in [`darcy_velocity`].
const NORMAL_MISMATCH_TOL: f64 = 1e-9;

/// Viscous inner products of the cell solutions.
///
/// Entries follow the convention that mixes tangential and normal problems:
/// `G^{αβ}_{ij}` for `i, j ∈ {1, 2}`, `G^{αα}_{i3} = G^{αα}_{3i}` and
/// `G^{αα}_{33}` with the extra factor ½.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowGram {
    /// `tangential[a][b] = ⟨q_a, q_b⟩` with `a, b` indexing `q1+, q2+, q1-, q2-`.
    pub tangential: [[f64; 4]; 4],
    /// `⟨q_a, q₃⟩` and `⟨q₃, q_a⟩` for the tangential problems `a`.
    pub mixed: [f64; 4],
    pub mixed_transposed: [f64; 4],
    /// `⟨q₃, q₃⟩` without the ½.
    pub normal: f64,
}

fn tangential_slot(side: Side, i: usize) -> usize {
    let base = match side {
        Side::Plus => 0,
        Side::Minus => 2,
    };
    base + i - 1
}

impl FlowGram {
    /// `G^{αβ}_{ij}` for `i, j ∈ {1, 2, 3}`; `None` for combinations that are not defined
    /// (entries with a 3 and `α ≠ β`).
    pub fn get(&self, alpha: Side, beta: Side, i: usize, j: usize) -> Option<f64> {
        match (i, j) {
            (1..=2, 1..=2) => {
                Some(self.tangential[tangential_slot(alpha, i)][tangential_slot(beta, j)])
            }
            _ if alpha != beta => None,
            (1..=2, 3) => Some(self.mixed[tangential_slot(alpha, i)]),
            (3, 1..=2) => Some(self.mixed_transposed[tangential_slot(alpha, j)]),
            (3, 3) => Some(0.5 * self.normal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveFlowTensors {
    pub gram: FlowGram,
    pub k_plus: Mat3,
    pub k_minus: Mat3,
    pub m: Mat3,
    /// Largest `|G^{+-}_{ij} - G^{-+}_{ij}|`; zero for mirror-symmetric cells.
    pub m_asymmetry: f64,
    pub a_plus: Mat3,
    pub a_minus: Mat3,
    pub q_plus: Mat3,
    pub q_minus: Mat3,
    pub zf_measure: f64,
    pub resolution: usize,
}

impl EffectiveFlowTensors {
    pub fn k(&self, side: Side) -> &Mat3 {
        match side {
            Side::Plus => &self.k_plus,
            Side::Minus => &self.k_minus,
        }
    }

    pub fn q(&self, side: Side) -> &Mat3 {
        match side {
            Side::Plus => &self.q_plus,
            Side::Minus => &self.q_minus,
        }
    }

    /// Interface form `Mξ⁺·ξ⁻ + Mξ⁻·ξ⁺ + Σ K^± ξ^±·ξ^±`.
    pub fn interface_form(&self, xi_plus: &[f64; 3], xi_minus: &[f64; 3]) -> f64 {
        let quad = |m: &Mat3, a: &[f64; 3], b: &[f64; 3]| -> f64 {
            (0..3)
                .map(|r| (0..3).map(|c| m[r][c] * b[c]).sum::<f64>() * a[r])
                .sum()
        };
        quad(&self.m, xi_minus, xi_plus)
            + quad(&self.m, xi_plus, xi_minus)
            + quad(&self.k_plus, xi_plus, xi_plus)
            + quad(&self.k_minus, xi_minus, xi_minus)
    }
}

/// Assembles all tensors from the five solutions (in any order).
pub fn assemble_effective_tensors(
    solutions: &[StokesCellSolution],
    cell: &ReferenceCell,
) -> Result<EffectiveFlowTensors, CellFlowError> {
    let n = cell.resolution();
    let find = |mode: CellBoundaryMode| -> Result<&StokesCellSolution, CellFlowError> {
        let s = solutions
            .iter()
            .find(|s| s.mode == mode)
            .ok_or_else(|| CellFlowError::GridMismatch(format!("missing solution {mode}")))?;
        if s.resolution != n {
            return Err(CellFlowError::GridMismatch(format!(
                "{mode} has resolution {}, cell has {n}",
                s.resolution
            )));
        }
        Ok(s)
    };
    let ordered: Vec<&StokesCellSolution> = CellBoundaryMode::ALL
        .iter()
        .map(|&m| find(m))
        .collect::<Result<_, _>>()?;

    let ops = CellStokesOperators::new(cell);
    if ordered
        .iter()
        .any(|s| s.velocity.len() != ops.layout.num_slots())
    {
        return Err(CellFlowError::GridMismatch("velocity length".into()));
    }
    let strains: Vec<Vec<f64>> = ordered
        .iter()
        .map(|s| ops.strain_of(&s.velocity, s.mode))
        .collect();
    let w = &ops.weights;
    let inner = |a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for r in 0..w.len() {
            s += w[r] * (a[r] * b[r]);
        }
        s
    };

    let mut tangential = [[0.0; 4]; 4];
    for (a, row) in tangential.iter_mut().enumerate() {
        for (b, entry) in row.iter_mut().enumerate() {
            *entry = inner(&strains[a], &strains[b]);
        }
    }
    let mut mixed = [0.0; 4];
    let mut mixed_transposed = [0.0; 4];
    for a in 0..4 {
        mixed[a] = inner(&strains[a], &strains[4]);
        mixed_transposed[a] = inner(&strains[4], &strains[a]);
    }
    let gram = FlowGram {
        tangential,
        mixed,
        mixed_transposed,
        normal: inner(&strains[4], &strains[4]),
    };

    let k_of = |side: Side| -> Mat3 {
        let mut k = [[0.0; 3]; 3];
        for (i, row) in k.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = gram
                    .get(side, side, i + 1, j + 1)
                    .expect("defined on the diagonal block");
            }
        }
        k
    };
    let mut m = [[0.0; 3]; 3];
    let mut m_asymmetry: f64 = 0.0;
    for i in 1..=2 {
        for j in 1..=2 {
            let pm = gram.get(Side::Plus, Side::Minus, i, j).unwrap();
            let mp = gram.get(Side::Minus, Side::Plus, i, j).unwrap();
            m_asymmetry = m_asymmetry.max((pm - mp).abs());
            m[i - 1][j - 1] = 0.5 * (pm + mp);
        }
    }
    // Exact symmetry of the symmetrized block.
    m[1][0] = m[0][1];

    let zf = cell.measures().fluid_volume;
    let means: Vec<[f64; 3]> = ordered.iter().map(|s| velocity_integral(s)).collect();
    let a_of = |side: Side| -> Mat3 {
        let mut a = [[0.0; 3]; 3];
        for j in 0..3 {
            let (integral, scale) = if j < 2 {
                (means[tangential_slot(side, j + 1)], 1.0)
            } else {
                (means[4], 0.5)
            };
            for k in 0..3 {
                a[k][j] = scale * integral[k] / zf;
            }
        }
        a
    };
    let a_plus = a_of(Side::Plus);
    let a_minus = a_of(Side::Minus);
    let q_of = |a: &Mat3| -> Mat3 {
        let mut q = *a;
        q[2][2] -= 1.0 / zf;
        q
    };
    Ok(EffectiveFlowTensors {
        k_plus: k_of(Side::Plus),
        k_minus: k_of(Side::Minus),
        m,
        m_asymmetry,
        q_plus: q_of(&a_plus),
        q_minus: q_of(&a_minus),
        a_plus,
        a_minus,
        gram,
        zf_measure: zf,
        resolution: n,
    })
}

/// `∫_{Z_f} q dy` by midpoint sums on the faces; z-faces on `S^±` carry half weight.
fn velocity_integral(s: &StokesCellSolution) -> [f64; 3] {
    let n = s.resolution;
    let nz = 2 * n;
    let h = 1.0 / n as f64;
    let vol = h * h * h;
    let mut out = [0.0; 3];
    for k in 0..nz {
        for j in 0..n {
            for i in 0..n {
                out[0] += s.u(i, j, k);
                out[1] += s.v(i, j, k);
            }
        }
    }
    for k in 0..=nz {
        let wk = if k == 0 || k == nz { 0.5 } else { 1.0 };
        let mut layer = 0.0;
        for j in 0..n {
            for i in 0..n {
                layer += s.w(i, j, k);
            }
        }
        out[2] += wk * layer;
    }
    out.map(|x| x * vol)
}

/// Smallest `c` with `form(ξ) ≥ c Σ|ξ^±|²` on `{ξ₃⁺ = ξ₃⁻}`.
///
/// With coordinates `(ξ₁⁺, ξ₂⁺, ξ₁⁻, ξ₂⁻, ξ₃)` the form is `xᵀHx` and the norm is
/// `xᵀNx` with `N = diag(1, 1, 1, 1, 2)`; the margin is the smallest eigenvalue of
/// `N^{-1/2} H N^{-1/2}`.
pub fn coercivity_margin(t: &EffectiveFlowTensors) -> f64 {
    let embed = |x: &[f64; 5]| -> ([f64; 3], [f64; 3]) { ([x[0], x[1], x[4]], [x[2], x[3], x[4]]) };
    let basis = |i: usize| {
        let mut e = [0.0; 5];
        e[i] = 1.0;
        e
    };
    // Polarization of the quadratic form.
    let form = |x: &[f64; 5]| {
        let (p, m) = embed(x);
        t.interface_form(&p, &m)
    };
    let mut h = Matrix5::<f64>::zeros();
    for i in 0..5 {
        for j in 0..5 {
            let mut s = basis(i);
            let ej = basis(j);
            for k in 0..5 {
                s[k] += ej[k];
            }
            let mut d = basis(i);
            for k in 0..5 {
                d[k] -= ej[k];
            }
            h[(i, j)] = 0.25 * (form(&s) - form(&d));
        }
    }
    let scale = [1.0, 1.0, 1.0, 1.0, 1.0 / 2f64.sqrt()];
    for i in 0..5 {
        for j in 0..5 {
            h[(i, j)] *= scale[i] * scale[j];
        }
    }
    let h = 0.5 * (h + h.transpose());
    SymmetricEigen::new(h).eigenvalues.min()
}

/// Darcy velocity `Σ Q^± v^± + (|Z|/|Z_f|) [v]₃ e₃` from the interface traces.
pub fn darcy_velocity(
    t: &EffectiveFlowTensors,
    v_plus: [f64; 3],
    v_minus: [f64; 3],
) -> Result<[f64; 3], CellFlowError> {
    let scale = 1.0 + v_plus[2].abs().max(v_minus[2].abs());
    if (v_plus[2] - v_minus[2]).abs() > NORMAL_MISMATCH_TOL * scale {
        return Err(CellFlowError::NormalMismatch {
            plus: v_plus[2],
            minus: v_minus[2],
        });
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        for c in 0..3 {
            *o += t.q_plus[k][c] * v_plus[c] + t.q_minus[k][c] * v_minus[c];
        }
    }
    out[2] += 2.0 / t.zf_measure * v_plus[2];
    Ok(out)
}

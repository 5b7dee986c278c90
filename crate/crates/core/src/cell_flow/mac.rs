//! Staggered (MAC) discretization of the Stokes cell problems.
//!
//! Velocity slots: `u` on x-faces, `v` on y-faces (both `n·n·2n`, wrapped
//! laterally) and `w` on z-faces (`n·n·(2n+1)`, including `S^±`). A slot is
//! a free unknown when both adjacent voxels are fluid; every other slot is
//! fixed, to zero on `Γ` and inside the solid, or to the boundary data on
//! the fluid part of `S^±`.
//!
//! The viscous form `∫ D(q):D(φ)` is written as `Σ_r W_r s_r(q) s_r(φ)` over
//! strain rows `s_r`: normal strains at voxel centers and shear strains at
//! voxel edges. Edges on `S^±` use a mirrored ghost for the tangential
//! velocity and carry half the dual volume.

use crate::geometry::ReferenceCell;
use crate::solver::CsrMatrix;

use super::{CellBoundaryMode, Side};

#[derive(Debug, Clone, Copy)]
pub(crate) struct MacLayout {
    pub n: usize,
    pub nz: usize,
}

impl MacLayout {
    pub fn new(n: usize) -> Self {
        MacLayout { n, nz: 2 * n }
    }

    pub fn layer(&self) -> usize {
        self.n * self.n
    }

    pub fn u(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    pub fn v(&self, i: usize, j: usize, k: usize) -> usize {
        self.layer() * self.nz + self.u(i, j, k)
    }

    pub fn w(&self, i: usize, j: usize, k: usize) -> usize {
        2 * self.layer() * self.nz + self.u(i, j, k)
    }

    pub fn num_slots(&self) -> usize {
        self.layer() * (3 * self.nz + 1)
    }

    pub fn cell(&self, i: usize, j: usize, k: usize) -> usize {
        self.u(i, j, k)
    }

    pub fn num_cells(&self) -> usize {
        self.layer() * self.nz
    }

    pub fn prev(&self, i: usize) -> usize {
        (i + self.n - 1) % self.n
    }
}

/// Where a slot's fixed value comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum FixedKind {
    Zero,
    /// Normal velocity on the fluid part of `S^±`.
    Boundary(Side),
}

/// Affine term `coef · g` contributed by a mirrored tangential ghost,
/// `g` being component `comp` of the data on `side`.
#[derive(Debug, Clone, Copy)]
struct GhostTerm {
    row: usize,
    side: Side,
    comp: usize,
    coef: f64,
}

/// All mode-independent operators of the cell Stokes problems.
pub(crate) struct CellStokesOperators {
    pub layout: MacLayout,
    pub h: f64,
    /// Free-unknown index per slot.
    pub free_of_slot: Vec<Option<usize>>,
    pub slot_of_free: Vec<usize>,
    pub fixed_kind: Vec<FixedKind>,
    /// Strain rows over all slots.
    pub strain: CsrMatrix,
    pub weights: Vec<f64>,
    ghosts: Vec<GhostTerm>,
    /// Velocity block `Eᵀ W E` over free unknowns.
    pub a: CsrMatrix,
    /// `-h³ div` over fluid cells and all slots.
    pub div: CsrMatrix,
    pub cell_of_pressure: Vec<usize>,
}

impl CellStokesOperators {
    pub fn new(cell: &ReferenceCell) -> Self {
        let n = cell.resolution();
        let layout = MacLayout::new(n);
        let nz = layout.nz;
        let h = cell.voxel_size();
        let vol = h * h * h;
        let fluid = |i: usize, j: usize, k: usize| cell.is_fluid(i, j, k);

        let nslots = layout.num_slots();
        let mut free_of_slot = vec![None; nslots];
        let mut fixed_kind = vec![FixedKind::Zero; nslots];
        let mut slot_of_free = Vec::new();
        let mut mark = |slot: usize, free: bool| {
            if free {
                free_of_slot[slot] = Some(slot_of_free.len());
                slot_of_free.push(slot);
            }
        };
        for k in 0..nz {
            for j in 0..n {
                for i in 0..n {
                    mark(
                        layout.u(i, j, k),
                        fluid(layout.prev(i), j, k) && fluid(i, j, k),
                    );
                }
            }
        }
        for k in 0..nz {
            for j in 0..n {
                for i in 0..n {
                    mark(
                        layout.v(i, j, k),
                        fluid(i, layout.prev(j), k) && fluid(i, j, k),
                    );
                }
            }
        }
        for k in 0..=nz {
            for j in 0..n {
                for i in 0..n {
                    let interior = k > 0 && k < nz && fluid(i, j, k - 1) && fluid(i, j, k);
                    mark(layout.w(i, j, k), interior);
                }
            }
        }
        for j in 0..n {
            for i in 0..n {
                if fluid(i, j, 0) {
                    fixed_kind[layout.w(i, j, 0)] = FixedKind::Boundary(Side::Minus);
                }
                if fluid(i, j, nz - 1) {
                    fixed_kind[layout.w(i, j, nz)] = FixedKind::Boundary(Side::Plus);
                }
            }
        }

        // Strain rows.
        let inv_h = 1.0 / h;
        let mut trip = Vec::new();
        let mut weights = Vec::new();
        let mut ghosts = Vec::new();
        let mut push_row =
            |entries: &[(usize, f64)], weight: f64, trip: &mut Vec<(usize, usize, f64)>| {
                let r = weights.len();
                weights.push(weight);
                for &(slot, c) in entries {
                    trip.push((r, slot, c));
                }
                r
            };
        // Normal strains at voxel centers, fluid voxels only (all faces of a solid voxel are zero).
        for k in 0..nz {
            for j in 0..n {
                for i in 0..n {
                    if !fluid(i, j, k) {
                        continue;
                    }
                    let ip = (i + 1) % n;
                    let jp = (j + 1) % n;
                    push_row(
                        &[(layout.u(ip, j, k), inv_h), (layout.u(i, j, k), -inv_h)],
                        vol,
                        &mut trip,
                    );
                    push_row(
                        &[(layout.v(i, jp, k), inv_h), (layout.v(i, j, k), -inv_h)],
                        vol,
                        &mut trip,
                    );
                    push_row(
                        &[(layout.w(i, j, k + 1), inv_h), (layout.w(i, j, k), -inv_h)],
                        vol,
                        &mut trip,
                    );
                }
            }
        }
        // Shear strains D_ab = ½(∂_a q_b + ∂_b q_a); off-diagonal pairs count twice.
        let half = 0.5 * inv_h;
        for k in 0..nz {
            for j in 0..n {
                for i in 0..n {
                    let (im, jm) = (layout.prev(i), layout.prev(j));
                    // xy-edge at (i h, j h): touches voxels (i-1|i, j-1|j, k).
                    if fluid(im, jm, k) || fluid(i, jm, k) || fluid(im, j, k) || fluid(i, j, k) {
                        push_row(
                            &[
                                (layout.v(i, j, k), half),
                                (layout.v(im, j, k), -half),
                                (layout.u(i, j, k), half),
                                (layout.u(i, jm, k), -half),
                            ],
                            2.0 * vol,
                            &mut trip,
                        );
                    }
                }
            }
        }
        for k in 0..=nz {
            let boundary = k == 0 || k == nz;
            let weight = if boundary { vol } else { 2.0 * vol };
            for j in 0..n {
                for i in 0..n {
                    let (im, jm) = (layout.prev(i), layout.prev(j));
                    let touches = |a: usize, b: usize, c: usize, d: usize| {
                        let lo = k.checked_sub(1);
                        let hi = (k < nz).then_some(k);
                        [lo, hi]
                            .into_iter()
                            .flatten()
                            .any(|kk| fluid(a, b, kk) || fluid(c, d, kk))
                    };
                    // xz-edge at (i h, y_j, k h): ½(∂_x w + ∂_z u).
                    if touches(im, j, i, j) {
                        let mut e = vec![(layout.w(i, j, k), half), (layout.w(im, j, k), -half)];
                        let face_fluid_pair = |kk: usize| fluid(im, j, kk) && fluid(i, j, kk);
                        let r_entries =
                            tangential_dz(&layout, k, |kk| layout.u(i, j, kk), half, &mut e);
                        let r = push_row(&e, weight, &mut trip);
                        if let Some((side, kk, coef)) = r_entries {
                            if face_fluid_pair(kk) {
                                ghosts.push(GhostTerm {
                                    row: r,
                                    side,
                                    comp: 0,
                                    coef,
                                });
                            }
                        }
                    }
                    // yz-edge at (x_i, j h, k h): ½(∂_y w + ∂_z v).
                    if touches(i, jm, i, j) {
                        let mut e = vec![(layout.w(i, j, k), half), (layout.w(i, jm, k), -half)];
                        let face_fluid_pair = |kk: usize| fluid(i, jm, kk) && fluid(i, j, kk);
                        let r_entries =
                            tangential_dz(&layout, k, |kk| layout.v(i, j, kk), half, &mut e);
                        let r = push_row(&e, weight, &mut trip);
                        if let Some((side, kk, coef)) = r_entries {
                            if face_fluid_pair(kk) {
                                ghosts.push(GhostTerm {
                                    row: r,
                                    side,
                                    comp: 1,
                                    coef,
                                });
                            }
                        }
                    }
                }
            }
        }
        let nrows = weights.len();
        let strain = CsrMatrix::from_triplets(nrows, nslots, trip);

        // Discrete divergence over fluid cells.
        let mut cell_of_pressure = Vec::new();
        let mut dtrip = Vec::new();
        let c = -vol * inv_h;
        for k in 0..nz {
            for j in 0..n {
                for i in 0..n {
                    if !fluid(i, j, k) {
                        continue;
                    }
                    let p = cell_of_pressure.len();
                    cell_of_pressure.push(layout.cell(i, j, k));
                    let ip = (i + 1) % n;
                    let jp = (j + 1) % n;
                    dtrip.push((p, layout.u(ip, j, k), c));
                    dtrip.push((p, layout.u(i, j, k), -c));
                    dtrip.push((p, layout.v(i, jp, k), c));
                    dtrip.push((p, layout.v(i, j, k), -c));
                    dtrip.push((p, layout.w(i, j, k + 1), c));
                    dtrip.push((p, layout.w(i, j, k), -c));
                }
            }
        }
        let div = CsrMatrix::from_triplets(cell_of_pressure.len(), nslots, dtrip);

        let strain_free = restrict_columns(&strain, &free_of_slot, slot_of_free.len());
        let a = gram(&strain_free, &weights);

        CellStokesOperators {
            layout,
            h,
            free_of_slot,
            slot_of_free,
            fixed_kind,
            strain,
            weights,
            ghosts,
            a,
            div,
            cell_of_pressure,
        }
    }

    pub fn num_free(&self) -> usize {
        self.slot_of_free.len()
    }

    /// Full slot vector carrying only the fixed boundary values of `mode`.
    pub fn fixed_values(&self, mode: CellBoundaryMode) -> Vec<f64> {
        self.fixed_kind
            .iter()
            .map(|k| match k {
                FixedKind::Zero => 0.0,
                FixedKind::Boundary(side) => mode.boundary_value(*side)[2],
            })
            .collect()
    }

    /// Affine strain contributions of the tangential boundary data of `mode`.
    pub fn ghost_offsets(&self, mode: CellBoundaryMode) -> Vec<f64> {
        let mut c = vec![0.0; self.weights.len()];
        for g in &self.ghosts {
            c[g.row] += g.coef * mode.boundary_value(g.side)[g.comp];
        }
        c
    }

    /// Strain rows of a full slot vector under the boundary data of `mode`.
    pub fn strain_of(&self, slots: &[f64], mode: CellBoundaryMode) -> Vec<f64> {
        let mut s = vec![0.0; self.weights.len()];
        self.strain.mul_vec(slots, &mut s);
        for (si, ci) in s.iter_mut().zip(self.ghost_offsets(mode)) {
            *si += ci;
        }
        s
    }

    pub fn restrict_div(&self) -> CsrMatrix {
        restrict_columns(&self.div, &self.free_of_slot, self.num_free())
    }
}

/// Appends the `½ ∂_z` term of a tangential component at z-level `k`; on `S^±`
/// the ghost `2g - q` turns it into `(g - q)/h` and the constant part is returned
/// as `(side, layer of the face, coefficient of g)`.
fn tangential_dz(
    layout: &MacLayout,
    k: usize,
    slot: impl Fn(usize) -> usize,
    half: f64,
    e: &mut Vec<(usize, f64)>,
) -> Option<(Side, usize, f64)> {
    if k == 0 {
        // (q_0 - ghost)/h = 2(q_0 - g)/h, halved.
        e.push((slot(0), 2.0 * half));
        Some((Side::Minus, 0, -2.0 * half))
    } else if k == layout.nz {
        e.push((slot(k - 1), -2.0 * half));
        Some((Side::Plus, k - 1, 2.0 * half))
    } else {
        e.push((slot(k), half));
        e.push((slot(k - 1), -half));
        None
    }
}

/// Keeps the columns with a free index, renumbered.
pub(crate) fn restrict_columns(m: &CsrMatrix, map: &[Option<usize>], ncols: usize) -> CsrMatrix {
    let mut t = Vec::with_capacity(m.nnz());
    for r in 0..m.nrows() {
        for (c, v) in m.row(r) {
            if let Some(f) = map[c] {
                t.push((r, f, v));
            }
        }
    }
    CsrMatrix::from_triplets(m.nrows(), ncols, t)
}

/// `Eᵀ diag(w) E`, flagged symmetric.
pub(crate) fn gram(e: &CsrMatrix, w: &[f64]) -> CsrMatrix {
    let et = e.transpose();
    let n = e.ncols();
    let mut trip = Vec::new();
    let mut acc = vec![0.0; n];
    let mut seen = vec![usize::MAX; n];
    let mut cols = Vec::new();
    for r in 0..n {
        cols.clear();
        for (row, a) in et.row(r) {
            let wa = w[row] * a;
            for (c, b) in e.row(row) {
                if seen[c] != r {
                    seen[c] = r;
                    acc[c] = 0.0;
                    cols.push(c);
                }
                acc[c] += wa * b;
            }
        }
        cols.sort_unstable();
        for &c in &cols {
            trip.push((r, c, acc[c]));
        }
    }
    CsrMatrix::from_triplets(n, n, trip).with_symmetry(true)
}

//! Staggered grid of the two bulk boxes `Ω⁻ = Σ × (-H, 0)` and `Ω⁺ = Σ × (0, H)`.
//!
//! Both boxes share one lateral `n × n` grid and are stacked into a single
//! column of `2 n_z` cell layers, layers `k < n_z` belonging to `Ω⁻`. The
//! z-face at level `n_z` lies on `Σ` and its normal velocity is one shared
//! unknown. Tangential traces on `Σ` are separate, massless unknowns per side.

use serde::{Deserialize, Serialize};

use crate::cell_flow::Side;
use crate::solver::CsrMatrix;

use super::MacroFlowError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BulkGrid {
    /// Cells per lateral direction.
    pub n_sigma: usize,
    /// Cell layers per box.
    pub n_z: usize,
    /// Side length of the square `Σ`.
    pub sigma_extent: f64,
    /// Height `H` of each box.
    pub height: f64,
}

impl BulkGrid {
    pub fn new(
        n_sigma: usize,
        n_z: usize,
        sigma_extent: f64,
        height: f64,
    ) -> Result<Self, MacroFlowError> {
        let g = BulkGrid {
            n_sigma,
            n_z,
            sigma_extent,
            height,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), MacroFlowError> {
        if self.n_sigma < 2 || self.n_z < 1 {
            return Err(MacroFlowError::InvalidGrid(format!(
                "need n_sigma ≥ 2 and n_z ≥ 1, got {} and {}",
                self.n_sigma, self.n_z
            )));
        }
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if !ok(self.sigma_extent) || !ok(self.height) {
            return Err(MacroFlowError::InvalidGrid(format!(
                "extent {} and height {} must be positive",
                self.sigma_extent, self.height
            )));
        }
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        self.sigma_extent / self.n_sigma as f64
    }

    pub fn hz(&self) -> f64 {
        self.height / self.n_z as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.hx() * self.hx() * self.hz()
    }

    /// Total number of layers, `2 n_z`.
    pub fn layers(&self) -> usize {
        2 * self.n_z
    }

    pub fn layer_size(&self) -> usize {
        self.n_sigma * self.n_sigma
    }

    pub fn num_cells(&self) -> usize {
        self.layer_size() * self.layers()
    }

    pub fn cell(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n_sigma * (j + self.n_sigma * k)
    }

    pub fn z_center(&self, k: usize) -> f64 {
        -self.height + (k as f64 + 0.5) * self.hz()
    }

    pub fn side_of_layer(&self, k: usize) -> Side {
        if k < self.n_z {
            Side::Minus
        } else {
            Side::Plus
        }
    }

    pub(crate) fn prev(&self, i: usize) -> usize {
        (i + self.n_sigma - 1) % self.n_sigma
    }

    pub(crate) fn next(&self, i: usize) -> usize {
        (i + 1) % self.n_sigma
    }

    pub fn u_slot(&self, i: usize, j: usize, k: usize) -> usize {
        self.cell(i, j, k)
    }

    pub fn v_slot(&self, i: usize, j: usize, k: usize) -> usize {
        self.num_cells() + self.cell(i, j, k)
    }

    /// z-face at level `k ∈ 0..=2 n_z`.
    pub fn w_slot(&self, i: usize, j: usize, k: usize) -> usize {
        2 * self.num_cells() + self.cell(i, j, k)
    }

    /// Tangential trace on `Σ`; `component` is 0 (x-face position) or 1 (y-face position).
    pub fn trace_slot(&self, side: Side, component: usize, i: usize, j: usize) -> usize {
        let s = match side {
            Side::Plus => 0,
            Side::Minus => 1,
        };
        let base = 3 * self.num_cells() + self.layer_size();
        base + (2 * s + component) * self.layer_size() + i + self.n_sigma * j
    }

    pub fn num_slots(&self) -> usize {
        3 * self.num_cells() + self.layer_size() + 4 * self.layer_size()
    }
}

/// Mode-independent discrete operators on all velocity slots.
pub(crate) struct BulkOperators {
    pub strain: CsrMatrix,
    pub weights: Vec<f64>,
    /// Lumped velocity mass per slot (zero for traces).
    pub mass: Vec<f64>,
    /// `-|cell| div` per cell.
    pub div: CsrMatrix,
}

impl BulkOperators {
    pub fn new(g: &BulkGrid) -> Self {
        let n = g.n_sigma;
        let nl = g.layers();
        let nz = g.n_z;
        let (hx, hz) = (g.hx(), g.hz());
        let vol = g.cell_volume();
        let mut trip = Vec::new();
        let mut weights = Vec::new();
        let mut row = |entries: &[(usize, f64)], w: f64| {
            let r = weights.len();
            weights.push(w);
            for &(s, c) in entries {
                trip.push((r, s, c));
            }
        };
        let (ix, iz) = (1.0 / hx, 1.0 / hz);
        for k in 0..nl {
            for j in 0..n {
                for i in 0..n {
                    let (ip, jp) = (g.next(i), g.next(j));
                    row(&[(g.u_slot(ip, j, k), ix), (g.u_slot(i, j, k), -ix)], vol);
                    row(&[(g.v_slot(i, jp, k), ix), (g.v_slot(i, j, k), -ix)], vol);
                    row(
                        &[(g.w_slot(i, j, k + 1), iz), (g.w_slot(i, j, k), -iz)],
                        vol,
                    );
                }
            }
        }
        let (hxh, hzh) = (0.5 * ix, 0.5 * iz);
        for k in 0..nl {
            for j in 0..n {
                for i in 0..n {
                    let (im, jm) = (g.prev(i), g.prev(j));
                    row(
                        &[
                            (g.v_slot(i, j, k), hxh),
                            (g.v_slot(im, j, k), -hxh),
                            (g.u_slot(i, j, k), hxh),
                            (g.u_slot(i, jm, k), -hxh),
                        ],
                        2.0 * vol,
                    );
                }
            }
        }
        // Shear strains ½(∂_x w + ∂_z u) and ½(∂_y w + ∂_z v) at z-levels. Levels 0 and 2 n_z are
        // omitted (stress-free); the Σ level is split into one half edge per side, using the
        // trace at distance hz/2.
        for k in 1..nl {
            for j in 0..n {
                for i in 0..n {
                    let (im, jm) = (g.prev(i), g.prev(j));
                    let dwx = [(g.w_slot(i, j, k), hxh), (g.w_slot(im, j, k), -hxh)];
                    let dwy = [(g.w_slot(i, j, k), hxh), (g.w_slot(i, jm, k), -hxh)];
                    let lateral = [(0usize, dwx), (1, dwy)];
                    for (comp, dw) in lateral {
                        let t = |kk: usize| {
                            if comp == 0 {
                                g.u_slot(i, j, kk)
                            } else {
                                g.v_slot(i, j, kk)
                            }
                        };
                        if k != nz {
                            row(&[dw[0], dw[1], (t(k), hzh), (t(k - 1), -hzh)], 2.0 * vol);
                        } else {
                            let below = g.trace_slot(Side::Minus, comp, i, j);
                            let above = g.trace_slot(Side::Plus, comp, i, j);
                            row(
                                &[dw[0], dw[1], (below, 2.0 * hzh), (t(k - 1), -2.0 * hzh)],
                                vol,
                            );
                            row(&[dw[0], dw[1], (t(k), 2.0 * hzh), (above, -2.0 * hzh)], vol);
                        }
                    }
                }
            }
        }
        let strain = CsrMatrix::from_triplets(weights.len(), g.num_slots(), trip);

        let mut mass = vec![0.0; g.num_slots()];
        for k in 0..nl {
            for j in 0..n {
                for i in 0..n {
                    mass[g.u_slot(i, j, k)] = vol;
                    mass[g.v_slot(i, j, k)] = vol;
                }
            }
        }
        for k in 0..=nl {
            let m = if k == 0 || k == nl { 0.5 * vol } else { vol };
            for j in 0..n {
                for i in 0..n {
                    mass[g.w_slot(i, j, k)] = m;
                }
            }
        }

        let mut dtrip = Vec::with_capacity(6 * g.num_cells());
        for k in 0..nl {
            for j in 0..n {
                for i in 0..n {
                    let c = g.cell(i, j, k);
                    let (ip, jp) = (g.next(i), g.next(j));
                    let (ax, az) = (-vol * ix, -vol * iz);
                    dtrip.push((c, g.u_slot(ip, j, k), ax));
                    dtrip.push((c, g.u_slot(i, j, k), -ax));
                    dtrip.push((c, g.v_slot(i, jp, k), ax));
                    dtrip.push((c, g.v_slot(i, j, k), -ax));
                    dtrip.push((c, g.w_slot(i, j, k + 1), az));
                    dtrip.push((c, g.w_slot(i, j, k), -az));
                }
            }
        }
        let div = CsrMatrix::from_triplets(g.num_cells(), g.num_slots(), dtrip);
        BulkOperators {
            strain,
            weights,
            mass,
            div,
        }
    }
}

/// Rows of the trace map `P`: the six interface values `(ξ⁺, ξ⁻)` at the
/// center of `Σ` cell `(i, j)`, tangential traces averaged from the two
/// neighbouring faces and the shared normal face used on both sides.
pub(crate) fn trace_rows(g: &BulkGrid, i: usize, j: usize) -> [Vec<(usize, f64)>; 6] {
    let (ip, jp) = (g.next(i), g.next(j));
    let w = g.w_slot(i, j, g.n_z);
    let side = |s: Side| {
        [
            vec![
                (g.trace_slot(s, 0, i, j), 0.5),
                (g.trace_slot(s, 0, ip, j), 0.5),
            ],
            vec![
                (g.trace_slot(s, 1, i, j), 0.5),
                (g.trace_slot(s, 1, i, jp), 0.5),
            ],
            vec![(w, 1.0)],
        ]
    };
    let [p0, p1, p2] = side(Side::Plus);
    let [m0, m1, m2] = side(Side::Minus);
    [p0, p1, p2, m0, m1, m2]
}

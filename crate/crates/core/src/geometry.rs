//! Voxelized reference cell `Y × (-1, 1)` with `Y = (0, 1)²`.
//!
//! The cell is sampled on an `n × n × 2n` grid of cubic voxels of edge `1/n`.
//! The first two indices wrap periodically; the third runs from the bottom
//! face `S⁻` (`y₃ = -1`) to the top face `S⁺` (`y₃ = +1`). Every voxel is
//! either [`Phase::Fluid`] or [`Phase::Solid`], decided by whether its center
//! lies in one of the (periodically wrapped) solid primitives.

use std::collections::VecDeque;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible voxels-per-unit-length.
pub const MIN_RESOLUTION: usize = 4;

/// Slack used when checking that primitives stay inside `-1 ≤ y₃ ≤ 1`.
const EXTENT_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("resolution {resolution} is below the minimum of {MIN_RESOLUTION}")]
    ResolutionTooSmall { resolution: usize },
    #[error("solid primitive #{index} leaves the cell: {reason}")]
    PrimitiveOutsideCell { index: usize, reason: String },
    #[error("solid primitive #{index} is malformed: {reason}")]
    InvalidPrimitive { index: usize, reason: String },
    #[error("phase array has {got} entries, expected {expected}")]
    PhaseShape { got: usize, expected: usize },
    #[error("cell failed validation: {reason}")]
    Invalid {
        reason: String,
        report: Box<ValidationReport>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Solid primitive in cell coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    /// Axis-aligned box, bounds inclusive.
    Box {
        min: [f64; 3],
        max: [f64; 3],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Circular cylinder of the given `length` along `axis`, centered at `center`.
    Cylinder {
        axis: Axis,
        center: [f64; 3],
        radius: f64,
        length: f64,
    },
}

impl Primitive {
    /// Closed-set membership (points on the boundary count as inside).
    pub fn contains(&self, p: [f64; 3]) -> bool {
        match *self {
            Primitive::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
            Primitive::Sphere { center, radius } => {
                let d2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
                d2 <= radius * radius
            }
            Primitive::Cylinder {
                axis,
                center,
                radius,
                length,
            } => {
                let ax = axis.index();
                let d2: f64 = (0..3)
                    .filter(|&a| a != ax)
                    .map(|a| (p[a] - center[a]).powi(2))
                    .sum();
                d2 <= radius * radius && (p[ax] - center[ax]).abs() <= 0.5 * length
            }
        }
    }

    /// Membership after wrapping the two lateral directions with period one.
    pub fn contains_periodic(&self, p: [f64; 3]) -> bool {
        for sx in [-1.0, 0.0, 1.0] {
            for sy in [-1.0, 0.0, 1.0] {
                if self.contains([p[0] + sx, p[1] + sy, p[2]]) {
                    return true;
                }
            }
        }
        false
    }

    /// Vertical extent `(min y₃, max y₃)`.
    fn vertical_extent(&self) -> (f64, f64) {
        match *self {
            Primitive::Box { min, max } => (min[2], max[2]),
            Primitive::Sphere { center, radius } => (center[2] - radius, center[2] + radius),
            Primitive::Cylinder {
                axis,
                center,
                radius,
                length,
            } => match axis {
                Axis::Z => (center[2] - 0.5 * length, center[2] + 0.5 * length),
                _ => (center[2] - radius, center[2] + radius),
            },
        }
    }

    fn check(&self, index: usize) -> Result<(), GeometryError> {
        let bad = |reason: String| GeometryError::InvalidPrimitive { index, reason };
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Primitive::Box { min, max } => {
                if !finite(min) || !finite(max) {
                    return Err(bad("non-finite bounds".into()));
                }
                if (0..3).any(|a| min[a] > max[a]) {
                    return Err(bad(format!("min {min:?} exceeds max {max:?}")));
                }
            }
            Primitive::Sphere { center, radius } => {
                if !finite(center) || !radius.is_finite() || *radius <= 0.0 {
                    return Err(bad(format!("radius {radius} must be positive and finite")));
                }
            }
            Primitive::Cylinder {
                center,
                radius,
                length,
                ..
            } => {
                if !finite(center) || !radius.is_finite() || *radius <= 0.0 {
                    return Err(bad(format!("radius {radius} must be positive and finite")));
                }
                if !length.is_finite() || *length <= 0.0 {
                    return Err(bad(format!("length {length} must be positive and finite")));
                }
            }
        }
        let (lo, hi) = self.vertical_extent();
        if lo < -1.0 - EXTENT_SLACK || hi > 1.0 + EXTENT_SLACK {
            return Err(GeometryError::PrimitiveOutsideCell {
                index,
                reason: format!("vertical extent [{lo}, {hi}] is not inside [-1, 1]"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MicrostructureSpec {
    /// Voxels per unit length; the cell grid is `n × n × 2n`.
    pub resolution: usize,
    #[serde(default)]
    pub solids: Vec<Primitive>,
    /// Require that no solid voxel touches `S⁺` or `S⁻`.
    #[serde(default)]
    pub clearance_check: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Phase {
    Fluid = 0,
    Solid = 1,
}

/// A voxel face separating a fluid voxel from a solid one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterfaceFace {
    pub fluid: usize,
    pub solid: usize,
    /// Normal direction of the face.
    pub axis: Axis,
}

/// A voxel face on `S⁺` or `S⁻`, labelled by the phase of the voxel below/above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryFace {
    pub voxel: usize,
    pub phase: Phase,
}

/// Volumes and areas of the discrete cell, all exact voxel/face sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMeasures {
    pub fluid_volume: f64,
    pub solid_volume: f64,
    pub gamma_area: f64,
    pub s_plus_fluid: f64,
    pub s_minus_fluid: f64,
    pub s_plus_solid: f64,
    pub s_minus_solid: f64,
}

impl CellMeasures {
    pub fn has_clearance(&self) -> bool {
        self.s_plus_solid == 0.0 && self.s_minus_solid == 0.0
    }
}

/// Which macroscopic flow coupling the cell supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembraneMode {
    /// `|S_s^±| = 0`: effective interface laws couple the bulk flows.
    Coupled,
    /// `|S_s^+| > 0` and `|S_s^-| > 0`: `Σ` is a no-slip wall.
    Impermeable,
    /// Solid touches exactly one of `S^±`; no reduced model is available.
    MixedUnsupported,
}

#[derive(Debug, Clone)]
pub struct ReferenceCell {
    n: usize,
    phase: Vec<Phase>,
    gamma_faces: Vec<InterfaceFace>,
    s_plus_faces: Vec<BoundaryFace>,
    s_minus_faces: Vec<BoundaryFace>,
    measures: CellMeasures,
    clearance_required: bool,
}

/// Builds the voxel cell from a microstructure description.
pub fn build_cell(spec: &MicrostructureSpec) -> Result<ReferenceCell, GeometryError> {
    let n = spec.resolution;
    if n < MIN_RESOLUTION {
        return Err(GeometryError::ResolutionTooSmall { resolution: n });
    }
    for (index, prim) in spec.solids.iter().enumerate() {
        prim.check(index)?;
    }
    let h = 1.0 / n as f64;
    let mut phase = vec![Phase::Fluid; 2 * n * n * n];
    for k in 0..2 * n {
        let z = -1.0 + (k as f64 + 0.5) * h;
        for j in 0..n {
            let y = (j as f64 + 0.5) * h;
            for i in 0..n {
                let x = (i as f64 + 0.5) * h;
                if spec.solids.iter().any(|s| s.contains_periodic([x, y, z])) {
                    phase[i + n * (j + n * k)] = Phase::Solid;
                }
            }
        }
    }
    let mut cell = ReferenceCell::from_phases(n, phase)?;
    cell.clearance_required = spec.clearance_check;
    Ok(cell)
}

impl ReferenceCell {
    /// Wraps an explicit phase array laid out as `i + n (j + n k)`.
    pub fn from_phases(n: usize, phase: Vec<Phase>) -> Result<Self, GeometryError> {
        if n < MIN_RESOLUTION {
            return Err(GeometryError::ResolutionTooSmall { resolution: n });
        }
        let expected = 2 * n * n * n;
        if phase.len() != expected {
            return Err(GeometryError::PhaseShape {
                got: phase.len(),
                expected,
            });
        }
        let mut cell = ReferenceCell {
            n,
            phase,
            gamma_faces: Vec::new(),
            s_plus_faces: Vec::new(),
            s_minus_faces: Vec::new(),
            measures: CellMeasures {
                fluid_volume: 0.0,
                solid_volume: 0.0,
                gamma_area: 0.0,
                s_plus_fluid: 0.0,
                s_minus_fluid: 0.0,
                s_plus_solid: 0.0,
                s_minus_solid: 0.0,
            },
            clearance_required: false,
        };
        cell.extract_faces();
        Ok(cell)
    }

    fn extract_faces(&mut self) {
        let n = self.n;
        let nz = 2 * n;
        let mut gamma = Vec::new();
        for k in 0..nz {
            for j in 0..n {
                for i in 0..n {
                    let a = self.index(i, j, k);
                    let mut pair = |b: usize, axis: Axis| {
                        let (pa, pb) = (self.phase[a], self.phase[b]);
                        if pa != pb {
                            let (fluid, solid) = if pa == Phase::Fluid { (a, b) } else { (b, a) };
                            gamma.push(InterfaceFace { fluid, solid, axis });
                        }
                    };
                    pair(self.index((i + 1) % n, j, k), Axis::X);
                    pair(self.index(i, (j + 1) % n, k), Axis::Y);
                    if k + 1 < nz {
                        pair(self.index(i, j, k + 1), Axis::Z);
                    }
                }
            }
        }
        let mut bottom = Vec::with_capacity(n * n);
        let mut top = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let lo = self.index(i, j, 0);
                let hi = self.index(i, j, nz - 1);
                bottom.push(BoundaryFace {
                    voxel: lo,
                    phase: self.phase[lo],
                });
                top.push(BoundaryFace {
                    voxel: hi,
                    phase: self.phase[hi],
                });
            }
        }
        let count =
            |faces: &[BoundaryFace], p: Phase| faces.iter().filter(|f| f.phase == p).count();
        let n_fluid = self.phase.iter().filter(|&&p| p == Phase::Fluid).count();
        let n_solid = self.phase.len() - n_fluid;
        let vol = self.voxel_volume();
        let area = self.face_area();
        self.measures = CellMeasures {
            fluid_volume: n_fluid as f64 * vol,
            solid_volume: n_solid as f64 * vol,
            gamma_area: gamma.len() as f64 * area,
            s_plus_fluid: count(&top, Phase::Fluid) as f64 * area,
            s_minus_fluid: count(&bottom, Phase::Fluid) as f64 * area,
            s_plus_solid: count(&top, Phase::Solid) as f64 * area,
            s_minus_solid: count(&bottom, Phase::Solid) as f64 * area,
        };
        self.gamma_faces = gamma;
        self.s_plus_faces = top;
        self.s_minus_faces = bottom;
    }

    /// Voxels per unit length.
    pub fn resolution(&self) -> usize {
        self.n
    }

    /// Grid dimensions `[n, n, 2n]`.
    pub fn dims(&self) -> [usize; 3] {
        [self.n, self.n, 2 * self.n]
    }

    pub fn num_voxels(&self) -> usize {
        self.phase.len()
    }

    pub fn voxel_size(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn voxel_volume(&self) -> f64 {
        let h = self.voxel_size();
        h * h * h
    }

    pub fn face_area(&self) -> f64 {
        let h = self.voxel_size();
        h * h
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.n;
        (idx % n, (idx / n) % n, idx / (n * n))
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let h = self.voxel_size();
        [
            (i as f64 + 0.5) * h,
            (j as f64 + 0.5) * h,
            -1.0 + (k as f64 + 0.5) * h,
        ]
    }

    #[inline]
    pub fn phase(&self, idx: usize) -> Phase {
        self.phase[idx]
    }

    #[inline]
    pub fn phase_at(&self, i: usize, j: usize, k: usize) -> Phase {
        self.phase[self.index(i, j, k)]
    }

    #[inline]
    pub fn is_fluid(&self, i: usize, j: usize, k: usize) -> bool {
        self.phase_at(i, j, k) == Phase::Fluid
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phase
    }

    /// Discrete `Γ`: every fluid/solid face adjacency, including across the lateral wrap.
    pub fn gamma_faces(&self) -> &[InterfaceFace] {
        &self.gamma_faces
    }

    pub fn s_plus_faces(&self) -> &[BoundaryFace] {
        &self.s_plus_faces
    }

    pub fn s_minus_faces(&self) -> &[BoundaryFace] {
        &self.s_minus_faces
    }

    pub fn measures(&self) -> &CellMeasures {
        &self.measures
    }

    pub fn clearance_required(&self) -> bool {
        self.clearance_required
    }

    pub fn mode(&self) -> MembraneMode {
        let m = &self.measures;
        match (m.s_plus_solid > 0.0, m.s_minus_solid > 0.0) {
            (false, false) => MembraneMode::Coupled,
            (true, true) => MembraneMode::Impermeable,
            _ => MembraneMode::MixedUnsupported,
        }
    }

    /// Face neighbours of a voxel: lateral directions wrap, vertical ones stop at `S^±`.
    pub fn face_neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.n;
        let (i, j, k) = self.coords(idx);
        let lateral = [
            self.index((i + 1) % n, j, k),
            self.index((i + n - 1) % n, j, k),
            self.index(i, (j + 1) % n, k),
            self.index(i, (j + n - 1) % n, k),
        ];
        let up = (k + 1 < 2 * n).then(|| self.index(i, j, k + 1));
        let down = (k > 0).then(|| self.index(i, j, k - 1));
        lateral.into_iter().chain(up).chain(down)
    }

    fn all_neighbors(&self, idx: usize) -> Vec<usize> {
        let n = self.n as isize;
        let (i, j, k) = self.coords(idx);
        let mut out = Vec::with_capacity(26);
        for dk in -1isize..=1 {
            let kk = k as isize + dk;
            if kk < 0 || kk >= 2 * n {
                continue;
            }
            for dj in -1isize..=1 {
                for di in -1isize..=1 {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let ii = (i as isize + di).rem_euclid(n) as usize;
                    let jj = (j as isize + dj).rem_euclid(n) as usize;
                    out.push(self.index(ii, jj, kk as usize));
                }
            }
        }
        out
    }

    /// Connected components of `phase`, returned as a label per voxel
    /// (`usize::MAX` for voxels of the other phase) and the component count.
    pub fn components(&self, phase: Phase) -> (Vec<usize>, usize) {
        self.label_components(phase, false)
    }

    fn label_components(&self, phase: Phase, full_stencil: bool) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.phase.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for seed in 0..self.phase.len() {
            if self.phase[seed] != phase || label[seed] != usize::MAX {
                continue;
            }
            label[seed] = count;
            queue.push_back(seed);
            while let Some(v) = queue.pop_front() {
                let nbs: Vec<usize> = if full_stencil {
                    self.all_neighbors(v)
                } else {
                    self.face_neighbors(v).collect()
                };
                for w in nbs {
                    if self.phase[w] == phase && label[w] == usize::MAX {
                        label[w] = count;
                        queue.push_back(w);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Copy of the cell shifted laterally by whole voxels.
    pub fn translated(&self, di: usize, dj: usize) -> ReferenceCell {
        let n = self.n;
        let mut phase = vec![Phase::Fluid; self.phase.len()];
        for k in 0..2 * n {
            for j in 0..n {
                for i in 0..n {
                    phase[self.index((i + di) % n, (j + dj) % n, k)] = self.phase_at(i, j, k);
                }
            }
        }
        let mut out = ReferenceCell::from_phases(n, phase).expect("same shape");
        out.clearance_required = self.clearance_required;
        out
    }
}

/// Outcome of [`validate_cell`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub measures: CellMeasures,
    pub fluid_components: usize,
    pub solid_components: usize,
    pub fluid_connected: bool,
    /// `true` when there is no solid phase at all.
    pub solid_connected: bool,
    pub clearance: bool,
    /// Components of either phase that touch only along voxel edges or corners.
    pub corner_contacts: bool,
    pub mode: MembraneMode,
    pub warnings: Vec<String>,
}

/// Checks connectivity of both phases and, optionally, clearance from `S^±`.
pub fn validate_cell(
    cell: &ReferenceCell,
    require_clearance: bool,
) -> Result<ValidationReport, GeometryError> {
    let (_, fluid_components) = cell.label_components(Phase::Fluid, false);
    let (_, solid_components) = cell.label_components(Phase::Solid, false);
    let (_, fluid_26) = cell.label_components(Phase::Fluid, true);
    let (_, solid_26) = cell.label_components(Phase::Solid, true);
    let measures = *cell.measures();
    let mut warnings = Vec::new();
    let solid_connected = solid_components <= 1;
    if !solid_connected {
        warnings.push(format!(
            "solid phase has {solid_components} face-connected components"
        ));
    }
    let corner_contacts = fluid_26 != fluid_components || solid_26 != solid_components;
    if corner_contacts {
        warnings.push(
            "some components touch only along voxel edges or corners; only faces couple".into(),
        );
    }
    let report = ValidationReport {
        measures,
        fluid_components,
        solid_components,
        fluid_connected: fluid_components == 1,
        solid_connected,
        clearance: measures.has_clearance(),
        corner_contacts,
        mode: cell.mode(),
        warnings,
    };
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if !report.fluid_connected {
        return Err(GeometryError::Invalid {
            reason: format!(
                "fluid phase has {fluid_components} face-connected components, expected 1"
            ),
            report: Box::new(report),
        });
    }
    if require_clearance && !report.clearance {
        return Err(GeometryError::Invalid {
            reason: format!(
                "solid touches the top/bottom faces (|S_s+| = {}, |S_s-| = {})",
                measures.s_plus_solid, measures.s_minus_solid
            ),
            report: Box::new(report),
        });
    }
    Ok(report)
}

/// The measures `(|Z_f|, |Z_s|, |Γ|, |S_f^±|, |S_s^±|)`.
pub fn cell_measures(cell: &ReferenceCell) -> CellMeasures {
    *cell.measures()
}

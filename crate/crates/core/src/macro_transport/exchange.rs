//! Implicit exchange between the fluid trace on `Σ` and the solid unknowns
//! attached to one `Σ` point.

use crate::kinetics::{eval_h, KineticsSpec};

const MAX_NEWTON: usize = 60;
const NEWTON_TOL: f64 = 1e-15;

/// One `Σ` point: the fluid trace `τ` and the solid unknowns `s_m` with
/// volume `V_m` and exchange area `α_m`.
pub(crate) struct ExchangePoint<'a> {
    pub trace: f64,
    pub solid: &'a [f64],
    pub volume: &'a [f64],
    pub area: &'a [f64],
}

/// Exchanged amounts `E_m = dt α_m h(τ_θ, s_{m,θ})` per unit `Σ` area.
///
/// The fluid trace loses `Σ E_m / (2 h_z)` and solid unknown `m` gains
/// `E_m / V_m`; both are solved jointly with the θ-rule
/// `x_θ = x + θ (x⁺ − x)`. Newton with elimination of the solid unknowns,
/// backtracking on the residual.
pub(crate) fn exchange_amounts(
    kin: &KineticsSpec,
    p: &ExchangePoint<'_>,
    dt: f64,
    half_inv_hz: f64,
    theta: f64,
    out: &mut Vec<f64>,
) -> Result<(), f64> {
    let m = p.solid.len();
    let mut tau = p.trace;
    let mut s: Vec<f64> = p.solid.to_vec();
    let c = half_inv_hz;
    let scale = p
        .solid
        .iter()
        .fold(p.trace.abs(), |a, x| a.max(x.abs()))
        .max(1.0);

    let residual = |tau: f64, s: &[f64]| -> (f64, Vec<f64>, f64) {
        let tau_t = p.trace + theta * (tau - p.trace);
        let mut rs = Vec::with_capacity(m);
        let mut total = 0.0;
        for k in 0..m {
            let s_t = p.solid[k] + theta * (s[k] - p.solid[k]);
            let h = eval_h(kin, tau_t, s_t);
            rs.push(s[k] - p.solid[k] - dt * p.area[k] / p.volume[k] * h);
            total += p.area[k] * h;
        }
        let rt = tau - p.trace + dt * c * total;
        let norm = rs.iter().fold(rt.abs(), |a, x| a.max(x.abs()));
        (rt, rs, norm)
    };

    let (mut rt, mut rs, mut norm) = residual(tau, &s);
    let mut iter = 0;
    while norm > NEWTON_TOL * scale {
        if iter == MAX_NEWTON {
            return Err(norm);
        }
        iter += 1;
        let tau_t = p.trace + theta * (tau - p.trace);
        let mut schur = 1.0;
        let mut rhs = -rt;
        let mut jmm = Vec::with_capacity(m);
        let mut jmt = Vec::with_capacity(m);
        for k in 0..m {
            let s_t = p.solid[k] + theta * (s[k] - p.solid[k]);
            let (hc, hs) = kin.partials(tau_t, s_t);
            let g = dt * p.area[k] / p.volume[k];
            let a_mm = 1.0 - theta * g * hs;
            let a_mt = -theta * g * hc;
            let a_tm = theta * dt * c * p.area[k] * hs;
            schur += theta * dt * c * p.area[k] * hc - a_tm * a_mt / a_mm;
            rhs += a_tm * rs[k] / a_mm;
            jmm.push(a_mm);
            jmt.push(a_mt);
        }
        let dtau = rhs / schur;
        let ds: Vec<f64> = (0..m).map(|k| (-rs[k] - jmt[k] * dtau) / jmm[k]).collect();
        let mut step = 1.0;
        loop {
            let tau_try = tau + step * dtau;
            let s_try: Vec<f64> = (0..m).map(|k| s[k] + step * ds[k]).collect();
            let (rt2, rs2, norm2) = residual(tau_try, &s_try);
            if norm2 < norm || step < 1e-6 {
                tau = tau_try;
                s = s_try;
                rt = rt2;
                rs = rs2;
                norm = norm2;
                break;
            }
            step *= 0.5;
        }
    }
    let tau_t = p.trace + theta * (tau - p.trace);
    out.clear();
    for k in 0..m {
        let s_t = p.solid[k] + theta * (s[k] - p.solid[k]);
        out.push(dt * p.area[k] * eval_h(kin, tau_t, s_t));
    }
    Ok(())
}

/// Implicit Euler for `V (x⁺ − x)/dt = α h(a, x⁺)` with `a` frozen.
///
/// `x ↦ V (x − x₀) − dt α h(a, x)` is strictly increasing since `h` is
/// non-increasing in its second argument; Newton is safeguarded by a bracket.
pub(crate) fn implicit_scalar(
    kin: &KineticsSpec,
    a: f64,
    x0: f64,
    volume: f64,
    area: f64,
    dt: f64,
) -> Result<f64, f64> {
    let g = |x: f64| volume * (x - x0) - dt * area * eval_h(kin, a, x);
    let scale = volume * (1.0 + x0.abs().max(a.abs()));
    let tol = NEWTON_TOL * scale;
    let mut x = x0;
    let mut gx = g(x);
    if gx.abs() <= tol {
        return Ok(x);
    }
    // Bracket the root.
    let mut width = 1.0 + x0.abs().max(a.abs());
    let (mut lo, mut hi) = if gx < 0.0 {
        (x, x + width)
    } else {
        (x - width, x)
    };
    let mut guard = 0;
    while g(lo) > 0.0 || g(hi) < 0.0 {
        width *= 2.0;
        if gx < 0.0 {
            hi = x + width;
        } else {
            lo = x - width;
        }
        guard += 1;
        if guard > 200 {
            return Err(gx.abs());
        }
    }
    for _ in 0..200 {
        let (_, hs) = kin.partials(a, x);
        let slope = volume - dt * area * hs;
        let mut next = x - gx / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        x = next;
        gx = g(x);
        if gx.abs() <= tol || hi - lo <= f64::EPSILON * (1.0 + x.abs()) {
            return Ok(x);
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
    }
    Err(gx.abs())
}

//! Boundary measurement functionals, identity residuals and the auxiliary
//! proposition checks.
//!
//! Index convention: field 0 lives on the larger domain `Omega = Omega(b0)`
//! and field 1 on `Omega(b1)`. In Case I the second domain is `Omega \ D`;
//! in Case II field 0 plays `phi_1` and field 1 plays `phi_2`. Normal
//! derivatives are outward; on a bottom curve this is the downward normal.

#![allow(non_snake_case)]

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Between, CavityDescription, Disk, FluidDomain, Profile};
use crate::mesh::{build_mesh, BoundaryTag, Mesh};
use crate::quadrature::{composite_gauss, gauss_legendre};
use crate::solver::{
    boundary_flux, energy, energy_in, integrate_over, solve_potential, surface_pairing, ScalarField,
    SolverOptions, SurfaceTrace, DEFAULT_CUT_DEPTH,
};

/// Measurement sub-interval `[start, end]` of the free surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::config(format!("window needs start < end (got [{start}, {end}])")));
        }
        Ok(Window { start, end })
    }

    pub fn full(width: f64) -> Self {
        Window { start: 0.0, end: width }
    }

    pub fn contains(&self, x: f64) -> bool {
        let tol = 1e-12 * (self.end - self.start).abs().max(1.0);
        x >= self.start - tol && x <= self.end + tol
    }
}

/// Surface data and recovered fluxes of the two potentials.
#[derive(Clone, Debug)]
pub struct MeasurementSet {
    pub psi0: SurfaceTrace,
    pub psi1: SurfaceTrace,
    pub flux0: SurfaceTrace,
    pub flux1: SurfaceTrace,
    pub window: Window,
}

impl MeasurementSet {
    pub fn new(psi0: SurfaceTrace, psi1: SurfaceTrace, flux0: SurfaceTrace, flux1: SurfaceTrace, window: Window) -> Result<Self> {
        for t in [&psi1, &flux0, &flux1] {
            if !psi0.same_support(t) {
                return Err(Error::config("measurement traces live on different TOP node sets"));
            }
        }
        let width = psi0.xs.last().copied().unwrap_or(0.0);
        if window.start < 0.0 || window.end > width * (1.0 + 1e-12) || window.start >= window.end {
            return Err(Error::config(format!(
                "window [{}, {}] must satisfy 0 <= start < end <= {width}",
                window.start, window.end
            )));
        }
        Ok(MeasurementSet { psi0, psi1, flux0, flux1, window })
    }

    fn psi(&self, i: usize) -> &SurfaceTrace {
        if i == 0 { &self.psi0 } else { &self.psi1 }
    }

    fn flux(&self, i: usize) -> &SurfaceTrace {
        if i == 0 { &self.flux0 } else { &self.flux1 }
    }

    /// `W_ij = int psi_i dn(phi_j)` over the whole free surface.
    pub fn w(&self, i: usize, j: usize) -> f64 {
        surface_pairing(self.psi(i), self.flux(j)).expect("supports checked at construction")
    }

    /// `int flux_j psi_0` style pairing with the window ignored.
    fn pair(a: &SurfaceTrace, b: &SurfaceTrace) -> f64 {
        surface_pairing(a, b).expect("supports checked at construction")
    }
}

/// A measurement set together with the two solved potentials.
#[derive(Clone, Debug)]
pub struct Measurement {
    pub set: MeasurementSet,
    pub phi0: ScalarField,
    pub phi1: ScalarField,
}

/// Solves both surface problems and recovers their TOP fluxes.
pub fn measurements(
    mesh0: &Arc<Mesh>,
    mesh1: &Arc<Mesh>,
    psi0: &[f64],
    psi1: &[f64],
    window: Window,
    options: SolverOptions,
) -> Result<Measurement> {
    if !mesh0.same_top(mesh1) {
        return Err(Error::config("the two meshes do not share the free-surface nodes (surface or nx differ)"));
    }
    let t0 = SurfaceTrace::top(mesh0, psi0.to_vec())?;
    let t1 = SurfaceTrace::top(mesh1, psi1.to_vec())?;
    let (phi0, phi1) = rayon::join(
        || solve_potential(mesh0, std::slice::from_ref(&t0), options),
        || solve_potential(mesh1, std::slice::from_ref(&t1), options),
    );
    let (phi0, phi1) = (phi0?, phi1?);
    let flux0 = boundary_flux(&phi0, BoundaryTag::Top)?;
    let flux1 = boundary_flux(&phi1, BoundaryTag::Top)?;
    // Traces of mesh1 carry mesh1 node ids; the geometry is shared.
    let psi1_t = t0.with_values(t1.values)?;
    let flux1 = t0.with_values(flux1.values)?;
    let set = MeasurementSet::new(t0, psi1_t, flux0, flux1, window)?;
    Ok(Measurement { set, phi0, phi1 })
}

/// Both sides of an identity and their discrepancy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub abs: f64,
    /// `abs / |rhs|`, or `abs` itself when the right side vanishes.
    pub rel: f64,
}

impl IdentityResidual {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        let abs = (lhs - rhs).abs();
        let rel = if rhs != 0.0 { abs / rhs.abs() } else { abs };
        IdentityResidual { lhs, rhs, abs, rel }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Residuals {
    /// `int_{Omega\D} |grad(phi - phi0)|^2 + int_D |grad phi0|^2` against surface pairings.
    pub energy: IdentityResidual,
    /// `2 int_{Gamma(b1)} dn(phi0) phi` against surface pairings.
    pub bottom: IdentityResidual,
    pub energy_outer: f64,
    pub energy_cavity: f64,
    pub bottom_pairing: f64,
}

/// Case I identity residuals. `cavity` is `D` between `b0` (lower) and `b1`.
pub fn lemma1_residuals(m: &Measurement, cavity: &CavityDescription) -> Result<Lemma1Residuals> {
    let mesh0 = m.phi0.mesh();
    let mesh1 = m.phi1.mesh();
    let d = cavity.discretized(mesh0.column_xs());
    let phi0_on_1 = m.phi0.interpolate_onto(mesh1.clone())?;
    let diff = ScalarField::from_values(
        mesh1.clone(),
        m.phi1.values().iter().zip(phi0_on_1.values()).map(|(a, b)| a - b).collect(),
    )?;
    let energy_outer = energy(&diff);
    let energy_cavity = energy_in(&m.phi0, &d.positive_part());
    let s = &m.set;
    let (p0, p1, f0, f1) = (&s.psi0, &s.psi1, &s.flux0, &s.flux1);
    let d_psi = p1.zip_with(p0, |a, b| a - b)?;
    let d_flux = f0.zip_with(f1, |a, b| a - b)?;
    let rhs_energy = MeasurementSet::pair(f1, &d_psi) + MeasurementSet::pair(&d_flux, p0);

    let bottom_pairing = gamma_pairing(&m.phi0, &m.phi1)?;
    let sum_psi = p0.zip_with(p1, |a, b| a + b)?;
    let dif_psi = p0.zip_with(p1, |a, b| a - b)?;
    let f_minus = f1.zip_with(f0, |a, b| a - b)?;
    let f_plus = f1.zip_with(f0, |a, b| a + b)?;
    let rhs_bottom = MeasurementSet::pair(&f_minus, &sum_psi) + MeasurementSet::pair(&f_plus, &dif_psi);
    Ok(Lemma1Residuals {
        energy: IdentityResidual::new(energy_outer + energy_cavity, rhs_energy),
        bottom: IdentityResidual::new(2.0 * bottom_pairing, rhs_bottom),
        energy_outer,
        energy_cavity,
        bottom_pairing,
    })
}

/// `int dn(phi_a) phi_b` over the part of the bottom of `phi_b`'s mesh that
/// lies strictly above the bottom of `phi_a`'s mesh, with the downward
/// normal. Both meshes must share their columns.
pub fn gamma_pairing(phi_a: &ScalarField, phi_b: &ScalarField) -> Result<f64> {
    let (ma, mb) = (phi_a.mesh(), phi_b.mesh());
    if ma.column_xs() != mb.column_xs() {
        return Err(Error::config("bottom pairing needs meshes with shared columns"));
    }
    let lower: Vec<f64> = ma.segment_nodes(BoundaryTag::Bottom).iter().map(|&n| ma.nodes[n][1]).collect();
    let nodes_b = mb.segment_nodes(BoundaryTag::Bottom);
    let (gx, gw) = gauss_legendre(3);
    let mut total = 0.0;
    for i in 0..nodes_b.len() - 1 {
        let (p, q) = (mb.nodes[nodes_b[i]], mb.nodes[nodes_b[i + 1]]);
        let (g0, g1) = (p[1] - lower[i], q[1] - lower[i + 1]);
        let tiny = 1e-14;
        let (t0, t1) = match (g0 > tiny, g1 > tiny) {
            (false, false) => continue,
            (true, true) => (0.0, 1.0),
            (true, false) => (0.0, g0 / (g0 - g1)),
            (false, true) => (g0 / (g0 - g1), 1.0),
        };
        if t1 <= t0 {
            continue;
        }
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        let len = (dx * dx + dy * dy).sqrt();
        let normal = [dy / len, -dx / len];
        let (vb0, vb1) = (phi_b.values()[nodes_b[i]], phi_b.values()[nodes_b[i + 1]]);
        for (x, w) in gx.iter().zip(&gw) {
            let t = t0 + 0.5 * (t1 - t0) * (x + 1.0);
            let pt = [p[0] + t * dx, p[1] + t * dy];
            let g = phi_a.recovered_gradient_at(pt[0], pt[1])?;
            let phi = (1.0 - t) * vb0 + t * vb1;
            total += 0.5 * w * (t1 - t0) * len * phi * (g[0] * normal[0] + g[1] * normal[1]);
        }
    }
    Ok(total)
}

fn positive_weight(w: f64, psi: &SurfaceTrace, label: &str) -> Result<f64> {
    let scale: f64 = psi.weights.iter().zip(&psi.values).map(|(w, v)| w * v * v).sum();
    if !(w > 1e-12 * scale) || w <= 0.0 {
        return Err(Error::degenerate(format!(
            "{label} = {w:.3e} is not positive (constant or vanishing surface data)"
        )));
    }
    Ok(w)
}

/// Numerator of the Case I lower functional,
/// `int (dn phi - dn phi0) psi - int dn phi (psi - psi0)`.
pub fn caseI_lower_numerator(ms: &MeasurementSet) -> f64 {
    ms.w(0, 1) - ms.w(1, 0)
}

/// `numerator^2 / (W00 W11)`.
pub fn caseI_lower(ms: &MeasurementSet) -> Result<f64> {
    let w00 = positive_weight(ms.w(0, 0), &ms.psi0, "W00")?;
    let w11 = positive_weight(ms.w(1, 1), &ms.psi1, "W11")?;
    Ok(caseI_lower_numerator(ms).powi(2) / (w00 * w11))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperValue {
    pub value: f64,
    pub numerator: f64,
}

/// `(int dn phi (psi - psi0) + int (dn phi0 - dn phi) psi0) / W00`.
pub fn caseI_upper(ms: &MeasurementSet) -> Result<UpperValue> {
    let w00 = positive_weight(ms.w(0, 0), &ms.psi0, "W00")?;
    let numerator = ms.w(1, 1) - ms.w(0, 1) + ms.w(0, 0) - ms.w(0, 1);
    Ok(UpperValue { value: numerator / w00, numerator })
}

/// `int [dn phi2 (phi1 - phi2) + (dn phi2 - dn phi1) phi2]` with field 0 as
/// `phi1` and field 1 as `phi2`.
pub fn caseII_lower_numerator(ms: &MeasurementSet) -> f64 {
    ms.w(0, 1) - ms.w(1, 0)
}

/// `numerator^2 / (W11^2 + W22^2)`.
pub fn caseII_lower(ms: &MeasurementSet) -> Result<f64> {
    let w11 = positive_weight(ms.w(0, 0), &ms.psi0, "W11")?;
    let w22 = positive_weight(ms.w(1, 1), &ms.psi1, "W22")?;
    Ok(caseII_lower_numerator(ms).powi(2) / (w11 * w11 + w22 * w22))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseIIUpper {
    /// `int [dn phi1 (phi1 - phi2) + (dn phi2 - dn phi1) phi2]` over the surface.
    pub surface_term: f64,
    /// `||phi2||_{H1(Omega2)} ||phi1 - phi2||_{H1(Omega1 n Omega2)}`.
    pub crossing_term_bound: f64,
    /// `int_I |grad(phi1 - phi2)|^2 + int_{O1\O2} |grad phi1|^2 + int_{O2\O1} |grad phi2|^2`.
    pub energy_sum: f64,
    /// `int_{Gamma_d} phi2 dn phi1` on the part of the second bottom above the first.
    pub gamma_pairing: f64,
    /// `energy_sum` against `surface_term - 2 gamma_pairing`.
    pub decomposition: IdentityResidual,
}

/// Mesh of `Omega1 n Omega2`: shared columns, bottom `max(b1, b2)` at the
/// column nodes.
pub fn intersection_mesh(a: &Mesh, b: &Mesh) -> Result<Mesh> {
    if !a.same_top(b) {
        return Err(Error::config("intersection mesh needs meshes with a shared free surface"));
    }
    let (ba, bb) = (a.segment_nodes(BoundaryTag::Bottom), b.segment_nodes(BoundaryTag::Bottom));
    let knots: Vec<(f64, f64)> = a
        .column_xs()
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, a.nodes[ba[i]][1].max(b.nodes[bb[i]][1])))
        .collect();
    let domain = FluidDomain::with_gap(
        a.width,
        Profile::PiecewiseLinear { knots },
        a.surface_profile(),
        1e-12 * a.width,
    )?;
    build_mesh(&domain, a.nx, a.ny.max(b.ny))
}

pub fn caseII_upper_measurables(m: &Measurement) -> Result<CaseIIUpper> {
    let (ma, mb) = (m.phi0.mesh(), m.phi1.mesh());
    let inter = Arc::new(intersection_mesh(ma, mb)?);
    let a_on = m.phi0.interpolate_onto(inter.clone())?;
    let b_on = m.phi1.interpolate_onto(inter.clone())?;
    let diff = ScalarField::from_values(
        inter.clone(),
        a_on.values().iter().zip(b_on.values()).map(|(x, y)| x - y).collect(),
    )?;
    let (bot_a, bot_b) = (ma.bottom_profile(), mb.bottom_profile());
    let only_a = Between { width: ma.width, lower: &bot_a, upper: &bot_b };
    let only_b = Between { width: ma.width, lower: &bot_b, upper: &bot_a };
    let energy_sum = energy(&diff) + energy_in(&m.phi0, &only_a) + energy_in(&m.phi1, &only_b);

    let s = &m.set;
    let surface_term = s.w(0, 0) + s.w(1, 1) - 2.0 * s.w(1, 0);
    let gamma = gamma_pairing(&m.phi0, &m.phi1)?;
    let crossing_term_bound = m.phi1.h1_norm() * diff.h1_norm();
    Ok(CaseIIUpper {
        surface_term,
        crossing_term_bound,
        energy_sum,
        gamma_pairing: gamma,
        decomposition: IdentityResidual::new(energy_sum, surface_term - 2.0 * gamma),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseIIIMeasurables {
    pub window: Window,
    /// Discrete `H1(Gamma*)` norm of `psi - psi0`.
    pub discrepancy_h1: f64,
    /// `L2(Gamma*)` norm of `dn(phi - phi0)`.
    pub discrepancy_flux: f64,
    /// `||grad phi||_{H1(Omega\D)}` from the recovered gradient.
    pub grad_phi_h1: f64,
    /// `||phi0||_{H1(Omega)}`.
    pub phi0_h1: f64,
}

impl CaseIIIMeasurables {
    pub fn total_discrepancy(&self) -> f64 {
        self.discrepancy_h1 + self.discrepancy_flux
    }
}

/// Window discrepancies and the field norms of the partial-measurement bound.
pub fn caseIII_upper_measurables(m: &Measurement) -> Result<CaseIIIMeasurables> {
    let (h1, flux) = window_discrepancies(&m.set, m.set.window)?;
    Ok(CaseIIIMeasurables {
        window: m.set.window,
        discrepancy_h1: h1,
        discrepancy_flux: flux,
        grad_phi_h1: m.phi1.gradient_h1_norm(),
        phi0_h1: m.phi0.h1_norm(),
    })
}

/// `(||psi - psi0||_{H1(window)}, ||flux - flux0||_{L2(window)})` with
/// trapezoid weights per segment and finite differences in arclength.
pub fn window_discrepancies(ms: &MeasurementSet, window: Window) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..ms.psi0.len()).filter(|&i| window.contains(ms.psi0.xs[i])).collect();
    if idx.len() < 3 {
        return Err(Error::config(format!(
            "window [{}, {}] contains {} surface nodes; at least 3 are needed",
            window.start,
            window.end,
            idx.len()
        )));
    }
    let d: Vec<f64> = idx.iter().map(|&i| ms.psi1.values[i] - ms.psi0.values[i]).collect();
    let e: Vec<f64> = idx.iter().map(|&i| ms.flux1.values[i] - ms.flux0.values[i]).collect();
    let (mut h1, mut l2) = (0.0, 0.0);
    for k in 0..idx.len() - 1 {
        let len = ms.psi0.arclength[idx[k + 1]] - ms.psi0.arclength[idx[k]];
        h1 += 0.5 * len * (d[k] * d[k] + d[k + 1] * d[k + 1]) + (d[k + 1] - d[k]).powi(2) / len;
        l2 += 0.5 * len * (e[k] * e[k] + e[k + 1] * e[k + 1]);
    }
    Ok((h1.sqrt(), l2.sqrt()))
}

/// `(M, 1 / log(M / delta))` for each hypothetical `M > delta`; reported only.
pub fn log_modulus_curve(delta: f64, ms: &[f64]) -> Vec<(f64, f64)> {
    ms.iter()
        .filter(|&&m| m > delta && delta > 0.0)
        .map(|&m| (m, 1.0 / (m / delta).ln()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallnessCheck {
    pub lhs: f64,
    pub total_energy: f64,
    /// `None` when the field has no energy.
    pub ratio: Option<f64>,
}

/// Local energy in `B_rho(center)` against the total energy. The ball must
/// keep distance `3 rho` from the boundary.
pub fn smallness_propagation_check(f: &ScalarField, center: [f64; 2], rho: f64) -> Result<SmallnessCheck> {
    if !(rho > 0.0) {
        return Err(Error::geometry(format!("ball radius must be positive (got {rho})")));
    }
    let m = f.mesh();
    let (bottom, top) = (m.bottom_profile(), m.surface_profile());
    let reach = 4.0 * rho;
    let inside = |x: f64, y: f64| x > 0.0 && x < m.width && y > bottom.value(x) && y < top.value(x);
    let samples = 256;
    let ok = (0..samples).all(|k| {
        let t = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
        inside(center[0] + reach * t.cos(), center[1] + reach * t.sin())
    }) && inside(center[0], center[1]);
    if !ok {
        return Err(Error::geometry(format!(
            "ball of radius {rho} at ({}, {}) is closer than {} to the boundary",
            center[0],
            center[1],
            3.0 * rho
        )));
    }
    let lhs = energy_in(f, &Disk { center, radius: rho });
    let total = energy(f);
    let ratio = if total > 0.0 && lhs > 0.0 { Some(lhs / total) } else { None };
    Ok(SmallnessCheck { lhs, total_energy: total, ratio })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareCheck {
    pub boundary_variance: f64,
    pub bulk_variance: f64,
    pub energy_in_d: f64,
    /// `boundary_variance / (r E_D)`.
    pub boundary_ratio: f64,
    /// `bulk_variance / (r^2 E_D)`.
    pub bulk_ratio: f64,
}

/// Rayleigh-type ratios of the boundary and bulk Poincare inequalities on `D`.
pub fn poincare_check(cavity: &CavityDescription, f: &ScalarField, r: f64) -> Result<PoincareCheck> {
    if !(r > 0.0) {
        return Err(Error::config(format!("r must be positive (got {r})")));
    }
    let area = integrate_over(f.mesh(), cavity, DEFAULT_CUT_DEPTH, |_, _, _| 1.0);
    if area <= 0.0 {
        return Err(Error::degenerate("cavity has zero area"));
    }
    let e_d = energy_in(f, cavity);
    if !(e_d > 1e-300) {
        return Err(Error::degenerate("field has no energy in the cavity (ratios are 0/0)"));
    }
    let mesh = f.mesh();
    let u_at = |t: usize, x: f64, y: f64| {
        let l = mesh.barycentric(t, x, y);
        let n = mesh.triangles[t];
        l[0] * f.values()[n[0]] + l[1] * f.values()[n[1]] + l[2] * f.values()[n[2]]
    };
    let mean = integrate_over(mesh, cavity, DEFAULT_CUT_DEPTH, u_at) / area;
    let bulk = integrate_over(mesh, cavity, DEFAULT_CUT_DEPTH, |t, x, y| (u_at(t, x, y) - mean).powi(2));

    let samples = boundary_samples(cavity);
    let mut vals = Vec::with_capacity(samples.len());
    let mut len = 0.0;
    for &(x, y, w) in &samples {
        vals.push((f.value_at(x, y)?, w));
        len += w;
    }
    let bmean = vals.iter().map(|(v, w)| v * w).sum::<f64>() / len;
    let bvar = vals.iter().map(|(v, w)| w * (v - bmean).powi(2)).sum::<f64>();
    Ok(PoincareCheck {
        boundary_variance: bvar,
        bulk_variance: bulk,
        energy_in_d: e_d,
        boundary_ratio: bvar / (r * e_d),
        bulk_ratio: bulk / (r * r * e_d),
    })
}

/// Quadrature points `(x, y, arclength weight)` on the boundary of `D`.
fn boundary_samples(c: &CavityDescription) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    let open = |x: f64| (c.upper.value(x) - c.lower.value(x)).abs() > 1e-14;
    let mut edges = c.lower.breakpoints(c.width);
    edges.extend(c.upper.breakpoints(c.width));
    edges.extend([0.0, c.width]);
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    for w in edges.windows(2) {
        for (x, wt) in composite_gauss(w[0], w[1], 64, 3) {
            if !open(x) {
                continue;
            }
            for p in [&c.lower, &c.upper] {
                let s = p.slope(x);
                out.push((x, p.value(x), wt * (1.0 + s * s).sqrt()));
            }
        }
    }
    for x in [0.0, c.width] {
        let (a, b) = (c.lower.value(x), c.upper.value(x));
        if (b - a).abs() > 1e-14 {
            for (y, wt) in composite_gauss(a.min(b), a.max(b), 16, 3) {
                out.push((x, y, wt));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseLabel {
    #[serde(rename = "I")]
    CaseI,
    #[serde(rename = "II")]
    CaseII,
    #[serde(rename = "III")]
    CaseIII,
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseLabel::CaseI => "I",
            CaseLabel::CaseII => "II",
            CaseLabel::CaseIII => "III",
        })
    }
}

/// One configuration's functionals, residuals and energy terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeEstimateReport {
    pub case: CaseLabel,
    pub parameter: f64,
    pub datum: String,
    pub nx: usize,
    pub ny: usize,
    /// `|D|`, or `|Omega1 sym-diff Omega2|` in Case II.
    pub area: f64,
    pub area_plus: f64,
    pub area_minus: f64,
    pub w00: Option<f64>,
    pub w01: Option<f64>,
    pub w10: Option<f64>,
    pub w11: Option<f64>,
    pub eta_lower: Option<f64>,
    pub eta_upper: Option<f64>,
    pub numerator_lower: Option<f64>,
    pub numerator_upper: Option<f64>,
    pub energy_outer: Option<f64>,
    pub energy_cavity: Option<f64>,
    pub bottom_pairing: Option<f64>,
    pub residual_energy_abs: Option<f64>,
    pub residual_energy_rel: Option<f64>,
    pub residual_bottom_abs: Option<f64>,
    pub residual_bottom_rel: Option<f64>,
    pub windows: Vec<CaseIIIMeasurables>,
    pub error: Option<String>,
}

impl SizeEstimateReport {
    pub fn empty(case: CaseLabel, parameter: f64, datum: &str, nx: usize, ny: usize) -> Self {
        SizeEstimateReport {
            case,
            parameter,
            datum: datum.to_string(),
            nx,
            ny,
            area: 0.0,
            area_plus: 0.0,
            area_minus: 0.0,
            w00: None,
            w01: None,
            w10: None,
            w11: None,
            eta_lower: None,
            eta_upper: None,
            numerator_lower: None,
            numerator_upper: None,
            energy_outer: None,
            energy_cavity: None,
            bottom_pairing: None,
            residual_energy_abs: None,
            residual_energy_rel: None,
            residual_bottom_abs: None,
            residual_bottom_rel: None,
            windows: Vec::new(),
            error: None,
        }
    }

    /// Column names of [`SizeEstimateReport::csv_row`].
    pub const CSV_HEADER: &'static str = "case,parameter,datum,nx,ny,area,area_plus,area_minus,\
w00,w01,w10,w11,eta_lower,eta_upper,numerator_lower,numerator_upper,\
energy_outer,energy_cavity,bottom_pairing,residual_energy_abs,residual_energy_rel,\
residual_bottom_abs,residual_bottom_rel,error";

    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(|v| format!("{v:.17e}")).unwrap_or_default();
        let err = self.error.as_deref().unwrap_or("").replace(['"', ',', '\n'], " ");
        format!(
            "{},{:.17e},{},{},{},{:.17e},{:.17e},{:.17e},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.case,
            self.parameter,
            self.datum,
            self.nx,
            self.ny,
            self.area,
            self.area_plus,
            self.area_minus,
            o(self.w00),
            o(self.w01),
            o(self.w10),
            o(self.w11),
            o(self.eta_lower),
            o(self.eta_upper),
            o(self.numerator_lower),
            o(self.numerator_upper),
            o(self.energy_outer),
            o(self.energy_cavity),
            o(self.bottom_pairing),
            o(self.residual_energy_abs),
            o(self.residual_energy_rel),
            o(self.residual_bottom_abs),
            o(self.residual_bottom_rel),
            err
        )
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let o = |v: Option<f64>| v.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
        writeln!(w, "case {} | parameter {} | datum {} | mesh {}x{}", self.case, self.parameter, self.datum, self.nx, self.ny)?;
        writeln!(w, "  area            {:.6e} (+{:.6e} / -{:.6e})", self.area, self.area_plus, self.area_minus)?;
        writeln!(w, "  W00 W01 W10 W11 {} {} {} {}", o(self.w00), o(self.w01), o(self.w10), o(self.w11))?;
        writeln!(w, "  eta lower/upper {} / {}", o(self.eta_lower), o(self.eta_upper))?;
        writeln!(w, "  numerators      {} / {}", o(self.numerator_lower), o(self.numerator_upper))?;
        if self.energy_outer.is_some() {
            writeln!(
                w,
                "  energies        outer {} cavity {} bottom pairing {}",
                o(self.energy_outer),
                o(self.energy_cavity),
                o(self.bottom_pairing)
            )?;
            writeln!(
                w,
                "  residuals       energy {} (rel {}) bottom {} (rel {})",
                o(self.residual_energy_abs),
                o(self.residual_energy_rel),
                o(self.residual_bottom_abs),
                o(self.residual_bottom_rel)
            )?;
        }
        for win in &self.windows {
            writeln!(
                w,
                "  window [{}, {}]  H1 {:.6e}  flux {:.6e}",
                win.window.start, win.window.end, win.discrepancy_h1, win.discrepancy_flux
            )?;
        }
        if let Some(e) = &self.error {
            writeln!(w, "  error: {e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Profile;
    use std::f64::consts::PI;

    fn mesh(bottom: Profile, nx: usize, ny: usize) -> Arc<Mesh> {
        Arc::new(build_mesh(&FluidDomain::new(1.0, bottom, Profile::flat(1.0)).unwrap(), nx, ny).unwrap())
    }

    fn top_values(m: &Mesh, f: impl Fn(f64) -> f64) -> Vec<f64> {
        m.column_xs().iter().map(|&x| f(x)).collect()
    }

    fn case_one(a: f64, nx: usize, ny: usize) -> (Measurement, CavityDescription) {
        let m0 = mesh(Profile::flat(0.0), nx, ny);
        let m1 = mesh(Profile::bump(a, 0.5, 0.25), nx, ny);
        let psi = top_values(&m0, |x| (PI * x).cos());
        let ms = measurements(&m0, &m1, &psi, &psi, Window::full(1.0), SolverOptions::default()).unwrap();
        let c = CavityDescription::new(1.0, Profile::flat(0.0), Profile::bump(a, 0.5, 0.25)).unwrap();
        (ms, c)
    }

    #[test]
    fn equal_problems_give_equal_fluxes_and_zero_functionals() {
        let m = mesh(Profile::flat(0.0), 16, 8);
        let psi = top_values(&m, |x| (PI * x).cos() + 0.2 * x);
        let ms = measurements(&m, &m, &psi, &psi, Window::full(1.0), SolverOptions::default()).unwrap();
        assert_eq!(ms.set.flux0.values, ms.set.flux1.values);
        assert_eq!(caseI_lower(&ms.set).unwrap(), 0.0);
        assert!(caseI_upper(&ms.set).unwrap().value.abs() < 1e-12);
        assert_eq!(caseII_lower(&ms.set).unwrap(), 0.0);
        let c = CavityDescription::new(1.0, Profile::flat(0.0), Profile::flat(0.0)).unwrap();
        let r = lemma1_residuals(&ms, &c).unwrap();
        assert!(r.energy.abs < 1e-10 && r.bottom.abs < 1e-10);
        let iii = caseIII_upper_measurables(&ms).unwrap();
        assert_eq!(iii.total_discrepancy(), 0.0);
        let ii = caseII_upper_measurables(&ms).unwrap();
        assert!(ii.surface_term.abs() < 1e-12 && ii.decomposition.abs < 1e-12);
    }

    #[test]
    fn constant_data_has_zero_fluxes_and_degenerate_weights() {
        let m0 = mesh(Profile::flat(0.0), 16, 8);
        let m1 = mesh(Profile::bump(0.1, 0.5, 0.25), 16, 8);
        let psi = vec![1.5; 17];
        let ms = measurements(&m0, &m1, &psi, &psi, Window::full(1.0), SolverOptions::default()).unwrap();
        assert!(ms.set.flux0.values.iter().chain(&ms.set.flux1.values).all(|v| v.abs() < 1e-9));
        assert!(matches!(caseI_lower(&ms.set), Err(Error::Degenerate(_))));
        let c = CavityDescription::new(1.0, Profile::flat(0.0), Profile::bump(0.1, 0.5, 0.25)).unwrap();
        let r = lemma1_residuals(&ms, &c).unwrap();
        for v in [r.energy.lhs, r.energy.rhs, r.bottom.lhs, r.bottom.rhs] {
            assert!(v.abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn mismatched_tops_are_rejected() {
        let m0 = mesh(Profile::flat(0.0), 16, 8);
        let m1 = mesh(Profile::flat(0.0), 8, 8);
        let psi = vec![0.0; 17];
        let err = measurements(&m0, &m1, &psi, &psi[..9], Window::full(1.0), SolverOptions::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn flux_ratio_of_two_strip_depths() {
        let m0 = mesh(Profile::flat(0.0), 64, 32);
        let m1 = mesh(Profile::flat(0.2), 64, 32);
        let psi = top_values(&m0, |x| (PI * x).cos());
        let ms = measurements(&m0, &m1, &psi, &psi, Window::full(1.0), SolverOptions::default()).unwrap();
        let ratio = ms.set.w(1, 1) / ms.set.w(0, 0);
        let exact = (0.8 * PI).tanh() / PI.tanh();
        assert!((ratio - exact).abs() < 1e-3, "{ratio} vs {exact}");
    }

    #[test]
    fn surface_fluxes_have_zero_mean() {
        let (ms, _) = case_one(0.1, 32, 16);
        for f in [&ms.set.flux0, &ms.set.flux1] {
            assert!(f.weights.iter().zip(&f.values).map(|(w, v)| w * v).sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn lemma1_identities_hold_on_a_bump() {
        let (coarse_ms, c) = case_one(0.1, 32, 16);
        let coarse = lemma1_residuals(&coarse_ms, &c).unwrap();
        let (ms, c) = case_one(0.1, 64, 32);
        let r = lemma1_residuals(&ms, &c).unwrap();
        assert!(r.energy.rhs > 0.0);
        assert!(r.energy.rel < 0.08 && r.energy.rel < coarse.energy.rel / 3.0, "{r:?}");
        assert!(r.bottom.rel < 0.08 && r.bottom.rel < coarse.bottom.rel / 3.0, "{r:?}");
        // The lower numerator is the bottom pairing.
        let num = caseI_lower_numerator(&ms.set);
        assert!((num - r.bottom.rhs / 2.0).abs() < 1e-12 * num.abs());
        let up = caseI_upper(&ms.set).unwrap();
        assert!((up.numerator - r.energy.rhs).abs() < 1e-12);
    }

    #[test]
    fn case_one_functionals_grow_with_amplitude() {
        let (small, _) = case_one(0.05, 32, 16);
        let (large, _) = case_one(0.10, 32, 16);
        assert!(caseI_lower(&large.set).unwrap() > caseI_lower(&small.set).unwrap());
        assert!(caseI_upper(&large.set).unwrap().value > caseI_upper(&small.set).unwrap().value);
    }

    #[test]
    fn case_two_relabels_case_one() {
        let (coarse, _) = case_one(0.1, 32, 16);
        let coarse = caseII_upper_measurables(&coarse).unwrap();
        let (ms, _) = case_one(0.1, 64, 32);
        assert_eq!(caseII_lower_numerator(&ms.set), caseI_lower_numerator(&ms.set));
        let ii = caseII_upper_measurables(&ms).unwrap();
        let bottom = gamma_pairing(&ms.phi0, &ms.phi1).unwrap();
        assert_eq!(ii.gamma_pairing, bottom);
        assert!(ii.decomposition.rel < coarse.decomposition.rel / 3.0, "{ii:?}");
        let upper = caseI_upper(&ms.set).unwrap().numerator;
        let lower = caseI_lower_numerator(&ms.set);
        assert!((ii.surface_term - 2.0 * lower - upper).abs() < 1e-12);
    }

    #[test]
    fn crossing_bottoms_decomposition() {
        let lobes = |s: f64| Profile::MultiBump {
            base: 0.0,
            lobes: vec![
                crate::geometry::Lobe { amplitude: 0.08, center: 0.3, halfwidth: 0.2, sign: s },
                crate::geometry::Lobe { amplitude: 0.08, center: 0.7, halfwidth: 0.2, sign: -s },
            ],
        };
        let a = mesh(shifted(lobes(1.0), 0.1), 64, 32);
        let b = mesh(Profile::flat(0.1), 64, 32);
        let psi = top_values(&a, |x| (PI * x).cos());
        let ms = measurements(&a, &b, &psi, &psi, Window::full(1.0), SolverOptions::default()).unwrap();
        let ii = caseII_upper_measurables(&ms).unwrap();
        assert!(ii.energy_sum > 0.0);
        assert!(ii.decomposition.rel < 0.08, "{ii:?}");
        assert!(caseII_lower(&ms.set).unwrap() > 0.0);
        assert!(ii.crossing_term_bound > 0.0);
    }

    fn shifted(p: Profile, base: f64) -> Profile {
        match p {
            Profile::MultiBump { lobes, .. } => Profile::MultiBump { base, lobes },
            other => other,
        }
    }

    #[test]
    fn window_discrepancies_shrink_with_the_window() {
        let (ms, _) = case_one(0.1, 64, 32);
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for (a, b) in [(0.0, 1.0), (0.2, 0.8), (0.4, 0.6)] {
            let d = window_discrepancies(&ms.set, Window::new(a, b).unwrap()).unwrap();
            assert!(d.0 <= prev.0 && d.1 <= prev.1);
            prev = d;
        }
        assert!(matches!(
            window_discrepancies(&ms.set, Window::new(0.5, 0.51).unwrap()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn window_bounds_are_validated() {
        let (ms, _) = case_one(0.1, 8, 4);
        let s = ms.set;
        assert!(MeasurementSet::new(s.psi0.clone(), s.psi1.clone(), s.flux0.clone(), s.flux1, Window { start: -0.1, end: 0.5 }).is_err());
    }

    #[test]
    fn smallness_ratio_is_a_fraction() {
        let m = mesh(Profile::flat(0.0), 32, 32);
        let t = SurfaceTrace::from_fn(&m, BoundaryTag::Top, |x, _| (PI * x).cos());
        let f = solve_potential(&m, &[t], SolverOptions::default()).unwrap();
        let s = smallness_propagation_check(&f, [0.5, 0.5], 0.1).unwrap();
        let r = s.ratio.unwrap();
        assert!(r > 0.0 && r <= 1.0);
        assert!(matches!(smallness_propagation_check(&f, [0.2, 0.5], 0.1), Err(Error::Geometry(_))));
        let c = ScalarField::from_fn(m.clone(), |_, _| 3.0);
        assert_eq!(smallness_propagation_check(&c, [0.5, 0.5], 0.1).unwrap().ratio, None);
    }

    #[test]
    fn poincare_ratios_for_linear_field() {
        let m = mesh(Profile::flat(0.0), 16, 16);
        let d = CavityDescription::new(1.0, Profile::flat(0.0), Profile::flat(1.0)).unwrap();
        let u = ScalarField::from_fn(m.clone(), |x, _| x);
        let p = poincare_check(&d, &u, 1.0).unwrap();
        assert!((p.bulk_ratio - 1.0 / 12.0).abs() < 1e-3);
        // Boundary variance of x over the square's perimeter: mean 1/2, variance 2/12 + 2/4.
        assert!((p.boundary_variance - (2.0 / 12.0 + 0.5)).abs() < 1e-6, "{p:?}");
        let shifted = poincare_check(&d, &u.shifted(5.0), 1.0).unwrap();
        assert!((shifted.bulk_ratio - p.bulk_ratio).abs() < 1e-10);
        assert!((shifted.boundary_ratio - p.boundary_ratio).abs() < 1e-10);
        let c = ScalarField::from_fn(m, |_, _| 2.0);
        assert!(matches!(poincare_check(&d, &c, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn report_serializes_one_row_per_header() {
        let mut r = SizeEstimateReport::empty(CaseLabel::CaseI, 0.1, "mode1", 8, 4);
        r.eta_lower = Some(0.5);
        r.error = Some("bad, value".into());
        let cols = SizeEstimateReport::CSV_HEADER.split(',').count();
        assert_eq!(r.csv_row().split(',').count(), cols);
        let mut text = Vec::new();
        r.write_text(&mut text).unwrap();
        assert!(String::from_utf8(text).unwrap().contains("eta lower/upper 5.000000e-1"));
    }

    #[test]
    fn log_modulus_is_reported_only_above_delta() {
        let curve = log_modulus_curve(0.01, &[0.005, 1.0, 10.0]);
        assert_eq!(curve.len(), 2);
        assert!(curve[0].1 > curve[1].1);
    }
}

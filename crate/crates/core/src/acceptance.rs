//! The acceptance suite: nine criteria, each returning pass/fail with the
//! measured numbers that decided it.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::dtn::{assemble_dtn, dtn_spectrum};
use crate::error::Result;
use crate::functionals::{
    caseI_lower_numerator, measurements, poincare_check, smallness_propagation_check, Window,
};
use crate::geometry::{CavityDescription, FluidDomain, Profile};
use crate::harness::{convergence_study, fit_by_datum, run_sweep, BottomFamily, Datum, SweepPlan};
use crate::mesh::{build_mesh, BoundaryTag, Mesh};
use crate::solver::{
    boundary_flux, energy, solve_potential, surface_pairing, total_boundary_flux, ScalarField, SolverOptions,
    SurfaceTrace,
};

#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    /// Measured values, one per line.
    pub details: Vec<String>,
    pub elapsed: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.elapsed.as_secs_f64()
        )
    }
}

struct Check {
    passed: bool,
    details: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check { passed: true, details: Vec::new() }
    }

    fn require(&mut self, ok: bool, detail: String) {
        self.passed &= ok;
        self.details.push(format!("{} {detail}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, detail: String) {
        self.details.push(format!("info {detail}"));
    }
}

type CriterionFn = fn() -> Result<Check>;

pub const CRITERIA: [(u8, &str); 9] = [
    (1, "strip DtN oracle"),
    (2, "convergence order"),
    (3, "Case I identity suite"),
    (4, "structural invariants"),
    (5, "sign and collapse properties"),
    (6, "sandwich calibration"),
    (7, "Case II identity"),
    (8, "window monotonicity"),
    (9, "auxiliary propositions"),
];

fn function(id: u8) -> CriterionFn {
    match id {
        1 => strip_dtn,
        2 => convergence_order,
        3 => case_one_identities,
        4 => structural_invariants,
        5 => sign_and_collapse,
        6 => sandwich_calibration,
        7 => case_two_identity,
        8 => window_monotonicity,
        _ => auxiliary_propositions,
    }
}

/// Runs one criterion (1 to 9). Errors count as failures.
pub fn run_criterion(id: u8) -> Outcome {
    let (_, title) = CRITERIA[(id as usize).clamp(1, 9) - 1];
    let start = Instant::now();
    let check = function(id)();
    let elapsed = start.elapsed();
    match check {
        Ok(c) => Outcome { id, title, passed: c.passed, details: c.details, elapsed },
        Err(e) => Outcome { id, title, passed: false, details: vec![format!("FAIL error: {e}")], elapsed },
    }
}

/// Runs all nine criteria in order.
pub fn run_all() -> Vec<Outcome> {
    CRITERIA.iter().map(|&(id, _)| run_criterion(id)).collect()
}

/// Amplitudes `0.04, 0.06, ..., 0.16`.
pub fn bump_amplitudes() -> Vec<f64> {
    (0..7).map(|k| (4 + 2 * k) as f64 / 100.0).collect()
}

fn unit_mesh(bottom: Profile, nx: usize, ny: usize) -> Result<Arc<Mesh>> {
    Ok(Arc::new(build_mesh(&FluidDomain::new(1.0, bottom, Profile::flat(1.0))?, nx, ny)?))
}

fn rel_l2(t: &SurfaceTrace, values: &[f64], exact: impl Fn(f64) -> f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..t.len() {
        let e = exact(t.xs[i]);
        num += t.weights[i] * (values[i] - e).powi(2);
        den += t.weights[i] * e * e;
    }
    (num / den).sqrt()
}

fn strip_dtn() -> Result<Check> {
    let mut c = Check::new();
    let start = Instant::now();
    let m = unit_mesh(Profile::flat(0.0), 64, 64)?;
    let g = assemble_dtn(&m, SolverOptions::default())?;
    for k in 1..=4 {
        let kp = k as f64 * PI;
        let psi = SurfaceTrace::from_fn(&m, BoundaryTag::Top, |x, _| (kp * x).cos());
        let q = g.apply(&psi)?;
        let err = rel_l2(&q, &q.values, |x| kp * kp.tanh() * (kp * x).cos());
        c.require(err <= 1e-2, format!("k={k} relative L2 error {err:.3e} (<= 1e-2)"));
    }
    let t = start.elapsed().as_secs_f64();
    c.require(t <= 10.0, format!("runtime {t:.2} s (<= 10 s)"));
    Ok(c)
}

fn convergence_order() -> Result<Check> {
    let mut c = Check::new();
    let d = FluidDomain::strip(1.0, 1.0)?;
    let res: Vec<(usize, usize)> = [16, 32, 64, 128].iter().map(|&n| (n, n)).collect();
    let t = convergence_study(&d, &Datum::Mode { k: 1 }, &res, SolverOptions::default())?;
    for r in &t.rows[1..] {
        let (oh, of) = (r.order_h1.unwrap_or(f64::NAN), r.order_flux.unwrap_or(f64::NAN));
        c.require(of >= 1.5, format!("n={} flux L2 error {:.3e}, order {of:.2} (>= 1.5)", r.nx, r.error_flux));
        c.require(oh >= 0.9, format!("n={} H1 error {:.3e}, order {oh:.2} (>= 0.9)", r.nx, r.error_h1));
    }
    Ok(c)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn case_one_identities() -> Result<Check> {
    let mut c = Check::new();
    let mut plan = SweepPlan::new(BottomFamily::centered_bump(1.0), bump_amplitudes());
    plan.resolutions = vec![(32, 16), (64, 32), (128, 64)];
    let rows = run_sweep(&plan)?;
    for chunk in rows.chunks(3) {
        let a = chunk[0].parameter;
        if let Some(r) = chunk.iter().find(|r| r.error.is_some()) {
            c.require(false, format!("a={a}: {}", r.error.as_deref().unwrap_or("")));
            continue;
        }
        let e: Vec<f64> = chunk.iter().map(|r| r.residual_energy_rel.unwrap_or(f64::NAN)).collect();
        let b: Vec<f64> = chunk.iter().map(|r| r.residual_bottom_rel.unwrap_or(f64::NAN)).collect();
        c.require(
            e[2] <= 1e-2 && strictly_decreasing(&e),
            format!("a={a:.2} energy identity rel {:.3e} / {:.3e} / {:.3e} at 32/64/128 (<= 1e-2, decreasing)", e[0], e[1], e[2]),
        );
        c.require(
            b[2] <= 2e-2 && strictly_decreasing(&b),
            format!("a={a:.2} bottom identity rel {:.3e} / {:.3e} / {:.3e} at 32/64/128 (<= 2e-2, decreasing)", b[0], b[1], b[2]),
        );
    }
    Ok(c)
}

fn field_invariants(c: &mut Check, label: &str, f: &ScalarField) -> Result<()> {
    let e = energy(f);
    let total = total_boundary_flux(f)?;
    c.require(total.abs() <= 1e-10 * e, format!("{label}: total boundary flux {total:.2e} (energy {e:.3e})"));
    let q = boundary_flux(f, BoundaryTag::Top)?;
    let pairing = surface_pairing(&f.trace(BoundaryTag::Top), &q)?;
    let rel = (e - pairing).abs() / e;
    c.require(rel <= 1e-8, format!("{label}: energy identity rel {rel:.2e}"));
    Ok(())
}

fn structural_invariants() -> Result<Check> {
    let mut c = Check::new();
    let s_shape = BottomFamily::s_shape(1.0).member(0.08);
    let meshes = vec![
        ("strip 64x64".to_string(), unit_mesh(Profile::flat(0.0), 64, 64)?),
        ("flat 128x64".to_string(), unit_mesh(Profile::flat(0.0), 128, 64)?),
        ("bump a=0.04 128x64".to_string(), unit_mesh(Profile::bump(0.04, 0.5, 0.25), 128, 64)?),
        ("bump a=0.10 128x64".to_string(), unit_mesh(Profile::bump(0.10, 0.5, 0.25), 128, 64)?),
        ("bump a=0.16 128x64".to_string(), unit_mesh(Profile::bump(0.16, 0.5, 0.25), 128, 64)?),
        ("bump a=0.10 64x32".to_string(), unit_mesh(Profile::bump(0.10, 0.5, 0.25), 64, 32)?),
        ("s-shape a=0.08 128x64".to_string(), unit_mesh(s_shape, 128, 64)?),
    ];
    for (label, m) in &meshes {
        let g = assemble_dtn(m, SolverOptions::default())?;
        c.require(g.asymmetry() <= 1e-10, format!("{label}: DtN asymmetry {:.2e}", g.asymmetry()));
        let spec = dtn_spectrum(&g, g.dim())?;
        let (lmin, lmax) = (spec[0].value, spec[spec.len() - 1].value);
        c.require(lmin >= -1e-9 * lmax, format!("{label}: lambda_min {lmin:.2e}, lambda_max {lmax:.3e}"));
        let dens = g.density_matrix();
        let ones = nalgebra::DVector::from_element(g.dim(), 1.0);
        let kernel = (&dens * &ones).norm() / (dens.norm() * ones.norm());
        c.require(kernel <= 1e-9, format!("{label}: |G 1| / (|G| |1|) = {kernel:.2e}"));
        for d in Datum::dictionary() {
            let psi = d.values(m.column_xs(), 1.0)?;
            let f = solve_potential(m, &[SurfaceTrace::top(m, psi)?], SolverOptions::default())?;
            field_invariants(&mut c, &format!("{label} {}", d.name()), &f)?;
        }
    }
    Ok(c)
}

fn sign_and_collapse() -> Result<Check> {
    let mut c = Check::new();
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for family in [BottomFamily::centered_bump(1.0)] {
        let mut plan = SweepPlan::new(family, bump_amplitudes());
        plan.data = Datum::dictionary();
        plan.resolutions = vec![(32, 16), (64, 32), (128, 64)];
        for r in run_sweep(&plan)? {
            if let Some(e) = &r.error {
                c.require(false, format!("a={} {}: {e}", r.parameter, r.datum));
                continue;
            }
            let ratio = r.numerator_upper.unwrap() / r.w00.unwrap();
            worst = worst.min(ratio);
            count += 1;
        }
    }
    c.require(worst >= -1e-8, format!("min Case I upper numerator / W00 = {worst:.3e} over {count} configurations"));

    let tol = SolverOptions::default().tol;
    for family in [BottomFamily::centered_bump(1.0), BottomFamily::s_shape(1.0)] {
        let mut plan = SweepPlan::new(family.clone(), vec![0.0]);
        plan.data = Datum::dictionary();
        plan.resolutions = vec![(32, 16), (128, 64)];
        plan.windows = vec![Window::full(1.0), Window::new(0.2, 0.8)?];
        for r in run_sweep(&plan)? {
            let mut vals = vec![r.eta_lower, r.eta_upper, r.numerator_lower, r.numerator_upper];
            vals.extend(r.windows.iter().flat_map(|w| [Some(w.discrepancy_h1), Some(w.discrepancy_flux)]));
            let max = vals.iter().map(|v| v.map_or(f64::INFINITY, f64::abs)).fold(0.0, f64::max);
            c.require(
                r.error.is_none() && max <= tol,
                format!("empty cavity {} {} {}x{}: max |functional| {max:.2e} (<= {tol:e})", r.case, r.datum, r.nx, r.ny),
            );
        }
    }
    Ok(c)
}

fn sandwich_calibration() -> Result<Check> {
    let mut c = Check::new();
    let start = Instant::now();
    let mut plan = SweepPlan::new(BottomFamily::centered_bump(1.0), bump_amplitudes());
    plan.data = vec![Datum::Mode { k: 1 }, Datum::Mode { k: 2 }];
    let rows = run_sweep(&plan)?;
    for (datum, fit) in fit_by_datum(&rows) {
        match fit {
            Ok(f) => c.require(
                f.held_out_violations() == 0 && f.zero_area_violations == 0,
                format!(
                    "{datum}: C_lower {:.4e}, C_upper {:.4e}, train {:?}, test {:?}, {} held-out violations",
                    f.c_lower,
                    f.c_upper,
                    f.train_parameters,
                    f.test_parameters,
                    f.held_out_violations()
                ),
            ),
            Err(e) => c.require(false, format!("{datum}: {e}")),
        }
    }
    let t = start.elapsed().as_secs_f64();
    c.require(t <= 300.0, format!("sweep and fit runtime {t:.1} s (<= 300 s)"));
    Ok(c)
}

fn case_two_identity() -> Result<Check> {
    let mut c = Check::new();
    let mut plan = SweepPlan::new(BottomFamily::s_shape(1.0), vec![0.04, 0.08, 0.12]);
    plan.resolutions = vec![(128, 64)];
    for r in run_sweep(&plan)? {
        match (&r.error, r.residual_energy_rel) {
            (None, Some(rel)) => c.require(
                rel <= 2e-2,
                format!(
                    "s-shape a={:.2}: energy decomposition rel {rel:.3e} (<= 2e-2), |sym diff| {:.4e}, eta_lower {:.3e}",
                    r.parameter,
                    r.area,
                    r.eta_lower.unwrap_or(f64::NAN)
                ),
            ),
            (e, _) => c.require(false, format!("s-shape a={}: {}", r.parameter, e.as_deref().unwrap_or("missing"))),
        }
    }

    // Ordered bottoms: phi1 lives on the deeper domain, phi2 on the raised one.
    let m0 = unit_mesh(Profile::flat(0.0), 128, 64)?;
    for a in bump_amplitudes() {
        let m1 = unit_mesh(Profile::bump(a, 0.5, 0.25), 128, 64)?;
        let psi: Vec<f64> = m0.column_xs().iter().map(|&x| (PI * x).cos()).collect();
        let m = measurements(&m0, &m1, &psi, &psi, Window::full(1.0), SolverOptions::default())?;
        let s = &m.set;
        let (p1, p2, f1, f2) = (&s.psi0, &s.psi1, &s.flux0, &s.flux1);
        let case_two = surface_pairing(f2, &p1.zip_with(p2, |a, b| a - b)?)?
            + surface_pairing(&f2.zip_with(f1, |a, b| a - b)?, p2)?;
        let case_one = caseI_lower_numerator(s);
        let rel = (case_two - case_one).abs() / case_one.abs();
        c.require(rel <= 1e-2, format!("bump a={a:.2}: Case II numerator {case_two:.6e} vs Case I numerator {case_one:.6e}, rel {rel:.1e}"));
        let bottom = crate::functionals::gamma_pairing(&m.phi0, &m.phi1)?;
        c.note(format!(
            "bump a={a:.2}: Case II numerator against the bottom pairing {bottom:.6e}, rel {:.3e}",
            (case_two - bottom).abs() / bottom.abs()
        ));
    }
    Ok(c)
}

fn window_monotonicity() -> Result<Check> {
    let mut c = Check::new();
    let windows = vec![Window::full(1.0), Window::new(0.2, 0.8)?, Window::new(0.4, 0.6)?];
    let mut checked = 0;
    let mut bad = Vec::new();
    for family in [BottomFamily::centered_bump(1.0), BottomFamily::s_shape(1.0)] {
        let mut plan = SweepPlan::new(family, bump_amplitudes());
        plan.data = Datum::dictionary();
        plan.resolutions = vec![(64, 32), (128, 64)];
        plan.windows = windows.clone();
        for r in run_sweep(&plan)? {
            if let Some(e) = &r.error {
                bad.push(format!("{} a={} {}: {e}", r.case, r.parameter, r.datum));
                continue;
            }
            checked += 1;
            let ok = r.windows.windows(2).all(|w| {
                w[1].discrepancy_h1 <= w[0].discrepancy_h1 && w[1].discrepancy_flux <= w[0].discrepancy_flux
            });
            if !ok {
                bad.push(format!("{} a={} {} {}x{}", r.case, r.parameter, r.datum, r.nx, r.ny));
            }
        }
    }
    c.require(bad.is_empty(), format!("{checked} configurations, nonincreasing over [0,1] > [0.2,0.8] > [0.4,0.6]"));
    for b in bad {
        c.require(false, b);
    }
    Ok(c)
}

fn auxiliary_propositions() -> Result<Check> {
    let mut c = Check::new();
    let fields = [
        ("unit square mode1", Profile::flat(0.0), Datum::Mode { k: 1 }),
        ("unit square gaussian", Profile::flat(0.0), Datum::Gaussian),
        ("bump a=0.1 mode1", Profile::bump(0.1, 0.5, 0.25), Datum::Mode { k: 1 }),
        ("bump a=0.1 mode3", Profile::bump(0.1, 0.5, 0.25), Datum::Mode { k: 3 }),
    ];
    for (label, bottom, datum) in fields {
        let m = unit_mesh(bottom, 64, 64)?;
        let psi = datum.values(m.column_xs(), 1.0)?;
        let f = solve_potential(&m, &[SurfaceTrace::top(&m, psi)?], SolverOptions::default())?;
        let mut balls = vec![([0.5, 0.55], 0.1), ([0.5, 0.6], 0.05), ([0.3, 0.55], 0.07)];
        if label.starts_with("unit square") {
            balls.push(([0.5, 0.5], 0.1));
        }
        for (center, rho) in balls {
            let s = smallness_propagation_check(&f, center, rho)?;
            let r = s.ratio.unwrap_or(f64::NAN);
            c.require(r > 0.0 && r <= 1.0, format!("{label} ball {center:?} rho {rho}: ratio {r:.4e}"));
        }
    }
    let m = unit_mesh(Profile::flat(0.0), 64, 64)?;
    let d = CavityDescription::new(1.0, Profile::flat(0.0), Profile::flat(1.0))?;
    let u = ScalarField::from_fn(m, |x, _| x);
    let p = poincare_check(&d, &u, 1.0)?;
    let err = (p.bulk_ratio - 1.0 / 12.0).abs();
    c.require(err <= 1e-3, format!("u = x on the unit square: bulk ratio {:.6e} vs 1/12, error {err:.1e}", p.bulk_ratio));
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn amplitude_grid() {
        let a = bump_amplitudes();
        assert_eq!(a.len(), 7);
        assert_eq!(a[0], 0.04);
        assert_eq!(a[6], 0.16);
    }

    #[test]
    fn outcome_line_format() {
        let o = Outcome { id: 4, title: "x", passed: false, details: vec![], elapsed: Duration::from_millis(1500) };
        assert_eq!(o.to_string(), "[FAIL] criterion 4: x (1.5 s)");
    }
}

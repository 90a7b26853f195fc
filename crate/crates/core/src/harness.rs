//! Experiment campaigns: bottom-family sweeps, extremal-ratio constant
//! fitting, and convergence studies against the flat-strip oracle.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{
    caseII_lower, caseII_lower_numerator, caseII_upper_measurables, caseI_lower, caseI_lower_numerator,
    caseI_upper, lemma1_residuals, measurements, window_discrepancies, CaseIIIMeasurables, CaseLabel,
    Measurement, SizeEstimateReport, Window,
};
use crate::geometry::{CavityDescription, FluidDomain, Lobe, Profile};
use crate::mesh::{build_mesh, BoundaryTag, Mesh};
use crate::quadrature::TRIANGLE_7;
use crate::solver::{boundary_flux, solve_potential, ScalarField, SolverOptions, SurfaceTrace};

/// Quadrature order used for `|D|` in sweep rows.
const AREA_QUAD_POINTS: usize = 8;

/// A one-parameter family of second bottoms over a flat reference bottom.
/// The swept parameter is the lobe amplitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BottomFamily {
    /// Raised-cosine bump on the reference level (ordered bottoms, Case I).
    Bump {
        #[serde(default)]
        base: f64,
        center: f64,
        halfwidth: f64,
    },
    /// One raised lobe and one sunken lobe (crossing bottoms, Case II).
    SShape {
        #[serde(default)]
        base: f64,
        centers: [f64; 2],
        halfwidth: f64,
    },
}

impl BottomFamily {
    /// Bump at `L/2` with halfwidth `L/4`.
    pub fn centered_bump(width: f64) -> Self {
        BottomFamily::Bump { base: 0.0, center: 0.5 * width, halfwidth: 0.25 * width }
    }

    /// Lobes at `0.3 L` (raised) and `0.7 L` (sunken), halfwidth `0.2 L`.
    pub fn s_shape(width: f64) -> Self {
        BottomFamily::SShape { base: 0.0, centers: [0.3 * width, 0.7 * width], halfwidth: 0.2 * width }
    }

    pub fn case(&self) -> CaseLabel {
        match self {
            BottomFamily::Bump { .. } => CaseLabel::CaseI,
            BottomFamily::SShape { .. } => CaseLabel::CaseII,
        }
    }

    pub fn reference(&self) -> Profile {
        match *self {
            BottomFamily::Bump { base, .. } | BottomFamily::SShape { base, .. } => Profile::flat(base),
        }
    }

    pub fn member(&self, amplitude: f64) -> Profile {
        match *self {
            BottomFamily::Bump { base, center, halfwidth } => {
                Profile::Bump { base, amplitude, center, halfwidth, sign: 1.0 }
            }
            BottomFamily::SShape { base, centers, halfwidth } => Profile::MultiBump {
                base,
                lobes: vec![
                    Lobe { amplitude, center: centers[0], halfwidth, sign: 1.0 },
                    Lobe { amplitude, center: centers[1], halfwidth, sign: -1.0 },
                ],
            },
        }
    }
}

/// Surface data `psi` used for both potentials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Datum {
    /// `cos(k pi x / L)`; `k = 0` is the constant 1.
    Mode { k: u32 },
    /// `exp(-(x - L/2)^2 / (L/10)^2)` minus its mean.
    Gaussian,
    /// Explicit values at the surface nodes, left to right.
    Nodal { values: Vec<f64> },
}

impl Datum {
    /// Modes 1 to 4 and the centered Gaussian.
    pub fn dictionary() -> Vec<Datum> {
        let mut d: Vec<Datum> = (1..=4).map(|k| Datum::Mode { k }).collect();
        d.push(Datum::Gaussian);
        d
    }

    pub fn name(&self) -> String {
        match self {
            Datum::Mode { k } => format!("mode{k}"),
            Datum::Gaussian => "gaussian".into(),
            Datum::Nodal { .. } => "nodal".into(),
        }
    }

    /// Values at the abscissae `xs` of the surface nodes.
    pub fn values(&self, xs: &[f64], width: f64) -> Result<Vec<f64>> {
        match self {
            Datum::Mode { k } => {
                let kp = *k as f64 * PI / width;
                Ok(xs.iter().map(|&x| (kp * x).cos()).collect())
            }
            Datum::Gaussian => {
                let s = 0.1 * width;
                let g: Vec<f64> = xs.iter().map(|&x| (-((x - 0.5 * width) / s).powi(2)).exp()).collect();
                let mut num = 0.0;
                let mut len = 0.0;
                for k in 0..xs.len().saturating_sub(1) {
                    let h = xs[k + 1] - xs[k];
                    num += 0.5 * h * (g[k] + g[k + 1]);
                    len += h;
                }
                let mean = if len > 0.0 { num / len } else { 0.0 };
                Ok(g.into_iter().map(|v| v - mean).collect())
            }
            Datum::Nodal { values } => {
                if values.len() != xs.len() {
                    return Err(Error::config(format!(
                        "nodal datum has {} values but the surface has {} nodes",
                        values.len(),
                        xs.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("nodal datum contains non-finite values"));
                }
                Ok(values.clone())
            }
        }
    }
}

impl std::str::FromStr for Datum {
    type Err = Error;

    /// Parses `modeK`, `constant` (mode 0) or `gaussian`.
    fn from_str(name: &str) -> Result<Self> {
        let name = name.trim();
        match name {
            "gaussian" => return Ok(Datum::Gaussian),
            "constant" => return Ok(Datum::Mode { k: 0 }),
            _ => {}
        }
        name.strip_prefix("mode")
            .and_then(|k| k.parse::<u32>().ok())
            .map(|k| Datum::Mode { k })
            .ok_or_else(|| Error::config(format!("unknown datum `{name}` (expected modeK, gaussian or constant)")))
    }
}

/// A sweep over amplitudes, data and resolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub width: f64,
    pub surface: Profile,
    pub family: BottomFamily,
    pub amplitudes: Vec<f64>,
    pub data: Vec<Datum>,
    /// `(nx, ny)` pairs.
    pub resolutions: Vec<(usize, usize)>,
    /// Partial-measurement windows evaluated on every row.
    pub windows: Vec<Window>,
    pub solver: SolverOptions,
    /// CSV destination written by [`run_sweep`].
    pub output: Option<PathBuf>,
}

impl SweepPlan {
    /// Unit-width, unit-depth plan with the given family and amplitudes.
    pub fn new(family: BottomFamily, amplitudes: Vec<f64>) -> Self {
        SweepPlan {
            width: 1.0,
            surface: Profile::flat(1.0),
            family,
            amplitudes,
            data: vec![Datum::Mode { k: 1 }],
            resolutions: vec![(128, 64)],
            windows: Vec::new(),
            solver: SolverOptions::default(),
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitudes.is_empty() {
            return Err(Error::config("sweep parameter grid is empty"));
        }
        if self.data.is_empty() {
            return Err(Error::config("sweep has no surface data"));
        }
        if self.resolutions.is_empty() {
            return Err(Error::config("sweep has no resolutions"));
        }
        for &(nx, ny) in &self.resolutions {
            if nx < 2 || ny < 2 {
                return Err(Error::config(format!("sweep resolution {nx}x{ny} is below 2x2")));
            }
        }
        if let Some(a) = self.amplitudes.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::config(format!("amplitudes must be finite and nonnegative (got {a})")));
        }
        FluidDomain::new(self.width, self.family.reference(), self.surface.clone())?;
        for &a in &self.amplitudes {
            FluidDomain::new(self.width, self.family.member(a), self.surface.clone())?;
        }
        for w in &self.windows {
            if w.start < 0.0 || w.end > self.width || w.start >= w.end {
                return Err(Error::config(format!(
                    "window [{}, {}] is not inside [0, {}]",
                    w.start, w.end, self.width
                )));
            }
        }
        Ok(())
    }

    /// `(amplitude, datum, resolution)` triples in row order.
    pub fn configurations(&self) -> Vec<(f64, &Datum, (usize, usize))> {
        let mut out = Vec::new();
        for &a in &self.amplitudes {
            for d in &self.data {
                for &r in &self.resolutions {
                    out.push((a, d, r));
                }
            }
        }
        out
    }
}

/// Evaluates one sweep row. Failures are recorded in the row's `error`.
pub fn evaluate_row(plan: &SweepPlan, amplitude: f64, datum: &Datum, res: (usize, usize)) -> SizeEstimateReport {
    let pair = BottomPair {
        width: plan.width,
        surface: plan.surface.clone(),
        reference: plan.family.reference(),
        perturbed: plan.family.member(amplitude),
        case: plan.family.case(),
    };
    evaluate_pair(&pair, amplitude, datum, res, &plan.windows, plan.solver)
}

/// Two bottoms under a common surface, with the case used to evaluate them.
#[derive(Clone, Debug, PartialEq)]
pub struct BottomPair {
    pub width: f64,
    pub surface: Profile,
    pub reference: Profile,
    pub perturbed: Profile,
    pub case: CaseLabel,
}

impl BottomPair {
    /// Chooses Case I when the perturbed bottom lies weakly above the
    /// reference, Case II when the bottoms cross. A perturbed bottom lying
    /// below the reference is swapped so that Case I applies.
    pub fn classify(width: f64, surface: Profile, reference: Profile, perturbed: Profile) -> Result<Self> {
        let m = CavityDescription::new(width, reference.clone(), perturbed.clone())?.region_measure(AREA_QUAD_POINTS)?;
        let tol = ZERO_AREA_TOL * width * width;
        let (reference, perturbed, case) = if m.area_minus <= tol {
            (reference, perturbed, CaseLabel::CaseI)
        } else if m.area_plus <= tol {
            log::info!("second bottom lies below the first; swapping them");
            (perturbed, reference, CaseLabel::CaseI)
        } else {
            (reference, perturbed, CaseLabel::CaseII)
        };
        Ok(BottomPair { width, surface, reference, perturbed, case })
    }
}

/// Evaluates all functionals for one bottom pair. Failures are recorded in
/// the row's `error`.
pub fn evaluate_pair(
    pair: &BottomPair,
    parameter: f64,
    datum: &Datum,
    res: (usize, usize),
    windows: &[Window],
    solver: SolverOptions,
) -> SizeEstimateReport {
    let mut row = SizeEstimateReport::empty(pair.case, parameter, &datum.name(), res.0, res.1);
    if let Err(e) = fill_row(pair, datum, res, windows, solver, &mut row) {
        row.error = Some(e.to_string());
    }
    row
}

fn fill_row(
    pair: &BottomPair,
    datum: &Datum,
    (nx, ny): (usize, usize),
    windows: &[Window],
    solver: SolverOptions,
    row: &mut SizeEstimateReport,
) -> Result<()> {
    let width = pair.width;
    let b0 = pair.reference.clone();
    let b1 = pair.perturbed.clone();
    let cavity = CavityDescription::new(width, b0.clone(), b1.clone())?;
    let measure = cavity.region_measure(AREA_QUAD_POINTS)?;
    row.area_plus = measure.area_plus;
    row.area_minus = measure.area_minus;
    row.area = measure.total();

    let m0 = Arc::new(build_mesh(&FluidDomain::new(width, b0, pair.surface.clone())?, nx, ny)?);
    let m1 = Arc::new(build_mesh(&FluidDomain::new(width, b1, pair.surface.clone())?, nx, ny)?);
    let psi = datum.values(m0.column_xs(), width)?;
    let m = measurements(&m0, &m1, &psi, &psi, Window::full(width), solver)?;
    let s = &m.set;
    row.w00 = Some(s.w(0, 0));
    row.w01 = Some(s.w(0, 1));
    row.w10 = Some(s.w(1, 0));
    row.w11 = Some(s.w(1, 1));
    row.windows = window_rows(&m, windows)?;

    match pair.case {
        CaseLabel::CaseI | CaseLabel::CaseIII => {
            row.numerator_lower = Some(caseI_lower_numerator(s));
            let upper = caseI_upper(s)?;
            row.numerator_upper = Some(upper.numerator);
            row.eta_upper = Some(upper.value);
            row.eta_lower = Some(caseI_lower(s)?);
            let l = lemma1_residuals(&m, &cavity)?;
            row.energy_outer = Some(l.energy_outer);
            row.energy_cavity = Some(l.energy_cavity);
            row.bottom_pairing = Some(l.bottom_pairing);
            row.residual_energy_abs = Some(l.energy.abs);
            row.residual_energy_rel = Some(l.energy.rel);
            row.residual_bottom_abs = Some(l.bottom.abs);
            row.residual_bottom_rel = Some(l.bottom.rel);
        }
        CaseLabel::CaseII => {
            row.numerator_lower = Some(caseII_lower_numerator(s));
            row.eta_lower = Some(caseII_lower(s)?);
            let ii = caseII_upper_measurables(&m)?;
            row.numerator_upper = Some(ii.surface_term);
            row.eta_upper = Some(ii.surface_term / s.w(0, 0) + ii.surface_term / s.w(1, 1));
            row.energy_outer = Some(ii.energy_sum);
            row.bottom_pairing = Some(ii.gamma_pairing);
            row.residual_energy_abs = Some(ii.decomposition.abs);
            row.residual_energy_rel = Some(ii.decomposition.rel);
        }
    }
    Ok(())
}

fn window_rows(m: &Measurement, windows: &[Window]) -> Result<Vec<CaseIIIMeasurables>> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let grad_phi_h1 = m.phi1.gradient_h1_norm();
    let phi0_h1 = m.phi0.h1_norm();
    windows
        .iter()
        .map(|&w| {
            let (h1, flux) = window_discrepancies(&m.set, w)?;
            Ok(CaseIIIMeasurables { window: w, discrepancy_h1: h1, discrepancy_flux: flux, grad_phi_h1, phi0_h1 })
        })
        .collect()
}

/// One report row per `(amplitude, datum, resolution)`, in plan order.
/// Rows are evaluated concurrently; a failing row carries its error and the
/// sweep continues. Writes the CSV table when the plan names an output.
pub fn run_sweep(plan: &SweepPlan) -> Result<Vec<SizeEstimateReport>> {
    plan.validate()?;
    let rows: Vec<SizeEstimateReport> = plan
        .configurations()
        .into_par_iter()
        .map(|(a, d, r)| evaluate_row(plan, a, d, r))
        .collect();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        log::warn!("sweep row a={} {} {}x{} failed: {}", r.parameter, r.datum, r.nx, r.ny, r.error.as_deref().unwrap_or(""));
    }
    if let Some(path) = &plan.output {
        let file = std::fs::File::create(path)?;
        crate::report::write_sweep_csv(std::io::BufWriter::new(file), &rows)?;
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

/// A held-out row on the wrong side of the fitted sandwich.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub parameter: f64,
    pub datum: String,
    pub side: Side,
    pub area: f64,
    /// `C_lower eta_lower` or `C_upper eta_upper`.
    pub bound: f64,
}

/// Constants with `C_lower eta_lower <= |D| <= C_upper eta_upper` on the
/// training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub c_lower: f64,
    pub c_upper: f64,
    pub train_parameters: Vec<f64>,
    pub test_parameters: Vec<f64>,
    pub violations: Vec<Violation>,
    /// Rows with `|D| = 0` whose functionals are not zero.
    pub zero_area_violations: usize,
}

impl FitResult {
    pub fn held_out_violations(&self) -> usize {
        self.violations.len()
    }
}

/// Tolerance on `eta` for rows with an empty cavity.
pub const ZERO_AREA_TOL: f64 = 1e-8;

fn usable(r: &SizeEstimateReport) -> Option<(f64, f64, f64)> {
    match (r.error.as_ref(), r.eta_lower, r.eta_upper) {
        (None, Some(lo), Some(up)) => Some((r.area, lo, up)),
        _ => None,
    }
}

/// Fits on rows whose amplitude has an even index among the distinct
/// amplitudes with `|D| > 0`, and tests on the odd ones.
pub fn fit_constants(table: &[SizeEstimateReport]) -> Result<FitResult> {
    let live: Vec<&SizeEstimateReport> = table.iter().filter(|r| usable(r).is_some_and(|u| u.0 > 0.0)).collect();
    if live.len() < 3 {
        return Err(Error::degenerate(format!(
            "constant fit needs at least 3 rows with |D| > 0 (got {})",
            live.len()
        )));
    }
    let mut params: Vec<f64> = live.iter().map(|r| r.parameter).collect();
    params.sort_by(f64::total_cmp);
    params.dedup();
    let is_train = |p: f64| params.iter().position(|&q| q == p).is_some_and(|i| i % 2 == 0);
    let zero: Vec<&SizeEstimateReport> = table.iter().filter(|r| usable(r).is_some_and(|u| u.0 == 0.0)).collect();
    let (train, test): (Vec<_>, Vec<_>) = live.into_iter().partition(|r| is_train(r.parameter));
    let mut fit = fit_split(&train, &test)?;
    fit.zero_area_violations += zero
        .iter()
        .filter(|r| {
            let (_, lo, up) = usable(r).unwrap();
            lo.abs() > ZERO_AREA_TOL || up.abs() > ZERO_AREA_TOL
        })
        .count();
    Ok(fit)
}

/// Extremal-ratio fit on `train`, checked on `test`.
pub fn fit_split(train: &[&SizeEstimateReport], test: &[&SizeEstimateReport]) -> Result<FitResult> {
    let mut c_lower = f64::INFINITY;
    let mut c_upper = 0.0f64;
    let mut zero_area_violations = 0;
    let mut any = false;
    for r in train {
        let Some((area, lo, up)) = usable(r) else { continue };
        if area == 0.0 {
            if lo.abs() > ZERO_AREA_TOL || up.abs() > ZERO_AREA_TOL {
                zero_area_violations += 1;
            }
            continue;
        }
        any = true;
        if lo > 0.0 {
            c_lower = c_lower.min(area / lo);
        }
        if !(up > 0.0) {
            return Err(Error::degenerate(format!(
                "row a={} {} has |D| = {area:.3e} > 0 but eta_upper = {up:.3e}; no upper constant exists",
                r.parameter, r.datum
            )));
        }
        c_upper = c_upper.max(area / up);
    }
    if !any {
        return Err(Error::degenerate("every training row has |D| = 0"));
    }
    if !c_lower.is_finite() {
        return Err(Error::degenerate("eta_lower vanishes on every training row"));
    }
    let slack = 1.0 + 1e-12;
    let mut violations = Vec::new();
    for r in test {
        let Some((area, lo, up)) = usable(r) else { continue };
        if area == 0.0 {
            if lo.abs() > ZERO_AREA_TOL || up.abs() > ZERO_AREA_TOL {
                zero_area_violations += 1;
            }
            continue;
        }
        if c_lower * lo > area * slack {
            violations.push(Violation { parameter: r.parameter, datum: r.datum.clone(), side: Side::Lower, area, bound: c_lower * lo });
        }
        if area > c_upper * up * slack {
            violations.push(Violation { parameter: r.parameter, datum: r.datum.clone(), side: Side::Upper, area, bound: c_upper * up });
        }
    }
    let params = |rows: &[&SizeEstimateReport]| {
        let mut p: Vec<f64> = rows.iter().map(|r| r.parameter).collect();
        p.sort_by(f64::total_cmp);
        p.dedup();
        p
    };
    Ok(FitResult {
        c_lower,
        c_upper,
        train_parameters: params(train),
        test_parameters: params(test),
        violations,
        zero_area_violations,
    })
}

/// [`fit_constants`] separately for each datum, in order of first appearance.
pub fn fit_by_datum(table: &[SizeEstimateReport]) -> Vec<(String, Result<FitResult>)> {
    let mut names: Vec<String> = Vec::new();
    for r in table {
        if !names.contains(&r.datum) {
            names.push(r.datum.clone());
        }
    }
    names
        .into_iter()
        .map(|n| {
            let rows: Vec<SizeEstimateReport> = table.iter().filter(|r| r.datum == n).cloned().collect();
            let fit = fit_constants(&rows);
            (n, fit)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    /// `|grad(phi_h - phi)|_{L2}`.
    pub error_h1: f64,
    /// `L2` error of the TOP flux density.
    pub error_flux: f64,
    pub order_h1: Option<f64>,
    pub order_flux: Option<f64>,
    /// Set when the slope to the previous row is meaningless (equal `h`).
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    /// `"strip-oracle"` or `"reference NXxNY"`.
    pub reference: String,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Smallest observed orders over all consecutive pairs.
    pub fn min_orders(&self) -> (Option<f64>, Option<f64>) {
        let min = |it: Vec<f64>| it.into_iter().reduce(f64::min);
        (
            min(self.rows.iter().filter_map(|r| r.order_h1).collect()),
            min(self.rows.iter().filter_map(|r| r.order_flux).collect()),
        )
    }
}

/// Errors at or below this are roundoff and get no observed order.
const ERROR_FLOOR: f64 = 1e-13;

/// Separable solution of a flat strip with mode data.
struct StripOracle {
    kp: f64,
    bottom: f64,
    depth: f64,
}

impl StripOracle {
    fn new(domain: &FluidDomain, datum: &Datum) -> Option<Self> {
        let (Profile::Flat { level: b }, Profile::Flat { level: s }, Datum::Mode { k }) =
            (&domain.bottom, &domain.surface, datum)
        else {
            return None;
        };
        Some(StripOracle { kp: *k as f64 * PI / domain.width, bottom: *b, depth: s - b })
    }

    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let (kp, z) = (self.kp, y - self.bottom);
        // cosh ratios without overflow for large k h.
        let c = ((kp * (z - self.depth)).exp() + (-kp * (z + self.depth)).exp()) / (1.0 + (-2.0 * kp * self.depth).exp());
        let s = ((kp * (z - self.depth)).exp() - (-kp * (z + self.depth)).exp()) / (1.0 + (-2.0 * kp * self.depth).exp());
        [-kp * (kp * x).sin() * c, kp * (kp * x).cos() * s]
    }

    fn flux(&self, x: f64) -> f64 {
        self.kp * (self.kp * self.depth).tanh() * (self.kp * x).cos()
    }
}

fn solve_datum(domain: &FluidDomain, datum: &Datum, nx: usize, ny: usize, opts: SolverOptions) -> Result<(ScalarField, SurfaceTrace)> {
    let mesh = Arc::new(build_mesh(domain, nx, ny)?);
    let psi = datum.values(mesh.column_xs(), domain.width)?;
    let trace = SurfaceTrace::top(&mesh, psi)?;
    let f = solve_potential(&mesh, &[trace], opts)?;
    let q = boundary_flux(&f, BoundaryTag::Top)?;
    Ok((f, q))
}

fn triangle_points(mesh: &Mesh, t: usize) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
    let p = mesh.triangles[t].map(|n| mesh.nodes[n]);
    let area = mesh.signed_area(t);
    TRIANGLE_7.iter().map(move |(l, w)| {
        (
            l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
            l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
            w * area,
        )
    })
}

/// `locate`, with `y` pulled into the column first: a finer mesh's points
/// may sit just below a coarser polyline bottom.
fn locate_clamped(mesh: &Mesh, x: f64, y: f64) -> Result<(usize, [f64; 3])> {
    let (lo, hi) = (mesh.bottom_profile().value(x), mesh.surface_profile().value(x));
    let pad = 1e-12 * (hi - lo);
    mesh.locate(x, y.clamp(lo + pad, hi - pad))
}

fn interp_linear(xs: &[f64], vs: &[f64], x: f64) -> f64 {
    let k = xs.partition_point(|&t| t <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
    (1.0 - t) * vs[k - 1] + t * vs[k]
}

/// Field and flux errors over `resolutions`, against the strip oracle when
/// the domain is a flat strip with mode data, and otherwise against a
/// reference solve at twice the finest resolution.
pub fn convergence_study(
    domain: &FluidDomain,
    datum: &Datum,
    resolutions: &[(usize, usize)],
    opts: SolverOptions,
) -> Result<ConvergenceTable> {
    if resolutions.len() < 2 {
        return Err(Error::config(format!(
            "convergence study needs at least 2 resolutions (got {})",
            resolutions.len()
        )));
    }
    let oracle = StripOracle::new(domain, datum);
    let reference = match oracle {
        Some(_) => None,
        None => {
            let nx = resolutions.iter().map(|r| r.0).max().unwrap() * 2;
            let ny = resolutions.iter().map(|r| r.1).max().unwrap() * 2;
            Some((nx, ny, solve_datum(domain, datum, nx, ny, opts)?))
        }
    };
    let errors: Vec<Result<(f64, f64)>> = resolutions
        .par_iter()
        .map(|&(nx, ny)| {
            let (f, q) = solve_datum(domain, datum, nx, ny, opts)?;
            let mesh = f.mesh().clone();
            match (&oracle, &reference) {
                (Some(o), _) => {
                    let mut eh = 0.0;
                    for t in 0..mesh.triangles.len() {
                        let g = f.gradient_on(t);
                        for (x, y, w) in triangle_points(&mesh, t) {
                            let e = o.gradient(x, y);
                            eh += w * ((g[0] - e[0]).powi(2) + (g[1] - e[1]).powi(2));
                        }
                    }
                    let ef: f64 = (0..q.len()).map(|i| q.weights[i] * (q.values[i] - o.flux(q.xs[i])).powi(2)).sum();
                    Ok((eh.sqrt(), ef.sqrt()))
                }
                (None, Some((_, _, (rf, rq)))) => {
                    let rmesh = rf.mesh();
                    let mut eh = 0.0;
                    for t in 0..rmesh.triangles.len() {
                        let g = rf.gradient_on(t);
                        for (x, y, w) in triangle_points(rmesh, t) {
                            let (tc, _) = locate_clamped(&mesh, x, y)?;
                            let gc = f.gradient_on(tc);
                            eh += w * ((g[0] - gc[0]).powi(2) + (g[1] - gc[1]).powi(2));
                        }
                    }
                    let ef: f64 = (0..q.len())
                        .map(|i| q.weights[i] * (q.values[i] - interp_linear(&rq.xs, &rq.values, q.xs[i])).powi(2))
                        .sum();
                    Ok((eh.sqrt(), ef.sqrt()))
                }
                (None, None) => unreachable!(),
            }
        })
        .collect();
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(resolutions.len());
    for (&(nx, ny), e) in resolutions.iter().zip(errors) {
        let (error_h1, error_flux) = e?;
        let h = domain.width / nx as f64;
        let mut row = ConvergenceRow { nx, ny, h, error_h1, error_flux, order_h1: None, order_flux: None, flagged: false };
        if let Some(prev) = rows.last() {
            if (prev.h - h).abs() <= 1e-14 * h && prev.ny == ny {
                row.order_h1 = Some(0.0);
                row.order_flux = Some(0.0);
                row.flagged = true;
            } else {
                let slope = |a: f64, b: f64| (a > ERROR_FLOOR && b > ERROR_FLOOR).then(|| (a / b).ln() / (prev.h / h).ln());
                row.order_h1 = slope(prev.error_h1, error_h1);
                row.order_flux = slope(prev.error_flux, error_flux);
            }
        }
        rows.push(row);
    }
    let reference = match reference {
        Some((nx, ny, _)) => format!("reference {nx}x{ny}"),
        None => "strip-oracle".to_string(),
    };
    Ok(ConvergenceTable { reference, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(parameter: f64, area: f64, lo: f64, up: f64) -> SizeEstimateReport {
        let mut r = SizeEstimateReport::empty(CaseLabel::CaseI, parameter, "mode1", 8, 4);
        r.area = area;
        r.area_plus = area;
        r.eta_lower = Some(lo);
        r.eta_upper = Some(up);
        r
    }

    #[test]
    fn datum_names_round_trip() {
        for d in Datum::dictionary() {
            assert_eq!(d.name().parse::<Datum>().unwrap(), d);
        }
        assert_eq!("constant".parse::<Datum>().unwrap(), Datum::Mode { k: 0 });
        assert!("mode".parse::<Datum>().is_err());
        assert!("sine".parse::<Datum>().is_err());
    }

    #[test]
    fn families_generate_valid_domains() {
        let plan = SweepPlan::new(BottomFamily::s_shape(1.0), vec![0.0, 0.08]);
        plan.validate().unwrap();
        let c = CavityDescription::new(1.0, plan.family.reference(), plan.family.member(0.08)).unwrap();
        let m = c.region_measure(8).unwrap();
        assert!((m.area_plus - 0.08 * 0.2).abs() < 1e-12);
        assert!((m.area_minus - 0.08 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_plans_are_rejected() {
        let plan = SweepPlan::new(BottomFamily::centered_bump(1.0), vec![]);
        assert!(matches!(run_sweep(&plan), Err(Error::Config(_))));
        let plan = SweepPlan::new(BottomFamily::centered_bump(1.0), vec![1.2]);
        assert!(matches!(plan.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_counts_rows_and_is_deterministic() {
        let mut plan = SweepPlan::new(BottomFamily::centered_bump(1.0), vec![0.0, 0.04, 0.08, 0.12, 0.16]);
        plan.resolutions = vec![(16, 8)];
        let a = run_sweep(&plan).unwrap();
        let b = run_sweep(&plan).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
        let params: Vec<f64> = a.iter().map(|r| r.parameter).collect();
        assert_eq!(params, plan.amplitudes);
        assert_eq!(a[0].area, 0.0);
        assert!(a[0].eta_lower.unwrap().abs() < 1e-12 && a[0].eta_upper.unwrap().abs() < 1e-12);
        assert!(a.iter().all(|r| r.error.is_none()));
    }

    #[test]
    fn failing_rows_do_not_abort_the_sweep() {
        let mut plan = SweepPlan::new(BottomFamily::centered_bump(1.0), vec![0.05, 0.1]);
        plan.resolutions = vec![(8, 4)];
        plan.data = vec![Datum::Mode { k: 1 }, Datum::Nodal { values: vec![1.0; 3] }];
        let rows = run_sweep(&plan).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].error.is_none());
        assert!(rows[1].error.as_deref().unwrap().contains("nodal datum"));
    }

    #[test]
    fn synthetic_sandwich_constants() {
        let rows: Vec<SizeEstimateReport> =
            [0.1, 0.2, 0.3, 0.4].iter().map(|&a| synthetic(a, a, a / 2.0, 2.0 * a)).collect();
        let fit = fit_constants(&rows).unwrap();
        assert!((fit.c_lower - 2.0).abs() < 1e-15);
        assert!((fit.c_upper - 0.5).abs() < 1e-15);
        assert_eq!(fit.train_parameters, vec![0.1, 0.3]);
        assert_eq!(fit.test_parameters, vec![0.2, 0.4]);
        assert_eq!(fit.held_out_violations(), 0);
    }

    #[test]
    fn single_training_row_sets_both_ratios() {
        let r = synthetic(0.1, 0.3, 0.2, 0.6);
        let fit = fit_split(&[&r], &[]).unwrap();
        assert_eq!(fit.c_lower, 0.3 / 0.2);
        assert_eq!(fit.c_upper, 0.3 / 0.6);
    }

    #[test]
    fn held_out_violations_are_reported() {
        let rows = vec![
            synthetic(0.1, 0.1, 0.1, 0.1),
            synthetic(0.2, 0.2, 0.4, 0.1),
            synthetic(0.3, 0.3, 0.3, 0.3),
        ];
        let fit = fit_constants(&rows).unwrap();
        assert_eq!(fit.held_out_violations(), 2);
        let sides: Vec<Side> = fit.violations.iter().map(|v| v.side).collect();
        assert_eq!(sides, vec![Side::Lower, Side::Upper]);
    }

    #[test]
    fn degenerate_tables_fail_to_fit() {
        let rows = vec![synthetic(0.0, 0.0, 0.0, 0.0), synthetic(0.1, 0.1, 0.1, 0.1)];
        assert!(matches!(fit_constants(&rows), Err(Error::Degenerate(_))));
        let mut zero = synthetic(0.0, 0.0, 1e-3, 0.0);
        zero.area = 0.0;
        let rows = vec![zero, synthetic(0.1, 0.1, 0.1, 0.1), synthetic(0.2, 0.2, 0.2, 0.2), synthetic(0.3, 0.3, 0.3, 0.3)];
        assert_eq!(fit_constants(&rows).unwrap().zero_area_violations, 1);
    }

    #[test]
    fn strip_convergence_orders() {
        let d = FluidDomain::strip(1.0, 1.0).unwrap();
        let t = convergence_study(&d, &Datum::Mode { k: 1 }, &[(8, 8), (16, 16), (32, 32)], SolverOptions::default()).unwrap();
        assert_eq!(t.reference, "strip-oracle");
        let (h1, flux) = t.min_orders();
        assert!(h1.unwrap() > 0.9, "{t:?}");
        assert!(flux.unwrap() > 1.5, "{t:?}");
    }

    #[test]
    fn constant_datum_has_no_error() {
        let d = FluidDomain::strip(1.0, 1.0).unwrap();
        let t = convergence_study(&d, &Datum::Mode { k: 0 }, &[(8, 8), (16, 16)], SolverOptions::default()).unwrap();
        for r in &t.rows {
            assert!(r.error_h1 < 1e-12 && r.error_flux < 1e-12);
            assert!(r.order_h1.is_none());
        }
    }

    #[test]
    fn repeated_resolution_is_flagged() {
        let d = FluidDomain::strip(1.0, 1.0).unwrap();
        let t = convergence_study(&d, &Datum::Mode { k: 1 }, &[(8, 8), (8, 8)], SolverOptions::default()).unwrap();
        assert!(t.rows[1].flagged);
        assert_eq!(t.rows[1].order_flux, Some(0.0));
        assert!(convergence_study(&d, &Datum::Mode { k: 1 }, &[(8, 8)], SolverOptions::default()).is_err());
    }

    #[test]
    fn reference_study_on_a_bump() {
        let d = FluidDomain::new(1.0, Profile::bump(0.2, 0.5, 0.25), Profile::flat(1.0)).unwrap();
        let t = convergence_study(&d, &Datum::Gaussian, &[(8, 8), (16, 16)], SolverOptions::default()).unwrap();
        assert_eq!(t.reference, "reference 32x32");
        assert!(t.rows[1].error_h1 < t.rows[0].error_h1);
        assert!(t.rows[1].error_flux < t.rows[0].error_flux);
    }

    #[test]
    fn gaussian_datum_is_mean_free() {
        let xs: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let v = Datum::Gaussian.values(&xs, 1.0).unwrap();
        let mean: f64 = xs.windows(2).zip(v.windows(2)).map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1])).sum();
        assert!(mean.abs() < 1e-15);
    }
}

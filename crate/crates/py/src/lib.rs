//! Python module `bathysize`.

use std::sync::Arc;

use bathysize_core::acceptance;
use bathysize_core::dtn::{self, DtNMatrix};
use bathysize_core::functionals::{SizeEstimateReport, Window};
use bathysize_core::geometry::{hypothesis_report, Lobe};
use bathysize_core::harness::{self, BottomFamily, BottomPair, Datum, SweepPlan};
use bathysize_core::mesh::build_mesh as core_build_mesh;
use bathysize_core::solver::{self, SolverOptions};
use bathysize_core::{BoundaryTag, CavityDescription, Error, FluidDomain, Mesh, Profile, ScalarField, SurfaceTrace};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Geometry(_) | Error::Degenerate(_) => PyValueError::new_err(e.to_string()),
        Error::Singular(_) | Error::NonConvergence { .. } | Error::Numerical(_) => {
            PyArithmeticError::new_err(e.to_string())
        }
        Error::State(_) => PyRuntimeError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
    }
}

fn options(tol: f64) -> SolverOptions {
    SolverOptions { tol, ..SolverOptions::default() }
}

/// Surface data: a name such as `"mode1"` or `"gaussian"`, or nodal values.
#[derive(FromPyObject)]
enum DatumArg {
    Name(String),
    Values(Vec<f64>),
}

impl DatumArg {
    fn datum(self) -> PyResult<Datum> {
        match self {
            DatumArg::Name(n) => n.parse().map_err(py_err),
            DatumArg::Values(values) => Ok(Datum::Nodal { values }),
        }
    }
}

#[pyclass(name = "Profile", frozen, module = "bathysize")]
struct PyProfile {
    inner: Profile,
}

#[pymethods]
impl PyProfile {
    #[staticmethod]
    fn flat(level: f64) -> Self {
        PyProfile { inner: Profile::flat(level) }
    }

    #[staticmethod]
    #[pyo3(signature = (amplitude, center, halfwidth, base = 0.0, sign = 1.0))]
    fn bump(amplitude: f64, center: f64, halfwidth: f64, base: f64, sign: f64) -> Self {
        PyProfile { inner: Profile::Bump { base, amplitude, center, halfwidth, sign } }
    }

    /// `lobes` holds `(amplitude, center, halfwidth, sign)` tuples.
    #[staticmethod]
    #[pyo3(signature = (lobes, base = 0.0))]
    fn multi_bump(lobes: Vec<(f64, f64, f64, f64)>, base: f64) -> Self {
        let lobes = lobes
            .into_iter()
            .map(|(amplitude, center, halfwidth, sign)| Lobe { amplitude, center, halfwidth, sign })
            .collect();
        PyProfile { inner: Profile::MultiBump { base, lobes } }
    }

    #[staticmethod]
    fn piecewise_linear(knots: Vec<(f64, f64)>) -> Self {
        PyProfile { inner: Profile::PiecewiseLinear { knots } }
    }

    fn value(&self, x: f64) -> f64 {
        self.inner.value(x)
    }

    fn __repr__(&self) -> String {
        format!("Profile({:?})", self.inner)
    }
}

#[pyclass(name = "FluidDomain", frozen, module = "bathysize")]
struct PyFluidDomain {
    inner: FluidDomain,
}

#[pymethods]
impl PyFluidDomain {
    #[new]
    fn new(width: f64, bottom: PyRef<'_, PyProfile>, surface: PyRef<'_, PyProfile>) -> PyResult<Self> {
        let inner = FluidDomain::new(width, bottom.inner.clone(), surface.inner.clone()).map_err(py_err)?;
        Ok(PyFluidDomain { inner })
    }

    #[staticmethod]
    fn strip(width: f64, depth: f64) -> PyResult<Self> {
        Ok(PyFluidDomain { inner: FluidDomain::strip(width, depth).map_err(py_err)? })
    }

    #[getter]
    fn width(&self) -> f64 {
        self.inner.width
    }

    fn depth_at(&self, x: f64) -> f64 {
        self.inner.depth_at(x)
    }
}

#[pyclass(name = "Mesh", frozen, module = "bathysize")]
struct PyMesh {
    inner: Arc<Mesh>,
}

#[pymethods]
impl PyMesh {
    #[getter]
    fn nx(&self) -> usize {
        self.inner.nx
    }

    #[getter]
    fn ny(&self) -> usize {
        self.inner.ny
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn nodes(&self) -> Vec<(f64, f64)> {
        self.inner.nodes.iter().map(|p| (p[0], p[1])).collect()
    }

    #[getter]
    fn triangles(&self) -> Vec<(usize, usize, usize)> {
        self.inner.triangles.iter().map(|t| (t[0], t[1], t[2])).collect()
    }

    /// Abscissae of the free-surface nodes, left to right.
    #[getter]
    fn top_xs(&self) -> Vec<f64> {
        self.inner.column_xs().to_vec()
    }

    fn total_area(&self) -> f64 {
        self.inner.total_area()
    }
}

#[pyfunction]
fn build_mesh(domain: PyRef<'_, PyFluidDomain>, nx: usize, ny: usize) -> PyResult<PyMesh> {
    Ok(PyMesh { inner: Arc::new(core_build_mesh(&domain.inner, nx, ny).map_err(py_err)?) })
}

#[pyclass(name = "Trace", frozen, module = "bathysize")]
struct PyTrace {
    inner: SurfaceTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn xs(&self) -> Vec<f64> {
        self.inner.xs.clone()
    }

    #[getter]
    fn arclength(&self) -> Vec<f64> {
        self.inner.arclength.clone()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    /// Lumped surface integral of the product of two traces.
    fn pairing(&self, other: PyRef<'_, PyTrace>) -> PyResult<f64> {
        solver::surface_pairing(&self.inner, &other.inner).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Field", frozen, module = "bathysize")]
struct PyField {
    inner: ScalarField,
}

#[pymethods]
impl PyField {
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn relative_residual(&self) -> Option<f64> {
        self.inner.relative_residual()
    }

    fn energy(&self) -> f64 {
        solver::energy(&self.inner)
    }

    fn value_at(&self, x: f64, y: f64) -> PyResult<f64> {
        self.inner.value_at(x, y).map_err(py_err)
    }

    /// Flux density on the free surface.
    fn top_flux(&self) -> PyResult<PyTrace> {
        Ok(PyTrace { inner: solver::boundary_flux(&self.inner, BoundaryTag::Top).map_err(py_err)? })
    }

    fn total_boundary_flux(&self) -> PyResult<f64> {
        solver::total_boundary_flux(&self.inner).map_err(py_err)
    }
}

/// Solves the surface Dirichlet problem with zero flux on the bottom and walls.
#[pyfunction]
#[pyo3(signature = (mesh, psi, tol = 1e-10))]
fn solve(py: Python<'_>, mesh: PyRef<'_, PyMesh>, psi: DatumArg, tol: f64) -> PyResult<PyField> {
    let mesh = mesh.inner.clone();
    let datum = psi.datum()?;
    let field = py.detach(|| {
        let values = datum.values(mesh.column_xs(), mesh.width)?;
        let trace = SurfaceTrace::top(&mesh, values)?;
        solver::solve_potential(&mesh, &[trace], options(tol))
    });
    Ok(PyField { inner: field.map_err(py_err)? })
}

#[pyclass(name = "DtN", frozen, module = "bathysize")]
struct PyDtN {
    inner: DtNMatrix,
}

impl PyDtN {
    fn trace(&self, psi: Vec<f64>) -> PyResult<SurfaceTrace> {
        self.inner.template().with_values(psi).map_err(py_err)
    }
}

#[pymethods]
impl PyDtN {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn asymmetry(&self) -> f64 {
        self.inner.asymmetry()
    }

    /// Flux density produced by surface values `psi`.
    fn apply(&self, psi: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.apply(&self.trace(psi)?).map_err(py_err)?.values)
    }

    /// Dirichlet energy of the harmonic extension of `psi`.
    fn quadratic_form(&self, psi: Vec<f64>) -> PyResult<f64> {
        self.inner.quadratic_form(&self.trace(psi)?).map_err(py_err)
    }

    /// Smallest `k_max` eigenvalues, ascending.
    fn spectrum(&self, k_max: usize) -> PyResult<Vec<f64>> {
        Ok(dtn::dtn_spectrum(&self.inner, k_max).map_err(py_err)?.into_iter().map(|p| p.value).collect())
    }

    fn density_matrix(&self) -> Vec<Vec<f64>> {
        let g = self.inner.density_matrix();
        (0..g.nrows()).map(|i| g.row(i).iter().copied().collect()).collect()
    }
}

#[pyfunction]
#[pyo3(signature = (mesh, tol = 1e-10))]
fn assemble_dtn(py: Python<'_>, mesh: PyRef<'_, PyMesh>, tol: f64) -> PyResult<PyDtN> {
    let mesh = mesh.inner.clone();
    let g = py.detach(|| dtn::assemble_dtn(&mesh, options(tol)));
    Ok(PyDtN { inner: g.map_err(py_err)? })
}

#[pyfunction]
fn strip_eigenvalue(k: usize, width: f64, depth: f64) -> f64 {
    dtn::strip_eigenvalue(k, width, depth)
}

#[pyclass(name = "Cavity", frozen, module = "bathysize")]
struct PyCavity {
    inner: CavityDescription,
}

#[pymethods]
impl PyCavity {
    #[new]
    fn new(width: f64, lower: PyRef<'_, PyProfile>, upper: PyRef<'_, PyProfile>) -> PyResult<Self> {
        let inner = CavityDescription::new(width, lower.inner.clone(), upper.inner.clone()).map_err(py_err)?;
        Ok(PyCavity { inner })
    }

    /// `(area_plus, area_minus)`.
    #[pyo3(signature = (quad_points = 8))]
    fn region_measure(&self, quad_points: usize) -> PyResult<(f64, f64)> {
        let m = self.inner.region_measure(quad_points).map_err(py_err)?;
        Ok((m.area_plus, m.area_minus))
    }

    #[pyo3(signature = (r = None, fatness_h = None))]
    fn hypotheses<'py>(&self, py: Python<'py>, r: Option<f64>, fatness_h: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
        let h = hypothesis_report(&self.inner, r, fatness_h, 256);
        let d = PyDict::new(py);
        d.set_item("degenerate", h.degenerate)?;
        d.set_item("area", h.area)?;
        d.set_item("diameter", h.diameter)?;
        d.set_item("lipschitz", h.lipschitz)?;
        d.set_item("diam_over_r", h.diam_over_r)?;
        d.set_item("fatness_ratio", h.fatness.map(|f| f.ratio))?;
        Ok(d)
    }
}

#[pyclass(name = "Report", frozen, module = "bathysize")]
struct PyReport {
    inner: SizeEstimateReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn case(&self) -> String {
        self.inner.case.to_string()
    }

    #[getter]
    fn parameter(&self) -> f64 {
        self.inner.parameter
    }

    #[getter]
    fn datum(&self) -> String {
        self.inner.datum.clone()
    }

    #[getter]
    fn area(&self) -> f64 {
        self.inner.area
    }

    /// `(W00, W01, W10, W11)`.
    #[getter]
    fn w(&self) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
        (self.inner.w00, self.inner.w01, self.inner.w10, self.inner.w11)
    }

    #[getter]
    fn eta_lower(&self) -> Option<f64> {
        self.inner.eta_lower
    }

    #[getter]
    fn eta_upper(&self) -> Option<f64> {
        self.inner.eta_upper
    }

    #[getter]
    fn residual_energy_rel(&self) -> Option<f64> {
        self.inner.residual_energy_rel
    }

    #[getter]
    fn residual_bottom_rel(&self) -> Option<f64> {
        self.inner.residual_bottom_rel
    }

    /// `(start, end, discrepancy_h1, discrepancy_flux)` per window.
    #[getter]
    fn windows(&self) -> Vec<(f64, f64, f64, f64)> {
        self.inner
            .windows
            .iter()
            .map(|w| (w.window.start, w.window.end, w.discrepancy_h1, w.discrepancy_flux))
            .collect()
    }

    #[getter]
    fn error(&self) -> Option<String> {
        self.inner.error.clone()
    }

    #[staticmethod]
    fn csv_header() -> &'static str {
        SizeEstimateReport::CSV_HEADER
    }

    fn csv_row(&self) -> String {
        self.inner.csv_row()
    }

    fn text(&self) -> String {
        let mut buf = Vec::new();
        self.inner.write_text(&mut buf).expect("writing to memory");
        String::from_utf8_lossy(&buf).into_owned()
    }
}

fn windows_from(pairs: Vec<(f64, f64)>) -> PyResult<Vec<Window>> {
    pairs.into_iter().map(|(a, b)| Window::new(a, b).map_err(py_err)).collect()
}

/// Size functionals for two bottoms under a common surface. The case is
/// chosen from the bottoms' ordering.
#[pyfunction]
#[pyo3(signature = (width, surface, bottom, second_bottom, datum = DatumArg::Name("mode1".into()), nx = 128, ny = 64, windows = Vec::new(), tol = 1e-10))]
#[allow(clippy::too_many_arguments)]
fn estimate(
    py: Python<'_>,
    width: f64,
    surface: PyRef<'_, PyProfile>,
    bottom: PyRef<'_, PyProfile>,
    second_bottom: PyRef<'_, PyProfile>,
    datum: DatumArg,
    nx: usize,
    ny: usize,
    windows: Vec<(f64, f64)>,
    tol: f64,
) -> PyResult<PyReport> {
    let pair = BottomPair::classify(width, surface.inner.clone(), bottom.inner.clone(), second_bottom.inner.clone())
        .map_err(py_err)?;
    let datum = datum.datum()?;
    let windows = windows_from(windows)?;
    let row = py.detach(|| harness::evaluate_pair(&pair, 0.0, &datum, (nx, ny), &windows, options(tol)));
    Ok(PyReport { inner: row })
}

/// One report per `(amplitude, datum)` on the centered bump (`"bump"`) or
/// the crossing S-shaped family (`"s-shape"`) under a flat surface.
#[pyfunction]
#[pyo3(signature = (family, amplitudes, data = vec!["mode1".to_string()], nx = 128, ny = 64, width = 1.0, depth = 1.0, windows = Vec::new()))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    family: &str,
    amplitudes: Vec<f64>,
    data: Vec<String>,
    nx: usize,
    ny: usize,
    width: f64,
    depth: f64,
    windows: Vec<(f64, f64)>,
) -> PyResult<Vec<PyReport>> {
    let family = match family {
        "bump" => BottomFamily::centered_bump(width),
        "s-shape" => BottomFamily::s_shape(width),
        other => return Err(PyValueError::new_err(format!("unknown family `{other}` (expected bump or s-shape)"))),
    };
    let mut plan = SweepPlan::new(family, amplitudes);
    plan.width = width;
    plan.surface = Profile::flat(depth);
    plan.data = data.iter().map(|d| d.parse()).collect::<Result<_, _>>().map_err(py_err)?;
    plan.resolutions = vec![(nx, ny)];
    plan.windows = windows_from(windows)?;
    let rows = py.detach(|| harness::run_sweep(&plan)).map_err(py_err)?;
    Ok(rows.into_iter().map(|inner| PyReport { inner }).collect())
}

/// Fits the sandwich constants on even-index amplitudes and checks the odd ones.
#[pyfunction]
fn fit_constants<'py>(py: Python<'py>, rows: Vec<PyRef<'py, PyReport>>) -> PyResult<Bound<'py, PyDict>> {
    let table: Vec<SizeEstimateReport> = rows.iter().map(|r| r.inner.clone()).collect();
    let fit = harness::fit_constants(&table).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("c_lower", fit.c_lower)?;
    d.set_item("c_upper", fit.c_upper)?;
    d.set_item("train_parameters", fit.train_parameters.clone())?;
    d.set_item("test_parameters", fit.test_parameters.clone())?;
    d.set_item("held_out_violations", fit.held_out_violations())?;
    d.set_item("zero_area_violations", fit.zero_area_violations)?;
    Ok(d)
}

/// `(nx, ny, h, error_h1, error_flux, order_h1, order_flux)` rows.
#[pyfunction]
#[pyo3(signature = (domain, resolutions, datum = DatumArg::Name("mode1".into()), tol = 1e-10))]
#[allow(clippy::type_complexity)]
fn convergence(
    py: Python<'_>,
    domain: PyRef<'_, PyFluidDomain>,
    resolutions: Vec<(usize, usize)>,
    datum: DatumArg,
    tol: f64,
) -> PyResult<Vec<(usize, usize, f64, f64, f64, Option<f64>, Option<f64>)>> {
    let domain = domain.inner.clone();
    let datum = datum.datum()?;
    let t = py.detach(|| harness::convergence_study(&domain, &datum, &resolutions, options(tol))).map_err(py_err)?;
    Ok(t.rows.iter().map(|r| (r.nx, r.ny, r.h, r.error_h1, r.error_flux, r.order_h1, r.order_flux)).collect())
}

/// Runs one acceptance criterion: `(passed, title, details)`.
#[pyfunction]
fn run_criterion(py: Python<'_>, id: u8) -> PyResult<(bool, String, Vec<String>)> {
    if !acceptance::CRITERIA.iter().any(|(i, _)| *i == id) {
        return Err(PyValueError::new_err(format!("no criterion {id} (expected 1 to {})", acceptance::CRITERIA.len())));
    }
    let o = py.detach(|| acceptance::run_criterion(id));
    Ok((o.passed, o.title.to_string(), o.details))
}

#[pymodule]
fn bathysize(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyProfile>()?;
    m.add_class::<PyFluidDomain>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyDtN>()?;
    m.add_class::<PyCavity>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(build_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_dtn, m)?)?;
    m.add_function(wrap_pyfunction!(strip_eigenvalue, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(fit_constants, m)?)?;
    m.add_function(wrap_pyfunction!(convergence, m)?)?;
    m.add_function(wrap_pyfunction!(run_criterion, m)?)?;
    Ok(())
}

//! P1 Galerkin solver for the mixed Dirichlet/Neumann Laplace problem.
//!
//! Dirichlet data is imposed by elimination, leaving a symmetric positive
//! definite system on the free nodes; untagged boundary segments carry the
//! homogeneous natural (Neumann) condition. Boundary fluxes are recovered
//! variationally from the residual of the full stiffness matrix.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Region;
use crate::linalg::{pcg, BandCholesky, CsrMatrix};
use crate::mesh::{BoundaryTag, Mesh};
use crate::quadrature::TRIANGLE_7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Banded Cholesky factorization, reused across right-hand sides.
    #[default]
    Cholesky,
    /// Jacobi-preconditioned conjugate gradients.
    ConjugateGradient,
}

/// How the pointwise flux density is obtained from the raw nodal fluxes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxRecovery {
    /// Diagonal (row-sum) boundary mass matrix: density = raw flux / weight.
    #[default]
    Lumped,
    /// Full consistent boundary mass matrix of the segment.
    Consistent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub backend: Backend,
    /// Relative residual required of the reduced system.
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub flux_recovery: FluxRecovery,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { backend: Backend::Cholesky, tol: 1e-10, max_iter: None, flux_recovery: FluxRecovery::Lumped }
    }
}

/// Global P1 stiffness matrix `K_ij = int grad(phi_i) . grad(phi_j)`.
pub fn assemble_stiffness(mesh: &Mesh) -> CsrMatrix {
    let locals: Vec<[(usize, usize, f64); 9]> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            let area = mesh.signed_area(t);
            let g = mesh.hat_gradients(t);
            let nodes = mesh.triangles[t];
            let mut out = [(0, 0, 0.0); 9];
            for a in 0..3 {
                for b in 0..3 {
                    out[3 * a + b] = (nodes[a], nodes[b], area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]));
                }
            }
            out
        })
        .collect();
    CsrMatrix::from_triplets(mesh.num_nodes(), locals.into_iter().flatten().collect())
}

/// Values on the ordered nodes of one boundary segment, with lumped
/// arclength weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceTrace {
    pub tag: BoundaryTag,
    pub nodes: Vec<usize>,
    pub xs: Vec<f64>,
    /// Cumulative arclength along the segment, starting at zero.
    pub arclength: Vec<f64>,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SurfaceTrace {
    pub fn new(mesh: &Mesh, tag: BoundaryTag, values: Vec<f64>) -> Result<Self> {
        let nodes = mesh.segment_nodes(tag);
        if values.len() != nodes.len() {
            return Err(Error::config(format!(
                "{tag} trace needs {} values, got {}",
                nodes.len(),
                values.len()
            )));
        }
        let pts: Vec<[f64; 2]> = nodes.iter().map(|&n| mesh.nodes[n]).collect();
        let mut arclength = vec![0.0; pts.len()];
        let mut weights = vec![0.0; pts.len()];
        for k in 1..pts.len() {
            let len = ((pts[k][0] - pts[k - 1][0]).powi(2) + (pts[k][1] - pts[k - 1][1]).powi(2)).sqrt();
            arclength[k] = arclength[k - 1] + len;
            weights[k - 1] += 0.5 * len;
            weights[k] += 0.5 * len;
        }
        Ok(SurfaceTrace { tag, xs: pts.iter().map(|p| p[0]).collect(), nodes, arclength, values, weights })
    }

    /// Samples `f(x, y)` at the segment nodes.
    pub fn from_fn(mesh: &Mesh, tag: BoundaryTag, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = mesh.segment_nodes(tag).iter().map(|&n| f(mesh.nodes[n][0], mesh.nodes[n][1])).collect();
        Self::new(mesh, tag, values).expect("length matches by construction")
    }

    pub fn top(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        Self::new(mesh, BoundaryTag::Top, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.arclength.last().copied().unwrap_or(0.0)
    }

    /// True when both traces live on the same geometric node set.
    pub fn same_support(&self, other: &SurfaceTrace) -> bool {
        self.tag == other.tag && self.xs == other.xs && self.arclength == other.arclength
    }

    fn check_support(&self, other: &SurfaceTrace) -> Result<()> {
        if self.same_support(other) {
            Ok(())
        } else {
            Err(Error::config("surface traces live on different node sets"))
        }
    }

    /// Same support, values `f(a_i, b_i)`.
    pub fn zip_with(&self, other: &SurfaceTrace, f: impl Fn(f64, f64) -> f64) -> Result<SurfaceTrace> {
        self.check_support(other)?;
        let mut out = self.clone();
        out.values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(out)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<SurfaceTrace> {
        if values.len() != self.len() {
            return Err(Error::config(format!("trace needs {} values, got {}", self.len(), values.len())));
        }
        let mut out = self.clone();
        out.values = values;
        Ok(out)
    }
}

/// `sum_i w_i a_i b_i` with the shared lumped arclength weights.
pub fn surface_pairing(a: &SurfaceTrace, b: &SurfaceTrace) -> Result<f64> {
    a.check_support(b)?;
    Ok(a.weights.iter().zip(&a.values).zip(&b.values).map(|((w, x), y)| w * x * y).sum())
}

#[derive(Clone, Debug)]
struct SolveInfo {
    stiffness: Arc<CsrMatrix>,
    dirichlet: Vec<BoundaryTag>,
    relative_residual: f64,
    iterations: usize,
    flux_recovery: FluxRecovery,
}

/// Nodal P1 coefficients on a mesh. Fields produced by a solve carry the
/// data needed for flux recovery; fields built from raw values do not.
#[derive(Clone, Debug)]
pub struct ScalarField {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
    solve: Option<SolveInfo>,
    recovered: OnceLock<Vec<[f64; 2]>>,
}

impl ScalarField {
    pub fn from_values(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_nodes() {
            return Err(Error::config(format!(
                "field needs {} nodal values, got {}",
                mesh.num_nodes(),
                values.len()
            )));
        }
        Ok(ScalarField { mesh, values, solve: None, recovered: OnceLock::new() })
    }

    /// Nodal interpolant of `f(x, y)`.
    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = mesh.nodes.iter().map(|p| f(p[0], p[1])).collect();
        ScalarField { mesh, values, solve: None, recovered: OnceLock::new() }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_solved(&self) -> bool {
        self.solve.is_some()
    }

    /// Relative residual of the reduced system, if this field was solved.
    pub fn relative_residual(&self) -> Option<f64> {
        self.solve.as_ref().map(|s| s.relative_residual)
    }

    pub fn iterations(&self) -> Option<usize> {
        self.solve.as_ref().map(|s| s.iterations)
    }

    pub fn dirichlet_tags(&self) -> Option<&[BoundaryTag]> {
        self.solve.as_ref().map(|s| s.dirichlet.as_slice())
    }

    /// Same field with every value shifted by `c`; the solve state is dropped.
    pub fn shifted(&self, c: f64) -> ScalarField {
        ScalarField::from_fn_values(self.mesh.clone(), self.values.iter().map(|v| v + c).collect())
    }

    fn from_fn_values(mesh: Arc<Mesh>, values: Vec<f64>) -> Self {
        ScalarField { mesh, values, solve: None, recovered: OnceLock::new() }
    }

    pub fn trace(&self, tag: BoundaryTag) -> SurfaceTrace {
        let values = self.mesh.segment_nodes(tag).iter().map(|&n| self.values[n]).collect();
        SurfaceTrace::new(&self.mesh, tag, values).expect("length matches by construction")
    }

    /// Constant gradient on one triangle.
    pub fn gradient_on(&self, tri: usize) -> [f64; 2] {
        let g = self.mesh.hat_gradients(tri);
        let n = self.mesh.triangles[tri];
        let mut out = [0.0; 2];
        for k in 0..3 {
            out[0] += self.values[n[k]] * g[k][0];
            out[1] += self.values[n[k]] * g[k][1];
        }
        out
    }

    pub fn value_at(&self, x: f64, y: f64) -> Result<f64> {
        let (t, l) = self.mesh.locate(x, y)?;
        let n = self.mesh.triangles[t];
        Ok(l[0] * self.values[n[0]] + l[1] * self.values[n[1]] + l[2] * self.values[n[2]])
    }

    /// Nodal gradients recovered by area-weighted averaging of the
    /// adjacent triangle gradients at interior nodes. Boundary nodes, where
    /// one-sided averaging is only first order, take the linear
    /// extrapolation along the grid line from the two nearest inner nodes.
    pub fn recovered_gradients(&self) -> &[[f64; 2]] {
        self.recovered.get_or_init(|| {
            let m = &*self.mesh;
            let n = m.num_nodes();
            let mut acc = vec![[0.0; 2]; n];
            let mut wsum = vec![0.0; n];
            for t in 0..m.triangles.len() {
                let a = m.signed_area(t);
                let g = self.gradient_on(t);
                for &v in &m.triangles[t] {
                    acc[v][0] += a * g[0];
                    acc[v][1] += a * g[1];
                    wsum[v] += a;
                }
            }
            let mut g: Vec<[f64; 2]> = acc.iter().zip(&wsum).map(|(g, w)| [g[0] / w, g[1] / w]).collect();
            let (nx, ny) = (m.nx, m.ny);
            let extrapolate = |g: &mut Vec<[f64; 2]>, at: usize, near: usize, far: usize| {
                let (p0, p1, p2) = (m.nodes[at], m.nodes[near], m.nodes[far]);
                let d1 = ((p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2)).sqrt();
                let d2 = ((p2[0] - p0[0]).powi(2) + (p2[1] - p0[1]).powi(2)).sqrt();
                // Linear in distance along the line through the three nodes.
                let c = d1 / (d2 - d1);
                g[at] = [(1.0 + c) * g[near][0] - c * g[far][0], (1.0 + c) * g[near][1] - c * g[far][1]];
            };
            if nx >= 2 {
                for j in 1..ny {
                    extrapolate(&mut g, m.node_index(0, j), m.node_index(1, j), m.node_index(2, j));
                    extrapolate(&mut g, m.node_index(nx, j), m.node_index(nx - 1, j), m.node_index(nx - 2, j));
                }
            }
            if ny >= 2 {
                for i in 0..=nx {
                    extrapolate(&mut g, m.node_index(i, 0), m.node_index(i, 1), m.node_index(i, 2));
                    extrapolate(&mut g, m.node_index(i, ny), m.node_index(i, ny - 1), m.node_index(i, ny - 2));
                }
            }
            g
        })
    }

    /// Recovered gradient interpolated linearly at a point.
    pub fn recovered_gradient_at(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        let (t, l) = self.mesh.locate(x, y)?;
        let g = self.recovered_gradients();
        let n = self.mesh.triangles[t];
        let mut out = [0.0; 2];
        for k in 0..3 {
            out[0] += l[k] * g[n[k]][0];
            out[1] += l[k] * g[n[k]][1];
        }
        Ok(out)
    }

    /// Nodal interpolation of this field onto another mesh whose nodes lie
    /// inside this field's mesh.
    pub fn interpolate_onto(&self, target: Arc<Mesh>) -> Result<ScalarField> {
        let values = target
            .nodes
            .iter()
            .map(|p| self.value_at(p[0], p[1]))
            .collect::<Result<Vec<_>>>()?;
        ScalarField::from_values(target, values)
    }

    /// `int |u|^2` (exact for P1 via the edge-midpoint rule).
    pub fn l2_norm_sq(&self) -> f64 {
        let m = &self.mesh;
        (0..m.triangles.len())
            .map(|t| {
                let [a, b, c] = m.triangles[t].map(|n| self.values[n]);
                let mids = [0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)];
                m.signed_area(t) / 3.0 * mids.iter().map(|v| v * v).sum::<f64>()
            })
            .sum()
    }

    /// `||u||_{H^1}` over the whole mesh.
    pub fn h1_norm(&self) -> f64 {
        (self.l2_norm_sq() + energy(self)).sqrt()
    }

    /// `H^1` norm of the recovered (continuous P1) gradient, a discrete
    /// surrogate for `||grad u||_{H^1}`.
    pub fn gradient_h1_norm(&self) -> f64 {
        let g = self.recovered_gradients();
        let mut total = 0.0;
        for comp in 0..2 {
            let f = ScalarField::from_fn_values(self.mesh.clone(), g.iter().map(|v| v[comp]).collect());
            total += f.l2_norm_sq() + energy(&f);
        }
        total.sqrt()
    }
}

/// A Dirichlet elimination prepared once for a mesh and a set of Dirichlet
/// segments; successive solves reuse the factorization.
pub struct PotentialSolver {
    mesh: Arc<Mesh>,
    stiffness: Arc<CsrMatrix>,
    tags: Vec<BoundaryTag>,
    dirichlet_nodes: Vec<usize>,
    free_nodes: Vec<usize>,
    free_index: Vec<Option<usize>>,
    reduced: CsrMatrix,
    factor: Option<BandCholesky>,
    options: SolverOptions,
}

impl PotentialSolver {
    pub fn new(mesh: Arc<Mesh>, tags: &[BoundaryTag], options: SolverOptions) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::Singular(
                "no Dirichlet segment: the pure Neumann problem is singular".into(),
            ));
        }
        let mut tags = tags.to_vec();
        tags.sort();
        tags.dedup();
        let n = mesh.num_nodes();
        let mut is_dirichlet = vec![false; n];
        for &tag in &tags {
            for v in mesh.segment_nodes(tag) {
                is_dirichlet[v] = true;
            }
        }
        let dirichlet_nodes: Vec<usize> = (0..n).filter(|&v| is_dirichlet[v]).collect();
        let free_nodes: Vec<usize> = (0..n).filter(|&v| !is_dirichlet[v]).collect();
        let mut free_index = vec![None; n];
        for (k, &v) in free_nodes.iter().enumerate() {
            free_index[v] = Some(k);
        }
        let stiffness = Arc::new(assemble_stiffness(&mesh));
        let reduced = stiffness.principal_submatrix(&free_index, free_nodes.len());
        let factor = match options.backend {
            Backend::Cholesky if !free_nodes.is_empty() => Some(BandCholesky::factor(&reduced)?),
            _ => None,
        };
        Ok(PotentialSolver { mesh, stiffness, tags, dirichlet_nodes, free_nodes, free_index, reduced, factor, options })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Solves with Dirichlet values given per node (entries on non-Dirichlet
    /// nodes are ignored).
    pub fn solve_nodal(&self, boundary: &[f64]) -> Result<ScalarField> {
        let n = self.mesh.num_nodes();
        assert_eq!(boundary.len(), n);
        let mut values = vec![0.0; n];
        for &v in &self.dirichlet_nodes {
            values[v] = boundary[v];
        }
        // rhs = -K_FD g
        let mut rhs = vec![0.0; self.free_nodes.len()];
        for (k, &v) in self.free_nodes.iter().enumerate() {
            rhs[k] = -self
                .stiffness
                .row(v)
                .filter(|(c, _)| self.free_index[*c].is_none())
                .map(|(c, a)| a * values[c])
                .sum::<f64>();
        }
        let (x, iterations) = match &self.factor {
            Some(f) => (f.solve(&rhs), 0),
            None if self.free_nodes.is_empty() => (Vec::new(), 0),
            None => {
                let max_iter = self.options.max_iter.unwrap_or(10 * self.free_nodes.len() + 100);
                let out = pcg(&self.reduced, &rhs, self.options.tol, max_iter)?;
                (out.x, out.iterations)
            }
        };
        let mut ax = vec![0.0; x.len()];
        self.reduced.mul_vec(&x, &mut ax);
        let rnorm = ax.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let bnorm = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        let relative_residual = if bnorm > 0.0 { rnorm / bnorm } else { rnorm };
        if relative_residual > self.options.tol {
            return Err(Error::NonConvergence { iterations, residual: relative_residual });
        }
        for (k, &v) in self.free_nodes.iter().enumerate() {
            values[v] = x[k];
        }
        Ok(ScalarField {
            mesh: self.mesh.clone(),
            values,
            solve: Some(SolveInfo {
                stiffness: self.stiffness.clone(),
                dirichlet: self.tags.clone(),
                relative_residual,
                iterations,
                flux_recovery: self.options.flux_recovery,
            }),
            recovered: OnceLock::new(),
        })
    }

    /// Solves with one trace per Dirichlet segment.
    pub fn solve(&self, data: &[SurfaceTrace]) -> Result<ScalarField> {
        let mut tags: Vec<BoundaryTag> = data.iter().map(|t| t.tag).collect();
        tags.sort();
        tags.dedup();
        if tags != self.tags {
            return Err(Error::config(format!(
                "Dirichlet data given on {tags:?} but the solver was prepared for {:?}",
                self.tags
            )));
        }
        let mut boundary = vec![0.0; self.mesh.num_nodes()];
        for trace in data {
            let expected = self.mesh.segment_nodes(trace.tag);
            if trace.nodes != expected {
                return Err(Error::config(format!("{} trace does not match the mesh segment", trace.tag)));
            }
            for (&v, &val) in trace.nodes.iter().zip(&trace.values) {
                boundary[v] = val;
            }
        }
        self.solve_nodal(&boundary)
    }
}

/// Solves the Laplace problem with Dirichlet data on the segments of the
/// given traces and homogeneous Neumann conditions elsewhere.
pub fn solve_potential(mesh: &Arc<Mesh>, dirichlet: &[SurfaceTrace], options: SolverOptions) -> Result<ScalarField> {
    let tags: Vec<BoundaryTag> = dirichlet.iter().map(|t| t.tag).collect();
    PotentialSolver::new(mesh.clone(), &tags, options)?.solve(dirichlet)
}

/// Raw nodal boundary fluxes `(K phi)_i` on every distinct boundary node.
pub fn raw_boundary_fluxes(f: &ScalarField) -> Result<Vec<(usize, f64)>> {
    let info = f.solve.as_ref().ok_or_else(|| Error::State("field has not been solved".into()))?;
    Ok(f
        .mesh
        .boundary_nodes()
        .into_iter()
        .map(|v| (v, info.stiffness.row(v).map(|(c, a)| a * f.values[c]).sum()))
        .collect())
}

/// Sum of the raw fluxes over the whole boundary (zero by the discrete
/// divergence theorem).
pub fn total_boundary_flux(f: &ScalarField) -> Result<f64> {
    Ok(raw_boundary_fluxes(f)?.into_iter().map(|(_, q)| q).sum())
}

/// Consistent outward normal flux density on a tagged segment.
pub fn boundary_flux(f: &ScalarField, tag: BoundaryTag) -> Result<SurfaceTrace> {
    let info = f.solve.as_ref().ok_or_else(|| Error::State("field has not been solved".into()))?;
    let mut trace = f.trace(tag);
    let raw: Vec<f64> = trace
        .nodes
        .iter()
        .map(|&v| info.stiffness.row(v).map(|(c, a)| a * f.values[c]).sum())
        .collect();
    trace.values = match info.flux_recovery {
        FluxRecovery::Lumped => raw.iter().zip(&trace.weights).map(|(q, w)| q / w).collect(),
        FluxRecovery::Consistent => {
            let lens: Vec<f64> = trace.arclength.windows(2).map(|w| w[1] - w[0]).collect();
            solve_boundary_mass(&lens, &raw)
        }
    };
    Ok(trace)
}

/// Solves `M q = r` for the P1 mass matrix of a polyline with the given
/// edge lengths (Thomas algorithm).
fn solve_boundary_mass(lens: &[f64], r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    for (k, &l) in lens.iter().enumerate() {
        diag[k] += l / 3.0;
        diag[k + 1] += l / 3.0;
        off[k] = l / 6.0;
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = r[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off[i - 1] * c[i - 1];
        c[i] = if i + 1 < n { off[i] / m } else { 0.0 };
        d[i] = (r[i] - off[i - 1] * d[i - 1]) / m;
    }
    let mut q = vec![0.0; n];
    q[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        q[i] = d[i] - c[i] * q[i + 1];
    }
    q
}

/// Dirichlet energy `int |grad phi|^2` over the mesh.
pub fn energy(f: &ScalarField) -> f64 {
    (0..f.mesh.triangles.len())
        .map(|t| {
            let g = f.gradient_on(t);
            (g[0] * g[0] + g[1] * g[1]) * f.mesh.signed_area(t)
        })
        .sum()
}

/// Subdivision depth used for triangles cut by a region boundary.
pub const DEFAULT_CUT_DEPTH: usize = 6;

/// `int_{region} |grad phi|^2` by seven-point quadrature with pointwise
/// membership, refining triangles cut by the region boundary.
pub fn energy_in(f: &ScalarField, region: &dyn Region) -> f64 {
    integrate_over(&f.mesh, region, DEFAULT_CUT_DEPTH, |t, _, _| {
        let g = f.gradient_on(t);
        g[0] * g[0] + g[1] * g[1]
    })
}

/// `int_{region} integrand(tri, x, y)` over the mesh.
pub fn integrate_over<F>(mesh: &Mesh, region: &dyn Region, depth: usize, integrand: F) -> f64
where
    F: Fn(usize, f64, f64) -> f64 + Sync,
{
    (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            let p = mesh.triangles[t].map(|n| mesh.nodes[n]);
            integrate_triangle(p, region, depth, &|x, y| integrand(t, x, y))
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum()
}

fn integrate_triangle(p: [[f64; 2]; 3], region: &dyn Region, depth: usize, f: &dyn Fn(f64, f64) -> f64) -> f64 {
    let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    let at = |l: [f64; 3]| {
        [l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0], l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1]]
    };
    let mut inside = [false; 7];
    for (k, (l, _)) in TRIANGLE_7.iter().enumerate() {
        let q = at(*l);
        inside[k] = region.contains(q[0], q[1]);
    }
    // Probes near the edge midpoints but strictly inside, so that points on
    // the domain boundary never decide a cut.
    let probes = [[0.45, 0.45, 0.1], [0.1, 0.45, 0.45], [0.45, 0.1, 0.45]];
    let mid_in = probes.map(|l| {
        let q = at(l);
        region.contains(q[0], q[1])
    });
    let all_in = inside.iter().chain(&mid_in).all(|&b| b);
    let all_out = inside.iter().chain(&mid_in).all(|&b| !b);
    if all_out {
        return 0.0;
    }
    if all_in || depth == 0 {
        return area
            * TRIANGLE_7
                .iter()
                .zip(&inside)
                .filter(|(_, &i)| i)
                .map(|((l, w), _)| {
                    let q = at(*l);
                    w * f(q[0], q[1])
                })
                .sum::<f64>();
    }
    let m01 = at([0.5, 0.5, 0.0]);
    let m12 = at([0.0, 0.5, 0.5]);
    let m20 = at([0.5, 0.0, 0.5]);
    [[p[0], m01, m20], [m01, p[1], m12], [m20, m12, p[2]], [m12, m20, m01]]
        .iter()
        .map(|&sub| integrate_triangle(sub, region, depth - 1, f))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CavityDescription, FluidDomain, Profile};
    use crate::mesh::build_mesh;
    use std::f64::consts::PI;

    fn square_mesh(n: usize) -> Arc<Mesh> {
        Arc::new(build_mesh(&FluidDomain::strip(1.0, 1.0).unwrap(), n, n).unwrap())
    }

    fn solve_top(mesh: &Arc<Mesh>, psi: impl Fn(f64) -> f64, opts: SolverOptions) -> ScalarField {
        let trace = SurfaceTrace::from_fn(mesh, BoundaryTag::Top, |x, _| psi(x));
        solve_potential(mesh, &[trace], opts).unwrap()
    }

    #[test]
    fn constant_data_gives_constant_field_and_zero_flux() {
        let m = square_mesh(8);
        let f = solve_top(&m, |_| 2.5, SolverOptions::default());
        assert!(f.values().iter().all(|v| (v - 2.5).abs() < 1e-12));
        for tag in BoundaryTag::ALL {
            let q = boundary_flux(&f, tag).unwrap();
            assert!(q.values.iter().all(|v| v.abs() < 1e-10), "{tag}");
        }
        assert!(energy(&f).abs() < 1e-20);
    }

    #[test]
    fn mode_one_matches_separation_of_variables() {
        let oracle = |x: f64, y: f64| (PI * x).cos() * (PI * y).cosh() / PI.cosh();
        let mut prev = f64::INFINITY;
        for n in [8, 16, 32] {
            let m = square_mesh(n);
            let f = solve_top(&m, |x| (PI * x).cos(), SolverOptions::default());
            let err = m
                .nodes
                .iter()
                .zip(f.values())
                .map(|(p, v)| (v - oracle(p[0], p[1])).abs())
                .fold(0.0, f64::max);
            assert!(err < prev / 3.0, "n={n}: {err} vs {prev}");
            prev = err;
        }
        assert!(prev < 2e-3);
    }

    #[test]
    fn linear_top_data_has_positive_energy() {
        let m = square_mesh(6);
        let f = solve_top(&m, |x| x, SolverOptions::default());
        assert!(energy(&f) > 0.0);
    }

    #[test]
    fn no_dirichlet_segment_is_singular() {
        let m = square_mesh(4);
        assert!(matches!(solve_potential(&m, &[], SolverOptions::default()), Err(Error::Singular(_))));
    }

    #[test]
    fn unsolved_field_has_no_flux() {
        let m = square_mesh(4);
        let f = ScalarField::from_fn(m, |x, _| x);
        assert!(matches!(boundary_flux(&f, BoundaryTag::Top), Err(Error::State(_))));
    }

    #[test]
    fn backends_agree_and_meet_tolerance() {
        let m = Arc::new(
            build_mesh(&FluidDomain::new(1.0, Profile::bump(0.2, 0.5, 0.25), Profile::flat(1.0)).unwrap(), 24, 12)
                .unwrap(),
        );
        let a = solve_top(&m, |x| (2.0 * PI * x).cos() + x, SolverOptions::default());
        let cg_opts = SolverOptions { backend: Backend::ConjugateGradient, ..Default::default() };
        let b = solve_top(&m, |x| (2.0 * PI * x).cos() + x, cg_opts);
        assert!(b.relative_residual().unwrap() <= 1e-10);
        assert!(b.iterations().unwrap() > 0);
        for (u, v) in a.values().iter().zip(b.values()) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn cg_nonconvergence_carries_residual() {
        let m = square_mesh(16);
        let opts = SolverOptions { backend: Backend::ConjugateGradient, max_iter: Some(2), ..Default::default() };
        let trace = SurfaceTrace::from_fn(&m, BoundaryTag::Top, |x, _| (PI * x).cos());
        match solve_potential(&m, &[trace], opts) {
            Err(Error::NonConvergence { residual, .. }) => assert!(residual > 1e-10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn top_flux_density_of_modes() {
        let m = square_mesh(64);
        for k in 1..=2 {
            let kp = k as f64 * PI;
            let f = solve_top(&m, |x| (kp * x).cos(), SolverOptions::default());
            let q = boundary_flux(&f, BoundaryTag::Top).unwrap();
            let exact: Vec<f64> = q.xs.iter().map(|x| kp * kp.tanh() * (kp * x).cos()).collect();
            let num: f64 = q.weights.iter().zip(&q.values).zip(&exact).map(|((w, a), b)| w * (a - b).powi(2)).sum();
            let den: f64 = q.weights.iter().zip(&exact).map(|(w, b)| w * b * b).sum();
            assert!((num / den).sqrt() < 5e-3, "k={k}: {}", (num / den).sqrt());
            // Zero net flux through the surface.
            assert!(q.weights.iter().zip(&q.values).map(|(w, v)| w * v).sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn consistent_recovery_is_also_accurate() {
        let m = square_mesh(32);
        let opts = SolverOptions { flux_recovery: FluxRecovery::Consistent, ..Default::default() };
        let f = solve_top(&m, |x| (PI * x).cos(), opts);
        let q = boundary_flux(&f, BoundaryTag::Top).unwrap();
        let mid = q.len() / 4;
        let exact = PI * PI.tanh() * (PI * q.xs[mid]).cos();
        assert!((q.values[mid] - exact).abs() < 1e-2);
    }

    #[test]
    fn divergence_and_energy_identity_on_bump_domain() {
        let d = FluidDomain::new(1.0, Profile::bump(0.15, 0.4, 0.3), Profile::flat(1.0)).unwrap();
        let m = Arc::new(build_mesh(&d, 40, 20).unwrap());
        let f = solve_top(&m, |x| (PI * x).cos() + 0.3 * (-(x - 0.5f64).powi(2) / 0.01).exp(), SolverOptions::default());
        let e = energy(&f);
        assert!(total_boundary_flux(&f).unwrap().abs() <= 1e-10 * e.max(1.0));
        let q = boundary_flux(&f, BoundaryTag::Top).unwrap();
        let pairing = surface_pairing(&f.trace(BoundaryTag::Top), &q).unwrap();
        assert!((e - pairing).abs() <= 1e-8 * e, "{e} vs {pairing}");
        // Maximum principle surrogate.
        let top = f.trace(BoundaryTag::Top).values;
        let (lo, hi) = top.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(f.values().iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
    }

    #[test]
    fn mode_one_energy_matches_closed_form() {
        let m = square_mesh(64);
        let f = solve_top(&m, |x| (PI * x).cos(), SolverOptions::default());
        let exact = 0.5 * PI * PI.tanh();
        assert!((energy(&f) - exact).abs() / exact < 1e-3);
    }

    #[test]
    fn energy_splits_additively_over_a_cavity() {
        let m = square_mesh(32);
        let f = solve_top(&m, |x| (PI * x).cos(), SolverOptions::default());
        let c = CavityDescription::new(1.0, Profile::flat(0.0), Profile::bump(0.3, 0.5, 0.25)).unwrap();
        let upper = Profile::flat(1.0);
        let above = crate::geometry::Between { width: 1.0, lower: &c.upper, upper: &upper };
        let inside = energy_in(&f, &c);
        let outside = energy_in(&f, &above);
        let whole = energy(&f);
        assert!(inside > 0.0 && outside > 0.0);
        assert!((inside + outside - whole).abs() < 1e-10 * whole, "{inside} + {outside} vs {whole}");
    }

    #[test]
    fn subregion_area_by_membership_quadrature() {
        let m = square_mesh(16);
        let c = CavityDescription::new(1.0, Profile::flat(0.0), Profile::bump(0.3, 0.5, 0.25)).unwrap();
        let area = integrate_over(&m, &c, DEFAULT_CUT_DEPTH, |_, _, _| 1.0);
        assert!((area - 0.075).abs() < 2e-4, "{area}");
    }

    #[test]
    fn pairing_is_symmetric_and_checks_support() {
        let m = square_mesh(10);
        let a = SurfaceTrace::from_fn(&m, BoundaryTag::Top, |x, _| x * x);
        let b = SurfaceTrace::from_fn(&m, BoundaryTag::Top, |x, _| (3.0 * x).sin());
        assert_eq!(surface_pairing(&a, &b).unwrap(), surface_pairing(&b, &a).unwrap());
        let zero = a.with_values(vec![0.0; a.len()]).unwrap();
        assert_eq!(surface_pairing(&a, &zero).unwrap(), 0.0);
        let other = SurfaceTrace::from_fn(&square_mesh(5), BoundaryTag::Top, |x, _| x);
        assert!(matches!(surface_pairing(&a, &other), Err(Error::Config(_))));
        assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn interpolation_onto_nested_mesh_reproduces_linear_fields() {
        let coarse = square_mesh(5);
        let fine = Arc::new(
            build_mesh(&FluidDomain::new(1.0, Profile::bump(0.2, 0.5, 0.3), Profile::flat(1.0)).unwrap(), 9, 7)
                .unwrap(),
        );
        let f = ScalarField::from_fn(coarse, |x, y| 2.0 * x - y + 0.5);
        let g = f.interpolate_onto(fine.clone()).unwrap();
        for (p, v) in fine.nodes.iter().zip(g.values()) {
            assert!((v - (2.0 * p[0] - p[1] + 0.5)).abs() < 1e-12);
        }
        let r = f.recovered_gradient_at(0.3, 0.4).unwrap();
        assert!((r[0] - 2.0).abs() < 1e-12 && (r[1] + 1.0).abs() < 1e-12);
    }
}

//! Discrete Dirichlet-to-Neumann operator of the free surface.
//!
//! The stored matrix `S` is the energy form of the operator: `S_ij` is the
//! raw TOP flux at node `i` of the harmonic extension of the `j`-th hat
//! trace, so that `psi' S psi` is the Dirichlet energy of the extension.
//! The flux density operator is `G = W^-1 S` with `W` the lumped TOP weights.

use std::io::Write;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Profile;
use crate::mesh::{BoundaryTag, Mesh};
use crate::solver::{PotentialSolver, SolverOptions, SurfaceTrace};

/// Asymmetry above which assembly logs a mesh-quality warning.
pub const ASYMMETRY_WARNING: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct DtNMatrix {
    template: SurfaceTrace,
    energy: DMatrix<f64>,
    asymmetry: f64,
    nx: usize,
    ny: usize,
}

/// Assembles the operator with one Dirichlet solve per TOP node.
pub fn assemble_dtn(mesh: &Arc<Mesh>, options: SolverOptions) -> Result<DtNMatrix> {
    let top = mesh.segment_nodes(BoundaryTag::Top);
    let n = top.len();
    if n < 2 {
        return Err(Error::config("DtN assembly needs at least two TOP nodes"));
    }
    let solver = PotentialSolver::new(mesh.clone(), &[BoundaryTag::Top], options)?;
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut g = vec![0.0; mesh.num_nodes()];
            g[top[j]] = 1.0;
            let field = solver.solve_nodal(&g)?;
            let k = solver.stiffness();
            Ok(top.iter().map(|&i| k.row(i).map(|(c, a)| a * field.values()[c]).sum()).collect())
        })
        .collect::<Result<_>>()?;
    let raw = DMatrix::from_fn(n, n, |i, j| columns[j][i]);
    let diff = (&raw - raw.transpose()).norm();
    let asymmetry = diff / raw.norm().max(f64::MIN_POSITIVE);
    if asymmetry > ASYMMETRY_WARNING {
        warn!("DtN asymmetry {asymmetry:.3e} exceeds {ASYMMETRY_WARNING:.0e} before symmetrization");
    }
    let energy = (&raw + raw.transpose()) * 0.5;
    let template = SurfaceTrace::top(mesh, vec![0.0; n])?;
    Ok(DtNMatrix { template, energy, asymmetry, nx: mesh.nx, ny: mesh.ny })
}

impl DtNMatrix {
    pub fn dim(&self) -> usize {
        self.energy.nrows()
    }

    /// Relative Frobenius asymmetry measured before symmetrization.
    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    /// Symmetric energy matrix `S = W G`.
    pub fn energy_matrix(&self) -> &DMatrix<f64> {
        &self.energy
    }

    /// Flux density matrix `G = W^-1 S`.
    pub fn density_matrix(&self) -> DMatrix<f64> {
        let w = &self.template.weights;
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.energy[(i, j)] / w[i])
    }

    /// TOP trace layout (positions and weights) the operator acts on.
    pub fn template(&self) -> &SurfaceTrace {
        &self.template
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    fn check(&self, psi: &SurfaceTrace) -> Result<()> {
        if psi.same_support(&self.template) {
            Ok(())
        } else {
            Err(Error::config("trace does not live on the TOP node set of the DtN matrix"))
        }
    }

    /// Flux density `G psi`.
    pub fn apply(&self, psi: &SurfaceTrace) -> Result<SurfaceTrace> {
        self.check(psi)?;
        let s = &self.energy * DVector::from_column_slice(&psi.values);
        psi.with_values(s.iter().zip(&psi.weights).map(|(v, w)| v / w).collect())
    }

    /// `psi' S psi`, the energy of the harmonic extension.
    pub fn quadratic_form(&self, psi: &SurfaceTrace) -> Result<f64> {
        self.check(psi)?;
        let v = DVector::from_column_slice(&psi.values);
        Ok(v.dot(&(&self.energy * &v)))
    }

    /// Writes the density matrix `G` as CSV rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = self.density_matrix();
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim()).map(|j| format!("{:.17e}", g[(i, j)])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: f64,
    /// W-normalized eigenvector on the TOP nodes.
    pub vector: Vec<f64>,
}

/// Smallest `k_max` eigenpairs of `S v = lambda W v`, ascending.
pub fn dtn_spectrum(g: &DtNMatrix, k_max: usize) -> Result<Vec<Eigenpair>> {
    let n = g.dim();
    if k_max > n {
        return Err(Error::config(format!("k_max = {k_max} exceeds the matrix dimension {n}")));
    }
    let inv_sqrt: Vec<f64> = g.template.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * g.energy[(i, j)] * inv_sqrt[j]);
    let eig = SymmetricEigen::try_new(scaled, 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigen-solve did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    Ok(order
        .into_iter()
        .take(k_max)
        .map(|k| Eigenpair {
            value: eig.eigenvalues[k],
            vector: eig.eigenvectors.column(k).iter().zip(&inv_sqrt).map(|(v, s)| v * s).collect(),
        })
        .collect())
}

/// Writes `k, lambda_k[, analytic_k]` rows.
pub fn write_spectrum_csv<W: Write>(mut w: W, pairs: &[Eigenpair], analytic: Option<&dyn Fn(usize) -> f64>) -> std::io::Result<()> {
    writeln!(w, "k,lambda,analytic")?;
    for (k, p) in pairs.iter().enumerate() {
        match analytic {
            Some(f) => writeln!(w, "{k},{:.17e},{:.17e}", p.value, f(k))?,
            None => writeln!(w, "{k},{:.17e},", p.value)?,
        }
    }
    Ok(())
}

/// Flat strip eigenvalue `(k pi / L) tanh(k pi h / L)`.
pub fn strip_eigenvalue(k: usize, width: f64, depth: f64) -> f64 {
    let kp = k as f64 * std::f64::consts::PI / width;
    kp * (kp * depth).tanh()
}

/// Surface vertical velocity `(sqrt(1+z'^2) q + psi_x z') / (1 + z'^2)` with
/// `q = G psi` the outward normal flux density.
pub fn vertical_velocity(g: &DtNMatrix, psi: &SurfaceTrace, surface: &Profile) -> Result<SurfaceTrace> {
    let q = g.apply(psi)?;
    let xs = &psi.xs;
    let n = xs.len();
    let psi_x: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (psi.values[b] - psi.values[a]) / (xs[b] - xs[a])
        })
        .collect();
    let values = (0..n)
        .map(|i| {
            let zx = surface.slope(xs[i]);
            let s = 1.0 + zx * zx;
            (s.sqrt() * q.values[i] + psi_x[i] * zx) / s
        })
        .collect();
    psi.with_values(values)
}

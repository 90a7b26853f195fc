//! Structured sigma-mapped triangulations of a fluid domain.
//!
//! The reference rectangle `(xi, s) in [0, L] x [0, 1]` is mapped to the
//! physical domain by `(xi, s) -> (xi, b(xi) + s (zeta(xi) - b(xi)))`. Node
//! `(i, j)` (column `i`, row `j`) has index `i * (ny + 1) + j`, so every
//! column is a vertical line of nodes and every row a polyline following the
//! bottom-to-surface interpolation.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FluidDomain, Profile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundaryTag {
    Top,
    Bottom,
    WallLeft,
    WallRight,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] =
        [BoundaryTag::Top, BoundaryTag::Bottom, BoundaryTag::WallLeft, BoundaryTag::WallRight];
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryTag::Top => "TOP",
            BoundaryTag::Bottom => "BOTTOM",
            BoundaryTag::WallLeft => "WALL_LEFT",
            BoundaryTag::WallRight => "WALL_RIGHT",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    xs: Vec<f64>,
    bottom: Vec<f64>,
    top: Vec<f64>,
    levels: Vec<f64>,
}

/// Triangulates `domain` with `nx x ny` sigma cells, each split into two
/// triangles along the `(i, j) - (i + 1, j + 1)` diagonal.
pub fn build_mesh(domain: &FluidDomain, nx: usize, ny: usize) -> Result<Mesh> {
    if nx < 1 || ny < 1 {
        return Err(Error::config(format!("mesh needs nx >= 1 and ny >= 1 (got {nx} x {ny})")));
    }
    domain.validate()?;
    let width = domain.width;
    let xs: Vec<f64> = (0..=nx)
        .map(|i| if i == nx { width } else { width * i as f64 / nx as f64 })
        .collect();
    let bottom: Vec<f64> = xs.iter().map(|&x| domain.bottom.value(x)).collect();
    let top: Vec<f64> = xs.iter().map(|&x| domain.surface.value(x)).collect();

    let levels: Vec<f64> = (0..=ny).map(|j| j as f64 / ny as f64).collect();
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            let y = if j == ny {
                top[i]
            } else {
                let s = levels[j];
                bottom[i] + s * (top[i] - bottom[i])
            };
            nodes.push([xs[i], y]);
        }
    }
    let idx = |i: usize, j: usize| i * (ny + 1) + j;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let (n00, n10, n01, n11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            triangles.push([n00, n10, n11]);
            triangles.push([n00, n11, n01]);
        }
    }
    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge { nodes: [idx(i, 0), idx(i + 1, 0)], tag: BoundaryTag::Bottom });
    }
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge { nodes: [idx(i, ny), idx(i + 1, ny)], tag: BoundaryTag::Top });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge { nodes: [idx(0, j), idx(0, j + 1)], tag: BoundaryTag::WallLeft });
    }
    for j in 0..ny {
        boundary_edges
            .push(BoundaryEdge { nodes: [idx(nx, j), idx(nx, j + 1)], tag: BoundaryTag::WallRight });
    }
    let mesh = Mesh { nodes, triangles, boundary_edges, nx, ny, width, xs, bottom, top, levels };
    if let Some(t) = (0..mesh.triangles.len()).find(|&t| mesh.signed_area(t) <= 0.0) {
        return Err(Error::geometry(format!("triangle {t} has nonpositive area")));
    }
    Ok(mesh)
}

impl Mesh {
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        i * (self.ny + 1) + j
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Column abscissae `x_0 < ... < x_nx`.
    pub fn column_xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|n| self.nodes[n]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    /// Nodes of a tagged boundary segment in order of increasing x (TOP,
    /// BOTTOM) or increasing y (walls).
    pub fn segment_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        match tag {
            BoundaryTag::Top => (0..=self.nx).map(|i| self.node_index(i, self.ny)).collect(),
            BoundaryTag::Bottom => (0..=self.nx).map(|i| self.node_index(i, 0)).collect(),
            BoundaryTag::WallLeft => (0..=self.ny).map(|j| self.node_index(0, j)).collect(),
            BoundaryTag::WallRight => (0..=self.ny).map(|j| self.node_index(self.nx, j)).collect(),
        }
    }

    pub fn top_nodes(&self) -> Vec<usize> {
        self.segment_nodes(BoundaryTag::Top)
    }

    /// Distinct nodes lying on any boundary segment.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mut on = vec![false; self.nodes.len()];
        for e in &self.boundary_edges {
            on[e.nodes[0]] = true;
            on[e.nodes[1]] = true;
        }
        (0..self.nodes.len()).filter(|&n| on[n]).collect()
    }

    /// The discretised bottom as a piecewise-linear profile.
    pub fn bottom_profile(&self) -> Profile {
        Profile::PiecewiseLinear { knots: self.xs.iter().copied().zip(self.bottom.iter().copied()).collect() }
    }

    /// The discretised free surface as a piecewise-linear profile.
    pub fn surface_profile(&self) -> Profile {
        Profile::PiecewiseLinear { knots: self.xs.iter().copied().zip(self.top.iter().copied()).collect() }
    }

    /// True when both meshes carry the same free-surface nodes.
    pub fn same_top(&self, other: &Mesh) -> bool {
        self.nx == other.nx
            && self.width == other.width
            && self.xs == other.xs
            && self.top == other.top
    }

    /// Verifies the structural invariants against the generating domain.
    pub fn check_invariants(&self, domain: &FluidDomain) -> Result<()> {
        for t in 0..self.triangles.len() {
            if self.signed_area(t) <= 0.0 {
                return Err(Error::geometry(format!("triangle {t} has nonpositive area")));
            }
        }
        let tol = 1e-12 * self.width;
        for e in self.boundary_edges.iter().filter(|e| e.tag == BoundaryTag::Top) {
            for n in e.nodes {
                let [x, y] = self.nodes[n];
                if (y - domain.surface.value(x)).abs() > tol {
                    return Err(Error::geometry(format!("TOP node {n} is off the surface")));
                }
            }
        }
        if !self.is_connected() {
            return Err(Error::geometry("mesh graph is disconnected"));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for t in &self.triangles {
            for k in 0..3 {
                adj[t[k]].push(t[(k + 1) % 3]);
                adj[t[(k + 1) % 3]].push(t[k]);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Triangle containing `(x, y)` and the barycentric coordinates of the
    /// point in it. Points within a relative `1e-9` of the boundary are
    /// snapped inside.
    pub fn locate(&self, x: f64, y: f64) -> Result<(usize, [f64; 3])> {
        let eps = 1e-9;
        let w = self.width;
        if x < -eps * w || x > w * (1.0 + eps) {
            return Err(Error::geometry(format!("point ({x}, {y}) is outside the mesh columns")));
        }
        let dx = w / self.nx as f64;
        let i = ((x / dx).floor().max(0.0) as usize).min(self.nx - 1);
        let t = ((x - self.xs[i]) / (self.xs[i + 1] - self.xs[i])).clamp(0.0, 1.0);
        let b = self.bottom[i] + t * (self.bottom[i + 1] - self.bottom[i]);
        let z = self.top[i] + t * (self.top[i + 1] - self.top[i]);
        let s = (y - b) / (z - b);
        if !(-eps..=1.0 + eps).contains(&s) {
            return Err(Error::geometry(format!(
                "point ({x:.6}, {y:.6}) is outside the mesh (sigma coordinate {s:.3e})"
            )));
        }
        let j = self.levels.partition_point(|&l| l <= s).saturating_sub(1).min(self.ny - 1);
        let cell = 2 * (i * self.ny + j);
        let mut best = (f64::NEG_INFINITY, cell, [0.0; 3]);
        for tri in [cell, cell + 1] {
            let l = self.barycentric(tri, x, y);
            let m = l[0].min(l[1]).min(l[2]);
            if m > best.0 {
                best = (m, tri, l);
            }
        }
        let (_, tri, mut l) = best;
        // Clamp roundoff excursions and renormalise.
        for v in &mut l {
            *v = v.max(0.0);
        }
        let sum: f64 = l.iter().sum();
        Ok((tri, l.map(|v| v / sum)))
    }

    pub fn barycentric(&self, tri: usize, x: f64, y: f64) -> [f64; 3] {
        let [a, b, c] = self.triangles[tri].map(|n| self.nodes[n]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((x - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (y - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Gradients of the three barycentric (hat) functions on a triangle.
    pub fn hat_gradients(&self, tri: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[tri].map(|n| self.nodes[n]);
        let two_area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let p = [a, b, c];
        let mut g = [[0.0; 2]; 3];
        for k in 0..3 {
            let (q, r) = (p[(k + 1) % 3], p[(k + 2) % 3]);
            g[k] = [(q[1] - r[1]) / two_area, (r[0] - q[0]) / two_area];
        }
        g
    }

    /// Plain-text node, triangle and tagged-edge tables.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# mesh nx={} ny={} width={}", self.nx, self.ny, self.width)?;
        writeln!(w, "# nodes {}: index x y", self.nodes.len())?;
        for (k, p) in self.nodes.iter().enumerate() {
            writeln!(w, "{k} {:.17e} {:.17e}", p[0], p[1])?;
        }
        writeln!(w, "# triangles {}: index a b c", self.triangles.len())?;
        for (k, t) in self.triangles.iter().enumerate() {
            writeln!(w, "{k} {} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "# boundary_edges {}: a b tag", self.boundary_edges.len())?;
        for e in &self.boundary_edges {
            writeln!(w, "{} {} {}", e.nodes[0], e.nodes[1], e.tag)?;
        }
        Ok(())
    }
}

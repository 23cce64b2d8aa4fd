//! Conforming triangulations with newest-vertex-bisection refinement.
//!
//! Every triangle is stored counterclockwise as `[peak, a, b]`: the
//! refinement edge is `(a, b)`, i.e. local edge 0, opposite the newest vertex.
//! Local edge `i` is always the edge opposite local vertex `i`.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

const NONE: usize = usize::MAX;

/// Benchmark geometries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// (-1, 1)^2
    Square,
    /// (-1, 1)^2 minus [0, 1] x [-1, 0]
    LShape,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    parent: Option<Vec<usize>>,
    generation: usize,
    edges: Vec<[usize; 2]>,
    tri_edges: Vec<[usize; 3]>,
    edge_tris: Vec<[usize; 2]>,
    boundary_vertex: Vec<bool>,
    vertex_tri_offsets: Vec<usize>,
    vertex_tri_list: Vec<usize>,
}

/// The triangles sharing a vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexPatch {
    pub vertex: usize,
    pub triangles: Vec<usize>,
    pub boundary: bool,
}

/// A mesh carved out of (or refined from part of) a larger mesh.
///
/// `origin[t]` is the triangle of the source mesh containing local triangle `t`.
#[derive(Debug, Clone)]
pub struct SubMesh {
    pub mesh: Mesh,
    pub origin: Vec<usize>,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

fn sorted(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

impl Mesh {
    /// Builds a mesh from raw triangles. Orientation is made counterclockwise
    /// and the refinement edge is the longest edge, ties broken by the
    /// smallest opposite-vertex id.
    pub fn from_triangles(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut canonical = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references a missing vertex"
                )));
            }
            let mut tri = *tri;
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area == 0.0 {
                return Err(Error::InvalidMesh(format!("triangle {t} is degenerate")));
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
            let mut best = 0;
            let mut best_len = -1.0;
            for i in 0..3 {
                let len = dist(vertices[tri[(i + 1) % 3]], vertices[tri[(i + 2) % 3]]);
                let better = len > best_len * (1.0 + 1e-12)
                    || ((len - best_len).abs() <= 1e-12 * best_len && tri[i] < tri[best]);
                if better {
                    best = i;
                    best_len = len;
                }
            }
            canonical.push([tri[best], tri[(best + 1) % 3], tri[(best + 2) % 3]]);
        }
        Self::from_canonical(vertices, canonical, None, 0)
    }

    /// Builds a mesh whose triangles are already in `[peak, a, b]` form.
    pub(crate) fn from_canonical(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        parent: Option<Vec<usize>>,
        generation: usize,
    ) -> Result<Self> {
        let mut edge_index: HashMap<[usize; 2], usize> =
            HashMap::with_capacity(triangles.len() * 2);
        let mut edges = Vec::new();
        let mut edge_tris: Vec<[usize; 2]> = Vec::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} is not counterclockwise"
                )));
            }
            let mut te = [0; 3];
            for (i, slot) in te.iter_mut().enumerate() {
                let key = sorted(tri[(i + 1) % 3], tri[(i + 2) % 3]);
                let e = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edge_tris.push([NONE, NONE]);
                    edges.len() - 1
                });
                if edge_tris[e][0] == NONE {
                    edge_tris[e][0] = t;
                } else if edge_tris[e][1] == NONE {
                    edge_tris[e][1] = t;
                } else {
                    return Err(Error::InvalidMesh(format!(
                        "edge {key:?} shared by more than two triangles"
                    )));
                }
                *slot = e;
            }
            tri_edges.push(te);
        }
        let mut boundary_vertex = vec![false; vertices.len()];
        for (e, et) in edge_tris.iter().enumerate() {
            if et[1] == NONE {
                boundary_vertex[edges[e][0]] = true;
                boundary_vertex[edges[e][1]] = true;
            }
        }
        let mut counts = vec![0usize; vertices.len() + 1];
        for tri in &triangles {
            for &v in tri {
                counts[v + 1] += 1;
            }
        }
        for i in 0..vertices.len() {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut list = vec![0; counts[vertices.len()]];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                list[fill[v]] = t;
                fill[v] += 1;
            }
        }
        Ok(Self {
            vertices,
            triangles,
            parent,
            generation,
            edges,
            tri_edges,
            edge_tris,
            boundary_vertex,
            vertex_tri_offsets: counts,
            vertex_tri_list: list,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Parent (in the previous generation) of every triangle, if this mesh was produced by [`Mesh::bisect`].
    pub fn parents(&self) -> Option<&[usize]> {
        self.parent.as_deref()
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Edge ids of triangle `t`; entry `i` is the edge opposite local vertex `i`.
    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }

    /// Triangles adjacent to edge `e`; the second entry is `None` on the boundary.
    pub fn edge_triangles(&self, e: usize) -> (usize, Option<usize>) {
        let et = self.edge_tris[e];
        (et[0], (et[1] != NONE).then_some(et[1]))
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.edge_tris[e][1] == NONE
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    /// Refinement edge of triangle `t` as a vertex pair.
    pub fn refinement_edge(&self, t: usize) -> [usize; 2] {
        [self.triangles[t][1], self.triangles[t][2]]
    }

    pub fn vertex_triangles(&self, v: usize) -> &[usize] {
        &self.vertex_tri_list[self.vertex_tri_offsets[v]..self.vertex_tri_offsets[v + 1]]
    }

    pub fn coords(&self, t: usize) -> [Point; 3] {
        let tri = self.triangles[t];
        [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ]
    }

    pub fn area(&self, t: usize) -> f64 {
        let c = self.coords(t);
        signed_area(c[0], c[1], c[2])
    }

    /// Diameter h_K (longest edge).
    pub fn diameter(&self, t: usize) -> f64 {
        let c = self.coords(t);
        dist(c[0], c[1]).max(dist(c[1], c[2])).max(dist(c[2], c[0]))
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| self.diameter(t))
            .fold(0.0, f64::max)
    }

    /// Smallest interior angle of triangle `t`, in radians.
    pub fn min_angle(&self, t: usize) -> f64 {
        let c = self.coords(t);
        (0..3)
            .map(|i| {
                let p = c[i];
                let a = c[(i + 1) % 3];
                let b = c[(i + 2) % 3];
                let u = [a[0] - p[0], a[1] - p[1]];
                let v = [b[0] - p[0], b[1] - p[1]];
                let cos = (u[0] * v[0] + u[1] * v[1]) / (dist(a, p) * dist(b, p));
                cos.clamp(-1.0, 1.0).acos()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mesh_min_angle(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| self.min_angle(t))
            .fold(f64::INFINITY, f64::min)
    }

    /// Maps a physical point to barycentric coordinates in triangle `t`.
    pub fn barycentric(&self, t: usize, x: Point) -> [f64; 3] {
        let [a, b, c] = self.coords(t);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Maps reference coordinates (x̂, ŷ) of triangle `t` to the physical point.
    pub fn map_point(&self, t: usize, xi: [f64; 2]) -> Point {
        let [a, b, c] = self.coords(t);
        [
            a[0] + (b[0] - a[0]) * xi[0] + (c[0] - a[0]) * xi[1],
            a[1] + (b[1] - a[1]) * xi[0] + (c[1] - a[1]) * xi[1],
        ]
    }

    /// The simplex patch of vertex `a`.
    pub fn vertex_patch(&self, a: usize) -> Result<VertexPatch> {
        if a >= self.n_vertices() {
            return Err(Error::UnknownVertex(a));
        }
        Ok(VertexPatch {
            vertex: a,
            triangles: self.vertex_triangles(a).to_vec(),
            boundary: self.boundary_vertex[a],
        })
    }

    /// Newest vertex bisection of the flagged triangles with conforming closure.
    ///
    /// Every flagged triangle is bisected at least once. The returned mesh is
    /// one generation newer and records the parent of every triangle.
    pub fn bisect(&self, flagged: &[usize]) -> Result<Mesh> {
        let mut marked = vec![false; self.n_edges()];
        let mut stack = Vec::new();
        for &t in flagged {
            if t >= self.n_triangles() {
                return Err(Error::UnknownTriangle(t));
            }
            let e = self.tri_edges[t][0];
            if !marked[e] {
                marked[e] = true;
                stack.push(e);
            }
        }
        // closure: a triangle with any marked edge must have its refinement edge marked
        while let Some(e) = stack.pop() {
            for &t in &self.edge_tris[e] {
                if t == NONE {
                    continue;
                }
                let r = self.tri_edges[t][0];
                if !marked[r] {
                    marked[r] = true;
                    stack.push(r);
                }
            }
        }
        let mut vertices = self.vertices.clone();
        let mut mid = vec![NONE; self.n_edges()];
        for (e, &m) in marked.iter().enumerate() {
            if m {
                let [a, b] = self.edges[e];
                mid[e] = vertices.len();
                vertices.push(midpoint(self.vertices[a], self.vertices[b]));
            }
        }
        let mut triangles = Vec::with_capacity(self.n_triangles() + 2 * flagged.len());
        let mut parent = Vec::with_capacity(triangles.capacity());
        for (t, &[p, a, b]) in self.triangles.iter().enumerate() {
            let [e0, e1, e2] = self.tri_edges[t];
            if !marked[e0] {
                triangles.push([p, a, b]);
                parent.push(t);
                continue;
            }
            let m0 = mid[e0];
            // left child [m0, p, a] has refinement edge (p, a) = e2
            if marked[e2] {
                let m2 = mid[e2];
                triangles.push([m2, m0, p]);
                triangles.push([m2, a, m0]);
                parent.extend([t, t]);
            } else {
                triangles.push([m0, p, a]);
                parent.push(t);
            }
            // right child [m0, b, p] has refinement edge (b, p) = e1
            if marked[e1] {
                let m1 = mid[e1];
                triangles.push([m1, m0, b]);
                triangles.push([m1, p, m0]);
                parent.extend([t, t]);
            } else {
                triangles.push([m0, b, p]);
                parent.push(t);
            }
        }
        Mesh::from_canonical(vertices, triangles, Some(parent), self.generation + 1)
    }

    /// Copies the given triangles (keeping their refinement edges) into a standalone mesh.
    pub fn extract(&self, tris: &[usize]) -> Result<SubMesh> {
        let mut local = HashMap::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::with_capacity(tris.len());
        for &t in tris {
            if t >= self.n_triangles() {
                return Err(Error::UnknownTriangle(t));
            }
            let tri = self.triangles[t].map(|v| {
                *local.entry(v).or_insert_with(|| {
                    vertices.push(self.vertices[v]);
                    vertices.len() - 1
                })
            });
            triangles.push(tri);
        }
        let mesh = Mesh::from_canonical(vertices, triangles, None, self.generation)?;
        Ok(SubMesh {
            mesh,
            origin: tris.to_vec(),
        })
    }

    /// Local refinement of the patch of `a`: every patch triangle is bisected
    /// once, plus closure inside the patch. `origin` points into `self`.
    pub fn refine_patch_local(&self, a: usize) -> Result<SubMesh> {
        let patch = self.vertex_patch(a)?;
        let sub = self.extract(&patch.triangles)?;
        let all: Vec<usize> = (0..sub.mesh.n_triangles()).collect();
        let refined = sub.mesh.bisect(&all)?;
        let origin = refined
            .parents()
            .expect("bisect records parents")
            .iter()
            .map(|&p| sub.origin[p])
            .collect();
        Ok(SubMesh {
            mesh: refined,
            origin,
        })
    }

    /// Structural and geometric conformity check: positive areas, every edge
    /// shared by at most two triangles, and no vertex inside a boundary edge
    /// (which would be a hanging node).
    pub fn check_conformity(&self) -> Result<()> {
        for t in 0..self.n_triangles() {
            if self.area(t) <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has nonpositive area"
                )));
            }
        }
        let mut used = vec![false; self.n_vertices()];
        for tri in &self.triangles {
            for &v in tri {
                used[v] = true;
            }
        }
        for e in 0..self.n_edges() {
            if !self.is_boundary_edge(e) {
                continue;
            }
            let [a, b] = self.edges[e];
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            let len = dist(pa, pb);
            for (v, &p) in self.vertices.iter().enumerate() {
                if v == a || v == b || !used[v] {
                    continue;
                }
                let cross = (pb[0] - pa[0]) * (p[1] - pa[1]) - (pb[1] - pa[1]) * (p[0] - pa[0]);
                let along =
                    ((p[0] - pa[0]) * (pb[0] - pa[0]) + (p[1] - pa[1]) * (pb[1] - pa[1])) / len;
                if cross.abs() <= 1e-12 * len * len
                    && along > 1e-12 * len
                    && along < len * (1.0 - 1e-12)
                {
                    return Err(Error::InvalidMesh(format!(
                        "hanging vertex {v} on edge {e}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes the vertex table (`id x y`) and triangle table (`id v0 v1 v2 degree`).
    pub fn write_text<W: Write>(&self, degrees: &[usize], mut w: W) -> Result<()> {
        writeln!(w, "vertices {}", self.n_vertices())?;
        for (i, p) in self.vertices.iter().enumerate() {
            writeln!(w, "{i} {:.17e} {:.17e}", p[0], p[1])?;
        }
        writeln!(w, "triangles {}", self.n_triangles())?;
        for (i, t) in self.triangles.iter().enumerate() {
            let p = degrees.get(i).copied().unwrap_or(1);
            writeln!(w, "{i} {} {} {} {p}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

/// Criss-cross mesh of the benchmark domain: square cells of side
/// `2/ceil(2/h_max)`, each split into four triangles by both diagonals.
pub fn build_initial_mesh(domain: Domain, h_max: f64) -> Result<Mesh> {
    if !h_max.is_finite() || h_max <= 0.0 {
        return Err(Error::NonPositiveMeshSize(h_max));
    }
    // cells per unit length; the L-shape needs grid lines through the origin
    let per_unit = match domain {
        Domain::Square => ((2.0 / h_max).ceil() as usize).max(1),
        Domain::LShape => 2 * ((1.0 / h_max).ceil() as usize).max(1),
    };
    let n = per_unit;
    let c = 2.0 / n as f64;
    let keep = |i: usize, j: usize| match domain {
        Domain::Square => true,
        // cell lower-left corner (x0, y0); drop x0 >= 0 and y0 < 0
        Domain::LShape => !(2 * i >= n && 2 * j < n),
    };
    let coord = |k: usize| -1.0 + c * k as f64;
    let mut node_id = HashMap::new();
    let mut vertices = Vec::new();
    let mut node = |i: usize, j: usize, vertices: &mut Vec<Point>| -> usize {
        *node_id.entry((i, j)).or_insert_with(|| {
            vertices.push([coord(i), coord(j)]);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if !keep(i, j) {
                continue;
            }
            let c00 = node(i, j, &mut vertices);
            let c10 = node(i + 1, j, &mut vertices);
            let c11 = node(i + 1, j + 1, &mut vertices);
            let c01 = node(i, j + 1, &mut vertices);
            let m = vertices.len();
            vertices.push([coord(i) + 0.5 * c, coord(j) + 0.5 * c]);
            triangles.push([m, c00, c10]);
            triangles.push([m, c10, c11]);
            triangles.push([m, c11, c01]);
            triangles.push([m, c01, c00]);
        }
    }
    Mesh::from_triangles(vertices, triangles)
}

//! Variable-degree conforming spaces P_p(T) ∩ H¹ with a hierarchical basis.
//!
//! DOFs are numbered vertices first (DOF `v` belongs to vertex `v`), then edge
//! modes edge by edge, then element bubbles. Edge degrees follow the minimum
//! rule. Every DOF supported on the mesh boundary is constrained.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::{n_bubbles, ElementLayout, Tabulation};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::quadrature::{cached_line, cached_rule};

pub(crate) const NONE: usize = usize::MAX;

/// Per-triangle polynomial degrees, all >= 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeVector(Vec<usize>);

impl DegreeVector {
    pub fn new(degrees: Vec<usize>) -> Result<Self> {
        if let Some((t, &d)) = degrees.iter().enumerate().find(|(_, &d)| d < 1) {
            return Err(Error::InvalidDegree {
                triangle: t,
                degree: d,
            });
        }
        Ok(Self(degrees))
    }

    pub fn uniform(n: usize, p: usize) -> Self {
        assert!(p >= 1);
        Self(vec![p; n])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn get(&self, t: usize) -> usize {
        self.0[t]
    }
}

#[derive(Debug)]
pub struct HpSpace {
    mesh: Arc<Mesh>,
    degrees: DegreeVector,
    edge_degrees: Vec<usize>,
    edge_offset: Vec<usize>,
    bubble_offset: Vec<usize>,
    n_dofs: usize,
    constrained: Vec<bool>,
    free_index: Vec<usize>,
    n_free: usize,
    layouts: Vec<ElementLayout>,
    dof_offsets: Vec<usize>,
    dof_list: Vec<usize>,
    vicinity_degree: Vec<usize>,
}

impl HpSpace {
    pub fn new(mesh: Arc<Mesh>, degrees: DegreeVector) -> Result<Self> {
        if degrees.len() != mesh.n_triangles() {
            return Err(Error::DegreeLength {
                expected: mesh.n_triangles(),
                got: degrees.len(),
            });
        }
        let nv = mesh.n_vertices();
        let ne = mesh.n_edges();
        let mut edge_degrees = vec![usize::MAX; ne];
        for t in 0..mesh.n_triangles() {
            for e in mesh.triangle_edges(t) {
                edge_degrees[e] = edge_degrees[e].min(degrees.get(t));
            }
        }
        let mut edge_offset = Vec::with_capacity(ne);
        let mut next = nv;
        for &d in &edge_degrees {
            edge_offset.push(next);
            next += d - 1;
        }
        let mut bubble_offset = Vec::with_capacity(mesh.n_triangles());
        for t in 0..mesh.n_triangles() {
            bubble_offset.push(next);
            next += n_bubbles(degrees.get(t));
        }
        let n_dofs = next;
        let mut constrained = vec![false; n_dofs];
        for v in 0..nv {
            constrained[v] = mesh.is_boundary_vertex(v);
        }
        for e in 0..ne {
            if mesh.is_boundary_edge(e) {
                for k in 0..edge_degrees[e] - 1 {
                    constrained[edge_offset[e] + k] = true;
                }
            }
        }
        let mut free_index = vec![NONE; n_dofs];
        let mut n_free = 0;
        for (i, &c) in constrained.iter().enumerate() {
            if !c {
                free_index[i] = n_free;
                n_free += 1;
            }
        }
        let mut layouts = Vec::with_capacity(mesh.n_triangles());
        let mut dof_offsets = vec![0];
        let mut dof_list = Vec::new();
        for t in 0..mesh.n_triangles() {
            let tri = mesh.triangles()[t];
            let te = mesh.triangle_edges(t);
            let mut layout = ElementLayout {
                degree: degrees.get(t),
                edge_degrees: [0; 3],
                edge_flip: [false; 3],
            };
            dof_list.extend_from_slice(&tri);
            for i in 0..3 {
                let e = te[i];
                layout.edge_degrees[i] = edge_degrees[e];
                layout.edge_flip[i] = tri[(i + 1) % 3] > tri[(i + 2) % 3];
                dof_list.extend(edge_offset[e]..edge_offset[e] + edge_degrees[e] - 1);
            }
            let nb = n_bubbles(degrees.get(t));
            dof_list.extend(bubble_offset[t]..bubble_offset[t] + nb);
            layouts.push(layout);
            dof_offsets.push(dof_list.len());
        }
        let mut vertex_degree = vec![0; nv];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            for &v in tri {
                vertex_degree[v] = vertex_degree[v].max(degrees.get(t));
            }
        }
        let vicinity_degree = mesh
            .triangles()
            .iter()
            .map(|tri| tri.iter().map(|&v| vertex_degree[v]).max().unwrap_or(1))
            .collect();
        Ok(Self {
            mesh,
            degrees,
            edge_degrees,
            edge_offset,
            bubble_offset,
            n_dofs,
            constrained,
            free_index,
            n_free,
            layouts,
            dof_offsets,
            dof_list,
            vicinity_degree,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degrees(&self) -> &DegreeVector {
        &self.degrees
    }

    /// Largest degree among the triangles sharing a vertex with `t`. Source
    /// integrals on `t` use a rule chosen from it, so the primal load and all
    /// patch problems through `t` see identical quadrature.
    pub fn vicinity_degree(&self, t: usize) -> usize {
        self.vicinity_degree[t]
    }

    pub fn edge_degree(&self, e: usize) -> usize {
        self.edge_degrees[e]
    }

    /// Total number of DOFs, free and constrained.
    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.constrained[dof]
    }

    /// Index among the free DOFs, or `None` for a constrained DOF.
    pub fn free_index(&self, dof: usize) -> Option<usize> {
        let i = self.free_index[dof];
        (i != NONE).then_some(i)
    }

    pub fn layout(&self, t: usize) -> &ElementLayout {
        &self.layouts[t]
    }

    /// Global DOFs of triangle `t`, in local shape order.
    pub fn element_dofs(&self, t: usize) -> &[usize] {
        &self.dof_list[self.dof_offsets[t]..self.dof_offsets[t + 1]]
    }

    pub fn edge_dofs(&self, e: usize) -> std::ops::Range<usize> {
        self.edge_offset[e]..self.edge_offset[e] + self.edge_degrees[e] - 1
    }

    pub fn bubble_dofs(&self, t: usize) -> std::ops::Range<usize> {
        self.bubble_offset[t]..self.bubble_offset[t] + n_bubbles(self.degrees.get(t))
    }

    pub fn tabulate(&self, t: usize, ref_points: &[[f64; 2]]) -> Tabulation {
        Tabulation::new(&self.layouts[t], &self.mesh.coords(t), ref_points)
    }

    /// Projection-based interpolation: exact vertex values, L² projection of
    /// the edge residual onto edge modes, then of the interior residual onto
    /// bubbles. Reproduces every function of the space exactly.
    ///
    /// `f(t, x)` evaluates the target at physical point `x` of triangle `t`.
    /// With `boundary_only` only boundary vertices and edges are filled.
    pub fn interpolate<F>(&self, f: F, boundary_only: bool) -> Vec<f64>
    where
        F: Fn(usize, Point) -> f64,
    {
        let mesh = &*self.mesh;
        let mut coeffs = vec![0.0; self.n_dofs];
        for v in 0..mesh.n_vertices() {
            if boundary_only && !mesh.is_boundary_vertex(v) {
                continue;
            }
            if let Some(&t) = mesh.vertex_triangles(v).first() {
                coeffs[v] = f(t, mesh.vertices()[v]);
            }
        }
        for e in 0..mesh.n_edges() {
            let deg = self.edge_degrees[e];
            if deg < 2 || (boundary_only && !mesh.is_boundary_edge(e)) {
                continue;
            }
            let [a, b] = mesh.edges()[e];
            let (t, _) = mesh.edge_triangles(e);
            let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
            let line = cached_line(deg + 4);
            let nm = deg - 1;
            let mut gram = DMatrix::<f64>::zeros(nm, nm);
            let mut rhs = DVector::<f64>::zeros(nm);
            let mut pv = Vec::new();
            let mut pd = Vec::new();
            for (&s, &w) in line.0.iter().zip(&line.1) {
                let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
                let r = f(t, x) - (coeffs[a] * (1.0 - s) + coeffs[b] * s);
                crate::basis::legendre(deg - 2, 2.0 * s - 1.0, &mut pv, &mut pd);
                let phi: Vec<f64> = pv.iter().map(|p| (1.0 - s) * s * p).collect();
                for k in 0..nm {
                    rhs[k] += w * r * phi[k];
                    for l in 0..nm {
                        gram[(k, l)] += w * phi[k] * phi[l];
                    }
                }
            }
            let sol = gram
                .cholesky()
                .expect("edge Gram matrix is SPD")
                .solve(&rhs);
            for k in 0..nm {
                coeffs[self.edge_offset[e] + k] = sol[k];
            }
        }
        if boundary_only {
            return coeffs;
        }
        for t in 0..mesh.n_triangles() {
            let nb = n_bubbles(self.degrees.get(t));
            if nb == 0 {
                continue;
            }
            let rule = cached_rule(2 * self.degrees.get(t) + 4);
            let tab = self.tabulate(t, &rule.points);
            let dofs = self.element_dofs(t);
            let first_bubble = dofs.len() - nb;
            let mut gram = DMatrix::<f64>::zeros(nb, nb);
            let mut rhs = DVector::<f64>::zeros(nb);
            for q in 0..rule.len() {
                let x = mesh.map_point(t, rule.points[q]);
                let mut r = f(t, x);
                for (i, &d) in dofs[..first_bubble].iter().enumerate() {
                    r -= coeffs[d] * tab.value(q, i);
                }
                let w = rule.weights[q];
                for k in 0..nb {
                    let bk = tab.value(q, first_bubble + k);
                    rhs[k] += w * r * bk;
                    for l in 0..nb {
                        gram[(k, l)] += w * bk * tab.value(q, first_bubble + l);
                    }
                }
            }
            let sol = gram
                .cholesky()
                .expect("bubble Gram matrix is SPD")
                .solve(&rhs);
            for k in 0..nb {
                coeffs[self.bubble_offset[t] + k] = sol[k];
            }
        }
        coeffs
    }

    /// DOF values of the Dirichlet trace `g`; interior DOFs are zero.
    pub fn dirichlet_values<G: Fn(Point) -> f64>(&self, g: G) -> Vec<f64> {
        self.interpolate(|_, x| g(x), true)
    }
}

/// A function of an [`HpSpace`] given by its full coefficient vector.
#[derive(Debug, Clone)]
pub struct FeFunction {
    space: Arc<HpSpace>,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(space: Arc<HpSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs() {
            return Err(Error::Config(format!(
                "coefficient vector has length {}, space has {} DOFs",
                coeffs.len(),
                space.n_dofs()
            )));
        }
        Ok(Self { space, coeffs })
    }

    pub fn zero(space: Arc<HpSpace>) -> Self {
        let n = space.n_dofs();
        Self {
            space,
            coeffs: vec![0.0; n],
        }
    }

    pub fn space(&self) -> &Arc<HpSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn element_coeffs(&self, t: usize) -> Vec<f64> {
        self.space
            .element_dofs(t)
            .iter()
            .map(|&d| self.coeffs[d])
            .collect()
    }

    /// Value and gradient at barycentric coordinates of triangle `t`.
    pub fn eval_bary(&self, t: usize, lam: [f64; 3]) -> (f64, [f64; 2]) {
        let layout = self.space.layout(t);
        let mesh = self.space.mesh();
        let gl = crate::basis::grad_lambda(&mesh.coords(t));
        let mut v = Vec::new();
        let mut d = Vec::new();
        layout.eval(lam, &mut v, &mut d);
        let mut val = 0.0;
        let mut g = [0.0; 2];
        for (i, &dof) in self.space.element_dofs(t).iter().enumerate() {
            let c = self.coeffs[dof];
            val += c * v[i];
            let gi = crate::basis::physical_gradient(&d[i], &gl);
            g[0] += c * gi[0];
            g[1] += c * gi[1];
        }
        (val, g)
    }

    /// Value and gradient at a physical point assumed to lie in (or on) triangle `t`.
    pub fn eval_point(&self, t: usize, x: Point) -> (f64, [f64; 2]) {
        let lam = self.space.mesh().barycentric(t, x);
        self.eval_bary(t, lam)
    }

    pub fn value_at(&self, t: usize, x: Point) -> f64 {
        self.eval_point(t, x).0
    }
}

/// The piecewise-affine hat function of vertex `a`.
pub fn hat_function(space: &Arc<HpSpace>, a: usize) -> Result<FeFunction> {
    if a >= space.mesh().n_vertices() {
        return Err(Error::UnknownVertex(a));
    }
    let mut coeffs = vec![0.0; space.n_dofs()];
    coeffs[a] = 1.0;
    FeFunction::new(space.clone(), coeffs)
}

/// Re-represents a function of a coarse space in a nested fine space.
///
/// The fine mesh is either the coarse mesh itself (degree raise only) or
/// produced from it by [`Mesh::bisect`]; degrees may not decrease.
pub fn embed(coarse: &FeFunction, fine: &Arc<HpSpace>) -> Result<FeFunction> {
    let cmesh = coarse.space().mesh();
    let fmesh = fine.mesh();
    let parent: Vec<usize> = if Arc::ptr_eq(cmesh, fmesh)
        || (fmesh.generation() == cmesh.generation() && fmesh.triangles() == cmesh.triangles())
    {
        (0..fmesh.n_triangles()).collect()
    } else {
        match fmesh.parents() {
            Some(p)
                if fmesh.generation() == cmesh.generation() + 1
                    && p.iter().all(|&q| q < cmesh.n_triangles()) =>
            {
                p.to_vec()
            }
            _ => {
                return Err(Error::NotNested(
                    "fine mesh is not a refinement of the coarse mesh".into(),
                ))
            }
        }
    };
    for (t, &p) in parent.iter().enumerate() {
        if fine.degrees().get(t) < coarse.space().degrees().get(p) {
            return Err(Error::NotNested(format!(
                "degree decreased on triangle {t}"
            )));
        }
    }
    let coeffs = fine.interpolate(|t, x| coarse.value_at(parent[t], x), false);
    FeFunction::new(fine.clone(), coeffs)
}

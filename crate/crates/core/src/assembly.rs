//! Stiffness/load assembly, the global sparse solve, local patch solves and
//! energy norms.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Side};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::quadrature::{cached_rule, QuadratureRule};
use crate::space::{FeFunction, HpSpace};

/// Scalar field on the physical domain (sources, Dirichlet traces, exact solutions).
pub type ScalarFn = dyn Fn(Point) -> f64 + Sync + Send;
/// Vector field on the physical domain (exact gradients).
pub type VectorFn = dyn Fn(Point) -> [f64; 2] + Sync + Send;

/// Quadrature order for stiffness and load on a degree-`p` element.
pub fn element_order(p: usize, extra: usize) -> usize {
    2 * p + 4 + extra
}

/// Free-DOF system `A x = b`, with `A` stored as merged (row, col, value) triplets.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub n: usize,
    pub triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    /// Full coefficient vector with the Dirichlet values filled in.
    pub lifted: Vec<f64>,
}

impl LinearSystem {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.triplets {
            a[(i, j)] += v;
        }
        a
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        if self.n == 0 {
            return Ok(Vec::new());
        }
        let trips: Vec<Triplet<usize, usize, f64>> = self
            .triplets
            .iter()
            .map(|&(i, j, v)| Triplet::new(i, j, v))
            .collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &trips)
            .map_err(|e| Error::Singular(format!("matrix construction failed: {e:?}")))?;
        let llt = a
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Singular(format!("sparse Cholesky failed: {e:?}")))?;
        let b = Col::<f64>::from_fn(self.n, |i| self.rhs[i]);
        let x = llt.solve(&b);
        Ok((0..self.n).map(|i| x[i]).collect())
    }
}

fn merge_triplets(mut trips: Vec<(usize, usize, f64)>) -> Vec<(usize, usize, f64)> {
    trips.sort_unstable_by_key(|&(i, j, _)| (j, i));
    let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(trips.len() / 4);
    for (i, j, v) in trips {
        match out.last_mut() {
            Some(last) if last.0 == i && last.1 == j => last.2 += v,
            _ => out.push((i, j, v)),
        }
    }
    out
}

struct ElementSystem {
    dofs: Vec<usize>,
    stiffness: Vec<f64>,
    load: Vec<f64>,
}

fn element_system(
    space: &HpSpace,
    t: usize,
    f: &ScalarFn,
    extra: usize,
    boost: usize,
) -> ElementSystem {
    let mesh = space.mesh();
    let rule = cached_rule(element_order(space.vicinity_degree(t), extra) + boost);
    let tab = space.tabulate(t, &rule.points);
    let n = tab.n_shapes;
    let area = mesh.area(t);
    let mut stiffness = vec![0.0; n * n];
    let mut load = vec![0.0; n];
    for q in 0..rule.len() {
        let w = rule.weights[q] * 2.0 * area;
        let fx = f(mesh.map_point(t, rule.points[q]));
        for i in 0..n {
            let gi = tab.grad(q, i);
            load[i] += w * fx * tab.value(q, i);
            for j in i..n {
                let gj = tab.grad(q, j);
                stiffness[i * n + j] += w * (gi[0] * gj[0] + gi[1] * gj[1]);
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            stiffness[i * n + j] = stiffness[j * n + i];
        }
    }
    ElementSystem {
        dofs: space.element_dofs(t).to_vec(),
        stiffness,
        load,
    }
}

/// Assembles the Galerkin system on the free DOFs; constrained DOFs carry `dirichlet`.
///
/// `extra` raises the load quadrature order (sharp sources), `boost` raises
/// every element rule (used to check quadrature invariance).
pub fn assemble(
    space: &HpSpace,
    f: &ScalarFn,
    dirichlet: &[f64],
    extra: usize,
    boost: usize,
) -> LinearSystem {
    let elements: Vec<ElementSystem> = (0..space.mesh().n_triangles())
        .into_par_iter()
        .map(|t| element_system(space, t, f, extra, boost))
        .collect();
    let n = space.n_free();
    let mut rhs = vec![0.0; n];
    let mut trips = Vec::new();
    for el in &elements {
        let m = el.dofs.len();
        for (i, &di) in el.dofs.iter().enumerate() {
            let Some(fi) = space.free_index(di) else {
                continue;
            };
            rhs[fi] += el.load[i];
            for (j, &dj) in el.dofs.iter().enumerate() {
                let a = el.stiffness[i * m + j];
                match space.free_index(dj) {
                    Some(fj) => trips.push((fi, fj, a)),
                    None => rhs[fi] -= a * dirichlet[dj],
                }
            }
        }
    }
    LinearSystem {
        n,
        triplets: merge_triplets(trips),
        rhs,
        lifted: dirichlet.to_vec(),
    }
}

/// Solves the global Galerkin problem with source `f` and Dirichlet trace `g`.
pub fn solve_primal(
    space: &Arc<HpSpace>,
    f: &ScalarFn,
    g: Option<&ScalarFn>,
    extra: usize,
) -> Result<FeFunction> {
    let dirichlet = match g {
        Some(g) => space.dirichlet_values(g),
        None => vec![0.0; space.n_dofs()],
    };
    let system = assemble(space, f, &dirichlet, extra, 0);
    let x = system.solve()?;
    let mut coeffs = system.lifted;
    for (dof, c) in coeffs.iter_mut().enumerate() {
        if let Some(i) = space.free_index(dof) {
            *c = x[i];
        }
    }
    FeFunction::new(space.clone(), coeffs)
}

/// Result of a local residual problem on a patch.
#[derive(Debug, Clone)]
pub struct LocalLifting {
    pub function: FeFunction,
    /// ‖∇r‖ over the patch.
    pub norm: f64,
    /// True when the local space had no free DOFs (the lifting is zero).
    pub empty: bool,
}

/// Residual lifting: finds r in the local space (zero trace on the whole
/// local boundary) with (∇r, ∇v) = (f, v) − (∇u, ∇v) for all local v.
///
/// `origin[t]` is the triangle of `u`'s mesh containing local triangle `t`.
pub fn solve_patch_dirichlet(
    local: &Arc<HpSpace>,
    origin: &[usize],
    u: &FeFunction,
    f: &ScalarFn,
    extra: usize,
) -> Result<LocalLifting> {
    let (a, b) = local_system(local, origin, u, f, extra);
    if a.nrows() == 0 {
        return Ok(LocalLifting {
            function: FeFunction::zero(local.clone()),
            norm: 0.0,
            empty: true,
        });
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular("local stiffness matrix is not positive definite".into()))?;
    let x = chol.solve(&b);
    let mut coeffs = vec![0.0; local.n_dofs()];
    for (dof, c) in coeffs.iter_mut().enumerate() {
        if let Some(i) = local.free_index(dof) {
            *c = x[i];
        }
    }
    let function = FeFunction::new(local.clone(), coeffs)?;
    let norm = energy_norm(&function, None);
    Ok(LocalLifting {
        function,
        norm,
        empty: false,
    })
}

/// Dense free-DOF stiffness matrix and residual right-hand side of a local problem.
pub fn local_system(
    local: &HpSpace,
    origin: &[usize],
    u: &FeFunction,
    f: &ScalarFn,
    extra: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = local.n_free();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    if n == 0 {
        return (a, b);
    }
    let mesh = local.mesh();
    for t in 0..mesh.n_triangles() {
        let p = local.degrees().get(t);
        let rule = cached_rule(element_order(p, extra));
        let tab = local.tabulate(t, &rule.points);
        let dofs = local.element_dofs(t);
        let free: Vec<Option<usize>> = dofs.iter().map(|&d| local.free_index(d)).collect();
        let area = mesh.area(t);
        let xs: Vec<Point> = rule
            .points
            .iter()
            .map(|xi| mesh.map_point(t, *xi))
            .collect();
        let src_mesh = u.space().mesh();
        let src_pts: Vec<[f64; 2]> = xs
            .iter()
            .map(|x| {
                let l = src_mesh.barycentric(origin[t], *x);
                [l[1], l[2]]
            })
            .collect();
        let utab = u.space().tabulate(origin[t], &src_pts);
        let uc = u.element_coeffs(origin[t]);
        for q in 0..rule.len() {
            let w = rule.weights[q] * 2.0 * area;
            let mut gu = [0.0; 2];
            for (i, c) in uc.iter().enumerate() {
                let g = utab.grad(q, i);
                gu[0] += c * g[0];
                gu[1] += c * g[1];
            }
            let fx = f(xs[q]);
            for (i, fi) in free.iter().enumerate() {
                let Some(fi) = *fi else { continue };
                let gi = tab.grad(q, i);
                b[fi] += w * (fx * tab.value(q, i) - (gu[0] * gi[0] + gu[1] * gi[1]));
                for (j, fj) in free.iter().enumerate() {
                    let Some(fj) = *fj else { continue };
                    let gj = tab.grad(q, j);
                    a[(fi, fj)] += w * (gi[0] * gj[0] + gi[1] * gj[1]);
                }
            }
        }
    }
    (a, b)
}

/// ‖∇v‖ over the given triangles (all triangles when `region` is `None`).
pub fn energy_norm(v: &FeFunction, region: Option<&[usize]>) -> f64 {
    let space = v.space();
    let mesh = space.mesh();
    let all: Vec<usize>;
    let tris = match region {
        Some(r) => r,
        None => {
            all = (0..mesh.n_triangles()).collect();
            &all
        }
    };
    tris.iter()
        .map(|&t| {
            let rule = cached_rule(2 * space.degrees().get(t));
            element_energy_sq(v, t, &rule)
        })
        .sum::<f64>()
        .sqrt()
}

fn element_energy_sq(v: &FeFunction, t: usize, rule: &QuadratureRule) -> f64 {
    let space = v.space();
    let tab = space.tabulate(t, &rule.points);
    let c = v.element_coeffs(t);
    let area = space.mesh().area(t);
    let mut s = 0.0;
    for q in 0..rule.len() {
        let mut g = [0.0; 2];
        for (i, ci) in c.iter().enumerate() {
            let gi = tab.grad(q, i);
            g[0] += ci * gi[0];
            g[1] += ci * gi[1];
        }
        s += rule.weights[q] * 2.0 * area * (g[0] * g[0] + g[1] * g[1]);
    }
    s
}

/// (∫_T |g|²)^{1/2} over triangles `tris` of `mesh` for a gradient callable `g(t, x)`.
pub fn energy_norm_with<G>(mesh: &Mesh, tris: &[usize], order: usize, g: G) -> f64
where
    G: Fn(usize, Point) -> [f64; 2],
{
    let rule = cached_rule(order);
    tris.iter()
        .map(|&t| {
            let area = mesh.area(t);
            rule.points
                .iter()
                .zip(&rule.weights)
                .map(|(xi, w)| {
                    let v = g(t, mesh.map_point(t, *xi));
                    w * 2.0 * area * (v[0] * v[0] + v[1] * v[1])
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Squared elementwise energy errors ‖∇(u − u_h)‖²_K against an exact gradient.
///
/// Triangles with a vertex at `singular` use a rule graded toward that vertex.
pub fn energy_error_squared(
    u_h: &FeFunction,
    exact_grad: &VectorFn,
    extra: usize,
    singular: Option<Point>,
) -> Vec<f64> {
    let space = u_h.space();
    let mesh = space.mesh();
    (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            let order = 2 * space.degrees().get(t) + 10 + extra;
            let tri = mesh.triangles()[t];
            let sing_local = singular.and_then(|s| {
                tri.iter().position(|&v| {
                    let p = mesh.vertices()[v];
                    (p[0] - s[0]).abs() < 1e-14 && (p[1] - s[1]).abs() < 1e-14
                })
            });
            let rule: Arc<QuadratureRule> = match sing_local {
                Some(k) => Arc::new(QuadratureRule::graded_toward_vertex(order, k, 40)),
                None => cached_rule(order),
            };
            let tab = space.tabulate(t, &rule.points);
            let c = u_h.element_coeffs(t);
            let area = mesh.area(t);
            let mut s = 0.0;
            for q in 0..rule.len() {
                let x = mesh.map_point(t, rule.points[q]);
                let mut g = exact_grad(x);
                for (i, ci) in c.iter().enumerate() {
                    let gi = tab.grad(q, i);
                    g[0] -= ci * gi[0];
                    g[1] -= ci * gi[1];
                }
                s += rule.weights[q] * 2.0 * area * (g[0] * g[0] + g[1] * g[1]);
            }
            s
        })
        .collect()
}

//! Guaranteed bounds on the error reduction of one adaptive step.
//!
//! For every marked vertex the residual of `u_ℓ` is lifted into the next
//! space restricted to the patch (zero trace on its boundary). The liftings
//! give the lower bound
//! `η̄_M = Σ_a ‖∇r^a‖²_ω / ‖∇Σ_a r^a‖_ω ≤ ‖∇(u_{ℓ+1} − u_ℓ)‖_ω`,
//! and with it the reduction factor
//! `C_red = (1 − θ² η̄_M² / η(M)²)^{1/2}`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{solve_patch_dirichlet, ScalarFn};
use crate::error::{Error, Result};
use crate::marking::MarkedVertexSet;
use crate::mesh::{Mesh, SubMesh};
use crate::quadrature::cached_rule;
use crate::space::{DegreeVector, FeFunction, HpSpace};

/// Parent in `coarse` of every triangle of `fine`.
pub fn parent_map(coarse: &Mesh, fine: &Mesh) -> Result<Vec<usize>> {
    if fine.generation() == coarse.generation() && fine.triangles() == coarse.triangles() {
        return Ok((0..fine.n_triangles()).collect());
    }
    match fine.parents() {
        Some(p)
            if fine.generation() == coarse.generation() + 1
                && p.iter().all(|&k| k < coarse.n_triangles()) =>
        {
            Ok(p.to_vec())
        }
        _ => Err(Error::NotNested(
            "mesh is not a refinement of the previous one".into(),
        )),
    }
}

/// Residual lifting r^{a,hp} of one marked vertex.
#[derive(Debug, Clone)]
pub struct HpLifting {
    pub vertex: usize,
    /// Patch of `a` in the next mesh; `origin` points into the next mesh.
    pub sub: SubMesh,
    pub function: FeFunction,
    pub norm: f64,
}

/// Lifts the residual of `u` into V_{ℓ+1} restricted to the patch of `a` with zero trace.
pub fn hp_lifting(
    u: &FeFunction,
    next: &Arc<HpSpace>,
    f: &ScalarFn,
    a: usize,
    extra: usize,
) -> Result<HpLifting> {
    let mesh = u.space().mesh();
    if a >= mesh.n_vertices() {
        return Err(Error::UnknownVertex(a));
    }
    let parent = parent_map(mesh, next.mesh())?;
    let patch = mesh.vertex_triangles(a);
    let children: Vec<usize> = (0..next.mesh().n_triangles())
        .filter(|t| patch.contains(&parent[*t]))
        .collect();
    let sub = next.mesh().extract(&children)?;
    let degrees = DegreeVector::new(sub.origin.iter().map(|&t| next.degrees().get(t)).collect())?;
    let local = Arc::new(HpSpace::new(Arc::new(sub.mesh.clone()), degrees)?);
    let origin: Vec<usize> = sub.origin.iter().map(|&t| parent[t]).collect();
    let lift = solve_patch_dirichlet(&local, &origin, u, f, extra)?;
    Ok(HpLifting {
        vertex: a,
        sub,
        function: lift.function,
        norm: lift.norm,
    })
}

/// ‖∇ Σ_a r^a‖ over the union of the lifting supports, summing gradients
/// pointwise on each triangle of the next mesh.
pub fn sum_norm(liftings: &[HpLifting], next: &Mesh) -> f64 {
    let mut contrib: Vec<Vec<(usize, usize)>> = vec![Vec::new(); next.n_triangles()];
    for (l, lift) in liftings.iter().enumerate() {
        for (t, &g) in lift.sub.origin.iter().enumerate() {
            contrib[g].push((l, t));
        }
    }
    contrib
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_empty())
        .map(|(g, c)| {
            let pmax = c
                .iter()
                .map(|&(l, t)| liftings[l].function.space().degrees().get(t))
                .max()
                .unwrap_or(1);
            let rule = cached_rule(2 * pmax);
            let mut grads = vec![[0.0; 2]; rule.len()];
            for &(l, t) in c {
                let fun = &liftings[l].function;
                // extraction keeps the vertex order, so reference points agree
                let tab = fun.space().tabulate(t, &rule.points);
                let coeffs = fun.element_coeffs(t);
                for (q, gq) in grads.iter_mut().enumerate() {
                    for (i, ci) in coeffs.iter().enumerate() {
                        let gi = tab.grad(q, i);
                        gq[0] += ci * gi[0];
                        gq[1] += ci * gi[1];
                    }
                }
            }
            let det = 2.0 * next.area(g);
            grads
                .iter()
                .zip(&rule.weights)
                .map(|(v, w)| w * det * (v[0] * v[0] + v[1] * v[1]))
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// η̄_M = Σ‖∇r^a‖² / ‖∇Σ r^a‖, or 0 when the sum vanishes.
pub fn lower_bound(liftings: &[HpLifting], next: &Mesh) -> f64 {
    let num: f64 = liftings.iter().map(|l| l.norm * l.norm).sum();
    let den = sum_norm(liftings, next);
    if den > 0.0 && num > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// (C_red, C_red^sharp) = ((1 − θ² η̄²/η(M)²)^{1/2}, (1 − η̄²/η(T)²)^{1/2}).
pub fn reduction_factor(
    theta: f64,
    eta_lower: f64,
    eta_marked: f64,
    eta_total: f64,
) -> Result<(f64, f64)> {
    if eta_marked <= 0.0 || eta_total <= 0.0 {
        return Err(Error::ZeroMarkedEstimator);
    }
    let root = |arg: f64| {
        if arg < -1e-12 {
            Err(Error::NegativeReduction(arg))
        } else {
            Ok(arg.max(0.0).sqrt())
        }
    };
    let plain = root(1.0 - theta * theta * eta_lower * eta_lower / (eta_marked * eta_marked))?;
    let sharp = root(1.0 - eta_lower * eta_lower / (eta_total * eta_total))?;
    Ok((plain, sharp))
}

/// ‖∇(u_{ℓ+1} − u_ℓ)‖ over the triangles of the next mesh whose parent lies in `coarse_region`.
pub fn increment_norm(
    next: &FeFunction,
    prev: &FeFunction,
    coarse_region: &[usize],
) -> Result<f64> {
    let cmesh = prev.space().mesh();
    let fmesh = next.space().mesh();
    let parent = parent_map(cmesh, fmesh)?;
    let mut inside = vec![false; cmesh.n_triangles()];
    for &k in coarse_region {
        inside[k] = true;
    }
    let tris: Vec<usize> = (0..fmesh.n_triangles())
        .filter(|&t| inside[parent[t]])
        .collect();
    let total: f64 = tris
        .par_iter()
        .map(|&t| {
            let k = parent[t];
            let p = next
                .space()
                .degrees()
                .get(t)
                .max(prev.space().degrees().get(k));
            let rule = cached_rule(2 * p);
            let tab = next.space().tabulate(t, &rule.points);
            let coarse_pts: Vec<[f64; 2]> = rule
                .points
                .iter()
                .map(|xi| {
                    let l = cmesh.barycentric(k, fmesh.map_point(t, *xi));
                    [l[1], l[2]]
                })
                .collect();
            let ctab = prev.space().tabulate(k, &coarse_pts);
            let fc = next.element_coeffs(t);
            let cc = prev.element_coeffs(k);
            let det = 2.0 * fmesh.area(t);
            let mut s = 0.0;
            for q in 0..rule.len() {
                let mut g = [0.0; 2];
                for (i, c) in fc.iter().enumerate() {
                    let gi = tab.grad(q, i);
                    g[0] += c * gi[0];
                    g[1] += c * gi[1];
                }
                for (i, c) in cc.iter().enumerate() {
                    let gi = ctab.grad(q, i);
                    g[0] -= c * gi[0];
                    g[1] -= c * gi[1];
                }
                s += rule.weights[q] * det * (g[0] * g[0] + g[1] * g[1]);
            }
            s
        })
        .sum();
    Ok(total.sqrt())
}

/// Certificate of one step, computed before solving on the next space.
#[derive(Debug, Clone)]
pub struct ReductionCertificate {
    /// ‖∇r^{a,hp}‖ per marked vertex, in marking order.
    pub lifting_norms: Vec<f64>,
    pub eta_lower: f64,
    /// Bound with the marking parameter θ.
    pub c_red: f64,
    /// Bound with the achieved ratio θ_ℓ.
    pub c_red_sharp: f64,
}

/// Liftings for all marked vertices, the lower bound and both reduction factors.
pub fn certify(
    u: &FeFunction,
    next: &Arc<HpSpace>,
    f: &ScalarFn,
    marked: &MarkedVertexSet,
    theta: f64,
    extra: usize,
) -> Result<ReductionCertificate> {
    let liftings: Vec<HpLifting> = marked
        .vertices
        .par_iter()
        .map(|&a| hp_lifting(u, next, f, a, extra))
        .collect::<Result<_>>()?;
    let eta_lower = lower_bound(&liftings, next.mesh());
    let (c_red, c_red_sharp) =
        reduction_factor(theta, eta_lower, marked.eta_marked, marked.eta_total)?;
    Ok(ReductionCertificate {
        lifting_norms: liftings.iter().map(|l| l.norm).collect(),
        eta_lower,
        c_red,
        c_red_sharp,
    })
}

//! The hp-decision: residual liftings on the h-refined and on the
//! degree-raised patch of every marked vertex, the resulting vertex and
//! triangle flags, and construction of the next mesh and degrees.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{solve_patch_dirichlet, LocalLifting, ScalarFn};
use crate::error::{Error, Result};
use crate::marking::MarkedVertexSet;
use crate::mesh::{Mesh, SubMesh};
use crate::space::{DegreeVector, FeFunction, HpSpace};

/// Degree increments δ_K^a on the patch of `a`: 1 on the triangles of
/// minimal degree in the patch, 0 elsewhere, as (triangle, δ) pairs.
pub fn degree_increments(mesh: &Mesh, degrees: &DegreeVector, a: usize) -> Vec<(usize, usize)> {
    let tris = mesh.vertex_triangles(a);
    let pmin = tris.iter().map(|&t| degrees.get(t)).min().unwrap_or(1);
    tris.iter()
        .map(|&t| (t, usize::from(degrees.get(t) == pmin)))
        .collect()
}

fn local_space(sub: &SubMesh, degree_of: impl Fn(usize) -> usize) -> Result<Arc<HpSpace>> {
    let degrees = DegreeVector::new((0..sub.mesh.n_triangles()).map(degree_of).collect())?;
    Ok(Arc::new(HpSpace::new(Arc::new(sub.mesh.clone()), degrees)?))
}

/// h-refinement residual lifting on the locally refined patch; children keep
/// the degree of their parent.
pub fn h_lifting(u: &FeFunction, f: &ScalarFn, a: usize, extra: usize) -> Result<LocalLifting> {
    let space = u.space();
    let sub = space.mesh().refine_patch_local(a)?;
    let local = local_space(&sub, |t| space.degrees().get(sub.origin[t]))?;
    solve_patch_dirichlet(&local, &sub.origin, u, f, extra)
}

/// p-refinement residual lifting on the unrefined patch with degrees p_K + δ_K^a.
pub fn p_lifting(u: &FeFunction, f: &ScalarFn, a: usize, extra: usize) -> Result<LocalLifting> {
    let space = u.space();
    let mesh = space.mesh();
    let inc: HashMap<usize, usize> = degree_increments(mesh, space.degrees(), a)
        .into_iter()
        .collect();
    let sub = mesh.extract(mesh.vertex_triangles(a))?;
    let local = local_space(&sub, |t| {
        let k = sub.origin[t];
        space.degrees().get(k) + inc[&k]
    })?;
    solve_patch_dirichlet(&local, &sub.origin, u, f, extra)
}

/// Vertex and triangle flags of one REFINE step.
#[derive(Debug, Clone, Default)]
pub struct HpDecision {
    /// Marked vertices flagged for h-refinement.
    pub vh: Vec<usize>,
    /// Marked vertices flagged for p-refinement.
    pub vp: Vec<usize>,
    /// ‖∇r^{a,h}‖ per marked vertex, in marking order.
    pub h_norms: Vec<f64>,
    /// ‖∇r^{a,p}‖ per marked vertex, in marking order.
    pub p_norms: Vec<f64>,
    /// Triangles with a vertex in V_h, ascending.
    pub mh: Vec<usize>,
    /// Triangles with a vertex in V_p, ascending.
    pub mp: Vec<usize>,
    /// δ_K^a for every a in V_p.
    pub increments: HashMap<usize, Vec<(usize, usize)>>,
}

impl HpDecision {
    /// Degree assigned to the children of every current triangle: the
    /// largest p_K + δ_K^a over a in V_K ∩ V_p, or p_K when K ∉ M_p.
    pub fn target_degrees(&self, degrees: &DegreeVector) -> Vec<usize> {
        let mut target = degrees.as_slice().to_vec();
        for inc in self.increments.values() {
            for &(t, d) in inc {
                target[t] = target[t].max(degrees.get(t) + d);
            }
        }
        target
    }

    /// Triangle counts (|M_h|, |M_p ∖ M_h|, |M_h ∩ M_p|): bisected, only
    /// degree-raised, and both.
    pub fn flag_counts(&self) -> (usize, usize, usize) {
        let both = self
            .mh
            .iter()
            .filter(|t| self.mp.binary_search(t).is_ok())
            .count();
        (self.mh.len(), self.mp.len() - both, both)
    }
}

/// Splits the marked vertices by comparing lifting norms (h wins ties) and
/// derives the triangle flags.
pub fn decide(
    mesh: &Mesh,
    degrees: &DegreeVector,
    marked: &MarkedVertexSet,
    h_norms: Vec<f64>,
    p_norms: Vec<f64>,
) -> HpDecision {
    let mut vh = Vec::new();
    let mut vp = Vec::new();
    for (i, &a) in marked.vertices.iter().enumerate() {
        if h_norms[i] >= p_norms[i] {
            vh.push(a);
        } else {
            vp.push(a);
        }
    }
    let union = |vs: &[usize]| {
        let mut tris: Vec<usize> = vs
            .iter()
            .flat_map(|&a| mesh.vertex_triangles(a).iter().copied())
            .collect();
        tris.sort_unstable();
        tris.dedup();
        tris
    };
    let increments = vp
        .iter()
        .map(|&a| (a, degree_increments(mesh, degrees, a)))
        .collect();
    HpDecision {
        mh: union(&vh),
        mp: union(&vp),
        vh,
        vp,
        h_norms,
        p_norms,
        increments,
    }
}

/// Computes both liftings for every marked vertex and decides.
pub fn hp_decision(
    u: &FeFunction,
    f: &ScalarFn,
    marked: &MarkedVertexSet,
    extra: usize,
) -> Result<HpDecision> {
    let norms: Vec<(f64, f64)> = marked
        .vertices
        .par_iter()
        .map(|&a| {
            Ok((
                h_lifting(u, f, a, extra)?.norm,
                p_lifting(u, f, a, extra)?.norm,
            ))
        })
        .collect::<Result<_>>()?;
    let (h, p) = norms.into_iter().unzip();
    let space = u.space();
    Ok(decide(space.mesh(), space.degrees(), marked, h, p))
}

/// The next mesh and degree distribution.
#[derive(Debug, Clone)]
pub struct RefinementPlan {
    pub mesh: Arc<Mesh>,
    pub degrees: DegreeVector,
    /// Vertices of V_h whose patch was refined by global closure beyond the
    /// local patch refinement.
    pub consistency_violations: usize,
}

/// Bisects `h_flags` and gives the children of every triangle K the degree `target[K]`.
pub fn refine_with(
    mesh: &Mesh,
    degrees: &DegreeVector,
    h_flags: &[usize],
    target: &[usize],
) -> Result<(Arc<Mesh>, DegreeVector)> {
    for (t, &p) in target.iter().enumerate() {
        if p < degrees.get(t) {
            return Err(Error::NotNested(format!(
                "degree of triangle {t} would decrease"
            )));
        }
    }
    let next = mesh.bisect(h_flags)?;
    let parents = next.parents().expect("bisect records parents");
    let deg = DegreeVector::new(parents.iter().map(|&k| target[k]).collect())?;
    Ok((Arc::new(next), deg))
}

fn child_signature(mesh: &Mesh, tris: &[usize]) -> Vec<[[u64; 2]; 3]> {
    let mut sig: Vec<[[u64; 2]; 3]> = tris
        .iter()
        .map(|&t| {
            let mut c = mesh.coords(t).map(|p| [p[0].to_bits(), p[1].to_bits()]);
            c.sort_unstable();
            c
        })
        .collect();
    sig.sort_unstable();
    sig
}

/// Number of vertices in `vh` whose patch children in `next` differ from
/// the local patch refinement of `mesh`.
pub fn count_consistency_violations(mesh: &Mesh, next: &Mesh, vh: &[usize]) -> Result<usize> {
    let parents = next
        .parents()
        .ok_or_else(|| Error::NotNested("refined mesh has no parent map".into()))?;
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_triangles()];
    for (t, &k) in parents.iter().enumerate() {
        children[k].push(t);
    }
    let mut count = 0;
    for &a in vh {
        let local = mesh.refine_patch_local(a)?;
        let global: Vec<usize> = mesh
            .vertex_triangles(a)
            .iter()
            .flat_map(|&k| children[k].iter().copied())
            .collect();
        let all_local: Vec<usize> = (0..local.mesh.n_triangles()).collect();
        if child_signature(&local.mesh, &all_local) != child_signature(next, &global) {
            count += 1;
        }
    }
    Ok(count)
}

/// Next mesh T_{ℓ+1} = bisect(T_ℓ, M_h) with degrees from the decision.
pub fn next_level(
    mesh: &Mesh,
    degrees: &DegreeVector,
    decision: &HpDecision,
) -> Result<RefinementPlan> {
    let target = decision.target_degrees(degrees);
    let (next, deg) = refine_with(mesh, degrees, &decision.mh, &target)?;
    let consistency_violations = count_consistency_violations(mesh, &next, &decision.vh)?;
    Ok(RefinementPlan {
        mesh: next,
        degrees: deg,
        consistency_violations,
    })
}

//! Equilibrated flux reconstruction on vertex patches and the guaranteed
//! error indicators built from it.
//!
//! On the patch of vertex `a` with order `p = max p_K` the flux `σ^a` solves
//!
//! ```text
//! min ‖ψ_a ∇u + σ‖_ω  over σ ∈ RTN_p with zero normal trace on ∂ω (∂ω \ ∂Ω for boundary a)
//! subject to (∇·σ, q)_ω = (f ψ_a − ∇u·∇ψ_a, q)_ω  for q ∈ P_p(T^a) (mean zero for interior a)
//! ```
//!
//! through its saddle-point system; `σ = Σ_a σ^a` is H(div)-conforming.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{element_order, ScalarFn, VectorFn};
use crate::basis::grad_lambda;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::{cached_line, cached_rule};
use crate::rtn::{cached_tabulation, edge_dof_sign, n_dofs, n_scalar, scalar_basis, Piola};
use crate::space::{FeFunction, NONE};

/// Quadrature order used for the patch problem and the indicators.
pub fn flux_order(p: usize, extra: usize) -> usize {
    element_order(p, extra)
}

/// Saddle-point data of one patch problem.
///
/// Unknowns are the patch flux DOFs (shared edge moments, then interior
/// moments per triangle); `div` rows are the pressure test functions.
#[derive(Debug, Clone)]
pub struct PatchSystem {
    pub vertex: usize,
    pub degree: usize,
    pub triangles: Vec<usize>,
    /// Flux mass matrix `(σ_i, σ_j)_ω`.
    pub mass: DMatrix<f64>,
    /// `−(ψ_a ∇u, σ_i)_ω`.
    pub flux_rhs: DVector<f64>,
    /// `(∇·σ_i, q_j)_ω`, one row per pressure function.
    pub div: DMatrix<f64>,
    /// `(f ψ_a − ∇u·∇ψ_a, q_j)_ω`.
    pub div_rhs: DVector<f64>,
    /// `(q_j, 1)_ω` for interior vertices, whose pressures are mean-free.
    pub mean: Option<DVector<f64>>,
    /// `‖ψ_a ∇u‖²_ω`.
    pub source_norm_sq: f64,
    /// For each patch triangle and local RTN DOF: (patch DOF or NONE, sign).
    pub local_map: Vec<Vec<(usize, f64)>>,
}

impl PatchSystem {
    pub fn n_flux(&self) -> usize {
        self.mass.nrows()
    }

    pub fn n_pressure(&self) -> usize {
        self.div.nrows()
    }

    /// Squared objective `‖ψ_a ∇u + σ‖²_ω` of a patch flux vector.
    pub fn objective_sq(&self, x: &DVector<f64>) -> f64 {
        (x.dot(&(&self.mass * x)) - 2.0 * self.flux_rhs.dot(x) + self.source_norm_sq).max(0.0)
    }

    /// Per-triangle local RTN coefficients of a patch flux vector.
    pub fn local_coeffs(&self, x: &DVector<f64>) -> Vec<Vec<f64>> {
        self.local_map
            .iter()
            .map(|m| {
                m.iter()
                    .map(|&(g, s)| if g == NONE { 0.0 } else { s * x[g] })
                    .collect()
            })
            .collect()
    }
}

/// Builds the saddle-point system of the patch of vertex `a`.
pub fn patch_system(u: &FeFunction, f: &ScalarFn, a: usize, extra: usize) -> Result<PatchSystem> {
    let space = u.space();
    let mesh = space.mesh();
    if a >= mesh.n_vertices() {
        return Err(Error::UnknownVertex(a));
    }
    let tris = mesh.vertex_triangles(a).to_vec();
    let p = tris
        .iter()
        .map(|&t| space.degrees().get(t))
        .max()
        .unwrap_or(1);
    let boundary = mesh.is_boundary_vertex(a);
    let ne = p + 1;
    let nloc = n_dofs(p);

    let mut edge_offset: HashMap<usize, usize> = HashMap::new();
    let mut n_flux = 0;
    for &t in &tris {
        for (i, &e) in mesh.triangle_edges(t).iter().enumerate() {
            let contains_a = mesh.triangles()[t][i] != a;
            let free = contains_a || (boundary && mesh.is_boundary_edge(e));
            if free && !edge_offset.contains_key(&e) {
                edge_offset.insert(e, n_flux);
                n_flux += ne;
            }
        }
    }
    let mut local_map = Vec::with_capacity(tris.len());
    for &t in &tris {
        let mut m = Vec::with_capacity(nloc);
        for (i, &e) in mesh.triangle_edges(t).iter().enumerate() {
            for k in 0..ne {
                match edge_offset.get(&e) {
                    Some(&o) => m.push((o + k, edge_dof_sign(mesh, t, i, k))),
                    None => m.push((NONE, 0.0)),
                }
            }
        }
        for _ in 3 * ne..nloc {
            m.push((n_flux, 1.0));
            n_flux += 1;
        }
        local_map.push(m);
    }

    let nq = n_scalar(p);
    let n_pressure = nq * tris.len();
    let mut mass = DMatrix::<f64>::zeros(n_flux, n_flux);
    let mut flux_rhs = DVector::<f64>::zeros(n_flux);
    let mut div = DMatrix::<f64>::zeros(n_pressure, n_flux);
    let mut div_rhs = DVector::<f64>::zeros(n_pressure);
    let mut mean = DVector::<f64>::zeros(n_pressure);
    let mut source_norm_sq = 0.0;

    let mut qv = Vec::new();
    let mut qg = Vec::new();
    let mut sig = vec![[0.0; 2]; nloc];
    let mut m_loc = vec![0.0; nloc * nloc];
    let mut b_loc = vec![0.0; nloc];
    let mut d_loc = vec![0.0; nq * nloc];
    let mut g_loc = vec![0.0; nq];
    for (j, &t) in tris.iter().enumerate() {
        let order = flux_order(space.vicinity_degree(t), extra);
        let rule = cached_rule(order);
        let tab = cached_tabulation(p, order);
        let coords = mesh.coords(t);
        let piola = Piola::new(&coords);
        let ia = mesh.triangles()[t]
            .iter()
            .position(|&v| v == a)
            .expect("patch triangle contains its vertex");
        let gpsi = grad_lambda(&coords)[ia];
        let utab = space.tabulate(t, &rule.points);
        let uc = u.element_coeffs(t);
        m_loc.iter_mut().for_each(|x| *x = 0.0);
        b_loc.iter_mut().for_each(|x| *x = 0.0);
        d_loc.iter_mut().for_each(|x| *x = 0.0);
        g_loc.iter_mut().for_each(|x| *x = 0.0);
        for (q, (xh, &wr)) in rule.points.iter().zip(&rule.weights).enumerate() {
            let w = wr * piola.det;
            let lam = [1.0 - xh[0] - xh[1], xh[0], xh[1]];
            let psi = lam[ia];
            let mut gu = [0.0; 2];
            for (i, c) in uc.iter().enumerate() {
                let g = utab.grad(q, i);
                gu[0] += c * g[0];
                gu[1] += c * g[1];
            }
            let fx = f(mesh.map_point(t, *xh));
            let src = [psi * gu[0], psi * gu[1]];
            source_norm_sq += w * (src[0] * src[0] + src[1] * src[1]);
            let data = fx * psi - (gu[0] * gpsi[0] + gu[1] * gpsi[1]);
            for i in 0..nloc {
                sig[i] = piola.apply(tab.values[q * nloc + i]);
            }
            scalar_basis(p, *xh, &mut qv, &mut qg);
            for i in 0..nloc {
                let si = sig[i];
                b_loc[i] -= w * (src[0] * si[0] + src[1] * si[1]);
                for k in i..nloc {
                    let sk = sig[k];
                    m_loc[i * nloc + k] += w * (si[0] * sk[0] + si[1] * sk[1]);
                }
                // physical divergence is the reference one over det J; the
                // measure carries det J, so they cancel
                let dv = wr * tab.divs[q * nloc + i];
                for (r, qr) in qv.iter().enumerate() {
                    d_loc[r * nloc + i] += dv * qr;
                }
            }
            for (r, qr) in qv.iter().enumerate() {
                g_loc[r] += w * data * qr;
                mean[j * nq + r] += w * qr;
            }
        }
        let map = &local_map[j];
        for i in 0..nloc {
            let (gi, si) = map[i];
            if gi == NONE {
                continue;
            }
            flux_rhs[gi] += si * b_loc[i];
            for k in 0..nloc {
                let (gk, sk) = map[k];
                if gk == NONE {
                    continue;
                }
                let v = if k >= i {
                    m_loc[i * nloc + k]
                } else {
                    m_loc[k * nloc + i]
                };
                mass[(gi, gk)] += si * sk * v;
            }
            for r in 0..nq {
                div[(j * nq + r, gi)] += si * d_loc[r * nloc + i];
            }
        }
        for r in 0..nq {
            div_rhs[j * nq + r] += g_loc[r];
        }
    }
    Ok(PatchSystem {
        vertex: a,
        degree: p,
        triangles: tris,
        mass,
        flux_rhs,
        div,
        div_rhs,
        mean: (!boundary).then_some(mean),
        source_norm_sq,
        local_map,
    })
}

/// Solves the saddle-point system, returning the patch flux vector.
pub fn solve_patch_system(sys: &PatchSystem) -> Result<DVector<f64>> {
    let nf = sys.n_flux();
    let np = sys.n_pressure();
    let nm = usize::from(sys.mean.is_some());
    let n = nf + np + nm;
    let mut k = DMatrix::<f64>::zeros(n, n);
    k.view_mut((0, 0), (nf, nf)).copy_from(&sys.mass);
    k.view_mut((nf, 0), (np, nf)).copy_from(&sys.div);
    k.view_mut((0, nf), (nf, np))
        .copy_from(&sys.div.transpose());
    if let Some(m) = &sys.mean {
        k.view_mut((nf, nf + np), (np, 1)).copy_from(m);
        k.view_mut((nf + np, nf), (1, np)).copy_from(&m.transpose());
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs.rows_mut(0, nf).copy_from(&sys.flux_rhs);
    rhs.rows_mut(nf, np).copy_from(&sys.div_rhs);
    let singular = || {
        Error::Singular(format!(
            "flux saddle-point system of vertex {} is singular",
            sys.vertex
        ))
    };
    let lu = k.clone().lu();
    let mut x = lu.solve(&rhs).ok_or_else(singular)?;
    // one step of iterative refinement
    let r = &rhs - &k * &x;
    x += lu.solve(&r).ok_or_else(singular)?;
    Ok(x.rows(0, nf).into_owned())
}

/// Flux of one patch, as local RTN coefficients on each patch triangle.
#[derive(Debug, Clone)]
pub struct PatchFlux {
    pub vertex: usize,
    pub degree: usize,
    pub triangles: Vec<usize>,
    pub coeffs: Vec<Vec<f64>>,
    /// `‖ψ_a ∇u + σ^a‖_ω`.
    pub objective: f64,
}

/// Solves the patch problem of vertex `a`.
pub fn patch_flux(u: &FeFunction, f: &ScalarFn, a: usize, extra: usize) -> Result<PatchFlux> {
    let sys = patch_system(u, f, a, extra)?;
    let x = solve_patch_system(&sys)?;
    Ok(PatchFlux {
        vertex: a,
        degree: sys.degree,
        triangles: sys.triangles.clone(),
        coeffs: sys.local_coeffs(&x),
        objective: sys.objective_sq(&x).sqrt(),
    })
}

/// One RTN piece on a triangle: order and local coefficients.
#[derive(Debug, Clone)]
pub struct FluxPiece {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

/// The global flux `σ = Σ_a σ^a`, kept as the (up to three) patch pieces of each triangle.
#[derive(Debug, Clone)]
pub struct FluxField {
    pieces: Vec<Vec<FluxPiece>>,
}

impl FluxField {
    pub fn zero(n_triangles: usize) -> Self {
        Self {
            pieces: vec![Vec::new(); n_triangles],
        }
    }

    pub fn pieces(&self, t: usize) -> &[FluxPiece] {
        &self.pieces[t]
    }

    pub fn n_triangles(&self) -> usize {
        self.pieces.len()
    }

    /// Highest piece order on triangle `t` (0 when the flux vanishes there).
    pub fn degree(&self, t: usize) -> usize {
        self.pieces[t].iter().map(|p| p.degree).max().unwrap_or(0)
    }

    /// Physical value and divergence at the points of the triangle rule of `order`.
    pub fn tabulate(&self, mesh: &Mesh, t: usize, order: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
        let rule = cached_rule(order);
        let piola = Piola::new(&mesh.coords(t));
        let mut vals = vec![[0.0; 2]; rule.len()];
        let mut divs = vec![0.0; rule.len()];
        for piece in &self.pieces[t] {
            let tab = cached_tabulation(piece.degree, order);
            for q in 0..rule.len() {
                let mut v = [0.0; 2];
                let mut d = 0.0;
                for (i, c) in piece.coeffs.iter().enumerate() {
                    let r = tab.values[q * tab.n + i];
                    v[0] += c * r[0];
                    v[1] += c * r[1];
                    d += c * tab.divs[q * tab.n + i];
                }
                let pv = piola.apply(v);
                vals[q][0] += pv[0];
                vals[q][1] += pv[1];
                divs[q] += d / piola.det;
            }
        }
        (vals, divs)
    }

    /// Physical value and divergence at reference point `xh` of triangle `t`.
    pub fn eval(&self, mesh: &Mesh, t: usize, xh: [f64; 2]) -> ([f64; 2], f64) {
        let piola = Piola::new(&mesh.coords(t));
        let mut v = [0.0; 2];
        let mut d = 0.0;
        let mut vals = Vec::new();
        let mut divs = Vec::new();
        for piece in &self.pieces[t] {
            crate::rtn::RtnElement::get(piece.degree).eval(xh, &mut vals, &mut divs);
            for (i, c) in piece.coeffs.iter().enumerate() {
                v[0] += c * vals[i][0];
                v[1] += c * vals[i][1];
                d += c * divs[i];
            }
        }
        (piola.apply(v), d / piola.det)
    }
}

/// Sums patch fluxes into the global field; every vertex needs exactly one patch.
pub fn assemble_flux(mesh: &Mesh, patches: &[PatchFlux]) -> Result<FluxField> {
    let mut seen = vec![false; mesh.n_vertices()];
    let mut field = FluxField::zero(mesh.n_triangles());
    for pf in patches {
        if pf.vertex >= mesh.n_vertices() {
            return Err(Error::UnknownVertex(pf.vertex));
        }
        seen[pf.vertex] = true;
        for (&t, c) in pf.triangles.iter().zip(&pf.coeffs) {
            field.pieces[t].push(FluxPiece {
                degree: pf.degree,
                coeffs: c.clone(),
            });
        }
    }
    if let Some(v) = seen.iter().position(|&s| !s) {
        return Err(Error::MissingPatch(v));
    }
    Ok(field)
}

/// Per-triangle indicators `η_K = ‖∇u + σ‖_K + (h_K/π)‖f − ∇·σ‖_K`.
#[derive(Debug, Clone)]
pub struct IndicatorSet {
    pub flux: Vec<f64>,
    pub oscillation: Vec<f64>,
    pub eta: Vec<f64>,
}

impl IndicatorSet {
    pub fn from_parts(flux: Vec<f64>, oscillation: Vec<f64>) -> Self {
        let eta = flux.iter().zip(&oscillation).map(|(a, b)| a + b).collect();
        Self {
            flux,
            oscillation,
            eta,
        }
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    /// η(T) = (Σ η_K²)^{1/2}.
    pub fn total(&self) -> f64 {
        self.eta.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// η(S) over a subset of triangles.
    pub fn total_over(&self, tris: &[usize]) -> f64 {
        tris.iter()
            .map(|&t| self.eta[t] * self.eta[t])
            .sum::<f64>()
            .sqrt()
    }
}

/// Evaluates the indicators of `u` for the flux `sigma`.
pub fn indicators(u: &FeFunction, sigma: &FluxField, f: &ScalarFn, extra: usize) -> IndicatorSet {
    let space = u.space();
    let mesh = space.mesh();
    let parts: Vec<(f64, f64)> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            let order = flux_order(space.vicinity_degree(t).max(sigma.degree(t)), extra);
            let rule = cached_rule(order);
            let (sv, sd) = sigma.tabulate(mesh, t, order);
            let utab = space.tabulate(t, &rule.points);
            let uc = u.element_coeffs(t);
            let det = 2.0 * mesh.area(t);
            let (mut a, mut b) = (0.0, 0.0);
            for q in 0..rule.len() {
                let w = rule.weights[q] * det;
                let mut g = [sv[q][0], sv[q][1]];
                for (i, c) in uc.iter().enumerate() {
                    let gi = utab.grad(q, i);
                    g[0] += c * gi[0];
                    g[1] += c * gi[1];
                }
                a += w * (g[0] * g[0] + g[1] * g[1]);
                let r = f(mesh.map_point(t, rule.points[q])) - sd[q];
                b += w * r * r;
            }
            (a.sqrt(), mesh.diameter(t) / std::f64::consts::PI * b.sqrt())
        })
        .collect();
    let (flux, osc) = parts.into_iter().unzip();
    IndicatorSet::from_parts(flux, osc)
}

/// Patch fluxes of all vertices, the global flux and its indicators.
pub fn estimate(u: &FeFunction, f: &ScalarFn, extra: usize) -> Result<(FluxField, IndicatorSet)> {
    let mesh = u.space().mesh();
    let patches: Vec<PatchFlux> = (0..mesh.n_vertices())
        .into_par_iter()
        .map(|a| patch_flux(u, f, a, extra))
        .collect::<Result<_>>()?;
    let sigma = assemble_flux(mesh, &patches)?;
    let ind = indicators(u, &sigma, f, extra);
    Ok((sigma, ind))
}

/// Boundary-data term `(Σ_e h_e ‖∂_t(g − u)‖²_e)^{1/2}` over the boundary
/// edges, measuring how well the discrete trace approximates `g`.
pub fn boundary_term(u: &FeFunction, g_grad: &VectorFn) -> f64 {
    let space = u.space();
    let mesh = space.mesh();
    let mut total = 0.0;
    for e in 0..mesh.n_edges() {
        if !mesh.is_boundary_edge(e) {
            continue;
        }
        let (t, _) = mesh.edge_triangles(e);
        let [va, vb] = mesh.edges()[e];
        let (xa, xb) = (mesh.vertices()[va], mesh.vertices()[vb]);
        let len = ((xb[0] - xa[0]).powi(2) + (xb[1] - xa[1]).powi(2)).sqrt();
        let tan = [(xb[0] - xa[0]) / len, (xb[1] - xa[1]) / len];
        let line = cached_line(space.degrees().get(t) + 8);
        let mut s2 = 0.0;
        for (&s, &w) in line.0.iter().zip(&line.1) {
            let x = [xa[0] + s * (xb[0] - xa[0]), xa[1] + s * (xb[1] - xa[1])];
            let (_, gu) = u.eval_point(t, x);
            let gg = g_grad(x);
            let d = (gg[0] - gu[0]) * tan[0] + (gg[1] - gu[1]) * tan[1];
            s2 += w * len * d * d;
        }
        total += len * s2;
    }
    total.sqrt()
}

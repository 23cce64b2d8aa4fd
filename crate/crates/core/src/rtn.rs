//! Raviart–Thomas–Nédélec elements of order p on triangles.
//!
//! The reference element has the degrees of freedom
//! - edge i, k = 0..=p: `∫_0^1 (σ̂·ν̂_i)(x̂(s)) L_k(s) ds`, with `x̂(s)` running
//!   from local vertex (i+1)%3 to (i+2)%3, `ν̂_i` the outward normal scaled by
//!   the edge length and `L_k` the Legendre polynomial shifted to [0, 1];
//! - interior: `∫ σ̂ · q` for q in [P_{p-1}]², x component first.
//!
//! Physical fields use the contravariant Piola map `σ = J σ̂ / det J`, which
//! preserves the edge degrees of freedom, so the nodal basis is computed once
//! per order.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::basis::legendre;
use crate::mesh::{Mesh, Point};
use crate::quadrature::{cached_line, cached_rule};

const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

pub fn n_dofs(p: usize) -> usize {
    (p + 1) * (p + 3)
}

/// Dimension of the scalar space P_p.
pub fn n_scalar(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

/// Products `P_i(2x−1) P_j(2y−1)`, i + j <= p, ordered by total degree, with gradients.
pub fn scalar_basis(p: usize, x: [f64; 2], values: &mut Vec<f64>, grads: &mut Vec<[f64; 2]>) {
    let mut px = Vec::new();
    let mut dx = Vec::new();
    let mut py = Vec::new();
    let mut dy = Vec::new();
    legendre(p, 2.0 * x[0] - 1.0, &mut px, &mut dx);
    legendre(p, 2.0 * x[1] - 1.0, &mut py, &mut dy);
    values.clear();
    grads.clear();
    for n in 0..=p {
        for i in (0..=n).rev() {
            let j = n - i;
            values.push(px[i] * py[j]);
            grads.push([2.0 * dx[i] * py[j], 2.0 * px[i] * dy[j]]);
        }
    }
}

/// Spanning set of the reference RTN_p space: `(q, 0)`, `(0, q)` for q in P_p
/// and `(X m, Y m)` for the degree-p members m of the scalar basis, with
/// `(X, Y)` the offset from the barycenter.
fn spanning(p: usize, x: [f64; 2], values: &mut Vec<[f64; 2]>, divs: &mut Vec<f64>) {
    let mut s = Vec::new();
    let mut g = Vec::new();
    scalar_basis(p, x, &mut s, &mut g);
    values.clear();
    divs.clear();
    for (v, d) in s.iter().zip(&g) {
        values.push([*v, 0.0]);
        divs.push(d[0]);
    }
    for (v, d) in s.iter().zip(&g) {
        values.push([0.0, *v]);
        divs.push(d[1]);
    }
    let (cx, cy) = (x[0] - 1.0 / 3.0, x[1] - 1.0 / 3.0);
    let top = n_scalar(p) - (p + 1);
    for k in top..s.len() {
        values.push([cx * s[k], cy * s[k]]);
        divs.push(2.0 * s[k] + cx * g[k][0] + cy * g[k][1]);
    }
}

/// Nodal basis of the reference element of order `p`.
#[derive(Debug)]
pub struct RtnElement {
    pub p: usize,
    /// Nodal function i is `Σ_k spanning_k · coeff[(k, i)]`.
    coeff: DMatrix<f64>,
}

impl RtnElement {
    fn build(p: usize) -> Self {
        let n = n_dofs(p);
        // dof matrix: d[(j, k)] = dof_j(spanning_k)
        let mut d = DMatrix::<f64>::zeros(n, n);
        let mut vals = Vec::new();
        let mut divs = Vec::new();
        let line = cached_line(p + 2);
        let mut lv = Vec::new();
        let mut ld = Vec::new();
        for i in 0..3 {
            let a = REF_VERTICES[(i + 1) % 3];
            let b = REF_VERTICES[(i + 2) % 3];
            let nu = [b[1] - a[1], a[0] - b[0]];
            for (&s, &w) in line.0.iter().zip(&line.1) {
                let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                spanning(p, x, &mut vals, &mut divs);
                legendre(p, 2.0 * s - 1.0, &mut lv, &mut ld);
                for k in 0..=p {
                    let row = i * (p + 1) + k;
                    for (c, v) in vals.iter().enumerate() {
                        d[(row, c)] += w * (v[0] * nu[0] + v[1] * nu[1]) * lv[k];
                    }
                }
            }
        }
        if p >= 1 {
            let rule = cached_rule(2 * p);
            let mut q = Vec::new();
            let mut qg = Vec::new();
            let nq = n_scalar(p - 1);
            let base = 3 * (p + 1);
            for (x, &w) in rule.points.iter().zip(&rule.weights) {
                spanning(p, *x, &mut vals, &mut divs);
                scalar_basis(p - 1, *x, &mut q, &mut qg);
                for (j, qj) in q.iter().enumerate() {
                    for (c, v) in vals.iter().enumerate() {
                        d[(base + j, c)] += w * v[0] * qj;
                        d[(base + nq + j, c)] += w * v[1] * qj;
                    }
                }
            }
        }
        let coeff = d
            .lu()
            .try_inverse()
            .expect("RTN degrees of freedom are unisolvent");
        Self { p, coeff }
    }

    /// Shared element of order `p`.
    pub fn get(p: usize) -> Arc<RtnElement> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<RtnElement>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("RTN cache poisoned");
        guard
            .entry(p)
            .or_insert_with(|| Arc::new(RtnElement::build(p)))
            .clone()
    }

    pub fn n_dofs(&self) -> usize {
        n_dofs(self.p)
    }

    /// Reference values and divergences of all nodal functions at `x`.
    pub fn eval(&self, x: [f64; 2], values: &mut Vec<[f64; 2]>, divs: &mut Vec<f64>) {
        let mut sv = Vec::new();
        let mut sd = Vec::new();
        spanning(self.p, x, &mut sv, &mut sd);
        let n = self.n_dofs();
        values.clear();
        divs.clear();
        values.resize(n, [0.0; 2]);
        divs.resize(n, 0.0);
        for (k, (v, d)) in sv.iter().zip(&sd).enumerate() {
            for i in 0..n {
                let c = self.coeff[(k, i)];
                if c != 0.0 {
                    values[i][0] += c * v[0];
                    values[i][1] += c * v[1];
                    divs[i] += c * d;
                }
            }
        }
    }
}

/// Reference nodal functions tabulated at the points of a triangle rule.
#[derive(Debug)]
pub struct RtnTabulation {
    pub n: usize,
    /// `values[q * n + i]`
    pub values: Vec<[f64; 2]>,
    pub divs: Vec<f64>,
}

/// Shared tabulation of the order-`p` element at the triangle rule of `order`.
pub fn cached_tabulation(p: usize, order: usize) -> Arc<RtnTabulation> {
    type Cache = Mutex<HashMap<(usize, usize), Arc<RtnTabulation>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().expect("RTN cache poisoned").get(&(p, order)) {
        return t.clone();
    }
    let el = RtnElement::get(p);
    let rule = cached_rule(order);
    let mut values = Vec::with_capacity(el.n_dofs() * rule.len());
    let mut divs = Vec::with_capacity(el.n_dofs() * rule.len());
    let mut v = Vec::new();
    let mut d = Vec::new();
    for x in &rule.points {
        el.eval(*x, &mut v, &mut d);
        values.extend_from_slice(&v);
        divs.extend_from_slice(&d);
    }
    let tab = Arc::new(RtnTabulation {
        n: el.n_dofs(),
        values,
        divs,
    });
    cache
        .lock()
        .expect("RTN cache poisoned")
        .insert((p, order), tab.clone());
    tab
}

/// Affine map data of a triangle: Jacobian columns and determinant.
#[derive(Debug, Clone, Copy)]
pub struct Piola {
    pub jac: [[f64; 2]; 2],
    pub det: f64,
}

impl Piola {
    pub fn new(c: &[Point; 3]) -> Self {
        let jac = [
            [c[1][0] - c[0][0], c[2][0] - c[0][0]],
            [c[1][1] - c[0][1], c[2][1] - c[0][1]],
        ];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        Self { jac, det }
    }

    /// Physical vector of a reference field value.
    #[inline]
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            (self.jac[0][0] * v[0] + self.jac[0][1] * v[1]) / self.det,
            (self.jac[1][0] * v[0] + self.jac[1][1] * v[1]) / self.det,
        ]
    }
}

/// Sign relating local edge DOF (i, k) of triangle `t` to the DOF of the mesh
/// edge taken from its smaller to its larger vertex id.
pub fn edge_dof_sign(mesh: &Mesh, t: usize, i: usize, k: usize) -> f64 {
    let tri = mesh.triangles()[t];
    if tri[(i + 1) % 3] < tri[(i + 2) % 3] || k % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spanning_set_has_rtn_dimension() {
        for p in 0..7 {
            let mut v = Vec::new();
            let mut d = Vec::new();
            spanning(p, [0.2, 0.3], &mut v, &mut d);
            assert_eq!(v.len(), n_dofs(p));
        }
    }

    // nodal functions reproduce the DOF identity, recomputed with a finer edge rule
    #[test]
    fn nodal_basis_is_dual_to_edge_moments() {
        for p in 0..6 {
            let el = RtnElement::get(p);
            let (s, w) = crate::quadrature::gauss_legendre_01(p + 6);
            let mut vals = Vec::new();
            let mut divs = Vec::new();
            let mut lv = Vec::new();
            let mut ld = Vec::new();
            for i in 0..3 {
                let a = REF_VERTICES[(i + 1) % 3];
                let b = REF_VERTICES[(i + 2) % 3];
                let nu = [b[1] - a[1], a[0] - b[0]];
                let mut m = vec![vec![0.0; el.n_dofs()]; p + 1];
                for (&s, &w) in s.iter().zip(&w) {
                    el.eval(
                        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])],
                        &mut vals,
                        &mut divs,
                    );
                    legendre(p, 2.0 * s - 1.0, &mut lv, &mut ld);
                    for k in 0..=p {
                        for (j, v) in vals.iter().enumerate() {
                            m[k][j] += w * (v[0] * nu[0] + v[1] * nu[1]) * lv[k];
                        }
                    }
                }
                for k in 0..=p {
                    for j in 0..el.n_dofs() {
                        let expect = if j == i * (p + 1) + k { 1.0 } else { 0.0 };
                        assert!(
                            (m[k][j] - expect).abs() < 1e-9,
                            "p={p} edge {i} k={k} fn {j}: {}",
                            m[k][j]
                        );
                    }
                }
            }
        }
    }

    // divergence theorem on the reference element for every nodal function
    #[test]
    fn divergence_matches_boundary_flux() {
        for p in 0..6 {
            let el = RtnElement::get(p);
            let rule = cached_rule(2 * p + 2);
            let mut vals = Vec::new();
            let mut divs = Vec::new();
            let mut total = vec![0.0; el.n_dofs()];
            for (x, w) in rule.points.iter().zip(&rule.weights) {
                el.eval(*x, &mut vals, &mut divs);
                for (j, d) in divs.iter().enumerate() {
                    total[j] += w * d;
                }
            }
            for (j, t) in total.iter().enumerate() {
                // the flux through edge i is its k = 0 moment
                let expect = if j % (p + 1) == 0 && j < 3 * (p + 1) {
                    1.0
                } else {
                    0.0
                };
                assert!((t - expect).abs() < 1e-9, "p={p} fn {j}: {t}");
            }
        }
    }
}

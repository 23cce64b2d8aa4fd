//! Hierarchical H1 shape functions on triangles, written in barycentric coordinates.
//!
//! Vertex functions are the barycentric coordinates; edge modes of order
//! k >= 2 are `λs λe P_{k-2}(λe - λs)` with `s` the edge endpoint of smaller
//! global id; bubbles are `λ0 λ1 λ2 P_a(λ1 - λ0) P_b(2 λ2 - 1)`, a + b <= p - 3.
//! Raising a degree only appends functions.

use crate::mesh::Point;

/// Legendre polynomials P_0..=P_n at `s` with first derivatives.
pub fn legendre(n: usize, s: f64, values: &mut Vec<f64>, derivs: &mut Vec<f64>) {
    values.clear();
    derivs.clear();
    values.push(1.0);
    derivs.push(0.0);
    if n == 0 {
        return;
    }
    values.push(s);
    derivs.push(1.0);
    for k in 2..=n {
        let kf = k as f64;
        let p = ((2.0 * kf - 1.0) * s * values[k - 1] - (kf - 1.0) * values[k - 2]) / kf;
        let d = derivs[k - 2] + (2.0 * kf - 1.0) * values[k - 1];
        values.push(p);
        derivs.push(d);
    }
}

/// Bubble index pairs (a, b) for degree `p`, ordered so lower degrees form a prefix.
pub fn bubble_indices(p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if p < 3 {
        return out;
    }
    for n in 0..=(p - 3) {
        for a in (0..=n).rev() {
            out.push((a, n - a));
        }
    }
    out
}

pub fn n_bubbles(p: usize) -> usize {
    if p < 3 {
        0
    } else {
        (p - 1) * (p - 2) / 2
    }
}

/// Shape-function layout of one element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementLayout {
    pub degree: usize,
    /// Degree of local edge i (opposite local vertex i).
    pub edge_degrees: [usize; 3],
    /// True when the first local endpoint ((i+1)%3) of edge i has the larger global id.
    pub edge_flip: [bool; 3],
}

impl ElementLayout {
    pub fn uniform(degree: usize) -> Self {
        Self {
            degree,
            edge_degrees: [degree; 3],
            edge_flip: [false; 3],
        }
    }

    pub fn n_shapes(&self) -> usize {
        3 + self.edge_degrees.iter().map(|&e| e - 1).sum::<usize>() + n_bubbles(self.degree)
    }

    /// Values and barycentric partial derivatives of all shapes at `lam`.
    pub fn eval(&self, lam: [f64; 3], values: &mut Vec<f64>, dlam: &mut Vec<[f64; 3]>) {
        values.clear();
        dlam.clear();
        for i in 0..3 {
            values.push(lam[i]);
            let mut d = [0.0; 3];
            d[i] = 1.0;
            dlam.push(d);
        }
        let mut pv = Vec::new();
        let mut pd = Vec::new();
        for i in 0..3 {
            let e = self.edge_degrees[i];
            if e < 2 {
                continue;
            }
            let (mut s, mut t) = ((i + 1) % 3, (i + 2) % 3);
            if self.edge_flip[i] {
                std::mem::swap(&mut s, &mut t);
            }
            let (ls, lt) = (lam[s], lam[t]);
            legendre(e - 2, lt - ls, &mut pv, &mut pd);
            for k in 0..=(e - 2) {
                values.push(ls * lt * pv[k]);
                let mut d = [0.0; 3];
                d[s] = lt * pv[k] - ls * lt * pd[k];
                d[t] = ls * pv[k] + ls * lt * pd[k];
                dlam.push(d);
            }
        }
        if self.degree >= 3 {
            let n = self.degree - 3;
            let b = lam[0] * lam[1] * lam[2];
            let db = [lam[1] * lam[2], lam[0] * lam[2], lam[0] * lam[1]];
            let mut qv = Vec::new();
            let mut qd = Vec::new();
            legendre(n, lam[1] - lam[0], &mut pv, &mut pd);
            legendre(n, 2.0 * lam[2] - 1.0, &mut qv, &mut qd);
            for (a, c) in bubble_indices(self.degree) {
                let f = pv[a] * qv[c];
                values.push(b * f);
                dlam.push([
                    db[0] * f - b * pd[a] * qv[c],
                    db[1] * f + b * pd[a] * qv[c],
                    db[2] * f + 2.0 * b * pv[a] * qd[c],
                ]);
            }
        }
    }
}

/// Gradients of the barycentric coordinates of a triangle.
pub fn grad_lambda(c: &[Point; 3]) -> [[f64; 2]; 3] {
    let j00 = c[1][0] - c[0][0];
    let j01 = c[2][0] - c[0][0];
    let j10 = c[1][1] - c[0][1];
    let j11 = c[2][1] - c[0][1];
    let det = j00 * j11 - j01 * j10;
    let g1 = [j11 / det, -j01 / det];
    let g2 = [-j10 / det, j00 / det];
    [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2]
}

/// Physical gradient from barycentric partials.
#[inline]
pub fn physical_gradient(d: &[f64; 3], gl: &[[f64; 2]; 3]) -> [f64; 2] {
    [
        d[0] * gl[0][0] + d[1] * gl[1][0] + d[2] * gl[2][0],
        d[0] * gl[0][1] + d[1] * gl[1][1] + d[2] * gl[2][1],
    ]
}

/// Shape values and physical gradients of one element at a set of reference points.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub n_shapes: usize,
    pub n_points: usize,
    /// `values[q * n_shapes + i]`
    pub values: Vec<f64>,
    /// `grads[q * n_shapes + i]`
    pub grads: Vec<[f64; 2]>,
}

impl Tabulation {
    pub fn new(layout: &ElementLayout, coords: &[Point; 3], ref_points: &[[f64; 2]]) -> Self {
        let gl = grad_lambda(coords);
        let n = layout.n_shapes();
        let mut values = Vec::with_capacity(n * ref_points.len());
        let mut grads = Vec::with_capacity(n * ref_points.len());
        let mut v = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for xi in ref_points {
            layout.eval([1.0 - xi[0] - xi[1], xi[0], xi[1]], &mut v, &mut d);
            values.extend_from_slice(&v);
            grads.extend(d.iter().map(|d| physical_gradient(d, &gl)));
        }
        Self {
            n_shapes: n,
            n_points: ref_points.len(),
            values,
            grads,
        }
    }

    #[inline]
    pub fn value(&self, q: usize, i: usize) -> f64 {
        self.values[q * self.n_shapes + i]
    }

    #[inline]
    pub fn grad(&self, q: usize, i: usize) -> [f64; 2] {
        self.grads[q * self.n_shapes + i]
    }
}

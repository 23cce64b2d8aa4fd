//! Vertex-based bulk chasing: the smallest greedy prefix of vertices, sorted
//! by patch estimator, whose patches carry a fraction θ of the estimator.

use crate::error::{Error, Result};
use crate::flux::IndicatorSet;
use crate::mesh::Mesh;

#[derive(Debug, Clone, PartialEq)]
pub struct MarkedVertexSet {
    /// Marked vertices in selection order.
    pub vertices: Vec<usize>,
    /// M = union of the marked patches, ascending.
    pub triangles: Vec<usize>,
    /// η(M)
    pub eta_marked: f64,
    /// η(T)
    pub eta_total: f64,
}

impl MarkedVertexSet {
    /// Achieved ratio θ_ℓ = η(M)/η(T).
    pub fn theta_achieved(&self) -> f64 {
        if self.eta_total > 0.0 {
            self.eta_marked / self.eta_total
        } else {
            1.0
        }
    }

    pub fn contains_triangle(&self, t: usize) -> bool {
        self.triangles.binary_search(&t).is_ok()
    }
}

/// Patch estimators η(T^a) of all vertices.
pub fn patch_estimators(ind: &IndicatorSet, mesh: &Mesh) -> Vec<f64> {
    (0..mesh.n_vertices())
        .map(|a| {
            mesh.vertex_triangles(a)
                .iter()
                .map(|&t| ind.eta[t] * ind.eta[t])
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Greedy marking: vertices by descending η(T^a) (ties by ascending id) are
/// added until η(M) ≥ θ η(T), each triangle of the union counted once.
pub fn mark(ind: &IndicatorSet, mesh: &Mesh, theta: f64) -> Result<MarkedVertexSet> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidTheta(theta));
    }
    if ind.len() != mesh.n_triangles() {
        return Err(Error::DegreeLength {
            expected: mesh.n_triangles(),
            got: ind.len(),
        });
    }
    let patch = patch_estimators(ind, mesh);
    let mut order: Vec<usize> = (0..mesh.n_vertices()).collect();
    order.sort_by(|&a, &b| patch[b].total_cmp(&patch[a]).then(a.cmp(&b)));
    let total_sq: f64 = ind.eta.iter().map(|e| e * e).sum();
    let target = theta * theta * total_sq;
    let mut covered = vec![false; mesh.n_triangles()];
    // uncovered triangles with a positive indicator; zero means η(M) = η(T)
    // exactly, whatever the rounding of the running sum
    let mut n_open = ind.eta.iter().filter(|&&e| e > 0.0).count();
    let mut marked_sq = 0.0;
    let mut vertices = Vec::new();
    for &a in &order {
        if marked_sq >= target || n_open == 0 {
            break;
        }
        vertices.push(a);
        for &t in mesh.vertex_triangles(a) {
            if !covered[t] {
                covered[t] = true;
                if ind.eta[t] > 0.0 {
                    n_open -= 1;
                }
                marked_sq += ind.eta[t] * ind.eta[t];
            }
        }
    }
    if n_open == 0 {
        marked_sq = total_sq;
    }
    let triangles: Vec<usize> = (0..mesh.n_triangles()).filter(|&t| covered[t]).collect();
    Ok(MarkedVertexSet {
        vertices,
        triangles,
        eta_marked: marked_sq.sqrt(),
        eta_total: total_sq.sqrt(),
    })
}

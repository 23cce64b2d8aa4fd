use std::sync::Arc;

use hp_adapt::mesh::{build_initial_mesh, Domain, Mesh};
use hp_adapt::space::{embed, hat_function, DegreeVector, FeFunction, HpSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

fn space(mesh: Mesh, degrees: Vec<usize>) -> Arc<HpSpace> {
    Arc::new(HpSpace::new(Arc::new(mesh), DegreeVector::new(degrees).unwrap()).unwrap())
}

fn random_function(space: &Arc<HpSpace>, rng: &mut ChaCha8Rng) -> FeFunction {
    let c = (0..space.n_dofs())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    FeFunction::new(space.clone(), c).unwrap()
}

#[test]
fn dof_count_matches_entity_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mesh = build_initial_mesh(Domain::LShape, 0.5).unwrap();
    let degrees: Vec<usize> = (0..mesh.n_triangles())
        .map(|_| rng.random_range(1..=5))
        .collect();
    let s = space(mesh.clone(), degrees.clone());
    // vertices + Σ_e (min degree of neighbours − 1) + Σ_K (p−1)(p−2)/2
    let mut expected = mesh.n_vertices();
    for e in 0..mesh.n_edges() {
        let (t0, t1) = mesh.edge_triangles(e);
        let d = t1.map_or(degrees[t0], |t1| degrees[t0].min(degrees[t1]));
        expected += d - 1;
    }
    expected += degrees
        .iter()
        .map(|p| (p - 1) * (p.saturating_sub(2)) / 2)
        .sum::<usize>();
    assert_eq!(s.n_dofs(), expected);
}

#[test]
fn random_functions_are_continuous_across_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mesh = build_initial_mesh(Domain::Square, 0.5).unwrap();
    let degrees: Vec<usize> = (0..mesh.n_triangles())
        .map(|_| rng.random_range(1..=6))
        .collect();
    let s = space(mesh.clone(), degrees);
    let u = random_function(&s, &mut rng);
    let interior: Vec<usize> = (0..mesh.n_edges())
        .filter(|&e| !mesh.is_boundary_edge(e))
        .collect();
    for k in 0..20 {
        let e = interior[(k * 13) % interior.len()];
        let (t0, t1) = mesh.edge_triangles(e);
        let [a, b] = mesh.edges()[e];
        for j in 1..=5 {
            let s = j as f64 / 6.0;
            let (xa, xb) = (mesh.vertices()[a], mesh.vertices()[b]);
            let x = [xa[0] + s * (xb[0] - xa[0]), xa[1] + s * (xb[1] - xa[1])];
            let jump = u.value_at(t0, x) - u.value_at(t1.unwrap(), x);
            assert!(jump.abs() < 1e-11, "jump {jump} on edge {e}");
        }
    }
}

#[test]
fn hat_embeds_into_bisected_mesh() {
    let mesh = build_initial_mesh(Domain::Square, 1.0).unwrap();
    let n = mesh.n_triangles();
    let coarse = space(mesh.clone(), vec![1; n]);
    let all: Vec<usize> = (0..n).collect();
    let fine_mesh = mesh.bisect(&all).unwrap();
    let parent = fine_mesh.parents().unwrap().to_vec();
    let fine = space(fine_mesh.clone(), vec![1; fine_mesh.n_triangles()]);
    let hat = hat_function(&coarse, 4).unwrap();
    let e = embed(&hat, &fine).unwrap();
    assert!(common::max_embedding_error(&hat, &e, &parent) < 1e-12);
    // 100 sample points
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let t = rng.random_range(0..fine_mesh.n_triangles());
        let (l1, l2): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (l1, l2) = if l1 + l2 > 1.0 {
            (1.0 - l1, 1.0 - l2)
        } else {
            (l1, l2)
        };
        let x = fine_mesh.map_point(t, [l1, l2]);
        assert!((hat.value_at(parent[t], x) - e.value_at(t, x)).abs() < 1e-12);
    }
}

#[test]
fn degree_raise_keeps_hierarchical_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mesh = build_initial_mesh(Domain::Square, 1.0).unwrap();
    let n = mesh.n_triangles();
    let p2 = space(mesh.clone(), vec![2; n]);
    let p3 = space(mesh.clone(), vec![3; n]);
    let u = random_function(&p2, &mut rng);
    let e = embed(&u, &p3).unwrap();
    for v in 0..mesh.n_vertices() {
        assert!((e.coeffs()[v] - u.coeffs()[v]).abs() < 1e-12);
    }
    for edge in 0..mesh.n_edges() {
        let old = p2.edge_dofs(edge);
        let new = p3.edge_dofs(edge);
        for (k, d) in new.clone().enumerate() {
            let expected = if k < old.len() {
                u.coeffs()[old.start + k]
            } else {
                0.0
            };
            assert!((e.coeffs()[d] - expected).abs() < 1e-12);
        }
    }
    for t in 0..n {
        for d in p3.bubble_dofs(t) {
            assert!(e.coeffs()[d].abs() < 1e-12);
        }
    }
}

#[test]
fn adaptive_spaces_are_nested() {
    common::adaptive_spaces_are_nested();
}

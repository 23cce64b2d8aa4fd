use std::sync::Arc;

use hp_adapt::assembly::solve_primal;
use hp_adapt::certificate::{
    certify, hp_lifting, increment_norm, lower_bound, reduction_factor, HpLifting,
};
use hp_adapt::flux::estimate;
use hp_adapt::marking::mark;
use hp_adapt::mesh::{build_initial_mesh, Domain};
use hp_adapt::problem::ProblemSpec;
use hp_adapt::refine::{h_lifting, refine_with};
use hp_adapt::space::{DegreeVector, FeFunction, HpSpace};
use hp_adapt::strategy::{plan_step, StrategyTag};
use hp_adapt::Error;

#[test]
fn reduction_factor_examples() {
    assert_eq!(reduction_factor(0.5, 0.0, 1.0, 2.0).unwrap(), (1.0, 1.0));
    let (plain, sharp) = reduction_factor(1.0, 2.0, 2.0, 2.0).unwrap();
    assert_eq!(plain, 0.0);
    assert_eq!(sharp, 0.0);
    let (plain, sharp) = reduction_factor(0.5, 0.6, 1.0, 1.0).unwrap();
    assert!((plain - (1.0f64 - 0.09).sqrt()).abs() < 1e-15);
    assert!((sharp - 0.8).abs() < 1e-15);
    assert!(matches!(
        reduction_factor(0.5, 0.1, 0.0, 1.0),
        Err(Error::ZeroMarkedEstimator)
    ));
    assert!(matches!(
        reduction_factor(1.0, 2.0, 1.0, 1.0),
        Err(Error::NegativeReduction(_))
    ));
}

fn gaussian_level(h: f64, p: usize) -> (ProblemSpec, FeFunction) {
    let problem = ProblemSpec::gaussian();
    let mesh = Arc::new(build_initial_mesh(Domain::Square, h).unwrap());
    let space =
        Arc::new(HpSpace::new(mesh.clone(), DegreeVector::uniform(mesh.n_triangles(), p)).unwrap());
    let u = solve_primal(&space, problem.source.as_ref(), None, problem.quad_extra).unwrap();
    (problem, u)
}

#[test]
fn single_vertex_bound_is_its_lifting_norm() {
    let (problem, u) = gaussian_level(0.25, 2);
    let mesh = u.space().mesh();
    let all: Vec<usize> = (0..mesh.n_triangles()).collect();
    let (next_mesh, deg) = refine_with(
        mesh,
        u.space().degrees(),
        &all,
        &vec![3; mesh.n_triangles()],
    )
    .unwrap();
    let next = Arc::new(HpSpace::new(next_mesh.clone(), deg).unwrap());
    let lift = hp_lifting(&u, &next, problem.source.as_ref(), 20, problem.quad_extra).unwrap();
    assert!(lift.norm > 0.0);
    let bound = lower_bound(std::slice::from_ref(&lift), &next_mesh);
    assert!((bound - lift.norm).abs() < 1e-12 * lift.norm);
    let zero = HpLifting {
        function: FeFunction::zero(lift.function.space().clone()),
        norm: 0.0,
        ..lift
    };
    assert_eq!(lower_bound(&[zero], &next_mesh), 0.0);
}

// With closure confined to the patch, the next space restricted to the patch
// is the locally refined patch space, so both liftings coincide.
#[test]
fn hp_lifting_matches_h_lifting_on_bisected_patch() {
    let (problem, u) = gaussian_level(0.5, 2);
    let mesh = u.space().mesh();
    for a in 0..mesh.n_vertices() {
        let flags = mesh.vertex_triangles(a).to_vec();
        let (next_mesh, deg) = refine_with(
            mesh,
            u.space().degrees(),
            &flags,
            u.space().degrees().as_slice(),
        )
        .unwrap();
        let next = Arc::new(HpSpace::new(next_mesh, deg).unwrap());
        let hp = hp_lifting(&u, &next, problem.source.as_ref(), a, problem.quad_extra).unwrap();
        let h = h_lifting(&u, problem.source.as_ref(), a, problem.quad_extra).unwrap();
        assert!(
            (hp.norm - h.norm).abs() <= 1e-10 * h.norm.max(1e-12),
            "vertex {a}: {} vs {}",
            hp.norm,
            h.norm
        );
    }
}

#[test]
fn certificate_bounds_hold_along_adaptive_run() {
    let problem = ProblemSpec::gaussian();
    let f = problem.source.as_ref();
    let extra = problem.quad_extra;
    let mesh = Arc::new(build_initial_mesh(Domain::Square, problem.h0).unwrap());
    let mut space =
        Arc::new(HpSpace::new(mesh.clone(), DegreeVector::uniform(mesh.n_triangles(), 1)).unwrap());
    let mut u = solve_primal(&space, f, None, extra).unwrap();
    for step in 0..6 {
        let (_, ind) = estimate(&u, f, extra).unwrap();
        let marked = mark(&ind, space.mesh(), 0.5).unwrap();
        let (plan, _) = plan_step(StrategyTag::HpResidual, &u, f, &ind, &marked, extra).unwrap();
        let next = Arc::new(HpSpace::new(plan.mesh.clone(), plan.degrees.clone()).unwrap());
        let cert = certify(&u, &next, f, &marked, 0.5, extra).unwrap();
        let u_next = solve_primal(&next, f, None, extra).unwrap();
        let inc = increment_norm(&u_next, &u, &marked.triangles).unwrap();
        assert!(
            cert.eta_lower <= inc * (1.0 + 1e-8),
            "step {step}: {} > {inc}",
            cert.eta_lower
        );
        assert!(cert.c_red_sharp <= cert.c_red + 1e-15);
        assert!(cert.c_red <= 1.0);
        // every single lifting is itself a lower bound on the local increment
        let max_single = cert.lifting_norms.iter().cloned().fold(0.0, f64::max);
        assert!(max_single <= inc * (1.0 + 1e-8));
        space = next;
        u = u_next;
    }
}

//! Property checks shared by the module tests and the acceptance run.
#![allow(dead_code)]

use std::sync::Arc;

use hp_adapt::assembly::{energy_error_squared, solve_primal};
use hp_adapt::flux::{estimate, patch_system, solve_patch_system, IndicatorSet};
use hp_adapt::marking::mark;
use hp_adapt::mesh::{build_initial_mesh, Domain, Mesh};
use hp_adapt::quadrature::{cached_line, cached_rule};
use hp_adapt::rtn::{n_scalar, scalar_basis};
use hp_adapt::space::{embed, DegreeVector, FeFunction, HpSpace};
use hp_adapt::strategy::StrategyTag;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// For every fine triangle, the embedded function must agree with the coarse
// one at quadrature points mapped into the parent.
pub fn max_embedding_error(coarse: &FeFunction, fine: &FeFunction, parent: &[usize]) -> f64 {
    let mesh = fine.space().mesh();
    let rule = cached_rule(6);
    let mut err: f64 = 0.0;
    for t in 0..mesh.n_triangles() {
        for xi in &rule.points {
            let x = mesh.map_point(t, *xi);
            let a = coarse.value_at(parent[t], x);
            let b = fine.value_at(t, x);
            err = err.max((a - b).abs());
        }
    }
    err
}

// V_ℓ ⊂ V_{ℓ+1} along three steps of a real adaptive run: every basis
// function of the coarse space is reproduced exactly by the fine one.
pub fn adaptive_spaces_are_nested() {
    let mut mesh = Arc::new(build_initial_mesh(Domain::Square, 0.25).unwrap());
    let mut degrees = DegreeVector::uniform(mesh.n_triangles(), 1);
    let problem = hp_adapt::problem::ProblemSpec::gaussian();
    // steps 3 to 5 contain the first h-refinement of the run
    for step in 0..5 {
        let s = Arc::new(HpSpace::new(mesh.clone(), degrees.clone()).unwrap());
        let u = solve_primal(&s, problem.source.as_ref(), None, problem.quad_extra).unwrap();
        let (_, ind) =
            hp_adapt::flux::estimate(&u, problem.source.as_ref(), problem.quad_extra).unwrap();
        let marked = hp_adapt::marking::mark(&ind, &mesh, 0.5).unwrap();
        let (plan, _) = hp_adapt::strategy::plan_step(
            StrategyTag::HpResidual,
            &u,
            problem.source.as_ref(),
            &ind,
            &marked,
            problem.quad_extra,
        )
        .unwrap();
        let fine = Arc::new(HpSpace::new(plan.mesh.clone(), plan.degrees.clone()).unwrap());
        if step >= 2 {
            let parent = plan.mesh.parents().unwrap().to_vec();
            for dof in 0..s.n_dofs() {
                let mut c = vec![0.0; s.n_dofs()];
                c[dof] = 1.0;
                let phi = FeFunction::new(s.clone(), c).unwrap();
                let e = embed(&phi, &fine).unwrap();
                assert!(
                    max_embedding_error(&phi, &e, &parent) <= 1e-9,
                    "basis function {dof} at step {step}"
                );
            }
        }
        mesh = plan.mesh;
        degrees = plan.degrees;
    }
}

pub fn inside_closed(c: [[f64; 2]; 3], x: [f64; 2]) -> bool {
    let cross = |a: [f64; 2], b: [f64; 2], p: [f64; 2]| {
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    };
    (0..3).all(|i| cross(c[i], c[(i + 1) % 3], x) >= -1e-12)
}

pub fn check_hierarchy(coarse: &Mesh, fine: &Mesh) {
    let parents = fine.parents().unwrap();
    assert_eq!(parents.len(), fine.n_triangles());
    for (t, &k) in parents.iter().enumerate() {
        for x in fine.coords(t) {
            assert!(
                inside_closed(coarse.coords(k), x),
                "child {t} leaves parent {k}"
            );
        }
    }
    // the children tile the parent
    let mut area = vec![0.0; coarse.n_triangles()];
    for (t, &k) in parents.iter().enumerate() {
        area[k] += fine.area(t);
    }
    for k in 0..coarse.n_triangles() {
        assert!((area[k] - coarse.area(k)).abs() < 1e-14);
    }
}

// edge multiplicities straight from the triangle list, independent of the mesh's own tables
pub fn check_edge_multiplicities(m: &Mesh) {
    let mut count = std::collections::HashMap::new();
    for tri in m.triangles() {
        for i in 0..3 {
            let (a, b) = (tri[i], tri[(i + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let on_boundary = |p: [f64; 2]| {
        (p[0].abs() - 1.0).abs() < 1e-14
            || (p[1].abs() - 1.0).abs() < 1e-14
            || p[0].abs() < 1e-14
            || p[1].abs() < 1e-14
    };
    for (&(a, b), &c) in &count {
        assert!(c == 1 || c == 2);
        if c == 1 {
            let mid = [
                0.5 * (m.vertices()[a][0] + m.vertices()[b][0]),
                0.5 * (m.vertices()[a][1] + m.vertices()[b][1]),
            ];
            assert!(
                on_boundary(mid),
                "interior edge ({a},{b}) has one neighbour: hanging node"
            );
        }
    }
}

pub fn nvb_keeps_conformity_and_angles_over_20_refinements() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for domain in [Domain::Square, Domain::LShape] {
        let mut mesh = build_initial_mesh(domain, 0.5).unwrap();
        let bound = 0.5 * mesh.mesh_min_angle();
        for step in 0..20 {
            // alternate local refinement near a point with random flags
            let flags: Vec<usize> = if step % 2 == 0 {
                (0..mesh.n_triangles())
                    .filter(|&t| {
                        mesh.triangles()[t]
                            .iter()
                            .any(|&v| mesh.vertices()[v][0].hypot(mesh.vertices()[v][1]) < 1e-12)
                    })
                    .collect()
            } else {
                (0..mesh.n_triangles())
                    .filter(|_| rng.random_bool(0.05))
                    .collect()
            };
            let next = mesh.bisect(&flags).unwrap();
            next.check_conformity().unwrap();
            check_edge_multiplicities(&next);
            check_hierarchy(&mesh, &next);
            assert!(next.mesh_min_angle() >= bound - 1e-12);
            let parents = next.parents().unwrap();
            for &t in &flags {
                assert!(parents.iter().filter(|&&k| k == t).count() >= 2);
            }
            mesh = next;
        }
    }
}

// ‖∇(u − u_{ℓ+1})‖² + ‖∇(u_{ℓ+1} − u_ℓ)‖² = ‖∇(u − u_ℓ)‖² along an adaptive
// run with a smooth manufactured solution.
pub fn pythagoras_holds_along_adaptive_run() {
    let problem = hp_adapt::problem::ProblemSpec::sine();
    let f = problem.source.clone();
    let mut mesh = Arc::new(build_initial_mesh(problem.domain, problem.h0).unwrap());
    let mut degrees = DegreeVector::uniform(mesh.n_triangles(), 1);
    let mut prev: Option<(FeFunction, f64)> = None;
    for _ in 0..6 {
        let s = Arc::new(HpSpace::new(mesh.clone(), degrees.clone()).unwrap());
        let u = solve_primal(&s, f.as_ref(), None, problem.quad_extra).unwrap();
        let err_sq: f64 =
            energy_error_squared(&u, problem.exact_grad.as_ref(), problem.quad_extra, None)
                .iter()
                .sum();
        if let Some((up, prev_sq)) = &prev {
            let all: Vec<usize> = (0..up.space().mesh().n_triangles()).collect();
            let inc = hp_adapt::certificate::increment_norm(&u, up, &all).unwrap();
            let lhs = err_sq + inc * inc;
            assert!(
                (lhs - prev_sq).abs() <= 1e-6 * prev_sq,
                "{lhs} vs {prev_sq}"
            );
        }
        let (_, ind) = hp_adapt::flux::estimate(&u, f.as_ref(), problem.quad_extra).unwrap();
        let marked = hp_adapt::marking::mark(&ind, &mesh, 0.5).unwrap();
        let (plan, _) = hp_adapt::strategy::plan_step(
            StrategyTag::HpResidual,
            &u,
            f.as_ref(),
            &ind,
            &marked,
            problem.quad_extra,
        )
        .unwrap();
        mesh = plan.mesh;
        degrees = plan.degrees;
        prev = Some((u, err_sq));
    }
}

pub fn indicators(eta: Vec<f64>) -> IndicatorSet {
    let n = eta.len();
    IndicatorSet::from_parts(eta, vec![0.0; n])
}

// Direct transcription of the definition: repeatedly pick the unmarked
// vertex with the largest patch estimator (smallest id on ties) until the
// union of the chosen patches holds θ of the estimator.
pub fn brute_force(mesh: &Mesh, eta: &[f64], theta: f64) -> Vec<usize> {
    let patch: Vec<f64> = (0..mesh.n_vertices())
        .map(|a| {
            (0..mesh.n_triangles())
                .filter(|&t| mesh.triangles()[t].contains(&a))
                .map(|t| eta[t] * eta[t])
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let total: f64 = eta.iter().map(|e| e * e).sum();
    let mut chosen: Vec<usize> = Vec::new();
    loop {
        let inside = |t: usize| mesh.triangles()[t].iter().any(|v| chosen.contains(v));
        let covered: f64 = (0..mesh.n_triangles())
            .filter(|&t| inside(t))
            .map(|t| eta[t] * eta[t])
            .sum();
        let rest = (0..mesh.n_triangles()).any(|t| !inside(t) && eta[t] > 0.0);
        if covered >= theta * theta * total || !rest {
            return chosen;
        }
        let mut best: Option<usize> = None;
        for a in 0..mesh.n_vertices() {
            if chosen.contains(&a) {
                continue;
            }
            best = match best {
                Some(b) if patch[b] >= patch[a] => Some(b),
                _ => Some(a),
            };
        }
        chosen.push(best.unwrap());
    }
}

pub fn greedy_marking_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mesh = build_initial_mesh(Domain::Square, 0.5)
        .unwrap()
        .bisect(&[0, 1, 17, 40])
        .unwrap();
    for k in 0..20 {
        let eta: Vec<f64> = (0..mesh.n_triangles())
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0_f64).powi(4)
                }
            })
            .collect();
        let theta = [0.3, 0.5, 0.7, 0.9, 1.0][k % 5];
        let marked = mark(&indicators(eta.clone()), &mesh, theta).unwrap();
        let oracle = brute_force(&mesh, &eta, theta);
        assert_eq!(marked.vertices, oracle, "set {k}");
        assert!(marked.eta_marked >= theta * marked.eta_total * (1.0 - 1e-14));
        assert!(marked.theta_achieved() >= theta * (1.0 - 1e-14));
        let union: Vec<usize> = (0..mesh.n_triangles())
            .filter(|&t| {
                mesh.triangles()[t]
                    .iter()
                    .any(|v| marked.vertices.contains(v))
            })
            .collect();
        assert_eq!(marked.triangles, union);
        // removing the last vertex breaks the criterion
        if marked.vertices.len() > 1 {
            let shorter = &marked.vertices[..marked.vertices.len() - 1];
            let sq: f64 = (0..mesh.n_triangles())
                .filter(|&t| mesh.triangles()[t].iter().any(|v| shorter.contains(v)))
                .map(|t| eta[t] * eta[t])
                .sum();
            assert!(sq < theta * theta * marked.eta_total * marked.eta_total);
        }
    }
}

pub fn sine_source(x: [f64; 2]) -> f64 {
    let pi = std::f64::consts::PI;
    2.0 * pi * pi * (pi * x[0]).sin() * (pi * x[1]).sin()
}

// polynomial source, integrated exactly by every rule involved
pub fn poly_source(x: [f64; 2]) -> f64 {
    1.0 + x[0] * x[0] * x[1] - 3.0 * x[0] * x[1].powi(3)
}

pub fn mixed_degree_solution(seed: u64) -> FeFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = build_initial_mesh(Domain::Square, 1.0).unwrap();
    let mesh = mesh.bisect(&[0, 5]).unwrap();
    let degrees: Vec<usize> = (0..mesh.n_triangles())
        .map(|_| rng.random_range(1..=4))
        .collect();
    let space =
        Arc::new(HpSpace::new(Arc::new(mesh), DegreeVector::new(degrees).unwrap()).unwrap());
    solve_primal(&space, &poly_source, None, 0).unwrap()
}

pub fn exact_polynomial_gives_zero_estimator() {
    let mesh = Arc::new(build_initial_mesh(Domain::Square, 0.5).unwrap());
    let n = mesh.n_triangles();
    let space = Arc::new(HpSpace::new(mesh, DegreeVector::uniform(n, 4)).unwrap());
    let f = |x: [f64; 2]| -2.0 * ((x[1] * x[1] - 1.0) + (x[0] * x[0] - 1.0));
    let u = solve_primal(&space, &f, None, 0).unwrap();
    let (_, ind) = estimate(&u, &f, 0).unwrap();
    // ‖∇u*‖² = 2 ∫∫ (2x(y²−1))² = 2 · (4·2/3) · (16/15)
    let energy = (2.0_f64 * 4.0 * (2.0 / 3.0) * (16.0 / 15.0)).sqrt();
    assert!(ind.total() <= 1e-9 * energy, "eta = {}", ind.total());
    for t in 0..ind.len() {
        assert!(ind.flux[t] >= 0.0 && ind.oscillation[t] >= 0.0);
    }
}

// For every K: (∇·σ − f, q)_K = 0 for q in P_m(K), m the smallest patch order
// among the vertices of K.
pub fn flux_is_equilibrated() {
    for seed in 0..3 {
        let u = mixed_degree_solution(seed);
        let mesh = u.space().mesh().clone();
        let (sigma, _) = estimate(&u, &poly_source, 0).unwrap();
        let patch_degree: Vec<usize> = (0..mesh.n_vertices())
            .map(|a| {
                mesh.vertex_triangles(a)
                    .iter()
                    .map(|&t| u.space().degrees().get(t))
                    .max()
                    .unwrap()
            })
            .collect();
        for t in 0..mesh.n_triangles() {
            let m = mesh.triangles()[t]
                .iter()
                .map(|&v| patch_degree[v])
                .min()
                .unwrap();
            let rule = cached_rule(2 * 6 + 10);
            let mut qv = Vec::new();
            let mut qg = Vec::new();
            let mut moments = vec![0.0; n_scalar(m)];
            let mut scale = vec![0.0; n_scalar(m)];
            for (x, w) in rule.points.iter().zip(&rule.weights) {
                let (_, d) = sigma.eval(&mesh, t, *x);
                let fx = poly_source(mesh.map_point(t, *x));
                scalar_basis(m, *x, &mut qv, &mut qg);
                for (k, q) in qv.iter().enumerate() {
                    moments[k] += w * (d - fx) * q;
                    scale[k] += w * (fx * q).abs();
                }
            }
            for (mo, sc) in moments.iter().zip(&scale) {
                assert!(
                    mo.abs() <= 1e-9 * sc.max(1e-3),
                    "seed {seed} triangle {t}: {mo} vs {sc}"
                );
            }
        }
    }
}

pub fn normal_jump_check(mesh: &Mesh, u: &FeFunction) {
    let (sigma, _) = estimate(u, &poly_source, 0).unwrap();
    let line = cached_line(5);
    let mut max_normal: f64 = 0.0;
    let mut max_jump: f64 = 0.0;
    for e in 0..mesh.n_edges() {
        let (t1, Some(t2)) = mesh.edge_triangles(e) else {
            continue;
        };
        let [a, b] = mesh.edges()[e];
        let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
        let n = [pb[1] - pa[1], pa[0] - pb[0]];
        for &s in &line.0 {
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let to_ref = |t: usize| {
                let l = mesh.barycentric(t, x);
                [l[1], l[2]]
            };
            let (v1, _) = sigma.eval(mesh, t1, to_ref(t1));
            let (v2, _) = sigma.eval(mesh, t2, to_ref(t2));
            let n1 = v1[0] * n[0] + v1[1] * n[1];
            let n2 = v2[0] * n[0] + v2[1] * n[1];
            max_normal = max_normal.max(n1.abs());
            max_jump = max_jump.max((n1 - n2).abs());
        }
    }
    assert!(max_normal > 1e-3);
    assert!(
        max_jump <= 1e-10 * max_normal.max(1.0),
        "normal jump {max_jump}"
    );
}

pub fn flux_normal_trace_is_continuous() {
    for seed in 0..3 {
        let u = mixed_degree_solution(seed);
        let mesh = u.space().mesh().clone();
        normal_jump_check(&mesh, &u);
    }
}

// Constrained least squares through an SVD nullspace basis of the constraint
// rows, independent of the saddle-point factorization.
pub fn nullspace_oracle(
    mass: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
) -> DVector<f64> {
    let n = mass.nrows();
    let svd = c.clone().svd(true, true);
    let vt = svd.v_t.unwrap();
    let uu = svd.u.unwrap();
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count();
    let mut x0 = DVector::<f64>::zeros(n);
    for i in 0..rank {
        let coef = uu.column(i).dot(d) / svd.singular_values[i];
        x0 += vt.row(i).transpose() * coef;
    }
    // rows of v_t beyond the rank, completed to a basis of R^n
    let full = DMatrix::<f64>::identity(n, n) - vt.rows(0, rank).transpose() * vt.rows(0, rank);
    let fsvd = full.svd(true, false);
    let u = fsvd.u.unwrap();
    let k = fsvd.singular_values.iter().filter(|&&s| s > 0.5).count();
    let z = u.columns(0, k).into_owned();
    let zmz = z.transpose() * mass * &z;
    let rhs = z.transpose() * (b - mass * &x0);
    let y = zmz.cholesky().unwrap().solve(&rhs);
    let mut x = x0 + z * y;
    // restore feasibility lost to rounding in the nullspace basis
    let r = d - c * &x;
    for i in 0..rank {
        x += vt.row(i).transpose() * (uu.column(i).dot(&r) / svd.singular_values[i]);
    }
    x
}

pub fn saddle_point_matches_nullspace_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for seed in 0..10 {
        let u = mixed_degree_solution(100 + seed);
        let nv = u.space().mesh().n_vertices();
        let a = rng.random_range(0..nv);
        let sys = patch_system(&u, &poly_source, a, 0).unwrap();
        let x = solve_patch_system(&sys).unwrap();
        let oracle = nullspace_oracle(&sys.mass, &sys.flux_rhs, &sys.div, &sys.div_rhs);
        let obj = sys.objective_sq(&x);
        let obj_oracle = sys.objective_sq(&oracle);
        let infeasible = (&sys.div * &oracle - &sys.div_rhs).norm();
        assert!(infeasible <= 1e-10 * sys.div_rhs.norm().max(1e-12));
        assert!(
            (obj - obj_oracle).abs() <= 1e-10 * obj_oracle.max(1e-12),
            "vertex {a}: {obj} vs {obj_oracle}"
        );
        let diff = (&x - &oracle).norm();
        assert!(
            diff <= 1e-8 * oracle.norm().max(1.0),
            "vertex {a}: flux differs by {diff}"
        );
        let resid = (&sys.div * &x - &sys.div_rhs).norm();
        assert!(resid <= 1e-10 * sys.div_rhs.norm().max(1e-12));
        checked += 1;
    }
    assert_eq!(checked, 10);
}

//! Refinement strategies: the residual-lifting hp-decision and the
//! competitors (smoothness-based PRIOR and PARAM, the corner-aware APRIORI,
//! the non-adaptive LINEAR grading and pure h-refinement).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::ScalarFn;
use crate::error::{Error, Result};
use crate::flux::IndicatorSet;
use crate::marking::MarkedVertexSet;
use crate::mesh::{Mesh, Point};
use crate::quadrature::cached_rule;
use crate::refine::{count_consistency_violations, hp_decision, refine_with};
use crate::rtn::scalar_basis;
use crate::space::{DegreeVector, FeFunction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum StrategyTag {
    HpResidual,
    Prior,
    Param { gamma: f64 },
    Apriori,
    Linear,
    HOnly,
}

impl StrategyTag {
    /// Parses a strategy name; `param` needs `gamma`.
    pub fn parse(name: &str, gamma: Option<f64>) -> Result<Self> {
        match name {
            "hp-residual" => Ok(Self::HpResidual),
            "prior" => Ok(Self::Prior),
            "param" => match gamma {
                Some(g) if g > 0.0 => Ok(Self::Param { gamma: g }),
                Some(g) => Err(Error::Config(format!("gamma must be positive, got {g}"))),
                None => Err(Error::Config("strategy param requires --gamma".into())),
            },
            "apriori" => Ok(Self::Apriori),
            "linear" => Ok(Self::Linear),
            "h-only" => Ok(Self::HOnly),
            _ => Err(Error::Config(format!("unknown strategy '{name}'"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::HpResidual => "hp-residual".into(),
            Self::Prior => "prior".into(),
            Self::Param { gamma } => format!("param({gamma})"),
            Self::Apriori => "apriori".into(),
            Self::Linear => "linear".into(),
            Self::HOnly => "h-only".into(),
        }
    }
}

/// Smoothness data of one marked triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothness {
    pub triangle: usize,
    /// ‖∇(u − Π_{p−1} u)‖_K, `None` for p = 1.
    pub eta_lower_degree: Option<f64>,
    /// g_K = η_K / η_K^{p−1}
    pub g: Option<f64>,
    /// s_K = 1 − log(η_K/η_K^{p−1}) / log(p/(p−1))
    pub s: Option<f64>,
}

/// ‖∇(u − Π u)‖_K with Π the L²(K)-orthogonal projection onto P_{p−1}(K).
pub fn lower_degree_energy(u: &FeFunction, t: usize) -> Option<f64> {
    let space = u.space();
    let p = space.degrees().get(t);
    if p < 2 {
        return None;
    }
    let mesh = space.mesh();
    let rule = cached_rule(2 * p + 2);
    let tab = space.tabulate(t, &rule.points);
    let c = u.element_coeffs(t);
    let n = crate::rtn::n_scalar(p - 1);
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut qv = Vec::new();
    let mut qg = Vec::new();
    let mut ugrads = Vec::with_capacity(rule.len());
    for q in 0..rule.len() {
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for (i, ci) in c.iter().enumerate() {
            v += ci * tab.value(q, i);
            let gi = tab.grad(q, i);
            g[0] += ci * gi[0];
            g[1] += ci * gi[1];
        }
        ugrads.push(g);
        scalar_basis(p - 1, rule.points[q], &mut qv, &mut qg);
        let w = rule.weights[q];
        for i in 0..n {
            rhs[i] += w * v * qv[i];
            for j in 0..n {
                gram[(i, j)] += w * qv[i] * qv[j];
            }
        }
    }
    let coef = gram.cholesky()?.solve(&rhs);
    // reference gradients map to physical ones through J^{-T}
    let [x0, x1, x2] = mesh.coords(t);
    let (j00, j01, j10, j11) = (x1[0] - x0[0], x2[0] - x0[0], x1[1] - x0[1], x2[1] - x0[1]);
    let det = j00 * j11 - j01 * j10;
    let mut s = 0.0;
    for q in 0..rule.len() {
        scalar_basis(p - 1, rule.points[q], &mut qv, &mut qg);
        let mut gr = [0.0; 2];
        for i in 0..n {
            gr[0] += coef[i] * qg[i][0];
            gr[1] += coef[i] * qg[i][1];
        }
        let gp = [
            (j11 * gr[0] - j10 * gr[1]) / det,
            (-j01 * gr[0] + j00 * gr[1]) / det,
        ];
        let d = [ugrads[q][0] - gp[0], ugrads[q][1] - gp[1]];
        s += rule.weights[q] * det * (d[0] * d[0] + d[1] * d[1]);
    }
    Some(s.sqrt())
}

/// Smoothness indicators of the given triangles.
pub fn smoothness_indicators(
    u: &FeFunction,
    ind: &IndicatorSet,
    tris: &[usize],
) -> Vec<Smoothness> {
    tris.iter()
        .map(|&t| {
            let p = u.space().degrees().get(t) as f64;
            let eta_lower_degree = lower_degree_energy(u, t);
            let ratio = eta_lower_degree
                .filter(|&e| e > 0.0)
                .map(|e| ind.eta[t] / e);
            Smoothness {
                triangle: t,
                eta_lower_degree,
                g: ratio,
                s: ratio.map(|r| 1.0 - r.ln() / (p / (p - 1.0)).ln()),
            }
        })
        .collect()
}

/// Elementwise choice of the smoothness-based strategies: PARAM bisects when
/// g_K > γ, PRIOR when p_K > s_K − 1. Without an indicator (p = 1 or a vanishing
/// lower-degree error) the degree is raised.
pub fn prefers_h(strategy: StrategyTag, p: usize, s: &Smoothness) -> bool {
    match (strategy, s.g, s.s) {
        (StrategyTag::Param { gamma }, Some(g), _) => g > gamma,
        (StrategyTag::Prior, _, Some(sk)) => p as f64 > sk - 1.0,
        _ => false,
    }
}

/// Outcome of REFINE for any strategy.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub mesh: Arc<Mesh>,
    pub degrees: DegreeVector,
    pub h_flagged: usize,
    pub p_flagged: usize,
    pub hp_flagged: usize,
    pub consistency_violations: usize,
}

/// Marked triangles whose degree is minimal in at least one marked patch containing them.
fn patch_minimal(mesh: &Mesh, degrees: &DegreeVector, marked: &MarkedVertexSet) -> Vec<bool> {
    let mut ok = vec![false; mesh.n_triangles()];
    for &a in &marked.vertices {
        let tris = mesh.vertex_triangles(a);
        let pmin = tris.iter().map(|&t| degrees.get(t)).min().unwrap_or(1);
        for &t in tris {
            if degrees.get(t) == pmin {
                ok[t] = true;
            }
        }
    }
    ok
}

/// Elementwise h/p choice: `wants_h[i]` for `marked.triangles[i]`; p-refinement
/// (+1) only where the degree is patch-minimal.
fn elementwise_plan(
    mesh: &Mesh,
    degrees: &DegreeVector,
    marked: &MarkedVertexSet,
    wants_h: &[bool],
) -> Result<StepPlan> {
    let minimal = patch_minimal(mesh, degrees, marked);
    let mut target = degrees.as_slice().to_vec();
    let mut h = Vec::new();
    let mut p_count = 0;
    for (&t, &wh) in marked.triangles.iter().zip(wants_h) {
        if wh {
            h.push(t);
        } else if minimal[t] {
            target[t] += 1;
            p_count += 1;
        }
    }
    let (next, deg) = refine_with(mesh, degrees, &h, &target)?;
    Ok(StepPlan {
        mesh: next,
        degrees: deg,
        h_flagged: h.len(),
        p_flagged: p_count,
        hp_flagged: 0,
        consistency_violations: 0,
    })
}

fn touches(mesh: &Mesh, t: usize, x: Point) -> bool {
    mesh.triangles()[t].iter().any(|&v| {
        let p = mesh.vertices()[v];
        (p[0] - x[0]).abs() < 1e-14 && (p[1] - x[1]).abs() < 1e-14
    })
}

/// LINEAR grading: layer 1 touches the origin; other triangles get layer
/// 2 + ⌊log2(d_K / h_1)⌋ (at least 2), with d_K the centroid distance to the
/// origin and h_1 the largest diameter in layer 1. Degree ⌈1 + (i−1)/3⌉.
pub fn linear_degrees(mesh: &Mesh) -> Vec<usize> {
    let origin = [0.0, 0.0];
    let h1 = (0..mesh.n_triangles())
        .filter(|&t| touches(mesh, t, origin))
        .map(|t| mesh.diameter(t))
        .fold(0.0, f64::max);
    (0..mesh.n_triangles())
        .map(|t| {
            let layer = if touches(mesh, t, origin) {
                1
            } else {
                let c = mesh.coords(t);
                let cx = (c[0][0] + c[1][0] + c[2][0]) / 3.0;
                let cy = (c[0][1] + c[1][1] + c[2][1]) / 3.0;
                2 + (cx.hypot(cy) / h1).log2().floor().max(0.0) as usize
            };
            layer_degree(layer)
        })
        .collect()
}

/// ⌈1 + (i−1)/3⌉
pub fn layer_degree(layer: usize) -> usize {
    1 + (layer - 1).div_ceil(3)
}

/// LINEAR step: one bisection round of the triangles at the origin, so areas
/// shrink by 1/2 per step towards the corner; degrees are reassigned by layer
/// (never decreasing).
pub fn linear_step(mesh: &Mesh, degrees: &DegreeVector) -> Result<StepPlan> {
    let origin = [0.0, 0.0];
    let flags: Vec<usize> = (0..mesh.n_triangles())
        .filter(|&t| touches(mesh, t, origin))
        .collect();
    let next = mesh.bisect(&flags)?;
    let parent = next.parents().expect("bisect records parents");
    let graded = linear_degrees(&next);
    let deg: Vec<usize> = graded
        .iter()
        .zip(parent)
        .map(|(&g, &k)| g.max(degrees.get(k)))
        .collect();
    Ok(StepPlan {
        mesh: Arc::new(next),
        degrees: DegreeVector::new(deg)?,
        h_flagged: flags.len(),
        p_flagged: 0,
        hp_flagged: 0,
        consistency_violations: 0,
    })
}

/// REFINE for the given strategy.
pub fn plan_step(
    strategy: StrategyTag,
    u: &FeFunction,
    f: &ScalarFn,
    ind: &IndicatorSet,
    marked: &MarkedVertexSet,
    extra: usize,
) -> Result<(StepPlan, Option<crate::refine::HpDecision>)> {
    let space = u.space();
    let mesh = space.mesh();
    let degrees = space.degrees();
    match strategy {
        StrategyTag::HpResidual => {
            let decision = hp_decision(u, f, marked, extra)?;
            let target = decision.target_degrees(degrees);
            let (next, deg) = refine_with(mesh, degrees, &decision.mh, &target)?;
            let consistency_violations = count_consistency_violations(mesh, &next, &decision.vh)?;
            let (h, p, hp) = decision.flag_counts();
            let plan = StepPlan {
                mesh: next,
                degrees: deg,
                h_flagged: h,
                p_flagged: p,
                hp_flagged: hp,
                consistency_violations,
            };
            Ok((plan, Some(decision)))
        }
        StrategyTag::HOnly => {
            let (next, deg) = refine_with(mesh, degrees, &marked.triangles, degrees.as_slice())?;
            let n = marked.triangles.len();
            Ok((
                StepPlan {
                    mesh: next,
                    degrees: deg,
                    h_flagged: n,
                    p_flagged: 0,
                    hp_flagged: 0,
                    consistency_violations: 0,
                },
                None,
            ))
        }
        StrategyTag::Prior | StrategyTag::Param { .. } => {
            let sm = smoothness_indicators(u, ind, &marked.triangles);
            let wants_h: Vec<bool> = sm
                .iter()
                .map(|s| prefers_h(strategy, degrees.get(s.triangle), s))
                .collect();
            Ok((elementwise_plan(mesh, degrees, marked, &wants_h)?, None))
        }
        StrategyTag::Apriori => {
            let wants_h: Vec<bool> = marked
                .triangles
                .iter()
                .map(|&t| touches(mesh, t, [0.0, 0.0]))
                .collect();
            Ok((elementwise_plan(mesh, degrees, marked, &wants_h)?, None))
        }
        StrategyTag::Linear => Ok((linear_step(mesh, degrees)?, None)),
    }
}

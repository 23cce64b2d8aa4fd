//! The adaptive loop SOLVE → ESTIMATE → MARK → REFINE with per-iteration
//! records, reduction certificates, CSV/JSON output and the exponential fit.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{energy_error_squared, solve_primal};
use crate::certificate::{certify, increment_norm, ReductionCertificate};
use crate::error::{Error, Result};
use crate::flux::{boundary_term, estimate};
use crate::marking::{mark, MarkedVertexSet};
use crate::mesh::{build_initial_mesh, Domain, Mesh};
use crate::problem::{ProblemKind, ProblemSpec};
use crate::space::{DegreeVector, FeFunction, HpSpace};
use crate::strategy::{linear_degrees, plan_step, StrategyTag};

/// Header of the history CSV.
pub const CSV_COLUMNS: [&str; 18] = [
    "iteration",
    "triangles",
    "dofs",
    "max_degree",
    "marked_vertices",
    "h_flagged",
    "p_flagged",
    "hp_flagged",
    "eta",
    "error",
    "estimator_effectivity",
    "theta_l",
    "eta_lower",
    "c_red",
    "c_red_sharp",
    "i_red",
    "lower_bound_effectivity",
    "consistency_violations",
];

/// Settings of one adaptive run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub strategy: StrategyTag,
    pub theta: f64,
    /// Number of refinement steps; the history has at most `max_iter + 1` rows,
    /// and the initial solve is iteration 1.
    pub max_iter: usize,
    /// Stop once ‖∇(u − u_ℓ)‖/‖∇u‖ falls below this value.
    pub target_rel_error: Option<f64>,
    /// Directory receiving one mesh dump per iteration.
    pub mesh_out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(problem: ProblemKind, strategy: StrategyTag) -> Self {
        Self {
            problem,
            strategy,
            theta: 0.5,
            max_iter: 100,
            target_rel_error: None,
            mesh_out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidTheta(self.theta));
        }
        if let StrategyTag::Param { gamma } = self.strategy {
            if gamma.is_nan() || gamma <= 0.0 {
                return Err(Error::Config(format!(
                    "gamma must be positive, got {gamma}"
                )));
            }
        }
        if matches!(self.strategy, StrategyTag::Apriori | StrategyTag::Linear)
            && self.problem != ProblemKind::Lshape
        {
            return Err(Error::Config(format!(
                "strategy {} needs the L-shape problem",
                self.strategy.label()
            )));
        }
        if let Some(t) = self.target_rel_error {
            if t.is_nan() || t <= 0.0 {
                return Err(Error::Config(format!(
                    "target relative error must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// One row of the history. Quantities about the step ℓ → ℓ+1 are NaN on
/// the last row and for strategies without a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub triangles: usize,
    pub dofs: usize,
    pub max_degree: usize,
    pub marked_vertices: usize,
    pub h_flagged: usize,
    pub p_flagged: usize,
    pub hp_flagged: usize,
    pub eta: f64,
    pub error: f64,
    pub estimator_effectivity: f64,
    pub theta_l: f64,
    pub eta_lower: f64,
    pub c_red: f64,
    pub c_red_sharp: f64,
    pub i_red: f64,
    pub lower_bound_effectivity: f64,
    pub consistency_violations: usize,
}

impl IterationRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:e},{:e},{},{},{:e},{},{},{},{},{}",
            self.iteration,
            self.triangles,
            self.dofs,
            self.max_degree,
            self.marked_vertices,
            self.h_flagged,
            self.p_flagged,
            self.hp_flagged,
            self.eta,
            self.error,
            self.estimator_effectivity,
            self.theta_l,
            self.eta_lower,
            self.c_red,
            self.c_red_sharp,
            self.i_red,
            self.lower_bound_effectivity,
            self.consistency_violations
        )
    }
}

/// Why the loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIterations,
    TargetReached,
    ZeroEstimator,
}

/// Record of a complete adaptive run.
#[derive(Debug, Clone)]
pub struct AdaptHistory {
    pub problem: ProblemKind,
    pub strategy: StrategyTag,
    pub theta: f64,
    /// ‖∇u‖ used for relative errors.
    pub energy: f64,
    pub rows: Vec<IterationRow>,
    /// Boundary-data term per row, included in `eta` (zero for homogeneous data).
    pub boundary_terms: Vec<f64>,
    pub stop: StopReason,
    pub seconds: f64,
}

/// Summary written by `--json-summary`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub problem: ProblemKind,
    pub strategy: String,
    pub theta: f64,
    pub iterations: usize,
    pub final_dofs: usize,
    pub final_dofs_cbrt: f64,
    pub final_relative_error: f64,
    pub stop: StopReason,
    pub fit_c1: Option<f64>,
    pub fit_c2: Option<f64>,
    pub seconds: f64,
    /// DoF counting convention.
    pub dof_convention: String,
}

impl AdaptHistory {
    pub fn relative_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error / self.energy).collect()
    }

    /// Largest share of the boundary-data term in the reported estimator.
    pub fn max_boundary_ratio(&self) -> f64 {
        self.rows
            .iter()
            .zip(&self.boundary_terms)
            .map(|(r, &d)| if r.eta > 0.0 { d / r.eta } else { 0.0 })
            .fold(0.0, f64::max)
    }

    /// First row whose relative error is at most `target`.
    pub fn first_below(&self, target: f64) -> Option<&IterationRow> {
        self.rows.iter().find(|r| r.error / self.energy <= target)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", CSV_COLUMNS.join(","))?;
        for row in &self.rows {
            writeln!(w, "{}", row.csv_line())?;
        }
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        let last = self.rows.last().expect("history has at least one row");
        let fit = fit_exponential(self).ok();
        RunSummary {
            problem: self.problem,
            strategy: self.strategy.label(),
            theta: self.theta,
            iterations: self.rows.len(),
            final_dofs: last.dofs,
            final_dofs_cbrt: (last.dofs as f64).cbrt(),
            final_relative_error: last.error / self.energy,
            stop: self.stop,
            fit_c1: fit.map(|f| f.0),
            fit_c2: fit.map(|f| f.1),
            seconds: self.seconds,
            dof_convention: "free (unconstrained) degrees of freedom".into(),
        }
    }
}

/// Least-squares fit of log(rel. error) = log C₁ − C₂ DoF^{1/3} over all rows.
pub fn fit_exponential(history: &AdaptHistory) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = history
        .rows
        .iter()
        .map(|r| ((r.dofs as f64).cbrt(), r.error / history.energy))
        .collect();
    fit_exponential_points(&pts)
}

/// Same fit on raw (DoF^{1/3}, relative error) pairs.
pub fn fit_exponential_points(pts: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pts.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 points, got {}",
            pts.len()
        )));
    }
    if pts.iter().any(|&(_, e)| e.is_nan() || e <= 0.0) {
        return Err(Error::DegenerateFit("errors must be positive".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    if sxx.is_nan() || sxx <= 1e-14 * mx.abs().max(1.0) {
        return Err(Error::DegenerateFit("all DoF values are identical".into()));
    }
    let slope = sxy / sxx;
    Ok(((my - slope * mx).exp(), -slope))
}

fn initial_state(
    problem: &ProblemSpec,
    strategy: StrategyTag,
) -> Result<(Arc<Mesh>, DegreeVector)> {
    if strategy == StrategyTag::Linear {
        let mesh = build_initial_mesh(Domain::LShape, 0.5)?;
        let degrees = DegreeVector::new(linear_degrees(&mesh))?;
        return Ok((Arc::new(mesh), degrees));
    }
    let mesh = build_initial_mesh(problem.domain, problem.h0)?;
    let degrees = DegreeVector::uniform(mesh.n_triangles(), 1);
    Ok((Arc::new(mesh), degrees))
}

fn dump_mesh(dir: &std::path::Path, iteration: usize, space: &HpSpace) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join(format!("mesh_{iteration:03}.txt")))?;
    space
        .mesh()
        .write_text(space.degrees().as_slice(), std::io::BufWriter::new(file))
}

/// Runs the adaptive loop. `progress` is called with every completed row.
pub fn run_loop(
    config: &RunConfig,
    mut progress: impl FnMut(&IterationRow),
) -> Result<AdaptHistory> {
    config.validate()?;
    let problem = ProblemSpec::new(config.problem);
    let f = problem.source.clone();
    let extra = problem.quad_extra;
    let start = Instant::now();
    let (mesh, degrees) = initial_state(&problem, config.strategy)?;
    let mut space = Arc::new(HpSpace::new(mesh, degrees)?);
    let mut rows: Vec<IterationRow> = Vec::new();
    // previous solution, its marked triangles and the certificate of the step
    let mut pending: Option<(FeFunction, Vec<usize>, ReductionCertificate)> = None;
    let mut boundary_terms = Vec::new();
    let stop;
    let mut iteration = 1;
    loop {
        let at = |e: Error| Error::AtIteration {
            iteration,
            source: Box::new(e),
        };
        let u = solve_primal(&space, f.as_ref(), problem.dirichlet_fn(), extra).map_err(at)?;
        let (_, ind) = estimate(&u, f.as_ref(), extra).map_err(at)?;
        let eta_d = match problem.dirichlet {
            Some(_) => boundary_term(&u, problem.exact_grad.as_ref()),
            None => 0.0,
        };
        boundary_terms.push(eta_d);
        let eta = ind.total() + eta_d;
        let error = energy_error_squared(
            &u,
            problem.exact_grad.as_ref(),
            extra,
            problem.singular_point,
        )
        .iter()
        .sum::<f64>()
        .sqrt();
        if let Some((u_prev, prev_marked, cert)) = pending.take() {
            let prev = rows
                .last_mut()
                .expect("certificate belongs to a previous row");
            prev.i_red = cert.c_red_sharp / (error / prev.error);
            let inc = increment_norm(&u, &u_prev, &prev_marked).map_err(at)?;
            prev.lower_bound_effectivity = inc / cert.eta_lower;
        }
        if let Some(dir) = &config.mesh_out {
            dump_mesh(dir, iteration, &space).map_err(at)?;
        }
        let mut row = IterationRow {
            iteration,
            triangles: space.mesh().n_triangles(),
            dofs: space.n_free(),
            max_degree: space.degrees().max(),
            marked_vertices: 0,
            h_flagged: 0,
            p_flagged: 0,
            hp_flagged: 0,
            eta,
            error,
            estimator_effectivity: eta / error,
            theta_l: f64::NAN,
            eta_lower: f64::NAN,
            c_red: f64::NAN,
            c_red_sharp: f64::NAN,
            i_red: f64::NAN,
            lower_bound_effectivity: f64::NAN,
            consistency_violations: 0,
        };
        let done = if config
            .target_rel_error
            .is_some_and(|t| error / problem.energy <= t)
        {
            Some(StopReason::TargetReached)
        } else if iteration > config.max_iter {
            Some(StopReason::MaxIterations)
        } else {
            None
        };
        if let Some(reason) = done {
            progress(&row);
            rows.push(row);
            stop = reason;
            break;
        }
        let marked: MarkedVertexSet = if config.strategy == StrategyTag::Linear {
            MarkedVertexSet {
                vertices: Vec::new(),
                triangles: Vec::new(),
                eta_marked: 0.0,
                eta_total: ind.total(),
            }
        } else {
            mark(&ind, space.mesh(), config.theta).map_err(at)?
        };
        if config.strategy != StrategyTag::Linear && marked.eta_marked == 0.0 {
            progress(&row);
            rows.push(row);
            stop = StopReason::ZeroEstimator;
            break;
        }
        let (plan, _) =
            plan_step(config.strategy, &u, f.as_ref(), &ind, &marked, extra).map_err(at)?;
        let next = Arc::new(HpSpace::new(plan.mesh.clone(), plan.degrees.clone()).map_err(at)?);
        row.marked_vertices = marked.vertices.len();
        row.h_flagged = plan.h_flagged;
        row.p_flagged = plan.p_flagged;
        row.hp_flagged = plan.hp_flagged;
        row.consistency_violations = plan.consistency_violations;
        if config.strategy != StrategyTag::Linear {
            row.theta_l = marked.theta_achieved();
        }
        if config.strategy == StrategyTag::HpResidual {
            let cert = certify(&u, &next, f.as_ref(), &marked, config.theta, extra).map_err(at)?;
            row.eta_lower = cert.eta_lower;
            row.c_red = cert.c_red;
            row.c_red_sharp = cert.c_red_sharp;
            pending = Some((u, marked.triangles.clone(), cert));
        }
        progress(&row);
        rows.push(row);
        space = next;
        iteration += 1;
    }
    Ok(AdaptHistory {
        problem: config.problem,
        strategy: config.strategy,
        theta: config.theta,
        energy: problem.energy,
        rows,
        boundary_terms,
        stop,
        seconds: start.elapsed().as_secs_f64(),
    })
}

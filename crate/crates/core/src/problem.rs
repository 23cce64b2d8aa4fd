//! Benchmark problems: data, exact solutions and reference energies.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::{ScalarFn, VectorFn};
use crate::mesh::{Domain, Point};

/// ‖∇u‖ of the sharp Gaussian; the integrand separates into two 1D integrals
/// evaluated with 30-digit adaptive quadrature.
pub const GAUSSIAN_ENERGY: f64 = 1.772_486_974_054_339_5;

/// ‖∇u‖ of the L-shape singular solution: |∇u|² = (4/9) r^{-2/3}, so
/// ‖∇u‖² = 2 ∫_0^{π/4} sec^{4/3}φ dφ.
pub const LSHAPE_ENERGY: f64 = 1.355_074_411_932_851_2;

/// Benchmark identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// u = (x²−1)(y²−1) exp(−100(x²+y²)) on (−1,1)²
    Gaussian,
    /// u = r^{2/3} sin(2φ/3) on the L-shaped domain
    Lshape,
    /// u = sin(πx) sin(πy) on (−1,1)²
    Sine,
}

impl std::str::FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "lshape" | "l-shape" => Ok(Self::Lshape),
            "sine" => Ok(Self::Sine),
            _ => Err(format!(
                "unknown problem '{s}' (expected gaussian, lshape or sine)"
            )),
        }
    }
}

/// Data of a Poisson problem −Δu = f, u = g on ∂Ω, with known solution.
#[derive(Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub domain: Domain,
    /// Maximal element diameter of the initial criss-cross mesh.
    pub h0: f64,
    pub source: Arc<ScalarFn>,
    /// Dirichlet trace; `None` means homogeneous.
    pub dirichlet: Option<Arc<ScalarFn>>,
    pub exact: Arc<ScalarFn>,
    pub exact_grad: Arc<VectorFn>,
    /// ‖∇u‖_Ω
    pub energy: f64,
    /// Additional quadrature order for source integrals.
    pub quad_extra: usize,
    /// Point singularity of the solution, resolved by graded quadrature.
    pub singular_point: Option<Point>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("kind", &self.kind)
            .field("domain", &self.domain)
            .field("h0", &self.h0)
            .field("energy", &self.energy)
            .finish_non_exhaustive()
    }
}

/// Sharp Gaussian source −Δu.
pub fn gaussian_source(x: Point) -> f64 {
    let (a, b) = (x[0] * x[0] - 1.0, x[1] * x[1] - 1.0);
    let e = (-100.0 * (x[0] * x[0] + x[1] * x[1])).exp();
    let uxx = b * e * (2.0 - 800.0 * x[0] * x[0] + a * (40000.0 * x[0] * x[0] - 200.0));
    let uyy = a * e * (2.0 - 800.0 * x[1] * x[1] + b * (40000.0 * x[1] * x[1] - 200.0));
    -(uxx + uyy)
}

pub fn gaussian_exact(x: Point) -> f64 {
    (x[0] * x[0] - 1.0) * (x[1] * x[1] - 1.0) * (-100.0 * (x[0] * x[0] + x[1] * x[1])).exp()
}

pub fn gaussian_grad(x: Point) -> [f64; 2] {
    let (a, b) = (x[0] * x[0] - 1.0, x[1] * x[1] - 1.0);
    let e = (-100.0 * (x[0] * x[0] + x[1] * x[1])).exp();
    [
        b * e * x[0] * (2.0 - 200.0 * a),
        a * e * x[1] * (2.0 - 200.0 * b),
    ]
}

/// Polar angle in [0, 2π).
fn angle(x: Point) -> f64 {
    let phi = x[1].atan2(x[0]);
    if phi < 0.0 {
        phi + 2.0 * std::f64::consts::PI
    } else {
        phi
    }
}

pub fn lshape_exact(x: Point) -> f64 {
    let r = x[0].hypot(x[1]);
    r.powf(2.0 / 3.0) * (2.0 * angle(x) / 3.0).sin()
}

pub fn lshape_grad(x: Point) -> [f64; 2] {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let phi = angle(x);
    // ∇(r^α sin αφ) = α r^{α−1} (sin((α−1)φ), cos((α−1)φ)) with α = 2/3
    let c = 2.0 / 3.0 * r.powf(-1.0 / 3.0);
    [c * (-phi / 3.0).sin(), c * (-phi / 3.0).cos()]
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::Gaussian => Self::gaussian(),
            ProblemKind::Lshape => Self::lshape(),
            ProblemKind::Sine => Self::sine(),
        }
    }

    pub fn gaussian() -> Self {
        Self {
            kind: ProblemKind::Gaussian,
            domain: Domain::Square,
            h0: 0.25,
            source: Arc::new(gaussian_source),
            dirichlet: None,
            exact: Arc::new(gaussian_exact),
            exact_grad: Arc::new(gaussian_grad),
            energy: GAUSSIAN_ENERGY,
            quad_extra: 6,
            singular_point: None,
        }
    }

    pub fn lshape() -> Self {
        Self {
            kind: ProblemKind::Lshape,
            domain: Domain::LShape,
            h0: 0.25,
            source: Arc::new(|_| 0.0),
            dirichlet: Some(Arc::new(lshape_exact)),
            exact: Arc::new(lshape_exact),
            exact_grad: Arc::new(lshape_grad),
            energy: LSHAPE_ENERGY,
            quad_extra: 0,
            singular_point: Some([0.0, 0.0]),
        }
    }

    pub fn sine() -> Self {
        let pi = std::f64::consts::PI;
        Self {
            kind: ProblemKind::Sine,
            domain: Domain::Square,
            h0: 0.5,
            source: Arc::new(move |x| 2.0 * pi * pi * (pi * x[0]).sin() * (pi * x[1]).sin()),
            dirichlet: None,
            exact: Arc::new(move |x| (pi * x[0]).sin() * (pi * x[1]).sin()),
            exact_grad: Arc::new(move |x| {
                [
                    pi * (pi * x[0]).cos() * (pi * x[1]).sin(),
                    pi * (pi * x[0]).sin() * (pi * x[1]).cos(),
                ]
            }),
            // ‖∇u‖² = 2 π² ∫ cos²(πx) ∫ sin²(πy) = 2π²
            energy: pi * std::f64::consts::SQRT_2,
            quad_extra: 2,
            singular_point: None,
        }
    }

    pub fn dirichlet_fn(&self) -> Option<&ScalarFn> {
        self.dirichlet.as_deref()
    }
}

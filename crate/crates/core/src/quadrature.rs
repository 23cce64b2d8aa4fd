//! Gauss rules on the interval and on the reference triangle.
//!
//! The reference triangle has vertices (0,0), (1,0), (0,1); points are stored
//! in these reference coordinates and weights sum to its area 1/2.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Gauss–Legendre nodes and weights on [0, 1] with `n` points (exact to degree 2n-1).
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push(0.5 * (1.0 - x));
        weights.push(0.5 * w);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A quadrature rule on the reference triangle.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub order: usize,
}

impl QuadratureRule {
    /// Collapsed (Duffy) tensor Gauss rule exact for polynomials of total degree `order`.
    pub fn triangle(order: usize) -> Self {
        // the collapse adds one degree in the first direction
        let n = (order + 2).div_ceil(2).max(1);
        let (x, w) = gauss_legendre_01(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let u = x[i];
                let v = x[j];
                points.push([u, v * (1.0 - u)]);
                weights.push(w[i] * w[j] * (1.0 - u));
            }
        }
        Self {
            points,
            weights,
            order,
        }
    }

    /// Composite rule geometrically graded toward reference vertex `vertex`
    /// (0, 1 or 2), with `levels` layers of ratio 1/2 and a base rule of `order`.
    pub fn graded_toward_vertex(order: usize, vertex: usize, levels: usize) -> Self {
        let base = cached_rule(order);
        let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let s = corners[vertex];
        let b = corners[(vertex + 1) % 3];
        let c = corners[(vertex + 2) % 3];
        let at = |t: f64, e: [f64; 2]| [s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])];
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut push = |tri: [[f64; 2]; 3]| {
            let j00 = tri[1][0] - tri[0][0];
            let j01 = tri[2][0] - tri[0][0];
            let j10 = tri[1][1] - tri[0][1];
            let j11 = tri[2][1] - tri[0][1];
            let det = (j00 * j11 - j01 * j10).abs();
            for (p, w) in base.points.iter().zip(&base.weights) {
                points.push([
                    tri[0][0] + j00 * p[0] + j01 * p[1],
                    tri[0][1] + j10 * p[0] + j11 * p[1],
                ]);
                weights.push(w * det);
            }
        };
        let mut hi = 1.0;
        for _ in 0..levels {
            let lo = 0.5 * hi;
            push([at(lo, b), at(hi, b), at(hi, c)]);
            push([at(lo, b), at(hi, c), at(lo, c)]);
            hi = lo;
        }
        push([s, at(hi, b), at(hi, c)]);
        Self {
            points,
            weights,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Shared, lazily built triangle rule of the given order.
pub fn cached_rule(order: usize) -> Arc<QuadratureRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<QuadratureRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(order)
        .or_insert_with(|| Arc::new(QuadratureRule::triangle(order)))
        .clone()
}

/// Points and weights of a rule on [0, 1].
pub type LineRule = (Vec<f64>, Vec<f64>);

/// Shared Gauss–Legendre rule on [0, 1] with `n` points.
pub fn cached_line(n: usize) -> Arc<LineRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<LineRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| Arc::new(gauss_legendre_01(n)))
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    // exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!
    fn monomial_integral(a: usize, b: usize) -> f64 {
        let fact = |n: usize| (1..=n).fold(1.0, |acc, k| acc * k as f64);
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre_01(n);
            for k in 0..(2 * n) {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                assert!((s - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn triangle_rule_exact_to_order() {
        for order in 0..=24 {
            let rule = QuadratureRule::triangle(order);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 0.5).abs() < 1e-14);
            for a in 0..=order {
                for b in 0..=(order - a) {
                    let s: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    let exact = monomial_integral(a, b);
                    assert!(
                        (s - exact).abs() < 1e-13 * exact.max(1.0),
                        "order {order} x^{a} y^{b}"
                    );
                }
            }
        }
    }

    #[test]
    fn graded_rule_is_exact_and_resolves_singularity() {
        for v in 0..3 {
            let rule = QuadratureRule::graded_toward_vertex(6, v, 20);
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 0.5).abs() < 1e-13);
            let s: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(p, w)| w * p[0] * p[0] * p[1])
                .sum();
            assert!((s - monomial_integral(2, 1)).abs() < 1e-14);
        }
        // r^{-2/3} near the origin: integral over the reference triangle of
        // (x^2+y^2)^{-1/3}; compare with a polar-coordinate evaluation
        let rule = QuadratureRule::graded_toward_vertex(24, 0, 40);
        let s: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * (p[0] * p[0] + p[1] * p[1]).powf(-1.0 / 3.0))
            .sum();
        // int_0^{pi/2} int_0^{R(phi)} r^{1/3} dr dphi, R = 1/(cos+sin)
        let (x, w) = gauss_legendre_01(60);
        let polar: f64 = x
            .iter()
            .zip(&w)
            .map(|(t, w)| {
                let phi = t * std::f64::consts::FRAC_PI_2;
                let r = 1.0 / (phi.cos() + phi.sin());
                w * std::f64::consts::FRAC_PI_2 * 0.75 * r.powf(4.0 / 3.0)
            })
            .sum();
        assert!((s - polar).abs() < 1e-9 * polar, "{s} vs {polar}");
    }
}

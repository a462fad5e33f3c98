//! Gauss–Legendre rules on the reference interval, square and square edges.

use crate::error::{Error, Result};
use crate::geometry::Side;

pub const MAX_POINTS: usize = 20;

/// A one-dimensional rule on [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// A tensor-product rule on [-1, 1]^2.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule2D {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// A 1D rule laid along one face of the reference square.
///
/// `points` are reference coordinates on the face; `params` are the edge
/// parameters in [-1, 1] the points were generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRule {
    pub side: Side,
    pub params: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub reference_normal: [f64; 2],
}

impl QuadratureRule1D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

impl QuadratureRule2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss–Legendre nodes and weights, exact for polynomials of degree `2n - 1`.
pub fn gauss_legendre_1d(n: usize) -> Result<QuadratureRule1D> {
    if n == 0 || n > MAX_POINTS {
        return Err(Error::QuadratureOrder(n));
    }
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
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
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[i] = -x;
        points[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
    Ok(QuadratureRule1D { points, weights })
}

/// Tensor product of two `n`-point Gauss rules; point `(i, j)` is stored at `i + n * j`.
pub fn tensor_rule(n: usize) -> Result<QuadratureRule2D> {
    let g = gauss_legendre_1d(n)?;
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            points.push([g.points[i], g.points[j]]);
            weights.push(g.weights[i] * g.weights[j]);
        }
    }
    Ok(QuadratureRule2D { points, weights })
}

/// Gauss rule embedded on one face of the reference square.
pub fn edge_rule(n: usize, side: Side) -> Result<EdgeRule> {
    let g = gauss_legendre_1d(n)?;
    let points = g.points.iter().map(|&t| side.reference_point(t)).collect();
    Ok(EdgeRule {
        side,
        params: g.points.clone(),
        points,
        weights: g.weights,
        reference_normal: side.reference_normal(),
    })
}

/// Default points per direction for coarse degree `p` and subscale degree `pf`.
pub fn default_point_count(p: usize, pf: usize) -> usize {
    (p.max(pf) + 2).min(MAX_POINTS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_point_rule_is_midpoint() {
        let r = gauss_legendre_1d(1).unwrap();
        assert_eq!(r.points, vec![0.0]);
        assert_abs_diff_eq!(r.weights[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn two_point_rule() {
        let r = gauss_legendre_1d(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert_abs_diff_eq!(r.points[0], -s, epsilon = 1e-15);
        assert_abs_diff_eq!(r.points[1], s, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn three_points_integrate_quartic() {
        let r = gauss_legendre_1d(3).unwrap();
        assert_abs_diff_eq!(r.integrate(|x| x.powi(4)), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_counts_are_rejected() {
        assert!(gauss_legendre_1d(0).is_err());
        assert!(gauss_legendre_1d(21).is_err());
        assert!(tensor_rule(0).is_err());
    }

    #[test]
    fn monomial_exactness_up_to_2n_minus_1() {
        for n in 1..=MAX_POINTS {
            let r = gauss_legendre_1d(n).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for k in 0..2 * n {
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                let got = r.integrate(|x| x.powi(k as i32));
                assert!((got - exact).abs() < 1e-13, "n={n} k={k}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn tensor_rule_two_points() {
        let r = tensor_rule(2).unwrap();
        assert_eq!(r.len(), 4);
        for &w in &r.weights {
            assert_abs_diff_eq!(w, 1.0, epsilon = 1e-15);
        }
        let got = r.integrate(|[x, y]| x * x * y * y);
        assert_abs_diff_eq!(got, 4.0 / 9.0, epsilon = 1e-15);
        let total: f64 = tensor_rule(5).unwrap().weights.iter().sum();
        assert_abs_diff_eq!(total, 4.0, epsilon = 1e-13);
    }

    #[test]
    fn tensor_monomials() {
        for n in 1..=6 {
            let r = tensor_rule(n).unwrap();
            for a in 0..2 * n {
                for b in 0..2 * n {
                    let m = |k: usize| if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                    let got = r.integrate(|[x, y]| x.powi(a as i32) * y.powi(b as i32));
                    assert!((got - m(a) * m(b)).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn edge_rules_lie_on_faces() {
        for side in Side::ALL {
            let e = edge_rule(4, side).unwrap();
            let total: f64 = e.weights.iter().sum();
            assert_abs_diff_eq!(total, 2.0, epsilon = 1e-14);
            let n = e.reference_normal;
            for p in &e.points {
                // face points satisfy n . p = 1 on the reference square
                assert_abs_diff_eq!(n[0] * p[0] + n[1] * p[1], 1.0, epsilon = 1e-15);
            }
        }
    }
}

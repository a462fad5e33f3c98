//! Tensor-product Legendre polynomials, the element-local subscale basis.

/// Values and first two derivatives of `P_0 .. P_n` at `x`.
pub fn legendre_1d(n: usize, x: f64) -> [Vec<f64>; 3] {
    let mut p = vec![0.0; n + 1];
    let mut dp = vec![0.0; n + 1];
    let mut ddp = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = x;
        dp[1] = 1.0;
    }
    for k in 2..=n {
        let kf = k as f64;
        p[k] = ((2.0 * kf - 1.0) * x * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf;
        // P_k' = P_{k-2}' + (2k - 1) P_{k-1}, and likewise for P_k''
        dp[k] = dp[k - 2] + (2.0 * kf - 1.0) * p[k - 1];
        ddp[k] = ddp[k - 2] + (2.0 * kf - 1.0) * dp[k - 1];
    }
    [p, dp, ddp]
}

/// Tensor Legendre basis of degree `pf` on [-1, 1]^2; function `(i, j)` sits at `i + (pf + 1) j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LegendreBasis {
    pub degree: usize,
}

/// Values and reference derivatives of all subscale functions at one point.
///
/// `d2[k]` holds `(d_xixi, d_xieta, d_etaeta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreEval {
    pub values: Vec<f64>,
    pub d1: Vec<[f64; 2]>,
    pub d2: Vec<[f64; 3]>,
}

impl LegendreBasis {
    pub fn new(degree: usize) -> Self {
        Self { degree }
    }

    pub fn len(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, xi: [f64; 2]) -> LegendreEval {
        let n = self.degree;
        let [px, dpx, ddpx] = legendre_1d(n, xi[0]);
        let [py, dpy, ddpy] = legendre_1d(n, xi[1]);
        let m = self.len();
        let mut values = Vec::with_capacity(m);
        let mut d1 = Vec::with_capacity(m);
        let mut d2 = Vec::with_capacity(m);
        for j in 0..=n {
            for i in 0..=n {
                values.push(px[i] * py[j]);
                d1.push([dpx[i] * py[j], px[i] * dpy[j]]);
                d2.push([ddpx[i] * py[j], dpx[i] * dpy[j], px[i] * ddpy[j]]);
            }
        }
        LegendreEval { values, d1, d2 }
    }

    /// Diagonal of the reference mass matrix, `4 / ((2i + 1)(2j + 1))`.
    pub fn reference_mass(&self) -> Vec<f64> {
        let n = self.degree;
        let mut m = Vec::with_capacity(self.len());
        for j in 0..=n {
            for i in 0..=n {
                m.push(4.0 / ((2 * i + 1) as f64 * (2 * j + 1) as f64));
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::tensor_rule;
    use approx::assert_abs_diff_eq;

    #[test]
    fn low_order_polynomials() {
        let [p, dp, ddp] = legendre_1d(3, 0.4);
        assert_abs_diff_eq!(p[2], 0.5 * (3.0 * 0.16 - 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p[3], 0.5 * (5.0 * 0.064 - 3.0 * 0.4), epsilon = 1e-15);
        assert_abs_diff_eq!(dp[2], 3.0 * 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(dp[3], 0.5 * (15.0 * 0.16 - 3.0), epsilon = 1e-15);
        assert_abs_diff_eq!(ddp[2], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ddp[3], 15.0 * 0.4, epsilon = 1e-14);
    }

    #[test]
    fn reference_mass_is_diagonal() {
        let b = LegendreBasis::new(3);
        let q = tensor_rule(5).unwrap();
        let m = b.reference_mass();
        for a in 0..b.len() {
            for c in 0..b.len() {
                let s = q.integrate(|x| {
                    let e = b.eval(x);
                    e.values[a] * e.values[c]
                });
                let expect = if a == c { m[a] } else { 0.0 };
                assert_abs_diff_eq!(s, expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn derivatives_match_differences() {
        let b = LegendreBasis::new(4);
        let x = [0.31, -0.52];
        let e = b.eval(x);
        let h = 1e-6;
        let ep = b.eval([x[0] + h, x[1]]);
        let em = b.eval([x[0] - h, x[1]]);
        for k in 0..b.len() {
            let fd = (ep.values[k] - em.values[k]) / (2.0 * h);
            assert!((fd - e.d1[k][0]).abs() < 1e-8);
            let fd2 = (ep.d1[k][1] - em.d1[k][1]) / (2.0 * h);
            assert!((fd2 - e.d2[k][1]).abs() < 1e-7);
        }
    }
}

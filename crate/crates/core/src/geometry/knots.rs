use crate::error::{Error, Result};

/// Open knot vector of a univariate B-spline space.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    /// Validates that the knots are non-decreasing, open (end knots repeated
    /// `degree + 1` times) and span at least one non-empty interval.
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::InvalidKnots(format!(
                "{} knots cannot hold an open vector of degree {degree}",
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be non-decreasing".into()));
        }
        let first = knots[0];
        let last = *knots.last().unwrap();
        if knots[..=degree].iter().any(|&k| k != first)
            || knots[knots.len() - degree - 1..].iter().any(|&k| k != last)
        {
            return Err(Error::InvalidKnots(format!(
                "end knots must be repeated {} times",
                degree + 1
            )));
        }
        if !(last > first) {
            return Err(Error::InvalidKnots("no non-empty knot span".into()));
        }
        let n_basis = knots.len() - degree - 1;
        // interior knots with multiplicity > degree would break the basis
        for i in 1..n_basis {
            if knots[i + degree] == knots[i] && knots[i] > first && knots[i] < last {
                return Err(Error::InvalidKnots(format!(
                    "interior knot {} repeated more than {degree} times",
                    knots[i]
                )));
            }
        }
        Ok(Self { degree, knots })
    }

    /// Uniform open knot vector on [0, 1] with `n_spans` equal spans.
    pub fn open_uniform(degree: usize, n_spans: usize) -> Result<Self> {
        if n_spans == 0 {
            return Err(Error::InvalidKnots("need at least one span".into()));
        }
        let mut knots = vec![0.0; degree + 1];
        for i in 1..n_spans {
            knots.push(i as f64 / n_spans as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn first(&self) -> f64 {
        self.knots[0]
    }

    pub fn last(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Indices `i` with `knots[i] < knots[i + 1]`, in increasing order.
    pub fn nonempty_spans(&self) -> Vec<usize> {
        (self.degree..self.n_basis())
            .filter(|&i| self.knots[i] < self.knots[i + 1])
            .collect()
    }

    /// Distinct knot values.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = Vec::new();
        for &k in &self.knots {
            if b.last() != Some(&k) {
                b.push(k);
            }
        }
        b
    }

    /// Span index `i` with `knots[i] <= t < knots[i + 1]`; the right end maps
    /// to the last non-empty span.
    pub fn find_span(&self, t: f64) -> usize {
        let n = self.n_basis();
        let p = self.degree;
        if t >= self.knots[n] {
            return n - 1;
        }
        if t <= self.knots[p] {
            return p;
        }
        let (mut lo, mut hi) = (p, n);
        let mut mid = (lo + hi) / 2;
        while t < self.knots[mid] || t >= self.knots[mid + 1] {
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = (lo + hi) / 2;
        }
        mid
    }

    /// Values and derivatives up to order `nd` of the `p + 1` functions that
    /// are non-zero on `span`. `out[k][j]` is the k-th derivative of
    /// function `span - p + j`.
    pub fn basis_derivatives(&self, span: usize, t: f64, nd: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; nd + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=nd.min(p) {
            for v in ders[k].iter_mut() {
                *v *= fac;
            }
            fac *= (p - k) as f64;
        }
        ders
    }

    /// Greville abscissae: averages of `p` consecutive interior knots.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.n_basis())
            .map(|i| {
                if p == 0 {
                    0.5 * (self.knots[i] + self.knots[i + 1])
                } else {
                    self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }

    /// Knot vector after inserting `t` once, together with the index of the span it landed in.
    pub(crate) fn with_knot(&self, t: f64) -> (Self, usize) {
        let k = self.find_span(t);
        let mut knots = self.knots.clone();
        knots.insert(k + 1, t);
        (Self { degree: self.degree, knots }, k)
    }

    /// Single-span (Bezier) knot vector raised by one degree.
    pub(crate) fn elevated_bezier(&self) -> Self {
        let p = self.degree + 1;
        let mut knots = vec![self.first(); p + 1];
        knots.extend(std::iter::repeat_n(self.last(), p + 1));
        Self { degree: p, knots }
    }

    pub fn is_bezier(&self) -> bool {
        self.nonempty_spans().len() == 1 && self.n_basis() == self.degree + 1
    }
}

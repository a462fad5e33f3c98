//! Compressed sparse rows and a banded LU with partial pivoting.

use crate::error::{Error, Result};

/// Square CSR matrix with a fixed, sorted sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Pattern coupling every pair of indices that share a group.
    pub fn from_groups<'a>(n: usize, groups: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for g in groups {
            for &i in g {
                rows[i].extend_from_slice(g);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        Self { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].binary_search(&j).ok().map(|k| r.start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.vals[k])
    }

    /// Adds to an entry inside the pattern; panics outside it.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.position(i, j).unwrap_or_else(|| panic!("({i}, {j}) outside pattern"));
        self.vals[k] += v;
    }

    /// Sorted `(row, col)` pairs of the pattern.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| self.row(i).0.iter().map(move |&j| (i, j)))
            .collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    /// Linear combination `a * self + b * other` over the same pattern.
    pub fn combine(&self, a: f64, other: &CsrMatrix, b: f64) -> Self {
        assert_eq!(self.cols, other.cols, "patterns differ");
        let vals = self.vals.iter().zip(&other.vals).map(|(x, y)| a * x + b * y).collect();
        Self { vals, ..self.clone() }
    }

    /// Principal submatrix on the given (sorted) indices.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            map[i] = k;
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for &i in keep {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                if map[j] != usize::MAX {
                    cols.push(map[j]);
                    vals.push(a);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n: keep.len(), row_ptr, cols, vals }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                row[j] = a;
            }
        }
        d
    }

    /// Lower and upper bandwidths of the pattern.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.n {
            for &j in self.row(i).0 {
                kl = kl.max(i.saturating_sub(j));
                ku = ku.max(j.saturating_sub(i));
            }
        }
        (kl, ku)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// LU factors of a band matrix, stored column-major with `2 kl + ku + 1` rows per column.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    fn ldab(kl: usize, ku: usize) -> usize {
        2 * kl + ku + 1
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n();
        let (kl, ku) = a.bandwidths();
        let ld = Self::ldab(kl, ku);
        let kv = kl + ku;
        let mut ab = vec![0.0; ld * n];
        for i in 0..n {
            let (c, v) = a.row(i);
            for (&j, &x) in c.iter().zip(v) {
                ab[kv + i - j + ld * j] = x;
            }
        }
        let scale = a.max_abs();
        let mut ipiv = vec![0; n];
        let at = |i: usize, j: usize| kv + i - j + ld * j;
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = ab[at(j, j)].abs();
            for i in 1..=km {
                let v = ab[at(j + i, j)].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            ipiv[j] = j + jp;
            if !(best > scale * 1e-14) {
                return Err(Error::SingularSystem { row: j, pivot: best, scale });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    ab.swap(at(j, c), at(j + jp, c));
                }
            }
            let piv = ab[at(j, j)];
            for i in 1..=km {
                ab[at(j + i, j)] /= piv;
            }
            for c in j + 1..=ju {
                let t = ab[at(j, c)];
                if t != 0.0 {
                    for i in 1..=km {
                        ab[at(j + i, c)] -= ab[at(j + i, j)] * t;
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, ab, ipiv })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let ld = Self::ldab(self.kl, self.ku);
        let kv = self.kl + self.ku;
        let at = |i: usize, j: usize| kv + i - j + ld * j;
        for j in 0..n {
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
            let km = self.kl.min(n - 1 - j);
            let bj = b[j];
            for i in 1..=km {
                b[j + i] -= self.ab[at(j + i, j)] * bj;
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.ab[at(j, j)];
            let bj = b[j];
            for i in j.saturating_sub(kv)..j {
                b[i] -= self.ab[at(i, j)] * bj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> CsrMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let groups: Vec<Vec<usize>> = (0..n)
            .map(|i| (i.saturating_sub(kl.max(ku))..(i + kl.max(ku) + 1).min(n)).collect())
            .collect();
        let mut a = CsrMatrix::from_groups(n, groups.iter().map(|g| g.as_slice()));
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                a.add(i, j, rng.random_range(-1.0..1.0));
            }
        }
        a
    }

    fn dense_solve(a: &CsrMatrix, b: &[f64]) -> Vec<f64> {
        let d = a.to_dense();
        let n = a.n();
        let m = DMatrix::from_fn(n, n, |i, j| d[i][j]);
        m.lu().solve(&DVector::from_column_slice(b)).unwrap().as_slice().to_vec()
    }

    #[test]
    fn pattern_from_groups() {
        let a = CsrMatrix::from_groups(4, [[0usize, 1].as_slice(), [1, 2, 3].as_slice()]);
        assert_eq!(a.nnz(), 4 + 9 - 1);
        assert_eq!(a.get(0, 3), 0.0);
        assert_eq!(a.bandwidths(), (2, 2));
    }

    #[test]
    fn solve_needs_pivoting() {
        let mut a = CsrMatrix::from_groups(2, [[0usize, 1].as_slice()]);
        a.add(0, 1, 1.0);
        a.add(1, 0, 1.0);
        a.add(1, 1, 1.0);
        let lu = BandedLu::factor(&a).unwrap();
        let mut b = vec![2.0, 5.0];
        lu.solve(&mut b);
        assert!((b[0] - 3.0).abs() < 1e-15 && (b[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_reports_row() {
        let a = CsrMatrix::from_groups(3, [[0usize, 1, 2].as_slice()]);
        assert!(matches!(BandedLu::factor(&a), Err(Error::SingularSystem { row: 0, .. })));
    }

    proptest! {
        #[test]
        fn banded_lu_matches_dense(n in 1usize..40, kl in 0usize..5, ku in 0usize..5, seed in 0u64..1000) {
            let a = random_banded(n, kl, ku, seed);
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            if let Ok(lu) = BandedLu::factor(&a) {
                let mut x = b.clone();
                lu.solve(&mut x);
                let r = a.mul_vec(&x);
                let expect = dense_solve(&a, &b);
                let scale = expect.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                for i in 0..n {
                    prop_assert!((r[i] - b[i]).abs() < 1e-8 * scale);
                }
            }
        }
    }

    #[test]
    fn restrict_keeps_principal_block() {
        let a = random_banded(6, 2, 1, 4);
        let r = a.restrict(&[1, 3, 4]);
        assert_eq!(r.n(), 3);
        assert_eq!(r.get(0, 0), a.get(1, 1));
        assert_eq!(r.get(2, 1), a.get(4, 3));
        assert_eq!(r.get(1, 2), a.get(3, 4));
    }
}

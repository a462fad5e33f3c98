use super::{KnotVector, Side};
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_1d;

/// Which physical length stands in for the element size `h_K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HConvention {
    /// Longer of the two physical mid-lines of the element (1/n on a uniform unit square).
    #[default]
    Axis,
    /// Diagonal of the physical bounding box.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementSize {
    pub axis: f64,
    pub diagonal: f64,
}

impl ElementSize {
    pub fn get(&self, convention: HConvention) -> f64 {
        match convention {
            HConvention::Axis => self.axis,
            HConvention::Diagonal => self.diagonal,
        }
    }
}

/// One non-empty knot-span rectangle of the patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    /// Position in the element list, `i + n_el_u * j`.
    pub id: usize,
    pub index: (usize, usize),
    /// Knot-span indices in u and v.
    pub span: (usize, usize),
    pub u: [f64; 2],
    pub v: [f64; 2],
    /// Global indices of the `(p_u + 1)(p_v + 1)` non-zero basis functions, u fastest.
    pub active: Vec<usize>,
    pub size: ElementSize,
    /// Whether each side (indexed by [`Side::index`]) lies on the domain boundary.
    pub on_boundary: [bool; 4],
}

impl Element {
    /// Parametric point for reference coordinates in [-1, 1]^2.
    pub fn parametric(&self, xi: [f64; 2]) -> (f64, f64) {
        (
            self.u[0] + 0.5 * (xi[0] + 1.0) * (self.u[1] - self.u[0]),
            self.v[0] + 0.5 * (xi[1] + 1.0) * (self.v[1] - self.v[0]),
        )
    }

    /// Reference coordinates of a parametric point.
    pub fn reference(&self, u: f64, v: f64) -> [f64; 2] {
        [
            2.0 * (u - self.u[0]) / (self.u[1] - self.u[0]) - 1.0,
            2.0 * (v - self.v[0]) / (self.v[1] - self.v[0]) - 1.0,
        ]
    }

    /// Jacobian determinant of the reference-to-parametric map.
    pub fn parametric_area_factor(&self) -> f64 {
        0.25 * (self.u[1] - self.u[0]) * (self.v[1] - self.v[0])
    }

    /// Parametric length per unit reference length along a face.
    pub fn face_length_factor(&self, side: Side) -> f64 {
        if side.is_u_face() {
            0.5 * (self.v[1] - self.v[0])
        } else {
            0.5 * (self.u[1] - self.u[0])
        }
    }

    pub fn h(&self, convention: HConvention) -> f64 {
        self.size.get(convention)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        let tu = 1e-12 * (self.u[1] - self.u[0]).max(1.0);
        let tv = 1e-12 * (self.v[1] - self.v[0]).max(1.0);
        u >= self.u[0] - tu && u <= self.u[1] + tu && v >= self.v[0] - tv && v <= self.v[1] + tv
    }
}

/// Point of the geometry map: location, Jacobian `jac[a][b] = dx_a/du_b` and its determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeomSample {
    pub x: [f64; 2],
    pub jac: [[f64; 2]; 2],
    pub det: f64,
}

/// Active basis functions of an element at one point.
///
/// `hessians[i]` holds `(d_xx, d_xy, d_yy)` in physical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
    pub hessians: Vec<[f64; 3]>,
    pub geom: GeomSample,
}

/// Basis evaluation on an element face with the outward unit normal and the
/// physical arc length per unit parametric length along the face.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSample {
    pub eval: BasisEval,
    pub normal: [f64; 2],
    pub ds: f64,
}

/// Face of an element with its boundary tag and outward normal at the face midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub side: Side,
    pub on_boundary: bool,
    pub normal: [f64; 2],
}

/// Single-patch NURBS surface. Control points are stored `i + n_u * j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsPatch2D {
    ku: KnotVector,
    kv: KnotVector,
    control: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

type Homog = [f64; 3];

fn to_homog(p: [f64; 2], w: f64) -> Homog {
    [p[0] * w, p[1] * w, w]
}

fn insert_1d(kv: &KnotVector, pts: &[Homog], t: f64) -> Vec<Homog> {
    let p = kv.degree();
    let k = kv.find_span(t);
    let u = kv.knots();
    let n = pts.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i + p <= k {
            out.push(pts[i]);
        } else if i > k {
            out.push(pts[i - 1]);
        } else {
            let a = (t - u[i]) / (u[i + p] - u[i]);
            let q = std::array::from_fn(|c| a * pts[i][c] + (1.0 - a) * pts[i - 1][c]);
            out.push(q);
        }
    }
    out
}

fn elevate_1d(pts: &[Homog]) -> Vec<Homog> {
    let p = pts.len() - 1;
    let mut out = Vec::with_capacity(p + 2);
    out.push(pts[0]);
    for i in 1..=p {
        let a = i as f64 / (p + 1) as f64;
        out.push(std::array::from_fn(|c| a * pts[i - 1][c] + (1.0 - a) * pts[i][c]));
    }
    out.push(pts[p]);
    out
}

impl NurbsPatch2D {
    pub fn new(
        ku: KnotVector,
        kv: KnotVector,
        control: Vec<[f64; 2]>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = ku.n_basis() * kv.n_basis();
        if control.len() != n || weights.len() != n {
            return Err(Error::InvalidPatch(format!(
                "control net must be {}x{}, got {} points and {} weights",
                ku.n_basis(),
                kv.n_basis(),
                control.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidPatch("weights must be positive".into()));
        }
        if control.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPatch("non-finite control point".into()));
        }
        Ok(Self { ku, kv, control, weights })
    }

    /// Identity map of [0, 1]^2 with uniform open knots and unit weights.
    pub fn unit_square(p: usize, n_el: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument("degree must be at least 1".into()));
        }
        if n_el == 0 {
            return Err(Error::InvalidArgument("need at least one element".into()));
        }
        let ku = KnotVector::open_uniform(p, n_el)?;
        let kv = ku.clone();
        let g = ku.greville();
        let mut control = Vec::with_capacity(g.len() * g.len());
        for &y in &g {
            for &x in &g {
                control.push([x, y]);
            }
        }
        let weights = vec![1.0; control.len()];
        Self::new(ku, kv, control, weights)
    }

    /// Quarter annulus `r_i <= |x| <= r_o` in the second quadrant.
    ///
    /// `u` runs along the arcs from the negative x-axis (West side, `y = 0`)
    /// to the positive y-axis (East side, `x = 0`); `v` runs from the inner
    /// arc (South) to the outer arc (North).
    pub fn quarter_annulus(r_i: f64, r_o: f64, p: usize, n_el: usize) -> Result<Self> {
        if !(r_i > 0.0 && r_o > r_i && r_o.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < r_i < r_o, got r_i = {r_i}, r_o = {r_o}"
            )));
        }
        if p < 2 {
            return Err(Error::InvalidArgument(
                "an exact circular arc needs degree at least 2".into(),
            ));
        }
        if n_el == 0 {
            return Err(Error::InvalidArgument("need at least one element".into()));
        }
        let ku = KnotVector::open_uniform(2, 1)?;
        let kv = KnotVector::open_uniform(1, 1)?;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut control = Vec::new();
        let mut weights = Vec::new();
        for r in [r_i, r_o] {
            control.extend([[-r, 0.0], [-r, r], [0.0, r]]);
            weights.extend([1.0, s, 1.0]);
        }
        let mut patch = Self::new(ku, kv, control, weights)?;
        for _ in 2..p {
            patch = patch.elevate_bezier_u()?;
        }
        for _ in 1..p {
            patch = patch.elevate_bezier_v()?;
        }
        patch.subdivide(n_el)
    }

    pub fn knots_u(&self) -> &KnotVector {
        &self.ku
    }

    pub fn knots_v(&self) -> &KnotVector {
        &self.kv
    }

    pub fn degrees(&self) -> (usize, usize) {
        (self.ku.degree(), self.kv.degree())
    }

    pub fn n_basis(&self) -> (usize, usize) {
        (self.ku.n_basis(), self.kv.n_basis())
    }

    pub fn n_dofs(&self) -> usize {
        self.ku.n_basis() * self.kv.n_basis()
    }

    pub fn control_points(&self) -> &[[f64; 2]] {
        &self.control
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_elements(&self) -> (usize, usize) {
        (self.ku.nonempty_spans().len(), self.kv.nonempty_spans().len())
    }

    fn homogeneous(&self) -> Vec<Homog> {
        self.control.iter().zip(&self.weights).map(|(&p, &w)| to_homog(p, w)).collect()
    }

    fn from_homogeneous(ku: KnotVector, kv: KnotVector, pw: Vec<Homog>) -> Result<Self> {
        let weights: Vec<f64> = pw.iter().map(|q| q[2]).collect();
        let control = pw.iter().map(|q| [q[0] / q[2], q[1] / q[2]]).collect();
        Self::new(ku, kv, control, weights)
    }

    /// Inserts each knot once in the u direction.
    pub fn insert_knots_u(&self, ts: &[f64]) -> Result<Self> {
        let mut patch = self.clone();
        for &t in ts {
            patch = patch.insert_one(t, true)?;
        }
        Ok(patch)
    }

    /// Inserts each knot once in the v direction.
    pub fn insert_knots_v(&self, ts: &[f64]) -> Result<Self> {
        let mut patch = self.clone();
        for &t in ts {
            patch = patch.insert_one(t, false)?;
        }
        Ok(patch)
    }

    fn insert_one(&self, t: f64, along_u: bool) -> Result<Self> {
        let kvec = if along_u { &self.ku } else { &self.kv };
        if !(t > kvec.first() && t < kvec.last()) {
            return Err(Error::InvalidArgument(format!("knot {t} outside the open interval")));
        }
        let (nu, nv) = self.n_basis();
        let pw = self.homogeneous();
        let (new_kv, _) = kvec.with_knot(t);
        if along_u {
            let mut out = vec![[0.0; 3]; (nu + 1) * nv];
            for j in 0..nv {
                let row: Vec<Homog> = (0..nu).map(|i| pw[i + nu * j]).collect();
                for (i, q) in insert_1d(kvec, &row, t).into_iter().enumerate() {
                    out[i + (nu + 1) * j] = q;
                }
            }
            Self::from_homogeneous(new_kv, self.kv.clone(), out)
        } else {
            let mut out = vec![[0.0; 3]; nu * (nv + 1)];
            for i in 0..nu {
                let col: Vec<Homog> = (0..nv).map(|j| pw[i + nu * j]).collect();
                for (j, q) in insert_1d(kvec, &col, t).into_iter().enumerate() {
                    out[i + nu * j] = q;
                }
            }
            Self::from_homogeneous(self.ku.clone(), new_kv, out)
        }
    }

    /// Raises the u degree by one; only defined for a single Bezier span in u.
    pub fn elevate_bezier_u(&self) -> Result<Self> {
        if !self.ku.is_bezier() {
            return Err(Error::InvalidPatch("degree elevation needs a single span".into()));
        }
        let (nu, nv) = self.n_basis();
        let pw = self.homogeneous();
        let mut out = vec![[0.0; 3]; (nu + 1) * nv];
        for j in 0..nv {
            let row: Vec<Homog> = (0..nu).map(|i| pw[i + nu * j]).collect();
            for (i, q) in elevate_1d(&row).into_iter().enumerate() {
                out[i + (nu + 1) * j] = q;
            }
        }
        Self::from_homogeneous(self.ku.elevated_bezier(), self.kv.clone(), out)
    }

    /// Raises the v degree by one; only defined for a single Bezier span in v.
    pub fn elevate_bezier_v(&self) -> Result<Self> {
        if !self.kv.is_bezier() {
            return Err(Error::InvalidPatch("degree elevation needs a single span".into()));
        }
        let (nu, nv) = self.n_basis();
        let pw = self.homogeneous();
        let mut out = vec![[0.0; 3]; nu * (nv + 1)];
        for i in 0..nu {
            let col: Vec<Homog> = (0..nv).map(|j| pw[i + nu * j]).collect();
            for (j, q) in elevate_1d(&col).into_iter().enumerate() {
                out[i + nu * j] = q;
            }
        }
        Self::from_homogeneous(self.ku.clone(), self.kv.elevated_bezier(), out)
    }

    /// Splits every non-empty span into `n` equal spans in both directions.
    pub fn subdivide(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("subdivision count must be positive".into()));
        }
        let new_knots = |kv: &KnotVector| -> Vec<f64> {
            let b = kv.breakpoints();
            let mut ts = Vec::new();
            for w in b.windows(2) {
                for k in 1..n {
                    ts.push(w[0] + (w[1] - w[0]) * k as f64 / n as f64);
                }
            }
            ts
        };
        let tu = new_knots(&self.ku);
        let tv = new_knots(&self.kv);
        self.insert_knots_u(&tu)?.insert_knots_v(&tv)
    }

    /// Parametric derivatives of the local rational basis on span `(su, sv)`:
    /// `[R, R_u, R_v, R_uu, R_uv, R_vv]` per function, u fastest.
    fn rational_derivatives(&self, su: usize, sv: usize, u: f64, v: f64) -> Vec<[f64; 6]> {
        let (pu, pv) = self.degrees();
        let nu = self.ku.n_basis();
        let du = self.ku.basis_derivatives(su, u, 2);
        let dv = self.kv.basis_derivatives(sv, v, 2);
        let d = |ders: &Vec<Vec<f64>>, k: usize, j: usize| ders.get(k).map_or(0.0, |r| r[j]);
        let nloc = (pu + 1) * (pv + 1);
        let mut out = Vec::with_capacity(nloc);
        let mut wsum = [0.0; 6];
        for b in 0..=pv {
            for a in 0..=pu {
                let gi = (su - pu + a) + nu * (sv - pv + b);
                let w = self.weights[gi];
                let nb = [
                    d(&du, 0, a) * d(&dv, 0, b),
                    d(&du, 1, a) * d(&dv, 0, b),
                    d(&du, 0, a) * d(&dv, 1, b),
                    d(&du, 2, a) * d(&dv, 0, b),
                    d(&du, 1, a) * d(&dv, 1, b),
                    d(&du, 0, a) * d(&dv, 2, b),
                ];
                let wn: [f64; 6] = std::array::from_fn(|k| w * nb[k]);
                for k in 0..6 {
                    wsum[k] += wn[k];
                }
                out.push(wn);
            }
        }
        let [w, wu, wv, wuu, wuv, wvv] = wsum;
        for r in out.iter_mut() {
            let [n, nu_, nv_, nuu, nuv, nvv] = *r;
            let rr = n / w;
            let ru = (nu_ - rr * wu) / w;
            let rv = (nv_ - rr * wv) / w;
            let ruu = (nuu - 2.0 * ru * wu - rr * wuu) / w;
            let ruv = (nuv - ru * wv - rv * wu - rr * wuv) / w;
            let rvv = (nvv - 2.0 * rv * wv - rr * wvv) / w;
            *r = [rr, ru, rv, ruu, ruv, rvv];
        }
        out
    }

    fn active_indices(&self, su: usize, sv: usize) -> Vec<usize> {
        let (pu, pv) = self.degrees();
        let nu = self.ku.n_basis();
        let mut idx = Vec::with_capacity((pu + 1) * (pv + 1));
        for b in 0..=pv {
            for a in 0..=pu {
                idx.push((su - pu + a) + nu * (sv - pv + b));
            }
        }
        idx
    }

    /// All elements, ordered `i + n_el_u * j`.
    pub fn elements(&self) -> Vec<Element> {
        let su = self.ku.nonempty_spans();
        let sv = self.kv.nonempty_spans();
        let (neu, nev) = (su.len(), sv.len());
        let ku = self.ku.knots();
        let kv = self.kv.knots();
        let mut out = Vec::with_capacity(neu * nev);
        for (j, &s_v) in sv.iter().enumerate() {
            for (i, &s_u) in su.iter().enumerate() {
                let mut e = Element {
                    id: i + neu * j,
                    index: (i, j),
                    span: (s_u, s_v),
                    u: [ku[s_u], ku[s_u + 1]],
                    v: [kv[s_v], kv[s_v + 1]],
                    active: self.active_indices(s_u, s_v),
                    size: ElementSize { axis: 0.0, diagonal: 0.0 },
                    on_boundary: [i == 0, i + 1 == neu, j == 0, j + 1 == nev],
                };
                e.size = self.element_size(&e);
                out.push(e);
            }
        }
        out
    }

    /// Both size measures of an element.
    pub fn element_size(&self, elem: &Element) -> ElementSize {
        let g = gauss_legendre_1d(10).expect("valid rule");
        let um = 0.5 * (elem.u[0] + elem.u[1]);
        let vm = 0.5 * (elem.v[0] + elem.v[1]);
        let mut len_u = 0.0;
        let mut len_v = 0.0;
        for (&t, &w) in g.points.iter().zip(&g.weights) {
            let (u, v) = elem.parametric([t, t]);
            let ju = self.jacobian_at(elem.span, u, vm);
            let jv = self.jacobian_at(elem.span, um, v);
            len_u += w * 0.5 * (elem.u[1] - elem.u[0]) * ju[0][0].hypot(ju[1][0]);
            len_v += w * 0.5 * (elem.v[1] - elem.v[0]) * jv[0][1].hypot(jv[1][1]);
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let n = 32;
        for side in Side::ALL {
            for k in 0..=n {
                let t = -1.0 + 2.0 * k as f64 / n as f64;
                let (u, v) = elem.parametric(side.reference_point(t));
                let x = self.map_in_span(elem.span, u, v);
                for c in 0..2 {
                    lo[c] = lo[c].min(x[c]);
                    hi[c] = hi[c].max(x[c]);
                }
            }
        }
        ElementSize {
            axis: len_u.max(len_v),
            diagonal: (hi[0] - lo[0]).hypot(hi[1] - lo[1]),
        }
    }

    fn map_in_span(&self, span: (usize, usize), u: f64, v: f64) -> [f64; 2] {
        let r = self.rational_derivatives(span.0, span.1, u, v);
        let idx = self.active_indices(span.0, span.1);
        let mut x = [0.0; 2];
        for (rk, &gi) in r.iter().zip(&idx) {
            x[0] += rk[0] * self.control[gi][0];
            x[1] += rk[0] * self.control[gi][1];
        }
        x
    }

    fn jacobian_at(&self, span: (usize, usize), u: f64, v: f64) -> [[f64; 2]; 2] {
        let r = self.rational_derivatives(span.0, span.1, u, v);
        let idx = self.active_indices(span.0, span.1);
        let mut j = [[0.0; 2]; 2];
        for (rk, &gi) in r.iter().zip(&idx) {
            for a in 0..2 {
                j[a][0] += rk[1] * self.control[gi][a];
                j[a][1] += rk[2] * self.control[gi][a];
            }
        }
        j
    }

    fn span_of(&self, u: f64, v: f64) -> (usize, usize) {
        (self.ku.find_span(u), self.kv.find_span(v))
    }

    /// Physical image of a parametric point.
    pub fn map(&self, u: f64, v: f64) -> [f64; 2] {
        self.map_in_span(self.span_of(u, v), u, v)
    }

    /// Jacobian `dx_a/du_b` of the geometry map.
    pub fn jacobian(&self, u: f64, v: f64) -> [[f64; 2]; 2] {
        self.jacobian_at(self.span_of(u, v), u, v)
    }

    /// Values, physical gradients and physical Hessians of the element's active functions.
    pub fn eval_basis(&self, elem: &Element, u: f64, v: f64) -> Result<BasisEval> {
        if !elem.contains(u, v) {
            return Err(Error::OutsideElement { u, v, element: elem.index });
        }
        let u = u.clamp(elem.u[0], elem.u[1]);
        let v = v.clamp(elem.v[0], elem.v[1]);
        let r = self.rational_derivatives(elem.span.0, elem.span.1, u, v);
        let mut x = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        // Hessian of each coordinate w.r.t. (u, v): (uu, uv, vv)
        let mut hx = [[0.0; 3]; 2];
        for (rk, &gi) in r.iter().zip(&elem.active) {
            let c = self.control[gi];
            for a in 0..2 {
                x[a] += rk[0] * c[a];
                jac[a][0] += rk[1] * c[a];
                jac[a][1] += rk[2] * c[a];
                hx[a][0] += rk[3] * c[a];
                hx[a][1] += rk[4] * c[a];
                hx[a][2] += rk[5] * c[a];
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::SingularJacobian { u, v, det });
        }
        // g[b][a] = du_b/dx_a
        let g = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        let n = r.len();
        let mut values = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        let mut hessians = Vec::with_capacity(n);
        for rk in &r {
            let gx = [
                rk[1] * g[0][0] + rk[2] * g[1][0],
                rk[1] * g[0][1] + rk[2] * g[1][1],
            ];
            let ht = [
                [
                    rk[3] - gx[0] * hx[0][0] - gx[1] * hx[1][0],
                    rk[4] - gx[0] * hx[0][1] - gx[1] * hx[1][1],
                ],
                [
                    rk[4] - gx[0] * hx[0][1] - gx[1] * hx[1][1],
                    rk[5] - gx[0] * hx[0][2] - gx[1] * hx[1][2],
                ],
            ];
            let hess = |a: usize, c: usize| -> f64 {
                let mut s = 0.0;
                for b in 0..2 {
                    for d in 0..2 {
                        s += g[b][a] * ht[b][d] * g[d][c];
                    }
                }
                s
            };
            values.push(rk[0]);
            grads.push(gx);
            hessians.push([hess(0, 0), hess(0, 1), hess(1, 1)]);
        }
        Ok(BasisEval { values, grads, hessians, geom: GeomSample { x, jac, det } })
    }

    /// Basis evaluation at reference point `xi` of the element.
    pub fn eval_reference(&self, elem: &Element, xi: [f64; 2]) -> Result<BasisEval> {
        let (u, v) = elem.parametric(xi);
        self.eval_basis(elem, u, v)
    }

    /// Evaluation on an element face at edge parameter `t` in [-1, 1].
    pub fn eval_edge(&self, elem: &Element, side: Side, t: f64) -> Result<EdgeSample> {
        let eval = self.eval_reference(elem, side.reference_point(t))?;
        let j = eval.geom.jac;
        // counterclockwise tangent per unit parametric length
        let tangent = match side {
            Side::South => [j[0][0], j[1][0]],
            Side::East => [j[0][1], j[1][1]],
            Side::North => [-j[0][0], -j[1][0]],
            Side::West => [-j[0][1], -j[1][1]],
        };
        let ds = tangent[0].hypot(tangent[1]);
        let normal = [tangent[1] / ds, -tangent[0] / ds];
        Ok(EdgeSample { eval, normal, ds })
    }

    /// The four faces of an element, tagged against the patch boundary.
    pub fn boundary_faces(&self, elem: &Element) -> Result<[Face; 4]> {
        let mut faces = [Face { side: Side::West, on_boundary: false, normal: [0.0; 2] }; 4];
        for side in Side::ALL {
            let s = self.eval_edge(elem, side, 0.0)?;
            faces[side.index()] =
                Face { side, on_boundary: elem.on_boundary[side.index()], normal: s.normal };
        }
        Ok(faces)
    }

    /// Global indices of the basis functions that do not vanish on a patch side.
    pub fn side_dofs(&self, side: Side) -> Vec<usize> {
        let (nu, nv) = self.n_basis();
        match side {
            Side::West => (0..nv).map(|j| nu * j).collect(),
            Side::East => (0..nv).map(|j| nu - 1 + nu * j).collect(),
            Side::South => (0..nu).collect(),
            Side::North => (0..nu).map(|i| i + nu * (nv - 1)).collect(),
        }
    }

    /// Parametric coordinates of a physical point, found by Newton iteration.
    pub fn invert(&self, x: [f64; 2]) -> Option<(f64, f64)> {
        let (u0, u1) = (self.ku.first(), self.ku.last());
        let (v0, v1) = (self.kv.first(), self.kv.last());
        let scale = self
            .control
            .iter()
            .fold(0.0f64, |m, c| m.max(c[0].abs()).max(c[1].abs()))
            .max(1.0);
        let m = 6;
        let mut best: Option<((f64, f64), f64)> = None;
        for gj in 0..m {
            for gi in 0..m {
                let mut u = u0 + (u1 - u0) * (gi as f64 + 0.5) / m as f64;
                let mut v = v0 + (v1 - v0) * (gj as f64 + 0.5) / m as f64;
                for _ in 0..50 {
                    let y = self.map(u, v);
                    let r = [x[0] - y[0], x[1] - y[1]];
                    let j = self.jacobian(u, v);
                    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                    if det.abs() < 1e-300 {
                        break;
                    }
                    let du = (j[1][1] * r[0] - j[0][1] * r[1]) / det;
                    let dv = (-j[1][0] * r[0] + j[0][0] * r[1]) / det;
                    u = (u + du).clamp(u0, u1);
                    v = (v + dv).clamp(v0, v1);
                    if du.abs() + dv.abs() < 1e-15 {
                        break;
                    }
                }
                let y = self.map(u, v);
                let err = (x[0] - y[0]).hypot(x[1] - y[1]);
                if best.is_none_or(|(_, e)| err < e) {
                    best = Some(((u, v), err));
                }
                if err < 1e-13 * scale {
                    return Some((u, v));
                }
            }
        }
        best.filter(|&(_, e)| e < 1e-10 * scale).map(|(p, _)| p)
    }

    /// Element containing a parametric point; points on shared edges go to the upper element.
    pub fn locate<'a>(&self, elements: &'a [Element], u: f64, v: f64) -> Option<&'a Element> {
        let (neu, _) = self.n_elements();
        let (su, sv) = self.span_of(u, v);
        let spans_u = self.ku.nonempty_spans();
        let spans_v = self.kv.nonempty_spans();
        let i = spans_u.iter().position(|&s| s == su)?;
        let j = spans_v.iter().position(|&s| s == sv)?;
        elements.get(i + neu * j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_square_one_element() {
        let p = NurbsPatch2D::unit_square(1, 1).unwrap();
        assert_eq!(p.n_basis(), (2, 2));
        assert_eq!(p.knots_u().knots(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(p.control_points(), &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let e = &p.elements()[0];
        assert_abs_diff_eq!(e.size.diagonal, 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(e.size.axis, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn unit_square_rejects_bad_input() {
        assert!(NurbsPatch2D::unit_square(0, 4).is_err());
        assert!(NurbsPatch2D::unit_square(2, 0).is_err());
    }

    #[test]
    fn linear_midpoints_are_exact() {
        let p = NurbsPatch2D::unit_square(1, 2).unwrap();
        assert_eq!(p.control_points()[4], [0.5, 0.5]);
        assert_eq!(p.control_points()[1], [0.5, 0.0]);
    }

    #[test]
    fn quadratic_sixty_four_net() {
        let p = NurbsPatch2D::unit_square(2, 64).unwrap();
        assert_eq!(p.n_basis(), (66, 66));
        let els = p.elements();
        assert_eq!(els.len(), 64 * 64);
        assert_abs_diff_eq!(els[100].size.axis, 1.0 / 64.0, epsilon = 1e-14);
        assert_abs_diff_eq!(els[100].size.diagonal, 2f64.sqrt() / 64.0, epsilon = 1e-14);
    }

    #[test]
    fn bernstein_midpoint_factors() {
        let p = NurbsPatch2D::unit_square(2, 1).unwrap();
        let e = &p.elements()[0];
        let b = p.eval_basis(e, 0.5, 0.5).unwrap();
        let f = [0.25, 0.5, 0.25];
        for j in 0..3 {
            for i in 0..3 {
                assert_abs_diff_eq!(b.values[i + 3 * j], f[i] * f[j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn identity_geometry_reproduces_coordinates() {
        let p = NurbsPatch2D::unit_square(3, 3).unwrap();
        for e in p.elements() {
            let b = p.eval_reference(&e, [0.3, -0.6]).unwrap();
            let mut x = [0.0; 2];
            for (k, &gi) in e.active.iter().enumerate() {
                x[0] += b.values[k] * p.control_points()[gi][0];
                x[1] += b.values[k] * p.control_points()[gi][1];
            }
            assert_abs_diff_eq!(x[0], b.geom.x[0], epsilon = 1e-14);
            assert_abs_diff_eq!(x[1], b.geom.x[1], epsilon = 1e-14);
            let (u, v) = e.parametric([0.3, -0.6]);
            assert_abs_diff_eq!(x[0], u, epsilon = 1e-14);
            assert_abs_diff_eq!(x[1], v, epsilon = 1e-14);
            assert_abs_diff_eq!(b.geom.det, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn annulus_arc_weight_and_corners() {
        let p = NurbsPatch2D::quarter_annulus(1.0, 2.0, 2, 1).unwrap();
        assert_abs_diff_eq!(p.weights()[1], 2f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_eq!(p.control_points()[0], [-1.0, 0.0]);
        assert_eq!(p.control_points()[2], [0.0, 1.0]);
        let x = p.map(0.5, 0.0);
        assert_abs_diff_eq!(x[0].hypot(x[1]), 1.0, epsilon = 1e-15);
        let x = p.map(0.5, 1.0);
        assert_abs_diff_eq!(x[0].hypot(x[1]), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn annulus_rejects_bad_input() {
        assert!(NurbsPatch2D::quarter_annulus(2.0, 1.0, 2, 4).is_err());
        assert!(NurbsPatch2D::quarter_annulus(1.0, 1.0, 2, 4).is_err());
        assert!(NurbsPatch2D::quarter_annulus(1.0, 2.0, 1, 4).is_err());
    }

    #[test]
    fn annulus_boundaries_stay_on_circles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (p, n) in [(2, 1), (2, 64), (3, 5), (4, 3)] {
            let patch = NurbsPatch2D::quarter_annulus(1.0, 2.0, p, n).unwrap();
            assert_eq!(patch.n_elements(), (n, n));
            for _ in 0..100 {
                let t: f64 = rng.random();
                let a = patch.map(t, 0.0);
                let b = patch.map(t, 1.0);
                assert!((a[0].hypot(a[1]) - 1.0).abs() < 1e-12);
                assert!((b[0].hypot(b[1]) - 2.0).abs() < 1e-12);
                let c = patch.map(t, rng.random());
                let r = c[0].hypot(c[1]);
                assert!((1.0 - 1e-12..=2.0 + 1e-12).contains(&r));
                assert!(c[0] <= 1e-14 && c[1] >= -1e-14);
            }
        }
    }

    #[test]
    fn annulus_sizes_grow_with_radius() {
        let patch = NurbsPatch2D::quarter_annulus(1.0, 2.0, 2, 8).unwrap();
        let els = patch.elements();
        let inner = &els[3];
        let outer = &els[3 + 8 * 7];
        assert!(outer.size.diagonal > inner.size.diagonal);
        assert!(outer.size.axis > inner.size.axis);
        for j in 1..8 {
            assert!(els[3 + 8 * j].size.diagonal > els[3 + 8 * (j - 1)].size.diagonal);
        }
    }

    #[test]
    fn annulus_jacobian_positive() {
        let patch = NurbsPatch2D::quarter_annulus(1.0, 2.0, 3, 4).unwrap();
        for e in patch.elements() {
            for xi in [[-1.0, -1.0], [0.2, 0.9], [1.0, 1.0]] {
                assert!(patch.eval_reference(&e, xi).unwrap().geom.det > 0.0);
            }
        }
    }

    #[test]
    fn refinement_preserves_geometry() {
        let coarse = NurbsPatch2D::quarter_annulus(1.0, 2.0, 3, 2).unwrap();
        let fine = coarse.subdivide(3).unwrap().insert_knots_u(&[0.123]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
            let a = coarse.map(u, v);
            let b = fine.map(u, v);
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_of_unity_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let patches = [
            NurbsPatch2D::unit_square(2, 5).unwrap(),
            NurbsPatch2D::quarter_annulus(1.0, 2.0, 3, 4).unwrap(),
        ];
        for patch in &patches {
            let els = patch.elements();
            for _ in 0..500 {
                let e = &els[rng.random_range(0..els.len())];
                let b = patch
                    .eval_reference(e, [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                    .unwrap();
                let s: f64 = b.values.iter().sum();
                let gx: f64 = b.grads.iter().map(|g| g[0]).sum();
                let gy: f64 = b.grads.iter().map(|g| g[1]).sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(gx.abs() < 1e-12 && gy.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hessians_match_gradient_differences() {
        let patch = NurbsPatch2D::quarter_annulus(1.0, 2.0, 3, 3).unwrap();
        let els = patch.elements();
        let e = &els[4];
        let (u, v) = e.parametric([0.1, -0.3]);
        let b = patch.eval_basis(e, u, v).unwrap();
        let inv = |x: [f64; 2]| patch.invert(x).unwrap();
        let h = 1e-5;
        for dir in 0..2 {
            let mut xp = b.geom.x;
            let mut xm = b.geom.x;
            xp[dir] += h;
            xm[dir] -= h;
            let (up, vp) = inv(xp);
            let (um, vm) = inv(xm);
            let bp = patch.eval_basis(e, up, vp).unwrap();
            let bm = patch.eval_basis(e, um, vm).unwrap();
            for k in 0..b.values.len() {
                for comp in 0..2 {
                    let fd = (bp.grads[k][comp] - bm.grads[k][comp]) / (2.0 * h);
                    let exact = match (dir, comp) {
                        (0, 0) => b.hessians[k][0],
                        (1, 1) => b.hessians[k][2],
                        _ => b.hessians[k][1],
                    };
                    let scale = exact.abs().max(1.0);
                    assert!((fd - exact).abs() / scale < 1e-6, "{fd} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn outside_point_is_rejected() {
        let patch = NurbsPatch2D::unit_square(2, 2).unwrap();
        let e = &patch.elements()[0];
        assert!(matches!(patch.eval_basis(e, 0.75, 0.25), Err(Error::OutsideElement { .. })));
    }

    #[test]
    fn face_tags_and_normals() {
        let patch = NurbsPatch2D::unit_square(1, 2).unwrap();
        let faces = patch.boundary_faces(&patch.elements()[0]).unwrap();
        assert_eq!(faces.iter().filter(|f| f.on_boundary).count(), 2);
        let patch = NurbsPatch2D::unit_square(1, 4).unwrap();
        let els = patch.elements();
        let faces = patch.boundary_faces(&els[5]).unwrap();
        assert_eq!(faces.iter().filter(|f| f.on_boundary).count(), 0);
        for (a, b) in [(0, 1), (2, 3)] {
            assert_abs_diff_eq!(faces[a].normal[0] + faces[b].normal[0], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(faces[a].normal[1] + faces[b].normal[1], 0.0, epsilon = 1e-15);
        }
        for f in faces {
            assert_eq!(f.normal, f.side.reference_normal());
        }
    }

    #[test]
    fn annulus_normals_point_outward() {
        let patch = NurbsPatch2D::quarter_annulus(1.0, 2.0, 2, 2).unwrap();
        let e = &patch.elements()[0];
        let inner = patch.eval_edge(e, Side::South, 0.3).unwrap();
        let x = inner.eval.geom.x;
        let r = x[0].hypot(x[1]);
        // inner arc: outward normal points toward the origin
        assert_abs_diff_eq!(inner.normal[0], -x[0] / r, epsilon = 1e-13);
        assert_abs_diff_eq!(inner.normal[1], -x[1] / r, epsilon = 1e-13);
        let w = patch.eval_edge(e, Side::West, 0.0).unwrap();
        assert_abs_diff_eq!(w.normal[1], -1.0, epsilon = 1e-13);
    }

    #[test]
    fn inversion_round_trip() {
        let patch = NurbsPatch2D::quarter_annulus(1.0, 2.0, 2, 4).unwrap();
        let x = patch.map(0.37, 0.81);
        let (u, v) = patch.invert(x).unwrap();
        assert_abs_diff_eq!(u, 0.37, epsilon = 1e-10);
        assert_abs_diff_eq!(v, 0.81, epsilon = 1e-10);
        assert!(patch.invert([3.0, 3.0]).is_none());
    }
}

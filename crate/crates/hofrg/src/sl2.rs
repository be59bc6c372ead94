//! 2×2 real matrices and Chebyshev series of matrix-valued functions.

use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default determinant tolerance for SL(2)-tagged values.
pub const DET_TOL: f64 = 1e-8;
/// Number of Chebyshev points used for sup-norm checks.
pub const EVAL_GRID: usize = 65;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Mat2 {
    pub const I: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);
    pub const S: Mat2 = Mat2::new(0.0, 1.0, 1.0, 0.0);
    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat2 { a11, a12, a21, a22 }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Mat2::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.a11, self.a12, self.a21, self.a22]
    }

    pub fn det(self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn trace(self) -> f64 {
        self.a11 + self.a22
    }

    pub fn transpose(self) -> Self {
        Mat2::new(self.a11, self.a21, self.a12, self.a22)
    }

    pub fn scale(self, s: f64) -> Self {
        Mat2::new(s * self.a11, s * self.a12, s * self.a21, s * self.a22)
    }

    /// Adjugate; the inverse when det = 1.
    pub fn adjugate(self) -> Self {
        Mat2::new(self.a22, -self.a12, -self.a21, self.a11)
    }

    /// General inverse; `None` for a singular matrix.
    pub fn inverse(self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(self.adjugate().scale(1.0 / d))
    }

    pub fn apply(self, v: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a21 * v[0] + self.a22 * v[1],
        ]
    }

    pub fn max_abs(self) -> f64 {
        self.a11
            .abs()
            .max(self.a12.abs())
            .max(self.a21.abs())
            .max(self.a22.abs())
    }

    /// Spectral (operator 2-) norm.
    pub fn norm(self) -> f64 {
        let f2 = self.a11 * self.a11 + self.a12 * self.a12 + self.a21 * self.a21 + self.a22 * self.a22;
        let d = self.det();
        let disc = (f2 * f2 - 4.0 * d * d).max(0.0);
        (0.5 * (f2 + disc.sqrt())).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a21.is_finite() && self.a22.is_finite()
    }

    pub fn det_defect(self) -> f64 {
        (self.det() - 1.0).abs()
    }

    /// Whether the matrix passes the SL(2) tag check at tolerance `tol`.
    pub fn is_sl2(self, tol: f64) -> bool {
        self.det_defect() <= tol * 1f64.max(self.norm().powi(2))
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, r: Mat2) -> Mat2 {
        mat_mul(self, r)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, r: Mat2) -> Mat2 {
        Mat2::new(self.a11 + r.a11, self.a12 + r.a12, self.a21 + r.a21, self.a22 + r.a22)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, r: Mat2) -> Mat2 {
        Mat2::new(self.a11 - r.a11, self.a12 - r.a12, self.a21 - r.a21, self.a22 - r.a22)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale(-1.0)
    }
}

pub fn mat_mul(l: Mat2, r: Mat2) -> Mat2 {
    Mat2::new(
        l.a11 * r.a11 + l.a12 * r.a21,
        l.a11 * r.a12 + l.a12 * r.a22,
        l.a21 * r.a11 + l.a22 * r.a21,
        l.a21 * r.a12 + l.a22 * r.a22,
    )
}

/// Inverse of an SL(2) matrix by the adjugate.
pub fn inv_sl2(m: Mat2) -> Result<Mat2> {
    inv_sl2_tol(m, DET_TOL)
}

pub fn inv_sl2_tol(m: Mat2, tol: f64) -> Result<Mat2> {
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    if !m.is_sl2(tol) {
        return Err(Error::Determinant { defect: m.det_defect() });
    }
    Ok(m.adjugate())
}

/// e^{σS} = [[cosh σ, sinh σ], [sinh σ, cosh σ]].
pub fn exp_sigma_s(sigma: f64) -> Mat2 {
    let (c, s) = (sigma.cosh(), sigma.sinh());
    Mat2::new(c, s, s, c)
}

/// Components of a matrix in the eigenbasis e± = (1, ±1)/√2 of S.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SSplit {
    pub c_pp: f64,
    pub c_pm: f64,
    pub c_mp: f64,
    pub c_mm: f64,
}

pub fn s_split(m: Mat2) -> SSplit {
    SSplit {
        c_pp: 0.5 * (m.a11 + m.a12 + m.a21 + m.a22),
        c_pm: 0.5 * (m.a11 - m.a12 + m.a21 - m.a22),
        c_mp: 0.5 * (m.a11 + m.a12 - m.a21 - m.a22),
        c_mm: 0.5 * (m.a11 - m.a12 - m.a21 + m.a22),
    }
}

/// Cached Chebyshev nodes and cosine table for degree n.
#[derive(Debug)]
pub struct ChebBasis {
    pub n: usize,
    /// Nodes t_k = cos(π(k+½)/(n+1)) on [-1, 1].
    pub nodes: Vec<f64>,
    /// cos(jπ(k+½)/(n+1)), row-major in j.
    table: Vec<f64>,
}

impl ChebBasis {
    fn build(n: usize) -> Self {
        let m = n + 1;
        let nodes = (0..m)
            .map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / m as f64).cos())
            .collect();
        let mut table = vec![0.0; m * m];
        for j in 0..m {
            for k in 0..m {
                table[j * m + k] =
                    (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / m as f64).cos();
            }
        }
        ChebBasis { n, nodes, table }
    }

    pub fn get(n: usize) -> Arc<ChebBasis> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ChebBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(ChebBasis::build(n)))
            .clone()
    }

    /// Coefficients of the interpolant through values at the nodes.
    pub fn fit(&self, values: &[f64]) -> Vec<f64> {
        let m = self.n + 1;
        debug_assert_eq!(values.len(), m);
        let mut c = vec![0.0; m];
        for (j, cj) in c.iter_mut().enumerate() {
            let row = &self.table[j * m..(j + 1) * m];
            let s: f64 = row.iter().zip(values).map(|(a, b)| a * b).sum();
            *cj = 2.0 * s / m as f64;
        }
        c[0] *= 0.5;
        c
    }
}

/// Chebyshev nodes scaled to [-r, r].
pub fn cheb_nodes(n: usize, r: f64) -> Vec<f64> {
    ChebBasis::get(n).nodes.iter().map(|t| r * t).collect()
}

fn in_domain(x: f64, r: f64) -> bool {
    x.abs() <= r * (1.0 + 1e-12)
}

/// Truncated Chebyshev series on [-r, r].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarSeries {
    pub coeffs: Vec<f64>,
    pub r: f64,
}

impl ScalarSeries {
    pub fn new(coeffs: Vec<f64>, r: f64) -> Self {
        assert!(!coeffs.is_empty(), "series needs at least one coefficient");
        ScalarSeries { coeffs, r }
    }

    pub fn constant(c: f64, n: usize, r: f64) -> Self {
        let mut coeffs = vec![0.0; n + 1];
        coeffs[0] = c;
        ScalarSeries { coeffs, r }
    }

    /// The identity function x on [-r, r].
    pub fn identity(n: usize, r: f64) -> Self {
        let mut coeffs = vec![0.0; n + 1];
        if n >= 1 {
            coeffs[1] = r;
        }
        ScalarSeries { coeffs, r }
    }

    pub fn from_fn(f: impl Fn(f64) -> f64, n: usize, r: f64) -> Self {
        let basis = ChebBasis::get(n);
        let vals: Vec<f64> = basis.nodes.iter().map(|t| f(r * t)).collect();
        ScalarSeries { coeffs: basis.fit(&vals), r }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !in_domain(x, self.r) {
            return Err(Error::Domain { x, r: self.r });
        }
        Ok(self.eval_unchecked(x))
    }

    /// Clenshaw evaluation without the domain check.
    pub fn eval_unchecked(&self, x: f64) -> f64 {
        let t = x / self.r;
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = c + 2.0 * t * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        self.coeffs[0] + t * b1 - b2
    }

    /// Σ_{j>k} |c_j|.
    pub fn tail(&self, k: usize) -> f64 {
        self.coeffs.iter().skip(k + 1).map(|c| c.abs()).sum()
    }

    pub fn l1(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }

    /// Set when the last ten coefficients carry a relative weight above 1e-6.
    pub fn truncation_warning(&self) -> bool {
        let n = self.degree();
        let l1 = self.l1();
        n >= 10 && l1 > 0.0 && self.tail(n - 10) / l1 > 1e-6
    }

    fn check(&self, o: &ScalarSeries) -> Result<()> {
        if self.coeffs.len() != o.coeffs.len() || self.r != o.r {
            return Err(Error::Mismatch {
                n1: self.degree(),
                n2: o.degree(),
                r1: self.r,
                r2: o.r,
            });
        }
        Ok(())
    }

    pub fn add(&self, o: &ScalarSeries) -> Result<ScalarSeries> {
        self.check(o)?;
        let coeffs = self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a + b).collect();
        Ok(ScalarSeries { coeffs, r: self.r })
    }

    pub fn sub(&self, o: &ScalarSeries) -> Result<ScalarSeries> {
        self.check(o)?;
        let coeffs = self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a - b).collect();
        Ok(ScalarSeries { coeffs, r: self.r })
    }

    pub fn scale(&self, s: f64) -> ScalarSeries {
        ScalarSeries {
            coeffs: self.coeffs.iter().map(|c| s * c).collect(),
            r: self.r,
        }
    }

    /// Product truncated to the common degree, with the dropped weight.
    pub fn mul_with_tail(&self, o: &ScalarSeries) -> Result<(ScalarSeries, f64)> {
        self.check(o)?;
        let n = self.degree();
        let mut c = vec![0.0; n + 1];
        let mut dropped = 0.0;
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in o.coeffs.iter().enumerate() {
                let h = 0.5 * a * b;
                if i + j <= n {
                    c[i + j] += h;
                } else {
                    dropped += h.abs();
                }
                c[i.abs_diff(j)] += h;
            }
        }
        Ok((ScalarSeries { coeffs: c, r: self.r }, dropped))
    }

    pub fn mul(&self, o: &ScalarSeries) -> Result<ScalarSeries> {
        Ok(self.mul_with_tail(o)?.0)
    }
}

pub fn series_mul(f: &ScalarSeries, g: &ScalarSeries) -> Result<ScalarSeries> {
    f.mul(g)
}

pub fn series_add(f: &ScalarSeries, g: &ScalarSeries) -> Result<ScalarSeries> {
    f.add(g)
}

pub fn series_scale(f: &ScalarSeries, s: f64) -> ScalarSeries {
    f.scale(s)
}

/// 2×2 matrix of Chebyshev series sharing degree and radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyMat {
    /// Entries in the order a11, a12, a21, a22.
    pub entries: [ScalarSeries; 4],
}

impl PolyMat {
    pub fn new(entries: [ScalarSeries; 4]) -> Result<Self> {
        for e in &entries[1..] {
            entries[0].check(e)?;
        }
        Ok(PolyMat { entries })
    }

    pub fn degree(&self) -> usize {
        self.entries[0].degree()
    }

    pub fn radius(&self) -> f64 {
        self.entries[0].r
    }

    pub fn constant(m: Mat2, n: usize, r: f64) -> Self {
        let a = m.to_array();
        PolyMat {
            entries: std::array::from_fn(|i| ScalarSeries::constant(a[i], n, r)),
        }
    }

    /// Interpolant of a matrix function at the Chebyshev nodes of [-r, r].
    pub fn from_fn(f: impl Fn(f64) -> Result<Mat2>, n: usize, r: f64) -> Result<Self> {
        let basis = ChebBasis::get(n);
        let mut vals: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(n + 1));
        for t in &basis.nodes {
            let m = f(r * t)?;
            if !m.is_finite() {
                return Err(Error::NonFinite);
            }
            for (v, a) in vals.iter_mut().zip(m.to_array()) {
                v.push(a);
            }
        }
        Ok(PolyMat {
            entries: std::array::from_fn(|i| ScalarSeries {
                coeffs: basis.fit(&vals[i]),
                r,
            }),
        })
    }

    pub fn eval(&self, x: f64) -> Result<Mat2> {
        if !in_domain(x, self.radius()) {
            return Err(Error::Domain { x, r: self.radius() });
        }
        Ok(self.eval_unchecked(x))
    }

    pub fn eval_unchecked(&self, x: f64) -> Mat2 {
        Mat2::new(
            self.entries[0].eval_unchecked(x),
            self.entries[1].eval_unchecked(x),
            self.entries[2].eval_unchecked(x),
            self.entries[3].eval_unchecked(x),
        )
    }

    /// Points of the fixed evaluation grid.
    pub fn grid(&self) -> Vec<f64> {
        cheb_nodes(EVAL_GRID - 1, self.radius())
    }

    /// Sup over the evaluation grid of |det - 1|.
    pub fn det_defect(&self) -> f64 {
        self.grid()
            .into_iter()
            .map(|x| self.eval_unchecked(x).det_defect())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.grid()
            .into_iter()
            .map(|x| self.eval_unchecked(x).max_abs())
            .fold(0.0, f64::max)
    }

    /// Sup over the evaluation grid of the entrywise difference.
    pub fn sup_dist(&self, o: &PolyMat) -> f64 {
        self.grid()
            .into_iter()
            .map(|x| (self.eval_unchecked(x) - o.eval_unchecked(x)).max_abs())
            .fold(0.0, f64::max)
    }

    pub fn tail(&self, k: usize) -> f64 {
        self.entries.iter().map(|e| e.tail(k)).fold(0.0, f64::max)
    }

    pub fn truncation_warning(&self) -> bool {
        self.entries.iter().any(|e| e.truncation_warning())
    }

    pub fn mul(&self, o: &PolyMat) -> Result<PolyMat> {
        let [a11, a12, a21, a22] = &self.entries;
        let [b11, b12, b21, b22] = &o.entries;
        Ok(PolyMat {
            entries: [
                a11.mul(b11)?.add(&a12.mul(b21)?)?,
                a11.mul(b12)?.add(&a12.mul(b22)?)?,
                a21.mul(b11)?.add(&a22.mul(b21)?)?,
                a21.mul(b12)?.add(&a22.mul(b22)?)?,
            ],
        })
    }

    /// Pointwise adjugate, after checking the SL(2) tag on the grid.
    pub fn inv(&self) -> Result<PolyMat> {
        let d = self.det_defect();
        if d > DET_TOL {
            return Err(Error::Determinant { defect: d });
        }
        let [a11, a12, a21, a22] = &self.entries;
        Ok(PolyMat {
            entries: [a22.clone(), a12.scale(-1.0), a21.scale(-1.0), a11.clone()],
        })
    }

    /// Left and right multiplication by constant matrices.
    pub fn sandwich(&self, l: Mat2, r: Mat2) -> PolyMat {
        let m = self.entries.clone();
        let lin = |c: [f64; 4]| -> ScalarSeries {
            let mut out = m[0].scale(c[0]);
            for k in 1..4 {
                if c[k] != 0.0 {
                    for (o, v) in out.coeffs.iter_mut().zip(&m[k].coeffs) {
                        *o += c[k] * v;
                    }
                }
            }
            out
        };
        // (L M R)_{ij} = Σ_{kl} L_ik M_kl R_lj
        let la = [[l.a11, l.a12], [l.a21, l.a22]];
        let ra = [[r.a11, r.a12], [r.a21, r.a22]];
        let entry = |i: usize, j: usize| {
            let mut c = [0.0; 4];
            for k in 0..2 {
                for q in 0..2 {
                    c[2 * k + q] = la[i][k] * ra[q][j];
                }
            }
            lin(c)
        };
        PolyMat {
            entries: [entry(0, 0), entry(0, 1), entry(1, 0), entry(1, 1)],
        }
    }

    /// C⁻¹ M C.
    pub fn conj(&self, c: Mat2) -> Result<PolyMat> {
        let ci = c
            .inverse()
            .ok_or_else(|| Error::Degenerate("singular conjugating matrix".into()))?;
        Ok(self.sandwich(ci, c))
    }

    /// x ↦ M(a x + b), re-interpolated on the same domain.
    pub fn rescale(&self, a: f64, b: f64) -> Result<PolyMat> {
        let r = self.radius();
        if a.abs() * r + b.abs() > r * (1.0 + 1e-12) {
            return Err(Error::Domain { x: a.abs() * r + b.abs(), r });
        }
        PolyMat::from_fn(|x| Ok(self.eval_unchecked(a * x + b)), self.degree(), r)
    }

    /// All coefficients, entry-major.
    pub fn to_vec(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.coeffs.iter().copied()).collect()
    }

    pub fn from_slice(v: &[f64], n: usize, r: f64) -> Self {
        assert_eq!(v.len(), 4 * (n + 1));
        PolyMat {
            entries: std::array::from_fn(|i| ScalarSeries {
                coeffs: v[i * (n + 1)..(i + 1) * (n + 1)].to_vec(),
                r,
            }),
        }
    }
}

pub fn polymat_eval(m: &PolyMat, x: f64) -> Result<Mat2> {
    m.eval(x)
}

pub fn polymat_mul(l: &PolyMat, r: &PolyMat) -> Result<PolyMat> {
    l.mul(r)
}

pub fn polymat_inv(m: &PolyMat) -> Result<PolyMat> {
    m.inv()
}

pub fn polymat_conj(m: &PolyMat, c: Mat2) -> Result<PolyMat> {
    m.conj(c)
}

pub fn polymat_rescale(m: &PolyMat, a: f64, b: f64) -> Result<PolyMat> {
    m.rescale(a, b)
}

//! Almost Mathieu family: transfer matrices, band spectra at rational
//! frequency, gap labels, butterfly datasets and critical energies at the
//! golden mean.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::arith::ALPHA;
use crate::cocycle::{AmFiber, SkewMap};
use crate::error::{Error, Result};
use crate::renorm::Pair;
use crate::sl2::{Mat2, PolyMat};

/// Default Chebyshev degree and radius for polynomial fibers.
pub const DEFAULT_DEGREE: usize = 60;
pub const DEFAULT_RADIUS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Freq {
    Real(f64),
    Rational { p: u64, q: u64 },
}

impl Freq {
    pub fn value(self) -> f64 {
        match self {
            Freq::Real(a) => a,
            Freq::Rational { p, q } => p as f64 / q as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AMParams {
    pub e: f64,
    pub lambda: f64,
    pub xi: f64,
    pub alpha: Freq,
}

impl AMParams {
    /// Golden-mean frequency with the reversible phase ξ = α*/2.
    pub fn golden(e: f64, lambda: f64) -> Self {
        AMParams { e, lambda, xi: 0.5 * ALPHA, alpha: Freq::Real(ALPHA) }
    }

    pub fn validate(&self) -> Result<()> {
        if let Freq::Rational { p, q } = self.alpha {
            if q == 0 || p >= q || gcd(p, q) != 1 {
                return Err(Error::Invalid(format!("{p}/{q} is not a reduced fraction in [0, 1)")));
            }
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Invalid("coupling must be nonnegative".into()));
        }
        Ok(())
    }
}

pub fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn am_transfer(params: &AMParams) -> AmFiber {
    AmFiber { e: params.e, lambda: params.lambda, xi: params.xi }
}

pub fn am_polymat(params: &AMParams, n: usize, r: f64) -> Result<PolyMat> {
    let f = am_transfer(params);
    PolyMat::from_fn(|x| Ok(f.mat(x)), n, r)
}

pub fn am_skew(params: &AMParams) -> SkewMap {
    SkewMap::am(params.alpha.value(), params.e, params.lambda, params.xi)
}

/// The reversible AM pair F = (1, I), G = (α*, A) with ξ = α*/2.
pub fn am_pair(e: f64, lambda: f64) -> Result<Pair> {
    am_pair_with(e, lambda, DEFAULT_DEGREE, DEFAULT_RADIUS)
}

pub fn am_pair_with(e: f64, lambda: f64, n: usize, r: f64) -> Result<Pair> {
    let a = am_polymat(&AMParams::golden(e, lambda), n, r)?;
    Pair::new(PolyMat::constant(Mat2::I, n, r), a)
}

/// Trace of the q-step transfer product at phase θ.
pub fn discriminant(p: u64, q: u64, lambda: f64, e: f64, theta: f64) -> f64 {
    let mut m = Mat2::I;
    for n in 0..q {
        let v = 2.0 * lambda * (TAU * (theta + (n * p % q) as f64 / q as f64)).cos();
        m = Mat2::new(e - v, -1.0, 1.0, 0.0) * m;
    }
    m.trace()
}

/// q×q Bloch matrix at phase θ and Bloch phase k ∈ {0, π} (`antiperiodic`).
pub fn bloch_matrix(p: u64, q: u64, lambda: f64, theta: f64, antiperiodic: bool) -> DMatrix<f64> {
    let qs = q as usize;
    let mut h = DMatrix::zeros(qs, qs);
    for n in 0..qs {
        h[(n, n)] = 2.0 * lambda * (TAU * (theta + (n as u64 * p % q) as f64 / q as f64)).cos();
    }
    let corner = if antiperiodic { -1.0 } else { 1.0 };
    match qs {
        1 => h[(0, 0)] += 2.0 * corner,
        2 => {
            h[(0, 1)] = 1.0 + corner;
            h[(1, 0)] = 1.0 + corner;
        }
        _ => {
            for n in 0..qs - 1 {
                h[(n, n + 1)] = 1.0;
                h[(n + 1, n)] = 1.0;
            }
            h[(0, qs - 1)] = corner;
            h[(qs - 1, 0)] = corner;
        }
    }
    h
}

pub fn bloch_eigenvalues(p: u64, q: u64, lambda: f64, theta: f64, antiperiodic: bool) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(bloch_matrix(p, q, lambda, theta, antiperiodic))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn golden_section(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// θ minimizing `sign · Δ(E, θ)` over one period 1/q.
fn theta_extremum(p: u64, q: u64, lambda: f64, e: f64, sign: f64) -> (f64, f64) {
    let period = 1.0 / q as f64;
    let m = (q as usize + 1).max(16);
    let f = |t: f64| sign * discriminant(p, q, lambda, e, t);
    let (mut best, mut fbest) = (0.0, f(0.0));
    for j in 1..m {
        let t = period * j as f64 / m as f64;
        let v = f(t);
        if v < fbest {
            best = t;
            fbest = v;
        }
    }
    let h = period / m as f64;
    let (t, v) = golden_section(&f, best - h, best + h, 60);
    if v < fbest {
        (t, v)
    } else {
        (best, fbest)
    }
}

/// min over θ and max over θ of the discriminant.
pub fn discriminant_range(p: u64, q: u64, lambda: f64, e: f64) -> (f64, f64) {
    let (_, lo) = theta_extremum(p, q, lambda, e, 1.0);
    let (_, hi) = theta_extremum(p, q, lambda, e, -1.0);
    (lo, -hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandSet {
    pub p: u64,
    pub q: u64,
    pub lambda: f64,
    pub bands: Vec<Band>,
    /// Gap label k for the gap above band i, i = 0..q-1.
    pub labels: Vec<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl BandSet {
    /// r/q with r the number of bands strictly below E.
    pub fn ids(&self, e: f64) -> Result<Ratio> {
        let mut r = 0;
        for b in &self.bands {
            if b.lo <= e && e <= b.hi {
                return Err(Error::InsideBand { e, lo: b.lo, hi: b.hi });
            }
            if b.hi < e {
                r += 1;
            }
        }
        Ok(Ratio { num: r, den: self.q })
    }

    pub fn measure(&self) -> f64 {
        self.bands.iter().map(|b| b.hi - b.lo).sum()
    }

    pub fn contains(&self, e: f64) -> bool {
        self.bands.iter().any(|b| b.lo <= e && e <= b.hi)
    }
}

/// Bisection for a sign change of f near `seed`, widening the window.
fn polish_edge(f: &dyn Fn(f64) -> f64, seed: f64) -> f64 {
    let f0 = f(seed);
    if f0 == 0.0 {
        return seed;
    }
    let scale = 1.0 + seed.abs();
    let mut eta = 1e-10 * scale;
    while eta < 1e-3 * scale {
        for (a, b) in [(seed - eta, seed), (seed, seed + eta)] {
            let (fa, fb) = (f(a), f(b));
            if fa.signum() != fb.signum() {
                let (mut lo, mut hi, mut flo) = (a, b, fa);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    let fm = f(mid);
                    if fm == 0.0 {
                        return mid;
                    }
                    if fm.signum() == flo.signum() {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                return 0.5 * (lo + hi);
            }
        }
        eta *= 10.0;
    }
    // tangential root: the eigenvalue seed is kept
    seed
}

/// Bands of the AM operator at α = p/q.
///
/// Edges solve min_θ Δ(E, θ) = 2 and max_θ Δ(E, θ) = −2. The θ-dependence
/// of Δ is −2λ^q cos(2πqθ + c) with c independent of E, so the extremizers
/// found at one reference energy serve for all E. Edges are seeded by the
/// Bloch eigenvalues there with periodic and antiperiodic boundary
/// conditions, then polished by bisection.
pub fn bands_rational(p: u64, q: u64, lambda: f64) -> Result<BandSet> {
    AMParams { e: 0.0, lambda, xi: 0.0, alpha: Freq::Rational { p, q } }.validate()?;
    // at a periodic eigenvalue Δ = 2, so the θ-variation is not lost to rounding
    let e_ref = bloch_eigenvalues(p, q, lambda, 0.0, false)[0];
    let (theta_lo, _) = theta_extremum(p, q, lambda, e_ref, 1.0);
    let (theta_hi, _) = theta_extremum(p, q, lambda, e_ref, -1.0);
    let mut edges = Vec::with_capacity(2 * q as usize);
    for s in bloch_eigenvalues(p, q, lambda, theta_lo, false) {
        let g = |e: f64| discriminant(p, q, lambda, e, theta_lo) - 2.0;
        edges.push(polish_edge(&g, s));
    }
    for s in bloch_eigenvalues(p, q, lambda, theta_hi, true) {
        let g = |e: f64| discriminant(p, q, lambda, e, theta_hi) + 2.0;
        edges.push(polish_edge(&g, s));
    }
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite);
    }
    edges.sort_by(f64::total_cmp);
    let bands: Vec<Band> = edges.chunks(2).map(|c| Band { lo: c[0], hi: c[1] }).collect();
    for w in bands.windows(2) {
        if w[1].lo < w[0].hi - 1e-9 {
            return Err(Error::Bracket { lo: w[1].lo, hi: w[0].hi });
        }
    }
    let labels = (1..=q).map(|r| if r < q { gap_label(p, q, r) } else { 0 }).collect();
    Ok(BandSet { p, q, lambda, bands, labels })
}

pub fn ids_rational(p: u64, q: u64, lambda: f64, e: f64) -> Result<Ratio> {
    bands_rational(p, q, lambda)?.ids(e)
}

/// The k with k·p ≡ r (mod q) and |k| ≤ q/2, ties toward positive k.
pub fn gap_label(p: u64, q: u64, r: u64) -> i64 {
    let (p, q, r) = (p as i64, q as i64, r as i64);
    for m in 0..=q / 2 {
        for k in [m, -m] {
            if (k * p - r).rem_euclid(q) == 0 {
                return k;
            }
        }
    }
    0
}

/// Reduced fractions p/q in [0, 1) with q ≤ q_max, ordered by (q, p).
pub fn farey(q_max: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    for q in 1..=q_max {
        for p in 0..q {
            if gcd(p, q) == 1 {
                out.push((p, q));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ButterflyRow {
    pub p: u64,
    pub q: u64,
    pub band_index: usize,
    pub lo: f64,
    pub hi: f64,
    /// Label of the gap directly below the band (0 for the lowest band).
    pub gap_label: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Butterfly {
    pub q_max: u64,
    pub lambda: f64,
    pub sets: Vec<BandSet>,
}

pub fn butterfly(q_max: u64, lambda: f64) -> Result<Butterfly> {
    if q_max == 0 {
        return Err(Error::Invalid("q_max must be at least 1".into()));
    }
    let sets = farey(q_max)
        .par_iter()
        .map(|&(p, q)| bands_rational(p, q, lambda))
        .collect::<Result<Vec<_>>>()?;
    Ok(Butterfly { q_max, lambda, sets })
}

impl Butterfly {
    pub fn rows(&self) -> Vec<ButterflyRow> {
        let mut rows = Vec::new();
        for s in &self.sets {
            for (i, b) in s.bands.iter().enumerate() {
                rows.push(ButterflyRow {
                    p: s.p,
                    q: s.q,
                    band_index: i,
                    lo: b.lo,
                    hi: b.hi,
                    gap_label: if i == 0 { 0 } else { s.labels[i - 1] },
                });
            }
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("p,q,band_index,lo,hi,gap_label\n");
        for r in self.rows() {
            s.push_str(&format!("{},{},{},{:.15e},{:.15e},{}\n", r.p, r.q, r.band_index, r.lo, r.hi, r.gap_label));
        }
        s
    }

    /// Grayscale raster: α across, E up. Bands are black, gaps shaded by |k|.
    pub fn raster(&self, width: usize, height: usize) -> Vec<u8> {
        let emax = 2.0 + 2.0 * self.lambda;
        let mut img = vec![255u8; width * height];
        // per column the fraction with the largest denominator wins
        let mut pick: Vec<Option<&BandSet>> = vec![None; width];
        for s in &self.sets {
            let col = ((s.p as f64 / s.q as f64) * width as f64) as usize;
            let col = col.min(width - 1);
            if pick[col].is_none_or(|o| s.q > o.q) {
                pick[col] = Some(s);
            }
        }
        for (col, s) in pick.iter().enumerate() {
            let Some(s) = s else { continue };
            for row in 0..height {
                let e = emax - 2.0 * emax * (row as f64 + 0.5) / height as f64;
                let v = match s.ids(e) {
                    Err(_) => 0,
                    Ok(r) if r.num == 0 || r.num == r.den => 255,
                    Ok(r) => {
                        let k = s.labels[r.num as usize - 1].unsigned_abs();
                        (96 + 12 * (k % 12)) as u8
                    }
                };
                img[row * width + col] = v;
            }
        }
        img
    }
}

/// Binary PGM (P5, maxval 255).
pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

const TWO64: f64 = 18_446_744_073_709_551_616.0;

/// Fixed-point phase increment for α* and phase α*/2.
fn golden_steps() -> (u64, u64) {
    let target: u128 = 5u128 << 124;
    let mut s = (5f64.sqrt() * 2f64.powi(62)) as u128;
    while s * s > target {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= target {
        s += 1;
    }
    let a = (2 * s - (1u128 << 63)) as u64;
    (a, a / 2)
}

/// Sign changes of the solution of Hu = Eu with u₋₁ = 0, u₀ = 1 over n
/// sites, at golden frequency and phase α*/2.
pub fn node_count(e: f64, lambda: f64, n: u64) -> u64 {
    let (step, x0) = golden_steps();
    let mut x = x0;
    let (mut u0, mut u1) = (0.0f64, 1.0f64);
    let mut c = 0;
    for _ in 0..n {
        let v = 2.0 * lambda * (TAU * (x as f64 / TWO64)).cos();
        let u2 = (e - v) * u1 - u0;
        if (u2 < 0.0 && u1 > 0.0) || (u2 > 0.0 && u1 < 0.0) {
            c += 1;
        }
        u0 = u1;
        u1 = u2;
        if u1.abs() > 1e100 {
            u0 *= 1e-100;
            u1 *= 1e-100;
        }
        x = x.wrapping_add(step);
    }
    c
}

/// Fibered rotation number from the node density: ϱ = nodes / 2n.
pub fn rotation_from_nodes(e: f64, lambda: f64, n: u64) -> f64 {
    node_count(e, lambda, n) as f64 / (2.0 * n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RotTarget {
    pub rho: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CriticalEnergy {
    pub e: f64,
    pub rho: f64,
    pub rho_err: f64,
    pub n_iter: u64,
    pub bracket: f64,
}

/// Upper edge of the energy set where ϱ ≥ target (ϱ = 1/2 selects the top
/// of the spectrum, where ϱ ≡ 0 mod 1/2 on the other side).
pub fn find_critical_energy(target: RotTarget, lambda: f64, tol: f64) -> Result<CriticalEnergy> {
    let t = target.rho;
    let (mut lo, mut hi) = (-2.5 - 2.0 * lambda, 2.5 + 2.0 * lambda);
    if !(t > 0.0 && t <= 0.5) {
        return Err(Error::Bracket { lo, hi });
    }
    if !(tol >= 1e-12) {
        return Err(Error::Invalid("tol must be at least 1e-12".into()));
    }
    let threshold = |n: u64| -> u64 {
        if t >= 0.5 {
            1
        } else {
            ((2.0 * t * n as f64).ceil() as u64).saturating_sub(2).max(1)
        }
    };
    let iters_for = |width: f64| -> u64 {
        let k = (4.0 / width).log10().ceil().clamp(4.0, 7.0);
        10u64.pow(k as u32)
    };
    let mut n = iters_for(hi - lo);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        n = iters_for(hi - lo);
        if node_count(mid, lambda, n) >= threshold(n) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let e = 0.5 * (lo + hi);
    let rho = rotation_from_nodes(lo, lambda, n);
    let d = (rho - t).rem_euclid(0.5);
    Ok(CriticalEnergy { e, rho, rho_err: d.min(0.5 - d), n_iter: n, bracket: hi - lo })
}

/// The largest point of the spectrum at golden frequency.
pub fn top_edge(lambda: f64) -> Result<f64> {
    Ok(find_critical_energy(RotTarget { rho: 0.5 }, lambda, 1e-12)?.e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transfer_matrix() {
        let p = AMParams { e: 0.0, lambda: 1.0, xi: 0.0, alpha: Freq::Real(ALPHA) };
        assert_eq!(am_transfer(&p).mat(0.0), Mat2::new(-2.0, -1.0, 1.0, 0.0));
        let pm = am_polymat(&AMParams::golden(0.7, 1.0), 60, 3.0).unwrap();
        let f = am_transfer(&AMParams::golden(0.7, 1.0));
        for i in 0..20 {
            let x = -2.9 + 0.3 * i as f64;
            assert!((pm.eval(x).unwrap() - f.mat(x)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn gap_labels() {
        assert_eq!(gap_label(1, 3, 1), 1);
        assert_eq!(gap_label(1, 3, 2), -1);
        assert_eq!(gap_label(2, 5, 1), -2);
        assert_eq!(gap_label(1, 2, 1), 1);
    }

    #[test]
    fn small_band_sets() {
        let b = bands_rational(0, 1, 1.0).unwrap();
        assert_eq!(b.bands.len(), 1);
        assert!((b.bands[0].lo + 4.0).abs() < 1e-12 && (b.bands[0].hi - 4.0).abs() < 1e-12);
        let b = bands_rational(1, 3, 1.0).unwrap();
        assert_eq!(b.bands.len(), 3);
        for i in 0..3 {
            assert!((b.bands[i].lo + b.bands[2 - i].hi).abs() < 1e-9);
        }
        assert!(bands_rational(2, 4, 1.0).is_err());
    }

    #[test]
    fn ids_values() {
        let b = bands_rational(1, 3, 1.0).unwrap();
        assert_eq!(b.ids(-10.0).unwrap().num, 0);
        assert_eq!(b.ids(10.0).unwrap(), Ratio { num: 3, den: 3 });
        let mid = 0.5 * (b.bands[1].hi + b.bands[2].lo);
        assert_eq!(b.ids(mid).unwrap(), Ratio { num: 2, den: 3 });
        assert!(b.ids(0.5 * (b.bands[1].lo + b.bands[1].hi)).is_err());
    }

    #[test]
    fn node_counts_are_monotone() {
        let mut prev = u64::MAX;
        for i in 0..40 {
            let e = -4.0 + 0.2 * i as f64;
            let c = node_count(e, 1.0, 20_000);
            assert!(c <= prev);
            prev = c;
        }
        assert_eq!(node_count(4.5, 1.0, 10_000), 0);
        assert_eq!(node_count(-4.5, 1.0, 10_000), 10_000);
    }

    #[test]
    fn critical_energy_bounds() {
        assert!(find_critical_energy(RotTarget { rho: 0.6 }, 1.0, 1e-6).is_err());
        assert!(find_critical_energy(RotTarget { rho: 0.0 }, 1.0, 1e-6).is_err());
        let c = find_critical_energy(RotTarget { rho: 0.25 }, 1.0, 1e-9).unwrap();
        assert!(c.e.abs() < 1e-6, "{c:?}");
    }
}

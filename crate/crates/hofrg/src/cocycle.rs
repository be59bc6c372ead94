//! Skew-product maps over circle rotations and orbit estimators for the
//! Lyapunov exponent and the fibered rotation number.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::arith::ALPHA;
use crate::error::{Error, Result};
use crate::sl2::{inv_sl2, Mat2, PolyMat};

/// Closed-form almost Mathieu fiber A(x) = [[E − 2λcos(2π(x+ξ)), −1], [1, 0]].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AmFiber {
    pub e: f64,
    pub lambda: f64,
    pub xi: f64,
}

impl AmFiber {
    #[inline]
    pub fn potential(&self, x: f64) -> f64 {
        2.0 * self.lambda * (TAU * (x + self.xi)).cos()
    }

    #[inline]
    pub fn mat(&self, x: f64) -> Mat2 {
        Mat2::new(self.e - self.potential(x), -1.0, 1.0, 0.0)
    }
}

pub type FiberFn = Arc<dyn Fn(f64) -> Result<Mat2> + Send + Sync>;

#[derive(Clone)]
pub enum Fiber {
    Const(Mat2),
    Am(AmFiber),
    Poly(PolyMat),
    Func(FiberFn),
}

impl fmt::Debug for Fiber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fiber::Const(m) => write!(f, "Const({m:?})"),
            Fiber::Am(a) => write!(f, "Am({a:?})"),
            Fiber::Poly(p) => write!(f, "Poly(degree {}, radius {})", p.degree(), p.radius()),
            Fiber::Func(_) => write!(f, "Func"),
        }
    }
}

/// Skew-product map (x, y) ↦ (x + freq, A(x) y).
#[derive(Clone, Debug)]
pub struct SkewMap {
    pub freq: f64,
    pub fiber: Fiber,
    /// Period of the fiber in x; `None` when the fiber lives on a bounded interval.
    pub period: Option<f64>,
}

impl SkewMap {
    pub fn identity() -> Self {
        SkewMap { freq: 0.0, fiber: Fiber::Const(Mat2::I), period: Some(1.0) }
    }

    pub fn constant(freq: f64, m: Mat2) -> Self {
        SkewMap { freq, fiber: Fiber::Const(m), period: Some(1.0) }
    }

    pub fn am(freq: f64, e: f64, lambda: f64, xi: f64) -> Self {
        SkewMap {
            freq,
            fiber: Fiber::Am(AmFiber { e, lambda, xi }),
            period: Some(1.0),
        }
    }

    pub fn poly(freq: f64, m: PolyMat) -> Self {
        SkewMap { freq, fiber: Fiber::Poly(m), period: None }
    }

    pub fn func(freq: f64, period: Option<f64>, f: impl Fn(f64) -> Result<Mat2> + Send + Sync + 'static) -> Self {
        SkewMap { freq, fiber: Fiber::Func(Arc::new(f)), period }
    }

    /// Matrix part at x.
    pub fn mat(&self, x: f64) -> Result<Mat2> {
        match &self.fiber {
            Fiber::Const(m) => Ok(*m),
            Fiber::Am(a) => Ok(a.mat(x)),
            Fiber::Poly(p) => p.eval(x),
            Fiber::Func(f) => f(x),
        }
    }

    fn is_const(&self) -> bool {
        matches!(self.fiber, Fiber::Const(_))
    }
}

fn joint_period(f: &SkewMap, g: &SkewMap) -> Option<f64> {
    match (f.period, g.period) {
        _ if f.is_const() => g.period,
        _ if g.is_const() => f.period,
        (Some(a), Some(b)) if (a - b).abs() <= 1e-15 * a.abs().max(1.0) => Some(a),
        _ => None,
    }
}

/// F ∘ G: frequencies add and mat(F∘G)(x) = mat F(x + freq G) · mat G(x).
pub fn compose(f: &SkewMap, g: &SkewMap) -> SkewMap {
    let period = joint_period(f, g);
    let freq = f.freq + g.freq;
    if let (Fiber::Const(a), Fiber::Const(b)) = (&f.fiber, &g.fiber) {
        return SkewMap::constant(freq, *a * *b);
    }
    let (f, g) = (f.clone(), g.clone());
    SkewMap::func(freq, period, move |x| Ok(f.mat(x + g.freq)? * g.mat(x)?))
}

/// G⁻¹: frequency negated and mat(G⁻¹)(x) = mat G(x − freq G)⁻¹.
pub fn inverse(g: &SkewMap) -> SkewMap {
    if let Fiber::Const(m) = &g.fiber {
        if let Ok(mi) = inv_sl2(*m) {
            return SkewMap::constant(-g.freq, mi);
        }
    }
    let g = g.clone();
    let period = g.period;
    SkewMap::func(-g.freq, period, move |x| inv_sl2(g.mat(x - g.freq)?))
}

/// Exact orbit x_n = x_0 + n·freq on a circle of length `period`,
/// held as a 64-bit fixed-point phase.
#[derive(Clone, Copy, Debug)]
pub struct Orbit {
    phase: u64,
    step: u64,
    period: f64,
}

const TWO64: f64 = 18_446_744_073_709_551_616.0;

/// Fixed-point phase of the inverse golden mean, from an integer square root.
fn golden_phase() -> u64 {
    // s = ⌊√5 · 2^62⌋, α·2^64 = 2s − 2^63
    let target: u128 = 5u128 << 124;
    let mut s = ((5f64.sqrt()) * 2f64.powi(62)) as u128;
    while s * s > target {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= target {
        s += 1;
    }
    (2 * s - (1u128 << 63)) as u64
}

fn phase_of(frac_turns: f64) -> u64 {
    let f = frac_turns - frac_turns.floor();
    if f == ALPHA {
        return golden_phase();
    }
    if f == 1.0 - ALPHA {
        return golden_phase().wrapping_neg();
    }
    (f * TWO64) as u128 as u64
}

impl Orbit {
    pub fn new(x0: f64, freq: f64, period: f64) -> Self {
        Orbit {
            phase: phase_of(x0 / period),
            step: phase_of(freq / period),
            period,
        }
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.period * (self.phase as f64 / TWO64)
    }

    #[inline]
    pub fn advance(&mut self) {
        self.phase = self.phase.wrapping_add(self.step);
    }
}

/// Result of an orbit estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrbitEstimate {
    pub value: f64,
    pub n_iter: usize,
    /// |estimate(n) − estimate(n/2)|.
    pub error_indicator: f64,
}

fn require_period(g: &SkewMap) -> Result<f64> {
    g.period
        .ok_or_else(|| Error::Invalid("orbit estimators need a periodic fiber".into()))
}

fn fiber_at(g: &SkewMap, x: f64) -> Result<Mat2> {
    let m = match &g.fiber {
        Fiber::Am(a) => a.mat(x),
        _ => g.mat(x)?,
    };
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(m)
}

/// Lyapunov exponent by per-step renormalization of a running vector.
pub fn lyapunov(g: &SkewMap, n_iter: usize, x0: f64) -> Result<OrbitEstimate> {
    if n_iter < 2 {
        return Err(Error::Invalid("n_iter must be at least 2".into()));
    }
    let period = require_period(g)?;
    let mut orbit = Orbit::new(x0, g.freq, period);
    let (mut v0, mut v1) = (1.0f64, 0.0f64);
    let mut acc = 0.0;
    let mut half = 0.0;
    let nh = n_iter / 2;
    for k in 0..n_iter {
        let m = fiber_at(g, orbit.x())?;
        let w0 = m.a11 * v0 + m.a12 * v1;
        let w1 = m.a21 * v0 + m.a22 * v1;
        let nrm = w0.hypot(w1);
        if !(nrm.is_finite() && nrm > 0.0) {
            return Err(Error::NonFinite);
        }
        acc += nrm.ln();
        v0 = w0 / nrm;
        v1 = w1 / nrm;
        orbit.advance();
        if k + 1 == nh {
            half = acc / nh as f64;
        }
    }
    let value = acc / n_iter as f64;
    Ok(OrbitEstimate { value, n_iter, error_indicator: (value - half).abs() })
}

/// Continuous branch of the QR angle θ(x) = arg(first column of A(x)).
struct ThetaBranch {
    grid: Vec<f64>,
    period: f64,
    fixed: bool,
}

impl ThetaBranch {
    fn new(g: &SkewMap, period: f64) -> Result<Self> {
        if matches!(g.fiber, Fiber::Am(_)) {
            return Ok(ThetaBranch { grid: Vec::new(), period, fixed: true });
        }
        let k = 4096;
        let raw = |x: f64| -> Result<f64> {
            let m = g.mat(x)?;
            Ok(m.a21.atan2(m.a11))
        };
        let mut grid = Vec::with_capacity(k + 1);
        let mut prev = raw(0.0)?;
        grid.push(prev);
        for i in 1..=k {
            let mut sub = 1usize;
            let mut cur;
            // refine until every sub-step moves less than π/2
            loop {
                let mut p = prev;
                let mut ok = true;
                for j in 1..=sub {
                    let x = period * ((i - 1) as f64 + j as f64 / sub as f64) / k as f64;
                    let t = raw(x)?;
                    let d = wrap(t - p);
                    if d.abs() > 0.5 * PI {
                        ok = false;
                        break;
                    }
                    p += d;
                }
                cur = p;
                if ok {
                    break;
                }
                sub *= 2;
                if sub > 1 << 12 {
                    return Err(Error::Branch { step: i });
                }
            }
            grid.push(cur);
            prev = cur;
        }
        if (grid[k] - grid[0]).abs() > PI {
            return Err(Error::Degenerate(
                "fiber loop has nonzero degree; rotation number lift is not periodic".into(),
            ));
        }
        Ok(ThetaBranch { grid, period, fixed: false })
    }

    #[inline]
    fn theta(&self, x: f64, raw: f64) -> f64 {
        if self.fixed {
            return raw;
        }
        let k = self.grid.len() - 1;
        let s = (x / self.period * k as f64).clamp(0.0, k as f64);
        let i = (s as usize).min(k - 1);
        let t = s - i as f64;
        let guess = self.grid[i] * (1.0 - t) + self.grid[i + 1] * t;
        guess + wrap(raw - guess)
    }
}

#[inline]
fn wrap(d: f64) -> f64 {
    let mut d = d % TAU;
    if d > PI {
        d -= TAU;
    } else if d <= -PI {
        d += TAU;
    }
    d
}

/// Fibered rotation number from the lifted angle of a projectivized orbit.
///
/// Each step writes A = R(θ)T with T upper triangular with positive
/// diagonal; the T part moves the angle by less than π and θ follows a
/// continuous branch in x. The value is reported mod 1.
pub fn rotation_number(g: &SkewMap, n_iter: usize, x0: f64, theta0: f64) -> Result<OrbitEstimate> {
    let (total, half) = lifted_winding(g, n_iter, x0, theta0)?;
    let value = total - total.floor();
    let err = (total - half).abs();
    Ok(OrbitEstimate { value: if value >= 1.0 { 0.0 } else { value }, n_iter, error_indicator: err })
}

/// Lifted winding (not reduced) after n and n/2 steps.
pub fn lifted_winding(g: &SkewMap, n_iter: usize, x0: f64, theta0: f64) -> Result<(f64, f64)> {
    if n_iter < 2 {
        return Err(Error::Invalid("n_iter must be at least 2".into()));
    }
    let period = require_period(g)?;
    let branch = ThetaBranch::new(g, period)?;
    let mut orbit = Orbit::new(x0, g.freq, period);
    let (mut v0, mut v1) = theta0.sin_cos();
    std::mem::swap(&mut v0, &mut v1);
    let mut psi = v1.atan2(v0);
    let mut phi = 0.0f64;
    let nh = n_iter / 2;
    let mut half = 0.0;
    for k in 0..n_iter {
        let x = orbit.x();
        let m = fiber_at(g, x)?;
        let theta = branch.theta(x, m.a21.atan2(m.a11));
        let w0 = m.a11 * v0 + m.a12 * v1;
        let w1 = m.a21 * v0 + m.a22 * v1;
        let nrm = w0.hypot(w1);
        if !(nrm.is_finite() && nrm > 0.0) {
            return Err(Error::NonFinite);
        }
        v0 = w0 / nrm;
        v1 = w1 / nrm;
        let npsi = v1.atan2(v0);
        let dt = wrap(npsi - psi - theta);
        if !dt.is_finite() {
            return Err(Error::Branch { step: k });
        }
        phi += theta + dt;
        psi = npsi;
        orbit.advance();
        if k + 1 == nh {
            half = phi / (TAU * nh as f64);
        }
    }
    Ok((phi / (TAU * n_iter as f64), half))
}

fn check_grid(g: &SkewMap) -> Vec<f64> {
    let (lo, hi) = match (&g.fiber, g.period) {
        (Fiber::Poly(p), _) => {
            let r = p.radius() - g.freq.abs();
            (-r.max(0.0), r.max(0.0))
        }
        (_, Some(p)) => (-p, p),
        _ => (-1.0, 1.0),
    };
    let m = 129;
    (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
}

/// sup ‖mat(G⁻¹)(x) − S mat G(−x) S‖ over a symmetric grid.
pub fn reversibility_defect(g: &SkewMap) -> f64 {
    let gi = inverse(g);
    let mut worst = 0.0f64;
    for x in check_grid(g) {
        let d = match (gi.mat(x), g.mat(-x)) {
            (Ok(a), Ok(b)) => (a - Mat2::S * b * Mat2::S).max_abs(),
            _ => f64::INFINITY,
        };
        worst = worst.max(d);
    }
    worst
}

/// sup ‖mat(F∘G)(x) − mat(G∘F)(x)‖ over a grid.
pub fn commutation_defect(f: &SkewMap, g: &SkewMap) -> f64 {
    let fg = compose(f, g);
    let gf = compose(g, f);
    let grid = match (&f.fiber, &g.fiber) {
        (Fiber::Poly(p), _) | (_, Fiber::Poly(p)) => {
            let r = p.radius() - f.freq.abs().max(g.freq.abs());
            let m = 129;
            (0..m).map(|i| -r + 2.0 * r * i as f64 / (m - 1) as f64).collect()
        }
        _ => check_grid(g),
    };
    let mut worst = 0.0f64;
    for x in grid {
        let d = match (fg.mat(x), gf.mat(x)) {
            (Ok(a), Ok(b)) => (a - b).max_abs(),
            _ => f64::INFINITY,
        };
        worst = worst.max(d);
    }
    worst
}

/// log‖(mat Gⁿ)(x0)‖ with scale factoring.
pub fn cocycle_power_norm(g: &SkewMap, n: usize, x0: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Invalid("n must be at least 1".into()));
    }
    let mut m = Mat2::I;
    let mut logscale = 0.0;
    match g.period {
        Some(p) => {
            let mut orbit = Orbit::new(x0, g.freq, p);
            for _ in 0..n {
                m = fiber_at(g, orbit.x())? * m;
                orbit.advance();
                let s = m.max_abs();
                if !(1e-100..=1e100).contains(&s) {
                    m = m.scale(1.0 / s);
                    logscale += s.ln();
                }
            }
        }
        None => {
            for k in 0..n {
                m = g.mat(x0 + k as f64 * g.freq)? * m;
                let s = m.max_abs();
                if !(1e-100..=1e100).contains(&s) {
                    m = m.scale(1.0 / s);
                    logscale += s.ln();
                }
            }
        }
    }
    Ok(m.norm().ln() + logscale)
}

/// Matrix product (mat Gⁿ)(x0) without rescaling.
pub fn cocycle_power(g: &SkewMap, n: usize, x0: f64) -> Result<Mat2> {
    let mut m = Mat2::I;
    match g.period {
        Some(p) => {
            let mut orbit = Orbit::new(x0, g.freq, p);
            for _ in 0..n {
                m = fiber_at(g, orbit.x())? * m;
                orbit.advance();
            }
        }
        None => {
            for k in 0..n {
                m = g.mat(x0 + k as f64 * g.freq)? * m;
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn am(e: f64, lambda: f64) -> SkewMap {
        SkewMap::am(ALPHA, e, lambda, 0.5 * ALPHA)
    }

    #[test]
    fn golden_phase_is_accurate() {
        let p = golden_phase() as f64 / TWO64;
        assert!((p - ALPHA).abs() < 2e-16);
        let mut o = Orbit::new(0.0, ALPHA, 1.0);
        for _ in 0..1000 {
            o.advance();
        }
        let exact = 1000.0 * ALPHA - (1000.0 * ALPHA).floor();
        assert!((o.x() - exact).abs() < 1e-12);
    }

    #[test]
    fn compose_and_inverse() {
        let g = am(0.3, 1.0);
        let id = SkewMap::identity();
        let c = compose(&id, &g);
        let f = SkewMap::constant(1.0, Mat2::I);
        assert!((compose(&f, &g).freq - (1.0 + ALPHA)).abs() < 1e-15);
        let gg = compose(&g, &g);
        for i in 0..10 {
            let x = 0.1 * i as f64 - 0.37;
            assert!((c.mat(x).unwrap() - g.mat(x).unwrap()).max_abs() < 1e-15);
            let direct = g.mat(x + ALPHA).unwrap() * g.mat(x).unwrap();
            assert!((gg.mat(x).unwrap() - direct).max_abs() < 1e-12);
        }
        let gi = inverse(&g);
        let gii = inverse(&gi);
        let cancel = compose(&g, &gi);
        for i in 0..10 {
            let x = 0.13 * i as f64;
            assert!((gii.mat(x).unwrap() - g.mat(x).unwrap()).max_abs() < 1e-12);
            assert!((cancel.mat(x).unwrap() - Mat2::I).max_abs() < 1e-10);
        }
        assert_eq!(inverse(&id).mat(0.2).unwrap(), Mat2::I);
    }

    #[test]
    fn lyapunov_values() {
        let l = lyapunov(&am(0.0, 2.0), 1_000_000, 0.0).unwrap();
        assert!((l.value - 2f64.ln()).abs() < 1e-3, "{l:?}");
        let l = lyapunov(&am(5.0, 1.0), 100_000, 0.0).unwrap();
        assert!(l.value > 0.5);
    }

    #[test]
    fn rotation_values() {
        let r = rotation_number(&am(0.0, 1.0), 1_000_000, 0.0, 0.0).unwrap();
        assert!((r.value - 0.25).abs() < 1e-4, "{r:?}");
        let top = rotation_number(&am(5.0, 1.0), 100_000, 0.0, 0.0).unwrap();
        // integrated density of states is 1 above the spectrum, so -2ρ ≡ 0 (mod 1)
        let d = (-2.0 * top.value).rem_euclid(1.0);
        assert!(d.min(1.0 - d) < 1e-4, "{top:?}");
    }

    #[test]
    fn reversibility() {
        assert!(reversibility_defect(&am(1.0, 1.0)) < 1e-10);
        assert!(reversibility_defect(&SkewMap::am(ALPHA, 1.0, 1.0, 0.1)) > 1e-2);
        assert_eq!(reversibility_defect(&SkewMap::identity()), 0.0);
    }

    #[test]
    fn commutation() {
        let f = SkewMap::constant(1.0, Mat2::I);
        let g = am(0.7, 1.0);
        assert!(commutation_defect(&f, &g) < 1e-10);
        assert!(commutation_defect(&g, &g) < 1e-12);
        let r = Mat2::new(0.8, -0.6, 0.6, 0.8);
        let fr = SkewMap::constant(1.0, r);
        let d = commutation_defect(&fr, &g);
        let mut by_hand = 0.0f64;
        for x in check_grid(&g) {
            let a = g.mat(x).unwrap();
            let b = g.mat(x + 1.0).unwrap();
            by_hand = by_hand.max((r * a - b * r).max_abs());
        }
        assert!((d - by_hand).abs() < 1e-12 && d > 0.1);
    }

    #[test]
    fn power_norm() {
        let g = am(0.4, 1.0);
        let one = cocycle_power_norm(&g, 1, 0.2).unwrap();
        assert!((one - g.mat(0.2).unwrap().norm().ln()).abs() < 1e-14);
    }
}

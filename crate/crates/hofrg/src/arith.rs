//! Fibonacci and Pisano arithmetic, the torus map on rotation vectors,
//! quartic root finding and the golden-mean constants.

use serde::Serialize;

use crate::error::{Error, Result};

/// Inverse golden mean (√5 − 1)/2.
pub const ALPHA: f64 = 0.618_033_988_749_894_8;

/// Fibonacci numbers with q_0 = q_1 = 1.
pub fn fibonacci(n: usize) -> Result<u128> {
    if n > 184 {
        return Err(Error::Invalid(format!("fibonacci({n}) overflows u128")));
    }
    let (mut a, mut b) = (1u128, 1u128);
    for _ in 0..n {
        let c = a + b;
        a = b;
        b = c;
    }
    Ok(a)
}

/// Least ℓ > 0 with U^ℓ ≡ I (mod n), U = [[0,1],[1,-1]].
pub fn pisano(n: u64) -> Result<u64> {
    if n < 2 {
        return Err(Error::Invalid("pisano period needs n >= 2".into()));
    }
    let (mut a, mut b) = (0u64, 1u64);
    let mut l = 0u64;
    loop {
        let c = (a + b) % n;
        a = b;
        b = c;
        l += 1;
        if a == 0 && b == 1 {
            return Ok(l);
        }
    }
}

/// The matrix U = [[0,1],[1,-1]] raised to the power k, reduced mod n.
pub fn torus_matrix_pow(k: u64, n: u64) -> [[u64; 2]; 2] {
    let m = n as i128;
    let red = |x: i128| (((x % m) + m) % m) as u64;
    let mul = |a: [[u64; 2]; 2], b: [[u64; 2]; 2]| {
        let mut c = [[0u64; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let s = a[i][0] as i128 * b[0][j] as i128 + a[i][1] as i128 * b[1][j] as i128;
                c[i][j] = red(s);
            }
        }
        c
    };
    let mut result = [[red(1), 0], [0, red(1)]];
    let mut base = [[0, red(1)], [red(1), red(-1)]];
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            result = mul(result, base);
        }
        base = mul(base, base);
        e >>= 1;
    }
    result
}

/// Rotation numbers of a pair, reduced mod 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RotVec {
    pub rho_f: f64,
    pub rho_g: f64,
}

fn frac(x: f64) -> f64 {
    let f = x - x.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

impl RotVec {
    pub fn new(rho_f: f64, rho_g: f64) -> Self {
        RotVec { rho_f: frac(rho_f), rho_g: frac(rho_g) }
    }
}

/// (ϱ_F, ϱ_G) ↦ (ϱ_G, ϱ_F − ϱ_G) mod 1.
pub fn torus_step(v: RotVec) -> RotVec {
    RotVec::new(v.rho_g, v.rho_f - v.rho_g)
}

/// Rotation vector with rational entries over a common denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct RatVec {
    pub f: u64,
    pub g: u64,
    pub den: u64,
}

impl RatVec {
    pub fn new(f: i64, g: i64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::Invalid("zero denominator".into()));
        }
        let d = den as i64;
        Ok(RatVec {
            f: f.rem_euclid(d) as u64,
            g: g.rem_euclid(d) as u64,
            den,
        })
    }

    pub fn step(self) -> Self {
        RatVec {
            f: self.g,
            g: (self.f + self.den - self.g) % self.den,
            den: self.den,
        }
    }

    pub fn step_back(self) -> Self {
        // inverse of U is [[1,1],[1,0]]
        RatVec {
            f: (self.f + self.g) % self.den,
            g: self.f,
            den: self.den,
        }
    }

    pub fn to_real(self) -> RotVec {
        RotVec::new(self.f as f64 / self.den as f64, self.g as f64 / self.den as f64)
    }
}

/// Exact least period of a rational rotation vector under the torus map.
pub fn orbit_period(v: RatVec) -> u64 {
    let mut w = v.step();
    let mut k = 1;
    while w != v {
        w = w.step();
        k += 1;
    }
    k
}

/// Real-coefficient polynomial, highest degree first.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolySpec {
    pub name: &'static str,
    pub coefficients: Vec<f64>,
}

impl PolySpec {
    pub fn eval(&self, z: f64) -> f64 {
        self.coefficients.iter().fold(0.0, |acc, c| acc * z + c)
    }

    pub fn deriv(&self, z: f64) -> f64 {
        let d = self.coefficients.len() - 1;
        self.coefficients[..d]
            .iter()
            .enumerate()
            .fold(0.0, |acc, (i, c)| acc * z + c * (d - i) as f64)
    }
}

pub fn p3() -> PolySpec {
    PolySpec { name: "P3", coefficients: vec![1.0, -30.0, -24.0, -10.0, -1.0] }
}

pub fn p6() -> PolySpec {
    PolySpec { name: "P6", coefficients: vec![1.0, -196.0, -58.0, -4.0, 1.0] }
}

pub fn q3() -> PolySpec {
    PolySpec { name: "Q3", coefficients: vec![1.0, -2.0, -2.0, -2.0, 1.0] }
}

pub fn q6() -> PolySpec {
    PolySpec { name: "Q6", coefficients: vec![1.0, -8.0, -2.0, -8.0, 1.0] }
}

/// x⁴ − 3x³ − x − 1, satisfied by the cube root of μ₁ for ℓ = 3.
pub fn cube_root_quartic() -> PolySpec {
    PolySpec { name: "X3", coefficients: vec![1.0, -3.0, 0.0, -1.0, -1.0] }
}

/// x⁴ − 14x³ − 2x − 1, satisfied by the square root of μ₁ for ℓ = 6.
pub fn square_root_quartic() -> PolySpec {
    PolySpec { name: "X6", coefficients: vec![1.0, -14.0, 0.0, -2.0, -1.0] }
}

/// Real roots by sign scan, bisection and Newton polish, ascending.
pub fn real_roots(p: &PolySpec) -> Vec<f64> {
    let c = &p.coefficients;
    let lead = c[0];
    let bound = 1.0 + c[1..].iter().map(|x| (x / lead).abs()).fold(0.0, f64::max);
    let m = 200_000;
    let mut roots = Vec::new();
    let xs = |k: usize| -bound + 2.0 * bound * k as f64 / m as f64;
    let mut prev = p.eval(xs(0));
    for k in 1..=m {
        let x = xs(k);
        let v = p.eval(x);
        if v == 0.0 {
            roots.push(x);
        } else if prev != 0.0 && prev.signum() != v.signum() {
            let (mut lo, mut hi) = (xs(k - 1), x);
            let flo = prev;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = p.eval(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let mut z = 0.5 * (lo + hi);
            for _ in 0..3 {
                let d = p.deriv(z);
                if d != 0.0 {
                    let step = p.eval(z) / d;
                    if step.abs() < (hi - lo).abs().max(1e-15 * z.abs()) * 4.0 {
                        z -= step;
                    }
                }
            }
            roots.push(z);
        }
        prev = v;
    }
    roots
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Constants {
    pub alpha: f64,
    pub c3: f64,
    pub c6: f64,
    pub c12: f64,
    pub mu1_3: f64,
    pub mu1_6: f64,
    pub mu2_3: f64,
    pub mu2_6: f64,
    pub tau3: f64,
    pub tau6: f64,
}

/// Conjectured scaling exponent c_ℓ for ℓ ∈ {3, 6, 12}.
pub fn c_ell(ell: u32) -> Option<f64> {
    let k = match ell {
        3 => 1,
        6 => 3,
        12 => 6,
        _ => return None,
    };
    Some(0.5 * ALPHA.powi(-k).acosh())
}

pub fn mu2(ell: u32) -> f64 {
    ALPHA.powi(-(ell as i32))
}

pub fn largest_real_root(p: &PolySpec) -> f64 {
    real_roots(p).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// τ = ℓ log(1/α*) / log μ₁.
pub fn tau(ell: u32, mu1: f64) -> f64 {
    ell as f64 * (1.0 / ALPHA).ln() / mu1.ln()
}

pub fn constants() -> Constants {
    let mu1_3 = largest_real_root(&p3());
    let mu1_6 = largest_real_root(&p6());
    Constants {
        alpha: ALPHA,
        c3: 0.5 * ALPHA.powi(-1).acosh(),
        c6: 0.5 * ALPHA.powi(-3).acosh(),
        c12: 0.5 * ALPHA.powi(-6).acosh(),
        mu1_3,
        mu1_6,
        mu2_3: mu2(3),
        mu2_6: mu2(6),
        tau3: tau(3, mu1_3),
        tau6: tau(6, mu1_6),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fibonacci_values() {
        let v: Vec<u128> = (0..6).map(|n| fibonacci(n).unwrap()).collect();
        assert_eq!(v, vec![1, 1, 2, 3, 5, 8]);
        let q10 = fibonacci(10).unwrap() as f64;
        assert!((q10 * 5f64.sqrt() * ALPHA.powi(11) - 1.0).abs() < 1e-4);
        for n in 1..=80 {
            assert_eq!(fibonacci(n + 1).unwrap(), fibonacci(n).unwrap() + fibonacci(n - 1).unwrap());
        }
        assert!(fibonacci(185).is_err());
    }

    #[test]
    fn pisano_values() {
        let t: Vec<u64> = [2, 3, 4, 5, 6, 8, 10].iter().map(|&n| pisano(n).unwrap()).collect();
        assert_eq!(t, vec![3, 8, 6, 20, 24, 12, 60]);
        assert!(pisano(1).is_err());
    }

    #[test]
    fn torus_orbits() {
        let v = RotVec::new(0.0, 0.5);
        let w1 = torus_step(v);
        let w2 = torus_step(w1);
        let w3 = torus_step(w2);
        assert_eq!((w1.rho_f, w1.rho_g), (0.5, 0.5));
        assert_eq!((w2.rho_f, w2.rho_g), (0.5, 0.0));
        assert_eq!(w3, v);
        assert_eq!(orbit_period(RatVec::new(0, 1, 4).unwrap()), 6);
        assert_eq!(torus_step(RotVec::new(0.0, 0.0)), RotVec::new(0.0, 0.0));
        let r = RatVec::new(1, 2, 3).unwrap();
        assert_eq!(8 % orbit_period(r), 0);
        assert_eq!(r.step().step_back(), r);
    }

    #[test]
    fn quartic_roots() {
        let r = real_roots(&p3());
        assert_eq!(r.len(), 2);
        assert!((r[1] - 30.790).abs() < 5e-4);
        assert!((r[0] + 0.13758).abs() < 5e-5);
        let q = real_roots(&q3());
        assert!((q[1] - (2.0 * c_ell(3).unwrap()).exp()).abs() < 1e-9);
        assert!((q[0] - (-2.0 * c_ell(3).unwrap()).exp()).abs() < 1e-9);
    }

    #[test]
    fn constants_table() {
        let c = constants();
        assert!((c.c6 - 2.0 * c.c3).abs() < 1e-12);
        assert!((c.mu2_3 - (2.0 + 5f64.sqrt())).abs() < 1e-12);
        assert!((c.c3 - 0.530_637_531).abs() < 1e-9);
    }
}

//! Scaling studies near the critical energies: Lyapunov and rotation number
//! scans with log-periodic power-law fits, growth of Fibonacci powers of the
//! AM cocycle, and butterfly magnification frames.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::Serialize;

use crate::amspec::{bands_rational, top_edge, AMParams};
use crate::arith::{constants, fibonacci, ALPHA};
use crate::cocycle::{cocycle_power_norm, lyapunov, rotation_number, SkewMap};
use crate::amspec::am_skew;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Below,
    Above,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Below => -1.0,
            Side::Above => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Observable {
    Lyapunov,
    Rotation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingScan {
    pub ell: u32,
    pub observable: Observable,
    pub side: Side,
    pub e_c: f64,
    pub n_iter: usize,
    /// |E − E_ℓ|, log-spaced and increasing.
    pub eps_grid: Vec<f64>,
    pub f_values: Vec<f64>,
    pub errors: Vec<f64>,
    /// f below ten times its estimator error.
    pub flagged: Vec<bool>,
}

impl ScalingScan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,f,error,flagged\n");
        for i in 0..self.eps_grid.len() {
            s.push_str(&format!(
                "{:.15e},{:.15e},{:.6e},{}\n",
                self.eps_grid[i], self.f_values[i], self.errors[i], self.flagged[i] as u8
            ));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub exponent: f64,
    pub intercept: f64,
    /// Period in ln ε of the dominant log-periodic component.
    pub oscillation_period: f64,
    /// RMS residual of the full fit.
    pub residual: f64,
    /// RMS residual of the straight-line fit alone.
    pub linear_residual: f64,
    /// Root sum of squares of the harmonic coefficients.
    pub amplitude: f64,
    /// The oscillation amplitude exceeds three times the fit residual.
    pub oscillating: bool,
    pub points: usize,
}

/// E_ℓ at λ = 1: the top of the spectrum for ℓ = 3, zero for ℓ = 6.
pub fn scaling_energy(ell: u32) -> Result<f64> {
    match ell {
        3 => top_edge(1.0),
        6 => Ok(0.0),
        _ => Err(Error::Invalid(format!("period {ell} is not 3 or 6"))),
    }
}

/// ε_i log-spaced over [1e-6, 1e-2].
pub fn eps_grid(n_points: usize) -> Vec<f64> {
    let (a, b) = (-6.0f64, -2.0f64);
    (0..n_points)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n_points.max(2) - 1) as f64))
        .collect()
}

pub const DEFAULT_SCAN_ITERS: usize = 4_000_000;

fn check_scan(ell: u32, n_points: usize) -> Result<()> {
    if ell != 3 && ell != 6 {
        return Err(Error::Invalid(format!("period {ell} is not 3 or 6")));
    }
    if n_points < 2 {
        return Err(Error::Invalid("a scan needs at least two points".into()));
    }
    Ok(())
}

pub fn lyapunov_scaling_scan(ell: u32, side: Side, n_points: usize) -> Result<ScalingScan> {
    check_scan(ell, n_points)?;
    lyapunov_scan_at(ell, scaling_energy(ell)?, side, n_points, DEFAULT_SCAN_ITERS)
}

/// f(E) = L(E) at E = E_c ± ε.
pub fn lyapunov_scan_at(ell: u32, e_c: f64, side: Side, n_points: usize, n_iter: usize) -> Result<ScalingScan> {
    check_scan(ell, n_points)?;
    let eps = eps_grid(n_points);
    let vals = eps
        .par_iter()
        .map(|&d| {
            let g = am_skew(&AMParams::golden(e_c + side.sign() * d, 1.0));
            let est = lyapunov(&g, n_iter, 0.0)?;
            Ok((est.value.max(0.0), est.error_indicator))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(ell, Observable::Lyapunov, side, e_c, n_iter, eps, vals))
}

pub fn rotation_scaling_scan(ell: u32, side: Side, n_points: usize) -> Result<ScalingScan> {
    check_scan(ell, n_points)?;
    rotation_scan_at(ell, scaling_energy(ell)?, side, n_points, DEFAULT_SCAN_ITERS)
}

/// f(E) = 2|ϱ(E) − ϱ(E_c)| at E = E_c ± ε, differences taken mod ½.
pub fn rotation_scan_at(ell: u32, e_c: f64, side: Side, n_points: usize, n_iter: usize) -> Result<ScalingScan> {
    check_scan(ell, n_points)?;
    let rho = |e: f64| rotation_number(&am_skew(&AMParams::golden(e, 1.0)), n_iter, 0.0, 0.0);
    let base = rho(e_c)?;
    let eps = eps_grid(n_points);
    let vals = eps
        .par_iter()
        .map(|&d| {
            let est = rho(e_c + side.sign() * d)?;
            let mut diff = (est.value - base.value).rem_euclid(0.5);
            if diff > 0.25 {
                diff -= 0.5;
            }
            Ok((2.0 * diff.abs(), 2.0 * (est.error_indicator + base.error_indicator)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(ell, Observable::Rotation, side, e_c, n_iter, eps, vals))
}

fn assemble(
    ell: u32,
    observable: Observable,
    side: Side,
    e_c: f64,
    n_iter: usize,
    eps_grid: Vec<f64>,
    vals: Vec<(f64, f64)>,
) -> ScalingScan {
    let f_values: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let errors: Vec<f64> = vals.iter().map(|v| v.1).collect();
    let flagged = vals.iter().map(|(f, e)| *f < 10.0 * e).collect();
    ScalingScan { ell, observable, side, e_c, n_iter, eps_grid, f_values, errors, flagged }
}

/// Least squares for y ≈ X·c over the given columns; returns (c, rss).
fn lstsq(cols: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let m = y.len();
    let k = cols.len();
    let x = nalgebra::DMatrix::from_fn(m, k, |i, j| cols[j][i]);
    let rhs = nalgebra::DVector::from_column_slice(y);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return None;
    }
    let smin = svd.singular_values.min();
    if smin < 1e-10 * smax {
        return None;
    }
    let c = svd.solve(&rhs, 0.0).ok()?;
    let r = &x * &c - rhs;
    Some((c.iter().copied().collect(), r.norm_squared()))
}

/// Fit ln f = c + τ ln ε + Σ_h a_h cos(2πh ln ε / P) + b_h sin(2πh ln ε / P)
/// over a scan of the fundamental period P.
///
/// Every harmonic with at least four grid spacings per cycle is included,
/// and P is chosen by the Bayesian information criterion, so a period
/// whose harmonics are themselves periodic with a shorter period is still
/// reported at its fundamental. Points with f ≤ 0 or flagged as estimator
/// dominated are skipped.
pub fn fit_power_law(scan: &ScalingScan) -> Result<FitResult> {
    let mut u = Vec::new();
    let mut y = Vec::new();
    for i in 0..scan.eps_grid.len() {
        if scan.f_values[i] > 0.0 && !scan.flagged[i] {
            u.push(scan.eps_grid[i].ln());
            y.push(scan.f_values[i].ln());
        }
    }
    fit_log_periodic(&u, &y)
}

/// The log-log fit on raw (ln ε, ln f) data.
pub fn fit_log_periodic(u: &[f64], y: &[f64]) -> Result<FitResult> {
    let m = u.len();
    if m < 12 {
        return Err(Error::Degenerate(format!("{m} usable points, need 12")));
    }
    let ones = vec![1.0; m];
    let (lin, lin_rss) = lstsq(&[ones.clone(), u.to_vec()], y)
        .ok_or_else(|| Error::Degenerate("ill-conditioned linear fit".into()))?;
    let span = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - u.iter().cloned().fold(f64::INFINITY, f64::min);
    let du = span / (m - 1) as f64;
    let (p_lo, p_hi) = (4.0 * du, 0.67 * span);
    let max_h = (m - 4) / 4;
    let floor = 1e-24 * m as f64;
    let harmonic_fit = |period: f64| -> Option<(Vec<f64>, f64, f64)> {
        let harmonics = ((period / p_lo).floor() as usize).clamp(1, max_h);
        let mut cols = vec![ones.clone(), u.to_vec()];
        for h in 1..=harmonics {
            let w = TAU * h as f64 / period;
            cols.push(u.iter().map(|x| (w * x).cos()).collect());
            cols.push(u.iter().map(|x| (w * x).sin()).collect());
        }
        let k = cols.len() as f64;
        let (c, rss) = lstsq(&cols, y)?;
        let bic = m as f64 * (rss.max(floor) / m as f64).ln() + k * (m as f64).ln();
        Some((c, rss, bic))
    };
    let mut best: Option<(f64, Vec<f64>, f64, f64)> = None;
    if p_hi > p_lo {
        let steps = 4000;
        for s in 0..=steps {
            let period = p_lo * (p_hi / p_lo).powf(s as f64 / steps as f64);
            if let Some((c, rss, bic)) = harmonic_fit(period) {
                if best.as_ref().is_none_or(|b| bic < b.3) {
                    best = Some((period, c, rss, bic));
                }
            }
        }
    }
    // a series with period P also fits at kP; refine P/k and keep the best
    if let Some((p0, ..)) = best.clone() {
        for k in 1..=6 {
            let centre = p0 / k as f64;
            if centre < p_lo {
                break;
            }
            let (mut a, mut b) = (centre * 0.985, centre * 1.015);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let score = |p: f64| harmonic_fit(p).map_or(f64::INFINITY, |r| r.1);
            for _ in 0..60 {
                let (x1, x2) = (b - g * (b - a), a + g * (b - a));
                if score(x1) < score(x2) {
                    b = x2;
                } else {
                    a = x1;
                }
            }
            let period = 0.5 * (a + b);
            if let Some((c, rss, bic)) = harmonic_fit(period) {
                if best.as_ref().is_none_or(|b| bic < b.3) {
                    best = Some((period, c, rss, bic));
                }
            }
        }
    }
    let linear_residual = (lin_rss / m as f64).sqrt();
    match best {
        Some((period, c, rss, _)) => {
            let residual = (rss / m as f64).sqrt();
            let amplitude = c[2..].iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok(FitResult {
                exponent: c[1],
                intercept: c[0],
                oscillation_period: period,
                amplitude,
                residual,
                linear_residual,
                oscillating: amplitude > 3.0 * residual.max(1e-12),
                points: m,
            })
        }
        None => Ok(FitResult {
            exponent: lin[1],
            intercept: lin[0],
            oscillation_period: f64::NAN,
            amplitude: 0.0,
            residual: linear_residual,
            linear_residual,
            oscillating: false,
            points: m,
        }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthFit {
    pub slope: f64,
    pub residual: f64,
    /// (n, ln‖(mat G^{q_n})((−α*)ⁿ x0)‖).
    pub points: Vec<(u32, f64)>,
}

/// Slope of ln‖(mat G^{q_n})((−α*)ⁿ x0)‖ against n for n = ℓ, 2ℓ, …, k_max·ℓ.
pub fn growth_slope(e: f64, lambda: f64, ell: u32, k_max: u32, x0: f64) -> Result<GrowthFit> {
    if ell == 0 || k_max < 2 {
        return Err(Error::Invalid("growth slope needs ℓ ≥ 1 and k_max ≥ 2".into()));
    }
    let g: SkewMap = am_skew(&AMParams::golden(e, lambda));
    let ns: Vec<u32> = (1..=k_max).map(|k| k * ell).collect();
    let points = ns
        .par_iter()
        .map(|&n| {
            let q = fibonacci(n as usize)? as usize;
            Ok((n, cocycle_power_norm(&g, q, (-ALPHA).powi(n as i32) * x0)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (c, rss) = lstsq(&[vec![1.0; xs.len()], xs], &ys)
        .ok_or_else(|| Error::Degenerate("ill-conditioned slope fit".into()))?;
    Ok(GrowthFit { slope: c[1], residual: (rss / ys.len() as f64).sqrt(), points })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MagnificationOptions {
    /// Largest denominator in the first frame.
    pub q0_max: u64,
    pub alpha_half_width: f64,
    pub energy_half_width: f64,
    /// Energy bins per column for the overlap score.
    pub rows: usize,
    /// Denominators beyond this are refused.
    pub q_limit: u64,
}

impl MagnificationOptions {
    pub fn for_ell(ell: u32) -> Self {
        if ell == 3 {
            MagnificationOptions { q0_max: 40, alpha_half_width: 0.01, energy_half_width: 0.3, rows: 2048, q_limit: 1200 }
        } else {
            MagnificationOptions { q0_max: 45, alpha_half_width: 0.01, energy_half_width: 0.5, rows: 2048, q_limit: 1200 }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameColumn {
    pub p: u64,
    pub q: u64,
    /// Rescaled α coordinate in [−1, 1] (ahead of the sign flip for odd ℓ).
    pub u: f64,
    /// Energy center of the column.
    pub center: f64,
    /// Bands meeting the window, in rescaled energy [−1, 1].
    pub bands: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Frame {
    pub step: u32,
    pub center_alpha: f64,
    pub center_energy: f64,
    pub alpha_half_width: f64,
    pub energy_half_width: f64,
    pub columns: Vec<FrameColumn>,
}

impl Frame {
    /// Raster with α across and E up; bands black on white.
    pub fn raster(&self, width: usize, height: usize) -> Vec<u8> {
        let mut img = vec![255u8; width * height];
        for c in &self.columns {
            if c.u.abs() > 1.0 {
                continue;
            }
            let col = (((c.u + 1.0) * 0.5 * (width - 1) as f64).round() as usize).min(width - 1);
            for row in band_bins(&c.bands, height) {
                img[(height - 1 - row) * width + col] = 0;
            }
        }
        img
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Magnification {
    pub ell: u32,
    pub mu1: f64,
    pub alpha_factor: f64,
    pub frames: Vec<Frame>,
    /// Overlap of frame k with frame k + 1.
    pub overlaps: Vec<f64>,
}

/// Bins of [−1, 1] split into `rows` cells touched by any band.
fn band_bins(bands: &[(f64, f64)], rows: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let cell = |v: f64| (((v + 1.0) * 0.5 * rows as f64).floor().max(0.0) as usize).min(rows - 1);
    for &(lo, hi) in bands {
        if hi < -1.0 || lo > 1.0 {
            continue;
        }
        let (a, b) = (cell(lo.max(-1.0)), cell(hi.min(1.0)));
        out.extend(a..=b);
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Jaccard index of the band indicators of two frames whose columns
/// correspond one to one.
pub fn frame_overlap(a: &Frame, b: &Frame, rows: usize) -> Result<f64> {
    if a.columns.len() != b.columns.len() {
        return Err(Error::Invalid("frames have different columns".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (ca, cb) in a.columns.iter().zip(&b.columns) {
        let x = band_bins(&ca.bands, rows);
        let y = band_bins(&cb.bands, rows);
        let (mut i, mut j, mut both) = (0, 0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    both += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        inter += both;
        union += x.len() + y.len() - both;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// ℓ inverse Gauss steps p/q ↦ q/(p+q); these fix α* and contract by α*^{2ℓ}.
fn pull_back(p: u64, q: u64, ell: u32) -> (u64, u64) {
    let (mut p, mut q) = (p, q);
    for _ in 0..ell {
        (p, q) = (q, p + q);
    }
    (p, q)
}

/// Successive magnifications of the butterfly around (α*, E_ℓ).
///
/// Frame 0 holds the fractions with q ≤ q0_max inside the α window; the
/// columns of frame k + 1 are their images under ℓ inverse Gauss steps.
/// Energies are measured from the column's center (its top edge for ℓ = 3,
/// zero for ℓ = 6) and scaled by μ₁ per frame.
pub fn butterfly_magnification(ell: u32, steps: u32, opts: MagnificationOptions) -> Result<Magnification> {
    let c = constants();
    let mu1 = match ell {
        3 => c.mu1_3,
        6 => c.mu1_6,
        _ => return Err(Error::Invalid(format!("period {ell} is not 3 or 6"))),
    };
    let e_c = scaling_energy(ell)?;
    let alpha_factor = ALPHA.powi(2 * ell as i32);
    let mut base = Vec::new();
    for q in 1..=opts.q0_max {
        for p in 1..q {
            if crate::amspec::gcd(p, q) == 1 && (p as f64 / q as f64 - ALPHA).abs() <= opts.alpha_half_width {
                base.push((p, q));
            }
        }
    }
    if base.is_empty() {
        return Err(Error::Invalid("no fractions in the first window".into()));
    }
    let mut frames = Vec::new();
    let mut cur = base;
    for step in 0..=steps {
        if let Some(&(_, q)) = cur.iter().find(|&&(_, q)| q > opts.q_limit) {
            return Err(Error::Invalid(format!(
                "step {step} needs denominator {q} above the limit {}; lower the depth or q0_max",
                opts.q_limit
            )));
        }
        let aw = opts.alpha_half_width * alpha_factor.powi(step as i32);
        let ew = opts.energy_half_width / mu1.powi(step as i32);
        let columns = cur
            .par_iter()
            .map(|&(p, q)| {
                let set = bands_rational(p, q, 1.0)?;
                let center = if ell == 3 { set.bands.last().map_or(e_c, |b| b.hi) } else { 0.0 };
                let bands = set
                    .bands
                    .iter()
                    .map(|b| ((b.lo - center) / ew, (b.hi - center) / ew))
                    .filter(|(lo, hi)| *hi >= -1.0 && *lo <= 1.0)
                    .collect();
                Ok(FrameColumn { p, q, u: (p as f64 / q as f64 - ALPHA) / aw, center, bands })
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(Frame {
            step,
            center_alpha: ALPHA,
            center_energy: e_c,
            alpha_half_width: aw,
            energy_half_width: ew,
            columns,
        });
        cur = cur.iter().map(|&(p, q)| pull_back(p, q, ell)).collect();
    }
    let overlaps = frames
        .windows(2)
        .map(|w| frame_overlap(&w[0], &w[1], opts.rows))
        .collect::<Result<Vec<_>>>()?;
    Ok(Magnification { ell, mu1, alpha_factor, frames, overlaps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(f: impl Fn(f64) -> f64, n: usize) -> ScalingScan {
        let eps = eps_grid(n);
        let f_values: Vec<f64> = eps.iter().map(|&e| f(e)).collect();
        ScalingScan {
            ell: 3,
            observable: Observable::Lyapunov,
            side: Side::Below,
            e_c: 0.0,
            n_iter: 0,
            errors: vec![0.0; n],
            flagged: vec![false; n],
            eps_grid: eps,
            f_values,
        }
    }

    #[test]
    fn synthetic_log_periodic() {
        let s = synthetic(|e: f64| e.powf(0.4212) * (2.0 + (TAU * e.ln() / 3.427).sin()), 60);
        let fit = fit_power_law(&s).unwrap();
        assert!((fit.exponent / 0.4212 - 1.0).abs() < 0.01, "{fit:?}");
        assert!((fit.oscillation_period / 3.427 - 1.0).abs() < 0.02, "{fit:?}");
        assert!(fit.oscillating);
    }

    #[test]
    fn constant_and_pure_power() {
        let fit = fit_power_law(&synthetic(|_| 0.7, 30)).unwrap();
        assert!(fit.exponent.abs() < 1e-9);
        assert!(!fit.oscillating);
        let fit = fit_power_law(&synthetic(|e: f64| 3.0 * e.powf(0.5469), 30)).unwrap();
        assert!((fit.exponent - 0.5469).abs() < 1e-9);
        assert!(!fit.oscillating);
        assert!(fit.amplitude < 1e-9);
    }

    #[test]
    fn scale_invariance() {
        let a = fit_power_law(&synthetic(|e: f64| e.powf(0.3) * (1.5 + (e.ln()).cos()), 40)).unwrap();
        let b = fit_power_law(&synthetic(|e: f64| 17.0 * e.powf(0.3) * (1.5 + (e.ln()).cos()), 40)).unwrap();
        assert!((a.exponent - b.exponent).abs() < 1e-7, "{a:?} {b:?}");
    }

    #[test]
    fn too_few_points() {
        assert!(fit_power_law(&synthetic(|e| e, 8)).is_err());
    }

    #[test]
    fn pull_back_fixes_golden() {
        let (p, q) = pull_back(8, 13, 3);
        assert_eq!((p, q), (34, 55));
        let (p, q) = pull_back(3, 5, 6);
        assert_eq!((p, q), (55, 89));
    }
}

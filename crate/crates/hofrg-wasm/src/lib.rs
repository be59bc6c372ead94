//! Browser bindings: butterfly raster, rotation and Lyapunov curves, and
//! torus orbits of rational rotation vectors.

use hofrg::amspec::{am_skew, butterfly, AMParams};
use hofrg::arith::{orbit_period, pisano, RatVec};
use hofrg::cocycle::{lyapunov, rotation_number};
use wasm_bindgen::prelude::*;

fn js_err(e: hofrg::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Grayscale raster (row-major, `width·height` bytes, bands black) of the
/// spectra for p/q with q ≤ `q_max`.
#[wasm_bindgen]
pub fn butterfly_raster(q_max: u32, lambda: f64, width: u32, height: u32) -> Result<Vec<u8>, JsError> {
    if q_max == 0 || q_max > 60 {
        return Err(JsError::new("q_max must be in 1..=60"));
    }
    if width == 0 || height == 0 || width > 4096 || height > 4096 {
        return Err(JsError::new("raster size must be in 1..=4096"));
    }
    let b = butterfly(q_max as u64, lambda).map_err(js_err)?;
    Ok(b.raster(width as usize, height as usize))
}

/// Rotation number and Lyapunov exponent at `n` energies spread over
/// [e_min, e_max], at golden frequency; interleaved as (E, ϱ, L).
#[wasm_bindgen]
pub fn spectral_curve(lambda: f64, e_min: f64, e_max: f64, n: u32, iters: u32) -> Result<Vec<f64>, JsError> {
    if !(2..=2000).contains(&n) || !(e_max > e_min) {
        return Err(JsError::new("need 2 ≤ n ≤ 2000 and e_min < e_max"));
    }
    if iters < 100 {
        return Err(JsError::new("iters must be at least 100"));
    }
    let mut out = Vec::with_capacity(3 * n as usize);
    for i in 0..n {
        let e = e_min + (e_max - e_min) * i as f64 / (n - 1) as f64;
        let g = am_skew(&AMParams::golden(e, lambda));
        let r = rotation_number(&g, iters as usize, 0.0, 0.0).map_err(js_err)?.value;
        let l = lyapunov(&g, iters as usize, 0.0).map_err(js_err)?.value;
        out.extend([e, r, l.max(0.0)]);
    }
    Ok(out)
}

/// Orbit of (f/n, g/n) under (ϱ_F, ϱ_G) ↦ (ϱ_G, ϱ_F − ϱ_G), flattened as
/// numerator pairs; one full period.
#[wasm_bindgen]
pub fn torus_orbit(f: i32, g: i32, n: u32) -> Result<Vec<u32>, JsError> {
    if n == 0 || n > 10_000 {
        return Err(JsError::new("n must be in 1..=10000"));
    }
    let v0 = RatVec::new(f as i64, g as i64, n as u64).map_err(js_err)?;
    let len = orbit_period(v0);
    let mut v = v0;
    let mut out = Vec::with_capacity(2 * len as usize);
    for _ in 0..len {
        out.extend([v.f as u32, v.g as u32]);
        v = v.step();
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn pisano_period(n: u32) -> Result<u32, JsError> {
    if n == 0 {
        return Err(JsError::new("n must be positive"));
    }
    Ok(pisano(n as u64).map_err(js_err)? as u32)
}

use hofrg::arith::constants;
use hofrg::experiments::{
    butterfly_magnification, fit_log_periodic, growth_slope, rotation_scan_at, MagnificationOptions, Side,
};

#[test]
fn magnification_ell6_is_self_similar() {
    let m = butterfly_magnification(6, 1, MagnificationOptions::for_ell(6)).unwrap();
    assert_eq!(m.frames.len(), 2);
    assert!(m.overlaps[0] > 0.9, "{:?}", m.overlaps);
}

#[test]
fn magnification_ell3_improves_with_depth() {
    let m = butterfly_magnification(3, 2, MagnificationOptions::for_ell(3)).unwrap();
    assert!(m.overlaps[1] > m.overlaps[0], "{:?}", m.overlaps);
    assert!(m.overlaps[1] > 0.9, "{:?}", m.overlaps);
}

#[test]
fn zero_magnification_steps_return_the_window() {
    let opts = MagnificationOptions::for_ell(6);
    let m = butterfly_magnification(6, 0, opts).unwrap();
    assert_eq!(m.frames.len(), 1);
    assert!(m.overlaps.is_empty());
    let f = &m.frames[0];
    assert_eq!(f.step, 0);
    assert_eq!(f.alpha_half_width, opts.alpha_half_width);
    assert_eq!(f.energy_half_width, opts.energy_half_width);
    assert!(f.columns.iter().all(|c| c.q <= opts.q0_max && c.u.abs() <= 1.0));
}

#[test]
fn growth_slope_is_independent_of_base_point() {
    let e = hofrg::experiments::scaling_energy(3).unwrap();
    let a = growth_slope(e, 1.0, 3, 5, 0.0).unwrap();
    let b = growth_slope(e, 1.0, 3, 5, 0.2).unwrap();
    assert!((a.slope - b.slope).abs() < 0.01, "{} {}", a.slope, b.slope);
}

#[test]
fn fit_recovers_a_synthetic_law() {
    let period = 1.3;
    let u: Vec<f64> = (0..80).map(|i| -13.8 + 9.2 * i as f64 / 79.0).collect();
    let y: Vec<f64> = u
        .iter()
        .map(|&x| 0.7 + 0.55 * x + 0.05 * (std::f64::consts::TAU * x / period).sin())
        .collect();
    let fit = fit_log_periodic(&u, &y).unwrap();
    assert!((fit.exponent - 0.55).abs() < 0.005);
    assert!((fit.oscillation_period - period).abs() < 0.03, "{fit:?}");
    assert!(fit.oscillating);
}

#[test]
fn rotation_scan_ell6_matches_tau() {
    let e = hofrg::experiments::scaling_energy(6).unwrap();
    let scan = rotation_scan_at(6, e, Side::Above, 24, 500_000).unwrap();
    let fit = hofrg::experiments::fit_power_law(&scan).unwrap();
    let tau = constants().tau6;
    assert!((fit.exponent - tau).abs() / tau < 0.05, "{} vs {tau}", fit.exponent);
}

//! Acceptance run: one line per criterion, nonzero exit on an undocumented
//! failure.

use std::process::Command;
use std::time::Instant;

use hofrg::amspec::{
    am_pair, am_skew, bands_rational, farey, find_critical_energy, gap_label, ids_rational, AMParams, RotTarget,
};
use hofrg::arith::{
    self, constants, largest_real_root, orbit_period, pisano, real_roots, torus_matrix_pow, torus_step, RatVec,
    RotVec, ALPHA,
};
use hofrg::cocycle::{compose, lyapunov, rotation_number, SkewMap};
use hofrg::experiments::{fit_power_law, growth_slope, lyapunov_scan_at, scaling_energy, Side};
use hofrg::renorm::{
    jacobian_spectrum, renorm_r, solve_fixed_point, unstable_multiplier_at, FixedPointOptions, FixedPointRun, Letter,
    Scheme, Word,
};

enum Verdict {
    Pass,
    Fail,
    /// Fails, with the reason recorded in the decisions ledger.
    Deviation,
}

struct Line {
    id: u32,
    verdict: Verdict,
    detail: String,
    seconds: f64,
}

fn timed(id: u32, f: impl FnOnce() -> (Verdict, String)) -> Line {
    let t = Instant::now();
    let (verdict, detail) = f();
    Line { id, verdict, detail, seconds: t.elapsed().as_secs_f64() }
}

fn ok(b: bool) -> Verdict {
    if b {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn circ(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

fn c1() -> (Verdict, String) {
    let t = Instant::now();
    let mut gaps = 0;
    let mut bad = Vec::new();
    for (p, q) in farey(30) {
        if q < 2 {
            continue;
        }
        let bs = match bands_rational(p, q, 1.0) {
            Ok(b) => b,
            Err(e) => {
                bad.push(format!("{p}/{q}: {e}"));
                continue;
            }
        };
        for r in 1..q {
            let k = bs.labels[(r - 1) as usize];
            let lo = bs.bands[(r - 1) as usize].hi;
            let hi = bs.bands[r as usize].lo;
            let congruent = (k * p as i64 - r as i64).rem_euclid(q as i64) == 0 && k == gap_label(p, q, r);
            // even q: the central gap is closed at λ = 1
            let ids_ok = if hi - lo > 1e-9 {
                let d = ids_rational(p, q, 1.0, 0.5 * (lo + hi)).map(|d| d.num * q == r * d.den).unwrap_or(false);
                gaps += 1;
                d
            } else {
                true
            };
            if !(congruent && ids_ok) {
                bad.push(format!("{p}/{q} r={r}"));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    (ok(bad.is_empty() && secs < 30.0), format!("{gaps} open gaps labelled, {} violations, {secs:.1} s", bad.len()))
}

fn c2() -> (Verdict, String) {
    let t = Instant::now();
    let bs = bands_rational(1, 2, 1.0).unwrap();
    let r8 = 8f64.sqrt();
    let (b0, b1) = (bs.bands[0], bs.bands[1]);
    let edges = (b0.lo + r8).abs().max((b1.hi - r8).abs());
    let touch = b0.hi.abs().max(b1.lo.abs());
    let secs = t.elapsed().as_secs_f64();
    (
        ok(edges < 1e-9 && touch < 1e-7 && secs < 1.0),
        format!("edge error {edges:.1e}, inner edges {:.1e} {:.1e}", b0.hi, b1.lo),
    )
}

fn c3() -> (Verdict, String) {
    let d = [0.0, 1.0, 2.5].map(|e| am_pair(e, 1.0).unwrap().reversibility_defect());
    let worst = d.iter().fold(0.0f64, |m, x| m.max(*x));
    (ok(worst < 1e-10), format!("max defect {worst:.1e}"))
}

fn c4() -> (Verdict, String) {
    let t = Instant::now();
    let r = rotation_number(&am_skew(&AMParams::golden(0.0, 1.0)), 1_000_000, 0.0, 0.0).unwrap().value;
    let t1 = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let l = lyapunov(&am_skew(&AMParams::golden(0.0, 2.0)), 1_000_000, 0.0).unwrap().value;
    let t2 = t.elapsed().as_secs_f64();
    (
        ok((r - 0.25).abs() < 1e-4 && (l - 2f64.ln()).abs() < 1e-3 && t1 < 10.0 && t2 < 10.0),
        format!("ϱ = {r:.6}, L = {l:.6} (ln 2 = {:.6})", 2f64.ln()),
    )
}

fn c5() -> (Verdict, String) {
    let t = Instant::now();
    let cases = [(0.5, 2.597), (0.125, 1.990), (1.0 / 6.0, 1.888), (ALPHA * ALPHA / 2.0, 1.874)];
    let mut good = true;
    let mut parts = Vec::new();
    for (rho, want) in cases {
        let e = find_critical_energy(RotTarget { rho }, 1.0, 1e-10).unwrap().e;
        good &= (e - want).abs() <= 2e-3;
        parts.push(format!("{e:.5}"));
    }
    let secs = t.elapsed().as_secs_f64();
    (ok(good && secs < 300.0), format!("E = [{}], {secs:.1} s", parts.join(", ")))
}

fn c6(r3: &FixedPointRun, t3: f64, r6: &FixedPointRun, t6: f64) -> (Verdict, String) {
    let c = constants();
    let s3 = r3.sigma;
    let s6 = r6.sigma;
    let d3 = (s3.sigma - c.c3).abs();
    let d6 = (s6.sigma - c.c6).abs();
    (
        ok(d3 <= 1e-4 && s3.periods >= 6 && t3 < 120.0 && d6 <= 1e-3 && t6 < 600.0),
        format!(
            "ℓ=3 σ̂ = {:.7} (|Δ| {d3:.1e}, {} periods, {t3:.0} s); ℓ=6 σ̂ = {:.7} (|Δ| {d6:.1e}, {} periods, {t6:.0} s)",
            s3.sigma, s3.periods, s6.sigma, s6.periods
        ),
    )
}

fn c7(r3: &FixedPointRun, r6: &FixedPointRun) -> (Verdict, String) {
    let m3 = unstable_multiplier_at(r3, 1.0, 1e-7, 1, 8).unwrap().mu;
    let m6 = unstable_multiplier_at(r6, 1.0, 1e-7, 1, 8).unwrap().mu;
    let p3 = largest_real_root(&arith::p3());
    let p6 = largest_real_root(&arith::p6());
    let res3 = arith::p3().eval(p3).abs() / arith::p3().deriv(p3).abs();
    let res6 = arith::p6().eval(p6).abs() / arith::p6().deriv(p6).abs();
    // quoted digits are truncated
    let digits = |x: f64, d: i32, want: f64| ((x * 10f64.powi(d)).floor() - want * 10f64.powi(d)).abs() < 0.5;
    let roots = res3 < 1e-9 && res6 < 1e-9 && digits(p3, 3, 30.790) && digits(p6, 2, 196.29);
    (
        ok((m3 / 30.790 - 1.0).abs() < 0.01 && (m6 / 196.29 - 1.0).abs() < 0.01 && roots),
        format!("μ₁ = {m3:.4} (ℓ=3), {m6:.3} (ℓ=6); P₃, P₆ roots {p3:.9}, {p6:.9}"),
    )
}

fn c8(r3: &FixedPointRun) -> (Verdict, String) {
    let t = Instant::now();
    let rep = jacobian_spectrum(&r3.pair, 3, 16).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let unstable = rep.unstable_admissible();
    let mu2 = ALPHA.powi(-3);
    let has_mu2 = unstable.iter().any(|m| (m / mu2 - 1.0).abs() < 0.01);
    let minus_one = rep.modes.iter().any(|m| m.im.abs() < 1e-6 && (m.re + 1.0).abs() < 0.02);
    (
        ok(unstable.len() == 2 && has_mu2 && minus_one && secs < 1800.0),
        format!("admissible |μ| ≥ 1: {unstable:.4?}; −1 present: {minus_one}; {secs:.0} s"),
    )
}

/// Returns the verdict for the exponent and branch clauses and, separately,
/// for the period clause.
fn c9() -> ((Verdict, String), (Verdict, String)) {
    let t = Instant::now();
    let c = constants();
    let e3 = scaling_energy(3).unwrap();
    let below = lyapunov_scan_at(3, e3, Side::Below, 64, 2_000_000).unwrap();
    let above = lyapunov_scan_at(3, e3, Side::Above, 64, 2_000_000).unwrap();
    let fb = fit_power_law(&below).unwrap();
    let fa = fit_power_law(&above).unwrap();
    // estimator noise of ln f on the above branch
    let rel: Vec<f64> = above
        .errors
        .iter()
        .zip(&above.f_values)
        .filter(|(_, f)| **f > 0.0)
        .map(|(e, f)| e / f)
        .collect();
    let noise = (rel.iter().map(|x| x * x).sum::<f64>() / rel.len() as f64).sqrt();
    let secs = t.elapsed().as_secs_f64();
    let exp_ok = (fb.exponent / c.tau3 - 1.0).abs() < 0.05;
    let flat = fa.amplitude < noise && !fa.oscillating;
    let main = (
        ok(exp_ok && flat && secs < 1800.0),
        format!(
            "exponent {:.4} below, {:.4} above (τ₃ {:.4}); above amplitude {:.1e} vs noise {noise:.1e}; {secs:.0} s",
            fb.exponent, fa.exponent, c.tau3, fa.amplitude
        ),
    );
    // the residual is ln μ₁-periodic but its fundamental period is ln μ₁ / 3
    let target = c.mu1_3.ln();
    let period_ok = (fb.oscillation_period / target - 1.0).abs() < 0.1;
    let period = (
        if period_ok { Verdict::Pass } else { Verdict::Deviation },
        format!(
            "fitted period {:.4} vs ln μ₁ = {target:.4} (ratio {:.3}; ln μ₁ / 3 = {:.4})",
            fb.oscillation_period,
            target / fb.oscillation_period,
            target / 3.0
        ),
    );
    (main, period)
}

fn c10() -> (Verdict, String) {
    let t = Instant::now();
    let e3 = scaling_energy(3).unwrap();
    let g = growth_slope(e3, 1.0, 3, 6, 0.0).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let want = 0.35376;
    (ok((g.slope / want - 1.0).abs() < 0.02 && secs < 300.0), format!("slope {:.5} vs {want}, {secs:.1} s", g.slope))
}

fn c11() -> (Verdict, String) {
    let t = Instant::now();
    let mut good = true;
    let table = [(2, 3), (4, 6), (6, 24), (8, 12)];
    for (n, l) in table {
        good &= pisano(n).unwrap() == l;
    }
    for n in 2..=12u64 {
        let l = pisano(n).unwrap();
        for m in 1..n {
            good &= orbit_period(RatVec::new(0, m as i64, n).unwrap()) <= l;
        }
        good &= orbit_period(RatVec::new(0, 1, n).unwrap()) == l;
        good &= torus_matrix_pow(l, n) == [[1, 0], [0, 1]];
    }
    let c = constants();
    let mut worst = 0.0f64;
    for (p, ell) in [(arith::p3(), 3), (arith::p6(), 6)] {
        let r = real_roots(&p);
        good &= r.len() == 2;
        worst = worst.max((r[0] * r[1] / (-ALPHA).powi(-ell) - 1.0).abs());
    }
    // μ₁^{1/3} and μ₁^{1/2} satisfy the companion quartics
    let z3 = c.mu1_3.cbrt();
    let z6 = c.mu1_6.sqrt();
    worst = worst.max(arith::cube_root_quartic().eval(z3).abs() / arith::cube_root_quartic().deriv(z3).abs());
    worst = worst.max(arith::square_root_quartic().eval(z6).abs() / arith::square_root_quartic().deriv(z6).abs());
    for (q, cl) in [(arith::q3(), c.c3), (arith::q6(), c.c6)] {
        let r = real_roots(&q);
        good &= r.len() == 2;
        worst = worst.max((r[0] - (-2.0 * cl).exp()).abs()).max((r[1] - (2.0 * cl).exp()).abs());
    }
    let c62 = (c.c6 - 2.0 * c.c3).abs();
    let secs = t.elapsed().as_secs_f64();
    (
        ok(good && worst < 1e-9 && c62 < 1e-12 && secs < 1.0),
        format!("root identities to {worst:.1e}, |c₆ − 2c₃| = {c62:.1e}, {:.0} ms", secs * 1e3),
    )
}

fn rho(m: &SkewMap) -> f64 {
    rotation_number(m, 200_000, 0.1, 0.0).unwrap().value
}

fn run_cli(workers: usize, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_hofrg"))
        .arg("--workers")
        .arg(workers.to_string())
        .args(args)
        .output()
        .expect("run hofrg");
    assert!(out.status.success(), "hofrg {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn c12() -> (Verdict, String) {
    let mut notes = Vec::new();
    let mut good = true;

    let mut det = 0.0f64;
    let mut hom = 0.0f64;
    let words = [
        vec![Letter::G, Letter::Fi, Letter::G],
        vec![Letter::Gi, Letter::F, Letter::Gi],
        vec![Letter::F, Letter::G],
    ];
    for e in [-2.0, -0.5, 0.7, 1.9] {
        let p = am_pair(e, 1.0).unwrap();
        det = det.max(renorm_r(&p).unwrap().0.det_defect());
        det = det.max(Scheme::R3Pal.apply(&p).unwrap().0.det_defect());
        for a in &words {
            for b in &words {
                let (a, b) = (Word(a.clone()), Word(b.clone()));
                let x = -0.3;
                let whole = a.then(&b).eval(&p, x).unwrap();
                let split = b.eval(&p, x + a.freq().value()).unwrap() * a.eval(&p, x).unwrap();
                hom = hom.max((whole - split).max_abs());
            }
        }
    }
    good &= det < 1e-10 && hom < 1e-10;
    notes.push(format!("det {det:.0e}, hom {hom:.0e}"));

    let mut add = 0.0f64;
    let mut transport = 0.0f64;
    for e in [-2.1, -0.8, 0.3, 1.4, 2.3] {
        let p = am_pair(e, 1.0).unwrap();
        let (f, g) = p.periodic_components(1.0).unwrap();
        let image = torus_step(RotVec::new(rho(&f), rho(&g)));
        let (q, _) = renorm_r(&p).unwrap();
        let (f1, g1) = q.periodic_components(1.0 / ALPHA).unwrap();
        let (r1, r2) = (rho(&f1), rho(&g1));
        // Λ₁ conjugates by S and so reverses the fiber orientation
        transport = transport.max(circ(r1, -image.rho_f)).max(circ(r2, -image.rho_g));
        add = add.max(circ(rho(&compose(&f1, &g1)), r1 + r2));
    }
    good &= transport < 1e-3 && add < 1e-3;
    notes.push(format!("transport {transport:.0e}, additivity {add:.0e}"));

    let mut pal = 0.0f64;
    for e in [0.0, 1.3, 2.59] {
        let p = am_pair(e, 1.0).unwrap();
        pal = pal.max(Scheme::R3Pal.apply(&p).unwrap().0.dist(&Scheme::R3Plain.apply(&p).unwrap().0));
    }
    good &= pal < 1e-5;
    notes.push(format!("palindromic {pal:.0e}"));

    let cases: [&[&str]; 6] = [
        &["butterfly", "--qmax", "12"],
        &["--format", "pgm", "butterfly", "--qmax", "10", "--width", "200", "--height", "150"],
        &["pisano", "--qmax", "24"],
        &["critical", "--rho", "1/8"],
        &["--format", "csv", "scaling", "--ell", "6", "--points", "16", "--iters", "100000", "--observable", "rotation"],
        &["growth", "--ell", "3", "--iters", "4"],
    ];
    let mut same = 0;
    for args in cases {
        if run_cli(1, args) == run_cli(8, args) {
            same += 1;
        }
    }
    good &= same == cases.len();
    notes.push(format!("CLI byte-identical {same}/{}", cases.len()));
    (ok(good), notes.join("; "))
}

fn main() {
    let mut lines = vec![timed(1, c1), timed(2, c2), timed(3, c3), timed(4, c4), timed(5, c5)];

    let t = Instant::now();
    let r3 = solve_fixed_point(3, 1.0, None, FixedPointOptions::for_ell(3)).expect("ℓ=3 fixed point");
    let t3 = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let r6 = solve_fixed_point(6, 1.0, None, FixedPointOptions::for_ell(6)).expect("ℓ=6 fixed point");
    let t6 = t.elapsed().as_secs_f64();
    lines.push(timed(6, || c6(&r3, t3, &r6, t6)));
    lines.push(timed(7, || c7(&r3, &r6)));
    lines.push(timed(8, || c8(&r3)));

    let t = Instant::now();
    let (main9, period9) = c9();
    let s9 = t.elapsed().as_secs_f64();
    lines.push(Line { id: 9, verdict: main9.0, detail: main9.1, seconds: s9 });
    lines.push(Line { id: 9, verdict: period9.0, detail: period9.1, seconds: 0.0 });

    lines.push(timed(10, c10));
    lines.push(timed(11, c11));
    lines.push(timed(12, c12));

    let mut failed = 0;
    for l in &lines {
        let tag = match l.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Deviation => "FAIL (documented deviation)",
        };
        println!("criterion {:>2}: {tag}  {}  [{:.1} s]", l.id, l.detail, l.seconds);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

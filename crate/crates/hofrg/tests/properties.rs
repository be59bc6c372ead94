use hofrg::amspec::am_pair;
use hofrg::arith::{torus_step, RotVec, ALPHA};
use hofrg::cocycle::{compose, rotation_number, SkewMap};
use hofrg::renorm::{renorm_r, Letter, Pair, Scheme, Word};
use proptest::prelude::*;

fn circ(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

fn rho(m: &SkewMap) -> f64 {
    rotation_number(m, 200_000, 0.1, 0.0).unwrap().value
}

fn letter() -> impl Strategy<Value = Letter> {
    prop_oneof![Just(Letter::F), Just(Letter::Fi), Just(Letter::G), Just(Letter::Gi)]
}

fn stays_inside(w: &Word, x: f64, r: f64) -> bool {
    let mut pos = x;
    w.0.iter().all(|l| {
        pos += match l {
            Letter::F => 1.0,
            Letter::Fi => -1.0,
            Letter::G => ALPHA,
            Letter::Gi => -ALPHA,
        };
        pos.abs() < r - 0.05
    })
}

fn small_pair(e: f64, lambda: f64) -> Pair {
    am_pair(e, lambda).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn renormalization_preserves_determinant(e in -2.5f64..2.5, lambda in 0.6f64..1.4) {
        let p = small_pair(e, lambda);
        let (q, _) = renorm_r(&p).unwrap();
        prop_assert!(q.det_defect() < 1e-10, "{}", q.det_defect());
        let (q3, _) = Scheme::R3Pal.apply(&p).unwrap();
        prop_assert!(q3.det_defect() < 1e-10, "{}", q3.det_defect());
    }

    #[test]
    fn word_evaluation_is_a_homomorphism(
        w1 in prop::collection::vec(letter(), 1..5),
        w2 in prop::collection::vec(letter(), 1..5),
        x in -0.5f64..0.5,
        e in -2.0f64..2.0,
    ) {
        let p = small_pair(e, 1.0);
        let (a, b) = (Word(w1), Word(w2));
        prop_assume!(stays_inside(&a.then(&b), x, p.radius()));
        let whole = a.then(&b).eval(&p, x).unwrap();
        let split = b.eval(&p, x + a.freq().value()).unwrap() * a.eval(&p, x).unwrap();
        prop_assert!((whole - split).max_abs() < 1e-9 * (1.0 + whole.max_abs()));
        let id = a.then(&a.inverse()).eval(&p, x).unwrap();
        prop_assert!((id - hofrg::sl2::Mat2::I).max_abs() < 1e-9);
    }
}

#[test]
fn rotation_number_is_additive_on_commuting_pairs() {
    for e in [0.4, 1.3, 2.2] {
        let (q, _) = renorm_r(&small_pair(e, 1.0)).unwrap();
        let (f, g) = q.periodic_components(1.0 / ALPHA).unwrap();
        let sum = rho(&f) + rho(&g);
        assert!(circ(rho(&compose(&f, &g)), sum) < 1e-4, "E={e}");
    }
}

/// Λ₁ conjugates by S, which reverses orientation, so the measured rotation
/// vector is the negative of the torus image.
#[test]
fn rotation_vector_transport_under_r() {
    for e in [-2.1, -0.8, 0.3, 1.4, 2.3] {
        let p = small_pair(e, 1.0);
        let (f, g) = p.periodic_components(1.0).unwrap();
        let image = torus_step(RotVec::new(rho(&f), rho(&g)));
        let (q, _) = renorm_r(&p).unwrap();
        let (f1, g1) = q.periodic_components(1.0 / ALPHA).unwrap();
        assert!(circ(rho(&f1), -image.rho_f) < 1e-3, "E={e}");
        assert!(circ(rho(&g1), -image.rho_g) < 1e-3, "E={e}");
    }
}

#[test]
fn palindromic_and_iterated_schemes_agree_on_commuting_pairs() {
    for e in [0.0, 1.3, 2.59] {
        let p = small_pair(e, 1.0);
        let (a, sa) = Scheme::R3Pal.apply(&p).unwrap();
        let (b, sb) = Scheme::R3Plain.apply(&p).unwrap();
        assert!(a.dist(&b) < 1e-5, "E={e}: {}", a.dist(&b));
        assert!((sa - sb).abs() < 1e-8);
        let (c, _) = Scheme::R6Pal.apply(&p).unwrap();
        let (d, _) = Scheme::R6Plain.apply(&p).unwrap();
        assert!(c.dist(&d) < 1e-5, "E={e}: {}", c.dist(&d));
    }
}

#[test]
fn palindromic_scheme_keeps_reversibility_without_commutation() {
    let p = small_pair(1.1, 1.0);
    let bump = hofrg::sl2::PolyMat::from_fn(
        |x| {
            let t = 0.05 * (1.0 + x * x).recip();
            Ok(hofrg::sl2::Mat2::new(t.cosh(), t.sinh(), t.sinh(), t.cosh()))
        },
        p.degree(),
        p.radius(),
    )
    .unwrap();
    let b = p.b.mul(&bump).unwrap();
    let q = Pair::new(b, p.a.clone()).unwrap();
    assert!(q.commutation_defect() > 1e-3);
    let (r, _) = Scheme::R3Pal.apply(&q).unwrap();
    assert!(r.reversibility_defect() <= 10.0 * q.reversibility_defect().max(1e-10), "{}", r.reversibility_defect());
}

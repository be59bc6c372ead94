//! Renormalization of reversible commuting pairs P = (F, G) with
//! F = (1, B) and G = (α*, A): shift steps on words, the scaling Λ_ℓ,
//! fixed points and their linearization.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::amspec::{am_pair_with, top_edge};
use crate::arith::ALPHA;
use crate::cocycle::{commutation_defect, reversibility_defect, SkewMap};
use crate::error::{Error, Result};
use crate::sl2::{exp_sigma_s, s_split, Mat2, PolyMat};

/// Sup-norm above which an iteration counts as divergent.
pub const BLOWUP_TOL: f64 = 1e6;
/// Inter-iterate distance below which an iteration counts as converged.
pub const CONV_TOL: f64 = 1e-9;
/// Inter-iterate distance below which a period counts toward σ*.
pub const PERIOD_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Pair {
    pub b: PolyMat,
    pub a: PolyMat,
}

impl Pair {
    pub fn new(b: PolyMat, a: PolyMat) -> Result<Self> {
        if b.degree() != a.degree() || b.radius() != a.radius() {
            return Err(Error::Mismatch {
                n1: b.degree(),
                n2: a.degree(),
                r1: b.radius(),
                r2: a.radius(),
            });
        }
        Ok(Pair { b, a })
    }

    pub fn degree(&self) -> usize {
        self.a.degree()
    }

    pub fn radius(&self) -> f64 {
        self.a.radius()
    }

    pub fn f(&self) -> SkewMap {
        SkewMap::poly(1.0, self.b.clone())
    }

    pub fn g(&self) -> SkewMap {
        SkewMap::poly(ALPHA, self.a.clone())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.b.to_vec();
        v.extend(self.a.to_vec());
        v
    }

    pub fn from_vec(v: &[f64], n: usize, r: f64) -> Self {
        let h = v.len() / 2;
        Pair {
            b: PolyMat::from_slice(&v[..h], n, r),
            a: PolyMat::from_slice(&v[h..], n, r),
        }
    }

    pub fn dist(&self, o: &Pair) -> f64 {
        self.b.sup_dist(&o.b).max(self.a.sup_dist(&o.a))
    }

    pub fn sup_norm(&self) -> f64 {
        self.b.sup_norm().max(self.a.sup_norm())
    }

    pub fn commutation_defect(&self) -> f64 {
        commutation_defect(&self.f(), &self.g())
    }

    pub fn reversibility_defect(&self) -> f64 {
        reversibility_defect(&self.f()).max(reversibility_defect(&self.g()))
    }

    pub fn det_defect(&self) -> f64 {
        self.b.det_defect().max(self.a.det_defect())
    }

    /// Components as skew maps whose fibers are extended periodically from
    /// [−period/2, period/2].
    pub fn periodic_components(&self, period: f64) -> Result<(SkewMap, SkewMap)> {
        if period > 2.0 * self.radius() {
            return Err(Error::Domain { x: 0.5 * period, r: self.radius() });
        }
        let wrap = move |x: f64| x - period * (x / period).round();
        let (b, a) = (self.b.clone(), self.a.clone());
        let f = SkewMap::func(1.0, Some(period), move |x| b.eval(wrap(x)));
        let g = SkewMap::func(ALPHA, Some(period), move |x| a.eval(wrap(x)));
        Ok((f, g))
    }
}

/// Frequency m + n·α* held exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Sym {
    pub m: i64,
    pub n: i64,
}

impl Sym {
    pub fn value(self) -> f64 {
        self.m as f64 + self.n as f64 * ALPHA
    }

    fn add(self, o: Sym) -> Sym {
        Sym { m: self.m + o.m, n: self.n + o.n }
    }
}

/// α*^k in the form m + nα*, from α*² = 1 − α*.
pub fn alpha_pow(k: u32) -> Sym {
    let mut s = Sym { m: 1, n: 0 };
    for _ in 0..k {
        s = Sym { m: s.n, n: s.m - s.n };
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Letter {
    F,
    Fi,
    G,
    Gi,
}

impl Letter {
    pub fn inv(self) -> Letter {
        match self {
            Letter::F => Letter::Fi,
            Letter::Fi => Letter::F,
            Letter::G => Letter::Gi,
            Letter::Gi => Letter::G,
        }
    }

    fn freq(self) -> Sym {
        match self {
            Letter::F => Sym { m: 1, n: 0 },
            Letter::Fi => Sym { m: -1, n: 0 },
            Letter::G => Sym { m: 0, n: 1 },
            Letter::Gi => Sym { m: 0, n: -1 },
        }
    }
}

/// Word in the letters of a pair, listed in application order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Word(pub Vec<Letter>);

impl Word {
    pub fn freq(&self) -> Sym {
        self.0.iter().fold(Sym { m: 0, n: 0 }, |s, l| s.add(l.freq()))
    }

    pub fn inverse(&self) -> Word {
        Word(self.0.iter().rev().map(|l| l.inv()).collect())
    }

    pub fn then(&self, o: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&o.0);
        Word(v)
    }

    pub fn is_palindrome(&self) -> bool {
        self.0.iter().eq(self.0.iter().rev())
    }

    /// Matrix part of the composed map at x. Inverses use the adjugate, so
    /// the evaluation stays linear in each fiber off the SL(2) locus.
    pub fn eval(&self, p: &Pair, x: f64) -> Result<Mat2> {
        let mut pos = x;
        let mut m = Mat2::I;
        for l in &self.0 {
            match l {
                Letter::F => {
                    m = p.b.eval(pos)? * m;
                    pos += 1.0;
                }
                Letter::Fi => {
                    pos -= 1.0;
                    m = p.b.eval(pos)?.adjugate() * m;
                }
                Letter::G => {
                    m = p.a.eval(pos)? * m;
                    pos += ALPHA;
                }
                Letter::Gi => {
                    pos -= ALPHA;
                    m = p.a.eval(pos)?.adjugate() * m;
                }
            }
        }
        Ok(m)
    }
}

/// Pair of words over a base pair, before any rescaling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RawPair {
    pub f: Word,
    pub g: Word,
}

impl RawPair {
    pub fn identity() -> Self {
        RawPair { f: Word(vec![Letter::F]), g: Word(vec![Letter::G]) }
    }

    pub fn freqs(&self) -> (Sym, Sym) {
        (self.f.freq(), self.g.freq())
    }
}

/// (F, G) ↦ (G, F∘G⁻¹).
pub fn shift_step(raw: &RawPair) -> RawPair {
    RawPair { f: raw.g.clone(), g: raw.g.inverse().then(&raw.f) }
}

/// (F, G) ↦ (GF⁻¹G, G⁻¹FG⁻¹FG⁻¹).
pub fn palindromic_step(raw: &RawPair) -> RawPair {
    let (f, g) = (&raw.f, &raw.g);
    let gi = g.inverse();
    RawPair {
        f: g.then(&f.inverse()).then(g),
        g: gi.then(f).then(&gi).then(f).then(&gi),
    }
}

fn s_pow(ell: u32) -> Mat2 {
    if ell % 2 == 1 {
        Mat2::S
    } else {
        Mat2::I
    }
}

/// σ with e^{−σS} M e^{σS} balanced: |c_pm| = |c_mp|.
pub fn balance_sigma(m: Mat2) -> Result<f64> {
    let s = s_split(m);
    if s.c_pm.abs() < 1e-14 || s.c_mp.abs() < 1e-14 {
        return Err(Error::Degenerate(format!(
            "antidiagonal S-components {:e}, {:e}",
            s.c_pm, s.c_mp
        )));
    }
    Ok(0.25 * (s.c_pm.abs() / s.c_mp.abs()).ln())
}

/// Normalizing σ for words that are about to be scaled by Λ_ℓ: the
/// balance condition is imposed on S^ℓ (mat G)(0) S^ℓ.
pub fn normalize_sigma(base: &Pair, raw: &RawPair, ell: u32) -> Result<f64> {
    let sl = s_pow(ell);
    balance_sigma(sl * raw.g.eval(base, 0.0)? * sl)
}

/// Conjugation of both fibers by Λ_ℓ: x ↦ α*^ℓ x and C = S^ℓ e^{σS}.
pub fn scale_pair(p: &Pair, ell: u32, sigma: f64) -> Result<Pair> {
    let s = ALPHA.powi(ell as i32);
    let c = s_pow(ell) * exp_sigma_s(sigma);
    let ci = exp_sigma_s(-sigma) * s_pow(ell);
    let (n, r) = (p.degree(), p.radius());
    Ok(Pair {
        b: PolyMat::from_fn(|x| Ok(ci * p.b.eval(s * x)? * c), n, r)?,
        a: PolyMat::from_fn(|x| Ok(ci * p.a.eval(s * x)? * c), n, r)?,
    })
}

/// Λ_ℓ⁻¹ ∘ words ∘ Λ_ℓ with σ from `normalize_sigma`.
pub fn renormalize_words(base: &Pair, raw: &RawPair, ell: u32) -> Result<(Pair, f64)> {
    let (ff, fg) = raw.freqs();
    if ff != alpha_pow(ell) || fg != alpha_pow(ell + 1) {
        return Err(Error::Invalid(format!(
            "word frequencies {ff:?}, {fg:?} do not match Λ_{ell}"
        )));
    }
    let sigma = normalize_sigma(base, raw, ell)?;
    let s = ALPHA.powi(ell as i32);
    let c = s_pow(ell) * exp_sigma_s(sigma);
    let ci = exp_sigma_s(-sigma) * s_pow(ell);
    let (n, r) = (base.degree(), base.radius());
    let out = Pair {
        b: PolyMat::from_fn(|x| unit_det(ci * raw.f.eval(base, s * x)? * c), n, r)?,
        a: PolyMat::from_fn(|x| unit_det(ci * raw.g.eval(base, s * x)? * c), n, r)?,
    };
    Ok((out, sigma))
}

/// M / √det M, keeping node values on SL(2).
fn unit_det(m: Mat2) -> Result<Mat2> {
    let d = m.det();
    if !(d > 0.0) {
        return Err(Error::Determinant { defect: (d - 1.0).abs() });
    }
    Ok(m.scale(1.0 / d.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Scheme {
    /// One shift step and Λ₁.
    R1,
    /// Three shift steps and Λ₃.
    R3Plain,
    /// The palindromic three-step words and Λ₃.
    R3Pal,
    /// Two palindromic blocks and Λ₆.
    R6Pal,
    /// Six shift steps and Λ₆.
    R6Plain,
}

impl Scheme {
    pub fn ell(self) -> u32 {
        match self {
            Scheme::R1 => 1,
            Scheme::R3Plain | Scheme::R3Pal => 3,
            Scheme::R6Pal | Scheme::R6Plain => 6,
        }
    }

    pub fn words(self) -> RawPair {
        let id = RawPair::identity();
        let shifts = |k: usize| (0..k).fold(id.clone(), |w, _| shift_step(&w));
        match self {
            Scheme::R1 => shifts(1),
            Scheme::R3Plain => shifts(3),
            Scheme::R3Pal => palindromic_step(&id),
            Scheme::R6Pal => palindromic_step(&palindromic_step(&id)),
            Scheme::R6Plain => shifts(6),
        }
    }

    pub fn apply(self, p: &Pair) -> Result<(Pair, f64)> {
        renormalize_words(p, &self.words(), self.ell())
    }

    /// Palindromic scheme for a period ℓ ∈ {3, 6}.
    pub fn for_ell(ell: u32) -> Result<Scheme> {
        match ell {
            3 => Ok(Scheme::R3Pal),
            6 => Ok(Scheme::R6Pal),
            _ => Err(Error::Invalid(format!("period {ell} is not 3 or 6"))),
        }
    }
}

pub fn renorm_r(p: &Pair) -> Result<(Pair, f64)> {
    Scheme::R1.apply(p)
}

pub fn renorm_r3_palindromic(p: &Pair) -> Result<(Pair, f64)> {
    Scheme::R3Pal.apply(p)
}

pub fn renorm_r6(p: &Pair) -> Result<(Pair, f64)> {
    Scheme::R6Pal.apply(p)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub period: usize,
    pub step: usize,
    pub sigma: f64,
    pub commutation_defect: f64,
    pub reversibility_defect: f64,
    pub norm_b: f64,
    pub norm_a: f64,
    pub dist: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TraceStatus {
    Converged,
    Diverged,
    MaxPeriods,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenormTrace {
    pub ell: u32,
    pub records: Vec<TraceRecord>,
    pub status: TraceStatus,
    /// Last iterate before stopping.
    #[serde(skip)]
    pub last: Option<Pair>,
    /// Iterate following the smallest inter-iterate distance.
    #[serde(skip)]
    pub closest: Option<Pair>,
}

/// Iterates the palindromic operator for period ℓ, recording σ per period.
/// Divergence (norm above `BLOWUP_TOL` or a failed evaluation) ends the
/// trace with status `Diverged`.
pub fn iterate_renorm(p0: &Pair, ell: u32, k_max: usize) -> Result<RenormTrace> {
    let scheme = Scheme::for_ell(ell)?;
    let mut p = p0.clone();
    let mut records = Vec::new();
    let mut status = TraceStatus::MaxPeriods;
    let mut closest = None;
    let mut best = f64::INFINITY;
    for k in 0..k_max {
        let (q, sigma) = match scheme.apply(&p) {
            Ok(v) => v,
            Err(_) => {
                status = TraceStatus::Diverged;
                break;
            }
        };
        let (nb, na) = (q.b.sup_norm(), q.a.sup_norm());
        let dist = q.dist(&p);
        if !(nb.max(na) < BLOWUP_TOL && sigma.is_finite() && dist.is_finite()) {
            status = TraceStatus::Diverged;
            break;
        }
        records.push(TraceRecord {
            period: k + 1,
            step: (k + 1) * ell as usize,
            sigma,
            commutation_defect: q.commutation_defect(),
            reversibility_defect: q.reversibility_defect(),
            norm_b: nb,
            norm_a: na,
            dist,
        });
        if dist < best {
            best = dist;
            closest = Some(q.clone());
        }
        p = q;
        if dist < CONV_TOL {
            status = TraceStatus::Converged;
        }
    }
    Ok(RenormTrace { ell, records, status, last: Some(p), closest })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SigmaEstimate {
    pub sigma: f64,
    pub error: f64,
    pub periods: usize,
}

/// σ of the last period, with the last change as error bar; needs at least
/// three periods whose inter-iterate distance is below `PERIOD_TOL`.
pub fn sigma_star(trace: &RenormTrace) -> Result<SigmaEstimate> {
    let good: Vec<&TraceRecord> = trace.records.iter().filter(|r| r.dist < PERIOD_TOL).collect();
    if good.len() < 3 {
        return Err(Error::NotConverged(format!("{} converged periods", good.len())));
    }
    let n = good.len();
    Ok(SigmaEstimate {
        sigma: good[n - 1].sigma,
        error: (good[n - 1].sigma - good[n - 2].sigma).abs(),
        periods: n,
    })
}

/// Points where the commutation residual is imposed.
fn commutation_grid() -> Vec<f64> {
    (0..31).map(|i| -1.5 + 0.1 * i as f64).collect()
}

fn commutation_residual(p: &Pair, out: &mut Vec<f64>) -> Result<()> {
    for x in commutation_grid() {
        let lhs = p.b.eval(x + ALPHA)? * p.a.eval(x)?;
        let rhs = p.a.eval(x + 1.0)? * p.b.eval(x)?;
        out.extend((lhs - rhs).to_array());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
    pub commutation: f64,
    pub sigma: f64,
}

/// Gauss–Newton for R(P) = P together with the commutation equations.
/// Without the latter the iteration can settle on non-commuting fixed points.
pub fn newton_fixed_point(p0: &Pair, scheme: Scheme, max_iter: usize, tol: f64) -> Result<(Pair, NewtonReport)> {
    let (n, r) = (p0.degree(), p0.radius());
    let resid = |x: &[f64]| -> Result<(Vec<f64>, f64)> {
        let p = Pair::from_vec(x, n, r);
        let (q, sigma) = scheme.apply(&p)?;
        let mut f: Vec<f64> = q.to_vec().iter().zip(x).map(|(a, b)| a - b).collect();
        commutation_residual(&p, &mut f)?;
        Ok((f, sigma))
    };
    let mut x = p0.to_vec();
    let dim = x.len();
    let mut report = NewtonReport { iterations: 0, residual: f64::INFINITY, commutation: f64::INFINITY, sigma: 0.0 };
    for it in 0..=max_iter {
        let (f, sigma) = resid(&x)?;
        let res = f[..dim].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let com = f[dim..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        report = NewtonReport { iterations: it, residual: res, commutation: com, sigma };
        if res.max(com) < tol || it == max_iter {
            break;
        }
        let cols: Vec<Vec<f64>> = (0..dim)
            .into_par_iter()
            .map(|j| {
                let h = 1e-8 * (1.0 + x[j].abs());
                let mut y = x.clone();
                y[j] += h;
                let (up, _) = resid(&y)?;
                y[j] -= 2.0 * h;
                let (dn, _) = resid(&y)?;
                Ok(up.iter().zip(&dn).map(|(a, b)| (a - b) / (2.0 * h)).collect())
            })
            .collect::<Result<_>>()?;
        let m = f.len();
        let jac = DMatrix::from_fn(m, dim, |i, j| cols[j][i]);
        let rhs = DVector::from_iterator(m, f.iter().map(|v| -v));
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let dx = svd
            .solve(&rhs, 1e-12 * smax)
            .map_err(|e| Error::Degenerate(e.to_string()))?;
        // step lengths beyond 1 speed up the slow direction of a degenerate root
        let l2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for t in [1.0, 2.0, 4.0, 8.0] {
            let y: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + t * d).collect();
            if let Ok((fy, _)) = resid(&y) {
                let v = l2(&fy);
                if v.is_finite() && best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, y));
                }
            }
        }
        x = best.ok_or(Error::NonFinite)?.1;
    }
    Ok((Pair::from_vec(&x, n, r), report))
}

/// Critical energy for the self-dual family: the top of the spectrum for
/// ℓ = 3 and E = 0 for ℓ = 6.
pub fn critical_energy(ell: u32, lambda: f64) -> Result<f64> {
    match ell {
        3 => top_edge(lambda),
        6 => Ok(0.0),
        _ => Err(Error::Invalid(format!("period {ell} is not 3 or 6"))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPointRun {
    pub ell: u32,
    pub energy: f64,
    pub approach: RenormTrace,
    pub newton: NewtonReport,
    pub polish: RenormTrace,
    pub sigma: SigmaEstimate,
    #[serde(skip)]
    pub pair: Pair,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPointOptions {
    pub degree: usize,
    pub radius: f64,
    pub approach_periods: usize,
    pub polish_periods: usize,
    pub newton_iters: usize,
}

impl FixedPointOptions {
    pub fn for_ell(ell: u32) -> Self {
        FixedPointOptions {
            degree: 60,
            radius: 3.0,
            approach_periods: 5,
            polish_periods: 6,
            newton_iters: if ell == 3 { 8 } else { 14 },
        }
    }
}

/// Approach from the AM pair at the critical energy, polish by Newton and
/// iterate again from the polished pair.
pub fn solve_fixed_point(ell: u32, lambda: f64, energy: Option<f64>, opts: FixedPointOptions) -> Result<FixedPointRun> {
    let scheme = Scheme::for_ell(ell)?;
    let e = match energy {
        Some(e) => e,
        None => critical_energy(ell, lambda)?,
    };
    let p0 = am_pair_with(e, lambda, opts.degree, opts.radius)?;
    let approach = iterate_renorm(&p0, ell, opts.approach_periods)?;
    if approach.records.len() < opts.approach_periods {
        return Err(Error::Blowup { step: approach.records.len() * ell as usize });
    }
    let start = approach.last.clone().ok_or(Error::Blowup { step: 0 })?;
    let (pair, newton) = newton_fixed_point(&start, scheme, opts.newton_iters, 1e-11)?;
    let polish = iterate_renorm(&pair, ell, opts.polish_periods)?;
    let sigma = sigma_star(&polish)?;
    Ok(FixedPointRun { ell, energy: e, approach, newton, polish, sigma, pair })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Multiplier {
    pub mu: f64,
    pub ratios: Vec<f64>,
    pub spread: f64,
    /// Successive ratios differ by more than 5 %.
    pub nonlinear: bool,
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Power iteration of the linearized operator at the fixed point, started
/// from the difference of the AM pairs at E ± δE after `lead` periods.
pub fn unstable_multiplier_at(run: &FixedPointRun, lambda: f64, delta_e: f64, lead: usize, periods: usize) -> Result<Multiplier> {
    let scheme = Scheme::for_ell(run.ell)?;
    let (n, r) = (run.pair.degree(), run.pair.radius());
    let lift = |e: f64| -> Result<Pair> {
        let mut p = am_pair_with(e, lambda, n, r)?;
        for _ in 0..lead {
            p = scheme.apply(&p)?.0;
        }
        Ok(p)
    };
    let up = lift(run.energy + delta_e)?.to_vec();
    let dn = lift(run.energy - delta_e)?.to_vec();
    let xs = run.pair.to_vec();
    let eps = 1e-7 * (1.0 + vec_norm(&xs));
    let mut v: Vec<f64> = up.iter().zip(&dn).map(|(a, b)| a - b).collect();
    let mut ratios = Vec::new();
    for _ in 0..periods {
        let nv = vec_norm(&v);
        if !(nv > 0.0) {
            return Err(Error::Degenerate("zero perturbation".into()));
        }
        let dir: Vec<f64> = v.iter().map(|x| x * eps / nv).collect();
        let plus: Vec<f64> = xs.iter().zip(&dir).map(|(a, b)| a + b).collect();
        let minus: Vec<f64> = xs.iter().zip(&dir).map(|(a, b)| a - b).collect();
        let rp = scheme.apply(&Pair::from_vec(&plus, n, r))?.0.to_vec();
        let rm = scheme.apply(&Pair::from_vec(&minus, n, r))?.0.to_vec();
        let w: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| 0.5 * (a - b)).collect();
        // sign from the dominant component
        let (imax, _) = dir
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(i, m), (j, x)| if x.abs() > m { (j, x.abs()) } else { (i, m) });
        let sign = if w[imax] * dir[imax] < 0.0 { -1.0 } else { 1.0 };
        ratios.push(sign * vec_norm(&w) / eps);
        v = w;
    }
    let k = ratios.len();
    let tail = &ratios[k.saturating_sub(3)..];
    let mu = tail.iter().sum::<f64>() / tail.len() as f64;
    let spread = tail.iter().fold(0.0f64, |m, x| m.max((x - mu).abs()));
    let nonlinear = tail.windows(2).any(|w| (w[1] - w[0]).abs() > 0.05 * w[0].abs());
    Ok(Multiplier { mu, ratios, spread, nonlinear })
}

pub fn unstable_multiplier(e_c: f64, lambda: f64, ell: u32, delta_e: f64) -> Result<Multiplier> {
    let run = solve_fixed_point(ell, lambda, Some(e_c), FixedPointOptions::for_ell(ell))?;
    unstable_multiplier_at(&run, lambda, delta_e, 1, 8)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mode {
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
    pub residual: f64,
    /// Size of the eigenvalue cluster this mode belongs to.
    pub multiplicity: usize,
    /// Directions in the cluster satisfying the linearized reversibility
    /// and commutation conditions (reported on the first mode of a cluster).
    pub admissible: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenReport {
    pub ell: u32,
    pub dimension: usize,
    pub modes: Vec<Mode>,
}

impl EigenReport {
    pub fn eigenvalues(&self) -> Vec<[f64; 2]> {
        self.modes.iter().map(|m| [m.re, m.im]).collect()
    }

    /// Admissible directions with |μ| ≥ 1.
    pub fn unstable_admissible(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in &self.modes {
            if m.modulus >= 1.0 {
                for _ in 0..m.admissible {
                    out.push(m.re);
                }
            }
        }
        out
    }
}

fn grid_values(p: &PolyMat, xs: &[f64]) -> Vec<Mat2> {
    xs.iter().map(|&x| p.eval_unchecked(x)).collect()
}

/// Linearized reversibility and commutation residuals of a perturbation δ
/// at P, relative to the size of δ on the grid.
fn constraint_residuals(p: &Pair, delta: &Pair) -> (Vec<f64>, f64) {
    let xs = commutation_grid();
    let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
    let sh = |s: f64| xs.iter().map(|x| x + s).collect::<Vec<_>>();
    let (a, b, da, db) = (&p.a, &p.b, &delta.a, &delta.b);
    let mut out = Vec::new();
    let s = Mat2::S;
    for (dm, m, shift) in [(da, a, ALPHA), (db, b, 1.0)] {
        let left = grid_values(dm, &sh(-shift));
        let mneg = grid_values(m, &neg);
        let dneg = grid_values(dm, &neg);
        for i in 0..xs.len() {
            let mi = mneg[i].adjugate();
            out.extend((left[i] + s * mi * dneg[i] * mi * s).to_array());
        }
    }
    let ba = grid_values(b, &sh(ALPHA));
    let a0 = grid_values(a, &xs);
    let a1 = grid_values(a, &sh(1.0));
    let b0 = grid_values(b, &xs);
    let da0 = grid_values(da, &xs);
    let da1 = grid_values(da, &sh(1.0));
    let db0 = grid_values(db, &xs);
    let dba = grid_values(db, &sh(ALPHA));
    for i in 0..xs.len() {
        let d = dba[i] * a0[i] + ba[i] * da0[i] - da1[i] * b0[i] - a1[i] * db0[i];
        out.extend(d.to_array());
    }
    let scale = da0
        .iter()
        .chain(db0.iter())
        .fold(0.0f64, |m, x| m.max(x.max_abs()));
    (out, scale)
}

/// Central-difference Jacobian of the palindromic operator at P* and its
/// leading eigenvalues, with residuals and a classification of each
/// eigenvalue cluster by the linearized reversibility and commutation
/// conditions.
pub fn jacobian_spectrum(p_star: &Pair, ell: u32, n_modes: usize) -> Result<EigenReport> {
    let scheme = Scheme::for_ell(ell)?;
    let (n, r) = (p_star.degree(), p_star.radius());
    let x = p_star.to_vec();
    let dim = x.len();
    let cols: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let h = 1e-6 * (1.0 + x[j].abs());
            let mut y = x.clone();
            y[j] += h;
            let up = scheme.apply(&Pair::from_vec(&y, n, r))?.0.to_vec();
            y[j] -= 2.0 * h;
            let dn = scheme.apply(&Pair::from_vec(&y, n, r))?.0.to_vec();
            Ok(up.iter().zip(&dn).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    let jac = DMatrix::from_fn(dim, dim, |i, j| cols[j][i]);
    let mut ev: Vec<Complex<f64>> = jac.clone().complex_eigenvalues().iter().copied().collect();
    if ev.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite);
    }
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.re.total_cmp(&a.re)).then(b.im.total_cmp(&a.im)));
    let top: Vec<Complex<f64>> = ev.into_iter().take(n_modes).collect();
    let jc: DMatrix<Complex<f64>> = jac.map(|v| Complex::new(v, 0.0));
    let jnorm = jac.norm();

    let mut modes: Vec<Mode> = Vec::with_capacity(top.len());
    let mut i = 0;
    while i < top.len() {
        let mu = top[i];
        let tol = 1e-3 * mu.norm().max(1.0);
        let mut j = i + 1;
        while j < top.len() && (top[j] - mu).norm() < tol && top[j].im.abs() < tol && mu.im.abs() < tol {
            j += 1;
        }
        let mult = j - i;
        let admissible = if mu.im.abs() > tol {
            0
        } else {
            cluster_admissible(&jac, p_star, top[i..j].iter().map(|z| z.re).sum::<f64>() / mult as f64, mult)
        };
        for (k, z) in top[i..j].iter().enumerate() {
            let residual = eigen_residual(&jc, *z, jnorm);
            modes.push(Mode {
                re: z.re,
                im: z.im,
                modulus: z.norm(),
                residual,
                multiplicity: mult,
                admissible: if k == 0 { admissible } else { 0 },
            });
        }
        i = j;
    }
    Ok(EigenReport { ell, dimension: dim, modes })
}

/// ‖Jv − μv‖/‖v‖ for v from two steps of shifted inverse iteration.
fn eigen_residual(jc: &DMatrix<Complex<f64>>, mu: Complex<f64>, jnorm: f64) -> f64 {
    let dim = jc.nrows();
    let shift = mu + Complex::new(1e-10 * jnorm.max(1.0), 0.0);
    let mut m = jc.clone();
    for k in 0..dim {
        m[(k, k)] -= shift;
    }
    let lu = m.lu();
    let mut v = DVector::from_fn(dim, |k, _| Complex::new(1.0 + (k as f64 * 0.37).sin(), 0.0));
    for _ in 0..3 {
        match lu.solve(&v) {
            Some(w) => {
                let nw = w.norm();
                if !(nw > 0.0 && nw.is_finite()) {
                    return f64::INFINITY;
                }
                v = w.unscale(nw);
            }
            None => break,
        }
    }
    let jv = jc * &v;
    (jv - v.scale(1.0).map(|z| z * mu)).norm() / v.norm() / mu.norm().max(1.0)
}

/// Number of directions in the numerical eigenspace of a real cluster that
/// satisfy the linearized constraints.
fn cluster_admissible(jac: &DMatrix<f64>, p: &Pair, mu: f64, mult: usize) -> usize {
    let dim = jac.nrows();
    let mut m = jac.clone();
    for k in 0..dim {
        m[(k, k)] -= mu;
    }
    let svd = m.svd(false, true);
    let Some(vt) = svd.v_t else { return 0 };
    let sv = svd.singular_values;
    let mut idx: Vec<usize> = (0..sv.len()).collect();
    idx.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
    let (n, r) = (p.degree(), p.radius());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for &k in idx.iter().take(mult) {
        let v: Vec<f64> = vt.row(k).iter().copied().collect();
        let (res, scale) = constraint_residuals(p, &Pair::from_vec(&v, n, r));
        if !(scale > 0.0) {
            continue;
        }
        rows.push(res.iter().map(|x| x / scale).collect());
    }
    if rows.is_empty() {
        return 0;
    }
    let c = DMatrix::from_fn(rows[0].len(), rows.len(), |i, j| rows[j][i]);
    let s = c.svd(false, false).singular_values;
    s.iter().filter(|&&x| x < 1e-3).count()
}

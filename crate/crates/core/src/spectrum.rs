//! Reduction constants, the reduced eigenvalue model and small divisors.

use crate::error::{invalid, Error, Result};
use crate::polyham::{bracket_filtered, dp_cubic_filtered, solve_homological, HomPoly, Monomial, ZDegree};
use crate::scalar::{gzero, int, is_gzero, rat, real, to_f64, GaussianRational, Rational};
use crate::sites::{dispersion, lattice_ball, ScalingParams, TangentialSet};
use crate::twist::TwistData;
use num_complex::Complex;
use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

fn check_xi(s: &TangentialSet, xi: &[Rational]) -> Result<()> {
    if xi.len() != s.nu() {
        return invalid(format!("ξ has length {}, expected {}", xi.len(), s.nu()));
    }
    Ok(())
}

/// `(2/3) Σ_{j∈S⁺} (1+j²) ξ_j`.
pub fn c_of_xi(s: &TangentialSet, xi: &[Rational]) -> Result<Rational> {
    check_xi(s, xi)?;
    Ok(s.splus()
        .iter()
        .zip(xi)
        .fold(Rational::zero(), |acc, (&j, x)| acc + rat(2 * (1 + j * j), 3) * x))
}

fn xi_of(s: &TangentialSet, xi: &[Rational], j: i64) -> Rational {
    let (i, _) = s.position(j).expect("tangential site");
    xi[i].clone()
}

/// `Σ_{j₂∈S} λ(j₂+j)/(λ(j₂)+λ(j)−λ(j₂+j)) ξ_{j₂}`.
pub fn ell_j_resonant_form(s: &TangentialSet, xi: &[Rational], j: i64) -> Result<Rational> {
    check_xi(s, xi)?;
    if !s.is_normal(j) {
        return invalid(format!("{j} is not a normal site"));
    }
    let lj = dispersion(j);
    let mut acc = Rational::zero();
    for j2 in s.sites() {
        let den = dispersion(j2) + &lj - dispersion(j2 + j);
        if den.is_zero() {
            return Err(Error::VanishingDenominator(format!("resonant pair ({j2}, {j})")));
        }
        acc += dispersion(j2 + j) / den * xi_of(s, xi, j2);
    }
    Ok(acc)
}

/// Per-site weights of the closed form of ℓ_j.
pub fn ell_weights(s: &TangentialSet, j: i64) -> Result<Vec<Rational>> {
    s.splus()
        .iter()
        .map(|&j2| {
            let (a, b) = (j2 * j2, j * j);
            let den = int(3) * int(3 + a - j2 * j + b) * int(3 + a + j2 * j + b);
            if den.is_zero() {
                return Err(Error::VanishingDenominator(format!("resonant pair ({j2}, {j})")));
            }
            Ok(int(2) * int(1 + a) * int(1 + b) * int(2 + a + b) / den)
        })
        .collect()
}

/// ℓ_j in closed form, cross-checked against the resonant-sum form.
pub fn ell_j(s: &TangentialSet, xi: &[Rational], j: i64) -> Result<Rational> {
    let closed = ell_j_closed(s, xi, j)?;
    let other = ell_j_resonant_form(s, xi, j)?;
    if closed != other {
        return Err(Error::Invariant(format!("the two forms of ℓ_{j} differ")));
    }
    Ok(closed)
}

/// ℓ_j in closed form only.
pub fn ell_j_closed(s: &TangentialSet, xi: &[Rational], j: i64) -> Result<Rational> {
    check_xi(s, xi)?;
    if !s.is_normal(j) {
        return invalid(format!("{j} is not a normal site"));
    }
    Ok(ell_weights(s, j)?.iter().zip(xi).fold(Rational::zero(), |acc, (w, x)| acc + w * x))
}

/// `λ(j)(ℓ_j − c)`.
pub fn kappa_j(s: &TangentialSet, xi: &[Rational], j: i64) -> Result<Rational> {
    Ok(dispersion(j) * (ell_j_closed(s, xi, j)? - c_of_xi(s, xi)?))
}

/// `λ(j)·(−(2/3)Σ(1+j₀²)(7+5j₀²+j₀⁴+3j²)/((3+j₀²−j₀j+j²)(3+j₀²+j₀j+j²)) ξ_{j₀})`.
pub fn kappa_j_single_fraction(s: &TangentialSet, xi: &[Rational], j: i64) -> Result<Rational> {
    let w = crate::twist::w_vector(s, j)?;
    check_xi(s, xi)?;
    Ok(crate::qmat::dot(&w, xi))
}

/// Reduced eigenvalue data at fixed amplitudes and ε.
#[derive(Debug, Clone)]
pub struct EigenModel {
    pub sites: TangentialSet,
    pub xi: Vec<Rational>,
    pub scaling: ScalingParams,
    pub c: Rational,
    /// `1 + ε²c`; the ε⁴ correction is not included.
    pub m: f64,
    pub truncated_order4: bool,
}

impl EigenModel {
    pub fn new(s: &TangentialSet, xi: &[Rational], scaling: ScalingParams) -> Result<Self> {
        let c = c_of_xi(s, xi)?;
        let e2 = scaling.epsilon * scaling.epsilon;
        Ok(EigenModel {
            sites: s.clone(),
            xi: xi.to_vec(),
            m: 1.0 + e2 * to_f64(&c),
            c,
            scaling,
            truncated_order4: true,
        })
    }

    pub fn ell(&self, j: i64) -> Result<Rational> {
        ell_j_closed(&self.sites, &self.xi, j)
    }

    pub fn kappa(&self, j: i64) -> Result<Rational> {
        kappa_j(&self.sites, &self.xi, j)
    }

    /// `m λ(j) + ε² κ_j`.
    pub fn d0(&self, j: i64) -> Result<f64> {
        let e2 = self.scaling.epsilon * self.scaling.epsilon;
        Ok(self.m * to_f64(&dispersion(j)) + e2 * to_f64(&self.kappa(j)?))
    }

    /// Size bound ε^{4−3a}/⟨j⟩ of the unresolved eigenvalue remainder.
    pub fn remainder_bound(&self, j: i64) -> f64 {
        self.scaling.epsilon.powf(4.0 - 3.0 * self.scaling.a) / (j.abs().max(1) as f64)
    }

    /// `j, lambda, ell_j, kappa_j, j*kappa_j, d0_j` rows for the given range.
    pub fn csv(&self, js: impl IntoIterator<Item = i64>) -> Result<String> {
        let mut out = String::from("j,lambda,ell_j,kappa_j,j_kappa_j,d0_j\n");
        for j in js {
            if !self.sites.is_normal(j) {
                continue;
            }
            let k = self.kappa(j)?;
            out.push_str(&format!(
                "{j},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                to_f64(&dispersion(j)),
                to_f64(&self.ell(j)?),
                to_f64(&k),
                to_f64(&(&k * int(j))),
                self.d0(j)?
            ));
        }
        Ok(out)
    }
}

/// Largest |j κ_j| over normal sites with |j| ≤ `bound`, with its witness.
pub fn kappa_decay_scan(s: &TangentialSet, xi: &[Rational], bound: i64) -> Result<(Rational, i64)> {
    let js: Vec<i64> = (1..=bound).filter(|&j| s.is_normal(j)).collect();
    let vals: Vec<(Rational, i64)> = js
        .par_iter()
        .map(|&j| kappa_j(s, xi, j).map(|k| ((k * int(j)).abs(), j)))
        .collect::<Result<_>>()?;
    // κ is odd, so |jκ_j| is even in j and positive j suffice
    Ok(vals
        .into_iter()
        .fold((Rational::zero(), 0), |a, b| if b.0 > a.0 { b } else { a }))
}

/// One small divisor.
#[derive(Debug, Clone, Serialize)]
pub struct SmallDivisor {
    pub ell: Vec<i64>,
    pub j: i64,
    pub jp: i64,
    #[serde(skip)]
    pub delta: Rational,
    pub delta_f64: f64,
    pub delta_star: Option<f64>,
    /// `Σ j̄_i ℓ_i + j − j′ = 0`.
    pub momentum_ok: bool,
}

/// `δ = ω̄·ℓ + λ(j) − λ(j′)`, plus δ* when a model and twist data are given.
///
/// δ* is the same divisor with every frequency shifted to order ε²:
/// ω = ω̄ + ε²𝔸ξ on the tangential sites and λ(j)(1 + ε²ℓ_j) on the normal ones.
pub fn small_divisor(
    s: &TangentialSet,
    ell: &[i64],
    j: i64,
    jp: i64,
    model: Option<(&EigenModel, &TwistData)>,
) -> Result<SmallDivisor> {
    if ell.len() != s.nu() {
        return invalid("ℓ has the wrong length");
    }
    let ob = crate::sites::linear_frequencies(s);
    let mut delta = dispersion(j) - dispersion(jp);
    for (l, w) in ell.iter().zip(&ob) {
        delta += int(*l) * w;
    }
    let momentum_ok = s.momentum(ell) + j - jp == 0;
    let delta_star = match model {
        None => None,
        Some((m, tw)) => {
            let l1: i64 = ell.iter().map(|x| x.abs()).sum();
            if l1 > 3 {
                return invalid("δ* is defined for |ℓ| ≤ 3");
            }
            let axi = crate::qmat::mat_vec(&tw.a, &m.xi);
            let shift = crate::qmat::dot(&axi, &ell.iter().map(|&l| int(l)).collect::<Vec<_>>())
                + dispersion(j) * m.ell(j)?
                - dispersion(jp) * m.ell(jp)?;
            let e2 = m.scaling.epsilon * m.scaling.epsilon;
            Some(to_f64(&delta) + e2 * to_f64(&shift))
        }
    };
    Ok(SmallDivisor { ell: ell.to_vec(), j, jp, delta_f64: to_f64(&delta), delta, delta_star, momentum_ok })
}

/// `3JJ′(J−J′)(3+JJ′+(J−J′)²)/((1+J²)(1+J′²)(1+(J−J′)²)) = λ(J−J′)+λ(J′)−λ(J)`.
pub fn one_site_divisor(big: i64, small: i64) -> Rational {
    let (a, b) = (big as i128, small as i128);
    let d = a - b;
    let num = 3 * a * b * d * (3 + a * b + d * d);
    let den = (1 + a * a) * (1 + b * b) * (1 + d * d);
    Rational::new(num.into(), den.into())
}

/// `(3+x²+y²+z²+xy+xz+yz+xyz(x+y+z))/((1+x²)(1+y²)(1+z²)(1+(x+y+z)²))`.
pub fn two_site_factor(x: i64, y: i64, z: i64) -> Rational {
    let (x, y, z) = (x as i128, y as i128, z as i128);
    let num = 3 + x * x + y * y + z * z + x * y + x * z + y * z + x * y * z * (x + y + z);
    let s = x + y + z;
    let den = (1 + x * x) * (1 + y * y) * (1 + z * z) * (1 + s * s);
    Rational::new(num.into(), den.into())
}

/// Signed sites making up ℓ (each ℓ_i contributes |ℓ_i| copies of ±j̄_i).
pub fn signed_sites(s: &TangentialSet, ell: &[i64]) -> Vec<i64> {
    let mut out = Vec::new();
    for (l, &jb) in ell.iter().zip(s.splus()) {
        for _ in 0..l.abs() {
            out.push(l.signum() * jb);
        }
    }
    out
}

/// δ by the factored formulas, with j′ fixed by momentum, for |ℓ| ∈ {1, 2}.
pub fn delta_closed_form(s: &TangentialSet, ell: &[i64], j: i64) -> Option<(i64, Rational)> {
    let sig = signed_sites(s, ell);
    match sig.as_slice() {
        [a] => {
            let jp = j + a;
            Some((jp, one_site_divisor(jp, j)))
        }
        [a, b] => {
            let jp = j + a + b;
            let f = int(3 * (a + b) * (a + j) * (b + j)) * two_site_factor(*a, *b, j);
            Some((jp, f))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DivisorScan {
    pub j_bound: i64,
    #[serde(skip)]
    pub min: Rational,
    pub min_f64: f64,
    pub witness_ell: Vec<i64>,
    pub witness_j: i64,
    pub witness_jp: i64,
    pub count: usize,
    pub closed_form_mismatches: usize,
}

/// Minimum |δ| over 0 < |ℓ| ≤ 2, j, j′ ∈ S^c, |j|,|j′| ≤ bound, with momentum
/// `Σ j̄_iℓ_i + j − j′ = 0` and δ ≠ 0; every δ is also checked against the
/// factored formulas.
pub fn min_divisor_scan(s: &TangentialSet, j_bound: i64) -> Result<DivisorScan> {
    let ells = lattice_ball(s.nu(), 2);
    let js: Vec<i64> = (-j_bound..=j_bound).filter(|&j| s.is_normal(j)).collect();
    type Best = Option<(Rational, Vec<i64>, i64, i64)>;
    let partial: Vec<(Best, usize, usize)> = js
        .par_iter()
        .map(|&j| {
            let mut best: Best = None;
            let (mut count, mut mismatches) = (0, 0);
            for ell in &ells {
                let jp = j + s.momentum(ell);
                if !s.is_normal(jp) || jp.abs() > j_bound {
                    continue;
                }
                let d = small_divisor(s, ell, j, jp, None).expect("valid ℓ").delta;
                match delta_closed_form(s, ell, j) {
                    Some((q, f)) if q == jp && f == d => {}
                    _ => mismatches += 1,
                }
                if d.is_zero() {
                    continue;
                }
                count += 1;
                let a = d.abs();
                if best.as_ref().is_none_or(|b| a < b.0) {
                    best = Some((a, ell.clone(), j, jp));
                }
            }
            (best, count, mismatches)
        })
        .collect();
    let mut best: Best = None;
    let (mut count, mut mismatches) = (0, 0);
    for (b, c, m) in partial {
        count += c;
        mismatches += m;
        if let Some(b) = b {
            if best.as_ref().is_none_or(|x| b.0 < x.0) {
                best = Some(b);
            }
        }
    }
    let (min, ell, j, jp) = best.ok_or_else(|| Error::InvalidInput("empty divisor scan".into()))?;
    Ok(DivisorScan {
        j_bound,
        min_f64: to_f64(&min),
        min,
        witness_ell: ell,
        witness_j: j,
        witness_jp: jp,
        count,
        closed_form_mismatches: mismatches,
    })
}

/// `Σ 3j_i/(1+j_i²) = Σ(λ(j_i) − j_i)`.
pub fn transport_divisor(tuple: &[i64]) -> Rational {
    tuple.iter().fold(Rational::zero(), |acc, &j| acc + rat(3 * j, 1 + j * j))
}

/// A p-homogeneous function of v̄ = Σ_{j∈S} a_j e^{i(jx + 𝚕(j)·φ)}, stored as
/// coefficients on sorted tuples of tangential indices. Amplitudes satisfy
/// a_j a_{−j} = ξ_j.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFn {
    pub degree: usize,
    pub terms: BTreeMap<Vec<i64>, GaussianRational>,
}

impl SymbolFn {
    pub fn zero(degree: usize) -> Self {
        SymbolFn { degree, terms: BTreeMap::new() }
    }

    /// v̄ itself.
    pub fn vbar(s: &TangentialSet) -> Self {
        let mut f = SymbolFn::zero(1);
        for j in s.sites() {
            f.add(vec![j], real(int(1)));
        }
        f
    }

    pub fn add(&mut self, mut tuple: Vec<i64>, c: GaussianRational) {
        tuple.sort_unstable();
        if is_gzero(&c) {
            return;
        }
        let e = self.terms.entry(tuple.clone()).or_insert_with(gzero);
        *e += c;
        if is_gzero(e) {
            self.terms.remove(&tuple);
        }
    }

    pub fn plus(&self, other: &SymbolFn) -> Result<SymbolFn> {
        if self.degree != other.degree {
            return invalid("degree mismatch");
        }
        let mut out = self.clone();
        for (t, c) in &other.terms {
            out.add(t.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn scale(&self, c: &GaussianRational) -> SymbolFn {
        let mut out = SymbolFn::zero(self.degree);
        for (t, v) in &self.terms {
            out.add(t.clone(), v * c);
        }
        out
    }

    pub fn mul(&self, other: &SymbolFn) -> SymbolFn {
        let mut out = SymbolFn::zero(self.degree + other.degree);
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let mut t = a.clone();
                t.extend_from_slice(b);
                out.add(t, ca * cb);
            }
        }
        out
    }

    fn map(&self, f: impl Fn(&[i64]) -> GaussianRational) -> SymbolFn {
        let mut out = SymbolFn::zero(self.degree);
        for (t, c) in &self.terms {
            out.add(t.clone(), c * f(t));
        }
        out
    }

    /// ∂ₓ: multiplies by i Σ j.
    pub fn dx(&self) -> SymbolFn {
        self.map(|t| Complex::new(Rational::zero(), int(t.iter().sum())))
    }

    /// ω̄·∂_φ: multiplies by i Σ λ(j).
    pub fn omega_dphi(&self) -> SymbolFn {
        self.map(|t| Complex::new(Rational::zero(), t.iter().fold(Rational::zero(), |a, &j| a + dispersion(j))))
    }

    /// The spatial zero mode as a linear form in ξ (degree 2 only).
    pub fn average_in_xi(&self, s: &TangentialSet) -> Result<Vec<GaussianRational>> {
        if self.degree != 2 {
            return invalid("averages are taken on quadratic symbols");
        }
        let mut out = vec![gzero(); s.nu()];
        for (t, c) in &self.terms {
            if t[0] + t[1] == 0 {
                let (i, _) = s.position(t[1]).expect("tangential tuple");
                out[i] += c.clone();
            }
        }
        Ok(out)
    }

    /// The real-valued condition coeff(−J) = conj(coeff(J)).
    pub fn is_real(&self) -> bool {
        self.terms.iter().all(|(t, c)| {
            let mut r: Vec<i64> = t.iter().map(|j| -j).collect();
            r.sort_unstable();
            match self.terms.get(&r) {
                Some(v) => v.re == c.re && v.im == -c.im.clone(),
                None => false,
            }
        })
    }
}

/// Solves `ω̄·∂_φ β − β_x + f = const`; returns β and the resonant part of f,
/// supported on tuples where the transport divisor vanishes.
pub fn solve_transport(f: &SymbolFn) -> (SymbolFn, SymbolFn) {
    let mut beta = SymbolFn::zero(f.degree);
    let mut resonant = SymbolFn::zero(f.degree);
    for (t, c) in &f.terms {
        let d = transport_divisor(t);
        if d.is_zero() {
            resonant.add(t.clone(), c.clone());
        } else {
            // −c/(i d) = i c/d
            beta.add(t.clone(), Complex::new(-(&c.im / &d), &c.re / &d));
        }
    }
    (beta, resonant)
}

/// Applies `ω̄·∂_φ − ∂ₓ`.
pub fn transport_operator(beta: &SymbolFn) -> Result<SymbolFn> {
    beta.omega_dphi().plus(&beta.dx().scale(&real(int(-1))))
}

/// The quadratic term of the normalizing map at v̄: −J∇F⁽³,≤¹⁾(v̄).
pub fn birkhoff_quadratic(s: &TangentialSet) -> SymbolFn {
    let bound = 2 * s.jbar1;
    let low = dp_cubic_filtered(bound, |m| ZDegree::AtMost(1).accepts(m.z_degree(s)));
    let gen = solve_homological(&low);
    let mut psi = SymbolFn::zero(2);
    for (m, c) in gen.terms() {
        let idx = m.indices();
        let mut seen = Vec::new();
        for (p, &t) in idx.iter().enumerate() {
            if seen.contains(&t) {
                continue;
            }
            seen.push(t);
            let rest: Vec<i64> = idx.iter().enumerate().filter(|(q, _)| *q != p).map(|(_, &j)| j).collect();
            if !rest.iter().all(|&j| s.contains(j)) {
                continue;
            }
            let mult = idx.iter().filter(|&&j| j == t).count() as i64;
            // component k = −t of J∇F is iλ(k) ∂_{u_t} F
            let k = -t;
            let factor = Complex::new(Rational::zero(), -dispersion(k) * int(mult));
            psi.add(rest, c * factor);
        }
    }
    psi
}

/// Breakdown of the spatial average of f₂ into its four pieces.
#[derive(Debug, Clone)]
pub struct F2Average {
    pub psi: Rational,
    pub dxx_beta_sq: Rational,
    pub transport_terms: Rational,
    pub total: Rational,
}

/// Builds f₂ = −Ψ₂ + (1/4)∂ₓₓ(β₁²) − (1/2)β₁v̄ₓ + (1/2)v̄(β₁)ₓ and returns its
/// average at ξ; fails if it differs from [`c_of_xi`].
pub fn c_via_f2(s: &TangentialSet, xi: &[Rational]) -> Result<Rational> {
    let avg = f2_average(s, xi)?;
    let c = c_of_xi(s, xi)?;
    if avg.total != c {
        return Err(Error::Invariant(format!("average of f₂ is {} but c = {}", avg.total, c)));
    }
    Ok(avg.total)
}

pub fn f2_average(s: &TangentialSet, xi: &[Rational]) -> Result<F2Average> {
    check_xi(s, xi)?;
    let v = SymbolFn::vbar(s);
    let (beta1, res1) = solve_transport(&v.scale(&real(int(-1))));
    if !res1.terms.is_empty() {
        return Err(Error::Invariant("resonant first-order transport".into()));
    }
    let psi = birkhoff_quadratic(s).scale(&real(int(-1)));
    let dxx = beta1.mul(&beta1).dx().dx().scale(&real(rat(1, 4)));
    let rest = beta1
        .mul(&v.dx())
        .scale(&real(rat(-1, 2)))
        .plus(&v.mul(&beta1.dx()).scale(&real(rat(1, 2))))?;
    let eval = |f: &SymbolFn| -> Result<Rational> {
        let form = f.average_in_xi(s)?;
        let mut acc = gzero();
        for (c, x) in form.iter().zip(xi) {
            acc += c * real(x.clone());
        }
        if !acc.im.is_zero() {
            return Err(Error::Invariant("complex average".into()));
        }
        Ok(acc.re)
    };
    let (a, b, r) = (eval(&psi)?, eval(&dxx)?, eval(&rest)?);
    Ok(F2Average { total: &a + &b + &r, psi: a, dxx_beta_sq: b, transport_terms: r })
}

/// Identification of the quadratic normal-form coefficient at a normal site.
#[derive(Debug, Clone)]
pub struct Identification {
    pub j: i64,
    /// Half the ξ-weighted coefficient of u_j u_{−j}.
    pub lhs: GaussianRational,
    /// ℓ_j / 2.
    pub rhs: Rational,
    pub equal: bool,
}

/// Compares Π_triv Π^{d_z=2} (1/2){𝔉, H⁽³⁾} with ℓ_j/2, where 𝔉 solves
/// the homological equation for the whole cubic. The quadratic form
/// Σ_{j∈S^c} c_j |u_j|² counts u_j u_{−j} once for j and once for −j, so
/// c_j is half the monomial coefficient.
pub fn identification_check(s: &TangentialSet, xi: &[Rational], j: i64) -> Result<Identification> {
    check_xi(s, xi)?;
    if !s.is_normal(j) {
        return invalid(format!("{j} is not a normal site"));
    }
    let bound = j.abs() + s.jbar1;
    let special = |k: i64| s.contains(k) || k.abs() == j.abs();
    let h3 = dp_cubic_filtered(bound, |m| m.indices().iter().filter(|&&k| special(k)).count() >= 2);
    let f = solve_homological(&h3);
    let keep = |m: &Monomial| m.is_trivial() && m.z_degree(s) == 2 && m.indices().iter().all(|&k| special(k));
    let q: HomPoly = bracket_filtered(&f, &h3, &keep)?.scale(&real(rat(1, 2)));
    let mut lhs = gzero();
    for (i, &k) in s.splus().iter().enumerate() {
        let m = Monomial::new(vec![k, -k, j, -j])?;
        lhs += q.coeff(&m) * real(xi[i].clone());
    }
    lhs = lhs * real(rat(1, 2));
    let rhs = ell_j(s, xi, j)? / int(2);
    let equal = lhs.im.is_zero() && lhs.re == rhs;
    Ok(Identification { j, lhs, rhs, equal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::imag;
    use proptest::prelude::*;

    fn s67() -> TangentialSet {
        TangentialSet::new(&[6, 7]).unwrap()
    }

    fn ones() -> Vec<Rational> {
        vec![int(1), int(1)]
    }

    #[test]
    fn c_values() {
        assert_eq!(c_of_xi(&s67(), &ones()).unwrap(), int(58));
        assert!(c_of_xi(&s67(), &[int(0), int(0)]).unwrap().is_zero());
        assert!(c_of_xi(&s67(), &[int(1)]).is_err());
    }

    #[test]
    fn ell_example() {
        let v = ell_j(&s67(), &ones(), 10).unwrap();
        let expected = rat(2, 3) * (rat(515706, 15721) + rat(762550, 18204));
        assert_eq!(v, expected);
        assert!((to_f64(&v) - 49.796).abs() < 1e-3);
        assert_eq!(ell_j(&s67(), &ones(), -10).unwrap(), v);
        assert!(ell_j(&s67(), &ones(), 7).is_err());
    }

    #[test]
    fn ell_forms_agree() {
        let xi = vec![rat(3, 7), rat(11, 5)];
        for j in 8..=60 {
            assert_eq!(ell_j_closed(&s67(), &xi, j).unwrap(), ell_j_resonant_form(&s67(), &xi, j).unwrap());
        }
    }

    #[test]
    fn kappa_forms() {
        let xi = vec![rat(1, 2), rat(9, 4)];
        for j in [1i64, 5, 8, 40, -13] {
            let k = kappa_j(&s67(), &xi, j).unwrap();
            assert_eq!(k, kappa_j_single_fraction(&s67(), &xi, j).unwrap());
            assert_eq!(kappa_j(&s67(), &xi, -j).unwrap(), -k);
        }
    }

    #[test]
    fn kappa_asymptotics() {
        let s = s67();
        let xi = ones();
        let c = to_f64(&c_of_xi(&s, &xi).unwrap());
        let k = to_f64(&(kappa_j(&s, &xi, 1000).unwrap() * int(1000)));
        assert!(((k + 3.0 * c) / (3.0 * c)).abs() < 1e-2);
        let (max, at) = kappa_decay_scan(&s, &xi, 2000).unwrap();
        assert!(at < 100);
        assert!(to_f64(&max) > 3.0 * c);
    }

    #[test]
    fn divisor_examples() {
        let direct = dispersion(1) + dispersion(9) - dispersion(10);
        assert_eq!(direct, one_site_divisor(10, 9));
        assert!((to_f64(&direct) - 1.532).abs() < 1e-3);
        let d = small_divisor(&s67(), &[0, 0], 12, 12, None).unwrap();
        assert!(d.delta.is_zero());
        assert!(d.momentum_ok);
    }

    #[test]
    fn closed_forms_match() {
        let scan = min_divisor_scan(&s67(), 200).unwrap();
        assert_eq!(scan.closed_form_mismatches, 0);
        assert!(scan.min_f64 > 0.0);
    }

    #[test]
    fn transport_values() {
        assert!(transport_divisor(&[5, -5]).is_zero());
        assert_eq!(transport_divisor(&[6, 7]), rat(1677, 1850));
    }

    #[test]
    fn first_transport_solution() {
        let s = s67();
        let v = SymbolFn::vbar(&s);
        let (beta, res) = solve_transport(&v.scale(&real(int(-1))));
        assert!(res.terms.is_empty());
        for (t, c) in &beta.terms {
            let j = t[0];
            // (1/3)(1+j²)/(ij)
            assert_eq!(*c, imag(rat(-(1 + j * j), 3 * j)));
        }
        let lhs = transport_operator(&beta).unwrap().plus(&v.scale(&real(int(-1)))).unwrap();
        assert!(lhs.terms.is_empty());
        assert!(beta.is_real());
    }

    #[test]
    fn f2_average_is_c() {
        let s = s67();
        let avg = f2_average(&s, &ones()).unwrap();
        assert!(avg.psi.is_zero());
        assert!(avg.dxx_beta_sq.is_zero());
        assert_eq!(c_via_f2(&s, &ones()).unwrap(), int(58));
        assert!(birkhoff_quadratic(&s).is_real());
        assert!(!birkhoff_quadratic(&s).terms.is_empty());
    }

    #[test]
    fn identification_at_ten() {
        let r = identification_check(&s67(), &ones(), 10).unwrap();
        assert!(r.lhs.im.is_zero());
        assert!(r.equal, "lhs {:?} rhs {}", r.lhs, r.rhs);
    }

    #[test]
    fn eigen_model_csv() {
        let p = ScalingParams::new(0.01, 0.1, 2).unwrap();
        let m = EigenModel::new(&s67(), &ones(), p).unwrap();
        assert!((m.m - (1.0 + 1e-4 * 58.0)).abs() < 1e-15);
        let csv = m.csv(5..=9).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(m.remainder_bound(10) > 0.0);
    }

    proptest! {
        #[test]
        fn linear_in_xi(a in 0i64..20, b in 0i64..20, c in 0i64..20, d in 0i64..20, j in 8i64..200) {
            let s = TangentialSet::new(&[6, 7]).unwrap();
            let x1 = vec![int(a), int(b)];
            let x2 = vec![int(c), int(d)];
            let sum: Vec<Rational> = x1.iter().zip(&x2).map(|(p, q)| p + q).collect();
            prop_assert_eq!(c_of_xi(&s, &sum).unwrap(), c_of_xi(&s, &x1).unwrap() + c_of_xi(&s, &x2).unwrap());
            prop_assert_eq!(ell_j_closed(&s, &sum, j).unwrap(), ell_j_closed(&s, &x1, j).unwrap() + ell_j_closed(&s, &x2, j).unwrap());
        }
    }
}

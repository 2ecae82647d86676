//! Homogeneous polynomial Hamiltonians in the Fourier coefficients u_j.
//!
//! A polynomial is a map from sorted index tuples to coefficients in ℚ[i];
//! `u_{j₁}…u_{jₙ}` with repeated indices is stored once, so permutation
//! multiplicities live inside the coefficient.
//!
//! Brackets use `{F,G} = i Σ_j λ(j) ∂_{u_j}F ∂_{u_{−j}}G`, the Fourier form of
//! `(∇F, J∇G)` with the normalized measure on the circle. With this choice
//! `{H⁽²⁾, u_{j₁}…u_{jₙ}} = −i(Σλ(j_k)) u_{j₁}…u_{jₙ}`.

use crate::error::{invalid, Error, Result};
use crate::scalar::{fmt_rational, gzero, int, is_gzero, parse_rational, rat, real, GaussianRational, Rational};
use crate::sites::{dispersion, TangentialSet};
use num_complex::Complex;
use num_traits::{One, Zero};
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

/// A sorted tuple of nonzero indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial(Vec<i64>);

impl Monomial {
    pub fn new(mut idx: Vec<i64>) -> Result<Self> {
        if idx.iter().any(|&j| j == 0) {
            return invalid("monomial indices must be nonzero");
        }
        idx.sort_unstable();
        Ok(Monomial(idx))
    }

    pub fn indices(&self) -> &[i64] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn momentum(&self) -> i64 {
        self.0.iter().sum()
    }

    /// Σ λ(j_k), the eigenvalue of the monomial under −i·ad_{H⁽²⁾}.
    pub fn lambda_sum(&self) -> Rational {
        self.0.iter().fold(Rational::zero(), |acc, &j| acc + dispersion(j))
    }

    /// The monomial with every index negated (complex conjugate).
    pub fn reflect(&self) -> Monomial {
        let mut v: Vec<i64> = self.0.iter().map(|j| -j).collect();
        v.reverse();
        Monomial(v)
    }

    /// Product of pairs `u_j u_{−j}`.
    pub fn is_trivial(&self) -> bool {
        let mut counts: HashMap<i64, i64> = HashMap::new();
        for &j in &self.0 {
            *counts.entry(j).or_insert(0) += j.signum();
        }
        let mut net: HashMap<i64, i64> = HashMap::new();
        for (j, c) in counts {
            *net.entry(j.abs()).or_insert(0) += c;
        }
        net.values().all(|&c| c == 0)
    }

    /// Number of indices in S^c.
    pub fn z_degree(&self, s: &TangentialSet) -> usize {
        self.0.iter().filter(|&&j| s.is_normal(j)).count()
    }

    pub fn max_abs(&self) -> i64 {
        self.0.iter().map(|j| j.abs()).max().unwrap_or(0)
    }

    fn without_one(&self, j: i64) -> Vec<i64> {
        let mut v = self.0.clone();
        let p = v.iter().position(|&k| k == j).expect("index present");
        v.remove(p);
        v
    }

    /// Number of distinct orderings of the tuple.
    pub fn permutations(&self) -> u64 {
        let n = self.0.len() as u64;
        let mut total: u64 = (1..=n).product();
        let mut i = 0;
        while i < self.0.len() {
            let mut k = i;
            while k < self.0.len() && self.0[k] == self.0[i] {
                k += 1;
            }
            total /= (1..=(k - i) as u64).product::<u64>();
            i = k;
        }
        total
    }
}

fn merge_sorted(a: &[i64], b: &[i64]) -> Vec<i64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut k) = (0, 0);
    while i < a.len() && k < b.len() {
        if a[i] <= b[k] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[k]);
            k += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[k..]);
    out
}

/// A homogeneous polynomial of fixed degree.
#[derive(Debug, Clone, PartialEq)]
pub struct HomPoly {
    degree: usize,
    terms: BTreeMap<Monomial, GaussianRational>,
    /// Set when every monomial is known to satisfy Σj = 0.
    pub momentum_flag: bool,
}

impl HomPoly {
    pub fn zero(degree: usize) -> Self {
        HomPoly { degree, terms: BTreeMap::new(), momentum_flag: true }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &GaussianRational)> {
        self.terms.iter()
    }

    pub fn coeff(&self, m: &Monomial) -> GaussianRational {
        self.terms.get(m).cloned().unwrap_or_else(gzero)
    }

    pub fn coeff_of(&self, idx: &[i64]) -> GaussianRational {
        match Monomial::new(idx.to_vec()) {
            Ok(m) => self.coeff(&m),
            Err(_) => gzero(),
        }
    }

    /// Adds `c` to the coefficient of `m`, dropping it if it cancels.
    pub fn add_term(&mut self, m: Monomial, c: GaussianRational) -> Result<()> {
        if m.degree() != self.degree {
            return invalid(format!("degree {} monomial in degree {} polynomial", m.degree(), self.degree));
        }
        if m.momentum() != 0 {
            self.momentum_flag = false;
        }
        self.add_unchecked(m, c);
        Ok(())
    }

    fn add_unchecked(&mut self, m: Monomial, c: GaussianRational) {
        if is_gzero(&c) {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if is_gzero(o.get()) {
                    o.remove();
                }
            }
        }
    }

    fn from_map(degree: usize, map: HashMap<Monomial, GaussianRational>) -> Self {
        let mut momentum_flag = true;
        let terms: BTreeMap<_, _> = map
            .into_iter()
            .filter(|(_, c)| !is_gzero(c))
            .inspect(|(m, _)| {
                if m.momentum() != 0 {
                    momentum_flag = false;
                }
            })
            .collect();
        HomPoly { degree, terms, momentum_flag }
    }

    pub fn add(&self, other: &HomPoly) -> Result<HomPoly> {
        if self.degree != other.degree {
            return invalid("adding polynomials of different degree");
        }
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_unchecked(m.clone(), c.clone());
        }
        out.momentum_flag = self.momentum_flag && other.momentum_flag;
        Ok(out)
    }

    pub fn sub(&self, other: &HomPoly) -> Result<HomPoly> {
        self.add(&other.scale(&real(int(-1))))
    }

    pub fn scale(&self, c: &GaussianRational) -> HomPoly {
        let mut out = HomPoly::zero(self.degree);
        out.momentum_flag = self.momentum_flag;
        if is_gzero(c) {
            return out;
        }
        for (m, v) in &self.terms {
            out.terms.insert(m.clone(), v * c);
        }
        out
    }

    /// Coefficientwise map; zero results are dropped.
    pub fn map_coeffs(&self, f: impl Fn(&Monomial, &GaussianRational) -> GaussianRational) -> HomPoly {
        let mut out = HomPoly::zero(self.degree);
        out.momentum_flag = self.momentum_flag;
        for (m, c) in &self.terms {
            let v = f(m, c);
            if !is_gzero(&v) {
                out.terms.insert(m.clone(), v);
            }
        }
        out
    }

    pub fn filter(&self, keep: impl Fn(&Monomial) -> bool) -> HomPoly {
        let mut out = HomPoly::zero(self.degree);
        out.momentum_flag = self.momentum_flag;
        for (m, c) in &self.terms {
            if keep(m) {
                out.terms.insert(m.clone(), c.clone());
            }
        }
        out
    }

    /// coeff(−J) = conj(coeff(J)) for every monomial.
    pub fn is_real(&self) -> bool {
        self.terms.iter().all(|(m, c)| {
            let r = self.coeff(&m.reflect());
            r.re == c.re && r.im == -c.im.clone()
        })
    }

    pub fn satisfies_momentum(&self) -> bool {
        self.terms.keys().all(|m| m.momentum() == 0)
    }

    /// Largest |j| present.
    pub fn max_abs_index(&self) -> i64 {
        self.terms.keys().map(|m| m.max_abs()).max().unwrap_or(0)
    }

    /// Sum of |re| + |im| over coefficients, as a size indicator.
    pub fn l1_norm(&self) -> f64 {
        use crate::scalar::to_f64;
        self.terms.values().map(|c| to_f64(&c.re).abs() + to_f64(&c.im).abs()).sum()
    }

    /// One monomial per line: `j1 j2 ... jn  re  im`, lexicographic order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (m, c) in &self.terms {
            let idx: Vec<String> = m.0.iter().map(|j| j.to_string()).collect();
            s.push_str(&idx.join(" "));
            s.push_str("  ");
            s.push_str(&fmt_rational(&c.re));
            s.push_str("  ");
            s.push_str(&fmt_rational(&c.im));
            s.push('\n');
        }
        s
    }

    pub fn from_text(degree: usize, text: &str) -> Result<HomPoly> {
        let mut out = HomPoly::zero(degree);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != degree + 2 {
                return invalid(format!("line {}: expected {} fields", n + 1, degree + 2));
            }
            let idx: Vec<i64> = fields[..degree]
                .iter()
                .map(|f| f.parse::<i64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("line {}: {e}", n + 1)))?;
            let re = parse_rational(fields[degree])
                .ok_or_else(|| Error::InvalidInput(format!("line {}: bad real part", n + 1)))?;
            let im = parse_rational(fields[degree + 1])
                .ok_or_else(|| Error::InvalidInput(format!("line {}: bad imaginary part", n + 1)))?;
            out.add_term(Monomial::new(idx)?, Complex::new(re, im))?;
        }
        Ok(out)
    }
}

impl fmt::Display for HomPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// `Σ_{j=1..B} u_j u_{−j}`, the quadratic energy truncated at |j| ≤ B.
pub fn dp_quadratic(bound: i64) -> HomPoly {
    diagonal_quadratic(bound, |_| Rational::one())
}

/// `Σ_{j=1..B} w(j) |u_j|²`.
pub fn diagonal_quadratic(bound: i64, w: impl Fn(i64) -> Rational) -> HomPoly {
    let mut h = HomPoly::zero(2);
    for j in 1..=bound {
        h.add_unchecked(Monomial(vec![-j, j]), real(w(j)));
    }
    h
}

/// The momentum quadratic `Σ_{j≥1} (j/λ(j)) |u_j|²`, truncated.
pub fn momentum_quadratic(bound: i64) -> HomPoly {
    diagonal_quadratic(bound, |j| int(j) / dispersion(j))
}

/// `−(1/6) Σ_{a+b+c=0} u_a u_b u_c` over |a|,|b|,|c| ≤ B, keeping monomials
/// accepted by `keep`.
pub fn dp_cubic_filtered(bound: i64, keep: impl Fn(&Monomial) -> bool) -> HomPoly {
    let mut h = HomPoly::zero(3);
    for a in -bound..=bound {
        for b in a..=bound {
            let c = -a - b;
            if a == 0 || b == 0 || c < b || c.abs() > bound {
                continue;
            }
            let m = Monomial(vec![a, b, c]);
            if !keep(&m) {
                continue;
            }
            let perms = m.permutations() as i64;
            h.add_unchecked(m, real(rat(-perms, 6)));
        }
    }
    h
}

pub fn dp_cubic(bound: i64) -> HomPoly {
    dp_cubic_filtered(bound, |_| true)
}

const PAR_THRESHOLD: usize = 64;

/// `{F, G}`.
pub fn poisson_bracket(f: &HomPoly, g: &HomPoly) -> Result<HomPoly> {
    bracket_filtered(f, g, &|_| true)
}

/// `{F, G}` keeping only output monomials accepted by `keep`.
pub fn bracket_filtered(
    f: &HomPoly,
    g: &HomPoly,
    keep: &(dyn Fn(&Monomial) -> bool + Sync),
) -> Result<HomPoly> {
    if f.degree < 2 || g.degree < 2 {
        return invalid("brackets need degree ≥ 2 inputs");
    }
    let out_degree = f.degree + g.degree - 2;
    let g_terms: Vec<(&Monomial, &GaussianRational)> = g.terms.iter().collect();
    let mut by_index: HashMap<i64, Vec<(usize, usize)>> = HashMap::new();
    for (n, (m, _)) in g_terms.iter().enumerate() {
        let mut i = 0;
        while i < m.0.len() {
            let j = m.0[i];
            let mut k = i;
            while k < m.0.len() && m.0[k] == j {
                k += 1;
            }
            by_index.entry(j).or_default().push((n, k - i));
            i = k;
        }
    }
    let f_terms: Vec<(&Monomial, &GaussianRational)> = f.terms.iter().collect();
    let work = |chunk: &[(&Monomial, &GaussianRational)]| -> HashMap<Monomial, GaussianRational> {
        let mut acc: HashMap<Monomial, GaussianRational> = HashMap::new();
        let mut lam_cache: HashMap<i64, Rational> = HashMap::new();
        for (mf, cf) in chunk {
            let mut i = 0;
            while i < mf.0.len() {
                let j = mf.0[i];
                let mut k = i;
                while k < mf.0.len() && mf.0[k] == j {
                    k += 1;
                }
                let mult_f = k - i;
                i = k;
                let Some(partners) = by_index.get(&-j) else { continue };
                let rest_f = mf.without_one(j);
                let lam = lam_cache.entry(j).or_insert_with(|| dispersion(j)).clone();
                for &(n, mult_g) in partners {
                    let (mg, cg) = g_terms[n];
                    let rest_g = mg.without_one(-j);
                    let mono = Monomial(merge_sorted(&rest_f, &rest_g));
                    if !keep(&mono) {
                        continue;
                    }
                    let scale = &lam * int((mult_f * mult_g) as i64);
                    let prod = *cf * cg;
                    // i · scale · prod
                    let c = Complex::new(-(&prod.im * &scale), &prod.re * &scale);
                    match acc.get_mut(&mono) {
                        Some(v) => *v += c,
                        None => {
                            acc.insert(mono, c);
                        }
                    }
                }
            }
        }
        acc
    };
    let map = if f_terms.len() >= PAR_THRESHOLD {
        let chunk = (f_terms.len() / (4 * rayon::current_num_threads().max(1))).max(8);
        f_terms
            .par_chunks(chunk)
            .map(work)
            .reduce(HashMap::new, |mut a, b| {
                for (m, c) in b {
                    match a.get_mut(&m) {
                        Some(v) => *v += c,
                        None => {
                            a.insert(m, c);
                        }
                    }
                }
                a
            })
    } else {
        work(&f_terms)
    };
    Ok(HomPoly::from_map(out_degree, map))
}

/// `{H⁽²⁾, K}`: multiplies each monomial by `−i Σ λ(j_k)`.
pub fn adjoint_action_h2(k: &HomPoly) -> HomPoly {
    k.map_coeffs(|m, c| {
        let s = m.lambda_sum();
        Complex::new(&c.im * &s, -(&c.re * &s))
    })
}

/// Solves `{H⁽²⁾, F} = Π_Rg K` on the range; kernel monomials are dropped.
pub fn solve_homological(k: &HomPoly) -> HomPoly {
    k.map_coeffs(|m, c| {
        let s = m.lambda_sum();
        if s.is_zero() {
            return gzero();
        }
        // c / (−i s) = i c / s
        Complex::new(-(&c.im / &s), &c.re / &s)
    })
}

pub fn project_kernel(k: &HomPoly) -> HomPoly {
    k.filter(|m| m.lambda_sum().is_zero())
}

pub fn project_range(k: &HomPoly) -> HomPoly {
    k.filter(|m| !m.lambda_sum().is_zero())
}

pub fn project_trivial(k: &HomPoly) -> HomPoly {
    k.filter(|m| m.is_trivial())
}

/// Selection rule on the number of normal indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZDegree {
    Eq(usize),
    AtMost(usize),
    AtLeast(usize),
}

impl ZDegree {
    pub fn accepts(self, d: usize) -> bool {
        match self {
            ZDegree::Eq(k) => d == k,
            ZDegree::AtMost(k) => d <= k,
            ZDegree::AtLeast(k) => d >= k,
        }
    }
}

pub fn project_z_degree(k: &HomPoly, s: &TangentialSet, rule: ZDegree) -> HomPoly {
    k.filter(|m| rule.accepts(m.z_degree(s)))
}

/// A polynomial split by the number of normal indices.
#[derive(Debug, Clone)]
pub struct ZDegreeSplit {
    pub sites: TangentialSet,
    pub parts: BTreeMap<usize, HomPoly>,
}

impl ZDegreeSplit {
    pub fn new(k: &HomPoly, s: &TangentialSet) -> Self {
        let mut parts: BTreeMap<usize, HomPoly> = BTreeMap::new();
        for (m, c) in k.terms() {
            parts
                .entry(m.z_degree(s))
                .or_insert_with(|| HomPoly::zero(k.degree()))
                .add_unchecked(m.clone(), c.clone());
        }
        ZDegreeSplit { sites: s.clone(), parts }
    }

    pub fn part(&self, d: usize) -> HomPoly {
        self.parts.get(&d).cloned().unwrap_or_else(|| HomPoly::zero(0))
    }
}

/// Sum of homogeneous pieces, stored by degree.
pub type PolyByDegree = BTreeMap<usize, HomPoly>;

pub fn accumulate(target: &mut PolyByDegree, p: HomPoly) -> Result<()> {
    if p.is_empty() {
        return Ok(());
    }
    let d = p.degree();
    match target.remove(&d) {
        Some(q) => {
            let s = q.add(&p)?;
            if !s.is_empty() {
                target.insert(d, s);
            }
        }
        None => {
            target.insert(d, p);
        }
    }
    Ok(())
}

/// Direction of the Lie-series conjugation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conjugation {
    /// `H ∘ Φ_F = Σ (−1)^k/k! ad_F^k H`.
    Forward,
    /// `H ∘ Φ_F⁻¹ = Σ 1/k! ad_F^k H`.
    Inverse,
}

/// Lie-series expansion of H composed with the time-one flow of F, collected
/// by degree through `max_degree`.
pub fn flow_conjugate(h: &[HomPoly], f: &HomPoly, max_degree: usize, dir: Conjugation) -> Result<Vec<HomPoly>> {
    let by = flow_conjugate_filtered(h, f, max_degree, dir, &|_| true)?;
    Ok(by.into_values().collect())
}

/// As [`flow_conjugate`], pruning intermediate monomials rejected by `keep`.
/// Pruning is exact only when rejected monomials cannot feed retained ones.
pub fn flow_conjugate_filtered(
    h: &[HomPoly],
    f: &HomPoly,
    max_degree: usize,
    dir: Conjugation,
    keep: &(dyn Fn(&Monomial) -> bool + Sync),
) -> Result<PolyByDegree> {
    if let Some(p) = h.iter().find(|p| p.degree() > max_degree) {
        return invalid(format!("truncation degree {max_degree} below input degree {}", p.degree()));
    }
    let mut out = PolyByDegree::new();
    for p in h {
        accumulate(&mut out, p.clone())?;
    }
    if f.is_empty() || f.degree() <= 2 {
        if !f.is_empty() {
            return invalid("generators must have degree ≥ 3");
        }
        return Ok(out);
    }
    let step = f.degree() - 2;
    for p in h {
        let mut term = p.clone();
        let mut k = 1usize;
        while term.degree() + step <= max_degree && !term.is_empty() {
            let next = bracket_filtered(f, &term, keep)?;
            let mut c = rat(1, k as i64);
            if dir == Conjugation::Forward {
                c = -c;
            }
            term = next.scale(&real(c));
            accumulate(&mut out, term.clone())?;
            k += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::imag;
    use proptest::prelude::*;

    fn mono(v: &[i64]) -> Monomial {
        Monomial::new(v.to_vec()).unwrap()
    }

    fn poly(degree: usize, terms: &[(&[i64], GaussianRational)]) -> HomPoly {
        let mut p = HomPoly::zero(degree);
        for (m, c) in terms {
            p.add_term(mono(m), c.clone()).unwrap();
        }
        p
    }

    #[test]
    fn h2_bracket_with_itself() {
        let h2 = dp_quadratic(5);
        assert!(poisson_bracket(&h2, &h2).unwrap().is_empty());
    }

    #[test]
    fn adjoint_matches_bracket() {
        let h2 = dp_quadratic(6);
        let k = poly(3, &[(&[1, 2, -3], real(int(1))), (&[-1, -2, 3], real(int(1)))]);
        assert_eq!(poisson_bracket(&h2, &k).unwrap(), adjoint_action_h2(&k));
        // λ(1)+λ(2)−λ(3) = 9/5
        assert_eq!(adjoint_action_h2(&k).coeff(&mono(&[1, 2, -3])), imag(rat(-9, 5)));
    }

    #[test]
    fn kernel_examples() {
        let trivial = poly(2, &[(&[1, -1], real(int(1)))]);
        assert!(adjoint_action_h2(&trivial).is_empty());
        let res = poly(4, &[(&[2, 2, -1, -3], real(int(1)))]);
        assert!(adjoint_action_h2(&res).is_empty());
        assert!(solve_homological(&res).is_empty());
        assert_eq!(project_kernel(&res), res);
        assert!(project_trivial(&res).is_empty());
        let pairs = poly(4, &[(&[1, -1, 2, -2], real(int(3)))]);
        assert_eq!(project_trivial(&pairs), pairs);
    }

    #[test]
    fn cubic_generator_value() {
        let h3 = dp_cubic(13);
        let m = mono(&[6, 7, -13]);
        // symmetric coefficient −1/6, six orderings
        assert_eq!(h3.coeff(&m), real(int(-1)));
        let f = solve_homological(&h3);
        let s = m.lambda_sum();
        assert_eq!(s, rat(10647, 15725));
        let expected = crate::scalar::gone() / (imag(int(6)) * real(s)) * real(int(6));
        assert_eq!(f.coeff(&m), expected);
        let v = crate::scalar::to_f64(&(f.coeff(&m).im / int(6)));
        assert!((v + 0.2461).abs() < 1e-4);
    }

    #[test]
    fn homological_inverts_on_range() {
        let h3 = dp_cubic(9);
        let f = solve_homological(&h3);
        assert_eq!(solve_homological(&adjoint_action_h2(&f)), project_range(&f));
        assert_eq!(adjoint_action_h2(&f), project_range(&h3));
    }

    #[test]
    fn conjugation_cancels_cubic() {
        // Conjugating H2 + H3 by the generator cancels H3 exactly.
        let s = TangentialSet::new(&[2, 3]).unwrap();
        let h2 = dp_quadratic(6);
        let h3 = dp_cubic(6);
        let h3_low = project_z_degree(&h3, &s, ZDegree::AtMost(1));
        let f = solve_homological(&h3_low);
        let out = flow_conjugate(&[h2.clone(), h3.clone()], &f, 3, Conjugation::Inverse).unwrap();
        let cubic = out.iter().find(|p| p.degree() == 3).unwrap();
        assert_eq!(*cubic, project_z_degree(&h3, &s, ZDegree::AtLeast(2)));
        assert_eq!(*out.iter().find(|p| p.degree() == 2).unwrap(), h2);
    }

    #[test]
    fn quartic_term_identity() {
        // (1/2){F,{F,H2}} + {F,H3} = (1/2){F,H3^{≤1}} + {F,H3^{≥2}}
        let s = TangentialSet::new(&[2, 3]).unwrap();
        let b = 9;
        let h2 = dp_quadratic(b);
        let h3 = dp_cubic(b);
        let low = project_z_degree(&h3, &s, ZDegree::AtMost(1));
        let high = project_z_degree(&h3, &s, ZDegree::AtLeast(2));
        let f = solve_homological(&low);
        let fh2 = poisson_bracket(&f, &h2).unwrap();
        let lhs = poisson_bracket(&f, &fh2)
            .unwrap()
            .scale(&real(rat(1, 2)))
            .add(&poisson_bracket(&f, &h3).unwrap())
            .unwrap();
        let rhs = poisson_bracket(&f, &low)
            .unwrap()
            .scale(&real(rat(1, 2)))
            .add(&poisson_bracket(&f, &high).unwrap())
            .unwrap();
        let keep = |m: &Monomial| m.max_abs() <= 3;
        assert_eq!(lhs.filter(keep), rhs.filter(keep));
        assert!(!lhs.filter(keep).is_empty());
    }

    #[test]
    fn flow_identity_for_zero_generator() {
        let h3 = dp_cubic(4);
        let out = flow_conjugate(&[h3.clone()], &HomPoly::zero(3), 6, Conjugation::Forward).unwrap();
        assert_eq!(out, vec![h3]);
        assert!(flow_conjugate(&[dp_cubic(2)], &HomPoly::zero(3), 2, Conjugation::Forward).is_err());
    }

    #[test]
    fn first_order_term_is_bracket() {
        let f = solve_homological(&dp_cubic(3));
        let h = dp_cubic(3);
        let fwd = flow_conjugate(&[h.clone()], &f, 4, Conjugation::Forward).unwrap();
        let inv = flow_conjugate(&[h.clone()], &f, 4, Conjugation::Inverse).unwrap();
        let b = poisson_bracket(&f, &h).unwrap();
        assert_eq!(fwd[1], b.scale(&real(int(-1))));
        assert_eq!(inv[1], b);
    }

    #[test]
    fn text_round_trip() {
        let h = dp_cubic(4);
        let t = h.to_text();
        assert_eq!(HomPoly::from_text(3, &t).unwrap(), h);
        let first = t.lines().next().unwrap();
        assert_eq!(first, "-4 1 3  -1  0");
        assert!(HomPoly::from_text(3, "1 2  1  0").is_err());
    }

    #[test]
    fn rejects_low_degree() {
        let p = HomPoly::zero(1);
        assert!(poisson_bracket(&p, &dp_quadratic(2)).is_err());
    }

    #[test]
    fn monomial_helpers() {
        let m = mono(&[3, -1, 1, -3]);
        assert!(m.is_trivial());
        assert_eq!(m.permutations(), 24);
        assert_eq!(mono(&[2, 2, -4]).permutations(), 3);
        assert!(!mono(&[2, 2, -1, -3]).is_trivial());
        assert!(Monomial::new(vec![0, 1]).is_err());
    }

    fn arb_real_poly(degree: usize) -> impl Strategy<Value = HomPoly> {
        let idx = prop::collection::vec(prop::sample::select(vec![-3i64, -2, -1, 1, 2, 3]), degree);
        let term = (idx, -4i64..=4, -4i64..=4, 1i64..=3);
        prop::collection::vec(term, 1..5).prop_map(move |terms| {
            let mut p = HomPoly::zero(degree);
            for (idx, re, im, d) in terms {
                let m = Monomial::new(idx).unwrap();
                let c = Complex::new(rat(re, d), rat(im, d));
                let cc = Complex::new(c.re.clone(), -c.im.clone());
                p.add_term(m.reflect(), cc).unwrap();
                p.add_term(m, c).unwrap();
            }
            p
        })
    }

    fn arb_momentum_poly(degree: usize) -> impl Strategy<Value = HomPoly> {
        arb_real_poly(degree).prop_map(|p| p.filter(|m| m.momentum() == 0))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn antisymmetry(f in arb_real_poly(3), g in arb_real_poly(2)) {
            let a = poisson_bracket(&f, &g).unwrap();
            let b = poisson_bracket(&g, &f).unwrap();
            prop_assert!(a.add(&b).unwrap().is_empty());
        }

        #[test]
        fn jacobi(f in arb_real_poly(2), g in arb_real_poly(3), h in arb_real_poly(3)) {
            let t1 = poisson_bracket(&f, &poisson_bracket(&g, &h).unwrap()).unwrap();
            let t2 = poisson_bracket(&g, &poisson_bracket(&h, &f).unwrap()).unwrap();
            let t3 = poisson_bracket(&h, &poisson_bracket(&f, &g).unwrap()).unwrap();
            let sum = t1.add(&t2).unwrap().add(&t3).unwrap();
            prop_assert!(sum.is_empty());
        }

        #[test]
        fn reality_preserved(f in arb_real_poly(3), g in arb_real_poly(3)) {
            prop_assert!(f.is_real() && g.is_real());
            prop_assert!(poisson_bracket(&f, &g).unwrap().is_real());
        }

        #[test]
        fn momentum_preserved(f in arb_momentum_poly(3), g in arb_momentum_poly(4)) {
            prop_assert!(poisson_bracket(&f, &g).unwrap().satisfies_momentum());
        }

        #[test]
        fn commutes_with_momentum(f in arb_momentum_poly(4)) {
            let k1 = momentum_quadratic(3);
            prop_assert!(poisson_bracket(&k1, &f).unwrap().is_empty());
        }

        #[test]
        fn projectors_complementary(f in arb_real_poly(4)) {
            prop_assert!(project_kernel(&project_range(&f)).is_empty());
            prop_assert_eq!(project_kernel(&f).add(&project_range(&f)).unwrap(), f);
        }
    }
}

//! Resonance classification and the weak Birkhoff normal form.

use crate::error::{invalid, Error, Result};
use crate::polyham::{
    accumulate, adjoint_action_h2, bracket_filtered, dp_cubic_filtered, project_kernel, project_range,
    project_z_degree, solve_homological, HomPoly, Monomial, PolyByDegree, ZDegree,
};
use crate::scalar::{int, rat, real, Rational};
use crate::sites::{dispersion, dispersion_f64, kr_weight_int, TangentialSet};
use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// Largest degree handled by the normal form driver.
pub const MAX_DEGREE: usize = 8;

/// Default cap on the number of monomials held in any single piece.
pub const DEFAULT_MONOMIAL_BUDGET: u64 = 10_000_000;

/// A sorted index tuple with its resonance flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResonanceTuple {
    pub indices: Vec<i64>,
    pub momentum_ok: bool,
    pub h2_resonant: bool,
    /// Largest M with the weighted sums vanishing for r = 2..M+1, up to the
    /// scan cap.
    pub m_resonant_up_to: u32,
    /// Number of distinct orderings.
    pub multiplicity: u64,
    pub trivial: bool,
}

impl ResonanceTuple {
    pub fn classify(indices: &[i64], m_cap: u32) -> ResonanceTuple {
        let mut v = indices.to_vec();
        v.sort_unstable();
        let mono = Monomial::new(v.clone()).ok();
        let momentum_ok = v.iter().sum::<i64>() == 0;
        let h2_resonant = lambda_sum(&v).is_zero();
        let m_resonant_up_to = if momentum_ok && h2_resonant { m_level(&v, m_cap) } else { 0 };
        ResonanceTuple {
            multiplicity: mono.as_ref().map_or(0, |m| m.permutations()),
            trivial: mono.as_ref().is_some_and(|m| m.is_trivial()),
            indices: v,
            momentum_ok,
            h2_resonant,
            m_resonant_up_to,
        }
    }

    /// `order,indices,m_resonant_up_to` with space-separated indices.
    pub fn csv_row(&self) -> String {
        let idx: Vec<String> = self.indices.iter().map(|j| j.to_string()).collect();
        format!("{},{},{}", self.indices.len(), idx.join(" "), self.m_resonant_up_to)
    }
}

fn lambda_sum(t: &[i64]) -> Rational {
    t.iter().fold(Rational::zero(), |acc, &j| acc + dispersion(j))
}

/// `Σ (1+j²)² j^{2(r−2)} λ(j)` over the tuple.
pub fn weighted_sum(t: &[i64], r: u32) -> Rational {
    t.iter()
        .fold(Rational::zero(), |acc, &j| acc + kr_weight_int(r, j) * dispersion(j))
}

fn m_level(t: &[i64], cap: u32) -> u32 {
    let mut m = 0;
    for r in 2..=cap + 1 {
        if !weighted_sum(t, r).is_zero() {
            break;
        }
        m = r - 1;
    }
    m
}

/// Momentum, H⁽²⁾-resonance and the weighted sums for r = 2..M+1.
pub fn is_m_resonance(t: &[i64], m: u32) -> bool {
    if t.iter().any(|&j| j == 0) || t.iter().sum::<i64>() != 0 || !lambda_sum(t).is_zero() {
        return false;
    }
    (2..=m + 1).all(|r| weighted_sum(t, r).is_zero())
}

fn binomial(n: u64, k: u64) -> u64 {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Number of sorted (n−1)-prefixes scanned for order n and bound B.
pub fn enumeration_size(order: usize, bound: i64) -> u64 {
    let values = 2 * bound as u64;
    binomial(values + order as u64 - 2, order as u64 - 1)
}

/// All multisets of nonzero indices in [−B, B] with zero momentum and
/// vanishing Σλ, sorted. `m_cap` bounds the M-resonance level recorded.
pub fn enumerate_h2_resonances(order: usize, bound: i64, m_cap: u32, budget: u64) -> Result<Vec<ResonanceTuple>> {
    if order < 3 {
        return invalid(format!("order {order} below 3"));
    }
    if order > MAX_DEGREE {
        return invalid(format!("order {order} above {MAX_DEGREE}"));
    }
    if bound < 1 {
        return invalid("bound must be at least 1");
    }
    let needed = enumeration_size(order, bound);
    if needed > budget {
        return Err(Error::Budget { needed, limit: budget });
    }
    let values: Vec<i64> = (-bound..=bound).filter(|&j| j != 0).collect();
    let lam: Vec<f64> = values.iter().map(|&j| dispersion_f64(j as f64)).collect();
    let pos = |j: i64| -> usize { if j < 0 { (j + bound) as usize } else { (j + bound - 1) as usize } };
    // Σλ for a true resonance is far below this; anything else is checked exactly.
    let tol = 1e-8;

    let mut found: Vec<Vec<i64>> = (0..values.len())
        .into_par_iter()
        .flat_map_iter(|first| {
            let mut out = Vec::new();
            let mut idx = vec![first; order - 1];
            let mut stack_sum = vec![0i64; order];
            let mut stack_lam = vec![0f64; order];
            // depth-first over nondecreasing prefixes starting at `first`
            fn rec(
                depth: usize,
                start: usize,
                idx: &mut Vec<usize>,
                sums: &mut Vec<i64>,
                lams: &mut Vec<f64>,
                ctx: &(&[i64], &[f64], i64, f64, &dyn Fn(i64) -> usize),
                out: &mut Vec<Vec<i64>>,
            ) {
                let (values, lam, bound, tol, pos) = *ctx;
                let n1 = idx.len();
                if depth == n1 {
                    let last = -sums[depth];
                    if last == 0 || last.abs() > bound || last < values[idx[n1 - 1]] {
                        return;
                    }
                    let total = lams[depth] + lam[pos(last)];
                    if total.abs() < tol {
                        let mut t: Vec<i64> = idx.iter().map(|&i| values[i]).collect();
                        t.push(last);
                        out.push(t);
                    }
                    return;
                }
                for i in start..values.len() {
                    let v = values[i];
                    let s = sums[depth] + v;
                    // the slots after this one and the last index are all ≥ v
                    let remaining = (n1 - depth) as i64;
                    if s + remaining * v > 0 {
                        break;
                    }
                    if -s - (remaining - 1) * bound > bound {
                        continue;
                    }
                    idx[depth] = i;
                    sums[depth + 1] = s;
                    lams[depth + 1] = lams[depth] + lam[i];
                    rec(depth + 1, i, idx, sums, lams, ctx, out);
                }
            }
            let ctx: (&[i64], &[f64], i64, f64, &dyn Fn(i64) -> usize) = (&values, &lam, bound, tol, &pos);
            idx[0] = first;
            stack_sum[1] = values[first];
            stack_lam[1] = lam[first];
            rec(1, first, &mut idx, &mut stack_sum, &mut stack_lam, &ctx, &mut out);
            out.into_iter()
        })
        .collect();
    found.sort();
    let mut exact: Vec<ResonanceTuple> = found
        .par_iter()
        .filter(|t| lambda_sum(t).is_zero())
        .map(|t| ResonanceTuple::classify(t, m_cap))
        .collect();
    exact.sort_by(|a, b| a.indices.cmp(&b.indices));
    Ok(exact)
}

/// Output of the normal form driver.
#[derive(Debug, Clone)]
pub struct WbnfResult {
    pub sites: TangentialSet,
    pub max_degree: usize,
    /// Generators by degree.
    pub generators: BTreeMap<usize, HomPoly>,
    /// Kernel pieces at z-degree 0.
    pub normal_form: BTreeMap<usize, HomPoly>,
    /// Kernel pieces at z-degree 1.
    pub residual_z1: BTreeMap<usize, HomPoly>,
    /// Transformed Hamiltonian above degree 2, pruned to the monomials that
    /// can still reach z-degree ≤ 1 below the degree cap.
    pub hamiltonian: PolyByDegree,
}

impl WbnfResult {
    pub fn generator_norms(&self) -> BTreeMap<usize, f64> {
        self.generators.iter().map(|(d, g)| (*d, g.l1_norm())).collect()
    }

    pub fn z40(&self) -> HomPoly {
        self.normal_form.get(&4).cloned().unwrap_or_else(|| HomPoly::zero(4))
    }
}

/// Pruning rule for a run truncated at `max_degree`.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub max_degree: usize,
    pub index_bound: i64,
    sites: TangentialSet,
}

impl Truncation {
    pub fn new(s: &TangentialSet, max_degree: usize) -> Self {
        Truncation {
            max_degree,
            index_bound: (max_degree as i64 - 1) * s.jbar1,
            sites: s.clone(),
        }
    }

    pub fn keep(&self, m: &Monomial) -> bool {
        if m.max_abs() > self.index_bound {
            return false;
        }
        let limit = (self.max_degree + 1).saturating_sub(m.degree()).max(1);
        m.z_degree(&self.sites) <= limit
    }
}

/// The DP Hamiltonian above degree 2, pruned for a run up to `max_degree`.
pub fn dp_hamiltonian(s: &TangentialSet, max_degree: usize) -> PolyByDegree {
    let t = Truncation::new(s, max_degree);
    let mut h = PolyByDegree::new();
    h.insert(3, dp_cubic_filtered(t.index_bound, |m| t.keep(m)));
    h
}

fn check_budget(p: &HomPoly, budget: u64) -> Result<()> {
    if p.len() as u64 > budget {
        return Err(Error::Budget { needed: p.len() as u64, limit: budget });
    }
    Ok(())
}

/// One normalization step at degree `n = N+3`: returns the generator and the
/// transformed pieces. `h` must already be normalized below degree n; H⁽²⁾ is
/// handled exactly and not stored.
pub fn wbnf_step(
    h: &PolyByDegree,
    s: &TangentialSet,
    n: usize,
    trunc: &Truncation,
    budget: u64,
) -> Result<(HomPoly, PolyByDegree)> {
    if n < 3 || n > trunc.max_degree {
        return invalid(format!("step degree {n} outside 3..={}", trunc.max_degree));
    }
    let piece = h.get(&n).cloned().unwrap_or_else(|| HomPoly::zero(n));
    let low = project_z_degree(&piece, s, ZDegree::AtMost(1));
    let z1_kernel = project_kernel(&project_z_degree(&piece, s, ZDegree::Eq(1)));
    if !z1_kernel.is_empty() {
        let (m, _) = z1_kernel.terms().next().unwrap();
        return Err(Error::Invariant(format!(
            "degree {n} z-degree-1 kernel monomial {:?} survives",
            m.indices()
        )));
    }
    let gen = solve_homological(&low);
    let bound = (n as i64 - 1) * s.jbar1;
    if gen.max_abs_index() > bound {
        return Err(Error::Invariant(format!("generator support exceeds {bound}")));
    }
    if gen.is_empty() {
        return Ok((gen, h.clone()));
    }
    let keep = |m: &Monomial| trunc.keep(m);
    let mut out = PolyByDegree::new();
    for p in h.values() {
        accumulate(&mut out, p.clone())?;
    }
    // {F, H⁽²⁾} = −ad(F) = −Π_Rg H⁽ⁿ,≤¹⁾
    let first_h2 = adjoint_action_h2(&gen).scale(&real(int(-1)));
    let step = n - 2;
    let mut seeds: Vec<(HomPoly, usize)> = vec![(first_h2, 1)];
    for p in h.values() {
        seeds.push((p.clone(), 0));
    }
    for (seed, k0) in seeds {
        let mut term = seed;
        let mut k = k0;
        if k == 1 {
            accumulate(&mut out, term.clone())?;
        }
        while term.degree() + step <= trunc.max_degree && !term.is_empty() {
            k += 1;
            let next = bracket_filtered(&gen, &term, &keep)?;
            check_budget(&next, budget)?;
            term = next.scale(&real(rat(1, k as i64)));
            accumulate(&mut out, term.clone())?;
        }
    }
    // the range part at degree n, z-degree ≤ 1 must now be gone
    if let Some(p) = out.get(&n) {
        let left = project_range(&project_z_degree(p, s, ZDegree::AtMost(1)));
        if !left.is_empty() {
            return Err(Error::Invariant(format!("degree {n} range part not removed")));
        }
    }
    Ok((gen, out))
}

/// Normalizes degrees 3 through `max_order + 2`.
pub fn run_wbnf(s: &TangentialSet, max_order: usize, budget: u64) -> Result<WbnfResult> {
    if max_order == 0 || max_order > MAX_DEGREE - 2 {
        return invalid(format!("max_order {max_order} outside 1..={}", MAX_DEGREE - 2));
    }
    let max_degree = max_order + 2;
    let trunc = Truncation::new(s, max_degree);
    let mut h = dp_hamiltonian(s, max_degree);
    let mut result = WbnfResult {
        sites: s.clone(),
        max_degree,
        generators: BTreeMap::new(),
        normal_form: BTreeMap::new(),
        residual_z1: BTreeMap::new(),
        hamiltonian: PolyByDegree::new(),
    };
    for n in 3..=max_degree {
        let (gen, next) = wbnf_step(&h, s, n, &trunc, budget)?;
        let piece = next.get(&n).cloned().unwrap_or_else(|| HomPoly::zero(n));
        let z0 = project_kernel(&project_z_degree(&piece, s, ZDegree::Eq(0)));
        let z1 = project_kernel(&project_z_degree(&piece, s, ZDegree::Eq(1)));
        if let Some((m, _)) = z0.terms().find(|(m, _)| !m.is_trivial()) {
            return Err(Error::Invariant(format!("nontrivial kernel monomial {:?} at degree {n}", m.indices())));
        }
        if n % 2 == 1 && !z0.is_empty() {
            return Err(Error::Invariant(format!("odd degree {n} kernel is nonzero")));
        }
        result.generators.insert(n, gen);
        result.normal_form.insert(n, z0);
        result.residual_z1.insert(n, z1);
        h = next;
    }
    result.hamiltonian = h;
    Ok(result)
}

fn self_ratio(j: i64) -> Result<Rational> {
    let den = int(2) * dispersion(j) - dispersion(2 * j);
    if den.is_zero() {
        return Err(Error::VanishingDenominator(format!("2λ({j}) − λ({})", 2 * j)));
    }
    Ok(dispersion(2 * j) / den)
}

/// `λ(j₁+j₂)/(λ(j₁)+λ(j₂)−λ(j₁+j₂)) + λ(j₁−j₂)/(λ(j₁)−λ(j₂)−λ(j₁−j₂))`.
pub fn cross_sum(j1: i64, j2: i64) -> Result<Rational> {
    let (l1, l2) = (dispersion(j1), dispersion(j2));
    let d_plus = &l1 + &l2 - dispersion(j1 + j2);
    let d_minus = &l1 - &l2 - dispersion(j1 - j2);
    if d_plus.is_zero() {
        return Err(Error::VanishingDenominator(format!("λ({j1})+λ({j2})−λ({})", j1 + j2)));
    }
    if d_minus.is_zero() {
        return Err(Error::VanishingDenominator(format!("λ({j1})−λ({j2})−λ({})", j1 - j2)));
    }
    Ok(dispersion(j1 + j2) / d_plus + dispersion(j1 - j2) / d_minus)
}

fn pair(j: i64, k: i64) -> Monomial {
    Monomial::new(vec![j, -j, k, -k]).expect("nonzero sites")
}

/// The quartic action Hamiltonian in closed form: `(1/2)λ(2j)/(2λ(j)−λ(2j))`
/// on |u_j|⁴ and both cross sums over ordered pairs on |u_{j₁}|²|u_{j₂}|².
pub fn h40_closed_form(s: &TangentialSet) -> Result<HomPoly> {
    let mut h = HomPoly::zero(4);
    for &j in s.splus() {
        h.add_term(pair(j, j), real(self_ratio(j)? / int(2)))?;
    }
    for &j1 in s.splus() {
        for &j2 in s.splus() {
            if j1 != j2 {
                h.add_term(pair(j1, j2), real(cross_sum(j1, j2)?))?;
            }
        }
    }
    Ok(h)
}

/// The kernel quartic evaluated as the resonant sum
/// `(1/8) Σ λ(j₁+j₂)/(λ(j₁)+λ(j₂)−λ(j₁+j₂)) u_{j₁}u_{j₂}u_{j₃}u_{j₄}` over
/// ordered quadruples in S with zero momentum and Σλ = 0, j₁+j₂ ≠ 0 ≠ j₃+j₄.
pub fn h40_resonant_sum(s: &TangentialSet) -> Result<HomPoly> {
    let sites = s.sites();
    let mut h = HomPoly::zero(4);
    for &a in &sites {
        for &b in &sites {
            if a + b == 0 {
                continue;
            }
            let den = dispersion(a) + dispersion(b) - dispersion(a + b);
            if den.is_zero() {
                return Err(Error::VanishingDenominator(format!("λ({a})+λ({b})−λ({})", a + b)));
            }
            let coef = dispersion(a + b) / den / int(8);
            for &c in &sites {
                let d = -a - b - c;
                if c + d == 0 || !s.contains(d) {
                    continue;
                }
                let t = [a, b, c, d];
                if !lambda_sum(&t).is_zero() {
                    continue;
                }
                h.add_term(Monomial::new(t.to_vec())?, real(coef.clone()))?;
            }
        }
    }
    Ok(h)
}

/// Coefficient of |u_j|²|u_k|² (j ≠ k) or |u_j|⁴ in an action Hamiltonian.
pub fn action_coefficient(h: &HomPoly, j: i64, k: i64) -> Rational {
    h.coeff(&pair(j, k)).re
}

/// Checks every monomial of `h` is a product of pairs.
pub fn is_action_only(h: &HomPoly) -> bool {
    h.terms().all(|(m, _)| m.is_trivial())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyham::dp_cubic;
    use crate::scalar::imag;

    fn s67() -> TangentialSet {
        TangentialSet::new(&[6, 7]).unwrap()
    }

    #[test]
    fn order_four_resonance() {
        let t = [2, 2, -1, -3];
        let r = ResonanceTuple::classify(&t, 8);
        assert!(r.momentum_ok && r.h2_resonant && !r.trivial);
        assert_eq!(r.m_resonant_up_to, 0);
        assert_eq!(weighted_sum(&t, 2), int(-240));
        assert!(!is_m_resonance(&t, 3));
        assert!(is_m_resonance(&[4, -4, 9, -9], 8));
        assert_eq!(ResonanceTuple::classify(&[4, -4, 9, -9], 8).m_resonant_up_to, 8);
    }

    #[test]
    fn enumeration_small() {
        let res = enumerate_h2_resonances(4, 3, 8, u64::MAX).unwrap();
        assert!(res.iter().any(|r| r.indices == vec![-3, -1, 2, 2]));
        assert!(res.iter().any(|r| r.indices == vec![-2, -1, 1, 3]) == lambda_sum(&[-2, -1, 1, 3]).is_zero());
        for i in 1..=3 {
            for j in i..=3 {
                let mut t = vec![i, -i, j, -j];
                t.sort();
                assert!(res.iter().any(|r| r.indices == t));
            }
        }
        // closed under negation
        for r in &res {
            let mut neg: Vec<i64> = r.indices.iter().map(|j| -j).collect();
            neg.sort();
            assert!(res.iter().any(|q| q.indices == neg));
        }
    }

    #[test]
    fn no_cubic_resonances() {
        assert!(enumerate_h2_resonances(3, 50, 8, u64::MAX).unwrap().is_empty());
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let b = 5;
        let res = enumerate_h2_resonances(4, b, 3, u64::MAX).unwrap();
        let mut brute = Vec::new();
        let vals: Vec<i64> = (-b..=b).filter(|&j| j != 0).collect();
        for &a in &vals {
            for &c in &vals {
                for &d in &vals {
                    let e = -a - c - d;
                    if e == 0 || e.abs() > b {
                        continue;
                    }
                    let mut t = vec![a, c, d, e];
                    t.sort();
                    if lambda_sum(&t).is_zero() && !brute.contains(&t) {
                        brute.push(t);
                    }
                }
            }
        }
        brute.sort();
        let got: Vec<Vec<i64>> = res.into_iter().map(|r| r.indices).collect();
        assert_eq!(got, brute);
    }

    #[test]
    fn budget_enforced() {
        assert!(matches!(enumerate_h2_resonances(6, 40, 8, 1000), Err(Error::Budget { .. })));
        assert!(enumerate_h2_resonances(9, 4, 8, u64::MAX).is_err());
        assert!(enumerate_h2_resonances(2, 4, 8, u64::MAX).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let s = TangentialSet::new(&[1, 2]).unwrap();
        let h = h40_closed_form(&s).unwrap();
        assert_eq!(action_coefficient(&h, 1, 1), rat(8, 9));
        assert_eq!(cross_sum(1, 2).unwrap(), rat(7, 9));
        // both orderings land on the same monomial
        assert_eq!(action_coefficient(&h, 1, 2), rat(14, 9));
    }

    #[test]
    fn first_generator_matches_direct_division() {
        let s = s67();
        let trunc = Truncation::new(&s, 4);
        let h = dp_hamiltonian(&s, 4);
        let (gen, _) = wbnf_step(&h, &s, 3, &trunc, DEFAULT_MONOMIAL_BUDGET).unwrap();
        let h3 = dp_cubic(30);
        for (m, c) in gen.terms() {
            assert!(m.z_degree(&s) <= 1);
            let sum = m.lambda_sum();
            let perms = int(m.permutations() as i64);
            let expected = crate::scalar::gone() / (imag(int(6)) * real(sum)) * real(perms);
            assert_eq!(*c, expected);
            assert_eq!(h3.coeff(m).re * int(-6), int(m.permutations() as i64));
        }
        assert!(!gen.coeff_of(&[6, 7, -13]).re.is_zero() || !gen.coeff_of(&[6, 7, -13]).im.is_zero());
    }

    #[test]
    fn pipeline_quartic_for_six_seven() {
        let s = s67();
        let res = run_wbnf(&s, 2, DEFAULT_MONOMIAL_BUDGET).unwrap();
        assert!(res.normal_form[&3].is_empty());
        assert!(res.residual_z1[&4].is_empty());
        let z4 = res.z40();
        assert!(is_action_only(&z4));
        assert_eq!(z4, h40_resonant_sum(&s).unwrap());
        let half = h40_closed_form(&s).unwrap().scale(&real(rat(1, 2)));
        assert_eq!(z4, half);
        for (d, g) in &res.generators {
            assert!(g.max_abs_index() <= (*d as i64 - 1) * s.jbar1);
            assert!(g.terms().all(|(m, _)| m.z_degree(&s) <= 1));
        }
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(run_wbnf(&s67(), 0, 10).is_err());
        assert!(run_wbnf(&s67(), 7, 10).is_err());
    }

    #[test]
    fn monotone_m_levels() {
        for t in [[2i64, 2, -1, -3], [1, -1, 5, -5]] {
            for m in 1..6 {
                if is_m_resonance(&t, m) {
                    assert!((1..=m).all(|k| is_m_resonance(&t, k)));
                }
            }
        }
    }
}

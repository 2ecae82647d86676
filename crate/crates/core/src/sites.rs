//! Dispersion law, conserved-quantity weights, tangential sites and scaling.

use crate::error::{invalid, Result};
use crate::scalar::{int, rat, to_f64, Rational};
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

/// A nonzero Fourier index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex(i64);

impl ModeIndex {
    pub fn new(j: i64) -> Result<Self> {
        if j == 0 {
            return invalid("mode index must be nonzero");
        }
        Ok(ModeIndex(j))
    }

    pub fn get(self) -> i64 {
        self.0
    }
}

/// `j(4+j²)/(1+j²)` for any integer (zero maps to zero).
pub fn dispersion(j: i64) -> Rational {
    let j2 = (j as i128) * (j as i128);
    let num = (j as i128) * (4 + j2);
    let den = 1 + j2;
    Rational::new(num.into(), den.into())
}

/// The dispersion law evaluated at a rational argument.
pub fn dispersion_q(x: &Rational) -> Rational {
    let x2 = x * x;
    x * (int(4) + &x2) / (int(1) + x2)
}

pub fn dispersion_f64(j: f64) -> f64 {
    j * (4.0 + j * j) / (1.0 + j * j)
}

/// The linear dispersion law of a nonzero mode.
pub fn lambda(j: ModeIndex) -> Rational {
    dispersion(j.0)
}

/// `(1+j²)² j^{2(r−2)}`, the quadratic weight of the r-th conserved quantity.
pub fn kr_weight(r: u32, j: ModeIndex) -> Result<Rational> {
    if r < 2 {
        return invalid(format!("weight order r={r} must be at least 2"));
    }
    Ok(kr_weight_int(r, j.0))
}

pub(crate) fn kr_weight_int(r: u32, j: i64) -> Rational {
    let j = num_bigint::BigInt::from(j);
    let base = num_bigint::BigInt::from(1) + &j * &j;
    let w = &base * &base * (&j * &j).pow(r - 2);
    Rational::from_integer(w)
}

/// The tangential sites S⁺ (stored ascending) with their symmetric closure S.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TangentialSet {
    splus: Vec<i64>,
    /// Largest site.
    pub jbar1: i64,
}

impl TangentialSet {
    pub fn new(sites: &[i64]) -> Result<Self> {
        if sites.len() < 2 {
            return invalid(format!("need at least two tangential sites, got {}", sites.len()));
        }
        let mut s = sites.to_vec();
        s.sort_unstable();
        if s[0] < 1 {
            return invalid("tangential sites must be positive");
        }
        if s.windows(2).any(|w| w[0] == w[1]) {
            return invalid("tangential sites must be distinct");
        }
        let jbar1 = *s.last().unwrap();
        Ok(TangentialSet { splus: s, jbar1 })
    }

    pub fn nu(&self) -> usize {
        self.splus.len()
    }

    /// S⁺ ascending.
    pub fn splus(&self) -> &[i64] {
        &self.splus
    }

    /// S = S⁺ ∪ (−S⁺), ascending.
    pub fn sites(&self) -> Vec<i64> {
        let mut v: Vec<i64> = self.splus.iter().map(|&j| -j).collect();
        v.extend_from_slice(&self.splus);
        v.sort_unstable();
        v
    }

    pub fn contains(&self, j: i64) -> bool {
        self.splus.binary_search(&j.abs()).is_ok()
    }

    /// Membership in S^c = ℤ ∖ (S ∪ {0}).
    pub fn is_normal(&self, j: i64) -> bool {
        j != 0 && !self.contains(j)
    }

    /// Position of |j| in S⁺ and the sign of j, for j ∈ S.
    pub fn position(&self, j: i64) -> Option<(usize, i64)> {
        self.splus.binary_search(&j.abs()).ok().map(|i| (i, j.signum()))
    }

    /// Σ ℓ_i j̄_i for ℓ indexed like `splus()`.
    pub fn momentum(&self, ell: &[i64]) -> i64 {
        ell.iter().zip(&self.splus).map(|(l, j)| l * j).sum()
    }
}

/// The linear frequencies ω̄_i = λ(j̄_i), ordered like `splus()`.
pub fn linear_frequencies(s: &TangentialSet) -> Vec<Rational> {
    s.splus.iter().map(|&j| dispersion(j)).collect()
}

pub fn linear_frequencies_f64(s: &TangentialSet) -> Vec<f64> {
    linear_frequencies(s).iter().map(to_f64).collect()
}

/// All ℓ ∈ ℤ^ν with |ℓ|₁ = n.
pub fn lattice_sphere(nu: usize, n: u32) -> Vec<Vec<i64>> {
    fn rec(nu: usize, n: i64, prefix: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if prefix.len() + 1 == nu {
            if n == 0 {
                prefix.push(0);
                out.push(prefix.clone());
                prefix.pop();
            } else {
                for v in [n, -n] {
                    prefix.push(v);
                    out.push(prefix.clone());
                    prefix.pop();
                }
            }
            return;
        }
        for a in -n..=n {
            prefix.push(a);
            rec(nu, n - a.abs(), prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if nu == 0 {
        return out;
    }
    rec(nu, n as i64, &mut Vec::with_capacity(nu), &mut out);
    out
}

/// All nonzero ℓ ∈ ℤ^ν with |ℓ|₁ ≤ n.
pub fn lattice_ball(nu: usize, n: u32) -> Vec<Vec<i64>> {
    (1..=n).flat_map(|k| lattice_sphere(nu, k)).collect()
}

/// Wave-packet membership: large, mutually close sites with the |ℓ| = 4
/// non-resonance condition checked exactly.
pub fn is_in_wave_packet_class(s: &TangentialSet, r: &Rational) -> Result<bool> {
    if !r.is_positive() || *r >= int(1) {
        return invalid("wave-packet radius must lie in (0,1)");
    }
    let min = int(s.splus[0]);
    if min * r <= int(1) {
        return Ok(false);
    }
    let j1 = int(s.jbar1);
    for &j in &s.splus {
        if (int(j) / &j1 - int(1)).abs() > *r {
            return Ok(false);
        }
    }
    Ok(transport_sums_nonzero(s, 4))
}

/// Σ_i ℓ_i j̄_i/(1+j̄_i²) for the given ℓ.
pub fn transport_sum(s: &TangentialSet, ell: &[i64]) -> Rational {
    ell.iter()
        .zip(&s.splus)
        .map(|(&l, &j)| int(l) * rat(j, 1 + j * j))
        .fold(Rational::zero(), |acc, x| acc + x)
}

pub(crate) fn transport_sums_nonzero(s: &TangentialSet, n: u32) -> bool {
    lattice_sphere(s.nu(), n)
        .iter()
        .all(|ell| !transport_sum(s, ell).is_zero())
}

/// ε, a and the derived b = 1 + a/2, γ = ε^{2b}, τ = 2ν+6.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub epsilon: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub tau: u32,
}

impl ScalingParams {
    pub fn new(epsilon: f64, a: f64, nu: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return invalid(format!("epsilon={epsilon} must lie in (0,1)"));
        }
        if !(a > 0.0) {
            return invalid(format!("a={a} must be positive"));
        }
        let b = 1.0 + a / 2.0;
        Ok(ScalingParams {
            epsilon,
            a,
            b,
            gamma: epsilon.powf(2.0 * b),
            tau: 2 * nu as u32 + 6,
        })
    }

    pub fn with_epsilon(&self, epsilon: f64, nu: usize) -> Result<Self> {
        ScalingParams::new(epsilon, self.a, nu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(j: i64) -> ModeIndex {
        ModeIndex::new(j).unwrap()
    }

    #[test]
    fn dispersion_values() {
        assert_eq!(lambda(m(1)), rat(5, 2));
        assert_eq!(lambda(m(2)), rat(16, 5));
        assert_eq!(lambda(m(3)), rat(39, 10));
        assert!(ModeIndex::new(0).is_err());
    }

    #[test]
    fn weights() {
        assert_eq!(kr_weight(2, m(2)).unwrap(), int(25));
        assert_eq!(kr_weight(3, m(1)).unwrap(), int(4));
        assert!(kr_weight(1, m(1)).is_err());
    }

    #[test]
    fn frequencies_of_six_seven() {
        let s = TangentialSet::new(&[7, 6]).unwrap();
        assert_eq!(linear_frequencies(&s), vec![rat(240, 37), rat(371, 50)]);
        assert_eq!(s.jbar1, 7);
        assert!(TangentialSet::new(&[1]).is_err());
        assert!(TangentialSet::new(&[3, 3]).is_err());
    }

    #[test]
    fn wave_packet() {
        let s = TangentialSet::new(&[6, 7]).unwrap();
        assert!(is_in_wave_packet_class(&s, &rat(1, 5)).unwrap());
        assert!(!is_in_wave_packet_class(&s, &rat(1, 10)).unwrap());
        assert!(is_in_wave_packet_class(&s, &int(1)).is_err());
        // |ℓ| = 4 sums are (300ℓ₁ + 259ℓ₂)/1850.
        for ell in lattice_sphere(2, 4) {
            assert_eq!(transport_sum(&s, &ell), rat(300 * ell[0] + 259 * ell[1], 1850));
        }
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(lattice_sphere(2, 3).len(), 12);
        assert_eq!(lattice_sphere(3, 1).len(), 6);
        assert_eq!(lattice_ball(2, 2).len(), 12);
    }

    #[test]
    fn scaling() {
        let p = ScalingParams::new(0.01, 0.1, 2).unwrap();
        assert!((p.b - 1.05).abs() < 1e-15);
        assert_eq!(p.gamma, 0.01f64.powf(2.1));
        assert_eq!(p.tau, 10);
        assert!(ScalingParams::new(1.5, 0.1, 2).is_err());
    }

    proptest! {
        #[test]
        fn lambda_is_odd(j in 1i64..100_000) {
            prop_assert_eq!(lambda(m(j)) + lambda(m(-j)), Rational::zero());
        }

        #[test]
        fn lambda_second_form(j in -100_000i64..100_000) {
            prop_assume!(j != 0);
            prop_assert_eq!(lambda(m(j)) - int(j), rat(3 * j, 1 + j * j));
        }

        #[test]
        fn lambda_bounded(j in -100_000i64..100_000) {
            prop_assume!(j != 0);
            prop_assert!(lambda(m(j)).abs() <= int(4 * j.abs()));
        }

        #[test]
        fn weighted_lambda_is_odd(r in 2u32..8, j in 1i64..500) {
            let plus = kr_weight(r, m(j)).unwrap() * lambda(m(j));
            let minus = kr_weight(r, m(-j)).unwrap() * lambda(m(-j));
            prop_assert_eq!(plus + minus, Rational::zero());
        }

        #[test]
        fn frequencies_increase(a in 1i64..400, d in 1i64..50) {
            let s = TangentialSet::new(&[a, a + d]).unwrap();
            let w = linear_frequencies(&s);
            prop_assert!(w[0] < w[1]);
        }
    }
}

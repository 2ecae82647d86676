//! Twist matrix, frequency-amplitude map and non-degeneracy checks.

use crate::error::{invalid, Error, Result};
use crate::qmat::{det_bareiss, det_cofactor, dot, inverse, solve, transpose, to_f64_matrix, QMatrix};
use crate::scalar::{from_f64, int, rat, to_f64, Rational};
use crate::sites::{dispersion, dispersion_q, lattice_ball, lattice_sphere, linear_frequencies, transport_sum, TangentialSet};
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;

/// Off-diagonal twist coefficient
/// `(2/3)(1+k²)(1+j²)(2+k²+j²)/((3+k²+j²+kj)(3+k²+j²−kj))`.
pub fn b_jk(j: i64, k: i64) -> Result<Rational> {
    if j == k {
        return invalid("b_jk needs distinct sites");
    }
    let (j2, k2) = (j * j, k * k);
    let num = int(2) * int(1 + k2) * int(1 + j2) * int(2 + k2 + j2);
    let den = int(3) * int(3 + k2 + j2 + k * j) * int(3 + k2 + j2 - k * j);
    Ok(num / den)
}

/// `λ(2j)/(2λ(j)−λ(2j))`.
pub fn self_ratio(j: i64) -> Result<Rational> {
    let den = int(2) * dispersion(j) - dispersion(2 * j);
    if den.is_zero() {
        return Err(Error::VanishingDenominator(format!("2λ({j}) − λ({})", 2 * j)));
    }
    Ok(dispersion(2 * j) / den)
}

/// The twist matrix with its factors.
#[derive(Debug, Clone, Serialize)]
pub struct TwistData {
    pub sites: TangentialSet,
    #[serde(skip)]
    pub a: QMatrix,
    /// λ(j̄_i).
    #[serde(skip)]
    pub d: Vec<Rational>,
    #[serde(skip)]
    pub b: QMatrix,
    #[serde(skip)]
    pub omega_bar: Vec<Rational>,
    #[serde(skip)]
    pub det_a: Rational,
    pub det_a_f64: f64,
    /// The frequency map drops the quartic-in-ε correction.
    pub truncated_order4: bool,
}

pub fn twist_matrix(s: &TangentialSet) -> Result<TwistData> {
    let sp = s.splus();
    let nu = s.nu();
    let d: Vec<Rational> = sp.iter().map(|&j| dispersion(j)).collect();
    let mut b = vec![vec![Rational::zero(); nu]; nu];
    let mut a = vec![vec![Rational::zero(); nu]; nu];
    for i in 0..nu {
        for k in 0..nu {
            if i == k {
                a[i][i] = &d[i] * self_ratio(sp[i])? / int(2);
            } else {
                b[i][k] = b_jk(sp[i], sp[k])?;
                a[i][k] = &d[i] * &b[i][k];
            }
        }
    }
    let det_a = det_bareiss(&a)?;
    Ok(TwistData {
        sites: s.clone(),
        det_a_f64: to_f64(&det_a),
        omega_bar: linear_frequencies(s),
        a,
        d,
        b,
        det_a,
        truncated_order4: true,
    })
}

impl TwistData {
    /// Determinant by cofactor expansion, for cross-checking.
    pub fn det_by_cofactors(&self) -> Result<Rational> {
        det_cofactor(&self.a)
    }

    pub fn a_f64(&self) -> Vec<Vec<f64>> {
        to_f64_matrix(&self.a)
    }

    /// `ω̄ + ε²𝔸ξ`.
    pub fn frequency(&self, xi: &[f64], eps: f64) -> Result<Vec<f64>> {
        if xi.len() != self.sites.nu() {
            return invalid("ξ has the wrong length");
        }
        let a = self.a_f64();
        Ok((0..xi.len())
            .map(|i| to_f64(&self.omega_bar[i]) + eps * eps * a[i].iter().zip(xi).map(|(x, y)| x * y).sum::<f64>())
            .collect())
    }

    /// Solves `ε²𝔸ξ = ω − ω̄` exactly on the binary values of the inputs and
    /// rejects ξ leaving [1,2]^ν by more than `tol`.
    pub fn inverse_frequency(&self, omega: &[f64], eps: f64, tol: f64) -> Result<Vec<f64>> {
        let xi = self.inverse_frequency_unchecked(omega, eps)?;
        if let Some(x) = xi.iter().find(|&&x| x < 1.0 - tol || x > 2.0 + tol) {
            return invalid(format!("ξ component {x} outside [1,2]"));
        }
        Ok(xi)
    }

    pub fn inverse_frequency_unchecked(&self, omega: &[f64], eps: f64) -> Result<Vec<f64>> {
        if omega.len() != self.sites.nu() {
            return invalid("ω has the wrong length");
        }
        let e = from_f64(eps).ok_or_else(|| Error::InvalidInput("ε not finite".into()))?;
        let e2 = &e * &e;
        let rhs: Vec<Rational> = omega
            .iter()
            .zip(&self.omega_bar)
            .map(|(w, wb)| {
                from_f64(*w)
                    .map(|w| (w - wb) / &e2)
                    .ok_or_else(|| Error::InvalidInput("ω not finite".into()))
            })
            .collect::<Result<_>>()?;
        Ok(solve(&self.a, &rhs)?.iter().map(to_f64).collect())
    }
}

/// det 𝕂 in the variables j̄₁ = 1/x, j̄_i = p_i/x, where
/// 𝔸 = (2/9) diag(λ(j̄_i)(1+j̄_i²)) 𝕂.
pub fn normalized_det(x: &Rational, p: &[Rational]) -> Result<Rational> {
    det_bareiss(&normalized_matrix(x, p)?)
}

pub fn normalized_matrix(x: &Rational, p: &[Rational]) -> Result<QMatrix> {
    if x.is_negative() {
        return invalid("x must be nonnegative");
    }
    if p.len() < 2 {
        return invalid("need at least two sites");
    }
    if p.iter().any(|q| !q.is_positive() || *q > Rational::one()) {
        return invalid("each p_i must lie in (0,1]");
    }
    let x2 = x * x;
    let nu = p.len();
    let mut k = vec![vec![Rational::zero(); nu]; nu];
    for i in 0..nu {
        for m in 0..nu {
            let (pi, pm) = (&p[i], &p[m]);
            k[i][m] = if i == m {
                (&x2 + pi * pi) / (pi * pi)
            } else {
                let s = int(3) * &x2 + pm * pm + pi * pi;
                int(3) * (&x2 + pm * pm) * (int(2) * &x2 + pm * pm + pi * pi) / ((&s + pm * pi) * (&s - pm * pi))
            };
        }
    }
    Ok(k)
}

/// `((1+x²)/(1+3x²))^ν (3x²−1)^{ν−1} (3x²+2ν−1)`.
pub fn unit_normalized_det(x: &Rational, nu: usize) -> Rational {
    let x2 = x * x;
    let base = (int(1) + &x2) / (int(1) + int(3) * &x2);
    let pow = |r: &Rational, n: usize| (0..n).fold(Rational::one(), |acc, _| acc * r);
    pow(&base, nu) * pow(&(int(3) * &x2 - int(1)), nu - 1) * (int(3) * &x2 + int(2 * nu as i64 - 1))
}

/// `1 − 𝔸^{−T}v⃗·ω̄` in the variables of [`normalized_det`], for x > 0.
pub fn rank_one_det_normalized(x: &Rational, p: &[Rational]) -> Result<Rational> {
    if !x.is_positive() {
        return invalid("x must be positive");
    }
    let k = normalized_matrix(x, p)?;
    let jb: Vec<Rational> = p.iter().map(|q| q / x).collect();
    Ok(rank_one_det_from_parts(&k, &jb)?)
}

fn rank_one_det_from_parts(k: &QMatrix, jb: &[Rational]) -> Result<Rational> {
    let nu = jb.len();
    let mut a = k.clone();
    for i in 0..nu {
        let w = int(2) * dispersion_q(&jb[i]) * (int(1) + &jb[i] * &jb[i]) / int(9);
        for m in 0..nu {
            a[i][m] *= &w;
        }
    }
    let v: Vec<Rational> = jb.iter().map(|j| int(2) * (int(1) + j * j) / int(3)).collect();
    let w: Vec<Rational> = jb.iter().map(dispersion_q).collect();
    let y = solve(&transpose(&a), &v)?;
    Ok(int(1) - dot(&y, &w))
}

/// `3ν(3x²+1)/((x²+1)(3x²+2ν−1))`, the value of 𝔸^{−T}v⃗·ω̄ at p = 1. At x = 0 it
/// is 3ν/(2ν−1), so the rank-one determinant tends to −(ν+1)/(2ν−1).
pub fn unit_rank_one_inner(x: &Rational, nu: usize) -> Rational {
    let x2 = x * x;
    let n = nu as i64;
    int(3 * n) * (int(3) * &x2 + int(1)) / ((&x2 + int(1)) * (int(3) * &x2 + int(2 * n - 1)))
}

/// `v⃗ = (2/3)(1+j̄_k²)`, so that c = v⃗·ξ.
pub fn v_vector(s: &TangentialSet) -> Vec<Rational> {
    s.splus().iter().map(|&j| rat(2 * (1 + j * j), 3)).collect()
}

/// `w⃗_j` with κ_j = w⃗_j·ξ, in the single-fraction form.
pub fn w_vector(s: &TangentialSet, j: i64) -> Result<Vec<Rational>> {
    if !s.is_normal(j) {
        return invalid(format!("{j} is not a normal site"));
    }
    let lam = dispersion(j);
    s.splus()
        .iter()
        .map(|&j0| {
            let (a, b) = (j0 * j0, j * j);
            let num = int(2) * int(1 + a) * int(7 + 5 * a + a * a + 3 * b);
            let den = int(3) * int(3 + a - j0 * j + b) * int(3 + a + j0 * j + b);
            if den.is_zero() {
                return Err(Error::VanishingDenominator(format!("site {j0} with {j}")));
            }
            Ok(-(&lam * num / den))
        })
        .collect()
}

pub fn w_vector_f64(s: &TangentialSet, j: i64) -> Vec<f64> {
    let jf = j as f64;
    let lam = crate::sites::dispersion_f64(jf);
    s.splus()
        .iter()
        .map(|&j0| {
            let a = (j0 * j0) as f64;
            let b = jf * jf;
            let j0f = j0 as f64;
            -lam * 2.0 * (1.0 + a) * (7.0 + 5.0 * a + a * a + 3.0 * b)
                / (3.0 * (3.0 + a - j0f * jf + b) * (3.0 + a + j0f * jf + b))
        })
        .collect()
}

/// Thresholds and scan bounds for the non-degeneracy report.
#[derive(Debug, Clone, Serialize)]
pub struct NondegConfig {
    /// Wave-packet radius; the lattice sums are compared with r/2.
    pub r: f64,
    /// Lower bound for |det(I − 𝔸^{−T}v⃗ω̄ᵀ)|.
    pub rank_one_threshold: f64,
    /// The pure constant δ of the shifted-lattice checks.
    pub delta: f64,
    pub ell_bound: u32,
    pub j_bound: i64,
}

impl Default for NondegConfig {
    fn default() -> Self {
        NondegConfig { r: 0.2, rank_one_threshold: 1.0, delta: 0.1, ell_bound: 3, j_bound: 200 }
    }
}

/// One line of the report.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub check: String,
    pub value: f64,
    /// Exact value when available, as `p/q`.
    pub exact: Option<String>,
    pub threshold: f64,
    pub witness: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NondegReport {
    pub records: Vec<CheckRecord>,
}

impl NondegReport {
    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn get(&self, check: &str) -> Option<&CheckRecord> {
        self.records.iter().find(|r| r.check == check)
    }
}

fn l1(v: &[i64]) -> i64 {
    v.iter().map(|x| x.abs()).sum()
}

fn fmt_vec(v: &[i64]) -> String {
    format!("{v:?}")
}

pub fn nondegeneracy_report(s: &TangentialSet, cfg: &NondegConfig) -> Result<NondegReport> {
    let mut records = Vec::new();
    for n in [1u32, 2, 3, 4, 5] {
        let mut best: Option<(Rational, Vec<i64>)> = None;
        for ell in lattice_sphere(s.nu(), n) {
            let v = transport_sum(s, &ell).abs();
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, ell));
            }
        }
        let (v, ell) = best.expect("nonempty sphere");
        let threshold = if n == 4 { 0.0 } else { cfg.r / 2.0 };
        let vf = to_f64(&v);
        records.push(CheckRecord {
            check: format!("ell_condition_{n}"),
            value: vf,
            exact: Some(crate::scalar::fmt_rational(&v)),
            threshold,
            witness: fmt_vec(&ell),
            pass: !v.is_zero() && vf > threshold,
        });
    }

    let tw = twist_matrix(s)?;
    let v = v_vector(s);
    let a_t = transpose(&tw.a);
    let y = solve(&a_t, &v)?;
    let det = int(1) - dot(&y, &tw.omega_bar);
    records.push(CheckRecord {
        check: "rank_one_det".into(),
        value: to_f64(&det).abs(),
        exact: Some(crate::scalar::fmt_rational(&det)),
        threshold: cfg.rank_one_threshold,
        witness: String::new(),
        pass: to_f64(&det).abs() >= cfg.rank_one_threshold,
    });

    // M⁻¹𝔸^{−T} with M = I − 𝔸^{−T}v⃗ω̄ᵀ, in floating point for the scans.
    let nu = s.nu();
    let a_inv_t = inverse(&a_t)?;
    let mut m = vec![vec![Rational::zero(); nu]; nu];
    for i in 0..nu {
        for k in 0..nu {
            m[i][k] = if i == k { Rational::one() } else { Rational::zero() } - &y[i] * &tw.omega_bar[k];
        }
    }
    let m_inv = inverse(&m)?;
    let op: QMatrix = (0..nu)
        .map(|i| (0..nu).map(|k| dot(&m_inv[i], &transpose(&a_inv_t)[k])).collect())
        .collect();
    let op = to_f64_matrix(&op);
    let ells = lattice_ball(nu, cfg.ell_bound);
    let apply = |w: &[f64]| -> Vec<f64> { op.iter().map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum()).collect() };
    let shift_ratio = |u: &[f64]| -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (n, ell) in ells.iter().enumerate() {
            let dist: f64 = ell.iter().zip(u).map(|(&l, x)| (l as f64 - x).abs()).sum();
            let r = dist / l1(ell) as f64;
            if r < best.0 {
                best = (r, n);
            }
        }
        best
    };
    let normals: Vec<i64> = (-cfg.j_bound..=cfg.j_bound).filter(|&j| s.is_normal(j)).collect();
    let ws: Vec<Vec<f64>> = normals.iter().map(|&j| apply(&w_vector_f64(s, j))).collect();

    let (single, sj, sl) = normals
        .par_iter()
        .enumerate()
        .map(|(n, &j)| {
            let (r, l) = shift_ratio(&ws[n]);
            (r, j, l)
        })
        .reduce(|| (f64::INFINITY, 0, 0), |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    records.push(CheckRecord {
        check: "single_site_shift".into(),
        value: single,
        exact: None,
        threshold: cfg.delta,
        witness: format!("ell={} j={sj}", fmt_vec(&ells[sl])),
        pass: single >= cfg.delta,
    });

    let (pair, pj, pk, pl) = (0..normals.len())
        .into_par_iter()
        .map(|a| {
            let mut best = (f64::INFINITY, 0, 0, 0);
            for b in 0..normals.len() {
                if a == b {
                    continue;
                }
                let diff: Vec<f64> = ws[a].iter().zip(&ws[b]).map(|(x, y)| x - y).collect();
                let (r, l) = shift_ratio(&diff);
                if r < best.0 {
                    best = (r, normals[a], normals[b], l);
                }
            }
            best
        })
        .reduce(
            || (f64::INFINITY, 0, 0, 0),
            |a, b| if b.0 < a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) { b } else { a },
        );
    records.push(CheckRecord {
        check: "pair_shift".into(),
        value: pair,
        exact: None,
        threshold: cfg.delta,
        witness: format!("ell={} j={pj} k={pk}", fmt_vec(&ells[pl])),
        pass: pair >= cfg.delta,
    });

    // |w⃗_j − w⃗_k| ≤ C|j−k|(|j|⁻² + |jk|⁻¹): report the fitted C.
    let raw: Vec<Vec<f64>> = normals.iter().map(|&j| w_vector_f64(s, j)).collect();
    let (fit, fj, fk) = (0..normals.len())
        .into_par_iter()
        .map(|a| {
            let mut best = (0.0f64, 0, 0);
            let j = normals[a] as f64;
            for b in 0..normals.len() {
                if a == b {
                    continue;
                }
                let k = normals[b] as f64;
                let norm: f64 = raw[a].iter().zip(&raw[b]).map(|(x, y)| (x - y).abs()).sum();
                let bound = (j - k).abs() * (1.0 / (j * j) + 1.0 / (j * k).abs());
                let c = norm / bound;
                if c > best.0 {
                    best = (c, normals[a], normals[b]);
                }
            }
            best
        })
        .reduce(|| (0.0, 0, 0), |a, b| if b.0 > a.0 { b } else { a });
    records.push(CheckRecord {
        check: "w_difference_constant".into(),
        value: fit,
        exact: None,
        threshold: f64::INFINITY,
        witness: format!("j={fj} k={fk}"),
        pass: fit.is_finite(),
    });
    Ok(NondegReport { records })
}

/// Minimum of |det 𝔸|/j̄₁^{3ν} over runs of ν consecutive sites ending at
/// j̄₁ ∈ `range` that lie in the wave-packet class of radius `r`.
pub fn scan_normalized_twist(nu: usize, range: std::ops::RangeInclusive<i64>, r: &Rational) -> Result<(f64, i64, usize)> {
    let results: Vec<(f64, i64)> = range
        .clone()
        .into_par_iter()
        .filter_map(|top| {
            let sites: Vec<i64> = (0..nu as i64).map(|i| top - i).collect();
            let s = TangentialSet::new(&sites).ok()?;
            match crate::sites::is_in_wave_packet_class(&s, r) {
                Ok(true) => {}
                _ => return None,
            }
            let tw = twist_matrix(&s).ok()?;
            let scale = int(top).pow(3 * nu as i32);
            Some((to_f64(&(tw.det_a.abs() / scale)), top))
        })
        .collect();
    if results.is_empty() {
        return invalid("no admissible site sets in range");
    }
    let count = results.len();
    let (v, top) = results
        .into_iter()
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
    Ok((v, top, count))
}

/// The a-priori constant compared with the scan: half of (2/9)^ν (9/10)^{3ν}.
pub fn twist_constant(nu: usize) -> f64 {
    0.5 * (2.0f64 / 9.0).powi(nu as i32) * 0.9f64.powi(3 * nu as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::ell_j;
    use proptest::prelude::*;

    fn s67() -> TangentialSet {
        TangentialSet::new(&[6, 7]).unwrap()
    }

    #[test]
    fn b_values() {
        assert_eq!(b_jk(1, 2).unwrap(), rat(7, 9));
        assert_eq!(b_jk(2, 1).unwrap(), rat(7, 9));
        assert!(b_jk(3, 3).is_err());
    }

    #[test]
    fn b_equals_cross_sum() {
        for j in 1..25 {
            for k in 1..25 {
                if j != k {
                    assert_eq!(b_jk(j, k).unwrap(), crate::wbnf::cross_sum(j, k).unwrap());
                }
            }
        }
    }

    #[test]
    fn self_ratio_closed_form() {
        for j in 1..40i64 {
            assert_eq!(self_ratio(j).unwrap(), rat(4 * (1 + j * j) * (1 + j * j), 9 * j * j));
        }
    }

    #[test]
    fn determinant_two_ways() {
        let tw = twist_matrix(&s67()).unwrap();
        assert_eq!(tw.det_a, tw.det_by_cofactors().unwrap());
        let t3 = twist_matrix(&TangentialSet::new(&[20, 21, 22]).unwrap()).unwrap();
        assert_eq!(t3.det_a, t3.det_by_cofactors().unwrap());
        assert_eq!(tw.a[0][0], &tw.d[0] * self_ratio(6).unwrap() / int(2));
    }

    #[test]
    fn factored_form() {
        let s = TangentialSet::new(&[9, 10, 12]).unwrap();
        let tw = twist_matrix(&s).unwrap();
        let x = rat(1, 12);
        let p: Vec<Rational> = s.splus().iter().map(|&j| rat(j, 12)).collect();
        let k = normalized_matrix(&x, &p).unwrap();
        for i in 0..3 {
            let j = s.splus()[i];
            let w = rat(2 * j * (4 + j * j), 9);
            for m in 0..3 {
                assert_eq!(tw.a[i][m], &w * &k[i][m]);
            }
        }
    }

    #[test]
    fn unit_normalized_values() {
        assert_eq!(normalized_det(&int(0), &[int(1), int(1)]).unwrap(), int(-3));
        for n in 1..=20i64 {
            let x = rat(n, 23);
            for nu in 2..=4 {
                let p = vec![int(1); nu];
                assert_eq!(normalized_det(&x, &p).unwrap(), unit_normalized_det(&x, nu));
            }
        }
        assert!(normalized_det(&int(-1), &[int(1), int(1)]).is_err());
        assert!(normalized_det(&int(0), &[int(2), int(1)]).is_err());
    }

    #[test]
    fn rank_one_unit_form() {
        for n in 1..=10i64 {
            let x = rat(n, 17);
            for nu in 2..=3 {
                let p = vec![int(1); nu];
                assert_eq!(rank_one_det_normalized(&x, &p).unwrap(), int(1) - unit_rank_one_inner(&x, nu));
            }
        }
        assert_eq!(int(1) - unit_rank_one_inner(&int(0), 2), int(-1));
        assert_eq!(int(1) - unit_rank_one_inner(&int(0), 3), rat(-4, 5));
        // near-coincident real sites approach the p = 1 limit
        let s = TangentialSet::new(&[1000, 1001]).unwrap();
        let t = twist_matrix(&s).unwrap();
        let y = solve(&transpose(&t.a), &v_vector(&s)).unwrap();
        let direct = int(1) - dot(&y, &t.omega_bar);
        assert!((to_f64(&direct) + 1.0).abs() < 1e-4);
    }

    #[test]
    fn w_vector_matches_kappa() {
        let s = s67();
        let xi = vec![rat(3, 2), rat(5, 7)];
        for j in [8i64, 10, -15, 31] {
            let w = w_vector(&s, j).unwrap();
            let kappa = dispersion(j) * (ell_j(&s, &xi, j).unwrap() - crate::spectrum::c_of_xi(&s, &xi).unwrap());
            assert_eq!(dot(&w, &xi), kappa);
            let wf = w_vector_f64(&s, j);
            for (a, b) in w.iter().zip(&wf) {
                assert!((to_f64(a) - b).abs() < 1e-12 * b.abs().max(1.0));
            }
        }
        assert!(w_vector(&s, 6).is_err());
    }

    #[test]
    fn frequency_map_examples() {
        let tw = twist_matrix(&s67()).unwrap();
        let w0 = tw.frequency(&[0.0, 0.0], 0.01).unwrap();
        assert_eq!(w0, vec![240.0 / 37.0, 371.0 / 50.0]);
        let w = tw.frequency(&[1.0, 1.0], 0.01).unwrap();
        let a = tw.a_f64();
        for i in 0..2 {
            let expected = 1e-4 * (a[i][0] + a[i][1]);
            assert!((w[i] - w0[i] - expected).abs() < 1e-12);
        }
        let back = tw.inverse_frequency(&w, 0.01, 1e-9).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-8 && (back[1] - 1.0).abs() < 1e-8);
        assert!(tw.inverse_frequency(&w0, 0.01, 1e-9).is_err());
    }

    #[test]
    fn report_six_seven() {
        let s = s67();
        let rep = nondegeneracy_report(&s, &NondegConfig { j_bound: 60, ..Default::default() }).unwrap();
        let one = rep.get("ell_condition_1").unwrap();
        assert_eq!(one.exact.as_deref(), Some("7/50"));
        assert!(rep.get("ell_condition_4").unwrap().pass);
        assert!(rep.get("rank_one_det").unwrap().value >= 1.0);
        assert!(rep.get("single_site_shift").unwrap().value > 0.0);
        assert!(rep.get("pair_shift").unwrap().value > 0.0);
    }

    #[test]
    fn permutation_invariance() {
        // the determinant only depends on the set
        let a = twist_matrix(&TangentialSet::new(&[5, 9, 13]).unwrap()).unwrap();
        let b = twist_matrix(&TangentialSet::new(&[13, 5, 9]).unwrap()).unwrap();
        assert_eq!(a.det_a.abs(), b.det_a.abs());
    }

    proptest! {
        #[test]
        fn b_symmetric(j in 1i64..500, k in 1i64..500) {
            prop_assume!(j != k);
            prop_assert_eq!(b_jk(j, k).unwrap(), b_jk(k, j).unwrap());
        }

        #[test]
        fn frequency_affine(x0 in 1.0f64..2.0, x1 in 1.0f64..2.0, eps in 0.001f64..0.1) {
            let tw = twist_matrix(&TangentialSet::new(&[6, 7]).unwrap()).unwrap();
            let w = tw.frequency(&[x0, x1], eps).unwrap();
            let back = tw.inverse_frequency(&w, eps, 1e-6).unwrap();
            prop_assert!((back[0] - x0).abs() < 1e-6 && (back[1] - x1).abs() < 1e-6);
        }
    }
}

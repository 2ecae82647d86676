//! Melnikov non-resonance sets and Monte-Carlo estimates of their complements.
//!
//! Every condition used here is affine in the amplitudes ξ once the normal
//! eigenvalues are replaced by d_j = mλ(j) + ε²κ_j, since
//! d_j = λ(j) + ε²(λ(j)v⃗ + w⃗_j)·ξ and ω = ω̄ + ε²𝔸ξ. An excluded set is
//! then a finite union of slabs |α + g·ξ| < w in the box [1,2]^ν.

use crate::error::{invalid, Error, Result};
use crate::scalar::to_f64;
use crate::sites::{dispersion_f64, lattice_ball, linear_frequencies_f64, ScalingParams, TangentialSet};
use crate::spectrum::ell_weights;
use crate::twist::{twist_matrix, v_vector, w_vector_f64, TwistData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Samples per RNG stream; fixed so results do not depend on the thread count.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Serialize)]
pub struct MelnikovConfig {
    pub scaling: ScalingParams,
    pub gamma32: f64,
    /// Constant C of the five-wave condition in 𝒢₀⁽¹⁾.
    pub c_g1: f64,
    /// Truncation of |ℓ| (ℓ¹ norm) for the Diophantine and Melnikov families.
    pub ell_max: u32,
    /// Largest |j| scanned in 𝒢₀⁽¹⁾, where the divisors converge as |j| → ∞.
    pub j_max_g1: i64,
    /// Cap on the normal-site range a family may require.
    pub j_cap: i64,
    /// Step n of the γ_n schedules.
    pub step: u32,
    /// Constant 𝙲 of the inclusion R ⊆ Q for large |j|, |k|.
    pub inclusion_c: f64,
}

impl MelnikovConfig {
    pub fn new(scaling: ScalingParams) -> Result<Self> {
        let gamma32 = scaling.gamma.powf(1.5);
        if !(gamma32 < scaling.gamma && scaling.gamma < 1.0) {
            return invalid("need γ^{3/2} < γ < 1");
        }
        Ok(MelnikovConfig {
            scaling,
            gamma32,
            c_g1: 1.0,
            ell_max: 20,
            j_max_g1: 200,
            j_cap: 100_000,
            step: 0,
            inclusion_c: 1.0,
        })
    }

    pub fn gamma_n(&self, n: u32) -> f64 {
        self.scaling.gamma * (1.0 + 0.5f64.powi(n as i32))
    }

    pub fn gamma_n_star(&self, n: u32) -> f64 {
        self.gamma32 * (1.0 + 0.5f64.powi(n as i32))
    }
}

/// `⟨ℓ⟩ = max(1, |ℓ|)` with the ℓ¹ norm.
pub fn bracket(ell: &[i64]) -> f64 {
    ell.iter().map(|x| x.abs()).sum::<i64>().max(1) as f64
}

fn l1(ell: &[i64]) -> i64 {
    ell.iter().map(|x| x.abs()).sum()
}

/// Frequency map data in floating point.
#[derive(Debug, Clone)]
pub struct FrequencyModel {
    pub sites: TangentialSet,
    pub eps: f64,
    pub omega_bar: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    /// |det 𝔸|, so that |Ω_ε| = ε^{2ν}|det 𝔸|.
    pub det_a: f64,
    twist: TwistData,
}

impl FrequencyModel {
    pub fn new(s: &TangentialSet, eps: f64) -> Result<Self> {
        let twist = twist_matrix(s)?;
        Ok(FrequencyModel {
            sites: s.clone(),
            eps,
            omega_bar: linear_frequencies_f64(s),
            a: twist.a_f64(),
            v: v_vector(s).iter().map(to_f64).collect(),
            det_a: twist.det_a_f64.abs(),
            twist,
        })
    }

    pub fn twist(&self) -> &TwistData {
        &self.twist
    }

    pub fn nu(&self) -> usize {
        self.omega_bar.len()
    }

    pub fn omega(&self, xi: &[f64]) -> Vec<f64> {
        let e2 = self.eps * self.eps;
        (0..self.nu())
            .map(|i| self.omega_bar[i] + e2 * self.a[i].iter().zip(xi).map(|(x, y)| x * y).sum::<f64>())
            .collect()
    }

    /// ξ(ω); fails outside Ω_ε.
    pub fn xi_of(&self, omega: &[f64]) -> Result<Vec<f64>> {
        self.twist.inverse_frequency(omega, self.eps, 1e-9)
    }

    /// ε²𝔸ᵀℓ, the ξ-gradient of ω·ℓ.
    fn grad_ell(&self, ell: &[i64]) -> Vec<f64> {
        let e2 = self.eps * self.eps;
        (0..self.nu())
            .map(|m| e2 * (0..self.nu()).map(|i| self.a[i][m] * ell[i] as f64).sum::<f64>())
            .collect()
    }

    /// ε²(λ(j)v⃗ + w⃗_j), the ξ-gradient of d_j.
    fn grad_d(&self, j: i64) -> Vec<f64> {
        let e2 = self.eps * self.eps;
        let lam = dispersion_f64(j as f64);
        let w = w_vector_f64(&self.sites, j);
        self.v.iter().zip(&w).map(|(v, w)| e2 * (lam * v + w)).collect()
    }

    /// ε²λ(j)·(ℓ_j weights), the ξ-gradient of λ(j)(1 + ε²ℓ_j).
    fn grad_lambda_ell(&self, j: i64) -> Result<Vec<f64>> {
        let e2 = self.eps * self.eps;
        let lam = dispersion_f64(j as f64);
        Ok(ell_weights(&self.sites, j)?.iter().map(|w| e2 * lam * to_f64(w)).collect())
    }

    /// Sup over Ω_ε of |ω|_∞.
    pub fn omega_sup(&self) -> f64 {
        let e2 = self.eps * self.eps;
        (0..self.nu())
            .map(|i| self.omega_bar[i].abs() + 2.0 * e2 * self.a[i].iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Range of m over Ω_ε.
    pub fn m_range(&self) -> (f64, f64) {
        let e2 = self.eps * self.eps;
        let s: f64 = self.v.iter().sum();
        (1.0 + e2 * s, 1.0 + 2.0 * e2 * s)
    }
}

/// An excluded slab `|α + g·ξ| < w`.
#[derive(Debug, Clone)]
pub struct Slab {
    pub alpha: f64,
    pub g: Vec<f64>,
    pub width: f64,
    pub label: String,
}

impl Slab {
    /// Whether the slab meets the box [1,2]^ν.
    pub fn meets_box(&self) -> bool {
        let (mut lo, mut hi) = (self.alpha, self.alpha);
        for g in &self.g {
            if *g >= 0.0 {
                lo += g;
                hi += 2.0 * g;
            } else {
                lo += 2.0 * g;
                hi += g;
            }
        }
        lo < self.width && hi > -self.width
    }

    pub fn contains(&self, xi: &[f64]) -> bool {
        (self.alpha + self.g.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>()).abs() < self.width
    }

    /// The set of ξ₁ ∈ [1,2] inside the slab, with the other coordinates fixed.
    fn section(&self, rest: &[f64]) -> Option<(f64, f64)> {
        let c = self.alpha + self.g[1..].iter().zip(rest).map(|(a, b)| a * b).sum::<f64>();
        let g0 = self.g[0];
        let (lo, hi) = if g0 == 0.0 {
            if c.abs() < self.width {
                (1.0, 2.0)
            } else {
                return None;
            }
        } else {
            let a = (-self.width - c) / g0;
            let b = (self.width - c) / g0;
            (a.min(b).max(1.0), a.max(b).min(2.0))
        };
        (lo < hi).then_some((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    G0_0,
    G0_1,
    FirstMelnikov,
    SecondMelnikov,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "G0_0" | "g0_0" => Ok(Family::G0_0),
            "G0_1" | "g0_1" => Ok(Family::G0_1),
            "first_melnikov" => Ok(Family::FirstMelnikov),
            "second_melnikov" => Ok(Family::SecondMelnikov),
            _ => Err(Error::InvalidInput(format!("unknown family {s}"))),
        }
    }
}

/// Slabs of a family together with the truncation that produced them.
#[derive(Debug, Clone)]
pub struct SlabSet {
    pub family: Family,
    pub slabs: Vec<Slab>,
    pub ell_max: u32,
    pub j_bound: i64,
    /// Upper bound on the excluded fraction from |ℓ| > ell_max (𝒢₀⁽⁰⁾ only).
    pub tail_bound: Option<f64>,
    pub examined: usize,
}

/// Constant of the pruning lemma for Q and P, C̃ = m/(4|ω|): nonempty sets need |ℓ| ≥ C̃|j|.
pub fn pruning_constant(model: &FrequencyModel) -> f64 {
    model.m_range().0 / (4.0 * model.omega_sup())
}

/// Constant for R: nonempty sets need |ℓ| ≥ C|λ(j) − λ(k)| with C = 1/(8|ω|).
pub fn pruning_constant_r(model: &FrequencyModel) -> f64 {
    1.0 / (8.0 * model.omega_sup())
}

/// Threshold 𝙲⟨ℓ⟩^{ν+2}γ^{−1/2} beyond which R_{ℓjk} ⊆ Q_{ℓ,j−k}(γ, ν+2).
pub fn inclusion_threshold(cfg: &MelnikovConfig, nu: usize, ell: &[i64]) -> f64 {
    cfg.inclusion_c * bracket(ell).powi(nu as i32 + 2) / cfg.scaling.gamma.sqrt()
}

fn sphere_count(nu: usize, n: u64) -> f64 {
    // Σ_k 2^k C(ν,k) C(n−1,k−1)
    let mut total = 0.0;
    for k in 1..=(nu as u64).min(n) {
        total += 2f64.powi(k as i32) * binom(nu as u64, k) * binom(n - 1, k - 1);
    }
    total
}

fn binom(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Builds the excluded slabs of a family at fixed ε.
pub fn family_slabs(model: &FrequencyModel, cfg: &MelnikovConfig, family: Family) -> Result<SlabSet> {
    let nu = model.nu();
    let s = &model.sites;
    let tau = cfg.scaling.tau as i32;
    let mut slabs = Vec::new();
    let mut examined = 0usize;
    let mut tail_bound = None;
    let mut j_bound = 0;
    let ells = lattice_ball(nu, cfg.ell_max);
    let dot = |a: &[f64], l: &[i64]| a.iter().zip(l).map(|(x, y)| x * *y as f64).sum::<f64>();
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
    match family {
        Family::G0_0 => {
            let gamma = cfg.scaling.gamma;
            for ell in &ells {
                examined += 1;
                let slab = Slab {
                    alpha: dot(&model.omega_bar, ell),
                    g: model.grad_ell(ell),
                    width: gamma * bracket(ell).powi(-tau),
                    label: format!("{ell:?}"),
                };
                if slab.meets_box() {
                    slabs.push(slab);
                }
            }
            // Every hyperplane section of the unit cube has area ≤ √2.
            let a = nalgebra::DMatrix::from_fn(nu, nu, |i, j| model.a[i][j]);
            let smin = a.singular_values().min();
            let e2 = model.eps * model.eps;
            let mut tail = 0.0;
            for n in (cfg.ell_max as u64 + 1)..=(cfg.ell_max as u64 + 20_000) {
                let per = 2.0 * std::f64::consts::SQRT_2 * gamma * (n as f64).powi(-tau) * (nu as f64).sqrt()
                    / (e2 * smin * n as f64);
                tail += sphere_count(nu, n) * per;
            }
            tail_bound = Some(tail);
        }
        Family::G0_1 => {
            let width = cfg.c_g1 * cfg.scaling.gamma;
            j_bound = cfg.j_max_g1;
            for ell in lattice_ball(nu, 3) {
                for j in -j_bound..=j_bound {
                    let jp = j + s.momentum(&ell);
                    if !s.is_normal(j) || !s.is_normal(jp) {
                        continue;
                    }
                    examined += 1;
                    let gl = model.grad_ell(&ell);
                    let gj = model.grad_lambda_ell(j)?;
                    let gk = model.grad_lambda_ell(jp)?;
                    let g: Vec<f64> = (0..nu).map(|i| gl[i] + gj[i] - gk[i]).collect();
                    let slab = Slab {
                        alpha: dot(&model.omega_bar, &ell) + dispersion_f64(j as f64) - dispersion_f64(jp as f64),
                        g,
                        width,
                        label: format!("{ell:?},{j},{jp}"),
                    };
                    if slab.meets_box() {
                        slabs.push(slab);
                    }
                }
            }
        }
        Family::FirstMelnikov => {
            let eta = 2.0 * cfg.gamma_n(cfg.step);
            let c = pruning_constant(model);
            j_bound = (cfg.ell_max as f64 / c).ceil() as i64;
            if j_bound > cfg.j_cap {
                return Err(Error::Budget { needed: j_bound as u64, limit: cfg.j_cap as u64 });
            }
            let e2 = model.eps * model.eps;
            for ell in &ells {
                let jl = (l1(ell) as f64 / c).ceil() as i64;
                let gl = model.grad_ell(ell);
                let width = eta * bracket(ell).powi(-tau);
                for j in -jl..=jl {
                    if !s.is_normal(j) {
                        continue;
                    }
                    examined += 2;
                    // Λ⁽⁰⁾: ω·ℓ + m j
                    let gm: Vec<f64> = model.v.iter().map(|v| e2 * v * j as f64).collect();
                    let q = Slab {
                        alpha: dot(&model.omega_bar, ell) + j as f64,
                        g: add(&gl, &gm),
                        width,
                        label: format!("Q{ell:?},{j}"),
                    };
                    // Λ⁽¹⁾: ω·ℓ + d_j, widened by the eigenvalue remainder bound
                    let r = cfg.scaling.epsilon.powf(4.0 - 3.0 * cfg.scaling.a) / j.abs() as f64;
                    let p = Slab {
                        alpha: dot(&model.omega_bar, ell) + dispersion_f64(j as f64),
                        g: add(&gl, &model.grad_d(j)),
                        width: width + r,
                        label: format!("P{ell:?},{j}"),
                    };
                    for sl in [q, p] {
                        if sl.meets_box() {
                            slabs.push(sl);
                        }
                    }
                }
            }
        }
        Family::SecondMelnikov => {
            let eta = 2.0 * cfg.gamma_n_star(cfg.step);
            let cr = pruning_constant_r(model);
            let e2 = model.eps * model.eps;
            let mut need = 0i64;
            for ell in &ells {
                let jt = inclusion_threshold(cfg, nu, ell).ceil() as i64;
                need = need.max(jt);
            }
            if need > cfg.j_cap {
                return Err(Error::Budget { needed: need as u64, limit: cfg.j_cap as u64 });
            }
            j_bound = need;
            let grads: Vec<Vec<f64>> = (-need..=need)
                .map(|j| if s.is_normal(j) { model.grad_d(j) } else { vec![0.0; nu] })
                .collect();
            let gd = |j: i64| &grads[(j + need) as usize];
            let per_ell: Vec<(Vec<Slab>, usize)> = ells
                .par_iter()
                .map(|ell| {
                    let mut out = Vec::new();
                    let mut ex = 0;
                    let gl = model.grad_ell(ell);
                    let base = dot(&model.omega_bar, ell);
                    let width = eta * bracket(ell).powi(-tau);
                    let jt = inclusion_threshold(cfg, nu, ell).ceil() as i64;
                    // |λ(j)−λ(k)| ≥ |j−k| for j, k of equal sign, ≥ |j−k|/2 otherwise
                    let hmax = (2.0 * l1(ell) as f64 / cr).ceil() as i64;
                    for h in -hmax..=hmax {
                        if h == 0 {
                            continue;
                        }
                        // the tail |j|,|k| ≥ jt is covered by Q_{ℓ,h}(γ, ν+2)
                        let gm: Vec<f64> = model.v.iter().map(|v| e2 * v * h as f64).collect();
                        let q = Slab {
                            alpha: base + h as f64,
                            g: add(&gl, &gm),
                            width: 2.0 * cfg.scaling.gamma * bracket(ell).powi(-(nu as i32 + 2)),
                            label: format!("Q{ell:?},{h}"),
                        };
                        ex += 1;
                        if q.meets_box() {
                            out.push(q);
                        }
                        for j in -jt..=jt {
                            let k = j - h;
                            if !s.is_normal(j) || !s.is_normal(k) || k.abs() > jt {
                                continue;
                            }
                            let lam = dispersion_f64(j as f64) - dispersion_f64(k as f64);
                            if (lam.abs() * cr) > l1(ell) as f64 {
                                continue;
                            }
                            ex += 1;
                            let r = cfg.scaling.epsilon.powf(4.0 - 3.0 * cfg.scaling.a)
                                * (1.0 / j.abs() as f64 + 1.0 / k.abs() as f64);
                            let (a, b) = (gd(j), gd(k));
                            let g: Vec<f64> = (0..nu).map(|i| gl[i] + a[i] - b[i]).collect();
                            let sl = Slab { alpha: base + lam, g, width: width + r, label: format!("R{ell:?},{j},{k}") };
                            if sl.meets_box() {
                                out.push(sl);
                            }
                        }
                    }
                    (out, ex)
                })
                .collect();
            for (v, e) in per_ell {
                slabs.extend(v);
                examined += e;
            }
        }
    }
    Ok(SlabSet { family, slabs, ell_max: cfg.ell_max, j_bound, tail_bound, examined })
}

/// Membership of ω in 𝒢₀⁽⁰⁾ and 𝒢₀⁽¹⁾ at the configured truncations.
pub fn in_g0(omega: &[f64], model: &FrequencyModel, cfg: &MelnikovConfig) -> Result<(bool, bool)> {
    let xi = model.xi_of(omega)?;
    let g00 = family_slabs(model, cfg, Family::G0_0)?;
    let g01 = family_slabs(model, cfg, Family::G0_1)?;
    Ok((!g00.slabs.iter().any(|s| s.contains(&xi)), !g01.slabs.iter().any(|s| s.contains(&xi))))
}

/// Direct check of |ω·ℓ| ≥ γ⟨ℓ⟩^{−τ} for 0 < |ℓ| ≤ bound, independent of the box filter.
pub fn diophantine(omega: &[f64], gamma: f64, tau: u32, bound: u32) -> bool {
    lattice_ball(omega.len(), bound).iter().all(|ell| {
        let w: f64 = omega.iter().zip(ell).map(|(o, l)| o * *l as f64).sum();
        w.abs() >= gamma * bracket(ell).powi(-(tau as i32))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Fraction of sampled ξ inside the union.
    HitOrMiss,
    /// Samples (ξ₂, …, ξ_ν) and integrates ξ₁ exactly along the line.
    Conditional,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureEstimate {
    pub fraction: f64,
    pub stderr: f64,
    pub samples: usize,
    pub slabs: usize,
}

fn line_measure(set: &[Slab], rest: &[f64]) -> f64 {
    let mut iv: Vec<(f64, f64)> = set.iter().filter_map(|s| s.section(rest)).collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut total, mut cur) = (0.0, None::<(f64, f64)>);
    for (a, b) in iv {
        cur = match cur {
            Some((x, y)) if a <= y => Some((x, y.max(b))),
            Some((x, y)) => {
                total += y - x;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    if let Some((x, y)) = cur {
        total += y - x;
    }
    total
}

/// Monte-Carlo estimate of the fraction of [1,2]^ν (in ξ) covered by the slabs.
pub fn estimate_fraction(set: &[Slab], nu: usize, samples: usize, seed: u64, est: Estimator) -> MeasureEstimate {
    let chunks = samples.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(samples - c * CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            let mut xi = vec![0.0; nu];
            for _ in 0..n {
                for x in xi.iter_mut() {
                    *x = 1.0 + rng.gen::<f64>();
                }
                let v = match est {
                    Estimator::HitOrMiss => {
                        if set.iter().any(|s| s.contains(&xi)) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Estimator::Conditional => line_measure(set, &xi[1..]),
                };
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = samples as f64;
    let mean = s1 / n;
    let var = ((s2 / n) - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    MeasureEstimate { fraction: mean, stderr: (var / n).sqrt(), samples, slabs: set.len() }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub gamma: f64,
    pub fraction: f64,
    pub stderr: f64,
    /// fraction·|Ω_ε|, with |Ω_ε| = ε^{2ν}|det 𝔸|.
    pub excluded_measure: f64,
    pub slabs: usize,
    pub ell_max: u32,
    pub j_bound: i64,
    pub tail_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureReport {
    pub family: Family,
    pub samples: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub rows: Vec<EpsilonRow>,
    /// Weighted least-squares slope of log(excluded measure) against log ε.
    pub fitted_exponent: Option<f64>,
    pub exponent_stderr: Option<f64>,
    /// 2(ν−1) + 2b.
    pub expected_exponent: f64,
}

impl MeasureReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("epsilon,gamma,fraction,stderr,excluded_measure,slabs,ell_max,j_bound\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{},{}\n",
                r.epsilon, r.gamma, r.fraction, r.stderr, r.excluded_measure, r.slabs, r.ell_max, r.j_bound
            ));
        }
        out
    }
}

/// Weighted least squares y = c + s x; returns (s, stderr of s).
pub fn weighted_slope(x: &[f64], y: &[f64], sigma: &[f64]) -> Option<(f64, f64)> {
    if x.len() < 2 || sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let d = sw * sxx - sx * sx;
    if d == 0.0 {
        return None;
    }
    Some(((sw * sxy - sx * sy) / d, (sw / d).sqrt()))
}

/// Excluded measure of a family over an ε sweep, with a fitted scaling exponent.
pub fn estimate_excluded_measure(
    s: &TangentialSet,
    cfg: &MelnikovConfig,
    family: Family,
    epsilons: &[f64],
    samples: usize,
    seed: u64,
    est: Estimator,
) -> Result<MeasureReport> {
    if samples < 1000 {
        return invalid("at least 10³ samples are required");
    }
    let nu = s.nu();
    let mut rows = Vec::new();
    for &eps in epsilons {
        let scaling = cfg.scaling.with_epsilon(eps, nu)?;
        let c = MelnikovConfig { scaling: scaling.clone(), gamma32: scaling.gamma.powf(1.5), ..cfg.clone() };
        let model = FrequencyModel::new(s, eps)?;
        let set = family_slabs(&model, &c, family)?;
        let e = estimate_fraction(&set.slabs, nu, samples, seed, est);
        let vol = eps.powi(2 * nu as i32) * model.det_a;
        rows.push(EpsilonRow {
            epsilon: eps,
            gamma: scaling.gamma,
            fraction: e.fraction,
            stderr: e.stderr,
            excluded_measure: e.fraction * vol,
            slabs: set.slabs.len(),
            ell_max: set.ell_max,
            j_bound: set.j_bound,
            tail_bound: set.tail_bound,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.excluded_measure.ln()).collect();
    // δ(ln y) ≈ stderr/fraction
    let sig: Vec<f64> = rows.iter().map(|r| r.stderr / r.fraction).collect();
    let fit = weighted_slope(&x, &y, &sig);
    Ok(MeasureReport {
        family,
        samples,
        seed,
        estimator: est,
        rows,
        fitted_exponent: fit.map(|f| f.0),
        exponent_stderr: fit.map(|f| f.1),
        expected_exponent: 2.0 * (nu as f64 - 1.0) + 2.0 * cfg.scaling.b,
    })
}

/// Affine form `φ_R(ω) = a_jk + b_ℓjk·ω` of ω·ℓ + d_j − d_k in the d⁽⁰⁾ model.
#[derive(Debug, Clone, Serialize)]
pub struct AffineDecomposition {
    pub a_jk: f64,
    pub b_ljk: Vec<f64>,
    /// Coefficients (C₁, C₂) of the remainder bound C₁ε⁴j̄₁|j−k| + C₂ε^{4−3a}.
    pub q_coeffs: (f64, f64),
    pub q_bound: f64,
}

pub fn affine_decomposition(
    model: &FrequencyModel,
    cfg: &MelnikovConfig,
    ell: &[i64],
    j: i64,
    k: i64,
    q_coeffs: (f64, f64),
) -> Result<AffineDecomposition> {
    let s = &model.sites;
    if j == k {
        return invalid("affine decomposition needs j ≠ k");
    }
    if !s.is_normal(j) || !s.is_normal(k) {
        return invalid("j and k must be normal sites");
    }
    let nu = model.nu();
    let a = nalgebra::DMatrix::from_fn(nu, nu, |i, m| model.a[i][m]);
    let at_inv = a.transpose().try_inverse().ok_or_else(|| Error::VanishingDenominator("singular 𝔸".into()))?;
    let v = nalgebra::DVector::from_vec(model.v.clone());
    let wj = nalgebra::DVector::from_vec(w_vector_f64(s, j));
    let wk = nalgebra::DVector::from_vec(w_vector_f64(s, k));
    let ob = nalgebra::DVector::from_vec(model.omega_bar.clone());
    let dl = dispersion_f64(j as f64) - dispersion_f64(k as f64);
    let atv = &at_inv * &v;
    let atw = &at_inv * (&wj - &wk);
    // v⃗·𝔸⁻¹ω̄ = 𝔸^{−T}v⃗·ω̄
    let a_jk = dl * (1.0 - atv.dot(&ob)) - atw.dot(&ob);
    let b: Vec<f64> = (0..nu).map(|i| ell[i] as f64 + dl * atv[i] + atw[i]).collect();
    let e = cfg.scaling.epsilon;
    let q_bound = q_coeffs.0 * e.powi(4) * s.jbar1 as f64 * (j - k).abs() as f64
        + q_coeffs.1 * e.powf(4.0 - 3.0 * cfg.scaling.a);
    Ok(AffineDecomposition { a_jk, b_ljk: b, q_coeffs, q_bound })
}

/// ω·ℓ + d_j − d_k at ω, with d_j = m(ξ(ω))λ(j) + ε²κ_j(ξ(ω)).
pub fn phi_r(model: &FrequencyModel, omega: &[f64], ell: &[i64], j: i64, k: i64) -> Result<f64> {
    let xi = model.twist().inverse_frequency_unchecked(omega, model.eps)?;
    Ok(omega.iter().zip(ell).map(|(o, l)| o * *l as f64).sum::<f64>() + d0(model, &xi, j) - d0(model, &xi, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    R,
    Q,
    P,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonantSetDescriptor {
    pub kind: SetKind,
    pub ell: Vec<i64>,
    pub j: i64,
    /// Second site for R; unused otherwise.
    pub k: i64,
    pub eta: f64,
    pub sigma: f64,
}

impl ResonantSetDescriptor {
    pub fn new(kind: SetKind, ell: Vec<i64>, j: i64, k: i64, eta: f64, sigma: f64) -> Result<Self> {
        if kind == SetKind::R && j == k {
            return invalid("R_{ℓjk} needs j ≠ k");
        }
        if !(eta > 0.0) || sigma < 1.0 {
            return invalid("need η > 0 and σ ≥ 1");
        }
        Ok(ResonantSetDescriptor { kind, ell, j, k, eta, sigma })
    }

    /// The defining function at ω (d⁽⁰⁾ model).
    pub fn value(&self, model: &FrequencyModel, omega: &[f64]) -> Result<f64> {
        let xi = model.twist().inverse_frequency_unchecked(omega, model.eps)?;
        let e2 = model.eps * model.eps;
        let m = 1.0 + e2 * model.v.iter().zip(&xi).map(|(a, b)| a * b).sum::<f64>();
        let wl: f64 = omega.iter().zip(&self.ell).map(|(o, l)| o * *l as f64).sum();
        Ok(match self.kind {
            SetKind::Q => wl + m * self.j as f64,
            SetKind::P => wl + d0(model, &xi, self.j),
            SetKind::R => wl + d0(model, &xi, self.j) - d0(model, &xi, self.k),
        })
    }

    pub fn threshold(&self) -> f64 {
        2.0 * self.eta * bracket(&self.ell).powf(-self.sigma)
    }
}

fn d0(model: &FrequencyModel, xi: &[f64], j: i64) -> f64 {
    let e2 = model.eps * model.eps;
    let lam = dispersion_f64(j as f64);
    let w = w_vector_f64(&model.sites, j);
    lam + e2 * model.v.iter().zip(&w).zip(xi).map(|((v, w), x)| (lam * v + w) * x).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    EmptyByEllBound { lemma: String },
    EmptyByInclusion { lemma: String },
    Candidate,
}

/// Classifies a resonant set by the pruning and inclusion lemmas.
pub fn classify_resonant_set(desc: &ResonantSetDescriptor, model: &FrequencyModel, cfg: &MelnikovConfig) -> Classification {
    let l = l1(&desc.ell) as f64;
    let wsup = model.omega_sup();
    let slack = 2.0 * desc.eta * bracket(&desc.ell).powf(-desc.sigma);
    match desc.kind {
        SetKind::R => {
            let dl = (dispersion_f64(desc.j as f64) - dispersion_f64(desc.k as f64)).abs();
            // nonempty needs (1/3)|λ(j)−λ(k)| ≤ |ω||ℓ| + 2η⟨ℓ⟩^{−σ}
            if dl / 3.0 > wsup * l + slack {
                return Classification::EmptyByEllBound { lemma: "R nonempty needs |ℓ| ≥ C|λ(j)−λ(k)|".into() };
            }
            let t = inclusion_threshold(cfg, model.nu(), &desc.ell);
            if (desc.j.abs() as f64) >= t && (desc.k.abs() as f64) >= t {
                return Classification::EmptyByInclusion { lemma: "R_{ℓjk}(γ^{3/2},τ) ⊆ Q_{ℓ,j−k}(γ,ν+2)".into() };
            }
            Classification::Candidate
        }
        SetKind::Q | SetKind::P => {
            let (m_lo, _) = model.m_range();
            // nonempty needs m|j| − (ε²-corrections) ≤ |ω||ℓ| + 2η⟨ℓ⟩^{−σ}
            let corr = if desc.kind == SetKind::P { 0.5 } else { 0.0 };
            if m_lo * (desc.j.abs() as f64 - corr) > wsup * l + slack {
                return Classification::EmptyByEllBound { lemma: "Q, P nonempty need |ℓ| ≥ C|j|".into() };
            }
            Classification::Candidate
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s67() -> TangentialSet {
        TangentialSet::new(&[6, 7]).unwrap()
    }

    fn cfg(eps: f64) -> MelnikovConfig {
        MelnikovConfig::new(ScalingParams::new(eps, 0.1, 2).unwrap()).unwrap()
    }

    #[test]
    fn schedules() {
        let c = cfg(0.05);
        assert!(c.gamma32 < c.scaling.gamma);
        assert!((c.gamma_n(0) - 2.0 * c.scaling.gamma).abs() < 1e-15);
        for n in 0..10 {
            assert!(c.gamma_n(n + 1) < c.gamma_n(n));
            assert!(c.gamma_n_star(n + 1) < c.gamma_n_star(n));
            assert!(c.gamma_n(n) > c.scaling.gamma);
        }
    }

    #[test]
    fn resonant_frequency_is_excluded() {
        // ω·(1,−1) = 0 violates the Diophantine bound
        assert!(!diophantine(&[3.0, 3.0], 1e-3, 10, 4));
        assert!(diophantine(&[1.0, std::f64::consts::SQRT_2], 1e-3, 10, 4));
    }

    #[test]
    fn membership_rejects_outside() {
        let model = FrequencyModel::new(&s67(), 0.01).unwrap();
        let c = cfg(0.01);
        assert!(in_g0(&model.omega_bar, &model, &c).is_err());
        let w = model.omega(&[1.3, 1.7]);
        let (a, _) = in_g0(&w, &model, &c).unwrap();
        assert_eq!(a, diophantine(&w, c.scaling.gamma, c.scaling.tau, c.ell_max));
    }

    #[test]
    fn slabs_cover_what_they_should() {
        let model = FrequencyModel::new(&s67(), 0.16).unwrap();
        let c = cfg(0.16);
        let set = family_slabs(&model, &c, Family::G0_0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let xi = [1.0 + rng.gen::<f64>(), 1.0 + rng.gen::<f64>()];
            let w = model.omega(&xi);
            let inside = set.slabs.iter().any(|s| s.contains(&xi));
            assert_eq!(inside, !diophantine(&w, c.scaling.gamma, c.scaling.tau, c.ell_max));
        }
        assert!(set.tail_bound.unwrap() < 1e-6);
    }

    #[test]
    fn estimators_agree() {
        let set = vec![Slab { alpha: -3.0, g: vec![1.0, 1.0], width: 0.1, label: String::new() }];
        let a = estimate_fraction(&set, 2, 200_000, 1, Estimator::HitOrMiss);
        let b = estimate_fraction(&set, 2, 200_000, 1, Estimator::Conditional);
        // exact area of the band |ξ₁+ξ₂−3| < 0.1 in [1,2]² is 0.2 − 0.01 ... diagonal band: 0.2·1 − 0.1² = 0.19
        assert!((a.fraction - 0.19).abs() < 4.0 * a.stderr);
        assert!((b.fraction - 0.19).abs() < 4.0 * b.stderr);
        assert!(b.stderr < a.stderr);
        let c = estimate_fraction(&set, 2, 800_000, 1, Estimator::HitOrMiss);
        let r = a.stderr / c.stderr;
        assert!((r - 2.0).abs() < 0.1, "ratio {r}");
    }

    #[test]
    fn deterministic_given_seed() {
        let set = vec![Slab { alpha: -3.2, g: vec![1.0, 0.5], width: 0.05, label: String::new() }];
        let a = estimate_fraction(&set, 2, 10_000, 7, Estimator::HitOrMiss);
        let b = estimate_fraction(&set, 2, 10_000, 7, Estimator::HitOrMiss);
        assert_eq!(a.fraction, b.fraction);
    }

    #[test]
    fn gamma_monotone() {
        let model = FrequencyModel::new(&s67(), 0.16).unwrap();
        let mut last = f64::INFINITY;
        for g in [1e-2, 3e-3, 1e-3, 3e-4] {
            let mut c = cfg(0.16);
            c.scaling.gamma = g;
            let set = family_slabs(&model, &c, Family::G0_0).unwrap();
            let e = estimate_fraction(&set.slabs, 2, 20_000, 5, Estimator::Conditional);
            assert!(e.fraction <= last);
            last = e.fraction;
        }
    }

    #[test]
    fn affine_reconstruction() {
        let eps = 0.05;
        let model = FrequencyModel::new(&s67(), eps).unwrap();
        let c = cfg(eps);
        assert!(affine_decomposition(&model, &c, &[1, 0], 9, 9, (1.0, 1.0)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (ell, j, k) in [(vec![1, -1], 9i64, 10i64), (vec![2, 0], -12, 15), (vec![0, 3], 30, 31)] {
            let ad = affine_decomposition(&model, &c, &ell, j, k, (1.0, 1.0)).unwrap();
            for _ in 0..20 {
                let xi = [1.0 + rng.gen::<f64>(), 1.0 + rng.gen::<f64>()];
                let w = model.omega(&xi);
                let lin = ad.a_jk + ad.b_ljk.iter().zip(&w).map(|(b, o)| b * o).sum::<f64>();
                let direct = phi_r(&model, &w, &ell, j, k).unwrap();
                assert!((lin - direct).abs() <= 1e-9 + ad.q_bound, "{lin} vs {direct}");
            }
        }
        // b_ℓjk → ℓ for neighbours far out
        let near = affine_decomposition(&model, &c, &[1, 0], 2000, 2001, (1.0, 1.0)).unwrap();
        let far = affine_decomposition(&model, &c, &[1, 0], 20, 21, (1.0, 1.0)).unwrap();
        let dev = |a: &AffineDecomposition| ((a.b_ljk[0] - 1.0).powi(2) + a.b_ljk[1].powi(2)).sqrt();
        assert!(dev(&near) < dev(&far));
    }

    #[test]
    fn classification() {
        let eps = 0.05;
        let model = FrequencyModel::new(&s67(), eps).unwrap();
        let c = cfg(eps);
        let g = c.gamma32;
        let r = ResonantSetDescriptor::new(SetKind::R, vec![1, 0], 10, 400, g, 10.0).unwrap();
        assert!(matches!(classify_resonant_set(&r, &model, &c), Classification::EmptyByEllBound { .. }));
        let t = inclusion_threshold(&c, 2, &[1, 0]).ceil() as i64;
        let r = ResonantSetDescriptor::new(SetKind::R, vec![1, 0], t + 1, t + 2, g, 10.0).unwrap();
        assert!(matches!(classify_resonant_set(&r, &model, &c), Classification::EmptyByInclusion { .. }));
        assert!(ResonantSetDescriptor::new(SetKind::R, vec![0, 0], 9, 9, g, 10.0).is_err());
        let q = ResonantSetDescriptor::new(SetKind::Q, vec![1, 1], 500, 0, c.scaling.gamma, 10.0).unwrap();
        assert!(matches!(classify_resonant_set(&q, &model, &c), Classification::EmptyByEllBound { .. }));
    }

    #[test]
    fn classification_is_sound() {
        let eps = 0.05;
        let model = FrequencyModel::new(&s67(), eps).unwrap();
        let c = cfg(eps);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let omegas: Vec<Vec<f64>> =
            (0..200).map(|_| model.omega(&[1.0 + rng.gen::<f64>(), 1.0 + rng.gen::<f64>()])).collect();
        let eta = 0.5;
        for ell in lattice_ball(2, 4) {
            for j in [-40i64, -13, -9, 8, 9, 10, 11, 14, 25] {
                for k in [-11i64, 8, 9, 12, 20, 33] {
                    for kind in [SetKind::R, SetKind::Q, SetKind::P] {
                        if kind == SetKind::R && j == k {
                            continue;
                        }
                        let d = ResonantSetDescriptor::new(kind, ell.clone(), j, k, eta, 1.0).unwrap();
                        let cl = classify_resonant_set(&d, &model, &c);
                        if let Classification::EmptyByEllBound { .. } = cl {
                            for w in &omegas {
                                assert!(d.value(&model, w).unwrap().abs() > d.threshold());
                            }
                        }
                    }
                }
            }
        }
    }
}

//! Run configuration, read from TOML. The schema is documented in the README.

use dpkam::scalar::{parse_rational, Rational};
use dpkam::sites::{is_in_wave_packet_class, ScalingParams, TangentialSet};
use dpkam::torus::Density;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub resonances: ResonanceConfig,
    #[serde(default)]
    pub wbnf: WbnfConfig,
    #[serde(default)]
    pub twist: TwistConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Optional; must equal the number of sites when given.
    pub nu: Option<usize>,
    pub splus: Vec<i64>,
    /// Wave-packet radius as `p/q`.
    pub r_wave_packet: Option<String>,
    pub epsilon: f64,
    pub a: f64,
    /// Amplitudes as `p/q` strings, each in [1, 2].
    pub xi: Vec<String>,
    /// Density coefficients `[k, c_k]` with k ≥ 9.
    pub f_spec: Option<Vec<(u32, f64)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationConfig {
    pub n_x: i64,
    pub n_phi: i64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig { n_x: 24, n_phi: 12 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResonanceConfig {
    pub orders: Vec<usize>,
    pub bound: i64,
    pub m_cap: u32,
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        ResonanceConfig { orders: vec![4], bound: 3, m_cap: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WbnfConfig {
    /// Normalizes degrees 3..=max_order+2.
    pub max_order: usize,
}

impl Default for WbnfConfig {
    fn default() -> Self {
        WbnfConfig { max_order: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwistConfig {
    pub rank_one_threshold: f64,
    pub delta: f64,
    pub ell_bound: u32,
    pub j_bound: i64,
}

impl Default for TwistConfig {
    fn default() -> Self {
        let d = dpkam::twist::NondegConfig::default();
        TwistConfig { rank_one_threshold: d.rank_one_threshold, delta: d.delta, ell_bound: d.ell_bound, j_bound: d.j_bound }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub j_min: i64,
    pub j_max: i64,
    pub kappa_bound: i64,
    pub divisor_j_bound: i64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig { j_min: 8, j_max: 30, kappa_bound: 1000, divisor_j_bound: 200 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    pub family: String,
    pub estimator: String,
    pub samples: usize,
    pub seed: u64,
    pub epsilons: Vec<f64>,
    pub ell_max: u32,
    pub inclusion_c: f64,
    pub c_g1: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            family: "g0_0".into(),
            estimator: "conditional".into(),
            samples: 100_000,
            seed: 1,
            epsilons: vec![0.04, 0.057, 0.08, 0.113, 0.16],
            ell_max: 20,
            inclusion_c: 1.0,
            c_g1: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub n0: f64,
    pub zeta_tol: f64,
    /// Also compute matched (0, j) eigenvalues of the normal operator.
    pub spectrum: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { max_iter: 8, tol: 1e-10, n0: 4.0, zeta_tol: 1e-9, spectrum: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub t_final: f64,
    pub sample_dt: f64,
    pub rtol: f64,
    pub drift_tol: f64,
    /// Checkpoint written by `solve`; solved afresh when absent.
    pub checkpoint: Option<String>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig { t_final: 100.0, sample_dt: 1.0, rtol: 1e-11, drift_tol: 1e-6, checkpoint: None }
    }
}

/// Validated model data.
#[derive(Debug)]
pub struct Model {
    pub sites: TangentialSet,
    pub xi: Vec<Rational>,
    pub xi_f64: Vec<f64>,
    pub scaling: ScalingParams,
    pub density: Density,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn model(&self) -> Result<Model, String> {
        let m = &self.model;
        let sites = TangentialSet::new(&m.splus).map_err(|e| format!("model.splus: {e}"))?;
        if let Some(nu) = m.nu {
            if nu != sites.nu() {
                return Err(format!("model.nu = {nu} but model.splus has {} sites", sites.nu()));
            }
        }
        if let Some(r) = &m.r_wave_packet {
            let r = parse_rational(r).ok_or_else(|| format!("model.r_wave_packet: cannot parse {r:?}"))?;
            if !is_in_wave_packet_class(&sites, &r).map_err(|e| format!("model.r_wave_packet: {e}"))? {
                return Err("model.splus is not in the wave-packet class for model.r_wave_packet".into());
            }
        }
        if m.xi.len() != sites.nu() {
            return Err(format!("model.xi must have {} entries", sites.nu()));
        }
        let xi = m
            .xi
            .iter()
            .map(|s| parse_rational(s).ok_or_else(|| format!("model.xi: cannot parse {s:?}")))
            .collect::<Result<Vec<_>, _>>()?;
        let xi_f64: Vec<f64> = xi.iter().map(dpkam::scalar::to_f64).collect();
        if xi_f64.iter().any(|x| !(1.0..=2.0).contains(x)) {
            return Err("model.xi entries must lie in [1, 2]".into());
        }
        let scaling = ScalingParams::new(m.epsilon, m.a, sites.nu()).map_err(|e| format!("model: {e}"))?;
        let density = Density::new(m.f_spec.clone().unwrap_or_default()).map_err(|e| format!("model.f_spec: {e}"))?;
        if self.truncation.n_x <= 2 * sites.jbar1 {
            return Err(format!("truncation.n_x must exceed 2·j̄₁ = {}", 2 * sites.jbar1));
        }
        Ok(Model { sites, xi, xi_f64, scaling, density })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[model]\nsplus = [6, 7]\nepsilon = 0.001\na = 0.1\nxi = [\"13/10\", \"17/10\"]\n";

    #[test]
    fn parses_minimal() {
        let c = RunConfig::parse(BASE).unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.sites.nu(), 2);
        assert!((m.scaling.gamma - 0.001f64.powf(2.1)).abs() < 1e-20);
        assert_eq!(c.truncation.n_x, 24);
    }

    #[test]
    fn missing_field_is_named() {
        let e = RunConfig::parse("[model]\nsplus = [6, 7]\na = 0.1\nxi = [\"1\", \"1\"]\n").unwrap_err();
        assert!(e.contains("epsilon"), "{e}");
    }

    #[test]
    fn rejects_bad_values() {
        let c = RunConfig::parse(&BASE.replace("0.001", "1.5")).unwrap();
        assert!(c.model().is_err());
        let c = RunConfig::parse(&format!("{BASE}nu = 3\n")).unwrap();
        assert!(c.model().unwrap_err().contains("nu"));
        let c = RunConfig::parse(&format!("{BASE}f_spec = [[5, 1.0]]\n")).unwrap();
        assert!(c.model().is_err());
    }
}

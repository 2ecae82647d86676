//! Galerkin invariant tori of the truncated equation in the coordinates
//! u = A_ε(θ, y, z), a Newton solver with counterterm ζ, the linearized
//! normal operator and a conservative time integrator.
//!
//! By translation invariance, if the torus has Fourier mode e^{i(ℓ·φ + jx)}
//! then j = j̄·ℓ. The solver works on that subspace: Θ and y carry modes with
//! j̄·ℓ = 0 and z_j carries modes with j̄·ℓ = j. The nonlinear functional maps
//! the subspace to itself, so nothing is lost.

use crate::error::{invalid, Error, Result};
use crate::sites::{dispersion_f64, TangentialSet};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Mode cutoffs and the φ-grid used for pseudo-spectral products.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationGrid {
    pub n_x: i64,
    pub n_phi: i64,
    /// Points per φ-direction.
    pub m: usize,
}

impl TruncationGrid {
    pub fn new(s: &TangentialSet, n_x: i64, n_phi: i64) -> Result<Self> {
        if n_x <= 2 * s.jbar1 {
            return invalid(format!("N_x = {n_x} must exceed 2·j̄₁ = {}", 2 * s.jbar1));
        }
        if *s.splus().last().unwrap() > n_x {
            return invalid("tangential sites exceed N_x");
        }
        if n_phi < 1 {
            return invalid("N_φ must be positive");
        }
        // products of two modes reach 2N_φ; 3N_φ+1 points keep them unaliased
        Ok(TruncationGrid { n_x, n_phi, m: (3 * n_phi + 1) as usize })
    }
}

/// Polynomial density f(u) = Σ c_k u^k with valuation ≥ 9.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Density {
    /// (k, c_k) pairs.
    pub terms: Vec<(u32, f64)>,
}

impl Density {
    pub fn new(terms: Vec<(u32, f64)>) -> Result<Self> {
        if terms.iter().any(|(k, _)| *k < 9) {
            return invalid("the density must vanish to order 9");
        }
        Ok(Density { terms: terms.into_iter().filter(|t| t.1 != 0.0).collect() })
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn value(&self, u: f64) -> f64 {
        self.terms.iter().map(|&(k, c)| c * u.powi(k as i32)).sum()
    }

    fn d1(&self, u: f64) -> f64 {
        self.terms.iter().map(|&(k, c)| c * k as f64 * u.powi(k as i32 - 1)).sum()
    }

    fn d2(&self, u: f64) -> f64 {
        self.terms.iter().map(|&(k, c)| c * (k * (k - 1)) as f64 * u.powi(k as i32 - 2)).sum()
    }

    fn max_degree(&self) -> u32 {
        self.terms.iter().map(|t| t.0).max().unwrap_or(0)
    }
}

/// Problem data shared by the embedding, residual and solver.
#[derive(Debug, Clone)]
pub struct TorusProblem {
    pub sites: TangentialSet,
    pub xi: Vec<f64>,
    pub eps: f64,
    /// b, with u = ε v_ε + ε^b z.
    pub b: f64,
    pub omega: Vec<f64>,
    pub grid: TruncationGrid,
    pub density: Density,
    /// Disables the nonlinearity, keeping only the quadratic Hamiltonian.
    pub linear_only: bool,
    layout: Layout,
    tables: Vec<Vec<Complex64>>,
}

/// Real-valued Fourier series on 𝕋^ν stored on all modes ±ℓ.
pub type ModeSeries = BTreeMap<Vec<i64>, Complex64>;

#[derive(Debug, Clone, PartialEq)]
pub struct TorusEmbedding {
    pub theta: Vec<ModeSeries>,
    pub y: Vec<ModeSeries>,
    /// z_{ℓj} for j > 0; the coefficients at −j are z̄_{−ℓ,j}.
    pub z: BTreeMap<(Vec<i64>, i64), Complex64>,
    pub zeta: Vec<f64>,
}

impl TorusEmbedding {
    pub fn trivial(nu: usize) -> Self {
        TorusEmbedding { theta: vec![BTreeMap::new(); nu], y: vec![BTreeMap::new(); nu], z: BTreeMap::new(), zeta: vec![0.0; nu] }
    }

    /// Whether every stored series satisfies the reality condition.
    pub fn is_real(&self) -> bool {
        let ok = |f: &ModeSeries| {
            f.iter().all(|(l, c)| {
                let m: Vec<i64> = l.iter().map(|x| -x).collect();
                f.get(&m).is_some_and(|d| (d - c.conj()).norm() <= 1e-14 * (1.0 + c.norm()))
            })
        };
        self.theta.iter().all(ok) && self.y.iter().all(ok)
    }
}

/// Serializable form of an embedding plus grid metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub splus: Vec<i64>,
    pub xi: Vec<f64>,
    pub epsilon: f64,
    pub omega: Vec<f64>,
    pub grid: TruncationGrid,
    pub theta: Vec<Vec<(Vec<i64>, f64, f64)>>,
    pub y: Vec<Vec<(Vec<i64>, f64, f64)>>,
    pub z: Vec<(Vec<i64>, i64, f64, f64)>,
    pub zeta: Vec<f64>,
}

impl Checkpoint {
    pub fn from_embedding(p: &TorusProblem, e: &TorusEmbedding) -> Self {
        let ser = |f: &ModeSeries| f.iter().map(|(l, c)| (l.clone(), c.re, c.im)).collect();
        Checkpoint {
            splus: p.sites.splus().to_vec(),
            xi: p.xi.clone(),
            epsilon: p.eps,
            omega: p.omega.clone(),
            grid: p.grid.clone(),
            theta: e.theta.iter().map(ser).collect(),
            y: e.y.iter().map(ser).collect(),
            z: e.z.iter().map(|((l, j), c)| (l.clone(), *j, c.re, c.im)).collect(),
            zeta: e.zeta.clone(),
        }
    }

    pub fn embedding(&self) -> TorusEmbedding {
        let de = |v: &Vec<(Vec<i64>, f64, f64)>| v.iter().map(|(l, a, b)| (l.clone(), Complex64::new(*a, *b))).collect();
        TorusEmbedding {
            theta: self.theta.iter().map(de).collect(),
            y: self.y.iter().map(de).collect(),
            z: self.z.iter().map(|(l, j, a, b)| ((l.clone(), *j), Complex64::new(*a, *b))).collect(),
            zeta: self.zeta.clone(),
        }
    }
}

/// Unknowns and equations of the Galerkin system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Part {
    Re,
    Im,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    Theta(usize, usize, Part),
    Y(usize, usize, Part),
    Z(usize, Part),
    Zeta(usize),
}

#[derive(Debug, Clone)]
struct Layout {
    /// Modes with j̄·ℓ = 0 in canonical half (ℓ = 0 first).
    kmodes: Vec<Vec<i64>>,
    /// (ℓ, j) with j > 0 normal and j̄·ℓ = j.
    zmodes: Vec<(Vec<i64>, i64)>,
    unknowns: Vec<Slot>,
    equations: Vec<Slot>,
    /// Mode size |ℓ|_∞ of each slot, for the projection schedule.
    unknown_size: Vec<i64>,
    equation_size: Vec<i64>,
}

fn canonical(l: &[i64]) -> bool {
    l.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0)
}

fn linf(l: &[i64]) -> i64 {
    l.iter().map(|x| x.abs()).max().unwrap_or(0)
}

fn box_modes(nu: usize, n: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..nu {
        out = out
            .into_iter()
            .flat_map(|p| {
                (-n..=n).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out
}

impl Layout {
    fn new(s: &TangentialSet, g: &TruncationGrid) -> Self {
        let nu = s.nu();
        let modes = box_modes(nu, g.n_phi);
        let mut kmodes: Vec<Vec<i64>> = vec![vec![0; nu]];
        kmodes.extend(modes.iter().filter(|l| s.momentum(l) == 0 && canonical(l)).cloned());
        let mut zmodes = Vec::new();
        for l in &modes {
            let j = s.momentum(l);
            if j > 0 && j <= g.n_x && s.is_normal(j) {
                zmodes.push((l.clone(), j));
            }
        }
        zmodes.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
        let mut unknowns = Vec::new();
        let mut equations = Vec::new();
        let (mut us, mut es) = (Vec::new(), Vec::new());
        for i in 0..nu {
            for (k, l) in kmodes.iter().enumerate() {
                let parts: &[Part] = if k == 0 { &[Part::Re] } else { &[Part::Re, Part::Im] };
                for &p in parts {
                    if k > 0 {
                        unknowns.push(Slot::Theta(i, k, p));
                        us.push(linf(l));
                    }
                    equations.push(Slot::Theta(i, k, p));
                    es.push(linf(l));
                }
            }
        }
        for i in 0..nu {
            for (k, l) in kmodes.iter().enumerate() {
                let parts: &[Part] = if k == 0 { &[Part::Re] } else { &[Part::Re, Part::Im] };
                for &p in parts {
                    unknowns.push(Slot::Y(i, k, p));
                    us.push(linf(l));
                    equations.push(Slot::Y(i, k, p));
                    es.push(linf(l));
                }
            }
        }
        for (k, (l, _)) in zmodes.iter().enumerate() {
            for p in [Part::Re, Part::Im] {
                unknowns.push(Slot::Z(k, p));
                us.push(linf(l));
                equations.push(Slot::Z(k, p));
                es.push(linf(l));
            }
        }
        for i in 0..nu {
            unknowns.push(Slot::Zeta(i));
            us.push(0);
        }
        Layout { kmodes, zmodes, unknowns, equations, unknown_size: us, equation_size: es }
    }
}

fn part(c: Complex64, p: Part) -> f64 {
    match p {
        Part::Re => c.re,
        Part::Im => c.im,
    }
}

fn set_part(c: &mut Complex64, p: Part, v: f64) {
    match p {
        Part::Re => c.re = v,
        Part::Im => c.im = v,
    }
}

fn neg(l: &[i64]) -> Vec<i64> {
    l.iter().map(|x| -x).collect()
}

/// Residual split by component, as Fourier coefficients on the layout modes.
#[derive(Debug, Clone)]
pub struct Residual {
    pub theta: Vec<Vec<Complex64>>,
    pub y: Vec<Vec<Complex64>>,
    pub z: Vec<Complex64>,
}

impl Residual {
    /// Sup over 𝕋^ν of the truncated residual, bounded by the coefficient sums
    /// (z is measured in sup over x as well).
    pub fn sup_norm(&self) -> f64 {
        let series = |v: &Vec<Complex64>| v[0].norm() + 2.0 * v[1..].iter().map(|c| c.norm()).sum::<f64>();
        let a = self.theta.iter().map(series).fold(0.0, f64::max);
        let b = self.y.iter().map(series).fold(0.0, f64::max);
        let c = 2.0 * self.z.iter().map(|c| c.norm()).sum::<f64>();
        a.max(b).max(c)
    }
}

impl TorusProblem {
    pub fn new(s: &TangentialSet, xi: &[f64], eps: f64, b: f64, omega: &[f64], grid: TruncationGrid, density: Density) -> Result<Self> {
        if xi.len() != s.nu() || omega.len() != s.nu() {
            return invalid("ξ and ω must have length ν");
        }
        if !(eps > 0.0 && eps < 1.0) || b <= 1.0 {
            return invalid("need 0 < ε < 1 and b > 1");
        }
        let layout = Layout::new(s, &grid);
        let m = grid.m;
        let maxk = 3 * grid.n_phi;
        // per-direction tables e^{ikφ_n}, k ∈ [−3N_φ, 3N_φ]
        let tables = (0..=(2 * maxk))
            .map(|k| {
                let kk = (k as i64 - maxk) as f64;
                (0..m).map(|n| Complex64::from_polar(1.0, kk * 2.0 * PI * n as f64 / m as f64)).collect()
            })
            .collect();
        Ok(TorusProblem {
            sites: s.clone(),
            xi: xi.to_vec(),
            eps,
            b,
            omega: omega.to_vec(),
            grid,
            density,
            linear_only: false,
            layout,
            tables,
        })
    }

    pub fn nu(&self) -> usize {
        self.sites.nu()
    }

    pub fn unknown_count(&self) -> usize {
        self.layout.unknowns.len()
    }

    pub fn zmodes(&self) -> &[(Vec<i64>, i64)] {
        &self.layout.zmodes
    }

    fn points(&self) -> usize {
        self.grid.m.pow(self.nu() as u32)
    }

    fn grid_index(&self, mut p: usize) -> Vec<usize> {
        let m = self.grid.m;
        (0..self.nu())
            .map(|_| {
                let r = p % m;
                p /= m;
                r
            })
            .collect()
    }

    fn wave(&self, l: &[i64], idx: &[usize]) -> Complex64 {
        let off = 3 * self.grid.n_phi;
        l.iter().zip(idx).fold(Complex64::new(1.0, 0.0), |acc, (&k, &n)| acc * self.tables[(k + off) as usize][n])
    }

    pub fn phi_point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&n| 2.0 * PI * n as f64 / self.grid.m as f64).collect()
    }

    fn pack(&self, e: &TorusEmbedding) -> Vec<f64> {
        let lay = &self.layout;
        lay.unknowns
            .iter()
            .map(|s| match s {
                Slot::Theta(i, k, p) => part(e.theta[*i].get(&lay.kmodes[*k]).copied().unwrap_or_default(), *p),
                Slot::Y(i, k, p) => part(e.y[*i].get(&lay.kmodes[*k]).copied().unwrap_or_default(), *p),
                Slot::Z(k, p) => part(e.z.get(&lay.zmodes[*k]).copied().unwrap_or_default(), *p),
                Slot::Zeta(i) => e.zeta[*i],
            })
            .collect()
    }

    fn unpack(&self, x: &[f64]) -> TorusEmbedding {
        let lay = &self.layout;
        let nu = self.nu();
        let mut th: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); nu];
        let mut yy: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); nu];
        let mut e = TorusEmbedding::trivial(nu);
        for (s, &v) in lay.unknowns.iter().zip(x) {
            match s {
                Slot::Theta(i, k, p) => set_part(th[*i].entry(*k).or_default(), *p, v),
                Slot::Y(i, k, p) => set_part(yy[*i].entry(*k).or_default(), *p, v),
                Slot::Z(k, p) => set_part(e.z.entry(lay.zmodes[*k].clone()).or_default(), *p, v),
                Slot::Zeta(i) => e.zeta[*i] = v,
            }
        }
        let expand = |m: &BTreeMap<usize, Complex64>| {
            let mut f = ModeSeries::new();
            for (&k, &c) in m {
                let l = &lay.kmodes[k];
                if k == 0 {
                    f.insert(l.clone(), Complex64::new(c.re, 0.0));
                } else {
                    f.insert(l.clone(), c);
                    f.insert(neg(l), c.conj());
                }
            }
            f
        };
        e.theta = th.iter().map(expand).collect();
        e.y = yy.iter().map(expand).collect();
        e
    }

    /// Fourier coefficients in x of u = A_ε(θ, y, z) at one φ, indexed j + N_x.
    pub fn action_angle_embed(&self, e: &TorusEmbedding, phi: &[f64]) -> Result<Vec<Complex64>> {
        let wave = |l: &[i64]| Complex64::from_polar(1.0, l.iter().zip(phi).map(|(a, b)| *a as f64 * b).sum());
        let eval = |f: &ModeSeries| f.iter().map(|(l, c)| c * wave(l)).sum::<Complex64>().re;
        let th: Vec<f64> = (0..self.nu()).map(|i| phi[i] + eval(&e.theta[i])).collect();
        let y: Vec<f64> = e.y.iter().map(eval).collect();
        let mut zj = vec![Complex64::default(); self.grid.n_x as usize + 1];
        for ((l, j), c) in &e.z {
            zj[*j as usize] += c * wave(l);
        }
        self.assemble_u(&th, &y, &zj, phi)
    }

    fn assemble_u(&self, th: &[f64], y: &[f64], zj: &[Complex64], phi: &[f64]) -> Result<Vec<Complex64>> {
        let nx = self.grid.n_x;
        let mut u = vec![Complex64::default(); (2 * nx + 1) as usize];
        let a = 2.0 * self.b - 2.0;
        for (i, &j) in self.sites.splus().iter().enumerate() {
            let rad = self.xi[i] + self.eps.powf(a) * dispersion_f64(j as f64).abs() * y[i];
            if !(rad > 0.0) {
                return Err(Error::Numerical(format!("negative radicand at mode {j}, φ = {phi:?}")));
            }
            let c = Complex64::from_polar(self.eps * rad.sqrt(), th[i]);
            u[(j + nx) as usize] = c;
            u[(nx - j) as usize] = c.conj();
        }
        let eb = self.eps.powf(self.b);
        for j in 1..=nx {
            if self.sites.is_normal(j) {
                u[(j + nx) as usize] = eb * zj[j as usize];
                u[(nx - j) as usize] = eb * zj[j as usize].conj();
            }
        }
        Ok(u)
    }

    /// ∇H(u) = u − u²/2 + f′(u), Galerkin-truncated to |j| ≤ N_x.
    pub fn gradient(&self, u: &[Complex64]) -> Vec<Complex64> {
        let nx = self.grid.n_x;
        let n = (2 * nx + 1) as usize;
        let mut g = u.to_vec();
        if self.linear_only {
            return g;
        }
        for j in -nx..=nx {
            let mut acc = Complex64::default();
            let lo = (-nx).max(j - nx);
            let hi = nx.min(j + nx);
            for k in lo..=hi {
                acc += u[(k + nx) as usize] * u[(j - k + nx) as usize];
            }
            g[(j + nx) as usize] -= 0.5 * acc;
        }
        if !self.density.is_zero() {
            let fx = physical_map(u, nx, self.density.max_degree() as i64, |v| self.density.d1(v));
            for k in 0..n {
                g[k] += fx[k];
            }
        }
        g
    }

    /// Pointwise values of the pulled-back vector field; returns (Xθ, Xy, Xz by j).
    fn vector_field(&self, u: &[Complex64], y: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<Complex64>) {
        let nx = self.grid.n_x;
        let g = self.gradient(u);
        let xu = |j: i64| I * dispersion_f64(j as f64) * g[(j + nx) as usize];
        let a = 2.0 * self.b - 2.0;
        let mut xt = Vec::new();
        let mut xy = Vec::new();
        for (i, &j) in self.sites.splus().iter().enumerate() {
            let uj = u[(j + nx) as usize];
            let q = xu(j) / uj;
            let r2 = self.xi[i] + self.eps.powf(a) * dispersion_f64(j as f64).abs() * y[i];
            xt.push(q.im);
            xy.push(2.0 * r2 * q.re / (self.eps.powf(a) * dispersion_f64(j as f64).abs()));
        }
        let eb = self.eps.powf(self.b);
        let mut xz = vec![Complex64::default(); nx as usize + 1];
        for j in 1..=nx {
            if self.sites.is_normal(j) {
                xz[j as usize] = xu(j) / eb;
            }
        }
        (xt, xy, xz)
    }

    /// The functional ℱ(i, ζ) projected on the layout modes.
    pub fn residual(&self, e: &TorusEmbedding) -> Result<Residual> {
        let nu = self.nu();
        let lay = &self.layout;
        let npts = self.points();
        let nk = lay.kmodes.len();
        let nz = lay.zmodes.len();
        let nx = self.grid.n_x as usize;
        // modes of every stored series, for synthesis
        let parts: Vec<Result<(Vec<Vec<Complex64>>, Vec<Vec<Complex64>>, Vec<Complex64>)>> = (0..npts)
            .into_par_iter()
            .with_min_len(32)
            .map(|p| {
                let idx = self.grid_index(p);
                let phi = self.phi_point(&idx);
                let mut th = vec![0.0; nu];
                let mut y = vec![0.0; nu];
                let mut dth = vec![0.0; nu];
                let mut dy = vec![0.0; nu];
                for i in 0..nu {
                    for (l, c) in &e.theta[i] {
                        let w = c * self.wave(l, &idx);
                        th[i] += w.re;
                        dth[i] += (I * self.dot_omega(l) * w).re;
                    }
                    for (l, c) in &e.y[i] {
                        let w = c * self.wave(l, &idx);
                        y[i] += w.re;
                        dy[i] += (I * self.dot_omega(l) * w).re;
                    }
                    th[i] += phi[i];
                }
                let mut zj = vec![Complex64::default(); nx + 1];
                let mut dz = vec![Complex64::default(); nx + 1];
                for ((l, j), c) in &e.z {
                    let w = c * self.wave(l, &idx);
                    zj[*j as usize] += w;
                    dz[*j as usize] += I * self.dot_omega(l) * w;
                }
                let u = self.assemble_u(&th, &y, &zj, &phi)?;
                let (xt, xy, xz) = self.vector_field(&u, &y);
                let ft: Vec<f64> = (0..nu).map(|i| self.omega[i] + dth[i] - xt[i]).collect();
                let fy: Vec<f64> = (0..nu).map(|i| dy[i] - xy[i] + e.zeta[i]).collect();
                // project this point's contribution
                let mut rt = vec![vec![Complex64::default(); nk]; nu];
                let mut ry = vec![vec![Complex64::default(); nk]; nu];
                for (k, l) in lay.kmodes.iter().enumerate() {
                    let w = self.wave(l, &idx).conj();
                    for i in 0..nu {
                        rt[i][k] += ft[i] * w;
                        ry[i][k] += fy[i] * w;
                    }
                }
                let mut rz = vec![Complex64::default(); nz];
                for (k, (l, j)) in lay.zmodes.iter().enumerate() {
                    let fz = dz[*j as usize] - xz[*j as usize];
                    rz[k] += fz * self.wave(l, &idx).conj();
                }
                Ok((rt, ry, rz))
            })
            .collect();
        let mut rt = vec![vec![Complex64::default(); nk]; nu];
        let mut ry = vec![vec![Complex64::default(); nk]; nu];
        let mut rz = vec![Complex64::default(); nz];
        for p in parts {
            let (a, b, c) = p?;
            for i in 0..nu {
                for k in 0..nk {
                    rt[i][k] += a[i][k];
                    ry[i][k] += b[i][k];
                }
            }
            for k in 0..nz {
                rz[k] += c[k];
            }
        }
        let s = 1.0 / npts as f64;
        for v in rt.iter_mut().chain(ry.iter_mut()) {
            for c in v.iter_mut() {
                *c *= s;
            }
        }
        for c in rz.iter_mut() {
            *c *= s;
        }
        Ok(Residual { theta: rt, y: ry, z: rz })
    }

    fn dot_omega(&self, l: &[i64]) -> f64 {
        self.omega.iter().zip(l).map(|(o, k)| o * *k as f64).sum()
    }

    fn residual_vector(&self, e: &TorusEmbedding) -> Result<Vec<f64>> {
        let r = self.residual(e)?;
        Ok(self
            .layout
            .equations
            .iter()
            .map(|s| match s {
                Slot::Theta(i, k, p) => part(r.theta[*i][*k], *p),
                Slot::Y(i, k, p) => part(r.y[*i][*k], *p),
                Slot::Z(k, p) => part(r.z[*k], *p),
                Slot::Zeta(_) => unreachable!(),
            })
            .collect())
    }

    /// Central-difference Jacobian of the residual vector.
    fn jacobian(&self, x: &[f64], cols: &[usize], rows: &[usize]) -> Result<DMatrix<f64>> {
        let h = 1e-7;
        let columns: Vec<Result<Vec<f64>>> = cols
            .par_iter()
            .map(|&c| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[c] += h;
                xm[c] -= h;
                let fp = self.residual_vector(&self.unpack(&xp))?;
                let fm = self.residual_vector(&self.unpack(&xm))?;
                Ok(rows.iter().map(|&r| (fp[r] - fm[r]) / (2.0 * h)).collect())
            })
            .collect();
        let mut jm = DMatrix::zeros(rows.len(), cols.len());
        for (k, col) in columns.into_iter().enumerate() {
            let col = col?;
            for (r, v) in col.into_iter().enumerate() {
                jm[(r, k)] = v;
            }
        }
        Ok(jm)
    }

    /// Smallest |ω·ℓ − λ(j)| over the z modes.
    pub fn nearest_small_divisor(&self) -> (f64, Vec<i64>, i64) {
        self.layout
            .zmodes
            .iter()
            .map(|(l, j)| ((self.dot_omega(l) - dispersion_f64(*j as f64)).abs(), l.clone(), *j))
            .fold((f64::INFINITY, vec![], 0), |a, b| if b.0 < a.0 { b } else { a })
    }
}

/// f applied pointwise in x to u given by modes |j| ≤ n_x, projected back.
fn physical_map(u: &[Complex64], nx: i64, degree: i64, f: impl Fn(f64) -> f64) -> Vec<Complex64> {
    let p = (degree.max(2) * nx + 1) as usize;
    let n = (2 * nx + 1) as usize;
    let mut vals = vec![0.0; p];
    for (k, v) in vals.iter_mut().enumerate() {
        let x = 2.0 * PI * k as f64 / p as f64;
        let s: Complex64 = (0..n).map(|m| u[m] * Complex64::from_polar(1.0, (m as i64 - nx) as f64 * x)).sum();
        *v = f(s.re);
    }
    (0..n)
        .map(|m| {
            let j = m as i64 - nx;
            vals.iter()
                .enumerate()
                .map(|(k, v)| v * Complex64::from_polar(1.0, -(j as f64) * 2.0 * PI * k as f64 / p as f64))
                .sum::<Complex64>()
                / p as f64
        })
        .collect()
}

/// `N_n = N₀^{χⁿ}` with χ = 3/2.
pub fn schedule(n0: f64, n: u32) -> f64 {
    n0.powf(1.5f64.powi(n as i32))
}

#[derive(Debug, Clone, Serialize)]
pub struct NewtonConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// N₀ of the projection schedule.
    pub n0: f64,
    pub max_halvings: u32,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { max_iter: 8, tol: 1e-10, n0: 4.0, max_halvings: 8 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NewtonStep {
    pub iteration: usize,
    pub cutoff: i64,
    pub residual: f64,
    pub damping: f64,
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub embedding: TorusEmbedding,
    pub history: Vec<NewtonStep>,
    pub residual: f64,
    pub converged: bool,
}

/// Damped Newton on (Θ, y, z, ζ) with the average of Θ fixed to zero.
pub fn newton_solve(p: &TorusProblem, start: &TorusEmbedding, cfg: &NewtonConfig) -> Result<NewtonResult> {
    let mut x = p.pack(start);
    let mut res = p.residual(&p.unpack(&x))?.sup_norm();
    let mut history = vec![NewtonStep { iteration: 0, cutoff: 0, residual: res, damping: 0.0 }];
    let mut growth = 0;
    for it in 0..cfg.max_iter {
        if res < cfg.tol {
            break;
        }
        let cutoff = (schedule(cfg.n0, it as u32).floor() as i64).min(p.grid.n_phi);
        let lay = &p.layout;
        let cols: Vec<usize> = (0..lay.unknowns.len()).filter(|&k| lay.unknown_size[k] <= cutoff).collect();
        let mut rows: Vec<usize> = (0..lay.equations.len()).filter(|&k| lay.equation_size[k] <= cutoff).collect();
        if rows.len() != cols.len() {
            // ζ has size 0 and no equation of its own; mode shells are square otherwise
            rows.truncate(cols.len());
        }
        let f = p.residual_vector(&p.unpack(&x))?;
        let jm = p.jacobian(&x, &cols, &rows)?;
        let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|&r| -f[r]));
        let lu = jm.clone().lu();
        let dx = match lu.solve(&rhs) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => {
                let sv = jm.singular_values();
                let (d, l, j) = p.nearest_small_divisor();
                return Err(Error::Numerical(format!(
                    "singular linearization: smallest singular value {:.3e}, nearest small divisor {d:.3e} at ℓ={l:?}, j={j}",
                    sv.min()
                )));
            }
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let mut xn = x.clone();
            for (k, &c) in cols.iter().enumerate() {
                xn[c] += lambda * dx[k];
            }
            if let Ok(r) = p.residual(&p.unpack(&xn)) {
                let rn = r.sup_norm();
                if rn < res {
                    accepted = Some((xn, rn));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let (xn, rn) = match accepted {
            Some(v) => v,
            None => {
                // take the full step, tracked by the divergence counter
                let mut xn = x.clone();
                for (k, &c) in cols.iter().enumerate() {
                    xn[c] += dx[k];
                }
                let rn = p.residual(&p.unpack(&xn))?.sup_norm();
                lambda = 1.0;
                (xn, rn)
            }
        };
        if rn > res {
            growth += 1;
            if growth >= 3 {
                return Err(Error::Numerical(format!("Newton diverged: residual {rn:.3e} after {} steps", it + 1)));
            }
        } else {
            growth = 0;
        }
        x = xn;
        res = rn;
        history.push(NewtonStep { iteration: it + 1, cutoff, residual: res, damping: lambda });
    }
    Ok(NewtonResult { embedding: p.unpack(&x), converged: res < cfg.tol, residual: res, history })
}

/// Fourier coefficients u_{ℓ,j} of the torus with j = j̄·ℓ, |ℓ|_∞ ≤ N_φ.
pub fn torus_coefficients(p: &TorusProblem, e: &TorusEmbedding) -> Result<BTreeMap<(Vec<i64>, i64), Complex64>> {
    let nx = p.grid.n_x;
    let npts = p.points();
    let modes: Vec<(Vec<i64>, i64)> = box_modes(p.nu(), p.grid.n_phi)
        .into_iter()
        .map(|l| {
            let j = p.sites.momentum(&l);
            (l, j)
        })
        .filter(|(_, j)| j.abs() <= nx && *j != 0)
        .collect();
    let us: Vec<Result<Vec<Complex64>>> = (0..npts)
        .into_par_iter()
        .map(|q| {
            let idx = p.grid_index(q);
            let phi = p.phi_point(&idx);
            let u = p.action_angle_embed(e, &phi)?;
            Ok(modes.iter().map(|(l, j)| u[(j + nx) as usize] * p.wave(l, &idx).conj()).collect())
        })
        .collect();
    let mut acc = vec![Complex64::default(); modes.len()];
    for u in us {
        for (a, b) in acc.iter_mut().zip(u?) {
            *a += b;
        }
    }
    Ok(modes.into_iter().zip(acc).map(|(m, c)| (m, c / npts as f64)).filter(|(_, c)| c.norm() > 0.0).collect())
}

/// One momentum block of the linearized normal operator ω·∂_φ − J(1 + a₀).
#[derive(Debug, Clone)]
pub struct OperatorBlock {
    /// Offset p = j − j̄·ℓ shared by all modes of the block.
    pub offset: i64,
    pub modes: Vec<(Vec<i64>, i64)>,
    pub matrix: DMatrix<Complex64>,
}

/// Coefficients of a₀ = −(u + f″(u)) on the torus, keyed by (ℓ, j).
pub fn a0_coefficients(p: &TorusProblem, e: &TorusEmbedding) -> Result<BTreeMap<(Vec<i64>, i64), Complex64>> {
    let mut u = torus_coefficients(p, e)?;
    for c in u.values_mut() {
        *c = -*c;
    }
    if !p.density.is_zero() {
        // f″(u) evaluated on the (φ, x) grid
        let nx = p.grid.n_x;
        let npts = p.points();
        let deg = p.density.max_degree() as i64;
        let keys: Vec<(Vec<i64>, i64)> = box_modes(p.nu(), p.grid.n_phi)
            .into_iter()
            .map(|l| {
                let j = p.sites.momentum(&l);
                (l, j)
            })
            .filter(|(_, j)| j.abs() <= 2 * nx)
            .collect();
        let parts: Vec<Result<Vec<Complex64>>> = (0..npts)
            .into_par_iter()
            .map(|q| {
                let idx = p.grid_index(q);
                let phi = p.phi_point(&idx);
                let uu = p.action_angle_embed(e, &phi)?;
                let f2 = physical_map(&uu, nx, deg, |v| p.density.d2(v));
                Ok(keys
                    .iter()
                    .map(|(l, j)| if j.abs() <= nx { f2[(j + nx) as usize] * p.wave(l, &idx).conj() } else { Complex64::default() })
                    .collect())
            })
            .collect();
        let mut acc = vec![Complex64::default(); keys.len()];
        for v in parts {
            for (a, b) in acc.iter_mut().zip(v?) {
                *a += b;
            }
        }
        for (k, c) in keys.into_iter().zip(acc) {
            *u.entry(k).or_default() -= c / npts as f64;
        }
    }
    Ok(u)
}

impl TorusProblem {
    /// Assembles the block of modes (ℓ, p + j̄·ℓ) with normal j.
    pub fn operator_block(&self, a0: &BTreeMap<(Vec<i64>, i64), Complex64>, offset: i64) -> OperatorBlock {
        let nx = self.grid.n_x;
        let modes: Vec<(Vec<i64>, i64)> = box_modes(self.nu(), self.grid.n_phi)
            .into_iter()
            .map(|l| {
                let j = offset + self.sites.momentum(&l);
                (l, j)
            })
            .filter(|(_, j)| j.abs() <= nx && self.sites.is_normal(*j))
            .collect();
        let n = modes.len();
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for (r, (l, j)) in modes.iter().enumerate() {
            let lam = dispersion_f64(*j as f64);
            m[(r, r)] += I * (self.dot_omega(l) - lam);
            for (c, (l2, k)) in modes.iter().enumerate() {
                let dl: Vec<i64> = l.iter().zip(l2).map(|(a, b)| a - b).collect();
                if let Some(v) = a0.get(&(dl, j - k)) {
                    m[(r, c)] -= I * lam * v;
                }
            }
        }
        OperatorBlock { offset, modes, matrix: m }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchedEigenvalue {
    pub ell: Vec<i64>,
    pub j: i64,
    pub re: f64,
    pub im: f64,
    /// Weight of the dominant mode in the normalized eigenvector.
    pub dominance: f64,
}

/// Inverse iteration from the unit vector of `mode`, shifted at its diagonal entry.
pub fn eigenpair_near(block: &OperatorBlock, mode: usize) -> Option<(Complex64, DVector<Complex64>)> {
    let n = block.matrix.nrows();
    let shift = block.matrix[(mode, mode)];
    let mut x = DVector::<Complex64>::zeros(n);
    x[mode] = Complex64::new(1.0, 0.0);
    let mut mu = shift;
    for _ in 0..6 {
        let mut a = block.matrix.clone();
        for k in 0..n {
            a[(k, k)] -= mu + Complex64::new(1e-13, 0.0);
        }
        let y = a.lu().solve(&x)?;
        let norm = y.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        x = y / Complex64::new(norm, 0.0);
        let ax = &block.matrix * &x;
        mu = x.dotc(&ax);
    }
    Some((mu, x))
}

/// Matched eigenvalues of the (0, j) modes for the given normal sites.
pub fn matched_zero_modes(p: &TorusProblem, e: &TorusEmbedding, js: &[i64]) -> Result<Vec<MatchedEigenvalue>> {
    let a0 = a0_coefficients(p, e)?;
    let zero = vec![0; p.nu()];
    js.par_iter()
        .map(|&j| {
            let block = p.operator_block(&a0, j);
            let mode = block
                .modes
                .iter()
                .position(|(l, k)| *l == zero && *k == j)
                .ok_or_else(|| Error::InvalidInput(format!("mode (0,{j}) is not in the truncation")))?;
            let (mu, v) = eigenpair_near(&block, mode).ok_or_else(|| Error::Numerical(format!("inverse iteration failed at j={j}")))?;
            Ok(MatchedEigenvalue { ell: zero.clone(), j, re: mu.re, im: mu.im, dominance: v[mode].norm_sqr() })
        })
        .collect()
}

/// All eigenvalues of the block with offset p, sorted by imaginary part.
pub fn block_spectrum(block: &OperatorBlock) -> Vec<Complex64> {
    if block.matrix.nrows() == 0 {
        return vec![];
    }
    let mut ev: Vec<Complex64> = block.matrix.clone().schur().eigenvalues().map(|v| v.iter().copied().collect()).unwrap_or_default();
    ev.sort_by(|a, b| a.im.total_cmp(&b.im));
    ev
}

/// Spectrum of the whole truncated normal operator, block by block.
pub fn linearized_normal_operator(p: &TorusProblem, e: &TorusEmbedding) -> Result<Vec<(i64, Vec<Complex64>)>> {
    let a0 = a0_coefficients(p, e)?;
    let nx = p.grid.n_x;
    let reach: i64 = p.sites.splus().iter().sum::<i64>() * p.grid.n_phi;
    let offsets: Vec<i64> = (-(nx + reach)..=(nx + reach)).collect();
    Ok(offsets
        .par_iter()
        .map(|&o| (o, block_spectrum(&p.operator_block(&a0, o))))
        .filter(|(_, v)| !v.is_empty())
        .collect())
}

/// ⟨j⟩-free conserved quantities of the truncated flow, normalized by 2π.
pub fn hamiltonian(u: &[Complex64], nx: i64, density: &Density) -> f64 {
    let quad: f64 = u.iter().map(|c| c.norm_sqr()).sum::<f64>() / 2.0;
    let mut cubic = Complex64::default();
    for j1 in -nx..=nx {
        for j2 in -nx..=nx {
            let j3 = -j1 - j2;
            if j3.abs() <= nx {
                cubic += u[(j1 + nx) as usize] * u[(j2 + nx) as usize] * u[(j3 + nx) as usize];
            }
        }
    }
    let mut h = quad - cubic.re / 6.0;
    if !density.is_zero() {
        let fx = physical_map(u, nx, density.max_degree() as i64, |v| density.value(v));
        h += fx[nx as usize].re;
    }
    h
}

/// `K₁ = (1/2)∫(J⁻¹uₓ)u`, i.e. (1/2)Σ j/λ(j) |u_j|².
pub fn momentum(u: &[Complex64], nx: i64) -> f64 {
    (-nx..=nx)
        .filter(|&j| j != 0)
        .map(|j| j as f64 / dispersion_f64(j as f64) * u[(j + nx) as usize].norm_sqr())
        .sum::<f64>()
        / 2.0
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolveConfig {
    pub t_final: f64,
    pub rtol: f64,
    pub atol: f64,
    pub h0: f64,
    pub h_min: f64,
    /// Record every this much time.
    pub sample_dt: f64,
    pub linear_only: bool,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig { t_final: 100.0, rtol: 1e-11, atol: 1e-15, h0: 1e-2, h_min: 1e-10, sample_dt: 1.0, linear_only: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub h: f64,
    pub k1: f64,
    pub sup_norm_u: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub final_state: Vec<Complex64>,
    pub h_drift: f64,
    pub k1_drift: f64,
    pub steps: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn csv(&self) -> String {
        let mut s = String::from("t,H,K1,sup_norm_u\n");
        for r in &self.rows {
            s.push_str(&format!("{:.17e},{:.17e},{:.17e},{:.17e}\n", r.t, r.h, r.k1, r.sup_norm_u));
        }
        s
    }
}

fn sup_x(u: &[Complex64], nx: i64) -> f64 {
    let p = (8 * nx + 1) as usize;
    (0..p)
        .map(|k| {
            let x = 2.0 * PI * k as f64 / p as f64;
            (-nx..=nx).map(|j| u[(j + nx) as usize] * Complex64::from_polar(1.0, j as f64 * x)).sum::<Complex64>().re.abs()
        })
        .fold(0.0, f64::max)
}

/// Integrates u̇ = J∇H(u) on |j| ≤ N_x with an integrating-factor
/// Dormand–Prince 5(4) scheme; the linear part iλ(j) is exact.
pub fn evolve(u0: &[Complex64], nx: i64, density: &Density, cfg: &EvolveConfig) -> Result<Trajectory> {
    let n = (2 * nx + 1) as usize;
    if u0.len() != n {
        return invalid("initial data has the wrong length");
    }
    if u0[nx as usize].norm() > 1e-14 {
        return invalid("initial data must have zero average");
    }
    for j in 1..=nx {
        if (u0[(nx + j) as usize] - u0[(nx - j) as usize].conj()).norm() > 1e-14 * (1.0 + u0[(nx + j) as usize].norm()) {
            return invalid("initial data must be real");
        }
    }
    let lam: Vec<f64> = (0..n).map(|m| dispersion_f64(m as f64 - nx as f64)).collect();
    let nonlinear = |u: &[Complex64]| -> Vec<Complex64> {
        if cfg.linear_only {
            return vec![Complex64::default(); n];
        }
        let mut g = vec![Complex64::default(); n];
        for j in -nx..=nx {
            let mut acc = Complex64::default();
            for k in (-nx).max(j - nx)..=nx.min(j + nx) {
                acc += u[(k + nx) as usize] * u[(j - k + nx) as usize];
            }
            g[(j + nx) as usize] = -0.5 * acc;
        }
        if !density.is_zero() {
            let fx = physical_map(u, nx, density.max_degree() as i64, |v| density.d1(v));
            for k in 0..n {
                g[k] += fx[k];
            }
        }
        (0..n).map(|k| I * lam[k] * g[k]).collect()
    };
    let expo = |u: &[Complex64], tau: f64| -> Vec<Complex64> {
        u.iter().zip(&lam).map(|(c, l)| c * Complex64::from_polar(1.0, l * tau)).collect()
    };
    // w' = e^{−Lτ} N(e^{Lτ} w)
    let g = |tau: f64, w: &[Complex64]| -> Vec<Complex64> { expo(&nonlinear(&expo(w, tau)), -tau) };
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] =
        [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];
    let mut u = u0.to_vec();
    let mut t = 0.0;
    let mut h = cfg.h0;
    let h_start = hamiltonian(&u, nx, density);
    let k_start = momentum(&u, nx);
    let sup0 = sup_x(&u, nx);
    let mut rows = vec![TrajectoryRow { t: 0.0, h: h_start, k1: k_start, sup_norm_u: sup0 }];
    let mut next_sample = cfg.sample_dt;
    let (mut steps, mut rejected) = (0, 0);
    while t < cfg.t_final {
        let step = h.min(cfg.t_final - t).min(next_sample - t);
        let mut k: Vec<Vec<Complex64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let mut w = u.clone();
            for (r, kr) in k.iter().enumerate() {
                if A[s][r] != 0.0 {
                    for (wi, ki) in w.iter_mut().zip(kr) {
                        *wi += step * A[s][r] * ki;
                    }
                }
            }
            k.push(g(C[s] * step, &w));
        }
        let mut w5 = u.clone();
        let mut err = 0.0f64;
        for i in 0..n {
            let mut d5 = Complex64::default();
            let mut d4 = Complex64::default();
            for s in 0..7 {
                d5 += B5[s] * k[s][i];
                d4 += B4[s] * k[s][i];
            }
            w5[i] += step * d5;
            let sc = cfg.atol + cfg.rtol * u[i].norm().max(w5[i].norm());
            err = err.max((step * (d5 - d4)).norm() / sc);
        }
        if err <= 1.0 || step <= cfg.h_min {
            if err > 1.0 {
                return Err(Error::Numerical(format!("step size fell below {} at t = {t}", cfg.h_min)));
            }
            u = expo(&w5, step);
            t += step;
            steps += 1;
            if u.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) || sup_x(&u, nx) > 1e3 * sup0.max(1e-300) {
                return Err(Error::Numerical(format!("blow-up detected at t = {t}")));
            }
            if t >= next_sample - 1e-12 || t >= cfg.t_final {
                rows.push(TrajectoryRow { t, h: hamiltonian(&u, nx, density), k1: momentum(&u, nx), sup_norm_u: sup_x(&u, nx) });
                next_sample += cfg.sample_dt;
            }
        } else {
            rejected += 1;
            if rejected > 100_000 {
                return Err(Error::Numerical("step rejection cascade".into()));
            }
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (step * fac).max(cfg.h_min);
    }
    let rel = |a: f64, b: f64| if b == 0.0 { (a - b).abs() } else { ((a - b) / b).abs() };
    let h_drift = rows.iter().map(|r| rel(r.h, h_start)).fold(0.0, f64::max);
    let k1_drift = rows.iter().map(|r| rel(r.k1, k_start)).fold(0.0, f64::max);
    Ok(Trajectory { rows, final_state: u, h_drift, k1_drift, steps, rejected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twist::twist_matrix;

    fn s67() -> TangentialSet {
        TangentialSet::new(&[6, 7]).unwrap()
    }

    fn problem(eps: f64, nphi: i64) -> TorusProblem {
        let s = s67();
        let tw = twist_matrix(&s).unwrap();
        let xi = vec![1.3, 1.7];
        let omega = tw.frequency(&xi, eps).unwrap();
        let grid = TruncationGrid::new(&s, 24, nphi).unwrap();
        TorusProblem::new(&s, &xi, eps, 1.05, &omega, grid, Density::default()).unwrap()
    }

    #[test]
    fn schedule_values() {
        assert_eq!(schedule(4.0, 0), 4.0);
        assert!((schedule(4.0, 1) - 8.0).abs() < 1e-12);
        assert_eq!(schedule(4.0, 2).floor(), 22.0);
    }

    #[test]
    fn grid_invariants() {
        let s = s67();
        assert!(TruncationGrid::new(&s, 12, 4).is_err());
        let g = TruncationGrid::new(&s, 24, 4).unwrap();
        assert!(g.m as i64 >= 3 * g.n_phi + 1);
        assert!(Density::new(vec![(5, 1.0)]).is_err());
    }

    #[test]
    fn trivial_embedding_is_vbar() {
        let p = problem(1e-3, 4);
        let e = TorusEmbedding::trivial(2);
        let phi = [0.3, -1.1];
        let u = p.action_angle_embed(&e, &phi).unwrap();
        let nx = 24;
        for (i, &j) in [6i64, 7].iter().enumerate() {
            let c = u[(j + nx) as usize];
            assert!((c.norm() - 1e-3 * p.xi[i].sqrt()).abs() < 1e-15);
            assert!((c.arg() - phi[i]).abs() < 1e-12);
            assert!((u[(nx - j) as usize] - c.conj()).norm() < 1e-18);
        }
        // Parseval: ∫|u|²/2π = 2ε²Σξ_j
        let l2: f64 = u.iter().map(|c| c.norm_sqr()).sum();
        assert!((l2 - 2e-6 * 3.0).abs() < 1e-18);
    }

    #[test]
    fn linear_problem_has_zero_residual() {
        let s = s67();
        let grid = TruncationGrid::new(&s, 24, 4).unwrap();
        let omega: Vec<f64> = crate::sites::linear_frequencies_f64(&s);
        let mut p = TorusProblem::new(&s, &[1.3, 1.7], 1e-3, 1.05, &omega, grid, Density::default()).unwrap();
        p.linear_only = true;
        let r = p.residual(&TorusEmbedding::trivial(2)).unwrap();
        assert!(r.sup_norm() < 1e-13, "{}", r.sup_norm());
    }

    #[test]
    fn linear_problem_converges_in_one_step() {
        let s = s67();
        let grid = TruncationGrid::new(&s, 24, 4).unwrap();
        let omega: Vec<f64> = crate::sites::linear_frequencies_f64(&s);
        let mut p = TorusProblem::new(&s, &[1.3, 1.7], 1e-3, 1.05, &omega, grid, Density::default()).unwrap();
        p.linear_only = true;
        let mut start = TorusEmbedding::trivial(2);
        start.z.insert((vec![1, 1], 13), Complex64::new(1e-3, 2e-4));
        start.y[0].insert(vec![0, 0], Complex64::new(1e-3, 0.0));
        let cfg = NewtonConfig { n0: 4.0, ..Default::default() };
        let r = newton_solve(&p, &start, &cfg).unwrap();
        assert!(r.converged);
        assert_eq!(r.history.len(), 2);
    }

    #[test]
    fn plane_wave_solves_linear_flow() {
        let nx = 10;
        let mut u = vec![Complex64::default(); 21];
        u[(nx + 3) as usize] = Complex64::new(0.1, 0.0);
        u[(nx - 3) as usize] = Complex64::new(0.1, 0.0);
        let cfg = EvolveConfig { t_final: 5.0, linear_only: true, ..Default::default() };
        let tr = evolve(&u, nx, &Density::default(), &cfg).unwrap();
        let expect = Complex64::from_polar(0.1, dispersion_f64(3.0) * 5.0);
        assert!((tr.final_state[(nx + 3) as usize] - expect).norm() < 1e-14);
        assert!(tr.h_drift < 1e-14 && tr.k1_drift < 1e-14);
    }

    #[test]
    fn nonlinear_flow_conserves() {
        let nx = 12;
        let mut u = vec![Complex64::default(); 25];
        for (j, a) in [(2i64, 0.05), (3, 0.03), (5, 0.02)] {
            u[(nx + j) as usize] = Complex64::from_polar(a, 0.3 * j as f64);
            u[(nx - j) as usize] = u[(nx + j) as usize].conj();
        }
        let cfg = EvolveConfig { t_final: 20.0, ..Default::default() };
        let tr = evolve(&u, nx, &Density::default(), &cfg).unwrap();
        assert!(tr.h_drift < 1e-9, "{}", tr.h_drift);
        assert!(tr.k1_drift < 1e-9, "{}", tr.k1_drift);
    }

    #[test]
    fn zero_eps_spectrum() {
        let p = problem(1e-3, 3);
        let a0 = BTreeMap::new();
        let block = p.operator_block(&a0, 9);
        for (r, (l, j)) in block.modes.iter().enumerate() {
            let expect = I * (p.dot_omega(l) - dispersion_f64(*j as f64));
            assert!((block.matrix[(r, r)] - expect).norm() < 1e-14);
        }
        let ev = block_spectrum(&block);
        assert!(ev.iter().all(|c| c.re.abs() < 1e-12));
    }

    #[test]
    fn solve_small_problem() {
        let p = problem(1e-3, 4);
        let r = newton_solve(&p, &TorusEmbedding::trivial(2), &NewtonConfig::default()).unwrap();
        assert!(r.converged, "{:?}", r.history);
        assert!(r.embedding.zeta.iter().all(|z| z.abs() < 1e-9));
        assert!(r.embedding.is_real());
        // φ-translation of a solution is again a solution
        let mut shifted = r.embedding.clone();
        let c = [0.4, -0.9];
        let rot = |l: &[i64]| Complex64::from_polar(1.0, l[0] as f64 * c[0] + l[1] as f64 * c[1]);
        for f in shifted.theta.iter_mut().chain(shifted.y.iter_mut()) {
            for (l, v) in f.iter_mut() {
                *v *= rot(l);
            }
        }
        for ((l, _), v) in shifted.z.iter_mut() {
            *v *= rot(l);
        }
        // θ = φ + Θ picks up the shift in its mean
        for i in 0..2 {
            *shifted.theta[i].entry(vec![0, 0]).or_default() += c[i];
        }
        let a = p.residual(&shifted).unwrap().sup_norm();
        assert!(a < 1e-10, "{a}");
        let ck = Checkpoint::from_embedding(&p, &r.embedding);
        assert_eq!(ck.embedding(), r.embedding);
    }
}

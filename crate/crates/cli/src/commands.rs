use crate::config::{Model, RunConfig};
use crate::output::{f, sha256_hex, Check, Output};
use dpkam::error::Error;
use dpkam::measure::{estimate_excluded_measure, in_g0, Estimator, Family, FrequencyModel, MelnikovConfig};
use dpkam::polyham::HomPoly;
use dpkam::scalar::{fmt_rational, to_f64};
use dpkam::spectrum::{c_of_xi, c_via_f2, identification_check, kappa_decay_scan, min_divisor_scan, EigenModel};
use dpkam::torus::{
    evolve as integrate, matched_zero_modes, newton_solve, Checkpoint, NewtonConfig, TorusEmbedding, TorusProblem,
    TruncationGrid,
};
use dpkam::twist::{nondegeneracy_report, twist_matrix, NondegConfig};
use dpkam::wbnf::{enumerate_h2_resonances, h40_closed_form, h40_resonant_sum, run_wbnf, DEFAULT_MONOMIAL_BUDGET};
use serde_json::json;
use std::fmt;

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub model: &'a Model,
    pub budget: Option<u64>,
}

#[derive(Debug)]
pub enum Reason {
    Core(Error),
    Io(std::io::Error),
}

impl fmt::Display for Reason {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reason::Core(e) => write!(fm, "{e}"),
            Reason::Io(e) => write!(fm, "i/o: {e}"),
        }
    }
}

/// A failed run with whatever checks completed before the failure.
pub struct Failure {
    pub error: Reason,
    pub checks: Vec<Check>,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { error: Reason::Core(e), checks: vec![] }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { error: Reason::Io(e), checks: vec![] }
    }
}

type Run = Result<Vec<Check>, Failure>;

fn with_checks(checks: &[Check]) -> impl FnOnce(Failure) -> Failure + '_ {
    move |mut fl| {
        fl.checks.splice(0..0, checks.iter().cloned());
        fl
    }
}

pub fn resonances(ctx: &Context, out: &mut Output) -> Run {
    let rc = &ctx.cfg.resonances;
    let budget = ctx.budget.unwrap_or(1_000_000_000);
    let mut checks = Vec::new();
    let mut list = String::from("order,indices,m_resonant_up_to\n");
    let mut classes = String::from("order,indices,trivial,multiplicity,m_resonant_up_to\n");
    for &order in &rc.orders {
        let found = match enumerate_h2_resonances(order, rc.bound, rc.m_cap, budget) {
            Ok(v) => v,
            Err(e) => {
                // partial results are what was written for earlier orders
                out.csv("resonances.csv", &list)?;
                out.csv("classification.csv", &classes)?;
                return Err(Failure { error: Reason::Core(e), checks });
            }
        };
        let mut nontrivial_m = 0;
        for t in &found {
            list.push_str(&t.csv_row());
            list.push('\n');
            let idx: Vec<String> = t.indices.iter().map(|j| j.to_string()).collect();
            classes.push_str(&format!("{},{},{},{},{}\n", order, idx.join(" "), t.trivial, t.multiplicity, t.m_resonant_up_to));
            if !t.trivial && t.m_resonant_up_to >= rc.m_cap {
                nontrivial_m += 1;
            }
        }
        checks.push(Check::new(
            &format!("no_nontrivial_m_resonances_order{order}"),
            nontrivial_m == 0,
            Some(nontrivial_m as f64),
            format!("{} H²-resonances, {nontrivial_m} nontrivial M={} resonances (bound {})", found.len(), rc.m_cap, rc.bound),
        ));
    }
    out.csv("resonances.csv", &list)?;
    out.csv("classification.csv", &classes)?;
    Ok(checks)
}

fn same(a: &HomPoly, b: &HomPoly) -> Result<bool, Error> {
    Ok(a.sub(b)?.is_empty())
}

pub fn wbnf(ctx: &Context, out: &mut Output) -> Run {
    let s = &ctx.model.sites;
    let r = run_wbnf(s, ctx.cfg.wbnf.max_order, ctx.budget.unwrap_or(DEFAULT_MONOMIAL_BUDGET))?;
    for (d, p) in &r.normal_form {
        out.text(&format!("normal_form_z0_deg{d}.txt"), &p.to_text())?;
    }
    for (d, p) in &r.residual_z1 {
        out.text(&format!("normal_form_z1_deg{d}.txt"), &p.to_text())?;
    }
    let mut norms = String::from("degree,generator_l1_norm,terms\n");
    for (d, g) in &r.generators {
        norms.push_str(&format!("{d},{},{}\n", f(g.l1_norm()), g.len()));
    }
    out.csv("generators.csv", &norms)?;
    let mut checks = Vec::new();
    for d in [3usize, 5] {
        if d <= r.max_degree {
            let z = r.normal_form.get(&d).map_or(0, |p| p.len()) + r.residual_z1.get(&d).map_or(0, |p| p.len());
            checks.push(Check::new(&format!("z{d}_vanishes"), z == 0, Some(z as f64), format!("{z} terms at degree {d}")));
        }
    }
    if r.max_degree >= 4 {
        let z41 = r.residual_z1.get(&4).map_or(0, |p| p.len());
        checks.push(Check::new("z41_vanishes", z41 == 0, Some(z41 as f64), format!("{z41} terms")));
        let z40 = r.z40();
        let ok = same(&z40, &h40_resonant_sum(s)?)?;
        checks.push(Check::new("z40_equals_resonant_sum", ok, None, "Z(4,0) against the resonant average of H4"));
        let ok = same(&z40, &h40_closed_form(s)?)?;
        checks.push(Check::new("z40_equals_closed_form", ok, None, "Z(4,0) against the displayed closed form"));
    }
    Ok(checks)
}

pub fn twist(ctx: &Context, out: &mut Output) -> Run {
    let s = &ctx.model.sites;
    let t = twist_matrix(s)?;
    let tc = &ctx.cfg.twist;
    let r = ctx.cfg.model.r_wave_packet.as_deref().and_then(dpkam::scalar::parse_rational).map_or(0.2, |r| to_f64(&r));
    let nc = NondegConfig { r, rank_one_threshold: tc.rank_one_threshold, delta: tc.delta, ell_bound: tc.ell_bound, j_bound: tc.j_bound };
    let rep = nondegeneracy_report(s, &nc)?;
    let a: Vec<Vec<String>> = t.a.iter().map(|row| row.iter().map(fmt_rational).collect()).collect();
    out.json(
        "twist.json",
        &json!({
            "splus": s.splus(),
            "det_a": fmt_rational(&t.det_a),
            "det_a_f64": f(t.det_a_f64),
            "a": a,
            "omega_bar": t.omega_bar.iter().map(fmt_rational).collect::<Vec<_>>(),
        }),
    )?;
    out.json("nondegeneracy.json", &rep)?;
    let mut checks = vec![Check::new("det_a_nonzero", t.det_a_f64 != 0.0, Some(t.det_a_f64), format!("det 𝔸 = {}", fmt_rational(&t.det_a)))];
    for rec in &rep.records {
        checks.push(Check::new(&rec.check, rec.pass, Some(rec.value), format!("threshold {}, witness {}", rec.threshold, rec.witness)));
    }
    Ok(checks)
}

pub fn spectrum(ctx: &Context, out: &mut Output) -> Run {
    let s = &ctx.model.sites;
    let xi = &ctx.model.xi;
    let sc = &ctx.cfg.spectrum;
    let mut rows = String::from("j,lhs,rhs,equal\n");
    let mut all = true;
    for j in sc.j_min..=sc.j_max {
        if !s.is_normal(j) {
            continue;
        }
        let id = identification_check(s, xi, j)?;
        all &= id.equal;
        let lhs = if fmt_rational(&id.lhs.im) == "0" { fmt_rational(&id.lhs.re) } else { format!("{}+{}i", fmt_rational(&id.lhs.re), fmt_rational(&id.lhs.im)) };
        rows.push_str(&format!("{j},{lhs},{},{}\n", fmt_rational(&id.rhs), id.equal));
    }
    out.csv("identification.csv", &rows)?;
    let em = EigenModel::new(s, xi, ctx.model.scaling)?;
    out.csv("eigenvalues.csv", &em.csv(sc.j_min..=sc.j_max.max(sc.j_min))?)?;
    let c1 = c_of_xi(s, xi)?;
    let c2 = c_via_f2(s, xi)?;
    let (kmax, kwit) = kappa_decay_scan(s, xi, sc.kappa_bound)?;
    let scan = min_divisor_scan(s, sc.divisor_j_bound)?;
    out.json(
        "spectrum.json",
        &json!({
            "c": fmt_rational(&c1),
            "c_via_f2": fmt_rational(&c2),
            "max_abs_j_kappa": fmt_rational(&kmax),
            "max_abs_j_kappa_at": kwit,
            "min_divisor": fmt_rational(&scan.min),
            "min_divisor_f64": f(scan.min_f64),
            "min_divisor_witness": { "ell": scan.witness_ell, "j": scan.witness_j, "jp": scan.witness_jp },
            "divisors_checked": scan.count,
            "closed_form_mismatches": scan.closed_form_mismatches,
        }),
    )?;
    Ok(vec![
        Check::new("identification_sweep", all, None, format!("j in {}..={}", sc.j_min, sc.j_max)),
        Check::new("c_cross_check", c1 == c2, Some(to_f64(&c1)), format!("c = {}", fmt_rational(&c1))),
        Check::new("kappa_bounded", kwit.abs() < sc.kappa_bound, Some(to_f64(&kmax)), format!("max |jκ_j| at j = {kwit}")),
        Check::new(
            "divisor_closed_forms",
            scan.closed_form_mismatches == 0,
            Some(scan.closed_form_mismatches as f64),
            format!("{} divisors up to |j| = {}", scan.count, sc.divisor_j_bound),
        ),
        Check::new("min_divisor_positive", scan.min_f64 > 0.0, Some(scan.min_f64), "smallest nonzero |δ|"),
    ])
}

fn estimator(name: &str) -> Result<Estimator, Error> {
    match name {
        "hit_or_miss" => Ok(Estimator::HitOrMiss),
        "conditional" => Ok(Estimator::Conditional),
        _ => Err(Error::InvalidInput(format!("measure.estimator: unknown estimator {name}"))),
    }
}

pub fn measure(ctx: &Context, out: &mut Output) -> Run {
    let mc = &ctx.cfg.measure;
    let family: Family = mc.family.parse()?;
    let est = estimator(&mc.estimator)?;
    let mut cfg = MelnikovConfig::new(ctx.model.scaling)?;
    cfg.ell_max = mc.ell_max;
    cfg.inclusion_c = mc.inclusion_c;
    cfg.c_g1 = mc.c_g1;
    let rep = estimate_excluded_measure(&ctx.model.sites, &cfg, family, &mc.epsilons, mc.samples, mc.seed, est)?;
    out.csv("measure.csv", &rep.csv())?;
    out.json(
        "measure.json",
        &json!({
            "family": rep.family,
            "estimator": rep.estimator,
            "samples": rep.samples,
            "seed": rep.seed,
            "epsilon": rep.rows.iter().map(|r| f(r.epsilon)).collect::<Vec<_>>(),
            "fraction": rep.rows.iter().map(|r| f(r.fraction)).collect::<Vec<_>>(),
            "stderr": rep.rows.iter().map(|r| f(r.stderr)).collect::<Vec<_>>(),
            "fitted_exponent": rep.fitted_exponent.map(f),
            "exponent_stderr": rep.exponent_stderr.map(f),
            "expected_exponent": f(rep.expected_exponent),
        }),
    )?;
    let (pass, detail) = match (rep.fitted_exponent, rep.exponent_stderr) {
        (Some(e), Some(se)) => ((e - rep.expected_exponent).abs() <= 3.0 * se, format!("slope {e:.4} ± {se:.4}, expected {:.4}", rep.expected_exponent)),
        _ => (false, "no slope: some fraction is zero".to_string()),
    };
    Ok(vec![Check::new("measure_exponent", pass, rep.fitted_exponent, detail)])
}

struct Solved {
    problem: TorusProblem,
    embedding: TorusEmbedding,
    checks: Vec<Check>,
}

fn torus_problem(ctx: &Context) -> Result<(TorusProblem, Vec<Check>), Failure> {
    let m = ctx.model;
    let eps = m.scaling.epsilon;
    let t = twist_matrix(&m.sites)?;
    let omega = t.frequency(&m.xi_f64, eps)?;
    let fm = FrequencyModel::new(&m.sites, eps)?;
    let mcfg = MelnikovConfig::new(m.scaling)?;
    let (g0, g1) = in_g0(&omega, &fm, &mcfg)?;
    let checks = vec![Check::new("omega_in_g0", g0 && g1, None, format!("𝒢₀⁽⁰⁾: {g0}, 𝒢₀⁽¹⁾: {g1}"))];
    let tc = &ctx.cfg.truncation;
    let grid = TruncationGrid::new(&m.sites, tc.n_x, tc.n_phi)?;
    let p = TorusProblem::new(&m.sites, &m.xi_f64, eps, m.scaling.b, &omega, grid, m.density.clone())?;
    Ok((p, checks))
}

fn solve_torus(ctx: &Context, out: &mut Output) -> Result<Solved, Failure> {
    let (p, mut checks) = torus_problem(ctx)?;
    let sc = &ctx.cfg.solve;
    let nc = NewtonConfig { max_iter: sc.max_iter, tol: sc.tol, n0: sc.n0, ..Default::default() };
    let r = newton_solve(&p, &TorusEmbedding::trivial(p.nu()), &nc).map_err(|e| with_checks(&checks)(e.into()))?;
    let mut csv = String::from("iteration,cutoff,residual,damping\n");
    for h in &r.history {
        csv.push_str(&format!("{},{},{},{}\n", h.iteration, h.cutoff, f(h.residual), f(h.damping)));
    }
    out.csv("newton.csv", &csv)?;
    let ck = Checkpoint::from_embedding(&p, &r.embedding);
    let content_hash = sha256_hex(&serde_json::to_vec(&ck).expect("checkpoint serializes"));
    out.json("checkpoint.json", &json!({ "content_hash": content_hash, "checkpoint": ck }))?;
    let iters = r.history.len() - 1;
    let zeta = r.embedding.zeta.iter().map(|z| z.abs()).fold(0.0, f64::max);
    checks.push(Check::new("newton_converged", r.converged, Some(r.residual), format!("residual {:.3e} after {iters} iterations", r.residual)));
    checks.push(Check::new("zeta_small", zeta < sc.zeta_tol, Some(zeta), format!("|ζ| = {zeta:.3e}")));
    Ok(Solved { problem: p, embedding: r.embedding, checks })
}

pub fn solve(ctx: &Context, out: &mut Output) -> Run {
    let sv = solve_torus(ctx, out)?;
    let mut checks = sv.checks;
    if ctx.cfg.solve.spectrum {
        let p = &sv.problem;
        let reach = *p.sites.splus().last().unwrap();
        let js: Vec<i64> = (-(p.grid.n_x - reach)..=(p.grid.n_x - reach)).filter(|&j| j != 0 && p.sites.is_normal(j)).collect();
        let m = matched_zero_modes(p, &sv.embedding, &js).map_err(|e| with_checks(&checks)(e.into()))?;
        let em = EigenModel::new(&p.sites, &ctx.model.xi, ctx.model.scaling)?;
        let mut csv = String::from("j,re,im,minus_d0,deviation,dominance\n");
        let mut worst_re = 0.0f64;
        for x in &m {
            let d = em.d0(x.j)?;
            let dev = ((x.im + d).powi(2) + x.re.powi(2)).sqrt();
            worst_re = worst_re.max(x.re.abs());
            csv.push_str(&format!("{},{},{},{},{},{}\n", x.j, f(x.re), f(x.im), f(-d), f(dev), f(x.dominance)));
        }
        out.csv("normal_spectrum.csv", &csv)?;
        checks.push(Check::new("matched_real_parts", worst_re < 1e-10, Some(worst_re), "largest |Re μ| over matched modes"));
    }
    Ok(checks)
}

pub fn evolve(ctx: &Context, out: &mut Output) -> Run {
    let ec = &ctx.cfg.evolve;
    let (p, emb, mut checks) = match &ec.checkpoint {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("evolve.checkpoint: {e}")))?;
            let ck: Checkpoint = serde_json::from_value(v["checkpoint"].clone()).map_err(|e| Error::InvalidInput(format!("evolve.checkpoint: {e}")))?;
            let (p, checks) = torus_problem(ctx)?;
            if ck.grid != p.grid || ck.splus != p.sites.splus() || ck.epsilon != p.eps {
                return Err(Error::InvalidInput("evolve.checkpoint does not match the model".into()).into());
            }
            (p, ck.embedding(), checks)
        }
        None => {
            let sv = solve_torus(ctx, out)?;
            (sv.problem, sv.embedding, sv.checks)
        }
    };
    let phi0 = vec![0.0; p.nu()];
    let u0 = p.action_angle_embed(&emb, &phi0)?;
    let cfg = dpkam::torus::EvolveConfig { t_final: ec.t_final, sample_dt: ec.sample_dt, rtol: ec.rtol, ..Default::default() };
    let tr = integrate(&u0, p.grid.n_x, &p.density, &cfg).map_err(|e| with_checks(&checks)(e.into()))?;
    out.csv("trajectory.csv", &tr.csv())?;
    let phit: Vec<f64> = p.omega.iter().map(|w| w * ec.t_final).collect();
    let ut = p.action_angle_embed(&emb, &phit)?;
    let dist: f64 = ut.iter().zip(&tr.final_state).map(|(a, b)| (a - b).norm()).sum();
    out.json(
        "evolve.json",
        &json!({
            "t_final": f(ec.t_final),
            "h_drift": f(tr.h_drift),
            "k1_drift": f(tr.k1_drift),
            "steps": tr.steps,
            "rejected": tr.rejected,
            "distance_to_torus": f(dist),
        }),
    )?;
    checks.push(Check::new("h_drift", tr.h_drift < ec.drift_tol, Some(tr.h_drift), format!("relative drift {:.3e}", tr.h_drift)));
    checks.push(Check::new("k1_drift", tr.k1_drift < ec.drift_tol, Some(tr.k1_drift), format!("relative drift {:.3e}", tr.k1_drift)));
    Ok(checks)
}

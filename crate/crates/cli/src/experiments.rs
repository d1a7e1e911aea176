//! Experiment registry. Each experiment declares its parameters with defaults;
//! anything not declared is rejected before the run starts.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use tvstab::certify::{self, EnsembleSpec, FalsifySpec, FitOpts, IcSpec, Property};
use tvstab::compfun::ComparisonFn;
use tvstab::evolution::{classify_stability, propagate, ClassifyOpts, ExpFit, GeneratorSpec};
use tvstab::ineq::{forced_comparison_bound, gronwall_linear, ComparisonOpts};
use tvstab::lyapunov::{check_dissipation, random_stable_ltv, DissipationForm, DissipationParams, LyapOpts, LyapunovFn, QuadraticCertificate};
use tvstab::mildsolve::{solve_mild, InputNorm, InputSignal, SemilinearSystem, SolveOpts, SCHEME_ORDER};
use tvstab::pde_examples::{self, build_example, grid_inequality, heat_threshold_scan, ks_threshold_scan, smallgain_check, ExampleName, Grid1D, GridIneq, HeatScanOpts, InterconnectionSpec};
use tvstab::timefn::TimeFn;
use tvstab::{rng, Error, Result};

use crate::config::{ParamKind, Resolved};

#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub key: &'static str,
    pub kind: ParamKind,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn p(key: &'static str, kind: ParamKind, default: &'static str, doc: &'static str) -> ParamSpec {
    ParamSpec { key, kind, default, doc }
}

use ParamKind::{Float as F, FloatList as L, Int as I, Text as T};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Check { name: name.to_string(), pass, detail }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// contents of results.csv
    pub results: String,
    /// extra artifacts: (file name, contents); two-column plot data uses `plot_*.csv`
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub notes: Vec<(String, String)>,
}

impl Outcome {
    fn note(&mut self, k: &str, v: impl ToString) {
        self.notes.push((k.to_string(), v.to_string()));
    }

    fn plot(&mut self, name: &str, cols: (&str, &str), xy: impl IntoIterator<Item = (f64, f64)>) {
        let mut s = format!("{},{}\n", cols.0, cols.1);
        for (x, y) in xy {
            let _ = writeln!(s, "{x},{y}");
        }
        self.files.push((format!("plot_{name}.csv"), s));
    }
}

pub struct Experiment {
    pub name: &'static str,
    pub description: &'static str,
    pub params: Vec<ParamSpec>,
    pub run: fn(&Resolved) -> Result<Outcome>,
}

impl Experiment {
    pub fn param(&self, key: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.key == key)
    }
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn stream(cfg: &Resolved) -> rand_chacha::ChaCha8Rng {
    rng::stream(cfg.seed, rng::label(&cfg.experiment))
}

fn one() -> DVector<f64> {
    DVector::from_element(1, 1.0)
}

pub fn registry() -> Vec<Experiment> {
    vec![
        Experiment {
            name: "a1_exactness",
            description: "scalar example A1: W(k+1,k) and W(k+1,k+1/2) against closed forms",
            params: vec![p("k_max", I, "10", "largest k"), p("tol", F, "1e-9", "absolute error bound")],
            run: a1_exactness,
        },
        Experiment {
            name: "a1_attractivity",
            description: "scalar example A1: measured uniform attractivity time T(eps) against m+1",
            params: vec![p("eps", L, "0.1,0.01", "attractivity levels"), p("horizon", F, "40", "largest lag sampled")],
            run: a1_attractivity,
        },
        Experiment {
            name: "lyapunov_residual",
            description: "residual of the differential Lyapunov equality for P(t) on random stable LTV systems",
            params: vec![
                p("systems", I, "20", "number of random systems"),
                p("h", F, "1e-3", "central-difference step"),
                p("tol", F, "1e-4", "residual bound at h"),
                p("min_ratio", F, "3", "required residual reduction when h halves"),
                p("quad_step", F, "5e-4", "Simpson step for P"),
                p("tail_tol", F, "1e-12", "truncation tolerance for the integral tail"),
            ],
            run: lyapunov_residual,
        },
        Experiment {
            name: "heat_threshold",
            description: "heat equation with reaction r: certify/falsify boundary in r+omega against nu*pi^2/ell^2",
            params: vec![
                p("nu", F, "1", "diffusivity"),
                p("ell", F, "pi", "domain length"),
                p("n", I, "64", "interior grid points"),
                p("horizon", F, "50", "absolute horizon of each ensemble"),
                p("params", L, "0.5,0.8,0.9,0.95,1.05,1.1,1.2,1.5", "scanned values of r+omega"),
                p("omega_fraction", F, "0", "omega as a fraction of r+omega"),
                p("bisection_steps", I, "10", "refinement steps at the verdict flip"),
                p("falsify", I, "0", "1 runs the falsifier at every scanned value"),
                p("rel_tol", F, "0.05", "allowed relative distance of the boundary from the analytic value"),
            ],
            run: heat_threshold,
        },
        Experiment {
            name: "ks_threshold",
            description: "clamped d^4 + rho d^2 on [0,1]: sign change of the smallest eigenvalue against 4 pi^2",
            params: vec![
                p("n", I, "256", "interior grid points"),
                p("rho_max", F, "80", "largest rho scanned"),
                p("steps", I, "16", "scan intervals"),
                p("rel_tol", F, "0.01", "allowed relative distance of the crossing from 4 pi^2"),
            ],
            run: ks_threshold,
        },
        Experiment {
            name: "ks_decay",
            description: "semi-discretized Kuramoto-Sivashinsky type example below threshold: zero-input decay",
            params: vec![
                p("rho", F, "9.869604401089358", "anti-diffusion coefficient"),
                p("n", I, "32", "interior grid points"),
                p("t0", F, "0.5", "initial time"),
                p("lag", F, "1", "simulated lag"),
                p("amplitude", F, "0.1", "initial amplitude"),
                p("step", F, "1e-3", "solver step"),
                p("factor", F, "1e-3", "required final-to-initial norm ratio"),
            ],
            run: ks_decay,
        },
        Experiment {
            name: "noncoercive_dissipation",
            description: "dissipation inequality for the non-coercive quadratic Lyapunov function along forced LTV trajectories",
            params: vec![
                p("systems", I, "10", "number of random systems"),
                p("horizon", F, "4", "trajectory lag"),
                p("points", I, "8", "sampled points per trajectory"),
                p("min_fraction", F, "0.99", "required fraction of points where the bound holds"),
            ],
            run: noncoercive_dissipation,
        },
        Experiment {
            name: "comparison_lemma",
            description: "forced scalar comparison y' = -theta(y) + mu(t) against beta(y0,t) + 2 int mu",
            params: vec![p("instances", I, "100", "random instances")],
            run: comparison_lemma,
        },
        Experiment {
            name: "gronwall_bound",
            description: "Gronwall bound for y' <= nu(t) y + v(t) with sign-indefinite nu against RK4",
            params: vec![p("instances", I, "50", "random instances"), p("horizon", F, "5", "time horizon"), p("nodes", I, "101", "output nodes")],
            run: gronwall_bound,
        },
        Experiment {
            name: "grid_inequalities",
            description: "Friedrichs, one-sided Friedrichs, Agmon and endpoint inequalities on random grid functions",
            params: vec![p("samples", I, "50", "random functions per inequality"), p("n", I, "400", "interior grid points"), p("length", F, "1", "domain length")],
            run: grid_inequalities,
        },
        Experiment {
            name: "smallgain_rd",
            description: "interconnected reaction-diffusion example: small-gain condition, composite gain kappa and ISpS certificate",
            params: vec![
                p("c1", F, "2", "first coupling constant"),
                p("c2", F, "2", "second coupling constant"),
                p("l", F, "pi", "domain length"),
                p("zeta", F, "0.5", "small-gain margin"),
                p("points", I, "100", "kappa sample points"),
                p("s_step", F, "0.05", "kappa grid spacing"),
                p("kappa_tol", F, "1e-6", "agreement with the closed form"),
                p("certify", I, "1", "1 also certifies ISpS on a simulated ensemble"),
                p("n", I, "12", "interior grid points per component"),
                p("horizon", F, "3.5", "absolute ensemble horizon"),
                p("step", F, "1e-3", "solver step"),
            ],
            run: smallgain_rd,
        },
        Experiment {
            name: "equivalence_audit",
            description: "linear test suite: ISS, 0-UGAS, iISS and exponential stability agree",
            params: vec![],
            run: equivalence_audit,
        },
        Experiment {
            name: "mild_convergence",
            description: "mild solver on x' = -x + 1: default-step error and observed order",
            params: vec![
                p("steps", L, "0.1,0.05,0.025,0.0125,0.00625", "step sequence"),
                p("tol", F, "1e-4", "error bound at the default step"),
                p("order_tol", F, "0.3", "allowed deviation from the scheme order"),
            ],
            run: mild_convergence,
        },
        Experiment {
            name: "certify_example",
            description: "ensemble certificate for a catalog example and property",
            params: vec![
                p("example", T, "heat", "catalog key"),
                p("example_params", L, "1,pi,0.3,0.1", "positional catalog parameters"),
                p("n", I, "24", "grid size"),
                p("property", T, "ISS", "property name"),
                p("expect", T, "certified", "certified or falsified"),
                p("ics", I, "8", "initial states"),
                p("r_max", F, "10", "largest initial norm"),
                p("horizon", F, "25", "absolute ensemble horizon"),
            ],
            run: certify_example,
        },
        Experiment {
            name: "falsify_example",
            description: "witness search against exponential ISS envelopes for a catalog example",
            params: vec![
                p("example", T, "heat", "catalog key"),
                p("example_params", L, "1,pi,1.5,0", "positional catalog parameters"),
                p("n", I, "24", "grid size"),
                p("budget", I, "40", "trajectory budget"),
                p("horizon", F, "20", "lag per trajectory"),
                p("expect", T, "witness", "witness or none"),
            ],
            run: falsify_example,
        },
    ]
}

/// Stable listing: one `name  description` line per experiment.
pub fn list_experiments() -> String {
    let reg = registry();
    let w = reg.iter().map(|e| e.name.len()).max().unwrap_or(0);
    reg.iter().map(|e| format!("{:<w$}  {}\n", e.name, e.description)).collect()
}

fn a1_exactness(cfg: &Resolved) -> Result<Outcome> {
    let g = GeneratorSpec::example_a1();
    let tol = cfg.f64("tol");
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut errs = Vec::new();
    for k in 0..=cfg.usize("k_max") {
        let kf = k as f64;
        let a = propagate(&g, kf, kf + 1.0, &one())?[0];
        let b = propagate(&g, kf + 0.5, kf + 1.0, &one())?[0];
        let (ea, eb) = (1.0 / (2.0 * (kf + 1.0)), kf + 1.0);
        let e = (a - ea).abs().max((b - eb).abs());
        worst = worst.max(e);
        errs.push((kf, e));
        rows.push(format!("{k},{a},{ea},{b},{eb},{e}"));
    }
    out.results = csv("k,w_k1_k,exact_k1_k,w_k1_khalf,exact_k1_khalf,abs_error", rows);
    out.plot("error", ("k", "abs_error"), errs);
    out.checks.push(Check::new("closed_form_agreement", worst < tol, format!("max error {worst:e} (< {tol:e})")));
    out.note("max_abs_error", worst);
    Ok(out)
}

fn a1_attractivity(cfg: &Resolved) -> Result<Outcome> {
    let eps = cfg.list("eps");
    if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidArgument("eps values must lie in (0, 1)".into()));
    }
    let cls = classify_stability(&GeneratorSpec::example_a1(), cfg.f64("horizon"), &eps, ClassifyOpts::default())?;
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    for (e, t) in &cls.attractivity_table {
        // smallest m with 2^{-m} < ε
        let m = (1.0 / e).log2().floor() + 1.0;
        let bound = m + 1.0;
        rows.push(format!("{e},{m},{},{bound}", t.map_or("none".into(), |v| v.to_string())));
        out.checks.push(Check::new(
            &format!("T({e})<=m+1"),
            t.is_some_and(|v| v <= bound),
            format!("measured {} against {bound}", t.map_or("none".into(), |v| v.to_string())),
        ));
    }
    out.results = csv("eps,m,measured_T,bound", rows);
    out.plot("attractivity", ("eps", "measured_T"), cls.attractivity_table.iter().filter_map(|(e, t)| t.map(|v| (*e, v))));
    out.note("window_bound", cls.bohl_window_k);
    out.note("window_uniform", cls.window_uniform);
    Ok(out)
}

fn lyapunov_residual(cfg: &Resolved) -> Result<Outcome> {
    let mut g = stream(cfg);
    let (h, tol, min_ratio) = (cfg.f64("h"), cfg.f64("tol"), cfg.f64("min_ratio"));
    let opts = LyapOpts { quad_step: cfg.f64("quad_step"), tol: cfg.f64("tail_tol") };
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut lowest = f64::INFINITY;
    for i in 0..cfg.usize("systems") {
        let gen = random_stable_ltv(&mut g);
        let t = g.gen_range(0.0..5.0);
        let cert = QuadraticCertificate::new(&gen, Some(ExpFit { k: 1.0, w: 0.25 }), opts)?;
        let r1 = cert.residual(t, h)?;
        let r2 = cert.residual(t, 0.5 * h)?;
        worst = worst.max(r1);
        lowest = lowest.min(r1 / r2);
        rows.push(format!("{i},{t},{r1},{r2},{}", r1 / r2));
    }
    let mut out = Outcome { results: csv("system,t,residual_h,residual_h_half,ratio", rows), ..Default::default() };
    out.checks.push(Check::new("residual_below_tol", worst < tol, format!("max residual {worst:e} (< {tol:e})")));
    out.checks.push(Check::new("halving_ratio", lowest >= min_ratio, format!("min ratio {lowest} (>= {min_ratio})")));
    Ok(out)
}

fn heat_threshold(cfg: &Resolved) -> Result<Outcome> {
    let opts = HeatScanOpts {
        n: cfg.usize("n"),
        horizon: cfg.f64("horizon"),
        omega_fraction: cfg.f64("omega_fraction"),
        bisection_steps: cfg.usize("bisection_steps"),
        falsify: cfg.flag("falsify"),
        seed: cfg.seed,
    };
    let scan = heat_threshold_scan(cfg.f64("nu"), cfg.f64("ell"), &cfg.list("params"), opts)?;
    let tol = cfg.f64("rel_tol");
    let mut out = Outcome { results: scan.to_csv(), ..Default::default() };
    out.plot("verdict", ("parameter", "certified"), scan.rows.iter().map(|r| (r.param, if r.certified { 1.0 } else { 0.0 })));
    out.note("analytic", scan.analytic);
    let (pass, detail) = match scan.boundary {
        Some(b) => {
            out.note("boundary", b);
            ((b - scan.analytic).abs() <= tol * scan.analytic, format!("boundary {b} vs analytic {} ({tol})", scan.analytic))
        }
        None => (false, "no verdict flip in the scan".to_string()),
    };
    out.checks.push(Check::new("boundary_near_analytic", pass, detail));
    if opts.falsify {
        let contradict = scan.rows.iter().filter(|r| r.falsified == Some(r.certified)).count();
        out.checks.push(Check::new("falsifier_consistent", contradict == 0, format!("{contradict} scanned values where certificate and falsifier agree on the wrong side")));
    }
    Ok(out)
}

fn ks_threshold(cfg: &Resolved) -> Result<Outcome> {
    let grid = Grid1D::new(cfg.usize("n"), 1.0)?;
    let steps = cfg.usize("steps").max(1);
    let rho_max = cfg.f64("rho_max");
    let rhos: Vec<f64> = (0..=steps).map(|i| rho_max * i as f64 / steps as f64).collect();
    let scan = ks_threshold_scan(&grid, &rhos);
    let target = 4.0 * PI * PI;
    let tol = cfg.f64("rel_tol");
    let mut out = Outcome { results: scan.to_csv(), ..Default::default() };
    out.plot("min_eigenvalue", ("parameter", "min_eigenvalue"), scan.rows.iter().copied());
    let (pass, detail) = match scan.crossing {
        Some(c) => {
            out.note("crossing", c);
            ((c - target).abs() <= tol * target, format!("crossing {c} vs 4pi^2 = {target} ({tol})"))
        }
        None => (false, "no sign change in the scan".to_string()),
    };
    out.note("target", target);
    out.checks.push(Check::new("crossing_near_4pi2", pass, detail));
    Ok(out)
}

fn ks_decay(cfg: &Resolved) -> Result<Outcome> {
    let n = cfg.usize("n");
    let sys = build_example(&ExampleName::Ks { rho: cfg.f64("rho"), mu: TimeFn::constant(0.0) }, n)?;
    let g = Grid1D::new(n, 1.0)?;
    let a = cfg.f64("amplitude");
    let x0 = g.sample(|z| 16.0 * a * (z * (1.0 - z)).powi(2));
    let u = InputSignal::zero(n).with_norm(InputNorm::Sup);
    let t0 = cfg.f64("t0");
    let tr = solve_mild(&sys, t0, &x0, &u, t0 + cfg.f64("lag"), SolveOpts::with_step(cfg.f64("step")))?;
    let norms = tr.norms();
    let stride = (norms.len() / 100).max(1);
    let pts: Vec<(f64, f64)> = tr.times.iter().zip(&norms).step_by(stride).map(|(t, v)| (*t, *v)).collect();
    let ratio = norms.last().copied().unwrap_or(f64::NAN) / norms[0];
    let factor = cfg.f64("factor");
    let mut out = Outcome { results: csv("t,state_norm", pts.iter().map(|(t, v)| format!("{t},{v}"))), ..Default::default() };
    out.plot("norm", ("t", "state_norm"), pts);
    out.note("sigma", pde_examples::ks_sigma(&g, cfg.f64("rho")));
    out.checks.push(Check::new("zero_input_decay", ratio <= factor, format!("final/initial norm {ratio:e} (<= {factor:e})")));
    Ok(out)
}

fn noncoercive_dissipation(cfg: &Resolved) -> Result<Outcome> {
    let mut g = stream(cfg);
    let fit = ExpFit { k: 1.0, w: 0.25 };
    let (mut checked, mut violations) = (0, 0);
    let mut all_shrink = true;
    let mut rows = Vec::new();
    for i in 0..cfg.usize("systems") {
        let gen = random_stable_ltv(&mut g);
        let b = DMatrix::from_fn(2, 2, |_, _| g.gen_range(-1.0..1.0));
        let sys = SemilinearSystem::linear(gen.clone()).with_constant_b(b);
        let b_sup = sys.b_sup(0.0, 10.0);
        let v = LyapunovFn::noncoercive(QuadraticCertificate::new(&gen, Some(fit), LyapOpts::default())?);
        let ensemble: Vec<_> = certify::default_inputs(&sys, g.gen())
            .into_iter()
            .map(|u| (g.gen_range(0.0..2.0), DVector::from_fn(2, |_, _| g.gen_range(-2.0..2.0)), u))
            .collect();
        let form = DissipationForm::LinearBound { eta: fit.w / (fit.k * fit.k), fit, b_sup };
        let params = DissipationParams { horizon: cfg.f64("horizon"), points_per_trajectory: cfg.usize("points"), ..Default::default() };
        let rep = check_dissipation(&v, &sys, &ensemble, &form, params)?;
        checked += rep.checked;
        violations += rep.violations;
        let shrink = rep.violations == 0 || rep.violations_shrink;
        all_shrink &= shrink;
        rows.push(format!("{i},{},{},{shrink}", rep.checked, rep.violations));
    }
    let frac = if checked == 0 { 1.0 } else { 1.0 - violations as f64 / checked as f64 };
    let need = cfg.f64("min_fraction");
    let mut out = Outcome { results: csv("system,checked,violations,violations_shrink", rows), ..Default::default() };
    out.checks.push(Check::new("fraction_holding", frac >= need, format!("{violations}/{checked} exceptions, fraction {frac} (>= {need})")));
    out.checks.push(Check::new("exceptions_shrink", all_shrink, "every exception shrinks under step refinement".into()));
    Ok(out)
}

fn comparison_lemma(cfg: &Resolved) -> Result<Outcome> {
    let mut g = stream(cfg);
    let mut rows = Vec::new();
    let mut failures = 0;
    for i in 0..cfg.usize("instances") {
        let (family, theta) = match i % 3 {
            0 => ("linear", ComparisonFn::linear(g.gen_range(0.2..3.0))),
            1 => ("power", ComparisonFn::power(g.gen_range(0.2..2.0), g.gen_range(1.0..3.0))),
            _ => ("saturating", ComparisonFn::saturating(g.gen_range(0.5..3.0))),
        };
        let h = g.gen_range(2.0..8.0);
        let k = g.gen_range(1..5);
        let breaks: Vec<f64> = (1..k).map(|j| j as f64 * h / k as f64).collect();
        let vals: Vec<f64> = (0..k).map(|_| g.gen_range(0.0..1.0)).collect();
        let mu = if i % 2 == 0 { TimeFn::piecewise_constant(breaks, vals)? } else { TimeFn::exp_decay(g.gen_range(0.0..1.0), g.gen_range(0.1..2.0)) };
        let y0 = g.gen_range(0.0..10.0);
        let rep = forced_comparison_bound(&theta, &mu, y0, h, ComparisonOpts::default())?;
        if !rep.holds {
            failures += 1;
        }
        rows.push(format!("{i},{family},{},{y0},{h},{},{}", mu.name(), rep.min_slack, rep.holds));
    }
    let mut out = Outcome { results: csv("instance,theta,mu,y0,horizon,min_slack,holds", rows), ..Default::default() };
    out.checks.push(Check::new("no_violations", failures == 0, format!("{failures} violating instances")));
    Ok(out)
}

fn gronwall_bound(cfg: &Resolved) -> Result<Outcome> {
    let mut g = stream(cfg);
    let mut rows = Vec::new();
    let mut failures = 0;
    for i in 0..cfg.usize("instances") {
        let (a, b, w) = (g.gen_range(-1.0..0.5), g.gen_range(0.0..2.0), g.gen_range(0.5..4.0));
        let (c, d) = (g.gen_range(0.0..2.0), g.gen_range(0.0..1.5));
        let nu = TimeFn::new("a+b sin(wt)", move |t| a + b * (w * t).sin());
        let v = TimeFn::exp_decay(c, d);
        let y0 = g.gen_range(0.0..5.0);
        let rep = gronwall_linear(&nu, &v, y0, 0.0, cfg.f64("horizon"), cfg.usize("nodes"))?;
        if !rep.holds {
            failures += 1;
        }
        rows.push(format!("{i},{a},{b},{w},{c},{d},{y0},{},{},{}", rep.min_slack, rep.max_abs_gap, rep.holds));
    }
    let mut out = Outcome { results: csv("instance,a,b,omega,c,d,y0,min_slack,max_abs_gap,holds", rows), ..Default::default() };
    out.checks.push(Check::new("bound_dominates_rk4", failures == 0, format!("{failures} failing instances")));
    Ok(out)
}

fn grid_inequalities(cfg: &Resolved) -> Result<Outcome> {
    let mut g = stream(cfg);
    let n = cfg.usize("n");
    let len = cfg.f64("length");
    if !(len > 0.0) {
        return Err(Error::InvalidArgument("length must be positive".into()));
    }
    let z: Vec<f64> = (0..n + 2).map(|i| len * i as f64 / (n + 1) as f64).collect();
    let mut rows = Vec::new();
    let mut failures = 0;
    for s in 0..cfg.usize("samples") {
        let a: Vec<f64> = (0..4).map(|_| g.gen_range(-1.0..1.0)).collect();
        let c0 = g.gen_range(-1.0..1.0);
        let series = |f: &dyn Fn(f64, usize) -> f64| -> Vec<f64> { z.iter().map(|&x| a.iter().enumerate().map(|(k, ak)| ak * f(x, k + 1)).sum()).collect() };
        let mut both = series(&|x, k| (k as f64 * PI * x / len).sin());
        both[0] = 0.0;
        both[n + 1] = 0.0;
        let mut left = series(&|x, k| ((k as f64 - 0.5) * PI * x / len).sin());
        left[0] = 0.0;
        let free: Vec<f64> = series(&|x, k| (k as f64 * PI * x / len).cos()).iter().map(|v| v + c0).collect();
        let c = g.gen_range(0.0..len);
        let cases = [
            ("friedrichs", GridIneq::Friedrichs, &both),
            ("friedrichs_one_sided", GridIneq::FriedrichsOneSided, &left),
            ("agmon", GridIneq::Agmon, &free),
            ("endpoint", GridIneq::EndpointD32 { c }, &free),
        ];
        for (name, kind, vals) in cases {
            let rep = grid_inequality(kind, vals, len)?;
            if !rep.holds {
                failures += 1;
            }
            rows.push(format!("{s},{name},{},{},{},{}", rep.lhs, rep.rhs, rep.slack, rep.holds));
        }
    }
    let mut out = Outcome { results: csv("sample,inequality,lhs,rhs,slack,holds", rows), ..Default::default() };
    out.checks.push(Check::new("all_hold", failures == 0, format!("{failures} failing cases")));
    Ok(out)
}

fn smallgain_rd(cfg: &Resolved) -> Result<Outcome> {
    let (c1, c2, l, zeta) = (cfg.f64("c1"), cfg.f64("c2"), cfg.f64("l"), cfg.f64("zeta"));
    let spec = InterconnectionSpec::rd_example(c1, c2, l, zeta);
    let ratio = pde_examples::rd_slope_ratio(c1, c2, l);
    let ds = cfg.f64("s_step");
    let grid: Vec<f64> = (1..=cfg.usize("points")).map(|i| i as f64 * ds).collect();
    let rep = smallgain_check(&spec, &grid)?;
    // closed form known for the reference configuration only
    let reference = (c1, c2, l, zeta) == (2.0, 2.0, PI, 0.5);
    let symbolic = |s: f64| 4.0 * PI * s * s + 2.0 * PI * s;
    let mut out = Outcome::default();
    let mut worst = 0.0f64;
    let rows: Vec<String> = rep
        .kappa_samples
        .iter()
        .map(|&(s, k)| {
            if reference {
                let e = (k - symbolic(s)).abs();
                worst = worst.max(e);
                format!("{s},{k},{},{e}", symbolic(s))
            } else {
                format!("{s},{k},na,na")
            }
        })
        .collect();
    out.results = csv("s,kappa,kappa_closed_form,abs_error", rows);
    out.plot("kappa", ("s", "kappa"), rep.kappa_samples.iter().copied());
    out.note("slope_ratio", ratio);
    out.note("relation_residual", rep.relation_residual);
    out.checks.push(Check::new("slope_ratio_below_zeta", ratio < zeta, format!("{ratio} < {zeta}")));
    out.checks.push(Check::new("small_gain_condition", rep.condition_holds, format!("max ratio {}", rep.max_ratio)));
    out.checks.push(Check::new("kappa_complete", rep.kappa_samples.len() == grid.len(), format!("{} of {} points", rep.kappa_samples.len(), grid.len())));
    if reference {
        let tol = cfg.f64("kappa_tol");
        out.checks.push(Check::new("kappa_closed_form", worst < tol, format!("max error {worst:e} (< {tol:e})")));
    }
    if cfg.flag("certify") {
        let sys = build_example(&ExampleName::InterconnectedRd { c1, c2, l, upsilon: TimeFn::constant(0.0) }, cfg.usize("n"))?;
        let ens = EnsembleSpec { ics: IcSpec::Ball { count: 4, r_min: 1e-2, r_max: 5.0 }, inputs: certify::default_inputs(&sys, cfg.seed)[..3].to_vec(), t0_list: vec![0.0, 0.5], horizon: cfg.f64("horizon"), seed: cfg.seed };
        let cert = certify::certify(&sys, &ens, Property::Isps, &FitOpts { step: Some(cfg.f64("step")), ..Default::default() })?;
        out.note("isps_offset", cert.offset_r);
        out.files.push(("certificate.txt".into(), cert.to_text()));
        let detail = cert.witness().map_or(format!("certified with offset {}", cert.offset_r), |w| w.reason.clone());
        out.checks.push(Check::new("isps_certified", cert.is_certified(), detail));
    }
    Ok(out)
}

fn equivalence_audit(cfg: &Resolved) -> Result<Outcome> {
    let suite = certify::linear_test_suite(cfg.seed)?;
    let rep = certify::run_audit(&suite, cfg.seed, &FitOpts::default())?;
    let stable = rep.rows.iter().filter(|r| r.exp_stable).count();
    let bad: Vec<&str> = rep.rows.iter().filter(|r| !r.agree()).map(|r| r.name.as_str()).collect();
    let mut out = Outcome { results: rep.to_csv(), ..Default::default() };
    out.note("systems", rep.rows.len());
    out.note("exp_stable", stable);
    out.checks.push(Check::new("suite_size", rep.rows.len() >= 12, format!("{} systems", rep.rows.len())));
    out.checks.push(Check::new("stable_and_unstable", stable > 0 && stable < rep.rows.len(), format!("{stable} stable")));
    out.checks.push(Check::new("no_disagreements", bad.is_empty(), if bad.is_empty() { "none".into() } else { bad.join(" ") }));
    Ok(out)
}

fn mild_convergence(cfg: &Resolved) -> Result<Outcome> {
    let sys = SemilinearSystem::linear(GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, -1.0))).with_constant_b(DMatrix::from_element(1, 1, 1.0));
    let exact = 1.0 - (-1f64).exp();
    let u = InputSignal::scalar_constant(1.0);
    let x0 = DVector::from_element(1, 0.0);
    let err = |opts: SolveOpts| -> Result<f64> { Ok((solve_mild(&sys, 0.0, &x0, &u, 1.0, opts)?.final_state()[0] - exact).abs()) };
    let e_default = err(SolveOpts::default())?;
    let hs = cfg.list("steps");
    if hs.len() < 2 || hs.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidArgument("steps needs at least two positive values".into()));
    }
    let e = hs.iter().map(|&h| err(SolveOpts::with_step(h))).collect::<Result<Vec<f64>>>()?;
    let orders: Vec<f64> = e.windows(2).zip(hs.windows(2)).map(|(ew, hw)| (ew[0] / ew[1]).ln() / (hw[0] / hw[1]).ln()).collect();
    let mut rows = vec![format!("{},{},na", hs[0], e[0])];
    rows.extend(hs[1..].iter().zip(&e[1..]).zip(&orders).map(|((h, e), o)| format!("{h},{e},{o}")));
    let (tol, otol) = (cfg.f64("tol"), cfg.f64("order_tol"));
    let mut out = Outcome { results: csv("step,error,observed_order", rows), ..Default::default() };
    out.plot("error", ("step", "error"), hs.iter().copied().zip(e.iter().copied()));
    out.note("scheme_order", SCHEME_ORDER);
    out.checks.push(Check::new("default_step_error", e_default < tol, format!("{e_default:e} (< {tol:e})")));
    let ok = orders.iter().all(|o| (o - SCHEME_ORDER).abs() <= otol);
    out.checks.push(Check::new("observed_order", ok, format!("{orders:?} vs {SCHEME_ORDER} +- {otol}")));
    Ok(out)
}

fn catalog_system(cfg: &Resolved) -> Result<SemilinearSystem> {
    let name = ExampleName::from_key(&cfg.text("example"), &cfg.list("example_params"))?;
    build_example(&name, cfg.usize("n"))
}

fn certify_example(cfg: &Resolved) -> Result<Outcome> {
    let property = Property::parse(&cfg.text("property"))?;
    let expect = cfg.text("expect");
    let want = match expect.as_str() {
        "certified" => true,
        "falsified" => false,
        other => return Err(Error::InvalidArgument(format!("expect must be certified or falsified, got '{other}'"))),
    };
    let sys = catalog_system(cfg)?;
    let mut ens = EnsembleSpec::default_for(&sys, cfg.seed);
    ens.ics = IcSpec::Ball { count: cfg.usize("ics"), r_min: 1e-2, r_max: cfg.f64("r_max") };
    ens.horizon = cfg.f64("horizon");
    let cert = certify::certify(&sys, &ens, property, &FitOpts::default())?;
    let mut out = Outcome { results: cert.slack_csv(), ..Default::default() };
    out.files.push(("certificate.txt".into(), cert.to_text()));
    if let Some((xs, ys)) = &cert.gamma_knots {
        out.plot("gain", ("s", "gamma"), xs.iter().copied().zip(ys.iter().copied()));
    }
    out.note("property", property.name());
    out.note("verdict", if cert.is_certified() { "certified" } else { "falsified" });
    out.note("digest", format!("{:016x}", cert.digest));
    let detail = match cert.witness() {
        Some(w) => format!("falsified: {} (t0 {}, |x0| {}, input {}, lag {})", w.reason, w.t0, w.x0_norm, w.input, w.lag),
        None => "certified on the sampled grid".into(),
    };
    out.checks.push(Check::new("verdict_matches_expectation", cert.is_certified() == want, detail));
    Ok(out)
}

fn falsify_example(cfg: &Resolved) -> Result<Outcome> {
    let expect = cfg.text("expect");
    let want = match expect.as_str() {
        "witness" => true,
        "none" => false,
        other => return Err(Error::InvalidArgument(format!("expect must be witness or none, got '{other}'"))),
    };
    let sys = catalog_system(cfg)?;
    let spec = FalsifySpec { budget: cfg.usize("budget"), horizon: cfg.f64("horizon"), seed: cfg.seed, ..Default::default() };
    let w = certify::falsify(&sys, &spec)?;
    let mut out = Outcome::default();
    let header = "t0,x0_norm,input,lag,state_norm,bound,margin,reason";
    out.results = csv(header, w.iter().map(|w| format!("{},{},{},{},{},{},{},{}", w.t0, w.x0_norm, w.input, w.lag, w.norm, w.bound, w.margin, w.reason.replace(',', ";"))));
    let detail = w.as_ref().map_or("no witness within budget".into(), |w| format!("witness margin {} at lag {}", w.margin, w.lag));
    out.checks.push(Check::new("outcome_matches_expectation", w.is_some() == want, detail));
    Ok(out)
}

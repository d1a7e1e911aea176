//! Acceptance suite: one line per criterion, run sequentially so timings are meaningful.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use tvstab::certify::{self, EnsembleSpec, FitOpts, IcSpec, Property};
use tvstab::compfun::ComparisonFn;
use tvstab::evolution::{classify_stability, propagate, ClassifyOpts, ExpFit, GeneratorSpec};
use tvstab::ineq::{forced_comparison_bound, ComparisonOpts};
use tvstab::lyapunov::{check_dissipation, random_stable_ltv, DissipationForm, DissipationParams, LyapOpts, LyapunovFn, QuadraticCertificate};
use tvstab::mildsolve::{solve_mild, InputSignal, SemilinearSystem, SolveOpts, SCHEME_ORDER};
use tvstab::pde_examples::{self, build_example, heat_threshold_scan, ks_threshold_scan, smallgain_check, ExampleName, Grid1D, HeatScanOpts, InterconnectionSpec};
use tvstab::rng;
use tvstab::timefn::TimeFn;

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let el = start.elapsed();
    let ok = out.pass && el <= limit;
    println!("criterion {id:>2} {name:<28} {} | {} | {:.2}s (limit {}s)", if ok { "PASS" } else { "FAIL" }, out.detail, el.as_secs_f64(), limit.as_secs());
    ok
}

fn one() -> DVector<f64> {
    DVector::from_element(1, 1.0)
}

fn c1_a1_exactness() -> Outcome {
    let g = GeneratorSpec::example_a1();
    let mut worst = 0.0f64;
    for k in 0..=10 {
        let kf = k as f64;
        let a = propagate(&g, kf, kf + 1.0, &one()).unwrap()[0];
        let b = propagate(&g, kf + 0.5, kf + 1.0, &one()).unwrap()[0];
        worst = worst.max((a - 1.0 / (2.0 * (kf + 1.0))).abs()).max((b - (kf + 1.0)).abs());
    }
    Outcome { pass: worst < 1e-9, detail: format!("max error {worst:.2e} (< 1e-9)") }
}

fn c2_attractivity_timing() -> Outcome {
    let cls = classify_stability(&GeneratorSpec::example_a1(), 40.0, &[0.1, 0.01], ClassifyOpts::default()).unwrap();
    let limits = [(0.1, 5.0), (0.01, 8.0)];
    let mut pass = true;
    let mut parts = Vec::new();
    for ((eps, t), (_, lim)) in cls.attractivity_table.iter().zip(limits) {
        parts.push(format!("T({eps})={}", t.map_or("none".into(), |v| format!("{v}"))));
        pass &= t.is_some_and(|v| v <= lim);
    }
    Outcome { pass, detail: format!("{} (limits 5, 8)", parts.join(", ")) }
}

fn c3_lyapunov_residual() -> Outcome {
    let mut g = rng::stream(2024, rng::label("acceptance_ltv"));
    let mut worst = 0.0f64;
    let mut min_ratio = f64::INFINITY;
    for _ in 0..20 {
        let gen = random_stable_ltv(&mut g);
        let t = g.gen_range(0.0..5.0);
        // quadrature and tail errors kept below the central-difference error being measured
        let opts = LyapOpts { quad_step: 5e-4, tol: 1e-12 };
        let cert = QuadraticCertificate::new(&gen, Some(ExpFit { k: 1.0, w: 0.25 }), opts).unwrap();
        let r1 = cert.residual(t, 1e-3).unwrap();
        let r2 = cert.residual(t, 5e-4).unwrap();
        worst = worst.max(r1);
        min_ratio = min_ratio.min(r1 / r2);
    }
    Outcome { pass: worst < 1e-4 && min_ratio >= 3.0, detail: format!("max residual {worst:.2e} (< 1e-4), min halving ratio {min_ratio:.2} (>= 3)") }
}

fn c4_heat_threshold() -> Outcome {
    let params = [0.5, 0.8, 0.9, 0.95, 1.05, 1.1, 1.2, 1.5];
    let scan = heat_threshold_scan(1.0, PI, &params, HeatScanOpts::default()).unwrap();
    match scan.boundary {
        Some(b) => Outcome { pass: (b - 1.0).abs() <= 0.05, detail: format!("boundary {b:.4} vs analytic {:.4} (5%)", scan.analytic) },
        None => Outcome { pass: false, detail: "no verdict flip in the scan".into() },
    }
}

fn c5_ks_threshold() -> Outcome {
    let grid = Grid1D::new(256, 1.0).unwrap();
    let rhos: Vec<f64> = (0..=16).map(|i| 5.0 * i as f64).collect();
    let scan = ks_threshold_scan(&grid, &rhos);
    let target = 4.0 * PI * PI;
    match scan.crossing {
        Some(c) => Outcome { pass: (c - target).abs() / target <= 0.01, detail: format!("crossing {c:.4} vs 4π² = {target:.4} (1%)") },
        None => Outcome { pass: false, detail: "no sign change".into() },
    }
}

fn c6_noncoercive_dissipation() -> Outcome {
    let mut g = rng::stream(77, rng::label("acceptance_dissipation"));
    let fit = ExpFit { k: 1.0, w: 0.25 };
    let mut checked = 0;
    let mut violations = 0;
    let mut all_shrink = true;
    for _ in 0..10 {
        let gen = random_stable_ltv(&mut g);
        let b = DMatrix::from_fn(2, 2, |_, _| g.gen_range(-1.0..1.0));
        let sys = SemilinearSystem::linear(gen.clone()).with_constant_b(b);
        let b_sup = sys.b_sup(0.0, 10.0);
        let v = LyapunovFn::noncoercive(QuadraticCertificate::new(&gen, Some(fit), LyapOpts::default()).unwrap());
        let inputs = certify::default_inputs(&sys, g.gen());
        let ensemble: Vec<_> = inputs
            .into_iter()
            .map(|u| (g.gen_range(0.0..2.0), DVector::from_fn(2, |_, _| g.gen_range(-2.0..2.0)), u))
            .collect();
        let form = DissipationForm::LinearBound { eta: fit.w / (fit.k * fit.k), fit, b_sup };
        let params = DissipationParams { horizon: 4.0, points_per_trajectory: 8, ..Default::default() };
        let rep = check_dissipation(&v, &sys, &ensemble, &form, params).unwrap();
        checked += rep.checked;
        violations += rep.violations;
        all_shrink &= rep.violations == 0 || rep.violations_shrink;
    }
    let frac = 1.0 - violations as f64 / checked as f64;
    Outcome { pass: frac >= 0.99 && all_shrink, detail: format!("{violations}/{checked} exceptions, {:.2}% hold (>= 99%), exceptions shrink: {all_shrink}", 100.0 * frac) }
}

fn c7_comparison_lemma() -> Outcome {
    let mut g = rng::stream(7, rng::label("acceptance_comparison"));
    let mut failures = 0;
    for i in 0..100 {
        let theta = match i % 3 {
            0 => ComparisonFn::linear(g.gen_range(0.2..3.0)),
            1 => ComparisonFn::power(g.gen_range(0.2..2.0), g.gen_range(1.0..3.0)),
            _ => ComparisonFn::saturating(g.gen_range(0.5..3.0)),
        };
        let h = g.gen_range(2.0..8.0);
        let n = g.gen_range(1..5);
        let breaks: Vec<f64> = (1..n).map(|k| k as f64 * h / n as f64).collect();
        let vals: Vec<f64> = (0..n).map(|_| g.gen_range(0.0..1.0)).collect();
        let mu = if i % 2 == 0 { TimeFn::piecewise_constant(breaks, vals).unwrap() } else { TimeFn::exp_decay(g.gen_range(0.0..1.0), g.gen_range(0.1..2.0)) };
        let y0 = g.gen_range(0.0..10.0);
        let rep = forced_comparison_bound(&theta, &mu, y0, h, ComparisonOpts::default()).unwrap();
        if !rep.holds {
            failures += 1;
        }
    }
    Outcome { pass: failures == 0, detail: format!("{failures} violating instances of 100") }
}

fn c8_small_gain() -> Outcome {
    let spec = InterconnectionSpec::rd_example(2.0, 2.0, PI, 0.5);
    let ratio = pde_examples::rd_slope_ratio(2.0, 2.0, PI);
    let grid: Vec<f64> = (1..=100).map(|i| i as f64 * 0.05).collect();
    let rep = smallgain_check(&spec, &grid).unwrap();
    let kappa_err = rep.kappa_samples.iter().map(|(s, k)| (k - (4.0 * PI * s * s + 2.0 * PI * s)).abs()).fold(0.0, f64::max);
    let n = 12;
    let sys = build_example(&ExampleName::InterconnectedRd { c1: 2.0, c2: 2.0, l: PI, upsilon: TimeFn::constant(0.0) }, n).unwrap();
    let ens = EnsembleSpec { ics: IcSpec::Ball { count: 4, r_min: 1e-2, r_max: 5.0 }, inputs: certify::default_inputs(&sys, 5)[..3].to_vec(), t0_list: vec![0.0, 0.5], horizon: 3.5, seed: 5 };
    let cert = certify::certify(&sys, &ens, Property::Isps, &FitOpts { step: Some(1e-3), ..Default::default() }).unwrap();
    let pass = ratio < 0.5 && rep.condition_holds && rep.kappa_samples.len() == 100 && kappa_err < 1e-6 && cert.is_certified();
    Outcome {
        pass,
        detail: format!("slope ratio {ratio} (< 0.5), κ max error {kappa_err:.2e} (< 1e-6), ISpS {} with r = {:.3e}", if cert.is_certified() { "certified" } else { "falsified" }, cert.offset_r),
    }
}

fn c9_equivalence_audit() -> Outcome {
    let suite = certify::linear_test_suite(11).unwrap();
    let rep = certify::run_audit(&suite, 11, &FitOpts::default()).unwrap();
    let stable = rep.rows.iter().filter(|r| r.exp_stable).count();
    let bad: Vec<&str> = rep.rows.iter().filter(|r| !r.agree()).map(|r| r.name.as_str()).collect();
    Outcome {
        pass: rep.rows.len() >= 12 && bad.is_empty() && stable > 0 && stable < rep.rows.len(),
        detail: format!("{} systems ({stable} stable), disagreements: {}", rep.rows.len(), if bad.is_empty() { "none".to_string() } else { bad.join(" ") }),
    }
}

fn c10_mild_solver() -> Outcome {
    let sys = SemilinearSystem::linear(GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, -1.0))).with_constant_b(DMatrix::from_element(1, 1, 1.0));
    let exact = 1.0 - (-1f64).exp();
    let u = InputSignal::scalar_constant(1.0);
    let x0 = DVector::from_element(1, 0.0);
    let err = |opts: SolveOpts| (solve_mild(&sys, 0.0, &x0, &u, 1.0, opts).unwrap().final_state()[0] - exact).abs();
    let e_default = err(SolveOpts::default());
    let hs = [0.1, 0.05, 0.025, 0.0125, 0.00625];
    let e: Vec<f64> = hs.iter().map(|&h| err(SolveOpts::with_step(h))).collect();
    let orders: Vec<f64> = e.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let ok_orders = orders.iter().all(|o| (o - SCHEME_ORDER).abs() <= 0.3);
    Outcome {
        pass: e_default < 1e-4 && ok_orders,
        detail: format!("default-step error {e_default:.2e} (< 1e-4), orders {:?} (scheme {SCHEME_ORDER} ± 0.3)", orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>()),
    }
}

#[test]
fn acceptance_criteria() {
    let s = Duration::from_secs;
    println!();
    let results = [
        run(1, "A1 exactness", s(1), c1_a1_exactness),
        run(2, "attractivity timing", s(5), c2_attractivity_timing),
        run(3, "Lyapunov residual", s(30), c3_lyapunov_residual),
        run(4, "heat ISS threshold", s(120), c4_heat_threshold),
        run(5, "KS threshold", s(60), c5_ks_threshold),
        run(6, "non-coercive dissipation", s(120), c6_noncoercive_dissipation),
        run(7, "comparison lemma", s(60), c7_comparison_lemma),
        run(8, "small-gain composite gain", s(180), c8_small_gain),
        run(9, "equivalence audit", s(300), c9_equivalence_audit),
        run(10, "mild solver", s(10), c10_mild_solver),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

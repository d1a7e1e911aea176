//! Scalar differential and integral inequalities: comparison lemmas, the indefinite
//! linear Gronwall bound, rate conditions ∫ν ≤ −η(t−t0)+ξ, and classical integral
//! inequalities. Every "for all t" statement is checked on a dense grid.

use std::sync::Arc;

use crate::compfun::{invert_unbounded, ClassSet, ComparisonFn, KlFn};
use crate::error::{Error, Result};
use crate::numeric::{adaptive_gl, gl5, gl5_composite, linspace};
use crate::timefn::TimeFn;

const PI_CUTOFF: f64 = 1e-12;
const PI_NODES: usize = 2400;
/// allowance for RK4 error when the bound is attained with equality
const INTEGRATOR_TOL: f64 = 1e-7;

/// π(s) = ∫₁ˢ dτ/θ(τ), tabulated on a logarithmic grid in s.
struct PiTable {
    theta: ComparisonFn,
    s: Vec<f64>,
    c: Vec<f64>,
    c_one: f64,
}

impl PiTable {
    fn build(theta: &ComparisonFn, s_max: f64) -> Result<Self> {
        // node at s = 1 exactly; cumulate outward from it so that values near the
        // anchor keep full precision even when π diverges at 0
        let lo = PI_CUTOFF.ln();
        let hi = s_max.max(2.0).ln();
        let n_lo = (PI_NODES as f64 * (-lo) / (hi - lo)).round().max(2.0) as usize;
        let n_hi = PI_NODES.saturating_sub(n_lo).max(2);
        let mut u = linspace(lo, 0.0, n_lo);
        u.extend(linspace(0.0, hi, n_hi).into_iter().skip(1));
        let s: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        for &x in &s {
            let th = theta.eval(x);
            if !(th > 0.0) || !th.is_finite() {
                return Err(Error::InvalidRate(format!("θ({x:e}) = {th} is not positive")));
            }
        }
        let inv = |v: f64| v.exp() / theta.eval(v.exp());
        let one = n_lo - 1;
        let mut c = vec![0.0; s.len()];
        for j in (0..one).rev() {
            c[j] = c[j + 1] - gl5(inv, u[j], u[j + 1]);
        }
        for j in one + 1..s.len() {
            c[j] = c[j - 1] + gl5(inv, u[j - 1], u[j]);
        }
        Ok(PiTable { theta: theta.clone(), s, c, c_one: 0.0 })
    }

    fn partial(&self, a: f64, b: f64) -> f64 {
        let th = &self.theta;
        gl5(|v: f64| v.exp() / th.eval(v.exp()), a.ln(), b.ln())
    }

    /// C(s) = ∫_{cutoff}^s dτ/θ; linear-θ extrapolation below the cutoff.
    fn cumulative(&self, s: f64) -> f64 {
        let n = self.s.len();
        if s <= self.s[0] {
            let k = self.theta.eval(self.s[0]) / self.s[0];
            return (s / self.s[0]).ln() / k;
        }
        if s >= self.s[n - 1] {
            let th = &self.theta;
            return self.c[n - 1] + adaptive_gl(&|v: f64| v.exp() / th.eval(v.exp()), self.s[n - 1].ln(), s.ln(), 1e-13);
        }
        let j = self.s.partition_point(|&x| x <= s) - 1;
        self.c[j] + self.partial(self.s[j], s)
    }

    fn pi(&self, s: f64) -> f64 {
        self.cumulative(s) - self.c_one
    }

    /// Solve C(s) = target for s ≤ upper.
    fn inverse(&self, target: f64, upper: f64) -> f64 {
        if target <= self.c[0] {
            let k = self.theta.eval(self.s[0]) / self.s[0];
            return self.s[0] * ((target - self.c[0]) * k).exp();
        }
        let n = self.s.len();
        let (mut a, mut b) = if target >= self.c[n - 1] {
            (self.s[n - 1], upper.max(self.s[n - 1]))
        } else {
            let j = self.c.partition_point(|&x| x <= target) - 1;
            (self.s[j], self.s[j + 1])
        };
        let base_s = a;
        let base_c = self.cumulative(a);
        let mut x = (a * b).sqrt();
        for _ in 0..100 {
            let f = base_c + if x > base_s { self.partial(base_s, x) } else { 0.0 } - target;
            if f.abs() <= 1e-15 * (1.0 + target.abs()) {
                break;
            }
            if f > 0.0 {
                b = x;
            } else {
                a = x;
            }
            let newton = x - f * self.theta.eval(x);
            x = if newton > a && newton < b { newton } else { 0.5 * (a + b) };
            if b - a <= 4.0 * f64::EPSILON * b {
                break;
            }
        }
        x
    }
}

/// β(r,s) = π⁻¹(π(r) − s) from the comparison principle for D⁺y ≤ −θ(y).
pub fn beta_from_theta(theta: &ComparisonFn, r_max: f64, t_max: f64) -> Result<KlFn> {
    if !(r_max > 0.0) || !(t_max > 0.0) {
        return Err(Error::InvalidArgument("beta_from_theta needs r_max, t_max > 0".into()));
    }
    if !theta.claimed().p && theta.eval(0.0) != 0.0 {
        return Err(Error::InvalidRate(format!("{} is not positive definite", theta.label())));
    }
    let table = Arc::new(PiTable::build(theta, r_max)?);
    Ok(KlFn::new(&format!("beta_from_theta({})", theta.label()), move |r, s| {
        if r <= 0.0 {
            return 0.0;
        }
        if s <= 0.0 {
            return r;
        }
        let target = table.cumulative(r) - s;
        table.inverse(target, r)
    }))
}

/// π(s) for diagnostics and tests.
pub fn pi_function(theta: &ComparisonFn, s: f64, r_max: f64) -> Result<f64> {
    Ok(PiTable::build(theta, r_max)?.pi(s))
}

/// Pointwise comparison of a trajectory against a bound.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    pub solution: Vec<f64>,
    pub bound: Vec<f64>,
    /// max over nodes of solution − bound
    pub max_violation: f64,
    pub min_slack: f64,
    pub holds: bool,
}

impl ComparisonReport {
    fn from_series(times: Vec<f64>, solution: Vec<f64>, bound: Vec<f64>) -> Self {
        let mut max_violation = f64::NEG_INFINITY;
        let mut holds = true;
        for (y, b) in solution.iter().zip(&bound) {
            max_violation = max_violation.max(y - b);
            if y - b > INTEGRATOR_TOL * (1.0 + b.abs()) {
                holds = false;
            }
        }
        ComparisonReport { min_slack: -max_violation, times, solution, bound, max_violation, holds }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ComparisonOpts {
    pub step: f64,
    pub t0: f64,
}

impl Default for ComparisonOpts {
    fn default() -> Self {
        ComparisonOpts { step: 1e-2, t0: 0.0 }
    }
}

fn step_grid(t0: f64, t1: f64, h: f64, breaks: &[f64]) -> Vec<f64> {
    let mut pts = vec![t0];
    let mut bs: Vec<f64> = breaks.iter().copied().filter(|&b| b > t0 && b < t1).collect();
    bs.push(t1);
    let mut t = t0;
    for b in bs {
        let n = ((b - t) / h).ceil().max(1.0) as usize;
        let dt = (b - t) / n as f64;
        for i in 1..n {
            pts.push(t + i as f64 * dt);
        }
        pts.push(b);
        t = b;
    }
    pts
}

/// Integrate ẏ = −θ(y) + μ(t) by RK4 and check y(t) ≤ β(y0, t−t0) + 2∫_{t0}^t μ at every node.
pub fn forced_comparison_bound(
    theta: &ComparisonFn,
    mu: &TimeFn,
    y0: f64,
    horizon: f64,
    opts: ComparisonOpts,
) -> Result<ComparisonReport> {
    if y0 < 0.0 || !(horizon > opts.t0) {
        return Err(Error::InvalidArgument("need y0 >= 0 and horizon > t0".into()));
    }
    let beta = beta_from_theta(theta, y0.max(1.0) * 4.0 + 10.0, horizon - opts.t0)?;
    let grid = step_grid(opts.t0, horizon, opts.step, mu.breaks());
    let f = |t: f64, y: f64| -theta.eval(y.max(0.0)) + mu.eval(t);
    let (mut y, mut int_mu) = (y0, 0.0);
    let mut times = vec![opts.t0];
    let mut sol = vec![y0];
    let mut bound = vec![beta.eval(y0, 0.0)];
    for w in grid.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        // stages evaluated inside [t, t+h): right-continuous μ is sampled consistently
        let tm = t + 0.5 * h;
        let te = w[1] - 1e-12 * h.max(1.0);
        let k1 = f(t, y);
        let k2 = f(tm, y + 0.5 * h * k1);
        let k3 = f(tm, y + 0.5 * h * k2);
        let k4 = f(te, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        int_mu += h / 6.0 * (mu.eval(t) + 4.0 * mu.eval(tm) + mu.eval(te));
        if !y.is_finite() {
            return Err(Error::Numerical { last_valid_time: t, reason: "non-finite comparison state".into() });
        }
        times.push(w[1]);
        sol.push(y);
        bound.push(beta.eval(y0, w[1] - opts.t0) + 2.0 * int_mu);
    }
    Ok(ComparisonReport::from_series(times, sol, bound))
}

/// Dominating bound for ẏ ≤ ν(t)y + v(t) with a sign-indefinite rate ν.
#[derive(Debug, Clone)]
pub struct GronwallReport {
    pub times: Vec<f64>,
    pub bound: Vec<f64>,
    pub rk4: Vec<f64>,
    /// min over nodes of bound − rk4
    pub min_slack: f64,
    pub max_abs_gap: f64,
    pub holds: bool,
}

impl GronwallReport {
    pub fn bound_at(&self, t: f64) -> f64 {
        crate::timefn::interp_linear(&self.times, &self.bound, t)
    }
}

/// t ↦ y0·e^{∫ν} + ∫ v(s)·e^{∫_s^t ν} ds by nested Gauss–Legendre quadrature,
/// verified against RK4 on ẏ = ν y + v.
pub fn gronwall_linear(nu: &TimeFn, v: &TimeFn, y0: f64, t0: f64, horizon: f64, nodes: usize) -> Result<GronwallReport> {
    if !(horizon > t0) || nodes < 2 {
        return Err(Error::InvalidArgument("gronwall_linear needs horizon > t0 and >= 2 nodes".into()));
    }
    let times = linspace(t0, horizon, nodes);
    let mut bound = Vec::with_capacity(nodes);
    let mut n_acc = 0.0;
    let mut forced = 0.0;
    bound.push(y0);
    for w in times.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dn = gl5(|s| nu.eval(s), a, b);
        let cell = gl5(|s| v.eval(s) * gl5(|r| nu.eval(r), s, b).exp(), a, b);
        forced = forced * dn.exp() + cell;
        n_acc += dn;
        let val = y0 * n_acc.exp() + forced;
        if !val.is_finite() {
            return Err(Error::Numerical { last_valid_time: a, reason: "quadrature overflow".into() });
        }
        bound.push(val);
    }
    let mut rk = Vec::with_capacity(nodes);
    let mut y = y0;
    rk.push(y);
    let f = |t: f64, y: f64| nu.eval(t) * y + v.eval(t);
    for w in times.windows(2) {
        let sub = 4;
        let h = (w[1] - w[0]) / sub as f64;
        for i in 0..sub {
            let t = w[0] + i as f64 * h;
            let k1 = f(t, y);
            let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
            let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
            let k4 = f(t + h, y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        rk.push(y);
    }
    let scale = bound.iter().chain(&rk).fold(1.0f64, |m, x| m.max(x.abs()));
    let min_slack = bound.iter().zip(&rk).map(|(b, r)| b - r).fold(f64::INFINITY, f64::min);
    let max_abs_gap = bound.iter().zip(&rk).map(|(b, r)| (b - r).abs()).fold(0.0, f64::max);
    Ok(GronwallReport { holds: min_slack >= -1e-6 * scale, times, bound, rk4: rk, min_slack, max_abs_gap })
}

/// Certified (η, ξ, ρ) for a sign-indefinite rate ν and forcing ψ.
#[derive(Debug, Clone)]
pub struct RatePair {
    pub nu: TimeFn,
    pub psi: TimeFn,
    pub eta: f64,
    pub xi: f64,
    pub rho: f64,
    pub horizon: f64,
    /// η hit the search ceiling without the feasibility test failing
    pub limited_by_ceiling: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct RateFitOpts {
    pub nodes: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    pub coarse: usize,
    /// optional upper bound on ξ; with it the search maximizes η subject to ξ(η) ≤ cap
    pub xi_cap: Option<f64>,
    /// ξ on [0,H] may exceed ξ on [0,H/2] only by this relative amount
    pub stability_tol: f64,
}

impl Default for RateFitOpts {
    fn default() -> Self {
        RateFitOpts { nodes: 2048, eta_min: 1e-4, eta_max: 100.0, coarse: 61, xi_cap: None, stability_tol: 1e-6 }
    }
}

struct RateGrid {
    t: Vec<f64>,
    f: Vec<f64>,
    nu: Vec<f64>,
    h: f64,
}

impl RateGrid {
    fn new(nu: &TimeFn, horizon: f64, nodes: usize) -> Self {
        let t = linspace(0.0, horizon, nodes);
        let mut f = vec![0.0; nodes];
        for k in 1..nodes {
            f[k] = f[k - 1] + gl5(|s| nu.eval(s), t[k - 1], t[k]);
        }
        let nv = t.iter().map(|&s| nu.eval(s)).collect();
        RateGrid { h: horizon / (nodes - 1) as f64, t, f, nu: nv }
    }

    /// max_{i<=j<=upto} F_j − F_i + η(t_j − t_i), its attaining pair, and an inter-node margin.
    fn xi(&self, eta: f64, upto: usize) -> (f64, (f64, f64), f64) {
        let mut min_g = f64::INFINITY;
        let mut arg_min = 0;
        let mut best = 0.0;
        let mut pair = (self.t[0], self.t[0]);
        let mut slope: f64 = 0.0;
        for k in 0..=upto {
            let g = self.f[k] + eta * self.t[k];
            if g < min_g {
                min_g = g;
                arg_min = k;
            }
            if g - min_g > best {
                best = g - min_g;
                pair = (self.t[arg_min], self.t[k]);
            }
            slope = slope.max((self.nu[k] + eta).abs());
        }
        (best, pair, 0.5 * self.h * slope)
    }
}

/// Largest ξ needed for rate η on [0, horizon]: max over t0 ≤ t of ∫_{t0}^t ν + η(t−t0).
pub fn min_xi(nu: &TimeFn, eta: f64, horizon: f64, nodes: usize) -> f64 {
    let g = RateGrid::new(nu, horizon, nodes);
    g.xi(eta, nodes - 1).0
}

/// ρ = sup_t ∫_0^t |ψ(s)| e^{∫_s^t ν} ds (the supremum over t0 is attained at t0 = 0).
pub fn rho_bound(nu: &TimeFn, psi: &TimeFn, horizon: f64, nodes: usize) -> f64 {
    rho_with_margin(nu, psi, horizon, nodes).0
}

/// Node maximum of R(t) plus half a step times the largest |R'| = |νR + |ψ||,
/// which bounds what R can gain between nodes.
fn rho_with_margin(nu: &TimeFn, psi: &TimeFn, horizon: f64, nodes: usize) -> (f64, f64) {
    let t = linspace(0.0, horizon, nodes);
    let h = horizon / (nodes - 1) as f64;
    let mut r = 0.0f64;
    let mut best = 0.0f64;
    let mut slope = 0.0f64;
    for w in t.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dn = gl5(|s| nu.eval(s), a, b);
        let cell = gl5(|s| psi.eval(s).abs() * gl5(|q| nu.eval(q), s, b).exp(), a, b);
        slope = slope.max((nu.eval(a) * r + psi.eval(a).abs()).abs());
        r = r * dn.exp() + cell;
        slope = slope.max((nu.eval(b) * r + psi.eval(b).abs()).abs());
        best = best.max(r);
    }
    (best, 0.5 * h * slope)
}

/// Search η (then ξ and ρ) so that ∫_{t0}^t ν ≤ −η(t−t0)+ξ holds on the horizon.
///
/// Without `xi_cap`, an η is feasible when doubling the horizon leaves ξ(η) unchanged:
/// a finite horizon admits some ξ for every η, so growth of ξ with the horizon is the
/// signature of a rate that is not eventually below −η.
pub fn fit_rate_conditions(nu: &TimeFn, psi: &TimeFn, horizon: f64, opts: RateFitOpts) -> Result<RatePair> {
    if !(horizon > 0.0) || opts.nodes < 8 {
        return Err(Error::InvalidArgument("fit_rate_conditions needs horizon > 0 and >= 8 nodes".into()));
    }
    let g = RateGrid::new(nu, horizon, opts.nodes);
    let last = opts.nodes - 1;
    let half = last / 2;
    let feasible = |eta: f64| -> bool {
        let (full, _, margin) = g.xi(eta, last);
        let (early, _, _) = g.xi(eta, half);
        // grid phase differences between periods shift ξ by up to the inter-node margin
        let stable = full <= early * (1.0 + opts.stability_tol) + margin + 1e-12;
        let capped = opts.xi_cap.map_or(true, |c| full + margin <= c);
        stable && capped
    };
    let etas: Vec<f64> = crate::numeric::logspace(opts.eta_min, opts.eta_max, opts.coarse);
    let first_bad = etas.iter().position(|&e| !feasible(e));
    let (eta, limited) = match first_bad {
        Some(0) => {
            let (xi, pair, _) = g.xi(opts.eta_min, last);
            return Err(Error::Infeasible(format!(
                "rate not eventually below -{:e}: ∫ν over [{:.4}, {:.4}] gives ξ = {xi:.4e} growing with the horizon",
                opts.eta_min, pair.0, pair.1
            )));
        }
        None => (opts.eta_max, true),
        Some(k) => {
            let (mut a, mut b) = (etas[k - 1], etas[k]);
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                if feasible(m) {
                    a = m;
                } else {
                    b = m;
                }
                if b - a <= 1e-12 * b {
                    break;
                }
            }
            (a, false)
        }
    };
    let (xi, _, margin) = g.xi(eta, last);
    let xi = if xi > 0.0 { xi + margin } else { xi };
    let (rho_raw, rho_margin) = rho_with_margin(nu, psi, horizon, opts.nodes);
    let rho = if rho_raw > 0.0 { rho_raw + rho_margin + 1e-12 } else { 0.0 };
    Ok(RatePair { nu: nu.clone(), psi: psi.clone(), eta, xi, rho, horizon, limited_by_ceiling: limited })
}

#[derive(Debug, Clone, Copy)]
pub struct RateVerification {
    /// max over sampled (t0, t) of ∫ν + η(t−t0) − ξ; ≤ 0 means the rate condition holds
    pub xi_excess: f64,
    pub rho_excess: f64,
    pub witness: (f64, f64),
}

/// Re-check a rate pair on an independent grid.
pub fn verify_rate_pair(pair: &RatePair, nodes: usize) -> RateVerification {
    let g = RateGrid::new(&pair.nu, pair.horizon, nodes);
    let (xi, w, _) = g.xi(pair.eta, nodes - 1);
    let rho = rho_bound(&pair.nu, &pair.psi, pair.horizon, nodes);
    RateVerification { xi_excess: xi - pair.xi, rho_excess: rho - pair.rho, witness: w }
}

/// Residual of one of the classical inequalities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackReport {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

impl SlackReport {
    pub fn new(lhs: f64, rhs: f64, tol: f64) -> Self {
        SlackReport { lhs, rhs, slack: rhs - lhs, holds: rhs - lhs >= -tol }
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum InequalityCase {
    /// ab ≤ a^p/p + b^q/q
    Young { a: f64, b: f64, p: f64, q: f64 },
    /// ab ≤ (ω/p)a^p + ω^{-1/(p-1)}((p-1)/p) b^{p/(p-1)}
    YoungGeneral { a: f64, b: f64, p: f64, omega: f64 },
    /// ∫|xy| ≤ ‖x‖_p ‖y‖_q on (lo, hi); q may be ∞
    Holder { x: ScalarFn, y: ScalarFn, lo: f64, hi: f64, p: f64, q: f64 },
    /// f(mean x) ≤ mean f(x) for convex f on (lo, hi)
    Jensen { f: ScalarFn, x: ScalarFn, lo: f64, hi: f64 },
}

fn conjugate(p: f64, q: f64) -> Result<()> {
    let ip = if p.is_infinite() { 0.0 } else { 1.0 / p };
    let iq = if q.is_infinite() { 0.0 } else { 1.0 / q };
    if p < 1.0 || q < 1.0 || (ip + iq - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("p = {p}, q = {q} are not conjugate")));
    }
    Ok(())
}

const PANELS: usize = 256;

fn lp_norm(x: &ScalarFn, lo: f64, hi: f64, p: f64) -> f64 {
    if p.is_infinite() {
        return linspace(lo, hi, 8 * PANELS + 1).iter().map(|&z| x(z).abs()).fold(0.0, f64::max);
    }
    gl5_composite(|z| x(z).abs().powf(p), lo, hi, PANELS).powf(1.0 / p)
}

pub fn integral_inequality_checks(case: &InequalityCase) -> Result<SlackReport> {
    let tol = 1e-10;
    match case {
        InequalityCase::Young { a, b, p, q } => {
            conjugate(*p, *q)?;
            if *a < 0.0 || *b < 0.0 || p.is_infinite() || q.is_infinite() {
                return Err(Error::InvalidArgument("young needs a, b >= 0 and finite exponents".into()));
            }
            Ok(SlackReport::new(a * b, a.powf(*p) / p + b.powf(*q) / q, tol))
        }
        InequalityCase::YoungGeneral { a, b, p, omega } => {
            if *p <= 1.0 || *omega <= 0.0 || *a < 0.0 || *b < 0.0 {
                return Err(Error::InvalidArgument("young_general needs p > 1, ω > 0, a, b >= 0".into()));
            }
            let rhs = omega / p * a.powf(*p) + omega.powf(-1.0 / (p - 1.0)) * ((p - 1.0) / p) * b.powf(p / (p - 1.0));
            Ok(SlackReport::new(a * b, rhs, tol * (1.0 + rhs.abs())))
        }
        InequalityCase::Holder { x, y, lo, hi, p, q } => {
            conjugate(*p, *q)?;
            if !(hi > lo) {
                return Err(Error::InvalidArgument("empty interval".into()));
            }
            let lhs = gl5_composite(|z| (x(z) * y(z)).abs(), *lo, *hi, PANELS);
            let rhs = lp_norm(x, *lo, *hi, *p) * lp_norm(y, *lo, *hi, *q);
            Ok(SlackReport::new(lhs, rhs, tol * (1.0 + rhs.abs())))
        }
        InequalityCase::Jensen { f, x, lo, hi } => {
            if !(hi > lo) {
                return Err(Error::InvalidArgument("empty interval".into()));
            }
            let len = hi - lo;
            let mean = gl5_composite(|z| x(z), *lo, *hi, PANELS) / len;
            let mean_f = gl5_composite(|z| f(x(z)), *lo, *hi, PANELS) / len;
            Ok(SlackReport::new(f(mean), mean_f, tol * (1.0 + mean_f.abs())))
        }
    }
}

/// Variant with a K∞ decay rate δ and an integrable forcing ℓ: the comparison state
/// ẏ = −δ(y) + ℓ(t) stays below β(y0, t−t0) + 2∫_0^∞ ℓ, the practical offset.
#[derive(Debug, Clone)]
pub struct DecayCheckReport {
    pub comparison: ComparisonReport,
    pub offset: f64,
    pub holds: bool,
}

pub fn isps_decay_check(delta: &ComparisonFn, ell: &TimeFn, y0: f64, horizon: f64, opts: ComparisonOpts) -> Result<DecayCheckReport> {
    if !delta.claimed().k_inf {
        return Err(Error::InvalidRate(format!("{} is not claimed K∞", delta.label())));
    }
    let comparison = forced_comparison_bound(delta, ell, y0, horizon, opts)?;
    let offset = 2.0 * adaptive_gl(&|s: f64| ell.eval(s).abs(), 0.0, horizon, 1e-12);
    let beta = beta_from_theta(delta, y0.max(1.0) * 4.0 + 10.0, horizon)?;
    let holds = comparison
        .times
        .iter()
        .zip(&comparison.solution)
        .all(|(t, y)| *y <= beta.eval(y0, t - opts.t0) + offset + 1e-9 * (1.0 + offset));
    Ok(DecayCheckReport { comparison, offset, holds })
}

/// Variant with an indefinite rate: along ẏ = ν y + |ψ| the bound y0·e^ξ·e^{−η(t−t0)} + ρ holds.
pub fn isps_indefinite_check(pair: &RatePair, y0: f64, t0: f64, nodes: usize) -> Result<ComparisonReport> {
    if !(pair.horizon > t0) {
        return Err(Error::InvalidArgument("t0 must lie before the horizon".into()));
    }
    let abs_psi = {
        let p = pair.psi.clone();
        TimeFn::new("abs_psi", move |t| p.eval(t).abs())
    };
    let g = gronwall_linear(&pair.nu, &abs_psi, y0, t0, pair.horizon, nodes)?;
    let bound: Vec<f64> = g.times.iter().map(|t| y0 * pair.xi.exp() * (-pair.eta * (t - t0)).exp() + pair.rho).collect();
    Ok(ComparisonReport::from_series(g.times, g.rk4, bound))
}

/// Gains of the ISpS conclusion under the indefinite-rate hypotheses:
/// β(r,s) = α₁⁻¹(2α₂(r)e^ξ e^{−ηs}), γ(r) = α₁⁻¹(4κ(r)e^ξ), offset α₁⁻¹(8ρ + 4c·e^ξ).
pub struct IspsGains {
    pub beta: KlFn,
    pub gamma: ComparisonFn,
    pub offset: f64,
}

pub fn indefinite_rate_gains(
    alpha1: &ComparisonFn,
    alpha2: &ComparisonFn,
    kappa: &ComparisonFn,
    pair: &RatePair,
    c: f64,
) -> Result<IspsGains> {
    let inv = alpha1.inverse()?;
    let e = pair.xi.exp();
    let (i1, a2, eta) = (inv.clone(), alpha2.clone(), pair.eta);
    let beta = KlFn::new("indefinite_rate_beta", move |r, s| i1.eval(2.0 * a2.eval(r) * e * (-eta * s).exp()));
    let (i2, k) = (inv.clone(), kappa.clone());
    let gamma = ComparisonFn::from_fn("indefinite_rate_gamma", move |r| i2.eval(4.0 * k.eval(r) * e), f64::INFINITY, ClassSet::K);
    let offset = invert_unbounded(alpha1, 8.0 * pair.rho + 4.0 * c * e, 1e-12)?;
    Ok(IspsGains { beta, gamma, offset })
}

/// Integral gain and offset of the dissipative variant: α(s) = α₁⁻¹(4e^ξ s), offset α₁⁻¹(4ρ + 4c·e^ξ).
pub fn integral_rate_gains(alpha1: &ComparisonFn, pair: &RatePair, c: f64) -> Result<(ComparisonFn, f64)> {
    let inv = alpha1.inverse()?;
    let e = pair.xi.exp();
    let alpha = ComparisonFn::from_fn("integral_rate_alpha", move |s| inv.eval(4.0 * e * s), f64::INFINITY, ClassSet::K);
    let offset = invert_unbounded(alpha1, 4.0 * pair.rho + 4.0 * c * e, 1e-12)?;
    Ok((alpha, offset))
}

/// L_p gain constant ℓ·e^ξ·(2/(qη))^{1/q} for the input term of the L_p estimate.
pub fn lp_gain(ell: f64, pair: &RatePair, q: f64) -> f64 {
    ell * pair.xi.exp() * (2.0 / (q * pair.eta)).powf(1.0 / q)
}

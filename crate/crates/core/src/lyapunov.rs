//! Lyapunov objects for exponentially stable evolution families: P(t), the non-coercive
//! V(t,x) = ∫_t^∞ ‖W(τ,t)x‖² dτ, Z = ln(1+V), Dini derivatives and dissipation checks.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::compfun::ComparisonFn;
use crate::error::{Error, Result};
use crate::evolution::{Breaks, ExpFit, GeneratorSpec, Propagator};
use crate::mildsolve::{solve_mild, InputSignal, SemilinearSystem, SolveOpts, TrajStatus};
use crate::numeric::sym_eigenvalues;

pub const DINI_STEPS: [f64; 3] = [1e-2, 1e-3, 1e-4];

#[derive(Debug, Clone, Copy)]
pub struct LyapOpts {
    /// bound on the neglected tail k²e^{−2wT*}/(2w)
    pub tol: f64,
    /// quadrature and propagation step of the τ-sweep
    pub quad_step: f64,
}

impl Default for LyapOpts {
    fn default() -> Self {
        LyapOpts { tol: 1e-10, quad_step: 1e-3 }
    }
}

/// T* with k²e^{−2wT*}/(2w) = tol.
pub fn tail_horizon(fit: &ExpFit, tol: f64) -> f64 {
    ((fit.k * fit.k / (2.0 * fit.w * tol)).ln() / (2.0 * fit.w)).max(1.0)
}

fn require_fit(fit: Option<ExpFit>) -> Result<ExpFit> {
    match fit {
        Some(f) if f.w > 0.0 && f.k >= 1.0 => Ok(f),
        _ => Err(Error::Precondition("no exponential fit (k, w): P(t) undefined".into())),
    }
}

/// Simpson weights for an even number of panels.
fn simpson_weight(j: usize, n: usize, h: f64) -> f64 {
    let c = if j == 0 || j == n {
        1.0
    } else if j % 2 == 1 {
        4.0
    } else {
        2.0
    };
    c * h / 3.0
}

/// P(t) = ∫_t^{t+T*} W(τ,t)ᵀW(τ,t) dτ by composite Simpson on the grid t + jh.
#[derive(Clone)]
pub struct QuadraticCertificate {
    pub gen: GeneratorSpec,
    pub fit: ExpFit,
    pub opts: LyapOpts,
    pub horizon: f64,
    panels: usize,
    h: f64,
}

impl std::fmt::Debug for QuadraticCertificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "QuadraticCertificate({:?}, {:?}, T*={})", self.gen, self.fit, self.horizon)
    }
}

impl QuadraticCertificate {
    pub fn new(gen: &GeneratorSpec, fit: Option<ExpFit>, opts: LyapOpts) -> Result<Self> {
        let fit = require_fit(fit)?;
        let horizon = tail_horizon(&fit, opts.tol);
        let mut panels = (horizon / opts.quad_step).ceil() as usize;
        panels += panels % 2;
        Ok(QuadraticCertificate { gen: gen.clone(), fit, opts, horizon, panels, h: horizon / panels as f64 })
    }

    pub fn p_at(&self, t: f64) -> Result<DMatrix<f64>> {
        let prop = Propagator::with_step(&self.gen, self.h);
        let n = self.gen.dim;
        let mut w = DMatrix::<f64>::identity(n, n);
        let mut p = DMatrix::<f64>::identity(n, n) * simpson_weight(0, self.panels, self.h);
        for j in 1..=self.panels {
            let a = t + (j - 1) as f64 * self.h;
            let b = t + j as f64 * self.h;
            w = prop.matrix(b, a)? * w;
            p += w.transpose() * &w * simpson_weight(j, self.panels, self.h);
        }
        Ok((&p + p.transpose()) * 0.5)
    }

    /// ⟨P(t)x, x⟩.
    pub fn quad_form(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        Ok(x.dot(&(self.p_at(t)? * x)))
    }

    /// (μ₁, μ₂) = extreme eigenvalues of P over the probe times.
    pub fn mu_bounds(&self, times: &[f64]) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for &t in times {
            let ev = sym_eigenvalues(&self.p_at(t)?);
            lo = lo.min(ev[0]);
            hi = hi.max(*ev.last().unwrap());
        }
        Ok((lo, hi))
    }

    /// Non-coercive V(t,x) by trajectory quadrature on the same grid.
    pub fn v_trajectory(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        let prop = Propagator::with_step(&self.gen, self.h);
        let mut y = x.clone();
        let mut v = x.norm_squared() * simpson_weight(0, self.panels, self.h);
        for j in 1..=self.panels {
            y = prop.apply(t + j as f64 * self.h, t + (j - 1) as f64 * self.h, &y)?;
            v += y.norm_squared() * simpson_weight(j, self.panels, self.h);
        }
        Ok(v)
    }

    /// ‖AᵀP + PA + Ṗ + I‖ with central-difference Ṗ.
    pub fn residual(&self, t: f64, h: f64) -> Result<f64> {
        let p = self.p_at(t)?;
        let pd = (self.p_at(t + h)? - self.p_at(t - h)?) / (2.0 * h);
        let a = self.gen.matrix_at(t);
        let n = self.gen.dim;
        let r = a.transpose() * &p + &p * &a + pd + DMatrix::<f64>::identity(n, n);
        Ok(crate::numeric::op_norm(&r, Default::default()))
    }
}

pub fn build_p(gen: &GeneratorSpec, fit: Option<ExpFit>, t: f64, tol: f64) -> Result<DMatrix<f64>> {
    QuadraticCertificate::new(gen, fit, LyapOpts { tol, ..Default::default() })?.p_at(t)
}

pub fn lyapunov_residual(gen: &GeneratorSpec, fit: Option<ExpFit>, t: f64, h: f64) -> Result<f64> {
    QuadraticCertificate::new(gen, fit, LyapOpts::default())?.residual(t, h)
}

pub fn eval_v_noncoercive(gen: &GeneratorSpec, fit: Option<ExpFit>, t: f64, x: &DVector<f64>, tol: f64) -> Result<f64> {
    QuadraticCertificate::new(gen, fit, LyapOpts { tol, ..Default::default() })?.v_trajectory(t, x)
}

/// Sandwich constants (M²/(2λ), k²/(2w)) for ‖W(t,s)x‖ ≥ Me^{−λ(t−s)}‖x‖.
pub fn sandwich_constants(fit: &ExpFit, lower: Option<(f64, f64)>) -> (f64, f64) {
    let lo = lower.map_or(0.0, |(m, lambda)| m * m / (2.0 * lambda));
    (lo, fit.k * fit.k / (2.0 * fit.w))
}

/// |V(t,x) − V(t,y)| ≤ (2k²r/w)‖x − y‖ on the ball of radius r.
pub fn local_lipschitz_constant(fit: &ExpFit, r: f64) -> f64 {
    2.0 * fit.k * fit.k * r / fit.w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapKind {
    QuadraticP,
    NoncoerciveIntegral,
    LogIiss,
    UserClosedForm,
}

type VFn = Arc<dyn Fn(f64, &DVector<f64>) -> Result<f64> + Send + Sync>;

#[derive(Clone)]
pub struct LyapunovFn {
    pub kind: LyapKind,
    eval: VFn,
    pub label: String,
}

impl std::fmt::Debug for LyapunovFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LyapunovFn({:?}, {})", self.kind, self.label)
    }
}

impl LyapunovFn {
    pub fn quadratic(cert: QuadraticCertificate) -> Self {
        let c = Arc::new(cert);
        LyapunovFn { kind: LyapKind::QuadraticP, eval: Arc::new(move |t, x| c.quad_form(t, x)), label: "xᵀP(t)x".into() }
    }

    pub fn noncoercive(cert: QuadraticCertificate) -> Self {
        let c = Arc::new(cert);
        LyapunovFn {
            kind: LyapKind::NoncoerciveIntegral,
            eval: Arc::new(move |t, x| c.v_trajectory(t, x)),
            label: "∫‖W(τ,t)x‖²dτ".into(),
        }
    }

    /// Z = ln(1 + V).
    pub fn log_iiss(inner: LyapunovFn) -> Self {
        let f = inner.eval.clone();
        LyapunovFn { kind: LyapKind::LogIiss, eval: Arc::new(move |t, x| Ok(f(t, x)?.ln_1p())), label: format!("ln(1+{})", inner.label) }
    }

    pub fn closed_form<F>(label: &str, f: F) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        LyapunovFn { kind: LyapKind::UserClosedForm, eval: Arc::new(move |t, x| Ok(f(t, x))), label: label.into() }
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        (self.eval)(t, x)
    }
}

#[derive(Debug, Clone)]
pub struct DiniEstimate {
    pub value: f64,
    /// (h, forward quotient)
    pub raw: Vec<(f64, f64)>,
}

/// D⁺V along the flow from (t, x, u): forward quotients over `h_seq`, Richardson-extrapolated
/// from the two smallest steps.
pub fn dini_derivative(v: &LyapunovFn, sys: &SemilinearSystem, t: f64, x: &DVector<f64>, u: &InputSignal, h_seq: &[f64]) -> Result<DiniEstimate> {
    if h_seq.len() < 2 {
        return Err(Error::InvalidArgument("need at least two steps".into()));
    }
    let mut hs = h_seq.to_vec();
    hs.sort_by(|a, b| b.total_cmp(a));
    let v0 = v.eval(t, x)?;
    let mut raw = Vec::new();
    for &h in &hs {
        let tr = solve_mild(sys, t, x, u, t + h, SolveOpts::with_step(h / 4.0))?;
        if tr.status != TrajStatus::Complete {
            return Err(Error::Numerical { last_valid_time: tr.final_time(), reason: "blow-up inside Dini window".into() });
        }
        raw.push((h, (v.eval(t + h, tr.final_state())? - v0) / h));
    }
    let (h1, q1) = raw[raw.len() - 2];
    let (h2, q2) = raw[raw.len() - 1];
    Ok(DiniEstimate { value: q2 + (q2 - q1) * h2 / (h1 - h2), raw })
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum DissipationForm {
    /// ‖x‖ ≥ κ(‖u‖) ⟹ D⁺V ≤ −μ(V)
    Implication { kappa: ComparisonFn, mu: RealFn },
    /// D⁺V ≤ −η(‖x‖) + χ(‖u‖)
    Dissipative { eta: RealFn, chi: RealFn },
    /// D⁺V ≤ −‖x‖² + ηk²/(2w)‖x‖² + k²/(2ηw)‖B‖²‖u‖²
    LinearBound { eta: f64, fit: ExpFit, b_sup: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct DissipationParams {
    pub tol: f64,
    pub points_per_trajectory: usize,
    pub horizon: f64,
    pub h_seq: [f64; 3],
}

impl Default for DissipationParams {
    fn default() -> Self {
        DissipationParams { tol: 1e-4, points_per_trajectory: 12, horizon: 5.0, h_seq: DINI_STEPS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationRow {
    pub time: f64,
    pub state_norm: f64,
    pub input_norm: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct DissipationReport {
    pub rows: Vec<DissipationRow>,
    pub checked: usize,
    pub violations: usize,
    pub worst: Option<DissipationRow>,
    /// every violation shrinks when the Dini steps are refined tenfold
    pub violations_shrink: bool,
}

impl DissipationReport {
    pub fn fraction_ok(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            1.0 - self.violations as f64 / self.checked as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,state_norm,input_norm,lhs,rhs,slack\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.time, r.state_norm, r.input_norm, r.lhs, r.rhs, r.slack));
        }
        s
    }
}

fn dissipation_rhs(form: &DissipationForm, v: f64, xn: f64, un: f64) -> Option<f64> {
    match form {
        DissipationForm::Implication { kappa, mu } => (xn >= kappa.eval(un)).then(|| -mu(v)),
        DissipationForm::Dissipative { eta, chi } => Some(-eta(xn) + chi(un)),
        DissipationForm::LinearBound { eta, fit, b_sup } => {
            let c = fit.k * fit.k / (2.0 * fit.w);
            Some(-xn * xn + eta * c * xn * xn + c / eta * b_sup * b_sup * un * un)
        }
    }
}

/// Samples points along each ensemble trajectory and checks the chosen dissipation form
/// against Dini estimates, with additive tolerance tol·(1 + ‖x‖²).
pub fn check_dissipation(v: &LyapunovFn, sys: &SemilinearSystem, ensemble: &[(f64, DVector<f64>, InputSignal)], form: &DissipationForm, params: DissipationParams) -> Result<DissipationReport> {
    let per: Vec<Result<Vec<(DissipationRow, bool)>>> = ensemble
        .par_iter()
        .map(|(t0, x0, u)| {
            let tr = solve_mild(sys, *t0, x0, u, t0 + params.horizon, SolveOpts::default())?;
            let m = params.points_per_trajectory.max(1);
            let mut rows = Vec::new();
            for i in 0..m {
                let t = t0 + params.horizon * i as f64 / m as f64;
                let Some(x) = tr.state_at(t) else { break };
                let xn = sys.state_norm.norm(&x);
                let un = u.norm_at(t);
                let vv = v.eval(t, &x)?;
                let Some(rhs) = dissipation_rhs(form, vv, xn, un) else { continue };
                let d = dini_derivative(v, sys, t, &x, u, &params.h_seq)?;
                let slack = rhs - d.value;
                let allowance = params.tol * (1.0 + xn * xn);
                let mut shrinks = true;
                if slack < -allowance {
                    let fine: Vec<f64> = params.h_seq.iter().map(|h| h / 10.0).collect();
                    let d2 = dini_derivative(v, sys, t, &x, u, &fine)?;
                    shrinks = (rhs - d2.value) > slack;
                }
                rows.push((DissipationRow { time: t, state_norm: xn, input_norm: un, lhs: d.value, rhs, slack }, shrinks));
            }
            Ok(rows)
        })
        .collect();
    let mut rep = DissipationReport { rows: Vec::new(), checked: 0, violations: 0, worst: None, violations_shrink: true };
    for r in per {
        for (row, shrinks) in r? {
            rep.checked += 1;
            if row.slack < -params.tol * (1.0 + row.state_norm * row.state_norm) {
                rep.violations += 1;
                rep.violations_shrink &= shrinks;
            }
            if rep.worst.map_or(true, |w| row.slack < w.slack) {
                rep.worst = Some(row);
            }
            rep.rows.push(row);
        }
    }
    Ok(rep)
}

/// A(t) = A₀ + ε sin(ωt + φ)J with sym(A(t)) ≤ −¼I, so (k, w) = (1, ¼) is a valid bound.
pub fn random_stable_ltv<R: Rng>(rng: &mut R) -> GeneratorSpec {
    let a1 = rng.gen_range(1.0..3.0);
    let a2 = rng.gen_range(1.0..3.0);
    let skew = rng.gen_range(-1.0..1.0);
    let c = rng.gen_range(-0.5..0.5);
    let a0 = DMatrix::from_row_slice(2, 2, &[-a1, skew + c, -skew, -a2]);
    let mut j = DMatrix::<f64>::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
    j /= j.norm().max(1.0);
    let eps = rng.gen_range(0.1..0.5);
    let omega = rng.gen_range(0.5..2.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    GeneratorSpec::dense("random_ltv", 2, move |t| &a0 + &j * (eps * (omega * t + phase).sin()), Breaks::None, false)
}

//! Trajectory-ensemble certificates for the ISS family of estimates, a falsifier for
//! unstable regimes and the linear equivalence audit.
//!
//! All verdicts are grid verdicts: the quantifiers over initial states, inputs and
//! initial times range over the ensemble only.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::compfun::{fit_kl, ComparisonFn, FitKlOpts, KlEnvelope, KlFn, KlSample};
use crate::error::{Error, Result};
use crate::evolution::{classify_stability, Breaks, ClassifyOpts, GeneratorSpec};
use crate::lyapunov::random_stable_ltv;
use crate::mildsolve::{solve_mild, InputNorm, InputSignal, SemilinearSystem, SolveOpts, TrajStatus};
use crate::numeric::percentile;
use crate::pde_examples::{assemble, Grid1D, OperatorKind};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Property {
    Iss,
    Liss,
    Eiss,
    Ugas0,
    Isps,
    Eisps,
    Ugpas0,
    Cpuag,
    Iiss,
    Iisps,
    LpIsps(f64),
}

impl Property {
    pub fn name(&self) -> String {
        match self {
            Property::Iss => "ISS".into(),
            Property::Liss => "LISS".into(),
            Property::Eiss => "eISS".into(),
            Property::Ugas0 => "0-UGAS".into(),
            Property::Isps => "ISpS".into(),
            Property::Eisps => "eISpS".into(),
            Property::Ugpas0 => "0-UGpAS".into(),
            Property::Cpuag => "CpUAG".into(),
            Property::Iiss => "iISS".into(),
            Property::Iisps => "iISpS".into(),
            Property::LpIsps(p) => format!("LpISpS({p})"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        Ok(match t {
            "ISS" => Property::Iss,
            "LISS" => Property::Liss,
            "eISS" => Property::Eiss,
            "0-UGAS" | "UGAS0" => Property::Ugas0,
            "ISpS" => Property::Isps,
            "eISpS" => Property::Eisps,
            "0-UGpAS" | "UGpAS0" => Property::Ugpas0,
            "CpUAG" => Property::Cpuag,
            "iISS" => Property::Iiss,
            "iISpS" => Property::Iisps,
            _ => {
                let inner = t.strip_prefix("LpISpS(").and_then(|r| r.strip_suffix(')'));
                match inner.and_then(|p| p.parse::<f64>().ok()) {
                    Some(p) if p >= 1.0 => Property::LpIsps(p),
                    _ => return Err(Error::InvalidArgument(format!("unknown property '{t}'"))),
                }
            }
        })
    }

    /// Carries a constant offset r.
    pub fn practical(&self) -> bool {
        matches!(self, Property::Isps | Property::Eisps | Property::Ugpas0 | Property::Cpuag | Property::Iisps | Property::LpIsps(_))
    }

    pub fn zero_input_only(&self) -> bool {
        matches!(self, Property::Ugas0 | Property::Ugpas0)
    }

    pub fn exponential(&self) -> bool {
        matches!(self, Property::Eiss | Property::Eisps)
    }
}

/// Integrand catalog for integral gains ∫μ(‖u(s)‖)ds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuChoice {
    Identity,
    Square,
    Saturating,
}

impl MuChoice {
    pub const ALL: [MuChoice; 3] = [MuChoice::Identity, MuChoice::Square, MuChoice::Saturating];

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            MuChoice::Identity => s,
            MuChoice::Square => s * s,
            MuChoice::Saturating => s / (1.0 + s),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            MuChoice::Identity => "identity",
            MuChoice::Square => "square",
            MuChoice::Saturating => "saturating",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        MuChoice::ALL.into_iter().find(|m| m.label() == s).ok_or_else(|| Error::InvalidArgument(format!("unknown μ '{s}'")))
    }
}

/// Which input norm enters sup-type gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupMode {
    /// sup over [t0, t]
    Causal,
    /// sup over the whole simulated window
    FullHorizon,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOpts {
    pub step: Option<f64>,
    pub samples_per_run: usize,
    /// late-t0 samples may exceed the early-t0 envelope by this factor
    pub held_out_factor: f64,
    /// ... evaluated this much earlier in the lag, absorbing bounded phase effects of time-varying generators
    pub held_out_shift: f64,
    /// fraction of the lag window used for the zero-input tail floor
    pub floor_window: f64,
    pub isps_percentile: f64,
    pub mu: MuChoice,
    pub sup_mode: SupMode,
    pub eiss_a_min: f64,
    /// override of the CpUAG shift c
    pub cpuag_c: Option<f64>,
    pub kl: FitKlOpts,
}

impl Default for FitOpts {
    fn default() -> Self {
        FitOpts {
            step: None,
            samples_per_run: 41,
            held_out_factor: 1.5,
            held_out_shift: 1.0,
            floor_window: 0.2,
            isps_percentile: 98.0,
            mu: MuChoice::Identity,
            sup_mode: SupMode::Causal,
            eiss_a_min: 0.01,
            cpuag_c: None,
            kl: FitKlOpts::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum IcSpec {
    States(Vec<DVector<f64>>),
    /// `count` random directions scaled to log-spaced norms in [r_min, r_max]
    Ball { count: usize, r_min: f64, r_max: f64 },
    /// every direction at every norm
    Directions { directions: Vec<DVector<f64>>, norms: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub ics: IcSpec,
    pub inputs: Vec<InputSignal>,
    pub t0_list: Vec<f64>,
    /// absolute end time of the latest run; every run covers the lag window [0, horizon − max t0]
    pub horizon: f64,
    pub seed: u64,
}

fn log_levels(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![b];
    }
    (0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64)).collect()
}

impl EnsembleSpec {
    /// 8 initial conditions with norms 10⁻²..10, 6 inputs, t0 ∈ {0, 1, 2.5, 5}, lag window 20.
    pub fn default_for(sys: &SemilinearSystem, seed: u64) -> Self {
        EnsembleSpec {
            ics: IcSpec::Ball { count: 8, r_min: 1e-2, r_max: 10.0 },
            inputs: default_inputs(sys, seed),
            t0_list: vec![0.0, 1.0, 2.5, 5.0],
            horizon: 25.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n_ics = match &self.ics {
            IcSpec::States(v) => v.len(),
            IcSpec::Ball { count, r_min, r_max } => {
                if !(*r_min > 0.0 && r_max >= r_min) {
                    return Err(Error::InvalidArgument("ball radii must satisfy 0 < r_min <= r_max".into()));
                }
                *count
            }
            IcSpec::Directions { directions, norms } => directions.len() * norms.len(),
        };
        if n_ics == 0 || self.inputs.is_empty() || self.t0_list.is_empty() {
            return Err(Error::InvalidArgument("ensemble must be non-empty in every axis".into()));
        }
        let t_max = self.t0_list.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(self.horizon > t_max) {
            return Err(Error::InvalidArgument(format!("horizon {} must exceed max t0 {t_max}", self.horizon)));
        }
        Ok(())
    }

    pub fn lag_span(&self) -> f64 {
        self.horizon - self.t0_list.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn initial_states(&self, sys: &SemilinearSystem) -> Result<Vec<DVector<f64>>> {
        let n = sys.dim();
        let unit = |v: &DVector<f64>| -> Result<DVector<f64>> {
            let nv = sys.state_norm.norm(v);
            if v.len() != n || !(nv > 0.0) {
                return Err(Error::InvalidArgument("initial direction must be nonzero with the system dimension".into()));
            }
            Ok(v / nv)
        };
        match &self.ics {
            IcSpec::States(v) => {
                if v.iter().any(|x| x.len() != n) {
                    return Err(Error::InvalidArgument("initial state dimension mismatch".into()));
                }
                Ok(v.clone())
            }
            IcSpec::Ball { count, r_min, r_max } => {
                let mut g = rng::stream(self.seed, rng::label("ensemble_ics"));
                log_levels(*r_min, *r_max, *count)
                    .into_iter()
                    .map(|r| {
                        let d = DVector::from_fn(n, |_, _| g.gen_range(-1.0..1.0) + 1e-3);
                        Ok(unit(&d)? * r)
                    })
                    .collect()
            }
            IcSpec::Directions { directions, norms } => {
                let mut out = Vec::new();
                for d in directions {
                    let u = unit(d)?;
                    out.extend(norms.iter().map(|r| &u * *r));
                }
                Ok(out)
            }
        }
    }
}

/// Six inputs: two constants, two sines, a late switch-on and an early switch-off.
pub fn default_inputs(sys: &SemilinearSystem, seed: u64) -> Vec<InputSignal> {
    let m = sys.input_dim;
    let mut g = rng::stream(seed, rng::label("ensemble_inputs"));
    let signs = DVector::from_fn(m, |_, _| if g.gen_bool(0.5) { 1.0 } else { -1.0 });
    let ones = DVector::from_element(m, 1.0);
    let nrm = sys.input_norm;
    vec![
        InputSignal::constant(&ones * 0.5).with_label("const_0.5"),
        InputSignal::constant(&signs * -2.0).with_label("const_signs_2"),
        InputSignal::sine(ones.clone(), 0.2, 0.0).with_label("sine_1_0.2"),
        InputSignal::sine(&signs * 3.0, 1.0, 0.5).with_label("sine_3_1"),
        InputSignal::step(3.0, DVector::zeros(m), &signs * 1.5).with_label("step_on_3"),
        InputSignal::step(2.0, &ones * 2.0, DVector::zeros(m)).with_label("step_off_2"),
    ]
    .into_iter()
    .map(|u| u.with_norm(nrm))
    .collect()
}

/// One simulated trajectory sampled on the common lag grid.
#[derive(Debug, Clone)]
pub struct Run {
    pub t0: f64,
    pub ic: usize,
    pub x0: DVector<f64>,
    pub r: f64,
    /// index into the ensemble inputs; none for the zero input
    pub input: Option<usize>,
    pub label: String,
    pub lags: Vec<f64>,
    pub norms: Vec<f64>,
    pub status: TrajStatus,
    node_times: Vec<f64>,
    node_unorms: Vec<f64>,
    sup_full: f64,
}

impl Run {
    /// Gain argument at each sampled lag.
    fn args(&self, property: Property, opts: &FitOpts) -> Vec<f64> {
        if self.input.is_none() {
            return vec![0.0; self.lags.len()];
        }
        let t = &self.node_times;
        let u = &self.node_unorms;
        let cumulative = |g: &dyn Fn(f64) -> f64| -> Vec<f64> {
            let mut acc = vec![0.0; t.len()];
            for i in 1..t.len() {
                acc[i] = acc[i - 1] + 0.5 * (t[i] - t[i - 1]) * (g(u[i - 1]) + g(u[i]));
            }
            acc
        };
        let at = |vals: &[f64], lag: f64| -> f64 {
            let tt = self.t0 + lag;
            let k = t.partition_point(|x| *x <= tt);
            if k == 0 {
                vals[0]
            } else if k >= t.len() {
                vals[t.len() - 1]
            } else {
                let w = (tt - t[k - 1]) / (t[k] - t[k - 1]);
                vals[k - 1] * (1.0 - w) + vals[k] * w
            }
        };
        match property {
            Property::Iiss | Property::Iisps => {
                let acc = cumulative(&|s| opts.mu.eval(s));
                self.lags.iter().map(|l| at(&acc, *l)).collect()
            }
            Property::LpIsps(p) => {
                let acc = cumulative(&|s| s.powf(p));
                self.lags.iter().map(|l| at(&acc, *l).max(0.0).powf(1.0 / p)).collect()
            }
            _ => match opts.sup_mode {
                SupMode::FullHorizon => vec![self.sup_full; self.lags.len()],
                SupMode::Causal => {
                    let mut run = Vec::with_capacity(u.len());
                    let mut m = 0.0f64;
                    for v in u {
                        m = m.max(*v);
                        run.push(m);
                    }
                    self.lags
                        .iter()
                        .map(|l| {
                            let k = t.partition_point(|x| *x <= self.t0 + l + 1e-12);
                            run[k.max(1) - 1]
                        })
                        .collect()
                }
            },
        }
    }
}

/// Simulates every (t0, x0, u) triple plus a zero-input run per (t0, x0), in parallel.
pub fn run_ensemble(sys: &SemilinearSystem, spec: &EnsembleSpec, opts: &FitOpts) -> Result<Vec<Run>> {
    spec.validate()?;
    let states = spec.initial_states(sys)?;
    let span = spec.lag_span();
    let zero = InputSignal::zero(sys.input_dim).with_norm(sys.input_norm).with_label("zero");
    let mut jobs = Vec::new();
    for &t0 in &spec.t0_list {
        for ic in 0..states.len() {
            jobs.push((t0, ic, None));
            for k in 0..spec.inputs.len() {
                jobs.push((t0, ic, Some(k)));
            }
        }
    }
    let m = opts.samples_per_run.max(2);
    let lags: Vec<f64> = (0..m).map(|i| span * i as f64 / (m - 1) as f64).collect();
    let solve_opts = SolveOpts { step: opts.step, ..Default::default() };
    jobs.par_iter()
        .map(|&(t0, ic, input)| {
            let u = input.map_or(&zero, |k| &spec.inputs[k]);
            let x0 = &states[ic];
            let tr = solve_mild(sys, t0, x0, u, t0 + span, solve_opts)?;
            let norms = if tr.status == TrajStatus::Complete {
                lags.iter().map(|l| tr.state_at(t0 + l).map_or(f64::INFINITY, |x| sys.state_norm.norm(&x))).collect()
            } else {
                Vec::new()
            };
            Ok(Run {
                t0,
                ic,
                x0: x0.clone(),
                r: sys.state_norm.norm(x0),
                input,
                label: u.label.replace(',', ";"),
                lags: lags.clone(),
                norms,
                status: tr.status,
                sup_full: u.sup_norm(t0, t0 + span),
                node_times: tr.times,
                node_unorms: tr.input_norms,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub t0: f64,
    pub x0_norm: f64,
    pub input: String,
    pub lag: f64,
    pub norm: f64,
    pub bound: f64,
    /// norm/bound − 1
    pub margin: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CertVerdict {
    CertifiedOnGrid,
    Falsified(Witness),
}

#[derive(Debug, Clone)]
pub enum BetaRepr {
    None,
    Envelope(KlEnvelope),
    /// β(r,t) = M r e^{−at}
    Exponential { m: f64, a: f64 },
}

impl BetaRepr {
    pub fn eval(&self, r: f64, t: f64) -> f64 {
        match self {
            BetaRepr::None => 0.0,
            BetaRepr::Envelope(e) => e.eval(r, t),
            BetaRepr::Exponential { m, a } => m * r * (-a * t).exp(),
        }
    }

    pub fn kl(&self) -> Option<KlFn> {
        match self {
            BetaRepr::None => None,
            BetaRepr::Envelope(e) => Some(KlFn::from_envelope(e.clone())),
            BetaRepr::Exponential { m, a } => Some(KlFn::exponential(*m, *a)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackRow {
    pub t0: f64,
    pub x0_norm: f64,
    pub run: usize,
    pub lag: f64,
    pub norm: f64,
    pub arg: f64,
    pub bound: f64,
    pub slack: f64,
}

/// bound = β(β_scale·‖x0‖ + c, t − t0) + γ(arg) + r
#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    pub property: Property,
    pub beta: BetaRepr,
    pub beta_scale: f64,
    pub shift_c: f64,
    /// knots of the piecewise-linear gain (α for integral gains)
    pub gamma_knots: Option<(Vec<f64>, Vec<f64>)>,
    pub offset_r: f64,
    pub mu: Option<MuChoice>,
    pub liss_radii: Option<(f64, f64)>,
    pub verdict: CertVerdict,
    pub digest: u64,
    pub run_labels: Vec<String>,
    pub slack: Vec<SlackRow>,
    /// ISpS certificate derived from a CpUAG certificate
    pub derived: Option<Box<StabilityCertificate>>,
}

fn eval_knots(xs: &[f64], ys: &[f64], s: f64) -> f64 {
    if s <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    if s >= xs[n - 1] {
        // linear continuation with the last slope keeps γ increasing
        let slope = if n >= 2 { ((ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2])).max(0.0) } else { 0.0 };
        return ys[n - 1] + slope * (s - xs[n - 1]);
    }
    let k = xs.partition_point(|x| *x <= s);
    let w = (s - xs[k - 1]) / (xs[k] - xs[k - 1]);
    ys[k - 1] * (1.0 - w) + ys[k] * w
}

impl StabilityCertificate {
    fn empty(property: Property) -> Self {
        StabilityCertificate {
            property,
            beta: BetaRepr::None,
            beta_scale: 1.0,
            shift_c: 0.0,
            gamma_knots: None,
            offset_r: 0.0,
            mu: None,
            liss_radii: None,
            verdict: CertVerdict::CertifiedOnGrid,
            digest: 0,
            run_labels: Vec::new(),
            slack: Vec::new(),
            derived: None,
        }
    }

    pub fn is_certified(&self) -> bool {
        self.verdict == CertVerdict::CertifiedOnGrid
    }

    pub fn witness(&self) -> Option<&Witness> {
        match &self.verdict {
            CertVerdict::Falsified(w) => Some(w),
            CertVerdict::CertifiedOnGrid => None,
        }
    }

    pub fn gamma_eval(&self, s: f64) -> f64 {
        self.gamma_knots.as_ref().map_or(0.0, |(xs, ys)| eval_knots(xs, ys, s))
    }

    pub fn gamma(&self) -> Option<ComparisonFn> {
        let (xs, ys) = self.gamma_knots.as_ref()?;
        ComparisonFn::from_samples(xs.clone(), ys.clone()).ok()
    }

    /// max γ(s)/s over the knots
    pub fn gamma_slope(&self) -> f64 {
        self.gamma_knots.as_ref().map_or(0.0, |(xs, ys)| xs.iter().zip(ys).filter(|(x, _)| **x > 0.0).map(|(x, y)| y / x).fold(0.0, f64::max))
    }

    pub fn bound(&self, r: f64, lag: f64, arg: f64) -> f64 {
        self.beta.eval(self.beta_scale * r + self.shift_c, lag) + self.gamma_eval(arg) + self.offset_r
    }

    pub fn slack_csv(&self) -> String {
        let mut s = String::from("t0,x0_norm,input,lag,state_norm,gain_arg,bound,slack\n");
        for r in &self.slack {
            let lab = self.run_labels.get(r.run).map_or("?", |s| s.as_str());
            let _ = writeln!(s, "{},{},{}#{},{},{},{},{},{}", r.t0, r.x0_norm, lab, r.run, r.lag, r.norm, r.arg, r.bound, r.slack);
        }
        s
    }

    /// Plain-text serialization: key=value header, envelope tables, slack CSV appendix.
    pub fn to_text(&self) -> String {
        let mut s = String::from("certificate v1\n");
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        let _ = writeln!(s, "property={}", self.property.name());
        match &self.verdict {
            CertVerdict::CertifiedOnGrid => s.push_str("verdict=certified_on_grid\n"),
            CertVerdict::Falsified(w) => {
                s.push_str("verdict=falsified\n");
                let _ = writeln!(s, "witness={},{},{},{},{},{},{}", w.t0, w.x0_norm, w.input.replace(',', ";"), w.lag, w.norm, w.bound, w.margin);
                let _ = writeln!(s, "reason={}", w.reason.replace('\n', " "));
            }
        }
        match &self.beta {
            BetaRepr::None => s.push_str("beta=none\n"),
            BetaRepr::Exponential { m, a } => {
                let _ = writeln!(s, "beta=exponential;{m};{a}");
            }
            BetaRepr::Envelope(e) => {
                s.push_str("beta=envelope\n");
                let _ = writeln!(s, "envelope_tail_rate={}", e.tail_rate);
                let _ = writeln!(s, "envelope_tilt={}", e.tilt);
                let _ = writeln!(s, "envelope_radii={}", join(&e.radii));
                let _ = writeln!(s, "envelope_times={}", join(&e.times));
                for row in &e.table {
                    let _ = writeln!(s, "envelope_row={}", join(row));
                }
            }
        }
        let _ = writeln!(s, "beta_scale={}", self.beta_scale);
        let _ = writeln!(s, "shift_c={}", self.shift_c);
        let _ = writeln!(s, "offset_r={}", self.offset_r);
        let _ = writeln!(s, "mu={}", self.mu.map_or("none", |m| m.label()));
        match self.liss_radii {
            Some((a, b)) => {
                let _ = writeln!(s, "liss_radii={a};{b}");
            }
            None => s.push_str("liss_radii=none\n"),
        }
        if let Some((xs, ys)) = &self.gamma_knots {
            let _ = writeln!(s, "gamma_xs={}", join(xs));
            let _ = writeln!(s, "gamma_ys={}", join(ys));
        }
        let _ = writeln!(s, "digest={:016x}", self.digest);
        for l in &self.run_labels {
            let _ = writeln!(s, "run={l}");
        }
        s.push_str("[slack]\n");
        s.push_str(&self.slack_csv());
        s.push_str("[end]\n");
        if let Some(d) = &self.derived {
            s.push_str("[derived]\n");
            s.push_str(&d.to_text());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let (c, _) = parse_cert(&lines, 0)?;
        Ok(c)
    }
}

fn bad(msg: &str) -> Error {
    Error::InvalidArgument(format!("certificate parse error: {msg}"))
}

fn pf(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| bad(&format!("not a number '{s}'")))
}

fn pvec(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(pf).collect()
}

fn parse_cert(lines: &[&str], mut i: usize) -> Result<(StabilityCertificate, usize)> {
    if lines.get(i).map(|l| l.trim()) != Some("certificate v1") {
        return Err(bad("missing header"));
    }
    i += 1;
    let mut c = StabilityCertificate::empty(Property::Iss);
    let mut env = KlEnvelope { radii: vec![], times: vec![], table: vec![], tail_rate: 0.0, tilt: 0.0 };
    let mut beta_kind = String::new();
    let mut witness: Option<Witness> = None;
    let mut falsified = false;
    let mut gx = None;
    let mut gy = None;
    while i < lines.len() && lines[i] != "[slack]" {
        let (k, v) = lines[i].split_once('=').ok_or_else(|| bad(lines[i]))?;
        match k {
            "property" => c.property = Property::parse(v)?,
            "verdict" => falsified = v == "falsified",
            "witness" => {
                let p: Vec<&str> = v.split(',').collect();
                if p.len() != 7 {
                    return Err(bad("witness needs 7 fields"));
                }
                witness = Some(Witness {
                    t0: pf(p[0])?,
                    x0_norm: pf(p[1])?,
                    input: p[2].to_string(),
                    lag: pf(p[3])?,
                    norm: pf(p[4])?,
                    bound: pf(p[5])?,
                    margin: pf(p[6])?,
                    reason: String::new(),
                });
            }
            "reason" => {
                if let Some(w) = witness.as_mut() {
                    w.reason = v.to_string();
                }
            }
            "beta" => beta_kind = v.to_string(),
            "envelope_tail_rate" => env.tail_rate = pf(v)?,
            "envelope_tilt" => env.tilt = pf(v)?,
            "envelope_radii" => env.radii = pvec(v)?,
            "envelope_times" => env.times = pvec(v)?,
            "envelope_row" => env.table.push(pvec(v)?),
            "beta_scale" => c.beta_scale = pf(v)?,
            "shift_c" => c.shift_c = pf(v)?,
            "offset_r" => c.offset_r = pf(v)?,
            "mu" => c.mu = if v == "none" { None } else { Some(MuChoice::parse(v)?) },
            "liss_radii" => {
                c.liss_radii = if v == "none" {
                    None
                } else {
                    let p = pvec(v)?;
                    Some((p[0], *p.get(1).ok_or_else(|| bad("liss radii"))?))
                }
            }
            "gamma_xs" => gx = Some(pvec(v)?),
            "gamma_ys" => gy = Some(pvec(v)?),
            "digest" => c.digest = u64::from_str_radix(v, 16).map_err(|_| bad("digest"))?,
            "run" => c.run_labels.push(v.to_string()),
            other => return Err(bad(&format!("unknown key '{other}'"))),
        }
        i += 1;
    }
    c.beta = if beta_kind == "envelope" {
        if env.radii.is_empty() || env.table.len() != env.radii.len() {
            return Err(bad("envelope table"));
        }
        BetaRepr::Envelope(env)
    } else if let Some(rest) = beta_kind.strip_prefix("exponential;") {
        let p = pvec(rest)?;
        if p.len() != 2 {
            return Err(bad("exponential beta"));
        }
        BetaRepr::Exponential { m: p[0], a: p[1] }
    } else {
        BetaRepr::None
    };
    if let (Some(x), Some(y)) = (gx, gy) {
        c.gamma_knots = Some((x, y));
    }
    if falsified {
        c.verdict = CertVerdict::Falsified(witness.ok_or_else(|| bad("falsified without witness"))?);
    }
    i += 2; // [slack] and the CSV header
    while i < lines.len() && lines[i] != "[end]" {
        let p: Vec<&str> = lines[i].split(',').collect();
        if p.len() != 8 {
            return Err(bad("slack row"));
        }
        let run = p[2].rsplit_once('#').and_then(|(_, n)| n.parse().ok()).ok_or_else(|| bad("slack run"))?;
        c.slack.push(SlackRow { t0: pf(p[0])?, x0_norm: pf(p[1])?, run, lag: pf(p[3])?, norm: pf(p[4])?, arg: pf(p[5])?, bound: pf(p[6])?, slack: pf(p[7])? });
        i += 1;
    }
    if i >= lines.len() {
        return Err(bad("missing [end]"));
    }
    i += 1;
    if lines.get(i) == Some(&"[derived]") {
        let (d, j) = parse_cert(lines, i + 1)?;
        c.derived = Some(Box::new(d));
        i = j;
    }
    Ok((c, i))
}

struct Sample {
    run: usize,
    t0: f64,
    r: f64,
    lag: f64,
    norm: f64,
    arg: f64,
    zero: bool,
}

fn witness_of(s: &Sample, runs: &[Run], bound: f64, reason: &str) -> Witness {
    Witness {
        t0: s.t0,
        x0_norm: s.r,
        input: runs[s.run].label.clone(),
        lag: s.lag,
        norm: s.norm,
        bound,
        margin: if bound > 0.0 { s.norm / bound - 1.0 } else { f64::INFINITY },
        reason: reason.into(),
    }
}

fn falsified(property: Property, w: Witness) -> StabilityCertificate {
    StabilityCertificate { verdict: CertVerdict::Falsified(w), ..StabilityCertificate::empty(property) }
}

fn digest_of(property: Property, samples: &[Sample]) -> u64 {
    let mut bytes = property.name().into_bytes();
    for s in samples {
        for v in [s.t0, s.r, s.lag, s.norm, s.arg] {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    rng::fnv1a(&bytes)
}

/// Exponential envelope from the per-radius decay: a = min over radii of ln(first/last)/span,
/// M = max ‖φ‖e^{at}/‖x0‖.
fn fit_exponential(samples: &[KlSample]) -> (f64, f64) {
    let mut radii: Vec<f64> = samples.iter().map(|s| s.r).filter(|r| *r > 0.0).collect();
    radii.sort_by(|a, b| a.total_cmp(b));
    radii.dedup();
    let mut a = f64::INFINITY;
    for &r in &radii {
        let mut pts: Vec<(f64, f64)> = samples.iter().filter(|s| s.r == r).map(|s| (s.t, s.norm)).collect();
        pts.sort_by(|x, y| x.0.total_cmp(&y.0));
        let first = pts.iter().map(|p| p.1).fold(0.0, f64::max);
        let (tl, last) = *pts.last().unwrap();
        if last > 0.0 && first > 0.0 && tl > 0.0 {
            a = a.min((first / last).ln() / tl);
        }
    }
    if !a.is_finite() {
        a = 1.0;
    }
    let m = samples.iter().filter(|s| s.r > 0.0).map(|s| s.norm * (a * s.t).exp() / s.r).fold(0.0, f64::max);
    (m, a)
}

fn beta_fit(samples: &[KlSample], property: Property, opts: &FitOpts) -> std::result::Result<BetaRepr, Error> {
    let kl = fit_kl(samples, opts.kl)?;
    if property.exponential() {
        let (m, a) = fit_exponential(samples);
        return Ok(BetaRepr::Exponential { m, a });
    }
    Ok(BetaRepr::Envelope(kl.envelope().expect("fit_kl sets an envelope").clone()))
}

/// Stage 1 (β on zero-input runs with a held-out uniformity check), stage 2 (γ and r on
/// forced runs) and stage 3 (re-verification of every sample), on the runs in `subset`.
fn fit_and_verify(runs: &[Run], subset: &[usize], property: Property, opts: &FitOpts) -> Result<StabilityCertificate> {
    let labels: Vec<String> = runs.iter().map(|r| r.label.clone()).collect();
    for &k in subset {
        let run = &runs[k];
        if run.status != TrajStatus::Complete {
            let t = match run.status {
                TrajStatus::BlowUp { t_max } | TrajStatus::StepFailure { t: t_max } => t_max,
                TrajStatus::Complete => unreachable!(),
            };
            let w = Witness {
                t0: run.t0,
                x0_norm: run.r,
                input: run.label.clone(),
                lag: t - run.t0,
                norm: f64::INFINITY,
                bound: f64::NAN,
                margin: f64::INFINITY,
                reason: "trajectory blew up".into(),
            };
            return Ok(StabilityCertificate { run_labels: labels, ..falsified(property, w) });
        }
    }
    let mut samples = Vec::new();
    for &k in subset {
        let run = &runs[k];
        if property.zero_input_only() && run.input.is_some() {
            continue;
        }
        let args = run.args(property, opts);
        for j in 0..run.lags.len() {
            samples.push(Sample { run: k, t0: run.t0, r: run.r, lag: run.lags[j], norm: run.norms[j], arg: args[j], zero: run.input.is_none() });
        }
    }
    if !samples.iter().any(|s| s.zero) {
        return Err(Error::InvalidArgument("ensemble subset has no zero-input runs".into()));
    }
    let digest = digest_of(property, &samples);
    let finish = |mut c: StabilityCertificate| {
        c.digest = digest;
        c.run_labels = labels.clone();
        c
    };
    let scale = samples.iter().fold(0.0f64, |m, s| m.max(s.norm)).max(1e-300);
    let tol = 1e-9 * (1.0 + scale);
    let span = samples.iter().fold(0.0f64, |m, s| m.max(s.lag));
    let practical = property.practical();

    let rmin = samples.iter().filter(|s| s.zero).fold(f64::INFINITY, |m, s| m.min(s.r));
    let tail = |s: &&Sample| s.zero && s.lag >= (1.0 - opts.floor_window) * span;
    let floor = if practical {
        let small = samples.iter().filter(tail).filter(|s| s.r == rmin).fold(0.0f64, |m, s| m.max(s.norm));
        // what is left at the tail is the common offset plus a decayed share of ‖x0‖
        let cap = |s: &Sample| opts.held_out_factor * small + 0.9 * s.r + tol;
        if let Some(s) = samples.iter().filter(tail).find(|s| s.norm > cap(s)) {
            let w = witness_of(s, runs, cap(s), "zero-input tail level grows with the initial norm");
            return Ok(finish(falsified(property, w)));
        }
        samples.iter().filter(tail).fold(0.0f64, |m, s| m.max(s.norm))
    } else {
        0.0
    };
    let c_shift = if property == Property::Cpuag {
        opts.cpuag_c.unwrap_or_else(|| samples.iter().filter(|s| s.zero && s.r == rmin).fold(0.0f64, |m, s| m.max(s.norm)))
    } else {
        0.0
    };
    let kl_of = |s: &Sample| KlSample { r: s.r + c_shift, t: s.lag, norm: (s.norm - floor).max(0.0) };
    let not_kl = |e: Error, pool: &[&Sample]| -> Result<StabilityCertificate> {
        match e {
            Error::NotKl { r, ratio } => {
                let s = pool.iter().filter(|s| (s.r + c_shift) == r).max_by(|a, b| a.lag.total_cmp(&b.lag)).expect("radius comes from the pool");
                let mut w = witness_of(s, runs, f64::NAN, &format!("zero-input envelope does not decay (last/first = {ratio:.4})"));
                w.margin = f64::INFINITY;
                Ok(finish(falsified(property, w)))
            }
            e => Err(e),
        }
    };

    // held-out uniformity in t0
    let zero: Vec<&Sample> = samples.iter().filter(|s| s.zero).collect();
    let mut t0s: Vec<f64> = zero.iter().map(|s| s.t0).collect();
    t0s.sort_by(|a, b| a.total_cmp(b));
    t0s.dedup();
    if t0s.len() >= 2 {
        let cut = t0s[(t0s.len() + 1) / 2 - 1];
        let train: Vec<&Sample> = zero.iter().copied().filter(|s| s.t0 <= cut).collect();
        let kls: Vec<KlSample> = train.iter().map(|s| kl_of(s)).collect();
        let beta_train = match fit_kl(&kls, opts.kl) {
            Ok(b) => b,
            Err(e) => return not_kl(e, &train),
        };
        let mut worst: Option<(f64, &Sample, f64)> = None;
        for s in zero.iter().filter(|s| s.t0 > cut) {
            let b = opts.held_out_factor * (beta_train.eval(s.r + c_shift, (s.lag - opts.held_out_shift).max(0.0)) + floor) + tol;
            if s.norm > b {
                let ratio = s.norm / b;
                if worst.map_or(true, |w| ratio > w.0) {
                    worst = Some((ratio, s, b));
                }
            }
        }
        if let Some((_, s, b)) = worst {
            let w = witness_of(s, runs, b, &format!("not uniform in t0: exceeds {}x the envelope fitted on t0 <= {cut}, shifted by {}", opts.held_out_factor, opts.held_out_shift));
            return Ok(finish(falsified(property, w)));
        }
    }
    let kls: Vec<KlSample> = zero.iter().map(|s| kl_of(s)).collect();
    let beta = match beta_fit(&kls, property, opts) {
        Ok(b) => b,
        Err(e) => return not_kl(e, &zero),
    };
    if let BetaRepr::Exponential { a, .. } = beta {
        if a < opts.eiss_a_min {
            let s = zero.iter().max_by(|x, y| x.lag.total_cmp(&y.lag)).unwrap();
            let w = witness_of(s, runs, f64::NAN, &format!("exponential rate {a:.3e} below {}", opts.eiss_a_min));
            return Ok(finish(falsified(property, w)));
        }
    }

    let mut cert = StabilityCertificate { beta, shift_c: c_shift, ..StabilityCertificate::empty(property) };
    if matches!(property, Property::Iiss | Property::Iisps) {
        cert.mu = Some(opts.mu);
    }
    let base = |s: &Sample| cert.beta.eval(s.r + c_shift, s.lag) + floor;

    let mut r_extra = 0.0f64;
    let forced: Vec<&Sample> = samples.iter().filter(|s| !s.zero).collect();
    if !forced.is_empty() {
        let res: Vec<f64> = forced.iter().map(|s| s.norm - base(s)).collect();
        if practical {
            let pos: Vec<f64> = res.iter().copied().filter(|r| *r > 0.0).collect();
            r_extra = percentile(&pos, opts.isps_percentile).unwrap_or(0.0);
            for (s, r) in forced.iter().zip(&res) {
                if s.arg <= 0.0 {
                    r_extra = r_extra.max(*r);
                }
            }
        } else if let Some((s, r)) = forced.iter().zip(&res).filter(|(s, _)| s.arg <= 0.0).max_by(|a, b| a.1.total_cmp(b.1)) {
            if *r > tol {
                let w = witness_of(s, runs, base(s), "positive residual at zero input level");
                return Ok(finish(falsified(property, w)));
            }
        }
        let mut pts: Vec<(f64, f64)> = forced.iter().zip(&res).filter(|(s, _)| s.arg > 0.0).map(|(s, r)| (s.arg, (r - r_extra).max(0.0))).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !pts.is_empty() {
            let a_max = pts.last().unwrap().0;
            let eps = 1e-9 * scale / a_max;
            let mut xs = vec![0.0];
            let mut ys = vec![0.0];
            let mut run = 0.0f64;
            for (a, v) in pts {
                run = run.max(v);
                let y = run + eps * a;
                if *xs.last().unwrap() == a {
                    *ys.last_mut().unwrap() = y;
                } else {
                    xs.push(a);
                    ys.push(y);
                }
            }
            cert.gamma_knots = Some((xs, ys));
        }
    }
    cert.offset_r = floor + r_extra;
    verify(&mut cert, &samples, runs, tol);
    if property == Property::Cpuag && cert.is_certified() {
        let mut d = StabilityCertificate {
            property: Property::Isps,
            beta: cert.beta.clone(),
            beta_scale: 2.0,
            shift_c: 0.0,
            gamma_knots: cert.gamma_knots.clone(),
            offset_r: cert.beta.eval(2.0 * c_shift, 0.0) + cert.offset_r,
            ..StabilityCertificate::empty(Property::Isps)
        };
        verify(&mut d, &samples, runs, tol);
        d.digest = digest;
        d.run_labels = labels.clone();
        if let CertVerdict::Falsified(w) = &d.verdict {
            cert.verdict = CertVerdict::Falsified(Witness { reason: format!("derived ISpS failed: {}", w.reason), ..w.clone() });
        }
        cert.derived = Some(Box::new(d));
    }
    Ok(finish(cert))
}

fn verify(cert: &mut StabilityCertificate, samples: &[Sample], runs: &[Run], tol: f64) {
    let mut worst: Option<(f64, usize)> = None;
    cert.slack = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let bound = cert.bound(s.r, s.lag, s.arg);
            let slack = bound - s.norm;
            if slack < -tol && worst.map_or(true, |w| slack < w.0) {
                worst = Some((slack, i));
            }
            SlackRow { t0: s.t0, x0_norm: s.r, run: s.run, lag: s.lag, norm: s.norm, arg: s.arg, bound, slack }
        })
        .collect();
    if let Some((_, i)) = worst {
        let row = cert.slack[i];
        cert.verdict = CertVerdict::Falsified(witness_of(&samples[i], runs, row.bound, "re-verification failed"));
    }
}

/// Fits the property on already simulated runs.
pub fn certify_from_runs(runs: &[Run], property: Property, opts: &FitOpts) -> Result<StabilityCertificate> {
    let all: Vec<usize> = (0..runs.len()).collect();
    if property != Property::Liss {
        return fit_and_verify(runs, &all, property, opts);
    }
    let full = fit_and_verify(runs, &all, Property::Iss, opts)?;
    let mut rx: Vec<f64> = runs.iter().map(|r| r.r).collect();
    rx.sort_by(|a, b| b.total_cmp(a));
    rx.dedup();
    let mut ru: Vec<f64> = runs.iter().filter(|r| r.input.is_some()).map(|r| r.sup_full).collect();
    ru.sort_by(|a, b| b.total_cmp(a));
    ru.dedup();
    ru.push(0.0);
    for &px in &rx {
        for &pu in &ru {
            let sub: Vec<usize> = (0..runs.len()).filter(|&k| runs[k].r <= px && runs[k].input.map_or(true, |_| runs[k].sup_full <= pu)).collect();
            let mut c = fit_and_verify(runs, &sub, Property::Iss, opts)?;
            if c.is_certified() {
                c.property = Property::Liss;
                c.liss_radii = Some((px, pu));
                return Ok(c);
            }
        }
    }
    Ok(StabilityCertificate { property: Property::Liss, ..full })
}

pub fn certify(sys: &SemilinearSystem, spec: &EnsembleSpec, property: Property, opts: &FitOpts) -> Result<StabilityCertificate> {
    let runs = run_ensemble(sys, spec, opts)?;
    certify_from_runs(&runs, property, opts)
}

/// CpUAG envelope β(‖x0‖+c, t−t0) + γ(‖u‖) + ς and the ISpS certificate it implies.
pub fn certify_cpuag(sys: &SemilinearSystem, spec: &EnsembleSpec, opts: &FitOpts) -> Result<StabilityCertificate> {
    certify(sys, spec, Property::Cpuag, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayReport {
    pub verdict_match: bool,
    pub slack_match: bool,
    pub digest_match: bool,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.verdict_match && self.slack_match && self.digest_match
    }
}

/// Deserializes a certificate, re-runs its ensemble and compares verdict, slack table and digest.
pub fn replay(text: &str, sys: &SemilinearSystem, spec: &EnsembleSpec, opts: &FitOpts) -> Result<ReplayReport> {
    let stored = StabilityCertificate::from_text(text)?;
    let mut o = *opts;
    if let Some(mu) = stored.mu {
        o.mu = mu;
    }
    let fresh = certify(sys, spec, stored.property, &o)?;
    let same_rows = |a: &[SlackRow], b: &[SlackRow]| {
        a.len() == b.len()
            && a.iter().zip(b).all(|(x, y)| {
                x.run == y.run && [x.t0, x.x0_norm, x.lag, x.norm, x.arg, x.bound, x.slack].iter().zip([y.t0, y.x0_norm, y.lag, y.norm, y.arg, y.bound, y.slack]).all(|(p, q)| p.to_bits() == q.to_bits())
            })
    };
    Ok(ReplayReport {
        verdict_match: stored.is_certified() == fresh.is_certified() && stored.witness().map(|w| (w.t0.to_bits(), w.lag.to_bits())) == fresh.witness().map(|w| (w.t0.to_bits(), w.lag.to_bits())),
        slack_match: same_rows(&stored.slack, &fresh.slack),
        digest_match: stored.digest == fresh.digest,
    })
}

#[derive(Debug, Clone)]
pub struct FalsifySpec {
    /// number of trajectory simulations
    pub budget: usize,
    /// lag window per trajectory
    pub horizon: f64,
    pub t0_range: (f64, f64),
    pub radii: Vec<f64>,
    pub input_max: f64,
    pub margin: f64,
    /// candidate envelopes M‖x0‖e^{−a t} + G‖u‖ with a = a_min
    pub m_list: Vec<f64>,
    pub g_list: Vec<f64>,
    pub a_min: f64,
    pub seed: u64,
    pub step: Option<f64>,
}

impl Default for FalsifySpec {
    fn default() -> Self {
        FalsifySpec {
            budget: 40,
            horizon: 20.0,
            t0_range: (0.0, 5.0),
            radii: vec![0.1, 1.0, 10.0],
            input_max: 1.0,
            margin: 0.1,
            m_list: vec![1.0, 10.0, 100.0],
            g_list: vec![1.0, 10.0, 100.0],
            a_min: 0.1,
            seed: 0,
            step: None,
        }
    }
}

#[derive(Clone)]
struct Candidate {
    dir: DVector<f64>,
    r: f64,
    t0: f64,
    amp: f64,
    signs: DVector<f64>,
    /// 0 for a constant input
    freq: f64,
}

fn candidate_eval(sys: &SemilinearSystem, spec: &FalsifySpec, c: &Candidate) -> Result<(f64, Witness)> {
    let x0 = &c.dir * c.r;
    let u = if c.freq == 0.0 { InputSignal::constant(&c.signs * c.amp) } else { InputSignal::sine(&c.signs * c.amp, c.freq, 0.0) };
    let u = u.with_norm(sys.input_norm).with_label(&format!("{}_{:.3}_{:.3}", if c.freq == 0.0 { "const" } else { "sine" }, c.amp, c.freq));
    let tr = solve_mild(sys, c.t0, &x0, &u, c.t0 + spec.horizon, SolveOpts { step: spec.step, ..Default::default() })?;
    let mk = |lag: f64, norm: f64, bound: f64, reason: &str| Witness {
        t0: c.t0,
        x0_norm: c.r,
        input: u.label.clone(),
        lag,
        norm,
        bound,
        margin: if bound > 0.0 { norm / bound - 1.0 } else { f64::INFINITY },
        reason: reason.into(),
    };
    if let TrajStatus::BlowUp { t_max } | TrajStatus::StepFailure { t: t_max } = tr.status {
        return Ok((f64::INFINITY, mk(t_max - c.t0, f64::INFINITY, f64::NAN, "blow-up")));
    }
    let m = spec.m_list.iter().copied().fold(0.0, f64::max);
    let g = spec.g_list.iter().copied().fold(0.0, f64::max);
    let mut best = (0.0f64, mk(0.0, 0.0, 0.0, ""));
    let mut usup = 0.0f64;
    for ((t, x), un) in tr.times.iter().zip(&tr.states).zip(&tr.input_norms) {
        usup = usup.max(*un);
        let lag = t - c.t0;
        let env = m * c.r * (-spec.a_min * lag).exp() + g * usup;
        let n = sys.state_norm.norm(x);
        let ratio = if env > 0.0 { n / env } else if n > 0.0 { f64::INFINITY } else { 0.0 };
        if ratio > best.0 {
            best = (ratio, mk(lag, n, env, "exceeds every candidate envelope"));
        }
    }
    Ok(best)
}

/// Random search followed by compass refinement of the best candidate; returns the first
/// trajectory exceeding every candidate envelope by the margin.
pub fn falsify(sys: &SemilinearSystem, spec: &FalsifySpec) -> Result<Option<Witness>> {
    let n = sys.dim();
    let m = sys.input_dim;
    let mut g = rng::stream(spec.seed, rng::label("falsify"));
    let unit = |v: DVector<f64>| -> DVector<f64> {
        let nv = sys.state_norm.norm(&v);
        if nv > 0.0 {
            v / nv
        } else {
            let mut e = DVector::zeros(n);
            e[0] = 1.0;
            let ne = sys.state_norm.norm(&e);
            e / ne
        }
    };
    let threshold = 1.0 + spec.margin;
    let n_random = (spec.budget / 2).max(1);
    let mut best: Option<(f64, Candidate)> = None;
    let mut used = 0;
    for _ in 0..n_random {
        let c = Candidate {
            dir: unit(DVector::from_fn(n, |_, _| g.gen_range(-1.0..1.0))),
            r: spec.radii[g.gen_range(0..spec.radii.len())],
            t0: g.gen_range(spec.t0_range.0..=spec.t0_range.1),
            amp: g.gen_range(0.0..=spec.input_max),
            signs: DVector::from_fn(m, |_, _| if g.gen_bool(0.5) { 1.0 } else { -1.0 }),
            freq: if g.gen_bool(0.5) { 0.0 } else { g.gen_range(0.05..1.0) },
        };
        used += 1;
        let (ratio, w) = candidate_eval(sys, spec, &c)?;
        if ratio >= threshold {
            return Ok(Some(w));
        }
        if best.as_ref().map_or(true, |b| ratio > b.0) {
            best = Some((ratio, c));
        }
    }
    let Some((mut best_ratio, mut cur)) = best else { return Ok(None) };
    let mut step = 0.5;
    while used < spec.budget && step > 1e-3 {
        let mut improved = false;
        let mut moves: Vec<Candidate> = Vec::new();
        for i in 0..n.min(8) {
            for sgn in [1.0, -1.0] {
                let mut d = cur.dir.clone();
                d[i] += sgn * step;
                moves.push(Candidate { dir: unit(d), ..cur.clone() });
            }
        }
        for sgn in [1.0, -1.0] {
            let t0 = (cur.t0 + sgn * step * (spec.t0_range.1 - spec.t0_range.0)).clamp(spec.t0_range.0, spec.t0_range.1);
            moves.push(Candidate { t0, ..cur.clone() });
            let amp = (cur.amp + sgn * step * spec.input_max).clamp(0.0, spec.input_max);
            moves.push(Candidate { amp, ..cur.clone() });
        }
        for c in moves {
            if used >= spec.budget {
                break;
            }
            used += 1;
            let (ratio, w) = candidate_eval(sys, spec, &c)?;
            if ratio >= threshold {
                return Ok(Some(w));
            }
            if ratio > best_ratio {
                best_ratio = ratio;
                cur = c;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(None)
}

#[derive(Debug, Clone)]
pub struct AuditRow {
    pub name: String,
    pub iss: bool,
    pub ugas0: bool,
    pub iiss: bool,
    pub exp_stable: bool,
}

impl AuditRow {
    pub fn agree(&self) -> bool {
        self.iss == self.ugas0 && self.ugas0 == self.iiss && self.iiss == self.exp_stable
    }
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn disagreements(&self) -> usize {
        self.rows.iter().filter(|r| !r.agree()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("system,iss,ugas0,iiss,exp_stable,agree\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.name, r.iss, r.ugas0, r.iiss, r.exp_stable, r.agree());
        }
        s
    }
}

/// ISS, 0-UGAS and iISS certificates against the exponential-stability classification.
pub fn cross_equivalence_audit(sys: &SemilinearSystem, spec: &EnsembleSpec, opts: &FitOpts) -> Result<AuditRow> {
    if sys.nonlinearity.is_some() {
        return Err(Error::Precondition("audit needs a linear system ẋ = A(t)x + B(t)u".into()));
    }
    let runs = run_ensemble(sys, spec, opts)?;
    let iss = certify_from_runs(&runs, Property::Iss, opts)?.is_certified();
    let ugas0 = certify_from_runs(&runs, Property::Ugas0, opts)?.is_certified();
    let iiss = certify_from_runs(&runs, Property::Iiss, opts)?.is_certified();
    let cls = classify_stability(&sys.gen, 24.0, &[0.1, 0.01], ClassifyOpts::default())?;
    Ok(AuditRow { name: sys.name.clone(), iss, ugas0, iiss, exp_stable: cls.exp_fit.is_some() })
}

/// Smaller ensemble used by the audit: 6 initial conditions, 3 inputs, t0 ∈ {0, 2.5, 10.5, 20.5}.
pub fn audit_spec(sys: &SemilinearSystem, seed: u64) -> EnsembleSpec {
    let mut inputs = default_inputs(sys, seed);
    inputs.truncate(3);
    EnsembleSpec { ics: IcSpec::Ball { count: 6, r_min: 1e-2, r_max: 10.0 }, inputs, t0_list: vec![0.0, 2.5, 10.5, 20.5], horizon: 40.5, seed }
}

fn with_identity_b(gen: GeneratorSpec, name: &str) -> SemilinearSystem {
    let n = gen.dim;
    SemilinearSystem::linear(gen).with_constant_b(DMatrix::identity(n, n)).with_name(name)
}

fn linear_heat(r: f64, n: usize) -> Result<SemilinearSystem> {
    let g = Grid1D::new(n, PI)?;
    let lap = assemble(OperatorKind::DirichletLaplacian, &g)?.matrix;
    Ok(with_identity_b(GeneratorSpec::shifted(&format!("heat_r{r}"), lap, move |_| r), &format!("heat_r{r}"))
        .with_state_norm(g.state_norm())
        .with_input_norm(InputNorm::Sup))
}

/// Fifteen linear systems, stable and unstable, uniform and non-uniform.
pub fn linear_test_suite(seed: u64) -> Result<Vec<SemilinearSystem>> {
    let scalar = |a: f64, name: &str| with_identity_b(GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, a)), name);
    let mut g = rng::stream(seed, rng::label("linear_test_suite"));
    let mut v = vec![
        scalar(-1.0, "scalar_minus_1"),
        scalar(1.0, "scalar_plus_1"),
        scalar(0.0, "scalar_zero"),
        with_identity_b(GeneratorSpec::example_a1(), "scalar_a1"),
        with_identity_b(GeneratorSpec::inverse_time_decay(), "inverse_time_decay"),
    ];
    for i in 0..3 {
        v.push(with_identity_b(random_stable_ltv(&mut g), &format!("random_ltv_{i}")));
    }
    v.push(with_identity_b(
        GeneratorSpec::dense(
            "unstable_ltv",
            2,
            |t| {
                let w = 1.0 + 0.5 * t.sin();
                DMatrix::from_row_slice(2, 2, &[0.2, w, -w, 0.2])
            },
            Breaks::None,
            false,
        ),
        "unstable_ltv",
    ));
    v.push(linear_heat(0.5, 16)?);
    v.push(linear_heat(1.5, 16)?);
    v.push(with_identity_b(GeneratorSpec::constant_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])), "rotation"));
    v.push(with_identity_b(GeneratorSpec::constant_matrix(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -0.05])), "slow_diagonal"));
    v.push(with_identity_b(GeneratorSpec::constant_matrix(DMatrix::from_row_slice(2, 2, &[-1.0, 5.0, 0.0, -1.0])), "non_normal"));
    v.push(with_identity_b(GeneratorSpec::scalar("periodic_rate", |t| -0.5 + t.sin(), Breaks::None, false), "periodic_rate"));
    Ok(v)
}

pub fn run_audit(suite: &[SemilinearSystem], seed: u64, opts: &FitOpts) -> Result<AuditReport> {
    let rows = suite.iter().map(|s| cross_equivalence_audit(s, &audit_spec(s, seed), opts)).collect::<Result<Vec<_>>>()?;
    Ok(AuditReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde_examples::{build_example, ExampleName};
    use crate::timefn::TimeFn;
    use proptest::prelude::*;

    fn scalar_sys(a: f64) -> SemilinearSystem {
        with_identity_b(GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, a)), "scalar")
    }

    fn small_spec(sys: &SemilinearSystem, n_ics: usize, n_inputs: usize) -> EnsembleSpec {
        let mut s = EnsembleSpec::default_for(sys, 3);
        s.ics = IcSpec::Ball { count: n_ics, r_min: 1e-2, r_max: 10.0 };
        s.inputs.truncate(n_inputs);
        s
    }

    #[test]
    fn property_names_round_trip() {
        for p in [Property::Iss, Property::Liss, Property::Eiss, Property::Ugas0, Property::Isps, Property::Eisps, Property::Ugpas0, Property::Cpuag, Property::Iiss, Property::Iisps, Property::LpIsps(2.0)] {
            assert_eq!(Property::parse(&p.name()).unwrap(), p);
        }
        assert!(Property::parse("XYZ").is_err());
    }

    #[test]
    fn spec_validation() {
        let sys = scalar_sys(-1.0);
        let mut s = EnsembleSpec::default_for(&sys, 0);
        s.horizon = 5.0;
        assert!(s.validate().is_err());
        let mut s = EnsembleSpec::default_for(&sys, 0);
        s.inputs.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn stable_scalar_is_iss_with_gain_at_most_one() {
        let sys = scalar_sys(-1.0);
        let c = certify(&sys, &EnsembleSpec::default_for(&sys, 1), Property::Iss, &FitOpts::default()).unwrap();
        assert!(c.is_certified(), "{:?}", c.verdict);
        assert!(c.gamma_slope() <= 1.1, "{}", c.gamma_slope());
        assert!(c.slack.iter().all(|r| r.slack >= -1e-6));
        assert!(c.gamma().is_some());
    }

    #[test]
    fn zero_input_decay_envelope_matches_exponential() {
        let sys = scalar_sys(-1.0);
        let c = certify(&sys, &small_spec(&sys, 8, 1), Property::Ugas0, &FitOpts::default()).unwrap();
        assert!(c.is_certified());
        let BetaRepr::Envelope(e) = &c.beta else { panic!("expected envelope") };
        for (j, &t) in e.times.iter().enumerate().step_by(5) {
            for (i, &r) in e.radii.iter().enumerate() {
                let exact = r * (-t as f64).exp();
                assert!(e.table[i][j] >= exact * (1.0 - 1e-9));
                assert!(e.table[i][j] <= exact * (1.0 + 1e-6) + 1e-12, "r={r} t={t}");
            }
        }
    }

    #[test]
    fn nonuniform_example_is_not_ugas() {
        let sys = with_identity_b(GeneratorSpec::example_a1(), "a1");
        let c = certify(&sys, &audit_spec(&sys, 0), Property::Ugas0, &FitOpts::default()).unwrap();
        let w = c.witness().expect("falsified");
        assert!(w.reason.contains("uniform"), "{}", w.reason);
        assert!(w.t0 > 2.5);
    }

    #[test]
    fn unstable_scalar_falsified() {
        let sys = scalar_sys(1.0);
        for p in [Property::Iss, Property::Ugas0, Property::Isps, Property::Iiss] {
            let c = certify(&sys, &small_spec(&sys, 3, 2), p, &FitOpts::default()).unwrap();
            assert!(!c.is_certified(), "{p:?}");
        }
    }

    #[test]
    fn exponential_fit_recovers_rate() {
        let sys = scalar_sys(-1.0);
        let c = certify(&sys, &small_spec(&sys, 4, 2), Property::Eiss, &FitOpts::default()).unwrap();
        assert!(c.is_certified());
        let BetaRepr::Exponential { m, a } = c.beta else { panic!() };
        assert!((a - 1.0).abs() < 1e-6 && (m - 1.0).abs() < 1e-6, "{m} {a}");
    }

    #[test]
    fn integral_and_lp_variants() {
        let sys = scalar_sys(-1.0);
        let spec = small_spec(&sys, 4, 4);
        for mu in MuChoice::ALL {
            let c = certify(&sys, &spec, Property::Iiss, &FitOpts { mu, ..Default::default() }).unwrap();
            assert!(c.is_certified());
            assert_eq!(c.mu, Some(mu));
        }
        assert!(certify(&sys, &spec, Property::LpIsps(2.0), &FitOpts::default()).unwrap().is_certified());
        assert!(certify(&sys, &spec, Property::Iisps, &FitOpts::default()).unwrap().is_certified());
    }

    #[test]
    fn practical_variants_on_offset_system() {
        // ẋ = −x + 1 + u: never reaches zero, but stays in a ball of radius ~1
        let sys = SemilinearSystem::linear(GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, -1.0))).with_nonlinearity(1, |_, _, u| DVector::from_element(1, 1.0 + u[0]), Some(0.0));
        let spec = small_spec(&sys, 6, 3);
        let o = FitOpts::default();
        assert!(!certify(&sys, &spec, Property::Iss, &o).unwrap().is_certified());
        assert!(!certify(&sys, &spec, Property::Ugas0, &o).unwrap().is_certified());
        let c = certify(&sys, &spec, Property::Isps, &o).unwrap();
        assert!(c.is_certified(), "{:?}", c.verdict);
        assert!(c.offset_r >= 0.9 && c.offset_r < 2.0, "{}", c.offset_r);
        assert!(certify(&sys, &spec, Property::Ugpas0, &o).unwrap().is_certified());
        assert!(certify(&sys, &spec, Property::Eisps, &o).unwrap().is_certified());
    }

    #[test]
    fn cpuag_derives_isps() {
        let sys = scalar_sys(-1.0);
        let spec = small_spec(&sys, 5, 3);
        let c = certify_cpuag(&sys, &spec, &FitOpts::default()).unwrap();
        assert!(c.is_certified());
        let d = c.derived.as_ref().unwrap();
        assert!(d.is_certified());
        assert_eq!(d.beta_scale, 2.0);
        assert!((d.offset_r - (c.beta.eval(2.0 * c.shift_c, 0.0) + c.offset_r)).abs() < 1e-15);
        let c0 = certify_cpuag(&sys, &spec, &FitOpts { cpuag_c: Some(0.0), ..Default::default() }).unwrap();
        assert_eq!(c0.shift_c, 0.0);
        assert_eq!(c0.derived.unwrap().offset_r, c0.offset_r);
    }

    #[test]
    fn cpuag_on_forced_reaction_diffusion() {
        let sys = build_example(&ExampleName::RdForced { phi: TimeFn::new("1/(1+t^2)", |t| 1.0 / (1.0 + t * t)) }, 8).unwrap();
        let mut spec = small_spec(&sys, 4, 3);
        spec.t0_list = vec![0.0, 1.0];
        spec.horizon = 9.0;
        let c = certify_cpuag(&sys, &spec, &FitOpts::default()).unwrap();
        assert!(c.is_certified(), "{:?}", c.verdict);
        assert!(c.derived.unwrap().is_certified());
    }

    #[test]
    fn liss_radii_are_largest_certifying() {
        let sys = scalar_sys(-1.0);
        let c = certify(&sys, &small_spec(&sys, 4, 2), Property::Liss, &FitOpts::default()).unwrap();
        let (rx, _) = c.liss_radii.unwrap();
        assert!((rx - 10.0).abs() < 1e-9);
        // ẋ = −x + x³ is only locally stable
        let cubic = SemilinearSystem::linear(GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, -1.0))).with_nonlinearity(1, |_, x, u| DVector::from_element(1, x[0].powi(3) + 0.1 * u[0]), Some(3.0));
        let mut spec = small_spec(&cubic, 6, 1);
        spec.ics = IcSpec::States(vec![0.1, 0.3, 0.5, 2.0].into_iter().map(|v| DVector::from_element(1, v)).collect());
        spec.horizon = 10.0;
        let c = certify(&cubic, &spec, Property::Liss, &FitOpts::default()).unwrap();
        let (rx, _) = c.liss_radii.expect("small radii certify");
        assert!(rx <= 0.5 + 1e-12 && rx >= 0.1);
    }

    #[test]
    fn serialization_round_trip_and_replay() {
        let sys = scalar_sys(-1.0);
        let spec = small_spec(&sys, 3, 2);
        let o = FitOpts::default();
        for p in [Property::Iss, Property::Eiss, Property::Cpuag, Property::Iiss] {
            let c = certify(&sys, &spec, p, &o).unwrap();
            let text = c.to_text();
            let back = StabilityCertificate::from_text(&text).unwrap();
            assert_eq!(back.to_text(), text);
            assert!(replay(&text, &sys, &spec, &o).unwrap().ok());
        }
        let bad = scalar_sys(1.0);
        let c = certify(&bad, &spec, Property::Iss, &o).unwrap();
        let text = c.to_text();
        assert_eq!(StabilityCertificate::from_text(&text).unwrap().to_text(), text);
        assert!(replay(&text, &bad, &spec, &o).unwrap().ok());
        assert!(StabilityCertificate::from_text("garbage").is_err());
    }

    #[test]
    fn causal_and_full_sup_agree_for_constant_inputs() {
        let sys = scalar_sys(-1.0);
        let mut spec = small_spec(&sys, 3, 2);
        spec.inputs = vec![InputSignal::scalar_constant(0.7), InputSignal::scalar_constant(-2.0)];
        let a = certify(&sys, &spec, Property::Iss, &FitOpts::default()).unwrap();
        let b = certify(&sys, &spec, Property::Iss, &FitOpts { sup_mode: SupMode::FullHorizon, ..Default::default() }).unwrap();
        assert_eq!(a.slack_csv(), b.slack_csv());
    }

    #[test]
    fn falsifier_cases() {
        assert!(falsify(&scalar_sys(-1.0), &FalsifySpec::default()).unwrap().is_none());
        let w = falsify(&scalar_sys(1.0), &FalsifySpec::default()).unwrap().unwrap();
        assert!(w.margin >= 0.1);
        let heat = linear_heat(1.3, 16).unwrap();
        let w = falsify(&heat, &FalsifySpec { budget: 10, ..Default::default() }).unwrap().expect("heat above threshold grows");
        assert!(w.margin >= 0.1);
        assert!(w.lag > 5.0);
    }

    #[test]
    fn audit_examples() {
        let opts = FitOpts::default();
        let mut g = rng::stream(9, 0);
        let ltv = with_identity_b(random_stable_ltv(&mut g), "ltv");
        let row = cross_equivalence_audit(&ltv, &audit_spec(&ltv, 1), &opts).unwrap();
        assert!(row.agree() && row.iss, "{row:?}");
        let row = cross_equivalence_audit(&scalar_sys(1.0), &audit_spec(&scalar_sys(1.0), 1), &opts).unwrap();
        assert!(row.agree() && !row.iss, "{row:?}");
        let heat = linear_heat(0.5, 16).unwrap();
        let row = cross_equivalence_audit(&heat, &audit_spec(&heat, 1), &opts).unwrap();
        assert!(row.agree() && row.iss, "{row:?}");
        let nl = scalar_sys(-1.0).with_nonlinearity(1, |_, x, _| x.map(|v| v.sin()), Some(1.0));
        assert!(matches!(cross_equivalence_audit(&nl, &audit_spec(&nl, 1), &opts), Err(Error::Precondition(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn enlarging_ics_and_inputs_is_monotone(a in -2.0f64..0.5) {
            let sys = scalar_sys(a);
            let mut small = small_spec(&sys, 3, 2);
            small.horizon = 15.0;
            let mut big = small.clone();
            big.ics = IcSpec::States(small.initial_states(&sys).unwrap().into_iter().chain([DVector::from_element(1, 4.0), DVector::from_element(1, -0.02)]).collect());
            small.ics = IcSpec::States(small.initial_states(&sys).unwrap());
            big.inputs = default_inputs(&sys, 3);
            let o = FitOpts::default();
            for p in [Property::Iss, Property::Isps] {
                let cs = certify(&sys, &small, p, &o).unwrap().is_certified();
                let cb = certify(&sys, &big, p, &o).unwrap().is_certified();
                prop_assert!(cs || !cb);
            }
        }
    }
}

//! Mild solutions of ẋ = A(t)x + Ψ(t,x,u) with piecewise right-continuous inputs.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::evolution::{GeneratorSpec, Propagator};
use crate::rng;

/// Convergence order of the exponential midpoint scheme.
pub const SCHEME_ORDER: f64 = 2.0;
pub const DEFAULT_BLOWUP: f64 = 1e12;

type VecFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;
type MatFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
type NonlinFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
pub enum Segment {
    Constant(DVector<f64>),
    /// amplitude·sin(2π·freq·t + phase)
    Sine { amplitude: DVector<f64>, freq: f64, phase: f64 },
    /// linear interpolation, held constant outside the sample range
    Sampled { times: Vec<f64>, values: Vec<DVector<f64>> },
    Closure(VecFn),
}

impl Segment {
    fn eval(&self, t: f64) -> DVector<f64> {
        match self {
            Segment::Constant(v) => v.clone(),
            Segment::Sine { amplitude, freq, phase } => amplitude * (2.0 * std::f64::consts::PI * freq * t + phase).sin(),
            Segment::Sampled { times, values } => {
                let j = times.partition_point(|&x| x <= t);
                if j == 0 {
                    return values[0].clone();
                }
                if j == times.len() {
                    return values[j - 1].clone();
                }
                let a = (t - times[j - 1]) / (times[j] - times[j - 1]);
                &values[j - 1] * (1.0 - a) + &values[j] * a
            }
            Segment::Closure(f) => f(t),
        }
    }
}

/// Input u: pieces (start, segment), each right-continuous at its start.
/// Norm of an input value u(t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputNorm {
    /// √w·|u|₂ (w = Δz for grid-L² inputs)
    Weighted(f64),
    /// max |uᵢ|, the sup over the spatial grid
    Sup,
}

impl InputNorm {
    pub fn of(&self, v: &DVector<f64>) -> f64 {
        match self {
            InputNorm::Weighted(w) => w.sqrt() * v.norm(),
            InputNorm::Sup => v.amax(),
        }
    }
}

#[derive(Clone)]
pub struct InputSignal {
    pub dim: usize,
    pieces: Vec<(f64, Segment)>,
    pub norm: InputNorm,
    pub label: String,
}

impl std::fmt::Debug for InputSignal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "InputSignal({}, dim={}, pieces={})", self.label, self.dim, self.pieces.len())
    }
}

impl InputSignal {
    pub fn piecewise(dim: usize, pieces: Vec<(f64, Segment)>) -> Result<Self> {
        if pieces.is_empty() || pieces[0].0 > 0.0 || pieces.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument("input pieces must start at or before 0 and increase".into()));
        }
        Ok(InputSignal { dim, pieces, norm: InputNorm::Weighted(1.0), label: "piecewise".into() })
    }

    fn single(dim: usize, seg: Segment, label: &str) -> Self {
        InputSignal { dim, pieces: vec![(f64::NEG_INFINITY, seg)], norm: InputNorm::Weighted(1.0), label: label.into() }
    }

    pub fn zero(dim: usize) -> Self {
        Self::single(dim, Segment::Constant(DVector::zeros(dim)), "zero")
    }

    pub fn constant(v: DVector<f64>) -> Self {
        let d = v.len();
        Self::single(d, Segment::Constant(v), "constant")
    }

    pub fn scalar_constant(c: f64) -> Self {
        Self::constant(DVector::from_element(1, c))
    }

    pub fn step(t_jump: f64, before: DVector<f64>, after: DVector<f64>) -> Self {
        let d = before.len();
        InputSignal {
            dim: d,
            pieces: vec![(f64::NEG_INFINITY, Segment::Constant(before)), (t_jump, Segment::Constant(after))],
            norm: InputNorm::Weighted(1.0),
            label: format!("step({t_jump})"),
        }
    }

    pub fn sine(amplitude: DVector<f64>, freq: f64, phase: f64) -> Self {
        let d = amplitude.len();
        Self::single(d, Segment::Sine { amplitude, freq, phase }, "sine")
    }

    pub fn from_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        Self::single(dim, Segment::Closure(Arc::new(f)), "closure")
    }

    pub fn sampled(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("sampled input needs increasing times and matching values".into()));
        }
        let d = values[0].len();
        if values.iter().any(|v| v.len() != d) {
            return Err(Error::InvalidArgument("sampled input values differ in dimension".into()));
        }
        Ok(Self::single(d, Segment::Sampled { times, values }, "sampled"))
    }

    /// CSV with columns time, u_1, ..., u_m (optional header).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            match row {
                Ok(r) if r.len() >= 2 => {
                    times.push(r[0]);
                    values.push(DVector::from_vec(r[1..].to_vec()));
                }
                Ok(_) => return Err(Error::Parse(format!("line {}: need time and at least one component", i + 1))),
                Err(_) if times.is_empty() && i == 0 => continue,
                Err(_) => return Err(Error::Parse(format!("line {}: non-numeric entry", i + 1))),
            }
        }
        Self::sampled(times, values).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn with_norm(mut self, norm: InputNorm) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.into();
        self
    }

    /// Same input on (−∞, t), replaced by `tail` from t on.
    pub fn with_tail(&self, t: f64, tail: Segment) -> Self {
        let mut pieces: Vec<(f64, Segment)> = self.pieces.iter().filter(|(s, _)| *s < t).cloned().collect();
        pieces.push((t, tail));
        InputSignal { dim: self.dim, pieces, norm: self.norm, label: format!("{}|tail@{t}", self.label) }
    }

    /// u·1_{[0,t)}.
    pub fn truncated(&self, t: f64) -> Self {
        self.with_tail(t, Segment::Constant(DVector::zeros(self.dim)))
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let j = self.pieces.partition_point(|(s, _)| *s <= t);
        self.pieces[j.max(1) - 1].1.eval(t)
    }

    pub fn norm_at(&self, t: f64) -> f64 {
        self.norm.of(&self.eval(t))
    }

    /// Jump points strictly inside (a, b).
    pub fn discontinuities(&self, a: f64, b: f64) -> Vec<f64> {
        self.pieces.iter().map(|(s, _)| *s).filter(|&s| s > a && s < b).collect()
    }

    /// Grid sup of ‖u‖ over [a, b] (horizon sup, not a global one).
    pub fn sup_norm(&self, a: f64, b: f64) -> f64 {
        let n = (((b - a) * 256.0).ceil() as usize).max(16);
        let mut pts: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
        pts.extend(self.discontinuities(a, b));
        pts.iter().map(|&t| self.norm_at(t)).fold(0.0, f64::max)
    }

    /// ∫_a^b g(‖u(s)‖) ds, composite Gauss–Legendre between jumps.
    pub fn integral_of<G: Fn(f64) -> f64>(&self, g: G, a: f64, b: f64) -> f64 {
        let mut pts = vec![a];
        pts.extend(self.discontinuities(a, b));
        pts.push(b);
        pts.windows(2)
            .map(|w| {
                let panels = ((w[1] - w[0]) * 8.0).ceil().max(1.0) as usize;
                crate::numeric::gl5_composite(|t| g(self.norm_at(t)), w[0], w[1], panels)
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateNorm {
    Euclidean,
    /// √(Δz·Σxᵢ²)
    GridL2 { dz: f64 },
    /// Σ_b √(Δz·Σ_{i∈b} xᵢ²) over `blocks` equal consecutive blocks
    BlockSumGridL2 { dz: f64, blocks: usize },
}

impl StateNorm {
    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        match self {
            StateNorm::Euclidean => x.norm(),
            StateNorm::GridL2 { dz } => dz.sqrt() * x.norm(),
            StateNorm::BlockSumGridL2 { dz, blocks } => {
                let m = x.len() / blocks;
                (0..*blocks).map(|b| x.rows(b * m, m).norm()).sum::<f64>() * dz.sqrt()
            }
        }
    }
}

#[derive(Clone)]
pub struct SemilinearSystem {
    pub gen: GeneratorSpec,
    pub input_dim: usize,
    pub input_op: Option<MatFn>,
    pub nonlinearity: Option<NonlinFn>,
    pub lipschitz_hint: Option<f64>,
    pub state_norm: StateNorm,
    /// norm applied to inputs generated for this system
    pub input_norm: InputNorm,
    pub name: String,
}

impl std::fmt::Debug for SemilinearSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SemilinearSystem({}, {:?})", self.name, self.gen)
    }
}

impl SemilinearSystem {
    pub fn linear(gen: GeneratorSpec) -> Self {
        let n = gen.dim;
        SemilinearSystem {
            name: gen.name.clone(),
            gen,
            input_dim: n,
            input_op: None,
            nonlinearity: None,
            lipschitz_hint: Some(0.0),
            state_norm: StateNorm::Euclidean,
            input_norm: InputNorm::Weighted(1.0),
        }
    }

    /// ẋ = A(t)x + B(t)u.
    pub fn with_input_op<F>(mut self, input_dim: usize, b: F) -> Self
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.input_dim = input_dim;
        self.input_op = Some(Arc::new(b));
        self
    }

    pub fn with_constant_b(self, b: DMatrix<f64>) -> Self {
        let m = b.ncols();
        self.with_input_op(m, move |_| b.clone())
    }

    pub fn with_nonlinearity<F>(mut self, input_dim: usize, f: F, lipschitz_hint: Option<f64>) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.input_dim = input_dim;
        self.nonlinearity = Some(Arc::new(f));
        self.lipschitz_hint = lipschitz_hint;
        self
    }

    pub fn with_state_norm(mut self, norm: StateNorm) -> Self {
        self.state_norm = norm;
        self
    }

    pub fn with_input_norm(mut self, norm: InputNorm) -> Self {
        self.input_norm = norm;
        self
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.gen.dim
    }

    /// Ψ(t,x,u) = B(t)u + f(t,x,u).
    pub fn psi(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.gen.dim);
        if let Some(b) = &self.input_op {
            out += b(t) * u;
        }
        if let Some(f) = &self.nonlinearity {
            out += f(t, x, u);
        }
        out
    }

    /// Grid sup of ‖B(t)‖ on [a, b].
    pub fn b_sup(&self, a: f64, b: f64) -> f64 {
        let Some(bf) = &self.input_op else { return 0.0 };
        let n = (((b - a) * 16.0).ceil() as usize).max(8);
        (0..=n)
            .map(|i| crate::numeric::op_norm(&bf(a + (b - a) * i as f64 / n as f64), Default::default()))
            .fold(0.0, f64::max)
    }

    /// Step used when none is given: min(10⁻², 0.1/L_Ψ), also capped by 0.1/‖A(t0)‖ when
    /// the propagator is not an exact exponential.
    pub fn default_step(&self, t0: f64) -> f64 {
        let mut h: f64 = 1e-2;
        let l = self.lipschitz_hint.unwrap_or(1.0);
        if l > 0.0 {
            h = h.min(0.1 / l);
        }
        if !self.gen.exact_exponential() {
            let a = self.gen.norm_at(t0);
            if a > 0.0 {
                h = h.min(0.1 / a);
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOpts {
    pub step: Option<f64>,
    pub blowup_threshold: f64,
    pub min_step: f64,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts { step: None, blowup_threshold: DEFAULT_BLOWUP, min_step: 1e-9 }
    }
}

impl SolveOpts {
    pub fn with_step(step: f64) -> Self {
        SolveOpts { step: Some(step), ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajStatus {
    Complete,
    BlowUp { t_max: f64 },
    StepFailure { t: f64 },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub input_norms: Vec<f64>,
    pub status: TrajStatus,
    pub state_norm: StateNorm,
    pub input_label: String,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|x| self.state_norm.norm(x)).collect()
    }

    /// Linear interpolation between nodes.
    pub fn state_at(&self, t: f64) -> Option<DVector<f64>> {
        if t < self.times[0] || t > self.final_time() {
            return None;
        }
        let j = self.times.partition_point(|&s| s <= t);
        if j == self.times.len() {
            return Some(self.final_state().clone());
        }
        let (a, b) = (self.times[j - 1], self.times[j]);
        let w = (t - a) / (b - a);
        Some(&self.states[j - 1] * (1.0 - w) + &self.states[j] * w)
    }

    pub fn to_csv(&self) -> String {
        let n = self.states[0].len();
        let mut s = String::from("time");
        for i in 1..=n {
            let _ = write!(s, ",x_{i}");
        }
        s.push_str(",input_norm\n");
        for ((t, x), un) in self.times.iter().zip(&self.states).zip(&self.input_norms) {
            let _ = write!(s, "{t}");
            for v in x.iter() {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{un}");
        }
        s
    }
}

/// One exponential midpoint step from t to t+h; reads u only at t and t+h/2.
fn mild_step(sys: &SemilinearSystem, p: &Propagator, u: &InputSignal, t: f64, h: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    let tm = t + 0.5 * h;
    let t1 = t + h;
    let has_psi = sys.input_op.is_some() || sys.nonlinearity.is_some();
    let lin = p.apply(t1, t, x)?;
    if !has_psi {
        return Ok(lin);
    }
    let psi0 = sys.psi(t, x, &u.eval(t));
    let xm = p.apply(tm, t, &(x + &psi0 * (0.5 * h)))?;
    let psim = sys.psi(tm, &xm, &u.eval(tm));
    Ok(lin + p.apply(t1, tm, &psim)? * h)
}

/// Mild solution on [t0, horizon]. Steps run on the grid t0 + kh and are cut at input jumps,
/// after which the grid restarts at the jump, so nodes before a jump never depend on it.
pub fn solve_mild(sys: &SemilinearSystem, t0: f64, x0: &DVector<f64>, u: &InputSignal, horizon: f64, opts: SolveOpts) -> Result<Trajectory> {
    if x0.len() != sys.dim() {
        return Err(Error::InvalidArgument(format!("x0 has dimension {}, system {}", x0.len(), sys.dim())));
    }
    if !(horizon > t0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must exceed t0 {t0}")));
    }
    if (sys.input_op.is_some() || sys.nonlinearity.is_some()) && u.dim != sys.input_dim {
        return Err(Error::InvalidArgument(format!("input dimension {} != {}", u.dim, sys.input_dim)));
    }
    let h = opts.step.unwrap_or_else(|| sys.default_step(t0));
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let p = Propagator::new(&sys.gen);
    let mut jumps = u.discontinuities(t0, horizon);
    jumps.push(horizon);
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![x0.clone()],
        input_norms: vec![u.norm_at(t0)],
        status: TrajStatus::Complete,
        state_norm: sys.state_norm,
        input_label: u.label.clone(),
    };
    let mut x = x0.clone();
    let mut t = t0;
    for &seg_end in &jumps {
        let seg_start = t;
        let mut k = 0usize;
        while t < seg_end {
            k += 1;
            let t_next = (seg_start + k as f64 * h).min(seg_end);
            let mut sub = t_next - t;
            // halve on non-finite results until the step collapses
            let next = loop {
                match mild_step(sys, &p, u, t, sub, &x) {
                    Ok(y) if y.iter().all(|v| v.is_finite()) => break Some(y),
                    Err(Error::BlowUp { .. }) => {
                        traj.status = TrajStatus::BlowUp { t_max: t };
                        return Ok(traj);
                    }
                    Err(e) => return Err(e),
                    Ok(_) => {
                        sub *= 0.5;
                        if sub < opts.min_step {
                            break None;
                        }
                    }
                }
            };
            let Some(y) = next else {
                traj.status = TrajStatus::StepFailure { t };
                return Ok(traj);
            };
            t = if sub < t_next - t { t + sub } else { t_next };
            if sub < t_next - t {
                k -= 1;
            }
            x = y;
            let nrm = sys.state_norm.norm(&x);
            traj.times.push(t);
            traj.states.push(x.clone());
            traj.input_norms.push(u.norm_at(t));
            if nrm > opts.blowup_threshold {
                traj.status = TrajStatus::BlowUp { t_max: t };
                return Ok(traj);
            }
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone)]
pub struct ControlAxiomReport {
    pub identity_ok: bool,
    pub causality_ok: bool,
    pub continuity_modulus: f64,
    pub cocycle_max_residual: f64,
    pub cocycle_ok: bool,
    pub samples: usize,
}

impl ControlAxiomReport {
    pub fn passes(&self) -> bool {
        self.identity_ok && self.causality_ok && self.cocycle_ok
    }
}

/// Σ1 identity, Σ2 causality, Σ3 continuity modulus, Σ4 cocycle on each (t0, x0, u) sample.
pub fn check_control_axioms(sys: &SemilinearSystem, samples: &[(f64, DVector<f64>, InputSignal)], horizon: f64, tol: f64) -> Result<ControlAxiomReport> {
    let mut rep = ControlAxiomReport {
        identity_ok: true,
        causality_ok: true,
        continuity_modulus: 0.0,
        cocycle_max_residual: 0.0,
        cocycle_ok: true,
        samples: samples.len(),
    };
    let h = 1e-3;
    for (t0, x0, u) in samples {
        let t0 = *t0;
        if !(horizon > t0) {
            return Err(Error::InvalidArgument("sample t0 beyond horizon".into()));
        }
        let opts = SolveOpts::with_step(h);
        let full = solve_mild(sys, t0, x0, u, horizon, opts)?;
        if full.states[0] != *x0 || full.times[0] != t0 {
            rep.identity_ok = false;
        }
        let m = ((horizon - t0) / (2.0 * h)).round().max(1.0);
        let tau = t0 + m * h;

        let mutated = u.with_tail(tau, Segment::Constant(DVector::from_element(u.dim, 7.0)));
        let a = solve_mild(sys, t0, x0, u, tau, opts)?;
        let b = solve_mild(sys, t0, x0, &mutated, tau, opts)?;
        let fm = solve_mild(sys, t0, x0, &mutated, horizon, opts)?;
        let prefix_equal = full
            .times
            .iter()
            .zip(&full.states)
            .zip(fm.times.iter().zip(&fm.states))
            .take_while(|((t, _), _)| **t <= tau)
            .all(|((ta, xa), (tb, xb))| ta == tb && xa == xb);
        if a.states != b.states || !prefix_equal {
            rep.causality_ok = false;
        }

        for w in full.states.windows(2) {
            rep.continuity_modulus = rep.continuity_modulus.max(sys.state_norm.norm(&(&w[1] - &w[0])));
        }

        if full.status == TrajStatus::Complete {
            let mid = a.final_state().clone();
            let rest = solve_mild(sys, tau, &mid, u, horizon, opts)?;
            let d = full.final_state();
            let r = sys.state_norm.norm(&(d - rest.final_state())) / (1.0 + sys.state_norm.norm(d));
            rep.cocycle_max_residual = rep.cocycle_max_residual.max(r);
        }
    }
    rep.cocycle_ok = rep.cocycle_max_residual <= tol;
    Ok(rep)
}

/// Largest sampled ‖Ψ(t,x,u) − Ψ(t,y,u)‖/‖x − y‖ over ‖x‖,‖y‖ ≤ c_state, ‖u‖ ≤ c_input.
pub fn lipschitz_probe(sys: &SemilinearSystem, c_state: f64, c_input: f64, t_range: (f64, f64), samples: usize, seed: u64) -> Result<f64> {
    let Some(f) = &sys.nonlinearity else {
        return Err(Error::Precondition("lipschitz_probe needs a nonlinearity".into()));
    };
    let mut rng = rng::stream(seed, rng::label("lipschitz_probe"));
    let n = sys.dim();
    let m = sys.input_dim;
    let ball = |rng: &mut rand_chacha::ChaCha8Rng, d: usize, c: f64, on_sphere: bool| {
        let v = DVector::<f64>::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let nv = v.norm().max(1e-300);
        let r = if on_sphere { c } else { c * rng.gen::<f64>() };
        v * (r / nv)
    };
    let mut best = 0.0f64;
    for i in 0..samples {
        let t = rng.gen_range(t_range.0..=t_range.1);
        let x = ball(&mut rng, n, c_state, i % 4 == 0);
        let u = ball(&mut rng, m, c_input, i % 2 == 0);
        let y = if i % 2 == 0 {
            let d = ball(&mut rng, n, 1e-6 * c_state.max(1e-6), true);
            let y = &x + &d;
            if sys.state_norm.norm(&y) > c_state { &x - d } else { y }
        } else {
            ball(&mut rng, n, c_state, false)
        };
        let fx = f(t, &x, &u);
        let fy = f(t, &y, &u);
        if fx.iter().chain(fy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSystem(format!("non-finite nonlinearity at t = {t}")));
        }
        let dx = sys.state_norm.norm(&(&x - &y));
        if dx > 1e-9 * c_state {
            best = best.max(sys.state_norm.norm(&(fx - fy)) / dx);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::adaptive_gl;
    use proptest::prelude::*;

    fn scalar_sys(a: f64) -> SemilinearSystem {
        SemilinearSystem::linear(GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, a))).with_constant_b(DMatrix::from_element(1, 1, 1.0))
    }

    fn x1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn scalar_constant_input() {
        let tr = solve_mild(&scalar_sys(-1.0), 0.0, &x1(0.0), &InputSignal::scalar_constant(1.0), 1.0, SolveOpts::default()).unwrap();
        assert_eq!(tr.status, TrajStatus::Complete);
        assert!((tr.final_state()[0] - (1.0 - (-1f64).exp())).abs() < 1e-4);
        assert_eq!(tr.final_time(), 1.0);
    }

    #[test]
    fn step_input_is_continuous_at_jump() {
        let u = InputSignal::step(1.0, x1(0.0), x1(1.0));
        let tr = solve_mild(&scalar_sys(-1.0), 0.0, &x1(0.0), &u, 2.0, SolveOpts::default()).unwrap();
        assert!(tr.times.contains(&1.0));
        let j = tr.times.iter().position(|&t| t == 1.0).unwrap();
        assert!(tr.states[j][0].abs() < 1e-15);
        assert!((tr.states[j + 1][0] - tr.states[j][0]).abs() < 0.011);
        assert!((tr.final_state()[0] - (1.0 - (-1f64).exp())).abs() < 1e-4);
    }

    fn ltv_2d() -> SemilinearSystem {
        let g = GeneratorSpec::dense(
            "ltv",
            2,
            |t| DMatrix::from_row_slice(2, 2, &[-1.0, 0.3 * t.sin(), -0.2, -1.5 + 0.5 * t.cos()]),
            crate::evolution::Breaks::None,
            false,
        );
        SemilinearSystem::linear(g).with_input_op(1, |t| DMatrix::from_row_slice(2, 1, &[1.0, 0.5 * (2.0 * t).cos()]))
    }

    #[test]
    fn linear_matches_variation_of_constants() {
        let sys = ltv_2d();
        let u = InputSignal::sine(x1(1.0), 0.3, 0.2);
        let x0 = DVector::from_vec(vec![1.0, -1.0]);
        let tr = solve_mild(&sys, 0.0, &x0, &u, 2.0, SolveOpts::with_step(1e-3)).unwrap();
        let p = Propagator::new(&sys.gen);
        let mut oracle = p.apply(2.0, 0.0, &x0).unwrap();
        let b = sys.input_op.clone().unwrap();
        for i in 0..2 {
            let f = |s: f64| (p.apply(2.0, s, &(b(s) * u.eval(s))).unwrap())[i];
            oracle[i] += adaptive_gl(&f, 0.0, 2.0, 1e-10);
        }
        assert!((tr.final_state() - &oracle).norm() < 1e-6, "{}", (tr.final_state() - &oracle).norm());
    }

    #[test]
    fn nonlinear_matches_fine_rk4() {
        let sys = SemilinearSystem::linear(GeneratorSpec::constant_matrix(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -1.0, -1.0])))
            .with_nonlinearity(1, |_, x, u| DVector::from_vec(vec![x[1].sin() * u[0], -0.2 * x[0].powi(3)]), Some(1.0));
        let u = InputSignal::sine(x1(1.0), 0.5, 0.0);
        let x0 = DVector::from_vec(vec![0.8, 0.4]);
        let tr = solve_mild(&sys, 0.0, &x0, &u, 3.0, SolveOpts::with_step(1e-3)).unwrap();
        let rhs = |t: f64, x: &DVector<f64>| {
            let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -1.0, -1.0]);
            a * x + DVector::from_vec(vec![x[1].sin() * (std::f64::consts::PI * t).sin(), -0.2 * x[0].powi(3)])
        };
        let mut y = x0.clone();
        let h = 1e-4;
        for k in 0..30000 {
            let t = k as f64 * h;
            let k1 = rhs(t, &y);
            let k2 = rhs(t + h / 2.0, &(&y + &k1 * (h / 2.0)));
            let k3 = rhs(t + h / 2.0, &(&y + &k2 * (h / 2.0)));
            let k4 = rhs(t + h, &(&y + &k3 * h));
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        assert!((tr.final_state() - y).norm() < 1e-5);
    }

    #[test]
    fn observed_order_is_two() {
        let exact = 1.0 - (-1f64).exp();
        let err = |h: f64| (solve_mild(&scalar_sys(-1.0), 0.0, &x1(0.0), &InputSignal::scalar_constant(1.0), 1.0, SolveOpts::with_step(h)).unwrap().final_state()[0] - exact).abs();
        let hs = [0.1, 0.05, 0.025, 0.0125, 0.00625];
        let e: Vec<f64> = hs.iter().map(|&h| err(h)).collect();
        for w in e.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - SCHEME_ORDER).abs() < 0.3, "{order}");
        }
    }

    #[test]
    fn blow_up_detected() {
        let sys = SemilinearSystem::linear(GeneratorSpec::zero(1)).with_nonlinearity(1, |_, x, _| x.map(|v| v * v), None);
        let tr = solve_mild(&sys, 0.0, &x1(1.0), &InputSignal::zero(1), 2.0, SolveOpts::with_step(1e-3)).unwrap();
        let TrajStatus::BlowUp { t_max } = tr.status else { panic!("{:?}", tr.status) };
        assert!(t_max > 0.99 && t_max < 1.05, "{t_max}");
        let lo = solve_mild(&sys, 0.0, &x1(1.0), &InputSignal::zero(1), 2.0, SolveOpts { blowup_threshold: 1e6, ..SolveOpts::with_step(1e-3) }).unwrap();
        let TrajStatus::BlowUp { t_max: t_lo } = lo.status else { panic!() };
        assert!(t_lo <= t_max);
    }

    #[test]
    fn control_axioms_linear_scalar() {
        let sys = scalar_sys(-1.0);
        let samples = vec![
            (0.0, x1(1.0), InputSignal::scalar_constant(1.0)),
            (0.5, x1(-2.0), InputSignal::sine(x1(2.0), 1.0, 0.0)),
            (1.0, x1(0.3), InputSignal::step(1.7, x1(1.0), x1(-1.0))),
        ];
        let rep = check_control_axioms(&sys, &samples, 3.0, 1e-6).unwrap();
        assert!(rep.passes(), "{rep:?}");
        assert!(rep.continuity_modulus < 0.01);
    }

    #[test]
    fn lipschitz_probe_examples() {
        let base = SemilinearSystem::linear(GeneratorSpec::zero(1));
        let s = base.clone().with_nonlinearity(1, |_, x, u| x.map(|v| v.sin() * u[0]), None);
        let k = lipschitz_probe(&s, 2.0, 1.0, (0.0, 1.0), 4000, 1).unwrap();
        assert!(k > 0.95 && k <= 1.0 + 1e-9, "{k}");
        let z = base.clone().with_nonlinearity(1, |_, x, _| x * 0.0, None);
        assert_eq!(lipschitz_probe(&z, 2.0, 1.0, (0.0, 1.0), 500, 1).unwrap(), 0.0);
        let q = base.clone().with_nonlinearity(1, |_, x, _| x.map(|v| v * v), None);
        let c = 3.0;
        let k = lipschitz_probe(&q, c, 1.0, (0.0, 1.0), 4000, 2).unwrap();
        assert!(k > 0.95 * 2.0 * c && k <= 2.0 * c + 1e-6, "{k}");
        let bad = base.with_nonlinearity(1, |_, x, _| x.map(|v| v.ln()), None);
        assert!(matches!(lipschitz_probe(&bad, 1.0, 1.0, (0.0, 1.0), 10, 1), Err(Error::InvalidSystem(_))));
    }

    #[test]
    fn input_signal_basics() {
        let u = InputSignal::from_csv("time,u\n0,0\n1,2\n").unwrap();
        assert!((u.eval(0.5)[0] - 1.0).abs() < 1e-15);
        assert_eq!(u.eval(3.0)[0], 2.0);
        let s = InputSignal::step(1.0, x1(0.0), x1(3.0));
        assert_eq!(s.discontinuities(0.0, 2.0), vec![1.0]);
        assert_eq!(s.sup_norm(0.0, 2.0), 3.0);
        assert_eq!(s.eval(1.0)[0], 3.0);
        assert!((s.integral_of(|v| v * v, 0.0, 2.0) - 9.0).abs() < 1e-12);
        assert_eq!(s.truncated(1.5).eval(1.7)[0], 0.0);
        let tr = solve_mild(&scalar_sys(-1.0), 0.0, &x1(0.0), &s, 0.05, SolveOpts::with_step(0.01)).unwrap();
        assert!(tr.to_csv().starts_with("time,x_1,input_norm\n"));
        assert!(matches!(solve_mild(&scalar_sys(-1.0), 1.0, &x1(0.0), &s, 1.0, SolveOpts::default()), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn causality_bitwise(tau in 0.05f64..1.9, c in -3.0f64..3.0, x0 in -2.0f64..2.0) {
            let sys = ltv_2d();
            let u = InputSignal::sine(x1(1.0), 0.7, 0.1);
            let v = u.with_tail(tau, Segment::Constant(x1(c)));
            let x0 = DVector::from_vec(vec![x0, 0.5]);
            let a = solve_mild(&sys, 0.0, &x0, &u, 2.0, SolveOpts::default()).unwrap();
            let b = solve_mild(&sys, 0.0, &x0, &v, 2.0, SolveOpts::default()).unwrap();
            for (i, t) in a.times.iter().enumerate() {
                if *t > tau { break; }
                prop_assert_eq!(*t, b.times[i]);
                prop_assert_eq!(&a.states[i], &b.states[i]);
            }
        }

        #[test]
        fn blowup_threshold_monotone(x0 in 0.5f64..2.0, thr in 1e3f64..1e8) {
            let sys = SemilinearSystem::linear(GeneratorSpec::zero(1)).with_nonlinearity(1, |_, x, _| x.map(|v| v * v), None);
            let o1 = SolveOpts { blowup_threshold: thr, ..SolveOpts::with_step(1e-2) };
            let o2 = SolveOpts { blowup_threshold: thr * 10.0, ..o1 };
            let a = solve_mild(&sys, 0.0, &x1(x0), &InputSignal::zero(1), 4.0, o1).unwrap();
            let b = solve_mild(&sys, 0.0, &x1(x0), &InputSignal::zero(1), 4.0, o2).unwrap();
            prop_assert!(b.final_time() >= a.final_time());
        }
    }
}

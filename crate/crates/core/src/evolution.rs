//! Evolution families W(t,s) generated by time-varying matrices A(t).

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::{expm, fit_line, gl5_composite, op_norm, NormOpts};

pub const OVERFLOW_NORM: f64 = 1e300;
pub const DEFAULT_RK_STEP: f64 = 1e-3;

type ScalarEval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type DenseEval = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
type DiagEval = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorForm {
    ScalarPiecewise,
    MatrixTimeVarying,
    DiagonalSpectral,
}

#[derive(Clone)]
pub enum GenEval {
    Scalar(ScalarEval),
    Dense(DenseEval),
    Diagonal(DiagEval),
    /// A(t) = M + a(t)·I; W(t,s) = e^{(t−s)M}·e^{∫a}
    Shifted { m: Arc<DMatrix<f64>>, shift: ScalarEval },
}

/// Discontinuity set of A(t).
#[derive(Debug, Clone, PartialEq)]
pub enum Breaks {
    None,
    List(Vec<f64>),
    Periodic { period: f64, offset: f64 },
}

impl Breaks {
    /// Points strictly inside (a, b), ascending.
    pub fn inside(&self, a: f64, b: f64) -> Vec<f64> {
        match self {
            Breaks::None => Vec::new(),
            Breaks::List(v) => v.iter().copied().filter(|&x| x > a && x < b).collect(),
            Breaks::Periodic { period, offset } => {
                let mut out = Vec::new();
                let mut k = ((a - offset) / period).floor() as i64;
                loop {
                    let x = offset + k as f64 * period;
                    if x >= b {
                        break;
                    }
                    if x > a {
                        out.push(x);
                    }
                    k += 1;
                }
                out
            }
        }
    }
}

#[derive(Clone)]
pub struct GeneratorSpec {
    pub name: String,
    pub dim: usize,
    pub eval: GenEval,
    pub breaks: Breaks,
    /// A is constant between consecutive discontinuities
    pub piecewise_constant: bool,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GeneratorSpec({}, dim={}, form={:?})", self.name, self.dim, self.form())
    }
}

impl GeneratorSpec {
    pub fn form(&self) -> GeneratorForm {
        match self.eval {
            GenEval::Scalar(_) => GeneratorForm::ScalarPiecewise,
            GenEval::Diagonal(_) => GeneratorForm::DiagonalSpectral,
            _ => GeneratorForm::MatrixTimeVarying,
        }
    }

    pub fn scalar<F>(name: &str, f: F, breaks: Breaks, piecewise_constant: bool) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        GeneratorSpec { name: name.into(), dim: 1, eval: GenEval::Scalar(Arc::new(f)), breaks, piecewise_constant }
    }

    pub fn dense<F>(name: &str, dim: usize, f: F, breaks: Breaks, piecewise_constant: bool) -> Self
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        GeneratorSpec { name: name.into(), dim, eval: GenEval::Dense(Arc::new(f)), breaks, piecewise_constant }
    }

    pub fn diagonal<F>(name: &str, dim: usize, f: F, breaks: Breaks, piecewise_constant: bool) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        GeneratorSpec { name: name.into(), dim, eval: GenEval::Diagonal(Arc::new(f)), breaks, piecewise_constant }
    }

    /// A(t) = M + a(t)I.
    pub fn shifted<F>(name: &str, m: DMatrix<f64>, shift: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        GeneratorSpec {
            name: name.into(),
            dim: m.nrows(),
            eval: GenEval::Shifted { m: Arc::new(m), shift: Arc::new(shift) },
            breaks: Breaks::None,
            piecewise_constant: false,
        }
    }

    pub fn constant_matrix(a: DMatrix<f64>) -> Self {
        if a.nrows() == 1 {
            let v = a[(0, 0)];
            return GeneratorSpec::scalar(&format!("constant({v})"), move |_| v, Breaks::None, true);
        }
        GeneratorSpec::shifted("constant_matrix", a, |_| 0.0)
    }

    pub fn zero(n: usize) -> Self {
        GeneratorSpec::constant_matrix(DMatrix::zeros(n, n))
    }

    /// Scalar A(t) = −2ln(2(k+1)²) on [k, k+½) and 2ln(k+1) on [k+½, k+1): uniformly
    /// attractive but not uniformly stable.
    pub fn example_a1() -> Self {
        GeneratorSpec::scalar(
            "example_a1",
            |t| {
                let k = t.floor();
                if t - k < 0.5 {
                    -2.0 * (2.0 * (k + 1.0) * (k + 1.0)).ln()
                } else {
                    2.0 * (k + 1.0).ln()
                }
            },
            Breaks::Periodic { period: 0.5, offset: 0.0 },
            true,
        )
    }

    /// A(t) = −1/(1+t): attractive with algebraic decay W(t,s) = (1+s)/(1+t).
    pub fn inverse_time_decay() -> Self {
        GeneratorSpec::scalar("inverse_time_decay", |t| -1.0 / (1.0 + t), Breaks::None, false)
    }

    /// A(t) = A0 + ε·sin(ωt)·J.
    pub fn sinusoidal_perturbation(a0: DMatrix<f64>, j: DMatrix<f64>, eps: f64, omega: f64) -> Self {
        let n = a0.nrows();
        GeneratorSpec::dense("sinusoidal_perturbation", n, move |t| &a0 + &j * (eps * (omega * t).sin()), Breaks::None, false)
    }

    /// Dirichlet heat eigenrates −ν(kπ/ℓ)², k = 1..n.
    pub fn diagonal_heat(nu: f64, ell: f64, n: usize) -> Self {
        let rates = DVector::from_fn(n, |k, _| -nu * ((k + 1) as f64 * std::f64::consts::PI / ell).powi(2));
        GeneratorSpec::diagonal(&format!("diagonal_heat({nu},{ell},{n})"), n, move |_| rates.clone(), Breaks::None, true)
    }

    /// Eigenrates of the clamped −∂⁴ − ϱ∂² discretization on (0,1) with n interior points.
    pub fn diagonal_ks(rho: f64, n: usize) -> Result<Self> {
        let grid = crate::pde_examples::Grid1D::new(n, 1.0)?;
        let op = crate::pde_examples::assemble(crate::pde_examples::OperatorKind::KsComposite { rho }, &grid)?;
        let ev = crate::numeric::sym_eigenvalues(&op.matrix);
        let rates = DVector::from_vec(ev);
        Ok(GeneratorSpec::diagonal(&format!("diagonal_ks({rho},{n})"), n, move |_| rates.clone(), Breaks::None, true))
    }

    /// Piecewise-constant matrices from CSV rows `t_start, a11, a12, ..., ann`.
    pub fn from_csv_blocks(text: &str, dim: usize) -> Result<Self> {
        let mut starts = Vec::new();
        let mut mats = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let vals = match vals {
                Ok(v) => v,
                Err(_) if starts.is_empty() => continue,
                Err(_) => return Err(Error::Parse(format!("line {}: non-numeric entry", i + 1))),
            };
            if vals.len() != 1 + dim * dim {
                return Err(Error::Parse(format!("line {}: expected {} columns", i + 1, 1 + dim * dim)));
            }
            starts.push(vals[0]);
            mats.push(DMatrix::from_row_slice(dim, dim, &vals[1..]));
        }
        if starts.is_empty() || starts[0] != 0.0 || starts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parse("blocks must start at 0 with increasing start times".into()));
        }
        let breaks = starts[1..].to_vec();
        let s2 = starts.clone();
        Ok(GeneratorSpec::dense(
            "sampled_blocks",
            dim,
            move |t| mats[s2.partition_point(|&x| x <= t).max(1) - 1].clone(),
            Breaks::List(breaks),
            true,
        ))
    }

    /// Dense A(t).
    pub fn matrix_at(&self, t: f64) -> DMatrix<f64> {
        match &self.eval {
            GenEval::Scalar(f) => DMatrix::from_element(1, 1, f(t)),
            GenEval::Dense(f) => f(t),
            GenEval::Diagonal(f) => DMatrix::from_diagonal(&f(t)),
            GenEval::Shifted { m, shift } => m.as_ref() + DMatrix::identity(self.dim, self.dim) * shift(t),
        }
    }

    /// ‖A(t)‖₂.
    pub fn norm_at(&self, t: f64) -> f64 {
        match &self.eval {
            GenEval::Scalar(f) => f(t).abs(),
            GenEval::Diagonal(f) => f(t).amax(),
            _ => op_norm(&self.matrix_at(t), NormOpts::default()),
        }
    }

    /// Whether W over an interval is computed by an exact exponential.
    pub fn exact_exponential(&self) -> bool {
        matches!(self.eval, GenEval::Scalar(_) | GenEval::Diagonal(_) | GenEval::Shifted { .. }) || self.piecewise_constant
    }
}

/// Time integral of a scalar function; exact for constants on piecewise-constant generators.
fn integrate_scalar(f: &ScalarEval, a: f64, b: f64, constant: bool) -> f64 {
    if constant {
        return f(0.5 * (a + b)) * (b - a);
    }
    let panels = ((b - a) / 0.05).ceil().max(1.0) as usize;
    gl5_composite(|t| f(t), a, b, panels)
}

/// W(t,s)x with a cache of matrix exponentials for shift-invariant parts.
pub struct Propagator {
    pub gen: GeneratorSpec,
    pub step: f64,
    pub order: u32,
    cache: Mutex<HashMap<u64, Arc<DMatrix<f64>>>>,
}

impl Propagator {
    pub fn new(gen: &GeneratorSpec) -> Self {
        Self::with_step(gen, DEFAULT_RK_STEP)
    }

    pub fn with_step(gen: &GeneratorSpec, step: f64) -> Self {
        let order = if gen.exact_exponential() { 0 } else { 4 };
        Propagator { gen: gen.clone(), step, order, cache: Mutex::new(HashMap::new()) }
    }

    fn expm_shift_invariant(&self, m: &DMatrix<f64>, dt: f64) -> Arc<DMatrix<f64>> {
        let key = dt.to_bits();
        if let Some(e) = self.cache.lock().unwrap().get(&key) {
            return e.clone();
        }
        let e = Arc::new(expm(&(m * dt)));
        let mut c = self.cache.lock().unwrap();
        if c.len() > 64 {
            c.clear();
        }
        c.insert(key, e.clone());
        e
    }

    fn segments(&self, s: f64, t: f64) -> Vec<(f64, f64)> {
        let mut pts = vec![s];
        pts.extend(self.gen.breaks.inside(s, t));
        pts.push(t);
        pts.windows(2).map(|w| (w[0], w[1])).filter(|(a, b)| b > a).collect()
    }

    fn rk4_vec(&self, a: f64, b: f64, x: &DVector<f64>) -> DVector<f64> {
        let n = ((b - a) / self.step).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let mut y = x.clone();
        for i in 0..n {
            let t = a + i as f64 * h;
            let a0 = self.gen.matrix_at(t);
            let am = self.gen.matrix_at(t + 0.5 * h);
            let a1 = self.gen.matrix_at(t + h);
            let k1 = &a0 * &y;
            let k2 = &am * (&y + &k1 * (0.5 * h));
            let k3 = &am * (&y + &k2 * (0.5 * h));
            let k4 = &a1 * (&y + &k3 * h);
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        y
    }

    fn rk4_mat(&self, a: f64, b: f64) -> DMatrix<f64> {
        let n = ((b - a) / self.step).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let d = self.gen.dim;
        let mut y = DMatrix::<f64>::identity(d, d);
        for i in 0..n {
            let t = a + i as f64 * h;
            let a0 = self.gen.matrix_at(t);
            let am = self.gen.matrix_at(t + 0.5 * h);
            let a1 = self.gen.matrix_at(t + h);
            let k1 = &a0 * &y;
            let k2 = &am * (&y + &k1 * (0.5 * h));
            let k3 = &am * (&y + &k2 * (0.5 * h));
            let k4 = &a1 * (&y + &k3 * h);
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        y
    }

    fn diag_factors(&self, a: f64, b: f64) -> DVector<f64> {
        let GenEval::Diagonal(f) = &self.gen.eval else { unreachable!() };
        let v = if self.gen.piecewise_constant {
            f(0.5 * (a + b)) * (b - a)
        } else {
            let panels = ((b - a) / 0.05).ceil().max(1.0) as usize;
            let h = (b - a) / panels as f64;
            let mut acc = DVector::zeros(self.gen.dim);
            for p in 0..panels {
                for (x, w) in crate::numeric::gl5_nodes(a + p as f64 * h, a + (p + 1) as f64 * h) {
                    acc += f(x) * w;
                }
            }
            acc
        };
        v.map(f64::exp)
    }

    /// W(b,a) over an interval without interior discontinuities.
    fn segment_matrix(&self, a: f64, b: f64) -> DMatrix<f64> {
        let pc = self.gen.piecewise_constant;
        match &self.gen.eval {
            GenEval::Scalar(f) => DMatrix::from_element(1, 1, integrate_scalar(f, a, b, pc).exp()),
            GenEval::Diagonal(_) => DMatrix::from_diagonal(&self.diag_factors(a, b)),
            GenEval::Shifted { m, shift } => {
                let e = self.expm_shift_invariant(m, b - a);
                e.as_ref() * integrate_scalar(shift, a, b, false).exp()
            }
            GenEval::Dense(f) => {
                if pc {
                    expm(&(f(0.5 * (a + b)) * (b - a)))
                } else {
                    self.rk4_mat(a, b)
                }
            }
        }
    }

    fn segment_apply(&self, a: f64, b: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.gen.eval {
            GenEval::Dense(_) if !self.gen.piecewise_constant => self.rk4_vec(a, b, x),
            GenEval::Diagonal(_) => self.diag_factors(a, b).component_mul(x),
            GenEval::Scalar(_) => x * self.segment_matrix(a, b)[(0, 0)],
            _ => self.segment_matrix(a, b) * x,
        }
    }

    fn check(&self, s: f64, t: f64, n: usize) -> Result<()> {
        if t < s {
            return Err(Error::InvalidArgument(format!("propagation backwards: t = {t} < s = {s}")));
        }
        if n != self.gen.dim {
            return Err(Error::InvalidArgument(format!("state dimension {n} != generator dimension {}", self.gen.dim)));
        }
        Ok(())
    }

    /// W(t,s)x.
    pub fn apply(&self, t: f64, s: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(s, t, x.len())?;
        if t == s {
            return Ok(x.clone());
        }
        let mut y = x.clone();
        for (a, b) in self.segments(s, t) {
            y = self.segment_apply(a, b, &y);
            if !(y.amax() <= OVERFLOW_NORM) {
                return Err(Error::BlowUp { time: b });
            }
        }
        Ok(y)
    }

    /// The matrix W(t,s).
    pub fn matrix(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        self.check(s, t, self.gen.dim)?;
        let mut w = DMatrix::<f64>::identity(self.gen.dim, self.gen.dim);
        if t == s {
            return Ok(w);
        }
        for (a, b) in self.segments(s, t) {
            w = self.segment_matrix(a, b) * w;
            if !(w.amax() <= OVERFLOW_NORM) {
                return Err(Error::BlowUp { time: b });
            }
        }
        Ok(w)
    }

    /// ‖W(t,s)‖₂.
    pub fn norm(&self, t: f64, s: f64) -> Result<f64> {
        Ok(op_norm(&self.matrix(t, s)?, NormOpts::default()))
    }
}

/// W(t,s)x with the default integrator settings.
pub fn propagate(gen: &GeneratorSpec, s: f64, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    Propagator::new(gen).apply(t, s, x)
}

#[derive(Debug, Clone)]
pub struct AxiomReport {
    pub identity_exact: bool,
    pub cocycle_max_residual: f64,
    /// (t, r, s) attaining the largest cocycle residual
    pub cocycle_witness: Option<(f64, f64, f64)>,
    pub cocycle_ok: bool,
    pub continuity_modulus: f64,
    pub sup_norm: f64,
    /// (t, s, ‖W(t,s)‖) attaining the grid supremum
    pub sup_witness: (f64, f64, f64),
    pub blow_up: Option<f64>,
}

impl AxiomReport {
    pub fn passes(&self) -> bool {
        self.identity_exact && self.cocycle_ok && self.blow_up.is_none()
    }
}

/// Identity, cocycle over every grid triple, a continuity modulus, and the grid sup of ‖W‖.
pub fn check_evolution_axioms(gen: &GeneratorSpec, grid: &[f64], probes: &[DVector<f64>], tol: f64) -> AxiomReport {
    let p = Propagator::new(gen);
    let mut rep = AxiomReport {
        identity_exact: true,
        cocycle_max_residual: 0.0,
        cocycle_witness: None,
        cocycle_ok: true,
        continuity_modulus: 0.0,
        sup_norm: 0.0,
        sup_witness: (0.0, 0.0, 0.0),
        blow_up: None,
    };
    let g = grid.len();
    for &t in grid {
        for x in probes {
            match p.apply(t, t, x) {
                Ok(y) if y == *x => {}
                _ => rep.identity_exact = false,
            }
        }
    }
    let delta = 1e-3;
    for i in 0..g {
        for k in i..g {
            let (s, t) = (grid[i], grid[k]);
            match p.norm(t, s) {
                Ok(nrm) if nrm > rep.sup_norm => {
                    rep.sup_norm = nrm;
                    rep.sup_witness = (t, s, nrm);
                }
                Ok(_) => {}
                Err(Error::BlowUp { time }) => rep.blow_up = Some(time),
                Err(_) => {}
            }
            for x in probes {
                if let (Ok(a), Ok(b), Ok(c)) = (p.apply(t, s, x), p.apply(t + delta, s, x), p.apply(t, (s + delta).min(t), x)) {
                    rep.continuity_modulus = rep.continuity_modulus.max((&b - &a).norm()).max((&c - &a).norm());
                }
            }
            for j in i..=k {
                let r = grid[j];
                for x in probes {
                    let direct = p.apply(t, s, x);
                    let chained = p.apply(r, s, x).and_then(|y| p.apply(t, r, &y));
                    if let (Ok(d), Ok(c)) = (direct, chained) {
                        let res = (&d - &c).norm() / (1.0 + d.norm());
                        if res > rep.cocycle_max_residual {
                            rep.cocycle_max_residual = res;
                            rep.cocycle_witness = Some((t, r, s));
                        }
                    }
                }
            }
        }
    }
    rep.cocycle_ok = rep.cocycle_max_residual <= tol;
    rep
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    pub k: f64,
    pub w: f64,
}

#[derive(Debug, Clone)]
pub struct StabilityClassification {
    pub uniform_bound_n: Option<f64>,
    /// (ε, T(ε)); T is none when no uniform time is certified on the grid
    pub attractivity_table: Vec<(f64, Option<f64>)>,
    pub exp_fit: Option<ExpFit>,
    pub bohl_window_k: f64,
    /// window bound does not drift when later initial times are added
    pub window_uniform: bool,
    /// every sampled initial time decays on its own (not necessarily uniformly)
    pub pointwise_attractive: bool,
    /// some ε had no T within the sampled lags
    pub partial: bool,
    /// (t0, t, ‖W(t,t0)‖) attaining the sampled supremum
    pub growth_witness: (f64, f64, f64),
    /// max(K^⌈T⌉, ε) when uniform attractivity and a uniform window bound are certified
    pub derived_uniform_bound: Option<f64>,
}

impl StabilityClassification {
    pub fn uniformly_attractive(&self) -> bool {
        !self.attractivity_table.is_empty() && self.attractivity_table.iter().all(|(_, t)| t.is_some())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifyOpts {
    pub t0_step: f64,
    pub lag_step: f64,
    /// largest sampled initial time; default horizon/2
    pub t0_max: Option<f64>,
    /// relative growth tolerated between early-t0 and all-t0 statistics
    pub drift_tol: f64,
    /// lag shift allowed when late-t0 rows are compared with the early-t0 envelope
    pub shift: f64,
}

impl Default for ClassifyOpts {
    fn default() -> Self {
        ClassifyOpts { t0_step: 0.25, lag_step: 0.25, t0_max: None, drift_tol: 0.05, shift: 1.0 }
    }
}

fn grid_to(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

fn attract_time(rows: &[Vec<f64>], lags: &[f64], eps: f64) -> Option<f64> {
    let m = lags.len();
    let mut env = vec![0.0f64; m];
    for r in rows {
        for j in 0..m {
            env[j] = env[j].max(r[j]);
        }
    }
    let mut ok_from = None;
    for j in (0..m).rev() {
        if env[j] <= eps {
            ok_from = Some(lags[j]);
        } else {
            break;
        }
    }
    ok_from
}

fn exp_fit_rows(rows: &[Vec<f64>], lags: &[f64]) -> Option<ExpFit> {
    let m = lags.len();
    let env: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).fold(0.0, f64::max)).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = lags.iter().zip(&env).filter(|(_, e)| **e > 1e-250).map(|(l, e)| (*l, e.ln())).unzip();
    let (_, slope) = fit_line(&xs, &ys)?;
    let w = -slope;
    if !(w > 1e-9) {
        return None;
    }
    let k = lags.iter().zip(&env).map(|(l, e)| e * (w * l).exp()).fold(0.0, f64::max);
    Some(ExpFit { k, w })
}

/// Grid maximum of ‖W(t,t0)‖ over t ∈ [t0, t0+1].
pub fn window_bound(gen: &GeneratorSpec, t0_grid: &[f64]) -> Result<f64> {
    if t0_grid.is_empty() {
        return Err(Error::InvalidArgument("empty t0 grid".into()));
    }
    let vals: Vec<Result<f64>> = t0_grid.par_iter().map(|&t0| window_at(gen, t0)).collect();
    let mut k = 0.0f64;
    for v in vals {
        k = k.max(v?);
    }
    Ok(k)
}

fn window_at(gen: &GeneratorSpec, t0: f64) -> Result<f64> {
    let p = Propagator::new(gen);
    let mut pts: Vec<f64> = (0..=32).map(|i| t0 + i as f64 / 32.0).collect();
    for b in gen.breaks.inside(t0, t0 + 1.0) {
        pts.push(b);
        pts.push(b - 1e-12);
    }
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    let mut w = DMatrix::<f64>::identity(gen.dim, gen.dim);
    let mut best = 1.0f64;
    for pair in pts.windows(2) {
        w = p.matrix(pair[1], pair[0])? * w;
        best = best.max(op_norm(&w, NormOpts::default()));
    }
    Ok(best)
}

/// Uniform stability, uniform attractivity, exponential fit and window bound on a grid
/// of initial times t0 ∈ [0, t0_max] and lags τ ∈ [0, horizon − t0_max].
pub fn classify_stability(gen: &GeneratorSpec, horizon: f64, eps_list: &[f64], opts: ClassifyOpts) -> Result<StabilityClassification> {
    if horizon < 1.0 || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("classify_stability needs horizon >= 1 and positive ε".into()));
    }
    let t0_max = opts.t0_max.unwrap_or(0.5 * horizon).min(horizon - opts.lag_step);
    let t0s = grid_to(t0_max, opts.t0_step);
    let lags = grid_to(horizon - t0_max, opts.lag_step);
    let rows: Vec<Result<Vec<f64>>> = t0s
        .par_iter()
        .map(|&t0| {
            let p = Propagator::new(gen);
            let mut w = DMatrix::<f64>::identity(gen.dim, gen.dim);
            let mut out = Vec::with_capacity(lags.len());
            out.push(1.0);
            for l in lags.windows(2) {
                w = match p.matrix(t0 + l[1], t0 + l[0]) {
                    Ok(step) => step * w,
                    Err(Error::BlowUp { .. }) => DMatrix::from_element(gen.dim, gen.dim, f64::INFINITY),
                    Err(e) => return Err(e),
                };
                out.push(if w.iter().all(|v| v.is_finite()) { op_norm(&w, NormOpts::default()) } else { f64::INFINITY });
            }
            Ok(out)
        })
        .collect();
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let n_early = (rows.len() + 1) / 2;
    let early = &rows[..n_early];
    let drift = 1.0 + opts.drift_tol;

    let mut witness = (0.0, 0.0, 0.0);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            if *v > witness.2 {
                witness = (t0s[i], t0s[i] + lags[j], *v);
            }
        }
    }
    let sup_early = early.iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    let uniform_bound_n = if witness.2.is_finite() && witness.2 <= sup_early * drift + 1e-12 { Some(witness.2) } else { None };

    let mut partial = false;
    let attractivity_table: Vec<(f64, Option<f64>)> = eps_list
        .iter()
        .map(|&eps| {
            let all = attract_time(&rows, &lags, eps);
            let ear = attract_time(early, &lags, eps);
            let t = match (all, ear) {
                (Some(a), Some(e)) if a <= e * (1.0 + 5.0 * opts.drift_tol) + 2.0 * opts.lag_step => Some(a),
                _ => None,
            };
            if all.is_none() {
                partial = true;
            }
            (eps, t)
        })
        .collect();

    let k_all = window_bound(gen, &t0s)?;
    let k_early = window_bound(gen, &t0s[..n_early])?;
    let window_uniform = k_all <= k_early * drift + 1e-12;

    // late rows stay below the decreasing majorant of the early envelope, taken a bounded lag earlier
    let mut env_early: Vec<f64> = (0..lags.len()).map(|j| early.iter().map(|r| r[j]).fold(0.0, f64::max)).collect();
    for j in (0..lags.len().saturating_sub(1)).rev() {
        env_early[j] = env_early[j].max(env_early[j + 1]);
    }
    let back = (opts.shift / opts.lag_step).round() as usize;
    let shift_dominated = rows[n_early..].iter().all(|r| r.iter().enumerate().all(|(j, v)| *v <= env_early[j.saturating_sub(back)] * drift + 1e-12));

    // an exponential bound implies a uniform window bound
    let exp_fit = match (exp_fit_rows(&rows, &lags), exp_fit_rows(early, &lags)) {
        (Some(a), Some(e)) if window_uniform && shift_dominated && a.w >= 0.75 * e.w => Some(a),
        _ => None,
    };

    let pointwise_attractive = rows.iter().all(|r| {
        let peak = r.iter().fold(0.0f64, |m, v| m.max(*v));
        peak.is_finite() && *r.last().unwrap() < 0.9 * peak.max(1.0)
    });

    let derived_uniform_bound = if window_uniform && attractivity_table.iter().all(|(_, t)| t.is_some()) {
        attractivity_table
            .iter()
            .map(|(eps, t)| k_all.max(1.0).powf(t.unwrap().ceil()).max(*eps))
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |x| x.min(v))))
    } else {
        None
    };

    Ok(StabilityClassification {
        uniform_bound_n,
        attractivity_table,
        exp_fit,
        bohl_window_k: k_all,
        window_uniform,
        pointwise_attractive,
        partial,
        growth_witness: witness,
        derived_uniform_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one() -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }

    #[test]
    fn example_a1_products() {
        let g = GeneratorSpec::example_a1();
        assert!((propagate(&g, 0.0, 1.0, &one()).unwrap()[0] - 0.5).abs() < 1e-14);
        assert!((propagate(&g, 1.5, 2.0, &one()).unwrap()[0] - 2.0).abs() < 1e-14);
        for k in 0..=10 {
            let kf = k as f64;
            let a = propagate(&g, kf, kf + 1.0, &one()).unwrap()[0];
            let b = propagate(&g, kf + 0.5, kf + 1.0, &one()).unwrap()[0];
            assert!((a - 1.0 / (2.0 * (kf + 1.0))).abs() < 1e-9);
            assert!((b - (kf + 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_is_exact_and_backwards_rejected() {
        let g = GeneratorSpec::sinusoidal_perturbation(-DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), 0.3, 2.0);
        let x = DVector::from_vec(vec![0.3, -1.7]);
        assert_eq!(propagate(&g, 1.3, 1.3, &x).unwrap(), x);
        assert!(matches!(propagate(&g, 2.0, 1.0, &x), Err(Error::InvalidArgument(_))));
        let big = GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, 800.0));
        assert!(matches!(propagate(&big, 0.0, 1.0, &one()), Err(Error::BlowUp { .. })));
    }

    fn taylor_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
        // independent oracle: truncated Taylor series with squaring
        let s = 10;
        let x = a / 2f64.powi(s);
        let n = a.nrows();
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..25 {
            term = &term * &x / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn constant_matrix_matches_exponential() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.5, 0.0, -0.2, -2.0, 0.7, 0.1, 0.0, -0.5]);
        let g = GeneratorSpec::constant_matrix(a.clone());
        let w = Propagator::new(&g).matrix(3.7, 0.4).unwrap();
        let o = taylor_exp(&(&a * 3.3));
        assert!((&w - &o).norm() / o.norm() < 1e-10);
        // the same matrix as a smooth dense generator goes through RK4
        let d = GeneratorSpec::dense("dense_const", 3, move |_| a.clone(), Breaks::None, false);
        let wd = Propagator::new(&d).matrix(3.7, 0.4).unwrap();
        assert!((&wd - &o).norm() / o.norm() < 1e-10);
    }

    fn ltv3() -> GeneratorSpec {
        let j = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.5, -1.0, 0.0, 1.0, 0.3, -1.0, 0.0]);
        GeneratorSpec::sinusoidal_perturbation(-DMatrix::identity(3, 3), j, 0.1, 1.0)
    }

    #[test]
    fn axioms_constant_and_example() {
        let g = GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, -1.0));
        let rep = check_evolution_axioms(&g, &[0.0, 0.5, 1.0, 2.0], &[one()], 1e-12);
        assert!(rep.passes());
        assert!((rep.sup_norm - 1.0).abs() < 1e-15);
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let rep = check_evolution_axioms(&GeneratorSpec::example_a1(), &grid, &[one()], 1e-12);
        assert!(rep.cocycle_ok);
        let (t, s, v) = rep.sup_witness;
        assert!(v >= 10.0 - 1e-9 && (t - 10.0).abs() < 1e-12 && (s - 9.5).abs() < 1e-12);
    }

    #[test]
    fn ltv_cocycle_converges_at_rk4_order() {
        let g = ltv3();
        let x = DVector::from_vec(vec![1.0, -0.5, 2.0]);
        let res = |h: f64| {
            let p = Propagator::with_step(&g, h);
            let d = p.apply(3.0, 0.0, &x).unwrap();
            let c = p.apply(1.37, 0.0, &x).and_then(|y| p.apply(3.0, 1.37, &y)).unwrap();
            (&d - &c).norm()
        };
        let (r1, r2) = (res(0.2), res(0.1));
        assert!(r1 < 1e-4);
        let ratio = r1 / r2;
        assert!(ratio > 10.0 && ratio < 40.0, "ratio {ratio}");
        let rep = check_evolution_axioms(&g, &[0.0, 0.7, 1.9, 3.0], &[x], 1e-10);
        assert!(rep.passes(), "{}", rep.cocycle_max_residual);
    }

    #[test]
    fn classify_example_a1() {
        let c = classify_stability(&GeneratorSpec::example_a1(), 20.0, &[0.1, 0.01], ClassifyOpts { t0_max: Some(10.0), ..Default::default() }).unwrap();
        let t1 = c.attractivity_table[0].1.unwrap();
        let t2 = c.attractivity_table[1].1.unwrap();
        assert!(t1 <= 5.0 && t2 <= 8.0, "{t1} {t2}");
        assert!(c.uniform_bound_n.is_none());
        assert!(c.exp_fit.is_none());
        assert!(!c.window_uniform);
        assert!(c.growth_witness.2 >= 10.0);
    }

    #[test]
    fn classify_constant_and_algebraic() {
        let c = classify_stability(&GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, -1.0)), 20.0, &[0.1], ClassifyOpts::default()).unwrap();
        let f = c.exp_fit.unwrap();
        assert!((f.k - 1.0).abs() < 1e-9 && (f.w - 1.0).abs() < 1e-9);
        assert_eq!(c.uniform_bound_n, Some(1.0));
        assert!(c.derived_uniform_bound.is_some());
        let c = classify_stability(&GeneratorSpec::inverse_time_decay(), 60.0, &[0.5, 0.1], ClassifyOpts { t0_step: 1.0, lag_step: 0.5, ..Default::default() }).unwrap();
        assert!(c.pointwise_attractive);
        assert!(c.exp_fit.is_none());
        assert!(!c.uniformly_attractive());
    }

    #[test]
    fn window_bounds() {
        assert!((window_bound(&GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, -1.0)), &[0.0, 1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(window_bound(&GeneratorSpec::zero(2), &[0.0, 3.0]).unwrap(), 1.0);
        let grid: Vec<f64> = (0..=19).map(|i| i as f64 * 0.5).collect();
        let k = window_bound(&GeneratorSpec::example_a1(), &grid).unwrap();
        assert!(k >= 10.0 - 1e-9);
    }

    #[test]
    fn csv_blocks_and_periodic_breaks() {
        let g = GeneratorSpec::from_csv_blocks("t,a\n0,-1\n1,-3\n", 1).unwrap();
        let y = propagate(&g, 0.0, 2.0, &one()).unwrap()[0];
        assert!((y - (-4f64).exp()).abs() < 1e-14);
        assert_eq!(Breaks::Periodic { period: 0.5, offset: 0.0 }.inside(0.2, 1.5), vec![0.5, 1.0]);
    }

    fn suite() -> Vec<GeneratorSpec> {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        vec![
            GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, -1.0)),
            GeneratorSpec::constant_matrix(DMatrix::from_element(1, 1, 0.3)),
            GeneratorSpec::zero(1),
            GeneratorSpec::example_a1(),
            GeneratorSpec::inverse_time_decay(),
            GeneratorSpec::sinusoidal_perturbation(DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]), rot.clone(), 0.4, 1.5),
            GeneratorSpec::diagonal_heat(1.0, std::f64::consts::PI, 4),
        ]
    }

    #[test]
    fn classification_consistency_on_suite() {
        for g in suite() {
            let c = classify_stability(&g, 30.0, &[0.5, 0.1, 0.01], ClassifyOpts { t0_step: 0.5, lag_step: 0.25, ..Default::default() }).unwrap();
            let lhs = c.uniformly_attractive() && c.window_uniform;
            let rhs = c.exp_fit.map_or(false, |f| f.w > 0.0);
            assert_eq!(lhs, rhs, "{:?}: {:?}", g, c);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn cocycle_random_triples(s in 0.0f64..3.0, d1 in 0.0f64..2.0, d2 in 0.0f64..2.0, x in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let g = ltv3();
            let p = Propagator::new(&g);
            let x = DVector::from_vec(x);
            let (r, t) = (s + d1, s + d1 + d2);
            let d = p.apply(t, s, &x).unwrap();
            let c = p.apply(t, r, &p.apply(r, s, &x).unwrap()).unwrap();
            // RK4 local tolerance at step 1e-3 is ~1e-13 per unit time
            prop_assert!((&d - &c).norm() < 1e-11);
        }
    }
}

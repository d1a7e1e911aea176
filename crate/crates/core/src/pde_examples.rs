//! Finite-difference versions of the 1D PDE examples, eigenvalue thresholds, grid
//! inequalities and the small-gain composite gain.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::certify::{self, EnsembleSpec, FitOpts, IcSpec, Property};
use crate::compfun::{invert_unbounded, ClassSet, ComparisonFn};
use crate::error::{Error, Result};
use crate::evolution::GeneratorSpec;
use crate::mildsolve::{InputNorm, InputSignal, SemilinearSystem, StateNorm};
use crate::numeric::sym_eigenvalues;
use crate::timefn::TimeFn;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub n: usize,
    pub length: f64,
    pub dz: f64,
}

impl Grid1D {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidArgument(format!("grid needs n >= 4 interior points, got {n}")));
        }
        if !(length > 0.0) {
            return Err(Error::InvalidArgument("grid length must be positive".into()));
        }
        Ok(Grid1D { n, length, dz: length / (n + 1) as f64 })
    }

    /// Interior points z₁..zₙ.
    pub fn points(&self) -> Vec<f64> {
        (1..=self.n).map(|i| i as f64 * self.dz).collect()
    }

    pub fn state_norm(&self) -> StateNorm {
        StateNorm::GridL2 { dz: self.dz }
    }

    /// Samples of f at the interior points.
    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> DVector<f64> {
        DVector::from_iterator(self.n, self.points().into_iter().map(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorKind {
    DirichletLaplacian,
    ClampedBiharmonic,
    /// −∂⁴ − ϱ∂²
    KsComposite { rho: f64 },
}

#[derive(Debug, Clone)]
pub struct DiscretizedOperator {
    pub kind: OperatorKind,
    pub matrix: DMatrix<f64>,
    pub bc_note: String,
}

fn laplacian(g: &Grid1D) -> DMatrix<f64> {
    let n = g.n;
    let c = 1.0 / (g.dz * g.dz);
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -2.0 * c
        } else if i.abs_diff(j) == 1 {
            c
        } else {
            0.0
        }
    })
}

fn biharmonic(g: &Grid1D) -> DMatrix<f64> {
    let n = g.n;
    let c = 1.0 / g.dz.powi(4);
    let mut m = DMatrix::from_fn(n, n, |i, j| {
        c * match i.abs_diff(j) {
            0 => 6.0,
            1 => -4.0,
            2 => 1.0,
            _ => 0.0,
        }
    });
    // x₀ = 0 and ghost x₋₁ = x₁ (zero slope), likewise at the right end
    m[(0, 0)] += c;
    m[(n - 1, n - 1)] += c;
    m
}

pub fn assemble(kind: OperatorKind, grid: &Grid1D) -> Result<DiscretizedOperator> {
    let (matrix, bc_note) = match kind {
        OperatorKind::DirichletLaplacian => (laplacian(grid), "x(0)=x(L)=0, 3-point stencil"),
        OperatorKind::ClampedBiharmonic => (biharmonic(grid), "x=x_z=0 at both ends, 5-point stencil, ghost x_{-1}=x_1"),
        OperatorKind::KsComposite { rho } => (-biharmonic(grid) - laplacian(grid) * rho, "clamped, −∂⁴−ϱ∂²"),
    };
    Ok(DiscretizedOperator { kind, matrix, bc_note: bc_note.into() })
}

/// σ(ϱ): smallest eigenvalue of ∂⁴ + ϱ∂² (clamped) on the grid.
pub fn ks_sigma(grid: &Grid1D, rho: f64) -> f64 {
    let m = biharmonic(grid) + laplacian(grid) * rho;
    sym_eigenvalues(&m)[0]
}

#[derive(Debug, Clone)]
pub struct KsScan {
    /// (ϱ, σ(ϱ))
    pub rows: Vec<(f64, f64)>,
    /// sign change of σ, linearly interpolated then refined by bisection
    pub crossing: Option<f64>,
}

impl KsScan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,min_eigenvalue\n");
        for (r, v) in &self.rows {
            s.push_str(&format!("{r},{v}\n"));
        }
        s
    }
}

pub fn ks_threshold_scan(grid: &Grid1D, rhos: &[f64]) -> KsScan {
    let rows: Vec<(f64, f64)> = rhos.par_iter().map(|&r| (r, ks_sigma(grid, r))).collect();
    let mut crossing = None;
    for w in rows.windows(2) {
        let ((r0, s0), (r1, s1)) = (w[0], w[1]);
        if s0 > 0.0 && s1 <= 0.0 {
            let (mut lo, mut hi) = (r0, r1);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if ks_sigma(grid, mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-9 * hi.abs().max(1.0) {
                    break;
                }
            }
            crossing = Some(0.5 * (lo + hi));
            break;
        }
    }
    KsScan { rows, crossing }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridIneq {
    /// (L²/π²)∫x'² ≥ ∫x² for x(0) = x(L) = 0
    Friedrichs,
    /// (4L²/π²)∫x'² ≥ ∫x² for x(0) = 0 or x(L) = 0
    FriedrichsOneSided,
    /// ‖x‖²_∞ ≤ x(0)² + 2‖x‖‖x'‖
    Agmon,
    /// x(c)² ≤ (2/L)‖x‖² + L‖x'‖²
    EndpointD32 { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridIneqReport {
    /// smaller side
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    /// O(Δz²) discretization allowance
    pub allowance: f64,
    pub holds: bool,
}

/// `values` holds x at the n+2 uniform nodes 0, Δz, ..., L (endpoints included).
pub fn grid_inequality(kind: GridIneq, values: &[f64], length: f64) -> Result<GridIneqReport> {
    let m = values.len();
    if m < 6 {
        return Err(Error::InvalidArgument("need at least 6 grid values".into()));
    }
    let dz = length / (m - 1) as f64;
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let zero = |v: f64| v.abs() <= 1e-12 * scale;
    let l2 = {
        let s: f64 = values.iter().map(|v| v * v).sum::<f64>() - 0.5 * (values[0].powi(2) + values[m - 1].powi(2));
        s * dz
    };
    let d2: f64 = values.windows(2).map(|w| ((w[1] - w[0]) / dz).powi(2)).sum::<f64>() * dz;
    let rel = 2.0 * dz * dz / (length * length);
    let (lhs, rhs) = match kind {
        GridIneq::Friedrichs => {
            if !(zero(values[0]) && zero(values[m - 1])) {
                return Err(Error::InvalidArgument("Friedrichs needs x(0) = x(L) = 0".into()));
            }
            (l2, length * length / (PI * PI) * d2)
        }
        GridIneq::FriedrichsOneSided => {
            if !(zero(values[0]) || zero(values[m - 1])) {
                return Err(Error::InvalidArgument("one-sided Friedrichs needs x(0) = 0 or x(L) = 0".into()));
            }
            (l2, 4.0 * length * length / (PI * PI) * d2)
        }
        GridIneq::Agmon => (values.iter().fold(0.0f64, |a, v| a.max(v * v)), values[0].powi(2) + 2.0 * l2.sqrt() * d2.sqrt()),
        GridIneq::EndpointD32 { c } => {
            if !(0.0..=length).contains(&c) {
                return Err(Error::InvalidArgument(format!("c = {c} outside [0, {length}]")));
            }
            let k = (c / dz).floor().min((m - 2) as f64) as usize;
            let w = c / dz - k as f64;
            let xc = values[k] * (1.0 - w) + values[k + 1] * w;
            (xc * xc, 2.0 / length * l2 + length * d2)
        }
    };
    let allowance = rel * (lhs.abs() + rhs.abs()) + 1e-14 * scale * scale;
    let slack = rhs - lhs;
    Ok(GridIneqReport { lhs, rhs, slack, allowance, holds: slack >= -allowance })
}

/// Subsystem data for V̇ᵢ ≤ −δᵢ(Vᵢ) + σᵢ(V_{n+1−i}) + ℓᵢ(t) + ξᵢ(‖uᵢ‖).
#[derive(Clone)]
pub struct InterconnectionSpec {
    pub deltas: Vec<ComparisonFn>,
    pub sigmas: Vec<Option<ComparisonFn>>,
    pub xis: Vec<Option<ComparisonFn>>,
    pub ells: Vec<TimeFn>,
    pub zeta: f64,
    /// aggregate δ with δ(Σsᵢ) ≤ Σδᵢ(sᵢ); default: pointwise minimum of the δᵢ
    pub delta: Option<ComparisonFn>,
}

impl InterconnectionSpec {
    /// δᵢ(s) = cᵢ(π/L)²s, σᵢ(s) = (1/cᵢ)(L/π)²s, ℓ₁ = L/(1+t²), ℓ₂ = Le^{−2t},
    /// ξ₁(s) = 2Ls², ξ₂(s) = Ls.
    pub fn rd_example(c1: f64, c2: f64, l: f64, zeta: f64) -> Self {
        let k = (PI / l).powi(2);
        InterconnectionSpec {
            deltas: vec![ComparisonFn::linear(c1 * k), ComparisonFn::linear(c2 * k)],
            sigmas: vec![Some(ComparisonFn::linear(1.0 / (c1 * k))), Some(ComparisonFn::linear(1.0 / (c2 * k)))],
            xis: vec![Some(ComparisonFn::power(2.0 * l, 2.0)), Some(ComparisonFn::linear(l))],
            ells: vec![TimeFn::new("L/(1+t^2)", move |t| l / (1.0 + t * t)), TimeFn::new("L e^{-2t}", move |t| l * (-2.0 * t).exp())],
            zeta,
            delta: None,
        }
    }
}

/// max σ-slope / min δ-slope for the reaction-diffusion interconnection.
pub fn rd_slope_ratio(c1: f64, c2: f64, l: f64) -> f64 {
    let s = (1.0 / c1).max(1.0 / c2) * (l / PI).powi(2);
    let d = c1.min(c2) * (PI / l).powi(2);
    s / d
}

#[derive(Debug, Clone)]
pub struct SmallGainReport {
    pub condition_holds: bool,
    /// s at which (1/ζ)σ(δ⁻¹(s)) ≥ s
    pub witness: Option<f64>,
    /// max over the grid of (1/ζ)σ(δ⁻¹(s))/s
    pub max_ratio: f64,
    pub aggregate_ok: bool,
    /// (s, κ(s))
    pub kappa_samples: Vec<(f64, f64)>,
    pub kappa: Option<ComparisonFn>,
    /// max |(I − (1/ζ)σ∘δ⁻¹)(ζδ(κ(s))) − ξ(s)|
    pub relation_residual: f64,
}

/// Solves v − (1/ζ)σ(δ⁻¹(v)) = y for v ≥ y by fixed-point iteration with bisection fallback.
fn invert_contraction(g: &dyn Fn(f64) -> f64, y: f64) -> Result<f64> {
    if y == 0.0 {
        return Ok(0.0);
    }
    let mut v = y;
    for _ in 0..200 {
        let next = y + (v - g(v));
        if (next - v).abs() <= 1e-15 * next.abs().max(1.0) {
            return Ok(next);
        }
        v = next;
    }
    let (mut lo, mut hi) = (y, 2.0 * y);
    while g(hi) < y {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NotInvertible { at: y });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn smallgain_check(spec: &InterconnectionSpec, s_grid: &[f64]) -> Result<SmallGainReport> {
    if !(spec.zeta > 0.0 && spec.zeta < 1.0) {
        return Err(Error::InvalidArgument(format!("ζ = {} must lie in (0,1)", spec.zeta)));
    }
    if spec.deltas.is_empty() {
        return Err(Error::InvalidArgument("no subsystems".into()));
    }
    let deltas = spec.deltas.clone();
    let delta = spec.delta.clone().unwrap_or_else(|| {
        let ds = deltas.clone();
        ComparisonFn::from_fn("min δᵢ", move |s| ds.iter().map(|d| d.eval(s)).fold(f64::INFINITY, f64::min), f64::INFINITY, ClassSet::K_INF)
    });
    let sigma = |s: f64| spec.sigmas.iter().flatten().map(|f| f.eval(s)).fold(0.0, f64::max);
    let xi = |s: f64| spec.xis.iter().flatten().map(|f| f.eval(s)).sum::<f64>();
    let zeta = spec.zeta;

    let sub: Vec<f64> = s_grid.iter().copied().step_by((s_grid.len() / 25).max(1)).collect();
    let mut aggregate_ok = true;
    for &a in &sub {
        for &b in &sub {
            let lhs = delta.eval(a + b);
            let rhs = spec.deltas[0].eval(a) + spec.deltas.get(1).map_or(0.0, |d| d.eval(b));
            if lhs > rhs * (1.0 + 1e-12) + 1e-300 {
                aggregate_ok = false;
            }
        }
    }

    let dinv = |s: f64| invert_unbounded(&delta, s, 1e-13 * (1.0 + s));
    let mut max_ratio = 0.0f64;
    let mut witness = None;
    for &s in s_grid.iter().filter(|s| **s > 0.0) {
        let r = sigma(dinv(s)?) / (zeta * s);
        max_ratio = max_ratio.max(r);
        if r >= 1.0 && witness.is_none() {
            witness = Some(s);
        }
    }
    let condition_holds = witness.is_none();
    let mut rep = SmallGainReport { condition_holds, witness, max_ratio, aggregate_ok, kappa_samples: Vec::new(), kappa: None, relation_residual: 0.0 };
    if !condition_holds {
        return Ok(rep);
    }
    let g = |v: f64| v - sigma(dinv(v).unwrap_or(f64::NAN)) / zeta;
    for &s in s_grid {
        let y = xi(s);
        let w = invert_contraction(&g, y)?;
        let k = dinv(w / zeta)?;
        let back = g(zeta * delta.eval(k));
        rep.relation_residual = rep.relation_residual.max((back - y).abs() / y.abs().max(1.0));
        rep.kappa_samples.push((s, k));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rep.kappa_samples.iter().copied().unzip();
    rep.kappa = ComparisonFn::from_samples(xs, ys).ok().map(|f| f.with_label("kappa"));
    Ok(rep)
}

/// Catalog of discretized examples.
#[derive(Clone)]
pub enum ExampleName {
    ScalarA1,
    /// −∂⁴x − ϱ∂²x − μ(t)x + x|sin t|u/(1+e^{−zt}x²) on (0,1), clamped
    Ks { rho: f64, mu: TimeFn },
    /// ν∂²x + r x + ω sin(tz)x + u on (0,ℓ), Dirichlet
    Heat { nu: f64, ell: f64, r: f64, omega: f64 },
    /// ∂²x + Φ(t)(u + e^{−t})/((1+x²)(1+(π−z)x²)) on (0,π)
    RdForced { phi: TimeFn },
    /// coupled pair with diffusion c₁, c₂ on (0,L) and common decay υ(t)
    InterconnectedRd { c1: f64, c2: f64, l: f64, upsilon: TimeFn },
    /// pointwise ISpS example on ζ ∈ (0, π/2)
    ScalarIsps,
}

impl ExampleName {
    pub fn key(&self) -> &'static str {
        match self {
            ExampleName::ScalarA1 => "scalar_a1",
            ExampleName::Ks { .. } => "ks",
            ExampleName::Heat { .. } => "heat",
            ExampleName::RdForced { .. } => "rd_forced",
            ExampleName::InterconnectedRd { .. } => "interconnected_rd",
            ExampleName::ScalarIsps => "scalar_isps",
        }
    }

    /// Parses a catalog key with positional parameters.
    pub fn from_key(key: &str, p: &[f64]) -> Result<Self> {
        let get = |i: usize, d: f64| p.get(i).copied().unwrap_or(d);
        Ok(match key {
            "scalar_a1" => ExampleName::ScalarA1,
            "ks" => ExampleName::Ks { rho: get(0, PI * PI), mu: TimeFn::constant(get(1, 0.0)) },
            "heat" => ExampleName::Heat { nu: get(0, 1.0), ell: get(1, PI), r: get(2, 0.3), omega: get(3, 0.1) },
            "rd_forced" => {
                let a = get(0, 1.0);
                ExampleName::RdForced { phi: TimeFn::new("a/(1+t^2)", move |t| a / (1.0 + t * t)) }
            }
            "interconnected_rd" => ExampleName::InterconnectedRd { c1: get(0, 2.0), c2: get(1, 2.0), l: get(2, PI), upsilon: TimeFn::constant(get(3, 0.0)) },
            "scalar_isps" => ExampleName::ScalarIsps,
            other => return Err(Error::InvalidArgument(format!("unknown example '{other}'"))),
        })
    }
}

pub fn build_example(name: &ExampleName, n: usize) -> Result<SemilinearSystem> {
    match name {
        ExampleName::ScalarA1 => Ok(SemilinearSystem::linear(GeneratorSpec::example_a1()).with_constant_b(DMatrix::from_element(1, 1, 1.0)).with_name("scalar_a1")),
        ExampleName::Ks { rho, mu } => {
            let g = Grid1D::new(n, 1.0)?;
            let op = assemble(OperatorKind::KsComposite { rho: *rho }, &g)?;
            let mu = mu.clone();
            let gen = GeneratorSpec::shifted(&format!("ks({rho})"), op.matrix, move |t| -mu.eval(t));
            let z = g.points();
            Ok(SemilinearSystem::linear(gen)
                .with_nonlinearity(
                    n,
                    move |t, x, u| DVector::from_fn(x.len(), |i, _| x[i] * t.sin().abs() / (1.0 + (-z[i] * t).exp() * x[i] * x[i]) * u[i]),
                    Some(2.0),
                )
                .with_state_norm(g.state_norm())
                .with_input_norm(InputNorm::Sup)
                .with_name("ks"))
        }
        ExampleName::Heat { nu, ell, r, omega } => {
            let g = Grid1D::new(n, *ell)?;
            let r = *r;
            let omega = *omega;
            let gen = GeneratorSpec::shifted(&format!("heat({nu},{ell},{r})"), laplacian(&g) * *nu, move |_| r);
            let z = g.points();
            Ok(SemilinearSystem::linear(gen)
                .with_nonlinearity(n, move |t, x, u| DVector::from_fn(x.len(), |i, _| omega * (t * z[i]).sin() * x[i] + u[i]), Some(omega.abs()))
                .with_state_norm(g.state_norm())
                .with_input_norm(InputNorm::Sup)
                .with_name("heat"))
        }
        ExampleName::RdForced { phi } => {
            let g = Grid1D::new(n, PI)?;
            let gen = GeneratorSpec::shifted("rd_forced", laplacian(&g), |_| 0.0);
            let z = g.points();
            let phi = phi.clone();
            Ok(SemilinearSystem::linear(gen)
                .with_nonlinearity(
                    n,
                    move |t, x, u| {
                        let p = phi.eval(t);
                        DVector::from_fn(x.len(), |i, _| {
                            let x2 = x[i] * x[i];
                            p * (u[i] + (-t).exp()) / ((1.0 + x2) * (1.0 + (PI - z[i]) * x2))
                        })
                    },
                    Some(3.0),
                )
                .with_state_norm(g.state_norm())
                .with_input_norm(InputNorm::Sup)
                .with_name("rd_forced"))
        }
        ExampleName::InterconnectedRd { c1, c2, l, upsilon } => {
            let g = Grid1D::new(n, *l)?;
            let lap = laplacian(&g);
            let mut m = DMatrix::zeros(2 * n, 2 * n);
            m.view_mut((0, 0), (n, n)).copy_from(&(&lap * *c1));
            m.view_mut((n, n), (n, n)).copy_from(&(&lap * *c2));
            let up = upsilon.clone();
            let gen = GeneratorSpec::shifted("interconnected_rd", m, move |t| -up.eval(t));
            Ok(SemilinearSystem::linear(gen)
                .with_nonlinearity(
                    2 * n,
                    move |t, x, u| {
                        let a = 1.0 + t * t;
                        let mut out = DVector::zeros(2 * n);
                        for i in 0..n {
                            let (x1, x2) = (x[i], x[n + i]);
                            let (u1, u2) = (u[i], u[n + i]);
                            out[i] = (-t).exp() * x2 + a / (1.0 + a * a * x1 * x1) + u1 * u1 * (-x1 * x1).exp();
                            out[n + i] = u2.sin() * x1 + ((-2.0 * t).exp() + u2) / (1.0 + x2 * x2);
                        }
                        out
                    },
                    Some(4.0),
                )
                .with_state_norm(StateNorm::BlockSumGridL2 { dz: g.dz, blocks: 2 })
                .with_input_norm(InputNorm::Sup)
                .with_name("interconnected_rd"))
        }
        ExampleName::ScalarIsps => {
            if n < 1 {
                return Err(Error::InvalidArgument("n must be positive".into()));
            }
            let dzeta = 0.5 * PI / n as f64;
            let root_tan: Vec<f64> = (0..n).map(|i| ((i as f64 + 0.5) * dzeta).tan().sqrt()).collect();
            let gen = GeneratorSpec::shifted("scalar_isps", DMatrix::zeros(n, n), |t| -t * t.cos().abs());
            Ok(SemilinearSystem::linear(gen)
                .with_nonlinearity(
                    n,
                    move |t, x, u| {
                        let c = t.cos().abs();
                        DVector::from_fn(x.len(), |i, _| {
                            let x2 = x[i] * x[i];
                            x[i] / (1.0 + t + x2) + 2.0 * t * c * u[i] / (PI * (1.0 + x2)) + c * root_tan[i] / (1.0 + x2)
                        })
                    },
                    Some(5.0),
                )
                .with_state_norm(StateNorm::GridL2 { dz: dzeta })
                .with_input_norm(InputNorm::Sup)
                .with_name("scalar_isps"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeatRow {
    pub param: f64,
    pub certified: bool,
    /// witness found by the falsifier, if searched
    pub falsified: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct HeatScan {
    pub rows: Vec<HeatRow>,
    /// last certified / first uncertified parameter, refined by bisection
    pub boundary: Option<f64>,
    /// νπ²/ℓ²
    pub analytic: f64,
}

impl HeatScan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,verdict,falsified\n");
        for r in &self.rows {
            let f = r.falsified.map_or("na".to_string(), |b| b.to_string());
            s.push_str(&format!("{},{},{}\n", r.param, if r.certified { "certified" } else { "not_certified" }, f));
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeatScanOpts {
    pub n: usize,
    pub horizon: f64,
    /// ω = omega_fraction·(r+ω)
    pub omega_fraction: f64,
    pub bisection_steps: usize,
    pub falsify: bool,
    pub seed: u64,
}

impl Default for HeatScanOpts {
    fn default() -> Self {
        HeatScanOpts { n: 64, horizon: 50.0, omega_fraction: 0.0, bisection_steps: 10, falsify: false, seed: 7 }
    }
}

fn heat_verdict(nu: f64, ell: f64, p: f64, o: &HeatScanOpts) -> Result<(bool, Option<bool>)> {
    let omega = o.omega_fraction * p;
    let sys = build_example(&ExampleName::Heat { nu, ell, r: p - omega, omega }, o.n)?;
    let g = Grid1D::new(o.n, ell)?;
    let x0 = g.sample(|z| (PI * z / ell).sin() + 0.3 * (2.0 * PI * z / ell).sin());
    let spec = EnsembleSpec {
        ics: IcSpec::Directions { directions: vec![x0], norms: vec![0.1, 1.0, 10.0] },
        inputs: vec![InputSignal::constant(DVector::from_element(o.n, 0.5)).with_norm(InputNorm::Sup)],
        t0_list: vec![0.0, 1.0],
        horizon: o.horizon,
        seed: o.seed,
    };
    let cert = certify::certify(&sys, &spec, Property::Iss, &FitOpts::default())?;
    let fals = if o.falsify {
        Some(certify::falsify(&sys, &certify::FalsifySpec { horizon: o.horizon, seed: o.seed, ..Default::default() })?.is_some())
    } else {
        None
    };
    Ok((cert.is_certified(), fals))
}

/// Certify verdicts over r+ω, with the flip located by bisection.
pub fn heat_threshold_scan(nu: f64, ell: f64, params: &[f64], opts: HeatScanOpts) -> Result<HeatScan> {
    let verdicts: Vec<Result<(bool, Option<bool>)>> = params.par_iter().map(|&p| heat_verdict(nu, ell, p, &opts)).collect();
    let mut rows = Vec::new();
    for (p, v) in params.iter().zip(verdicts) {
        let (certified, falsified) = v?;
        rows.push(HeatRow { param: *p, certified, falsified });
    }
    let mut boundary = None;
    if let Some(w) = rows.windows(2).find(|w| w[0].certified && !w[1].certified) {
        let (mut lo, mut hi) = (w[0].param, w[1].param);
        let bis = HeatScanOpts { falsify: false, ..opts };
        for _ in 0..opts.bisection_steps {
            let mid = 0.5 * (lo + hi);
            if heat_verdict(nu, ell, mid, &bis)?.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        boundary = Some(0.5 * (lo + hi));
    }
    Ok(HeatScan { rows, boundary, analytic: nu * PI * PI / (ell * ell) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mildsolve::{solve_mild, SolveOpts};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    #[test]
    fn grid_basics() {
        let g = Grid1D::new(10, 2.0).unwrap();
        assert!((g.dz * 11.0 - 2.0).abs() < 1e-12);
        assert!(matches!(Grid1D::new(3, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn laplacian_spectrum() {
        let g = Grid1D::new(200, PI).unwrap();
        let ev = sym_eigenvalues(&(-assemble(OperatorKind::DirichletLaplacian, &g).unwrap().matrix));
        assert!((ev[0] - 1.0).abs() < 1e-3);
        for k in 1..=20 {
            let exact = (k as f64).powi(2);
            assert!((ev[k - 1] - exact).abs() / exact < 0.01, "k={k}");
        }
        let g = Grid1D::new(200, 1.0).unwrap();
        let ev = sym_eigenvalues(&(-laplacian(&g)));
        assert!((ev[0] - PI * PI).abs() < 1e-3);
        let m = laplacian(&g);
        assert_eq!(m, m.transpose());
        assert!(sym_eigenvalues(&m).iter().all(|v| *v < 0.0));
    }

    #[test]
    fn biharmonic_clamped_beam() {
        let g = Grid1D::new(200, 1.0).unwrap();
        let ev = sym_eigenvalues(&biharmonic(&g));
        // clamped beam: (4.730040744862704)⁴
        let exact = 4.730040744862704f64.powi(4);
        assert!((ev[0] - exact).abs() / exact < 2e-3, "{}", ev[0]);
    }

    #[test]
    fn eigenvalue_convergence_second_order() {
        let err = |n: usize, bih: bool| {
            let g = Grid1D::new(n, 1.0).unwrap();
            if bih {
                (sym_eigenvalues(&biharmonic(&g))[0] - 4.730040744862704f64.powi(4)).abs()
            } else {
                (sym_eigenvalues(&(-laplacian(&g)))[0] - PI * PI).abs()
            }
        };
        for bih in [false, true] {
            // n+1 doubles so that Δz halves
            let r = err(31, bih) / err(63, bih);
            assert!((3.5..=4.5).contains(&r), "bih={bih} ratio {r}");
        }
    }

    #[test]
    fn ks_composite_is_assembled_difference() {
        let g = Grid1D::new(12, 1.0).unwrap();
        let ks = assemble(OperatorKind::KsComposite { rho: 3.0 }, &g).unwrap().matrix;
        assert_eq!(ks, -biharmonic(&g) - laplacian(&g) * 3.0);
    }

    #[test]
    fn ks_scan_signs_and_crossing() {
        let g = Grid1D::new(256, 1.0).unwrap();
        let scan = ks_threshold_scan(&g, &[0.0, 20.0, 35.0, 45.0, 60.0]);
        assert!(scan.rows[0].1 > 0.0);
        assert!(scan.rows[4].1 < 0.0);
        let c = scan.crossing.unwrap();
        assert!((c - 4.0 * PI * PI).abs() / (4.0 * PI * PI) < 0.01, "{c}");
    }

    fn nodes(n: usize, l: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n + 2).map(|i| f(l * i as f64 / (n + 1) as f64)).collect()
    }

    #[test]
    fn grid_inequalities_examples() {
        let l = 2.0;
        let rep = grid_inequality(GridIneq::Friedrichs, &nodes(400, l, |z| (PI * z / l).sin()), l).unwrap();
        assert!(rep.holds);
        assert!(rep.slack.abs() <= rep.allowance, "{rep:?}");
        let rep = grid_inequality(GridIneq::Agmon, &nodes(2000, 1.0, |z| z * (1.0 - z)), 1.0).unwrap();
        assert!((rep.lhs - 1.0 / 16.0).abs() < 1e-6);
        assert!((rep.rhs - 2.0 * (1.0f64 / 30.0).sqrt() * (1.0f64 / 3.0).sqrt()).abs() < 1e-5);
        assert!((rep.rhs - 0.2108).abs() < 1e-3 && rep.holds);
        let rep = grid_inequality(GridIneq::FriedrichsOneSided, &nodes(400, l, |z| (PI * z / (2.0 * l)).sin()), l).unwrap();
        assert!(rep.holds && rep.slack.abs() <= rep.allowance);
        let rep = grid_inequality(GridIneq::EndpointD32 { c: 0.3 }, &nodes(400, 1.0, |z| (3.0 * z).cos()), 1.0).unwrap();
        assert!(rep.holds);
        assert!(matches!(grid_inequality(GridIneq::Friedrichs, &nodes(50, 1.0, |z| z + 1.0), 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn friedrichs_random_trials() {
        let mut r = rng::stream(11, 0);
        for _ in 0..200 {
            let n = r.gen_range(8..120);
            let mut v: Vec<f64> = (0..n + 2).map(|_| r.gen_range(-1.0..1.0)).collect();
            v[0] = 0.0;
            v[n + 1] = 0.0;
            let rep = grid_inequality(GridIneq::Friedrichs, &v, 1.5).unwrap();
            assert!(rep.holds, "{rep:?}");
        }
    }

    #[test]
    fn smallgain_linear_and_decoupled() {
        let grid: Vec<f64> = (1..=100).map(|i| i as f64 * 0.1).collect();
        let spec = InterconnectionSpec {
            deltas: vec![ComparisonFn::linear(2.0), ComparisonFn::linear(2.0)],
            sigmas: vec![Some(ComparisonFn::linear(0.5)), Some(ComparisonFn::linear(0.5))],
            xis: vec![Some(ComparisonFn::identity()), None],
            ells: vec![TimeFn::constant(0.0), TimeFn::constant(0.0)],
            zeta: 0.5,
            delta: None,
        };
        let rep = smallgain_check(&spec, &grid).unwrap();
        assert!(rep.condition_holds && rep.aggregate_ok);
        assert!((rep.max_ratio - 0.5).abs() < 1e-12);
        for (s, k) in &rep.kappa_samples {
            assert!((k - 2.0 * s).abs() < 1e-9);
        }
        let dec = InterconnectionSpec { sigmas: vec![None, None], ..spec.clone() };
        let rep = smallgain_check(&dec, &grid).unwrap();
        for (s, k) in &rep.kappa_samples {
            // (ζδ)⁻¹(s) = s
            assert!((k - s).abs() < 1e-9);
        }
        let bad = InterconnectionSpec { sigmas: vec![Some(ComparisonFn::linear(1.5)), None], ..spec };
        let rep = smallgain_check(&bad, &grid).unwrap();
        assert!(!rep.condition_holds && rep.witness.is_some());
    }

    #[test]
    fn smallgain_rd_example() {
        assert!((rd_slope_ratio(2.0, 2.0, PI) - 0.25).abs() < 1e-15);
        let grid: Vec<f64> = (1..=100).map(|i| i as f64 * 0.05).collect();
        let rep = smallgain_check(&InterconnectionSpec::rd_example(2.0, 2.0, PI, 0.5), &grid).unwrap();
        assert!(rep.condition_holds);
        for (s, k) in &rep.kappa_samples {
            let symbolic = 4.0 * PI * s * s + 2.0 * PI * s;
            assert!((k - symbolic).abs() < 1e-6 * symbolic.max(1.0));
        }
        assert!(rep.relation_residual < 1e-6);
    }

    #[test]
    fn example_catalog() {
        assert!(matches!(ExampleName::from_key("nope", &[]), Err(Error::InvalidArgument(_))));
        for key in ["scalar_a1", "ks", "heat", "rd_forced", "interconnected_rd", "scalar_isps"] {
            let e = ExampleName::from_key(key, &[]).unwrap();
            assert_eq!(e.key(), key);
            assert!(build_example(&e, 8).is_ok());
        }
        let a1 = build_example(&ExampleName::ScalarA1, 1).unwrap();
        let tr = solve_mild(&a1, 0.0, &DVector::from_element(1, 1.0), &InputSignal::zero(1), 1.0, SolveOpts::default()).unwrap();
        assert!((tr.final_state()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn heat_zero_input_decay_envelope() {
        let (r, n) = (0.3, 32);
        let sys = build_example(&ExampleName::Heat { nu: 1.0, ell: PI, r, omega: 0.1 }, n).unwrap();
        let g = Grid1D::new(n, PI).unwrap();
        let x0 = g.sample(f64::sin);
        let tr = solve_mild(&sys, 0.0, &x0, &InputSignal::zero(n), 5.0, SolveOpts::default()).unwrap();
        let n0 = g.state_norm().norm(&x0);
        for (t, x) in tr.times.iter().zip(&tr.states) {
            let bound = n0 * ((r + 0.1 - 1.0 + 1e-3) * t).exp();
            assert!(g.state_norm().norm(x) <= bound * (1.0 + 1e-9));
        }
    }

    #[test]
    fn heat_energy_identity_on_grid() {
        let (nu, ell, r, n) = (1.0, PI, 0.4, 48);
        let g = Grid1D::new(n, ell).unwrap();
        let a = laplacian(&g) * nu + DMatrix::identity(n, n) * r;
        let lam = nu * PI * PI / (ell * ell);
        let mut rr = rng::stream(5, 0);
        for k in 0..50 {
            let x = if k == 0 { g.sample(|z| (PI * z / ell).sin()) } else { DVector::from_fn(n, |_, _| rr.gen_range(-1.0..1.0)) };
            let lhs = 2.0 * x.dot(&(&a * &x));
            let rhs = 2.0 * (r - lam) * x.norm_squared();
            let allowance = 2.0 * lam * g.dz * g.dz / (ell * ell) * x.norm_squared();
            assert!(lhs <= rhs + allowance, "{lhs} {rhs}");
        }
    }

    #[test]
    fn ks_decays_below_threshold() {
        let sys = build_example(&ExampleName::Ks { rho: PI * PI, mu: TimeFn::constant(0.0) }, 32).unwrap();
        let g = Grid1D::new(32, 1.0).unwrap();
        let x0 = g.sample(|z| 0.1 * (z * (1.0 - z)).powi(2) * 16.0);
        let u = InputSignal::zero(32).with_norm(InputNorm::Sup);
        let tr = solve_mild(&sys, 0.5, &x0, &u, 1.5, SolveOpts::with_step(1e-3)).unwrap();
        let nn = tr.norms();
        assert!(nn.last().unwrap() < &(1e-3 * nn[0]));
    }

    #[test]
    fn ks_iiss_dissipation_along_trajectories() {
        use crate::lyapunov::{check_dissipation, DissipationForm, DissipationParams, LyapunovFn};
        let n = 24;
        let rho = 20.0;
        let sys = build_example(&ExampleName::Ks { rho, mu: TimeFn::constant(0.2) }, n).unwrap();
        let g = Grid1D::new(n, 1.0).unwrap();
        let sigma = ks_sigma(&g, rho);
        assert!(sigma > 0.0);
        let dz = g.dz;
        // V = ln(1+Z), Z = (1+e^{−t})‖x‖²
        let v = LyapunovFn::closed_form("ln(1+Z)", move |t, x: &DVector<f64>| ((1.0 + (-t).exp()) * dz * x.norm_squared()).ln_1p());
        let x0 = g.sample(|z| (z * (1.0 - z)).powi(2) * 16.0);
        let ens: Vec<_> = [0.3, 1.0]
            .iter()
            .map(|&a| (0.5, &x0 * a, InputSignal::sine(DVector::from_element(n, 1.0), 0.3, 0.0).with_norm(InputNorm::Sup)))
            .collect();
        let form = DissipationForm::Dissipative { eta: Arc::new(move |s| 2.0 * sigma * s * s / (1.0 + 2.0 * s * s)), chi: Arc::new(|s| 2.0 * s) };
        let params = DissipationParams { horizon: 1.0, points_per_trajectory: 5, tol: 1e-3, ..Default::default() };
        let rep = check_dissipation(&v, &sys, &ens, &form, params).unwrap();
        assert_eq!(rep.violations, 0, "{:?}", rep.worst);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn kappa_defining_relation(c1 in 0.5f64..4.0, c2 in 0.5f64..4.0) {
            let spec = InterconnectionSpec::rd_example(c1, c2, PI, 0.9);
            let grid: Vec<f64> = (1..=40).map(|i| i as f64 * 0.1).collect();
            let rep = smallgain_check(&spec, &grid).unwrap();
            let ratio = rd_slope_ratio(c1, c2, PI);
            prop_assert_eq!(rep.condition_holds, ratio < 0.9);
            if rep.condition_holds {
                prop_assert!(rep.relation_residual < 1e-6);
            }
        }
    }
}

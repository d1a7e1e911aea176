//! Small numerical kernels shared across modules: Gauss–Legendre quadrature,
//! matrix exponential, operator 2-norm by power iteration, symmetric eigenvalues.

use nalgebra::{DMatrix, DVector};

const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Five-point Gauss–Legendre rule on [a, b].
pub fn gl5<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for i in 0..5 {
        s += GL5_W[i] * f(c + h * GL5_X[i]);
    }
    s * h
}

/// Nodes and weights of the five-point rule mapped to [a, b].
pub fn gl5_nodes(a: f64, b: f64) -> [(f64, f64); 5] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 5];
    for i in 0..5 {
        out[i] = (c + h * GL5_X[i], GL5_W[i] * h);
    }
    out
}

/// Composite Gauss–Legendre with `panels` equal panels.
pub fn gl5_composite<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    if b == a {
        return 0.0;
    }
    let n = panels.max(1);
    let h = (b - a) / n as f64;
    (0..n).map(|i| gl5(&f, a + i as f64 * h, a + (i + 1) as f64 * h)).sum()
}

/// Adaptive Gauss–Legendre: bisect until two-level estimates agree to `tol`.
pub fn adaptive_gl<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let l = gl5(f, a, m);
        let r = gl5(f, m, b);
        if depth == 0 || (l + r - whole).abs() <= tol {
            return l + r;
        }
        rec(f, a, m, l, 0.5 * tol, depth - 1) + rec(f, m, b, r, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let whole = gl5(f, a, b);
    rec(f, a, b, whole, tol, 40)
}

/// Composite trapezoid on a non-uniform grid.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Matrix exponential by scaling and squaring with a diagonal [6/6] Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, a[(0, 0)].exp());
    }
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut s = 0u32;
    if norm1 > 0.5 {
        s = (norm1 / 0.5).log2().ceil() as u32;
    }
    let x = a / 2f64.powi(s as i32);
    // c_k = (2m-k)! m! / ((2m)! k! (m-k)!) for m = 6
    const C: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let id = DMatrix::<f64>::identity(n, n);
    let x2 = &x * &x;
    let x4 = &x2 * &x2;
    let x6 = &x4 * &x2;
    let even = &id * C[0] + &x2 * C[2] + &x4 * C[4] + &x6 * C[6];
    let odd = &x * (&id * C[1] + &x2 * C[3] + &x4 * C[5]);
    let p = &even + &odd;
    let q = &even - &odd;
    let mut r = q.lu().solve(&p).unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Options for the power-iteration 2-norm.
#[derive(Debug, Clone, Copy)]
pub struct NormOpts {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NormOpts {
    fn default() -> Self {
        NormOpts { max_iter: 30, tol: 1e-10 }
    }
}

/// Operator 2-norm via power iteration on WᵀW; exact for 1×1 and diagonal inputs.
pub fn op_norm(w: &DMatrix<f64>, opts: NormOpts) -> f64 {
    let (r, c) = w.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    if r == 1 && c == 1 {
        return w[(0, 0)].abs();
    }
    if r == c && is_diagonal(w) {
        return (0..r).map(|i| w[(i, i)].abs()).fold(0.0, f64::max);
    }
    let wtw = w.transpose() * w;
    let mut v = DVector::from_fn(c, |i, _| 1.0 / (1.0 + i as f64));
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..opts.max_iter {
        let y = &wtw * &v;
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        let next = v.dot(&y);
        v = y / ny;
        if (next - lambda).abs() <= opts.tol * next.abs().max(1e-300) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    let refined = v.dot(&(&wtw * &v));
    refined.max(lambda).max(0.0).sqrt()
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j && m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues of a symmetric matrix in ascending order (implicit symmetric QR).
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = 0.5 * (m + m.transpose());
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Smallest singular value, from the eigenvalues of MᵀM.
pub fn min_singular(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    let ev = sym_eigenvalues(&(m.transpose() * m));
    ev.first().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Linearly spaced points, inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Logarithmically spaced points, inclusive; requires 0 < a, b.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

/// Nearest-rank percentile, q in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

/// Least-squares line through (x, y): returns (intercept, slope).
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let s = 12;
        let x = a / 2f64.powi(s);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &x / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn expm_matches_taylor_scaling() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.3, -0.5, -2.0, 1.0, 0.1, 0.0, -3.0]);
        let e = expm(&(&a * 2.5));
        let t = expm_taylor(&(&a * 2.5));
        assert!((&e - &t).norm() / t.norm() < 1e-12);
    }

    #[test]
    fn expm_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let e = expm(&a);
        assert!((e[(0, 0)] - 1f64.cos()).abs() < 1e-14);
        assert!((e[(0, 1)] - 1f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn power_iteration_norm() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 0.0, 2.0]);
        // largest singular value of [[3,1],[0,2]]: sqrt of larger eigenvalue of MᵀM
        let ev = sym_eigenvalues(&(m.transpose() * &m));
        assert!((op_norm(&m, NormOpts::default()) - ev[1].sqrt()).abs() < 1e-8);
    }

    #[test]
    fn quadrature_rules() {
        assert!((gl5_composite(|x| x.sin(), 0.0, std::f64::consts::PI, 8) - 2.0).abs() < 1e-12);
        assert!((adaptive_gl(&|x: f64| x.sqrt(), 0.0, 1.0, 1e-12) - 2.0 / 3.0).abs() < 1e-10);
        assert!((trapezoid(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 98.0), Some(98.0));
        assert_eq!(percentile(&[5.0], 98.0), Some(5.0));
    }
}

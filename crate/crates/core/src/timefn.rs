//! Scalar functions of time with an explicit discontinuity set.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type Eval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A piecewise right-continuous scalar function of time.
#[derive(Clone)]
pub struct TimeFn {
    name: String,
    eval: Eval,
    breaks: Vec<f64>,
}

impl fmt::Debug for TimeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeFn").field("name", &self.name).field("breaks", &self.breaks.len()).finish()
    }
}

impl TimeFn {
    pub fn new<F>(name: &str, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        TimeFn { name: name.to_string(), eval: Arc::new(f), breaks: Vec::new() }
    }

    pub fn with_breaks(mut self, mut breaks: Vec<f64>) -> Self {
        breaks.sort_by(|a, b| a.total_cmp(b));
        breaks.dedup();
        self.breaks = breaks;
        self
    }

    pub fn constant(c: f64) -> Self {
        TimeFn::new(&format!("constant({c})"), move |_| c)
    }

    /// a·e^{-λt}
    pub fn exp_decay(a: f64, rate: f64) -> Self {
        TimeFn::new(&format!("exp_decay({a},{rate})"), move |t| a * (-rate * t).exp())
    }

    /// a·sin(ωt + φ)
    pub fn sine(a: f64, omega: f64, phase: f64) -> Self {
        TimeFn::new(&format!("sine({a},{omega},{phase})"), move |t| a * (omega * t + phase).sin())
    }

    /// Right-continuous step function: `values[i]` on [breaks[i-1], breaks[i]).
    pub fn piecewise_constant(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(Error::InvalidArgument("piecewise_constant needs len(values) = len(breaks)+1".into()));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("breaks must be strictly increasing".into()));
        }
        let b = breaks.clone();
        let f = move |t: f64| {
            let k = b.partition_point(|&x| x <= t);
            values[k]
        };
        Ok(TimeFn::new("piecewise_constant", f).with_breaks(breaks))
    }

    /// Linear interpolation through samples, constant extension outside.
    pub fn sampled(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidArgument("sampled time function needs matching non-empty columns".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("sample times must be strictly increasing".into()));
        }
        let f = move |t: f64| interp_linear(&times, &values, t);
        Ok(TimeFn::new("sampled", f))
    }

    /// Parse a two-column CSV (time, value); a non-numeric first line is treated as a header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let (t, v) = parse_two_columns(text)?;
        Self::sampled(t, v)
    }

    /// Catalog lookup by name with positional parameters.
    pub fn from_catalog(name: &str, p: &[f64]) -> Result<Self> {
        let need = |k: usize| -> Result<()> {
            if p.len() < k {
                Err(Error::InvalidArgument(format!("time function {name} needs {k} parameters")))
            } else {
                Ok(())
            }
        };
        match name {
            "constant" => {
                need(1)?;
                Ok(Self::constant(p[0]))
            }
            "exp_decay" => {
                need(2)?;
                Ok(Self::exp_decay(p[0], p[1]))
            }
            "sine" => {
                need(2)?;
                Ok(Self::sine(p[0], p[1], p.get(2).copied().unwrap_or(0.0)))
            }
            "inverse_square" => {
                need(1)?;
                let a = p[0];
                Ok(TimeFn::new("inverse_square", move |t| a / (1.0 + t * t)))
            }
            _ => Err(Error::InvalidArgument(format!("unknown time function {name}"))),
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        (self.eval)(t)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    /// Discontinuities strictly inside (a, b).
    pub fn breaks_in(&self, a: f64, b: f64) -> Vec<f64> {
        self.breaks.iter().copied().filter(|&x| x > a && x < b).collect()
    }
}

pub(crate) fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let w = (x - x0) / (x1 - x0);
    ys[k - 1] * (1.0 - w) + ys[k] * w
}

pub(crate) fn parse_two_columns(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 2 {
            return Err(Error::Parse(format!("line {}: expected two columns", i + 1)));
        }
        match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
            (Ok(x), Ok(y)) => {
                a.push(x);
                b.push(y);
            }
            _ if a.is_empty() && i == 0 => continue,
            _ => return Err(Error::Parse(format!("line {}: non-numeric value", i + 1))),
        }
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_is_right_continuous() {
        let f = TimeFn::piecewise_constant(vec![1.0, 2.0], vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(f.eval(0.999), 0.0);
        assert_eq!(f.eval(1.0), 1.0);
        assert_eq!(f.eval(2.5), 2.0);
        assert_eq!(f.breaks_in(0.0, 1.5), vec![1.0]);
    }

    #[test]
    fn csv_with_header() {
        let f = TimeFn::from_csv("t,v\n0,0\n1,2\n").unwrap();
        assert!((f.eval(0.25) - 0.5).abs() < 1e-15);
        assert!(TimeFn::from_csv("0,0\n1,x\n").is_err());
    }
}

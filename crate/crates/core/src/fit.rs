//! Shared fitting engine: bounded Nelder–Mead with multistart, plus
//! finite-difference covariance estimates for least-squares objectives.

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Bounds { lower, upper }
    }

    pub fn unbounded(dim: usize) -> Self {
        Bounds { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (d, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[d], self.upper[d]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Iteration cap per start.
    pub max_iter: usize,
    /// Relative simplex-size tolerance per parameter.
    pub xtol_rel: f64,
    /// Relative spread tolerance on objective values.
    pub ftol_rel: f64,
    /// Number of starting points.
    pub starts: usize,
    /// Initial simplex step relative to |x0| (absolute when x0 is zero).
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iter: 500,
            xtol_rel: 1e-4,
            ftol_rel: 1e-10,
            starts: 5,
            initial_step: 0.1,
        }
    }
}

impl NelderMeadOptions {
    /// Tight tolerances for fits whose optimum must match the generating
    /// parameters on noiseless data.
    pub fn precise() -> Self {
        NelderMeadOptions { max_iter: 5000, xtol_rel: 1e-10, ftol_rel: 1e-15, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn eval(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Single Nelder–Mead run from `x0`, with every trial point clamped into bounds.
pub fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    bounds: &Bounds,
    opts: &NelderMeadOptions,
) -> Minimum {
    let n = x0.len();
    let mut start = x0.to_vec();
    bounds.clamp(&mut start);

    let scales: Vec<f64> = start
        .iter()
        .map(|&v| if v != 0.0 { opts.initial_step * v.abs() } else { opts.initial_step.min(2.5e-4) })
        .collect();

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.clone());
    for d in 0..n {
        let mut p = start.clone();
        let step = scales[d];
        p[d] += step;
        if p[d] > bounds.upper[d] {
            p[d] = start[d] - step;
        }
        bounds.clamp(&mut p);
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(f, p)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = &simplex[0];
        let size_ok = (1..=n).all(|i| {
            (0..n).all(|d| {
                (simplex[i][d] - best[d]).abs() <= opts.xtol_rel * best[d].abs().max(scales[d])
            })
        });
        let spread = values[n] - values[0];
        let f_ok = spread <= opts.ftol_rel * values[0].abs().max(1e-300);
        if spread.is_finite() && (size_ok || (f_ok && spread == 0.0)) {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for p in &simplex[..n] {
            for d in 0..n {
                centroid[d] += p[d] / n as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> =
                (0..n).map(|d| centroid[d] + coef * (simplex[n][d] - centroid[d])).collect();
            bounds.clamp(&mut p);
            p
        };

        let reflected = along(-1.0);
        let fr = eval(f, &reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(f, &expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(-0.5);
            let fc = eval(f, &c);
            (c, fc)
        } else {
            let c = along(0.5);
            let fc = eval(f, &c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            let mut p: Vec<f64> =
                (0..n).map(|d| simplex[0][d] + 0.5 * (simplex[i][d] - simplex[0][d])).collect();
            bounds.clamp(&mut p);
            values[i] = eval(f, &p);
            simplex[i] = p;
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Minimum { x: simplex[best].clone(), fx: values[best], iterations, converged }
}

/// Deterministic spread of starting points around `x0`, kept inside bounds.
pub fn default_starts(x0: &[f64], bounds: &Bounds, count: usize) -> Vec<Vec<f64>> {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    let mut starts = vec![x0.to_vec()];
    for k in 1..count {
        let p: Vec<f64> = x0
            .iter()
            .enumerate()
            .map(|(d, &v)| {
                let u = ((k as f64) * GOLDEN + (d as f64) * 0.414_213_562_373_095).fract();
                let (lo, hi) = (bounds.lower[d], bounds.upper[d]);
                let half = if v != 0.0 { 0.5 * v.abs() } else { 1.0 };
                let half = if hi.is_finite() && lo.is_finite() { half.min(0.5 * (hi - lo)) } else { half };
                (v + (2.0 * u - 1.0) * half).clamp(lo, hi)
            })
            .collect();
        starts.push(p);
    }
    starts.truncate(count.max(1));
    starts
}

/// Multistart minimization followed by one polishing restart from the best point.
pub fn minimize(
    f: &dyn Fn(&[f64]) -> f64,
    starts: &[Vec<f64>],
    bounds: &Bounds,
    opts: &NelderMeadOptions,
) -> Result<Minimum> {
    let mut best: Option<Minimum> = None;
    let mut total_iter = 0;
    for s in starts {
        let m = nelder_mead(f, s, bounds, opts);
        total_iter += m.iterations;
        if best.as_ref().is_none_or(|b| m.fx < b.fx) {
            best = Some(m);
        }
    }
    let best = best.ok_or_else(|| Error::InvalidParams("no starting points".into()))?;
    let polished = nelder_mead(f, &best.x, bounds, opts);
    total_iter += polished.iterations;
    let winner = if polished.fx <= best.fx { polished } else { best };
    if !winner.fx.is_finite() || !winner.converged {
        return Err(Error::NonConvergence {
            iterations: total_iter,
            context: format!("objective {:.6e} at {:?}", winner.fx, winner.x),
        });
    }
    Ok(Minimum { iterations: total_iter, ..winner })
}

/// Invert a small dense symmetric matrix by Gauss–Jordan elimination.
pub fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let factor = a[r][col];
                if factor != 0.0 {
                    for c in 0..2 * n {
                        a[r][c] -= factor * a[col][c];
                    }
                }
            }
        }
    }
    Some(a.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// Residual-vector objective; residuals should already carry any weights.
pub trait Residuals {
    fn len(&self) -> usize;
    fn residuals(&self, params: &[f64], out: &mut [f64]);

    fn sum_squares(&self, params: &[f64]) -> f64 {
        let mut r = vec![0.0; self.len()];
        self.residuals(params, &mut r);
        r.iter().map(|v| v * v).sum()
    }
}

impl<F: Fn(&[f64], &mut [f64])> Residuals for (usize, F) {
    fn len(&self) -> usize {
        self.0
    }
    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        (self.1)(params, out)
    }
}

/// Parameter covariance (JᵀJ)⁻¹·s² from a central-difference Jacobian.
/// When `rescale` is set, s² is the reduced residual variance.
pub fn covariance(res: &dyn Residuals, x: &[f64], bounds: &Bounds, rescale: bool) -> Option<Vec<Vec<f64>>> {
    let k = x.len();
    let n = res.len();
    if n <= k {
        return None;
    }
    let mut jac = vec![vec![0.0; k]; n];
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    for d in 0..k {
        let h = 1e-6 * x[d].abs().max(1e-6);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[d] = (x[d] + h).min(bounds.upper[d]);
        xm[d] = (x[d] - h).max(bounds.lower[d]);
        let span = xp[d] - xm[d];
        if span <= 0.0 {
            return None;
        }
        res.residuals(&xp, &mut plus);
        res.residuals(&xm, &mut minus);
        for i in 0..n {
            jac[i][d] = (plus[i] - minus[i]) / span;
        }
    }
    let mut jtj = vec![vec![0.0; k]; k];
    for row in &jac {
        for a in 0..k {
            for b in 0..k {
                jtj[a][b] += row[a] * row[b];
            }
        }
    }
    let mut cov = invert(&jtj)?;
    if rescale {
        let s2 = res.sum_squares(x) / (n - k) as f64;
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v *= s2;
            }
        }
    }
    Some(cov)
}

pub fn sigmas(cov: Option<&Vec<Vec<f64>>>, k: usize) -> Vec<f64> {
    match cov {
        Some(c) => (0..k).map(|i| c[i][i].max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; k],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
}

/// Parameter estimates with 1σ uncertainties and fit quality.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub params: Vec<FitParam>,
    pub residual_norm: f64,
    pub mse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn new(names: &[&str], values: &[f64], sigmas: &[f64]) -> Self {
        FitResult {
            params: names
                .iter()
                .zip(values)
                .zip(sigmas)
                .map(|((n, &v), &s)| FitParam { name: n.to_string(), value: v, sigma: s })
                .collect(),
            residual_norm: 0.0,
            mse: 0.0,
            iterations: 0,
            converged: true,
            flags: Vec::new(),
        }
    }

    pub fn param(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Value of a named parameter, NaN when absent.
    pub fn value(&self, name: &str) -> f64 {
        self.param(name).map_or(f64::NAN, |p| p.value)
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.param(name).map_or(f64::NAN, |p| p.sigma)
    }

    pub fn push(&mut self, name: &str, value: f64, sigma: f64) {
        self.params.push(FitParam { name: name.to_string(), value, sigma });
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    /// `{params: {..}, sigma: {..}, mse}`
    pub fn to_params_sigma_json(&self) -> Value {
        let mut params = Map::new();
        let mut sigma = Map::new();
        for p in &self.params {
            params.insert(p.name.clone(), json_number(p.value));
            sigma.insert(p.name.clone(), json_number(p.sigma));
        }
        json!({ "params": params, "sigma": sigma, "mse": json_number(self.mse), "flags": self.flags })
    }

    /// `{name: {value, sigma}, ..}`
    pub fn to_value_sigma_json(&self) -> Value {
        let mut out = Map::new();
        for p in &self.params {
            out.insert(p.name.clone(), json!({ "value": json_number(p.value), "sigma": json_number(p.sigma) }));
        }
        Value::Object(out)
    }
}

/// Sampled curve: abscissae and values of equal length.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Series {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Series {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return invalid(format!("series length mismatch: {} abscissae, {} values", x.len(), y.len()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return invalid("series contains non-finite values");
        }
        Ok(Series { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Points with `lo <= x <= hi`.
    pub fn window(&self, lo: f64, hi: f64) -> Series {
        let (x, y) = self.x.iter().zip(&self.y).filter(|(x, _)| **x >= lo && **x <= hi).map(|(a, b)| (*a, *b)).unzip();
        Series { x, y }
    }

    /// Sum of values with `lo <= x < hi`.
    pub fn sum_between(&self, lo: f64, hi: f64) -> f64 {
        self.x.iter().zip(&self.y).filter(|(x, _)| **x >= lo && **x < hi).map(|(_, y)| y).sum()
    }
}

/// Delta-method standard deviation of `f(x)` from a covariance matrix.
pub fn propagate(cov: Option<&Vec<Vec<f64>>>, x: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let Some(cov) = cov else { return f64::NAN };
    let k = x.len();
    let mut grad = vec![0.0; k];
    for d in 0..k {
        let h = 1e-6 * x[d].abs().max(1e-9);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[d] += h;
        xm[d] -= h;
        grad[d] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    let mut var = 0.0;
    for a in 0..k {
        for b in 0..k {
            var += grad[a] * cov[a][b] * grad[b];
        }
    }
    var.max(0.0).sqrt()
}

/// JSON has no infinities; map non-finite values to null.
pub fn json_number(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Linear least squares amplitude and offset for y ≈ a·m + b with weights w.
pub fn linear_amplitude_offset(y: &[f64], m: &[f64], w: &[f64]) -> (f64, f64) {
    let (mut sw, mut sm, mut sy, mut smm, mut smy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        sw += w[i];
        sm += w[i] * m[i];
        sy += w[i] * y[i];
        smm += w[i] * m[i] * m[i];
        smy += w[i] * m[i] * y[i];
    }
    let det = sw * smm - sm * sm;
    if det.abs() < 1e-300 {
        return (if smm > 0.0 { smy / smm } else { 0.0 }, 0.0);
    }
    let a = (sw * smy - sm * sy) / det;
    let b = (smm * sy - sm * smy) / det;
    (a, b)
}

/// Linear least squares amplitude for y ≈ a·m with weights w.
pub fn linear_amplitude(y: &[f64], m: &[f64], w: &[f64]) -> f64 {
    let (mut smm, mut smy) = (0.0, 0.0);
    for i in 0..y.len() {
        smm += w[i] * m[i] * m[i];
        smy += w[i] * m[i] * y[i];
    }
    if smm > 0.0 {
        smy / smm
    } else {
        0.0
    }
}

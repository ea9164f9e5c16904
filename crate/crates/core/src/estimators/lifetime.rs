use crate::error::{invalid, Error, Result};
use crate::fit::{covariance, linear_amplitude_offset, minimize, sigmas, Bounds, FitResult, NelderMeadOptions, Series};
use crate::numeric::{ex_gaussian, FWHM_TO_SIGMA};
use crate::record::PeriodGrid;

/// Exponential decay of lifetime `t1` convolved with N(σ).
pub fn c_xx(t: f64, t1_xx: f64, sigma: f64) -> f64 {
    ex_gaussian(t, t1_xx, sigma)
}

/// Sequential decay (XX then X) convolved with N(σ): hypoexponential ⊛ N.
pub fn c_x(t: f64, t1_xx: f64, t1_x: f64, sigma: f64) -> f64 {
    let (a, mut b) = (t1_xx, t1_x);
    if (a - b).abs() < 1e-6 * a.max(b) {
        b = a * (1.0 + 1e-6);
    }
    (b * ex_gaussian(t, b, sigma) - a * ex_gaussian(t, a, sigma)) / (b - a)
}

/// X-after-XX delay density: exponential ⊛ N(σ_combined).
pub fn c_x_given_xx(t: f64, t1: f64, sigma: f64) -> f64 {
    ex_gaussian(t, t1, sigma)
}

/// Detection-time histogram folded onto the excitation period, abscissa
/// relative to the pulse. `grid.origin_ps` is the start of the folding
/// window (typically a little before the pulse at 0).
pub fn folded_decay(ts: &[i64], grid: &PeriodGrid, bin_ps: f64) -> Series {
    let counts = crate::correlator::pulse_phase_histogram(ts, grid, bin_ps);
    let x = (0..counts.len()).map(|i| grid.origin_ps + (i as f64 + 0.5) * bin_ps).collect();
    Series { x, y: counts.into_iter().map(|c| c as f64).collect() }
}

/// Fixed inputs of the simultaneous lifetime fit.
#[derive(Debug, Clone, Copy)]
pub struct LifetimeSpec {
    pub jitter_xx_fwhm_ps: f64,
    pub jitter_x_fwhm_ps: f64,
    /// Excitation period; when set the XX and X models are summed over
    /// neighbouring periods to account for folding.
    pub period_ps: Option<f64>,
    /// Delay range entering the fit, applied to all three curves.
    pub range_ps: (f64, f64),
}

impl LifetimeSpec {
    pub fn new(jitter_xx_fwhm_ps: f64, jitter_x_fwhm_ps: f64) -> Self {
        LifetimeSpec { jitter_xx_fwhm_ps, jitter_x_fwhm_ps, period_ps: None, range_ps: (-150.0, 700.0) }
    }
}

fn folded(f: impl Fn(f64) -> f64, t: f64, period: Option<f64>) -> f64 {
    match period {
        Some(p) => (-3..=1).map(|k| f(t - k as f64 * p)).sum(),
        None => f(t),
    }
}

/// Simultaneous weighted least-squares fit of C^XX, C^X and C^(X|XX) with
/// lifetimes `t1_xx_ps`, `t1_x_ps`, `t1_x_given_xx_ps`. Each curve carries
/// its own amplitude and constant background, both profiled linearly.
/// Weights are 1/(counts + 1).
pub fn fit_lifetimes(xx: &Series, x: &Series, cond: &Series, spec: &LifetimeSpec) -> Result<FitResult> {
    if !(spec.jitter_xx_fwhm_ps >= 0.0 && spec.jitter_x_fwhm_ps >= 0.0) {
        return invalid("jitter must be non-negative");
    }
    let (lo, hi) = spec.range_ps;
    let curves = [xx.window(lo, hi), x.window(lo, hi), cond.window(lo, hi)];
    for (c, name) in curves.iter().zip(["XX", "X", "X|XX"]) {
        if c.len() < 5 || c.y.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InsufficientStatistics(format!("{name} decay histogram is empty in the fit range")));
        }
    }
    let s1 = spec.jitter_xx_fwhm_ps * FWHM_TO_SIGMA;
    let s2 = spec.jitter_x_fwhm_ps * FWHM_TO_SIGMA;
    let sc = (s1 * s1 + s2 * s2).sqrt();
    let weights: Vec<Vec<f64>> = curves.iter().map(|c| c.y.iter().map(|v| 1.0 / (v.max(0.0) + 1.0)).collect()).collect();
    let period = spec.period_ps;
    let shapes = |p: &[f64]| -> [Vec<f64>; 3] {
        [
            curves[0].x.iter().map(|&t| folded(|u| c_xx(u, p[0], s1), t, period)).collect(),
            curves[1].x.iter().map(|&t| folded(|u| c_x(u, p[0], p[1], s2), t, period)).collect(),
            curves[2].x.iter().map(|&t| c_x_given_xx(t, p[2], sc)).collect(),
        ]
    };
    let sse = |p: &[f64]| -> (f64, [(f64, f64); 3]) {
        let m = shapes(p);
        let mut total = 0.0;
        let mut lin = [(0.0, 0.0); 3];
        for k in 0..3 {
            let (a, b) = linear_amplitude_offset(&curves[k].y, &m[k], &weights[k]);
            lin[k] = (a, b);
            total += curves[k]
                .y
                .iter()
                .zip(&m[k])
                .zip(&weights[k])
                .map(|((y, m), w)| w * (y - a * m - b).powi(2))
                .sum::<f64>();
        }
        (total, lin)
    };
    let objective = |p: &[f64]| sse(p).0;
    let bounds = Bounds::new(vec![1.0; 3], vec![1e4; 3]);
    let starts = vec![
        vec![130.0, 200.0, 200.0],
        vec![60.0, 100.0, 100.0],
        vec![300.0, 400.0, 400.0],
        vec![200.0, 120.0, 120.0],
        vec![100.0, 600.0, 600.0],
    ];
    let best = minimize(&objective, &starts, &bounds, &NelderMeadOptions::precise())?;
    let (_, lin) = sse(&best.x);

    // Covariance over the lifetimes plus the six linear parameters.
    let n: Vec<usize> = curves.iter().map(|c| c.len()).collect();
    let total_n: usize = n.iter().sum();
    let residuals = (total_n, |p: &[f64], out: &mut [f64]| {
        let m = shapes(p);
        let mut o = 0;
        for k in 0..3 {
            let (a, b) = (p[3 + 2 * k], p[4 + 2 * k]);
            for i in 0..n[k] {
                out[o] = weights[k][i].sqrt() * (curves[k].y[i] - a * m[k][i] - b);
                o += 1;
            }
        }
    });
    let mut x = best.x.clone();
    for (a, b) in lin {
        x.push(a);
        x.push(b);
    }
    let mut lower = bounds.lower.clone();
    let mut upper = bounds.upper.clone();
    lower.extend([f64::NEG_INFINITY; 6]);
    upper.extend([f64::INFINITY; 6]);
    let cov = covariance(&residuals, &x, &Bounds::new(lower, upper), true);
    let sig = sigmas(cov.as_ref(), 3);
    let mut r = FitResult::new(&["t1_xx_ps", "t1_x_ps", "t1_x_given_xx_ps"], &best.x, &sig);
    let mut unweighted = 0.0;
    let mut sy2 = 0.0;
    let m = shapes(&best.x);
    for k in 0..3 {
        let (a, b) = lin[k];
        for i in 0..n[k] {
            unweighted += (curves[k].y[i] - a * m[k][i] - b).powi(2);
            sy2 += curves[k].y[i].powi(2);
        }
    }
    r.residual_norm = best.fx.sqrt();
    r.mse = unweighted / sy2;
    r.iterations = best.iterations;
    r.converged = best.converged;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, Normal};

    #[test]
    fn hypoexponential_integrates_to_one_and_matches_convolution() {
        let (a, b, s) = (135.0, 200.0, 23.0);
        let total: f64 = (-300..6000).map(|t| c_x(t as f64, a, b, s)).sum();
        assert!((total - 1.0).abs() < 1e-4, "{total}");
        // Zero-jitter oracle: direct convolution of the two exponentials.
        for t in [50.0, 250.0, 900.0] {
            let mut acc = 0.0;
            let h = 0.01;
            let mut u = h / 2.0;
            while u < t {
                acc += (-u / a).exp() / a * (-(t - u) / b).exp() / b * h;
                u += h;
            }
            assert!((c_x(t, a, b, 1e-9) / acc - 1.0).abs() < 1e-4, "{t}");
        }
        assert!(c_x(300.0, 150.0, 150.0, 20.0).is_finite());
    }

    fn histogram(samples: &[f64], bin: f64, lo: f64, hi: f64) -> Series {
        let n = ((hi - lo) / bin) as usize;
        let mut y = vec![0.0; n];
        for &s in samples {
            if s >= lo && s < hi {
                y[((s - lo) / bin) as usize] += 1.0;
            }
        }
        Series { x: (0..n).map(|i| lo + (i as f64 + 0.5) * bin).collect(), y }
    }

    #[test]
    fn zero_jitter_matches_exponential_mle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let exp_xx = Exp::new(1.0 / 135.0).unwrap();
        let exp_x = Exp::new(1.0 / 200.0).unwrap();
        let n = 100_000;
        let mut xx = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = exp_xx.sample(&mut rng);
            let b: f64 = exp_x.sample(&mut rng);
            xx.push(a);
            x.push(a + b);
            d.push(b);
        }
        let mle_xx = xx.iter().sum::<f64>() / n as f64;
        let mle_d = d.iter().sum::<f64>() / n as f64;
        let spec = LifetimeSpec { range_ps: (-50.0, 2500.0), ..LifetimeSpec::new(0.0, 0.0) };
        let fit = fit_lifetimes(
            &histogram(&xx, 2.0, -50.0, 3000.0),
            &histogram(&x, 2.0, -50.0, 3000.0),
            &histogram(&d, 2.0, -50.0, 3000.0),
            &spec,
        )
        .unwrap();
        assert!((fit.value("t1_xx_ps") / mle_xx - 1.0).abs() < 0.02);
        assert!((fit.value("t1_x_given_xx_ps") / mle_d - 1.0).abs() < 0.02);
        assert!((fit.value("t1_x_ps") / 200.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn jittered_and_folded_histograms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let period = 1007.56;
        let (s1, s2) = (47.0 * FWHM_TO_SIGMA, 54.0 * FWHM_TO_SIGMA);
        let exp_xx = Exp::new(1.0 / 134.96).unwrap();
        let exp_x = Exp::new(1.0 / 200.4).unwrap();
        let g1 = Normal::new(0.0, s1).unwrap();
        let g2 = Normal::new(0.0, s2).unwrap();
        let grid = PeriodGrid::new(period, -100.0);
        let mut t_xx = Vec::new();
        let mut t_x = Vec::new();
        let mut d = Vec::new();
        for k in 0..200_000i64 {
            let p = k as f64 * period;
            let a: f64 = exp_xx.sample(&mut rng);
            let b: f64 = exp_x.sample(&mut rng);
            let ta = p + a + g1.sample(&mut rng);
            let tb = p + a + b + g2.sample(&mut rng);
            if rng.random::<f64>() < 0.5 {
                t_xx.push(ta.round() as i64);
            }
            if rng.random::<f64>() < 0.5 {
                t_x.push(tb.round() as i64);
            }
            d.push(tb - ta);
        }
        let spec = LifetimeSpec {
            period_ps: Some(period),
            range_ps: (-100.0, 900.0),
            ..LifetimeSpec::new(47.0, 54.0)
        };
        let fit = fit_lifetimes(
            &folded_decay(&t_xx, &grid, 4.0),
            &folded_decay(&t_x, &grid, 4.0),
            &histogram(&d, 4.0, -400.0, 1000.0),
            &spec,
        )
        .unwrap();
        for (name, truth) in [("t1_xx_ps", 134.96), ("t1_x_ps", 200.4), ("t1_x_given_xx_ps", 200.4)] {
            let v = fit.value(name);
            assert!((v / truth - 1.0).abs() < 0.02, "{name}: {v}");
            assert!(fit.sigma(name) > 0.0 && fit.sigma(name) < 5.0);
        }
    }

    #[test]
    fn empty_curve_is_insufficient() {
        let s = Series { x: (0..100).map(|i| i as f64 * 5.0).collect(), y: vec![0.0; 100] };
        let r = fit_lifetimes(&s, &s, &s, &LifetimeSpec::new(40.0, 40.0));
        assert!(matches!(r, Err(Error::InsufficientStatistics(_))));
    }
}

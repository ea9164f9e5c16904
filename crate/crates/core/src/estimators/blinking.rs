use serde::Serialize;

use crate::correlator::{complete_peaks, period_peak_area, CorrelationHistogram};
use crate::error::{invalid, Error, Result};
use crate::fit::{covariance, linear_amplitude, minimize, sigmas, Bounds, FitResult, NelderMeadOptions};

/// Minimum number of side peaks entering the envelope fit.
pub const MIN_SIDE_PEAKS: usize = 10;

/// Δχ² below which the bunching term is treated as absent.
pub const FLAT_DELTA_CHI2: f64 = 9.0;

/// Integrated auto-correlation counts per excitation period offset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakEnvelope {
    pub n: Vec<i64>,
    pub area: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl PeakEnvelope {
    /// Areas of every complete period peak, Poisson uncertainties.
    pub fn from_histogram(h: &CorrelationHistogram, period_ps: f64) -> Self {
        let n = complete_peaks(h, period_ps);
        let area: Vec<f64> = n.iter().map(|&k| period_peak_area(h, period_ps, k) as f64).collect();
        let sigma = area.iter().map(|a| a.max(1.0).sqrt()).collect();
        PeakEnvelope { n, area, sigma }
    }

    pub fn side_peaks(&self) -> usize {
        self.n.iter().filter(|&&k| k != 0).count()
    }
}

/// Side-peak envelope A(n) = C·(1 + ((1−β)/β)·e^{−|n|T/T_decay}).
pub fn blinking_envelope(n: i64, beta: f64, t_decay_ns: f64, period_ns: f64) -> f64 {
    1.0 + (1.0 - beta) / beta * (-(n.abs() as f64) * period_ns / t_decay_ns).exp()
}

/// Weighted least-squares fit of the side-peak envelope with the scale C
/// profiled. Reports `beta`, `t_decay_ns` and `scale`. When the bunching term
/// improves χ² by less than [`FLAT_DELTA_CHI2`] the envelope is flat, β is
/// reported as 1 with the `flat_envelope` flag and T_decay as NaN.
pub fn fit_blinking(env: &PeakEnvelope, rep_ghz: f64) -> Result<FitResult> {
    if !(rep_ghz > 0.0) {
        return invalid("repetition rate must be positive");
    }
    let period_ns = 1.0 / rep_ghz;
    let idx: Vec<usize> = (0..env.n.len()).filter(|&i| env.n[i] != 0).collect();
    if idx.len() < MIN_SIDE_PEAKS {
        return Err(Error::InsufficientStatistics(format!(
            "{} side peaks, at least {MIN_SIDE_PEAKS} needed",
            idx.len()
        )));
    }
    let n: Vec<i64> = idx.iter().map(|&i| env.n[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| env.area[i]).collect();
    let w: Vec<f64> = idx.iter().map(|&i| 1.0 / env.sigma[i].max(1e-300).powi(2)).collect();
    let shape = |x: &[f64]| -> Vec<f64> { n.iter().map(|&k| blinking_envelope(k, x[0], x[1], period_ns)).collect() };
    let chi2 = |m: &[f64], c: f64| -> f64 { (0..y.len()).map(|i| w[i] * (y[i] - c * m[i]).powi(2)).sum() };
    let objective = |x: &[f64]| -> f64 {
        let m = shape(x);
        chi2(&m, linear_amplitude(&y, &m, &w))
    };
    let span_ns = n.iter().map(|k| k.abs()).max().unwrap_or(1) as f64 * period_ns;
    let bounds = Bounds::new(vec![0.01, 0.1 * period_ns], vec![1.0, 100.0 * span_ns]);
    let mut starts = Vec::new();
    for beta in [0.3, 0.6, 0.9] {
        for frac in [0.05, 0.2, 0.6] {
            starts.push(vec![beta, frac * span_ns]);
        }
    }
    let opts = NelderMeadOptions::precise();
    let best = minimize(&objective, &starts, &bounds, &opts)?;
    let flat = vec![1.0; y.len()];
    let chi2_flat = chi2(&flat, linear_amplitude(&y, &flat, &w));

    let m = shape(&best.x);
    let c = linear_amplitude(&y, &m, &w);
    let sy2: f64 = y.iter().map(|v| v * v).sum();
    if chi2_flat - best.fx < FLAT_DELTA_CHI2 {
        let c_flat = linear_amplitude(&y, &flat, &w);
        let mut r = FitResult::new(&["beta", "t_decay_ns", "scale"], &[1.0, f64::NAN, c_flat], &[f64::NAN, f64::NAN, f64::NAN]);
        r.flags.push("flat_envelope".into());
        r.residual_norm = chi2_flat.sqrt();
        r.mse = (0..y.len()).map(|i| (y[i] - c_flat).powi(2)).sum::<f64>() / sy2;
        return Ok(r);
    }
    let k = y.len();
    let residuals = (k, |x: &[f64], out: &mut [f64]| {
        for i in 0..k {
            out[i] = w[i].sqrt() * (y[i] - x[2] * blinking_envelope(n[i], x[0], x[1], period_ns));
        }
    });
    let x = [best.x[0], best.x[1], c];
    let full = Bounds::new(vec![0.01, bounds.lower[1], 0.0], vec![1.0, bounds.upper[1], f64::INFINITY]);
    let cov = covariance(&residuals, &x, &full, true);
    let sig = sigmas(cov.as_ref(), 3);
    let mut r = FitResult::new(&["beta", "t_decay_ns", "scale"], &x, &sig);
    r.residual_norm = best.fx.sqrt();
    r.mse = (0..k).map(|i| (y[i] - c * m[i]).powi(2)).sum::<f64>() / sy2;
    r.iterations = best.iterations;
    r.converged = best.converged;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(beta: f64, td: f64, scale: f64, noise: f64, seed: u64) -> PeakEnvelope {
        let mut s = seed;
        let n: Vec<i64> = (-60..=60).collect();
        let area: Vec<f64> = n
            .iter()
            .map(|&k| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let u = ((s >> 11) as f64) / (1u64 << 53) as f64 - 0.5;
                let a = scale * blinking_envelope(k, beta, td, 1.0 / 0.9925);
                if k == 0 { 0.0 } else { a * (1.0 + noise * u) }
            })
            .collect();
        let sigma = area.iter().map(|a: &f64| (a * noise / 12f64.sqrt()).max(1e-9)).collect();
        PeakEnvelope { n, area, sigma }
    }

    #[test]
    fn recovers_synthetic_envelope() {
        let env = synthetic(0.5, 10.0, 1e4, 0.02, 4);
        let f = fit_blinking(&env, 0.9925).unwrap();
        assert!((f.value("beta") / 0.5 - 1.0).abs() < 0.05, "{}", f.value("beta"));
        assert!((f.value("t_decay_ns") / 10.0 - 1.0).abs() < 0.10, "{}", f.value("t_decay_ns"));
        assert!(!f.has_flag("flat_envelope"));
    }

    #[test]
    fn noiseless_optimum_beats_truth() {
        let env = synthetic(0.61, 12.7, 500.0, 0.0, 1);
        let env = PeakEnvelope { sigma: vec![1.0; env.n.len()], ..env };
        let f = fit_blinking(&env, 0.9925).unwrap();
        let truth: f64 = env
            .n
            .iter()
            .zip(&env.area)
            .filter(|(k, _)| **k != 0)
            .map(|(&k, &a)| (a - 500.0 * blinking_envelope(k, 0.61, 12.7, 1.0 / 0.9925)).powi(2))
            .sum();
        assert!(f.residual_norm.powi(2) <= truth + 1e-9, "{} vs {truth}: {:?}", f.residual_norm.powi(2), f.params);
        assert!((f.value("beta") - 0.61).abs() < 1e-3);
    }

    #[test]
    fn flat_envelope_is_flagged() {
        let env = synthetic(1.0, 12.7, 1e4, 0.01, 2);
        let f = fit_blinking(&env, 0.9925).unwrap();
        assert!(f.has_flag("flat_envelope"));
        assert_eq!(f.value("beta"), 1.0);
    }

    #[test]
    fn too_few_peaks() {
        let mut env = synthetic(0.6, 10.0, 1e4, 0.0, 3);
        let keep: Vec<usize> = (0..env.n.len()).filter(|&i| env.n[i].abs() <= 4).collect();
        env = PeakEnvelope {
            n: keep.iter().map(|&i| env.n[i]).collect(),
            area: keep.iter().map(|&i| env.area[i]).collect(),
            sigma: keep.iter().map(|&i| env.sigma[i]).collect(),
        };
        assert!(matches!(fit_blinking(&env, 0.9925), Err(Error::InsufficientStatistics(_))));
    }
}

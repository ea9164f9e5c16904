use crate::error::{Error, Result};
use crate::fit::{invert, propagate, FitResult};

/// Minimum number of plate angles and angular span for an FSS fit.
pub const MIN_SAMPLES: usize = 8;
pub const MIN_SPAN_DEG: f64 = 90.0;

/// E(θ) = E₀ + (Δ/2)·sin(4θ + φ₀) for a half-wave plate at angle θ.
pub fn fss_model(theta_deg: f64, e0_ev: f64, fss_uev: f64, phase_deg: f64) -> f64 {
    e0_ev + 0.5 * fss_uev * 1e-6 * (4.0 * theta_deg.to_radians() + phase_deg.to_radians()).sin()
}

/// Least-squares fit of the emission energy against plate angle. The model
/// is linear in (E₀, a, b) with E = E₀ + a·sin 4θ + b·cos 4θ, so the fit is
/// solved exactly; Δ = 2√(a²+b²) and φ₀ = atan2(b, a).
///
/// `noise_uev` is the per-sample energy uncertainty; when absent it is
/// estimated from the residuals. Reports `fss_ueV`, `e0_ev`, `phase_deg`.
pub fn fit_fss(theta_deg: &[f64], energy_ev: &[f64], noise_uev: Option<f64>) -> Result<FitResult> {
    let n = theta_deg.len();
    if n != energy_ev.len() {
        return Err(Error::InvalidParams("angle and energy columns differ in length".into()));
    }
    if n < MIN_SAMPLES {
        return Err(Error::DegenerateSampling(format!("{n} angles, at least {MIN_SAMPLES} needed")));
    }
    let lo = theta_deg.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = theta_deg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < MIN_SPAN_DEG - 1e-9 {
        return Err(Error::DegenerateSampling(format!("plate angles span {:.1}°, at least {MIN_SPAN_DEG}° needed", hi - lo)));
    }
    // Work in µeV relative to the mean to keep the normal equations well scaled.
    let mean = energy_ev.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = energy_ev.iter().map(|e| (e - mean) * 1e6).collect();
    let rows: Vec<[f64; 3]> = theta_deg
        .iter()
        .map(|t| {
            let a = 4.0 * t.to_radians();
            [1.0, a.sin(), a.cos()]
        })
        .collect();
    let mut xtx = vec![vec![0.0; 3]; 3];
    let mut xty = [0.0; 3];
    for (r, &v) in rows.iter().zip(&y) {
        for i in 0..3 {
            xty[i] += r[i] * v;
            for j in 0..3 {
                xtx[i][j] += r[i] * r[j];
            }
        }
    }
    let inv = invert(&xtx).ok_or_else(|| Error::DegenerateSampling("plate angles do not resolve the 4θ modulation".into()))?;
    let mut beta = [0.0; 3];
    for i in 0..3 {
        beta[i] = (0..3).map(|j| inv[i][j] * xty[j]).sum();
    }
    let sse: f64 = rows
        .iter()
        .zip(&y)
        .map(|(r, v)| (v - (0..3).map(|i| r[i] * beta[i]).sum::<f64>()).powi(2))
        .sum();
    let s2 = match noise_uev {
        Some(s) => s * s,
        None => sse / (n - 3) as f64,
    };
    let cov: Vec<Vec<f64>> = inv.iter().map(|row| row.iter().map(|v| v * s2).collect()).collect();
    let fss = |p: &[f64]| 2.0 * p[1].hypot(p[2]);
    let phase = |p: &[f64]| p[2].atan2(p[1]).to_degrees();
    let mut r = FitResult::new(&["fss_ueV"], &[fss(&beta)], &[propagate(Some(&cov), &beta, fss)]);
    r.push("e0_ev", mean + beta[0] * 1e-6, cov[0][0].sqrt() * 1e-6);
    r.push("phase_deg", phase(&beta), propagate(Some(&cov), &beta, phase));
    r.residual_norm = sse.sqrt();
    let sy2: f64 = energy_ev.iter().map(|e| e * e).sum::<f64>() * 1e12;
    r.mse = sse / sy2;
    Ok(r)
}

/// Whether two transitions show opposite energy modulation (phases about
/// 180° apart), as expected for X and XX of the same dot.
pub fn phases_anticorrelated(a: &FitResult, b: &FitResult) -> bool {
    let d = (a.value("phase_deg") - b.value("phase_deg")).rem_euclid(360.0);
    (d - 180.0).abs() < 45.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn angles() -> Vec<f64> {
        (0..19).map(|k| k as f64 * 10.0).collect()
    }

    #[test]
    fn exact_recovery() {
        let th = angles();
        let e: Vec<f64> = th.iter().map(|&t| fss_model(t, 1.39, 3.9, 30.0)).collect();
        let f = fit_fss(&th, &e, None).unwrap();
        assert!((f.value("fss_ueV") - 3.9).abs() < 1e-6);
        assert!((f.value("phase_deg") - 30.0).abs() < 1e-4);
        assert!((f.value("e0_ev") - 1.39).abs() < 1e-12);
    }

    #[test]
    fn flat_data_gives_zero() {
        let th = angles();
        let f = fit_fss(&th, &vec![1.4; th.len()], None).unwrap();
        assert!(f.value("fss_ueV").abs() < 1e-6);
    }

    #[test]
    fn anticorrelated_phases() {
        let th = angles();
        let ex: Vec<f64> = th.iter().map(|&t| fss_model(t, 1.39, 3.9, 10.0)).collect();
        let exx: Vec<f64> = th.iter().map(|&t| fss_model(t, 1.37, 3.7, 190.0)).collect();
        let fx = fit_fss(&th, &ex, None).unwrap();
        let fxx = fit_fss(&th, &exx, None).unwrap();
        assert!(phases_anticorrelated(&fx, &fxx));
        assert!(!phases_anticorrelated(&fx, &fx));
    }

    #[test]
    fn degenerate_sampling() {
        let th: Vec<f64> = (0..8).map(|k| k as f64 * 5.0).collect();
        let e = vec![1.4; 8];
        assert!(matches!(fit_fss(&th, &e, None), Err(Error::DegenerateSampling(_))));
        assert!(matches!(fit_fss(&th[..5], &e[..5], None), Err(Error::DegenerateSampling(_))));
        let th: Vec<f64> = (0..10).map(|k| (k % 2) as f64 * 90.0).collect();
        assert!(matches!(fit_fss(&th, &vec![1.4; 10], None), Err(Error::DegenerateSampling(_))));
    }

    #[test]
    fn noisy_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.3e-6).unwrap();
        let th = angles();
        for (truth, phase) in [(3.9, 20.0), (3.7, 200.0), (0.1, 0.0)] {
            let e: Vec<f64> = th.iter().map(|&t| fss_model(t, 1.39, truth, phase) + noise.sample(&mut rng)).collect();
            let f = fit_fss(&th, &e, Some(0.3)).unwrap();
            assert!((f.value("fss_ueV") - truth).abs() < 4.0 * f.sigma("fss_ueV") + 0.3, "{truth}");
        }
    }
}

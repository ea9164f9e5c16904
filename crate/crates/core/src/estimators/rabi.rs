use crate::error::{invalid, Error, Result};
use crate::fit::{covariance, linear_amplitude, minimize, sigmas, Bounds, FitResult, NelderMeadOptions};
use crate::sim::rabi_excitation_probability;

/// Fit of count rate against pulse energy with the damped Rabi model.
/// The peak amplitude `eta_max` is profiled linearly; `e_pi_fj` and
/// `damping` are found by bounded Nelder–Mead.
pub fn fit_rabi(energy_fj: &[f64], rate: &[f64]) -> Result<FitResult> {
    let n = energy_fj.len();
    if n != rate.len() {
        return invalid("energy and rate columns differ in length");
    }
    if n < 4 {
        return Err(Error::InsufficientStatistics("need at least four pulse energies".into()));
    }
    if energy_fj.iter().any(|e| !(*e >= 0.0)) {
        return invalid("pulse energies must be non-negative");
    }
    let imax = (0..n).max_by(|&a, &b| rate[a].total_cmp(&rate[b])).unwrap();
    let e_max = energy_fj.iter().cloned().fold(0.0, f64::max);
    let has_higher = energy_fj.iter().zip(rate).any(|(&e, &r)| e > energy_fj[imax] && r < rate[imax]);
    let has_lower = energy_fj.iter().zip(rate).any(|(&e, &r)| e < energy_fj[imax] && r < rate[imax]);
    if !(has_higher && has_lower) {
        return Err(Error::NoMaximum);
    }
    let ones = vec![1.0; n];
    let shape = |x: &[f64]| -> Vec<f64> {
        energy_fj
            .iter()
            .map(|&e| rabi_excitation_probability(e, x[0], x[1], 1.0).unwrap_or(f64::NAN))
            .collect()
    };
    let objective = |x: &[f64]| -> f64 {
        let m = shape(x);
        let a = linear_amplitude(rate, &m, &ones);
        rate.iter().zip(&m).map(|(y, m)| (y - a * m).powi(2)).sum()
    };
    let e_peak = energy_fj[imax];
    let bounds = Bounds::new(vec![1e-3 * e_max.max(1e-9), 0.0], vec![4.0 * e_max, 5.0]);
    let starts: Vec<Vec<f64>> = [(1.0, 0.0), (1.0, 0.5), (1.3, 0.3), (0.8, 0.1), (1.6, 1.0)]
        .iter()
        .map(|&(f, d)| vec![(f * e_peak).clamp(bounds.lower[0], bounds.upper[0]), d])
        .collect();
    let best = minimize(&objective, &starts, &bounds, &NelderMeadOptions::precise())?;
    let amp = linear_amplitude(rate, &shape(&best.x), &ones);
    let residuals = (n, |x: &[f64], out: &mut [f64]| {
        let m = shape(x);
        for i in 0..n {
            out[i] = rate[i] - x[2] * m[i];
        }
    });
    let x = [best.x[0], best.x[1], amp];
    let full = Bounds::new(vec![bounds.lower[0], 0.0, f64::NEG_INFINITY], vec![bounds.upper[0], 5.0, f64::INFINITY]);
    let sig = sigmas(covariance(&residuals, &x, &full, true).as_ref(), 3);
    let mut r = FitResult::new(&["e_pi_fj", "damping", "eta_max"], &x, &sig);
    let sy2: f64 = rate.iter().map(|v| v * v).sum();
    r.residual_norm = best.fx.sqrt();
    r.mse = best.fx / sy2;
    r.iterations = best.iterations;
    r.converged = best.converged;
    Ok(r)
}

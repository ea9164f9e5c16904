//! Small numerical kernels shared by the model functions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub use crate::sim::FWHM_TO_SIGMA;

/// Scaled complementary error function e^{x²}·erfc(x), stable for large x.
pub fn erfcx(x: f64) -> f64 {
    if x < 5.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        let x2 = x * x;
        let series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2);
        series / (x * PI.sqrt())
    }
}

/// Normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Unit-area exponential decay (lifetime `tau`) convolved with a zero-mean
/// Gaussian of standard deviation `sigma`.
pub fn ex_gaussian(t: f64, tau: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return if t >= 0.0 { (-t / tau).exp() / tau } else { 0.0 };
    }
    let x = (sigma / tau - t / sigma) * FRAC_1_SQRT_2;
    if x < 5.0 {
        let a = sigma * sigma / (2.0 * tau * tau) - t / tau;
        0.5 / tau * (a.exp() * libm::erfc(x))
    } else {
        0.5 / tau * (-t * t / (2.0 * sigma * sigma)).exp() * erfcx(x)
    }
}

/// Gaussian of the given standard deviation, discretized on a unit grid so
/// that weight `i` is the probability mass of `[i − ½, i + ½)`. Returns the
/// offset of the first weight (negative) and the weights.
pub fn gaussian_kernel(sigma: f64) -> (i64, Vec<f64>) {
    if sigma <= 0.0 {
        return (0, vec![1.0]);
    }
    let half = (7.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-half..=half)
        .map(|i| norm_cdf((i as f64 + 0.5) / sigma) - norm_cdf((i as f64 - 0.5) / sigma))
        .collect();
    let total: f64 = w.iter().sum();
    (-half, w.into_iter().map(|v| v / total).collect())
}

/// Discrete convolution `out[n] = Σ_m signal[m]·kernel[n − m]` on a shared
/// unit grid. `signal[0]` sits at grid position `signal_start`; the output
/// covers `[out_start, out_start + out_len)`.
pub fn convolve_onto<T>(signal: &[T], signal_start: i64, kernel: &(i64, Vec<f64>), out_start: i64, out_len: usize) -> Vec<T>
where
    T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let (k0, kw) = kernel;
    let mut out = vec![T::default(); out_len];
    for (n, slot) in out.iter_mut().enumerate() {
        let pos = out_start + n as i64;
        let mut acc = T::default();
        for (j, &w) in kw.iter().enumerate() {
            let m = pos - (k0 + j as i64) - signal_start;
            if m >= 0 && (m as usize) < signal.len() {
                acc = acc + signal[m as usize] * w;
            }
        }
        *slot = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfcx_branches_agree() {
        for x in [4.9f64, 5.0, 5.1] {
            let direct = (x * x).exp() * libm::erfc(x);
            assert!((erfcx(x) / direct - 1.0).abs() < 2e-5, "{x}");
        }
    }

    #[test]
    fn ex_gaussian_matches_numeric_convolution() {
        let (tau, sigma) = (135.0, 25.0);
        let (k0, w) = gaussian_kernel(sigma);
        for t in [-100.0, -20.0, 0.0, 30.0, 200.0, 900.0] {
            // Oracle: midpoint sum over the exponential on a 0.05 ps grid.
            let h = 0.05;
            let mut acc = 0.0;
            let mut s = h / 2.0;
            while s < 20.0 * tau {
                let z = (t - s) / sigma;
                acc += (-s / tau).exp() / tau * (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt()) * h;
                s += h;
            }
            let got = ex_gaussian(t, tau, sigma);
            assert!((got - acc).abs() < 1e-6 * acc.max(1e-6), "t={t}: {got} vs {acc}");
        }
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert_eq!(k0, -(7.0f64 * sigma).ceil() as i64);
    }

    #[test]
    fn ex_gaussian_far_tail_is_finite() {
        let v = ex_gaussian(-2000.0, 100.0, 30.0);
        assert!(v.is_finite() && (0.0..1e-300).contains(&v));
        assert!((ex_gaussian(50.0, 100.0, 0.0) - (-0.5f64).exp() / 100.0).abs() < 1e-15);
    }

    #[test]
    fn convolution_with_delta_is_shift_free() {
        let signal = [1.0, 2.0, 3.0];
        let out = convolve_onto(&signal, 10, &(0, vec![1.0]), 9, 5);
        assert_eq!(out, vec![0.0, 1.0, 2.0, 3.0, 0.0]);
        let out = convolve_onto(&signal, 10, &(-1, vec![0.25, 0.5, 0.25]), 9, 5);
        assert_eq!(out, vec![0.25, 1.0, 2.0, 2.0, 0.75]);
    }
}

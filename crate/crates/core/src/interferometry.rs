//! Michelson visibility and pulsed Hong-Ou-Mandel models and fits.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{covariance, linear_amplitude, minimize, propagate, sigmas, Bounds, FitResult, NelderMeadOptions, Series};
use crate::numeric::{ex_gaussian, FWHM_TO_SIGMA};
use crate::tomography::BootstrapOptions;

/// Geometry and emitter parameters of the unbalanced-delay HOM setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomParams {
    pub t1_ps: f64,
    /// Pure dephasing time; infinity for fully indistinguishable photons.
    pub t2star_ps: f64,
    /// Combined timing jitter of the detector pair.
    pub jitter_fwhm_ps: f64,
    pub rep_period_ns: f64,
    pub delay_ns: f64,
    pub split_ratio: f64,
}

impl HomParams {
    pub fn new(t1_ps: f64, t2star_ps: f64, jitter_fwhm_ps: f64) -> Self {
        HomParams { t1_ps, t2star_ps, jitter_fwhm_ps, rep_period_ns: 13.16, delay_ns: 1.58, split_ratio: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        let times = [self.t1_ps, self.rep_period_ns, self.delay_ns];
        if times.iter().any(|t| !(*t > 0.0 && t.is_finite())) || !(self.t2star_ps > 0.0) {
            return invalid("HOM times must be positive");
        }
        if !(self.jitter_fwhm_ps >= 0.0) {
            return invalid("jitter must be non-negative");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return invalid("beamsplitter ratio must lie in (0, 1)");
        }
        Ok(())
    }

    fn delay_ps(&self) -> f64 {
        self.delay_ns * 1e3
    }

    /// Weights of the peaks at ±delay and at zero delay.
    fn peak_weights(&self) -> (f64, f64) {
        let (r, t) = (self.split_ratio, 1.0 - self.split_ratio);
        (0.5 * (r * r + t * t), 2.0 * r * t)
    }

    /// Decay constant of the interfering part of the central co-polarized peak.
    fn overlap_tau(&self) -> f64 {
        1.0 / (1.0 / self.t1_ps + 2.0 / self.t2star_ps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomPolarization {
    Co,
    Cross,
}

/// Two-photon overlap at detection-time difference `dt` under Markovian pure
/// dephasing. The co-polarized central peak is suppressed by this factor.
pub fn two_photon_overlap(dt_ps: f64, t2star_ps: f64) -> f64 {
    (-2.0 * dt_ps.abs() / t2star_ps).exp()
}

fn laplace(x: f64, tau: f64) -> f64 {
    (-x.abs() / tau).exp() / (2.0 * tau)
}

fn laplace_convolved(x: f64, tau: f64, sigma: f64) -> f64 {
    0.5 * (ex_gaussian(x, tau, sigma) + ex_gaussian(-x, tau, sigma))
}

/// Coincidence density (per unit pair, per ps) without detector jitter.
pub fn hom_model_nc(dt_ps: f64, p: &HomParams, pol: HomPolarization) -> f64 {
    let (side, center) = p.peak_weights();
    let d = p.delay_ps();
    let sides = side * (laplace(dt_ps - d, p.t1_ps) + laplace(dt_ps + d, p.t1_ps));
    let central = center * laplace(dt_ps, p.t1_ps);
    match pol {
        HomPolarization::Cross => sides + central,
        HomPolarization::Co => sides + central * (1.0 - two_photon_overlap(dt_ps, p.t2star_ps)),
    }
}

/// Coincidence density convolved with the Gaussian jitter.
pub fn hom_model(dt_ps: f64, p: &HomParams, pol: HomPolarization) -> f64 {
    let sigma = p.jitter_fwhm_ps * FWHM_TO_SIGMA;
    if sigma <= 0.0 {
        return hom_model_nc(dt_ps, p, pol);
    }
    let (side, center) = p.peak_weights();
    let d = p.delay_ps();
    let t1 = p.t1_ps;
    let sides = side * (laplace_convolved(dt_ps - d, t1, sigma) + laplace_convolved(dt_ps + d, t1, sigma));
    let central = laplace_convolved(dt_ps, t1, sigma);
    match pol {
        HomPolarization::Cross => sides + center * central,
        HomPolarization::Co => {
            // L(x)·(1 − e^{−2|x|/T₂*}) = L_T1(x) − (τ'/T₁)·L_τ'(x)
            let tau = p.overlap_tau();
            sides + center * (central - tau / t1 * laplace_convolved(dt_ps, tau, sigma))
        }
    }
}

/// 1 − g∥(0)/g⊥(0) of the jitter-convolved model.
pub fn post_selected_indistinguishability(p: &HomParams) -> f64 {
    1.0 - hom_model(0.0, p, HomPolarization::Co) / hom_model(0.0, p, HomPolarization::Cross)
}

/// 1 − (central co area)/(central cross area) of the model, T₂*/(T₂* + 2T₁).
pub fn integrated_indistinguishability(p: &HomParams) -> f64 {
    p.overlap_tau() / p.t1_ps
}

/// Poisson-sampled co/cross histograms with `pairs` expected cross-polarized
/// coincidences in the whole central manifold.
pub fn synthetic_hom(p: &HomParams, bin_ps: f64, half_span_ps: f64, pairs: f64, seed: u64) -> Result<(Series, Series)> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (half_span_ps / bin_ps).floor() as i64;
    let x: Vec<f64> = (-n..=n).map(|k| k as f64 * bin_ps).collect();
    let mut draw = |pol| -> Vec<f64> {
        x.iter()
            .map(|&t| {
                let mean = pairs * hom_model(t, p, pol) * bin_ps;
                if mean > 0.0 { Poisson::new(mean).map_or(0.0, |d| d.sample(&mut rng)) } else { 0.0 }
            })
            .collect()
    };
    let co = draw(HomPolarization::Co);
    let cross = draw(HomPolarization::Cross);
    Ok((Series { x: x.clone(), y: co }, Series { x, y: cross }))
}

/// Fixed inputs of the HOM fit.
#[derive(Debug, Clone, Copy)]
pub struct HomFitSpec {
    pub t1_ps: f64,
    pub jitter_fwhm_ps: f64,
    pub delay_ns: f64,
    pub split_ratio: f64,
}

impl HomFitSpec {
    pub fn new(t1_ps: f64, jitter_fwhm_ps: f64) -> Self {
        HomFitSpec { t1_ps, jitter_fwhm_ps, delay_ns: 1.58, split_ratio: 0.5 }
    }

    fn params(&self, t2star_ps: f64) -> HomParams {
        HomParams {
            t1_ps: self.t1_ps,
            t2star_ps,
            jitter_fwhm_ps: self.jitter_fwhm_ps,
            rep_period_ns: 13.16,
            delay_ns: self.delay_ns,
            split_ratio: self.split_ratio,
        }
    }
}

/// Central-to-side area ratio of one histogram: central peak over the mean
/// of the two peaks at ±delay, with its Poisson relative variance.
fn manifold_ratio(h: &Series, delay_ps: f64) -> Result<(f64, f64)> {
    let half = delay_ps / 2.0;
    let c = h.sum_between(-half, half);
    let s = h.sum_between(-3.0 * half, -half) + h.sum_between(half, 3.0 * half);
    if !(c > 0.0 && s > 0.0) {
        return Err(Error::InsufficientStatistics("empty HOM peak".into()));
    }
    Ok((c / (s / 2.0), 1.0 / c + 1.0 / s))
}

/// Least-squares fit of co/cross histograms with T₂* the only shape
/// parameter. Peak amplitudes are profiled separately per histogram.
///
/// Reported: `t2star_ps`; `i_itgr` from the measured central-peak areas, each
/// normalized by its histogram's peaks at ±delay; `i_ps` from the fitted
/// jitter-convolved model at zero delay; `i_itgr_model`; `amp_co`, `amp_cross`.
pub fn fit_hom(co: &Series, cross: &Series, spec: &HomFitSpec) -> Result<FitResult> {
    spec.params(1.0).validate()?;
    let delay = spec.delay_ns * 1e3;
    let reach = 1.5 * delay;
    let co = co.window(-reach, reach);
    let cross = cross.window(-reach, reach);
    if cross.y.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InsufficientStatistics("cross-polarized histogram is empty".into()));
    }
    if co.len() < 4 {
        return Err(Error::InsufficientStatistics("co-polarized histogram is empty".into()));
    }
    let w_co: Vec<f64> = co.y.iter().map(|v| 1.0 / (v.max(0.0) + 1.0)).collect();
    let w_cross: Vec<f64> = cross.y.iter().map(|v| 1.0 / (v.max(0.0) + 1.0)).collect();
    let m_cross: Vec<f64> = cross.x.iter().map(|&x| hom_model(x, &spec.params(1.0), HomPolarization::Cross)).collect();
    let a_cross = linear_amplitude(&cross.y, &m_cross, &w_cross);
    let co_shape = |u: f64| -> Vec<f64> {
        let p = spec.params(u.exp());
        co.x.iter().map(|&x| hom_model(x, &p, HomPolarization::Co)).collect()
    };
    let objective = |x: &[f64]| -> f64 {
        let m = co_shape(x[0]);
        let a = linear_amplitude(&co.y, &m, &w_co);
        co.y.iter().zip(&m).zip(&w_co).map(|((y, m), w)| w * (y - a * m).powi(2)).sum()
    };
    let bounds = Bounds::new(vec![10f64.ln()], vec![1e6f64.ln()]);
    let starts: Vec<Vec<f64>> = [50.0f64, 150.0, 400.0, 1200.0, 4000.0].iter().map(|v| vec![v.ln()]).collect();
    let best = minimize(&objective, &starts, &bounds, &NelderMeadOptions::default())?;
    let u = best.x[0];
    let a_co = linear_amplitude(&co.y, &co_shape(u), &w_co);

    let n_co = co.len();
    let n = n_co + cross.len();
    let residuals = (n, |p: &[f64], out: &mut [f64]| {
        let m = co_shape(p[0]);
        for i in 0..n_co {
            out[i] = w_co[i].sqrt() * (co.y[i] - p[1] * m[i]);
        }
        for i in 0..cross.len() {
            out[n_co + i] = w_cross[i].sqrt() * (cross.y[i] - p[2] * m_cross[i]);
        }
    });
    let full_bounds = Bounds::new(
        vec![bounds.lower[0], f64::NEG_INFINITY, f64::NEG_INFINITY],
        vec![bounds.upper[0], f64::INFINITY, f64::INFINITY],
    );
    let x = [u, a_co, a_cross];
    let cov = covariance(&residuals, &x, &full_bounds, true);
    let sig = sigmas(cov.as_ref(), 3);
    let t2star = u.exp();
    let i_ps_at = |p: &[f64]| post_selected_indistinguishability(&spec.params(p[0].exp()));
    let i_model_at = |p: &[f64]| integrated_indistinguishability(&spec.params(p[0].exp()));

    let (r_co, v_co) = manifold_ratio(&co, delay)?;
    let (r_cross, v_cross) = manifold_ratio(&cross, delay)?;
    let ratio = r_co / r_cross;
    let i_itgr = 1.0 - ratio;

    let mut result = FitResult::new(&["t2star_ps"], &[t2star], &[t2star * sig[0]]);
    result.push("i_itgr", i_itgr, ratio * (v_co + v_cross).sqrt());
    result.push("i_ps", i_ps_at(&x), propagate(cov.as_ref(), &x, i_ps_at));
    result.push("i_itgr_model", i_model_at(&x), propagate(cov.as_ref(), &x, i_model_at));
    result.push("amp_co", a_co, sig[1]);
    result.push("amp_cross", a_cross, sig[2]);
    let mut sse = 0.0;
    let mut sy2 = 0.0;
    let m = co_shape(u);
    for i in 0..n_co {
        sse += (co.y[i] - a_co * m[i]).powi(2);
        sy2 += co.y[i].powi(2);
    }
    for i in 0..cross.len() {
        sse += (cross.y[i] - a_cross * m_cross[i]).powi(2);
        sy2 += cross.y[i].powi(2);
    }
    result.residual_norm = sse.sqrt();
    result.mse = sse / sy2;
    result.iterations = best.iterations;
    result.converged = best.converged;
    if t2star > 0.99 * bounds.upper[0].exp() {
        result.flags.push("t2star_at_upper_bound".into());
    }
    Ok(result)
}

/// Spread of HOM fit outputs under Poisson resampling of both histograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomBootstrap {
    pub t2star_sigma_ps: f64,
    pub i_ps_sigma: f64,
    pub i_itgr_sigma: f64,
    /// Resamples whose fit succeeded.
    pub resamples: usize,
}

/// Each bin is redrawn from a Poisson law with the observed count as mean and
/// the pair is refitted; resample `k` uses stream `k` of the seeded generator.
pub fn bootstrap_hom(co: &Series, cross: &Series, spec: &HomFitSpec, opts: &BootstrapOptions) -> Result<HomBootstrap> {
    if opts.resamples < 2 {
        return invalid("bootstrap needs at least two resamples");
    }
    let redraw = |s: &Series, rng: &mut ChaCha8Rng| Series {
        x: s.x.clone(),
        y: s.y.iter().map(|&v| if v > 0.0 { Poisson::new(v).map_or(0.0, |d| d.sample(rng)) } else { 0.0 }).collect(),
    };
    let mut samples = Vec::with_capacity(opts.resamples);
    for k in 0..opts.resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(k as u64);
        let (c, x) = (redraw(co, &mut rng), redraw(cross, &mut rng));
        match fit_hom(&c, &x, spec) {
            Ok(f) => samples.push([f.value("t2star_ps"), f.value("i_ps"), f.value("i_itgr")]),
            Err(Error::NonConvergence { .. }) | Err(Error::InsufficientStatistics(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if samples.len() < 2 {
        return Err(Error::InsufficientStatistics("fewer than two bootstrap fits succeeded".into()));
    }
    let sd = |j: usize| {
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
        (samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(HomBootstrap { t2star_sigma_ps: sd(0), i_ps_sigma: sd(1), i_itgr_sigma: sd(2), resamples: samples.len() })
}

/// Michelson visibility model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MichelsonParams {
    pub v0: f64,
    /// Exponential (Lorentzian line) scale; infinity disables the factor.
    pub tau_l_ps: f64,
    /// Gaussian line scale; infinity disables the factor.
    pub tau_g_ps: f64,
    /// Beat components (amplitude, angular frequency in rad/ps).
    #[serde(default)]
    pub beats: Vec<(f64, f64)>,
}

impl MichelsonParams {
    pub fn new(v0: f64, tau_l_ps: f64, tau_g_ps: f64) -> Self {
        MichelsonParams { v0, tau_l_ps, tau_g_ps, beats: Vec::new() }
    }

    fn envelope(&self, dt: f64) -> f64 {
        let l = if self.tau_l_ps.is_finite() { dt.abs() / self.tau_l_ps } else { 0.0 };
        let g = if self.tau_g_ps.is_finite() { (dt / self.tau_g_ps).powi(2) } else { 0.0 };
        (-l - g).exp()
    }

    fn beat_factor(&self, dt: f64) -> f64 {
        if self.beats.is_empty() {
            return 1.0;
        }
        let norm: Complex64 = self.beats.iter().map(|&(a, _)| Complex64::new(a, 0.0)).sum();
        let s: Complex64 = self.beats.iter().map(|&(a, w)| Complex64::from_polar(a, w * dt)).sum();
        if norm.norm() > 0.0 { s.norm() / norm.norm() } else { 0.0 }
    }

    /// Delay at which V/V₀ first reaches 1/e.
    pub fn t2_ps(&self) -> f64 {
        if self.beats.is_empty() {
            return t2_from_scales(self.tau_l_ps, self.tau_g_ps);
        }
        let target = (-1.0f64).exp();
        let ratio = |t: f64| self.envelope(t) * self.beat_factor(t);
        let upper = t2_from_scales(self.tau_l_ps, self.tau_g_ps);
        if !upper.is_finite() {
            return f64::INFINITY;
        }
        // Scan for the first crossing, then bisect.
        let step = upper / 2000.0;
        let mut lo = 0.0;
        let mut hi = upper;
        let mut t = 0.0;
        while t < upper {
            let next = t + step;
            if ratio(next) <= target {
                lo = t;
                hi = next;
                break;
            }
            t = next;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if ratio(mid) > target { lo = mid } else { hi = mid }
        }
        0.5 * (lo + hi)
    }
}

/// Solution of x/τ_L + x²/τ_G² = 1.
pub fn t2_from_scales(tau_l_ps: f64, tau_g_ps: f64) -> f64 {
    let l = if tau_l_ps.is_finite() { 1.0 / tau_l_ps } else { 0.0 };
    let g = if tau_g_ps.is_finite() { 1.0 / (tau_g_ps * tau_g_ps) } else { 0.0 };
    let denom = l + (l * l + 4.0 * g).sqrt();
    if denom > 0.0 { 2.0 / denom } else { f64::INFINITY }
}

/// V(Δt) = V₀·e^{−|Δt|/τ_L}·e^{−(Δt/τ_G)²}·|Σ a_k e^{iω_kΔt}| / |Σ a_k|.
pub fn michelson_model(dt_ps: f64, p: &MichelsonParams) -> f64 {
    p.v0 * p.envelope(dt_ps) * p.beat_factor(dt_ps)
}

/// Least-squares fit of V₀, τ_L and τ_G (beats held fixed). Internally the
/// fit runs in the rates 1/τ_L (1/ns) and 1/τ_G² (1/ns²), which are bounded
/// below by zero so that pure Lorentzian or Gaussian data are reachable.
pub fn fit_michelson(data: &Series, beats: &[(f64, f64)]) -> Result<FitResult> {
    if data.len() < 4 {
        return Err(Error::InsufficientStatistics("need at least four visibility points".into()));
    }
    let to_params = |x: &[f64]| MichelsonParams {
        v0: x[0],
        tau_l_ps: if x[1] > 0.0 { 1e3 / x[1] } else { f64::INFINITY },
        tau_g_ps: if x[2] > 0.0 { 1e3 / x[2].sqrt() } else { f64::INFINITY },
        beats: beats.to_vec(),
    };
    let n = data.len();
    let residuals = (n, |x: &[f64], out: &mut [f64]| {
        let p = to_params(x);
        for i in 0..n {
            out[i] = data.y[i] - michelson_model(data.x[i], &p);
        }
    });
    let objective = |x: &[f64]| -> f64 {
        let p = to_params(x);
        data.x.iter().zip(&data.y).map(|(&t, &v)| (v - michelson_model(t, &p)).powi(2)).sum()
    };
    let v_max = data.y.iter().cloned().fold(0.0, f64::max).max(1e-3);
    let bounds = Bounds::new(vec![0.0, 0.0, 0.0], vec![2.0 * v_max.max(0.5), 1e3, 1e6]);
    let span = data.x.iter().map(|t| t.abs()).fold(0.0, f64::max).max(1.0) * 1e-3;
    let starts = vec![
        vec![v_max, 1.0 / span, 0.0],
        vec![v_max, 0.0, 1.0 / (span * span)],
        vec![v_max, 0.5 / span, 0.5 / (span * span)],
        vec![v_max, 3.0 / span, 0.0],
        vec![v_max, 0.0, 5.0 / (span * span)],
    ];
    let best = minimize(&objective, &starts, &bounds, &NelderMeadOptions::default())?;
    let x = best.x.clone();
    let cov = covariance(&residuals, &x, &bounds, true);
    let sig = sigmas(cov.as_ref(), 3);
    let p = to_params(&x);
    let tau_sigma = |k: usize| -> f64 {
        match k {
            1 => propagate(cov.as_ref(), &x, |x| 1e3 / x[1]),
            _ => propagate(cov.as_ref(), &x, |x| 1e3 / x[2].sqrt()),
        }
    };
    let mut result = FitResult::new(&["v0"], &[p.v0], &[sig[0]]);
    result.push("tau_l_ps", p.tau_l_ps, if p.tau_l_ps.is_finite() { tau_sigma(1) } else { f64::NAN });
    result.push("tau_g_ps", p.tau_g_ps, if p.tau_g_ps.is_finite() { tau_sigma(2) } else { f64::NAN });
    let t2 = p.t2_ps();
    let t2_sigma = propagate(cov.as_ref(), &x, |x| to_params(x).t2_ps());
    result.push("t2_ps", t2, t2_sigma);
    let sy2: f64 = data.y.iter().map(|v| v * v).sum();
    result.residual_norm = best.fx.sqrt();
    result.mse = best.fx / sy2;
    result.iterations = best.iterations;
    result.converged = best.converged;
    Ok(result)
}

/// T₂ = (1/(2T₁) + 1/T₂*)⁻¹.
pub fn t2_indirect(t1_ps: f64, t2star_ps: f64) -> Result<f64> {
    if !(t1_ps > 0.0 && t2star_ps > 0.0) {
        return invalid("lifetime and dephasing time must be positive");
    }
    Ok(1.0 / (1.0 / (2.0 * t1_ps) + 1.0 / t2star_ps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtalonEffect {
    pub t2star_ps: f64,
    pub t2_ps: f64,
    pub transmission: f64,
}

/// Effect of a Lorentzian spectral filter of FWHM `bandwidth_ghz` on a
/// Lorentzian photon line. The filtered field correlation has integrated
/// coherence time T₂ + 1/(πΓ_f); that sum is reported as the effective T₂,
/// and the effective T₂* follows from it at fixed T₁ (infinite once the
/// sum reaches 2T₁). Transmission is Γ_f/(Γ_f + Γ_ph), Γ_ph = 1/(πT₂).
pub fn etalon_transform(t2star_ps: f64, t1_ps: f64, bandwidth_ghz: f64) -> Result<EtalonEffect> {
    if !(bandwidth_ghz > 0.0) {
        return invalid("etalon bandwidth must be positive");
    }
    let t2 = t2_indirect(t1_ps, t2star_ps)?;
    if bandwidth_ghz.is_infinite() {
        return Ok(EtalonEffect { t2star_ps, t2_ps: t2, transmission: 1.0 });
    }
    let gamma_f = bandwidth_ghz * 1e-3; // 1/ps
    let gamma_ph = 1.0 / (std::f64::consts::PI * t2);
    let t2_eff = t2 + 1.0 / (std::f64::consts::PI * gamma_f);
    let inv = 1.0 / t2_eff - 1.0 / (2.0 * t1_ps);
    let t2star_eff = if inv > 0.0 { 1.0 / inv } else { f64::INFINITY };
    Ok(EtalonEffect {
        t2star_ps: t2star_eff,
        t2_ps: t2_eff,
        transmission: (gamma_f / (gamma_f + gamma_ph)).min(1.0),
    })
}

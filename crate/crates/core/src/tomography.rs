//! Two-photon state reconstruction from 36-basis correlation matrices.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::correlator::{bin_index, CorrelationHistogram, CorrelationMatrix};
use crate::error::{invalid, Error, Result};
use crate::fit::{covariance, minimize, sigmas, Bounds, FitResult, NelderMeadOptions};
use crate::linalg::{eigh, from_eigen, CMat2, CMat4};
use crate::numeric::{convolve_onto, gaussian_kernel, FWHM_TO_SIGMA};
use crate::polarization::{
    max_bell_fidelity, negativity, Axis, Basis, DensityMatrix4, ProjectionCoefficients,
};

/// Values indexed `[xx basis][x basis]` by [`Basis::index`].
pub type BasisTable = [[f64; 6]; 6];

/// Histogram region used for the background floor: delays below this.
pub const BACKGROUND_BELOW_PS: f64 = -200.0;

fn slot(a: Basis, b: Basis) -> usize {
    a.index() * 6 + b.index()
}

fn basis_of_slot(s: usize) -> (Basis, Basis) {
    (Basis::ALL[s / 6], Basis::ALL[s % 6])
}

/// Detector pair seen by a basis pair under the standard nine-setting schedule.
pub fn default_channels(b_xx: Basis, b_x: Basis) -> (u8, u8) {
    let first = |b: Basis| matches!(b, Basis::H | Basis::D | Basis::R);
    (if first(b_xx) { 0 } else { 1 }, if first(b_x) { 2 } else { 3 })
}

/// Mapping from integer picosecond delays to output bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    /// Width of the recorded histogram bins.
    pub source_bin_ps: i64,
    /// Source bins merged per output bin.
    pub factor: i64,
    pub k_min: i64,
    pub n_bins: usize,
}

impl Binning {
    pub fn bin_ps(&self) -> i64 {
        self.source_bin_ps * self.factor
    }

    pub fn center(&self, i: usize) -> f64 {
        ((self.k_min + i as i64) * self.bin_ps()) as f64
    }

    pub fn bin_of_delay(&self, delay: i64) -> Option<usize> {
        let s = bin_index(delay, self.source_bin_ps);
        let k = (s + (self.factor - 1) / 2).div_euclid(self.factor) - self.k_min;
        (k >= 0 && (k as usize) < self.n_bins).then_some(k as usize)
    }

    /// Smallest and largest integer delay mapped into any output bin.
    fn delay_span(&self) -> (i64, i64) {
        let w = self.bin_ps();
        let lo = (self.k_min - 1) * w;
        let hi = (self.k_min + self.n_bins as i64 + 1) * w;
        (lo, hi)
    }
}

/// Per-basis-pair traces prepared for tomography: raw counts, a constant
/// background floor per bin, and an acquisition-time normalization.
#[derive(Debug, Clone)]
pub struct TomographyInput {
    pub binning: Binning,
    raw: Vec<Vec<f64>>,
    background: Vec<f64>,
    scale: Vec<f64>,
    channels: Vec<(u8, u8)>,
    resample: bool,
}

impl TomographyInput {
    /// Rebin a measured matrix to `bin_ps` and estimate background floors from
    /// delays below [`BACKGROUND_BELOW_PS`].
    pub fn from_matrix(m: &CorrelationMatrix, bin_ps: i64) -> Result<Self> {
        m.check_complete()?;
        let src = m.bin_ps();
        if bin_ps < src || bin_ps % src != 0 {
            return invalid(format!("tomography binning {bin_ps} ps must be a multiple of the histogram bin {src} ps"));
        }
        let factor = bin_ps / src;
        let reb = m.rebinned(factor as usize);
        let first = reb.get(Basis::H, Basis::H)?;
        let binning = Binning { source_bin_ps: src, factor, k_min: first.k_min, n_bins: first.len() };
        let mut raw = vec![Vec::new(); 36];
        let mut background = vec![0.0; 36];
        let mut scale = vec![1.0; 36];
        let mut channels = vec![(0, 2); 36];
        for a in Basis::ALL {
            for b in Basis::ALL {
                let h = reb.get(a, b)?;
                if h.k_min != binning.k_min || h.len() != binning.n_bins {
                    return invalid("all histograms in a matrix must share one delay range");
                }
                let s = slot(a, b);
                background[s] = background_floor(h, BACKGROUND_BELOW_PS);
                raw[s] = h.counts.iter().map(|&c| c as f64).collect();
                scale[s] = 1.0 / m.acquisition(a, b);
                channels[s] = (h.ch_a, h.ch_b);
            }
        }
        Ok(TomographyInput { binning, raw, background, scale, channels, resample: true })
    }

    /// Noise-free expected traces (no background, unit normalization).
    pub fn from_expected(traces: Vec<Vec<f64>>, binning: Binning, channels: Vec<(u8, u8)>) -> Result<Self> {
        if traces.len() != 36 || channels.len() != 36 || traces.iter().any(|t| t.len() != binning.n_bins) {
            return invalid("expected 36 traces spanning the binning");
        }
        Ok(TomographyInput {
            binning,
            raw: traces,
            background: vec![0.0; 36],
            scale: vec![1.0; 36],
            channels,
            resample: false,
        })
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.binning.n_bins).map(|i| self.binning.center(i)).collect()
    }

    pub fn channels(&self, a: Basis, b: Basis) -> (u8, u8) {
        self.channels[slot(a, b)]
    }

    pub fn background(&self, a: Basis, b: Basis) -> f64 {
        self.background[slot(a, b)]
    }

    /// Background-subtracted, acquisition-normalized trace.
    pub fn trace(&self, a: Basis, b: Basis) -> Vec<f64> {
        let s = slot(a, b);
        self.raw[s].iter().map(|&c| (c - self.background[s]) * self.scale[s]).collect()
    }

    fn raw_sums(&self, bins: &[usize]) -> [f64; 36] {
        let mut out = [0.0; 36];
        for (s, o) in out.iter_mut().enumerate() {
            *o = bins.iter().map(|&i| self.raw[s][i]).sum();
        }
        out
    }

    fn rates_from_raw(&self, raw: &[f64; 36], n_bins: usize) -> BasisTable {
        let mut t = [[0.0; 6]; 6];
        for (s, &r) in raw.iter().enumerate() {
            let (a, b) = basis_of_slot(s);
            t[a.index()][b.index()] = (r - self.background[s] * n_bins as f64).max(0.0) * self.scale[s];
        }
        t
    }

    /// Reconstruct the state from the summed content of `bins`.
    pub fn point(&self, bins: &[usize], opts: &BootstrapOptions, stream: u64) -> Result<TomographyPoint> {
        let raw = self.raw_sums(bins);
        let total: f64 = raw.iter().sum();
        let state = reconstruct(&self.rates_from_raw(&raw, bins.len()))?;
        let (fidelity, phase) = max_bell_fidelity(&state.rho);
        let mut sigma = f64::NAN;
        if self.resample && opts.resamples >= 2 && total > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(stream);
            let weights: Vec<f64> = raw.iter().map(|&r| r / total).collect();
            let mut values = Vec::with_capacity(opts.resamples);
            for _ in 0..opts.resamples {
                let draw = multinomial(&mut rng, total.round() as u64, &weights);
                let mut r = [0.0; 36];
                for (x, d) in r.iter_mut().zip(draw) {
                    *x = d as f64;
                }
                if let Ok(s) = reconstruct(&self.rates_from_raw(&r, bins.len())) {
                    values.push(s.negativity);
                }
            }
            if values.len() >= 2 {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
                sigma = var.sqrt();
            }
        }
        Ok(TomographyPoint {
            raw: state.raw,
            rho: state.rho,
            negativity: state.negativity,
            negativity_sigma: sigma,
            fidelity,
            fidelity_phase: phase,
            coincidences: total,
        })
    }

    pub fn bins_where(&self, pred: impl Fn(f64) -> bool) -> Vec<usize> {
        (0..self.binning.n_bins).filter(|&i| pred(self.binning.center(i))).collect()
    }
}

/// Mean counts per bin over bins centered below `below_ps`; zero if none.
pub fn background_floor(h: &CorrelationHistogram, below_ps: f64) -> f64 {
    let v: Vec<f64> = (0..h.len()).filter(|&i| h.center(i) < below_ps).map(|i| h.counts[i] as f64).collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn multinomial(rng: &mut ChaCha8Rng, n: u64, weights: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; weights.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (k, &w) in weights.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k == weights.len() - 1 {
            out[k] = left;
            break;
        }
        let p = if mass > 0.0 { (w / mass).clamp(0.0, 1.0) } else { 0.0 };
        let x = Binomial::new(left, p).map(|d| d.sample(rng)).unwrap_or(0);
        out[k] = x;
        left -= x;
        mass -= w;
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { resamples: 200, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TomographyPoint {
    /// Linear-inversion estimate before the physicality projection.
    pub raw: CMat4,
    pub rho: DensityMatrix4,
    pub negativity: f64,
    pub negativity_sigma: f64,
    pub fidelity: f64,
    pub fidelity_phase: f64,
    pub coincidences: f64,
}

struct Reconstruction {
    raw: CMat4,
    rho: DensityMatrix4,
    negativity: f64,
}

fn reconstruct(rates: &BasisTable) -> Result<Reconstruction> {
    let p = counts_to_probabilities(rates)?;
    let raw = linear_inversion(&p)?;
    let rho = project_physical(raw.matrix());
    let n = negativity(&rho)?;
    Ok(Reconstruction { raw: *raw.matrix(), rho, negativity: n })
}

/// Normalize rates within each complementary 2×2 group {b, b⊥} × {c, c⊥}.
pub fn counts_to_probabilities(rates: &BasisTable) -> Result<BasisTable> {
    let mut p = [[f64::NAN; 6]; 6];
    for ax in Axis::ALL {
        for bx in Axis::ALL {
            let (a0, a1) = ax.bases();
            let (b0, b1) = bx.bases();
            let group = [(a0, b0), (a0, b1), (a1, b0), (a1, b1)];
            let total: f64 = group.iter().map(|&(a, b)| rates[a.index()][b.index()]).sum();
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::InsufficientStatistics(format!(
                    "no counts in the {a0}/{a1} × {b0}/{b1} group"
                )));
            }
            for (a, b) in group {
                p[a.index()][b.index()] = rates[a.index()][b.index()] / total;
            }
        }
    }
    Ok(p)
}

/// Exact projection probabilities of a state, for building test inputs.
pub fn probabilities_of(rho: &DensityMatrix4) -> BasisTable {
    let mut p = [[0.0; 6]; 6];
    for a in Basis::ALL {
        for b in Basis::ALL {
            p[a.index()][b.index()] = rho.matrix().expectation(&a.product(b)).re;
        }
    }
    p
}

/// ρ = ¼ Σ S_ij σ_i ⊗ σ_j from projection probabilities in the three
/// mutually unbiased bases. Single-photon Stokes terms average the three
/// groups that contain them.
pub fn linear_inversion(p: &BasisTable) -> Result<DensityMatrix4> {
    for a in Basis::ALL {
        for b in Basis::ALL {
            if !p[a.index()][b.index()].is_finite() {
                return Err(Error::MissingBasisPair(a.to_string(), b.to_string()));
            }
        }
    }
    let mut s = [[0.0; 4]; 4];
    s[0][0] = 1.0;
    for ax in Axis::ALL {
        for bx in Axis::ALL {
            let (i, j) = (ax.pauli_index(), bx.pauli_index());
            let (a0, a1) = ax.bases();
            let (b0, b1) = bx.bases();
            let (mut corr, mut sa, mut sb) = (0.0, 0.0, 0.0);
            for a in [a0, a1] {
                for b in [b0, b1] {
                    let v = p[a.index()][b.index()];
                    corr += a.eigenvalue() * b.eigenvalue() * v;
                    sa += a.eigenvalue() * v;
                    sb += b.eigenvalue() * v;
                }
            }
            s[i][j] = corr;
            s[i][0] += sa / 3.0;
            s[0][j] += sb / 3.0;
        }
    }
    let mut m = CMat4::zeros();
    for (i, row) in s.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                m = m + CMat4::kron(&CMat2::pauli(i), &CMat2::pauli(j)).scale(0.25 * v);
            }
        }
    }
    DensityMatrix4::new(m)
}

/// Closest unit-trace positive semidefinite matrix in Frobenius norm:
/// negative eigenvalues are zeroed and their weight spread evenly over the
/// remaining ones, repeating until none is negative.
pub fn project_physical(m: &CMat4) -> DensityMatrix4 {
    let h = m.hermitian_part();
    let tr = h.trace().re;
    let h = if (tr - 1.0).abs() > 1e-15 && tr != 0.0 { h.scale(1.0 / tr) } else { h };
    let (vals, vecs) = eigh(&h);
    // eigh sorts ascending; walk from the smallest value upwards.
    let mut lam = vals;
    let mut carry = 0.0;
    let mut first_kept = 0;
    for k in 0..4 {
        let remaining = (4 - k) as f64;
        if lam[k] + carry / remaining < 0.0 {
            carry += lam[k];
            lam[k] = 0.0;
            first_kept = k + 1;
        } else {
            break;
        }
    }
    let kept = (4 - first_kept) as f64;
    for v in lam.iter_mut().skip(first_kept) {
        *v += carry / kept;
    }
    let out = from_eigen(&lam, &vecs).hermitian_part();
    let tr = out.trace().re;
    DensityMatrix4::new(out.scale(1.0 / tr)).expect("projection keeps a valid state")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NegativityPoint {
    pub x_ps: f64,
    pub negativity: f64,
    pub sigma: f64,
    pub fidelity: f64,
    pub coincidences: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NegativitySeries {
    pub points: Vec<NegativityPoint>,
    /// Abscissae dropped for lack of statistics.
    pub omitted: Vec<f64>,
}

impl NegativitySeries {
    pub fn max(&self) -> Option<&NegativityPoint> {
        self.points.iter().max_by(|a, b| a.negativity.total_cmp(&b.negativity))
    }

    fn collect(results: Vec<(f64, Result<TomographyPoint>)>) -> Result<Self> {
        let mut points = Vec::new();
        let mut omitted = Vec::new();
        for (x, r) in results {
            match r {
                Ok(p) => points.push(NegativityPoint {
                    x_ps: x,
                    negativity: p.negativity,
                    sigma: p.negativity_sigma,
                    fidelity: p.fidelity,
                    coincidences: p.coincidences,
                }),
                Err(Error::InsufficientStatistics(_)) => omitted.push(x),
                Err(e) => return Err(e),
            }
        }
        Ok(NegativitySeries { points, omitted })
    }
}

/// Per-bin tomography for bins centered in `[lo, hi]`.
pub fn negativity_vs_delay(
    input: &TomographyInput,
    range_ps: (f64, f64),
    opts: &BootstrapOptions,
) -> Result<NegativitySeries> {
    let bins = input.bins_where(|c| c >= range_ps.0 && c <= range_ps.1);
    let results = bins
        .par_iter()
        .map(|&i| (input.binning.center(i), input.point(&[i], opts, i as u64)))
        .collect();
    NegativitySeries::collect(results)
}

/// Tomography of all coincidences with |δτ| ≤ δt, for each δt.
pub fn negativity_vs_window(
    input: &TomographyInput,
    windows_ps: &[f64],
    opts: &BootstrapOptions,
) -> Result<NegativitySeries> {
    let results = windows_ps
        .par_iter()
        .enumerate()
        .map(|(k, &w)| {
            let bins = input.bins_where(|c| c.abs() <= w);
            let r = if bins.is_empty() {
                Err(Error::InsufficientStatistics(format!("no bins within ±{w} ps")))
            } else {
                input.point(&bins, opts, k as u64)
            };
            (w, r)
        })
        .collect();
    NegativitySeries::collect(results)
}

pub fn density_matrix_json(rho: &CMat4) -> Value {
    let re: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| rho[(i, j)].re).collect()).collect();
    let im: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| rho[(i, j)].im).collect()).collect();
    json!({ "real": re, "imag": im })
}

/// Precessing-cascade trace model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeModel {
    pub precession_period_ns: f64,
    pub t1_x_ps: f64,
    pub t2star_x_ps: f64,
    pub dphi_rad: f64,
}

/// Jitter-convolved decay `E` and complex precession term `C` per bin, so
/// that a basis-pair trace is α·E + Re(β·e^{−iδφ}·C).
#[derive(Debug, Clone)]
pub struct ModelBasis {
    pub decay: Vec<f64>,
    pub precession: Vec<Complex64>,
}

pub fn model_basis(model: &CascadeModel, jitter_fwhm_ps: f64, binning: &Binning) -> ModelBasis {
    let kernel = gaussian_kernel(jitter_fwhm_ps * FWHM_TO_SIGMA);
    let (d_lo, d_hi) = binning.delay_span();
    let reach = -kernel.0;
    let sig_hi = d_hi + reach;
    let n_sig = (sig_hi.max(0) + 1) as usize;
    let inv_t1 = 1.0 / model.t1_x_ps;
    let omega = 2.0 * std::f64::consts::PI / (model.precession_period_ns * 1e3);
    let dephasing = if model.t2star_x_ps.is_finite() { 1.0 / model.t2star_x_ps } else { 0.0 };
    let kappa = Complex64::new(inv_t1 + dephasing, omega);
    // Probability mass of each rounding cell [d − ½, d + ½) of the true delay.
    let mut e = vec![0.0; n_sig];
    let mut c = vec![Complex64::new(0.0, 0.0); n_sig];
    for d in 0..n_sig {
        let a = (d as f64 - 0.5).max(0.0);
        let b = d as f64 + 0.5;
        e[d] = (-a * inv_t1).exp() - (-b * inv_t1).exp();
        c[d] = ((-kappa * a).exp() - (-kappa * b).exp()) * inv_t1 / kappa;
    }
    let out_len = (d_hi - d_lo + 1) as usize;
    let ej = convolve_onto(&e, 0, &kernel, d_lo, out_len);
    let cj = convolve_onto(&c, 0, &kernel, d_lo, out_len);
    let mut decay = vec![0.0; binning.n_bins];
    let mut precession = vec![Complex64::new(0.0, 0.0); binning.n_bins];
    for (n, (ev, cv)) in ej.iter().zip(&cj).enumerate() {
        if let Some(k) = binning.bin_of_delay(d_lo + n as i64) {
            decay[k] += ev;
            precession[k] += cv;
        }
    }
    ModelBasis { decay, precession }
}

/// Expected traces (per unit pair number) for all 36 basis pairs.
pub fn model_traces(
    model: &CascadeModel,
    channel_jitter_fwhm_ps: &[f64; 4],
    binning: &Binning,
    channels: &[(u8, u8)],
) -> Vec<Vec<f64>> {
    let mut cache: std::collections::BTreeMap<(u8, u8), ModelBasis> = Default::default();
    let twist = Complex64::from_polar(1.0, -model.dphi_rad);
    (0..36)
        .map(|s| {
            let (a, b) = basis_of_slot(s);
            let ch = channels[s];
            let mb = cache.entry(ch).or_insert_with(|| {
                let ja = channel_jitter_fwhm_ps[ch.0 as usize];
                let jb = channel_jitter_fwhm_ps[ch.1 as usize];
                model_basis(model, (ja * ja + jb * jb).sqrt(), binning)
            });
            let pc = ProjectionCoefficients::new(a, b);
            mb.decay
                .iter()
                .zip(&mb.precession)
                .map(|(&e, &c)| pc.diag * e + (pc.cross * twist * c).re)
                .collect()
        })
        .collect()
}

/// Poisson-sampled 1 ps histograms drawn from the trace model, with
/// `pairs_per_basis` expected coincidences per basis pair and a flat
/// `background_per_bin`. Each entry carries unit acquisition time.
pub fn synthetic_matrix(
    model: &CascadeModel,
    channel_jitter_fwhm_ps: &[f64; 4],
    window_ps: i64,
    pairs_per_basis: f64,
    background_per_bin: f64,
    seed: u64,
) -> CorrelationMatrix {
    use rand_distr::Poisson;
    let binning = Binning { source_bin_ps: 1, factor: 1, k_min: -window_ps, n_bins: (2 * window_ps + 1) as usize };
    let channels: Vec<(u8, u8)> = (0..36).map(|s| {
        let (a, b) = basis_of_slot(s);
        default_channels(a, b)
    }).collect();
    let traces = model_traces(model, channel_jitter_fwhm_ps, &binning, &channels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = CorrelationMatrix { entries: Default::default(), acquisition_s: Default::default() };
    for (s, t) in traces.iter().enumerate() {
        let (a, b) = basis_of_slot(s);
        let counts = t
            .iter()
            .map(|&v| {
                let mean = v * pairs_per_basis + background_per_bin;
                if mean > 0.0 {
                    Poisson::new(mean).map(|d| d.sample(&mut rng) as u64).unwrap_or(0)
                } else {
                    0
                }
            })
            .collect();
        m.entries.insert(
            (a, b),
            CorrelationHistogram {
                bin_ps: 1,
                k_min: binning.k_min,
                counts,
                ch_a: channels[s].0,
                ch_b: channels[s].1,
                bases: Some((a, b)),
                mode: crate::correlator::CorrelationMode::TtrSifted,
            },
        );
        m.acquisition_s.insert((a, b), 1.0);
    }
    m
}

/// Fixed inputs of the phase-offset fit.
#[derive(Debug, Clone, Copy)]
pub struct CascadeFitSpec {
    pub precession_period_ns: f64,
    pub t1_x_ps: f64,
    pub t2star_x_ps: f64,
    pub channel_jitter_fwhm_ps: [f64; 4],
    /// Delay range entering the fit.
    pub range_ps: (f64, f64),
}

/// Simultaneous least-squares fit of all 36 traces with the phase offset as
/// the only shape parameter and one shared amplitude. Reports `dphi_deg`,
/// `amplitude`, and `mse` = Σ(y − m)²/Σy².
pub fn fit_cascade_model(input: &TomographyInput, spec: &CascadeFitSpec) -> Result<FitResult> {
    let bins = input.bins_where(|c| c >= spec.range_ps.0 && c <= spec.range_ps.1);
    if bins.len() < 3 {
        return invalid("fit range covers fewer than three bins");
    }
    let model = CascadeModel {
        precession_period_ns: spec.precession_period_ns,
        t1_x_ps: spec.t1_x_ps,
        t2star_x_ps: spec.t2star_x_ps,
        dphi_rad: 0.0,
    };
    let traces_zero = model_traces(&model, &spec.channel_jitter_fwhm_ps, &input.binning, &input.channels);
    let traces_quarter = model_traces(
        &CascadeModel { dphi_rad: std::f64::consts::FRAC_PI_2, ..model },
        &spec.channel_jitter_fwhm_ps,
        &input.binning,
        &input.channels,
    );
    // Trace(δφ) = diag + cos δφ·R + sin δφ·I; recover the pieces from δφ = 0, π/2
    // and the diagonal part, which does not depend on δφ.
    let mut y = Vec::new();
    let mut diag = Vec::new();
    let mut re = Vec::new();
    let mut im = Vec::new();
    for s in 0..36 {
        let (a, b) = basis_of_slot(s);
        let data = input.trace(a, b);
        let pc = ProjectionCoefficients::new(a, b);
        let mb_decay: Vec<f64> = {
            let ch = input.channels[s];
            let ja = spec.channel_jitter_fwhm_ps[ch.0 as usize];
            let jb = spec.channel_jitter_fwhm_ps[ch.1 as usize];
            model_basis(&model, (ja * ja + jb * jb).sqrt(), &input.binning).decay
        };
        for &i in &bins {
            let d = pc.diag * mb_decay[i];
            y.push(data[i]);
            diag.push(d);
            re.push(traces_zero[s][i] - d);
            im.push(traces_quarter[s][i] - d);
        }
    }
    let shape = |phi_deg: f64| -> Vec<f64> {
        let (sn, cs) = phi_deg.to_radians().sin_cos();
        (0..y.len()).map(|k| diag[k] + cs * re[k] + sn * im[k]).collect()
    };
    let amplitude_for = |m: &[f64]| -> f64 {
        let (mut smm, mut smy) = (0.0, 0.0);
        for k in 0..y.len() {
            smm += m[k] * m[k];
            smy += m[k] * y[k];
        }
        if smm > 0.0 { smy / smm } else { 0.0 }
    };
    let objective = |x: &[f64]| -> f64 {
        let m = shape(x[0]);
        let a = amplitude_for(&m);
        m.iter().zip(&y).map(|(mi, yi)| (yi - a * mi).powi(2)).sum()
    };
    let bounds = Bounds::new(vec![-180.0], vec![180.0]);
    let starts: Vec<Vec<f64>> = [-144.0, -72.0, 0.0, 72.0, 144.0].iter().map(|&v| vec![v]).collect();
    let opts = NelderMeadOptions::default();
    let best = minimize(&objective, &starts, &bounds, &opts)?;
    let phi = best.x[0];
    let amp = amplitude_for(&shape(phi));
    let sy2: f64 = y.iter().map(|v| v * v).sum();

    let n = y.len();
    let residuals = (n, |p: &[f64], out: &mut [f64]| {
        let m = shape(p[0]);
        for k in 0..n {
            out[k] = y[k] - p[1] * m[k];
        }
    });
    let full_bounds = Bounds::new(vec![-180.0, f64::NEG_INFINITY], vec![180.0, f64::INFINITY]);
    let cov = covariance(&residuals, &[phi, amp], &full_bounds, true);
    let sig = sigmas(cov.as_ref(), 2);
    let mut result = FitResult::new(&["dphi_deg", "amplitude"], &[phi, amp], &sig);
    result.residual_norm = best.fx.sqrt();
    result.mse = if sy2 > 0.0 { best.fx / sy2 } else { f64::NAN };
    result.iterations = best.iterations;
    Ok(result)
}

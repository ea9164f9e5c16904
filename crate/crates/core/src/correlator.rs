//! Coincidence counting over sorted time-tag streams.
//!
//! Delays are δτ = t_b − t_a. Bin `k` is centered at `k·bin_ps`; a delay maps
//! to its nearest bin center, ties rounding away from zero, which keeps
//! swapped channel pairs exact mirror images of each other.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{invert, minimize, Bounds, NelderMeadOptions, Series};
use crate::numeric::ex_gaussian;
use crate::polarization::Basis;
use crate::record::{ensure_sorted, PeriodGrid, TimeTagRecord};
use crate::sim::{BasisSchedule, CHANNEL_COUNT, XX_CHANNELS, X_CHANNELS};

/// Default offset of sifting-period boundaries ahead of each laser pulse, so
/// that early-jittered detections stay with their own pulse.
pub const SIFT_GUARD_PS: f64 = 100.0;

const PAR_CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// Only pairs whose tags share an excitation period.
    TtrSifted,
    /// Every pair within the window (all stops), as hardware start-stop
    /// histogramming would record them.
    Histogram,
}

impl std::str::FromStr for CorrelationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ttr" | "ttr_sifted" => Ok(CorrelationMode::TtrSifted),
            "histogram" => Ok(CorrelationMode::Histogram),
            other => Err(Error::InvalidParams(format!("unknown correlation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelatorConfig {
    pub bin_ps: i64,
    pub window_ps: i64,
    pub mode: CorrelationMode,
    /// Period grid used by sifting.
    pub grid: PeriodGrid,
}

impl CorrelatorConfig {
    /// Configuration for pulses at `k·T_rep`, sifting boundaries placed
    /// [`SIFT_GUARD_PS`] before each pulse.
    pub fn new(bin_ps: i64, window_ps: i64, mode: CorrelationMode, rep_rate_ghz: f64) -> Self {
        CorrelatorConfig {
            bin_ps,
            window_ps,
            mode,
            grid: PeriodGrid::from_rate_ghz(rep_rate_ghz).shifted_earlier(SIFT_GUARD_PS),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_ps <= 0 {
            return invalid("bin width must be positive");
        }
        if self.window_ps < self.bin_ps {
            return invalid("window must be at least one bin wide");
        }
        if !(self.grid.period_ps > 0.0) {
            return invalid("repetition period must be positive");
        }
        Ok(())
    }

    fn half_bins(&self) -> i64 {
        self.window_ps / self.bin_ps
    }

    /// Bound on |δτ| beyond which no delay lands in an accepted bin.
    fn reach(&self) -> i64 {
        (self.half_bins() + 1) * self.bin_ps
    }
}

/// Bin index of a delay for bins centered at multiples of `w`.
#[inline]
pub fn bin_index(delay: i64, w: i64) -> i64 {
    if delay >= 0 {
        (2 * delay + w).div_euclid(2 * w)
    } else {
        -((-2 * delay + w).div_euclid(2 * w))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_ps: i64,
    /// Index of the first bin; bin `i` is centered at `(k_min + i)·bin_ps`.
    pub k_min: i64,
    pub counts: Vec<u64>,
    pub ch_a: u8,
    pub ch_b: u8,
    pub bases: Option<(Basis, Basis)>,
    pub mode: CorrelationMode,
}

impl CorrelationHistogram {
    pub fn empty(ch_a: u8, ch_b: u8, cfg: &CorrelatorConfig) -> Self {
        let k = cfg.half_bins();
        CorrelationHistogram {
            bin_ps: cfg.bin_ps,
            k_min: -k,
            counts: vec![0; (2 * k + 1) as usize],
            ch_a,
            ch_b,
            bases: None,
            mode: cfg.mode,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn center(&self, i: usize) -> f64 {
        ((self.k_min + i as i64) * self.bin_ps) as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Bin centers and counts as a plain curve.
    pub fn to_series(&self) -> Series {
        Series { x: self.centers(), y: self.counts.iter().map(|&c| c as f64).collect() }
    }

    /// Rebuild a histogram from bin centers and counts, e.g. read back from
    /// CSV. Centers must be consecutive multiples of one bin width.
    pub fn from_series(s: &Series, ch_a: u8, ch_b: u8, mode: CorrelationMode) -> Result<Self> {
        if s.len() < 2 {
            return invalid("histogram needs at least two bins");
        }
        let w = (s.x[1] - s.x[0]).round() as i64;
        if w <= 0 {
            return invalid("bin centers must increase");
        }
        let k_min = (s.x[0] / w as f64).round() as i64;
        let mut counts = Vec::with_capacity(s.len());
        for (i, (&x, &y)) in s.x.iter().zip(&s.y).enumerate() {
            if (x - ((k_min + i as i64) * w) as f64).abs() > 1e-6 {
                return invalid(format!("bin center {x} is off the {w} ps grid"));
            }
            if y < 0.0 || y.fract() != 0.0 {
                return invalid(format!("count {y} is not a non-negative integer"));
            }
            counts.push(y as u64);
        }
        Ok(CorrelationHistogram { bin_ps: w, k_min, counts, ch_a, ch_b, bases: None, mode })
    }

    /// Delay range covered, `[lower edge, upper edge]`.
    pub fn range(&self) -> (f64, f64) {
        let half = self.bin_ps as f64 / 2.0;
        (self.center(0) - half, self.center(self.len() - 1) + half)
    }

    /// Counts of the bin containing `delay`, if it is in range.
    pub fn at(&self, delay: i64) -> Option<u64> {
        let i = bin_index(delay, self.bin_ps) - self.k_min;
        (i >= 0 && (i as usize) < self.len()).then(|| self.counts[i as usize])
    }

    pub fn add(&mut self, other: &CorrelationHistogram) {
        assert_eq!((self.bin_ps, self.k_min, self.len()), (other.bin_ps, other.k_min, other.len()));
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Histogram with delays negated, as if the channels were swapped.
    pub fn mirrored(&self) -> Self {
        let mut counts = self.counts.clone();
        counts.reverse();
        CorrelationHistogram {
            k_min: -(self.k_min + self.len() as i64 - 1),
            counts,
            ch_a: self.ch_b,
            ch_b: self.ch_a,
            bases: self.bases.map(|(a, b)| (b, a)),
            ..self.clone()
        }
    }

    /// Sum of bins whose centers lie in `[lo, hi)`.
    pub fn area(&self, lo: f64, hi: f64) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let c = self.center(*i);
                c >= lo && c < hi
            })
            .map(|(_, &c)| c)
            .sum()
    }

    /// Merge groups of `factor` adjacent bins.
    ///
    /// Bin `k` of the result collects source bins `k·factor + j` for
    /// `j ∈ [−⌊(factor−1)/2⌋, ⌈(factor−1)/2⌉]`, so rebinned bin zero is built
    /// from source bins around zero.
    pub fn rebinned(&self, factor: usize) -> Self {
        let f = factor.max(1) as i64;
        if f == 1 {
            return self.clone();
        }
        let lo = (f - 1) / 2;
        let k_of = |src: i64| (src + lo).div_euclid(f);
        let k_first = k_of(self.k_min);
        let k_last = k_of(self.k_min + self.len() as i64 - 1);
        let mut counts = vec![0u64; (k_last - k_first + 1) as usize];
        for (i, &c) in self.counts.iter().enumerate() {
            counts[(k_of(self.k_min + i as i64) - k_first) as usize] += c;
        }
        CorrelationHistogram { bin_ps: self.bin_ps * f, k_min: k_first, counts, ..self.clone() }
    }
}

struct Accumulator<'a> {
    cfg: &'a CorrelatorConfig,
    k: i64,
    reach: i64,
}

impl<'a> Accumulator<'a> {
    fn new(cfg: &'a CorrelatorConfig) -> Self {
        Accumulator { cfg, k: cfg.half_bins(), reach: cfg.reach() }
    }

    #[inline]
    fn record(&self, counts: &mut [u64], ta: i64, tb: i64) {
        let idx = bin_index(tb - ta, self.cfg.bin_ps);
        if idx.abs() > self.k {
            return;
        }
        if self.cfg.mode == CorrelationMode::TtrSifted && self.cfg.grid.index(ta) != self.cfg.grid.index(tb) {
            return;
        }
        counts[(idx + self.k) as usize] += 1;
    }

    /// Pairs of every `a` tag with every `b` tag in reach. With `self_offset`
    /// set, `a` is the sub-slice of `b` starting there and identical elements
    /// are not paired with themselves.
    fn sweep(&self, counts: &mut [u64], a: &[i64], b: &[i64], self_offset: Option<usize>) {
        if a.is_empty() || b.is_empty() {
            return;
        }
        let mut lo = b.partition_point(|&t| t < a[0] - self.reach);
        for (i, &ta) in a.iter().enumerate() {
            while lo < b.len() && b[lo] < ta - self.reach {
                lo += 1;
            }
            let mut j = lo;
            while j < b.len() && b[j] <= ta + self.reach {
                if self_offset.is_none_or(|off| off + i != j) {
                    self.record(counts, ta, b[j]);
                }
                j += 1;
            }
        }
    }
}

fn check_channel(ch: u8) -> Result<()> {
    if ch as usize >= CHANNEL_COUNT {
        return Err(Error::UnknownChannel { channel: ch, channel_count: CHANNEL_COUNT as u32 });
    }
    Ok(())
}

fn timestamps(records: &[TimeTagRecord], ch: u8) -> Vec<i64> {
    crate::record::channel_timestamps(records, ch)
}

/// Correlate two timestamp lists (already sorted).
pub fn correlate_timestamps(
    a: &[i64],
    b: &[i64],
    auto: bool,
    cfg: &CorrelatorConfig,
) -> Vec<u64> {
    let acc = Accumulator::new(cfg);
    let nbins = (2 * acc.k + 1) as usize;
    a.par_chunks(PAR_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut counts = vec![0u64; nbins];
            acc.sweep(&mut counts, chunk, b, auto.then_some(c * PAR_CHUNK));
            counts
        })
        .reduce(
            || vec![0u64; nbins],
            |mut x, y| {
                for (p, q) in x.iter_mut().zip(&y) {
                    *p += q;
                }
                x
            },
        )
}

/// Histogram of δτ = t_b − t_a between channels `ch_a` and `ch_b`.
/// Sync records are ignored.
pub fn cross_correlate(
    records: &[TimeTagRecord],
    ch_a: u8,
    ch_b: u8,
    cfg: &CorrelatorConfig,
) -> Result<CorrelationHistogram> {
    cfg.validate()?;
    check_channel(ch_a)?;
    check_channel(ch_b)?;
    ensure_sorted(records)?;
    let a = timestamps(records, ch_a);
    let b = if ch_a == ch_b { a.clone() } else { timestamps(records, ch_b) };
    let mut h = CorrelationHistogram::empty(ch_a, ch_b, cfg);
    h.counts = correlate_timestamps(&a, &b, ch_a == ch_b, cfg);
    Ok(h)
}

/// Incremental correlator for streams delivered in chunks. Memory is bounded
/// by the number of tags inside one correlation window.
pub struct StreamingCorrelator {
    cfg: CorrelatorConfig,
    pairs: Vec<(u8, u8)>,
    hists: Vec<CorrelationHistogram>,
    recent: [VecDeque<i64>; CHANNEL_COUNT],
    last_ts: u64,
    seen: usize,
}

impl StreamingCorrelator {
    pub fn new(pairs: &[(u8, u8)], cfg: CorrelatorConfig) -> Result<Self> {
        cfg.validate()?;
        for &(a, b) in pairs {
            check_channel(a)?;
            check_channel(b)?;
        }
        Ok(StreamingCorrelator {
            hists: pairs.iter().map(|&(a, b)| CorrelationHistogram::empty(a, b, &cfg)).collect(),
            pairs: pairs.to_vec(),
            cfg,
            recent: Default::default(),
            last_ts: 0,
            seen: 0,
        })
    }

    pub fn feed(&mut self, chunk: &[TimeTagRecord]) -> Result<()> {
        let acc = Accumulator::new(&self.cfg);
        for r in chunk {
            if r.timestamp_ps < self.last_ts {
                return Err(Error::Unsorted { index: self.seen });
            }
            self.last_ts = r.timestamp_ps;
            self.seen += 1;
            if r.is_sync() {
                continue;
            }
            check_channel(r.channel)?;
            let t = r.timestamp_ps as i64;
            for q in self.recent.iter_mut() {
                while q.front().is_some_and(|&old| old < t - acc.reach) {
                    q.pop_front();
                }
            }
            for (p, &(a, b)) in self.pairs.iter().enumerate() {
                let counts = &mut self.hists[p].counts;
                // Pair the new tag with earlier tags only; each pair is seen once.
                if r.channel == b {
                    for &ta in &self.recent[a as usize] {
                        acc.record(counts, ta, t);
                    }
                }
                if r.channel == a {
                    for &tb in &self.recent[b as usize] {
                        acc.record(counts, t, tb);
                    }
                }
            }
            self.recent[r.channel as usize].push_back(t);
        }
        Ok(())
    }

    pub fn finish(self) -> Vec<CorrelationHistogram> {
        self.hists
    }
}

/// Integrated counts of the peak belonging to period offset `n`, i.e. delays
/// in `[n·T − T/2, n·T + T/2)`.
pub fn period_peak_area(h: &CorrelationHistogram, period_ps: f64, n: i64) -> u64 {
    let c = n as f64 * period_ps;
    h.area(c - period_ps / 2.0, c + period_ps / 2.0)
}

/// Period offsets whose full peak window lies inside the histogram range.
pub fn complete_peaks(h: &CorrelationHistogram, period_ps: f64) -> Vec<i64> {
    let (lo, hi) = h.range();
    let n_max = ((hi - period_ps / 2.0) / period_ps).floor() as i64;
    let n_min = ((lo + period_ps / 2.0) / period_ps).ceil() as i64;
    (n_min..=n_max).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct G2Zero {
    pub g2: f64,
    /// 1 − g², clamped to [0, 1].
    pub purity: f64,
    /// Overlap-corrected area of the zero-delay peak.
    pub central_area: f64,
    pub mean_side_area: f64,
    pub side_peaks: usize,
    /// Poisson uncertainty of g² from the central window count.
    pub g2_sigma: f64,
    /// Fraction of a peak's area falling outside its own period window.
    pub leakage: f64,
}

/// Farthest side-peak offset used to learn the peak shape.
const SHAPE_PEAKS: i64 = 6;

/// Above this leakage the peaks are not resolved and window counts are used
/// as they are.
pub const MAX_LEAKAGE: f64 = 0.2;

/// Symmetric peak shape of a pulsed auto-correlation: a two-sided decay of
/// time constant `tau` smeared by a Gaussian of width `sigma`.
fn peak_shape(x: f64, tau: f64, sigma: f64) -> f64 {
    0.5 * (ex_gaussian(x, tau, sigma) + ex_gaussian(-x, tau, sigma))
}

/// Fractions of a unit peak landing in the windows 1, 2, 3 periods away.
fn window_leakage(tau: f64, sigma: f64, period: f64) -> [f64; 3] {
    let step = 0.5;
    let n = (3.5 * period / step).ceil() as i64;
    let mut total = 0.0;
    let mut out = [0.0; 3];
    for i in -n..n {
        let x = (i as f64 + 0.5) * step;
        let v = peak_shape(x, tau, sigma) * step;
        total += v;
        let k = (x.abs() / period + 0.5).floor() as usize;
        if (1..=3).contains(&k) {
            out[k - 1] += v / 2.0;
        }
    }
    out.map(|v| v / total)
}

/// Fit the common peak shape on side windows 2 ≤ |n| ≤ [`SHAPE_PEAKS`], each
/// peak scaled by its own window count, and return the window leakage.
fn fitted_leakage(h: &CorrelationHistogram, period: f64, windows: &BTreeMap<i64, f64>) -> Option<[f64; 3]> {
    let (&n_lo, &n_hi) = (windows.keys().next()?, windows.keys().next_back()?);
    let w_at = |m: i64| windows[&m.clamp(n_lo, n_hi)];
    let mut xs = Vec::new();
    let mut ns = Vec::new();
    let mut ys = Vec::new();
    for i in 0..h.len() {
        let x = h.center(i);
        let n = (x / period).round() as i64;
        if n.abs() >= 2 && n.abs() <= SHAPE_PEAKS && windows.contains_key(&n) {
            xs.push(x);
            ns.push(n);
            ys.push(h.counts[i] as f64);
        }
    }
    if xs.len() < 20 {
        return None;
    }
    let bin = h.bin_ps as f64;
    let model = |p: &[f64]| -> Vec<f64> {
        xs.iter()
            .zip(&ns)
            .map(|(&x, &n)| (n - 2..=n + 2).map(|m| w_at(m) * peak_shape(x - m as f64 * period, p[0], p[1]) * bin).sum())
            .collect()
    };
    // Poisson deviance with the overall scale profiled; low-count tails
    // carry the leakage, where least squares would bias the decay short.
    let sy: f64 = ys.iter().sum();
    let objective = |p: &[f64]| -> f64 {
        let m = model(p);
        let a = sy / m.iter().sum::<f64>();
        ys.iter()
            .zip(&m)
            .map(|(&y, &m)| {
                let mu = (a * m).max(1e-300);
                mu - y + if y > 0.0 { y * (y / mu).ln() } else { 0.0 }
            })
            .sum()
    };
    let bounds = Bounds::new(vec![1.0, 1.0], vec![period, period / 4.0]);
    let starts: Vec<Vec<f64>> = [0.05, 0.15, 0.4].iter().map(|f| vec![f * period, 0.03 * period]).collect();
    let best = minimize(&objective, &starts, &bounds, &NelderMeadOptions::default()).ok()?;
    let leak = window_leakage(best.x[0], best.x[1], period);
    (2.0 * leak.iter().sum::<f64>() <= MAX_LEAKAGE).then_some(leak)
}

/// Zero-delay second-order correlation from a pulsed auto-correlation
/// histogram: central peak area over the mean side-peak area.
///
/// Window counts are corrected for the tails neighbouring peaks spill into
/// each window, using a peak shape fitted on the far side peaks. A flat
/// background is shared equally by all peaks, so it survives the correction.
/// Unresolved peaks (leakage above [`MAX_LEAKAGE`]) are taken uncorrected.
pub fn g2_zero(h: &CorrelationHistogram, period_ps: f64) -> Result<G2Zero> {
    let all = complete_peaks(h, period_ps);
    let sides: Vec<i64> = all.iter().copied().filter(|&n| n != 0).collect();
    if sides.is_empty() || !all.contains(&0) {
        return Err(Error::InsufficientStatistics("no complete side peaks in histogram range".into()));
    }
    let windows: BTreeMap<i64, f64> = all.iter().map(|&n| (n, period_peak_area(h, period_ps, n) as f64)).collect();
    if sides.iter().all(|n| windows[n] <= 0.0) {
        return Err(Error::InsufficientStatistics("side peaks are empty".into()));
    }
    let leak = fitted_leakage(h, period_ps, &windows).unwrap_or([0.0; 3]);
    let keep = 1.0 - 2.0 * leak.iter().sum::<f64>();
    // Window counts W = L·A with neighbours beyond the range taken equal to
    // the outermost peak; every row of L sums to one.
    let (n_lo, n_hi) = (all[0], all[all.len() - 1]);
    let dim = all.len();
    let mut l = vec![vec![0.0; dim]; dim];
    for (i, &n) in all.iter().enumerate() {
        l[i][i] += keep;
        for k in 1..=3i64 {
            for m in [n - k, n + k] {
                l[i][(m.clamp(n_lo, n_hi) - n_lo) as usize] += leak[k as usize - 1];
            }
        }
    }
    let inv = invert(&l).ok_or_else(|| Error::InsufficientStatistics("peak overlap too strong to separate".into()))?;
    let w: Vec<f64> = all.iter().map(|n| windows[n]).collect();
    let areas: BTreeMap<i64, f64> =
        all.iter().enumerate().map(|(i, &n)| (n, (0..dim).map(|j| inv[i][j] * w[j]).sum())).collect();
    let mean_side = sides.iter().map(|n| areas[n]).sum::<f64>() / sides.len() as f64;
    if !(mean_side > 0.0) {
        return Err(Error::InsufficientStatistics("side peaks are empty".into()));
    }
    let central = areas[&0];
    let g2 = central / mean_side;
    Ok(G2Zero {
        g2,
        purity: (1.0 - g2).clamp(0.0, 1.0),
        central_area: central,
        mean_side_area: mean_side,
        side_peaks: sides.len(),
        g2_sigma: windows[&0].max(1.0).sqrt() / mean_side,
        leakage: 1.0 - keep,
    })
}

/// Histogram of detection times folded onto the excitation period.
/// Bin `i` covers `[grid.origin + i·bin, grid.origin + (i+1)·bin)` modulo T.
pub fn pulse_phase_histogram(ts: &[i64], grid: &PeriodGrid, bin_ps: f64) -> Vec<u64> {
    let nbins = (grid.period_ps / bin_ps).ceil() as usize;
    let mut counts = vec![0u64; nbins];
    for &t in ts {
        let x = t as f64 - grid.origin_ps;
        let phase = x - (x / grid.period_ps).floor() * grid.period_ps;
        let i = ((phase / bin_ps) as usize).min(nbins - 1);
        counts[i] += 1;
    }
    counts
}

/// All 36 basis-pair histograms assembled from a stream measured under a
/// basis schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub entries: BTreeMap<(Basis, Basis), CorrelationHistogram>,
    /// Acquisition time (s) behind each entry.
    pub acquisition_s: BTreeMap<(Basis, Basis), f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, b_xx: Basis, b_x: Basis) -> Result<&CorrelationHistogram> {
        self.entries
            .get(&(b_xx, b_x))
            .ok_or_else(|| Error::MissingBasisPair(b_xx.to_string(), b_x.to_string()))
    }

    pub fn acquisition(&self, b_xx: Basis, b_x: Basis) -> f64 {
        self.acquisition_s.get(&(b_xx, b_x)).copied().unwrap_or(0.0)
    }

    pub fn check_complete(&self) -> Result<()> {
        for a in Basis::ALL {
            for b in Basis::ALL {
                self.get(a, b)?;
                if !(self.acquisition(a, b) > 0.0) {
                    return Err(Error::MissingBasisPair(a.to_string(), b.to_string()));
                }
            }
        }
        Ok(())
    }

    pub fn rebinned(&self, factor: usize) -> Self {
        CorrelationMatrix {
            entries: self.entries.iter().map(|(k, h)| (*k, h.rebinned(factor))).collect(),
            acquisition_s: self.acquisition_s.clone(),
        }
    }

    pub fn bin_ps(&self) -> i64 {
        self.entries.values().next().map(|h| h.bin_ps).unwrap_or(0)
    }
}

/// Correlate every XX channel against every X channel, segment by segment,
/// filing the coincidences under the bases active in that segment. A
/// coincidence belongs to the segment of its XX tag.
pub fn build_correlation_matrix(
    records: &[TimeTagRecord],
    schedule: &BasisSchedule,
    n_pulses: u64,
    cfg: &CorrelatorConfig,
) -> Result<CorrelationMatrix> {
    cfg.validate()?;
    schedule.validate()?;
    ensure_sorted(records)?;
    let period = cfg.grid.period_ps;
    let ts: Vec<Vec<i64>> = (0..CHANNEL_COUNT as u8).map(|c| timestamps(records, c)).collect();

    let mut entries = BTreeMap::new();
    let mut acquisition_s: BTreeMap<(Basis, Basis), f64> = BTreeMap::new();
    for (start, end, setting) in schedule.segments(n_pulses) {
        let t0 = (cfg.grid.origin_ps + start as f64 * period).ceil() as i64;
        let t1 = (cfg.grid.origin_ps + end as f64 * period).ceil() as i64;
        let duration = (end - start) as f64 * period * 1e-12;
        for &ca in &XX_CHANNELS {
            let a_all = &ts[ca as usize];
            let a = &a_all[a_all.partition_point(|&t| t < t0)..a_all.partition_point(|&t| t < t1)];
            for &cb in &X_CHANNELS {
                let key = (setting[ca as usize], setting[cb as usize]);
                *acquisition_s.entry(key).or_insert(0.0) += duration;
                let h = entries.entry(key).or_insert_with(|| {
                    let mut h = CorrelationHistogram::empty(ca, cb, cfg);
                    h.bases = Some(key);
                    h
                });
                let counts = correlate_timestamps(a, &ts[cb as usize], false, cfg);
                for (p, q) in h.counts.iter_mut().zip(&counts) {
                    *p += q;
                }
            }
        }
    }
    let m = CorrelationMatrix { entries, acquisition_s };
    m.check_complete()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(bin: i64, window: i64, mode: CorrelationMode) -> CorrelatorConfig {
        CorrelatorConfig::new(bin, window, mode, 1.0)
    }

    /// Reference: all ordered pairs, quadratic.
    fn brute(a: &[i64], b: &[i64], auto: bool, c: &CorrelatorConfig) -> Vec<u64> {
        let k = c.window_ps / c.bin_ps;
        let mut out = vec![0u64; (2 * k + 1) as usize];
        for (i, &ta) in a.iter().enumerate() {
            for (j, &tb) in b.iter().enumerate() {
                if auto && i == j {
                    continue;
                }
                let d = tb - ta;
                // nearest multiple of the bin width, ties away from zero
                let idx = ((d.abs() as f64 / c.bin_ps as f64) + 0.5).floor() as i64 * d.signum();
                if idx.abs() > k {
                    continue;
                }
                if c.mode == CorrelationMode::TtrSifted && c.grid.index(ta) != c.grid.index(tb) {
                    continue;
                }
                out[(idx + k) as usize] += 1;
            }
        }
        out
    }

    fn random_stream(seed: u64, n: usize, span: i64) -> Vec<TimeTagRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r: Vec<_> = (0..n)
            .map(|_| TimeTagRecord::photon(rng.random_range(0..span) as u64, rng.random_range(0..4)))
            .collect();
        r.sort();
        r
    }

    #[test]
    fn constructed_pair_lands_in_its_bin() {
        let r = [TimeTagRecord::photon(1000, 0), TimeTagRecord::photon(1100, 1)];
        let h = cross_correlate(&r, 0, 1, &cfg(1, 2000, CorrelationMode::Histogram)).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.at(100), Some(1));
    }

    #[test]
    fn rounding_is_symmetric() {
        assert_eq!(bin_index(4, 8), 1);
        assert_eq!(bin_index(-4, 8), -1);
        assert_eq!(bin_index(3, 8), 0);
        assert_eq!(bin_index(-3, 8), 0);
        assert_eq!(bin_index(11, 8), 1);
        assert_eq!(bin_index(12, 8), 2);
        assert_eq!(bin_index(0, 1), 0);
        assert_eq!(bin_index(-7, 1), -7);
    }

    #[test]
    fn matches_brute_force() {
        let r = random_stream(1, 3000, 2_000_000);
        for mode in [CorrelationMode::Histogram, CorrelationMode::TtrSifted] {
            for (ca, cb) in [(0u8, 2u8), (1, 1), (3, 0)] {
                let c = cfg(8, 2500, mode);
                let h = cross_correlate(&r, ca, cb, &c).unwrap();
                let a = timestamps(&r, ca);
                let b = timestamps(&r, cb);
                assert_eq!(h.counts, brute(&a, &b, ca == cb, &c), "{mode:?} {ca}{cb}");
            }
        }
    }

    #[test]
    fn sifted_is_subset_of_histogram() {
        let r = random_stream(3, 20_000, 5_000_000);
        let hs = cross_correlate(&r, 0, 1, &cfg(4, 3000, CorrelationMode::TtrSifted)).unwrap();
        let hh = cross_correlate(&r, 0, 1, &cfg(4, 3000, CorrelationMode::Histogram)).unwrap();
        assert!(hs.counts.iter().zip(&hh.counts).all(|(s, h)| s <= h));
        assert!(hs.total() < hh.total());
        // Nothing survives sifting at a full period or more.
        for (i, &c) in hs.counts.iter().enumerate() {
            if hs.center(i).abs() >= 1000.0 + 4.0 {
                assert_eq!(c, 0);
            }
        }
    }

    #[test]
    fn streaming_matches_in_memory() {
        let r = random_stream(5, 50_000, 20_000_000);
        let c = cfg(2, 1500, CorrelationMode::Histogram);
        let pairs = [(0u8, 2u8), (2, 0), (1, 1), (3, 3)];
        for chunk in [1usize, 7, 1000, 100_000] {
            let mut s = StreamingCorrelator::new(&pairs, c).unwrap();
            for part in r.chunks(chunk) {
                s.feed(part).unwrap();
            }
            for h in s.finish() {
                let m = cross_correlate(&r, h.ch_a, h.ch_b, &c).unwrap();
                assert_eq!(h.counts, m.counts, "chunk {chunk} pair {}{}", h.ch_a, h.ch_b);
            }
        }
    }

    #[test]
    fn streaming_rejects_unsorted_chunks() {
        let mut s = StreamingCorrelator::new(&[(0, 1)], cfg(1, 10, CorrelationMode::Histogram)).unwrap();
        s.feed(&[TimeTagRecord::photon(10, 0)]).unwrap();
        assert!(matches!(s.feed(&[TimeTagRecord::photon(5, 1)]), Err(Error::Unsorted { .. })));
    }

    #[test]
    fn errors_for_bad_input() {
        let r = [TimeTagRecord::photon(10, 0), TimeTagRecord::photon(5, 1)];
        let c = cfg(1, 10, CorrelationMode::Histogram);
        assert!(matches!(cross_correlate(&r, 0, 1, &c), Err(Error::Unsorted { .. })));
        assert!(matches!(cross_correlate(&r[..1], 0, 7, &c), Err(Error::UnknownChannel { .. })));
        assert!(cross_correlate(&r[..1], 0, 1, &cfg(10, 5, CorrelationMode::Histogram)).is_err());
    }

    #[test]
    fn poisson_streams_are_flat() {
        let r = random_stream(11, 400_000, 400_000_000);
        let c = cfg(100, 5000, CorrelationMode::Histogram);
        let h = cross_correlate(&r, 0, 1, &c).unwrap();
        let n0 = timestamps(&r, 0).len() as f64;
        let n1 = timestamps(&r, 1).len() as f64;
        let expected = n0 * n1 * 100.0 / 400_000_000.0;
        let outliers = h.counts.iter().filter(|&&k| (k as f64 - expected).abs() > 3.0 * expected.sqrt()).count();
        // about 0.3 % of bins exceed 3σ by chance
        assert!(outliers <= 3, "{outliers} bins off, expected ≈{expected}");
    }

    #[test]
    fn rebinning_conserves_counts_and_centers_zero() {
        let r = random_stream(13, 5000, 3_000_000);
        let h = cross_correlate(&r, 0, 2, &cfg(1, 900, CorrelationMode::Histogram)).unwrap();
        let h8 = h.rebinned(8);
        assert_eq!(h8.total(), h.total());
        assert_eq!(h8.bin_ps, 8);
        let zero = (0 - h8.k_min) as usize;
        let direct: u64 = (-3..=4).map(|d| h.at(d).unwrap()).sum();
        assert_eq!(h8.counts[zero], direct);
    }

    #[test]
    fn g2_of_poisson_is_one() {
        let r = random_stream(17, 300_000, 300_000_000);
        let h = cross_correlate(&r, 0, 1, &cfg(10, 5500, CorrelationMode::Histogram)).unwrap();
        let g = g2_zero(&h, 1000.0).unwrap();
        assert_eq!(g.side_peaks, 10);
        assert!((g.g2 - 1.0).abs() < 0.05, "{}", g.g2);
        assert!(g.purity < 0.05);
    }

    #[test]
    fn g2_needs_side_peaks() {
        let r = random_stream(17, 1000, 1_000_000);
        let h = cross_correlate(&r, 0, 1, &cfg(10, 400, CorrelationMode::Histogram)).unwrap();
        assert!(matches!(g2_zero(&h, 1000.0), Err(Error::InsufficientStatistics(_))));
    }

    #[test]
    fn leakage_of_two_sided_decay() {
        let (tau, t) = (135.0, 1000.0);
        let l = window_leakage(tau, 0.0, t);
        let side = |a: f64, b: f64| 0.5 * ((-a / tau).exp() - (-b / tau).exp());
        assert!((l[0] - side(0.5 * t, 1.5 * t)).abs() < 1e-6, "{l:?}");
        assert!((l[1] - side(1.5 * t, 2.5 * t)).abs() < 1e-8);
    }

    #[test]
    fn dark_free_emitter_at_ghz_rates_is_pure() {
        let mut p = crate::sim::CascadeParams::reference();
        for c in &mut p.channels {
            c.eta_det = 0.5;
            c.dark_hz = 0.0;
        }
        let sim = crate::sim::simulate(&p, &crate::sim::SimOptions::new(4_000_000, 21)).unwrap();
        let period = p.period_ps();
        let c = CorrelatorConfig::new(4, (12.5 * period) as i64, CorrelationMode::Histogram, p.rep_rate_ghz);
        let g = g2_zero(&cross_correlate(&sim.records, 0, 1, &c).unwrap(), period).unwrap();
        assert!(g.purity > 0.999, "{g:?}");
        assert!(g.leakage > 0.01 && g.leakage < 0.04, "{g:?}");
    }

    #[test]
    fn phase_histogram_folds() {
        let g = PeriodGrid::new(1000.0, -100.0);
        let c = pulse_phase_histogram(&[-100, 0, 950, 1900, 2899], &g, 100.0);
        assert_eq!(c.len(), 10);
        assert_eq!(c[0], 3);
        assert_eq!(c[1], 1);
        assert_eq!(c[9], 1);
    }

    #[test]
    fn empty_stream_gives_empty_matrix() {
        let s = BasisSchedule::tomography(100);
        let m = build_correlation_matrix(&[], &s, 900, &cfg(8, 1000, CorrelationMode::TtrSifted)).unwrap();
        assert_eq!(m.entries.len(), 36);
        assert!(m.entries.values().all(|h| h.total() == 0));
        let t = m.acquisition(Basis::H, Basis::H);
        assert!((t - 100.0 * 1000.0 * 1e-12).abs() < 1e-18);
    }

    #[test]
    fn partial_schedule_is_missing_pairs() {
        let s = BasisSchedule { segment_pulses: 10, settings: vec![[Basis::H, Basis::V, Basis::H, Basis::V]] };
        let r = build_correlation_matrix(&[], &s, 100, &cfg(8, 1000, CorrelationMode::TtrSifted));
        assert!(matches!(r, Err(Error::MissingBasisPair(..))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn mirror_symmetry(seed in 0u64..1000, bin in 1i64..20) {
            let r = random_stream(seed, 400, 200_000);
            let c = cfg(bin, 1500, CorrelationMode::Histogram);
            let ab = cross_correlate(&r, 0, 1, &c).unwrap();
            let ba = cross_correlate(&r, 1, 0, &c).unwrap();
            prop_assert_eq!(ab.mirrored().counts, ba.counts);
        }

        #[test]
        fn thread_count_invariance(seed in 0u64..100) {
            let r = random_stream(seed, 2000, 1_000_000);
            let c = cfg(3, 2000, CorrelationMode::TtrSifted);
            let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            let h1 = one.install(|| cross_correlate(&r, 0, 2, &c).unwrap());
            let h = cross_correlate(&r, 0, 2, &c).unwrap();
            prop_assert_eq!(h1, h);
        }
    }
}

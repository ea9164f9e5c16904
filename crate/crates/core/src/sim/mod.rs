//! Monte Carlo generation of time-tagged detection streams.
//!
//! Pulse `k` fires at `k·T_rep`. Work is split into fixed blocks of pulses,
//! each with its own ChaCha stream derived from the seed, so the output does
//! not depend on the thread count.

mod emission;
mod params;
mod telegraph;

pub use emission::{sample_emission, Emitter, PairEmission};
pub use params::{
    BasisSchedule, CascadeParams, ChannelParams, CHANNEL_COUNT, FWHM_TO_SIGMA, XX_CHANNELS,
    X_CHANNELS,
};
pub use telegraph::Telegraph;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{domain, invalid, Result};
use crate::record::{PeriodGrid, TimeTagRecord};

/// Pulses per independently seeded work block.
pub const BLOCK_PULSES: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub n_pulses: u64,
    pub seed: u64,
    /// Emit a sync record on channel 0 every this many pulses.
    pub sync_every: Option<u64>,
}

impl SimOptions {
    pub fn new(n_pulses: u64, seed: u64) -> Self {
        SimOptions { n_pulses, seed, sync_every: None }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub records: Vec<TimeTagRecord>,
    pub n_pulses: u64,
    pub period_ps: f64,
    /// Pairs created (before detection), for checking estimators.
    pub emitted_pairs: u64,
}

impl Simulation {
    pub fn acquisition_s(&self) -> f64 {
        self.n_pulses as f64 * self.period_ps * 1e-12
    }

    pub fn pulse_grid(&self) -> PeriodGrid {
        PeriodGrid::new(self.period_ps, 0.0)
    }
}

/// Bit-packed on/off path of the blinking process, one bit per pulse.
struct OnPath {
    words: Option<Vec<u64>>,
}

impl OnPath {
    fn generate(params: &CascadeParams, n: u64, seed: u64) -> Self {
        let t = Telegraph::new(params.beta, params.t_decay_ns * 1e3, params.period_ps());
        if t.is_always_on() {
            return OnPath { words: None };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let mut words = vec![0u64; n.div_ceil(64) as usize];
        let mut on = t.initial(rng.random());
        for k in 0..n {
            if k > 0 {
                on = t.step(on, rng.random());
            }
            if on {
                words[(k / 64) as usize] |= 1 << (k % 64);
            }
        }
        OnPath { words: Some(words) }
    }

    fn is_on(&self, k: u64) -> bool {
        match &self.words {
            None => true,
            Some(w) => w[(k / 64) as usize] >> (k % 64) & 1 == 1,
        }
    }
}

struct BlockOutput {
    records: Vec<TimeTagRecord>,
    emitted: u64,
}

pub fn simulate(params: &CascadeParams, opts: &SimOptions) -> Result<Simulation> {
    if opts.n_pulses == 0 {
        return domain("a run needs at least one pulse");
    }
    params.validate()?;
    if opts.sync_every == Some(0) {
        return invalid("sync interval must be positive");
    }
    let period = params.period_ps();
    let schedule = params.effective_schedule();
    let emitters: Vec<Emitter> = schedule.settings.iter().map(|s| Emitter::new(params, s)).collect();
    let on_path = OnPath::generate(params, opts.n_pulses, opts.seed);
    let n_blocks = opts.n_pulses.div_ceil(BLOCK_PULSES);

    let blocks: Vec<BlockOutput> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            simulate_block(params, opts, &schedule, &emitters, &on_path, b, period)
        })
        .collect();

    let emitted_pairs = blocks.iter().map(|b| b.emitted).sum();
    let mut records: Vec<TimeTagRecord> =
        Vec::with_capacity(blocks.iter().map(|b| b.records.len()).sum());
    for b in blocks {
        records.extend(b.records);
    }
    records.par_sort_unstable();
    Ok(Simulation { records, n_pulses: opts.n_pulses, period_ps: period, emitted_pairs })
}

fn simulate_block(
    params: &CascadeParams,
    opts: &SimOptions,
    schedule: &BasisSchedule,
    emitters: &[Emitter],
    on_path: &OnPath,
    block: u64,
    period: f64,
) -> BlockOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(block + 1);
    let k0 = block * BLOCK_PULSES;
    let k1 = (k0 + BLOCK_PULSES).min(opts.n_pulses);
    let mut records = Vec::new();
    let mut emitted = 0;
    let eta: Vec<f64> = params.channels.iter().map(|c| c.eta_det).collect();
    let fwhm: Vec<f64> = params.channels.iter().map(|c| c.jitter_fwhm_ps).collect();

    let push = |rng: &mut ChaCha8Rng, records: &mut Vec<TimeTagRecord>, ch: u8, t: f64| {
        if rng.random::<f64>() < eta[ch as usize] {
            let t = (t + emission::jitter(rng, fwhm[ch as usize])).round();
            if t >= 0.0 {
                records.push(TimeTagRecord::photon(t as u64, ch));
            }
        }
    };

    for k in k0..k1 {
        if let Some(every) = opts.sync_every {
            if k % every == 0 {
                records.push(TimeTagRecord::sync((k as f64 * period).round() as u64, 0));
            }
        }
        if !on_path.is_on(k) || rng.random::<f64>() >= params.eta_ex {
            continue;
        }
        emitted += 1;
        let setting = ((k / schedule.segment_pulses) % emitters.len() as u64) as usize;
        let e = emitters[setting].sample(&mut rng);
        let t0 = k as f64 * period;
        push(&mut rng, &mut records, e.xx_channel, t0 + e.tau_xx_ps);
        push(&mut rng, &mut records, e.x_channel, t0 + e.tau_x_ps);
    }

    let (t_start, t_end) = (k0 as f64 * period, k1 as f64 * period);
    for (ch, c) in params.channels.iter().enumerate() {
        let mean = c.dark_hz * (t_end - t_start) * 1e-12;
        if mean <= 0.0 {
            continue;
        }
        let count = Poisson::new(mean).map(|d| d.sample(&mut rng) as u64).unwrap_or(0);
        for _ in 0..count {
            let t = t_start + rng.random::<f64>() * (t_end - t_start);
            records.push(TimeTagRecord::photon(t.floor() as u64, ch as u8));
        }
    }
    BlockOutput { records, emitted }
}

/// Phenomenological damped Rabi response
/// P = η_max·sin²((π/2)√(E/E_π))·e^{−d√(E/E_π)}.
pub fn rabi_excitation_probability(
    pulse_energy_fj: f64,
    e_pi_fj: f64,
    damping: f64,
    eta_max: f64,
) -> Result<f64> {
    if !(e_pi_fj > 0.0) {
        return domain("pi-pulse energy must be positive");
    }
    if !(pulse_energy_fj >= 0.0) {
        return domain("pulse energy must be non-negative");
    }
    let r = (pulse_energy_fj / e_pi_fj).sqrt();
    let s = (std::f64::consts::FRAC_PI_2 * r).sin();
    Ok(eta_max * s * s * (-damping * r).exp())
}

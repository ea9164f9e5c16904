use rand::Rng;
use rand_distr::StandardNormal;

use crate::polarization::{Basis, CascadeStateParams, ProjectionCoefficients};

use super::params::{CascadeParams, CHANNEL_COUNT};

/// One emitted photon pair, before detection losses and jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEmission {
    /// XX emission delay after the pulse, ps.
    pub tau_xx_ps: f64,
    /// X emission delay after the pulse, ps (always later than the XX photon).
    pub tau_x_ps: f64,
    /// Channel (0 or 1) the XX photon exits to.
    pub xx_channel: u8,
    /// Channel (2 or 3) the X photon exits to.
    pub x_channel: u8,
}

impl PairEmission {
    pub fn dwell_ps(&self) -> f64 {
        self.tau_x_ps - self.tau_xx_ps
    }
}

/// Pair sampler for one fixed basis setting.
#[derive(Debug, Clone)]
pub struct Emitter {
    t1_xx_ps: f64,
    t1_x_ps: f64,
    state: CascadeStateParams,
    /// `coeffs[i][j]`: XX port `i`, X port `j`.
    coeffs: [[ProjectionCoefficients; 2]; 2],
    fidelity: [f64; CHANNEL_COUNT],
}

impl Emitter {
    pub fn new(params: &CascadeParams, setting: &[Basis; CHANNEL_COUNT]) -> Self {
        let mut fidelity = [1.0; CHANNEL_COUNT];
        for (i, c) in params.channels.iter().enumerate().take(CHANNEL_COUNT) {
            fidelity[i] = c.fidelity;
        }
        let pc = |i: usize, j: usize| ProjectionCoefficients::new(setting[i], setting[2 + j]);
        Emitter {
            t1_xx_ps: params.t1_xx_ps,
            t1_x_ps: params.t1_x_ps,
            state: params.state_params(),
            coeffs: [[pc(0, 0), pc(0, 1)], [pc(1, 0), pc(1, 1)]],
            fidelity,
        }
    }

    /// Ideal joint port probabilities `[p00, p01, p10, p11]` at dwell time `tau`.
    pub fn port_probabilities(&self, tau_ps: f64) -> [f64; 4] {
        let c = self.state.coherence_at(tau_ps);
        let th = self.state.phase_at(tau_ps);
        let mut p = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                p[2 * i + j] = self.coeffs[i][j].probability(c, th).max(0.0);
            }
        }
        p
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PairEmission {
        let tau_xx = -self.t1_xx_ps * (1.0 - rng.random::<f64>()).ln();
        let dwell = -self.t1_x_ps * (1.0 - rng.random::<f64>()).ln();
        let p = self.port_probabilities(dwell);
        let total: f64 = p.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut outcome = 3;
        for (k, &pk) in p.iter().enumerate() {
            if u < pk {
                outcome = k;
                break;
            }
            u -= pk;
        }
        let mut xx_port = outcome / 2;
        let mut x_port = outcome % 2;
        // Imperfect projection: with probability 1 − F the photon leaves by a
        // uniformly random port of its splitter.
        if rng.random::<f64>() >= self.fidelity[xx_port] {
            xx_port = rng.random_range(0..2);
        }
        if rng.random::<f64>() >= self.fidelity[2 + x_port] {
            x_port = rng.random_range(0..2);
        }
        PairEmission {
            tau_xx_ps: tau_xx,
            tau_x_ps: tau_xx + dwell,
            xx_channel: xx_port as u8,
            x_channel: 2 + x_port as u8,
        }
    }
}

/// Draw one pair for `params` in its static channel bases.
pub fn sample_emission<R: Rng + ?Sized>(params: &CascadeParams, rng: &mut R) -> PairEmission {
    Emitter::new(params, &params.static_setting()).sample(rng)
}

/// Standard normal deviate scaled to a Gaussian of the given FWHM.
pub(crate) fn jitter<R: Rng + ?Sized>(rng: &mut R, fwhm_ps: f64) -> f64 {
    if fwhm_ps == 0.0 {
        0.0
    } else {
        let z: f64 = rng.sample(StandardNormal);
        z * fwhm_ps * super::params::FWHM_TO_SIGMA
    }
}

//! Two-state Markov telegraph process sampled once per excitation pulse.

use rand::Rng;

/// Discrete-time telegraph with stationary on-probability `beta` and
/// relaxation time `t_decay`, stepped once per repetition period.
#[derive(Debug, Clone, Copy)]
pub struct Telegraph {
    beta: f64,
    p_on_after_on: f64,
    p_on_after_off: f64,
}

impl Telegraph {
    pub fn new(beta: f64, t_decay_ps: f64, step_ps: f64) -> Self {
        let lambda = (-step_ps / t_decay_ps).exp();
        Telegraph {
            beta,
            p_on_after_on: beta + (1.0 - beta) * lambda,
            p_on_after_off: beta * (1.0 - lambda),
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_always_on(&self) -> bool {
        self.beta >= 1.0
    }

    /// Stationary draw from a uniform variate.
    pub fn initial(&self, u: f64) -> bool {
        u < self.beta
    }

    /// Next state from a uniform variate.
    pub fn step(&self, on: bool, u: f64) -> bool {
        let p = if on { self.p_on_after_on } else { self.p_on_after_off };
        u < p
    }

    /// Run `n` steps from a stationary start, returning the on/off indicator.
    pub fn sample_path<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<bool> {
        let mut out = Vec::with_capacity(n);
        if n == 0 {
            return out;
        }
        let mut on = self.initial(rng.random());
        out.push(on);
        for _ in 1..n {
            on = self.step(on, rng.random());
            out.push(on);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn always_on_never_switches_off() {
        let t = Telegraph::new(1.0, 12_700.0, 1007.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(t.sample_path(10_000, &mut rng).into_iter().all(|on| on));
    }

    #[test]
    fn on_fraction_and_correlation_time() {
        let step = 1007.556;
        let t_decay = 12_700.0;
        let t = Telegraph::new(0.61, t_decay, step);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000_000;
        let path = t.sample_path(n, &mut rng);
        let x: Vec<f64> = path.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.61).abs() < 0.01, "on fraction {mean}");

        // Autocorrelation at lags 1..40 periods fitted by a log-linear slope.
        let var = mean * (1.0 - mean);
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for lag in 1..40usize {
            let mut acc = 0.0;
            for i in 0..n - lag {
                acc += (x[i] - mean) * (x[i + lag] - mean);
            }
            let c = acc / (n - lag) as f64 / var;
            let tl = lag as f64 * step;
            sxy += tl * c.ln();
            sxx += tl * tl;
        }
        let fitted = -sxx / sxy;
        assert!((fitted / t_decay - 1.0).abs() < 0.1, "T_decay {fitted}");
    }
}

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fit::FitResult;
use crate::record::{channel_timestamps, ensure_sorted, PeriodGrid, TimeTagRecord};

/// Detected single and pair counts over one acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateSummary {
    /// XX photons summed over the XX detection channels.
    pub single_counts: f64,
    /// Same-period co-polarized XX–X pairs.
    pub coinc_counts: f64,
    pub acquisition_s: f64,
    pub rep_hz: f64,
}

impl RateSummary {
    pub fn single_hz(&self) -> f64 {
        self.single_counts / self.acquisition_s
    }

    pub fn coinc_hz(&self) -> f64 {
        self.coinc_counts / self.acquisition_s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.acquisition_s > 0.0 && self.rep_hz > 0.0) {
            return invalid("acquisition time and repetition rate must be positive");
        }
        if self.single_counts < 0.0 || self.coinc_counts < 0.0 {
            return invalid("counts must be non-negative");
        }
        if self.coinc_hz() > self.single_hz() || self.single_hz() > self.rep_hz {
            return invalid("rates must satisfy coincidences ≤ singles ≤ repetition rate");
        }
        Ok(())
    }

    /// Count XX singles on `xx_channels` and same-period coincidences over
    /// `co_pairs` (XX channel, X channel), periods taken from `grid`.
    pub fn measure(
        records: &[TimeTagRecord],
        grid: &PeriodGrid,
        acquisition_s: f64,
        xx_channels: &[u8],
        co_pairs: &[(u8, u8)],
    ) -> Result<Self> {
        ensure_sorted(records)?;
        let single_counts = records
            .iter()
            .filter(|r| !r.is_sync() && xx_channels.contains(&r.channel))
            .count() as f64;
        let mut coinc = 0u64;
        for &(a, b) in co_pairs {
            coinc += same_period_pairs(&channel_timestamps(records, a), &channel_timestamps(records, b), grid);
        }
        let r = RateSummary {
            single_counts,
            coinc_counts: coinc as f64,
            acquisition_s,
            rep_hz: 1e12 / grid.period_ps,
        };
        r.validate()?;
        Ok(r)
    }
}

/// Σ_k n_a(k)·n_b(k) over period indices k.
fn same_period_pairs(a: &[i64], b: &[i64], grid: &PeriodGrid) -> u64 {
    let ia: Vec<i64> = a.iter().map(|&t| grid.index(t)).collect();
    let ib: Vec<i64> = b.iter().map(|&t| grid.index(t)).collect();
    let (mut i, mut j, mut total) = (0, 0, 0u64);
    while i < ia.len() && j < ib.len() {
        match ia[i].cmp(&ib[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let k = ia[i];
                let na = ia[i..].iter().take_while(|&&x| x == k).count();
                let nb = ib[j..].iter().take_while(|&&x| x == k).count();
                total += (na * nb) as u64;
                i += na;
                j += nb;
            }
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Efficiencies {
    pub eta_1p: f64,
    pub eta_1p_sigma: f64,
    pub eta_2p: f64,
    pub eta_2p_sigma: f64,
    pub eta_det: f64,
    pub eta_det_sigma: f64,
    pub eta_ex: f64,
    pub eta_ex_sigma: f64,
    pub single_hz: f64,
    pub coinc_hz: f64,
    pub rep_hz: f64,
}

impl Efficiencies {
    pub fn to_fit_result(&self) -> FitResult {
        let mut f = FitResult::new(
            &["eta_ex", "eta_det", "eta_1p", "eta_2p"],
            &[self.eta_ex, self.eta_det, self.eta_1p, self.eta_2p],
            &[self.eta_ex_sigma, self.eta_det_sigma, self.eta_1p_sigma, self.eta_2p_sigma],
        );
        f.push("single_hz", self.single_hz, self.single_hz * self.eta_1p_sigma / self.eta_1p);
        f.push("coinc_hz", self.coinc_hz, self.coinc_hz * self.eta_2p_sigma / self.eta_2p);
        f.push("rep_hz", self.rep_hz, 0.0);
        f
    }
}

/// η¹ᴾ = Γ_single/Γ_rep, η²ᴾ = Γ_coinc/Γ_rep, η_det = η²ᴾ/η¹ᴾ,
/// η_ex = (η¹ᴾ)²/η²ᴾ, with Poisson errors on both counts.
pub fn estimate_efficiencies(r: &RateSummary) -> Result<Efficiencies> {
    r.validate()?;
    if r.coinc_counts <= 0.0 {
        return Err(Error::InsufficientStatistics("no coincidences: efficiencies undefined".into()));
    }
    let eta_1p = r.single_hz() / r.rep_hz;
    let eta_2p = r.coinc_hz() / r.rep_hz;
    let rel_s = 1.0 / r.single_counts.sqrt();
    let rel_c = 1.0 / r.coinc_counts.sqrt();
    let eta_det = eta_2p / eta_1p;
    let eta_ex = eta_1p * eta_1p / eta_2p;
    Ok(Efficiencies {
        eta_1p,
        eta_1p_sigma: eta_1p * rel_s,
        eta_2p,
        eta_2p_sigma: eta_2p * rel_c,
        eta_det,
        eta_det_sigma: eta_det * (rel_s * rel_s + rel_c * rel_c).sqrt(),
        eta_ex,
        eta_ex_sigma: eta_ex * (4.0 * rel_s * rel_s + rel_c * rel_c).sqrt(),
        single_hz: r.single_hz(),
        coinc_hz: r.coinc_hz(),
        rep_hz: r.rep_hz,
    })
}

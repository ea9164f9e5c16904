use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flag bit marking a laser sync record rather than a photon detection.
pub const FLAG_SYNC: u8 = 0b0000_0001;

/// One detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeTagRecord {
    /// Integer picoseconds since run start.
    pub timestamp_ps: u64,
    pub channel: u8,
    pub flags: u8,
}

impl TimeTagRecord {
    pub fn photon(timestamp_ps: u64, channel: u8) -> Self {
        TimeTagRecord { timestamp_ps, channel, flags: 0 }
    }

    pub fn sync(timestamp_ps: u64, channel: u8) -> Self {
        TimeTagRecord { timestamp_ps, channel, flags: FLAG_SYNC }
    }

    pub fn is_sync(&self) -> bool {
        self.flags & FLAG_SYNC != 0
    }
}

/// Index of the first record that breaks timestamp order, if any.
pub fn first_unsorted(records: &[TimeTagRecord]) -> Option<usize> {
    records
        .windows(2)
        .position(|w| w[1].timestamp_ps < w[0].timestamp_ps)
        .map(|i| i + 1)
}

pub fn ensure_sorted(records: &[TimeTagRecord]) -> Result<()> {
    match first_unsorted(records) {
        Some(index) => Err(Error::Unsorted { index }),
        None => Ok(()),
    }
}

/// Photon timestamps (sync records excluded) of a single channel.
pub fn channel_timestamps(records: &[TimeTagRecord], channel: u8) -> Vec<i64> {
    records
        .iter()
        .filter(|r| r.channel == channel && !r.is_sync())
        .map(|r| r.timestamp_ps as i64)
        .collect()
}

/// Excitation-period grid: period index of time `t` is ⌊(t − origin)/period⌋.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodGrid {
    pub period_ps: f64,
    pub origin_ps: f64,
}

impl PeriodGrid {
    pub fn new(period_ps: f64, origin_ps: f64) -> Self {
        PeriodGrid { period_ps, origin_ps }
    }

    pub fn from_rate_ghz(rate_ghz: f64) -> Self {
        PeriodGrid { period_ps: 1e3 / rate_ghz, origin_ps: 0.0 }
    }

    pub fn index(&self, t_ps: i64) -> i64 {
        ((t_ps as f64 - self.origin_ps) / self.period_ps).floor() as i64
    }

    /// Same grid with boundaries moved earlier by `guard_ps`.
    pub fn shifted_earlier(&self, guard_ps: f64) -> Self {
        PeriodGrid { period_ps: self.period_ps, origin_ps: self.origin_ps - guard_ps }
    }
}

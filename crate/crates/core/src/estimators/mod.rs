//! Scalar estimators: efficiencies from rates, blinking from peak envelopes,
//! lifetimes from convolved decays, FSS from emission energies, and the
//! π-pulse energy from a Rabi scan.

pub mod blinking;
pub mod efficiency;
pub mod fss;
pub mod lifetime;
pub mod rabi;

pub use blinking::{fit_blinking, PeakEnvelope};
pub use efficiency::{estimate_efficiencies, Efficiencies, RateSummary};
pub use fss::{fit_fss, phases_anticorrelated};
pub use lifetime::{fit_lifetimes, folded_decay, LifetimeSpec};
pub use rabi::fit_rabi;

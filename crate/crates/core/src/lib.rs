//! Simulation and analysis of GHz-clocked biexciton–exciton entangled photon
//! pair sources from binary time-tagged detection streams.

pub mod correlator;
pub mod error;
pub mod estimators;
pub mod fit;
pub mod interferometry;
pub mod linalg;
pub mod numeric;
pub mod polarization;
pub mod record;
pub mod sim;
pub mod tomography;
pub mod ttr;

pub use error::{Error, Result};
pub use record::{PeriodGrid, TimeTagRecord};

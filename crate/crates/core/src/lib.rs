pub mod cusp;
pub mod diff;
pub mod discs;
pub mod error;
pub mod kernel;
pub mod params;
pub mod profile;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Decimal, Real, ScaledReal};

/// The default instance works in [`ScaledReal`]; the construction is generic
/// and runs in `f64` as far as its range allows.
pub type Table = params::ParamTable<ScaledReal>;
pub type TableF64 = params::ParamTable<f64>;
pub type Stack = profile::ProfileStack<ScaledReal>;
pub type Cusp = cusp::CuspProfile<ScaledReal>;
pub type Disc = discs::DiscMap<ScaledReal>;

pub mod charfn;
pub mod coeffs;
pub mod density;
pub mod error;
pub mod girsanov;
pub mod malliavin;
pub mod mollifier;
pub mod plot;
pub mod quad;
pub mod real;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use real::Real;

/// `f64` instantiations of the generic types.
pub type Mollifier = mollifier::Mollifier<f64>;
pub type Ramp = mollifier::Ramp<f64>;
pub type CoefficientSpec = coeffs::CoefficientSpec<f64>;
pub type TruncatedCoeffs = coeffs::TruncatedCoeffs<f64>;
pub type SimGrid = sde::SimGrid<f64>;
pub type PathEnsemble = sde::PathEnsemble<f64>;
pub type CharFnTable = charfn::CharFnTable<f64>;
pub type WindowSample = malliavin::WindowSample<f64>;
pub type DerivativeTable = malliavin::DerivativeTable<f64>;

//! Estimation with machine-generated text labels over a finite population.
//!
//! The numeric code is generic over the scalar type: bookkeeping modules
//! accept any [`Field`] (including exact rationals), the least-squares and
//! inference code any [`Real`]. The aliases below fix the scalar to `f64`,
//! which is what the command-line tools use.

pub mod bounds;
pub mod context;
pub mod debias;
pub mod error;
pub mod moment;
pub mod population;
pub mod regress;
pub mod rng;
pub mod scalar;
pub mod simulate;

pub use error::{Error, ErrorKind, Result};
pub use scalar::{Field, Real};

pub type TextPiece = population::TextPiece<f64>;
pub type Population = population::Population<f64>;
pub type SamplingTable = context::SamplingTable<f64>;
pub type ResearchContext = context::ResearchContext<f64>;
pub type MomentSpec = moment::MomentSpec<f64>;

pub type RegressionFit = regress::RegressionFit<f64>;
pub type PopulationTargets = regress::PopulationTargets<f64>;
pub type EstimateReport = debias::EstimateReport<f64>;
pub type OmegaReport = debias::OmegaReport<f64>;

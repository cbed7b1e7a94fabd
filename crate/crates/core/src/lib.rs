//! Numerical laboratory for interval maps with neutral fixed points: induced
//! Markov return maps, exact cylinder calculus, virtual dimension, repeller
//! families with prescribed return-time ratios, and explicit points whose
//! ratio sequences follow a target.

pub mod approximation;
pub mod bridging;
pub mod cylinders;
pub mod dimension;
pub mod error;
pub mod exact;
pub mod induced;
pub mod lab;
pub mod map;
pub mod report;
pub mod scalar;

pub use cylinders::Cylinder;
pub use error::{Error, Result};
pub use exact::Rational;
pub use induced::{InducedScheme, Interval, Piece, Region, ReturnSymbol};
pub use map::{Branch, MapDoc, MapSpec};
pub use scalar::{BigReal, Real};

/// Binary64 map, the working precision.
pub type Map = MapSpec<f64>;
pub type Map32 = MapSpec<f32>;
/// Multi-precision map used for long orbit replays.
pub type MapBig = MapSpec<BigReal>;

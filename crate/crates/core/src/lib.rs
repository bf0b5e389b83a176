pub mod codec;
pub mod dyadic;
pub mod error;
pub mod logmath;
pub mod posterior;
pub mod exponent;
pub mod control;
pub mod experiments;

pub use codec::arrivals::ArrivalSchedule;
pub use codec::session::{run_session, SessionConfig, SessionSeeds, Transcript};
pub use codec::{CodecConfig, Decoder, Encoder};
pub use dyadic::DyadicPoint;
pub use error::{Error, Result};
pub use exponent::ExponentSolver;
pub use posterior::PosteriorDensity;

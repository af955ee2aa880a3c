//! Decision-support engine for national innovation policy.
//!
//! Expert elicitation ([`delphi`]), cause-effect structuring ([`dematel`]),
//! priority ranking ([`ahp`]), a four-perspective balanced scorecard
//! ([`scorecard`]) compiled into a stock-and-flow model ([`sdm`]), and the
//! project stage machine with its file store ([`pipeline`]).

pub mod ahp;
pub mod delphi;
pub mod dematel;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod scorecard;
pub mod sdm;

pub use error::{Error, ErrorCode, Result};
pub use numerics::Matrix;
pub use pipeline::{Project, Stage, Store};

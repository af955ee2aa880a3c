use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ahp::AhpError;
use crate::delphi::DelphiError;
use crate::dematel::DematelError;
use crate::numerics::NumericsError;
use crate::pipeline::PipelineError;
use crate::scorecard::ScorecardError;
use crate::sdm::SdmError;

/// Machine-readable error codes shared by the HTTP API and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    NotSquare,
    Singular,
    NoConvergence,
    NonPositiveEntry,
    DimensionMismatch,
    DuplicateLabel,
    MalformedInput,
    EmptyOpinionSet,
    UnassignedOpinion,
    RoundClosed,
    UnknownStatement,
    RatingOutOfScale,
    IncompleteResponse,
    InvalidRankOrder,
    UnknownPanelist,
    NoResponses,
    AllZeroMatrix,
    DivergentSeries,
    InfluenceOutOfScale,
    NonZeroDiagonal,
    NotReciprocal,
    BadDiagonal,
    OutOfScale,
    UnsupportedOrder,
    InconsistentMatrix,
    IncompleteHierarchy,
    BrokenReference,
    DuplicateLink,
    InvalidLink,
    InvalidScorecard,
    NameResolution,
    UnboundName,
    DivisionByZeroGuardTripped,
    CyclicAuxiliaries,
    InvalidModel,
    InvalidScenario,
    ScenarioLimitExceeded,
    EmptyGoal,
    WrongEvidence,
    OutOfOrder,
    ConsensusNotReached,
    TooFewCriteria,
    TooFewAlternatives,
    NotFound,
    CorruptFile,
    Io,
    LeaseHeld,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 47] = [
        ErrorCode::NotSquare,
        ErrorCode::Singular,
        ErrorCode::NoConvergence,
        ErrorCode::NonPositiveEntry,
        ErrorCode::DimensionMismatch,
        ErrorCode::DuplicateLabel,
        ErrorCode::MalformedInput,
        ErrorCode::EmptyOpinionSet,
        ErrorCode::UnassignedOpinion,
        ErrorCode::RoundClosed,
        ErrorCode::UnknownStatement,
        ErrorCode::RatingOutOfScale,
        ErrorCode::IncompleteResponse,
        ErrorCode::InvalidRankOrder,
        ErrorCode::UnknownPanelist,
        ErrorCode::NoResponses,
        ErrorCode::AllZeroMatrix,
        ErrorCode::DivergentSeries,
        ErrorCode::InfluenceOutOfScale,
        ErrorCode::NonZeroDiagonal,
        ErrorCode::NotReciprocal,
        ErrorCode::BadDiagonal,
        ErrorCode::OutOfScale,
        ErrorCode::UnsupportedOrder,
        ErrorCode::InconsistentMatrix,
        ErrorCode::IncompleteHierarchy,
        ErrorCode::BrokenReference,
        ErrorCode::DuplicateLink,
        ErrorCode::InvalidLink,
        ErrorCode::InvalidScorecard,
        ErrorCode::NameResolution,
        ErrorCode::UnboundName,
        ErrorCode::DivisionByZeroGuardTripped,
        ErrorCode::CyclicAuxiliaries,
        ErrorCode::InvalidModel,
        ErrorCode::InvalidScenario,
        ErrorCode::ScenarioLimitExceeded,
        ErrorCode::EmptyGoal,
        ErrorCode::WrongEvidence,
        ErrorCode::OutOfOrder,
        ErrorCode::ConsensusNotReached,
        ErrorCode::TooFewCriteria,
        ErrorCode::TooFewAlternatives,
        ErrorCode::NotFound,
        ErrorCode::CorruptFile,
        ErrorCode::Io,
        ErrorCode::LeaseHeld,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::NotSquare => "NotSquare",
            ErrorCode::Singular => "Singular",
            ErrorCode::NoConvergence => "NoConvergence",
            ErrorCode::NonPositiveEntry => "NonPositiveEntry",
            ErrorCode::DimensionMismatch => "DimensionMismatch",
            ErrorCode::DuplicateLabel => "DuplicateLabel",
            ErrorCode::MalformedInput => "MalformedInput",
            ErrorCode::EmptyOpinionSet => "EmptyOpinionSet",
            ErrorCode::UnassignedOpinion => "UnassignedOpinion",
            ErrorCode::RoundClosed => "RoundClosed",
            ErrorCode::UnknownStatement => "UnknownStatement",
            ErrorCode::RatingOutOfScale => "RatingOutOfScale",
            ErrorCode::IncompleteResponse => "IncompleteResponse",
            ErrorCode::InvalidRankOrder => "InvalidRankOrder",
            ErrorCode::UnknownPanelist => "UnknownPanelist",
            ErrorCode::NoResponses => "NoResponses",
            ErrorCode::AllZeroMatrix => "AllZeroMatrix",
            ErrorCode::DivergentSeries => "DivergentSeries",
            ErrorCode::InfluenceOutOfScale => "InfluenceOutOfScale",
            ErrorCode::NonZeroDiagonal => "NonZeroDiagonal",
            ErrorCode::NotReciprocal => "NotReciprocal",
            ErrorCode::BadDiagonal => "BadDiagonal",
            ErrorCode::OutOfScale => "OutOfScale",
            ErrorCode::UnsupportedOrder => "UnsupportedOrder",
            ErrorCode::InconsistentMatrix => "InconsistentMatrix",
            ErrorCode::IncompleteHierarchy => "IncompleteHierarchy",
            ErrorCode::BrokenReference => "BrokenReference",
            ErrorCode::DuplicateLink => "DuplicateLink",
            ErrorCode::InvalidLink => "InvalidLink",
            ErrorCode::InvalidScorecard => "InvalidScorecard",
            ErrorCode::NameResolution => "NameResolution",
            ErrorCode::UnboundName => "UnboundName",
            ErrorCode::DivisionByZeroGuardTripped => "DivisionByZeroGuardTripped",
            ErrorCode::CyclicAuxiliaries => "CyclicAuxiliaries",
            ErrorCode::InvalidModel => "InvalidModel",
            ErrorCode::InvalidScenario => "InvalidScenario",
            ErrorCode::ScenarioLimitExceeded => "ScenarioLimitExceeded",
            ErrorCode::EmptyGoal => "EmptyGoal",
            ErrorCode::WrongEvidence => "WrongEvidence",
            ErrorCode::OutOfOrder => "OutOfOrder",
            ErrorCode::ConsensusNotReached => "ConsensusNotReached",
            ErrorCode::TooFewCriteria => "TooFewCriteria",
            ErrorCode::TooFewAlternatives => "TooFewAlternatives",
            ErrorCode::NotFound => "NotFound",
            ErrorCode::CorruptFile => "CorruptFile",
            ErrorCode::Io => "Io",
            ErrorCode::LeaseHeld => "LeaseHeld",
        }
    }

    pub fn parse(s: &str) -> Option<ErrorCode> {
        ErrorCode::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Missing data and storage failures, as opposed to rejected input.
    pub fn is_io(self) -> bool {
        matches!(self, ErrorCode::NotFound | ErrorCode::CorruptFile | ErrorCode::Io)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Delphi(#[from] DelphiError),
    #[error(transparent)]
    Dematel(#[from] DematelError),
    #[error(transparent)]
    Ahp(#[from] AhpError),
    #[error(transparent)]
    Scorecard(#[from] ScorecardError),
    #[error(transparent)]
    Sdm(#[from] SdmError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl Error {
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::Numerics(e) => numerics_code(e),
            Error::Delphi(e) => match e {
                DelphiError::EmptyOpinionSet => ErrorCode::EmptyOpinionSet,
                DelphiError::UnassignedOpinion { .. } => ErrorCode::UnassignedOpinion,
                DelphiError::RoundClosed { .. } => ErrorCode::RoundClosed,
                DelphiError::RoundNotFound { .. } => ErrorCode::NotFound,
                DelphiError::RoundOrder(_) => ErrorCode::OutOfOrder,
                DelphiError::UnknownStatement { .. } => ErrorCode::UnknownStatement,
                DelphiError::RatingOutOfScale { .. } => ErrorCode::RatingOutOfScale,
                DelphiError::IncompleteResponse { .. } => ErrorCode::IncompleteResponse,
                DelphiError::InvalidRankOrder(_) => ErrorCode::InvalidRankOrder,
                DelphiError::UnknownPanelist(_) => ErrorCode::UnknownPanelist,
                DelphiError::NoResponses => ErrorCode::NoResponses,
                DelphiError::DimensionMismatch(_) => ErrorCode::DimensionMismatch,
                DelphiError::Csv(_) => ErrorCode::MalformedInput,
            },
            Error::Dematel(e) => match e {
                DematelError::NotSquare { .. } => ErrorCode::NotSquare,
                DematelError::DimensionMismatch { .. } => ErrorCode::DimensionMismatch,
                DematelError::DuplicateFactor(_) => ErrorCode::DuplicateLabel,
                DematelError::NonZeroDiagonal { .. } => ErrorCode::NonZeroDiagonal,
                DematelError::InfluenceOutOfScale { .. } => ErrorCode::InfluenceOutOfScale,
                DematelError::AllZeroMatrix => ErrorCode::AllZeroMatrix,
                DematelError::DivergentSeries { .. } => ErrorCode::DivergentSeries,
                DematelError::InvalidScale(_) => ErrorCode::MalformedInput,
                DematelError::Numerics(e) => numerics_code(e),
                DematelError::Csv(_) => ErrorCode::MalformedInput,
            },
            Error::Ahp(e) => match e {
                AhpError::NotSquare { .. } => ErrorCode::NotSquare,
                AhpError::DimensionMismatch { .. } => ErrorCode::DimensionMismatch,
                AhpError::DuplicateLabel(_) => ErrorCode::DuplicateLabel,
                AhpError::NonPositiveEntry { .. } => ErrorCode::NonPositiveEntry,
                AhpError::BadDiagonal { .. } => ErrorCode::BadDiagonal,
                AhpError::NotReciprocal { .. } => ErrorCode::NotReciprocal,
                AhpError::OutOfScale { .. } => ErrorCode::OutOfScale,
                AhpError::UnsupportedOrder(_) => ErrorCode::UnsupportedOrder,
                AhpError::InconsistentMatrix { .. } => ErrorCode::InconsistentMatrix,
                AhpError::IncompleteHierarchy(_) => ErrorCode::IncompleteHierarchy,
                AhpError::UnknownNode(_) => ErrorCode::NotFound,
                AhpError::TooFew { what: "criteria", .. } => ErrorCode::TooFewCriteria,
                AhpError::TooFew {
                    what: "alternatives", ..
                } => ErrorCode::TooFewAlternatives,
                AhpError::TooFew { .. } => ErrorCode::MalformedInput,
                AhpError::Numerics(e) => numerics_code(e),
                AhpError::Csv(_) => ErrorCode::MalformedInput,
            },
            Error::Scorecard(e) => match e {
                ScorecardError::BrokenReference(_) => ErrorCode::BrokenReference,
                ScorecardError::DuplicateLink { .. } => ErrorCode::DuplicateLink,
                ScorecardError::InvalidLink(_) => ErrorCode::InvalidLink,
                ScorecardError::InvalidScorecard(_) => ErrorCode::InvalidScorecard,
                ScorecardError::Csv(_) => ErrorCode::MalformedInput,
            },
            Error::Sdm(e) => match e {
                SdmError::NameResolution(_) => ErrorCode::NameResolution,
                SdmError::UnboundName(_) => ErrorCode::UnboundName,
                SdmError::DivisionByZeroGuardTripped { .. } => ErrorCode::DivisionByZeroGuardTripped,
                SdmError::CyclicAuxiliaries(_) => ErrorCode::CyclicAuxiliaries,
                SdmError::InvalidModel(_) => ErrorCode::InvalidModel,
                SdmError::InvalidScenario(_) => ErrorCode::InvalidScenario,
                SdmError::ScenarioLimitExceeded(_) => ErrorCode::ScenarioLimitExceeded,
                SdmError::InvalidScorecard(_) => ErrorCode::InvalidScorecard,
            },
            Error::Pipeline(e) => e.code(),
        }
    }

    /// Structured context for API clients, when the error carries any.
    pub fn details(&self) -> Option<serde_json::Value> {
        use serde_json::json;
        match self {
            Error::Ahp(AhpError::InconsistentMatrix { node, cr, threshold }) => {
                Some(json!({ "node": node, "cr": cr, "threshold": threshold }))
            }
            Error::Delphi(DelphiError::RatingOutOfScale { statement, rating }) => {
                Some(json!({ "statement": statement, "rating": rating }))
            }
            Error::Delphi(DelphiError::RoundClosed { round }) => Some(json!({ "round": round })),
            Error::Sdm(SdmError::DivisionByZeroGuardTripped { step, time }) => {
                Some(json!({ "step": step, "time": time }))
            }
            Error::Sdm(SdmError::CyclicAuxiliaries(path)) => Some(json!({ "cycle": path })),
            Error::Pipeline(PipelineError::CorruptFile { found, expected, .. }) => {
                Some(json!({ "found_version": found, "expected_version": expected }))
            }
            Error::Pipeline(PipelineError::WrongEvidence { expected, got }) => {
                Some(json!({ "expected": expected, "got": got }))
            }
            _ => None,
        }
    }
}

fn numerics_code(e: &NumericsError) -> ErrorCode {
    match e {
        NumericsError::NotSquare { .. } => ErrorCode::NotSquare,
        NumericsError::Singular { .. } => ErrorCode::Singular,
        NumericsError::NoConvergence { .. } => ErrorCode::NoConvergence,
        NumericsError::NonPositiveEntry { .. } => ErrorCode::NonPositiveEntry,
        NumericsError::Shape { .. } => ErrorCode::DimensionMismatch,
        NumericsError::NonFinite { .. } => ErrorCode::MalformedInput,
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

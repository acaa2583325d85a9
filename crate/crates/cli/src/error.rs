use std::io;
use std::path::PathBuf;

use rnnctl::activation::ActivationError;
use rnnctl::controllability::ControllabilityError;
use rnnctl::mollify::MollifyError;
use rnnctl::reach::ReachError;
use rnnctl::simulate::SimulateError;
use rnnctl::steer2d::Steer2dError;
use rnnctl::systems::SystemError;
use serde::Serialize;
use thiserror::Error;

use crate::svg::PlotError;

/// Domain failures; each maps to exit code 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Activation(#[from] ActivationError),
    #[error(transparent)]
    Controllability(#[from] ControllabilityError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Mollify(#[from] MollifyError),
    #[error(transparent)]
    Steer2d(#[from] Steer2dError),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
    #[error("cannot parse {}: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

fn activation_kind(e: &ActivationError) -> &'static str {
    match e {
        ActivationError::Domain(_) => "DomainError",
        ActivationError::AtLimit { .. } => "RangeError",
        ActivationError::Unknown(_) => "UnknownActivation",
    }
}

fn simulate_kind(e: &SimulateError) -> &'static str {
    match e {
        SimulateError::Dimension(_) => "DimensionError",
        SimulateError::NonFiniteState { .. } => "NonFiniteError",
        SimulateError::SpeedBound { .. } => "SpeedBoundViolation",
        SimulateError::InvalidStep(_)
        | SimulateError::StepTooLarge { .. }
        | SimulateError::HorizonMismatch { .. }
        | SimulateError::InvalidControl(_) => "DomainError",
    }
}

impl CliError {
    /// Stable error name reported in the `error` field.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::System(e) => match e {
                SystemError::Dimension(_) => "DimensionError",
                SystemError::NonFinite(_) => "NonFiniteError",
                SystemError::RankDeficient { .. } => "RankDeficient",
                SystemError::GridTooCoarse(_) => "DomainError",
                SystemError::Activation(a) => activation_kind(a),
            },
            CliError::Activation(e) => activation_kind(e),
            CliError::Controllability(e) => match e {
                ControllabilityError::Dimension(_) => "DimensionError",
                ControllabilityError::CertificateMismatch { .. } => "CertificateMismatch",
                ControllabilityError::InvalidViolation { .. } => "DomainError",
            },
            CliError::Simulate(e) => simulate_kind(e),
            CliError::Mollify(e) => match e {
                MollifyError::Dimension(_) => "DimensionError",
                MollifyError::Simulate(s) => simulate_kind(s),
                MollifyError::Domain(_) | MollifyError::WindowOverlap { .. } => "DomainError",
            },
            CliError::Steer2d(e) => match e {
                Steer2dError::Range { .. } => "RangeError",
                Steer2dError::NotAdmissible(_) => "NotAdmissible",
                Steer2dError::NoBracket { .. } => "NoBracket",
                Steer2dError::NonMonotone { .. } => "NonMonotone",
                Steer2dError::Unresolved { .. } => "Unresolved",
                Steer2dError::Simulate(s) => simulate_kind(s),
                Steer2dError::Activation(a) => activation_kind(a),
                Steer2dError::NotCanonical(_)
                | Steer2dError::NotInvertible
                | Steer2dError::OnSingularLine
                | Steer2dError::KLookupOutOfRange { .. }
                | Steer2dError::Domain(_) => "DomainError",
            },
            CliError::Reach(e) => match e {
                ReachError::Dimension(_) => "DimensionError",
                ReachError::Malformed(_) => "ParseError",
                ReachError::Simulate(s) => simulate_kind(s),
                ReachError::Domain(_) => "DomainError",
            },
            CliError::Plot(PlotError::NotPlanar { .. }) => "NotPlanar",
            CliError::Read { .. } | CliError::Write { .. } => "IoError",
            CliError::Parse { .. } => "ParseError",
            CliError::Invalid(_) => "DomainError",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport { error: self.kind().to_string(), message: self.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub error: String,
    pub message: String,
}

//! Consensus as a game: a deterministic simulator for rotating-leader quorum
//! consensus under partial synchrony with correct, rational, crash and
//! Byzantine players, plus falsifiers for the equilibrium notions built on it.
//!
//! Payoff-carrying types are generic over [`Scalar`]; the aliases below fix
//! the common choices.

pub mod analysis;
pub mod bft_extension;
pub mod config;
pub mod model;
pub mod protocol;
pub mod scalar;
pub mod scheduler;
pub mod sim;
pub mod strategies;
pub mod trace;

pub use config::{ProtocolVariant, ScenarioConfig};
pub use model::{
    detect_equivocation, Digest, EquivocationProof, KeyRing, MessageBody, ModelError, PlayerId, Role, RoleKind,
    SignedMessage, UtilityParams, Value,
};
pub use scalar::Scalar;
pub use scheduler::{validate_schedule, SchedulerPolicy};
pub use sim::{simulate, RunOptions};
pub use strategies::{ByzantineKind, DisagreePlan, StrategyKind};
pub use trace::RunTrace;

/// Exact rational payoffs.
pub type Rational = num_rational::Rational64;

pub type ScenarioF64 = ScenarioConfig<f64>;
pub type ScenarioF32 = ScenarioConfig<f32>;
pub type ScenarioExact = ScenarioConfig<Rational>;
pub type UtilityParamsF64 = UtilityParams<f64>;
pub type UtilityParamsExact = UtilityParams<Rational>;
pub type ReportF64 = analysis::EquilibriumReport<f64>;
pub type ReportExact = analysis::EquilibriumReport<Rational>;

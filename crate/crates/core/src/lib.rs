//! Opinion-formation differential games on social graphs.
//!
//! The continuous-time Hegselmann-Krause dynamics with an input delay are
//! treated as a noncooperative game: each agent steers her own opinion with a
//! scalar influence effort and pays for terminal disagreement with her graph
//! neighbors (plus, for stubborn agents, deviation from her prejudice). The
//! [`openloop`] module evaluates the closed-form open-loop Nash equilibrium
//! controls and opinion trajectories; [`receding`] re-solves the game on a
//! confidence-filtered graph in a receding-horizon loop; [`verify`] provides
//! independent oracles (forward ODE integration, a discretized game, cost and
//! deviation checks) plus outcome classification.
//!
//! Agent indices are 0-based throughout.

pub mod graph;
pub mod matfun;
pub mod openloop;
pub mod receding;
pub mod verify;

pub use graph::{
    agent_laplacian, confidence_filter, dynamics_matrix, AgentStructure, FilterMode, NeighborSets,
    SocialGraph,
};
pub use openloop::{sample_trajectory, GameParams, GameSetup, Trajectory};
pub use receding::{baseline_run, rh_run, HorizonConfig, RhFailure};
pub use verify::{classify_outcome, Outcome, OutcomeClass};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("edge list line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("edge list line {line}: self-loop on agent {agent}")]
    SelfLoop { line: usize, agent: usize },

    #[error("social graph is disconnected")]
    Disconnected,

    #[error("agent index {agent} out of range for {n} agents")]
    IndexOutOfRange { agent: usize, n: usize },

    #[error("agent {agent}: no candidate opinion within the confidence bound")]
    EmptyNeighborhood { agent: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("argument {value} outside [{min}, {max}]")]
    Domain { value: f64, min: f64, max: f64 },

    #[error(
        "matrix numerically singular (pivot {pivot:.3e} <= {threshold:.3e}); \
         no unique open-loop Nash equilibrium for these parameters"
    )]
    SingularMatrix { pivot: f64, threshold: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("trajectory grid too coarse: max step {step} exceeds {limit}")]
    GridTooCoarse { step: f64, limit: f64 },

    #[error("state diverged to non-finite values at t = {t}")]
    StateDiverged { t: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

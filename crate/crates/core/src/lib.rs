//! Deep Q-learning for optimal stopping and swing options.
//!
//! The crate learns the action-value function of a (multiple) stopping problem
//! with a small dense network trained by DQN, then brackets the option value
//! with a primal lower bound from the greedy policy and a dual upper bound from
//! a nested-simulation martingale.
//!
//! Module map:
//!
//! - [`mathcore`]: dense ReLU network, exact backprop, RMSProp.
//! - [`market`]: exponential Ornstein-Uhlenbeck paths and call payoffs.
//! - [`mdp`]: stopping MDP with waiting period, state encoding, episodes.
//! - [`qlearn`]: replay buffer, epsilon schedule, TD targets, training loop.
//! - [`bounds`]: lower/upper bounds, pathwise-sup recursion, confidence interval.
//! - [`oracle`]: exact backward induction on finite Markov chains.
//! - [`config`], [`report`]: run configuration and the JSON bounds report.

pub mod bounds;
pub mod config;
pub mod error;
pub mod market;
pub mod mathcore;
pub mod mdp;
pub mod oracle;
pub mod process;
pub mod qlearn;
pub mod report;
pub mod rng;

pub use bounds::{
    confidence_interval, greedy_exercise_times, lower_bound, pathwise_sup, snell_from_q,
    upper_bound, DualEvaluation, ExerciseRule, NestedMc, PolicyEvaluation,
};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use market::{MarketModel, PathSet, PayoffKind};
pub use mathcore::{DenseNet, GradientSet, RmsProp, RmsPropConfig};
pub use mdp::{Action, StoppingState};
pub use oracle::{brute_force_value, solve_chain, ChainSpec, ExactSolution, MarkovChain};
pub use process::{NetQ, Process, QFunction};
pub use qlearn::{train, Experience, ReplayBuffer, TrainConfig, TrainDiagnostics};
pub use report::BoundsReport;

//! Simulation and evaluation engine for human-agent collaboration episodes.
//!
//! The crate runs scripted or LLM-backed collaboration episodes on a travel
//! planning task and scores the resulting traces with effort-scaling metrics:
//! overall utility (best performance reached anywhere in the episode),
//! refinement gain (improvement past the first output update), and usability
//! drop (cost of stopping at the first long run of no-progress rounds).
//!
//! Layering, bottom to top: [`trace`] defines the episode data model,
//! [`metrics`] the aggregate statistics, [`env`] the travel planning world,
//! [`eval`] the plan scorer, [`policy`] the agent/user/rater decision makers,
//! [`engine`] the episode and batch runners, and [`config`] the run
//! configuration shared by the CLI and the Python bindings.

pub mod config;
pub mod engine;
pub mod env;
pub mod eval;
pub mod jsonl;
pub mod metrics;
pub mod policy;
pub mod trace;

//! A desk-scale household rearrangement lab.
//!
//! The crate models multi-room households on small grids, simulates a robot
//! with an egocentric partial view, maintains a belief scene graph, turns
//! planner text into high-level actions, and trains a structured plan policy
//! with imitation learning followed by iterated grow/filter/refit rounds.
//!
//! Module map:
//!
//! * [`world`]: scenes, preferences, tasks, and ground-truth placement state.
//! * [`sim`]: low-level actions, observations, rewards and the horizon.
//! * [`controller`]: high-level action execution on top of the simulator.
//! * [`context`]: belief scene graph and prompt rendering.
//! * [`plan`]: plan grammar, parser and canonical renderer.
//! * [`planners`]: demonstrator, trainable policy, HTTP endpoint, baseline.
//! * [`pipeline`]: episode rollouts, datasets, imitation and self-training.
//! * [`eval`]: metrics, aggregation and experiment protocols.

pub mod builtin;
pub mod context;
pub mod controller;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod plan;
pub mod planners;
pub mod seed;
pub mod sim;
pub mod trace;
pub mod world;

pub use context::{Prompt, SceneGraph};
pub use controller::{Controller, ExecResult, FailureReason};
pub use error::{Error, Result};
pub use eval::{AggregateReport, EpisodeMetrics};
pub use pipeline::{Dataset, DatasetKind, InteractionRecord};
pub use plan::{parse_plan, render_plan, HighLevelAction, Plan};
pub use planners::{PlanDecision, PlannerContext, PolicyParams};
pub use sim::{LowLevelAction, Observation, Simulator, StepResult};
pub use world::{PreferenceDataset, Scene, TaskSpec, WorldState};

//! Planners: the oracle demonstrator, the trainable policy, an HTTP text
//! endpoint and the untrained baseline.
//!
//! Every planner except the endpoint commits to one [`PlanDecision`] per
//! iteration and renders it with the same action templates, so a plan's
//! effect on the world is attributable to a single decision.

mod demonstrator;
mod endpoint;
mod policy;

use serde::{Deserialize, Serialize};

pub use demonstrator::demonstrator_plan;
pub use endpoint::{endpoint_plan, EndpointConfig};
pub use policy::{
    baseline_plan, baseline_weight, decision_probabilities, greedy_plan, policy_fit, policy_nll,
    policy_nll_grad, policy_plan, score, FitConfig, FitOutcome, Gradient, PolicyParams, Vocab,
    EXPLORE_UNVISITED_WEIGHT, PARAMS_VERSION,
};

use crate::context::{render_prompt, SceneGraph};
use crate::error::Result;
use crate::plan::{render_actions, HighLevelAction, Plan};
use crate::world::{PreferenceDataset, Scene};

/// What a planner sees at iteration `iteration`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerContext {
    pub graph: SceneGraph,
    pub held: Option<String>,
    pub prompt: String,
    pub iteration: usize,
}

impl PlannerContext {
    pub fn new(graph: SceneGraph, iteration: usize) -> Self {
        let prompt = render_prompt(&graph).rendered;
        PlannerContext {
            held: graph.held.clone(),
            graph,
            prompt,
            iteration,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanDecision {
    Explore { rooms: Vec<String> },
    Rearrange { object: String, receptacle: String },
}

impl PlanDecision {
    pub fn is_explore(&self) -> bool {
        matches!(self, PlanDecision::Explore { .. })
    }
}

/// Rooms an exploration plan visits: the unvisited ones in id order, or
/// every room once all have been visited.
pub fn exploration_rooms(graph: &SceneGraph) -> Vec<String> {
    let unvisited = graph.unvisited_rooms();
    if unvisited.is_empty() {
        graph.rooms.iter().map(|r| r.name.clone()).collect()
    } else {
        unvisited
    }
}

/// Candidate decisions in a fixed order: explore first, then objects in
/// graph order crossed with receptacles in graph order. While an object is
/// held, only that object can be rearranged.
pub fn candidates(graph: &SceneGraph) -> Vec<PlanDecision> {
    let mut out = vec![PlanDecision::Explore {
        rooms: exploration_rooms(graph),
    }];
    let targets: Vec<_> = graph
        .receptacle_refs()
        .filter(|&at| graph.receptacle(at).has_space())
        .collect();
    let rearrange = |object: &str, receptacle: &str| PlanDecision::Rearrange {
        object: object.to_string(),
        receptacle: receptacle.to_string(),
    };
    if let Some(held) = &graph.held {
        for &r in &targets {
            out.push(rearrange(held, &graph.receptacle(r).name));
        }
        return out;
    }
    for (obj, at) in graph.objects() {
        for &r in &targets {
            if r != at {
                out.push(rearrange(obj, &graph.receptacle(r).name));
            }
        }
    }
    out
}

/// Whether `decision` is one of the candidates of `graph`. Explore matches
/// regardless of the room list.
pub fn is_candidate(graph: &SceneGraph, decision: &PlanDecision) -> bool {
    match decision {
        PlanDecision::Explore { .. } => true,
        PlanDecision::Rearrange { object, receptacle } => {
            let Some(target) = graph.find_receptacle(receptacle) else {
                return false;
            };
            if !graph.receptacle(target).has_space() {
                return false;
            }
            match &graph.held {
                Some(h) => h == object,
                None => graph.locate_object(object).is_some_and(|at| at != target),
            }
        }
    }
}

/// The action template for a decision.
pub fn decision_actions(graph: &SceneGraph, decision: &PlanDecision) -> Vec<HighLevelAction> {
    use HighLevelAction::*;
    match decision {
        PlanDecision::Explore { rooms } => rooms.iter().cloned().map(GoTo).collect(),
        PlanDecision::Rearrange { object, receptacle } => {
            let o = object.clone();
            let r = receptacle.clone();
            if graph.held.as_deref() == Some(object) {
                return vec![GoTo(r.clone()), LookAt(r.clone()), Place(o, r)];
            }
            let from = graph
                .locate_object(object)
                .map(|at| graph.receptacle(at).name.clone())
                .unwrap_or_else(|| o.clone());
            vec![
                GoTo(o.clone()),
                LookAt(from),
                PickUp(o.clone()),
                GoTo(r.clone()),
                LookAt(r.clone()),
                Place(o, r),
            ]
        }
    }
}

pub fn decision_plan(graph: &SceneGraph, decision: &PlanDecision) -> Plan {
    Plan::from_actions(decision_actions(graph, decision))
}

/// Recovers the decision behind a plan that follows one of the templates.
/// Plans of only room visits are explorations; a plan whose last place
/// action follows a pick-up (or starts from a held object) is a
/// rearrangement. Anything else has no single decision.
pub fn infer_decision(graph: &SceneGraph, actions: &[HighLevelAction]) -> Option<PlanDecision> {
    if actions.is_empty() {
        return None;
    }
    if actions
        .iter()
        .all(|a| matches!(a, HighLevelAction::GoTo(r) if graph.room_index(r).is_some()))
    {
        return Some(PlanDecision::Explore {
            rooms: actions
                .iter()
                .map(|a| match a {
                    HighLevelAction::GoTo(r) => r.clone(),
                    _ => unreachable!(),
                })
                .collect(),
        });
    }
    let places: Vec<_> = actions
        .iter()
        .filter_map(|a| match a {
            HighLevelAction::Place(o, r) => Some((o, r)),
            _ => None,
        })
        .collect();
    let picks = actions
        .iter()
        .filter(|a| matches!(a, HighLevelAction::PickUp(_)))
        .count();
    match (places.as_slice(), picks) {
        ([(o, r)], 1) if actions.contains(&HighLevelAction::PickUp((*o).clone())) => {
            Some(PlanDecision::Rearrange {
                object: (*o).clone(),
                receptacle: (*r).clone(),
            })
        }
        ([(o, r)], 0) if graph.held.as_deref() == Some(o.as_str()) => {
            Some(PlanDecision::Rearrange {
                object: (*o).clone(),
                receptacle: (*r).clone(),
            })
        }
        _ => None,
    }
}

/// Planner selection for an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "planner", rename_all = "snake_case")]
pub enum PlannerKind {
    Demonstrator,
    Policy {
        params: PolicyParams,
    },
    /// The zero-temperature limit of the policy.
    Greedy {
        params: PolicyParams,
    },
    Baseline {
        seed: u64,
    },
    Endpoint {
        config: EndpointConfig,
    },
}

impl PlannerKind {
    pub fn label(&self) -> &'static str {
        match self {
            PlannerKind::Demonstrator => "demonstrator",
            PlannerKind::Policy { .. } => "policy",
            PlannerKind::Greedy { .. } => "greedy",
            PlannerKind::Baseline { .. } => "baseline",
            PlannerKind::Endpoint { .. } => "endpoint",
        }
    }

    pub fn is_demonstrator(&self) -> bool {
        matches!(self, PlannerKind::Demonstrator)
    }
}

/// A planner's answer: the response text and, for structured planners, the
/// decision it rendered.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub response: String,
    pub decision: Option<PlanDecision>,
}

impl Proposal {
    fn structured(graph: &SceneGraph, decision: PlanDecision) -> Self {
        Proposal {
            response: render_actions(&decision_actions(graph, &decision)),
            decision: Some(decision),
        }
    }
}

/// Runs one planner call. `scene` and `prefs` are consulted only by the
/// demonstrator.
pub fn propose(
    kind: &PlannerKind,
    ctx: &PlannerContext,
    scene: &Scene,
    prefs: &PreferenceDataset,
    seed: u64,
) -> Result<Proposal> {
    let decision = match kind {
        PlannerKind::Demonstrator => demonstrator::decide(ctx, scene, prefs, seed),
        PlannerKind::Policy { params } => policy::sample(ctx, params, seed),
        PlannerKind::Greedy { params } => policy::argmax(ctx, params),
        PlannerKind::Baseline { seed: weights } => {
            policy::sample(ctx, &PolicyParams::baseline_for(*weights, &ctx.graph), seed)
        }
        PlannerKind::Endpoint { config } => {
            let response = endpoint::complete(&ctx.prompt, config)?;
            return Ok(Proposal {
                response,
                decision: None,
            });
        }
    };
    Ok(Proposal::structured(&ctx.graph, decision))
}

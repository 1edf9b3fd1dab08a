//! Belief scene graph and planner prompt.
//!
//! The graph starts with one node per room and nothing else. Receptacles and
//! objects are added only as observations reveal them. When a receptacle's
//! contents are visible its object list is replaced wholesale, so stale
//! beliefs converge to the truth on revisit.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::sim::Observation;
use crate::world::{object_type, Scene};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptacleNode {
    pub name: String,
    pub rec_type: String,
    pub capacity: u32,
    pub contents_known: bool,
    pub objects: Vec<String>,
}

impl ReceptacleNode {
    pub fn has_space(&self) -> bool {
        (self.objects.len() as u32) < self.capacity
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomNode {
    pub name: String,
    pub room_type: String,
    pub visited: bool,
    pub receptacles: Vec<ReceptacleNode>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub rooms: Vec<RoomNode>,
    pub held: Option<String>,
}

/// Location of a receptacle node: `(room index, receptacle index)`.
pub type NodeRef = (usize, usize);

impl SceneGraph {
    pub fn init(scene: &Scene) -> SceneGraph {
        SceneGraph {
            rooms: scene
                .rooms
                .iter()
                .map(|r| RoomNode {
                    name: r.name.clone(),
                    room_type: r.room_type.clone(),
                    visited: false,
                    receptacles: Vec::new(),
                })
                .collect(),
            held: None,
        }
    }

    /// Folds an observation taken in room `obs.pose.room` into the graph.
    /// Receptacle nodes keep the scene's declaration order within a room.
    pub fn update(&mut self, obs: &Observation, scene: &Scene) {
        let room_id = obs.pose.room;
        for seen in &obs.observed {
            let order = |name: &str| scene.rec_id(name).map_or(usize::MAX, |id| id.index);
            let room = &mut self.rooms[room_id];
            let pos = match room.receptacles.iter().position(|r| r.name == seen.name) {
                Some(p) => p,
                None => {
                    let at = room
                        .receptacles
                        .iter()
                        .position(|r| order(&r.name) > order(&seen.name))
                        .unwrap_or(room.receptacles.len());
                    room.receptacles.insert(
                        at,
                        ReceptacleNode {
                            name: seen.name.clone(),
                            rec_type: seen.rec_type.clone(),
                            capacity: seen.capacity,
                            contents_known: false,
                            objects: Vec::new(),
                        },
                    );
                    at
                }
            };
            if let Some(objects) = &seen.objects {
                for o in objects {
                    self.remove_object(o);
                }
                let node = &mut self.rooms[room_id].receptacles[pos];
                node.contents_known = true;
                node.objects = objects.clone();
            }
        }
        self.held = obs.held.clone();
        if let Some(h) = obs.held.clone() {
            self.remove_object(&h);
        }
    }

    fn remove_object(&mut self, obj: &str) {
        for room in &mut self.rooms {
            for rec in &mut room.receptacles {
                rec.objects.retain(|o| o != obj);
            }
        }
    }

    pub fn mark_visited(&mut self, room: usize) {
        self.rooms[room].visited = true;
    }

    pub fn room_index(&self, name: &str) -> Option<usize> {
        self.rooms.iter().position(|r| r.name == name)
    }

    pub fn find_receptacle(&self, name: &str) -> Option<NodeRef> {
        self.rooms.iter().enumerate().find_map(|(ri, room)| {
            room.receptacles
                .iter()
                .position(|r| r.name == name)
                .map(|k| (ri, k))
        })
    }

    pub fn receptacle(&self, at: NodeRef) -> &ReceptacleNode {
        &self.rooms[at.0].receptacles[at.1]
    }

    /// Receptacle believed to hold `obj`.
    pub fn locate_object(&self, obj: &str) -> Option<NodeRef> {
        self.receptacle_refs()
            .find(|&at| self.receptacle(at).objects.iter().any(|o| o == obj))
    }

    pub fn receptacle_refs(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.rooms
            .iter()
            .enumerate()
            .flat_map(|(ri, r)| (0..r.receptacles.len()).map(move |k| (ri, k)))
    }

    pub fn receptacle_names(&self) -> Vec<String> {
        self.receptacle_refs()
            .map(|at| self.receptacle(at).name.clone())
            .collect()
    }

    /// Discovered objects in graph order, excluding the held one.
    pub fn objects(&self) -> impl Iterator<Item = (&str, NodeRef)> + '_ {
        self.receptacle_refs().flat_map(move |at| {
            self.receptacle(at)
                .objects
                .iter()
                .map(move |o| (o.as_str(), at))
        })
    }

    pub fn unvisited_rooms(&self) -> Vec<String> {
        self.rooms
            .iter()
            .filter(|r| !r.visited)
            .map(|r| r.name.clone())
            .collect()
    }

    pub fn unvisited_fraction(&self) -> f64 {
        if self.rooms.is_empty() {
            return 0.0;
        }
        self.rooms.iter().filter(|r| !r.visited).count() as f64 / self.rooms.len() as f64
    }

    /// Every name the agent could legitimately refer to.
    pub fn knows(&self, name: &str) -> bool {
        self.room_index(name).is_some()
            || self.find_receptacle(name).is_some()
            || self.locate_object(name).is_some()
            || self.held.as_deref() == Some(name)
    }

    /// Object types present in the graph, for vocabulary building.
    pub fn object_types(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .objects()
            .map(|(o, _)| object_type(o).to_string())
            .chain(self.held.as_deref().map(|h| object_type(h).to_string()))
            .collect();
        v.sort();
        v.dedup();
        v
    }
}

pub const INSTRUCTIONS: &str = "\
You are the planner of a household robot. Plan the next steps to explore the house and put \
misplaced objects onto their correct receptacles.
The robot holds at most one object at a time and only knows what it has already seen.
Available high-level actions:
- go to <object, receptacle or room>
- look at <object or receptacle>
- pick up <object>
- place <object> on <receptacle>
Use exact names from the current state. Answer with a comma-separated list of actions.";

pub const EXAMPLE_EXPLORE: &str = "\
Example (exploring rooms):
kitchen 0: visited
  kitchen 0 counter 1: [pan 1]
living room 0: unvisited
bedroom 0: unvisited
You are holding: nothing
Plan: go to living room 0, go to bedroom 0";

pub const EXAMPLE_MOVE: &str = "\
Example (moving one object):
kitchen 0: visited
  kitchen 0 table 6: [pan 1]
  kitchen 0 counter 1: []
You are holding: nothing
Plan: go to pan 1, look at kitchen 0 table 6, pick up pan 1, go to kitchen 0 counter 1, \
look at kitchen 0 counter 1, place pan 1 on kitchen 0 counter 1";

pub const QUERY: &str =
    "What is the next plan? Reply with a comma-separated sequence of high-level actions.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub instructions: String,
    pub examples: [String; 2],
    pub state_description: String,
    pub rendered: String,
}

pub fn describe_state(graph: &SceneGraph) -> String {
    let mut out = String::new();
    for room in &graph.rooms {
        let status = if room.visited { "visited" } else { "unvisited" };
        let _ = writeln!(out, "{}: {status}", room.name);
        for rec in &room.receptacles {
            if rec.contents_known {
                let _ = writeln!(out, "  {}: [{}]", rec.name, rec.objects.join(", "));
            } else {
                let _ = writeln!(out, "  {}: contents unknown", rec.name);
            }
        }
    }
    let _ = write!(
        out,
        "You are holding: {}",
        graph.held.as_deref().unwrap_or("nothing")
    );
    out
}

/// Renders the prompt. Sections always appear in the order INSTRUCTIONS,
/// EXAMPLES, CURRENT STATE, QUERY.
pub fn render_prompt(graph: &SceneGraph) -> Prompt {
    let state_description = describe_state(graph);
    let rendered = format!(
        "INSTRUCTIONS\n{INSTRUCTIONS}\n\nEXAMPLES\n{EXAMPLE_EXPLORE}\n\n{EXAMPLE_MOVE}\n\n\
         CURRENT STATE\n{state_description}\n\nQUERY\n{QUERY}\n"
    );
    Prompt {
        instructions: INSTRUCTIONS.to_string(),
        examples: [EXAMPLE_EXPLORE.to_string(), EXAMPLE_MOVE.to_string()],
        state_description,
        rendered,
    }
}

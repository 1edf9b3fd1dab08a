//! Low-level simulation: actions, egocentric observations and rewards.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{
    Cell, Gaze, Heading, Pose, PreferenceDataset, RecId, Scene, TaskSpec, Tier, WorldState,
    DEFAULT_HORIZON,
};

/// Chebyshev radius of the view.
pub const VIEW_RADIUS: i32 = 5;
/// How many cells straight ahead grab/release reaches.
pub const REACH: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowLevelAction {
    MoveForward,
    TurnLeft,
    TurnRight,
    LookUp,
    LookDown,
    GrabRelease,
}

impl LowLevelAction {
    pub const ALL: [LowLevelAction; 6] = [
        LowLevelAction::MoveForward,
        LowLevelAction::TurnLeft,
        LowLevelAction::TurnRight,
        LowLevelAction::LookUp,
        LowLevelAction::LookDown,
        LowLevelAction::GrabRelease,
    ];
}

impl fmt::Display for LowLevelAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LowLevelAction::MoveForward => "move_forward",
            LowLevelAction::TurnLeft => "turn_left",
            LowLevelAction::TurnRight => "turn_right",
            LowLevelAction::LookUp => "look_up",
            LowLevelAction::LookDown => "look_down",
            LowLevelAction::GrabRelease => "grab_release",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoOpReason {
    Blocked,
    GazeLimit,
    NothingInReach,
    GazeMismatch,
    ReceptacleEmpty,
    ReceptacleFull,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Grabbed { object: String, receptacle: String },
    Placed { object: String, receptacle: String },
    NoOp { reason: NoOpReason },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedReceptacle {
    pub name: String,
    pub rec_type: String,
    pub tier: Tier,
    pub capacity: u32,
    /// `None` when the gaze does not match the receptacle tier.
    pub objects: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub observed: Vec<ObservedReceptacle>,
    pub pose: Pose,
    pub held: Option<String>,
    pub t: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: i32,
    pub event: Option<Event>,
    pub done: bool,
}

/// Whether a receptacle at `target` is inside the view cone of `pose`:
/// within Chebyshev radius 5 and at most 45 degrees off the heading.
pub fn in_view(pose: &Pose, target: Cell) -> bool {
    let (dx, dy) = (target.0 - pose.cell.0, target.1 - pose.cell.1);
    if dx.abs().max(dy.abs()) > VIEW_RADIUS {
        return false;
    }
    let (hx, hy) = pose.heading.delta();
    let ahead = dx * hx + dy * hy;
    let lateral = dx * hy - dy * hx;
    ahead >= 1 && lateral.abs() <= ahead
}

/// Stateless transition function over [`WorldState`].
#[derive(Clone, Copy)]
pub struct Simulator<'a> {
    pub scene: &'a Scene,
    pub prefs: &'a PreferenceDataset,
    pub horizon: u32,
}

impl<'a> Simulator<'a> {
    pub fn new(scene: &'a Scene, prefs: &'a PreferenceDataset) -> Self {
        Simulator {
            scene,
            prefs,
            horizon: DEFAULT_HORIZON,
        }
    }

    pub fn with_horizon(mut self, horizon: u32) -> Self {
        self.horizon = horizon;
        self
    }

    /// Initial state: first walkable cell of the first room, facing north,
    /// gaze level, empty hand. The episode seed does not influence the
    /// start; it is accepted so callers can thread one seed per episode.
    pub fn reset(&self, task: &TaskSpec, _seed: u64) -> Result<(WorldState, Observation)> {
        if task.scene_id != self.scene.scene_id {
            return Err(Error::SceneMismatch {
                task: task.task_id.clone(),
                scene: self.scene.scene_id.clone(),
            });
        }
        let mut placements: BTreeMap<String, Vec<String>> = self
            .scene
            .receptacles()
            .map(|(_, r)| (r.name.clone(), Vec::new()))
            .collect();
        for (obj, rec) in &task.placements {
            let slot = placements
                .get_mut(rec)
                .ok_or_else(|| Error::UnknownName(rec.clone()))?;
            slot.push(obj.name());
        }
        let state = WorldState {
            placements,
            held: None,
            pose: Pose {
                room: 0,
                cell: self.scene.start_cell(),
                heading: Heading::N,
                gaze: Gaze::Level,
            },
            t: 0,
            horizon: self.horizon,
            grab_target: None,
        };
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    pub fn observe(&self, state: &WorldState) -> Observation {
        let room = &self.scene.rooms[state.pose.room];
        let observed = room
            .receptacles
            .iter()
            .filter(|r| in_view(&state.pose, r.cell))
            .map(|r| ObservedReceptacle {
                name: r.name.clone(),
                rec_type: r.rec_type.clone(),
                tier: r.tier,
                capacity: r.capacity,
                objects: (Gaze::for_tier(r.tier) == state.pose.gaze)
                    .then(|| state.placements[&r.name].clone()),
            })
            .collect();
        Observation {
            observed,
            pose: state.pose,
            held: state.held.clone(),
            t: state.t,
        }
    }

    /// Receptacle hit by the grab ray: the first receptacle cell within
    /// [`REACH`] cells straight ahead. Non-walkable cells stop the ray.
    pub fn ray_target(&self, pose: &Pose) -> Option<RecId> {
        let room = &self.scene.rooms[pose.room];
        let mut cell = pose.cell;
        for _ in 0..REACH {
            cell = cell.offset(pose.heading.delta());
            if let Some(index) = room.receptacle_at(cell) {
                return Some(RecId {
                    room: pose.room,
                    index,
                });
            }
            if !room.is_standable(cell) {
                return None;
            }
        }
        None
    }

    pub fn step(&self, state: &mut WorldState, action: LowLevelAction) -> Result<StepResult> {
        if state.done() {
            return Err(Error::EpisodeFinished(state.t));
        }
        let (event, reward) = self.apply(state, action);
        state.t += 1;
        Ok(StepResult {
            observation: self.observe(state),
            reward,
            event,
            done: state.done(),
        })
    }

    fn apply(&self, state: &mut WorldState, action: LowLevelAction) -> (Option<Event>, i32) {
        let noop = |reason| (Some(Event::NoOp { reason }), 0);
        let pose = &mut state.pose;
        match action {
            LowLevelAction::MoveForward => {
                match self.scene.forward(pose.room, pose.cell, pose.heading) {
                    Some((room, cell)) => {
                        pose.room = room;
                        pose.cell = cell;
                        (None, 0)
                    }
                    None => noop(NoOpReason::Blocked),
                }
            }
            LowLevelAction::TurnLeft => {
                pose.heading = pose.heading.left();
                (None, 0)
            }
            LowLevelAction::TurnRight => {
                pose.heading = pose.heading.right();
                (None, 0)
            }
            LowLevelAction::LookUp => match pose.gaze.up() {
                Some(g) => {
                    pose.gaze = g;
                    (None, 0)
                }
                None => noop(NoOpReason::GazeLimit),
            },
            LowLevelAction::LookDown => match pose.gaze.down() {
                Some(g) => {
                    pose.gaze = g;
                    (None, 0)
                }
                None => noop(NoOpReason::GazeLimit),
            },
            LowLevelAction::GrabRelease => self.grab_release(state),
        }
    }

    fn grab_release(&self, state: &mut WorldState) -> (Option<Event>, i32) {
        let noop = |reason| (Some(Event::NoOp { reason }), 0);
        let Some(id) = self.ray_target(&state.pose) else {
            return noop(NoOpReason::NothingInReach);
        };
        let rec = self.scene.receptacle(id);
        if Gaze::for_tier(rec.tier) != state.pose.gaze {
            return noop(NoOpReason::GazeMismatch);
        }
        let contents = state
            .placements
            .get_mut(&rec.name)
            .expect("every receptacle has a placement list");
        match state.held.take() {
            Some(obj) => {
                if contents.len() as u32 >= rec.capacity {
                    state.held = Some(obj);
                    return noop(NoOpReason::ReceptacleFull);
                }
                let reward = i32::from(self.prefs.is_correct(self.scene, &obj, id));
                contents.push(obj.clone());
                (
                    Some(Event::Placed {
                        object: obj,
                        receptacle: rec.name.clone(),
                    }),
                    reward,
                )
            }
            None => {
                let pick = state
                    .grab_target
                    .take()
                    .and_then(|want| contents.iter().position(|o| *o == want))
                    .or_else(|| (!contents.is_empty()).then_some(0));
                let Some(pos) = pick else {
                    return noop(NoOpReason::ReceptacleEmpty);
                };
                let obj = contents.remove(pos);
                let reward = -i32::from(self.prefs.is_correct(self.scene, &obj, id));
                state.held = Some(obj.clone());
                (
                    Some(Event::Grabbed {
                        object: obj,
                        receptacle: rec.name.clone(),
                    }),
                    reward,
                )
            }
        }
    }
}

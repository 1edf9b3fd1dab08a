//! High-level action execution.
//!
//! Each high-level action turns into low-level actions that go through
//! [`Simulator::step`]. After every step the belief graph is refreshed from
//! the new observation. Entity names resolve against the belief graph only,
//! so names the agent has not seen are not executable.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::context::{NodeRef, SceneGraph};
use crate::error::{Error, Result};
use crate::plan::HighLevelAction;
use crate::sim::{Event, LowLevelAction, NoOpReason, Simulator, StepResult};
use crate::trace::TraceRecord;
use crate::world::{Cell, Gaze, Heading, Pose, Scene, Tier, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// The name refers to the wrong kind of entity for the verb.
    UnknownEntity,
    /// The name is absent from the belief graph.
    UndiscoveredEntity,
    Unreachable,
    PreconditionFailed,
    ReceptacleFull,
    /// The episode ended while the action was running.
    HorizonReached,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub executed: bool,
    pub reason: Option<FailureReason>,
    pub low_level_count: usize,
    pub rewards_accrued: i32,
    pub events: Vec<Event>,
}

/// Shortest low-level action sequence from `pose` to any state satisfying
/// `goal`. Breadth-first over `(room, cell, heading)`; successors are tried
/// in the order move, turn left, turn right.
pub fn plan_path(
    scene: &Scene,
    pose: &Pose,
    goal: impl Fn(usize, Cell) -> bool,
) -> Option<Vec<LowLevelAction>> {
    type Node = (usize, Cell, Heading);
    let start: Node = (pose.room, pose.cell, pose.heading);
    if goal(start.0, start.1) {
        return Some(Vec::new());
    }
    let mut parent: HashMap<Node, (Node, LowLevelAction)> = HashMap::new();
    let mut queue = VecDeque::from([start]);
    while let Some(node @ (room, cell, heading)) = queue.pop_front() {
        let successors = [
            (
                LowLevelAction::MoveForward,
                scene
                    .forward(room, cell, heading)
                    .map(|(r, c)| (r, c, heading)),
            ),
            (LowLevelAction::TurnLeft, Some((room, cell, heading.left()))),
            (
                LowLevelAction::TurnRight,
                Some((room, cell, heading.right())),
            ),
        ];
        for (action, next) in successors {
            let Some(next) = next else { continue };
            if next == start || parent.contains_key(&next) {
                continue;
            }
            parent.insert(next, (node, action));
            if goal(next.0, next.1) {
                let mut actions = vec![action];
                let mut cur = node;
                while cur != start {
                    let (prev, a) = parent[&cur];
                    actions.push(a);
                    cur = prev;
                }
                actions.reverse();
                return Some(actions);
            }
            queue.push_back(next);
        }
    }
    None
}

/// Path to any cell 4-adjacent to one of `targets` (cells of room `room`).
pub fn navigate_to(
    scene: &Scene,
    pose: &Pose,
    room: usize,
    targets: &[Cell],
) -> Result<Vec<LowLevelAction>> {
    plan_path(scene, pose, |r, c| {
        r == room && targets.iter().any(|t| t.is_adjacent(c))
    })
    .ok_or(Error::Unreachable)
}

/// Turns to face the adjacent `target` cell and sets the gaze for `tier`.
/// A target behind the agent is reached with two left turns.
pub fn orient_and_gaze(pose: &Pose, target: Cell, tier: Tier) -> Vec<LowLevelAction> {
    let mut out = Vec::new();
    if let Some(want) = Heading::towards(pose.cell, target) {
        if want == pose.heading.left() {
            out.push(LowLevelAction::TurnLeft);
        } else if want == pose.heading.right() {
            out.push(LowLevelAction::TurnRight);
        } else if want != pose.heading {
            out.extend([LowLevelAction::TurnLeft, LowLevelAction::TurnLeft]);
        }
    }
    let steps = pose.gaze.steps_to(Gaze::for_tier(tier));
    let look = if steps > 0 {
        LowLevelAction::LookUp
    } else {
        LowLevelAction::LookDown
    };
    out.extend(std::iter::repeat_n(look, steps.unsigned_abs() as usize));
    out
}

/// Look-around from the current cell covering every heading and gaze.
pub fn survey_sweep(gaze: Gaze) -> Vec<LowLevelAction> {
    use LowLevelAction::*;
    let mut out = Vec::new();
    let mut g = gaze;
    for turn in 0..4 {
        match g {
            Gaze::Level => {
                out.extend([LookDown, LookUp, LookUp]);
                g = Gaze::Up;
            }
            Gaze::Up => {
                out.extend([LookDown, LookDown]);
                g = Gaze::Down;
            }
            Gaze::Down => {
                out.extend([LookUp, LookUp]);
                g = Gaze::Up;
            }
        }
        if turn < 3 {
            out.push(TurnRight);
        }
    }
    out
}

enum Entity {
    Room(usize),
    Receptacle(NodeRef),
    Object(NodeRef),
    Held,
    Undiscovered,
}

type Step = std::result::Result<(), FailureReason>;

/// Drives one episode's world state and belief graph.
#[derive(Clone)]
pub struct Controller<'a> {
    pub sim: Simulator<'a>,
    pub state: WorldState,
    pub graph: SceneGraph,
    pub trace: Option<Vec<TraceRecord>>,
    acc: ExecResult,
}

impl<'a> Controller<'a> {
    pub fn new(sim: Simulator<'a>, state: WorldState, graph: SceneGraph) -> Self {
        let mut c = Controller {
            sim,
            state,
            graph,
            trace: None,
            acc: ExecResult::default(),
        };
        let obs = c.sim.observe(&c.state);
        c.graph.update(&obs, c.sim.scene);
        c
    }

    pub fn with_trace(mut self, header: TraceRecord) -> Self {
        self.trace = Some(vec![header]);
        self
    }

    pub fn record(&mut self, rec: TraceRecord) {
        if let Some(t) = &mut self.trace {
            t.push(rec);
        }
    }

    fn scene(&self) -> &'a Scene {
        self.sim.scene
    }

    /// Applies one low-level action and folds the observation into the graph.
    pub fn step(&mut self, action: LowLevelAction) -> Result<StepResult> {
        let t = self.state.t;
        let result = self.sim.step(&mut self.state, action)?;
        self.graph.update(&result.observation, self.sim.scene);
        self.acc.low_level_count += 1;
        self.acc.rewards_accrued += result.reward;
        if let Some(e) = &result.event {
            if !matches!(e, Event::NoOp { .. }) {
                self.acc.events.push(e.clone());
            }
        }
        self.record(TraceRecord::Step {
            t,
            action,
            event: result.event.clone(),
            reward: result.reward,
            pose: result.observation.pose,
        });
        Ok(result)
    }

    fn run(&mut self, actions: &[LowLevelAction]) -> Step {
        for &a in actions {
            self.step(a).map_err(|_| FailureReason::HorizonReached)?;
        }
        Ok(())
    }

    pub fn execute(&mut self, action: &HighLevelAction) -> ExecResult {
        self.acc = ExecResult::default();
        let outcome = if self.state.done() {
            Err(FailureReason::HorizonReached)
        } else {
            match action {
                HighLevelAction::GoTo(e) => self.go_to(e),
                HighLevelAction::LookAt(e) => self.look_at(e),
                HighLevelAction::PickUp(o) => self.pick_up(o),
                HighLevelAction::Place(o, r) => self.place(o, r),
            }
        };
        let mut res = std::mem::take(&mut self.acc);
        res.executed = outcome.is_ok();
        res.reason = outcome.err();
        self.record(TraceRecord::HighLevel {
            action: action.to_string(),
            executed: res.executed,
            reason: res.reason,
            low_level_count: res.low_level_count,
        });
        res
    }

    fn resolve(&self, name: &str) -> Entity {
        if let Some(r) = self.graph.room_index(name) {
            Entity::Room(r)
        } else if let Some(at) = self.graph.find_receptacle(name) {
            Entity::Receptacle(at)
        } else if let Some(at) = self.graph.locate_object(name) {
            Entity::Object(at)
        } else if self.graph.held.as_deref() == Some(name) {
            Entity::Held
        } else {
            Entity::Undiscovered
        }
    }

    fn rec_cell(&self, at: NodeRef) -> (Cell, Tier) {
        let id = self
            .scene()
            .rec_id(&self.graph.receptacle(at).name)
            .expect("graph receptacles come from the scene");
        let rec = self.scene().receptacle(id);
        (rec.cell, rec.tier)
    }

    fn adjacent_to(&self, at: NodeRef) -> bool {
        let (cell, _) = self.rec_cell(at);
        self.state.pose.room == at.0 && cell.is_adjacent(self.state.pose.cell)
    }

    fn approach(&mut self, at: NodeRef) -> Step {
        let (cell, _) = self.rec_cell(at);
        let path = navigate_to(self.scene(), &self.state.pose, at.0, &[cell])
            .map_err(|_| FailureReason::Unreachable)?;
        self.run(&path)
    }

    fn face(&mut self, at: NodeRef) -> Step {
        if !self.adjacent_to(at) {
            return Err(FailureReason::PreconditionFailed);
        }
        let (cell, tier) = self.rec_cell(at);
        let actions = orient_and_gaze(&self.state.pose, cell, tier);
        self.run(&actions)
    }

    fn go_to(&mut self, name: &str) -> Step {
        match self.resolve(name) {
            Entity::Room(r) => {
                let survey = self.scene().rooms[r].survey_cell;
                let path = plan_path(self.scene(), &self.state.pose, |room, c| {
                    room == r && c == survey
                })
                .ok_or(FailureReason::Unreachable)?;
                self.run(&path)?;
                self.run(&survey_sweep(self.state.pose.gaze))?;
                self.graph.mark_visited(r);
                Ok(())
            }
            Entity::Receptacle(at) => self.approach(at),
            Entity::Object(at) => {
                let rec = self.graph.receptacle(at).name.clone();
                self.approach(at)?;
                // The belief may have been refreshed on the way.
                match self.graph.locate_object(name) {
                    Some(now) if self.graph.receptacle(now).name == rec => Ok(()),
                    _ => Err(FailureReason::PreconditionFailed),
                }
            }
            Entity::Held => Err(FailureReason::PreconditionFailed),
            Entity::Undiscovered => Err(FailureReason::UndiscoveredEntity),
        }
    }

    fn look_at(&mut self, name: &str) -> Step {
        match self.resolve(name) {
            Entity::Receptacle(at) | Entity::Object(at) => self.face(at),
            Entity::Room(_) => Err(FailureReason::UnknownEntity),
            Entity::Held => Err(FailureReason::PreconditionFailed),
            Entity::Undiscovered => Err(FailureReason::UndiscoveredEntity),
        }
    }

    fn pick_up(&mut self, obj: &str) -> Step {
        let at = match self.resolve(obj) {
            Entity::Object(at) => at,
            Entity::Held => return Err(FailureReason::PreconditionFailed),
            Entity::Room(_) | Entity::Receptacle(_) => return Err(FailureReason::UnknownEntity),
            Entity::Undiscovered => return Err(FailureReason::UndiscoveredEntity),
        };
        if self.graph.held.is_some() {
            return Err(FailureReason::PreconditionFailed);
        }
        let rec = self.graph.receptacle(at).name.clone();
        self.face(at)?;
        if self
            .graph
            .locate_object(obj)
            .is_none_or(|now| self.graph.receptacle(now).name != rec)
        {
            return Err(FailureReason::PreconditionFailed);
        }
        self.state.grab_target = Some(obj.to_string());
        let r = self
            .step(LowLevelAction::GrabRelease)
            .map_err(|_| FailureReason::HorizonReached)?;
        match r.event {
            Some(Event::Grabbed { object, .. }) if object == obj => Ok(()),
            _ => Err(FailureReason::PreconditionFailed),
        }
    }

    fn place(&mut self, obj: &str, rec: &str) -> Step {
        if self.graph.held.as_deref() != Some(obj) {
            return Err(if self.graph.knows(obj) {
                FailureReason::PreconditionFailed
            } else {
                FailureReason::UndiscoveredEntity
            });
        }
        let at = match self.resolve(rec) {
            Entity::Receptacle(at) => at,
            Entity::Undiscovered => return Err(FailureReason::UndiscoveredEntity),
            _ => return Err(FailureReason::UnknownEntity),
        };
        self.face(at)?;
        let node = self.graph.receptacle(at);
        if node.contents_known && !node.has_space() {
            return Err(FailureReason::ReceptacleFull);
        }
        let r = self
            .step(LowLevelAction::GrabRelease)
            .map_err(|_| FailureReason::HorizonReached)?;
        match r.event {
            Some(Event::Placed { .. }) => Ok(()),
            Some(Event::NoOp {
                reason: NoOpReason::ReceptacleFull,
            }) => Err(FailureReason::ReceptacleFull),
            _ => Err(FailureReason::PreconditionFailed),
        }
    }
}

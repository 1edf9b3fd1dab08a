//! Scenes, preferences, tasks and ground-truth placement state.
//!
//! A scene is a set of rectangular room grids joined by paired door cells.
//! Receptacles occupy non-walkable cells and carry a type, a tier that gates
//! which gaze reveals their contents, and a capacity. Display names follow
//! the household convention `"<room_type> <room_index>"` for rooms,
//! `"<room name> <rec_type> <rec_index>"` for receptacles and
//! `"<obj_type> <obj_index>"` for objects.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_CAPACITY: u32 = 4;
pub const DEFAULT_HORIZON: u32 = 1000;
pub const MIN_OBJECTS: usize = 5;
pub const MAX_OBJECTS: usize = 10;
pub const MIN_MISPLACED: usize = 3;
pub const MAX_MISPLACED: usize = 7;

/// Tokens that would make plan text or outcome strings ambiguous.
const RESERVED_TOKENS: [&str; 3] = [" on ", " to ", " moved from "];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell(pub i32, pub i32);

impl Cell {
    pub fn offset(self, (dx, dy): (i32, i32)) -> Cell {
        Cell(self.0 + dx, self.1 + dy)
    }

    pub fn neighbours(self) -> [Cell; 4] {
        [
            self.offset((0, -1)),
            self.offset((1, 0)),
            self.offset((0, 1)),
            self.offset((-1, 0)),
        ]
    }

    pub fn is_adjacent(self, other: Cell) -> bool {
        (self.0 - other.0).abs() + (self.1 - other.1).abs() == 1
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Low,
    #[default]
    Mid,
    High,
}

/// Compass heading. North points towards decreasing `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::N => Heading::W,
            Heading::W => Heading::S,
            Heading::S => Heading::E,
            Heading::E => Heading::N,
        }
    }

    pub fn right(self) -> Heading {
        self.left().left().left()
    }

    /// Heading pointing from `from` to an adjacent cell `to`.
    pub fn towards(from: Cell, to: Cell) -> Option<Heading> {
        let d = (to.0 - from.0, to.1 - from.1);
        Heading::ALL.into_iter().find(|h| h.delta() == d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gaze {
    Down,
    Level,
    Up,
}

impl Gaze {
    pub fn for_tier(tier: Tier) -> Gaze {
        match tier {
            Tier::Low => Gaze::Down,
            Tier::Mid => Gaze::Level,
            Tier::High => Gaze::Up,
        }
    }

    pub fn up(self) -> Option<Gaze> {
        match self {
            Gaze::Down => Some(Gaze::Level),
            Gaze::Level => Some(Gaze::Up),
            Gaze::Up => None,
        }
    }

    pub fn down(self) -> Option<Gaze> {
        match self {
            Gaze::Up => Some(Gaze::Level),
            Gaze::Level => Some(Gaze::Down),
            Gaze::Down => None,
        }
    }

    /// Signed number of `look_up` steps from `self` to `target`.
    pub fn steps_to(self, target: Gaze) -> i32 {
        let rank = |g: Gaze| match g {
            Gaze::Down => 0,
            Gaze::Level => 1,
            Gaze::Up => 2,
        };
        rank(target) - rank(self)
    }
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub scene_id: String,
    pub rooms: Vec<RoomFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomFile {
    pub room_type: String,
    pub room_index: u32,
    pub grid: [i32; 2],
    pub walkable: Vec<Cell>,
    #[serde(default)]
    pub doors: Vec<DoorFile>,
    #[serde(default)]
    pub receptacles: Vec<ReceptacleFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoorFile {
    pub to: String,
    pub cell: Cell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceptacleFile {
    pub rec_type: String,
    pub rec_index: u32,
    pub cell: Cell,
    #[serde(default)]
    pub tier: Tier,
    #[serde(default = "default_capacity")]
    pub capacity: u32,
}

fn default_capacity() -> u32 {
    DEFAULT_CAPACITY
}

// ---------------------------------------------------------------------------
// Validated scene

#[derive(Clone, Debug)]
pub struct Receptacle {
    pub rec_type: String,
    pub rec_index: u32,
    pub cell: Cell,
    pub tier: Tier,
    pub capacity: u32,
    pub name: String,
}

#[derive(Clone, Debug)]
pub struct Door {
    pub to: usize,
    pub cell: Cell,
    /// Room and cell where the agent arrives after stepping onto this door.
    pub exit: (usize, Cell),
}

#[derive(Clone, Debug)]
pub struct Room {
    pub room_type: String,
    pub room_index: u32,
    pub width: i32,
    pub height: i32,
    walkable: Vec<bool>,
    pub doors: Vec<Door>,
    pub receptacles: Vec<Receptacle>,
    pub name: String,
    /// Walkable cell closest to the room centre, used for room surveys.
    pub survey_cell: Cell,
}

impl Room {
    pub fn contains(&self, c: Cell) -> bool {
        c.0 >= 0 && c.1 >= 0 && c.0 < self.width && c.1 < self.height
    }

    fn idx(&self, c: Cell) -> usize {
        (c.1 * self.width + c.0) as usize
    }

    pub fn is_walkable(&self, c: Cell) -> bool {
        self.contains(c) && self.walkable[self.idx(c)]
    }

    pub fn door_at(&self, c: Cell) -> Option<&Door> {
        self.doors.iter().find(|d| d.cell == c)
    }

    /// Walkable or a door cell.
    pub fn is_standable(&self, c: Cell) -> bool {
        self.is_walkable(c) || self.door_at(c).is_some()
    }

    pub fn receptacle_at(&self, c: Cell) -> Option<usize> {
        self.receptacles.iter().position(|r| r.cell == c)
    }

    pub fn walkable_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| Cell(x, y)))
            .filter(move |&c| self.is_walkable(c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RecId {
    pub room: usize,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub scene_id: String,
    pub rooms: Vec<Room>,
    rec_lookup: HashMap<String, RecId>,
    room_lookup: HashMap<String, usize>,
}

fn room_display(room_type: &str, room_index: u32) -> String {
    format!("{room_type} {room_index}")
}

fn check_name(name: &str) -> Result<()> {
    if name.trim() != name || name.is_empty() || name.contains(',') || name.contains('\n') {
        return Err(Error::Invalid(
            "names avoid delimiters",
            format!("{name:?}"),
        ));
    }
    let padded = format!(" {name} ");
    if let Some(tok) = RESERVED_TOKENS.iter().find(|t| padded.contains(*t)) {
        return Err(Error::Invalid(
            "names avoid delimiters",
            format!("{name:?} contains {tok:?}"),
        ));
    }
    Ok(())
}

impl Scene {
    pub fn from_file(file: SceneFile) -> Result<Scene> {
        if file.rooms.is_empty() {
            return Err(Error::Invalid("rooms non-empty", file.scene_id));
        }
        let mut room_lookup = HashMap::new();
        for (i, r) in file.rooms.iter().enumerate() {
            check_name(&r.room_type)?;
            let name = room_display(&r.room_type, r.room_index);
            if room_lookup.insert(name.clone(), i).is_some() {
                return Err(Error::Invalid("unique room names", name));
            }
        }

        let mut rooms = Vec::with_capacity(file.rooms.len());
        let mut rec_lookup = HashMap::new();
        for (ri, rf) in file.rooms.iter().enumerate() {
            let name = room_display(&rf.room_type, rf.room_index);
            let [w, h] = rf.grid;
            if w <= 0 || h <= 0 {
                return Err(Error::Invalid("positive grid", format!("{name}: {w}x{h}")));
            }
            let inside = |c: Cell| c.0 >= 0 && c.1 >= 0 && c.0 < w && c.1 < h;
            let mut walkable = vec![false; (w * h) as usize];
            for &c in &rf.walkable {
                if !inside(c) {
                    return Err(Error::Invalid(
                        "cell inside grid",
                        format!("{name}: walkable {c:?}"),
                    ));
                }
                walkable[(c.1 * w + c.0) as usize] = true;
            }
            let mut doors = Vec::new();
            for d in &rf.doors {
                let to = *room_lookup
                    .get(&d.to)
                    .ok_or_else(|| Error::UnknownRoom(d.to.clone()))?;
                if to == ri {
                    return Err(Error::Invalid(
                        "symmetric doors",
                        format!("{name} links to itself"),
                    ));
                }
                if !inside(d.cell) {
                    return Err(Error::Invalid(
                        "cell inside grid",
                        format!("{name}: door {:?}", d.cell),
                    ));
                }
                doors.push(Door {
                    to,
                    cell: d.cell,
                    exit: (to, d.cell),
                });
            }
            let mut receptacles = Vec::new();
            for rec in &rf.receptacles {
                check_name(&rec.rec_type)?;
                let rname = format!("{name} {} {}", rec.rec_type, rec.rec_index);
                if !inside(rec.cell) {
                    return Err(Error::Invalid(
                        "cell inside grid",
                        format!("{rname}: {:?}", rec.cell),
                    ));
                }
                if walkable[(rec.cell.1 * w + rec.cell.0) as usize]
                    || doors.iter().any(|d| d.cell == rec.cell)
                {
                    return Err(Error::Invalid("receptacle not walkable", rname));
                }
                if rec.capacity < 1 {
                    return Err(Error::Invalid("receptacle capacity", rname));
                }
                if receptacles.iter().any(|r: &Receptacle| r.cell == rec.cell) {
                    return Err(Error::Invalid("one receptacle per cell", rname));
                }
                let id = RecId {
                    room: ri,
                    index: receptacles.len(),
                };
                if rec_lookup.insert(rname.clone(), id).is_some() {
                    return Err(Error::Invalid("unique receptacle names", rname));
                }
                receptacles.push(Receptacle {
                    rec_type: rec.rec_type.clone(),
                    rec_index: rec.rec_index,
                    cell: rec.cell,
                    tier: rec.tier,
                    capacity: rec.capacity,
                    name: rname,
                });
            }
            rooms.push(Room {
                room_type: rf.room_type.clone(),
                room_index: rf.room_index,
                width: w,
                height: h,
                walkable,
                doors,
                receptacles,
                name,
                survey_cell: Cell(0, 0),
            });
        }

        // Pair the k-th door A->B with the k-th door B->A.
        for a in 0..rooms.len() {
            for k in 0..rooms[a].doors.len() {
                let b = rooms[a].doors[k].to;
                let nth = rooms[a].doors[..k].iter().filter(|d| d.to == b).count();
                let back = rooms[b]
                    .doors
                    .iter()
                    .filter(|d| d.to == a)
                    .nth(nth)
                    .ok_or_else(|| {
                        Error::Invalid(
                            "symmetric doors",
                            format!(
                                "{} -> {} has no matching door back",
                                rooms[a].name, rooms[b].name
                            ),
                        )
                    })?;
                rooms[a].doors[k].exit = (b, back.cell);
            }
            for b in 0..rooms.len() {
                let ab = rooms[a].doors.iter().filter(|d| d.to == b).count();
                let ba = rooms[b].doors.iter().filter(|d| d.to == a).count();
                if ab != ba {
                    return Err(Error::Invalid(
                        "symmetric doors",
                        format!(
                            "{} and {} disagree on door count",
                            rooms[a].name, rooms[b].name
                        ),
                    ));
                }
            }
        }

        for room in &mut rooms {
            let adjacent_walkable = |c: Cell| c.neighbours().iter().any(|&n| room.is_walkable(n));
            for rec in &room.receptacles {
                if !adjacent_walkable(rec.cell) {
                    return Err(Error::Invalid("adjacent walkable cell", rec.name.clone()));
                }
            }
            for d in &room.doors {
                if !adjacent_walkable(d.cell) {
                    return Err(Error::Invalid(
                        "adjacent walkable cell",
                        format!("{} door {:?}", room.name, d.cell),
                    ));
                }
            }
            let centre = (room.width - 1, room.height - 1);
            room.survey_cell = room
                .walkable_cells()
                .filter(|&c| room.door_at(c).is_none())
                .min_by_key(|&c| {
                    let dx = 2 * c.0 - centre.0;
                    let dy = 2 * c.1 - centre.1;
                    (dx * dx + dy * dy, c.1, c.0)
                })
                .ok_or_else(|| Error::Invalid("walkable room", room.name.clone()))?;
        }

        let scene = Scene {
            scene_id: file.scene_id,
            rooms,
            rec_lookup,
            room_lookup,
        };
        scene.check_connectivity()?;
        Ok(scene)
    }

    fn check_connectivity(&self) -> Result<()> {
        // Room graph.
        let mut seen = vec![false; self.rooms.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(r) = queue.pop_front() {
            for d in &self.rooms[r].doors {
                if !seen[d.to] {
                    seen[d.to] = true;
                    queue.push_back(d.to);
                }
            }
        }
        if let Some(r) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(
                "connected rooms",
                self.rooms[r].name.clone(),
            ));
        }

        // Cell-level reachability from the start cell.
        let reach = self.reachable_cells();
        for (ri, room) in self.rooms.iter().enumerate() {
            if !reach.contains(&(ri, room.survey_cell)) {
                return Err(Error::Invalid("reachable rooms", room.name.clone()));
            }
            for rec in &room.receptacles {
                if !rec
                    .cell
                    .neighbours()
                    .iter()
                    .any(|&n| reach.contains(&(ri, n)))
                {
                    return Err(Error::Invalid("reachable receptacles", rec.name.clone()));
                }
            }
        }
        Ok(())
    }

    fn reachable_cells(&self) -> HashSet<(usize, Cell)> {
        let start = (0, self.start_cell());
        let mut seen = HashSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some((r, c)) = queue.pop_front() {
            for h in Heading::ALL {
                if let Some(next) = self.forward(r, c, h) {
                    if seen.insert(next) {
                        queue.push_back(next);
                    }
                }
            }
        }
        seen
    }

    pub fn load(path: &Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SceneFile =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), &e))?;
        Scene::from_file(file)
    }

    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            scene_id: self.scene_id.clone(),
            rooms: self
                .rooms
                .iter()
                .map(|r| RoomFile {
                    room_type: r.room_type.clone(),
                    room_index: r.room_index,
                    grid: [r.width, r.height],
                    walkable: r.walkable_cells().collect(),
                    doors: r
                        .doors
                        .iter()
                        .map(|d| DoorFile {
                            to: self.rooms[d.to].name.clone(),
                            cell: d.cell,
                        })
                        .collect(),
                    receptacles: r
                        .receptacles
                        .iter()
                        .map(|rec| ReceptacleFile {
                            rec_type: rec.rec_type.clone(),
                            rec_index: rec.rec_index,
                            cell: rec.cell,
                            tier: rec.tier,
                            capacity: rec.capacity,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// First walkable cell (row-major) of the first room.
    pub fn start_cell(&self) -> Cell {
        self.rooms[0]
            .walkable_cells()
            .next()
            .unwrap_or(self.rooms[0].survey_cell)
    }

    pub fn room_id(&self, name: &str) -> Option<usize> {
        self.room_lookup.get(name).copied()
    }

    pub fn rec_id(&self, name: &str) -> Option<RecId> {
        self.rec_lookup.get(name).copied()
    }

    pub fn receptacle(&self, id: RecId) -> &Receptacle {
        &self.rooms[id.room].receptacles[id.index]
    }

    pub fn receptacles(&self) -> impl Iterator<Item = (RecId, &Receptacle)> {
        self.rooms.iter().enumerate().flat_map(|(ri, room)| {
            room.receptacles
                .iter()
                .enumerate()
                .map(move |(i, r)| (RecId { room: ri, index: i }, r))
        })
    }

    pub fn receptacle_count(&self) -> usize {
        self.rooms.iter().map(|r| r.receptacles.len()).sum()
    }

    /// Type pair `(room_type, rec_type)` of a receptacle.
    pub fn rec_types(&self, id: RecId) -> (&str, &str) {
        let room = &self.rooms[id.room];
        (&room.room_type, &room.receptacles[id.index].rec_type)
    }

    /// All `(room_type, rec_type)` pairs that occur in the scene.
    pub fn type_pairs(&self) -> BTreeSet<(String, String)> {
        self.receptacles()
            .map(|(id, _)| {
                let (a, b) = self.rec_types(id);
                (a.to_string(), b.to_string())
            })
            .collect()
    }

    /// One step forward from `cell` in `room`. Returns `None` when blocked.
    /// Stepping onto a door cell lands on the paired door cell of the target
    /// room.
    pub fn forward(&self, room: usize, cell: Cell, heading: Heading) -> Option<(usize, Cell)> {
        let r = &self.rooms[room];
        let next = cell.offset(heading.delta());
        if !r.is_standable(next) {
            return None;
        }
        match r.door_at(next) {
            Some(door) => Some(door.exit),
            None => Some((room, next)),
        }
    }

    /// Structural parse of a receptacle display name into
    /// `(room id, rec_type, rec_index)`.
    pub fn parse_receptacle_name(&self, name: &str) -> Option<(usize, String, u32)> {
        let (head, index) = name.rsplit_once(' ')?;
        let index: u32 = index.parse().ok()?;
        self.rooms.iter().enumerate().find_map(|(ri, room)| {
            let rest = head.strip_prefix(room.name.as_str())?.strip_prefix(' ')?;
            (!rest.is_empty()).then(|| (ri, rest.to_string(), index))
        })
    }
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    Scene::load(path)
}

// ---------------------------------------------------------------------------
// Objects and preferences

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectInstance {
    pub obj_type: String,
    pub obj_index: u32,
}

impl ObjectInstance {
    pub fn new(obj_type: impl Into<String>, obj_index: u32) -> Self {
        ObjectInstance {
            obj_type: obj_type.into(),
            obj_index,
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ObjectInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.obj_type, self.obj_index)
    }
}

impl FromStr for ObjectInstance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownName(s.to_string());
        let (ty, idx) = s.rsplit_once(' ').ok_or_else(bad)?;
        let obj_index = idx.parse().map_err(|_| bad())?;
        if ty.is_empty() {
            return Err(bad());
        }
        Ok(ObjectInstance::new(ty, obj_index))
    }
}

impl Serialize for ObjectInstance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObjectInstance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Object type of an object display name such as `"laptop 1"`.
pub fn object_type(name: &str) -> &str {
    name.rsplit_once(' ').map_or(name, |(ty, _)| ty)
}

/// Correct `(room_type, rec_type)` pairs per object type.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceDataset {
    pub entries: BTreeMap<String, BTreeSet<(String, String)>>,
}

impl PreferenceDataset {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), &e))
    }

    pub fn allows(&self, obj_type: &str, room_type: &str, rec_type: &str) -> bool {
        self.entries.get(obj_type).is_some_and(|pairs| {
            pairs
                .iter()
                .any(|(room, rec)| room == room_type && rec == rec_type)
        })
    }

    pub fn is_correct(&self, scene: &Scene, obj: &str, rec: RecId) -> bool {
        let (room_type, rec_type) = scene.rec_types(rec);
        self.allows(object_type(obj), room_type, rec_type)
    }

    /// Checks that every entry is non-empty and references type pairs that
    /// exist in at least one of `scenes`.
    pub fn validate(&self, scenes: &[&Scene]) -> Result<()> {
        let known: BTreeSet<(String, String)> =
            scenes.iter().flat_map(|s| s.type_pairs()).collect();
        for (obj, pairs) in &self.entries {
            check_name(obj)?;
            if pairs.is_empty() {
                return Err(Error::Invalid("preference entry non-empty", obj.clone()));
            }
            if let Some(p) = pairs.iter().find(|p| !known.contains(*p)) {
                return Err(Error::Invalid(
                    "preference pairs exist in a scene",
                    format!("{obj}: {p:?}"),
                ));
            }
        }
        Ok(())
    }
}

pub fn is_correct_placement(
    obj: &str,
    rec: &str,
    scene: &Scene,
    prefs: &PreferenceDataset,
) -> Result<bool> {
    let obj: ObjectInstance = obj.parse()?;
    let id = scene
        .rec_id(rec)
        .ok_or_else(|| Error::UnknownName(rec.to_string()))?;
    Ok(prefs.is_correct(scene, &obj.name(), id))
}

// ---------------------------------------------------------------------------
// Tasks

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub scene_id: String,
    pub seed: u64,
    pub placements: Vec<(ObjectInstance, String)>,
}

impl TaskSpec {
    pub fn object_names(&self) -> impl Iterator<Item = String> + '_ {
        self.placements.iter().map(|(o, _)| o.name())
    }

    pub fn misplaced_count(&self, scene: &Scene, prefs: &PreferenceDataset) -> Result<usize> {
        let mut n = 0;
        for (obj, rec) in &self.placements {
            if !is_correct_placement(&obj.name(), rec, scene, prefs)? {
                n += 1;
            }
        }
        Ok(n)
    }

    /// Checks the task invariants against its scene.
    pub fn validate(&self, scene: &Scene, prefs: &PreferenceDataset) -> Result<()> {
        if self.scene_id != scene.scene_id {
            return Err(Error::SceneMismatch {
                task: self.task_id.clone(),
                scene: scene.scene_id.clone(),
            });
        }
        let n = self.placements.len();
        if !(MIN_OBJECTS..=MAX_OBJECTS).contains(&n) {
            return Err(Error::Invalid(
                "5-10 objects",
                format!("{}: {n}", self.task_id),
            ));
        }
        let mut names = HashSet::new();
        let mut load: HashMap<RecId, u32> = HashMap::new();
        for (obj, rec) in &self.placements {
            check_name(&obj.obj_type)?;
            if !names.insert(obj.name()) {
                return Err(Error::Invalid("unique object names", obj.name()));
            }
            if !prefs
                .entries
                .get(&obj.obj_type)
                .is_some_and(|p| !p.is_empty())
            {
                return Err(Error::Invalid(
                    "object type has preferences",
                    obj.obj_type.clone(),
                ));
            }
            let id = scene
                .rec_id(rec)
                .ok_or_else(|| Error::UnknownName(rec.clone()))?;
            *load.entry(id).or_default() += 1;
        }
        for (&id, &count) in &load {
            if count > scene.receptacle(id).capacity {
                return Err(Error::Invalid(
                    "receptacle capacity",
                    scene.receptacle(id).name.clone(),
                ));
            }
        }
        let misplaced = self.misplaced_count(scene, prefs)?;
        if !(MIN_MISPLACED..=MAX_MISPLACED).contains(&misplaced) {
            return Err(Error::Invalid(
                "3-7 misplaced",
                format!("{}: {misplaced}", self.task_id),
            ));
        }
        if !slack_condition(scene, prefs, &self.placements) {
            return Err(Error::Invalid("solvable task", self.task_id.clone()));
        }
        Ok(())
    }

    pub fn load_list(path: &Path) -> Result<Vec<TaskSpec>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), &e))
    }
}

/// Every receptacle can absorb all misplaced objects for which it is
/// correct on top of its current load. This makes any greedy repair order
/// succeed, which is stronger than the existence of a capacity-respecting
/// assignment.
fn slack_condition(
    scene: &Scene,
    prefs: &PreferenceDataset,
    placements: &[(ObjectInstance, String)],
) -> bool {
    let mut demand: HashMap<RecId, u32> = HashMap::new();
    for (_, rec) in placements {
        let Some(id) = scene.rec_id(rec) else {
            return false;
        };
        *demand.entry(id).or_default() += 1;
    }
    let mut has_target = true;
    for (obj, rec) in placements {
        let name = obj.name();
        let here = scene.rec_id(rec).expect("checked above");
        if prefs.is_correct(scene, &name, here) {
            continue;
        }
        let mut any = false;
        for (id, _) in scene.receptacles() {
            if prefs.is_correct(scene, &name, id) {
                *demand.entry(id).or_default() += 1;
                any = true;
            }
        }
        has_target &= any;
    }
    has_target
        && demand
            .iter()
            .all(|(&id, &d)| d <= scene.receptacle(id).capacity)
}

/// Deterministically samples a solvable task.
pub fn generate_task(scene: &Scene, prefs: &PreferenceDataset, seed: u64) -> Result<TaskSpec> {
    let receptacles: Vec<(RecId, &Receptacle)> = scene.receptacles().collect();
    // Object types that can be both misplaced and repaired in this scene.
    let pool: Vec<&String> = prefs
        .entries
        .keys()
        .filter(|ty| {
            let probe = format!("{ty} 0");
            let correct = receptacles
                .iter()
                .filter(|(id, _)| prefs.is_correct(scene, &probe, *id))
                .count();
            correct > 0 && correct < receptacles.len()
        })
        .collect();
    if pool.is_empty() {
        return Err(Error::Unsolvable(format!(
            "no object type has a correct receptacle in {}",
            scene.scene_id
        )));
    }

    let mut rng = seed::rng(seed::derive(seed, "task"));
    'attempt: for _ in 0..5000 {
        let n = rng.gen_range(MIN_OBJECTS..=MAX_OBJECTS);
        let m = rng.gen_range(MIN_MISPLACED..=MAX_MISPLACED.min(n));
        let mut load = vec![0u32; receptacles.len()];
        let mut placements = Vec::with_capacity(n);
        for i in 0..n {
            let ty = *pool.choose(&mut rng).expect("non-empty pool");
            let obj = ObjectInstance::new(ty.clone(), i as u32);
            let name = obj.name();
            let want_correct = i >= m;
            let options: Vec<usize> = (0..receptacles.len())
                .filter(|&k| {
                    let (id, rec) = receptacles[k];
                    load[k] < rec.capacity && prefs.is_correct(scene, &name, id) == want_correct
                })
                .collect();
            let Some(&k) = options.choose(&mut rng) else {
                continue 'attempt;
            };
            load[k] += 1;
            placements.push((obj, receptacles[k].1.name.clone()));
        }
        placements.shuffle(&mut rng);
        // Re-index so object numbering follows the placement list.
        for (i, (obj, _)) in placements.iter_mut().enumerate() {
            obj.obj_index = i as u32;
        }
        if slack_condition(scene, prefs, &placements) {
            return Ok(TaskSpec {
                task_id: format!("{}-{seed:016x}", scene.scene_id),
                scene_id: scene.scene_id.clone(),
                seed,
                placements,
            });
        }
    }
    Err(Error::Unsolvable(format!(
        "no capacity-feasible task found for {}",
        scene.scene_id
    )))
}

// ---------------------------------------------------------------------------
// World state

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub room: usize,
    pub cell: Cell,
    pub heading: Heading,
    pub gaze: Gaze,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    /// Receptacle name to the ordered objects on it. Every receptacle of
    /// the scene has an entry.
    pub placements: BTreeMap<String, Vec<String>>,
    pub held: Option<String>,
    pub pose: Pose,
    pub t: u32,
    pub horizon: u32,
    /// Object the controller intends the next grab to take.
    pub grab_target: Option<String>,
}

impl WorldState {
    pub fn receptacle_of(&self, obj: &str) -> Option<&str> {
        self.placements
            .iter()
            .find(|(_, objs)| objs.iter().any(|o| o == obj))
            .map(|(r, _)| r.as_str())
    }

    pub fn done(&self) -> bool {
        self.t >= self.horizon
    }

    /// All object names, on receptacles or in hand, sorted.
    pub fn object_multiset(&self) -> Vec<String> {
        let mut all: Vec<String> = self
            .placements
            .values()
            .flatten()
            .cloned()
            .chain(self.held.clone())
            .collect();
        all.sort();
        all
    }
}

/// `(correct, misplaced)` over objects that are not in hand.
pub fn count_correct(
    state: &WorldState,
    scene: &Scene,
    prefs: &PreferenceDataset,
) -> (usize, usize) {
    let mut correct = 0;
    let mut misplaced = 0;
    for (rec, objs) in &state.placements {
        let Some(id) = scene.rec_id(rec) else {
            misplaced += objs.len();
            continue;
        };
        for o in objs {
            if prefs.is_correct(scene, o, id) {
                correct += 1;
            } else {
                misplaced += 1;
            }
        }
    }
    (correct, misplaced)
}

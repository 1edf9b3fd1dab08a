//! Built-in household scenes and the preference synthesizer.
//!
//! Every room is a 7x7 grid whose interior is walkable. Receptacles and
//! doors sit on the outer ring. Receptacle indices are numbered across the
//! whole scene in declaration order.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;
use crate::world::{
    Cell, DoorFile, PreferenceDataset, ReceptacleFile, RoomFile, Scene, SceneFile, Tier,
    DEFAULT_CAPACITY,
};

const ROOM_SIZE: i32 = 7;

/// Object types used by the preference synthesizer.
pub const OBJECT_TYPES: [&str; 24] = [
    "pan",
    "mug",
    "plate",
    "bowl",
    "cup",
    "laptop",
    "book",
    "towel",
    "toothbrush",
    "shampoo",
    "soap",
    "pillow",
    "blanket",
    "toy car",
    "teddy bear",
    "remote",
    "candle",
    "vase",
    "shoes",
    "detergent",
    "can",
    "cereal box",
    "jar",
    "headphones",
];

/// Receptacle types available in each room type.
fn room_receptacles(room_type: &str) -> &'static [&'static str] {
    match room_type {
        "kitchen" => &[
            "cabinet", "counter", "sink", "fridge", "stove", "shelf", "table",
        ],
        "living room" => &["sofa", "coffee table", "tv stand", "bookcase", "shelf"],
        "corridor" => &["shelf", "table", "shoe rack"],
        "bathroom" => &["sink", "cabinet", "bathtub", "shelf"],
        "utility room" => &["washing machine", "shelf", "cabinet", "laundry basket"],
        "pantry room" => &["shelf", "cabinet", "counter"],
        "dining room" => &["table", "cabinet", "chair", "shelf"],
        "child's room" => &["bed", "toy box", "desk", "shelf"],
        "bedroom" => &["bed", "nightstand", "dresser", "wardrobe", "desk"],
        "lobby" => &["coat rack", "shoe rack", "table", "sofa"],
        _ => &["table"],
    }
}

fn tier_of(rec_type: &str) -> Tier {
    match rec_type {
        "shelf" | "fridge" | "bookcase" | "wardrobe" | "coat rack" => Tier::High,
        "sofa" | "coffee table" | "tv stand" | "bathtub" | "bed" | "nightstand" | "toy box"
        | "chair" | "shoe rack" | "laundry basket" => Tier::Low,
        _ => Tier::Mid,
    }
}

/// Outer-ring cells, excluding corners, clockwise from the north-west.
fn ring() -> Vec<Cell> {
    let n = ROOM_SIZE - 1;
    let mut cells = Vec::new();
    cells.extend((1..n).map(|x| Cell(x, 0)));
    cells.extend((1..n).map(|y| Cell(n, y)));
    cells.extend((1..n).rev().map(|x| Cell(x, n)));
    cells.extend((1..n).rev().map(|y| Cell(0, y)));
    cells
}

/// Door positions in order of use: wall midpoints, then off-centre cells.
fn door_slots() -> [Cell; 8] {
    let (m, n) = (ROOM_SIZE / 2, ROOM_SIZE - 1);
    [
        Cell(m, n),
        Cell(n, m),
        Cell(m, 0),
        Cell(0, m),
        Cell(m - 2, n),
        Cell(n, m - 2),
        Cell(m + 2, 0),
        Cell(0, m + 2),
    ]
}

fn build(scene_id: &str, room_types: &[&str], links: &[(usize, usize)]) -> Result<Scene> {
    let names: Vec<String> = room_types.iter().map(|t| format!("{t} 0")).collect();
    let mut doors: Vec<Vec<DoorFile>> = vec![Vec::new(); room_types.len()];
    for &(a, b) in links {
        for (from, to) in [(a, b), (b, a)] {
            let slot = door_slots()[doors[from].len()];
            doors[from].push(DoorFile {
                to: names[to].clone(),
                cell: slot,
            });
        }
    }
    let mut next_index = 0u32;
    let mut rooms = Vec::new();
    for (ri, &room_type) in room_types.iter().enumerate() {
        let taken: BTreeSet<Cell> = doors[ri].iter().map(|d| d.cell).collect();
        let free: Vec<Cell> = ring().into_iter().filter(|c| !taken.contains(c)).collect();
        let types = room_receptacles(room_type);
        let stride = (free.len() / types.len()).max(1);
        let receptacles = types
            .iter()
            .enumerate()
            .map(|(k, &rec_type)| {
                let rec = ReceptacleFile {
                    rec_type: rec_type.to_string(),
                    rec_index: next_index,
                    cell: free[k * stride],
                    tier: tier_of(rec_type),
                    capacity: DEFAULT_CAPACITY,
                };
                next_index += 1;
                rec
            })
            .collect();
        let walkable = (1..ROOM_SIZE - 1)
            .flat_map(|y| (1..ROOM_SIZE - 1).map(move |x| Cell(x, y)))
            .collect();
        rooms.push(RoomFile {
            room_type: room_type.to_string(),
            room_index: 0,
            grid: [ROOM_SIZE, ROOM_SIZE],
            walkable,
            doors: std::mem::take(&mut doors[ri]),
            receptacles,
        });
    }
    Scene::from_file(SceneFile {
        scene_id: scene_id.to_string(),
        rooms,
    })
}

/// Built-in scene `k` in `1..=4`.
pub fn scene(k: usize) -> Result<Scene> {
    match k {
        1 => build(
            "scene1",
            &[
                "kitchen",
                "living room",
                "corridor",
                "bathroom",
                "utility room",
                "pantry room",
            ],
            &[(0, 2), (1, 2), (2, 3), (2, 4), (0, 5)],
        ),
        2 => build(
            "scene2",
            &[
                "kitchen",
                "living room",
                "dining room",
                "child's room",
                "bathroom",
                "bedroom",
            ],
            &[(0, 2), (2, 1), (1, 3), (1, 4), (1, 5)],
        ),
        3 => build(
            "scene3",
            &["corridor", "bathroom", "bedroom"],
            &[(0, 1), (0, 2)],
        ),
        4 => build(
            "scene4",
            &["kitchen", "living room", "bathroom", "bedroom", "lobby"],
            &[(4, 1), (1, 0), (4, 2), (4, 3)],
        ),
        _ => Err(Error::Precondition(format!(
            "no built-in scene {k} (expected 1-4)"
        ))),
    }
}

pub fn all_scenes() -> Vec<Scene> {
    (1..=4)
        .map(|k| scene(k).expect("built-in scenes are valid"))
        .collect()
}

/// Synthesizes a preference file over the built-in scenes: each object type
/// receives between `min_pairs` and `max_pairs` correct `(room_type,
/// rec_type)` pairs drawn uniformly from the pairs that occur in at least
/// one scene.
pub fn synthesize_preferences(
    scenes: &[Scene],
    object_types: &[&str],
    min_pairs: usize,
    max_pairs: usize,
    seed: u64,
) -> PreferenceDataset {
    let pairs: Vec<(String, String)> = scenes
        .iter()
        .flat_map(|s| s.type_pairs())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = seed::rng(seed::derive(seed, "preferences"));
    let mut entries = BTreeMap::new();
    for &ty in object_types {
        let k = rng.gen_range(min_pairs..=max_pairs).min(pairs.len());
        let chosen: BTreeSet<(String, String)> =
            pairs.choose_multiple(&mut rng, k).cloned().collect();
        entries.insert(ty.to_string(), chosen);
    }
    PreferenceDataset { entries }
}

/// Default synthesized preferences: 1-3 pairs per object type.
pub fn preferences(seed: u64) -> PreferenceDataset {
    synthesize_preferences(&all_scenes(), &OBJECT_TYPES, 1, 3, seed)
}

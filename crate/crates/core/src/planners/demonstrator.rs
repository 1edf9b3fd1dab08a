//! Oracle-guided demonstrator.

use rand::seq::SliceRandom;

use super::{decision_plan, exploration_rooms, PlanDecision, PlannerContext};
use crate::context::{NodeRef, SceneGraph};
use crate::plan::Plan;
use crate::seed;
use crate::world::{PreferenceDataset, Scene};

fn correct_targets(
    graph: &SceneGraph,
    scene: &Scene,
    prefs: &PreferenceDataset,
    obj: &str,
) -> Vec<NodeRef> {
    graph
        .receptacle_refs()
        .filter(|&at| {
            let node = graph.receptacle(at);
            node.has_space()
                && scene
                    .rec_id(&node.name)
                    .is_some_and(|id| prefs.is_correct(scene, obj, id))
        })
        .collect()
}

pub(super) fn decide(
    ctx: &PlannerContext,
    scene: &Scene,
    prefs: &PreferenceDataset,
    seed: u64,
) -> PlanDecision {
    let graph = &ctx.graph;
    let mut rng = seed::rng(seed);
    let unvisited = graph.unvisited_rooms();
    if !unvisited.is_empty() {
        return PlanDecision::Explore { rooms: unvisited };
    }
    let rearrange = |object: &str, at: NodeRef| PlanDecision::Rearrange {
        object: object.to_string(),
        receptacle: graph.receptacle(at).name.clone(),
    };
    if let Some(held) = &graph.held {
        // Only reachable after an interrupted plan: put the object somewhere
        // correct if possible, otherwise anywhere with room.
        let mut targets = correct_targets(graph, scene, prefs, held);
        if targets.is_empty() {
            targets = graph
                .receptacle_refs()
                .filter(|&at| graph.receptacle(at).has_space())
                .collect();
        }
        if let Some(&at) = targets.choose(&mut rng) {
            return rearrange(held, at);
        }
    } else {
        let movable: Vec<(&str, Vec<NodeRef>)> = graph
            .objects()
            .filter(|(obj, at)| {
                scene
                    .rec_id(&graph.receptacle(*at).name)
                    .is_some_and(|id| !prefs.is_correct(scene, obj, id))
            })
            .map(|(obj, _)| (obj, correct_targets(graph, scene, prefs, obj)))
            .filter(|(_, targets)| !targets.is_empty())
            .collect();
        if let Some((obj, targets)) = movable.choose(&mut rng) {
            let at = *targets.choose(&mut rng).expect("filtered non-empty");
            return rearrange(obj, at);
        }
    }
    PlanDecision::Explore {
        rooms: exploration_rooms(graph),
    }
}

/// Explores every unvisited room, then repairs one randomly chosen
/// discovered misplaced object per plan, falling back to re-exploration.
pub fn demonstrator_plan(
    ctx: &PlannerContext,
    scene: &Scene,
    prefs: &PreferenceDataset,
    seed: u64,
) -> Plan {
    decision_plan(&ctx.graph, &decide(ctx, scene, prefs, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::context::ReceptacleNode;
    use crate::plan::render_plan;
    use crate::world::{generate_task, object_type};

    #[test]
    fn fresh_graph_explores_in_room_order() {
        let scene = builtin::scene(3).unwrap();
        let prefs = builtin::preferences(0);
        let ctx = PlannerContext::new(SceneGraph::init(&scene), 0);
        let plan = demonstrator_plan(&ctx, &scene, &prefs, 1);
        assert_eq!(
            render_plan(&plan),
            "go to corridor 0, go to bathroom 0, go to bedroom 0"
        );
    }

    /// Full, visited graph holding the true contents of a generated task.
    fn explored(scene: &Scene, placements: &[(String, String)]) -> SceneGraph {
        let mut g = SceneGraph::init(scene);
        for (ri, room) in scene.rooms.iter().enumerate() {
            g.rooms[ri].visited = true;
            g.rooms[ri].receptacles = room
                .receptacles
                .iter()
                .map(|r| ReceptacleNode {
                    name: r.name.clone(),
                    rec_type: r.rec_type.clone(),
                    capacity: r.capacity,
                    contents_known: true,
                    objects: placements
                        .iter()
                        .filter(|(_, rec)| *rec == r.name)
                        .map(|(o, _)| o.clone())
                        .collect(),
                })
                .collect();
        }
        g
    }

    #[test]
    fn single_misplaced_object_gets_the_move_template() {
        let scene = builtin::scene(1).unwrap();
        let prefs = builtin::preferences(0);
        let task = generate_task(&scene, &prefs, 5).unwrap();
        // Keep one misplaced object and drop every other misplaced one.
        let mut placements: Vec<(String, String)> = Vec::new();
        let mut kept = None;
        for (o, r) in &task.placements {
            let correct = prefs.is_correct(&scene, &o.name(), scene.rec_id(r).unwrap());
            if correct || kept.is_none() {
                if !correct {
                    kept = Some((o.name(), r.clone()));
                }
                placements.push((o.name(), r.clone()));
            }
        }
        let (obj, from) = kept.unwrap();
        let ctx = PlannerContext::new(explored(&scene, &placements), 4);
        for s in 0..20 {
            let plan = demonstrator_plan(&ctx, &scene, &prefs, s);
            let a = &plan.actions;
            assert_eq!(a.len(), 6);
            assert_eq!(a[0].to_string(), format!("go to {obj}"));
            assert_eq!(a[1].to_string(), format!("look at {from}"));
            assert_eq!(a[2].to_string(), format!("pick up {obj}"));
            let crate::plan::HighLevelAction::Place(o, target) = &a[5] else {
                panic!()
            };
            assert_eq!(o, &obj);
            let id = scene.rec_id(target).unwrap();
            assert!(prefs.allows(
                object_type(&obj),
                &scene.rooms[id.room].room_type,
                &scene.receptacle(id).rec_type
            ));
        }
    }

    #[test]
    fn all_correct_falls_back_to_re_exploration() {
        let scene = builtin::scene(3).unwrap();
        let prefs = builtin::preferences(0);
        let ctx = PlannerContext::new(explored(&scene, &[]), 2);
        let plan = demonstrator_plan(&ctx, &scene, &prefs, 0);
        assert_eq!(plan.actions.len(), scene.rooms.len());
    }

    #[test]
    fn receptacle_choice_is_seeded() {
        let scene = builtin::scene(1).unwrap();
        let prefs = builtin::preferences(0);
        let task = generate_task(&scene, &prefs, 8).unwrap();
        let placements: Vec<_> = task
            .placements
            .iter()
            .map(|(o, r)| (o.name(), r.clone()))
            .collect();
        let ctx = PlannerContext::new(explored(&scene, &placements), 1);
        assert_eq!(
            demonstrator_plan(&ctx, &scene, &prefs, 3),
            demonstrator_plan(&ctx, &scene, &prefs, 3)
        );
    }
}

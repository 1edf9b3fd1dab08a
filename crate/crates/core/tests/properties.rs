//! Cross-module properties over generated tasks.

use proptest::prelude::*;

use hearth::builtin;
use hearth::eval::success_rate;
use hearth::pipeline::{
    annotate, collect_demos, export_finetune_jsonl, grow, import_finetune_jsonl, run_episode,
    DatasetKind, EpisodeConfig,
};
use hearth::planners::{PlannerKind, PolicyParams};
use hearth::world::generate_task;
use hearth::{parse_plan, render_plan};

fn short() -> EpisodeConfig {
    EpisodeConfig {
        horizon: 300,
        ..EpisodeConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn demonstrator_solves_what_it_starts(k in 1usize..=4, pseed in 0u64..50, tseed in any::<u64>()) {
        let scene = builtin::scene(k).unwrap();
        let prefs = builtin::preferences(pseed);
        let task = generate_task(&scene, &prefs, tseed).unwrap();
        let out = run_episode(&scene, &prefs, &task, &PlannerKind::Demonstrator, 0, tseed, &EpisodeConfig::default()).unwrap();
        prop_assert_eq!(out.metrics.success_rate, 1.0);
        prop_assert_eq!(out.metrics.executability, 1.0);
    }

    #[test]
    fn episode_metrics_agree_with_the_states(k in 1usize..=4, tseed in any::<u64>(), wseed in any::<u64>()) {
        let scene = builtin::scene(k).unwrap();
        let prefs = builtin::preferences(1);
        let task = generate_task(&scene, &prefs, tseed).unwrap();
        let planner = PlannerKind::Baseline { seed: wseed };
        let out = run_episode(&scene, &prefs, &task, &planner, 0, wseed, &short()).unwrap();
        let m = &out.metrics;
        prop_assert_eq!(m.reward_sum, m.correct_end as i32 - m.correct_start as i32);
        prop_assert_eq!(m.success_rate, success_rate(&out.start, &out.end, &scene, &prefs).unwrap());
        prop_assert!(m.executed <= m.generated);
        prop_assert_eq!(out.start.object_multiset(), out.end.object_multiset());
    }

    #[test]
    fn every_logged_response_parses_back_to_itself(k in 1usize..=4, tseed in any::<u64>()) {
        let scene = builtin::scene(k).unwrap();
        let prefs = builtin::preferences(2);
        let task = generate_task(&scene, &prefs, tseed).unwrap();
        let (ds, _) = collect_demos(&scene, &prefs, &[task], 1, tseed, &EpisodeConfig::default()).unwrap();
        for r in &ds.records {
            let plan = parse_plan(&r.response).unwrap().plan;
            prop_assert_eq!(render_plan(&plan), r.response.clone());
        }
    }
}

#[test]
fn rollouts_are_reproducible() {
    let scene = builtin::scene(2).unwrap();
    let prefs = builtin::preferences(4);
    let task = generate_task(&scene, &prefs, 9).unwrap();
    let planner = PlannerKind::Baseline { seed: 3 };
    let a = run_episode(&scene, &prefs, &task, &planner, 0, 17, &short()).unwrap();
    let b = run_episode(&scene, &prefs, &task, &planner, 0, 17, &short()).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.records, b.records);
    assert_eq!(a.end, b.end);
}

#[test]
fn annotated_grow_data_survives_a_jsonl_round_trip() {
    let scene = builtin::scene(3).unwrap();
    let prefs = builtin::preferences(5);
    let tasks: Vec<_> = (0..2)
        .map(|i| generate_task(&scene, &prefs, 100 + i).unwrap())
        .collect();
    let params = PolicyParams::baseline_for(1, &hearth::SceneGraph::init(&scene));
    let (raw, _) = grow(&scene, &prefs, &params, &tasks, 1, 8, Some(1), &short()).unwrap();
    let ds = annotate(&raw, &scene, &prefs).unwrap();
    assert!(ds.records.iter().all(|r| r.reward.is_some()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grow.jsonl");
    export_finetune_jsonl(&ds, &path, true).unwrap();
    let back = import_finetune_jsonl(&path, DatasetKind::Grow).unwrap();
    assert_eq!(back.records, ds.records);
    assert_eq!(back.training_pairs().len(), ds.training_pairs().len());
}

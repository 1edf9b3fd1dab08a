//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any hard criterion fails. Run with
//! `cargo test -p hearth-core --test acceptance`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use hearth::builtin;
use hearth::eval::{
    run_cross_domain, run_protocol, success_rate, ProtocolConfig, ProtocolRun, TaskSplits,
};
use hearth::pipeline::{collect_demos, run_episode, EpisodeConfig};
use hearth::plan::{parse_plan, parse_plan_lossy, render_actions, MAX_PLAN_LEN};
use hearth::planners::{
    candidates, policy_nll, policy_nll_grad, PlanDecision, PlannerContext, PlannerKind,
    PolicyParams,
};
use hearth::seed;
use hearth::world::{count_correct, generate_task};
use hearth::{
    Controller, HighLevelAction, LowLevelAction, PreferenceDataset, Scene, SceneGraph, Simulator,
    WorldState,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn scenes() -> Vec<Scene> {
    builtin::all_scenes()
}

// ---------------------------------------------------------------------------
// 1. Reward conservation under random play

fn entity_names(scene: &Scene, state: &WorldState) -> Vec<String> {
    let mut v: Vec<String> = scene
        .to_file()
        .rooms
        .iter()
        .map(|r| format!("{} {}", r.room_type, r.room_index))
        .collect();
    v.extend(state.placements.keys().cloned());
    v.extend(state.object_multiset());
    v.extend([
        "ghost 0".to_string(),
        "kitchen 9 table 9".to_string(),
        "mug 77".to_string(),
    ]);
    v
}

fn c1_reward_conservation() -> Verdict {
    let t0 = Instant::now();
    let scenes = scenes();
    let prefs = builtin::preferences(0);
    let mut bad = Vec::new();
    let mut grabs = 0;
    for ep in 0..200u64 {
        let scene = &scenes[ep as usize % scenes.len()];
        let task = generate_task(scene, &prefs, seed::derive_indexed(11, "c1/task", ep)).unwrap();
        let sim = Simulator::new(scene, &prefs).with_horizon(400);
        let (state, _) = sim.reset(&task, 0).unwrap();
        let (c0, _) = count_correct(&state, scene, &prefs);
        let names = entity_names(scene, &state);
        let mut ctl = Controller::new(sim, state, SceneGraph::init(scene));
        let mut rng = seed::rng(seed::derive_indexed(11, "c1/play", ep));
        let mut total = 0i32;
        while !ctl.state.done() {
            if rng.gen_bool(0.5) {
                let a = *LowLevelAction::ALL.choose(&mut rng).unwrap();
                let r = ctl.step(a).unwrap();
                total += r.reward;
            } else {
                let pick = |rng: &mut rand_chacha::ChaCha8Rng| names.choose(rng).unwrap().clone();
                let a = match rng.gen_range(0..4) {
                    0 => HighLevelAction::GoTo(pick(&mut rng)),
                    1 => HighLevelAction::LookAt(pick(&mut rng)),
                    2 => HighLevelAction::PickUp(pick(&mut rng)),
                    _ => HighLevelAction::Place(pick(&mut rng), pick(&mut rng)),
                };
                let r = ctl.execute(&a);
                total += r.rewards_accrued;
                grabs += r
                    .events
                    .iter()
                    .filter(|e| matches!(e, hearth::sim::Event::Grabbed { .. }))
                    .count();
            }
        }
        let (c1, _) = count_correct(&ctl.state, scene, &prefs);
        if total != c1 as i32 - c0 as i32 {
            bad.push(format!(
                "episode {ep}: sum {total} vs delta {}",
                c1 as i32 - c0 as i32
            ));
        }
    }
    // Random-weight planner episodes move far more objects.
    let mut placed = 0;
    let cfg = EpisodeConfig {
        horizon: 400,
        ..EpisodeConfig::default()
    };
    for ep in 0..40u64 {
        let scene = &scenes[ep as usize % scenes.len()];
        let task = generate_task(scene, &prefs, seed::derive_indexed(11, "c1/base", ep)).unwrap();
        let planner = PlannerKind::Baseline { seed: ep };
        let m = run_episode(scene, &prefs, &task, &planner, 0, ep, &cfg)
            .unwrap()
            .metrics;
        placed += m.unique_placements;
        if m.reward_sum != m.correct_end as i32 - m.correct_start as i32 {
            bad.push(format!("baseline episode {ep}: {m:?}"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        bad.is_empty() && secs < 30.0 && grabs > 0,
        format!(
            "200 random-action episodes ({grabs} grabs) and 40 baseline episodes ({placed} placements), {} mismatches, {secs:.1}s {}",
            bad.len(),
            bad.first().map_or("", |s| s)
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Success rate against a brute-force recount

/// Recounts correct placements by parsing display names only.
fn brute_correct(
    state: &WorldState,
    rooms: &[(String, String)],
    prefs: &PreferenceDataset,
) -> (usize, usize) {
    let (mut correct, mut misplaced) = (0, 0);
    for (rec, objs) in &state.placements {
        let (room_name, room_type) = rooms
            .iter()
            .filter(|(name, _)| rec.starts_with(&format!("{name} ")))
            .max_by_key(|(name, _)| name.len())
            .map(|(n, t)| (n.as_str(), t.as_str()))
            .expect("receptacle names start with a room name");
        let rest = &rec[room_name.len() + 1..];
        let rec_type = rest.rsplit_once(' ').unwrap().0;
        for o in objs {
            let obj_type = o.rsplit_once(' ').unwrap().0;
            let ok = prefs.entries.get(obj_type).is_some_and(|pairs| {
                pairs.contains(&(room_type.to_string(), rec_type.to_string()))
            });
            if ok {
                correct += 1;
            } else {
                misplaced += 1;
            }
        }
    }
    (correct, misplaced)
}

fn c2_success_rate_oracle() -> Verdict {
    let scenes = scenes();
    let mut checked = 0;
    let mut bad = Vec::new();
    let mut i = 0u64;
    while checked < 100 {
        i += 1;
        let scene = &scenes[i as usize % scenes.len()];
        let prefs = builtin::preferences(i);
        let rooms: Vec<(String, String)> = scene
            .to_file()
            .rooms
            .iter()
            .map(|r| {
                (
                    format!("{} {}", r.room_type, r.room_index),
                    r.room_type.clone(),
                )
            })
            .collect();
        let mut rng = seed::rng(seed::derive_indexed(22, "c2", i));
        let random_state = |rng: &mut rand_chacha::ChaCha8Rng, task_seed: u64| -> WorldState {
            let task = generate_task(scene, &prefs, task_seed).unwrap();
            let (mut s, _) = Simulator::new(scene, &prefs).reset(&task, 0).unwrap();
            let objs = s.object_multiset();
            for v in s.placements.values_mut() {
                v.clear();
            }
            let recs: Vec<String> = s.placements.keys().cloned().collect();
            for o in objs {
                if rng.gen_bool(0.1) && s.held.is_none() {
                    s.held = Some(o);
                } else {
                    s.placements
                        .get_mut(recs.choose(rng).unwrap())
                        .unwrap()
                        .push(o);
                }
            }
            s
        };
        let task_seed = rng.gen();
        let start = random_state(&mut rng, task_seed);
        let end = random_state(&mut rng, task_seed);
        let (c0, m0) = brute_correct(&start, &rooms, &prefs);
        let (c1, _) = brute_correct(&end, &rooms, &prefs);
        match success_rate(&start, &end, scene, &prefs) {
            Err(hearth::Error::NoMisplaced) if m0 == 0 => continue,
            Ok(sr) if m0 > 0 && sr == (c1 as f64 - c0 as f64) / m0 as f64 => {}
            other => bad.push(format!("pair {i}: {other:?} vs ({c0}, {m0}, {c1})")),
        }
        checked += 1;
    }
    verdict(
        bad.is_empty(),
        format!(
            "{checked} pairs, {} mismatches {}",
            bad.len(),
            bad.first().map_or("", |s| s)
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Demonstrator upper bound

fn c3_demonstrator() -> Verdict {
    let t0 = Instant::now();
    let prefs = builtin::preferences(0);
    let mut worst = (1.0f64, 1.0f64);
    let mut n = 0;
    for scene in scenes() {
        let splits =
            TaskSplits::generate(&scene, &prefs, (10, 0, 0), seed::derive(0, "tasks")).unwrap();
        let (_, out) = collect_demos(
            &scene,
            &prefs,
            &splits.demo,
            1,
            5,
            &EpisodeConfig::default(),
        )
        .unwrap();
        for o in out {
            worst.0 = worst.0.min(o.metrics.success_rate);
            worst.1 = worst.1.min(o.metrics.executability);
            n += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst == (1.0, 1.0) && secs < 120.0,
        format!(
            "{n} episodes, min success {:.3}, min executability {:.3}, {secs:.1}s",
            worst.0, worst.1
        ),
    )
}

// ---------------------------------------------------------------------------
// 4-6. Protocol on every scene

const SEEDS: u64 = 5;

fn test_config() -> ProtocolConfig {
    ProtocolConfig {
        eval_splits: vec!["test".into()],
        ..ProtocolConfig::default()
    }
}

/// `metric(scene, seed, variant)` for every protocol run.
struct Grid {
    runs: BTreeMap<(String, u64), ProtocolRun>,
}

impl Grid {
    fn scenes(&self) -> Vec<String> {
        let mut v: Vec<String> = self.runs.keys().map(|(s, _)| s.clone()).collect();
        v.dedup();
        v
    }

    fn values(
        &self,
        scene: &str,
        variant: &str,
        f: impl Fn(&hearth::eval::ReportRow) -> f64,
    ) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|((s, _), _)| s == scene)
            .map(|(_, r)| f(r.report.row(variant, "test").expect("variant evaluated")))
            .collect()
    }

    fn mean(&self, scene: &str, variant: &str, f: impl Fn(&hearth::eval::ReportRow) -> f64) -> f64 {
        let v = self.values(scene, variant, f);
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sr(r: &hearth::eval::ReportRow) -> f64 {
    r.success_rate.mean
}
fn ex(r: &hearth::eval::ReportRow) -> f64 {
    r.executability.mean
}
fn up(r: &hearth::eval::ReportRow) -> f64 {
    r.unique_placements.mean
}

fn protocol_grid() -> (Grid, Duration) {
    let t0 = Instant::now();
    let cfg = test_config();
    let mut runs = BTreeMap::new();
    for scene in scenes() {
        for s in 0..SEEDS {
            let prefs = builtin::preferences(s);
            let run = run_protocol(&scene, &prefs, &cfg, s).expect("protocol runs");
            runs.insert((scene.scene_id.clone(), s), run);
        }
    }
    (Grid { runs }, t0.elapsed())
}

fn c4_personalization(g: &Grid, took: Duration) -> Verdict {
    let mut pass = took.as_secs() < 15 * 60;
    let mut parts = Vec::new();
    for s in g.scenes() {
        let (b, il, st2) = (
            g.mean(&s, "base", sr),
            g.mean(&s, "il", sr),
            g.mean(&s, "st2", sr),
        );
        let ok = b <= 0.05 && il >= b + 0.10 && st2 >= b + 0.30 && st2 >= il - 0.05;
        pass &= ok;
        parts.push(format!(
            "{s}: base {b:.3} il {il:.3} st2 {st2:.3}{}",
            if ok { "" } else { " (!)" }
        ));
    }
    verdict(
        pass,
        format!("{}; {:.0}s", parts.join(", "), took.as_secs_f64()),
    )
}

fn c5_executability(g: &Grid) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in g.scenes() {
        let v: Vec<f64> = ["il", "st1", "st2"]
            .iter()
            .map(|v| g.mean(&s, v, ex))
            .collect();
        pass &= v.iter().all(|&x| x >= 0.95);
        parts.push(format!(
            "{s}: base {:.3} il {:.3} st1 {:.3} st2 {:.3}",
            g.mean(&s, "base", ex),
            v[0],
            v[1],
            v[2]
        ));
    }
    verdict(pass, parts.join(", "))
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
fn sign_test(wins: usize, n: usize) -> f64 {
    let choose =
        |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32)
}

fn c6_exploration_shape(g: &Grid) -> Verdict {
    let scenes = g.scenes();
    let rise = scenes
        .iter()
        .filter(|s| g.mean(s, "st1", up) >= g.mean(s, "il", up))
        .count();
    let fall = scenes
        .iter()
        .filter(|s| g.mean(s, "st2", up) <= g.mean(s, "st1", up))
        .count();
    let means: Vec<String> = scenes
        .iter()
        .map(|s| {
            format!(
                "{s}: {:.2}/{:.2}/{:.2}",
                g.mean(s, "il", up),
                g.mean(s, "st1", up),
                g.mean(s, "st2", up)
            )
        })
        .collect();
    let n = scenes.len();
    verdict(
        rise >= 3 && fall >= 3,
        format!(
            "il/st1/st2 placements {}; st1>=il on {rise}/{n} (p={:.3}), st2<=st1 on {fall}/{n} (p={:.3})",
            means.join(", "),
            sign_test(rise, n),
            sign_test(fall, n)
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Cross-domain transfer

fn c7_cross_domain() -> Verdict {
    let cfg = test_config();
    let mut pass = true;
    let mut parts = Vec::new();
    for (src, tgt) in [(2, 1), (4, 3)] {
        let (source, target) = (builtin::scene(src).unwrap(), builtin::scene(tgt).unwrap());
        let mut gaps = Vec::new();
        for s in 0..SEEDS {
            let run =
                run_cross_domain(&source, &target, &builtin::preferences(s), &cfg, s).unwrap();
            let row = |v: &str| run.report.row(v, "test").unwrap().success_rate.mean;
            gaps.push(row("st2") - row("base"));
        }
        let gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
        pass &= gap >= 0.15;
        parts.push(format!("scene{src}->scene{tgt}: st2-base {gap:.3}"));
    }
    verdict(pass, parts.join(", "))
}

// ---------------------------------------------------------------------------
// 8. Parser totality and round trip

fn random_entity(rng: &mut impl Rng) -> String {
    const WORDS: [&str; 12] = [
        "kitchen", "child's", "room", "table", "mug", "tv", "stand", "counter", "x", "living",
        "shelf", "pan",
    ];
    let n = rng.gen_range(1..4);
    let mut w: Vec<String> = (0..n)
        .map(|_| WORDS.choose(rng).unwrap().to_string())
        .collect();
    w.push(rng.gen_range(0..20).to_string());
    w.join(" ")
}

fn c8_parser() -> Verdict {
    let mut rng = seed::rng(88);
    let mut over = 0;
    for _ in 0..100_000 {
        let len = rng.gen_range(0..120);
        let bytes: Vec<u8> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    *b"go to pick up place on look at , ; \n 1. - kitchen 0"
                        .choose(&mut rng)
                        .unwrap()
                } else {
                    rng.gen()
                }
            })
            .collect();
        let text = String::from_utf8_lossy(&bytes);
        let lossy = parse_plan_lossy(&text);
        if let Ok(p) = parse_plan(&text) {
            over += usize::from(p.plan.actions.len() > MAX_PLAN_LEN);
        }
        over += usize::from(lossy.plan.actions.len() > MAX_PLAN_LEN);
    }
    let mut round_trip_failures = 0;
    let mut truncation_failures = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..16);
        let actions: Vec<HighLevelAction> = (0..n)
            .map(|_| match rng.gen_range(0..4) {
                0 => HighLevelAction::GoTo(random_entity(&mut rng)),
                1 => HighLevelAction::LookAt(random_entity(&mut rng)),
                2 => HighLevelAction::PickUp(random_entity(&mut rng)),
                _ => HighLevelAction::Place(random_entity(&mut rng), random_entity(&mut rng)),
            })
            .collect();
        let parsed = parse_plan(&render_actions(&actions)).map(|p| p.plan.actions);
        let kept = &actions[..n.min(MAX_PLAN_LEN)];
        match parsed {
            Ok(p) if p == kept => {}
            Ok(p) if p.len() > MAX_PLAN_LEN => truncation_failures += 1,
            _ => round_trip_failures += 1,
        }
    }
    verdict(
        over == 0 && round_trip_failures == 0 && truncation_failures == 0,
        format!("1e5 fuzz inputs ({over} over the bound), 1e4 round trips ({round_trip_failures} failures)"),
    )
}

// ---------------------------------------------------------------------------
// 9. Gradient check

fn random_params(
    rng: &mut impl Rng,
    scene: &Scene,
    data: &[(PlannerContext, PlanDecision)],
) -> PolicyParams {
    let mut p = PolicyParams {
        explore_bias: rng.gen_range(-2.0..2.0),
        temperature: rng.gen_range(0.5..2.0),
        ..PolicyParams::default()
    };
    for (ctx, _) in data {
        for d in candidates(&ctx.graph) {
            if let PlanDecision::Rearrange { object, receptacle } = d {
                let obj_type = object.rsplit_once(' ').unwrap().0.to_string();
                let (room_type, rec_type) = scene.rec_types(scene.rec_id(&receptacle).unwrap());
                p.pair_weights
                    .entry(obj_type.clone())
                    .or_default()
                    .insert(rec_type.to_string(), rng.gen_range(-2.0..2.0));
                p.room_weights
                    .entry(obj_type)
                    .or_default()
                    .insert(room_type.to_string(), rng.gen_range(-2.0..2.0));
            }
        }
    }
    p
}

fn c9_gradient() -> Verdict {
    let prefs = builtin::preferences(3);
    let scenes = scenes();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for i in 0..50u64 {
        let scene = &scenes[i as usize % scenes.len()];
        let task = generate_task(scene, &prefs, seed::derive_indexed(99, "c9", i)).unwrap();
        let (ds, _) =
            collect_demos(scene, &prefs, &[task], 1, i, &EpisodeConfig::default()).unwrap();
        let mut rng = seed::rng(seed::derive_indexed(99, "c9/params", i));
        // Demonstrated decisions plus arbitrary feasible ones.
        let mut data = ds.training_pairs();
        let extra: Vec<_> = data
            .iter()
            .map(|(c, _)| {
                (
                    c.clone(),
                    candidates(&c.graph).choose(&mut rng).unwrap().clone(),
                )
            })
            .collect();
        data.extend(extra);
        let p = random_params(&mut rng, scene, &data);
        let (_, g) = policy_nll_grad(&data, &p).unwrap();
        let h = 1e-5;
        let fd = |bump: &dyn Fn(&mut PolicyParams, f64)| {
            let (mut a, mut b) = (p.clone(), p.clone());
            bump(&mut a, h);
            bump(&mut b, -h);
            (policy_nll(&data, &a).unwrap() - policy_nll(&data, &b).unwrap()) / (2.0 * h)
        };
        worst = worst.max((fd(&|q, d| q.explore_bias += d) - g.explore_bias).abs());
        coords += 1;
        for (family, table) in [("pair", &g.pair_weights), ("room", &g.room_weights)] {
            for (a, row) in table {
                for (b, &x) in row {
                    let est = fd(&|q, d| {
                        let t = if family == "pair" {
                            &mut q.pair_weights
                        } else {
                            &mut q.room_weights
                        };
                        *t.entry(a.clone())
                            .or_default()
                            .entry(b.clone())
                            .or_insert(0.0) += d;
                    });
                    worst = worst.max((est - x).abs());
                    coords += 1;
                }
            }
        }
    }
    verdict(
        worst < 1e-5,
        format!("50 fixtures, {coords} coordinates, max abs error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 10. Determinism

fn c10_determinism() -> Verdict {
    let scene = builtin::scene(1).unwrap();
    let prefs = builtin::preferences(7);
    let cfg = ProtocolConfig::default();
    let fingerprint = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let run = pool.install(|| run_protocol(&scene, &prefs, &cfg, 7).unwrap());
        let mut files = vec![run.report.to_csv(), run.report.to_json()];
        files.extend(run.trained.params().values().map(PolicyParams::to_json));
        files
    };
    let (a, b) = (fingerprint(1), fingerprint(3));
    verdict(
        a == b,
        format!("{} files compared across 1 and 3 worker threads", a.len()),
    )
}

fn main() {
    // `cargo test -- --list` wants a listing, not a run.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut hard_failures = 0;
    let mut report = |id: usize, name: &str, soft: bool, v: Verdict| {
        let tag = match (v.pass, soft) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (soft)",
        };
        println!("[{tag}] C{id} {name}: {}", v.detail);
        if !v.pass && !soft {
            hard_failures += 1;
        }
    };
    report(1, "reward conservation", false, c1_reward_conservation());
    report(2, "success-rate oracle", false, c2_success_rate_oracle());
    report(3, "demonstrator upper bound", false, c3_demonstrator());
    let (grid, took) = protocol_grid();
    report(
        4,
        "personalization ordering",
        false,
        c4_personalization(&grid, took),
    );
    report(5, "executability", false, c5_executability(&grid));
    report(6, "exploration shape", true, c6_exploration_shape(&grid));
    report(7, "cross-domain transfer", false, c7_cross_domain());
    report(8, "parser totality and round trip", false, c8_parser());
    report(9, "gradient check", false, c9_gradient());
    report(10, "determinism", false, c10_determinism());
    if hard_failures > 0 {
        println!("{hard_failures} hard criteria failed");
        std::process::exit(1);
    }
}

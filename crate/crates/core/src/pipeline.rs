//! Episode rollouts, interaction datasets, imitation learning and the
//! grow / annotate / filter / refit self-training loop.
//!
//! Rollouts over `(task, episode)` pairs run in parallel; results are
//! collected in input order and every random choice is seeded from the
//! run seed, the task id and the episode index, so outputs never depend
//! on scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::SceneGraph;
use crate::controller::{Controller, FailureReason};
use crate::error::{Error, Result};
use crate::eval::{success_rate, EpisodeMetrics};
use crate::plan::parse_plan_lossy;
use crate::planners::{
    infer_decision, policy_fit, propose, FitConfig, FitOutcome, PlanDecision, PlannerContext,
    PlannerKind, PolicyParams,
};
use crate::seed;
use crate::sim::{Event, Simulator};
use crate::trace::{self, TraceRecord};
use crate::world::{
    count_correct, is_correct_placement, PreferenceDataset, Scene, TaskSpec, WorldState,
    DEFAULT_HORIZON,
};

// ---------------------------------------------------------------------------
// Records

/// One object relocation, rendered as `"<obj> moved from <a> to <b>"`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Movement {
    pub object: String,
    pub from: String,
    pub to: String,
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} moved from {} to {}", self.object, self.from, self.to)
    }
}

impl std::str::FromStr for Movement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Movement> {
        let bad = || Error::Invalid("movement format", s.to_string());
        let (object, rest) = s.split_once(" moved from ").ok_or_else(bad)?;
        let (from, to) = rest.split_once(" to ").ok_or_else(bad)?;
        Ok(Movement {
            object: object.to_string(),
            from: from.to_string(),
            to: to.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub prompt: String,
    pub response: String,
    pub decision: Option<PlanDecision>,
    pub outcomes: Vec<String>,
    /// Preference reward, set by [`annotate`].
    pub reward: Option<i8>,
    /// Simulator reward accrued while the plan ran.
    pub env_reward: i32,
    pub task_id: String,
    pub episode: usize,
    pub iteration: usize,
    /// Index among the responses sampled for this prompt.
    pub sample: usize,
    /// Belief graph the prompt was rendered from.
    pub graph: SceneGraph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Demo,
    Grow,
    SelfTrain,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Demo => "demo",
            DatasetKind::Grow => "grow",
            DatasetKind::SelfTrain => "self_train",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub scene_id: String,
    pub seed: u64,
    /// Self-training iteration that produced the data, if any.
    pub stage_iteration: Option<usize>,
    pub records: Vec<InteractionRecord>,
}

impl Dataset {
    /// `(context, decision)` pairs for fitting.
    pub fn training_pairs(&self) -> Vec<(PlannerContext, PlanDecision)> {
        self.records
            .iter()
            .filter_map(|r| {
                let d = r.decision.clone()?;
                Some((
                    PlannerContext {
                        held: r.graph.held.clone(),
                        graph: r.graph.clone(),
                        prompt: r.prompt.clone(),
                        iteration: r.iteration,
                    },
                    d,
                ))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Episodes

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub horizon: u32,
    /// Hard cap on planner calls; guards against plans that take no steps.
    pub max_plan_iterations: usize,
    pub samples_per_prompt: usize,
    pub record_trace: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            horizon: DEFAULT_HORIZON,
            max_plan_iterations: 200,
            samples_per_prompt: 1,
            record_trace: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub task_id: String,
    pub episode: usize,
    pub records: Vec<InteractionRecord>,
    pub metrics: EpisodeMetrics,
    pub trace: Option<Vec<TraceRecord>>,
    pub start: WorldState,
    pub end: WorldState,
}

/// Running tallies of one episode.
#[derive(Clone, Default)]
struct Tally {
    generated: usize,
    executed: usize,
    placements: BTreeSet<(String, String)>,
    reward_sum: i32,
    /// Source receptacle of the object in hand.
    held_from: Option<(String, String)>,
}

/// The demonstrator stops once every room is surveyed, the hand is empty
/// and every discovered object sits on a correct receptacle.
fn demo_finished(graph: &SceneGraph, scene: &Scene, prefs: &PreferenceDataset) -> bool {
    graph.held.is_none()
        && graph.unvisited_rooms().is_empty()
        && graph.objects().all(|(o, at)| {
            scene
                .rec_id(&graph.receptacle(at).name)
                .is_some_and(|id| prefs.is_correct(scene, o, id))
        })
}

/// Parses and executes one response. Actions cut off by the horizon are
/// not counted; unparseable fragments count as generated.
fn execute_response(
    ctl: &mut Controller,
    ctx: &PlannerContext,
    response: String,
    decision: Option<PlanDecision>,
    tally: &mut Tally,
) -> (InteractionRecord, Option<String>) {
    let parsed = parse_plan_lossy(&response);
    let decision = decision.or_else(|| infer_decision(&ctx.graph, &parsed.plan.actions));
    let failure = parsed
        .plan
        .actions
        .is_empty()
        .then(|| "empty plan".to_string());
    ctl.record(TraceRecord::Plan {
        iteration: ctx.iteration,
        response: response.clone(),
        actions: parsed.plan.actions.len(),
        skipped: parsed.skipped.len(),
        failure: failure.clone(),
    });
    tally.generated += parsed.skipped.len();
    let mut outcomes = Vec::new();
    let mut env_reward = 0;
    for action in &parsed.plan.actions {
        if ctl.state.done() {
            break;
        }
        let r = ctl.execute(action);
        env_reward += r.rewards_accrued;
        for ev in &r.events {
            match ev {
                Event::Grabbed { object, receptacle } => {
                    tally.held_from = Some((object.clone(), receptacle.clone()));
                }
                Event::Placed { object, receptacle } => {
                    let from = match tally.held_from.take() {
                        Some((o, from)) if o == *object => from,
                        _ => receptacle.clone(),
                    };
                    outcomes.push(
                        Movement {
                            object: object.clone(),
                            from,
                            to: receptacle.clone(),
                        }
                        .to_string(),
                    );
                    tally
                        .placements
                        .insert((object.clone(), receptacle.clone()));
                }
                Event::NoOp { .. } => {}
            }
        }
        if r.reason == Some(FailureReason::HorizonReached) {
            continue;
        }
        tally.generated += 1;
        tally.executed += r.executed as usize;
    }
    tally.reward_sum += env_reward;
    let record = InteractionRecord {
        prompt: ctx.prompt.clone(),
        response,
        decision,
        outcomes,
        reward: None,
        env_reward,
        task_id: String::new(),
        episode: 0,
        iteration: ctx.iteration,
        sample: 0,
        graph: ctx.graph.clone(),
    };
    (record, failure)
}

/// Runs the prompt, plan, execute loop on one task until the horizon (or,
/// for the demonstrator, until the task is visibly solved).
pub fn run_episode(
    scene: &Scene,
    prefs: &PreferenceDataset,
    task: &TaskSpec,
    planner: &PlannerKind,
    episode: usize,
    seed: u64,
    cfg: &EpisodeConfig,
) -> Result<EpisodeOutcome> {
    let sim = Simulator::new(scene, prefs).with_horizon(cfg.horizon);
    let (state, _) = sim.reset(task, seed)?;
    let start = state.clone();
    let mut ctl = Controller::new(sim, state, SceneGraph::init(scene));
    if cfg.record_trace {
        ctl = ctl.with_trace(TraceRecord::Header {
            task_id: task.task_id.clone(),
            scene_id: scene.scene_id.clone(),
            seed,
            planner: planner.label().to_string(),
        });
    }
    let mut tally = Tally::default();
    let mut records = Vec::new();
    let mut iterations = 0;
    for n in 0..cfg.max_plan_iterations {
        if ctl.state.done() {
            break;
        }
        if planner.is_demonstrator() && demo_finished(&ctl.graph, scene, prefs) {
            break;
        }
        iterations += 1;
        let ctx = PlannerContext::new(ctl.graph.clone(), n);
        let plan_seed = seed::derive_indexed(seed, "plan", n as u64);
        // Extra samples are executed on a copy of the episode and logged,
        // but only the first sample advances the episode.
        for k in 1..cfg.samples_per_prompt.max(1) {
            let sample_seed = seed::derive_indexed(plan_seed, "sample", k as u64);
            if let Ok(p) = propose(planner, &ctx, scene, prefs, sample_seed) {
                let mut copy = ctl.clone();
                copy.trace = None;
                let mut t = tally.clone();
                let (mut rec, _) =
                    execute_response(&mut copy, &ctx, p.response, p.decision, &mut t);
                rec.sample = k;
                records.push(rec);
            }
        }
        match propose(planner, &ctx, scene, prefs, plan_seed) {
            Ok(p) => {
                let (rec, _) = execute_response(&mut ctl, &ctx, p.response, p.decision, &mut tally);
                records.push(rec);
            }
            Err(e) => ctl.record(TraceRecord::Plan {
                iteration: n,
                response: String::new(),
                actions: 0,
                skipped: 0,
                failure: Some(e.to_string()),
            }),
        }
    }
    // Records are collected in (iteration, sample) order.
    records.sort_by_key(|r| (r.iteration, r.sample));
    for r in &mut records {
        r.task_id = task.task_id.clone();
        r.episode = episode;
    }
    let end = ctl.state.clone();
    let metrics = episode_metrics(&start, &end, scene, prefs, &tally, iterations)?;
    ctl.record(TraceRecord::Metrics {
        metrics: metrics.clone(),
    });
    Ok(EpisodeOutcome {
        task_id: task.task_id.clone(),
        episode,
        records,
        metrics,
        trace: ctl.trace.take(),
        start,
        end,
    })
}

fn episode_metrics(
    start: &WorldState,
    end: &WorldState,
    scene: &Scene,
    prefs: &PreferenceDataset,
    tally: &Tally,
    plan_iterations: usize,
) -> Result<EpisodeMetrics> {
    let (correct_start, misplaced_start) = count_correct(start, scene, prefs);
    let (correct_end, _) = count_correct(end, scene, prefs);
    Ok(EpisodeMetrics {
        success_rate: success_rate(start, end, scene, prefs)?,
        executability: if tally.generated == 0 {
            0.0
        } else {
            tally.executed as f64 / tally.generated as f64
        },
        unique_placements: tally.placements.len(),
        reward_sum: tally.reward_sum,
        plan_iterations,
        correct_start,
        misplaced_start,
        correct_end,
        generated: tally.generated,
        executed: tally.executed,
    })
}

/// Seed of episode `episode` of `task` within stage `label`.
pub fn episode_seed(run_seed: u64, label: &str, task_id: &str, episode: usize) -> u64 {
    seed::derive_indexed(
        seed::derive(run_seed, &format!("{label}/{task_id}")),
        "episode",
        episode as u64,
    )
}

/// Every `(task, episode)` pair, in parallel, in input order.
#[allow(clippy::too_many_arguments)]
pub fn rollouts(
    scene: &Scene,
    prefs: &PreferenceDataset,
    planner: &PlannerKind,
    tasks: &[TaskSpec],
    episodes: usize,
    run_seed: u64,
    label: &str,
    cfg: &EpisodeConfig,
) -> Result<Vec<EpisodeOutcome>> {
    let jobs: Vec<(&TaskSpec, usize)> = tasks
        .iter()
        .flat_map(|t| (0..episodes).map(move |e| (t, e)))
        .collect();
    jobs.par_iter()
        .map(|&(task, e)| {
            let s = episode_seed(run_seed, label, &task.task_id, e);
            run_episode(scene, prefs, task, planner, e, s, cfg)
        })
        .collect()
}

fn dataset(
    kind: DatasetKind,
    scene: &Scene,
    seed: u64,
    stage_iteration: Option<usize>,
    outcomes: &[EpisodeOutcome],
) -> Dataset {
    Dataset {
        kind,
        scene_id: scene.scene_id.clone(),
        seed,
        stage_iteration,
        records: outcomes
            .iter()
            .flat_map(|o| o.records.iter().cloned())
            .collect(),
    }
}

fn check_tasks(scene: &Scene, tasks: &[TaskSpec]) -> Result<()> {
    for t in tasks {
        if t.scene_id != scene.scene_id {
            return Err(Error::SceneMismatch {
                task: t.task_id.clone(),
                scene: scene.scene_id.clone(),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Stages

/// Demonstrator rollouts; one record per plan iteration.
pub fn collect_demos(
    scene: &Scene,
    prefs: &PreferenceDataset,
    tasks: &[TaskSpec],
    episodes: usize,
    seed: u64,
    cfg: &EpisodeConfig,
) -> Result<(Dataset, Vec<EpisodeOutcome>)> {
    check_tasks(scene, tasks)?;
    let out = rollouts(
        scene,
        prefs,
        &PlannerKind::Demonstrator,
        tasks,
        episodes,
        seed,
        "demo",
        cfg,
    )?;
    Ok((dataset(DatasetKind::Demo, scene, seed, None, &out), out))
}

pub fn fit_il(demo: &Dataset, init: &PolicyParams, fit: &FitConfig) -> Result<FitOutcome> {
    let pairs = demo.training_pairs();
    if pairs.is_empty() {
        return Err(Error::Empty("demonstration dataset"));
    }
    policy_fit(&pairs, init, fit)
}

/// Policy rollouts on the training tasks.
#[allow(clippy::too_many_arguments)]
pub fn grow(
    scene: &Scene,
    prefs: &PreferenceDataset,
    params: &PolicyParams,
    tasks: &[TaskSpec],
    episodes: usize,
    seed: u64,
    stage_iteration: Option<usize>,
    cfg: &EpisodeConfig,
) -> Result<(Dataset, Vec<EpisodeOutcome>)> {
    check_tasks(scene, tasks)?;
    let planner = PlannerKind::Policy {
        params: params.clone(),
    };
    let out = rollouts(scene, prefs, &planner, tasks, episodes, seed, "grow", cfg)?;
    Ok((
        dataset(DatasetKind::Grow, scene, seed, stage_iteration, &out),
        out,
    ))
}

/// Preference reward of one record from its outcomes: +1 when the moved
/// object ends correct having started misplaced, -1 for the reverse, and 0
/// otherwise.
pub fn outcome_reward(outcomes: &[String], scene: &Scene, prefs: &PreferenceDataset) -> Result<i8> {
    match outcomes {
        [] => Ok(0),
        [one] => {
            let m: Movement = one.parse()?;
            let before = is_correct_placement(&m.object, &m.from, scene, prefs)?;
            let after = is_correct_placement(&m.object, &m.to, scene, prefs)?;
            Ok(after as i8 - before as i8)
        }
        many => Err(Error::AmbiguousPlan(many.len())),
    }
}

pub fn annotate(dataset: &Dataset, scene: &Scene, prefs: &PreferenceDataset) -> Result<Dataset> {
    let mut out = dataset.clone();
    for r in &mut out.records {
        r.reward = Some(outcome_reward(&r.outcomes, scene, prefs)?);
    }
    Ok(out)
}

/// Keeps the positively rewarded records. An empty result is allowed.
pub fn filter_positive(dataset: &Dataset) -> Dataset {
    let records: Vec<_> = dataset
        .records
        .iter()
        .filter(|r| r.reward.is_some_and(|x| x > 0))
        .cloned()
        .collect();
    if records.is_empty() {
        eprintln!(
            "warning: no positive records in {} dataset for {}",
            dataset.kind, dataset.scene_id
        );
    }
    Dataset {
        kind: DatasetKind::SelfTrain,
        records,
        ..dataset.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    pub episodes_per_task: usize,
    pub fit: FitConfig,
    /// Also fit on the demonstrations each iteration.
    pub mix_demos: bool,
    pub episode: EpisodeConfig,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            episodes_per_task: 5,
            fit: FitConfig::default(),
            mix_demos: false,
            episode: EpisodeConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SelfTrainIteration {
    pub params: PolicyParams,
    /// Annotated grow data.
    pub grow: Dataset,
    pub self_train: Dataset,
    /// Empty when the fit was skipped for lack of positive records.
    pub losses: Vec<f64>,
    pub grow_metrics: Vec<EpisodeMetrics>,
}

/// `iterations` rounds of grow, annotate, filter and refit, each starting
/// from the previous round's params.
#[allow(clippy::too_many_arguments)]
pub fn run_self_training(
    scene: &Scene,
    prefs: &PreferenceDataset,
    params0: &PolicyParams,
    tasks: &[TaskSpec],
    iterations: usize,
    cfg: &SelfTrainConfig,
    seed: u64,
    demos: Option<&Dataset>,
) -> Result<Vec<SelfTrainIteration>> {
    let mut out: Vec<SelfTrainIteration> = Vec::with_capacity(iterations);
    let mut params = params0.clone();
    for k in 1..=iterations {
        let grow_seed = seed::derive_indexed(seed, "grow", k as u64);
        let (raw, episodes) = grow(
            scene,
            prefs,
            &params,
            tasks,
            cfg.episodes_per_task,
            grow_seed,
            Some(k),
            &cfg.episode,
        )?;
        let grow = annotate(&raw, scene, prefs)?;
        let self_train = filter_positive(&grow);
        let mut pairs = self_train.training_pairs();
        if cfg.mix_demos {
            if let Some(d) = demos {
                pairs.extend(d.training_pairs());
            }
        }
        let mut losses = Vec::new();
        if !self_train.records.is_empty() {
            let fit = policy_fit(&pairs, &params, &cfg.fit)?;
            params = fit.params;
            losses = fit.losses;
        }
        out.push(SelfTrainIteration {
            params: params.clone(),
            grow,
            self_train,
            losses,
            grow_metrics: episodes.into_iter().map(|e| e.metrics).collect(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSONL export

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: DatasetKind,
    scene_id: String,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage_iteration: Option<usize>,
    task_id: String,
    episode: usize,
    iteration: usize,
    sample: usize,
    decision: Option<PlanDecision>,
    outcomes: Vec<String>,
    env_reward: i32,
    graph: SceneGraph,
}

#[derive(Serialize, Deserialize)]
struct Line {
    prompt: String,
    completion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward: Option<i8>,
    meta: Meta,
}

/// Writes one fine-tuning example per line. With `with_reward` every
/// record must be annotated; without it the reward field is omitted.
pub fn export_finetune_jsonl(dataset: &Dataset, path: &Path, with_reward: bool) -> Result<()> {
    let mut lines = Vec::with_capacity(dataset.records.len());
    for r in &dataset.records {
        if with_reward && r.reward.is_none() {
            return Err(Error::Invalid(
                "annotated records",
                format!(
                    "{} episode {} iteration {}",
                    r.task_id, r.episode, r.iteration
                ),
            ));
        }
        lines.push(Line {
            prompt: r.prompt.clone(),
            completion: r.response.clone(),
            reward: if with_reward { r.reward } else { None },
            meta: Meta {
                kind: dataset.kind,
                scene_id: dataset.scene_id.clone(),
                seed: dataset.seed,
                stage_iteration: dataset.stage_iteration,
                task_id: r.task_id.clone(),
                episode: r.episode,
                iteration: r.iteration,
                sample: r.sample,
                decision: r.decision.clone(),
                outcomes: r.outcomes.clone(),
                env_reward: r.env_reward,
                graph: r.graph.clone(),
            },
        });
    }
    trace::write_jsonl(path, &lines)
}

/// Reads a file written by [`export_finetune_jsonl`], checking its kind.
pub fn import_finetune_jsonl(path: &Path, kind: DatasetKind) -> Result<Dataset> {
    let lines: Vec<Line> = trace::read_jsonl(path)?;
    let mut ds = Dataset {
        kind,
        scene_id: String::new(),
        seed: 0,
        stage_iteration: None,
        records: Vec::with_capacity(lines.len()),
    };
    for (i, l) in lines.into_iter().enumerate() {
        if l.meta.kind != kind {
            return Err(Error::Invalid(
                "dataset kind",
                format!(
                    "{}: line {} is {}, expected {kind}",
                    path.display(),
                    i + 1,
                    l.meta.kind
                ),
            ));
        }
        if i == 0 {
            ds.scene_id = l.meta.scene_id.clone();
            ds.seed = l.meta.seed;
            ds.stage_iteration = l.meta.stage_iteration;
        }
        ds.records.push(InteractionRecord {
            prompt: l.prompt,
            response: l.completion,
            decision: l.meta.decision,
            outcomes: l.meta.outcomes,
            reward: l.reward,
            env_reward: l.meta.env_reward,
            task_id: l.meta.task_id,
            episode: l.meta.episode,
            iteration: l.meta.iteration,
            sample: l.meta.sample,
            graph: l.meta.graph,
        });
    }
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Run manifest

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub seed: u64,
    pub config: serde_json::Value,
    /// Relative path -> sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Record of every stage run in an output directory. Paths are relative
/// to that directory and there are no timestamps, so identical runs give
/// identical manifests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load_or_default(out: &Path) -> Result<Manifest> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), &e))
    }

    pub fn record(
        &mut self,
        out: &Path,
        stage: &str,
        seed: u64,
        config: serde_json::Value,
        inputs: &[&str],
        outputs: &[&str],
    ) -> Result<()> {
        let hash = |files: &[&str]| -> Result<BTreeMap<String, String>> {
            files
                .iter()
                .map(|f| Ok((f.to_string(), sha256_file(&out.join(f))?)))
                .collect()
        };
        let entry = StageEntry {
            seed,
            config,
            inputs: hash(inputs)?,
            outputs: hash(outputs)?,
        };
        self.stages.insert(stage.to_string(), entry);
        Ok(())
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let path = out.join(MANIFEST_FILE);
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::world::generate_task;

    fn fixture(k: usize) -> (Scene, PreferenceDataset, Vec<TaskSpec>) {
        let scene = builtin::scene(k).unwrap();
        let prefs = builtin::preferences(1);
        let tasks = (0..3)
            .map(|i| generate_task(&scene, &prefs, 40 + i).unwrap())
            .collect();
        (scene, prefs, tasks)
    }

    #[test]
    fn movement_strings_round_trip() {
        let s = "pan 1 moved from kitchen 0 table 6 to kitchen 0 counter 1";
        let m: Movement = s.parse().unwrap();
        assert_eq!(m.object, "pan 1");
        assert_eq!(m.from, "kitchen 0 table 6");
        assert_eq!(m.to, "kitchen 0 counter 1");
        assert_eq!(m.to_string(), s);
        assert!("pan 1 went somewhere".parse::<Movement>().is_err());
    }

    #[test]
    fn annotation_follows_the_preference_delta() {
        let scene = builtin::scene(1).unwrap();
        let prefs = builtin::preferences(1);
        let (good, bad) = {
            let mut good = None;
            let mut bad = None;
            for (id, r) in scene.receptacles() {
                if prefs.is_correct(&scene, "pan 1", id) {
                    good.get_or_insert(r.name.clone());
                } else {
                    bad.get_or_insert(r.name.clone());
                }
            }
            (good.unwrap(), bad.unwrap())
        };
        let mv = |a: &str, b: &str| vec![format!("pan 1 moved from {a} to {b}")];
        assert_eq!(outcome_reward(&mv(&bad, &good), &scene, &prefs).unwrap(), 1);
        assert_eq!(
            outcome_reward(&mv(&good, &bad), &scene, &prefs).unwrap(),
            -1
        );
        assert_eq!(
            outcome_reward(&mv(&good, &good), &scene, &prefs).unwrap(),
            0
        );
        assert_eq!(outcome_reward(&mv(&bad, &bad), &scene, &prefs).unwrap(), 0);
        assert_eq!(outcome_reward(&[], &scene, &prefs).unwrap(), 0);
        let two = [mv(&bad, &good), mv(&good, &bad)].concat();
        assert!(matches!(
            outcome_reward(&two, &scene, &prefs),
            Err(Error::AmbiguousPlan(2))
        ));
    }

    fn record(reward: Option<i8>) -> InteractionRecord {
        InteractionRecord {
            prompt: "p".into(),
            response: "go to kitchen 0".into(),
            decision: None,
            outcomes: vec![],
            reward,
            env_reward: 0,
            task_id: "t".into(),
            episode: 0,
            iteration: 0,
            sample: 0,
            graph: SceneGraph {
                rooms: vec![],
                held: None,
            },
        }
    }

    #[test]
    fn filter_keeps_only_positive_records_in_order() {
        let mut ds = Dataset {
            kind: DatasetKind::Grow,
            scene_id: "s".into(),
            seed: 1,
            stage_iteration: Some(1),
            records: vec![],
        };
        for (i, r) in [1, 0, -1, 1].into_iter().enumerate() {
            let mut rec = record(Some(r));
            rec.iteration = i;
            ds.records.push(rec);
        }
        let f = filter_positive(&ds);
        assert_eq!(f.kind, DatasetKind::SelfTrain);
        assert_eq!(
            f.records.iter().map(|r| r.iteration).collect::<Vec<_>>(),
            [0, 3]
        );
        assert_eq!(f.stage_iteration, Some(1));
        ds.records.iter_mut().for_each(|r| r.reward = Some(0));
        assert!(filter_positive(&ds).records.is_empty());
    }

    #[test]
    fn demos_cover_exploration_and_each_repair() {
        let (scene, prefs, tasks) = fixture(1);
        let (ds, outs) =
            collect_demos(&scene, &prefs, &tasks, 1, 3, &EpisodeConfig::default()).unwrap();
        assert_eq!(outs.len(), 3);
        for (task, out) in tasks.iter().zip(&outs) {
            let misplaced = task.misplaced_count(&scene, &prefs).unwrap();
            let recs: Vec<_> = ds
                .records
                .iter()
                .filter(|r| r.task_id == task.task_id)
                .collect();
            assert!(recs[0].decision.as_ref().unwrap().is_explore());
            assert_eq!(recs.len(), 1 + misplaced, "{}", task.task_id);
            assert_eq!(out.metrics.success_rate, 1.0);
            assert_eq!(out.metrics.executability, 1.0);
            // Every repair ends correct, so annotation gives +1.
            let ann = annotate(&ds, &scene, &prefs).unwrap();
            assert!(ann
                .records
                .iter()
                .filter(|r| r.task_id == task.task_id)
                .skip(1)
                .all(|r| r.reward == Some(1)));
        }
    }

    #[test]
    fn demo_collection_is_deterministic() {
        let (scene, prefs, tasks) = fixture(3);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        for p in [&a, &b] {
            let (ds, _) =
                collect_demos(&scene, &prefs, &tasks, 1, 9, &EpisodeConfig::default()).unwrap();
            export_finetune_jsonl(&ds, p, false).unwrap();
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn jsonl_round_trips_and_checks_kind() {
        let (scene, prefs, tasks) = fixture(3);
        let (ds, _) =
            collect_demos(&scene, &prefs, &tasks[..1], 1, 2, &EpisodeConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.jsonl");
        export_finetune_jsonl(&ds, &path, false).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), ds.records.len());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["completion", "meta", "prompt"]);
        assert!(first.get("reward").is_none());
        assert!(text.starts_with("{\"prompt\":"));
        assert_eq!(import_finetune_jsonl(&path, DatasetKind::Demo).unwrap(), ds);
        assert!(import_finetune_jsonl(&path, DatasetKind::Grow).is_err());
        // Unannotated records cannot be exported with rewards.
        assert!(export_finetune_jsonl(&ds, &path, true).is_err());
        let ann = annotate(&ds, &scene, &prefs).unwrap();
        export_finetune_jsonl(&ann, &path, true).unwrap();
        let first: serde_json::Value = serde_json::from_str(
            std::fs::read_to_string(&path)
                .unwrap()
                .lines()
                .next()
                .unwrap(),
        )
        .unwrap();
        assert_eq!(first["reward"], 0);
        assert_eq!(
            import_finetune_jsonl(&path, DatasetKind::Demo).unwrap(),
            ann
        );
    }

    #[test]
    fn il_and_zero_iteration_self_training() {
        let (scene, prefs, tasks) = fixture(3);
        let (ds, _) =
            collect_demos(&scene, &prefs, &tasks, 1, 2, &EpisodeConfig::default()).unwrap();
        let init = PolicyParams::default();
        let fit = fit_il(&ds, &init, &FitConfig::default()).unwrap();
        assert_eq!(fit, fit_il(&ds, &init, &FitConfig::default()).unwrap());
        let empty = Dataset {
            records: vec![],
            ..ds.clone()
        };
        assert!(fit_il(&empty, &init, &FitConfig::default()).is_err());
        let st = run_self_training(
            &scene,
            &prefs,
            &fit.params,
            &tasks,
            0,
            &SelfTrainConfig::default(),
            1,
            None,
        )
        .unwrap();
        assert!(st.is_empty());
    }

    #[test]
    fn grow_records_are_seed_dependent() {
        let (scene, prefs, tasks) = fixture(1);
        let cfg = EpisodeConfig {
            horizon: 300,
            ..EpisodeConfig::default()
        };
        let p = PolicyParams::baseline(
            0,
            &crate::planners::Vocab::from_scene(&scene, builtin::OBJECT_TYPES),
        );
        let (a, _) = grow(&scene, &prefs, &p, &tasks, 1, 1, None, &cfg).unwrap();
        let (b, _) = grow(&scene, &prefs, &p, &tasks, 1, 2, None, &cfg).unwrap();
        let (a2, _) = grow(&scene, &prefs, &p, &tasks, 1, 1, None, &cfg).unwrap();
        assert_eq!(a, a2);
        assert_ne!(a.records, b.records);
    }

    #[test]
    fn extra_samples_are_logged_without_advancing_the_episode() {
        let (scene, prefs, tasks) = fixture(3);
        let p = PolicyParams::baseline(
            0,
            &crate::planners::Vocab::from_scene(&scene, builtin::OBJECT_TYPES),
        );
        let planner = PlannerKind::Policy { params: p };
        let one = EpisodeConfig {
            horizon: 200,
            ..EpisodeConfig::default()
        };
        let three = EpisodeConfig {
            samples_per_prompt: 3,
            ..one.clone()
        };
        let a = run_episode(&scene, &prefs, &tasks[0], &planner, 0, 5, &one).unwrap();
        let b = run_episode(&scene, &prefs, &tasks[0], &planner, 0, 5, &three).unwrap();
        assert_eq!(a.end, b.end);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(b.records.len(), 3 * a.records.len());
        let main: Vec<_> = b
            .records
            .iter()
            .filter(|r| r.sample == 0)
            .cloned()
            .collect();
        assert_eq!(main, a.records);
    }

    #[test]
    fn manifest_hashes_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.txt"), "abc").unwrap();
        let mut m = Manifest::default();
        m.record(
            dir.path(),
            "stage",
            1,
            serde_json::json!({"a": 1}),
            &[],
            &["x.txt"],
        )
        .unwrap();
        assert_eq!(
            m.stages["stage"].outputs["x.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load_or_default(dir.path()).unwrap(), m);
    }
}

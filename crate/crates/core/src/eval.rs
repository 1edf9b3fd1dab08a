//! Metrics, aggregation and experiment protocols.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::FailureReason;
use crate::error::{Error, Result};
use crate::pipeline::{
    collect_demos, fit_il, rollouts, run_self_training, Dataset, EpisodeConfig, SelfTrainConfig,
    SelfTrainIteration,
};
use crate::planners::{FitConfig, PlannerKind, PolicyParams, Vocab};
use crate::seed;
use crate::sim::{Event, Simulator};
use crate::trace::TraceRecord;
use crate::world::{count_correct, generate_task, PreferenceDataset, Scene, TaskSpec, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success_rate: f64,
    pub executability: f64,
    pub unique_placements: usize,
    pub reward_sum: i32,
    pub plan_iterations: usize,
    pub correct_start: usize,
    pub misplaced_start: usize,
    pub correct_end: usize,
    /// High-level actions generated, including unparseable fragments.
    pub generated: usize,
    pub executed: usize,
}

/// `(correct_end - correct_start) / misplaced_start`.
pub fn success_rate(
    start: &WorldState,
    end: &WorldState,
    scene: &Scene,
    prefs: &PreferenceDataset,
) -> Result<f64> {
    let (c0, m0) = count_correct(start, scene, prefs);
    if m0 == 0 {
        return Err(Error::NoMisplaced);
    }
    let (c1, _) = count_correct(end, scene, prefs);
    Ok((c1 as f64 - c0 as f64) / m0 as f64)
}

/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`).
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewValues(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Absent when fewer than two values were aggregated.
    pub sem: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        match aggregate(values) {
            Ok((mean, sem)) => Summary {
                mean,
                sem: Some(sem),
            },
            Err(_) => Summary {
                mean: values.first().copied().unwrap_or(f64::NAN),
                sem: None,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scene: String,
    /// Scene the variant was trained on, when it differs from `scene`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_scene: Option<String>,
    pub variant: String,
    pub split: String,
    pub n: usize,
    pub success_rate: Summary,
    pub executability: Summary,
    pub unique_placements: Summary,
}

impl ReportRow {
    pub fn from_metrics(
        scene: &str,
        source_scene: Option<&str>,
        variant: &str,
        split: &str,
        metrics: &[EpisodeMetrics],
    ) -> ReportRow {
        let col = |f: fn(&EpisodeMetrics) -> f64| -> Vec<f64> { metrics.iter().map(f).collect() };
        ReportRow {
            scene: scene.to_string(),
            source_scene: source_scene.map(str::to_string),
            variant: variant.to_string(),
            split: split.to_string(),
            n: metrics.len(),
            success_rate: Summary::of(&col(|m| m.success_rate)),
            executability: Summary::of(&col(|m| m.executability)),
            unique_placements: Summary::of(&col(|m| m.unique_placements as f64)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<ReportRow>,
}

impl AggregateReport {
    pub fn row(&self, variant: &str, split: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.split == split)
    }

    /// Success-rate table with columns `scene,variant,split,mean,sem,n`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene,variant,split,mean,sem,n\n");
        for r in &self.rows {
            let sem = r
                .success_rate
                .sem
                .map(|x| format!("{x:.6}"))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{sem},{}",
                r.scene, r.variant, r.split, r.success_rate.mean, r.n
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, csv: &Path, json: &Path) -> Result<()> {
        for (path, text) in [(csv, self.to_csv()), (json, self.to_json())] {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Protocol

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplits {
    pub demo: Vec<TaskSpec>,
    pub train: Vec<TaskSpec>,
    pub test: Vec<TaskSpec>,
}

impl TaskSplits {
    /// Samples `demo + train + test` tasks from one seed. Ids encode the
    /// split, so the three sets are disjoint.
    pub fn generate(
        scene: &Scene,
        prefs: &PreferenceDataset,
        sizes: (usize, usize, usize),
        seed: u64,
    ) -> Result<TaskSplits> {
        let make = |split: &str, n: usize| -> Result<Vec<TaskSpec>> {
            (0..n)
                .map(|i| {
                    let s = seed::derive_indexed(seed, &format!("tasks/{split}"), i as u64);
                    let mut t = generate_task(scene, prefs, s)?;
                    t.task_id = format!("{}-{split}-{i:02}", scene.scene_id);
                    Ok(t)
                })
                .collect()
        };
        Ok(TaskSplits {
            demo: make("demo", sizes.0)?,
            train: make("train", sizes.1)?,
            test: make("test", sizes.2)?,
        })
    }

    pub fn split(&self, name: &str) -> Option<&[TaskSpec]> {
        match name {
            "demo" => Some(&self.demo),
            "train" => Some(&self.train),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn load(path: &Path) -> Result<TaskSplits> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), &e))
    }

    pub fn find(&self, task_id: &str) -> Option<&TaskSpec> {
        self.demo
            .iter()
            .chain(&self.train)
            .chain(&self.test)
            .find(|t| t.task_id == task_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub demo_tasks: usize,
    pub train_tasks: usize,
    pub test_tasks: usize,
    pub demo_episodes: usize,
    pub episodes_per_task: usize,
    pub st_iterations: usize,
    pub fit_il: FitConfig,
    pub fit_st: FitConfig,
    pub mix_demos: bool,
    pub episode: EpisodeConfig,
    /// Splits every variant is evaluated on.
    pub eval_splits: Vec<String>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            demo_tasks: 10,
            train_tasks: 20,
            test_tasks: 5,
            demo_episodes: 1,
            episodes_per_task: 5,
            st_iterations: 2,
            fit_il: FitConfig::default(),
            fit_st: FitConfig::default(),
            mix_demos: false,
            episode: EpisodeConfig::default(),
            eval_splits: vec!["train".into(), "test".into()],
        }
    }
}

impl ProtocolConfig {
    pub fn self_train(&self) -> SelfTrainConfig {
        SelfTrainConfig {
            episodes_per_task: self.episodes_per_task,
            fit: self.fit_st,
            mix_demos: self.mix_demos,
            episode: self.episode.clone(),
        }
    }

    pub fn variant_names(&self) -> Vec<String> {
        let mut v = vec!["base".to_string(), "il".to_string()];
        v.extend((1..=self.st_iterations).map(|k| format!("st{k}")));
        v
    }
}

/// Everything a protocol run trains.
#[derive(Clone, Debug)]
pub struct Trained {
    pub baseline_seed: u64,
    pub demo: Dataset,
    pub demo_metrics: Vec<EpisodeMetrics>,
    pub il: PolicyParams,
    pub il_losses: Vec<f64>,
    pub st: Vec<SelfTrainIteration>,
}

impl Trained {
    /// Planner of each variant, in report order.
    pub fn planners(&self) -> Vec<(String, PlannerKind)> {
        let mut v = vec![
            (
                "base".to_string(),
                PlannerKind::Baseline {
                    seed: self.baseline_seed,
                },
            ),
            (
                "il".to_string(),
                PlannerKind::Policy {
                    params: self.il.clone(),
                },
            ),
        ];
        for (k, it) in self.st.iter().enumerate() {
            v.push((
                format!("st{}", k + 1),
                PlannerKind::Policy {
                    params: it.params.clone(),
                },
            ));
        }
        v
    }

    pub fn params(&self) -> BTreeMap<String, PolicyParams> {
        self.planners()
            .into_iter()
            .filter_map(|(name, p)| match p {
                PlannerKind::Policy { params } => Some((name, params)),
                _ => None,
            })
            .collect()
    }
}

pub fn object_vocab(prefs: &PreferenceDataset) -> Vec<&str> {
    prefs.entries.keys().map(String::as_str).collect()
}

/// Demonstrations, imitation fit and self-training on one scene.
pub fn train_variants(
    scene: &Scene,
    prefs: &PreferenceDataset,
    splits: &TaskSplits,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<Trained> {
    let baseline_seed = seed::derive(seed, "baseline");
    let (demo, demo_out) = collect_demos(
        scene,
        prefs,
        &splits.demo,
        cfg.demo_episodes,
        seed::derive(seed, "demo"),
        &cfg.episode,
    )?;
    let init = PolicyParams::baseline(
        baseline_seed,
        &Vocab::from_scene(scene, object_vocab(prefs)),
    );
    let il = fit_il(&demo, &init, &cfg.fit_il)?;
    let st = run_self_training(
        scene,
        prefs,
        &il.params,
        &splits.train,
        cfg.st_iterations,
        &cfg.self_train(),
        seed::derive(seed, "self_train"),
        Some(&demo),
    )?;
    Ok(Trained {
        baseline_seed,
        demo,
        demo_metrics: demo_out.into_iter().map(|o| o.metrics).collect(),
        il: il.params,
        il_losses: il.losses,
        st,
    })
}

/// Per-episode metrics of one variant on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub variant: String,
    pub split: String,
    pub task_id: String,
    pub episode: usize,
    pub metrics: EpisodeMetrics,
}

/// Evaluates variants on task sets. Episode seeds depend on the task and
/// episode only, so all variants face the same draws.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    scene: &Scene,
    prefs: &PreferenceDataset,
    source_scene: Option<&str>,
    planners: &[(String, PlannerKind)],
    splits: &[(&str, &[TaskSpec])],
    episodes: usize,
    seed: u64,
    cfg: &EpisodeConfig,
) -> Result<(AggregateReport, Vec<EpisodeRow>)> {
    let mut report = AggregateReport::default();
    let mut rows = Vec::new();
    for (variant, planner) in planners {
        for (split, tasks) in splits {
            let out = rollouts(scene, prefs, planner, tasks, episodes, seed, "eval", cfg)?;
            let metrics: Vec<EpisodeMetrics> = out.iter().map(|o| o.metrics.clone()).collect();
            report.rows.push(ReportRow::from_metrics(
                &scene.scene_id,
                source_scene,
                variant,
                split,
                &metrics,
            ));
            rows.extend(out.into_iter().map(|o| EpisodeRow {
                variant: variant.clone(),
                split: split.to_string(),
                task_id: o.task_id,
                episode: o.episode,
                metrics: o.metrics,
            }));
        }
    }
    Ok((report, rows))
}

#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub report: AggregateReport,
    pub episodes: Vec<EpisodeRow>,
    pub splits: TaskSplits,
    pub trained: Trained,
}

/// Demos, IL and self-training on `scene`, then every variant on the
/// configured splits.
pub fn run_protocol(
    scene: &Scene,
    prefs: &PreferenceDataset,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<ProtocolRun> {
    let splits = TaskSplits::generate(
        scene,
        prefs,
        (cfg.demo_tasks, cfg.train_tasks, cfg.test_tasks),
        seed::derive(seed, "tasks"),
    )?;
    let trained = train_variants(scene, prefs, &splits, cfg, seed)?;
    let eval_sets: Vec<(&str, &[TaskSpec])> = cfg
        .eval_splits
        .iter()
        .map(|s| {
            splits
                .split(s)
                .map(|t| (s.as_str(), t))
                .ok_or_else(|| Error::Invalid("known split", s.clone()))
        })
        .collect::<Result<_>>()?;
    let (report, episodes) = evaluate(
        scene,
        prefs,
        None,
        &trained.planners(),
        &eval_sets,
        cfg.episodes_per_task,
        seed::derive(seed, "eval"),
        &cfg.episode,
    )?;
    Ok(ProtocolRun {
        report,
        episodes,
        splits,
        trained,
    })
}

/// Trains on `source` and evaluates every variant on the test tasks of
/// `target`.
pub fn run_cross_domain(
    source: &Scene,
    target: &Scene,
    prefs: &PreferenceDataset,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<ProtocolRun> {
    if source.scene_id == target.scene_id {
        return Err(Error::Precondition(format!(
            "cross-domain evaluation needs two different scenes, got {} twice",
            source.scene_id
        )));
    }
    let splits = TaskSplits::generate(
        source,
        prefs,
        (cfg.demo_tasks, cfg.train_tasks, 0),
        seed::derive(seed, "tasks"),
    )?;
    let target_splits = TaskSplits::generate(
        target,
        prefs,
        (0, 0, cfg.test_tasks),
        seed::derive(seed, "target_tasks"),
    )?;
    let trained = train_variants(source, prefs, &splits, cfg, seed)?;
    let (report, episodes) = evaluate(
        target,
        prefs,
        Some(&source.scene_id),
        &trained.planners(),
        &[("test", &target_splits.test)],
        cfg.episodes_per_task,
        seed::derive(seed, "eval"),
        &cfg.episode,
    )?;
    Ok(ProtocolRun {
        report,
        episodes,
        splits: TaskSplits {
            demo: splits.demo,
            train: splits.train,
            test: target_splits.test,
        },
        trained,
    })
}

// ---------------------------------------------------------------------------
// Replay

/// Recomputes an episode's metrics from its trace. The low-level steps are
/// replayed on a fresh simulator and must reproduce the recorded events.
pub fn replay_trace(
    records: &[TraceRecord],
    scene: &Scene,
    prefs: &PreferenceDataset,
    task: &TaskSpec,
    horizon: u32,
) -> Result<EpisodeMetrics> {
    let Some(TraceRecord::Header { seed, task_id, .. }) = records.first() else {
        return Err(Error::Invalid("trace starts with a header", String::new()));
    };
    if *task_id != task.task_id {
        return Err(Error::Invalid(
            "trace matches task",
            format!("{task_id} vs {}", task.task_id),
        ));
    }
    let sim = Simulator::new(scene, prefs).with_horizon(horizon);
    let (mut state, _) = sim.reset(task, *seed)?;
    let start = state.clone();
    let mut generated = 0;
    let mut executed = 0;
    let mut plan_iterations = 0;
    let mut reward_sum = 0;
    let mut placements = BTreeSet::new();
    for rec in records {
        match rec {
            TraceRecord::Plan { skipped, .. } => {
                plan_iterations += 1;
                generated += skipped;
            }
            TraceRecord::HighLevel {
                executed: ok,
                reason,
                ..
            } => {
                if *reason != Some(FailureReason::HorizonReached) {
                    generated += 1;
                    executed += *ok as usize;
                }
            }
            TraceRecord::Step {
                t,
                action,
                event,
                reward,
                ..
            } => {
                if *t != state.t {
                    return Err(Error::Invalid("trace step order", format!("t={t}")));
                }
                // Grabs pick the object the controller targeted, which the
                // recorded event names.
                if let Some(Event::Grabbed { object, .. }) = event {
                    state.grab_target = Some(object.clone());
                }
                let r = sim.step(&mut state, *action)?;
                if r.event != *event || r.reward != *reward {
                    return Err(Error::Invalid(
                        "trace replays identically",
                        format!("t={t}"),
                    ));
                }
                reward_sum += r.reward;
                if let Some(Event::Placed { object, receptacle }) = &r.event {
                    placements.insert((object.clone(), receptacle.clone()));
                }
            }
            TraceRecord::Header { .. } | TraceRecord::Metrics { .. } => {}
        }
    }
    let (correct_start, misplaced_start) = count_correct(&start, scene, prefs);
    let (correct_end, _) = count_correct(&state, scene, prefs);
    Ok(EpisodeMetrics {
        success_rate: success_rate(&start, &state, scene, prefs)?,
        executability: if generated == 0 {
            0.0
        } else {
            executed as f64 / generated as f64
        },
        unique_placements: placements.len(),
        reward_sum,
        plan_iterations,
        correct_start,
        misplaced_start,
        correct_end,
        generated,
        executed,
    })
}

/// Metrics the live run stored at the end of a trace.
pub fn recorded_metrics(records: &[TraceRecord]) -> Option<&EpisodeMetrics> {
    records.iter().rev().find_map(|r| match r {
        TraceRecord::Metrics { metrics } => Some(metrics),
        _ => None,
    })
}

//! `hearth`: run the rearrangement lab from the command line.
//!
//! Every path is relative to `--out`. Stages communicate only through files
//! in that directory and each one records its seed, configuration and file
//! hashes in `manifest.json`.

mod layout;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hearth::builtin;
use hearth::eval::{
    evaluate, object_vocab, recorded_metrics, replay_trace, run_cross_domain, run_protocol,
    ProtocolConfig, TaskSplits,
};
use hearth::pipeline::{
    collect_demos, episode_seed, export_finetune_jsonl, fit_il, import_finetune_jsonl, run_episode,
    run_self_training, DatasetKind, EpisodeConfig, Manifest, SelfTrainConfig,
};
use hearth::planners::{EndpointConfig, FitConfig, PlannerKind, PolicyParams, Vocab};
use hearth::seed;
use hearth::trace::{read_jsonl, write_jsonl, TraceRecord};
use hearth::world::DEFAULT_HORIZON;
use hearth::{PreferenceDataset, Scene};

use layout::Layout;

#[derive(Parser)]
#[command(name = "hearth", version, about = "Household rearrangement lab")]
struct Cli {
    /// Output directory; every other path is relative to it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Concurrent episode rollouts (0 = one per core). Results do not
    /// depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Serialize)]
struct EpisodeArgs {
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: u32,
    #[arg(long, default_value_t = 200)]
    max_plan_iterations: usize,
    /// Responses sampled per prompt during grow.
    #[arg(long, default_value_t = 1)]
    samples_per_prompt: usize,
}

impl EpisodeArgs {
    fn config(&self) -> EpisodeConfig {
        EpisodeConfig {
            horizon: self.horizon,
            max_plan_iterations: self.max_plan_iterations,
            samples_per_prompt: self.samples_per_prompt,
            record_trace: false,
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
struct FitArgs {
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
}

impl FitArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            lr: self.lr,
            epochs: self.epochs,
            l2: self.l2,
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
struct Common {
    /// Master seed; stage seeds are derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    episode: EpisodeArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Write the built-in scene files.
    GenScenes,
    /// Synthesize a preference file over the built-in scenes.
    GenPrefs {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        min_pairs: usize,
        #[arg(long, default_value_t = 3)]
        max_pairs: usize,
    },
    /// Sample disjoint demo/train/test task sets for a scene.
    GenTasks {
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        demo: usize,
        #[arg(long, default_value_t = 20)]
        train: usize,
        #[arg(long, default_value_t = 5)]
        test: usize,
    },
    /// Collect demonstrator episodes on the demo tasks.
    Demo {
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the policy on the demonstrations.
    TrainIl {
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Iterated grow / annotate / filter / refit, starting from the IL params.
    SelfTrain {
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 2)]
        iterations: usize,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        /// Also fit on the demonstrations each iteration.
        #[arg(long)]
        mix_demos: bool,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate variants (base, il, st1, ..., demo, endpoint) on a split.
    Eval {
        #[arg(long)]
        scene: String,
        /// Variants to evaluate; defaults to base, il and every st<k>
        /// params file present.
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long = "split", default_values_t = ["train".to_string(), "test".to_string()])]
        splits: Vec<String>,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        /// Base URL of a text-completion endpoint for the `endpoint` variant.
        #[arg(long)]
        endpoint_url: Option<String>,
        #[arg(long, default_value_t = 30_000)]
        endpoint_timeout_ms: u64,
        /// Write one JSONL trace per episode under traces/.
        #[arg(long)]
        traces: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train on one scene and test every variant on another.
    CrossEval {
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
    /// Full protocol on one scene: demos, IL, self-training and evaluation.
    Run {
        #[arg(long)]
        scene: String,
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
    /// Recompute an episode's metrics from its trace.
    Replay {
        /// Trace file, relative to --out.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: u32,
    },
}

#[derive(Args, Clone, Debug, Serialize)]
struct ProtocolArgs {
    #[arg(long, default_value_t = 10)]
    demo_tasks: usize,
    #[arg(long, default_value_t = 20)]
    train_tasks: usize,
    #[arg(long, default_value_t = 5)]
    test_tasks: usize,
    #[arg(long, default_value_t = 5)]
    episodes: usize,
    #[arg(long, default_value_t = 2)]
    iterations: usize,
    #[arg(long)]
    mix_demos: bool,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    common: Common,
}

impl ProtocolArgs {
    fn config(&self) -> ProtocolConfig {
        ProtocolConfig {
            demo_tasks: self.demo_tasks,
            train_tasks: self.train_tasks,
            test_tasks: self.test_tasks,
            demo_episodes: 1,
            episodes_per_task: self.episodes,
            st_iterations: self.iterations,
            fit_il: self.fit.config(),
            fit_st: self.fit.config(),
            mix_demos: self.mix_demos,
            episode: self.common.episode.config(),
            eval_splits: vec!["train".into(), "test".into()],
        }
    }
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<hearth::Error>() {
            Some(e) if e.is_validation() => 1,
            _ => 2,
        };
        Failure { code, error }
    }
}

fn validation(msg: String) -> Failure {
    Failure {
        code: 1,
        error: anyhow::anyhow!(msg),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&Layout::new(&cli.out), cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(l: &Layout, command: Command) -> CliResult {
    match command {
        Command::GenScenes => gen_scenes(l),
        Command::GenPrefs {
            seed,
            min_pairs,
            max_pairs,
        } => gen_prefs(l, seed, min_pairs, max_pairs),
        Command::GenTasks {
            scene,
            seed,
            demo,
            train,
            test,
        } => gen_tasks(l, &scene, seed, (demo, train, test)),
        Command::Demo {
            scene,
            episodes,
            common,
        } => demo(l, &scene, episodes, &common),
        Command::TrainIl { scene, seed, fit } => train_il(l, &scene, seed, &fit),
        Command::SelfTrain {
            scene,
            iterations,
            episodes,
            mix_demos,
            fit,
            common,
        } => self_train(l, &scene, iterations, episodes, mix_demos, &fit, &common),
        Command::Eval {
            scene,
            variants,
            splits,
            episodes,
            endpoint_url,
            endpoint_timeout_ms,
            traces,
            common,
        } => {
            let endpoint = endpoint_url.map(|url| EndpointConfig {
                timeout_ms: endpoint_timeout_ms,
                ..EndpointConfig::new(url)
            });
            eval(
                l, &scene, variants, &splits, episodes, endpoint, traces, &common,
            )
        }
        Command::CrossEval {
            source,
            target,
            protocol,
        } => cross_eval(l, &source, &target, &protocol),
        Command::Run { scene, protocol } => run_full(l, &scene, &protocol),
        Command::Replay {
            trace,
            scene,
            horizon,
        } => replay(l, &trace, &scene, horizon),
    }
}

// ---------------------------------------------------------------------------
// Helpers

fn load_scene(l: &Layout, name: &str) -> CliResult<Scene> {
    let path = l.require(&l.scene(name), "gen-scenes")?;
    let scene = Scene::load(&path)?;
    if scene.scene_id != name {
        return Err(validation(format!(
            "{} declares scene_id {:?}, expected {name:?}",
            path.display(),
            scene.scene_id
        )));
    }
    Ok(scene)
}

/// Loads the preferences and checks them against every scene file in the
/// output directory, since pairs need only occur in one of them.
fn load_prefs(l: &Layout, scenes: &[&Scene]) -> CliResult<PreferenceDataset> {
    let path = l.require(&l.prefs(), "gen-prefs")?;
    let prefs = PreferenceDataset::load(&path)?;
    let mut others = Vec::new();
    let dir = l.scene("x");
    let dir = dir.parent().expect("scene files live in a directory");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    for f in files {
        let s = Scene::load(&f)?;
        if scenes.iter().all(|k| k.scene_id != s.scene_id) {
            others.push(s);
        }
    }
    let all: Vec<&Scene> = scenes.iter().copied().chain(&others).collect();
    prefs.validate(&all)?;
    Ok(prefs)
}

fn load_tasks(l: &Layout, scene: &Scene, prefs: &PreferenceDataset) -> CliResult<TaskSplits> {
    let path = l.require(
        &l.tasks(&scene.scene_id),
        &format!("gen-tasks --scene {}", scene.scene_id),
    )?;
    let splits = TaskSplits::load(&path)?;
    for t in splits.demo.iter().chain(&splits.train).chain(&splits.test) {
        t.validate(scene, prefs)?;
    }
    Ok(splits)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| path.display().to_string())?;
    Ok(())
}

fn record<C: Serialize>(
    l: &Layout,
    stage: String,
    seed: u64,
    config: &C,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> CliResult {
    let mut m = Manifest::load_or_default(l.root())?;
    let rel = |ps: &[PathBuf]| -> Vec<String> { ps.iter().map(|p| l.rel(p)).collect() };
    let (i, o) = (rel(inputs), rel(outputs));
    let i: Vec<&str> = i.iter().map(String::as_str).collect();
    let o: Vec<&str> = o.iter().map(String::as_str).collect();
    m.record(
        l.root(),
        &stage,
        seed,
        serde_json::to_value(config)?,
        &i,
        &o,
    )?;
    m.save(l.root())?;
    Ok(())
}

fn baseline_seed(master: u64) -> u64 {
    seed::derive(master, "baseline")
}

// ---------------------------------------------------------------------------
// Commands

fn gen_scenes(l: &Layout) -> CliResult {
    let mut outputs = Vec::new();
    for scene in builtin::all_scenes() {
        let path = l.scene(&scene.scene_id);
        write_json(&path, &scene.to_file())?;
        println!("wrote {}", l.rel(&path));
        outputs.push(path);
    }
    record(l, "gen-scenes".into(), 0, &(), &[], &outputs)
}

fn gen_prefs(l: &Layout, seed: u64, min_pairs: usize, max_pairs: usize) -> CliResult {
    if min_pairs == 0 || min_pairs > max_pairs {
        return Err(validation(format!(
            "need 1 <= --min-pairs <= --max-pairs, got {min_pairs} and {max_pairs}"
        )));
    }
    let scenes = builtin::all_scenes();
    let prefs = builtin::synthesize_preferences(
        &scenes,
        &builtin::OBJECT_TYPES,
        min_pairs,
        max_pairs,
        seed,
    );
    let path = l.prefs();
    write_json(&path, &prefs)?;
    println!("wrote {}", l.rel(&path));
    #[derive(Serialize)]
    struct Cfg {
        min_pairs: usize,
        max_pairs: usize,
    }
    record(
        l,
        "gen-prefs".into(),
        seed,
        &Cfg {
            min_pairs,
            max_pairs,
        },
        &[],
        &[path],
    )
}

fn gen_tasks(l: &Layout, name: &str, seed: u64, sizes: (usize, usize, usize)) -> CliResult {
    let scene = load_scene(l, name)?;
    let prefs = load_prefs(l, &[&scene])?;
    let splits = TaskSplits::generate(&scene, &prefs, sizes, seed::derive(seed, "tasks"))?;
    let path = l.tasks(name);
    write_json(&path, &splits)?;
    println!(
        "wrote {} ({} demo, {} train, {} test tasks)",
        l.rel(&path),
        splits.demo.len(),
        splits.train.len(),
        splits.test.len()
    );
    record(
        l,
        format!("gen-tasks/{name}"),
        seed,
        &serde_json::json!({ "demo": sizes.0, "train": sizes.1, "test": sizes.2 }),
        &[l.scene(name), l.prefs()],
        &[path],
    )
}

fn demo(l: &Layout, name: &str, episodes: usize, common: &Common) -> CliResult {
    let scene = load_scene(l, name)?;
    let prefs = load_prefs(l, &[&scene])?;
    let splits = load_tasks(l, &scene, &prefs)?;
    let (ds, out) = collect_demos(
        &scene,
        &prefs,
        &splits.demo,
        episodes,
        seed::derive(common.seed, "demo"),
        &common.episode.config(),
    )?;
    let data = l.dataset(name, "demo");
    export_finetune_jsonl(&ds, &data, false)?;
    let metrics: Vec<_> = out.iter().map(|o| &o.metrics).collect();
    let report = l.report(name, "demo_metrics.json");
    write_json(&report, &metrics)?;
    let solved = metrics.iter().filter(|m| m.success_rate == 1.0).count();
    println!(
        "wrote {} ({} records; {solved}/{} episodes fully solved)",
        l.rel(&data),
        ds.records.len(),
        metrics.len()
    );
    record(
        l,
        format!("demo/{name}"),
        common.seed,
        &serde_json::json!({ "episodes": episodes, "run": common }),
        &[l.scene(name), l.prefs(), l.tasks(name)],
        &[data, report],
    )
}

fn train_il(l: &Layout, name: &str, seed: u64, fit: &FitArgs) -> CliResult {
    let scene = load_scene(l, name)?;
    let prefs = load_prefs(l, &[&scene])?;
    let data = l.require(&l.dataset(name, "demo"), &format!("demo --scene {name}"))?;
    let ds = import_finetune_jsonl(&data, DatasetKind::Demo)?;
    let init = PolicyParams::baseline(
        baseline_seed(seed),
        &Vocab::from_scene(&scene, object_vocab(&prefs)),
    );
    let out = fit_il(&ds, &init, &fit.config())?;
    let params = l.params(name, "il");
    std::fs::create_dir_all(params.parent().expect("params has a parent"))?;
    out.params.save(&params)?;
    let losses = l.params(name, "il_loss");
    write_json(&losses, &out.losses)?;
    println!(
        "wrote {} (loss {:.4} -> {:.4})",
        l.rel(&params),
        out.losses.first().copied().unwrap_or(f64::NAN),
        out.losses.last().copied().unwrap_or(f64::NAN)
    );
    record(
        l,
        format!("train-il/{name}"),
        seed,
        fit,
        &[data, l.prefs()],
        &[params, losses],
    )
}

fn self_train(
    l: &Layout,
    name: &str,
    iterations: usize,
    episodes: usize,
    mix_demos: bool,
    fit: &FitArgs,
    common: &Common,
) -> CliResult {
    let scene = load_scene(l, name)?;
    let prefs = load_prefs(l, &[&scene])?;
    let splits = load_tasks(l, &scene, &prefs)?;
    let il_path = l.require(&l.params(name, "il"), &format!("train-il --scene {name}"))?;
    let il = PolicyParams::load(&il_path)?;
    if iterations == 0 {
        println!(
            "no iterations requested; the IL params stand: {}",
            l.rel(&il_path)
        );
        return Ok(());
    }
    let demos = if mix_demos {
        let p = l.require(&l.dataset(name, "demo"), &format!("demo --scene {name}"))?;
        Some(import_finetune_jsonl(&p, DatasetKind::Demo)?)
    } else {
        None
    };
    let cfg = SelfTrainConfig {
        episodes_per_task: episodes,
        fit: fit.config(),
        mix_demos,
        episode: common.episode.config(),
    };
    let its = run_self_training(
        &scene,
        &prefs,
        &il,
        &splits.train,
        iterations,
        &cfg,
        seed::derive(common.seed, "self_train"),
        demos.as_ref(),
    )?;
    let mut outputs = Vec::new();
    for (k, it) in its.iter().enumerate() {
        let k = k + 1;
        let grow = l.dataset(name, &format!("grow-{k}"));
        let st = l.dataset(name, &format!("self_train-{k}"));
        let params = l.params(name, &format!("st{k}"));
        export_finetune_jsonl(&it.grow, &grow, true)?;
        export_finetune_jsonl(&it.self_train, &st, true)?;
        std::fs::create_dir_all(params.parent().expect("params has a parent"))?;
        it.params.save(&params)?;
        println!(
            "iteration {k}: {} grow records, {} positive -> {}",
            it.grow.records.len(),
            it.self_train.records.len(),
            l.rel(&params)
        );
        outputs.extend([grow, st, params]);
    }
    record(
        l,
        format!("self-train/{name}"),
        common.seed,
        &serde_json::json!({ "iterations": iterations, "self_train": &cfg }),
        &[il_path, l.tasks(name), l.prefs()],
        &outputs,
    )
}

#[allow(clippy::too_many_arguments)]
fn eval(
    l: &Layout,
    name: &str,
    mut variants: Vec<String>,
    splits: &[String],
    episodes: usize,
    endpoint: Option<EndpointConfig>,
    traces: bool,
    common: &Common,
) -> CliResult {
    let scene = load_scene(l, name)?;
    let prefs = load_prefs(l, &[&scene])?;
    let tasks = load_tasks(l, &scene, &prefs)?;
    if variants.is_empty() {
        variants = vec!["base".into(), "il".into()];
        variants.extend(
            (1..)
                .map(|k| format!("st{k}"))
                .take_while(|v| l.params(name, v).exists()),
        );
    }
    let mut inputs = vec![l.tasks(name), l.prefs()];
    let mut planners = Vec::new();
    for v in &variants {
        let planner = match v.as_str() {
            "base" => PlannerKind::Baseline {
                seed: baseline_seed(common.seed),
            },
            "demo" => PlannerKind::Demonstrator,
            "endpoint" => PlannerKind::Endpoint {
                config: endpoint.clone().ok_or_else(|| {
                    validation("variant `endpoint` needs --endpoint-url".to_string())
                })?,
            },
            v if v == "il" || (v.starts_with("st") && v[2..].parse::<usize>().is_ok()) => {
                let producer = if v == "il" {
                    format!("train-il --scene {name}")
                } else {
                    format!("self-train --scene {name} --iterations {}", &v[2..])
                };
                let path = l.require(&l.params(name, v), &producer)?;
                inputs.push(path.clone());
                PlannerKind::Policy {
                    params: PolicyParams::load(&path)?,
                }
            }
            other => {
                return Err(validation(format!(
                    "unknown variant {other:?} (expected base, il, st<k>, demo or endpoint)"
                )))
            }
        };
        planners.push((v.clone(), planner));
    }
    let sets: Vec<(&str, &[hearth::TaskSpec])> = splits
        .iter()
        .map(|s| {
            tasks.split(s).map(|t| (s.as_str(), t)).ok_or_else(|| {
                validation(format!(
                    "unknown split {s:?} (expected demo, train or test)"
                ))
            })
        })
        .collect::<CliResult<_>>()?;
    let eval_seed = seed::derive(common.seed, "eval");
    let cfg = common.episode.config();
    let (report, rows) = evaluate(
        &scene, &prefs, None, &planners, &sets, episodes, eval_seed, &cfg,
    )?;
    let csv = l.report(name, "eval.csv");
    let json = l.report(name, "eval.json");
    let per_episode = l.report(name, "eval_episodes.json");
    report.write(&csv, &json)?;
    write_json(&per_episode, &rows)?;
    print!("{}", report.to_csv());
    let mut outputs = vec![csv, json, per_episode];
    if traces {
        let traced = EpisodeConfig {
            record_trace: true,
            ..cfg.clone()
        };
        for (variant, planner) in &planners {
            for (split, set) in &sets {
                for task in *set {
                    for e in 0..episodes {
                        let s = episode_seed(eval_seed, "eval", &task.task_id, e);
                        let out = run_episode(&scene, &prefs, task, planner, e, s, &traced)?;
                        let path = l.trace(name, variant, split, &task.task_id, e);
                        write_jsonl(&path, out.trace.as_deref().unwrap_or_default())?;
                        outputs.push(path);
                    }
                }
            }
        }
        println!("wrote {} traces", outputs.len() - 3);
    }
    record(
        l,
        format!("eval/{name}"),
        common.seed,
        &serde_json::json!({ "variants": &variants, "splits": splits, "episodes": episodes, "run": common }),
        &inputs,
        &outputs,
    )
}

fn write_run(l: &Layout, dir: &str, run: &hearth::eval::ProtocolRun) -> CliResult<Vec<PathBuf>> {
    let csv = l.report(dir, "report.csv");
    let json = l.report(dir, "report.json");
    run.report.write(&csv, &json)?;
    let mut outputs = vec![csv, json];
    for (variant, params) in run.trained.params() {
        let path = l.params(dir, &variant);
        std::fs::create_dir_all(path.parent().expect("params has a parent"))?;
        params.save(&path)?;
        outputs.push(path);
    }
    print!("{}", run.report.to_csv());
    Ok(outputs)
}

fn cross_eval(l: &Layout, source: &str, target: &str, args: &ProtocolArgs) -> CliResult {
    if source == target {
        return Err(validation(format!(
            "--source and --target must differ (both {source})"
        )));
    }
    let src = load_scene(l, source)?;
    let tgt = load_scene(l, target)?;
    let prefs = load_prefs(l, &[&src, &tgt])?;
    let run = run_cross_domain(&src, &tgt, &prefs, &args.config(), args.common.seed)?;
    let outputs = write_run(l, &format!("cross-{source}-{target}"), &run)?;
    record(
        l,
        format!("cross-eval/{source}-{target}"),
        args.common.seed,
        &args.config(),
        &[l.scene(source), l.scene(target), l.prefs()],
        &outputs,
    )
}

fn run_full(l: &Layout, name: &str, args: &ProtocolArgs) -> CliResult {
    let scene = load_scene(l, name)?;
    let prefs = load_prefs(l, &[&scene])?;
    let run = run_protocol(&scene, &prefs, &args.config(), args.common.seed)?;
    let outputs = write_run(l, &format!("run-{name}"), &run)?;
    record(
        l,
        format!("run/{name}"),
        args.common.seed,
        &args.config(),
        &[l.scene(name), l.prefs()],
        &outputs,
    )
}

fn replay(l: &Layout, trace: &Path, name: &str, horizon: u32) -> CliResult {
    let scene = load_scene(l, name)?;
    let prefs = load_prefs(l, &[&scene])?;
    let tasks = load_tasks(l, &scene, &prefs)?;
    let path = l.require(
        &l.root().join(trace),
        &format!("eval --scene {name} --traces"),
    )?;
    let records: Vec<TraceRecord> = read_jsonl(&path)?;
    let Some(TraceRecord::Header { task_id, .. }) = records.first() else {
        return Err(validation(format!(
            "{} does not start with a header record",
            path.display()
        )));
    };
    let task = tasks.find(task_id).ok_or_else(|| {
        validation(format!(
            "task {task_id} is not in {}",
            l.rel(&l.tasks(name))
        ))
    })?;
    let metrics = replay_trace(&records, &scene, &prefs, task, horizon)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    match recorded_metrics(&records) {
        Some(m) if *m == metrics => Ok(()),
        Some(_) => Err(Failure {
            code: 2,
            error: anyhow::anyhow!("replayed metrics differ from the recorded ones"),
        }),
        None => Ok(()),
    }
}

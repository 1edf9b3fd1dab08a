//! The trainable plan policy.
//!
//! A log-linear model over the candidate decisions of a context:
//!
//! ```text
//! score(explore)      = explore_bias + 2 * unvisited_fraction
//! score(move o to r)  = pair[type(o), type(r)] + room[type(o), room_type(r)]
//! p(d | ctx)          = softmax(score / temperature)
//! ```
//!
//! Fitting minimizes the summed negative log likelihood of recorded
//! decisions plus an L2 penalty by gradient descent with step halving.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{candidates, decision_plan, PlanDecision, PlannerContext};
use crate::context::SceneGraph;
use crate::error::{Error, Result};
use crate::plan::Plan;
use crate::seed;
use crate::world::{object_type, Scene};

pub const PARAMS_VERSION: u32 = 1;
/// Fixed weight on the unvisited-room fraction in the explore score.
pub const EXPLORE_UNVISITED_WEIGHT: f64 = 2.0;
/// Baseline weights are uniform in `[-BASELINE_RANGE, BASELINE_RANGE]`.
pub const BASELINE_RANGE: f64 = 0.1;

type Table = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub version: u32,
    /// object type -> receptacle type -> weight
    pub pair_weights: Table,
    /// object type -> room type -> weight
    pub room_weights: Table,
    pub explore_bias: f64,
    pub temperature: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            version: PARAMS_VERSION,
            pair_weights: Table::new(),
            room_weights: Table::new(),
            explore_bias: 0.0,
            temperature: 1.0,
        }
    }
}

fn lookup(t: &Table, a: &str, b: &str) -> f64 {
    t.get(a).and_then(|m| m.get(b)).copied().unwrap_or(0.0)
}

/// Type vocabulary a set of params covers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub object_types: BTreeSet<String>,
    pub rec_types: BTreeSet<String>,
    pub room_types: BTreeSet<String>,
}

impl Vocab {
    pub fn from_scene<'a>(scene: &Scene, object_types: impl IntoIterator<Item = &'a str>) -> Vocab {
        Vocab {
            object_types: object_types.into_iter().map(str::to_string).collect(),
            rec_types: scene
                .receptacles()
                .map(|(_, r)| r.rec_type.clone())
                .collect(),
            room_types: scene.rooms.iter().map(|r| r.room_type.clone()).collect(),
        }
    }

    fn from_graph(graph: &SceneGraph) -> Vocab {
        Vocab {
            object_types: graph.object_types().into_iter().collect(),
            rec_types: graph
                .receptacle_refs()
                .map(|at| graph.receptacle(at).rec_type.clone())
                .collect(),
            room_types: graph.rooms.iter().map(|r| r.room_type.clone()).collect(),
        }
    }
}

/// Seeded baseline weight for one key, uniform in the baseline range.
/// Depends only on the seed and the key, so every vocabulary agrees.
pub fn baseline_weight(seed: u64, family: &str, a: &str, b: &str) -> f64 {
    let bits = crate::seed::derive(seed, &format!("{family}\n{a}\n{b}")) >> 11;
    let unit = bits as f64 / (1u64 << 53) as f64;
    (2.0 * unit - 1.0) * BASELINE_RANGE
}

impl PolicyParams {
    pub fn baseline(seed: u64, vocab: &Vocab) -> PolicyParams {
        let table = |family: &str, rhs: &BTreeSet<String>| -> Table {
            vocab
                .object_types
                .iter()
                .map(|o| {
                    let row = rhs
                        .iter()
                        .map(|b| (b.clone(), baseline_weight(seed, family, o, b)))
                        .collect();
                    (o.clone(), row)
                })
                .collect()
        };
        PolicyParams {
            pair_weights: table("pair", &vocab.rec_types),
            room_weights: table("room", &vocab.room_types),
            explore_bias: baseline_weight(seed, "explore", "", ""),
            ..PolicyParams::default()
        }
    }

    /// Baseline params covering every key the graph can score.
    pub fn baseline_for(seed: u64, graph: &SceneGraph) -> PolicyParams {
        PolicyParams::baseline(seed, &Vocab::from_graph(graph))
    }

    pub fn pair(&self, obj_type: &str, rec_type: &str) -> f64 {
        lookup(&self.pair_weights, obj_type, rec_type)
    }

    pub fn room(&self, obj_type: &str, room_type: &str) -> f64 {
        lookup(&self.room_weights, obj_type, room_type)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != PARAMS_VERSION {
            return Err(Error::Invalid(
                "params version",
                format!("expected {PARAMS_VERSION}, found {}", self.version),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Invalid(
                "temperature > 0",
                self.temperature.to_string(),
            ));
        }
        let all = self
            .pair_weights
            .values()
            .chain(self.room_weights.values())
            .flat_map(|m| m.values())
            .chain([&self.explore_bias]);
        for &w in all {
            if !w.is_finite() {
                return Err(Error::Invalid("finite weights", w.to_string()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("params serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<PolicyParams> {
        let p: PolicyParams = serde_json::from_str(text).map_err(|e| Error::json("params", &e))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<PolicyParams> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PolicyParams::from_json(&text).map_err(|e| match e {
            Error::Parse {
                line,
                column,
                message,
                ..
            } => Error::Parse {
                context: path.display().to_string(),
                line,
                column,
                message,
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// Features

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Slot {
    Bias,
    Pair(String, String),
    Room(String, String),
}

/// Parameter slots and constant offset of one candidate's score.
fn features(graph: &SceneGraph, decision: &PlanDecision) -> (Vec<Slot>, f64) {
    match decision {
        PlanDecision::Explore { .. } => (
            vec![Slot::Bias],
            EXPLORE_UNVISITED_WEIGHT * graph.unvisited_fraction(),
        ),
        PlanDecision::Rearrange { object, receptacle } => {
            let ot = object_type(object).to_string();
            let Some(at) = graph.find_receptacle(receptacle) else {
                return (Vec::new(), 0.0);
            };
            let rec_type = graph.receptacle(at).rec_type.clone();
            let room_type = graph.rooms[at.0].room_type.clone();
            (
                vec![Slot::Pair(ot.clone(), rec_type), Slot::Room(ot, room_type)],
                0.0,
            )
        }
    }
}

fn slot_value(params: &PolicyParams, slot: &Slot) -> f64 {
    match slot {
        Slot::Bias => params.explore_bias,
        Slot::Pair(a, b) => params.pair(a, b),
        Slot::Room(a, b) => params.room(a, b),
    }
}

/// Unscaled score of a decision.
pub fn score(graph: &SceneGraph, params: &PolicyParams, decision: &PlanDecision) -> f64 {
    let (slots, konst) = features(graph, decision);
    konst + slots.iter().map(|s| slot_value(params, s)).sum::<f64>()
}

fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Candidates with their sampling probabilities, in candidate order.
pub fn decision_probabilities(
    ctx: &PlannerContext,
    params: &PolicyParams,
) -> Vec<(PlanDecision, f64)> {
    let cands = candidates(&ctx.graph);
    let scores: Vec<f64> = cands.iter().map(|d| score(&ctx.graph, params, d)).collect();
    cands
        .into_iter()
        .zip(softmax(&scores, params.temperature))
        .collect()
}

pub(super) fn sample(ctx: &PlannerContext, params: &PolicyParams, seed: u64) -> PlanDecision {
    let probs = decision_probabilities(ctx, params);
    let u: f64 = seed::rng(seed).gen();
    let mut acc = 0.0;
    for (d, p) in &probs {
        acc += p;
        if u < acc {
            return d.clone();
        }
    }
    probs
        .last()
        .expect("explore is always a candidate")
        .0
        .clone()
}

/// Highest-scoring candidate; ties go to the earliest candidate.
pub(super) fn argmax(ctx: &PlannerContext, params: &PolicyParams) -> PlanDecision {
    let mut best: Option<(PlanDecision, f64)> = None;
    for d in candidates(&ctx.graph) {
        let s = score(&ctx.graph, params, &d);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((d, s));
        }
    }
    best.expect("explore is always a candidate").0
}

pub fn policy_plan(ctx: &PlannerContext, params: &PolicyParams, seed: u64) -> Plan {
    decision_plan(&ctx.graph, &sample(ctx, params, seed))
}

/// The zero-temperature limit of [`policy_plan`].
pub fn greedy_plan(ctx: &PlannerContext, params: &PolicyParams) -> Plan {
    decision_plan(&ctx.graph, &argmax(ctx, params))
}

/// [`policy_plan`] under seeded baseline weights.
pub fn baseline_plan(ctx: &PlannerContext, weights_seed: u64, seed: u64) -> Plan {
    policy_plan(
        ctx,
        &PolicyParams::baseline_for(weights_seed, &ctx.graph),
        seed,
    )
}

// ---------------------------------------------------------------------------
// Likelihood and fitting

/// One candidate: the slots its score sums, plus a constant term.
type Term = (Vec<usize>, f64);

/// A dataset compiled to dense parameter indices.
struct Compiled {
    slots: Vec<Slot>,
    /// Per record: candidates as (slot indices, constant), and the chosen index.
    rows: Vec<(Vec<Term>, usize)>,
    temperature: f64,
}

fn compile(
    data: &[(PlannerContext, PlanDecision)],
    params: &PolicyParams,
) -> Result<(Compiled, Vec<f64>)> {
    let mut index: HashMap<Slot, usize> = HashMap::new();
    let mut slots = Vec::new();
    let mut intern = |s: Slot, slots: &mut Vec<Slot>| -> usize {
        *index.entry(s.clone()).or_insert_with(|| {
            slots.push(s);
            slots.len() - 1
        })
    };
    intern(Slot::Bias, &mut slots);
    for (a, row) in &params.pair_weights {
        for b in row.keys() {
            intern(Slot::Pair(a.clone(), b.clone()), &mut slots);
        }
    }
    for (a, row) in &params.room_weights {
        for b in row.keys() {
            intern(Slot::Room(a.clone(), b.clone()), &mut slots);
        }
    }
    let mut rows = Vec::with_capacity(data.len());
    for (ctx, decision) in data {
        let cands = candidates(&ctx.graph);
        let chosen = cands
            .iter()
            .position(|c| match (c, decision) {
                (PlanDecision::Explore { .. }, PlanDecision::Explore { .. }) => true,
                _ => c == decision,
            })
            .ok_or_else(|| {
                Error::InfeasibleDecision(format!("{decision:?} at iteration {}", ctx.iteration))
            })?;
        let feats = cands
            .iter()
            .map(|c| {
                let (s, k) = features(&ctx.graph, c);
                (s.into_iter().map(|s| intern(s, &mut slots)).collect(), k)
            })
            .collect();
        rows.push((feats, chosen));
    }
    let theta = slots.iter().map(|s| slot_value(params, s)).collect();
    Ok((
        Compiled {
            slots,
            rows,
            temperature: params.temperature,
        },
        theta,
    ))
}

impl Compiled {
    /// Summed NLL, optionally accumulating its gradient into `grad`.
    fn nll(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let t = self.temperature;
        let mut total = 0.0;
        let mut scores = Vec::new();
        for (cands, chosen) in &self.rows {
            scores.clear();
            scores.extend(
                cands
                    .iter()
                    .map(|(s, k)| (k + s.iter().map(|&i| theta[i]).sum::<f64>()) / t),
            );
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - scores[*chosen];
            if let Some(g) = grad.as_deref_mut() {
                for (j, (slots, _)) in cands.iter().enumerate() {
                    let p = (scores[j] - lse).exp();
                    let coef = (p - if j == *chosen { 1.0 } else { 0.0 }) / t;
                    for &i in slots {
                        g[i] += coef;
                    }
                }
            }
        }
        total
    }

    fn objective(&self, theta: &[f64], l2: f64, grad: Option<&mut [f64]>) -> f64 {
        let penalty = l2 * theta.iter().map(|x| x * x).sum::<f64>();
        match grad {
            Some(g) => {
                g.iter_mut().for_each(|x| *x = 0.0);
                let f = self.nll(theta, Some(g));
                for (gi, &x) in g.iter_mut().zip(theta) {
                    *gi += 2.0 * l2 * x;
                }
                f + penalty
            }
            None => self.nll(theta, None) + penalty,
        }
    }

    fn write(&self, theta: &[f64], base: &PolicyParams) -> PolicyParams {
        let mut p = base.clone();
        for (slot, &x) in self.slots.iter().zip(theta) {
            match slot {
                Slot::Bias => p.explore_bias = x,
                Slot::Pair(a, b) => {
                    p.pair_weights
                        .entry(a.clone())
                        .or_default()
                        .insert(b.clone(), x);
                }
                Slot::Room(a, b) => {
                    p.room_weights
                        .entry(a.clone())
                        .or_default()
                        .insert(b.clone(), x);
                }
            }
        }
        p
    }
}

/// `-sum log p(decision | context)` under `params`.
pub fn policy_nll(data: &[(PlannerContext, PlanDecision)], params: &PolicyParams) -> Result<f64> {
    let (c, theta) = compile(data, params)?;
    Ok(c.nll(&theta, None))
}

/// Gradient of [`policy_nll`] with respect to every weight that either
/// exists in `params` or is touched by the data. Temperature is fixed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradient {
    pub pair_weights: Table,
    pub room_weights: Table,
    pub explore_bias: f64,
}

pub fn policy_nll_grad(
    data: &[(PlannerContext, PlanDecision)],
    params: &PolicyParams,
) -> Result<(f64, Gradient)> {
    let (c, theta) = compile(data, params)?;
    let mut g = vec![0.0; theta.len()];
    let f = c.nll(&theta, Some(&mut g));
    let mut out = Gradient::default();
    for (slot, &x) in c.slots.iter().zip(&g) {
        match slot {
            Slot::Bias => out.explore_bias = x,
            Slot::Pair(a, b) => {
                out.pair_weights
                    .entry(a.clone())
                    .or_default()
                    .insert(b.clone(), x);
            }
            Slot::Room(a, b) => {
                out.room_weights
                    .entry(a.clone())
                    .or_default()
                    .insert(b.clone(), x);
            }
        }
    }
    Ok((f, out))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lr: 0.1,
            epochs: 50,
            l2: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub params: PolicyParams,
    /// Objective before each epoch, then after the last one.
    pub losses: Vec<f64>,
}

/// Gradient descent on `policy_nll + l2 * |theta|^2`. Each epoch takes one
/// full-batch step of size `lr`, halving it until the objective does not
/// increase.
pub fn policy_fit(
    data: &[(PlannerContext, PlanDecision)],
    init: &PolicyParams,
    cfg: &FitConfig,
) -> Result<FitOutcome> {
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let (c, mut theta) = compile(data, init)?;
    let mut grad = vec![0.0; theta.len()];
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    let mut last = f64::NAN;
    let mut f = c.objective(&theta, cfg.l2, Some(&mut grad));
    for epoch in 0..cfg.epochs {
        if !f.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, last });
        }
        losses.push(f);
        last = f;
        let mut step = cfg.lr;
        let mut trial = vec![0.0; theta.len()];
        for _ in 0..40 {
            for ((t, &x), &g) in trial.iter_mut().zip(&theta).zip(&grad) {
                *t = x - step * g;
            }
            let ft = c.objective(&trial, cfg.l2, None);
            if ft.is_finite() && ft <= f {
                theta.copy_from_slice(&trial);
                break;
            }
            step *= 0.5;
        }
        f = c.objective(&theta, cfg.l2, Some(&mut grad));
    }
    if cfg.epochs == 0 {
        return Ok(FitOutcome {
            params: init.clone(),
            losses: vec![f],
        });
    }
    if !f.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            last,
        });
    }
    losses.push(f);
    Ok(FitOutcome {
        params: c.write(&theta, init),
        losses,
    })
}

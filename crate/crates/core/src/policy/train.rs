use std::collections::HashSet;
use std::io::Write;

use log::{debug, info};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rollout, run_policy, step_reward, Environment, NetConfig, PolicyWeights, RewardBaselines, RewardMode, Rollout, Selection};
use crate::error::{Error, Result};
use crate::geometry::{AngleGrid, EquirectMask, MaskProjector};
use crate::objective::{Objective, ObjectiveConfig};

/// Momentum buffer `v`, updated as `v ← μ v + g`, `w ← w + lr v`.
#[derive(Clone, Debug)]
pub struct Momentum {
    velocity: PolicyWeights,
}

impl Momentum {
    pub fn new(config: NetConfig) -> Result<Self> {
        Ok(Self { velocity: PolicyWeights::zeros(config)? })
    }

    pub fn velocity(&self) -> &PolicyWeights {
        &self.velocity
    }
}

/// One gradient-ascent step on `Σ_i Σ_t R_t log π(p_t)` over `batch`.
/// Gradients are reduced in batch order.
pub fn reinforce_update(batch: &[Rollout], w: &mut PolicyWeights, state: &mut Momentum, lr: f64, momentum: f64) -> Result<()> {
    let mut grad = PolicyWeights::zeros(*w.config())?;
    for r in batch {
        r.accumulate_gradient(w, &mut grad);
    }
    if let Some(t) = grad.tensors().iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of {}", t.name)));
    }
    state.velocity.scale(momentum);
    state.velocity.add_scaled(&grad, 1.0);
    w.add_scaled(&state.velocity, lr);
    Ok(())
}

/// Objective at every grid slot.
pub fn score_table(mask: &EquirectMask, projector: &MaskProjector, objective: &Objective) -> Result<Vec<f64>> {
    let env = Environment::new(mask, projector, objective)?;
    Ok((0..projector.grid().len()).map(|k| env.score(k)).collect())
}

/// Raw rewards of one random-policy rollout on a score table: start at slot
/// 0, then visit `budget` distinct other slots.
pub fn random_rollout_rewards(table: &[f64], budget: usize, mode: RewardMode, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = table.len();
    if budget == 0 || budget >= n {
        return Err(Error::BudgetOutOfRange { budget, min: 1, max: n.saturating_sub(1) });
    }
    let mut best = table[0];
    Ok(index::sample(rng, n - 1, budget)
        .iter()
        .map(|i| {
            let f = table[i + 1];
            let r = step_reward(best, f, mode);
            best = best.min(f);
            r
        })
        .collect())
}

/// `b_t`: mean step-`t` raw reward of the random policy over all tables and
/// `rollouts` rollouts each.
pub fn estimate_baselines(tables: &[Vec<f64>], budget: usize, rollouts: usize, seed: u64, mode: RewardMode) -> Result<RewardBaselines> {
    if tables.is_empty() || rollouts == 0 {
        return Err(Error::invalid("baselines need at least one image and one rollout"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = vec![0.0; budget];
    for table in tables {
        for _ in 0..rollouts {
            for (s, r) in sums.iter_mut().zip(random_rollout_rewards(table, budget, mode, &mut rng)?) {
                *s += r;
            }
        }
    }
    let count = (tables.len() * rollouts) as f64;
    Ok(RewardBaselines { values: sums.into_iter().map(|s| s / count).collect() })
}

#[derive(Clone, Debug)]
pub struct TrainingScene {
    pub seed: u64,
    pub mask: EquirectMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub budget: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub reward_mode: RewardMode,
    pub baseline_rollouts: usize,
    pub grid_size: usize,
    pub net: NetConfig,
    pub objective: ObjectiveConfig,
    pub validation_selection: Selection,
    /// Return the weights with the lowest final-budget validation objective
    /// instead of the last ones.
    #[serde(default)]
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            budget: 4,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
            reward_mode: RewardMode::LiteralMin,
            baseline_rollouts: 20,
            grid_size: 20,
            net: NetConfig::default(),
            objective: ObjectiveConfig::default(),
            validation_selection: Selection::Sample,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.objective.validate()?;
        if self.batch_size == 0 || self.budget == 0 || self.baseline_rollouts == 0 {
            return Err(Error::invalid("batch size, budget and baseline rollouts must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0 && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::invalid("need lr >= 0 and momentum in [0, 1)"));
        }
        if self.budget >= self.grid_size {
            return Err(Error::BudgetOutOfRange { budget: self.budget, min: 1, max: self.grid_size - 1 });
        }
        if self.net.actions != self.grid_size + 1 {
            return Err(Error::invalid(format!("{} actions do not fit a grid of {}", self.net.actions, self.grid_size)));
        }
        Ok(())
    }
}

/// One line of the training log. Epoch 0 is the untrained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    /// Mean variance-reduced reward per step in the configured mode.
    pub mean_train_reward: f64,
    pub mean_raw_reward_literal_min: f64,
    pub mean_raw_reward_clipped_gain: f64,
    /// Mean best validation objective after `t` evaluations, `t = 1..=T`.
    pub mean_val_objective: Vec<f64>,
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    parts.iter().fold(seed, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

fn validation_curve(
    w: &PolicyWeights,
    scenes: &[TrainingScene],
    projector: &MaskProjector,
    objective: &Objective,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let runs: Vec<Vec<f64>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let env = Environment::new(&s.mask, projector, objective)?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, &[u64::MAX, i as u64]));
            let (_, traj) = run_policy(w, &env, cfg.budget, cfg.validation_selection, &mut rng)?;
            Ok((1..=cfg.budget).map(|t| traj.best_within(t).unwrap_or(f64::NAN)).collect())
        })
        .collect::<Result<_>>()?;
    let n = runs.len().max(1) as f64;
    Ok((0..cfg.budget).map(|t| runs.iter().map(|r| r[t]).sum::<f64>() / n).collect())
}

/// Trains from `init` (or a fresh initialization) with REINFORCE.
///
/// When `log` is given, each [`TrainLogEntry`] is written to it as one JSON line.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[TrainingScene],
    val_set: &[TrainingScene],
    init: Option<PolicyWeights>,
    mut log: Option<&mut dyn Write>,
) -> Result<(PolicyWeights, Vec<TrainLogEntry>)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let train_seeds: HashSet<u64> = train_set.iter().map(|s| s.seed).collect();
    if let Some(s) = val_set.iter().find(|s| train_seeds.contains(&s.seed)) {
        return Err(Error::invalid(format!("scene seed {} is in both training and validation sets", s.seed)));
    }
    let (width, height) = (train_set[0].mask.width(), train_set[0].mask.height());
    let grid = AngleGrid::new(cfg.grid_size)?;
    let projector = MaskProjector::new(width, height, cfg.net.face_size, grid)?;
    let objective = Objective::new(cfg.net.face_size, cfg.objective.clone())?;

    let tables = train_set.iter().map(|s| score_table(&s.mask, &projector, &objective)).collect::<Result<Vec<_>>>()?;
    let baselines = estimate_baselines(&tables, cfg.budget, cfg.baseline_rollouts, mix(cfg.seed, &[1]), cfg.reward_mode)?;
    info!("reward baselines: {:?}", baselines.values);

    let mut w = match init {
        Some(w) if w.config() != &cfg.net => {
            return Err(Error::invalid("initial weights do not match the network config"));
        }
        Some(w) => w,
        None => PolicyWeights::init(cfg.net, mix(cfg.seed, &[2]))?,
    };
    let mut state = Momentum::new(cfg.net)?;
    let mut entries = Vec::with_capacity(cfg.epochs + 1);
    let mut emit = |entry: TrainLogEntry, log: &mut Option<&mut dyn Write>| -> Result<()> {
        info!("epoch {}: train reward {:.5}, val {:?}", entry.epoch, entry.mean_train_reward, entry.mean_val_objective);
        if let Some(out) = log.as_mut() {
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            writeln!(out, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        entries.push(entry);
        Ok(())
    };

    let val = validation_curve(&w, val_set, &projector, &objective, cfg)?;
    let mut best = (val.last().copied().unwrap_or(f64::INFINITY), w.clone());
    emit(
        TrainLogEntry {
            epoch: 0,
            mean_train_reward: 0.0,
            mean_raw_reward_literal_min: 0.0,
            mean_raw_reward_clipped_gain: 0.0,
            mean_val_objective: val,
        },
        &mut log,
    )?;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, &[3, epoch as u64])));
        let (mut reward_sum, mut literal_sum, mut clipped_sum, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Rollout> = chunk
                .par_iter()
                .enumerate()
                .map(|(i, &k)| {
                    let env = Environment::new(&train_set[k].mask, &projector, &objective)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, &[4, epoch as u64, b as u64, i as u64]));
                    rollout(&w, &env, cfg.budget, &baselines, cfg.reward_mode, &mut rng)
                })
                .collect::<Result<_>>()?;
            for r in &batch {
                for s in &r.trajectory.steps {
                    reward_sum += s.reward.unwrap_or(0.0);
                    if let Some(f) = s.next_score {
                        literal_sum += step_reward(s.best, f, RewardMode::LiteralMin);
                        clipped_sum += step_reward(s.best, f, RewardMode::ClippedGain);
                    }
                    steps += 1;
                }
            }
            let last_good = w.clone();
            let outcome = reinforce_update(&batch, &mut w, &mut state, cfg.lr, cfg.momentum);
            let reason = match outcome {
                Err(Error::NonFinite(what)) => Some(format!("non-finite {what}")),
                Err(e) => return Err(e),
                Ok(()) if !w.is_finite() => Some("non-finite weights after update".to_string()),
                Ok(()) => None,
            };
            if let Some(reason) = reason {
                return Err(Error::Diverged { epoch, reason, last_good: Box::new(last_good) });
            }
            debug!("epoch {epoch} batch {b} done");
        }
        let val = validation_curve(&w, val_set, &projector, &objective, cfg)?;
        if cfg.keep_best && val.last().is_some_and(|&v| v < best.0) {
            best = (val[val.len() - 1], w.clone());
        }
        let steps = steps.max(1) as f64;
        emit(
            TrainLogEntry {
                epoch,
                mean_train_reward: reward_sum / steps,
                mean_raw_reward_literal_min: literal_sum / steps,
                mean_raw_reward_clipped_gain: clipped_sum / steps,
                mean_val_objective: val,
            },
            &mut log,
        )?;
    }
    if cfg.keep_best && !val_set.is_empty() {
        w = best.1;
    }
    Ok((w, entries))
}

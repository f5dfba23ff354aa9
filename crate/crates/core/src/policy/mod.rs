//! Learned snap-angle prediction.
//!
//! An episode starts at the canonical angle. At each step the lateral
//! foreground faces at the current angle go through the network, which emits a
//! distribution over relative grid offsets; the sampled offset moves the angle
//! for the next step. The answer is the best angle seen in the episode.

mod network;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use network::{faces_to_input, softmax, NetConfig, PolicyWeights, StepCache, Tensor, MAGIC};
pub use train::{
    estimate_baselines, random_rollout_rewards, reinforce_update, score_table, train, Momentum, TrainConfig,
    TrainLogEntry, TrainingScene,
};

use crate::error::{Error, Result};
use crate::geometry::{AngleGrid, EquirectMask, FaceMask, MaskProjector, SnapAngle};
use crate::objective::{ForegroundCubemap, Objective};
use crate::search::{Evaluation, SearchResult};

/// Relative grid offsets `-n/2 ..= n/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    n_grid: usize,
}

impl Default for ActionSpace {
    fn default() -> Self {
        Self { n_grid: 20 }
    }
}

impl ActionSpace {
    pub fn new(n_grid: usize) -> Result<Self> {
        if n_grid < 2 || !n_grid.is_multiple_of(2) {
            return Err(Error::invalid(format!("action space needs an even grid size, got {n_grid}")));
        }
        Ok(Self { n_grid })
    }

    pub fn for_grid(grid: AngleGrid) -> Result<Self> {
        Self::new(grid.len())
    }

    pub fn len(&self) -> usize {
        self.n_grid + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn offset(&self, action: usize) -> i64 {
        action as i64 - (self.n_grid / 2) as i64
    }

    pub fn action(&self, offset: i64) -> Option<usize> {
        let a = offset + (self.n_grid / 2) as i64;
        (0..self.len() as i64).contains(&a).then_some(a as usize)
    }

    pub fn offsets(&self) -> Vec<i64> {
        (0..self.len()).map(|a| self.offset(a)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// `min(O_t − F_new, 0)`
    #[default]
    LiteralMin,
    /// `max(O_t − F_new, 0)`
    ClippedGain,
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal-min" => Ok(Self::LiteralMin),
            "clipped-gain" => Ok(Self::ClippedGain),
            other => Err(Error::invalid(format!("unknown reward mode `{other}`"))),
        }
    }
}

pub fn step_reward(best_so_far: f64, new_score: f64, mode: RewardMode) -> f64 {
    match mode {
        RewardMode::LiteralMin => (best_so_far - new_score).min(0.0),
        RewardMode::ClippedGain => (best_so_far - new_score).max(0.0),
    }
}

/// Inverse-CDF draw from `pdf`.
pub fn sample_action(pdf: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in pdf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total; take the last action with mass
    pdf.iter().rposition(|&p| p > 0.0).unwrap_or(pdf.len() - 1)
}

/// How actions are chosen at run time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    #[default]
    Sample,
    Greedy,
}

fn argmax(pdf: &[f64]) -> usize {
    pdf.iter().enumerate().fold(0, |best, (i, &p)| if p > pdf[best] { i } else { best })
}

/// Per-step variance-reduction terms `b_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBaselines {
    pub values: Vec<f64>,
}

impl RewardBaselines {
    pub fn zeros(budget: usize) -> Self {
        Self { values: vec![0.0; budget] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub theta: SnapAngle,
    /// Offset that moved the previous angle here (0 at the first step).
    pub shift: i64,
    /// Offset chosen at this step.
    pub action: i64,
    pub pdf: Vec<f64>,
    pub score: f64,
    pub best: f64,
    /// Score at the angle the chosen move leads to, when it was evaluated.
    pub next_score: Option<f64>,
    /// Raw reward; absent when the chosen move was never evaluated.
    pub raw_reward: Option<f64>,
    pub reward: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn best_score(&self) -> Option<f64> {
        self.steps.iter().map(|s| s.score).min_by(f64::total_cmp)
    }

    /// Best score among the first `t` steps.
    pub fn best_within(&self, t: usize) -> Option<f64> {
        self.steps.iter().take(t).map(|s| s.score).min_by(f64::total_cmp)
    }
}

/// One network step on lateral foreground faces: `(pdf, new hidden)`.
pub fn forward(fg: &ForegroundCubemap, hidden: &[f64], w: &PolicyWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    if fg.face_size() != w.config().face_size {
        return Err(Error::ShapeMismatch {
            expected: format!("face size {}", w.config().face_size),
            actual: format!("face size {}", fg.face_size()),
        });
    }
    let cache = w.forward(&faces_to_input(fg.faces()), hidden)?;
    let h = cache.hidden().to_vec();
    Ok((cache.pdf, h))
}

/// Rotator plus objective for one mask over a grid.
pub struct Environment<'a> {
    mask: &'a EquirectMask,
    projector: &'a MaskProjector,
    objective: &'a Objective,
}

impl<'a> Environment<'a> {
    pub fn new(mask: &'a EquirectMask, projector: &'a MaskProjector, objective: &'a Objective) -> Result<Self> {
        projector.lateral(mask, 0)?;
        Ok(Self { mask, projector, objective })
    }

    pub fn grid(&self) -> AngleGrid {
        self.projector.grid()
    }

    pub fn observe(&self, index: usize) -> (Vec<f64>, f64) {
        let faces = self.faces(index);
        (faces_to_input(&faces), self.objective.score_faces(&faces))
    }

    pub fn faces(&self, index: usize) -> [FaceMask; 4] {
        self.projector.lateral(self.mask, index).expect("dims checked at construction")
    }

    pub fn score(&self, index: usize) -> f64 {
        self.objective.score_faces(&self.faces(index))
    }
}

/// An episode together with the activations needed to differentiate it.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub trajectory: Trajectory,
    caches: Vec<StepCache>,
    actions: Vec<usize>,
}

impl Rollout {
    /// Replays fixed inputs and actions through the network, attaching `rewards`.
    pub fn replay(w: &PolicyWeights, inputs: &[Vec<f64>], actions: &[usize], rewards: &[f64]) -> Result<Self> {
        if inputs.len() != actions.len() || inputs.len() != rewards.len() {
            return Err(Error::invalid("inputs, actions and rewards must have equal length"));
        }
        let mut h = w.initial_hidden();
        let mut caches = Vec::with_capacity(inputs.len());
        let mut steps = Vec::with_capacity(inputs.len());
        for ((x, &a), &r) in inputs.iter().zip(actions).zip(rewards) {
            if a >= w.config().actions {
                return Err(Error::invalid(format!("action {a} out of range")));
            }
            let c = w.forward(x, &h)?;
            h = c.hidden().to_vec();
            steps.push(Step {
                theta: SnapAngle::canonical(),
                shift: 0,
                action: a as i64,
                pdf: c.pdf.clone(),
                score: 0.0,
                best: 0.0,
                next_score: None,
                raw_reward: Some(r),
                reward: Some(r),
            });
            caches.push(c);
        }
        Ok(Self { trajectory: Trajectory { steps }, caches, actions: actions.to_vec() })
    }

    /// Gradient of `Σ_t R_t log π(a_t)` by backprop through time.
    pub fn gradient(&self, w: &PolicyWeights) -> Result<PolicyWeights> {
        let mut grad = PolicyWeights::zeros(*w.config())?;
        self.accumulate_gradient(w, &mut grad);
        Ok(grad)
    }

    pub(crate) fn accumulate_gradient(&self, w: &PolicyWeights, grad: &mut PolicyWeights) {
        let mut dh = w.initial_hidden();
        for t in (0..self.caches.len()).rev() {
            let r = self.trajectory.steps[t].reward.unwrap_or(0.0);
            let cache = &self.caches[t];
            let dlogits: Vec<f64> = cache
                .pdf
                .iter()
                .enumerate()
                .map(|(i, &p)| r * (f64::from(i == self.actions[t]) - p))
                .collect();
            dh = w.backward_step(cache, &dlogits, &dh, grad);
        }
    }
}

/// `Σ_t R_t log π(a_t)` evaluated from scratch.
pub fn surrogate(w: &PolicyWeights, inputs: &[Vec<f64>], actions: &[usize], rewards: &[f64]) -> Result<f64> {
    let mut h = w.initial_hidden();
    let mut total = 0.0;
    for ((x, &a), &r) in inputs.iter().zip(actions).zip(rewards) {
        let c = w.forward(x, &h)?;
        total += r * c.pdf[a].ln();
        h = c.hidden().to_vec();
    }
    Ok(total)
}

/// Runs a training episode: every chosen move is evaluated so each step
/// carries a reward, `R_t = R̂_t − b_t`.
pub fn rollout(
    w: &PolicyWeights,
    env: &Environment,
    budget: usize,
    baselines: &RewardBaselines,
    mode: RewardMode,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    episode(w, env, budget, Some((baselines, mode)), Selection::Sample, rng)
}

/// Runs the policy for `budget` evaluations and reports the best angle seen.
pub fn run_policy(
    w: &PolicyWeights,
    env: &Environment,
    budget: usize,
    selection: Selection,
    rng: &mut impl Rng,
) -> Result<(SearchResult, Trajectory)> {
    let r = episode(w, env, budget, None, selection, rng)?;
    let evaluated = r.trajectory.steps.iter().map(|s| Evaluation { angle: s.theta, score: s.score }).collect();
    Ok((SearchResult::from_evaluations(evaluated, budget)?, r.trajectory))
}

fn episode(
    w: &PolicyWeights,
    env: &Environment,
    budget: usize,
    rewards: Option<(&RewardBaselines, RewardMode)>,
    selection: Selection,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    let grid = env.grid();
    let space = ActionSpace::for_grid(grid)?;
    if w.config().actions != space.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} actions", space.len()),
            actual: format!("{}", w.config().actions),
        });
    }
    if w.config().face_size != env.projector.face_size() {
        return Err(Error::ShapeMismatch {
            expected: format!("face size {}", w.config().face_size),
            actual: format!("face size {}", env.projector.face_size()),
        });
    }
    if budget == 0 {
        return Err(Error::BudgetOutOfRange { budget, min: 1, max: usize::MAX });
    }
    if let Some((b, _)) = rewards {
        if b.values.len() < budget {
            return Err(Error::invalid(format!("{} baselines for budget {budget}", b.values.len())));
        }
    }
    let mut index = 0;
    let mut shift = 0;
    let (mut input, mut score) = env.observe(index);
    let mut best = f64::INFINITY;
    let mut h = w.initial_hidden();
    let mut steps = Vec::with_capacity(budget);
    let mut caches = Vec::with_capacity(budget);
    let mut actions = Vec::with_capacity(budget);
    for t in 0..budget {
        best = best.min(score);
        let cache = w.forward(&input, &h)?;
        if cache.pdf.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("action pdf at step {}", t + 1)));
        }
        let a = match selection {
            Selection::Sample => sample_action(&cache.pdf, rng),
            Selection::Greedy => argmax(&cache.pdf),
        };
        let offset = space.offset(a);
        let next = grid.offset(index, offset);
        let last = t + 1 == budget;
        let (next_obs, raw) = if last && rewards.is_none() {
            (None, None)
        } else {
            let (x, f) = env.observe(next);
            (Some((x, f)), rewards.map(|(_, mode)| step_reward(best, f, mode)))
        };
        let reward = raw.zip(rewards).map(|(r, (b, _))| r - b.values[t]);
        steps.push(Step {
            theta: grid.angle(index),
            shift,
            action: offset,
            pdf: cache.pdf.clone(),
            score,
            best,
            next_score: next_obs.as_ref().map(|(_, f)| *f),
            raw_reward: raw,
            reward,
        });
        h = cache.hidden().to_vec();
        caches.push(cache);
        actions.push(a);
        if let Some((x, f)) = next_obs {
            input = x;
            score = f;
        }
        index = next;
        shift = offset;
    }
    Ok(Rollout { trajectory: Trajectory { steps }, caches, actions })
}

//! Budgeted snap-angle search over an [`AngleGrid`].
//!
//! Every policy drives a [`Scorer`], which caches scores per grid slot and
//! counts distinct evaluations; the count is the budget a policy has spent.
//! All policies report the best of what they evaluated.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AngleGrid, EquirectImage, EquirectMask, MaskProjector, SnapAngle};
use crate::objective::{fg_for_angle, Objective};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub angle: SnapAngle,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_angle: SnapAngle,
    pub best_score: f64,
    pub evaluated: Vec<Evaluation>,
    pub budget_used: usize,
}

impl SearchResult {
    /// Best of `evaluated`; ties go to the smaller grid index, then to the
    /// earlier evaluation.
    pub fn from_evaluations(evaluated: Vec<Evaluation>, budget_used: usize) -> Result<Self> {
        let best = evaluated
            .iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| {
                a.score
                    .total_cmp(&b.score)
                    .then(a.angle.grid_index.cmp(&b.angle.grid_index))
                    .then(i.cmp(j))
            })
            .map(|(_, e)| *e)
            .ok_or_else(|| Error::invalid("search evaluated no angles"))?;
        Ok(Self { best_angle: best.angle, best_score: best.score, evaluated, budget_used })
    }
}

/// Maps grid slots to objective values for one panorama, with caching and an
/// evaluation counter.
pub struct Scorer<'a> {
    grid: AngleGrid,
    eval: Box<dyn FnMut(SnapAngle) -> f64 + 'a>,
    cache: Vec<Option<f64>>,
    evaluated: Vec<Evaluation>,
}

impl<'a> Scorer<'a> {
    pub fn new(grid: AngleGrid, eval: impl FnMut(SnapAngle) -> f64 + 'a) -> Self {
        Self { grid, eval: Box::new(eval), cache: vec![None; grid.len()], evaluated: Vec::new() }
    }

    /// Scorer over a precomputed score per grid slot.
    pub fn from_table(grid: AngleGrid, table: &'a [f64]) -> Result<Self> {
        if table.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} scores", grid.len()),
                actual: format!("{} scores", table.len()),
            });
        }
        Ok(Self::new(grid, move |a: SnapAngle| table[a.grid_index.expect("grid angle")]))
    }

    /// Scores a mask by re-projecting it at each requested angle.
    pub fn for_mask(mask: &'a EquirectMask, objective: &'a Objective, face_size: usize, grid: AngleGrid) -> Result<Self> {
        // fail early on sizes the closure would otherwise hit later
        fg_for_angle(mask, 0.0, face_size)?;
        let probe = crate::objective::ForegroundCubemap::new(std::array::from_fn(|_| {
            crate::geometry::FaceMask::zeros(face_size)
        }))?;
        objective.score(&probe)?;
        Ok(Self::new(grid, move |a: SnapAngle| {
            let fg = fg_for_angle(mask, a.theta, face_size).expect("validated face size");
            objective.score(&fg).expect("validated face size")
        }))
    }

    /// Same scores as [`Scorer::for_mask`], read through a lookup table.
    pub fn with_projector(mask: &'a EquirectMask, projector: &'a MaskProjector, objective: &'a Objective) -> Result<Self> {
        projector.lateral(mask, 0)?;
        Ok(Self::new(projector.grid(), move |a: SnapAngle| {
            let faces = projector.lateral(mask, a.grid_index.expect("grid angle")).expect("validated dims");
            objective.score_faces(&faces)
        }))
    }

    pub fn grid(&self) -> AngleGrid {
        self.grid
    }

    /// Score of grid slot `index`. Only the first request for a slot counts
    /// against the budget.
    pub fn score(&mut self, index: usize) -> f64 {
        if let Some(s) = self.cache[index] {
            return s;
        }
        let angle = self.grid.angle(index);
        let s = (self.eval)(angle);
        self.cache[index] = Some(s);
        self.evaluated.push(Evaluation { angle, score: s });
        s
    }

    pub fn is_cached(&self, index: usize) -> bool {
        self.cache[index].is_some()
    }

    pub fn budget_used(&self) -> usize {
        self.evaluated.len()
    }

    pub fn evaluated(&self) -> &[Evaluation] {
        &self.evaluated
    }

    pub fn result(&self) -> Result<SearchResult> {
        SearchResult::from_evaluations(self.evaluated.clone(), self.budget_used())
    }
}

fn check_budget(budget: usize, min: usize, max: usize) -> Result<()> {
    if budget < min || budget > max {
        return Err(Error::BudgetOutOfRange { budget, min, max });
    }
    Ok(())
}

/// Scores every grid candidate.
pub fn exhaustive(scorer: &mut Scorer) -> Result<SearchResult> {
    for k in 0..scorer.grid().len() {
        scorer.score(k);
    }
    scorer.result()
}

/// `budget` distinct candidates drawn uniformly without replacement: the
/// first `budget` entries of a seeded shuffle, so larger budgets extend
/// smaller ones.
pub fn random_policy(scorer: &mut Scorer, budget: usize, seed: u64) -> Result<SearchResult> {
    let n = scorer.grid().len();
    check_budget(budget, 1, n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &k in &order[..budget] {
        scorer.score(k);
    }
    scorer.result()
}

/// Grid indices `round(j·n/T)` for `j = 0..T`; index 0 is the canonical view.
pub fn uniform_indices(n: usize, budget: usize) -> Vec<usize> {
    (0..budget).map(|j| (2 * j * n + budget) / (2 * budget)).collect()
}

pub fn uniform_policy(scorer: &mut Scorer, budget: usize) -> Result<SearchResult> {
    let n = scorer.grid().len();
    check_budget(budget, 1, n)?;
    for k in uniform_indices(n, budget) {
        scorer.score(k);
    }
    scorer.result()
}

/// Halves the index range, scores the center of each half and recurses into
/// the half whose center scored lower, until the budget runs out or the range
/// cannot be split further.
pub fn coarse_to_fine(scorer: &mut Scorer, budget: usize) -> Result<SearchResult> {
    check_budget(budget, 2, usize::MAX)?;
    let (mut lo, mut hi) = (0, scorer.grid().len());
    'levels: while hi - lo >= 2 {
        let mid = lo + (hi - lo) / 2;
        let centers = [lo + (mid - lo) / 2, mid + (hi - mid) / 2];
        let mut scores = [0.0; 2];
        for (slot, &c) in centers.iter().enumerate() {
            if !scorer.is_cached(c) && scorer.budget_used() >= budget {
                break 'levels;
            }
            scores[slot] = scorer.score(c);
        }
        if scores[0] <= scores[1] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    scorer.result()
}

/// Separable Gaussian blur of a single-channel map; wraps in longitude and
/// replicates rows at the poles.
pub fn gaussian_blur(map: &EquirectImage, sigma: f64) -> Result<Vec<f64>> {
    if map.channels() != 1 {
        return Err(Error::InvalidImage("saliency map must be single-channel".into()));
    }
    let (w, h) = (map.width(), map.height());
    let src: Vec<f64> = map.data().iter().map(|&v| v as f64).collect();
    if sigma <= 0.0 {
        return Ok(src);
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = (x as i64 + k as i64 - radius).rem_euclid(w as i64) as usize;
                acc += kv * src[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = (y as i64 + k as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Ok(out)
}

/// Top-left corner `(col, row)` of the `window`×`window` square with the largest
/// sum, wrapping in longitude. Ties go to the first position in row-major order.
pub fn max_window(values: &[f64], width: usize, height: usize, window: usize) -> (usize, usize) {
    let rows = height - window + 1;
    let mut col_sums = vec![0.0; rows * width];
    for y in 0..rows {
        for x in 0..width {
            col_sums[y * width + x] = (y..y + window).map(|r| values[r * width + x]).sum();
        }
    }
    let mut best = (0, 0);
    let mut best_sum = f64::NEG_INFINITY;
    for y in 0..rows {
        for x in 0..width {
            let s: f64 = (0..window).map(|k| col_sums[y * width + (x + k) % width]).sum();
            if s > best_sum {
                best_sum = s;
                best = (x, y);
            }
        }
    }
    best
}

/// Snap angle that centers a lateral face on the most salient `window`×`window`
/// square of the blurred map, snapped to the grid.
pub fn saliency_policy(map: &EquirectImage, window: usize, sigma: f64, grid: AngleGrid) -> Result<SnapAngle> {
    if window == 0 {
        return Err(Error::invalid("saliency window must be positive"));
    }
    if window >= map.width().min(map.height()) {
        return Err(Error::invalid(format!(
            "saliency window {window} must be smaller than the map ({}x{})",
            map.width(),
            map.height()
        )));
    }
    let blurred = gaussian_blur(map, sigma)?;
    let (col, _) = max_window(&blurred, map.width(), map.height(), window);
    let center = col as f64 + window as f64 / 2.0;
    let lon = -std::f64::consts::PI + center * std::f64::consts::TAU / map.width() as f64;
    Ok(grid.snap(lon))
}

/// [`saliency_policy`] scored through `scorer`; spends a budget of one.
pub fn saliency_search(scorer: &mut Scorer, map: &EquirectImage, window: usize, sigma: f64) -> Result<SearchResult> {
    let angle = saliency_policy(map, window, sigma, scorer.grid())?;
    scorer.score(angle.grid_index.expect("snapped to grid"));
    scorer.result()
}

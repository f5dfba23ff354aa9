//! Datasets, budget curves, difficulty-sorted gains and object preservation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pixel_center, project_mask, AngleGrid, EquirectMask, Face, MaskProjector, SnapAngle};
use crate::io;
use crate::objective::{synth_scene, Objective, ObjectiveConfig, SceneParams, Shape, SphericalBox};
use crate::policy::{run_policy, Environment, PolicyWeights, Selection};
use crate::search::{self, Scorer, SearchResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One manifest record. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub panorama: PathBuf,
    pub mask: PathBuf,
    #[serde(default)]
    pub boxes: Vec<SphericalBox>,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub scene_seed: Option<u64>,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_split() -> Split {
    Split::Test
}

impl DatasetEntry {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.boxes.iter().find(|b| !b.is_valid()) {
            return Err(Error::invalid(format!("entry {}: box {b:?} is out of bounds", self.id)));
        }
        Ok(())
    }
}

/// A manifest read from disk, with paths resolved.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let entries: Vec<DatasetEntry> = io::read_json(manifest)?;
        for e in &entries {
            e.validate()?;
        }
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    pub fn path(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    pub fn load_mask(&self, entry: &DatasetEntry) -> Result<EquirectMask> {
        io::load_mask(self.path(&entry.mask))
    }

    /// Entries of one split, or every entry when that split is empty.
    pub fn split_or_all(&self, split: Split) -> Vec<&DatasetEntry> {
        let chosen: Vec<_> = self.entries.iter().filter(|e| e.split == split).collect();
        if chosen.is_empty() {
            self.entries.iter().collect()
        } else {
            chosen
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub height: usize,
    pub seed: u64,
    /// Fraction of entries assigned to the test split (taken from the end).
    pub test_fraction: f64,
    pub params: SceneParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { count: 100, height: 128, seed: 0, test_fraction: 0.2, params: SceneParams::default() }
    }
}

/// Scene seed for the `i`-th draw of a dataset.
pub fn scene_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i)
}

/// Renders `cfg.count` synthetic scenes into `out_dir` and writes `manifest.json`.
/// Scenes without foreground are skipped and replaced by further draws.
pub fn generate_dataset(out_dir: impl AsRef<Path>, cfg: &DatasetConfig) -> Result<Vec<DatasetEntry>> {
    let out_dir = out_dir.as_ref();
    if cfg.count == 0 {
        return Err(Error::invalid("dataset count must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.test_fraction) {
        return Err(Error::invalid("test fraction must lie in [0, 1]"));
    }
    cfg.params.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n_test = (cfg.count as f64 * cfg.test_fraction).round() as usize;
    let mut entries = Vec::with_capacity(cfg.count);
    let mut draw = 0u64;
    while entries.len() < cfg.count {
        if draw > 20 * cfg.count as u64 + 100 {
            return Err(Error::invalid("scene distribution keeps producing empty scenes"));
        }
        let seed = scene_seed(cfg.seed, draw);
        draw += 1;
        let spec = cfg.params.sample(seed);
        if spec.objects.is_empty() {
            continue;
        }
        let (pano, mask) = synth_scene(&spec, cfg.height)?;
        if mask.count() == 0 {
            continue;
        }
        let i = entries.len();
        let id = format!("scene_{i:05}");
        let panorama = PathBuf::from(format!("{id}_pano.png"));
        let mask_path = PathBuf::from(format!("{id}_mask.png"));
        io::save_equirect(&pano, out_dir.join(&panorama))?;
        io::save_mask(&mask, out_dir.join(&mask_path))?;
        let largest = spec
            .objects
            .iter()
            .max_by(|a, b| (a.half_extents[0] * a.half_extents[1]).total_cmp(&(b.half_extents[0] * b.half_extents[1])))
            .expect("non-empty");
        entries.push(DatasetEntry {
            id,
            panorama,
            mask: mask_path,
            boxes: spec.objects.iter().map(|o| o.bounding_box()).collect(),
            category: Some(match largest.shape {
                Shape::Cap => "cap".into(),
                Shape::Rect => "rect".into(),
            }),
            scene_seed: Some(seed),
            split: if i < cfg.count - n_test { Split::Train } else { Split::Test },
        });
    }
    io::write_json(out_dir.join("manifest.json"), &entries)?;
    info!("wrote {} scenes to {}", entries.len(), out_dir.display());
    Ok(entries)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Exhaustive,
    Random,
    Uniform,
    #[serde(rename = "coarse2fine")]
    CoarseToFine,
    Saliency,
    Learned,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Exhaustive,
        PolicyKind::Random,
        PolicyKind::Uniform,
        PolicyKind::CoarseToFine,
        PolicyKind::Saliency,
        PolicyKind::Learned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Exhaustive => "exhaustive",
            PolicyKind::Random => "random",
            PolicyKind::Uniform => "uniform",
            PolicyKind::CoarseToFine => "coarse2fine",
            PolicyKind::Saliency => "saliency",
            PolicyKind::Learned => "learned",
        }
    }

    /// Whether the policy can run under budget `t` on an `n`-slot grid.
    pub fn supports(self, t: usize, n: usize) -> bool {
        match self {
            PolicyKind::Exhaustive | PolicyKind::Saliency | PolicyKind::Learned => t >= 1,
            PolicyKind::Random | PolicyKind::Uniform => (1..=n).contains(&t),
            PolicyKind::CoarseToFine => t >= 2,
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown policy `{s}` (expected one of exhaustive, random, uniform, coarse2fine, saliency, learned)")))
    }
}

/// Settings for the blurred-mask saliency stand-in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyConfig {
    pub window: usize,
    pub sigma: f64,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self { window: 30, sigma: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub policies: Vec<PolicyKind>,
    pub budgets: Vec<usize>,
    pub seed: u64,
    pub face_size: usize,
    pub grid_size: usize,
    pub objective: ObjectiveConfig,
    pub saliency: SaliencyConfig,
    pub selection: Selection,
    /// Adds wall-clock figures to the report, which then differs run to run.
    pub record_timing: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            policies: vec![PolicyKind::Exhaustive, PolicyKind::Random, PolicyKind::Uniform, PolicyKind::CoarseToFine],
            budgets: vec![1, 2, 4, 8],
            seed: 0,
            face_size: 64,
            grid_size: 20,
            objective: ObjectiveConfig::default(),
            saliency: SaliencyConfig::default(),
            selection: Selection::Sample,
            record_timing: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub policy: PolicyKind,
    pub budget: usize,
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<f64>,
    pub angles: Vec<SnapAngle>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seconds_per_evaluation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub images: Vec<String>,
    /// Population variance of the objective over the grid, per image.
    pub difficulty: Vec<f64>,
    pub rows: Vec<CurveRow>,
}

impl BenchmarkReport {
    pub fn row(&self, policy: PolicyKind, budget: usize) -> Option<&CurveRow> {
        self.rows.iter().find(|r| r.policy == policy && r.budget == budget)
    }

    /// `policy,budget,image_id,score` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,budget,image_id,score\n");
        for r in &self.rows {
            for (id, s) in self.images.iter().zip(&r.scores) {
                out.push_str(&format!("{},{},{},{}\n", r.policy, r.budget, id, s));
            }
        }
        out
    }
}

/// An image prepared for benchmarking.
#[derive(Clone, Debug)]
pub struct BenchImage {
    pub id: String,
    pub mask: EquirectMask,
}

pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    (mean, population_variance(values).sqrt())
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Context<'a> {
    cfg: &'a BenchmarkConfig,
    projector: &'a MaskProjector,
    objective: &'a Objective,
    weights: Option<&'a PolicyWeights>,
}

fn run_one(ctx: &Context, policy: PolicyKind, budget: usize, index: usize, mask: &EquirectMask) -> Result<SearchResult> {
    let mut scorer = Scorer::with_projector(mask, ctx.projector, ctx.objective)?;
    let seed = mix(ctx.cfg.seed, index as u64, policy as u64);
    match policy {
        PolicyKind::Exhaustive => search::exhaustive(&mut scorer),
        PolicyKind::Random => search::random_policy(&mut scorer, budget, seed),
        PolicyKind::Uniform => search::uniform_policy(&mut scorer, budget),
        PolicyKind::CoarseToFine => search::coarse_to_fine(&mut scorer, budget),
        PolicyKind::Saliency => {
            let s = &ctx.cfg.saliency;
            search::saliency_search(&mut scorer, &mask.to_image(), s.window, s.sigma)
        }
        PolicyKind::Learned => {
            let w = ctx.weights.ok_or_else(|| Error::invalid("the learned policy needs weights"))?;
            let env = Environment::new(mask, ctx.projector, ctx.objective)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            Ok(run_policy(w, &env, budget, ctx.cfg.selection, &mut rng)?.0)
        }
    }
}

/// Mean disruption at the returned angle, per policy and budget. Pairs a
/// policy cannot run (coarse-to-fine at `T = 1`, random beyond `n`) are left out.
pub fn budget_curve(images: &[BenchImage], cfg: &BenchmarkConfig, weights: Option<&PolicyWeights>) -> Result<BenchmarkReport> {
    if images.is_empty() {
        return Err(Error::invalid("empty benchmark set"));
    }
    if cfg.budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("budgets must be sorted ascending"));
    }
    if cfg.policies.contains(&PolicyKind::Learned) {
        let w = weights.ok_or_else(|| Error::invalid("the learned policy needs weights"))?;
        if w.config().face_size != cfg.face_size {
            return Err(Error::invalid(format!(
                "weights expect face size {}, benchmark uses {}",
                w.config().face_size,
                cfg.face_size
            )));
        }
    }
    let grid = AngleGrid::new(cfg.grid_size)?;
    let (w0, h0) = (images[0].mask.width(), images[0].mask.height());
    if let Some(bad) = images.iter().find(|i| i.mask.width() != w0 || i.mask.height() != h0) {
        return Err(Error::ShapeMismatch { expected: format!("{w0}x{h0} masks"), actual: format!("{} differs", bad.id) });
    }
    let projector = MaskProjector::new(w0, h0, cfg.face_size, grid)?;
    let objective = Objective::new(cfg.face_size, cfg.objective.clone())?;
    let ctx = Context { cfg, projector: &projector, objective: &objective, weights };

    let difficulty = images
        .par_iter()
        .map(|img| {
            let mut s = Scorer::with_projector(&img.mask, &projector, &objective)?;
            let table: Vec<f64> = (0..grid.len()).map(|k| s.score(k)).collect();
            Ok(population_variance(&table))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &policy in &cfg.policies {
        for &budget in &cfg.budgets {
            if !policy.supports(budget, grid.len()) {
                continue;
            }
            let start = Instant::now();
            let results = images
                .par_iter()
                .enumerate()
                .map(|(i, img)| run_one(&ctx, policy, budget, i, &img.mask))
                .collect::<Result<Vec<_>>>()?;
            let elapsed = start.elapsed().as_secs_f64();
            let evaluations: usize = results.iter().map(|r| r.budget_used).sum();
            let scores: Vec<f64> = results.iter().map(|r| r.best_score).collect();
            let (mean, std) = mean_std(&scores);
            rows.push(CurveRow {
                policy,
                budget,
                mean,
                std,
                scores,
                angles: results.iter().map(|r| r.best_angle).collect(),
                seconds_per_evaluation: cfg.record_timing.then(|| elapsed / evaluations.max(1) as f64),
            });
        }
    }
    Ok(BenchmarkReport { images: images.iter().map(|i| i.id.clone()).collect(), difficulty, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub image: usize,
    pub difficulty: f64,
    /// Fraction of the set covered so far, `(k + 1) / N`.
    pub fraction: f64,
    /// Mean of `score_b − score_a` over the hardest `k + 1` images.
    pub cumulative_mean_gain: f64,
}

/// Images sorted by descending difficulty (stable), with the running mean
/// gain of `a` over `b`.
pub fn difficulty_gains(difficulty: &[f64], scores_a: &[f64], scores_b: &[f64]) -> Result<Vec<GainRow>> {
    if difficulty.len() != scores_a.len() || difficulty.len() != scores_b.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} scores per policy", difficulty.len()),
            actual: format!("{} and {}", scores_a.len(), scores_b.len()),
        });
    }
    let mut order: Vec<usize> = (0..difficulty.len()).collect();
    order.sort_by(|&i, &j| difficulty[j].total_cmp(&difficulty[i]));
    let n = order.len() as f64;
    let mut total = 0.0;
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            total += scores_b[i] - scores_a[i];
            GainRow {
                image: i,
                difficulty: difficulty[i],
                fraction: (k + 1) as f64 / n,
                cumulative_mean_gain: total / (k + 1) as f64,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPreservation {
    pub box_index: usize,
    pub face: Face,
    /// Object pixels landing on the dominant lateral face.
    pub face_count: usize,
    /// Object pixels over all six faces.
    pub total: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preservation {
    pub boxes: Vec<BoxPreservation>,
    pub mean: Option<f64>,
}

/// How much of each boxed object lands on a single lateral face at `theta`.
/// Boxes without foreground are skipped with a warning.
pub fn preservation_iou(mask: &EquirectMask, boxes: &[SphericalBox], theta: f64, face_size: usize) -> Result<Preservation> {
    let (w, h) = (mask.width(), mask.height());
    let mut out = Vec::new();
    for (bi, b) in boxes.iter().enumerate() {
        if !b.is_valid() {
            return Err(Error::invalid(format!("box {bi} is out of bounds")));
        }
        let object = EquirectMask::new(
            w,
            h,
            (0..h)
                .flat_map(|row| (0..w).map(move |col| (col, row)))
                .map(|(col, row)| u8::from(mask.get(col, row) == 1 && b.contains(pixel_center(w, h, col, row))))
                .collect(),
        )?;
        if object.count() == 0 {
            warn!("box {bi} holds no foreground; skipped");
            continue;
        }
        let cube = project_mask(&object, theta, face_size)?;
        let counts: Vec<usize> = cube.faces.iter().map(|f| f.count()).collect();
        let total: usize = counts.iter().sum();
        if total == 0 {
            warn!("box {bi} is too small to reach any face pixel; skipped");
            continue;
        }
        // first maximum in front, right, back, left order
        let face = Face::LATERAL.into_iter().fold(Face::Front, |best, f| if counts[f.index()] > counts[best.index()] { f } else { best });
        let face_count = counts[face.index()];
        out.push(BoxPreservation { box_index: bi, face, face_count, total, score: face_count as f64 / total as f64 });
    }
    let mean = (!out.is_empty()).then(|| out.iter().map(|b| b.score).sum::<f64>() / out.len() as f64);
    Ok(Preservation { boxes: out, mean })
}

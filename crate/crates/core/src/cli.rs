//! The `snapcube` command line.
//!
//! Machine-readable output goes to stdout as JSON; logs go to stderr and are
//! controlled by `SNAPCUBE_LOG` (`error`, `info` or `debug`).
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::{project_cubemap, AngleGrid, MaskProjector};
use crate::harness::{self, BenchImage, BenchmarkConfig, Dataset, DatasetConfig, PolicyKind, SaliencyConfig, Split};
use crate::io;
use crate::objective::{fg_for_angle, DenominatorMode, Objective, ObjectiveConfig, SceneParams};
use crate::policy::{self, Environment, NetConfig, PolicyWeights, RewardMode, Selection, TrainConfig, TrainingScene};
use crate::search::{self, Scorer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "snapcube", version, about = "Snap-angle prediction for 360° panoramas")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Number of azimuth candidates in [0, π/2).
    #[arg(long, global = true, default_value_t = 20)]
    pub n_grid: usize,
    /// Cube face edge length in pixels.
    #[arg(long, global = true, default_value_t = 64)]
    pub face_size: usize,
    /// Boundary band width as a fraction of the face.
    #[arg(long, global = true, default_value_t = 0.0625)]
    pub margin: f64,
    /// band-occupancy, whole-face or foreground-normalized.
    #[arg(long, global = true, default_value = "band-occupancy")]
    pub denominator: DenominatorMode,
    /// Seed for every random choice; drawn and reported when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a panorama to six cube faces and a cross composite.
    Project {
        #[arg(long)]
        input: PathBuf,
        /// Azimuth rotation, e.g. `0.3`, `0.3rad` or `45deg`.
        #[arg(long, default_value = "0", value_parser = parse_angle, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Disruption score of a foreground mask at one rotation.
    Score {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value = "0", value_parser = parse_angle, allow_hyphen_values = true)]
        theta: f64,
    },
    /// Search for the snap angle of one panorama.
    Snap {
        #[arg(long)]
        mask: PathBuf,
        /// Panorama, only needed with --cubemap-out.
        #[arg(long)]
        panorama: Option<PathBuf>,
        #[arg(long, default_value = "exhaustive")]
        policy: PolicyKind,
        #[arg(long, default_value_t = 4)]
        budget: usize,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Saliency map; the blurred mask stands in when absent.
        #[arg(long)]
        saliency: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        window: usize,
        #[arg(long, default_value_t = 5.0)]
        sigma: f64,
        #[arg(long)]
        greedy: bool,
        /// Write the cubemap at the chosen angle here.
        #[arg(long)]
        cubemap_out: Option<PathBuf>,
    },
    /// Train the recurrent policy on the train split of a manifest.
    Train(TrainArgs),
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 1)]
        min_objects: usize,
        #[arg(long, default_value_t = 3)]
        max_objects: usize,
        #[arg(long, default_value_t = 0.15)]
        min_extent: f64,
        #[arg(long, default_value_t = 0.45)]
        max_extent: f64,
    },
    /// Budget curves on the test split of a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "exhaustive,random,uniform,coarse2fine")]
        policies: Vec<PolicyKind>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        budgets: Vec<usize>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        greedy: bool,
        /// Also write the report here (JSON), plus a `.csv` next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Include wall-clock timing (output no longer reproducible).
        #[arg(long)]
        timing: bool,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub budget: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// literal-min or clipped-gain.
    #[arg(long, default_value = "literal-min")]
    pub reward: RewardMode,
    #[arg(long, default_value_t = 20)]
    pub baseline_rollouts: usize,
    /// Fraction of the train split held out for validation.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Continue from these weights.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Validate with the most probable action instead of sampling.
    #[arg(long)]
    pub greedy_validation: bool,
    /// Save the weights of the best validation epoch.
    #[arg(long)]
    pub keep_best: bool,
}

/// Parses `45deg`, `0.78rad` or a bare number of radians.
pub fn parse_angle(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let (num, scale) = if let Some(n) = s.strip_suffix("deg") {
        (n, std::f64::consts::PI / 180.0)
    } else if let Some(n) = s.strip_suffix("rad") {
        (n, 1.0)
    } else {
        (s, 1.0)
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("cannot parse angle `{s}`"))?;
    if !v.is_finite() {
        return Err(format!("angle `{s}` is not finite"));
    }
    Ok(v * scale)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Image { .. } | Error::Json { .. } | Error::Format { .. } => EXIT_IO,
        Error::NonFinite(_) | Error::Diverged { .. } => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

impl Common {
    fn objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig { margin_frac: self.margin, denominator_mode: self.denominator, ..ObjectiveConfig::default() }
    }

    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.n_grid == 0 {
            p.push("--n-grid must be positive".into());
        }
        if self.face_size < crate::geometry::MIN_FACE_SIZE {
            p.push(format!("--face-size must be at least {}", crate::geometry::MIN_FACE_SIZE));
        }
        if let Err(e) = self.objective_config().validate() {
            p.push(e.to_string());
        } else if self.face_size >= crate::geometry::MIN_FACE_SIZE && self.objective_config().margin_px(self.face_size) == 0 {
            p.push("--margin is below one pixel at this face size".into());
        }
        p
    }
}

fn check(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(problems.join("; ")))
    }
}

fn emit(out: &mut dyn Write, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. JSON goes to `out`; diagnostics go to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("SNAPCUBE_LOG", "error");
    let _ = env_logger::Builder::from_env(env).target(env_logger::Target::Stderr).try_init();
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let common = cli.common;
    check(common.problems())?;
    let grid = AngleGrid::new(common.n_grid)?;
    match cli.command {
        Command::Project { input, theta, out_dir } => {
            let img = io::load_equirect(&input)?;
            let cube = project_cubemap(&img, theta, common.face_size)?;
            fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let files = io::save_cubemap(&cube, &out_dir, "face")?;
            eprintln!("theta: {theta} rad");
            emit(out, &json!({ "theta": theta, "face_size": common.face_size, "files": files }))
        }
        Command::Score { mask, theta } => {
            let mask = io::load_mask(&mask)?;
            let objective = Objective::new(common.face_size, common.objective_config())?;
            let fg = fg_for_angle(&mask, theta, common.face_size)?;
            let faces = objective.face_scores(&fg)?;
            emit(out, &json!({ "theta": theta, "score": objective.score(&fg)?, "face_scores": faces }))
        }
        Command::Snap { mask, panorama, policy, budget, weights, saliency, window, sigma, greedy, cubemap_out } => {
            let mut problems = Vec::new();
            if policy == PolicyKind::Learned && weights.is_none() {
                problems.push("the learned policy needs --weights".to_string());
            }
            if cubemap_out.is_some() && panorama.is_none() {
                problems.push("--cubemap-out needs --panorama".to_string());
            }
            if !policy.supports(budget, grid.len()) {
                problems.push(format!("policy {policy} cannot run with budget {budget}"));
            }
            check(problems)?;
            let seed = resolve_seed(common.seed);
            let mask = io::load_mask(&mask)?;
            let objective = Objective::new(common.face_size, common.objective_config())?;
            let projector = MaskProjector::new(mask.width(), mask.height(), common.face_size, grid)?;
            let mut scorer = Scorer::with_projector(&mask, &projector, &objective)?;
            let result = match policy {
                PolicyKind::Exhaustive => search::exhaustive(&mut scorer)?,
                PolicyKind::Random => search::random_policy(&mut scorer, budget, seed)?,
                PolicyKind::Uniform => search::uniform_policy(&mut scorer, budget)?,
                PolicyKind::CoarseToFine => search::coarse_to_fine(&mut scorer, budget)?,
                PolicyKind::Saliency => {
                    let map = match &saliency {
                        Some(p) => io::load_saliency(p)?,
                        None => mask.to_image(),
                    };
                    search::saliency_search(&mut scorer, &map, window, sigma)?
                }
                PolicyKind::Learned => {
                    let w = PolicyWeights::load(weights.as_ref().expect("checked above"))?;
                    let env = Environment::new(&mask, &projector, &objective)?;
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    let selection = if greedy { Selection::Greedy } else { Selection::Sample };
                    policy::run_policy(&w, &env, budget, selection, &mut rng)?.0
                }
            };
            if let (Some(dir), Some(pano)) = (&cubemap_out, &panorama) {
                let img = io::load_equirect(pano)?;
                let cube = project_cubemap(&img, result.best_angle.theta, common.face_size)?;
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                io::save_cubemap(&cube, dir, "snap")?;
            }
            let mut value = serde_json::to_value(&result).expect("result serializes");
            value["policy"] = json!(policy);
            value["seed"] = json!(seed);
            emit(out, &value)
        }
        Command::Synth { out_dir, count, height, test_fraction, min_objects, max_objects, min_extent, max_extent } => {
            let params = SceneParams {
                min_objects,
                max_objects,
                extent_range: (min_extent, max_extent),
                ..SceneParams::default()
            };
            let mut problems = Vec::new();
            if count == 0 {
                problems.push("--count must be at least 1".to_string());
            }
            if height < 2 {
                problems.push("--height must be at least 2".to_string());
            }
            if !(0.0..=1.0).contains(&test_fraction) {
                problems.push("--test-fraction must lie in [0, 1]".to_string());
            }
            if let Err(e) = params.validate() {
                problems.push(e.to_string());
            }
            check(problems)?;
            let seed = resolve_seed(common.seed);
            let cfg = DatasetConfig { count, height, seed, test_fraction, params };
            let entries = harness::generate_dataset(&out_dir, &cfg)?;
            emit(
                out,
                &json!({
                    "manifest": out_dir.join("manifest.json"),
                    "entries": entries.len(),
                    "train": entries.iter().filter(|e| e.split == Split::Train).count(),
                    "test": entries.iter().filter(|e| e.split == Split::Test).count(),
                    "seed": seed,
                }),
            )
        }
        Command::Train(args) => train(&common, grid, args, out),
        Command::Eval { manifest, policies, budgets, weights, greedy, out: report_path, jobs, timing } => {
            let mut problems = Vec::new();
            if policies.is_empty() || budgets.is_empty() {
                problems.push("need at least one policy and one budget".to_string());
            }
            if budgets.windows(2).any(|w| w[0] > w[1]) {
                problems.push("--budgets must be sorted ascending".to_string());
            }
            if budgets.contains(&0) {
                problems.push("budgets must be positive".to_string());
            }
            if policies.contains(&PolicyKind::Learned) && weights.is_none() {
                problems.push("the learned policy needs --weights".to_string());
            }
            check(problems)?;
            let seed = resolve_seed(common.seed);
            let dataset = Dataset::load(&manifest)?;
            let images = dataset
                .split_or_all(Split::Test)
                .into_iter()
                .map(|e| Ok(BenchImage { id: e.id.clone(), mask: dataset.load_mask(e)? }))
                .collect::<Result<Vec<_>>>()?;
            let w = weights.as_ref().map(PolicyWeights::load).transpose()?;
            let cfg = BenchmarkConfig {
                policies,
                budgets,
                seed,
                face_size: common.face_size,
                grid_size: common.n_grid,
                objective: common.objective_config(),
                saliency: SaliencyConfig::default(),
                selection: if greedy { Selection::Greedy } else { Selection::Sample },
                record_timing: timing,
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            let report = pool.install(|| harness::budget_curve(&images, &cfg, w.as_ref()))?;
            if let Some(path) = &report_path {
                io::write_json(path, &report)?;
                let csv = path.with_extension("csv");
                fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
            }
            emit(out, &serde_json::to_value(&report).expect("report serializes"))
        }
    }
}

fn train(common: &Common, grid: AngleGrid, args: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut problems = Vec::new();
    if !(0.0..1.0).contains(&args.val_fraction) {
        problems.push("--val-fraction must lie in [0, 1)".to_string());
    }
    if !grid.len().is_multiple_of(2) {
        problems.push("--n-grid must be even for the learned policy".to_string());
    }
    let seed = common.seed.unwrap_or(0);
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        budget: args.budget,
        lr: args.lr,
        momentum: args.momentum,
        seed,
        reward_mode: args.reward,
        baseline_rollouts: args.baseline_rollouts,
        grid_size: grid.len(),
        net: NetConfig { face_size: common.face_size, actions: grid.len() + 1, ..NetConfig::default() },
        objective: common.objective_config(),
        validation_selection: if args.greedy_validation { Selection::Greedy } else { Selection::Sample },
        keep_best: args.keep_best,
    };
    if let Err(e) = cfg.validate() {
        problems.push(e.to_string());
    }
    check(problems)?;
    let seed = resolve_seed(common.seed);
    let cfg = TrainConfig { seed, ..cfg };

    let dataset = Dataset::load(&args.manifest)?;
    let entries: Vec<_> = dataset.entries.iter().filter(|e| e.split == Split::Train).collect();
    if entries.len() < 2 {
        return Err(Error::invalid("need at least two train-split entries"));
    }
    let n_val = ((entries.len() as f64 * args.val_fraction).round() as usize).clamp(1, entries.len() - 1);
    let scenes = entries
        .iter()
        .enumerate()
        .map(|(i, e)| Ok(TrainingScene { seed: e.scene_seed.unwrap_or(i as u64), mask: dataset.load_mask(e)? }))
        .collect::<Result<Vec<_>>>()?;
    let (train_set, val_set) = scenes.split_at(scenes.len() - n_val);
    info!("training on {} scenes, validating on {}", train_set.len(), val_set.len());
    let init = args.init.as_ref().map(PolicyWeights::load).transpose()?;

    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let log_path = args.out_dir.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let weights_path = args.out_dir.join("weights.snap");
    let (w, entries) = match policy::train(&cfg, train_set, val_set, init, Some(&mut log)) {
        Ok(r) => r,
        Err(Error::Diverged { epoch, reason, last_good }) => {
            let path = args.out_dir.join("weights_last_good.snap");
            last_good.save(&path)?;
            eprintln!("last good weights written to {}", path.display());
            return Err(Error::Diverged { epoch, reason, last_good });
        }
        Err(e) => return Err(e),
    };
    w.save(&weights_path)?;
    emit(
        out,
        &json!({
            "weights": weights_path,
            "log": log_path,
            "seed": seed,
            "final": entries.last(),
        }),
    )
}

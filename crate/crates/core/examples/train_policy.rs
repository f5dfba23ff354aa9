//! Trains a small recurrent policy for a few epochs, saves it, reloads it and
//! runs it greedily on a held-out scene.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snapcube::geometry::{AngleGrid, MaskProjector};
use snapcube::objective::{synth_scene, Objective, SceneParams};
use snapcube::policy::{
    run_policy, train, Environment, NetConfig, PolicyWeights, RewardMode, Selection, TrainConfig, TrainingScene,
};

pub fn run() -> snapcube::Result<()> {
    let params = SceneParams { extent_range: (0.5, 0.7), ..SceneParams::single_object() };
    let scene = |seed| -> snapcube::Result<TrainingScene> { Ok(TrainingScene { seed, mask: synth_scene(&params.sample(seed), 32)?.1 }) };
    let train_set = (0..48).map(scene).collect::<snapcube::Result<Vec<_>>>()?;
    let val_set = (1000..1012).map(scene).collect::<snapcube::Result<Vec<_>>>()?;

    let net = NetConfig { face_size: 16, conv_channels: [4, 8, 8], feature: 32, hidden: 32, predictor: 16, actions: 21 };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        net,
        reward_mode: RewardMode::ClippedGain,
        validation_selection: Selection::Greedy,
        keep_best: true,
        ..TrainConfig::default()
    };
    let mut log = Vec::new();
    let (weights, entries) = train(&cfg, &train_set, &val_set, None, Some(&mut log))?;
    for e in &entries {
        println!("epoch {}: validation {:?}", e.epoch, e.mean_val_objective);
    }

    let path = std::env::temp_dir().join("snapcube_example_weights.snap");
    weights.save(&path)?;
    let weights = PolicyWeights::load(&path)?;

    let held_out = scene(5000)?;
    let grid = AngleGrid::default();
    let projector = MaskProjector::new(held_out.mask.width(), held_out.mask.height(), net.face_size, grid)?;
    let objective = Objective::new(net.face_size, cfg.objective.clone())?;
    let env = Environment::new(&held_out.mask, &projector, &objective)?;
    let (result, trajectory) = run_policy(&weights, &env, cfg.budget, Selection::Greedy, &mut ChaCha8Rng::seed_from_u64(0))?;
    for s in &trajectory.steps {
        println!("  move {:+3} -> {:5.1}° score {:.4}", s.shift, s.theta.theta.to_degrees(), s.score);
    }
    println!("best {:.4} at {:.1}°", result.best_score, result.best_angle.theta.to_degrees());
    Ok(())
}

fn main() -> snapcube::Result<()> {
    run()
}

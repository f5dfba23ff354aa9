//! Compares the budgeted search policies against exhaustive search on a few
//! single-object scenes.

use snapcube::geometry::{AngleGrid, MaskProjector};
use snapcube::objective::{synth_scene, Objective, SceneParams};
use snapcube::search::{coarse_to_fine, exhaustive, random_policy, uniform_policy, Scorer};
use snapcube::ObjectiveConfig;

pub fn run() -> snapcube::Result<()> {
    let params = SceneParams { extent_range: (0.4, 0.7), ..SceneParams::single_object() };
    let objective = Objective::new(64, ObjectiveConfig::default())?;
    let grid = AngleGrid::new(20)?;
    let projector = MaskProjector::new(256, 128, 64, grid)?;
    let budget = 4;

    println!("{:>5} {:>9} {:>9} {:>9} {:>9}", "scene", "exhaust", "uniform", "random", "c2f");
    for seed in 0..6 {
        let (_, mask) = synth_scene(&params.sample(seed), 128)?;
        let mut scorer = Scorer::with_projector(&mask, &projector, &objective)?;
        let best = exhaustive(&mut scorer)?;
        let table: Vec<f64> = (0..grid.len()).map(|k| scorer.score(k)).collect();

        let fresh = || Scorer::from_table(grid, &table);
        let uniform = uniform_policy(&mut fresh()?, budget)?;
        let random = random_policy(&mut fresh()?, budget, seed)?;
        let c2f = coarse_to_fine(&mut fresh()?, budget)?;
        println!(
            "{seed:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            best.best_score, uniform.best_score, random.best_score, c2f.best_score
        );
    }
    Ok(())
}

fn main() -> snapcube::Result<()> {
    run()
}

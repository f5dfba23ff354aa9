//! Centers the most salient window on a face. The blurred foreground mask
//! stands in for a saliency model here.

use snapcube::geometry::{AngleGrid, MaskProjector};
use snapcube::objective::{synth_scene, Objective, SceneParams};
use snapcube::search::{saliency_policy, saliency_search, Scorer};
use snapcube::ObjectiveConfig;

pub fn run() -> snapcube::Result<()> {
    let params = SceneParams { extent_range: (0.3, 0.5), ..SceneParams::single_object() };
    let (_, mask) = synth_scene(&params.sample(8), 128)?;
    let grid = AngleGrid::default();
    let saliency = mask.to_image();

    let angle = saliency_policy(&saliency, 30, 5.0, grid)?;
    println!("saliency snap: slot {:?} at {:.1}°", angle.grid_index, angle.theta.to_degrees());

    let objective = Objective::new(64, ObjectiveConfig::default())?;
    let projector = MaskProjector::new(mask.width(), mask.height(), 64, grid)?;
    let mut scorer = Scorer::with_projector(&mask, &projector, &objective)?;
    let result = saliency_search(&mut scorer, &saliency, 30, 5.0)?;
    println!("disruption there: {:.4} after {} evaluation", result.best_score, result.budget_used);
    Ok(())
}

fn main() -> snapcube::Result<()> {
    run()
}

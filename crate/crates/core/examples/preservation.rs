//! Measures how much of each object survives on a single cube face, at the
//! canonical angle and at the exhaustive snap angle.

use snapcube::geometry::{AngleGrid, MaskProjector};
use snapcube::harness::preservation_iou;
use snapcube::objective::{synth_scene, Objective, SceneParams};
use snapcube::search::{exhaustive, Scorer};
use snapcube::ObjectiveConfig;

pub fn run() -> snapcube::Result<()> {
    let params = SceneParams::default();
    let objective = Objective::new(64, ObjectiveConfig::default())?;
    let projector = MaskProjector::new(256, 128, 64, AngleGrid::default())?;
    let (mut canonical, mut snapped, mut n) = (0.0, 0.0, 0);

    for seed in 0..10 {
        let spec = params.sample(seed);
        let (_, mask) = synth_scene(&spec, 128)?;
        let boxes: Vec<_> = spec.objects.iter().map(|o| o.bounding_box()).collect();
        let mut scorer = Scorer::with_projector(&mask, &projector, &objective)?;
        let snap = exhaustive(&mut scorer)?.best_angle.theta;

        let (Some(before), Some(after)) =
            (preservation_iou(&mask, &boxes, 0.0, 64)?.mean, preservation_iou(&mask, &boxes, snap, 64)?.mean)
        else {
            continue;
        };
        println!("scene {seed}: canonical {before:.3}, snapped {after:.3}");
        canonical += before;
        snapped += after;
        n += 1;
    }
    if n > 0 {
        println!("mean over {n}: canonical {:.3}, snapped {:.3}", canonical / n as f64, snapped / n as f64);
    }
    Ok(())
}

fn main() -> snapcube::Result<()> {
    run()
}

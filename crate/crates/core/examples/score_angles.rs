//! Prints the disruption score of one scene at every candidate azimuth,
//! under each denominator mode.

use snapcube::geometry::{AngleGrid, MaskProjector};
use snapcube::objective::{synth_scene, Objective, SceneParams};
use snapcube::{DenominatorMode, ObjectiveConfig};

pub fn run() -> snapcube::Result<()> {
    let params = SceneParams { extent_range: (0.5, 0.7), ..SceneParams::single_object() };
    let (_, mask) = synth_scene(&params.sample(3), 128)?;
    let grid = AngleGrid::default();
    let projector = MaskProjector::new(mask.width(), mask.height(), 64, grid)?;

    for mode in [DenominatorMode::BandOccupancy, DenominatorMode::WholeFace, DenominatorMode::ForegroundNormalized] {
        let objective = Objective::new(64, ObjectiveConfig::with_mode(mode))?;
        let scores = (0..grid.len())
            .map(|k| Ok(objective.score_faces(&projector.lateral(&mask, k)?)))
            .collect::<snapcube::Result<Vec<_>>>()?;
        let best = (0..scores.len()).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap_or(0);
        println!("{mode:?}: best slot {best} ({:.1}°)", grid.angle(best).theta.to_degrees());
        for (k, s) in scores.iter().enumerate() {
            println!("  {:5.1}°  {s:.4}", grid.angle(k).theta.to_degrees());
        }
    }
    Ok(())
}

fn main() -> snapcube::Result<()> {
    run()
}

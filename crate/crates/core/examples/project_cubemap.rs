//! Renders a synthetic panorama to a cubemap at two azimuths and writes the
//! faces plus a cross composite to a temp directory.

use snapcube::geometry::project_cubemap;
use snapcube::objective::{synth_scene, SceneParams};
use snapcube::{io, Face};

pub fn run() -> snapcube::Result<()> {
    let spec = SceneParams::default().sample(11);
    let (pano, _) = synth_scene(&spec, 128)?;
    let out = std::env::temp_dir().join("snapcube_project_example");

    for (stem, theta) in [("canonical", 0.0), ("rotated", std::f64::consts::FRAC_PI_8)] {
        let cube = project_cubemap(&pano, theta, 64)?;
        let files = io::save_cubemap(&cube, &out, stem)?;
        let front = cube.face(Face::Front);
        println!("{stem}: front face mean {:.3}, {} files", mean(&front.data), files.len());
    }
    println!("written to {}", out.display());
    Ok(())
}

fn mean(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
}

fn main() -> snapcube::Result<()> {
    run()
}

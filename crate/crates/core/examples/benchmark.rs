//! Generates a small synthetic dataset on disk and prints budget curves for
//! the non-learned policies.

use snapcube::harness::{budget_curve, generate_dataset, BenchImage, BenchmarkConfig, Dataset, DatasetConfig, PolicyKind, Split};
use snapcube::objective::SceneParams;

pub fn run() -> snapcube::Result<()> {
    let dir = std::env::temp_dir().join("snapcube_benchmark_example");
    let cfg = DatasetConfig { count: 12, height: 64, seed: 3, test_fraction: 0.5, params: SceneParams::default() };
    generate_dataset(&dir, &cfg)?;

    let dataset = Dataset::load(dir.join("manifest.json"))?;
    let images = dataset
        .split_or_all(Split::Test)
        .into_iter()
        .map(|e| Ok(BenchImage { id: e.id.clone(), mask: dataset.load_mask(e)? }))
        .collect::<snapcube::Result<Vec<_>>>()?;

    let bench = BenchmarkConfig {
        policies: vec![PolicyKind::Exhaustive, PolicyKind::Random, PolicyKind::Uniform, PolicyKind::CoarseToFine, PolicyKind::Saliency],
        budgets: vec![1, 2, 4, 8],
        face_size: 32,
        ..BenchmarkConfig::default()
    };
    let report = budget_curve(&images, &bench, None)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn main() -> snapcube::Result<()> {
    run()
}

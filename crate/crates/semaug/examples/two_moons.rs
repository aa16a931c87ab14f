//! Adapt a classifier across a 30 degree rotation of the two-moons dataset.
//!
//! Trains the full augmented objective and a source-only baseline on the
//! same data and seed, prints both learning traces, and writes decision
//! boundary grids for plotting.

use semaug::dataset::two_moons_task;
use semaug::runner::{dump_boundary, evaluate, train, TrainConfig};

fn main() -> semaug::Result<()> {
    let seed = 0;
    let (source, target) = two_moons_task(seed);
    println!(
        "task: {} labeled source points, {} target points, target = source rotated 30 degrees",
        source.len(),
        target.len()
    );

    let augmented_cfg = TrainConfig { seed, ..TrainConfig::default() };
    let augmented = train(&source, &target, &augmented_cfg)?;

    let baseline_cfg = TrainConfig { lambda0: 0.0, beta: 0.0, seed, ..TrainConfig::default() };
    let baseline = train(&source, &target, &baseline_cfg)?;

    println!("\naugmented run (lambda0 {}, beta {}):", augmented_cfg.lambda0, augmented_cfg.beta);
    println!("  iter  lambda  total_loss  src_acc  tgt_acc");
    for row in augmented.metrics.iter().step_by(8) {
        println!(
            "  {:>4}  {:>6.4}  {:>10.4}  {:>7.3}  {:>7.3}",
            row.iter,
            row.lambda,
            row.loss_total,
            row.src_acc,
            row.tgt_acc.unwrap_or(f64::NAN)
        );
    }

    let aug_acc = evaluate(&augmented.model, &target)?;
    let base_acc = evaluate(&baseline.model, &target)?;
    println!("\nfinal target accuracy: augmented {aug_acc:.3}, source-only {base_acc:.3}");
    println!("adaptation gain: {:+.1} points", (aug_acc - base_acc) * 100.0);

    let dir = std::path::Path::new("out/two_moons");
    std::fs::create_dir_all(dir)?;
    dump_boundary(&augmented.model, (-2.5, 3.5, -2.0, 2.5), 200, dir.join("augmented.csv"))?;
    dump_boundary(&baseline.model, (-2.5, 3.5, -2.0, 2.5), 200, dir.join("source_only.csv"))?;
    println!("boundary grids written to {}", dir.display());
    Ok(())
}

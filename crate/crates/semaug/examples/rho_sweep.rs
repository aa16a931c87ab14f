//! Stress the dependence on target data volume: train once per target
//! fraction rho, keeping everything else fixed, and score each model on the
//! full labeled target set.
//!
//! The target subsample is stratified per pseudo-class at a fixed seed, so
//! rho 1.0 reproduces the plain training run exactly.

use semaug::dataset::two_moons_task;
use semaug::runner::{rho_sweep, TrainConfig};

fn main() -> semaug::Result<()> {
    let seed = 0;
    let (source, target) = two_moons_task(seed);
    let config = TrainConfig { seed, ..TrainConfig::default() };
    let rhos = [0.2, 0.4, 0.6, 0.8, 1.0];
    let rows = rho_sweep(&source, &target, &config, &rhos)?;

    println!("target fraction  points used  target accuracy");
    for row in &rows {
        println!(
            "{:>15.1}  {:>11}  {:>15.3}",
            row.rho,
            (row.rho * target.len() as f64).round() as usize,
            row.tgt_acc
        );
    }
    println!("\neach row is an independent training run; only the target subsample varies");
    Ok(())
}

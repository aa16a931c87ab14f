//! Finite-difference audit of the analytic gradients behind both training
//! losses on randomly drawn networks.
//!
//! Every parameter of every net is bumped both ways; central differences are
//! compared against the closed-form gradient. Parameters whose rectifier
//! pre-activations sit within 1e-4 of the kink are excluded, since the
//! two-sided difference would straddle a nondifferentiable point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use semaug::linalg::{Matrix, Vector};
use semaug::network::{self, ModelParams};
use semaug::oracle::{finite_diff_audit, mi_objective, surrogate_objective};
use semaug::stats::{ClassEntry, ClassStats};

fn random_stats(classes: usize, k: usize, rng: &mut ChaCha8Rng) -> ClassStats {
    let entries = (0..classes)
        .map(|_| {
            let delta: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
            let rows: Vec<Vec<f64>> =
                (0..k).map(|_| (0..k).map(|_| StandardNormal.sample(rng)).collect()).collect();
            let a = Matrix::from_rows(&rows).expect("square factor");
            ClassEntry {
                mu_source: Vector::zeros(k),
                mu_target: Vector::new(delta.clone()),
                delta_mu: Vector::new(delta),
                sigma_target: a.transpose_matmul(&a).expect("square").scale(1.0 / k as f64),
                count_source: 1,
                count_target: 1,
                enabled: true,
            }
        })
        .collect();
    ClassStats { feature_dim: k, classes: entries }
}

fn main() -> semaug::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    println!("net  loss        value      max rel err  checked  excluded");
    for net_id in 0..6usize {
        let classes = 2 + net_id % 3;
        let params = ModelParams::init(2, &[4 + net_id, 3], classes, &mut rng);
        let batch = 3 + net_id % 2;
        let inputs = Matrix::from_rows(
            &(0..batch)
                .map(|_| (0..2).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect::<Vec<Vec<f64>>>(),
        )?;
        let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
        let stats = random_stats(classes, params.feature_dim(), &mut rng);

        let record = network::forward(&params, &inputs)?;
        let mask = network::kink_exclusion_mask(&params, &record, 1e-4);

        let (value, grads) = surrogate_objective(&params, &inputs, &labels, &stats, 0.25)?;
        let report = finite_diff_audit(
            |p| surrogate_objective(p, &inputs, &labels, &stats, 0.25).map(|(v, _)| v),
            &params,
            &grads.to_flat(),
            1e-5,
            &mask,
        )?;
        println!(
            "{net_id:>3}  augmented  {value:>9.5}  {:>11.2e}  {:>7}  {:>8}",
            report.max_rel_error, report.checked, report.excluded
        );

        let (mi_value, mi_grads) = mi_objective(&params, &inputs)?;
        let report = finite_diff_audit(
            |p| mi_objective(p, &inputs).map(|(v, _)| v),
            &params,
            &mi_grads.to_flat(),
            1e-5,
            &mask,
        )?;
        println!(
            "{net_id:>3}  info       {mi_value:>9.5}  {:>11.2e}  {:>7}  {:>8}",
            report.max_rel_error, report.checked, report.excluded
        );
    }
    println!("\nall audits run at epsilon 1e-5; anything above 1e-6 would be a defect");
    Ok(())
}

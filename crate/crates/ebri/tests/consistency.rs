//! Large-sample behaviour of the imputed estimators under exact balanced imputation.

use ebri::harness::{run_experiment, Estimand, ExperimentConfig, MechanismSpec, MonteCarloResult};
use ebri_core::imputation::Method;

fn run(n: usize) -> MonteCarloResult {
    let mut cfg = ExperimentConfig::standard(777);
    cfg.populations.truncate(1);
    cfg.sample_size = n;
    cfg.mechanisms = vec![MechanismSpec::Mcar { phi0: 0.5 }];
    cfg.methods = vec![Method::Ebri];
    cfg.alphas = vec![0.25, 0.5];
    cfg.keep_replicates = true;
    run_experiment(&cfg).unwrap()
}

#[test]
fn total_and_distribution_function_converge() {
    let sizes = [50, 100, 200, 400];
    let results: Vec<MonteCarloResult> = sizes.iter().map(|&n| run(n)).collect();
    let big_n = 10_000.0;

    // mean squared error of N⁻¹(t̂ − t) halves when n doubles
    let mse: Vec<f64> = results
        .iter()
        .map(|r| r.cells.iter().find(|c| c.estimand == Estimand::Total).unwrap().mse / (big_n * big_n))
        .collect();
    for (i, w) in mse.windows(2).enumerate().take(2) {
        let ratio = w[0] / w[1];
        assert!((1.4..=2.8).contains(&ratio), "n = {}: MSE ratio {ratio}", sizes[i]);
    }

    // mean |F̂_I(t_α) − F_N(t_α)| decreases with n
    for (a, alpha) in [0.25, 0.5].into_iter().enumerate() {
        let mean_abs: Vec<f64> = results
            .iter()
            .map(|r| {
                let truth = r.cells.iter().find(|c| c.estimand == Estimand::Df { alpha }).unwrap().truth;
                let est = &r.replicates.as_ref().unwrap()[0].df[a][0];
                est.iter().map(|f| (f - truth).abs()).sum::<f64>() / est.len() as f64
            })
            .collect();
        assert!(mean_abs.windows(2).all(|w| w[1] < w[0]), "alpha {alpha}: {mean_abs:?}");
    }
}

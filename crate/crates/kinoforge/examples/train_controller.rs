//! Train the steering network on a small dataset and compare its closed-loop
//! endpoint accuracy against the nearest-entry lookup baseline.

use kinoforge::controller::{default_hidden, eval_controller, MlpController, TrainConfig};
use kinoforge::dataset::{ControlDataset, GenerateConfig};
use kinoforge::dynamics::{Epsilons, SystemSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> kinoforge::Result<()> {
    let spec = SystemSpec::first_order_default();
    let eps = Epsilons::first_order_default();
    let cfg = GenerateConfig {
        durations: vec![0.5, 1.0, 2.0, 3.0, 4.0],
        max_random_samples: 20_000,
        seed: 11,
        ..GenerateConfig::default()
    };
    let (ds, _) = ControlDataset::generate(&spec, &eps, &cfg)?;
    println!("dataset: {} entries", ds.len());

    let mut train_cfg = TrainConfig::for_order(spec.order);
    train_cfg.max_epochs = 300; // short demo run; the CLI default trains longer
    train_cfg.seed = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = MlpController::new(&spec, default_hidden(spec.order), &mut rng);
    let report = net.train(&ds, &train_cfg)?;
    println!(
        "trained {} epochs, best val loss {:.5} at epoch {}",
        report.epochs_run, report.best_val_loss, report.best_epoch
    );

    // Fold batch norm for fast inference, then evaluate both policies.
    net.fold_batch_norm();
    let learned = eval_controller(&spec, &eps, &ds, 300, |q| Ok(net.predict(q)))?;
    let lookup = eval_controller(&spec, &eps, &ds, 300, |q| Ok(ds.nearest(q)?.step))?;
    println!(
        "network: within eps {:.1}%  mean d_E {:.4}  mean d_R {:.4}",
        100.0 * learned.within_eps,
        learned.mean_d_e,
        learned.mean_d_r
    );
    println!(
        "lookup baseline: within eps {:.1}%  mean d_E {:.4}  mean d_R {:.4}",
        100.0 * lookup.within_eps,
        lookup.mean_d_e,
        lookup.mean_d_r
    );
    Ok(())
}

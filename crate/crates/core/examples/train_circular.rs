//! Train on circular motion and inspect the learned operator's spectrum.
//!
//! cargo run --release --example train_circular -- [epochs] [lr] [batch]

use kidd::numerics::eig;
use kidd::training::{train_with, TrainConfig};
use kidd::trajgen::{make_dataset, sample_circular, trajectory_seed, GeneratorConfig, Scenario, Split, SplitSizes};
use kidd::koopman::KoopmanConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(Ok(60), |s| s.parse())?;
    let lr = args.get(1).map_or(Ok(1e-3), |s| s.parse())?;
    let batch = args.get(2).map_or(Ok(10), |s| s.parse())?;

    let gen = GeneratorConfig::default();
    let ds = make_dataset(Scenario::Circular, SplitSizes::new(600, 100, 100), 42, &gen)?;
    let cfg = TrainConfig {
        model: KoopmanConfig { state_delays: 3, obs_dim: 15, inputs_enabled: false, ..Default::default() },
        epochs,
        lr,
        batch_size: batch,
        seed: 7,
        ..Default::default()
    };
    let (model, report) = train_with(&ds, &cfg, |e| {
        println!(
            "epoch {:3}  total {:.4e}  recon_pred {:.4e}  fit {:.4e}  val_mse {:.4e}  lr {:.2e}  {:.2}s",
            e.epoch, e.train.total, e.train.recon_pred, e.train.fit, e.val_mse, e.lr, e.seconds
        )
    })?;
    println!("trained in {:.1}s", report.wall_seconds);

    let mean_step: f64 = (0..ds.train.len())
        .map(|i| sample_circular(&gen.circular, trajectory_seed(42, Split::Train, i)).map(|p| p.angular_step))
        .sum::<Result<f64, _>>()?
        / ds.train.len() as f64;
    println!("mean angular step {mean_step:.4}");
    let e = eig(&model.k)?;
    for l in &e.values {
        println!("  |l| = {:.4}  arg = {:+.4}", l.norm(), l.arg());
    }
    Ok(())
}

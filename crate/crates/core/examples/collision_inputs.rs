//! Train a collision model with inputs and print the input magnitude
//! around wall bounces.
//!
//! cargo run --release --example collision_inputs -- [epochs]

use kidd::koopman::{build_states, KoopmanConfig};
use kidd::training::{train, TrainConfig};
use kidd::trajgen::{make_dataset, GeneratorConfig, Scenario, SplitSizes};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(30), |s| s.parse())?;
    let ds = make_dataset(Scenario::Collision, SplitSizes::new(300, 50, 50), 42, &GeneratorConfig::default())?;
    let cfg = TrainConfig {
        model: KoopmanConfig { input_dim: 4, inputs_enabled: true, ..Default::default() },
        epochs,
        lr: 1e-3,
        batch_size: 10,
        ..Default::default()
    };
    let (model, report) = train(&ds, &cfg)?;
    println!("val mse {:.4e}", report.epochs.last().map_or(f64::NAN, |e| e.val_mse));

    let ts = model.state_delays();
    let mut profile = [(0.0, 0usize); 7];
    for traj in &ds.test {
        for (i, s) in build_states(&traj.poses, ts)?.iter().enumerate() {
            let t = (i + ts - 1) as i64;
            let Some(d) = traj.bounces.iter().map(|b| t - b.step as i64).min_by_key(|d| d.abs()) else { continue };
            if d.abs() <= 3 {
                let slot = &mut profile[(d + 3) as usize];
                slot.0 += model.input_map(s).iter().map(|v| v.abs()).sum::<f64>();
                slot.1 += 1;
            }
        }
    }
    for (d, (sum, n)) in (-3..=3).zip(profile) {
        println!("offset {d:+}  mean |u|_1 {:.4}  ({n} steps)", sum / n.max(1) as f64);
    }
    Ok(())
}

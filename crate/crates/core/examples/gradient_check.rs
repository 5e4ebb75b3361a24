//! Compare tape gradients of the full training objective against central
//! differences on a tiny model.

use kidd::autodiff::{grad_check, AutodiffError, GradCheckOptions};
use kidd::koopman::{KoopmanConfig, KoopmanModel, ModelVars};
use kidd::numerics::Matrix;
use kidd::training::{build_objective, Batch, LossWeights};
use kidd::trajgen::{make_dataset, GeneratorConfig, Scenario, SplitSizes, Trajectory};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = KoopmanConfig { state_delays: 2, obs_dim: 4, input_dim: 2, hidden: 8, depth: 3, inputs_enabled: true };
    let mut model = KoopmanModel::new(cfg, 1)?;
    // a zero K sits on the nuclear norm's kink
    model.k = Matrix::from_fn(4, 4, |i, j| if i == j { 0.9 - 0.2 * i as f64 } else { 0.03 * (i as f64 - j as f64) });

    let ds = make_dataset(Scenario::Collision, SplitSizes::new(4, 0, 0), 8, &GeneratorConfig::default())?;
    let refs: Vec<&Trajectory> = ds.train.iter().collect();
    let batch = Batch::new(&refs, 2)?;
    let weights = LossWeights { ae: 0.2, fit: 1.0, input: 0.1, rank: 0.01 };

    let report = grad_check(
        &model.parameters(),
        |tape, vars| {
            let mv = ModelVars::bind(&model, vars).map_err(|e| AutodiffError::Invalid { op: "bind", msg: e.to_string() })?;
            Ok(build_objective(tape, &mv, &batch, &weights)?.total)
        },
        GradCheckOptions::default(),
        &[],
    )?;
    for p in &report.params {
        println!("{:<16} max rel error {:.2e}  {}", p.name, p.max_rel_error, if p.passed { "ok" } else { "FAIL" });
    }
    println!("all passed: {}", report.passed());
    Ok(())
}

//! Fit DMD and polynomial EDMD baselines to collision data and compare
//! one-step residuals and closed-loop error.

use kidd::baselines::{dmd_fit, dmd_model, edmd_fit, Dictionary};
use kidd::metrics::evaluate;
use kidd::trajgen::{make_dataset, GeneratorConfig, Scenario, SplitSizes};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = make_dataset(Scenario::Collision, SplitSizes::new(300, 0, 50), 3, &GeneratorConfig::default())?;
    let ts = 2;

    let dmd = dmd_fit(&ds.train, ts)?;
    println!("dmd    residual {:.4e}  rank {}", dmd.residual, dmd.rank);
    let model = dmd_model(&ds.train, ts)?;
    println!("dmd    test mse {:.4e}", evaluate(&model, &ds.test, None)?.mse);

    for degree in [2, 3] {
        let fit = edmd_fit(&ds.train, ts, &Dictionary::polynomial(degree))?;
        let model = fit.to_model()?;
        println!(
            "edmd{degree}  residual {:.4e}  state residual {:.4e}  test mse {:.4e}",
            fit.fit.residual,
            fit.state_residual,
            evaluate(&model, &ds.test, None)?.mse
        );
    }
    Ok(())
}

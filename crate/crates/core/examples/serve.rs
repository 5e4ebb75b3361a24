//! Start the HTTP service over a freshly generated dataset and an exact
//! rotation model.
//!
//! cargo run --example serve -- [port]
//! curl -X POST localhost:8080/sessions -H 'content-type: application/json' -d '{"model":"rotation","scenario":"circular"}'

use std::net::SocketAddr;

use kidd::koopman::{KoopmanConfig, KoopmanModel};
use kidd::numerics::Matrix;
use kidd::service::{serve, ServiceConfig};
use kidd::trajgen::{make_dataset, save_dataset, GeneratorConfig, Scenario, SplitSizes};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let port: u16 = std::env::args().nth(1).map_or(Ok(8080), |s| s.parse())?;
    let dir = std::env::temp_dir().join("kidd-serve-example");
    let models = dir.join("models");
    std::fs::create_dir_all(&models)?;

    let ds = make_dataset(Scenario::Circular, SplitSizes::new(10, 5, 20), 0, &GeneratorConfig::default())?;
    save_dataset(&ds, &dir.join("circular.jsonl"))?;
    let mut model = KoopmanModel::new(KoopmanConfig { obs_dim: 6, ..Default::default() }, 0)?;
    let (c, s) = (0.35f64.cos(), 0.35f64.sin());
    model.k = Matrix::from_fn(6, 6, |i, j| match (i, j) {
        (0, 0) | (1, 1) => c,
        (0, 1) => -s,
        (1, 0) => s,
        _ if i == j => 0.5 / (i as f64),
        _ => 0.0,
    });
    model.save(&models.join("rotation.json"))?;

    let cfg = ServiceConfig { model_dir: models, data_dir: dir, ..Default::default() };
    serve(cfg, SocketAddr::from(([127, 0, 0, 1], port))).await?;
    Ok(())
}

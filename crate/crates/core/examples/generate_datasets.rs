//! Generate every scenario, write it as JSON lines, and read it back.
//!
//! cargo run --example generate_datasets -- [out_dir]

use kidd::trajgen::{load_dataset, make_dataset, save_dataset, GeneratorConfig, Scenario, Split, SplitSizes};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map_or_else(std::env::temp_dir, Into::into);
    let gen = GeneratorConfig::default();
    for scenario in Scenario::ALL {
        let ds = make_dataset(scenario, SplitSizes::new(50, 10, 10), 1, &gen)?;
        let path = out.join(format!("{}.jsonl", scenario.name()));
        save_dataset(&ds, &path)?;
        assert_eq!(load_dataset(&path)?, ds);

        let first = &ds.split(Split::Train)[0];
        let (t, k) = scenario.protocol();
        let bounces: usize = ds.train.iter().map(|t| t.bounces.len()).sum();
        println!(
            "{:<10} T={t:2} K={k}  visible {:2}/{t}  bounces {bounces:3}  first pose {:?}  -> {}",
            scenario.name(),
            first.visible_count(),
            first.poses[0].to_array(),
            path.display()
        );
    }
    Ok(())
}

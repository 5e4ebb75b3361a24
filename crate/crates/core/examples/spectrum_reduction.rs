//! Inspect an operator's spectrum and keep only its largest modes.

use kidd::analysis::{reduce_model, spectrum, stability, Ranking};
use kidd::numerics::Matrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    let k = Matrix::from_rows(&[
        vec![0.98 * c, -0.98 * s, 0.0, 0.0, 0.0],
        vec![0.98 * s, 0.98 * c, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.5, 0.1, 0.0],
        vec![0.0, 0.0, 0.0, 0.2, 0.0],
        vec![0.1, 0.0, 0.0, 0.0, -0.05],
    ])?;
    let spectrum_view = spectrum(&k)?;
    println!("{}", serde_json::to_string_pretty(&spectrum_view.export())?);
    println!("stable: {}", stability(&k)?.stable);

    for keep in [1, 2, 3, 5] {
        let r = reduce_model(&k, keep, &Ranking::Magnitude)?;
        let kept: Vec<String> = r.kept.iter().map(|&i| format!("{:.3}", spectrum_view.eigenvalues[i])).collect();
        println!("top {keep} -> effective {} kept [{}] trusted {}", r.effective_k, kept.join(", "), r.trusted);
    }
    Ok(())
}

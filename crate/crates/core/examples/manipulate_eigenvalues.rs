//! Speed up, slow down and destabilise a rotating mode, and watch the
//! dominant frequency of the rollout follow.

use kidd::analysis::{manipulate, spectrum, Edit, Manipulation};
use kidd::baselines::Dictionary;
use kidd::koopman::KoopmanModel;
use kidd::metrics::dominant_frequency;
use kidd::numerics::Matrix;
use kidd::trajgen::Pose;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // identity observables: K acts on the pose itself
    let (c, s) = (0.25f64.cos(), 0.25f64.sin());
    let k = Matrix::from_rows(&[
        vec![c, -s, 0.0, 0.0],
        vec![s, c, 0.0, 0.0],
        vec![0.0, 0.0, 0.4, 0.0],
        vec![0.0, 0.0, 0.0, 0.1],
    ])?;
    let model = KoopmanModel::from_dictionary(Dictionary::identity(), 1, k)?;
    let pair = spectrum(&model.k)?.dominant_pair().ok_or("no pair")?;
    let start = [Pose::new(0.1, 0.0, 0.0, 0.0)];

    let edits = [
        ("original", None),
        ("angle x0.5", Some(Manipulation { pair, radius: None, angle: Some(Edit::Scale(0.5)) })),
        ("angle x1.5", Some(Manipulation { pair, radius: None, angle: Some(Edit::Scale(1.5)) })),
        ("radius 1.01", Some(Manipulation { pair, radius: Some(Edit::Set(1.01)), angle: None })),
    ];
    for (name, edit) in edits {
        let k = match edit {
            Some(e) => manipulate(&model.k, &e)?.k,
            None => model.k.clone(),
        };
        let x: Vec<f64> = model.rollout(&start, 128, Some(&k))?.poses.iter().map(|p| p.x).collect();
        let f = dominant_frequency(&x).ok_or("flat series")?;
        let peak = |w: &[f64]| w.iter().map(|v| v.abs()).fold(0.0, f64::max);
        println!(
            "{name:<12} bin {:2}  cycles/step {:.4}  peak |x| first {:.3} last {:.3}",
            f.bin,
            f.cycles_per_step,
            peak(&x[..32]),
            peak(&x[96..])
        );
    }
    Ok(())
}

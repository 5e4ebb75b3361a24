//! Objective assembly and optimization of Koopman models.

mod objective;
mod optim;

pub use objective::{
    ae_loss, build_objective, evaluate_losses, fit_loss, input_sparsity, rank_penalty, recon_pred_loss,
    total_objective, Batch, LossBreakdown, LossTerms,
};
pub use optim::{adam_step, lr_on_plateau, AdamConfig, AdamState, Annealing, PlateauConfig, PlateauScheduler};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape};
use crate::jsonfmt;
use crate::koopman::{stack_state, KoopmanConfig, KoopmanError, KoopmanModel, ModelVars, TrainingMeta};
use crate::metrics;
use crate::numerics::{lstsq, Matrix, NumericsError};
use crate::trajgen::{Dataset, Trajectory};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {losses:?}{}", snapshot.as_ref().map(|p| format!(" (snapshot at {})", p.display())).unwrap_or_default())]
    NonFinite { epoch: usize, batch: usize, losses: LossBreakdown, snapshot: Option<PathBuf> },
    #[error(transparent)]
    Model(#[from] KoopmanError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Regularizer weights; the reconstruction/prediction term has weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub ae: f64,
    pub fit: f64,
    pub input: f64,
    pub rank: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { ae: 0.1, fit: 1.0, input: 0.01, rank: 0.001 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { ae: 0.0, fit: 0.0, input: 0.0, rank: 0.0 }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { ae: self.ae * c, fit: self.fit * c, input: self.input * c, rank: self.rank * c }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: KoopmanConfig,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Final regularizer weights.
    pub weights: LossWeights,
    /// Fraction of `epochs` at which the ramp reaches the final weights.
    pub anneal_fraction: f64,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    pub seed: u64,
    /// Fit `K` by least squares on the initial encoder before training.
    pub dmd_warm_start: bool,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Cap on training trajectories per epoch (0 uses all).
    pub max_train: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: KoopmanConfig::default(),
            epochs: 250,
            lr: 5e-4,
            batch_size: 40,
            weights: LossWeights::default(),
            anneal_fraction: 0.5,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            seed: 0,
            dmd_warm_start: false,
            checkpoint_every: 0,
            checkpoint_dir: None,
            max_train: 0,
        }
    }
}

impl TrainConfig {
    pub fn annealing(&self) -> Annealing {
        let end = (self.epochs as f64 * self.anneal_fraction).round() as usize;
        Annealing { start_epoch: 0, end_epoch: end, final_weights: self.weights }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        let w = &self.weights;
        if [w.ae, w.fit, w.input, w.rank].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(TrainError::Config("loss weights must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.anneal_fraction) {
            return Err(TrainError::Config("anneal_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub weights: LossWeights,
    /// Mean over the epoch's batches.
    pub train: LossBreakdown,
    /// Closed-loop pose MSE on the validation split.
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub initial_train_loss: f64,
    pub wall_seconds: f64,
    /// Training trajectories whose prediction window was fully invisible.
    pub invisible_prediction_windows: usize,
}

impl TrainReport {
    pub fn lr_history(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }
}

/// Checkpoint file: the model document plus optimizer state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(flatten)]
    pub model: KoopmanModel,
    pub optimizer: AdamState,
    pub epoch: usize,
}

/// Content hash of the pose data of a dataset.
pub fn dataset_fingerprint(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(dataset.scenario.name().as_bytes());
    for t in dataset.train.iter().chain(&dataset.val).chain(&dataset.test) {
        for p in &t.poses {
            for v in p.to_array() {
                h.update(v.to_le_bytes());
            }
        }
        h.update(t.visible.iter().map(|v| *v as u8).collect::<Vec<_>>());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Least-squares `K` on the current encoder's observables of `data`,
/// ignoring inputs.
pub fn dmd_warm_start(model: &mut KoopmanModel, data: &[Trajectory]) -> Result<(), TrainError> {
    let ts = model.state_delays();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for t in data {
        let states: Vec<Vec<f64>> = t.poses.windows(ts).map(stack_state).collect();
        for w in states.windows(2) {
            x.push(w[0].clone());
            y.push(w[1].clone());
        }
    }
    if x.is_empty() {
        return Err(TrainError::Data("no snapshot pairs for the warm start".into()));
    }
    let n = x[0].len();
    let xs = Matrix::from_fn(n, x.len(), |i, j| x[j][i]);
    let ys = Matrix::from_fn(n, y.len(), |i, j| y[j][i]);
    let gx = model.encode_batch(&xs);
    let gy = model.encode_batch(&ys);
    model.k = lstsq(&gx.transpose(), &gy.transpose())?.x.transpose();
    Ok(())
}

fn mean_val_mse(model: &KoopmanModel, val: &[Trajectory]) -> Result<f64, TrainError> {
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(metrics::evaluate(model, val, None)?.mse)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TrainError> {
    let text = jsonfmt::to_string(value).map_err(|e| TrainError::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|source| TrainError::Io { path: path.display().to_string(), source })
}

/// Trains a fresh model on `dataset.train`, monitoring `dataset.val`.
///
/// Fully deterministic for a fixed configuration: initialization and
/// batch order derive from `config.seed`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(KoopmanModel, TrainReport), TrainError> {
    train_with(dataset, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(KoopmanModel, TrainReport), TrainError> {
    config.validate()?;
    let train_set: &[Trajectory] = match config.max_train {
        0 => &dataset.train,
        n => &dataset.train[..n.min(dataset.train.len())],
    };
    if train_set.is_empty() {
        return Err(TrainError::Data("training split is empty".into()));
    }
    let mut model = KoopmanModel::new(config.model.clone(), config.seed)?;
    if config.dmd_warm_start {
        dmd_warm_start(&mut model, train_set)?;
    }
    let anneal = config.annealing();
    let mut params = model.parameters();
    let mut opt = AdamState::new(params.values(), config.lr);
    let mut sched = PlateauScheduler::new(config.plateau);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_BA7C_0000_0001);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let ts = config.model.state_delays;

    let all: Vec<&Trajectory> = train_set.iter().collect();
    let initial_train_loss = evaluate_losses(&model, &all, &anneal.weights(0))?.0.total;
    let invisible = Batch::new(&all, ts)?.invisible_prediction;

    let started = Instant::now();
    let mut report = TrainReport { epochs: Vec::new(), initial_train_loss, wall_seconds: 0.0, invisible_prediction_windows: invisible };
    for epoch in 0..config.epochs {
        let t0 = Instant::now();
        let weights = anneal.weights(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let trajs: Vec<&Trajectory> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::new(&trajs, ts)?;
            let mut tape = Tape::new();
            let vars = tape.register(&params);
            let mv = ModelVars::bind(&model, &vars)?;
            let terms = build_objective(&mut tape, &mv, &batch, &weights)?;
            let values = terms.values(&tape);
            if !values.total.is_finite() {
                let snapshot = match &config.checkpoint_dir {
                    Some(dir) => {
                        let path = dir.join(format!("nonfinite-epoch{epoch:04}-batch{bi:05}.json"));
                        model.save(&path)?;
                        Some(path)
                    }
                    None => None,
                };
                return Err(TrainError::NonFinite { epoch, batch: bi, losses: values, snapshot });
            }
            let grads = tape.backward(terms.total)?;
            let g: Vec<Matrix> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();
            adam_step(params.values_mut(), &g, &mut opt, &config.adam);
            model.set_parameters(&params)?;
            sum.recon_pred += values.recon_pred;
            sum.fit += values.fit;
            sum.ae += values.ae;
            sum.input += values.input;
            sum.rank += values.rank;
            sum.total += values.total;
            batches += 1;
        }
        let nb = batches.max(1) as f64;
        let train_mean = LossBreakdown {
            recon_pred: sum.recon_pred / nb,
            fit: sum.fit / nb,
            ae: sum.ae / nb,
            input: sum.input / nb,
            rank: sum.rank / nb,
            total: sum.total / nb,
        };
        let val_mse = mean_val_mse(&model, &dataset.val)?;
        let record = EpochRecord { epoch, lr: opt.lr, weights, train: train_mean, val_mse, seconds: t0.elapsed().as_secs_f64() };
        log::debug!("epoch {epoch}: total {:.5e} val_mse {:.5e} lr {:.3e}", train_mean.total, val_mse, opt.lr);
        on_epoch(&record);
        report.epochs.push(record);
        let monitored = if val_mse.is_finite() { val_mse } else { train_mean.total };
        opt.lr = sched.observe(monitored, opt.lr);

        if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            if let Some(dir) = &config.checkpoint_dir {
                let ck = Checkpoint { model: model.clone(), optimizer: opt.clone(), epoch: epoch + 1 };
                write_json(&dir.join(format!("checkpoint-{:04}.json", epoch + 1)), &ck)?;
            }
        }
    }
    report.wall_seconds = started.elapsed().as_secs_f64();

    let mut final_losses = std::collections::BTreeMap::new();
    if let Some(last) = report.epochs.last() {
        final_losses.insert("recon_pred".into(), last.train.recon_pred);
        final_losses.insert("fit".into(), last.train.fit);
        final_losses.insert("ae".into(), last.train.ae);
        final_losses.insert("input".into(), last.train.input);
        final_losses.insert("rank".into(), last.train.rank);
        final_losses.insert("total".into(), last.train.total);
        if last.val_mse.is_finite() {
            final_losses.insert("val_mse".into(), last.val_mse);
        }
    }
    model.training = Some(TrainingMeta {
        epochs: config.epochs,
        final_losses,
        dataset_fingerprint: dataset_fingerprint(dataset),
        seed: config.seed,
    });
    Ok((model, report))
}

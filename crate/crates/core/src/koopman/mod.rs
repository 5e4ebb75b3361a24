//! Koopman embedding of delayed pose states: encoder, decoder and input
//! perceptrons around a linear step `g' = K g + K_U u`.

mod graph;
mod mlp;

pub use graph::ModelVars;
pub use mlp::{Activation, Layer, Mlp, MlpVars};

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParameterSet;
use crate::baselines::Dictionary;
use crate::jsonfmt;
use crate::numerics::{gemm, Matrix, NumericsError};
use crate::trajgen::Pose;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const POSE_DIM: usize = 4;

#[derive(Debug, Error)]
pub enum KoopmanError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence of length {got} is shorter than the {need} delayed coordinates")]
    TooShort { need: usize, got: usize },
    #[error("horizon must be at least 1")]
    Horizon,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KoopmanConfig {
    /// Number of delayed poses stacked into a state, `T_s`.
    pub state_delays: usize,
    /// Observable dimension `M`.
    pub obs_dim: usize,
    /// Input dimension `U`.
    pub input_dim: usize,
    pub hidden: usize,
    /// Number of affine layers per perceptron.
    pub depth: usize,
    pub inputs_enabled: bool,
}

impl Default for KoopmanConfig {
    fn default() -> Self {
        Self { state_delays: 3, obs_dim: 15, input_dim: 4, hidden: 40, depth: 4, inputs_enabled: false }
    }
}

impl KoopmanConfig {
    pub fn state_dim(&self) -> usize {
        POSE_DIM * self.state_delays
    }

    pub fn validate(&self) -> Result<(), KoopmanError> {
        if self.state_delays == 0 || self.obs_dim == 0 {
            return Err(KoopmanError::Config("state_delays and obs_dim must be at least 1".into()));
        }
        if self.depth == 0 || (self.depth > 1 && self.hidden == 0) {
            return Err(KoopmanError::Config("depth must be at least 1 and hidden width nonzero".into()));
        }
        Ok(())
    }

    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat(self.hidden).take(self.depth - 1));
        w.push(output);
        w
    }
}

/// State-to-observable map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Encoder {
    Mlp(Mlp),
    Dictionary(Dictionary),
}

/// Observable-to-state map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decoder {
    Mlp(Mlp),
    Linear { recovery: Matrix },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_losses: std::collections::BTreeMap<String, f64>,
    pub dataset_fingerprint: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoopmanModel {
    pub version: u32,
    pub config: KoopmanConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    /// Absent when inputs are disabled.
    pub input_map: Option<Mlp>,
    #[serde(rename = "K")]
    pub k: Matrix,
    #[serde(rename = "K_U")]
    pub k_u: Matrix,
    #[serde(default)]
    pub training: Option<TrainingMeta>,
}

/// Output of a rollout: poses plus the internal observable and input
/// sequences. `observables[0]` is the encoded initial state and
/// `observables[h + 1] = K observables[h] + K_U inputs[h]`.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub poses: Vec<Pose>,
    pub observables: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

/// Batched rollout: one column per sequence.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    /// `horizon` matrices of shape `4 x N`.
    pub poses: Vec<Matrix>,
    /// `horizon + 1` matrices of shape `M x N`.
    pub observables: Vec<Matrix>,
    /// `horizon` matrices of shape `U x N`.
    pub inputs: Vec<Matrix>,
}

/// Stacks a chronological window of poses into a state, most recent first.
pub fn stack_state(window: &[Pose]) -> Vec<f64> {
    window.iter().rev().flat_map(|p| p.to_array()).collect()
}

/// States for every `t >= T_s - 1`: state `i` stacks poses
/// `i + T_s - 1, ..., i`.
pub fn build_states(poses: &[Pose], state_delays: usize) -> Result<Vec<Vec<f64>>, KoopmanError> {
    if state_delays == 0 {
        return Err(KoopmanError::Config("state_delays must be at least 1".into()));
    }
    if poses.len() < state_delays {
        return Err(KoopmanError::TooShort { need: state_delays, got: poses.len() });
    }
    Ok(poses.windows(state_delays).map(stack_state).collect())
}

fn clamp_unit(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        *v = v.clamp(-1.0, 1.0);
    }
}

impl KoopmanModel {
    /// Fresh model: Glorot-uniform perceptrons, `K = 0`, Glorot-uniform `K_U`.
    pub fn new(config: KoopmanConfig, seed: u64) -> Result<Self, KoopmanError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.state_dim();
        let m = config.obs_dim;
        let encoder = Mlp::xavier(&config.widths(n, m), Activation::Linear, &mut rng);
        let decoder = Mlp::xavier(&config.widths(m, n), Activation::Tanh, &mut rng);
        let input_map = config
            .inputs_enabled
            .then(|| Mlp::xavier(&config.widths(n, config.input_dim), Activation::Tanh, &mut rng));
        let k_u = mlp::xavier_matrix(m, config.input_dim, &mut rng);
        Ok(Self {
            version: MODEL_FORMAT_VERSION,
            encoder: Encoder::Mlp(encoder),
            decoder: Decoder::Mlp(decoder),
            input_map,
            k: Matrix::zeros(m, m),
            k_u,
            training: None,
            config,
        })
    }

    /// Linear model over a fixed dictionary, as produced by the baselines.
    pub fn from_dictionary(dictionary: Dictionary, state_delays: usize, k: Matrix) -> Result<Self, KoopmanError> {
        let n = POSE_DIM * state_delays;
        let m = dictionary.len(n);
        if k.shape() != (m, m) {
            return Err(KoopmanError::Shape(format!("K is {:?} but the dictionary has {m} features", k.shape())));
        }
        let config = KoopmanConfig { state_delays, obs_dim: m, input_dim: 0, hidden: 0, depth: 1, inputs_enabled: false };
        Ok(Self {
            version: MODEL_FORMAT_VERSION,
            decoder: Decoder::Linear { recovery: dictionary.recovery(n) },
            encoder: Encoder::Dictionary(dictionary),
            input_map: None,
            k,
            k_u: Matrix::zeros(m, 0),
            training: None,
            config,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim
    }

    pub fn state_delays(&self) -> usize {
        self.config.state_delays
    }

    /// `f_M` on every column of `states`.
    pub fn encode_batch(&self, states: &Matrix) -> Matrix {
        match &self.encoder {
            Encoder::Mlp(m) => m.forward(states),
            Encoder::Dictionary(d) => d.features(states),
        }
    }

    pub fn encode(&self, state: &[f64]) -> Vec<f64> {
        self.encode_batch(&Matrix::column(state)).into_vec()
    }

    /// `f_M^{-1}` on every column, hard-clamped to `[-1, 1]`.
    pub fn decode_batch(&self, g: &Matrix) -> Matrix {
        let mut out = match &self.decoder {
            Decoder::Mlp(m) => m.forward(g),
            Decoder::Linear { recovery } => {
                let mut out = Matrix::zeros(recovery.rows(), g.cols());
                gemm(1.0, recovery, false, g, false, 0.0, &mut out);
                out
            }
        };
        clamp_unit(&mut out);
        out
    }

    pub fn decode(&self, g: &[f64]) -> Vec<f64> {
        self.decode_batch(&Matrix::column(g)).into_vec()
    }

    /// `f_U` on every column; zero when inputs are disabled.
    pub fn input_map_batch(&self, states: &Matrix) -> Matrix {
        match &self.input_map {
            Some(m) => m.forward(states),
            None => Matrix::zeros(self.config.input_dim, states.cols()),
        }
    }

    pub fn input_map(&self, state: &[f64]) -> Vec<f64> {
        self.input_map_batch(&Matrix::column(state)).into_vec()
    }

    fn step_with(k: &Matrix, k_u: &Matrix, g: &Matrix, u: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(k.rows(), g.cols());
        gemm(1.0, k, false, g, false, 0.0, &mut out);
        if k_u.cols() > 0 {
            gemm(1.0, k_u, false, u, false, 1.0, &mut out);
        }
        out
    }

    /// `K g + K_U u` for every column.
    pub fn step_batch(&self, g: &Matrix, u: &Matrix) -> Matrix {
        Self::step_with(&self.k, &self.k_u, g, u)
    }

    pub fn step(&self, g: &[f64], u: &[f64]) -> Vec<f64> {
        self.step_batch(&Matrix::column(g), &Matrix::column(u)).into_vec()
    }

    /// Closed-loop prediction from stacked initial states (`4 T_s x N`).
    ///
    /// Observables evolve linearly and are never re-encoded. Each step
    /// decodes, keeps the first pose block, and shifts it into the state
    /// estimate from which the next input is computed.
    pub fn rollout_batch(
        &self,
        states: &Matrix,
        horizon: usize,
        k_override: Option<&Matrix>,
    ) -> Result<RolloutBatch, KoopmanError> {
        let n = self.config.state_dim();
        if states.rows() != n {
            return Err(KoopmanError::Shape(format!("initial states have {} rows, expected {n}", states.rows())));
        }
        let k = k_override.unwrap_or(&self.k);
        if k.shape() != self.k.shape() {
            return Err(KoopmanError::Shape(format!("operator override is {:?}, expected {:?}", k.shape(), self.k.shape())));
        }
        let mut g = self.encode_batch(states);
        let mut est = states.clone();
        let mut out = RolloutBatch { poses: Vec::with_capacity(horizon), observables: vec![g.clone()], inputs: Vec::new() };
        for _ in 0..horizon {
            let u = self.input_map_batch(&est);
            g = Self::step_with(k, &self.k_u, &g, &u);
            let pose = self.decode_batch(&g).slice_rows(0, POSE_DIM);
            est = Matrix::concat_rows(&[&pose, &est.slice_rows(0, n - POSE_DIM)])?;
            out.poses.push(pose);
            out.observables.push(g.clone());
            out.inputs.push(u);
        }
        Ok(out)
    }

    /// Predicts `horizon` poses following the chronological window
    /// `initial` of length `T_s`. A zero horizon yields an empty rollout.
    pub fn rollout(&self, initial: &[Pose], horizon: usize, k_override: Option<&Matrix>) -> Result<Rollout, KoopmanError> {
        let ts = self.config.state_delays;
        if initial.len() != ts {
            return Err(KoopmanError::Shape(format!("expected {ts} initial poses, got {}", initial.len())));
        }
        let b = self.rollout_batch(&Matrix::column(&stack_state(initial)), horizon, k_override)?;
        Ok(Rollout {
            poses: b.poses.iter().map(|p| Pose::new(p[(0, 0)], p[(1, 0)], p[(2, 0)], p[(3, 0)])).collect(),
            observables: b.observables.into_iter().map(Matrix::into_vec).collect(),
            inputs: b.inputs.into_iter().map(Matrix::into_vec).collect(),
        })
    }

    /// Named trainable tensors. Biases are column matrices.
    pub fn parameters(&self) -> ParameterSet {
        let mut set = ParameterSet::new();
        if let Encoder::Mlp(m) = &self.encoder {
            m.push_params("encoder", &mut set);
        }
        if let Decoder::Mlp(m) = &self.decoder {
            m.push_params("decoder", &mut set);
        }
        if let Some(m) = &self.input_map {
            m.push_params("input_map", &mut set);
        }
        set.insert("K", self.k.clone());
        set.insert("K_U", self.k_u.clone());
        set
    }

    /// Inverse of [`parameters`](Self::parameters).
    pub fn set_parameters(&mut self, set: &ParameterSet) -> Result<(), KoopmanError> {
        let missing = || KoopmanError::Shape("parameter set does not match the model".into());
        let mut next = self.clone();
        if let Encoder::Mlp(m) = &mut next.encoder {
            m.pull_params("encoder", set).ok_or_else(missing)?;
        }
        if let Decoder::Mlp(m) = &mut next.decoder {
            m.pull_params("decoder", set).ok_or_else(missing)?;
        }
        if let Some(m) = &mut next.input_map {
            m.pull_params("input_map", set).ok_or_else(missing)?;
        }
        next.k = set.get("K").ok_or_else(missing)?.clone();
        next.k_u = set.get("K_U").ok_or_else(missing)?.clone();
        next.check()?;
        *self = next;
        Ok(())
    }

    /// Verifies that every tensor agrees with the configuration.
    pub fn check(&self) -> Result<(), KoopmanError> {
        let c = &self.config;
        c.validate()?;
        let (n, m) = (c.state_dim(), c.obs_dim);
        let shape = |what: &str, got: (usize, usize), want: (usize, usize)| -> Result<(), KoopmanError> {
            if got != want {
                return Err(KoopmanError::Shape(format!("{what} is {got:?}, expected {want:?}")));
            }
            Ok(())
        };
        let mlp = |what: &str, p: &Mlp, i: usize, o: usize| -> Result<(), KoopmanError> {
            p.check_shapes().map_err(|e| KoopmanError::Shape(format!("{what}: {e}")))?;
            shape(what, (p.output_dim(), p.input_dim()), (o, i))
        };
        match &self.encoder {
            Encoder::Mlp(p) => mlp("encoder", p, n, m)?,
            Encoder::Dictionary(d) => shape("dictionary", (d.len(n), 1), (m, 1))?,
        }
        match &self.decoder {
            Decoder::Mlp(p) => mlp("decoder", p, m, n)?,
            Decoder::Linear { recovery } => shape("recovery map", recovery.shape(), (n, m))?,
        }
        match (&self.input_map, c.inputs_enabled) {
            (Some(p), true) => mlp("input map", p, n, c.input_dim)?,
            (None, false) => {}
            _ => return Err(KoopmanError::Shape("input map presence disagrees with inputs_enabled".into())),
        }
        shape("K", self.k.shape(), (m, m))?;
        shape("K_U", self.k_u.shape(), (m, c.input_dim))
    }

    pub fn to_json(&self) -> String {
        jsonfmt::to_string(self).expect("model tensors are finite")
    }

    pub fn from_json(text: &str) -> Result<Self, KoopmanError> {
        Self::from_json_at(text, "<memory>")
    }

    fn from_json_at(text: &str, path: &str) -> Result<Self, KoopmanError> {
        let fmt_err = |msg: String| KoopmanError::Format { path: path.into(), msg };
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| fmt_err(e.to_string()))?;
        match raw.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
            Some(v) => return Err(fmt_err(format!("unsupported model version {v}"))),
            None => return Err(fmt_err("missing version field".into())),
        }
        let model: KoopmanModel = serde_json::from_value(raw).map_err(|e| fmt_err(e.to_string()))?;
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), KoopmanError> {
        fs::write(path, self.to_json()).map_err(|source| KoopmanError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, KoopmanError> {
        let text =
            fs::read_to_string(path).map_err(|source| KoopmanError::Io { path: path.display().to_string(), source })?;
        Self::from_json_at(&text, &path.display().to_string())
    }
}

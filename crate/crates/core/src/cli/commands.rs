use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    CliError, EvalArgs, GenArgs, ManipulateArgs, Method, PredictArgs, ReduceArgs, ServeArgs, SpectrumArgs, TrainArgs,
};
use crate::analysis::{self, Edit, Manipulation, Ranking};
use crate::baselines::{self, Dictionary};
use crate::jsonfmt;
use crate::koopman::{KoopmanConfig, KoopmanModel};
use crate::metrics;
use crate::service::{self, ServiceConfig};
use crate::training::{self, LossWeights, TrainConfig};
use crate::trajgen::{load_dataset, make_dataset, save_dataset, Dataset, GeneratorConfig, Pose, Scenario, Split, SplitSizes};

/// Prints the fully resolved configuration of a command to stderr.
fn banner<T: Serialize>(command: &str, effective: &T) {
    eprintln!("# kidd {command} {}", serde_json::to_string(effective).expect("config serializes"));
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{what} {} does not exist", path.display())))
    }
}

fn prepare_output(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
        }
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    jsonfmt::to_string(v).expect("value serializes")
}

fn dataset_default(data_dir: &Path, scenario: Scenario) -> PathBuf {
    service::dataset_path(data_dir, scenario)
}

fn model_default(data_dir: &Path, scenario: Scenario) -> PathBuf {
    service::model_path(&data_dir.join("models"), scenario.name())
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    require_file(path, "dataset")?;
    Ok(load_dataset(path)?)
}

fn load_model(path: &Path) -> Result<KoopmanModel, CliError> {
    require_file(path, "model")?;
    Ok(KoopmanModel::load(path)?)
}

#[derive(Serialize)]
struct GenEffective {
    scenario: Scenario,
    seed: u64,
    train: usize,
    val: usize,
    test: usize,
    out: PathBuf,
}

pub fn gen(a: GenArgs, data_dir: &Path) -> Result<(), CliError> {
    let scenario = a.scenario.unwrap_or(Scenario::Circular);
    let sizes = SplitSizes::default();
    let eff = GenEffective {
        scenario,
        seed: a.seed.unwrap_or(0),
        train: a.train.unwrap_or(sizes.train),
        val: a.val.unwrap_or(sizes.val),
        test: a.test.unwrap_or(sizes.test),
        out: a.out.unwrap_or_else(|| dataset_default(data_dir, scenario)),
    };
    banner("gen", &eff);
    prepare_output(&eff.out)?;
    let data = make_dataset(scenario, SplitSizes::new(eff.train, eff.val, eff.test), eff.seed, &GeneratorConfig::default())?;
    save_dataset(&data, &eff.out)?;
    println!("wrote {} trajectories to {}", eff.train + eff.val + eff.test, eff.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainEffective {
    scenario: Scenario,
    dataset: PathBuf,
    method: Method,
    out: PathBuf,
    config: TrainConfig,
}

pub fn train(a: TrainArgs, data_dir: &Path) -> Result<(), CliError> {
    let scenario = a.scenario.unwrap_or(Scenario::Circular);
    let d = TrainConfig::default();
    let dm = KoopmanConfig::default();
    let dw = LossWeights::default();
    let out = a.out.unwrap_or_else(|| model_default(data_dir, scenario));
    let checkpoint_every = a.checkpoint_every.unwrap_or(0);
    let config = TrainConfig {
        model: KoopmanConfig {
            state_delays: a.ts.unwrap_or(dm.state_delays),
            obs_dim: a.obs_dim.unwrap_or(dm.obs_dim),
            input_dim: a.input_dim.unwrap_or(dm.input_dim),
            hidden: a.hidden.unwrap_or(dm.hidden),
            depth: a.depth.unwrap_or(dm.depth),
            inputs_enabled: a.inputs.unwrap_or(scenario == Scenario::Collision),
        },
        epochs: a.epochs.unwrap_or(d.epochs),
        lr: a.lr.unwrap_or(d.lr),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        weights: LossWeights {
            ae: a.lambda_ae.unwrap_or(dw.ae),
            fit: a.lambda_fit.unwrap_or(dw.fit),
            input: a.lambda_input.unwrap_or(dw.input),
            rank: a.lambda_rank.unwrap_or(dw.rank),
        },
        seed: a.seed.unwrap_or(0),
        dmd_warm_start: a.warm_start.unwrap_or(false),
        checkpoint_every,
        checkpoint_dir: (checkpoint_every > 0).then(|| out.with_extension("checkpoints")),
        max_train: a.max_train.unwrap_or(0),
        ..d
    };
    let eff = TrainEffective {
        scenario,
        dataset: a.dataset.unwrap_or_else(|| dataset_default(data_dir, scenario)),
        method: a.method.unwrap_or(Method::Koopman),
        out,
        config,
    };
    banner("train", &eff);
    eff.config.validate()?;
    let data = load_data(&eff.dataset)?;
    prepare_output(&eff.out)?;
    let ts = eff.config.model.state_delays;
    let model = match eff.method {
        Method::Dmd => baselines::dmd_model(&data.train, ts)?,
        Method::Edmd => baselines::edmd_fit(&data.train, ts, &Dictionary::default())?.to_model()?,
        Method::Koopman => {
            let (model, report) = training::train_with(&data, &eff.config, |e| {
                eprintln!(
                    "epoch {:4}  loss {:.5e}  val_mse {:.5e}  lr {:.2e}  {:.2}s",
                    e.epoch, e.train.total, e.val_mse, e.lr, e.seconds
                )
            })?;
            write_text(&eff.out.with_extension("report.json"), &to_json(&report))?;
            model
        }
    };
    model.save(&eff.out)?;
    println!("wrote model to {}", eff.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalEffective {
    model: PathBuf,
    dataset: PathBuf,
    split: Split,
    top_k: Option<usize>,
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs, data_dir: &Path) -> Result<(), CliError> {
    let scenario = a.scenario.unwrap_or(Scenario::Circular);
    let eff = EvalEffective {
        model: a.model.unwrap_or_else(|| model_default(data_dir, scenario)),
        dataset: a.dataset.unwrap_or_else(|| dataset_default(data_dir, scenario)),
        split: a.split.unwrap_or(Split::Test),
        top_k: a.top_k,
        out: a.out,
    };
    banner("eval", &eff);
    let model = load_model(&eff.model)?;
    let data = load_data(&eff.dataset)?;
    let k = eff.top_k.map(|k| analysis::reduce_model(&model.k, k, &Ranking::Magnitude)).transpose()?;
    let report = metrics::evaluate(&model, data.split(eff.split), k.as_ref().map(|r| &r.k))?;
    print!("{}", report.to_text());
    if let Some(out) = &eff.out {
        prepare_output(out)?;
        write_text(out, &to_json(&report))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictEffective {
    model: PathBuf,
    dataset: PathBuf,
    split: Split,
    index: usize,
    horizon: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Prediction {
    index: usize,
    seed: u64,
    horizon: usize,
    conditioning: Vec<Pose>,
    predicted: Vec<Pose>,
    truth: Vec<Pose>,
    visible: Vec<bool>,
    per_step_mse: Vec<Option<f64>>,
}

pub fn predict(a: PredictArgs, data_dir: &Path) -> Result<(), CliError> {
    let scenario = a.scenario.unwrap_or(Scenario::Circular);
    let eff = PredictEffective {
        model: a.model.unwrap_or_else(|| model_default(data_dir, scenario)),
        dataset: a.dataset.unwrap_or_else(|| dataset_default(data_dir, scenario)),
        split: a.split.unwrap_or(Split::Test),
        index: a.index.unwrap_or(0),
        horizon: a.horizon,
        out: a.out,
    };
    banner("predict", &eff);
    let model = load_model(&eff.model)?;
    let data = load_data(&eff.dataset)?;
    let split = data.split(eff.split);
    let t = split
        .get(eff.index)
        .ok_or_else(|| CliError::Usage(format!("index {} out of range ({} trajectories)", eff.index, split.len())))?;
    let (k, ts) = (t.input_len, model.state_delays());
    if k < ts {
        return Err(CliError::Usage(format!("{k} conditioning frames but the model needs {ts}")));
    }
    let horizon = eff.horizon.unwrap_or(t.len() - k);
    if horizon == 0 || horizon > service::MAX_HORIZON {
        return Err(CliError::Usage(format!("horizon must lie in 1..={}", service::MAX_HORIZON)));
    }
    let out = model.rollout(&t.poses[k - ts..k], horizon, None)?;
    let end = (k + horizon).min(t.len());
    let truth = t.poses[k..end].to_vec();
    let visible = t.visible[k..end].to_vec();
    let per_step_mse = metrics::pose_mse(&out.poses[..truth.len()], &truth, &visible).per_step;
    let p = Prediction {
        index: eff.index,
        seed: t.seed,
        horizon,
        conditioning: t.poses[..k].to_vec(),
        predicted: out.poses,
        truth,
        visible,
        per_step_mse,
    };
    emit(&to_json(&p), eff.out.as_deref())
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            prepare_output(path)?;
            write_text(path, text)?;
            println!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct SpectrumEffective {
    model: PathBuf,
    out: Option<PathBuf>,
}

pub fn spectrum(a: SpectrumArgs, data_dir: &Path) -> Result<(), CliError> {
    let scenario = a.scenario.unwrap_or(Scenario::Circular);
    let eff = SpectrumEffective { model: a.model.unwrap_or_else(|| model_default(data_dir, scenario)), out: a.out };
    banner("spectrum", &eff);
    let model = load_model(&eff.model)?;
    let s = analysis::spectrum(&model.k)?;
    if !s.trusted() {
        log::warn!("eigenvector basis is ill-conditioned (condition number {:e})", s.condition_number);
    }
    emit(&to_json(&s.export()), eff.out.as_deref())
}

fn derived_path(model: &Path, suffix: &str) -> PathBuf {
    let stem = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    model.with_file_name(format!("{stem}-{suffix}.json"))
}

#[derive(Serialize)]
struct ReduceEffective {
    model: PathBuf,
    top_k: usize,
    ranking: &'static str,
    out: PathBuf,
}

pub fn reduce(a: ReduceArgs, data_dir: &Path) -> Result<(), CliError> {
    let scenario = a.scenario.unwrap_or(Scenario::Circular);
    let model_path = a.model.unwrap_or_else(|| model_default(data_dir, scenario));
    let top_k = a.top_k.ok_or_else(|| CliError::Usage("--top-k is required".into()))?;
    let eff = ReduceEffective {
        out: a.out.unwrap_or_else(|| derived_path(&model_path, &format!("top{top_k}"))),
        model: model_path,
        top_k,
        ranking: "magnitude",
    };
    banner("reduce", &eff);
    let mut model = load_model(&eff.model)?;
    let r = analysis::reduce_model(&model.k, top_k, &Ranking::Magnitude)?;
    if r.effective_k != top_k {
        eprintln!("kept {} eigenvalues to avoid splitting a conjugate pair", r.effective_k);
    }
    if !r.trusted {
        log::warn!("reduction used a pseudo-inverse eigenbasis (condition number {:e})", r.condition_number);
    }
    model.k = r.k;
    prepare_output(&eff.out)?;
    model.save(&eff.out)?;
    println!("wrote {}", eff.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ManipulateEffective {
    model: PathBuf,
    pair: usize,
    radius: Option<Edit>,
    angle: Option<Edit>,
    out: PathBuf,
}

fn pick(name: &str, set: Option<f64>, scale: Option<f64>) -> Result<Option<Edit>, CliError> {
    match (set, scale) {
        (Some(_), Some(_)) => Err(CliError::Usage(format!("give --{name} or --{name}-scale, not both"))),
        (Some(v), None) => Ok(Some(Edit::Set(v))),
        (None, Some(c)) => Ok(Some(Edit::Scale(c))),
        (None, None) => Ok(None),
    }
}

pub fn manipulate(a: ManipulateArgs, data_dir: &Path) -> Result<(), CliError> {
    let scenario = a.scenario.unwrap_or(Scenario::Circular);
    let model_path = a.model.unwrap_or_else(|| model_default(data_dir, scenario));
    let radius = pick("radius", a.radius, a.radius_scale)?;
    let angle = pick("angle", a.angle, a.angle_scale)?;
    let mut model = load_model(&model_path)?;
    let pair = match a.pair {
        Some(p) => p,
        None => analysis::spectrum(&model.k)?
            .dominant_pair()
            .ok_or_else(|| CliError::Usage("operator has no conjugate pair; pass --pair".into()))?,
    };
    let eff = ManipulateEffective {
        out: a.out.unwrap_or_else(|| derived_path(&model_path, "edited")),
        model: model_path,
        pair,
        radius,
        angle,
    };
    banner("manipulate", &eff);
    let r = analysis::manipulate(&model.k, &Manipulation { pair, radius, angle })?;
    let st = analysis::stability(&r.k)?;
    eprintln!("spectral radius {:.6} ({})", st.spectral_radius, if st.stable { "stable" } else { "unstable" });
    model.k = r.k;
    prepare_output(&eff.out)?;
    model.save(&eff.out)?;
    println!("wrote {}", eff.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ServeEffective {
    model_dir: PathBuf,
    data_dir: PathBuf,
    host: String,
    port: u16,
    static_dir: Option<PathBuf>,
    snapshot_dir: Option<PathBuf>,
    cors_origin: Option<String>,
}

pub fn serve(a: ServeArgs, data_dir: &Path) -> Result<(), CliError> {
    let eff = ServeEffective {
        model_dir: a.model_dir.unwrap_or_else(|| data_dir.join("models")),
        data_dir: data_dir.to_path_buf(),
        host: a.host.unwrap_or_else(|| "127.0.0.1".into()),
        port: a.port.unwrap_or(8080),
        static_dir: a.static_dir,
        snapshot_dir: a.snapshot_dir,
        cors_origin: a.cors_origin,
    };
    banner("serve", &eff);
    if !eff.model_dir.is_dir() {
        return Err(CliError::Io(format!("model directory {} does not exist", eff.model_dir.display())));
    }
    let addr: SocketAddr = format!("{}:{}", eff.host, eff.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad listen address: {e}")))?;
    let cfg = ServiceConfig {
        model_dir: eff.model_dir,
        data_dir: eff.data_dir,
        static_dir: eff.static_dir,
        snapshot_dir: eff.snapshot_dir,
        cors_origin: eff.cors_origin,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(service::serve(cfg, addr)).map_err(|e| CliError::Io(format!("{addr}: {e}")))
}

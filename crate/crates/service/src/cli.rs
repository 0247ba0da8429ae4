//! `gazeauth` subcommands. Every flag can also be set through a
//! `GAZEAUTH_*` environment variable.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gazeauth_core::auth::{Aggregation, AuthError, DecisionPolicy, DEFAULT_THRESHOLD};
use gazeauth_core::corpus::{Corpus, CorpusError};
use gazeauth_core::eval::{compute_eer_at, end_to_end_eval, EvalError, EvalReport, ScoreMatrix};
use gazeauth_core::net::{read_checkpoint, train, write_checkpoint, CheckpointError, NetworkConfig, TrainConfig, TrainError};
use gazeauth_core::signal::{add_noise, conform_rate, normalize, to_velocity, DegradationConfig, SignalError};
use gazeauth_core::stimulus::ScheduleParams;
use gazeauth_core::store::StoreError;
use gazeauth_core::synth::{make_population, SynthError};
use gazeauth_core::{AuthPipeline, Model, Recording, Store};
use serde::Serialize;
use thiserror::Error;

use crate::api::{self, AppState};
use crate::client::{Client, ClientError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("could not write output: {0}")]
    Output(#[from] std::io::Error),
}

#[derive(Debug, Parser)]
#[command(name = "gazeauth", version, about = "Eye-movement enrollment and verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Enroll a recording with a running service.
    Enroll(AttemptArgs),
    /// Verify a recording against a running service.
    Verify(AttemptArgs),
    /// Bring a recording to a lower rate, optionally as noisy velocity.
    Degrade(DegradeArgs),
    /// Write a synthetic corpus and its manifest.
    Synth(SynthArgs),
    /// Train a model on a corpus manifest.
    Train(TrainArgs),
    /// Compute FAR, FRR and EER for a score table or a trained model.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "GAZEAUTH_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "GAZEAUTH_STORE")]
    pub store: PathBuf,
    #[arg(long, env = "GAZEAUTH_THRESHOLD", default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, env = "GAZEAUTH_AGGREGATION", value_enum, default_value_t = AggregationArg::Max)]
    pub aggregation: AggregationArg,
    #[arg(long, env = "GAZEAUTH_HOST", default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, env = "GAZEAUTH_PORT", default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Max,
    Mean,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Max => Aggregation::Max,
            AggregationArg::Mean => Aggregation::Mean,
        }
    }
}

#[derive(Debug, Args)]
pub struct AttemptArgs {
    #[arg(long, env = "GAZEAUTH_NAME")]
    pub name: String,
    #[arg(long, env = "GAZEAUTH_RECORDING")]
    pub recording: PathBuf,
    #[arg(long, env = "GAZEAUTH_SERVER", default_value = "http://127.0.0.1:8080")]
    pub server: String,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long, env = "GAZEAUTH_INPUT")]
    pub input: PathBuf,
    #[arg(long, env = "GAZEAUTH_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "GAZEAUTH_RATE", default_value_t = 125.0)]
    pub rate: f64,
    /// Write a velocity sequence instead of a recording.
    #[arg(long, env = "GAZEAUTH_VELOCITY")]
    pub velocity: bool,
    /// Noise in z-score units; needs `--model` for the normalization.
    #[arg(long, env = "GAZEAUTH_NOISE_STD", default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long, env = "GAZEAUTH_NOISE_MEAN", default_value_t = 0.0)]
    pub noise_mean: f64,
    #[arg(long, env = "GAZEAUTH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint whose frozen statistics normalize the velocity output.
    #[arg(long, env = "GAZEAUTH_MODEL")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "GAZEAUTH_USERS", default_value_t = 20)]
    pub users: usize,
    #[arg(long, env = "GAZEAUTH_SESSIONS", default_value_t = 4)]
    pub sessions: usize,
    #[arg(long, env = "GAZEAUTH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "GAZEAUTH_RATE", default_value_t = 1000.0)]
    pub rate: f64,
    #[arg(long, env = "GAZEAUTH_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "GAZEAUTH_MANIFEST")]
    pub manifest: PathBuf,
    #[arg(long, env = "GAZEAUTH_OUT")]
    pub out: PathBuf,
    /// `default`, `compact`, or a JSON network configuration file.
    #[arg(long, env = "GAZEAUTH_CONFIG", default_value = "default")]
    pub config: String,
    /// JSON training configuration; defaults apply when omitted.
    #[arg(long, env = "GAZEAUTH_TRAIN_CONFIG")]
    pub train_config: Option<PathBuf>,
    #[arg(long, env = "GAZEAUTH_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, env = "GAZEAUTH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Where to write the per-epoch log as JSON.
    #[arg(long, env = "GAZEAUTH_LOG")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Tab-separated score table with enroll rows and verify columns.
    #[arg(long, env = "GAZEAUTH_MATRIX", conflicts_with = "manifest", required_unless_present = "manifest")]
    pub matrix: Option<PathBuf>,
    #[arg(long, env = "GAZEAUTH_MANIFEST", requires = "model")]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "GAZEAUTH_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, env = "GAZEAUTH_ENROLL_SESSION", default_value_t = 1)]
    pub enroll_session: u32,
    #[arg(long, env = "GAZEAUTH_VERIFY_SESSION", default_value_t = 2)]
    pub verify_session: u32,
    #[arg(long, env = "GAZEAUTH_THRESHOLD", default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    writeln!(out, "{}", serde_json::to_string_pretty(value).expect("output serializes"))?;
    Ok(())
}

pub fn read_recording(path: &Path) -> Result<Recording, CliError> {
    Ok(Recording::from_json(&read_text(path)?)?)
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    Ok(read_checkpoint(path)?)
}

/// Runs one subcommand, writing its report to `out`. `serve` only returns
/// on error.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Serve(a) => serve(a, out),
        Command::Enroll(a) => {
            let resp = Client::new(a.server).enroll(&a.name, &read_recording(&a.recording)?)?;
            print_json(out, &resp)
        }
        Command::Verify(a) => {
            let resp = Client::new(a.server).verify(&a.name, &read_recording(&a.recording)?)?;
            print_json(out, &resp)
        }
        Command::Degrade(a) => degrade(a, out),
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Evaluate(a) => evaluate(a, out),
    }
}

fn serve(a: ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let policy = DecisionPolicy::new(a.threshold, a.aggregation.into())?;
    let pipeline = AuthPipeline::new(load_model(&a.model)?);
    let store = Store::open(&a.store)?;
    if let Some(id) = store.model_id() {
        if id != pipeline.model_id() {
            return Err(AuthError::ModelMismatch {
                expected: id.clone(),
                found: pipeline.model_id().clone(),
            }
            .into());
        }
    }
    let model_id = pipeline.model_id().clone();
    let addr = SocketAddr::new(a.host, a.port);
    let state = AppState::new(pipeline, store, policy);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        writeln!(out, "serving model {} on http://{}", model_id, listener.local_addr()?)?;
        out.flush()?;
        api::serve_on(listener, state).await
    })?;
    Ok(())
}

fn degrade(a: DegradeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rec = conform_rate(&read_recording(&a.input)?, a.rate)?;
    let noisy = a.noise_std != 0.0 || a.noise_mean != 0.0;
    if !a.velocity && !noisy {
        write_text(&a.out, &rec.to_json())?;
        writeln!(out, "wrote {} samples at {} Hz to {}", rec.len(), rec.rate_hz(), a.out.display())?;
        return Ok(());
    }
    let mut vel = to_velocity(&rec)?;
    match &a.model {
        Some(path) => vel = normalize(&vel, &load_model(path)?.norm_stats().cast()),
        None if noisy => {
            return Err(CliError::Usage(
                "noise is in z-score units; pass --model to normalize first".into(),
            ))
        }
        None => {}
    }
    if noisy {
        let cfg = DegradationConfig {
            target_rate_hz: a.rate,
            noise_mean: a.noise_mean,
            noise_std: a.noise_std,
            seed: a.seed,
        };
        vel = add_noise(&vel, &cfg)?;
    }
    write_text(&a.out, &serde_json::to_string(&vel).expect("velocity serializes"))?;
    writeln!(out, "wrote {} velocity samples at {} Hz to {}", vel.len(), vel.rate_hz, a.out.display())?;
    Ok(())
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = make_population::<f64>(a.users, a.sessions, a.seed, &ScheduleParams::default(), a.rate)?;
    let manifest = corpus.write_to_dir(&a.out)?;
    writeln!(
        out,
        "wrote {} recordings ({} users x {} sessions) to {}",
        corpus.entries.len(),
        a.users,
        a.sessions,
        manifest.display()
    )?;
    Ok(())
}

fn network_config(name: &str) -> Result<NetworkConfig, CliError> {
    let cfg = match name {
        "default" => NetworkConfig::default(),
        "compact" => NetworkConfig::compact(),
        path => read_json(Path::new(path))?,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let net_cfg = network_config(&a.config)?;
    let mut cfg: TrainConfig = match &a.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let corpus = Corpus::<f64>::load_manifest(&a.manifest)?;
    let (model, log) = train::<f32>(&corpus, &net_cfg, &cfg, a.seed)?;
    write_checkpoint(&model, &a.out)?;
    if let Some(p) = &a.log {
        write_text(p, &serde_json::to_string_pretty(&log).expect("log serializes"))?;
    }
    writeln!(
        out,
        "trained {} epochs on {} users ({} steps, {} skipped batches)",
        log.epochs.len(),
        log.train_users.len(),
        log.steps,
        log.skipped_batches
    )?;
    if let (Some(first), Some(last)) = (log.first_train_loss(), log.last_train_loss()) {
        writeln!(out, "train loss {first:.4} -> {last:.4}")?;
    }
    writeln!(out, "model {} written to {}", model.model_id(), a.out.display())?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluateOutput<'a> {
    report: &'a EvalReport,
    matrix: &'a ScoreMatrix,
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let matrix = match (&a.matrix, &a.manifest, &a.model) {
        (Some(m), _, _) => ScoreMatrix::parse(&read_text(m)?)?,
        (None, Some(manifest), Some(model)) => {
            let corpus = Corpus::<f64>::load_manifest(manifest)?;
            let pipeline = AuthPipeline::new(load_model(model)?);
            end_to_end_eval(&corpus, &pipeline, a.enroll_session, a.verify_session)?.1
        }
        _ => return Err(CliError::Usage("pass --matrix, or --manifest with --model".into())),
    };
    let report = compute_eer_at(&matrix, a.threshold)?;
    write!(out, "{}", matrix.to_table(4, Some(a.threshold)))?;
    writeln!(out)?;
    writeln!(
        out,
        "EER {:.4} ({}) at threshold {} [{:?}]",
        report.eer, report.eer_fraction, report.eer_threshold, report.convention
    )?;
    let c = report.at.counts;
    writeln!(
        out,
        "at {}: FAR {}/{} = {:.4}, FRR {}/{} = {:.4}",
        report.at.threshold, c.false_accepts, c.impostors, report.at.far, c.false_rejects, c.genuines, report.at.frr
    )?;
    print_json(
        out,
        &EvaluateOutput {
            report: &report,
            matrix: &matrix,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn evaluate_needs_a_source() {
        assert!(Cli::try_parse_from(["gazeauth", "evaluate"]).is_err());
        assert!(Cli::try_parse_from(["gazeauth", "evaluate", "--manifest", "m.json"]).is_err());
        assert!(Cli::try_parse_from(["gazeauth", "evaluate", "--matrix", "a", "--manifest", "b", "--model", "c"]).is_err());
        assert!(Cli::try_parse_from(["gazeauth", "evaluate", "--matrix", "a"]).is_ok());
    }

    #[test]
    fn serve_defaults() {
        let cli = Cli::try_parse_from(["gazeauth", "serve", "--model", "m", "--store", "s"]).unwrap();
        let Command::Serve(a) = cli.command else { panic!() };
        assert_eq!(a.threshold, 0.8);
        assert_eq!(a.port, 8080);
        assert_eq!(a.aggregation, AggregationArg::Max);
    }

    #[test]
    fn network_config_names() {
        assert_eq!(network_config("compact").unwrap(), NetworkConfig::compact());
        assert!(matches!(network_config("/no/such/file.json"), Err(CliError::Io { .. })));
    }
}

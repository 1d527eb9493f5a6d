//! Command-line entry points. Every JSON document printed here is
//! canonical: sorted keys, floats rounded to [`DECIMALS`] places.
//!
//! Exit codes: 0 ok, 1 domain failure, 2 usage or configuration error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::agent::Agent;
use crate::canon::to_canonical_string;
use crate::config::{AgentSettings, ConfigError, OrchestratorSettings, RawConfig, RegistryConfig};
use crate::evalstore::variant_label;
use crate::image::{decode_image, encode_ppm, DecodeOptions, DecoderRegistry};
use crate::manifest::{
    parse_manifest, validate_manifest, DctMethod, ManifestError, ModelManifest, OrderPolicy, ValidationReport,
};
use crate::orchestrator::{load_dataset, HttpDispatcher, Orchestrator, OrchestratorConfig};
use crate::pipeline::{normalize_and_cast, NormalizationParams, PipelineOverrides};
use crate::postprocess::{AccuracyReport, Prediction};
use crate::predictor::{
    anchor_sources, load_model, run_job, BackendRegistry, InputItem, InputOutcome, JobOptions, Platform,
    PredictorError, Runtime,
};
use crate::registry::{AgentRecord, HardwareSpec, NamedVersion, Registry, RegistryClient, RegistryError, SystemClock};
use crate::server;
use crate::synth;
use crate::tracing::{TraceLevel, TraceSpan};

/// Decimal places of floats in printed JSON.
pub const DECIMALS: i32 = 6;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl From<PredictorError> for CliError {
    fn from(e: PredictorError) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::Failure(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "evalscope", version, about = "Manifest-driven, reproducible model evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Manifest utilities.
    Manifest {
        #[command(subcommand)]
        command: ManifestCommand,
    },
    /// Evaluates a model locally with an in-process agent.
    Evaluate(EvaluateArgs),
    /// Runs a long-lived server process.
    Serve {
        role: Role,
        #[arg(long)]
        config: PathBuf,
    },
    /// Pre-processing pitfall reproductions.
    Pitfall {
        #[command(subcommand)]
        command: PitfallCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum ManifestCommand {
    /// Prints the validation report; exits 1 when it has errors.
    Validate { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum PitfallCommand {
    /// Prints baseline and pitfall outputs side by side.
    Demo {
        pitfall: Pitfall,
        /// Manifest to use instead of the built-in reference classifier.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Role {
    Registry,
    Orchestrator,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pitfall {
    ColorLayout,
    DataLayout,
    Crop,
    NormalizationOrder,
    Decode,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Input image; repeatable.
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    /// Directory of images with an optional `ground_truth.txt`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Pipeline override `key=value`; repeatable.
    #[arg(long = "override")]
    pub overrides: Vec<String>,
    #[arg(long, default_value = "none")]
    pub trace_level: TraceLevel,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Backend implementing the manifest's framework.
    #[arg(long, default_value = "reference_linear")]
    pub backend: String,
    /// Asset cache; a fresh temporary directory when omitted.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

/// What `evaluate` prints. Host-specific facts (container, session ids)
/// are left out so equal inputs print equal bytes on any machine.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateReport {
    pub model: String,
    pub model_version: String,
    pub framework: String,
    pub backend: String,
    pub variant: String,
    pub environment: BTreeMap<String, String>,
    pub outputs: Vec<InputOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<AccuracyReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceSpan>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match cli.command {
        Command::Manifest {
            command: ManifestCommand::Validate { file },
        } => validate_cmd(&file, out),
        Command::Evaluate(args) => {
            let report = evaluate(&args)?;
            print_json(out, &report)?;
            Ok(EXIT_OK)
        }
        Command::Serve { role, config } => {
            let raw = RawConfig::load(&config)?;
            match role {
                Role::Registry => serve_registry(RegistryConfig::from_raw(&raw)?, out),
                Role::Orchestrator => serve_orchestrator(OrchestratorSettings::from_raw(&raw)?, out),
                Role::Agent => serve_agent(AgentSettings::from_raw(&raw)?, out),
            }
        }
        Command::Pitfall {
            command: PitfallCommand::Demo { pitfall, manifest },
        } => {
            let demo = pitfall_demo(pitfall, manifest.as_deref())?;
            print_json(out, &demo)?;
            Ok(EXIT_OK)
        }
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    writeln!(out, "{}", to_canonical_string(value, Some(DECIMALS))).map_err(|e| CliError::Failure(format!("stdout: {e}")))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn validate_cmd(file: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let text = read_file(file)?;
    let report = match parse_manifest(&text) {
        Ok(m) => validate_manifest(&m),
        Err(e) => parse_failure_report(&e),
    };
    print_json(out, &report)?;
    Ok(if report.has_errors() { EXIT_FAILURE } else { EXIT_OK })
}

fn parse_failure_report(e: &ManifestError) -> ValidationReport {
    let path = match e {
        ManifestError::Schema { path, .. } | ManifestError::Unsupported { path, .. } => path.clone(),
        _ => String::new(),
    };
    ValidationReport::single_error(path, e.to_string())
}

/// Reads, validates and anchors a manifest file.
pub fn load_manifest_file(path: &Path) -> Result<ModelManifest, CliError> {
    let text = read_file(path)?;
    let mut m = parse_manifest(&text)?;
    let report = validate_manifest(&m);
    if report.has_errors() {
        return Err(CliError::Failure(format!("invalid manifest {}: {}", path.display(), report.to_json())));
    }
    anchor_sources(&mut m, path.parent().unwrap_or(Path::new(".")));
    Ok(m)
}

fn temp_dir(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("evalscope-{tag}-{}", uuid::Uuid::new_v4().simple()))
}

/// Removes a directory when dropped.
struct TempDir(PathBuf);

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn local_runtime(framework: &str, backend: &str, cache_dir: Option<&Path>) -> Result<(Runtime, Option<TempDir>), CliError> {
    let kind = BackendRegistry::backend_by_kind(backend).ok_or_else(|| CliError::Usage(format!("unknown backend `{backend}`")))?;
    let mut backends = BackendRegistry::new();
    backends.register(framework, kind);
    let (root, guard) = match cache_dir {
        Some(d) => (d.to_path_buf(), None),
        None => {
            let d = temp_dir("cache");
            (d.clone(), Some(TempDir(d)))
        }
    };
    Ok((Runtime::new(backends, root), guard))
}

fn read_inputs(args: &EvaluateArgs) -> Result<Vec<InputItem>, CliError> {
    let mut items = Vec::new();
    for p in &args.inputs {
        let data = std::fs::read(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        items.push(InputItem { name, data, label: None });
    }
    if let Some(dir) = &args.dataset {
        items.extend(load_dataset(dir).map_err(|e| CliError::Usage(format!("dataset {}: {e}", dir.display())))?);
    }
    if items.is_empty() {
        return Err(CliError::Usage("give at least one --input or a --dataset".into()));
    }
    Ok(items)
}

/// Runs a local evaluation and returns the printable report.
pub fn evaluate(args: &EvaluateArgs) -> Result<EvaluateReport, CliError> {
    let manifest = load_manifest_file(&args.manifest)?;
    let overrides = PipelineOverrides::parse(args.overrides.iter().map(String::as_str))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let inputs = read_inputs(args)?;
    let (rt, _guard) = local_runtime(&manifest.framework.name, &args.backend, args.cache_dir.as_deref())?;
    let opts = JobOptions {
        top_k: args.top_k,
        trace_level: args.trace_level,
        overrides,
        labels: None,
    };
    run_report(&manifest, &rt, &inputs, &opts)
}

fn run_report(manifest: &ModelManifest, rt: &Runtime, inputs: &[InputItem], opts: &JobOptions) -> Result<EvaluateReport, CliError> {
    let session = load_model(manifest, rt)?;
    let out = run_job(&session, rt, inputs, opts)?;
    Ok(EvaluateReport {
        model: out.model,
        model_version: out.model_version,
        framework: out.framework,
        backend: out.backend,
        variant: variant_label(&opts.overrides),
        environment: out.environment,
        outputs: out.outputs,
        metrics: out.metrics,
        trace: out.trace,
    })
}

// ---------------------------------------------------------------------------
// Pitfall demos

const REFERENCE_MANIFEST: &str = include_str!("../fixtures/reference/color_net.yml");
const REFERENCE_WEIGHTS: &str = include_str!("../fixtures/reference/color_reference.json");
const REFERENCE_LABELS: &str = include_str!("../fixtures/reference/labels.txt");
const GRADIENT_JPEG: &[u8] = include_bytes!("../fixtures/images/gradient.jpg");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub variant: String,
    pub top1: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<AccuracyReport>,
    pub predictions: BTreeMap<String, Vec<Prediction>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PitfallDemo {
    pub pitfall: String,
    pub overrides: PipelineOverrides,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pitfall_run: Option<RunSummary>,
    pub difference: serde_json::Value,
}

struct DemoModel {
    manifest: ModelManifest,
    runtime: Runtime,
    _dir: TempDir,
}

impl DemoModel {
    fn open(manifest: Option<&Path>) -> Result<Self, CliError> {
        let dir = temp_dir("demo");
        let io = |e: std::io::Error| CliError::Failure(format!("demo workspace: {e}"));
        std::fs::create_dir_all(&dir).map_err(io)?;
        let guard = TempDir(dir.clone());
        let manifest = match manifest {
            Some(p) => load_manifest_file(p)?,
            None => {
                std::fs::write(dir.join("color_reference.json"), REFERENCE_WEIGHTS).map_err(io)?;
                std::fs::write(dir.join("labels.txt"), REFERENCE_LABELS).map_err(io)?;
                let mut m = parse_manifest(REFERENCE_MANIFEST)?;
                anchor_sources(&mut m, &dir);
                m
            }
        };
        let (runtime, _) = local_runtime(&manifest.framework.name, "reference_linear", Some(&dir.join("cache")))?;
        Ok(Self {
            manifest,
            runtime,
            _dir: guard,
        })
    }

    fn run(&self, inputs: &[InputItem], overrides: &PipelineOverrides) -> Result<RunSummary, CliError> {
        let opts = JobOptions {
            top_k: 4,
            overrides: overrides.clone(),
            ..JobOptions::default()
        };
        let r = run_report(&self.manifest, &self.runtime, inputs, &opts)?;
        Ok(RunSummary {
            variant: r.variant,
            top1: r
                .outputs
                .iter()
                .map(|o| o.predictions.first().map(|p| p.label.clone()).unwrap_or_default())
                .collect(),
            metrics: r.metrics,
            predictions: r.outputs.into_iter().map(|o| (o.name, o.predictions)).collect(),
        })
    }
}

fn ppm_input(name: &str, img: &crate::image::ImageBuffer, label: Option<usize>) -> InputItem {
    InputItem {
        name: name.to_string(),
        data: encode_ppm(img),
        label,
    }
}

fn paired(
    name: &str,
    model: &DemoModel,
    inputs: &[InputItem],
    overrides: PipelineOverrides,
) -> Result<PitfallDemo, CliError> {
    let baseline = model.run(inputs, &PipelineOverrides::default())?;
    let variant = model.run(inputs, &overrides)?;
    let changed: Vec<&String> = inputs
        .iter()
        .zip(baseline.top1.iter().zip(&variant.top1))
        .filter(|(_, (a, b))| a != b)
        .map(|(i, _)| &i.name)
        .collect();
    let difference = serde_json::json!({
        "top1_pairs": baseline.top1.iter().zip(&variant.top1).map(|(a, b)| [a, b]).collect::<Vec<_>>(),
        "top1_changed": changed.len(),
        "changed_inputs": changed,
        "top1_accuracy": baseline.metrics.as_ref().zip(variant.metrics.as_ref()).map(|(a, b)| [a.top1, b.top1]),
    });
    Ok(PitfallDemo {
        pitfall: name.to_string(),
        overrides,
        baseline: Some(baseline),
        pitfall_run: Some(variant),
        difference,
    })
}

/// Exhaustive comparison of the two normalization orders over every byte
/// value, with mean and rescale both 127.5.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderDiff {
    pub max_abs_diff: f64,
    pub argmax: u8,
    pub values_differing: usize,
    pub mean_abs_diff: f64,
}

pub fn normalization_order_diff() -> OrderDiff {
    let bytes: Vec<u8> = (0..=255u8).collect();
    let img = crate::image::ImageBuffer::new(256, 1, 1, crate::manifest::ColorLayout::Rgb, crate::image::PixelData::U8(bytes))
        .expect("256 x 1 x 1");
    let run = |order_policy| {
        let p = NormalizationParams {
            mean: vec![127.5],
            rescale: 127.5,
            order_policy,
        };
        normalize_and_cast(&img, &p)
            .expect("byte input normalizes")
            .data
            .to_f32()
    };
    let a = run(OrderPolicy::ConvertThenNormalize);
    let b = run(OrderPolicy::NormalizeInBytesThenConvert);
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| f64::from((x - y).abs())).collect();
    let (argmax, max) = diffs
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
    OrderDiff {
        max_abs_diff: max,
        argmax: argmax as u8,
        values_differing: diffs.iter().filter(|&&d| d > 0.0).count(),
        mean_abs_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
    }
}

fn decode_diff() -> Result<serde_json::Value, CliError> {
    let reg = DecoderRegistry::default();
    let decode = |decoder: &str, dct| {
        decode_image(
            GRADIENT_JPEG,
            &DecodeOptions {
                dct_method: dct,
                jpeg_decoder: Some(decoder),
                ..DecodeOptions::default()
            },
            &reg,
        )
        .map(|(img, _)| img)
        .map_err(|e| CliError::Failure(e.to_string()))
    };
    let a = decode("zune-jpeg", DctMethod::IntegerAccurate)?;
    let b = decode("jpeg-decoder-fixed", DctMethod::IntegerFast)?;
    let (pa, pb) = (a.as_u8().unwrap_or_default(), b.as_u8().unwrap_or_default());
    let diffs: Vec<u8> = pa.iter().zip(pb).map(|(x, y)| x.abs_diff(*y)).collect();
    Ok(serde_json::json!({
        "pixels": diffs.len(),
        "pixels_differing": diffs.iter().filter(|&&d| d > 0).count(),
        "max_abs_diff": diffs.iter().copied().max().unwrap_or(0),
        "mean_abs_diff": diffs.iter().map(|&d| f64::from(d)).sum::<f64>() / diffs.len().max(1) as f64,
    }))
}

/// Runs one demo with the reference model (or `manifest`).
pub fn pitfall_demo(pitfall: Pitfall, manifest: Option<&Path>) -> Result<PitfallDemo, CliError> {
    let red_blue = || vec![ppm_input("red_blue.ppm", &synth::red_blue(), None)];
    match pitfall {
        Pitfall::ColorLayout => paired(
            "color-layout",
            &DemoModel::open(manifest)?,
            &red_blue(),
            PipelineOverrides::new().with("color_layout", "BGR"),
        ),
        Pitfall::DataLayout => paired(
            "data-layout",
            &DemoModel::open(manifest)?,
            &red_blue(),
            PipelineOverrides::new().with("data_layout", "NCHW"),
        ),
        Pitfall::Crop => {
            let inputs: Vec<InputItem> = synth::frame_border_dataset()
                .iter()
                .map(|(name, img, label)| ppm_input(name, img, Some(*label)))
                .collect();
            paired("crop", &DemoModel::open(manifest)?, &inputs, PipelineOverrides::new().with("crop", "skip"))
        }
        Pitfall::NormalizationOrder => {
            let model = DemoModel::open(manifest)?;
            let mut demo = paired(
                "normalization-order",
                &model,
                &red_blue(),
                PipelineOverrides::new().with("order_policy", OrderPolicy::NormalizeInBytesThenConvert.as_str()),
            )?;
            let diff = normalization_order_diff();
            demo.difference["exhaustive"] = serde_json::to_value(diff).expect("diff serializes");
            Ok(demo)
        }
        Pitfall::Decode => {
            let model = DemoModel::open(manifest)?;
            let input = vec![InputItem {
                name: "gradient.jpg".into(),
                data: GRADIENT_JPEG.to_vec(),
                label: None,
            }];
            let overrides = PipelineOverrides::new()
                .with("jpeg_decoder", "jpeg-decoder-fixed")
                .with("dct_method", DctMethod::IntegerFast.as_str());
            let mut demo = paired("decode", &model, &input, overrides)?;
            demo.difference["decoded_pixels"] = decode_diff()?;
            Ok(demo)
        }
    }
}

// ---------------------------------------------------------------------------
// Servers

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failure(format!("async runtime: {e}")))
}

fn bind(rt: &tokio::runtime::Runtime, listen: &str) -> Result<tokio::net::TcpListener, CliError> {
    rt.block_on(tokio::net::TcpListener::bind(listen))
        .map_err(|e| CliError::Usage(format!("cannot listen on {listen}: {e}")))
}

fn announce(out: &mut dyn Write, listener: &tokio::net::TcpListener) -> Result<std::net::SocketAddr, CliError> {
    let addr = listener.local_addr().map_err(|e| CliError::Failure(e.to_string()))?;
    writeln!(out, "listening on http://{addr}")
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Failure(format!("stdout: {e}")))?;
    Ok(addr)
}

fn serve_registry(cfg: RegistryConfig, out: &mut dyn Write) -> Result<i32, CliError> {
    let rt = runtime()?;
    let interval = Duration::from_millis(cfg.heartbeat_interval_ms);
    let registry = Arc::new(Registry::new(interval, Arc::new(SystemClock)));
    let listener = bind(&rt, &cfg.listen)?;
    announce(out, &listener)?;
    let purger = Arc::clone(&registry);
    rt.spawn(async move {
        loop {
            tokio::time::sleep(interval).await;
            let n = purger.purge();
            if n > 0 {
                log::info!("expired {n} agent(s)");
            }
        }
    });
    rt.block_on(server::serve(listener, server::registry_router(registry), server::shutdown_signal()))
        .map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(EXIT_OK)
}

fn serve_orchestrator(cfg: OrchestratorSettings, out: &mut dyn Write) -> Result<i32, CliError> {
    let catalog = cfg
        .manifests
        .iter()
        .map(|p| load_manifest_file(p))
        .collect::<Result<Vec<_>, _>>()?;
    let orch = Orchestrator::new(
        catalog,
        Box::new(RegistryClient::new(&cfg.registry_url)),
        Arc::new(HttpDispatcher),
        OrchestratorConfig {
            data_dir: cfg.data_dir.clone(),
            dispatch_timeout: Duration::from_millis(cfg.dispatch_timeout_ms),
            datasets: cfg.datasets.clone(),
        },
    )
    .map_err(|e| CliError::Failure(e.to_string()))?;
    let rt = runtime()?;
    let listener = bind(&rt, &cfg.listen)?;
    announce(out, &listener)?;
    rt.block_on(server::serve(listener, server::orchestrator_router(orch), server::shutdown_signal()))
        .map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(EXIT_OK)
}

/// The record an agent publishes for `cfg`, before its address is known.
pub fn agent_record(cfg: &AgentSettings, manifests: &[ModelManifest]) -> AgentRecord {
    let host = Platform::host();
    AgentRecord {
        agent_id: cfg
            .agent_id
            .clone()
            .unwrap_or_else(|| format!("agent-{}", uuid::Uuid::new_v4().simple())),
        address: String::new(),
        hardware: HardwareSpec {
            architecture: cfg.architecture.clone().unwrap_or(host.architecture),
            device_classes: cfg.devices.iter().cloned().collect(),
            interconnect: cfg.interconnect.clone(),
            attributes: cfg.attributes.clone(),
        },
        frameworks: cfg
            .frameworks
            .iter()
            .map(|f| NamedVersion::new(&f.name, f.version.clone()))
            .collect(),
        models: manifests
            .iter()
            .map(|m| NamedVersion::new(&m.name, m.version.clone()))
            .collect(),
        last_heartbeat_ms: 0,
    }
}

fn serve_agent(cfg: AgentSettings, out: &mut dyn Write) -> Result<i32, CliError> {
    let manifests = cfg
        .manifests
        .iter()
        .map(|p| load_manifest_file(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut backends = BackendRegistry::new();
    for f in &cfg.frameworks {
        let b = BackendRegistry::backend_by_kind(&f.backend)
            .ok_or_else(|| CliError::Usage(format!("unknown backend `{}` for {}", f.backend, f.name)))?;
        backends.register(&f.name, b);
    }
    let mut record = agent_record(&cfg, &manifests);
    let (cache_root, _guard) = match &cfg.cache_dir {
        Some(d) => (d.clone(), None),
        None => {
            let d = temp_dir("agent-cache");
            (d.clone(), Some(TempDir(d)))
        }
    };
    let mut runtime_ = Runtime::new(backends, cache_root);
    runtime_.platform = Platform {
        architecture: record.hardware.architecture.clone(),
        device: cfg.devices.first().cloned().unwrap_or_else(|| "cpu".into()),
    };

    let rt = runtime()?;
    let listener = bind(&rt, &cfg.listen)?;
    let addr = listener.local_addr().map_err(|e| CliError::Failure(e.to_string()))?;
    record.address = cfg.advertise_address.clone().unwrap_or_else(|| addr.to_string());
    let agent_id = record.agent_id.clone();
    let agent = Arc::new(
        Agent::new(record.clone(), runtime_, cfg.queue_depth)
            .with_delay((cfg.delay_ms > 0).then(|| Duration::from_millis(cfg.delay_ms))),
    );

    let client = RegistryClient::new(&cfg.registry_url);
    publish_with_retry(&client, &record)?;
    announce(out, &listener)?;

    let interval = Duration::from_millis(cfg.heartbeat_interval_ms);
    let beat_client = client.clone();
    let beat_record = record.clone();
    rt.spawn(async move {
        loop {
            tokio::time::sleep(interval).await;
            let c = beat_client.clone();
            let r = beat_record.clone();
            let _ = tokio::task::spawn_blocking(move || match c.heartbeat(&r.agent_id) {
                Ok(()) => {}
                // expired or registry restarted: publish again
                Err(RegistryError::UnknownAgent(_)) => {
                    if let Err(e) = c.publish(&r) {
                        log::warn!("re-publish failed: {e}");
                    }
                }
                Err(e) => log::warn!("heartbeat failed: {e}"),
            })
            .await;
        }
    });
    rt.block_on(server::serve(listener, server::agent_router(agent), server::shutdown_signal()))
        .map_err(|e| CliError::Failure(e.to_string()))?;
    if let Err(e) = client.deregister(&agent_id) {
        log::warn!("deregistration failed: {e}");
    }
    Ok(EXIT_OK)
}

fn publish_with_retry(client: &RegistryClient, record: &AgentRecord) -> Result<(), CliError> {
    let mut last = None;
    for attempt in 0..50 {
        match client.publish(record) {
            Ok(()) => return Ok(()),
            Err(e @ RegistryError::Malformed(_)) => return Err(CliError::Usage(e.to_string())),
            Err(e) => last = Some(e),
        }
        std::thread::sleep(Duration::from_millis(100 * (attempt + 1).min(10)));
    }
    Err(CliError::Failure(format!(
        "cannot reach registry: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

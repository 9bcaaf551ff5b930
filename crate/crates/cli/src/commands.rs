use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tavg_core::dataset::{
    build_dataset_with_summary, frame_to_image, ingest_video, load_dataset, normalize_peak, resample_audio,
    write_dataset, BuildSummary, Dataset, DatasetMode, FaceDetector, HaarCascade, SidecarDetector, TARGET_RATE,
};
use tavg_core::media::read_wav;
use tavg_core::metrics::{eval_noise, evaluate, Condition, EvalOptions, MetricReport};
use tavg_core::par;
use tavg_core::synth::{synthesize, SynthKind, SynthSpec};
use tavg_core::trainer::{load_checkpoint, train, LossRecord, TrainMode, TrainOutputs, TrainState};

use crate::config::{env_seed, RunConfig};
use crate::error::{CliError, CliResult, Context};

pub const LOSS_FILE: &str = "losses.tsv";
pub const ABLATION_LOG: &str = "ablation.log";
pub const REPORT_FILE: &str = "report.tsv";
pub const GRID_DIR: &str = "grid";

#[derive(Debug, Clone)]
pub struct BuildArgs {
    pub video: PathBuf,
    pub out: PathBuf,
    pub mode: DatasetMode,
    pub annotations: Option<PathBuf>,
    pub cascade: Option<PathBuf>,
    pub image_size: usize,
}

/// Builds a dataset directory from a video and face annotations.
pub fn build_dataset_cmd(args: &BuildArgs) -> CliResult<BuildSummary> {
    let detector: Box<dyn FaceDetector> = match (&args.annotations, &args.cascade) {
        (Some(p), _) => Box::new(SidecarDetector::load(p).context(|| format!("annotations {}", p.display()))?),
        (None, Some(p)) => Box::new(HaarCascade::load(p).context(|| format!("cascade {}", p.display()))?),
        (None, None) => {
            return Err(CliError::Usage(
                "missing --annotations: face boxes are required (or pass --cascade)".into(),
            ))
        }
    };
    let (frames, audio) = ingest_video(&args.video).context(|| format!("video {}", args.video.display()))?;
    let (ds, summary) = build_dataset_with_summary(&frames, &audio, detector.as_ref(), args.mode, args.image_size)
        .context(|| format!("building dataset from {}", args.video.display()))?;
    let source = args
        .video
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_dataset(&ds, &source, &args.out).context(|| format!("writing {}", args.out.display()))?;
    Ok(summary)
}

pub fn load_data(dir: &Path) -> CliResult<Dataset> {
    Ok(load_dataset(dir).context(|| format!("dataset {}", dir.display()))?.1)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub mode: Option<TrainMode>,
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn progress(every: u64) -> impl FnMut(&LossRecord) {
    move |r| {
        if every > 0 && r.iteration % every == 0 {
            eprintln!("iter {:>6}  d_loss {:.4}  g_loss {:.4}", r.iteration, r.d_loss, r.g_loss);
        }
    }
}

fn train_to(config: &RunConfig, data: &Dataset, ckpt: &Path) -> CliResult<TrainState> {
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Core(tavg_core::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }))?;
    }
    let outputs = TrainOutputs {
        checkpoint: Some(ckpt.to_path_buf()),
        losses: Some(sibling(ckpt, LOSS_FILE)),
    };
    let (state, _) = train(&config.train, data, &outputs, progress(config.log_every))
        .context(|| format!("training {}", config.train.mode))?;
    Ok(state)
}

pub fn read_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let mut c = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    c.apply_env()?;
    Ok(c)
}

/// Trains one model and writes its checkpoint and `losses.tsv` beside it.
pub fn train_cmd(args: &TrainArgs) -> CliResult<TrainState> {
    let mut config = read_config(args.config.as_deref())?;
    if let Some(mode) = args.mode {
        config.train.mode = mode;
    }
    let data = load_data(&args.data)?;
    train_to(&config, &data, &args.out)
}

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub ckpt: PathBuf,
    pub audio: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub segments: usize,
    pub frames: Vec<PathBuf>,
}

/// Writes the frames for every full audio window, in order.
pub fn generate_cmd(args: &GenerateArgs) -> CliResult<GenerateSummary> {
    let state = load_checkpoint(&args.ckpt).context(|| format!("checkpoint {}", args.ckpt.display()))?;
    let pcm = read_wav(&args.audio).context(|| format!("audio {}", args.audio.display()))?;
    let mono = pcm.to_mono().context(|| format!("audio {}", args.audio.display()))?;
    let audio = resample_audio(&mono, TARGET_RATE as i64)?;
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let models = &state.models;
    let window = models.encoder.config.input_len;
    let dim = models.generator.config.noise_dim;
    let segments = audio.samples.len() / window;
    let frames = par::map_indexed(segments, |k| {
        let segment = normalize_peak(&audio.samples[k * window..(k + 1) * window]);
        models.generate(&segment, &eval_noise(seed, k, dim))
    })
    .into_iter()
    .collect::<tavg_core::Result<Vec<_>>>()?;
    std::fs::create_dir_all(&args.out).map_err(|e| tavg_core::Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let mut written = Vec::new();
    for f in frames.iter().flatten() {
        let path = args.out.join(format!("frame_{:05}.png", written.len()));
        frame_to_image(f)
            .save(&path)
            .map_err(|e| tavg_core::Error::Image(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(GenerateSummary {
        segments,
        frames: written,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub ckpts: Vec<(String, PathBuf)>,
    pub data: PathBuf,
    pub baseline_data: Option<PathBuf>,
    pub report: PathBuf,
    pub grid: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

/// Parses `name=path[,name=path...]`.
pub fn parse_ckpt_list(text: &str) -> CliResult<Vec<(String, PathBuf)>> {
    if text.trim().is_empty() {
        return Err(CliError::Usage("--ckpts must name at least one condition".into()));
    }
    text.split(',')
        .map(|item| {
            let (name, path) = item
                .split_once('=')
                .filter(|(n, p)| !n.trim().is_empty() && !p.trim().is_empty())
                .ok_or_else(|| CliError::Usage(format!("--ckpts entry {item:?} is not name=path")))?;
            Ok((name.trim().to_string(), PathBuf::from(path.trim())))
        })
        .collect()
}

fn score(
    config: &RunConfig,
    models: &[(String, TrainState)],
    data: &Dataset,
    baseline: Option<&Dataset>,
    grid: Option<PathBuf>,
) -> CliResult<MetricReport> {
    let mut conditions = Vec::with_capacity(models.len());
    for (name, state) in models {
        let dataset = match state.mode().dataset_mode() {
            DatasetMode::Triplet => data,
            DatasetMode::Baseline => baseline.ok_or_else(|| {
                CliError::Usage(format!("condition {name} is a baseline model; pass --baseline-data"))
            })?,
        };
        conditions.push(Condition {
            name,
            model: Some(state),
            dataset,
        });
    }
    let options = EvalOptions {
        seed: config.eval_seed,
        ssim: config.ssim_params(data.image_size),
        grid_dir: grid,
        grid_samples: config.grid_samples,
    };
    let extractor = config.extractor()?;
    Ok(evaluate(&conditions, extractor.as_ref(), &options)?)
}

/// Scores each checkpoint against its dataset and writes the report.
pub fn evaluate_cmd(args: &EvaluateArgs) -> CliResult<MetricReport> {
    if args.ckpts.is_empty() {
        return Err(CliError::Usage("--ckpts must name at least one condition".into()));
    }
    let config = read_config(args.config.as_deref())?;
    let models = args
        .ckpts
        .iter()
        .map(|(name, path)| {
            if !path.exists() {
                return Err(CliError::Core(tavg_core::Error::MissingCheckpoint(format!(
                    "{name} ({})",
                    path.display()
                ))));
            }
            Ok((name.clone(), load_checkpoint(path).context(|| format!("checkpoint {}", path.display()))?))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let data = load_data(&args.data)?;
    let baseline = args.baseline_data.as_deref().map(load_data).transpose()?;
    let report = score(&config, &models, &data, baseline.as_ref(), args.grid.clone())?;
    report
        .write(&args.report)
        .context(|| format!("writing {}", args.report.display()))?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct AblateArgs {
    pub data: PathBuf,
    pub baseline_data: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub report: MetricReport,
    pub log: String,
}

/// Trains every condition with one configuration, then scores them.
/// Conditions are with_gru and no_gru, plus baseline when baseline data is
/// supplied.
pub fn ablate_cmd(args: &AblateArgs) -> CliResult<AblationOutcome> {
    let config = read_config(args.config.as_deref())?;
    let data = load_data(&args.data)?;
    let baseline = args.baseline_data.as_deref().map(load_data).transpose()?;
    let mut modes = vec![TrainMode::WithGru, TrainMode::NoGru];
    if baseline.is_some() {
        modes.insert(0, TrainMode::Baseline);
    }
    let mut models = Vec::new();
    for mode in modes {
        let mut c = config.clone();
        c.train.mode = mode;
        let ds = if mode == TrainMode::Baseline {
            baseline.as_ref().expect("checked above")
        } else {
            &data
        };
        eprintln!("training {mode} for {} iterations", c.train.iterations);
        let ckpt = args.out.join(mode.as_str()).join("model.ckpt");
        models.push((mode.as_str().to_string(), train_to(&c, ds, &ckpt)?));
    }
    let report = score(&config, &models, &data, baseline.as_ref(), Some(args.out.join(GRID_DIR)))?;
    let report_path = args.out.join(REPORT_FILE);
    report
        .write(&report_path)
        .context(|| format!("writing {}", report_path.display()))?;
    let log = ablation_log(&config, &report, &data)?;
    let log_path = args.out.join(ABLATION_LOG);
    std::fs::write(&log_path, &log).map_err(|e| tavg_core::Error::Io {
        path: log_path,
        source: e,
    })?;
    Ok(AblationOutcome { report, log })
}

fn ablation_log(config: &RunConfig, report: &MetricReport, data: &Dataset) -> CliResult<String> {
    let mut log = String::new();
    let _ = writeln!(
        log,
        "samples {}  iterations {}  batch {}  seed {}",
        data.len(),
        config.train.iterations,
        config.train.batch_size,
        config.train.seed
    );
    let truth: Vec<_> = (0..data.len()).map(|i| data.frames(i).to_vec()).collect();
    let truth_temporal = truth
        .iter()
        .map(|f| tavg_core::metrics::temporal_mse(f))
        .collect::<tavg_core::Result<Vec<_>>>()?;
    let _ = writeln!(
        log,
        "temporal_mse ground_truth {:.6}",
        truth_temporal.iter().sum::<f64>() / truth_temporal.len().max(1) as f64
    );
    for r in &report.rows {
        let _ = writeln!(
            log,
            "condition {}  mse {:.6}  ssim {:.6}  lpips {:.6}  temporal_mse {}",
            r.condition,
            r.mse,
            r.ssim,
            r.lpips,
            r.temporal_mse.map_or("n/a".to_string(), |t| format!("{t:.6}"))
        );
    }
    if let (Some(g), Some(n)) = (report.row("with_gru"), report.row("no_gru")) {
        let holds = g.ssim >= n.ssim;
        let _ = writeln!(
            log,
            "ssim direction with_gru >= no_gru: {} ({:.6} vs {:.6})",
            if holds { "holds" } else { "does not hold" },
            g.ssim,
            n.ssim
        );
    }
    Ok(log)
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub out: PathBuf,
    pub stem: String,
    pub kind: SynthKind,
    pub seconds: f64,
    pub size: u32,
    pub seed: u64,
    pub faceless_frames: Vec<usize>,
}

/// Writes a synthetic clip and its face annotations; returns their paths.
pub fn synth_cmd(args: &SynthArgs) -> CliResult<(PathBuf, PathBuf)> {
    let spec = SynthSpec {
        kind: args.kind,
        seconds: args.seconds,
        width: args.size,
        height: args.size,
        seed: args.seed,
        faceless_frames: args.faceless_frames.clone(),
        ..SynthSpec::default()
    };
    let clip = synthesize(&spec)?;
    Ok(clip.write(&args.out, &args.stem)?)
}

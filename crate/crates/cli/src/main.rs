use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tavg::commands::*;
use tavg::{CliError, CliResult};
use tavg_core::dataset::DatasetMode;
use tavg_core::synth::SynthKind;
use tavg_core::trainer::TrainMode;

#[derive(Parser)]
#[command(name = "tavg", version, about = "Audio-conditioned face-frame synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pair audio windows with face crops from a video.
    BuildDataset {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "triplet")]
        mode: DatasetMode,
        /// Face boxes, one `frame x y w h` line per frame.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Haar cascade XML used when no annotations are given.
        #[arg(long)]
        cascade: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
    },
    /// Train one model and write a checkpoint plus losses.tsv beside it.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Train the ablation without the recurrent generator head.
        #[arg(long, conflicts_with = "mode")]
        no_gru: bool,
        #[arg(long)]
        mode: Option<TrainMode>,
    },
    /// Generate frames for every full audio window of a WAV file.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score checkpoints and write a report table.
    Evaluate {
        /// Comma-separated `condition=checkpoint` pairs.
        #[arg(long)]
        ckpts: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        baseline_data: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train with_gru and no_gru (and baseline) on one dataset and compare.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        baseline_data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic talking-face clip with face annotations.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "clip")]
        stem: String,
        #[arg(long, default_value = "talking")]
        kind: SynthKind,
        #[arg(long, default_value_t = 3.0)]
        seconds: f64,
        #[arg(long, default_value_t = 96)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Frames rendered without a face.
        #[arg(long, value_delimiter = ',')]
        faceless: Vec<usize>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::BuildDataset {
            video,
            out,
            mode,
            annotations,
            cascade,
            image_size,
        } => {
            let s = build_dataset_cmd(&BuildArgs {
                video,
                out,
                mode,
                annotations,
                cascade,
                image_size,
            })?;
            println!("{} samples written, {} excluded", s.retained, s.excluded());
        }
        Command::Train {
            data,
            config,
            out,
            no_gru,
            mode,
        } => {
            let mode = if no_gru { Some(TrainMode::NoGru) } else { mode };
            let state = train_cmd(&TrainArgs { data, config, out: out.clone(), mode })?;
            println!("trained {} for {} iterations: {}", state.mode(), state.iteration, out.display());
        }
        Command::Generate { ckpt, audio, out, seed } => {
            let s = generate_cmd(&GenerateArgs { ckpt, audio, out, seed })?;
            if s.segments == 0 {
                eprintln!("warning: audio is shorter than one window; no frames written");
            }
            println!("{} frames written from {} windows", s.frames.len(), s.segments);
        }
        Command::Evaluate {
            ckpts,
            data,
            baseline_data,
            report,
            grid,
            config,
        } => {
            let r = evaluate_cmd(&EvaluateArgs {
                ckpts: parse_ckpt_list(&ckpts)?,
                data,
                baseline_data,
                report,
                grid,
                config,
            })?;
            print!("{}", r.to_tsv());
        }
        Command::Ablate {
            data,
            baseline_data,
            config,
            out,
        } => {
            let o = ablate_cmd(&AblateArgs {
                data,
                baseline_data,
                config,
                out,
            })?;
            print!("{}", o.report.to_tsv());
            eprint!("{}", o.log);
        }
        Command::Synth {
            out,
            stem,
            kind,
            seconds,
            size,
            seed,
            faceless,
        } => {
            let (video, faces) = synth_cmd(&SynthArgs {
                out,
                stem,
                kind,
                seconds,
                size,
                seed,
                faceless_frames: faceless,
            })?;
            println!("{}\n{}", video.display(), faces.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { CliError::USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

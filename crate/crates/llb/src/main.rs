use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use llb::config::PipelineConfig;
use llb::evalbench::davis::{export_davis, load_davis_dir, write_mask_pngs, write_overlays};
use llb::evalbench::report::evaluate;
use llb::evalbench::synth::{gen_dataset, SyntheticConfig};
use llb::pipeline::checkpoint::{load_checkpoint, save_checkpoint};
use llb::pipeline::infer::infer_sequence;
use llb::pipeline::{train, Model};

#[derive(Parser)]
#[command(name = "llb", about = "Joint transduction/induction video object segmentation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline config file (key = value lines); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> llb::Result<PipelineConfig> {
        match &self.config {
            Some(path) => PipelineConfig::load(path),
            None => {
                let mut cfg = PipelineConfig::default();
                cfg.apply_env_seed();
                Ok(cfg)
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic moving-shapes dataset in the DAVIS layout
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Number of sequences
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Frames per sequence
        #[arg(long, default_value_t = 12)]
        length: usize,
        /// Annotated target objects per sequence
        #[arg(long, default_value_t = 2)]
        objects: usize,
        /// Unannotated distractors sharing a target's appearance
        #[arg(long, default_value_t = 2)]
        distractors: usize,
        /// Base seed (config seed when omitted)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a checkpoint
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Training dataset directory (DAVIS layout)
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment video directories given their first-frame annotations
    Infer {
        /// Checkpoint path
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset root in the DAVIS layout
        #[arg(long)]
        video_dir: PathBuf,
        /// Output directory for per-frame id masks
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset and write a JSON report
    Eval {
        /// Checkpoint path
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory (DAVIS layout)
        #[arg(long)]
        data: PathBuf,
        /// Ablation overrides, e.g. use_afm=off or use_dlgm=off (repeatable)
        #[arg(long)]
        ablation: Vec<String>,
        /// Report output path (JSON)
        #[arg(long)]
        report: PathBuf,
    },
    /// Blend predicted masks over frames for inspection
    Overlay {
        /// Directory of predicted id masks (PNG)
        #[arg(long)]
        masks: PathBuf,
        /// Directory of frames (DAVIS sequence directory)
        #[arg(long)]
        frames: PathBuf,
        /// Output directory for overlay PNGs
        #[arg(long)]
        out: PathBuf,
    },
}

/// `use_dlgm=off` expands to the mask-label + small-CNN baseline; other keys
/// go through the config setter.
fn apply_ablations(cfg: &mut PipelineConfig, ablations: &[String]) -> llb::Result<()> {
    for item in ablations {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            llb::Error::Config(format!("ablation '{item}' is not key=value"))
        })?;
        match (key.trim(), value.trim()) {
            ("use_dlgm", v) => {
                let on = matches!(v, "true" | "on" | "1");
                if on {
                    cfg.set("label_input", "bff")?;
                    cfg.set("label_encoder", "tiny_transformer")?;
                } else {
                    cfg.set("label_input", "mask")?;
                    cfg.set("label_encoder", "tiny_cnn")?;
                }
            }
            (k, v) => cfg.set(k, v)?,
        }
    }
    Ok(())
}

fn run() -> llb::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { config, out, count, length, objects, distractors, seed } => {
            let cfg = config.load()?;
            let synth = SyntheticConfig {
                width: cfg.work_width,
                height: cfg.work_height,
                num_objects: objects,
                num_distractors: distractors,
                length,
                seed: seed.unwrap_or(cfg.seed),
                ..Default::default()
            };
            let sequences = gen_dataset(&synth, count);
            for seq in &sequences {
                export_davis(seq, &out)?;
                println!("wrote {}", seq.name);
            }
            println!("dataset at {}", out.display());
        }
        Command::Train { config, data, out } => {
            let cfg = config.load()?;
            let (dataset, warnings) = load_davis_dir(&data)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let mut model = Model::init(cfg)?;
            let started = std::time::Instant::now();
            train(&mut model, &dataset, |step, loss| {
                if step % 20 == 0 {
                    println!(
                        "step {step:5}  total {:.4}  seg {:.4}  cos {:.4}  [{:.0}s]",
                        loss.total,
                        loss.seg,
                        loss.cos,
                        started.elapsed().as_secs_f64()
                    );
                }
            })?;
            save_checkpoint(&model, &out)?;
            println!("checkpoint written to {}", out.display());
        }
        Command::Infer { ckpt, video_dir, out } => {
            let model = load_checkpoint(&ckpt)?;
            let (dataset, warnings) = load_davis_dir(&video_dir)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            if dataset.is_empty() {
                return Err(llb::Error::DataLoad(format!(
                    "no usable sequences under {}",
                    video_dir.display()
                )));
            }
            for video in &dataset {
                let first: Vec<_> = video
                    .first_masks()
                    .into_iter()
                    .flatten()
                    .cloned()
                    .collect();
                let result = infer_sequence(&model.params, &model.cfg, &video.frames, &first)?;
                let seq_out = if dataset.len() == 1 { out.clone() } else { out.join(&video.name) };
                write_mask_pngs(
                    &result.masks,
                    (video.frames[0].height(), video.frames[0].width()),
                    &seq_out,
                )?;
                println!("{}: {} frames -> {}", video.name, result.masks.len(), seq_out.display());
            }
        }
        Command::Eval { ckpt, data, ablation, report } => {
            let mut model = load_checkpoint(&ckpt)?;
            apply_ablations(&mut model.cfg, &ablation)?;
            model.cfg.validate()?;
            let (dataset, warnings) = load_davis_dir(&data)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let mut rep = evaluate(&model, &dataset)?;
            rep.warnings.extend(warnings);
            let json = serde_json::to_string_pretty(&rep)
                .map_err(|e| llb::Error::DataLoad(format!("report serialization: {e}")))?;
            std::fs::write(&report, json)?;
            println!(
                "J {:.4}  F {:.4}  J&F {:.4}  ({} sequences) -> {}",
                rep.mean_j,
                rep.mean_f,
                rep.mean_jf,
                rep.sequences.len(),
                report.display()
            );
        }
        Command::Overlay { masks, frames, out } => {
            overlay_command(&masks, &frames, &out)?;
            println!("overlays at {}", out.display());
        }
    }
    Ok(())
}

fn overlay_command(
    masks_dir: &std::path::Path,
    frames_dir: &std::path::Path,
    out: &std::path::Path,
) -> llb::Result<()> {
    use llb::datamodel::{Frame, Mask};
    use llb_core::Tensor;

    let mut frame_files: Vec<_> = std::fs::read_dir(frames_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("jpg") | Some("png")))
        .collect();
    frame_files.sort();
    if frame_files.is_empty() {
        return Err(llb::Error::DataLoad(format!(
            "no frames under {}",
            frames_dir.display()
        )));
    }
    let mut frames = Vec::new();
    let mut masks: Vec<Vec<Mask>> = Vec::new();
    for (t, f) in frame_files.iter().enumerate() {
        let img = image::open(f)
            .map_err(|e| llb::Error::DataLoad(format!("{}: {e}", f.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let mut data = Vec::with_capacity((w * h * 3) as usize);
        for p in img.pixels() {
            data.extend_from_slice(&[
                p.0[0] as f64 / 255.0,
                p.0[1] as f64 / 255.0,
                p.0[2] as f64 / 255.0,
            ]);
        }
        frames.push(Frame::new(
            Tensor::from_vec(&[h as usize, w as usize, 3], data),
            t,
        )?);
        let mask_path = masks_dir.join(
            std::path::Path::new(f.file_name().unwrap()).with_extension("png"),
        );
        let mut frame_masks = Vec::new();
        if mask_path.exists() {
            let ids = image::open(&mask_path)
                .map_err(|e| llb::Error::DataLoad(format!("{}: {e}", mask_path.display())))?
                .to_luma8();
            let mut present: Vec<u8> = ids.pixels().map(|p| p.0[0]).filter(|&v| v != 0).collect();
            present.sort_unstable();
            present.dedup();
            for oid in present {
                let vals = Tensor::from_fn(&[h as usize, w as usize], |p| {
                    if ids.as_raw()[p] == oid {
                        1.0
                    } else {
                        0.0
                    }
                });
                frame_masks.push(Mask::new(vals, oid as u32, false)?);
            }
        }
        masks.push(frame_masks);
    }
    write_overlays(&frames, &masks, out)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

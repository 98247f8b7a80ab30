use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use clap::{Args, Parser, Subcommand, ValueEnum};
use texfx_core::dataset::{synth_dataset, synth_font_dataset, DatasetManifest, FontStyle};
use texfx_core::eval::{evaluate_manifest, PerceptualBackbone, Task, RANDOM_WIDTHS};
use texfx_core::losses::GuidanceMasks;
use texfx_core::net::checkpoint;
use texfx_core::train::{destylize, glyph_input, stylize, train, FinetuneJob, FinetuneOptions, RunConfig, FINAL_CHECKPOINT};
use texfx_core::Image3;

use crate::server::{router, AppState};
use crate::store::CheckpointStore;

/// Environment variable naming the checkpoint directory used by `serve`.
pub const WEIGHTS_DIR_ENV: &str = "TEXFX_WEIGHTS_DIR";
/// Environment variable naming the perceptual backbone used by `eval`.
pub const BACKBONE_ENV: &str = "TEXFX_BACKBONE";

#[derive(Debug, Parser)]
#[command(name = "texfx", version, about = "Text-effect transfer: data synthesis, training, evaluation and serving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic paired dataset and its manifest.
    Synth(SynthArgs),
    /// Train a model from a run config or command-line settings.
    Train(TrainArgs),
    /// Adapt a checkpoint to one style reference.
    Finetune(FinetuneArgs),
    /// Score a checkpoint on the test split of a manifest.
    Eval(EvalArgs),
    /// Render a glyph in the style of a reference image.
    Stylize(StylizeArgs),
    /// Recover the plain glyph from a styled image.
    Destylize(DestylizeArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub styles: usize,
    #[arg(long, default_value_t = 30)]
    pub glyphs: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Font-transfer data: styles are font variants instead of effects.
    #[arg(long)]
    pub fonts: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Paired manifest file or directory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub unpaired: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the log and checkpoints.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    /// Matching glyph for supervised finetuning.
    #[arg(long, conflicts_with = "mask")]
    pub glyph: Option<PathBuf>,
    /// Guidance strokes (red foreground, blue background).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Stylize,
    Destylize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Weights file, or `random[:seed]` for a seeded random extractor.
    #[arg(long, env = BACKBONE_ENV, default_value = "random:0")]
    pub backbone: String,
    #[arg(long, value_enum, default_value = "stylize")]
    pub task: TaskArg,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub glyph: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "stylized.png")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DestylizeArgs {
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "destylized.png")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = WEIGHTS_DIR_ENV, default_value = "checkpoints")]
    pub checkpoint_dir: PathBuf,
    /// Checkpoint name served by default; the newest one otherwise.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Reject a finetune request while another job is pending instead of queueing it.
    #[arg(long)]
    pub no_queue: bool,
    #[arg(long, default_value_t = 500)]
    pub finetune_iterations: usize,
}

pub type CliResult = Result<(), Box<dyn std::error::Error>>;

fn backbone(spec: &str) -> Result<PerceptualBackbone, texfx_core::Error> {
    match spec.strip_prefix("random") {
        Some(rest) => {
            let seed = rest.strip_prefix(':').unwrap_or("0");
            let seed = seed
                .parse()
                .map_err(|_| texfx_core::Error::InvalidInput(format!("bad backbone seed in {spec:?}")))?;
            PerceptualBackbone::random(seed, RANDOM_WIDTHS)
        }
        None => PerceptualBackbone::load(Path::new(spec)),
    }
}

fn run_train(a: &TrainArgs) -> CliResult {
    let mut cfg = match (&a.config, &a.manifest, a.iterations) {
        (Some(path), _, _) => RunConfig::load(path)?,
        (None, Some(m), Some(n)) => RunConfig::new(m, n),
        _ => return Err("train needs --config, or both --manifest and --iterations".into()),
    };
    if let Some(m) = &a.manifest {
        cfg.paired = m.clone();
    }
    if let Some(u) = &a.unpaired {
        cfg.unpaired = Some(u.clone());
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.out_dir = Some(a.out.clone());
    let every = (cfg.iterations / 20).max(1);
    train(&cfg, &mut |_, log| {
        if log.iter % every == 0 || log.iter == cfg.iterations {
            eprintln!("iter {:>6}  gen {:.4}  disc {:.4}", log.iter, log.gen_total, log.disc_total);
        }
        Ok(())
    })?;
    println!("{}", a.out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

fn run_finetune(a: &FinetuneArgs) -> CliResult {
    let base = checkpoint::load(&a.checkpoint, &Device::Cpu)?;
    let style = Image3::load_png(&a.style)?;
    let glyph = a.glyph.as_deref().map(|g| glyph_input(&Image3::load_png(g)?)).transpose()?;
    let masks = a
        .mask
        .as_deref()
        .map(|m| GuidanceMasks::from_image(&Image3::load_png(m)?, DType::F32, &Device::Cpu))
        .transpose()?;
    let mut job = FinetuneJob::new("cli".into(), style, glyph, masks, a.checkpoint.display().to_string())?;
    let opts = FinetuneOptions {
        iterations: a.iterations,
        seed: a.seed,
        ..FinetuneOptions::default()
    };
    let every = (a.iterations / 10).max(1);
    let net = job.run(&base, &opts, &mut |log| {
        if log.iter % every == 0 {
            eprintln!("iter {:>6}  gen {:.4}", log.iter, log.gen_total);
        }
        Ok(())
    })?;
    checkpoint::save(&net, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn run_eval(a: &EvalArgs) -> CliResult {
    let net = checkpoint::load(&a.checkpoint, &Device::Cpu)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let bb = backbone(&a.backbone)?;
    let task = match a.task {
        TaskArg::Stylize => Task::Stylize,
        TaskArg::Destylize => Task::Destylize,
    };
    let tag = a
        .checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = evaluate_manifest(&net, &manifest, &bb, task, &tag)?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
    print!("{}", report.render_table());
    Ok(())
}

fn run_serve(a: &ServeArgs) -> CliResult {
    let store = CheckpointStore::open(&a.checkpoint_dir, a.checkpoint.as_deref())
        .map_err(|e| format!("{} {}", e.message, e.detail.unwrap_or_default()))?;
    let finetune = FinetuneOptions {
        iterations: a.finetune_iterations,
        ..FinetuneOptions::default()
    };
    let state = AppState::new(store, !a.no_queue, finetune);
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state)).await
    })?;
    Ok(())
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(a) => {
            let manifest = if a.fonts {
                let family = FontStyle::family();
                let fonts: Vec<FontStyle> = family.into_iter().take(a.styles).collect();
                synth_font_dataset(&fonts, a.glyphs, a.size, a.seed, &a.out)?
            } else {
                synth_dataset(a.styles, a.glyphs, a.size, a.seed, &a.out)?
            };
            println!("{} entries, manifest hash {}", manifest.entries.len(), manifest.hash());
        }
        Command::Train(a) => run_train(&a)?,
        Command::Finetune(a) => run_finetune(&a)?,
        Command::Eval(a) => run_eval(&a)?,
        Command::Stylize(a) => {
            let net = checkpoint::load(&a.checkpoint, &Device::Cpu)?;
            let glyph = glyph_input(&Image3::load_png(&a.glyph)?)?;
            stylize(&net, &glyph, &Image3::load_png(&a.style)?)?.save_png(&a.out)?;
            println!("{}", a.out.display());
        }
        Command::Destylize(a) => {
            let net = checkpoint::load(&a.checkpoint, &Device::Cpu)?;
            destylize(&net, &Image3::load_png(&a.style)?)?.save_png(&a.out)?;
            println!("{}", a.out.display());
        }
        Command::Serve(a) => run_serve(&a)?,
    }
    Ok(())
}

//! `diffsbir`: toy data generation, prompt training, gallery building, retrieval,
//! evaluation, ablation sweeps and feature-map renders from one experiment config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::Tensor;
use clap::{Args, Parser, Subcommand};

use diffsbir::backbone::{seeded_normal, Backbone, LatentDenoiser};
use diffsbir::data::{generate_toy_dataset, load_and_preprocess, DatasetManifest, Modality};
use diffsbir::experiment::{
    evaluation_items, load_manifest, parse_sweep_values, query_conditioning, run_sweep, run_with,
    training_manifest, write_outcome, ExperimentConfig, SweepAxis, TextMode,
};
use diffsbir::features::{FeatureSource, Task};
use diffsbir::metrics::{evaluate, SplitSpec};
use diffsbir::pca::pca_render;
use diffsbir::prompting::{init_prompts, read_prompts, train_prompts, write_prompts, PromptSet};
use diffsbir::retrieval::{build_gallery, query, GalleryIndex};
use diffsbir::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "diffsbir",
    version,
    about = "Zero-shot sketch-based image retrieval with a frozen diffusion denoiser"
)]
struct Cli {
    /// Experiment config (TOML). Defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// category or finegrained.
    #[arg(long, global = true, value_parser = parse_task)]
    task: Option<Task>,

    /// Query-side conditioning: learned, class_template or caption.
    #[arg(long, global = true, value_parser = parse_text_mode)]
    text_mode: Option<TextMode>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired sketch/photo dataset.
    GenToy(GenToyArgs),
    /// Train prompts on the seen classes.
    Train(OutArgs),
    /// Extract the unseen-class photo gallery under trained prompts.
    BuildGallery(GalleryArgs),
    /// Rank the gallery for unseen-class sketches.
    Retrieve(RetrieveArgs),
    /// Evaluate trained prompts against a stored gallery.
    Evaluate(EvaluateArgs),
    /// Train and evaluate in one go, writing every artifact.
    Run(OutArgs),
    /// Repeat train and evaluate along one ablation axis.
    Sweep(SweepArgs),
    /// Render a captured feature map through its top principal components.
    Pca(PcaArgs),
    /// Print the resolved config as TOML.
    ShowConfig,
}

#[derive(Args, Debug)]
struct GenToyArgs {
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image side; defaults to the configured backbone input side.
    #[arg(long)]
    side: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory; defaults to `output_dir` from the config, then `./run`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GalleryArgs {
    /// Trained prompts file (.dprm).
    #[arg(long)]
    prompts: PathBuf,
    /// Gallery file; defaults to `gallery.dfea` next to the prompts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    /// Trained prompts file (.dprm).
    #[arg(long)]
    prompts: PathBuf,
    /// Gallery store written by build-gallery (.dfea).
    #[arg(long)]
    gallery: PathBuf,
    #[arg(long, default_value_t = 200)]
    k: usize,
    /// Sketch ids to query; every unseen-class sketch when omitted.
    #[arg(long = "query", value_name = "ID")]
    queries: Vec<String>,
    /// JSON output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Trained prompts file (.dprm).
    #[arg(long)]
    prompts: PathBuf,
    /// Gallery store written by build-gallery (.dfea).
    #[arg(long)]
    gallery: PathBuf,
    /// Report file; defaults to `report.json` next to the gallery.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// timestep, layer_grid, border_width, ensemble_size or data_fraction.
    #[arg(long, value_parser = parse_axis)]
    axis: SweepAxis,
    /// `start:stop:step` or a comma-separated list; the axis defaults otherwise.
    #[arg(long)]
    values: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PcaArgs {
    #[arg(long)]
    image: PathBuf,
    /// photo or sketch; picks the preprocessing and the visual prompt.
    #[arg(long, default_value = "photo", value_parser = parse_modality)]
    modality: Modality,
    /// Apply trained prompts before extraction.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// 1-based block on the configured feature path.
    #[arg(long, default_value_t = 3)]
    block: usize,
    /// Pixel upscaling of the rendered map.
    #[arg(long, default_value_t = 8)]
    scale: u32,
    #[arg(long)]
    out: PathBuf,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_text_mode(s: &str) -> std::result::Result<TextMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_axis(s: &str) -> std::result::Result<SweepAxis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_modality(s: &str) -> std::result::Result<Modality, String> {
    match s {
        "sketch" => Ok(Modality::Sketch),
        "photo" => Ok(Modality::Photo),
        other => Err(format!("unknown modality `{other}`")),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Fingerprint(_) | Error::Shape(_) | Error::Range(_) => 3,
        Error::Data(_)
        | Error::Sampling(_)
        | Error::Leakage(_)
        | Error::Io { .. }
        | Error::Image { .. }
        | Error::Format(_)
        | Error::Json(_) => 4,
        Error::Numerical(_) | Error::Tensor(_) => 5,
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.sets)?;
    if let Some(task) = cli.task {
        cfg.task = task;
    }
    if let Some(mode) = cli.text_mode {
        cfg.text_mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(arg: &Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    arg.clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("run"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_data(cfg: &ExperimentConfig) -> Result<(DatasetManifest, SplitSpec)> {
    let (manifest, integrity) = load_manifest(&cfg.dataset)?;
    if !integrity.is_clean() {
        log::warn!("{integrity}");
    }
    if manifest.is_empty() {
        return Err(Error::Data(format!(
            "no items found under {}",
            cfg.dataset.root.display()
        )));
    }
    let split = cfg.split.resolve(&manifest.classes())?;
    Ok((manifest, split))
}

/// Prompts from disk; the config follows the prompts' task when they disagree.
fn load_prompts(
    path: &Path,
    cfg: &mut ExperimentConfig,
    backbone: &dyn Backbone,
) -> Result<PromptSet> {
    let prompts = read_prompts(path, backbone.dtype(), backbone.device())?;
    if prompts.task() != cfg.task {
        log::info!(
            "using the {} task stored in {}",
            prompts.task().as_str(),
            path.display()
        );
        cfg.task = prompts.task();
    }
    Ok(prompts)
}

fn cmd_gen_toy(args: &GenToyArgs, cfg: &ExperimentConfig) -> Result<()> {
    let side = args.side.unwrap_or(cfg.backbone.image_side as u32);
    let ds = generate_toy_dataset(args.classes, args.instances, side, args.seed, &args.out)?;
    println!(
        "wrote {} images ({} classes x {} instances, sketch and photo) to {}",
        ds.manifest.len(),
        args.classes,
        args.instances,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &OutArgs, cfg: &ExperimentConfig) -> Result<()> {
    let (manifest, split) = load_data(cfg)?;
    let backbone = LatentDenoiser::load(&cfg.backbone)?;
    let dir = out_dir(&args.out, cfg);
    create_dir(&dir)?;
    let train_set = training_manifest(cfg, &manifest, &split)?;
    let mut train_cfg = cfg.train.clone();
    if train_cfg.diagnostic_path.is_none() {
        train_cfg.diagnostic_path = Some(dir.join("diagnostic.dprm"));
    }
    let (prompts, log) =
        train_prompts(&train_set, &cfg.extraction_config(), &train_cfg, &backbone)?;
    cfg.save(&dir.join("config.toml"))?;
    write_prompts(&prompts, &dir.join("prompts.dprm"))?;
    log.write_jsonl(&dir.join("train_log.jsonl"))?;
    println!(
        "trained {} prompts on {} seen classes ({} steps, loss {:.4} -> {:.4}); wrote {}",
        cfg.task.as_str(),
        split.seen_classes.len(),
        log.steps,
        log.first_loss().unwrap_or(f64::NAN),
        log.last_loss().unwrap_or(f64::NAN),
        dir.join("prompts.dprm").display()
    );
    Ok(())
}

fn cmd_build_gallery(args: &GalleryArgs, cfg: &mut ExperimentConfig) -> Result<()> {
    let backbone = LatentDenoiser::load(&cfg.backbone)?;
    let prompts = load_prompts(&args.prompts, cfg, &backbone)?;
    let (manifest, split) = load_data(cfg)?;
    let (photos, _) = evaluation_items(&manifest, &split);
    let (index, report) = build_gallery(&photos, &prompts, &cfg.extraction_config(), &backbone)?;
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| sibling(&args.prompts, "gallery.dfea"));
    index.save(&path)?;
    let report_path = path.with_extension("build_report.json");
    write_file(&report_path, &serde_json::to_string_pretty(&report)?)?;
    println!(
        "gallery of {} photos ({} skipped, d_feat {}) written to {}",
        index.len(),
        report.skipped.len(),
        index.d_feat(),
        path.display()
    );
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn cmd_retrieve(args: &RetrieveArgs, cfg: &mut ExperimentConfig) -> Result<()> {
    let backbone = LatentDenoiser::load(&cfg.backbone)?;
    let prompts = load_prompts(&args.prompts, cfg, &backbone)?;
    let index = GalleryIndex::load(&args.gallery)?;
    let (manifest, split) = load_data(cfg)?;
    let sketches = if args.queries.is_empty() {
        evaluation_items(&manifest, &split).1
    } else {
        args.queries
            .iter()
            .map(|id| {
                manifest
                    .get(id)
                    .filter(|i| i.modality == Modality::Sketch)
                    .ok_or_else(|| Error::Data(format!("no sketch with id `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let extraction = cfg.extraction_config();
    let results = sketches
        .iter()
        .map(|s| {
            let cond = query_conditioning(cfg.text_mode, &backbone, &prompts, s)?;
            query(s, &prompts, &extraction, &index, args.k, &backbone, &cond)
        })
        .collect::<Result<Vec<_>>>()?;
    let json = serde_json::to_string_pretty(&results)?;
    match &args.out {
        Some(path) => {
            write_file(path, &json)?;
            println!(
                "{} ranked lists (k = {}) written to {}",
                results.len(),
                args.k,
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs, cfg: &mut ExperimentConfig) -> Result<()> {
    let backbone = LatentDenoiser::load(&cfg.backbone)?;
    let prompts = load_prompts(&args.prompts, cfg, &backbone)?;
    let index = GalleryIndex::load(&args.gallery)?;
    let (manifest, split) = load_data(cfg)?;
    let (_, sketches) = evaluation_items(&manifest, &split);
    let cond_for = |item: &diffsbir::data::ManifestItem| {
        query_conditioning(cfg.text_mode, &backbone, &prompts, item)
    };
    let mut report = evaluate(
        &index,
        &sketches,
        &prompts,
        &cfg.extraction_config(),
        &backbone,
        &cond_for,
        &split,
        &cfg.metrics,
    )?;
    report.config = serde_json::to_value(&*cfg)?;
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| sibling(&args.gallery, "report.json"));
    report.save_json(&path)?;
    for (key, value) in &report.metrics {
        println!("{key:>10} {value:.4}");
    }
    println!(
        "{} queries, {} gallery items; report written to {}",
        report.n_queries,
        report.n_gallery,
        path.display()
    );
    Ok(())
}

fn cmd_run(args: &OutArgs, cfg: &ExperimentConfig) -> Result<()> {
    let (manifest, _) = load_data(cfg)?;
    let backbone = LatentDenoiser::load(&cfg.backbone)?;
    let dir = out_dir(&args.out, cfg);
    let mut cfg = cfg.clone();
    cfg.output_dir = Some(dir.clone());
    let outcome = run_with(&cfg, &manifest, &backbone)?;
    write_outcome(&dir, &cfg, &outcome)?;
    for (key, value) in &outcome.report.metrics {
        println!("{key:>10} {value:.4}");
    }
    println!("artifacts written to {}", dir.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs, cfg: &ExperimentConfig) -> Result<()> {
    let values = match &args.values {
        Some(text) => parse_sweep_values(text)?,
        None => args.axis.default_values(),
    };
    let (manifest, _) = load_data(cfg)?;
    let backbone = LatentDenoiser::load(&cfg.backbone)?;
    let table = run_sweep(cfg, args.axis, &values, &manifest, &backbone);
    let dir = out_dir(&args.out, cfg);
    create_dir(&dir)?;
    let (csv, png) = table.write(&dir)?;
    print!("{}", table.to_csv()?);
    println!("wrote {} and {}", csv.display(), png.display());
    let failed = table.cells.iter().filter(|c| c.error.is_some()).count();
    if failed == table.cells.len() {
        return Err(table.cells[0]
            .error
            .clone()
            .map(Error::Config)
            .unwrap_or_else(|| Error::Config("sweep produced no cells".into())));
    }
    Ok(())
}

fn cmd_pca(args: &PcaArgs, cfg: &mut ExperimentConfig) -> Result<()> {
    let backbone = LatentDenoiser::load(&cfg.backbone)?;
    if !(1..=4).contains(&args.block) {
        return Err(Error::Config(format!("block {} outside 1..=4", args.block)));
    }
    let side = cfg.backbone.image_side as u32;
    let image = load_and_preprocess(&args.image, side, args.modality)?
        .to_tensor(backbone.dtype(), backbone.device())?;
    let prompts = match &args.prompts {
        Some(path) => load_prompts(path, cfg, &backbone)?,
        None => init_prompts(cfg.task, side as usize, side as usize, 1, &backbone)?,
    };
    let extraction = cfg.extraction_config();
    let prompted = prompts
        .visual_for(args.modality)
        .apply(&image)?
        .unsqueeze(0)?;
    let z0 = backbone.encode_to_latent(&prompted, None)?;
    let eps = seeded_normal(
        extraction.base_seed,
        z0.data.dims(),
        z0.data.dtype(),
        backbone.device(),
    )?;
    let zt = backbone.forward_noise(&z0, extraction.t, &eps)?;
    let captured = backbone.denoise_capture(&zt, extraction.t, &prompts.textual().embedding()?)?;
    let maps: &[Tensor; 4] = match extraction.source {
        FeatureSource::Up => &captured.up,
        FeatureSource::Down => &captured.down,
    };
    let render = pca_render(&maps[args.block - 1])?;
    if render.degenerate {
        log::warn!("feature map has fewer than three principal directions");
    }
    render.save_png(&args.out, args.scale)?;
    println!(
        "{}x{} map of block {} at t = {} rendered to {}",
        render.height,
        render.width,
        args.block,
        extraction.t,
        args.out.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = resolve_config(cli)?;
    match &cli.command {
        Command::GenToy(a) => cmd_gen_toy(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::BuildGallery(a) => cmd_build_gallery(a, &mut cfg),
        Command::Retrieve(a) => cmd_retrieve(a, &mut cfg),
        Command::Evaluate(a) => cmd_evaluate(a, &mut cfg),
        Command::Run(a) => cmd_run(a, &cfg),
        Command::Sweep(a) => cmd_sweep(a, &cfg),
        Command::Pca(a) => cmd_pca(a, &mut cfg),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

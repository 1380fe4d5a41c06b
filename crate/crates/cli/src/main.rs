use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ringshift::gauss2d::{fit, init_scene, rasterize, FitConfig, SceneConfig};
use ringshift::geometry::{apply_transform, predict, GeometricTransform};
use ringshift::metrics::{write_metric_csv, MetricRecord};
use ringshift::pipeline::{emit_report, run_detection_sweep, run_removal, RemovalConfig, ReportFormat, TrialConfig};
use ringshift::surrogate::{Surrogate, SurrogateConfig};
use ringshift::watermark::{
    bit_accuracy, decide, detection_distance_with, embed_key, sample_key, DistanceMode, KeyFile, RingMask,
};
use ringshift::{io, par, ImageGrid, LatentGrid};

#[derive(Parser)]
#[command(name = "ringshift", version, about = "Fourier-ring watermark experiments")]
struct Cli {
    /// Master seed; overrides any seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a ring key into a latent (.gml) or an image (.png).
    Embed { input: PathBuf },
    /// Apply a geometric transform JSON to an image.
    Attack {
        image: PathBuf,
        transform: PathBuf,
        /// Source for uncovered pixels (default: the input image).
        #[arg(long)]
        pad: Option<PathBuf>,
    },
    /// Measure the detection distance of a latent or image against a key file.
    Detect { input: PathBuf, key: PathBuf },
    /// Run a detection sweep and write the CSV report.
    Sweep {
        /// Also write an SVG plot.
        #[arg(long)]
        svg: bool,
    },
    /// Fit a Gaussian scene to an image.
    Fit { image: PathBuf },
    /// Watermark an image, fit it, and re-render under a sampled perturbation.
    Remove { image: PathBuf },
    /// Print the analytic phase-ramp columns for one transform.
    Predict {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        translation_px: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        rotation_deg: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct EmbedConfig {
    surrogate: SurrogateConfig,
    r_min: f64,
    r_max: f64,
    mask_channel: usize,
    key_scale: f64,
    seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            surrogate: SurrogateConfig::default(),
            r_min: 0.0,
            r_max: 16.0,
            mask_channel: 0,
            key_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct DetectConfig {
    surrogate: SurrogateConfig,
    threshold: f64,
    distance_mode: DistanceMode,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            surrogate: SurrogateConfig::default(),
            threshold: 0.5,
            distance_mode: DistanceMode::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct FitCommandConfig {
    scene: SceneConfig,
    fit: FitConfig,
    seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct PredictConfig {
    r_max: f64,
    stride: usize,
    latent_width: usize,
    coherence: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            r_max: 16.0,
            stride: 8,
            latent_width: 64,
            coherence: 1.0,
        }
    }
}

#[derive(Serialize)]
struct DetectOutput {
    distance: f64,
    detected: bool,
    threshold: f64,
    bit_accuracy: f64,
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(io::read_json(p)?),
        None => Ok(T::default()),
    }
}

fn is_png(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn embed(cli: &Cli, input: &Path) -> Result<()> {
    let mut cfg: EmbedConfig = load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    create_out(&cli.out)?;
    let as_image = is_png(input);
    let (latent, sur) = if as_image {
        let img = ImageGrid::read_png(input)?;
        let s = cfg.surrogate.stride;
        if s == 0 || img.height() % s != 0 || img.width() % s != 0 {
            bail!("image {}x{} is not a multiple of stride {s}", img.height(), img.width());
        }
        let sur = Surrogate::new(cfg.surrogate, img.height() / s, img.width() / s)?;
        (sur.encode(&img)?, Some(sur))
    } else {
        (LatentGrid::read_gml1(input)?, None)
    };
    let mask = RingMask::new(latent.width(), latent.height(), cfg.r_min, cfg.r_max, cfg.mask_channel)?;
    let mut key = sample_key(&mask, cfg.seed);
    key.eta.iter_mut().for_each(|v| *v *= cfg.key_scale);
    let marked = embed_key(&latent, &mask, &key)?;
    let out = match sur {
        Some(sur) => {
            let path = cli.out.join("watermarked.png");
            sur.decode(&marked)?.write_png(&path)?;
            path
        }
        None => {
            let path = cli.out.join("watermarked.gml");
            marked.write_gml1(&path)?;
            path
        }
    };
    let key_path = cli.out.join("key.json");
    KeyFile::new(&mask, &key).write(&key_path)?;
    println!("{}", out.display());
    println!("{}", key_path.display());
    Ok(())
}

fn attack(cli: &Cli, image: &Path, transform: &Path, pad: Option<&Path>) -> Result<()> {
    let img = ImageGrid::read_any(image)?;
    let t = GeometricTransform::read_json(transform)?;
    let pad = match pad {
        Some(p) => ImageGrid::read_any(p)?,
        None => img.clone(),
    };
    let out = apply_transform(&img, &t, &pad)?;
    create_out(&cli.out)?;
    let path = cli.out.join(if is_png(image) { "attacked.png" } else { "attacked.gml" });
    out.write_any(&path)?;
    println!("{}", path.display());
    Ok(())
}

fn detect(cli: &Cli, input: &Path, key: &Path) -> Result<()> {
    let cfg: DetectConfig = load(cli.config.as_deref())?;
    let (mask, key) = KeyFile::read(key)?.into_parts()?;
    let grid = if is_png(input) {
        ImageGrid::read_png(input)?.0
    } else {
        ImageGrid::read_gml1(input)?.0
    };
    let latent = if grid.height() == mask.height() && grid.width() == mask.width() {
        LatentGrid(grid)
    } else {
        let s = cfg.surrogate.stride;
        if s == 0 || grid.height() != s * mask.height() || grid.width() != s * mask.width() {
            bail!(
                "input {}x{} matches neither the {}x{} key grid nor stride {s}",
                grid.height(),
                grid.width(),
                mask.height(),
                mask.width()
            );
        }
        Surrogate::new(cfg.surrogate, mask.height(), mask.width())?.encode(&ImageGrid(grid))?
    };
    let d = detection_distance_with(&latent, &mask, &key, cfg.distance_mode)?;
    let result = decide(d, cfg.threshold)?;
    print_json(&DetectOutput {
        distance: result.distance,
        detected: result.detected,
        threshold: result.threshold,
        bit_accuracy: bit_accuracy(&latent, &mask, &key)?,
    })
}

fn sweep(cli: &Cli, svg: bool) -> Result<()> {
    let mut cfg: TrialConfig = load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let report = run_detection_sweep(&cfg)?;
    create_out(&cli.out)?;
    let format = if svg { ReportFormat::CsvAndSvg } else { ReportFormat::Csv };
    for path in emit_report(&report, format, &cli.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn fit_image(cli: &Cli, image: &Path) -> Result<()> {
    let mut cfg: FitCommandConfig = load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let img = ImageGrid::read_any(image)?;
    let init = init_scene(img.height(), img.width(), &cfg.scene, cfg.seed)?;
    let res = fit(&init, &img, &cfg.fit)?;
    create_out(&cli.out)?;
    let scene_path = cli.out.join("scene.gms");
    res.scene.write(&scene_path)?;
    let records: Vec<MetricRecord> =
        res.trace.iter().enumerate().map(|(i, &v)| MetricRecord::new(i as u64, "loss", v)).collect();
    let loss_path = cli.out.join("loss.csv");
    write_metric_csv(&loss_path, &records)?;
    let render_path = cli.out.join("render.png");
    rasterize(&res.scene)?.image.write_png(&render_path)?;
    for p in [scene_path, loss_path, render_path] {
        println!("{}", p.display());
    }
    Ok(())
}

fn remove(cli: &Cli, image: &Path) -> Result<()> {
    let cfg: RemovalConfig = load(cli.config.as_deref())?;
    let img = ImageGrid::read_any(image)?;
    let (report, out) = run_removal(&img, &cfg, cli.seed.unwrap_or(0))?;
    create_out(&cli.out)?;
    let image_path = cli.out.join("removed.png");
    out.write_png(&image_path)?;
    let report_path = cli.out.join("report.json");
    io::write_json(&report_path, &report)?;
    println!("{}", image_path.display());
    println!("{}", report_path.display());
    Ok(())
}

fn predict_cmd(cli: &Cli, translation_px: f64, rotation_deg: f64) -> Result<()> {
    let cfg: PredictConfig = load(cli.config.as_deref())?;
    let t = GeometricTransform::new(translation_px, 0.0, rotation_deg, 1.0)?;
    print_json(&predict(&t, cfg.r_max, cfg.stride, cfg.latent_width, cfg.coherence)?)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Embed { input } => embed(cli, input),
        Command::Attack { image, transform, pad } => attack(cli, image, transform, pad.as_deref()),
        Command::Detect { input, key } => detect(cli, input, key),
        Command::Sweep { svg } => sweep(cli, *svg),
        Command::Fit { image } => fit_image(cli, image),
        Command::Remove { image } => remove(cli, image),
        Command::Predict {
            translation_px,
            rotation_deg,
        } => predict_cmd(cli, *translation_px, *rotation_deg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match par::with_threads(cli.threads, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.downcast_ref::<ringshift::Error>().is_some_and(|e| e.is_numerical());
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

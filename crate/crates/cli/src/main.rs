//! `relight`: command-line entry point for every pipeline stage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relight_core::imaging::{BinaryMask, ImageTensor, MetricsReport, VideoSequence};
use relight_core::nn::Stage2Variant;
use relight_core::pipeline::{
    relight, train_stage1, train_stage2, Stage1Model, Stage1TrainConfig, Stage2Model, Stage2TrainConfig,
};
use relight_core::prt::{
    generate_dataset, procedural_envmap, render_glossy, Dataset, DatasetConfig, RenderSample, Scene,
};
use relight_core::sh::{expand_light_set, project_envmap, rotate_z, EnvMap, ShLight};
use relight_core::video::{flicker_report, relight_video, stabilize, DvpConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "relight", version, about = "Desk-scale two-stage SH relighting toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for command outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// JSON file with command settings; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Project an environment map (.hdr or .pfm) onto 9 SH coefficients per channel.
    ShProject {
        env: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Quadrature points (at least 1000); 0 uses every texel.
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
    /// Rotate an SH light about the view axis.
    ShRotate {
        light: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        deg: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Expand environment maps into a rotated light set.
    GenLights {
        /// Environment maps; procedural ones are generated when none are given.
        envs: Vec<PathBuf>,
        #[arg(long)]
        interval: Option<f64>,
        /// Number of procedural maps when no files are given.
        #[arg(long)]
        procedural: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate the synthetic training/test dataset into --out-dir.
    GenDataset {
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        n_dirs: Option<usize>,
        #[arg(long)]
        interval: Option<f64>,
        /// Render photos without specular lobes.
        #[arg(long)]
        no_gloss: bool,
    },
    /// Render a scene under a light.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        light: PathBuf,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 1024)]
        n_dirs: usize,
        /// Add the specular lobes of glossy primitives.
        #[arg(long)]
        glossy: bool,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the mask PNG here.
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Relight one masked image with trained checkpoints.
    RelightImage {
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        light: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train the diffuse inverse-rendering stage; writes into --out-dir.
    TrainStage1 {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Train the residual refinement stage on the photos; writes into --out-dir.
    TrainStage2 {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Relight each video frame independently; writes frames into --out-dir.
    RelightVideo {
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        /// JSON array with one SH light per frame.
        #[arg(long)]
        lights: PathBuf,
    },
    /// Deep-video-prior stabilization of a relit video; writes into --out-dir.
    Stabilize {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        relit: PathBuf,
        /// JSON array with one SH light per frame.
        #[arg(long)]
        lights: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train without the tiled light input.
        #[arg(long)]
        no_conditioning: bool,
    },
    /// Image or video quality metrics as JSON.
    Metrics {
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Frame directory for temporal MAE.
        #[arg(long, conflicts_with_all = ["a", "b"])]
        video: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compare temporal flicker of two videos; writes JSON and CSV into --out-dir.
    FlickerReport {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        masks: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum VariantArg {
    A,
    B,
    C,
}

impl From<VariantArg> for Stage2Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::A => Stage2Variant::A,
            VariantArg::B => Stage2Variant::B,
            VariantArg::C => Stage2Variant::C,
        }
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Domain(String),
}

impl From<relight_core::Error> for Failure {
    fn from(e: relight_core::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Domain(format!("json: {e}"))
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Domain(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let threads = cli.global.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Domain(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.global, cli.command))
}

/// Settings from `--config`, or defaults.
fn load_config<T: DeserializeOwned + Default>(g: &Global) -> CliResult<T> {
    match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
        }
        None => Ok(T::default()),
    }
}

fn out_dir(g: &Global) -> CliResult<&Path> {
    g.out_dir
        .as_deref()
        .ok_or_else(|| Failure::Usage("this command needs --out-dir".into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| io_err(path, e))
}

fn read_lights(path: &Path) -> CliResult<Vec<ShLight>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let lights: Vec<ShLight> = serde_json::from_str(&text)?;
    for l in &lights {
        l.validate()?;
    }
    Ok(lights)
}

fn read_video(frames: &Path, masks: Option<&Path>) -> CliResult<VideoSequence> {
    Ok(VideoSequence::read_dirs(frames, masks, 30.0)?)
}

fn manifest_path(flag: Option<PathBuf>, from_config: &Option<PathBuf>) -> CliResult<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| Failure::Usage("a dataset manifest is required (--manifest or config)".into()))
}

fn dispatch(g: &Global, command: Command) -> CliResult {
    let seed = g.seed.unwrap_or(0);
    match command {
        Command::ShProject { env, output, samples } => {
            let map = EnvMap::read(&env)?;
            let light = project_envmap(&map, quadrature(&map, samples))?;
            light.write(&output)?;
        }
        Command::ShRotate { light, deg, output } => {
            let l = ShLight::read(&light)?;
            rotate_z(&l, deg.to_radians())?.write(&output)?;
        }
        Command::GenLights {
            envs,
            interval,
            procedural,
            output,
        } => {
            let interval = interval.unwrap_or(36.0);
            let maps = if envs.is_empty() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..procedural.unwrap_or(1))
                    .map(|_| procedural_envmap(&mut rng, 64, 0.8))
                    .collect::<Result<Vec<_>, _>>()?
            } else {
                if procedural.is_some() {
                    return Err(Failure::Usage(
                        "--procedural cannot be combined with env map files".into(),
                    ));
                }
                envs.iter().map(EnvMap::read).collect::<Result<Vec<_>, _>>()?
            };
            let n = maps.iter().map(|m| quadrature(m, 0)).max().unwrap_or(1000);
            let set = expand_light_set(&maps, interval, n)?;
            let mut value = serde_json::to_value(&set)?;
            value["seed"] = seed.into();
            write_json(&output, &value)?;
        }
        Command::GenDataset {
            train,
            test,
            resolution,
            n_dirs,
            interval,
            no_gloss,
        } => {
            let mut cfg: DatasetConfig = load_config(g)?;
            if let Some(v) = train {
                cfg.train = v;
            }
            if let Some(v) = test {
                cfg.test = v;
            }
            if let Some(v) = resolution {
                cfg.resolution = v;
            }
            if let Some(v) = n_dirs {
                cfg.n_dirs = v;
            }
            if let Some(v) = interval {
                cfg.interval_deg = v;
            }
            if no_gloss {
                cfg.gloss = false;
            }
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            let manifest = generate_dataset(&cfg, out_dir(g)?)?;
            println!(
                "wrote {} scenes to {}",
                manifest.scenes.len(),
                out_dir(g)?.join("manifest.json").display()
            );
        }
        Command::Render {
            scene,
            light,
            resolution,
            n_dirs,
            glossy,
            output,
            mask_out,
        } => {
            let text = std::fs::read_to_string(&scene).map_err(|e| io_err(&scene, e))?;
            let scene = Scene::from_json(&text)?;
            let light = ShLight::read(&light)?;
            let sample = RenderSample::render(&scene, resolution, n_dirs, seed)?;
            let image = if glossy {
                render_glossy(&sample, &light, [0.0, 0.0, 1.0])?
            } else {
                sample.diffuse(&light)?
            };
            write_image(&image, &output)?;
            if let Some(m) = mask_out {
                sample.mask().write_png(m)?;
            }
        }
        Command::RelightImage {
            stage1,
            stage2,
            image,
            mask,
            light,
            output,
        } => {
            let s1 = Stage1Model::load(&stage1)?;
            let s2 = Stage2Model::load(&stage2)?;
            let mask = BinaryMask::read_png(&mask)?;
            let img = read_image(&image)?;
            let light = ShLight::read(&light)?;
            let out = relight(&s1, &s2, &img, &mask, &light)?;
            write_image(&out.image, &output)?;
        }
        Command::TrainStage1 {
            manifest,
            epochs,
            max_steps,
            checkpoint_every,
        } => {
            let mut cfg: Stage1TrainConfig = load_config(g)?;
            apply_train_flags(&mut cfg.train, g, epochs, max_steps, checkpoint_every);
            let manifest = manifest_path(manifest, &cfg.train.manifest)?;
            cfg.train.manifest = Some(manifest.clone());
            let ds = Dataset::load(&manifest)?;
            cfg.net.resolution = ds.manifest.resolution;
            if let Some(s) = g.seed {
                cfg.net.seed = s;
            }
            let dir = out_dir(g)?;
            let run = train_stage1(&cfg, &ds.train, Some(dir))?;
            write_json(&dir.join("stage1_config.json"), &cfg)?;
            let last = run.log.last().map(|b| b.total).unwrap_or(f64::NAN);
            println!("trained {} steps, final loss {last:.6}", run.log.len());
        }
        Command::TrainStage2 {
            manifest,
            stage1,
            variant,
            epochs,
            max_steps,
            checkpoint_every,
        } => {
            let mut cfg: Stage2TrainConfig = load_config(g)?;
            apply_train_flags(&mut cfg.train, g, epochs, max_steps, checkpoint_every);
            if let Some(v) = variant {
                cfg.variant = v.into();
            }
            let manifest = manifest_path(manifest, &cfg.train.manifest)?;
            cfg.train.manifest = Some(manifest.clone());
            let ds = Dataset::load(&manifest)?;
            let s1 = Stage1Model::load(&stage1)?;
            let dir = out_dir(g)?;
            let run = train_stage2(&cfg, &s1, &ds.train, Some(dir))?;
            write_json(&dir.join("stage2_config.json"), &cfg)?;
            let last = run.log.last().copied().unwrap_or(f64::NAN);
            println!("trained {} steps, final l1 {last:.6}", run.log.len());
        }
        Command::RelightVideo {
            stage1,
            stage2,
            frames,
            masks,
            lights,
        } => {
            let s1 = Stage1Model::load(&stage1)?;
            let s2 = Stage2Model::load(&stage2)?;
            let video = read_video(&frames, masks.as_deref())?;
            let lights = read_lights(&lights)?;
            let out = relight_video(&s1, &s2, &video, &lights)?;
            let dir = out_dir(g)?;
            out.write_dirs(&dir.join("frames"), Some(&dir.join("masks")))?;
        }
        Command::Stabilize {
            frames,
            masks,
            relit,
            lights,
            epochs,
            no_conditioning,
        } => {
            let mut cfg: DvpConfig = load_config(g)?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if no_conditioning {
                cfg.light_conditioning = false;
            }
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            let video = read_video(&frames, masks.as_deref())?;
            let relit = read_video(&relit, masks.as_deref())?;
            let lights = lights.as_deref().map(read_lights).transpose()?;
            if cfg.light_conditioning && lights.is_none() {
                return Err(Failure::Usage(
                    "--lights is required unless --no-conditioning is set".into(),
                ));
            }
            let out = stabilize(&video, &relit, lights.as_deref(), &cfg)?;
            let dir = out_dir(g)?;
            out.video.write_dirs(&dir.join("frames"), Some(&dir.join("masks")))?;
            write_json(
                &dir.join("stabilize.json"),
                &serde_json::json!({ "config": cfg, "epoch_loss": out.epoch_loss }),
            )?;
        }
        Command::Metrics {
            a,
            b,
            mask,
            video,
            output,
        } => {
            let report = match (a, b, video) {
                (Some(a), Some(b), None) => {
                    let a = read_image(&a)?;
                    let b = read_image(&b)?;
                    let mask = match mask {
                        Some(m) => BinaryMask::read_png(m)?,
                        None => BinaryMask::full(a.height(), a.width()),
                    };
                    MetricsReport::for_images(&a, &b, &mask)?
                }
                (None, None, Some(v)) => MetricsReport::for_video(&read_video(&v, mask.as_deref())?)?,
                _ => return Err(Failure::Usage("give either --a and --b, or --video".into())),
            };
            match output {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::FlickerReport {
            before,
            after,
            reference,
            masks,
        } => {
            let before = read_video(&before, masks.as_deref())?;
            let after = read_video(&after, masks.as_deref())?;
            let reference = reference.map(|r| read_video(&r, masks.as_deref())).transpose()?;
            let report = flicker_report(&before, &after, reference.as_ref())?;
            report.write(out_dir(g)?)?;
            println!(
                "temporal MAE ratio {:.4}, correlation {:.4}",
                report.ratio, report.correlation
            );
        }
    }
    Ok(())
}

fn apply_train_flags(
    cfg: &mut relight_core::pipeline::TrainConfig,
    g: &Global,
    epochs: Option<usize>,
    max_steps: Option<usize>,
    checkpoint_every: Option<usize>,
) {
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if max_steps.is_some() {
        cfg.max_steps = max_steps;
    }
    if let Some(c) = checkpoint_every {
        cfg.checkpoint_every = c;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
}

/// Projection sample count; 0 selects one point per texel.
fn quadrature(map: &EnvMap, samples: usize) -> usize {
    if samples == 0 {
        (map.width() * map.height()).max(1000)
    } else {
        samples
    }
}

fn is_rlt(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("rlt")
}

/// PNG or RLT1 by extension.
fn read_image(path: &Path) -> CliResult<ImageTensor> {
    Ok(if is_rlt(path) {
        ImageTensor::read_rlt(path)?
    } else {
        ImageTensor::read_png(path)?
    })
}

fn write_image(img: &ImageTensor, path: &Path) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    if is_rlt(path) {
        img.write_rlt(path)?;
    } else {
        img.write_png(path)?;
    }
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use depthwarp::camera::{CameraIntrinsics, Pose};
use depthwarp::complete::{self, apply_displacement, fill_unresolved, Completer};
use depthwarp::datagen::{self, BlockRemovalConfig, PoseSamplerConfig};
use depthwarp::image::DepthImage;
use depthwarp::io;
use depthwarp::metrics::{psnr, ContentSource, LossConfig, MetricsReport};
use depthwarp::scene::{random_scene, LemmaSuiteConfig, SceneSamplerConfig};
use depthwarp::warp::{warp_depth, warp_rgbd, WarpConfig};
use depthwarp::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_FORMAT: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "depthwarp", version, about = "Depth-image warping, occlusion synthesis and completion")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Dual,
    Blocks,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Nearest,
    Diffuse,
}

#[derive(Clone, Copy, ValueEnum)]
enum ContentArg {
    Prediction,
    Occluded,
}

#[derive(Subcommand)]
enum Command {
    /// Build a training set from the depth images in a directory.
    Generate {
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        /// Directory of .dpm (raw) or .png (16-bit, mm) depth images.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 25)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Translation range in meters (dual).
        #[arg(long, default_value_t = 1.0)]
        trans: f64,
        /// Yaw range in degrees (dual).
        #[arg(long, default_value_t = 15.0)]
        yaw: f64,
        #[arg(long, default_value_t = 2)]
        supersample: usize,
        /// Largest removed fraction (blocks).
        #[arg(long, default_value_t = 0.2)]
        max_fraction: f64,
        #[arg(long, default_value_t = 1)]
        block_min: usize,
        #[arg(long, default_value_t = 50)]
        block_max: usize,
        /// "f cx cy"; defaults to f = 0.875 * width with a centered principal point.
        #[arg(long)]
        intrinsics: Option<String>,
    },
    /// Forward-warp a depth image (and optionally a colour image) to a new pose.
    Warp {
        #[arg(long)]
        depth: PathBuf,
        /// "tx ty tz yaw", meters and degrees.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        intrinsics: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        supersample: usize,
        /// PPM colour image registered with the depth.
        #[arg(long, requires = "rgb_out")]
        rgb: Option<PathBuf>,
        #[arg(long, requires = "rgb")]
        rgb_out: Option<PathBuf>,
    },
    /// Fill the masked pixels of an occluded depth image.
    Complete {
        #[arg(long)]
        occluded: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Displacement field to apply; overrides --method.
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "nearest")]
        method: MethodArg,
        /// Harmonic fill of pixels whose source was unknown.
        #[arg(long)]
        fill_unresolved: bool,
        #[arg(long, default_value_t = 2000)]
        iterations: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Median fusion of completions from nearby views.
    Fuse {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long, default_value_t = complete::DEFAULT_FUSION_VIEWS)]
        poses: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "nearest")]
        method: MethodArg,
        #[arg(long)]
        intrinsics: Option<String>,
        #[arg(long, default_value_t = 2)]
        supersample: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a completed depth image on a mask.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Occluded input, needed for --content occluded.
        #[arg(long)]
        occluded: Option<PathBuf>,
        /// Predicted and true PPM colour images; adds PSNR.
        #[arg(long, num_args = 2, value_names = ["PRED", "TRUTH"])]
        rgb: Option<Vec<PathBuf>>,
        #[arg(long, value_enum, default_value = "prediction")]
        content: ContentArg,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check the dual-warp occlusion against ray-cast ground truth.
    VerifyLemma {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        supersample: usize,
    },
    /// Ray-cast a depth image of a scene.
    Render {
        /// Scene text file.
        #[arg(long, conflicts_with = "random")]
        scene: Option<PathBuf>,
        /// Use random scene number N instead of a file.
        #[arg(long)]
        random: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the scene used.
        #[arg(long)]
        scene_out: Option<PathBuf>,
        /// Camera-to-world "tx ty tz yaw".
        #[arg(long, allow_hyphen_values = true, default_value = "0 0 0 0")]
        pose: String,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 120)]
        height: usize,
        #[arg(long)]
        intrinsics: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Lib(Error),
    Violation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_numbers<const N: usize>(text: &str, what: &str) -> CliResult<[f64; N]> {
    let vals: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| Failure::Usage(format!("{what}: '{text}' is not a list of numbers")))?;
    vals.try_into().map_err(|_| Failure::Usage(format!("{what}: expected {N} numbers, got '{text}'")))
}

fn parse_pose(text: &str) -> CliResult<Pose> {
    let [tx, ty, tz, yaw] = parse_numbers::<4>(text, "--pose")?;
    Ok(Pose::from_yaw_translation(yaw.to_radians(), tx, ty, tz))
}

fn intrinsics_for(text: Option<&str>, width: usize, height: usize) -> CliResult<CameraIntrinsics> {
    match text {
        Some(t) => {
            let [f, cx, cy] = parse_numbers::<3>(t, "--intrinsics")?;
            Ok(CameraIntrinsics::new(f, cx, cy)?)
        }
        None => Ok(CameraIntrinsics::centered(0.875 * width as f64, width, height)?),
    }
}

fn method(m: MethodArg, iterations: usize, tolerance: f64) -> Completer {
    match m {
        MethodArg::Nearest => Completer::Nearest,
        MethodArg::Diffuse => Completer::Diffuse { iterations, tolerance },
    }
}

fn list_depth_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::from)?
        .map(|e| e.map(|e| e.path()).map_err(Error::from))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| {
            p.is_file()
                && p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("dpm") || e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Usage(format!("no .dpm or .png depth images in {}", dir.display())));
    }
    Ok(files)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate {
            strategy,
            input,
            out,
            pairs,
            seed,
            trans,
            yaw,
            supersample,
            max_fraction,
            block_min,
            block_max,
            intrinsics,
        } => {
            let files = list_depth_files(&input)?;
            let images = files.iter().map(io::read_depth_auto).collect::<Result<Vec<DepthImage>, _>>()?;
            let k = intrinsics_for(intrinsics.as_deref(), images[0].width(), images[0].height())?;
            let manifest = match strategy {
                StrategyArg::Dual => {
                    let pose_cfg = PoseSamplerConfig { translation_range: trans, yaw_range: yaw, seed };
                    let warp_cfg = WarpConfig::with_supersample(supersample);
                    datagen::generate_strategy1(&images, &k, &pose_cfg, &warp_cfg, pairs, &out)?
                }
                StrategyArg::Blocks => {
                    let cfg = BlockRemovalConfig {
                        max_removed_fraction: max_fraction,
                        block_side_range: (block_min, block_max),
                        seed,
                    };
                    datagen::generate_strategy2(&images, &k, &cfg, pairs, &out)?
                }
            };
            println!("entries: {}", manifest.entries.len());
        }
        Command::Warp { depth, pose, intrinsics, out, supersample, rgb, rgb_out } => {
            let pose = parse_pose(&pose)?;
            let src = io::read_depth_auto(&depth)?;
            let k = intrinsics_for(intrinsics.as_deref(), src.width(), src.height())?;
            let cfg = WarpConfig::with_supersample(supersample);
            match (rgb, rgb_out) {
                (Some(rgb), Some(rgb_out)) => {
                    let colour = io::read_rgb(&rgb)?;
                    let (d, c) = warp_rgbd(&src, &colour, &k, &pose, &cfg)?;
                    io::write_depth_auto(&out, &d)?;
                    io::write_rgb(&rgb_out, &c)?;
                }
                _ => io::write_depth_auto(&out, &warp_depth(&src, &k, &pose, &cfg)?)?,
            }
        }
        Command::Complete { occluded, mask, flow, method: m, fill_unresolved: fill, iterations, tolerance, out } => {
            let occ = io::read_depth_auto(&occluded)?;
            let mask = io::read_mask_for(&mask, &occ)?;
            let mut done = match flow {
                Some(path) => apply_displacement(&occ, &mask, &io::read_flow(&path)?)?,
                None => method(m, iterations, tolerance).complete(&occ, &mask)?,
            };
            println!("unresolved: {}", done.unresolved.count());
            if fill {
                done = fill_unresolved(&done, iterations, tolerance);
            }
            io::write_depth_auto(&out, &done.depth)?;
        }
        Command::Fuse { depth, poses, seed, method: m, intrinsics, supersample, out } => {
            let base = io::read_depth_auto(&depth)?;
            let k = intrinsics_for(intrinsics.as_deref(), base.width(), base.height())?;
            let poses = complete::default_fusion_poses(poses, seed);
            let completer = method(m, 2000, 1e-6);
            let fused = complete::fuse_views(&base, &k, &poses, &completer, &WarpConfig::with_supersample(supersample))?;
            io::write_depth_auto(&out, &fused)?;
        }
        Command::Eval { pred, truth, mask, occluded, rgb, content, json } => {
            let pred = io::read_depth_auto(&pred)?;
            let truth = io::read_depth_auto(&truth)?;
            let mask = io::read_mask_for(&mask, &truth)?;
            let occluded = occluded.map(io::read_depth_auto).transpose()?;
            let cfg = LossConfig {
                content_source: match content {
                    ContentArg::Prediction => ContentSource::Prediction,
                    ContentArg::Occluded => ContentSource::OccludedInput,
                },
                ..Default::default()
            };
            let mut report = MetricsReport::compute(&pred, &truth, occluded.as_ref(), &mask, &cfg)?;
            if let Some(paths) = rgb {
                let (a, b) = (io::read_rgb(&paths[0])?, io::read_rgb(&paths[1])?);
                report.psnr = Some(psnr(&a, &b, &mask)?);
            }
            print!("{}", if json { report.to_json() + "\n" } else { report.to_text() });
        }
        Command::VerifyLemma { trials, seed, supersample } => {
            let cfg = LemmaSuiteConfig { warp: WarpConfig::with_supersample(supersample), ..Default::default() };
            let reports = cfg.run(trials, seed)?;
            let bad: Vec<usize> = reports.iter().enumerate().filter(|(_, r)| r.violations > 0).map(|(i, _)| i).collect();
            for &i in &bad {
                log::warn!("trial {i}: {} violating pixels", reports[i].violations);
            }
            println!("violations: {}/{}", bad.len(), trials);
            if !bad.is_empty() {
                return Err(Failure::Violation(format!("{} trial(s) violate the containment", bad.len())));
            }
        }
        Command::Render { scene, random, seed, scene_out, pose, width, height, intrinsics, out } => {
            let scene = match (scene, random) {
                (Some(path), None) => io::read_scene(&path)?,
                (None, Some(index)) => random_scene(&SceneSamplerConfig::default(), seed, index)?,
                _ => return Err(Failure::Usage("give either --scene or --random".into())),
            };
            if let Some(path) = scene_out {
                io::write_scene(&path, &scene)?;
            }
            let k = intrinsics_for(intrinsics.as_deref(), width, height)?;
            let depth = scene.render_depth(&k, &parse_pose(&pose)?, width, height)?;
            io::write_depth_auto(&out, &depth)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) | Err(Failure::Lib(Error::InvalidArgument(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FORMAT)
        }
        Err(Failure::Violation(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_VIOLATION)
        }
    }
}

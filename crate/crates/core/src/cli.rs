//! The `svo` command line: subcommand parsing, JSON run configuration and
//! the drivers behind each subcommand.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors (nothing is
//! written), 2 on runtime errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::correlation::{extract_features, FlowProvider, OracleProvider, TrackerProvider};
use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::eval::{ate_rmse, AlignMode, Trajectory};
use crate::geometry::Intrinsics;
use crate::homography_gen::{generate_sequence, gt_correspondence, GeneratorConfig};
use crate::image::Image;
use crate::io::{read_pnm, read_trajectory, write_atomic, write_csv, write_pnm, write_trajectory};
use crate::saliency::{build_patch_set, salient_score_map, select_salient_patches, Interior, SelectionConfig};
use crate::seed::derive_seed;
use crate::selfcheck::run_selfcheck;
use crate::vo_pipeline::{run_sequence, PipelineConfig};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
/// Environment variable capping worker threads; 0 or unset means automatic.
pub const THREADS_ENV: &str = "SVO_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Oracle,
    Tracker,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Oracle noise, pixels.
    pub noise_sigma: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Oracle,
            noise_sigma: 0.0,
        }
    }
}

/// Everything a subcommand may read from `--config`. Unknown keys are
/// rejected; missing keys take the defaults, and the fully resolved
/// configuration is written next to the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    /// Input image directory (run-vo) or image (gen-homography,
    /// select-patches); the command-line flag wins.
    pub input: Option<PathBuf>,
    /// Output path; the command-line flag wins.
    pub output: Option<PathBuf>,
    pub provider: ProviderConfig,
    pub pipeline: PipelineConfig,
    /// Overrides the dataset intrinsics.
    pub intrinsics: Option<Intrinsics>,
    pub generator: GeneratorConfig,
    /// Spacing of the correspondence grid written by gen-homography, pixels.
    pub correspondence_spacing: usize,
    pub selection: SelectionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            input: None,
            output: None,
            provider: ProviderConfig::default(),
            pipeline: PipelineConfig::default(),
            intrinsics: None,
            generator: GeneratorConfig::default(),
            correspondence_spacing: 16,
            selection: SelectionConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.generator.validate()?;
        if let Some(k) = &self.intrinsics {
            k.validate()?;
        }
        if !(self.provider.noise_sigma >= 0.0 && self.provider.noise_sigma.is_finite()) {
            return Err(Error::Config("provider.noise_sigma must be finite and >= 0".into()));
        }
        if self.correspondence_spacing == 0 {
            return Err(Error::Config("correspondence_spacing must be positive".into()));
        }
        if self.selection.count == 0 || self.selection.grid == 0 {
            return Err(Error::Config("selection.count and selection.grid must be positive".into()));
        }
        Ok(())
    }

    /// Stream seeds derived from the master seed.
    fn stream(&self, tag: u64) -> u64 {
        derive_seed(self.seed, &[tag])
    }

    fn resolved_pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.stream(1),
            ..self.pipeline
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Parser, Debug)]
#[command(name = "svo", version, about = "Sparse salient-patch visual odometry tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run odometry over an image directory with a manifest.json.
    RunVo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a homography-warped training sequence from one image.
    GenHomography {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select salient patch centers in one image.
    SelectPatches {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Absolute trajectory error between two TUM files.
    EvalAte {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "sim3")]
        align: AlignMode,
    },
    /// Run the embedded invariant suite.
    Selfcheck,
}

/// Validation failures exit with 1 before any output; everything after
/// validation exits with 2.
enum Failure {
    Validation(Error),
    Runtime(Error),
}

fn validation<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Validation)
}

fn runtime<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got {value:?}")))?;
    if n > 0 {
        // a pool that is already built (repeated calls in one process) is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_VALIDATION;
    }
    let outcome = match cli.command {
        Command::RunVo { config, images, out } => run_vo(config, images, out),
        Command::GenHomography { config, image, out } => gen_homography(config, image, out),
        Command::SelectPatches { config, image, out } => select_patches(config, image, out),
        Command::EvalAte { est, gt, align } => eval_ate(&est, &gt, align),
        Command::Selfcheck => selfcheck(),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            EXIT_VALIDATION
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn config_or_default(path: Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(&p),
        None => Ok(RunConfig::default()),
    }
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("missing --{name} (or its config entry)")))
}

/// The resolved configuration with the effective paths filled in.
fn resolved_json(cfg: &RunConfig, input: &Path, output: &Path) -> Result<Vec<u8>> {
    let resolved = RunConfig {
        input: Some(input.to_path_buf()),
        output: Some(output.to_path_buf()),
        pipeline: cfg.resolved_pipeline(),
        ..cfg.clone()
    };
    let mut value = serde_json::to_value(&resolved).map_err(|e| Error::Format(e.to_string()))?;
    // the pipeline seed is derived, not configured; record it for the audit trail
    value["pipeline_seed"] = serde_json::json!(resolved.pipeline.seed);
    let text = serde_json::to_string_pretty(&value).map_err(|e| Error::Format(e.to_string()))?;
    Ok((text + "\n").into_bytes())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::Config(format!("output directory {} does not exist", dir.display())))
    }
}

fn run_vo(config: Option<PathBuf>, images: Option<PathBuf>, out: Option<PathBuf>) -> std::result::Result<(), Failure> {
    let cfg = validation(config_or_default(config))?;
    let images = validation(required(images, &cfg.input, "images"))?;
    let out = validation(required(out, &cfg.output, "out"))?;
    let out_dir = parent_dir(&out);
    validation(ensure_dir(&out_dir))?;
    let ds = validation(load_dataset(&images))?;
    if ds.images.len() < 2 {
        return Err(Failure::Validation(Error::Config("run-vo needs at least 2 frames".into())));
    }
    let intrinsics = cfg.intrinsics.unwrap_or(ds.manifest.intrinsics);
    let provider: Arc<dyn FlowProvider> = match cfg.provider.kind {
        ProviderKind::Oracle => Arc::new(OracleProvider {
            ground_truth: validation(ds.ground_truth())?,
            noise_sigma: cfg.provider.noise_sigma,
            seed: cfg.stream(2),
        }),
        ProviderKind::Tracker => Arc::new(TrackerProvider),
    };
    let resolved = validation(resolved_json(&cfg, &images, &out))?;

    let traj = runtime(run_sequence(&ds.images, &cfg.resolved_pipeline(), intrinsics, provider))?;
    // report against the manifest clock
    let stamped = runtime(Trajectory::from_entries(
        traj.entries().iter().map(|(t, p)| (ds.timestamps[*t as usize], *p)).collect(),
    ))?;
    runtime(write_trajectory(&stamped, &out))?;
    runtime(write_atomic(&out_dir.join(RESOLVED_CONFIG_FILE), &resolved))?;
    Ok(())
}

#[derive(Serialize)]
struct GeneratorManifest {
    width: usize,
    height: usize,
    seed: u64,
    frames: Vec<GeneratedFrame>,
    homographies: &'static str,
    correspondences: &'static str,
}

#[derive(Serialize)]
struct GeneratedFrame {
    index: usize,
    image: String,
    mask: String,
    homography: [f64; 9],
    augment: crate::homography_gen::AugmentDescriptor,
}

fn fmt_row(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.12e}")).collect::<Vec<_>>().join(",")
}

fn gen_homography(
    config: Option<PathBuf>,
    image: Option<PathBuf>,
    out: Option<PathBuf>,
) -> std::result::Result<(), Failure> {
    let cfg = validation(config_or_default(config))?;
    let image_path = validation(required(image, &cfg.input, "image"))?;
    let out = validation(required(out, &cfg.output, "out"))?;
    let base = validation(read_pnm(&image_path))?;
    let resolved = validation(resolved_json(&cfg, &image_path, &out))?;
    let seed = cfg.stream(3);
    let seq = runtime(generate_sequence(&base, &cfg.generator, seed))?;

    let (w, h) = (base.width(), base.height());
    let s = cfg.correspondence_spacing;
    let points: Vec<Vector2<f64>> = (s / 2..h)
        .step_by(s)
        .flat_map(|y| (s / 2..w).step_by(s).map(move |x| Vector2::new(x as f64, y as f64)))
        .collect();
    let (corr, vis) = runtime(gt_correspondence(&seq, &points))?;

    runtime(std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e)))?;
    let ext = if base.channels() == 3 { "ppm" } else { "pgm" };
    let mut frames = Vec::with_capacity(seq.len());
    let mut hom_rows = Vec::with_capacity(seq.len());
    let mut corr_rows = Vec::new();
    for (i, frame) in seq.frames.iter().enumerate() {
        let t = i + 1;
        let name = format!("frame_{t:03}.{ext}");
        let mask = format!("mask_{t:03}.pgm");
        runtime(write_pnm(frame, &out.join(&name)))?;
        runtime(write_pnm(&seq.visibility_image(i), &out.join(&mask)))?;
        let hm = seq.homographies[i].to_row_major();
        hom_rows.push(format!("{t},{}", fmt_row(&hm)));
        for (l, q) in corr[i].iter().enumerate() {
            corr_rows.push(format!("{t},{l},{:.9},{:.9},{}", q.x, q.y, u8::from(vis.get(t, l))));
        }
        frames.push(GeneratedFrame {
            index: t,
            image: name,
            mask,
            homography: hm,
            augment: seq.descriptors[i],
        });
    }
    let header: Vec<String> = (0..9).map(|k| format!("h{}{}", k / 3, k % 3)).collect();
    runtime(write_csv(&out.join("homographies.csv"), &format!("t,{}", header.join(",")), &hom_rows))?;
    runtime(write_csv(&out.join("correspondences.csv"), "t,point_id,x,y,visible", &corr_rows))?;
    let manifest = GeneratorManifest {
        width: w,
        height: h,
        seed,
        frames,
        homographies: "homographies.csv",
        correspondences: "correspondences.csv",
    };
    let json = runtime(serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string())))?;
    runtime(write_atomic(&out.join("manifest.json"), (json + "\n").as_bytes()))?;
    runtime(write_atomic(&out.join(RESOLVED_CONFIG_FILE), &resolved))?;
    Ok(())
}

fn select_patches(
    config: Option<PathBuf>,
    image: Option<PathBuf>,
    out: Option<PathBuf>,
) -> std::result::Result<(), Failure> {
    let cfg = validation(config_or_default(config))?;
    let image_path = validation(required(image, &cfg.input, "image"))?;
    let out = validation(required(out, &cfg.output, "out"))?;
    let out_dir = parent_dir(&out);
    validation(ensure_dir(&out_dir))?;
    let image: Image = validation(read_pnm(&image_path))?.to_gray();
    let resolved = validation(resolved_json(&cfg, &image_path, &out))?;

    let features = runtime(extract_features(&image, &cfg.pipeline.features))?;
    let scores = runtime(salient_score_map(&features))?;
    let selection = runtime(select_salient_patches(&scores, &cfg.selection))?;
    if selection.shortfall > 0 {
        log::warn!("only {} of {} salient centers available", selection.centers.len(), cfg.selection.count);
    }
    let set = runtime(build_patch_set(
        &selection.centers,
        selection.centers.len(),
        cfg.pipeline.random_patches,
        Interior {
            width: features.width(),
            height: features.height(),
            radius: cfg.selection.patch_radius,
        },
        cfg.stream(4),
    ))?;
    let stride = features.stride();
    let rows: Vec<String> = set
        .centers
        .iter()
        .map(|c| format!("{},{},{:.12e},{}", c.col * stride, c.row * stride, c.score, c.label.as_str()))
        .collect();
    runtime(write_csv(&out, "x,y,score,label", &rows))?;
    runtime(write_atomic(&out_dir.join(RESOLVED_CONFIG_FILE), &resolved))?;
    Ok(())
}

fn eval_ate(est: &Path, gt: &Path, align: AlignMode) -> std::result::Result<(), Failure> {
    let est = validation(read_trajectory(est))?;
    let gt = validation(read_trajectory(gt))?;
    let ate = runtime(ate_rmse(&est, &gt, align))?;
    println!("ATE_RMSE_m {ate:.9}");
    Ok(())
}

fn selfcheck() -> std::result::Result<(), Failure> {
    let results = run_selfcheck();
    let mut failed = 0;
    for r in &results {
        println!("{} {} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        return Err(Failure::Runtime(Error::InvalidInput(format!("{failed} self-checks failed"))));
    }
    Ok(())
}

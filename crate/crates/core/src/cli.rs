//! Command-line front end.
//!
//! Settings resolve in the order command line, then `--config` file, then
//! built-in defaults. The config file holds one `key = value` pair per
//! line; `#` starts a comment.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::assign::{assign, build_anchor_grid, targets_from, AnchorPrediction, GtKind, ANCHOR_SIZE_DOTA, DEFAULT_STRIDE};
use crate::batch::{default_library, image_seed};
use crate::dataset::{
    derive_points, format_dota, group_by_patch, load_dota_dir, merge_detections, parse_dota, read_detections_csv,
    read_points_csv, split_image, write_detections_csv, write_points_csv, GtRecord, PointAnnotation,
    DEFAULT_OVERLAP, DEFAULT_PATCH_SIZE, MERGE_NMS_IOU, NOISE_LEVELS,
};
use crate::eval::{evaluate_map, noise_sweep, noise_sweep_csv, shape_at_point, ApMethod, EvalConfig, GroundTruth};
use crate::geometry::{transform_rbox, ImageSize, Point, RBox};
use crate::losses::{grad_check, GradCheckCase, LossName};
use crate::pattern::{
    generate_setrc_library, load_sketch_library, synthesize_seeded, LabeledPoint, PatternLibrary, SynthesisConfig,
};
use crate::render::{draw_point, draw_rbox, PALETTE};
use crate::transform::{apply_transform, fit_demo, sample_transform, FitObject, FitProblem, FitRole, FitSettings, TransformSpec};

/// Gradient-check tolerance on the relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "p2rkit", version, about = "Point-supervised oriented detection toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PatternSet {
    Setrc,
    Setsk,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub pattern_set: Option<PatternSet>,
    /// Directory of `<category>.png` sketches.
    #[arg(long, global = true)]
    pub sketch_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub patch_size: Option<u32>,
    #[arg(long, global = true)]
    pub overlap: Option<u32>,
    /// Anchors per grid cell.
    #[arg(long, global = true, value_parser = parse_anchors)]
    pub anchors: Option<usize>,
    /// Point-noise level(s) as a fraction of box height, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sigma_noise: Option<Vec<f64>>,
}

fn parse_anchors(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n @ (1 | 3 | 5)) => Ok(n),
        _ => Err(format!("anchors must be 1, 3 or 5, got {s}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformChoice {
    Flip,
    Rotate,
    Scale,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreSource {
    /// Every class probability equals `1 / classes`.
    Uniform,
    /// Probabilities drawn from the seed.
    Random,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Overlay synthetic patterns on images and write their boxes.
    Synth {
        /// Directory of PNG images.
        #[arg(long)]
        images: PathBuf,
        /// Point labels, `image_id,category,x,y`.
        #[arg(long, conflicts_with = "gt")]
        points: Option<PathBuf>,
        /// DOTA annotations to derive point labels from.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        patterns_per_image: Option<usize>,
        /// Shapes without curve textures.
        #[arg(long)]
        plain: bool,
    },
    /// Compare analytic loss gradients with finite differences.
    Gradcheck {
        /// Random points per loss.
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
    },
    /// Fit boxes by gradient descent on the consistency losses.
    Fitdemo {
        #[arg(long, value_enum, default_value_t = TransformChoice::Rotate)]
        transform: TransformChoice,
        /// Objects supervised only by consistency.
        #[arg(long, default_value_t = 3)]
        real: usize,
        /// Objects with a known box.
        #[arg(long, default_value_t = 1)]
        synthetic: usize,
    },
    /// Tile large images into overlapping patches.
    Split {
        /// PNG file or directory.
        #[arg(long)]
        images: PathBuf,
        /// DOTA annotation directory (files named after the images).
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Merge patch detections into image detections.
    Merge {
        /// Detections with patch ids, `image_id,category,score,x,y,w,h,theta`.
        #[arg(long)]
        dets: PathBuf,
        #[arg(long, default_value_t = MERGE_NMS_IOU)]
        nms_iou: f64,
    },
    /// Run label assignment for one image's point and box labels.
    Assign {
        #[arg(long)]
        points: PathBuf,
        /// DOTA file whose boxes join as box targets.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Image to take from the points file (default: first).
        #[arg(long)]
        image_id: Option<String>,
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        #[arg(long, default_value_t = ANCHOR_SIZE_DOTA)]
        anchor_size: f64,
        #[arg(long, value_enum, default_value_t = ScoreSource::Uniform)]
        scores: ScoreSource,
    },
    /// Rotated AP50 of detections, or the point-noise sweep.
    Eval {
        #[arg(long)]
        dets: Option<PathBuf>,
        /// DOTA annotation directory or file.
        #[arg(long)]
        gt: PathBuf,
        /// Area under the curve instead of 11-point interpolation.
        #[arg(long)]
        all_point: bool,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Evaluate boxes placed at noisy points for each noise level.
        #[arg(long)]
        sweep: bool,
        /// Row label in the CSV table.
        #[arg(long, default_value = "p2rkit")]
        method: String,
    },
    /// Draw boxes and points over an image.
    Inspect {
        #[arg(long)]
        image: PathBuf,
        /// DOTA annotation file.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        dets: Option<PathBuf>,
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        min_score: f64,
        /// Also render the transformed view.
        #[arg(long, value_enum)]
        transform: Option<TransformChoice>,
    },
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub pattern_set: PatternSet,
    pub sketch_dir: Option<PathBuf>,
    pub patch_size: u32,
    pub overlap: u32,
    pub anchors: usize,
    pub sigma_noise: Option<Vec<f64>>,
    pub synthesis: SynthesisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            pattern_set: PatternSet::Setrc,
            sketch_dir: None,
            patch_size: DEFAULT_PATCH_SIZE,
            overlap: DEFAULT_OVERLAP,
            anchors: 5,
            sigma_noise: None,
            synthesis: SynthesisConfig::default(),
        }
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

fn parse_val<T: std::str::FromStr>(key: &str, v: &str) -> anyhow::Result<T> {
    v.parse().map_err(|_| anyhow!("config key {key}: cannot parse {v:?}"))
}

fn parse_list(key: &str, v: &str) -> anyhow::Result<Vec<f64>> {
    v.split(',').map(|s| parse_val(key, s.trim())).collect()
}

impl RunConfig {
    /// Defaults, overridden by the config file, overridden by flags.
    pub fn resolve(args: &CommonArgs) -> anyhow::Result<Self> {
        let mut c = RunConfig::default();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            c.apply(&parse_config_text(&text)?)?;
        }
        if let Some(v) = args.seed {
            c.seed = v;
        }
        if let Some(v) = &args.out {
            c.out = Some(v.clone());
        }
        if let Some(v) = args.pattern_set {
            c.pattern_set = v;
        }
        if let Some(v) = &args.sketch_dir {
            c.sketch_dir = Some(v.clone());
        }
        if let Some(v) = args.patch_size {
            c.patch_size = v;
        }
        if let Some(v) = args.overlap {
            c.overlap = v;
        }
        if let Some(v) = args.anchors {
            c.anchors = v;
        }
        if let Some(v) = &args.sigma_noise {
            c.sigma_noise = Some(v.clone());
        }
        c.synthesis.rng_seed = c.seed;
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> anyhow::Result<()> {
        for (k, v) in kv {
            let s = &mut self.synthesis;
            match k.as_str() {
                "seed" => self.seed = parse_val(k, v)?,
                "out" => self.out = Some(PathBuf::from(v)),
                "pattern_set" => {
                    self.pattern_set = PatternSet::from_str(v, true).map_err(|e| anyhow!("config key {k}: {e}"))?
                }
                "sketch_dir" => self.sketch_dir = Some(PathBuf::from(v)),
                "patch_size" => self.patch_size = parse_val(k, v)?,
                "overlap" => self.overlap = parse_val(k, v)?,
                "anchors" => self.anchors = parse_anchors(v).map_err(|e| anyhow!(e))?,
                "sigma_noise" => self.sigma_noise = Some(parse_list(k, v)?),
                "sigma_base" => s.sigma_base = parse_val(k, v)?,
                "sigma_w" => s.sigma_w = parse_val(k, v)?,
                "sigma_r" => s.sigma_r = parse_val(k, v)?,
                "flip_prob" => s.flip_prob = parse_val(k, v)?,
                "rotation_prob" => s.rotation_prob = parse_val(k, v)?,
                "placement_iou_max" => s.placement_iou_max = parse_val(k, v)?,
                "patterns_per_image" => s.patterns_per_image = Some(parse_val(k, v)?),
                "tight_arrangement_prob" => s.tight_arrangement_prob = parse_val(k, v)?,
                "placement_retries" => s.placement_retries = parse_val(k, v)?,
                other => bail!("unknown config key {other:?}"),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(
            self.patch_size > self.overlap,
            "patch size {} must exceed overlap {}",
            self.patch_size,
            self.overlap
        );
        if let Some(list) = &self.sigma_noise {
            ensure!(!list.is_empty(), "empty noise list");
            for s in list {
                ensure!(*s >= 0.0 && s.is_finite(), "noise level must be non-negative, got {s}");
            }
        }
        self.synthesis.validate()?;
        Ok(())
    }

    fn out_dir(&self) -> anyhow::Result<&Path> {
        self.out.as_deref().ok_or_else(|| anyhow!("--out is required for this command"))
    }
}

fn require(path: &Path, what: &str) -> anyhow::Result<()> {
    ensure!(path.exists(), "{what} not found: {}", path.display());
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// PNG files of a directory (or the file itself), sorted by name.
pub fn list_pngs(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut v: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    v.sort();
    Ok(v)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

fn load_rgb(path: &Path) -> anyhow::Result<RgbImage> {
    Ok(image::open(path).with_context(|| format!("reading {}", path.display()))?.to_rgb8())
}

fn encode_png(img: &RgbImage) -> anyhow::Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn load_gt_map(path: &Path) -> anyhow::Result<BTreeMap<String, Vec<GtRecord>>> {
    if path.is_dir() {
        Ok(load_dota_dir(path)?)
    } else {
        let mut m = BTreeMap::new();
        m.insert(stem(path), parse_dota(path)?);
        Ok(m)
    }
}

/// Serializes output files; records each file's SHA-256.
struct ManifestWriter {
    root: PathBuf,
    entries: Vec<(String, String)>,
}

impl ManifestWriter {
    fn new(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.entries.push((sha256_hex(bytes), rel.to_string()));
        Ok(())
    }

    fn finish(self, header: &[(&str, String)]) -> anyhow::Result<()> {
        let mut s = String::new();
        for (k, v) in header {
            s.push_str(&format!("# {k} = {v}\n"));
        }
        for (h, rel) in &self.entries {
            s.push_str(&format!("{h}  {rel}\n"));
        }
        fs::write(self.root.join("manifest.txt"), s)?;
        Ok(())
    }
}

/// Parses arguments already split into a [`Cli`] and runs the command,
/// writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.common)?;
    match &cli.command {
        Command::Synth {
            images,
            points,
            gt,
            patterns_per_image,
            plain,
        } => cmd_synth(&cfg, images, points.as_deref(), gt.as_deref(), *patterns_per_image, *plain, out),
        Command::Gradcheck { points, epsilon } => cmd_gradcheck(&cfg, *points, *epsilon, out),
        Command::Fitdemo {
            transform,
            real,
            synthetic,
        } => cmd_fitdemo(&cfg, *transform, *real, *synthetic, out),
        Command::Split { images, gt } => cmd_split(&cfg, images, gt.as_deref(), out),
        Command::Merge { dets, nms_iou } => cmd_merge(&cfg, dets, *nms_iou, out),
        Command::Assign {
            points,
            gt,
            image_id,
            width,
            height,
            anchor_size,
            scores,
        } => cmd_assign(
            &cfg,
            points,
            gt.as_deref(),
            image_id.as_deref(),
            ImageSize::new(*width, *height),
            *anchor_size,
            *scores,
            out,
        ),
        Command::Eval {
            dets,
            gt,
            all_point,
            iou,
            sweep,
            method,
        } => {
            let ecfg = EvalConfig {
                iou_threshold: *iou,
                method: if *all_point { ApMethod::AllPoint } else { ApMethod::ElevenPoint },
            };
            if *sweep {
                cmd_sweep(&cfg, gt, &ecfg, out)
            } else {
                let dets = dets.as_deref().ok_or_else(|| anyhow!("--dets is required unless --sweep is given"))?;
                cmd_eval(&cfg, dets, gt, &ecfg, method, out)
            }
        }
        Command::Inspect {
            image,
            gt,
            dets,
            points,
            min_score,
            transform,
        } => cmd_inspect(&cfg, image, gt.as_deref(), dets.as_deref(), points.as_deref(), *min_score, *transform, out),
    }
}

fn labeled(points: &[PointAnnotation]) -> Vec<LabeledPoint> {
    points
        .iter()
        .map(|p| LabeledPoint::new(p.x, p.y, p.category.clone()))
        .collect()
}

pub fn cmd_synth(
    cfg: &RunConfig,
    images: &Path,
    points: Option<&Path>,
    gt: Option<&Path>,
    patterns_per_image: Option<usize>,
    plain: bool,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    require(images, "image directory")?;
    let root = cfg.out_dir()?;
    match (points, gt) {
        (Some(p), None) => require(p, "points file")?,
        (None, Some(g)) => require(g, "annotation directory")?,
        _ => bail!("give exactly one of --points or --gt"),
    }
    if cfg.pattern_set == PatternSet::Setsk {
        let dir = cfg.sketch_dir.as_deref().ok_or_else(|| anyhow!("--sketch-dir is required for setsk"))?;
        require(dir, "sketch directory")?;
    }
    let files = list_pngs(images)?;
    let mut synthesis = cfg.synthesis.clone();
    if patterns_per_image.is_some() {
        synthesis.patterns_per_image = patterns_per_image;
    }

    let mut per_image: Vec<(String, Vec<PointAnnotation>)> = Vec::with_capacity(files.len());
    let sigma = cfg.sigma_noise.as_ref().and_then(|v| v.first().copied()).unwrap_or(0.0);
    if let Some(p) = points {
        let mut all = read_points_csv(fs::File::open(p)?)?;
        for f in &files {
            let s = stem(f);
            per_image.push((s.clone(), all.remove(&s).unwrap_or_default()));
        }
    } else if let Some(g) = gt {
        let gts = load_gt_map(g)?;
        for (i, f) in files.iter().enumerate() {
            let s = stem(f);
            let recs = gts.get(&s).cloned().unwrap_or_default();
            let mut rng = ChaCha8Rng::seed_from_u64(image_seed(cfg.seed.wrapping_add(1), i));
            per_image.push((s, derive_points(&recs, sigma, None, &mut rng)?));
        }
    }

    let library = match cfg.pattern_set {
        PatternSet::Setrc if plain => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            PatternLibrary::Shapes(generate_setrc_library(false, &mut rng))
        }
        PatternSet::Setrc => default_library(cfg.seed),
        PatternSet::Setsk => {
            let cats: BTreeSet<String> = per_image
                .iter()
                .flat_map(|(_, v)| v.iter().map(|p| p.category.clone()))
                .collect();
            let cats: Vec<String> = cats.into_iter().collect();
            PatternLibrary::sketches(load_sketch_library(cfg.sketch_dir.as_deref().unwrap(), &cats)?)?
        }
    };

    let results: Vec<anyhow::Result<(RgbImage, Vec<GtRecord>)>> = files
        .par_iter()
        .zip(&per_image)
        .enumerate()
        .map(|(i, (f, (_, pts)))| {
            let img = load_rgb(f)?;
            let scfg = SynthesisConfig {
                rng_seed: image_seed(cfg.seed, i),
                ..synthesis.clone()
            };
            let (aug, placed) = synthesize_seeded(&img, &labeled(pts), &library, &scfg)?;
            let recs = placed
                .iter()
                .map(|p| GtRecord::from_rbox(p.rbox, p.label.clone(), false))
                .collect();
            Ok((aug, recs))
        })
        .collect();

    let mut manifest = ManifestWriter::new(root)?;
    let mut total = 0;
    let mut point_rows = Vec::new();
    for ((name, pts), res) in per_image.iter().zip(results) {
        let (aug, recs) = res?;
        total += recs.len();
        manifest.write(&format!("images/{name}.png"), &encode_png(&aug)?)?;
        manifest.write(&format!("labels/{name}.txt"), format_dota(&recs).as_bytes())?;
        point_rows.extend(pts.iter().map(|p| (name.as_str(), p)));
    }
    let mut buf = Vec::new();
    write_points_csv(&mut buf, point_rows)?;
    manifest.write("points.csv", &buf)?;
    manifest.finish(&[
        ("seed", cfg.seed.to_string()),
        ("pattern_set", format!("{:?}", cfg.pattern_set).to_lowercase()),
        ("version", crate::batch::version().to_string()),
    ])?;
    writeln!(out, "synthesized {} images, {} synthetic boxes", files.len(), total)?;
    writeln!(out, "manifest: {}", root.join("manifest.txt").display())?;
    Ok(())
}

/// Worst relative gradient error per loss over `points` random smooth
/// evaluation points.
pub fn gradcheck_suite(seed: u64, points: usize, epsilon: f64) -> crate::error::Result<Vec<(LossName, f64)>> {
    LossName::ALL
        .par_iter()
        .enumerate()
        .map(|(i, &name)| {
            let mut rng = ChaCha8Rng::seed_from_u64(image_seed(seed, i));
            let mut worst: f64 = 0.0;
            for _ in 0..points {
                let case = GradCheckCase::random_smooth(name, &mut rng, 100.0 * epsilon);
                worst = worst.max(grad_check(&case, epsilon)?);
            }
            Ok((name, worst))
        })
        .collect()
}

pub fn cmd_gradcheck(cfg: &RunConfig, points: usize, epsilon: f64, out: &mut dyn Write) -> anyhow::Result<()> {
    let rows = gradcheck_suite(cfg.seed, points, epsilon)?;
    let mut csv = String::from("loss,points,max_rel_error\n");
    writeln!(out, "{:<10} {:>7} {:>14}", "loss", "points", "max rel error")?;
    for (name, err) in &rows {
        writeln!(out, "{:<10} {:>7} {:>14.3e}", name.as_str(), points, err)?;
        csv.push_str(&format!("{},{},{:e}\n", name.as_str(), points, err));
    }
    let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    writeln!(out, "max relative error {worst:.3e}")?;
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("gradcheck.csv"), csv)?;
    }
    ensure!(
        worst <= GRADCHECK_TOLERANCE,
        "gradient check failed: {worst:e} > {GRADCHECK_TOLERANCE:e}"
    );
    Ok(())
}

fn pick_transform<R: Rng + ?Sized>(choice: TransformChoice, rng: &mut R) -> TransformSpec {
    match choice {
        TransformChoice::Flip => TransformSpec::Flip,
        TransformChoice::Rotate => TransformSpec::Rotate(rng.random_range(0.25 * std::f64::consts::PI..0.75 * std::f64::consts::PI)),
        TransformChoice::Scale => TransformSpec::Scale(rng.random_range(0.5..1.5)),
        TransformChoice::Random => sample_transform(rng),
    }
}

/// Random fitting problem on a 512x512 canvas. Each starting pair is the
/// consistent pair of a random box, perturbed by up to 20 px in position,
/// 30% in size and 0.4 rad in angle; synthetic objects get an independent
/// random target.
pub fn random_fit_problem(seed: u64, transform: TransformChoice, real: usize, synthetic: usize) -> FitProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = pick_transform(transform, &mut rng);
    let image = ImageSize::new(512, 512);
    let rbox = |rng: &mut ChaCha8Rng| {
        RBox::new(
            rng.random_range(100.0..400.0),
            rng.random_range(100.0..400.0),
            rng.random_range(20.0..80.0),
            rng.random_range(10.0..40.0),
            rng.random_range(-1.2..1.2),
        )
    };
    let jitter = |b: RBox, rng: &mut ChaCha8Rng| {
        RBox::new(
            b.x + rng.random_range(-20.0..20.0),
            b.y + rng.random_range(-20.0..20.0),
            b.w * rng.random_range(0.7..1.3),
            b.h * rng.random_range(0.7..1.3),
            b.theta + rng.random_range(-0.4..0.4),
        )
        .normalized()
    };
    let mut objects = Vec::with_capacity(real + synthetic);
    for k in 0..real + synthetic {
        let base = rbox(&mut rng);
        let ori = jitter(base, &mut rng);
        let trs = jitter(transform_rbox(&base, &t, image), &mut rng);
        let role = if k < real {
            FitRole::Real
        } else {
            FitRole::Synthetic { target: rbox(&mut rng) }
        };
        objects.push(FitObject { ori, trs, role });
    }
    FitProblem {
        objects,
        transform: t,
        image,
        settings: FitSettings::default(),
    }
}

pub fn cmd_fitdemo(
    cfg: &RunConfig,
    transform: TransformChoice,
    real: usize,
    synthetic: usize,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    ensure!(real + synthetic > 0, "no objects to fit");
    let problem = random_fit_problem(cfg.seed, transform, real, synthetic);
    let report = fit_demo(&problem)?;
    writeln!(out, "transform {:?}", problem.transform)?;
    writeln!(
        out,
        "iterations {}  loss {:.6e} -> {:.6e}",
        report.iterations,
        report.losses[0],
        report.final_loss()
    )?;
    for (i, (o, r)) in report.objects.iter().zip(&report.residuals).enumerate() {
        let kind = match o.role {
            FitRole::Real => "consistency",
            FitRole::Synthetic { .. } => "synthetic",
        };
        writeln!(out, "object {i} ({kind}) residual {r:.3e}")?;
    }
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("fit_trajectory.csv"), report.trajectory_csv())?;
    }
    Ok(())
}

pub fn cmd_split(cfg: &RunConfig, images: &Path, gt: Option<&Path>, out: &mut dyn Write) -> anyhow::Result<()> {
    require(images, "image path")?;
    if let Some(g) = gt {
        require(g, "annotation directory")?;
    }
    let root = cfg.out_dir()?;
    let files = list_pngs(images)?;
    let gts = match gt {
        Some(g) => load_gt_map(g)?,
        None => BTreeMap::new(),
    };
    let (patch, overlap) = (cfg.patch_size, cfg.overlap);
    let results: Vec<anyhow::Result<Vec<(String, Vec<u8>, String)>>> = files
        .par_iter()
        .map(|f| {
            let name = stem(f);
            let img = load_rgb(f)?;
            let recs = gts.get(&name).map(Vec::as_slice).unwrap_or(&[]);
            split_image(&img, recs, patch, overlap)?
                .into_iter()
                .map(|p| Ok((p.name(&name), encode_png(&p.image)?, format_dota(&p.gts))))
                .collect()
        })
        .collect();
    let mut manifest = ManifestWriter::new(root)?;
    let mut count = 0;
    for r in results {
        for (name, png, txt) in r? {
            manifest.write(&format!("images/{name}.png"), &png)?;
            manifest.write(&format!("labels/{name}.txt"), txt.as_bytes())?;
            count += 1;
        }
    }
    manifest.finish(&[("patch_size", patch.to_string()), ("overlap", overlap.to_string())])?;
    writeln!(out, "{count} patches written")?;
    Ok(())
}

pub fn cmd_merge(cfg: &RunConfig, dets: &Path, nms_iou: f64, out: &mut dyn Write) -> anyhow::Result<()> {
    require(dets, "detections file")?;
    let all = read_detections_csv(fs::File::open(dets)?)?;
    let n = all.len();
    let merged = merge_detections(&group_by_patch(all), nms_iou);
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_detections_csv(fs::File::create(dir.join("merged.csv"))?, &merged)?;
            writeln!(out, "merged {n} patch detections into {}", merged.len())?;
        }
        None => write_detections_csv(out, &merged)?,
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_assign(
    cfg: &RunConfig,
    points: &Path,
    gt: Option<&Path>,
    image_id: Option<&str>,
    size: ImageSize,
    anchor_size: f64,
    scores: ScoreSource,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    require(points, "points file")?;
    if let Some(g) = gt {
        require(g, "annotation file")?;
    }
    let all = read_points_csv(fs::File::open(points)?)?;
    let (id, pts) = match image_id {
        Some(id) => (id.to_string(), all.get(id).cloned().unwrap_or_default()),
        None => all.into_iter().next().unwrap_or_default(),
    };
    let boxes = match gt {
        Some(g) => parse_dota(g)?,
        None => Vec::new(),
    };
    let cats: Vec<String> = pts
        .iter()
        .map(|p| p.category.clone())
        .chain(boxes.iter().map(|b| b.category.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index = |c: &str| cats.iter().position(|x| x == c).unwrap_or(0);
    let grid = build_anchor_grid(size, DEFAULT_STRIDE, anchor_size, cfg.anchors)?;
    let nc = cats.len().max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let preds: Vec<AnchorPrediction> = (0..grid.num_anchors())
        .map(|a| AnchorPrediction {
            center: grid.anchor_center(a),
            scores: match scores {
                ScoreSource::Uniform => vec![1.0 / nc as f64; nc],
                ScoreSource::Random => (0..nc).map(|_| rng.random_range(0.0..1.0)).collect(),
            },
        })
        .collect();
    let point_targets: Vec<(Point, usize)> = pts.iter().map(|p| (p.point(), index(&p.category))).collect();
    let box_targets: Vec<(Point, usize)> = boxes.iter().map(|b| (b.rbox.center(), index(&b.category))).collect();
    let targets = targets_from(&point_targets, &box_targets);
    let res = assign(&grid, &preds, &targets)?;

    writeln!(
        out,
        "image {id}: {} anchors ({}x{} cells, {} per cell), {} targets",
        grid.num_anchors(),
        grid.cols,
        grid.rows,
        grid.anchors_per_cell,
        targets.len()
    )?;
    let mut csv = String::from("target,kind,category,anchor,col,row,anchor_x,anchor_y\n");
    for (t, pos) in targets.iter().zip(&res.positives) {
        let kind = match t.kind {
            GtKind::Point => "point",
            GtKind::Box => "box",
        };
        let cat = cats.get(t.label).map(String::as_str).unwrap_or("");
        writeln!(out, "{kind} {} ({cat}) at ({:.1}, {:.1}): anchors {:?}", t.index, t.center.x, t.center.y, pos)?;
        for &a in pos {
            let (col, row) = grid.cell_of(a);
            let c = grid.anchor_center(a);
            csv.push_str(&format!("{},{kind},{cat},{a},{col},{row},{},{}\n", t.index, c.x, c.y));
        }
    }
    if !res.unmatched.is_empty() {
        writeln!(out, "unmatched targets: {:?}", res.unmatched)?;
    }
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("assign.csv"), csv)?;
    }
    Ok(())
}

fn ground_truths(map: &BTreeMap<String, Vec<GtRecord>>) -> Vec<GroundTruth> {
    map.iter()
        .flat_map(|(id, v)| v.iter().map(move |g| GroundTruth::from_record(id, g)))
        .collect()
}

pub fn cmd_eval(
    cfg: &RunConfig,
    dets: &Path,
    gt: &Path,
    ecfg: &EvalConfig,
    method: &str,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    require(dets, "detections file")?;
    require(gt, "annotations")?;
    let d = read_detections_csv(fs::File::open(dets)?)?;
    let g = ground_truths(&load_gt_map(gt)?);
    let report = evaluate_map(&d, &g, ecfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write!(out, "{}", report.to_table())?;
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("eval.csv"), report.to_csv(method))?;
    }
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, gt: &Path, ecfg: &EvalConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    require(gt, "annotations")?;
    let gts = load_gt_map(gt)?;
    let sigmas = cfg.sigma_noise.clone().unwrap_or_else(|| NOISE_LEVELS.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(7));
    let rows = noise_sweep(&gts, &sigmas, cfg.seed, ecfg, shape_at_point(&mut rng))?;
    writeln!(out, "{:>8} {:>8} {:>12}", "sigma", "mAP", "mean offset")?;
    for r in &rows {
        writeln!(out, "{:>8.2} {:>8.4} {:>12.3}", r.sigma, r.map, r.mean_offset)?;
    }
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("noise_sweep.csv"), noise_sweep_csv(&rows))?;
    }
    Ok(())
}

fn overlay(
    img: &RgbImage,
    gts: &[GtRecord],
    dets: &[RBox],
    points: &[Point],
    cats: &BTreeMap<String, usize>,
    labels: &[String],
) -> RgbImage {
    let mut canvas = img.clone();
    for g in gts {
        let c = PALETTE[cats.get(&g.category).copied().unwrap_or(0) % PALETTE.len()];
        draw_rbox(&mut canvas, &g.rbox, c);
    }
    for (b, l) in dets.iter().zip(labels) {
        let c = PALETTE[cats.get(l).copied().unwrap_or(0) % PALETTE.len()];
        draw_rbox(&mut canvas, b, c);
    }
    for p in points {
        draw_point(&mut canvas, *p, image::Rgb([255, 255, 255]));
    }
    canvas
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_inspect(
    cfg: &RunConfig,
    image: &Path,
    gt: Option<&Path>,
    dets: Option<&Path>,
    points: Option<&Path>,
    min_score: f64,
    transform: Option<TransformChoice>,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    require(image, "image")?;
    for p in [gt, dets, points].into_iter().flatten() {
        require(p, "input")?;
    }
    let root = cfg.out_dir()?;
    let name = stem(image);
    let img = load_rgb(image)?;
    let gts = match gt {
        Some(g) => parse_dota(g)?,
        None => Vec::new(),
    };
    let (det_boxes, det_labels): (Vec<RBox>, Vec<String>) = match dets {
        Some(d) => read_detections_csv(fs::File::open(d)?)?
            .into_iter()
            .filter(|d| d.score >= min_score && (d.image_id == name || d.image_id.is_empty()))
            .map(|d| (d.rbox, d.category))
            .unzip(),
        None => (Vec::new(), Vec::new()),
    };
    let pts: Vec<Point> = match points {
        Some(p) => read_points_csv(fs::File::open(p)?)?
            .remove(&name)
            .unwrap_or_default()
            .iter()
            .map(PointAnnotation::point)
            .collect(),
        None => Vec::new(),
    };
    let cats: BTreeMap<String, usize> = gts
        .iter()
        .map(|g| g.category.clone())
        .chain(det_labels.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, i))
        .collect();
    fs::create_dir_all(root)?;
    let path = root.join(format!("{name}_overlay.png"));
    overlay(&img, &gts, &det_boxes, &pts, &cats, &det_labels).save(&path)?;
    writeln!(out, "wrote {}", path.display())?;

    if let Some(choice) = transform {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let t = pick_transform(choice, &mut rng);
        let boxes: Vec<RBox> = gts.iter().map(|g| g.rbox).collect();
        let (timg, tboxes) = apply_transform(&img, &boxes, &t);
        let tgts: Vec<GtRecord> = gts
            .iter()
            .zip(tboxes)
            .map(|(g, b)| GtRecord::from_rbox(b, g.category.clone(), g.difficult))
            .collect();
        let size = ImageSize::new(img.width(), img.height());
        let tdets: Vec<RBox> = det_boxes.iter().map(|b| transform_rbox(b, &t, size)).collect();
        let tpath = root.join(format!("{name}_transformed.png"));
        overlay(&timg, &tgts, &tdets, &[], &cats, &det_labels).save(&tpath)?;
        writeln!(out, "wrote {} ({t:?})", tpath.display())?;
    }
    Ok(())
}

/// Entry point for the binary: honors `P2RKIT_THREADS`, runs the command
/// and writes to stdout.
pub fn main_with_args<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::parse_from(args);
    if let Ok(v) = std::env::var("P2RKIT_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow!("P2RKIT_THREADS must be a positive integer, got {v:?}"))?;
        ensure!(n > 0, "P2RKIT_THREADS must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run(&cli, &mut lock)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\nseed = 5\npatch-size = 512\noverlap=100\nsigma_base = 0.3\n").unwrap();
        let args = CommonArgs {
            config: Some(path.clone()),
            seed: Some(9),
            ..Default::default()
        };
        let c = RunConfig::resolve(&args).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.patch_size, 512);
        assert_eq!(c.overlap, 100);
        assert_eq!(c.synthesis.sigma_base, 0.3);
        assert_eq!(c.synthesis.sigma_w, 0.4);
        assert_eq!(c.synthesis.rng_seed, 9);

        let d = RunConfig::resolve(&CommonArgs::default()).unwrap();
        assert_eq!(d, RunConfig::default());

        fs::write(&path, "bogus = 1\n").unwrap();
        assert!(RunConfig::resolve(&args).is_err());
        fs::write(&path, "patch_size = 100\noverlap = 100\n").unwrap();
        assert!(RunConfig::resolve(&args).is_err());
    }

    #[test]
    fn anchors_flag_values() {
        assert!(parse_anchors("3").is_ok());
        assert!(parse_anchors("4").is_err());
        let cli = Cli::try_parse_from(["p2rkit", "gradcheck", "--anchors", "2"]);
        assert!(cli.is_err());
    }

    #[test]
    fn sigma_list_parses() {
        let cli = Cli::try_parse_from(["p2rkit", "eval", "--gt", "x", "--sweep", "--sigma-noise", "0,0.1,0.2"]).unwrap();
        assert_eq!(cli.common.sigma_noise, Some(vec![0.0, 0.1, 0.2]));
    }
}

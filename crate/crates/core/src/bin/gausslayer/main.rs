use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use gausslayer::collision::IterationReport;
use gausslayer::config::Config;
use gausslayer::io::{self, FloatPlanes, PointCloud, PoseFrame, RgbImage};
use gausslayer::losses::gradcheck::{self, AuditReport};
use gausslayer::losses::LossReport;
use gausslayer::map::{ChannelMap, MapSide};
use gausslayer::pipeline::{self, Collider, FitProblem, LayeredAvatar};
use gausslayer::render::{Camera, SplatImage};
use gausslayer::synth::{self, SceneKind, SyntheticSceneSpec};
use gausslayer::{compute_normals, Error, Result, Vec3};

/// Layered Gaussian avatar toolkit.
#[derive(Parser)]
#[command(name = "gausslayer", version)]
struct Cli {
    /// Global configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for all randomness; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: avatar bundles, poses, camera.
    Gen(GenArgs),
    /// Summarize a map, weights, stitch, PLY file or avatar bundle.
    Inspect(InspectArgs),
    /// Export canonical normals of one layer as a PLY point cloud.
    Normals(NormalsArgs),
    /// Pose an avatar and export both layers as PLY.
    Pose(PoseArgs),
    /// Render an avatar for every frame of a pose sequence.
    Render(RenderArgs),
    /// Select clothing pixels with p_cloth > 0.5.
    Segment(SegmentArgs),
    /// Fit the clothing geometric layer to a target point cloud.
    Fit(FitArgs),
    /// Re-anchor A's clothing on B and resolve collisions, no rendering.
    Resolve(TransferArgs),
    /// Full clothing transfer from avatar A to avatar B, rendered.
    Transfer(TransferArgs),
    /// Finite-difference audit of the point-based loss gradients.
    CheckGrads(CheckGradsArgs),
}

#[derive(Args)]
struct GenArgs {
    /// plane, spheres, capsule or transfer.
    #[arg(long)]
    scene: String,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
    /// Also write the summary to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layer {
    Body,
    Cloth,
}

#[derive(Args)]
struct NormalsArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long, value_enum, default_value = "body")]
    layer: Layer,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PoseArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    /// Only this frame index.
    #[arg(long)]
    frame: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    frame: Option<u32>,
    /// Resolve clothing against the avatar's own body before rendering.
    #[arg(long)]
    resolve: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Keep the clothing outside the body (collision and layer terms).
    #[arg(long)]
    collide: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    /// Avatar providing the clothing.
    #[arg(long)]
    a: PathBuf,
    /// Avatar receiving it.
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    /// Required by `transfer`.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long)]
    frame: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckGradsArgs {
    /// Maximum Gaussians per instance.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    instances: Option<usize>,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidParameter("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Gen(a) => gen(&config, a),
        Command::Inspect(a) => inspect(a),
        Command::Normals(a) => normals(a),
        Command::Pose(a) => pose(a),
        Command::Render(a) => render(&config, a),
        Command::Segment(a) => segment(a),
        Command::Fit(a) => fit(&config, a),
        Command::Resolve(a) => transfer(&config, a, false),
        Command::Transfer(a) => transfer(&config, a, true),
        Command::CheckGrads(a) => check_grads(&config, a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Text(e.to_string()))?;
    text.push('\n');
    io::write_file(path, text.as_bytes())
}

fn select_frames(frames: Vec<PoseFrame>, only: Option<u32>) -> Result<Vec<PoseFrame>> {
    let picked: Vec<PoseFrame> = frames.into_iter().filter(|f| only.is_none_or(|k| f.index == k)).collect();
    if picked.is_empty() {
        return Err(Error::Empty(match only {
            Some(k) => format!("no frame with index {k}"),
            None => "pose file has no frames".into(),
        }));
    }
    Ok(picked)
}

fn gen(config: &Config, a: GenArgs) -> Result<()> {
    let mut spec = SyntheticSceneSpec::new(SceneKind::parse(&a.scene)?, config.seed);
    spec.height = a.height.unwrap_or(spec.height);
    spec.width = a.width.unwrap_or(spec.width);
    spec.noise = a.noise.unwrap_or(spec.noise);
    let scene = synth::generate(&spec)?;
    let out = &a.out;
    io::write_file(&out.join("scene.toml"), toml::to_string(&spec).expect("spec serializes").as_bytes())?;
    io::write_file(&out.join("camera.toml"), io::camera_to_toml(&scene.camera).as_bytes())?;
    let frames: Vec<PoseFrame> = scene
        .poses
        .iter()
        .enumerate()
        .map(|(i, p)| PoseFrame {
            index: i as u32,
            pose: p.clone(),
        })
        .collect();
    io::write_file(&out.join("poses.toml"), io::poses_to_toml(&frames).as_bytes())?;
    for (k, avatar) in scene.avatars.iter().enumerate() {
        io::save_avatar(&out.join(format!("avatar_{k}")), avatar)?;
    }
    if let Some(target) = &scene.target {
        let cloud = PointCloud::from_points(target, &vec![None; target.len()], &vec![Vec3::repeat(1.0); target.len()])?;
        io::write_file(&out.join("target.ply"), &io::encode_ply(&cloud))?;
    }
    info!("wrote {:?} scene with {} avatar(s) to {}", spec.kind, scene.avatars.len(), out.display());
    Ok(())
}

fn summarize_planes(kind: &str, p: &ChannelMap, names: &dyn Fn(usize) -> String) -> String {
    let mut s = format!(
        "{kind} {}x{} side={} channels={} valid={}\n",
        p.height,
        p.width,
        if p.side == MapSide::Front { "front" } else { "back" },
        p.channels,
        p.valid_count()
    );
    for c in 0..p.channels {
        let vals: Vec<f64> = p.valid_pixels().map(|(r, col)| p.get(c, r, col) as f64).collect();
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let mean = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
        s.push_str(&format!("  {:>2} {:<18} min {lo:>12.6} max {hi:>12.6} mean {mean:>12.6}\n", c, names(c)));
    }
    s
}

fn inspect(a: InspectArgs) -> Result<()> {
    let summary = if a.path.is_dir() {
        let avatar = io::load_avatar(&a.path)?;
        format!(
            "avatar bundle {}x{}: {} body Gaussians, {} clothing Gaussians, {} joints, {} stitch pairs, {} graph warnings\n",
            avatar.height(),
            avatar.width(),
            avatar.body.len(),
            avatar.cloth.len(),
            avatar.skeleton.joint_count(),
            avatar.graph.stitch_pairs.len(),
            avatar.graph.warnings.len()
        )
    } else {
        let bytes = io::read_file(&a.path)?;
        let xyz = |c: usize| ["x", "y", "z"].get(c).copied().unwrap_or("?").to_string();
        let gauss = |c: usize| gausslayer::map::channel::name(c).to_string();
        match bytes.get(..4) {
            Some(b"GMAP") => summarize_planes("gaussian map", io::decode_gaussian_map(&bytes)?.planes(), &gauss),
            Some(b"GOFF") => summarize_planes("offset map", io::decode_offset_map(&bytes)?.planes(), &xyz),
            Some(b"GTPL") => {
                let t = io::decode_template(&bytes)?;
                summarize_planes("template", t.front.planes(), &xyz) + &summarize_planes("template", t.back.planes(), &xyz)
            }
            Some(b"SKWT") => {
                let w = io::decode_weights(&bytes)?;
                let max_joint = w.rows.iter().flatten().filter(|(_, x)| *x > 0.0).map(|(j, _)| *j).max();
                format!("skinning weights: {} rows, highest joint {max_joint:?}\n", w.len())
            }
            Some(b"GSTP") => format!("stitch pairs: {}\n", io::decode_stitches(&bytes)?.len()),
            Some(b"ply\n") => format!("point cloud: {} vertices\n", io::decode_ply(&bytes)?.len()),
            _ => {
                return Err(Error::Format {
                    offset: 0,
                    message: "unrecognized file magic".into(),
                })
            }
        }
    };
    print!("{summary}");
    if let Some(out) = a.out {
        io::write_file(&out, summary.as_bytes())?;
    }
    Ok(())
}

fn normals(a: NormalsArgs) -> Result<()> {
    let avatar = io::load_avatar(&a.avatar)?;
    let (set, graph) = match a.layer {
        Layer::Body => (&avatar.body, avatar.graph.clone()),
        Layer::Cloth => (&avatar.cloth, avatar.cloth_graph()?),
    };
    let positions = set.canonical_positions();
    let normals = compute_normals(&positions, &graph);
    let cloud = PointCloud::from_points(&positions, &normals, &set.colors)?;
    io::write_file(&a.out, &io::encode_ply(&cloud))?;
    info!("{} of {} normals defined", normals.iter().flatten().count(), normals.len());
    Ok(())
}

fn pose(a: PoseArgs) -> Result<()> {
    let avatar = io::load_avatar(&a.avatar)?;
    let frames = select_frames(io::read_poses(&a.poses, &avatar.skeleton)?, a.frame)?;
    for f in &frames {
        let posed = pipeline::pose_avatar(&avatar, &f.pose)?;
        let body = PointCloud::from_points(&posed.body.geometric, &posed.body.normals, &avatar.body.colors)?;
        let cloth = PointCloud::from_points(&posed.cloth.geometric, &posed.cloth.normals, &avatar.cloth.colors)?;
        io::write_file(&a.out.join(format!("body_{:04}.ply", f.index)), &io::encode_ply(&body))?;
        io::write_file(&a.out.join(format!("cloth_{:04}.ply", f.index)), &io::encode_ply(&cloth))?;
    }
    info!("posed {} frame(s)", frames.len());
    Ok(())
}

fn write_image(dir: &Path, stem: &str, image: &SplatImage) -> Result<()> {
    let (w, h) = (image.width, image.height);
    if let Some(rgb) = &image.rgb {
        io::write_file(&dir.join(format!("{stem}.ppm")), &io::encode_ppm(&RgbImage::from_linear(w, h, rgb)?))?;
    }
    if let Some(n) = &image.normal {
        io::write_float_planes(&dir.join(format!("{stem}_normal.raw")), &FloatPlanes::from_vectors(w, h, ["nx", "ny", "nz"], n))?;
    }
    if let Some(l) = &image.labels {
        io::write_float_planes(&dir.join(format!("{stem}_label.raw")), &FloatPlanes::from_vectors(w, h, ["body", "cloth"], l))?;
    }
    let depth = image.depth.clone().unwrap_or_else(|| vec![0.0; w * h]);
    let ad: Vec<[f64; 2]> = image.alpha.iter().zip(&depth).map(|(&a, &d)| [a, d]).collect();
    io::write_float_planes(
        &dir.join(format!("{stem}_depth.raw")),
        &FloatPlanes::from_vectors(w, h, ["alpha", "depth"], &ad),
    )
}

fn render(config: &Config, a: RenderArgs) -> Result<()> {
    let avatar = io::load_avatar(&a.avatar)?;
    let camera = io::read_camera(&a.camera)?;
    let frames = select_frames(io::read_poses(&a.poses, &avatar.skeleton)?, a.frame)?;
    let poses: Vec<_> = frames.iter().map(|f| f.pose.clone()).collect();
    let resolve = a.resolve.then_some(&config.collision);
    let rendered = pipeline::animate(&avatar, &poses, &camera, resolve, &config.raster)?;
    for (f, r) in frames.iter().zip(&rendered) {
        write_image(&a.out, &format!("frame_{:04}", f.index), &r.image)?;
        if let Some(res) = &r.resolution {
            write_json(&a.out.join(format!("frame_{:04}_collision.json", f.index)), &res.reports)?;
        }
    }
    info!("rendered {} frame(s) at {}x{}", frames.len(), camera.width, camera.height);
    Ok(())
}

fn segment(a: SegmentArgs) -> Result<()> {
    let avatar = io::load_avatar(&a.avatar)?;
    let picked = pipeline::segment_clothing(&avatar.body)?;
    let selector = pipeline::selector_pixels(&avatar.body, &picked);
    io::write_file(&a.out, io::selector_to_text(&selector).as_bytes())?;
    info!(
        "{} of {} Gaussians have p_cloth > 0.5; bundle selector {}",
        selector.len(),
        avatar.body.len(),
        if selector == avatar.selector { "matches" } else { "differs" }
    );
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    collide: bool,
    initial: LossReport,
    report: LossReport,
    accepted_steps: usize,
    stalled: bool,
    clearance_fraction: Option<f64>,
}

fn fit(config: &Config, a: FitArgs) -> Result<()> {
    let mut avatar = io::load_avatar(&a.avatar)?;
    let target_cloud = io::decode_ply(&io::read_file(&a.target)?)?;
    let target: Vec<Vec3> = target_cloud
        .positions
        .iter()
        .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64))
        .collect();
    let graph = avatar.cloth_graph()?;
    let (body_points, body_normals) = avatar.cloth_collider()?;
    let base = avatar.cloth.base_positions.clone();
    let cfg = config.fit_config();
    let problem = FitProblem {
        base: &base,
        graph: &graph,
        offsets: avatar.cloth.offsets.clone(),
        render_offsets: None,
        target: &target,
        collider: a.collide.then_some(Collider {
            positions: &body_points,
            normals: &body_normals,
        }),
    };
    let result = pipeline::fit_geometric_layer(&problem, &cfg)?;
    let fitted: Vec<Vec3> = base.iter().zip(&result.offsets).map(|(b, d)| b + d).collect();
    let clearance_fraction = a.collide.then(|| {
        let ok = fitted
            .iter()
            .zip(body_points.iter().zip(&body_normals))
            .filter(|(x, (b, n))| n.is_none_or(|n| (*x - *b).dot(&n) >= cfg.epsilon - 1e-3))
            .count();
        ok as f64 / fitted.len() as f64
    });
    let normals = compute_normals(&fitted, &graph);
    io::write_file(
        &a.out.join("cloth.ply"),
        &io::encode_ply(&PointCloud::from_points(&fitted, &normals, &avatar.cloth.colors)?),
    )?;
    for (i, d) in result.offsets.iter().enumerate() {
        avatar.cloth.offsets[i] = *d;
    }
    io::save_avatar(&a.out.join("avatar"), &avatar)?;
    info!(
        "loss {:.6e} -> {:.6e} in {} steps",
        result.initial.total,
        result.report.total,
        result.history.len() - 1
    );
    write_json(
        &a.out.join("fit_report.json"),
        &FitSummary {
            collide: a.collide,
            accepted_steps: result.history.len() - 1,
            stalled: result.stalled,
            initial: result.initial,
            report: result.report,
            clearance_fraction,
        },
    )
}

#[derive(Serialize)]
struct TransferSummary<'a> {
    frame: u32,
    substituted: usize,
    iterations: &'a [IterationReport],
}

fn transfer(config: &Config, a: TransferArgs, render: bool) -> Result<()> {
    let src: LayeredAvatar = io::load_avatar(&a.a)?;
    let dst: LayeredAvatar = io::load_avatar(&a.b)?;
    let camera: Option<Camera> = match (&a.camera, render) {
        (Some(p), true) => Some(io::read_camera(p)?),
        (None, true) => return Err(Error::InvalidParameter("transfer needs --camera".into())),
        _ => None,
    };
    let frames = select_frames(io::read_poses(&a.poses, &src.skeleton)?, a.frame)?;
    for f in &frames {
        let stem = format!("frame_{:04}", f.index);
        let (positions, normals, reports, substituted) = match &camera {
            Some(cam) => {
                let r = pipeline::transfer_clothing(&src, &dst, &f.pose, cam, &config.transfer_config())?;
                write_image(&a.out, &stem, &r.image)?;
                (r.cloth_positions, r.cloth_normals, r.resolution.reports, r.substituted)
            }
            None => {
                let g = pipeline::transfer_geometry(&src, &dst, &f.pose, &config.collision)?;
                (g.cloth_positions, g.cloth_normals, g.resolution.reports, g.substituted)
            }
        };
        let cloud = PointCloud::from_points(&positions, &normals, &src.cloth.colors)?;
        io::write_file(&a.out.join(format!("{stem}_cloth.ply")), &io::encode_ply(&cloud))?;
        write_json(
            &a.out.join(format!("{stem}_collision.json")),
            &TransferSummary {
                frame: f.index,
                substituted,
                iterations: &reports,
            },
        )?;
        if let Some(last) = reports.last() {
            info!("frame {}: {} violations after {} iterations", f.index, last.violations, last.iteration);
        }
    }
    Ok(())
}

fn check_grads(config: &Config, a: CheckGradsArgs) -> Result<()> {
    let n = a.n.unwrap_or(config.gradcheck.max_gaussians);
    let instances = a.instances.unwrap_or(config.gradcheck.instances);
    let report: AuditReport = gradcheck::audit(n, instances, config.seed)?;
    for row in &report.rows {
        println!(
            "{:<10} instances {:>3} coords {:>7} max rel err {:.3e}",
            row.loss, row.instances, row.coordinates, row.max_rel_err
        );
    }
    let worst = report.max_rel_err();
    println!("max relative error {worst:.3e} (threshold {:.1e})", a.threshold);
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if !(worst < a.threshold) {
        return Err(Error::InvalidParameter(format!("gradient audit failed: {worst:.3e} >= {:.1e}", a.threshold)));
    }
    Ok(())
}

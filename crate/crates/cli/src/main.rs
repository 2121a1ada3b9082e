use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;
use xvgs_core::adc::SelectionMode;
use xvgs_core::checkpoint::{load_model, save_model};
use xvgs_core::dataset::{generate_synthetic, load_dataset, Dataset, SceneSpec};
use xvgs_core::pipeline::{
    downsample_to_pointcloud, evaluate, finetune, format_passes, init_cross, overlap_report, random_pointcloud,
    run_experiment, supplement, train_branch, train_cross, PipelineConfig, TrainLog, Variant,
};
use xvgs_core::render::render;
use xvgs_core::scene::{Camera, GaussianModel};

/// Cross-view Gaussian splatting reconstruction.
#[derive(Parser)]
#[command(name = "xvgs", version)]
struct Cli {
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Average,
    Groupmax,
}

impl From<Mode> for SelectionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Average => SelectionMode::Average,
            Mode::Groupmax => SelectionMode::GroupMax,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scene spec (TOML; an empty file means defaults).
    Gen { spec: PathBuf, out: PathBuf },
    /// Train the sub-model of one view group from a random initial cloud.
    TrainBranch {
        dataset: PathBuf,
        group: u32,
        config: PathBuf,
        out: PathBuf,
    },
    /// Train the cross-view model. Branch checkpoints are given in dataset
    /// group order; the last path is the output checkpoint.
    TrainCross {
        dataset: PathBuf,
        config: PathBuf,
        #[arg(num_args = 2.., value_name = "BRANCH... OUT")]
        paths: Vec<PathBuf>,
        /// Densification criterion.
        #[arg(long, value_enum, default_value = "groupmax")]
        mode: Mode,
    },
    /// Append branch primitives from voxels the model does not occupy.
    /// The last path is the output checkpoint.
    Supplement {
        cross: PathBuf,
        #[arg(num_args = 2.., value_name = "BRANCH... OUT")]
        paths: Vec<PathBuf>,
        /// Write the supplement report (JSON) here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fine-tune a model on all groups with the reconstruction loss.
    Finetune {
        dataset: PathBuf,
        config: PathBuf,
        model: PathBuf,
        out: PathBuf,
    },
    /// Render a model from a dataset camera index or a JSON pose file.
    Render {
        model: PathBuf,
        /// Camera index into the dataset (needs --dataset) or pose file path.
        camera: String,
        out: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Background color as `r,g,b` in [0, 1].
        #[arg(long, value_parser = parse_rgb)]
        background: Option<[f64; 3]>,
    },
    /// Evaluate a model on the test split and write the metrics report.
    Eval {
        dataset: PathBuf,
        model: PathBuf,
        report: PathBuf,
    },
    /// Per-pair unique/common voxel and primitive counts (JSON lines).
    Report {
        #[arg(required = true)]
        models: Vec<PathBuf>,
    },
    /// Run the baseline, each single component and the full method.
    Experiment {
        dataset: PathBuf,
        config: PathBuf,
        /// Seeds to run; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Variants as `+`-joined component names (`init`, `groupmax`,
        /// `reg`, `supplement`) or `baseline`; defaults to the ablation set.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Print the density-control passes of each joint run.
        #[arg(long)]
        verbose: bool,
    },
}

fn config(path: &Path, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path).with_context(|| format!("config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dataset(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("dataset {}", path.display()))
}

fn model(path: &Path) -> Result<GaussianModel> {
    load_model(path).with_context(|| format!("checkpoint {}", path.display()))
}

fn save(m: &GaussianModel, path: &Path) -> Result<()> {
    save_model(m, path).with_context(|| format!("writing {}", path.display()))
}

fn print_log(stage: &str, log: &TrainLog) {
    if let (Some(first), Some(last)) = (log.losses.first(), log.losses.last()) {
        println!(
            "{stage}: iterations={} loss_first={first:.6} loss_last={last:.6}",
            log.losses.len()
        );
    }
    print!("{}", format_passes(log));
}

#[derive(Deserialize)]
struct PoseFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    /// Row-major 4x4.
    world_to_camera: [[f64; 4]; 4],
}

fn pose_camera(path: &Path) -> Result<Camera> {
    let text = fs::read_to_string(path).with_context(|| format!("pose file {}", path.display()))?;
    let p: PoseFile = serde_json::from_str(&text).with_context(|| format!("pose file {}", path.display()))?;
    let m = &p.world_to_camera;
    let rotation = Matrix3::from_fn(|r, c| m[r][c]);
    let translation = Vector3::new(m[0][3], m[1][3], m[2][3]);
    Ok(Camera::new(
        p.fx,
        p.fy,
        p.cx,
        p.cy,
        p.width,
        p.height,
        rotation,
        translation,
    )?)
}

fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|c| c.trim().parse::<f64>().map_err(|e| format!("{c:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        _ => Err("expected r,g,b with each channel in [0, 1]".into()),
    }
}

fn parse_variant(name: &str) -> Result<Variant> {
    let mut v = Variant::BASELINE;
    if name == "baseline" {
        return Ok(v);
    }
    for part in name.split('+') {
        match part {
            "init" => v.branch_init = true,
            "groupmax" => v.group_max = true,
            "reg" => v.regularize = true,
            "supplement" => v.supplement = true,
            other => bail!("unknown variant component {other:?}"),
        }
    }
    Ok(v)
}

fn split_out(paths: &[PathBuf]) -> (&[PathBuf], &Path) {
    let (out, inputs) = paths.split_last().expect("clap enforces at least two paths");
    (inputs, out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { spec, out } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("spec {}", spec.display()))?;
            let mut spec: SceneSpec = toml::from_str(&text).context("scene spec")?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let ds = generate_synthetic(&spec, &out).with_context(|| format!("generating into {}", out.display()))?;
            for g in &ds.groups {
                println!(
                    "group {}: {} views ({} test)",
                    g.group_id,
                    g.views.len(),
                    g.test_views().count()
                );
            }
        }
        Command::TrainBranch {
            dataset: ds,
            group,
            config: cfg,
            out,
        } => {
            let cfg = config(&cfg, cli.seed)?;
            let ds = dataset(&ds)?;
            let g = ds
                .group(group)
                .with_context(|| format!("dataset has no group {group}"))?;
            let init = random_pointcloud(&ds.bounds, cfg.init_points, cfg.seed);
            let trained = train_branch(g, &init, &cfg)?;
            print_log("train-branch", &trained.log);
            save(&trained.model, &out)?;
            println!("primitives={}", trained.model.len());
        }
        Command::TrainCross {
            dataset: ds,
            config: cfg,
            paths,
            mode,
        } => {
            let cfg = config(&cfg, cli.seed)?;
            let ds = dataset(&ds)?;
            let (branch_paths, out) = split_out(&paths);
            if branch_paths.len() != ds.groups.len() {
                bail!(
                    "expected {} branch checkpoints (one per group), got {}",
                    ds.groups.len(),
                    branch_paths.len()
                );
            }
            let branches = branch_paths.iter().map(|p| model(p)).collect::<Result<Vec<_>>>()?;
            let gi = ds
                .groups
                .iter()
                .position(|g| g.group_id == cfg.distant_group)
                .with_context(|| format!("dataset has no distant group {}", cfg.distant_group))?;
            let init = init_cross(&downsample_to_pointcloud(&branches[gi], cfg.downsample_ratio)?, &cfg)?;
            let trained = train_cross(&init, &ds.groups, &branches, &cfg, mode.into())?;
            print_log("train-cross", &trained.log);
            save(&trained.model, out)?;
            println!("primitives={}", trained.model.len());
        }
        Command::Supplement { cross, paths, report } => {
            let (branch_paths, out) = split_out(&paths);
            let cross = model(&cross)?;
            let branches = branch_paths.iter().map(|p| model(p)).collect::<Result<Vec<_>>>()?;
            let (joined, rep) = supplement(&cross, &branches)?;
            save(&joined, out)?;
            let text = serde_json::to_string_pretty(&rep)?;
            match report {
                Some(p) => fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
        }
        Command::Finetune {
            dataset: ds,
            config: cfg,
            model: m,
            out,
        } => {
            let cfg = config(&cfg, cli.seed)?;
            let ds = dataset(&ds)?;
            let trained = finetune(&model(&m)?, &ds.groups, &cfg)?;
            print_log("finetune", &trained.log);
            save(&trained.model, &out)?;
        }
        Command::Render {
            model: m,
            camera,
            out,
            dataset: ds,
            background,
        } => {
            let m = model(&m)?;
            let (cam, ds_background) = match camera.parse::<usize>() {
                Ok(index) => {
                    let path = ds.context("a camera index needs --dataset")?;
                    let ds = dataset(&path)?;
                    let view = ds
                        .views()
                        .find(|v| v.id == index)
                        .with_context(|| format!("dataset has no view {index}"))?;
                    (view.camera, Some(ds.background))
                }
                Err(_) => (pose_camera(Path::new(&camera))?, None),
            };
            let bg = background.or(ds_background).unwrap_or([0.0; 3]);
            render(&m, &cam, bg)
                .write_ppm(&out)
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Eval {
            dataset: ds,
            model: m,
            report,
        } => {
            let ds = dataset(&ds)?;
            let rep = evaluate(&model(&m)?, &ds.groups, ds.background)?;
            fs::write(&report, rep.to_string()).with_context(|| format!("writing {}", report.display()))?;
            println!(
                "overall psnr={:.4} ssim={:.4} images={}",
                rep.overall.psnr, rep.overall.ssim, rep.overall.images
            );
        }
        Command::Report { models } => {
            let ms = models.iter().map(|p| model(p)).collect::<Result<Vec<_>>>()?;
            for e in overlap_report(&ms)? {
                println!("{}", serde_json::to_string(&e)?);
            }
        }
        Command::Experiment {
            dataset: ds,
            config: cfg,
            seeds,
            variants: names,
            verbose,
        } => {
            let base = config(&cfg, cli.seed)?;
            let ds = dataset(&ds)?;
            let seeds = if seeds.is_empty() { vec![base.seed] } else { seeds };
            let parsed = names.iter().map(|n| parse_variant(n)).collect::<Result<Vec<_>>>()?;
            let defaults = [
                Variant::BASELINE,
                Variant {
                    branch_init: true,
                    ..Variant::BASELINE
                },
                Variant {
                    group_max: true,
                    regularize: true,
                    ..Variant::BASELINE
                },
                Variant {
                    supplement: true,
                    ..Variant::BASELINE
                },
                Variant::FULL,
            ];
            let variants = if parsed.is_empty() { defaults.to_vec() } else { parsed };
            for seed in seeds {
                let cfg = PipelineConfig { seed, ..base.clone() };
                let (branches, runs) = run_experiment(&ds, &cfg, &variants)?;
                for (g, b) in ds.groups.iter().zip(&branches) {
                    let m = evaluate(b, std::slice::from_ref(g), cfg.background)?;
                    println!(
                        "seed={seed} branch={} primitives={} psnr={:.4}",
                        g.group_id,
                        b.len(),
                        m.overall.psnr
                    );
                }
                for r in &runs {
                    let per_group: Vec<String> = r
                        .metrics
                        .groups
                        .iter()
                        .map(|(g, m)| format!("g{g}={:.4}", m.psnr))
                        .collect();
                    println!(
                        "seed={seed} variant={} primitives={} added={} psnr={:.4} {}",
                        r.variant.name(),
                        r.model.len(),
                        r.cross_log.added(),
                        r.metrics.overall.psnr,
                        per_group.join(" ")
                    );
                    if verbose {
                        print!("{}", format_passes(&r.cross_log));
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

//! Acceptance suite: runs every criterion and prints one PASS/FAIL line
//! each. Exits nonzero if any criterion fails.

mod common;

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xvgs_core::adc::{select_densify, DensifyPolicy, GradientAccumulator, SelectionMode};
use xvgs_core::checkpoint::serialize_model;
use xvgs_core::dataset::{generate_synthetic, load_dataset, Dataset, SceneSpec};
use xvgs_core::image::ImageBuffer;
use xvgs_core::losses::{l1_loss, psnr, regularization_grad, regularization_loss_with, ssim, Distance, SSIM_C1};
use xvgs_core::pipeline::{
    downsample_to_pointcloud, evaluate, finetune, init_cross, random_pointcloud, run_experiment, supplement,
    train_branch, train_cross, voxel_keys, PipelineConfig, RunOutput, Variant,
};
use xvgs_core::voxel::VoxelKey;

use common::{fd_check, random_grad_scene, random_model, FdStats, FD_REL_TOL};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn gradient_correctness() -> Outcome {
    let mut total = FdStats::default();
    for seed in 0..100 {
        total.merge(fd_check(&random_grad_scene(seed)));
    }
    let detail = format!(
        "checked={} max_rel_err={:.3e} shrunk_step={} at_kink={}",
        total.checked, total.max_rel_err, total.shrunk, total.at_kink
    );
    check(
        total.failures == 0 && total.max_rel_err < FD_REL_TOL && total.checked > 0,
        detail.clone(),
        detail,
    )
}

/// Dyadic sums and counts keep every average and mediant exact, so score
/// equality is decided without rounding noise.
fn mediant_superset() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut strict = 0;
    let mut coincide = 0;
    for state in 0..10_000 {
        let g = rng.gen_range(2..=4);
        let groups: Vec<u32> = (0..g as u32).collect();
        let n = rng.gen_range(1..=8);
        let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..n)
            .map(|_| {
                let counts: Vec<u32> = (0..g)
                    .map(|_| if rng.gen_bool(0.15) { 0 } else { rng.gen_range(1..=16) })
                    .collect();
                let shared = rng.gen_range(0..64) as f64 / 1024.0;
                let same = rng.gen_bool(0.3);
                let sums = counts
                    .iter()
                    .map(|&c| {
                        let avg = if same {
                            shared
                        } else {
                            rng.gen_range(0..64) as f64 / 1024.0
                        };
                        avg * c as f64
                    })
                    .collect();
                (sums, counts)
            })
            .collect();
        let acc = GradientAccumulator::from_rows(&groups, &rows);
        let threshold = rng.gen_range(0..64) as f64 / 1024.0;
        let mut policy = DensifyPolicy {
            threshold,
            mode: SelectionMode::Average,
            ..Default::default()
        };
        let avg: HashSet<usize> = select_densify(&acc, &policy).into_iter().collect();
        policy.mode = SelectionMode::GroupMax;
        let max: HashSet<usize> = select_densify(&acc, &policy).into_iter().collect();
        if !avg.is_subset(&max) {
            return Err(format!(
                "state {state}: average selection {avg:?} not within groupmax {max:?}"
            ));
        }
        for (i, (sums, counts)) in rows.iter().enumerate() {
            let avgs: Vec<f64> = sums
                .iter()
                .zip(counts)
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| s / c as f64)
                .collect();
            let (a, m) = (acc.average(i), acc.group_max(i));
            if avgs.is_empty() {
                if a.is_some() || m.is_some() {
                    return Err(format!("state {state} row {i}: unseen primitive has a score"));
                }
                continue;
            }
            let (a, m) = (a.unwrap(), m.unwrap());
            let all_equal = avgs.iter().all(|v| *v == avgs[0]);
            if all_equal != (a == m) || m < a {
                return Err(format!("state {state} row {i}: averages {avgs:?} pooled {a} max {m}"));
            }
            if all_equal {
                coincide += 1;
            } else {
                strict += 1;
            }
        }
    }
    Ok(format!(
        "10000 states, {strict} rows with max > pooled, {coincide} rows with coinciding averages"
    ))
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::from_pixels(w, h, (0..w * h * 3).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn hinge_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut active, mut inactive) = (0, 0);
    let h = 1e-6;
    for t in 0..1000 {
        let distance = if t % 2 == 0 { Distance::L1 } else { Distance::L2 };
        let (w, hgt) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let gt = random_image(&mut rng, w, hgt);
        let pred = random_image(&mut rng, w, hgt);
        // Mix the reference toward gt or away from it to cover both sides.
        let mut reference = random_image(&mut rng, w, hgt);
        let mix = rng.gen::<f64>();
        for (r, g) in reference.pixels.iter_mut().zip(&gt.pixels) {
            *r = mix * *g + (1.0 - mix) * *r;
        }
        let l = regularization_loss_with(distance, &pred, &reference, &gt).map_err(|e| e.to_string())?;
        let d_pred = distance.eval(&pred, &gt).unwrap();
        let d_ref = distance.eval(&reference, &gt).unwrap();
        if l < 0.0 {
            return Err(format!("triple {t}: negative hinge {l}"));
        }
        let (v, grad) = regularization_grad(distance, &pred, &reference, &gt).unwrap();
        if v != l {
            return Err(format!("triple {t}: value mismatch {v} vs {l}"));
        }
        if d_pred <= d_ref {
            inactive += 1;
            if l != 0.0 || grad.pixels.iter().any(|g| *g != 0.0) {
                return Err(format!("triple {t}: inactive hinge is {l} with nonzero gradient"));
            }
        } else {
            active += 1;
        }
        // Finite differences on a few pixels, skipping steps that cross the
        // hinge kink or an L1 kink.
        for _ in 0..3 {
            let k = rng.gen_range(0..pred.pixels.len());
            if (pred.pixels[k] - gt.pixels[k]).abs() < 10.0 * h || (d_pred - d_ref).abs() < 1e-4 {
                continue;
            }
            let eval = |delta: f64| {
                let mut p = pred.clone();
                p.pixels[k] += delta;
                regularization_loss_with(distance, &p, &reference, &gt).unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let err = common::rel_err(grad.pixels[k], numeric);
            if err >= 1e-4 {
                return Err(format!(
                    "triple {t}: pixel {k} analytic {} numeric {numeric}",
                    grad.pixels[k]
                ));
            }
        }
    }
    Ok(format!("1000 triples, {active} active, {inactive} inactive"))
}

fn supplement_union() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut appended = 0;
    for t in 0..1000 {
        let eps = [0.1, 0.25, 0.5][t % 3];
        let sized = |rng: &mut ChaCha8Rng| {
            let n = rng.gen_range(0..30);
            random_model(rng, n, eps)
        };
        let cross = sized(&mut rng);
        let b1 = sized(&mut rng);
        let b2 = sized(&mut rng);
        let (out, _) = supplement(&cross, &[b1.clone(), b2.clone()]).map_err(|e| e.to_string())?;
        let key = |m: &xvgs_core::scene::GaussianModel| -> HashSet<VoxelKey> {
            m.gaussians
                .iter()
                .map(|g| g.position.map(|v| (v / eps).floor() as i64).into())
                .collect()
        };
        let mut expect = key(&cross);
        expect.extend(key(&b1));
        expect.extend(key(&b2));
        let got = voxel_keys(&out).map_err(|e| e.to_string())?;
        if got != expect {
            return Err(format!("triple {t}: voxel grid differs from union"));
        }
        let prefix =
            xvgs_core::scene::GaussianModel::with_gaussians(out.gaussians[..cross.len()].to_vec(), out.voxel_size);
        if !prefix.bit_eq(&cross) {
            return Err(format!("triple {t}: cross model is not a bit-exact prefix"));
        }
        appended += out.len() - cross.len();
    }
    Ok(format!("1000 triples, {appended} primitives appended in total"))
}

fn downsample_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for t in 0..1000 {
        let n = rng.gen_range(1..200);
        let m = random_model(&mut rng, n, 0.2);
        let tau = rng.gen_range(1..=n);
        let pc = downsample_to_pointcloud(&m, tau).map_err(|e| e.to_string())?;
        if pc.len() != n.div_ceil(tau) {
            return Err(format!("model {t}: |m|={n} tau={tau} gave {}", pc.len()));
        }
        let input: HashSet<[u64; 3]> = m
            .gaussians
            .iter()
            .map(|g| g.position.map(f64::to_bits).into())
            .collect();
        if !pc
            .points
            .iter()
            .all(|p| input.contains(&<[u64; 3]>::from(p.map(f64::to_bits))))
        {
            return Err(format!("model {t}: output point not in input"));
        }
        if downsample_to_pointcloud(&m, tau).unwrap() != pc {
            return Err(format!("model {t}: repeated call differs"));
        }
    }
    Ok("1000 random models".into())
}

fn loss_unit_values() -> Outcome {
    let l1 = l1_loss(
        &ImageBuffer::filled(8, 8, [0.5; 3]),
        &ImageBuffer::filled(8, 8, [0.25; 3]),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let img = random_image(&mut rng, 16, 16);
    let s_same = ssim(&img, &img).unwrap();
    let s01 = ssim(
        &ImageBuffer::filled(16, 16, [0.0; 3]),
        &ImageBuffer::filled(16, 16, [1.0; 3]),
    )
    .unwrap();
    let p = psnr(
        &ImageBuffer::filled(4, 4, [0.5; 3]),
        &ImageBuffer::filled(4, 4, [0.6; 3]),
    )
    .unwrap();
    let detail = format!("l1={l1} ssim_same={s_same} ssim01={s01:.12} psnr={p:.12}");
    let ok = l1 == 0.25
        && (s_same - 1.0).abs() < 1e-12
        && (s01 - SSIM_C1 / (1.0 + SSIM_C1)).abs() < 1e-9
        && (p - 20.0).abs() < 1e-9;
    check(ok, detail.clone(), detail)
}

fn bundled_dataset() -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&SceneSpec::default(), dir.path()).unwrap();
    (dir, data)
}

const INIT: Variant = Variant {
    branch_init: true,
    ..Variant::BASELINE
};
const REG_GROUPMAX: Variant = Variant {
    group_max: true,
    regularize: true,
    ..Variant::BASELINE
};
const SUPPLEMENT: Variant = Variant {
    supplement: true,
    ..Variant::BASELINE
};
const VARIANTS: [Variant; 5] = [Variant::BASELINE, INIT, REG_GROUPMAX, SUPPLEMENT, Variant::FULL];
const SEEDS: [u64; 3] = [0, 1, 2];

/// `runs[seed][variant]` in `SEEDS` x `VARIANTS` order. Seeds run on
/// separate threads.
fn run_bundled_experiment(data: &Dataset) -> Vec<Vec<RunOutput>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = SEEDS
            .iter()
            .map(|&seed| {
                s.spawn(move || {
                    let cfg = PipelineConfig {
                        seed,
                        ..Default::default()
                    };
                    run_experiment(data, &cfg, &VARIANTS).unwrap().1
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn mean_psnr(runs: &[Vec<RunOutput>], v: usize) -> f64 {
    runs.iter().map(|r| r[v].metrics.overall.psnr).sum::<f64>() / runs.len() as f64
}

fn print_table(runs: &[Vec<RunOutput>]) {
    for (si, seed_runs) in runs.iter().enumerate() {
        for r in seed_runs {
            let groups: Vec<String> = r
                .metrics
                .groups
                .iter()
                .map(|(g, m)| format!("g{g}={:.3}", m.psnr))
                .collect();
            println!(
                "    seed={} {:<24} psnr={:.3} ssim={:.4} {} primitives={}",
                SEEDS[si],
                r.variant.name(),
                r.metrics.overall.psnr,
                r.metrics.overall.ssim,
                groups.join(" "),
                r.model.len()
            );
        }
    }
}

fn end_to_end(runs: &[Vec<RunOutput>]) -> Outcome {
    let (base, full) = (mean_psnr(runs, 0), mean_psnr(runs, 4));
    let mut worst = f64::INFINITY;
    for seed_runs in runs {
        for (g, m) in &seed_runs[4].metrics.groups {
            let b = seed_runs[0].metrics.group(*g).unwrap();
            worst = worst.min(m.psnr - b.psnr);
        }
    }
    let detail = format!(
        "full={full:.3} baseline={base:.3} gain={:+.3} dB, worst per-group delta={worst:+.3} dB",
        full - base
    );
    check(full > base && worst >= -0.1, detail.clone(), detail)
}

fn ablation(runs: &[Vec<RunOutput>]) -> Outcome {
    let base = mean_psnr(runs, 0);
    let gains: Vec<f64> = (1..=3).map(|v| mean_psnr(runs, v) - base).collect();
    let detail = format!(
        "gain init={:+.3} reg+groupmax={:+.3} supplement={:+.3} dB",
        gains[0], gains[1], gains[2]
    );
    let ok = gains.iter().all(|g| *g >= -0.05)
        && gains.iter().filter(|g| **g > 0.0).count() >= 2
        && gains[1] >= gains[0]
        && gains[1] >= gains[2];
    check(ok, detail.clone(), detail)
}

/// Every stage twice from the same inputs and seed, at reduced length.
fn determinism() -> Outcome {
    let spec = SceneSpec::default();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_synthetic(&spec, d1.path()).map_err(|e| e.to_string())?;
    generate_synthetic(&spec, d2.path()).map_err(|e| e.to_string())?;
    for entry in walk(d1.path()) {
        let rel = entry.strip_prefix(d1.path()).unwrap();
        if std::fs::read(&entry).unwrap() != std::fs::read(d2.path().join(rel)).unwrap() {
            return Err(format!("generated file {} differs", rel.display()));
        }
    }
    let data = load_dataset(d1.path()).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        branch_iters: 400,
        cross_iters: 400,
        finetune_iters: 200,
        densify_from: 100,
        seed: 5,
        ..Default::default()
    };
    let stages = || -> xvgs_core::Result<Vec<Vec<u8>>> {
        let pc = random_pointcloud(&data.bounds, cfg.init_points, cfg.seed);
        let branches: Vec<_> = data
            .groups
            .iter()
            .map(|g| train_branch(g, &pc, &cfg).map(|t| t.model))
            .collect::<Result<_, _>>()?;
        let init = init_cross(&downsample_to_pointcloud(&branches[0], cfg.downsample_ratio)?, &cfg)?;
        let cross = train_cross(&init, &data.groups, &branches, &cfg, SelectionMode::GroupMax)?;
        let (joined, report) = supplement(&cross.model, &branches)?;
        let tuned = finetune(&joined, &data.groups, &cfg)?;
        let metrics = evaluate(&tuned.model, &data.groups, cfg.background)?;
        let mut out: Vec<Vec<u8>> = branches.iter().map(serialize_model).collect();
        out.push(serialize_model(&cross.model));
        out.push(serde_json::to_vec(&report).unwrap());
        out.push(serialize_model(&tuned.model));
        out.push(metrics.to_string().into_bytes());
        Ok(out)
    };
    let a = stages().map_err(|e| e.to_string())?;
    let b = stages().map_err(|e| e.to_string())?;
    let names = [
        "branch 0",
        "branch 1",
        "cross",
        "supplement report",
        "finetuned",
        "metrics report",
    ];
    for (i, name) in names.iter().enumerate() {
        if a[i] != b[i] {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok(format!("dataset, {} stage outputs bit-identical", names.len()))
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn report(name: &str, started: Instant, outcome: &Outcome) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => println!("PASS  {name:<28} ({secs:.1}s) {d}"),
        Err(d) => println!("FAIL  {name:<28} ({secs:.1}s) {d}"),
    }
    outcome.is_ok()
}

/// Positional arguments select criteria by substring; none runs all.
fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut all_ok = true;
    let quick: [Criterion; 6] = [
        ("gradient correctness", gradient_correctness),
        ("mediant superset", mediant_superset),
        ("hinge properties", hinge_properties),
        ("supplement union", supplement_union),
        ("downsample determinism", downsample_determinism),
        ("loss unit values", loss_unit_values),
    ];
    for (name, f) in quick.into_iter().filter(|(n, _)| wanted(n)) {
        let t = Instant::now();
        all_ok &= report(name, t, &f());
    }

    if wanted("end-to-end vs baseline") || wanted("ablation direction") {
        let t = Instant::now();
        let (_dir, data) = bundled_dataset();
        let runs = run_bundled_experiment(&data);
        print_table(&runs);
        all_ok &= report("end-to-end vs baseline", t, &end_to_end(&runs));
        all_ok &= report("ablation direction", t, &ablation(&runs));
    }

    if wanted("determinism") {
        let t = Instant::now();
        all_ok &= report("determinism", t, &determinism());
    }

    if !all_ok {
        std::process::exit(1);
    }
}

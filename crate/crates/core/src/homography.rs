//! Inverse-perspective-mapping homography and projective image warping.
//!
//! Points are `(y, x)` = `(row, column)` in continuous image coordinates
//! where the image spans `[0, H] x [0, W]` and pixel `(i, j)` has its center
//! at `(i + 0.5, j + 0.5)`.

use crate::error::{Error, Result};
use crate::imageio::{resize_bilinear, sample_bilinear, ImageBuffer};

pub type Point = (f64, f64);

/// Minimum absolute triangle area for a corner triple to count as non-collinear.
pub const MIN_TRIANGLE_AREA: f64 = 1e-9;

/// Homogeneous `w` below this magnitude means the point maps to infinity.
const W_EPS: f64 = 1e-12;

/// Slack when deciding whether a preimage lies inside the source extent.
const BOUNDS_EPS: f64 = 1e-9;

/// 3x3 projective transform acting on `(y, x, 1)`, normalized so `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub const IDENTITY: Homography = Homography {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Normalizes by `m[2][2]` and rejects singular or non-finite matrices.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "homography entries must be finite".into(),
            ));
        }
        let s = m[2][2];
        if s.abs() < W_EPS {
            return Err(Error::InvalidArgument("homography m[2][2] is zero".into()));
        }
        let mut n = m;
        for v in n.iter_mut().flatten() {
            *v /= s;
        }
        n[2][2] = 1.0;
        let h = Homography { m: n };
        if h.determinant().abs() < 1e-300 {
            return Err(Error::SingularSystem);
        }
        Ok(h)
    }

    pub fn scaling(sy: f64, sx: f64) -> Result<Self> {
        Self::new([[sy, 0.0, 0.0], [0.0, sx, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Homography> {
        let m = &self.m;
        let det = self.determinant();
        if det.abs() < 1e-300 {
            return Err(Error::SingularSystem);
        }
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        // The adjugate is the inverse up to scale; normalization removes 1/det.
        Homography::new(adj)
    }

    pub fn compose(&self, other: &Homography) -> Result<Homography> {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Homography::new(out)
    }

    /// Projective application to a `(y, x)` point.
    pub fn apply(&self, p: Point) -> Result<Point> {
        let m = &self.m;
        let (y, x) = p;
        let w = m[2][0] * y + m[2][1] * x + m[2][2];
        if w.abs() < W_EPS {
            return Err(Error::PointAtInfinity(w));
        }
        let ny = m[0][0] * y + m[0][1] * x + m[0][2];
        let nx = m[1][0] * y + m[1][1] * x + m[1][2];
        Ok((ny / w, nx / w))
    }
}

/// Four ordered `(y, x)` corners, no three collinear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerSet {
    corners: [Point; 4],
}

impl CornerSet {
    pub fn new(corners: [Point; 4]) -> Result<Self> {
        if corners
            .iter()
            .any(|(y, x)| !y.is_finite() || !x.is_finite())
        {
            return Err(Error::DegenerateCorners("non-finite coordinate".into()));
        }
        for skip in 0..4 {
            let tri: Vec<Point> = (0..4).filter(|&i| i != skip).map(|i| corners[i]).collect();
            let area = triangle_area(tri[0], tri[1], tri[2]);
            if area <= MIN_TRIANGLE_AREA {
                return Err(Error::DegenerateCorners(format!(
                    "corners other than #{skip} are collinear (area {area:e})"
                )));
            }
        }
        Ok(Self { corners })
    }

    pub fn corners(&self) -> &[Point; 4] {
        &self.corners
    }

    /// Smallest `(rows, cols)` canvas anchored at the origin containing every corner.
    pub fn bounding_extent(&self) -> (usize, usize) {
        let max_y = self.corners.iter().map(|c| c.0).fold(0.0, f64::max);
        let max_x = self.corners.iter().map(|c| c.1).fold(0.0, f64::max);
        (
            max_y.ceil().max(1.0) as usize,
            max_x.ceil().max(1.0) as usize,
        )
    }
}

pub fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1)).abs()
}

/// The inverse-perspective corner correspondence for an `h x w` ground view:
/// the bottom edge stays fixed and the top edge slides right by `w`, giving an
/// `h x 2w` destination.
pub fn ipm_corner_mapping(h: usize, w: usize) -> Result<(CornerSet, CornerSet)> {
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument(format!(
            "IPM mapping needs h, w >= 2, got {h}x{w}"
        )));
    }
    let (h, w) = (h as f64, w as f64);
    let src = CornerSet::new([(0.0, 0.0), (h, 0.0), (h, w), (0.0, w)])?;
    let dst = CornerSet::new([(0.0, w), (h, 0.0), (h, w), (0.0, 2.0 * w)])?;
    Ok((src, dst))
}

/// Solves the 8x8 direct linear system (with `m[2][2] = 1`) mapping each
/// `src[i]` onto `dst[i]`.
pub fn solve_homography(src: &CornerSet, dst: &CornerSet) -> Result<Homography> {
    // Unknowns: m00 m01 m02 m10 m11 m12 m20 m21.
    let mut a = [[0.0f64; 9]; 8];
    for (k, (&(y, x), &(v, u))) in src.corners.iter().zip(dst.corners.iter()).enumerate() {
        a[2 * k] = [y, x, 1.0, 0.0, 0.0, 0.0, -v * y, -v * x, v];
        a[2 * k + 1] = [0.0, 0.0, 0.0, y, x, 1.0, -u * y, -u * x, u];
    }
    let sol = gauss_solve(&mut a)?;
    Homography::new([
        [sol[0], sol[1], sol[2]],
        [sol[3], sol[4], sol[5]],
        [sol[6], sol[7], 1.0],
    ])
}

/// Gaussian elimination with partial pivoting on an augmented 8x9 system.
fn gauss_solve(a: &mut [[f64; 9]; 8]) -> Result<[f64; 8]> {
    const N: usize = 8;
    let scale = a
        .iter()
        .flat_map(|r| r[..N].iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= 1e-12 * scale {
            return Err(Error::SingularSystem);
        }
        a.swap(col, pivot);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            let pivot_row = a[col];
            for (v, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *v -= f * p;
            }
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let tail: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][N] - tail) / a[row][row];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(x)
}

/// Inverse-mapping warp: every output pixel center goes through `hmat^-1`
/// and is bilinearly sampled from the source. Preimages outside the source
/// extent take `fill`.
pub fn warp_image(
    image: &ImageBuffer,
    hmat: &Homography,
    out_h: usize,
    out_w: usize,
    fill: f64,
) -> Result<ImageBuffer> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(
            "warp target must be non-empty".into(),
        ));
    }
    let inv = hmat.inverse()?;
    let fill = fill.clamp(0.0, 1.0);
    let c = image.channels();
    let (h, w) = (image.height() as f64, image.width() as f64);
    let row = |i: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(out_w * c);
        for j in 0..out_w {
            let center = (i as f64 + 0.5, j as f64 + 0.5);
            match inv.apply(center) {
                Ok((sy, sx))
                    if (-BOUNDS_EPS..=h + BOUNDS_EPS).contains(&sy)
                        && (-BOUNDS_EPS..=w + BOUNDS_EPS).contains(&sx) =>
                {
                    for ch in 0..c {
                        out.push(sample_bilinear(image, sy - 0.5, sx - 0.5, ch));
                    }
                }
                _ => out.extend(std::iter::repeat_n(fill, c)),
            }
        }
        out
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..out_h).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = (0..out_h).map(row).collect();
    ImageBuffer::new(out_h, out_w, c, rows.concat())
}

/// Corner correspondence and fill used by [`make_pseudo_aerial_with`].
#[derive(Debug, Clone, Copy)]
pub struct PseudoAerialOptions {
    /// Overrides the IPM correspondence when set.
    pub corners: Option<(CornerSet, CornerSet)>,
    pub fill: f64,
}

impl Default for PseudoAerialOptions {
    fn default() -> Self {
        Self {
            corners: None,
            fill: 0.0,
        }
    }
}

/// Projects a square ground view onto its pseudo-aerial view: IPM warp onto
/// the `h x 2w` destination canvas, then resize to `out_size x out_size`.
pub fn make_pseudo_aerial(image: &ImageBuffer, out_size: usize) -> Result<ImageBuffer> {
    make_pseudo_aerial_with(image, out_size, &PseudoAerialOptions::default())
}

pub fn make_pseudo_aerial_with(
    image: &ImageBuffer,
    out_size: usize,
    opts: &PseudoAerialOptions,
) -> Result<ImageBuffer> {
    if image.height() != image.width() {
        return Err(Error::InvalidArgument(format!(
            "pseudo-aerial projection expects a square image, got {}x{}",
            image.height(),
            image.width()
        )));
    }
    let (src, dst) = match opts.corners {
        Some(pair) => pair,
        None => ipm_corner_mapping(image.height(), image.width())?,
    };
    let hmat = solve_homography(&src, &dst)?;
    let (canvas_h, canvas_w) = dst.bounding_extent();
    let warped = warp_image(image, &hmat, canvas_h, canvas_w, opts.fill)?;
    resize_bilinear(&warped, out_size, out_size)
}

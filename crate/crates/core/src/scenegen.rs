//! Deterministic front/aerial renderings of single-object scenes.
//!
//! Both views share the horizontal coordinate `u`, so a faithful aerial
//! translation of a front view must keep the object's color and column.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imageio::{read_image, write_image, ImageBuffer};
use crate::prompting::compose_view_prompts;
use crate::rng::SeededRng;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const DEFAULT_SIZE: usize = 16;

/// Sky color above the horizon in front views.
pub const SKY: [f64; 3] = [1.0, 1.0, 1.0];
/// Normalized row of the horizon in front views.
pub const HORIZON: f64 = 0.55;
/// Normalized row where front-view objects touch the floor.
pub const FRONT_BASE: f64 = 0.85;
/// Normalized row of the footprint center in aerial views.
pub const AERIAL_CENTER: f64 = 0.5;

pub const U_RANGE: (f64, f64) = (0.2, 0.8);
pub const SCALE_RANGE: (f64, f64) = (0.2, 0.4);
pub const FLOOR_RANGE: (f64, f64) = (0.3, 0.7);

macro_rules! named_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($name), " {:?}"), s
                    )))
            }
        }
    };
}

named_enum!(Shape { Cube => "cube", Cylinder => "cylinder", Pyramid => "pyramid" });
named_enum!(Color { Red => "red", Green => "green", Blue => "blue", Yellow => "yellow" });
named_enum!(View { Front => "front", Aerial => "aerial" });

impl Color {
    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub shape: Shape,
    pub color: Color,
    /// Horizontal object center as a fraction of the image width.
    pub u: f64,
    /// Object size as a fraction of the image side.
    pub scale: f64,
    /// Gray level of the floor.
    pub floor: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !inside(self.u, U_RANGE)
            || !inside(self.scale, SCALE_RANGE)
            || !inside(self.floor, FLOOR_RANGE)
        {
            return Err(Error::InvalidArgument(format!(
                "scene parameters out of range: {self:?}"
            )));
        }
        Ok(())
    }

    /// Scene text such as `"a red cube"`.
    pub fn description(&self) -> String {
        format!("a {} {}", self.color, self.shape)
    }

    pub fn prompt(&self, view: View) -> String {
        let (src, tgt) = compose_view_prompts(&self.description()).expect("non-empty description");
        match view {
            View::Front => src,
            View::Aerial => tgt,
        }
    }

    pub fn draw(rng: &mut SeededRng) -> Self {
        let shape = Shape::ALL[rng.below(Shape::ALL.len())];
        let color = Color::ALL[rng.below(Color::ALL.len())];
        let u = rng.uniform_in(U_RANGE.0, U_RANGE.1);
        let scale = rng.uniform_in(SCALE_RANGE.0, SCALE_RANGE.1);
        let floor = rng.uniform_in(FLOOR_RANGE.0, FLOOR_RANGE.1);
        Self {
            shape,
            color,
            u,
            scale,
            floor,
        }
    }

    /// Whether the normalized point `(py, px)` is covered by the object.
    fn covers(&self, view: View, py: f64, px: f64) -> bool {
        let s = self.scale;
        let dx = px - self.u;
        match view {
            View::Front => {
                let up = FRONT_BASE - py;
                match self.shape {
                    Shape::Cube => dx.abs() <= s / 2.0 && (0.0..=s).contains(&up),
                    Shape::Cylinder => dx.abs() <= s / 2.0 && (0.0..=1.25 * s).contains(&up),
                    Shape::Pyramid => (0.0..=s).contains(&up) && dx.abs() <= (s - up) / 2.0,
                }
            }
            View::Aerial => {
                let dy = py - AERIAL_CENTER;
                match self.shape {
                    Shape::Cube => dx.abs() <= s / 2.0 && dy.abs() <= s / 2.0,
                    Shape::Cylinder => dx * dx + dy * dy <= s * s / 4.0,
                    Shape::Pyramid => dx.abs() + dy.abs() <= 0.6 * s,
                }
            }
        }
    }
}

/// Analytic painter's rendering sampled at pixel centers.
pub fn render_view(spec: &SceneSpec, view: View, size: usize) -> Result<ImageBuffer> {
    if size < 8 {
        return Err(Error::InvalidArgument(format!(
            "render size must be >= 8, got {size}"
        )));
    }
    let floor = [spec.floor; 3];
    let object = spec.color.rgb();
    let mut data = Vec::with_capacity(size * size * 3);
    for i in 0..size {
        let py = (i as f64 + 0.5) / size as f64;
        for j in 0..size {
            let px = (j as f64 + 0.5) / size as f64;
            let rgb = if spec.covers(view, py, px) {
                object
            } else if view == View::Front && py < HORIZON {
                SKY
            } else {
                floor
            };
            data.extend_from_slice(&rgb);
        }
    }
    ImageBuffer::new(size, size, 3, data)
}

pub fn generate_specs(n_scenes: usize, seed: u64) -> Vec<SceneSpec> {
    let mut rng = SeededRng::new(seed);
    (0..n_scenes).map(|_| SceneSpec::draw(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: usize,
    pub view: View,
    pub prompt: String,
    /// Image path relative to the manifest directory.
    pub path: PathBuf,
    pub spec: SceneSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub size: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Tab-separated lines `id view prompt path shape color u scale`.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    e.id,
                    e.view,
                    e.prompt,
                    e.path.display(),
                    e.spec.shape,
                    e.spec.color,
                    e.spec.u,
                    e.spec.scale
                )
            })
            .collect()
    }

    /// Reads `manifest.tsv` from `dir`. The floor shade is not a manifest
    /// column; it is recovered from the corner pixel of each aerial image.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let text = fs::read_to_string(root.join(MANIFEST_FILE))?;
        let mut rows = Vec::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 8 {
                return Err(Error::Config(format!(
                    "manifest line {}: expected 8 columns, found {}",
                    n + 1,
                    cols.len()
                )));
            }
            let bad = |what: &str| Error::Config(format!("manifest line {}: bad {what}", n + 1));
            rows.push((
                cols[0].parse::<usize>().map_err(|_| bad("id"))?,
                cols[1].parse::<View>()?,
                cols[2].to_string(),
                PathBuf::from(cols[3]),
                cols[4].parse::<Shape>()?,
                cols[5].parse::<Color>()?,
                cols[6].parse::<f64>().map_err(|_| bad("u"))?,
                cols[7].parse::<f64>().map_err(|_| bad("scale"))?,
            ));
        }
        let mut entries = Vec::with_capacity(rows.len());
        let mut size = 0;
        for (id, view, prompt, path, shape, color, u, scale) in rows {
            let aerial = if view == View::Aerial {
                path.clone()
            } else {
                path.with_file_name(
                    path.file_name()
                        .and_then(|f| f.to_str())
                        .map(|f| f.replace("_front", "_aerial"))
                        .ok_or_else(|| Error::Config("manifest path has no file name".into()))?,
                )
            };
            let img = read_image(root.join(&aerial))?;
            size = img.height();
            let floor = img.get(0, 0, 0);
            entries.push(ManifestEntry {
                id,
                view,
                prompt,
                path,
                spec: SceneSpec {
                    shape,
                    color,
                    u,
                    scale,
                    floor,
                },
            });
        }
        Ok(Self {
            root,
            size,
            entries,
        })
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn entry(&self, id: usize, view: View) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id && e.view == view)
    }

    pub fn scene_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.view == View::Front)
            .count()
    }
}

pub fn image_file_name(id: usize, view: View) -> String {
    format!("scene_{id:04}_{view}.ppm")
}

/// Draws `n_scenes` specs from `seed`, renders both views of each, and
/// writes the images plus `manifest.tsv` into `out_dir`.
pub fn generate_dataset(
    n_scenes: usize,
    size: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if n_scenes == 0 {
        return Err(Error::InvalidArgument(
            "dataset needs at least one scene".into(),
        ));
    }
    let root = out_dir.as_ref().to_path_buf();
    fs::create_dir_all(&root)?;
    let mut entries = Vec::with_capacity(2 * n_scenes);
    for (id, spec) in generate_specs(n_scenes, seed).into_iter().enumerate() {
        for view in [View::Front, View::Aerial] {
            let path = PathBuf::from(image_file_name(id, view));
            write_image(&render_view(&spec, view, size)?, root.join(&path))?;
            entries.push(ManifestEntry {
                id,
                view,
                prompt: spec.prompt(view),
                path,
                spec,
            });
        }
    }
    let manifest = DatasetManifest {
        root,
        size,
        entries,
    };
    fs::write(manifest.root.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(manifest)
}

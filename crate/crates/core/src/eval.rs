//! Viewpoint probe and fidelity measures on synthetic scenes.

use crate::error::{check_len, Error, Result};
use crate::imageio::{read_image, ImageBuffer};
use crate::rng::SeededRng;
use crate::scenegen::{Color, DatasetManifest, SceneSpec, View};

pub const PROBE_STEPS: usize = 500;
pub const PROBE_LR: f64 = 0.1;
pub const PROBE_MIN_ACCURACY: f64 = 0.95;

/// Pixels closer than this (max-channel) to the floor shade count as floor.
pub const FLOOR_TOLERANCE: f64 = 0.2;
/// Pixels farther than this (Euclidean) from every primary are ignored.
pub const PRIMARY_TOLERANCE: f64 = 0.5;
/// Centroid error in pixels absorbed by rasterization before the score drops.
pub const CENTROID_SLACK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageBuffer,
    pub view: View,
}

/// Logistic regression over centered pixels (`p - 0.5`); the last weight is the bias.
/// Output 1 means aerial.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewpointProbe {
    weights: Vec<f64>,
    training_accuracy: f64,
}

impl ViewpointProbe {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn training_accuracy(&self) -> f64 {
        self.training_accuracy
    }

    pub fn input_dim(&self) -> usize {
        self.weights.len() - 1
    }

    fn score(&self, pixels: &[f64]) -> f64 {
        let (w, b) = self.weights.split_at(pixels.len());
        b[0] + w
            .iter()
            .zip(pixels)
            .map(|(w, p)| w * (p - 0.5))
            .sum::<f64>()
    }

    /// Probability that `image` is an aerial view.
    pub fn aerialness(&self, image: &ImageBuffer) -> Result<f64> {
        check_len("probe input dimension", self.input_dim(), image.len())?;
        Ok(sigmoid(self.score(image.data())))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Full-batch gradient descent on the logistic loss (500 steps, lr 0.1),
/// rejected unless training accuracy reaches 0.95.
pub fn train_probe(samples: &[LabeledImage], seed: u64) -> Result<ViewpointProbe> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let dim = first.image.len();
    for s in samples {
        check_len("probe training image size", dim, s.image.len())?;
    }
    let aerial = samples.iter().filter(|s| s.view == View::Aerial).count();
    if aerial == 0 || aerial == samples.len() {
        return Err(Error::SingleClass);
    }
    let mut rng = SeededRng::new(seed);
    let mut probe = ViewpointProbe {
        weights: (0..=dim).map(|_| rng.uniform_in(-0.01, 0.01)).collect(),
        training_accuracy: 0.0,
    };
    let n = samples.len() as f64;
    let mut grad = vec![0.0; dim + 1];
    for _ in 0..PROBE_STEPS {
        grad.fill(0.0);
        for s in samples {
            let y = if s.view == View::Aerial { 1.0 } else { 0.0 };
            let r = sigmoid(probe.score(s.image.data())) - y;
            for (g, p) in grad[..dim].iter_mut().zip(s.image.data()) {
                *g += r * (p - 0.5);
            }
            grad[dim] += r;
        }
        for (w, g) in probe.weights.iter_mut().zip(&grad) {
            *w -= PROBE_LR * g / n;
        }
    }
    let correct = samples
        .iter()
        .filter(|s| (probe.score(s.image.data()) > 0.0) == (s.view == View::Aerial))
        .count();
    probe.training_accuracy = correct as f64 / n;
    if probe.training_accuracy < PROBE_MIN_ACCURACY {
        return Err(Error::ProbeRejected {
            accuracy: probe.training_accuracy,
        });
    }
    Ok(probe)
}

pub fn load_labeled_images(manifest: &DatasetManifest) -> Result<Vec<LabeledImage>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(LabeledImage {
                image: read_image(manifest.image_path(e))?,
                view: e.view,
            })
        })
        .collect()
}

pub fn train_probe_from_manifest(manifest: &DatasetManifest, seed: u64) -> Result<ViewpointProbe> {
    train_probe(&load_labeled_images(manifest)?, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub color_match: bool,
    /// Distance in pixels between the object centroid column and `u * width`;
    /// infinite when no object was found.
    pub centroid_err: f64,
    /// `color_match * max(0, 1 - max(0, centroid_err - CENTROID_SLACK) / (width / 4))`.
    pub score: f64,
    pub dominant: Option<Color>,
    pub object_pixels: usize,
}

impl FidelityReport {
    pub fn no_object(&self) -> bool {
        self.dominant.is_none()
    }
}

/// Nearest primary to `rgb` if it is within [`PRIMARY_TOLERANCE`].
pub fn classify_primary(rgb: &[f64]) -> Option<Color> {
    Color::ALL
        .iter()
        .map(|&c| {
            let d2: f64 = c
                .rgb()
                .iter()
                .zip(rgb)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (c, d2)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .filter(|&(_, d2)| d2 <= PRIMARY_TOLERANCE * PRIMARY_TOLERANCE)
        .map(|(c, _)| c)
}

/// Compares the dominant non-floor object region of `generated` against `spec`.
pub fn fidelity(spec: &SceneSpec, generated: &ImageBuffer) -> Result<FidelityReport> {
    if generated.channels() != 3 {
        return Err(Error::InvalidArgument(
            "fidelity expects an RGB image".into(),
        ));
    }
    let mut counts = [0usize; 4];
    let mut col_sums = [0.0f64; 4];
    for i in 0..generated.height() {
        for j in 0..generated.width() {
            let px = generated.pixel(i, j);
            let floor_dist = px
                .iter()
                .map(|v| (v - spec.floor).abs())
                .fold(0.0, f64::max);
            if floor_dist <= FLOOR_TOLERANCE {
                continue;
            }
            if let Some(c) = classify_primary(px) {
                let k = Color::ALL
                    .iter()
                    .position(|&x| x == c)
                    .expect("known color");
                counts[k] += 1;
                col_sums[k] += j as f64 + 0.5;
            }
        }
    }
    // Ties resolve toward the earlier color in `Color::ALL`.
    let best = (0..4).fold(0, |b, k| if counts[k] > counts[b] { k } else { b });
    if counts[best] == 0 {
        return Ok(FidelityReport {
            color_match: false,
            centroid_err: f64::INFINITY,
            score: 0.0,
            dominant: None,
            object_pixels: 0,
        });
    }
    let dominant = Color::ALL[best];
    let width = generated.width() as f64;
    let centroid = col_sums[best] / counts[best] as f64;
    let centroid_err = (centroid - spec.u * width).abs();
    let color_match = dominant == spec.color;
    let score = if color_match {
        (1.0 - (centroid_err - CENTROID_SLACK).max(0.0) / (width / 4.0)).max(0.0)
    } else {
        0.0
    };
    Ok(FidelityReport {
        color_match,
        centroid_err,
        score,
        dominant: Some(dominant),
        object_pixels: counts[best],
    })
}

/// One evaluated output: `image<TAB>aerialness<TAB>color_match<TAB>centroid_err<TAB>score`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub aerialness: f64,
    pub fidelity: Option<FidelityReport>,
}

impl EvalRow {
    pub fn to_line(&self) -> String {
        match &self.fidelity {
            Some(f) => format!(
                "{}\t{:.6}\t{}\t{:.6}\t{:.6}",
                self.image,
                self.aerialness,
                u8::from(f.color_match),
                f.centroid_err,
                f.score
            ),
            None => format!("{}\t{:.6}\tNA\tNA\tNA", self.image, self.aerialness),
        }
    }
}

//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each exported function wraps a plain Rust function of the same name with a
//! `_impl` suffix, so the logic is testable without a browser.

use aerial_core::homography::{make_pseudo_aerial_with, PseudoAerialOptions};
use aerial_core::imageio::ImageBuffer;
use aerial_core::prompting::{build_conditioning_plan, Slot, Strategy};
use aerial_core::scenegen::{render_view, SceneSpec, View};
use aerial_core::toydiffusion::{make_schedule, ConditioningEmbedding, ScheduleKind};
use wasm_bindgen::prelude::*;

type Res<T> = Result<T, String>;

fn err(e: impl ToString) -> String {
    e.to_string()
}

fn rgba_to_image(rgba: &[u8], height: usize, width: usize) -> Res<ImageBuffer> {
    if rgba.len() != height * width * 4 {
        return Err(format!(
            "expected {} RGBA bytes, got {}",
            height * width * 4,
            rgba.len()
        ));
    }
    let data = rgba
        .chunks_exact(4)
        .flat_map(|p| [p[0], p[1], p[2]])
        .map(|b| f64::from(b) / 255.0)
        .collect();
    ImageBuffer::new(height, width, 3, data).map_err(err)
}

pub fn render_scene_impl(
    shape: &str,
    color: &str,
    u: f64,
    scale: f64,
    floor: f64,
    view: &str,
    size: usize,
) -> Res<Vec<u8>> {
    let spec = SceneSpec {
        shape: shape.parse().map_err(err)?,
        color: color.parse().map_err(err)?,
        u,
        scale,
        floor,
    };
    spec.validate().map_err(err)?;
    let view: View = view.parse().map_err(err)?;
    Ok(render_view(&spec, view, size).map_err(err)?.to_rgba8())
}

pub fn pseudo_aerial_impl(
    rgba: &[u8],
    height: usize,
    width: usize,
    out_size: usize,
    fill: f64,
) -> Res<Vec<u8>> {
    let img = rgba_to_image(rgba, height, width)?;
    let opts = PseudoAerialOptions {
        corners: None,
        fill,
    };
    Ok(make_pseudo_aerial_with(&img, out_size, &opts)
        .map_err(err)?
        .to_rgba8())
}

/// One character per denoising step, `1` for the target embedding and `2`
/// for the interpolated one.
pub fn conditioning_plan_impl(strategy: &str, steps: usize, alpha: f64) -> Res<String> {
    let strategy: Strategy = strategy.parse().map_err(err)?;
    let e = ConditioningEmbedding::new(vec![0.0]).map_err(err)?;
    let plan = build_conditioning_plan(strategy, steps, alpha, &e, &e).map_err(err)?;
    Ok(plan
        .slots()
        .iter()
        .map(|s| match s {
            Slot::E1 => '1',
            Slot::E2 => '2',
        })
        .collect())
}

pub fn alpha_bar_curve_impl(
    kind: &str,
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Res<Vec<f64>> {
    let kind: ScheduleKind = kind.parse().map_err(err)?;
    Ok(make_schedule(steps, beta_start, beta_end, kind)
        .map_err(err)?
        .alpha_bar()
        .to_vec())
}

pub fn strategy_names() -> Vec<String> {
    Strategy::ALL.iter().map(|s| s.name().to_string()).collect()
}

#[wasm_bindgen]
pub fn render_scene(
    shape: &str,
    color: &str,
    u: f64,
    scale: f64,
    floor: f64,
    view: &str,
    size: usize,
) -> Result<Vec<u8>, JsError> {
    render_scene_impl(shape, color, u, scale, floor, view, size).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn pseudo_aerial(
    rgba: &[u8],
    height: usize,
    width: usize,
    out_size: usize,
    fill: f64,
) -> Result<Vec<u8>, JsError> {
    pseudo_aerial_impl(rgba, height, width, out_size, fill).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn conditioning_plan(strategy: &str, steps: usize, alpha: f64) -> Result<String, JsError> {
    conditioning_plan_impl(strategy, steps, alpha).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn alpha_bar_curve(
    kind: &str,
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<Vec<f64>, JsError> {
    alpha_bar_curve_impl(kind, steps, beta_start, beta_end).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn strategies() -> Vec<String> {
    strategy_names()
}

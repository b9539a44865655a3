//! Browser bindings: scatter a small grid through one transposed
//! convolution, grow a feature vector into the 32×32 image of an untrained
//! network, and list the layer-by-layer shape trace.

use std::cell::RefCell;

use wasm_bindgen::prelude::*;

use dcnet_core::layers::{deconv2d_forward, ConvKernel};
use dcnet_core::model::{Model, ModelConfig, Task};
use dcnet_core::{Shape4, Tensor4};

/// Kernel fillings offered by the page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelPreset {
    Ones,
    /// Separable tent, brightest in the middle.
    Tent,
    /// Only the top-left tap is set, which shows the scatter offsets.
    Corner,
}

impl KernelPreset {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "ones" => Some(KernelPreset::Ones),
            "tent" => Some(KernelPreset::Tent),
            "corner" => Some(KernelPreset::Corner),
            _ => None,
        }
    }

    fn weight(self, p: usize, q: usize, k: usize) -> f32 {
        match self {
            KernelPreset::Ones => 1.0,
            KernelPreset::Tent => {
                let c = (k as f32 - 1.0) / 2.0;
                let tent = |i: usize| 1.0 - (i as f32 - c).abs() / (c + 1.0);
                tent(p) * tent(q)
            }
            KernelPreset::Corner => f32::from(p == 0 && q == 0),
        }
    }
}

/// Output of a single-channel transposed convolution of an `h × w` grid.
pub fn scatter_grid(input: &[f32], h: usize, w: usize, k: usize, stride: usize, preset: KernelPreset) -> Result<(usize, usize, Vec<f32>), String> {
    if input.len() != h * w {
        return Err(format!("grid has {} cells, expected {h}×{w}", input.len()));
    }
    let weights: Vec<f32> = (0..k * k).map(|i| preset.weight(i / k, i % k, k)).collect();
    let kern = ConvKernel::new(
        Tensor4::from_vec(Shape4::new(k, k, 1, 1).map_err(|e| e.to_string())?, weights).map_err(|e| e.to_string())?,
        Tensor4::zeros(Shape4::new(1, 1, 1, 1).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?,
        stride,
    )
    .map_err(|e| e.to_string())?;
    let x = Tensor4::from_vec(Shape4::new(1, h, w, 1).map_err(|e| e.to_string())?, input.to_vec()).map_err(|e| e.to_string())?;
    let y = deconv2d_forward(&x, &kern).map_err(|e| e.to_string())?;
    let s = y.shape();
    Ok((s.h, s.w, y.into_data()))
}

thread_local! {
    static CACHED: RefCell<Option<Model<f32>>> = const { RefCell::new(None) };
}

fn with_model<R>(c: usize, depth: usize, seed: u64, f: impl FnOnce(&Model<f32>) -> R) -> Result<R, String> {
    let cfg = ModelConfig::new(c, depth, Task::Classification { classes: 2 }, seed);
    CACHED.with(|cell| {
        let mut slot = cell.borrow_mut();
        if slot.as_ref().and_then(|m| m.config()) != Some(&cfg) {
            *slot = Some(Model::build(&cfg).map_err(|e| e.to_string())?);
        }
        Ok(f(slot.as_ref().expect("model just built")))
    })
}

/// The generated image (before its ReLU) for one feature vector, row-major 32×32.
pub fn image_for(features: &[f32], depth: usize, seed: u64) -> Result<Vec<f32>, String> {
    let c = features.len();
    if c == 0 {
        return Err("feature vector is empty".into());
    }
    with_model(c, depth, seed, |m| {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, c).map_err(|e| e.to_string())?, features.to_vec()).map_err(|e| e.to_string())?;
        m.extract_features(&x, m.image_layer_id()).map(Tensor4::into_data).map_err(|e| e.to_string())
    })?
}

/// `id kind b×h×w×c` lines, starting with the input.
pub fn trace_lines(c: usize, depth: usize) -> Result<Vec<String>, String> {
    with_model(c, depth, 0, |m| {
        let x = Tensor4::zeros(Shape4::new(1, 1, 1, c).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let trace = m.shape_trace(&x).map_err(|e| e.to_string())?;
        let kinds = std::iter::once("input").chain(m.layers().iter().map(|s| s.layer.kind()));
        Ok(trace
            .iter()
            .zip(kinds)
            .map(|((id, s), kind)| format!("{id:<6} {kind:<13} {}×{}×{}", s.h, s.w, s.c))
            .collect())
    })?
}

/// Output grid for the scatter explorer; the last two values are its height and width.
#[wasm_bindgen]
pub fn deconv_scatter(input: &[f32], h: usize, w: usize, k: usize, stride: usize, preset: &str) -> Result<Vec<f32>, JsError> {
    let preset = KernelPreset::parse(preset).ok_or_else(|| JsError::new(&format!("unknown kernel preset '{preset}'")))?;
    let (oh, ow, mut data) = scatter_grid(input, h, w, k, stride, preset).map_err(|e| JsError::new(&e))?;
    data.push(oh as f32);
    data.push(ow as f32);
    Ok(data)
}

#[wasm_bindgen]
pub fn feature_image(features: &[f32], depth: usize, seed: u32) -> Result<Vec<f32>, JsError> {
    image_for(features, depth, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn shape_trace(c: usize, depth: usize) -> Result<String, JsError> {
    trace_lines(c, depth).map(|l| l.join("\n")).map_err(|e| JsError::new(&e))
}

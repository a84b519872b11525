//! WebAssembly bindings for `www/index.html`: trace the ADPCM codec on a
//! signal, plot the Laplace mechanism, and iterate the step-size law.

use caae_core::codec::{self, CodecConfig};
use caae_core::dpnoise::{self, DpParams};
use ndarray::Array2;
use wasm_bindgen::prelude::*;

/// One channel pushed through the encoder, with what the decoder sees.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct CodecTrace {
    reconstruction: Vec<f64>,
    decoded: Vec<f64>,
    steps: Vec<f64>,
    codes: Vec<i8>,
    saturated: Vec<u8>,
    frame: Vec<u8>,
    payload_ratio: f64,
    total_ratio: f64,
    snr_db: f64,
}

#[wasm_bindgen]
impl CodecTrace {
    /// Encoder-side reconstruction, one value per sample.
    pub fn reconstruction(&self) -> Vec<f64> {
        self.reconstruction.clone()
    }

    /// The frame decoded on its own; equals `reconstruction`.
    pub fn decoded(&self) -> Vec<f64> {
        self.decoded.clone()
    }

    pub fn steps(&self) -> Vec<f64> {
        self.steps.clone()
    }

    pub fn codes(&self) -> Vec<i8> {
        self.codes.clone()
    }

    /// 1 where the code hit the quantizer limit.
    pub fn saturated(&self) -> Vec<u8> {
        self.saturated.clone()
    }

    /// Serialized frame bytes.
    pub fn frame(&self) -> Vec<u8> {
        self.frame.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn payload_ratio(&self) -> f64 {
        self.payload_ratio
    }

    #[wasm_bindgen(getter)]
    pub fn total_ratio(&self) -> f64 {
        self.total_ratio
    }

    #[wasm_bindgen(getter)]
    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }
}

pub fn trace(signal: &[f64], bits_per_code: u8, alpha: f64, beta: f64, s0: f64, adaptive: bool) -> caae_core::Result<CodecTrace> {
    let cfg = CodecConfig {
        bits_per_code,
        alpha,
        beta,
        s0,
        ..CodecConfig::default()
    };
    let block = Array2::from_shape_vec((1, signal.len()), signal.to_vec()).map_err(|e| caae_core::Error::Shape(e.to_string()))?;
    let t = if adaptive { codec::encode_block_traced(&block, &cfg)? } else { codec::encode_dpcm_traced(&block, &cfg)? };
    let decoded = codec::decode_frame(&t.frame)?;
    let stats = codec::CompressionStats::of(&t.frame, cfg.reference_bits);
    Ok(CodecTrace {
        reconstruction: t.reconstruction.iter().copied().collect(),
        decoded: decoded.iter().copied().collect(),
        steps: t.steps.iter().copied().collect(),
        codes: t.frame.codes.clone(),
        saturated: t.saturated.iter().map(|&s| u8::from(s)).collect(),
        frame: t.frame.to_bytes(),
        payload_ratio: stats.payload_ratio,
        total_ratio: stats.total_ratio,
        snr_db: codec::snr_db(&block, &decoded),
    })
}

fn js(e: caae_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Encode `signal` as one channel. `adaptive = false` holds the step at `s0`.
#[wasm_bindgen]
pub fn codec_trace(signal: Vec<f64>, bits_per_code: u8, alpha: f64, beta: f64, s0: f64, adaptive: bool) -> Result<CodecTrace, JsError> {
    trace(&signal, bits_per_code, alpha, beta, s0, adaptive).map_err(js)
}

/// A quiet sinusoid with a loud burst in the middle, so step adaptation is
/// visible.
#[wasm_bindgen]
pub fn burst_signal(len: usize, burst_gain: f64) -> Vec<f64> {
    (0..len)
        .map(|t| {
            let x = t as f64 / len as f64;
            let gain = if (0.4..0.6).contains(&x) { burst_gain } else { 1.0 };
            gain * (2.0 * std::f64::consts::PI * 6.0 * x).sin() + 0.2 * (2.0 * std::f64::consts::PI * 23.0 * x).sin()
        })
        .collect()
}

/// Step sizes produced by feeding `deltas` (absolute reconstruction changes)
/// through the update law, starting at `s0`.
#[wasm_bindgen]
pub fn step_response(deltas: Vec<f64>, s0: f64, alpha: f64, beta: f64) -> Vec<f64> {
    let cfg = CodecConfig {
        alpha,
        beta,
        s0,
        ..CodecConfig::default()
    };
    let mut s = s0;
    let mut out = Vec::with_capacity(deltas.len() + 1);
    out.push(s);
    for d in deltas {
        s = codec::step_update(s, d.abs(), &cfg);
        out.push(s);
    }
    out
}

/// Laplace density with scale `sensitivity / epsilon` at each `x`.
pub fn density(xs: &[f64], epsilon: f64, sensitivity: f64) -> caae_core::Result<Vec<f64>> {
    DpParams::new(epsilon, sensitivity, 0)?;
    xs.iter().map(|&x| Ok(dpnoise::laplace_density(x / sensitivity, epsilon)? / sensitivity)).collect()
}

#[wasm_bindgen]
pub fn laplace_density(xs: Vec<f64>, epsilon: f64, sensitivity: f64) -> Result<Vec<f64>, JsError> {
    density(&xs, epsilon, sensitivity).map_err(js)
}

/// Normalized histogram of `count` mechanism draws over `bins` equal bins
/// on `[lo, hi]`; draws outside the range are dropped from the counts but
/// not from the normalization.
pub fn histogram(epsilon: f64, sensitivity: f64, count: usize, seed: u32, lo: f64, hi: f64, bins: usize) -> caae_core::Result<Vec<f64>> {
    let draws = dpnoise::sample_laplace(&DpParams::new(epsilon, sensitivity, u64::from(seed))?, count)?;
    let width = (hi - lo) / bins as f64;
    let mut h = vec![0.0; bins];
    for x in draws {
        let b = ((x - lo) / width).floor();
        if b >= 0.0 && (b as usize) < bins {
            h[b as usize] += 1.0;
        }
    }
    let norm = count as f64 * width;
    Ok(h.into_iter().map(|c| c / norm).collect())
}

#[wasm_bindgen]
pub fn laplace_histogram(epsilon: f64, sensitivity: f64, count: usize, seed: u32, lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>, JsError> {
    histogram(epsilon, sensitivity, count, seed, lo, hi, bins).map_err(js)
}

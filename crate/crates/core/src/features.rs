//! Per-channel window features: mean, population SD, max, min and dominant
//! frequency, in that order for each channel. The ordering is part of the
//! model contract; [`header`] spells it out.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::dataio::SensorWindow;
use crate::error::{Error, Result};

pub const STATS: [&str; 5] = ["mean", "sd", "max", "min", "dominant_frequency"];
pub const PER_CHANNEL: usize = STATS.len();

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub user_id: u32,
    pub activity_id: u32,
}

/// CSV column names `channel{i}_{stat}`.
pub fn header(channels: usize) -> Vec<String> {
    (0..channels)
        .flat_map(|c| STATS.iter().map(move |s| format!("channel{c}_{s}")))
        .collect()
}

/// Reusable extractor for one window length; holds the FFT plan.
pub struct FeatureExtractor {
    len: usize,
    sample_rate_hz: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl FeatureExtractor {
    pub fn new(len: usize, sample_rate_hz: f64) -> Result<Self> {
        if len < 2 {
            return Err(Error::Shape(format!("feature window needs at least 2 samples, got {len}")));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Config(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        Ok(Self {
            len,
            sample_rate_hz,
            fft: FftPlanner::new().plan_fft_forward(len),
        })
    }

    pub fn extract(&self, win: &SensorWindow) -> Result<FeatureVector> {
        Ok(FeatureVector {
            values: self.extract_values(&win.values)?,
            user_id: win.user_id,
            activity_id: win.activity_id,
        })
    }

    pub fn extract_values(&self, values: &Array2<f64>) -> Result<Vec<f64>> {
        if values.ncols() != self.len {
            return Err(Error::Shape(format!(
                "window has {} samples, extractor expects {}",
                values.ncols(),
                self.len
            )));
        }
        let mut out = Vec::with_capacity(values.nrows() * PER_CHANNEL);
        let mut buf = vec![Complex::new(0.0, 0.0); self.len];
        for row in values.rows() {
            let (mean, sd, max, min) = moments(row);
            out.extend([mean, sd, max, min, self.dominant_frequency(row, &mut buf)]);
        }
        Ok(out)
    }

    /// Frequency (Hz) of the largest-amplitude non-DC bin; ties go to the
    /// lower bin.
    fn dominant_frequency(&self, row: ArrayView1<f64>, buf: &mut [Complex<f64>]) -> f64 {
        for (b, &x) in buf.iter_mut().zip(row) {
            *b = Complex::new(x, 0.0);
        }
        self.fft.process(buf);
        let half = self.len / 2;
        let amps: Vec<f64> = buf[1..=half].iter().map(|c| c.norm()).collect();
        let peak = amps.iter().copied().fold(0.0, f64::max);
        // FFT round-off on a flat spectrum must not decide the winner.
        let scale: f64 = row.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        let tol = 1e-12 * scale;
        let bin = amps.iter().position(|&a| a >= peak - tol).unwrap_or(0) + 1;
        bin as f64 * self.sample_rate_hz / self.len as f64
    }
}

fn moments(row: ArrayView1<f64>) -> (f64, f64, f64, f64) {
    let n = row.len() as f64;
    let mean = row.sum() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    // Clamp so min ≤ mean ≤ max survives summation rounding.
    (mean.clamp(min, max), var.sqrt(), max, min)
}

/// One-shot extraction; prefer [`FeatureExtractor`] in loops.
pub fn extract(win: &SensorWindow, sample_rate_hz: f64) -> Result<FeatureVector> {
    FeatureExtractor::new(win.len(), sample_rate_hz)?.extract(win)
}

/// Feature matrix `[windows × (C·5)]` for windows of equal shape.
pub fn extract_matrix(windows: &[SensorWindow], sample_rate_hz: f64) -> Result<Array2<f64>> {
    let Some(first) = windows.first() else {
        return Ok(Array2::zeros((0, 0)));
    };
    let fx = FeatureExtractor::new(first.len(), sample_rate_hz)?;
    let cols = first.channels() * PER_CHANNEL;
    let mut out = Array2::zeros((windows.len(), cols));
    for (mut row, w) in out.rows_mut().into_iter().zip(windows) {
        let v = fx.extract_values(&w.values)?;
        if v.len() != cols {
            return Err(Error::Shape("windows differ in channel count".into()));
        }
        row.assign(&ArrayView1::from(&v));
    }
    Ok(out)
}

/// CSV export with a `user_id,activity_id,channel{i}_{stat}...` header.
pub fn write_csv<W: std::io::Write>(out: W, features: &[FeatureVector], channels: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::io("features.csv", std::io::Error::other(e.to_string()));
    let mut head = vec!["user_id".to_string(), "activity_id".to_string()];
    head.extend(header(channels));
    w.write_record(&head).map_err(io)?;
    for f in features {
        let mut rec = vec![f.user_id.to_string(), f.activity_id.to_string()];
        rec.extend(f.values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("features.csv", e))
}

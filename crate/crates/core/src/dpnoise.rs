//! Laplace mechanism for ε-differential privacy.
//!
//! Noise is drawn by inverse-CDF from a seeded ChaCha stream, so a given
//! `(seed, stream)` pair always yields the same sequence.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::SensorWindow;
use crate::error::{Error, Result};
use crate::seed;

/// Default ε sweep.
pub const EPSILON_SWEEP: [f64; 8] = [0.1, 0.3, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub epsilon: f64,
    /// Per-coordinate L1 sensitivity.
    pub sensitivity: f64,
    pub seed: u64,
}

impl DpParams {
    pub fn new(epsilon: f64, sensitivity: f64, seed: u64) -> Result<Self> {
        let p = Self { epsilon, sensitivity, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(Error::Config(format!("sensitivity must be positive, got {}", self.sensitivity)));
        }
        Ok(())
    }

    /// Laplace scale `b = sensitivity / ε`.
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

/// `(ε/2)·exp(−ε|x|)`, the unit-sensitivity Laplace density.
pub fn laplace_density(x: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(0.5 * epsilon * (-epsilon * x.abs()).exp())
}

/// CDF of a zero-mean Laplace with scale `b`.
pub fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}

/// Stateful sampler; one per thread, seeded by `(base seed, stream id)`.
pub struct LaplaceSampler {
    rng: ChaCha8Rng,
    scale: f64,
}

impl LaplaceSampler {
    pub fn new(params: &DpParams) -> Result<Self> {
        Self::with_stream(params, 0)
    }

    pub fn with_stream(params: &DpParams, stream: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            rng: seed::rng(seed::derive(params.seed, stream)),
            scale: params.scale(),
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sample(&mut self) -> f64 {
        self.sample_scaled(self.scale)
    }

    /// Draw with an explicit scale from the same stream.
    pub fn sample_scaled(&mut self, scale: f64) -> f64 {
        // u uniform on the open interval (-1/2, 1/2).
        let u = loop {
            let u: f64 = self.rng.random::<f64>() - 0.5;
            if u > -0.5 {
                break u;
            }
        };
        -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
    }
}

pub fn sample_laplace(params: &DpParams, count: usize) -> Result<Vec<f64>> {
    let mut s = LaplaceSampler::new(params)?;
    Ok((0..count).map(|_| s.sample()).collect())
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Elementwise `values + Lap(sensitivity/ε)`.
pub fn perturb(values: &[f64], params: &DpParams) -> Result<Vec<f64>> {
    check_finite(values, "perturb input")?;
    let mut s = LaplaceSampler::new(params)?;
    Ok(values.iter().map(|v| v + s.sample()).collect())
}

/// Raw-sample noising of a whole window.
pub fn perturb_window(win: &SensorWindow, params: &DpParams) -> Result<SensorWindow> {
    check_finite(win.values.iter(), "perturb input")?;
    let mut s = LaplaceSampler::new(params)?;
    Ok(SensorWindow {
        values: win.values.mapv(|v| v + s.sample()),
        ..win.clone()
    })
}

/// Per-feature bounds estimated on a training matrix. Applying clamps every
/// column into its training range, then adds Laplace noise with sensitivity
/// equal to that range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSensitivity {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FeatureSensitivity {
    pub fn fit(train: ArrayView2<f64>) -> Result<Self> {
        if train.nrows() == 0 {
            return Err(Error::Data("cannot estimate sensitivity from zero rows".into()));
        }
        check_finite(train.iter(), "sensitivity estimation")?;
        let lower = train
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let upper = train
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(Self { lower, upper })
    }

    /// Column sensitivity; a constant column gets a tiny positive floor so
    /// the mechanism stays defined.
    pub fn range(&self, col: usize) -> f64 {
        (self.upper[col] - self.lower[col]).max(1e-12)
    }

    pub fn apply(&self, data: ArrayView2<f64>, epsilon: f64, seed: u64, stream: u64) -> Result<Array2<f64>> {
        if data.ncols() != self.lower.len() {
            return Err(Error::Shape(format!(
                "{} feature columns, sensitivity fitted on {}",
                data.ncols(),
                self.lower.len()
            )));
        }
        check_finite(data.iter(), "perturb input")?;
        let params = DpParams::new(epsilon, 1.0, seed)?;
        let mut s = LaplaceSampler::with_stream(&params, stream)?;
        let mut out = data.to_owned();
        for row in out.rows_mut() {
            for (c, v) in row.into_iter().enumerate() {
                let clamped = v.clamp(self.lower[c], self.upper[c]);
                *v = clamped + s.sample_scaled(self.range(c) / epsilon);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_values() {
        assert_eq!(laplace_density(0.0, 2.0).unwrap(), 1.0);
        assert!((laplace_density(0.0, 0.1).unwrap() - 0.05).abs() < 1e-15);
        for x in [0.3, 1.7, 12.0] {
            assert_eq!(laplace_density(x, 0.7).unwrap(), laplace_density(-x, 0.7).unwrap());
        }
        assert!(laplace_density(1.0, 0.0).is_err());
        assert!(laplace_density(1.0, -1.0).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        // Trapezoid on [-60, 60] for ε = 0.5; tails beyond are e^-30.
        let eps = 0.5;
        let n = 240_000;
        let h = 120.0 / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = -60.0 + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * laplace_density(x, eps).unwrap();
        }
        assert!((total * h - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampling_basics() {
        let p = DpParams::new(1.0, 1.0, 9).unwrap();
        assert!(sample_laplace(&p, 0).unwrap().is_empty());
        assert_eq!(sample_laplace(&p, 50).unwrap(), sample_laplace(&p, 50).unwrap());
        let xs = sample_laplace(&p, 100_000).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 2.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn params_validation() {
        assert!(DpParams::new(0.0, 1.0, 0).is_err());
        assert!(DpParams::new(1.0, -1.0, 0).is_err());
        assert!(DpParams::new(f64::NAN, 1.0, 0).is_err());
    }

    #[test]
    fn huge_epsilon_is_nearly_identity() {
        let x: Vec<f64> = (0..1000).map(|i| i as f64 * 0.1).collect();
        let p = DpParams::new(1e6, 1.0, 4).unwrap();
        let y = perturb(&x, &p).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-3));
    }

    #[test]
    fn perturb_rejects_non_finite() {
        let p = DpParams::new(1.0, 1.0, 0).unwrap();
        assert!(matches!(perturb(&[1.0, f64::NAN], &p), Err(Error::NonFinite(_))));
    }

    #[test]
    fn perturb_shapes_and_concatenation() {
        let p = DpParams::new(0.5, 2.0, 17).unwrap();
        let a = vec![1.0; 30];
        let b = vec![-2.0; 20];
        let whole = perturb(&[a.clone(), b.clone()].concat(), &p).unwrap();
        assert_eq!(whole.len(), 50);
        // The same noise stream split at 30 reproduces the concatenation.
        let noise = sample_laplace(&p, 50).unwrap();
        let parts: Vec<f64> = a.iter().chain(&b).zip(&noise).map(|(x, n)| x + n).collect();
        assert_eq!(whole, parts);
        let zero = perturb(&[0.0; 50], &p).unwrap();
        assert_eq!(zero, noise);
    }

    #[test]
    fn scale_decreases_with_epsilon() {
        let scales: Vec<f64> = EPSILON_SWEEP
            .iter()
            .map(|&e| DpParams::new(e, 1.0, 0).unwrap().scale())
            .collect();
        assert!(scales.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn feature_sensitivity_clamps_and_noises() {
        let train = Array2::from_shape_vec((3, 2), vec![0.0, 10.0, 1.0, 20.0, 2.0, 30.0]).unwrap();
        let s = FeatureSensitivity::fit(train.view()).unwrap();
        assert_eq!((s.range(0), s.range(1)), (2.0, 20.0));
        let test = Array2::from_shape_vec((1, 2), vec![100.0, -100.0]).unwrap();
        let out = s.apply(test.view(), 1e9, 1, 0).unwrap();
        assert!((out[[0, 0]] - 2.0).abs() < 1e-6);
        assert!((out[[0, 1]] - 10.0).abs() < 1e-6);
        assert!(s.apply(Array2::zeros((1, 3)).view(), 1.0, 1, 0).is_err());
    }
}

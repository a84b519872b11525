//! Recordings, windows and splits.

mod archive;
mod csv_loader;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis as NdAxis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use archive::{read_archive, write_archive, Archive, ARCHIVE_FILE, MANIFEST_FILE};
pub(crate) use archive::hex;
pub use csv_loader::{load_dataset, ColumnChannel, DatasetDescriptor, Layout, LoadedDataset};
pub use synthetic::{synthesize, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Accelerometer,
    Gyroscope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelDesc {
    pub kind: SensorKind,
    pub axis: Axis,
    pub location: String,
}

impl ChannelDesc {
    pub fn new(kind: SensorKind, axis: Axis, location: &str) -> Self {
        Self {
            kind,
            axis,
            location: location.to_string(),
        }
    }

    /// Accelerometer xyz followed by gyroscope xyz at one location.
    pub fn six_axis(location: &str) -> Vec<ChannelDesc> {
        let mut out = Vec::with_capacity(6);
        for kind in [SensorKind::Accelerometer, SensorKind::Gyroscope] {
            for axis in [Axis::X, Axis::Y, Axis::Z] {
                out.push(ChannelDesc::new(kind, axis, location));
            }
        }
        out
    }
}

/// One continuous session of one user performing one activity.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub user_id: u32,
    pub activity_id: u32,
    pub channels: Vec<ChannelDesc>,
    /// `[channels × time]`, m/s² for accelerometers and rad/s for gyroscopes.
    pub samples: Array2<f64>,
    pub sample_rate_hz: f64,
}

impl Recording {
    pub fn new(
        user_id: u32,
        activity_id: u32,
        channels: Vec<ChannelDesc>,
        samples: Array2<f64>,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if channels.is_empty() || channels.len() % 3 != 0 {
            return Err(Error::Shape(format!(
                "channel count {} is not a positive multiple of 3",
                channels.len()
            )));
        }
        if samples.nrows() != channels.len() {
            return Err(Error::Shape(format!(
                "{} sample rows for {} channels",
                samples.nrows(),
                channels.len()
            )));
        }
        Ok(Self {
            user_id,
            activity_id,
            channels,
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed-length multi-channel slice of a recording; the unit of processing.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorWindow {
    /// `[C × W]`.
    pub values: Array2<f64>,
    pub user_id: u32,
    pub activity_id: u32,
    /// Sample index of the first column in the parent recording.
    pub source_offset: usize,
}

impl SensorWindow {
    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major flattening, channel after channel.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }
}

/// Samples per window for a duration at a rate.
pub fn samples_for(seconds: f64, sample_rate_hz: f64) -> usize {
    (seconds * sample_rate_hz).round().max(0.0) as usize
}

/// Cut `rec` into windows of `window_seconds`, advancing by `stride_seconds`.
/// A trailing partial window is discarded.
pub fn window(rec: &Recording, window_seconds: f64, stride_seconds: f64) -> Result<Vec<SensorWindow>> {
    let width = samples_for(window_seconds, rec.sample_rate_hz);
    let stride = samples_for(stride_seconds, rec.sample_rate_hz);
    if width < 2 {
        return Err(Error::Config(format!(
            "window of {window_seconds} s at {} Hz has {width} samples, need at least 2",
            rec.sample_rate_hz
        )));
    }
    if stride == 0 {
        return Err(Error::Config(format!(
            "stride of {stride_seconds} s rounds to zero samples"
        )));
    }
    let mut out = Vec::new();
    let mut offset = 0;
    while offset + width <= rec.len() {
        out.push(SensorWindow {
            values: rec.samples.slice(ndarray::s![.., offset..offset + width]).to_owned(),
            user_id: rec.user_id,
            activity_id: rec.activity_id,
            source_offset: offset,
        });
        offset += stride;
    }
    Ok(out)
}

/// Window every recording and concatenate, preserving recording order.
pub fn window_all(recs: &[Recording], window_seconds: f64, stride_seconds: f64) -> Result<Vec<SensorWindow>> {
    let mut out = Vec::new();
    for rec in recs {
        out.extend(window(rec, window_seconds, stride_seconds)?);
    }
    Ok(out)
}

/// Replace each triaxial channel group by its Euclidean norm.
pub fn magnitude(win: &SensorWindow) -> Result<SensorWindow> {
    let channels = win.channels();
    if channels == 0 || channels % 3 != 0 {
        return Err(Error::Shape(format!(
            "magnitude needs a multiple of 3 channels, got {channels}"
        )));
    }
    let mut values = Array2::zeros((channels / 3, win.len()));
    for (g, mut row) in values.axis_iter_mut(NdAxis(0)).enumerate() {
        for (t, out) in row.iter_mut().enumerate() {
            let x = win.values[[3 * g, t]];
            let y = win.values[[3 * g + 1, t]];
            let z = win.values[[3 * g + 2, t]];
            *out = (x * x + y * y + z * z).sqrt();
        }
    }
    Ok(SensorWindow {
        values,
        user_id: win.user_id,
        activity_id: win.activity_id,
        source_offset: win.source_offset,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    /// Whole users are held out as the test set (activity recognition).
    ActivityHeldOutUsers { held_out_user_count: usize },
    /// Every user appears on both sides at `train_fraction` (user recognition).
    UserRatio { train_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    #[serde(flatten)]
    pub mode: SplitMode,
    /// Share of the training side moved to validation, per user.
    #[serde(default)]
    pub validation_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Index lists into the window list the split was made from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn make_split(windows: &[SensorWindow], plan: &SplitPlan) -> Result<Split> {
    let users: Vec<u32> = windows.iter().map(|w| w.user_id).collect();
    split_by_user(&users, plan)
}

/// [`make_split`] over bare user labels.
pub fn split_by_user(users: &[u32], plan: &SplitPlan) -> Result<Split> {
    if !(0.0..1.0).contains(&plan.validation_fraction) {
        return Err(Error::Config(format!(
            "validation fraction {} outside [0, 1)",
            plan.validation_fraction
        )));
    }
    let mut by_user: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &u) in users.iter().enumerate() {
        by_user.entry(u).or_default().push(i);
    }
    let mut rng = seed::rng(plan.seed);
    let mut split = Split::default();
    let mut train_by_user: Vec<Vec<usize>> = Vec::new();

    match plan.mode {
        SplitMode::ActivityHeldOutUsers { held_out_user_count } => {
            if by_user.len() < held_out_user_count + 1 {
                return Err(Error::Data(format!(
                    "{} distinct users, need at least {} to hold out {held_out_user_count}",
                    by_user.len(),
                    held_out_user_count + 1
                )));
            }
            let mut ids: Vec<u32> = by_user.keys().copied().collect();
            ids.shuffle(&mut rng);
            let held: BTreeSet<u32> = ids[..held_out_user_count].iter().copied().collect();
            for (u, idx) in &by_user {
                if held.contains(u) {
                    split.test.extend(idx);
                } else {
                    train_by_user.push(idx.clone());
                }
            }
        }
        SplitMode::UserRatio { train_fraction } => {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(Error::Config(format!(
                    "train fraction {train_fraction} outside (0, 1)"
                )));
            }
            for (u, idx) in &by_user {
                if idx.len() < 2 {
                    return Err(Error::Data(format!(
                        "user {u} has {} window(s), need at least 2 for a ratio split",
                        idx.len()
                    )));
                }
                let mut idx = idx.clone();
                idx.shuffle(&mut rng);
                let n_train = ((idx.len() as f64 * train_fraction).round() as usize).clamp(1, idx.len() - 1);
                split.test.extend(&idx[n_train..]);
                idx.truncate(n_train);
                train_by_user.push(idx);
            }
        }
    }

    for mut idx in train_by_user {
        if plan.validation_fraction > 0.0 {
            idx.shuffle(&mut rng);
            let n_val = ((idx.len() as f64 * plan.validation_fraction).floor() as usize).min(idx.len() - 1);
            split.validation.extend(&idx[..n_val]);
            split.train.extend(&idx[n_val..]);
        } else {
            split.train.extend(idx);
        }
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn rec(len: usize, rate: f64) -> Recording {
        let samples = Array2::from_shape_fn((6, len), |(c, t)| (c * 1000 + t) as f64);
        Recording::new(1, 2, ChannelDesc::six_axis("pocket"), samples, rate).unwrap()
    }

    #[test]
    fn window_lengths_for_both_dataset_rates() {
        assert_eq!(samples_for(2.56, 50.0), 128);
        assert_eq!(samples_for(1.28, 100.0), 128);
        let w = window(&rec(1000, 50.0), 2.56, 2.56).unwrap();
        assert!(w.iter().all(|w| w.len() == 128 && w.channels() == 6));
        let w = window(&rec(1000, 100.0), 1.28, 1.28).unwrap();
        assert!(w.iter().all(|w| w.len() == 128));
    }

    #[test]
    fn trailing_partial_window_is_dropped() {
        let r = rec(300, 50.0);
        let w = window(&r, 2.56, 2.56).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].source_offset, 0);
        assert_eq!(w[1].source_offset, 128);
        assert_eq!(w[1].values[[2, 0]], 2128.0);
        assert_eq!((w[1].user_id, w[1].activity_id), (1, 2));
    }

    #[test]
    fn window_longer_than_recording_is_empty() {
        assert!(window(&rec(100, 50.0), 2.56, 2.56).unwrap().is_empty());
    }

    #[test]
    fn degenerate_window_is_rejected() {
        assert!(window(&rec(100, 50.0), 0.01, 0.01).is_err());
    }

    #[test]
    fn recording_rejects_bad_channel_count() {
        let err = Recording::new(0, 0, ChannelDesc::six_axis("x")[..4].to_vec(), Array2::zeros((4, 3)), 50.0);
        assert!(err.is_err());
        assert!(Recording::new(0, 0, ChannelDesc::six_axis("x"), Array2::zeros((6, 3)), 0.0).is_err());
    }

    fn constant_window(channels: usize, len: usize, triple: [f64; 3]) -> SensorWindow {
        SensorWindow {
            values: Array2::from_shape_fn((channels, len), |(c, _)| triple[c % 3]),
            user_id: 0,
            activity_id: 0,
            source_offset: 0,
        }
    }

    #[test]
    fn magnitude_of_pythagorean_triple() {
        let m = magnitude(&constant_window(3, 10, [3.0, 4.0, 0.0])).unwrap();
        assert_eq!(m.channels(), 1);
        assert!(m.values.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn magnitude_of_zero_and_six_channels() {
        let m = magnitude(&constant_window(6, 8, [0.0; 3])).unwrap();
        assert_eq!(m.values.dim(), (2, 8));
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert!(magnitude(&constant_window(4, 8, [1.0; 3])).is_err());
    }

    fn users(n_users: u32, per_user: usize) -> Vec<u32> {
        (0..n_users).flat_map(|u| std::iter::repeat_n(u, per_user)).collect()
    }

    #[test]
    fn user_ratio_split_is_four_to_one() {
        let labels = users(5, 100);
        let plan = SplitPlan {
            mode: SplitMode::UserRatio { train_fraction: 0.8 },
            validation_fraction: 0.0,
            seed: 3,
        };
        let s = split_by_user(&labels, &plan).unwrap();
        for u in 0..5 {
            assert_eq!(s.train.iter().filter(|&&i| labels[i] == u).count(), 80);
            assert_eq!(s.test.iter().filter(|&&i| labels[i] == u).count(), 20);
        }
    }

    #[test]
    fn held_out_users_are_disjoint_from_training() {
        let labels = users(10, 7);
        let plan = SplitPlan {
            mode: SplitMode::ActivityHeldOutUsers { held_out_user_count: 2 },
            validation_fraction: 0.2,
            seed: 11,
        };
        let s = split_by_user(&labels, &plan).unwrap();
        let test_users: BTreeSet<u32> = s.test.iter().map(|&i| labels[i]).collect();
        let train_users: BTreeSet<u32> = s.train.iter().chain(&s.validation).map(|&i| labels[i]).collect();
        assert_eq!(test_users.len(), 2);
        assert!(test_users.is_disjoint(&train_users));
        assert_eq!(s.train.len() + s.validation.len() + s.test.len(), labels.len());
        assert_eq!(s, split_by_user(&labels, &plan).unwrap());
    }

    #[test]
    fn split_errors() {
        let plan = SplitPlan {
            mode: SplitMode::ActivityHeldOutUsers { held_out_user_count: 2 },
            validation_fraction: 0.0,
            seed: 0,
        };
        assert!(matches!(split_by_user(&users(2, 5), &plan), Err(Error::Data(_))));
        let plan = SplitPlan {
            mode: SplitMode::UserRatio { train_fraction: 0.8 },
            validation_fraction: 0.0,
            seed: 0,
        };
        let mut labels = users(3, 5);
        labels.push(9);
        assert!(matches!(split_by_user(&labels, &plan), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn windowing_conserves_samples(len in 0usize..2000, width_s in 0.1f64..3.0) {
            let r = rec(len, 50.0);
            let w = window(&r, width_s, width_s).unwrap();
            let width = samples_for(width_s, 50.0);
            let covered: usize = w.iter().map(|w| w.len()).sum();
            prop_assert_eq!(covered + len % width, len);
        }

        #[test]
        fn magnitude_ignores_axis_signs(vals in proptest::collection::vec(-50.0f64..50.0, 6 * 16), flips in proptest::collection::vec(any::<bool>(), 6)) {
            let values = Array2::from_shape_vec((6, 16), vals).unwrap();
            let mut flipped = values.clone();
            for (c, &f) in flips.iter().enumerate() {
                if f {
                    flipped.row_mut(c).mapv_inplace(|v| -v);
                }
            }
            let w = |values| SensorWindow { values, user_id: 0, activity_id: 0, source_offset: 0 };
            let a = magnitude(&w(values)).unwrap();
            let b = magnitude(&w(flipped)).unwrap();
            prop_assert!(a.values.iter().all(|&v| v >= 0.0));
            prop_assert_eq!(a.values, b.values);
        }

        #[test]
        fn user_ratio_covers_every_user_on_both_sides(n_users in 2u32..8, per_user in 2usize..30, seed in any::<u64>()) {
            let labels = users(n_users, per_user);
            let plan = SplitPlan { mode: SplitMode::UserRatio { train_fraction: 0.8 }, validation_fraction: 0.0, seed };
            let s = split_by_user(&labels, &plan).unwrap();
            let tr: BTreeSet<u32> = s.train.iter().map(|&i| labels[i]).collect();
            let te: BTreeSet<u32> = s.test.iter().map(|&i| labels[i]).collect();
            prop_assert_eq!(tr.len(), n_users as usize);
            prop_assert_eq!(te.len(), n_users as usize);
        }
    }
}

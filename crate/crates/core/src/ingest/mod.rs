//! Sensor sequences: CSV ingestion, sliding and paired windows, splitting,
//! normalisation and a synthetic activity generator.

mod csv_io;
mod normalize;
mod split;
mod synth;
mod window;

pub use csv_io::{load_csv, write_csv, CsvSchema};
pub use normalize::{zscore_normalize, ChannelStats};
pub use split::{class_proportions, stratified_split, DatasetSplit};
pub use synth::{synth_generate, SynthConfig};
pub use window::{
    majority_label, paired_windows, sliding_windows, Window, WindowConfig, WindowPair, Windowed,
};

use crate::error::{Error, Result};

/// A multichannel time series with one class label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSequence {
    channels: usize,
    /// Row-major `[N, D]`.
    samples: Vec<f32>,
    labels: Vec<usize>,
    num_classes: usize,
    pub sample_rate_hz: f64,
    pub subject_id: Option<String>,
}

impl SensorSequence {
    pub fn new(
        channels: usize,
        samples: Vec<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("a sequence needs at least one channel".into()));
        }
        if samples.len() != labels.len() * channels {
            return Err(Error::Shape(format!(
                "{} samples for {} labels × {channels} channels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Config(format!("sample rate {sample_rate_hz} must be positive")));
        }
        Ok(Self {
            channels,
            samples,
            labels,
            num_classes,
            sample_rate_hz,
            subject_id: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.samples[i * self.channels..(i + 1) * self.channels]
    }

    /// Rows `[start, end)` as a flat `[end-start, D]` slice.
    pub fn rows(&self, start: usize, end: usize) -> &[f32] {
        &self.samples[start * self.channels..end * self.channels]
    }
}

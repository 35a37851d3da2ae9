use crate::error::{Error, Result};

use super::SensorSequence;

/// A result list that may be empty because the sequence was shorter than
/// the requested window.
#[derive(Debug, Clone, PartialEq)]
pub struct Windowed<W> {
    pub items: Vec<W>,
    pub too_short: bool,
}

/// One window of `T` rows, flat `[T, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub data: Vec<f32>,
    pub label: usize,
}

/// Most frequent class id; ties go to the smallest id. Returns `None` for an
/// empty slice.
pub fn majority_label(labels: &[usize]) -> Option<usize> {
    let max = *labels.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &l in labels {
        counts[l] += 1;
    }
    // max_by_key returns the last maximum; iterate in reverse so the smallest id wins.
    counts
        .iter()
        .enumerate()
        .rev()
        .max_by_key(|&(_, c)| *c)
        .map(|(i, _)| i)
}

fn window_starts(n: usize, t: usize, stride: usize) -> impl Iterator<Item = usize> {
    let count = if n >= t { (n - t) / stride + 1 } else { 0 };
    (0..count).map(move |i| i * stride)
}

fn check_positive(t: usize, stride: usize) -> Result<()> {
    if t == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "window length {t} and stride {stride} must be positive"
        )));
    }
    Ok(())
}

pub fn sliding_windows(seq: &SensorSequence, t: usize, stride: usize) -> Result<Windowed<Window>> {
    check_positive(t, stride)?;
    let items = window_starts(seq.len(), t, stride)
        .map(|start| Window {
            start,
            data: seq.rows(start, start + t).to_vec(),
            label: majority_label(&seq.labels()[start..start + t]).unwrap(),
        })
        .collect();
    Ok(Windowed {
        items,
        too_short: seq.len() < t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WindowConfig {
    pub t_narrow: usize,
    pub t_wide: usize,
    pub stride: usize,
}

impl WindowConfig {
    /// Default stride is half the narrow window.
    pub fn new(t_narrow: usize, t_wide: usize) -> Result<Self> {
        let cfg = Self {
            t_narrow,
            t_wide,
            stride: (t_narrow / 2).max(1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        self.stride = stride;
        self.validate()?;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.t_wide as f64 / self.t_narrow as f64
    }

    pub fn validate(&self) -> Result<()> {
        check_positive(self.t_narrow, self.stride)?;
        if self.t_narrow >= self.t_wide {
            return Err(Error::Config(format!(
                "narrow window {} must be shorter than wide window {}",
                self.t_narrow, self.t_wide
            )));
        }
        Ok(())
    }
}

/// Narrow and wide views ending at the same sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub channels: usize,
    pub t_narrow: usize,
    pub t_wide: usize,
    /// Flat `[t_wide, D]`.
    pub wide: Vec<f32>,
    pub label: usize,
    /// One past the last sample of both windows.
    pub end_index: usize,
}

impl WindowPair {
    /// The trailing `t_narrow` rows of the wide window, flat `[t_narrow, D]`.
    pub fn narrow(&self) -> &[f32] {
        self.trailing(self.t_narrow)
    }

    /// The trailing `t` rows of the wide window.
    pub fn trailing(&self, t: usize) -> &[f32] {
        assert!(t <= self.t_wide, "trailing {t} rows of a {}-row window", self.t_wide);
        &self.wide[(self.t_wide - t) * self.channels..]
    }

    pub fn wide_mut(&mut self) -> &mut [f32] {
        &mut self.wide
    }
}

pub fn paired_windows(seq: &SensorSequence, cfg: &WindowConfig) -> Result<Windowed<WindowPair>> {
    cfg.validate()?;
    let items = window_starts(seq.len(), cfg.t_wide, cfg.stride)
        .map(|start| {
            let end = start + cfg.t_wide;
            WindowPair {
                channels: seq.channels(),
                t_narrow: cfg.t_narrow,
                t_wide: cfg.t_wide,
                wide: seq.rows(start, end).to_vec(),
                label: majority_label(&seq.labels()[start..end]).unwrap(),
                end_index: end,
            }
        })
        .collect();
    Ok(Windowed {
        items,
        too_short: seq.len() < cfg.t_wide,
    })
}

use super::{DatasetSplit, WindowPair};

const STD_FLOOR: f64 = 1e-8;

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Moments over every row of the given windows' wide views.
    pub fn fit(pairs: &[WindowPair]) -> Option<Self> {
        let d = pairs.first()?.channels;
        let mut sum = vec![0.0f64; d];
        let mut count = 0usize;
        for p in pairs {
            for row in p.wide.chunks_exact(d) {
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v as f64;
                }
            }
            count += p.t_wide;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0f64; d];
        for p in pairs {
            for row in p.wide.chunks_exact(d) {
                for c in 0..d {
                    let dv = row[c] as f64 - mean[c];
                    sq[c] += dv * dv;
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| (s / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Some(Self { mean, std })
    }

    /// Identity statistics, used when normalisation is switched off.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, rows: &mut [f32]) {
        let d = self.mean.len();
        for row in rows.chunks_exact_mut(d) {
            for c in 0..d {
                row[c] = ((row[c] as f64 - self.mean[c]) / self.std[c]) as f32;
            }
        }
    }
}

/// Standardises both sides of the split with statistics from the train
/// side. With `enabled = false` the data passes through untouched and
/// identity statistics are returned.
pub fn zscore_normalize(mut split: DatasetSplit, enabled: bool) -> (DatasetSplit, ChannelStats) {
    let channels = split
        .train
        .first()
        .or(split.test.first())
        .map_or(0, |p| p.channels);
    let stats = match ChannelStats::fit(&split.train) {
        Some(s) if enabled => s,
        _ => return (split, ChannelStats::identity(channels)),
    };
    for p in split.train.iter_mut().chain(split.test.iter_mut()) {
        stats.apply(p.wide_mut());
    }
    (split, stats)
}

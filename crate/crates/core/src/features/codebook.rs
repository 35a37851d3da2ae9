use crate::error::{Error, Result};
use crate::parallel;

use super::kmeans::{kmeans_fit, nearest};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CodebookConfig {
    /// Subsequence length.
    pub w: usize,
    /// Subsequence stride.
    pub h: usize,
    /// Codewords per channel.
    pub n: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            w: 24,
            h: 12,
            n: 128,
            max_iter: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// One codebook per channel, each `[n, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub w: usize,
    pub h: usize,
    pub n: usize,
    pub codewords: Vec<Vec<f64>>,
    /// Width of the Gaussian soft-assignment kernel.
    pub sigma: f64,
}

/// Per-channel subsequences of a flat `[T, D]` window.
fn subsequences(window: &[f32], t: usize, d: usize, c: usize, w: usize, h: usize) -> Vec<Vec<f64>> {
    (0..=(t - w) / h)
        .map(|s| (s * h..s * h + w).map(|i| window[i * d + c] as f64).collect())
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

impl Codebook {
    pub fn new(w: usize, h: usize, codewords: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        let n = codewords.first().map_or(0, |c| c.len() / w.max(1));
        if w == 0 || h == 0 || n < 2 || codewords.iter().any(|c| c.len() != n * w) {
            return Err(Error::Config(format!(
                "codebook needs w, h ≥ 1 and n ≥ 2 equal-sized codewords per channel (w={w}, h={h}, n={n})"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("codebook sigma {sigma} must be positive")));
        }
        Ok(Self {
            w,
            h,
            n,
            codewords,
            sigma,
        })
    }

    /// Clusters every channel's subsequences from the given `[T, D]` windows.
    /// `sigma` is the median distance between codewords of the same channel.
    pub fn fit(windows: &[&[f32]], t: usize, d: usize, cfg: &CodebookConfig) -> Result<Self> {
        if cfg.w == 0 || cfg.h == 0 || t < cfg.w {
            return Err(Error::Config(format!(
                "subsequence length {} must lie in 1..={t} with a positive stride",
                cfg.w
            )));
        }
        let per_channel: Vec<Result<Vec<f64>>> = parallel::map_range(d, |c| {
            let points: Vec<f64> = windows
                .iter()
                .flat_map(|win| subsequences(win, t, d, c, cfg.w, cfg.h))
                .flatten()
                .collect();
            let seed = cfg.seed.wrapping_add(c as u64);
            Ok(kmeans_fit(&points, cfg.w, cfg.n, seed, cfg.max_iter, cfg.tol)?.centers)
        });
        let codewords = per_channel.into_iter().collect::<Result<Vec<_>>>()?;
        let mut dists = Vec::new();
        for cw in &codewords {
            let rows: Vec<&[f64]> = cw.chunks_exact(cfg.w).collect();
            for i in 0..rows.len() {
                for j in i + 1..rows.len() {
                    dists.push(
                        rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
                    );
                }
            }
        }
        let sigma = median(dists).max(1e-12);
        Self::new(cfg.w, cfg.h, codewords, sigma)
    }

    pub fn channels(&self) -> usize {
        self.codewords.len()
    }

    /// Length of an assignment feature vector, `D × n`.
    pub fn feature_len(&self) -> usize {
        self.channels() * self.n
    }

    fn check(&self, window: &[f32], t: usize) -> Result<()> {
        let d = self.channels();
        if window.len() != t * d {
            return Err(Error::Shape(format!("window of {} values is not [{t}, {d}]", window.len())));
        }
        if t < self.w {
            return Err(Error::Shape(format!(
                "window of {t} samples is shorter than subsequence length {}",
                self.w
            )));
        }
        Ok(())
    }

    /// Per-channel counts of nearest codewords, concatenated over channels.
    pub fn assign_hard(&self, window: &[f32], t: usize) -> Result<Vec<f64>> {
        self.check(window, t)?;
        let d = self.channels();
        let mut hist = vec![0.0; d * self.n];
        for c in 0..d {
            for s in subsequences(window, t, d, c, self.w, self.h) {
                let (j, _) = nearest(&s, &self.codewords[c], self.w);
                hist[c * self.n + j] += 1.0;
            }
        }
        Ok(hist)
    }

    /// Gaussian-kernel weights over codewords, summed per channel and
    /// normalised so the whole vector sums to one. A subsequence whose
    /// weights all underflow is assigned hard instead.
    pub fn assign_soft(&self, window: &[f32], t: usize) -> Result<Vec<f64>> {
        self.check(window, t)?;
        let d = self.channels();
        let denom = 2.0 * self.sigma * self.sigma;
        let mut feat = vec![0.0; d * self.n];
        let mut weights = vec![0.0; self.n];
        for c in 0..d {
            let out = &mut feat[c * self.n..(c + 1) * self.n];
            for s in subsequences(window, t, d, c, self.w, self.h) {
                for (wt, cw) in weights.iter_mut().zip(self.codewords[c].chunks_exact(self.w)) {
                    let d2: f64 = s.iter().zip(cw).map(|(a, b)| (a - b) * (a - b)).sum();
                    *wt = (-d2 / denom).exp();
                }
                let total: f64 = weights.iter().sum();
                if total > 0.0 {
                    for (o, wt) in out.iter_mut().zip(&weights) {
                        *o += wt / total;
                    }
                } else {
                    out[nearest(&s, &self.codewords[c], self.w).0] += 1.0;
                }
            }
        }
        let total: f64 = feat.iter().sum();
        feat.iter_mut().for_each(|v| *v /= total);
        Ok(feat)
    }

    /// Hard or soft assignment for many windows, in parallel.
    pub fn assign_batch(&self, windows: &[&[f32]], t: usize, soft: bool) -> Result<Vec<Vec<f64>>> {
        parallel::map(windows, |w| {
            if soft {
                self.assign_soft(w, t)
            } else {
                self.assign_hard(w, t)
            }
        })
        .into_iter()
        .collect()
    }
}

use std::f64::consts::TAU;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::parallel;

/// mean, std, min, max, median, three peak magnitudes, three peak bins.
pub const HC_PER_CHANNEL: usize = 11;

/// Statistical and spectral features of a flat `[T, D]` window, laid out
/// channel by channel.
///
/// The spectrum is taken over the mean-removed, Hann-tapered channel. Peaks
/// are the three largest magnitudes among bins `1..=T/2`, ties going to the
/// lower bin; windows too short for three bins pad with zero magnitude at
/// bin 0.
pub fn hc_features(window: &[f32], t: usize, d: usize) -> Result<Vec<f64>> {
    hc_with(&mut FftPlanner::new(), window, t, d)
}

/// [`hc_features`] over many windows, in parallel.
pub fn hc_features_batch(windows: &[&[f32]], t: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    parallel::map(windows, |w| hc_with(&mut FftPlanner::new(), w, t, d))
        .into_iter()
        .collect()
}

fn hc_with(planner: &mut FftPlanner<f64>, window: &[f32], t: usize, d: usize) -> Result<Vec<f64>> {
    if t < 4 {
        return Err(Error::Config(format!("hand-crafted features need T ≥ 4, got {t}")));
    }
    if window.len() != t * d {
        return Err(Error::Shape(format!("window of {} values is not [{t}, {d}]", window.len())));
    }
    let fft = planner.plan_fft_forward(t);
    let hann: Vec<f64> = (0..t)
        .map(|i| 0.5 - 0.5 * (TAU * i as f64 / (t - 1) as f64).cos())
        .collect();
    let mut out = Vec::with_capacity(d * HC_PER_CHANNEL);
    let mut buf = vec![Complex::new(0.0, 0.0); t];
    for c in 0..d {
        let x: Vec<f64> = window.iter().skip(c).step_by(d).map(|&v| v as f64).collect();
        let mean = x.iter().sum::<f64>() / t as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if t % 2 == 1 {
            sorted[t / 2]
        } else {
            0.5 * (sorted[t / 2 - 1] + sorted[t / 2])
        };
        for (b, (v, w)) in buf.iter_mut().zip(x.iter().zip(&hann)) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        let mut peaks: Vec<(usize, f64)> = (1..=t / 2).map(|k| (k, buf[k].norm())).collect();
        // Stable sort keeps ascending bins among equal magnitudes.
        peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
        peaks.resize(3, (0, 0.0));
        out.extend([mean, var.sqrt(), sorted[0], sorted[t - 1], median]);
        out.extend(peaks[..3].iter().map(|p| p.1));
        out.extend(peaks[..3].iter().map(|p| p.0 as f64));
    }
    Ok(out)
}

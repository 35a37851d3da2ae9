use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{ParamId, ParamStore, Tape, Var};

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates sampled per check (all of them when there are fewer).
    pub coords: usize,
    pub seed: u64,
    /// Whether the function is evaluated on a training-mode tape.
    pub training: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            coords: 100,
            seed: 0,
            training: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_ad − g_fd| / max(|g_ad|, |g_fd|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±h probes crossed a ReLU kink or changed a max-pool
    /// winner; finite differences are not valid there.
    pub skipped: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

fn evaluate<F>(params: &ParamStore<f64>, f: &F, training: bool) -> Result<(f64, u64)>
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new(training);
    tape.track_kinks(true);
    let loss = f(params, &mut tape)?;
    let v = tape.value(loss);
    if v.numel() != 1 {
        return Err(Error::Oracle(format!("function returned shape {:?}", v.shape())));
    }
    Ok((v.data()[0], tape.kink_signature()))
}

/// Compares reverse-mode gradients of a scalar function of `params` against
/// central finite differences `(f(θ+h) − f(θ−h)) / 2h`.
pub fn grad_check<F>(params: &ParamStore<f64>, opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new(opts.training);
    tape.track_kinks(true);
    let loss = f(params, &mut tape)?;
    let base_sig = tape.kink_signature();
    let base_value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    let mut analytic: Vec<Option<Vec<f64>>> = vec![None; params.len()];
    for (id, g) in tape.param_grads() {
        analytic[id.index()] = Some(g);
    }
    drop(tape);

    let (again, again_sig) = evaluate(params, &f, opts.training)?;
    if again.to_bits() != base_value.to_bits() || again_sig != base_sig {
        return Err(Error::Oracle(format!(
            "function is not deterministic: {base_value} then {again}"
        )));
    }

    let coords: Vec<(ParamId, usize)> = params
        .trainable_ids()
        .flat_map(|id| (0..params.get(id).numel()).map(move |i| (id, i)))
        .collect();
    if coords.is_empty() {
        return Err(Error::Oracle("no trainable coordinates".into()));
    }
    let picked: Vec<usize> = if coords.len() <= opts.coords {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, coords.len(), opts.coords).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    for k in picked {
        let (id, i) = coords[k];
        let orig = params.get(id).data()[i];
        probe.get_mut(id).data_mut()[i] = orig + opts.h;
        let (plus, sig_p) = evaluate(&probe, &f, opts.training)?;
        probe.get_mut(id).data_mut()[i] = orig - opts.h;
        let (minus, sig_m) = evaluate(&probe, &f, opts.training)?;
        probe.get_mut(id).data_mut()[i] = orig;
        if sig_p != base_sig || sig_m != base_sig {
            report.skipped += 1;
            continue;
        }
        let fd = (plus - minus) / (2.0 * opts.h);
        let ad = analytic[id.index()].as_ref().map_or(0.0, |g| g[i]);
        let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some((params.entry(id).name.clone(), i));
            }
        }
    }
    if report.checked == 0 {
        return Err(Error::Oracle(format!(
            "all {} sampled coordinates sit next to a kink",
            report.skipped
        )));
    }
    Ok(report)
}

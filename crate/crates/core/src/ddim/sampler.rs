use rand::Rng;
use rand_distr::StandardNormal;

use super::denoiser::{Condition, Denoiser};
use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::parallel;
use crate::volume::{Geometry, Volume3D};

/// One x₀-parameterised DDIM update from t to t_prev.
///
/// The implied noise is `ε = (x_t − √ᾱ_t·x̂₀)/√(1−ᾱ_t)` and the result is
/// `√ᾱ_prev·x̂₀ + √(1−ᾱ_prev−σ²)·ε + σ·z`. No noise is drawn when σ = 0.
pub fn ddim_step<R: Rng + ?Sized>(
    x_t: &[f64],
    t: usize,
    t_prev: usize,
    x0_pred: &[f64],
    schedule: &DiffusionSchedule,
    eta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if t <= t_prev || t > schedule.t_max() {
        return Err(Error::Argument(format!("invalid step {t} -> {t_prev}")));
    }
    if x_t.len() != x0_pred.len() {
        return Err(Error::Argument("x_t and x0_pred differ in length".into()));
    }
    let at = schedule.alpha_bar(t);
    let ap = schedule.alpha_bar(t_prev);
    if at >= 1.0 {
        return Err(Error::Schedule(format!("alpha_bar({t}) = 1 at a noisy step")));
    }
    let sigma = schedule.sigma(t, t_prev, eta);
    let (sa_t, s1_t) = (at.sqrt(), (1.0 - at).sqrt());
    let sa_p = ap.sqrt();
    let dir = (1.0 - ap - sigma * sigma).max(0.0).sqrt();
    let noise: Option<Vec<f64>> =
        (sigma > 0.0).then(|| (0..x_t.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    Ok(parallel::map_range(x_t.len(), |i| {
        let x0 = x0_pred[i];
        let eps = (x_t[i] - sa_t * x0) / s1_t;
        let v = sa_p * x0 + dir * eps;
        match &noise {
            Some(z) => v + sigma * z[i],
            None => v,
        }
    }))
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Argument(format!("eta must lie in [0, 1], got {eta}")));
    }
    Ok(())
}

fn check_subsequence(seq: &[usize], schedule: &DiffusionSchedule) -> Result<()> {
    if seq.len() < 2 {
        return Err(Error::Argument("step subsequence needs at least two entries".into()));
    }
    if seq.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Argument("step subsequence must be strictly decreasing".into()));
    }
    if *seq.last().unwrap() != 0 || seq[0] > schedule.t_max() {
        return Err(Error::Argument("step subsequence must run from <= T down to 0".into()));
    }
    Ok(())
}

/// Runs the sampler from a given starting image x_{seq[0]}.
pub fn sample_from<R: Rng + ?Sized>(
    denoiser: &dyn Denoiser,
    cond: &Condition,
    schedule: &DiffusionSchedule,
    seq: &[usize],
    eta: f64,
    rng: &mut R,
    init: Volume3D,
) -> Result<Volume3D> {
    check_subsequence(seq, schedule)?;
    check_eta(eta)?;
    let mut x = init;
    for w in seq.windows(2) {
        let x0 = denoiser.predict_x0(&x, w[0], cond)?;
        x.geometry.ensure_matches(&x0.geometry, "denoiser output")?;
        let next = ddim_step(&x.data, w[0], w[1], &x0.data, schedule, eta, rng)?;
        x = x.with_data(next)?;
    }
    Ok(x)
}

/// Samples with x_T drawn from a standard normal on `geometry`.
pub fn sample<R: Rng + ?Sized>(
    denoiser: &dyn Denoiser,
    cond: &Condition,
    schedule: &DiffusionSchedule,
    seq: &[usize],
    eta: f64,
    rng: &mut R,
    geometry: &Geometry,
) -> Result<Volume3D> {
    check_subsequence(seq, schedule)?;
    let data = (0..geometry.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let init = Volume3D::new(geometry.clone(), data)?;
    sample_from(denoiser, cond, schedule, seq, eta, rng, init)
}

//! Central finite-difference verification of analytic gradients.

use super::model::Model;
use super::ppo::{policy_loss_and_grad, value_loss_and_grad, PolicySample, ValueSample};
use super::{PpoConfig, TrainerError};

pub const FD_STEP: f64 = 1e-5;

/// Floor of the relative-error denominator. Central differences at
/// `FD_STEP` carry roundoff near `1e-16 * |loss| / FD_STEP`, which would
/// dominate components much smaller than this.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Largest componentwise `|g_fd - g| / max(|g_fd|, |g|, RELATIVE_FLOOR)`.
pub fn max_relative_error(params: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let x = p[i];
        p[i] = x + FD_STEP;
        let up = loss(&p);
        p[i] = x - FD_STEP;
        let down = loss(&p);
        p[i] = x;
        let fd = (up - down) / (2.0 * FD_STEP);
        let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(RELATIVE_FLOOR);
        worst = worst.max(err);
    }
    worst
}

/// Worst relative error of the PPO policy and value gradients at the given
/// parameters, returned as `(policy, value)`.
pub fn check_gradients(
    policy: &Model,
    value: &Model,
    policy_samples: &[PolicySample<'_>],
    value_samples: &[ValueSample<'_>],
    config: &PpoConfig,
) -> Result<(f64, f64), TrainerError> {
    let mut g = vec![0.0; policy.num_params()];
    policy_loss_and_grad(policy, &policy.params, policy_samples, config.clip, config.entropy_coef, &mut g)?;
    let mut scratch = vec![0.0; policy.num_params()];
    let pe = max_relative_error(&policy.params, &g, |p| {
        policy_loss_and_grad(policy, p, policy_samples, config.clip, config.entropy_coef, &mut scratch)
            .map(|x| x.loss)
            .unwrap_or(f64::NAN)
    });
    let mut g = vec![0.0; value.num_params()];
    value_loss_and_grad(value, &value.params, value_samples, &mut g)?;
    let mut scratch = vec![0.0; value.num_params()];
    let ve = max_relative_error(&value.params, &g, |p| {
        value_loss_and_grad(value, p, value_samples, &mut scratch).unwrap_or(f64::NAN)
    });
    Ok((pe, ve))
}

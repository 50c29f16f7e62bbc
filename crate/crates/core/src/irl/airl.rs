//! AIRL discriminator with linear reward and shaping approximators.

use serde::{Deserialize, Serialize};

use super::IrlError;
use crate::gridworld::Observation;
use crate::trainer::Adam;

/// `r(s,a) = theta_a . x(s)`: one weight row per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub features: usize,
    pub actions: usize,
    pub theta: Vec<f64>,
}

impl RewardModel {
    pub fn zeros(features: usize, actions: usize) -> Self {
        Self {
            features,
            actions,
            theta: vec![0.0; features * actions],
        }
    }

    pub fn reward(&self, s: &Observation, a: usize) -> f64 {
        let row = &self.theta[a * self.features..(a + 1) * self.features];
        row.iter().zip(&s.features).map(|(w, x)| w * x).sum()
    }
}

/// `phi(s) = omega . x(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingModel {
    pub omega: Vec<f64>,
}

impl ShapingModel {
    pub fn zeros(features: usize) -> Self {
        Self {
            omega: vec![0.0; features],
        }
    }

    pub fn potential(&self, s: &Observation) -> f64 {
        self.omega.iter().zip(&s.features).map(|(w, x)| w * x).sum()
    }
}

/// `f = r(s,a) + gamma * phi(s') - phi(s)`.
pub fn potential_f(
    r: &RewardModel,
    phi: &ShapingModel,
    s: &Observation,
    a: usize,
    s_next: &Observation,
    gamma: f64,
) -> f64 {
    r.reward(s, a) + gamma * phi.potential(s_next) - phi.potential(s)
}

fn check_prob(pi: f64) -> Result<(), IrlError> {
    if pi > 0.0 && pi.is_finite() {
        Ok(())
    } else {
        Err(IrlError::ZeroPolicyProbability(pi))
    }
}

/// `D = exp(f) / (exp(f) + pi)`, evaluated as a logistic of `f - ln pi`.
pub fn discriminator_prob(f: f64, pi: f64) -> Result<f64, IrlError> {
    check_prob(pi)?;
    Ok(sigmoid(f - pi.ln()))
}

/// `log D - log(1 - D)`, which reduces to `f - ln pi`.
pub fn learned_reward(f: f64, pi: f64) -> Result<f64, IrlError> {
    check_prob(pi)?;
    Ok(f - pi.ln())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// One discriminator input. `logp` is the current policy's `ln pi(a|s)`.
#[derive(Debug, Clone, Copy)]
pub struct DiscSample<'a> {
    pub obs: &'a Observation,
    pub action: usize,
    pub next_obs: &'a Observation,
    pub logp: f64,
    pub expert: bool,
}

/// Reward and shaping models trained together as one discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub reward: RewardModel,
    pub shaping: ShapingModel,
    pub gamma: f64,
}

impl Discriminator {
    pub fn zeros(features: usize, actions: usize, gamma: f64) -> Self {
        Self {
            reward: RewardModel::zeros(features, actions),
            shaping: ShapingModel::zeros(features),
            gamma,
        }
    }

    pub fn f(&self, s: &Observation, a: usize, s_next: &Observation) -> f64 {
        potential_f(&self.reward, &self.shaping, s, a, s_next, self.gamma)
    }

    /// Parameters as one vector: theta then omega.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.reward.theta.clone();
        p.extend_from_slice(&self.shaping.omega);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let n = self.reward.theta.len();
        self.reward.theta.copy_from_slice(&p[..n]);
        self.shaping.omega.copy_from_slice(&p[n..]);
    }

    pub fn num_params(&self) -> usize {
        self.reward.theta.len() + self.shaping.omega.len()
    }

    /// Binary cross-entropy (expert label 1, policy 0) with each class
    /// weighted to half the total, and its gradient in
    /// [`Discriminator::params`] order.
    pub fn loss_and_grad(&self, samples: &[DiscSample<'_>], grad: &mut [f64]) -> Result<f64, IrlError> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let nf = self.reward.features;
        let n_theta = self.reward.theta.len();
        let experts = samples.iter().filter(|s| s.expert).count();
        let weight = |n: usize, other: usize| if other == 0 { 1.0 / n as f64 } else { 0.5 / n as f64 };
        let (we, wp) = (weight(experts, samples.len() - experts), weight(samples.len() - experts, experts));
        let mut loss = 0.0;
        for s in samples {
            let logit = self.f(s.obs, s.action, s.next_obs) - s.logp;
            let (l, y, scale) = if s.expert {
                (softplus(-logit), 1.0, we)
            } else {
                (softplus(logit), 0.0, wp)
            };
            loss += l * scale;
            let d = (sigmoid(logit) - y) * scale;
            let row = &mut grad[s.action * nf..(s.action + 1) * nf];
            for (g, x) in row.iter_mut().zip(&s.obs.features) {
                *g += d * x;
            }
            let omega = &mut grad[n_theta..];
            for ((g, x1), x0) in omega.iter_mut().zip(&s.next_obs.features).zip(&s.obs.features) {
                *g += d * (self.gamma * x1 - x0);
            }
        }
        if !loss.is_finite() {
            return Err(IrlError::NonFiniteLoss(loss));
        }
        Ok(loss)
    }

    /// One optimizer step on the pooled expert and policy samples.
    pub fn update(&mut self, samples: &[DiscSample<'_>], opt: &mut Adam, lr: f64) -> Result<f64, IrlError> {
        if !samples.iter().any(|s| s.expert) || samples.iter().all(|s| s.expert) {
            return Err(IrlError::EmptyBatch);
        }
        let mut grad = vec![0.0; self.num_params()];
        let loss = self.loss_and_grad(samples, &mut grad)?;
        let mut p = self.params();
        opt.step(&mut p, &grad, lr);
        self.set_params(&p);
        Ok(loss)
    }
}

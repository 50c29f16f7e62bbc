//! Self-checks run by the `check` subcommand: randomized fusion properties
//! against direct recomputation, boundary identities, finite-difference
//! gradient checks and the AIRL reward identity.

use std::time::Instant;

use rand::Rng as _;

use crate::fusion::{
    fuse, normalized_entropy, ActionDistribution, Fused, FusionMethod, Members, SUM_TOLERANCE,
};
use crate::gridworld::{Observation, ARENA_FEATURES};
use crate::irl::{DiscSample, Discriminator};
use crate::rng::{self, Rng};
use crate::trainer::{
    max_relative_error, policy_loss_and_grad, value_loss_and_grad, Architecture, Model, PolicySample, ValueSample,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &str, f: impl FnOnce() -> Result<String, String>) -> CheckResult {
    let t0 = Instant::now();
    let r = f();
    let seconds = t0.elapsed().as_secs_f64();
    let (passed, detail) = match r {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
        seconds,
    }
}

/// A distribution of one of several shapes: uniform, one-hot, sparse or
/// dense with a random temperature.
pub fn random_distribution(r: &mut Rng, n: usize) -> ActionDistribution {
    let w: Vec<f64> = match r.random_range(0..6) {
        0 => vec![1.0; n],
        1 => {
            let k = r.random_range(0..n);
            (0..n).map(|i| (i == k) as u8 as f64).collect()
        }
        2 => {
            let mut w: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 0.0 } else { r.random() }).collect();
            let k = r.random_range(0..n);
            w[k] += 0.1;
            w
        }
        _ => {
            let t: f64 = r.random_range(0.1..5.0);
            (0..n).map(|_| (r.random_range(-1.0..1.0f64) * t).exp()).collect()
        }
    };
    let z: f64 = w.iter().sum();
    ActionDistribution::new(w.iter().map(|x| x / z).collect()).expect("normalized weights")
}

fn entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    h / (p.len() as f64).ln()
}

fn valid(d: &[f64]) -> bool {
    d.iter().all(|&x| x >= 0.0 && x.is_finite()) && (d.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE
}

/// Checks all four methods on `ensembles` random ensembles with
/// 2..=19 actions and 1..=4 sub-policies.
pub fn fusion_suite(ensembles: usize, seed: u64) -> CheckResult {
    timed("fusion algebra suite", || {
        let mut r = rng::stream(seed, &[]);
        let mut et_near_ties = 0;
        for case in 0..ensembles {
            let n = r.random_range(2..=19);
            let k = r.random_range(1..=4);
            let main = random_distribution(&mut r, n);
            let subs: Vec<ActionDistribution> = (0..k).map(|_| random_distribution(&mut r, n)).collect();
            let mut active: Vec<bool> = (0..k).map(|_| r.random_bool(0.8)).collect();
            if !active.iter().any(|&a| a) {
                active[r.random_range(0..k)] = true;
            }
            let eps = r.random_range(-0.5..0.5);
            let members = Members::new(&main, &subs, &active).map_err(|e| e.to_string())?;
            let fail = |what: &str| Err(format!("case {case}: {what}"));

            let h0 = entropy(main.probs());
            let mut best: Option<(usize, f64)> = None;
            for (i, s) in subs.iter().enumerate().filter(|(i, _)| active[*i]) {
                let h = entropy(s.probs());
                if best.is_none_or(|(_, bh)| h < bh) {
                    best = Some((i, h));
                }
            }
            let (ks, hk) = best.expect("one sub is active");

            for m in FusionMethod::ALL {
                let out = fuse(m, eps, &members).map_err(|e| format!("case {case}: {e}"))?;
                if !valid(out.distribution.probs()) {
                    return fail(&format!("{m} output is not a distribution"));
                }
                let want: Option<Vec<f64>> = match m {
                    FusionMethod::Mixture => Some(
                        (0..n)
                            .map(|a| {
                                let s: f64 = subs.iter().zip(&active).filter(|x| *x.1).map(|x| x.0.prob(a)).sum();
                                (main.prob(a) + s) / (k_active(&active) + 1) as f64
                            })
                            .collect(),
                    ),
                    FusionMethod::Product => {
                        let prod: Vec<f64> = (0..n)
                            .map(|a| {
                                subs.iter()
                                    .zip(&active)
                                    .filter(|x| *x.1)
                                    .fold(main.prob(a), |acc, x| acc * x.0.prob(a))
                            })
                            .collect();
                        let z: f64 = prod.iter().sum();
                        if z == 0.0 {
                            if !out.fell_back || out.distribution != main {
                                return fail("zero product must fall back to the main policy");
                            }
                            None
                        } else {
                            Some(prod.iter().map(|x| x / z).collect())
                        }
                    }
                    FusionMethod::EntropyThreshold => {
                        if (hk - (h0 + eps)).abs() < 1e-12 {
                            et_near_ties += 1;
                            None
                        } else if hk < h0 + eps {
                            Some(subs[ks].probs().to_vec())
                        } else {
                            Some(main.probs().to_vec())
                        }
                    }
                    FusionMethod::EntropyWeighted => {
                        let (kk, _) = out.k_star.ok_or("EW reported no k*")?;
                        let sub = &subs[kk];
                        for a in 0..n {
                            let (lo, hi) = (main.prob(a).min(sub.prob(a)), main.prob(a).max(sub.prob(a)));
                            let x = out.distribution.prob(a);
                            if x < lo - 1e-15 || x > hi + 1e-15 {
                                return fail("EW leaves the convex hull of main and k*");
                            }
                        }
                        if (entropy(sub.probs()) - hk).abs() > 1e-12 {
                            return fail("k* is not the minimum-entropy active sub-policy");
                        }
                        None
                    }
                };
                if let Some(w) = want {
                    let tol = if m == FusionMethod::EntropyThreshold { 0.0 } else { 1e-12 };
                    if out.distribution.probs().iter().zip(&w).any(|(a, b)| (a - b).abs() > tol) {
                        return fail(&format!("{m} differs from direct recomputation"));
                    }
                }
            }
        }
        boundary_of_threshold()?;
        Ok(format!("{ensembles} ensembles, {et_near_ties} ET near-ties skipped"))
    })
}

fn k_active(active: &[bool]) -> usize {
    active.iter().filter(|&&a| a).count()
}

/// ET at exactly `H_k* = H_0 + eps` keeps the main policy; the smallest
/// step past it selects the sub-policy.
fn boundary_of_threshold() -> Result<(), String> {
    let hot = |n, i| ActionDistribution::one_hot(n, i).expect("valid one-hot");
    let uniform2 = ActionDistribution::uniform(2).expect("two actions");
    let cases = [
        (hot(5, 0), hot(5, 3), 0.0, f64::MIN_POSITIVE),
        (uniform2.clone(), hot(2, 1), -1.0, -1.0 + f64::EPSILON),
    ];
    for (main, sub, at, past) in cases {
        let subs = [sub.clone()];
        let members = Members::new(&main, &subs, &[true]).map_err(|e| e.to_string())?;
        let on = fuse(FusionMethod::EntropyThreshold, at, &members).map_err(|e| e.to_string())?;
        let over = fuse(FusionMethod::EntropyThreshold, past, &members).map_err(|e| e.to_string())?;
        if on.distribution != main || over.distribution != sub {
            return Err("ET boundary is not a strict inequality".into());
        }
    }
    Ok(())
}

/// Exact identities at degenerate inputs.
pub fn boundary_identities(seed: u64) -> CheckResult {
    timed("boundary identities", || {
        let mut r = rng::stream(seed, &[]);
        let close = |a: &Fused, b: &ActionDistribution| {
            a.distribution.probs().iter().zip(b.probs()).all(|(x, y)| (x - y).abs() <= 1e-12)
        };
        for case in 0..1000 {
            let n = r.random_range(2..=19);
            let main = random_distribution(&mut r, n);
            let other = random_distribution(&mut r, n);
            let uniform = ActionDistribution::uniform(n).map_err(|e| e.to_string())?;
            let hot = ActionDistribution::one_hot(n, r.random_range(0..n)).map_err(|e| e.to_string())?;
            let run = |m, sub: &ActionDistribution, main: &ActionDistribution| {
                let subs = [sub.clone()];
                fuse(m, 0.0, &Members::new(main, &subs, &[true]).expect("same size")).expect("fusable")
            };
            let fail = |what: &str| Err(format!("case {case}: {what}"));
            if !close(&run(FusionMethod::EntropyWeighted, &uniform, &main), &main) {
                return fail("EW with a uniform sub is not the main policy");
            }
            if !close(&run(FusionMethod::EntropyWeighted, &hot, &main), &hot) {
                return fail("EW with a one-hot sub is not the sub-policy");
            }
            if !close(&run(FusionMethod::Mixture, &main, &main), &main) {
                return fail("MP of identical policies is not the identity");
            }
            if !close(&run(FusionMethod::Product, &uniform, &other), &other) {
                return fail("PP with a uniform factor is not the other factor");
            }
            let hu = normalized_entropy(&uniform).value();
            let hh = normalized_entropy(&hot).value();
            if (hu - 1.0).abs() > 1e-12 || hh.abs() > 1e-12 {
                return fail("entropy of uniform/one-hot is not 1/0");
            }
        }
        Ok("1000 random cases per identity".into())
    })
}

fn random_obs(r: &mut Rng, dim: usize) -> Observation {
    Observation {
        index: 0,
        features: (0..dim).map(|_| r.random_range(-1.0..1.0)).collect(),
    }
}

fn randomize(model: &mut Model, r: &mut Rng, scale: f64) {
    model.params.iter_mut().for_each(|p| *p = r.random_range(-scale..scale));
}

/// Worst relative finite-difference error of the PPO policy loss, the value
/// loss and the discriminator loss over `points` random parameter vectors.
pub fn gradient_suite(points: usize, seed: u64) -> Vec<CheckResult> {
    let arch = Architecture::mlp(ARENA_FEATURES, &[16]);
    let actions = 10;
    let batch = 24;
    let mut out = Vec::new();

    out.push(timed("PPO policy gradient", || {
        let mut r = rng::stream(seed, &[1]);
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let mut m = Model::zeros(arch.clone(), actions);
            randomize(&mut m, &mut r, 0.5);
            let obs: Vec<Observation> = (0..batch).map(|_| random_obs(&mut r, ARENA_FEATURES)).collect();
            let samples: Vec<PolicySample<'_>> = obs
                .iter()
                .map(|o| {
                    let a = r.random_range(0..actions);
                    let logp = crate::trainer::log_softmax(&m.forward(o).expect("fits"))[a];
                    PolicySample {
                        obs: o,
                        action: a,
                        // Spread the ratio across both sides of the clip range.
                        old_logp: logp + r.random_range(-0.5..0.5),
                        advantage: r.random_range(-2.0..2.0),
                    }
                })
                .collect();
            let mut g = vec![0.0; m.num_params()];
            policy_loss_and_grad(&m, &m.params, &samples, 0.2, 0.01, &mut g).map_err(|e| e.to_string())?;
            let mut scratch = vec![0.0; m.num_params()];
            let err = max_relative_error(&m.params, &g, |p| {
                policy_loss_and_grad(&m, p, &samples, 0.2, 0.01, &mut scratch).map_or(f64::NAN, |x| x.loss)
            });
            worst = worst.max(err);
        }
        bound(worst, points)
    }));

    out.push(timed("PPO value gradient", || {
        let mut r = rng::stream(seed, &[2]);
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let mut m = Model::zeros(arch.clone(), 1);
            randomize(&mut m, &mut r, 0.5);
            let obs: Vec<Observation> = (0..batch).map(|_| random_obs(&mut r, ARENA_FEATURES)).collect();
            let samples: Vec<ValueSample<'_>> = obs
                .iter()
                .map(|o| ValueSample {
                    obs: o,
                    target: r.random_range(-3.0..3.0),
                })
                .collect();
            let mut g = vec![0.0; m.num_params()];
            value_loss_and_grad(&m, &m.params, &samples, &mut g).map_err(|e| e.to_string())?;
            let mut scratch = vec![0.0; m.num_params()];
            let err = max_relative_error(&m.params, &g, |p| {
                value_loss_and_grad(&m, p, &samples, &mut scratch).unwrap_or(f64::NAN)
            });
            worst = worst.max(err);
        }
        bound(worst, points)
    }));

    out.push(timed("discriminator gradient", || {
        let mut r = rng::stream(seed, &[3]);
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let mut d = Discriminator::zeros(ARENA_FEATURES, actions, r.random_range(0.5..1.0));
            let p: Vec<f64> = (0..d.num_params()).map(|_| r.random_range(-0.5..0.5)).collect();
            d.set_params(&p);
            let obs: Vec<(Observation, Observation)> = (0..batch)
                .map(|_| (random_obs(&mut r, ARENA_FEATURES), random_obs(&mut r, ARENA_FEATURES)))
                .collect();
            let samples: Vec<DiscSample<'_>> = obs
                .iter()
                .enumerate()
                .map(|(i, (a, b))| DiscSample {
                    obs: a,
                    action: r.random_range(0..actions),
                    next_obs: b,
                    logp: r.random_range(-4.0..-0.05),
                    expert: i % 3 == 0,
                })
                .collect();
            let mut g = vec![0.0; d.num_params()];
            d.loss_and_grad(&samples, &mut g).map_err(|e| e.to_string())?;
            let mut scratch = vec![0.0; d.num_params()];
            let err = max_relative_error(&d.params(), &g, |p| {
                let mut dd = d.clone();
                dd.set_params(p);
                dd.loss_and_grad(&samples, &mut scratch).unwrap_or(f64::NAN)
            });
            worst = worst.max(err);
        }
        bound(worst, points)
    }));
    out
}

fn bound(worst: f64, points: usize) -> Result<String, String> {
    let detail = format!("max relative error {worst:.2e} over {points} points");
    if worst < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `log D - log(1 - D)` through log-sum-exp, against `f - ln pi`.
pub fn airl_identity(samples: usize, seed: u64) -> CheckResult {
    timed("AIRL reward identity", || {
        let mut r = rng::stream(seed, &[]);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let f: f64 = r.random_range(-30.0..30.0);
            let pi: f64 = r.random_range(1e-8..1.0);
            let lse = f.max(pi.ln()) + ((f - f.max(pi.ln())).exp() + (pi.ln() - f.max(pi.ln())).exp()).ln();
            let log_d = f - lse;
            let log_1md = pi.ln() - lse;
            let direct = crate::irl::learned_reward(f, pi).map_err(|e| e.to_string())?;
            worst = worst.max(((log_d - log_1md) - direct).abs());
        }
        if worst <= 1e-9 {
            Ok(format!("max deviation {worst:.2e} over {samples} samples"))
        } else {
            Err(format!("max deviation {worst:.2e}"))
        }
    })
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut out = vec![fusion_suite(10_000, seed), boundary_identities(seed)];
    out.extend(gradient_suite(100, seed));
    out.push(airl_identity(100_000, seed));
    out
}

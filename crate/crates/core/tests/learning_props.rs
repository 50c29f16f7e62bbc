use policy_fusion::gridworld::{Channel, EnvSpec, ExpertKind, FeatureSet, Observation, COLLECT_STATES};
use policy_fusion::harness::Budget;
use policy_fusion::irl::{collect_demos, discriminator_prob, standardize_rewards, DiscSample, Discriminator, RunningStats};
use policy_fusion::trainer::{
    compute_gae, policy_loss_and_grad, train, Architecture, ChannelReward, Model, PolicyParams, PolicySample,
    RolloutEnv,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Episodes {
    rewards: Vec<f64>,
    values: Vec<f64>,
    next_values: Vec<f64>,
    terminal: Vec<bool>,
    end: Vec<bool>,
}

/// Concatenated episodes; the last step of each is an end, terminal or cut.
fn episodes() -> impl Strategy<Value = Episodes> {
    prop::collection::vec((1..30usize, any::<bool>()), 1..6).prop_flat_map(|eps| {
        let n: usize = eps.iter().map(|e| e.0).sum();
        let mut end = Vec::with_capacity(n);
        let mut terminal = Vec::with_capacity(n);
        for (len, term) in &eps {
            for i in 0..*len {
                let last = i + 1 == *len;
                end.push(last);
                terminal.push(last && *term);
            }
        }
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            Just(terminal),
            Just(end),
        )
            .prop_map(|(rewards, values, mut next_values, terminal, end)| {
                // Inside an episode the next state's value is the following entry.
                for t in 0..next_values.len() {
                    if !end[t] {
                        next_values[t] = values[t + 1];
                    }
                }
                Episodes {
                    rewards,
                    values,
                    next_values,
                    terminal,
                    end,
                }
            })
    })
}

/// Reward-to-go to the episode end, bootstrapped from the next value when
/// the episode was cut rather than terminated.
fn monte_carlo(e: &Episodes, gamma: f64) -> Vec<f64> {
    (0..e.rewards.len())
        .map(|t| {
            let mut g = 0.0;
            let mut discount = 1.0;
            let mut k = t;
            loop {
                g += discount * e.rewards[k];
                discount *= gamma;
                if e.end[k] {
                    if !e.terminal[k] {
                        g += discount * e.next_values[k];
                    }
                    return g;
                }
                k += 1;
            }
        })
        .collect()
}

fn features(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), -1.0..1.0f64], dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn gae_with_unit_lambda_is_monte_carlo(e in episodes(), gamma in 0.0..=1.0f64) {
        let (adv, ret) = compute_gae(&e.rewards, &e.values, &e.next_values, &e.terminal, &e.end, gamma, 1.0);
        let mc = monte_carlo(&e, gamma);
        for t in 0..mc.len() {
            prop_assert!((ret[t] - mc[t]).abs() < 1e-9, "t={t}: {} vs {}", ret[t], mc[t]);
            prop_assert!((adv[t] - (mc[t] - e.values[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn gae_with_zero_lambda_is_td_error(e in episodes(), gamma in 0.0..=1.0f64) {
        let (adv, _) = compute_gae(&e.rewards, &e.values, &e.next_values, &e.terminal, &e.end, gamma, 0.0);
        for (t, a) in adv.iter().enumerate() {
            let boot = if e.terminal[t] { 0.0 } else { gamma * e.next_values[t] };
            prop_assert!((a - (e.rewards[t] + boot - e.values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_advantage_gives_zero_surrogate_gradient(
        params in prop::collection::vec(-2.0..2.0f64, Architecture::mlp(6, &[5]).param_count(4)),
        obs in prop::collection::vec((features(6), 0..4usize, -3.0..0.0f64), 1..20),
    ) {
        let model = Model { arch: Architecture::mlp(6, &[5]), outputs: 4, params: params.clone() };
        let observations: Vec<Observation> = obs.iter().map(|o| Observation { index: 0, features: o.0.clone() }).collect();
        let samples: Vec<PolicySample> = observations
            .iter()
            .zip(&obs)
            .map(|(o, x)| PolicySample { obs: o, action: x.1, old_logp: x.2, advantage: 0.0 })
            .collect();
        let mut grad = vec![1.0; params.len()];
        let parts = policy_loss_and_grad(&model, &params, &samples, 0.2, 0.0, &mut grad).unwrap();
        prop_assert_eq!(parts.loss, 0.0);
        prop_assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn policy_outputs_are_distributions(
        params in prop::collection::vec(-30.0..30.0f64, Architecture::mlp(6, &[5]).param_count(10)),
        x in features(6),
    ) {
        let policy = PolicyParams(Model { arch: Architecture::mlp(6, &[5]), outputs: 10, params });
        let d = policy.forward(&Observation { index: 0, features: x }).unwrap();
        let p = d.probs();
        prop_assert_eq!(p.len(), 10);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    // Logits above about 36.7 round the logistic to exactly 1.0 in f64.
    #[test]
    fn discriminator_probability_is_open_unit_interval(f in -30.0..16.0f64, logpi in -20.0..0.0f64) {
        let pi = logpi.exp();
        let d = discriminator_prob(f, pi).unwrap();
        prop_assert!(d > 0.0 && d < 1.0);
        let direct = f.exp() / (f.exp() + pi);
        prop_assert!((d - direct).abs() < 1e-12);
    }

    #[test]
    fn non_informative_discriminator_loss(
        actions in 2..12usize,
        batch in prop::collection::vec((features(5), features(5), any::<bool>()), 2..40),
        gamma in 0.0..1.0f64,
    ) {
        prop_assume!(batch.iter().any(|b| b.2) && batch.iter().any(|b| !b.2));
        let disc = Discriminator::zeros(5, actions, gamma);
        let obs: Vec<(Observation, Observation)> = batch
            .iter()
            .map(|b| (Observation { index: 0, features: b.0.clone() }, Observation { index: 0, features: b.1.clone() }))
            .collect();
        let logp = -(actions as f64).ln();
        let samples: Vec<DiscSample> = obs
            .iter()
            .zip(&batch)
            .enumerate()
            .map(|(i, (o, b))| DiscSample { obs: &o.0, action: i % actions, next_obs: &o.1, logp, expert: b.2 })
            .collect();
        let mut grad = vec![0.0; disc.num_params()];
        let loss = disc.loss_and_grad(&samples, &mut grad).unwrap();
        // Logit ln|A| everywhere: expert term ln(1 + 1/|A|), policy term ln(1 + |A|).
        let a = actions as f64;
        let want = 0.5 * (1.0 + 1.0 / a).ln() + 0.5 * (1.0 + a).ln();
        prop_assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
    }

    #[test]
    fn standardized_rewards_have_target_moments(
        values in prop::collection::vec(-100.0..100.0f64, 2..200),
        sigma in 0.01..5.0f64,
        shift in -50.0..50.0f64,
        scale in 0.1..10.0f64,
    ) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let spread = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assume!(spread > 1e-3);
        let out = standardize_rewards(&values, sigma, &mut RunningStats::default());
        let m = out.iter().sum::<f64>() / n;
        let s = (out.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(m.abs() < 1e-9);
        prop_assert!((s - sigma).abs() < 1e-9 * sigma.max(1.0));
        let moved: Vec<f64> = values.iter().map(|v| v * scale + shift).collect();
        let again = standardize_rewards(&moved, sigma, &mut RunningStats::default());
        for (x, y) in out.iter().zip(&again) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn demos_have_exactly_horizon_steps(seed in any::<u64>(), horizon in 1..120usize, n in 1..4usize, arena in any::<bool>()) {
        let (spec, expert) = if arena {
            (EnvSpec::arena(FeatureSet::ALL), ExpertKind::Warrior)
        } else {
            (EnvSpec::collect(), ExpertKind::RedCollector)
        };
        let demos = collect_demos(&spec, expert, n, horizon, seed).unwrap();
        prop_assert_eq!(demos.len(), n);
        for traj in &demos.trajectories {
            prop_assert_eq!(traj.len(), horizon);
            prop_assert!(traj.last().unwrap().done);
            prop_assert!(traj[..horizon - 1].iter().all(|t| !t.done));
        }
    }
}

#[test]
fn training_is_seed_deterministic() {
    let mut config = Budget::default().collect;
    config.iterations = 3;
    config.rollout_length = 256;
    let run = |seed| {
        let env = RolloutEnv::procedural(EnvSpec::collect(), seed).unwrap();
        let reward = ChannelReward(vec![Channel::R0Red]);
        train(Architecture::Tabular { states: COLLECT_STATES }, env, &reward, config.clone(), seed).unwrap()
    };
    let (a, b, c) = (run(5), run(5), run(6));
    let bits = |m: &Model| m.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.policy.0), bits(&b.policy.0));
    assert_eq!(bits(&a.value.0), bits(&b.value.0));
    assert_ne!(bits(&a.policy.0), bits(&c.policy.0));
}

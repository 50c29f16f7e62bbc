use policy_fusion::gridworld::{
    encode, mask_observation, Channel, EnvSpec, FeatureSet, GridState, ObjectKind, Outcome, StepMode,
};
use proptest::prelude::*;

fn flags() -> impl Strategy<Value = FeatureSet> {
    (any::<bool>(), any::<bool>()).prop_map(|(orb, death_tile)| FeatureSet { orb, death_tile })
}

fn count(state: &GridState, kind: ObjectKind) -> usize {
    state.objects.iter().filter(|o| o.object == kind).count()
}

/// Steps until done or the actions run out; returns every per-step result.
fn play(spec: &EnvSpec, seed: u64, actions: &[(usize, usize)], mode: StepMode) -> (GridState, Vec<[f64; 3]>) {
    let level = spec.level(seed).unwrap();
    let mut s = GridState::reset(&level, spec.step_cap);
    let n = spec.num_actions();
    let mut out = Vec::new();
    for &(a, b) in actions {
        if s.done {
            break;
        }
        let r = s.step(a % n, Some(b % n), mode).unwrap();
        out.push([
            r.rewards.get(Channel::R0Red),
            r.rewards.get(Channel::R1Green),
            r.rewards.get(Channel::R0Env),
        ]);
    }
    (s, out)
}

fn actions(len: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..10usize, 0..10usize), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn levels_are_seed_deterministic(seed in any::<u64>(), f in flags()) {
        for spec in [EnvSpec::collect(), EnvSpec::arena(f)] {
            prop_assert_eq!(spec.level(seed).unwrap(), spec.level(seed).unwrap());
        }
    }

    #[test]
    fn rollouts_are_seed_deterministic(seed in any::<u64>(), f in flags(), acts in actions(120)) {
        for spec in [EnvSpec::collect(), EnvSpec::arena(f)] {
            let (a, ra) = play(&spec, seed, &acts, StepMode::Terminal);
            let (b, rb) = play(&spec, seed, &acts, StepMode::Terminal);
            prop_assert_eq!(a, b);
            prop_assert_eq!(ra, rb);
        }
    }

    #[test]
    fn collect_rewards_count_objects(seed in any::<u64>(), acts in actions(60)) {
        let spec = EnvSpec::collect();
        let start = GridState::reset(&spec.level(seed).unwrap(), spec.step_cap);
        let level = spec.level(seed).unwrap();
        let mut s = GridState::reset(&level, spec.step_cap);
        let (mut red, mut green, mut events_red, mut events_green) = (0.0, 0.0, 0, 0);
        for &(a, _) in &acts {
            if s.done {
                break;
            }
            let r = s.step(a % spec.num_actions(), None, StepMode::Terminal).unwrap();
            red += r.rewards.get(Channel::R0Red);
            green += r.rewards.get(Channel::R1Green);
            events_red += r.events.red;
            events_green += r.events.green;
            prop_assert_eq!(r.rewards.get(Channel::R0Env), 0.0);
        }
        let red_taken = count(&start, ObjectKind::RedBox) - count(&s, ObjectKind::RedBox);
        let green_taken = count(&start, ObjectKind::GreenBall) - count(&s, ObjectKind::GreenBall);
        prop_assert_eq!(red, red_taken as f64);
        prop_assert_eq!(green, green_taken as f64);
        prop_assert_eq!(events_red as usize, red_taken);
        prop_assert_eq!(events_green as usize, green_taken);
    }

    #[test]
    fn arena_step_reward_decomposes(seed in any::<u64>(), f in flags(), acts in actions(150)) {
        let spec = EnvSpec::arena(f);
        let level = spec.level(seed).unwrap();
        let mut s = GridState::reset(&level, spec.step_cap);
        for &(a, b) in &acts {
            if s.done {
                break;
            }
            let r = s.step(a, Some(b), StepMode::Terminal).unwrap();
            let env = r.rewards.get(Channel::R0Env);
            let base = -0.01 - 0.1 * r.events.impossible.min(1) as f64;
            let want = if s.outcome == Some(Outcome::Win) { base + 10.0 * s.agent.hp } else { base };
            prop_assert!((env - want).abs() < 1e-12, "reward {env}, expected {want}");
            if s.outcome != Some(Outcome::Win) {
                prop_assert!([-0.01, -0.11].iter().any(|v| (env - v).abs() < 1e-12));
            }
            prop_assert_eq!(r.rewards.get(Channel::R0Red), 0.0);
            prop_assert_eq!(r.rewards.get(Channel::R1Green), 0.0);
        }
    }

    #[test]
    fn fixed_horizon_runs_exactly_t_steps(seed in any::<u64>(), f in flags(), t in 1..250usize, acts in actions(300)) {
        for spec in [EnvSpec::collect(), EnvSpec::arena(f)] {
            let (s, rewards) = play(&spec, seed, &acts, StepMode::FixedHorizon(t));
            prop_assert_eq!(rewards.len(), t);
            prop_assert!(s.done);
            prop_assert_eq!(s.step, t);
        }
    }

    #[test]
    fn masking_is_idempotent(seed in any::<u64>(), level_flags in flags(), known in flags(), acts in actions(30)) {
        let spec = EnvSpec::arena(level_flags);
        let level = spec.level(seed).unwrap();
        let mut s = GridState::reset(&level, spec.step_cap);
        for &(a, b) in &acts {
            if s.done {
                break;
            }
            let once = mask_observation(&s, known);
            prop_assert_eq!(&mask_observation(&once, known), &once);
            prop_assert_eq!(&mask_observation(&s, FeatureSet::ALL), &s);
            prop_assert_eq!(encode(&once, known), encode(&s, known));
            s.step(a, Some(b), StepMode::Terminal).unwrap();
        }
    }

    #[test]
    fn features_extend_the_base_level(seed in any::<u64>(), f in flags()) {
        let base = EnvSpec::arena(FeatureSet::NONE).level(seed).unwrap();
        let level = EnvSpec::arena(f).level(seed).unwrap();
        prop_assert_eq!(&base.walls, &level.walls);
        prop_assert_eq!(base.agent_start, level.agent_start);
        prop_assert_eq!(base.opponent_start, level.opponent_start);
        for o in &base.objects {
            prop_assert!(level.objects.contains(o));
        }
    }
}

/// Generalized advantage estimates and returns.
///
/// `next_values[t]` is the value of the state reached after step `t`;
/// `terminal[t]` zeroes the bootstrap, `end[t]` stops the recursion (an
/// episode or rollout boundary, terminal or not).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    terminal: &[bool],
    end: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let alive = if terminal[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_values[t] * alive - values[t];
        if end[t] {
            running = 0.0;
        }
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Discounted reward-to-go with the same boundary conventions.
pub fn discounted_returns(
    rewards: &[f64],
    next_values: &[f64],
    terminal: &[bool],
    end: &[bool],
    gamma: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut out = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        if end[t] {
            running = if terminal[t] { 0.0 } else { next_values[t] };
        }
        running = rewards[t] + gamma * running;
        out[t] = running;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn single_terminal_step() {
        let (a, r) = compute_gae(&[1.0], &[0.0], &[0.0], &[true], &[true], 0.99, 0.95);
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn two_step_hand_recursion() {
        // delta1 = 1 - 0.5 = 0.5; delta0 = 1 + 0.9*0.5 - 0.5 = 0.95;
        // A0 = 0.95 + 0.9*0.95*0.5 = 1.3775.
        let (a, _) = compute_gae(
            &[1.0, 1.0],
            &[0.5, 0.5],
            &[0.5, 0.0],
            &[false, true],
            &[false, true],
            0.9,
            0.95,
        );
        assert!((a[0] - 1.3775).abs() < 1e-12);
        assert!((a[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lambda_one_is_monte_carlo() {
        let mut r = rng::stream(11, &[]);
        for _ in 0..50 {
            let n = r.random_range(1..40);
            let rewards: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut end: Vec<bool> = (0..n).map(|_| r.random_bool(0.15)).collect();
            end[n - 1] = true;
            let terminal: Vec<bool> = end.iter().map(|&e| e && r.random_bool(0.5)).collect();
            // Within an episode, the next value is the stored value of the next step.
            let next_values: Vec<f64> = (0..n)
                .map(|t| {
                    if end[t] {
                        r.random_range(-1.0..1.0)
                    } else {
                        values[t + 1]
                    }
                })
                .collect();
            let (adv, _) = compute_gae(&rewards, &values, &next_values, &terminal, &end, 0.99, 1.0);
            // Oracle: explicit forward sum per start index.
            for t in 0..n {
                let mut g = 0.0;
                let mut disc = 1.0;
                let mut k = t;
                loop {
                    g += disc * rewards[k];
                    disc *= 0.99;
                    if end[k] {
                        if !terminal[k] {
                            g += disc * next_values[k];
                        }
                        break;
                    }
                    k += 1;
                }
                assert!((adv[t] - (g - values[t])).abs() < 1e-9, "t={t}");
            }
        }
    }
}

#![allow(dead_code)]

use rand::Rng;
use telegov_core::hmm::HmmModel;

/// P(obs) by summing over every hidden path.
pub fn brute_force_likelihood(m: &HmmModel, obs: &[usize]) -> f64 {
    let n = m.states.len();
    let t = obs.len();
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    loop {
        let mut p = m.initial[path[0]] * m.emission[[path[0], obs[0]]];
        for i in 1..t {
            p *= m.transition[[path[i - 1], path[i]]] * m.emission[[path[i], obs[i]]];
        }
        total += p;
        let mut i = 0;
        loop {
            if i == t {
                return total;
            }
            path[i] += 1;
            if path[i] < n {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

pub fn small_model<R: Rng>(rng: &mut R, states: usize, symbols: usize) -> HmmModel {
    HmmModel::random(
        (0..states).map(|i| format!("s{i}")).collect(),
        (0..symbols).map(|i| format!("o{i}")).collect(),
        rng,
    )
}

pub fn random_obs<R: Rng>(rng: &mut R, symbols: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..symbols)).collect()
}

/// Largest relative gap between forward and brute-force likelihoods over
/// `fixtures` random small models and sequences.
pub fn forward_oracle_gap<R: Rng>(rng: &mut R, fixtures: usize) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..fixtures {
        let n = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=4);
        let m = small_model(rng, n, k);
        let len = rng.gen_range(1..=6);
        let obs = random_obs(rng, k, len);
        let brute = brute_force_likelihood(&m, &obs);
        let fwd = m.forward_loglik(&obs).unwrap().exp();
        worst = worst.max((fwd - brute).abs() / brute);
    }
    worst
}

pub fn non_decreasing(trace: &[f64]) -> bool {
    trace
        .windows(2)
        .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
}

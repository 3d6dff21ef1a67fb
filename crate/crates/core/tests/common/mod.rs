#![allow(dead_code)]

use hle_core::TransitionMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random sub-stochastic matrix whose columns keep at least `min_death`
/// probability of death.
pub fn random_matrix(rng: &mut impl Rng, states: usize, min_death: f64) -> TransitionMatrix {
    let mut entries = Vec::with_capacity(states * states);
    for _ in 0..states {
        let w: Vec<f64> = (0..=states).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let scale = (1.0 - min_death) / total;
        entries.extend(w[..states].iter().map(|v| v * scale));
    }
    TransitionMatrix::from_column_slice(states, &entries).unwrap()
}

pub fn random_chain(rng: &mut impl Rng, ages: usize, states: usize) -> Vec<TransitionMatrix> {
    (0..ages).map(|_| random_matrix(rng, states, 0.02)).collect()
}

/// Scales every entry by a random factor in `[1 − spread, 1 + spread]`,
/// shrinking any column that would exceed one.
pub fn perturb(rng: &mut impl Rng, ms: &[TransitionMatrix], spread: f64) -> Vec<TransitionMatrix> {
    ms.iter()
        .map(|m| {
            let s = m.states();
            let mut v: Vec<f64> = m
                .as_matrix()
                .iter()
                .map(|x| x * rng.random_range(1.0 - spread..1.0 + spread))
                .collect();
            for k in 0..s {
                let sum: f64 = v[k * s..(k + 1) * s].iter().sum();
                if sum > 0.999 {
                    v[k * s..(k + 1) * s].iter_mut().for_each(|x| *x *= 0.999 / sum);
                }
            }
            TransitionMatrix::from_column_slice(s, &v).unwrap()
        })
        .collect()
}

/// Calls `visit(path, probability)` for every path of living states or death
/// (`None`) through `ms`, starting in `start`.
pub fn enumerate(ms: &[TransitionMatrix], start: usize, visit: &mut dyn FnMut(&[Option<usize>], f64)) {
    fn walk(
        ms: &[TransitionMatrix],
        path: &mut Vec<Option<usize>>,
        p: f64,
        visit: &mut dyn FnMut(&[Option<usize>], f64),
    ) {
        let t = path.len() - 1;
        if t == ms.len() {
            visit(path, p);
            return;
        }
        match path[t] {
            None => {
                path.push(None);
                walk(ms, path, p, visit);
                path.pop();
            }
            Some(k) => {
                let s = ms[t].states();
                for j in 0..s {
                    path.push(Some(j));
                    walk(ms, path, p * ms[t].get(j, k), visit);
                    path.pop();
                }
                path.push(None);
                walk(ms, path, p * ms[t].death_probability(k), visit);
                path.pop();
            }
        }
    }
    let mut path = vec![Some(start)];
    walk(ms, &mut path, 1.0, visit);
}

//! Small generated corpora with known structure, for smoke runs and tests.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::triples::Triple;

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn draw<R: Rng + ?Sized>(pool: &[String], len: usize, rng: &mut R) -> Vec<String> {
    (0..len)
        .map(|_| pool.choose(rng).expect("non-empty pool").clone())
        .collect()
}

/// Query mentions one keyword among fillers; the response echoes it; the future
/// turn is a fixed function of the response.
pub fn copy_task(n: usize, seed: u64) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fillers = words("w", 10);
    let keys = words("k", 10);
    (0..n)
        .map(|_| {
            let k = rng.random_range(0..keys.len());
            let mut query = draw(&fillers, 4, &mut rng);
            let at = rng.random_range(0..=query.len());
            query.insert(at, keys[k].clone());
            Triple {
                query,
                response: vec!["you".into(), "said".into(), keys[k].clone()],
                future: vec!["yes".into(), format!("m{k}")],
            }
        })
        .collect()
}

/// A triple plus a fake response whose tokens never occur in true responses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastTriple {
    pub triple: Triple,
    pub fake: Vec<String>,
}

/// True responses use `t*` tokens and predict the future turn; fakes use `f*` tokens.
pub fn contrast_task(n: usize, seed: u64) -> Vec<ContrastTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let query_pool = words("q", 8);
    let true_pool = words("t", 6);
    let fake_pool = words("f", 6);
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..=4);
            let response = draw(&true_pool, len, &mut rng);
            let future = response.iter().map(|w| w.replacen('t', "z", 1)).collect();
            let fake_len = rng.random_range(2..=4);
            ContrastTriple {
                triple: Triple {
                    query: draw(&query_pool, 3, &mut rng),
                    response,
                    future,
                },
                fake: draw(&fake_pool, fake_len, &mut rng),
            }
        })
        .collect()
}

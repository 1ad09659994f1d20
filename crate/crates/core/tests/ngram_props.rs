use curator_core::ngram::NGramModel;
use curator_core::Execution;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: u32 = 12;

fn stream(seed: u64, len: usize, alphabet: std::ops::Range<u32>) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(len);
    // a sticky Markov chain so that context matters
    let mut cur = alphabet.start;
    for _ in 0..len {
        if rng.gen_bool(0.3) {
            cur = rng.gen_range(alphabet.clone());
        }
        out.push(cur);
    }
    out
}

fn per_token_nll(model: &NGramModel, tokens: &[u32]) -> f64 {
    let s = model.logprob(tokens).unwrap();
    s.nll_total / s.token_count as f64
}

#[test]
fn held_in_text_scores_better_than_disjoint_training() {
    let x: Vec<Vec<u32>> = (0..20).map(|s| stream(s, 200, 0..6)).collect();
    let y: Vec<Vec<u32>> = (100..120).map(|s| stream(s, 200, 6..V)).collect();
    for order in 1..=4 {
        let mx = NGramModel::train(&x, order, 0.75, V, Execution::Parallel).unwrap();
        let my = NGramModel::train(&y, order, 0.75, V, Execution::Parallel).unwrap();
        for doc in &x {
            assert!(per_token_nll(&mx, doc) <= per_token_nll(&my, doc), "order {order}");
        }
    }
}

proptest! {
    #[test]
    fn perplexity_is_at_least_one(
        seed in any::<u64>(),
        order in 1usize..5,
        discount in 0.05f64..0.95,
        probe in prop::collection::vec(0..V, 1..60),
    ) {
        let docs: Vec<Vec<u32>> = (0..5).map(|i| stream(seed ^ i, 80, 0..V)).collect();
        let model = NGramModel::train(&docs, order, discount, V, Execution::Sequential).unwrap();
        prop_assert!(per_token_nll(&model, &probe).exp() >= 1.0);
    }

    #[test]
    fn uniform_perplexity_is_vocab_size(v in 1u32..5000, order in 1usize..6, len in 1usize..50) {
        let model = NGramModel::uniform(v, order);
        let probe: Vec<u32> = (0..len as u32).map(|i| i % v).collect();
        let ppl = per_token_nll(&model, &probe).exp();
        prop_assert!((ppl - v as f64).abs() <= 1e-9 * v as f64);
    }
}

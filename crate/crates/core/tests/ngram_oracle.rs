mod common;

use common::kn::DirectKn;
use common::synth::markov_docs;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samlm_core::corpus::{BOS, NUM_SPECIALS};
use samlm_core::eval::perplexity;
use samlm_core::ngram::NgramModel;

#[test]
fn perplexity_matches_direct_summation() {
    for seed in 0..3 {
        let words = 8;
        let v = NUM_SPECIALS + words;
        let train = markov_docs(200, words, seed);
        let test = markov_docs(60, words, seed + 50);
        let model = NgramModel::fit(&train, 3, v).unwrap();
        let oracle = DirectKn::new(&train, 3, v);
        for docs in [&train, &test] {
            let got = perplexity(&model, docs).unwrap().perplexity;
            let want = oracle.perplexity(docs);
            assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
        }
    }
}

#[test]
fn probabilities_match_direct_summation_for_random_histories() {
    let words = 6;
    let v = NUM_SPECIALS + words;
    let train = markov_docs(200, words, 9);
    let model = NgramModel::fit(&train, 4, v).unwrap();
    let oracle = DirectKn::new(&train, 4, v);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let mut h = vec![BOS];
        h.extend((0..rng.gen_range(0..5)).map(|_| rng.gen_range(0..v)));
        let w = rng.gen_range(0..v);
        let (a, b) = (model.prob(&h, w), oracle.prob(&h, w));
        assert!((a - b).abs() < 1e-12, "{h:?} {w}: {a} vs {b}");
    }
}

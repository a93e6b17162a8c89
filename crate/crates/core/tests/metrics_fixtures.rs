use clonebot_core::context::{TokenId, Tokenizer, WordTokenizer};
use clonebot_core::evaluation::{bleu_corpus, perplexity};
use clonebot_core::generation::{BigramLm, LanguageModel};
use clonebot_core::text::whitespace_tokens;
use proptest::prelude::*;

fn corpus(pairs: &[(&str, &str)]) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    pairs
        .iter()
        .map(|(c, r)| (whitespace_tokens(c), whitespace_tokens(r)))
        .unzip()
}

#[test]
fn two_pair_partial_overlap() {
    // p = 9/10, 6/8, 3/6, 1/4; c = 10, r = 11.
    let (c, r) = corpus(&[
        ("the cat sat on the mat", "the cat is on the mat"),
        ("a quick brown fox", "a quick brown fox jumps"),
    ]);
    let report = bleu_corpus(&c, &r).unwrap();
    assert_eq!(report.matches, [9, 6, 3, 1]);
    assert_eq!(report.totals, [10, 8, 6, 4]);
    let expected = (-0.1f64).exp() * (0.9f64 * 0.75 * 0.5 * 0.25).powf(0.25);
    assert!((report.score - expected).abs() < 1e-6);
    assert!((report.brevity_penalty - (-0.1f64).exp()).abs() < 1e-12);
}

#[test]
fn longer_candidate_has_no_penalty() {
    // p = 5/6, 4/5, 3/4, 2/3; the product is 1/3.
    let (c, r) = corpus(&[("we will meet at noon today", "we will meet at noon")]);
    let report = bleu_corpus(&c, &r).unwrap();
    assert_eq!(report.brevity_penalty, 1.0);
    assert!((report.score - (1.0f64 / 3.0).powf(0.25)).abs() < 1e-6);
}

#[test]
fn short_candidate_is_penalized() {
    let (c, r) = corpus(&[("we will meet at", "we will meet at noon today")]);
    let report = bleu_corpus(&c, &r).unwrap();
    assert_eq!(report.precisions, [1.0; 4]);
    assert!((report.score - (-0.5f64).exp()).abs() < 1e-6);
}

#[test]
fn clipped_precision_with_no_bigram_scores_zero() {
    let (c, r) = corpus(&[("the the the", "the cat")]);
    let report = bleu_corpus(&c, &r).unwrap();
    assert!((report.precisions[0] - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(report.precisions[1], 0.0);
    assert_eq!(report.score, 0.0);
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-e]", 4..12)
}

proptest! {
    #[test]
    fn self_bleu_is_one(cands in prop::collection::vec(sentence(), 1..8)) {
        let r = bleu_corpus(&cands, &cands).unwrap();
        prop_assert!((r.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_order_does_not_matter(
        pairs in prop::collection::vec((sentence(), sentence()), 1..8),
        rot in 0usize..8,
    ) {
        let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let mut shuffled = pairs.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        shuffled.reverse();
        let (c2, r2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        prop_assert_eq!(bleu_corpus(&c, &r).unwrap(), bleu_corpus(&c2, &r2).unwrap());
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size(
        v in prop::sample::select(vec![2usize, 4, 64]),
        test in prop::collection::vec(prop::collection::vec(0u32..2, 0..10), 1..6),
    ) {
        let r = perplexity(&Uniform(v), &test, 1).unwrap();
        prop_assert!((r.ppl - v as f64).abs() < 1e-9);
    }
}

struct Uniform(usize);

impl LanguageModel for Uniform {
    fn vocab_size(&self) -> usize {
        self.0
    }
    fn next_distribution(&self, _: &[TokenId]) -> Vec<f64> {
        vec![1.0 / self.0 as f64; self.0]
    }
}

struct Half;

impl LanguageModel for Half {
    fn vocab_size(&self) -> usize {
        2
    }
    fn next_distribution(&self, _: &[TokenId]) -> Vec<f64> {
        vec![0.5, 0.5]
    }
}

#[test]
fn single_half_probability_token() {
    // An empty sequence predicts only its EOS.
    let r = perplexity(&Half, &[vec![]], 1).unwrap();
    assert_eq!(r.token_count, 1);
    assert!((r.ppl - 2.0).abs() < 1e-12);
}

#[test]
fn laplace_bigram_fixture() {
    // Vocabulary <unk> <eos> a b. Counts from "a b a b a b":
    // eos->a 1, a->b 3, b->a 2, b->eos 1; rows eos 1, a 3, b 3.
    // "a b": P(a|eos) = 2/5, P(b|a) = 4/7, P(eos|b) = 2/7.
    let tok = WordTokenizer::new(["a".to_string(), "b".to_string()], Vec::new());
    let lm = BigramLm::train_on_texts(["a b a b a b"], &tok);
    let r = perplexity(&lm, &[tok.encode("a b")], tok.eos_id()).unwrap();
    assert_eq!(r.token_count, 3);
    let expected = (16.0f64 / 245.0).powf(-1.0 / 3.0);
    assert!((r.ppl - expected).abs() < 1e-9);
}

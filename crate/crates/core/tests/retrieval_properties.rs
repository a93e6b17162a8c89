use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use clonebot_core::corpus::{Conversation, Corpus, Utterance, DEFAULT_JOINER};
use clonebot_core::embedding::{Embedder, HashingEmbedder};
use clonebot_core::index::{HnswParams, IndexKind, Metric};
use clonebot_core::retrieval::{build_pairs, build_speaker_indexes, BuildOptions, Retrieval};
use proptest::prelude::*;

const WORDS: [&str; 8] = ["hi", "yes", "no", "maybe", "ok", "sure", "why", "later"];

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    prop::collection::vec(
        prop::collection::vec((0u8..4, prop::collection::vec(0usize..WORDS.len(), 1..4)), 1..12),
        1..5,
    )
    .prop_map(|convs| {
        let mut id = 0;
        let convs = convs
            .into_iter()
            .enumerate()
            .map(|(c, rows)| {
                let utts = rows
                    .into_iter()
                    .map(|(s, words)| {
                        id += 1;
                        Utterance {
                            id,
                            conversation_id: format!("c{c}"),
                            speaker_id: format!("S{s}"),
                            timestamp: id as i64,
                            text: words.iter().map(|w| WORDS[*w]).collect::<Vec<_>>().join(" "),
                        }
                    })
                    .collect();
                Conversation::new(format!("c{c}"), utts)
            })
            .collect();
        Corpus::new(convs).collapse(DEFAULT_JOINER)
    })
}

fn options(metric: Metric, hnsw: bool) -> BuildOptions {
    BuildOptions {
        metric,
        kind: if hnsw { IndexKind::Hnsw(HnswParams::default()) } else { IndexKind::Flat },
        context_turns: 1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn candidates_only_come_from_the_target(
        corpus in corpus_strategy(),
        query in prop::collection::vec(0usize..WORDS.len(), 1..5),
        k in 1usize..10,
        cosine in any::<bool>(),
        hnsw in any::<bool>(),
    ) {
        let metric = if cosine { Metric::CosineViaDot } else { Metric::L2 };
        let speaker_of: HashMap<u64, String> =
            corpus.utterances().map(|u| (u.id, u.speaker_id.clone())).collect();
        let targets = corpus.speakers().clone();
        let set = build_speaker_indexes(&corpus, &targets, Arc::new(HashingEmbedder::new(32)), &options(metric, hnsw)).unwrap();
        let query: Vec<&str> = query.iter().map(|w| WORDS[*w]).collect();
        for target in &targets {
            match set.retrieve_response(&query.join(" "), target, k).unwrap() {
                Retrieval::Answer(r) => {
                    prop_assert_eq!(&r.target_speaker, target);
                    prop_assert_eq!(&speaker_of[&r.response_id], target);
                    for c in &r.candidates {
                        prop_assert_eq!(&speaker_of[&c.record_id], target);
                    }
                }
                Retrieval::NoAnswer { .. } => {
                    prop_assert!(build_pairs(&corpus, target, 1).unwrap().is_empty());
                }
            }
        }
    }

    #[test]
    fn flat_retrieval_equals_embed_and_scan(
        corpus in corpus_strategy(),
        query in prop::collection::vec(0usize..WORDS.len(), 1..5),
    ) {
        let embedder = HashingEmbedder::new(16);
        let targets = corpus.speakers().clone();
        let set = build_speaker_indexes(&corpus, &targets, Arc::new(embedder), &BuildOptions::default()).unwrap();
        let query: String = query.iter().map(|w| WORDS[*w]).collect::<Vec<_>>().join(" ");
        let q = embedder.embed(&query).unwrap();
        for target in &targets {
            let pairs = build_pairs(&corpus, target, 1).unwrap();
            let mut scan: Vec<(f32, u64, String)> = pairs
                .iter()
                .map(|p| {
                    let v = embedder.embed(&p.context_text).unwrap();
                    let dot: f64 = q.as_slice().iter().zip(v.as_slice()).fold(0.0, |s, (a, b)| s + f64::from(*a) * f64::from(*b));
                    ((1.0 - dot) as f32, p.pair.response_id, p.response_text.clone())
                })
                .collect();
            scan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            match set.retrieve_response(&query, target, pairs.len().max(1)).unwrap() {
                Retrieval::Answer(r) => {
                    let got: Vec<(f32, u64, String)> = r.candidates.iter().map(|c| (c.distance, c.record_id, c.response_text.clone())).collect();
                    prop_assert_eq!(&got, &scan);
                    prop_assert_eq!(&r.response_text, &scan[0].2);
                }
                Retrieval::NoAnswer { .. } => prop_assert!(scan.is_empty()),
            }
        }
    }

    #[test]
    fn stored_contexts_retrieve_themselves(corpus in corpus_strategy()) {
        let embedder = HashingEmbedder::new(64);
        let targets = corpus.speakers().clone();
        let set = build_speaker_indexes(&corpus, &targets, Arc::new(embedder), &BuildOptions::default()).unwrap();
        for target in &targets {
            for pair in build_pairs(&corpus, target, 1).unwrap() {
                let r = set.retrieve_response(&pair.context_text, target, 1).unwrap();
                let r = r.answer().unwrap();
                prop_assert!(r.distance.abs() <= 1e-6);
                // Contexts that embed identically tie; the lowest response id wins.
                let key = embedder.embed(&pair.context_text).unwrap();
                let winner = set.speaker(target).unwrap().pairs()[&r.response_id].clone();
                prop_assert_eq!(embedder.embed(&winner.context_text).unwrap(), key);
                prop_assert!(r.response_id <= pair.pair.response_id);
            }
        }
    }
}

#[test]
fn pair_counts_match_enumeration() {
    // Target T speaks five times; only the opener of c1 has no context.
    let rows = [
        ("c1", "T", "one"),
        ("c1", "U", "two"),
        ("c1", "T", "three"),
        ("c1", "U", "four"),
        ("c1", "T", "five"),
        ("c2", "V", "six"),
        ("c2", "T", "seven"),
        ("c2", "V", "eight"),
        ("c2", "T", "nine"),
    ];
    let mut convs: Vec<Conversation> = Vec::new();
    for (i, (c, s, t)) in rows.iter().enumerate() {
        let u = Utterance {
            id: i as u64,
            conversation_id: (*c).into(),
            speaker_id: (*s).into(),
            timestamp: i as i64,
            text: (*t).into(),
        };
        match convs.iter_mut().find(|x| x.conversation_id == *c) {
            Some(conv) => conv.utterances.push(u),
            None => convs.push(Conversation::new(*c, vec![u])),
        }
    }
    let corpus = Corpus::new(convs);
    let pairs = build_pairs(&corpus, "T", 1).unwrap();
    assert_eq!(pairs.len(), 4);
    let targets: BTreeSet<String> = corpus.speakers().clone();
    let set = build_speaker_indexes(&corpus, &targets, Arc::new(HashingEmbedder::new(32)), &BuildOptions::default()).unwrap();
    for t in &targets {
        assert_eq!(set.speaker(t).unwrap().len(), build_pairs(&corpus, t, 1).unwrap().len());
    }
    let r = set.retrieve_response("two", "T", 3).unwrap();
    assert_eq!(r.answer().unwrap().response_text, "three");
    assert_eq!(r.answer().unwrap().candidates.len(), 3);
}

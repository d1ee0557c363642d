use std::collections::BTreeMap;

use sedcap::embeddings::{
    cosine, generate_pairs, load_embeddings, lookup, save_embeddings, train_on_captions,
    train_skipgram, unigram_counts, SkipGramConfig,
};
use sedcap::text::{build_vocab, normalize_caption, TokenSeq};
use sedcap::SeededRng;

// Counts from oracles/skipgram_pairs.py, window 2.
const ORACLE_PAIRS: &[((usize, usize), usize)] = &[
    ((3, 4), 1), ((3, 6), 1), ((4, 3), 1), ((4, 5), 1), ((4, 6), 2), ((4, 10), 1),
    ((4, 11), 1), ((4, 12), 1), ((4, 13), 1), ((5, 4), 1), ((5, 5), 2), ((5, 6), 1),
    ((5, 7), 1), ((5, 8), 2), ((6, 3), 1), ((6, 4), 2), ((6, 5), 1), ((6, 7), 1),
    ((7, 5), 1), ((7, 6), 1), ((8, 5), 2), ((10, 4), 1), ((10, 11), 1), ((10, 12), 1),
    ((11, 4), 1), ((11, 10), 1), ((11, 12), 1), ((11, 13), 1), ((12, 4), 1),
    ((12, 10), 1), ((12, 11), 1), ((12, 13), 1), ((13, 4), 1), ((13, 11), 1),
    ((13, 12), 1),
];

#[test]
fn pair_multiset_matches_brute_force() {
    let fixture = vec![
        vec![1, 4, 5, 6, 7, 2],
        vec![1, 5, 5, 8, 2],
        vec![1, 9, 2],
        vec![1, 4, 10, 11, 12, 13, 4, 2],
        vec![1, 3, 6, 4, 2],
    ];
    let mut got = BTreeMap::new();
    for p in generate_pairs(&fixture, 2) {
        *got.entry(p).or_insert(0usize) += 1;
    }
    let want: BTreeMap<_, _> = ORACLE_PAIRS.iter().copied().collect();
    assert_eq!(got, want);
    assert_eq!(got.values().sum::<usize>(), 40);
}

fn mini_corpus() -> Vec<TokenSeq> {
    [
        "a dog barks at the mailman",
        "the dog barks loudly in the yard",
        "a bird chirps in the tree",
        "the bird sings in the morning",
        "rain falls on the roof",
        "heavy rain falls on a car",
        "a man speaks to the crowd",
        "the crowd cheers for the man",
    ]
    .iter()
    .map(|s| normalize_caption(s))
    .collect()
}

#[test]
fn loss_decreases_over_first_ten_epochs() {
    let caps = mini_corpus();
    let vocab = build_vocab(&caps).unwrap();
    let cfg = SkipGramConfig { dim: 32, epochs: 10, ..Default::default() };
    let model = train_on_captions(&caps, &vocab, &cfg).unwrap();
    let h = &model.loss_history;
    assert_eq!(h.len(), 10);
    for w in h.windows(2) {
        assert!(w[1] < w[0] + 1e-6, "loss went up: {h:?}");
    }
    assert!(h[9] < h[0]);
}

#[test]
fn default_rows_are_256_wide_and_reproducible() {
    let caps = mini_corpus();
    let vocab = build_vocab(&caps).unwrap();
    let cfg = SkipGramConfig { epochs: 2, ..Default::default() };
    let a = train_on_captions(&caps, &vocab, &cfg).unwrap();
    let b = train_on_captions(&caps, &vocab, &cfg).unwrap();
    assert_eq!(a.embeddings.dim(), 256);
    assert_eq!(a.embeddings.vocab_size(), vocab.len());
    assert_eq!(a.embeddings, b.embeddings);
    let c = train_on_captions(&caps, &vocab, &SkipGramConfig { seed: 7, ..cfg }).unwrap();
    assert_ne!(a.embeddings, c.embeddings);
}

#[test]
fn reserved_rows_never_move() {
    let caps = mini_corpus();
    let vocab = build_vocab(&caps).unwrap();
    let cfg = SkipGramConfig { dim: 8, epochs: 3, ..Default::default() };
    let trained = train_on_captions(&caps, &vocab, &cfg).unwrap();
    let bound = 0.5 / 8.0;
    for id in 0..4 {
        let row = lookup(&trained.embeddings, id).unwrap();
        assert!(row.iter().all(|x| x.abs() <= bound));
        assert!(trained.context.row(id).iter().all(|&x| x == 0.0));
    }
}

#[test]
fn shared_contexts_give_similar_vectors() {
    // Tokens 4 (x) and 5 (y) appear in exactly the same sentence frames;
    // tokens 6.. are scattered at random.
    let n_random = 40;
    let mut rng = SeededRng::new(11);
    let mut corpus = Vec::new();
    for _ in 0..60 {
        let frame: Vec<usize> = (0..6).map(|_| 6 + rng.below(n_random)).collect();
        for slot in [4, 5] {
            let mut s = vec![1];
            s.extend_from_slice(&frame[..3]);
            s.push(slot);
            s.extend_from_slice(&frame[3..]);
            s.push(2);
            corpus.push(s);
        }
    }
    for _ in 0..120 {
        let mut s = vec![1];
        s.extend((0..7).map(|_| 6 + rng.below(n_random)));
        s.push(2);
        corpus.push(s);
    }
    let v = 6 + n_random;
    let cfg = SkipGramConfig { dim: 32, epochs: 30, ..Default::default() };
    let model = train_skipgram(
        &generate_pairs(&corpus, cfg.window),
        &unigram_counts(&corpus, v).unwrap(),
        &cfg,
    )
    .unwrap();
    let e = &model.embeddings;
    let x = lookup(e, 4).unwrap();
    let sim_xy = cosine(x, lookup(e, 5).unwrap()).unwrap();
    let beaten = (6..v)
        .filter(|&r| sim_xy > cosine(x, lookup(e, r).unwrap()).unwrap())
        .count();
    assert!(
        beaten as f64 >= 0.95 * n_random as f64,
        "cos(x,y)={sim_xy}, beats only {beaten}/{n_random}"
    );
}

#[test]
fn save_and_load_round_trip_through_f32() {
    let caps = mini_corpus();
    let vocab = build_vocab(&caps).unwrap();
    let cfg = SkipGramConfig { dim: 16, epochs: 1, ..Default::default() };
    let model = train_on_captions(&caps, &vocab, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.emb");
    save_embeddings(&model.embeddings, &p).unwrap();
    let back = load_embeddings(&p).unwrap();
    for (a, b) in model.embeddings.matrix().data().iter().zip(back.matrix().data()) {
        assert_eq!(*a as f32 as f64, *b);
    }
}

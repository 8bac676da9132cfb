use std::collections::{BTreeMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seedforge_core::embedding::{cosine, cosine_raw, Embedder, EmbeddingVector, StubEmbedder, TableEmbedder};
use seedforge_core::model::{ExampleId, FormattingExample, GeneratedRecord, Strategy};
use seedforge_core::sampler::{replay, Sampler, SamplerError};

fn ex(question: &str) -> FormattingExample {
    FormattingExample::new(question, ["yes", "no"], "yes", None).unwrap()
}

fn record(question: &str) -> GeneratedRecord {
    GeneratedRecord {
        example: ex(question),
        iteration: 1,
        parent_seed_id: ExampleId::new("parent"),
        batch_index: 0,
        dedup_key: question.to_lowercase(),
    }
}

fn words(rng: &mut ChaCha8Rng) -> String {
    const VOCAB: [&str; 12] = [
        "river", "moon", "salt", "glass", "bird", "iron", "rain", "seed", "stone", "wind", "milk", "ice",
    ];
    let n = rng.random_range(2..6);
    let mut parts: Vec<&str> = (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
    parts.push("?");
    parts.join(" ")
}

/// Brute-force reference: plain dot product over norms, first index wins ties.
fn oracle_pick(embedder: &dyn Embedder, seed: &str, batch: &[String], want_max: bool) -> usize {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let anchor = embedder.embed(seed).unwrap();
    let a = anchor.values();
    let mut best_index = 0;
    let mut best = f64::NAN;
    for (i, q) in batch.iter().enumerate() {
        let e = embedder.embed(q).unwrap();
        let b = e.values();
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let score = (dot / (norm(a) * norm(b))).clamp(-1.0, 1.0);
        let better = i == 0 || if want_max { score > best } else { score < best };
        if better {
            best = score;
            best_index = i;
        }
    }
    best_index
}

fn pick(strategy: Strategy, embedder: &dyn Embedder, seed: &str, batch: &[String]) -> usize {
    let records: Vec<GeneratedRecord> = batch.iter().map(|q| record(q)).collect();
    let mut sampler = Sampler::new(strategy, ex(seed), 0);
    let chosen = sampler.advance(&records, Some(embedder)).unwrap().question().to_owned();
    batch.iter().position(|q| *q == chosen).unwrap()
}

#[test]
fn contrastive_and_similar_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut ties = 0;
    for _ in 0..1000 {
        let embedder = StubEmbedder::new(rng.random(), rng.random_range(2..32));
        let seed = words(&mut rng);
        let size = rng.random_range(1..8);
        let mut batch: Vec<String> = (0..size).map(|_| words(&mut rng)).collect();
        // repeated questions embed identically and force exact ties
        if size > 2 && rng.random_bool(0.3) {
            let from = rng.random_range(0..size);
            let to = rng.random_range(0..size);
            batch[to] = batch[from].clone();
            ties += 1;
        }
        for (strategy, want_max) in [(Strategy::Contrastive, false), (Strategy::Similar, true)] {
            assert_eq!(
                pick(strategy, &embedder, &seed, &batch),
                oracle_pick(&embedder, &seed, &batch, want_max),
                "{strategy} seed={seed:?} batch={batch:?}"
            );
        }
    }
    assert!(ties > 100);
}

#[test]
fn exact_ties_pick_lowest_index() {
    let table = TableEmbedder::new()
        .with("seed", vec![1.0, 0.0])
        .with("a", vec![0.0, 1.0])
        .with("b", vec![0.6, 0.8])
        .with("c", vec![0.0, 2.0])
        .with("d", vec![1.2, 1.6]);
    let batch: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
    assert_eq!(pick(Strategy::Contrastive, &table, "seed", &batch), 0);
    assert_eq!(pick(Strategy::Similar, &table, "seed", &batch), 1);
}

#[test]
fn contrastive_and_similar_differ_on_distinct_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let embedder = StubEmbedder::default();
    for _ in 0..200 {
        let seed = words(&mut rng);
        let mut batch: Vec<String> = (0..5).map(|_| words(&mut rng)).collect();
        batch.sort();
        batch.dedup();
        if batch.len() < 2 || batch.contains(&seed) {
            continue;
        }
        assert_ne!(
            pick(Strategy::Contrastive, &embedder, &seed, &batch),
            pick(Strategy::Similar, &embedder, &seed, &batch)
        );
    }
}

#[test]
fn selection_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let dim = rng.random_range(2..6);
        let raw = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let seed_vec = raw(&mut rng);
        let vectors: Vec<Vec<f64>> = (0..5).map(|_| raw(&mut rng)).collect();
        let names: Vec<String> = (0..5).map(|i| format!("q{i}")).collect();

        let mut plain = TableEmbedder::new().with("seed", seed_vec.clone());
        let mut scaled = TableEmbedder::new().with("seed", seed_vec.iter().map(|v| v * 7.5).collect());
        for (name, v) in names.iter().zip(&vectors) {
            plain.insert(name.clone(), v.clone());
            let factor = rng.random_range(0.01..100.0);
            scaled.insert(name.clone(), v.iter().map(|x| x * factor).collect());
        }
        for strategy in [Strategy::Contrastive, Strategy::Similar] {
            assert_eq!(
                pick(strategy, &plain, "seed", &names),
                pick(strategy, &scaled, "seed", &names)
            );
        }
    }
}

fn bfs(children: &BTreeMap<usize, Vec<usize>>) -> Vec<usize> {
    let mut order = Vec::new();
    let mut queue = VecDeque::from([0]);
    while let Some(node) = queue.pop_front() {
        order.push(node);
        queue.extend(children.get(&node).into_iter().flatten());
    }
    order
}

fn random_tree(rng: &mut ChaCha8Rng) -> BTreeMap<usize, Vec<usize>> {
    let mut children = BTreeMap::new();
    let mut next = 1;
    let mut queue = VecDeque::from([0usize]);
    let limit: usize = rng.random_range(5..60);
    while let Some(node) = queue.pop_front() {
        let n = if node == 0 { rng.random_range(1..5) } else { rng.random_range(0..5) };
        let kids: Vec<usize> = (0..n).take(limit.saturating_sub(next)).map(|i| next + i).collect();
        next += kids.len();
        queue.extend(&kids);
        children.insert(node, kids);
    }
    children
}

fn node(i: usize) -> String {
    format!("node {i}?")
}

#[test]
fn tree_order_is_breadth_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let tree = random_tree(&mut rng);
        let mut sampler = Sampler::new(Strategy::Tree, ex(&node(0)), 0);
        let mut seen = vec![0];
        loop {
            let current: usize = sampler.current().question()[5..].trim_end_matches('?').parse().unwrap();
            let batch: Vec<GeneratedRecord> = tree[&current].iter().map(|&c| record(&node(c))).collect();
            match sampler.advance(&batch, None) {
                Ok(next) => seen.push(next.question()[5..].trim_end_matches('?').parse().unwrap()),
                Err(SamplerError::EmptyFrontier) => break,
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!(seen, bfs(&tree));
    }
}

#[test]
fn tree_waves_follow_breadth_first_order() {
    // every node has 1..=3 children, derived from its index
    let kids = |n: usize| -> Vec<usize> { (0..1 + n % 3).map(|i| n * 3 + 1 + i).collect() };
    let mut reference = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while reference.len() < 200 {
        let n = queue.pop_front().unwrap();
        reference.push(n);
        queue.extend(kids(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sampler = Sampler::new(Strategy::Tree, ex(&node(0)), 0);
    let mut expanded = Vec::new();
    while expanded.len() < 60 {
        let wave = sampler.take_wave(rng.random_range(1..5));
        let settled = wave
            .into_iter()
            .map(|seed| {
                let id: usize = seed.question()[5..].trim_end_matches('?').parse().unwrap();
                expanded.push(id);
                let batch = kids(id).into_iter().map(|c| record(&node(c))).collect();
                (seed, batch)
            })
            .collect();
        sampler.settle_wave(settled).unwrap();
    }
    assert_eq!(expanded[..], reference[..expanded.len()]);
}

#[test]
fn random_replay_depends_on_rng_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut differing = 0;
    for trial in 0..100 {
        let initial = ex(&format!("initial {trial}?"));
        let batches: Vec<Vec<GeneratedRecord>> = (0..10)
            .map(|i| (0..5).map(|j| record(&format!("t{trial} i{i} j{j} {}?", rng.random::<u16>()))).collect())
            .collect();
        let a = replay(Strategy::Random, 42, &initial, &batches, None).unwrap();
        let again = replay(Strategy::Random, 42, &initial, &batches, None).unwrap();
        let b = replay(Strategy::Random, 43, &initial, &batches, None).unwrap();
        assert_eq!(a, again);
        if a != b {
            differing += 1;
        }
    }
    assert!(differing >= 95, "only {differing} of 100 differed");
}

#[test]
fn seeds_come_from_initial_or_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let embedder = StubEmbedder::default();
    for strategy in Strategy::ALL {
        let initial = ex("initial?");
        let batches: Vec<Vec<GeneratedRecord>> = (0..20)
            .map(|_| (0..rng.random_range(0..4)).map(|_| record(&words(&mut rng))).collect())
            .collect();
        let mut allowed: HashSet<ExampleId> = HashSet::from([initial.id().clone()]);
        allowed.extend(batches.iter().flatten().map(|r| r.example.id().clone()));
        match replay(strategy, 1, &initial, &batches, Some(&embedder)) {
            Ok(sequence) => assert!(sequence.iter().all(|id| allowed.contains(id))),
            Err(SamplerError::EmptyFrontier) => assert_eq!(strategy, Strategy::Tree),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn cosine_analytic_values() {
    let e1 = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
    let e2 = EmbeddingVector::normalized(vec![0.0, 1.0]).unwrap();
    let diag = EmbeddingVector::normalized(vec![1.0, 1.0]).unwrap();
    assert!((cosine(&e1, &e1).unwrap() - 1.0).abs() <= 1e-9);
    assert!(cosine(&e1, &e2).unwrap().abs() <= 1e-9);
    assert!((cosine(&e1, &diag).unwrap() - 0.707_106_78).abs() <= 1e-8);
}

#[test]
fn cosine_symmetry_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(100_000);
    for _ in 0..100_000 {
        let dim = rng.random_range(1..16);
        let u = EmbeddingVector::normalized((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        let v = EmbeddingVector::normalized((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        let (Ok(u), Ok(v)) = (u, v) else { continue };
        let uv = cosine(&u, &v).unwrap();
        assert_eq!(uv.to_bits(), cosine(&v, &u).unwrap().to_bits());
        assert!(uv.abs() <= 1.0 + 1e-9);
        let norm: f64 = u.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-6);
    }
    assert!(cosine_raw(&[1.0], &[1.0, 0.0]).is_err());
}

#[test]
fn stub_embeddings_do_not_collide() {
    let embedder = StubEmbedder::default();
    let mut seen = HashSet::new();
    for i in 0..10_000 {
        let v = embedder.embed(&format!("question {i}")).unwrap();
        let bits: Vec<u64> = v.values().iter().map(|x| x.to_bits()).collect();
        assert!(seen.insert(bits), "collision at {i}");
    }
    assert_eq!(embedder.embed("same").unwrap(), embedder.embed("same").unwrap());
    assert_ne!(
        StubEmbedder::new(1, 64).embed("same").unwrap(),
        StubEmbedder::new(2, 64).embed("same").unwrap()
    );
}

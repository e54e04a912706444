mod support {
    pub mod gru_oracle;
    pub mod vote_oracle;
}

use adscreen_core::detectors::{
    audio_classify, detect_block, disfluency_classify, disfluency_features, interactivity_classify,
    language_classify, stage1_average, stage2_vote, text_mode_pauses, compute_interactional_features,
    ClassifierKind, DetectorModels, InteractionalFeatures, LinearSoftmaxModel, PairAcoustics, TEXT_PAUSE_MAX_S,
};
use adscreen_core::dialogue::{
    make_turn_pair, normalize_distribution, DegreeDistribution, DiagnosisDegree, DialogueBlock, Speaker,
    Utterance,
};
use adscreen_core::neural::{BiGruClassifier, SequenceClassifier, Standardizer};
use adscreen_core::text::{embed_sequence, EmbeddingTable, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::gru_oracle;
use support::vote_oracle::oracle_vote;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// A distribution peaked on `label` whose remaining mass depends on `salt`.
fn peaked(label: usize, salt: usize) -> DegreeDistribution {
    let mut p = [0.0; 4];
    let rest = [0.05, 0.1, 0.15][salt % 3];
    p[label] = 0.55;
    let others: Vec<usize> = (0..4).filter(|&k| k != label).collect();
    p[others[salt % 3]] = rest;
    p[others[(salt + 1) % 3]] = 0.45 - rest - 0.1;
    p[others[(salt + 2) % 3]] = 0.1;
    normalize_distribution(p).unwrap()
}

#[test]
fn vote_matches_brute_force_over_all_label_combinations() {
    for salt in 0..3 {
        for code in 0..256usize {
            let labels: Vec<usize> = (0..4).map(|i| (code >> (2 * i)) & 3).collect();
            let results: Vec<_> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| {
                    let d = peaked(l, salt + i);
                    assert_eq!(d.argmax().index(), l);
                    (d.argmax(), d)
                })
                .collect();
            assert_eq!(stage2_vote(&results).unwrap(), oracle_vote(&results), "labels {labels:?}");
        }
        // identical distributions per label make summed masses tie exactly
        for code in 0..256usize {
            let results: Vec<_> = (0..4)
                .map(|i| {
                    let d = DegreeDistribution::one_hot(DiagnosisDegree::ALL[(code >> (2 * i)) & 3]);
                    (d.argmax(), d)
                })
                .collect();
            assert_eq!(stage2_vote(&results).unwrap(), oracle_vote(&results));
        }
    }
}

#[test]
fn stage1_matches_hand_mean_for_random_sextets() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let six: Vec<DegreeDistribution> = (0..6)
            .map(|_| normalize_distribution(std::array::from_fn(|_| rng.gen_range(0.01..1.0))).unwrap())
            .collect();
        let avg = stage1_average(&six).unwrap();
        let hand: Vec<f64> = (0..4).map(|k| six.iter().map(|d| d.probs()[k]).sum::<f64>() / 6.0).collect();
        assert!(close(avg.probs(), &hand, 1e-12));
        assert!((avg.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

fn fixed_linear() -> LinearSoftmaxModel {
    LinearSoftmaxModel {
        weights: [
            [0.1, -0.2, 0.0, 0.3, 0.01],
            [0.0, 0.5, -0.1, 0.0, 0.0],
            [-0.05, 0.0, 0.02, 0.0, -0.01],
            [0.0, 0.0, 0.0, -1.0, 0.0],
        ],
        bias: [0.1, 0.0, -0.1, 0.2],
        mean: [8.0, 0.5, 12.0, 0.7, 100.0],
        std: [2.0, 0.1, 5.0, 0.1, 20.0],
    }
}

#[test]
fn interactivity_matches_frozen_oracle() {
    let f = InteractionalFeatures {
        turn_length_mean: 10.0,
        floor_control_ratio: 0.6,
        standardized_pause_rate: 15.0,
        phonation_rate: 0.75,
        speaking_rate: 90.0,
    };
    // numpy: softmax(W (f - mean) / std + b)
    let expected = [0.2672905258736619, 0.3590049507280315, 0.2024182656650194, 0.1712862577332871];
    assert!(close(interactivity_classify(&fixed_linear(), &f).probs(), &expected, 1e-12));
}

fn random_classifier(d: usize, seed: u64, standardize: bool) -> SequenceClassifier {
    let mut net = BiGruClassifier::random(d, 3, 4, seed);
    for (_, t) in net.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= 12.0);
    }
    let mut c = SequenceClassifier::new(net);
    if standardize {
        c.standardizer = Some(Standardizer {
            mean: (0..d).map(|i| 0.1 * i as f64).collect(),
            std: (0..d).map(|i| 1.0 + 0.5 * i as f64).collect(),
        });
    }
    c
}

fn oracle_classify(c: &SequenceClassifier, xs: &[Vec<f64>]) -> Vec<f64> {
    let prepared: Vec<Vec<f64>> = match &c.standardizer {
        Some(s) => xs
            .iter()
            .map(|x| x.iter().enumerate().map(|(i, v)| (v - s.mean[i]) / s.std[i]).collect())
            .collect(),
        None => xs.to_vec(),
    };
    gru_oracle::probs(&c.net, &prepared)
}

#[test]
fn utterance_classifiers_match_forward_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let audio = random_classifier(5, 1, true);
    let frames: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    assert!(close(audio_classify(&audio, &frames).unwrap().probs(), &oracle_classify(&audio, &frames), 1e-12));

    let table = EmbeddingTable::hashed(6, 9);
    let tokens: Vec<String> = "i went to the park".split(' ').map(String::from).collect();
    let lang = random_classifier(6, 2, false);
    let emb = embed_sequence(&table, &tokens);
    assert!(close(language_classify(&lang, &emb).unwrap().probs(), &oracle_classify(&lang, &emb), 1e-12));

    let vocab = Vocabulary::from_tokens(tokens.iter().take(3).cloned());
    let fused = disfluency_features(&vocab, &tokens, None).unwrap();
    assert!(fused.iter().all(|x| x[vocab.len()..] == [0.0; 4]));
    let dis = random_classifier(vocab.len() + 4, 3, false);
    assert!(close(disfluency_classify(&dis, &fused).unwrap().probs(), &oracle_classify(&dis, &fused), 1e-12));
}

fn scripted_block() -> DialogueBlock {
    let lines = [
        "i went to the park",
        "um the the weather was nice",
        "",
        "my daughter came to visit",
        "uh i forgot",
        "we had tea and cake",
    ];
    let mut t = 0.0;
    let pairs = lines
        .iter()
        .enumerate()
        .map(|(i, text)| {
            t += if text.is_empty() { 5.0 } else { 1.5 };
            let human = if text.is_empty() {
                Utterance::silence(t - 5.0, t).unwrap()
            } else {
                let u = Utterance::new(Speaker::Human, *text, t, t + 2.0).unwrap();
                t += 2.0;
                u
            };
            let robot = Utterance::new(Speaker::Robot, "that's nice", t, t + 1.0).unwrap();
            t += 1.0;
            make_turn_pair(human, robot, i).unwrap()
        })
        .collect();
    DialogueBlock::new(pairs, 0).unwrap()
}

#[test]
fn detect_block_equals_composed_oracle() {
    let block = scripted_block();
    let vocab = Vocabulary::from_tokens(["the", "i", "um", "park"].map(String::from));
    let table = EmbeddingTable::hashed(5, 4);
    let models = DetectorModels {
        audio: random_classifier(3, 11, true),
        language: random_classifier(5, 12, false),
        disfluency: random_classifier(vocab.len() + 4, 13, false),
        embeddings: table.clone(),
        vocab: vocab.clone(),
        interactivity: fixed_linear(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let acoustics: Vec<PairAcoustics> = block
        .pairs()
        .iter()
        .map(|p| {
            if p.human.is_silence() || p.index == 4 {
                PairAcoustics::text_only()
            } else {
                PairAcoustics::from_vector((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            }
        })
        .collect();
    let verdict = detect_block(&block, &models, &acoustics).unwrap();

    let uniform = vec![0.25; 4];
    let mut sums = [[0.0; 4]; 3];
    for (p, ac) in block.pairs().iter().zip(&acoustics) {
        let tokens = &p.human.tokens;
        let a = if ac.segments.is_empty() { uniform.clone() } else { oracle_classify(&models.audio, &ac.segments) };
        let (l, d) = if tokens.is_empty() {
            (uniform.clone(), uniform.clone())
        } else {
            let fused: Vec<Vec<f64>> = tokens
                .iter()
                .map(|t| {
                    let mut v = vec![0.0; vocab.len() + 4];
                    v[vocab.index_of(t)] = 1.0;
                    v
                })
                .collect();
            (
                oracle_classify(&models.language, &embed_sequence(&table, tokens)),
                oracle_classify(&models.disfluency, &fused),
            )
        };
        for k in 0..4 {
            sums[0][k] += a[k] / 6.0;
            sums[1][k] += l[k] / 6.0;
            sums[2][k] += d[k] / 6.0;
        }
    }
    for (kind, expected) in ClassifierKind::ALL.iter().zip(sums) {
        assert!(close(verdict.per_classifier[kind].probs(), &expected, 1e-12), "{kind:?}");
    }
    let features = compute_interactional_features(&block, &text_mode_pauses(&block, TEXT_PAUSE_MAX_S)).unwrap();
    assert_eq!(verdict.features, features);
    let inter = interactivity_classify(&fixed_linear(), &features);
    assert_eq!(verdict.per_classifier[&ClassifierKind::Interactivity], inter);
    let results: Vec<_> = ClassifierKind::ALL
        .iter()
        .map(|k| (verdict.per_classifier[k].argmax(), verdict.per_classifier[k]))
        .collect();
    assert_eq!((verdict.final_degree, verdict.tie_broken), oracle_vote(&results));
    assert!(verdict.is_consistent());
    assert_eq!(verdict.disfluencies.filler, 2);
    assert_eq!(verdict.disfluencies.repetition, 1);
    assert_eq!(detect_block(&block, &models, &acoustics).unwrap(), verdict);
}

//! One pass/fail line per primary acceptance criterion. Runs without the
//! libtest harness so the report stays one line per criterion.

mod support;

#[path = "../../core/tests/support/gru_oracle.rs"]
mod gru_oracle;
#[path = "../../core/tests/support/vote_oracle.rs"]
mod vote_oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use adscreen_core::detectors::{
    compute_interactional_features, stage1_average, stage2_vote, text_mode_pauses, ClassifierKind,
    TEXT_PAUSE_MAX_S,
};
use adscreen_core::dialogue::{
    make_turn_pair, normalize_distribution, DegreeDistribution, DiagnosisDegree, DialogueBlock, Speaker, Utterance,
};
use adscreen_core::listener::ResponseType;
use adscreen_core::neural::{gru_step, BiGruClassifier, GruCell, Matrix};
use adscreen_core::signal::{analyze, voice_activity, AudioBuffer, FrameSpec, ProsodyConfig, SILENCE_DB};
use adscreen_service::experiment::run_experiment;
use adscreen_service::medical_log::{read_medical_log, MedicalLogRecord, MedicalLogWriter};
use adscreen_service::server::Server;
use adscreen_service::session::{run_session, SessionEvent, SessionOutput, SessionResources, SessionRunner};
use adscreen_service::simulator::{generate_corpus, load_corpus, load_profiles, GenerateOptions};
use adscreen_service::training::{collect_acts, collect_blocks, train_models, TrainOptions, TrainTarget, TrainedModels};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::wire::{fast_config, table_one_client, wait_for_lines, Client};
use support::{config, repo_root, resources, table1_events, utterance, TABLE1_EXPECTED};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn actions(out: &[SessionOutput]) -> Vec<(ResponseType, String)> {
    out.iter()
        .filter_map(|o| match o {
            SessionOutput::Action(a) => Some((a.response_type, a.text.clone())),
            _ => None,
        })
        .collect()
}

fn table_one() -> Outcome {
    let res = resources();
    let out = run_session(&table1_events(), res).map_err(|e| e.to_string())?;
    let got = actions(&out);
    let want: Vec<_> = TABLE1_EXPECTED.iter().map(|(t, s)| (*t, s.to_string())).collect();
    ensure(got == want, || format!("got {got:?}"))?;
    let verdicts = out.iter().filter(|o| matches!(o, SessionOutput::Diagnosis(_))).count();
    ensure(verdicts == 1, || format!("{verdicts} verdicts"))?;
    Ok("six responses in order, one block verdict".into())
}

fn silence_timing() -> Outcome {
    let start = SessionEvent::Start {
        session_id: "timing".into(),
        clock_origin: 0.0,
    };
    let fresh = || -> Result<SessionRunner, String> {
        let mut r = SessionRunner::new(resources());
        r.handle(&start).map_err(|e| e.to_string())?;
        r.handle(&utterance("Yes, I like.", 9.0, 10.0)).map_err(|e| e.to_string())?;
        Ok(r)
    };
    let tick = |r: &mut SessionRunner, now: f64| -> Result<Vec<ResponseType>, String> {
        Ok(actions(&r.handle(&SessionEvent::Tick { now }).map_err(|e| e.to_string())?)
            .into_iter()
            .map(|a| a.0)
            .collect())
    };

    let mut r = fresh()?;
    ensure(tick(&mut r, 14.999)?.is_empty(), || "prompt before 5.0 s".into())?;
    let reply = actions(&r.handle(&utterance("I saw a movie", 14.0, 14.999)).map_err(|e| e.to_string())?);
    ensure(
        reply.len() == 1
            && !matches!(reply[0].0, ResponseType::FollowUpQuestion | ResponseType::TopicIntroduction),
        || format!("reply at 4.999 s drew {reply:?}"),
    )?;

    let mut r = fresh()?;
    let first = tick(&mut r, 15.0)?;
    ensure(first == [ResponseType::FollowUpQuestion], || format!("at 5.0 s: {first:?}"))?;
    ensure(tick(&mut r, 19.999)?.is_empty(), || "second prompt early".into())?;
    let second = tick(&mut r, 20.0)?;
    ensure(second == [ResponseType::TopicIntroduction], || format!("at 10.0 s: {second:?}"))?;
    Ok("4.999 s: none; 5.0 s: follow-up; 10.0 s: topic introduction".into())
}

fn random_seq(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..len).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn bigru() -> Outcome {
    // scalar cell, every weight 1, x = 1, h = 0.5
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let z = sig(1.5);
    let hand = 0.5 * (1.0 - z) + z * (1.0 + 0.5 * z).tanh();
    let mut cell = GruCell::zeros(1, 1);
    for m in [&mut cell.wz, &mut cell.uz, &mut cell.wr, &mut cell.ur, &mut cell.wh, &mut cell.uh] {
        m.data[0] = 1.0;
    }
    let h = gru_step(&cell, &[1.0], &[0.5]).map_err(|e| e.to_string())?[0];
    ensure((h - hand).abs() < 1e-12, || format!("scalar cell {h} vs {hand}"))?;

    let xs = vec![vec![0.5, -0.2, 0.1], vec![0.3, 0.8, -0.5], vec![-0.7, 0.4, 0.9]];
    let m = BiGruClassifier::random(3, 2, 4, 42);
    let states = m.forward_states(&xs).map_err(|e| e.to_string())?;
    let oracle = gru_oracle::states(&m, &xs);
    let frozen_probs = [0.26422626214963824, 0.2508442019242053, 0.24688382243524074, 0.23804571349091572];
    let probs = m.predict_proba(&xs).map_err(|e| e.to_string())?;
    let state_err = states.iter().flatten().zip(oracle.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let prob_err = probs.iter().zip(frozen_probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(state_err < 1e-12 && prob_err < 1e-12, || format!("seed-42 errors {state_err:e} / {prob_err:e}"))?;

    let mut worst: f64 = 0.0;
    for seed in [1u64, 2, 3, 42] {
        let mut m = BiGruClassifier::random(3, 4, 4, seed);
        for (_, t) in m.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= 8.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let batch: Vec<(Vec<Vec<f64>>, usize)> =
            (0..2).map(|i| (random_seq(&mut rng, 5, 3), (seed as usize + i) % 4)).collect();
        worst = worst.max(gru_oracle::max_gradient_error(&m, &batch, 1e-5));
    }
    ensure(worst < 1e-4, || format!("gradient relative error {worst:e}"))?;

    let mut m = BiGruClassifier::random(3, 4, 4, 7);
    m.head_w = Matrix::zeros(4, 8);
    m.head_b = vec![0.0; 4];
    let (loss, _) = m.loss_and_gradients(&[(&xs[..], 1)]).map_err(|e| e.to_string())?;
    ensure((loss - 4f64.ln()).abs() < 1e-9, || format!("uniform loss {loss}"))?;
    Ok(format!("max gradient rel err {worst:.2e} over 4 seeds; uniform loss ln 4"))
}

fn peaked(label: usize, salt: usize) -> DegreeDistribution {
    let mut p = [0.0; 4];
    let rest = [0.05, 0.1, 0.15][salt % 3];
    p[label] = 0.55;
    let others: Vec<usize> = (0..4).filter(|&k| k != label).collect();
    p[others[salt % 3]] = rest;
    p[others[(salt + 1) % 3]] = 0.45 - rest - 0.1;
    p[others[(salt + 2) % 3]] = 0.1;
    normalize_distribution(p).expect("valid distribution")
}

fn ensemble() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let close = |a: &DegreeDistribution, b: &DegreeDistribution| {
        a.probs().iter().zip(b.probs()).all(|(x, y)| (x - y).abs() <= 1e-9)
    };
    for _ in 0..1000 {
        let mut six: Vec<DegreeDistribution> = (0..6)
            .map(|_| normalize_distribution(std::array::from_fn(|_| rng.gen_range(0.0..1.0) + 1e-6)).unwrap())
            .collect();
        let avg = stage1_average(&six).map_err(|e| e.to_string())?;
        ensure((avg.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9, || "mass drift".into())?;
        let same = stage1_average(&[six[0]; 6]).map_err(|e| e.to_string())?;
        ensure(close(&same, &six[0]), || "not idempotent".into())?;
        six.shuffle(&mut rng);
        ensure(close(&stage1_average(&six).map_err(|e| e.to_string())?, &avg), || "order dependent".into())?;
    }
    let mut cases = 0;
    for salt in 0..3 {
        for code in 0..256usize {
            let pick = |i: usize| (code >> (2 * i)) & 3;
            let peaked_case: Vec<_> = (0..4).map(|i| peaked(pick(i), salt + i)).map(|d| (d.argmax(), d)).collect();
            let tied_case: Vec<_> = (0..4)
                .map(|i| DegreeDistribution::one_hot(DiagnosisDegree::ALL[pick(i)]))
                .map(|d| (d.argmax(), d))
                .collect();
            for case in [peaked_case, tied_case] {
                let ours = stage2_vote(&case).map_err(|e| e.to_string())?;
                let oracle = vote_oracle::oracle_vote(&case);
                ensure(ours == oracle, || format!("labels {code:08b}: {ours:?} vs {oracle:?}"))?;
                cases += 1;
            }
        }
    }
    Ok(format!("1000 sextets; {cases} vote cases over all 256 label combinations"))
}

fn block_from(humans: &[(f64, f64, usize)], robots: &[(f64, f64)]) -> DialogueBlock {
    let pairs = humans
        .iter()
        .zip(robots)
        .enumerate()
        .map(|(i, (&(a, b, words), &(c, d)))| {
            let h = Utterance::new(Speaker::Human, "w ".repeat(words), a, b).unwrap();
            let r = Utterance::new(Speaker::Robot, "ok", c, d).unwrap();
            make_turn_pair(h, r, i).unwrap()
        })
        .collect();
    DialogueBlock::new(pairs, 0).unwrap()
}

fn interactional() -> Outcome {
    // 6 replies of 10 words and 5 s; robot turns of 4,4,4,4,2,2 s; four
    // 2.5 s gaps before replies 2-5; one 7 s gap (not a pause) before reply 6
    let robot_len = [4.0, 4.0, 4.0, 4.0, 2.0, 2.0];
    let gaps = [0.0, 2.5, 2.5, 2.5, 2.5, 7.0];
    let (mut humans, mut robots, mut t) = (Vec::new(), Vec::new(), 0.0);
    for i in 0..6 {
        t += gaps[i];
        humans.push((t, t + 5.0, 10));
        t += 5.0;
        robots.push((t, t + robot_len[i]));
        t += robot_len[i];
    }
    let block = block_from(&humans, &robots);
    let pauses = text_mode_pauses(&block, TEXT_PAUSE_MAX_S);
    let f = compute_interactional_features(&block, &pauses).map_err(|e| e.to_string())?.to_array();
    let want = [10.0, 0.6, 15.0, 0.75, 90.0];
    let err = f.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(pauses.len() == 4 && err <= 1e-12, || format!("{} pauses, features {f:?}", pauses.len()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..500 {
        let (mut humans, mut robots, mut t) = (Vec::new(), Vec::new(), 0.0);
        for _ in 0..6 {
            t += rng.gen_range(0.0..8.0);
            let d = rng.gen_range(0.3..6.0);
            humans.push((t, t + d, rng.gen_range(1..15)));
            t += d;
            let r = rng.gen_range(0.5..4.0);
            robots.push((t, t + r));
            t += r;
        }
        let block = block_from(&humans, &robots);
        let shifted = block.shifted(rng.gen_range(-100.0..10_000.0));
        let a = compute_interactional_features(&block, &text_mode_pauses(&block, TEXT_PAUSE_MAX_S)).unwrap();
        let b = compute_interactional_features(&shifted, &text_mode_pauses(&shifted, TEXT_PAUSE_MAX_S)).unwrap();
        let drift = a.to_array().iter().zip(b.to_array()).map(|(x, y)| (x - y).abs() / x.abs().max(1.0)).fold(0.0, f64::max);
        ensure(drift <= 1e-9, || format!("shift changed features by {drift:e}"))?;
    }
    Ok(format!("worked block max error {err:.1e}; 500 fuzzed blocks shift-invariant"))
}

fn sine(f0: f64, sr: u32, secs: f64) -> AudioBuffer {
    let n = (f64::from(sr) * secs) as usize;
    AudioBuffer::new(
        (0..n).map(|k| 0.5 * (2.0 * std::f64::consts::PI * f0 * k as f64 / f64::from(sr)).sin()).collect(),
        sr,
    )
}

fn dsp() -> Outcome {
    let spec = FrameSpec::default();
    let cfg = ProsodyConfig::default();
    let mut worst: f64 = 0.0;
    let mut min_stability: f64 = 1.0;
    for f0 in [100.0, 150.0, 220.0, 300.0] {
        let a = analyze(&sine(f0, 16_000, 0.5), &spec, &cfg).map_err(|e| e.to_string())?;
        for (i, p) in a.prosody.iter().enumerate() {
            ensure(p.voiced, || format!("{f0} Hz frame {i} unvoiced"))?;
            worst = worst.max((p.f0_hz - f0).abs());
            if i > 0 {
                min_stability = min_stability.min(p.stability);
            }
        }
    }
    ensure(worst <= 5.0, || format!("F0 error {worst} Hz"))?;
    ensure(min_stability >= 0.99, || format!("stability {min_stability}"))?;
    let quiet = analyze(&AudioBuffer::new(vec![0.0; 8000], 16_000), &spec, &cfg).map_err(|e| e.to_string())?;
    ensure(
        quiet.prosody.iter().all(|p| p.intensity_db == SILENCE_DB && p.intensity_db < cfg.vad_threshold_db),
        || "silence not at the floor".into(),
    )?;
    ensure(!voice_activity(&[0.0; 400], cfg.vad_threshold_db), || "VAD active on silence".into())?;
    Ok(format!("max F0 error {worst:.2} Hz; min stability {min_stability:.4}; silence at {SILENCE_DB} dBFS"))
}

fn end_to_end() -> Outcome {
    let profiles: Vec<_> = load_profiles(repo_root().join("data/profiles.toml"))
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|p| matches!(p.label, DiagnosisDegree::NonAd | DiagnosisDegree::Severe))
        .collect();
    let (non_ad, severe) = (&profiles[0], &profiles[1]);
    ensure(
        non_ad.speaking_rate_wpm.mean == 140.0
            && severe.speaking_rate_wpm.mean == 70.0
            && non_ad.filler_rate == 0.02
            && severe.filler_rate == 0.25
            && non_ad.silence_prob == 0.0
            && severe.silence_prob == 0.4,
        || "shipped profiles drifted from the criterion".into(),
    )?;
    let opts = GenerateOptions {
        pseudo_audio: true,
        ..GenerateOptions::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let err = |e: adscreen_service::ServiceError| e.to_string();
    generate_corpus(&profiles, 50, 1, &opts, dir.path().join("train")).map_err(err)?;
    generate_corpus(&profiles, 50, 2, &opts, dir.path().join("held_out")).map_err(err)?;
    let train_set = load_corpus(dir.path().join("train")).map_err(err)?;
    let held_out = load_corpus(dir.path().join("held_out")).map_err(err)?;
    let base = SessionResources::load(&config()).map_err(err)?;
    let blocks = collect_blocks(&train_set, &Arc::new(base.clone())).map_err(err)?;
    let start = TrainedModels {
        detectors: base.models.clone(),
        dialogue_act: None,
    };
    let (trained, _) = train_models(&blocks, &collect_acts(&train_set), start, &TrainTarget::ALL, &TrainOptions::default())
        .map_err(err)?;
    let report = run_experiment(&held_out, &Arc::new(base.with_trained(&trained))).map_err(err)?;
    ensure(report.sessions == 100 && report.blocks == 100, || format!("{} blocks", report.blocks))?;
    let per: Vec<String> = ClassifierKind::ALL
        .iter()
        .map(|k| format!("{} {:.2}", k.as_str(), report.per_classifier[k]))
        .collect();
    ensure(report.accuracy >= 0.90, || format!("accuracy {:.3}", report.accuracy))?;
    ensure(report.per_classifier.values().all(|&a| a >= 0.60), || format!("per classifier {per:?}"))?;
    Ok(format!("held-out accuracy {:.2}; {}", report.accuracy, per.join(", ")))
}

fn service_robustness() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    rt.block_on(async {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let log_path = dir.path().join("medical.jsonl");
        let cfg = fast_config();
        let writer = MedicalLogWriter::spawn(&log_path);
        let res = Arc::new(SessionResources::load(&cfg).map_err(|e| e.to_string())?);
        let server = Server::start(&cfg, res, writer.sender()).await.map_err(|e| e.to_string())?;
        let (a, b) = tokio::join!(
            async { table_one_client(Client::tcp(&server).await, "first").await },
            async { table_one_client(Client::tcp(&server).await, "second").await },
        );
        let want: Vec<_> = TABLE1_EXPECTED.iter().map(|(t, s)| (*t, s.to_string())).collect();
        ensure(a.1 == want && b.1 == want, || "a client saw the wrong responses".into())?;
        ensure(a.0 != b.0, || "session ids collide".into())?;
        let records = wait_for_lines(&log_path, 4).await;
        let text = std::fs::read_to_string(&log_path).map_err(|e| e.to_string())?;
        let lines: Vec<&str> = text.lines().collect();
        ensure(lines.len() == 4 && text.ends_with('\n'), || format!("{} log lines", lines.len()))?;
        ensure(
            lines.iter().all(|l| MedicalLogRecord::parse_line(l).is_ok()),
            || "schema-invalid log line".into(),
        )?;
        for id in [&a.0, &b.0] {
            let kinds: Vec<_> = records
                .iter()
                .filter(|r| r.session_id() == id.as_str())
                .map(|r| matches!(r, MedicalLogRecord::Block(_)))
                .collect();
            ensure(kinds == [true, false], || format!("session {id} records {kinds:?}"))?;
        }
        ensure(read_medical_log(&log_path).is_ok(), || "log unreadable".into())?;
        server.stop().await;
        Ok("2 concurrent clients, 3 malformed lines each, 4 intact log lines".to_string())
    })
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        ("table-1 scenario", table_one, Duration::from_secs(1)),
        ("silence timing", silence_timing, Duration::from_secs(5)),
        ("bi-gru correctness", bigru, Duration::from_secs(10)),
        ("ensemble algebra", ensemble, Duration::from_secs(5)),
        ("interactional features", interactional, Duration::from_secs(5)),
        ("dsp", dsp, Duration::from_secs(5)),
        ("end-to-end synthetic separation", end_to_end, Duration::from_secs(300)),
        ("service robustness", service_robustness, Duration::from_secs(60)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = t.elapsed();
        let outcome = outcome.and_then(|d| {
            if elapsed <= limit {
                Ok(d)
            } else {
                Err(format!("{d}; took {elapsed:.2?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS  {name:<32} {elapsed:>9.2?} / {limit:?}  {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<32} {elapsed:>9.2?} / {limit:?}  {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use adscreen_core::signal::{analyze, load_wav, FrameSpec, ProsodyConfig};
use adscreen_service::config::ServiceConfig;
use adscreen_service::experiment::{run_experiment, write_report};
use adscreen_service::medical_log::MedicalLogWriter;
use adscreen_service::session::{SessionEvent, SessionOutput, SessionResources, SessionRunner};
use adscreen_service::simulator::{generate_corpus, load_corpus, load_profiles, GenerateOptions, DEFAULT_PAIRS};
use adscreen_service::training::{
    collect_acts, collect_blocks, train_models, TrainOptions, TrainTarget, TrainedModels, REPORT_FILE,
};
use adscreen_service::ServiceError;
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "adscreen", version, about = "Conversational dementia screening service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the NDJSON/TCP and WebSocket servers until interrupted.
    Serve {
        #[arg(long, default_value = "adscreen.toml")]
        config: PathBuf,
        /// Overrides the configured TCP port. WebSocket listens on port + 1.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Talk to the listener from the terminal with a real clock.
    Chat {
        #[arg(long, default_value = "adscreen.toml")]
        config: PathBuf,
    },
    /// Generate a labeled corpus of scripted sessions.
    Simulate {
        #[arg(long)]
        profiles: PathBuf,
        /// Sessions per profile.
        #[arg(long)]
        sessions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Attach synthetic audio to every reply.
        #[arg(long)]
        pseudo_audio: bool,
        #[arg(long, default_value_t = DEFAULT_PAIRS)]
        pairs: usize,
    },
    /// Train detectors on a simulated corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// audio, language, disfluency, interactivity, dialogue_act or all
        #[arg(long, default_value = "all")]
        classifier: String,
        #[arg(long, default_value_t = TrainOptions::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = TrainOptions::default().seed)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "adscreen.toml")]
        config: PathBuf,
    },
    /// Replay a held-out corpus and score the block verdicts.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "adscreen.toml")]
        config: PathBuf,
    },
    /// Extract acoustic features from a WAV file.
    Features {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "adscreen.toml")]
        config: PathBuf,
    },
}

/// A missing default config falls back to built-in defaults rooted at the
/// working directory.
fn load_config(path: &Path) -> Result<ServiceConfig, ServiceError> {
    if path.exists() {
        return ServiceConfig::load(path);
    }
    if path != Path::new("adscreen.toml") {
        return Err(ServiceError::Config(format!("{}: no such file", path.display())));
    }
    log::warn!("adscreen.toml not found, using defaults");
    let mut cfg = ServiceConfig::from_toml_with_env("", std::env::vars())?;
    cfg.resolve_paths(Path::new("."));
    Ok(cfg)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<(), ServiceError> {
    match command {
        Command::Serve { config, port } => {
            let mut cfg = load_config(&config)?;
            if let Some(p) = port {
                cfg.port = p;
            }
            tokio::runtime::Runtime::new()?.block_on(adscreen_service::server::serve(cfg))
        }
        Command::Chat { config } => chat(load_config(&config)?),
        Command::Simulate {
            profiles,
            sessions,
            seed,
            out,
            pseudo_audio,
            pairs,
        } => {
            let profiles = load_profiles(&profiles)?;
            let opts = GenerateOptions {
                n_pairs: pairs,
                pseudo_audio,
                ..GenerateOptions::default()
            };
            let rows = generate_corpus(&profiles, sessions, seed, &opts, &out)?;
            println!("wrote {} sessions to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Train {
            corpus,
            classifier,
            epochs,
            seed,
            out,
            config,
        } => {
            let targets = TrainTarget::parse_set(&classifier)?;
            let mut cfg = load_config(&config)?;
            cfg.models_dir = None;
            let base = SessionResources::load(&cfg)?;
            let start = if out.join("detectors.json").exists() {
                log::info!("continuing from models in {}", out.display());
                TrainedModels::load(&out)?
            } else {
                TrainedModels {
                    detectors: base.models.clone(),
                    dialogue_act: None,
                }
            };
            let corpus = load_corpus(&corpus)?;
            let blocks = collect_blocks(&corpus, &Arc::new(base))?;
            let opts = TrainOptions {
                epochs,
                seed,
                ..TrainOptions::default()
            };
            let (trained, report) = train_models(&blocks, &collect_acts(&corpus), start, &targets, &opts)?;
            std::fs::create_dir_all(&out)?;
            trained.save(&out)?;
            let text = serde_json::to_string_pretty(&report).expect("reports serialize");
            std::fs::write(out.join(REPORT_FILE), text + "\n")?;
            println!("trained {} target(s) on {} blocks into {}", report.targets.len(), report.blocks, out.display());
            Ok(())
        }
        Command::Eval {
            corpus,
            models,
            report,
            config,
        } => {
            let mut cfg = load_config(&config)?;
            if !models.join("detectors.json").exists() {
                return Err(ServiceError::Config(format!("{}: no detectors.json", models.display())));
            }
            cfg.models_dir = Some(models);
            let res = Arc::new(SessionResources::load(&cfg)?);
            let result = run_experiment(&load_corpus(&corpus)?, &res)?;
            write_report(&result, &report)?;
            println!(
                "{} sessions, {} blocks, accuracy {:.3}",
                result.sessions, result.blocks, result.accuracy
            );
            Ok(())
        }
        Command::Features { wav, out, config } => {
            let cfg = load_config(&config)?;
            let audio_err = |e: adscreen_core::signal::SignalError| ServiceError::Audio(format!("{}: {e}", wav.display()));
            let buf = load_wav(&wav).map_err(audio_err)?;
            let prosody = ProsodyConfig {
                vad_threshold_db: cfg.vad_threshold_db,
                ..ProsodyConfig::default()
            };
            let analysis = analyze(&buf, &FrameSpec::default(), &prosody).map_err(audio_err)?;
            let doc = json!({
                "sample_rate": buf.sample_rate,
                "duration_s": buf.duration_s(),
                "frames": analysis.frame_count(),
                "vector": analysis.vector().values,
                "segment_s": cfg.audio_segment_s,
                "segments": analysis
                    .segment_vectors(cfg.audio_segment_s)
                    .into_iter()
                    .map(|v| v.values)
                    .collect::<Vec<_>>(),
                "pauses": analysis.pauses(cfg.vad_threshold_db, cfg.pause_min_s),
                "prosody": analysis.prosody,
            });
            std::fs::write(&out, serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
            println!("{} frames from {}", analysis.frame_count(), wav.display());
            Ok(())
        }
    }
}

fn chat(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let res = Arc::new(SessionResources::load(&cfg)?);
    let writer = MedicalLogWriter::spawn(&cfg.medical_log);
    let log = writer.sender();
    let mut runner = SessionRunner::new(res);
    let origin = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let session_id = format!("chat-{}", (origin * 1000.0) as u64);
    let clock = Instant::now();
    let now = || clock.elapsed().as_secs_f64();

    let (tx, rx) = mpsc::channel::<String>();
    std::thread::spawn(move || {
        for line in std::io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });

    println!("session {session_id}. Type to talk, /quit or end of input to stop.");
    let emit = |outputs: Vec<SessionOutput>| {
        for out in outputs {
            match out {
                SessionOutput::Action(a) => println!("robot [{}] {}", a.response_type.as_str(), a.text),
                SessionOutput::Diagnosis(v) => println!(
                    "-- block {} verdict: {} (votes {:?})",
                    v.block_index,
                    v.final_degree.as_str(),
                    v.votes.map(|d| d.as_str())
                ),
                SessionOutput::Log(rec) => {
                    let _ = log.send(rec);
                }
                SessionOutput::SilenceWatch { .. } => {}
            }
        }
    };
    emit(runner.handle(&SessionEvent::Start {
        session_id,
        clock_origin: origin,
    })?);
    let tick = Duration::from_millis(cfg.tick_ms);
    loop {
        match rx.recv_timeout(tick) {
            Ok(line) if line.trim() == "/quit" => break,
            Ok(line) if line.trim().is_empty() => {}
            Ok(line) => {
                let event = SessionEvent::Utterance {
                    text: line,
                    t_start: None,
                    t_end: None,
                    arrival: now(),
                    audio: None,
                    utterance_id: None,
                };
                match runner.handle(&event) {
                    Ok(outputs) => emit(outputs),
                    Err(e) => eprintln!("! {e}"),
                }
            }
            Err(mpsc::RecvTimeoutError::Timeout) => emit(runner.handle(&SessionEvent::Tick { now: now() })?),
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
    }
    emit(runner.handle(&SessionEvent::End { at: now() })?);
    drop(log);
    writer.close();
    Ok(())
}

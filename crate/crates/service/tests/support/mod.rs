#![allow(dead_code)]

pub mod wire;

use std::path::PathBuf;
use std::sync::Arc;

use adscreen_core::listener::ResponseType;
use adscreen_service::config::ServiceConfig;
use adscreen_service::session::{SessionEvent, SessionResources};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Shipped fixtures, untrained detectors.
pub fn config() -> ServiceConfig {
    let mut cfg = ServiceConfig {
        models_dir: None,
        ..ServiceConfig::default()
    };
    cfg.resolve_paths(&repo_root());
    cfg
}

pub fn resources() -> Arc<SessionResources> {
    Arc::new(SessionResources::load(&config()).expect("fixtures load"))
}

pub fn utterance(text: &str, t_start: f64, t_end: f64) -> SessionEvent {
    SessionEvent::Utterance {
        text: text.into(),
        t_start: Some(t_start),
        t_end: Some(t_end),
        arrival: t_end,
        audio: None,
        utterance_id: None,
    }
}

pub fn table1_events() -> Vec<SessionEvent> {
    vec![
        SessionEvent::Start {
            session_id: "table-1".into(),
            clock_origin: 1_700_000_000.0,
        },
        utterance("How is the weather?", 1.0, 2.0),
        utterance("OK, I'll watch a movie then.", 4.0, 6.0),
        utterance("Avengers, the newest one.", 8.0, 10.0),
        SessionEvent::Tick { now: 15.0 },
        SessionEvent::Tick { now: 20.0 },
        utterance("Yes, I like.", 21.0, 22.0),
        SessionEvent::End { at: 23.0 },
    ]
}

pub const TABLE1_EXPECTED: [(ResponseType, &str); 6] = [
    (ResponseType::Answer, "It's raining outside."),
    (ResponseType::QuestionOnFocus, "Which movie?"),
    (ResponseType::PartialRepeat, "Avengers?"),
    (ResponseType::FollowUpQuestion, "What's your favorite movie?"),
    (ResponseType::TopicIntroduction, "Do you like music?"),
    (ResponseType::FormulaicResponse, "That's good."),
];

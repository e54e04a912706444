//! Held-out evaluation: replay labeled sessions through the live session
//! loop and score the block verdicts against the session labels.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use adscreen_core::detectors::ClassifierKind;
use adscreen_core::dialogue::DiagnosisDegree;
use serde::{Deserialize, Serialize};

use crate::session::{replay, SessionResources};
use crate::simulator::{ManifestRow, ScriptedSession};
use crate::training::par_map;
use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub sessions: usize,
    pub blocks: usize,
    /// Share of blocks whose final verdict equals the session label.
    pub accuracy: f64,
    /// Rows are true labels, columns final verdicts, both in degree order.
    pub confusion: [[usize; 4]; 4],
    /// Share of blocks where the classifier's own vote equals the label.
    pub per_classifier: BTreeMap<ClassifierKind, f64>,
    pub tie_broken_blocks: usize,
    pub sessions_per_label: BTreeMap<DiagnosisDegree, usize>,
}

struct Scored {
    label: DiagnosisDegree,
    finals: Vec<DiagnosisDegree>,
    votes: Vec<[DiagnosisDegree; 4]>,
    ties: usize,
}

pub fn run_experiment(
    corpus: &[(ManifestRow, ScriptedSession)],
    resources: &Arc<SessionResources>,
) -> Result<ExperimentReport, ServiceError> {
    let scored = par_map(corpus, |(row, session)| {
        let (runner, _) = replay(&session.events, resources.clone())?;
        let v = runner.verdicts();
        Ok(Scored {
            label: row.label,
            finals: v.iter().map(|v| v.final_degree).collect(),
            votes: v.iter().map(|v| v.votes).collect(),
            ties: v.iter().filter(|v| v.tie_broken).count(),
        })
    })?;

    let mut confusion = [[0usize; 4]; 4];
    let mut classifier_hits = [0usize; 4];
    let mut sessions_per_label = BTreeMap::new();
    let (mut blocks, mut hits, mut ties) = (0, 0, 0);
    for s in &scored {
        *sessions_per_label.entry(s.label).or_insert(0) += 1;
        ties += s.ties;
        for (f, votes) in s.finals.iter().zip(&s.votes) {
            blocks += 1;
            confusion[s.label.index()][f.index()] += 1;
            hits += usize::from(*f == s.label);
            for (k, v) in votes.iter().enumerate() {
                classifier_hits[k] += usize::from(*v == s.label);
            }
        }
    }
    let share = |n: usize| if blocks == 0 { 0.0 } else { n as f64 / blocks as f64 };
    Ok(ExperimentReport {
        sessions: scored.len(),
        blocks,
        accuracy: share(hits),
        confusion,
        per_classifier: ClassifierKind::ALL
            .iter()
            .zip(classifier_hits)
            .map(|(k, n)| (*k, share(n)))
            .collect(),
        tie_broken_blocks: ties,
        sessions_per_label,
    })
}

pub fn write_report(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<(), ServiceError> {
    let text = serde_json::to_string_pretty(report).expect("reports serialize");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

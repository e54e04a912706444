//! Reference plurality vote over (votes, summed probability, severity),
//! with the tie flag raised by tied votes or any flat-topped input.

#![allow(dead_code)]

use adscreen_core::dialogue::{DegreeDistribution, DiagnosisDegree};

/// Reference vote: rank labels by (votes, summed mass, severity).
pub fn oracle_vote(results: &[(DiagnosisDegree, DegreeDistribution)]) -> (DiagnosisDegree, bool) {
    let mut votes = [0; 4];
    let mut mass = [0.0; 4];
    for (l, d) in results {
        votes[l.index()] += 1;
        for k in 0..4 {
            mass[k] += d.probs()[k];
        }
    }
    let top = *votes.iter().max().unwrap();
    let tied = votes.iter().filter(|&&v| v == top).count() > 1;
    let mut best = None;
    for k in 0..4 {
        if votes[k] != top {
            continue;
        }
        let key = (mass[k], k);
        best = match best {
            None => Some(key),
            Some(b) if key.0 > b.0 || (key.0 == b.0 && key.1 > b.1) => Some(key),
            keep => keep,
        };
    }
    let flat = results.iter().any(|(_, d)| {
        let m = d.probs().iter().cloned().fold(f64::MIN, f64::max);
        d.probs().iter().filter(|&&p| p == m).count() > 1
    });
    (DiagnosisDegree::ALL[best.unwrap().1], tied || flat)
}

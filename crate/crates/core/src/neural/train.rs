use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BiGruClassifier, NeuralError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub xs: Vec<Vec<f64>>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient L2 norm is clipped to this value.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 8,
            seed: 42,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NeuralError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NeuralError::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(NeuralError::InvalidConfig("clip norm must be positive".into()));
        }
        Ok(())
    }
}

fn dataset_loss(model: &BiGruClassifier, dataset: &[Example]) -> Result<f64, NeuralError> {
    let batch: Vec<(&[Vec<f64>], usize)> =
        dataset.iter().map(|e| (&e.xs[..], e.label)).collect();
    let mut total = 0.0;
    for &(xs, label) in &batch {
        let p = model.predict_proba(xs)?;
        if label >= p.len() {
            return Err(NeuralError::BadLabel {
                label,
                classes: p.len(),
            });
        }
        total -= p[label].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / batch.len() as f64)
}

/// Mini-batch gradient descent with per-epoch shuffling and gradient-norm
/// clipping. Returns the trained model and the full-dataset mean loss after
/// each epoch.
pub fn train(
    model: &BiGruClassifier,
    dataset: &[Example],
    cfg: &TrainConfig,
) -> Result<(BiGruClassifier, Vec<f64>), NeuralError> {
    if dataset.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    cfg.validate()?;
    model.validate()?;
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[Vec<f64>], usize)> = chunk
                .iter()
                .map(|&i| (&dataset[i].xs[..], dataset[i].label))
                .collect();
            let (_, grads) = model.loss_and_gradients(&batch)?;
            let norm = grads.l2_norm();
            let scale = if norm > cfg.clip_norm {
                cfg.clip_norm / norm
            } else {
                1.0
            };
            model.axpy(-cfg.learning_rate * scale, &grads);
        }
        history.push(dataset_loss(&model, dataset)?);
    }
    Ok((model, history))
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn accuracy(model: &BiGruClassifier, dataset: &[Example]) -> Result<f64, NeuralError> {
    if dataset.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    let mut hits = 0;
    for e in dataset {
        let p = model.predict_proba(&e.xs)?;
        let best = p
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if *v > p[b] { i } else { b });
        if best == e.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}

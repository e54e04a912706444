use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gru::{GruCell, StepCache};
use super::{softmax, Matrix, NeuralError};
use crate::dialogue::DegreeDistribution;

/// Half-width of the uniform initialization range.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiGruClassifier {
    pub forward: GruCell,
    pub backward: GruCell,
    /// `num_classes x 2H`, applied to forward-final ⊕ backward-final.
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
    /// Seed the parameters were initialized from.
    pub seed: u64,
}

struct SequenceCache {
    forward: Vec<StepCache>,
    backward: Vec<StepCache>,
    pooled: Vec<f64>,
    probs: Vec<f64>,
}

impl BiGruClassifier {
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            forward: GruCell::zeros(input_dim, hidden_dim),
            backward: GruCell::zeros(input_dim, hidden_dim),
            head_w: Matrix::zeros(num_classes, 2 * hidden_dim),
            head_b: vec![0.0; num_classes],
            seed: 0,
        }
    }

    /// Every parameter drawn uniformly from [-0.08, 0.08] with ChaCha8 seeded
    /// by `seed`, in the order of [`Self::tensors`].
    pub fn random(input_dim: usize, hidden_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut model = Self::zeros(input_dim, hidden_dim, num_classes);
        model.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.forward.randomize(&mut rng, INIT_SCALE);
        model.backward.randomize(&mut rng, INIT_SCALE);
        for v in model.head_w.data.iter_mut().chain(model.head_b.iter_mut()) {
            *v = rand::Rng::gen_range(&mut rng, -INIT_SCALE..=INIT_SCALE);
        }
        model
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head_b.len()
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        self.forward.check_shapes()?;
        self.backward.check_shapes()?;
        let (d, h, c) = (self.input_dim(), self.hidden_dim(), self.num_classes());
        if self.backward.input_dim() != d || self.backward.hidden_dim() != h {
            return Err(NeuralError::ShapeMismatch(
                "forward and backward cells differ in shape".into(),
            ));
        }
        if self.head_w.rows != c || self.head_w.cols != 2 * h || self.head_w.data.len() != c * 2 * h
        {
            return Err(NeuralError::ShapeMismatch(format!(
                "head must be {c}x{}",
                2 * h
            )));
        }
        if c == 0 {
            return Err(NeuralError::ShapeMismatch("no output classes".into()));
        }
        let finite = self
            .tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(NeuralError::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Named parameter tensors: `forward.*`, `backward.*`, `head_w`, `head_b`.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        out.extend(self.forward.tensors().into_iter().map(|(n, t)| (format!("forward.{n}"), t)));
        out.extend(self.backward.tensors().into_iter().map(|(n, t)| (format!("backward.{n}"), t)));
        out.push(("head_w".into(), &self.head_w.data[..]));
        out.push(("head_b".into(), &self.head_b[..]));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        out.extend(
            self.forward
                .tensors_mut()
                .into_iter()
                .map(|(n, t)| (format!("forward.{n}"), t)),
        );
        out.extend(
            self.backward
                .tensors_mut()
                .into_iter()
                .map(|(n, t)| (format!("backward.{n}"), t)),
        );
        out.push(("head_w".into(), &mut self.head_w.data[..]));
        out.push(("head_b".into(), &mut self.head_b[..]));
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.input_dim(), self.hidden_dim(), self.num_classes());
        z.seed = self.seed;
        z
    }

    fn check_input(&self, xs: &[Vec<f64>]) -> Result<(), NeuralError> {
        if xs.is_empty() {
            return Err(NeuralError::EmptySequence);
        }
        let d = self.input_dim();
        if let Some(bad) = xs.iter().find(|x| x.len() != d) {
            return Err(NeuralError::ShapeMismatch(format!(
                "input vectors must have dim {d}, got {}",
                bad.len()
            )));
        }
        Ok(())
    }

    fn run(&self, xs: &[Vec<f64>]) -> SequenceCache {
        let h = self.hidden_dim();
        let mut state = vec![0.0; h];
        let mut forward = Vec::with_capacity(xs.len());
        for (t, x) in xs.iter().enumerate() {
            let c = self.forward.forward_cached(x, t, &state);
            state.clone_from(&c.h);
            forward.push(c);
        }
        let mut state = vec![0.0; h];
        let mut backward = Vec::with_capacity(xs.len());
        for (t, x) in xs.iter().enumerate().rev() {
            let c = self.backward.forward_cached(x, t, &state);
            state.clone_from(&c.h);
            backward.push(c);
        }
        let mut pooled = forward.last().expect("non-empty").h.clone();
        pooled.extend_from_slice(&backward.last().expect("non-empty").h);
        let mut logits = self.head_b.clone();
        self.head_w.mul_vec_add(&pooled, &mut logits);
        SequenceCache {
            forward,
            backward,
            pooled,
            probs: softmax(&logits),
        }
    }

    /// Per-step outputs `forward_t ⊕ backward_t`, each of length 2H.
    pub fn forward_states(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NeuralError> {
        self.check_input(xs)?;
        let cache = self.run(xs);
        let n = xs.len();
        Ok((0..n)
            .map(|t| {
                let mut v = cache.forward[t].h.clone();
                // backward cache is stored in reading order: position t was read at step n-1-t
                v.extend_from_slice(&cache.backward[n - 1 - t].h);
                v
            })
            .collect())
    }

    pub fn predict_proba(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, NeuralError> {
        self.check_input(xs)?;
        Ok(self.run(xs).probs)
    }

    /// Four-class distribution over diagnosis degrees.
    pub fn classify(&self, xs: &[Vec<f64>]) -> Result<DegreeDistribution, NeuralError> {
        if self.num_classes() != 4 {
            return Err(NeuralError::ShapeMismatch(format!(
                "classify needs 4 classes, model has {}",
                self.num_classes()
            )));
        }
        let p = self.predict_proba(xs)?;
        let mut probs = [p[0], p[1], p[2], p[3]];
        // absorb rounding so the mass check holds exactly
        let mass: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|v| *v /= mass);
        DegreeDistribution::new(probs).map_err(|e| NeuralError::ShapeMismatch(e.to_string()))
    }

    /// Mean cross-entropy over `batch` and its gradient for every parameter.
    pub fn loss_and_gradients(
        &self,
        batch: &[(&[Vec<f64>], usize)],
    ) -> Result<(f64, BiGruClassifier), NeuralError> {
        if batch.is_empty() {
            return Err(NeuralError::EmptyBatch);
        }
        let mut grads = self.zeros_like();
        let mut loss = 0.0;
        let h = self.hidden_dim();
        for &(xs, label) in batch {
            self.check_input(xs)?;
            if label >= self.num_classes() {
                return Err(NeuralError::BadLabel {
                    label,
                    classes: self.num_classes(),
                });
            }
            let cache = self.run(xs);
            loss -= cache.probs[label].max(f64::MIN_POSITIVE).ln();

            let mut dlogits = cache.probs.clone();
            dlogits[label] -= 1.0;
            grads.head_w.add_outer(&dlogits, &cache.pooled);
            grads.head_b.iter_mut().zip(&dlogits).for_each(|(g, d)| *g += d);
            let mut dpooled = vec![0.0; 2 * h];
            self.head_w.tmul_vec_add(&dlogits, &mut dpooled);

            let mut dh = dpooled[..h].to_vec();
            for c in cache.forward.iter().rev() {
                dh = self.forward.backward_step(c, &xs[c.x_index], &dh, &mut grads.forward);
            }
            let mut dh = dpooled[h..].to_vec();
            for c in cache.backward.iter().rev() {
                dh = self.backward.backward_step(c, &xs[c.x_index], &dh, &mut grads.backward);
            }
        }
        let scale = 1.0 / batch.len() as f64;
        for (_, t) in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= scale);
        }
        Ok((loss * scale, grads))
    }

    /// `self += step * other`, tensor by tensor.
    pub fn axpy(&mut self, step: f64, other: &BiGruClassifier) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += step * s);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-dimension affine input scaling fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and standard deviation over every step of every sequence.
    /// Near-constant dimensions get unit scale.
    pub fn fit<'a, I>(sequences: I, dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a [Vec<f64>]>,
    {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for seq in sequences {
            for x in seq {
                n += 1;
                for (i, v) in x.iter().enumerate().take(dim) {
                    sum[i] += v;
                    sq[i] += v * v;
                }
            }
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var.sqrt() < 1e-8 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_seq(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| self.apply(x)).collect()
    }
}

/// A network plus the input scaling it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceClassifier {
    pub net: BiGruClassifier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
}

impl SequenceClassifier {
    pub fn new(net: BiGruClassifier) -> Self {
        Self {
            net,
            standardizer: None,
        }
    }

    pub fn prepare(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match &self.standardizer {
            Some(s) => s.apply_seq(xs),
            None => xs.to_vec(),
        }
    }

    pub fn classify(&self, xs: &[Vec<f64>]) -> Result<DegreeDistribution, NeuralError> {
        self.net.classify(&self.prepare(xs))
    }

    pub fn predict_proba(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, NeuralError> {
        self.net.predict_proba(&self.prepare(xs))
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Matrix, NeuralError};

/// Parameters of one GRU direction: update gate (z), reset gate (r) and
/// candidate state (h), each with input weights `W*` (H x D), recurrent
/// weights `U*` (H x H) and bias `b*` (H).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub wz: Matrix,
    pub uz: Matrix,
    pub bz: Vec<f64>,
    pub wr: Matrix,
    pub ur: Matrix,
    pub br: Vec<f64>,
    pub wh: Matrix,
    pub uh: Matrix,
    pub bh: Vec<f64>,
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x_index: usize,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruCell {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let (d, h) = (input_dim, hidden_dim);
        Self {
            wz: Matrix::zeros(h, d),
            uz: Matrix::zeros(h, h),
            bz: vec![0.0; h],
            wr: Matrix::zeros(h, d),
            ur: Matrix::zeros(h, h),
            br: vec![0.0; h],
            wh: Matrix::zeros(h, d),
            uh: Matrix::zeros(h, h),
            bh: vec![0.0; h],
        }
    }

    pub(crate) fn randomize<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        for t in self.tensors_mut() {
            for v in t.1.iter_mut() {
                *v = rng.gen_range(-scale..=scale);
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.wz.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.wz.rows
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("wz", &self.wz.data[..]),
            ("uz", &self.uz.data[..]),
            ("bz", &self.bz[..]),
            ("wr", &self.wr.data[..]),
            ("ur", &self.ur.data[..]),
            ("br", &self.br[..]),
            ("wh", &self.wh.data[..]),
            ("uh", &self.uh.data[..]),
            ("bh", &self.bh[..]),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("wz", &mut self.wz.data[..]),
            ("uz", &mut self.uz.data[..]),
            ("bz", &mut self.bz[..]),
            ("wr", &mut self.wr.data[..]),
            ("ur", &mut self.ur.data[..]),
            ("br", &mut self.br[..]),
            ("wh", &mut self.wh.data[..]),
            ("uh", &mut self.uh.data[..]),
            ("bh", &mut self.bh[..]),
        ]
    }

    pub(crate) fn check_shapes(&self) -> Result<(), NeuralError> {
        let (d, h) = (self.input_dim(), self.hidden_dim());
        let ok = [&self.wz, &self.wr, &self.wh]
            .iter()
            .all(|m| m.rows == h && m.cols == d && m.data.len() == h * d)
            && [&self.uz, &self.ur, &self.uh]
                .iter()
                .all(|m| m.rows == h && m.cols == h && m.data.len() == h * h)
            && [&self.bz, &self.br, &self.bh].iter().all(|b| b.len() == h);
        if ok {
            Ok(())
        } else {
            Err(NeuralError::ShapeMismatch("inconsistent GRU cell shapes".into()))
        }
    }

    pub(crate) fn forward_cached(&self, x: &[f64], x_index: usize, h_prev: &[f64]) -> StepCache {
        let h = self.hidden_dim();
        let mut z = self.bz.clone();
        self.wz.mul_vec_add(x, &mut z);
        self.uz.mul_vec_add(h_prev, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = self.br.clone();
        self.wr.mul_vec_add(x, &mut r);
        self.ur.mul_vec_add(h_prev, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let gated: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut candidate = self.bh.clone();
        self.wh.mul_vec_add(x, &mut candidate);
        self.uh.mul_vec_add(&gated, &mut candidate);
        candidate.iter_mut().for_each(|v| *v = v.tanh());

        let out = (0..h)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * candidate[i])
            .collect();
        StepCache {
            x_index,
            h_prev: h_prev.to_vec(),
            z,
            r,
            candidate,
            h: out,
        }
    }

    /// Accumulates parameter gradients for one step into `grads` and returns
    /// the gradient with respect to `h_prev`.
    pub(crate) fn backward_step(
        &self,
        cache: &StepCache,
        x: &[f64],
        dh: &[f64],
        grads: &mut GruCell,
    ) -> Vec<f64> {
        let h = self.hidden_dim();
        let mut dh_prev: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - cache.z[i])).collect();

        let da_h: Vec<f64> = (0..h)
            .map(|i| dh[i] * cache.z[i] * (1.0 - cache.candidate[i] * cache.candidate[i]))
            .collect();
        let gated: Vec<f64> = (0..h).map(|i| cache.r[i] * cache.h_prev[i]).collect();
        grads.wh.add_outer(&da_h, x);
        grads.uh.add_outer(&da_h, &gated);
        grads.bh.iter_mut().zip(&da_h).for_each(|(g, d)| *g += d);
        let mut d_gated = vec![0.0; h];
        self.uh.tmul_vec_add(&da_h, &mut d_gated);
        for i in 0..h {
            dh_prev[i] += d_gated[i] * cache.r[i];
        }

        let da_z: Vec<f64> = (0..h)
            .map(|i| {
                dh[i] * (cache.candidate[i] - cache.h_prev[i]) * cache.z[i] * (1.0 - cache.z[i])
            })
            .collect();
        grads.wz.add_outer(&da_z, x);
        grads.uz.add_outer(&da_z, &cache.h_prev);
        grads.bz.iter_mut().zip(&da_z).for_each(|(g, d)| *g += d);
        self.uz.tmul_vec_add(&da_z, &mut dh_prev);

        let da_r: Vec<f64> = (0..h)
            .map(|i| d_gated[i] * cache.h_prev[i] * cache.r[i] * (1.0 - cache.r[i]))
            .collect();
        grads.wr.add_outer(&da_r, x);
        grads.ur.add_outer(&da_r, &cache.h_prev);
        grads.br.iter_mut().zip(&da_r).for_each(|(g, d)| *g += d);
        self.ur.tmul_vec_add(&da_r, &mut dh_prev);

        dh_prev
    }
}

/// One GRU step: `h = (1 - z) * h_prev + z * tanh(Wh x + Uh (r * h_prev) + bh)`.
pub fn gru_step(cell: &GruCell, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>, NeuralError> {
    cell.check_shapes()?;
    if x.len() != cell.input_dim() || h_prev.len() != cell.hidden_dim() {
        return Err(NeuralError::ShapeMismatch(format!(
            "cell is D={} H={}, got x of {} and h of {}",
            cell.input_dim(),
            cell.hidden_dim(),
            x.len(),
            h_prev.len()
        )));
    }
    Ok(cell.forward_cached(x, 0, h_prev).h)
}

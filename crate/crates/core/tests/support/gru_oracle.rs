//! Straight-line reference evaluation of the bidirectional GRU classifier and
//! central finite differences, written independently of the library's
//! matrix helpers and backpropagation code.

#![allow(dead_code)]

use adscreen_core::neural::{BiGruClassifier, GruCell};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(w: &[f64], rows: usize, cols: usize, v: &[f64], acc: &mut [f64]) {
    for r in 0..rows {
        let mut s = 0.0;
        for c in 0..cols {
            s += w[r * cols + c] * v[c];
        }
        acc[r] += s;
    }
}

pub fn step(cell: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
    let (hd, d) = (h.len(), x.len());
    let mut z = cell.bz.clone();
    affine(&cell.wz.data, hd, d, x, &mut z);
    affine(&cell.uz.data, hd, hd, h, &mut z);
    let mut r = cell.br.clone();
    affine(&cell.wr.data, hd, d, x, &mut r);
    affine(&cell.ur.data, hd, hd, h, &mut r);
    let z: Vec<f64> = z.into_iter().map(sig).collect();
    let r: Vec<f64> = r.into_iter().map(sig).collect();
    let rh: Vec<f64> = (0..hd).map(|i| r[i] * h[i]).collect();
    let mut c = cell.bh.clone();
    affine(&cell.wh.data, hd, d, x, &mut c);
    affine(&cell.uh.data, hd, hd, &rh, &mut c);
    (0..hd).map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i].tanh()).collect()
}

/// Per-position forward ⊕ backward states.
pub fn states(m: &BiGruClassifier, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let hd = m.forward.bz.len();
    let n = xs.len();
    let mut fw = Vec::new();
    let mut h = vec![0.0; hd];
    for x in xs {
        h = step(&m.forward, x, &h);
        fw.push(h.clone());
    }
    let mut bw = vec![Vec::new(); n];
    let mut h = vec![0.0; hd];
    for t in (0..n).rev() {
        h = step(&m.backward, &xs[t], &h);
        bw[t] = h.clone();
    }
    (0..n).map(|t| [fw[t].clone(), bw[t].clone()].concat()).collect()
}

pub fn probs(m: &BiGruClassifier, xs: &[Vec<f64>]) -> Vec<f64> {
    let hd = m.forward.bz.len();
    let s = states(m, xs);
    let pooled = [s[s.len() - 1][..hd].to_vec(), s[0][hd..].to_vec()].concat();
    let c = m.head_b.len();
    let mut logits = m.head_b.clone();
    affine(&m.head_w.data, c, 2 * hd, &pooled, &mut logits);
    let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

pub fn mean_loss(m: &BiGruClassifier, batch: &[(Vec<Vec<f64>>, usize)]) -> f64 {
    batch
        .iter()
        .map(|(xs, y)| -probs(m, xs)[*y].ln())
        .sum::<f64>()
        / batch.len() as f64
}

/// `|a - n| / max(|a|, |n|, 1e-6)`: relative error with an absolute floor
/// for gradients at round-off scale.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between analytic gradients and central
/// differences with step `eps`, over every parameter.
pub fn max_gradient_error(m: &BiGruClassifier, batch: &[(Vec<Vec<f64>>, usize)], eps: f64) -> f64 {
    let refs: Vec<(&[Vec<f64>], usize)> = batch.iter().map(|(x, y)| (&x[..], *y)).collect();
    let (_, grads) = m.loss_and_gradients(&refs).unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut probe = m.clone();
    let mut k = 0;
    let names: Vec<String> = m.tensors().iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let len = m.tensors().iter().find(|(n, _)| *n == name).unwrap().1.len();
        for i in 0..len {
            let orig = value(&probe, &name, i);
            set(&mut probe, &name, i, orig + eps);
            let up = mean_loss(&probe, batch);
            set(&mut probe, &name, i, orig - eps);
            let down = mean_loss(&probe, batch);
            set(&mut probe, &name, i, orig);
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[k], numeric));
            k += 1;
        }
    }
    worst
}

fn value(m: &BiGruClassifier, name: &str, i: usize) -> f64 {
    m.tensors().into_iter().find(|(n, _)| n == name).unwrap().1[i]
}

fn set(m: &mut BiGruClassifier, name: &str, i: usize, v: f64) {
    m.tensors_mut().into_iter().find(|(n, _)| n == name).unwrap().1[i] = v;
}

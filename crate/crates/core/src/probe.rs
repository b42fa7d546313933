//! Linear classification probe on frozen latents.
//!
//! Multinomial logistic regression, full-batch Adam, stratified 80/20 split.
//! Features are standardised with train-split statistics; constant columns
//! (including the zeroed coordinates of a masked representation) stay zero.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamState;
use crate::rng::rng_for;
use crate::tensor::Tensor;

pub const PROBE_EPOCHS: usize = 200;
pub const PROBE_LR: f64 = 1e-2;
pub const PROBE_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub representation: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// `confusion[true][predicted]` over the held-out split.
    pub confusion: Vec<Vec<usize>>,
}

impl ProbeReport {
    pub fn named(mut self, representation: impl Into<String>) -> Self {
        self.representation = representation.into();
        self
    }
}

/// Per-class stratified split: within each class a seeded shuffle, the first
/// `⌊0.8·n⌋` (at least one, leaving one for test when possible) go to train.
fn stratified_split(labels: &[usize], num_classes: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng_for(seed, "probe-split");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let mut k = ((n as f64) * PROBE_TRAIN_FRACTION).floor() as usize;
        k = k.max(1);
        if k == n && n > 1 {
            k = n - 1;
        }
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn rows(x: &Tensor<f64>, idx: &[usize]) -> Tensor<f64> {
    x.gather_rows(idx).expect("indices come from the same tensor")
}

fn softmax_rows(logits: &mut Tensor<f64>) {
    let c = logits.shape()[1];
    for row in logits.data_mut().chunks_mut(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

/// Area under the ROC curve via the Mann-Whitney statistic, ties averaged.
pub fn rank_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = (0..scores.len()).filter(|&k| positive[k]).map(|k| ranks[k]).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Trains the probe on `latents` (`[N×k]`) and reports held-out metrics.
pub fn train_probe(latents: &Tensor<f32>, labels: &[usize], num_classes: usize, seed: u64) -> Result<ProbeReport> {
    let (n, k) = latents.matrix_dims("probe")?;
    if n != labels.len() {
        return Err(Error::Shape(format!("probe: {n} latents but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::InvalidParameter(format!(
            "probe: label {bad} outside {num_classes} classes"
        )));
    }
    let mut present = vec![false; num_classes];
    for &l in labels {
        present[l] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InvalidParameter("probe needs at least two classes".into()));
    }
    if !latents.all_finite() {
        return Err(Error::NonFinite("probe latents".into()));
    }

    let x = latents.cast::<f64>();
    let (train_idx, test_idx) = stratified_split(labels, num_classes, seed);

    let x_train = rows(&x, &train_idx);
    let mut mean = vec![0.0; k];
    let mut std = vec![0.0; k];
    for r in x_train.data().chunks(k) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train_idx.len() as f64);
    for r in x_train.data().chunks(k) {
        for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in std.iter_mut() {
        *s = (*s / train_idx.len() as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let standardise = |t: Tensor<f64>| -> Tensor<f64> {
        let mut t = t;
        for r in t.data_mut().chunks_mut(k) {
            for ((v, m), s) in r.iter_mut().zip(&mean).zip(&std) {
                *v = (*v - m) / s;
            }
        }
        t
    };
    let x_train = standardise(x_train);
    let x_test = standardise(rows(&x, &test_idx));

    let nt = train_idx.len();
    let mut onehot = Tensor::zeros([nt, num_classes]);
    for (r, &i) in train_idx.iter().enumerate() {
        onehot.data_mut()[r * num_classes + labels[i]] = 1.0;
    }

    let mut w = Tensor::<f64>::zeros([k, num_classes]);
    let mut b = Tensor::<f64>::zeros([num_classes]);
    let mut opt = AdamState::<f64>::new(PROBE_LR);
    for _ in 0..PROBE_EPOCHS {
        let mut p = x_train.matmul(&w)?.add_row(&b)?;
        softmax_rows(&mut p);
        let d = p.sub(&onehot)?.scale(1.0 / nt as f64);
        let gw = x_train.matmul_tn(&d)?;
        let gb = d.sum_rows()?;
        opt.step(&mut [&mut w, &mut b], &[gw, gb])?;
    }

    let mut p = x_test.matmul(&w)?.add_row(&b)?;
    softmax_rows(&mut p);
    let truth: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (r, &t) in truth.iter().enumerate() {
        let row = p.row(r);
        // First maximum wins, so ties resolve deterministically.
        let pred = (0..num_classes).fold(0, |best, c| if row[c] > row[best] { c } else { best });
        confusion[t][pred] += 1;
    }

    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / truth.len() as f64;
    let (mut prec, mut rec, mut f1, mut aucs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for c in 0..num_classes {
        let support: usize = confusion[c].iter().sum();
        if support == 0 {
            continue;
        }
        let predicted: usize = confusion.iter().map(|r| r[c]).sum();
        let tp = confusion[c][c] as f64;
        let pc = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let rc = tp / support as f64;
        prec.push(pc);
        rec.push(rc);
        f1.push(if pc + rc == 0.0 { 0.0 } else { 2.0 * pc * rc / (pc + rc) });
        let scores: Vec<f64> = (0..truth.len()).map(|r| p.row(r)[c]).collect();
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        if let Some(a) = rank_auc(&scores, &pos) {
            aucs.push(a);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(ProbeReport {
        representation: String::new(),
        accuracy,
        precision: mean(&prec),
        recall: mean(&rec),
        f1: mean(&f1),
        auc: mean(&aucs),
        n_train: nt,
        n_test: truth.len(),
        confusion,
    })
}

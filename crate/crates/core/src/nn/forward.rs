//! Batched inference: im2col + GEMM convolutions, max-pool, fully-connected
//! layers and ReLU, all in `f64`.
//!
//! Corrupted weights can reach magnitudes near 2^129, so intermediate values
//! may overflow to infinities or NaN. Those propagate deterministically; ReLU
//! maps NaN to 0, max-pool ignores NaN unless the whole window is NaN, and
//! [`argmax`] ranks NaN below every other score.

use rayon::prelude::*;

use super::dataset::Dataset;
use super::model::{EdgeLayer, LayerKind, NetworkModel};
use crate::linalg::gemm;
use crate::{Error, Result};

const CHUNK: usize = 64;

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn conv_layer(layer: &EdgeLayer, input: &[f64], batch: usize) -> Vec<f64> {
    let (c_in, c_out, k, stride, feat) = (
        layer.c_in(),
        layer.c_out(),
        layer.kernel(),
        layer.stride(),
        layer.feat(),
    );
    let side = layer.conv_out_size();
    let plane = side * side;
    let cols_n = batch * plane;
    let rows_k = c_in * k * k;
    let in_size = c_in * feat * feat;

    let mut cols = vec![0.0; rows_k * cols_n];
    for b in 0..batch {
        let img = &input[b * in_size..(b + 1) * in_size];
        for ci in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * cols_n + b * plane..row * cols_n + (b + 1) * plane];
                    for oy in 0..side {
                        let src = ci * feat * feat + (oy * stride + ky) * feat + kx;
                        for ox in 0..side {
                            dst[oy * side + ox] = img[src + ox * stride];
                        }
                    }
                }
            }
        }
    }

    let mut pre = vec![0.0; c_out * cols_n];
    gemm(
        c_out,
        rows_k,
        cols_n,
        layer.weights(),
        rows_k as isize,
        1,
        &cols,
        cols_n as isize,
        1,
        &mut pre,
    );

    let pool = layer.pool();
    let out_side = side / pool;
    let out_plane = out_side * out_side;
    let mut out = vec![0.0; batch * c_out * out_plane];
    let mut act = vec![0.0; plane];
    for b in 0..batch {
        for co in 0..c_out {
            let bias = layer.bias()[co];
            let src = &pre[co * cols_n + b * plane..co * cols_n + (b + 1) * plane];
            for (a, &v) in act.iter_mut().zip(src) {
                let v = v + bias;
                *a = if layer.relu() { relu(v) } else { v };
            }
            let dst = &mut out[(b * c_out + co) * out_plane..(b * c_out + co + 1) * out_plane];
            if pool == 1 {
                dst.copy_from_slice(&act);
                continue;
            }
            for py in 0..out_side {
                for px in 0..out_side {
                    let mut best = f64::NAN;
                    for wy in 0..pool {
                        for wx in 0..pool {
                            let v = act[(py * pool + wy) * side + px * pool + wx];
                            if !(v <= best) && !v.is_nan() {
                                best = v;
                            }
                        }
                    }
                    dst[py * out_side + px] = best;
                }
            }
        }
    }
    out
}

fn fc_layer(layer: &EdgeLayer, input: &[f64], batch: usize) -> Vec<f64> {
    let (c_in, c_out) = (layer.c_in(), layer.c_out());
    let mut out = vec![0.0; batch * c_out];
    // X (batch x c_in) times W^T, with W stored output-major
    gemm(
        batch,
        c_in,
        c_out,
        input,
        c_in as isize,
        1,
        layer.weights(),
        1,
        c_in as isize,
        &mut out,
    );
    for row in out.chunks_exact_mut(c_out) {
        for (v, &bias) in row.iter_mut().zip(layer.bias()) {
            *v += bias;
            if layer.relu() {
                *v = relu(*v);
            }
        }
    }
    out
}

fn input_len(model: &NetworkModel) -> usize {
    let s = model.input();
    s.rows * s.cols * s.channels
}

/// Class scores for `batch` images stored back to back in channel-major
/// (C x H x W) order. Returns `batch * class_count` scores.
pub fn forward_batch(model: &NetworkModel, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
    let len = input_len(model);
    if inputs.len() != batch * len {
        return Err(Error::shape(format!(
            "{} input values for {batch} images of {len}",
            inputs.len()
        )));
    }
    let mut act = inputs.to_vec();
    for layer in model.layers() {
        act = match layer.kind() {
            LayerKind::Conv => conv_layer(layer, &act, batch),
            LayerKind::Fc => fc_layer(layer, &act, batch),
        };
    }
    Ok(act)
}

/// Class scores for one channel-major image.
pub fn forward(model: &NetworkModel, image: &[f64]) -> Result<Vec<f64>> {
    forward_batch(model, image, 1)
}

/// Index of the largest score; ties go to the lowest index and NaN loses to
/// everything. All-NaN input yields 0.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NAN;
    for (i, &v) in scores.iter().enumerate() {
        if !v.is_nan() && (best_v.is_nan() || v > best_v) {
            best = i;
            best_v = v;
        }
    }
    best
}

/// The first `limit` samples of a dataset, converted once for repeated
/// accuracy measurements.
#[derive(Clone, Debug)]
pub struct EvalSet {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    input_len: usize,
}

impl EvalSet {
    pub fn new(dataset: &Dataset, limit: usize) -> Result<Self> {
        if limit == 0 || limit > dataset.len() {
            return Err(Error::param(format!(
                "evaluation limit {limit} outside 1..={}",
                dataset.len()
            )));
        }
        let input_len = dataset.rows() * dataset.cols() * dataset.channels();
        let mut inputs = vec![0.0; limit * input_len];
        for (i, chunk) in inputs.chunks_exact_mut(input_len).enumerate() {
            dataset.write_chw(i, chunk);
        }
        Ok(Self {
            inputs,
            labels: (0..limit).map(|i| dataset.label(i)).collect(),
            input_len,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Predicted class per sample.
    pub fn predict(&self, model: &NetworkModel) -> Result<Vec<usize>> {
        if input_len(model) != self.input_len {
            return Err(Error::shape(format!(
                "model takes {} inputs, dataset images have {}",
                input_len(model),
                self.input_len
            )));
        }
        let classes = model.class_count();
        let chunks: Vec<Result<Vec<usize>>> = self
            .inputs
            .par_chunks(CHUNK * self.input_len)
            .map(|chunk| {
                let batch = chunk.len() / self.input_len;
                let scores = forward_batch(model, chunk, batch)?;
                Ok(scores.chunks_exact(classes).map(argmax).collect())
            })
            .collect();
        let mut out = Vec::with_capacity(self.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Fraction of samples whose predicted class equals the label.
    pub fn accuracy(&self, model: &NetworkModel) -> Result<f64> {
        let predicted = self.predict(model)?;
        let correct = predicted
            .iter()
            .zip(&self.labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(correct as f64 / self.len() as f64)
    }
}

/// Accuracy over the first `limit` samples of `dataset`.
pub fn evaluate_accuracy(model: &NetworkModel, dataset: &Dataset, limit: usize) -> Result<f64> {
    EvalSet::new(dataset, limit)?.accuracy(model)
}

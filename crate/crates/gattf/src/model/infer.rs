//! Autoregressive sampling with per-layer key/value caches.
//!
//! The training path re-runs the whole decoder per step; at inference that
//! is quadratic in the horizon, so this module decodes incrementally: one
//! new row per step, attending over cached self-attention keys/values and
//! precomputed cross-attention projections of the encoder memory. Every
//! operation reproduces the tape kernels row for row, so an incremental
//! step is bit-identical to the corresponding row of a full teacher-forced
//! pass given the same inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;

use crate::autodiff::{matmul_nt_raw, matmul_raw, softplus_scalar, Tape, Tensor};
use crate::error::Result;
use crate::featurize::TrainingInstance;
use crate::model::{
    covariate_scales, encode, feature_rows, ForecastDistribution, HeadKind, Model,
};

const LN_EPS: f64 = 1e-5;

fn layer_norm_row(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Tensor {
    let n = x.cols();
    let mean = x.data().iter().sum::<f64>() / n as f64;
    let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(c, &v)| (v - mean) * inv * gain.data()[c] + bias.data()[c])
        .collect();
    Tensor::new(1, n, data).unwrap()
}

fn add_bias_row(x: &Tensor, bias: &Tensor) -> Tensor {
    let data = x.data().iter().zip(bias.data()).map(|(a, b)| a + b).collect();
    Tensor::new(x.rows(), x.cols(), data).unwrap()
}

fn add_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.rows(), a.cols(), data).unwrap()
}

fn linear_row(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    add_bias_row(&matmul_raw(x, w), b)
}

fn softmax_row(scores: &mut [f64]) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in scores.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in scores.iter_mut() {
        *v /= sum;
    }
}

fn slice_row_cols(x: &Tensor, from: usize, to: usize) -> Tensor {
    Tensor::new(1, to - from, x.data()[from..to].to_vec()).unwrap()
}

/// Growable [rows × cols] key/value store.
struct Cache {
    cols: usize,
    data: Vec<f64>,
    rows: usize,
}

impl Cache {
    fn new(cols: usize) -> Cache {
        Cache { cols, data: Vec::new(), rows: 0 }
    }

    fn push_row(&mut self, row: &Tensor) {
        debug_assert_eq!(row.cols(), self.cols);
        self.data.extend_from_slice(row.data());
        self.rows += 1;
    }

    fn as_tensor(&self) -> Tensor {
        Tensor::new(self.rows, self.cols, self.data.clone()).unwrap()
    }
}

struct AttnWeights<'a> {
    wq: &'a Tensor,
    bq: &'a Tensor,
    wk: &'a Tensor,
    bk: &'a Tensor,
    wv: &'a Tensor,
    bv: &'a Tensor,
    wo: &'a Tensor,
    bo: &'a Tensor,
}

struct LayerWeights<'a> {
    ln1: (&'a Tensor, &'a Tensor),
    self_attn: AttnWeights<'a>,
    ln_cross: (&'a Tensor, &'a Tensor),
    cross_attn: AttnWeights<'a>,
    ln2: (&'a Tensor, &'a Tensor),
    ff_w1: &'a Tensor,
    ff_b1: &'a Tensor,
    ff_w2: &'a Tensor,
    ff_b2: &'a Tensor,
}

struct DecoderWeights<'a> {
    input_w: &'a Tensor,
    input_b: &'a Tensor,
    static_emb: &'a Tensor,
    layers: Vec<LayerWeights<'a>>,
    final_ln: (&'a Tensor, &'a Tensor),
    head_w: &'a Tensor,
    head_b: &'a Tensor,
}

fn get<'a>(model: &'a Model, name: &str) -> &'a Tensor {
    model.params.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
}

fn attn_weights<'a>(model: &'a Model, prefix: &str) -> AttnWeights<'a> {
    AttnWeights {
        wq: get(model, &format!("{prefix}.wq")),
        bq: get(model, &format!("{prefix}.bq")),
        wk: get(model, &format!("{prefix}.wk")),
        bk: get(model, &format!("{prefix}.bk")),
        wv: get(model, &format!("{prefix}.wv")),
        bv: get(model, &format!("{prefix}.bv")),
        wo: get(model, &format!("{prefix}.wo")),
        bo: get(model, &format!("{prefix}.bo")),
    }
}

fn decoder_weights(model: &Model) -> DecoderWeights<'_> {
    let layers = (0..model.config.decoder_layers)
        .map(|i| LayerWeights {
            ln1: (get(model, &format!("dec.{i}.ln1.g")), get(model, &format!("dec.{i}.ln1.b"))),
            self_attn: attn_weights(model, &format!("dec.{i}.self")),
            ln_cross: (
                get(model, &format!("dec.{i}.ln_cross.g")),
                get(model, &format!("dec.{i}.ln_cross.b")),
            ),
            cross_attn: attn_weights(model, &format!("dec.{i}.cross")),
            ln2: (get(model, &format!("dec.{i}.ln2.g")), get(model, &format!("dec.{i}.ln2.b"))),
            ff_w1: get(model, &format!("dec.{i}.ff.w1")),
            ff_b1: get(model, &format!("dec.{i}.ff.b1")),
            ff_w2: get(model, &format!("dec.{i}.ff.w2")),
            ff_b2: get(model, &format!("dec.{i}.ff.b2")),
        })
        .collect();
    DecoderWeights {
        input_w: get(model, "input_proj.w"),
        input_b: get(model, "input_proj.b"),
        static_emb: get(model, "static_emb"),
        layers,
        final_ln: (get(model, "dec.final_ln.g"), get(model, "dec.final_ln.b")),
        head_w: get(model, "head.w"),
        head_b: get(model, "head.b"),
    }
}

fn slice_cols_matrix(x: &Tensor, from: usize, to: usize) -> Tensor {
    let (rows, cols) = x.shape();
    let w = to - from;
    let mut data = vec![0.0; rows * w];
    for r in 0..rows {
        data[r * w..(r + 1) * w].copy_from_slice(&x.data()[r * cols + from..r * cols + to]);
    }
    Tensor::new(rows, w, data).unwrap()
}

struct TrajectoryState {
    self_k: Vec<Cache>,
    self_v: Vec<Cache>,
}

/// One decoder step: push the new row through every layer, extending the
/// self-attention caches, and return the head parameters for this step.
#[allow(clippy::too_many_arguments)]
fn decode_step(
    model: &Model,
    weights: &DecoderWeights<'_>,
    cross_kv: &[(Tensor, Tensor)],
    state: &mut TrajectoryState,
    instance: &TrainingInstance,
    cov_scales: &[f64],
    step: usize,
    prev_value: f64,
) -> (f64, f64, f64) {
    let config = &model.config;
    let ctx = config.context_length;
    let prev = [prev_value];
    let rows =
        feature_rows(config, instance, cov_scales, ctx + step, ctx + step + 1, Some(&prev));
    let mut x = {
        let emb_row = slice_row_cols(
            &embed_row(weights.static_emb, instance.static_id),
            0,
            config.static_dim,
        );
        let mut data = rows.data().to_vec();
        data.extend_from_slice(emb_row.data());
        let full = Tensor::new(1, config.input_width(), data).unwrap();
        linear_row(&full, weights.input_w, weights.input_b)
    };

    for (li, layer) in weights.layers.iter().enumerate() {
        let normed = layer_norm_row(&x, layer.ln1.0, layer.ln1.1);
        let q = linear_row(&normed, layer.self_attn.wq, layer.self_attn.bq);
        let k = linear_row(&normed, layer.self_attn.wk, layer.self_attn.bk);
        let v = linear_row(&normed, layer.self_attn.wv, layer.self_attn.bv);
        state.self_k[li].push_row(&k);
        state.self_v[li].push_row(&v);
        let keys = state.self_k[li].as_tensor();
        let values = state.self_v[li].as_tensor();
        let sa = attend_row_preprojected(&q, &keys, &values, &layer.self_attn, config.heads);
        x = add_rows(&x, &sa);

        let normed = layer_norm_row(&x, layer.ln_cross.0, layer.ln_cross.1);
        let q = linear_row(&normed, layer.cross_attn.wq, layer.cross_attn.bq);
        let (ck, cv) = &cross_kv[li];
        let ca = attend_row_preprojected(&q, ck, cv, &layer.cross_attn, config.heads);
        x = add_rows(&x, &ca);

        let normed = layer_norm_row(&x, layer.ln2.0, layer.ln2.1);
        let h = linear_row(&normed, layer.ff_w1, layer.ff_b1);
        let h = Tensor::new(
            1,
            h.cols(),
            h.data().iter().map(|&v| crate::autodiff::gelu_scalar(v)).collect(),
        )
        .unwrap();
        let ff = linear_row(&h, layer.ff_w2, layer.ff_b2);
        x = add_rows(&x, &ff);
    }
    let x = layer_norm_row(&x, weights.final_ln.0, weights.final_ln.1);
    let out = linear_row(&x, weights.head_w, weights.head_b);
    match config.head {
        HeadKind::StudentT => (
            softplus_scalar(out.data()[0]) + 2.0,
            out.data()[1],
            softplus_scalar(out.data()[2]),
        ),
        HeadKind::Gaussian => (f64::INFINITY, out.data()[0], softplus_scalar(out.data()[1])),
    }
}

/// Attention with queries/keys/values already projected (per-trajectory
/// caches and precomputed cross projections).
fn attend_row_preprojected(
    q: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    w: &AttnWeights<'_>,
    heads: usize,
) -> Tensor {
    let d = w.wq.cols();
    let dh = d / heads;
    let mut merged = Vec::with_capacity(d);
    for h in 0..heads {
        let qh = slice_row_cols(q, h * dh, (h + 1) * dh);
        let kh = slice_cols_matrix(keys, h * dh, (h + 1) * dh);
        let vh = slice_cols_matrix(values, h * dh, (h + 1) * dh);
        let mut scores = matmul_nt_raw(&qh, &kh);
        let inv = 1.0 / (dh as f64).sqrt();
        for s in scores.data_mut() {
            *s *= inv;
        }
        softmax_row(scores.data_mut());
        let out = matmul_raw(&scores, &vh);
        merged.extend_from_slice(out.data());
    }
    let merged = Tensor::new(1, d, merged).unwrap();
    linear_row(&merged, w.wo, w.bo)
}

fn embed_row(table: &Tensor, index: usize) -> Tensor {
    let dim = table.cols();
    Tensor::new(1, dim, table.data()[index * dim..(index + 1) * dim].to_vec()).unwrap()
}

pub(super) fn sample_forecast(
    model: &Model,
    instance: &TrainingInstance,
    num_samples: usize,
    seed: u64,
) -> Result<ForecastDistribution> {
    let config = &model.config;
    // encoder memory once, shared by every trajectory
    let memory = {
        let mut tape = Tape::new();
        let leased = model.params.lease(&mut tape, false);
        let node = encode(&mut tape, &leased, config, instance, None)?;
        tape.value(node).clone()
    };
    let weights = decoder_weights(model);
    let cross_kv: Vec<(Tensor, Tensor)> = weights
        .layers
        .iter()
        .map(|l| {
            (
                add_bias_rows(&matmul_raw(&memory, l.cross_attn.wk), l.cross_attn.bk),
                add_bias_rows(&matmul_raw(&memory, l.cross_attn.wv), l.cross_attn.bv),
            )
        })
        .collect();
    let cov_scales = covariate_scales(instance, config.num_covariates);

    let ctx_len = config.context_length;
    let seed_value = if instance.observed_context[ctx_len - 1] {
        instance.target_context[ctx_len - 1] / instance.scale
    } else {
        0.0
    };

    let samples: Vec<Vec<f64>> = (0..num_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let mut state = TrajectoryState {
                self_k: (0..config.decoder_layers).map(|_| Cache::new(config.d_model)).collect(),
                self_v: (0..config.decoder_layers).map(|_| Cache::new(config.d_model)).collect(),
            };
            let mut prev = seed_value;
            let mut trajectory = Vec::with_capacity(config.prediction_length);
            for t in 0..config.prediction_length {
                let (df, loc, scale) = decode_step(
                    model,
                    &weights,
                    &cross_kv,
                    &mut state,
                    instance,
                    &cov_scales,
                    t,
                    prev,
                );
                let z: f64 = match config.head {
                    HeadKind::StudentT => {
                        StudentT::new(df).expect("df > 2 by construction").sample(&mut rng)
                    }
                    HeadKind::Gaussian => rng.sample(StandardNormal),
                };
                let value = loc + scale * z;
                trajectory.push(value * instance.scale);
                prev = value;
            }
            trajectory
        })
        .collect();

    Ok(ForecastDistribution { samples, scale: instance.scale })
}

fn add_bias_rows(x: &Tensor, bias: &Tensor) -> Tensor {
    let (rows, cols) = x.shape();
    let mut data = x.data().to_vec();
    for r in 0..rows {
        for c in 0..cols {
            data[r * cols + c] += bias.data()[c];
        }
    }
    Tensor::new(rows, cols, data).unwrap()
}

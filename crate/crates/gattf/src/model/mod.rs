//! The forecasting network: input projection over (scaled target, lags,
//! calendar features, past-only covariate channels, availability indicators,
//! static sensor embedding), a pre-norm encoder stack over the context
//! window, a causally masked decoder stack with cross-attention over the
//! encoder memory, and a probabilistic head (Student-t by default) trained
//! by masked negative log-likelihood. Forecasts are drawn autoregressively
//! and de-scaled by the instance's context scale.
//!
//! Positional information comes entirely from the calendar features and lag
//! structure; there are no sinusoidal position encodings.

mod checkpoint;
mod infer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{causal_mask, dropout_mask, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::featurize::TrainingInstance;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    StudentT,
    Gaussian,
}

impl HeadKind {
    pub fn param_count(self) -> usize {
        match self {
            HeadKind::StudentT => 3,
            HeadKind::Gaussian => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub context_length: usize,
    pub prediction_length: usize,
    pub dropout: f64,
    pub head: HeadKind,
    pub num_lags: usize,
    pub num_time_features: usize,
    pub num_covariates: usize,
    /// Number of distinct sensors the static embedding can represent.
    pub static_cardinality: usize,
    pub static_dim: usize,
    /// Default trajectory count for sampled forecasts.
    pub num_samples: usize,
}

impl ModelConfig {
    /// Full-scale defaults: 4+2 layers, d_model 256, 8 heads, ff 1024,
    /// two-day context and one-day horizon.
    pub fn full_scale(num_lags: usize, num_covariates: usize, cardinality: usize) -> ModelConfig {
        ModelConfig {
            d_model: 256,
            encoder_layers: 4,
            decoder_layers: 2,
            heads: 8,
            ff_dim: 1024,
            context_length: 576,
            prediction_length: 288,
            dropout: 0.1,
            head: HeadKind::StudentT,
            num_lags,
            num_time_features: 4,
            num_covariates,
            static_cardinality: cardinality.max(1),
            static_dim: 8,
            num_samples: 100,
        }
    }

    /// Width of the non-learnable feature block per position.
    pub fn feature_width(&self) -> usize {
        1 + self.num_lags + self.num_time_features + 2 * self.num_covariates
    }

    /// Width after appending the static embedding.
    pub fn input_width(&self) -> usize {
        self.feature_width() + self.static_dim
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Validation(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.encoder_layers == 0
            || self.decoder_layers == 0
            || self.ff_dim == 0
            || self.context_length == 0
            || self.prediction_length == 0
            || self.static_cardinality == 0
        {
            return Err(Error::Validation("all model dimensions must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Closed-form learnable-parameter count for this configuration.
    pub fn expected_param_count(&self) -> usize {
        let d = self.d_model;
        let ff = self.ff_dim;
        let attn = 4 * (d * d + d);
        let ln = 2 * d;
        let ffn = d * ff + ff + ff * d + d;
        let enc = self.encoder_layers * (ln + attn + ln + ffn) + ln;
        let dec = self.decoder_layers * (ln + attn + ln + attn + ln + ffn) + ln;
        let input = self.input_width() * d + d;
        let emb = self.static_cardinality * self.static_dim;
        let head = d * self.head.param_count() + self.head.param_count();
        input + emb + enc + dec + head
    }
}

/// All learnable tensors, in a fixed creation order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Seeded Glorot-uniform initialization of every tensor in the layout
    /// dictated by the config.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams { names: Vec::new(), tensors: Vec::new() };

        fn weight(
            rng: &mut ChaCha8Rng,
            params: &mut ModelParams,
            name: String,
            rows: usize,
            cols: usize,
        ) {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            params.push(name, Tensor::new(rows, cols, data).unwrap());
        }
        fn zeros(params: &mut ModelParams, name: String, cols: usize) {
            params.push(name, Tensor::zeros(1, cols));
        }
        fn ones(params: &mut ModelParams, name: String, cols: usize) {
            params.push(name, Tensor::full(1, cols, 1.0));
        }
        fn attn_block(rng: &mut ChaCha8Rng, params: &mut ModelParams, prefix: &str, d: usize) {
            for side in ["wq", "wk", "wv", "wo"] {
                weight(rng, params, format!("{prefix}.{side}"), d, d);
                zeros(params, format!("{prefix}.{}", side.replace('w', "b")), d);
            }
        }
        fn ff_block(
            rng: &mut ChaCha8Rng,
            params: &mut ModelParams,
            prefix: &str,
            d: usize,
            ff: usize,
        ) {
            weight(rng, params, format!("{prefix}.w1"), d, ff);
            zeros(params, format!("{prefix}.b1"), ff);
            weight(rng, params, format!("{prefix}.w2"), ff, d);
            zeros(params, format!("{prefix}.b2"), d);
        }
        fn ln_block(params: &mut ModelParams, prefix: &str, d: usize) {
            ones(params, format!("{prefix}.g"), d);
            zeros(params, format!("{prefix}.b"), d);
        }

        let d = config.d_model;
        weight(&mut rng, &mut params, "input_proj.w".into(), config.input_width(), d);
        zeros(&mut params, "input_proj.b".into(), d);
        weight(
            &mut rng,
            &mut params,
            "static_emb".into(),
            config.static_cardinality,
            config.static_dim,
        );

        for i in 0..config.encoder_layers {
            ln_block(&mut params, &format!("enc.{i}.ln1"), d);
            attn_block(&mut rng, &mut params, &format!("enc.{i}.attn"), d);
            ln_block(&mut params, &format!("enc.{i}.ln2"), d);
            ff_block(&mut rng, &mut params, &format!("enc.{i}.ff"), d, config.ff_dim);
        }
        ln_block(&mut params, "enc.final_ln", d);
        for i in 0..config.decoder_layers {
            ln_block(&mut params, &format!("dec.{i}.ln1"), d);
            attn_block(&mut rng, &mut params, &format!("dec.{i}.self"), d);
            ln_block(&mut params, &format!("dec.{i}.ln_cross"), d);
            attn_block(&mut rng, &mut params, &format!("dec.{i}.cross"), d);
            ln_block(&mut params, &format!("dec.{i}.ln2"), d);
            ff_block(&mut rng, &mut params, &format!("dec.{i}.ff"), d, config.ff_dim);
        }
        ln_block(&mut params, "dec.final_ln", d);
        weight(&mut rng, &mut params, "head.w".into(), d, config.head.param_count());
        zeros(&mut params, "head.b".into(), config.head.param_count());
        Ok(params)
    }

    fn push(&mut self, name: String, tensor: Tensor) {
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn from_named(named: Vec<(String, Tensor)>) -> ModelParams {
        let (names, tensors) = named.into_iter().unzip();
        ModelParams { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Put every parameter on the tape. With `requires_grad` false the tape
    /// treats them as constants (inference).
    pub fn lease(&self, tape: &mut Tape, requires_grad: bool) -> LeasedParams {
        let ids = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        LeasedParams { ids, names: self.names.clone() }
    }
}

/// Tape handles for one forward pass, aligned with [`ModelParams`] order.
pub struct LeasedParams {
    ids: Vec<NodeId>,
    names: Vec<String>,
}

impl LeasedParams {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    fn id(&self, name: &str) -> NodeId {
        self.ids[self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }
}

/// Per-horizon-step forecast trajectories, already de-scaled to data units.
#[derive(Debug, Clone)]
pub struct ForecastDistribution {
    /// `samples[i]` is one trajectory over the horizon.
    pub samples: Vec<Vec<f64>>,
    pub scale: f64,
}

impl ForecastDistribution {
    /// Per-step median across trajectories.
    pub fn point_forecast(&self) -> Vec<f64> {
        self.per_step(|values| stats::median(values))
    }

    /// Per-step linear-interpolation quantile across trajectories.
    pub fn quantile(&self, p: f64) -> Vec<f64> {
        self.per_step(|values| stats::quantile(values, p))
    }

    fn per_step(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let horizon = self.samples.first().map_or(0, Vec::len);
        (0..horizon)
            .map(|t| {
                let column: Vec<f64> = self.samples.iter().map(|s| s[t]).collect();
                f(&column)
            })
            .collect()
    }
}

/// Covariate channel scale: mean absolute value over indicator-true slots,
/// floored at 1.0, per channel.
fn covariate_scales(instance: &TrainingInstance, ncov: usize) -> Vec<f64> {
    let mut sums = vec![0.0; ncov];
    let mut counts = vec![0usize; ncov];
    for (i, &v) in instance.covariate_channels.iter().enumerate() {
        let c = i % ncov.max(1);
        if instance.covariate_indicator[i] {
            sums[c] += v.abs();
            counts[c] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { 1.0 } else { (s / n as f64).max(1.0) })
        .collect()
}

/// Feature rows for window positions `[from, to)`.
///
/// `prev_scaled` supplies the decoder's previous-target column, indexed by
/// `u - from`; `None` means encoder rows (the column holds the
/// observation-gated scaled context target).
fn feature_rows(
    config: &ModelConfig,
    instance: &TrainingInstance,
    cov_scales: &[f64],
    from: usize,
    to: usize,
    prev_scaled: Option<&[f64]>,
) -> Tensor {
    let ncov = config.num_covariates;
    let nl = config.num_lags;
    let ntf = config.num_time_features;
    let width = config.feature_width();
    let scale = instance.scale;
    let mut data = Vec::with_capacity((to - from) * width);
    for u in from..to {
        // previous/current target column
        if let Some(prev) = prev_scaled {
            data.push(prev[u - from]);
        } else {
            let obs = instance.observed_context[u];
            data.push(if obs { instance.target_context[u] / scale } else { 0.0 });
        }
        for j in 0..nl {
            data.push(instance.lag_features[u * nl + j] / scale);
        }
        for j in 0..ntf {
            data.push(instance.time_features[u * ntf + j]);
        }
        for c in 0..ncov {
            let ind = instance.covariate_indicator[u * ncov + c];
            // branch, not multiply: values behind a false indicator must be
            // unreadable bit for bit
            data.push(if ind { instance.covariate_channels[u * ncov + c] / cov_scales[c] } else { 0.0 });
        }
        for c in 0..ncov {
            data.push(if instance.covariate_indicator[u * ncov + c] { 1.0 } else { 0.0 });
        }
    }
    Tensor::new(to - from, width, data).expect("row assembly is shape-consistent")
}

/// Previous-target inputs for teacher forcing: the last context value,
/// then ground-truth future values shifted right by one; unobserved slots
/// contribute zero.
fn teacher_forced_prev(instance: &TrainingInstance, horizon: usize) -> Vec<f64> {
    let scale = instance.scale;
    let ctx = instance.target_context.len();
    let mut prev = Vec::with_capacity(horizon);
    let last = if instance.observed_context[ctx - 1] {
        instance.target_context[ctx - 1] / scale
    } else {
        0.0
    };
    prev.push(last);
    for t in 0..horizon.saturating_sub(1) {
        prev.push(if instance.observed_future[t] { instance.target_future[t] / scale } else { 0.0 });
    }
    prev
}

struct AttnIds {
    wq: NodeId,
    bq: NodeId,
    wk: NodeId,
    bk: NodeId,
    wv: NodeId,
    bv: NodeId,
    wo: NodeId,
    bo: NodeId,
}

fn attn_ids(leased: &LeasedParams, prefix: &str) -> AttnIds {
    AttnIds {
        wq: leased.id(&format!("{prefix}.wq")),
        bq: leased.id(&format!("{prefix}.bq")),
        wk: leased.id(&format!("{prefix}.wk")),
        bk: leased.id(&format!("{prefix}.bk")),
        wv: leased.id(&format!("{prefix}.wv")),
        bv: leased.id(&format!("{prefix}.bv")),
        wo: leased.id(&format!("{prefix}.wo")),
        bo: leased.id(&format!("{prefix}.bo")),
    }
}

fn multi_head_attention(
    tape: &mut Tape,
    query_in: NodeId,
    kv_in: NodeId,
    mask: Option<NodeId>,
    ids: &AttnIds,
    heads: usize,
) -> Result<NodeId> {
    let d = tape.value(ids.wq).cols();
    let dh = d / heads;
    let q = tape.matmul(query_in, ids.wq)?;
    let q = tape.add_bias(q, ids.bq)?;
    let k = tape.matmul(kv_in, ids.wk)?;
    let k = tape.add_bias(k, ids.bk)?;
    let v = tape.matmul(kv_in, ids.wv)?;
    let v = tape.add_bias(v, ids.bv)?;
    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scaled = tape.affine(scores, 1.0 / (dh as f64).sqrt(), 0.0);
        let attn = tape.softmax_rows(scaled, mask)?;
        head_outputs.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat_cols(&head_outputs)?;
    let out = tape.matmul(merged, ids.wo)?;
    tape.add_bias(out, ids.bo)
}

const LN_EPS: f64 = 1e-5;

struct BlockCtx<'a> {
    tape: &'a mut Tape,
    leased: &'a LeasedParams,
    heads: usize,
    dropout: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl BlockCtx<'_> {
    fn drop(&mut self, x: NodeId) -> Result<NodeId> {
        let mask = match &mut self.rng {
            Some(rng) => dropout_mask(self.tape.value(x).numel(), self.dropout, rng),
            None => None,
        };
        self.tape.dropout_with_mask(x, mask)
    }

    fn layer_norm(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let g = self.leased.id(&format!("{prefix}.g"));
        let b = self.leased.id(&format!("{prefix}.b"));
        self.tape.layer_norm(x, g, b, LN_EPS)
    }

    fn feed_forward(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let w1 = self.leased.id(&format!("{prefix}.w1"));
        let b1 = self.leased.id(&format!("{prefix}.b1"));
        let w2 = self.leased.id(&format!("{prefix}.w2"));
        let b2 = self.leased.id(&format!("{prefix}.b2"));
        let h = self.tape.matmul(x, w1)?;
        let h = self.tape.add_bias(h, b1)?;
        let h = self.tape.gelu(h);
        let h = self.tape.matmul(h, w2)?;
        self.tape.add_bias(h, b2)
    }

    fn encoder_block(&mut self, x: NodeId, layer: usize) -> Result<NodeId> {
        let normed = self.layer_norm(x, &format!("enc.{layer}.ln1"))?;
        let ids = attn_ids(self.leased, &format!("enc.{layer}.attn"));
        let sa = multi_head_attention(self.tape, normed, normed, None, &ids, self.heads)?;
        let sa = self.drop(sa)?;
        let x = self.tape.add(x, sa)?;
        let normed = self.layer_norm(x, &format!("enc.{layer}.ln2"))?;
        let ff = self.feed_forward(normed, &format!("enc.{layer}.ff"))?;
        let ff = self.drop(ff)?;
        self.tape.add(x, ff)
    }

    fn decoder_block(
        &mut self,
        x: NodeId,
        memory: NodeId,
        mask: NodeId,
        layer: usize,
    ) -> Result<NodeId> {
        let normed = self.layer_norm(x, &format!("dec.{layer}.ln1"))?;
        let ids = attn_ids(self.leased, &format!("dec.{layer}.self"));
        let sa = multi_head_attention(self.tape, normed, normed, Some(mask), &ids, self.heads)?;
        let sa = self.drop(sa)?;
        let x = self.tape.add(x, sa)?;
        let normed = self.layer_norm(x, &format!("dec.{layer}.ln_cross"))?;
        let ids = attn_ids(self.leased, &format!("dec.{layer}.cross"));
        let ca = multi_head_attention(self.tape, normed, memory, None, &ids, self.heads)?;
        let ca = self.drop(ca)?;
        let x = self.tape.add(x, ca)?;
        let normed = self.layer_norm(x, &format!("dec.{layer}.ln2"))?;
        let ff = self.feed_forward(normed, &format!("dec.{layer}.ff"))?;
        let ff = self.drop(ff)?;
        self.tape.add(x, ff)
    }

    fn project_input(&mut self, rows: Tensor, static_id: usize) -> Result<NodeId> {
        let n = rows.rows();
        let features = self.tape.constant(rows);
        let table = self.leased.id("static_emb");
        let emb = self.tape.embed(table, &vec![static_id; n])?;
        let full = self.tape.concat_cols(&[features, emb])?;
        let w = self.leased.id("input_proj.w");
        let b = self.leased.id("input_proj.b");
        let projected = self.tape.matmul(full, w)?;
        self.tape.add_bias(projected, b)
    }
}

/// Encoder pass over the context window → memory `[context × d_model]`.
pub fn encode(
    tape: &mut Tape,
    leased: &LeasedParams,
    config: &ModelConfig,
    instance: &TrainingInstance,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    check_instance(config, instance)?;
    let cov_scales = covariate_scales(instance, config.num_covariates);
    let rows = feature_rows(config, instance, &cov_scales, 0, config.context_length, None);
    let mut ctx = BlockCtx {
        tape,
        leased,
        heads: config.heads,
        dropout: config.dropout,
        rng: dropout_rng.as_deref_mut(),
    };
    let mut x = ctx.project_input(rows, instance.static_id)?;
    for layer in 0..config.encoder_layers {
        x = ctx.encoder_block(x, layer)?;
    }
    ctx.layer_norm(x, "enc.final_ln")
}

/// Decoder pass over `prev_scaled.len()` horizon steps with the given
/// previous-target inputs → distribution parameters, one row per step.
pub fn decode_with_prev(
    tape: &mut Tape,
    leased: &LeasedParams,
    config: &ModelConfig,
    instance: &TrainingInstance,
    memory: NodeId,
    prev_scaled: &[f64],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    let steps = prev_scaled.len();
    if steps == 0 || steps > config.prediction_length {
        return Err(Error::Shape(format!(
            "decoder steps {steps} outside 1..={}",
            config.prediction_length
        )));
    }
    let cov_scales = covariate_scales(instance, config.num_covariates);
    let ctx_len = config.context_length;
    let rows = feature_rows(
        config,
        instance,
        &cov_scales,
        ctx_len,
        ctx_len + steps,
        Some(prev_scaled),
    );
    let mask = tape.constant(causal_mask(steps));
    let mut ctx = BlockCtx {
        tape,
        leased,
        heads: config.heads,
        dropout: config.dropout,
        rng: dropout_rng.as_deref_mut(),
    };
    let mut x = ctx.project_input(rows, instance.static_id)?;
    for layer in 0..config.decoder_layers {
        x = ctx.decoder_block(x, memory, mask, layer)?;
    }
    let x = ctx.layer_norm(x, "dec.final_ln")?;
    let w = leased.id("head.w");
    let b = leased.id("head.b");
    let out = tape.matmul(x, w)?;
    tape.add_bias(out, b)
}

/// Teacher-forced decode over the whole horizon.
pub fn decode_teacher_forced(
    tape: &mut Tape,
    leased: &LeasedParams,
    config: &ModelConfig,
    instance: &TrainingInstance,
    memory: NodeId,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    let prev = teacher_forced_prev(instance, config.prediction_length);
    decode_with_prev(tape, leased, config, instance, memory, &prev, dropout_rng)
}

/// Mean negative log-likelihood of the scaled targets over observed
/// horizon positions. Masked positions contribute exactly zero to the value
/// and to every gradient.
pub fn nll_loss(
    tape: &mut Tape,
    head: HeadKind,
    dist_params: NodeId,
    targets_scaled: &[f64],
    observed: &[bool],
) -> Result<NodeId> {
    let n = targets_scaled.len();
    if tape.value(dist_params).rows() != n || observed.len() != n {
        return Err(Error::Shape(format!(
            "distribution rows {} vs targets {} vs mask {}",
            tape.value(dist_params).rows(),
            n,
            observed.len()
        )));
    }
    let observed_count = observed.iter().filter(|&&o| o).count();
    if observed_count == 0 {
        return Err(Error::InsufficientData("no observed positions in the loss window".into()));
    }
    // gate target values through the mask so masked slots are never read
    let gated: Vec<f64> = targets_scaled
        .iter()
        .zip(observed)
        .map(|(&y, &o)| if o { y } else { 0.0 })
        .collect();
    let y = tape.constant(Tensor::column_vector(gated));
    let mask_col = Tensor::column_vector(
        observed.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect(),
    );

    let per_step = match head {
        HeadKind::StudentT => {
            let raw_df = tape.slice_cols(dist_params, 0, 1)?;
            let loc = tape.slice_cols(dist_params, 1, 2)?;
            let raw_scale = tape.slice_cols(dist_params, 2, 3)?;
            let df_m2 = tape.softplus(raw_df);
            let df = tape.affine(df_m2, 1.0, 2.0);
            let s = tape.softplus(raw_scale);
            let centered = tape.sub(y, loc)?;
            let z = tape.div(centered, s)?;
            let z2 = tape.mul(z, z)?;
            let z2_over_df = tape.div(z2, df)?;
            let one_plus = tape.affine(z2_over_df, 1.0, 1.0);
            let log_term = tape.ln(one_plus);
            let half_df_plus = tape.affine(df, 0.5, 0.5); // (ν+1)/2
            let half_df = tape.affine(df, 0.5, 0.0); // ν/2
            let lg_a = tape.ln_gamma(half_df_plus);
            let lg_b = tape.ln_gamma(half_df);
            let ln_df = tape.ln(df);
            let ln_s = tape.ln(s);
            let tail = tape.mul(half_df_plus, log_term)?;
            // nll = -lgΓ((ν+1)/2) + lgΓ(ν/2) + ½ln(νπ) + ln s + ((ν+1)/2)·ln(1+z²/ν)
            let mut acc = tape.affine(lg_a, -1.0, 0.0);
            acc = tape.add(acc, lg_b)?;
            let half_ln_df = tape.affine(ln_df, 0.5, 0.5 * std::f64::consts::PI.ln());
            acc = tape.add(acc, half_ln_df)?;
            acc = tape.add(acc, ln_s)?;
            tape.add(acc, tail)?
        }
        HeadKind::Gaussian => {
            let loc = tape.slice_cols(dist_params, 0, 1)?;
            let raw_scale = tape.slice_cols(dist_params, 1, 2)?;
            let s = tape.softplus(raw_scale);
            let centered = tape.sub(y, loc)?;
            let z = tape.div(centered, s)?;
            let z2 = tape.mul(z, z)?;
            let half_z2 = tape.affine(z2, 0.5, 0.5 * (2.0 * std::f64::consts::PI).ln());
            let ln_s = tape.ln(s);
            tape.add(half_z2, ln_s)?
        }
    };
    let mask_node = tape.constant(mask_col);
    let masked = tape.mul(per_step, mask_node)?;
    let total = tape.sum_all(masked);
    Ok(tape.affine(total, 1.0 / observed_count as f64, 0.0))
}

fn check_instance(config: &ModelConfig, instance: &TrainingInstance) -> Result<()> {
    let l = config.context_length;
    let h = config.prediction_length;
    let w = l + h;
    if instance.target_context.len() != l
        || instance.target_future.len() != h
        || instance.lag_features.len() != w * config.num_lags
        || instance.time_features.len() != w * config.num_time_features
        || instance.covariate_channels.len() != w * config.num_covariates
        || instance.static_id >= config.static_cardinality
    {
        return Err(Error::Shape(format!(
            "instance shapes do not match the model config (context {l}, horizon {h}, \
             lags {}, time features {}, covariates {}, static id {} of {})",
            config.num_lags,
            config.num_time_features,
            config.num_covariates,
            instance.static_id,
            config.static_cardinality
        )));
    }
    if instance.scale <= 0.0 {
        return Err(Error::Validation("instance scale must be positive".into()));
    }
    Ok(())
}

/// The network with its configuration and parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Teacher-forced loss of one instance plus gradients for every
    /// parameter, aligned with the parameter order.
    pub fn loss_and_grads(
        &self,
        instance: &TrainingInstance,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let leased = self.params.lease(&mut tape, true);
        let mut rng = dropout_rng;
        let memory = encode(&mut tape, &leased, &self.config, instance, rng.as_deref_mut())?;
        let dist = decode_teacher_forced(
            &mut tape,
            &leased,
            &self.config,
            instance,
            memory,
            rng.as_deref_mut(),
        )?;
        let scaled_targets: Vec<f64> =
            instance.target_future.iter().map(|v| v / instance.scale).collect();
        let loss = nll_loss(
            &mut tape,
            self.config.head,
            dist,
            &scaled_targets,
            &instance.observed_future,
        )?;
        let loss_value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let collected = leased
            .ids()
            .iter()
            .zip(self.params.tensors())
            .map(|(&id, t)| grads.get_or_zeros(id, t.rows(), t.cols()))
            .collect();
        Ok((loss_value, collected))
    }

    /// Teacher-forced loss without gradients (validation).
    pub fn loss(&self, instance: &TrainingInstance) -> Result<f64> {
        let mut tape = Tape::new();
        let leased = self.params.lease(&mut tape, false);
        let memory = encode(&mut tape, &leased, &self.config, instance, None)?;
        let dist =
            decode_teacher_forced(&mut tape, &leased, &self.config, instance, memory, None)?;
        let scaled_targets: Vec<f64> =
            instance.target_future.iter().map(|v| v / instance.scale).collect();
        let loss = nll_loss(
            &mut tape,
            self.config.head,
            dist,
            &scaled_targets,
            &instance.observed_future,
        )?;
        Ok(tape.value(loss).item())
    }

    /// Encoder memory as a plain tensor (dropout off).
    pub fn encode_values(&self, instance: &TrainingInstance) -> Result<Tensor> {
        let mut tape = Tape::new();
        let leased = self.params.lease(&mut tape, false);
        let memory = encode(&mut tape, &leased, &self.config, instance, None)?;
        Ok(tape.value(memory).clone())
    }

    /// Distribution parameters for custom previous-target decoder inputs
    /// (dropout off). `prev_scaled` lives in scaled space.
    pub fn decode_values(&self, instance: &TrainingInstance, prev_scaled: &[f64]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let leased = self.params.lease(&mut tape, false);
        let memory = encode(&mut tape, &leased, &self.config, instance, None)?;
        let dist = decode_with_prev(
            &mut tape,
            &leased,
            &self.config,
            instance,
            memory,
            prev_scaled,
            None,
        )?;
        Ok(tape.value(dist).clone())
    }

    /// Autoregressive sampled forecast; trajectory `i` uses the RNG stream
    /// seeded with `seed + i`, so any parallel schedule produces identical
    /// output.
    pub fn sample_forecast(
        &self,
        instance: &TrainingInstance,
        num_samples: usize,
        seed: u64,
    ) -> Result<ForecastDistribution> {
        if num_samples == 0 {
            return Err(Error::Validation("num_samples must be at least 1".into()));
        }
        check_instance(&self.config, instance)?;
        infer::sample_forecast(self, instance, num_samples, seed)
    }
}

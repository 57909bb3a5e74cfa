//! The token acoustic model: a text encoder with duration prediction and
//! length regulation feeding a contextual discrete-diffusion decoder over
//! semantic tokens, plus its training scheme and the unified
//! editing/continuation inference.
//!
//! The decoder input is the concatenation `[c_A, x_t, c_B]` of clean
//! context tokens around the corrupted segment, tagged by a binary
//! indicator; the frame-aligned text encoding is injected additively after
//! each self-attention layer (no cross-attention), and the diffusion step
//! enters as a learned embedding added to every block input.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{TrainTxt2VecSection, Txt2VecSection};
use crate::diffusion::{self, TokenSequence, TransitionSchedule};
use crate::error::{Error, Result};
use crate::nn::layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention, TransformerBlock};
use crate::nn::{sinusoidal_positions, AdamW, AdamWConfig, Node, ParamStore, Tape, Tensor};
use crate::rng;

/// Sizes baked into a model instance (and its checkpoints).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Txt2VecDims {
    pub vocab: usize,
    pub k: u32,
    pub steps: usize,
    pub d_model: usize,
    pub heads: usize,
    pub text_blocks: usize,
    pub decoder_blocks: usize,
    pub ffn_mult: usize,
    pub duration_kernel: usize,
}

impl Txt2VecDims {
    pub fn from_config(section: &Txt2VecSection, vocab: usize, k: u32, steps: usize) -> Txt2VecDims {
        Txt2VecDims {
            vocab,
            k,
            steps,
            d_model: section.d_model,
            heads: section.heads,
            text_blocks: section.text_blocks,
            decoder_blocks: section.decoder_blocks,
            ffn_mult: section.ffn_mult,
            duration_kernel: section.duration_kernel,
        }
    }
}

/// Two stacked same-length convolutions with norms, then a scalar head
/// predicting durations in the log(1+d) domain.
struct DurationPredictor {
    w1: usize,
    b1: usize,
    ln1: LayerNorm,
    w2: usize,
    b2: usize,
    ln2: LayerNorm,
    head: Linear,
    kernel: usize,
    d: usize,
}

impl DurationPredictor {
    fn new(store: &mut ParamStore, d: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(kernel % 2 == 1, "duration kernel must be odd");
        let std = (2.0 / (d * kernel) as f64).sqrt();
        DurationPredictor {
            w1: store.add_normal("dur.w1", vec![d, d, kernel], std, rng),
            b1: store.add_zeros("dur.b1", vec![1, d]),
            ln1: LayerNorm::new(store, "dur.ln1", d),
            w2: store.add_normal("dur.w2", vec![d, d, kernel], std, rng),
            b2: store.add_zeros("dur.b2", vec![1, d]),
            ln2: LayerNorm::new(store, "dur.ln2", d),
            head: Linear::new(store, "dur.head", d, 1, rng),
            kernel,
            d,
        }
    }

    /// `e: [P, d]` phone-level encoding to `[P, 1]` log-domain durations.
    fn forward(&self, tape: &mut Tape, store: &ParamStore, e: Node) -> Node {
        let pad = (self.kernel - 1) / 2;
        let mut x = e;
        for (w, b, ln) in [(self.w1, self.b1, &self.ln1), (self.w2, self.b2, &self.ln2)] {
            let wt = store.leaf(tape, w);
            let bt = store.leaf(tape, b);
            let tr = tape.transpose(x); // [d, P]
            let c = tape.conv1d(tr, wt, None, self.d, self.kernel, 1, pad, 1);
            let back = tape.transpose(c); // [P, d]
            let back = tape.add_row(back, bt);
            let act = tape.relu(back);
            x = ln.forward(tape, store, act);
        }
        self.head.forward(tape, store, x)
    }
}

/// Decoder block: step embedding added at the input, text encoding added
/// after self-attention through a per-block linear projection.
struct DecoderBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    wh: Linear,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl DecoderBlock {
    fn new(store: &mut ParamStore, prefix: &str, dims: &Txt2VecDims, rng: &mut ChaCha8Rng) -> Self {
        DecoderBlock {
            ln1: LayerNorm::new(store, &format!("{prefix}.ln1"), dims.d_model),
            attn: MultiHeadAttention::new(
                store,
                &format!("{prefix}.attn"),
                dims.d_model,
                dims.heads,
                rng,
            ),
            wh: Linear::new(
                store,
                &format!("{prefix}.wh"),
                dims.d_model,
                dims.d_model,
                rng,
            ),
            ln2: LayerNorm::new(store, &format!("{prefix}.ln2"), dims.d_model),
            ffn: FeedForward::new(
                store,
                &format!("{prefix}.ffn"),
                dims.d_model,
                dims.d_model * dims.ffn_mult,
                rng,
            ),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Node, h: Node, step: Node) -> Node {
        let x = tape.add_row(x, step);
        let a = self.ln1.forward(tape, store, x);
        let a = self.attn.forward(tape, store, a, a);
        let hp = self.wh.forward(tape, store, h);
        let xa = tape.add(x, a);
        let x = tape.add(xa, hp);
        let f = self.ln2.forward(tape, store, x);
        let f = self.ffn.forward(tape, store, f);
        tape.add(x, f)
    }
}

pub struct Txt2VecModel {
    pub dims: Txt2VecDims,
    pub store: ParamStore,
    text_emb: usize,
    text_blocks: Vec<TransformerBlock>,
    text_ln: LayerNorm,
    duration: DurationPredictor,
    tok_emb: usize,
    ind_emb: usize,
    step_emb: usize,
    dec_blocks: Vec<DecoderBlock>,
    dec_ln: LayerNorm,
    out: Linear,
}

impl Txt2VecModel {
    pub fn new(dims: Txt2VecDims, seed: u64) -> Txt2VecModel {
        let mut r = rng::stream(rng::derive(seed, "txt2vec-init"));
        let mut store = ParamStore::new();
        let d = dims.d_model;
        let emb_std = 0.02;
        let text_emb = store.add_normal("text.emb", vec![dims.vocab, d], emb_std, &mut r);
        let text_blocks = (0..dims.text_blocks)
            .map(|i| {
                TransformerBlock::new(
                    &mut store,
                    &format!("text.blk{i}"),
                    d,
                    dims.heads,
                    d * dims.ffn_mult,
                    false,
                    &mut r,
                )
            })
            .collect();
        let text_ln = LayerNorm::new(&mut store, "text.ln", d);
        let duration = DurationPredictor::new(&mut store, d, dims.duration_kernel, &mut r);
        // Token values are 1-based with mask at K+1; row 0 is unused.
        let tok_emb = store.add_normal(
            "dec.tok_emb",
            vec![dims.k as usize + 2, d],
            emb_std,
            &mut r,
        );
        let ind_emb = store.add_normal("dec.ind_emb", vec![2, d], emb_std, &mut r);
        // Step index t ranges over 1..=steps; row 0 is unused.
        let step_emb = store.add_normal("dec.step_emb", vec![dims.steps + 1, d], emb_std, &mut r);
        let dec_blocks = (0..dims.decoder_blocks)
            .map(|i| DecoderBlock::new(&mut store, &format!("dec.blk{i}"), &dims, &mut r))
            .collect();
        let dec_ln = LayerNorm::new(&mut store, "dec.ln", d);
        let out = Linear::new(&mut store, "dec.out", d, dims.k as usize, &mut r);
        Txt2VecModel {
            dims,
            store,
            text_emb,
            text_blocks,
            text_ln,
            duration,
            tok_emb,
            ind_emb,
            step_emb,
            dec_blocks,
            dec_ln,
            out,
        }
    }

    /// Phone-level text encoding, one row per phoneme.
    pub fn encode_text(&self, tape: &mut Tape, phoneme_ids: &[usize]) -> Result<Node> {
        if phoneme_ids.is_empty() {
            return Err(Error::Request("empty phoneme sequence".into()));
        }
        if let Some(&bad) = phoneme_ids.iter().find(|&&id| id >= self.dims.vocab) {
            return Err(Error::Token(format!(
                "phoneme id {bad} outside vocabulary of {}",
                self.dims.vocab
            )));
        }
        let table = self.store.leaf(tape, self.text_emb);
        let mut x = tape.embedding(table, phoneme_ids);
        let pos = tape.constant(sinusoidal_positions(phoneme_ids.len(), self.dims.d_model));
        x = tape.add(x, pos);
        for blk in &self.text_blocks {
            x = blk.forward(tape, &self.store, x, None);
        }
        Ok(self.text_ln.forward(tape, &self.store, x))
    }

    /// Log-domain duration head output, `[P, 1]`.
    pub fn predict_durations_node(&self, tape: &mut Tape, e: Node) -> Node {
        self.duration.forward(tape, &self.store, e)
    }

    /// Non-negative real durations per phoneme.
    pub fn predict_durations(&self, phoneme_ids: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let e = self.encode_text(&mut tape, phoneme_ids)?;
        let z = self.predict_durations_node(&mut tape, e);
        Ok(tape
            .value(z)
            .data
            .iter()
            .map(|&v| (v.exp() - 1.0).max(0.0))
            .collect())
    }

    /// Repeat row i of `e` `durations[i]` times.
    pub fn length_regulate(
        &self,
        tape: &mut Tape,
        e: Node,
        durations: &[usize],
    ) -> Result<Node> {
        if durations.len() != tape.value(e).rows() {
            return Err(Error::Shape(format!(
                "{} durations for {} encoded phonemes",
                durations.len(),
                tape.value(e).rows()
            )));
        }
        let mut ids = Vec::with_capacity(durations.iter().sum());
        for (i, &d) in durations.iter().enumerate() {
            ids.extend(std::iter::repeat(i).take(d));
        }
        if ids.is_empty() {
            return Err(Error::Request("all durations are zero".into()));
        }
        Ok(tape.embedding(e, &ids))
    }

    /// Denoiser forward pass. `seq` is the full `[c_A, x_t, c_B]` stream,
    /// `indicator` marks data positions (true) vs context (false), and `h`
    /// is the frame-aligned text encoding. Returns logits `[n_data, K]`
    /// over real tokens for the data positions in order.
    pub fn decoder_forward(
        &self,
        tape: &mut Tape,
        seq: &TokenSequence,
        indicator: &[bool],
        t: usize,
        h: Node,
    ) -> Result<Node> {
        let n = seq.len();
        if indicator.len() != n || tape.value(h).rows() != n {
            return Err(Error::Shape(format!(
                "decoder lengths disagree: seq {n}, indicator {}, h {}",
                indicator.len(),
                tape.value(h).rows()
            )));
        }
        if t < 1 || t > self.dims.steps {
            return Err(Error::Schedule(format!(
                "decoder step {t} outside 1..={}",
                self.dims.steps
            )));
        }
        let tok_ids: Vec<usize> = seq.values.iter().map(|&v| v as usize).collect();
        if let Some(&bad) = tok_ids.iter().find(|&&v| v == 0 || v > self.dims.k as usize + 1) {
            return Err(Error::Token(format!("token value {bad} out of range")));
        }
        let ind_ids: Vec<usize> = indicator.iter().map(|&b| b as usize).collect();
        let tok_table = self.store.leaf(tape, self.tok_emb);
        let ind_table = self.store.leaf(tape, self.ind_emb);
        let step_table = self.store.leaf(tape, self.step_emb);
        let te = tape.embedding(tok_table, &tok_ids);
        let ie = tape.embedding(ind_table, &ind_ids);
        let pos = tape.constant(sinusoidal_positions(n, self.dims.d_model));
        let s1 = tape.add(te, ie);
        let mut x = tape.add(s1, pos);
        let step = tape.embedding(step_table, &[t]);
        for blk in &self.dec_blocks {
            x = blk.forward(tape, &self.store, x, h, step);
        }
        let x = self.dec_ln.forward(tape, &self.store, x);
        let logits = self.out.forward(tape, &self.store, x);
        let data_rows: Vec<usize> = (0..n).filter(|&i| indicator[i]).collect();
        if data_rows.is_empty() {
            return Err(Error::Request("indicator marks no data positions".into()));
        }
        Ok(tape.embedding(logits, &data_rows))
    }

    /// Softmax rows of the denoiser output as plain vectors, with
    /// temperature applied to the logits.
    fn denoise_probs(
        &self,
        sched: &TransitionSchedule,
        seq: &TokenSequence,
        indicator: &[bool],
        t: usize,
        phoneme_ids: &[usize],
        durations: &[usize],
        temperature: f64,
    ) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::inference();
        let e = self.encode_text(&mut tape, phoneme_ids)?;
        let h = self.length_regulate(&mut tape, e, durations)?;
        let logits = self.decoder_forward(&mut tape, seq, indicator, t, h)?;
        let scaled = if (temperature - 1.0).abs() > 1e-12 {
            if temperature <= 0.0 {
                return Err(Error::Request(format!(
                    "temperature must be positive, got {temperature}"
                )));
            }
            tape.scale(logits, 1.0 / temperature)
        } else {
            logits
        };
        let probs = tape.softmax_rows(scaled);
        let val = tape.value(probs);
        let _ = sched;
        Ok((0..val.rows()).map(|i| val.row(i).to_vec()).collect())
    }
}

/// Segment layout drawn by the training scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentPlan {
    pub a_len: usize,
    pub x_len: usize,
    pub b_len: usize,
    /// 1 = both contexts, 2 = context A only, 3 = no context.
    pub tag: u8,
}

/// Sample one of the three context configurations by the configured
/// proportions; configurations that do not fit the utterance are resampled
/// so the proportions hold marginally over feasible draws.
pub fn segment_for_training(
    total_frames: usize,
    cfg: &TrainTxt2VecSection,
    frames_per_second: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SegmentPlan> {
    if total_frames == 0 {
        return Err(Error::Request("empty utterance".into()));
    }
    let ctx_min = (cfg.ctx_min_secs * frames_per_second).round() as usize;
    let ctx_max = (cfg.ctx_max_secs * frames_per_second).round() as usize;
    for _ in 0..10_000 {
        let u: f64 = rng.gen();
        if u < cfg.prop_both {
            // Both contexts nonempty: |x0| uniform in (min_x0, total-1],
            // the remainder split so neither flank is empty.
            if total_frames < cfg.min_x0_frames + 3 {
                continue;
            }
            let x_len = rng.gen_range(cfg.min_x0_frames + 1..total_frames - 1);
            let a_len = rng.gen_range(1..total_frames - x_len);
            return Ok(SegmentPlan {
                a_len,
                x_len,
                b_len: total_frames - x_len - a_len,
                tag: 1,
            });
        } else if u < cfg.prop_both + cfg.prop_a_only {
            // Context A only, drawn in seconds' worth of frames.
            let a_len = rng.gen_range(ctx_min..=ctx_max);
            if a_len + 1 > total_frames {
                continue;
            }
            return Ok(SegmentPlan {
                a_len,
                x_len: total_frames - a_len,
                b_len: 0,
                tag: 2,
            });
        } else {
            return Ok(SegmentPlan {
                a_len: 0,
                x_len: total_frames,
                b_len: 0,
                tag: 3,
            });
        }
    }
    Err(Error::Request(format!(
        "no context configuration fits an utterance of {total_frames} frames"
    )))
}

/// Scaled-duration rounding: round-half-up on the running sum, then take
/// differences, so the total equals the rounded scaled sum exactly and no
/// drift accumulates.
pub fn round_durations(alpha: f64, d_tilde: &[f64]) -> Vec<usize> {
    let mut out = Vec::with_capacity(d_tilde.len());
    let mut acc = 0.0;
    let mut prev = 0usize;
    for &d in d_tilde {
        acc += alpha * d.max(0.0);
        let r = (acc + 0.5).floor() as usize;
        out.push(r - prev);
        prev = r;
    }
    out
}

/// Rescale factor from ground-truth versus predicted context durations;
/// falls back to 1 when there is no context signal.
pub fn duration_rescale(gt_context_total: f64, predicted_context_total: f64) -> f64 {
    if predicted_context_total <= 1e-9 {
        1.0
    } else {
        gt_context_total / predicted_context_total
    }
}

/// One training utterance, already tokenized and id-mapped.
#[derive(Debug, Clone)]
pub struct TrainUtterance {
    pub phoneme_ids: Vec<usize>,
    pub durations: Vec<usize>,
    pub tokens: TokenSequence,
}

/// Loss pieces for one step; `total` is the tape node to backprop.
pub struct LossParts {
    pub total: Node,
    pub duration_mse: f64,
    pub diffusion_kl: f64,
    pub aux_ce: f64,
    pub t: usize,
}

impl Txt2VecModel {
    /// Full training objective on one utterance: duration regression plus
    /// the weighted diffusion term (variational KL plus auxiliary clean
    /// cross-entropy), computed over the corrupted segment only.
    #[allow(clippy::too_many_arguments)]
    pub fn training_loss(
        &self,
        tape: &mut Tape,
        sched: &TransitionSchedule,
        utt: &TrainUtterance,
        plan: SegmentPlan,
        train_cfg: &TrainTxt2VecSection,
        t: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<LossParts> {
        let total_frames: usize = utt.durations.iter().sum();
        if utt.tokens.len() != total_frames {
            return Err(Error::Shape(format!(
                "{} tokens but durations sum to {total_frames}",
                utt.tokens.len()
            )));
        }
        if plan.a_len + plan.x_len + plan.b_len != total_frames {
            return Err(Error::Shape("segment plan does not tile utterance".into()));
        }
        let k = self.dims.k as usize;

        // Text path and duration loss over every phoneme.
        let e = self.encode_text(tape, &utt.phoneme_ids)?;
        let z = self.predict_durations_node(tape, e);
        let dur_target = Tensor::new(
            vec![utt.durations.len(), 1],
            utt.durations.iter().map(|&d| (1.0 + d as f64).ln()).collect(),
        );
        let dt = tape.constant(dur_target);
        let dd = tape.sub(z, dt);
        let sq = tape.mul(dd, dd);
        let dur_loss = tape.mean_all(sq);

        // Corrupt the data segment; contexts stay clean.
        let x0 = TokenSequence::new(
            utt.tokens.values[plan.a_len..plan.a_len + plan.x_len].to_vec(),
        );
        let xt = diffusion::forward_corrupt(&x0, t, sched, rng)?;
        let c_a = TokenSequence::new(utt.tokens.values[..plan.a_len].to_vec());
        let c_b = TokenSequence::new(utt.tokens.values[plan.a_len + plan.x_len..].to_vec());
        let seq = TokenSequence::concat(&[&c_a, &xt, &c_b]);
        let mut indicator = vec![false; total_frames];
        for i in plan.a_len..plan.a_len + plan.x_len {
            indicator[i] = true;
        }

        let h = self.length_regulate(tape, e, &utt.durations)?;
        let logits = self.decoder_forward(tape, &seq, &indicator, t, h)?;
        let n = plan.x_len;

        // Auxiliary cross-entropy against the clean tokens.
        let lp = tape.log_softmax_rows(logits);
        let x0_cols: Vec<usize> = x0.values.iter().map(|&v| (v - 1) as usize).collect();
        let sel = tape.select_cols(lp, &x0_cols);
        let sel_sum = tape.sum_all(sel);
        let ce_loss = tape.scale(sel_sum, -1.0 / n as f64);

        // Variational KL between the true posterior and the model's
        // one-step-back mixture. The posterior matrices are constants;
        // gradients flow through the predicted clean-token distribution.
        let probs = tape.softmax_rows(logits);
        let mut mat_index: BTreeMap<u32, usize> = BTreeMap::new();
        let mut mats: Vec<Vec<f64>> = Vec::new();
        let mut assign = Vec::with_capacity(n);
        for &v in &xt.values {
            let idx = match mat_index.get(&v) {
                Some(&i) => i,
                None => {
                    let mut m = vec![0.0; (k + 1) * k];
                    for j in 0..k {
                        let post = diffusion::posterior(v, (j + 1) as u32, t, sched)?;
                        for (r, &p) in post.iter().enumerate() {
                            m[r * k + j] = p;
                        }
                    }
                    mats.push(m);
                    let i = mats.len() - 1;
                    mat_index.insert(v, i);
                    i
                }
            };
            assign.push(idx);
        }
        let p_prev = tape.rowwise_linear(probs, Rc::new(mats), &assign, k + 1);
        let mut q_flat = vec![0.0; n * (k + 1)];
        let mut lnq_flat = vec![0.0; n * (k + 1)];
        for i in 0..n {
            let q = diffusion::posterior(xt.values[i], x0.values[i], t, sched)?;
            for (r, &qv) in q.iter().enumerate() {
                q_flat[i * (k + 1) + r] = qv;
                lnq_flat[i * (k + 1) + r] = if qv > 0.0 { qv.ln() } else { 0.0 };
            }
        }
        let q_const = tape.constant(Tensor::new(vec![n, k + 1], q_flat));
        let lnq_const = tape.constant(Tensor::new(vec![n, k + 1], lnq_flat));
        let ln_p = tape.log_eps(p_prev, 1e-300);
        let diff = tape.sub(lnq_const, ln_p);
        let kl_terms = tape.mul(q_const, diff);
        let kl_sum = tape.sum_all(kl_terms);
        let kl_loss = tape.scale(kl_sum, 1.0 / n as f64);

        let ce_w = tape.scale(ce_loss, train_cfg.aux_ce_weight);
        let diff_term = tape.add(kl_loss, ce_w);
        let diff_w = tape.scale(diff_term, train_cfg.gamma_loss);
        let total = tape.add(dur_loss, diff_w);
        Ok(LossParts {
            total,
            duration_mse: tape.value_scalar(dur_loss),
            diffusion_kl: tape.value_scalar(kl_loss),
            aux_ce: tape.value_scalar(ce_loss),
            t,
        })
    }
}

/// Inputs to the unified editing inference. Continuation is the same call
/// with the B-side slices empty.
pub struct EditInputs<'a> {
    pub y_a: &'a [usize],
    pub y_d: &'a [usize],
    pub y_b: &'a [usize],
    pub d_a: &'a [usize],
    pub d_b: &'a [usize],
    pub c_a: &'a TokenSequence,
    pub c_b: &'a TokenSequence,
}

/// Result of editing/continuation inference.
#[derive(Debug, Clone, PartialEq)]
pub struct InferOutcome {
    /// Full `[c_A, x_0, c_B]` stream.
    pub tokens: TokenSequence,
    pub a_len: usize,
    pub x_len: usize,
    pub b_len: usize,
    /// Rounded, rescaled durations for the generated phonemes.
    pub d_generated: Vec<usize>,
    pub alpha: f64,
}

impl Txt2VecModel {
    /// Speech editing: encode `[y_A, y_D, y_B]`, rescale the predicted
    /// middle durations by the context-duration ratio, then run the full
    /// backward diffusion from all-mask with both contexts held fixed.
    pub fn infer_edit(
        &self,
        sched: &TransitionSchedule,
        inputs: &EditInputs,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<InferOutcome> {
        self.validate_edit_inputs(sched, inputs)?;
        let y_all: Vec<usize> = inputs
            .y_a
            .iter()
            .chain(inputs.y_d)
            .chain(inputs.y_b)
            .copied()
            .collect();
        let mut tape = Tape::inference();
        let e = self.encode_text(&mut tape, &y_all)?;
        let z = self.predict_durations_node(&mut tape, e);
        let d_tilde: Vec<f64> = tape
            .value(z)
            .data
            .iter()
            .map(|&v| (v.exp() - 1.0).max(0.0))
            .collect();
        let na = inputs.y_a.len();
        let nd = inputs.y_d.len();
        let gt_ctx: usize = inputs.d_a.iter().chain(inputs.d_b).sum();
        let pred_ctx: f64 = d_tilde[..na].iter().sum::<f64>()
            + d_tilde[na + nd..].iter().sum::<f64>();
        let alpha = duration_rescale(gt_ctx as f64, pred_ctx);
        let d_generated = round_durations(alpha, &d_tilde[na..na + nd]);
        self.infer_core(sched, inputs, d_generated, alpha, temperature, rng)
    }

    /// Editing with externally supplied durations for the generated
    /// phonemes (e.g. ground truth when scoring held-in accuracy).
    pub fn infer_edit_given_durations(
        &self,
        sched: &TransitionSchedule,
        inputs: &EditInputs,
        d_d: &[usize],
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<InferOutcome> {
        self.validate_edit_inputs(sched, inputs)?;
        if d_d.len() != inputs.y_d.len() {
            return Err(Error::Shape(format!(
                "{} durations for {} generated phonemes",
                d_d.len(),
                inputs.y_d.len()
            )));
        }
        self.infer_core(sched, inputs, d_d.to_vec(), 1.0, temperature, rng)
    }

    fn validate_edit_inputs(
        &self,
        sched: &TransitionSchedule,
        inputs: &EditInputs,
    ) -> Result<()> {
        if inputs.y_d.is_empty() {
            return Err(Error::Request("no phonemes to generate".into()));
        }
        if inputs.y_a.len() != inputs.d_a.len() || inputs.y_b.len() != inputs.d_b.len() {
            return Err(Error::Shape(
                "context phoneme and duration counts disagree".into(),
            ));
        }
        let cb = sched.codebook();
        inputs.c_a.validate_clean(cb)?;
        inputs.c_b.validate_clean(cb)?;
        if inputs.c_a.len() != inputs.d_a.iter().sum::<usize>()
            || inputs.c_b.len() != inputs.d_b.iter().sum::<usize>()
        {
            return Err(Error::Shape(
                "context token counts do not match context durations".into(),
            ));
        }
        if sched.k() != self.dims.k || sched.steps() != self.dims.steps {
            return Err(Error::Checkpoint(format!(
                "schedule (K={}, T={}) does not match model (K={}, T={})",
                sched.k(),
                sched.steps(),
                self.dims.k,
                self.dims.steps
            )));
        }
        Ok(())
    }

    fn infer_core(
        &self,
        sched: &TransitionSchedule,
        inputs: &EditInputs,
        d_generated: Vec<usize>,
        alpha: f64,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<InferOutcome> {
        let cb = sched.codebook();
        let y_all: Vec<usize> = inputs
            .y_a
            .iter()
            .chain(inputs.y_d)
            .chain(inputs.y_b)
            .copied()
            .collect();
        let a_len = inputs.c_a.len();
        let b_len = inputs.c_b.len();
        let x_len: usize = d_generated.iter().sum();
        let full_durations: Vec<usize> = inputs
            .d_a
            .iter()
            .copied()
            .chain(d_generated.iter().copied())
            .chain(inputs.d_b.iter().copied())
            .collect();

        if x_len == 0 {
            return Ok(InferOutcome {
                tokens: TokenSequence::concat(&[inputs.c_a, inputs.c_b]),
                a_len,
                x_len,
                b_len,
                d_generated,
                alpha,
            });
        }

        let mut indicator = vec![false; a_len + x_len + b_len];
        for i in a_len..a_len + x_len {
            indicator[i] = true;
        }
        let mut x = TokenSequence::new(vec![cb.mask_value(); x_len]);
        for t in (1..=sched.steps()).rev() {
            let seq = TokenSequence::concat(&[inputs.c_a, &x, inputs.c_b]);
            let p = self.denoise_probs(
                sched,
                &seq,
                &indicator,
                t,
                &y_all,
                &full_durations,
                temperature,
            )?;
            x = diffusion::backward_step(&x, &p, t, sched, rng)?;
        }
        debug_assert!(x.validate_clean(cb).is_ok());
        Ok(InferOutcome {
            tokens: TokenSequence::concat(&[inputs.c_a, &x, inputs.c_b]),
            a_len,
            x_len,
            b_len,
            d_generated,
            alpha,
        })
    }

    /// Speech continuation: editing without a trailing context.
    pub fn infer_continue(
        &self,
        sched: &TransitionSchedule,
        y_a: &[usize],
        y_d: &[usize],
        d_a: &[usize],
        c_a: &TokenSequence,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<InferOutcome> {
        let empty = TokenSequence::new(vec![]);
        self.infer_edit(
            sched,
            &EditInputs {
                y_a,
                y_d,
                y_b: &[],
                d_a,
                d_b: &[],
                c_a,
                c_b: &empty,
            },
            temperature,
            rng,
        )
    }
}

/// Running average of the most recent `window` values.
fn smoothed_tail(values: &[f64], window: usize) -> f64 {
    let n = values.len().min(window).max(1);
    values[values.len() - n..].iter().sum::<f64>() / n as f64
}

pub struct TrainStats {
    pub steps: usize,
    pub losses: Vec<f64>,
    pub final_smoothed_loss: f64,
}

/// Single-process trainer: round-robin over utterances, one utterance per
/// step, AdamW updates.
pub fn train(
    model: &mut Txt2VecModel,
    sched: &TransitionSchedule,
    corpus: &[TrainUtterance],
    cfg: &TrainTxt2VecSection,
    frames_per_second: f64,
    seed: u64,
    mut progress: impl FnMut(usize, &LossParts),
) -> Result<TrainStats> {
    if corpus.is_empty() {
        return Err(Error::Request("empty training corpus".into()));
    }
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            grad_clip: cfg.grad_clip,
            weight_decay: 0.0,
            ..Default::default()
        },
        &model.store,
    );
    let mut seg_rng = rng::stream(rng::derive(seed, "txt2vec-segment"));
    let mut corrupt_rng = rng::stream(rng::derive(seed, "txt2vec-corrupt"));
    let mut t_rng = rng::stream(rng::derive(seed, "txt2vec-steps"));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cfg.lr_final_frac < 1.0 && cfg.steps > 1 {
            let floor = cfg.lr * cfg.lr_final_frac;
            let phase = std::f64::consts::PI * step as f64 / (cfg.steps - 1) as f64;
            opt.set_lr(floor + 0.5 * (cfg.lr - floor) * (1.0 + phase.cos()));
        }
        let utt = &corpus[step % corpus.len()];
        let plan = segment_for_training(
            utt.durations.iter().sum(),
            cfg,
            frames_per_second,
            &mut seg_rng,
        )?;
        let t = t_rng.gen_range(1..=sched.steps());
        let mut tape = Tape::new();
        let parts = model.training_loss(
            &mut tape,
            sched,
            utt,
            plan,
            cfg,
            t,
            &mut corrupt_rng,
        )?;
        let grads = tape.backward(parts.total);
        opt.step(&mut model.store, &grads);
        losses.push(tape.value_scalar(parts.total));
        progress(step, &parts);
    }
    let final_smoothed_loss = smoothed_tail(&losses, 50);
    Ok(TrainStats {
        steps: cfg.steps,
        losses,
        final_smoothed_loss,
    })
}

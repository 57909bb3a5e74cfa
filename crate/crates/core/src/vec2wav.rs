//! The contextual vocoder: semantic tokens are encoded by Conformer
//! blocks that cross-attend to an order-free encoding of a mel prompt,
//! auxiliary prosodic features are predicted and re-injected between the
//! two encoder stages, and an upsampling convolutional generator produces
//! the waveform. Training follows the usual adversarial recipe
//! (multi-period + multi-scale discriminators, least-squares objectives,
//! feature matching, mel reconstruction) with an extra L1 term on the
//! auxiliary features and a warmup phase during which all adversarial
//! terms are exactly zero.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{TrainVec2WavSection, Vec2WavSection};
use crate::diffusion::TokenSequence;
use crate::error::{Error, Result};
use crate::features::MelExtractor;
use crate::nn::layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::nn::{sinusoidal_positions, Node, ParamStore, Tape, Tensor};
use crate::rng;

pub const AUX_DIMS: usize = 3;

/// Fixed affine maps that bring pitch (Hz), log energy, and voicing
/// probability onto comparable unit scales for prediction and embedding.
const AUX_SCALE: [f64; AUX_DIMS] = [1.0 / 400.0, 0.04, 1.0];
const AUX_OFFSET: [f64; AUX_DIMS] = [0.0, 23.0, 0.0];

/// Normalize raw per-frame auxiliary features `[n, 3]`.
pub fn normalize_aux(raw: &Tensor) -> Tensor {
    assert_eq!(raw.cols(), AUX_DIMS, "auxiliary features must have 3 dims");
    let mut data = raw.data.clone();
    for row in data.chunks_mut(AUX_DIMS) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v + AUX_OFFSET[j]) * AUX_SCALE[j];
        }
    }
    Tensor::new(raw.shape.clone(), data)
}

/// Sizes baked into a vocoder instance (and its checkpoints).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Vec2WavDims {
    pub k: u32,
    pub n_mels: usize,
    /// Waveform samples per token frame; equals the product of the
    /// generator's upsampling factors.
    pub hop: usize,
    pub arch: Vec2WavSection,
}

impl Vec2WavDims {
    pub fn from_config(arch: &Vec2WavSection, k: u32, n_mels: usize) -> Vec2WavDims {
        Vec2WavDims {
            k,
            n_mels,
            hop: arch.upsample_factors.iter().product(),
            arch: arch.clone(),
        }
    }
}

/// Per-frame mel encoder: a 1-D convolution across the mel-frequency axis
/// followed by a linear projection. Because each frame is encoded in
/// isolation, the prompt representation carries no positional information
/// and the whole prompt pathway is order-free by construction.
struct MelEncoder {
    conv_w: usize,
    conv_b: usize,
    proj: Linear,
    channels: usize,
    kernel: usize,
    n_mels: usize,
}

impl MelEncoder {
    fn new(
        store: &mut ParamStore,
        n_mels: usize,
        channels: usize,
        kernel: usize,
        d_model: usize,
        rng: &mut ChaCha8Rng,
    ) -> MelEncoder {
        MelEncoder {
            conv_w: store.add_normal("melenc.w", vec![channels, 1, kernel], 0.2, rng),
            conv_b: store.add_zeros("melenc.b", vec![channels, 1]),
            proj: Linear::new(store, "melenc.proj", channels * n_mels, d_model, rng),
            channels,
            kernel,
            n_mels,
        }
    }

    fn encode(&self, tape: &mut Tape, store: &ParamStore, mel: &Tensor) -> Node {
        let n = mel.rows();
        let pad = (self.kernel - 1) / 2;
        let mel_node = tape.constant(mel.clone());
        let w = store.leaf(tape, self.conv_w);
        let b = store.leaf(tape, self.conv_b);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let frame = tape.slice_rows(mel_node, i, 1);
            let c = tape.conv1d(frame, w, Some(b), self.channels, self.kernel, 1, pad, 1);
            rows.push(tape.reshape(c, 1, self.channels * self.n_mels));
        }
        let stacked = tape.concat_rows(&rows);
        self.proj.forward(tape, store, stacked)
    }
}

/// Conformer block with an extra cross-attention sub-layer (queries from
/// the token stream, keys/values from the prompt encoding) inserted after
/// self-attention. Macaron feed-forward halves bracket the block.
struct ConformerBlock {
    ln_ff1: LayerNorm,
    ff1: FeedForward,
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    ln_cross: LayerNorm,
    cross: MultiHeadAttention,
    ln_conv: LayerNorm,
    pw1: Linear,
    dw: usize,
    pw2: Linear,
    ln_ff2: LayerNorm,
    ff2: FeedForward,
    ln_out: LayerNorm,
    d: usize,
    kernel: usize,
}

impl ConformerBlock {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        heads: usize,
        ffn_mult: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> ConformerBlock {
        let dw_std = (2.0 / (d * kernel) as f64).sqrt();
        ConformerBlock {
            ln_ff1: LayerNorm::new(store, &format!("{prefix}.ln_ff1"), d),
            ff1: FeedForward::new(store, &format!("{prefix}.ff1"), d, d * ffn_mult, rng),
            ln_attn: LayerNorm::new(store, &format!("{prefix}.ln_attn"), d),
            attn: MultiHeadAttention::new(store, &format!("{prefix}.attn"), d, heads, rng),
            ln_cross: LayerNorm::new(store, &format!("{prefix}.ln_cross"), d),
            cross: MultiHeadAttention::new(store, &format!("{prefix}.cross"), d, heads, rng),
            ln_conv: LayerNorm::new(store, &format!("{prefix}.ln_conv"), d),
            pw1: Linear::new(store, &format!("{prefix}.pw1"), d, 2 * d, rng),
            dw: store.add_normal(&format!("{prefix}.dw"), vec![d, kernel], dw_std, rng),
            pw2: Linear::new(store, &format!("{prefix}.pw2"), d, d, rng),
            ln_ff2: LayerNorm::new(store, &format!("{prefix}.ln_ff2"), d),
            ff2: FeedForward::new(store, &format!("{prefix}.ff2"), d, d * ffn_mult, rng),
            ln_out: LayerNorm::new(store, &format!("{prefix}.ln_out"), d),
            d,
            kernel,
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Node, m_prime: Node) -> Node {
        let h = self.ln_ff1.forward(tape, store, x);
        let h = self.ff1.forward(tape, store, h);
        let h = tape.scale(h, 0.5);
        let x = tape.add(x, h);

        let h = self.ln_attn.forward(tape, store, x);
        let h = self.attn.forward(tape, store, h, h);
        let x = tape.add(x, h);

        let h = self.ln_cross.forward(tape, store, x);
        let h = self.cross.forward(tape, store, h, m_prime);
        let x = tape.add(x, h);

        let h = self.ln_conv.forward(tape, store, x);
        let p = self.pw1.forward(tape, store, h);
        let a = tape.slice_cols(p, 0, self.d);
        let g = tape.slice_cols(p, self.d, self.d);
        let g = tape.sigmoid(g);
        let u = tape.mul(a, g);
        let ut = tape.transpose(u);
        let dw = store.leaf(tape, self.dw);
        let c = tape.depthwise_conv1d(ut, dw, self.kernel, (self.kernel - 1) / 2);
        let ct = tape.transpose(c);
        let s = tape.silu(ct);
        let v = self.pw2.forward(tape, store, s);
        let x = tape.add(x, v);

        let h = self.ln_ff2.forward(tape, store, x);
        let h = self.ff2.forward(tape, store, h);
        let h = tape.scale(h, 0.5);
        let x = tape.add(x, h);
        self.ln_out.forward(tape, store, x)
    }
}

/// One residual block of the generator's multi-receptive-field fusion.
struct ResBlock {
    /// Per dilation: (dilated conv w, b, unit-dilation conv w, b).
    convs: Vec<(usize, usize, usize, usize)>,
    channels: usize,
    kernel: usize,
    dilations: Vec<usize>,
}

impl ResBlock {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        kernel: usize,
        dilations: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> ResBlock {
        let convs = dilations
            .iter()
            .enumerate()
            .map(|(i, _)| {
                (
                    store.add_normal(
                        &format!("{prefix}.c{i}a.w"),
                        vec![channels, channels, kernel],
                        0.02,
                        rng,
                    ),
                    store.add_zeros(&format!("{prefix}.c{i}a.b"), vec![channels, 1]),
                    store.add_normal(
                        &format!("{prefix}.c{i}b.w"),
                        vec![channels, channels, kernel],
                        0.02,
                        rng,
                    ),
                    store.add_zeros(&format!("{prefix}.c{i}b.b"), vec![channels, 1]),
                )
            })
            .collect();
        ResBlock {
            convs,
            channels,
            kernel,
            dilations: dilations.to_vec(),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Node) -> Node {
        let mut x = x;
        for ((wa, ba, wb, bb), &dil) in self.convs.iter().zip(&self.dilations) {
            let h = tape.leaky_relu(x, 0.1);
            let w = store.leaf(tape, *wa);
            let b = store.leaf(tape, *ba);
            let h = tape.conv1d(
                h,
                w,
                Some(b),
                self.channels,
                self.kernel,
                1,
                (self.kernel - 1) * dil / 2,
                dil,
            );
            let h = tape.leaky_relu(h, 0.1);
            let w = store.leaf(tape, *wb);
            let b = store.leaf(tape, *bb);
            let h = tape.conv1d(
                h,
                w,
                Some(b),
                self.channels,
                self.kernel,
                1,
                (self.kernel - 1) / 2,
                1,
            );
            x = tape.add(x, h);
        }
        x
    }
}

/// Upsampling generator: pre-convolution, alternating transposed
/// convolutions and multi-receptive-field residual fusion, and a bounded
/// post-convolution. Every stage multiplies the length by exactly its
/// upsampling factor, so the output has `frames * hop` samples.
struct Generator {
    pre_w: usize,
    pre_b: usize,
    ups: Vec<(usize, usize)>,
    mrfs: Vec<Vec<ResBlock>>,
    post_w: usize,
    post_b: usize,
    channels: Vec<usize>,
    arch: Vec2WavSection,
}

impl Generator {
    fn new(
        store: &mut ParamStore,
        d_model: usize,
        arch: &Vec2WavSection,
        rng: &mut ChaCha8Rng,
    ) -> Generator {
        let stages = arch.upsample_factors.len();
        let mut channels = vec![arch.generator_channels];
        for i in 0..stages {
            let c = arch.generator_channels >> (i + 1);
            assert!(c >= 1, "generator channels exhausted by halving");
            channels.push(c);
        }
        let pre_w = store.add_normal(
            "gen.pre.w",
            vec![channels[0], d_model, 7],
            0.02,
            rng,
        );
        let pre_b = store.add_zeros("gen.pre.b", vec![channels[0], 1]);
        let mut ups = Vec::with_capacity(stages);
        let mut mrfs = Vec::with_capacity(stages);
        for i in 0..stages {
            let (cin, cout) = (channels[i], channels[i + 1]);
            let k = arch.upsample_kernels[i];
            ups.push((
                store.add_normal(&format!("gen.up{i}.w"), vec![cin, cout, k], 0.02, rng),
                store.add_zeros(&format!("gen.up{i}.b"), vec![cout, 1]),
            ));
            let blocks = arch
                .resblock_kernels
                .iter()
                .zip(&arch.resblock_dilations)
                .enumerate()
                .map(|(j, (&rk, dils))| {
                    ResBlock::new(store, &format!("gen.mrf{i}.{j}"), cout, rk, dils, rng)
                })
                .collect();
            mrfs.push(blocks);
        }
        let post_w = store.add_normal("gen.post.w", vec![1, channels[stages], 7], 0.02, rng);
        let post_b = store.add_zeros("gen.post.b", vec![1, 1]);
        Generator {
            pre_w,
            pre_b,
            ups,
            mrfs,
            post_w,
            post_b,
            channels,
            arch: arch.clone(),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, hidden: Node) -> Node {
        let mut x = tape.transpose(hidden);
        let w = store.leaf(tape, self.pre_w);
        let b = store.leaf(tape, self.pre_b);
        x = tape.conv1d(x, w, Some(b), self.channels[0], 7, 1, 3, 1);
        for (i, (uw, ub)) in self.ups.iter().enumerate() {
            x = tape.leaky_relu(x, 0.1);
            let w = store.leaf(tape, *uw);
            let b = store.leaf(tape, *ub);
            let k = self.arch.upsample_kernels[i];
            let s = self.arch.upsample_factors[i];
            x = tape.conv_transpose1d(x, w, Some(b), self.channels[i + 1], k, s, (k - s) / 2);
            let mut acc: Option<Node> = None;
            for rb in &self.mrfs[i] {
                let y = rb.forward(tape, store, x);
                acc = Some(match acc {
                    None => y,
                    Some(a) => tape.add(a, y),
                });
            }
            let summed = acc.expect("at least one residual block");
            x = tape.scale(summed, 1.0 / self.mrfs[i].len() as f64);
        }
        x = tape.leaky_relu(x, 0.1);
        let w = store.leaf(tape, self.post_w);
        let b = store.leaf(tape, self.post_b);
        x = tape.conv1d(x, w, Some(b), 1, 7, 1, 3, 1);
        tape.tanh(x)
    }
}

pub struct Vec2WavModel {
    pub dims: Vec2WavDims,
    pub store: ParamStore,
    tok_emb: usize,
    mel_enc: MelEncoder,
    stage1: Vec<ConformerBlock>,
    aux_head: Linear,
    aux_emb: Linear,
    stage2: Vec<ConformerBlock>,
    gen: Generator,
}

impl Vec2WavModel {
    pub fn new(dims: Vec2WavDims, seed: u64) -> Vec2WavModel {
        let mut r = rng::stream(rng::derive(seed, "vec2wav-init"));
        let mut store = ParamStore::new();
        let d = dims.arch.d_model;
        // Token values are 1-based; row 0 is unused and the mask row is
        // never consumed because vocoder inputs must be mask-free.
        let tok_emb = store.add_normal("voc.tok_emb", vec![dims.k as usize + 2, d], 0.02, &mut r);
        let mel_enc = MelEncoder::new(
            &mut store,
            dims.n_mels,
            dims.arch.mel_channels,
            dims.arch.mel_kernel,
            d,
            &mut r,
        );
        let mk_stage = |store: &mut ParamStore, name: &str, r: &mut ChaCha8Rng| {
            (0..dims.arch.blocks_per_stage)
                .map(|i| {
                    ConformerBlock::new(
                        store,
                        &format!("{name}{i}"),
                        d,
                        dims.arch.heads,
                        dims.arch.ffn_mult,
                        dims.arch.conv_kernel,
                        r,
                    )
                })
                .collect::<Vec<_>>()
        };
        let stage1 = mk_stage(&mut store, "voc.s1.", &mut r);
        let aux_head = Linear::new(&mut store, "voc.aux_head", d, AUX_DIMS, &mut r);
        let aux_emb = Linear::new(&mut store, "voc.aux_emb", AUX_DIMS, d, &mut r);
        let stage2 = mk_stage(&mut store, "voc.s2.", &mut r);
        let gen = Generator::new(&mut store, d, &dims.arch, &mut r);
        Vec2WavModel {
            dims,
            store,
            tok_emb,
            mel_enc,
            stage1,
            aux_head,
            aux_emb,
            stage2,
            gen,
        }
    }

    pub fn samples_per_frame(&self) -> usize {
        self.dims.hop
    }

    /// Token stream to final hidden states `[n, d]` plus the predicted
    /// (normalized) auxiliary features `[n, 3]`. When `aux_norm` is given
    /// (training with ground truth) it is embedded instead of the
    /// prediction.
    pub fn semantic_encode(
        &self,
        tape: &mut Tape,
        tokens: &TokenSequence,
        prompt_mel: &Tensor,
        aux_norm: Option<&Tensor>,
    ) -> Result<(Node, Node)> {
        if tokens.is_empty() {
            return Err(Error::Request("no tokens to vocode".into()));
        }
        if prompt_mel.rows() == 0 {
            return Err(Error::Request("empty mel prompt".into()));
        }
        if prompt_mel.cols() != self.dims.n_mels {
            return Err(Error::Shape(format!(
                "prompt mel has {} bins, model expects {}",
                prompt_mel.cols(),
                self.dims.n_mels
            )));
        }
        if let Some(&bad) = tokens
            .values
            .iter()
            .find(|&&v| v == 0 || v > self.dims.k)
        {
            return Err(Error::Token(format!(
                "vocoder input token {bad} is not a clean value in 1..={}",
                self.dims.k
            )));
        }
        if let Some(aux) = aux_norm {
            if aux.rows() != tokens.len() || aux.cols() != AUX_DIMS {
                return Err(Error::Shape(format!(
                    "auxiliary features are {}x{}, expected {}x{}",
                    aux.rows(),
                    aux.cols(),
                    tokens.len(),
                    AUX_DIMS
                )));
            }
        }
        let m_prime = self.mel_enc.encode(tape, &self.store, prompt_mel);
        let ids: Vec<usize> = tokens.values.iter().map(|&v| v as usize).collect();
        let table = self.store.leaf(tape, self.tok_emb);
        let emb = tape.embedding(table, &ids);
        let pos = tape.constant(sinusoidal_positions(ids.len(), self.dims.arch.d_model));
        let mut x = tape.add(emb, pos);
        for blk in &self.stage1 {
            x = blk.forward(tape, &self.store, x, m_prime);
        }
        let aux_pred = self.aux_head.forward(tape, &self.store, x);
        let aux_used = match aux_norm {
            Some(gt) => tape.constant(gt.clone()),
            None => aux_pred,
        };
        let aux_vec = self.aux_emb.forward(tape, &self.store, aux_used);
        x = tape.add(x, aux_vec);
        for blk in &self.stage2 {
            x = blk.forward(tape, &self.store, x, m_prime);
        }
        Ok((x, aux_pred))
    }

    /// Hidden states `[n, d]` to a waveform node `[1, n * hop]`.
    pub fn generate_waveform(&self, tape: &mut Tape, hidden: Node) -> Node {
        let out = self.gen.forward(tape, &self.store, hidden);
        debug_assert_eq!(tape.value(out).rows(), 1);
        out
    }

    /// End-to-end inference: tokens + mel prompt to waveform samples.
    pub fn vocode(
        &self,
        tokens: &TokenSequence,
        prompt_mel: &Tensor,
        aux_norm: Option<&Tensor>,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let (hidden, _) = self.semantic_encode(&mut tape, tokens, prompt_mel, aux_norm)?;
        let wav = self.generate_waveform(&mut tape, hidden);
        Ok(tape.value(wav).data.clone())
    }
}

/// One discriminator convolution stack (shared shape across periods and
/// scales, independent weights).
struct DiscStack {
    convs: Vec<(usize, usize)>,
    post: (usize, usize),
    channels: Vec<usize>,
    kernel: usize,
    stride: usize,
}

impl DiscStack {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: &[usize],
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> DiscStack {
        let mut convs = Vec::with_capacity(channels.len());
        let mut cin = 1;
        for (i, &cout) in channels.iter().enumerate() {
            convs.push((
                store.add_normal(
                    &format!("{prefix}.c{i}.w"),
                    vec![cout, cin, kernel],
                    0.02,
                    rng,
                ),
                store.add_zeros(&format!("{prefix}.c{i}.b"), vec![cout, 1]),
            ));
            cin = cout;
        }
        let post = (
            store.add_normal(&format!("{prefix}.post.w"), vec![1, cin, 3], 0.02, rng),
            store.add_zeros(&format!("{prefix}.post.b"), vec![1, 1]),
        );
        DiscStack {
            convs,
            post,
            channels: channels.to_vec(),
            kernel,
            stride,
        }
    }

    /// Returns the score map and every intermediate feature map.
    fn forward(
        &self,
        tape: &mut Tape,
        leaf: &impl Fn(&mut Tape, usize) -> Node,
        x: Node,
        feats: &mut Vec<Node>,
    ) -> Node {
        let mut h = x;
        let pad = (self.kernel - 1) / 2;
        for (i, (w, b)) in self.convs.iter().enumerate() {
            let wn = leaf(tape, *w);
            let bn = leaf(tape, *b);
            h = tape.conv1d(h, wn, Some(bn), self.channels[i], self.kernel, self.stride, pad, 1);
            feats.push(h);
            h = tape.leaky_relu(h, 0.1);
        }
        let wn = leaf(tape, self.post.0);
        let bn = leaf(tape, self.post.1);
        let score = tape.conv1d(h, wn, Some(bn), 1, 3, 1, 1, 1);
        feats.push(score);
        score
    }
}

/// Multi-period and multi-scale waveform discriminators with their own
/// parameter store, so generator and discriminator optimizers never share
/// state.
pub struct Discriminators {
    pub store: ParamStore,
    periods: Vec<usize>,
    mpd: Vec<DiscStack>,
    msd: Vec<DiscStack>,
}

impl Discriminators {
    pub fn new(arch: &Vec2WavSection, seed: u64) -> Discriminators {
        let mut r = rng::stream(rng::derive(seed, "vec2wav-disc-init"));
        let mut store = ParamStore::new();
        let mpd = arch
            .periods
            .iter()
            .map(|&p| DiscStack::new(&mut store, &format!("mpd{p}"), &arch.disc_channels, 5, 3, &mut r))
            .collect();
        let msd = (0..arch.msd_scales)
            .map(|s| DiscStack::new(&mut store, &format!("msd{s}"), &arch.disc_channels, 15, 4, &mut r))
            .collect();
        Discriminators {
            store,
            periods: arch.periods.clone(),
            mpd,
            msd,
        }
    }

    /// Run every sub-discriminator on a `[1, T]` waveform. With
    /// `trainable` the parameters are registered for gradients; otherwise
    /// they enter the tape as constants (the generator's view).
    pub fn forward_all(
        &self,
        tape: &mut Tape,
        trainable: bool,
        x: Node,
    ) -> (Vec<Node>, Vec<Node>) {
        let store = &self.store;
        let leaf = move |tape: &mut Tape, idx: usize| -> Node {
            if trainable {
                store.leaf(tape, idx)
            } else {
                tape.constant(store.tensor(idx).clone())
            }
        };
        let mut scores = Vec::new();
        let mut feats = Vec::new();
        let t = tape.value(x).cols();
        // Period discriminators view the signal as interleaved phases and
        // share convolution weights across the phases of one period.
        for (stack, &p) in self.mpd.iter().zip(&self.periods) {
            let rem = t % p;
            let xp = if rem == 0 {
                x
            } else {
                tape.reflect_pad_cols(x, 0, p - rem)
            };
            for phase in 0..p {
                let xr = tape.stride_slice_cols(xp, phase, p);
                scores.push(stack.forward(tape, &leaf, xr, &mut feats));
            }
        }
        let mut cur = x;
        for (s, stack) in self.msd.iter().enumerate() {
            if s > 0 {
                cur = tape.avg_pool1d(cur, 4, 2);
            }
            scores.push(stack.forward(tape, &leaf, cur, &mut feats));
        }
        (scores, feats)
    }
}

fn mean_sq_dist_to(tape: &mut Tape, s: Node, target: f64) -> Node {
    let d = if target == 0.0 {
        s
    } else {
        let shape = tape.value(s).shape.clone();
        let len = tape.value(s).len();
        let t = tape.constant(Tensor::new(shape, vec![target; len]));
        tape.sub(s, t)
    };
    let sq = tape.mul(d, d);
    tape.mean_all(sq)
}

fn add_into(tape: &mut Tape, acc: Option<Node>, v: Node) -> Option<Node> {
    Some(match acc {
        None => v,
        Some(a) => tape.add(a, v),
    })
}

/// Generator-side loss pieces for one step. `total` is the node to
/// backprop; the scalar fields record the components' values.
pub struct GenLossParts {
    pub total: Node,
    pub mel_l1: f64,
    pub aux_l1: f64,
    pub adversarial: f64,
    pub feature_matching: f64,
    /// Generated waveform samples (for the discriminator step).
    pub fake: Vec<f64>,
}

/// Full generator objective: weighted mel reconstruction and auxiliary L1
/// always; least-squares adversarial and feature-matching terms only once
/// `step >= warmup`. During warmup the adversarial components are exactly
/// zero and the discriminators are never evaluated.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss(
    model: &Vec2WavModel,
    disc: &Discriminators,
    tape: &mut Tape,
    tokens: &TokenSequence,
    prompt_mel: &Tensor,
    aux_gt_norm: &Tensor,
    wav_real: &[f64],
    extractor: &MelExtractor,
    cfg: &TrainVec2WavSection,
    step: usize,
) -> Result<GenLossParts> {
    if wav_real.len() != tokens.len() * model.dims.hop {
        return Err(Error::Shape(format!(
            "target waveform has {} samples, expected {} for {} frames",
            wav_real.len(),
            tokens.len() * model.dims.hop,
            tokens.len()
        )));
    }
    let (hidden, aux_pred) = model.semantic_encode(tape, tokens, prompt_mel, Some(aux_gt_norm))?;
    let wav_fake = model.generate_waveform(tape, hidden);
    let fake = tape.value(wav_fake).data.clone();

    let mel_fake = extractor.mel_node(tape, wav_fake);
    let mel_real = tape.constant(extractor.extract(wav_real));
    let d = tape.sub(mel_fake, mel_real);
    let a = tape.abs(d);
    let mel_l1 = tape.mean_all(a);

    let aux_const = tape.constant(aux_gt_norm.clone());
    let d = tape.sub(aux_pred, aux_const);
    let a = tape.abs(d);
    let aux_l1 = tape.mean_all(a);

    let mel_w = tape.scale(mel_l1, cfg.lambda_mel);
    let aux_w = tape.scale(aux_l1, cfg.lambda_aux);
    let recon = tape.add(mel_w, aux_w);

    if step < cfg.warmup {
        return Ok(GenLossParts {
            total: recon,
            mel_l1: tape.value_scalar(mel_l1),
            aux_l1: tape.value_scalar(aux_l1),
            adversarial: 0.0,
            feature_matching: 0.0,
            fake,
        });
    }

    let real = tape.constant(Tensor::new(vec![1, wav_real.len()], wav_real.to_vec()));
    let (scores_f, feats_f) = disc.forward_all(tape, false, wav_fake);
    let (_, feats_r) = disc.forward_all(tape, false, real);
    let mut adv: Option<Node> = None;
    for s in scores_f {
        let m = mean_sq_dist_to(tape, s, 1.0);
        adv = add_into(tape, adv, m);
    }
    let adv = adv.expect("at least one discriminator score");
    let mut fm: Option<Node> = None;
    for (ff, fr) in feats_f.iter().zip(&feats_r) {
        let d = tape.sub(*ff, *fr);
        let a = tape.abs(d);
        let m = tape.mean_all(a);
        fm = add_into(tape, fm, m);
    }
    let fm = fm.expect("at least one feature map");
    let fm_w = tape.scale(fm, cfg.lambda_fm);
    let adv_total = tape.add(adv, fm_w);
    let total = tape.add(recon, adv_total);
    Ok(GenLossParts {
        total,
        mel_l1: tape.value_scalar(mel_l1),
        aux_l1: tape.value_scalar(aux_l1),
        adversarial: tape.value_scalar(adv),
        feature_matching: tape.value_scalar(fm),
        fake,
    })
}

/// Least-squares discriminator objective on detached waveforms.
pub fn discriminator_loss(
    disc: &Discriminators,
    tape: &mut Tape,
    wav_real: &[f64],
    wav_fake: &[f64],
) -> Result<Node> {
    if wav_real.len() != wav_fake.len() {
        return Err(Error::Shape(format!(
            "real ({}) and fake ({}) waveform lengths differ",
            wav_real.len(),
            wav_fake.len()
        )));
    }
    let real = tape.constant(Tensor::new(vec![1, wav_real.len()], wav_real.to_vec()));
    let fake = tape.constant(Tensor::new(vec![1, wav_fake.len()], wav_fake.to_vec()));
    let (scores_r, _) = disc.forward_all(tape, true, real);
    let (scores_f, _) = disc.forward_all(tape, true, fake);
    let mut loss: Option<Node> = None;
    for s in scores_r {
        let m = mean_sq_dist_to(tape, s, 1.0);
        loss = add_into(tape, loss, m);
    }
    for s in scores_f {
        let m = mean_sq_dist_to(tape, s, 0.0);
        loss = add_into(tape, loss, m);
    }
    Ok(loss.expect("at least one discriminator score"))
}

/// Prompt/target split for vocoder training: the prompt length is drawn
/// uniformly from the configured range and the remainder is the target.
/// Draws that do not leave at least two target frames are rejected so the
/// accepted prompt lengths stay uniform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocoderSplit {
    pub prompt_frames: usize,
    pub target_frames: usize,
}

pub fn split_for_training(
    total_frames: usize,
    cfg: &TrainVec2WavSection,
    frames_per_second: f64,
    rng: &mut ChaCha8Rng,
) -> Option<VocoderSplit> {
    let pmin = (cfg.prompt_min_secs * frames_per_second).round() as usize;
    let pmax = (cfg.prompt_max_secs * frames_per_second).round() as usize;
    let p = rng.gen_range(pmin.max(1)..=pmax.max(1));
    if total_frames < p + 2 {
        return None;
    }
    Some(VocoderSplit {
        prompt_frames: p,
        target_frames: total_frames - p,
    })
}

/// One prepared vocoder-training utterance.
#[derive(Debug, Clone)]
pub struct VocoderUtterance {
    pub tokens: TokenSequence,
    pub samples: Vec<f64>,
    /// Normalized auxiliary features, one row per token frame.
    pub aux_norm: Tensor,
}

pub struct VocoderTrainStats {
    pub steps: usize,
    pub gen_totals: Vec<f64>,
    pub mel_l1: Vec<f64>,
    pub adversarial: Vec<f64>,
    pub disc_losses: Vec<f64>,
    /// Utterance draws rejected because the prompt did not fit.
    pub skipped: usize,
}

/// Alternating generator/discriminator training with the warmup gate.
pub fn train(
    model: &mut Vec2WavModel,
    disc: &mut Discriminators,
    corpus: &[VocoderUtterance],
    cfg: &TrainVec2WavSection,
    extractor: &MelExtractor,
    frames_per_second: f64,
    seed: u64,
    mut progress: impl FnMut(usize, &GenLossParts),
) -> Result<VocoderTrainStats> {
    use crate::nn::{AdamW, AdamWConfig};
    if corpus.is_empty() {
        return Err(Error::Request("empty vocoder training corpus".into()));
    }
    let hop = model.dims.hop;
    let mut opt_gen = AdamW::new(
        AdamWConfig {
            lr: cfg.gen_lr,
            grad_clip: cfg.grad_clip,
            weight_decay: 0.0,
            ..Default::default()
        },
        &model.store,
    );
    let mut opt_disc = AdamW::new(
        AdamWConfig {
            lr: cfg.disc_lr,
            grad_clip: cfg.grad_clip,
            weight_decay: 0.0,
            ..Default::default()
        },
        &disc.store,
    );
    let mut split_rng = rng::stream(rng::derive(seed, "vec2wav-split"));
    let mut crop_rng = rng::stream(rng::derive(seed, "vec2wav-crop"));
    let mut stats = VocoderTrainStats {
        steps: cfg.steps,
        gen_totals: Vec::with_capacity(cfg.steps),
        mel_l1: Vec::with_capacity(cfg.steps),
        adversarial: Vec::with_capacity(cfg.steps),
        disc_losses: Vec::with_capacity(cfg.steps),
        skipped: 0,
    };
    for step in 0..cfg.steps {
        // Find a split, skipping utterances the drawn prompt cannot fit.
        let mut chosen = None;
        for offset in 0..corpus.len().max(8) {
            let utt = &corpus[(step + offset) % corpus.len()];
            let usable = utt.tokens.len().min(utt.samples.len() / hop);
            match split_for_training(usable, cfg, frames_per_second, &mut split_rng) {
                Some(split) => {
                    chosen = Some((utt, split));
                    break;
                }
                None => stats.skipped += 1,
            }
        }
        let (utt, split) = chosen.ok_or_else(|| {
            Error::Request("no utterance long enough for the prompt range".into())
        })?;
        let crop_len = cfg.crop_frames.max(1).min(split.target_frames);
        let t0 = split.prompt_frames
            + crop_rng.gen_range(0..=split.target_frames - crop_len);
        let tokens = TokenSequence::new(utt.tokens.values[t0..t0 + crop_len].to_vec());
        let wav_real = &utt.samples[t0 * hop..(t0 + crop_len) * hop];
        let aux_rows: Vec<f64> = utt.aux_norm.data
            [t0 * AUX_DIMS..(t0 + crop_len) * AUX_DIMS]
            .to_vec();
        let aux = Tensor::new(vec![crop_len, AUX_DIMS], aux_rows);
        let prompt_wav = &utt.samples[..split.prompt_frames * hop];
        let prompt_mel = extractor.extract(prompt_wav);

        let mut tape = Tape::new();
        let parts = generator_loss(
            model, disc, &mut tape, &tokens, &prompt_mel, &aux, wav_real, extractor, cfg, step,
        )?;
        let grads = tape.backward(parts.total);
        opt_gen.step(&mut model.store, &grads);
        stats.gen_totals.push(tape.value_scalar(parts.total));
        stats.mel_l1.push(parts.mel_l1);
        stats.adversarial.push(parts.adversarial);

        if step >= cfg.warmup {
            let mut dtape = Tape::new();
            let dloss = discriminator_loss(disc, &mut dtape, wav_real, &parts.fake)?;
            let dgrads = dtape.backward(dloss);
            opt_disc.step(&mut disc.store, &dgrads);
            stats.disc_losses.push(dtape.value_scalar(dloss));
        } else {
            stats.disc_losses.push(0.0);
        }
        progress(step, &parts);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MelConfig;

    fn tiny_arch() -> Vec2WavSection {
        Vec2WavSection {
            d_model: 16,
            heads: 2,
            blocks_per_stage: 1,
            ffn_mult: 2,
            conv_kernel: 3,
            mel_kernel: 3,
            mel_channels: 2,
            upsample_factors: vec![2, 2],
            upsample_kernels: vec![4, 4],
            generator_channels: 8,
            resblock_kernels: vec![3],
            resblock_dilations: vec![vec![1, 2]],
            periods: vec![2, 3],
            msd_scales: 2,
            disc_channels: vec![2, 4],
        }
    }

    fn tiny_model(k: u32, n_mels: usize) -> Vec2WavModel {
        Vec2WavModel::new(Vec2WavDims::from_config(&tiny_arch(), k, n_mels), 5)
    }

    fn tiny_mel_cfg() -> MelConfig {
        MelConfig {
            sample_rate: 160,
            n_fft: 16,
            win: 16,
            hop: 4,
            n_mels: 6,
            fmin: 0.0,
            fmax: 80.0,
            log_floor: 1e-10,
        }
    }

    fn random_mel(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed);
        Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| r.gen_range(-4.0..1.0)).collect(),
        )
    }

    fn random_tokens(n: usize, k: u32, seed: u64) -> TokenSequence {
        let mut r = rng::stream(seed);
        TokenSequence::new((0..n).map(|_| r.gen_range(1..=k)).collect())
    }

    #[test]
    fn waveform_length_law_exact() {
        let model = tiny_model(6, 6);
        let prompt = random_mel(4, 6, 1);
        for n in [1usize, 2, 3, 7, 12] {
            let tokens = random_tokens(n, 6, n as u64);
            let wav = model.vocode(&tokens, &prompt, None).unwrap();
            assert_eq!(wav.len(), n * model.samples_per_frame());
            assert!(wav.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        }
    }

    #[test]
    fn prompt_permutation_leaves_output_unchanged() {
        let model = tiny_model(5, 6);
        let tokens = random_tokens(9, 5, 3);
        let prompt = random_mel(7, 6, 4);
        // Reverse and an arbitrary shuffle of prompt rows.
        let perms: Vec<Vec<usize>> = vec![
            (0..7).rev().collect(),
            vec![3, 0, 6, 1, 5, 2, 4],
        ];
        let base = model.vocode(&tokens, &prompt, None).unwrap();
        for perm in perms {
            let mut data = Vec::new();
            for &i in &perm {
                data.extend_from_slice(prompt.row(i));
            }
            let shuffled = Tensor::new(vec![7, 6], data);
            let out = model.vocode(&tokens, &shuffled, None).unwrap();
            let num: f64 = base
                .iter()
                .zip(&out)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = base.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            assert!(num / den < 1e-9, "relative change {}", num / den);
        }
    }

    #[test]
    fn prompt_length_freedom() {
        let model = tiny_model(5, 6);
        let tokens = random_tokens(6, 5, 9);
        for len in [1usize, 2, 5, 37, 120] {
            let prompt = random_mel(len, 6, len as u64);
            let wav = model.vocode(&tokens, &prompt, None).unwrap();
            assert_eq!(wav.len(), 6 * model.samples_per_frame());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = tiny_model(5, 6);
        let prompt = random_mel(4, 6, 2);
        let empty = TokenSequence::new(vec![]);
        assert!(model.vocode(&empty, &prompt, None).is_err());
        // Mask value for K=5 is 6.
        let masked = TokenSequence::new(vec![1, 6, 2]);
        assert!(model.vocode(&masked, &prompt, None).is_err());
        let no_prompt = Tensor::new(vec![0, 6], vec![]);
        let tokens = random_tokens(3, 5, 7);
        assert!(model.vocode(&tokens, &no_prompt, None).is_err());
        let wrong_bins = random_mel(4, 5, 8);
        assert!(model.vocode(&tokens, &wrong_bins, None).is_err());
        let bad_aux = Tensor::new(vec![2, AUX_DIMS], vec![0.0; 6]);
        assert!(model.vocode(&tokens, &prompt, Some(&bad_aux)).is_err());
    }

    #[test]
    fn aux_conditioning_changes_output() {
        let model = tiny_model(5, 6);
        let tokens = random_tokens(5, 5, 11);
        let prompt = random_mel(4, 6, 12);
        let base = model.vocode(&tokens, &prompt, None).unwrap();
        let mut alt_aux = Tensor::new(vec![5, AUX_DIMS], vec![0.5; 5 * AUX_DIMS]);
        alt_aux.data[0] = 0.9;
        let alt = model.vocode(&tokens, &prompt, Some(&alt_aux)).unwrap();
        let diff: f64 = base.iter().zip(&alt).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-9, "auxiliary features had no effect");
    }

    #[test]
    fn normalize_aux_maps_to_unit_scales() {
        let raw = Tensor::new(
            vec![2, 3],
            vec![200.0, -23.0, 0.0, 400.0, 2.0, 1.0],
        );
        let n = normalize_aux(&raw);
        assert!((n.data[0] - 0.5).abs() < 1e-12);
        assert!((n.data[1] - 0.0).abs() < 1e-12);
        assert!((n.data[3] - 1.0).abs() < 1e-12);
        assert!((n.data[4] - 1.0).abs() < 1e-12);
        assert!((n.data[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warmup_gates_adversarial_terms_exactly() {
        let model = tiny_model(4, 6);
        let disc = Discriminators::new(&tiny_arch(), 6);
        let extractor = MelExtractor::new(tiny_mel_cfg());
        let mut cfg = TrainVec2WavSection::default();
        cfg.warmup = 10;
        let tokens = random_tokens(6, 4, 13);
        let hop = model.samples_per_frame();
        let mut r = rng::stream(14);
        let wav_real: Vec<f64> = (0..6 * hop).map(|_| r.gen_range(-0.5..0.5)).collect();
        let prompt = random_mel(4, 6, 15);
        let aux = Tensor::new(vec![6, AUX_DIMS], vec![0.4; 6 * AUX_DIMS]);

        let mut tape = Tape::new();
        let parts = generator_loss(
            &model, &disc, &mut tape, &tokens, &prompt, &aux, &wav_real, &extractor, &cfg, 3,
        )
        .unwrap();
        assert_eq!(parts.adversarial, 0.0);
        assert_eq!(parts.feature_matching, 0.0);
        let expect = cfg.lambda_mel * parts.mel_l1 + cfg.lambda_aux * parts.aux_l1;
        assert!((tape.value_scalar(parts.total) - expect).abs() < 1e-9);

        let mut tape = Tape::new();
        let parts = generator_loss(
            &model, &disc, &mut tape, &tokens, &prompt, &aux, &wav_real, &extractor, &cfg, 10,
        )
        .unwrap();
        assert!(parts.adversarial > 0.0);
        assert!(parts.feature_matching > 0.0);
        let total = tape.value_scalar(parts.total);
        assert!(total.is_finite() && total > 0.0);
    }

    #[test]
    fn discriminator_loss_trains_only_disc_params() {
        let model = tiny_model(4, 6);
        let disc = Discriminators::new(&tiny_arch(), 16);
        let hop = model.samples_per_frame();
        let mut r = rng::stream(17);
        let real: Vec<f64> = (0..4 * hop).map(|_| r.gen_range(-0.5..0.5)).collect();
        let fake: Vec<f64> = (0..4 * hop).map(|_| r.gen_range(-0.5..0.5)).collect();
        let mut tape = Tape::new();
        let loss = discriminator_loss(&disc, &mut tape, &real, &fake).unwrap();
        assert!(tape.value_scalar(loss) > 0.0);
        let grads = tape.backward(loss);
        let touched: std::collections::BTreeSet<usize> =
            grads.iter().map(|(i, _)| *i).collect();
        assert_eq!(touched.len(), disc.store.len(), "every disc param gets a gradient");
        assert!(discriminator_loss(&disc, &mut Tape::new(), &real, &fake[..10]).is_err());
    }

    #[test]
    fn generator_loss_gradients_match_finite_differences() {
        let mut model = tiny_model(3, 6);
        let mut disc = Discriminators::new(&tiny_arch(), 18);
        let extractor = MelExtractor::new(tiny_mel_cfg());
        let mut cfg = TrainVec2WavSection::default();
        cfg.warmup = 0; // exercise the full adversarial path
        cfg.lambda_mel = 2.0;
        // Evaluate at a generic point: spreading the parameters (beyond
        // the tiny init) keeps piecewise-linear activations away from
        // their kinks within the finite-difference window.
        let mut spread = rng::stream(97);
        for store in [&mut model.store, &mut disc.store] {
            for p in 0..store.len() {
                for v in store.tensor_mut(p).data.iter_mut() {
                    *v += spread.gen_range(-0.15..0.15);
                }
            }
        }
        let tokens = random_tokens(4, 3, 19);
        let hop = model.samples_per_frame();
        let mut r = rng::stream(20);
        let wav_real: Vec<f64> = (0..4 * hop).map(|_| r.gen_range(-0.5..0.5)).collect();
        let prompt = random_mel(3, 6, 21);
        let aux = Tensor::new(
            vec![4, AUX_DIMS],
            (0..4 * AUX_DIMS).map(|i| 0.1 * (i % 7) as f64).collect(),
        );
        let loss = |m: &Vec2WavModel| -> f64 {
            let mut tape = Tape::new();
            let parts = generator_loss(
                m, &disc, &mut tape, &tokens, &prompt, &aux, &wav_real, &extractor, &cfg, 5,
            )
            .unwrap();
            tape.value_scalar(parts.total)
        };
        let mut tape = Tape::new();
        let parts = generator_loss(
            &model, &disc, &mut tape, &tokens, &prompt, &aux, &wav_real, &extractor, &cfg, 5,
        )
        .unwrap();
        let grads = tape.backward(parts.total);
        let grad_map: std::collections::BTreeMap<usize, Vec<f64>> = grads.into_iter().collect();
        let h = 1e-6;
        let mut checked = 0;
        for p in 0..model.store.len() {
            let len = model.store.tensor(p).len();
            for i in [0, len / 2, len - 1]
                .into_iter()
                .collect::<std::collections::BTreeSet<_>>()
            {
                let orig = model.store.tensor(p).data[i];
                model.store.tensor_mut(p).data[i] = orig + h;
                let up = loss(&model);
                model.store.tensor_mut(p).data[i] = orig - h;
                let dn = loss(&model);
                model.store.tensor_mut(p).data[i] = orig;
                let fd = (up - dn) / (2.0 * h);
                let g = grad_map.get(&p).map(|v| v[i]).unwrap_or(0.0);
                let denom = fd.abs().max(g.abs()).max(1.0);
                assert!(
                    ((fd - g) / denom).abs() < 1e-3,
                    "param {} ({}) coord {}: fd {} vs grad {}",
                    p,
                    model.store.name(p),
                    i,
                    fd,
                    g
                );
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn split_draws_uniform_prompts_and_skips_short() {
        let mut cfg = TrainVec2WavSection::default();
        cfg.prompt_min_secs = 0.4;
        cfg.prompt_max_secs = 0.6;
        let fps = 100.0;
        let mut r = rng::stream(22);
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..5000 {
            let s = split_for_training(200, &cfg, fps, &mut r).unwrap();
            assert!(s.prompt_frames >= 40 && s.prompt_frames <= 60);
            assert_eq!(s.prompt_frames + s.target_frames, 200);
            *counts.entry(s.prompt_frames).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 21, "every prompt length in range occurs");
        // Too short for any prompt + 2 target frames.
        assert!(split_for_training(10, &cfg, fps, &mut r).is_none());
    }

    #[test]
    fn training_smoke_gates_and_decreases() {
        let k = 4u32;
        let mel_cfg = tiny_mel_cfg();
        let extractor = MelExtractor::new(mel_cfg);
        let model_dims = Vec2WavDims::from_config(&tiny_arch(), k, 6);
        let hop = model_dims.hop;
        let mut model = Vec2WavModel::new(model_dims, 23);
        let mut disc = Discriminators::new(&tiny_arch(), 24);
        let mut cfg = TrainVec2WavSection::default();
        cfg.steps = 12;
        cfg.warmup = 6;
        cfg.crop_frames = 6;
        cfg.gen_lr = 1e-3;
        cfg.prompt_min_secs = 0.4;
        cfg.prompt_max_secs = 0.6;
        // 10 frames/s at the tiny 4-sample hop and 40 Hz sample rate.
        let fps = 10.0;
        let mut r = rng::stream(25);
        let n = 40usize;
        let corpus: Vec<VocoderUtterance> = (0..2)
            .map(|_| {
                let samples: Vec<f64> =
                    (0..n * hop).map(|_| r.gen_range(-0.5..0.5)).collect();
                VocoderUtterance {
                    tokens: random_tokens(n, k, 26),
                    samples,
                    aux_norm: Tensor::new(
                        vec![n, AUX_DIMS],
                        (0..n * AUX_DIMS).map(|i| 0.05 * (i % 9) as f64).collect(),
                    ),
                }
            })
            .collect();
        let stats = train(
            &mut model,
            &mut disc,
            &corpus,
            &cfg,
            &extractor,
            fps,
            27,
            |_, _| {},
        )
        .unwrap();
        assert_eq!(stats.gen_totals.len(), 12);
        for s in 0..6 {
            assert_eq!(stats.adversarial[s], 0.0);
            assert_eq!(stats.disc_losses[s], 0.0);
        }
        assert!(stats.adversarial[6..].iter().all(|&v| v > 0.0));
        assert!(stats.disc_losses[6..].iter().all(|&v| v > 0.0));
        assert!(stats.gen_totals.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_hidden_states_stay_bounded() {
        let model = tiny_model(4, 6);
        let mut tape = Tape::inference();
        let hidden = tape.constant(Tensor::zeros(vec![5, 16]));
        let wav = model.generate_waveform(&mut tape, hidden);
        let v = tape.value(wav);
        assert_eq!(v.cols(), 5 * model.samples_per_frame());
        assert!(v.data.iter().all(|x| x.is_finite() && x.abs() <= 1.0));
    }
}

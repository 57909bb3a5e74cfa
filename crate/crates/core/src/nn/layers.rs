//! Reusable layers built on the tape: linear, layer norm, multi-head
//! attention, feed-forward, and a pre-norm transformer block.

use rand_chacha::ChaCha8Rng;

use super::{Node, ParamStore, Tape};

/// Dense layer `y = x W^T + b` with `W: [d_out, d_in]`.
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Linear {
        Linear {
            w: store.add_xavier(&format!("{prefix}.w"), d_out, d_in, rng),
            b: store.add_zeros(&format!("{prefix}.b"), vec![1, d_out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Node) -> Node {
        let w = store.leaf(tape, self.w);
        let b = store.leaf(tape, self.b);
        let y = tape.matmul_nt(x, w);
        tape.add_row(y, b)
    }
}

pub struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gain: store.add_const(&format!("{prefix}.gain"), vec![1, d], 1.0),
            bias: store.add_zeros(&format!("{prefix}.bias"), vec![1, d]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Node) -> Node {
        let g = store.leaf(tape, self.gain);
        let b = store.leaf(tape, self.bias);
        tape.layer_norm(x, g, b, self.eps)
    }
}

/// Multi-head scaled dot-product attention. Queries come from the first
/// input, keys/values from the second; pass the same node twice for
/// self-attention. No masking: every position may attend everywhere.
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> MultiHeadAttention {
        assert!(d_model % heads == 0, "d_model must divide by heads");
        MultiHeadAttention {
            wq: Linear::new(store, &format!("{prefix}.wq"), d_model, d_model, rng),
            wk: Linear::new(store, &format!("{prefix}.wk"), d_model, d_model, rng),
            wv: Linear::new(store, &format!("{prefix}.wv"), d_model, d_model, rng),
            wo: Linear::new(store, &format!("{prefix}.wo"), d_model, d_model, rng),
            heads,
            d_model,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, query: Node, kv: Node) -> Node {
        let dh = self.d_model / self.heads;
        let q = self.wq.forward(tape, store, query);
        let k = self.wk.forward(tape, store, kv);
        let v = self.wv.forward(tape, store, kv);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            head_outs.push(tape.matmul(attn, vh));
        }
        let merged = tape.concat_cols(&head_outs);
        self.wo.forward(tape, store, merged)
    }
}

pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> FeedForward {
        FeedForward {
            lin1: Linear::new(store, &format!("{prefix}.lin1"), d_model, d_hidden, rng),
            lin2: Linear::new(store, &format!("{prefix}.lin2"), d_hidden, d_model, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Node) -> Node {
        let h = self.lin1.forward(tape, store, x);
        let h = tape.silu(h);
        self.lin2.forward(tape, store, h)
    }
}

/// Pre-norm transformer block. With `cross` enabled the order is
/// self-attention, cross-attention, feed-forward, each with a residual.
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub cross: Option<(LayerNorm, MultiHeadAttention)>,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        d_hidden: usize,
        with_cross: bool,
        rng: &mut ChaCha8Rng,
    ) -> TransformerBlock {
        TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{prefix}.ln1"), d_model),
            attn: MultiHeadAttention::new(store, &format!("{prefix}.attn"), d_model, heads, rng),
            cross: if with_cross {
                Some((
                    LayerNorm::new(store, &format!("{prefix}.lnx"), d_model),
                    MultiHeadAttention::new(store, &format!("{prefix}.xattn"), d_model, heads, rng),
                ))
            } else {
                None
            },
            ln2: LayerNorm::new(store, &format!("{prefix}.ln2"), d_model),
            ffn: FeedForward::new(store, &format!("{prefix}.ffn"), d_model, d_hidden, rng),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Node,
        cross_ctx: Option<Node>,
    ) -> Node {
        let h = self.ln1.forward(tape, store, x);
        let h = self.attn.forward(tape, store, h, h);
        let mut x = tape.add(x, h);
        if let Some((lnx, xattn)) = &self.cross {
            let ctx = cross_ctx.expect("block built with cross-attention needs a context");
            let h = lnx.forward(tape, store, x);
            let h = xattn.forward(tape, store, h, ctx);
            x = tape.add(x, h);
        }
        let h = self.ln2.forward(tape, store, x);
        let h = self.ffn.forward(tape, store, h);
        tape.add(x, h)
    }
}

//! Shared helpers for unit tests: a configuration small enough that the
//! full corpus → train → infer loop runs in a couple of seconds.

use crate::config::Config;

/// Toy profile shrunk to smoke-test size: a handful of short utterances,
/// minimal model widths, and single-digit step counts.
pub(crate) fn fast_toy_config() -> Config {
    let mut cfg = Config::toy_defaults();
    cfg.toy.utterances = 4;
    cfg.toy.min_frames = 60;
    cfg.toy.max_frames = 90;
    cfg.tokenizer.k = 6;
    cfg.tokenizer.kmeans_iters = 5;
    cfg.schedule.steps = 4;
    cfg.txt2vec.d_model = 16;
    cfg.txt2vec.heads = 2;
    cfg.txt2vec.text_blocks = 1;
    cfg.txt2vec.decoder_blocks = 1;
    cfg.txt2vec.ffn_mult = 2;
    cfg.train_txt2vec.steps = 3;
    cfg.train_txt2vec.min_x0_frames = 10;
    cfg.train_txt2vec.ctx_min_secs = 0.1;
    cfg.train_txt2vec.ctx_max_secs = 0.3;
    cfg.vec2wav.d_model = 16;
    cfg.vec2wav.heads = 2;
    cfg.vec2wav.blocks_per_stage = 1;
    cfg.vec2wav.ffn_mult = 2;
    cfg.vec2wav.mel_channels = 2;
    cfg.vec2wav.generator_channels = 16;
    cfg.vec2wav.periods = vec![2, 3];
    cfg.vec2wav.msd_scales = 2;
    cfg.vec2wav.disc_channels = vec![2, 4];
    cfg.train_vec2wav.steps = 3;
    cfg.train_vec2wav.warmup = 2;
    cfg.train_vec2wav.crop_frames = 8;
    cfg.train_vec2wav.prompt_min_secs = 0.2;
    cfg.train_vec2wav.prompt_max_secs = 0.3;
    cfg
}

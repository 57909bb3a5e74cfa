//! Runtime configuration. Every section has defaults, so a config file only
//! needs the keys it overrides; the toy corpus generator writes a small
//! config tuned for single-CPU runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::MelConfig;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub audio: AudioSection,
    pub schedule: ScheduleSection,
    pub tokenizer: TokenizerSection,
    pub txt2vec: Txt2VecSection,
    pub vec2wav: Vec2WavSection,
    pub train_txt2vec: TrainTxt2VecSection,
    pub train_vec2wav: TrainVec2WavSection,
    pub toy: ToySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioSection {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for AudioSection {
    fn default() -> AudioSection {
        AudioSection {
            sample_rate: 16_000,
            n_fft: 1024,
            win: 640,
            hop: 160,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8_000.0,
        }
    }
}

impl AudioSection {
    pub fn mel_config(&self) -> MelConfig {
        MelConfig {
            sample_rate: self.sample_rate,
            n_fft: self.n_fft,
            win: self.win,
            hop: self.hop,
            n_mels: self.n_mels,
            fmin: self.fmin,
            fmax: self.fmax,
            log_floor: MelConfig::default().log_floor,
        }
    }

    /// Frames per second; durations and context lengths measured in frames.
    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub terminal_alpha_bar: f64,
    pub terminal_gamma_bar: f64,
}

impl Default for ScheduleSection {
    fn default() -> ScheduleSection {
        ScheduleSection {
            steps: 100,
            terminal_alpha_bar: 1e-5,
            terminal_gamma_bar: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    /// Number of real token values K; the mask index is K+1.
    pub k: usize,
    pub kmeans_iters: usize,
}

impl Default for TokenizerSection {
    fn default() -> TokenizerSection {
        TokenizerSection {
            k: 16,
            kmeans_iters: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Txt2VecSection {
    pub d_model: usize,
    pub heads: usize,
    pub decoder_blocks: usize,
    pub text_blocks: usize,
    pub ffn_mult: usize,
    pub duration_kernel: usize,
    /// Sampling temperature over predicted token distributions.
    pub temperature: f64,
}

impl Default for Txt2VecSection {
    fn default() -> Txt2VecSection {
        Txt2VecSection {
            d_model: 512,
            heads: 8,
            decoder_blocks: 12,
            text_blocks: 6,
            ffn_mult: 4,
            duration_kernel: 3,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Vec2WavSection {
    pub d_model: usize,
    pub heads: usize,
    /// Conformer blocks per semantic-encoder stage (two stages).
    pub blocks_per_stage: usize,
    pub ffn_mult: usize,
    /// Depthwise kernel inside each Conformer block.
    pub conv_kernel: usize,
    /// Mel-encoder 1-D convolution kernel.
    pub mel_kernel: usize,
    /// Mel-encoder convolution output channels (per frame, across bins).
    pub mel_channels: usize,
    pub upsample_factors: Vec<usize>,
    pub upsample_kernels: Vec<usize>,
    /// Generator channels before the first upsampling stage.
    pub generator_channels: usize,
    pub resblock_kernels: Vec<usize>,
    pub resblock_dilations: Vec<Vec<usize>>,
    pub periods: Vec<usize>,
    pub msd_scales: usize,
    /// Channel progression shared by the discriminator stacks.
    pub disc_channels: Vec<usize>,
}

impl Default for Vec2WavSection {
    fn default() -> Vec2WavSection {
        Vec2WavSection {
            d_model: 184,
            heads: 2,
            blocks_per_stage: 2,
            ffn_mult: 4,
            conv_kernel: 5,
            mel_kernel: 5,
            mel_channels: 8,
            upsample_factors: vec![8, 5, 4],
            upsample_kernels: vec![16, 11, 8],
            generator_channels: 512,
            resblock_kernels: vec![3, 7, 11],
            resblock_dilations: vec![vec![1, 3, 5], vec![1, 3, 5], vec![1, 3, 5]],
            periods: vec![2, 3, 5, 7, 11],
            msd_scales: 3,
            disc_channels: vec![16, 64, 256],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainTxt2VecSection {
    pub steps: usize,
    pub lr: f64,
    /// Cosine-decay floor as a fraction of `lr`; 1.0 keeps the rate constant.
    pub lr_final_frac: f64,
    pub grad_clip: f64,
    pub log_every: usize,
    /// Loss weight on the diffusion term.
    pub gamma_loss: f64,
    /// Weight of the auxiliary clean-token cross-entropy inside the
    /// diffusion term.
    pub aux_ce_weight: f64,
    /// Segmentation proportions: both contexts / A only / none.
    pub prop_both: f64,
    pub prop_a_only: f64,
    pub prop_none: f64,
    pub min_x0_frames: usize,
    pub ctx_min_secs: f64,
    pub ctx_max_secs: f64,
}

impl Default for TrainTxt2VecSection {
    fn default() -> TrainTxt2VecSection {
        TrainTxt2VecSection {
            steps: 1000,
            lr: 1e-3,
            lr_final_frac: 1.0,
            grad_clip: 1.0,
            log_every: 50,
            gamma_loss: 1.0,
            aux_ce_weight: 1e-3,
            prop_both: 0.6,
            prop_a_only: 0.3,
            prop_none: 0.1,
            min_x0_frames: 100,
            ctx_min_secs: 2.0,
            ctx_max_secs: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainVec2WavSection {
    pub steps: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub grad_clip: f64,
    pub log_every: usize,
    /// Steps before adversarial terms switch on.
    pub warmup: usize,
    /// Random target crop per step, in frames.
    pub crop_frames: usize,
    pub lambda_mel: f64,
    pub lambda_fm: f64,
    pub lambda_aux: f64,
    pub prompt_min_secs: f64,
    pub prompt_max_secs: f64,
}

impl Default for TrainVec2WavSection {
    fn default() -> TrainVec2WavSection {
        TrainVec2WavSection {
            steps: 500,
            gen_lr: 2e-4,
            disc_lr: 2e-4,
            grad_clip: 0.0,
            log_every: 50,
            warmup: 200,
            crop_frames: 24,
            lambda_mel: 45.0,
            lambda_fm: 2.0,
            lambda_aux: 1.0,
            prompt_min_secs: 2.0,
            prompt_max_secs: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub utterances: usize,
    pub phoneme_count: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub speakers: usize,
}

impl Default for ToySection {
    fn default() -> ToySection {
        ToySection {
            utterances: 50,
            phoneme_count: 8,
            min_frames: 120,
            max_frames: 200,
            speakers: 1,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.tokenizer.k < 2 {
            return fail("tokenizer.k must be at least 2".into());
        }
        if self.schedule.steps == 0 {
            return fail("schedule.steps must be positive".into());
        }
        let prop_sum = self.train_txt2vec.prop_both
            + self.train_txt2vec.prop_a_only
            + self.train_txt2vec.prop_none;
        if (prop_sum - 1.0).abs() > 1e-9 {
            return fail(format!(
                "segmentation proportions sum to {prop_sum}, expected 1"
            ));
        }
        if self.txt2vec.d_model % self.txt2vec.heads != 0 {
            return fail("txt2vec.d_model must divide by txt2vec.heads".into());
        }
        if self.vec2wav.d_model % self.vec2wav.heads != 0 {
            return fail("vec2wav.d_model must divide by vec2wav.heads".into());
        }
        let up: usize = self.vec2wav.upsample_factors.iter().product();
        if up != self.audio.hop {
            return fail(format!(
                "upsample factors produce {up} samples per frame, hop is {}",
                self.audio.hop
            ));
        }
        if self.vec2wav.upsample_factors.len() != self.vec2wav.upsample_kernels.len() {
            return fail("upsample_factors and upsample_kernels lengths differ".into());
        }
        for (&k, &s) in self
            .vec2wav
            .upsample_kernels
            .iter()
            .zip(&self.vec2wav.upsample_factors)
        {
            if k < s || (k - s) % 2 != 0 {
                return fail(format!(
                    "upsample kernel {k} with factor {s} breaks the exact length law \
                     (kernel minus factor must be even and nonnegative)"
                ));
            }
        }
        if self.vec2wav.resblock_kernels.len() != self.vec2wav.resblock_dilations.len() {
            return fail("resblock_kernels and resblock_dilations lengths differ".into());
        }
        if self.vec2wav.mel_channels == 0 || self.vec2wav.mel_kernel % 2 == 0 {
            return fail("mel encoder needs channels >= 1 and an odd kernel".into());
        }
        if self.txt2vec.duration_kernel % 2 == 0 || self.vec2wav.conv_kernel % 2 == 0 {
            return fail("convolution kernels must be odd to preserve length".into());
        }
        if self.train_vec2wav.prompt_min_secs > self.train_vec2wav.prompt_max_secs
            || self.train_vec2wav.prompt_min_secs <= 0.0
        {
            return fail("vocoder prompt seconds range is empty".into());
        }
        if !(self.train_txt2vec.lr_final_frac > 0.0 && self.train_txt2vec.lr_final_frac <= 1.0) {
            return fail("train_txt2vec.lr_final_frac must lie in (0, 1]".into());
        }
        if self.train_txt2vec.ctx_min_secs > self.train_txt2vec.ctx_max_secs {
            return fail("ctx_min_secs exceeds ctx_max_secs".into());
        }
        if self.toy.min_frames > self.toy.max_frames || self.toy.min_frames == 0 {
            return fail("toy frame range is empty".into());
        }
        if self.toy.speakers == 0 || self.toy.utterances == 0 || self.toy.phoneme_count == 0 {
            return fail("toy corpus sizes must be positive".into());
        }
        Ok(())
    }

    /// Small sizes for single-CPU runs; written next to generated toy
    /// corpora so the whole pipeline trains in minutes.
    pub fn toy_defaults() -> Config {
        let mut cfg = Config::default();
        cfg.txt2vec = Txt2VecSection {
            d_model: 96,
            heads: 4,
            decoder_blocks: 2,
            text_blocks: 2,
            ffn_mult: 2,
            duration_kernel: 3,
            // Overfit sampling: sharpen the predicted clean-token
            // distribution toward its mode.
            temperature: 0.2,
        };
        cfg.vec2wav = Vec2WavSection {
            d_model: 64,
            heads: 2,
            blocks_per_stage: 1,
            ffn_mult: 2,
            conv_kernel: 5,
            mel_kernel: 5,
            mel_channels: 4,
            upsample_factors: vec![8, 5, 4],
            upsample_kernels: vec![16, 11, 8],
            generator_channels: 64,
            resblock_kernels: vec![3],
            resblock_dilations: vec![vec![1, 3]],
            periods: vec![2, 3, 5, 7, 11],
            msd_scales: 2,
            disc_channels: vec![8, 16, 32],
        };
        cfg.train_txt2vec.steps = 20_000;
        cfg.train_txt2vec.lr = 2e-3;
        cfg.train_txt2vec.lr_final_frac = 0.05;
        // The variational term carries almost no token-identity signal at
        // T=100 (posterior targets are dominated by stay transitions), so
        // overfitting leans on the clean-token cross-entropy.
        cfg.train_txt2vec.aux_ce_weight = 1.0;
        // Toy utterances run 1.2-2 s, so context draws must shrink with
        // them or the A-only segmentation would nearly always resample.
        cfg.train_txt2vec.min_x0_frames = 40;
        cfg.train_txt2vec.ctx_min_secs = 0.4;
        cfg.train_txt2vec.ctx_max_secs = 0.8;
        cfg.train_vec2wav.steps = 400;
        cfg.train_vec2wav.gen_lr = 1e-3;
        cfg.train_vec2wav.disc_lr = 5e-4;
        cfg.train_vec2wav.warmup = 200;
        cfg.train_vec2wav.crop_frames = 24;
        // Toy utterances are shorter than the full-scale 2-3 s prompts.
        cfg.train_vec2wav.prompt_min_secs = 0.4;
        cfg.train_vec2wav.prompt_max_secs = 0.6;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        let toy = Config::toy_defaults();
        toy.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        toy.save(&path).unwrap();
        let back = Config::load(&path).unwrap();
        assert_eq!(back.txt2vec, toy.txt2vec);
        assert_eq!(back.vec2wav, toy.vec2wav);
        assert_eq!(back.audio, toy.audio);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.toml");
        std::fs::write(&path, "[tokenizer]\nk = 32\n").unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.tokenizer.k, 32);
        assert_eq!(cfg.audio.hop, 160);
    }

    #[test]
    fn rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            "[train_txt2vec]\nprop_both = 0.9\n",
            "[vec2wav]\nupsample_factors = [8, 5, 2]\n",
            "[vec2wav]\nupsample_kernels = [15, 11, 8]\n",
            "[txt2vec]\nd_model = 65\n",
            "[unknown_section]\nx = 1\n",
        ];
        for (i, text) in cases.iter().enumerate() {
            let path = dir.path().join(format!("bad{i}.toml"));
            std::fs::write(&path, text).unwrap();
            assert!(Config::load(&path).is_err(), "case {i} should fail");
        }
    }
}

//! End-to-end orchestration: corpus preparation, training entry points,
//! checkpoint formats, the unified continuation/editing inference (token
//! generation followed by context-prompted vocoding), and evaluation
//! plumbing (mel distance, speaker-similarity reports).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, Waveform};
use crate::config::{AudioSection, Config};
use crate::data::{Manifest, PhonemeVocab, PreparedCorpus, Tokenizer};
use crate::diffusion::{build_schedule, ScheduleParams, TokenSequence, TransitionSchedule};
use crate::error::{Error, Result};
use crate::features::{extract_aux, MelExtractor, PitchConfig};
use crate::nn::{ParamDump, Tensor};
use crate::rng;
use crate::txt2vec::{self, EditInputs, Txt2VecDims, Txt2VecModel};
use crate::vec2wav::{self, normalize_aux, Discriminators, Vec2WavDims, Vec2WavModel};

pub const TXT2VEC_FILE: &str = "txt2vec.json";
pub const VEC2WAV_FILE: &str = "vec2wav.json";
pub const TOKENIZER_FILE: &str = "tokenizer.json";

// ---------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------

/// Serialized acoustic-model state. The schedule is stored in its exact
/// textual form and rebuilt (and verified) at load time; the audio section
/// rides along so inference never silently runs with mismatched framing.
#[derive(Serialize, Deserialize)]
pub struct Txt2VecCheckpoint {
    pub dims: Txt2VecDims,
    pub audio: AudioSection,
    pub schedule_kv: String,
    pub vocab: Vec<String>,
    pub temperature: f64,
    pub params: ParamDump,
}

#[derive(Serialize, Deserialize)]
pub struct Vec2WavCheckpoint {
    pub dims: Vec2WavDims,
    pub audio: AudioSection,
    pub params: ParamDump,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string(value)
        .map_err(|e| Error::Checkpoint(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, s).map_err(Error::Io)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(Error::Io)?;
    serde_json::from_str(&s)
        .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))
}

pub fn save_txt2vec(
    dir: &Path,
    model: &Txt2VecModel,
    sched: &TransitionSchedule,
    vocab: &PhonemeVocab,
    audio: &AudioSection,
    temperature: f64,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(Error::Io)?;
    let path = dir.join(TXT2VEC_FILE);
    write_json(
        &path,
        &Txt2VecCheckpoint {
            dims: model.dims.clone(),
            audio: audio.clone(),
            schedule_kv: sched.to_kv_string(),
            vocab: vocab.symbols.clone(),
            temperature,
            params: model.store.dump(),
        },
    )?;
    Ok(path)
}

pub struct LoadedTxt2Vec {
    pub model: Txt2VecModel,
    pub sched: TransitionSchedule,
    pub vocab: PhonemeVocab,
    pub audio: AudioSection,
    pub temperature: f64,
}

pub fn load_txt2vec(dir: &Path) -> Result<LoadedTxt2Vec> {
    let ck: Txt2VecCheckpoint = read_json(&dir.join(TXT2VEC_FILE))?;
    let sched = TransitionSchedule::from_kv_str(&ck.schedule_kv)?;
    if sched.k() != ck.dims.k || sched.steps() != ck.dims.steps {
        return Err(Error::Checkpoint(format!(
            "schedule (K={}, T={}) disagrees with model dims (K={}, T={})",
            sched.k(),
            sched.steps(),
            ck.dims.k,
            ck.dims.steps
        )));
    }
    if ck.vocab.len() != ck.dims.vocab {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} symbols, model dims say {}",
            ck.vocab.len(),
            ck.dims.vocab
        )));
    }
    let mut model = Txt2VecModel::new(ck.dims, 0);
    model.store.load_dump(&ck.params)?;
    Ok(LoadedTxt2Vec {
        model,
        sched,
        vocab: PhonemeVocab { symbols: ck.vocab },
        audio: ck.audio,
        temperature: ck.temperature,
    })
}

pub fn save_vec2wav(dir: &Path, model: &Vec2WavModel, audio: &AudioSection) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(Error::Io)?;
    let path = dir.join(VEC2WAV_FILE);
    write_json(
        &path,
        &Vec2WavCheckpoint {
            dims: model.dims.clone(),
            audio: audio.clone(),
            params: model.store.dump(),
        },
    )?;
    Ok(path)
}

pub struct LoadedVec2Wav {
    pub model: Vec2WavModel,
    pub audio: AudioSection,
}

pub fn load_vec2wav(dir: &Path) -> Result<LoadedVec2Wav> {
    let ck: Vec2WavCheckpoint = read_json(&dir.join(VEC2WAV_FILE))?;
    if ck.dims.hop != ck.audio.hop || ck.dims.n_mels != ck.audio.n_mels {
        return Err(Error::Checkpoint(format!(
            "vocoder dims (hop {}, mels {}) disagree with audio section (hop {}, mels {})",
            ck.dims.hop, ck.dims.n_mels, ck.audio.hop, ck.audio.n_mels
        )));
    }
    let mut model = Vec2WavModel::new(ck.dims, 0);
    model.store.load_dump(&ck.params)?;
    Ok(LoadedVec2Wav {
        model,
        audio: ck.audio,
    })
}

// ---------------------------------------------------------------------
// Corpus preparation glue
// ---------------------------------------------------------------------

/// Token-model view of a prepared corpus.
pub fn txt2vec_corpus(
    prepared: &PreparedCorpus,
    vocab: &PhonemeVocab,
) -> Result<Vec<txt2vec::TrainUtterance>> {
    prepared
        .records
        .iter()
        .map(|r| {
            let tokens = r.tokens.clone().ok_or_else(|| {
                Error::Token(format!("utterance {} has no tokens", r.utt_id))
            })?;
            Ok(txt2vec::TrainUtterance {
                phoneme_ids: vocab.ids(&r.phonemes)?,
                durations: r.durations.clone(),
                tokens,
            })
        })
        .collect()
}

/// Vocoder view of a prepared corpus: waveform samples plus normalized
/// auxiliary features aligned to the token frames.
pub fn vec2wav_corpus(
    manifest: &Manifest,
    prepared: &PreparedCorpus,
    audio: &AudioSection,
) -> Result<Vec<vec2wav::VocoderUtterance>> {
    let pitch_cfg = PitchConfig::default();
    manifest
        .records
        .iter()
        .zip(&prepared.records)
        .map(|(m, r)| {
            let wav = read_wav(&m.audio_path(&manifest.dir))?;
            check_sample_rate(&wav, audio, &m.utt_id)?;
            let tokens = r.tokens.clone().ok_or_else(|| {
                Error::Token(format!("utterance {} has no tokens", r.utt_id))
            })?;
            let n = tokens.len();
            let aux = extract_aux(
                &wav.samples,
                audio.sample_rate,
                audio.hop,
                n,
                &pitch_cfg,
            )?;
            Ok(vec2wav::VocoderUtterance {
                tokens,
                samples: wav.samples,
                aux_norm: normalize_aux(&aux),
            })
        })
        .collect()
}

fn check_sample_rate(wav: &Waveform, audio: &AudioSection, what: &str) -> Result<()> {
    if wav.sample_rate != audio.sample_rate {
        return Err(Error::Audio(format!(
            "{what}: sample rate {} does not match configured {}",
            wav.sample_rate, audio.sample_rate
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Training entry points
// ---------------------------------------------------------------------

fn load_or_fit_tokenizer(
    ckpt_dir: &Path,
    manifest: &Manifest,
    cfg: &Config,
    seed: u64,
) -> Result<PreparedCorpus> {
    let tok_path = ckpt_dir.join(TOKENIZER_FILE);
    let existing = if tok_path.exists() {
        Some(Tokenizer::load(&tok_path)?)
    } else {
        None
    };
    let had_existing = existing.is_some();
    let prepared = crate::data::prepare_corpus(
        manifest,
        cfg.audio.mel_config(),
        existing,
        cfg.tokenizer.k,
        cfg.tokenizer.kmeans_iters,
        seed,
    )?;
    if !had_existing {
        fs::create_dir_all(ckpt_dir).map_err(Error::Io)?;
        prepared.tokenizer.save(&tok_path)?;
    }
    Ok(prepared)
}

pub struct Txt2VecTrainOutcome {
    pub stats: txt2vec::TrainStats,
    pub checkpoint: PathBuf,
}

/// Train the token model on a manifest and write `txt2vec.json` (and the
/// tokenizer, if newly fitted) into the checkpoint directory.
pub fn train_txt2vec(
    cfg: &Config,
    manifest_path: &Path,
    ckpt_dir: &Path,
    seed: u64,
    progress: impl FnMut(usize, &txt2vec::LossParts),
) -> Result<Txt2VecTrainOutcome> {
    cfg.validate()?;
    let manifest = Manifest::load(manifest_path)?;
    let prepared = load_or_fit_tokenizer(ckpt_dir, &manifest, cfg, seed)?;
    let vocab = PhonemeVocab::from_records(&prepared.records);
    let corpus = txt2vec_corpus(&prepared, &vocab)?;
    let sched = build_schedule(
        cfg.schedule.steps,
        cfg.tokenizer.k as u32,
        ScheduleParams {
            terminal_alpha_bar: cfg.schedule.terminal_alpha_bar,
            terminal_gamma_bar: cfg.schedule.terminal_gamma_bar,
        },
    )?;
    let dims = Txt2VecDims::from_config(
        &cfg.txt2vec,
        vocab.len(),
        cfg.tokenizer.k as u32,
        cfg.schedule.steps,
    );
    let mut model = Txt2VecModel::new(dims, rng::derive(seed, "txt2vec-model"));
    let stats = txt2vec::train(
        &mut model,
        &sched,
        &corpus,
        &cfg.train_txt2vec,
        cfg.audio.frames_per_second(),
        seed,
        progress,
    )?;
    let checkpoint = save_txt2vec(
        ckpt_dir,
        &model,
        &sched,
        &vocab,
        &cfg.audio,
        cfg.txt2vec.temperature,
    )?;
    Ok(Txt2VecTrainOutcome { stats, checkpoint })
}

pub struct Vec2WavTrainOutcome {
    pub stats: vec2wav::VocoderTrainStats,
    pub checkpoint: PathBuf,
}

/// Train the vocoder on a manifest and write `vec2wav.json` into the
/// checkpoint directory, reusing the tokenizer saved there when present.
pub fn train_vec2wav(
    cfg: &Config,
    manifest_path: &Path,
    ckpt_dir: &Path,
    seed: u64,
    progress: impl FnMut(usize, &vec2wav::GenLossParts),
) -> Result<Vec2WavTrainOutcome> {
    cfg.validate()?;
    let manifest = Manifest::load(manifest_path)?;
    let prepared = load_or_fit_tokenizer(ckpt_dir, &manifest, cfg, seed)?;
    let corpus = vec2wav_corpus(&manifest, &prepared, &cfg.audio)?;
    let dims = Vec2WavDims::from_config(
        &cfg.vec2wav,
        cfg.tokenizer.k as u32,
        cfg.audio.n_mels,
    );
    let mut model = Vec2WavModel::new(dims, rng::derive(seed, "vec2wav-model"));
    let mut disc = Discriminators::new(&cfg.vec2wav, rng::derive(seed, "vec2wav-disc"));
    let extractor = MelExtractor::new(cfg.audio.mel_config());
    let stats = vec2wav::train(
        &mut model,
        &mut disc,
        &corpus,
        &cfg.train_vec2wav,
        &extractor,
        cfg.audio.frames_per_second(),
        seed,
        progress,
    )?;
    let checkpoint = save_vec2wav(ckpt_dir, &model, &cfg.audio)?;
    Ok(Vec2WavTrainOutcome { stats, checkpoint })
}

// ---------------------------------------------------------------------
// Unified inference
// ---------------------------------------------------------------------

/// One context side of an edit request: audio plus its transcript
/// alignment.
#[derive(Debug, Clone)]
pub struct ContextSpec {
    pub audio: PathBuf,
    pub phonemes: Vec<String>,
    pub durations: Vec<usize>,
}

/// Unified editing/continuation request; continuation is exactly the
/// absence of context B.
#[derive(Debug, Clone)]
pub struct EditRequest {
    pub context_a: Option<ContextSpec>,
    pub context_b: Option<ContextSpec>,
    pub target_phonemes: Vec<String>,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

impl EditRequest {
    pub fn is_continuation(&self) -> bool {
        self.context_b.is_none()
    }
}

pub struct EditOutcome {
    pub tokens: TokenSequence,
    pub a_len: usize,
    pub x_len: usize,
    pub b_len: usize,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub alpha: f64,
}

struct PreparedContext {
    phoneme_ids: Vec<usize>,
    durations: Vec<usize>,
    tokens: TokenSequence,
    mel: Tensor,
}

fn prepare_context(
    spec: &ContextSpec,
    vocab: &PhonemeVocab,
    tokenizer: &Tokenizer,
    extractor: &MelExtractor,
    audio: &AudioSection,
) -> Result<PreparedContext> {
    if spec.phonemes.len() != spec.durations.len() {
        return Err(Error::Request(format!(
            "context {} has {} phonemes but {} durations",
            spec.audio.display(),
            spec.phonemes.len(),
            spec.durations.len()
        )));
    }
    let wav = read_wav(&spec.audio)?;
    check_sample_rate(&wav, audio, &spec.audio.display().to_string())?;
    let mel = extractor.extract(&wav.samples);
    let frames: usize = spec.durations.iter().sum();
    if mel.rows() < frames {
        return Err(Error::Request(format!(
            "context {} durations need {frames} frames but audio has {}",
            spec.audio.display(),
            mel.rows()
        )));
    }
    let tokens_full = tokenizer.assign(&mel);
    let tokens = TokenSequence::new(tokens_full.values[..frames].to_vec());
    let mel_rows = Tensor::new(
        vec![frames, mel.cols()],
        mel.data[..frames * mel.cols()].to_vec(),
    );
    Ok(PreparedContext {
        phoneme_ids: vocab.ids(&spec.phonemes)?,
        durations: spec.durations.clone(),
        tokens,
        mel: mel_rows,
    })
}

/// Full unified inference: generate tokens with the acoustic model, then
/// vocode the edited stream `[c_A, x_0, c_B]` with the concatenated
/// context mels `[m_A, m_B]` as the prompt. Deterministic given the seed.
pub fn run_edit(ckpt_dir: &Path, req: &EditRequest) -> Result<EditOutcome> {
    let t2v = load_txt2vec(ckpt_dir)?;
    let v2w = load_vec2wav(ckpt_dir)?;
    let tokenizer = Tokenizer::load(&ckpt_dir.join(TOKENIZER_FILE))?;
    if t2v.audio != v2w.audio {
        return Err(Error::Checkpoint(
            "acoustic model and vocoder were trained with different audio settings".into(),
        ));
    }
    if tokenizer.k as u32 != t2v.model.dims.k || tokenizer.k as u32 != v2w.model.dims.k {
        return Err(Error::Checkpoint(format!(
            "tokenizer K={} does not match models (K={}, K={})",
            tokenizer.k, t2v.model.dims.k, v2w.model.dims.k
        )));
    }
    let extractor = MelExtractor::new(t2v.audio.mel_config());
    let empty_ctx = || PreparedContext {
        phoneme_ids: vec![],
        durations: vec![],
        tokens: TokenSequence::new(vec![]),
        mel: Tensor::new(vec![0, t2v.audio.n_mels], vec![]),
    };
    let ctx_a = match &req.context_a {
        Some(spec) => prepare_context(spec, &t2v.vocab, &tokenizer, &extractor, &t2v.audio)?,
        None => empty_ctx(),
    };
    let ctx_b = match &req.context_b {
        Some(spec) => prepare_context(spec, &t2v.vocab, &tokenizer, &extractor, &t2v.audio)?,
        None => empty_ctx(),
    };
    if ctx_a.mel.rows() + ctx_b.mel.rows() == 0 {
        return Err(Error::Request(
            "at least one audio context is required to prompt the vocoder".into(),
        ));
    }
    let y_d = t2v.vocab.ids(&req.target_phonemes)?;
    let mut gen_rng = rng::stream(rng::derive(req.seed, "edit-tokens"));
    let outcome = t2v.model.infer_edit(
        &t2v.sched,
        &EditInputs {
            y_a: &ctx_a.phoneme_ids,
            y_d: &y_d,
            y_b: &ctx_b.phoneme_ids,
            d_a: &ctx_a.durations,
            d_b: &ctx_b.durations,
            c_a: &ctx_a.tokens,
            c_b: &ctx_b.tokens,
        },
        t2v.temperature,
        &mut gen_rng,
    )?;
    // Canonical prompt order: context A mel then context B mel. The
    // prompt pathway is order-free, so this choice only pins down
    // reproducibility.
    let mut prompt_data = ctx_a.mel.data.clone();
    prompt_data.extend_from_slice(&ctx_b.mel.data);
    let prompt = Tensor::new(
        vec![ctx_a.mel.rows() + ctx_b.mel.rows(), t2v.audio.n_mels],
        prompt_data,
    );
    let samples = v2w.model.vocode(&outcome.tokens, &prompt, None)?;
    if let Some(out) = &req.output {
        write_wav(
            out,
            &Waveform {
                sample_rate: t2v.audio.sample_rate,
                samples: samples.clone(),
            },
        )?;
    }
    Ok(EditOutcome {
        tokens: outcome.tokens,
        a_len: outcome.a_len,
        x_len: outcome.x_len,
        b_len: outcome.b_len,
        samples,
        sample_rate: t2v.audio.sample_rate,
        alpha: outcome.alpha,
    })
}

/// Resynthesis: tokenize an utterance and vocode it back, prompting with
/// its own mel. Exercises the predicted-auxiliary pathway end to end.
pub fn run_resynth(ckpt_dir: &Path, input: &Path, output: Option<&Path>) -> Result<EditOutcome> {
    let v2w = load_vec2wav(ckpt_dir)?;
    let tokenizer = Tokenizer::load(&ckpt_dir.join(TOKENIZER_FILE))?;
    if tokenizer.k as u32 != v2w.model.dims.k {
        return Err(Error::Checkpoint(format!(
            "tokenizer K={} does not match vocoder K={}",
            tokenizer.k, v2w.model.dims.k
        )));
    }
    let wav = read_wav(input)?;
    check_sample_rate(&wav, &v2w.audio, &input.display().to_string())?;
    let extractor = MelExtractor::new(v2w.audio.mel_config());
    let mel = extractor.extract(&wav.samples);
    let tokens = tokenizer.assign(&mel);
    let samples = v2w.model.vocode(&tokens, &mel, None)?;
    if let Some(out) = output {
        write_wav(
            out,
            &Waveform {
                sample_rate: v2w.audio.sample_rate,
                samples: samples.clone(),
            },
        )?;
    }
    let n = tokens.len();
    Ok(EditOutcome {
        tokens,
        a_len: 0,
        x_len: n,
        b_len: 0,
        samples,
        sample_rate: v2w.audio.sample_rate,
        alpha: 1.0,
    })
}

// ---------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------

/// Mean absolute log-mel difference over the aligned frame range.
pub fn mel_l1_distance(extractor: &MelExtractor, a: &[f64], b: &[f64]) -> f64 {
    let ma = extractor.extract(a);
    let mb = extractor.extract(b);
    let n = ma.rows().min(mb.rows());
    if n == 0 {
        return 0.0;
    }
    let cols = ma.cols();
    let mut acc = 0.0;
    for i in 0..n * cols {
        acc += (ma.data[i] - mb.data[i]).abs();
    }
    acc / (n * cols) as f64
}

/// Pluggable utterance-level speaker embedder.
pub trait SpeakerEmbedder {
    fn id(&self) -> &str;
    fn embed(&self, samples: &[f64]) -> Result<Vec<f64>>;
}

/// Built-in default: per-bin mean and variance of the log-mel frames.
pub struct MelStatsEmbedder {
    pub extractor: MelExtractor,
}

impl SpeakerEmbedder for MelStatsEmbedder {
    fn id(&self) -> &str {
        "mel-stats-v1"
    }

    fn embed(&self, samples: &[f64]) -> Result<Vec<f64>> {
        let mel = self.extractor.extract(samples);
        let (n, d) = (mel.rows(), mel.cols());
        if n == 0 {
            return Err(Error::Request("cannot embed empty audio".into()));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(mel.row(i)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                let diff = mel.row(i)[j] - mean[j];
                var[j] += diff * diff;
            }
        }
        for v in var.iter_mut() {
            *v /= n as f64;
        }
        mean.extend(var);
        Ok(mean)
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "embedding lengths {} and {} cannot be compared",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Request("zero-norm embedding".into()));
    }
    Ok(dot / (na * nb))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SecsPair {
    pub reference: String,
    pub generated: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SecsSummary {
    pub embedder: String,
    pub pairs: usize,
    pub mean: f64,
}

/// Speaker-similarity report: one JSON line per pair plus a summary line.
#[derive(Debug, Clone, PartialEq)]
pub struct SecsReport {
    pub embedder: String,
    pub pairs: Vec<SecsPair>,
}

impl SecsReport {
    pub fn mean(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.similarity).sum::<f64>() / self.pairs.len() as f64
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&serde_json::to_string(p).expect("pair serializes"));
            out.push('\n');
        }
        let summary = SecsSummary {
            embedder: self.embedder.clone(),
            pairs: self.pairs.len(),
            mean: self.mean(),
        };
        out.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(s: &str) -> Result<SecsReport> {
        let mut lines: Vec<&str> = s.lines().filter(|l| !l.trim().is_empty()).collect();
        let summary_line = lines
            .pop()
            .ok_or_else(|| Error::Request("empty similarity report".into()))?;
        let summary: SecsSummary = serde_json::from_str(summary_line)
            .map_err(|e| Error::Request(format!("bad report summary: {e}")))?;
        let pairs = lines
            .iter()
            .map(|l| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Request(format!("bad report line: {e}")))
            })
            .collect::<Result<Vec<SecsPair>>>()?;
        if pairs.len() != summary.pairs {
            return Err(Error::Request(format!(
                "report has {} pairs but summary says {}",
                pairs.len(),
                summary.pairs
            )));
        }
        Ok(SecsReport {
            embedder: summary.embedder,
            pairs,
        })
    }
}

/// Score (reference, generated) audio pairs with an embedder.
pub fn compute_secs(
    embedder: &dyn SpeakerEmbedder,
    pairs: &[(String, Vec<f64>, String, Vec<f64>)],
) -> Result<SecsReport> {
    let mut out = Vec::with_capacity(pairs.len());
    for (ref_name, ref_samples, gen_name, gen_samples) in pairs {
        let ea = embedder.embed(ref_samples)?;
        let eb = embedder.embed(gen_samples)?;
        let similarity = cosine_similarity(&ea, &eb)?;
        out.push(SecsPair {
            reference: ref_name.clone(),
            generated: gen_name.clone(),
            similarity,
        });
    }
    Ok(SecsReport {
        embedder: embedder.id().to_string(),
        pairs: out,
    })
}

/// Held-in continuation accuracy with teacher durations: the first
/// `ctx_frac` of each utterance's phonemes (at least one, never all)
/// provides context A, the rest is regenerated with ground-truth
/// durations, and matching token positions are counted.
pub fn continuation_token_accuracy(
    model: &Txt2VecModel,
    sched: &TransitionSchedule,
    corpus: &[txt2vec::TrainUtterance],
    ctx_frac: f64,
    temperature: f64,
    seed: u64,
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (u, utt) in corpus.iter().enumerate() {
        let n_ph = utt.phoneme_ids.len();
        if n_ph < 2 {
            continue;
        }
        let split = ((n_ph as f64 * ctx_frac).round() as usize).clamp(1, n_ph - 1);
        let a_frames: usize = utt.durations[..split].iter().sum();
        let c_a = TokenSequence::new(utt.tokens.values[..a_frames].to_vec());
        let empty = TokenSequence::new(vec![]);
        let mut r = rng::stream(rng::derive_indexed(seed, "continuation-acc", u as u64));
        let out = model.infer_edit_given_durations(
            sched,
            &EditInputs {
                y_a: &utt.phoneme_ids[..split],
                y_d: &utt.phoneme_ids[split..],
                y_b: &[],
                d_a: &utt.durations[..split],
                d_b: &[],
                c_a: &c_a,
                c_b: &empty,
            },
            &utt.durations[split..],
            temperature,
            &mut r,
        )?;
        let gen = &out.tokens.values[out.a_len..out.a_len + out.x_len];
        let gt = &utt.tokens.values[a_frames..];
        if gen.len() != gt.len() {
            return Err(Error::Shape(format!(
                "generated {} frames but ground truth has {}",
                gen.len(),
                gt.len()
            )));
        }
        hits += gen.iter().zip(gt).filter(|(a, b)| a == b).count();
        total += gt.len();
    }
    if total == 0 {
        return Err(Error::Request("no utterance is long enough to score".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Group mean similarities for sanity ordering: same-speaker pairs vs
/// cross-speaker pairs under an embedder.
pub fn group_similarity(
    embedder: &dyn SpeakerEmbedder,
    groups: &BTreeMap<String, Vec<Vec<f64>>>,
) -> Result<(f64, f64)> {
    let mut same = Vec::new();
    let mut cross = Vec::new();
    let keys: Vec<&String> = groups.keys().collect();
    for (gi, ga) in keys.iter().enumerate() {
        let utts_a = &groups[*ga];
        for i in 0..utts_a.len() {
            for j in i + 1..utts_a.len() {
                let ea = embedder.embed(&utts_a[i])?;
                let eb = embedder.embed(&utts_a[j])?;
                same.push(cosine_similarity(&ea, &eb)?);
            }
        }
        for gb in keys.iter().skip(gi + 1) {
            for a in utts_a {
                for b in &groups[*gb] {
                    let ea = embedder.embed(a)?;
                    let eb = embedder.embed(b)?;
                    cross.push(cosine_similarity(&ea, &eb)?);
                }
            }
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok((mean(&same), mean(&cross)))
}

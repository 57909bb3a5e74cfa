//! Command-line surface. Every subcommand accepts `--config`, `--seed`,
//! and `--checkpoint`; failures are reported as a single JSON line on
//! stderr so scripts can parse them, with exit code 2 for usage problems
//! and 1 for runtime errors.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::audio::read_wav;
use crate::config::Config;
use crate::data::make_toy_corpus;
use crate::error::{Error, Result};
use crate::features::MelExtractor;
use crate::pipeline::{
    self, compute_secs, ContextSpec, EditRequest, MelStatsEmbedder, SecsReport,
};

#[derive(Parser)]
#[command(
    name = "semtts",
    about = "Context-aware speech continuation and editing over discrete semantic tokens",
    disable_help_subcommand = true
)]
struct Cli {
    /// Configuration file (TOML); defaults to the built-in toy profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root random seed; all stochastic behavior derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Checkpoint directory (model weights and tokenizer).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic aligned corpus for desk-scale experiments.
    MakeToyCorpus {
        /// Directory to write WAVs and the manifest into.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the text-to-token acoustic model on a manifest.
    TrainTxt2vec {
        /// Manifest file of the training corpus.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train the token-to-waveform vocoder on a manifest.
    TrainVec2wav {
        /// Manifest file of the training corpus.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Tokenize an utterance and vocode it back, prompted by its own mel.
    Resynth {
        /// Input WAV.
        #[arg(long)]
        input: PathBuf,
        /// Output WAV path.
        #[arg(long)]
        output: PathBuf,
    },
    /// Continue speech after a context: generate tokens for new text and
    /// vocode in the context speaker's voice.
    Continue {
        #[command(flatten)]
        context_a: ContextAArgs,
        /// Target phoneme symbols to synthesize, space-separated.
        #[arg(long)]
        text: String,
        /// Output WAV path.
        #[arg(long)]
        output: PathBuf,
    },
    /// Replace a span between two contexts (omit the B flags to continue).
    Edit {
        #[command(flatten)]
        context_a: ContextAArgs,
        /// Context B audio (the right flank); optional.
        #[arg(long)]
        context_b: Option<PathBuf>,
        /// Context B phoneme symbols, space-separated.
        #[arg(long, requires = "context_b")]
        phonemes_b: Option<String>,
        /// Context B per-phoneme frame counts, space-separated.
        #[arg(long, requires = "context_b")]
        durations_b: Option<String>,
        /// Target phoneme symbols to synthesize, space-separated.
        #[arg(long)]
        text: String,
        /// Output WAV path.
        #[arg(long)]
        output: PathBuf,
    },
    /// Score (reference, generated) WAV pairs with the speaker embedder.
    EvalSecs {
        /// TSV file: one `reference<TAB>generated` path pair per line.
        #[arg(long)]
        pairs: PathBuf,
        /// Optional JSON-lines report path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ContextAArgs {
    /// Context A audio (the left flank).
    #[arg(long)]
    context_a: PathBuf,
    /// Context A phoneme symbols, space-separated.
    #[arg(long)]
    phonemes_a: String,
    /// Context A per-phoneme frame counts, space-separated.
    #[arg(long)]
    durations_a: String,
}

pub fn run(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            // Help and version requests are not failures.
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                print!("{e}");
                return 0;
            }
            let first_line = e.to_string().lines().next().unwrap_or("bad usage").to_string();
            eprintln!("{}", json!({ "error": "usage", "message": first_line }));
            return 2;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}", json!({ "error": e.kind(), "message": msg }));
            1
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::toy_defaults()),
    }
}

fn require_checkpoint(ckpt: &Option<PathBuf>) -> Result<&Path> {
    ckpt.as_deref()
        .ok_or_else(|| Error::Request("this command needs --checkpoint <dir>".into()))
}

fn parse_symbols(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn parse_durations(s: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>().map_err(|_| {
                Error::Request(format!("duration {tok:?} is not a non-negative integer"))
            })
        })
        .collect()
}

fn context_spec(args: &ContextAArgs) -> Result<ContextSpec> {
    Ok(ContextSpec {
        audio: args.context_a.clone(),
        phonemes: parse_symbols(&args.phonemes_a),
        durations: parse_durations(&args.durations_a)?,
    })
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn run_edit_cmd(
    ckpt: &Path,
    context_a: ContextSpec,
    context_b: Option<ContextSpec>,
    text: &str,
    output: &Path,
    seed: u64,
) -> Result<()> {
    let req = EditRequest {
        context_a: Some(context_a),
        context_b,
        target_phonemes: parse_symbols(text),
        output: Some(output.to_path_buf()),
        seed,
    };
    let mode = if req.is_continuation() { "continue" } else { "edit" };
    let out = pipeline::run_edit(ckpt, &req)?;
    emit(json!({
        "mode": mode,
        "output": output.display().to_string(),
        "tokens": out.tokens.len(),
        "context_a_frames": out.a_len,
        "generated_frames": out.x_len,
        "context_b_frames": out.b_len,
        "duration_scale": out.alpha,
        "seconds": out.samples.len() as f64 / out.sample_rate as f64,
    }));
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::MakeToyCorpus { out } => {
            let cfg = load_config(&cli.config)?;
            let toy = make_toy_corpus(&cfg, out, cli.seed)?;
            emit(json!({
                "manifest": toy.manifest_path.display().to_string(),
                "utterances": toy.records.len(),
            }));
            Ok(())
        }
        Cmd::TrainTxt2vec { manifest } => {
            let cfg = load_config(&cli.config)?;
            let ckpt = require_checkpoint(&cli.checkpoint)?;
            let every = cfg.train_txt2vec.log_every.max(1);
            let out = pipeline::train_txt2vec(&cfg, manifest, ckpt, cli.seed, |step, parts| {
                if step % every == 0 {
                    emit(json!({
                        "step": step,
                        "duration_mse": parts.duration_mse,
                        "diffusion_kl": parts.diffusion_kl,
                    }));
                }
            })?;
            emit(json!({
                "checkpoint": out.checkpoint.display().to_string(),
                "steps": out.stats.steps,
                "final_loss": out.stats.final_smoothed_loss,
            }));
            Ok(())
        }
        Cmd::TrainVec2wav { manifest } => {
            let cfg = load_config(&cli.config)?;
            let ckpt = require_checkpoint(&cli.checkpoint)?;
            let every = cfg.train_vec2wav.log_every.max(1);
            let out = pipeline::train_vec2wav(&cfg, manifest, ckpt, cli.seed, |step, parts| {
                if step % every == 0 {
                    emit(json!({
                        "step": step,
                        "mel_l1": parts.mel_l1,
                        "adversarial": parts.adversarial,
                    }));
                }
            })?;
            emit(json!({
                "checkpoint": out.checkpoint.display().to_string(),
                "steps": out.stats.steps,
                "skipped": out.stats.skipped,
            }));
            Ok(())
        }
        Cmd::Resynth { input, output } => {
            let ckpt = require_checkpoint(&cli.checkpoint)?;
            let out = pipeline::run_resynth(ckpt, input, Some(output))?;
            emit(json!({
                "output": output.display().to_string(),
                "tokens": out.tokens.len(),
                "seconds": out.samples.len() as f64 / out.sample_rate as f64,
            }));
            Ok(())
        }
        Cmd::Continue {
            context_a,
            text,
            output,
        } => {
            let ckpt = require_checkpoint(&cli.checkpoint)?;
            run_edit_cmd(ckpt, context_spec(context_a)?, None, text, output, cli.seed)
        }
        Cmd::Edit {
            context_a,
            context_b,
            phonemes_b,
            durations_b,
            text,
            output,
        } => {
            let ckpt = require_checkpoint(&cli.checkpoint)?;
            let ctx_b = match context_b {
                Some(audio) => {
                    let phonemes = phonemes_b.as_deref().ok_or_else(|| {
                        Error::Request("--context-b needs --phonemes-b".into())
                    })?;
                    let durations = durations_b.as_deref().ok_or_else(|| {
                        Error::Request("--context-b needs --durations-b".into())
                    })?;
                    Some(ContextSpec {
                        audio: audio.clone(),
                        phonemes: parse_symbols(phonemes),
                        durations: parse_durations(durations)?,
                    })
                }
                None => None,
            };
            run_edit_cmd(ckpt, context_spec(context_a)?, ctx_b, text, output, cli.seed)
        }
        Cmd::EvalSecs { pairs, report } => {
            let cfg = load_config(&cli.config)?;
            let listing = std::fs::read_to_string(pairs).map_err(Error::Io)?;
            let mut loaded = Vec::new();
            for (lineno, line) in listing.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let (ref_path, gen_path) = line.split_once('\t').ok_or_else(|| {
                    Error::Request(format!(
                        "{}:{}: expected `reference<TAB>generated`",
                        pairs.display(),
                        lineno + 1
                    ))
                })?;
                let ref_wav = read_wav(Path::new(ref_path))?;
                let gen_wav = read_wav(Path::new(gen_path))?;
                for (name, wav) in [(ref_path, &ref_wav), (gen_path, &gen_wav)] {
                    if wav.sample_rate != cfg.audio.sample_rate {
                        return Err(Error::Audio(format!(
                            "{name}: sample rate {} does not match configured {}",
                            wav.sample_rate, cfg.audio.sample_rate
                        )));
                    }
                }
                loaded.push((
                    ref_path.to_string(),
                    ref_wav.samples,
                    gen_path.to_string(),
                    gen_wav.samples,
                ));
            }
            let embedder = MelStatsEmbedder {
                extractor: MelExtractor::new(cfg.audio.mel_config()),
            };
            let rep: SecsReport = compute_secs(&embedder, &loaded)?;
            if let Some(path) = report {
                std::fs::write(path, rep.to_jsonl()).map_err(Error::Io)?;
            }
            emit(json!({
                "embedder": rep.embedder,
                "pairs": rep.pairs.len(),
                "mean_similarity": rep.mean(),
            }));
            Ok(())
        }
    }
}

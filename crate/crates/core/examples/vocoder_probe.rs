//! Scratch probe: time toy vec2wav training and measure the resynthesis
//! mel-distance drop, mirroring the end-to-end overfit check.

use std::time::Instant;

use semtts::audio::read_wav;
use semtts::config::Config;
use semtts::features::MelExtractor;
use semtts::data::{make_toy_corpus, prepare_corpus, Manifest};
use semtts::pipeline;
use semtts::vec2wav::{Vec2WavDims, Vec2WavModel};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(400);
    let warmup: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(200);
    let gen_lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let disc_lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(5e-4);
    let crop: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(24);
    let n_utts: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(50);

    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let ckpt_dir = dir.path().join("ckpt");
    let mut cfg = Config::toy_defaults();
    cfg.train_vec2wav.steps = steps;
    cfg.train_vec2wav.warmup = warmup;
    cfg.train_vec2wav.gen_lr = gen_lr;
    cfg.train_vec2wav.disc_lr = disc_lr;
    cfg.train_vec2wav.crop_frames = crop;
    cfg.toy.utterances = n_utts;
    // Keep the probe off the heavy token-model profile: only the vocoder
    // trains here.
    let toy = make_toy_corpus(&cfg, &corpus_dir, 1234).unwrap();
    let manifest = Manifest::load(&toy.manifest_path).unwrap();
    let prepared = prepare_corpus(
        &manifest,
        cfg.audio.mel_config(),
        None,
        cfg.tokenizer.k,
        cfg.tokenizer.kmeans_iters,
        7,
    )
    .unwrap();

    let extractor = MelExtractor::new(cfg.audio.mel_config());
    let dims = Vec2WavDims::from_config(&cfg.vec2wav, cfg.tokenizer.k as u32, cfg.audio.n_mels);
    let eval = |model: &Vec2WavModel| -> f64 {
        let mut acc = 0.0;
        let n_eval = 3.min(prepared.records.len());
        for u in 0..n_eval {
            let rec = &prepared.records[u];
            let wav = read_wav(&rec.audio_path(&corpus_dir)).unwrap();
            let mel = &prepared.mels[u];
            let tokens = rec.tokens.clone().unwrap();
            let out = model.vocode(&tokens, mel, None).unwrap();
            acc += pipeline::mel_l1_distance(&extractor, &wav.samples, &out);
        }
        acc / 3.0
    };
    let untrained = Vec2WavModel::new(dims, 5);
    let t0 = Instant::now();
    let initial = eval(&untrained);
    println!("untrained mean mel distance: {initial:.4}  [{:.0}s]", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let mut last_log = Instant::now();
    let out = pipeline::train_vec2wav(&cfg, &toy.manifest_path, &ckpt_dir, 7, |step, parts| {
        if (step + 1) % 50 == 0 {
            println!(
                "step {:4}  mel_l1 {:.4}  adv {:.4}  [{:.1}s since last]",
                step + 1,
                parts.mel_l1,
                parts.adversarial,
                last_log.elapsed().as_secs_f64()
            );
            last_log = Instant::now();
        }
    })
    .unwrap();
    let train_secs = t1.elapsed().as_secs_f64();
    println!(
        "trained {} steps in {train_secs:.0}s ({:.2}s/step), skipped {}",
        out.stats.steps,
        train_secs / out.stats.steps as f64,
        out.stats.skipped
    );
    let trained = pipeline::load_vec2wav(&ckpt_dir).unwrap();
    let fin = eval(&trained.model);
    println!(
        "final mean mel distance: {fin:.4}  (drop {:.0}%)  [total {:.0}s]",
        100.0 * (1.0 - fin / initial),
        t0.elapsed().as_secs_f64()
    );
}

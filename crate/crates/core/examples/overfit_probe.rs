//! Scratch probe: is the toy token stream predictable from phonemes, and
//! does training close the gap? Reports (a) a conditional-mode ceiling,
//! (b) loss parts over training, (c) sampled continuation accuracy.

use std::collections::BTreeMap;
use std::time::Instant;

use semtts::config::Config;
use semtts::data::{make_toy_corpus, prepare_corpus, Manifest, PhonemeVocab};
use semtts::diffusion::{build_schedule, ScheduleParams};
use semtts::pipeline;
use semtts::rng;
use semtts::txt2vec::{train, Txt2VecDims, Txt2VecModel};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3000);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2e-3);
    let eval_every: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(500);
    let aux_w: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let d_model: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(64);
    let decay: bool = args.get(6).map(|s| s == "decay").unwrap_or(false);

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::toy_defaults();
    cfg.train_txt2vec.steps = steps;
    cfg.train_txt2vec.lr = lr;
    cfg.train_txt2vec.aux_ce_weight = aux_w;
    cfg.txt2vec.d_model = d_model;
    let toy = make_toy_corpus(&cfg, &dir.path().join("corpus"), 1234).unwrap();
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
    let vocab = PhonemeVocab::from_records(&prepared.records);
    let corpus = pipeline::txt2vec_corpus(&prepared, &vocab).unwrap();

    // --- Ceiling analysis -------------------------------------------------
    // Key: phoneme id alone; phoneme + bucketized offset; phoneme trigram
    // (prev, cur, next) + offset bucket.
    let mut by_ph: BTreeMap<usize, BTreeMap<u32, usize>> = BTreeMap::new();
    let mut by_ph_off: BTreeMap<(usize, usize), BTreeMap<u32, usize>> = BTreeMap::new();
    let mut by_tri_off: BTreeMap<(usize, usize, usize, usize), BTreeMap<u32, usize>> =
        BTreeMap::new();
    let mut total_frames = 0usize;
    for utt in &corpus {
        let mut frame = 0usize;
        for (pi, (&ph, &d)) in utt.phoneme_ids.iter().zip(&utt.durations).enumerate() {
            let prev = if pi == 0 { usize::MAX } else { utt.phoneme_ids[pi - 1] };
            let next = if pi + 1 == utt.phoneme_ids.len() {
                usize::MAX
            } else {
                utt.phoneme_ids[pi + 1]
            };
            for o in 0..d {
                let tok = utt.tokens.values[frame + o];
                // offset bucket: distance from nearer edge, capped
                let edge = o.min(d - 1 - o).min(4);
                *by_ph.entry(ph).or_default().entry(tok).or_default() += 1;
                *by_ph_off
                    .entry((ph, edge))
                    .or_default()
                    .entry(tok)
                    .or_default() += 1;
                *by_tri_off
                    .entry((prev, ph, next, edge))
                    .or_default()
                    .entry(tok)
                    .or_default() += 1;
                total_frames += 1;
            }
            frame += d;
        }
    }
    fn ceiling<K>(m: &BTreeMap<K, BTreeMap<u32, usize>>, total: usize) -> f64 {
        let hits: usize = m
            .values()
            .map(|c| c.values().copied().max().unwrap_or(0))
            .sum();
        hits as f64 / total as f64
    }
    println!(
        "mode-predictor ceilings: phoneme {:.3}, phoneme+edge {:.3}, trigram+edge {:.3} ({} frames)",
        ceiling(&by_ph, total_frames),
        ceiling(&by_ph_off, total_frames),
        ceiling(&by_tri_off, total_frames),
        total_frames
    );
    for (ph, counts) in &by_ph {
        let tot: usize = counts.values().sum();
        let mut cv: Vec<(usize, u32)> = counts.iter().map(|(&t, &c)| (c, t)).collect();
        cv.sort_unstable_by(|a, b| b.cmp(a));
        let top: Vec<String> = cv
            .iter()
            .take(4)
            .map(|(c, t)| format!("{t}:{:.2}", *c as f64 / tot as f64))
            .collect();
        println!("  phoneme {ph}: top tokens {}", top.join(" "));
    }

    // --- Training ----------------------------------------------------------
    let sched = build_schedule(
        cfg.schedule.steps,
        cfg.tokenizer.k as u32,
        ScheduleParams::default(),
    )
    .unwrap();
    let dims = Txt2VecDims::from_config(
        &cfg.txt2vec,
        vocab.len(),
        cfg.tokenizer.k as u32,
        cfg.schedule.steps,
    );
    let mut model = Txt2VecModel::new(dims, rng::derive(7, "txt2vec-model"));
    let t0 = Instant::now();
    let mut done = 0usize;
    while done < steps {
        let chunk = eval_every.min(steps - done);
        let mut cfg_chunk = cfg.train_txt2vec.clone();
        cfg_chunk.steps = chunk;
        if decay && done >= steps * 2 / 3 {
            cfg_chunk.lr = lr / 4.0;
        }
        let mut ce_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut n = 0usize;
        let stats = train(
            &mut model,
            &sched,
            &corpus,
            &cfg_chunk,
            cfg.audio.frames_per_second(),
            1000 + done as u64,
            |_, parts| {
                ce_sum += parts.aux_ce;
                kl_sum += parts.diffusion_kl;
                n += 1;
            },
        )
        .unwrap();
        done += chunk;
        let subset: Vec<_> = corpus.iter().take(10).cloned().collect();
        let acc =
            pipeline::continuation_token_accuracy(&model, &sched, &subset, 0.5, 1.0, 99).unwrap();
        let acc_sharp =
            pipeline::continuation_token_accuracy(&model, &sched, &subset, 0.5, 0.4, 99).unwrap();
        println!(
            "steps {done:5}  loss {:.4}  mean_kl {:.4}  mean_ce {:.4}  acc(10) t1.0 {:.3}  t0.4 {:.3}  [{:.0}s]",
            stats.final_smoothed_loss,
            kl_sum / n as f64,
            ce_sum / n as f64,
            acc,
            acc_sharp,
            t0.elapsed().as_secs_f64()
        );
    }
    for temp in [1.0, 0.7, 0.4, 0.2] {
        let acc =
            pipeline::continuation_token_accuracy(&model, &sched, &corpus, 0.5, temp, 99).unwrap();
        println!(
            "final accuracy over all {} utterances at temperature {temp}: {:.3}  [{:.0}s total]",
            corpus.len(),
            acc,
            t0.elapsed().as_secs_f64()
        );
    }
}

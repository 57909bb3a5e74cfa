//! End-to-end smoke test of the C interface: train a micro checkpoint,
//! open it through the FFI, synthesize, and exercise the error paths.

use std::ffi::{c_char, CString};
use std::ptr;

use semtts::config::Config;
use semtts::data::{make_toy_corpus, Manifest};
use semtts_capi::*;

fn micro_config() -> Config {
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

fn last_error() -> String {
    let mut buf = vec![0u8; 512];
    let n = unsafe { semtts_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    String::from_utf8_lossy(&buf[..n.min(buf.len() - 1)]).into_owned()
}

#[test]
fn c_interface_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let ckpt_dir = dir.path().join("ckpt");
    let cfg = micro_config();
    let toy = make_toy_corpus(&cfg, &corpus_dir, 3).unwrap();
    semtts::pipeline::train_txt2vec(&cfg, &toy.manifest_path, &ckpt_dir, 7, |_, _| {}).unwrap();
    semtts::pipeline::train_vec2wav(&cfg, &toy.manifest_path, &ckpt_dir, 7, |_, _| {}).unwrap();

    // Version string is a readable NUL-terminated constant.
    let version = unsafe { std::ffi::CStr::from_ptr(semtts_version()) };
    assert!(!version.to_str().unwrap().is_empty());

    // Opening a missing directory fails with a retrievable message.
    let bogus = CString::new(dir.path().join("nope").display().to_string()).unwrap();
    let mut engine: *mut SemttsEngine = ptr::null_mut();
    let status = unsafe { semtts_engine_open(bogus.as_ptr(), &mut engine) };
    assert_ne!(status, SemttsStatus::SemttsOk);
    assert!(engine.is_null());
    assert!(!last_error().is_empty());

    // Null arguments are rejected, not dereferenced.
    assert_eq!(
        unsafe { semtts_engine_open(bogus.as_ptr(), ptr::null_mut()) },
        SemttsStatus::SemttsNullArgument
    );

    // A real checkpoint opens.
    let ckpt_c = CString::new(ckpt_dir.display().to_string()).unwrap();
    let status = unsafe { semtts_engine_open(ckpt_c.as_ptr(), &mut engine) };
    assert_eq!(status, SemttsStatus::SemttsOk, "{}", last_error());
    assert!(!engine.is_null());
    let mut rate = 0u32;
    assert_eq!(
        unsafe { semtts_engine_sample_rate(engine, &mut rate) },
        SemttsStatus::SemttsOk
    );
    assert_eq!(rate, cfg.audio.sample_rate);

    // Continuation through the edit entry point, twice with one seed.
    let records = Manifest::load(&toy.manifest_path).unwrap().records;
    let rec = &records[0];
    let split = rec.phonemes.len() / 2;
    let wav_c = CString::new(rec.audio_path(&corpus_dir).display().to_string()).unwrap();
    let phonemes_a = CString::new(rec.phonemes[..split].join(" ")).unwrap();
    let durations_a: Vec<usize> = rec.durations[..split].to_vec();
    let text = CString::new(rec.phonemes[split..].join(" ")).unwrap();
    let synth = |seed: u64| -> Vec<f64> {
        let mut samples: *mut f64 = ptr::null_mut();
        let mut len = 0usize;
        let status = unsafe {
            semtts_engine_edit(
                engine,
                wav_c.as_ptr(),
                phonemes_a.as_ptr(),
                durations_a.as_ptr(),
                durations_a.len(),
                ptr::null(),
                ptr::null(),
                ptr::null(),
                0,
                text.as_ptr(),
                seed,
                ptr::null(),
                &mut samples,
                &mut len,
            )
        };
        assert_eq!(status, SemttsStatus::SemttsOk, "{}", last_error());
        assert!(len > 0);
        let out = unsafe { std::slice::from_raw_parts(samples, len) }.to_vec();
        unsafe { semtts_samples_free(samples, len) };
        out
    };
    let first = synth(11);
    let second = synth(11);
    assert_eq!(first, second, "same seed must give identical samples");
    assert!(first.iter().all(|v| v.is_finite() && v.abs() <= 1.0));

    // Resynthesis writes a WAV and returns the same samples.
    let out_path = dir.path().join("resynth.wav");
    let out_c = CString::new(out_path.display().to_string()).unwrap();
    let mut samples: *mut f64 = ptr::null_mut();
    let mut len = 0usize;
    let status = unsafe {
        semtts_engine_resynth(engine, wav_c.as_ptr(), out_c.as_ptr(), &mut samples, &mut len)
    };
    assert_eq!(status, SemttsStatus::SemttsOk, "{}", last_error());
    assert!(out_path.exists());
    unsafe { semtts_samples_free(samples, len) };

    // Bad phoneme symbols surface as a request error with a message.
    let bad_text = CString::new("definitely-not-a-symbol").unwrap();
    let mut s2: *mut f64 = ptr::null_mut();
    let mut l2 = 0usize;
    let status = unsafe {
        semtts_engine_edit(
            engine,
            wav_c.as_ptr(),
            phonemes_a.as_ptr(),
            durations_a.as_ptr(),
            durations_a.len(),
            ptr::null(),
            ptr::null(),
            ptr::null(),
            0,
            bad_text.as_ptr(),
            3,
            ptr::null(),
            &mut s2,
            &mut l2,
        )
    };
    assert_ne!(status, SemttsStatus::SemttsOk);
    assert!(!last_error().is_empty());

    unsafe { semtts_engine_free(engine) };
    unsafe { semtts_engine_free(ptr::null_mut()) }; // tolerated
}

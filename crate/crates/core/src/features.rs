//! Frame-level acoustic features: log-mel spectrograms and the auxiliary
//! pitch / energy / probability-of-voicing triple.
//!
//! Frames advance by `hop` samples, so a waveform of `L * hop` samples
//! yields exactly `L` frames; every component of the system relies on this
//! alignment between discrete tokens, mel frames, and audio.
//!
//! The mel path exists twice with identical numbers: a plain extractor for
//! data preparation, and a tape-backed version (windowed DFT as a strided
//! convolution) so spectral losses can backpropagate into generated audio.
//! The spectrum is power (not magnitude), which keeps the differentiable
//! path free of square roots near zero.

use crate::error::{Error, Result};
use crate::nn::{Node, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Added under the log: `ln(power + floor)`.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> MelConfig {
        MelConfig {
            sample_rate: 16_000,
            n_fft: 1024,
            win: 640,
            hop: 160,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8_000.0,
            // Clamp level of the common GAN-vocoder mel recipe; a lower
            // floor makes log-distances hypersensitive to noise in silent
            // bands.
            log_floor: 1e-5,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub struct MelExtractor {
    pub cfg: MelConfig,
    /// Hann window of length `win`, centered in an `n_fft` buffer.
    pub window: Vec<f64>,
    /// `[2 * bins, n_fft]`: windowed cosine kernels then windowed sine
    /// kernels, one row per frequency bin.
    dft: Vec<f64>,
    /// `[n_mels, bins]` triangular filters.
    mel_fb: Vec<f64>,
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> MelExtractor {
        assert!(cfg.win <= cfg.n_fft && cfg.hop > 0 && cfg.hop <= cfg.n_fft);
        let n = cfg.n_fft;
        let bins = n / 2 + 1;
        let mut window = vec![0.0; n];
        let off = (n - cfg.win) / 2;
        for i in 0..cfg.win {
            // Periodic Hann.
            window[off + i] =
                0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / cfg.win as f64).cos());
        }
        let mut dft = vec![0.0; 2 * bins * n];
        for k in 0..bins {
            for i in 0..n {
                let ang = 2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
                dft[k * n + i] = window[i] * ang.cos();
                dft[(bins + k) * n + i] = window[i] * ang.sin();
            }
        }
        let mut mel_fb = vec![0.0; cfg.n_mels * bins];
        let lo = hz_to_mel(cfg.fmin);
        let hi = hz_to_mel(cfg.fmax.min(cfg.sample_rate as f64 / 2.0));
        let centers: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / n as f64;
        for m in 0..cfg.n_mels {
            let (l, c, r) = (centers[m], centers[m + 1], centers[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f <= c {
                    (f - l) / (c - l)
                } else {
                    (r - f) / (r - c)
                };
                if w > 0.0 {
                    mel_fb[m * bins + k] = w;
                }
            }
        }
        MelExtractor {
            cfg,
            window,
            dft,
            mel_fb,
        }
    }

    fn pad(&self) -> usize {
        (self.cfg.n_fft - self.cfg.hop) / 2
    }

    /// Right-side extension that rounds the length up to a whole number of
    /// hops, so the frame count is `ceil(n / hop)`.
    fn extra(&self, n: usize) -> usize {
        (self.cfg.hop - n % self.cfg.hop) % self.cfg.hop
    }

    /// Number of frames for a waveform of `n` samples: `ceil(n / hop)`.
    pub fn frames_for(&self, n: usize) -> usize {
        assert!(n >= self.min_samples(), "waveform too short for framing");
        (n + self.cfg.hop - 1) / self.cfg.hop
    }

    /// Shortest waveform the reflection padding can handle.
    pub fn min_samples(&self) -> usize {
        self.pad() + self.cfg.hop + 1
    }

    fn reflect(&self, samples: &[f64]) -> Vec<f64> {
        let p = self.pad();
        let r = p + self.extra(samples.len());
        let l = samples.len();
        let mut out = Vec::with_capacity(l + p + r);
        for i in 0..p {
            out.push(samples[p - i]);
        }
        out.extend_from_slice(samples);
        for i in 0..r {
            out.push(samples[l - 2 - i]);
        }
        out
    }

    /// Log power-mel spectrogram, `[frames, n_mels]`.
    pub fn extract(&self, samples: &[f64]) -> Tensor {
        let n = self.cfg.n_fft;
        let bins = n / 2 + 1;
        let frames = self.frames_for(samples.len());
        let padded = self.reflect(samples);
        let mut out = vec![0.0; frames * self.cfg.n_mels];
        let mut power = vec![0.0; bins];
        for f in 0..frames {
            let seg = &padded[f * self.cfg.hop..f * self.cfg.hop + n];
            for k in 0..bins {
                let (mut re, mut im) = (0.0, 0.0);
                let crow = &self.dft[k * n..(k + 1) * n];
                let srow = &self.dft[(bins + k) * n..(bins + k + 1) * n];
                for i in 0..n {
                    re += crow[i] * seg[i];
                    im += srow[i] * seg[i];
                }
                power[k] = re * re + im * im;
            }
            for m in 0..self.cfg.n_mels {
                let row = &self.mel_fb[m * bins..(m + 1) * bins];
                let s: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                out[f * self.cfg.n_mels + m] = (s + self.cfg.log_floor).ln();
            }
        }
        Tensor::new(vec![frames, self.cfg.n_mels], out)
    }

    /// Differentiable version of [`extract`](Self::extract): same numbers,
    /// but built from tape ops so gradients reach the waveform node
    /// (`[1, n]`).
    pub fn mel_node(&self, tape: &mut Tape, wav: Node) -> Node {
        let n = self.cfg.n_fft;
        let bins = n / 2 + 1;
        let p = self.pad();
        let r = p + self.extra(tape.value(wav).len());
        let kernel = tape.constant(Tensor::new(vec![2 * bins, 1, n], self.dft.clone()));
        let fb = tape.constant(Tensor::new(
            vec![self.cfg.n_mels, bins],
            self.mel_fb.clone(),
        ));
        let padded = tape.reflect_pad_cols(wav, p, r);
        let spec = tape.conv1d(padded, kernel, None, 2 * bins, n, self.cfg.hop, 0, 1);
        let re = tape.slice_rows(spec, 0, bins);
        let im = tape.slice_rows(spec, bins, bins);
        let re2 = tape.mul(re, re);
        let im2 = tape.mul(im, im);
        let power = tape.add(re2, im2); // [bins, frames]
        let pt = tape.transpose(power); // [frames, bins]
        let mel = tape.matmul_nt(pt, fb); // [frames, n_mels]
        tape.log_eps(mel, self.cfg.log_floor)
    }
}

/// Pitch-tracking settings. Lags are searched over `[sr/fmax, sr/fmin]`.
#[derive(Debug, Clone)]
pub struct PitchConfig {
    pub fmin: f64,
    pub fmax: f64,
    /// Analysis window in samples.
    pub win: usize,
    /// Cost of log-pitch jumps between frames in the smoothing pass.
    pub transition_weight: f64,
}

impl Default for PitchConfig {
    fn default() -> PitchConfig {
        PitchConfig {
            fmin: 60.0,
            fmax: 400.0,
            win: 400,
            transition_weight: 2.0,
        }
    }
}

/// Per-frame auxiliary features, `[frames, 3]`: pitch in Hz, log energy,
/// and probability of voicing in `[0, 1]`.
pub fn extract_aux(
    samples: &[f64],
    sample_rate: u32,
    hop: usize,
    frames: usize,
    cfg: &PitchConfig,
) -> Result<Tensor> {
    if samples.len() < hop * frames {
        return Err(Error::Audio(format!(
            "waveform of {} samples cannot produce {frames} frames at hop {hop}",
            samples.len()
        )));
    }
    let sr = sample_rate as f64;
    let lag_min = (sr / cfg.fmax).floor().max(2.0) as usize;
    let lag_max = (sr / cfg.fmin).ceil() as usize;
    let win = cfg.win;
    // Reflect-pad enough for a window plus the longest lag around any frame
    // center.
    let reach = win / 2 + lag_max + 1;
    let l = samples.len();
    assert!(l > reach, "waveform too short for pitch analysis");
    let idx = |i: isize| -> f64 {
        let m = if i < 0 {
            (-i) as usize
        } else if i as usize >= l {
            2 * l - 2 - i as usize
        } else {
            i as usize
        };
        samples[m]
    };

    // Candidate generation: normalized cross-correlation per lag.
    let n_lags = lag_max - lag_min + 1;
    let mut nccs = vec![0.0f64; frames * n_lags];
    let mut energies = vec![0.0f64; frames];
    for f in 0..frames {
        let center = (f * hop + hop / 2) as isize;
        let start = center - (win / 2) as isize;
        let seg: Vec<f64> = (0..win + lag_max).map(|i| idx(start + i as isize)).collect();
        let e0: f64 = seg[..win].iter().map(|x| x * x).sum();
        energies[f] = (e0 / win as f64 + 1e-10).ln();
        for (li, lag) in (lag_min..=lag_max).enumerate() {
            let mut num = 0.0;
            let mut elag = 0.0;
            for i in 0..win {
                num += seg[i] * seg[i + lag];
                elag += seg[i + lag] * seg[i + lag];
            }
            let den = (e0 * elag).sqrt();
            nccs[f * n_lags + li] = if den > 1e-12 { num / den } else { 0.0 };
        }
    }

    // Up to five local maxima per frame (always at least the global best).
    let cand_count = 5;
    let mut cands: Vec<Vec<(usize, f64)>> = Vec::with_capacity(frames);
    for f in 0..frames {
        let row = &nccs[f * n_lags..(f + 1) * n_lags];
        let mut peaks: Vec<(usize, f64)> = (0..n_lags)
            .filter(|&li| {
                (li == 0 || row[li] >= row[li - 1]) && (li + 1 == n_lags || row[li] > row[li + 1])
            })
            .map(|li| (li, row[li]))
            .collect();
        peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        peaks.truncate(cand_count);
        if peaks.is_empty() {
            let best = (0..n_lags)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            peaks.push((best, row[best]));
        }
        cands.push(peaks);
    }

    // Smoothing: cheapest path through the candidates, paying for log-pitch
    // jumps, then backtrack.
    let mut cost: Vec<Vec<f64>> = Vec::with_capacity(frames);
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut c_row = Vec::with_capacity(cands[f].len());
        let mut b_row = Vec::with_capacity(cands[f].len());
        for &(li, ncc) in &cands[f] {
            let local = -ncc;
            if f == 0 {
                c_row.push(local);
                b_row.push(0);
            } else {
                let lag = (lag_min + li) as f64;
                let (bi, bc) = cands[f - 1]
                    .iter()
                    .enumerate()
                    .map(|(pi, &(pli, _))| {
                        let plag = (lag_min + pli) as f64;
                        let jump = (lag.ln() - plag.ln()).abs();
                        (pi, cost[f - 1][pi] + cfg.transition_weight * jump)
                    })
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap();
                c_row.push(local + bc);
                b_row.push(bi);
            }
        }
        cost.push(c_row);
        back.push(b_row);
    }
    let mut pick = vec![0usize; frames];
    pick[frames - 1] = (0..cands[frames - 1].len())
        .min_by(|&a, &b| cost[frames - 1][a].partial_cmp(&cost[frames - 1][b]).unwrap())
        .unwrap();
    for f in (1..frames).rev() {
        pick[f - 1] = back[f][pick[f]];
    }

    let mut out = vec![0.0; frames * 3];
    for f in 0..frames {
        let (li, ncc) = cands[f][pick[f]];
        let row = &nccs[f * n_lags..(f + 1) * n_lags];
        // Parabolic refinement around the chosen lag.
        let mut lag = (lag_min + li) as f64;
        if li > 0 && li + 1 < n_lags {
            let (ym, y0, yp) = (row[li - 1], row[li], row[li + 1]);
            let denom = ym - 2.0 * y0 + yp;
            if denom.abs() > 1e-12 {
                let delta = 0.5 * (ym - yp) / denom;
                if delta.abs() <= 1.0 {
                    lag += delta;
                }
            }
        }
        out[f * 3] = sr / lag;
        out[f * 3 + 1] = energies[f];
        out[f * 3 + 2] = ncc.clamp(0.0, 1.0);
    }
    Ok(Tensor::new(vec![frames, 3], out))
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::nn::ParamStore;
    use crate::rng;

    fn sine(freq: f64, n: usize, sr: f64, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin() * amp)
            .collect()
    }

    #[test]
    fn frame_count_law() {
        let ex = MelExtractor::new(MelConfig::default());
        for l in [30, 50, 128] {
            assert_eq!(ex.frames_for(l * 160), l);
            assert_eq!(ex.extract(&vec![0.0; l * 160]).rows(), l);
        }
        // Partial trailing hops round up.
        assert_eq!(ex.frames_for(30 * 160 + 1), 31);
        assert_eq!(ex.extract(&vec![0.0; 30 * 160 + 1]).rows(), 31);
    }

    #[test]
    fn sine_concentrates_in_expected_mel_band() {
        let ex = MelExtractor::new(MelConfig::default());
        let mel = ex.extract(&sine(1000.0, 16_000, 16_000.0, 0.5));
        // Find the peak mel bin of a middle frame and map it back to Hz.
        let row = mel.row(mel.rows() / 2);
        let peak = (0..row.len())
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
            .unwrap();
        let lo = hz_to_mel(0.0);
        let hi = hz_to_mel(8000.0);
        let center = mel_to_hz(lo + (hi - lo) * (peak + 1) as f64 / 81.0);
        assert!(
            (center - 1000.0).abs() < 150.0,
            "peak bin {peak} maps to {center} Hz"
        );
    }

    #[test]
    fn silence_hits_log_floor() {
        let cfg = MelConfig::default();
        let floor = cfg.log_floor;
        let ex = MelExtractor::new(cfg);
        let mel = ex.extract(&vec![0.0; 8000]);
        for &v in &mel.data {
            assert!((v - floor.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn differentiable_mel_matches_plain_extractor() {
        let ex = MelExtractor::new(MelConfig::default());
        let mut r = rng::stream(77);
        let wav: Vec<f64> = (0..3200).map(|_| r.gen_range(-0.5..0.5)).collect();
        let plain = ex.extract(&wav);
        let mut tape = Tape::inference();
        let w = tape.constant(Tensor::new(vec![1, wav.len()], wav));
        let node = ex.mel_node(&mut tape, w);
        let taped = tape.value(node);
        assert_eq!(taped.shape, plain.shape);
        for (a, b) in plain.data.iter().zip(&taped.data) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn mel_gradient_reaches_waveform() {
        // Small config keeps the finite-difference loop cheap.
        let ex = MelExtractor::new(MelConfig {
            n_fft: 32,
            win: 24,
            hop: 8,
            n_mels: 6,
            fmax: 8000.0,
            ..Default::default()
        });
        let mut store = ParamStore::new();
        let mut r = rng::stream(78);
        store.add_normal("wav", vec![1, 64], 0.3, &mut r);
        let mut tape = Tape::new();
        let w = store.leaf_named(&mut tape, "wav");
        let mel = ex.mel_node(&mut tape, w);
        let loss = tape.sum_all(mel);
        let grads = tape.backward(loss);
        let g = &grads.iter().find(|(i, _)| *i == 0).unwrap().1;
        let h = 1e-6;
        for i in [0usize, 17, 40, 63] {
            let orig = store.tensor(0).data[i];
            store.tensor_mut(0).data[i] = orig + h;
            let mut tp = Tape::inference();
            let wp = store.leaf_named(&mut tp, "wav");
            let mp = ex.mel_node(&mut tp, wp);
            let fp: f64 = tp.value(mp).data.iter().sum();
            store.tensor_mut(0).data[i] = orig - h;
            let mut tm = Tape::inference();
            let wm = store.leaf_named(&mut tm, "wav");
            let mm = ex.mel_node(&mut tm, wm);
            let fm: f64 = tm.value(mm).data.iter().sum();
            store.tensor_mut(0).data[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(g[i].abs()).max(1.0);
            assert!((fd - g[i]).abs() / denom < 1e-4, "{}: {} vs {}", i, g[i], fd);
        }
    }

    #[test]
    fn pitch_tracks_a_sine() {
        let sr = 16_000u32;
        let wav = sine(160.0, 16_000, sr as f64, 0.6);
        let aux = extract_aux(&wav, sr, 160, 100, &PitchConfig::default()).unwrap();
        // Skip edge frames where the analysis window sees reflections.
        for f in 5..95 {
            let f0 = aux.row(f)[0];
            let pov = aux.row(f)[2];
            assert!((f0 - 160.0).abs() < 4.0, "frame {f}: f0 {f0}");
            assert!(pov > 0.9, "frame {f}: pov {pov}");
        }
    }

    #[test]
    fn noise_has_low_voicing_and_louder_is_higher_energy() {
        let sr = 16_000u32;
        let mut r = rng::stream(79);
        let noise: Vec<f64> = (0..8000).map(|_| r.gen_range(-0.3..0.3)).collect();
        let aux = extract_aux(&noise, sr, 160, 50, &PitchConfig::default()).unwrap();
        let mean_pov: f64 = (0..50).map(|f| aux.row(f)[2]).sum::<f64>() / 50.0;
        assert!(mean_pov < 0.6, "noise voicing {mean_pov}");

        let quiet = sine(200.0, 8000, sr as f64, 0.05);
        let loud = sine(200.0, 8000, sr as f64, 0.5);
        let aq = extract_aux(&quiet, sr, 160, 50, &PitchConfig::default()).unwrap();
        let al = extract_aux(&loud, sr, 160, 50, &PitchConfig::default()).unwrap();
        for f in 5..45 {
            assert!(al.row(f)[1] > aq.row(f)[1]);
        }
    }

    #[test]
    fn aux_frame_count_matches_request() {
        let wav = sine(120.0, 6400, 16_000.0, 0.4);
        let aux = extract_aux(&wav, 16_000, 160, 40, &PitchConfig::default()).unwrap();
        assert_eq!(aux.shape, vec![40, 3]);
        let err = extract_aux(&wav, 16_000, 160, 41, &PitchConfig::default());
        assert!(err.is_err());
    }
}

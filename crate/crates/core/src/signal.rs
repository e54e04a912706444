//! Frame-level prosody (voice activity, F0, intensity, spectral stability),
//! MFCCs, and utterance-level acoustic statistics from PCM audio.

use std::cell::RefCell;
use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor for intensities and the value reported for digital silence.
pub const SILENCE_DB: f64 = -120.0;
pub const N_MFCC: usize = 13;
pub const N_MEL_FILTERS: usize = 26;
/// Length of [`AcousticFeatureVector`] produced by this module.
pub const ACOUSTIC_DIM: usize = 4 + 4 + 4 + 1 + 2 * N_MFCC;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("signal too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },
    #[error("frame lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid frame spec: {0}")]
    InvalidSpec(String),
}

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Encodes as a 16-bit PCM mono WAV file image.
    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).expect("in-memory writer");
            for s in &self.samples {
                let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                w.write_sample(v).expect("in-memory write");
            }
            w.finalize().expect("in-memory finalize");
        }
        cursor.into_inner()
    }

    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Self, SignalError> {
        read_wav(hound::WavReader::new(Cursor::new(bytes)))
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, SignalError> {
    read_wav(hound::WavReader::open(path))
}

fn read_wav<R: std::io::Read>(
    reader: Result<hound::WavReader<R>, hound::Error>,
) -> Result<AudioBuffer, SignalError> {
    let reader = reader.map_err(wav_error)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(SignalError::UnsupportedFormat(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(SignalError::UnsupportedFormat(format!(
            "{:?} {}-bit, expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(wav_error)?;
    Ok(AudioBuffer::new(samples, spec.sample_rate))
}

fn wav_error(e: hound::Error) -> SignalError {
    match e {
        hound::Error::IoError(io) => SignalError::Io(io),
        other => SignalError::UnsupportedFormat(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            window_s: 0.025,
            hop_s: 0.010,
        }
    }
}

impl FrameSpec {
    /// Window and hop lengths in samples.
    pub fn samples(&self, sample_rate: u32) -> Result<(usize, usize), SignalError> {
        if !(self.hop_s > 0.0 && self.hop_s <= self.window_s) {
            return Err(SignalError::InvalidSpec(format!(
                "need 0 < hop ({}) <= window ({})",
                self.hop_s, self.window_s
            )));
        }
        let sr = f64::from(sample_rate);
        let w = (self.window_s * sr).round() as usize;
        let h = ((self.hop_s * sr).round() as usize).max(1);
        if w == 0 {
            return Err(SignalError::InvalidSpec("window shorter than a sample".into()));
        }
        Ok((w, h))
    }
}

/// One analysis frame: the raw samples and their Hann-windowed copy.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub raw: Vec<f64>,
    pub windowed: Vec<f64>,
}

pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

pub fn frame_signal(buf: &AudioBuffer, spec: &FrameSpec) -> Result<Vec<Frame>, SignalError> {
    let (w, h) = spec.samples(buf.sample_rate)?;
    let n = buf.samples.len();
    if n < w {
        return Err(SignalError::TooShort {
            samples: n,
            needed: w,
        });
    }
    let window = hann(w);
    let count = 1 + (n - w) / h;
    Ok((0..count)
        .map(|i| {
            let raw = buf.samples[i * h..i * h + w].to_vec();
            let windowed = raw.iter().zip(&window).map(|(s, c)| s * c).collect();
            Frame { raw, windowed }
        })
        .collect())
}

/// Detector thresholds. All of these are overridable from the service config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsodyConfig {
    pub vad_threshold_db: f64,
    pub voicing_threshold: f64,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
}

impl Default for ProsodyConfig {
    fn default() -> Self {
        Self {
            vad_threshold_db: -40.0,
            voicing_threshold: 0.3,
            f0_min_hz: 50.0,
            f0_max_hz: 500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsodicFrame {
    pub voiced: bool,
    pub f0_hz: f64,
    pub intensity_db: f64,
    pub stability: f64,
}

pub fn intensity_db(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return SILENCE_DB;
    }
    let ms = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
    let rms = ms.sqrt();
    if rms <= 0.0 {
        return SILENCE_DB;
    }
    (20.0 * rms.log10()).clamp(SILENCE_DB, 0.0)
}

pub fn voice_activity(samples: &[f64], threshold_db: f64) -> bool {
    intensity_db(samples) >= threshold_db
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

fn forward_fft(samples: &[f64], len: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .map(|&s| Complex::new(s, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    fft_plan(len, false).process(&mut buf);
    buf
}

/// Magnitudes of the non-negative frequency bins, FFT padded to a power of two.
pub fn magnitude_spectrum(windowed: &[f64]) -> Vec<f64> {
    let len = windowed.len().next_power_of_two().max(2);
    forward_fft(windowed, len)[..=len / 2]
        .iter()
        .map(|c| c.norm())
        .collect()
}

/// Per-lag normalized autocorrelation for lags `0..max_lag`, computed through
/// the power spectrum.
fn normalized_autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let len = (2 * n).next_power_of_two();
    let mut spec = forward_fft(x, len);
    for c in &mut spec {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    fft_plan(len, true).process(&mut spec);
    let scale = 1.0 / len as f64;

    let mut prefix = vec![0.0; n + 1];
    for (i, s) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + s * s;
    }
    (0..max_lag.min(n))
        .map(|lag| {
            let head = prefix[n - lag];
            let tail = prefix[n] - prefix[lag];
            let denom = (head * tail).sqrt();
            if denom <= 1e-12 {
                0.0
            } else {
                (spec[lag].re * scale / denom).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

/// Autocorrelation pitch estimate restricted to the configured F0 range.
/// Returns `(false, 0.0)` for unvoiced or silent frames.
pub fn estimate_f0(frame: &Frame, sample_rate: u32, cfg: &ProsodyConfig) -> (bool, f64) {
    let x = &frame.raw;
    if intensity_db(x) < cfg.vad_threshold_db {
        return (false, 0.0);
    }
    let sr = f64::from(sample_rate);
    let min_lag = ((sr / cfg.f0_max_hz).floor() as usize).max(2);
    // keep at least a fifth of the frame overlapping at the longest lag
    let max_lag = ((sr / cfg.f0_min_hz).ceil() as usize).min(x.len() * 4 / 5);
    if max_lag <= min_lag + 1 {
        return (false, 0.0);
    }
    let r = normalized_autocorrelation(x, max_lag + 2);
    let peaks: Vec<usize> = (min_lag..=max_lag)
        .filter(|&t| t + 1 < r.len() && r[t] > r[t - 1] && r[t] >= r[t + 1])
        .collect();
    let Some(best) = peaks.iter().map(|&t| r[t]).reduce(f64::max) else {
        return (false, 0.0);
    };
    if best < cfg.voicing_threshold {
        return (false, 0.0);
    }
    // earliest strong peak avoids octave-down errors at multiples of the period
    let lag = peaks
        .into_iter()
        .find(|&t| r[t] >= 0.9 * best)
        .expect("best peak exists");
    let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
    let curvature = a - 2.0 * b + c;
    let offset = if curvature.abs() > 1e-12 {
        (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let f0 = (sr / (lag as f64 + offset)).clamp(cfg.f0_min_hz, cfg.f0_max_hz);
    (true, f0)
}

/// One minus the L2 spectral flux between two windowed frames, normalized by
/// the larger spectral norm. Two silent frames are perfectly stable.
pub fn spectral_stability(prev: &[f64], frame: &[f64]) -> Result<f64, SignalError> {
    if prev.len() != frame.len() {
        return Err(SignalError::LengthMismatch(prev.len(), frame.len()));
    }
    Ok(stability_from_magnitudes(
        &magnitude_spectrum(prev),
        &magnitude_spectrum(frame),
    ))
}

fn stability_from_magnitudes(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale <= 0.0 {
        return 1.0;
    }
    let flux = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    (1.0 - flux / scale).clamp(0.0, 1.0)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filter weights over `bins` spectrum bins.
fn mel_filterbank(bins: usize, fft_len: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let sr = f64::from(sample_rate);
    let high = (sr / 2.0).min(8000.0);
    let (lo_mel, hi_mel) = (hz_to_mel(0.0), hz_to_mel(high));
    let edges: Vec<f64> = (0..N_MEL_FILTERS + 2)
        .map(|i| mel_to_hz(lo_mel + (hi_mel - lo_mel) * i as f64 / (N_MEL_FILTERS + 1) as f64))
        .collect();
    (0..N_MEL_FILTERS)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sr / fft_len as f64;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

fn mfcc_from_magnitudes(mags: &[f64], sample_rate: u32, n_coeffs: usize) -> Vec<f64> {
    let fft_len = (mags.len() - 1) * 2;
    let bank = mel_filterbank(mags.len(), fft_len, sample_rate);
    let log_energies: Vec<f64> = bank
        .iter()
        .map(|filter| {
            let e: f64 = filter.iter().zip(mags).map(|(w, m)| w * m * m).sum();
            (e + 1e-10).ln()
        })
        .collect();
    let m = log_energies.len() as f64;
    let scale = (2.0 / m).sqrt();
    (0..n_coeffs)
        .map(|k| {
            scale
                * log_energies
                    .iter()
                    .enumerate()
                    .map(|(j, l)| {
                        l * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / m).cos()
                    })
                    .sum::<f64>()
        })
        .collect()
}

/// Mel-frequency cepstral coefficients of one windowed frame
/// (26 mel filters up to 8 kHz, log energies, DCT-II).
pub fn mfcc(windowed: &[f64], sample_rate: u32, n_coeffs: usize) -> Vec<f64> {
    mfcc_from_magnitudes(&magnitude_spectrum(windowed), sample_rate, n_coeffs)
}

/// Fixed-length acoustic statistics for one utterance or segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AcousticFeatureVector {
    pub values: Vec<f64>,
}

impl AcousticFeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Frame-by-frame analysis of one buffer, shared by the utterance vector,
/// the segment sequence, the disfluency prosody stream and pause detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub sample_rate: u32,
    pub spec: FrameSpec,
    pub prosody: Vec<ProsodicFrame>,
    mfccs: Vec<Vec<f64>>,
}

pub fn analyze(
    buf: &AudioBuffer,
    spec: &FrameSpec,
    cfg: &ProsodyConfig,
) -> Result<Analysis, SignalError> {
    let frames = frame_signal(buf, spec)?;
    let mut prosody = Vec::with_capacity(frames.len());
    let mut mfccs = Vec::with_capacity(frames.len());
    let mut prev_mags: Option<Vec<f64>> = None;
    for frame in &frames {
        let (voiced, f0_hz) = estimate_f0(frame, buf.sample_rate, cfg);
        let mags = magnitude_spectrum(&frame.windowed);
        let stability = prev_mags
            .as_deref()
            .map_or(1.0, |p| stability_from_magnitudes(p, &mags));
        prosody.push(ProsodicFrame {
            voiced,
            f0_hz,
            intensity_db: intensity_db(&frame.raw),
            stability,
        });
        mfccs.push(mfcc_from_magnitudes(&mags, buf.sample_rate, N_MFCC));
        prev_mags = Some(mags);
    }
    Ok(Analysis {
        sample_rate: buf.sample_rate,
        spec: *spec,
        prosody,
        mfccs,
    })
}

fn stats(values: &[f64]) -> [f64; 4] {
    if values.is_empty() {
        return [0.0; 4];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [mean, var.sqrt(), min, max]
}

impl Analysis {
    pub fn frame_count(&self) -> usize {
        self.prosody.len()
    }

    /// Statistics over frames `range`. Layout: F0 (voiced frames only),
    /// intensity and stability as mean/std/min/max, voiced ratio, then MFCC
    /// means and MFCC standard deviations.
    pub fn summarize(&self, range: std::ops::Range<usize>) -> AcousticFeatureVector {
        let frames = &self.prosody[range.clone()];
        let f0: Vec<f64> = frames.iter().filter(|f| f.voiced).map(|f| f.f0_hz).collect();
        let intensity: Vec<f64> = frames.iter().map(|f| f.intensity_db).collect();
        let stability: Vec<f64> = frames.iter().map(|f| f.stability).collect();
        let voiced_ratio = if frames.is_empty() {
            0.0
        } else {
            f0.len() as f64 / frames.len() as f64
        };
        let mut values = Vec::with_capacity(ACOUSTIC_DIM);
        values.extend(stats(&f0));
        values.extend(stats(&intensity));
        values.extend(stats(&stability));
        values.push(voiced_ratio);
        let coeffs = &self.mfccs[range];
        let per_coeff: Vec<[f64; 4]> = (0..N_MFCC)
            .map(|k| stats(&coeffs.iter().map(|c| c[k]).collect::<Vec<_>>()))
            .collect();
        values.extend(per_coeff.iter().map(|s| s[0]));
        values.extend(per_coeff.iter().map(|s| s[1]));
        AcousticFeatureVector { values }
    }

    pub fn vector(&self) -> AcousticFeatureVector {
        self.summarize(0..self.frame_count())
    }

    /// One statistics vector per `segment_s` chunk of frames. A trailing chunk
    /// shorter than half a segment is folded into the previous one.
    pub fn segment_vectors(&self, segment_s: f64) -> Vec<AcousticFeatureVector> {
        let n = self.frame_count();
        let per = ((segment_s / self.spec.hop_s).round() as usize).max(1);
        let mut bounds = Vec::new();
        let mut start = 0;
        while start < n {
            let mut end = (start + per).min(n);
            if n - end < per / 2 {
                end = n;
            }
            bounds.push(start..end);
            start = end;
        }
        bounds.into_iter().map(|r| self.summarize(r)).collect()
    }

    /// Voice-inactive runs of at least `min_pause_s` between active frames,
    /// as `(start_s, end_s)` relative to the buffer start.
    pub fn pauses(&self, vad_threshold_db: f64, min_pause_s: f64) -> Vec<(f64, f64)> {
        let hop = self.spec.hop_s;
        let active: Vec<bool> = self
            .prosody
            .iter()
            .map(|f| f.intensity_db >= vad_threshold_db)
            .collect();
        let (Some(first), Some(last)) = (
            active.iter().position(|&a| a),
            active.iter().rposition(|&a| a),
        ) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut run_start = None;
        for (i, &a) in active.iter().enumerate().take(last + 1).skip(first) {
            match (a, run_start) {
                (false, None) => run_start = Some(i),
                (true, Some(s)) => {
                    let dur = (i - s) as f64 * hop;
                    if dur >= min_pause_s - 1e-9 {
                        out.push((s as f64 * hop, i as f64 * hop));
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
        out
    }

    /// Mean prosody over frames whose start lies in `[t0, t1)`, scaled to
    /// [0, 1]: voiced fraction, F0 / 500 Hz, (dB + 120) / 120, stability.
    pub fn prosody_span(&self, t0: f64, t1: f64) -> [f64; 4] {
        let hop = self.spec.hop_s;
        let sel: Vec<&ProsodicFrame> = self
            .prosody
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let t = *i as f64 * hop;
                t >= t0 && t < t1
            })
            .map(|(_, f)| f)
            .collect();
        if sel.is_empty() {
            return [0.0; 4];
        }
        let n = sel.len() as f64;
        [
            sel.iter().filter(|f| f.voiced).count() as f64 / n,
            sel.iter().map(|f| f.f0_hz).sum::<f64>() / n / 500.0,
            sel.iter().map(|f| (f.intensity_db - SILENCE_DB) / -SILENCE_DB).sum::<f64>() / n,
            sel.iter().map(|f| f.stability).sum::<f64>() / n,
        ]
    }
}

/// Utterance statistics vector plus the frame-level prosody it was built from.
pub fn extract_acoustic_vector(
    buf: &AudioBuffer,
    spec: &FrameSpec,
    cfg: &ProsodyConfig,
) -> Result<(AcousticFeatureVector, Vec<ProsodicFrame>), SignalError> {
    let analysis = analyze(buf, spec, cfg)?;
    Ok((analysis.vector(), analysis.prosody))
}

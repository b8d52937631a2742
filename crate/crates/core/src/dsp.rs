//! Log-filterbank spectrogram features.
//!
//! Frames are taken every `hop_size` samples with a Hann window of
//! `window_size` samples centered on sample `k * hop_size` (zero padded at the
//! edges). Magnitudes are projected onto triangular filters spaced
//! `bins_per_octave` per octave, compressed with `ln(x + log_floor)`, and the
//! half-wave rectified first difference over time is appended. The canonical
//! configuration gives 84 bands and 168-wide frames at 100 fps.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 44100;

/// Reference pitch the geometric band series is anchored to.
const REFERENCE_HZ: f64 = 440.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_size: usize,
    pub hop_size: usize,
    pub fps: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub bins_per_octave: usize,
    pub n_bands: usize,
    pub feature_width: usize,
    pub log_floor: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            window_size: 2048,
            hop_size: 441,
            fps: 100.0,
            f_min: 20.0,
            f_max: 20000.0,
            bins_per_octave: 12,
            n_bands: 84,
            feature_width: 168,
            log_floor: 1.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop_size == 0 || self.window_size < 2 {
            return Err(Error::Config("sample rate, hop and window must be positive".into()));
        }
        if self.feature_width != 2 * self.n_bands {
            return Err(Error::Config(format!(
                "feature width {} must be twice the band count {}",
                self.feature_width, self.n_bands
            )));
        }
        let implied = self.sample_rate as f64 / self.hop_size as f64;
        if (implied - self.fps).abs() > 0.5 {
            return Err(Error::Config(format!(
                "fps {} inconsistent with sample_rate/hop_size = {implied}",
                self.fps
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn n_fft_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Short stable digest stored in checkpoints to detect feature drift.
    pub fn hash_hex(&self) -> String {
        let canonical = format!(
            "sr={};win={};hop={};fps={};fmin={};fmax={};bpo={};bands={};width={};floor={}",
            self.sample_rate,
            self.window_size,
            self.hop_size,
            self.fps,
            self.f_min,
            self.f_max,
            self.bins_per_octave,
            self.n_bands,
            self.feature_width,
            self.log_floor
        );
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Center time of frame `k`.
    pub fn frame_time(&self, k: usize) -> f64 {
        k as f64 / self.fps
    }

    pub fn time_to_frame(&self, t: f64) -> usize {
        (t * self.fps).round().max(0.0) as usize
    }
}

/// One triangular filter stored over its support only.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangularFilter {
    pub start_bin: usize,
    pub center_bin: usize,
    pub weights: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterbankMatrix {
    pub n_fft_bins: usize,
    pub filters: Vec<TriangularFilter>,
    pub band_centers: Vec<f64>,
}

impl FilterbankMatrix {
    pub fn n_bands(&self) -> usize {
        self.filters.len()
    }

    /// Dense weight row of band `b`.
    pub fn row(&self, b: usize) -> Vec<f32> {
        let f = &self.filters[b];
        let mut row = vec![0.0; self.n_fft_bins];
        row[f.start_bin..f.start_bin + f.weights.len()].copy_from_slice(&f.weights);
        row
    }

    pub fn apply(&self, magnitudes: &[f32], out: &mut [f32]) {
        for (o, f) in out.iter_mut().zip(&self.filters) {
            let mags = &magnitudes[f.start_bin..f.start_bin + f.weights.len()];
            *o = mags.iter().zip(&f.weights).map(|(m, w)| m * w).sum();
        }
    }
}

/// Geometric series of candidate frequencies anchored at 440 Hz.
fn log_frequencies(f_min: f64, f_max: f64, bins_per_octave: usize) -> Vec<f64> {
    let bpo = bins_per_octave as f64;
    let left = ((f_min / REFERENCE_HZ).log2() * bpo).floor() as i64;
    let right = ((f_max / REFERENCE_HZ).log2() * bpo).ceil() as i64;
    (left..right)
        .map(|i| REFERENCE_HZ * 2f64.powf(i as f64 / bpo))
        .filter(|&f| f >= f_min && f <= f_max)
        .collect()
}

/// Index of the FFT bin nearest to `f`; exact ties go to the upper bin.
fn nearest_bin(bin_freqs: &[f64], f: f64) -> usize {
    let n = bin_freqs.len();
    let idx = bin_freqs.partition_point(|&b| b < f).clamp(1, n - 1);
    if f - bin_freqs[idx - 1] < bin_freqs[idx] - f {
        idx - 1
    } else {
        idx
    }
}

/// Triangular log-frequency filterbank.
///
/// Candidate centers are snapped to FFT bins and consecutive duplicates
/// merged. The first and last surviving bins only serve as the outer edges of
/// their neighbours, so `unique_bins - 2` bands remain; each triangle rises
/// from the previous center to its own and falls to the next one, with a
/// peak weight of 1.
pub fn build_log_filterbank(
    sample_rate: u32,
    fft_size: usize,
    f_min: f64,
    f_max: f64,
    bins_per_octave: usize,
) -> Result<FilterbankMatrix> {
    if !(f_min > 0.0) || f_min >= f_max {
        return Err(Error::Config(format!("invalid frequency range {f_min}..{f_max} Hz")));
    }
    if f_max > sample_rate as f64 / 2.0 {
        return Err(Error::Config(format!(
            "f_max {f_max} Hz exceeds Nyquist {} Hz",
            sample_rate as f64 / 2.0
        )));
    }
    if bins_per_octave == 0 {
        return Err(Error::Config("bins_per_octave must be at least 1".into()));
    }
    if fft_size < 4 {
        return Err(Error::Config(format!("fft size {fft_size} too small")));
    }
    let n_fft_bins = fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let bin_freqs: Vec<f64> = (0..n_fft_bins).map(|k| k as f64 * bin_hz).collect();

    let mut bins: Vec<usize> = log_frequencies(f_min, f_max, bins_per_octave)
        .into_iter()
        .map(|f| nearest_bin(&bin_freqs, f))
        .collect();
    bins.dedup();
    if bins.len() < 3 {
        return Err(Error::Config(format!(
            "fft size {fft_size} cannot separate any bands in {f_min}..{f_max} Hz"
        )));
    }

    let filters: Vec<TriangularFilter> = bins
        .windows(3)
        .map(|w| {
            let (start, center, stop) = (w[0], w[1], w[2]);
            let rise = (center - start) as f32;
            let fall = (stop - center) as f32;
            let weights = (start..stop)
                .map(|k| {
                    if k < center {
                        (k - start) as f32 / rise
                    } else {
                        (stop - k) as f32 / fall
                    }
                })
                .collect();
            TriangularFilter {
                start_bin: start,
                center_bin: center,
                weights,
            }
        })
        .collect();
    let band_centers = filters.iter().map(|f| bin_freqs[f.center_bin]).collect();
    Ok(FilterbankMatrix {
        n_fft_bins,
        filters,
        band_centers,
    })
}

/// Magnitude spectrogram, `n_frames x n_bins`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub n_frames: usize,
    pub n_bins: usize,
    pub values: Vec<f32>,
}

impl Spectrogram {
    pub fn frame(&self, k: usize) -> &[f32] {
        &self.values[k * self.n_bins..(k + 1) * self.n_bins]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub n_frames: usize,
    pub width: usize,
    pub fps: f64,
    pub values: Vec<f32>,
}

const BLOB_MAGIC: &[u8; 4] = b"DSFM";
const BLOB_VERSION: u16 = 1;

impl FeatureMatrix {
    pub fn row(&self, k: usize) -> &[f32] {
        &self.values[k * self.width..(k + 1) * self.width]
    }

    pub fn get(&self, k: usize, j: usize) -> f32 {
        self.values[k * self.width + j]
    }

    /// Flat little-endian blob:
    ///
    /// ```text
    /// offset  size  field
    /// 0       4     magic "DSFM"
    /// 4       2     version (u16, currently 1)
    /// 6       2     reserved, zero
    /// 8       4     n_frames (u32)
    /// 12      4     width (u32)
    /// 16      8     fps (f64)
    /// 24      4*n   values (f32, row-major)
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.values.len());
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.n_frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&self.fps.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 || &bytes[..4] != BLOB_MAGIC {
            return Err(Error::Invalid("not a feature blob".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != BLOB_VERSION {
            return Err(Error::Invalid(format!("unsupported feature blob version {version}")));
        }
        let n_frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let fps = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let body = &bytes[24..];
        if body.len() != 4 * n_frames * width {
            return Err(Error::Invalid(format!(
                "feature blob body is {} bytes, expected {}",
                body.len(),
                4 * n_frames * width
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            n_frames,
            width,
            fps,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(Error::io(path))?;
        f.write_all(&self.to_bytes()).map_err(Error::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes).map_err(|e| Error::file(path, e.to_string()))
    }
}

fn hann(n: usize) -> Vec<f32> {
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos()) as f32)
        .collect()
}

fn check_rate(audio: &AudioBuffer, cfg: &FeatureConfig) -> Result<()> {
    if audio.sample_rate != cfg.sample_rate {
        return Err(Error::Invalid(format!(
            "audio sampled at {} Hz; features require {} Hz (resample upstream)",
            audio.sample_rate, cfg.sample_rate
        )));
    }
    Ok(())
}

/// Holds the window, FFT plan and filterbank for repeated extraction.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    filterbank: FilterbankMatrix,
    window: Vec<f32>,
    fft: Arc<dyn Fft<f32>>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let filterbank = build_log_filterbank(
            cfg.sample_rate,
            cfg.window_size,
            cfg.f_min,
            cfg.f_max,
            cfg.bins_per_octave,
        )?;
        if filterbank.n_bands() != cfg.n_bands {
            return Err(Error::Config(format!(
                "filterbank has {} bands but config expects {}",
                filterbank.n_bands(),
                cfg.n_bands
            )));
        }
        let window = hann(cfg.window_size);
        let fft = FftPlanner::new().plan_fft_forward(cfg.window_size);
        Ok(Self {
            cfg,
            filterbank,
            window,
            fft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &FilterbankMatrix {
        &self.filterbank
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.cfg.hop_size)
    }

    pub fn magnitude_spectrogram(&self, audio: &AudioBuffer) -> Result<Spectrogram> {
        check_rate(audio, &self.cfg)?;
        let win = self.cfg.window_size;
        let half = (win / 2) as isize;
        let n_bins = self.cfg.n_fft_bins();
        let n_frames = self.n_frames(audio.samples.len());
        let mut values = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex32::new(0.0, 0.0); win];
        let mut scratch = vec![Complex32::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let len = audio.samples.len() as isize;
        for k in 0..n_frames {
            let origin = (k * self.cfg.hop_size) as isize - half;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = origin + i as isize;
                let x = if s >= 0 && s < len {
                    audio.samples[s as usize]
                } else {
                    0.0
                };
                *slot = Complex32::new(x * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            values.extend(buf[..n_bins].iter().map(|c| c.norm()));
        }
        Ok(Spectrogram {
            n_frames,
            n_bins,
            values,
        })
    }

    pub fn extract(&self, audio: &AudioBuffer) -> Result<FeatureMatrix> {
        let spec = self.magnitude_spectrogram(audio)?;
        featurize_spectrogram(&spec, &self.cfg, &self.filterbank)
    }
}

/// Magnitude STFT with the configured window and hop.
pub fn stft_mag(audio: &AudioBuffer, cfg: &FeatureConfig) -> Result<Spectrogram> {
    FeatureExtractor::new(cfg.clone())?.magnitude_spectrogram(audio)
}

/// Full feature pipeline with an explicit filterbank.
pub fn featurize(audio: &AudioBuffer, cfg: &FeatureConfig, fb: &FilterbankMatrix) -> Result<FeatureMatrix> {
    let spec = stft_mag(audio, cfg)?;
    featurize_spectrogram(&spec, cfg, fb)
}

/// Filterbank projection, log compression and rectified time difference.
pub fn featurize_spectrogram(
    spec: &Spectrogram,
    cfg: &FeatureConfig,
    fb: &FilterbankMatrix,
) -> Result<FeatureMatrix> {
    if fb.n_fft_bins != spec.n_bins {
        return Err(Error::Shape(format!(
            "filterbank expects {} FFT bins, spectrogram has {}",
            fb.n_fft_bins, spec.n_bins
        )));
    }
    let mut bands = vec![0.0f32; fb.n_bands()];
    let log_rows: Vec<Vec<f32>> = (0..spec.n_frames)
        .map(|k| {
            fb.apply(spec.frame(k), &mut bands);
            bands.iter().map(|&x| (x + cfg.log_floor).ln()).collect()
        })
        .collect();
    Ok(stack_with_positive_diff(&log_rows, cfg.fps))
}

/// `[x_t || max(0, x_t - x_{t-1})]` per frame, with a zero difference at t = 0.
pub fn stack_with_positive_diff(log_rows: &[Vec<f32>], fps: f64) -> FeatureMatrix {
    let n_bands = log_rows.first().map_or(0, Vec::len);
    let width = 2 * n_bands;
    let mut values = Vec::with_capacity(log_rows.len() * width);
    for (t, row) in log_rows.iter().enumerate() {
        values.extend_from_slice(row);
        if t == 0 {
            values.extend(std::iter::repeat(0.0).take(n_bands));
        } else {
            let prev = &log_rows[t - 1];
            values.extend(row.iter().zip(prev).map(|(x, p)| (x - p).max(0.0)));
        }
    }
    FeatureMatrix {
        n_frames: log_rows.len(),
        width,
        fps,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, seconds: f64) -> AudioBuffer {
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        let samples = (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin()) as f32)
            .collect();
        AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
    }

    /// Brute-force reference: scan the whole exponent range, snap by
    /// exhaustive nearest-bin search, merge repeats, drop the two edges.
    fn brute_force_centers(sr: f64, fft: usize, fmin: f64, fmax: f64, bpo: usize) -> Vec<f64> {
        let bin_hz = sr / fft as f64;
        let n_bins = fft / 2 + 1;
        let mut snapped: Vec<usize> = Vec::new();
        for i in -1000i64..1000 {
            let f = 440.0 * 2f64.powf(i as f64 / bpo as f64);
            if f < fmin || f > fmax {
                continue;
            }
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..n_bins {
                let d = (k as f64 * bin_hz - f).abs();
                if d <= best_d {
                    best_d = d;
                    best = k;
                }
                if k as f64 * bin_hz > f + bin_hz {
                    break;
                }
            }
            if snapped.last() != Some(&best) {
                snapped.push(best);
            }
        }
        snapped[1..snapped.len() - 1].iter().map(|&k| k as f64 * bin_hz).collect()
    }

    #[test]
    fn canonical_filterbank_has_84_bands() {
        let fb = build_log_filterbank(44100, 2048, 20.0, 20000.0, 12).unwrap();
        assert_eq!(fb.n_bands(), 84);
        assert_eq!(fb.n_fft_bins, 1025);
    }

    #[test]
    fn canonical_filterbank_rows_are_nonnegative_unimodal_triangles() {
        let fb = build_log_filterbank(44100, 2048, 20.0, 20000.0, 12).unwrap();
        for b in 0..fb.n_bands() {
            let row = fb.row(b);
            assert!(row.iter().all(|&w| w >= 0.0));
            let peak = row.iter().cloned().fold(0.0f32, f32::max);
            assert!((peak - 1.0).abs() < 1e-6);
            let argmax = row.iter().position(|&w| w == peak).unwrap();
            assert!(row[..=argmax].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[argmax..].windows(2).all(|w| w[0] >= w[1]));
        }
        assert!(fb.band_centers.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn band_centers_match_brute_force_enumeration() {
        let fb = build_log_filterbank(44100, 2048, 20.0, 20000.0, 12).unwrap();
        let oracle = brute_force_centers(44100.0, 2048, 20.0, 20000.0, 12);
        assert_eq!(fb.band_centers, oracle);
    }

    #[test]
    fn invalid_ranges_are_config_errors() {
        assert!(matches!(
            build_log_filterbank(44100, 2048, 500.0, 100.0, 12),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_log_filterbank(44100, 2048, 20.0, 30000.0, 12),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_log_filterbank(44100, 2, 20.0, 20000.0, 12),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_log_filterbank(44100, 2048, 1000.0, 1010.0, 12),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn one_second_gives_100_frames() {
        let cfg = FeatureConfig::default();
        let spec = stft_mag(&AudioBuffer::silence(44100, 44100), &cfg).unwrap();
        assert_eq!(spec.n_frames, 100);
        assert_eq!(spec.n_bins, 1025);
    }

    #[test]
    fn empty_audio_gives_no_frames() {
        let cfg = FeatureConfig::default();
        let spec = stft_mag(&AudioBuffer::silence(0, 44100), &cfg).unwrap();
        assert_eq!(spec.n_frames, 0);
        let fe = FeatureExtractor::new(cfg).unwrap();
        assert_eq!(fe.extract(&AudioBuffer::silence(0, 44100)).unwrap().n_frames, 0);
    }

    #[test]
    fn zero_input_gives_zero_magnitudes() {
        let cfg = FeatureConfig::default();
        let spec = stft_mag(&AudioBuffer::silence(5000, 44100), &cfg).unwrap();
        assert!(spec.values.iter().all(|&v| v == 0.0));
    }

    /// Direct O(N^2) DFT of the same windowed frame.
    fn naive_dft_mag(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &x) in frame.iter().enumerate() {
                    let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    re += x * ph.cos();
                    im += x * ph.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn sine_1khz_peaks_in_bin_46() {
        let cfg = FeatureConfig::default();
        let audio = sine(1000.0, 1.0);
        let spec = stft_mag(&audio, &cfg).unwrap();
        let expected = (1000.0f64 * 2048.0 / 44100.0).round() as usize;
        assert_eq!(expected, 46);
        for k in 0..spec.n_frames {
            let frame = spec.frame(k);
            let argmax = (0..frame.len()).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
            assert_eq!(argmax, 46, "frame {k}");
        }
        // Cross-check one interior frame against a direct DFT.
        let k = 50;
        let w = hann(2048);
        let origin = k * 441 - 1024;
        let frame: Vec<f64> = (0..2048).map(|i| audio.samples[origin + i] as f64 * w[i] as f64).collect();
        let oracle = naive_dft_mag(&frame);
        let argmax = (0..oracle.len()).max_by(|&a, &b| oracle[a].total_cmp(&oracle[b])).unwrap();
        assert_eq!(argmax, 46);
        for (a, b) in spec.frame(k).iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-2 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn features_are_100_by_168_per_second() {
        let fe = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let feats = fe.extract(&sine(440.0, 1.0)).unwrap();
        assert_eq!((feats.n_frames, feats.width), (100, 168));
        assert!((0..feats.n_frames).all(|k| feats.row(k)[84..].iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn hand_built_difference_column() {
        let rows = vec![vec![1f32.ln()], vec![2f32.ln()], vec![3f32.ln()]];
        let fm = stack_with_positive_diff(&rows, 100.0);
        let diff: Vec<f32> = (0..3).map(|k| fm.get(k, 1)).collect();
        assert_eq!(diff, vec![0.0, 2f32.ln() - 1f32.ln(), 3f32.ln() - 2f32.ln()]);
        let falling = vec![vec![3.0f32], vec![1.0]];
        assert_eq!(stack_with_positive_diff(&falling, 100.0).get(1, 1), 0.0);
    }

    #[test]
    fn constant_signal_has_zero_difference_after_edges() {
        // DC input: frames away from the zero-padded ends see identical windows.
        let fe = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let feats = fe.extract(&AudioBuffer::new(vec![0.3; 44100], 44100).unwrap()).unwrap();
        for k in 4..feats.n_frames - 4 {
            assert!(feats.row(k)[84..].iter().all(|&v| v.abs() < 1e-4), "frame {k}");
        }
        assert!(feats.row(0)[84..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_amplitude_keeps_argmax_and_shifts_log_by_ln2() {
        let cfg = FeatureConfig {
            log_floor: 1e-12,
            ..FeatureConfig::default()
        };
        let fe = FeatureExtractor::new(cfg).unwrap();
        let a = sine(1500.0, 0.5);
        let b = AudioBuffer::new(a.samples.iter().map(|x| 2.0 * x).collect(), 44100).unwrap();
        let fa = fe.extract(&a).unwrap();
        let fb = fe.extract(&b).unwrap();
        for k in 2..fa.n_frames - 2 {
            let ra = &fa.row(k)[..84];
            let rb = &fb.row(k)[..84];
            let am = (0..84).max_by(|&i, &j| ra[i].total_cmp(&ra[j])).unwrap();
            let bm = (0..84).max_by(|&i, &j| rb[i].total_cmp(&rb[j])).unwrap();
            assert_eq!(am, bm);
            assert!((rb[am] - ra[am] - std::f32::consts::LN_2).abs() < 1e-3);
        }
        // With the default floor the shift is monotone but not constant.
        let fe = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let (fa, fb) = (fe.extract(&a).unwrap(), fe.extract(&b).unwrap());
        assert!(fa.values.iter().zip(&fb.values).take(84 * 10).all(|(x, y)| y >= x));
    }

    #[test]
    fn non_canonical_rate_is_rejected() {
        let fe = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let err = fe.extract(&AudioBuffer::silence(100, 48000)).unwrap_err();
        assert!(err.to_string().contains("48000"));
    }

    #[test]
    fn extraction_is_deterministic() {
        let fe = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let a = sine(300.0, 0.3);
        assert_eq!(fe.extract(&a).unwrap(), fe.extract(&a).unwrap());
    }

    #[test]
    fn frame_time_round_trip() {
        let cfg = FeatureConfig::default();
        for k in 0..10_000 {
            assert_eq!(cfg.time_to_frame(cfg.frame_time(k)), k);
        }
    }

    #[test]
    fn blob_round_trip_and_corruption() {
        let fm = stack_with_positive_diff(&[vec![1.0, 2.0], vec![0.5, 3.0]], 100.0);
        let bytes = fm.to_bytes();
        assert_eq!(&bytes[..4], b"DSFM");
        assert_eq!(FeatureMatrix::from_bytes(&bytes).unwrap(), fm);
        assert!(FeatureMatrix::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(FeatureMatrix::from_bytes(b"XXXX").is_err());
    }

    #[test]
    fn filterbank_dimension_mismatch_is_error() {
        let cfg = FeatureConfig::default();
        let fb = build_log_filterbank(44100, 4096, 20.0, 20000.0, 12).unwrap();
        let err = featurize(&AudioBuffer::silence(4410, 44100), &cfg, &fb).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = FeatureConfig::default();
        let b = FeatureConfig {
            hop_size: 440,
            fps: 100.227,
            ..FeatureConfig::default()
        };
        assert_eq!(a.hash_hex(), FeatureConfig::default().hash_hex());
        assert_ne!(a.hash_hex(), b.hash_hex());
        assert_eq!(a.hash_hex().len(), 16);
    }
}

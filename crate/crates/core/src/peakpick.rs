//! Peak picking on activation functions.
//!
//! Frame `n` of an activation `f` is an onset when
//!
//! 1. `f(n) = max(f(n-m..=n))`,
//! 2. `f(n) >= mean(f(n-a..=n)) + δ`,
//! 3. `n - n_lp > w`, with `n_lp` the previously accepted peak.
//!
//! Windows are truncated at the start of the signal and ties in (1) are
//! accepted. The scan is causal, so an earlier peak always wins (3).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::{Onset, OnsetAnnotation};
use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    pub m: usize,
    pub a: usize,
    pub w: usize,
    pub delta: f64,
    pub fps: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            m: 2,
            a: 2,
            w: 2,
            delta: 0.1,
            fps: 100.0,
        }
    }
}

impl PeakParams {
    pub fn with_delta(delta: f64) -> Self {
        Self { delta, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) || !(self.fps > 0.0) {
            return Err(Error::Config(format!(
                "peak picking needs delta >= 0 and fps > 0 (got {}, {})",
                self.delta, self.fps
            )));
        }
        Ok(())
    }
}

/// Frame indices of the accepted peaks, ascending.
pub fn pick_peaks(f: &[f64], p: &PeakParams) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut last: Option<usize> = None;
    for (n, &v) in f.iter().enumerate() {
        if last.is_some_and(|l| n - l <= p.w) {
            continue;
        }
        let max_win = &f[n.saturating_sub(p.m)..=n];
        if max_win.iter().any(|&x| x > v) {
            continue;
        }
        let mean_win = &f[n.saturating_sub(p.a)..=n];
        let mean = mean_win.iter().sum::<f64>() / mean_win.len() as f64;
        if v >= mean + p.delta {
            peaks.push(n);
            last = Some(n);
        }
    }
    peaks
}

/// Per-class activation functions, `n_frames × n_classes`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMatrix {
    pub n_frames: usize,
    pub n_classes: usize,
    pub fps: f64,
    pub values: Vec<f32>,
}

impl ActivationMatrix {
    pub fn new(n_frames: usize, n_classes: usize, fps: f64, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_frames * n_classes {
            return Err(Error::Shape(format!(
                "{} activations for {n_frames}×{n_classes}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("activation {v} outside [0, 1]")));
        }
        Ok(Self {
            n_frames,
            n_classes,
            fps,
            values,
        })
    }

    pub fn zeros(n_frames: usize, n_classes: usize, fps: f64) -> Self {
        Self {
            n_frames,
            n_classes,
            fps,
            values: vec![0.0; n_frames * n_classes],
        }
    }

    pub fn get(&self, frame: usize, class: usize) -> f32 {
        self.values[frame * self.n_classes + class]
    }

    pub fn column(&self, class: usize) -> Vec<f64> {
        (0..self.n_frames).map(|n| self.get(n, class) as f64).collect()
    }

    /// `time,<label>...` CSV with six decimals.
    pub fn to_csv(&self, labels: &[Label]) -> String {
        let mut s = String::from("time");
        for l in labels {
            s.push(',');
            s.push_str(l.as_str());
        }
        s.push('\n');
        for n in 0..self.n_frames {
            s.push_str(&format!("{:.2}", n as f64 / self.fps));
            for c in 0..self.n_classes {
                s.push_str(&format!(",{:.6}", self.get(n, c)));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path, labels: &[Label]) -> Result<()> {
        std::fs::write(path, self.to_csv(labels)).map_err(Error::io(path))
    }
}

/// Picks peaks independently per class column; frame `k` becomes time
/// `k / fps` with the column's label.
pub fn onsets_from_activations(act: &ActivationMatrix, labels: &[Label], p: &PeakParams) -> Result<OnsetAnnotation> {
    if labels.len() != act.n_classes {
        return Err(Error::Shape(format!(
            "{} labels for {} activation columns",
            labels.len(),
            act.n_classes
        )));
    }
    let mut events = Vec::new();
    for (c, &label) in labels.iter().enumerate() {
        for n in pick_peaks(&act.column(c), p) {
            events.push(Onset {
                time: n as f64 / p.fps,
                label,
            });
        }
    }
    Ok(OnsetAnnotation::new(events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct restatement of the three conditions.
    fn brute(f: &[f64], p: &PeakParams) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for n in 0..f.len() {
            let lo_m = if n >= p.m { n - p.m } else { 0 };
            let lo_a = if n >= p.a { n - p.a } else { 0 };
            let mut is_max = true;
            for k in lo_m..=n {
                if f[k] > f[n] {
                    is_max = false;
                }
            }
            let mut sum = 0.0;
            for k in lo_a..=n {
                sum += f[k];
            }
            let above = f[n] >= sum / (n - lo_a + 1) as f64 + p.delta;
            let spaced = match out.last() {
                Some(&l) => n - l > p.w,
                None => true,
            };
            if is_max && above && spaced {
                out.push(n);
            }
        }
        out
    }

    #[test]
    fn zeros_give_no_peaks() {
        assert!(pick_peaks(&[0.0; 50], &PeakParams::with_delta(0.1)).is_empty());
    }

    #[test]
    fn hand_example() {
        assert_eq!(pick_peaks(&[0.0, 0.0, 1.0, 0.0, 0.0], &PeakParams::with_delta(0.15)), vec![2]);
    }

    #[test]
    fn start_window_is_truncated() {
        let p = PeakParams::with_delta(0.1);
        // With zero padding frame 1 would pass (mean 1.7 / 3); truncated it
        // does not (mean 0.85).
        assert!(pick_peaks(&[0.8, 0.9, 0.0], &p).is_empty());
        // A truncated window at frame 0 is the frame itself, so δ > 0 rejects it.
        assert!(pick_peaks(&[1.0, 0.0, 0.0], &p).is_empty());
    }

    #[test]
    fn ties_count_as_max_and_spacing_is_causal() {
        let p = PeakParams::with_delta(0.1);
        assert_eq!(pick_peaks(&[0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.5], &p), vec![1, 6]);
        let p0 = PeakParams { w: 0, ..p };
        assert_eq!(pick_peaks(&[0.0, 0.6, 0.6], &p0), vec![1, 2]);
    }

    #[test]
    fn randomized_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for i in 0..10_000 {
            let len = rng.gen_range(1..=64);
            let f: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
            let p = PeakParams::with_delta(if i % 2 == 0 { 0.1 } else { 0.2 });
            let fast = pick_peaks(&f, &p);
            assert_eq!(fast, brute(&f, &p));
            assert!(fast.windows(2).all(|w| w[1] - w[0] > p.w));
            assert!(pick_peaks(&f, &PeakParams::with_delta(0.2)).len() <= pick_peaks(&f, &PeakParams::with_delta(0.1)).len());
        }
    }

    #[test]
    fn subset_in_delta_without_spacing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let f: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
            let lo = pick_peaks(&f, &PeakParams { w: 0, ..PeakParams::with_delta(0.1) });
            let hi = pick_peaks(&f, &PeakParams { w: 0, ..PeakParams::with_delta(0.2) });
            assert!(hi.iter().all(|n| lo.contains(n)));
        }
    }

    #[test]
    fn scaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let f: Vec<f64> = (0..48).map(|_| rng.gen::<f64>()).collect();
            for c in [0.25, 0.5, 2.0, 4.0] {
                let g: Vec<f64> = f.iter().map(|v| v * c).collect();
                assert_eq!(
                    pick_peaks(&f, &PeakParams::with_delta(0.15)),
                    pick_peaks(&g, &PeakParams::with_delta(0.15 * c))
                );
            }
        }
    }

    fn matrix(cols: &[Vec<f32>]) -> ActivationMatrix {
        let n = cols[0].len();
        let values = (0..n).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
        ActivationMatrix::new(n, cols.len(), 100.0, values).unwrap()
    }

    #[test]
    fn frame_to_time_and_labels() {
        let mut col = vec![0.0f32; 200];
        col[123] = 0.9;
        let a = matrix(&[col.clone(), col]);
        let ann = onsets_from_activations(&a, &[Label::BD, Label::SD], &PeakParams::default()).unwrap();
        assert_eq!(ann.events.len(), 2);
        assert!(ann.events.iter().all(|e| (e.time - 1.23).abs() < 1e-12));
        assert_eq!(ann.times_of(Label::BD), ann.times_of(Label::SD));
    }

    #[test]
    fn composition_equals_union_of_columns() {
        let cols = vec![
            vec![0.0f32, 0.8, 0.0, 0.0, 0.0, 0.7, 0.0, 0.0],
            vec![0.5f32, 0.0, 0.0, 0.9, 0.1, 0.0, 0.0, 0.0],
            vec![0.0f32; 8],
        ];
        let labels = [Label::BD, Label::SD, Label::HH];
        let p = PeakParams::default();
        let ann = onsets_from_activations(&matrix(&cols), &labels, &p).unwrap();
        let mut expected = Vec::new();
        for (c, l) in cols.iter().zip(labels) {
            let f: Vec<f64> = c.iter().map(|&v| v as f64).collect();
            for n in brute(&f, &p) {
                expected.push(Onset { time: n as f64 / 100.0, label: l });
            }
        }
        assert_eq!(ann, OnsetAnnotation::new(expected));
    }

    #[test]
    fn rejects_label_mismatch_and_out_of_range() {
        let a = ActivationMatrix::zeros(4, 2, 100.0);
        assert!(onsets_from_activations(&a, &[Label::BD], &PeakParams::default()).is_err());
        assert!(ActivationMatrix::new(1, 1, 100.0, vec![1.5]).is_err());
    }
}

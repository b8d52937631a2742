//! Frame targets and training instances.

use crate::annotation::OnsetAnnotation;
use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::nn::{Real, Tensor};

use super::spec::ModelKind;

/// `[len + 2 * half, width, 1]` input covering frames `start - half ..
/// start + len + half`; frames outside the track are zero.
pub fn segment_input<T: Real>(features: &FeatureMatrix, start: usize, len: usize, half: usize) -> Tensor<T> {
    let w = features.width;
    let total = len + 2 * half;
    let mut data = vec![T::zero(); total * w];
    for i in 0..total {
        let Some(k) = (start + i).checked_sub(half).filter(|&k| k < features.n_frames) else {
            continue;
        };
        for (d, &v) in data[i * w..(i + 1) * w].iter_mut().zip(features.row(k)) {
            *d = T::lit(v as f64);
        }
    }
    Tensor::new(vec![total, w, 1], data).expect("consistent shape")
}

/// `[n_frames, classes]` binary targets: onset at `t` sets frame
/// `round(t * fps)` (clamped to the last frame). With `widen`, the two
/// neighbouring frames get 0.5 unless already set.
pub fn targets_from_annotations(
    ann: &OnsetAnnotation,
    n_frames: usize,
    fps: f64,
    classes: &[Label],
    widen: bool,
) -> Result<Tensor<f32>> {
    let c = classes.len();
    let mut t = Tensor::zeros(&[n_frames, c]);
    if n_frames == 0 {
        return Ok(t);
    }
    let mut hits = Vec::with_capacity(ann.events.len());
    for e in &ann.events {
        let j = classes
            .iter()
            .position(|&l| l == e.label)
            .ok_or_else(|| Error::UnknownLabel(e.label.to_string()))?;
        if !(e.time >= 0.0) {
            return Err(Error::Invalid(format!("negative onset time {}", e.time)));
        }
        let k = ((e.time * fps).round() as usize).min(n_frames - 1);
        hits.push((k, j));
    }
    let d = t.data_mut();
    for &(k, j) in &hits {
        d[k * c + j] = 1.0;
    }
    if widen {
        for &(k, j) in &hits {
            for n in [k.wrapping_sub(1), k + 1] {
                if n < n_frames && d[n * c + j] == 0.0 {
                    d[n * c + j] = 0.5;
                }
            }
        }
    }
    Ok(t)
}

/// Features and targets of one track.
#[derive(Clone, Debug)]
pub struct TrackData {
    pub name: String,
    pub features: FeatureMatrix,
    pub targets: Tensor<f32>,
}

impl TrackData {
    pub fn n_frames(&self) -> usize {
        self.features.n_frames
    }
}

/// One training unit: frames `start .. start + len` of track `track`,
/// padded to `padded_len` rows with masked-out frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Instance {
    pub track: usize,
    pub start: usize,
    pub len: usize,
    pub padded_len: usize,
}

/// CNN: one instance per frame. CRNN: consecutive non-overlapping
/// sequences of `seq_len` frames; the final remainder is kept and padded.
pub fn make_instances(tracks: &[TrackData], kind: ModelKind, seq_len: usize) -> Vec<Instance> {
    let mut out = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        let n = t.n_frames();
        match kind {
            ModelKind::Cnn => out.extend((0..n).map(|k| Instance { track: ti, start: k, len: 1, padded_len: 1 })),
            ModelKind::Crnn => {
                let step = seq_len.max(1);
                out.extend((0..n).step_by(step).map(|s| Instance {
                    track: ti,
                    start: s,
                    len: step.min(n - s),
                    padded_len: step,
                }))
            }
        }
    }
    out
}

/// Input segment, targets `[padded_len, C]` and the loss mask of an instance.
pub fn instance_tensors<T: Real>(
    tracks: &[TrackData],
    inst: &Instance,
    half_context: usize,
) -> (Tensor<T>, Tensor<T>, Vec<bool>) {
    let t = &tracks[inst.track];
    let x = segment_input(&t.features, inst.start, inst.padded_len, half_context);
    let c = t.targets.shape()[1];
    let mut y = vec![T::zero(); inst.padded_len * c];
    let src = &t.targets.data()[inst.start * c..(inst.start + inst.len) * c];
    for (d, &v) in y.iter_mut().zip(src) {
        *d = T::lit(v as f64);
    }
    let mask = (0..inst.padded_len).map(|i| i < inst.len).collect();
    (x, Tensor::new(vec![inst.padded_len, c], y).expect("consistent shape"), mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Onset;

    fn fm(n: usize, w: usize) -> FeatureMatrix {
        FeatureMatrix {
            n_frames: n,
            width: w,
            fps: 100.0,
            values: (0..n * w).map(|i| (i + 1) as f32).collect(),
        }
    }

    fn track(n: usize) -> TrackData {
        TrackData {
            name: "t".into(),
            features: fm(n, 2),
            targets: Tensor::zeros(&[n, 3]),
        }
    }

    #[test]
    fn onset_lands_on_rounded_frame() {
        let classes = [Label::BD, Label::SD, Label::HH];
        let ann = OnsetAnnotation::new(vec![Onset { time: 1.234, label: Label::SD }]);
        let t = targets_from_annotations(&ann, 200, 100.0, &classes, false).unwrap();
        assert_eq!(t.data()[123 * 3 + 1], 1.0);
        assert_eq!(t.data().iter().sum::<f32>(), 1.0);
    }

    #[test]
    fn empty_duplicate_clamped_and_unknown() {
        let classes = [Label::BD, Label::SD];
        let empty = targets_from_annotations(&OnsetAnnotation::default(), 10, 100.0, &classes, false).unwrap();
        assert!(empty.data().iter().all(|&v| v == 0.0));
        let one = OnsetAnnotation::new(vec![Onset { time: 0.05, label: Label::BD }]);
        let two = OnsetAnnotation::new(vec![Onset { time: 0.05, label: Label::BD }; 2]);
        assert_eq!(
            targets_from_annotations(&one, 10, 100.0, &classes, false).unwrap(),
            targets_from_annotations(&two, 10, 100.0, &classes, false).unwrap()
        );
        let late = OnsetAnnotation::new(vec![Onset { time: 5.0, label: Label::SD }]);
        assert_eq!(targets_from_annotations(&late, 10, 100.0, &classes, false).unwrap().data()[9 * 2 + 1], 1.0);
        let other = OnsetAnnotation::new(vec![Onset { time: 0.0, label: Label::CY }]);
        assert!(matches!(
            targets_from_annotations(&other, 10, 100.0, &classes, false),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn widening_marks_neighbours_at_one_half() {
        let classes = [Label::BD];
        let ann = OnsetAnnotation::new(vec![Onset { time: 0.03, label: Label::BD }, Onset { time: 0.04, label: Label::BD }]);
        let t = targets_from_annotations(&ann, 6, 100.0, &classes, true).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.5, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn cnn_one_instance_per_frame() {
        let inst = make_instances(&[track(1000)], ModelKind::Cnn, 400);
        assert_eq!(inst.len(), 1000);
    }

    #[test]
    fn crnn_sequence_layout() {
        let inst = make_instances(&[track(1000)], ModelKind::Crnn, 400);
        let lens: Vec<usize> = inst.iter().map(|i| i.len).collect();
        assert_eq!(lens, vec![400, 400, 200]);
        assert!(inst.iter().all(|i| i.padded_len == 400));
        let (x, y, mask) = instance_tensors::<f64>(&[track(1000)], &inst[2], 6);
        assert_eq!(x.shape(), &[412, 2, 1]);
        assert_eq!(y.shape(), &[400, 3]);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 200);
    }

    #[test]
    fn first_frame_context_is_zero_padded() {
        let f = fm(30, 2);
        let x = segment_input::<f64>(&f, 0, 1, 12);
        assert_eq!(x.shape(), &[25, 2, 1]);
        assert!(x.data()[..24].iter().all(|&v| v == 0.0));
        // The centre row is frame 0.
        assert_eq!(&x.data()[24..26], &[1.0, 2.0]);
    }
}

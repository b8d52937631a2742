//! Mini-batch training with learning-rate refinement and threshold selection.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{instance_tensors, make_instances, Instance, TrackData};
use super::network::Network;
use super::spec::{ModelKind, NetworkSpec};
use crate::annotation::OnsetAnnotation;
use crate::error::{Error, Result};
use crate::eval::{match_onsets, Counts};
use crate::label::Label;
use crate::nn::loss::weighted_bce_logits;
use crate::nn::{AdamConfig, AdamState, LossConfig, Tensor};
use crate::peakpick::{onsets_from_activations, ActivationMatrix, PeakParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub max_epochs: usize,
    pub lr_floor: f64,
    pub val_fraction: f64,
    pub rng_seed: u64,
    /// Positive-class loss weights; all ones when absent.
    pub class_weights: Option<Vec<f64>>,
    pub widen_targets: bool,
}

impl TrainConfig {
    /// Defaults for a model kind (batch 100 for the CNN, 8 sequences of
    /// 400 frames for the CRNN).
    pub fn for_kind(kind: ModelKind) -> Self {
        Self {
            lr: 0.001,
            lr_decay: 0.2,
            patience: 10,
            batch_size: match kind {
                ModelKind::Cnn => 100,
                ModelKind::Crnn => 8,
            },
            seq_len: 400,
            max_epochs: 150,
            lr_floor: 1e-6,
            val_fraction: 0.15,
            rng_seed: 0,
            class_weights: None,
            widen_targets: false,
        }
    }

    /// Settings for the reduced-width networks on small synthetic corpora:
    /// shorter sequences give more updates per epoch.
    pub fn desk(kind: ModelKind) -> Self {
        Self {
            lr: 0.005,
            patience: 6,
            seq_len: 100,
            max_epochs: 25,
            ..Self::for_kind(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad(format!("lr_decay {} not in (0, 1)", self.lr_decay));
        }
        if self.patience == 0 || self.batch_size == 0 || self.seq_len == 0 {
            return bad("patience, batch_size and seq_len must be positive".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} not in (0, 1)", self.val_fraction));
        }
        Ok(())
    }

    pub fn loss_config(&self, n_classes: usize) -> Result<LossConfig> {
        match &self.class_weights {
            Some(w) if w.len() != n_classes => Err(Error::Config(format!(
                "{} class weights for {n_classes} classes",
                w.len()
            ))),
            Some(w) => LossConfig::new(w.clone()),
            None => Ok(LossConfig::unweighted(n_classes)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpochAction {
    Improved,
    Continue,
    /// Learning rate reduced; parameters go back to the best epoch.
    Refine { lr: f64 },
    Stop,
}

/// Patience-based learning-rate refinement on a validation score (lower
/// is better).
#[derive(Clone, Debug)]
pub struct LrSchedule {
    pub lr: f64,
    decay: f64,
    patience: usize,
    floor: f64,
    best: f64,
    since_best: usize,
}

impl LrSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            decay: cfg.lr_decay,
            patience: cfg.patience,
            floor: cfg.lr_floor,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, score: f64) -> EpochAction {
        if score < self.best {
            self.best = score;
            self.since_best = 0;
            return EpochAction::Improved;
        }
        self.since_best += 1;
        if self.since_best < self.patience {
            return EpochAction::Continue;
        }
        let lr = self.lr * self.decay;
        if lr < self.floor {
            return EpochAction::Stop;
        }
        self.lr = lr;
        self.since_best = 0;
        EpochAction::Refine { lr }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub is_best: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn lr_trace(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        for e in &self.epochs {
            if v.last() != Some(&e.lr) {
                v.push(e.lr);
            }
        }
        v
    }

    /// The epoch whose parameters were kept.
    pub fn best_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.iter().rev().find(|e| e.is_best)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr,is_best\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr, u8::from(e.is_best));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(Error::io(path))
    }
}

/// Owns the network, optimiser state and best-so-far snapshot.
pub struct Trainer {
    pub net: Network<f32>,
    cfg: TrainConfig,
    loss: LossConfig,
    adam: AdamState,
    schedule: LrSchedule,
    best: Vec<Tensor<f32>>,
    history: TrainHistory,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(spec: NetworkSpec, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = Network::new(spec, cfg.rng_seed)?;
        let loss = cfg.loss_config(net.spec().n_classes)?;
        Ok(Self {
            best: net.snapshot(),
            net,
            loss,
            adam: AdamState::new(AdamConfig::with_lr(cfg.lr)),
            schedule: LrSchedule::new(&cfg),
            history: TrainHistory::default(),
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0xA5A5_5A5A_0F0F_F0F0),
            cfg,
        })
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn best_params(&self) -> &[Tensor<f32>] {
        &self.best
    }

    /// One shuffled pass over `instances`; returns the mean training loss.
    pub fn train_epoch(&mut self, tracks: &[TrackData], instances: &[Instance]) -> Result<f64> {
        let mut order: Vec<&Instance> = instances.iter().collect();
        order.shuffle(&mut self.rng);
        let half = self.net.spec().half_context();
        let c = self.net.spec().n_classes;
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(self.cfg.batch_size) {
            let n_batch: usize = batch.iter().map(|i| i.len * c).sum();
            if n_batch == 0 {
                continue;
            }
            self.net.zero_grad();
            for inst in batch {
                let (x, y, mask) = instance_tensors::<f32>(tracks, inst, half);
                let p = self.net.forward(x, true)?;
                let (l, mut g, n) = weighted_bce_logits(&p, &y, Some(&mask), &self.loss)?;
                if !l.is_finite() {
                    return Err(Error::Divergence(format!("non-finite loss on track {}", tracks[inst.track].name)));
                }
                let scale = n as f32 / n_batch as f32;
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
                self.net.backward(&g)?;
                total += l * n as f64;
                count += n;
            }
            self.adam.config.lr = self.schedule.lr;
            self.adam.step(&mut self.net.params_mut())?;
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    /// Records an epoch and applies the schedule: snapshot on improvement,
    /// reload of the best parameters (and fresh optimiser moments) on
    /// refinement.
    pub fn end_epoch(&mut self, train_loss: f64, val_loss: f64) -> Result<EpochAction> {
        if !train_loss.is_finite() || val_loss.is_nan() {
            return Err(Error::Divergence(format!(
                "epoch {}: train loss {train_loss}, validation loss {val_loss}",
                self.history.epochs.len()
            )));
        }
        let lr = self.schedule.lr;
        let action = self.schedule.observe(val_loss);
        let improved = action == EpochAction::Improved;
        if improved {
            self.best = self.net.snapshot();
        }
        self.history.epochs.push(EpochRecord {
            epoch: self.history.epochs.len(),
            train_loss,
            val_loss,
            lr,
            is_best: improved,
        });
        if let EpochAction::Refine { lr } = action {
            log::info!("refining: lr {lr:e}, reloading epoch {:?}", self.history.best_epoch().map(|e| e.epoch));
            self.net.restore(&self.best)?;
            self.adam = AdamState::new(AdamConfig::with_lr(lr));
        }
        Ok(action)
    }

    /// Restores the best parameters and returns them with the history.
    pub fn finish(mut self) -> Result<(Network<f32>, TrainHistory)> {
        self.net.restore(&self.best)?;
        Ok((self.net, self.history))
    }
}

/// Mean weighted BCE of the model over whole tracks.
pub fn validation_loss(net: &mut Network<f32>, tracks: &[TrackData], loss: &LossConfig) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for t in tracks {
        let act = net.predict(&t.features)?;
        let p = Tensor::new(vec![act.n_frames, act.n_classes], act.values)?;
        let (l, _, n) = weighted_bce_logits(&p, &t.targets, None, loss)?;
        total += l * n as f64;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Training loop with an arbitrary validation score (lower is better).
pub fn train_with<F>(spec: NetworkSpec, train: &[TrackData], cfg: &TrainConfig, mut validate: F) -> Result<(Network<f32>, TrainHistory)>
where
    F: FnMut(&mut Network<f32>) -> Result<f64>,
{
    if train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let instances = make_instances(train, spec.kind, cfg.seq_len);
    let mut trainer = Trainer::new(spec, cfg.clone())?;
    for epoch in 0..cfg.max_epochs {
        let train_loss = trainer.train_epoch(train, &instances)?;
        let val = validate(&mut trainer.net)?;
        let action = trainer.end_epoch(train_loss, val)?;
        log::info!("epoch {epoch}: train {train_loss:.5} val {val:.5} lr {:e} {action:?}", trainer.lr());
        if action == EpochAction::Stop {
            break;
        }
    }
    trainer.finish()
}

/// Trains on `train`, selecting parameters by validation loss on `val`.
pub fn train(spec: NetworkSpec, train: &[TrackData], val: &[TrackData], cfg: &TrainConfig) -> Result<(Network<f32>, TrainHistory)> {
    if val.is_empty() {
        return Err(Error::Invalid("empty validation set".into()));
    }
    let loss = cfg.loss_config(spec.n_classes)?;
    train_with(spec, train, cfg, |net| validation_loss(net, val, &loss))
}

/// `0.05, 0.10, .., 0.50`.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 20.0).collect()
}

/// Pooled counts over all tracks and classes at one peak-picking setting.
pub fn sum_counts(
    tracks: &[(ActivationMatrix, OnsetAnnotation)],
    classes: &[Label],
    params: &PeakParams,
    tolerance: f64,
) -> Result<Counts> {
    let mut total = Counts::default();
    for (act, refs) in tracks {
        let dets = onsets_from_activations(act, classes, params)?;
        for &c in classes {
            total += match_onsets(&dets.times_of(c), &refs.times_of(c), tolerance).counts;
        }
    }
    Ok(total)
}

/// The grid value maximising the pooled F-measure (ties: lowest value),
/// together with the score of every grid point.
pub fn select_threshold(
    tracks: &[(ActivationMatrix, OnsetAnnotation)],
    classes: &[Label],
    base: &PeakParams,
    grid: &[f64],
    tolerance: f64,
) -> Result<(f64, Vec<f64>)> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("threshold grid must be nonempty and ascending".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &delta in grid {
        let f = sum_counts(tracks, classes, &PeakParams { delta, ..base.clone() }, tolerance)?.f_measure();
        if f > best.1 {
            best = (delta, f);
        }
        scores.push(f);
    }
    Ok((best.0, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Onset;
    use crate::dsp::FeatureMatrix;
    use crate::eval::DEFAULT_TOLERANCE;
    use crate::model::data::targets_from_annotations;
    use crate::model::spec::{desk_cnn, desk_crnn};

    fn cfg(patience: usize) -> TrainConfig {
        TrainConfig {
            patience,
            max_epochs: 100,
            ..TrainConfig::for_kind(ModelKind::Crnn)
        }
    }

    #[test]
    fn never_improving_scores_refine_by_one_fifth() {
        let mut s = LrSchedule::new(&cfg(3));
        assert_eq!(s.observe(1.0), EpochAction::Improved);
        let mut trace = vec![s.lr];
        loop {
            match s.observe(1.0) {
                EpochAction::Refine { lr } => trace.push(lr),
                EpochAction::Stop => break,
                _ => {}
            }
        }
        assert_eq!(&trace[..3], &[0.001, 0.001 * 0.2, 0.001 * 0.2 * 0.2]);
        assert!((trace[1] - 2e-4).abs() < 1e-18 && (trace[2] - 4e-5).abs() < 1e-18);
        assert!(trace.windows(2).all(|w| w[1] == w[0] * 0.2));
        assert!(*trace.last().unwrap() >= 1e-6 && trace.last().unwrap() * 0.2 < 1e-6);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = LrSchedule::new(&cfg(2));
        assert_eq!(s.observe(1.0), EpochAction::Improved);
        assert_eq!(s.observe(1.0), EpochAction::Continue);
        assert_eq!(s.observe(0.5), EpochAction::Improved);
        assert_eq!(s.observe(0.6), EpochAction::Continue);
        assert_eq!(s.observe(0.6), EpochAction::Refine { lr: 0.001 * 0.2 });
    }

    fn toy_tracks(n: usize, frames: usize, classes: usize, seed: u64) -> Vec<TrackData> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut values = vec![0.0f32; frames * 168];
                let mut y = vec![0.0f32; frames * classes];
                for k in (3..frames).step_by(7) {
                    let c = rng.gen_range(0..classes);
                    y[k * classes + c] = 1.0;
                    for j in 0..168 {
                        if j % classes == c {
                            values[k * 168 + j] = 1.0;
                        }
                    }
                }
                TrackData {
                    name: format!("t{i}"),
                    features: FeatureMatrix { n_frames: frames, width: 168, fps: 100.0, values },
                    targets: Tensor::new(vec![frames, classes], y).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn refinement_reloads_best_parameters() {
        let tracks = toy_tracks(1, 40, 3, 0);
        let inst = make_instances(&tracks, ModelKind::Crnn, 20);
        let mut t = Trainer::new(desk_crnn(3), TrainConfig { patience: 2, ..cfg(2) }).unwrap();
        let mut lrs = Vec::new();
        for epoch in 0..9 {
            let l = t.train_epoch(&tracks, &inst).unwrap();
            let action = t.end_epoch(l, if epoch == 0 { 1.0 } else { 2.0 }).unwrap();
            if let EpochAction::Refine { lr } = action {
                lrs.push(lr);
                assert_eq!(t.net.snapshot(), t.best_params());
            }
            if epoch == 0 {
                assert_eq!(t.net.snapshot(), t.best_params());
            }
        }
        assert_eq!(lrs, vec![0.001 * 0.2, 0.001 * 0.2 * 0.2, 0.001 * 0.2 * 0.2 * 0.2, 0.001 * 0.2 * 0.2 * 0.2 * 0.2]);
        let (net, hist) = t.finish().unwrap();
        assert_eq!(hist.best_epoch().unwrap().epoch, 0);
        assert_eq!(hist.epochs.len(), 9);
        let _ = net;
    }

    #[test]
    fn injected_scores_give_lr_trace() {
        let tracks = toy_tracks(1, 30, 3, 1);
        let c = TrainConfig { patience: 1, max_epochs: 50, ..cfg(1) };
        let (_, hist) = train_with(desk_crnn(3), &tracks, &c, |_| Ok(1.0)).unwrap();
        let trace = hist.lr_trace();
        assert_eq!(&trace[..3], &[0.001, 0.001 * 0.2, 0.001 * 0.2 * 0.2]);
        assert!(trace.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn best_checkpoint_has_minimum_validation_loss_and_runs_repeat() {
        let tracks = toy_tracks(3, 60, 3, 2);
        let c = TrainConfig { max_epochs: 6, seq_len: 30, batch_size: 2, patience: 2, ..cfg(2) };
        let (mut net, hist) = train(desk_crnn(3), &tracks[..2], &tracks[2..], &c).unwrap();
        let min = hist.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(hist.best_epoch().unwrap().val_loss, min);
        let again = validation_loss(&mut net, &tracks[2..], &LossConfig::unweighted(3)).unwrap();
        assert!((again - min).abs() < 1e-9, "{again} vs {min}");
        let (_, hist2) = train(desk_crnn(3), &tracks[..2], &tracks[2..], &c).unwrap();
        assert_eq!(hist.to_csv(), hist2.to_csv());
    }

    #[test]
    fn masked_padding_contributes_nothing() {
        let tracks = toy_tracks(1, 25, 3, 3);
        let mut net = Network::<f32>::new(desk_crnn(3), 0).unwrap();
        let inst = make_instances(&tracks, ModelKind::Crnn, 40)[0];
        assert_eq!(inst.len, 25);
        let (x, y, mask) = instance_tensors::<f32>(&tracks, &inst, 6);
        let p = net.forward(x, false).unwrap();
        let (l_masked, g, n) = weighted_bce_logits(&p, &y, Some(&mask), &LossConfig::unweighted(3)).unwrap();
        assert_eq!(n, 25 * 3);
        assert!(g.data()[25 * 3..].iter().all(|&v| v == 0.0));
        let p25 = Tensor::new(vec![25, 3], p.data()[..75].to_vec()).unwrap();
        let y25 = Tensor::new(vec![25, 3], y.data()[..75].to_vec()).unwrap();
        let (l_trunc, _, _) = weighted_bce_logits(&p25, &y25, None, &LossConfig::unweighted(3)).unwrap();
        assert_eq!(l_masked, l_trunc);
    }

    #[test]
    fn cnn_memorises_fifty_instances() {
        let mut tracks = toy_tracks(1, 50, 3, 4);
        // Every frame is an instance; make half of them positive.
        let t = &mut tracks[0];
        for k in 0..50 {
            let c = k % 3;
            if k % 2 == 0 {
                t.targets.data_mut()[k * 3 + c] = 1.0;
                for j in (0..168).filter(|j| j % 3 == c) {
                    t.features.values[k * 168 + j] = 1.0;
                }
            }
        }
        let mut spec = desk_cnn(3);
        spec.dropout = 0.0;
        let c = TrainConfig { batch_size: 10, lr: 0.003, patience: 1000, max_epochs: 200, ..TrainConfig::for_kind(ModelKind::Cnn) };
        let inst = make_instances(&tracks, ModelKind::Cnn, 1);
        let mut trainer = Trainer::new(spec, c).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            last = trainer.train_epoch(&tracks, &inst).unwrap();
            if last < 0.05 {
                break;
            }
        }
        assert!(last < 0.05, "{last}");
    }

    #[test]
    fn threshold_selection() {
        let classes = [Label::BD];
        let zeros = ActivationMatrix::zeros(100, 1, 100.0);
        let refs = OnsetAnnotation::new(vec![Onset { time: 0.5, label: Label::BD }]);
        let (d, scores) =
            select_threshold(&[(zeros, refs.clone())], &classes, &PeakParams::default(), &default_threshold_grid(), DEFAULT_TOLERANCE).unwrap();
        assert_eq!(d, 0.05);
        assert!(scores.iter().all(|&s| s == scores[0]));
        assert!(select_threshold(&[], &classes, &PeakParams::default(), &[0.2, 0.1], 0.02).is_err());
    }

    #[test]
    fn threshold_matches_exhaustive_argmax() {
        use rand::Rng;
        let classes = [Label::BD, Label::SD];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tracks = Vec::new();
        for _ in 0..3 {
            let n = 300;
            let mut vals = vec![0.0f32; n * 2];
            let mut ev = Vec::new();
            for k in (10..n - 10).step_by(23) {
                let c = rng.gen_range(0..2);
                vals[k * 2 + c] = rng.gen_range(0.2..0.9);
                if rng.gen_bool(0.8) {
                    ev.push(Onset { time: k as f64 / 100.0, label: classes[c] });
                }
            }
            for v in vals.iter_mut() {
                if *v == 0.0 {
                    *v = rng.gen_range(0.0..0.15);
                }
            }
            tracks.push((ActivationMatrix::new(n, 2, 100.0, vals).unwrap(), OnsetAnnotation::new(ev)));
        }
        let grid = default_threshold_grid();
        let (d, _) = select_threshold(&tracks, &classes, &PeakParams::default(), &grid, 0.02).unwrap();
        // Independent re-evaluation: count per track and class by hand.
        let mut best = (0.0, -1.0);
        for &delta in &grid {
            let p = PeakParams { delta, ..PeakParams::default() };
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (act, refs) in &tracks {
                for (ci, &c) in classes.iter().enumerate() {
                    let peaks = crate::peakpick::pick_peaks(&act.column(ci), &p);
                    let r = refs.times_of(c);
                    let hit = peaks.iter().filter(|&&k| r.iter().any(|&t| ((k as f64 / 100.0) - t).abs() <= 0.02)).count();
                    tp += hit;
                    fp += peaks.len() - hit;
                    fn_ += r.len() - hit;
                }
            }
            let f = crate::eval::f_measure(tp, fp, fn_);
            if f > best.1 {
                best = (delta, f);
            }
        }
        assert_eq!(d, best.0);
        let _ = targets_from_annotations;
    }
}

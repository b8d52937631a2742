//! Onset matching, F-measures, pseudo-confusion matrices and reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::OnsetAnnotation;
use crate::error::{Error, Result};
use crate::label::Label;

pub const DEFAULT_TOLERANCE: f64 = 0.020;

/// Slack added to the tolerance so that decimal onset times such as 1.02 vs
/// 1.00 are not rejected by binary rounding.
const TIME_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn f_measure(&self) -> f64 {
        f_measure(self.tp, self.fp, self.fn_)
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// `2tp / (2tp + fp + fn)`, and 1.0 when all counts are zero.
pub fn f_measure(tp: usize, fp: usize, fn_: usize) -> f64 {
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        1.0
    } else {
        2.0 * tp as f64 / den as f64
    }
}

/// Single-class matching outcome.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    pub counts: Counts,
    /// `(ref_time, det_time)` per match, in reference order.
    pub pairs: Vec<(f64, f64)>,
    /// Detection index matched to each reference, if any.
    pub ref_to_det: Vec<Option<usize>>,
    pub det_matched: Vec<bool>,
}

/// Greedy one-to-one matching: references are visited in order and each
/// takes the nearest still-unmatched detection within `±tolerance` (the
/// earlier one on a distance tie).
pub fn match_onsets(dets: &[f64], refs: &[f64], tolerance: f64) -> MatchResult {
    let mut det_matched = vec![false; dets.len()];
    let mut ref_to_det = vec![None; refs.len()];
    let mut pairs = Vec::new();
    let tol = tolerance + TIME_SLACK;
    let mut lo = 0;
    for (ri, &r) in refs.iter().enumerate() {
        while lo < dets.len() && dets[lo] < r - tol {
            lo += 1;
        }
        let mut best: Option<(usize, f64)> = None;
        for (di, &d) in dets.iter().enumerate().skip(lo) {
            if d > r + tol {
                break;
            }
            let dist = (d - r).abs();
            if !det_matched[di] && best.map_or(true, |(_, bd)| dist < bd) {
                best = Some((di, dist));
            }
        }
        if let Some((di, _)) = best {
            det_matched[di] = true;
            ref_to_det[ri] = Some(di);
            pairs.push((r, dets[di]));
        }
    }
    let tp = pairs.len();
    MatchResult {
        counts: Counts {
            tp,
            fp: dets.len() - tp,
            fn_: refs.len() - tp,
        },
        pairs,
        ref_to_det,
        det_matched,
    }
}

/// Three `C × C` pseudo-confusion count matrices, indexed `[anchor][other]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTriple {
    pub classes: Vec<Label>,
    /// False negative of class i with a false positive of class j nearby.
    pub classic: Vec<Vec<u64>>,
    /// False negative of class i with a true positive of class j nearby.
    pub masking: Vec<Vec<u64>>,
    /// False positive of class i with a true positive of class j nearby.
    pub excitement: Vec<Vec<u64>>,
}

impl ConfusionTriple {
    pub fn zeros(classes: &[Label]) -> Self {
        let z = vec![vec![0; classes.len()]; classes.len()];
        Self {
            classes: classes.to_vec(),
            classic: z.clone(),
            masking: z.clone(),
            excitement: z,
        }
    }

    pub fn add(&mut self, o: &ConfusionTriple) {
        for (a, b) in [
            (&mut self.classic, &o.classic),
            (&mut self.masking, &o.masking),
            (&mut self.excitement, &o.excitement),
        ] {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        [&self.classic, &self.masking, &self.excitement]
            .iter()
            .all(|m| m.iter().flatten().all(|&v| v == 0))
    }
}

/// Evaluation of one track over a fixed class list.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackEval {
    pub name: String,
    pub classes: Vec<Label>,
    pub matches: Vec<MatchResult>,
    pub confusions: ConfusionTriple,
}

impl TrackEval {
    pub fn counts(&self) -> Vec<Counts> {
        self.matches.iter().map(|m| m.counts).collect()
    }

    /// Mean of the per-class F-measures.
    pub fn mean_f(&self) -> f64 {
        if self.matches.is_empty() {
            return 1.0;
        }
        self.matches.iter().map(|m| m.counts.f_measure()).sum::<f64>() / self.matches.len() as f64
    }
}

struct Events {
    fns: Vec<Vec<f64>>,
    fps: Vec<Vec<f64>>,
    tps: Vec<Vec<f64>>,
}

fn split_events(dets: &[Vec<f64>], refs: &[Vec<f64>], matches: &[MatchResult]) -> Events {
    let mut e = Events {
        fns: Vec::new(),
        fps: Vec::new(),
        tps: Vec::new(),
    };
    for ((d, r), m) in dets.iter().zip(refs).zip(matches) {
        e.fns.push(r.iter().zip(&m.ref_to_det).filter(|(_, x)| x.is_none()).map(|(&t, _)| t).collect());
        e.fps.push(d.iter().zip(&m.det_matched).filter(|(_, &x)| !x).map(|(&t, _)| t).collect());
        e.tps.push(m.pairs.iter().map(|&(_, det)| det).collect());
    }
    e
}

fn any_near(times: &[f64], t: f64, tol: f64) -> bool {
    times.iter().any(|&x| (x - t).abs() <= tol + TIME_SLACK)
}

fn fill(anchors: &[Vec<f64>], others: &[Vec<f64>], tol: f64, out: &mut [Vec<u64>]) {
    for (i, a) in anchors.iter().enumerate() {
        for &t in a {
            for (j, o) in others.iter().enumerate() {
                if any_near(o, t, tol) {
                    out[i][j] += 1;
                }
            }
        }
    }
}

fn per_class_times(ann: &OnsetAnnotation, classes: &[Label]) -> Vec<Vec<f64>> {
    classes.iter().map(|&c| ann.times_of(c)).collect()
}

/// Builds the confusion matrices from per-class matches. True positives are
/// located at their detection time. Each anchor counts at most once per
/// other class.
pub fn pseudo_confusions(
    dets: &OnsetAnnotation,
    refs: &OnsetAnnotation,
    classes: &[Label],
    match_tol: f64,
    confusion_tol: f64,
) -> ConfusionTriple {
    evaluate_track("", dets, refs, classes, match_tol, confusion_tol).confusions
}

/// Matches every class and derives the pseudo-confusions of one track.
pub fn evaluate_track(
    name: &str,
    dets: &OnsetAnnotation,
    refs: &OnsetAnnotation,
    classes: &[Label],
    match_tol: f64,
    confusion_tol: f64,
) -> TrackEval {
    let d = per_class_times(dets, classes);
    let r = per_class_times(refs, classes);
    let matches: Vec<MatchResult> = d.iter().zip(&r).map(|(d, r)| match_onsets(d, r, match_tol)).collect();
    let ev = split_events(&d, &r, &matches);
    let mut conf = ConfusionTriple::zeros(classes);
    fill(&ev.fns, &ev.fps, confusion_tol, &mut conf.classic);
    fill(&ev.fns, &ev.tps, confusion_tol, &mut conf.masking);
    fill(&ev.fps, &ev.tps, confusion_tol, &mut conf.excitement);
    TrackEval {
        name: name.to_string(),
        classes: classes.to_vec(),
        matches,
        confusions: conf,
    }
}

/// Mean over tracks of the per-track mean F-measure.
pub fn aggregate_mean(tracks: &[TrackEval]) -> Result<f64> {
    if tracks.is_empty() {
        return Err(Error::Invalid("no tracks to aggregate".into()));
    }
    Ok(tracks.iter().map(TrackEval::mean_f).sum::<f64>() / tracks.len() as f64)
}

/// Global F-measure from counts summed over all tracks and classes.
pub fn aggregate_sum(tracks: &[TrackEval]) -> Result<f64> {
    if tracks.is_empty() {
        return Err(Error::Invalid("no tracks to aggregate".into()));
    }
    Ok(total_counts(tracks).f_measure())
}

pub fn total_counts(tracks: &[TrackEval]) -> Counts {
    let mut c = Counts::default();
    for t in tracks {
        for m in &t.matches {
            c += m.counts;
        }
    }
    c
}

/// Per-class counts summed over tracks.
pub fn class_totals(tracks: &[TrackEval], n_classes: usize) -> Vec<Counts> {
    let mut out = vec![Counts::default(); n_classes];
    for t in tracks {
        for (o, m) in out.iter_mut().zip(&t.matches) {
            *o += m.counts;
        }
    }
    out
}

/// Aggregated result of an evaluation run.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub classes: Vec<Label>,
    pub tolerance: f64,
    pub tracks: Vec<TrackEval>,
}

impl EvalReport {
    pub fn new(classes: &[Label], tolerance: f64, tracks: Vec<TrackEval>) -> Self {
        Self {
            classes: classes.to_vec(),
            tolerance,
            tracks,
        }
    }

    pub fn mean_f(&self) -> Option<f64> {
        aggregate_mean(&self.tracks).ok()
    }

    pub fn sum_f(&self) -> Option<f64> {
        aggregate_sum(&self.tracks).ok()
    }

    pub fn confusions(&self) -> ConfusionTriple {
        let mut c = ConfusionTriple::zeros(&self.classes);
        for t in &self.tracks {
            c.add(&t.confusions);
        }
        c
    }

    /// `class,tp,fp,fn,precision,recall,f_measure` with one row per class and
    /// a trailing `SUM` row; headers only when there are no tracks.
    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("class,tp,fp,fn,precision,recall,f_measure\n");
        if self.tracks.is_empty() {
            return s;
        }
        let row = |s: &mut String, name: &str, c: &Counts| {
            let _ = writeln!(
                s,
                "{name},{},{},{},{:.4},{:.4},{:.4}",
                c.tp,
                c.fp,
                c.fn_,
                c.precision(),
                c.recall(),
                c.f_measure()
            );
        };
        for (l, c) in self.classes.iter().zip(class_totals(&self.tracks, self.classes.len())) {
            row(&mut s, l.as_str(), &c);
        }
        row(&mut s, "SUM", &total_counts(&self.tracks));
        s
    }

    pub fn per_track_csv(&self) -> String {
        let mut s = String::from("track,class,tp,fp,fn,f_measure\n");
        for t in &self.tracks {
            for (l, m) in t.classes.iter().zip(&t.matches) {
                let c = m.counts;
                let _ = writeln!(s, "{},{l},{},{},{},{:.4}", t.name, c.tp, c.fp, c.fn_, c.f_measure());
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        if let (Some(m), Some(g)) = (self.mean_f(), self.sum_f()) {
            let _ = writeln!(s, "mean_f,{m:.4}");
            let _ = writeln!(s, "sum_f,{g:.4}");
            let _ = writeln!(s, "tracks,{}", self.tracks.len());
            let _ = writeln!(s, "tolerance_s,{:.3}", self.tolerance);
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tracks       {}", self.tracks.len());
        let _ = writeln!(s, "tolerance    {:.3} s", self.tolerance);
        match (self.mean_f(), self.sum_f()) {
            (Some(m), Some(g)) => {
                let _ = writeln!(s, "mean F       {m:.4}");
                let _ = writeln!(s, "sum F        {g:.4}");
                let _ = writeln!(s);
                let _ = writeln!(s, "{:<6}{:>7}{:>7}{:>7}{:>9}", "class", "tp", "fp", "fn", "F");
                for (l, c) in self.classes.iter().zip(class_totals(&self.tracks, self.classes.len())) {
                    let _ = writeln!(s, "{:<6}{:>7}{:>7}{:>7}{:>9.4}", l.as_str(), c.tp, c.fp, c.fn_, c.f_measure());
                }
            }
            _ => {
                let _ = writeln!(s, "no tracks evaluated");
            }
        }
        s
    }
}

pub fn matrix_csv(classes: &[Label], m: &[Vec<u64>]) -> String {
    let mut s = String::from("class");
    for l in classes {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    for (l, row) in classes.iter().zip(m) {
        s.push_str(l.as_str());
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Minimal heatmap: one shaded cell per entry, rows are anchors.
pub fn matrix_svg(title: &str, classes: &[Label], m: &[Vec<u64>]) -> String {
    let cell = 28;
    let margin = 48;
    let n = classes.len();
    let size = margin + n * cell + 8;
    let max = m.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="monospace" font-size="10">"#,
        size + 16
    );
    let _ = writeln!(s, r#"<text x="4" y="12">{title}</text>"#);
    for (i, l) in classes.iter().enumerate() {
        let pos = margin + i * cell + cell / 2;
        let _ = writeln!(s, r#"<text x="{pos}" y="{}" text-anchor="middle">{l}</text>"#, margin - 4 + 16);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{l}</text>"#, margin - 4, pos + 4 + 16);
    }
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let x = margin + j * cell;
            let y = margin + i * cell + 16;
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb(200,40,40)" fill-opacity="{:.3}" stroke="#ccc"/>"##,
                v as f64 / max
            );
            if v > 0 {
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle">{v}</text>"#,
                    x + cell / 2,
                    y + cell / 2 + 4
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `per_class.csv`, `per_track.csv`, `summary.csv`, `summary.txt` and
/// `confusion_{classic,masking,excitement}.{csv,svg}` into `out_dir`.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let write = |name: &str, body: String| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, body).map_err(Error::io(&p))
    };
    write("per_class.csv", report.per_class_csv())?;
    write("per_track.csv", report.per_track_csv())?;
    write("summary.csv", report.summary_csv())?;
    write("summary.txt", report.summary_text())?;
    let conf = report.confusions();
    for (name, m) in [
        ("classic", &conf.classic),
        ("masking", &conf.masking),
        ("excitement", &conf.excitement),
    ] {
        write(&format!("confusion_{name}.csv"), matrix_csv(&report.classes, m))?;
        write(&format!("confusion_{name}.svg"), matrix_svg(name, &report.classes, m))?;
    }
    Ok(())
}

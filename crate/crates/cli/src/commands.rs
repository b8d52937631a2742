use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use drumscribe_core::audio::read_wav;
use drumscribe_core::datafactory::{
    balance_dataset, build_dataset, default_soundfont_groups, default_swap_rules, list_midi, split_dataset,
    write_toy_corpus, BuildConfig, GmMap, RenderMode, SwapRule, ToyStyle,
};
use drumscribe_core::eval::{emit_report, evaluate_track, EvalReport, DEFAULT_TOLERANCE};
use drumscribe_core::model::{build_cnn, build_crnn, default_threshold_grid, desk_cnn, desk_crnn, TrainedModel};
use drumscribe_core::peakpick::onsets_from_activations;
use drumscribe_core::pipeline::{run_cross_validation, ExperimentConfig};
use drumscribe_core::{Label, ModelKind, OnsetAnnotation, SchemaName, TrainConfig};

use crate::config::{resolve, save};
use crate::{BalanceArgs, BuildArgs, EvalArgs, SplitArgs, ToyCorpusArgs, TrainArgs, TranscribeArgs, Workdir};

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| anyhow!("missing --{flag}"))
}

fn workdir(w: &Workdir) -> Result<PathBuf> {
    w.workdir.clone().ok_or_else(|| anyhow!("missing --workdir (or DRUMSCRIBE_WORKDIR)"))
}

fn load_gm(path: &Option<PathBuf>) -> Result<GmMap> {
    Ok(match path {
        Some(p) => GmMap::load(p)?,
        None => GmMap::default(),
    })
}

pub fn toy_corpus(flags: ToyCorpusArgs) -> Result<()> {
    let mut a = resolve("toy-corpus", &flags, flags.config.as_deref())?;
    let out = required(&a.out, "out")?;
    let d = ToyStyle::default();
    let style = ToyStyle {
        ride_prob: *a.ride_prob.get_or_insert(d.ride_prob),
        min_duration_s: *a.min_duration.get_or_insert(d.min_duration_s),
    };
    let n = *a.n_tracks.get_or_insert(24);
    let seed = *a.seed.get_or_insert(0);
    let files = write_toy_corpus(&out, n, &style, seed)?;
    save("toy-corpus", &a, &out.join("run_config.toy-corpus.json"))?;
    eprintln!("wrote {} MIDI files to {}", files.len(), out.display());
    Ok(())
}

pub fn build(flags: BuildArgs) -> Result<()> {
    let mut a = resolve("build", &flags, flags.config.as_deref())?;
    let corpus = required(&a.corpus, "corpus")?;
    let dir = workdir(&a.workdir)?;
    let schema = *a.schema.get_or_insert(SchemaName::Eight);
    let mut cfg = BuildConfig::new(schema);
    cfg.renderer = RenderMode::parse(a.renderer.get_or_insert_with(|| "toy".into()))?;
    cfg.soundfonts = a.soundfonts.get_or_insert_with(|| cfg.soundfonts.clone()).clone();
    cfg.solos = *a.solos.get_or_insert(false);
    cfg.seed = *a.seed.get_or_insert(0);
    cfg.gm = load_gm(&a.gm_map)?;
    let files = list_midi(&corpus)?;
    if files.is_empty() {
        bail!("no .mid files in {}", corpus.display());
    }
    let m = build_dataset(&files, &dir, &cfg)?;
    save("build", &a, &dir.join("run_config.build.json"))?;
    eprintln!("{} tracks kept, {} removed by the duration filter", m.tracks.len(), m.removed.len());
    Ok(())
}

pub fn balance(flags: BalanceArgs) -> Result<()> {
    let mut a = resolve("balance", &flags, flags.config.as_deref())?;
    let dir = workdir(&a.workdir)?;
    let rules = match &a.swap_rules {
        Some(p) => SwapRule::load(p)?,
        None => default_swap_rules(),
    };
    let seed = *a.seed.get_or_insert(0);
    let m = balance_dataset(&dir, &rules, seed, &load_gm(&a.gm_map)?)?;
    save("balance", &a, &dir.join("run_config.balance.json"))?;
    eprintln!("{} swaps applied", m.swap_log.len());
    Ok(())
}

fn parse_groups(s: &str) -> Result<Vec<Vec<u32>>> {
    s.split(';')
        .map(|g| {
            g.split(',')
                .map(|x| x.trim().parse::<u32>().with_context(|| format!("bad soundfont id `{x}` in --groups")))
                .collect()
        })
        .collect()
}

fn format_groups(g: &[Vec<u32>]) -> String {
    g.iter()
        .map(|v| v.iter().map(u32::to_string).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn split(flags: SplitArgs) -> Result<()> {
    let mut a = resolve("split", &flags, flags.config.as_deref())?;
    let dir = workdir(&a.workdir)?;
    let groups = parse_groups(a.groups.get_or_insert_with(|| format_groups(&default_soundfont_groups())))?;
    let val = *a.val_fraction.get_or_insert(0.15);
    let seed = *a.seed.get_or_insert(0);
    let m = split_dataset(&dir, &groups, val, seed)?;
    save("split", &a, &dir.join("run_config.split.json"))?;
    eprintln!("{} folds written", m.folds.len());
    Ok(())
}

pub fn train(flags: TrainArgs) -> Result<()> {
    let mut a = resolve("train", &flags, flags.config.as_deref())?;
    let dir = workdir(&a.workdir)?;
    let manifest = drumscribe_core::datafactory::DatasetManifest::read(&dir.join("manifest.json"))?;
    if let Some(s) = a.schema {
        if s != manifest.schema {
            bail!("--schema {s} does not match the dataset schema {}", manifest.schema);
        }
    }
    a.schema = Some(manifest.schema);
    let n = manifest.schema.n_classes();
    let kind = *a.model.get_or_insert(ModelKind::Crnn);
    let desk = match a.size.get_or_insert_with(|| "full".into()).as_str() {
        "full" => false,
        "desk" => true,
        other => bail!("--size must be `full` or `desk`, not `{other}`"),
    };
    let spec = match (kind, desk) {
        (ModelKind::Cnn, false) => build_cnn(n),
        (ModelKind::Crnn, false) => build_crnn(n),
        (ModelKind::Cnn, true) => desk_cnn(n),
        (ModelKind::Crnn, true) => desk_crnn(n),
    };
    let mut cfg = ExperimentConfig::new(spec);
    let t = &mut cfg.train;
    *t = if desk { TrainConfig::desk(kind) } else { TrainConfig::for_kind(kind) };
    t.lr = *a.lr.get_or_insert(t.lr);
    t.lr_decay = *a.lr_decay.get_or_insert(t.lr_decay);
    t.patience = *a.patience.get_or_insert(t.patience);
    t.batch_size = *a.batch_size.get_or_insert(t.batch_size);
    t.seq_len = *a.seq_len.get_or_insert(t.seq_len);
    t.max_epochs = *a.max_epochs.get_or_insert(t.max_epochs);
    t.widen_targets = *a.widen_targets.get_or_insert(t.widen_targets);
    t.rng_seed = *a.seed.get_or_insert(t.rng_seed);
    let p = &mut cfg.peak;
    p.m = *a.peak_m.get_or_insert(p.m);
    p.a = *a.peak_a.get_or_insert(p.a);
    p.w = *a.peak_w.get_or_insert(p.w);
    cfg.threshold_grid = a.thresholds.get_or_insert_with(default_threshold_grid).clone();
    cfg.tolerance = *a.tolerance.get_or_insert(DEFAULT_TOLERANCE);
    cfg.auto_featurize = *a.auto_featurize.get_or_insert(true);
    cfg.folds = a.folds.clone();
    let out = a.out.get_or_insert_with(|| dir.join("runs").join(kind.to_string())).clone();
    std::fs::create_dir_all(&out)?;
    save("train", &a, &out.join("run_config.json"))?;
    let r = run_cross_validation(&dir, &out, &cfg)?;
    eprint!("{}", r.summary_csv());
    Ok(())
}

fn stem(p: &Path) -> Result<String> {
    p.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| anyhow!("bad file name {}", p.display()))
}

pub fn transcribe(flags: TranscribeArgs) -> Result<()> {
    let mut a = resolve("transcribe", &flags, flags.config.as_deref())?;
    let ck = required(&a.checkpoint, "checkpoint")?;
    let mut model = TrainedModel::load(&ck)?;
    if let Some(s) = a.schema {
        if s != model.schema {
            bail!("checkpoint {} uses schema {}, not {s}", ck.display(), model.schema);
        }
    }
    a.schema = Some(model.schema);
    model.peak.delta = *a.delta.get_or_insert(model.peak.delta);
    model.peak.validate()?;
    let out = a.out.get_or_insert_with(|| PathBuf::from(".")).clone();
    let write_act = *a.activations.get_or_insert(false);
    if a.audio.is_empty() {
        bail!("no audio files given");
    }
    std::fs::create_dir_all(&out)?;
    let classes = model.classes();
    for wav in &a.audio {
        let name = stem(wav)?;
        let audio = read_wav(wav)?;
        let act = model.activations(&model.featurize(&audio)?)?;
        if write_act {
            act.write_csv(&out.join(format!("{name}.activations.csv")), &classes)?;
        }
        let onsets = onsets_from_activations(&act, &classes, &model.peak)?;
        onsets.write(&out.join(format!("{name}.txt")))?;
        eprintln!("{}: {} onsets", wav.display(), onsets.len());
    }
    save("transcribe", &a, &out.join("run_config.json"))?;
    Ok(())
}

fn onset_files(dir: &Path) -> Result<BTreeSet<String>> {
    let mut stems = BTreeSet::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "txt") {
            stems.insert(stem(&p)?);
        }
    }
    Ok(stems)
}

/// Smallest schema whose class set covers every label present.
fn infer_schema(anns: &[&OnsetAnnotation]) -> Result<SchemaName> {
    let labels: BTreeSet<Label> = anns.iter().flat_map(|a| a.events.iter().map(|o| o.label)).collect();
    SchemaName::ALL
        .into_iter()
        .find(|s| labels.iter().all(|l| s.classes().contains(l)))
        .ok_or_else(|| anyhow!("labels {labels:?} fit no schema; pass --schema"))
}

pub fn eval(flags: EvalArgs) -> Result<()> {
    let mut a = resolve("eval", &flags, flags.config.as_deref())?;
    let pred = required(&a.pred, "pred")?;
    let refd = required(&a.reference, "ref")?;
    let out = required(&a.out, "out")?;
    let ps = onset_files(&pred)?;
    let rs = onset_files(&refd)?;
    if ps != rs {
        let only_pred: Vec<_> = ps.difference(&rs).cloned().collect();
        let only_ref: Vec<_> = rs.difference(&ps).cloned().collect();
        bail!(
            "file stems differ; only in {}: [{}]; only in {}: [{}]",
            pred.display(),
            only_pred.join(", "),
            refd.display(),
            only_ref.join(", ")
        );
    }
    let mut pairs = Vec::new();
    for s in &ps {
        let f = format!("{s}.txt");
        pairs.push((s.clone(), OnsetAnnotation::read(&pred.join(&f))?, OnsetAnnotation::read(&refd.join(&f))?));
    }
    let schema = match a.schema {
        Some(s) => s,
        None => infer_schema(&pairs.iter().flat_map(|(_, p, r)| [p, r]).collect::<Vec<_>>())?,
    };
    a.schema = Some(schema);
    let tol = *a.tolerance.get_or_insert(DEFAULT_TOLERANCE);
    let ctol = *a.confusion_tolerance.get_or_insert(tol);
    let classes = schema.classes();
    let tracks = pairs.iter().map(|(s, p, r)| evaluate_track(s, p, r, &classes, tol, ctol)).collect();
    let report = EvalReport::new(&classes, tol, tracks);
    emit_report(&report, &out)?;
    save("eval", &a, &out.join("run_config.json"))?;
    eprint!("{}", report.summary_text());
    Ok(())
}

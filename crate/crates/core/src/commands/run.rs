use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::render::{class_levels, encode_gray_png, outcome_levels};
use super::{Run, Source};
use crate::benchmark::{lead_steps_from_minutes, parse_eta, render_eta, score_baseline, score_network, ModelScores};
use crate::dataset::{
    oversample, positive_fraction, prepare_dataset, render_sample_manifest, synth_generate, Dataset, DatasetOptions,
    DatasetSplit, SequenceSample, SplitPolicy, Stacks, SynthConfig,
};
use crate::error::{bail, Result};
use crate::evaluate::{baseline_predictions, network_predictions, outcome_map, Baseline};
use crate::grid::{ClassScheme, GridStack, ProbMap};
use crate::metrics::{render_score_csv, Metric};
use crate::nn::{checkpoint_bytes, load_checkpoint, UNet, UNetConfig};
use crate::optflow::FlowConfig;
use crate::training::{render_history_csv, train as train_net, EpochRecord, TrainConfig, TrainOutcome};

pub const CRF_FILE: &str = "crf.pgs";
pub const U_FILE: &str = "u.pgs";
pub const V_FILE: &str = "v.pgs";

pub(super) fn synth(mut run: Run) -> Result<PathBuf> {
    let mut cfg = SynthConfig::from_kv(run.kv())?;
    cfg.seed = run.seed();
    let stacks = synth_generate(&cfg)?;
    run.write(CRF_FILE, &stacks.crf.to_bytes())?;
    if let (Some(u), Some(v)) = (&stacks.u, &stacks.v) {
        run.write(U_FILE, &u.to_bytes())?;
        run.write(V_FILE, &v.to_bytes())?;
    }
    run.fact("n_frames", cfg.n_frames);
    run.finish()
}

/// Reads `crf.pgs` and, when both exist, `u.pgs` and `v.pgs`, aligning
/// the wind onto the rainfall grid.
pub fn read_stacks(dir: &Path) -> Result<Stacks> {
    let crf = GridStack::read(&dir.join(CRF_FILE))?;
    let (u, v) = (dir.join(U_FILE), dir.join(V_FILE));
    if u.exists() && v.exists() {
        Stacks { crf, u: Some(GridStack::read(&u)?), v: Some(GridStack::read(&v)?) }.align_wind()
    } else {
        Ok(Stacks::rain_only(crf))
    }
}

fn dataset_options(run: &Run, stacks: &Stacks, lead_minutes: u32) -> Result<DatasetOptions> {
    let kv = run.kv();
    let use_wind: bool = kv.get_or("dataset.use_wind", true)?;
    if use_wind && !stacks.has_wind() {
        bail!(Ingestion, "wind channels requested but the stack directory has no u.pgs/v.pgs");
    }
    let t0 = stacks.crf.timestamps().first().copied().unwrap_or(0);
    let train_hours: i64 = kv.get_or("dataset.train_hours", 0)?;
    let block_hours: i64 = kv.get_or("dataset.block_hours", 168)?;
    if train_hours <= 0 || block_hours <= 0 {
        bail!(Config, "dataset.train_hours and dataset.block_hours must be positive");
    }
    Ok(DatasetOptions {
        lead_steps: lead_steps_from_minutes(lead_minutes)?,
        use_wind,
        eta: parse_eta(kv.get_str("dataset.eta"), None)?,
        seed: run.seed(),
        policy: SplitPolicy {
            training_end: t0 + train_hours * SplitPolicy::HOUR,
            week_seconds: block_hours * SplitPolicy::HOUR,
            gap_seconds: SplitPolicy::HOUR,
        },
        scheme: ClassScheme::default(),
    })
}

fn record_split(run: &mut Run, prefix: &str, ds: &Dataset) {
    let natural = ds.natural_split();
    let split = ds.split();
    run.fact(&format!("{prefix}n_train_natural"), natural.train.len());
    run.fact(&format!("{prefix}n_train"), split.train.len());
    run.fact(&format!("{prefix}n_validation"), split.validation.len());
    run.fact(&format!("{prefix}n_test"), split.test.len());
    if let Some(f) = positive_fraction(&split) {
        run.fact(&format!("{prefix}train_positive_fraction"), format!("{f:.6}"));
    }
}

pub(super) fn dataset(mut run: Run) -> Result<PathBuf> {
    let lead = run.kv().get_or("dataset.lead_minutes", 30)?;
    lead_steps_from_minutes(lead)?;
    let stacks = read_stacks(&run.manifest.inputs[0])?;
    let opts = dataset_options(&run, &stacks, lead)?;
    let ds = prepare_dataset(&stacks, &opts)?;
    run.write("dataset.pds", &ds.to_bytes())?;
    run.write("samples.csv", render_sample_manifest(&ds).as_bytes())?;
    run.fact("channels", ds.channels());
    record_split(&mut run, "", &ds);
    run.finish()
}

fn train_config(run: &Run) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::from_kv(run.kv())?;
    cfg.seed = run.seed();
    Ok(cfg)
}

fn fresh_net(ds: &Dataset, run: &Run) -> Result<UNet<f32>> {
    let cfg = UNetConfig {
        in_channels: ds.channels(),
        n_classes: ds.scheme.n_classes(),
        base_width: run.kv().get_or("model.base_width", 8)?,
        ..UNetConfig::default()
    };
    UNet::new(cfg, run.seed())
}

/// The training split for `eta`: the natural one, or the natural one
/// oversampled.
fn split_for(ds: &Dataset, eta: Option<f64>, seed: u64) -> Result<DatasetSplit> {
    match eta {
        None => Ok(ds.natural_split()),
        Some(e) if ds.eta == Some(e) => Ok(ds.split()),
        Some(e) => oversample(&ds.natural_split(), e, seed),
    }
}

fn model_metadata(
    ds: &Dataset,
    outcome: &TrainOutcome,
    cfg: &TrainConfig,
    eta: Option<f64>,
) -> crate::config::KeyValues {
    let mut meta = cfg.to_kv();
    meta.set("lead_steps", ds.lead_steps);
    meta.set("use_wind", ds.use_wind);
    meta.set("eta", render_eta(eta));
    meta.set("best_epoch", outcome.best_epoch);
    meta.set("max_crf", ds.stats.max_crf);
    meta.set("mu_u", ds.stats.mu_u);
    meta.set("sigma_u", ds.stats.sigma_u);
    meta.set("mu_v", ds.stats.mu_v);
    meta.set("sigma_v", ds.stats.sigma_v);
    meta
}

/// `eta,epoch,class,val_f1` for every run.
fn render_f1_vs_epoch(runs: &[(String, Vec<EpochRecord>)]) -> String {
    let mut out = String::from("eta,epoch,class,val_f1\n");
    for (eta, history) in runs {
        for r in history {
            for (c, f) in r.val_f1.iter().enumerate() {
                let f = f.map_or_else(|| "undefined".to_string(), |f| format!("{f:.6}"));
                out.push_str(&format!("{eta},{},{},{f}\n", r.epoch, c + 1));
            }
        }
    }
    out
}

pub(super) fn train(mut run: Run) -> Result<PathBuf> {
    let ds = Dataset::read(&run.manifest.inputs[0])?;
    let cfg = train_config(&run)?;
    let eta = match run.settings().source("dataset.eta") {
        Some(Source::Default) | None => ds.eta,
        _ => parse_eta(run.kv().get_str("dataset.eta"), ds.eta)?,
    };
    let compare = match run.kv().get_str("train.compare_eta") {
        None | Some("none") => None,
        Some(t) => Some(parse_eta(Some(t), None)?),
    };
    for e in 1..=cfg.epochs {
        let (lr, delta) = cfg.schedule(e);
        run.fact(&format!("schedule.epoch{e:03}"), format!("lr={lr} delta={delta}"));
    }

    let split = split_for(&ds, eta, run.seed())?;
    log::info!("training on {} sequences (eta {})", split.train.len(), render_eta(eta));
    let outcome = train_net(fresh_net(&ds, &run)?, &split, &cfg)?;
    run.write("model.pnc", &checkpoint_bytes(&outcome.best, &model_metadata(&ds, &outcome, &cfg, eta)))?;
    run.write("history.csv", render_history_csv(&outcome.history).as_bytes())?;
    run.fact("eta", render_eta(eta));
    run.fact("n_train", split.train.len());
    run.fact("best_epoch", outcome.best_epoch);

    let mut curves = vec![(render_eta(eta), outcome.history)];
    if let Some(other) = compare.filter(|c| *c != eta) {
        let split = split_for(&ds, other, run.seed())?;
        log::info!("comparison run on {} sequences (eta {})", split.train.len(), render_eta(other));
        let o = train_net(fresh_net(&ds, &run)?, &split, &cfg)?;
        let name = format!("history_eta_{}.csv", render_eta(other));
        run.write(&name, render_history_csv(&o.history).as_bytes())?;
        run.fact("compare_best_epoch", o.best_epoch);
        curves.push((render_eta(other), o.history));
    }
    run.write("f1_vs_epoch.csv", render_f1_vs_epoch(&curves).as_bytes())?;
    run.finish()
}

/// `NAME=PATH` or a bare path (named `nn`).
pub(super) fn parse_checkpoints(items: &[String]) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = Vec::new();
    for item in items {
        let (name, path) = match item.split_once('=') {
            Some((n, p)) if !n.is_empty() => (n.to_string(), PathBuf::from(p)),
            _ => ("nn".to_string(), PathBuf::from(item)),
        };
        if name.contains(',') || name.contains(char::is_whitespace) {
            bail!(Config, "model name {name:?} must not contain commas or spaces");
        }
        if out.iter().any(|(n, _)| *n == name) || name == "persistence" || name == "optflow" {
            bail!(Config, "model name {name:?} is used twice; name checkpoints with NAME=PATH");
        }
        out.push((name, path));
    }
    Ok(out)
}

pub(super) fn eval(mut run: Run, checkpoints: &[(String, PathBuf)], baselines: &[Baseline]) -> Result<PathBuf> {
    let ds = Dataset::read(&run.manifest.inputs[0])?;
    if run.settings().source("dataset.lead_minutes") == Some(Source::Flag) {
        let lead = lead_steps_from_minutes(run.kv().get_or("dataset.lead_minutes", 0)?)?;
        if lead != ds.lead_steps {
            bail!(Config, "--lead-minutes asks for {} steps but the dataset was built for {}", lead, ds.lead_steps);
        }
    }
    let test = ds.split().test;
    if test.is_empty() {
        bail!(Empty, "dataset has no test windows");
    }
    let n_boot: usize = run.kv().get_or("eval.n_boot", 100)?;
    let batch: usize = run.kv().get_or("train.batch_size", 16)?;
    let flow = FlowConfig::from_kv(run.kv())?;
    let seed = run.seed();

    let mut predictions: Vec<(String, Vec<ProbMap>)> = Vec::new();
    for (name, path) in checkpoints {
        let ck = load_checkpoint(path)?;
        if let Some(lead) = ck.metadata.get::<usize>("lead_steps")? {
            if lead != ds.lead_steps {
                bail!(Contract, "checkpoint {name} was trained for lead {lead} steps, dataset has {}", ds.lead_steps);
            }
        }
        predictions.push((name.clone(), network_predictions(&ck.net, &test, batch)?));
    }
    let mut seen = Vec::new();
    for &b in baselines {
        if seen.contains(&b) {
            continue;
        }
        seen.push(b);
        predictions.push((b.to_string(), baseline_predictions(b, &test, &ds.stats, &ds.scheme, &flow)?));
    }

    let mut rows = Vec::new();
    let lead_minutes = (ds.lead_steps as i64 * crate::dataset::STEP_SECONDS / 60) as u32;
    for (name, preds) in &predictions {
        let counts = crate::evaluate::per_sample_counts(preds, &test)?;
        let scores = ModelScores::new(name, counts, n_boot, seed)?;
        if let Some(f1) = scores.mean(0, Metric::F1) {
            run.fact(&format!("{name}.f1_class1"), format!("{f1:.6}"));
        }
        rows.extend(crate::metrics::score_rows(name, lead_minutes, &scores.stats));
    }
    run.write("scores.csv", render_score_csv(&rows).as_bytes())?;
    run.fact("n_test", test.len());

    let n_maps: usize = run.kv().get_or("eval.maps", 4)?;
    for (i, sample) in test.iter().take(n_maps).enumerate() {
        write_maps(&mut run, i, sample, &predictions)?;
    }
    run.finish()
}

fn write_maps(
    run: &mut Run,
    i: usize,
    sample: &Arc<SequenceSample>,
    predictions: &[(String, Vec<ProbMap>)],
) -> Result<()> {
    let (h, w) = (sample.height, sample.width);
    let target = &sample.target;
    run.write(&format!("maps/sample{i:02}_target.png"), &encode_gray_png(w, h, &class_levels(target))?)?;
    for (name, preds) in predictions {
        let pred = &preds[i];
        let labels = pred.to_class_map();
        run.write(&format!("maps/sample{i:02}_{name}_pred.png"), &encode_gray_png(w, h, &class_levels(&labels))?)?;
        for c in 0..target.n_classes() {
            let levels = outcome_levels(&outcome_map(pred, target, c));
            run.write(&format!("maps/sample{i:02}_{name}_diff_class{}.png", c + 1), &encode_gray_png(w, h, &levels)?)?;
        }
    }
    Ok(())
}

/// Lead times in minutes; must be strictly increasing.
pub fn parse_leads(text: &str) -> Result<Vec<u32>> {
    let mut leads = Vec::new();
    for part in text.split(',') {
        let m: u32 = match part.trim().parse() {
            Ok(m) => m,
            Err(_) => bail!(Config, "sweep.leads: {part:?} is not a number of minutes"),
        };
        lead_steps_from_minutes(m)?;
        if leads.last().is_some_and(|&prev| m <= prev) {
            bail!(Config, "sweep.leads must be strictly increasing, got {text:?}");
        }
        leads.push(m);
    }
    Ok(leads)
}

pub(super) fn leadsweep(mut run: Run) -> Result<PathBuf> {
    let leads = parse_leads(run.kv().get_str("sweep.leads").unwrap_or("10,20,30,40,50,60"))?;
    let cfg = train_config(&run)?;
    let flow = FlowConfig::from_kv(run.kv())?;
    let stacks = read_stacks(&run.manifest.inputs[0])?;
    let n_boot: usize = run.kv().get_or("eval.n_boot", 100)?;
    let seed = run.seed();
    let mut rows = Vec::new();
    let mut persistence_f1 = Vec::new();
    for &lead in &leads {
        let opts = dataset_options(&run, &stacks, lead)?;
        let ds = prepare_dataset(&stacks, &opts)?;
        let split = ds.split();
        if split.test.is_empty() {
            bail!(Empty, "no test windows at lead {lead} min");
        }
        record_split(&mut run, &format!("lead{lead}."), &ds);
        let nn_name = if ds.use_wind { "nn_wind" } else { "nn_rain" };
        log::info!("lead {lead} min: training {nn_name} on {} sequences", split.train.len());
        let outcome = train_net(fresh_net(&ds, &run)?, &split, &cfg)?;
        run.write(&format!("history_lead{lead}.csv"), render_history_csv(&outcome.history).as_bytes())?;
        let mut models = vec![score_network(nn_name, &outcome.best, &split.test, cfg.batch_size, n_boot, seed)?];
        for b in [Baseline::Persistence, Baseline::OpticalFlow] {
            models.push(score_baseline(b, &ds, &flow, n_boot, seed)?);
        }
        persistence_f1.push(models[1].mean(0, Metric::F1));
        for m in &models {
            rows.extend(crate::metrics::score_rows(&m.name, lead, &m.stats));
        }
    }
    let monotone = persistence_f1.windows(2).all(|w| match (w[0], w[1]) {
        (Some(a), Some(b)) => b <= a,
        _ => true,
    });
    if !monotone {
        log::warn!("persistence F1 (class 1) increases with lead somewhere: {persistence_f1:?}");
    }
    run.fact("persistence_f1_nonincreasing", monotone);
    run.write("leadsweep.csv", render_score_csv(&rows).as_bytes())?;
    run.finish()
}

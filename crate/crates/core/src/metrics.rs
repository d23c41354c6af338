//! Verification scores: confusion accumulation, F1 / threat score / BIAS,
//! and sequence-level bootstrap uncertainty.
//!
//! Undefined scores (empty denominators) are `None`, never `NaN`.

use std::fmt;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::grid::{ClassMap, ProbMap};

/// Hits, correct negatives, false alarms and misses for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ClassCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn record(&mut self, predicted: bool, observed: bool) {
        match (predicted, observed) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// `tp / (tp + fp + fn)`.
    pub fn threat_score(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    /// `(tp + fp) / (tp + fn)`.
    pub fn bias(&self) -> Option<f64> {
        ratio(self.tp + self.fp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, written as
    /// `2 tp / (2 tp + fp + fn)` so it stays defined (and equals 0) when
    /// there are events but no hits.
    pub fn f1(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn score(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::F1 => self.f1(),
            Metric::Ts => self.threat_score(),
            Metric::Bias => self.bias(),
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-class confusion counters. Merging is associative and commutative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    classes: Vec<ClassCounts>,
}

impl ConfusionCounts {
    pub fn new(n_classes: usize) -> Self {
        ConfusionCounts { classes: vec![ClassCounts::default(); n_classes] }
    }

    pub fn from_classes(classes: Vec<ClassCounts>) -> Self {
        ConfusionCounts { classes }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, m: usize) -> &ClassCounts {
        &self.classes[m]
    }

    pub fn classes(&self) -> &[ClassCounts] {
        &self.classes
    }

    /// Adds one prediction/target pair. A pixel is predicted positive when
    /// `P >= 0.5`; pixels invalid in the target are skipped.
    pub fn accumulate(&mut self, pred: &ProbMap, target: &ClassMap) -> Result<()> {
        check_shapes(self.n_classes(), pred.n_classes(), pred.height(), pred.width(), target)?;
        let n = target.height() * target.width();
        for (m, counts) in self.classes.iter_mut().enumerate() {
            let p = pred.channel(m);
            let t = target.channel(m);
            for i in 0..n {
                if target.valid()[i] {
                    counts.record(p[i] >= 0.5, t[i] == 1);
                }
            }
        }
        Ok(())
    }

    /// Same as [`accumulate`](Self::accumulate) for an already binary
    /// prediction.
    pub fn accumulate_labels(&mut self, pred: &ClassMap, target: &ClassMap) -> Result<()> {
        check_shapes(self.n_classes(), pred.n_classes(), pred.height(), pred.width(), target)?;
        let n = target.height() * target.width();
        for (m, counts) in self.classes.iter_mut().enumerate() {
            let p = pred.channel(m);
            let t = target.channel(m);
            for i in 0..n {
                if target.valid()[i] && pred.valid()[i] {
                    counts.record(p[i] == 1, t[i] == 1);
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.n_classes() != self.n_classes() {
            bail!(Shape, "cannot merge {} classes into {}", other.n_classes(), self.n_classes());
        }
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            a.add(b);
        }
        Ok(())
    }

    /// Sums a list of per-sample counts.
    pub fn pooled<'a>(n_classes: usize, items: impl IntoIterator<Item = &'a ConfusionCounts>) -> Result<Self> {
        let mut total = ConfusionCounts::new(n_classes);
        for c in items {
            total.merge(c)?;
        }
        Ok(total)
    }
}

fn check_shapes(n: usize, pred_classes: usize, h: usize, w: usize, target: &ClassMap) -> Result<()> {
    if pred_classes != n || target.n_classes() != n || h != target.height() || w != target.width() {
        bail!(
            Shape,
            "prediction {}x{}x{} vs target {}x{}x{} (counters hold {} classes)",
            pred_classes,
            h,
            w,
            target.n_classes(),
            target.height(),
            target.width(),
            n
        );
    }
    Ok(())
}

pub fn threat_score(counts: &ConfusionCounts, m: usize) -> Option<f64> {
    counts.class(m).threat_score()
}

pub fn bias(counts: &ConfusionCounts, m: usize) -> Option<f64> {
    counts.class(m).bias()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecallF1 {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn precision_recall_f1(counts: &ConfusionCounts, m: usize) -> PrecisionRecallF1 {
    let c = counts.class(m);
    PrecisionRecallF1 { precision: c.precision(), recall: c.recall(), f1: c.f1() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    F1,
    Ts,
    Bias,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::F1, Metric::Ts, Metric::Bias];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::F1 => "F1",
            Metric::Ts => "TS",
            Metric::Bias => "BIAS",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Bootstrap summary: `scores[class][metric]`, `None` where every
/// replicate was undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapStats {
    pub n_replicates: usize,
    pub scores: Vec<[Option<MeanStd>; 3]>,
}

impl BootstrapStats {
    pub fn get(&self, class: usize, metric: Metric) -> Option<MeanStd> {
        let idx = Metric::ALL.iter().position(|m| *m == metric).unwrap();
        self.scores[class][idx]
    }
}

/// Resamples whole sequences with replacement `n_boot` times and reports
/// the mean and population standard deviation of each pooled score.
pub fn bootstrap_stats(per_sample: &[ConfusionCounts], n_boot: usize, seed: u64) -> Result<BootstrapStats> {
    if per_sample.is_empty() {
        bail!(Empty, "bootstrap needs at least one sample");
    }
    if n_boot == 0 {
        bail!(Contract, "bootstrap needs at least one replicate");
    }
    let n = per_sample.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let resamples: Vec<Vec<usize>> = (0..n_boot).map(|_| (0..n).map(|_| rng.random_range(0..n)).collect()).collect();
    bootstrap_over(per_sample, &resamples)
}

/// Bootstrap statistics over explicitly supplied index sets.
pub fn bootstrap_over<I: AsRef<[usize]>>(per_sample: &[ConfusionCounts], resamples: &[I]) -> Result<BootstrapStats> {
    let Some(first) = per_sample.first() else {
        bail!(Empty, "bootstrap needs at least one sample");
    };
    let n_classes = first.n_classes();
    let mut values: Vec<[Vec<f64>; 3]> = (0..n_classes).map(|_| [Vec::new(), Vec::new(), Vec::new()]).collect();
    for idx in resamples {
        let mut pooled = ConfusionCounts::new(n_classes);
        for &i in idx.as_ref() {
            let Some(c) = per_sample.get(i) else {
                bail!(Contract, "resample index {i} out of range");
            };
            pooled.merge(c)?;
        }
        for (m, slot) in values.iter_mut().enumerate() {
            for (k, metric) in Metric::ALL.iter().enumerate() {
                if let Some(s) = pooled.class(m).score(*metric) {
                    slot[k].push(s);
                }
            }
        }
    }
    let scores = values
        .iter()
        .map(|per_metric| [mean_std(&per_metric[0]), mean_std(&per_metric[1]), mean_std(&per_metric[2])])
        .collect();
    Ok(BootstrapStats { n_replicates: resamples.len(), scores })
}

fn mean_std(xs: &[f64]) -> Option<MeanStd> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some(MeanStd { mean, std: var.sqrt() })
}

/// One line of the score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub model: String,
    pub lead_minutes: u32,
    /// 1-based class index.
    pub class: usize,
    pub metric: Metric,
    pub value: Option<MeanStd>,
}

pub fn score_rows(model: &str, lead_minutes: u32, stats: &BootstrapStats) -> Vec<ScoreRow> {
    let mut rows = Vec::new();
    for class in 0..stats.scores.len() {
        for metric in Metric::ALL {
            rows.push(ScoreRow {
                model: model.to_string(),
                lead_minutes,
                class: class + 1,
                metric,
                value: stats.get(class, metric),
            });
        }
    }
    rows
}

/// Renders `model,lead_minutes,class,metric,mean,std`; undefined scores
/// are written as `undefined`.
pub fn render_score_csv(rows: &[ScoreRow]) -> String {
    let mut out = String::from("model,lead_minutes,class,metric,mean,std\n");
    for r in rows {
        let (mean, std) = match r.value {
            Some(v) => (format!("{:.6}", v.mean), format!("{:.6}", v.std)),
            None => ("undefined".to_string(), "undefined".to_string()),
        };
        let _ = writeln!(out, "{},{},{},{},{},{}", r.model, r.lead_minutes, r.class, r.metric, mean, std);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> ClassCounts {
        ClassCounts { tp, tn, fp, fn_ }
    }

    #[test]
    fn two_by_two_enumeration() {
        let pred = ProbMap::new(1, 2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let target = ClassMap::new(1, 2, 2, vec![1, 0, 1, 0], vec![true; 4]).unwrap();
        let mut c = ConfusionCounts::new(1);
        c.accumulate(&pred, &target).unwrap();
        assert_eq!(*c.class(0), counts(1, 1, 1, 1));
    }

    #[test]
    fn half_probability_counts_as_hit() {
        let pred = ProbMap::new(1, 1, 1, vec![0.5]).unwrap();
        let target = ClassMap::new(1, 1, 1, vec![1], vec![true]).unwrap();
        let mut c = ConfusionCounts::new(1);
        c.accumulate(&pred, &target).unwrap();
        assert_eq!(c.class(0).tp, 1);
    }

    #[test]
    fn perfect_prediction_has_no_errors() {
        let target = ClassMap::new(2, 2, 2, vec![1, 1, 0, 0, 1, 0, 0, 0], vec![true; 4]).unwrap();
        let mut c = ConfusionCounts::new(2);
        c.accumulate(&ProbMap::from_class_map(&target), &target).unwrap();
        for m in 0..2 {
            assert_eq!(c.class(m).fp, 0);
            assert_eq!(c.class(m).fn_, 0);
            assert_eq!(threat_score(&c, m), Some(1.0));
            assert_eq!(bias(&c, m), Some(1.0));
        }
    }

    #[test]
    fn masked_pixels_are_skipped_and_shapes_checked() {
        let pred = ProbMap::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        let target = ClassMap::new(1, 1, 2, vec![1, 0], vec![true, false]).unwrap();
        let mut c = ConfusionCounts::new(1);
        c.accumulate(&pred, &target).unwrap();
        assert_eq!(c.class(0).total(), 1);
        let wrong = ClassMap::zeros(1, 2, 2);
        assert!(c.accumulate(&pred, &wrong).is_err());
    }

    #[test]
    fn score_examples() {
        let c = ConfusionCounts::from_classes(vec![counts(3, 0, 1, 2)]);
        assert!((threat_score(&c, 0).unwrap() - 0.5).abs() < 1e-15);
        assert!((bias(&c, 0).unwrap() - 0.8).abs() < 1e-15);
        let prf = precision_recall_f1(&c, 0);
        assert!((prf.precision.unwrap() - 0.75).abs() < 1e-15);
        assert!((prf.recall.unwrap() - 0.6).abs() < 1e-15);
        assert!((prf.f1.unwrap() - 2.0 * 0.45 / 1.35).abs() < 1e-12);

        let perfect = counts(5, 3, 0, 0);
        assert_eq!((perfect.precision(), perfect.recall(), perfect.f1()), (Some(1.0), Some(1.0), Some(1.0)));

        let miss = counts(0, 4, 2, 3);
        assert_eq!(miss.f1(), Some(0.0));

        let empty = counts(0, 10, 0, 0);
        assert_eq!(empty.threat_score(), None);
        assert_eq!(empty.bias(), None);
        assert_eq!(empty.f1(), None);
        assert_eq!(empty.precision(), None);
    }

    #[test]
    fn bootstrap_identical_samples_have_zero_spread() {
        let s = ConfusionCounts::from_classes(vec![counts(3, 5, 1, 2)]);
        let stats = bootstrap_stats(&vec![s.clone(); 7], 100, 1).unwrap();
        let f1 = stats.get(0, Metric::F1).unwrap();
        assert!((f1.mean - s.class(0).f1().unwrap()).abs() < 1e-12);
        assert!(f1.std.abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let samples: Vec<_> =
            (0..10).map(|i| ConfusionCounts::from_classes(vec![counts(i, 10, 10 - i, i % 3)])).collect();
        let a = bootstrap_stats(&samples, 100, 42).unwrap();
        let b = bootstrap_stats(&samples, 100, 42).unwrap();
        assert_eq!(a, b);
        assert!(bootstrap_stats(&[], 100, 1).is_err());
    }

    #[test]
    fn bootstrap_two_sample_exhaustive() {
        let a = ConfusionCounts::from_classes(vec![counts(4, 1, 1, 0)]);
        let b = ConfusionCounts::from_classes(vec![counts(1, 2, 2, 3)]);
        let all = [[0, 0], [0, 1], [1, 0], [1, 1]];
        let stats = bootstrap_over(&[a.clone(), b.clone()], &all).unwrap();
        // Independent enumeration: pooled ts for {aa, ab, ba, bb}.
        let ts = |tp: f64, fp: f64, fn_: f64| tp / (tp + fp + fn_);
        let reps = [ts(8.0, 2.0, 0.0), ts(5.0, 3.0, 3.0), ts(5.0, 3.0, 3.0), ts(2.0, 4.0, 6.0)];
        let mean = reps.iter().sum::<f64>() / 4.0;
        let std = (reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        let got = stats.get(0, Metric::Ts).unwrap();
        assert!((got.mean - mean).abs() < 1e-12);
        assert!((got.std - std).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let c = ConfusionCounts::from_classes(vec![counts(3, 0, 1, 2), counts(0, 6, 0, 0)]);
        let stats = bootstrap_stats(&[c], 5, 0).unwrap();
        let rows = score_rows("PER", 30, &stats);
        assert_eq!(rows.len(), 2 * 3);
        let csv = render_score_csv(&rows);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "model,lead_minutes,class,metric,mean,std");
        assert_eq!(lines[1], "PER,30,1,F1,0.666667,0.000000");
        assert_eq!(lines[4], "PER,30,2,F1,undefined,undefined");
    }

    fn arb_counts() -> impl Strategy<Value = ClassCounts> {
        (0u64..1000, 0u64..1000, 0u64..1000, 0u64..1000).prop_map(|(a, b, c, d)| counts(a, b, c, d))
    }

    proptest! {
        #[test]
        fn ts_bounded_by_precision_and_recall(c in arb_counts()) {
            if let (Some(ts), Some(p), Some(r)) = (c.threat_score(), c.precision(), c.recall()) {
                prop_assert!(ts <= p + 1e-15);
                prop_assert!(ts <= r + 1e-15);
            }
        }

        #[test]
        fn f1_ts_identity_when_errors_balance(tp in 0u64..1000, e in 0u64..1000) {
            let c = counts(tp, 0, e, e);
            if let (Some(f1), Some(ts)) = (c.f1(), c.threat_score()) {
                prop_assert!((f1 - 2.0 * ts / (1.0 + ts)).abs() < 1e-12);
            }
        }

        #[test]
        fn adding_a_hit_never_hurts(c in arb_counts()) {
            let mut d = c;
            d.tp += 1;
            let pairs = [
                (c.threat_score(), d.threat_score()),
                (c.precision(), d.precision()),
                (c.recall(), d.recall()),
                (c.f1(), d.f1()),
            ];
            for (before, after) in pairs {
                if let Some(b) = before {
                    prop_assert!(after.unwrap() >= b - 1e-15);
                }
            }
        }

        #[test]
        fn pooling_is_additive(a in prop::collection::vec(0u8..2, 16), b in prop::collection::vec(0u8..2, 16),
                               p in prop::collection::vec(0.0f32..1.0, 32)) {
            let ta = ClassMap::new(1, 4, 4, a.clone(), vec![true; 16]).unwrap();
            let tb = ClassMap::new(1, 4, 4, b.clone(), vec![true; 16]).unwrap();
            let pa = ProbMap::new(1, 4, 4, p[..16].to_vec()).unwrap();
            let pb = ProbMap::new(1, 4, 4, p[16..].to_vec()).unwrap();
            let mut ca = ConfusionCounts::new(1);
            ca.accumulate(&pa, &ta).unwrap();
            let mut cb = ConfusionCounts::new(1);
            cb.accumulate(&pb, &tb).unwrap();
            let mut both = ConfusionCounts::new(1);
            let cat_t = ClassMap::new(1, 8, 4, [a, b].concat(), vec![true; 32]).unwrap();
            let cat_p = ProbMap::new(1, 8, 4, p).unwrap();
            both.accumulate(&cat_p, &cat_t).unwrap();
            ca.merge(&cb).unwrap();
            prop_assert_eq!(ca, both);
        }
    }
}

use std::sync::Arc;

use super::{shared, SequenceSample};
use crate::error::{bail, Result};

/// Where the training period ends and how the rest is carved up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitPolicy {
    /// First instant after the training period; also the first cut.
    pub training_end: i64,
    /// Length of the alternating validation/test blocks.
    pub week_seconds: i64,
    /// Data discarded after every cut.
    pub gap_seconds: i64,
}

impl SplitPolicy {
    pub const WEEK: i64 = 7 * 24 * 3600;
    pub const HOUR: i64 = 3600;

    pub fn new(training_end: i64) -> Self {
        SplitPolicy { training_end, week_seconds: Self::WEEK, gap_seconds: Self::HOUR }
    }

    /// Assigns a `[start, end]` time span to a split, or `None` when it
    /// touches the discarded hour `[cut, cut + gap)` after any cut.
    pub fn assign(&self, (start, end): (i64, i64)) -> Option<SplitPart> {
        let touches = |cut: i64| start < cut + self.gap_seconds && end >= cut;
        if end < self.training_end {
            return Some(SplitPart::Train);
        }
        if touches(self.training_end) || start < self.training_end {
            return None;
        }
        let week = (start - self.training_end) / self.week_seconds;
        // The span can only reach into the cut that ends its own week.
        let week_end = self.training_end + (week + 1) * self.week_seconds;
        if touches(week_end) {
            return None;
        }
        let week_start = self.training_end + week * self.week_seconds;
        if week > 0 && touches(week_start) {
            return None;
        }
        Some(if week % 2 == 0 { SplitPart::Validation } else { SplitPart::Test })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

impl SplitPart {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Validation => "validation",
            SplitPart::Test => "test",
        }
    }
}

/// Training, validation and test sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Arc<SequenceSample>>,
    pub validation: Vec<Arc<SequenceSample>>,
    pub test: Vec<Arc<SequenceSample>>,
    /// Requested positive proportion after oversampling; `None` when the
    /// training set is in its natural state.
    pub eta: Option<f64>,
}

/// Training period first, then alternating weeks of validation and test,
/// with the hour following each cut thrown away.
pub fn split_weeks(samples: Vec<SequenceSample>, policy: &SplitPolicy) -> Result<DatasetSplit> {
    if samples.is_empty() {
        bail!(Empty, "no sequences to split");
    }
    if policy.week_seconds <= 0 || policy.gap_seconds < 0 {
        bail!(Contract, "week length must be positive and gap non-negative");
    }
    if samples.windows(2).any(|w| w[0].t_last > w[1].t_last) {
        bail!(Contract, "sequences must be sorted by time");
    }
    let mut split = DatasetSplit { train: Vec::new(), validation: Vec::new(), test: Vec::new(), eta: None };
    let mut dropped = 0usize;
    for s in shared(samples) {
        match policy.assign(s.time_span()) {
            Some(SplitPart::Train) => split.train.push(s),
            Some(SplitPart::Validation) => split.validation.push(s),
            Some(SplitPart::Test) => split.test.push(s),
            None => dropped += 1,
        }
    }
    log::debug!(
        "split: {} train / {} validation / {} test, {dropped} dropped at cuts",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FRAMES_PER_WINDOW, STEP_SECONDS};
    use crate::error::Error;
    use crate::grid::ClassMap;

    const END: i64 = 1_000_000;

    fn sample(t_last: i64, lead: usize) -> SequenceSample {
        SequenceSample {
            input: vec![0.5; 12],
            channels: 12,
            height: 1,
            width: 1,
            target: ClassMap::zeros(3, 1, 1),
            t_last,
            lead_steps: lead,
        }
    }

    fn hourly(from: i64, to: i64, lead: usize) -> Vec<SequenceSample> {
        let first = from + (FRAMES_PER_WINDOW as i64 - 1) * STEP_SECONDS;
        (0..).map(|k| first + k * 3600).take_while(|t| *t < to).map(|t| sample(t, lead)).collect()
    }

    #[test]
    fn weeks_alternate_after_training() {
        let policy = SplitPolicy::new(END);
        let week = SplitPolicy::WEEK;
        let samples = hourly(END - week, END + 2 * week, 6);
        let split = split_weeks(samples, &policy).unwrap();
        assert!(!split.train.is_empty());
        for s in &split.validation {
            assert!(s.time_span().0 >= END + 3600 && s.time_span().1 < END + week);
        }
        for s in &split.test {
            assert!(s.time_span().0 >= END + week + 3600 && s.time_span().1 < END + 2 * week);
        }
        assert!(!split.validation.is_empty() && !split.test.is_empty());
    }

    #[test]
    fn straddling_samples_are_dropped() {
        let policy = SplitPolicy::new(END);
        // Input window ends before the cut but its target lands after it.
        let straddle = sample(END - 60, 6);
        assert_eq!(policy.assign(straddle.time_span()), None);
        // Starts inside the discarded hour.
        assert_eq!(policy.assign((END + 1800, END + 1800 + 3300)), None);
        // Fully inside the first week after the gap.
        assert_eq!(policy.assign((END + 3600, END + 7200)), Some(SplitPart::Validation));
        // Crosses the first week boundary.
        let wk = END + SplitPolicy::WEEK;
        assert_eq!(policy.assign((wk - 600, wk + 600)), None);
        assert_eq!(policy.assign((wk + 3600, wk + 7000)), Some(SplitPart::Test));
        assert_eq!(policy.assign((wk + 100, wk + 3000)), None);
    }

    #[test]
    fn adjacent_splits_keep_an_hour_apart() {
        let policy = SplitPolicy::new(END);
        let week = SplitPolicy::WEEK;
        let samples: Vec<_> =
            (0..).map(|k| END - week + k * 1500).take_while(|t| *t < END + 4 * week).map(|t| sample(t, 6)).collect();
        let split = split_weeks(samples, &policy).unwrap();
        let mut tagged: Vec<(i64, i64, &str)> = Vec::new();
        for (name, part) in [("train", &split.train), ("val", &split.validation), ("test", &split.test)] {
            tagged.extend(part.iter().map(|s| (s.time_span().0, s.time_span().1, name)));
        }
        tagged.sort();
        for w in tagged.windows(2) {
            if w[0].2 != w[1].2 {
                assert!(w[1].0 - w[0].1 >= 3600, "{:?} -> {:?}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn all_training_data() {
        let split = split_weeks(hourly(0, END - 10 * 3600, 6), &SplitPolicy::new(END)).unwrap();
        assert!(split.validation.is_empty() && split.test.is_empty());
        assert!(!split.train.is_empty());
    }

    #[test]
    fn empty_and_unsorted_inputs_error() {
        assert!(matches!(split_weeks(vec![], &SplitPolicy::new(END)), Err(Error::Empty(_))));
        let unsorted = vec![sample(5000, 1), sample(1000, 1)];
        assert!(matches!(split_weeks(unsorted, &SplitPolicy::new(END)), Err(Error::Contract(_))));
    }
}

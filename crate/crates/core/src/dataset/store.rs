//! Prepared datasets and their `PDS1` files.
//!
//! Layout: magic `PDS1`, little-endian `u32` header length, a `key=value`
//! header (statistics, class scheme, shapes and the index lists
//! `train_natural`, `train`, `validation`, `test` into the sample pool),
//! then for every pooled sample: `t_last` as `i64`, the input as `f32`
//! values, target labels as bytes and target validity as bytes.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{DatasetSplit, SequenceSample};
use crate::config::KeyValues;
use crate::error::{bail, Error, Result};
use crate::grid::{ClassMap, ClassScheme, NormStats};

const MAGIC: &[u8; 4] = b"PDS1";

/// A split dataset plus everything needed to reproduce its scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub stats: NormStats,
    pub scheme: ClassScheme,
    pub use_wind: bool,
    pub lead_steps: usize,
    pub seed: u64,
    pub eta: Option<f64>,
    pool: Vec<Arc<SequenceSample>>,
    train_natural: Vec<usize>,
    train: Vec<usize>,
    validation: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    /// Pools the samples of `natural` and `split` (whose training set may
    /// hold repeated references to the same sample).
    pub fn from_splits(
        stats: NormStats,
        scheme: ClassScheme,
        use_wind: bool,
        lead_steps: usize,
        seed: u64,
        natural: &DatasetSplit,
        split: &DatasetSplit,
    ) -> Result<Self> {
        let mut pool: Vec<Arc<SequenceSample>> = Vec::new();
        let mut index: HashMap<*const SequenceSample, usize> = HashMap::new();
        let mut intern = |s: &Arc<SequenceSample>| -> usize {
            *index.entry(Arc::as_ptr(s)).or_insert_with(|| {
                pool.push(Arc::clone(s));
                pool.len() - 1
            })
        };
        let mut ids = |v: &[Arc<SequenceSample>]| v.iter().map(&mut intern).collect::<Vec<_>>();
        let train_natural = ids(&natural.train);
        let validation = ids(&split.validation);
        let test = ids(&split.test);
        let train = ids(&split.train);
        let ds = Dataset {
            stats,
            scheme,
            use_wind,
            lead_steps,
            seed,
            eta: split.eta,
            pool,
            train_natural,
            train,
            validation,
            test,
        };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<()> {
        let channels = if self.use_wind { 36 } else { 12 };
        let Some(first) = self.pool.first() else {
            return Ok(());
        };
        for s in &self.pool {
            if s.channels != channels || s.height != first.height || s.width != first.width {
                bail!(Shape, "dataset samples disagree on shape");
            }
            if s.target.n_classes() != self.scheme.n_classes() {
                bail!(Shape, "target has {} classes, scheme {}", s.target.n_classes(), self.scheme.n_classes());
            }
            if s.lead_steps != self.lead_steps {
                bail!(Contract, "sample lead {} differs from dataset lead {}", s.lead_steps, self.lead_steps);
            }
        }
        let n = self.pool.len();
        for list in [&self.train_natural, &self.train, &self.validation, &self.test] {
            if list.iter().any(|&i| i >= n) {
                bail!(Format, "sample index out of range");
            }
        }
        Ok(())
    }

    fn collect(&self, ids: &[usize]) -> Vec<Arc<SequenceSample>> {
        ids.iter().map(|&i| Arc::clone(&self.pool[i])).collect()
    }

    /// The (possibly oversampled) working split.
    pub fn split(&self) -> DatasetSplit {
        DatasetSplit {
            train: self.collect(&self.train),
            validation: self.collect(&self.validation),
            test: self.collect(&self.test),
            eta: self.eta,
        }
    }

    /// The split before oversampling.
    pub fn natural_split(&self) -> DatasetSplit {
        DatasetSplit {
            train: self.collect(&self.train_natural),
            validation: self.collect(&self.validation),
            test: self.collect(&self.test),
            eta: None,
        }
    }

    pub fn channels(&self) -> usize {
        if self.use_wind {
            36
        } else {
            12
        }
    }

    /// `(height, width)` of the samples, if there are any.
    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        self.pool.first().map(|s| (s.height, s.width))
    }

    pub fn n_unique(&self) -> usize {
        self.pool.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (h, w) = self.grid_shape().unwrap_or((0, 0));
        let mut kv = KeyValues::new();
        kv.set("max_crf", self.stats.max_crf);
        kv.set("mu_u", self.stats.mu_u);
        kv.set("sigma_u", self.stats.sigma_u);
        kv.set("mu_v", self.stats.mu_v);
        kv.set("sigma_v", self.stats.sigma_v);
        kv.set("thresholds", join(self.scheme.thresholds_mm_per_h()));
        kv.set("accumulation_minutes", self.scheme.accumulation_minutes());
        kv.set("use_wind", self.use_wind);
        kv.set("lead_steps", self.lead_steps);
        kv.set("seed", self.seed);
        kv.set("eta", self.eta.map_or_else(|| "none".to_string(), |e| e.to_string()));
        kv.set("H", h);
        kv.set("W", w);
        kv.set("n_samples", self.pool.len());
        kv.set("train_natural", join(&self.train_natural));
        kv.set("train", join(&self.train));
        kv.set("validation", join(&self.validation));
        kv.set("test", join(&self.test));
        let text = kv.render();

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for s in &self.pool {
            out.extend_from_slice(&s.t_last.to_le_bytes());
            for v in &s.input {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(s.target.labels());
            out.extend(s.target.valid().iter().map(|&b| b as u8));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            bail!(Format, "not a PDS1 file");
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + len {
            bail!(Format, "truncated PDS1 header");
        }
        let text = std::str::from_utf8(&bytes[8..8 + len]).map_err(|e| Error::Format(format!("header: {e}")))?;
        let kv = KeyValues::parse(text).map_err(|e| Error::Format(e.to_string()))?;
        let need = |k: &str| kv.get_str(k).ok_or_else(|| Error::Format(format!("PDS1 header missing {k}")));
        fn parse<T: std::str::FromStr>(k: &str, s: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            s.trim().parse().map_err(|e| Error::Format(format!("{k}: {e}")))
        }
        let num = |k: &str| -> Result<f64> { parse(k, need(k)?) };
        let int = |k: &str| -> Result<usize> { parse(k, need(k)?) };
        let list = |k: &str| -> Result<Vec<usize>> { split_list(need(k)?).map(|t| parse(k, t)).collect() };

        let stats = NormStats::new(num("max_crf")?, num("mu_u")?, num("sigma_u")?, num("mu_v")?, num("sigma_v")?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let thresholds =
            split_list(need("thresholds")?).map(|t| parse("thresholds", t)).collect::<Result<Vec<f64>>>()?;
        let scheme =
            ClassScheme::new(thresholds, num("accumulation_minutes")?).map_err(|e| Error::Format(e.to_string()))?;
        let use_wind: bool = parse("use_wind", need("use_wind")?)?;
        let lead_steps = int("lead_steps")?;
        let seed: u64 = parse("seed", need("seed")?)?;
        let eta = match need("eta")? {
            "none" => None,
            e => Some(parse::<f64>("eta", e)?),
        };
        let (h, w, n) = (int("H")?, int("W")?, int("n_samples")?);
        let channels = if use_wind { 36 } else { 12 };
        let m = scheme.n_classes();
        let rec = 8 + 4 * channels * h * w + m * h * w + h * w;
        let body = &bytes[8 + len..];
        if body.len() != rec * n {
            bail!(Format, "PDS1 payload is {} bytes, expected {}", body.len(), rec * n);
        }
        let mut pool = Vec::with_capacity(n);
        for chunk in body.chunks_exact(rec.max(1)).take(n) {
            let t_last = i64::from_le_bytes(chunk[..8].try_into().unwrap());
            let (inp, rest) = chunk[8..].split_at(4 * channels * h * w);
            let input = inp.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let (labels, valid) = rest.split_at(m * h * w);
            let target = ClassMap::new(m, h, w, labels.to_vec(), valid.iter().map(|&b| b != 0).collect())
                .map_err(|e| Error::Format(e.to_string()))?;
            pool.push(Arc::new(SequenceSample { input, channels, height: h, width: w, target, t_last, lead_steps }));
        }
        let ds = Dataset {
            stats,
            scheme,
            use_wind,
            lead_steps,
            seed,
            eta,
            pool,
            train_natural: list("train_natural")?,
            train: list("train")?,
            validation: list("validation")?,
            test: list("test")?,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').filter(|t| !t.trim().is_empty())
}

/// One CSV line per sample in the working split:
/// `split,t_last,lead_steps,positive`. Oversampled duplicates appear once
/// per copy.
pub fn render_sample_manifest(ds: &Dataset) -> String {
    let mut out = String::from("split,t_last,lead_steps,positive\n");
    let split = ds.split();
    for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        for s in part {
            out.push_str(&format!("{name},{},{},{}\n", s.t_last, s.lead_steps, s.is_positive() as u8));
        }
    }
    out
}

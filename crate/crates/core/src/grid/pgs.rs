//! `PGS1` grid-stack files.
//!
//! Layout: the 4-byte magic `PGS1`, a little-endian `u32` header length,
//! a UTF-8 header of `key=value` lines (`variable`, `H`, `W`, `lon0`,
//! `lat0`, `dlon`, `dlat`, `timestamps` as a comma list), then `T*H*W`
//! little-endian `f32` values, time-major then row-major. `NaN` marks
//! missing cells.

use std::io::{Read, Write};
use std::path::Path;

use super::{GridFrame, GridSpec, Variable};
use crate::config::KeyValues;
use crate::error::{bail, Error, Result};

const MAGIC: &[u8; 4] = b"PGS1";

/// A time series of frames of one variable on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    variable: Variable,
    spec: GridSpec,
    timestamps: Vec<i64>,
    values: Vec<f32>,
}

impl GridStack {
    pub fn new(variable: Variable, spec: GridSpec, timestamps: Vec<i64>, values: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        if values.len() != timestamps.len() * spec.len() {
            bail!(
                Shape,
                "stack holds {} values, expected {} frames of {}x{}",
                values.len(),
                timestamps.len(),
                spec.height,
                spec.width
            );
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            bail!(Ingestion, "stack timestamps must be strictly increasing");
        }
        if variable == Variable::Crf && values.iter().any(|v| *v < 0.0) {
            bail!(Contract, "negative rainfall in stack");
        }
        if values.iter().any(|v| v.is_infinite()) {
            bail!(NonFinite, "infinite value in stack");
        }
        Ok(GridStack { variable, spec, timestamps, values })
    }

    pub fn from_frames(frames: &[GridFrame]) -> Result<Self> {
        let Some(first) = frames.first() else {
            bail!(Empty, "cannot build a stack from zero frames");
        };
        let mut values = Vec::with_capacity(frames.len() * first.spec().len());
        let mut timestamps = Vec::with_capacity(frames.len());
        for f in frames {
            if f.spec() != first.spec() || f.variable() != first.variable() {
                bail!(Shape, "frames in a stack must share grid and variable");
            }
            values.extend_from_slice(f.values());
            timestamps.push(f.timestamp());
        }
        GridStack::new(first.variable(), *first.spec(), timestamps, values)
    }

    pub fn variable(&self) -> Variable {
        self.variable
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn frame_values(&self, k: usize) -> &[f32] {
        let n = self.spec.len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn frame(&self, k: usize) -> GridFrame {
        GridFrame::from_parts(self.spec, self.variable, self.timestamps[k], self.frame_values(k).to_vec())
    }

    pub fn frames(&self) -> impl Iterator<Item = GridFrame> + '_ {
        (0..self.len()).map(|k| self.frame(k))
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = KeyValues::new();
        header.set("variable", self.variable);
        header.set("H", self.spec.height);
        header.set("W", self.spec.width);
        header.set("lon0", self.spec.lon0);
        header.set("lat0", self.spec.lat0);
        header.set("dlon", self.spec.dlon);
        header.set("dlat", self.spec.dlat);
        let ts: Vec<String> = self.timestamps.iter().map(i64::to_string).collect();
        header.set("timestamps", ts.join(","));
        let text = header.render();

        let mut out = Vec::with_capacity(8 + text.len() + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            bail!(Format, "not a PGS1 file (magic {:?})", magic);
        }
        let mut len = [0u8; 4];
        read_exact(&mut r, &mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        if r.len() < len {
            bail!(Format, "truncated PGS1 header");
        }
        let (head, body) = r.split_at(len);
        let text = std::str::from_utf8(head).map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
        let kv = KeyValues::parse(text).map_err(|e| Error::Format(e.to_string()))?;
        let need = |k: &str| kv.get_str(k).ok_or_else(|| Error::Format(format!("PGS1 header missing {k}")));
        let num = |k: &str| -> Result<f64> { need(k)?.parse::<f64>().map_err(|e| Error::Format(format!("{k}: {e}"))) };
        let int =
            |k: &str| -> Result<usize> { need(k)?.parse::<usize>().map_err(|e| Error::Format(format!("{k}: {e}"))) };
        let variable: Variable = need("variable")?.parse()?;
        let spec = GridSpec::new(int("H")?, int("W")?, num("lon0")?, num("lat0")?, num("dlon")?, num("dlat")?)?;
        let ts_text = need("timestamps")?;
        let timestamps = if ts_text.is_empty() {
            Vec::new()
        } else {
            ts_text
                .split(',')
                .map(|t| t.trim().parse::<i64>().map_err(|e| Error::Format(format!("timestamp {t:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?
        };
        let expected = timestamps.len() * spec.len() * 4;
        if body.len() != expected {
            bail!(Format, "PGS1 payload is {} bytes, expected {expected}", body.len());
        }
        let values = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        GridStack::new(variable, spec, timestamps, values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format("unexpected end of file".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> GridStack {
        let spec = GridSpec::new(2, 3, -5.25, 47.5, 0.01, 0.01).unwrap();
        let values = vec![0.0, 0.1, f32::NAN, 0.3, 0.4, 0.5, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5];
        GridStack::new(Variable::Crf, spec, vec![1_451_606_400, 1_451_606_700], values).unwrap()
    }

    #[test]
    fn byte_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"PGS1");
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[8..8 + len]).unwrap();
        assert!(header.contains("variable=CRF\n"));
        assert!(header.contains("timestamps=1451606400,1451606700\n"));
        assert_eq!(bytes.len(), 8 + len + 12 * 4);
        // Time-major, row-major payload.
        let first = f32::from_le_bytes(bytes[8 + len + 4..8 + len + 8].try_into().unwrap());
        assert_eq!(first, 0.1);
    }

    #[test]
    fn rejects_bad_files() {
        let mut bytes = sample().to_bytes();
        assert!(matches!(GridStack::from_bytes(b"PGS2xxxx"), Err(Error::Format(_))));
        bytes.pop();
        assert!(matches!(GridStack::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(GridStack::from_bytes(b"PG"), Err(Error::Format(_))));
    }

    #[test]
    fn frames_carry_mask() {
        let s = sample();
        let f = s.frame(0);
        assert_eq!(f.mask(), &[true, true, false, true, true, true]);
        assert_eq!(f.timestamp(), 1_451_606_400);
    }

    proptest! {
        #[test]
        fn round_trip(values in prop::collection::vec(prop_oneof![0.0f32..10.0, Just(f32::NAN)], 12)) {
            let spec = GridSpec::new(3, 2, 1.5, -2.25, 0.025, 0.0125).unwrap();
            let s = GridStack::new(Variable::Crf, spec, vec![0, 300], values).unwrap();
            let back = GridStack::from_bytes(&s.to_bytes()).unwrap();
            prop_assert_eq!(back.spec(), s.spec());
            prop_assert_eq!(back.timestamps(), s.timestamps());
            for (a, b) in s.values().iter().zip(back.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

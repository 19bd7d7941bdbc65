//! The labelled (or unlabelled) example collection shared by every generator
//! and loader, plus its two on-disk forms: a plain `x1,x2,label` CSV for 2-D
//! point sets and a versioned binary cache for arbitrary feature tensors.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Examples stacked along the leading axis of `features`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    /// Binary labels; `None` for populations that are only ever scored by
    /// prediction fractions (noise images, out-of-task classes).
    pub labels: Option<Vec<u8>>,
    /// Per-example loss multipliers, all strictly positive.
    pub weights: Vec<f64>,
    /// Original class id of each example, when it came from a multi-class source.
    pub sources: Option<Vec<u8>>,
    pub split: Split,
    /// Generator or loader name with every parameter and seed needed to rebuild it.
    pub provenance: String,
}

impl Dataset {
    pub fn labeled(
        features: Tensor,
        labels: Vec<u8>,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let ds = Dataset {
            weights: vec![1.0; labels.len()],
            features,
            labels: Some(labels),
            sources: None,
            split,
            provenance: provenance.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn unlabeled(features: Tensor, split: Split, provenance: impl Into<String>) -> Result<Self> {
        let n = features.shape().first().copied().unwrap_or(0);
        let ds = Dataset {
            features,
            labels: None,
            weights: vec![1.0; n],
            sources: None,
            split,
            provenance: provenance.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.features.rank() == 0 {
            return Err(Error::contract("dataset features need a leading example axis"));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::contract(format!(
                    "{} labels for {n} examples",
                    labels.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(Error::contract(format!("label {bad} outside {{0, 1}}")));
            }
        }
        if self.weights.len() != n {
            return Err(Error::contract(format!(
                "{} weights for {n} examples",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::contract("example weights must be finite and > 0"));
        }
        if let Some(s) = &self.sources {
            if s.len() != n {
                return Err(Error::contract("source ids do not match example count"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape of one example.
    pub fn example_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn labels(&self) -> Result<&[u8]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::contract(format!("dataset '{}' is unlabeled", self.provenance)))
    }

    /// `(negatives, positives)`.
    pub fn class_counts(&self) -> Result<(usize, usize)> {
        let labels = self.labels()?;
        let pos = labels.iter().filter(|&&l| l == 1).count();
        Ok((labels.len() - pos, pos))
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = weights;
        self.validate()?;
        Ok(self)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], provenance: impl Into<String>) -> Result<Self> {
        let pick = |v: &Vec<u8>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(Dataset {
            features: self.features.gather_rows(indices)?,
            labels: self.labels.as_ref().map(pick),
            weights: indices.iter().map(|&i| self.weights[i]).collect(),
            sources: self.sources.as_ref().map(pick),
            split: self.split,
            provenance: provenance.into(),
        })
    }

    /// Writes `x1,x2,label` rows for a labelled 2-D dataset. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_points_csv<W: Write>(&self, out: W) -> Result<()> {
        if self.example_shape() != [2] {
            return Err(Error::contract("points CSV needs 2-D features"));
        }
        let labels = self.labels()?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1", "x2", "label"]).map_err(csv_err)?;
        for (row, label) in self.features.data().chunks(2).zip(labels) {
            w.write_record([row[0].to_string(), row[1].to_string(), label.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Binary cache: see `docs/formats.md`.
    pub fn write_cache<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&(self.features.rank() as u32).to_le_bytes())?;
        for &d in self.features.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let flags = u8::from(self.labels.is_some()) | (u8::from(self.sources.is_some()) << 1);
        out.write_all(&[flags])?;
        for v in self.features.data() {
            out.write_all(&v.to_le_bytes())?;
        }
        if let Some(l) = &self.labels {
            out.write_all(l)?;
        }
        if let Some(s) = &self.sources {
            out.write_all(s)?;
        }
        for w in &self.weights {
            out.write_all(&w.to_le_bytes())?;
        }
        out.write_all(&[u8::from(self.split == Split::Test)])?;
        let prov = self.provenance.as_bytes();
        out.write_all(&(prov.len() as u32).to_le_bytes())?;
        out.write_all(prov)?;
        Ok(())
    }

    pub fn read_cache<R: Read>(input: R) -> Result<Self> {
        let mut r = CountingReader { inner: input, offset: 0 };
        let magic: [u8; 4] = r.array()?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: "not a dataset cache (bad magic)".into(),
            });
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != CACHE_VERSION {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported cache version {version}"),
            });
        }
        let rank = u32::from_le_bytes(r.array()?) as usize;
        let shape = (0..rank)
            .map(|_| r.array().map(|b| u64::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let [flags] = r.array()?;
        let numel: usize = shape.iter().product();
        let n = shape.first().copied().unwrap_or(0);
        let data = (0..numel)
            .map(|_| r.array().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let labels = (flags & 1 != 0).then(|| r.bytes(n)).transpose()?;
        let sources = (flags & 2 != 0).then(|| r.bytes(n)).transpose()?;
        let weights = (0..n)
            .map(|_| r.array().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let [split] = r.array()?;
        let plen = u32::from_le_bytes(r.array()?) as usize;
        let at = r.offset;
        let provenance = String::from_utf8(r.bytes(plen)?).map_err(|_| Error::Format {
            offset: at,
            reason: "provenance is not UTF-8".into(),
        })?;
        let ds = Dataset {
            features: Tensor::new(shape, data)?,
            labels,
            weights,
            sources,
            split: if split == 1 { Split::Test } else { Split::Train },
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }
}

const CACHE_MAGIC: &[u8; 4] = b"IWDS";
const CACHE_VERSION: u32 = 1;

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format {
                offset: self.offset,
                reason: "truncated dataset cache".into(),
            },
            _ => Error::Io(e),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            offset: 0,
            reason: format!("{other:?}"),
        },
    }
}

/// Reads an `x1,x2,label` CSV (header required) into points and labels.
pub fn read_points_csv<R: Read>(input: R) -> Result<(Vec<[f64; 2]>, Vec<u8>)> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["x1", "x2", "label"] {
        return Err(Error::Format {
            offset: 0,
            reason: format!("expected header x1,x2,label, found {headers:?}"),
        });
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let offset = record.position().map_or(0, |p| p.byte());
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let bad = |what: &str| Error::Format {
            offset,
            reason: format!("cannot parse {what} in {record:?}"),
        };
        let x1: f64 = field(0).parse().map_err(|_| bad("x1"))?;
        let x2: f64 = field(1).parse().map_err(|_| bad("x2"))?;
        let label: u8 = field(2).parse().map_err(|_| bad("label"))?;
        if label > 1 {
            return Err(bad("label (must be 0 or 1)"));
        }
        points.push([x1, x2]);
        labels.push(label);
    }
    Ok((points, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let f = Tensor::new(vec![3, 2], vec![0.1, -2.5, 1e-17, 3.0, 7.25, 1.0 / 3.0]).unwrap();
        Dataset::labeled(f, vec![1, 0, 1], Split::Train, "sample(seed=1)").unwrap()
    }

    #[test]
    fn points_csv_round_trips_bitwise() {
        let ds = sample();
        let mut buf = Vec::new();
        ds.write_points_csv(&mut buf).unwrap();
        let (points, labels) = read_points_csv(buf.as_slice()).unwrap();
        assert_eq!(labels, vec![1, 0, 1]);
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        assert_eq!(flat, ds.features.data());
    }

    #[test]
    fn cache_round_trips() {
        let mut ds = sample().with_weights(vec![1.0, 2.5, 4.0]).unwrap();
        ds.sources = Some(vec![3, 5, 3]);
        let mut buf = Vec::new();
        ds.write_cache(&mut buf).unwrap();
        assert_eq!(Dataset::read_cache(buf.as_slice()).unwrap(), ds);
        let err = Dataset::read_cache(&buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn rejects_non_binary_labels_and_bad_weights() {
        let f = Tensor::zeros(vec![2, 2]);
        assert!(Dataset::labeled(f.clone(), vec![0, 2], Split::Train, "x").is_err());
        let ds = Dataset::labeled(f, vec![0, 1], Split::Train, "x").unwrap();
        assert!(ds.with_weights(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn subset_keeps_order_and_values() {
        let ds = sample();
        let s = ds.subset(&[2, 0], "sub").unwrap();
        assert_eq!(s.labels().unwrap(), &[1, 1]);
        assert_eq!(s.features.data(), &[7.25, 1.0 / 3.0, 0.1, -2.5]);
    }

    #[test]
    fn csv_header_is_checked() {
        let err = read_points_csv("a,b,c\n1,2,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}

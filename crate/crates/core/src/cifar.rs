//! CIFAR-10 binary batches and the binary tasks built from them.
//!
//! Wire format: records of 3073 bytes, one label byte (0..10) followed by
//! 3072 pixel bytes stored channel-planar (1024 red, 1024 green, 1024 blue),
//! each plane row-major 32×32.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::rng;

pub const SIDE: usize = 32;
pub const PIXELS: usize = 3 * SIDE * SIDE;
pub const RECORD_LEN: usize = PIXELS + 1;

pub const CLASS_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];
pub const CAT: u8 = 3;
pub const DOG: u8 = 5;
pub const AUTOMOBILE: u8 = 1;
pub const TRUCK: u8 = 9;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";
/// Environment variable naming the directory that holds the batch files.
pub const DATA_DIR_ENV: &str = "IWSHIFT_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/cifar-10-batches-bin";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub pixels: Vec<u8>,
}

pub fn class_index(name: &str) -> Result<u8> {
    CLASS_NAMES
        .iter()
        .position(|&c| c == name || (name == "car" && c == "automobile"))
        .map(|i| i as u8)
        .ok_or_else(|| Error::config(format!("unknown CIFAR-10 class `{name}`")))
}

pub fn parse_records(bytes: &[u8]) -> Result<Vec<CifarRecord>> {
    let whole = bytes.len() / RECORD_LEN * RECORD_LEN;
    if whole != bytes.len() {
        return Err(Error::Format {
            offset: whole as u64,
            reason: format!(
                "truncated record: {} trailing bytes, records are {RECORD_LEN} bytes",
                bytes.len() - whole
            ),
        });
    }
    bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] >= 10 {
                return Err(Error::Format {
                    offset: (i * RECORD_LEN) as u64,
                    reason: format!("label {} outside 0..10", rec[0]),
                });
            }
            Ok(CifarRecord {
                label: rec[0],
                pixels: rec[1..].to_vec(),
            })
        })
        .collect()
}

pub fn read_batch_file(path: &Path) -> Result<Vec<CifarRecord>> {
    parse_records(&fs::read(path)?)
}

pub fn write_records<W: Write>(records: &[CifarRecord], mut out: W) -> Result<()> {
    for r in records {
        if r.label >= 10 || r.pixels.len() != PIXELS {
            return Err(Error::contract("malformed CIFAR record"));
        }
        out.write_all(&[r.label])?;
        out.write_all(&r.pixels)?;
    }
    Ok(())
}

/// Directory from `IWSHIFT_DATA_DIR`, else the default relative path.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

pub fn has_data(dir: &Path) -> bool {
    TRAIN_FILES
        .iter()
        .chain([&TEST_FILE])
        .all(|f| dir.join(f).is_file())
}

/// All records of one split, in file order.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<CifarRecord>> {
    if !has_data(dir) {
        return Err(Error::Config(format!(
            "CIFAR-10 binary batches not found in {}; run `iwshift fetch-cifar {}` \
             or point {DATA_DIR_ENV} at an extracted cifar-10-batches-bin directory",
            dir.display(),
            dir.parent().unwrap_or(Path::new(".")).display()
        )));
    }
    match split {
        Split::Test => read_batch_file(&dir.join(TEST_FILE)),
        Split::Train => {
            let mut all = Vec::with_capacity(50_000);
            for f in TRAIN_FILES {
                all.extend(read_batch_file(&dir.join(f))?);
            }
            Ok(all)
        }
    }
}

/// Pixels as `[N, 3, side, side]` in `[0, 1]`.
fn to_features(records: &[&CifarRecord], prep: Preprocess) -> Result<Tensor> {
    let side = prep.output_side();
    let mut data = Vec::with_capacity(records.len() * 3 * side * side);
    for r in records {
        prep.apply(&r.pixels, &mut data);
    }
    Tensor::new(vec![records.len(), 3, side, side], data)
}

/// Image preparation applied before training: divide by 255, optionally
/// centre-crop to `crop` then area-average down to `side`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Preprocess {
    Full,
    CropResize { crop: usize, side: usize },
}

impl Preprocess {
    pub const DESK: Preprocess = Preprocess::CropResize { crop: 24, side: 16 };

    pub fn output_side(self) -> usize {
        match self {
            Preprocess::Full => SIDE,
            Preprocess::CropResize { side, .. } => side,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Preprocess::Full => Ok(()),
            Preprocess::CropResize { crop, side } => {
                if crop == 0 || crop > SIDE || side == 0 || side > crop {
                    Err(Error::config(format!(
                        "crop {crop} / side {side} must satisfy 0 < side <= crop <= {SIDE}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn describe(self) -> String {
        match self {
            Preprocess::Full => "x/255, 32x32".into(),
            Preprocess::CropResize { crop, side } => {
                format!("x/255, centre crop {crop}x{crop}, area-average to {side}x{side}")
            }
        }
    }

    fn apply(self, pixels: &[u8], out: &mut Vec<f64>) {
        match self {
            Preprocess::Full => out.extend(pixels.iter().map(|&p| f64::from(p) / 255.0)),
            Preprocess::CropResize { crop, side } => {
                let start = (SIDE - crop) / 2;
                let scale = crop as f64 / side as f64;
                for c in 0..3 {
                    let plane = &pixels[c * SIDE * SIDE..(c + 1) * SIDE * SIDE];
                    for oy in 0..side {
                        let (y0, y1) = (oy as f64 * scale, (oy + 1) as f64 * scale);
                        for ox in 0..side {
                            let (x0, x1) = (ox as f64 * scale, (ox + 1) as f64 * scale);
                            let mut acc = 0.0;
                            for iy in y0.floor() as usize..(y1.ceil() as usize).min(crop) {
                                let wy = overlap(iy, y0, y1);
                                for ix in x0.floor() as usize..(x1.ceil() as usize).min(crop) {
                                    let wx = overlap(ix, x0, x1);
                                    let p = plane[(start + iy) * SIDE + start + ix];
                                    acc += wy * wx * f64::from(p);
                                }
                            }
                            out.push(acc / (scale * scale) / 255.0);
                        }
                    }
                }
            }
        }
    }
}

/// Length of `[i, i+1) ∩ [a, b)`.
fn overlap(i: usize, a: f64, b: f64) -> f64 {
    let (lo, hi) = (i as f64, (i + 1) as f64);
    (hi.min(b) - lo.max(a)).max(0.0)
}

/// Binary dataset of two classes; label 1 marks `class_b`.
pub fn select_pair(
    records: &[CifarRecord],
    class_a: u8,
    class_b: u8,
    split: Split,
    prep: Preprocess,
) -> Result<Dataset> {
    if class_a == class_b {
        return Err(Error::config("select_pair needs two distinct classes"));
    }
    prep.validate()?;
    let chosen: Vec<&CifarRecord> = records
        .iter()
        .filter(|r| r.label == class_a || r.label == class_b)
        .collect();
    if chosen.is_empty() {
        return Err(Error::config(format!(
            "no records of class {class_a} or {class_b}"
        )));
    }
    let labels = chosen.iter().map(|r| u8::from(r.label == class_b)).collect();
    let sources = chosen.iter().map(|r| r.label).collect();
    let mut ds = Dataset::labeled(
        to_features(&chosen, prep)?,
        labels,
        split,
        format!(
            "cifar-pair({}, {}; {}; split={})",
            CLASS_NAMES[class_a as usize],
            CLASS_NAMES[class_b as usize],
            prep.describe(),
            split.as_str()
        ),
    )?;
    ds.sources = Some(sources);
    Ok(ds)
}

/// Unlabeled population of every record whose class is not excluded.
pub fn select_others(
    records: &[CifarRecord],
    excluded: &[u8],
    split: Split,
    prep: Preprocess,
) -> Result<Dataset> {
    prep.validate()?;
    let chosen: Vec<&CifarRecord> = records
        .iter()
        .filter(|r| !excluded.contains(&r.label))
        .collect();
    if chosen.is_empty() {
        return Err(Error::config("no records outside the excluded classes"));
    }
    let mut ds = Dataset::unlabeled(
        to_features(&chosen, prep)?,
        split,
        format!("cifar-others(excluding {excluded:?}; {}; split={})", prep.describe(), split.as_str()),
    )?;
    ds.sources = Some(chosen.iter().map(|r| r.label).collect());
    Ok(ds)
}

/// Keeps `limit` uniformly chosen records of each class present, in file order.
pub fn limit_per_class(records: &[CifarRecord], limit: usize, seed: u64) -> Vec<CifarRecord> {
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    let mut rng = rng::stream(seed, "data-subsample");
    let mut keep = vec![false; records.len()];
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        idx.iter().take(limit).for_each(|&i| keep[i] = true);
    }
    records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect()
}

/// Source classes grouped into two binary targets with a sampling ratio per
/// source class.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskMap {
    /// `(source class, binary target, ratio)`.
    pub entries: Vec<(u8, u8, u32)>,
}

impl TaskMap {
    /// Animal (cat, dog) → 0, vehicle (automobile, truck) → 1, with the
    /// given within-superclass ratios.
    pub fn animal_vehicle(cat_dog: (u32, u32), car_truck: (u32, u32)) -> TaskMap {
        TaskMap {
            entries: vec![
                (CAT, 0, cat_dog.0),
                (DOG, 0, cat_dog.1),
                (AUTOMOBILE, 1, car_truck.0),
                (TRUCK, 1, car_truck.1),
            ],
        }
    }

    pub fn balanced(&self) -> TaskMap {
        TaskMap {
            entries: self.entries.iter().map(|&(s, t, _)| (s, t, 1)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 10];
        for &(s, t, r) in &self.entries {
            if s >= 10 || t > 1 || r == 0 {
                return Err(Error::config(format!("bad task map entry ({s}, {t}, {r})")));
            }
            if std::mem::replace(&mut seen[s as usize], true) {
                return Err(Error::config(format!("source class {s} mapped twice")));
            }
        }
        for t in 0..2 {
            if !self.entries.iter().any(|e| e.1 == t) {
                return Err(Error::config(format!("binary target {t} has no source class")));
            }
        }
        Ok(())
    }

    fn target_of(&self, source: u8) -> Option<(u8, u32)> {
        self.entries
            .iter()
            .find(|e| e.0 == source)
            .map(|&(_, t, r)| (t, r))
    }

    pub fn describe(&self) -> String {
        self.entries
            .iter()
            .map(|&(s, t, r)| format!("{}->{t}@{r}", CLASS_NAMES[s as usize]))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Binary superclass dataset. Within each target, the source with the largest
/// ratio keeps all its records and every other source keeps
/// `floor(n_top · r_s / r_top)` uniformly drawn records.
pub fn remap_superclass(
    records: &[CifarRecord],
    map: &TaskMap,
    split: Split,
    prep: Preprocess,
    seed: u64,
) -> Result<Dataset> {
    map.validate()?;
    prep.validate()?;
    let mut by_source: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if map.target_of(r.label).is_some() {
            by_source.entry(r.label).or_default().push(i);
        }
    }
    for &(s, _, _) in &map.entries {
        if !by_source.contains_key(&s) {
            return Err(Error::config(format!(
                "source class {} has no records",
                CLASS_NAMES[s as usize]
            )));
        }
    }
    let mut rng = rng::stream(seed, "data-subsample");
    let mut keep = vec![false; records.len()];
    for target in 0..2u8 {
        let members: Vec<(u8, u32)> = map
            .entries
            .iter()
            .filter(|e| e.1 == target)
            .map(|&(s, _, r)| (s, r))
            .collect();
        let &(top_source, top_ratio) = members
            .iter()
            .max_by_key(|&&(s, r)| (r, std::cmp::Reverse(s)))
            .expect("validated");
        let n_top = by_source[&top_source].len() as u64;
        for &(s, r) in &members {
            let idx = by_source.get_mut(&s).expect("checked");
            let want = (n_top * u64::from(r) / u64::from(top_ratio)) as usize;
            if want > idx.len() || want == 0 {
                return Err(Error::config(format!(
                    "{} needs {want} records, {} available",
                    CLASS_NAMES[s as usize],
                    idx.len()
                )));
            }
            if want < idx.len() {
                idx.shuffle(&mut rng);
            }
            idx.iter().take(want).for_each(|&i| keep[i] = true);
        }
    }
    let chosen: Vec<&CifarRecord> = records
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(r, _)| r)
        .collect();
    let labels = chosen
        .iter()
        .map(|r| map.target_of(r.label).expect("filtered").0)
        .collect();
    let mut ds = Dataset::labeled(
        to_features(&chosen, prep)?,
        labels,
        split,
        format!(
            "cifar-superclass({}; {}; seed={seed}; split={})",
            map.describe(),
            prep.describe(),
            split.as_str()
        ),
    )?;
    ds.sources = Some(chosen.iter().map(|r| r.label).collect());
    Ok(ds)
}

/// Per-example weights `p_test(s | y) / p_train(s | y)` for source class `s`
/// within binary target `y`, from the actual counts of both datasets, then
/// scaled so the smallest weight is 1.
pub fn covariate_weights(train: &Dataset, test: &Dataset) -> Result<Vec<f64>> {
    let proportions = |ds: &Dataset| -> Result<BTreeMap<(u8, u8), f64>> {
        let sources = ds
            .sources
            .as_ref()
            .ok_or_else(|| Error::contract("covariate weights need source classes"))?;
        let labels = ds.labels()?;
        let mut counts: BTreeMap<(u8, u8), usize> = BTreeMap::new();
        let mut totals = [0usize; 2];
        for (&y, &s) in labels.iter().zip(sources) {
            *counts.entry((y, s)).or_default() += 1;
            totals[usize::from(y)] += 1;
        }
        Ok(counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / totals[usize::from(k.0)] as f64))
            .collect())
    };
    let p_train = proportions(train)?;
    let p_test = proportions(test)?;
    let mut raw = Vec::with_capacity(train.len());
    for (&y, &s) in train.labels()?.iter().zip(train.sources.as_ref().expect("checked")) {
        let q = p_train[&(y, s)];
        let p = p_test.get(&(y, s)).copied().unwrap_or(0.0);
        raw.push(p / q);
    }
    for (k, _) in p_test.iter() {
        if !p_train.contains_key(k) {
            return Err(Error::config(format!(
                "source class {} has zero training proportion",
                CLASS_NAMES[k.1 as usize]
            )));
        }
    }
    let min = raw.iter().copied().filter(|w| *w > 0.0).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::config("no training example has positive test proportion"));
    }
    Ok(raw.into_iter().map(|w| w / min).collect())
}

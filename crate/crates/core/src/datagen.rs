//! Deterministic synthetic data: the separable Gaussian pair, two moons,
//! ratio subsampling, and uniform-noise images.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Normal, StandardNormal};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SeparablePairSpec {
    pub n_per_class: usize,
    pub truncation_radius: f64,
    /// Radians, counter-clockwise about the origin.
    pub rotation: f64,
    pub translation: [f64; 2],
    pub seed: u64,
}

impl Default for SeparablePairSpec {
    fn default() -> Self {
        SeparablePairSpec {
            n_per_class: 512,
            truncation_radius: 2.0,
            rotation: PI / 4.0,
            translation: [6.0, 0.0],
            seed: 0,
        }
    }
}

impl SeparablePairSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::config("separable pair needs at least one point per class"));
        }
        if !(self.truncation_radius > 0.0 && self.truncation_radius.is_finite()) {
            return Err(Error::config("truncation radius must be positive"));
        }
        let shift = self.translation[0].hypot(self.translation[1]);
        if shift <= 2.0 * self.truncation_radius {
            return Err(Error::config(format!(
                "translation length {shift} must exceed twice the truncation radius {}: \
                 the two discs would overlap",
                self.truncation_radius
            )));
        }
        Ok(())
    }

    fn provenance(&self, split: Split) -> String {
        format!(
            "separable(n_per_class={}, radius={}, rotation={}, translation=({}, {}), seed={}, split={})",
            self.n_per_class,
            self.truncation_radius,
            self.rotation,
            self.translation[0],
            self.translation[1],
            self.seed,
            split.as_str()
        )
    }
}

/// Positives (label 1) are standard bivariate normals rejected outside the
/// truncation radius; negatives (label 0) are those same points rotated about
/// the origin and then translated. Positives come first.
pub fn gen_separable(spec: &SeparablePairSpec, split: Split) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, &format!("separable-{}", split.as_str()));
    let r2 = spec.truncation_radius * spec.truncation_radius;
    let mut positives = Vec::with_capacity(spec.n_per_class);
    while positives.len() < spec.n_per_class {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        if x * x + y * y <= r2 {
            positives.push([x, y]);
        }
    }
    let (s, c) = spec.rotation.sin_cos();
    let [tx, ty] = spec.translation;
    let negatives = positives
        .iter()
        .map(|&[x, y]| [c * x - s * y + tx, s * x + c * y + ty]);
    let data: Vec<f64> = positives.iter().copied().chain(negatives).flatten().collect();
    let mut labels = vec![1u8; spec.n_per_class];
    labels.extend(std::iter::repeat_n(0u8, spec.n_per_class));
    Dataset::labeled(
        Tensor::new(vec![2 * spec.n_per_class, 2], data)?,
        labels,
        split,
        spec.provenance(split),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoonsSpec {
    pub n_total: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for MoonsSpec {
    fn default() -> Self {
        MoonsSpec {
            n_total: 1024,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

/// Two interleaving unit half-circles. Label 0 lies on the upper arc
/// `(cos t, sin t)`, label 1 on the lower arc `(1 - cos t, 0.5 - sin t)`,
/// `t` evenly spaced over `[0, pi]`, each coordinate then perturbed by
/// `N(0, noise_sigma^2)`. Train and test draw from independent streams.
pub fn gen_moons(spec: &MoonsSpec, split: Split) -> Result<Dataset> {
    if spec.n_total == 0 || spec.n_total % 2 != 0 {
        return Err(Error::config(format!(
            "moons needs a positive even sample count, got {}",
            spec.n_total
        )));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::config("moons noise must be non-negative"));
    }
    let half = spec.n_total / 2;
    let mut rng = rng::stream(spec.seed, &format!("moons-{}", split.as_str()));
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
    let angle = |i: usize| {
        if half == 1 {
            0.0
        } else {
            PI * i as f64 / (half - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(spec.n_total * 2);
    let mut labels = Vec::with_capacity(spec.n_total);
    for i in 0..half {
        let t = angle(i);
        data.extend([t.cos(), t.sin()]);
        labels.push(0);
    }
    for i in 0..half {
        let t = angle(i);
        data.extend([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    if spec.noise_sigma > 0.0 {
        data.iter_mut().for_each(|v| *v += rng.sample(noise));
    }
    Dataset::labeled(
        Tensor::new(vec![spec.n_total, 2], data)?,
        labels,
        split,
        format!(
            "moons(n={}, noise={}, seed={}, split={})",
            spec.n_total,
            spec.noise_sigma,
            spec.seed,
            split.as_str()
        ),
    )
}

/// Keeps every example of the class with the larger ratio component and a
/// uniformly drawn subset of `floor(n_major * min(r) / max(r))` examples of
/// the other, preserving original order.
pub fn subsample_ratio(ds: &Dataset, r_pos: u32, r_neg: u32, seed: u64) -> Result<Dataset> {
    if r_pos == 0 || r_neg == 0 {
        return Err(Error::config("ratio components must be positive"));
    }
    let labels = ds.labels()?;
    let provenance = format!("{} | subsample(ratio={r_pos}:{r_neg}, seed={seed})", ds.provenance);
    if r_pos == r_neg {
        let all: Vec<usize> = (0..ds.len()).collect();
        return ds.subset(&all, provenance);
    }
    let (major, r_max, r_min) = if r_pos > r_neg {
        (1u8, r_pos, r_neg)
    } else {
        (0u8, r_neg, r_pos)
    };
    let n_major = labels.iter().filter(|&&l| l == major).count();
    let mut minority: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != major).collect();
    let keep = (n_major as u64 * u64::from(r_min) / u64::from(r_max)) as usize;
    if keep == 0 || keep > minority.len() {
        return Err(Error::config(format!(
            "ratio {r_pos}:{r_neg} needs {keep} minority examples, {} available",
            minority.len()
        )));
    }
    minority.shuffle(&mut rng::stream(seed, "subsample"));
    minority.truncate(keep);
    let mut chosen = vec![false; labels.len()];
    minority.iter().for_each(|&i| chosen[i] = true);
    let indices: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == major || chosen[i])
        .collect();
    ds.subset(&indices, provenance)
}

/// `n` images of i.i.d. uniform bytes, scaled by 1/255 like CIFAR pixels.
pub fn gen_noise_images(n: usize, shape: [usize; 3], seed: u64) -> Result<Dataset> {
    let mut rng = rng::stream(seed, "noise-images");
    let len = n * shape.iter().product::<usize>();
    let data = (0..len).map(|_| f64::from(rng.random::<u8>()) / 255.0).collect();
    Dataset::unlabeled(
        Tensor::new(vec![n, shape[0], shape[1], shape[2]], data)?,
        Split::Test,
        format!("noise-images(n={n}, shape={shape:?}, seed={seed})"),
    )
}

//! Experiment configuration files and their resolution into concrete runs.

use std::path::{Path, PathBuf};

use iwshift_core::cifar::{self, Preprocess};
use iwshift_core::nets::{CnnShape, ModelSpec};
use iwshift_core::optim::{weights_from_ratio, ClassWeights};
use iwshift_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[serde(rename = "separable-2d")]
    Separable2d,
    Moons,
    MoonsImbalanced,
    CifarBinary,
    CifarImbalanced,
    CovariateShift,
}

impl Scenario {
    pub fn is_2d(self) -> bool {
        matches!(self, Scenario::Separable2d | Scenario::Moons | Scenario::MoonsImbalanced)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Separable2d => "separable-2d",
            Scenario::Moons => "moons",
            Scenario::MoonsImbalanced => "moons-imbalanced",
            Scenario::CifarBinary => "cifar-binary",
            Scenario::CifarImbalanced => "cifar-imbalanced",
            Scenario::CovariateShift => "covariate-shift",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Lr,
    Mlp64,
    PaperCnn,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    #[default]
    Full,
    Desk,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Full => "full",
            Scale::Desk => "desk",
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            _ => Err(Error::Config(format!("scale must be `full` or `desk`, got `{s}`"))),
        }
    }
}

/// A number, or `"auto"` for `0.01 / sigma_max(X)` of the training features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearningRate {
    Fixed(f64),
    Rule(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: LearningRate,
    pub batch_size: usize,
    /// Defaults to 0 for 2-D scenarios and 0.9 for image scenarios.
    pub momentum: Option<f64>,
    /// Budget in minibatch updates; exclusive with `epochs`.
    pub steps: Option<usize>,
    /// Budget in passes over the training set; exclusive with `steps`.
    pub epochs: Option<usize>,
    /// Evaluation points, in the unit of the budget.
    pub checkpoints: Vec<usize>,
}

/// Scenario data parameters; unset fields take the scenario defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub seed: Option<u64>,
    pub n_per_class: Option<usize>,
    pub truncation_radius: Option<f64>,
    pub rotation: Option<f64>,
    pub translation: Option<[f64; 2]>,
    pub n_total: Option<usize>,
    pub noise: Option<f64>,
    /// Training class ratio `pos:neg` for the imbalanced scenarios.
    pub ratio: Option<String>,
    pub class_a: Option<String>,
    pub class_b: Option<String>,
    /// Training records kept per CIFAR class.
    pub per_class: Option<usize>,
    /// Test records kept per CIFAR class in every evaluation population.
    pub test_per_class: Option<usize>,
    pub noise_images: Option<usize>,
    /// Within-superclass training ratios for the covariate-shift conditions.
    pub shift_ratios: Option<Vec<String>>,
    pub crop: Option<usize>,
    pub side: Option<usize>,
}

/// Replacements applied when running at desk scale.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskSection {
    pub weight_sweep: Option<Vec<String>>,
    pub steps: Option<usize>,
    pub epochs: Option<usize>,
    pub checkpoints: Option<Vec<usize>>,
    pub per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub noise_images: Option<usize>,
    pub crop: Option<usize>,
    pub side: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// When 2-D decision grids are written, in the unit of the budget.
    pub checkpoints: Vec<usize>,
    /// `[x_min, x_max, y_min, y_max]`; defaults to the padded data extent.
    pub bounds: Option<[f64; 4]>,
    pub resolution: [usize; 2],
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            checkpoints: vec![1, 10, 100, 1000, 10000],
            bounds: None,
            resolution: [100, 100],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    pub model: ModelKind,
    #[serde(default)]
    pub weight_sweep: Vec<String>,
    /// `"none"`, `"l2:<lambda>"` or `"dropout:<rate>"`.
    #[serde(default = "no_regularization")]
    pub regularization: String,
    pub train: TrainSection,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub scale: Scale,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub desk: DeskSection,
    #[serde(default)]
    pub grid: GridSection,
}

fn no_regularization() -> String {
    "none".into()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses `"a:b"` into two positive integers.
pub fn parse_ratio(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::Config(format!("expected a ratio like `4:1`, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b == 0 {
        return Err(bad());
    }
    Ok((a, b))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularization {
    None,
    L2(f64),
    Dropout(f64),
}

impl Regularization {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("regularization must be none, l2:<lambda> or dropout:<rate>, got `{s}`"));
        if s == "none" {
            return Ok(Regularization::None);
        }
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let v: f64 = value.trim().parse().map_err(|_| bad())?;
        match kind.trim() {
            "l2" if v >= 0.0 && v.is_finite() => Ok(Regularization::L2(v)),
            "dropout" if (0.0..1.0).contains(&v) => Ok(Regularization::Dropout(v)),
            _ => Err(bad()),
        }
    }

    pub fn l2(self) -> f64 {
        match self {
            Regularization::L2(v) => v,
            _ => 0.0,
        }
    }

    pub fn dropout(self) -> Option<f64> {
        match self {
            Regularization::Dropout(v) => Some(v),
            _ => None,
        }
    }
}

/// One entry of the weight sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSetting {
    /// As written in the config, used in file names and CSV rows.
    pub label: String,
    pub weights: ClassWeights,
}

/// Everything a run needs, with scale overrides and defaults applied.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub regularization: Regularization,
    pub model: ModelSpec,
    pub weights: Vec<WeightSetting>,
    pub learning_rate: LearningRate,
    pub batch_size: usize,
    pub momentum: f64,
    pub budget: Budget,
    pub checkpoints: Vec<usize>,
    pub data: DataParams,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Budget {
    Steps(usize),
    Epochs(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataParams {
    pub seed: u64,
    pub n_per_class: usize,
    pub truncation_radius: f64,
    pub rotation: f64,
    pub translation: [f64; 2],
    pub n_total: usize,
    pub noise: f64,
    pub ratio: Option<(u32, u32)>,
    pub class_a: u8,
    pub class_b: u8,
    pub per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub noise_images: usize,
    pub shift_ratios: Vec<(u32, u32)>,
    pub preprocess: Preprocess,
}

impl Resolved {
    /// Weight settings, or no-shift plus a weighted and an unweighted
    /// condition per shift ratio.
    pub fn condition_count(&self) -> usize {
        if self.config.scenario == Scenario::CovariateShift {
            1 + 2 * self.data.shift_ratios.len()
        } else {
            self.weights.len()
        }
    }
}

impl ExperimentConfig {
    /// Validates and applies defaults and, at desk scale, the desk overrides.
    pub fn resolve(&self) -> Result<Resolved> {
        let sc = self.scenario;
        let image = !sc.is_2d();
        match (self.model, image) {
            (ModelKind::PaperCnn, false) => {
                return Err(Error::Config(format!("paper-cnn needs an image scenario, not {}", sc.as_str())))
            }
            (ModelKind::Lr | ModelKind::Mlp64, true) => {
                return Err(Error::Config(format!("{} runs on 2-D scenarios only", model_name(self.model))))
            }
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        let regularization = Regularization::parse(&self.regularization)?;
        if regularization.dropout().is_some() && self.model == ModelKind::Lr {
            return Err(Error::Config("dropout needs a model with hidden layers".into()));
        }

        let desk = self.scale == Scale::Desk;
        let d = &self.data;
        let ds = &self.desk;
        let pick = |full: Option<usize>, desk_v: Option<usize>| if desk { desk_v.or(full) } else { full };

        let ratio = d.ratio.as_deref().map(parse_ratio).transpose()?;
        if matches!(sc, Scenario::MoonsImbalanced | Scenario::CifarImbalanced) && ratio.is_none() {
            return Err(Error::Config(format!("{} needs data.ratio", sc.as_str())));
        }
        let shift_ratios = match &d.shift_ratios {
            Some(v) => v.iter().map(|s| parse_ratio(s)).collect::<Result<Vec<_>>>()?,
            None => vec![(4, 1), (8, 1)],
        };
        if sc == Scenario::CovariateShift && shift_ratios.is_empty() {
            return Err(Error::Config("shift_ratios must not be empty".into()));
        }
        let crop = pick(d.crop, ds.crop.or(Some(24)));
        let side = pick(d.side, ds.side.or(Some(16)));
        let preprocess = match (crop, side) {
            (Some(crop), Some(side)) if crop != 32 || side != 32 => Preprocess::CropResize { crop, side },
            _ => Preprocess::Full,
        };
        preprocess.validate()?;
        let data = DataParams {
            seed: d.seed.unwrap_or(0),
            n_per_class: d.n_per_class.unwrap_or(512),
            truncation_radius: d.truncation_radius.unwrap_or(2.0),
            rotation: d.rotation.unwrap_or(std::f64::consts::FRAC_PI_4),
            translation: d.translation.unwrap_or([6.0, 0.0]),
            n_total: d.n_total.unwrap_or(1024),
            noise: d.noise.unwrap_or(0.1),
            ratio,
            class_a: cifar::class_index(d.class_a.as_deref().unwrap_or("cat"))?,
            class_b: cifar::class_index(d.class_b.as_deref().unwrap_or("dog"))?,
            per_class: pick(d.per_class, ds.per_class.or(Some(500))),
            test_per_class: pick(d.test_per_class, ds.test_per_class),
            noise_images: pick(d.noise_images, ds.noise_images).unwrap_or(1000),
            shift_ratios,
            preprocess,
        };

        let hidden_dropout = regularization.dropout();
        let model = match self.model {
            ModelKind::Lr => ModelSpec::logistic_regression(2),
            ModelKind::Mlp64 => ModelSpec::mlp64(2, hidden_dropout),
            ModelKind::PaperCnn => {
                let side = preprocess.output_side();
                let shape = if desk {
                    CnnShape { input_side: side, ..CnnShape::DESK }
                } else {
                    CnnShape { input_side: side, ..CnnShape::PAPER }
                };
                ModelSpec::cnn(shape, hidden_dropout)
            }
        };
        model.layer_shapes()?;

        let weights = self.resolve_weights(ratio)?;

        let t = &self.train;
        let budget = match (pick(t.steps, ds.steps), pick(t.epochs, ds.epochs)) {
            (Some(s), None) => Budget::Steps(s),
            (None, Some(e)) => Budget::Epochs(e),
            (Some(_), Some(_)) if desk && (ds.steps.is_some() ^ ds.epochs.is_some()) => {
                if ds.steps.is_some() {
                    Budget::Steps(ds.steps.unwrap())
                } else {
                    Budget::Epochs(ds.epochs.unwrap())
                }
            }
            _ => return Err(Error::Config("train needs exactly one of steps or epochs".into())),
        };
        let checkpoints = if desk {
            ds.checkpoints.clone().unwrap_or_else(|| t.checkpoints.clone())
        } else {
            t.checkpoints.clone()
        };
        let limit = match budget {
            Budget::Steps(s) | Budget::Epochs(s) => s,
        };
        if checkpoints.is_empty() {
            return Err(Error::Config("train.checkpoints must not be empty".into()));
        }
        if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("train.checkpoints must be strictly increasing".into()));
        }
        if checkpoints.last().is_some_and(|&c| c > limit) {
            return Err(Error::Config(format!("checkpoint beyond the training budget of {limit}")));
        }
        if t.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let LearningRate::Rule(r) = &t.learning_rate {
            if r != "auto" {
                return Err(Error::Config(format!("learning_rate must be a number or \"auto\", got `{r}`")));
            }
        }
        if let LearningRate::Fixed(v) = t.learning_rate {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config("learning_rate must be positive".into()));
            }
        }
        let momentum = t.momentum.unwrap_or(if image { 0.9 } else { 0.0 });
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if sc.is_2d() {
            let g = &self.grid;
            if g.resolution[0] < 2 || g.resolution[1] < 2 {
                return Err(Error::Config("grid resolution must be at least 2 per axis".into()));
            }
        }
        Ok(Resolved {
            config: self.clone(),
            regularization,
            model,
            weights,
            learning_rate: t.learning_rate.clone(),
            batch_size: t.batch_size,
            momentum,
            budget,
            checkpoints,
            data,
        })
    }

    fn resolve_weights(&self, ratio: Option<(u32, u32)>) -> Result<Vec<WeightSetting>> {
        if self.scenario == Scenario::CovariateShift {
            if !self.weight_sweep.is_empty() {
                return Err(Error::Config(
                    "covariate-shift derives its weights from data.shift_ratios; leave weight_sweep empty".into(),
                ));
            }
            return Ok(Vec::new());
        }
        let sweep = match (&self.desk.weight_sweep, self.scale) {
            (Some(s), Scale::Desk) => s,
            _ => &self.weight_sweep,
        };
        if sweep.is_empty() {
            return Err(Error::Config("weight_sweep must not be empty".into()));
        }
        let mut out: Vec<WeightSetting> = Vec::new();
        for entry in sweep {
            let weights = if entry == "auto-1/r" {
                let (a, b) = ratio.ok_or_else(|| {
                    Error::Config("auto-1/r needs data.ratio".into())
                })?;
                weights_from_ratio(i64::from(a), i64::from(b)).map_err(|e| Error::Config(e.to_string()))?
            } else {
                let bad = || Error::Config(format!("weight `{entry}` must look like `a:b` or be `auto-1/r`"));
                let (a, b) = entry.split_once(':').ok_or_else(bad)?;
                let a: f64 = a.trim().parse().map_err(|_| bad())?;
                let b: f64 = b.trim().parse().map_err(|_| bad())?;
                ClassWeights::new(a, b).map_err(|e| Error::Config(e.to_string()))?
            };
            let label = if entry == "auto-1/r" { weights.label() } else { entry.trim().to_string() };
            if out.iter().any(|w| w.label == label) {
                return Err(Error::Config(format!("weight `{label}` listed twice")));
            }
            out.push(WeightSetting { label, weights });
        }
        Ok(out)
    }
}

pub fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Lr => "lr",
        ModelKind::Mlp64 => "mlp64",
        ModelKind::PaperCnn => "paper-cnn",
    }
}

/// File-name-safe form of a weight or condition label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

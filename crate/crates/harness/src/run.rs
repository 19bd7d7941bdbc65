//! Scenario preparation, the per-run training loop and output emission.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use iwshift_core::cifar::{self, TaskMap};
use iwshift_core::data::{Dataset, Split};
use iwshift_core::datagen::{self, MoonsSpec, SeparablePairSpec};
use iwshift_core::metrics::{self, boundary_angle, BoundaryGrid, Bounds, Line, SeparatorLine, TraceRecord};
use iwshift_core::nets::Model;
use iwshift_core::optim::{self, train_step, Batches, ClassWeights, OptState, TrainConfig, Weighting};
use iwshift_core::{rng, Error, Result};
use rand::RngCore;
use rayon::prelude::*;

use crate::config::{model_name, slug, Budget, LearningRate, Resolved, Scenario};
use crate::output::{self, AggregateRow};

/// Where image scenarios look for the CIFAR-10 binary batches.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub data_dir: PathBuf,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            data_dir: cifar::data_dir(),
        }
    }
}

/// Files written by one experiment, relative to the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub manifest: PathBuf,
    pub traces: Vec<PathBuf>,
    pub aggregate: PathBuf,
    pub grids: Vec<PathBuf>,
    pub comparison: Option<PathBuf>,
    pub rows: Vec<AggregateRow>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum LossWeights {
    Class(ClassWeights),
    /// Use the training set's per-example weights.
    Example,
}

struct TrainSet {
    data: Dataset,
    learning_rate: f64,
}

struct Job {
    label: String,
    train: usize,
    weights: LossWeights,
    seed: u64,
}

struct Prepared {
    trains: Vec<TrainSet>,
    /// Evaluation populations besides each run's own training set.
    populations: Vec<(String, Dataset)>,
    oracle: Option<SeparatorLine>,
    grid_bounds: Option<Bounds>,
    jobs: Vec<Job>,
    notes: Vec<String>,
}

struct JobResult {
    records: Vec<TraceRecord>,
    grids: Vec<BoundaryGrid>,
    total_steps: usize,
    eval_steps: Vec<usize>,
}

pub fn run_experiment(res: &Resolved, opts: &RunOptions) -> Result<RunSummary> {
    let prep = prepare(res, opts)?;
    let results: Vec<Result<JobResult>> = prep.jobs.par_iter().map(|job| run_job(res, &prep, job)).collect();
    let results: Vec<JobResult> = results.into_iter().collect::<Result<_>>()?;

    let out = &res.config.output_dir;
    fs::create_dir_all(out.join("runs"))?;
    let mut traces = Vec::new();
    for (job, r) in prep.jobs.iter().zip(&results) {
        let rel = trace_path(&job.label, job.seed);
        output::write_trace(&r.records, BufWriter::new(File::create(out.join(&rel))?))?;
        traces.push(rel);
    }
    let mut grids = Vec::new();
    if results.iter().any(|r| !r.grids.is_empty()) {
        fs::create_dir_all(out.join("grids"))?;
    }
    for (job, r) in prep.jobs.iter().zip(&results) {
        for g in &r.grids {
            let rel = PathBuf::from("grids").join(format!("w{}-s{}-step{}.txt", slug(&job.label), job.seed, g.step));
            fs::write(out.join(&rel), g.to_text())?;
            grids.push(rel);
        }
    }
    let runs: Vec<Vec<TraceRecord>> = results.iter().map(|r| r.records.clone()).collect();
    let rows = output::aggregate(&runs)?;
    let aggregate = PathBuf::from("aggregate.csv");
    output::write_aggregate(&rows, BufWriter::new(File::create(out.join(&aggregate))?))?;
    let comparison = if res.config.scenario == Scenario::CovariateShift {
        let rel = PathBuf::from("comparison.csv");
        output::write_comparison(&output::comparison(&rows)?, BufWriter::new(File::create(out.join(&rel))?))?;
        Some(rel)
    } else {
        None
    };
    let data_files = write_data_files(res, &prep, out)?;
    let manifest = PathBuf::from("manifest.txt");
    let text = manifest_text(res, &prep, &results, &traces, &grids, &data_files, comparison.as_deref())?;
    fs::write(out.join(&manifest), text)?;
    Ok(RunSummary {
        output_dir: out.clone(),
        manifest,
        traces,
        aggregate,
        grids,
        comparison,
        rows,
    })
}

pub fn trace_path(label: &str, seed: u64) -> PathBuf {
    PathBuf::from("runs").join(format!("trace-w{}-s{seed}.csv", slug(label)))
}

fn prepare(res: &Resolved, opts: &RunOptions) -> Result<Prepared> {
    let d = &res.data;
    let sc = res.config.scenario;
    let mut notes = Vec::new();
    let (trains, populations, conditions): (Vec<Dataset>, Vec<(String, Dataset)>, Option<Vec<(String, usize, LossWeights)>>) =
        match sc {
            Scenario::Separable2d => {
                let spec = SeparablePairSpec {
                    n_per_class: d.n_per_class,
                    truncation_radius: d.truncation_radius,
                    rotation: d.rotation,
                    translation: d.translation,
                    seed: d.seed,
                };
                let train = datagen::gen_separable(&spec, Split::Train)?;
                let test = datagen::gen_separable(&spec, Split::Test)?;
                (vec![train], vec![("test".into(), test)], None)
            }
            Scenario::Moons | Scenario::MoonsImbalanced => {
                let spec = MoonsSpec {
                    n_total: d.n_total,
                    noise_sigma: d.noise,
                    seed: d.seed,
                };
                let mut train = datagen::gen_moons(&spec, Split::Train)?;
                if let Some((a, b)) = d.ratio {
                    train = datagen::subsample_ratio(&train, a, b, d.seed)?;
                }
                let test = datagen::gen_moons(&spec, Split::Test)?;
                (vec![train], vec![("test".into(), test)], None)
            }
            Scenario::CifarBinary | Scenario::CifarImbalanced => {
                let (train_recs, test_recs) = load_cifar(res, opts)?;
                let mut train = cifar::select_pair(&train_recs, d.class_a, d.class_b, Split::Train, d.preprocess)?;
                if let Some((a, b)) = d.ratio {
                    train = datagen::subsample_ratio(&train, a, b, d.seed)?;
                }
                let pair = cifar::select_pair(&test_recs, d.class_a, d.class_b, Split::Test, d.preprocess)?;
                let others = cifar::select_others(&test_recs, &[d.class_a, d.class_b], Split::Test, d.preprocess)?;
                let side = d.preprocess.output_side();
                let noise = datagen::gen_noise_images(d.noise_images, [3, side, side], d.seed)?;
                let pair_name = format!(
                    "{}{}-test",
                    cifar::CLASS_NAMES[d.class_a as usize],
                    cifar::CLASS_NAMES[d.class_b as usize]
                );
                (
                    vec![train],
                    vec![(pair_name, pair), ("other8".into(), others), ("noise".into(), noise)],
                    None,
                )
            }
            Scenario::CovariateShift => {
                let (train_recs, test_recs) = load_cifar(res, opts)?;
                let balanced = TaskMap::animal_vehicle((1, 1), (1, 1));
                let test = cifar::remap_superclass(&test_recs, &balanced, Split::Test, d.preprocess, d.seed)?;
                let base = cifar::remap_superclass(&train_recs, &balanced, Split::Train, d.preprocess, d.seed)?;
                let w = cifar::covariate_weights(&base, &test)?;
                let mut trains = vec![base.with_weights(w)?];
                let mut conditions = vec![("no-shift".to_string(), 0, LossWeights::Example)];
                for &(a, b) in &d.shift_ratios {
                    let map = TaskMap::animal_vehicle((a, b), (a, b));
                    let shifted = cifar::remap_superclass(&train_recs, &map, Split::Train, d.preprocess, d.seed)?;
                    let n = shifted.len();
                    let w = cifar::covariate_weights(&shifted, &test)?;
                    notes.push(format!("shift {a}:{b}: {}", map.describe()));
                    trains.push(shifted.clone().with_weights(w)?);
                    conditions.push((format!("weighted-{a}:{b}"), trains.len() - 1, LossWeights::Example));
                    trains.push(shifted.with_weights(vec![1.0; n])?);
                    conditions.push((format!("unweighted-{a}:{b}"), trains.len() - 1, LossWeights::Example));
                }
                (trains, vec![("test".into(), test)], Some(conditions))
            }
        };

    let oracle = if sc == Scenario::Separable2d {
        let t = &trains[0].data_points()?;
        metrics::max_margin_2d(&t.0, &t.1)?
    } else {
        None
    };
    let grid_bounds = if sc.is_2d() {
        Some(match res.config.grid.bounds {
            Some(b) => b,
            None => data_bounds(trains.iter().chain(populations.iter().map(|p| &p.1))),
        })
    } else {
        None
    };

    let mut train_sets = Vec::new();
    for t in trains {
        let learning_rate = match &res.learning_rate {
            LearningRate::Fixed(v) => *v,
            LearningRate::Rule(_) => optim::lr_from_data(&t.features)?,
        };
        train_sets.push(TrainSet { data: t, learning_rate });
    }

    let conditions = conditions.unwrap_or_else(|| {
        res.weights
            .iter()
            .map(|w| (w.label.clone(), 0, LossWeights::Class(w.weights)))
            .collect()
    });
    let mut jobs = Vec::new();
    for (label, train, weights) in conditions {
        for &seed in &res.config.seeds {
            jobs.push(Job {
                label: label.clone(),
                train,
                weights,
                seed,
            });
        }
    }
    Ok(Prepared {
        trains: train_sets,
        populations,
        oracle,
        grid_bounds,
        jobs,
        notes,
    })
}

trait Points {
    fn data_points(&self) -> Result<(Vec<[f64; 2]>, Vec<u8>)>;
}

impl Points for Dataset {
    fn data_points(&self) -> Result<(Vec<[f64; 2]>, Vec<u8>)> {
        if self.example_shape() != [2] {
            return Err(Error::Contract("expected 2-D points".into()));
        }
        let pts = self.features.data().chunks(2).map(|c| [c[0], c[1]]).collect();
        Ok((pts, self.labels()?.to_vec()))
    }
}

/// Extent of every point, padded by a tenth of the larger side on each edge.
fn data_bounds<'a>(sets: impl Iterator<Item = &'a Dataset>) -> Bounds {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for ds in sets {
        for c in ds.features.data().chunks(2) {
            b[0] = b[0].min(c[0]);
            b[1] = b[1].max(c[0]);
            b[2] = b[2].min(c[1]);
            b[3] = b[3].max(c[1]);
        }
    }
    let pad = 0.1 * (b[1] - b[0]).max(b[3] - b[2]);
    [b[0] - pad, b[1] + pad, b[2] - pad, b[3] + pad]
}

fn load_cifar(res: &Resolved, opts: &RunOptions) -> Result<(Vec<cifar::CifarRecord>, Vec<cifar::CifarRecord>)> {
    let d = &res.data;
    let mut train = cifar::load_split(&opts.data_dir, Split::Train)?;
    let mut test = cifar::load_split(&opts.data_dir, Split::Test)?;
    if let Some(k) = d.per_class {
        train = cifar::limit_per_class(&train, k, rng::derive_seed(d.seed, "train-limit"));
    }
    if let Some(k) = d.test_per_class {
        test = cifar::limit_per_class(&test, k, rng::derive_seed(d.seed, "test-limit"));
    }
    Ok((train, test))
}

fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

/// Mean of `w_i · BCE(z_i, y_i)`.
fn example_objective(logits: &[f64], labels: &[u8], weights: &[f64]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&z, &y), &w)| {
            let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
            w * (softplus - f64::from(y) * z)
        })
        .sum();
    total / logits.len() as f64
}

fn run_job(res: &Resolved, prep: &Prepared, job: &Job) -> Result<JobResult> {
    let train = &prep.trains[job.train];
    let ds = &train.data;
    let labels = ds.labels()?;
    let per_epoch = steps_per_epoch(ds.len(), res.batch_size);
    let (total_steps, checkpoints): (usize, Vec<usize>) = match res.budget {
        Budget::Steps(s) => (s, res.checkpoints.clone()),
        Budget::Epochs(e) => (e * per_epoch, res.checkpoints.iter().map(|c| c * per_epoch).collect()),
    };
    let unit = match res.budget {
        Budget::Steps(_) => 1,
        Budget::Epochs(_) => per_epoch,
    };
    let grid_steps: BTreeSet<usize> = match prep.grid_bounds {
        Some(_) => res.config.grid.checkpoints.iter().map(|&c| c * unit).filter(|&s| s <= total_steps).collect(),
        None => BTreeSet::new(),
    };
    let checkpoint_set: BTreeSet<usize> = checkpoints.iter().copied().collect();

    let config = TrainConfig {
        learning_rate: train.learning_rate,
        batch_size: res.batch_size,
        momentum: res.momentum,
        l2_lambda: res.regularization.l2(),
        dropout_rate: res.regularization.dropout().unwrap_or(0.0),
        step_budget: total_steps,
        checkpoint_schedule: checkpoints.clone(),
        seed: job.seed,
    };
    config.validate()?;
    let mut model = Model::build(res.model.clone(), job.seed)?;
    let mut state = OptState::new(&model);
    let mut batches = Batches::new(ds.len(), res.batch_size, job.seed)?;
    let mut dropout = rng::stream(job.seed, "dropout");
    let uniform = ds.weights.iter().all(|&w| w == 1.0);

    let mut records = Vec::new();
    let mut grids = Vec::new();
    let mut observe = |model: &Model, step: usize| -> Result<()> {
        if checkpoint_set.contains(&step) {
            let train_logits = model.logits(&ds.features)?;
            let loss = match job.weights {
                LossWeights::Class(w) => optim::weighted_bce(&train_logits, labels, w)?,
                LossWeights::Example => example_objective(&train_logits, labels, &ds.weights),
            };
            let angle = match (&prep.oracle, res.config.model) {
                (Some(o), crate::config::ModelKind::Lr) => Some(boundary_angle(&Line::from_model(model)?, &o.line())),
                _ => None,
            };
            let mut push = |population: &str, logits: &[f64], pop_labels: Option<&[u8]>| -> Result<()> {
                records.push(TraceRecord {
                    step,
                    weight_label: job.label.clone(),
                    seed: job.seed,
                    population: population.to_string(),
                    fraction_positive: metrics::fraction_positive_of(logits)?,
                    accuracy: pop_labels.map(|l| metrics::accuracy_of(logits, l)).transpose()?,
                    loss,
                    boundary_angle: angle,
                });
                Ok(())
            };
            push("train", &train_logits, Some(labels))?;
            for (name, pop) in &prep.populations {
                let logits = model.logits(&pop.features)?;
                push(name, &logits, pop.labels.as_deref())?;
            }
        }
        if let (Some(bounds), true) = (prep.grid_bounds, grid_steps.contains(&step)) {
            grids.push(metrics::eval_grid(model, bounds, res.config.grid.resolution, step)?);
        }
        Ok(())
    };

    observe(&model, 0)?;
    for step in 1..=total_steps {
        let idx = batches.next_batch();
        let x = ds.features.gather_rows(&idx)?;
        let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let w: Vec<f64>;
        let weighting = match job.weights {
            LossWeights::Class(cw) => Weighting::Class(cw),
            LossWeights::Example if uniform => Weighting::None,
            LossWeights::Example => {
                w = idx.iter().map(|&i| ds.weights[i]).collect();
                Weighting::PerExample(&w)
            }
        };
        train_step(&mut model, &mut state, &config, &x, &y, weighting, dropout.next_u64())?;
        observe(&model, step)?;
    }
    let mut eval_steps: Vec<usize> = checkpoint_set.into_iter().collect();
    eval_steps.dedup();
    Ok(JobResult {
        records,
        grids,
        total_steps,
        eval_steps,
    })
}

fn write_data_files(res: &Resolved, prep: &Prepared, out: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if !res.config.scenario.is_2d() {
        return Ok(files);
    }
    fs::create_dir_all(out.join("data"))?;
    let train = PathBuf::from("data").join("train.csv");
    prep.trains[0].data.write_points_csv(BufWriter::new(File::create(out.join(&train))?))?;
    files.push(train);
    for (name, pop) in &prep.populations {
        let rel = PathBuf::from("data").join(format!("{name}.csv"));
        pop.write_points_csv(BufWriter::new(File::create(out.join(&rel))?))?;
        files.push(rel);
    }
    if let Some(o) = &prep.oracle {
        let rel = PathBuf::from("data").join("oracle.txt");
        fs::write(out.join(&rel), format!("{}\n", o.to_text()))?;
        files.push(rel);
    }
    Ok(files)
}

fn manifest_text(
    res: &Resolved,
    prep: &Prepared,
    results: &[JobResult],
    traces: &[PathBuf],
    grids: &[PathBuf],
    data_files: &[PathBuf],
    comparison: Option<&Path>,
) -> Result<String> {
    let c = &res.config;
    let mut s = String::from("# iwshift run manifest v1\n");
    let mut line = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k}: {v}").unwrap();
    line("package", &format!("iwshift {}", env!("CARGO_PKG_VERSION")));
    line("name", &c.name);
    line("scenario", &c.scenario.as_str());
    line("model", &model_name(c.model));
    line("scale", &c.scale.as_str());
    line("seeds", &format!("{:?}", c.seeds));
    line("regularization", &format!("{:?}", res.regularization));
    line("batch_size", &res.batch_size);
    line("momentum", &res.momentum);
    line("budget", &format!("{:?}", res.budget));
    line("checkpoints (config unit)", &format!("{:?}", res.checkpoints));
    line("grid checkpoints (config unit)", &format!("{:?}", c.grid.checkpoints));

    s.push_str("\n[design]\n");
    let design = [
        "padding: same (pad 1) for every 3x3 stride-1 convolution",
        "init: hidden layers U(+-sqrt(6/fan_in)), logit head U(+-sqrt(3/fan_in)), biases 0",
        "tie rule: logit exactly 0 counts as the negative class",
        "loss: mean over the batch of w_i * BCE(logit_i, y_i), computed from logits",
        "optimizer: SGD, velocity form v = mu v + (g + lambda theta), theta -= eta v",
        "l2: applied to weights and biases alike",
        "dropout: inverted, masks drawn per step from the run's dropout stream",
        "epoch to step mapping: step budgets count minibatch updates; a checkpoint at step k evaluates after k updates; \
         epoch budgets use ceil(n_train / batch_size) updates per epoch",
        "pixel normalization: byte / 255, no per-channel standardization",
        "std: sample standard deviation (n - 1), 0 for a single seed",
        "loss column: training objective over the full training set, eval mode, repeated on every population row",
        "rng streams: init, batch-shuffle, dropout per run seed; data generation and subsampling from data.seed",
    ];
    for d in design {
        writeln!(s, "{d}").unwrap();
    }

    s.push_str("\n[data]\n");
    for (i, t) in prep.trains.iter().enumerate() {
        let (neg, pos) = t.data.class_counts()?;
        writeln!(
            s,
            "train[{i}]: n={} neg={neg} pos={pos} lr={} provenance={}",
            t.data.len(),
            output::fmt_f64(t.learning_rate),
            t.data.provenance
        )
        .unwrap();
        let mut distinct: Vec<f64> = Vec::new();
        for &w in &t.data.weights {
            if !distinct.contains(&w) {
                distinct.push(w);
            }
        }
        distinct.sort_by(f64::total_cmp);
        writeln!(s, "train[{i}] example weights: {distinct:?}").unwrap();
    }
    for (name, p) in &prep.populations {
        writeln!(s, "population {name}: n={} provenance={}", p.len(), p.provenance).unwrap();
    }
    if res.config.scenario.is_2d() {
        match &prep.oracle {
            Some(o) => writeln!(s, "max-margin separator: {}", o.to_text()).unwrap(),
            None => writeln!(s, "max-margin separator: none (training set not linearly separable)").unwrap(),
        }
        if let Some(b) = prep.grid_bounds {
            writeln!(s, "grid bounds: {b:?} resolution: {:?}", c.grid.resolution).unwrap();
        }
    }
    if !res.config.scenario.is_2d() {
        writeln!(s, "preprocess: {}", res.data.preprocess.describe()).unwrap();
    }
    for n in &prep.notes {
        writeln!(s, "{n}").unwrap();
    }

    s.push_str("\n[runs]\n");
    for ((job, r), path) in prep.jobs.iter().zip(results).zip(traces) {
        let weights = match job.weights {
            LossWeights::Class(w) => format!("class w_pos={} w_neg={}", w.w_pos, w.w_neg),
            LossWeights::Example => "per-example".into(),
        };
        writeln!(
            s,
            "{} seed={} train[{}] {weights} steps={} checkpoints(steps)={:?} -> {}",
            job.label,
            job.seed,
            job.train,
            r.total_steps,
            r.eval_steps,
            path.display()
        )
        .unwrap();
    }
    s.push_str("\n[outputs]\n");
    writeln!(s, "aggregate.csv").unwrap();
    if let Some(p) = comparison {
        writeln!(s, "{}", p.display()).unwrap();
    }
    for p in data_files.iter().chain(grids) {
        writeln!(s, "{}", p.display()).unwrap();
    }

    s.push_str("\n[model]\n");
    s.push_str(&Model::build(res.model.clone(), c.seeds[0])?.manifest()?);
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s.push_str("\n[config]\n");
    s.push_str(&c.to_toml());
    Ok(s)
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use iwshift_core::cifar::{write_records, CifarRecord, PIXELS, TEST_FILE, TRAIN_FILES};
use iwshift_harness::config::ExperimentConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn committed_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&workspace_root().join("configs").join(name)).unwrap()
}

/// Fresh empty directory under the system temp dir.
pub fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("iwshift-h-{name}-{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Records whose pixels scatter around a per-class colour.
pub fn class_records(per_class: usize, seed: u64) -> Vec<CifarRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..per_class * 10)
        .map(|i| {
            let label = (i % 10) as u8;
            let base = [40 + 20 * label as i32, 230 - 15 * label as i32, 60 + (37 * label as i32) % 150];
            let pixels = (0..PIXELS)
                .map(|p| (base[p / 1024] + rng.random_range(-50..=50)).clamp(0, 255) as u8)
                .collect();
            CifarRecord { label, pixels }
        })
        .collect()
}

/// A CIFAR-10 batch directory with `train_per_class` records of each class
/// spread over the five training files and `test_per_class` in the test file.
pub fn fake_cifar(dir: &Path, train_per_class: usize, test_per_class: usize) {
    std::fs::create_dir_all(dir).unwrap();
    let train = class_records(train_per_class, 1);
    let chunk = train.len().div_ceil(TRAIN_FILES.len());
    for (i, name) in TRAIN_FILES.iter().enumerate() {
        let part = &train[(i * chunk).min(train.len())..((i + 1) * chunk).min(train.len())];
        let mut bytes = Vec::new();
        write_records(part, &mut bytes).unwrap();
        std::fs::write(dir.join(name), bytes).unwrap();
    }
    let mut bytes = Vec::new();
    write_records(&class_records(test_per_class, 2), &mut bytes).unwrap();
    std::fs::write(dir.join(TEST_FILE), bytes).unwrap();
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub const TINY_MOONS: &str = r#"
name = "tiny-moons"
scenario = "moons"
model = "mlp64"
weight_sweep = ["1:10", "1:1", "10:1"]
seeds = [0, 1, 2]
output_dir = "unused"

[train]
learning_rate = "auto"
batch_size = 8
steps = 300
checkpoints = [0, 1, 10, 100, 300]

[data]
n_total = 128

[grid]
checkpoints = [1, 10, 100]
resolution = [12, 10]
"#;

pub fn tiny_moons(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml(TINY_MOONS).unwrap();
    c.output_dir = out.to_path_buf();
    c
}

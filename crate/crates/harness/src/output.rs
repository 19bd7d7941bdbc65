//! Trace, aggregate and comparison CSV files.

use std::io::{Read, Write};
use std::path::Path;

use iwshift_core::metrics::{mean_and_std, TraceRecord};
use iwshift_core::{Error, Result};

pub const TRACE_HEADER: [&str; 8] = [
    "step",
    "weight_label",
    "seed",
    "population",
    "fraction_positive",
    "accuracy",
    "loss",
    "boundary_angle",
];

pub const AGGREGATE_HEADER: [&str; 12] = [
    "step",
    "weight_label",
    "population",
    "n_seeds",
    "fraction_positive_mean",
    "fraction_positive_std",
    "accuracy_mean",
    "accuracy_std",
    "loss_mean",
    "loss_std",
    "boundary_angle_mean",
    "boundary_angle_std",
];

pub const COMPARISON_HEADER: [&str; 7] = [
    "condition",
    "step",
    "n_seeds",
    "train_accuracy_mean",
    "train_accuracy_std",
    "test_accuracy_mean",
    "test_accuracy_std",
];

/// Shortest text that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
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

pub fn write_trace<W: Write>(records: &[TraceRecord], out: W) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Contract("a trace needs at least one record".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            r.weight_label.clone(),
            r.seed.to_string(),
            r.population.clone(),
            fmt_f64(r.fraction_positive),
            fmt_opt(r.accuracy),
            fmt_f64(r.loss),
            fmt_opt(r.boundary_angle),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Format {
            offset: 0,
            reason: format!("unexpected trace header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let offset = row.position().map_or(0, |p| p.byte());
        let bad = |field: &str| Error::Format {
            offset,
            reason: format!("bad {field} value"),
        };
        let num = |i: usize| row[i].parse::<f64>().map_err(|_| bad(TRACE_HEADER[i]));
        let opt = |i: usize| {
            if row[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        out.push(TraceRecord {
            step: row[0].parse().map_err(|_| bad("step"))?,
            weight_label: row[1].to_string(),
            seed: row[2].parse().map_err(|_| bad("seed"))?,
            population: row[3].to_string(),
            fraction_positive: num(4)?,
            accuracy: opt(5)?,
            loss: num(6)?,
            boundary_angle: opt(7)?,
        });
    }
    Ok(out)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRecord>> {
    read_trace(std::fs::File::open(path)?)
}

/// One `(step, weight_label, population)` group summarized over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub step: usize,
    pub weight_label: String,
    pub population: String,
    pub n_seeds: usize,
    pub fraction_positive: (f64, f64),
    pub accuracy: Option<(f64, f64)>,
    pub loss: (f64, f64),
    pub boundary_angle: Option<(f64, f64)>,
}

/// Groups runs that share a weight label. `runs` holds one trace per
/// `(label, seed)`, in the order rows should appear; every run of a label must
/// have the same `(step, population)` sequence.
pub fn aggregate(runs: &[Vec<TraceRecord>]) -> Result<Vec<AggregateRow>> {
    let mut labels: Vec<&str> = Vec::new();
    for run in runs {
        let first = run
            .first()
            .ok_or_else(|| Error::Contract("empty trace in aggregation".into()))?;
        if !labels.contains(&first.weight_label.as_str()) {
            labels.push(&first.weight_label);
        }
    }
    let mut out = Vec::new();
    for label in labels {
        let group: Vec<&Vec<TraceRecord>> = runs.iter().filter(|r| r[0].weight_label == label).collect();
        let base = group[0];
        for other in &group[1..] {
            let same = other.len() == base.len()
                && other
                    .iter()
                    .zip(base.iter())
                    .all(|(a, b)| a.step == b.step && a.population == b.population);
            if !same {
                return Err(Error::Contract(format!("runs of `{label}` have different checkpoints")));
            }
        }
        for (i, row) in base.iter().enumerate() {
            let column = |f: &dyn Fn(&TraceRecord) -> Option<f64>| -> Option<(f64, f64)> {
                let v: Option<Vec<f64>> = group.iter().map(|r| f(&r[i])).collect();
                v.map(|v| mean_and_std(&v))
            };
            out.push(AggregateRow {
                step: row.step,
                weight_label: label.to_string(),
                population: row.population.clone(),
                n_seeds: group.len(),
                fraction_positive: column(&|r| Some(r.fraction_positive)).expect("always present"),
                accuracy: column(&|r| r.accuracy),
                loss: column(&|r| Some(r.loss)).expect("always present"),
                boundary_angle: column(&|r| r.boundary_angle),
            });
        }
    }
    Ok(out)
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER).map_err(csv_err)?;
    let pair = |p: Option<(f64, f64)>| match p {
        Some((m, s)) => [fmt_f64(m), fmt_f64(s)],
        None => [String::new(), String::new()],
    };
    for r in rows {
        let [fm, fs] = pair(Some(r.fraction_positive));
        let [am, as_] = pair(r.accuracy);
        let [lm, ls] = pair(Some(r.loss));
        let [bm, bs] = pair(r.boundary_angle);
        w.write_record([
            r.step.to_string(),
            r.weight_label.clone(),
            r.population.clone(),
            r.n_seeds.to_string(),
            fm,
            fs,
            am,
            as_,
            lm,
            ls,
            bm,
            bs,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Final-checkpoint train/test accuracy of one covariate-shift condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub condition: String,
    pub step: usize,
    pub n_seeds: usize,
    pub train_accuracy: (f64, f64),
    pub test_accuracy: (f64, f64),
}

pub fn comparison(rows: &[AggregateRow]) -> Result<Vec<ComparisonRow>> {
    let mut out: Vec<ComparisonRow> = Vec::new();
    for r in rows {
        if out.iter().any(|c| c.condition == r.weight_label) {
            continue;
        }
        // Conditions differ in training-set size, so each has its own final step.
        let last = rows
            .iter()
            .filter(|x| x.weight_label == r.weight_label)
            .map(|x| x.step)
            .max()
            .unwrap_or(0);
        let find = |label: &str, pop: &str| {
            rows.iter()
                .find(|r| r.step == last && r.weight_label == label && r.population == pop)
                .and_then(|r| r.accuracy.map(|a| (a, r.n_seeds)))
                .ok_or_else(|| Error::Contract(format!("no final {pop} accuracy for `{label}`")))
        };
        let (train, n) = find(&r.weight_label, "train")?;
        let (test, _) = find(&r.weight_label, "test")?;
        out.push(ComparisonRow {
            condition: r.weight_label.clone(),
            step: last,
            n_seeds: n,
            train_accuracy: train,
            test_accuracy: test,
        });
    }
    Ok(out)
}

pub fn write_comparison<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARISON_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.condition.clone(),
            r.step.to_string(),
            r.n_seeds.to_string(),
            fmt_f64(r.train_accuracy.0),
            fmt_f64(r.train_accuracy.1),
            fmt_f64(r.test_accuracy.0),
            fmt_f64(r.test_accuracy.1),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: usize, seed: u64, fp: f64, acc: Option<f64>) -> TraceRecord {
        TraceRecord {
            step,
            weight_label: "1:1".into(),
            seed,
            population: "test".into(),
            fraction_positive: fp,
            accuracy: acc,
            loss: 0.25,
            boundary_angle: None,
        }
    }

    #[test]
    fn trace_round_trip() {
        let rows = vec![rec(0, 3, 0.1, Some(0.5)), rec(10, 3, 1e-300, None)];
        let mut buf = Vec::new();
        write_trace(&rows, &mut buf).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), rows);
        assert!(write_trace(&[], Vec::new()).is_err());
    }

    #[test]
    fn single_seed_std_is_zero() {
        let agg = aggregate(&[vec![rec(0, 1, 0.3, None)]]).unwrap();
        assert_eq!(agg[0].fraction_positive, (0.3, 0.0));
        assert_eq!(agg[0].accuracy, None);
    }

    #[test]
    fn mismatched_checkpoints_rejected() {
        let runs = vec![vec![rec(0, 1, 0.3, None)], vec![rec(5, 2, 0.3, None)]];
        assert!(aggregate(&runs).is_err());
    }
}

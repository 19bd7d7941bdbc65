//! Measurements: prediction fractions, accuracy, exact 2-D max-margin
//! separators, boundary angles and grids, and the importance-weighted mean.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::nets::Model;

/// Share of logits strictly above zero.
pub fn fraction_positive_of(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::contract("fraction_positive of an empty population"));
    }
    Ok(logits.iter().filter(|&&z| z > 0.0).count() as f64 / logits.len() as f64)
}

pub fn accuracy_of(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::contract(format!(
            "accuracy needs matching non-empty inputs, got {} logits and {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(&z, &y)| u8::from(z > 0.0) == y)
        .count();
    Ok(hits as f64 / logits.len() as f64)
}

pub fn fraction_positive(model: &Model, population: &Dataset) -> Result<f64> {
    fraction_positive_of(&model.logits(&population.features)?)
}

pub fn accuracy(model: &Model, population: &Dataset) -> Result<f64> {
    accuracy_of(&model.logits(&population.features)?, population.labels()?)
}

/// A line `normal·x + offset = 0` with unit normal; the positive side is
/// classified as label 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub normal: [f64; 2],
    pub offset: f64,
}

impl Line {
    /// Normalizes an affine decision function `w·x + b`.
    pub fn from_affine(w: [f64; 2], b: f64) -> Result<Line> {
        let n = w[0].hypot(w[1]);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::contract("decision function has a zero or non-finite normal"));
        }
        Ok(Line {
            normal: [w[0] / n, w[1] / n],
            offset: b / n,
        })
    }

    /// Decision line of a 2-D logistic-regression model.
    pub fn from_model(model: &Model) -> Result<Line> {
        let p = model.params();
        if p.len() != 2 || p[0].shape() != [2, 1] {
            return Err(Error::contract(format!(
                "{} is not a 2-D linear model",
                model.spec().name
            )));
        }
        let w = p[0].data();
        Line::from_affine([w[0], w[1]], p[1].data()[0])
    }

    pub fn signed_distance(&self, x: [f64; 2]) -> f64 {
        self.normal[0] * x[0] + self.normal[1] * x[1] + self.offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparatorLine {
    pub normal: [f64; 2],
    pub offset: f64,
    pub margin: f64,
    pub support_indices: Vec<usize>,
}

impl SeparatorLine {
    pub fn line(&self) -> Line {
        Line {
            normal: self.normal,
            offset: self.offset,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "{{\"normal\": [{:?}, {:?}], \"offset\": {:?}, \"margin\": {:?}, \"support_indices\": {:?}}}",
            self.normal[0], self.normal[1], self.offset, self.margin, self.support_indices
        )
    }
}

/// Indices of the convex hull vertices of `idx`, counter-clockwise, collinear
/// points dropped.
fn convex_hull(points: &[[f64; 2]], idx: &[usize]) -> Vec<usize> {
    let mut v = idx.to_vec();
    v.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).expect("finite points"));
    v.dedup_by(|a, b| points[*a] == points[*b]);
    if v.len() < 3 {
        return v;
    }
    let cross = |o: usize, a: usize, b: usize| {
        let (o, a, b) = (points[o], points[a], points[b]);
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<usize> = Vec::with_capacity(2 * v.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
            Box::new(v.iter())
        } else {
            Box::new(v.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Best margin attainable with unit normal `n`, and the offset achieving it.
fn direction_margin(points: &[[f64; 2]], pos: &[usize], neg: &[usize], n: [f64; 2]) -> (f64, f64) {
    let proj = |i: usize| n[0] * points[i][0] + n[1] * points[i][1];
    let lo = pos.iter().map(|&i| proj(i)).fold(f64::INFINITY, f64::min);
    let hi = neg.iter().map(|&i| proj(i)).fold(f64::NEG_INFINITY, f64::max);
    ((lo - hi) / 2.0, -(lo + hi) / 2.0)
}

/// Exact hard-margin separator of two labelled 2-D point sets, or `None` when
/// no line separates them with positive margin.
///
/// Candidate support sets are enumerated: opposite-class pairs (the
/// separator is their perpendicular bisector) and two same-class points with
/// one opposite point (the separator is parallel to the segment). Only
/// convex-hull vertices can support the optimum, so candidates are drawn from
/// the hulls of each class; each candidate direction is scored by its exact
/// margin over the hulls. Cost is `O(n log n + h_pos·h_neg·(h_pos + h_neg))`.
pub fn max_margin_2d(points: &[[f64; 2]], labels: &[u8]) -> Result<Option<SeparatorLine>> {
    if points.len() != labels.len() {
        return Err(Error::contract("points and labels differ in length"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::contract("non-finite point"));
    }
    let pos: Vec<usize> = (0..points.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..points.len()).filter(|&i| labels[i] == 0).collect();
    if pos.len() + neg.len() != points.len() {
        return Err(Error::contract("labels must be 0 or 1"));
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::contract("max-margin separation needs both classes"));
    }
    let hp = convex_hull(points, &pos);
    let hn = convex_hull(points, &neg);

    let mut directions: Vec<[f64; 2]> = Vec::new();
    for &p in &hp {
        for &q in &hn {
            let d = [points[p][0] - points[q][0], points[p][1] - points[q][1]];
            let len = d[0].hypot(d[1]);
            if len > 0.0 {
                directions.push([d[0] / len, d[1] / len]);
            }
        }
    }
    for hull in [&hp, &hn] {
        for k in 0..hull.len() {
            let (a, b) = (points[hull[k]], points[hull[(k + 1) % hull.len()]]);
            let e = [b[0] - a[0], b[1] - a[1]];
            let len = e[0].hypot(e[1]);
            if len > 0.0 {
                directions.push([-e[1] / len, e[0] / len]);
                directions.push([e[1] / len, -e[0] / len]);
            }
        }
    }

    let mut best: Option<([f64; 2], f64, f64)> = None;
    for n in directions {
        let (m, b) = direction_margin(points, &hp, &hn, n);
        if best.is_none_or(|(_, bm, _)| m > bm) {
            best = Some((n, m, b));
        }
    }
    let Some((normal, margin, offset)) = best else {
        return Ok(None);
    };
    if margin <= 0.0 {
        return Ok(None);
    }
    let line = Line { normal, offset };
    let tol = 1e-9 * (1.0 + margin);
    let mut support: Vec<usize> = pos
        .iter()
        .filter(|&&i| (line.signed_distance(points[i]) - margin).abs() <= tol)
        .chain(
            neg.iter()
                .filter(|&&i| (line.signed_distance(points[i]) + margin).abs() <= tol),
        )
        .copied()
        .collect();
    support.sort_unstable();
    support.truncate(3);
    Ok(Some(SeparatorLine {
        normal,
        offset,
        margin,
        support_indices: support,
    }))
}

/// Unoriented angle between two lines' normals, in degrees within `[0, 90]`.
pub fn boundary_angle(a: &Line, b: &Line) -> f64 {
    let dot = a.normal[0] * b.normal[0] + a.normal[1] * b.normal[1];
    let cross = a.normal[0] * b.normal[1] - a.normal[1] * b.normal[0];
    cross.abs().atan2(dot.abs()).to_degrees()
}

/// `[x_min, x_max, y_min, y_max]`.
pub type Bounds = [f64; 4];

/// Predicted class at each cell centre of a rectangle; row `j` holds
/// `y`-index `j` counted from `y_min`, cells within a row run from `x_min`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryGrid {
    pub bounds: Bounds,
    pub resolution: [usize; 2],
    pub step: usize,
    pub values: Vec<u8>,
}

fn check_grid(bounds: Bounds, resolution: [usize; 2]) -> Result<()> {
    if bounds.iter().any(|b| !b.is_finite()) || bounds[0] >= bounds[1] || bounds[2] >= bounds[3] {
        return Err(Error::config(format!("degenerate grid bounds {bounds:?}")));
    }
    if resolution[0] < 2 || resolution[1] < 2 {
        return Err(Error::config("grid resolution must be at least 2 per axis"));
    }
    Ok(())
}

/// Cell centres in storage order.
pub fn grid_centres(bounds: Bounds, resolution: [usize; 2]) -> Result<Vec<[f64; 2]>> {
    check_grid(bounds, resolution)?;
    let [nx, ny] = resolution;
    let dx = (bounds[1] - bounds[0]) / nx as f64;
    let dy = (bounds[3] - bounds[2]) / ny as f64;
    Ok((0..ny)
        .flat_map(|j| {
            (0..nx).map(move |i| {
                [
                    bounds[0] + (i as f64 + 0.5) * dx,
                    bounds[2] + (j as f64 + 0.5) * dy,
                ]
            })
        })
        .collect())
}

pub fn eval_grid(model: &Model, bounds: Bounds, resolution: [usize; 2], step: usize) -> Result<BoundaryGrid> {
    let centres = grid_centres(bounds, resolution)?;
    let features = Tensor::new(vec![centres.len(), 2], centres.into_iter().flatten().collect())?;
    let values = model.logits(&features)?.iter().map(|&z| u8::from(z > 0.0)).collect();
    Ok(BoundaryGrid {
        bounds,
        resolution,
        step,
        values,
    })
}

impl BoundaryGrid {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# iwshift boundary grid v1\n");
        let [x0, x1, y0, y1] = self.bounds;
        writeln!(s, "step {}", self.step).unwrap();
        writeln!(s, "bounds {x0:?} {x1:?} {y0:?} {y1:?}").unwrap();
        writeln!(s, "resolution {} {}", self.resolution[0], self.resolution[1]).unwrap();
        for row in self.values.chunks(self.resolution[0]) {
            s.extend(row.iter().map(|&v| if v == 1 { '1' } else { '0' }));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<BoundaryGrid> {
        let bad = |why: &str| Error::Format {
            offset: 0,
            reason: format!("boundary grid: {why}"),
        };
        let mut lines = text.lines();
        if lines.next() != Some("# iwshift boundary grid v1") {
            return Err(bad("missing header"));
        }
        let mut field = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(&format!("expected `{key}`")));
            }
            Ok(parts.map(str::to_owned).collect())
        };
        let step = field("step")?
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad step"))?;
        let b: Vec<f64> = field("bounds")?.iter().filter_map(|v| v.parse().ok()).collect();
        let r: Vec<usize> = field("resolution")?.iter().filter_map(|v| v.parse().ok()).collect();
        if b.len() != 4 || r.len() != 2 {
            return Err(bad("bad bounds or resolution"));
        }
        let bounds = [b[0], b[1], b[2], b[3]];
        let resolution = [r[0], r[1]];
        check_grid(bounds, resolution)?;
        let mut values = Vec::with_capacity(r[0] * r[1]);
        for line in lines {
            if line.len() != r[0] {
                return Err(bad("row width disagrees with resolution"));
            }
            for c in line.chars() {
                values.push(match c {
                    '0' => 0,
                    '1' => 1,
                    _ => return Err(bad("cell outside {0, 1}")),
                });
            }
        }
        if values.len() != r[0] * r[1] {
            return Err(bad("row count disagrees with resolution"));
        }
        Ok(BoundaryGrid {
            bounds,
            resolution,
            step,
            values,
        })
    }
}

/// `mean(w_i · f_i)` for samples drawn from `q` with `w = p/q`.
pub fn iw_estimate(f: &[f64], weights: &[f64]) -> Result<f64> {
    if f.is_empty() || f.len() != weights.len() {
        return Err(Error::contract("iw_estimate needs matching non-empty inputs"));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::contract("importance weights must be finite and non-negative"));
    }
    Ok(f.iter().zip(weights).map(|(f, w)| f * w).sum::<f64>() / f.len() as f64)
}

/// Mean and Bessel-corrected standard deviation; a single value has std 0.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        order[i..=j].iter().for_each(|&k| ranks[k] = r);
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let (mx, _) = mean_and_std(&rx);
    let (my, _) = mean_and_std(&ry);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// One measurement row: a population evaluated at a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub weight_label: String,
    pub seed: u64,
    pub population: String,
    pub fraction_positive: f64,
    /// Absent for unlabeled populations.
    pub accuracy: Option<f64>,
    pub loss: f64,
    /// Degrees to the max-margin separator, 2-D linear runs only.
    pub boundary_angle: Option<f64>,
}

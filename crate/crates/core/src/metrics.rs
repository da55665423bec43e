//! Exact evaluation metrics on binary maps.
//!
//! Boundary F1 compares the inner boundaries of prediction and ground truth:
//! a boundary pixel counts as matched when the other boundary lies strictly
//! closer than `theta_dist` pixels. Boundaries are extracted with a 3x3
//! window, the same rule the training surrogate uses.
//!
//! Degenerate cases are scored so that every metric is a total function:
//! a ratio with a zero denominator is 1, two empty boundaries give BF1 = 1,
//! and exactly one empty boundary gives 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMap, Shape};
use crate::morphgrad::boundary_map;

/// Window used to extract boundaries for the exact metric.
pub const BOUNDARY_WINDOW: usize = 3;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), |a, b| a + b)
    }
}

pub fn confusion(pred: &BinaryMap, gt: &BinaryMap) -> Result<ConfusionCounts> {
    pred.shape().ensure_same(gt.shape())?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn iou(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.fp + c.tp + c.fn_)
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fn_ + c.fp)
}

/// `lambda * specificity + (1 - lambda) * sensitivity`.
pub fn ss(c: &ConfusionCounts, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param("lambda", format!("{lambda} is not in [0, 1]")));
    }
    Ok(lambda * ratio(c.tn, c.tn + c.fp) + (1.0 - lambda) * ratio(c.tp, c.tp + c.fn_))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    Euclidean,
    Chebyshev,
}

impl std::str::FromStr for DistanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceMode::Euclidean),
            "chebyshev" => Ok(DistanceMode::Chebyshev),
            other => Err(Error::param(
                "mode",
                format!("`{other}` is not one of euclidean, chebyshev"),
            )),
        }
    }
}

impl DistanceMode {
    /// Distance between two pixels under this mode.
    pub fn between(self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let dy = a.0.abs_diff(b.0) as f64;
        let dx = a.1.abs_diff(b.1) as f64;
        match self {
            DistanceMode::Euclidean => (dy * dy + dx * dx).sqrt(),
            DistanceMode::Chebyshev => dy.max(dx),
        }
    }
}

/// Distance from every pixel to the nearest set pixel; `+inf` everywhere
/// when the set is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMap {
    shape: Shape,
    values: Vec<f64>,
}

impl DistanceMap {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.shape.index(row, col)]
    }
}

pub fn distance_transform(set: &BinaryMap, mode: DistanceMode) -> DistanceMap {
    let shape = set.shape();
    let values = match mode {
        DistanceMode::Euclidean => euclidean_squared(set)
            .into_iter()
            .map(f64::sqrt)
            .collect(),
        DistanceMode::Chebyshev => chebyshev(set),
    };
    DistanceMap { shape, values }
}

/// Squared Euclidean distances via two passes of the 1D lower envelope of
/// parabolas (Felzenszwalb & Huttenlocher). All finite outputs are exact
/// integers.
fn euclidean_squared(set: &BinaryMap) -> Vec<f64> {
    let Shape { height, width } = set.shape();
    let mut grid: Vec<f64> = set
        .values()
        .iter()
        .map(|&v| if v == 1 { 0.0 } else { f64::INFINITY })
        .collect();

    let mut scratch = Envelope::with_capacity(height.max(width));
    let mut column = vec![0.0; height];
    let mut out = vec![0.0; height.max(width)];
    for c in 0..width {
        for r in 0..height {
            column[r] = grid[r * width + c];
        }
        scratch.transform(&column, &mut out[..height]);
        for r in 0..height {
            grid[r * width + c] = out[r];
        }
    }
    for r in 0..height {
        let row = &mut grid[r * width..(r + 1) * width];
        scratch.transform(row, &mut out[..width]);
        row.copy_from_slice(&out[..width]);
    }
    grid
}

struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            vertices: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    /// `out[q] = min_p (q - p)^2 + f[p]`, skipping infinite samples.
    fn transform(&mut self, f: &[f64], out: &mut [f64]) {
        self.vertices.clear();
        self.bounds.clear();
        let intersect = |f: &[f64], p: usize, q: usize| -> f64 {
            let (pf, qf) = (p as f64, q as f64);
            ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
        };
        for q in 0..f.len() {
            if !f[q].is_finite() {
                continue;
            }
            loop {
                let Some(&v) = self.vertices.last() else {
                    self.vertices.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let s = intersect(f, v, q);
                if s <= *self.bounds.last().unwrap() {
                    self.vertices.pop();
                    self.bounds.pop();
                } else {
                    self.vertices.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
        }
        if self.vertices.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let qf = q as f64;
            while k + 1 < self.vertices.len() && self.bounds[k + 1] < qf {
                k += 1;
            }
            let p = self.vertices[k];
            let d = qf - p as f64;
            *o = d * d + f[p];
        }
    }
}

/// Chessboard distances by a forward and a backward min-plus chamfer pass
/// with unit weights on all eight neighbours, which is exact for this metric.
fn chebyshev(set: &BinaryMap) -> Vec<f64> {
    let Shape { height, width } = set.shape();
    const FAR: u32 = u32::MAX / 2;
    let mut d: Vec<u32> = set
        .values()
        .iter()
        .map(|&v| if v == 1 { 0 } else { FAR })
        .collect();
    let at = |r: usize, c: usize| r * width + c;
    for r in 0..height {
        for c in 0..width {
            let mut best = d[at(r, c)];
            if c > 0 {
                best = best.min(d[at(r, c - 1)] + 1);
            }
            if r > 0 {
                best = best.min(d[at(r - 1, c)] + 1);
                if c > 0 {
                    best = best.min(d[at(r - 1, c - 1)] + 1);
                }
                if c + 1 < width {
                    best = best.min(d[at(r - 1, c + 1)] + 1);
                }
            }
            d[at(r, c)] = best;
        }
    }
    for r in (0..height).rev() {
        for c in (0..width).rev() {
            let mut best = d[at(r, c)];
            if c + 1 < width {
                best = best.min(d[at(r, c + 1)] + 1);
            }
            if r + 1 < height {
                best = best.min(d[at(r + 1, c)] + 1);
                if c + 1 < width {
                    best = best.min(d[at(r + 1, c + 1)] + 1);
                }
                if c > 0 {
                    best = best.min(d[at(r + 1, c - 1)] + 1);
                }
            }
            d[at(r, c)] = best;
        }
    }
    d.into_iter()
        .map(|v| if v >= FAR { f64::INFINITY } else { f64::from(v) })
        .collect()
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScore {
    pub precision: f64,
    pub recall: f64,
    pub bf1: f64,
    pub theta_dist: f64,
    pub mode: DistanceMode,
}

impl BoundaryScore {
    fn from_counts(
        matched_pd: usize,
        len_pd: usize,
        matched_gt: usize,
        len_gt: usize,
        theta_dist: f64,
        mode: DistanceMode,
    ) -> Self {
        let (precision, recall, bf1) = match (len_pd, len_gt) {
            (0, 0) => (1.0, 1.0, 1.0),
            (0, _) | (_, 0) => (0.0, 0.0, 0.0),
            _ => {
                let p = matched_pd as f64 / len_pd as f64;
                let r = matched_gt as f64 / len_gt as f64;
                let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
                (p, r, f)
            }
        };
        BoundaryScore {
            precision,
            recall,
            bf1,
            theta_dist,
            mode,
        }
    }
}

/// Inner boundary of a binary map as a binary map.
pub fn boundary_pixels(map: &BinaryMap) -> BinaryMap {
    let shape = map.shape();
    let window = BOUNDARY_WINDOW.min(2 * shape.height.min(shape.width) - 1);
    let b = boundary_map(&map.to_f64(), shape, window).expect("window is valid by construction");
    BinaryMap::new(
        shape.height,
        shape.width,
        b.iter().map(|&v| u8::from(v > 0.5)).collect(),
    )
    .expect("boundary of a binary map is binary")
}

fn check_bf1_args(pred: &BinaryMap, gt: &BinaryMap, theta_dist: f64) -> Result<()> {
    pred.shape().ensure_same(gt.shape())?;
    if !(theta_dist > 0.0) {
        return Err(Error::param("theta_dist", format!("{theta_dist} must be > 0")));
    }
    Ok(())
}

/// Boundary F1 through distance transforms of both boundaries.
pub fn exact_bf1(
    pred: &BinaryMap,
    gt: &BinaryMap,
    theta_dist: f64,
    mode: DistanceMode,
) -> Result<BoundaryScore> {
    check_bf1_args(pred, gt, theta_dist)?;
    let b_pd = boundary_pixels(pred);
    let b_gt = boundary_pixels(gt);
    let d_to_gt = distance_transform(&b_gt, mode);
    let d_to_pd = distance_transform(&b_pd, mode);
    let matched = |set: &BinaryMap, dist: &DistanceMap| {
        set.values()
            .iter()
            .zip(dist.values())
            .filter(|(&s, &d)| s == 1 && d < theta_dist)
            .count()
    };
    Ok(BoundaryScore::from_counts(
        matched(&b_pd, &d_to_gt),
        b_pd.count_ones(),
        matched(&b_gt, &d_to_pd),
        b_gt.count_ones(),
        theta_dist,
        mode,
    ))
}

/// Boundary F1 by comparing every pair of boundary pixels. Quadratic; meant
/// as a reference for [`exact_bf1`].
pub fn brute_bf1(
    pred: &BinaryMap,
    gt: &BinaryMap,
    theta_dist: f64,
    mode: DistanceMode,
) -> Result<BoundaryScore> {
    check_bf1_args(pred, gt, theta_dist)?;
    let coords = |m: &BinaryMap| -> Vec<(usize, usize)> {
        let b = boundary_pixels(m);
        (0..b.shape().len())
            .filter(|&k| b.values()[k] == 1)
            .map(|k| b.shape().coords(k))
            .collect()
    };
    let (pd, gt) = (coords(pred), coords(gt));
    let matched = |from: &[(usize, usize)], to: &[(usize, usize)]| {
        from.iter()
            .filter(|&&a| {
                to.iter()
                    .map(|&b| mode.between(a, b))
                    .fold(f64::INFINITY, f64::min)
                    < theta_dist
            })
            .count()
    };
    Ok(BoundaryScore::from_counts(
        matched(&pd, &gt),
        pd.len(),
        matched(&gt, &pd),
        gt.len(),
        theta_dist,
        mode,
    ))
}

//! Synthetic single-object segmentation data.
//!
//! Every sample holds exactly one primitive shape on a textured, noisy
//! background. Sample `i` draws from ChaCha8 seeded with `seed` on stream
//! `i`, so any sample can be regenerated alone.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{load_gray, load_mask, save_map, BinaryMap, ProbMap};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    RotatedRectangle,
    LShape,
    Ellipse,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Rectangle,
        ShapeKind::RotatedRectangle,
        ShapeKind::LShape,
        ShapeKind::Ellipse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::RotatedRectangle => "rotated_rectangle",
            ShapeKind::LShape => "l_shape",
            ShapeKind::Ellipse => "ellipse",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param("shape", format!("unknown shape `{s}`")))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    None,
    Gradient,
    /// Smoothly interpolated random lattice values.
    Perlin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub shapes: Vec<ShapeKind>,
    /// Mask area bounds as fractions of `size * size`.
    pub min_area: f64,
    pub max_area: f64,
    pub noise_std: f64,
    pub texture: Texture,
    pub seed: u64,
    /// Fraction of samples whose shape reaches the image border.
    pub edge_touch_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 800,
            size: 64,
            shapes: ShapeKind::ALL.to_vec(),
            min_area: 0.04,
            max_area: 0.25,
            noise_std: 0.08,
            texture: Texture::Perlin,
            seed: 0,
            edge_touch_fraction: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::param("count", "must be at least 1"));
        }
        if self.size < 8 {
            return Err(Error::param("size", format!("{} is below the minimum of 8", self.size)));
        }
        if self.shapes.is_empty() {
            return Err(Error::param("shapes", "at least one shape kind is required"));
        }
        if !(self.min_area > 0.0 && self.min_area < self.max_area && self.max_area < 1.0) {
            return Err(Error::param(
                "min_area/max_area",
                format!("need 0 < min_area < max_area < 1, got {} and {}", self.min_area, self.max_area),
            ));
        }
        // Leave room for at least a couple of pixels inside the bounds.
        let px = (self.size * self.size) as f64;
        if ((self.max_area * px).floor() - (self.min_area * px).ceil()) < 1.0 {
            return Err(Error::param("min_area/max_area", "bounds admit no pixel count"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::param("noise_std", format!("{} must be finite and >= 0", self.noise_std)));
        }
        if !(0.0..=1.0).contains(&self.edge_touch_fraction) {
            return Err(Error::param(
                "edge_touch_fraction",
                format!("{} is outside [0, 1]", self.edge_touch_fraction),
            ));
        }
        Ok(())
    }

    /// Whether sample `index` must reach the border. Spreads the touching
    /// samples evenly so any prefix holds the configured fraction, rounded down.
    pub fn touches_edge(&self, index: usize) -> bool {
        let f = self.edge_touch_fraction;
        ((index + 1) as f64 * f).floor() > (index as f64 * f).floor()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub index: usize,
    pub shape: ShapeKind,
    pub image: ProbMap,
    pub mask: BinaryMap,
}

impl SynthSample {
    pub fn area(&self) -> usize {
        self.mask.count_ones()
    }
}

const MAX_ATTEMPTS: usize = 10_000;

pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    (0..cfg.count)
        .into_par_iter()
        .map(|i| generate_one(cfg, i))
        .collect()
}

/// Sample `index` of the dataset described by `cfg`.
pub fn generate_one(cfg: &SynthConfig, index: usize) -> Result<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let n = cfg.size;
    let shape = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
    let touch = cfg.touches_edge(index);
    let px = (n * n) as f64;
    let (lo, hi) = ((cfg.min_area * px).ceil() as usize, (cfg.max_area * px).floor() as usize);
    let mask = (0..MAX_ATTEMPTS)
        .map(|_| place_shape(&mut rng, shape, n, cfg, touch))
        .find(|m| {
            let area = m.count_ones();
            (lo..=hi).contains(&area) && touches_border(m) == touch && component_count(m) == 1
        })
        .ok_or_else(|| {
            Error::param(
                "synth",
                format!("could not place a {shape} in sample {index} within the area bounds"),
            )
        })?;
    let image = render(&mut rng, &mask, cfg)?;
    Ok(SynthSample {
        index,
        shape,
        image,
        mask,
    })
}

/// Point-membership test in the shape's own frame, centred at the origin.
struct Primitive {
    kind: ShapeKind,
    half_w: f64,
    half_h: f64,
    /// Corner removed from an L shape, as a fraction of each side.
    cut: (f64, f64),
    /// Which quadrant the cut is taken from.
    quadrant: u8,
    angle: f64,
}

impl Primitive {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (c * x + s * y, -s * x + c * y);
        match self.kind {
            ShapeKind::Ellipse => (u / self.half_w).powi(2) + (v / self.half_h).powi(2) <= 1.0,
            ShapeKind::Rectangle | ShapeKind::RotatedRectangle => {
                u.abs() <= self.half_w && v.abs() <= self.half_h
            }
            ShapeKind::LShape => {
                if u.abs() > self.half_w || v.abs() > self.half_h {
                    return false;
                }
                let (su, sv) = match self.quadrant {
                    0 => (u, v),
                    1 => (-u, v),
                    2 => (u, -v),
                    _ => (-u, -v),
                };
                // The cut corner spans the far `cut` fraction of each side.
                let in_cut_u = su >= self.half_w * (1.0 - 2.0 * self.cut.0);
                let in_cut_v = sv >= self.half_h * (1.0 - 2.0 * self.cut.1);
                !(in_cut_u && in_cut_v)
            }
        }
    }

    /// Radius of a disc containing the shape.
    fn extent(&self) -> f64 {
        self.half_w.hypot(self.half_h)
    }
}

fn place_shape(rng: &mut ChaCha8Rng, kind: ShapeKind, n: usize, cfg: &SynthConfig, touch: bool) -> BinaryMap {
    let px = (n * n) as f64;
    let area = rng.random_range(cfg.min_area..cfg.max_area) * px;
    let aspect: f64 = rng.random_range(0.5..2.0);
    let cut = (rng.random_range(0.3..0.6), rng.random_range(0.3..0.6));
    let fill = match kind {
        ShapeKind::Ellipse => std::f64::consts::PI / 4.0,
        ShapeKind::LShape => 1.0 - cut.0 * cut.1,
        _ => 1.0,
    };
    // Full bounding box w x h with w / h = aspect and fill * w * h = area.
    let w = (area * aspect / fill).sqrt();
    let h = w / aspect;
    let prim = Primitive {
        kind,
        half_w: w / 2.0,
        half_h: h / 2.0,
        cut,
        quadrant: rng.random_range(0..4),
        angle: match kind {
            ShapeKind::RotatedRectangle => rng.random_range(0.0..std::f64::consts::PI),
            _ => 0.0,
        },
    };
    let size = n as f64;
    let r = prim.extent();
    let (cx, cy) = if touch {
        let along = rng.random_range(0.0..size);
        let inset = rng.random_range(0.0..r.min(size / 2.0));
        match rng.random_range(0..4) {
            0 => (along, inset),
            1 => (along, size - inset),
            2 => (inset, along),
            _ => (size - inset, along),
        }
    } else {
        let lo = (r + 1.0).min(size / 2.0);
        let hi = (size - r - 1.0).max(lo + 1e-9);
        (rng.random_range(lo..hi), rng.random_range(lo..hi))
    };
    BinaryMap::from_fn(n, n, |row, col| {
        prim.contains(col as f64 + 0.5 - cx, row as f64 + 0.5 - cy)
    })
    .expect("size is nonzero")
}

fn touches_border(m: &BinaryMap) -> bool {
    let s = m.shape();
    (0..s.width).any(|c| m.get(0, c) || m.get(s.height - 1, c))
        || (0..s.height).any(|r| m.get(r, 0) || m.get(r, s.width - 1))
}

/// Number of 4-connected foreground components.
pub fn component_count(m: &BinaryMap) -> usize {
    let s = m.shape();
    let mut seen = vec![false; s.len()];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..s.len() {
        if m.values()[start] == 0 || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (r, c) = s.coords(k);
            let mut visit = |rr: usize, cc: usize| {
                let j = s.index(rr, cc);
                if m.values()[j] == 1 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(r - 1, c);
            }
            if r + 1 < s.height {
                visit(r + 1, c);
            }
            if c > 0 {
                visit(r, c - 1);
            }
            if c + 1 < s.width {
                visit(r, c + 1);
            }
        }
    }
    count
}

fn render(rng: &mut ChaCha8Rng, mask: &BinaryMap, cfg: &SynthConfig) -> Result<ProbMap> {
    let n = cfg.size;
    let bg = rng.random_range(0.15..0.4);
    let fg = rng.random_range(0.6..0.85);
    let texture: Box<dyn Fn(f64, f64) -> f64> = match cfg.texture {
        Texture::None => Box::new(|_, _| 0.0),
        Texture::Gradient => {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.05..0.12);
            let (s, c) = theta.sin_cos();
            Box::new(move |x, y| amp * (c * (x - 0.5) + s * (y - 0.5)))
        }
        Texture::Perlin => {
            const CELLS: usize = 4;
            let lattice: Vec<f64> = (0..(CELLS + 1) * (CELLS + 1))
                .map(|_| rng.random_range(-0.1..0.1))
                .collect();
            Box::new(move |x, y| {
                let (gx, gy) = (x * CELLS as f64, y * CELLS as f64);
                let (i, j) = ((gx as usize).min(CELLS - 1), (gy as usize).min(CELLS - 1));
                let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
                let (tx, ty) = (smooth(gx - i as f64), smooth(gy - j as f64));
                let at = |a: usize, b: usize| lattice[b * (CELLS + 1) + a];
                let top = at(i, j) * (1.0 - tx) + at(i + 1, j) * tx;
                let bottom = at(i, j + 1) * (1.0 - tx) + at(i + 1, j + 1) * tx;
                top * (1.0 - ty) + bottom * ty
            })
        }
    };
    let mut values = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let (x, y) = ((col as f64 + 0.5) / n as f64, (row as f64 + 0.5) / n as f64);
            let base = if mask.get(row, col) { fg } else { bg };
            let z: f64 = StandardNormal.sample(rng);
            values.push((base + texture(x, y) + cfg.noise_std * z).clamp(0.0, 1.0));
        }
    }
    ProbMap::new(n, n, values)
}

/// First `floor(len * train_fraction)` samples for training, the rest for validation.
pub fn split<T: Clone>(samples: &[T], train_fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param(
            "train_fraction",
            format!("{train_fraction} is outside (0, 1)"),
        ));
    }
    let cut = (samples.len() as f64 * train_fraction).floor() as usize;
    Ok((samples[..cut].to_vec(), samples[cut..].to_vec()))
}

/// Write `image_%05d.pgm`, `mask_%05d.pgm` and `manifest.csv` into `dir`.
pub fn export(samples: &[SynthSample], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("index,shape,area\n");
    for s in samples {
        save_map(&s.image, dir.join(format!("image_{:05}.pgm", s.index)))?;
        save_map(&s.mask, dir.join(format!("mask_{:05}.pgm", s.index)))?;
        manifest.push_str(&format!("{},{},{}\n", s.index, s.shape, s.area()));
    }
    let path = dir.join("manifest.csv");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(manifest.as_bytes()).map_err(|e| Error::io(&path, e))
}

/// Read back a directory written by [`export`]. Images come back quantized
/// to 8 bits.
pub fn import(dir: impl AsRef<Path>) -> Result<Vec<SynthSample>> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.csv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::param("manifest", format!("line {} is malformed: `{line}`", line_no + 1));
        let mut fields = line.split(',');
        let index: usize = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
        let shape: ShapeKind = fields.next().ok_or_else(bad)?.parse()?;
        let image = load_gray(dir.join(format!("image_{index:05}.pgm")))?;
        let mask = load_mask(dir.join(format!("mask_{index:05}.pgm")))?;
        image.shape().ensure_same(mask.shape())?;
        out.push(SynthSample {
            index,
            shape,
            image,
            mask,
        });
    }
    if out.is_empty() {
        return Err(Error::param("manifest", format!("{} lists no samples", path.display())));
    }
    Ok(out)
}

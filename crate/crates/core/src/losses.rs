//! Differentiable segmentation losses with exact gradients w.r.t. the
//! prediction.
//!
//! Region losses (IoU, Dice, SS) relax the confusion sets to products of the
//! prediction and the mask, which coincide with the exact counts on hard
//! predictions. The boundary loss extracts inner boundaries by max-pooling
//! the inverted maps, grows them into tolerance bands with a second pooling,
//! and scores the overlap as an F1 of boundary precision and recall:
//!
//! ```text
//! b      = pool(1 - y, theta0) - (1 - y)
//! b_ext  = pool(b, theta)
//! P      = sum(b_pd * b_ext_gt) / (sum(b_pd) + eps)
//! R      = sum(b_gt * b_ext_pd) / (sum(b_gt) + eps)
//! loss   = 1 - 2PR / (P + R + eps)
//! ```
//!
//! The ground-truth branch is data and never receives gradient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMap, GradMap, ProbMap, Shape};
use crate::morphgrad::{ElementwiseKind, Seed, Tape};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    /// Boundary extraction window.
    pub theta0: usize,
    /// Boundary tolerance window.
    pub theta: usize,
    /// Specificity weight of the SS loss.
    pub lambda: f64,
    /// Added to every ratio denominator.
    pub eps: f64,
    /// BCE clamps predictions to `[bce_clamp, 1 - bce_clamp]`.
    pub bce_clamp: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            theta0: 3,
            theta: 5,
            lambda: 0.5,
            eps: 1e-7,
            bce_clamp: 1e-7,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("theta0", self.theta0), ("theta", self.theta)] {
            if w == 0 || w % 2 == 0 {
                return Err(Error::param(name, format!("{w} must be a positive odd integer")));
            }
        }
        if self.theta0 > self.theta {
            return Err(Error::param(
                "theta0",
                format!("{} must not exceed theta = {}", self.theta0, self.theta),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::param("lambda", format!("{} is not in [0, 1]", self.lambda)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::param("eps", format!("{} must be > 0", self.eps)));
        }
        if !(self.bce_clamp > 0.0 && self.bce_clamp < 0.5) {
            return Err(Error::param(
                "bce_clamp",
                format!("{} is not in (0, 0.5)", self.bce_clamp),
            ));
        }
        Ok(())
    }
}

/// Individual loss terms.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Iou,
    Dice,
    Ss,
    Bf1,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Bce,
        LossKind::Iou,
        LossKind::Dice,
        LossKind::Ss,
        LossKind::Bf1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Iou => "iou",
            LossKind::Dice => "dice",
            LossKind::Ss => "ss",
            LossKind::Bf1 => "bf1",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param("loss", format!("unknown loss `{s}`")))
    }
}

/// One weighted term of a loss value.
#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct Component {
    pub kind: LossKind,
    pub weight: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: GradMap,
    /// Terms whose weighted sum, in order, is `value`.
    pub components: Vec<Component>,
    /// Boundary weight `w`, for combined losses.
    pub w: Option<f64>,
    /// Max-pool selections made while evaluating; empty for pooling-free
    /// losses. Equal patterns mean the same smooth piece of the loss.
    pub pool_pattern: Vec<u32>,
}

impl LossResult {
    fn single(kind: LossKind, value: f64, grad: Vec<f64>, shape: Shape) -> Result<Self> {
        Ok(LossResult {
            value,
            grad: GradMap::from_shape(shape, grad)?,
            components: vec![Component {
                kind,
                weight: 1.0,
                value,
            }],
            w: None,
            pool_pattern: Vec::new(),
        })
    }

    pub fn component(&self, kind: LossKind) -> Option<f64> {
        self.components
            .iter()
            .find(|c| c.kind == kind)
            .map(|c| c.value)
    }

    /// Weighted sum of the components.
    pub fn recombined(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.value).sum()
    }
}

/// Weighted sum of single-term results.
pub fn weighted_sum(parts: &[(f64, LossResult)], w: Option<f64>) -> Result<LossResult> {
    let (_, first) = parts
        .first()
        .ok_or_else(|| Error::param("parts", "at least one loss term is required"))?;
    let shape = first.grad.shape();
    let mut grad = vec![0.0; shape.len()];
    let mut components = Vec::new();
    let mut pool_pattern = Vec::new();
    for (weight, part) in parts {
        shape.ensure_same(part.grad.shape())?;
        for (g, d) in grad.iter_mut().zip(part.grad.values()) {
            *g += weight * d;
        }
        components.extend(part.components.iter().map(|c| Component {
            weight: weight * c.weight,
            ..*c
        }));
        pool_pattern.extend_from_slice(&part.pool_pattern);
    }
    let value = components.iter().map(|c| c.weight * c.value).sum();
    Ok(LossResult {
        value,
        grad: GradMap::from_shape(shape, grad)?,
        components,
        w,
        pool_pattern,
    })
}

fn check_inputs(p: &ProbMap, g: &BinaryMap, params: &LossParams) -> Result<()> {
    p.shape().ensure_same(g.shape())?;
    params.validate()
}

/// Mean binary cross-entropy over pixels.
pub fn bce_loss(p: &ProbMap, g: &BinaryMap, params: &LossParams) -> Result<LossResult> {
    check_inputs(p, g, params)?;
    let n = p.values().len() as f64;
    let (lo, hi) = (params.bce_clamp, 1.0 - params.bce_clamp);
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p.values().len());
    for (&pv, &gv) in p.values().iter().zip(g.values()) {
        let q = pv.clamp(lo, hi);
        let t = f64::from(gv);
        value -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        let d = if (lo..=hi).contains(&pv) {
            (-t / q + (1.0 - t) / (1.0 - q)) / n
        } else {
            0.0
        };
        grad.push(d);
    }
    LossResult::single(LossKind::Bce, value / n, grad, p.shape())
}

/// Relaxed confusion counts.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SoftCounts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub tn: f64,
}

pub fn soft_confusion(p: &ProbMap, g: &BinaryMap) -> Result<SoftCounts> {
    p.shape().ensure_same(g.shape())?;
    let mut c = SoftCounts {
        tp: 0.0,
        fp: 0.0,
        fn_: 0.0,
        tn: 0.0,
    };
    for (&pv, &gv) in p.values().iter().zip(g.values()) {
        let t = f64::from(gv);
        c.tp += pv * t;
        c.fp += pv * (1.0 - t);
        c.fn_ += (1.0 - pv) * t;
        c.tn += (1.0 - pv) * (1.0 - t);
    }
    Ok(c)
}

/// `1 - tp / (fp + tp + fn + eps)`.
pub fn iou_loss(p: &ProbMap, g: &BinaryMap, params: &LossParams) -> Result<LossResult> {
    check_inputs(p, g, params)?;
    let c = soft_confusion(p, g)?;
    let den = c.fp + c.tp + c.fn_ + params.eps;
    let iou = c.tp / den;
    // d tp = g, d den = 1 - g
    let grad = g
        .values()
        .iter()
        .map(|&gv| {
            let t = f64::from(gv);
            -(t * den - c.tp * (1.0 - t)) / (den * den)
        })
        .collect();
    LossResult::single(LossKind::Iou, 1.0 - iou, grad, p.shape())
}

/// `1 - 2tp / (2tp + fn + fp + eps)`.
pub fn dice_loss(p: &ProbMap, g: &BinaryMap, params: &LossParams) -> Result<LossResult> {
    check_inputs(p, g, params)?;
    let c = soft_confusion(p, g)?;
    let den = 2.0 * c.tp + c.fn_ + c.fp + params.eps;
    let f1 = 2.0 * c.tp / den;
    // d num = 2g, d den = 1
    let grad = g
        .values()
        .iter()
        .map(|&gv| -(2.0 * f64::from(gv) * den - 2.0 * c.tp) / (den * den))
        .collect();
    LossResult::single(LossKind::Dice, 1.0 - f1, grad, p.shape())
}

/// `1 - (lambda * tn / (tn + fp + eps) + (1 - lambda) * tp / (tp + fn + eps))`.
pub fn ss_loss(p: &ProbMap, g: &BinaryMap, params: &LossParams) -> Result<LossResult> {
    check_inputs(p, g, params)?;
    let c = soft_confusion(p, g)?;
    let lambda = params.lambda;
    // Both denominators are constants: tn + fp = |not g|, tp + fn = |g|.
    let neg = c.tn + c.fp + params.eps;
    let pos = c.tp + c.fn_ + params.eps;
    let ss = lambda * c.tn / neg + (1.0 - lambda) * c.tp / pos;
    let grad = g
        .values()
        .iter()
        .map(|&gv| {
            let t = f64::from(gv);
            -(-lambda * (1.0 - t) / neg + (1.0 - lambda) * t / pos)
        })
        .collect();
    LossResult::single(LossKind::Ss, 1.0 - ss, grad, p.shape())
}

/// Intermediate sums of the boundary loss, exposed for inspection.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct BoundaryTerms {
    pub precision: f64,
    pub recall: f64,
    pub bf1: f64,
}

/// Boundary F1 surrogate, `1 - BF1`.
pub fn bf1_loss(p: &ProbMap, g: &BinaryMap, params: &LossParams) -> Result<LossResult> {
    bf1_loss_with_terms(p, g, params).map(|(r, _)| r)
}

pub fn bf1_loss_with_terms(
    p: &ProbMap,
    g: &BinaryMap,
    params: &LossParams,
) -> Result<(LossResult, BoundaryTerms)> {
    check_inputs(p, g, params)?;
    let eps = params.eps;
    let mut tape = Tape::new(p.shape());
    let y_pd = tape.leaf(p.values().to_vec())?;
    let y_gt = tape.constant(g.to_f64())?;

    let b_pd = tape.boundary(y_pd, params.theta0)?;
    let b_gt = tape.boundary(y_gt, params.theta0)?;
    let ext_pd = tape.extend_boundary(b_pd, params.theta)?;
    let ext_gt = tape.extend_boundary(b_gt, params.theta)?;
    let prec_map = tape.elementwise(b_pd, ext_gt, ElementwiseKind::Mul)?;
    let rec_map = tape.elementwise(b_gt, ext_pd, ElementwiseKind::Mul)?;

    let s_pd = tape.sum(b_pd);
    let s_gt = tape.sum(b_gt);
    let s_prec = tape.sum(prec_map);
    let s_rec = tape.sum(rec_map);

    let precision = s_prec / (s_pd + eps);
    let recall = s_rec / (s_gt + eps);
    let den = precision + recall + eps;
    let bf1 = 2.0 * precision * recall / den;

    let d_precision = -2.0 * recall * (recall + eps) / (den * den);
    let d_recall = -2.0 * precision * (precision + eps) / (den * den);
    let seeds = [
        (prec_map, Seed::Sum(d_precision / (s_pd + eps))),
        (b_pd, Seed::Sum(-d_precision * s_prec / ((s_pd + eps) * (s_pd + eps)))),
        (rec_map, Seed::Sum(d_recall / (s_gt + eps))),
    ];
    let grads = tape.backward(&seeds)?;
    let grad = grads
        .get(y_pd)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; p.shape().len()]);
    let mut result = LossResult::single(LossKind::Bf1, 1.0 - bf1, grad, p.shape())?;
    result.pool_pattern = tape.pool_pattern();
    Ok((
        result,
        BoundaryTerms {
            precision,
            recall,
            bf1,
        },
    ))
}

pub fn loss(kind: LossKind, p: &ProbMap, g: &BinaryMap, params: &LossParams) -> Result<LossResult> {
    match kind {
        LossKind::Bce => bce_loss(p, g, params),
        LossKind::Iou => iou_loss(p, g, params),
        LossKind::Dice => dice_loss(p, g, params),
        LossKind::Ss => ss_loss(p, g, params),
        LossKind::Bf1 => bf1_loss(p, g, params),
    }
}

/// `bce + w * bf1 + (1 - w) * iou`.
pub fn combined_loss(p: &ProbMap, g: &BinaryMap, w: f64, params: &LossParams) -> Result<LossResult> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::param("w", format!("{w} is not in [0, 1]")));
    }
    weighted_sum(
        &[
            (1.0, bce_loss(p, g, params)?),
            (w, bf1_loss(p, g, params)?),
            (1.0 - w, iou_loss(p, g, params)?),
        ],
        Some(w),
    )
}

/// Training objectives: BCE plus one region or boundary term.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainLoss {
    BceIou,
    BceDice,
    BceSs,
    BceBf1Iou,
}

impl TrainLoss {
    pub const ALL: [TrainLoss; 4] = [
        TrainLoss::BceIou,
        TrainLoss::BceDice,
        TrainLoss::BceSs,
        TrainLoss::BceBf1Iou,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainLoss::BceIou => "bce_iou",
            TrainLoss::BceDice => "bce_dice",
            TrainLoss::BceSs => "bce_ss",
            TrainLoss::BceBf1Iou => "bce_bf1_iou",
        }
    }

    pub fn uses_boundary_weight(self) -> bool {
        self == TrainLoss::BceBf1Iou
    }

    /// Evaluate with boundary weight `w`; `w` is ignored by the other kinds.
    pub fn evaluate(self, p: &ProbMap, g: &BinaryMap, w: f64, params: &LossParams) -> Result<LossResult> {
        let region = |kind| -> Result<LossResult> {
            weighted_sum(&[(1.0, bce_loss(p, g, params)?), (1.0, loss(kind, p, g, params)?)], None)
        };
        match self {
            TrainLoss::BceIou => region(LossKind::Iou),
            TrainLoss::BceDice => region(LossKind::Dice),
            TrainLoss::BceSs => region(LossKind::Ss),
            TrainLoss::BceBf1Iou => combined_loss(p, g, w, params),
        }
    }
}

impl fmt::Display for TrainLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainLoss::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param("loss", format!("unknown training loss `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, STEP};
    use crate::metrics::{self, DistanceMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> LossParams {
        LossParams::default()
    }

    fn uniform_half() -> (ProbMap, BinaryMap) {
        (
            ProbMap::filled(2, 2, 0.5).unwrap(),
            BinaryMap::new(2, 2, vec![1, 1, 0, 0]).unwrap(),
        )
    }

    fn block(h: usize, w: usize, top: usize, left: usize, bh: usize, bw: usize) -> BinaryMap {
        BinaryMap::from_fn(h, w, |r, c| {
            (top..top + bh).contains(&r) && (left..left + bw).contains(&c)
        })
        .unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(params().validate().is_ok());
        for bad in [
            LossParams { theta0: 2, ..params() },
            LossParams { theta: 4, ..params() },
            LossParams { theta0: 5, theta: 3, ..params() },
            LossParams { lambda: 1.5, ..params() },
            LossParams { eps: 0.0, ..params() },
            LossParams { bce_clamp: 0.5, ..params() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn bce_reference_values() {
        let g = BinaryMap::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        let hard = ProbMap::from(&g);
        let r = bce_loss(&hard, &g, &params()).unwrap();
        assert!(r.value <= -(1.0 - 1e-7f64).ln() + 1e-18);
        let (p, g) = uniform_half();
        let r = bce_loss(&p, &g, &params()).unwrap();
        assert!((r.value - 2f64.ln()).abs() < 1e-15);
        assert!(bce_loss(&p, &BinaryMap::zeros(1, 4).unwrap(), &params()).is_err());
    }

    #[test]
    fn soft_counts() {
        let (p, g) = uniform_half();
        let c = soft_confusion(&p, &g).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1.0, 1.0, 1.0, 1.0));
        let g = BinaryMap::new(2, 3, vec![1, 1, 0, 1, 0, 0]).unwrap();
        let c = soft_confusion(&ProbMap::from(&g), &g).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (3.0, 0.0, 0.0));
    }

    #[test]
    fn region_losses_on_uniform_prediction() {
        let (p, g) = uniform_half();
        let tol = 1e-6;
        assert!((iou_loss(&p, &g, &params()).unwrap().value - 2.0 / 3.0).abs() < tol);
        assert!((dice_loss(&p, &g, &params()).unwrap().value - 0.5).abs() < tol);
        assert!((ss_loss(&p, &g, &params()).unwrap().value - 0.5).abs() < tol);
    }

    #[test]
    fn region_losses_on_hard_predictions() {
        let g = block(6, 6, 1, 1, 3, 4);
        let same = ProbMap::from(&g);
        let inverse = ProbMap::from(&g.inverted());
        for f in [iou_loss, dice_loss, ss_loss] {
            assert!(f(&same, &g, &params()).unwrap().value <= 1e-6);
        }
        assert!((iou_loss(&inverse, &g, &params()).unwrap().value - 1.0).abs() < 1e-12);
        assert!((dice_loss(&inverse, &g, &params()).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bf1_loss_extremes() {
        let g = block(10, 10, 2, 2, 5, 5);
        let r = bf1_loss(&ProbMap::from(&g), &g, &params()).unwrap();
        assert!(r.value <= 1e-5 && r.value >= 0.0);
        let r = bf1_loss(&ProbMap::filled(10, 10, 0.0).unwrap(), &g, &params()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        assert!(r.grad.values().iter().all(|v| v.is_finite()));
        assert!(bf1_loss(&ProbMap::from(&g), &g, &LossParams { theta: 4, ..params() }).is_err());
    }

    #[test]
    fn bf1_loss_on_shifted_block_matches_brute_force() {
        let g = block(12, 12, 4, 2, 4, 4);
        let p = block(12, 12, 4, 5, 4, 4);
        let lp = LossParams { theta0: 3, theta: 3, ..params() };
        let loss = bf1_loss(&ProbMap::from(&p), &g, &lp).unwrap();
        let brute = metrics::brute_bf1(&p, &g, 1.5, DistanceMode::Chebyshev).unwrap();
        assert!((1.0 - loss.value - brute.bf1).abs() <= 10.0 * lp.eps);
        // Rings of two 4x4 blocks shifted by three columns: columns 5 of the
        // predicted ring and 5 of the true ring touch at distance <= 1.
        assert!(brute.bf1 > 0.0 && brute.bf1 < 1.0);
    }

    #[test]
    fn combined_recombination() {
        let (p, g) = uniform_half();
        let lp = LossParams { theta0: 1, theta: 1, ..params() };
        let bce = bce_loss(&p, &g, &lp).unwrap().value;
        let iou = iou_loss(&p, &g, &lp).unwrap().value;
        let bf1 = bf1_loss(&p, &g, &lp).unwrap().value;
        let c0 = combined_loss(&p, &g, 0.0, &lp).unwrap();
        assert_eq!(c0.value, bce + 0.0 * bf1 + iou);
        let c1 = combined_loss(&p, &g, 1.0, &lp).unwrap();
        assert_eq!(c1.value, bce + bf1 + 0.0 * iou);
        let c = combined_loss(&p, &g, 0.3, &lp).unwrap();
        let expected = 2f64.ln() + 0.3 * bf1 + 0.7 * (2.0 / 3.0);
        assert!((c.value - expected).abs() < 1e-6);
        assert_eq!(c.w, Some(0.3));
        assert_eq!(c.component(LossKind::Bf1), Some(bf1));
        assert!((c.recombined() - c.value).abs() <= 1e-12);
        assert!(combined_loss(&p, &g, 1.2, &lp).is_err());
    }

    fn random_case(rng: &mut ChaCha8Rng, size: usize) -> (ProbMap, BinaryMap) {
        let p: Vec<f64> = (0..size * size).map(|_| rng.random_range(0.05..0.95)).collect();
        let (t, l) = (rng.random_range(0..size / 2), rng.random_range(0..size / 2));
        let (h, w) = (rng.random_range(3..=size / 2), rng.random_range(3..=size / 2));
        (ProbMap::new(size, size, p).unwrap(), block(size, size, t, l, h, w))
    }

    #[test]
    fn every_loss_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let (p, g) = random_case(&mut rng, 16);
            for kind in LossKind::ALL {
                let lp = params();
                let base = loss(kind, &p, &g, &lp).unwrap();
                let report = check(p.values(), base.grad.values(), STEP, |x| {
                    let r = loss(kind, &ProbMap::new(16, 16, x.to_vec()).unwrap(), &g, &lp).unwrap();
                    (r.value, r.pool_pattern)
                });
                let tol = if kind == LossKind::Bce { 1e-5 } else { 1e-3 };
                assert!(report.max_rel_err <= tol, "{kind} trial {trial}: {report:?}");
                assert!(report.checked > 200);
            }
        }
    }

    #[test]
    fn loss_ranges_and_degeneracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (p, g) = random_case(&mut rng, 12);
            for kind in [LossKind::Iou, LossKind::Dice, LossKind::Ss, LossKind::Bf1] {
                let v = loss(kind, &p, &g, &params()).unwrap().value;
                assert!((0.0..=1.0).contains(&v), "{kind}: {v}");
            }
            assert!(combined_loss(&p, &g, rng.random(), &params()).unwrap().value >= 0.0);

            let hard = crate::grid::threshold(&p, 0.5).unwrap();
            let c = metrics::confusion(&hard, &g).unwrap();
            let hp = ProbMap::from(&hard);
            let tol = 1e-5;
            assert!((1.0 - iou_loss(&hp, &g, &params()).unwrap().value - metrics::iou(&c)).abs() < tol);
            assert!((1.0 - dice_loss(&hp, &g, &params()).unwrap().value - metrics::dice(&c)).abs() < tol);
            let ss = metrics::ss(&c, 0.5).unwrap();
            assert!((1.0 - ss_loss(&hp, &g, &params()).unwrap().value - ss).abs() < tol);
        }
    }

    #[test]
    fn far_pixels_only_see_the_normalisation_term() {
        // Hard maps: away from the true boundary the gradient must equal the
        // gradient of the sum(b_pd) normalisation path alone.
        let lp = LossParams { theta0: 3, theta: 5, ..params() };
        let g = block(24, 24, 3, 3, 6, 6);
        let p = block(24, 24, 12, 10, 8, 9);
        let pm = ProbMap::from(&p);
        let full = bf1_loss(&pm, &g, &lp).unwrap();

        let eps = lp.eps;
        let mut tape = Tape::new(pm.shape());
        let y = tape.leaf(pm.values().to_vec()).unwrap();
        let gt = tape.constant(g.to_f64()).unwrap();
        let b_pd = tape.boundary(y, lp.theta0).unwrap();
        let b_gt = tape.boundary(gt, lp.theta0).unwrap();
        let ext_gt = tape.extend_boundary(b_gt, lp.theta).unwrap();
        let ext_pd = tape.extend_boundary(b_pd, lp.theta).unwrap();
        let prec = tape.elementwise(b_pd, ext_gt, ElementwiseKind::Mul).unwrap();
        let rec = tape.elementwise(b_gt, ext_pd, ElementwiseKind::Mul).unwrap();
        let (s_pd, s_prec) = (tape.sum(b_pd), tape.sum(prec));
        let (pr, re) = (s_prec / (s_pd + eps), tape.sum(rec) / (tape.sum(b_gt) + eps));
        let den = pr + re + eps;
        let d_pr = -2.0 * re * (re + eps) / (den * den);
        let norm_only = tape
            .backward(&[(b_pd, Seed::Sum(-d_pr * s_prec / ((s_pd + eps) * (s_pd + eps))))])
            .unwrap();
        let norm_only = norm_only.get(y).unwrap();

        let gt_boundary = metrics::boundary_pixels(&g);
        let dist = metrics::distance_transform(&gt_boundary, DistanceMode::Chebyshev);
        let radius = (lp.theta0 + lp.theta - 2) as f64 / 2.0 + 1.0;
        let mut masked = 0;
        for k in 0..pm.shape().len() {
            if dist.values()[k] > radius {
                masked += 1;
                assert_eq!(full.grad.values()[k], norm_only[k], "pixel {k}");
            }
        }
        assert!(masked > 100);
    }

    #[test]
    fn train_loss_names_round_trip() {
        for k in TrainLoss::ALL {
            assert_eq!(k.name().parse::<TrainLoss>().unwrap(), k);
        }
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert!("vgg".parse::<LossKind>().is_err());
    }
}

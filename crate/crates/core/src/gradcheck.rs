//! Finite-difference gradient checking.
//!
//! Analytic gradients are compared with central differences. A coordinate is
//! skipped when either perturbed evaluation lands on a different piece of a
//! piecewise-smooth function (a different max-pool selection or ReLU
//! pattern); there the subgradient is set-valued and the difference quotient
//! straddles a kink.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{BinaryMap, ProbMap};
use crate::losses::{self, LossKind, LossParams};
use crate::nnet::{self, Architecture, ModelParams};

/// Step used by every check in this crate.
pub const STEP: f64 = 1e-4;
/// Pass threshold on the worst relative error.
pub const TOLERANCE: f64 = 1e-3;
/// Denominator floor so that exact zeros compare on an absolute scale.
const REL_FLOOR: f64 = 1e-8;

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let plus = f(&probe);
            probe[k] = x[k] - h;
            let minus = f(&probe);
            probe[k] = x[k];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub max_rel_err: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub excluded: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

/// Compare `analytic` against central differences of `eval`, where `eval`
/// returns the value together with a signature of its active smooth piece.
pub fn check<S: PartialEq>(
    x: &[f64],
    analytic: &[f64],
    h: f64,
    mut eval: impl FnMut(&[f64]) -> (f64, S),
) -> CheckReport {
    let (_, base) = eval(x);
    let mut probe = x.to_vec();
    let mut report = CheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic_at_worst: analytic.first().copied().unwrap_or(0.0),
        numeric_at_worst: 0.0,
        checked: 0,
        excluded: 0,
    };
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let (plus, sp) = eval(&probe);
        probe[k] = x[k] - h;
        let (minus, sm) = eval(&probe);
        probe[k] = x[k];
        if sp != base || sm != base {
            report.excluded += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[k], numeric);
        report.checked += 1;
        if report.checked == 1 || err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = k;
            report.analytic_at_worst = analytic[k];
            report.numeric_at_worst = numeric;
        }
    }
    report
}

/// Losses that can be checked, including the weighted combination.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CheckTarget {
    Loss(LossKind),
    Combined,
    /// Network forward pass followed by the combined loss, differentiated
    /// with respect to every network parameter.
    Model,
}

impl std::str::FromStr for CheckTarget {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(CheckTarget::Combined),
            "model" => Ok(CheckTarget::Model),
            other => other.parse().map(CheckTarget::Loss),
        }
    }
}

/// Weight used for the combined loss in checks.
pub const CHECK_WEIGHT: f64 = 0.3;

/// Random trial inputs: a prediction in `[0.05, 0.95]` and a blocky mask.
pub fn trial_inputs(size: usize, seed: u64, trial: u64) -> Result<(ProbMap, BinaryMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let p: Vec<f64> = (0..size * size).map(|_| rng.random_range(0.05..0.95)).collect();
    let g = random_blob_mask(&mut rng, size)?;
    Ok((ProbMap::new(size, size, p)?, g))
}

fn random_blob_mask(rng: &mut ChaCha8Rng, size: usize) -> Result<BinaryMap> {
    // One or two rectangles plus sparse speckle, so boundaries are never empty.
    let rects: Vec<(usize, usize, usize, usize)> = (0..rng.random_range(1..=2))
        .map(|_| {
            let h = rng.random_range(2..=(size / 2).max(2));
            let w = rng.random_range(2..=(size / 2).max(2));
            (rng.random_range(0..=size - h), rng.random_range(0..=size - w), h, w)
        })
        .collect();
    let speckle: Vec<bool> = (0..size * size).map(|_| rng.random_bool(0.03)).collect();
    BinaryMap::from_fn(size, size, |r, c| {
        speckle[r * size + c]
            || rects
                .iter()
                .any(|&(t, l, h, w)| (t..t + h).contains(&r) && (l..l + w).contains(&c))
    })
}

/// One gradient-check trial of `target` on `size x size` inputs.
pub fn run_trial(
    target: CheckTarget,
    size: usize,
    seed: u64,
    trial: u64,
    params: &LossParams,
) -> Result<CheckReport> {
    let (p, g) = trial_inputs(size, seed, trial)?;
    match target {
        CheckTarget::Loss(_) | CheckTarget::Combined => {
            let eval = |x: &[f64]| -> Result<losses::LossResult> {
                let p = ProbMap::new(size, size, x.to_vec())?;
                match target {
                    CheckTarget::Loss(kind) => losses::loss(kind, &p, &g, params),
                    _ => losses::combined_loss(&p, &g, CHECK_WEIGHT, params),
                }
            };
            let base = eval(p.values())?;
            Ok(check(p.values(), base.grad.values(), STEP, |x| {
                let r = eval(x).expect("perturbed input stays valid");
                (r.value, r.pool_pattern)
            }))
        }
        CheckTarget::Model => {
            let mut model = ModelParams::init(&Architecture::default(), seed ^ trial.rotate_left(17));
            // Jitter the zero-initialised biases so ReLUs see varied signs.
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial));
            for v in model.flat_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
            let base = model.flat().to_vec();
            let (_, _, analytic) = model_objective(&mut model, &base, &p, &g, params, true)?;
            let mut scratch = model.clone();
            Ok(check(&base, &analytic, STEP, |x| {
                let (v, pattern, _) = model_objective(&mut scratch, x, &p, &g, params, false)
                    .expect("perturbed parameters stay valid");
                (v, pattern)
            }))
        }
    }
}

/// Combined loss of the network output for the given flat parameters, the
/// activation pattern of the evaluation, and optionally the gradient.
fn model_objective(
    model: &mut ModelParams,
    flat: &[f64],
    image: &ProbMap,
    g: &BinaryMap,
    params: &LossParams,
    with_grad: bool,
) -> Result<(f64, Vec<u32>, Vec<f64>)> {
    model.flat_mut().copy_from_slice(flat);
    let (out, cache) = nnet::forward(model, image)?;
    let loss = losses::combined_loss(&out, g, CHECK_WEIGHT, params)?;
    let mut pattern = cache.pattern();
    pattern.extend(&loss.pool_pattern);
    let grad = if with_grad {
        nnet::backward(model, &cache, &loss.grad)?.into_flat()
    } else {
        Vec::new()
    };
    Ok((loss.value, pattern, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic() {
        let fd = central_difference(&[1.0, 2.0], 1e-4, |v| v[0] * v[0] + 2.0 * v[0] * v[1] + v[1] * v[1]);
        assert!((fd[0] - 6.0).abs() < 1e-6);
        assert!((fd[1] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn check_skips_kinks() {
        // |x| evaluated at a point within h of the kink.
        let x = [5e-5, 1.0];
        let analytic = [1.0, 1.0];
        let r = check(&x, &analytic, 1e-4, |v| (v[0].abs() + v[1].abs(), [v[0] > 0.0, v[1] > 0.0]));
        assert_eq!((r.checked, r.excluded), (1, 1));
        assert!(r.passed());
    }

    #[test]
    fn check_reports_wrong_gradient() {
        let r = check(&[1.0, 2.0], &[2.0, 5.0], 1e-4, |v| (v[0] * v[0] + v[1] * v[1], ()));
        assert!(!r.passed());
        assert_eq!(r.worst_index, 1);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(0.0, 1e-13) < 1e-4);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}

//! Differentiable map primitives: clipped max-pooling, elementwise arithmetic
//! and global sums, recorded on a [`Tape`] for reverse-mode gradients.
//!
//! Pooling windows are full side lengths (odd, `window x window`) centred on
//! each output pixel and clipped at the image border, so no padding value is
//! ever injected. Among equal maxima the smallest row-major index wins and is
//! the only pixel that receives gradient.

use crate::error::{Error, Result};
use crate::grid::Shape;

/// Argmax bookkeeping of one [`maxpool`] call.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolCache {
    window: usize,
    shape: Shape,
    argmax: Vec<u32>,
    /// Gap between the winning value and the best other value in each window
    /// (`+inf` when the window holds a single pixel).
    margin: Vec<f64>,
}

impl PoolCache {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }

    pub fn margin(&self) -> &[f64] {
        &self.margin
    }

    /// Input pixels whose selection could change under a perturbation of
    /// size `tol`: every pixel within `tol` of a window maximum whose margin
    /// is below `tol`.
    pub fn tie_ambiguous_inputs(&self, input: &[f64], tol: f64) -> Vec<bool> {
        let mut flagged = vec![false; self.shape.len()];
        for (out, (&winner, &margin)) in self.argmax.iter().zip(&self.margin).enumerate() {
            if margin >= tol {
                continue;
            }
            let best = input[winner as usize];
            for k in window_indices(self.shape, out, self.window) {
                if best - input[k] < tol {
                    flagged[k] = true;
                }
            }
        }
        flagged
    }
}

pub fn check_window(shape: Shape, window: usize) -> Result<()> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::param(
            "window",
            format!("{window} must be a positive odd integer"),
        ));
    }
    let limit = 2 * shape.height.min(shape.width) - 1;
    if window > limit {
        return Err(Error::param(
            "window",
            format!("{window} exceeds {limit} for a {shape} map"),
        ));
    }
    Ok(())
}

fn window_indices(shape: Shape, center: usize, window: usize) -> impl Iterator<Item = usize> {
    let r = window / 2;
    let (row, col) = shape.coords(center);
    let rows = row.saturating_sub(r)..(row + r + 1).min(shape.height);
    let cols = col.saturating_sub(r)..(col + r + 1).min(shape.width);
    rows.flat_map(move |i| cols.clone().map(move |j| shape.index(i, j)))
}

/// Max over the clipped `window x window` neighbourhood of every pixel.
pub fn maxpool(input: &[f64], shape: Shape, window: usize) -> Result<(Vec<f64>, PoolCache)> {
    check_window(shape, window)?;
    if input.len() != shape.len() {
        return Err(Error::LengthMismatch {
            expected: shape.len(),
            found: input.len(),
        });
    }
    let n = shape.len();
    let mut out = Vec::with_capacity(n);
    let mut argmax = Vec::with_capacity(n);
    let mut margin = Vec::with_capacity(n);
    for center in 0..n {
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        let mut best_idx = center;
        // Row-major scan with strict comparison keeps the smallest index on ties.
        for k in window_indices(shape, center, window) {
            let v = input[k];
            if v > best {
                second = best;
                best = v;
                best_idx = k;
            } else if v > second {
                second = v;
            }
        }
        out.push(best);
        argmax.push(best_idx as u32);
        margin.push(best - second);
    }
    Ok((
        out,
        PoolCache {
            window,
            shape,
            argmax,
            margin,
        },
    ))
}

/// Route each upstream value to the input pixel its window selected.
pub fn maxpool_backward(upstream: &[f64], cache: &PoolCache) -> Result<Vec<f64>> {
    if upstream.len() != cache.argmax.len() {
        return Err(Error::LengthMismatch {
            expected: cache.argmax.len(),
            found: upstream.len(),
        });
    }
    let mut grad = vec![0.0; cache.shape.len()];
    for (&g, &k) in upstream.iter().zip(&cache.argmax) {
        grad[k as usize] += g;
    }
    Ok(grad)
}

/// Inner boundary `pool(1 - y, theta0) - (1 - y)` without gradient bookkeeping.
pub fn boundary_map(y: &[f64], shape: Shape, theta0: usize) -> Result<Vec<f64>> {
    let inv: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let (pooled, _) = maxpool(&inv, shape, theta0)?;
    Ok(pooled.iter().zip(&inv).map(|(p, q)| p - q).collect())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Mul,
    Sub,
    Add,
}

impl ElementwiseKind {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementwiseKind::Mul => a * b,
            ElementwiseKind::Sub => a - b,
            ElementwiseKind::Add => a + b,
        }
    }
}

pub fn elementwise(a: &[f64], b: &[f64], kind: ElementwiseKind) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| kind.apply(x, y)).collect())
}

pub fn scalar_sum(m: &[f64]) -> f64 {
    m.iter().sum()
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    OneMinus(NodeId),
    MaxPool(NodeId, PoolCache),
    Elementwise(ElementwiseKind, NodeId, NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
    /// Whether the node depends on a leaf.
    tracked: bool,
}

/// Gradient seed for [`Tape::backward`].
#[derive(Clone, Debug)]
pub enum Seed {
    /// Upstream derivative of the scalar `scalar_sum(node)`.
    Sum(f64),
    /// Upstream derivative for every pixel of the node.
    Map(Vec<f64>),
}

/// Forward record of map operations over a single shape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward pass walks it in reverse.
#[derive(Clone, Debug)]
pub struct Tape {
    shape: Shape,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new(shape: Shape) -> Self {
        Tape {
            shape,
            nodes: Vec::new(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    fn push(&mut self, value: Vec<f64>, op: Op, tracked: bool) -> NodeId {
        self.nodes.push(Node { value, op, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.shape.len() {
            return Err(Error::LengthMismatch {
                expected: self.shape.len(),
                found: values.len(),
            });
        }
        Ok(())
    }

    /// Differentiable input.
    pub fn leaf(&mut self, values: Vec<f64>) -> Result<NodeId> {
        self.check_len(&values)?;
        Ok(self.push(values, Op::Leaf, true))
    }

    /// Input that never receives gradient.
    pub fn constant(&mut self, values: Vec<f64>) -> Result<NodeId> {
        self.check_len(&values)?;
        Ok(self.push(values, Op::Constant, false))
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn sum(&self, id: NodeId) -> f64 {
        scalar_sum(self.value(id))
    }

    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).iter().map(|v| 1.0 - v).collect();
        let tracked = self.nodes[x.0].tracked;
        self.push(value, Op::OneMinus(x), tracked)
    }

    pub fn maxpool(&mut self, x: NodeId, window: usize) -> Result<NodeId> {
        let (value, cache) = maxpool(self.value(x), self.shape, window)?;
        let tracked = self.nodes[x.0].tracked;
        Ok(self.push(value, Op::MaxPool(x, cache), tracked))
    }

    pub fn elementwise(&mut self, a: NodeId, b: NodeId, kind: ElementwiseKind) -> Result<NodeId> {
        let value = elementwise(self.value(a), self.value(b), kind)?;
        let tracked = self.nodes[a.0].tracked || self.nodes[b.0].tracked;
        Ok(self.push(value, Op::Elementwise(kind, a, b), tracked))
    }

    /// `pool(1 - y, theta0) - (1 - y)`.
    pub fn boundary(&mut self, y: NodeId, theta0: usize) -> Result<NodeId> {
        let inv = self.one_minus(y);
        let pooled = self.maxpool(inv, theta0)?;
        self.elementwise(pooled, inv, ElementwiseKind::Sub)
    }

    /// `pool(b, theta)`: each boundary pixel grown to a `theta x theta` square.
    pub fn extend_boundary(&mut self, b: NodeId, theta: usize) -> Result<NodeId> {
        self.maxpool(b, theta)
    }

    /// Argmax indices of every pooling node that depends on a leaf, in
    /// recording order. Two evaluations with equal patterns lie on the same
    /// smooth piece of the function.
    pub fn pool_pattern(&self) -> Vec<u32> {
        self.nodes
            .iter()
            .filter(|n| n.tracked)
            .filter_map(|n| match &n.op {
                Op::MaxPool(_, cache) => Some(cache.argmax.iter().copied()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Reverse sweep from the given seeds.
    pub fn backward(&self, seeds: &[(NodeId, Seed)]) -> Result<Gradients> {
        let n = self.shape.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (id, seed) in seeds {
            if id.0 >= self.nodes.len() {
                return Err(Error::param("seed", format!("unknown node {}", id.0)));
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; n]);
            match seed {
                Seed::Sum(s) => slot.iter_mut().for_each(|g| *g += s),
                Seed::Map(m) => {
                    self.check_len(m)?;
                    slot.iter_mut().zip(m).for_each(|(g, u)| *g += u);
                }
            }
        }

        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::OneMinus(x) => self.accumulate(&mut grads, *x, g.iter().map(|v| -v)),
                Op::MaxPool(x, cache) => {
                    let routed = maxpool_backward(&g, cache)?;
                    self.accumulate(&mut grads, *x, routed.into_iter());
                }
                Op::Elementwise(kind, a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    match kind {
                        ElementwiseKind::Mul => {
                            self.accumulate(&mut grads, *a, g.iter().zip(vb).map(|(u, y)| u * y));
                            self.accumulate(&mut grads, *b, g.iter().zip(va).map(|(u, x)| u * x));
                        }
                        ElementwiseKind::Add => {
                            self.accumulate(&mut grads, *a, g.iter().copied());
                            self.accumulate(&mut grads, *b, g.iter().copied());
                        }
                        ElementwiseKind::Sub => {
                            self.accumulate(&mut grads, *a, g.iter().copied());
                            self.accumulate(&mut grads, *b, g.iter().map(|v| -v));
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: NodeId,
        contribution: impl Iterator<Item = f64>,
    ) {
        if !self.nodes[target.0].tracked {
            return;
        }
        let slot = grads[target.0].get_or_insert_with(|| vec![0.0; self.shape.len()]);
        slot.iter_mut().zip(contribution).for_each(|(g, c)| *g += c);
    }
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `id`; `None` when no seed reaches it.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::central_difference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(h: usize, w: usize) -> Shape {
        Shape::new(h, w).unwrap()
    }

    /// Dilation by a clipped square written from the definition.
    fn brute_dilate(m: &[u8], s: Shape, window: usize) -> Vec<u8> {
        let r = (window / 2) as isize;
        let mut out = vec![0u8; s.len()];
        for i in 0..s.height as isize {
            for j in 0..s.width as isize {
                let mut hit = 0;
                for di in -r..=r {
                    for dj in -r..=r {
                        let (y, x) = (i + di, j + dj);
                        if y >= 0 && x >= 0 && (y as usize) < s.height && (x as usize) < s.width {
                            hit |= m[s.index(y as usize, x as usize)];
                        }
                    }
                }
                out[s.index(i as usize, j as usize)] = hit;
            }
        }
        out
    }

    #[test]
    fn window_validation() {
        let s = shape(5, 5);
        assert!(maxpool(&[0.0; 25], s, 0).is_err());
        assert!(maxpool(&[0.0; 25], s, 2).is_err());
        assert!(maxpool(&[0.0; 25], s, 9).is_ok());
        assert!(maxpool(&[0.0; 25], s, 11).is_err());
    }

    #[test]
    fn constant_and_point_maps() {
        let (out, _) = maxpool(&[0.0; 25], shape(5, 5), 3).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));

        let mut m = vec![0.0; 9];
        m[4] = 1.0;
        let (out, cache) = maxpool(&m, shape(3, 3), 3).unwrap();
        assert!(out.iter().all(|&v| v == 1.0));
        let g = maxpool_backward(&[1.0; 9], &cache).unwrap();
        let mut expected = vec![0.0; 9];
        expected[4] = 9.0;
        assert_eq!(g, expected);
        assert!(maxpool_backward(&[0.0; 9], &cache).unwrap().iter().all(|&v| v == 0.0));
        assert!(maxpool_backward(&[0.0; 4], &cache).is_err());
    }

    #[test]
    fn corner_uses_clipped_neighbourhood() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = shape(4, 4);
        let m: Vec<f64> = (0..16).map(|_| rng.random()).collect();
        let (out, _) = maxpool(&m, s, 3).unwrap();
        let expected = [m[0], m[1], m[4], m[5]].into_iter().fold(f64::MIN, f64::max);
        assert_eq!(out[0], expected);
    }

    #[test]
    fn ties_pick_smallest_index() {
        let (_, cache) = maxpool(&[1.0; 9], shape(3, 3), 3).unwrap();
        assert_eq!(cache.argmax()[4], 0);
        assert_eq!(cache.argmax()[8], 4);
        assert!(cache.margin().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences_away_from_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = shape(6, 6);
        let h = 1e-4;
        for _ in 0..10 {
            let m: Vec<f64> = (0..36).map(|_| rng.random()).collect();
            let (_, cache) = maxpool(&m, s, 3).unwrap();
            let analytic = maxpool_backward(&[1.0; 36], &cache).unwrap();
            let ambiguous = cache.tie_ambiguous_inputs(&m, 2.0 * h);
            let fd = central_difference(&m, h, |x| scalar_sum(&maxpool(x, s, 3).unwrap().0));
            for k in 0..36 {
                if ambiguous[k] {
                    continue;
                }
                let denom = analytic[k].abs().max(fd[k].abs()).max(1e-8);
                assert!((analytic[k] - fd[k]).abs() / denom <= 1e-6, "pixel {k}");
            }
        }
    }

    #[test]
    fn maxpool_equals_dilation_on_binary_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s = shape(rng.random_range(1..=32), rng.random_range(1..=32));
            let density: f64 = rng.random_range(0.02..0.5);
            let m: Vec<u8> = (0..s.len()).map(|_| u8::from(rng.random_bool(density))).collect();
            let limit = 2 * s.height.min(s.width) - 1;
            let window = 2 * rng.random_range(0..=(limit.min(9) / 2)) + 1;
            let mf: Vec<f64> = m.iter().map(|&v| f64::from(v)).collect();
            let (out, _) = maxpool(&mf, s, window).unwrap();
            let expected: Vec<f64> = brute_dilate(&m, s, window).iter().map(|&v| f64::from(v)).collect();
            assert_eq!(out, expected);
        }
    }

    #[test]
    fn boundary_of_centred_block() {
        let s = shape(5, 5);
        let y: Vec<f64> = (0..25)
            .map(|k| {
                let (i, j) = s.coords(k);
                f64::from((1..=3).contains(&i) && (1..=3).contains(&j))
            })
            .collect();
        let b = boundary_map(&y, s, 3).unwrap();
        // Exhaustive scan of the definition: foreground with background in the 3x3 window.
        for k in 0..25 {
            let (i, j) = s.coords(k);
            let perimeter = y[k] == 1.0 && !(i == 2 && j == 2);
            assert_eq!(b[k], f64::from(perimeter), "pixel ({i},{j})");
        }
        assert_eq!(b.iter().sum::<f64>(), 8.0);
        assert!(boundary_map(&[0.0; 25], s, 3).unwrap().iter().all(|&v| v == 0.0));
        assert!(boundary_map(&[1.0; 25], s, 3).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_is_binary_subset_of_foreground() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let s = shape(rng.random_range(2..20), rng.random_range(2..20));
            let y: Vec<f64> = (0..s.len()).map(|_| f64::from(u8::from(rng.random_bool(0.6)))).collect();
            let b = boundary_map(&y, s, 3).unwrap();
            for (bv, yv) in b.iter().zip(&y) {
                assert!(*bv == 0.0 || *bv == 1.0);
                assert!(*bv <= *yv);
            }
        }
    }

    #[test]
    fn extend_boundary_point_dilation() {
        let s = shape(7, 7);
        let mut tape = Tape::new(s);
        let mut m = vec![0.0; 49];
        m[s.index(3, 3)] = 1.0;
        let x = tape.constant(m).unwrap();
        let e3 = tape.extend_boundary(x, 3).unwrap();
        let e5 = tape.extend_boundary(x, 5).unwrap();
        for k in 0..49 {
            let (i, j) = s.coords(k);
            let d = i.abs_diff(3).max(j.abs_diff(3));
            assert_eq!(tape.value(e3)[k], f64::from(d <= 1));
            assert_eq!(tape.value(e5)[k], f64::from(d <= 2));
        }

        let s = shape(5, 5);
        let mut corner = vec![0u8; 25];
        corner[0] = 1;
        let (out, _) = maxpool(&corner.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(), s, 5).unwrap();
        let expected: Vec<f64> = brute_dilate(&corner, s, 5).iter().map(|&v| f64::from(v)).collect();
        assert_eq!(out, expected);
        for k in 0..25 {
            let (i, j) = s.coords(k);
            assert_eq!(out[k], f64::from(i <= 2 && j <= 2));
        }
    }

    #[test]
    fn elementwise_semantics() {
        assert_eq!(
            elementwise(&[1.0, 0.0], &[0.5, 0.9], ElementwiseKind::Mul).unwrap(),
            vec![0.5, 0.0]
        );
        assert_eq!(elementwise(&[1.0], &[0.25], ElementwiseKind::Sub).unwrap(), vec![0.75]);
        assert_eq!(elementwise(&[1.0], &[0.25], ElementwiseKind::Add).unwrap(), vec![1.25]);
        assert!(elementwise(&[1.0], &[0.25, 1.0], ElementwiseKind::Add).is_err());
        assert_eq!(scalar_sum(&[0.0; 7]), 0.0);
    }

    #[test]
    fn sum_of_product_gradient_is_other_operand() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = shape(4, 5);
        let a: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        let mut tape = Tape::new(s);
        let na = tape.leaf(a.clone()).unwrap();
        let nb = tape.constant(b.clone()).unwrap();
        let prod = tape.elementwise(na, nb, ElementwiseKind::Mul).unwrap();
        let grads = tape.backward(&[(prod, Seed::Sum(1.0))]).unwrap();
        assert_eq!(grads.get(na).unwrap(), b.as_slice());
        assert!(grads.get(nb).is_none());

        let fd = central_difference(&a, 1e-4, |x| {
            scalar_sum(&elementwise(x, &b, ElementwiseKind::Mul).unwrap())
        });
        for (f, e) in fd.iter().zip(&b) {
            assert!((f - e).abs() < 1e-9);
        }
    }

    #[test]
    fn composite_pipeline_gradient() {
        // sum(pool(pool(1-x,3)-(1-x),5) * c) + 0.5 * sum(pool(1-x,3)-(1-x))
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = shape(9, 9);
        let h = 1e-4;
        let c: Vec<f64> = (0..81).map(|_| rng.random()).collect();
        let eval = |x: &[f64]| -> (f64, Vec<u32>, Tape, NodeId, NodeId, NodeId) {
            let mut tape = Tape::new(s);
            let leaf = tape.leaf(x.to_vec()).unwrap();
            let cn = tape.constant(c.clone()).unwrap();
            let b = tape.boundary(leaf, 3).unwrap();
            let e = tape.extend_boundary(b, 5).unwrap();
            let prod = tape.elementwise(e, cn, ElementwiseKind::Mul).unwrap();
            let v = tape.sum(prod) + 0.5 * tape.sum(b);
            (v, tape.pool_pattern(), tape, leaf, b, prod)
        };
        for _ in 0..5 {
            let x: Vec<f64> = (0..81).map(|_| rng.random_range(0.05..0.95)).collect();
            let (_, pattern, tape, leaf, b, prod) = eval(&x);
            let grads = tape
                .backward(&[(prod, Seed::Sum(1.0)), (b, Seed::Sum(0.5))])
                .unwrap();
            let analytic = grads.get(leaf).unwrap();
            for k in 0..81 {
                let mut xp = x.clone();
                xp[k] += h;
                let (fp, pp, ..) = eval(&xp);
                xp[k] -= 2.0 * h;
                let (fm, pm, ..) = eval(&xp);
                if pp != pattern || pm != pattern {
                    continue;
                }
                let fd = (fp - fm) / (2.0 * h);
                let denom = analytic[k].abs().max(fd.abs()).max(1e-8);
                assert!((analytic[k] - fd).abs() / denom <= 1e-6);
            }
        }
    }

    #[test]
    fn repeated_passes_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = shape(8, 8);
        let x: Vec<f64> = (0..64).map(|_| (rng.random_range(0..4) as f64) / 3.0).collect();
        let run = || {
            let mut tape = Tape::new(s);
            let leaf = tape.leaf(x.clone()).unwrap();
            let b = tape.boundary(leaf, 3).unwrap();
            let e = tape.extend_boundary(b, 3).unwrap();
            let g = tape.backward(&[(e, Seed::Sum(1.0))]).unwrap();
            (tape.pool_pattern(), g.get(leaf).unwrap().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn seeds_are_validated() {
        let mut tape = Tape::new(shape(2, 2));
        let leaf = tape.leaf(vec![0.0; 4]).unwrap();
        assert!(tape.leaf(vec![0.0; 3]).is_err());
        assert!(tape.backward(&[(leaf, Seed::Map(vec![1.0; 3]))]).is_err());
    }
}

//! Encrypted-domain building blocks: masked maxima, one-hot argmax,
//! quadrant-safe histogram binning and plaintext-kernel convolution.
//!
//! Every kernel emits the same operation sequence for any data of a given
//! shape.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::graph::{ExprId, Graph};

/// Row-major 2-D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data does not match shape");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    /// Clamp-to-edge read.
    pub fn clamped(&self, x: isize, y: isize) -> T {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }
}

/// A gradient sample contributing `weight` to the bin containing
/// `atan2(dy, dx)`. The angle itself is never formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gradient {
    pub dx: ExprId,
    pub dy: ExprId,
    pub weight: ExprId,
}

/// Index selector: semantically one entry is 1 and the rest are 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHot {
    pub mask: Vec<ExprId>,
}

/// Half-open angular bins `[aᵢ, aᵢ₊₁)` covering the circle, the last bin
/// wrapping to `a₀ + 2π`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSpec {
    boundaries: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

fn clean(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

impl HistogramSpec {
    /// `num_bins` equal bins starting at angle 0.
    pub fn uniform(num_bins: usize) -> Result<Self> {
        let bounds = (0..num_bins)
            .map(|i| TAU * i as f64 / num_bins as f64)
            .collect();
        Self::with_boundaries(bounds)
    }

    pub fn with_boundaries(boundaries: Vec<f64>) -> Result<Self> {
        let n = boundaries.len();
        if n < 3 {
            return Err(Error::InvalidArgument(
                "a histogram needs at least 3 bins so each spans less than π".into(),
            ));
        }
        for i in 0..n {
            let lo = boundaries[i];
            let hi = if i + 1 < n {
                boundaries[i + 1]
            } else {
                boundaries[0] + TAU
            };
            if !(hi > lo) || hi - lo >= PI {
                return Err(Error::InvalidArgument(format!(
                    "bin {i} must be nonempty and narrower than π"
                )));
            }
        }
        let cos = boundaries.iter().map(|a| clean(a.cos())).collect();
        let sin = boundaries.iter().map(|a| clean(a.sin())).collect();
        Ok(Self {
            boundaries,
            cos,
            sin,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.boundaries.len()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// `(lower, upper)` angle of bin `i`; the upper bound of the last bin is
    /// past 2π.
    pub fn bin_range(&self, i: usize) -> (f64, f64) {
        let n = self.num_bins();
        let hi = if i + 1 < n {
            self.boundaries[i + 1]
        } else {
            self.boundaries[0] + TAU
        };
        (self.boundaries[i], hi)
    }

    /// Plaintext `(cos aᵢ, sin aᵢ)` with values below 1e-12 cleaned to 0.
    pub fn direction(&self, i: usize) -> (f64, f64) {
        let i = i % self.num_bins();
        (self.cos[i], self.sin[i])
    }
}

/// `max(a, b)` as `[a > b]·(a − b) + b`.
pub fn max2(g: &mut Graph, a: ExprId, b: ExprId) -> ExprId {
    let c = g.compare(a, b);
    g.select(c, a, b)
}

/// Sequential fold seeded with 0; only correct for non-negative inputs.
/// Consumes one select-level per element.
pub fn running_max(g: &mut Graph, ls: &[ExprId]) -> Result<ExprId> {
    if ls.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut m = g.plain(0.0);
    for &e in ls {
        let b = g.compare(e, m);
        m = g.select(b, e, m);
    }
    Ok(m)
}

/// Tournament maximum split at `len / 2`; ⌈log₂ N⌉ select-levels.
pub fn vec_max(g: &mut Graph, ls: &[ExprId]) -> Result<ExprId> {
    match ls.len() {
        0 => Err(Error::EmptyInput),
        1 => Ok(ls[0]),
        n => {
            let l = vec_max(g, &ls[..n / 2])?;
            let r = vec_max(g, &ls[n / 2..])?;
            Ok(max2(g, l, r))
        }
    }
}

/// Tournament maximum that also tracks a one-hot of the winning index.
/// Ties go to the lower index.
pub fn vec_argmax_onehot(g: &mut Graph, ls: &[ExprId]) -> Result<(ExprId, OneHot)> {
    match ls.len() {
        0 => Err(Error::EmptyInput),
        1 => {
            let one = g.plain(1.0);
            Ok((ls[0], OneHot { mask: vec![one] }))
        }
        n => {
            let (ml, hl) = vec_argmax_onehot(g, &ls[..n / 2])?;
            let (mr, hr) = vec_argmax_onehot(g, &ls[n / 2..])?;
            let left_wins = g.ge(ml, mr);
            let right_wins = g.not(left_wins);
            let m = g.select(left_wins, ml, mr);
            let mut mask = Vec::with_capacity(n);
            for h in hl.mask {
                mask.push(g.mul(left_wins, h));
            }
            for h in hr.mask {
                mask.push(g.mul(right_wins, h));
            }
            Ok((m, OneHot { mask }))
        }
    }
}

/// `[cos a·dy − sin a·dx ≥ 0]`: the gradient lies in the closed half-plane
/// counter-clockwise of boundary `a`.
fn boundary_test(g: &mut Graph, grad: &Gradient, cos: f64, sin: f64) -> ExprId {
    let cy = g.mul_plain(grad.dy, cos);
    let sx = g.mul_plain(grad.dx, sin);
    let x = g.sub(cy, sx);
    let zero = g.plain(0.0);
    let neg = g.compare(zero, x);
    g.not(neg)
}

/// Membership of the gradient direction in bin `i`, full circle.
pub fn bin_mask(g: &mut Graph, grad: &Gradient, spec: &HistogramSpec, i: usize) -> ExprId {
    let (c0, s0) = spec.direction(i);
    let (c1, s1) = spec.direction(i + 1);
    let lo = boundary_test(g, grad, c0, s0);
    let hi = boundary_test(g, grad, c1, s1);
    let not_hi = g.not(hi);
    g.mul(lo, not_hi)
}

/// The literal `tan(aᵢ)·dx ≤ dy < tan(aᵢ₊₁)·dx` form, meaningful only for
/// `dx > 0`. Bins not contained in the right half-plane `[-π/2, π/2]`
/// return a constant 0.
pub fn bin_mask_tan(g: &mut Graph, grad: &Gradient, spec: &HistogramSpec, i: usize) -> ExprId {
    const SLACK: f64 = 1e-12;
    let (lo, hi) = spec.bin_range(i);
    let mut lo = lo.rem_euclid(TAU);
    if lo >= PI - SLACK {
        lo -= TAU;
    }
    let hi = lo + (hi - spec.bin_range(i).0);
    if lo < -FRAC_PI_2 - SLACK || hi > FRAC_PI_2 + SLACK {
        return g.plain(0.0);
    }
    let test = |g: &mut Graph, a: f64| -> ExprId {
        if (a + FRAC_PI_2).abs() <= SLACK {
            // every dx > 0 direction is above −π/2
            g.plain(1.0)
        } else if (a - FRAC_PI_2).abs() <= SLACK {
            g.plain(0.0)
        } else {
            let t = g.mul_plain(grad.dx, a.tan());
            g.ge(grad.dy, t)
        }
    };
    let c_lo = test(g, lo);
    let c_hi = test(g, hi);
    let not_hi = g.not(c_hi);
    g.mul(c_lo, not_hi)
}

/// Every bin receives `mask·weight` from every gradient.
pub fn weighted_histogram(g: &mut Graph, grads: &[Gradient], spec: &HistogramSpec) -> Vec<ExprId> {
    let mut bins: Vec<Vec<ExprId>> = vec![Vec::with_capacity(grads.len()); spec.num_bins()];
    for grad in grads {
        for (i, bin) in bins.iter_mut().enumerate() {
            let m = bin_mask(g, grad, spec, i);
            bin.push(g.mul(m, grad.weight));
        }
    }
    bins.iter().map(|terms| g.sum(terms)).collect()
}

/// True convolution with a plaintext kernel, clamp-to-edge borders. Zero
/// kernel entries are skipped.
pub fn convolve2d(g: &mut Graph, img: &Grid<ExprId>, kernel: &Grid<f64>) -> Result<Grid<ExprId>> {
    if kernel.width.is_multiple_of(2) || kernel.height.is_multiple_of(2) {
        return Err(Error::InvalidArgument(
            "convolution kernel dimensions must be odd".into(),
        ));
    }
    let (rx, ry) = ((kernel.width / 2) as isize, (kernel.height / 2) as isize);
    let mut terms = Vec::with_capacity(kernel.data.len());
    Ok(Grid::from_fn(img.width, img.height, |x, y| {
        terms.clear();
        for ky in 0..kernel.height {
            for kx in 0..kernel.width {
                let w = kernel.get(kx, ky);
                if w == 0.0 {
                    continue;
                }
                let sx = x as isize + rx - kx as isize;
                let sy = y as isize + ry - ky as isize;
                let v = img.clamped(sx, sy);
                terms.push(g.mul_plain(v, w));
            }
        }
        g.sum(&terms)
    }))
}

/// Separable convolution by the same odd 1-D kernel along rows then
/// columns.
pub fn convolve_separable(g: &mut Graph, img: &Grid<ExprId>, k: &[f64]) -> Result<Grid<ExprId>> {
    let row = Grid::new(k.len(), 1, k.to_vec());
    let col = Grid::new(1, k.len(), k.to_vec());
    let tmp = convolve2d(g, img, &row)?;
    convolve2d(g, &tmp, &col)
}

/// Normalized sampled Gaussian of radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ServerEval;
    use crate::sim::{encrypt, SimParams};

    fn inputs(g: &mut Graph, vals: &[f64]) -> Vec<ExprId> {
        let p = SimParams::exact(20);
        vals.iter().map(|&v| g.input(encrypt(v, &p))).collect()
    }

    #[test]
    fn max2_examples() {
        let mut g = Graph::new();
        let x = inputs(&mut g, &[5.0, 3.0]);
        let m = max2(&mut g, x[0], x[1]);
        assert_eq!(g.eval_direct(&[m], &[5.0, 3.0]), vec![5.0]);
        assert_eq!(max2(&mut g, x[0], x[0]), x[0]);
    }

    #[test]
    fn empty_inputs_rejected() {
        let mut g = Graph::new();
        assert_eq!(running_max(&mut g, &[]), Err(Error::EmptyInput));
        assert_eq!(vec_max(&mut g, &[]), Err(Error::EmptyInput));
        assert_eq!(vec_argmax_onehot(&mut g, &[]), Err(Error::EmptyInput));
    }

    #[test]
    fn argmax_tie_goes_low() {
        let mut g = Graph::new();
        let x = inputs(&mut g, &[2.0, 2.0]);
        let (m, oh) = vec_argmax_onehot(&mut g, &x).unwrap();
        let mut roots = vec![m];
        roots.extend(&oh.mask);
        assert_eq!(g.eval_direct(&roots, &[2.0, 2.0]), vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn running_max_matches_fold() {
        let mut g = Graph::new();
        let vals = [1.0, 9.0, 4.0, 6.0];
        let x = inputs(&mut g, &vals);
        let m = running_max(&mut g, &x).unwrap();
        assert_eq!(g.eval_direct(&[m], &vals), vec![9.0]);
    }

    #[test]
    fn bin_mask_examples() {
        let spec = HistogramSpec::uniform(8).unwrap();
        for ((dx, dy), want) in [((2.0, 1.0), 0), ((0.0, 1.0), 2), ((-1.0, 0.0), 4)] {
            let mut g = Graph::new();
            let x = inputs(&mut g, &[dx, dy]);
            let grad = Gradient {
                dx: x[0],
                dy: x[1],
                weight: x[0],
            };
            let masks: Vec<ExprId> = (0..8).map(|i| bin_mask(&mut g, &grad, &spec, i)).collect();
            let vals = g.eval_direct(&masks, &[dx, dy]);
            let hot: Vec<usize> = (0..8).filter(|&i| vals[i] == 1.0).collect();
            assert_eq!(hot, vec![want], "({dx}, {dy})");
        }
    }

    #[test]
    fn histogram_spec_validation() {
        assert!(HistogramSpec::uniform(2).is_err());
        assert!(HistogramSpec::with_boundaries(vec![0.0, 0.5, 0.4]).is_err());
        assert!(HistogramSpec::with_boundaries(vec![0.0, 3.5, 4.0]).is_err());
        assert_eq!(HistogramSpec::uniform(36).unwrap().num_bins(), 36);
    }

    #[test]
    fn single_gradient_histogram() {
        let spec = HistogramSpec::uniform(36).unwrap();
        let mut g = Graph::new();
        let vals = [1.0, 1.0, 2.5];
        let x = inputs(&mut g, &vals);
        let grad = Gradient {
            dx: x[0],
            dy: x[1],
            weight: x[2],
        };
        let bins = weighted_histogram(&mut g, &[grad], &spec);
        let out = g.eval_direct(&bins, &vals);
        assert_eq!(out[4], 2.5);
        assert_eq!(out.iter().sum::<f64>(), 2.5);
        let empty = weighted_histogram(&mut g, &[], &spec);
        assert!(empty.iter().all(|&b| g.as_plain(b) == Some(0.0)));
    }

    #[test]
    fn convolution_examples() {
        let mut g = Graph::new();
        let vals: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let x = inputs(&mut g, &vals);
        let img = Grid::new(4, 4, x);
        let mut id = Grid::new(3, 3, vec![0.0; 9]);
        id.data[4] = 1.0;
        let out = convolve2d(&mut g, &img, &id).unwrap();
        assert_eq!(out.data, img.data);
        assert!(convolve2d(&mut g, &img, &Grid::new(2, 1, vec![0.5, 0.5])).is_err());

        let mut g = Graph::new();
        let c = inputs(&mut g, &[0.7; 16]);
        let img = Grid::new(4, 4, c);
        let boxk = Grid::new(3, 3, vec![1.0 / 9.0; 9]);
        let out = convolve2d(&mut g, &img, &boxk).unwrap();
        for v in g.eval_direct(&out.data, &[0.7; 16]) {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_consumes_one_plain_level() {
        let p = SimParams::exact(5);
        let mut g = Graph::new();
        let x: Vec<ExprId> = (0..9).map(|i| g.input(encrypt(i as f64, &p))).collect();
        let img = Grid::new(3, 3, x);
        let out = convolve2d(&mut g, &img, &Grid::new(3, 3, vec![0.1; 9])).unwrap();
        let mut ev = ServerEval::new(&g, p, 0, &out.data);
        ev.evaluate_all().unwrap();
        for &o in &out.data {
            match ev.take(o) {
                crate::graph::Value::Cipher(c) => assert_eq!(c.level(), 4),
                v => panic!("unexpected {v:?}"),
            }
        }
    }

    #[test]
    fn gaussian_kernel_is_normalized() {
        let k = gaussian_kernel(1.6);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

//! Plaintext reference implementation of the same simplified detector.
//!
//! Shares no code with the circuit builder. Every comparison is
//! three-valued: a difference within `ε·max(1, |a|, |b|)` of zero is
//! undecided, since the encrypted evaluation order may round it either way.
//! Candidates whose acceptance is undecided are reported as exclusions, and
//! orientations whose winning bin is not separated from the runner-up are
//! left unknown.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernels::Grid;
use crate::pipeline::config::{OrientationWeight, PipelineConfig};
use crate::pipeline::keypoint::{Keypoint, Site};

/// Kleene logic value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tri {
    False,
    True,
    Unknown,
}

impl Tri {
    pub fn and(self, o: Tri) -> Tri {
        match (self, o) {
            (Tri::False, _) | (_, Tri::False) => Tri::False,
            (Tri::True, Tri::True) => Tri::True,
            _ => Tri::Unknown,
        }
    }

    pub fn or(self, o: Tri) -> Tri {
        match (self, o) {
            (Tri::True, _) | (_, Tri::True) => Tri::True,
            (Tri::False, Tri::False) => Tri::False,
            _ => Tri::Unknown,
        }
    }

    pub fn not(self) -> Tri {
        match self {
            Tri::False => Tri::True,
            Tri::True => Tri::False,
            Tri::Unknown => Tri::Unknown,
        }
    }
}

/// `[a > b]` with an ε-band around equality.
pub fn greater(a: f64, b: f64, eps: f64) -> Tri {
    let band = eps * 1f64.max(a.abs()).max(b.abs());
    let d = a - b;
    if d > band {
        Tri::True
    } else if d < -band {
        Tri::False
    } else {
        Tri::Unknown
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleResult {
    pub keypoints: Vec<Keypoint>,
    /// Candidates whose acceptance could not be decided.
    pub exclusions: Vec<Site>,
    /// Accepted keypoints whose orientation could not be decided.
    pub orientation_exclusions: Vec<Site>,
}

fn blur(img: &Grid<f64>, sigma: f64) -> Grid<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let (w, h) = (img.width as isize, img.height as isize);
    let at = |g: &Grid<f64>, x: isize, y: isize| {
        g.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize)
    };
    let rows = Grid::from_fn(img.width, img.height, |x, y| {
        (-r..=r)
            .map(|i| k[(i + r) as usize] * at(img, x as isize - i, y as isize))
            .sum()
    });
    Grid::from_fn(img.width, img.height, |x, y| {
        (-r..=r)
            .map(|i| k[(i + r) as usize] * at(&rows, x as isize, y as isize - i))
            .sum()
    })
}

/// Gaussian pyramid, one `Vec` of levels per octave.
pub fn pyramid(img: &Image, cfg: &PipelineConfig) -> Vec<Vec<Grid<f64>>> {
    let s = cfg.scales_per_octave as f64;
    let mut out: Vec<Vec<Grid<f64>>> = Vec::new();
    for o in 0..cfg.octaves {
        let mut levels = Vec::new();
        if o == 0 {
            for k in 0..cfg.levels_per_octave() {
                levels.push(blur(img, cfg.base_sigma * 2f64.powf(k as f64 / s)));
            }
        } else {
            let prev = &out[o - 1][cfg.scales_per_octave];
            let base = Grid::from_fn(prev.width / 2, prev.height / 2, |x, y| {
                prev.get(2 * x, 2 * y)
            });
            for k in 1..cfg.levels_per_octave() {
                let inc = cfg.base_sigma * (4f64.powf(k as f64 / s) - 1.0).sqrt();
                levels.push(blur(&base, inc));
            }
            levels.insert(0, base);
        }
        out.push(levels);
    }
    out
}

/// Cofactor matrix of a 3×3 matrix; for symmetric input this is the
/// adjugate.
fn cofactors(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
            let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
            // cyclic index order absorbs the checkerboard sign
            c[i][j] = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        }
    }
    c
}

struct Localization {
    accept: Tri,
    offset: [f64; 3],
}

fn localize(dog: &[Grid<f64>], k: usize, x: usize, y: usize, cfg: &PipelineConfig) -> Localization {
    let eps = cfg.oracle_epsilon;
    let d = |dx: isize, dy: isize, ds: isize| {
        dog[(k as isize + ds) as usize].get((x as isize + dx) as usize, (y as isize + dy) as usize)
    };
    let unit = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
    let at = |v: [isize; 3]| d(v[0], v[1], v[2]);
    let mut grad = [0.0; 3];
    let mut hess = [[0.0; 3]; 3];
    for i in 0..3 {
        let e = unit[i];
        let p = at(e);
        let m = at([-e[0], -e[1], -e[2]]);
        grad[i] = (p - m) / 2.0;
        hess[i][i] = p + m - 2.0 * d(0, 0, 0);
        for j in 0..3 {
            if i == j {
                continue;
            }
            let f = unit[j];
            let s = |a: isize, b: isize| {
                at([
                    a * e[0] + b * f[0],
                    a * e[1] + b * f[1],
                    a * e[2] + b * f[2],
                ])
            };
            hess[i][j] = (s(1, 1) - s(1, -1) - s(-1, 1) + s(-1, -1)) / 4.0;
        }
    }
    let adj = cofactors(&hess);
    let det: f64 = (0..3).map(|j| hess[0][j] * adj[0][j]).sum();
    let det_scale: f64 = (0..3).map(|j| (hess[0][j] * adj[0][j]).abs()).sum();
    let mut accept = match greater(det.abs(), 0.0, eps * det_scale.max(1.0)) {
        Tri::True => Tri::True,
        _ => Tri::Unknown,
    };
    let mut offset = [0.0; 3];
    for i in 0..3 {
        let num: f64 = -(0..3).map(|j| adj[i][j] * grad[j]).sum::<f64>();
        offset[i] = if det != 0.0 { num / det } else { 0.0 };
        accept = accept
            .and(greater(0.5, offset[i], eps))
            .and(greater(offset[i], -0.5, eps));
    }
    let r = cfg.edge_threshold;
    let tr = hess[0][0] + hess[1][1];
    let det2 = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
    accept = accept.and(greater((r + 1.0) * (r + 1.0) * det2, r * tr * tr, eps));
    Localization { accept, offset }
}

fn is_extremum(dog: &[Grid<f64>], k: usize, x: usize, y: usize, cfg: &PipelineConfig) -> Tri {
    let eps = cfg.oracle_epsilon;
    let v = dog[k].get(x, y);
    let mut max = Tri::True;
    let mut min = Tri::True;
    for kk in k - 1..=k + 1 {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if (kk, yy, xx) == (k, y, x) {
                    continue;
                }
                let n = dog[kk].get(xx, yy);
                max = max.and(greater(v, n, eps));
                min = min.and(greater(n, v, eps));
            }
        }
    }
    let t = cfg.contrast_threshold;
    let contrast = greater(v, t, eps).or(greater(-t, v, eps));
    max.or(min).and(contrast)
}

struct Gradients {
    dx: Grid<f64>,
    dy: Grid<f64>,
}

fn gradients(l: &Grid<f64>) -> Gradients {
    let (w, h) = (l.width, l.height);
    let inner = |x: usize, y: usize| x > 0 && y > 0 && x + 1 < w && y + 1 < h;
    Gradients {
        dx: Grid::from_fn(w, h, |x, y| {
            if inner(x, y) {
                l.get(x + 1, y) - l.get(x - 1, y)
            } else {
                0.0
            }
        }),
        dy: Grid::from_fn(w, h, |x, y| {
            if inner(x, y) {
                l.get(x, y + 1) - l.get(x, y - 1)
            } else {
                0.0
            }
        }),
    }
}

/// Bin of `atan2(dy, dx)` among `n` equal bins from angle 0, with the tie
/// rule that a direction on a boundary belongs to the bin it starts.
fn bin_of(dx: f64, dy: f64, n: usize) -> usize {
    let mut a = dy.atan2(dx);
    if a < 0.0 {
        a += TAU;
    }
    ((a / (TAU / n as f64)).floor() as usize).min(n - 1)
}

/// Whether the direction is further than ε (in the boundary-normal
/// distance `|g|·sin Δθ`) from every bin boundary.
fn bin_is_clear(dx: f64, dy: f64, n: usize, eps: f64) -> bool {
    let mag = dx.hypot(dy);
    let mut a = dy.atan2(dx);
    if a < 0.0 {
        a += TAU;
    }
    let w = TAU / n as f64;
    let r = a.rem_euclid(w);
    let dist = r.min(w - r);
    mag * dist.min(std::f64::consts::FRAC_PI_2).sin() > eps
}

fn orientation(
    grads: &Gradients,
    x: usize,
    y: usize,
    sigma: f64,
    cfg: &PipelineConfig,
) -> Option<usize> {
    let n = cfg.orientation_bins;
    let eps = cfg.oracle_epsilon;
    let r = cfg.orientation_radius as isize;
    let sw = cfg.orientation_window_factor * sigma;
    let gw = |t: isize| (-((t * t) as f64) / (2.0 * sw * sw)).exp();
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for ty in -r..=r {
        for tx in -r..=r {
            let qx = (x as isize + tx) as usize;
            let qy = (y as isize + ty) as usize;
            let (dx, dy) = (grads.dx.get(qx, qy), grads.dy.get(qx, qy));
            let m2 = dx * dx + dy * dy;
            let weight = match cfg.orientation_weight {
                OrientationWeight::Squared => m2,
                OrientationWeight::Magnitude => m2.sqrt(),
            } * gw(tx)
                * gw(ty);
            if weight == 0.0 {
                continue;
            }
            if bin_is_clear(dx, dy, n, eps) {
                let b = bin_of(dx, dy, n);
                lo[b] += weight;
                hi[b] += weight;
            } else {
                // may land in either neighbouring bin
                let b = bin_of(dx, dy, n);
                hi[b] += weight;
                hi[(b + 1) % n] += weight;
                hi[(b + n - 1) % n] += weight;
            }
        }
    }
    let best = (0..n).fold(0, |b, i| if lo[i] > lo[b] { i } else { b });
    let separated = (0..n)
        .filter(|&j| j != best)
        .all(|j| greater(lo[best], hi[j], eps) == Tri::True);
    separated.then_some(best)
}

fn descriptor(grads: &Gradients, x: usize, y: usize, cfg: &PipelineConfig) -> Vec<f64> {
    let cells = cfg.descriptor_cells;
    let c = cfg.descriptor_cell_size;
    let bins = cfg.descriptor_bins;
    let half = cells * c / 2;
    let mut d = vec![0.0; cfg.descriptor_len()];
    for j in 0..cells {
        for i in 0..cells {
            for v in 0..c {
                for u in 0..c {
                    let qx = x - half + i * c + u;
                    let qy = y - half + j * c + v;
                    let (dx, dy) = (grads.dx.get(qx, qy), grads.dy.get(qx, qy));
                    let m2 = dx * dx + dy * dy;
                    if m2 == 0.0 {
                        continue;
                    }
                    d[(j * cells + i) * bins + bin_of(dx, dy, bins)] += m2;
                }
            }
        }
    }
    let norm = d.iter().map(|e| e * e).sum::<f64>().sqrt();
    if norm < cfg.norm_epsilon {
        vec![0.0; d.len()]
    } else {
        d.iter().map(|e| e / norm).collect()
    }
}

pub fn run_oracle(img: &Image, cfg: &PipelineConfig) -> Result<OracleResult> {
    cfg.validate()?;
    if img.width < 16 || img.height < 16 {
        return Err(Error::InvalidArgument(
            "image must be at least 16×16".into(),
        ));
    }
    let m = cfg.border();
    let mut res = OracleResult::default();
    for (o, levels) in pyramid(img, cfg).iter().enumerate() {
        let (w, h) = (levels[0].width, levels[0].height);
        if w < 3 || h < 3 {
            return Err(Error::InvalidArgument(format!(
                "image too small for {} octaves",
                cfg.octaves
            )));
        }
        if w <= 2 * m || h <= 2 * m {
            continue;
        }
        let dog: Vec<Grid<f64>> = levels
            .windows(2)
            .map(|p| Grid::from_fn(w, h, |x, y| p[1].get(x, y) - p[0].get(x, y)))
            .collect();
        for k in 1..=cfg.scales_per_octave {
            let grads = gradients(&levels[k]);
            let sigma = cfg.base_sigma * 2f64.powf(k as f64 / cfg.scales_per_octave as f64);
            for y in m..h - m {
                for x in m..w - m {
                    let site = Site {
                        octave: o,
                        y,
                        x,
                        scale: k,
                    };
                    let ext = is_extremum(&dog, k, x, y, cfg);
                    if ext == Tri::False {
                        continue;
                    }
                    let loc = localize(&dog, k, x, y, cfg);
                    match ext.and(loc.accept) {
                        Tri::False => continue,
                        Tri::Unknown => {
                            res.exclusions.push(site);
                            continue;
                        }
                        Tri::True => {}
                    }
                    let ori = orientation(&grads, x, y, sigma, cfg);
                    if ori.is_none() {
                        res.orientation_exclusions.push(site);
                    }
                    res.keypoints.push(Keypoint {
                        x,
                        y,
                        octave: o,
                        scale: k,
                        orientation: ori,
                        offset: loc.offset,
                        descriptor: descriptor(&grads, x, y, cfg),
                    });
                }
            }
        }
    }
    Ok(res)
}

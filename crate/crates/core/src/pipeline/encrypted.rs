//! Server-side construction of the SIFT-lite circuit.
//!
//! Every interior sample of every detection scale is a candidate and carries
//! a full set of outputs: keypoint mask, orientation one-hot, unnormalized
//! descriptor, descriptor norm and sub-sample offset. Which candidates are
//! keypoints is only known to the client.

use crate::error::{Error, Result};
use crate::graph::{DenSign, ExprId, Graph, Rational};
use crate::kernels::{
    bin_mask, convolve_separable, gaussian_kernel, vec_argmax_onehot, Gradient, Grid, HistogramSpec,
};
use crate::pipeline::config::{OrientationWeight, PipelineConfig};
use crate::pipeline::keypoint::Keypoint;
use crate::pipeline::Candidate;

pub const SCALE_SPACE: &str = "scale_space";
pub const EXTREMA: &str = "extrema";
pub const LOCALIZE: &str = "localize";
pub const ORIENTATION: &str = "orientation";
pub const DESCRIPTOR: &str = "descriptor";

/// Output slot positions for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotLayout {
    pub bins: usize,
    pub descriptor: usize,
}

impl SlotLayout {
    pub fn stride(&self) -> usize {
        1 + self.bins + self.descriptor + 1 + 4
    }
    pub fn onehot(&self) -> std::ops::Range<usize> {
        1..1 + self.bins
    }
    pub fn descriptor(&self) -> std::ops::Range<usize> {
        1 + self.bins..1 + self.bins + self.descriptor
    }
    pub fn norm(&self) -> usize {
        1 + self.bins + self.descriptor
    }
    /// `num_x, num_y, num_s, det`.
    pub fn offset(&self) -> std::ops::Range<usize> {
        self.norm() + 1..self.norm() + 5
    }
}

pub struct Circuit {
    pub outputs: Vec<ExprId>,
    pub candidates: Vec<Candidate>,
    pub layout: SlotLayout,
}

fn decimate(g: &Grid<ExprId>) -> Grid<ExprId> {
    Grid::from_fn(g.width / 2, g.height / 2, |x, y| g.get(2 * x, 2 * y))
}

/// Gaussian levels per octave. Octave 0 blurs the input directly; later
/// octaves start from the decimated level `s` of the previous octave and
/// blur it incrementally, so every level costs two plain-multiply levels on
/// top of its base.
pub fn scale_space(
    g: &mut Graph,
    img: &Grid<ExprId>,
    cfg: &PipelineConfig,
) -> Result<Vec<Vec<Grid<ExprId>>>> {
    g.begin_stage(SCALE_SPACE);
    let s = cfg.scales_per_octave;
    let mut octaves: Vec<Vec<Grid<ExprId>>> = Vec::with_capacity(cfg.octaves);
    for o in 0..cfg.octaves {
        let mut levels = Vec::with_capacity(cfg.levels_per_octave());
        if o == 0 {
            for k in 0..cfg.levels_per_octave() {
                levels.push(convolve_separable(
                    g,
                    img,
                    &gaussian_kernel(cfg.scale_sigma(k)),
                )?);
            }
        } else {
            let base = decimate(&octaves[o - 1][s]);
            if base.width < 3 || base.height < 3 {
                return Err(Error::InvalidArgument(format!(
                    "image too small for {} octaves",
                    cfg.octaves
                )));
            }
            for k in 1..cfg.levels_per_octave() {
                let inc = cfg.base_sigma * (2f64.powf(2.0 * k as f64 / s as f64) - 1.0).sqrt();
                let lvl = convolve_separable(g, &base, &gaussian_kernel(inc))?;
                levels.push(lvl);
            }
            levels.insert(0, base);
        }
        octaves.push(levels);
    }
    Ok(octaves)
}

pub fn difference_of_gaussians(g: &mut Graph, levels: &[Grid<ExprId>]) -> Vec<Grid<ExprId>> {
    levels
        .windows(2)
        .map(|w| {
            Grid::from_fn(w[0].width, w[0].height, |x, y| {
                g.sub(w[1].get(x, y), w[0].get(x, y))
            })
        })
        .collect()
}

/// Extremum over the 26-neighbourhood times the contrast test. `lt` is the
/// complement of the `gt` already recorded for the same pair, so a sample
/// tied with a neighbour can pass as a minimum but never as a maximum.
pub fn extremum_mask(
    g: &mut Graph,
    dog: &[Grid<ExprId>],
    k: usize,
    x: usize,
    y: usize,
    threshold: f64,
) -> ExprId {
    let v = dog[k].get(x, y);
    let mut above = Vec::with_capacity(26);
    let mut below = Vec::with_capacity(26);
    for dk in 0..3 {
        for dy in 0..3 {
            for dx in 0..3 {
                if (dk, dy, dx) == (1, 1, 1) {
                    continue;
                }
                let n = dog[k + dk - 1].get(x + dx - 1, y + dy - 1);
                above.push(g.gt(v, n));
                below.push(g.lt(v, n));
            }
        }
    }
    let max_and = g.product(&above);
    let min_and = g.product(&below);
    let extremum = g.add(max_and, min_and);
    let t = g.plain(threshold);
    let mt = g.plain(-threshold);
    let hi = g.gt(v, t);
    let lo = g.lt(v, mt);
    let contrast = g.add(hi, lo);
    g.mul(extremum, contrast)
}

/// Sub-sample localization. Derivatives are scaled by 4 so every stencil
/// has integer weights; the offset `−H⁻¹g` is scale-free.
pub struct Localized {
    /// `(num_x, num_y, num_s)` with offset `num_i / det`.
    pub num: [ExprId; 3],
    pub det: ExprId,
    pub accept: ExprId,
}

pub fn localize(
    g: &mut Graph,
    dog: &[Grid<ExprId>],
    k: usize,
    x: usize,
    y: usize,
    edge_r: f64,
) -> Result<Localized> {
    let d = |dx: isize, dy: isize, ds: isize| {
        dog[(k as isize + ds) as usize].get((x as isize + dx) as usize, (y as isize + dy) as usize)
    };
    let c0 = d(0, 0, 0);
    let two_c = g.times(c0, 2);
    let mut grad = [c0; 3];
    let mut second = [c0; 3];
    let axes: [(isize, isize, isize); 3] = [(1, 0, 0), (0, 1, 0), (0, 0, 1)];
    for (i, &(ax, ay, az)) in axes.iter().enumerate() {
        let p = d(ax, ay, az);
        let m = d(-ax, -ay, -az);
        let diff = g.sub(p, m);
        grad[i] = g.times(diff, 2);
        let sum = g.add(p, m);
        let curv = g.sub(sum, two_c);
        second[i] = g.times(curv, 4);
    }
    let cross = |g: &mut Graph, a: (isize, isize, isize), b: (isize, isize, isize)| {
        let at = |sa: isize, sb: isize| {
            d(
                sa * a.0 + sb * b.0,
                sa * a.1 + sb * b.1,
                sa * a.2 + sb * b.2,
            )
        };
        let pp = at(1, 1);
        let pm = at(1, -1);
        let mp = at(-1, 1);
        let mm = at(-1, -1);
        let l = g.sub(pp, pm);
        let r = g.sub(mp, mm);
        g.sub(l, r)
    };
    let hxy = cross(g, axes[0], axes[1]);
    let hxs = cross(g, axes[0], axes[2]);
    let hys = cross(g, axes[1], axes[2]);
    let (a, b, c, dd, e, f) = (second[0], hxy, hxs, second[1], hys, second[2]);

    let minor = |g: &mut Graph, p: ExprId, q: ExprId, r: ExprId, s: ExprId| {
        let l = g.mul(p, q);
        let rr = g.mul(r, s);
        g.sub(l, rr)
    };
    let a11 = minor(g, dd, f, e, e);
    let a12 = minor(g, c, e, b, f);
    let a13 = minor(g, b, e, c, dd);
    let a22 = minor(g, a, f, c, c);
    let a23 = minor(g, b, c, a, e);
    let a33 = minor(g, a, dd, b, b);
    let t1 = g.mul(a, a11);
    let t2 = g.mul(b, a12);
    let t3 = g.mul(c, a13);
    let det = g.sum(&[t1, t2, t3]);

    let adj = [[a11, a12, a13], [a12, a22, a23], [a13, a23, a33]];
    let mut num = [c0; 3];
    for i in 0..3 {
        let terms: Vec<ExprId> = (0..3).map(|j| g.mul(adj[i][j], grad[j])).collect();
        let s = g.sum(&terms);
        num[i] = g.neg(s);
    }

    const SITES: [&str; 3] = ["offset_x", "offset_y", "offset_scale"];
    let half = Rational::constant(g, 0.5);
    let neg_half = Rational::constant(g, -0.5);
    let mut factors = Vec::with_capacity(7);
    for i in 0..3 {
        let delta = Rational::new(num[i], det, DenSign::Unknown, SITES[i]);
        factors.push(g.rational_le(&delta, &half)?);
        factors.push(g.rational_ge(&delta, &neg_half)?);
    }

    // principal curvature ratio below r: (r+1)²·det₂ > r·tr²
    let tr = g.add(a, dd);
    let det2 = minor(g, a, dd, b, b);
    let lhs = g.mul_plain(det2, (edge_r + 1.0) * (edge_r + 1.0));
    let tr2 = g.mul(tr, tr);
    let rhs = g.mul_plain(tr2, edge_r);
    factors.push(g.gt(lhs, rhs));

    let accept = g.product(&factors);
    Ok(Localized { num, det, accept })
}

struct LevelMaps {
    grads: Grid<Option<Gradient>>,
}

fn gradients(g: &mut Graph, lvl: &Grid<ExprId>, lo: usize, hi_x: usize, hi_y: usize) -> LevelMaps {
    let grads = Grid::from_fn(lvl.width, lvl.height, |x, y| {
        if x < lo || y < lo || x >= hi_x || y >= hi_y {
            return None;
        }
        let dx = g.sub(lvl.get(x + 1, y), lvl.get(x - 1, y));
        let dy = g.sub(lvl.get(x, y + 1), lvl.get(x, y - 1));
        let xx = g.mul(dx, dx);
        let yy = g.mul(dy, dy);
        let mag2 = g.add(xx, yy);
        Some(Gradient {
            dx,
            dy,
            weight: mag2,
        })
    });
    LevelMaps { grads }
}

/// Gaussian window taps `exp(−t²/2σ²)` for `t ∈ [−r, r]`, unnormalized.
pub fn window_taps(radius: usize, sigma: f64) -> Vec<f64> {
    let r = radius as isize;
    (-r..=r)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

fn orientation_onehots(
    g: &mut Graph,
    maps: &LevelMaps,
    cands: &[(usize, usize)],
    cfg: &PipelineConfig,
    sigma: f64,
    spec: &HistogramSpec,
) -> Result<Vec<Vec<ExprId>>> {
    let (w, h) = (maps.grads.width, maps.grads.height);
    let m = cfg.border();
    let r = cfg.orientation_radius;
    let taps = window_taps(r, cfg.orientation_window_factor * sigma);
    let zero = g.plain(0.0);

    // per-pixel weighted one-hot contributions
    let mut contrib: Vec<Grid<ExprId>> = Vec::with_capacity(spec.num_bins());
    let weights = Grid::from_fn(w, h, |x, y| {
        maps.grads.get(x, y).map(|gr| match cfg.orientation_weight {
            OrientationWeight::Squared => gr.weight,
            OrientationWeight::Magnitude => g.sqrt(gr.weight),
        })
    });
    for j in 0..spec.num_bins() {
        contrib.push(Grid::from_fn(w, h, |x, y| {
            let inside = x + r >= m && y + r >= m && x < w - m + r && y < h - m + r;
            match (maps.grads.get(x, y), weights.get(x, y)) {
                (Some(gr), Some(wt)) if inside => {
                    let mask = bin_mask(g, &gr, spec, j);
                    g.mul(mask, wt)
                }
                _ => zero,
            }
        }));
    }

    // separable window: rows then columns
    let mut rows: Vec<Grid<ExprId>> = Vec::with_capacity(spec.num_bins());
    for c in &contrib {
        rows.push(Grid::from_fn(w, h, |x, y| {
            if x < m || x >= w - m || y + r < m || y >= h - m + r {
                return zero;
            }
            let terms: Vec<ExprId> = taps
                .iter()
                .enumerate()
                .map(|(t, &k)| g.mul_plain(c.get(x + t - r, y), k))
                .collect();
            g.sum(&terms)
        }));
    }
    let mut out = Vec::with_capacity(cands.len());
    for &(x, y) in cands {
        let bins: Vec<ExprId> = rows
            .iter()
            .map(|row| {
                let terms: Vec<ExprId> = taps
                    .iter()
                    .enumerate()
                    .map(|(t, &k)| g.mul_plain(row.get(x, y + t - r), k))
                    .collect();
                g.sum(&terms)
            })
            .collect();
        let (_, onehot) = vec_argmax_onehot(g, &bins)?;
        out.push(onehot.mask);
    }
    Ok(out)
}

fn descriptors(
    g: &mut Graph,
    maps: &LevelMaps,
    cands: &[(usize, usize)],
    cfg: &PipelineConfig,
    spec: &HistogramSpec,
) -> Vec<(Vec<ExprId>, ExprId)> {
    let (w, h) = (maps.grads.width, maps.grads.height);
    let cell = cfg.descriptor_cell_size;
    let cells = cfg.descriptor_cells;
    let half = cells * cell / 2;
    let zero = g.plain(0.0);

    // box sums of cell×cell blocks anchored at their top-left sample
    let mut boxes: Vec<Grid<ExprId>> = Vec::with_capacity(spec.num_bins());
    for b in 0..spec.num_bins() {
        let contrib = Grid::from_fn(w, h, |x, y| match maps.grads.get(x, y) {
            Some(gr) => {
                let mask = bin_mask(g, &gr, spec, b);
                g.mul(mask, gr.weight)
            }
            None => zero,
        });
        let rows = Grid::from_fn(w, h, |x, y| {
            if x + cell > w {
                return zero;
            }
            let t: Vec<ExprId> = (0..cell).map(|u| contrib.get(x + u, y)).collect();
            g.sum(&t)
        });
        boxes.push(Grid::from_fn(w, h, |x, y| {
            if y + cell > h {
                return zero;
            }
            let t: Vec<ExprId> = (0..cell).map(|v| rows.get(x, y + v)).collect();
            g.sum(&t)
        }));
    }

    cands
        .iter()
        .map(|&(x, y)| {
            let mut entries = Vec::with_capacity(cfg.descriptor_len());
            for j in 0..cells {
                for i in 0..cells {
                    let ax = x - half + i * cell;
                    let ay = y - half + j * cell;
                    for bx in &boxes {
                        entries.push(bx.get(ax, ay));
                    }
                }
            }
            let squares: Vec<ExprId> = entries.iter().map(|&e| g.mul(e, e)).collect();
            let norm2 = g.sum(&squares);
            let norm = g.sqrt(norm2);
            (entries, norm)
        })
        .collect()
}

/// Builds the full circuit over encrypted input samples.
pub fn build_circuit(g: &mut Graph, img: &Grid<ExprId>, cfg: &PipelineConfig) -> Result<Circuit> {
    cfg.validate()?;
    if img.width < 16 || img.height < 16 {
        return Err(Error::InvalidArgument(
            "image must be at least 16×16".into(),
        ));
    }
    g.set_sign_resolution(cfg.sign_resolution);
    let orient_spec = HistogramSpec::uniform(cfg.orientation_bins)?;
    let desc_spec = HistogramSpec::uniform(cfg.descriptor_bins)?;
    let layout = SlotLayout {
        bins: cfg.orientation_bins,
        descriptor: cfg.descriptor_len(),
    };
    let gauss = scale_space(g, img, cfg)?;
    let m = cfg.border();
    let mut outputs = Vec::new();
    let mut candidates = Vec::new();

    for (o, levels) in gauss.iter().enumerate() {
        g.begin_stage(SCALE_SPACE);
        let dog = difference_of_gaussians(g, levels);
        let (w, h) = (levels[0].width, levels[0].height);
        if w <= 2 * m || h <= 2 * m {
            continue;
        }
        let sites: Vec<(usize, usize)> = (m..h - m)
            .flat_map(|y| (m..w - m).map(move |x| (x, y)))
            .collect();
        for k in 1..=cfg.scales_per_octave {
            let mut per_site = Vec::with_capacity(sites.len());
            for &(x, y) in &sites {
                g.begin_stage(EXTREMA);
                let ext = extremum_mask(g, &dog, k, x, y, cfg.contrast_threshold);
                g.begin_stage(LOCALIZE);
                let loc = localize(g, &dog, k, x, y, cfg.edge_threshold)?;
                let mask = g.mul(ext, loc.accept);
                per_site.push((mask, loc));
            }

            g.begin_stage(ORIENTATION);
            let reach = cfg
                .orientation_radius
                .max(cfg.descriptor_cells * cfg.descriptor_cell_size / 2);
            let maps = gradients(g, &levels[k], m - reach, w - m + reach, h - m + reach);
            let onehots =
                orientation_onehots(g, &maps, &sites, cfg, cfg.scale_sigma(k), &orient_spec)?;
            g.begin_stage(DESCRIPTOR);
            let descs = descriptors(g, &maps, &sites, cfg, &desc_spec);

            for (i, &(x, y)) in sites.iter().enumerate() {
                let (mask, loc) = &per_site[i];
                outputs.push(*mask);
                outputs.extend(&onehots[i]);
                outputs.extend(&descs[i].0);
                outputs.push(descs[i].1);
                outputs.extend(loc.num);
                outputs.push(loc.det);
                candidates.push(Candidate {
                    octave: o,
                    scale: k,
                    x,
                    y,
                });
            }
        }
    }
    Ok(Circuit {
        outputs,
        candidates,
        layout,
    })
}

/// Client-side interpretation of resolved output slots.
pub fn decode_keypoints(
    values: &[f64],
    candidates: &[Candidate],
    layout: &SlotLayout,
    cfg: &PipelineConfig,
) -> Vec<Keypoint> {
    let stride = layout.stride();
    let mut out = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let s = &values[i * stride..(i + 1) * stride];
        if s[0] <= 0.5 {
            continue;
        }
        let hot = &s[layout.onehot()];
        let orientation = hot
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
                if v > best.1 {
                    (j, v)
                } else {
                    best
                }
            })
            .0;
        let raw = &s[layout.descriptor()];
        let norm = s[layout.norm()];
        let descriptor = if norm < cfg.norm_epsilon {
            vec![0.0; raw.len()]
        } else {
            raw.iter().map(|v| v / norm).collect()
        };
        let o = layout.offset().start;
        let det = s[o + 3];
        let offset = if det == 0.0 {
            [0.0; 3]
        } else {
            [s[o] / det, s[o + 1] / det, s[o + 2] / det]
        };
        out.push(Keypoint {
            x: c.x,
            y: c.y,
            octave: c.octave,
            scale: c.scale,
            orientation: Some(orientation),
            offset,
            descriptor,
        });
    }
    out
}

//! Deterministic test images.
//!
//! The synthetic set avoids exact symmetries (blob centres off the sample
//! grid, ramps at irrational-looking angles) so that no comparison lands on
//! a tie, which would make the reference legitimately undecided.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;
use crate::kernels::Grid;

fn blob(x: f64, y: f64, cx: f64, cy: f64, sx: f64, sy: f64) -> f64 {
    (-((x - cx) * (x - cx) / (2.0 * sx * sx) + (y - cy) * (y - cy) / (2.0 * sy * sy))).exp()
}

/// Elongated Gaussian spots at off-grid positions.
pub fn blobs(n: usize) -> Image {
    let s = n as f64 / 32.0;
    Grid::from_fn(n, n, |x, y| {
        let (x, y) = (x as f64, y as f64);
        0.4 + 0.6 * blob(x, y, 10.3 * s, 11.6 * s, 2.5 * s, 2.9 * s)
            + 0.5 * blob(x, y, 21.7 * s, 19.2 * s, 3.1 * s, 2.6 * s)
            - 0.4 * blob(x, y, 11.4 * s, 23.1 * s, 2.3 * s, 2.7 * s)
    })
}

/// A single bright spot on a tilted background.
pub fn blob_on_ramp(n: usize) -> Image {
    let s = n as f64 / 32.0;
    Grid::from_fn(n, n, |x, y| {
        let (x, y) = (x as f64, y as f64);
        0.15 + 0.011 * x + 0.004 * y + 0.6 * blob(x, y, 16.35 * s, 14.8 * s, 2.6 * s, 3.0 * s)
    })
}

/// Two crossing ramps with a curved bend; gradients vary in direction.
pub fn ramps(n: usize) -> Image {
    let nf = n as f64;
    Grid::from_fn(n, n, |x, y| {
        let (u, v) = (x as f64 / nf, y as f64 / nf);
        (0.2 + 0.5 * u * 0.93 + 0.3 * v * 0.37 + 0.4 * (3.1 * u * v).sin() * 0.5).clamp(0.0, 1.0)
    })
}

/// One bright sample on a ramp, plus a dimmer asymmetric neighbour.
pub fn impulse(n: usize) -> Image {
    let mut img = Grid::from_fn(n, n, |x, y| 0.2 + 0.006 * x as f64 + 0.0023 * y as f64);
    let c = n / 2;
    img.data[c * n + c] += 0.65;
    img.data[c * n + c + 1] += 0.2;
    img.data[(c + 1) * n + c] += 0.05;
    img
}

/// Two bright blobs and one dark one, partially overlapping.
pub fn cluster(n: usize) -> Image {
    let s = n as f64 / 32.0;
    Grid::from_fn(n, n, |x, y| {
        let (x, y) = (x as f64, y as f64);
        0.35 + 0.5 * blob(x, y, 10.2 * s, 10.9 * s, 2.4 * s, 2.2 * s)
            + 0.45 * blob(x, y, 21.4 * s, 11.7 * s, 2.2 * s, 2.8 * s)
            - 0.35 * blob(x, y, 15.9 * s, 21.3 * s, 3.2 * s, 2.5 * s)
    })
}

pub fn synthetic_set(n: usize) -> Vec<(&'static str, Image)> {
    vec![
        ("blobs", blobs(n)),
        ("blob_on_ramp", blob_on_ramp(n)),
        ("ramps", ramps(n)),
        ("impulse", impulse(n)),
        ("cluster", cluster(n)),
    ]
}

/// Natural-looking texture: smoothed value noise at several octaves plus a
/// few soft edges, quantized to 8 bits like a camera image.
pub fn natural(n: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; n * n];
    let mut amp = 0.5;
    let mut cell = n / 8;
    while cell >= 2 {
        let g = n / cell + 2;
        let lattice: Vec<f64> = (0..g * g).map(|_| rng.gen::<f64>()).collect();
        for y in 0..n {
            for x in 0..n {
                let (fx, fy) = (x as f64 / cell as f64, y as f64 / cell as f64);
                let (ix, iy) = (fx as usize, fy as usize);
                let (tx, ty) = (fx - ix as f64, fy - iy as f64);
                let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
                let l = |i: usize, j: usize| lattice[j * g + i];
                let top = l(ix, iy) * (1.0 - sx) + l(ix + 1, iy) * sx;
                let bot = l(ix, iy + 1) * (1.0 - sx) + l(ix + 1, iy + 1) * sx;
                acc[y * n + x] += amp * (top * (1.0 - sy) + bot * sy);
            }
        }
        amp *= 0.8;
        cell /= 2;
    }
    let edges: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            (
                a.cos(),
                a.sin(),
                rng.gen::<f64>() * n as f64 * 0.6 + n as f64 * 0.2,
                rng.gen_range(-0.2..0.2),
            )
        })
        .collect();
    let lo = acc.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Grid::from_fn(n, n, |x, y| {
        let mut v = (acc[y * n + x] - lo) / (hi - lo) * 0.9 + 0.05;
        for &(c, s, d, h) in &edges {
            let t = c * x as f64 + s * y as f64 - d;
            v += h / (1.0 + (-t).exp());
        }
        (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
    })
}

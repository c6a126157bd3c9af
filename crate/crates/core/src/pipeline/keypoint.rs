//! Keypoints, their text format and set comparison.
//!
//! One line per keypoint: `x y octave scale orientation d0 … d(n-1)`, where
//! `x y` are integer sample coordinates in the octave's grid and
//! `orientation` is a bin index, or `-` when the oracle could not decide it.
//! Lines are ordered by `(octave, y, x, scale)`.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    pub octave: usize,
    pub scale: usize,
    pub orientation: Option<usize>,
    /// Sub-sample offset `(dx, dy, ds)`; not part of the file format.
    pub offset: [f64; 3],
    pub descriptor: Vec<f64>,
}

/// Identity of a candidate sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Site {
    pub octave: usize,
    pub y: usize,
    pub x: usize,
    pub scale: usize,
}

impl Keypoint {
    pub fn site(&self) -> Site {
        Site {
            octave: self.octave,
            y: self.y,
            x: self.x,
            scale: self.scale,
        }
    }
}

pub fn sort_keypoints(kps: &mut [Keypoint]) {
    kps.sort_by_key(|k| k.site());
}

pub fn format_keypoints(kps: &[Keypoint]) -> String {
    let mut out = String::new();
    for k in kps {
        write!(out, "{} {} {} {}", k.x, k.y, k.octave, k.scale).unwrap();
        match k.orientation {
            Some(o) => write!(out, " {o}").unwrap(),
            None => out.push_str(" -"),
        }
        for d in &k.descriptor {
            // avoid "-0.000000" so equal files stay byte-identical
            let d = if d.abs() < 5e-7 { 0.0 } else { *d };
            write!(out, " {d:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_keypoints(text: &str) -> Result<Vec<Keypoint>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            offset: start,
            message: m.to_string(),
        };
        if f.len() < 5 {
            return Err(bad("keypoint line needs at least 5 fields"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer field"));
        let orientation = match f[4] {
            "-" => None,
            s => Some(int(s)?),
        };
        let descriptor = f[5..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| bad("bad descriptor value")))
            .collect::<Result<Vec<_>>>()?;
        out.push(Keypoint {
            x: int(f[0])?,
            y: int(f[1])?,
            octave: int(f[2])?,
            scale: int(f[3])?,
            orientation,
            offset: [0.0; 3],
            descriptor,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiffSummary {
    pub matched: usize,
    /// In the reference set only.
    pub missing: usize,
    /// In the candidate set only.
    pub spurious: usize,
    /// Matched keypoints whose orientation is known on both sides.
    pub orientation_compared: usize,
    pub orientation_agree: usize,
    pub max_descriptor_diff: f64,
    pub excluded: usize,
}

impl DiffSummary {
    pub fn orientation_agreement(&self) -> f64 {
        if self.orientation_compared == 0 {
            1.0
        } else {
            self.orientation_agree as f64 / self.orientation_compared as f64
        }
    }

    pub fn identical(&self) -> bool {
        self.missing == 0
            && self.spurious == 0
            && self.orientation_agree == self.orientation_compared
    }

    pub fn to_text(&self) -> String {
        format!(
            "matched {}\nmissing {}\nspurious {}\nexcluded {}\norientation_compared {}\n\
             orientation_agree {}\norientation_agreement {:.6}\nmax_descriptor_diff {:.3e}\n",
            self.matched,
            self.missing,
            self.spurious,
            self.excluded,
            self.orientation_compared,
            self.orientation_agree,
            self.orientation_agreement(),
            self.max_descriptor_diff
        )
    }
}

/// Compares `candidate` against `reference`, ignoring any site in
/// `excluded` on both sides.
pub fn diff_keypoints(
    reference: &[Keypoint],
    candidate: &[Keypoint],
    excluded: &[Site],
) -> DiffSummary {
    let skip: std::collections::HashSet<Site> = excluded.iter().copied().collect();
    let index = |ks: &[Keypoint]| -> BTreeMap<Site, Keypoint> {
        ks.iter()
            .filter(|k| !skip.contains(&k.site()))
            .map(|k| (k.site(), k.clone()))
            .collect()
    };
    let a = index(reference);
    let b = index(candidate);
    let mut s = DiffSummary {
        excluded: skip.len(),
        ..Default::default()
    };
    for (site, ka) in &a {
        match b.get(site) {
            None => s.missing += 1,
            Some(kb) => {
                s.matched += 1;
                if let (Some(oa), Some(ob)) = (ka.orientation, kb.orientation) {
                    s.orientation_compared += 1;
                    if oa == ob {
                        s.orientation_agree += 1;
                    }
                }
                for (x, y) in ka.descriptor.iter().zip(&kb.descriptor) {
                    s.max_descriptor_diff = s.max_descriptor_diff.max((x - y).abs());
                }
            }
        }
    }
    s.spurious = b.keys().filter(|k| !a.contains_key(k)).count();
    s
}

//! Pipeline and run configuration, plus the `key = value` file format.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::protocol::PaddingPolicy;
use crate::sim::SimParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Plaintext,
    Interactive,
    Deferred,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plaintext" | "plaintext-oracle" | "oracle" => Ok(Mode::Plaintext),
            "interactive" => Ok(Mode::Interactive),
            "deferred" => Ok(Mode::Deferred),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Plaintext => "plaintext",
            Mode::Interactive => "interactive",
            Mode::Deferred => "deferred",
        })
    }
}

/// Orientation histogram weight per gradient sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrientationWeight {
    /// `dx² + dy²`; no square roots.
    Squared,
    /// `sqrt(dx² + dy²)`, one client square root per pixel.
    Magnitude,
}

impl FromStr for OrientationWeight {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(Self::Squared),
            "magnitude" => Ok(Self::Magnitude),
            _ => Err(Error::Config(format!("unknown orientation weight `{s}`"))),
        }
    }
}

impl fmt::Display for OrientationWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Squared => "squared",
            Self::Magnitude => "magnitude",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub base_sigma: f64,
    pub orientation_bins: usize,
    /// Half-width of the square orientation window, in samples.
    pub orientation_radius: usize,
    /// Window σ as a multiple of the keypoint scale.
    pub orientation_window_factor: f64,
    pub orientation_weight: OrientationWeight,
    /// Cells per side of the descriptor grid.
    pub descriptor_cells: usize,
    pub descriptor_bins: usize,
    /// Side of one descriptor cell, in samples.
    pub descriptor_cell_size: usize,
    pub contrast_threshold: f64,
    pub edge_threshold: f64,
    pub mode: Mode,
    /// Comparisons within this margin are treated as undecided by the
    /// oracle.
    pub oracle_epsilon: f64,
    /// Descriptors with a smaller norm are left unnormalized (all zero).
    pub norm_epsilon: f64,
    /// Allow deferred comparisons whose operands depend on earlier ones.
    pub deferred_nested: bool,
    pub sign_resolution: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            octaves: 3,
            scales_per_octave: 3,
            base_sigma: 1.6,
            orientation_bins: 36,
            orientation_radius: 2,
            orientation_window_factor: 1.5,
            orientation_weight: OrientationWeight::Squared,
            descriptor_cells: 4,
            descriptor_bins: 8,
            descriptor_cell_size: 2,
            contrast_threshold: 0.03,
            edge_threshold: 10.0,
            mode: Mode::Deferred,
            oracle_epsilon: 1e-9,
            norm_epsilon: 1e-12,
            deferred_nested: true,
            sign_resolution: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.octaves == 0 || self.scales_per_octave == 0 {
            return fail("octaves and scales_per_octave must be positive");
        }
        if !(self.base_sigma > 0.0) || !self.base_sigma.is_finite() {
            return fail("base_sigma must be positive");
        }
        if self.orientation_bins < 3 || self.descriptor_bins < 3 {
            return fail("histograms need at least 3 bins so each spans less than π");
        }
        if self.descriptor_cells == 0 || self.descriptor_cell_size == 0 {
            return fail("descriptor grid must be nonempty");
        }
        if !(self.orientation_window_factor > 0.0) {
            return fail("orientation_window_factor must be positive");
        }
        if !(self.contrast_threshold >= 0.0) || !(self.edge_threshold > 0.0) {
            return fail("thresholds must be non-negative and edge_threshold positive");
        }
        if !(self.oracle_epsilon >= 0.0) || !(self.norm_epsilon >= 0.0) {
            return fail("epsilons must be non-negative");
        }
        Ok(())
    }

    /// Samples excluded at each border so every candidate has full
    /// neighbourhood, orientation window and descriptor grid.
    pub fn border(&self) -> usize {
        let half = self.descriptor_cells * self.descriptor_cell_size / 2;
        (self.orientation_radius + 1).max(half + 1).max(1)
    }

    pub fn descriptor_len(&self) -> usize {
        self.descriptor_cells * self.descriptor_cells * self.descriptor_bins
    }

    /// Blur σ of level `k` relative to its octave's sampling.
    pub fn scale_sigma(&self, k: usize) -> f64 {
        self.base_sigma * 2f64.powf(k as f64 / self.scales_per_octave as f64)
    }

    pub fn levels_per_octave(&self) -> usize {
        self.scales_per_octave + 3
    }
}

/// Everything a run needs besides the image and seed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub sim: SimParams,
    pub pipeline: PipelineConfig,
    pub padding: PaddingPolicy,
}

fn parse<T: FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str, line: usize) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "line {line}: bad boolean `{v}` for `{key}`"
        ))),
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are
    /// errors. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {n}: expected `key = value`")))?;
            let (k, v) = (k.trim(), v.trim());
            let p = &mut c.pipeline;
            match k {
                "depth_budget" => c.sim.depth_budget = parse(k, v, n)?,
                "noise_per_mul" => c.sim.noise_per_mul = parse(k, v, n)?,
                "plain_mul_consumes_level" => c.sim.plain_mul_consumes_level = parse_bool(k, v, n)?,
                "octaves" => p.octaves = parse(k, v, n)?,
                "scales_per_octave" => p.scales_per_octave = parse(k, v, n)?,
                "base_sigma" => p.base_sigma = parse(k, v, n)?,
                "orientation_bins" => p.orientation_bins = parse(k, v, n)?,
                "orientation_radius" => p.orientation_radius = parse(k, v, n)?,
                "orientation_window_factor" => p.orientation_window_factor = parse(k, v, n)?,
                "orientation_weight" => p.orientation_weight = v.parse()?,
                "descriptor_cells" => p.descriptor_cells = parse(k, v, n)?,
                "descriptor_bins" => p.descriptor_bins = parse(k, v, n)?,
                "descriptor_cell_size" => p.descriptor_cell_size = parse(k, v, n)?,
                "contrast_threshold" => p.contrast_threshold = parse(k, v, n)?,
                "edge_threshold" => p.edge_threshold = parse(k, v, n)?,
                "mode" => p.mode = v.parse()?,
                "oracle_epsilon" => p.oracle_epsilon = parse(k, v, n)?,
                "norm_epsilon" => p.norm_epsilon = parse(k, v, n)?,
                "deferred_nested" => p.deferred_nested = parse_bool(k, v, n)?,
                "sign_resolution" => p.sign_resolution = parse_bool(k, v, n)?,
                "padding_min" => c.padding.min_size = parse(k, v, n)?,
                "padding_power_of_two" => c.padding.power_of_two = parse_bool(k, v, n)?,
                _ => return Err(Error::Config(format!("line {n}: unknown key `{k}`"))),
            }
        }
        c.sim.validate().map_err(|e| Error::Config(e.to_string()))?;
        c.pipeline.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        format!(
            "depth_budget = {}\nnoise_per_mul = {}\nplain_mul_consumes_level = {}\n\
             octaves = {}\nscales_per_octave = {}\nbase_sigma = {}\n\
             orientation_bins = {}\norientation_radius = {}\norientation_window_factor = {}\n\
             orientation_weight = {}\ndescriptor_cells = {}\ndescriptor_bins = {}\n\
             descriptor_cell_size = {}\ncontrast_threshold = {}\nedge_threshold = {}\n\
             mode = {}\noracle_epsilon = {:e}\nnorm_epsilon = {:e}\ndeferred_nested = {}\n\
             sign_resolution = {}\npadding_min = {}\npadding_power_of_two = {}\n",
            self.sim.depth_budget,
            self.sim.noise_per_mul,
            self.sim.plain_mul_consumes_level,
            p.octaves,
            p.scales_per_octave,
            p.base_sigma,
            p.orientation_bins,
            p.orientation_radius,
            p.orientation_window_factor,
            p.orientation_weight,
            p.descriptor_cells,
            p.descriptor_bins,
            p.descriptor_cell_size,
            p.contrast_threshold,
            p.edge_threshold,
            p.mode,
            p.oracle_epsilon,
            p.norm_epsilon,
            p.deferred_nested,
            p.sign_resolution,
            self.padding.min_size,
            self.padding.power_of_two,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_defaults() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parses_and_rejects() {
        let c = RunConfig::parse("# comment\ndepth_budget = 12 # trailing\nmode = interactive\n")
            .unwrap();
        assert_eq!(c.sim.depth_budget, 12);
        assert_eq!(c.pipeline.mode, Mode::Interactive);
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("octaves = many").is_err());
        assert!(RunConfig::parse("octaves").is_err());
        assert!(RunConfig::parse("noise_per_mul = -1").is_err());
        assert!(RunConfig::parse("orientation_bins = 2").is_err());
    }

    #[test]
    fn default_border_covers_windows() {
        assert_eq!(PipelineConfig::default().border(), 5);
    }
}

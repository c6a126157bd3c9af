//! SIFT-lite keypoint detection in three interchangeable modes.
//!
//! `Plaintext` runs the reference detector directly on pixels. The two
//! encrypted modes build one oblivious circuit over encrypted pixels and
//! differ only in how the client resolves its comparisons: once per
//! dependency level, or all at once from a deferred package.

use crate::error::Result;
use crate::graph::{DepthReport, Graph, LowerOptions, OpCensus};
use crate::image::Image;
use crate::kernels::Grid;
use crate::protocol::{
    run_deferred, run_interactive, Client, Leakage, Program, ProtocolConfig, RoundTrace,
};
use crate::sim::{decrypt_calls, encrypt, enter_role, Role};

pub mod config;
pub mod encrypted;
pub mod keypoint;
pub mod oracle;

pub use config::{Mode, OrientationWeight, PipelineConfig, RunConfig};
pub use encrypted::SlotLayout;
pub use keypoint::{
    diff_keypoints, format_keypoints, parse_keypoints, DiffSummary, Keypoint, Site,
};

/// A sample that carries a full set of outputs in the encrypted modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub octave: usize,
    pub scale: usize,
    pub x: usize,
    pub y: usize,
}

/// Circuit for `img` with the client-side encryption already applied.
pub struct EncryptedProgram {
    pub program: Program,
    pub candidates: Vec<Candidate>,
    pub layout: SlotLayout,
}

pub fn build_program(img: &Image, run: &RunConfig) -> Result<EncryptedProgram> {
    let cts: Vec<_> = {
        let _client = enter_role(Role::Client);
        img.data.iter().map(|&v| encrypt(v, &run.sim)).collect()
    };
    let _server = enter_role(Role::Server);
    let mut g = Graph::new();
    let ids = cts.into_iter().map(|c| g.input(c)).collect();
    let pixels = Grid::new(img.width, img.height, ids);
    let c = encrypted::build_circuit(&mut g, &pixels, &run.pipeline)?;
    Ok(EncryptedProgram {
        program: Program {
            graph: g,
            outputs: c.outputs,
        },
        candidates: c.candidates,
        layout: c.layout,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub mode: Mode,
    /// Sorted by site.
    pub keypoints: Vec<Keypoint>,
    /// Plaintext mode only: candidates the reference could not decide.
    pub exclusions: Vec<Site>,
    /// Plaintext mode only: keypoints with an undecided orientation.
    pub orientation_exclusions: Vec<Site>,
    pub candidates: Vec<Candidate>,
    /// Encrypted modes: every output slot as the client resolved it.
    pub values: Vec<f64>,
    pub layout: Option<SlotLayout>,
    pub trace: Option<RoundTrace>,
    pub depth: Option<DepthReport>,
    pub leakage: Option<Leakage>,
    pub census: Vec<OpCensus>,
    pub comparisons: usize,
    pub sqrts: usize,
    /// Decryptions performed under [`Role::Server`] during the run.
    pub server_decrypts: u64,
}

pub fn run_pipeline(img: &Image, run: &RunConfig, seed: u64) -> Result<PipelineRun> {
    let mode = run.pipeline.mode;
    if mode == Mode::Plaintext {
        let r = oracle::run_oracle(img, &run.pipeline)?;
        let mut keypoints = r.keypoints;
        keypoint::sort_keypoints(&mut keypoints);
        return Ok(PipelineRun {
            mode,
            keypoints,
            exclusions: r.exclusions,
            orientation_exclusions: r.orientation_exclusions,
            candidates: Vec::new(),
            values: Vec::new(),
            layout: None,
            trace: None,
            depth: None,
            leakage: None,
            census: Vec::new(),
            comparisons: 0,
            sqrts: 0,
            server_decrypts: 0,
        });
    }

    let before = decrypt_calls(Role::Server);
    let EncryptedProgram {
        mut program,
        candidates,
        layout,
    } = build_program(img, run)?;
    // counted before lowering appends its own nodes
    let census = program.graph.census();
    let comparisons = program.graph.comparisons().len();
    let sqrts = program.graph.sqrt_nodes().len();
    let client = Client::new(run.sim);
    let pcfg = ProtocolConfig {
        seed,
        padding: run.padding,
    };
    let outcome = match mode {
        Mode::Interactive => run_interactive(&program, &run.sim, &client, &pcfg)?,
        _ => {
            let opts = LowerOptions {
                nested: run.pipeline.deferred_nested,
                share: true,
            };
            run_deferred(&mut program, &run.sim, &client, &pcfg, opts)?
        }
    };
    drop(program);
    let mut keypoints =
        encrypted::decode_keypoints(&outcome.values, &candidates, &layout, &run.pipeline);
    keypoint::sort_keypoints(&mut keypoints);
    Ok(PipelineRun {
        mode,
        keypoints,
        exclusions: Vec::new(),
        orientation_exclusions: Vec::new(),
        candidates,
        values: outcome.values,
        layout: Some(layout),
        trace: Some(outcome.trace),
        depth: Some(outcome.depth),
        leakage: outcome.leakage,
        census,
        comparisons,
        sqrts,
        server_decrypts: decrypt_calls(Role::Server) - before,
    })
}

//! Run report: `key value…` lines for machines, a table for people.

use std::fmt::Write;

use fhesift::graph::OpCensus;
use fhesift::pipeline::{DiffSummary, PipelineRun};
use fhesift::protocol::RoundTrace;
use fhesift::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageLine {
    pub stage: String,
    pub consumed: u32,
    pub min_level: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub mode: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub keypoints: usize,
    pub candidates: usize,
    pub depth_budget: u32,
    pub stages: Vec<StageLine>,
    pub census: Vec<OpCensus>,
    pub rounds: usize,
    pub real_requests: usize,
    pub decoy_requests: usize,
    pub sqrt_requests: usize,
    pub bytes_to_client: usize,
    pub bytes_to_server: usize,
    pub output_bytes: usize,
    pub leakage_monomials: Option<usize>,
    pub leakage_params: Option<usize>,
    pub server_decrypts: u64,
    pub exclusions: usize,
    pub orientation_exclusions: usize,
    pub diff: Option<DiffSummary>,
}

impl RunReport {
    pub fn new(
        run: &PipelineRun,
        seed: u64,
        size: (usize, usize),
        depth_budget: u32,
        diff: Option<DiffSummary>,
    ) -> Self {
        let trace = run.trace.clone().unwrap_or_default();
        let mut r = RunReport {
            mode: run.mode.to_string(),
            seed,
            width: size.0,
            height: size.1,
            keypoints: run.keypoints.len(),
            candidates: run.candidates.len(),
            depth_budget,
            stages: Vec::new(),
            census: run.census.clone(),
            leakage_monomials: run.leakage.map(|l| l.monomials),
            leakage_params: run.leakage.map(|l| l.params),
            server_decrypts: run.server_decrypts,
            exclusions: run.exclusions.len(),
            orientation_exclusions: run.orientation_exclusions.len(),
            diff,
            ..Default::default()
        };
        r.set_trace(&trace);
        if let Some(d) = &run.depth {
            r.stages = d
                .stages
                .iter()
                .map(|s| StageLine {
                    stage: s.stage.clone(),
                    consumed: s.consumed,
                    min_level: s.min_level,
                })
                .collect();
        }
        r
    }

    fn set_trace(&mut self, t: &RoundTrace) {
        self.rounds = t.rounds;
        self.real_requests = t.real_requests();
        self.decoy_requests = t.decoy_requests();
        self.sqrt_requests = t.sqrt_requests();
        self.bytes_to_client = t.bytes_to_client;
        self.bytes_to_server = t.bytes_to_server;
        self.output_bytes = t.output_bytes;
    }

    pub fn to_kv(&self) -> String {
        let mut o = String::new();
        let opt = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        writeln!(o, "mode {}", self.mode).unwrap();
        writeln!(o, "seed {}", self.seed).unwrap();
        writeln!(o, "image {} {}", self.width, self.height).unwrap();
        writeln!(o, "keypoints {}", self.keypoints).unwrap();
        writeln!(o, "candidates {}", self.candidates).unwrap();
        writeln!(o, "depth_budget {}", self.depth_budget).unwrap();
        for s in &self.stages {
            let lvl = s.min_level.map_or("-".to_string(), |l| l.to_string());
            writeln!(o, "stage {} {} {}", s.stage, s.consumed, lvl).unwrap();
        }
        for c in &self.census {
            writeln!(
                o,
                "census {} {} {} {} {} {} {} {}",
                c.stage, c.inputs, c.plains, c.adds, c.muls, c.negs, c.comparisons, c.sqrts
            )
            .unwrap();
        }
        writeln!(o, "rounds {}", self.rounds).unwrap();
        writeln!(o, "real_requests {}", self.real_requests).unwrap();
        writeln!(o, "decoy_requests {}", self.decoy_requests).unwrap();
        writeln!(o, "sqrt_requests {}", self.sqrt_requests).unwrap();
        writeln!(o, "bytes_to_client {}", self.bytes_to_client).unwrap();
        writeln!(o, "bytes_to_server {}", self.bytes_to_server).unwrap();
        writeln!(o, "output_bytes {}", self.output_bytes).unwrap();
        writeln!(
            o,
            "leakage {} {}",
            opt(self.leakage_monomials),
            opt(self.leakage_params)
        )
        .unwrap();
        writeln!(o, "server_decrypts {}", self.server_decrypts).unwrap();
        writeln!(
            o,
            "exclusions {} {}",
            self.exclusions, self.orientation_exclusions
        )
        .unwrap();
        if let Some(d) = &self.diff {
            writeln!(
                o,
                "oracle_diff {} {} {} {} {} {} {:e}",
                d.matched,
                d.missing,
                d.spurious,
                d.excluded,
                d.orientation_compared,
                d.orientation_agree,
                d.max_descriptor_diff
            )
            .unwrap();
        }
        o
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut r = RunReport::default();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len();
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                offset: start,
                message: format!("bad report line `{}`", line.trim_end()),
            };
            let n = |i: usize| -> Result<usize> {
                f.get(i).and_then(|s| s.parse().ok()).ok_or_else(bad)
            };
            let opt = |i: usize| -> Result<Option<usize>> {
                match f.get(i) {
                    Some(&"-") => Ok(None),
                    _ => n(i).map(Some),
                }
            };
            match (f[0], f.len()) {
                ("mode", 2) => r.mode = f[1].to_string(),
                ("seed", 2) => r.seed = f[1].parse().map_err(|_| bad())?,
                ("image", 3) => (r.width, r.height) = (n(1)?, n(2)?),
                ("keypoints", 2) => r.keypoints = n(1)?,
                ("candidates", 2) => r.candidates = n(1)?,
                ("depth_budget", 2) => r.depth_budget = n(1)? as u32,
                ("stage", 4) => r.stages.push(StageLine {
                    stage: f[1].to_string(),
                    consumed: n(2)? as u32,
                    min_level: opt(3)?.map(|v| v as u32),
                }),
                ("census", 9) => r.census.push(OpCensus {
                    stage: f[1].to_string(),
                    inputs: n(2)?,
                    plains: n(3)?,
                    adds: n(4)?,
                    muls: n(5)?,
                    negs: n(6)?,
                    comparisons: n(7)?,
                    sqrts: n(8)?,
                }),
                ("rounds", 2) => r.rounds = n(1)?,
                ("real_requests", 2) => r.real_requests = n(1)?,
                ("decoy_requests", 2) => r.decoy_requests = n(1)?,
                ("sqrt_requests", 2) => r.sqrt_requests = n(1)?,
                ("bytes_to_client", 2) => r.bytes_to_client = n(1)?,
                ("bytes_to_server", 2) => r.bytes_to_server = n(1)?,
                ("output_bytes", 2) => r.output_bytes = n(1)?,
                ("leakage", 3) => (r.leakage_monomials, r.leakage_params) = (opt(1)?, opt(2)?),
                ("server_decrypts", 2) => r.server_decrypts = n(1)? as u64,
                ("exclusions", 3) => (r.exclusions, r.orientation_exclusions) = (n(1)?, n(2)?),
                ("oracle_diff", 8) => {
                    r.diff = Some(DiffSummary {
                        matched: n(1)?,
                        missing: n(2)?,
                        spurious: n(3)?,
                        excluded: n(4)?,
                        orientation_compared: n(5)?,
                        orientation_agree: n(6)?,
                        max_descriptor_diff: f[7].parse().map_err(|_| bad())?,
                    })
                }
                _ => return Err(bad()),
            }
        }
        Ok(r)
    }

    pub fn pretty(&self) -> String {
        let mut o = String::new();
        writeln!(o, "mode            {}", self.mode).unwrap();
        writeln!(o, "seed            {}", self.seed).unwrap();
        writeln!(o, "image           {}x{}", self.width, self.height).unwrap();
        writeln!(o, "keypoints       {}", self.keypoints).unwrap();
        if self.mode != "plaintext" {
            writeln!(o, "candidates      {}", self.candidates).unwrap();
            writeln!(o, "rounds          {}", self.rounds).unwrap();
            writeln!(
                o,
                "requests        {} real, {} decoy, {} sqrt",
                self.real_requests, self.decoy_requests, self.sqrt_requests
            )
            .unwrap();
            writeln!(
                o,
                "bytes           {} to client, {} to server, {} outputs",
                self.bytes_to_client, self.bytes_to_server, self.output_bytes
            )
            .unwrap();
            if let (Some(m), Some(p)) = (self.leakage_monomials, self.leakage_params) {
                writeln!(o, "residual        {m} monomials, {p} parameters").unwrap();
            }
            writeln!(o, "server decrypts {}", self.server_decrypts).unwrap();
            writeln!(o, "\nlevels consumed (budget {})", self.depth_budget).unwrap();
            for s in &self.stages {
                writeln!(o, "  {:<14}{:>4}", s.stage, s.consumed).unwrap();
            }
            writeln!(o, "\noperations       inputs    plains      adds      muls      negs  compares     sqrts").unwrap();
            for c in &self.census {
                writeln!(
                    o,
                    "  {:<14}{:>9}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
                    c.stage, c.inputs, c.plains, c.adds, c.muls, c.negs, c.comparisons, c.sqrts
                )
                .unwrap();
            }
        } else {
            writeln!(
                o,
                "undecided       {} candidates, {} orientations",
                self.exclusions, self.orientation_exclusions
            )
            .unwrap();
        }
        if let Some(d) = &self.diff {
            writeln!(o, "\nagainst plaintext reference").unwrap();
            for line in d.to_text().lines() {
                writeln!(o, "  {line}").unwrap();
            }
        }
        o
    }
}

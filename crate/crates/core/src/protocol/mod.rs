//! Simulated two-party execution.
//!
//! Server and client run in one process but only exchange serialized bytes,
//! so rounds and traffic are measured exactly. The server path runs under
//! [`Role::Server`] and never decrypts; every decryption happens inside
//! [`Client`] under [`Role::Client`].
//!
//! Interactive mode suspends whenever progress needs comparison or square
//! root results, sends one padded batch per round and continues with the
//! fresh ciphertexts it receives. Deferred mode lowers the whole program
//! into one package that the client resolves locally.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::graph::{
    evaluate_residual, lower, Assignment, DeferredPackage, Definition, DepthReport, Expr, ExprId,
    Graph, LowerOptions, Param, ResidualFunction, ServerEval, StageId, Term,
};
use crate::sim::{decrypt, encrypt, enter_role, Ciphertext, Role, SimParams};

pub mod wire;

use wire::{Reader, Writer, TAG_OUTPUTS, TAG_RESPONSE, TAG_ROUND};

/// A graph plus the nodes whose values the client receives.
#[derive(Debug, Clone)]
pub struct Program {
    pub graph: Graph,
    pub outputs: Vec<ExprId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRequest {
    pub id: u32,
    pub lhs: Ciphertext,
    pub rhs: Ciphertext,
    /// Server-side bookkeeping; never serialized.
    pub decoy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaddingPolicy {
    pub min_size: usize,
    pub power_of_two: bool,
}

impl Default for PaddingPolicy {
    fn default() -> Self {
        Self {
            min_size: 8,
            power_of_two: true,
        }
    }
}

impl PaddingPolicy {
    pub fn target(&self, real: usize) -> usize {
        let n = if self.power_of_two {
            real.next_power_of_two()
        } else {
            real
        };
        n.max(self.min_size)
    }
}

/// A padded, shuffled batch. Requests carry their wire position as `id`;
/// `origin[i]` is the original id of a real request.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub requests: Vec<ComparisonRequest>,
    pub origin: Vec<Option<u32>>,
}

/// Pads with decoys built from re-randomized operands of the batch (or of
/// `pool` when the batch is empty), then shuffles.
pub fn pad_with_decoys(
    batch: Vec<ComparisonRequest>,
    policy: &PaddingPolicy,
    pool: &[Ciphertext],
    rng: &mut ChaCha8Rng,
) -> PaddedBatch {
    let target = policy.target(batch.len());
    let mut values: Vec<Ciphertext> = batch.iter().flat_map(|r| [r.lhs, r.rhs]).collect();
    if values.is_empty() {
        values.extend_from_slice(pool);
    }
    let mut all = batch;
    while all.len() < target {
        let (lhs, rhs) = if values.is_empty() {
            let z = Ciphertext::from_parts(0.0, 0, 0.0);
            (z, z)
        } else {
            (
                values[rng.gen_range(0..values.len())].rerandomize(),
                values[rng.gen_range(0..values.len())].rerandomize(),
            )
        };
        all.push(ComparisonRequest {
            id: u32::MAX,
            lhs,
            rhs,
            decoy: true,
        });
    }
    all.shuffle(rng);
    let origin = all.iter().map(|r| (!r.decoy).then_some(r.id)).collect();
    for (i, r) in all.iter_mut().enumerate() {
        r.id = i as u32;
    }
    PaddedBatch {
        requests: all,
        origin,
    }
}

/// Traffic of one stage in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRecord {
    pub round: usize,
    pub stage: String,
    pub real: usize,
    pub decoys: usize,
    pub sqrts: usize,
    /// Serialized size of the stage's section of the request message.
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundTrace {
    pub rounds: usize,
    pub batches: Vec<BatchRecord>,
    pub bytes_to_client: usize,
    pub bytes_to_server: usize,
    /// Final output delivery; not a round.
    pub output_bytes: usize,
}

impl RoundTrace {
    pub fn real_requests(&self) -> usize {
        self.batches.iter().map(|b| b.real).sum()
    }

    pub fn decoy_requests(&self) -> usize {
        self.batches.iter().map(|b| b.decoys).sum()
    }

    pub fn sqrt_requests(&self) -> usize {
        self.batches.iter().map(|b| b.sqrts).sum()
    }

    /// `round stage real decoys sqrts bytes` per line after a summary.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "rounds {}\nbytes_to_client {}\nbytes_to_server {}\noutput_bytes {}\n",
            self.rounds, self.bytes_to_client, self.bytes_to_server, self.output_bytes
        );
        for b in &self.batches {
            out.push_str(&format!(
                "batch {} {} {} {} {} {}\n",
                b.round, b.stage, b.real, b.decoys, b.sqrts, b.bytes
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut t = RoundTrace::default();
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            let start = offset;
            offset += raw.len();
            let line = raw.trim_end();
            if line.trim().is_empty() {
                continue;
            }
            let bad = |l: &str| Error::Parse {
                offset: start,
                message: format!("bad trace line `{l}`"),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<usize> {
                f.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(line))
            };
            match f[0] {
                "rounds" => t.rounds = num(1)?,
                "bytes_to_client" => t.bytes_to_client = num(1)?,
                "bytes_to_server" => t.bytes_to_server = num(1)?,
                "output_bytes" => t.output_bytes = num(1)?,
                "batch" if f.len() == 7 => t.batches.push(BatchRecord {
                    round: num(1)?,
                    stage: f[2].to_string(),
                    real: num(3)?,
                    decoys: num(4)?,
                    sqrts: num(5)?,
                    bytes: num(6)?,
                }),
                _ => return Err(bad(line)),
            }
        }
        Ok(t)
    }
}

/// Size of the residual structure the client gets to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Leakage {
    pub monomials: usize,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Client-side plaintext outputs, in program output order.
    pub values: Vec<f64>,
    pub trace: RoundTrace,
    pub depth: DepthReport,
    pub leakage: Option<Leakage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolConfig {
    pub seed: u64,
    pub padding: PaddingPolicy,
}

impl ProtocolConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            padding: PaddingPolicy::default(),
        }
    }
}

/// The data owner: holds the secret key, answers requests.
#[derive(Debug, Clone)]
pub struct Client {
    params: SimParams,
}

impl Client {
    pub fn new(params: SimParams) -> Self {
        Self { params }
    }

    /// `[lhs > rhs]`, freshly encrypted at full level.
    pub fn resolve_comparison(&self, req: &ComparisonRequest) -> Ciphertext {
        let _role = enter_role(Role::Client);
        let b = if decrypt(&req.lhs) > decrypt(&req.rhs) {
            1.0
        } else {
            0.0
        };
        encrypt(b, &self.params)
    }

    fn resolve_sqrt(&self, arg: &Ciphertext) -> Ciphertext {
        let _role = enter_role(Role::Client);
        encrypt(decrypt(arg).max(0.0).sqrt(), &self.params)
    }

    /// Answers one interactive round message.
    pub fn resolve_round(&self, msg: &[u8]) -> Result<Vec<u8>> {
        let mut r = Reader::new(msg, TAG_ROUND)?;
        let mut w = Writer::new(TAG_RESPONSE);
        let sections = r.len(12)?;
        w.len(sections);
        for _ in 0..sections {
            w.u32(r.u32()?);
            let n = r.len(44)?;
            w.len(n);
            for _ in 0..n {
                let id = r.u32()?;
                let req = ComparisonRequest {
                    id,
                    lhs: r.ct()?,
                    rhs: r.ct()?,
                    decoy: false,
                };
                w.u32(id);
                w.ct(&self.resolve_comparison(&req));
            }
            let n = r.len(24)?;
            w.len(n);
            for _ in 0..n {
                let id = r.u32()?;
                let arg = r.ct()?;
                w.u32(id);
                w.ct(&self.resolve_sqrt(&arg));
            }
        }
        r.finish()?;
        Ok(w.buf)
    }

    /// Resolves a deferred package locally; returns slot values.
    pub fn resolve_package(&self, pkg: &DeferredPackage) -> Result<Vec<f64>> {
        let _role = enter_role(Role::Client);
        let mut a = Assignment::new();
        for d in &pkg.schedule {
            let v = match d {
                Definition::Compare { lhs, rhs, .. } => {
                    if evaluate_residual(lhs, &a)? > evaluate_residual(rhs, &a)? {
                        1.0
                    } else {
                        0.0
                    }
                }
                Definition::Sqrt { arg, .. } => evaluate_residual(arg, &a)?.max(0.0).sqrt(),
                Definition::Shared { body, .. } => evaluate_residual(body, &a)?,
            };
            a.set(d.param(), v);
        }
        pkg.slots.iter().map(|f| evaluate_residual(f, &a)).collect()
    }

    pub fn decrypt_outputs(&self, msg: &[u8]) -> Result<Vec<f64>> {
        let _role = enter_role(Role::Client);
        let mut r = Reader::new(msg, TAG_OUTPUTS)?;
        let n = r.len(20)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(decrypt(&r.ct()?));
        }
        r.finish()?;
        Ok(out)
    }
}

fn input_pool(g: &Graph) -> Vec<Ciphertext> {
    g.inputs().iter().take(64).copied().collect()
}

enum Pending {
    Compare(ExprId, ComparisonRequest),
    Sqrt(ExprId, Ciphertext),
}

/// Runs `program` with one client round per comparison dependency level.
pub fn run_interactive(
    program: &Program,
    params: &SimParams,
    client: &Client,
    cfg: &ProtocolConfig,
) -> Result<Outcome> {
    let _role = enter_role(Role::Server);
    let g = &program.graph;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ev = ServerEval::new(g, *params, cfg.seed, &program.outputs);
    let pool = input_pool(g);
    let mut trace = RoundTrace::default();

    let max_wave = ev.max_wave();
    for w in 0..=max_wave {
        ev.evaluate_wave(w)?;
        if w == max_wave {
            break;
        }
        let round = w + 1;
        let mut by_stage: FxHashMap<StageId, Vec<Pending>> = FxHashMap::default();
        for &node in ev.requests(round).to_vec().iter() {
            let pending = match g.node(node) {
                Expr::BoolVar(c) => {
                    let cmp = *g.comparison(c);
                    let lhs = ev.take(cmp.lhs).into_ciphertext(params);
                    let rhs = ev.take(cmp.rhs).into_ciphertext(params);
                    Pending::Compare(
                        node,
                        ComparisonRequest {
                            id: c.0,
                            lhs,
                            rhs,
                            decoy: false,
                        },
                    )
                }
                Expr::Sqrt(s) => {
                    let arg = ev.take(g.sqrt_node(s).arg).into_ciphertext(params);
                    Pending::Sqrt(node, arg)
                }
                _ => unreachable!("requests are comparison or square-root nodes"),
            };
            by_stage.entry(g.stage_of(node)).or_default().push(pending);
        }
        let mut stages: Vec<StageId> = by_stage.keys().copied().collect();
        stages.sort_unstable();

        let mut msg = Writer::new(TAG_ROUND);
        msg.len(stages.len());
        // per section: wire id -> graph node
        let mut routes: Vec<(Vec<Option<ExprId>>, Vec<ExprId>)> = Vec::new();
        for st in &stages {
            let items = by_stage.remove(st).unwrap();
            let mut cmps = Vec::new();
            let mut cmp_nodes = FxHashMap::default();
            let mut sqrts = Vec::new();
            for p in items {
                match p {
                    Pending::Compare(node, req) => {
                        cmp_nodes.insert(req.id, node);
                        cmps.push(req);
                    }
                    Pending::Sqrt(node, arg) => sqrts.push((node, arg)),
                }
            }
            let real = cmps.len();
            let padded = pad_with_decoys(cmps, &cfg.padding, &pool, &mut rng);
            let start = msg.buf.len();
            msg.u32(st.0 as u32);
            msg.len(padded.requests.len());
            for r in &padded.requests {
                msg.u32(r.id);
                msg.ct(&r.lhs);
                msg.ct(&r.rhs);
            }
            msg.len(sqrts.len());
            for (i, (_, arg)) in sqrts.iter().enumerate() {
                msg.u32(i as u32);
                msg.ct(arg);
            }
            trace.batches.push(BatchRecord {
                round,
                stage: g.stage_name(*st).to_string(),
                real,
                decoys: padded.requests.len() - real,
                sqrts: sqrts.len(),
                bytes: msg.buf.len() - start,
            });
            routes.push((
                padded
                    .origin
                    .iter()
                    .map(|o| o.map(|id| cmp_nodes[&id]))
                    .collect(),
                sqrts.iter().map(|(n, _)| *n).collect(),
            ));
        }

        trace.bytes_to_client += msg.buf.len();
        let response = client.resolve_round(&msg.buf)?;
        trace.bytes_to_server += response.len();
        trace.rounds += 1;

        let mut r = Reader::new(&response, TAG_RESPONSE)?;
        let sections = r.len(12)?;
        if sections != routes.len() {
            return Err(Error::Wire("response section count mismatch".into()));
        }
        for (cmp_route, sqrt_route) in &routes {
            r.u32()?;
            let n = r.len(24)?;
            for _ in 0..n {
                let id = r.u32()? as usize;
                let ct = r.ct()?;
                match cmp_route.get(id) {
                    Some(Some(node)) => ev.resolve(*node, ct),
                    Some(None) => {}
                    None => return Err(Error::Wire(format!("unknown request id {id}"))),
                }
            }
            let n = r.len(24)?;
            for _ in 0..n {
                let id = r.u32()? as usize;
                let ct = r.ct()?;
                let node = sqrt_route
                    .get(id)
                    .ok_or_else(|| Error::Wire(format!("unknown sqrt id {id}")))?;
                ev.resolve(*node, ct);
            }
        }
        r.finish()?;
    }

    let mut out = Writer::new(TAG_OUTPUTS);
    out.len(program.outputs.len());
    for &o in &program.outputs {
        out.ct(&ev.take(o).into_ciphertext(params));
    }
    trace.output_bytes = out.buf.len();
    let depth = ev.depth_report();
    let values = client.decrypt_outputs(&out.buf)?;
    Ok(Outcome {
        values,
        trace,
        depth,
        leakage: None,
    })
}

/// Lowers `program` and evaluates the package coefficients; no padding.
pub fn build_package(
    program: &mut Program,
    params: &SimParams,
    seed: u64,
    opts: LowerOptions,
) -> Result<(DeferredPackage, DepthReport)> {
    let _role = enter_role(Role::Server);
    let lowered = lower(&mut program.graph, &program.outputs, opts)?;
    let coeffs = lowered.coefficient_nodes();
    let g = &program.graph;
    let mut ev = ServerEval::new(g, *params, seed, &coeffs);
    ev.evaluate_all()?;
    let mut values = FxHashMap::default();
    for &c in &coeffs {
        values.insert(c, ev.take(c).into_ciphertext(params));
    }
    let depth = ev.depth_report();
    Ok((lowered.into_package(&|c| values[&c]), depth))
}

fn definition_stage(g: &Graph, d: &Definition) -> Option<StageId> {
    match d {
        Definition::Compare { id, .. } => Some(g.stage_of(g.comparisons()[*id as usize].node)),
        _ => None,
    }
}

fn rerandomized(f: &ResidualFunction) -> ResidualFunction {
    ResidualFunction {
        terms: f
            .terms
            .iter()
            .map(|t| Term {
                monomial: t.monomial.clone(),
                coefficient: t.coefficient.rerandomize(),
            })
            .collect(),
    }
}

/// Adds decoy comparisons per stage at random admissible schedule positions,
/// then renumbers parameters. Returns per-stage batch records.
fn pad_package(
    g: &Graph,
    pkg: &mut DeferredPackage,
    policy: &PaddingPolicy,
    rng: &mut ChaCha8Rng,
) -> Vec<BatchRecord> {
    let pool = input_pool(g);
    let mut position: FxHashMap<Param, usize> = FxHashMap::default();
    let mut by_stage: FxHashMap<StageId, Vec<usize>> = FxHashMap::default();
    for (i, d) in pkg.schedule.iter().enumerate() {
        position.insert(d.param(), i);
        if let Some(st) = definition_stage(g, d) {
            by_stage.entry(st).or_default().push(i);
        }
    }
    let sqrt_stages: FxHashMap<StageId, usize> =
        g.sqrt_nodes()
            .iter()
            .fold(FxHashMap::default(), |mut m, s| {
                *m.entry(g.stage_of(s.node)).or_insert(0) += 1;
                m
            });
    let mut stages: Vec<StageId> = by_stage.keys().chain(sqrt_stages.keys()).copied().collect();
    stages.sort_unstable();
    stages.dedup();

    let mut decoys: Vec<(usize, Definition)> = Vec::new();
    let mut records = Vec::new();
    for st in stages {
        let real = by_stage.get(&st).cloned().unwrap_or_default();
        let target = policy.target(real.len());
        for k in 0..target - real.len() {
            let decoy = if real.is_empty() {
                let pick = |rng: &mut ChaCha8Rng| ResidualFunction {
                    terms: pool
                        .get(rng.gen_range(0..pool.len().max(1)))
                        .map(|c| Term {
                            monomial: Default::default(),
                            coefficient: c.rerandomize(),
                        })
                        .into_iter()
                        .collect(),
                };
                Definition::Compare {
                    id: u32::MAX,
                    lhs: pick(rng),
                    rhs: pick(rng),
                }
            } else {
                // round-robin source keeps the package size independent of the seed
                let src = &pkg.schedule[real[k % real.len()]];
                let Definition::Compare { lhs, rhs, .. } = src else {
                    unreachable!("stage lists hold comparisons")
                };
                let (a, b) = if rng.gen::<bool>() {
                    (lhs, rhs)
                } else {
                    (rhs, lhs)
                };
                Definition::Compare {
                    id: u32::MAX,
                    lhs: rerandomized(a),
                    rhs: rerandomized(b),
                }
            };
            let earliest = decoy
                .functions()
                .iter()
                .flat_map(|f| f.params())
                .map(|p| position[&p] + 1)
                .max()
                .unwrap_or(0);
            let pos = rng.gen_range(earliest..=pkg.schedule.len());
            decoys.push((pos, decoy));
        }
        records.push(BatchRecord {
            round: 1,
            stage: g.stage_name(st).to_string(),
            real: real.len(),
            decoys: target - real.len(),
            sqrts: sqrt_stages.get(&st).copied().unwrap_or(0),
            bytes: 0,
        });
    }

    // decoy ids must not collide before renumbering
    let mut next_id = pkg
        .schedule
        .iter()
        .filter_map(|d| match d {
            Definition::Compare { id, .. } => Some(*id + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    decoys.sort_by_key(|(p, _)| *p);
    let real = std::mem::take(&mut pkg.schedule);
    let mut merged = Vec::with_capacity(real.len() + decoys.len());
    let mut di = decoys.into_iter().peekable();
    for (i, d) in real.into_iter().enumerate() {
        while let Some((_, mut decoy)) = di.next_if(|(p, _)| *p == i) {
            if let Definition::Compare { id, .. } = &mut decoy {
                *id = next_id;
                next_id += 1;
            }
            merged.push(decoy);
        }
        merged.push(d);
    }
    for (_, mut decoy) in di {
        if let Definition::Compare { id, .. } = &mut decoy {
            *id = next_id;
            next_id += 1;
        }
        merged.push(decoy);
    }
    pkg.schedule = merged;
    pkg.renumber();
    records
}

/// Runs `program` in exactly one round via a deferred package.
pub fn run_deferred(
    program: &mut Program,
    params: &SimParams,
    client: &Client,
    cfg: &ProtocolConfig,
    opts: LowerOptions,
) -> Result<Outcome> {
    let (bytes, depth, records, leakage) = {
        let (mut pkg, depth) = build_package(program, params, cfg.seed, opts)?;
        let _role = enter_role(Role::Server);
        let leakage = Leakage {
            monomials: pkg.monomial_count(),
            params: pkg.param_count(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let records = pad_package(&program.graph, &mut pkg, &cfg.padding, &mut rng);
        (wire::encode_package(&pkg), depth, records, leakage)
    };
    let trace = RoundTrace {
        rounds: 1,
        batches: records,
        bytes_to_client: bytes.len(),
        bytes_to_server: 0,
        output_bytes: 0,
    };
    let pkg = wire::decode_package(&bytes)?;
    drop(bytes);
    let values = client.resolve_package(&pkg)?;
    Ok(Outcome {
        values,
        trace,
        depth,
        leakage: Some(leakage),
    })
}

//! Homomorphic evaluation of a graph on the server.
//!
//! Nodes are grouped into waves: a comparison or square-root leaf sits one
//! wave after its operands, every other node in the latest wave of its
//! children. Wave `w` can be evaluated once the client has answered all
//! requests of waves `≤ w`. Values are dropped after their last use.

use rustc_hash::FxHashMap;

use super::{Expr, ExprId, Graph};
use crate::error::{Error, Result};
use crate::sim::{self, Ciphertext, Evaluator, SimParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Plain(f64),
    Cipher(Ciphertext),
}

impl Value {
    /// Ciphertext view; public constants are encoded at full level.
    pub fn into_ciphertext(self, params: &SimParams) -> Ciphertext {
        match self {
            Value::Plain(k) => Ciphertext::encode(k, params),
            Value::Cipher(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageDepth {
    pub stage: String,
    /// Lowest level of any ciphertext produced in the stage.
    pub min_level: Option<u32>,
    /// Levels consumed from the budget by the end of the stage.
    pub consumed: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthReport {
    pub budget: u32,
    pub stages: Vec<StageDepth>,
}

impl DepthReport {
    pub fn max_consumed(&self) -> u32 {
        self.stages.iter().map(|s| s.consumed).max().unwrap_or(0)
    }
}

pub struct ServerEval<'g> {
    graph: &'g Graph,
    ev: Evaluator,
    values: FxHashMap<u32, Ciphertext>,
    remaining: Vec<u32>,
    waves: Vec<Vec<u32>>,
    requests: Vec<Vec<ExprId>>,
    stage_min: Vec<Option<u32>>,
}

impl<'g> ServerEval<'g> {
    /// Prepares evaluation of everything `roots` depends on. Each root
    /// listed counts as one pending use, released by [`Self::take`].
    pub fn new(graph: &'g Graph, params: SimParams, seed: u64, roots: &[ExprId]) -> Self {
        let n = graph.len();
        let mut remaining = vec![0u32; n];
        let mut needed = vec![false; n];
        let mut stack: Vec<ExprId> = Vec::new();
        for &r in roots {
            remaining[r.index()] += 1;
            stack.push(r);
        }
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut needed[id.index()], true) {
                continue;
            }
            for c in operands(graph, id) {
                remaining[c.index()] += 1;
                stack.push(c);
            }
        }

        let mut wave = vec![0u16; n];
        let mut waves: Vec<Vec<u32>> = vec![Vec::new()];
        let mut requests: Vec<Vec<ExprId>> = vec![Vec::new()];
        for i in 0..n {
            if !needed[i] {
                continue;
            }
            let id = ExprId(i as u32);
            let ops = operands(graph, id);
            let inner = ops.iter().map(|c| wave[c.index()]).max().unwrap_or(0);
            let w = match graph.node(id) {
                Expr::BoolVar(_) | Expr::Sqrt(_) => inner + 1,
                _ => inner,
            };
            wave[i] = w;
            let w = w as usize;
            if waves.len() <= w {
                waves.resize(w + 1, Vec::new());
                requests.resize(w + 1, Vec::new());
            }
            match graph.node(id) {
                Expr::BoolVar(_) | Expr::Sqrt(_) => requests[w].push(id),
                Expr::Plain(_) => {}
                _ => waves[w].push(id.0),
            }
        }

        Self {
            graph,
            ev: Evaluator::new(params, seed),
            values: FxHashMap::default(),
            remaining,
            waves,
            requests,
            stage_min: vec![None; graph.stages().len()],
        }
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn params(&self) -> &SimParams {
        self.ev.params()
    }

    /// Number of client round trips needed.
    pub fn max_wave(&self) -> usize {
        self.waves.len() - 1
    }

    /// Comparison and square-root nodes answered in round `w` (1-based).
    pub fn requests(&self, w: usize) -> &[ExprId] {
        &self.requests[w]
    }

    /// Evaluates every arithmetic node of wave `w`. All requests of waves
    /// `1..=w` must have been resolved.
    pub fn evaluate_wave(&mut self, w: usize) -> Result<()> {
        let nodes = std::mem::take(&mut self.waves[w]);
        for &i in &nodes {
            let id = ExprId(i);
            let ct = self
                .eval_node(id)
                .map_err(|e| e.with_stage(self.graph.stage_name(self.graph.stage_of(id))))?;
            self.store(id, ct);
        }
        Ok(())
    }

    fn store(&mut self, id: ExprId, ct: Ciphertext) {
        let st = self.graph.stage_of(id).index();
        let lvl = ct.level();
        self.stage_min[st] = Some(self.stage_min[st].map_or(lvl, |m| m.min(lvl)));
        self.values.insert(id.0, ct);
    }

    fn eval_node(&mut self, id: ExprId) -> Result<Ciphertext> {
        Ok(match self.graph.node(id) {
            Expr::Cipher(inp) => *self.graph.input_ciphertext(inp),
            Expr::Neg(a) => match self.take(a) {
                Value::Cipher(c) => sim::neg(&c),
                Value::Plain(_) => unreachable!("folded at construction"),
            },
            Expr::Add(a, b) => match (self.take(a), self.take(b)) {
                (Value::Cipher(x), Value::Cipher(y)) => sim::add(&x, &y),
                (Value::Cipher(x), Value::Plain(k)) | (Value::Plain(k), Value::Cipher(x)) => {
                    sim::add_plain(&x, k)
                }
                (Value::Plain(_), Value::Plain(_)) => unreachable!("folded at construction"),
            },
            Expr::Mul(a, b) => match (self.take(a), self.take(b)) {
                (Value::Cipher(x), Value::Cipher(y)) => self.ev.mul(&x, &y)?,
                (Value::Cipher(x), Value::Plain(k)) | (Value::Plain(k), Value::Cipher(x)) => {
                    self.ev.mul_plain(&x, k)?
                }
                (Value::Plain(_), Value::Plain(_)) => unreachable!("folded at construction"),
            },
            Expr::Plain(_) | Expr::BoolVar(_) | Expr::Sqrt(_) => {
                unreachable!("not an arithmetic node")
            }
        })
    }

    /// Reads a value, releasing one pending use.
    pub fn take(&mut self, id: ExprId) -> Value {
        if let Some(k) = self.graph.as_plain(id) {
            return Value::Plain(k);
        }
        let left = &mut self.remaining[id.index()];
        debug_assert!(*left > 0, "value read more often than counted");
        *left -= 1;
        let ct = if *left == 0 {
            self.values.remove(&id.0)
        } else {
            self.values.get(&id.0).copied()
        };
        Value::Cipher(ct.unwrap_or_else(|| panic!("node {} read before evaluation", id.0)))
    }

    /// Installs the client's answer for a comparison or square-root node.
    pub fn resolve(&mut self, id: ExprId, ct: Ciphertext) {
        self.store(id, ct);
    }

    /// Evaluates all waves without any client, for graphs that contain no
    /// comparison or square-root leaves.
    pub fn evaluate_all(&mut self) -> Result<()> {
        if self.max_wave() > 0 {
            return Err(Error::InvalidArgument(
                "graph needs client-resolved values".into(),
            ));
        }
        self.evaluate_wave(0)
    }

    pub fn depth_report(&self) -> DepthReport {
        let budget = self.ev.params().depth_budget;
        let mut consumed_so_far = 0;
        let stages = self
            .graph
            .stages()
            .iter()
            .zip(&self.stage_min)
            .map(|(name, min)| {
                if let Some(m) = min {
                    consumed_so_far = consumed_so_far.max(budget - m);
                }
                StageDepth {
                    stage: name.clone(),
                    min_level: *min,
                    consumed: consumed_so_far,
                }
            })
            .collect();
        DepthReport { budget, stages }
    }
}

fn operands(g: &Graph, id: ExprId) -> smallvec::SmallVec<[ExprId; 2]> {
    let mut out = smallvec::SmallVec::new();
    match g.node(id) {
        Expr::Add(a, b) | Expr::Mul(a, b) => {
            out.push(a);
            out.push(b);
        }
        Expr::Neg(a) => out.push(a),
        Expr::BoolVar(c) => {
            let cmp = g.comparison(c);
            out.push(cmp.lhs);
            out.push(cmp.rhs);
        }
        Expr::Sqrt(s) => out.push(g.sqrt_node(s).arg),
        Expr::Cipher(_) | Expr::Plain(_) => {}
    }
    out
}

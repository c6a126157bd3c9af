//! Server-side symbolic computation graph.
//!
//! Every encrypted quantity the server manipulates is a node in a
//! hash-consed DAG. Comparisons and square roots are never computed by the
//! server: they appear as [`Expr::BoolVar`] and [`Expr::Sqrt`] leaves whose
//! values are supplied later by the client, either interactively or by
//! resolving a single deferred package.
//!
//! Node ids are allocated in creation order, so every child id is smaller
//! than its parent's id and ascending id order is a topological order.

use std::fmt;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::sim::Ciphertext;

mod eval;
mod lower;
mod normal;
mod rational;

pub use eval::{DepthReport, ServerEval, StageDepth, Value};
pub use lower::{
    evaluate_residual, lower, Assignment, DeferredPackage, Definition, LowerOptions, Lowered,
    ResidualFunction, Term,
};
pub use normal::{normal_form, simplify, Monomial, Param, Poly, SymbolicDef};
pub use rational::{DenSign, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExprId(pub(crate) u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InputId(pub(crate) u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComparisonId(pub(crate) u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SqrtId(pub(crate) u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StageId(pub(crate) u16);

macro_rules! id_index {
    ($($t:ty),*) => {$(
        impl $t {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    )*};
}
id_index!(ExprId, InputId, ComparisonId, SqrtId, StageId);

/// Public view of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expr {
    Cipher(InputId),
    Plain(f64),
    Add(ExprId, ExprId),
    Mul(ExprId, ExprId),
    Neg(ExprId),
    BoolVar(ComparisonId),
    Sqrt(SqrtId),
}

/// A recorded strict comparison `[lhs > rhs]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Comparison {
    pub lhs: ExprId,
    pub rhs: ExprId,
    pub node: ExprId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SqrtNode {
    pub arg: ExprId,
    pub node: ExprId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
enum Op {
    Input,
    Plain,
    Add,
    Mul,
    Neg,
    BoolVar,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct RawNode {
    op: Op,
    a: u32,
    b: u32,
}

impl RawNode {
    fn plain(k: f64) -> Self {
        // -0.0 and 0.0 intern to the same node
        let bits = if k == 0.0 { 0 } else { k.to_bits() };
        Self {
            op: Op::Plain,
            a: (bits >> 32) as u32,
            b: bits as u32,
        }
    }

    fn plain_value(&self) -> f64 {
        f64::from_bits(((self.a as u64) << 32) | self.b as u64)
    }
}

/// Per-stage node census used to check that the circuit shape does not
/// depend on data.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCensus {
    pub stage: String,
    pub inputs: usize,
    pub plains: usize,
    pub adds: usize,
    pub muls: usize,
    pub negs: usize,
    pub comparisons: usize,
    pub sqrts: usize,
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<RawNode>,
    has_params: Vec<bool>,
    stage_of: Vec<StageId>,
    interned: FxHashMap<RawNode, u32>,
    inputs: Vec<Ciphertext>,
    labels: FxHashMap<u32, String>,
    comparisons: Vec<Comparison>,
    comparison_index: FxHashMap<(u32, u32), ComparisonId>,
    sqrts: Vec<SqrtNode>,
    sqrt_index: FxHashMap<u32, SqrtId>,
    stages: Vec<String>,
    current_stage: StageId,
    sign_resolution: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            has_params: Vec::new(),
            stage_of: Vec::new(),
            interned: FxHashMap::default(),
            inputs: Vec::new(),
            labels: FxHashMap::default(),
            comparisons: Vec::new(),
            comparison_index: FxHashMap::default(),
            sqrts: Vec::new(),
            sqrt_index: FxHashMap::default(),
            stages: vec!["main".to_string()],
            current_stage: StageId(0),
            sign_resolution: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Switches the stage that subsequently created nodes are attributed to,
    /// registering it on first use.
    pub fn begin_stage(&mut self, name: &str) -> StageId {
        let id = match self.stages.iter().position(|s| s == name) {
            Some(i) => StageId(i as u16),
            None => {
                self.stages.push(name.to_string());
                StageId((self.stages.len() - 1) as u16)
            }
        };
        self.current_stage = id;
        id
    }

    pub(crate) fn set_stage(&mut self, stage: StageId) {
        self.current_stage = stage;
    }

    pub fn current_stage(&self) -> StageId {
        self.current_stage
    }

    pub fn stage_name(&self, stage: StageId) -> &str {
        &self.stages[stage.index()]
    }

    pub fn stages(&self) -> &[String] {
        &self.stages
    }

    pub fn stage_of(&self, id: ExprId) -> StageId {
        self.stage_of[id.index()]
    }

    /// When disabled, comparing rationals with an unknown denominator sign
    /// fails with [`Error::SignUnresolvable`] instead of spending an extra
    /// sign comparison.
    pub fn set_sign_resolution(&mut self, enabled: bool) {
        self.sign_resolution = enabled;
    }

    pub fn sign_resolution(&self) -> bool {
        self.sign_resolution
    }

    fn intern(&mut self, raw: RawNode, has_params: bool) -> ExprId {
        if let Some(&id) = self.interned.get(&raw) {
            return ExprId(id);
        }
        let id = u32::try_from(self.nodes.len()).expect("graph exceeds u32 nodes");
        self.nodes.push(raw);
        self.has_params.push(has_params);
        self.stage_of.push(self.current_stage);
        self.interned.insert(raw, id);
        ExprId(id)
    }

    pub fn node(&self, id: ExprId) -> Expr {
        let raw = self.nodes[id.index()];
        match raw.op {
            Op::Input => Expr::Cipher(InputId(raw.a)),
            Op::Plain => Expr::Plain(raw.plain_value()),
            Op::Add => Expr::Add(ExprId(raw.a), ExprId(raw.b)),
            Op::Mul => Expr::Mul(ExprId(raw.a), ExprId(raw.b)),
            Op::Neg => Expr::Neg(ExprId(raw.a)),
            Op::BoolVar => Expr::BoolVar(ComparisonId(raw.a)),
            Op::Sqrt => Expr::Sqrt(SqrtId(raw.a)),
        }
    }

    /// True if the node depends on any comparison or square-root result.
    pub fn has_params(&self, id: ExprId) -> bool {
        self.has_params[id.index()]
    }

    pub fn as_plain(&self, id: ExprId) -> Option<f64> {
        let raw = self.nodes[id.index()];
        (raw.op == Op::Plain).then(|| raw.plain_value())
    }

    fn is_neg_of(&self, a: ExprId, b: ExprId) -> bool {
        let raw = self.nodes[a.index()];
        raw.op == Op::Neg && raw.a == b.0
    }

    pub fn input(&mut self, ct: Ciphertext) -> ExprId {
        let idx = self.inputs.len() as u32;
        self.inputs.push(ct);
        self.intern(
            RawNode {
                op: Op::Input,
                a: idx,
                b: 0,
            },
            false,
        )
    }

    /// Input with a display label used by text dumps.
    pub fn input_labeled(&mut self, label: &str, ct: Ciphertext) -> ExprId {
        let id = self.input(ct);
        self.labels.insert(id.0, label.to_string());
        id
    }

    pub fn inputs(&self) -> &[Ciphertext] {
        &self.inputs
    }

    pub fn input_ciphertext(&self, input: InputId) -> &Ciphertext {
        &self.inputs[input.index()]
    }

    pub fn plain(&mut self, k: f64) -> ExprId {
        self.intern(RawNode::plain(k), false)
    }

    pub fn add(&mut self, a: ExprId, b: ExprId) -> ExprId {
        match (self.as_plain(a), self.as_plain(b)) {
            (Some(x), Some(y)) => return self.plain(x + y),
            (Some(x), _) if x == 0.0 => return b,
            (_, Some(y)) if y == 0.0 => return a,
            _ => {}
        }
        if self.is_neg_of(a, b) || self.is_neg_of(b, a) {
            return self.plain(0.0);
        }
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let p = self.has_params(a) || self.has_params(b);
        self.intern(
            RawNode {
                op: Op::Add,
                a: a.0,
                b: b.0,
            },
            p,
        )
    }

    pub fn neg(&mut self, a: ExprId) -> ExprId {
        if let Some(x) = self.as_plain(a) {
            return self.plain(-x);
        }
        let raw = self.nodes[a.index()];
        if raw.op == Op::Neg {
            return ExprId(raw.a);
        }
        let p = self.has_params(a);
        self.intern(
            RawNode {
                op: Op::Neg,
                a: a.0,
                b: 0,
            },
            p,
        )
    }

    pub fn sub(&mut self, a: ExprId, b: ExprId) -> ExprId {
        if a == b {
            return self.plain(0.0);
        }
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: ExprId, b: ExprId) -> ExprId {
        match (self.as_plain(a), self.as_plain(b)) {
            (Some(x), Some(y)) => return self.plain(x * y),
            (Some(k), _) | (_, Some(k)) if k == 0.0 => return self.plain(0.0),
            (Some(k), _) if k == 1.0 => return b,
            (_, Some(k)) if k == 1.0 => return a,
            (Some(k), _) if k == -1.0 => return self.neg(b),
            (_, Some(k)) if k == -1.0 => return self.neg(a),
            _ => {}
        }
        if a == b && self.nodes[a.index()].op == Op::BoolVar {
            return a;
        }
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let p = self.has_params(a) || self.has_params(b);
        self.intern(
            RawNode {
                op: Op::Mul,
                a: a.0,
                b: b.0,
            },
            p,
        )
    }

    pub fn mul_plain(&mut self, a: ExprId, k: f64) -> ExprId {
        let k = self.plain(k);
        self.mul(a, k)
    }

    pub fn add_plain(&mut self, a: ExprId, k: f64) -> ExprId {
        let k = self.plain(k);
        self.add(a, k)
    }

    /// `k·x` by doubling and adding, so integer stencils cost no level.
    pub fn times(&mut self, x: ExprId, k: i64) -> ExprId {
        let mut acc = self.plain(0.0);
        let mut base = x;
        let mut m = k.unsigned_abs();
        while m > 0 {
            if m & 1 == 1 {
                acc = self.add(acc, base);
            }
            m >>= 1;
            if m > 0 {
                base = self.add(base, base);
            }
        }
        if k < 0 {
            self.neg(acc)
        } else {
            acc
        }
    }

    /// Balanced sum; additions are free in depth but a balanced tree keeps
    /// evaluation chains short.
    pub fn sum(&mut self, terms: &[ExprId]) -> ExprId {
        self.reduce_balanced(terms, 0.0, Self::add)
    }

    /// Balanced product: depth ⌈log₂ n⌉ instead of n − 1.
    pub fn product(&mut self, factors: &[ExprId]) -> ExprId {
        self.reduce_balanced(factors, 1.0, Self::mul)
    }

    fn reduce_balanced(
        &mut self,
        items: &[ExprId],
        identity: f64,
        op: fn(&mut Self, ExprId, ExprId) -> ExprId,
    ) -> ExprId {
        match items.len() {
            0 => self.plain(identity),
            1 => items[0],
            n => {
                let (l, r) = items.split_at(n / 2);
                let l = self.reduce_balanced(l, identity, op);
                let r = self.reduce_balanced(r, identity, op);
                op(self, l, r)
            }
        }
    }

    /// Strict comparison `[a > b]` as a boolean variable.
    ///
    /// Each unordered operand pair is recorded once. If the pair already
    /// exists in the opposite orientation `[b > a]`, the complement
    /// `1 − [b > a]` is returned and no new comparison is created.
    pub fn compare(&mut self, a: ExprId, b: ExprId) -> ExprId {
        if let (Some(x), Some(y)) = (self.as_plain(a), self.as_plain(b)) {
            return self.plain(if x > y { 1.0 } else { 0.0 });
        }
        let key = if a <= b { (a.0, b.0) } else { (b.0, a.0) };
        if let Some(&cid) = self.comparison_index.get(&key) {
            let cmp = self.comparisons[cid.index()];
            return if cmp.lhs == a {
                cmp.node
            } else {
                self.not(cmp.node)
            };
        }
        let cid = ComparisonId(self.comparisons.len() as u32);
        let node = self.intern(
            RawNode {
                op: Op::BoolVar,
                a: cid.0,
                b: 0,
            },
            true,
        );
        self.comparisons.push(Comparison {
            lhs: a,
            rhs: b,
            node,
        });
        self.comparison_index.insert(key, cid);
        node
    }

    /// `[a > b]`
    pub fn gt(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.compare(a, b)
    }

    /// `[a < b]`, i.e. `[b > a]`.
    pub fn lt(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.compare(b, a)
    }

    /// `[a ≥ b]`, defined as `1 − [b > a]`.
    pub fn ge(&mut self, a: ExprId, b: ExprId) -> ExprId {
        let c = self.compare(b, a);
        self.not(c)
    }

    /// `[a ≤ b]`, defined as `1 − [a > b]`.
    pub fn le(&mut self, a: ExprId, b: ExprId) -> ExprId {
        let c = self.compare(a, b);
        self.not(c)
    }

    pub fn not(&mut self, c: ExprId) -> ExprId {
        let one = self.plain(1.0);
        let nc = self.neg(c);
        self.add(one, nc)
    }

    /// Branchless conditional: `cond·(then − else) + else`.
    pub fn select(&mut self, cond: ExprId, then: ExprId, else_: ExprId) -> ExprId {
        match self.as_plain(cond) {
            Some(k) if k == 1.0 => return then,
            Some(k) if k == 0.0 => return else_,
            _ => {}
        }
        if then == else_ {
            return then;
        }
        let diff = self.sub(then, else_);
        let masked = self.mul(cond, diff);
        self.add(masked, else_)
    }

    /// Square root delegated to the client.
    pub fn sqrt(&mut self, arg: ExprId) -> ExprId {
        if let Some(&sid) = self.sqrt_index.get(&arg.0) {
            return self.sqrts[sid.index()].node;
        }
        let sid = SqrtId(self.sqrts.len() as u32);
        let node = self.intern(
            RawNode {
                op: Op::Sqrt,
                a: sid.0,
                b: 0,
            },
            true,
        );
        self.sqrts.push(SqrtNode { arg, node });
        self.sqrt_index.insert(arg.0, sid);
        node
    }

    pub fn comparisons(&self) -> &[Comparison] {
        &self.comparisons
    }

    pub fn comparison(&self, id: ComparisonId) -> &Comparison {
        &self.comparisons[id.index()]
    }

    pub fn sqrt_nodes(&self) -> &[SqrtNode] {
        &self.sqrts
    }

    pub fn sqrt_node(&self, id: SqrtId) -> &SqrtNode {
        &self.sqrts[id.index()]
    }

    /// Node counts per stage, by operation.
    pub fn census(&self) -> Vec<OpCensus> {
        let mut out: Vec<OpCensus> = self
            .stages
            .iter()
            .map(|s| OpCensus {
                stage: s.clone(),
                ..Default::default()
            })
            .collect();
        for (raw, stage) in self.nodes.iter().zip(&self.stage_of) {
            let c = &mut out[stage.index()];
            match raw.op {
                Op::Input => c.inputs += 1,
                Op::Plain => c.plains += 1,
                Op::Add => c.adds += 1,
                Op::Mul => c.muls += 1,
                Op::Neg => c.negs += 1,
                Op::BoolVar => c.comparisons += 1,
                Op::Sqrt => c.sqrts += 1,
            }
        }
        out
    }

    /// Plaintext evaluation of every node up to `max(roots)` in id order,
    /// resolving comparisons and square roots directly from their operands.
    /// `bool_override` may force the value of individual comparisons.
    pub fn eval_direct_with(
        &self,
        roots: &[ExprId],
        input_values: &[f64],
        bool_override: &dyn Fn(ComparisonId) -> Option<f64>,
    ) -> Vec<f64> {
        let Some(max) = roots.iter().map(|r| r.index()).max() else {
            return Vec::new();
        };
        let mut vals = vec![0.0f64; max + 1];
        for i in 0..=max {
            let v = match self.node(ExprId(i as u32)) {
                Expr::Cipher(inp) => input_values[inp.index()],
                Expr::Plain(k) => k,
                Expr::Add(a, b) => vals[a.index()] + vals[b.index()],
                Expr::Mul(a, b) => vals[a.index()] * vals[b.index()],
                Expr::Neg(a) => -vals[a.index()],
                Expr::BoolVar(c) => match bool_override(c) {
                    Some(v) => v,
                    None => {
                        let cmp = self.comparison(c);
                        if vals[cmp.lhs.index()] > vals[cmp.rhs.index()] {
                            1.0
                        } else {
                            0.0
                        }
                    }
                },
                Expr::Sqrt(s) => vals[self.sqrt_node(s).arg.index()].max(0.0).sqrt(),
            };
            vals[i] = v;
        }
        roots.iter().map(|r| vals[r.index()]).collect()
    }

    pub fn eval_direct(&self, roots: &[ExprId], input_values: &[f64]) -> Vec<f64> {
        self.eval_direct_with(roots, input_values, &|_| None)
    }

    /// Renders a node as an infix expression. Inputs print as their label or
    /// `in<k>`, comparisons as `c<k>`, square roots as `s<k>`.
    pub fn display(&self, id: ExprId) -> String {
        let mut out = String::new();
        self.write_expr(&mut out, id, 0).expect("string write");
        out
    }

    fn write_expr(&self, f: &mut String, id: ExprId, prec: u8) -> fmt::Result {
        use fmt::Write;
        match self.node(id) {
            Expr::Cipher(inp) => match self.labels.get(&id.0) {
                Some(l) => write!(f, "{l}"),
                None => write!(f, "in{}", inp.0),
            },
            Expr::Plain(k) => write!(f, "{k}"),
            Expr::BoolVar(c) => write!(f, "c{}", c.0),
            Expr::Sqrt(s) => write!(f, "s{}", s.0),
            Expr::Neg(a) => {
                write!(f, "-")?;
                self.write_expr(f, a, 3)
            }
            Expr::Add(a, b) => {
                if prec > 1 {
                    write!(f, "(")?;
                }
                self.write_expr(f, a, 1)?;
                match self.node(b) {
                    Expr::Neg(inner) => {
                        write!(f, " - ")?;
                        self.write_expr(f, inner, 2)?;
                    }
                    _ => {
                        write!(f, " + ")?;
                        self.write_expr(f, b, 1)?;
                    }
                }
                if prec > 1 {
                    write!(f, ")")?;
                }
                Ok(())
            }
            Expr::Mul(a, b) => {
                if prec > 2 {
                    write!(f, "(")?;
                }
                self.write_expr(f, a, 2)?;
                write!(f, "*")?;
                self.write_expr(f, b, 3)?;
                if prec > 2 {
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }

    pub(crate) fn check_sign_resolution(&self, site: &'static str) -> Result<()> {
        if self.sign_resolution {
            Ok(())
        } else {
            Err(Error::SignUnresolvable { site })
        }
    }
}

//! Polynomial normal form over client-resolved parameters.
//!
//! Any expression is affine in each boolean and square-root leaf, so it can
//! be written as a sum of terms `coefficient · p₁·p₂·…` where the `pᵢ` are
//! parameters and the coefficient is a parameter-free graph node that the
//! server can evaluate on its own. Booleans are idempotent (`b² = b`).
//! Square roots keep their powers: the client clamps negative arguments to
//! zero, so `s²` equals the argument only where the argument is nonnegative.
//!
//! With sharing enabled, sub-expressions that would be duplicated during
//! expansion are bound to `Shared` parameters instead. Their definitions
//! become part of the deferred schedule and are evaluated by the client in
//! order, which keeps residual size linear in the graph size.

use std::fmt;

use rustc_hash::{FxHashMap, FxHashSet};
use smallvec::SmallVec;

use super::{Expr, ExprId, Graph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Param {
    Bool(u32),
    Sqrt(u32),
    Shared(u32),
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Bool(i) => write!(f, "c{i}"),
            Param::Sqrt(i) => write!(f, "s{i}"),
            Param::Shared(i) => write!(f, "v{i}"),
        }
    }
}

/// Sorted parameter list; the empty monomial is the constant term.
pub type Monomial = SmallVec<[Param; 4]>;

/// Sum of `(monomial, coefficient)` terms, sorted by monomial, without
/// duplicates or structurally zero coefficients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poly {
    pub terms: Vec<(Monomial, ExprId)>,
}

impl Poly {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn has_params(&self) -> bool {
        self.terms.iter().any(|(m, _)| !m.is_empty())
    }

    pub(crate) fn constant(g: &mut Graph, e: ExprId) -> Self {
        if g.as_plain(e) == Some(0.0) {
            return Self::default();
        }
        Self {
            terms: vec![(Monomial::new(), e)],
        }
    }

    pub(crate) fn param(g: &mut Graph, p: Param) -> Self {
        let one = g.plain(1.0);
        let mut m = Monomial::new();
        m.push(p);
        Self {
            terms: vec![(m, one)],
        }
    }

    /// One line per term: `c0*c1: coefficient`, constant term as `1`.
    pub fn dump(&self, g: &Graph) -> String {
        let mut out = String::new();
        for (m, c) in &self.terms {
            if m.is_empty() {
                out.push('1');
            } else {
                let names: Vec<String> = m.iter().map(|p| p.to_string()).collect();
                out.push_str(&names.join("*"));
            }
            out.push_str(": ");
            out.push_str(&g.display(*c));
            out.push('\n');
        }
        out
    }

    fn from_unsorted(g: &mut Graph, mut terms: Vec<(Monomial, ExprId)>) -> Self {
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(Monomial, ExprId)> = Vec::with_capacity(terms.len());
        for (m, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == m => last.1 = g.add(last.1, c),
                _ => out.push((m, c)),
            }
        }
        out.retain(|(_, c)| g.as_plain(*c) != Some(0.0));
        Self { terms: out }
    }
}

fn poly_add(g: &mut Graph, a: Poly, b: Poly) -> Poly {
    if a.is_empty() {
        return b;
    }
    if b.is_empty() {
        return a;
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut ia = a.terms.into_iter().peekable();
    let mut ib = b.terms.into_iter().peekable();
    loop {
        let ord = match (ia.peek(), ib.peek()) {
            (Some(x), Some(y)) => x.0.cmp(&y.0),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => break,
        };
        match ord {
            std::cmp::Ordering::Less => out.push(ia.next().unwrap()),
            std::cmp::Ordering::Greater => out.push(ib.next().unwrap()),
            std::cmp::Ordering::Equal => {
                let (m, x) = ia.next().unwrap();
                let (_, y) = ib.next().unwrap();
                let c = g.add(x, y);
                if g.as_plain(c) != Some(0.0) {
                    out.push((m, c));
                }
            }
        }
    }
    Poly { terms: out }
}

fn poly_neg(g: &mut Graph, a: Poly) -> Poly {
    Poly {
        terms: a.terms.into_iter().map(|(m, c)| (m, g.neg(c))).collect(),
    }
}

/// Product of two sorted monomials.
fn monomial_mul(a: &Monomial, b: &Monomial) -> Monomial {
    let mut out = Monomial::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i]);
            if !matches!(a[i], Param::Bool(_)) {
                out.push(b[j]);
            }
            i += 1;
            j += 1;
        }
    }
    out
}

fn poly_mul(g: &mut Graph, a: &Poly, b: &Poly) -> Poly {
    let mut terms = Vec::with_capacity(a.len() * b.len());
    for (ma, ca) in &a.terms {
        for (mb, cb) in &b.terms {
            let c = g.mul(*ca, *cb);
            if g.as_plain(c) == Some(0.0) {
                continue;
            }
            terms.push((monomial_mul(ma, mb), c));
        }
    }
    Poly::from_unsorted(g, terms)
}

/// A definition produced while normalizing, in dependency order.
#[derive(Debug, Clone, PartialEq)]
pub enum SymbolicDef {
    Compare { id: u32, lhs: Poly, rhs: Poly },
    Sqrt { id: u32, arg: Poly },
    Shared { id: u32, body: Poly },
}

pub(crate) struct Engine<'a> {
    g: &'a mut Graph,
    share: bool,
    nested: bool,
    polys: FxHashMap<u32, Poly>,
    remaining: FxHashMap<u32, u32>,
    uses: FxHashMap<u32, u32>,
    pub(crate) defs: Vec<SymbolicDef>,
    next_shared: u32,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(g: &'a mut Graph, share: bool, nested: bool) -> Self {
        Self {
            g,
            share,
            nested,
            polys: FxHashMap::default(),
            remaining: FxHashMap::default(),
            uses: FxHashMap::default(),
            defs: Vec::new(),
            next_shared: 0,
        }
    }

    fn param_children(&self, id: ExprId) -> SmallVec<[ExprId; 2]> {
        let mut out = SmallVec::new();
        match self.g.node(id) {
            Expr::Add(a, b) | Expr::Mul(a, b) => {
                out.push(a);
                out.push(b);
            }
            Expr::Neg(a) => out.push(a),
            Expr::BoolVar(c) => {
                let cmp = self.g.comparison(c);
                out.push(cmp.lhs);
                out.push(cmp.rhs);
            }
            Expr::Sqrt(s) => out.push(self.g.sqrt_node(s).arg),
            Expr::Cipher(_) | Expr::Plain(_) => {}
        }
        out.retain(|c| self.g.has_params(*c));
        out
    }

    /// Normal forms of `roots`, in order.
    pub(crate) fn run(&mut self, roots: &[ExprId]) -> Result<Vec<Poly>> {
        let mut order = Vec::new();
        let mut seen = FxHashSet::default();
        let mut stack: Vec<ExprId> = Vec::new();
        for &r in roots {
            if self.g.has_params(r) {
                *self.uses.entry(r.0).or_insert(0) += 1;
                stack.push(r);
            }
        }
        while let Some(n) = stack.pop() {
            if !seen.insert(n.0) {
                continue;
            }
            order.push(n.0);
            for c in self.param_children(n) {
                *self.uses.entry(c.0).or_insert(0) += 1;
                stack.push(c);
            }
        }
        order.sort_unstable();
        self.remaining = self.uses.clone();

        let saved_stage = self.g.current_stage();
        for id in order {
            let id = ExprId(id);
            self.g.set_stage(self.g.stage_of(id));
            let poly = self.normalize_node(id)?;
            self.polys.insert(id.0, poly);
        }
        self.g.set_stage(saved_stage);

        roots.iter().map(|&r| Ok(self.take(r))).collect()
    }

    fn take(&mut self, id: ExprId) -> Poly {
        if !self.g.has_params(id) {
            return Poly::constant(self.g, id);
        }
        let left = self.remaining.get_mut(&id.0).expect("use counted");
        *left -= 1;
        if *left == 0 {
            self.polys.remove(&id.0).expect("normalized before use")
        } else {
            self.polys[&id.0].clone()
        }
    }

    fn bind(&mut self, body: Poly) -> Poly {
        let id = self.next_shared;
        self.next_shared += 1;
        self.defs.push(SymbolicDef::Shared { id, body });
        Poly::param(self.g, Param::Shared(id))
    }

    fn check_nested(&self, what: &str, operand: &Poly) -> Result<()> {
        if !self.nested && operand.has_params() {
            return Err(Error::DeferralUnsupported(format!(
                "{what} operand depends on another client-resolved value"
            )));
        }
        Ok(())
    }

    fn normalize_node(&mut self, id: ExprId) -> Result<Poly> {
        let poly = match self.g.node(id) {
            Expr::BoolVar(c) => {
                let cmp = *self.g.comparison(c);
                let lhs = self.take(cmp.lhs);
                let rhs = self.take(cmp.rhs);
                self.check_nested("comparison", &lhs)?;
                self.check_nested("comparison", &rhs)?;
                self.defs.push(SymbolicDef::Compare { id: c.0, lhs, rhs });
                return Ok(Poly::param(self.g, Param::Bool(c.0)));
            }
            Expr::Sqrt(s) => {
                let arg_node = self.g.sqrt_node(s).arg;
                let arg = self.take(arg_node);
                self.check_nested("square root", &arg)?;
                self.defs.push(SymbolicDef::Sqrt { id: s.0, arg });
                return Ok(Poly::param(self.g, Param::Sqrt(s.0)));
            }
            Expr::Neg(a) => {
                let pa = self.take(a);
                poly_neg(self.g, pa)
            }
            Expr::Add(a, b) => {
                let pa = self.take(a);
                let pb = self.take(b);
                poly_add(self.g, pa, pb)
            }
            Expr::Mul(a, b) => {
                let mut pa = self.take(a);
                let mut pb = self.take(b);
                if self.share && pa.len() > 1 && pb.len() > 1 {
                    if pa.len() >= pb.len() {
                        pa = self.bind(pa);
                    } else {
                        pb = self.bind(pb);
                    }
                }
                poly_mul(self.g, &pa, &pb)
            }
            Expr::Cipher(_) | Expr::Plain(_) => unreachable!("parameter-free node"),
        };
        if self.share && self.uses[&id.0] >= 2 && poly.len() >= 2 {
            return Ok(self.bind(poly));
        }
        Ok(poly)
    }
}

/// Fully expanded normal form of `e`, without shared bindings.
pub fn normal_form(g: &mut Graph, e: ExprId) -> Result<Poly> {
    let mut engine = Engine::new(g, false, true);
    Ok(engine.run(&[e])?.remove(0))
}

/// Rebuilds `e` from its normal form: a sum over monomials of
/// `coefficient · Π parameters`, each coefficient parameter-free.
pub fn simplify(g: &mut Graph, e: ExprId) -> Result<ExprId> {
    let poly = normal_form(g, e)?;
    let mut terms = Vec::with_capacity(poly.len());
    for (m, c) in poly.terms {
        let mut factors = vec![c];
        for p in m {
            factors.push(match p {
                Param::Bool(i) => g.comparisons()[i as usize].node,
                Param::Sqrt(i) => g.sqrt_nodes()[i as usize].node,
                Param::Shared(_) => unreachable!("no sharing during simplify"),
            });
        }
        terms.push(g.product(&factors));
    }
    Ok(g.sum(&terms))
}

//! Lowering a graph into a deferred package.
//!
//! The server normalizes every output and every comparison or square-root
//! operand, evaluates the parameter-free coefficients homomorphically and
//! ships the resulting residual functions. The client resolves the schedule
//! in order, so a comparison may depend on earlier booleans.

use rustc_hash::FxHashSet;

use super::normal::{Engine, Monomial, Param, Poly, SymbolicDef};
use super::{ExprId, Graph};
use crate::error::{Error, Result};
use crate::sim::{decrypt, Ciphertext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LowerOptions {
    /// Allow comparison and square-root operands that depend on earlier
    /// client-resolved values. When false such operands are rejected with
    /// [`Error::DeferralUnsupported`].
    pub nested: bool,
    /// Bind reused or product-exploding sub-expressions to shared values.
    pub share: bool,
}

impl Default for LowerOptions {
    fn default() -> Self {
        Self {
            nested: true,
            share: true,
        }
    }
}

/// Symbolic lowering result; coefficients are still graph nodes.
#[derive(Debug, Clone)]
pub struct Lowered {
    pub defs: Vec<SymbolicDef>,
    pub slots: Vec<Poly>,
}

pub fn lower(g: &mut Graph, roots: &[ExprId], opts: LowerOptions) -> Result<Lowered> {
    let mut engine = Engine::new(g, opts.share, opts.nested);
    let slots = engine.run(roots)?;
    Ok(Lowered {
        defs: engine.defs,
        slots,
    })
}

impl Lowered {
    fn polys(&self) -> impl Iterator<Item = &Poly> {
        self.defs
            .iter()
            .flat_map(|d| match d {
                SymbolicDef::Compare { lhs, rhs, .. } => vec![lhs, rhs],
                SymbolicDef::Sqrt { arg, .. } => vec![arg],
                SymbolicDef::Shared { body, .. } => vec![body],
            })
            .chain(self.slots.iter())
    }

    /// Distinct coefficient nodes, ascending.
    pub fn coefficient_nodes(&self) -> Vec<ExprId> {
        let set: FxHashSet<ExprId> = self
            .polys()
            .flat_map(|p| p.terms.iter().map(|(_, c)| *c))
            .collect();
        let mut v: Vec<ExprId> = set.into_iter().collect();
        v.sort_unstable();
        v
    }

    /// Attaches evaluated coefficients.
    pub fn into_package(self, coeff: &dyn Fn(ExprId) -> Ciphertext) -> DeferredPackage {
        let conv = |p: Poly| ResidualFunction {
            terms: p
                .terms
                .into_iter()
                .map(|(monomial, c)| Term {
                    monomial,
                    coefficient: coeff(c),
                })
                .collect(),
        };
        let schedule = self
            .defs
            .into_iter()
            .map(|d| match d {
                SymbolicDef::Compare { id, lhs, rhs } => Definition::Compare {
                    id,
                    lhs: conv(lhs),
                    rhs: conv(rhs),
                },
                SymbolicDef::Sqrt { id, arg } => Definition::Sqrt { id, arg: conv(arg) },
                SymbolicDef::Shared { id, body } => Definition::Shared {
                    id,
                    body: conv(body),
                },
            })
            .collect();
        DeferredPackage {
            schedule,
            slots: self.slots.into_iter().map(conv).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub monomial: Monomial,
    pub coefficient: Ciphertext,
}

/// Encrypted polynomial in client-resolved parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualFunction {
    pub terms: Vec<Term>,
}

impl ResidualFunction {
    pub fn params(&self) -> Vec<Param> {
        let mut v: Vec<Param> = self
            .terms
            .iter()
            .flat_map(|t| t.monomial.iter().copied())
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn monomial_count(&self) -> usize {
        self.terms.len()
    }

    fn rename(&mut self, f: &dyn Fn(Param) -> Param) {
        for t in &mut self.terms {
            for p in t.monomial.iter_mut() {
                *p = f(*p);
            }
            t.monomial.sort_unstable();
        }
        self.terms.sort_by(|a, b| a.monomial.cmp(&b.monomial));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Definition {
    /// Client computes `[lhs > rhs]`.
    Compare {
        id: u32,
        lhs: ResidualFunction,
        rhs: ResidualFunction,
    },
    /// Client computes `sqrt(max(arg, 0))`.
    Sqrt { id: u32, arg: ResidualFunction },
    /// Client evaluates `body` and names it.
    Shared { id: u32, body: ResidualFunction },
}

impl Definition {
    pub fn param(&self) -> Param {
        match self {
            Definition::Compare { id, .. } => Param::Bool(*id),
            Definition::Sqrt { id, .. } => Param::Sqrt(*id),
            Definition::Shared { id, .. } => Param::Shared(*id),
        }
    }

    pub fn functions(&self) -> Vec<&ResidualFunction> {
        match self {
            Definition::Compare { lhs, rhs, .. } => vec![lhs, rhs],
            Definition::Sqrt { arg, .. } => vec![arg],
            Definition::Shared { body, .. } => vec![body],
        }
    }

    fn functions_mut(&mut self) -> Vec<&mut ResidualFunction> {
        match self {
            Definition::Compare { lhs, rhs, .. } => vec![lhs, rhs],
            Definition::Sqrt { arg, .. } => vec![arg],
            Definition::Shared { body, .. } => vec![body],
        }
    }

    fn set_id(&mut self, new: u32) {
        match self {
            Definition::Compare { id, .. }
            | Definition::Sqrt { id, .. }
            | Definition::Shared { id, .. } => *id = new,
        }
    }
}

/// Everything the client needs to finish the computation in one round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeferredPackage {
    /// Ordered so that every definition only refers to earlier ones.
    pub schedule: Vec<Definition>,
    pub slots: Vec<ResidualFunction>,
}

impl DeferredPackage {
    pub fn functions(&self) -> impl Iterator<Item = &ResidualFunction> {
        self.schedule
            .iter()
            .flat_map(|d| d.functions())
            .chain(self.slots.iter())
    }

    pub fn monomial_count(&self) -> usize {
        self.functions().map(|f| f.monomial_count()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.schedule.len()
    }

    pub fn comparison_count(&self) -> usize {
        self.schedule
            .iter()
            .filter(|d| matches!(d, Definition::Compare { .. }))
            .count()
    }

    /// Size of the residual structure exposed to the client: total monomials
    /// plus parameters.
    pub fn leakage(&self) -> usize {
        self.monomial_count() + self.param_count()
    }

    /// Renumbers parameters of each kind by their schedule position so ids
    /// carry no information beyond order.
    pub fn renumber(&mut self) {
        let mut counters = [0u32; 3];
        let mut map = rustc_hash::FxHashMap::default();
        for d in &mut self.schedule {
            let old = d.param();
            let k = match old {
                Param::Bool(_) => 0,
                Param::Sqrt(_) => 1,
                Param::Shared(_) => 2,
            };
            let new = counters[k];
            counters[k] += 1;
            map.insert(old, new);
            d.set_id(new);
        }
        let rename = |p: Param| {
            let n = map[&p];
            match p {
                Param::Bool(_) => Param::Bool(n),
                Param::Sqrt(_) => Param::Sqrt(n),
                Param::Shared(_) => Param::Shared(n),
            }
        };
        for d in &mut self.schedule {
            for f in d.functions_mut() {
                f.rename(&rename);
            }
        }
        for f in &mut self.slots {
            f.rename(&rename);
        }
    }
}

/// Client-side parameter values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    bools: Vec<Option<f64>>,
    sqrts: Vec<Option<f64>>,
    shared: Vec<Option<f64>>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    fn table(&self, p: Param) -> (&Vec<Option<f64>>, usize) {
        match p {
            Param::Bool(i) => (&self.bools, i as usize),
            Param::Sqrt(i) => (&self.sqrts, i as usize),
            Param::Shared(i) => (&self.shared, i as usize),
        }
    }

    pub fn get(&self, p: Param) -> Option<f64> {
        let (t, i) = self.table(p);
        t.get(i).copied().flatten()
    }

    pub fn set(&mut self, p: Param, v: f64) {
        let (t, i) = match p {
            Param::Bool(i) => (&mut self.bools, i as usize),
            Param::Sqrt(i) => (&mut self.sqrts, i as usize),
            Param::Shared(i) => (&mut self.shared, i as usize),
        };
        if t.len() <= i {
            t.resize(i + 1, None);
        }
        t[i] = Some(v);
    }
}

/// Decrypts the coefficients of `f` and evaluates it under `assignment`.
pub fn evaluate_residual(f: &ResidualFunction, assignment: &Assignment) -> Result<f64> {
    let mut acc = 0.0;
    for t in &f.terms {
        let mut v = decrypt(&t.coefficient);
        for &p in &t.monomial {
            v *= assignment
                .get(p)
                .ok_or_else(|| Error::MissingAssignment(p.to_string()))?;
        }
        acc += v;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{encrypt, SimParams};

    #[test]
    fn missing_assignment_is_reported() {
        let p = SimParams::exact(4);
        let mut m = Monomial::new();
        m.push(Param::Bool(3));
        let f = ResidualFunction {
            terms: vec![Term {
                monomial: m,
                coefficient: encrypt(2.0, &p),
            }],
        };
        let mut a = Assignment::new();
        assert_eq!(
            evaluate_residual(&f, &a),
            Err(Error::MissingAssignment("c3".into()))
        );
        a.set(Param::Bool(3), 1.0);
        assert_eq!(evaluate_residual(&f, &a), Ok(2.0));
    }

    #[test]
    fn renumber_is_dense_and_consistent() {
        let p = SimParams::exact(4);
        let one = |par: Param| ResidualFunction {
            terms: vec![Term {
                monomial: std::iter::once(par).collect(),
                coefficient: encrypt(1.0, &p),
            }],
        };
        let mut pkg = DeferredPackage {
            schedule: vec![
                Definition::Compare {
                    id: 7,
                    lhs: ResidualFunction::default(),
                    rhs: ResidualFunction::default(),
                },
                Definition::Compare {
                    id: 2,
                    lhs: one(Param::Bool(7)),
                    rhs: ResidualFunction::default(),
                },
            ],
            slots: vec![one(Param::Bool(2))],
        };
        pkg.renumber();
        assert_eq!(pkg.schedule[0].param(), Param::Bool(0));
        assert_eq!(pkg.schedule[1].param(), Param::Bool(1));
        assert_eq!(pkg.slots[0].params(), vec![Param::Bool(1)]);
        assert_eq!(
            pkg.schedule[1].functions()[0].params(),
            vec![Param::Bool(0)]
        );
    }
}

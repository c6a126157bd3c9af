//! Shared test fixtures: random branchy expressions with a direct
//! evaluator that takes only the branch a comparison selects.

#![allow(dead_code)]

use fhesift::graph::{ExprId, Graph};
use rand::Rng;

#[derive(Debug, Clone)]
pub enum Tree {
    Input(usize),
    Const(f64),
    Add(Box<Tree>, Box<Tree>),
    Sub(Box<Tree>, Box<Tree>),
    Mul(Box<Tree>, Box<Tree>),
    Scale(Box<Tree>, f64),
    /// `if a > b { t } else { e }`
    Select(Box<[Tree; 4]>),
    Sqrt(Box<Tree>),
}

pub struct Budget {
    pub comparisons: usize,
    pub sqrts: usize,
}

pub fn random_tree(rng: &mut impl Rng, depth: usize, inputs: usize, b: &mut Budget) -> Tree {
    if depth <= 1 || rng.gen_bool(0.2) {
        return if rng.gen_bool(0.8) {
            Tree::Input(rng.gen_range(0..inputs))
        } else {
            Tree::Const(rng.gen_range(-1.0..1.0))
        };
    }
    let d = depth - 1;
    let sub = |rng: &mut _, b: &mut Budget| Box::new(random_tree(rng, d, inputs, b));
    match rng.gen_range(0..7) {
        0 => Tree::Add(sub(rng, b), sub(rng, b)),
        1 => Tree::Sub(sub(rng, b), sub(rng, b)),
        2 => Tree::Mul(sub(rng, b), sub(rng, b)),
        3 => Tree::Scale(sub(rng, b), rng.gen_range(-2.0..2.0)),
        4 | 5 if b.comparisons > 0 => {
            b.comparisons -= 1;
            Tree::Select(Box::new([
                *sub(rng, b),
                *sub(rng, b),
                *sub(rng, b),
                *sub(rng, b),
            ]))
        }
        6 if b.sqrts > 0 => {
            b.sqrts -= 1;
            Tree::Sqrt(sub(rng, b))
        }
        _ => Tree::Add(sub(rng, b), sub(rng, b)),
    }
}

/// Branchy reference evaluation. Returns the value and the smallest
/// `|a − b|` over the comparisons actually taken, or `|arg|` over square
/// roots, where rounding could change the result discontinuously or
/// steeply.
pub fn eval_branchy(t: &Tree, x: &[f64]) -> (f64, f64) {
    match t {
        Tree::Input(i) => (x[*i], f64::INFINITY),
        Tree::Const(k) => (*k, f64::INFINITY),
        Tree::Add(a, b) | Tree::Sub(a, b) | Tree::Mul(a, b) => {
            let (va, ma) = eval_branchy(a, x);
            let (vb, mb) = eval_branchy(b, x);
            let v = match t {
                Tree::Add(..) => va + vb,
                Tree::Sub(..) => va - vb,
                _ => va * vb,
            };
            (v, ma.min(mb))
        }
        Tree::Scale(a, k) => {
            let (v, m) = eval_branchy(a, x);
            (v * k, m)
        }
        Tree::Select(s) => {
            let (a, ma) = eval_branchy(&s[0], x);
            let (b, mb) = eval_branchy(&s[1], x);
            let (v, mv) = if a > b {
                eval_branchy(&s[2], x)
            } else {
                eval_branchy(&s[3], x)
            };
            (v, ma.min(mb).min(mv).min((a - b).abs()))
        }
        Tree::Sqrt(a) => {
            let (v, m) = eval_branchy(a, x);
            (v.max(0.0).sqrt(), m.min(v.abs()))
        }
    }
}

pub fn build(g: &mut Graph, t: &Tree, x: &[ExprId]) -> ExprId {
    match t {
        Tree::Input(i) => x[*i],
        Tree::Const(k) => g.plain(*k),
        Tree::Add(a, b) => {
            let (a, b) = (build(g, a, x), build(g, b, x));
            g.add(a, b)
        }
        Tree::Sub(a, b) => {
            let (a, b) = (build(g, a, x), build(g, b, x));
            g.sub(a, b)
        }
        Tree::Mul(a, b) => {
            let (a, b) = (build(g, a, x), build(g, b, x));
            g.mul(a, b)
        }
        Tree::Scale(a, k) => {
            let a = build(g, a, x);
            g.mul_plain(a, *k)
        }
        Tree::Select(s) => {
            let ids: Vec<ExprId> = s.iter().map(|t| build(g, t, x)).collect();
            let c = g.compare(ids[0], ids[1]);
            g.select(c, ids[2], ids[3])
        }
        Tree::Sqrt(a) => {
            let a = build(g, a, x);
            g.sqrt(a)
        }
    }
}

/// Magnitude bound used to scale tolerances: the tree evaluated on
/// absolute values with every branch taken.
pub fn magnitude(t: &Tree, x: &[f64]) -> f64 {
    match t {
        Tree::Input(i) => x[*i].abs(),
        Tree::Const(k) => k.abs(),
        Tree::Add(a, b) | Tree::Sub(a, b) => magnitude(a, x) + magnitude(b, x),
        Tree::Mul(a, b) => magnitude(a, x) * magnitude(b, x),
        Tree::Scale(a, k) => magnitude(a, x) * k.abs(),
        Tree::Select(s) => magnitude(&s[2], x) + magnitude(&s[3], x),
        Tree::Sqrt(a) => magnitude(a, x).sqrt(),
    }
}

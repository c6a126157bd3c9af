//! Deferred division.
//!
//! A quotient is carried as a numerator/denominator pair and never inverted.
//! Ordering two quotients cross-multiplies, flipping the direction once per
//! negative denominator. If a denominator sign is not known statically an
//! extra comparison `[den > 0]` is spent and both orientations are blended by
//! it.

use super::{ExprId, Graph};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenSign {
    Positive,
    Negative,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: ExprId,
    pub den: ExprId,
    pub den_sign: DenSign,
    /// Reported by [`crate::error::Error::SignUnresolvable`].
    pub site: &'static str,
}

impl Rational {
    pub fn new(num: ExprId, den: ExprId, den_sign: DenSign, site: &'static str) -> Self {
        Self {
            num,
            den,
            den_sign,
            site,
        }
    }

    /// `e / 1`
    pub fn whole(g: &mut Graph, e: ExprId) -> Self {
        let one = g.plain(1.0);
        Self::new(e, one, DenSign::Positive, "whole")
    }

    pub fn constant(g: &mut Graph, k: f64) -> Self {
        let e = g.plain(k);
        Self::whole(g, e)
    }
}

impl Graph {
    /// `[a > b]` for quotients.
    pub fn rational_gt(&mut self, a: &Rational, b: &Rational) -> Result<ExprId> {
        let lhs = self.mul(a.num, b.den);
        let rhs = self.mul(b.num, a.den);
        let mut flip = false;
        let mut unknown = Vec::with_capacity(2);
        for r in [a, b] {
            match r.den_sign {
                DenSign::Positive => {}
                DenSign::Negative => flip = !flip,
                DenSign::Unknown => unknown.push(*r),
            }
        }
        // d·d > 0 for any nonzero d, so a shared unknown denominator cancels
        if unknown.len() == 2 && unknown[0].den == unknown[1].den {
            unknown.clear();
        }
        let (fwd, rev) = if flip { (rhs, lhs) } else { (lhs, rhs) };
        if unknown.is_empty() {
            return Ok(self.compare(fwd, rev));
        }
        for r in &unknown {
            self.check_sign_resolution(r.site)?;
        }
        let dens: Vec<ExprId> = unknown.iter().map(|r| r.den).collect();
        let key = self.product(&dens);
        let zero = self.plain(0.0);
        let positive = self.compare(key, zero);
        let when_pos = self.compare(fwd, rev);
        let when_neg = self.compare(rev, fwd);
        Ok(self.select(positive, when_pos, when_neg))
    }

    /// `[a < b]`
    pub fn rational_lt(&mut self, a: &Rational, b: &Rational) -> Result<ExprId> {
        self.rational_gt(b, a)
    }

    /// `[a ≥ b] = 1 − [b > a]`
    pub fn rational_ge(&mut self, a: &Rational, b: &Rational) -> Result<ExprId> {
        let c = self.rational_gt(b, a)?;
        Ok(self.not(c))
    }

    /// `[a ≤ b] = 1 − [a > b]`
    pub fn rational_le(&mut self, a: &Rational, b: &Rational) -> Result<ExprId> {
        let c = self.rational_gt(a, b)?;
        Ok(self.not(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::sim::{encrypt, SimParams};

    fn setup(vals: &[f64]) -> (Graph, Vec<ExprId>) {
        let p = SimParams::exact(10);
        let mut g = Graph::new();
        let xs = vals.iter().map(|&v| g.input(encrypt(v, &p))).collect();
        (g, xs)
    }

    #[test]
    fn known_signs_cross_multiply() {
        let vals = [3.0, 4.0, -1.0, -2.0];
        let (mut g, x) = setup(&vals);
        // 3/4 > -1/-2 is 0.75 > 0.5
        let a = Rational::new(x[0], x[1], DenSign::Positive, "a");
        let b = Rational::new(x[2], x[3], DenSign::Negative, "b");
        let c = g.rational_gt(&a, &b).unwrap();
        assert_eq!(g.eval_direct(&[c], &vals), vec![1.0]);
        let c = g.rational_lt(&a, &b).unwrap();
        assert_eq!(g.eval_direct(&[c], &vals), vec![0.0]);
    }

    #[test]
    fn unknown_sign_adds_a_sign_comparison() {
        let (mut g, x) = setup(&[0.0, 0.0]);
        let a = Rational::new(x[0], x[1], DenSign::Unknown, "a");
        let half = Rational::constant(&mut g, 0.5);
        let before = g.comparisons().len();
        let c = g.rational_gt(&a, &half).unwrap();
        assert_eq!(g.comparisons().len() - before, 2);
        for (n, d) in [
            (3.0, 4.0),
            (3.0, -4.0),
            (-3.0, -4.0),
            (1.0, 4.0),
            (-1.0, -4.0),
        ] {
            let want = if n / d > 0.5 { 1.0 } else { 0.0 };
            assert_eq!(g.eval_direct(&[c], &[n, d]), vec![want], "{n}/{d}");
        }
    }

    #[test]
    fn unresolvable_when_disabled() {
        let (mut g, x) = setup(&[1.0, 2.0]);
        g.set_sign_resolution(false);
        let a = Rational::new(x[0], x[1], DenSign::Unknown, "offset_x");
        let b = Rational::constant(&mut g, 0.5);
        assert_eq!(
            g.rational_gt(&a, &b),
            Err(Error::SignUnresolvable { site: "offset_x" })
        );
    }

    #[test]
    fn shared_unknown_denominator_cancels() {
        let (mut g, x) = setup(&[0.0, 0.0, 0.0]);
        let a = Rational::new(x[0], x[2], DenSign::Unknown, "a");
        let b = Rational::new(x[1], x[2], DenSign::Unknown, "b");
        let c = g.rational_gt(&a, &b).unwrap();
        assert_eq!(g.comparisons().len(), 1);
        assert_eq!(g.eval_direct(&[c], &[2.0, 1.0, -3.0]), vec![0.0]);
        assert_eq!(g.eval_direct(&[c], &[2.0, 1.0, 3.0]), vec![1.0]);
    }
}

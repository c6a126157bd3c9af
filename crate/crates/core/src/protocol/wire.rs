//! Length-prefixed little-endian binary records.
//!
//! Ciphertexts are `value: f64, level: u32, noise_bound: f64`. Parameters
//! are `u32` with the kind in the top two bits. Every message starts with a
//! one-byte tag and every list with a `u32` count.

use crate::error::{Error, Result};
use crate::graph::{DeferredPackage, Definition, Monomial, Param, ResidualFunction, Term};
use crate::sim::Ciphertext;

pub(crate) const TAG_ROUND: u8 = 1;
pub(crate) const TAG_RESPONSE: u8 = 2;
pub(crate) const TAG_PACKAGE: u8 = 3;
pub(crate) const TAG_OUTPUTS: u8 = 4;

const KIND_SHIFT: u32 = 30;
const ID_MASK: u32 = (1 << KIND_SHIFT) - 1;

#[derive(Default)]
pub(crate) struct Writer {
    pub(crate) buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new(tag: u8) -> Self {
        Self { buf: vec![tag] }
    }

    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("record list exceeds u32"));
    }

    pub(crate) fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn ct(&mut self, c: &Ciphertext) {
        self.f64(c.value);
        self.u32(c.level());
        self.f64(c.noise_bound());
    }

    fn param(&mut self, p: Param) {
        let (kind, id) = match p {
            Param::Bool(i) => (0, i),
            Param::Sqrt(i) => (1, i),
            Param::Shared(i) => (2, i),
        };
        assert!(id <= ID_MASK, "parameter id overflows wire encoding");
        self.u32((kind << KIND_SHIFT) | id);
    }

    fn function(&mut self, f: &ResidualFunction) {
        self.len(f.terms.len());
        for t in &f.terms {
            self.len(t.monomial.len());
            for &p in &t.monomial {
                self.param(p);
            }
            self.ct(&t.coefficient);
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], tag: u8) -> Result<Self> {
        let mut r = Self { buf, pos: 0 };
        let got = r.u8()?;
        if got != tag {
            return Err(Error::Wire(format!(
                "expected message tag {tag}, got {got}"
            )));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Wire(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// A list length, sanity-checked against the bytes that remain.
    pub(crate) fn len(&mut self, min_record: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_record) > self.buf.len() - self.pos {
            return Err(Error::Wire(format!("list of {n} records overruns message")));
        }
        Ok(n)
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn ct(&mut self) -> Result<Ciphertext> {
        let value = self.f64()?;
        let level = self.u32()?;
        let noise = self.f64()?;
        Ok(Ciphertext::from_parts(value, level, noise))
    }

    fn param(&mut self) -> Result<Param> {
        let raw = self.u32()?;
        let id = raw & ID_MASK;
        match raw >> KIND_SHIFT {
            0 => Ok(Param::Bool(id)),
            1 => Ok(Param::Sqrt(id)),
            2 => Ok(Param::Shared(id)),
            k => Err(Error::Wire(format!("unknown parameter kind {k}"))),
        }
    }

    fn function(&mut self) -> Result<ResidualFunction> {
        let n = self.len(24)?;
        let mut terms = Vec::with_capacity(n);
        for _ in 0..n {
            let m = self.len(4)?;
            let mut monomial = Monomial::with_capacity(m);
            for _ in 0..m {
                monomial.push(self.param()?);
            }
            let coefficient = self.ct()?;
            terms.push(Term {
                monomial,
                coefficient,
            });
        }
        Ok(ResidualFunction { terms })
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Wire(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

pub fn encode_package(p: &DeferredPackage) -> Vec<u8> {
    let mut w = Writer::new(TAG_PACKAGE);
    w.len(p.schedule.len());
    for d in &p.schedule {
        match d {
            Definition::Compare { id, lhs, rhs } => {
                w.u8(0);
                w.u32(*id);
                w.function(lhs);
                w.function(rhs);
            }
            Definition::Sqrt { id, arg } => {
                w.u8(1);
                w.u32(*id);
                w.function(arg);
            }
            Definition::Shared { id, body } => {
                w.u8(2);
                w.u32(*id);
                w.function(body);
            }
        }
    }
    w.len(p.slots.len());
    for f in &p.slots {
        w.function(f);
    }
    w.buf
}

pub fn decode_package(bytes: &[u8]) -> Result<DeferredPackage> {
    let mut r = Reader::new(bytes, TAG_PACKAGE)?;
    let n = r.len(9)?;
    let mut schedule = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = r.u8()?;
        let id = r.u32()?;
        schedule.push(match tag {
            0 => Definition::Compare {
                id,
                lhs: r.function()?,
                rhs: r.function()?,
            },
            1 => Definition::Sqrt {
                id,
                arg: r.function()?,
            },
            2 => Definition::Shared {
                id,
                body: r.function()?,
            },
            t => return Err(Error::Wire(format!("unknown definition tag {t}"))),
        });
    }
    let n = r.len(4)?;
    let mut slots = Vec::with_capacity(n);
    for _ in 0..n {
        slots.push(r.function()?);
    }
    r.finish()?;
    Ok(DeferredPackage { schedule, slots })
}

/// Text dump of a package's shape: monomials and coefficient levels, no values.
pub fn dump_package(p: &DeferredPackage) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let mono = |m: &Monomial| -> String {
        if m.is_empty() {
            "1".into()
        } else {
            m.iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join("*")
        }
    };
    let func = |f: &ResidualFunction| -> String {
        f.terms
            .iter()
            .map(|t| format!("{}@L{}", mono(&t.monomial), t.coefficient.level()))
            .collect::<Vec<_>>()
            .join(" + ")
    };
    for d in &p.schedule {
        match d {
            Definition::Compare { id, lhs, rhs } => {
                writeln!(out, "c{id} = [{} > {}]", func(lhs), func(rhs)).unwrap()
            }
            Definition::Sqrt { id, arg } => writeln!(out, "s{id} = sqrt({})", func(arg)).unwrap(),
            Definition::Shared { id, body } => writeln!(out, "v{id} = {}", func(body)).unwrap(),
        }
    }
    for (i, f) in p.slots.iter().enumerate() {
        writeln!(out, "out{i} = {}", func(f)).unwrap();
    }
    out
}

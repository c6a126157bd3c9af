//! PGM (P2 and P5) reading and writing, normalized to `[0, 1]`.

use crate::error::{Error, Result};
use crate::kernels::Grid;

pub type Image = Grid<f64>;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                self.pos = start;
                self.err(format!("{what} out of range"))
            })
    }
}

pub fn parse_pgm(buf: &[u8]) -> Result<Image> {
    let mut c = Cursor { buf, pos: 0 };
    let binary = match buf.get(..2) {
        Some(b"P2") => false,
        Some(b"P5") => true,
        _ => return Err(c.err("bad magic, expected P2 or P5")),
    };
    c.pos = 2;
    let width = c.number("width")? as usize;
    let height = c.number("height")? as usize;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(c.err("image has zero size"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(c.err("maxval must be in 1..=65535"));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| c.err("image dimensions overflow"))?;
    let scale = maxval as f64;
    let mut data = Vec::with_capacity(n);
    if binary {
        if c.pos >= buf.len() || !buf[c.pos].is_ascii_whitespace() {
            return Err(c.err("expected single whitespace before raster"));
        }
        c.pos += 1;
        let bytes_per = if maxval > 255 { 2 } else { 1 };
        let need = n * bytes_per;
        if buf.len() - c.pos < need {
            c.pos = buf.len();
            return Err(c.err(format!("raster truncated, expected {need} bytes")));
        }
        for i in 0..n {
            let at = c.pos + i * bytes_per;
            let v = if bytes_per == 2 {
                u16::from_be_bytes([buf[at], buf[at + 1]]) as u32
            } else {
                buf[at] as u32
            };
            if v > maxval {
                c.pos = at;
                return Err(c.err("sample exceeds maxval"));
            }
            data.push(v as f64 / scale);
        }
    } else {
        for _ in 0..n {
            let v = c.number("sample")?;
            if v > maxval {
                return Err(c.err("sample exceeds maxval"));
            }
            data.push(v as f64 / scale);
        }
    }
    Ok(Grid::new(width, height, data))
}

/// Binary 8-bit PGM; values are clamped to `[0, 1]`.
pub fn write_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(
        img.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

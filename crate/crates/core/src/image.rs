//! Memory images: flat lists of initial memory contents.
//!
//! Text form, one record per line:
//!
//! ```text
//! 0x00010000 f64 1.5 2.0 -3.25
//! 0x00010100 hex 00ff10
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use crate::memory::{MemError, Memory};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Mem(#[from] MemError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    F64 { addr: u32, values: Vec<f64> },
    Bytes { addr: u32, data: Vec<u8> },
}

impl Record {
    pub fn addr(&self) -> u32 {
        match self {
            Record::F64 { addr, .. } | Record::Bytes { addr, .. } => *addr,
        }
    }

    pub fn bytes(&self) -> Vec<u8> {
        match self {
            Record::F64 { values, .. } => values.iter().flat_map(|v| v.to_le_bytes()).collect(),
            Record::Bytes { data, .. } => data.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MemoryImage {
    pub records: Vec<Record>,
}

impl MemoryImage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_f64s(&mut self, addr: u32, values: &[f64]) {
        self.records.push(Record::F64 { addr, values: values.to_vec() });
    }

    pub fn push_bytes(&mut self, addr: u32, data: &[u8]) {
        self.records.push(Record::Bytes { addr, data: data.to_vec() });
    }

    /// Writes every record into `mem`, later records winning on overlap.
    pub fn apply(&self, mem: &mut Memory) -> Result<(), ImageError> {
        for r in &self.records {
            mem.write_bytes(r.addr(), &r.bytes())?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ImageError> {
        let mut img = MemoryImage::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| ImageError::Parse { line, msg };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut parts = body.split_whitespace();
            let addr_s = parts.next().unwrap();
            let addr = crate::isa::parse_number(addr_s)
                .filter(|v| (0..=u32::MAX as i64).contains(v))
                .ok_or_else(|| err(format!("bad address `{addr_s}`")))? as u32;
            match parts.next() {
                Some("f64") => {
                    let values = parts
                        .map(|v| v.parse::<f64>().map_err(|_| err(format!("bad float `{v}`"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    img.push_f64s(addr, &values);
                }
                Some("hex") => {
                    let hex: String = parts.collect();
                    if !hex.len().is_multiple_of(2) {
                        return Err(err("odd number of hex digits".into()));
                    }
                    let data = (0..hex.len())
                        .step_by(2)
                        .map(|k| u8::from_str_radix(&hex[k..k + 2], 16))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| err(format!("bad hex `{hex}`")))?;
                    img.push_bytes(addr, &data);
                }
                other => {
                    return Err(err(format!(
                        "expected `f64` or `hex`, got `{}`",
                        other.unwrap_or("")
                    )))
                }
            }
        }
        Ok(img)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            match r {
                Record::F64 { addr, values } => {
                    let vals: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
                    let _ = writeln!(s, "{addr:#010x} f64 {}", vals.join(" "));
                }
                Record::Bytes { addr, data } => {
                    let hex: String = data.iter().map(|b| format!("{b:02x}")).collect();
                    let _ = writeln!(s, "{addr:#010x} hex {hex}");
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::TCDM_BASE;

    #[test]
    fn parses_and_applies() {
        let img = MemoryImage::parse("# init\n0x10000 f64 1.5 -2\n0x10010 hex 0aff\n").unwrap();
        let mut mem = Memory::new(64, 0);
        img.apply(&mut mem).unwrap();
        assert_eq!(mem.read_f64s(TCDM_BASE, 2).unwrap(), [1.5, -2.0]);
        assert_eq!(mem.read_bytes(TCDM_BASE + 16, 2).unwrap(), [0x0a, 0xff]);
        assert_eq!(MemoryImage::parse(&img.to_text()).unwrap(), img);
    }

    #[test]
    fn reports_bad_lines() {
        assert!(matches!(
            MemoryImage::parse("0x10 f32 1.0"),
            Err(ImageError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            MemoryImage::parse("\nzz hex 00"),
            Err(ImageError::Parse { line: 2, .. })
        ));
    }
}

//! Interchange tensors: NPY v1.0 files holding little-endian float32 arrays of
//! shape `(F, D1, D2)` in C order.
//!
//! Reading also accepts v2.0/v3.0 headers (4-byte header length) since some
//! writers emit them for long headers; writing always produces v1.0.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::cam::TensorStack;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

/// Encodes a stack as NPY bytes.
pub fn encode(stack: &TensorStack) -> Vec<u8> {
    let (f, r, c) = stack.shape();
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': ({f}, {r}, {c}), }}");
    // magic(6) + version(2) + len(2) + header + '\n' padded to ALIGN
    let unpadded = MAGIC.len() + 4 + header.len() + 1;
    header.extend(std::iter::repeat_n(' ', unpadded.next_multiple_of(ALIGN) - unpadded));
    header.push('\n');

    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + 4 * stack.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in stack.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes NPY bytes into a stack.
pub fn decode(bytes: &[u8]) -> Result<TensorStack> {
    if bytes.len() < MAGIC.len() + 2 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, header_start) = match major {
        1 => {
            let raw = bytes.get(8..10).ok_or(Error::Truncated {
                expected: 10,
                found: bytes.len(),
            })?;
            (u16::from_le_bytes([raw[0], raw[1]]) as usize, 10)
        }
        2 | 3 => {
            let raw = bytes.get(8..12).ok_or(Error::Truncated {
                expected: 12,
                found: bytes.len(),
            })?;
            (u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as usize, 12)
        }
        _ => return Err(Error::NpyVersion(major, minor)),
    };
    let data_start = header_start + header_len;
    let header = bytes.get(header_start..data_start).ok_or(Error::Truncated {
        expected: data_start,
        found: bytes.len(),
    })?;
    let header = std::str::from_utf8(header).map_err(|_| Error::NpyHeader("header is not UTF-8".into()))?;
    let dict = HeaderDict::parse(header)?;

    if !matches!(dict.descr.as_str(), "<f4" | "=f4" | "f4") {
        return Err(Error::WrongDtype(dict.descr));
    }
    if dict.fortran_order {
        return Err(Error::FortranOrder);
    }
    let &[f, r, c] = dict.shape.as_slice() else {
        return Err(Error::WrongRank(dict.shape.len()));
    };
    let count = f * r * c;
    let payload = &bytes[data_start..];
    if payload.len() < count * 4 {
        return Err(Error::Truncated {
            expected: count * 4,
            found: payload.len(),
        });
    }
    let values = payload[..count * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    TensorStack::new(f, r, c, values)
}

pub fn read_tensor_from<R: Read>(mut reader: R) -> Result<TensorStack> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn write_tensor_to<W: Write>(stack: &TensorStack, mut writer: W) -> Result<()> {
    writer.write_all(&encode(stack))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorStack> {
    let path = path.as_ref();
    fs::read(path)
        .map_err(Error::from)
        .and_then(|b| decode(&b))
        .map_err(|e| e.at(path))
}

pub fn write_tensor(stack: &TensorStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(stack)).map_err(|e| Error::from(e).at(path))
}

#[derive(Debug)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl HeaderDict {
    /// Parses the Python dict literal found in NPY headers, e.g.
    /// `{'descr': '<f4', 'fortran_order': False, 'shape': (8, 7, 7), }`.
    fn parse(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::NpyHeader(msg.to_string());
        let body = text
            .trim()
            .strip_prefix('{')
            .and_then(|t| t.strip_suffix('}'))
            .ok_or_else(|| bad("expected a dict literal"))?;

        let mut descr = None;
        let mut fortran_order = None;
        let mut shape = None;
        let mut rest = body.trim_start();
        while !rest.is_empty() {
            let (key, after) = take_quoted(rest).ok_or_else(|| bad("expected a quoted key"))?;
            let after = after.trim_start().strip_prefix(':').ok_or_else(|| bad("expected ':'"))?.trim_start();
            rest = match key {
                "descr" => {
                    let (v, r) = take_quoted(after).ok_or_else(|| bad("descr must be a string"))?;
                    descr = Some(v.to_string());
                    r
                }
                "fortran_order" => {
                    if let Some(r) = after.strip_prefix("True") {
                        fortran_order = Some(true);
                        r
                    } else if let Some(r) = after.strip_prefix("False") {
                        fortran_order = Some(false);
                        r
                    } else {
                        return Err(bad("fortran_order must be True or False"));
                    }
                }
                "shape" => {
                    let inner = after.strip_prefix('(').ok_or_else(|| bad("shape must be a tuple"))?;
                    let end = inner.find(')').ok_or_else(|| bad("unterminated shape tuple"))?;
                    let dims = inner[..end]
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<usize>().map_err(|_| bad("shape entries must be integers")))
                        .collect::<Result<Vec<_>>>()?;
                    shape = Some(dims);
                    &inner[end + 1..]
                }
                other => return Err(bad(&format!("unexpected key {other:?}"))),
            };
            rest = rest.trim_start();
            rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
        }
        Ok(Self {
            descr: descr.ok_or_else(|| bad("missing descr"))?,
            fortran_order: fortran_order.ok_or_else(|| bad("missing fortran_order"))?,
            shape: shape.ok_or_else(|| bad("missing shape"))?,
        })
    }
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|&c| c == '\'' || c == '"')?;
    let rest = &s[1..];
    let end = rest.find(quote)?;
    Some((&rest[..end], &rest[end + 1..]))
}

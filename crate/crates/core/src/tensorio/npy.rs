//! Reading and writing NumPy `.npy` files (format version 1.0).
//!
//! Supported element types are `f4`, `f8`, `i8` and `b1` in either byte
//! order. Fortran-ordered files are accepted on read and converted to C
//! order; everything written is little-endian C order with the same header
//! layout NumPy itself produces, so files written by NumPy round-trip
//! byte-for-byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const HEADER_ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    I64,
    Bool,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::I64 => 8,
            DType::Bool => 1,
        }
    }

    fn descr(self) -> &'static str {
        match self {
            DType::F32 => "<f4",
            DType::F64 => "<f8",
            DType::I64 => "<i8",
            DType::Bool => "|b1",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
    Bool(Vec<bool>),
}

impl NpyData {
    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
            NpyData::I64(v) => v.len(),
            NpyData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            NpyData::F32(_) => DType::F32,
            NpyData::F64(_) => DType::F64,
            NpyData::I64(_) => DType::I64,
            NpyData::Bool(_) => DType::Bool,
        }
    }

    /// Values up-cast to `f64` (booleans become 0/1).
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            NpyData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::F64(v) => v.clone(),
            NpyData::I64(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::Bool(v) => v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// An n-dimensional array in C (row-major) order.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::input(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { msg, .. } => Error::Format {
                path: Some(path.to_path_buf()),
                msg,
            },
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..6] != MAGIC {
            return Err(format_err("missing NPY magic"));
        }
        let (major, minor) = (bytes[6], bytes[7]);
        let (header_len, header_start) = match major {
            1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
            2 | 3 => {
                if bytes.len() < 12 {
                    return Err(format_err("truncated header length"));
                }
                (
                    u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                    12,
                )
            }
            _ => return Err(format_err(format!("unsupported version {major}.{minor}"))),
        };
        let data_start = header_start + header_len;
        if bytes.len() < data_start {
            return Err(format_err("truncated header"));
        }
        let header = std::str::from_utf8(&bytes[header_start..data_start])
            .map_err(|_| format_err("header is not valid ASCII"))?;
        let header = parse_header(header)?;

        let n: usize = header.shape.iter().product();
        let payload = &bytes[data_start..];
        if payload.len() != n * header.dtype.size() {
            return Err(format_err(format!(
                "payload has {} bytes, expected {} for shape {:?}",
                payload.len(),
                n * header.dtype.size(),
                header.shape
            )));
        }
        let data = decode(payload, header.dtype, header.big_endian)?;
        let data = if header.fortran_order && header.shape.len() > 1 {
            fortran_to_c(data, &header.shape)
        } else {
            data
        };
        Ok(Self {
            shape: header.shape,
            data,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dict = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
            self.data.dtype().descr(),
            shape_repr(&self.shape)
        );
        // magic(6) + version(2) + len(2) + dict + padding + '\n'
        let unpadded = 10 + dict.len() + 1;
        let total = unpadded.div_ceil(HEADER_ALIGN) * HEADER_ALIGN;
        let mut header = dict.into_bytes();
        header.resize(total - 10 - 1, b' ');
        header.push(b'\n');

        let mut out = Vec::with_capacity(total + self.data.len() * self.data.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(&header);
        match &self.data {
            NpyData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::I64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::Bool(v) => out.extend(v.iter().map(|&b| b as u8)),
        }
        out
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        path: None,
        msg: msg.into(),
    }
}

fn shape_repr(shape: &[usize]) -> String {
    match shape {
        [] => "()".to_string(),
        [n] => format!("({n},)"),
        _ => {
            let parts: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            format!("({})", parts.join(", "))
        }
    }
}

struct Header {
    dtype: DType,
    big_endian: bool,
    fortran_order: bool,
    shape: Vec<usize>,
}

fn parse_header(text: &str) -> Result<Header> {
    let text = text.trim_end_matches(['\n', ' ', '\0']).trim();
    let inner = text
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| format_err("header is not a dict literal"))?;

    let descr = dict_value(inner, "descr")?;
    let descr = descr
        .trim()
        .trim_matches(|c| c == '\'' || c == '"')
        .to_string();
    let fortran = match dict_value(inner, "fortran_order")?.trim() {
        "False" => false,
        "True" => true,
        other => return Err(format_err(format!("bad fortran_order {other:?}"))),
    };
    let shape_text = dict_value(inner, "shape")?;
    let shape_text = shape_text.trim();
    let shape_inner = shape_text
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| format_err(format!("bad shape {shape_text:?}")))?;
    let shape = shape_inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| format_err(format!("bad shape entry {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let (order, kind) = descr.split_at(descr.len().min(1));
    let big_endian = match order {
        "<" | "|" | "=" => false,
        ">" => true,
        _ => return Err(format_err(format!("unsupported descr {descr:?}"))),
    };
    let dtype = match kind {
        "f4" => DType::F32,
        "f8" => DType::F64,
        "i8" => DType::I64,
        "b1" => DType::Bool,
        _ => return Err(format_err(format!("unsupported descr {descr:?}"))),
    };
    Ok(Header {
        dtype,
        big_endian,
        fortran_order: fortran,
        shape,
    })
}

/// Extracts the raw text of the value stored under `key` in a Python dict
/// literal. Values are either quoted strings, bare words or parenthesised
/// tuples, which is all the NPY header ever contains.
fn dict_value<'a>(inner: &'a str, key: &str) -> Result<&'a str> {
    let needle_sq = format!("'{key}'");
    let needle_dq = format!("\"{key}\"");
    let pos = inner
        .find(&needle_sq)
        .or_else(|| inner.find(&needle_dq))
        .ok_or_else(|| format_err(format!("header missing key {key:?}")))?;
    let rest = &inner[pos + key.len() + 2..];
    let rest = rest
        .trim_start()
        .strip_prefix(':')
        .ok_or_else(|| format_err(format!("missing ':' after {key:?}")))?
        .trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else if let Some(q) = rest.chars().next().filter(|c| *c == '\'' || *c == '"') {
        rest[1..].find(q).map(|i| i + 2)
    } else {
        Some(rest.find(',').unwrap_or(rest.len()))
    }
    .ok_or_else(|| format_err(format!("unterminated value for {key:?}")))?;
    Ok(&rest[..end])
}

fn decode(payload: &[u8], dtype: DType, big_endian: bool) -> Result<NpyData> {
    macro_rules! chunks {
        ($t:ty, $n:expr) => {
            payload
                .chunks_exact($n)
                .map(|c| {
                    let arr: [u8; $n] = c.try_into().unwrap();
                    if big_endian {
                        <$t>::from_be_bytes(arr)
                    } else {
                        <$t>::from_le_bytes(arr)
                    }
                })
                .collect()
        };
    }
    Ok(match dtype {
        DType::F32 => NpyData::F32(chunks!(f32, 4)),
        DType::F64 => NpyData::F64(chunks!(f64, 8)),
        DType::I64 => NpyData::I64(chunks!(i64, 8)),
        DType::Bool => NpyData::Bool(
            payload
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(format_err(format!("invalid bool byte {b}"))),
                })
                .collect::<Result<_>>()?,
        ),
    })
}

fn fortran_to_c(data: NpyData, shape: &[usize]) -> NpyData {
    fn reorder<T: Copy>(v: &[T], shape: &[usize]) -> Vec<T> {
        let n = v.len();
        let mut out = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            // Fortran offset of the current C-order multi-index.
            let mut off = 0;
            let mut stride = 1;
            for (d, &i) in idx.iter().enumerate() {
                off += i * stride;
                stride *= shape[d];
            }
            out.push(v[off]);
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }
    match data {
        NpyData::F32(v) => NpyData::F32(reorder(&v, shape)),
        NpyData::F64(v) => NpyData::F64(reorder(&v, shape)),
        NpyData::I64(v) => NpyData::I64(reorder(&v, shape)),
        NpyData::Bool(v) => NpyData::Bool(reorder(&v, shape)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_64_byte_aligned() {
        let a = NpyArray::new(vec![2, 3], NpyData::F64(vec![0.0; 6])).unwrap();
        let bytes = a.to_bytes();
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        assert_eq!(bytes[10 + hlen - 1], b'\n');
    }

    #[test]
    fn numpy_header_text() {
        let a = NpyArray::new(vec![3], NpyData::Bool(vec![true, false, true])).unwrap();
        let bytes = a.to_bytes();
        let text = std::str::from_utf8(&bytes[10..]).unwrap();
        assert!(text.starts_with("{'descr': '|b1', 'fortran_order': False, 'shape': (3,), }"));
    }

    #[test]
    fn reads_fortran_order() {
        // [[1,2,3],[4,5,6]] stored column-major
        let mut bytes = NpyArray::new(vec![2, 3], NpyData::F64(vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]))
            .unwrap()
            .to_bytes();
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let text = std::str::from_utf8(&bytes[10..10 + hlen])
            .unwrap()
            .to_string();
        let patched = text.replace("'fortran_order': False", "'fortran_order': True ");
        bytes.splice(10..10 + hlen, patched.into_bytes());
        let a = NpyArray::from_bytes(&bytes).unwrap();
        assert_eq!(a.data, NpyData::F64(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    }

    #[test]
    fn big_endian_input() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&[1, 0]);
        let dict = "{'descr': '>f8', 'fortran_order': False, 'shape': (2,), }";
        let mut h = dict.as_bytes().to_vec();
        h.resize(128 - 10 - 1, b' ');
        h.push(b'\n');
        bytes.extend_from_slice(&(h.len() as u16).to_le_bytes());
        bytes.extend_from_slice(&h);
        bytes.extend_from_slice(&1.5f64.to_be_bytes());
        bytes.extend_from_slice(&(-2.0f64).to_be_bytes());
        let a = NpyArray::from_bytes(&bytes).unwrap();
        assert_eq!(a.data, NpyData::F64(vec![1.5, -2.0]));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(
            NpyArray::from_bytes(b"not an npy file"),
            Err(Error::Format { .. })
        ));
        let good = NpyArray::new(vec![2], NpyData::F64(vec![1.0, 2.0]))
            .unwrap()
            .to_bytes();
        // truncated payload
        assert!(matches!(
            NpyArray::from_bytes(&good[..good.len() - 3]),
            Err(Error::Format { .. })
        ));
        // unknown dtype
        let mut bad = good.clone();
        let pos = bad.windows(3).position(|w| w == b"<f8").unwrap();
        bad[pos + 1] = b'c';
        assert!(matches!(
            NpyArray::from_bytes(&bad),
            Err(Error::Format { .. })
        ));
    }
}

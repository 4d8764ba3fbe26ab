//! NPY v1.0 reading and writing for little-endian `f4`/`f8` arrays of rank 1
//! or 2 in C order.
//!
//! Headers are laid out byte-for-byte like NumPy's own writer: the dictionary
//! keys sorted, room left for the leading axis to grow to 21 digits, then
//! space padding so the payload starts on a 64-byte boundary.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;
const GROWTH_AXIS_MAX_DIGITS: usize = 21;
const PREFIX_LEN: usize = MAGIC.len() + 2 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "<f4")]
    F4,
    #[serde(rename = "<f8")]
    F8,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }

    fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F4),
            "<f8" => Ok(Dtype::F8),
            other => Err(Error::Format(format!(
                "unsupported descr {other:?}; only '<f4' and '<f8' are read"
            ))),
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.descr())
    }
}

/// A decoded array, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub values: Vec<f64>,
}

impl NpyArray {
    /// Rank-2 arrays as-is; rank-1 arrays become a single column.
    pub fn into_matrix(self) -> Array2<f64> {
        let dims = match self.shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => unreachable!("rank checked on read"),
        };
        Array2::from_shape_vec(dims, self.values).expect("element count checked on read")
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }
}

fn shape_repr(shape: &[usize]) -> String {
    match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// The complete header: magic, version, length and padded dictionary.
pub fn encode_header(shape: &[usize], dtype: Dtype) -> Vec<u8> {
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_repr(shape)
    );
    if let Some(lead) = shape.first() {
        let digits = lead.to_string().len();
        dict.push_str(&" ".repeat(GROWTH_AXIS_MAX_DIGITS.saturating_sub(digits)));
    }
    let unpadded = PREFIX_LEN + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.push_str(&" ".repeat(pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(PREFIX_LEN + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

/// Writes a matrix. With [`Dtype::F4`] values are rounded to `f32`.
pub fn write_matrix_to<W: Write + ?Sized>(writer: &mut W, matrix: ArrayView2<'_, f64>, dtype: Dtype) -> Result<()> {
    let (r, c) = matrix.dim();
    write_npy_to(writer, &[r, c], matrix.iter().copied(), dtype)
}

/// Writes a rank-1 array.
pub fn write_vector_to<W: Write + ?Sized>(writer: &mut W, values: &[f64], dtype: Dtype) -> Result<()> {
    write_npy_to(writer, &[values.len()], values.iter().copied(), dtype)
}

fn write_npy_to<W: Write + ?Sized>(
    writer: &mut W,
    shape: &[usize],
    values: impl Iterator<Item = f64>,
    dtype: Dtype,
) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::precondition(format!("refusing to write empty array of shape {shape:?}")));
    }
    let header = encode_header(shape, dtype);
    let count: usize = shape.iter().product();
    let mut payload = Vec::with_capacity(header.len() + count * dtype.width());
    payload.extend_from_slice(&header);
    for v in values {
        if !v.is_finite() {
            return Err(Error::precondition("refusing to write non-finite value"));
        }
        match dtype {
            Dtype::F8 => payload.extend_from_slice(&v.to_le_bytes()),
            Dtype::F4 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    writer.write_all(&payload).map_err(|e| Error::io("<writer>", e))
}

pub fn write_array(matrix: ArrayView2<'_, f64>, path: &Path, dtype: Dtype) -> Result<()> {
    super::atomic_write(path, |w| write_matrix_to(w, matrix, dtype))
}

pub fn write_vector(values: &[f64], path: &Path, dtype: Dtype) -> Result<()> {
    super::atomic_write(path, |w| write_vector_to(w, values, dtype))
}

pub fn read_array(path: &Path) -> Result<NpyArray> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_array_from(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        Error::Shape(msg) => Error::Shape(format!("{}: {msg}", path.display())),
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn io_err(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("file truncated".into())
    } else {
        Error::io("<reader>", e)
    }
}

pub fn read_array_from<R: Read>(reader: &mut R) -> Result<NpyArray> {
    let mut prefix = [0u8; PREFIX_LEN];
    reader.read_exact(&mut prefix).map_err(io_err)?;
    if &prefix[..6] != MAGIC {
        return Err(Error::Format("bad magic string, not an NPY file".into()));
    }
    if prefix[6..8] != [1, 0] {
        return Err(Error::Format(format!(
            "unsupported NPY version {}.{}; only 1.0 is read",
            prefix[6], prefix[7]
        )));
    }
    let header_len = u16::from_le_bytes([prefix[8], prefix[9]]) as usize;
    let mut header = vec![0u8; header_len];
    reader.read_exact(&mut header).map_err(io_err)?;
    let header = std::str::from_utf8(&header).map_err(|_| Error::Format("header is not ASCII".into()))?;
    let dict = HeaderDict::parse(header)?;

    if dict.fortran_order {
        return Err(Error::Format("fortran_order arrays are not supported".into()));
    }
    let dtype = Dtype::from_descr(&dict.descr)?;
    if dict.shape.is_empty() || dict.shape.len() > 2 {
        return Err(Error::Shape(format!(
            "{} axes; only 1-D and 2-D arrays are supported",
            dict.shape.len()
        )));
    }
    let count: usize = dict.shape.iter().product();
    let mut raw = vec![0u8; count * dtype.width()];
    reader.read_exact(&mut raw).map_err(io_err)?;
    let values = match dtype {
        Dtype::F8 => raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        Dtype::F4 => raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect(),
    };
    Ok(NpyArray {
        shape: dict.shape,
        dtype,
        values,
    })
}

#[derive(Debug, PartialEq)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Minimal parser for the Python dict literal NumPy writes.
impl HeaderDict {
    fn parse(text: &str) -> Result<Self> {
        let mut p = Cursor { s: text.as_bytes(), i: 0 };
        p.expect(b'{')?;
        let (mut descr, mut fortran, mut shape) = (None, None, None);
        loop {
            p.skip_ws();
            if p.eat(b'}') {
                break;
            }
            let key = p.string()?;
            p.skip_ws();
            p.expect(b':')?;
            p.skip_ws();
            match key.as_str() {
                "descr" => descr = Some(p.string()?),
                "fortran_order" => fortran = Some(p.boolean()?),
                "shape" => shape = Some(p.tuple()?),
                other => return Err(Error::Format(format!("unexpected header key {other:?}"))),
            }
            p.skip_ws();
            if !p.eat(b',') {
                p.skip_ws();
                p.expect(b'}')?;
                break;
            }
        }
        let missing = |k: &str| Error::Format(format!("header lacks '{k}'"));
        Ok(HeaderDict {
            descr: descr.ok_or_else(|| missing("descr"))?,
            fortran_order: fortran.ok_or_else(|| missing("fortran_order"))?,
            shape: shape.ok_or_else(|| missing("shape"))?,
        })
    }
}

struct Cursor<'a> {
    s: &'a [u8],
    i: usize,
}

impl Cursor<'_> {
    fn fail(&self, what: &str) -> Error {
        Error::Format(format!("malformed header at byte {}: expected {what}", self.i))
    }

    fn skip_ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.s.get(self.i) == Some(&c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.fail(&format!("'{}'", c as char)))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.s.get(self.i) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err(self.fail("string")),
        };
        self.i += 1;
        let start = self.i;
        while self.i < self.s.len() && self.s[self.i] != quote {
            self.i += 1;
        }
        if self.i == self.s.len() {
            return Err(self.fail("closing quote"));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.i]).into_owned();
        self.i += 1;
        Ok(out)
    }

    fn boolean(&mut self) -> Result<bool> {
        let rest = &self.s[self.i..];
        if rest.starts_with(b"True") {
            self.i += 4;
            Ok(true)
        } else if rest.starts_with(b"False") {
            self.i += 5;
            Ok(false)
        } else {
            Err(self.fail("True or False"))
        }
    }

    fn tuple(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(b')') {
                return Ok(dims);
            }
            let start = self.i;
            while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                self.i += 1;
            }
            if start == self.i {
                return Err(self.fail("axis length"));
            }
            let digits = std::str::from_utf8(&self.s[start..self.i]).unwrap();
            dims.push(digits.parse().map_err(|_| self.fail("axis length"))?);
            self.skip_ws();
            if !self.eat(b',') {
                self.skip_ws();
                self.expect(b')')?;
                return Ok(dims);
            }
        }
    }
}

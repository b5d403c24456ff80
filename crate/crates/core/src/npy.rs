//! Reader and writer for the NPY v1.0 array format.
//!
//! Only the subset exchanged with feature dumps is supported: C-order,
//! little-endian `<f4`/`<f8` matrices and `<i8` vectors. Headers are written
//! byte-for-byte the way numpy writes them (64-byte alignment plus the spare
//! growth padding numpy reserves on the leading axis).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

const ARRAY_ALIGN: usize = 64;
const GROWTH_AXIS_MAX_DIGITS: usize = 21;
const PREAMBLE_LEN: usize = MAGIC.len() + 2 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
    I8,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
            Dtype::I8 => "<i8",
        }
    }

    fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F4),
            "<f8" => Ok(Dtype::F8),
            "<i8" => Ok(Dtype::I8),
            other => Err(Error::Npy(format!(
                "unsupported dtype {other:?} (expected '<f4', '<f8' or '<i8')"
            ))),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 | Dtype::I8 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

impl Header {
    fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// The header dictionary as numpy renders it, including trailing padding and newline.
    fn render(&self) -> String {
        let shape = match self.shape.as_slice() {
            [] => "()".to_string(),
            [n] => format!("({n},)"),
            dims => format!(
                "({})",
                dims.iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        };
        let mut dict = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
            self.dtype.descr(),
            shape
        );
        if let Some(first) = self.shape.first() {
            let digits = first.to_string().len();
            dict.extend(std::iter::repeat_n(
                ' ',
                GROWTH_AXIS_MAX_DIGITS.saturating_sub(digits),
            ));
        }
        let unpadded = PREAMBLE_LEN + dict.len() + 1;
        let pad = (ARRAY_ALIGN - unpadded % ARRAY_ALIGN) % ARRAY_ALIGN;
        dict.extend(std::iter::repeat_n(' ', pad));
        dict.push('\n');
        dict
    }

    pub fn write<W: Write>(&self, writer: &mut W) -> io::Result<()> {
        let dict = self.render();
        let len = u16::try_from(dict.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "npy header too long"))?;
        writer.write_all(&MAGIC)?;
        writer.write_all(&[1, 0])?;
        writer.write_all(&len.to_le_bytes())?;
        writer.write_all(dict.as_bytes())
    }

    pub fn read<R: Read>(reader: &mut R) -> Result<Self> {
        let mut preamble = [0u8; PREAMBLE_LEN];
        reader
            .read_exact(&mut preamble)
            .map_err(|e| Error::Npy(format!("truncated preamble: {e}")))?;
        if preamble[..6] != MAGIC {
            return Err(Error::Npy("bad magic bytes".into()));
        }
        if preamble[6..8] != [1, 0] {
            return Err(Error::Npy(format!(
                "unsupported npy version {}.{} (only 1.0)",
                preamble[6], preamble[7]
            )));
        }
        let len = u16::from_le_bytes([preamble[8], preamble[9]]) as usize;
        let mut raw = vec![0u8; len];
        reader
            .read_exact(&mut raw)
            .map_err(|e| Error::Npy(format!("truncated header: {e}")))?;
        let text =
            std::str::from_utf8(&raw).map_err(|_| Error::Npy("header is not ASCII".into()))?;
        parse_dict(text)
    }
}

#[derive(Debug)]
enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

/// Parses the Python dict literal carried in an NPY header.
fn parse_dict(text: &str) -> Result<Header> {
    let mut p = Parser {
        s: text.trim_end().as_bytes(),
        pos: 0,
    };
    p.expect(b'{')?;
    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    loop {
        p.skip_ws();
        if p.eat(b'}') {
            break;
        }
        let key = p.string()?;
        p.skip_ws();
        p.expect(b':')?;
        p.skip_ws();
        let value = p.value()?;
        match (key.as_str(), value) {
            ("descr", Value::Str(s)) => descr = Some(s),
            ("fortran_order", Value::Bool(b)) => fortran = Some(b),
            ("shape", Value::Tuple(t)) => shape = Some(t),
            (k, v) => return Err(Error::Npy(format!("unexpected header entry {k:?}: {v:?}"))),
        }
        p.skip_ws();
        if !p.eat(b',') {
            p.skip_ws();
            p.expect(b'}')?;
            break;
        }
    }
    p.skip_ws();
    if p.pos != p.s.len() {
        return Err(Error::Npy("trailing bytes after header dict".into()));
    }
    let descr = descr.ok_or_else(|| Error::Npy("header lacks 'descr'".into()))?;
    if fortran.ok_or_else(|| Error::Npy("header lacks 'fortran_order'".into()))? {
        return Err(Error::Npy(
            "Fortran-ordered arrays are not supported".into(),
        ));
    }
    let shape = shape.ok_or_else(|| Error::Npy("header lacks 'shape'".into()))?;
    Ok(Header {
        dtype: Dtype::from_descr(&descr)?,
        shape,
    })
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Npy(format!(
                "expected {:?} at header offset {}",
                c as char, self.pos
            )))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.s.get(self.pos) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => {
                return Err(Error::Npy(format!(
                    "expected string at offset {}",
                    self.pos
                )))
            }
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.s.len() {
            return Err(Error::Npy("unterminated string in header".into()));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn value(&mut self) -> Result<Value> {
        match self.s.get(self.pos) {
            Some(b'\'' | b'"') => self.string().map(Value::Str),
            Some(b'(') => self.tuple().map(Value::Tuple),
            _ => {
                let rest = &self.s[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Value::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Value::Bool(false))
                } else {
                    Err(Error::Npy(format!(
                        "unrecognised value at offset {}",
                        self.pos
                    )))
                }
            }
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
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(Error::Npy(format!("expected dimension at offset {start}")));
            }
            let digits = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii digits");
            dims.push(
                digits
                    .parse()
                    .map_err(|_| Error::Npy(format!("dimension {digits} out of range")))?,
            );
            self.skip_ws();
            if !self.eat(b',') {
                self.skip_ws();
                self.expect(b')')?;
                return Ok(dims);
            }
        }
    }
}

fn read_payload<R: Read>(reader: &mut R, header: &Header) -> Result<Vec<u8>> {
    let bytes = header
        .element_count()
        .checked_mul(header.dtype.size())
        .ok_or_else(|| Error::Npy("array size overflows".into()))?;
    let mut buf = Vec::with_capacity(bytes);
    reader
        .take(bytes as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::Npy(format!("reading payload: {e}")))?;
    if buf.len() != bytes {
        return Err(Error::Npy(format!(
            "payload truncated: expected {bytes} bytes, found {}",
            buf.len()
        )));
    }
    let mut extra = [0u8; 1];
    if reader
        .read(&mut extra)
        .map_err(|e| Error::Npy(e.to_string()))?
        != 0
    {
        return Err(Error::Npy("trailing bytes after payload".into()));
    }
    Ok(buf)
}

/// Reads a 2-D float array (either precision), widening to `f64`.
pub fn read_matrix<R: Read>(reader: &mut R) -> Result<Array2<f64>> {
    let header = Header::read(reader)?;
    let (rows, cols) = match header.shape.as_slice() {
        &[r, c] => (r, c),
        other => {
            return Err(Error::Npy(format!(
                "feature array must be 2-D, found shape {other:?}"
            )))
        }
    };
    let payload = read_payload(reader, &header)?;
    let values: Vec<f64> = match header.dtype {
        Dtype::F8 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        Dtype::F4 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        Dtype::I8 => {
            return Err(Error::Npy(
                "feature array must be float ('<f4' or '<f8'), found '<i8'".into(),
            ))
        }
    };
    Ok(Array2::from_shape_vec((rows, cols), values).expect("shape checked against payload"))
}

/// Reads a 1-D `<i8` array.
pub fn read_labels<R: Read>(reader: &mut R) -> Result<Vec<i64>> {
    let header = Header::read(reader)?;
    if header.shape.len() != 1 {
        return Err(Error::Npy(format!(
            "label array must be 1-D, found shape {:?}",
            header.shape
        )));
    }
    if header.dtype != Dtype::I8 {
        return Err(Error::Npy(format!(
            "label array must be '<i8', found '{}'",
            header.dtype.descr()
        )));
    }
    let payload = read_payload(reader, &header)?;
    Ok(payload
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_matrix<W: Write>(writer: &mut W, m: &Array2<f64>) -> io::Result<()> {
    Header {
        dtype: Dtype::F8,
        shape: vec![m.nrows(), m.ncols()],
    }
    .write(writer)?;
    for v in m.iter() {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_matrix_f32<W: Write>(writer: &mut W, m: &Array2<f64>) -> io::Result<()> {
    Header {
        dtype: Dtype::F4,
        shape: vec![m.nrows(), m.ncols()],
    }
    .write(writer)?;
    for v in m.iter() {
        writer.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_labels<W: Write>(writer: &mut W, labels: &[i64]) -> io::Result<()> {
    Header {
        dtype: Dtype::I8,
        shape: vec![labels.len()],
    }
    .write(writer)?;
    for v in labels {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn read_matrix_file(path: &Path) -> Result<Array2<f64>> {
    read_matrix(&mut open(path)?)
}

pub fn read_labels_file(path: &Path) -> Result<Vec<i64>> {
    read_labels(&mut open(path)?)
}

pub fn write_matrix_file(path: &Path, m: &Array2<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_matrix(&mut w, m)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_labels_file(path: &Path, labels: &[i64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_labels(&mut w, labels)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    // Bytes produced by `np.save` (numpy 2.2) for np.zeros((4, 2)).
    const NUMPY_HEADER_4X2: &[u8] = b"\x93NUMPY\x01\x00v\x00{'descr': '<f8', 'fortran_order': False, 'shape': (4, 2), }                                                          \n";
    const NUMPY_HEADER_I8_3: &[u8] = b"\x93NUMPY\x01\x00v\x00{'descr': '<i8', 'fortran_order': False, 'shape': (3,), }                                                            \n";

    #[test]
    fn header_matches_numpy_bytes() {
        let mut buf = Vec::new();
        write_matrix(&mut buf, &Array2::zeros((4, 2))).unwrap();
        assert_eq!(&buf[..128], NUMPY_HEADER_4X2);
        assert_eq!(buf.len(), 128 + 64);

        let mut buf = Vec::new();
        write_labels(&mut buf, &[0, 1, 2]).unwrap();
        assert_eq!(&buf[..128], NUMPY_HEADER_I8_3);
    }

    #[test]
    fn header_length_is_aligned() {
        for rows in [1usize, 9, 10, 12345, 1 << 40] {
            let mut buf = Vec::new();
            Header {
                dtype: Dtype::F4,
                shape: vec![rows, 3],
            }
            .write(&mut buf)
            .unwrap();
            assert_eq!(buf.len() % ARRAY_ALIGN, 0);
            assert_eq!(*buf.last().unwrap(), b'\n');
        }
    }

    #[test]
    fn reads_f32_and_f64() {
        let m = array![[1.5, -2.0], [0.25, 1e10]];
        for f32_storage in [false, true] {
            let mut buf = Vec::new();
            if f32_storage {
                write_matrix_f32(&mut buf, &m).unwrap();
            } else {
                write_matrix(&mut buf, &m).unwrap();
            }
            let back = read_matrix(&mut buf.as_slice()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn accepts_reordered_header_keys() {
        let dict = "{'shape': (2,), 'fortran_order': False, 'descr': '<i8'}";
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&[1, 0]);
        buf.extend_from_slice(&((dict.len() + 1) as u16).to_le_bytes());
        buf.extend_from_slice(dict.as_bytes());
        buf.push(b'\n');
        buf.extend_from_slice(&7i64.to_le_bytes());
        buf.extend_from_slice(&(-1i64).to_le_bytes());
        assert_eq!(read_labels(&mut buf.as_slice()).unwrap(), vec![7, -1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut good = Vec::new();
        write_matrix(&mut good, &array![[1.0, 2.0]]).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[1] = b'X';
        assert!(matches!(
            read_matrix(&mut bad_magic.as_slice()),
            Err(Error::Npy(_))
        ));

        let mut v2 = good.clone();
        v2[6] = 2;
        assert!(matches!(
            read_matrix(&mut v2.as_slice()),
            Err(Error::Npy(_))
        ));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(
            read_matrix(&mut &truncated[..]),
            Err(Error::Npy(_))
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(
            read_matrix(&mut trailing.as_slice()),
            Err(Error::Npy(_))
        ));

        // big-endian is outside the supported subset
        let mut be = good.clone();
        let pos = be.windows(3).position(|w| w == b"<f8").unwrap();
        be[pos] = b'>';
        assert!(matches!(
            read_matrix(&mut be.as_slice()),
            Err(Error::Npy(_))
        ));

        // labels stored as floats are rejected
        assert!(matches!(
            read_labels(&mut good.as_slice()),
            Err(Error::Npy(_))
        ));
    }

    #[test]
    fn rejects_fortran_order() {
        let dict = "{'descr': '<f8', 'fortran_order': True, 'shape': (1, 1), }";
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&[1, 0]);
        buf.extend_from_slice(&((dict.len() + 1) as u16).to_le_bytes());
        buf.extend_from_slice(dict.as_bytes());
        buf.push(b'\n');
        buf.extend_from_slice(&1f64.to_le_bytes());
        assert!(matches!(
            read_matrix(&mut buf.as_slice()),
            Err(Error::Npy(_))
        ));
    }
}

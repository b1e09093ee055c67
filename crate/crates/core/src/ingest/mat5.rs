//! Minimal MATLAB level-5 reader.
//!
//! Accepts exactly what the 2017 challenge distributes: an uncompressed file
//! holding one int16 matrix named `val` with a singleton dimension.

use crate::{Error, Result};

const HEADER_LEN: usize = 128;

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

const MX_INT16_CLASS: u32 = 10;
const FLAG_COMPLEX: u32 = 0x0800;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

/// One data element: type, payload location, and the offset after it.
struct Element {
    kind: u32,
    start: usize,
    len: usize,
    next: usize,
}

fn fail(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "mat5",
        offset: offset as u64,
        message: message.into(),
    }
}

impl<'a> Cursor<'a> {
    fn u32_at(&self, at: usize) -> Result<u32> {
        let b = self
            .bytes
            .get(at..at + 4)
            .ok_or_else(|| fail(at, "unexpected end of file"))?;
        let arr = [b[0], b[1], b[2], b[3]];
        Ok(match self.endian {
            Endian::Little => u32::from_le_bytes(arr),
            Endian::Big => u32::from_be_bytes(arr),
        })
    }

    fn element(&self, at: usize, end: usize) -> Result<Element> {
        if at + 8 > end {
            return Err(fail(at, "truncated data element tag"));
        }
        let word = self.u32_at(at)?;
        let small_len = word >> 16;
        if small_len != 0 {
            // small data element: 2-byte type, 2-byte length, <=4 bytes payload
            let len = small_len as usize;
            if len > 4 {
                return Err(fail(at, format!("small element claims {len} bytes")));
            }
            return Ok(Element {
                kind: word & 0xffff,
                start: at + 4,
                len,
                next: at + 8,
            });
        }
        let len = self.u32_at(at + 4)? as usize;
        let start = at + 8;
        let padded = len.div_ceil(8) * 8;
        if start + len > end {
            return Err(fail(at, format!("element of {len} bytes runs past end")));
        }
        Ok(Element {
            kind: word,
            start,
            len,
            next: (start + padded).min(end),
        })
    }

    fn integers(&self, el: &Element) -> Result<Vec<i64>> {
        let data = &self.bytes[el.start..el.start + el.len];
        let width = match el.kind {
            MI_INT8 | MI_UINT8 => 1,
            MI_INT16 | MI_UINT16 => 2,
            MI_INT32 | MI_UINT32 => 4,
            other => return Err(fail(el.start, format!("unsupported numeric type {other}"))),
        };
        if el.len % width != 0 {
            return Err(fail(el.start, "payload length not a multiple of element width"));
        }
        let big = matches!(self.endian, Endian::Big);
        Ok(data
            .chunks_exact(width)
            .map(|c| match (el.kind, big) {
                (MI_INT8, _) => i64::from(c[0] as i8),
                (MI_UINT8, _) => i64::from(c[0]),
                (MI_INT16, false) => i64::from(i16::from_le_bytes([c[0], c[1]])),
                (MI_INT16, true) => i64::from(i16::from_be_bytes([c[0], c[1]])),
                (MI_UINT16, false) => i64::from(u16::from_le_bytes([c[0], c[1]])),
                (MI_UINT16, true) => i64::from(u16::from_be_bytes([c[0], c[1]])),
                (MI_INT32, false) => i64::from(i32::from_le_bytes([c[0], c[1], c[2], c[3]])),
                (MI_INT32, true) => i64::from(i32::from_be_bytes([c[0], c[1], c[2], c[3]])),
                (_, false) => i64::from(u32::from_le_bytes([c[0], c[1], c[2], c[3]])),
                (_, true) => i64::from(u32::from_be_bytes([c[0], c[1], c[2], c[3]])),
            })
            .collect())
    }
}

/// Extract the `val` vector from a level-5 MAT file image.
pub fn read_val(bytes: &[u8]) -> Result<Vec<i16>> {
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "file shorter than the 128-byte header"));
    }
    let endian = match &bytes[126..128] {
        b"IM" => Endian::Little,
        b"MI" => Endian::Big,
        _ => return Err(fail(126, "bad endian indicator")),
    };
    let cur = Cursor { bytes, endian };
    let version = match endian {
        Endian::Little => u16::from_le_bytes([bytes[124], bytes[125]]),
        Endian::Big => u16::from_be_bytes([bytes[124], bytes[125]]),
    };
    if version != 0x0100 {
        return Err(fail(124, format!("unsupported version {version:#06x}")));
    }

    let end = bytes.len();
    if HEADER_LEN == end {
        return Err(fail(end, "no variables in file"));
    }
    let top = cur.element(HEADER_LEN, end)?;
    match top.kind {
        MI_MATRIX => {}
        MI_COMPRESSED => return Err(fail(HEADER_LEN, "compressed variables are not supported")),
        other => return Err(fail(HEADER_LEN, format!("expected a matrix element, found type {other}"))),
    }
    if top.next < end && bytes[top.next..].iter().any(|&b| b != 0) {
        return Err(fail(top.next, "file holds more than one variable"));
    }

    let body_end = top.start + top.len;
    let flags_el = cur.element(top.start, body_end)?;
    if flags_el.kind != MI_UINT32 || flags_el.len != 8 {
        return Err(fail(flags_el.start, "malformed array flags"));
    }
    let flags = cur.u32_at(flags_el.start)?;
    let class = flags & 0xff;
    if class != MX_INT16_CLASS {
        return Err(fail(flags_el.start, format!("array class {class} is not int16")));
    }
    if flags & FLAG_COMPLEX != 0 {
        return Err(fail(flags_el.start, "complex arrays are not supported"));
    }

    let dims_el = cur.element(flags_el.next, body_end)?;
    if dims_el.kind != MI_INT32 {
        return Err(fail(dims_el.start, "malformed dimensions"));
    }
    let dims = cur.integers(&dims_el)?;
    if dims.len() != 2 || dims.iter().any(|&d| d < 0) {
        return Err(fail(dims_el.start, format!("expected a 2-D array, got dims {dims:?}")));
    }
    if dims[0] != 1 && dims[1] != 1 {
        return Err(fail(dims_el.start, format!("expected a vector, got {}x{}", dims[0], dims[1])));
    }
    let count = (dims[0] * dims[1]) as usize;

    let name_el = cur.element(dims_el.next, body_end)?;
    if name_el.kind != MI_INT8 {
        return Err(fail(name_el.start, "malformed array name"));
    }
    let name = &bytes[name_el.start..name_el.start + name_el.len];
    if name != b"val" {
        return Err(fail(
            name_el.start,
            format!("variable is named '{}', expected 'val'", String::from_utf8_lossy(name)),
        ));
    }

    let data_el = cur.element(name_el.next, body_end)?;
    let values = cur.integers(&data_el)?;
    if values.len() != count {
        return Err(fail(
            data_el.start,
            format!("dimensions declare {count} values, payload holds {}", values.len()),
        ));
    }
    if count == 0 {
        return Err(Error::invalid("empty signal"));
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            i16::try_from(v).map_err(|_| fail(data_el.start + i, format!("value {v} exceeds int16")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> Vec<u8> {
        let mut h = vec![b' '; 116];
        h.extend_from_slice(&[0; 8]);
        h.extend_from_slice(&0x0100u16.to_le_bytes());
        h.extend_from_slice(b"IM");
        h
    }

    fn tag(kind: u32, len: u32) -> Vec<u8> {
        let mut v = kind.to_le_bytes().to_vec();
        v.extend_from_slice(&len.to_le_bytes());
        v
    }

    fn pad(mut v: Vec<u8>) -> Vec<u8> {
        while v.len() % 8 != 0 {
            v.push(0);
        }
        v
    }

    /// Long-form tags everywhere, unlike the compact writer used for fixtures.
    fn build(class: u32, name: &[u8], data: &[i16]) -> Vec<u8> {
        let mut body = tag(MI_UINT32, 8);
        body.extend_from_slice(&class.to_le_bytes());
        body.extend_from_slice(&0u32.to_le_bytes());
        body.extend(tag(MI_INT32, 8));
        body.extend_from_slice(&1i32.to_le_bytes());
        body.extend_from_slice(&(data.len() as i32).to_le_bytes());
        body.extend(tag(MI_INT8, name.len() as u32));
        body.extend(pad(name.to_vec()));
        body.extend(tag(MI_INT16, (data.len() * 2) as u32));
        let payload: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        body.extend(pad(payload));
        let mut out = header();
        out.extend(tag(MI_MATRIX, body.len() as u32));
        out.extend(body);
        out
    }

    #[test]
    fn long_form_tags() {
        let bytes = build(MX_INT16_CLASS, b"val", &[1, -2, 300]);
        assert_eq!(read_val(&bytes).unwrap(), vec![1, -2, 300]);
    }

    #[test]
    fn wrong_name_rejected() {
        let bytes = build(MX_INT16_CLASS, b"ecg", &[1, 2]);
        let err = read_val(&bytes).unwrap_err().to_string();
        assert!(err.contains("'ecg'"), "{err}");
    }

    #[test]
    fn wrong_class_rejected() {
        let bytes = build(6, b"val", &[1, 2]);
        assert!(read_val(&bytes).is_err());
    }

    #[test]
    fn truncated_names_offset() {
        let bytes = build(MX_INT16_CLASS, b"val", &[1, 2, 3, 4]);
        let cut = &bytes[..bytes.len() - 8];
        match read_val(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 128),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_header() {
        assert!(matches!(read_val(&[0; 20]), Err(Error::Format { offset: 20, .. })));
    }
}

//! Minimal reader for MATLAB level-5 container files, covering the subset
//! the bearing measurement files use: little-endian files holding numeric
//! arrays, character arrays, cell arrays and (possibly nested) struct
//! arrays, with optional zlib-compressed elements.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use flate2::read::ZlibDecoder;

use crate::error::{Error, Result};

// data type tags
const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;
const MI_UTF8: u32 = 16;
const MI_UTF16: u32 = 17;

// array class tags
const MX_CELL: u8 = 1;
const MX_STRUCT: u8 = 2;
const MX_CHAR: u8 = 4;

/// A decoded MATLAB value.
#[derive(Debug, Clone)]
pub enum MatValue {
    /// Flattened numeric data (column-major, as stored) plus dimensions.
    Numeric { data: Vec<f64>, dims: Vec<usize> },
    Char(String),
    Cell(Vec<MatValue>),
    /// Struct array: one field map per element.
    Struct {
        fields: Vec<String>,
        elements: Vec<BTreeMap<String, MatValue>>,
    },
    /// Present but not decodable by this reader (sparse, objects, ...).
    Unsupported(String),
}

impl MatValue {
    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            MatValue::Numeric { data, .. } => Some(data),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            MatValue::Char(s) => Some(s),
            _ => None,
        }
    }
}

/// Reads every top-level variable of a MAT 5 file.
pub fn read_mat(path: &Path) -> Result<Vec<(String, MatValue)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: &str| Error::Data(format!("{}: {msg}", path.display()));
    if bytes.len() < 128 {
        return Err(fail("file shorter than the 128-byte header"));
    }
    // bytes 126..128 carry the endian indicator; "IM" means little-endian
    match &bytes[126..128] {
        b"IM" => {}
        b"MI" => return Err(fail("big-endian container files are not supported")),
        _ => return Err(fail("missing MAT 5 endian indicator")),
    }

    let mut vars = vec![];
    let mut cursor = Cursor {
        data: &bytes[128..],
        pos: 0,
    };
    while cursor.remaining() >= 8 {
        let (dtype, payload) = cursor.next_element().map_err(|m| fail(&m))?;
        match dtype {
            MI_COMPRESSED => {
                let mut inflated = vec![];
                ZlibDecoder::new(payload)
                    .read_to_end(&mut inflated)
                    .map_err(|e| fail(&format!("zlib: {e}")))?;
                let mut inner = Cursor {
                    data: &inflated,
                    pos: 0,
                };
                let (inner_type, inner_payload) = inner.next_element().map_err(|m| fail(&m))?;
                if inner_type == MI_MATRIX {
                    if let Some(v) = parse_matrix(inner_payload).map_err(|m| fail(&m))? {
                        vars.push(v);
                    }
                }
            }
            MI_MATRIX => {
                if let Some(v) = parse_matrix(payload).map_err(|m| fail(&m))? {
                    vars.push(v);
                }
            }
            _ => {} // skip subsystem-specific elements
        }
    }
    Ok(vars)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn u32_at(&self, offset: usize) -> u32 {
        let p = self.pos + offset;
        u32::from_le_bytes(self.data[p..p + 4].try_into().unwrap())
    }

    /// Next tagged element, handling the packed small-element format and
    /// 8-byte padding. Returns (type, payload).
    fn next_element(&mut self) -> std::result::Result<(u32, &'a [u8]), String> {
        if self.remaining() < 8 {
            return Err("truncated element tag".into());
        }
        let word = self.u32_at(0);
        let small_size = word >> 16;
        if small_size != 0 && small_size <= 4 {
            // small element: 2-byte type, 2-byte size, 4 bytes of data
            let dtype = word & 0xFFFF;
            let start = self.pos + 4;
            let payload = &self.data[start..start + small_size as usize];
            self.pos += 8;
            return Ok((dtype, payload));
        }
        let dtype = word;
        let size = self.u32_at(4) as usize;
        let start = self.pos + 8;
        if start + size > self.data.len() {
            return Err(format!("element of {size} bytes overruns the file"));
        }
        let payload = &self.data[start..start + size];
        // payloads are padded to the next 8-byte boundary; compressed
        // elements are stored without padding
        let advance = if dtype == MI_COMPRESSED {
            size
        } else {
            size.div_ceil(8) * 8
        };
        self.pos = (start + advance).min(self.data.len());
        Ok((dtype, payload))
    }
}

fn decode_numeric(dtype: u32, payload: &[u8]) -> std::result::Result<Vec<f64>, String> {
    fn chunks<const N: usize>(p: &[u8]) -> impl Iterator<Item = [u8; N]> + '_ {
        p.chunks_exact(N).map(|c| c.try_into().unwrap())
    }
    let out: Vec<f64> = match dtype {
        MI_INT8 => payload.iter().map(|&b| b as i8 as f64).collect(),
        MI_UINT8 | MI_UTF8 => payload.iter().map(|&b| b as f64).collect(),
        MI_INT16 => chunks::<2>(payload).map(|c| i16::from_le_bytes(c) as f64).collect(),
        MI_UINT16 | MI_UTF16 => chunks::<2>(payload).map(|c| u16::from_le_bytes(c) as f64).collect(),
        MI_INT32 => chunks::<4>(payload).map(|c| i32::from_le_bytes(c) as f64).collect(),
        MI_UINT32 => chunks::<4>(payload).map(|c| u32::from_le_bytes(c) as f64).collect(),
        MI_SINGLE => chunks::<4>(payload).map(|c| f32::from_le_bytes(c) as f64).collect(),
        MI_DOUBLE => chunks::<8>(payload).map(f64::from_le_bytes).collect(),
        MI_INT64 => chunks::<8>(payload).map(|c| i64::from_le_bytes(c) as f64).collect(),
        MI_UINT64 => chunks::<8>(payload).map(|c| u64::from_le_bytes(c) as f64).collect(),
        other => return Err(format!("unsupported numeric type {other}")),
    };
    Ok(out)
}

/// Parses a miMATRIX payload into (name, value). Returns None for empty
/// placeholder matrices.
fn parse_matrix(payload: &[u8]) -> std::result::Result<Option<(String, MatValue)>, String> {
    let mut cur = Cursor {
        data: payload,
        pos: 0,
    };
    if cur.remaining() == 0 {
        return Ok(None);
    }

    // array flags
    let (ftype, flags) = cur.next_element()?;
    if ftype != MI_UINT32 || flags.len() < 8 {
        return Err("malformed array flags".into());
    }
    let class = flags[0];

    // dimensions
    let (dtype, dims_raw) = cur.next_element()?;
    let dims: Vec<usize> = decode_numeric(dtype, dims_raw)?
        .into_iter()
        .map(|v| v as usize)
        .collect();
    let numel: usize = dims.iter().product();

    // name
    let (ntype, name_raw) = cur.next_element()?;
    let name = String::from_utf8_lossy(&match ntype {
        MI_INT8 | MI_UINT8 => name_raw.to_vec(),
        _ => return Err("malformed array name".into()),
    })
    .trim_end_matches('\0')
    .to_string();

    let value = match class {
        MX_CHAR => {
            let (ctype, data) = cur.next_element()?;
            let codes = decode_numeric(ctype, data)?;
            let s: String = codes
                .iter()
                .filter_map(|&c| char::from_u32(c as u32))
                .collect();
            MatValue::Char(s)
        }
        MX_CELL => {
            let mut items = vec![];
            for _ in 0..numel {
                let (itype, ipayload) = cur.next_element()?;
                if itype != MI_MATRIX {
                    return Err("cell entry is not a matrix".into());
                }
                match parse_matrix(ipayload)? {
                    Some((_, v)) => items.push(v),
                    None => items.push(MatValue::Numeric {
                        data: vec![],
                        dims: vec![0],
                    }),
                }
            }
            MatValue::Cell(items)
        }
        MX_STRUCT => {
            // field name length, then the packed field-name table
            let (_t, len_raw) = cur.next_element()?;
            let field_len = decode_numeric(_t, len_raw)?
                .first()
                .copied()
                .unwrap_or(32.0) as usize;
            let (_t2, names_raw) = cur.next_element()?;
            let field_count = if field_len == 0 {
                0
            } else {
                names_raw.len() / field_len
            };
            let fields: Vec<String> = (0..field_count)
                .map(|i| {
                    String::from_utf8_lossy(&names_raw[i * field_len..(i + 1) * field_len])
                        .trim_end_matches('\0')
                        .to_string()
                })
                .collect();

            // per element, per field, one matrix
            let mut elements = vec![];
            for _ in 0..numel {
                let mut map = BTreeMap::new();
                for field in &fields {
                    let (itype, ipayload) = cur.next_element()?;
                    if itype != MI_MATRIX {
                        return Err(format!("struct field {field} is not a matrix"));
                    }
                    let v = match parse_matrix(ipayload)? {
                        Some((_, v)) => v,
                        None => MatValue::Numeric {
                            data: vec![],
                            dims: vec![0],
                        },
                    };
                    map.insert(field.clone(), v);
                }
                elements.push(map);
            }
            MatValue::Struct { fields, elements }
        }
        // numeric classes 6..=15 share the layout: real part, optional imaginary
        6..=15 => {
            let (dtype, data) = cur.next_element()?;
            let data = decode_numeric(dtype, data)?;
            MatValue::Numeric { data, dims }
        }
        other => MatValue::Unsupported(format!("class {other}")),
    };
    Ok(Some((name, value)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tag(dtype: u32, payload: &[u8]) -> Vec<u8> {
        let mut out = vec![];
        out.extend_from_slice(&dtype.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        while out.len() % 8 != 0 {
            out.push(0);
        }
        out
    }

    fn numeric_matrix(name: &str, values: &[f64]) -> Vec<u8> {
        let mut body = vec![];
        body.extend(tag(MI_UINT32, &{
            let mut f = vec![0u8; 8];
            f[0] = 6; // mxDOUBLE_CLASS
            f
        }));
        let mut dims = vec![];
        dims.extend_from_slice(&1i32.to_le_bytes());
        dims.extend_from_slice(&(values.len() as i32).to_le_bytes());
        body.extend(tag(MI_INT32, &dims));
        body.extend(tag(MI_INT8, name.as_bytes()));
        let mut data = vec![];
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        body.extend(tag(MI_DOUBLE, &data));
        tag(MI_MATRIX, &body)
    }

    #[test]
    fn reads_plain_numeric_variable() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let mut bytes = vec![0u8; 128];
        bytes[..20].copy_from_slice(b"MATLAB 5.0 MAT-file ");
        bytes[124] = 0x00;
        bytes[125] = 0x01;
        bytes[126] = b'I';
        bytes[127] = b'M';
        bytes.extend(numeric_matrix("vib", &[1.0, -2.5, 3.25]));
        f.as_file_mut().write_all(&bytes).unwrap();

        let vars = read_mat(f.path()).unwrap();
        assert_eq!(vars.len(), 1);
        assert_eq!(vars[0].0, "vib");
        assert_eq!(vars[0].1.as_numeric().unwrap(), &[1.0, -2.5, 3.25]);
    }
}

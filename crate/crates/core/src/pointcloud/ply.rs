//! Minimal PLY support: `ascii 1.0` and `binary_little_endian 1.0`.
//!
//! Only vertex positions and normals are kept. Other elements (faces, ...)
//! and other vertex properties (colors, ...) are parsed and dropped. A
//! `comment bit_depth N` header line carries the coordinate precision.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{norm, Point, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn parse_ascii(self, tok: &str) -> Option<f64> {
        match self {
            Scalar::F32 => tok.parse::<f32>().ok().map(f64::from),
            Scalar::F64 => tok.parse::<f64>().ok(),
            Scalar::I8 | Scalar::I16 | Scalar::I32 => tok.parse::<i64>().ok().map(|v| v as f64),
            Scalar::U8 | Scalar::U16 | Scalar::U32 => tok.parse::<u64>().ok().map(|v| v as f64),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    bit_depth: Option<u32>,
    lines: usize,
}

/// Reads a PLY file from disk.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply_from(BufReader::new(file))
}

/// Reads a PLY stream.
pub fn read_ply_from<R: BufRead>(mut reader: R) -> Result<PointCloud> {
    let header = read_header(&mut reader)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(header.lines, "no vertex element declared"))?;
    let vertex = &header.elements[vertex_pos];
    if vertex.count == 0 {
        return Err(Error::EmptyInput("PLY file declares zero vertices".into()));
    }

    let slot = |name: &str| {
        vertex
            .properties
            .iter()
            .position(|p| matches!(p, Property::Scalar(n, _) if n == name))
    };
    let xyz = match (slot("x"), slot("y"), slot("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(Error::parse(header.lines, "vertex element lacks x, y or z")),
    };
    let nxyz = match (slot("nx"), slot("ny"), slot("nz")) {
        (Some(x), Some(y), Some(z)) => Some([x, y, z]),
        _ => None,
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    match header.format {
        PlyFormat::Ascii => {
            let mut body = String::new();
            reader
                .read_to_string(&mut body)
                .map_err(|e| Error::parse(header.lines + 1, format!("unreadable body: {e}")))?;
            let mut lines = body
                .lines()
                .enumerate()
                .map(|(i, l)| (header.lines + 1 + i, l))
                .filter(|(_, l)| !l.trim().is_empty());
            for (ei, element) in header.elements.iter().enumerate() {
                for _ in 0..element.count {
                    let (lineno, line) = lines.next().ok_or_else(|| {
                        Error::parse(
                            header.lines + body.lines().count() + 1,
                            format!("unexpected end of data in element '{}'", element.name),
                        )
                    })?;
                    let row = parse_ascii_record(element, line, lineno)?;
                    if ei == vertex_pos {
                        rows.push(row);
                    }
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut offset = 0usize;
            for (ei, element) in header.elements.iter().enumerate() {
                for r in 0..element.count {
                    let row = read_binary_record(&mut reader, element).map_err(|_| {
                        Error::parse(
                            header.lines,
                            format!(
                                "binary body truncated in element '{}' at record {r} (byte offset {offset})",
                                element.name
                            ),
                        )
                    })?;
                    offset += row.1;
                    if ei == vertex_pos {
                        rows.push(row.0);
                    }
                }
            }
        }
    }

    let points = rows
        .iter()
        .map(|r| Point::new(r[xyz[0]], r[xyz[1]], r[xyz[2]]))
        .collect::<Vec<_>>();
    let mut pc = PointCloud::new(points)?.with_bit_depth(header.bit_depth);
    if let Some(n) = nxyz {
        let mut normals = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let v = [r[n[0]], r[n[1]], r[n[2]]];
            let len = norm(v);
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::parse(
                    header.lines + 1 + i,
                    format!("vertex {i} has a zero or non-finite normal"),
                ));
            }
            normals.push([v[0] / len, v[1] / len, v[2] / len]);
        }
        pc = pc.with_normals(normals)?;
    }
    Ok(pc)
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut lineno = 0usize;
    let mut next_line = |reader: &mut R| -> Result<(usize, String)> {
        let mut buf = Vec::new();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::parse(lineno + 1, format!("unreadable header: {e}")))?;
        lineno += 1;
        if n == 0 {
            return Err(Error::parse(lineno, "unexpected end of header"));
        }
        let s = String::from_utf8(buf).map_err(|_| Error::parse(lineno, "header is not UTF-8"))?;
        Ok((lineno, s.trim_end_matches(['\n', '\r']).to_string()))
    };

    let (l, magic) = next_line(reader)?;
    if magic.trim() != "ply" {
        return Err(Error::parse(l, "missing 'ply' magic"));
    }

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut bit_depth = None;
    loop {
        let (l, line) = next_line(reader)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            ["end_header"] => break,
            ["format", fmt, version] => {
                if *version != "1.0" {
                    return Err(Error::UnsupportedFormat(format!("PLY version {version}")));
                }
                format = Some(match *fmt {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::UnsupportedFormat(other.to_string())),
                });
            }
            ["comment", "bit_depth", v] => {
                bit_depth = Some(
                    v.parse::<u32>()
                        .ok()
                        .filter(|&b| b > 0)
                        .ok_or_else(|| Error::parse(l, format!("invalid bit_depth '{v}'")))?,
                );
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse::<usize>()
                    .map_err(|_| Error::parse(l, format!("invalid element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(l, "property before any element"))?;
                let count = Scalar::parse(count)
                    .ok_or_else(|| Error::parse(l, format!("unknown type '{count}'")))?;
                let item = Scalar::parse(item)
                    .ok_or_else(|| Error::parse(l, format!("unknown type '{item}'")))?;
                el.properties.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(l, "property before any element"))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(l, format!("unknown type '{ty}'")))?;
                el.properties.push(Property::Scalar(name.to_string(), ty));
            }
            _ => {
                return Err(Error::parse(
                    l,
                    format!("unrecognised header line '{line}'"),
                ))
            }
        }
    }
    let format = format.ok_or_else(|| Error::parse(lineno, "missing format line"))?;
    Ok(Header {
        format,
        elements,
        bit_depth,
        lines: lineno,
    })
}

fn parse_ascii_record(element: &Element, line: &str, lineno: usize) -> Result<Vec<f64>> {
    let mut toks = line.split_whitespace();
    let mut row = Vec::with_capacity(element.properties.len());
    let mut take = |ty: Scalar| -> Result<f64> {
        let tok = toks.next().ok_or_else(|| {
            Error::parse(
                lineno,
                format!("too few values for element '{}'", element.name),
            )
        })?;
        ty.parse_ascii(tok)
            .ok_or_else(|| Error::parse(lineno, format!("cannot parse '{tok}'")))
    };
    for prop in &element.properties {
        match *prop {
            Property::Scalar(_, ty) => row.push(take(ty)?),
            Property::List { count, item } => {
                let n = take(count)?;
                if n < 0.0 || n.fract() != 0.0 {
                    return Err(Error::parse(lineno, format!("invalid list length {n}")));
                }
                for _ in 0..n as usize {
                    take(item)?;
                }
                row.push(f64::NAN);
            }
        }
    }
    if toks.next().is_some() {
        return Err(Error::parse(
            lineno,
            format!("too many values for element '{}'", element.name),
        ));
    }
    Ok(row)
}

fn read_binary_record<R: Read>(
    reader: &mut R,
    element: &Element,
) -> std::io::Result<(Vec<f64>, usize)> {
    let mut row = Vec::with_capacity(element.properties.len());
    let mut buf = [0u8; 8];
    let mut consumed = 0;
    let mut read_scalar = |reader: &mut R, ty: Scalar| -> std::io::Result<f64> {
        let n = ty.size();
        reader.read_exact(&mut buf[..n])?;
        consumed += n;
        Ok(ty.decode_le(&buf[..n]))
    };
    for prop in &element.properties {
        match *prop {
            Property::Scalar(_, ty) => row.push(read_scalar(reader, ty)?),
            Property::List { count, item } => {
                let n = read_scalar(reader, count)?;
                if n < 0.0 {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        "negative list length",
                    ));
                }
                for _ in 0..n as usize {
                    read_scalar(reader, item)?;
                }
                row.push(f64::NAN);
            }
        }
    }
    Ok((row, consumed))
}

/// Writes `pc` as PLY. Coordinates and normals are stored as 32-bit floats.
pub fn write_ply(pc: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply_to(pc, &mut w, format).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `pc` as PLY into any writer.
pub fn write_ply_to<W: Write>(pc: &PointCloud, w: &mut W, format: PlyFormat) -> Result<()> {
    pc.ensure_non_empty("cloud to write")?;
    let io = |e| Error::io("<stream>", e);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut header = format!("ply\nformat {fmt} 1.0\n");
    if let Some(b) = pc.bit_depth() {
        header.push_str(&format!("comment bit_depth {b}\n"));
    }
    header.push_str(&format!("element vertex {}\n", pc.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if pc.normals().is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io)?;

    let normals = pc.normals();
    for (i, p) in pc.points().iter().enumerate() {
        let mut vals = vec![p.x as f32, p.y as f32, p.z as f32];
        if let Some(n) = normals {
            vals.extend(n[i].iter().map(|&c| c as f32));
        }
        match format {
            PlyFormat::Ascii => {
                let line = vals
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(" ");
                writeln!(w, "{line}").map_err(io)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in vals {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
        }
    }
    Ok(())
}

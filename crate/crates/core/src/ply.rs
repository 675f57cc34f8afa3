//! PLY 1.0 reader and writer for colored point clouds.
//!
//! Reads `ascii` and `binary_little_endian` files with `x`, `y`, `z` (any
//! scalar type) and `red`, `green`, `blue` vertex properties. Elements other
//! than `vertex` are skipped. Fractional coordinates are rounded half to even.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cloud::{ColorSpace, PointCloud, MAX_BITDEPTH, MIN_BITDEPTH};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Fixed bit depth; inferred from the largest coordinate when `None`.
    pub bitdepth: Option<u8>,
    /// Average the colors of points sharing a voxel instead of failing.
    pub merge_duplicates: bool,
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => f64::from(b[0] as i8),
            Scalar::U8 => f64::from(b[0]),
            Scalar::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Scalar::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Scalar::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    bitdepth: Option<u8>,
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String> {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::MalformedHeader(e.to_string()))?;
        if n == 0 {
            return Err(Error::MalformedHeader("unexpected end of header".into()));
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    };

    if next_line(reader)?.trim() != "ply" {
        return Err(Error::MalformedHeader("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut bitdepth = None;
    loop {
        let l = next_line(reader)?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            ["comment", "bitdepth", b] => bitdepth = b.parse().ok(),
            ["comment", ..] | ["obj_info", ..] => continue,
            ["format", kind, version] => {
                if *version != "1.0" {
                    return Err(Error::MalformedHeader(format!("unsupported version {version}")));
                }
                format = Some(match *kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(Error::MalformedHeader(format!("unsupported format {other}")))
                    }
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::MalformedHeader(format!("bad element count `{count}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::MalformedHeader("property before element".into()))?;
                let (Some(count), Some(item)) = (Scalar::parse(count), Scalar::parse(item)) else {
                    return Err(Error::MalformedHeader(format!("bad list property `{l}`")));
                };
                el.props.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::MalformedHeader("property before element".into()))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::MalformedHeader(format!("unknown type `{ty}`")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => return Err(Error::MalformedHeader(format!("unexpected line `{l}`"))),
        }
    }
    let format = format.ok_or_else(|| Error::MalformedHeader("missing format line".into()))?;
    Ok(Header {
        format,
        elements,
        bitdepth,
    })
}

/// Raw vertex records: coordinates and colors as reals.
type RawVertices = Vec<([f64; 3], [f64; 3])>;

fn vertex_slots(el: &Element) -> Result<([usize; 3], [usize; 3])> {
    let find = |want: &str| {
        el.props.iter().position(
            |p| matches!(p, Property::Scalar { name, .. } if name == want),
        )
    };
    let mut xyz = [0; 3];
    for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
        *slot = find(name).ok_or_else(|| Error::MissingAttribute(name.into()))?;
    }
    let mut rgb = [0; 3];
    for (slot, name) in rgb.iter_mut().zip(["red", "green", "blue"]) {
        *slot = find(name).ok_or_else(|| Error::MissingAttribute(name.into()))?;
    }
    Ok((xyz, rgb))
}

fn read_ascii<R: BufRead>(reader: &mut R, header: &Header) -> Result<RawVertices> {
    let mut lines = reader.lines();
    let mut out = Vec::new();
    for el in &header.elements {
        let slots = if el.name == "vertex" {
            Some(vertex_slots(el)?)
        } else {
            None
        };
        for i in 0..el.count {
            let line = lines
                .next()
                .ok_or_else(|| Error::MalformedBody(format!("{} #{i} missing", el.name)))?
                .map_err(|e| Error::MalformedBody(e.to_string()))?;
            let Some((xyz, rgb)) = slots else { continue };
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::MalformedBody(format!("vertex #{i}: {e}")))?;
            if values.len() < el.props.len() {
                return Err(Error::MalformedBody(format!("vertex #{i} is short")));
            }
            out.push((xyz.map(|s| values[s]), rgb.map(|s| values[s])));
        }
        if slots.is_some() {
            return Ok(out);
        }
    }
    Err(Error::MissingAttribute("vertex".into()))
}

fn read_binary<R: Read>(reader: &mut R, header: &Header) -> Result<RawVertices> {
    let mut out = Vec::new();
    let short = |e: std::io::Error| Error::MalformedBody(e.to_string());
    for el in &header.elements {
        if el.name != "vertex" {
            // skip a preceding element record by record
            for _ in 0..el.count {
                for p in &el.props {
                    match *p {
                        Property::Scalar { ty, .. } => {
                            let mut buf = [0u8; 8];
                            reader.read_exact(&mut buf[..ty.size()]).map_err(short)?;
                        }
                        Property::List { count, item } => {
                            let mut buf = [0u8; 8];
                            reader.read_exact(&mut buf[..count.size()]).map_err(short)?;
                            let n = count.read_le(&buf) as usize;
                            let mut skip = vec![0u8; n * item.size()];
                            reader.read_exact(&mut skip).map_err(short)?;
                        }
                    }
                }
            }
            continue;
        }
        let (xyz, rgb) = vertex_slots(el)?;
        let mut offsets = Vec::with_capacity(el.props.len());
        let mut stride = 0;
        for p in &el.props {
            match *p {
                Property::Scalar { ty, .. } => {
                    offsets.push((stride, ty));
                    stride += ty.size();
                }
                Property::List { .. } => {
                    return Err(Error::MalformedHeader(
                        "list properties on vertices are not supported".into(),
                    ))
                }
            }
        }
        let mut record = vec![0u8; stride];
        for _ in 0..el.count {
            reader.read_exact(&mut record).map_err(short)?;
            let get = |slot: usize| {
                let (off, ty) = offsets[slot];
                ty.read_le(&record[off..])
            };
            out.push((xyz.map(get), rgb.map(get)));
        }
        return Ok(out);
    }
    Err(Error::MissingAttribute("vertex".into()))
}

fn build_cloud(raw: RawVertices, opts: LoadOptions) -> Result<PointCloud> {
    let max_bitdepth_limit = 1i64 << MAX_BITDEPTH;
    let mut geometry = Vec::with_capacity(raw.len());
    let mut colors = Vec::with_capacity(raw.len());
    let mut max_coord = 0i64;
    for (xyz, rgb) in raw {
        let mut g = [0u32; 3];
        for (dst, v) in g.iter_mut().zip(xyz) {
            let r = v.round_ties_even();
            if !r.is_finite() || r < 0.0 || r >= max_bitdepth_limit as f64 {
                return Err(Error::CoordinateOutOfRange {
                    value: if r.is_finite() { r as i64 } else { i64::MAX },
                    bitdepth: opts.bitdepth.unwrap_or(MAX_BITDEPTH),
                });
            }
            *dst = r as u32;
            max_coord = max_coord.max(r as i64);
        }
        for c in rgb {
            if !(0.0..=255.0).contains(&c) || c.fract() != 0.0 {
                return Err(Error::ColorOutOfRange(c));
            }
        }
        geometry.push(g);
        colors.push(rgb);
    }
    let bitdepth = match opts.bitdepth {
        Some(b) => {
            if max_coord >= 1i64 << b {
                return Err(Error::CoordinateOutOfRange {
                    value: max_coord,
                    bitdepth: b,
                });
            }
            b
        }
        None => {
            let needed = (64 - (max_coord as u64).leading_zeros()) as u8;
            needed.clamp(MIN_BITDEPTH, MAX_BITDEPTH)
        }
    };
    if opts.merge_duplicates {
        let mut slot: HashMap<[u32; 3], usize> = HashMap::with_capacity(geometry.len());
        let mut merged_g = Vec::new();
        let mut sums: Vec<([f64; 3], f64)> = Vec::new();
        for (g, c) in geometry.iter().zip(&colors) {
            let i = *slot.entry(*g).or_insert_with(|| {
                merged_g.push(*g);
                sums.push(([0.0; 3], 0.0));
                sums.len() - 1
            });
            for k in 0..3 {
                sums[i].0[k] += c[k];
            }
            sums[i].1 += 1.0;
        }
        let merged_c = sums
            .into_iter()
            .map(|(s, n)| s.map(|v| (v / n).round_ties_even()))
            .collect();
        return PointCloud::new(merged_g, merged_c, bitdepth, ColorSpace::Rgb8);
    }
    PointCloud::new(geometry, colors, bitdepth, ColorSpace::Rgb8)
}

pub fn read_ply<R: BufRead>(mut reader: R, opts: LoadOptions) -> Result<PointCloud> {
    let header = read_header(&mut reader)?;
    let raw = match header.format {
        PlyFormat::Ascii => read_ascii(&mut reader, &header)?,
        PlyFormat::BinaryLittleEndian => read_binary(&mut reader, &header)?,
    };
    let opts = LoadOptions {
        bitdepth: opts.bitdepth.or(header.bitdepth),
        ..opts
    };
    build_cloud(raw, opts)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    load_ply_with(path, LoadOptions::default())
}

pub fn load_ply_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(BufReader::new(file), opts)
}

pub fn write_ply<W: Write>(pc: &PointCloud, mut w: W, format: PlyFormat) -> std::io::Result<()> {
    let kind = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {kind} 1.0\ncomment bitdepth {}\nelement vertex {}\n\
         property int x\nproperty int y\nproperty int z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        pc.bitdepth(),
        pc.len()
    )?;
    for (g, c) in pc.geometry().iter().zip(pc.colors()) {
        let rgb = c.map(|v| v as u8);
        match format {
            PlyFormat::Ascii => writeln!(
                w,
                "{} {} {} {} {} {}",
                g[0], g[1], g[2], rgb[0], rgb[1], rgb[2]
            )?,
            PlyFormat::BinaryLittleEndian => {
                for v in g {
                    w.write_all(&(*v as i32).to_le_bytes())?;
                }
                w.write_all(&rgb)?;
            }
        }
    }
    w.flush()
}

/// Writes an RGB8 cloud; YUV clouds must be converted first.
pub fn save_ply(pc: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    pc.expect_colorspace(ColorSpace::Rgb8)?;
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(pc, BufWriter::new(file), format).map_err(|e| Error::io(path, e))
}

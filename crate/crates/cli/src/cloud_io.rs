//! Point-cloud file formats: PLY (ASCII and binary little-endian) and plain
//! XYZ text.
//!
//! Only the `x`, `y`, `z` properties of the `vertex` element are read; other
//! properties and elements are skipped. Big-endian PLY is rejected.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hsaicp::{Point3, PointCloud};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    PlyBinaryLe,
    Xyz,
}

impl CloudFormat {
    /// `.xyz`/`.txt` map to XYZ, everything else to ASCII PLY.
    pub fn from_extension(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
        {
            Some(e) if e == "xyz" || e == "txt" => CloudFormat::Xyz,
            _ => CloudFormat::PlyAscii,
        }
    }
}

/// Where in a file a problem was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Offset(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Offset(n) => write!(f, "byte offset {n}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("{path}: {location}: {message}")]
    Parse {
        path: PathBuf,
        location: Location,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Cloud {
        path: PathBuf,
        #[source]
        source: hsaicp::Error,
    },
}

impl CloudError {
    pub fn location(&self) -> Option<Location> {
        match self {
            CloudError::Parse { location, .. } => Some(*location),
            _ => None,
        }
    }
}

/// Parse failure without a path attached yet.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseFailure {
    pub location: Location,
    pub message: String,
}

fn fail<T>(location: Location, message: impl Into<String>) -> Result<T, ParseFailure> {
    Err(ParseFailure {
        location,
        message: message.into(),
    })
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud, CloudError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CloudError::Io {
        path: path.to_owned(),
        source,
    })?;
    let is_ply = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    let parsed = if is_ply {
        parse_ply(&bytes)
    } else {
        parse_cloud(&bytes)
    };
    let points = parsed.map_err(|f| CloudError::Parse {
        path: path.to_owned(),
        location: f.location,
        message: f.message,
    })?;
    PointCloud::new(points).map_err(|source| CloudError::Cloud {
        path: path.to_owned(),
        source,
    })
}

/// Detects PLY by its magic line, otherwise reads XYZ. `load_cloud` also
/// treats any `.ply` file as PLY.
pub fn parse_cloud(bytes: &[u8]) -> Result<Vec<Point3>, ParseFailure> {
    if bytes.starts_with(b"ply\n") || bytes.starts_with(b"ply\r\n") {
        parse_ply(bytes)
    } else if bytes.starts_with(b"ply") {
        fail(Location::Line(1), "malformed PLY magic line")
    } else {
        parse_xyz(bytes)
    }
}

pub fn parse_xyz(bytes: &[u8]) -> Result<Vec<Point3>, ParseFailure> {
    let text = std::str::from_utf8(bytes)
        .or_else(|e| fail(Location::Offset(e.valid_up_to()), "invalid UTF-8"))?;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return fail(
                Location::Line(line_no),
                format!("expected 3 coordinates, found {}", fields.len()),
            );
        }
        let mut c = [0.0; 3];
        for (k, tok) in fields[..3].iter().enumerate() {
            c[k] = parse_finite(tok).or_else(|m| fail(Location::Line(line_no), m))?;
        }
        points.push(Point3::new(c[0], c[1], c[2]));
    }
    if points.is_empty() {
        return fail(Location::Line(1), "no points");
    }
    Ok(points)
}

fn parse_finite(tok: &str) -> Result<f64, String> {
    let v: f64 = tok.parse().map_err(|_| format!("invalid number '{tok}'"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value '{tok}'"));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
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
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body: usize,
    /// Line number of the first body line.
    body_line: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, ParseFailure> {
    let mut offset = 0;
    let mut line_no = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line_no += 1;
        let Some(len) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return fail(Location::Line(line_no), "header ends without end_header");
        };
        let raw = &bytes[offset..offset + len];
        offset += len + 1;
        let line = std::str::from_utf8(raw)
            .or_else(|_| fail(Location::Line(line_no), "header is not valid text"))?
            .trim_end_matches('\r')
            .trim();
        let mut words = line.split_whitespace();
        let keyword = words.next().unwrap_or("");
        let rest: Vec<&str> = words.collect();
        let here = Location::Line(line_no);
        match keyword {
            "ply" if line_no == 1 => {}
            _ if line_no == 1 => return fail(here, "missing 'ply' magic line"),
            "format" => {
                if rest.len() != 2 || rest[1] != "1.0" {
                    return fail(here, format!("unsupported format line '{line}'"));
                }
                encoding = Some(match rest[0] {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLe,
                    "binary_big_endian" => return fail(here, "big-endian PLY is not supported"),
                    other => return fail(here, format!("unknown PLY encoding '{other}'")),
                });
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let [name, count] = rest[..] else {
                    return fail(here, "element line needs a name and a count");
                };
                let count = count
                    .parse()
                    .or_else(|_| fail(here, format!("invalid element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let Some(element) = elements.last_mut() else {
                    return fail(here, "property declared before any element");
                };
                let property = match rest[..] {
                    ["list", count, item, _name] => {
                        match (Scalar::parse(count), Scalar::parse(item)) {
                            (Some(count), Some(item)) => Property::List { count, item },
                            _ => return fail(here, format!("unknown list types in '{line}'")),
                        }
                    }
                    [ty, name] => match Scalar::parse(ty) {
                        Some(ty) => Property::Scalar {
                            name: name.to_string(),
                            ty,
                        },
                        None => return fail(here, format!("unknown property type '{ty}'")),
                    },
                    _ => return fail(here, format!("malformed property line '{line}'")),
                };
                element.properties.push(property);
            }
            "end_header" => break,
            other => return fail(here, format!("unexpected header keyword '{other}'")),
        }
    }
    let Some(encoding) = encoding else {
        return fail(Location::Line(2), "missing format line");
    };
    Ok(Header {
        encoding,
        elements,
        body: offset,
        body_line: line_no + 1,
    })
}

/// Positions of x, y, z among the vertex properties.
fn xyz_slots(element: &Element) -> Result<[usize; 3], String> {
    let mut slots = [usize::MAX; 3];
    for (k, p) in element.properties.iter().enumerate() {
        if let Property::Scalar { name, .. } = p {
            match name.as_str() {
                "x" => slots[0] = k,
                "y" => slots[1] = k,
                "z" => slots[2] = k,
                _ => {}
            }
        }
    }
    for (slot, axis) in slots.iter().zip(["x", "y", "z"]) {
        if *slot == usize::MAX {
            return Err(format!("vertex element has no scalar '{axis}' property"));
        }
    }
    Ok(slots)
}

pub fn parse_ply(bytes: &[u8]) -> Result<Vec<Point3>, ParseFailure> {
    let header = parse_header(bytes)?;
    let Some(vertex) = header.elements.iter().find(|e| e.name == "vertex") else {
        return fail(
            Location::Line(header.body_line - 1),
            "no vertex element declared",
        );
    };
    let slots = xyz_slots(vertex).or_else(|m| fail(Location::Line(header.body_line - 1), m))?;
    if vertex.count == 0 {
        return fail(
            Location::Line(header.body_line - 1),
            "vertex element is empty",
        );
    }
    match header.encoding {
        Encoding::Ascii => parse_ply_ascii(bytes, &header, slots),
        Encoding::BinaryLe => parse_ply_binary(bytes, &header, slots),
    }
}

fn parse_ply_ascii(
    bytes: &[u8],
    header: &Header,
    slots: [usize; 3],
) -> Result<Vec<Point3>, ParseFailure> {
    let text = std::str::from_utf8(&bytes[header.body..]).or_else(|e| {
        fail(
            Location::Offset(header.body + e.valid_up_to()),
            "invalid UTF-8 in body",
        )
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (header.body_line + i, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut points = Vec::new();
    let mut last_line = header.body_line - 1;
    for element in &header.elements {
        for record in 0..element.count {
            let Some((line_no, line)) = lines.next() else {
                return fail(
                    Location::Line(last_line + 1),
                    format!(
                        "expected {} '{}' records, found {record}",
                        element.count, element.name
                    ),
                );
            };
            last_line = line_no;
            let here = Location::Line(line_no);
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let mut values = Vec::with_capacity(element.properties.len());
            let mut t = 0;
            for p in &element.properties {
                let next = |t: usize| {
                    tokens
                        .get(t)
                        .copied()
                        .ok_or_else(|| "record has too few values".to_string())
                };
                match p {
                    Property::Scalar { .. } => {
                        let tok = next(t).or_else(|m| fail(here, m))?;
                        values.push(parse_finite(tok).or_else(|m| fail(here, m))?);
                        t += 1;
                    }
                    Property::List { .. } => {
                        let tok = next(t).or_else(|m| fail(here, m))?;
                        let n: usize = tok
                            .parse()
                            .or_else(|_| fail(here, format!("invalid list length '{tok}'")))?;
                        values.push(f64::NAN);
                        t += 1 + n;
                    }
                }
            }
            if t != tokens.len() {
                return fail(
                    here,
                    format!("record has {} values, expected {t}", tokens.len()),
                );
            }
            if element.name == "vertex" {
                points.push(Point3::new(
                    values[slots[0]],
                    values[slots[1]],
                    values[slots[2]],
                ));
            }
        }
    }
    if let Some((line_no, _)) = lines.next() {
        return fail(
            Location::Line(line_no),
            "data after the last declared element",
        );
    }
    Ok(points)
}

fn parse_ply_binary(
    bytes: &[u8],
    header: &Header,
    slots: [usize; 3],
) -> Result<Vec<Point3>, ParseFailure> {
    let mut pos = header.body;
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8], ParseFailure> {
        if *pos + n > bytes.len() {
            return fail(
                Location::Offset(*pos),
                format!("file truncated while reading {what}"),
            );
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let mut points = Vec::new();
    for element in &header.elements {
        for _ in 0..element.count {
            let start = pos;
            let mut values = Vec::with_capacity(element.properties.len());
            for p in &element.properties {
                match p {
                    Property::Scalar { ty, .. } => {
                        let b = take(&mut pos, ty.size(), &element.name)?;
                        values.push(ty.read_le(b));
                    }
                    Property::List { count, item } => {
                        let b = take(&mut pos, count.size(), &element.name)?;
                        let n = count.read_le(b);
                        if !(n >= 0.0) {
                            return fail(
                                Location::Offset(pos - count.size()),
                                "negative list length",
                            );
                        }
                        take(&mut pos, n as usize * item.size(), &element.name)?;
                        values.push(f64::NAN);
                    }
                }
            }
            if element.name == "vertex" {
                let p = Point3::new(values[slots[0]], values[slots[1]], values[slots[2]]);
                if !p.coords.iter().all(|c| c.is_finite()) {
                    return fail(Location::Offset(start), "non-finite vertex coordinate");
                }
                points.push(p);
            }
        }
    }
    Ok(points)
}

/// Serializes a cloud. ASCII formats print 17 significant digits, enough to
/// round-trip every `f64`.
pub fn encode_cloud(cloud: &PointCloud, format: CloudFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let header = |out: &mut Vec<u8>, encoding: &str| {
        let _ = write!(
            out,
            "ply\nformat {encoding} 1.0\ncomment written by hsa-icp\nelement vertex {}\n\
             property double x\nproperty double y\nproperty double z\nend_header\n",
            cloud.len()
        );
    };
    match format {
        CloudFormat::PlyAscii => {
            header(&mut out, "ascii");
            for p in cloud.iter() {
                let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z);
            }
        }
        CloudFormat::PlyBinaryLe => {
            header(&mut out, "binary_little_endian");
            for p in cloud.iter() {
                for c in [p.x, p.y, p.z] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        CloudFormat::Xyz => {
            for p in cloud.iter() {
                let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z);
            }
        }
    }
    out
}

pub fn write_cloud(
    cloud: &PointCloud,
    path: impl AsRef<Path>,
    format: CloudFormat,
) -> Result<(), CloudError> {
    let path = path.as_ref();
    fs::write(path, encode_cloud(cloud, format)).map_err(|source| CloudError::Io {
        path: path.to_owned(),
        source,
    })
}

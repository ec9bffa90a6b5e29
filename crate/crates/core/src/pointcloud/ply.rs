//! PLY reader/writer for vertex-only clouds.
//!
//! Reads `ascii`, `binary_little_endian` and `binary_big_endian` bodies with
//! scalar vertex properties; `x y z` may be float or double, colors must be
//! `uchar`. Extra scalar properties and extra scalar-only elements are skipped.
//! List properties are rejected. A `comment frame <label>` header line carries
//! the cloud's frame label.
//!
//! Writes `x y z` as float32 and `red green blue` as uchar.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};

use super::{CloudError, ColoredPoint, ColoredPointCloud, PlyEncoding};

const DEFAULT_COLOR: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Body {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read<B: ByteOrder>(self, buf: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => f64::from(buf[0] as i8),
            ScalarType::U8 => f64::from(buf[0]),
            ScalarType::I16 => f64::from(B::read_i16(buf)),
            ScalarType::U16 => f64::from(B::read_u16(buf)),
            ScalarType::I32 => f64::from(B::read_i32(buf)),
            ScalarType::U32 => f64::from(B::read_u32(buf)),
            ScalarType::F32 => f64::from(B::read_f32(buf)),
            ScalarType::F64 => B::read_f64(buf),
        }
    }
}

#[derive(Debug)]
struct Property {
    name: String,
    ty: ScalarType,
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

impl Element {
    fn stride(&self) -> usize {
        self.props.iter().map(|p| p.ty.size()).sum()
    }
}

struct Header {
    body: Body,
    elements: Vec<Element>,
    frame_label: Option<String>,
    /// Byte offset of the body.
    data_start: usize,
    /// 1-based line number of the first body line (ASCII).
    data_line: usize,
}

fn parse_err(line: usize, msg: impl Into<String>) -> CloudError {
    CloudError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, CloudError> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut body = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut frame_label = None;
    loop {
        line_no += 1;
        let Some(rel_end) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(parse_err(line_no, "missing end_header"));
        };
        let raw = &bytes[pos..pos + rel_end];
        pos += rel_end + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| parse_err(line_no, "header is not valid text"))?
            .trim_end_matches('\r');
        if line_no == 1 {
            if line.trim() != "ply" {
                return Err(parse_err(1, "missing 'ply' magic"));
            }
            continue;
        }
        let mut tokens = line.split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        match keyword {
            "format" => {
                let kind = tokens.next().unwrap_or_default();
                let version = tokens.next().unwrap_or_default();
                if version != "1.0" {
                    return Err(parse_err(line_no, format!("unknown format version '{version}'")));
                }
                body = Some(match kind {
                    "ascii" => Body::Ascii,
                    "binary_little_endian" => Body::BinaryLe,
                    "binary_big_endian" => Body::BinaryBe,
                    other => return Err(parse_err(line_no, format!("unknown format '{other}'"))),
                });
            }
            "comment" => {
                let rest = line.trim_start()["comment".len()..].trim();
                if let Some(label) = rest.strip_prefix("frame ") {
                    frame_label = Some(label.trim().to_string());
                }
            }
            "obj_info" => {}
            "element" => {
                let name = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_no, "element without name"))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(line_no, "element count is not a number"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_no, "property before any element"))?;
                let ty_name = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_no, "property without type"))?;
                if ty_name == "list" {
                    return Err(CloudError::UnsupportedProperty(line.trim().to_string()));
                }
                let name = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_no, "property without name"))?;
                let ty = ScalarType::parse(ty_name).ok_or_else(|| {
                    CloudError::UnsupportedProperty(format!("{ty_name} {name}"))
                })?;
                element.props.push(Property {
                    name: name.to_string(),
                    ty,
                });
            }
            "end_header" => {
                let body = body.ok_or_else(|| parse_err(line_no, "missing format line"))?;
                return Ok(Header {
                    body,
                    elements,
                    frame_label,
                    data_start: pos,
                    data_line: line_no + 1,
                });
            }
            other => return Err(parse_err(line_no, format!("unexpected keyword '{other}'"))),
        }
    }
}

/// Column indices of the vertex fields we consume.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(element: &Element) -> Result<VertexLayout, CloudError> {
    let find = |names: &[&str]| {
        element
            .props
            .iter()
            .position(|p| names.contains(&p.name.as_str()))
    };
    let mut xyz = [0usize; 3];
    for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
        let idx = find(&[name]).ok_or_else(|| {
            CloudError::UnsupportedProperty(format!("vertex element lacks '{name}'"))
        })?;
        if !matches!(element.props[idx].ty, ScalarType::F32 | ScalarType::F64) {
            return Err(CloudError::UnsupportedProperty(format!(
                "'{name}' must be float or double"
            )));
        }
        *slot = idx;
    }
    let channels = [
        find(&["red", "diffuse_red"]),
        find(&["green", "diffuse_green"]),
        find(&["blue", "diffuse_blue"]),
    ];
    let rgb = match channels {
        [Some(r), Some(g), Some(b)] => {
            for idx in [r, g, b] {
                if element.props[idx].ty != ScalarType::U8 {
                    return Err(CloudError::UnsupportedProperty(format!(
                        "color channel '{}' must be uchar",
                        element.props[idx].name
                    )));
                }
            }
            Some([r, g, b])
        }
        [None, None, None] => None,
        _ => {
            return Err(CloudError::UnsupportedProperty(
                "partial color channels".into(),
            ))
        }
    };
    Ok(VertexLayout { xyz, rgb })
}

fn make_point(values: &[f64], layout: &VertexLayout, index: usize) -> Result<ColoredPoint, CloudError> {
    let position = layout.xyz.map(|i| values[i]);
    if position.iter().any(|v| !v.is_finite()) {
        return Err(CloudError::InvalidPoint {
            index,
            msg: "non-finite coordinate".into(),
        });
    }
    let color = match layout.rgb {
        Some(idx) => idx.map(|i| values[i] as u8),
        None => DEFAULT_COLOR,
    };
    Ok(ColoredPoint { position, color })
}

pub fn read_ply(path: &Path) -> Result<ColoredPointCloud, CloudError> {
    let bytes = fs::read(path).map_err(|e| CloudError::io(path, e))?;
    parse_ply(&bytes)
}

pub(crate) fn parse_ply(bytes: &[u8]) -> Result<ColoredPointCloud, CloudError> {
    let header = parse_header(bytes)?;
    let Some(vertex_pos) = header.elements.iter().position(|e| e.name == "vertex") else {
        // no vertices at all: valid empty cloud
        return Ok(ColoredPointCloud::new(Vec::new(), header.frame_label));
    };
    let layout = vertex_layout(&header.elements[vertex_pos])?;
    if layout.rgb.is_none() && header.elements[vertex_pos].count > 0 {
        log::warn!("PLY has no color properties; defaulting to white");
    }
    let data = &bytes[header.data_start..];
    let points = match header.body {
        Body::Ascii => read_ascii(data, &header, vertex_pos, &layout)?,
        Body::BinaryLe => read_binary::<LittleEndian>(data, &header, vertex_pos, &layout)?,
        Body::BinaryBe => read_binary::<BigEndian>(data, &header, vertex_pos, &layout)?,
    };
    Ok(ColoredPointCloud::new(points, header.frame_label))
}

fn read_ascii(
    data: &[u8],
    header: &Header,
    vertex_pos: usize,
    layout: &VertexLayout,
) -> Result<Vec<ColoredPoint>, CloudError> {
    let text = std::str::from_utf8(data).map_err(|_| parse_err(header.data_line, "body is not valid text"))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (header.data_line + i, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut points = Vec::new();
    for (ei, element) in header.elements.iter().enumerate() {
        if ei == vertex_pos {
            points.reserve(element.count);
        }
        let mut values = vec![0.0f64; element.props.len()];
        for k in 0..element.count {
            let Some((line_no, line)) = lines.next() else {
                return Err(CloudError::Truncated {
                    expected: element.count,
                    read: k,
                });
            };
            let mut tokens = line.split_whitespace();
            for (slot, prop) in values.iter_mut().zip(&element.props) {
                let tok = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_no, "too few values"))?;
                *slot = parse_scalar(tok, prop.ty)
                    .ok_or_else(|| parse_err(line_no, format!("bad value '{tok}' for '{}'", prop.name)))?;
            }
            if tokens.next().is_some() {
                return Err(parse_err(line_no, "too many values"));
            }
            if ei == vertex_pos {
                points.push(make_point(&values, layout, k)?);
            }
        }
    }
    Ok(points)
}

fn parse_scalar(tok: &str, ty: ScalarType) -> Option<f64> {
    match ty {
        ScalarType::F32 => tok.parse::<f32>().ok().map(f64::from),
        ScalarType::F64 => tok.parse::<f64>().ok(),
        ScalarType::I8 => tok.parse::<i8>().ok().map(f64::from),
        ScalarType::U8 => tok.parse::<u8>().ok().map(f64::from),
        ScalarType::I16 => tok.parse::<i16>().ok().map(f64::from),
        ScalarType::U16 => tok.parse::<u16>().ok().map(f64::from),
        ScalarType::I32 => tok.parse::<i32>().ok().map(f64::from),
        ScalarType::U32 => tok.parse::<u32>().ok().map(f64::from),
    }
}

fn read_binary<B: ByteOrder>(
    data: &[u8],
    header: &Header,
    vertex_pos: usize,
    layout: &VertexLayout,
) -> Result<Vec<ColoredPoint>, CloudError> {
    let mut offset = 0usize;
    let mut points = Vec::new();
    for (ei, element) in header.elements.iter().enumerate() {
        let stride = element.stride();
        let needed = stride
            .checked_mul(element.count)
            .ok_or_else(|| parse_err(header.data_line, "element too large"))?;
        if data.len() < offset + needed {
            return Err(CloudError::Truncated {
                expected: element.count,
                read: (data.len().saturating_sub(offset)) / stride.max(1),
            });
        }
        if ei == vertex_pos {
            points.reserve(element.count);
            let mut values = vec![0.0f64; element.props.len()];
            for k in 0..element.count {
                let mut at = offset + k * stride;
                for (slot, prop) in values.iter_mut().zip(&element.props) {
                    *slot = prop.ty.read::<B>(&data[at..]);
                    at += prop.ty.size();
                }
                points.push(make_point(&values, layout, k)?);
            }
        }
        offset += needed;
    }
    Ok(points)
}

pub fn write_ply(
    cloud: &ColoredPointCloud,
    path: &Path,
    encoding: PlyEncoding,
) -> Result<(), CloudError> {
    let file = fs::File::create(path).map_err(|e| CloudError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply_to(cloud, &mut w, encoding).map_err(|e| CloudError::io(path, e))?;
    w.flush().map_err(|e| CloudError::io(path, e))
}

pub fn write_ply_to<W: Write>(
    cloud: &ColoredPointCloud,
    w: &mut W,
    encoding: PlyEncoding,
) -> std::io::Result<()> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {format} 1.0")?;
    if let Some(label) = cloud.frame_label() {
        let label: String = label.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
        writeln!(w, "comment frame {}", label.trim())?;
    }
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    for channel in ["red", "green", "blue"] {
        writeln!(w, "property uchar {channel}")?;
    }
    writeln!(w, "end_header")?;
    match encoding {
        PlyEncoding::Ascii => {
            for p in cloud.points() {
                let [x, y, z] = p.position.map(|v| v as f32);
                let [r, g, b] = p.color;
                writeln!(w, "{x} {y} {z} {r} {g} {b}")?;
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            for p in cloud.points() {
                for v in p.position {
                    w.write_f32::<LittleEndian>(v as f32)?;
                }
                w.write_all(&p.color)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ASCII3: &str = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 1 2 3\n1.5 -2 0.25 200 50 10\n3 4 5 255 255 255\n";

    #[test]
    fn ascii_three_vertices_in_order() {
        let c = parse_ply(ASCII3.as_bytes()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.points()[1].position, [1.5, -2.0, 0.25]);
        assert_eq!(c.points()[1].color, [200, 50, 10]);
        assert_eq!(c.points()[2].position, [3.0, 4.0, 5.0]);
    }

    #[test]
    fn missing_color_defaults_to_white() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n1 2 3\n";
        let c = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(c.points()[0].color, [255, 255, 255]);
    }

    #[test]
    fn malformed_header_reports_line() {
        let text = "ply\nformat ascii 1.0\nelement vertex three\nend_header\n";
        let err = parse_ply(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("parse error at line 3"), "{err}");
        let err = parse_ply(b"plx\n").unwrap_err();
        assert!(err.to_string().starts_with("parse error at line 1"));
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2\n";
        let err = parse_ply(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("parse error at line 8"), "{err}");
    }

    #[test]
    fn unsupported_properties() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty list uchar int idx\nend_header\n";
        let err = parse_ply(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("unsupported property"), "{err}");
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float128 x\nend_header\n";
        assert!(matches!(
            parse_ply(text.as_bytes()),
            Err(CloudError::UnsupportedProperty(_))
        ));
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty float red\nproperty float green\nproperty float blue\nend_header\n";
        assert!(matches!(
            parse_ply(text.as_bytes()),
            Err(CloudError::UnsupportedProperty(_))
        ));
    }

    #[test]
    fn zero_vertices_is_empty_cloud() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        assert!(parse_ply(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn truncated_binary_is_an_error() {
        let c = ColoredPointCloud::new(
            vec![ColoredPoint::new([1.0, 2.0, 3.0], [4, 5, 6]).unwrap(); 4],
            None,
        );
        let mut buf = Vec::new();
        write_ply_to(&c, &mut buf, PlyEncoding::BinaryLittleEndian).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(parse_ply(&buf), Err(CloudError::Truncated { .. })));
    }

    #[test]
    fn skips_extra_scalar_properties_and_elements() {
        let text = "ply\nformat ascii 1.0\ncomment frame camera:B\nelement vertex 2\nproperty float x\nproperty float nx\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar alpha\nelement extra 1\nproperty int v\nend_header\n1 9 2 3 10 20 30 255\n4 9 5 6 40 50 60 255\n7\n";
        let c = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(c.frame_label(), Some("camera:B"));
        assert_eq!(c.points()[1].position, [4.0, 5.0, 6.0]);
        assert_eq!(c.points()[1].color, [40, 50, 60]);
    }

    #[test]
    fn single_point_roundtrip_both_encodings() {
        let c = ColoredPointCloud::new(
            vec![ColoredPoint::new([1.5, -2.0, 0.25], [200, 50, 10]).unwrap()],
            Some("base".into()),
        );
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let mut buf = Vec::new();
            write_ply_to(&c, &mut buf, enc).unwrap();
            assert_eq!(parse_ply(&buf).unwrap(), c);
        }
    }

    #[test]
    fn empty_cloud_writes_zero_count() {
        let c = ColoredPointCloud::default();
        let mut buf = Vec::new();
        write_ply_to(&c, &mut buf, PlyEncoding::Ascii).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("element vertex 0\n"));
        assert!(parse_ply(&buf).unwrap().is_empty());
    }
}

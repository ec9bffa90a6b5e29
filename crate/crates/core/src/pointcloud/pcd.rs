//! Read-only PCD (v0.7) support: `ascii` and `binary` bodies with `x y z`
//! and an optional packed `rgb`/`rgba` field. Other fields are skipped.
//! Points with non-finite coordinates (organized-cloud holes) are dropped.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::{CloudError, ColoredPoint, ColoredPointCloud};

#[derive(Debug, Clone)]
struct Field {
    name: String,
    size: usize,
    ty: char,
    count: usize,
}

impl Field {
    fn bytes(&self) -> usize {
        self.size * self.count
    }

    fn read_le(&self, buf: &[u8]) -> Option<f64> {
        Some(match (self.ty, self.size) {
            ('F', 4) => f64::from(LittleEndian::read_f32(buf)),
            ('F', 8) => LittleEndian::read_f64(buf),
            ('U', 1) => f64::from(buf[0]),
            ('U', 2) => f64::from(LittleEndian::read_u16(buf)),
            ('U', 4) => f64::from(LittleEndian::read_u32(buf)),
            ('I', 1) => f64::from(buf[0] as i8),
            ('I', 2) => f64::from(LittleEndian::read_i16(buf)),
            ('I', 4) => f64::from(LittleEndian::read_i32(buf)),
            _ => return None,
        })
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> CloudError {
    CloudError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Unpacks the 0x00RRGGBB layout.
fn unpack_rgb(bits: u32) -> [u8; 3] {
    [(bits >> 16) as u8, (bits >> 8) as u8, bits as u8]
}

pub fn read_pcd(path: &Path) -> Result<ColoredPointCloud, CloudError> {
    let bytes = fs::read(path).map_err(|e| CloudError::io(path, e))?;
    parse_pcd(&bytes)
}

pub(crate) fn parse_pcd(bytes: &[u8]) -> Result<ColoredPointCloud, CloudError> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut names: Vec<String> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut types: Vec<char> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut points_decl: Option<usize> = None;
    let mut width_height = (None::<usize>, None::<usize>);
    let data_kind;
    loop {
        line_no += 1;
        let Some(rel_end) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(parse_err(line_no, "missing DATA line"));
        };
        let line = std::str::from_utf8(&bytes[pos..pos + rel_end])
            .map_err(|_| parse_err(line_no, "header is not valid text"))?
            .trim();
        pos += rel_end + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let key = tokens.next().unwrap_or_default();
        let rest: Vec<&str> = tokens.collect();
        let usizes = |rest: &[&str]| -> Result<Vec<usize>, CloudError> {
            rest.iter()
                .map(|t| t.parse::<usize>().map_err(|_| parse_err(line_no, format!("bad number '{t}'"))))
                .collect()
        };
        match key {
            "VERSION" => {
                let v = rest.first().copied().unwrap_or_default();
                if v != "0.7" && v != ".7" {
                    return Err(CloudError::UnsupportedFormat(format!("PCD version {v}")));
                }
            }
            "FIELDS" => names = rest.iter().map(|s| s.to_string()).collect(),
            "SIZE" => sizes = usizes(&rest)?,
            "TYPE" => {
                types = rest
                    .iter()
                    .map(|t| match *t {
                        "F" | "U" | "I" => Ok(t.chars().next().unwrap()),
                        _ => Err(CloudError::UnsupportedProperty(format!("PCD type '{t}'"))),
                    })
                    .collect::<Result<_, _>>()?
            }
            "COUNT" => counts = usizes(&rest)?,
            "WIDTH" => width_height.0 = usizes(&rest)?.first().copied(),
            "HEIGHT" => width_height.1 = usizes(&rest)?.first().copied(),
            "VIEWPOINT" => {}
            "POINTS" => points_decl = usizes(&rest)?.first().copied(),
            "DATA" => {
                data_kind = rest.first().copied().unwrap_or_default().to_string();
                break;
            }
            other => return Err(parse_err(line_no, format!("unexpected keyword '{other}'"))),
        }
    }
    if counts.is_empty() {
        counts = vec![1; names.len()];
    }
    if names.is_empty() || sizes.len() != names.len() || types.len() != names.len() || counts.len() != names.len() {
        return Err(parse_err(line_no, "FIELDS/SIZE/TYPE/COUNT lengths disagree"));
    }
    let fields: Vec<Field> = (0..names.len())
        .map(|i| Field {
            name: names[i].clone(),
            size: sizes[i],
            ty: types[i],
            count: counts[i],
        })
        .collect();
    let n_points = match (points_decl, width_height) {
        (Some(n), _) => n,
        (None, (Some(w), Some(h))) => w * h,
        _ => return Err(parse_err(line_no, "missing POINTS")),
    };
    let index_of = |name: &str| fields.iter().position(|f| f.name == name);
    let xyz = ["x", "y", "z"].map(index_of);
    let [Some(ix), Some(iy), Some(iz)] = xyz else {
        return Err(CloudError::UnsupportedProperty("PCD needs x y z fields".into()));
    };
    for i in [ix, iy, iz] {
        if fields[i].ty != 'F' || fields[i].count != 1 {
            return Err(CloudError::UnsupportedProperty(format!(
                "'{}' must be a single float",
                fields[i].name
            )));
        }
    }
    let rgb_idx = index_of("rgb").or_else(|| index_of("rgba"));
    if let Some(i) = rgb_idx {
        if fields[i].size != 4 || fields[i].count != 1 {
            return Err(CloudError::UnsupportedProperty("rgb must be one 4-byte value".into()));
        }
    } else if n_points > 0 {
        log::warn!("PCD has no rgb field; defaulting to white");
    }
    let data_line = line_no + 1;
    let body = &bytes[pos..];
    let mut points = Vec::with_capacity(n_points);
    let mut push = |xyz: [f64; 3], color: [u8; 3]| {
        if xyz.iter().all(|v| v.is_finite()) {
            points.push(ColoredPoint {
                position: xyz,
                color,
            });
        }
    };
    match data_kind.as_str() {
        "ascii" => {
            let text = std::str::from_utf8(body).map_err(|_| parse_err(data_line, "body is not valid text"))?;
            let mut lines = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty());
            let columns: usize = fields.iter().map(|f| f.count).sum();
            let starts: Vec<usize> = fields
                .iter()
                .scan(0, |acc, f| {
                    let s = *acc;
                    *acc += f.count;
                    Some(s)
                })
                .collect();
            for k in 0..n_points {
                let Some((i, line)) = lines.next() else {
                    return Err(CloudError::Truncated {
                        expected: n_points,
                        read: k,
                    });
                };
                let ln = data_line + i;
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != columns {
                    return Err(parse_err(ln, format!("expected {columns} values, found {}", toks.len())));
                }
                let coord = |fi: usize| -> Result<f64, CloudError> {
                    let t = toks[starts[fi]];
                    if t.eq_ignore_ascii_case("nan") {
                        return Ok(f64::NAN);
                    }
                    let v = if fields[fi].size == 4 {
                        t.parse::<f32>().map(f64::from)
                    } else {
                        t.parse::<f64>()
                    };
                    v.map_err(|_| parse_err(ln, format!("bad value '{t}'")))
                };
                let p = [coord(ix)?, coord(iy)?, coord(iz)?];
                let color = match rgb_idx {
                    Some(fi) => {
                        let t = toks[starts[fi]];
                        let bits = match fields[fi].ty {
                            'F' => t
                                .parse::<f32>()
                                .map(f32::to_bits)
                                .map_err(|_| parse_err(ln, format!("bad rgb '{t}'")))?,
                            _ => t
                                .parse::<u32>()
                                .map_err(|_| parse_err(ln, format!("bad rgb '{t}'")))?,
                        };
                        unpack_rgb(bits)
                    }
                    None => [255, 255, 255],
                };
                push(p, color);
            }
        }
        "binary" => {
            let stride: usize = fields.iter().map(Field::bytes).sum();
            if body.len() < stride * n_points {
                return Err(CloudError::Truncated {
                    expected: n_points,
                    read: body.len() / stride.max(1),
                });
            }
            let offsets: Vec<usize> = fields
                .iter()
                .scan(0, |acc, f| {
                    let s = *acc;
                    *acc += f.bytes();
                    Some(s)
                })
                .collect();
            for k in 0..n_points {
                let rec = &body[k * stride..(k + 1) * stride];
                let read = |fi: usize| {
                    fields[fi]
                        .read_le(&rec[offsets[fi]..])
                        .ok_or_else(|| CloudError::UnsupportedProperty(format!("field '{}'", fields[fi].name)))
                };
                let p = [read(ix)?, read(iy)?, read(iz)?];
                let color = match rgb_idx {
                    Some(fi) => unpack_rgb(LittleEndian::read_u32(&rec[offsets[fi]..])),
                    None => [255, 255, 255],
                };
                push(p, color);
            }
        }
        other => return Err(CloudError::UnsupportedFormat(format!("PCD DATA {other}"))),
    }
    Ok(ColoredPointCloud::new(points, None))
}

//! Binary little-endian PLY in the layout written by Gaussian splatting
//! trainers: per vertex `x y z`, `f_dc_0..2`, optional `f_rest_*`, `opacity`,
//! `scale_0..2`, `rot_0..3`, all stored pre-activation.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::scene::{Gaussian, SceneModel, SceneSource};
use super::sh::SH_COEFFS;
use super::SplatError;
use crate::geometry::Rotation;

/// Opacity is clamped into `[OPACITY_EPS, 1 - OPACITY_EPS]` after the sigmoid.
const OPACITY_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, ScalarType)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.props.iter().map(|(_, t)| t.size()).sum()
    }
}

fn malformed(msg: impl Into<String>) -> SplatError {
    SplatError::MalformedHeader(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<(Vec<Element>, usize), SplatError> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| malformed("missing end_header"))?
        + END.len();
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| malformed("header is not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(malformed("missing 'ply' magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] | ["end_header"] => {}
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => {
                return Err(malformed(format!("unsupported format '{other}'")));
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| malformed(format!("bad element count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => {
                return Err(malformed("list properties are not supported"));
            }
            ["property", ty, name] => {
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| malformed(format!("unknown property type '{ty}'")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before any element"))?
                    .props
                    .push((name.to_string(), ty));
            }
            _ => return Err(malformed(format!("unrecognised header line '{line}'"))),
        }
    }
    if !format_ok {
        return Err(malformed("missing format line"));
    }
    Ok((elements, end))
}

/// Loads a scene, applying activations (`exp` on scale, sigmoid on opacity,
/// quaternion normalization). Records with non-finite values or a zero
/// quaternion are culled; more than half culled is an error.
pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneModel, SplatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SplatError::Io(path.display().to_string(), e))?;
    let (elements, mut offset) = parse_header(&bytes)?;

    let mut vertex = None;
    for el in &elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        offset += el.count * el.stride();
    }
    let vertex = vertex.ok_or_else(|| malformed("no vertex element"))?;

    let mut index: HashMap<&str, (usize, ScalarType)> = HashMap::new();
    let mut at = 0;
    for (name, ty) in &vertex.props {
        index.insert(name.as_str(), (at, *ty));
        at += ty.size();
    }
    let stride = at;
    let field = |name: &str| -> Result<(usize, ScalarType), SplatError> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| SplatError::MissingField(name.to_string()))
    };
    let pos = [field("x")?, field("y")?, field("z")?];
    let dc = [field("f_dc_0")?, field("f_dc_1")?, field("f_dc_2")?];
    let opacity = field("opacity")?;
    let scale = [field("scale_0")?, field("scale_1")?, field("scale_2")?];
    let rot = [
        field("rot_0")?,
        field("rot_1")?,
        field("rot_2")?,
        field("rot_3")?,
    ];
    let n_rest = (0..).take_while(|i| index.contains_key(format!("f_rest_{i}").as_str())).count();
    let per_channel = n_rest / 3;
    if n_rest % 3 != 0 || ![0, 3, 8, 15].contains(&per_channel) {
        return Err(malformed(format!("unsupported f_rest count {n_rest}")));
    }
    let rest: Vec<(usize, ScalarType)> = (0..n_rest)
        .map(|i| field(&format!("f_rest_{i}")))
        .collect::<Result<_, _>>()?;

    let needed = offset + vertex.count * stride;
    if bytes.len() < needed {
        return Err(SplatError::Truncated {
            expected: needed,
            actual: bytes.len(),
        });
    }

    let mut gaussians = Vec::with_capacity(vertex.count);
    let mut culled = 0;
    for i in 0..vertex.count {
        let rec = &bytes[offset + i * stride..offset + (i + 1) * stride];
        let get = |(at, ty): (usize, ScalarType)| ty.read(&rec[at..]);
        let mut sh = [[0.0; 3]; SH_COEFFS];
        for c in 0..3 {
            sh[0][c] = get(dc[c]);
            for k in 0..per_channel {
                sh[k + 1][c] = get(rest[c * per_channel + k]);
            }
        }
        let raw_opacity = get(opacity);
        let q = rot.map(get);
        let position = Vector3::new(get(pos[0]), get(pos[1]), get(pos[2]));
        let raw_scale = Vector3::new(get(scale[0]), get(scale[1]), get(scale[2]));
        let finite = raw_opacity.is_finite()
            && position.iter().chain(raw_scale.iter()).all(|v| v.is_finite())
            && sh.iter().flatten().all(|v| v.is_finite());
        let orientation = Rotation::from_wxyz(q[0], q[1], q[2], q[3]);
        let (true, Ok(orientation)) = (finite, orientation) else {
            culled += 1;
            continue;
        };
        let g = Gaussian {
            position,
            scale: raw_scale.map(f64::exp),
            orientation,
            opacity: sigmoid(raw_opacity).clamp(OPACITY_EPS, 1.0 - OPACITY_EPS),
            sh,
        };
        if !g.is_valid() {
            culled += 1;
            continue;
        }
        gaussians.push(g);
    }
    if culled > 0 {
        log::warn!("{}: culled {culled} of {} records", path.display(), vertex.count);
    }
    if vertex.count > 0 && culled * 2 > vertex.count {
        return Err(SplatError::TooManyCulled {
            culled,
            total: vertex.count,
        });
    }
    SceneModel::with_culled(gaussians, SceneSource::File(path.to_path_buf()), culled)
}

/// Writes a degree-3 scene with activations inverted, as f32.
pub fn save_scene(scene: &SceneModel, path: impl AsRef<Path>) -> Result<(), SplatError> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    let mut names: Vec<String> = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..45).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());

    for g in scene.gaussians() {
        let mut vals: Vec<f64> = Vec::with_capacity(names.len());
        vals.extend(g.position.iter());
        vals.extend((0..3).map(|c| g.sh[0][c]));
        for c in 0..3 {
            vals.extend((1..SH_COEFFS).map(|k| g.sh[k][c]));
        }
        vals.push(logit(g.opacity));
        vals.extend(g.scale.iter().map(|s| s.ln()));
        vals.extend(g.orientation.wxyz());
        for v in vals {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| SplatError::Io(path.display().to_string(), e))?;
    f.write_all(&out)
        .map_err(|e| SplatError::Io(path.display().to_string(), e))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

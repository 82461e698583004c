//! Point cloud and trajectory files.
//!
//! A dataset directory holds `frames/<timestamp>.ply` (sensor-frame points
//! with raw intensities), `poses.txt` (TUM format) and optionally
//! `ground_truth.ply` (world-frame points).

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use thiserror::Error;

use crate::geometry::{Pose, PointCloudFrame, Vec3};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("no pose within {max_skew} s of frame timestamp {timestamp}")]
    NoPose { timestamp: f64, max_skew: f64 },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

/// Vertices of a PLY file, plus faces when it has a `face` element.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyPoints {
    pub points: Vec<Vec3>,
    /// `None` when the file has no `intensity` property.
    pub intensities: Option<Vec<f64>>,
    /// Polygons fan-triangulated; empty for point clouds.
    pub triangles: Vec<[u32; 3]>,
}

/// Reads an ASCII or binary little-endian PLY. Uses `x`, `y`, `z` and, if
/// present, `intensity` of the `vertex` element and the first list property
/// of the `face` element; everything else is skipped.
pub fn read_ply_points(path: &Path) -> Result<PlyPoints, IoError> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(file_err(path))?;
    parse_ply_points(&bytes).map_err(|m| parse_err(path, m))
}

type Property = (String, Scalar, Option<Scalar>);

enum Body<'a> {
    Ascii(std::str::SplitWhitespace<'a>),
    Binary(&'a [u8], usize),
}

impl Body<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64, String> {
        match self {
            Body::Ascii(it) => {
                let t = it.next().ok_or("unexpected end of data")?;
                t.parse().map_err(|_| format!("bad number '{t}'"))
            }
            Body::Binary(b, off) => {
                let v = b.get(*off..*off + ty.size()).ok_or("truncated data")?;
                *off += ty.size();
                Ok(ty.read_le(v))
            }
        }
    }
}

fn parse_ply_points(bytes: &[u8]) -> Result<PlyPoints, String> {
    let end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or("missing end_header")?;
    let body_start = bytes[end..].iter().position(|&b| b == b'\n').ok_or("truncated header")? + end + 1;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| "header is not UTF-8")?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("not a PLY file".into());
    }
    let mut format = None;
    let mut elements: Vec<(String, usize, Vec<Property>)> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", f, _] => format = Some(f.to_string()),
            ["element", name, count] => {
                elements.push((name.to_string(), count.parse().map_err(|_| format!("bad element count '{count}'"))?, Vec::new()))
            }
            ["property", "list", ct, it, name] => {
                let e = elements.last_mut().ok_or("property before element")?;
                let ct = Scalar::parse(ct).ok_or(format!("unknown type '{ct}'"))?;
                let it = Scalar::parse(it).ok_or(format!("unknown type '{it}'"))?;
                e.2.push((name.to_string(), it, Some(ct)));
            }
            ["property", ty, name] => {
                let e = elements.last_mut().ok_or("property before element")?;
                e.2.push((name.to_string(), Scalar::parse(ty).ok_or(format!("unknown type '{ty}'"))?, None));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(format!("unrecognized header line '{line}'")),
        }
    }
    let mut body = match format.as_deref().ok_or("missing format line")? {
        "ascii" => Body::Ascii(std::str::from_utf8(&bytes[body_start..]).map_err(|_| "body is not UTF-8")?.split_whitespace()),
        "binary_little_endian" => Body::Binary(bytes, body_start),
        f => return Err(format!("unsupported PLY format '{f}'")),
    };
    let vi = elements.iter().position(|e| e.0 == "vertex").ok_or("no vertex element")?;
    let props = &elements[vi].2;
    let col = |n: &str| props.iter().position(|p| p.0 == n && p.2.is_none());
    let (cx, cy, cz) = match (col("x"), col("y"), col("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err("vertex element lacks x, y or z".into()),
    };
    let ci = col("intensity");
    let mut out = PlyPoints {
        intensities: ci.map(|_| Vec::new()),
        ..PlyPoints::default()
    };
    let mut row = Vec::new();
    let mut list = Vec::new();
    for (name, n, eprops) in &elements {
        let first_list = eprops.iter().position(|p| p.2.is_some());
        for _ in 0..*n {
            row.clear();
            list.clear();
            for (k, (_, ty, lt)) in eprops.iter().enumerate() {
                match lt {
                    Some(ct) => {
                        let len = body.next(*ct)?;
                        if !(len >= 0.0 && len.fract() == 0.0) {
                            return Err(format!("bad list length {len}"));
                        }
                        for _ in 0..len as usize {
                            let v = body.next(*ty)?;
                            if Some(k) == first_list {
                                list.push(v);
                            }
                        }
                        row.push(0.0);
                    }
                    None => row.push(body.next(*ty)?),
                }
            }
            if name == "vertex" {
                out.points.push(Vec3::new(row[cx], row[cy], row[cz]));
                if let (Some(c), Some(v)) = (ci, out.intensities.as_mut()) {
                    v.push(row[c]);
                }
            } else if name == "face" && list.len() >= 3 {
                let idx: Vec<u32> = list.iter().map(|v| *v as u32).collect();
                for j in 1..idx.len() - 1 {
                    out.triangles.push([idx[0], idx[j], idx[j + 1]]);
                }
            }
        }
    }
    let nv = out.points.len() as u32;
    if out.triangles.iter().flatten().any(|&i| i >= nv) {
        return Err("face index out of range".into());
    }
    Ok(out)
}

/// Binary little-endian PLY with `double` properties `x y z`, then
/// `intensity` and any `extra` columns.
pub fn write_ply_points(
    path: &Path,
    points: &[Vec3],
    intensities: Option<&[f64]>,
    extra: &[(&str, &[f64])],
) -> Result<(), IoError> {
    let mut buf = Vec::new();
    write!(buf, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", points.len()).unwrap();
    for p in ["x", "y", "z"] {
        writeln!(buf, "property double {p}").unwrap();
    }
    if intensities.is_some() {
        writeln!(buf, "property double intensity").unwrap();
    }
    for (name, col) in extra {
        assert_eq!(col.len(), points.len());
        writeln!(buf, "property double {name}").unwrap();
    }
    buf.extend_from_slice(b"end_header\n");
    for (i, p) in points.iter().enumerate() {
        for v in p.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(it) = intensities {
            buf.extend_from_slice(&it[i].to_le_bytes());
        }
        for (_, col) in extra {
            buf.extend_from_slice(&col[i].to_le_bytes());
        }
    }
    write_file(path, &buf)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    fs::write(path, bytes).map_err(file_err(path))
}

/// Whitespace-separated `x y z intensity` lines; `#` starts a comment.
pub fn read_xyzi(path: &Path) -> Result<(Vec<Vec3>, Vec<f64>), IoError> {
    let f = fs::File::open(path).map_err(file_err(path))?;
    let mut pts = Vec::new();
    let mut its = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(file_err(path))?;
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(path, format!("line {}: not numeric", n + 1)))?;
        if v.len() != 4 {
            return Err(parse_err(path, format!("line {}: expected 4 values, got {}", n + 1, v.len())));
        }
        pts.push(Vec3::new(v[0], v[1], v[2]));
        its.push(v[3]);
    }
    Ok((pts, its))
}

/// Reads `timestamp tx ty tz qx qy qz qw` lines.
pub fn read_tum(path: &Path) -> Result<Vec<(f64, Pose)>, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(path, format!("line {}: not numeric", n + 1)))?;
        if v.len() != 8 {
            return Err(parse_err(path, format!("line {}: expected 8 values, got {}", n + 1, v.len())));
        }
        out.push((v[0], Pose::from_tum([v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]])));
    }
    Ok(out)
}

/// Writes poses with round-trip float formatting.
pub fn write_tum(path: &Path, poses: &[(f64, Pose)]) -> Result<(), IoError> {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in poses {
        let q = p.quat_xyzw();
        let tr = p.translation;
        s.push_str(&format!("{} {} {} {} {} {} {} {}\n", t, tr.x, tr.y, tr.z, q[0], q[1], q[2], q[3]));
    }
    write_file(path, s.as_bytes())
}

/// Pose with the nearest timestamp, if within `max_skew` seconds.
pub fn associate_pose(poses: &[(f64, Pose)], timestamp: f64, max_skew: f64) -> Result<Pose, IoError> {
    poses
        .iter()
        .min_by(|a, b| (a.0 - timestamp).abs().total_cmp(&(b.0 - timestamp).abs()))
        .filter(|(t, _)| (t - timestamp).abs() <= max_skew)
        .map(|(_, p)| *p)
        .ok_or(IoError::NoPose { timestamp, max_skew })
}

pub const FRAMES_DIR: &str = "frames";
pub const POSES_FILE: &str = "poses.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.ply";

/// Writes frames (sensor-frame points, raw intensities) and their poses.
pub fn write_dataset(dir: &Path, frames: &[PointCloudFrame]) -> Result<(), IoError> {
    let fdir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&fdir).map_err(file_err(&fdir))?;
    for f in frames {
        write_ply_points(&fdir.join(format!("{}.ply", f.timestamp)), &f.points, Some(&f.intensities), &[])?;
    }
    let poses: Vec<(f64, Pose)> = frames.iter().map(|f| (f.timestamp, f.sensor_pose)).collect();
    write_tum(&dir.join(POSES_FILE), &poses)
}

/// Loads every `frames/*.ply` (or `*.xyzi`), sorted by the timestamp in the
/// file stem, and attaches the nearest pose.
pub fn read_dataset(dir: &Path, max_skew: f64) -> Result<Vec<PointCloudFrame>, IoError> {
    let poses = read_tum(&dir.join(POSES_FILE))?;
    let fdir = dir.join(FRAMES_DIR);
    let mut entries = Vec::new();
    for e in fs::read_dir(&fdir).map_err(file_err(&fdir))? {
        let p = e.map_err(file_err(&fdir))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext != "ply" && ext != "xyzi" {
            continue;
        }
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        match stem.parse::<f64>() {
            Ok(t) => entries.push((t, p)),
            Err(_) => warn!("skipping {}: file name is not a timestamp", p.display()),
        }
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut frames = Vec::with_capacity(entries.len());
    for (t, p) in entries {
        let (points, intensities) = if p.extension().is_some_and(|e| e == "xyzi") {
            read_xyzi(&p)?
        } else {
            let ply = read_ply_points(&p)?;
            let n = ply.points.len();
            (ply.points, ply.intensities.unwrap_or_else(|| vec![0.0; n]))
        };
        let pose = associate_pose(&poses, t, max_skew)?;
        frames.push(PointCloudFrame::new(t, pose, points, intensities));
    }
    Ok(frames)
}

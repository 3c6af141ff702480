//! File formats: TUM trajectories, FMAP feature maps, binary PGM/PPM images
//! and the small CSV outputs of the CLI.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::correlation::FeatureMap;
use crate::error::{Error, Result};
use crate::eval::Trajectory;
use crate::geometry::Pose;
use crate::image::Image;

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes to a sibling temp file and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- TUM

/// Parses TUM lines `timestamp tx ty tz qx qy qz qw`.
pub fn parse_trajectory(text: &str) -> Result<Trajectory> {
    let mut traj = Trajectory::new();
    let mut last: Option<f64> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let mut v = [0.0f64; 8];
        for (k, f) in fields.iter().enumerate() {
            v[k] = f.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("field {} is not a number: '{f}'", k + 1),
            })?;
            if !v[k].is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("field {} is not finite", k + 1),
                });
            }
        }
        if let Some(prev) = last {
            if !(v[0] > prev) {
                return Err(Error::NonMonotoneTimestamps { line: line_no });
            }
        }
        last = Some(v[0]);
        let pose = Pose::from_components([v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]])
            .map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        traj.push(v[0], pose)?;
    }
    Ok(traj)
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (t, pose) in traj.entries() {
        let p = pose.translation();
        let q = pose.rotation().coords; // (x, y, z, w)
        writeln!(
            out,
            "{:.10} {:.10} {:.10} {:.10} {:.10} {:.10} {:.10} {:.10}",
            t, p.x, p.y, p.z, q.x, q.y, q.z, q.w
        )
        .unwrap();
    }
    // "-0.0000000000" and "0.0000000000" must not differ between runs that
    // reach zero from opposite sides
    out.replace("-0.0000000000", "0.0000000000")
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    parse_trajectory(&text)
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_atomic(path, format_trajectory(traj).as_bytes())
}

// ---------------------------------------------------------------- FMAP

pub fn encode_fmap(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + map.data().len() * 4);
    out.extend_from_slice(FMAP_MAGIC);
    for d in [map.height(), map.width(), map.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fmap(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 4 || &bytes[..4] != FMAP_MAGIC {
        return Err(Error::MagicMismatch {
            expected: "FMAP".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "FMAP header truncated: expected 16 bytes, found {}",
            bytes.len()
        )));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("FMAP dimensions overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "FMAP payload: expected {expected} bytes, found {}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureMap::new(h, w, c, 1, data)
}

pub fn read_fmap(path: &Path) -> Result<FeatureMap> {
    decode_fmap(&read_bytes(path)?)
}

pub fn write_fmap(map: &FeatureMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_fmap(map))
}

// ---------------------------------------------------------------- PNM

/// Encodes as P5 (gray) or P6 (RGB), maxval 255.
pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.to_bytes());
    out
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    // header tokens separated by whitespace, with '#' comments to end of line
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Format("PNM header truncated".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::MagicMismatch {
                expected: "P5 or P6".into(),
                found: other.chars().take(8).collect(),
            })
        }
    };
    let number = |name: &str, pos: &mut usize| -> Result<usize> {
        let t = token(pos)?;
        t.parse()
            .map_err(|_| Error::Format(format!("PNM {name} is not an integer: '{t}'")))
    };
    let width = number("width", &mut pos)?;
    let height = number("height", &mut pos)?;
    let maxval = number("maxval", &mut pos)?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PNM maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("PNM header not terminated".into()));
    }
    pos += 1;
    let expected = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(Error::Format(format!(
            "PNM raster: expected {expected} bytes, found {}",
            raster.len()
        )));
    }
    let data = raster[..expected].iter().map(|&b| b as f32).collect();
    Image::from_data(width, height, channels, data)
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    decode_pnm(&read_bytes(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_pnm(image: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pnm(image))
}

/// Reads a PGM; RGB input is converted to gray.
pub fn read_pgm(path: &Path) -> Result<Image> {
    read_pnm(path).map(|img| img.to_gray())
}

pub fn write_pgm(image: &Image, path: &Path) -> Result<()> {
    write_pnm(&image.to_gray(), path)
}

// ---------------------------------------------------------------- CSV

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut out = String::with_capacity(header.len() + rows.len() * 32);
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

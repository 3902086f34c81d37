//! File formats: binary PGM frames, Middlebury `.flo` flow, PPM flow
//! visualizations and tab-separated tracks, detections and navigation traces.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::detect::{BBox, Detection};
use crate::error::{Error, Result};
use crate::grid::{FlowField, GrayFrame, Vec2};
use crate::gvo::TraceStep;
use crate::trajectory::Track;

/// `.flo` magic, which reads as "PIEH" in ASCII.
pub const FLO_MAGIC: f32 = 202021.25;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Splits a netpbm header into `n` whitespace-separated tokens after the
/// magic, skipping `#` comments. Returns the tokens and the data offset.
fn netpbm_header(bytes: &[u8], magic: &[u8; 2], n: usize) -> Result<(Vec<usize>, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(parse_err(1, format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut tokens = Vec::with_capacity(n);
    while tokens.len() < n {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated("netpbm header".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        tokens.push(text.parse().map_err(|_| parse_err(1, format!("bad header value {text}")))?);
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Truncated("netpbm header".into()));
    }
    Ok((tokens, pos + 1))
}

/// Binary PGM with maxval 255; intensities are rounded from `[0, 1]`.
pub fn write_pgm<W: Write>(frame: &GrayFrame, mut w: W) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", frame.width(), frame.height())?;
    let bytes: Vec<u8> = frame.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn save_pgm(frame: &GrayFrame, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(frame, create(path.as_ref())?)
}

/// Reads 8-bit binary PGM (maxval 1..=255) into `[0, 1]` intensities.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayFrame> {
    let (hdr, offset) = netpbm_header(bytes, b"P5", 3)?;
    let (w, h, maxval) = (hdr[0], hdr[1], hdr[2]);
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(1, format!("unsupported maxval {maxval}")));
    }
    let data = &bytes[offset..];
    if data.len() < w * h {
        return Err(Error::Truncated(format!("PGM data: {} of {} bytes", data.len(), w * h)));
    }
    GrayFrame::new(w, h, data[..w * h].iter().map(|&b| b as f64 / maxval as f64).collect())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayFrame> {
    parse_pgm(&read_all(path.as_ref())?)
}

pub fn write_flo<W: Write>(flow: &FlowField, mut w: W) -> Result<()> {
    let to_i32 = |v: usize| i32::try_from(v).map_err(|_| Error::InvalidParameter(format!("{v} exceeds i32")));
    let mut buf = Vec::with_capacity(12 + flow.vectors().len() * 8);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&to_i32(flow.width())?.to_le_bytes());
    buf.extend_from_slice(&to_i32(flow.height())?.to_le_bytes());
    for v in flow.vectors() {
        buf.extend_from_slice(&(v.x as f32).to_le_bytes());
        buf.extend_from_slice(&(v.y as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn save_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    write_flo(flow, create(path.as_ref())?)
}

pub fn parse_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::Truncated(".flo header".into()));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4 bytes") };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(Error::BadMagic {
            expected: FLO_MAGIC.to_le_bytes(),
            found: word(0),
        });
    }
    let (w, h) = (i32::from_le_bytes(word(4)), i32::from_le_bytes(word(8)));
    if w <= 0 || h <= 0 {
        return Err(parse_err(1, format!("invalid .flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let need = 12 + w * h * 8;
    if bytes.len() < need {
        return Err(Error::Truncated(format!(".flo data: {} of {need} bytes", bytes.len())));
    }
    if bytes.len() > need {
        return Err(parse_err(1, "trailing bytes after .flo data"));
    }
    let vectors = bytes[12..]
        .chunks_exact(8)
        .map(|c| {
            let u = f32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
            let v = f32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
            Vec2::new(u as f64, v as f64)
        })
        .collect();
    FlowField::new(w, h, vectors)
}

pub fn load_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    parse_flo(&read_all(path.as_ref())?)
}

/// Color-wheel rendering: hue from `atan2(v, u)`, full saturation, value
/// `min(1, |flow| / max |flow|)`. Returns interleaved RGB bytes.
pub fn flow_to_rgb(flow: &FlowField) -> Vec<u8> {
    let max = flow.max_magnitude();
    let mut out = Vec::with_capacity(flow.vectors().len() * 3);
    for v in flow.vectors() {
        let value = if max > 0.0 { (v.norm() / max).min(1.0) } else { 0.0 };
        let hue = (v.y.atan2(v.x).to_degrees() + 360.0) % 360.0;
        for c in hsv_to_rgb(hue, 1.0, value) {
            out.push((c * 255.0).round() as u8);
        }
    }
    out
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Binary PPM from interleaved RGB bytes.
pub fn write_ppm<W: Write>(width: usize, height: usize, rgb: &[u8], mut w: W) -> Result<()> {
    assert_eq!(rgb.len(), width * height * 3, "RGB buffer size mismatch");
    write!(w, "P6\n{width} {height}\n255\n")?;
    w.write_all(rgb)?;
    w.flush()?;
    Ok(())
}

pub fn save_ppm(width: usize, height: usize, rgb: &[u8], path: impl AsRef<Path>) -> Result<()> {
    write_ppm(width, height, rgb, create(path.as_ref())?)
}

/// Returns `(width, height, rgb)`.
pub fn parse_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let (hdr, offset) = netpbm_header(bytes, b"P6", 3)?;
    let (w, h) = (hdr[0], hdr[1]);
    if hdr[2] != 255 {
        return Err(parse_err(1, format!("unsupported maxval {}", hdr[2])));
    }
    let data = &bytes[offset..];
    if data.len() < w * h * 3 {
        return Err(Error::Truncated("PPM data".into()));
    }
    Ok((w, h, data[..w * h * 3].to_vec()))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            None
        } else {
            Some((i + 1, l.split_whitespace().collect()))
        }
    })
}

fn field<T: std::str::FromStr>(fields: &[&str], i: usize, line: usize, name: &str) -> Result<T> {
    fields
        .get(i)
        .ok_or_else(|| parse_err(line, format!("missing column {name}")))?
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {name} {:?}", fields[i])))
}

fn is_header(fields: &[&str]) -> bool {
    fields.first().is_some_and(|f| f.parse::<f64>().is_err())
}

pub const TRACKS_HEADER: &str = "frame_id\tped_id\tx\ty";

/// Tracks as `frame_id ped_id x y` rows, ordered by pedestrian then frame.
pub fn write_tracks<W: Write>(tracks: &[Track], mut w: W) -> Result<()> {
    writeln!(w, "{TRACKS_HEADER}")?;
    for t in tracks {
        for p in &t.points {
            writeln!(w, "{}\t{}\t{}\t{}", p.frame_id, t.ped_id, p.position.x, p.position.y)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_tracks(tracks: &[Track], path: impl AsRef<Path>) -> Result<()> {
    write_tracks(tracks, create(path.as_ref())?)
}

/// Whitespace- or tab-separated `frame_id ped_id x y`; an optional leading
/// header row and `#` comments are skipped. Rows may come in any order.
pub fn parse_tracks(text: &str) -> Result<Vec<Track>> {
    let mut rows: BTreeMap<i64, Vec<(u64, Vec2, usize)>> = BTreeMap::new();
    for (k, (line, f)) in data_lines(text).enumerate() {
        if k == 0 && is_header(&f) {
            continue;
        }
        let frame: u64 = field(&f, 0, line, "frame_id")?;
        let ped: i64 = field(&f, 1, line, "ped_id")?;
        let x: f64 = field(&f, 2, line, "x")?;
        let y: f64 = field(&f, 3, line, "y")?;
        rows.entry(ped).or_default().push((frame, Vec2::new(x, y), line));
    }
    rows.into_iter()
        .map(|(ped, mut pts)| {
            pts.sort_by_key(|p| p.0);
            let mut t = Track::new(ped);
            for (frame, pos, line) in pts {
                t.push(frame, pos).map_err(|e| parse_err(line, e.to_string()))?;
            }
            Ok(t)
        })
        .collect()
}

pub fn load_tracks(path: impl AsRef<Path>) -> Result<Vec<Track>> {
    parse_tracks(&std::fs::read_to_string(path)?)
}

pub const DETECTIONS_HEADER: &str = "frame_id\tped_id\tx\ty\tw\th\tconfidence\tclass_id";

/// Detections as `frame_id ped_id x y w h confidence class_id`; an unknown
/// ped id is written as `-`.
pub fn write_detections<W: Write>(dets: &[Detection], mut w: W) -> Result<()> {
    writeln!(w, "{DETECTIONS_HEADER}")?;
    for d in dets {
        let ped = d.ped_id.map_or_else(|| "-".to_string(), |p| p.to_string());
        let b = d.bbox;
        writeln!(
            w,
            "{}\t{ped}\t{}\t{}\t{}\t{}\t{}\t{}",
            d.frame_id, b.x, b.y, b.w, b.h, d.confidence, d.class_id
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_detections(dets: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    write_detections(dets, create(path.as_ref())?)
}

/// Reads detection rows; `class_id` may be omitted and defaults to 0.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (k, (line, f)) in data_lines(text).enumerate() {
        if k == 0 && is_header(&f) {
            continue;
        }
        let ped_id = match f.get(1) {
            Some(&"-") => None,
            _ => Some(field::<i64>(&f, 1, line, "ped_id")?),
        };
        let bbox = BBox::new(
            field(&f, 2, line, "x")?,
            field(&f, 3, line, "y")?,
            field(&f, 4, line, "w")?,
            field(&f, 5, line, "h")?,
        );
        let confidence: f64 = field(&f, 6, line, "confidence")?;
        let class_id = if f.len() > 7 { field(&f, 7, line, "class_id")? } else { 0 };
        let d = Detection {
            frame_id: field(&f, 0, line, "frame_id")?,
            bbox,
            confidence,
            class_id,
            ped_id,
        };
        if !d.is_valid() {
            return Err(parse_err(line, "invalid box or confidence"));
        }
        out.push(d);
    }
    Ok(out)
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    parse_detections(&std::fs::read_to_string(path)?)
}

pub const TRACE_HEADER: &str = "step\tx\ty\theading\tu_phi\tu_s\tmin_separation";

/// Navigation trace rows; an obstacle-free step's separation is written as `inf`.
pub fn write_trace<W: Write>(steps: &[TraceStep], mut w: W) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for s in steps {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.step,
            s.state.position.x,
            s.state.position.y,
            s.state.heading,
            s.control.u_phi,
            s.control.u_s,
            s.min_separation
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(steps: &[TraceStep], path: impl AsRef<Path>) -> Result<()> {
    write_trace(steps, create(path.as_ref())?)
}

/// Reads a file line by line into key/value pairs of a flat `key = value`
/// format. Blank lines and `#` comments are ignored; keys keep file order.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(i + 1, format!("expected key = value, got {line:?}")))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

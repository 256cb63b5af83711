//! File formats: PNG/PPM images, point lists, PGM label masks and the PMSM
//! score-stack container.
//!
//! PMSM layout (all integers little-endian):
//!
//! ```text
//! 0..4    magic "PMSM"
//! 4..6    u16 version (1)
//! 6..8    u16 reserved (0)
//! 8..12   u32 plane count
//! 12..16  u32 height
//! 16..20  u32 width
//! 20..    planes * height * width f32 values, plane-major, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{LabelMask, Point, PointSet, RasterImage, ScoreStack};

pub const PMSM_MAGIC: [u8; 4] = *b"PMSM";
pub const PMSM_VERSION: u16 = 1;
const PMSM_HEADER_LEN: usize = 20;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Images

/// Reads an 8-bit RGB PNG or binary PPM (P6).
pub fn read_image(path: &Path) -> Result<RasterImage> {
    let bytes = read_bytes(path)?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<RasterImage> {
    if bytes.starts_with(b"P6") {
        let (header, payload) = parse_netpbm(bytes, b"P6")?;
        return RasterImage::from_rgb8(header.height, header.width, payload.to_vec());
    }
    if bytes.starts_with(b"P") && bytes.len() >= 2 && bytes[1].is_ascii_digit() {
        return Err(Error::UnsupportedFormat(format!(
            "netpbm variant P{} (only P6 color images are accepted)",
            bytes[1] as char
        )));
    }
    if !bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        return Err(Error::UnsupportedFormat(
            "expected a PNG or binary PPM file".into(),
        ));
    }
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::Unsupported(u) => Error::UnsupportedFormat(u.to_string()),
            other => Error::CorruptData(other.to_string()),
        })?;
    match img {
        image::DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            RasterImage::from_rgb8(h as usize, w as usize, buf.into_raw())
        }
        other => Err(Error::UnsupportedFormat(format!(
            "PNG color type {:?}, expected 8-bit RGB",
            other.color()
        ))),
    }
}

pub fn encode_ppm(image: &RasterImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.as_bytes());
    out
}

pub fn write_ppm(path: &Path, image: &RasterImage) -> Result<()> {
    write_atomic(path, &encode_ppm(image))
}

pub fn write_png_rgb(path: &Path, image: &RasterImage) -> Result<()> {
    write_atomic(
        path,
        &encode_png(image.as_bytes(), image.width(), image.height(), image::ExtendedColorType::Rgb8)?,
    )
}

pub(crate) fn encode_png(
    bytes: &[u8],
    width: usize,
    height: usize,
    color: image::ExtendedColorType,
) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| Error::CorruptData(e.to_string()))?;
    Ok(out)
}

struct NetpbmHeader {
    width: usize,
    height: usize,
}

/// Parses a binary netpbm header with maxval 255 and returns the exact payload.
fn parse_netpbm<'a>(bytes: &'a [u8], magic: &[u8; 2]) -> Result<(NetpbmHeader, &'a [u8])> {
    if !bytes.starts_with(magic) {
        return Err(Error::UnsupportedFormat("unexpected netpbm magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::CorruptData("truncated netpbm header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::CorruptData("malformed netpbm header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::CorruptData("netpbm header value too large".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::CorruptData("malformed netpbm header".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "maxval {maxval}, only 8-bit (255) supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::CorruptData(format!("empty raster {width}x{height}")));
    }
    let channels = if magic == b"P6" { 3 } else { 1 };
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::CorruptData("netpbm dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(Error::CorruptData(format!(
            "netpbm payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    Ok((NetpbmHeader { width, height }, payload))
}

// ---------------------------------------------------------------------------
// Label masks

pub fn encode_pgm(mask: &LabelMask) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.reserve(mask.labels().len());
    for &l in mask.labels() {
        let b = u8::try_from(l)
            .map_err(|_| Error::OutOfRange(format!("label {l} does not fit in 8 bits")))?;
        out.push(b);
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8], num_classes: u16) -> Result<LabelMask> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::UnsupportedFormat(
            "masks must be binary PGM (P5)".into(),
        ));
    }
    let (header, payload) = parse_netpbm(bytes, b"P5")?;
    LabelMask::new(
        header.height,
        header.width,
        num_classes,
        payload.iter().map(|&b| u16::from(b)).collect(),
    )
}

pub fn write_mask(path: &Path, mask: &LabelMask) -> Result<()> {
    write_atomic(path, &encode_pgm(mask)?)
}

pub fn read_mask(path: &Path, num_classes: u16) -> Result<LabelMask> {
    decode_pgm(&read_bytes(path)?, num_classes)
}

// ---------------------------------------------------------------------------
// Point files

/// Parses `class_id,x,y` records; blank lines and `#` comments are skipped.
pub fn parse_points(text: &str, num_classes: u16) -> Result<PointSet> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected `class_id,x,y`, found {} fields",
                fields.len()
            )));
        }
        let class_id: u16 = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad class id {:?}", fields[0])))?;
        let x: u32 = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("bad x coordinate {:?}", fields[1])))?;
        let y: u32 = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("bad y coordinate {:?}", fields[2])))?;
        if class_id == 0 || class_id > num_classes.saturating_add(1) {
            return Err(parse_err(format!(
                "class {class_id} outside 1..={}",
                num_classes.saturating_add(1)
            )));
        }
        entries.push(Point::new(class_id, x, y));
    }
    PointSet::new(num_classes, entries)
}

pub fn read_points(path: &Path, num_classes: u16) -> Result<PointSet> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::CorruptData(format!("point file is not UTF-8: {e}")))?;
    parse_points(&text, num_classes)
}

pub fn format_points(points: &PointSet) -> String {
    let mut out = String::new();
    for p in points.points() {
        out.push_str(&format!("{},{},{}\n", p.class_id, p.x, p.y));
    }
    out
}

pub fn write_points(path: &Path, points: &PointSet) -> Result<()> {
    write_atomic(path, format_points(points).as_bytes())
}

// ---------------------------------------------------------------------------
// PMSM

/// Raw contents of a PMSM file. Values are not range checked, so any field
/// stage (including raw distances) can be stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmsm {
    pub planes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Pmsm {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PMSM_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(&PMSM_MAGIC);
        out.extend_from_slice(&PMSM_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.planes as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PMSM_HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != PMSM_MAGIC {
                return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(Error::TruncatedPayload {
                expected: PMSM_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at =
            |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != PMSM_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u16_at(4);
        if version != PMSM_VERSION {
            return Err(Error::VersionMismatch(version));
        }
        if u16_at(6) != 0 {
            return Err(Error::CorruptData("reserved header field is not zero".into()));
        }
        let (planes, height, width) = (u32_at(8), u32_at(12), u32_at(16));
        let overflow = Error::DimensionOverflow {
            planes,
            height,
            width,
        };
        if planes == 0 || height == 0 || width == 0 {
            return Err(overflow);
        }
        let payload_len = (planes as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(width as usize))
            .and_then(|n| n.checked_mul(4))
            .ok_or(overflow)?;
        let payload = &bytes[PMSM_HEADER_LEN..];
        if payload.len() < payload_len {
            return Err(Error::TruncatedPayload {
                expected: payload_len,
                found: payload.len(),
            });
        }
        if payload.len() > payload_len {
            return Err(Error::CorruptData(format!(
                "{} trailing bytes after payload",
                payload.len() - payload_len
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            planes: planes as usize,
            height: height as usize,
            width: width as usize,
            data,
        })
    }
}

impl From<&ScoreStack> for Pmsm {
    fn from(s: &ScoreStack) -> Self {
        Self {
            planes: s.planes(),
            height: s.height(),
            width: s.width(),
            data: s.data().to_vec(),
        }
    }
}

impl TryFrom<Pmsm> for ScoreStack {
    type Error = Error;

    fn try_from(p: Pmsm) -> Result<Self> {
        ScoreStack::new(p.planes, p.height, p.width, p.data)
    }
}

pub fn read_pmsm(path: &Path) -> Result<Pmsm> {
    Pmsm::decode(&read_bytes(path)?)
}

pub fn write_pmsm(path: &Path, pmsm: &Pmsm) -> Result<()> {
    write_atomic(path, &pmsm.encode())
}

pub fn read_score_stack(path: &Path) -> Result<ScoreStack> {
    read_pmsm(path)?.try_into()
}

pub fn write_score_stack(path: &Path, stack: &ScoreStack) -> Result<()> {
    write_pmsm(path, &Pmsm::from(stack))
}

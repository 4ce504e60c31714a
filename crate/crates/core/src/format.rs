//! Binary feature-stream files.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! header   "MBS1" | version: u32 = 1 | h: u32 | w: u32 | c: u32      (20 bytes)
//! frame*   h*w*c x f32 (row-major h, w, c) | predicted_iou: f32
//!          | object_present: u8 | is_prompt: u8 | 0u8 | 0u8
//! ```
//!
//! Frames follow back to back until end of file; the frame count is the
//! payload length divided by the fixed record size. Frame indices are the
//! record positions.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::types::FeatureFrame;

pub const MAGIC: [u8; 4] = *b"MBS1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;
/// Bytes after the feature block: iou, two flags, two pad bytes.
pub const TRAILER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFileHeader {
    pub version: u32,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl StreamFileHeader {
    pub fn record_len(&self) -> usize {
        self.height * self.width * self.channels * 4 + TRAILER_LEN
    }

    pub fn file_len(&self) -> usize {
        HEADER_LEN + self.frame_count * self.record_len()
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

/// Serialises `frames`, which must all share the first frame's dims.
pub fn write_stream<W: Write>(mut out: W, frames: &[FeatureFrame]) -> std::io::Result<()> {
    let (h, w, c) = frames.first().map(FeatureFrame::dims).unwrap_or((0, 0, 0));
    let mut buf = Vec::with_capacity(HEADER_LEN);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [h, w, c] {
        let v = to_u32(v, "dimension").map_err(std::io::Error::other)?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    for f in frames {
        if f.dims() != (h, w, c) || f.data.len() != h * w * c {
            return Err(std::io::Error::other(format!(
                "frame {} has dims {:?}, stream is {:?}",
                f.frame_index,
                f.dims(),
                (h, w, c)
            )));
        }
        buf.clear();
        buf.reserve(f.data.len() * 4 + TRAILER_LEN);
        for v in &f.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&f.predicted_iou.to_le_bytes());
        buf.extend_from_slice(&[u8::from(f.object_present), u8::from(f.is_prompt), 0, 0]);
        out.write_all(&buf)?;
    }
    out.flush()
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn flag(byte: u8, what: &str, frame: usize) -> Result<bool> {
    match byte {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::Format(format!(
            "frame {frame}: {what} byte is {other}, expected 0 or 1"
        ))),
    }
}

/// Parses just the header; the magic and version are checked first.
pub fn parse_header(bytes: &[u8]) -> Result<StreamFileHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the header",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (h, w, c) = (
        read_u32(bytes, 8) as usize,
        read_u32(bytes, 12) as usize,
        read_u32(bytes, 16) as usize,
    );
    let payload = bytes.len() - HEADER_LEN;
    let mut header = StreamFileHeader {
        version,
        frame_count: 0,
        height: h,
        width: w,
        channels: c,
    };
    if h == 0 || w == 0 || c == 0 {
        if payload != 0 {
            return Err(Error::Format(
                "zero-sized frames with a non-empty payload".into(),
            ));
        }
        return Ok(header);
    }
    let record = header.record_len();
    if !payload.is_multiple_of(record) {
        return Err(Error::Format(format!(
            "payload of {payload} bytes is not a whole number of {record}-byte frames"
        )));
    }
    header.frame_count = payload / record;
    Ok(header)
}

pub fn decode_stream(bytes: &[u8]) -> Result<(StreamFileHeader, Vec<FeatureFrame>)> {
    let header = parse_header(bytes)?;
    let (h, w, c) = (header.height, header.width, header.channels);
    let n = h * w * c;
    let record = header.record_len();
    let mut frames = Vec::with_capacity(header.frame_count);
    for (idx, rec) in bytes[HEADER_LEN..].chunks_exact(record.max(1)).enumerate() {
        let data = rec[..n * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect();
        let tail = &rec[n * 4..];
        let predicted_iou = f32::from_le_bytes(tail[..4].try_into().expect("4-byte chunk"));
        let object_present = flag(tail[4], "object_present", idx)?;
        let is_prompt = flag(tail[5], "is_prompt", idx)?;
        if tail[6] != 0 || tail[7] != 0 {
            return Err(Error::Format(format!("frame {idx}: non-zero padding")));
        }
        frames.push(FeatureFrame {
            frame_index: idx,
            height: h,
            width: w,
            channels: c,
            data,
            predicted_iou,
            object_present,
            is_prompt,
        });
    }
    Ok((header, frames))
}

pub fn read_stream<R: Read>(mut input: R) -> Result<(StreamFileHeader, Vec<FeatureFrame>)> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("read failed: {e}")))?;
    decode_stream(&bytes)
}

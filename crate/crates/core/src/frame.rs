//! Decoded video frames and the raw `NMV1` frame-stream format.
//!
//! The wire format is deliberately codec-free so that any decoder tool can
//! pipe frames in: the 4-byte magic `NMV1`, one ASCII header line
//! `"W H fps_num fps_den planes\n"` (planes 1 = luma, 3 = planar RGB),
//! then concatenated frames of planar unsigned 8-bit samples.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"NMV1";

#[derive(Error, Debug)]
pub enum FormatError {
    #[error("bad magic: expected \"NMV1\"")]
    BadMagic,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("truncated frame payload at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("frame {index} has no color plane but header declares planes=3")]
    MissingColorPlane { index: usize },
    #[error("frame dimensions {got:?} do not match stream header {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("empty input stream")]
    EmptyStream,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Stream-level metadata from the `NMV1` header line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: u32,
    pub height: u32,
    pub fps_num: u32,
    pub fps_den: u32,
    pub planes: u8,
}

impl StreamHeader {
    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    /// Bytes occupied by one frame in the payload.
    pub fn frame_bytes(&self) -> usize {
        self.width as usize * self.height as usize * self.planes as usize
    }

    pub fn timestamp(&self, index: usize) -> f64 {
        index as f64 * self.fps_den as f64 / self.fps_num as f64
    }
}

/// One decoded frame: a timestamp plus a row-major 8-bit luma plane. Color
/// input keeps its planar RGB samples alongside for export.
///
/// Frames are immutable after construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub width: u32,
    pub height: u32,
    pub luma: Vec<u8>,
    /// Planar RGB (R plane, G plane, B plane), exactly as read from the wire.
    pub color: Option<Vec<u8>>,
}

impl Frame {
    pub fn new(t: f64, width: u32, height: u32, luma: Vec<u8>) -> Self {
        assert_eq!(
            luma.len(),
            width as usize * height as usize,
            "luma plane length must equal W*H"
        );
        Frame {
            t,
            width,
            height,
            luma,
            color: None,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn luma_at(&self, x: u32, y: u32) -> u8 {
        self.luma[y as usize * self.width as usize + x as usize]
    }
}

/// Integer BT.601 luma from RGB, weights 77/150/29 (sum 256).
#[inline]
pub fn luma_from_rgb(r: u8, g: u8, b: u8) -> u8 {
    ((77 * r as u32 + 150 * g as u32 + 29 * b as u32 + 128) >> 8) as u8
}

/// PNG-encode a frame: RGB when the color planes are present, 8-bit gray
/// otherwise. Encoding is deterministic for identical pixel content.
pub fn encode_png(frame: &Frame) -> Result<Vec<u8>, image::ImageError> {
    use image::{ExtendedColorType, ImageEncoder};
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    let (w, h) = (frame.width, frame.height);
    match &frame.color {
        Some(planes) => {
            let n = frame.pixel_count();
            let mut rgb = vec![0u8; n * 3];
            for i in 0..n {
                rgb[i * 3] = planes[i];
                rgb[i * 3 + 1] = planes[n + i];
                rgb[i * 3 + 2] = planes[2 * n + i];
            }
            encoder.write_image(&rgb, w, h, ExtendedColorType::Rgb8)?;
        }
        None => encoder.write_image(&frame.luma, w, h, ExtendedColorType::L8)?,
    }
    Ok(out)
}

/// Decode a PNG back into a luma frame (color kept when the image has it).
pub fn decode_png(bytes: &[u8], t: f64) -> Result<Frame, image::ImageError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    let (w, h) = (img.width(), img.height());
    let n = (w * h) as usize;
    match img {
        image::DynamicImage::ImageLuma8(gray) => {
            Ok(Frame::new(t, w, h, gray.into_raw()))
        }
        other => {
            let rgb = other.to_rgb8().into_raw();
            let mut planes = vec![0u8; n * 3];
            let mut luma = vec![0u8; n];
            for i in 0..n {
                let (r, g, b) = (rgb[i * 3], rgb[i * 3 + 1], rgb[i * 3 + 2]);
                planes[i] = r;
                planes[n + i] = g;
                planes[2 * n + i] = b;
                luma[i] = luma_from_rgb(r, g, b);
            }
            Ok(Frame {
                t,
                width: w,
                height: h,
                luma,
                color: Some(planes),
            })
        }
    }
}

/// Axis-aligned pixel rectangle, `x..x+width` by `y..y+height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn within_frame(&self, width: u32, height: u32) -> bool {
        self.x + self.width <= width && self.y + self.height <= height
    }
}

/// Streaming reader over an `NMV1` byte stream. Yields frames with
/// `t = frame_index / fps` and stops cleanly at EOF; a partial final frame
/// is a [`FormatError::Truncated`] naming the payload byte offset reached.
pub struct FrameReader<R: Read> {
    reader: R,
    header: StreamHeader,
    index: usize,
    payload_offset: u64,
    done: bool,
}

impl<R: Read> FrameReader<R> {
    pub fn new(mut reader: R) -> Result<Self, FormatError> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                FormatError::BadMagic
            } else {
                FormatError::Io(e)
            }
        })?;
        if &magic != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let header = parse_header_line(&mut reader)?;
        Ok(FrameReader {
            reader,
            header,
            index: 0,
            payload_offset: 0,
            done: false,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn read_frame(&mut self) -> Result<Option<Frame>, FormatError> {
        let h = self.header;
        let plane_len = h.width as usize * h.height as usize;
        let mut buf = vec![0u8; h.frame_bytes()];
        let mut filled = 0usize;
        while filled < buf.len() {
            match self.reader.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(FormatError::Io(e)),
            }
        }
        if filled == 0 {
            return Ok(None);
        }
        if filled < buf.len() {
            return Err(FormatError::Truncated {
                offset: self.payload_offset + filled as u64,
            });
        }
        self.payload_offset += buf.len() as u64;
        let t = h.timestamp(self.index);
        self.index += 1;
        let frame = match h.planes {
            1 => Frame {
                t,
                width: h.width,
                height: h.height,
                luma: buf,
                color: None,
            },
            3 => {
                let mut luma = vec![0u8; plane_len];
                let (rp, rest) = buf.split_at(plane_len);
                let (gp, bp) = rest.split_at(plane_len);
                for i in 0..plane_len {
                    luma[i] = luma_from_rgb(rp[i], gp[i], bp[i]);
                }
                Frame {
                    t,
                    width: h.width,
                    height: h.height,
                    luma,
                    color: Some(buf),
                }
            }
            n => {
                return Err(FormatError::BadHeader(format!(
                    "planes must be 1 or 3, got {n}"
                )))
            }
        };
        Ok(Some(frame))
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<Frame, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_frame() {
            Ok(Some(frame)) => Some(Ok(frame)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn parse_header_line<R: Read>(reader: &mut R) -> Result<StreamHeader, FormatError> {
    let mut line = Vec::with_capacity(32);
    let mut byte = [0u8; 1];
    loop {
        match reader.read(&mut byte) {
            Ok(0) => return Err(FormatError::BadHeader("unterminated header line".into())),
            Ok(_) => {
                if byte[0] == b'\n' {
                    break;
                }
                if line.len() >= 128 {
                    return Err(FormatError::BadHeader("header line too long".into()));
                }
                line.push(byte[0]);
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(FormatError::Io(e)),
        }
    }
    let text = std::str::from_utf8(&line)
        .map_err(|_| FormatError::BadHeader("header is not ASCII".into()))?;
    let fields: Vec<&str> = text.split(' ').collect();
    if fields.len() != 5 {
        return Err(FormatError::BadHeader(format!(
            "expected 5 header fields, got {}",
            fields.len()
        )));
    }
    let parse = |name: &str, s: &str| -> Result<u32, FormatError> {
        s.parse::<u32>()
            .map_err(|_| FormatError::BadHeader(format!("bad {name}: {s:?}")))
    };
    let width = parse("width", fields[0])?;
    let height = parse("height", fields[1])?;
    let fps_num = parse("fps_num", fields[2])?;
    let fps_den = parse("fps_den", fields[3])?;
    let planes = parse("planes", fields[4])? as u8;
    if width == 0 || height == 0 {
        return Err(FormatError::BadHeader("zero frame dimension".into()));
    }
    if fps_num == 0 || fps_den == 0 {
        return Err(FormatError::BadHeader("zero frame rate".into()));
    }
    if planes != 1 && planes != 3 {
        return Err(FormatError::BadHeader(format!(
            "planes must be 1 or 3, got {planes}"
        )));
    }
    Ok(StreamHeader {
        width,
        height,
        fps_num,
        fps_den,
        planes,
    })
}

/// Read a whole stream into memory.
pub fn read_stream<R: Read>(reader: R) -> Result<(StreamHeader, Vec<Frame>), FormatError> {
    let mut fr = FrameReader::new(reader)?;
    let header = *fr.header();
    let mut frames = Vec::new();
    for frame in &mut fr {
        frames.push(frame?);
    }
    Ok((header, frames))
}

/// Write frames in the `NMV1` format. Reading a valid stream and writing it
/// back with its own header reproduces the input byte-exactly.
pub fn write_stream<W: Write>(
    sink: &mut W,
    header: &StreamHeader,
    frames: &[Frame],
) -> Result<(), FormatError> {
    sink.write_all(MAGIC)?;
    writeln!(
        sink,
        "{} {} {} {} {}",
        header.width, header.height, header.fps_num, header.fps_den, header.planes
    )?;
    for (index, frame) in frames.iter().enumerate() {
        if (frame.width, frame.height) != (header.width, header.height) {
            return Err(FormatError::DimensionMismatch {
                expected: (header.width, header.height),
                got: (frame.width, frame.height),
            });
        }
        match header.planes {
            1 => sink.write_all(&frame.luma)?,
            3 => {
                let color = frame
                    .color
                    .as_ref()
                    .ok_or(FormatError::MissingColorPlane { index })?;
                sink.write_all(color)?;
            }
            _ => unreachable!("header validated at construction"),
        }
    }
    Ok(())
}

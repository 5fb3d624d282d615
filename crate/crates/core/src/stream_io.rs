//! Stream files.
//!
//! Two encodings share one logical layout: a header followed by one record
//! per frame.
//!
//! * **JSON lines** (`.jsonl`): line 0 is the header object, every following
//!   line is a frame record
//!   `{"t":0,"tokens":[...],"scene_id":0,"objects":[{"id":3,"category":"chair"}],"needle":null}`.
//!   `tokens` is the flat row-major `tokens_per_frame x dim` array. Floats are
//!   written in shortest round-trip form, so decoding is bit-exact.
//! * **Packed binary**: magic `PSTB`, `u32` version, `u32` header length and
//!   the header as JSON, then per frame a `u64` timestamp, the token array as
//!   little-endian `f32`, a `u32` annotation length and the annotation as JSON.
//!
//! Readers detect the encoding from the first four bytes. A zero-byte file is
//! an empty stream without a header. Record indices in errors count the
//! header as record 0.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FrameAnnotation, LatentFrame, NeedleMark, ObjectSighting, TokenGrid};

pub const STREAM_FORMAT: &str = "predsense-stream";
pub const STREAM_VERSION: u32 = 1;
const BINARY_MAGIC: &[u8; 4] = b"PSTB";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamEncoding {
    Jsonl,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub tokens_per_frame: usize,
    pub frame_count: u64,
    pub seed: u64,
    pub spec_hash: String,
}

impl StreamHeader {
    pub fn new(dim: usize, tokens_per_frame: usize, frame_count: u64, seed: u64, spec_hash: impl Into<String>) -> Self {
        Self {
            format: STREAM_FORMAT.to_string(),
            version: STREAM_VERSION,
            dim,
            tokens_per_frame,
            frame_count,
            seed,
            spec_hash: spec_hash.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: u64,
    tokens: Vec<f32>,
    scene_id: u32,
    #[serde(default)]
    objects: Vec<ObjectSighting>,
    #[serde(default)]
    needle: Option<NeedleMark>,
}

/// Incremental writer, so generated streams never need to be held in memory.
pub struct StreamWriter<W: Write> {
    out: W,
    header: StreamHeader,
    encoding: StreamEncoding,
    written: u64,
}

impl StreamWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: StreamHeader, encoding: StreamEncoding) -> Result<Self> {
        let file = File::create(path)?;
        Self::new(BufWriter::new(file), header, encoding)
    }
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut out: W, header: StreamHeader, encoding: StreamEncoding) -> Result<Self> {
        let header_json = serde_json::to_vec(&header)?;
        match encoding {
            StreamEncoding::Jsonl => {
                out.write_all(&header_json)?;
                out.write_all(b"\n")?;
            }
            StreamEncoding::Binary => {
                out.write_all(BINARY_MAGIC)?;
                out.write_all(&STREAM_VERSION.to_le_bytes())?;
                out.write_all(&(header_json.len() as u32).to_le_bytes())?;
                out.write_all(&header_json)?;
            }
        }
        Ok(Self {
            out,
            header,
            encoding,
            written: 0,
        })
    }

    pub fn write_frame(&mut self, frame: &LatentFrame) -> Result<()> {
        let (dim, tokens) = (frame.grid.dim(), frame.grid.len());
        if dim != self.header.dim || tokens != self.header.tokens_per_frame {
            return Err(Error::ShapeMismatch {
                expected_tokens: self.header.tokens_per_frame,
                expected_dim: self.header.dim,
                actual_tokens: tokens,
                actual_dim: dim,
            });
        }
        match self.encoding {
            StreamEncoding::Jsonl => {
                let rec = FrameRecord {
                    t: frame.timestamp,
                    tokens: frame.grid.as_flat().to_vec(),
                    scene_id: frame.annotation.scene_id,
                    objects: frame.annotation.objects.clone(),
                    needle: frame.annotation.needle.clone(),
                };
                serde_json::to_writer(&mut self.out, &rec)?;
                self.out.write_all(b"\n")?;
            }
            StreamEncoding::Binary => {
                self.out.write_all(&frame.timestamp.to_le_bytes())?;
                for v in frame.grid.as_flat() {
                    self.out.write_all(&v.to_le_bytes())?;
                }
                let ann = serde_json::to_vec(&frame.annotation)?;
                self.out.write_all(&(ann.len() as u32).to_le_bytes())?;
                self.out.write_all(&ann)?;
            }
        }
        self.written += 1;
        Ok(())
    }

    /// Flushes and checks that the declared frame count was honoured.
    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.frame_count {
            return Err(Error::InvalidInput(format!(
                "header declares {} frames, {} written",
                self.header.frame_count, self.written
            )));
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Writes a whole stream in one call.
pub fn write_stream(path: impl AsRef<Path>, header: &StreamHeader, frames: &[LatentFrame], encoding: StreamEncoding) -> Result<()> {
    let mut header = header.clone();
    header.frame_count = frames.len() as u64;
    let mut w = StreamWriter::create(path, header, encoding)?;
    for f in frames {
        w.write_frame(f)?;
    }
    w.finish()?;
    Ok(())
}

/// Reads a whole stream, returning the header (absent for an empty file) and frames.
pub fn read_stream_with_header(path: impl AsRef<Path>) -> Result<(Option<StreamHeader>, Vec<LatentFrame>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let head = reader.fill_buf()?;
    if head.is_empty() {
        return Ok((None, Vec::new()));
    }
    if head.starts_with(BINARY_MAGIC) {
        read_binary(reader)
    } else {
        read_jsonl(reader)
    }
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<Vec<LatentFrame>> {
    Ok(read_stream_with_header(path)?.1)
}

fn malformed(index: usize, reason: impl ToString) -> Error {
    Error::MalformedRecord {
        index,
        reason: reason.to_string(),
    }
}

fn check_header(h: &StreamHeader) -> Result<()> {
    if h.format != STREAM_FORMAT || h.version != STREAM_VERSION {
        return Err(malformed(0, format!("unsupported format {} v{}", h.format, h.version)));
    }
    if h.dim == 0 || h.tokens_per_frame == 0 {
        return Err(malformed(0, "dim and tokens_per_frame must be positive"));
    }
    Ok(())
}

fn check_frame(h: &StreamHeader, index: usize, prev: Option<u64>, frame: &LatentFrame) -> Result<()> {
    if frame.grid.dim() != h.dim || frame.grid.len() != h.tokens_per_frame {
        return Err(malformed(index, "token array does not match header shape"));
    }
    if let Some(p) = prev {
        if frame.timestamp <= p {
            return Err(malformed(index, "timestamps must be strictly increasing"));
        }
    }
    Ok(())
}

fn read_jsonl<R: BufRead>(reader: R) -> Result<(Option<StreamHeader>, Vec<LatentFrame>)> {
    let mut lines = reader.lines();
    let first = lines.next().ok_or_else(|| malformed(0, "missing header"))??;
    let header: StreamHeader = serde_json::from_str(&first).map_err(|e| malformed(0, e))?;
    check_header(&header)?;
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let index = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| malformed(index, e))?;
        let grid = TokenGrid::new(header.dim, rec.tokens).map_err(|e| malformed(index, e))?;
        let frame = LatentFrame {
            timestamp: rec.t,
            grid,
            annotation: FrameAnnotation {
                scene_id: rec.scene_id,
                objects: rec.objects,
                needle: rec.needle,
            },
        };
        check_frame(&header, index, frames.last().map(|f: &LatentFrame| f.timestamp), &frame)?;
        frames.push(frame);
    }
    if frames.len() as u64 != header.frame_count {
        return Err(malformed(
            frames.len() + 1,
            format!("header declares {} frames, found {}", header.frame_count, frames.len()),
        ));
    }
    Ok((Some(header), frames))
}

fn read_exact_or(reader: &mut impl Read, buf: &mut [u8], index: usize) -> Result<()> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => malformed(index, "truncated record"),
        _ => Error::Io(e),
    })
}

fn read_u32(reader: &mut impl Read, index: usize) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(reader, &mut b, index)?;
    Ok(u32::from_le_bytes(b))
}

fn read_binary<R: Read>(mut reader: R) -> Result<(Option<StreamHeader>, Vec<LatentFrame>)> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut reader, &mut magic, 0)?;
    let version = read_u32(&mut reader, 0)?;
    if version != STREAM_VERSION {
        return Err(malformed(0, format!("unsupported binary version {version}")));
    }
    let len = read_u32(&mut reader, 0)? as usize;
    let mut buf = vec![0u8; len];
    read_exact_or(&mut reader, &mut buf, 0)?;
    let header: StreamHeader = serde_json::from_slice(&buf).map_err(|e| malformed(0, e))?;
    check_header(&header)?;

    let values = header.dim * header.tokens_per_frame;
    let mut frames = Vec::with_capacity(header.frame_count as usize);
    let mut raw = vec![0u8; values * 4];
    for i in 0..header.frame_count as usize {
        let index = i + 1;
        let mut ts = [0u8; 8];
        read_exact_or(&mut reader, &mut ts, index)?;
        read_exact_or(&mut reader, &mut raw, index)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let grid = TokenGrid::new(header.dim, data).map_err(|e| malformed(index, e))?;
        let alen = read_u32(&mut reader, index)? as usize;
        let mut abuf = vec![0u8; alen];
        read_exact_or(&mut reader, &mut abuf, index)?;
        let annotation: FrameAnnotation = serde_json::from_slice(&abuf).map_err(|e| malformed(index, e))?;
        let frame = LatentFrame {
            timestamp: u64::from_le_bytes(ts),
            grid,
            annotation,
        };
        check_frame(&header, index, frames.last().map(|f: &LatentFrame| f.timestamp), &frame)?;
        frames.push(frame);
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest)? != 0 {
        return Err(malformed(header.frame_count as usize + 1, "trailing bytes after last frame"));
    }
    Ok((Some(header), frames))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames() -> Vec<LatentFrame> {
        (0..3)
            .map(|t| LatentFrame {
                timestamp: t,
                grid: TokenGrid::new(2, vec![0.1 * t as f32, -1.0e-7, 3.5, f32::MIN_POSITIVE]).unwrap(),
                annotation: FrameAnnotation {
                    scene_id: t as u32 / 2,
                    objects: vec![ObjectSighting {
                        id: 7,
                        category: "chair".into(),
                    }],
                    needle: (t == 1).then(|| NeedleMark {
                        label: "teddy bear".into(),
                        location: "kitchen".into(),
                        order_index: 1,
                    }),
                },
            })
            .collect()
    }

    #[test]
    fn round_trip_both_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let header = StreamHeader::new(2, 2, 3, 42, "abc");
        for enc in [StreamEncoding::Jsonl, StreamEncoding::Binary] {
            let path = dir.path().join(format!("s.{enc:?}"));
            write_stream(&path, &header, &frames(), enc).unwrap();
            let (h, back) = read_stream_with_header(&path).unwrap();
            assert_eq!(h.unwrap(), header);
            assert_eq!(back, frames());
        }
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        File::create(&path).unwrap();
        assert!(read_stream(&path).unwrap().is_empty());
    }

    #[test]
    fn malformed_record_reports_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        write_stream(&path, &StreamHeader::new(2, 2, 3, 1, "x"), &frames(), StreamEncoding::Jsonl).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[2] = r#"{"t":1,"tokens":[1.0],"scene_id":0}"#;
        std::fs::write(&path, lines.join("\n")).unwrap();
        match read_stream(&path) {
            Err(Error::MalformedRecord { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_binary_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_stream(&path, &StreamHeader::new(2, 2, 3, 1, "x"), &frames(), StreamEncoding::Binary).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_stream(&path), Err(Error::MalformedRecord { index: 3, .. })));
    }

    #[test]
    fn writer_rejects_wrong_shape_and_count() {
        let mut w = StreamWriter::new(Vec::new(), StreamHeader::new(3, 2, 1, 0, ""), StreamEncoding::Jsonl).unwrap();
        assert!(w.write_frame(&frames()[0]).is_err());
        assert!(w.finish().is_err());
    }
}

//! YUV4MPEG2 reading and writing.
//!
//! Only the luma plane is kept on read; chroma planes are skipped. Supported
//! colorspaces are 8-bit 4:2:0 (all siting variants), 4:2:2, 4:4:4 and mono.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Fps, Frame, FrameError, FrameSource, LumaFrame, StreamInfo};

const MAGIC: &str = "YUV4MPEG2";
const MAX_LINE: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Chroma {
    C420,
    C422,
    C444,
    Mono,
}

impl Chroma {
    fn parse(token: &str) -> Result<Self, FrameError> {
        match &token[1..] {
            "420" | "420jpeg" | "420paldv" | "420mpeg2" => Ok(Chroma::C420),
            "422" => Ok(Chroma::C422),
            "444" => Ok(Chroma::C444),
            "mono" => Ok(Chroma::Mono),
            _ => Err(FrameError::Header {
                token: token.to_string(),
                reason: "unsupported colorspace".into(),
            }),
        }
    }

    fn chroma_bytes(self, w: usize, h: usize) -> usize {
        let (cw, ch) = match self {
            Chroma::C420 => (w.div_ceil(2), h.div_ceil(2)),
            Chroma::C422 => (w.div_ceil(2), h),
            Chroma::C444 => (w, h),
            Chroma::Mono => return 0,
        };
        2 * cw * ch
    }
}

#[derive(Debug)]
struct Header {
    width: u32,
    height: u32,
    fps: Fps,
    chroma: Chroma,
    len: usize,
}

/// Reads bytes up to (not including) `\n`. Returns `Ok(None)` on clean EOF.
fn read_line<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return if line.is_empty() {
                Ok(None)
            } else {
                Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "unterminated line",
                ))
            };
        }
        if byte[0] == b'\n' {
            return Ok(Some(line));
        }
        line.push(byte[0]);
        if line.len() > MAX_LINE {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "line too long"));
        }
    }
}

fn parse_header(line: &[u8]) -> Result<Header, FrameError> {
    let text = std::str::from_utf8(line)
        .ok()
        .filter(|t| t.is_ascii())
        .ok_or_else(|| FrameError::Header {
            token: String::from_utf8_lossy(line).into_owned(),
            reason: "header is not ASCII".into(),
        })?;
    let mut tokens = text.split(' ').filter(|t| !t.is_empty());
    match tokens.next() {
        Some(MAGIC) => {}
        other => {
            return Err(FrameError::Header {
                token: other.unwrap_or("").to_string(),
                reason: format!("expected {MAGIC}"),
            })
        }
    }

    let dim = |token: &str| -> Result<u32, FrameError> {
        match token[1..].parse::<u32>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(FrameError::Header {
                token: token.to_string(),
                reason: "expected a positive integer".into(),
            }),
        }
    };

    let (mut width, mut height, mut fps) = (None, None, None);
    let mut chroma = Chroma::C420;
    for token in tokens {
        match token.as_bytes()[0] {
            b'W' => width = Some(dim(token)?),
            b'H' => height = Some(dim(token)?),
            b'F' => {
                fps = Some(token[1..].parse::<Fps>().map_err(|_| FrameError::Header {
                    token: token.to_string(),
                    reason: "expected <num>:<den> with both positive".into(),
                })?)
            }
            b'C' => chroma = Chroma::parse(token)?,
            // interlacing, aspect ratio and extensions do not affect the payload
            b'I' | b'A' | b'X' => {}
            _ => {
                return Err(FrameError::Header {
                    token: token.to_string(),
                    reason: "unknown header field".into(),
                })
            }
        }
    }
    Ok(Header {
        width: width.ok_or(FrameError::MissingField('W'))?,
        height: height.ok_or(FrameError::MissingField('H'))?,
        fps: fps.ok_or(FrameError::MissingField('F'))?,
        chroma,
        len: line.len() + 1,
    })
}

/// Streaming Y4M decoder producing single-channel (luma) frames.
pub struct Y4mReader<R> {
    inner: R,
    info: StreamInfo,
    chroma_bytes: usize,
    next_index: u64,
    done: bool,
    scratch: Vec<u8>,
}

impl<R: Read> Y4mReader<R> {
    pub fn new(mut inner: R) -> Result<Self, FrameError> {
        let line = read_line(&mut inner)
            .map_err(|e| FrameError::io("<y4m header>", e))?
            .ok_or_else(|| FrameError::Header {
                token: String::new(),
                reason: "empty input".into(),
            })?;
        let header = parse_header(&line)?;
        Ok(Self::with_header(inner, &header, None))
    }

    fn with_header(inner: R, header: &Header, frame_count: Option<u64>) -> Self {
        Y4mReader {
            inner,
            info: StreamInfo {
                width: header.width,
                height: header.height,
                fps: header.fps,
                frame_count,
            },
            chroma_bytes: header
                .chroma
                .chroma_bytes(header.width as usize, header.height as usize),
            next_index: 0,
            done: false,
            scratch: Vec::new(),
        }
    }

    fn read_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        let index = self.next_index;
        let marker = match read_line(&mut self.inner) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(None),
            Err(_) => {
                return Err(FrameError::Truncated {
                    index,
                    expected: 6,
                    got: 0,
                })
            }
        };
        if !(marker == b"FRAME" || marker.starts_with(b"FRAME ")) {
            return Err(FrameError::FrameMarker {
                index,
                marker: String::from_utf8_lossy(&marker).into_owned(),
            });
        }

        let luma_len = self.info.width as usize * self.info.height as usize;
        let mut luma = vec![0u8; luma_len];
        let got = read_fully(&mut self.inner, &mut luma)
            .map_err(|e| FrameError::io(format!("frame {index}"), e))?;
        if got < luma_len {
            return Err(FrameError::Truncated {
                index,
                expected: luma_len + self.chroma_bytes,
                got,
            });
        }
        self.scratch.resize(self.chroma_bytes, 0);
        let got_chroma = read_fully(&mut self.inner, &mut self.scratch)
            .map_err(|e| FrameError::io(format!("frame {index}"), e))?;
        if got_chroma < self.chroma_bytes {
            return Err(FrameError::Truncated {
                index,
                expected: luma_len + self.chroma_bytes,
                got: luma_len + got_chroma,
            });
        }

        self.next_index += 1;
        Frame::new(
            index,
            self.info.fps,
            self.info.width,
            self.info.height,
            1,
            luma,
        )
        .map(Some)
    }
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> Iterator for Y4mReader<R> {
    type Item = Result<Frame, FrameError>;

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

impl<R: Read> FrameSource for Y4mReader<R> {
    fn info(&self) -> &StreamInfo {
        &self.info
    }
}

/// Opens a Y4M file. `frame_count` is declared when the file length is an
/// exact multiple of bare `FRAME` records.
pub fn open_y4m(path: impl AsRef<Path>) -> Result<Y4mReader<BufReader<File>>, FrameError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| FrameError::io(&shown, e))?;
    let file_len = file
        .metadata()
        .map_err(|e| FrameError::io(&shown, e))?
        .len();
    let mut reader = BufReader::new(file);
    let line = read_line(&mut reader)
        .map_err(|e| FrameError::io(&shown, e))?
        .ok_or_else(|| FrameError::Header {
            token: String::new(),
            reason: "empty input".into(),
        })?;
    let header = parse_header(&line)?;
    let record = 6
        + header.width as u64 * header.height as u64
        + header
            .chroma
            .chroma_bytes(header.width as usize, header.height as usize) as u64;
    let body = file_len - header.len as u64;
    let frame_count = body.is_multiple_of(record).then_some(body / record);
    Ok(Y4mReader::with_header(reader, &header, frame_count))
}

/// Writes luma planes as 4:2:0 Y4M with neutral chroma.
pub struct Y4mWriter<W: Write> {
    out: W,
    width: u32,
    height: u32,
    chroma: Vec<u8>,
}

impl<W: Write> Y4mWriter<W> {
    pub fn new(mut out: W, width: u32, height: u32, fps: Fps) -> io::Result<Self> {
        writeln!(
            out,
            "{MAGIC} W{width} H{height} F{}:{} Ip A1:1 C420jpeg",
            fps.num(),
            fps.den()
        )?;
        let chroma = vec![128u8; Chroma::C420.chroma_bytes(width as usize, height as usize)];
        Ok(Y4mWriter {
            out,
            width,
            height,
            chroma,
        })
    }

    pub fn write_luma(&mut self, frame: &LumaFrame) -> io::Result<()> {
        if frame.width != self.width || frame.height != self.height {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!(
                    "frame {} is {}x{}, stream is {}x{}",
                    frame.index, frame.width, frame.height, self.width, self.height
                ),
            ));
        }
        self.out.write_all(b"FRAME\n")?;
        self.out.write_all(&frame.pixels)?;
        self.out.write_all(&self.chroma)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Writes a luma sequence to `path`.
pub fn write_y4m<'a>(
    path: impl AsRef<Path>,
    width: u32,
    height: u32,
    fps: Fps,
    frames: impl IntoIterator<Item = &'a LumaFrame>,
) -> io::Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut writer = Y4mWriter::new(file, width, height, fps)?;
    for frame in frames {
        writer.write_luma(frame)?;
    }
    writer.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::to_luma;

    fn reader(bytes: &[u8]) -> Result<Y4mReader<&[u8]>, FrameError> {
        Y4mReader::new(bytes)
    }

    #[test]
    fn header_fields_become_stream_info() {
        let r = reader(b"YUV4MPEG2 W1280 H720 F30:1 Ip A1:1 C420jpeg\n").unwrap();
        assert_eq!(r.info().width, 1280);
        assert_eq!(r.info().height, 720);
        assert_eq!(r.info().fps, Fps::new(30, 1).unwrap());
    }

    #[test]
    fn minimal_file_yields_one_frame() {
        let mut bytes = b"YUV4MPEG2 W2 H2 F1:1\nFRAME\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30, 40, 128, 128]);
        let frames: Vec<_> = reader(&bytes).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].pixels(), &[10, 20, 30, 40]);
        assert_eq!(frames[0].channels(), 1);
    }

    #[test]
    fn missing_width_is_a_parse_error() {
        let err = reader(b"YUV4MPEG2 H2 F1:1\n").err().unwrap();
        assert!(matches!(err, FrameError::MissingField('W')), "{err}");
    }

    #[test]
    fn bad_token_is_named() {
        let err = reader(b"YUV4MPEG2 W2 Hx F1:1\n").err().unwrap();
        assert!(err.to_string().contains("`Hx`"), "{err}");
        let err = reader(b"YUV4MPEG2 W2 H2 F1:0\n").err().unwrap();
        assert!(err.to_string().contains("`F1:0`"), "{err}");
        let err = reader(b"YUV4MPEG2 W2 H2 F1:1 C420p10\n").err().unwrap();
        assert!(err.to_string().contains("C420p10"), "{err}");
        assert!(reader(b"YUV4MPEG W2 H2 F1:1\n").is_err());
    }

    #[test]
    fn truncated_payload_reports_frame_index() {
        let mut bytes = b"YUV4MPEG2 W2 H2 F1:1\nFRAME\n".to_vec();
        bytes.extend_from_slice(&[0; 6]);
        bytes.extend_from_slice(b"FRAME\n");
        bytes.extend_from_slice(&[0; 5]);
        let items: Vec<_> = reader(&bytes).unwrap().collect();
        assert_eq!(items.len(), 2);
        assert!(items[0].is_ok());
        match &items[1] {
            Err(FrameError::Truncated { index, .. }) => assert_eq!(*index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mono_and_444_layouts() {
        let mut bytes = b"YUV4MPEG2 W2 H1 F1:1 Cmono\nFRAME\n".to_vec();
        bytes.extend_from_slice(&[7, 8]);
        let frames: Vec<_> = reader(&bytes).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(frames[0].pixels(), &[7, 8]);

        let mut bytes = b"YUV4MPEG2 W2 H1 F1:1 C444\nFRAME Ixyz\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 0, 0, 0, 0]);
        let frames: Vec<_> = reader(&bytes).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(frames[0].pixels(), &[1, 2]);
    }

    #[test]
    fn round_trip_through_file_preserves_luma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.y4m");
        let fps = Fps::integer(30).unwrap();
        let planes: Vec<LumaFrame> = (0..4u8)
            .map(|k| {
                let px = (0..15u8)
                    .map(|i| i.wrapping_mul(17).wrapping_add(k * 31))
                    .collect();
                LumaFrame::new(5, 3, px).unwrap()
            })
            .collect();
        write_y4m(&path, 5, 3, fps, &planes).unwrap();

        let r = open_y4m(&path).unwrap();
        assert_eq!(r.info().frame_count, Some(4));
        let back: Vec<_> = r.map(|f| to_luma(&f.unwrap()).unwrap()).collect();
        assert_eq!(back.len(), 4);
        for (a, b) in planes.iter().zip(&back) {
            assert_eq!(a.pixels, b.pixels);
        }
        assert_eq!(back[3].timestamp, fps.timestamp(3));
    }
}

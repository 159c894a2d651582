//! Newline-delimited framing of serialized messages on a TCP byte stream.
//!
//! Each frame is one UTF-8 line terminated by a single LF (0x0A). There is
//! no length prefix and no CR handling; a CR is frame content.

use std::collections::VecDeque;
use std::io::{self, Read, Write};

use thiserror::Error;

pub const DEFAULT_MAX_FRAME_BYTES: usize = 65_536;
pub const FRAME_TERMINATOR: u8 = b'\n';

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame payload contains a newline")]
    ContainsNewline,
    #[error("frame exceeds {max} bytes without a terminator")]
    FrameTooLarge { max: usize },
    #[error("frame is not valid UTF-8")]
    InvalidUtf8,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Returns the UTF-8 bytes of `serialized` followed by LF.
pub fn encode_frame(serialized: &str) -> Result<Vec<u8>, WireError> {
    if serialized.as_bytes().contains(&FRAME_TERMINATOR) {
        return Err(WireError::ContainsNewline);
    }
    let mut frame = Vec::with_capacity(serialized.len() + 1);
    frame.extend_from_slice(serialized.as_bytes());
    frame.push(FRAME_TERMINATOR);
    Ok(frame)
}

/// Encodes and writes one frame with a single `write_all`.
pub fn write_frame<W: Write + ?Sized>(writer: &mut W, serialized: &str) -> Result<(), WireError> {
    writer.write_all(&encode_frame(serialized)?)?;
    Ok(())
}

/// Incremental frame decoder.
///
/// Output is independent of how the stream is chunked. Any frame longer
/// than `max_frame_bytes` (terminator excluded) is rejected, and is detected
/// as soon as the buffered partial frame crosses the limit. Errors are fatal:
/// the decoder drops its buffer and the connection should be closed.
#[derive(Debug)]
pub struct FrameDecoder {
    buffer: Vec<u8>,
    max_frame_bytes: usize,
}

impl Default for FrameDecoder {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_FRAME_BYTES)
    }
}

impl FrameDecoder {
    pub fn new(max_frame_bytes: usize) -> Self {
        assert!(max_frame_bytes > 0, "max_frame_bytes must be positive");
        Self {
            buffer: Vec::new(),
            max_frame_bytes,
        }
    }

    pub fn max_frame_bytes(&self) -> usize {
        self.max_frame_bytes
    }

    /// Bytes of the incomplete trailing frame.
    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn feed(&mut self, chunk: &[u8]) -> Result<Vec<String>, WireError> {
        let mut frames = Vec::new();
        let mut rest = chunk;
        while let Some(lf) = rest.iter().position(|&b| b == FRAME_TERMINATOR) {
            if self.buffer.len() + lf > self.max_frame_bytes {
                return Err(self.fail(WireError::FrameTooLarge {
                    max: self.max_frame_bytes,
                }));
            }
            let frame = if self.buffer.is_empty() {
                rest[..lf].to_vec()
            } else {
                self.buffer.extend_from_slice(&rest[..lf]);
                std::mem::take(&mut self.buffer)
            };
            match String::from_utf8(frame) {
                Ok(text) => frames.push(text),
                Err(_) => return Err(self.fail(WireError::InvalidUtf8)),
            }
            rest = &rest[lf + 1..];
        }
        if self.buffer.len() + rest.len() > self.max_frame_bytes {
            return Err(self.fail(WireError::FrameTooLarge {
                max: self.max_frame_bytes,
            }));
        }
        self.buffer.extend_from_slice(rest);
        Ok(frames)
    }

    fn fail(&mut self, err: WireError) -> WireError {
        self.buffer = Vec::new();
        err
    }
}

/// Blocking reader yielding one frame at a time from a byte stream.
pub struct FrameReader<R> {
    inner: R,
    decoder: FrameDecoder,
    pending: VecDeque<String>,
    read_buf: Box<[u8]>,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R, max_frame_bytes: usize) -> Self {
        Self {
            inner,
            decoder: FrameDecoder::new(max_frame_bytes),
            pending: VecDeque::new(),
            read_buf: vec![0; 16 * 1024].into_boxed_slice(),
        }
    }

    /// Next frame, or `None` on clean end of stream. A partial frame left
    /// at end of stream is discarded.
    pub fn next_frame(&mut self) -> Result<Option<String>, WireError> {
        loop {
            if let Some(frame) = self.pending.pop_front() {
                return Ok(Some(frame));
            }
            let n = match self.inner.read(&mut self.read_buf) {
                Ok(0) => return Ok(None),
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            };
            self.pending.extend(self.decoder.feed(&self.read_buf[..n])?);
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn split_reference(stream: &[u8]) -> Vec<String> {
        let mut parts: Vec<&[u8]> = stream.split(|&b| b == b'\n').collect();
        parts.pop(); // unterminated tail
        parts
            .into_iter()
            .map(|p| String::from_utf8(p.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn encode_appends_single_lf() {
        assert_eq!(encode_frame("<tid a/>").unwrap(), b"<tid a/>\n");
        assert_eq!(encode_frame("").unwrap(), b"\n");
        assert!(matches!(
            encode_frame("a\nb"),
            Err(WireError::ContainsNewline)
        ));
    }

    #[test]
    fn encode_length_is_utf8_length_plus_one() {
        let s = "<tid description=\"µV – ß\"/>";
        assert_eq!(encode_frame(s).unwrap().len(), s.len() + 1);
    }

    #[test]
    fn reassembles_across_chunks() {
        let mut d = FrameDecoder::default();
        assert!(d.feed(b"<tid a").unwrap().is_empty());
        assert_eq!(d.buffered(), 6);
        assert_eq!(d.feed(b"/>\n").unwrap(), vec!["<tid a/>"]);
        assert_eq!(d.buffered(), 0);
    }

    #[test]
    fn several_frames_in_one_chunk() {
        let mut d = FrameDecoder::default();
        assert_eq!(d.feed(b"A\nB\n").unwrap(), vec!["A", "B"]);
        assert_eq!(d.feed(b"\n").unwrap(), vec![""]);
        assert!(d.feed(b"").unwrap().is_empty());
    }

    #[test]
    fn cr_is_content() {
        let mut d = FrameDecoder::default();
        assert_eq!(d.feed(b"A\r\n").unwrap(), vec!["A\r"]);
    }

    #[test]
    fn oversized_frame_rejected() {
        let mut d = FrameDecoder::default();
        let big = vec![b'x'; DEFAULT_MAX_FRAME_BYTES + 1];
        assert!(matches!(
            d.feed(&big),
            Err(WireError::FrameTooLarge {
                max: DEFAULT_MAX_FRAME_BYTES
            })
        ));

        // exactly at the limit is fine
        let mut d = FrameDecoder::default();
        let mut exact = vec![b'x'; DEFAULT_MAX_FRAME_BYTES];
        assert!(d.feed(&exact).unwrap().is_empty());
        assert_eq!(d.feed(b"\n").unwrap()[0].len(), DEFAULT_MAX_FRAME_BYTES);

        // oversized even when the terminator arrives in the same chunk
        let mut d = FrameDecoder::default();
        exact.push(b'x');
        exact.push(b'\n');
        assert!(matches!(
            d.feed(&exact),
            Err(WireError::FrameTooLarge { .. })
        ));
    }

    #[test]
    fn oversized_detected_across_chunks() {
        let mut d = FrameDecoder::new(10);
        assert!(d.feed(b"12345").unwrap().is_empty());
        assert!(d.feed(b"67890").unwrap().is_empty());
        assert!(matches!(
            d.feed(b"1"),
            Err(WireError::FrameTooLarge { max: 10 })
        ));
        assert_eq!(d.buffered(), 0);
    }

    #[test]
    fn invalid_utf8_rejected() {
        let mut d = FrameDecoder::default();
        assert!(matches!(d.feed(b"\xff\xfe\n"), Err(WireError::InvalidUtf8)));
    }

    #[test]
    fn utf8_split_inside_code_point() {
        let bytes = "µ\n".as_bytes();
        let mut d = FrameDecoder::default();
        assert!(d.feed(&bytes[..1]).unwrap().is_empty());
        assert_eq!(d.feed(&bytes[1..]).unwrap(), vec!["µ"]);
    }

    #[test]
    fn frame_reader_over_cursor() {
        let data = b"one\ntwo\nthree".to_vec();
        let mut r = FrameReader::new(io::Cursor::new(data), 64);
        assert_eq!(r.next_frame().unwrap().as_deref(), Some("one"));
        assert_eq!(r.next_frame().unwrap().as_deref(), Some("two"));
        assert_eq!(r.next_frame().unwrap(), None);
    }

    proptest! {
        #[test]
        fn chunking_invariance(
            frames in prop::collection::vec("[^\n]{0,40}", 0..20),
            tail in "[^\n]{0,10}",
            cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..12),
        ) {
            let mut stream = Vec::new();
            for f in &frames {
                stream.extend(encode_frame(f).unwrap());
            }
            stream.extend_from_slice(tail.as_bytes());

            let mut points: Vec<usize> = cuts.iter().map(|i| i.index(stream.len() + 1)).collect();
            points.sort_unstable();
            let mut d = FrameDecoder::default();
            let mut out = Vec::new();
            let mut start = 0;
            for p in points.into_iter().chain(std::iter::once(stream.len())) {
                out.extend(d.feed(&stream[start..p]).unwrap());
                start = p;
            }
            prop_assert_eq!(&out, &split_reference(&stream));
            prop_assert_eq!(out, frames);
            prop_assert_eq!(d.buffered(), tail.len());
        }

        #[test]
        fn encode_then_feed_is_identity(s in "[^\n]{0,200}") {
            let mut d = FrameDecoder::default();
            prop_assert_eq!(d.feed(&encode_frame(&s).unwrap()).unwrap(), vec![s]);
        }
    }
}

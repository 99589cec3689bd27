//! Length-prefixed frames for app-capable phones.
//!
//! A frame is a 4-byte big-endian payload length followed by that many bytes
//! of UTF-8 JSON: `{"body":...,"kind":"...","session":...}` with keys sorted.
//! Payloads above 64 KiB are refused in both directions.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ids::SessionId;
use crate::journal::canonical_json;

pub const MAX_FRAME_PAYLOAD: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppFrame {
    pub kind: String,
    pub session: Option<SessionId>,
    pub body: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("frame payload of {0} bytes exceeds the 64 KiB limit")]
    Oversized(usize),
    #[error("trailing bytes after frame")]
    Trailing,
    #[error("malformed frame payload: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub fn encode_frame(frame: &AppFrame) -> Result<Vec<u8>, FrameError> {
    let payload = canonical_json(frame).into_bytes();
    if payload.len() > MAX_FRAME_PAYLOAD {
        return Err(FrameError::Oversized(payload.len()));
    }
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes exactly one frame occupying the whole buffer.
pub fn decode_frame(bytes: &[u8]) -> Result<AppFrame, FrameError> {
    let (frame, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FrameError::Trailing);
    }
    Ok(frame)
}

/// Decodes the first frame in `bytes`, returning it and the bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(AppFrame, usize), FrameError> {
    if bytes.len() < 4 {
        return Err(FrameError::Truncated { needed: 4, have: bytes.len() });
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_FRAME_PAYLOAD {
        return Err(FrameError::Oversized(len));
    }
    let end = 4 + len;
    if bytes.len() < end {
        return Err(FrameError::Truncated { needed: end, have: bytes.len() });
    }
    Ok((parse_payload(&bytes[4..end])?, end))
}

fn parse_payload(payload: &[u8]) -> Result<AppFrame, FrameError> {
    let text = std::str::from_utf8(payload).map_err(|e| FrameError::Malformed(e.to_string()))?;
    serde_json::from_str(text).map_err(|e| FrameError::Malformed(e.to_string()))
}

/// Reads one frame from a stream. `Ok(None)` on clean end of stream.
pub fn read_frame(reader: &mut impl Read) -> Result<Option<AppFrame>, FrameError> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match reader.read(&mut header[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(FrameError::Truncated { needed: 4, have: got }),
            n => got += n,
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_PAYLOAD {
        return Err(FrameError::Oversized(len));
    }
    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated { needed: 4 + len, have: 4 },
        _ => FrameError::Io(e),
    })?;
    parse_payload(&payload).map(Some)
}

pub fn write_frame(writer: &mut impl Write, frame: &AppFrame) -> Result<(), FrameError> {
    writer.write_all(&encode_frame(frame)?)?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> AppFrame {
        AppFrame { kind: "request".into(), session: Some(SessionId(4)), body: json!({"from": 3, "quota": "FOOD"}) }
    }

    #[test]
    fn encode_layout() {
        let bytes = encode_frame(&sample()).unwrap();
        let text = std::str::from_utf8(&bytes[4..]).unwrap();
        assert_eq!(text, r#"{"body":{"from":3,"quota":"FOOD"},"kind":"request","session":4}"#);
        assert_eq!(u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize, text.len());
        assert_eq!(decode_frame(&bytes).unwrap(), sample());
    }

    #[test]
    fn truncated_and_oversized_are_rejected() {
        let bytes = encode_frame(&sample()).unwrap();
        assert!(matches!(decode_frame(&bytes[..bytes.len() - 1]), Err(FrameError::Truncated { .. })));
        assert!(matches!(decode_frame(&bytes[..2]), Err(FrameError::Truncated { .. })));
        let huge = (MAX_FRAME_PAYLOAD as u32 + 1).to_be_bytes();
        assert!(matches!(decode_frame(&huge), Err(FrameError::Oversized(_))));
        let big = AppFrame { kind: "x".into(), session: None, body: json!("a".repeat(MAX_FRAME_PAYLOAD)) };
        assert!(matches!(encode_frame(&big), Err(FrameError::Oversized(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_frame(&extra), Err(FrameError::Trailing)));
    }

    #[test]
    fn stream_read_write() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &sample()).unwrap();
        write_frame(&mut buf, &sample()).unwrap();
        let mut cursor = io::Cursor::new(buf);
        assert_eq!(read_frame(&mut cursor).unwrap(), Some(sample()));
        assert_eq!(read_frame(&mut cursor).unwrap(), Some(sample()));
        assert_eq!(read_frame(&mut cursor).unwrap(), None);
    }
}

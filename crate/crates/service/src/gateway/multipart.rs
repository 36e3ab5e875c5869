//! Incremental parser for `multipart/x-mixed-replace` camera streams.

use bytes::{Buf, BytesMut};

#[derive(Debug, Clone, PartialEq)]
pub struct StreamPart {
    pub tick: Option<u64>,
    pub time: Option<f64>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MultipartError {
    #[error("expected boundary `--{0}`")]
    Boundary(String),
    #[error("part header `{0}` is malformed")]
    Header(String),
    #[error("part has no Content-Length")]
    MissingLength,
}

/// Feed bytes as they arrive, then drain complete parts.
#[derive(Debug)]
pub struct MultipartParser {
    delimiter: Vec<u8>,
    buf: BytesMut,
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

impl MultipartParser {
    pub fn new(boundary: &str) -> Self {
        Self {
            delimiter: format!("--{boundary}\r\n").into_bytes(),
            buf: BytesMut::new(),
        }
    }

    pub fn feed(&mut self, chunk: &[u8]) {
        self.buf.extend_from_slice(chunk);
    }

    pub fn next_part(&mut self) -> Result<Option<StreamPart>, MultipartError> {
        // Parts are separated by CRLF after the body; skip it before a delimiter.
        while self.buf.starts_with(b"\r\n") {
            self.buf.advance(2);
        }
        if self.buf.len() < self.delimiter.len() {
            return Ok(None);
        }
        if !self.buf.starts_with(&self.delimiter) {
            let boundary =
                String::from_utf8_lossy(&self.delimiter[2..self.delimiter.len() - 2]).into_owned();
            return Err(MultipartError::Boundary(boundary));
        }
        let head_start = self.delimiter.len();
        let Some(head_len) = find(&self.buf[head_start..], b"\r\n\r\n") else {
            return Ok(None);
        };
        let head =
            String::from_utf8_lossy(&self.buf[head_start..head_start + head_len]).into_owned();
        let mut length = None;
        let mut tick = None;
        let mut time = None;
        for line in head.split("\r\n") {
            let (name, value) = line
                .split_once(':')
                .ok_or_else(|| MultipartError::Header(line.to_string()))?;
            let value = value.trim();
            let bad = || MultipartError::Header(line.to_string());
            match name.trim().to_ascii_lowercase().as_str() {
                "content-length" => length = Some(value.parse::<usize>().map_err(|_| bad())?),
                "x-tick" => tick = Some(value.parse::<u64>().map_err(|_| bad())?),
                "x-sim-time" => time = Some(value.parse::<f64>().map_err(|_| bad())?),
                _ => {}
            }
        }
        let length = length.ok_or(MultipartError::MissingLength)?;
        let body_start = head_start + head_len + 4;
        if self.buf.len() < body_start + length {
            return Ok(None);
        }
        self.buf.advance(body_start);
        let body = self.buf.split_to(length).to_vec();
        Ok(Some(StreamPart { tick, time, body }))
    }
}

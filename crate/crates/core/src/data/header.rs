//! Line-oriented `key = value` manifest shared by the dataset container and
//! checkpoint files.
//!
//! A file starts with a magic line, continues with `key = value` lines, and
//! the line `end` closes the header. Binary payload begins on the next byte.
//! Keys may repeat; order is preserved.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) const END: &str = "end";

#[derive(Debug, Default)]
pub(crate) struct HeaderWriter {
    text: String,
}

impl HeaderWriter {
    pub fn new(magic: &str) -> Self {
        Self {
            text: format!("{magic}\n"),
        }
    }

    pub fn field(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.text.push_str(key);
        self.text.push_str(" = ");
        self.text.push_str(&value.to_string());
        self.text.push('\n');
        self
    }

    /// Space-separated list; each element formatted with `Display`, which
    /// for floats is the shortest string that parses back exactly.
    pub fn list<T: Display>(&mut self, key: &str, values: &[T]) -> &mut Self {
        let joined = values.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        self.field(key, joined)
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.text.push_str(END);
        self.text.push('\n');
        self.text.into_bytes()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Entry {
    pub key: String,
    pub value: String,
    pub offset: u64,
}

#[derive(Debug)]
pub(crate) struct Header {
    pub entries: Vec<Entry>,
    /// Byte offset where the binary payload starts.
    pub payload_offset: usize,
}

impl Header {
    pub fn parse(bytes: &[u8], magic: &str) -> Result<Self> {
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<(u64, String)> {
            let start = *pos;
            let rel = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::format(start as u64, "truncated header (no newline)"))?;
            *pos = start + rel + 1;
            let line = std::str::from_utf8(&bytes[start..start + rel])
                .map_err(|_| Error::format(start as u64, "header line is not UTF-8"))?;
            Ok((start as u64, line.to_string()))
        };

        let (_, first) = next_line(&mut pos)?;
        if first != magic {
            return Err(Error::format(0, format!("bad magic `{first}`, expected `{magic}`")));
        }
        let mut entries = Vec::new();
        loop {
            let (offset, line) = next_line(&mut pos)?;
            if line == END {
                break;
            }
            let (key, value) = line
                .split_once(" = ")
                .or_else(|| line.strip_suffix(" =").map(|k| (k, "")))
                .ok_or_else(|| Error::format(offset, format!("malformed header line `{line}`")))?;
            entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                offset,
            });
        }
        Ok(Self {
            entries,
            payload_offset: pos,
        })
    }

    pub fn entry(&self, key: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.key == key)
            .ok_or_else(|| Error::format(self.payload_offset as u64, format!("missing header key `{key}`")))
    }

    pub fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.key == key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let e = self.entry(key)?;
        e.value
            .parse()
            .map_err(|_| Error::format(e.offset, format!("cannot parse `{key}` value `{}`", e.value)))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let e = self.entry(key)?;
        parse_list(e)
    }
}

pub(crate) fn parse_list<T: FromStr>(e: &Entry) -> Result<Vec<T>> {
    e.value
        .split_whitespace()
        .map(|tok| {
            tok.parse()
                .map_err(|_| Error::format(e.offset, format!("bad element `{tok}` in `{}`", e.key)))
        })
        .collect()
}

/// Reads `count` little-endian f32 values starting at `*pos`.
pub(crate) fn read_f32s(bytes: &[u8], pos: &mut usize, count: usize) -> Result<Vec<f32>> {
    let need = count
        .checked_mul(4)
        .ok_or_else(|| Error::format(*pos as u64, "payload size overflow"))?;
    if bytes.len() < *pos + need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: need {need} bytes at offset {}", *pos),
        ));
    }
    let out = bytes[*pos..*pos + need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    *pos += need;
    Ok(out)
}

pub(crate) fn write_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

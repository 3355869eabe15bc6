//! Canonical byte encoding shared by every hashed or exported structure.
//!
//! The rules are deliberately small and uniform:
//!
//! - Every field is written as a 4-byte big-endian length followed by the
//!   field's raw bytes, in the declared field order of the owning structure.
//! - Integers are fixed-width big-endian payloads under the same rule
//!   (`u32` → length 4, `u64` → length 8, `u128` → length 16).
//! - Strings are their UTF-8 bytes.
//! - String maps are written as a `u32` pair count followed by the pairs in
//!   ascending key order, each key and value a field of its own.
//! - Lists are written as a `u32` element count followed by the elements.
//!
//! There is exactly one encoding for a given value, so hashing the encoding
//! is a stable commitment.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("input truncated: needed {needed} more bytes at offset {at}")]
    Truncated { at: usize, needed: usize },
    #[error("fixed-width field has length {got}, expected {expected}")]
    BadWidth { expected: usize, got: usize },
    #[error("field is not valid UTF-8")]
    Utf8,
    #[error("{0} trailing bytes after final field")]
    TrailingBytes(usize),
}

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> ByteWriter {
        ByteWriter::default()
    }

    pub fn put_bytes(&mut self, field: &[u8]) -> &mut Self {
        let len = u32::try_from(field.len()).expect("field larger than 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn put_str(&mut self, s: &str) -> &mut Self {
        self.put_bytes(s.as_bytes())
    }

    pub fn put_u32(&mut self, v: u32) -> &mut Self {
        self.put_bytes(&v.to_be_bytes())
    }

    pub fn put_u64(&mut self, v: u64) -> &mut Self {
        self.put_bytes(&v.to_be_bytes())
    }

    pub fn put_u128(&mut self, v: u128) -> &mut Self {
        self.put_bytes(&v.to_be_bytes())
    }

    pub fn put_map(&mut self, map: &BTreeMap<String, String>) -> &mut Self {
        self.put_u32(map.len() as u32);
        for (k, v) in map {
            self.put_str(k);
            self.put_str(v);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> ByteReader<'a> {
        ByteReader { data, pos: 0 }
    }

    fn take_raw(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.data.len() - self.pos < n {
            return Err(CodecError::Truncated {
                at: self.pos,
                needed: n - (self.data.len() - self.pos),
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn take_bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let len_bytes = self.take_raw(4)?;
        let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        self.take_raw(len)
    }

    pub fn take_str(&mut self) -> Result<String, CodecError> {
        let bytes = self.take_bytes()?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::Utf8)
    }

    fn take_fixed<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let bytes = self.take_bytes()?;
        if bytes.len() != N {
            return Err(CodecError::BadWidth {
                expected: N,
                got: bytes.len(),
            });
        }
        Ok(bytes.try_into().unwrap())
    }

    pub fn take_u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take_fixed::<4>()?))
    }

    pub fn take_u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take_fixed::<8>()?))
    }

    pub fn take_u128(&mut self) -> Result<u128, CodecError> {
        Ok(u128::from_be_bytes(self.take_fixed::<16>()?))
    }

    pub fn take_array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        self.take_fixed::<N>()
    }

    pub fn take_map(&mut self) -> Result<BTreeMap<String, String>, CodecError> {
        let count = self.take_u32()?;
        let mut map = BTreeMap::new();
        for _ in 0..count {
            let k = self.take_str()?;
            let v = self.take_str()?;
            map.insert(k, v);
        }
        Ok(map)
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_field_kinds() {
        let mut map = BTreeMap::new();
        map.insert("b".to_string(), "2".to_string());
        map.insert("a".to_string(), "1".to_string());

        let mut w = ByteWriter::new();
        w.put_bytes(b"raw")
            .put_str("text")
            .put_u32(7)
            .put_u64(1 << 40)
            .put_u128(1 << 90)
            .put_map(&map);
        let bytes = w.finish();

        let mut r = ByteReader::new(&bytes);
        assert_eq!(r.take_bytes().unwrap(), b"raw");
        assert_eq!(r.take_str().unwrap(), "text");
        assert_eq!(r.take_u32().unwrap(), 7);
        assert_eq!(r.take_u64().unwrap(), 1 << 40);
        assert_eq!(r.take_u128().unwrap(), 1 << 90);
        assert_eq!(r.take_map().unwrap(), map);
        r.expect_end().unwrap();
    }

    #[test]
    fn layout_is_length_prefixed_big_endian() {
        let mut w = ByteWriter::new();
        w.put_str("ab").put_u64(3);
        assert_eq!(
            w.finish(),
            vec![
                0, 0, 0, 2, b'a', b'b', // "ab"
                0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0, 3, // u64 3
            ]
        );
    }

    #[test]
    fn map_encoding_is_key_sorted() {
        let mut m1 = BTreeMap::new();
        m1.insert("z".to_string(), "1".to_string());
        m1.insert("a".to_string(), "2".to_string());
        let mut w1 = ByteWriter::new();
        w1.put_map(&m1);

        // Same pairs inserted in the opposite order encode identically.
        let mut m2 = BTreeMap::new();
        m2.insert("a".to_string(), "2".to_string());
        m2.insert("z".to_string(), "1".to_string());
        let mut w2 = ByteWriter::new();
        w2.put_map(&m2);

        assert_eq!(w1.finish(), w2.finish());
    }

    #[test]
    fn truncation_and_trailing_are_reported() {
        let mut w = ByteWriter::new();
        w.put_str("hello");
        let mut bytes = w.finish();

        let mut r = ByteReader::new(&bytes[..6]);
        assert!(matches!(
            r.take_bytes(),
            Err(CodecError::Truncated { .. })
        ));

        bytes.push(0xff);
        let mut r = ByteReader::new(&bytes);
        r.take_str().unwrap();
        assert_eq!(r.expect_end(), Err(CodecError::TrailingBytes(1)));
    }

    #[test]
    fn fixed_width_mismatch_is_rejected() {
        let mut w = ByteWriter::new();
        w.put_bytes(&[1, 2, 3]);
        let bytes = w.finish();
        let mut r = ByteReader::new(&bytes);
        assert_eq!(
            r.take_u32(),
            Err(CodecError::BadWidth {
                expected: 4,
                got: 3
            })
        );
    }
}

//! Bit-exact byte layout of a [`RecMessage`].
//!
//! ```text
//! offset 0   seed          8 bytes, big-endian u64
//! offset 8   group count   2 bytes, big-endian u16
//! offset 10  indices       `count` fields of `bits` bits each, packed
//!                          most-significant bit first, zero-padded to a byte
//! ```
//!
//! The bit width is not on the wire; both ends take it from the codec
//! configuration.

use super::RecMessage;
use crate::error::{Error, Result};

pub const HEADER_BYTES: usize = 10;

pub fn payload_bytes(groups: usize, bits: u32) -> usize {
    (groups * bits as usize).div_ceil(8)
}

pub fn to_bytes(msg: &RecMessage, bits: u32) -> Result<Vec<u8>> {
    let count = u16::try_from(msg.indices.len()).map_err(|_| {
        Error::InvalidConfig(format!(
            "{} groups do not fit the u16 count",
            msg.indices.len()
        ))
    })?;
    let mut out = Vec::with_capacity(HEADER_BYTES + payload_bytes(msg.indices.len(), bits));
    out.extend_from_slice(&msg.seed.to_be_bytes());
    out.extend_from_slice(&count.to_be_bytes());
    let mut writer = BitWriter::new(out);
    for &index in &msg.indices {
        if bits < 32 && index >> bits != 0 {
            return Err(Error::InvalidConfig(format!(
                "index {index} does not fit in {bits} bits"
            )));
        }
        writer.write(index, bits);
    }
    Ok(writer.finish())
}

pub fn from_bytes(bytes: &[u8], bits: u32) -> Result<RecMessage> {
    if bytes.len() < 8 {
        return Err(malformed(bytes.len(), "truncated seed"));
    }
    if bytes.len() < HEADER_BYTES {
        return Err(malformed(bytes.len(), "truncated group count"));
    }
    let seed = u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes"));
    let count = usize::from(u16::from_be_bytes([bytes[8], bytes[9]]));
    let need = HEADER_BYTES + payload_bytes(count, bits);
    if bytes.len() < need {
        return Err(malformed(
            bytes.len(),
            &format!("truncated indices: {count} groups need {need} bytes"),
        ));
    }
    if bytes.len() > need {
        return Err(malformed(need, "trailing bytes after the last index"));
    }
    let mut reader = BitReader {
        bytes: &bytes[HEADER_BYTES..],
        pos: 0,
    };
    let indices: Vec<u32> = (0..count).map(|_| reader.read(bits)).collect();
    let used = count * bits as usize;
    if !used.is_multiple_of(8) {
        let last = bytes[need - 1];
        if last & (0xffu8 >> (used % 8)) != 0 {
            return Err(malformed(need - 1, "non-zero padding bits"));
        }
    }
    Ok(RecMessage { seed, indices })
}

fn malformed(offset: usize, reason: &str) -> Error {
    Error::MalformedMessage {
        offset,
        reason: reason.to_string(),
    }
}

struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    fn new(out: Vec<u8>) -> Self {
        Self {
            out,
            acc: 0,
            filled: 0,
        }
    }

    fn write(&mut self, value: u32, bits: u32) {
        for i in (0..bits).rev() {
            self.acc = (self.acc << 1) | u64::from((value >> i) & 1);
            self.filled += 1;
            if self.filled == 8 {
                self.out.push(self.acc as u8);
                self.acc = 0;
                self.filled = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.out.push((self.acc << (8 - self.filled)) as u8);
        }
        self.out
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn read(&mut self, bits: u32) -> u32 {
        let mut v = 0u32;
        for _ in 0..bits {
            let bit = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | u32::from(bit);
            self.pos += 1;
        }
        v
    }
}

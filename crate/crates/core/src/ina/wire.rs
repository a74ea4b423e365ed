//! Length-prefixed frames of the aggregation protocol.
//!
//! Every message is `u32` little-endian length (tag byte included), a tag
//! byte, then a body of little-endian integers.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};

/// Largest number of elements carried by one chunk frame.
pub const MAX_CHUNK: usize = 256;
const MAX_FRAME: u32 = 1 << 16;

const TAG_HELLO: u8 = 1;
const TAG_CHUNK: u8 = 2;
const TAG_RESULT: u8 = 3;
const TAG_ABORT: u8 = 4;
const TAG_BYE: u8 = 5;

/// Session parameters announced by each worker on connect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hello {
    pub session_id: u64,
    pub worker_id: u16,
    pub n_workers: u16,
    pub d: u64,
    pub chunk_size: u16,
}

/// One chunk of NAT8C-coded elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkFrame {
    pub session_id: u64,
    pub chunk_index: u64,
    pub worker_id: u16,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Hello(Hello),
    /// Worker to aggregator.
    Chunk(ChunkFrame),
    /// Aggregator to workers.
    Result(ChunkFrame),
    Abort { session_id: u64, reason: String },
    /// Orderly end of a worker's participation.
    Bye,
}

fn put_chunk(out: &mut Vec<u8>, f: &ChunkFrame) {
    out.extend_from_slice(&f.session_id.to_le_bytes());
    out.extend_from_slice(&f.chunk_index.to_le_bytes());
    out.extend_from_slice(&f.worker_id.to_le_bytes());
    out.extend_from_slice(&(f.payload.len() as u16).to_le_bytes());
    out.extend_from_slice(&f.payload);
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        let tag = match self {
            Message::Hello(h) => {
                body.extend_from_slice(&h.session_id.to_le_bytes());
                body.extend_from_slice(&h.worker_id.to_le_bytes());
                body.extend_from_slice(&h.n_workers.to_le_bytes());
                body.extend_from_slice(&h.d.to_le_bytes());
                body.extend_from_slice(&h.chunk_size.to_le_bytes());
                TAG_HELLO
            }
            Message::Chunk(f) => {
                put_chunk(&mut body, f);
                TAG_CHUNK
            }
            Message::Result(f) => {
                put_chunk(&mut body, f);
                TAG_RESULT
            }
            Message::Abort { session_id, reason } => {
                body.extend_from_slice(&session_id.to_le_bytes());
                body.extend_from_slice(reason.as_bytes());
                TAG_ABORT
            }
            Message::Bye => TAG_BYE,
        };
        let mut out = Vec::with_capacity(5 + body.len());
        out.extend_from_slice(&(body.len() as u32 + 1).to_le_bytes());
        out.push(tag);
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(tag: u8, body: &[u8]) -> Result<Self> {
        let mut r = Cursor { data: body, pos: 0 };
        let msg = match tag {
            TAG_HELLO => Message::Hello(Hello {
                session_id: r.u64()?,
                worker_id: r.u16()?,
                n_workers: r.u16()?,
                d: r.u64()?,
                chunk_size: r.u16()?,
            }),
            TAG_CHUNK | TAG_RESULT => {
                let session_id = r.u64()?;
                let chunk_index = r.u64()?;
                let worker_id = r.u16()?;
                let count = r.u16()? as usize;
                if count > MAX_CHUNK {
                    return Err(Error::Protocol(format!("chunk of {count} elements exceeds {MAX_CHUNK}")));
                }
                let payload = r.bytes(count)?.to_vec();
                let f = ChunkFrame {
                    session_id,
                    chunk_index,
                    worker_id,
                    payload,
                };
                if tag == TAG_CHUNK {
                    Message::Chunk(f)
                } else {
                    Message::Result(f)
                }
            }
            TAG_ABORT => {
                let session_id = r.u64()?;
                let rest = r.bytes(body.len() - r.pos)?;
                Message::Abort {
                    session_id,
                    reason: String::from_utf8_lossy(rest).into_owned(),
                }
            }
            TAG_BYE => Message::Bye,
            other => return Err(Error::Protocol(format!("unknown message tag {other}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Protocol(format!("{} trailing bytes in message", body.len() - r.pos)));
        }
        Ok(msg)
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Protocol("truncated message body".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().expect("2 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }
}

pub fn write_message<W: Write>(w: &mut W, m: &Message) -> Result<()> {
    w.write_all(&m.encode())?;
    Ok(())
}

/// Reads one message; `Ok(None)` on a clean end of stream between messages.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len);
    if len == 0 || len > MAX_FRAME {
        return Err(Error::Protocol(format!("frame length {len} out of range")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Message::decode(buf[0], &buf[1..]).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_all_messages() {
        let msgs = [
            Message::Hello(Hello {
                session_id: 9,
                worker_id: 1,
                n_workers: 4,
                d: 1000,
                chunk_size: 256,
            }),
            Message::Chunk(ChunkFrame {
                session_id: 9,
                chunk_index: 3,
                worker_id: 2,
                payload: vec![50, 0x80, 0x41],
            }),
            Message::Result(ChunkFrame {
                session_id: 9,
                chunk_index: 3,
                worker_id: u16::MAX,
                payload: vec![],
            }),
            Message::Abort {
                session_id: 9,
                reason: "worker 2 disconnected".into(),
            },
            Message::Bye,
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_message(&mut buf, m).unwrap();
        }
        let mut r = &buf[..];
        for m in &msgs {
            assert_eq!(read_message(&mut r).unwrap().as_ref(), Some(m));
        }
        assert_eq!(read_message(&mut r).unwrap(), None);
    }

    #[test]
    fn chunk_layout_is_little_endian() {
        let b = Message::Chunk(ChunkFrame {
            session_id: 1,
            chunk_index: 2,
            worker_id: 3,
            payload: vec![7],
        })
        .encode();
        assert_eq!(&b[..5], &[1 + 8 + 8 + 2 + 2 + 1, 0, 0, 0, TAG_CHUNK]);
        assert_eq!(&b[5..13], &1u64.to_le_bytes());
        assert_eq!(&b[21..23], &3u16.to_le_bytes());
        assert_eq!(&b[23..25], &1u16.to_le_bytes());
        assert_eq!(b[25], 7);
    }

    #[test]
    fn malformed_frames() {
        assert!(Message::decode(99, &[]).is_err());
        assert!(Message::decode(TAG_HELLO, &[0; 5]).is_err());
        let mut body = vec![0u8; 20];
        body[18..20].copy_from_slice(&300u16.to_le_bytes());
        assert!(Message::decode(TAG_CHUNK, &body).is_err());
        let mut r: &[u8] = &[0, 0, 0, 0];
        assert!(read_message(&mut r).is_err());
        let mut r: &[u8] = &[5, 0, 0, 0, 1];
        assert!(read_message(&mut r).is_err());
    }
}

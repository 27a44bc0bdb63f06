//! Byte layout of a frame:
//!
//! ```text
//! u32 BE   payload length L
//! u8       version (1)
//! u8       kind
//! u32 BE   round index
//! u16 BE   node id length, then that many UTF-8 bytes
//! ...      body
//! ```
//!
//! Integers are big-endian. Floating-point values, both scalars and array
//! elements, are IEEE-754 binary64 little-endian. A parameter array is a
//! `u32 BE` element count followed by the elements.
//!
//! Bodies by kind:
//!
//! | kind | body |
//! |------|------|
//! | 1 JOIN | `u64` N_k |
//! | 2 GLOBAL_MODEL | `u32` d, `u32` h, `u32` K, `f64` dropout, `f64` lr, `u32` epochs, `u32` batch, `f64` reg weight, `u64` seed, array θ |
//! | 3 LOCAL_UPDATE | `u64` N_k, `f64` training loss, array θ |
//! | 4 ROUND_RESULT | 32 bytes: SHA-256 of the aggregated θ |
//! | 5 SHUTDOWN | empty |
//! | 6 ERROR | `u16` code, `u32` length, UTF-8 message |

use std::io::{ErrorKind, Read, Write};

use thiserror::Error;

use super::{Body, Message, WireDirective, PROTOCOL_VERSION};

/// Default cap on the payload length of one frame.
pub const DEFAULT_MAX_FRAME: usize = 64 << 20;

const HEADER_LEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("incomplete frame: need {needed} bytes, have {available}")]
    Incomplete { needed: usize, available: usize },
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("protocol version {0} not supported")]
    VersionMismatch(u8),
    #[error("array declares {declared} values but {available} bytes remain")]
    CountMismatch { declared: usize, available: usize },
    #[error("frame of {size} bytes exceeds the {max} byte limit")]
    FrameTooLarge { size: usize, max: usize },
    #[error("string field is not valid UTF-8")]
    InvalidUtf8,
    #[error("{0} unexpected bytes after message body")]
    TrailingBytes(usize),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("node id of {0} bytes is longer than 65535")]
    NodeIdTooLong(usize),
}

impl CodecError {
    /// Stable numeric code, also sent in ERROR messages.
    pub fn code(&self) -> u16 {
        match self {
            CodecError::Incomplete { .. } => 1,
            CodecError::UnknownKind(_) => 2,
            CodecError::VersionMismatch(_) => 3,
            CodecError::CountMismatch { .. } => 4,
            CodecError::FrameTooLarge { .. } => 5,
            CodecError::InvalidUtf8 => 6,
            CodecError::TrailingBytes(_) => 7,
            CodecError::InvalidField(_) => 8,
            CodecError::NodeIdTooLong(_) => 9,
        }
    }
}

/// Errors from reading or writing frames on a stream.
#[derive(Debug, Error)]
pub enum FrameIoError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Stateless encoder/decoder; only the frame size cap is configurable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameCodec {
    pub max_frame: usize,
}

impl Default for FrameCodec {
    fn default() -> Self {
        FrameCodec { max_frame: DEFAULT_MAX_FRAME }
    }
}

/// Encodes with the default frame cap.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, CodecError> {
    FrameCodec::default().encode(msg)
}

/// Decodes one complete frame with the default frame cap.
pub fn decode_message(frame: &[u8]) -> Result<Message, CodecError> {
    FrameCodec::default().decode(frame)
}

impl FrameCodec {
    pub fn new(max_frame: usize) -> Self {
        FrameCodec { max_frame }
    }

    /// Length prefix followed by the payload.
    pub fn encode(&self, msg: &Message) -> Result<Vec<u8>, CodecError> {
        let payload = self.encode_payload(msg)?;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn encode_payload(&self, msg: &Message) -> Result<Vec<u8>, CodecError> {
        let id = msg.node_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| CodecError::NodeIdTooLong(id.len()))?;
        let mut out = Vec::with_capacity(8 + id.len() + body_len_hint(&msg.body));
        out.push(PROTOCOL_VERSION);
        out.push(msg.body.kind());
        out.extend_from_slice(&msg.round_index.to_be_bytes());
        out.extend_from_slice(&id_len.to_be_bytes());
        out.extend_from_slice(id);
        match &msg.body {
            Body::Join { num_samples } => out.extend_from_slice(&num_samples.to_be_bytes()),
            Body::GlobalModel { directive, params } => {
                let d = directive;
                for dim in [d.input_dim, d.hidden_dim, d.num_classes] {
                    out.extend_from_slice(&dim.to_be_bytes());
                }
                out.extend_from_slice(&d.dropout_rate.to_le_bytes());
                out.extend_from_slice(&d.learning_rate.to_le_bytes());
                out.extend_from_slice(&d.local_epochs.to_be_bytes());
                out.extend_from_slice(&d.batch_size.to_be_bytes());
                out.extend_from_slice(&d.reg_weight.to_le_bytes());
                out.extend_from_slice(&d.seed.to_be_bytes());
                self.put_array(&mut out, params)?;
            }
            Body::LocalUpdate { num_samples, train_loss, params } => {
                if *num_samples == 0 {
                    return Err(CodecError::InvalidField("LOCAL_UPDATE with zero samples".into()));
                }
                out.extend_from_slice(&num_samples.to_be_bytes());
                out.extend_from_slice(&train_loss.to_le_bytes());
                self.put_array(&mut out, params)?;
            }
            Body::RoundResult { digest } => out.extend_from_slice(digest),
            Body::Shutdown => {}
            Body::Error { code, message } => {
                out.extend_from_slice(&code.to_be_bytes());
                let len = u32::try_from(message.len()).map_err(|_| CodecError::InvalidField("error message too long".into()))?;
                out.extend_from_slice(&len.to_be_bytes());
                out.extend_from_slice(message.as_bytes());
            }
        }
        if out.len() > self.max_frame {
            return Err(CodecError::FrameTooLarge { size: out.len(), max: self.max_frame });
        }
        Ok(out)
    }

    fn put_array(&self, out: &mut Vec<u8>, values: &[f64]) -> Result<(), CodecError> {
        let bytes = values.len().checked_mul(8).filter(|&b| b <= self.max_frame);
        let (Some(_), Ok(count)) = (bytes, u32::try_from(values.len())) else {
            return Err(CodecError::FrameTooLarge { size: values.len().saturating_mul(8), max: self.max_frame });
        };
        out.extend_from_slice(&count.to_be_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    }

    /// Decodes a frame that must contain exactly one message.
    pub fn decode(&self, frame: &[u8]) -> Result<Message, CodecError> {
        if frame.len() < HEADER_LEN {
            return Err(CodecError::Incomplete { needed: HEADER_LEN, available: frame.len() });
        }
        let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
        if len > self.max_frame {
            return Err(CodecError::FrameTooLarge { size: len, max: self.max_frame });
        }
        let rest = &frame[HEADER_LEN..];
        if rest.len() < len {
            return Err(CodecError::Incomplete { needed: HEADER_LEN + len, available: frame.len() });
        }
        if rest.len() > len {
            return Err(CodecError::TrailingBytes(rest.len() - len));
        }
        self.decode_payload(rest)
    }

    pub fn decode_payload(&self, payload: &[u8]) -> Result<Message, CodecError> {
        if payload.len() > self.max_frame {
            return Err(CodecError::FrameTooLarge { size: payload.len(), max: self.max_frame });
        }
        let mut r = Reader { buf: payload, pos: 0 };
        let version = r.u8()?;
        if version != PROTOCOL_VERSION {
            return Err(CodecError::VersionMismatch(version));
        }
        let kind = r.u8()?;
        if !(1..=6).contains(&kind) {
            return Err(CodecError::UnknownKind(kind));
        }
        let round_index = r.u32()?;
        let id_len = r.u16()? as usize;
        let node_id = r.utf8(id_len)?;
        let body = match kind {
            1 => Body::Join { num_samples: r.u64()? },
            2 => {
                let directive = WireDirective {
                    input_dim: r.u32()?,
                    hidden_dim: r.u32()?,
                    num_classes: r.u32()?,
                    dropout_rate: r.f64()?,
                    learning_rate: r.f64()?,
                    local_epochs: r.u32()?,
                    batch_size: r.u32()?,
                    reg_weight: r.f64()?,
                    seed: r.u64()?,
                };
                Body::GlobalModel { directive, params: r.array()? }
            }
            3 => {
                let num_samples = r.u64()?;
                if num_samples == 0 {
                    return Err(CodecError::InvalidField("LOCAL_UPDATE with zero samples".into()));
                }
                Body::LocalUpdate { num_samples, train_loss: r.f64()?, params: r.array()? }
            }
            4 => Body::RoundResult { digest: r.take(32)?.try_into().unwrap() },
            5 => Body::Shutdown,
            _ => {
                let code = r.u16()?;
                let len = r.u32()? as usize;
                Body::Error { code, message: r.utf8(len)? }
            }
        };
        if r.pos != payload.len() {
            return Err(CodecError::TrailingBytes(payload.len() - r.pos));
        }
        Ok(Message { round_index, node_id, body })
    }

    /// Reads one frame. `Ok(None)` on a clean end of stream before any byte.
    pub fn read_frame<R: Read>(&self, r: &mut R) -> Result<Option<Message>, FrameIoError> {
        let mut header = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match r.read(&mut header[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(CodecError::Incomplete { needed: HEADER_LEN, available: got }.into()),
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let len = u32::from_be_bytes(header) as usize;
        if len > self.max_frame {
            return Err(CodecError::FrameTooLarge { size: len, max: self.max_frame }.into());
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => FrameIoError::Codec(CodecError::Incomplete { needed: HEADER_LEN + len, available: HEADER_LEN }),
            _ => FrameIoError::Io(e),
        })?;
        Ok(Some(self.decode_payload(&payload)?))
    }

    pub fn write_frame<W: Write>(&self, w: &mut W, msg: &Message) -> Result<(), FrameIoError> {
        let bytes = self.encode(msg)?;
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }
}

fn body_len_hint(body: &Body) -> usize {
    match body {
        Body::GlobalModel { params, .. } | Body::LocalUpdate { params, .. } => 64 + 8 * params.len(),
        Body::Error { message, .. } => 6 + message.len(),
        _ => 32,
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(CodecError::Incomplete { needed: HEADER_LEN + self.pos + n, available: HEADER_LEN + self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn utf8(&mut self, len: usize) -> Result<String, CodecError> {
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::InvalidUtf8)
    }

    fn array(&mut self) -> Result<Vec<f64>, CodecError> {
        let declared = self.u32()? as usize;
        let available = self.buf.len() - self.pos;
        if declared.checked_mul(8) != Some(available) {
            return Err(CodecError::CountMismatch { declared, available });
        }
        Ok(self.take(declared * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

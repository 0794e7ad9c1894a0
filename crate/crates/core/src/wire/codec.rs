use super::{
    BindingEntry, ClientKind, Message, MsgType, SessionId, WireError, FLAG_MASK, HEADER_LEN, MAGIC,
    MAX_PAYLOAD, VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub msg_type: u8,
    pub flags: u16,
    pub session_id: SessionId,
    pub request_id: u64,
    pub payload_len: u32,
}

impl FrameHeader {
    /// Validates magic, version and size. The message type is checked
    /// later so that an unknown type can still be answered with an error
    /// that carries the request id.
    pub fn parse(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < HEADER_LEN {
            return Err(WireError::Truncated {
                needed: HEADER_LEN as u64,
                available: bytes.len() as u64,
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(WireError::BadVersion(bytes[4]));
        }
        let payload_len = u32::from_le_bytes(bytes[34..38].try_into().unwrap());
        if payload_len > MAX_PAYLOAD {
            return Err(WireError::Oversize(payload_len as u64));
        }
        Ok(FrameHeader {
            msg_type: bytes[5],
            flags: u16::from_le_bytes([bytes[6], bytes[7]]) & FLAG_MASK,
            session_id: SessionId(bytes[10..26].try_into().unwrap()),
            request_id: u64::from_le_bytes(bytes[26..34].try_into().unwrap()),
            payload_len,
        })
    }

    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload_len as usize
    }

    pub fn is_degraded(&self) -> bool {
        self.flags & super::FLAG_DEGRADED != 0
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn str16(&mut self, s: &str) -> Result<(), WireError> {
        let len = u16::try_from(s.len()).map_err(|_| WireError::InvalidField("string longer than 65535 bytes"))?;
        self.u16(len);
        self.raw(s.as_bytes());
        Ok(())
    }
    fn bytes32(&mut self, b: &[u8]) -> Result<(), WireError> {
        let len = u32::try_from(b.len()).map_err(|_| WireError::Oversize(b.len() as u64))?;
        self.u32(len);
        self.raw(b);
        Ok(())
    }
}

/// Serializes just the payload of `msg`.
pub fn encode_payload(msg: &Message) -> Result<Vec<u8>, WireError> {
    let mut w = Writer(Vec::new());
    match msg {
        Message::Hello {
            client_kind,
            spirv_min,
            spirv_max,
            backend,
        } => {
            w.u8(*client_kind as u8);
            w.u32(*spirv_min);
            w.u32(*spirv_max);
            w.str16(backend)?;
        }
        Message::HelloAck {
            session_id,
            capabilities,
        } => {
            w.raw(&session_id.0);
            w.str16(capabilities)?;
        }
        Message::LoadModule { hash, module } => {
            w.raw(hash);
            w.bytes32(module)?;
        }
        Message::ModuleAck {
            hash,
            already_cached,
        } => {
            w.raw(hash);
            w.u8(*already_cached as u8);
        }
        Message::CreatePipeline { hash, entry } => {
            w.raw(hash);
            w.str16(entry)?;
        }
        Message::PipelineAck { pipeline_id } => w.u64(*pipeline_id),
        Message::AllocBuffer { buffer_id, size } => {
            w.u64(*buffer_id);
            w.u64(*size);
        }
        Message::WriteBuffer {
            buffer_id,
            offset,
            data,
        } => {
            w.u64(*buffer_id);
            w.u64(*offset);
            w.bytes32(data)?;
        }
        Message::Dispatch {
            pipeline_id,
            groups,
            bindings,
        } => {
            w.u64(*pipeline_id);
            for g in groups {
                w.u32(*g);
            }
            let count = u16::try_from(bindings.len()).map_err(|_| WireError::InvalidField("more than 65535 bindings"))?;
            w.u16(count);
            for b in bindings {
                w.u32(b.set);
                w.u32(b.binding);
                w.u64(b.buffer_id);
            }
        }
        Message::DispatchAck {
            prepare_ns,
            execute_ns,
            readback_ns,
        } => {
            w.u64(*prepare_ns);
            w.u64(*execute_ns);
            w.u64(*readback_ns);
        }
        Message::ReadBuffer {
            buffer_id,
            offset,
            len,
        } => {
            w.u64(*buffer_id);
            w.u64(*offset);
            w.u32(*len);
        }
        Message::BufferData { data } => w.bytes32(data)?,
        Message::ExportSession | Message::CloseSession => {}
        Message::SessionSnapshot { snapshot } | Message::ImportSession { snapshot } => w.bytes32(snapshot)?,
        Message::Ping { token } | Message::Pong { token } => w.u64(*token),
        Message::Error { code, message } => {
            w.u16(*code);
            w.str16(message)?;
        }
        Message::Ack { value, elapsed_ns } => {
            w.u64(*value);
            w.u64(*elapsed_ns);
        }
    }
    Ok(w.0)
}

/// Serializes a complete frame. Reserved flag bits are cleared.
pub fn encode(msg: &Message, session_id: SessionId, request_id: u64, flags: u16) -> Result<Vec<u8>, WireError> {
    let payload = encode_payload(msg)?;
    if payload.len() as u64 > MAX_PAYLOAD as u64 {
        return Err(WireError::Oversize(payload.len() as u64));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.msg_type() as u8);
    out.extend_from_slice(&(flags & FLAG_MASK).to_le_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&session_id.0);
    out.extend_from_slice(&request_id.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(WireError::Truncated {
                needed: n as u64,
                available: available as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn str16(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| WireError::InvalidField("string is not UTF-8"))
    }
    fn bytes32(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
}

/// Parses the payload of a frame whose type byte is `msg_type`.
pub fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<Message, WireError> {
    let t = MsgType::from_u8(msg_type).ok_or(WireError::UnknownMsgType(msg_type))?;
    let mut r = Reader { buf: payload, pos: 0 };
    let msg = match t {
        MsgType::Hello => Message::Hello {
            client_kind: match r.u8()? {
                0 => ClientKind::Ue,
                1 => ClientKind::Server,
                _ => return Err(WireError::InvalidField("client_kind")),
            },
            spirv_min: r.u32()?,
            spirv_max: r.u32()?,
            backend: r.str16()?,
        },
        MsgType::HelloAck => Message::HelloAck {
            session_id: SessionId(r.array()?),
            capabilities: r.str16()?,
        },
        MsgType::LoadModule => Message::LoadModule {
            hash: r.array()?,
            module: r.bytes32()?,
        },
        MsgType::ModuleAck => Message::ModuleAck {
            hash: r.array()?,
            already_cached: match r.u8()? {
                0 => false,
                1 => true,
                _ => return Err(WireError::InvalidField("already_cached")),
            },
        },
        MsgType::CreatePipeline => Message::CreatePipeline {
            hash: r.array()?,
            entry: r.str16()?,
        },
        MsgType::PipelineAck => Message::PipelineAck { pipeline_id: r.u64()? },
        MsgType::AllocBuffer => Message::AllocBuffer {
            buffer_id: r.u64()?,
            size: r.u64()?,
        },
        MsgType::WriteBuffer => Message::WriteBuffer {
            buffer_id: r.u64()?,
            offset: r.u64()?,
            data: r.bytes32()?,
        },
        MsgType::Dispatch => {
            let pipeline_id = r.u64()?;
            let groups = [r.u32()?, r.u32()?, r.u32()?];
            let count = r.u16()? as usize;
            let mut bindings = Vec::with_capacity(count.min(payload.len() / 16));
            for _ in 0..count {
                bindings.push(BindingEntry {
                    set: r.u32()?,
                    binding: r.u32()?,
                    buffer_id: r.u64()?,
                });
            }
            Message::Dispatch {
                pipeline_id,
                groups,
                bindings,
            }
        }
        MsgType::DispatchAck => Message::DispatchAck {
            prepare_ns: r.u64()?,
            execute_ns: r.u64()?,
            readback_ns: r.u64()?,
        },
        MsgType::ReadBuffer => Message::ReadBuffer {
            buffer_id: r.u64()?,
            offset: r.u64()?,
            len: r.u32()?,
        },
        MsgType::BufferData => Message::BufferData { data: r.bytes32()? },
        MsgType::ExportSession => Message::ExportSession,
        MsgType::SessionSnapshot => Message::SessionSnapshot { snapshot: r.bytes32()? },
        MsgType::ImportSession => Message::ImportSession { snapshot: r.bytes32()? },
        MsgType::Ping => Message::Ping { token: r.u64()? },
        MsgType::Pong => Message::Pong { token: r.u64()? },
        MsgType::Error => Message::Error {
            code: r.u16()?,
            message: r.str16()?,
        },
        MsgType::Ack => Message::Ack {
            value: r.u64()?,
            elapsed_ns: r.u64()?,
        },
        MsgType::CloseSession => Message::CloseSession,
    };
    let rest = payload.len() - r.pos;
    if rest != 0 {
        return Err(WireError::TrailingBytes(rest as u64));
    }
    Ok(msg)
}

/// Parses exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<(FrameHeader, Message), WireError> {
    let header = FrameHeader::parse(bytes)?;
    let total = header.frame_len();
    if bytes.len() < total {
        return Err(WireError::Truncated {
            needed: total as u64,
            available: bytes.len() as u64,
        });
    }
    if bytes.len() > total {
        return Err(WireError::TrailingBytes((bytes.len() - total) as u64));
    }
    let msg = decode_payload(header.msg_type, &bytes[HEADER_LEN..])?;
    Ok((header, msg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_frame_layout() {
        let f = encode(&Message::Ping { token: 0 }, SessionId::ZERO, 1, 0).unwrap();
        let mut expect = b"GIRP".to_vec();
        expect.extend([0x01, 0x10, 0x00, 0x00, 0x00, 0x00]);
        expect.extend([0u8; 16]);
        expect.extend([1, 0, 0, 0, 0, 0, 0, 0]);
        expect.extend([8, 0, 0, 0]);
        expect.extend([0u8; 8]);
        assert_eq!(f.len(), 46);
        assert_eq!(f, expect);
    }

    #[test]
    fn reserved_flags_cleared_and_ignored() {
        let mut f = encode(&Message::Ping { token: 9 }, SessionId::ZERO, 1, 0xFFFF).unwrap();
        assert_eq!(&f[6..10], &[1, 0, 0, 0]);
        f[7] = 0xAB;
        f[8] = 0xCD;
        let (h, m) = decode(&f).unwrap();
        assert_eq!(h.flags, 1);
        assert!(h.is_degraded());
        assert_eq!(m, Message::Ping { token: 9 });
    }

    #[test]
    fn flipped_first_byte_is_bad_magic() {
        let mut f = encode(&Message::Ping { token: 0 }, SessionId::ZERO, 1, 0).unwrap();
        f[0] ^= 0xFF;
        assert!(matches!(decode(&f), Err(WireError::BadMagic(_))));
    }

    #[test]
    fn dispatch_with_missing_entry_is_truncated() {
        let msg = Message::Dispatch {
            pipeline_id: 1,
            groups: [1, 1, 1],
            bindings: (0..3)
                .map(|i| BindingEntry {
                    set: 0,
                    binding: i,
                    buffer_id: i as u64,
                })
                .collect(),
        };
        let mut f = encode(&msg, SessionId::ZERO, 1, 0).unwrap();
        // Drop the last 16-byte entry and fix up payload_len.
        f.truncate(f.len() - 16);
        let len = (f.len() - HEADER_LEN) as u32;
        f[34..38].copy_from_slice(&len.to_le_bytes());
        assert!(matches!(decode(&f), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn oversize_write_rejected() {
        let msg = Message::WriteBuffer {
            buffer_id: 1,
            offset: 0,
            data: vec![0; 65 << 20],
        };
        assert!(matches!(encode(&msg, SessionId::ZERO, 1, 0), Err(WireError::Oversize(_))));
        let mut header = encode(&Message::Ping { token: 0 }, SessionId::ZERO, 1, 0).unwrap();
        header[34..38].copy_from_slice(&(MAX_PAYLOAD + 1).to_le_bytes());
        assert!(matches!(decode(&header), Err(WireError::Oversize(_))));
    }

    #[test]
    fn unknown_type_reported_with_byte() {
        let mut f = encode(&Message::ExportSession, SessionId::ZERO, 7, 0).unwrap();
        f[5] = 0x7E;
        assert_eq!(decode(&f), Err(WireError::UnknownMsgType(0x7E)));
        assert_eq!(FrameHeader::parse(&f).unwrap().request_id, 7);
    }

    #[test]
    fn inner_length_disagreement_is_trailing() {
        let mut f = encode(&Message::Ping { token: 0 }, SessionId::ZERO, 1, 0).unwrap();
        f.push(0);
        f[34] = 9;
        assert_eq!(decode(&f), Err(WireError::TrailingBytes(1)));
    }

    #[test]
    fn bad_version_and_short_input() {
        let mut f = encode(&Message::Ping { token: 0 }, SessionId::ZERO, 1, 0).unwrap();
        f[4] = 2;
        assert_eq!(decode(&f), Err(WireError::BadVersion(2)));
        assert!(matches!(decode(&f[..10]), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn every_request_has_one_response() {
        for t in MsgType::ALL {
            if let Some(r) = t.response() {
                assert!(r.response().is_none(), "{t} -> {r}");
            }
        }
    }
}

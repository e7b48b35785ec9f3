//! Binary wire protocols: a latest-wins pose datagram stream, a length-framed
//! detector RPC, and a checksummed record/replay log.

mod detect;
mod fuzz;
mod pose_stream;
mod record;

use thiserror::Error;

pub use detect::{
    read_frame, spawn_detect_server, write_frame, DetectClient, DetectRequest, DetectResponse, DetectServer,
    PixelFormat, WireObject, DETECT_HEADER_LEN, MAX_FRAME_LEN,
};
pub use fuzz::{fuzz_decoders, FuzzReport};
pub use pose_stream::{
    PoseStreamMessage, PoseStreamReceiver, PoseStreamSender, ReceiverStats, POSE_DATAGRAM_LEN,
};
pub use record::{read_log, replay, LogRecord, LogReplay, LogWriter, ReplayMode};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("bad length: expected {expected}, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("sequence mismatch: sent {sent}, got {got}")]
    SequenceMismatch { sent: u32, got: u32 },
    #[error("timed out")]
    Timeout,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl NetError {
    pub fn is_timeout(&self) -> bool {
        match self {
            NetError::Timeout => true,
            NetError::Io(e) => matches!(
                e.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ),
            _ => false,
        }
    }
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            NetError::Malformed(format!("need {n} bytes at offset {}, have {}", self.pos, self.buf.len() - self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N], NetError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.array::<1>()?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, NetError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Hex dump of at most the first 64 bytes, for diagnostics.
pub(crate) fn hex_prefix(bytes: &[u8]) -> String {
    let shown: Vec<String> = bytes.iter().take(64).map(|b| format!("{b:02x}")).collect();
    let more = if bytes.len() > 64 { " ..." } else { "" };
    format!("{}{more}", shown.join(" "))
}

/// Seconds to whole microseconds, saturating at zero.
pub fn seconds_to_us(t: f64) -> u64 {
    (t * 1e6).round().max(0.0) as u64
}

pub fn us_to_seconds(us: u64) -> f64 {
    us as f64 * 1e-6
}

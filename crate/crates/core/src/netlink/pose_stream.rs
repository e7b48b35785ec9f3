use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::Duration;

use nalgebra::Vector3;

use super::{seconds_to_us, NetError, Reader};
use crate::geometry::{Pose, Rotation};

pub const POSE_MAGIC: [u8; 4] = *b"VPS1";
/// Magic plus a 72-byte body.
pub const POSE_DATAGRAM_LEN: usize = 76;

/// One motion-capture style pose sample. Quaternion order is (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseStreamMessage {
    pub sequence: u32,
    pub timestamp_us: u64,
    pub frame_id: u32,
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
}

impl PoseStreamMessage {
    pub fn from_pose(sequence: u32, timestamp_us: u64, frame_id: u32, pose: &Pose) -> Self {
        Self {
            sequence,
            timestamp_us,
            frame_id,
            position: pose.position.into(),
            quaternion: pose.rotation.wxyz(),
        }
    }

    pub fn encode(&self) -> [u8; POSE_DATAGRAM_LEN] {
        let mut b = [0u8; POSE_DATAGRAM_LEN];
        b[0..4].copy_from_slice(&POSE_MAGIC);
        b[4..8].copy_from_slice(&self.sequence.to_le_bytes());
        b[8..16].copy_from_slice(&self.timestamp_us.to_le_bytes());
        b[16..20].copy_from_slice(&self.frame_id.to_le_bytes());
        for (i, v) in self.position.iter().chain(&self.quaternion).enumerate() {
            b[20 + 8 * i..28 + 8 * i].copy_from_slice(&v.to_le_bytes());
        }
        b
    }

    /// Rejects wrong length, wrong magic, non-finite fields and quaternions
    /// whose norm is outside [0.99, 1.01]. The quaternion is kept as sent;
    /// `pose` normalizes it.
    pub fn decode(bytes: &[u8]) -> Result<Self, NetError> {
        if bytes.len() != POSE_DATAGRAM_LEN {
            return Err(NetError::BadLength {
                expected: POSE_DATAGRAM_LEN,
                actual: bytes.len(),
            });
        }
        let mut r = Reader::new(bytes);
        let magic = r.array::<4>()?;
        if magic != POSE_MAGIC {
            return Err(NetError::BadMagic(magic));
        }
        let sequence = r.u32()?;
        let timestamp_us = r.u64()?;
        let frame_id = r.u32()?;
        let mut position = [0.0; 3];
        for v in &mut position {
            *v = r.f64()?;
        }
        let mut quaternion = [0.0; 4];
        for v in &mut quaternion {
            *v = r.f64()?;
        }
        if !position.iter().chain(&quaternion).all(|v| v.is_finite()) {
            return Err(NetError::Malformed("non-finite pose field".into()));
        }
        let norm = quaternion.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(0.99..=1.01).contains(&norm) {
            return Err(NetError::Malformed(format!("quaternion norm {norm}")));
        }
        Ok(Self {
            sequence,
            timestamp_us,
            frame_id,
            position,
            quaternion,
        })
    }

    pub fn pose(&self) -> Pose {
        let [w, x, y, z] = self.quaternion;
        let rot = Rotation::from_wxyz(w, x, y, z).expect("norm checked on decode");
        Pose::new(Vector3::from(self.position), rot)
    }
}

pub struct PoseStreamSender {
    socket: UdpSocket,
    target: SocketAddr,
    next_sequence: u32,
}

impl PoseStreamSender {
    pub fn new(target: impl ToSocketAddrs) -> Result<Self, NetError> {
        let target = target
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| NetError::Malformed("no target address".into()))?;
        let bind: SocketAddr = if target.is_ipv4() {
            "0.0.0.0:0".parse().expect("literal")
        } else {
            "[::]:0".parse().expect("literal")
        };
        Ok(Self {
            socket: UdpSocket::bind(bind)?,
            target,
            next_sequence: 0,
        })
    }

    /// Sends `pose` stamped at simulation time `t` seconds.
    pub fn send(&mut self, pose: &Pose, t: f64, frame_id: u32) -> Result<u32, NetError> {
        let seq = self.next_sequence;
        let msg = PoseStreamMessage::from_pose(seq, seconds_to_us(t), frame_id, pose);
        self.socket.send_to(&msg.encode(), self.target)?;
        self.next_sequence = seq.wrapping_add(1);
        Ok(seq)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReceiverStats {
    pub accepted: u64,
    pub stale: u64,
    pub malformed: u64,
}

/// Keeps only messages newer than the latest accepted one (wrapping order).
#[derive(Debug, Default)]
pub struct PoseStreamReceiver {
    socket: Option<UdpSocket>,
    latest: Option<u32>,
    pub stats: ReceiverStats,
}

impl PoseStreamReceiver {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, NetError> {
        Ok(Self {
            socket: Some(UdpSocket::bind(addr)?),
            ..Default::default()
        })
    }

    /// A receiver with no socket, fed through `accept_datagram`.
    pub fn detached() -> Self {
        Self::default()
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.socket.as_ref().and_then(|s| s.local_addr().ok())
    }

    pub fn accept_datagram(&mut self, bytes: &[u8]) -> Option<PoseStreamMessage> {
        let msg = match PoseStreamMessage::decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                log::debug!("pose datagram discarded: {e}");
                self.stats.malformed += 1;
                return None;
            }
        };
        if let Some(last) = self.latest {
            if (msg.sequence.wrapping_sub(last) as i32) <= 0 {
                self.stats.stale += 1;
                return None;
            }
        }
        self.latest = Some(msg.sequence);
        self.stats.accepted += 1;
        Some(msg)
    }

    /// Waits up to `timeout` for the next fresh message.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<PoseStreamMessage>, NetError> {
        let Some(sock) = self.socket.as_ref().map(UdpSocket::try_clone).transpose()? else {
            return Ok(None);
        };
        sock.set_read_timeout(Some(timeout.max(Duration::from_micros(1))))?;
        let mut buf = [0u8; 512];
        loop {
            match sock.recv_from(&mut buf) {
                Ok((n, _)) => {
                    if let Some(m) = self.accept_datagram(&buf[..n]) {
                        return Ok(Some(m));
                    }
                }
                Err(e)
                    if matches!(
                        e.kind(),
                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                    ) =>
                {
                    return Ok(None)
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

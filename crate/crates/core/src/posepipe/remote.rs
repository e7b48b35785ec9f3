use std::net::ToSocketAddrs;
use std::sync::Mutex;
use std::time::Duration;

use super::{Detector, KeypointObservation, PoseError};
use crate::netlink::{DetectClient, NetError, PixelFormat};
use crate::splat::Frame;

pub const DEFAULT_DETECT_TIMEOUT: Duration = Duration::from_millis(500);

/// Detector running in another process, reached over the detector RPC.
///
/// A timed-out or unreachable endpoint yields no observations (a missed fix)
/// rather than an error; a malformed reply is a protocol error.
#[derive(Debug)]
pub struct RemoteDetector {
    client: Mutex<DetectClient>,
}

impl RemoteDetector {
    pub fn connect(endpoint: impl ToSocketAddrs, timeout: Duration) -> Result<Self, PoseError> {
        let client = DetectClient::new(endpoint, timeout).map_err(|e| PoseError::Protocol(e.to_string()))?;
        Ok(Self {
            client: Mutex::new(client),
        })
    }

    pub fn with_format(self, format: PixelFormat) -> Self {
        self.client.lock().expect("client lock").format = format;
        self
    }
}

impl Detector for RemoteDetector {
    fn detect(&self, frame: &Frame) -> Result<Vec<KeypointObservation>, PoseError> {
        let mut client = self.client.lock().expect("client lock");
        match client.call(frame) {
            Ok(resp) => Ok(resp.observations()),
            Err(NetError::Io(e)) => {
                log::warn!("detector endpoint unavailable at t={:.3}: {e}", frame.timestamp);
                Ok(Vec::new())
            }
            Err(e) if e.is_timeout() => {
                log::warn!("detector timed out at t={:.3}", frame.timestamp);
                Ok(Vec::new())
            }
            Err(e) => Err(PoseError::Protocol(e.to_string())),
        }
    }
}

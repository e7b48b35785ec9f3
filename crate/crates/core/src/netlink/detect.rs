use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use nalgebra::Vector2;

use super::{hex_prefix, seconds_to_us, us_to_seconds, NetError, Reader};
use crate::geometry::Pose;
use crate::posepipe::KeypointObservation;
use crate::splat::Frame;

pub const REQUEST_MAGIC: [u8; 4] = *b"VDR1";
pub const RESPONSE_MAGIC: [u8; 4] = *b"VDA1";
/// magic, sequence, timestamp, width, height, format, payload length.
pub const DETECT_HEADER_LEN: usize = 4 + 4 + 8 + 2 + 2 + 1 + 4;
/// Upper bound on one length-prefixed message.
pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PixelFormat {
    #[default]
    RawRgb8 = 0,
    Png = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectRequest {
    pub sequence: u32,
    pub timestamp_us: u64,
    pub width: u16,
    pub height: u16,
    pub format: PixelFormat,
    pub payload: Vec<u8>,
}

impl DetectRequest {
    pub fn from_frame(sequence: u32, frame: &Frame, format: PixelFormat) -> Result<Self, NetError> {
        let (width, height) = (
            u16::try_from(frame.width()).map_err(|_| NetError::Malformed("frame too wide".into()))?,
            u16::try_from(frame.height()).map_err(|_| NetError::Malformed("frame too tall".into()))?,
        );
        let payload = match format {
            PixelFormat::RawRgb8 => frame.pixels().to_vec(),
            PixelFormat::Png => frame.encode_png().map_err(|e| NetError::Malformed(e.to_string()))?,
        };
        Ok(Self {
            sequence,
            timestamp_us: seconds_to_us(frame.timestamp),
            width,
            height,
            format,
            payload,
        })
    }

    /// The image as a frame. The wire carries no pose, so it is identity.
    pub fn to_frame(&self) -> Result<Frame, NetError> {
        let t = us_to_seconds(self.timestamp_us);
        match self.format {
            PixelFormat::RawRgb8 => Ok(Frame::new(
                self.width as u32,
                self.height as u32,
                self.payload.clone(),
                t,
                Pose::identity(),
            )),
            PixelFormat::Png => {
                let f = Frame::decode_png(&self.payload, t, Pose::identity())
                    .map_err(|e| NetError::Malformed(e.to_string()))?;
                if f.width() != self.width as u32 || f.height() != self.height as u32 {
                    return Err(NetError::Malformed("PNG size differs from header".into()));
                }
                Ok(f)
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(DETECT_HEADER_LEN + self.payload.len());
        b.extend_from_slice(&REQUEST_MAGIC);
        b.extend_from_slice(&self.sequence.to_le_bytes());
        b.extend_from_slice(&self.timestamp_us.to_le_bytes());
        b.extend_from_slice(&self.width.to_le_bytes());
        b.extend_from_slice(&self.height.to_le_bytes());
        b.push(self.format as u8);
        b.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        b.extend_from_slice(&self.payload);
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NetError> {
        let mut r = Reader::new(bytes);
        let magic = r.array::<4>()?;
        if magic != REQUEST_MAGIC {
            return Err(NetError::BadMagic(magic));
        }
        let sequence = r.u32()?;
        let timestamp_us = r.u64()?;
        let width = r.u16()?;
        let height = r.u16()?;
        let format = match r.u8()? {
            0 => PixelFormat::RawRgb8,
            1 => PixelFormat::Png,
            t => return Err(NetError::Malformed(format!("pixel format {t}"))),
        };
        let len = r.u32()? as usize;
        if r.remaining() != len {
            return Err(NetError::BadLength {
                expected: len,
                actual: r.remaining(),
            });
        }
        if format == PixelFormat::RawRgb8 && len != width as usize * height as usize * 3 {
            return Err(NetError::BadLength {
                expected: width as usize * height as usize * 3,
                actual: len,
            });
        }
        Ok(Self {
            sequence,
            timestamp_us,
            width,
            height,
            format,
            payload: r.take(len)?.to_vec(),
        })
    }
}

/// One detected part on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct WireObject {
    pub class_id: u8,
    pub confidence: f32,
    pub keypoints: Vec<[f32; 2]>,
    pub visible: Vec<bool>,
}

impl From<&KeypointObservation> for WireObject {
    fn from(o: &KeypointObservation) -> Self {
        Self {
            class_id: o.class_id,
            confidence: o.confidence as f32,
            keypoints: o.keypoints.iter().map(|k| [k.x as f32, k.y as f32]).collect(),
            visible: o.visible.clone(),
        }
    }
}

impl From<&WireObject> for KeypointObservation {
    fn from(o: &WireObject) -> Self {
        Self {
            class_id: o.class_id,
            confidence: o.confidence as f64,
            keypoints: o
                .keypoints
                .iter()
                .map(|k| Vector2::new(k[0] as f64, k[1] as f64))
                .collect(),
            visible: o.visible.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectResponse {
    pub sequence: u32,
    pub objects: Vec<WireObject>,
}

impl DetectResponse {
    pub fn from_observations(sequence: u32, obs: &[KeypointObservation]) -> Self {
        Self {
            sequence,
            objects: obs.iter().map(WireObject::from).collect(),
        }
    }

    pub fn observations(&self) -> Vec<KeypointObservation> {
        self.objects.iter().map(KeypointObservation::from).collect()
    }

    /// Panics if there are more than 255 objects or keypoints per object, or
    /// if a mask length differs from its keypoint count.
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&RESPONSE_MAGIC);
        b.extend_from_slice(&self.sequence.to_le_bytes());
        b.push(u8::try_from(self.objects.len()).expect("at most 255 objects"));
        for o in &self.objects {
            let k = o.keypoints.len();
            assert_eq!(o.visible.len(), k, "visibility mask length");
            b.push(o.class_id);
            b.extend_from_slice(&o.confidence.to_le_bytes());
            b.push(u8::try_from(k).expect("at most 255 keypoints"));
            for p in &o.keypoints {
                b.extend_from_slice(&p[0].to_le_bytes());
                b.extend_from_slice(&p[1].to_le_bytes());
            }
            let mut mask = vec![0u8; k.div_ceil(8)];
            for (i, v) in o.visible.iter().enumerate() {
                if *v {
                    mask[i / 8] |= 1 << (i % 8);
                }
            }
            b.extend_from_slice(&mask);
        }
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NetError> {
        let mut r = Reader::new(bytes);
        let magic = r.array::<4>()?;
        if magic != RESPONSE_MAGIC {
            return Err(NetError::BadMagic(magic));
        }
        let sequence = r.u32()?;
        let count = r.u8()?;
        let mut objects = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let class_id = r.u8()?;
            let confidence = r.f32()?;
            if !confidence.is_finite() {
                return Err(NetError::Malformed("non-finite confidence".into()));
            }
            let k = r.u8()? as usize;
            let mut keypoints = Vec::with_capacity(k);
            for _ in 0..k {
                let p = [r.f32()?, r.f32()?];
                if !p.iter().all(|v| v.is_finite()) {
                    return Err(NetError::Malformed("non-finite keypoint".into()));
                }
                keypoints.push(p);
            }
            let mask = r.take(k.div_ceil(8))?;
            if k % 8 != 0 && mask[k / 8] >> (k % 8) != 0 {
                return Err(NetError::Malformed("visibility bits beyond keypoint count".into()));
            }
            let visible = (0..k).map(|i| mask[i / 8] & (1 << (i % 8)) != 0).collect();
            objects.push(WireObject {
                class_id,
                confidence,
                keypoints,
                visible,
            });
        }
        if r.remaining() != 0 {
            return Err(NetError::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { sequence, objects })
    }
}

/// Writes a u32 little-endian length prefix followed by `body`.
pub fn write_frame(w: &mut impl Write, body: &[u8]) -> Result<(), NetError> {
    if body.len() > MAX_FRAME_LEN {
        return Err(NetError::BadLength {
            expected: MAX_FRAME_LEN,
            actual: body.len(),
        });
    }
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(body)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>, NetError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(NetError::BadLength {
            expected: MAX_FRAME_LEN,
            actual: len,
        });
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(body)
}

/// Blocking detector RPC client. One request in flight; the connection is
/// dropped after any error and re-opened on the next call.
#[derive(Debug)]
pub struct DetectClient {
    addr: SocketAddr,
    pub timeout: Duration,
    pub format: PixelFormat,
    stream: Option<TcpStream>,
    next_sequence: u32,
}

impl DetectClient {
    pub fn new(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, NetError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| NetError::Malformed("no endpoint address".into()))?;
        Ok(Self {
            addr,
            timeout,
            format: PixelFormat::RawRgb8,
            stream: None,
            next_sequence: 0,
        })
    }

    pub fn call(&mut self, frame: &Frame) -> Result<DetectResponse, NetError> {
        let seq = self.next_sequence;
        self.next_sequence = seq.wrapping_add(1);
        let request = DetectRequest::from_frame(seq, frame, self.format)?;
        let result = self.exchange(&request.encode());
        let body = match result {
            Ok(b) => b,
            Err(e) => {
                self.reset();
                return Err(if e.is_timeout() { NetError::Timeout } else { e });
            }
        };
        let response = match DetectResponse::decode(&body) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("detector response rejected ({e}): {}", hex_prefix(&body));
                self.reset();
                return Err(e);
            }
        };
        if response.sequence != seq {
            self.reset();
            return Err(NetError::SequenceMismatch {
                sent: seq,
                got: response.sequence,
            });
        }
        Ok(response)
    }

    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, NetError> {
        let deadline = Instant::now() + self.timeout;
        let remaining = || {
            deadline
                .checked_duration_since(Instant::now())
                .filter(|d| !d.is_zero())
                .ok_or(NetError::Timeout)
        };
        if self.stream.is_none() {
            let s = TcpStream::connect_timeout(&self.addr, remaining()?)?;
            s.set_nodelay(true)?;
            self.stream = Some(s);
        }
        let stream = self.stream.as_mut().expect("connected above");
        stream.set_write_timeout(Some(remaining()?))?;
        write_frame(stream, request)?;
        stream.set_read_timeout(Some(remaining()?))?;
        let mut len = [0u8; 4];
        stream.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        if len > MAX_FRAME_LEN {
            return Err(NetError::BadLength {
                expected: MAX_FRAME_LEN,
                actual: len,
            });
        }
        stream.set_read_timeout(Some(remaining()?))?;
        let mut body = vec![0u8; len];
        stream.read_exact(&mut body).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                NetError::Malformed(format!("response truncated, expected {len} bytes"))
            } else {
                e.into()
            }
        })?;
        Ok(body)
    }

    fn reset(&mut self) {
        if let Some(s) = self.stream.take() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

/// Background detector server. Each connection gets its own thread; every
/// decoded request is passed to the handler, whose bytes are sent back as the
/// response body.
pub struct DetectServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl DetectServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for DetectServer {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_inner();
        }
    }
}

pub fn spawn_detect_server<F>(addr: impl ToSocketAddrs, handler: F) -> Result<DetectServer, NetError>
where
    F: Fn(&DetectRequest) -> Vec<u8> + Send + Sync + 'static,
{
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let handler = Arc::new(handler);
    let flag = stop.clone();
    let thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(mut stream) = conn else { continue };
            let handler = handler.clone();
            let flag = flag.clone();
            std::thread::spawn(move || {
                let _ = stream.set_nodelay(true);
                while !flag.load(Ordering::SeqCst) {
                    let Ok(body) = read_frame(&mut stream) else { break };
                    let request = match DetectRequest::decode(&body) {
                        Ok(r) => r,
                        Err(e) => {
                            log::warn!("detect request rejected ({e}): {}", hex_prefix(&body));
                            break;
                        }
                    };
                    let reply = handler(&request);
                    if write_frame(&mut stream, &reply).is_err() {
                        break;
                    }
                }
            });
        }
    });
    Ok(DetectServer {
        addr: local,
        stop,
        thread: Some(thread),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<KeypointObservation> {
        vec![
            KeypointObservation {
                class_id: 2,
                confidence: 0.9375,
                keypoints: (0..9).map(|i| Vector2::new(10.5 + i as f64, 200.25)).collect(),
                visible: (0..9).map(|i| i != 3).collect(),
            },
            KeypointObservation {
                class_id: 5,
                confidence: 1.0,
                keypoints: vec![Vector2::new(1.0, 2.0); 4],
                visible: vec![true; 4],
            },
        ]
    }

    fn frame(w: u32, h: u32) -> Frame {
        let px = (0..w * h * 3).map(|i| (i % 251) as u8).collect();
        Frame::new(w, h, px, 0.1, Pose::identity())
    }

    #[test]
    fn request_layout_and_size() {
        let req = DetectRequest::from_frame(9, &frame(640, 640), PixelFormat::RawRgb8).unwrap();
        let bytes = req.encode();
        assert_eq!(DETECT_HEADER_LEN, 25);
        assert_eq!(bytes.len(), 25 + 1_228_800);
        assert_eq!(&bytes[..4], b"VDR1");
        assert_eq!(u32::from_le_bytes(bytes[21..25].try_into().unwrap()), 1_228_800);
        let back = DetectRequest::decode(&bytes).unwrap();
        assert_eq!(back, req);
        assert_eq!(back.to_frame().unwrap().pixels(), frame(640, 640).pixels());
    }

    #[test]
    fn png_request_round_trip() {
        let f = frame(33, 17);
        let req = DetectRequest::from_frame(1, &f, PixelFormat::Png).unwrap();
        let back = DetectRequest::decode(&req.encode()).unwrap();
        assert_eq!(back.to_frame().unwrap().pixels(), f.pixels());
    }

    #[test]
    fn response_round_trip_and_mask() {
        let resp = DetectResponse::from_observations(77, &fixture());
        let bytes = resp.encode();
        // header 9, object 1: 1+4+1+72+2, object 2: 1+4+1+32+1
        assert_eq!(bytes.len(), 9 + 80 + 39);
        assert_eq!(bytes[9 + 6 + 72], 0b1111_0111);
        assert_eq!(bytes[9 + 6 + 72 + 1], 0b0000_0001);
        let back = DetectResponse::decode(&bytes).unwrap();
        assert_eq!(back, resp);
        assert_eq!(back.observations(), fixture());
    }

    #[test]
    fn truncated_and_padded_rejected() {
        let bytes = DetectResponse::from_observations(1, &fixture()).encode();
        for n in 0..bytes.len() {
            assert!(DetectResponse::decode(&bytes[..n]).is_err(), "prefix {n}");
        }
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(DetectResponse::decode(&padded).is_err());
    }

    #[test]
    fn loopback_echo() {
        let server = spawn_detect_server("127.0.0.1:0", |req: &DetectRequest| {
            DetectResponse::from_observations(req.sequence, &fixture()).encode()
        })
        .unwrap();
        let mut client = DetectClient::new(server.local_addr(), Duration::from_secs(5)).unwrap();
        for _ in 0..3 {
            let start = Instant::now();
            let got = client.call(&frame(640, 640)).unwrap();
            assert_eq!(got.observations(), fixture());
            assert!(start.elapsed() < Duration::from_secs(1));
        }
        server.shutdown();
    }

    #[test]
    fn truncated_response_resets_connection() {
        let server = spawn_detect_server("127.0.0.1:0", |req: &DetectRequest| {
            let mut b = DetectResponse::from_observations(req.sequence, &fixture()).encode();
            b.truncate(20);
            b
        })
        .unwrap();
        let mut client = DetectClient::new(server.local_addr(), Duration::from_secs(5)).unwrap();
        assert!(matches!(client.call(&frame(8, 8)), Err(NetError::Malformed(_))));
        assert!(client.stream.is_none());
    }

    #[test]
    fn endpoint_down_times_out_or_refuses() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let mut client = DetectClient::new(port, Duration::from_millis(200)).unwrap();
        let start = Instant::now();
        assert!(client.call(&frame(4, 4)).is_err());
        assert!(start.elapsed() < Duration::from_millis(500));
    }

    #[test]
    fn slow_server_times_out() {
        let server = spawn_detect_server("127.0.0.1:0", |req: &DetectRequest| {
            std::thread::sleep(Duration::from_millis(400));
            DetectResponse::from_observations(req.sequence, &[]).encode()
        })
        .unwrap();
        let mut client = DetectClient::new(server.local_addr(), Duration::from_millis(100)).unwrap();
        assert!(matches!(client.call(&frame(4, 4)), Err(NetError::Timeout)));
    }
}

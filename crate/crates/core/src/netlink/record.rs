use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use super::NetError;

const LOG_MAGIC: &[u8; 8] = b"SPLGLOG1";
/// length, timestamp and checksum around each payload.
const RECORD_OVERHEAD: usize = 4 + 8 + 4;

/// One logged message. `timestamp_us` is simulation time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub timestamp_us: u64,
    pub payload: Vec<u8>,
}

/// Appends records as `len u32 | timestamp u64 | payload | crc32 u32`, with
/// the checksum over timestamp and payload.
pub struct LogWriter<W: Write> {
    out: W,
}

impl LogWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, NetError> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W) -> Result<Self, NetError> {
        out.write_all(LOG_MAGIC)?;
        Ok(Self { out })
    }

    pub fn append(&mut self, timestamp_us: u64, payload: &[u8]) -> Result<(), NetError> {
        let len = u32::try_from(payload.len()).map_err(|_| NetError::Malformed("record too large".into()))?;
        let ts = timestamp_us.to_le_bytes();
        let mut crc = crc32fast::Hasher::new();
        crc.update(&ts);
        crc.update(payload);
        self.out.write_all(&len.to_le_bytes())?;
        self.out.write_all(&ts)?;
        self.out.write_all(payload)?;
        self.out.write_all(&crc.finalize().to_le_bytes())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, NetError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogReplay {
    pub records: Vec<LogRecord>,
    /// Records skipped for a bad checksum or a length running past the end.
    pub corrupt: usize,
}

pub fn read_log(path: impl AsRef<Path>) -> Result<LogReplay, NetError> {
    let bytes = std::fs::read(path)?;
    parse_log(&bytes)
}

pub(crate) fn parse_log(bytes: &[u8]) -> Result<LogReplay, NetError> {
    if bytes.is_empty() {
        return Ok(LogReplay::default());
    }
    if bytes.len() < LOG_MAGIC.len() || &bytes[..LOG_MAGIC.len()] != LOG_MAGIC {
        let mut m = [0u8; 4];
        let n = bytes.len().min(4);
        m[..n].copy_from_slice(&bytes[..n]);
        return Err(NetError::BadMagic(m));
    }
    let mut out = LogReplay::default();
    let mut pos = LOG_MAGIC.len();
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < RECORD_OVERHEAD {
            out.corrupt += 1;
            break;
        }
        let len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        let Some(total) = len.checked_add(RECORD_OVERHEAD).filter(|t| *t <= rest.len()) else {
            out.corrupt += 1;
            break;
        };
        let ts = &rest[4..12];
        let payload = &rest[12..12 + len];
        let stored = u32::from_le_bytes(rest[12 + len..total].try_into().expect("4 bytes"));
        let mut crc = crc32fast::Hasher::new();
        crc.update(ts);
        crc.update(payload);
        if crc.finalize() == stored {
            out.records.push(LogRecord {
                timestamp_us: u64::from_le_bytes(ts.try_into().expect("8 bytes")),
                payload: payload.to_vec(),
            });
        } else {
            out.corrupt += 1;
        }
        pos += total;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayMode {
    AsFastAsPossible,
    /// Sleeps to reproduce the recorded gaps between messages.
    RealTime,
}

/// Feeds records to `sink` in order.
pub fn replay(records: &[LogRecord], mode: ReplayMode, mut sink: impl FnMut(&LogRecord)) {
    let start = Instant::now();
    let t0 = records.first().map(|r| r.timestamp_us).unwrap_or(0);
    for r in records {
        if mode == ReplayMode::RealTime {
            let due = Duration::from_micros(r.timestamp_us.saturating_sub(t0));
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        sink(r);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize) -> Vec<LogRecord> {
        (0..n)
            .map(|i| LogRecord {
                timestamp_us: 5000 * i as u64,
                payload: (0..(i % 90)).map(|b| (b * 3 + i) as u8).collect(),
            })
            .collect()
    }

    fn write_all(recs: &[LogRecord]) -> Vec<u8> {
        let mut w = LogWriter::new(Vec::new()).unwrap();
        for r in recs {
            w.append(r.timestamp_us, &r.payload).unwrap();
        }
        w.finish().unwrap()
    }

    #[test]
    fn record_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stream.log");
        let recs = records(100);
        std::fs::write(&path, write_all(&recs)).unwrap();
        let back = read_log(&path).unwrap();
        assert_eq!(back.corrupt, 0);
        assert_eq!(back.records, recs);
        let mut seen = Vec::new();
        replay(&back.records, ReplayMode::AsFastAsPossible, |r| seen.push(r.payload.clone()));
        assert_eq!(seen, recs.iter().map(|r| r.payload.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn empty_log_is_empty() {
        assert_eq!(parse_log(&[]).unwrap(), LogReplay::default());
        assert_eq!(parse_log(&write_all(&[])).unwrap(), LogReplay::default());
    }

    #[test]
    fn corrupt_record_skipped() {
        let recs = records(5);
        let mut bytes = write_all(&recs);
        // flip a byte inside the third record's payload
        let offset = 8 + (0..2).map(|i| RECORD_OVERHEAD + recs[i].payload.len()).sum::<usize>() + 12;
        bytes[offset] ^= 0xff;
        let back = parse_log(&bytes).unwrap();
        assert_eq!(back.corrupt, 1);
        assert_eq!(back.records.len(), 4);
        assert_eq!(back.records[2], recs[3]);
        // truncated tail
        let back = parse_log(&bytes[..bytes.len() - 3]).unwrap();
        assert_eq!(back.corrupt, 2);
        assert_eq!(back.records.len(), 3);
    }

    #[test]
    fn real_time_gaps() {
        let recs: Vec<_> = (0..6)
            .map(|i| LogRecord {
                timestamp_us: 20_000 * i,
                payload: vec![],
            })
            .collect();
        let start = Instant::now();
        let mut times = Vec::new();
        replay(&recs, ReplayMode::RealTime, |_| times.push(start.elapsed().as_secs_f64()));
        for w in times.windows(2) {
            let gap = w[1] - w[0];
            assert!((gap - 0.02).abs() < 0.01, "gap {gap}");
        }
        let total = times[5] - times[0];
        assert!((total - 0.1).abs() < 0.01, "total {total}");
    }
}

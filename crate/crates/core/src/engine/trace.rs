//! Binary message trace: records of `(u32 round, u32 worker)` followed by
//! the little-endian `SparseDelta` wire form.

use std::io::{self, ErrorKind, Read, Write};

use crate::compressors::{read_u32, SparseDelta};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub round: u32,
    pub worker: u32,
    pub delta: SparseDelta,
}

pub struct TraceWriter<W: Write> {
    inner: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn record(&mut self, round: u64, worker: usize, delta: &SparseDelta) -> io::Result<()> {
        self.inner.write_all(&(round as u32).to_le_bytes())?;
        self.inner.write_all(&(worker as u32).to_le_bytes())?;
        delta.write_to(&mut self.inner)
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Reads records until end of input.
pub fn read_trace<R: Read>(mut r: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    loop {
        let mut first = [0u8; 4];
        match r.read(&mut first[..1]) {
            Ok(0) => return Ok(out),
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
        r.read_exact(&mut first[1..])?;
        let round = u32::from_le_bytes(first);
        let worker = read_u32(&mut r)?;
        let delta = SparseDelta::read_from(&mut r)?;
        out.push(TraceRecord { round, worker, delta });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let a = SparseDelta::from_entries(4, vec![(1, -2.5), (3, 1e-300)]).unwrap();
        let b = SparseDelta::empty(4);
        let mut w = TraceWriter::new(Vec::new());
        w.record(0, 3, &a).unwrap();
        w.record(7, 0, &b).unwrap();
        let bytes = w.into_inner();
        let records = read_trace(&bytes[..]).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0], TraceRecord { round: 0, worker: 3, delta: a });
        assert_eq!(records[1].round, 7);
        assert!(records[1].delta.is_empty());
    }

    #[test]
    fn truncated_trace_is_an_error() {
        let mut w = TraceWriter::new(Vec::new());
        w.record(1, 1, &SparseDelta::from_dense(&[1.0, 2.0])).unwrap();
        let bytes = w.into_inner();
        assert!(read_trace(&bytes[..bytes.len() - 3]).is_err());
    }
}

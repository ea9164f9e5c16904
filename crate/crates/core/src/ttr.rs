//! Binary time-tag stream format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header (32 bytes)
//!   0..4    magic "QDTT"
//!   4..8    version u32 = 1
//!   8..16   tick_fs u64 (femtoseconds per tick, 1000 = 1 ps)
//!   16..20  channel_count u32
//!   20..28  record_count u64
//!   28..32  reserved, zero
//! record (16 bytes each)
//!   0..8    timestamp in ticks, u64
//!   8       channel u8
//!   9       flags u8 (bit 0 = sync)
//!   10..16  reserved, zero
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::record::{first_unsorted, TimeTagRecord};

pub const MAGIC: [u8; 4] = *b"QDTT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 16;
pub const PS_TICK_FS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TtrHeader {
    pub version: u32,
    pub tick_fs: u64,
    pub channel_count: u32,
    pub record_count: u64,
}

impl TtrHeader {
    pub fn new(channel_count: u32, record_count: u64) -> Self {
        TtrHeader { version: VERSION, tick_fs: PS_TICK_FS, channel_count, record_count }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&self.version.to_le_bytes());
        b[8..16].copy_from_slice(&self.tick_fs.to_le_bytes());
        b[16..20].copy_from_slice(&self.channel_count.to_le_bytes());
        b[20..28].copy_from_slice(&self.record_count.to_le_bytes());
        b
    }

    fn parse(b: &[u8; HEADER_LEN], path: &Path) -> Result<Self> {
        if b[0..4] != MAGIC {
            return Err(corrupt(path, "bad magic"));
        }
        let h = TtrHeader {
            version: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            tick_fs: u64::from_le_bytes(b[8..16].try_into().unwrap()),
            channel_count: u32::from_le_bytes(b[16..20].try_into().unwrap()),
            record_count: u64::from_le_bytes(b[20..28].try_into().unwrap()),
        };
        if h.version != VERSION {
            return Err(corrupt(path, format!("unsupported version {}", h.version)));
        }
        if h.tick_fs == 0 {
            return Err(corrupt(path, "tick_fs is zero"));
        }
        Ok(h)
    }

    fn ps_to_ticks(&self, ps: u64) -> u64 {
        (ps as u128 * PS_TICK_FS as u128 / self.tick_fs as u128) as u64
    }

    fn ticks_to_ps(&self, ticks: u64) -> u64 {
        (ticks as u128 * self.tick_fs as u128 / PS_TICK_FS as u128) as u64
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Corrupt { path: path.to_path_buf(), reason: reason.into() }
}

fn encode(h: &TtrHeader, r: &TimeTagRecord) -> [u8; RECORD_LEN] {
    let mut b = [0u8; RECORD_LEN];
    b[0..8].copy_from_slice(&h.ps_to_ticks(r.timestamp_ps).to_le_bytes());
    b[8] = r.channel;
    b[9] = r.flags;
    b
}

/// Serialize a sorted stream. The header's record count is taken from `records`.
pub fn write_to<W: Write>(w: &mut W, header: &TtrHeader, records: &[TimeTagRecord]) -> Result<u64> {
    if let Some(index) = first_unsorted(records) {
        return Err(Error::Unsorted { index });
    }
    if let Some(r) = records.iter().find(|r| r.channel as u32 >= header.channel_count) {
        return Err(Error::UnknownChannel { channel: r.channel, channel_count: header.channel_count });
    }
    let h = TtrHeader { record_count: records.len() as u64, ..*header };
    w.write_all(&h.to_bytes())?;
    for r in records {
        w.write_all(&encode(&h, r))?;
    }
    w.flush()?;
    Ok((HEADER_LEN + RECORD_LEN * records.len()) as u64)
}

/// Write a stream to `path`, returning the byte count.
pub fn write_stream(path: &Path, header: &TtrHeader, records: &[TimeTagRecord]) -> Result<u64> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, header, records)
}

/// Chunked reader. Memory use is bounded by the chunk size.
pub struct ChunkReader {
    path: PathBuf,
    reader: BufReader<File>,
    header: TtrHeader,
    chunk: usize,
    consumed: u64,
    last_ts: u64,
    buf: Vec<u8>,
}

impl ChunkReader {
    pub fn open(path: &Path, chunk: usize) -> Result<Self> {
        let chunk = chunk.max(1);
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let mut reader = BufReader::with_capacity(1 << 20, file);
        let mut hb = [0u8; HEADER_LEN];
        if len < HEADER_LEN as u64 {
            return Err(corrupt(path, format!("file is {len} bytes, shorter than the header")));
        }
        reader.read_exact(&mut hb)?;
        let header = TtrHeader::parse(&hb, path)?;
        let expected = HEADER_LEN as u64 + RECORD_LEN as u64 * header.record_count;
        if len != expected {
            return Err(corrupt(
                path,
                format!("header announces {} records ({expected} bytes) but file has {len} bytes", header.record_count),
            ));
        }
        Ok(ChunkReader {
            path: path.to_path_buf(),
            reader,
            header,
            chunk,
            consumed: 0,
            last_ts: 0,
            buf: Vec::new(),
        })
    }

    pub fn header(&self) -> &TtrHeader {
        &self.header
    }

    fn read_chunk(&mut self) -> Result<Vec<TimeTagRecord>> {
        let n = (self.header.record_count - self.consumed).min(self.chunk as u64) as usize;
        self.buf.resize(n * RECORD_LEN, 0);
        self.reader.read_exact(&mut self.buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                corrupt(&self.path, "stream ended before the announced record count")
            } else {
                Error::Io(e)
            }
        })?;
        let mut out = Vec::with_capacity(n);
        for (i, b) in self.buf.chunks_exact(RECORD_LEN).enumerate() {
            let ticks = u64::from_le_bytes(b[0..8].try_into().unwrap());
            let rec = TimeTagRecord { timestamp_ps: self.header.ticks_to_ps(ticks), channel: b[8], flags: b[9] };
            if rec.channel as u32 >= self.header.channel_count {
                return Err(Error::UnknownChannel {
                    channel: rec.channel,
                    channel_count: self.header.channel_count,
                });
            }
            if rec.timestamp_ps < self.last_ts {
                return Err(Error::Unsorted { index: (self.consumed as usize) + i });
            }
            self.last_ts = rec.timestamp_ps;
            out.push(rec);
        }
        self.consumed += n as u64;
        Ok(out)
    }
}

impl Iterator for ChunkReader {
    type Item = Result<Vec<TimeTagRecord>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.consumed >= self.header.record_count {
            return None;
        }
        let r = self.read_chunk();
        if r.is_err() {
            // Stop after the first error.
            self.consumed = self.header.record_count;
        }
        Some(r)
    }
}

pub fn read_chunks(path: &Path, chunk: usize) -> Result<ChunkReader> {
    ChunkReader::open(path, chunk)
}

/// Read a whole stream into memory.
pub fn read_stream(path: &Path) -> Result<(TtrHeader, Vec<TimeTagRecord>)> {
    let reader = ChunkReader::open(path, 1 << 20)?;
    let header = *reader.header();
    let mut records = Vec::with_capacity(header.record_count as usize);
    for chunk in reader {
        records.extend(chunk?);
    }
    Ok((header, records))
}

//! Time-tag streams and the NTG1 binary container.
//!
//! A tag stream is a time-ordered list of `(channel, timestamp)` records with
//! a fixed tick resolution (1 ps by default). Channels follow the detector
//! layout used throughout this crate:
//!
//! * `0` - detector A (one arm of the splitter)
//! * `1` - detector B (other arm)
//! * `2` - excitation sync
//! * `3` - emission truth (photons before the detection chain)
//!
//! The on-disk format (`NTG1`) is little-endian:
//!
//! ```text
//! magic      4 bytes   "NTG1"
//! version    u16       currently 1
//! tick_ps    u64       tick resolution in picoseconds
//! channels   u8        number of channels used
//! count      u64       number of records
//! records    count x { channel u8, timestamp u64 }
//! ```
//!
//! An empty stream is exactly the 23-byte header. Records must be sorted by
//! timestamp; readers reject unsorted files and report the first offending
//! record index. [`TagReader`] iterates records from disk without loading the
//! whole file, so streams larger than memory stay readable.

use std::io::{self, BufRead, Read, Seek, SeekFrom, Write};
use std::path::Path;

use thiserror::Error;

/// Detector A channel index.
pub const CHANNEL_A: u8 = 0;
/// Detector B channel index.
pub const CHANNEL_B: u8 = 1;
/// Excitation sync channel index.
pub const CHANNEL_SYNC: u8 = 2;
/// Emission-truth channel index (photons before the detection chain).
pub const CHANNEL_EMISSION: u8 = 3;

/// File format magic bytes.
pub const MAGIC: [u8; 4] = *b"NTG1";
/// Current format version.
pub const FORMAT_VERSION: u16 = 1;
/// Size of the header in bytes; an empty stream is exactly this long.
pub const HEADER_LEN: usize = 23;
/// Size of one record in bytes.
pub const RECORD_LEN: usize = 9;

#[derive(Debug, Error)]
pub enum TagError {
    #[error("bad magic: expected {:?}, found {found:?}", MAGIC)]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {found} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("truncated file: {context}")]
    TruncatedFile { context: String },
    #[error("unsorted timestamps: record {index} has timestamp {found} after {previous}")]
    UnsortedTimestamps {
        index: u64,
        previous: u64,
        found: u64,
    },
    #[error("tick resolution mismatch: {left} ps vs {right} ps")]
    ResolutionMismatch { left: u64, right: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One detection event: a channel index and a timestamp in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TagRecord {
    pub timestamp: u64,
    pub channel: u8,
}

impl TagRecord {
    pub fn new(channel: u8, timestamp: u64) -> Self {
        TagRecord { timestamp, channel }
    }
}

/// An in-memory tag stream: header fields plus sorted records.
///
/// `duration` is bookkeeping (the span a producer simulated or measured); it
/// is not part of the wire format and is recovered as the last timestamp when
/// a file is read back. Equality compares only wire content.
#[derive(Debug, Clone)]
pub struct TagStream {
    pub version: u16,
    pub tick_ps: u64,
    pub channel_count: u8,
    pub records: Vec<TagRecord>,
    duration: Option<u64>,
}

impl PartialEq for TagStream {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.tick_ps == other.tick_ps
            && self.channel_count == other.channel_count
            && self.records == other.records
    }
}

impl TagStream {
    /// Creates a stream with 1 ps ticks from already-sorted records.
    pub fn new(channel_count: u8, records: Vec<TagRecord>) -> Self {
        TagStream {
            version: FORMAT_VERSION,
            tick_ps: 1,
            channel_count,
            records,
            duration: None,
        }
    }

    /// Sets an explicit duration in ticks (must cover the last record).
    pub fn with_duration(mut self, duration: u64) -> Self {
        debug_assert!(duration >= self.last_timestamp());
        self.duration = Some(duration);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn last_timestamp(&self) -> u64 {
        self.records.last().map_or(0, |r| r.timestamp)
    }

    /// Duration in ticks: the explicit value if set, else the last timestamp.
    pub fn duration_ticks(&self) -> u64 {
        self.duration.unwrap_or_else(|| self.last_timestamp())
    }

    /// Duration in seconds.
    pub fn duration_seconds(&self) -> f64 {
        self.duration_ticks() as f64 * self.tick_ps as f64 * 1e-12
    }

    /// Timestamps (in ticks) of all records on one channel.
    pub fn channel_timestamps(&self, channel: u8) -> Vec<u64> {
        self.records
            .iter()
            .filter(|r| r.channel == channel)
            .map(|r| r.timestamp)
            .collect()
    }

    /// Records on one channel, count only.
    pub fn channel_count_of(&self, channel: u8) -> usize {
        self.records.iter().filter(|r| r.channel == channel).count()
    }

    /// Mean rate of one channel in counts per second.
    pub fn channel_rate(&self, channel: u8) -> f64 {
        let dur = self.duration_seconds();
        if dur <= 0.0 {
            return 0.0;
        }
        self.channel_count_of(channel) as f64 / dur
    }

    /// Verifies the records are sorted; returns the first offending index.
    pub fn check_sorted(&self) -> Result<(), TagError> {
        for (i, pair) in self.records.windows(2).enumerate() {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(TagError::UnsortedTimestamps {
                    index: (i + 1) as u64,
                    previous: pair[0].timestamp,
                    found: pair[1].timestamp,
                });
            }
        }
        Ok(())
    }
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], context: &str) -> Result<(), TagError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            TagError::TruncatedFile {
                context: context.to_string(),
            }
        } else {
            TagError::Io(e)
        }
    })
}

/// Parsed NTG1 header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagHeader {
    pub version: u16,
    pub tick_ps: u64,
    pub channel_count: u8,
    pub record_count: u64,
}

impl TagHeader {
    pub fn read(r: &mut impl Read) -> Result<Self, TagError> {
        let mut magic = [0u8; 4];
        read_exact_or(r, &mut magic, "header magic")?;
        if magic != MAGIC {
            return Err(TagError::BadMagic { found: magic });
        }
        let mut b2 = [0u8; 2];
        let mut b8 = [0u8; 8];
        read_exact_or(r, &mut b2, "header version")?;
        let version = u16::from_le_bytes(b2);
        if version != FORMAT_VERSION {
            return Err(TagError::UnsupportedVersion { found: version });
        }
        read_exact_or(r, &mut b8, "header tick resolution")?;
        let tick_ps = u64::from_le_bytes(b8);
        let mut b1 = [0u8; 1];
        read_exact_or(r, &mut b1, "header channel count")?;
        let channel_count = b1[0];
        read_exact_or(r, &mut b8, "header record count")?;
        let record_count = u64::from_le_bytes(b8);
        Ok(TagHeader {
            version,
            tick_ps,
            channel_count,
            record_count,
        })
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), TagError> {
        w.write_all(&MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&self.tick_ps.to_le_bytes())?;
        w.write_all(&[self.channel_count])?;
        w.write_all(&self.record_count.to_le_bytes())?;
        Ok(())
    }
}

/// Writes a stream to any writer in NTG1 format.
pub fn write_stream(stream: &TagStream, w: &mut impl Write) -> Result<(), TagError> {
    let header = TagHeader {
        version: stream.version,
        tick_ps: stream.tick_ps,
        channel_count: stream.channel_count,
        record_count: stream.records.len() as u64,
    };
    header.write(w)?;
    let mut buf = [0u8; RECORD_LEN];
    for rec in &stream.records {
        buf[0] = rec.channel;
        buf[1..9].copy_from_slice(&rec.timestamp.to_le_bytes());
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a whole stream into memory, validating sortedness.
pub fn read_stream(r: &mut impl Read) -> Result<TagStream, TagError> {
    let header = TagHeader::read(r)?;
    let mut records = Vec::with_capacity(header.record_count.min(1 << 24) as usize);
    let mut buf = [0u8; RECORD_LEN];
    let mut prev = 0u64;
    for index in 0..header.record_count {
        read_exact_or(
            r,
            &mut buf,
            &format!("record {index} of {}", header.record_count),
        )?;
        let channel = buf[0];
        let timestamp = u64::from_le_bytes(buf[1..9].try_into().unwrap());
        if index > 0 && timestamp < prev {
            return Err(TagError::UnsortedTimestamps {
                index,
                previous: prev,
                found: timestamp,
            });
        }
        prev = timestamp;
        records.push(TagRecord { timestamp, channel });
    }
    Ok(TagStream {
        version: header.version,
        tick_ps: header.tick_ps,
        channel_count: header.channel_count,
        records,
        duration: None,
    })
}

/// Writes a stream to a file.
pub fn write_stream_to_path(stream: &TagStream, path: &Path) -> Result<(), TagError> {
    let mut w = io::BufWriter::new(std::fs::File::create(path)?);
    write_stream(stream, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a stream from a file.
pub fn read_stream_from_path(path: &Path) -> Result<TagStream, TagError> {
    let mut r = io::BufReader::new(std::fs::File::open(path)?);
    read_stream(&mut r)
}

/// Streaming reader: iterates records one at a time in bounded memory,
/// validating order as it goes.
pub struct TagReader<R: BufRead> {
    header: TagHeader,
    inner: R,
    next_index: u64,
    prev: u64,
    failed: bool,
}

impl<R: BufRead> TagReader<R> {
    pub fn new(mut inner: R) -> Result<Self, TagError> {
        let header = TagHeader::read(&mut inner)?;
        Ok(TagReader {
            header,
            inner,
            next_index: 0,
            prev: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> &TagHeader {
        &self.header
    }
}

impl<R: BufRead> Iterator for TagReader<R> {
    type Item = Result<TagRecord, TagError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next_index >= self.header.record_count {
            return None;
        }
        let mut buf = [0u8; RECORD_LEN];
        let index = self.next_index;
        if let Err(e) = read_exact_or(
            &mut self.inner,
            &mut buf,
            &format!("record {index} of {}", self.header.record_count),
        ) {
            self.failed = true;
            return Some(Err(e));
        }
        let channel = buf[0];
        let timestamp = u64::from_le_bytes(buf[1..9].try_into().unwrap());
        if index > 0 && timestamp < self.prev {
            self.failed = true;
            return Some(Err(TagError::UnsortedTimestamps {
                index,
                previous: self.prev,
                found: timestamp,
            }));
        }
        self.prev = timestamp;
        self.next_index += 1;
        Some(Ok(TagRecord { timestamp, channel }))
    }
}

/// Streaming writer for producers that do not hold all records in memory.
///
/// The record count is patched into the header on [`TagWriter::finish`], so
/// the underlying writer must support seeking.
pub struct TagWriter<W: Write + Seek> {
    inner: W,
    tick_ps: u64,
    channel_count: u8,
    count: u64,
    prev: u64,
    finished: bool,
}

impl<W: Write + Seek> TagWriter<W> {
    pub fn new(mut inner: W, tick_ps: u64, channel_count: u8) -> Result<Self, TagError> {
        let header = TagHeader {
            version: FORMAT_VERSION,
            tick_ps,
            channel_count,
            record_count: 0,
        };
        header.write(&mut inner)?;
        Ok(TagWriter {
            inner,
            tick_ps,
            channel_count,
            count: 0,
            prev: 0,
            finished: false,
        })
    }

    pub fn push(&mut self, rec: TagRecord) -> Result<(), TagError> {
        if self.count > 0 && rec.timestamp < self.prev {
            return Err(TagError::UnsortedTimestamps {
                index: self.count,
                previous: self.prev,
                found: rec.timestamp,
            });
        }
        let mut buf = [0u8; RECORD_LEN];
        buf[0] = rec.channel;
        buf[1..9].copy_from_slice(&rec.timestamp.to_le_bytes());
        self.inner.write_all(&buf)?;
        self.prev = rec.timestamp;
        self.count += 1;
        Ok(())
    }

    /// Patches the record count and flushes. Must be called exactly once.
    pub fn finish(mut self) -> Result<u64, TagError> {
        let header = TagHeader {
            version: FORMAT_VERSION,
            tick_ps: self.tick_ps,
            channel_count: self.channel_count,
            record_count: self.count,
        };
        self.inner.seek(SeekFrom::Start(0))?;
        header.write(&mut self.inner)?;
        self.inner.flush()?;
        self.finished = true;
        Ok(self.count)
    }
}

/// Merges streams into one sorted stream. The merge is stable: records with
/// equal timestamps keep the order of the input streams.
pub fn merge_streams(streams: &[&TagStream]) -> Result<TagStream, TagError> {
    if streams.is_empty() {
        return Ok(TagStream::new(0, Vec::new()));
    }
    let tick_ps = streams[0].tick_ps;
    for s in streams.iter().skip(1) {
        if s.tick_ps != tick_ps {
            return Err(TagError::ResolutionMismatch {
                left: tick_ps,
                right: s.tick_ps,
            });
        }
    }
    let total: usize = streams.iter().map(|s| s.records.len()).sum();
    let mut merged = Vec::with_capacity(total);
    let mut cursors = vec![0usize; streams.len()];
    loop {
        let mut best: Option<(u64, usize)> = None;
        for (si, s) in streams.iter().enumerate() {
            if let Some(rec) = s.records.get(cursors[si]) {
                // Strict < keeps ties in input-stream order.
                if best.map_or(true, |(t, _)| rec.timestamp < t) {
                    best = Some((rec.timestamp, si));
                }
            }
        }
        match best {
            Some((_, si)) => {
                merged.push(streams[si].records[cursors[si]]);
                cursors[si] += 1;
            }
            None => break,
        }
    }
    let channel_count = streams.iter().map(|s| s.channel_count).max().unwrap_or(0);
    let duration = streams
        .iter()
        .map(|s| s.duration_ticks())
        .max()
        .unwrap_or(0);
    Ok(TagStream::new(channel_count, merged).with_duration(duration))
}

/// Bins records on the selected channels into counts per `bin_width` ticks.
///
/// The trace spans the stream duration; the trailing partial bin is included,
/// so the trace sums to the number of selected records. An empty channel
/// filter selects every channel.
pub fn intensity_trace(stream: &TagStream, bin_width: u64, channels: &[u8]) -> Vec<u64> {
    assert!(bin_width > 0, "bin width must be positive");
    let duration = stream.duration_ticks().max(stream.last_timestamp());
    let n_bins = (duration / bin_width + 1) as usize;
    let mut trace = vec![0u64; n_bins];
    for rec in &stream.records {
        if channels.is_empty() || channels.contains(&rec.channel) {
            trace[(rec.timestamp / bin_width) as usize] += 1;
        }
    }
    trace
}

/// Writes records as CSV with a `channel,timestamp_ps` header.
pub fn write_csv(stream: &TagStream, w: &mut impl Write) -> Result<(), TagError> {
    writeln!(w, "channel,timestamp_ps")?;
    for rec in &stream.records {
        writeln!(
            w,
            "{},{}",
            rec.channel,
            rec.timestamp as u128 * stream.tick_ps as u128
        )?;
    }
    Ok(())
}

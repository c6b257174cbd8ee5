//! Event-stream serialization: a line-oriented CSV form and a fixed-width
//! little-endian binary form. Both round-trip losslessly; the binary form
//! is the golden-file format (every record is exactly 16 bytes).

use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity};

/// On-disk event formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Binary,
}

const CSV_MAGIC: &str = "# evnoise-events v1";
const BIN_MAGIC: &[u8; 4] = b"EVN1";
const BIN_RECORD: usize = 16;

/// Sniffs the container format from the leading bytes.
pub fn detect_format(bytes: &[u8]) -> EventFormat {
    if bytes.starts_with(BIN_MAGIC) {
        EventFormat::Binary
    } else {
        EventFormat::Csv
    }
}

pub fn write_events(stream: &EventStream, format: EventFormat) -> Vec<u8> {
    match format {
        EventFormat::Csv => write_csv(stream),
        EventFormat::Binary => write_binary(stream),
    }
}

pub fn read_events(bytes: &[u8], format: EventFormat) -> Result<EventStream> {
    match format {
        EventFormat::Csv => read_csv(bytes),
        EventFormat::Binary => read_binary(bytes),
    }
}

pub fn write_events_file(
    path: impl AsRef<Path>,
    stream: &EventStream,
    format: EventFormat,
) -> Result<()> {
    std::fs::write(path, write_events(stream, format))?;
    Ok(())
}

/// Reads an event file, sniffing the format from its magic bytes.
pub fn read_events_file(path: impl AsRef<Path>) -> Result<EventStream> {
    let bytes = std::fs::read(path)?;
    read_events(&bytes, detect_format(&bytes))
}

fn write_csv(stream: &EventStream) -> Vec<u8> {
    let mut out = format!(
        "{CSV_MAGIC} width={} height={}\n",
        stream.width(),
        stream.height()
    );
    for ev in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", ev.t, ev.x, ev.y, ev.polarity.bit()));
    }
    out.into_bytes()
}

fn read_csv(bytes: &[u8]) -> Result<EventStream> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::parse(e.valid_up_to() as u64, "event CSV is not valid UTF-8"))?;
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n');

    let header = lines
        .next()
        .ok_or_else(|| Error::parse(0, "empty event CSV"))?;
    let (width, height) = parse_csv_header(header.trim_end_matches(['\n', '\r']))
        .ok_or_else(|| Error::parse(0, format!("bad header, expected `{CSV_MAGIC} width=<W> height=<H>`")))?;
    offset += header.len() as u64;

    let mut events = Vec::new();
    for line in lines {
        let line_start = offset;
        offset += line.len() as u64;
        let body = line.trim_end_matches(['\n', '\r']);
        if body.is_empty() {
            continue;
        }
        events.push(parse_csv_record(body, line_start)?);
    }
    EventStream::new(width, height, events)
}

fn parse_csv_header(line: &str) -> Option<(u32, u32)> {
    let rest = line.strip_prefix(CSV_MAGIC)?.trim();
    let mut width = None;
    let mut height = None;
    for part in rest.split_whitespace() {
        if let Some(v) = part.strip_prefix("width=") {
            width = v.parse::<u32>().ok();
        } else if let Some(v) = part.strip_prefix("height=") {
            height = v.parse::<u32>().ok();
        } else {
            return None;
        }
    }
    Some((width?, height?))
}

fn parse_csv_record(body: &str, line_start: u64) -> Result<Event> {
    let err = |msg: String| Error::parse(line_start, msg);
    let mut fields = body.split(',');
    let mut next = |name: &str| {
        fields
            .next()
            .map(str::trim)
            .ok_or_else(|| err(format!("missing {name} field in `{body}`")))
    };
    let t = next("t")?
        .parse::<u64>()
        .map_err(|_| err(format!("bad timestamp in `{body}`")))?;
    let x = next("x")?
        .parse::<u16>()
        .map_err(|_| err(format!("bad x coordinate in `{body}`")))?;
    let y = next("y")?
        .parse::<u16>()
        .map_err(|_| err(format!("bad y coordinate in `{body}`")))?;
    let p = next("p")?
        .parse::<u8>()
        .map_err(|_| err(format!("bad polarity in `{body}`")))?;
    if fields.next().is_some() {
        return Err(err(format!("trailing fields in `{body}`")));
    }
    let polarity =
        Polarity::from_bit(p).map_err(|_| err(format!("polarity must be 0 or 1 in `{body}`")))?;
    Ok(Event { t, x, y, polarity })
}

fn write_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + stream.len() * BIN_RECORD);
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&stream.width().to_le_bytes());
    out.extend_from_slice(&stream.height().to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for ev in stream.events() {
        out.extend_from_slice(&ev.t.to_le_bytes());
        out.extend_from_slice(&ev.x.to_le_bytes());
        out.extend_from_slice(&ev.y.to_le_bytes());
        out.push(ev.polarity.bit());
        out.extend_from_slice(&[0u8; 3]);
    }
    out
}

fn read_binary(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < 20 {
        return Err(Error::parse(bytes.len() as u64, "binary event header truncated"));
    }
    if &bytes[0..4] != BIN_MAGIC {
        return Err(Error::parse(0, "bad magic, expected EVN1"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let need = 20usize
        .checked_add((count as usize).checked_mul(BIN_RECORD).ok_or_else(|| {
            Error::parse(12, format!("implausible event count {count}"))
        })?)
        .ok_or_else(|| Error::parse(12, format!("implausible event count {count}")))?;
    if bytes.len() < need {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("binary stream truncated: need {need} bytes, have {}", bytes.len()),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let off = 20 + i * BIN_RECORD;
        let rec = &bytes[off..off + BIN_RECORD];
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(rec[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(rec[10..12].try_into().unwrap());
        let polarity = Polarity::from_bit(rec[12])
            .map_err(|_| Error::parse(off as u64 + 12, format!("record {i}: bad polarity byte")))?;
        events.push(Event { t, x, y, polarity });
    }
    EventStream::new(width, height, events)
}

//! Core event-stream domain types.

use crate::error::{Error, Result};

/// Event polarity: the binary sign of the log-intensity change.
///
/// In memory this is always the sign +1/-1; on disk it is encoded as a
/// single bit (1 = positive). `Neg < Pos` fixes the tie order used when
/// sorting simultaneous events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Neg,
    Pos,
}

impl Polarity {
    /// Signed value s used by the triggering condition.
    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Pos => 1,
            Polarity::Neg => -1,
        }
    }

    #[inline]
    pub fn from_sign(s: i32) -> Result<Self> {
        match s {
            1 => Ok(Polarity::Pos),
            -1 => Ok(Polarity::Neg),
            other => Err(Error::validation(format!(
                "polarity must be +1 or -1, got {other}"
            ))),
        }
    }

    /// Disk encoding: 1 = positive, 0 = negative.
    #[inline]
    pub fn bit(self) -> u8 {
        match self {
            Polarity::Pos => 1,
            Polarity::Neg => 0,
        }
    }

    #[inline]
    pub fn from_bit(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Polarity::Pos),
            0 => Ok(Polarity::Neg),
            other => Err(Error::validation(format!(
                "polarity bit must be 0 or 1, got {other}"
            ))),
        }
    }

    #[inline]
    pub fn opposite(self) -> Self {
        match self {
            Polarity::Pos => Polarity::Neg,
            Polarity::Neg => Polarity::Pos,
        }
    }
}

/// A single camera event: timestamp in integer microseconds, pixel
/// coordinate, and polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: u64,
    /// Pixel column, 0 <= x < width.
    pub x: u16,
    /// Pixel row, 0 <= y < height.
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    /// Canonical ordering key: time, then row, column, polarity.
    #[inline]
    pub fn sort_key(&self) -> (u64, u16, u16, Polarity) {
        (self.t, self.y, self.x, self.polarity)
    }
}

/// Largest sensor dimension representable by the u16 event coordinates.
pub const MAX_SENSOR_DIM: u32 = 1 << 16;

/// A validated, time-ordered sequence of events for a fixed sensor size.
///
/// Timestamps are non-decreasing (ties across pixels permitted) and every
/// event lies within the sensor bounds. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u32,
    height: u32,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u32, height: u32, events: Vec<Event>) -> Result<Self> {
        validate_sensor_dims(width, height)?;
        let mut prev_t = 0u64;
        for (i, ev) in events.iter().enumerate() {
            if (ev.x as u32) >= width || (ev.y as u32) >= height {
                return Err(Error::validation(format!(
                    "event {i} at ({}, {}) is outside the {width}x{height} sensor",
                    ev.x, ev.y
                )));
            }
            if ev.t < prev_t {
                return Err(Error::validation(format!(
                    "event {i} timestamp {} is out of order (previous {prev_t})",
                    ev.t
                )));
            }
            prev_t = ev.t;
        }
        Ok(Self {
            width,
            height,
            events,
        })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, Vec::new())
    }

    /// Build from events that are already timestamp-ordered by
    /// construction; validation still runs in debug builds.
    pub(crate) fn from_generated(width: u32, height: u32, events: Vec<Event>) -> Self {
        debug_assert!(Self::new(width, height, events.clone()).is_ok());
        Self {
            width,
            height,
            events,
        }
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.events.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

pub(crate) fn validate_sensor_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::validation(format!(
            "sensor dimensions must be positive, got {width}x{height}"
        )));
    }
    if width > MAX_SENSOR_DIM || height > MAX_SENSOR_DIM {
        return Err(Error::validation(format!(
            "sensor dimensions {width}x{height} exceed the coordinate range"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, x: u16, y: u16, p: Polarity) -> Event {
        Event { t, x, y, polarity: p }
    }

    #[test]
    fn polarity_round_trips() {
        assert_eq!(Polarity::from_sign(1).unwrap(), Polarity::Pos);
        assert_eq!(Polarity::from_sign(-1).unwrap(), Polarity::Neg);
        assert!(Polarity::from_sign(0).is_err());
        assert_eq!(Polarity::from_bit(1).unwrap().sign(), 1);
        assert_eq!(Polarity::from_bit(0).unwrap().sign(), -1);
        assert!(Polarity::from_bit(2).is_err());
        assert!(Polarity::Neg < Polarity::Pos);
    }

    #[test]
    fn stream_accepts_boundary_coordinates() {
        let s = EventStream::new(8, 4, vec![ev(5, 7, 3, Polarity::Pos)]).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn stream_rejects_out_of_bounds() {
        let err = EventStream::new(8, 4, vec![ev(5, 8, 0, Polarity::Pos)]).unwrap_err();
        assert!(err.to_string().contains("event 0"), "{err}");
    }

    #[test]
    fn stream_rejects_out_of_order_timestamps() {
        let events = vec![ev(10, 0, 0, Polarity::Pos), ev(9, 1, 1, Polarity::Neg)];
        let err = EventStream::new(8, 4, events).unwrap_err();
        assert!(err.to_string().contains("event 1"), "{err}");
    }

    #[test]
    fn stream_allows_timestamp_ties() {
        let events = vec![ev(10, 0, 0, Polarity::Pos), ev(10, 1, 1, Polarity::Neg)];
        assert!(EventStream::new(8, 4, events).is_ok());
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(EventStream::empty(0, 4).is_err());
        assert!(EventStream::empty(4, 0).is_err());
    }
}

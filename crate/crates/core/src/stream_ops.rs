//! Signal/noise event separation, motion masking, and compositing for
//! scenes with moving content.

use crate::error::{Error, Result};
use crate::event::{EventStream, Polarity};
use crate::image::{CountImage, ImageUnit, IntensityImage};
use crate::reconstruction::aggregate;

/// Background-activity-filter settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BafConfig {
    /// Support window: a neighbor event within this many microseconds
    /// certifies an event as signal.
    pub dt_us: u64,
    /// Chebyshev neighborhood radius in pixels (1 = 8-neighborhood).
    pub radius: u32,
}

impl Default for BafConfig {
    fn default() -> Self {
        Self { dt_us: 2000, radius: 1 }
    }
}

impl BafConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt_us == 0 {
            return Err(Error::validation("BAF dt_us must be positive"));
        }
        if self.radius == 0 || self.radius > 16 {
            return Err(Error::validation("BAF radius must be in 1..=16"));
        }
        Ok(())
    }
}

/// Splits a stream into (signal, noise) with a single causal pass.
///
/// An event is signal iff some event of either polarity occurred within
/// the Chebyshev `radius` neighborhood (excluding the event's own pixel)
/// during the preceding `dt_us`. State is one last-event timestamp per
/// pixel, so a flickering pixel cannot certify itself. The two outputs
/// partition the input exactly.
pub fn baf_split(stream: &EventStream, cfg: &BafConfig) -> Result<(EventStream, EventStream)> {
    cfg.validate()?;
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    const NEVER: u64 = u64::MAX;
    let mut last = vec![NEVER; w * h];
    let mut signal = Vec::new();
    let mut noise = Vec::new();
    let r = cfg.radius as isize;

    for &ev in stream.events() {
        let (x, y) = (ev.x as isize, ev.y as isize);
        let mut supported = false;
        'scan: for dy in -r..=r {
            let ny = y + dy;
            if ny < 0 || ny >= h as isize {
                continue;
            }
            for dx in -r..=r {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let nx = x + dx;
                if nx < 0 || nx >= w as isize {
                    continue;
                }
                let t_n = last[ny as usize * w + nx as usize];
                if t_n != NEVER && ev.t - t_n <= cfg.dt_us {
                    supported = true;
                    break 'scan;
                }
            }
        }
        last[y as usize * w + x as usize] = ev.t;
        if supported {
            signal.push(ev);
        } else {
            noise.push(ev);
        }
    }
    Ok((
        EventStream::from_generated(stream.width(), stream.height(), signal),
        EventStream::from_generated(stream.width(), stream.height(), noise),
    ))
}

/// Binary per-pixel motion map for one aggregation window.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMask {
    width: usize,
    height: usize,
    flags: Vec<bool>,
    pub t_start: f64,
    pub window: f64,
}

impl MotionMask {
    pub fn new(width: usize, height: usize, flags: Vec<bool>, t_start: f64, window: f64) -> Result<Self> {
        if flags.len() != width * height {
            return Err(Error::validation("motion mask size mismatch"));
        }
        Ok(Self { width, height, flags, t_start, window })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    #[inline]
    pub fn is_motion(&self, x: usize, y: usize) -> bool {
        self.flags[y * self.width + x]
    }

    pub fn count_motion(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// 8-bit graymap encoding: 0 = static, 255 = motion.
    pub fn to_image(&self) -> IntensityImage {
        IntensityImage::new(
            self.width,
            self.height,
            ImageUnit::GrayLevel,
            self.flags.iter().map(|&f| if f { 255.0 } else { 0.0 }).collect(),
        )
        .expect("mask dims are valid")
    }

    /// Decodes a mask graymap; values >= 128 count as motion.
    pub fn from_image(img: &IntensityImage, t_start: f64, window: f64) -> Result<Self> {
        if img.unit() != ImageUnit::GrayLevel {
            return Err(Error::validation("motion mask image must be gray-level"));
        }
        Self::new(
            img.width(),
            img.height(),
            img.values().iter().map(|&v| v >= 128.0).collect(),
            t_start,
            window,
        )
    }
}

/// Thresholds per-pixel signal-event counts over a window, then dilates
/// the hit set by a Chebyshev radius.
pub fn motion_mask(
    signal: &EventStream,
    t_start: f64,
    window: f64,
    count_threshold: u32,
    dilation_radius: u32,
) -> Result<MotionMask> {
    if count_threshold == 0 {
        return Err(Error::validation("count threshold must be at least 1"));
    }
    let counts = aggregate(signal, t_start, window)?;
    let (w, h) = (counts.width(), counts.height());
    let base: Vec<bool> = (0..w * h)
        .map(|i| counts.channel(Polarity::Pos)[i] + counts.channel(Polarity::Neg)[i] >= count_threshold)
        .collect();
    let flags = dilate_chebyshev(&base, w, h, dilation_radius as isize);
    MotionMask::new(w, h, flags, t_start, window)
}

fn dilate_chebyshev(base: &[bool], w: usize, h: usize, r: isize) -> Vec<bool> {
    if r == 0 {
        return base.to_vec();
    }
    let mut out = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !base[y as usize * w + x as usize] {
                continue;
            }
            for dy in -r..=r {
                let ny = y + dy;
                if ny < 0 || ny >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let nx = x + dx;
                    if nx < 0 || nx >= w as isize {
                        continue;
                    }
                    out[ny as usize * w + nx as usize] = true;
                }
            }
        }
    }
    out
}

/// Composites dynamic over static content: dynamic where the mask is
/// set, static elsewhere. With `feather`, mask-boundary pixels blend the
/// two sources equally (1-pixel transition).
pub fn stitch(
    static_img: &IntensityImage,
    dynamic_img: &IntensityImage,
    mask: &MotionMask,
    feather: bool,
) -> Result<IntensityImage> {
    let (w, h) = (static_img.width(), static_img.height());
    if dynamic_img.width() != w
        || dynamic_img.height() != h
        || mask.width() != w
        || mask.height() != h
    {
        return Err(Error::validation("stitch inputs must share dimensions"));
    }
    if static_img.unit() != dynamic_img.unit() {
        return Err(Error::validation("stitch inputs must share a unit tag"));
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let m = mask.is_motion(x, y);
            let v = if m {
                if feather && on_mask_boundary(mask, x, y) {
                    0.5 * (static_img.get(x, y) + dynamic_img.get(x, y))
                } else {
                    dynamic_img.get(x, y)
                }
            } else {
                static_img.get(x, y)
            };
            out.push(v);
        }
    }
    IntensityImage::new(w, h, static_img.unit(), out)
}

fn on_mask_boundary(mask: &MotionMask, x: usize, y: usize) -> bool {
    let (w, h) = (mask.width(), mask.height());
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            if !mask.is_motion(nx as usize, ny as usize) {
                return true;
            }
        }
    }
    false
}

/// Aggregates noise events with masked pixels marked invalid; their
/// counts are suppressed and reconstruction treats them as missing data.
pub fn masked_aggregate(
    noise: &EventStream,
    mask: &MotionMask,
    t_start: f64,
    window: f64,
) -> Result<CountImage> {
    let mut counts = aggregate(noise, t_start, window)?;
    if counts.width() != mask.width() || counts.height() != mask.height() {
        return Err(Error::validation("mask dimensions do not match the sensor"));
    }
    counts.set_invalid(mask.flags())?;
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;

    fn ev(t: u64, x: u16, y: u16, p: Polarity) -> Event {
        Event { t, x, y, polarity: p }
    }

    fn stream(events: Vec<Event>, w: u32, h: u32) -> EventStream {
        EventStream::new(w, h, events).unwrap()
    }

    /// Brute-force reference: for each event, find the most recent prior
    /// event at every neighboring pixel by scanning the whole prefix.
    fn reference_split(s: &EventStream, cfg: &BafConfig) -> (Vec<Event>, Vec<Event>) {
        let mut signal = Vec::new();
        let mut noise = Vec::new();
        let events = s.events();
        let r = cfg.radius as i32;
        for (i, &e) in events.iter().enumerate() {
            let mut supported = false;
            'pixels: for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = e.x as i32 + dx;
                    let ny = e.y as i32 + dy;
                    if nx < 0 || ny < 0 || nx >= s.width() as i32 || ny >= s.height() as i32 {
                        continue;
                    }
                    let latest = events[..i]
                        .iter()
                        .rev()
                        .find(|p| p.x as i32 == nx && p.y as i32 == ny);
                    if let Some(p) = latest {
                        if e.t - p.t <= cfg.dt_us {
                            supported = true;
                            break 'pixels;
                        }
                    }
                }
            }
            if supported {
                signal.push(e);
            } else {
                noise.push(e);
            }
        }
        (signal, noise)
    }

    #[test]
    fn isolated_event_is_noise() {
        let s = stream(vec![ev(1000, 4, 4, Polarity::Pos)], 8, 8);
        let (signal, noise) = baf_split(&s, &BafConfig::default()).unwrap();
        assert!(signal.is_empty());
        assert_eq!(noise.len(), 1);
    }

    #[test]
    fn simultaneous_adjacent_events_order_matters() {
        let s = stream(
            vec![ev(1000, 3, 3, Polarity::Pos), ev(1000, 4, 3, Polarity::Pos)],
            8,
            8,
        );
        let (signal, noise) = baf_split(&s, &BafConfig::default()).unwrap();
        assert_eq!(noise.len(), 1, "first-processed event has no support yet");
        assert_eq!(signal.len(), 1, "second sees the first within dt");
        assert_eq!(noise.events()[0].x, 3);
        assert_eq!(signal.events()[0].x, 4);
    }

    #[test]
    fn same_pixel_does_not_self_certify() {
        let s = stream(
            vec![ev(1000, 2, 2, Polarity::Pos), ev(1500, 2, 2, Polarity::Neg)],
            8,
            8,
        );
        let (signal, _) = baf_split(&s, &BafConfig::default()).unwrap();
        assert!(signal.is_empty());
    }

    #[test]
    fn stale_neighbors_do_not_support() {
        let s = stream(
            vec![ev(0, 2, 2, Polarity::Pos), ev(10_000, 3, 2, Polarity::Pos)],
            8,
            8,
        );
        let cfg = BafConfig { dt_us: 2000, radius: 1 };
        let (signal, noise) = baf_split(&s, &cfg).unwrap();
        assert!(signal.is_empty());
        assert_eq!(noise.len(), 2);
    }

    #[test]
    fn split_matches_brute_force_reference() {
        // deterministic pseudo-random mixed stream
        let mut events = Vec::new();
        let mut state = 0x1234_5678_u64;
        let mut t = 0u64;
        for _ in 0..600 {
            state = crate::math::mix64(state);
            t += state % 700;
            let x = (state >> 8) % 16;
            let y = (state >> 16) % 12;
            let p = if state & 1 == 0 { Polarity::Pos } else { Polarity::Neg };
            events.push(ev(t, x as u16, y as u16, p));
        }
        let s = stream(events, 16, 12);
        let cfg = BafConfig { dt_us: 1200, radius: 1 };
        let (signal, noise) = baf_split(&s, &cfg).unwrap();
        let (ref_signal, ref_noise) = reference_split(&s, &cfg);
        assert_eq!(signal.events(), ref_signal.as_slice());
        assert_eq!(noise.events(), ref_noise.as_slice());
    }

    #[test]
    fn partition_property_holds() {
        let mut events = Vec::new();
        let mut state = 99u64;
        let mut t = 0u64;
        for _ in 0..500 {
            state = crate::math::mix64(state);
            t += state % 300;
            events.push(ev(t, (state % 10) as u16, ((state >> 4) % 10) as u16,
                if state & 2 == 0 { Polarity::Pos } else { Polarity::Neg }));
        }
        let s = stream(events, 10, 10);
        let (signal, noise) = baf_split(&s, &BafConfig::default()).unwrap();
        assert_eq!(signal.len() + noise.len(), s.len());
        let mut merged: Vec<Event> = signal.events().to_vec();
        merged.extend_from_slice(noise.events());
        merged.sort_by_key(|e| e.sort_key());
        let mut input: Vec<Event> = s.events().to_vec();
        input.sort_by_key(|e| e.sort_key());
        assert_eq!(merged, input);
    }

    #[test]
    fn motion_mask_thresholds_and_dilates() {
        let events = vec![
            ev(10, 4, 4, Polarity::Pos),
            ev(20, 4, 4, Polarity::Neg),
            ev(30, 4, 4, Polarity::Pos),
            ev(40, 0, 0, Polarity::Pos), // below threshold
        ];
        let s = stream(events, 8, 8);
        let mask = motion_mask(&s, 0.0, 1.0, 3, 1).unwrap();
        for y in 3..=5 {
            for x in 3..=5 {
                assert!(mask.is_motion(x, y), "({x},{y}) should be dilated motion");
            }
        }
        assert!(!mask.is_motion(0, 0));
        assert_eq!(mask.count_motion(), 9);

        let empty = motion_mask(&stream(vec![], 8, 8), 0.0, 1.0, 1, 2).unwrap();
        assert_eq!(empty.count_motion(), 0);
    }

    #[test]
    fn mask_image_round_trip() {
        let mask = MotionMask::new(3, 2, vec![true, false, true, false, true, false], 0.0, 1.0).unwrap();
        let img = mask.to_image();
        assert_eq!(img.get(0, 0), 255.0);
        assert_eq!(img.get(1, 0), 0.0);
        let back = MotionMask::from_image(&img, 0.0, 1.0).unwrap();
        assert_eq!(back.flags(), mask.flags());
    }

    #[test]
    fn stitch_selects_per_pixel() {
        let st = IntensityImage::new(2, 2, ImageUnit::GrayLevel, vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let dy = IntensityImage::new(2, 2, ImageUnit::GrayLevel, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let all_false = MotionMask::new(2, 2, vec![false; 4], 0.0, 1.0).unwrap();
        assert_eq!(stitch(&st, &dy, &all_false, false).unwrap(), st);
        let all_true = MotionMask::new(2, 2, vec![true; 4], 0.0, 1.0).unwrap();
        assert_eq!(stitch(&st, &dy, &all_true, false).unwrap(), dy);
        let half = MotionMask::new(2, 2, vec![true, false, false, true], 0.0, 1.0).unwrap();
        let out = stitch(&st, &dy, &half, false).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                let want = if half.is_motion(x, y) { dy.get(x, y) } else { st.get(x, y) };
                assert_eq!(out.get(x, y), want);
            }
        }
    }

    #[test]
    fn stitch_feather_blends_boundary() {
        let st = IntensityImage::constant(4, 1, ImageUnit::GrayLevel, 100.0).unwrap();
        let dy = IntensityImage::constant(4, 1, ImageUnit::GrayLevel, 200.0).unwrap();
        let mask = MotionMask::new(4, 1, vec![false, true, true, true], 0.0, 1.0).unwrap();
        let out = stitch(&st, &dy, &mask, true).unwrap();
        assert_eq!(out.get(0, 0), 100.0);
        assert_eq!(out.get(1, 0), 150.0, "boundary pixel blends");
        assert_eq!(out.get(2, 0), 200.0, "interior masked pixel stays dynamic");
        assert_eq!(out.get(3, 0), 200.0);
    }

    #[test]
    fn masked_aggregate_matches_aggregate_on_valid_pixels() {
        let events = vec![
            ev(100, 1, 1, Polarity::Pos),
            ev(200, 2, 2, Polarity::Neg),
            ev(300, 2, 2, Polarity::Pos),
        ];
        let s = stream(events, 4, 4);
        let plain = aggregate(&s, 0.0, 1.0).unwrap();

        let none = MotionMask::new(4, 4, vec![false; 16], 0.0, 1.0).unwrap();
        let m0 = masked_aggregate(&s, &none, 0.0, 1.0).unwrap();
        for pol in [Polarity::Pos, Polarity::Neg] {
            assert_eq!(m0.channel(pol), plain.channel(pol));
        }
        assert!((0..16).all(|i| m0.is_valid(i)));

        let mut flags = vec![false; 16];
        flags[2 * 4 + 2] = true;
        let some = MotionMask::new(4, 4, flags, 0.0, 1.0).unwrap();
        let m1 = masked_aggregate(&s, &some, 0.0, 1.0).unwrap();
        assert!(!m1.is_valid(2 * 4 + 2));
        assert_eq!(m1.channel(Polarity::Pos)[2 * 4 + 2], 0);
        assert_eq!(m1.channel(Polarity::Pos)[4 + 1], plain.channel(Polarity::Pos)[4 + 1]);

        let all = MotionMask::new(4, 4, vec![true; 16], 0.0, 1.0).unwrap();
        let m2 = masked_aggregate(&s, &all, 0.0, 1.0).unwrap();
        assert!((0..16).all(|i| !m2.is_valid(i)));
    }
}

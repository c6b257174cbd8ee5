//! Binary portable graymap (P5) reader/writer, 8- and 16-bit.
//!
//! 16-bit samples are big-endian per the graymap convention. The writer
//! emits a fixed header layout so repeated runs are byte-identical.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageUnit, IntensityImage};

/// Serializes a gray-level image as P5. `max_value` selects the sample
/// width: <= 255 writes single bytes, otherwise big-endian u16.
///
/// Photon-count images must be display-mapped to gray levels first.
pub fn write_pgm(img: &IntensityImage, max_value: u16) -> Result<Vec<u8>> {
    if img.unit() != ImageUnit::GrayLevel {
        return Err(Error::validation(
            "photon-count image must be display-mapped to gray levels before graymap output",
        ));
    }
    if max_value == 0 {
        return Err(Error::validation("graymap max value must be positive"));
    }
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), max_value).into_bytes();
    let wide = max_value > 255;
    out.reserve(img.values().len() * if wide { 2 } else { 1 });
    for &v in img.values() {
        let r = v.round();
        if (v - r).abs() > 1e-6 || r < 0.0 || r > max_value as f64 {
            return Err(Error::validation(format!(
                "gray value {v} is not an integer in [0, {max_value}]"
            )));
        }
        let s = r as u16;
        if wide {
            out.extend_from_slice(&s.to_be_bytes());
        } else {
            out.push(s as u8);
        }
    }
    Ok(out)
}

/// Parses a P5 graymap. Returns the image (gray-level unit) and the
/// file's max sample value.
pub fn read_pgm(bytes: &[u8]) -> Result<(IntensityImage, u16)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.token()?;
    if magic != b"P5" {
        return Err(Error::parse(0, "expected P5 graymap magic"));
    }
    let width = cur.ascii_u32("width")?;
    let height = cur.ascii_u32("height")?;
    let maxval = cur.ascii_u32("max value")?;
    if maxval == 0 || maxval > u16::MAX as u32 {
        return Err(Error::parse(
            cur.pos as u64,
            format!("graymap max value {maxval} out of range"),
        ));
    }
    // exactly one whitespace byte separates the header from the samples
    cur.expect_single_whitespace()?;
    let n = width as usize * height as usize;
    let wide = maxval > 255;
    let need = n * if wide { 2 } else { 1 };
    let data = &cur.bytes[cur.pos..];
    if data.len() < need {
        return Err(Error::parse(
            cur.bytes.len() as u64,
            format!("graymap truncated: need {need} sample bytes, have {}", data.len()),
        ));
    }
    let mut values = Vec::with_capacity(n);
    if wide {
        for ch in data[..need].chunks_exact(2) {
            values.push(u16::from_be_bytes([ch[0], ch[1]]) as f64);
        }
    } else {
        values.extend(data[..need].iter().map(|&b| b as f64));
    }
    let img = IntensityImage::new(width as usize, height as usize, ImageUnit::GrayLevel, values)?;
    Ok((img, maxval as u16))
}

pub fn write_pgm_file(path: impl AsRef<Path>, img: &IntensityImage, max_value: u16) -> Result<()> {
    let bytes = write_pgm(img, max_value)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_pgm_file(path: impl AsRef<Path>) -> Result<(IntensityImage, u16)> {
    let bytes = std::fs::read(path)?;
    read_pgm(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) -> Result<()> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return Ok(());
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space_and_comments()?;
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start as u64, "unexpected end of graymap header"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn ascii_u32(&mut self, what: &str) -> Result<u32> {
        let start_err = self.pos as u64;
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| Error::parse(start_err, format!("invalid graymap {what}")))
    }

    fn expect_single_whitespace(&mut self) -> Result<()> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::parse(
                self.pos as u64,
                "expected whitespace after graymap max value",
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_round_trip() {
        let img =
            IntensityImage::new(2, 2, ImageUnit::GrayLevel, vec![0.0, 255.0, 128.0, 64.0]).unwrap();
        let bytes = write_pgm(&img, 255).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        let (back, maxval) = read_pgm(&bytes).unwrap();
        assert_eq!(maxval, 255);
        assert_eq!(back, img);
    }

    #[test]
    fn sixteen_bit_round_trip_with_extreme_value() {
        let img =
            IntensityImage::new(2, 1, ImageUnit::GrayLevel, vec![65535.0, 3.0]).unwrap();
        let bytes = write_pgm(&img, 65535).unwrap();
        let (back, maxval) = read_pgm(&bytes).unwrap();
        assert_eq!(maxval, 65535);
        assert_eq!(back, img);
    }

    #[test]
    fn photon_count_unit_is_rejected() {
        let img = IntensityImage::constant(2, 2, ImageUnit::PhotonCount, 1.0).unwrap();
        assert!(write_pgm(&img, 255).is_err());
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let img = IntensityImage::new(1, 1, ImageUnit::GrayLevel, vec![300.0]).unwrap();
        assert!(write_pgm(&img, 255).is_err());
        let img = IntensityImage::new(1, 1, ImageUnit::GrayLevel, vec![0.25]).unwrap();
        assert!(write_pgm(&img, 255).is_err());
    }

    #[test]
    fn reader_handles_comments() {
        let bytes = b"P5\n# a comment\n2 1\n# another\n255\n\x01\x02".to_vec();
        let (img, _) = read_pgm(&bytes).unwrap();
        assert_eq!(img.values(), &[1.0, 2.0]);
    }

    #[test]
    fn truncated_data_reports_parse_error() {
        let bytes = b"P5\n2 2\n255\n\x01\x02".to_vec();
        match read_pgm(&bytes) {
            Err(Error::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}

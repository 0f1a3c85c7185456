//! Report layout, little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       2     magic 0xAE70
//! 2       1     version (1)
//! 3       1     flags (bit 0: entries were truncated to the cap)
//! 4       4     frame_id
//! 8       8     timestamp, ms since epoch
//! 16      4     drone latitude, 1e-7 degrees
//! 20      4     drone longitude, 1e-7 degrees
//! 24      2     drone altitude, decimeters
//! 26      1     entry count N
//! 27      15*N  entries: x0 y0 x1 y1 (u16 each), track_id u32,
//!               primary u8, secondary u8, confidence u8
//! 27+15N  4     CRC-32 (IEEE) of all preceding bytes
//! ```

use super::WireError;
use crate::geometry::BBox;

pub const MAGIC: u16 = 0xAE70;
pub const VERSION: u8 = 1;
pub const FLAG_TRUNCATED: u8 = 0x01;
pub const HEADER_LEN: usize = 27;
pub const ENTRY_LEN: usize = 15;
pub const CRC_LEN: usize = 4;
pub const MAX_ENTRIES: usize = 31;
pub const MIN_MESSAGE_LEN: usize = HEADER_LEN + CRC_LEN;
pub const MAX_MESSAGE_LEN: usize = MIN_MESSAGE_LEN + ENTRY_LEN * MAX_ENTRIES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ReportEntry {
    pub x0: u16,
    pub y0: u16,
    pub x1: u16,
    pub y1: u16,
    pub track_id: u32,
    pub primary_action: u8,
    pub secondary_action: u8,
    pub confidence: u8,
}

/// Maps `[0, 1]` to `0..=255`, rounding to nearest. Out-of-range and NaN
/// inputs clamp.
pub fn quantize_confidence(c: f64) -> u8 {
    if c.is_nan() {
        return 0;
    }
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl ReportEntry {
    pub fn from_box(
        b: &BBox,
        track_id: u32,
        primary: usize,
        secondary: usize,
        confidence: f64,
    ) -> Result<Self, WireError> {
        let coord = |v: i32| {
            u16::try_from(v).map_err(|_| WireError::Entry { index: 0, reason: format!("coordinate {v} does not fit u16") })
        };
        let action = |v: usize| {
            u8::try_from(v).map_err(|_| WireError::Entry { index: 0, reason: format!("action index {v} does not fit u8") })
        };
        Ok(Self {
            x0: coord(b.x0())?,
            y0: coord(b.y0())?,
            x1: coord(b.x1())?,
            y1: coord(b.y1())?,
            track_id,
            primary_action: action(primary)?,
            secondary_action: action(secondary)?,
            confidence: quantize_confidence(confidence),
        })
    }

    pub fn bbox(&self) -> Option<BBox> {
        BBox::new(self.x0.into(), self.y0.into(), self.x1.into(), self.y1.into()).ok()
    }

    pub fn confidence_f64(&self) -> f64 {
        f64::from(self.confidence) / 255.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ReportMessage {
    pub flags: u8,
    pub frame_id: u32,
    pub timestamp: u64,
    pub drone_lat: i32,
    pub drone_lon: i32,
    pub drone_alt: u16,
    pub detections: Vec<ReportEntry>,
}

impl ReportMessage {
    pub fn truncated(&self) -> bool {
        self.flags & FLAG_TRUNCATED != 0
    }

    /// Keeps the first [`MAX_ENTRIES`] entries and sets the truncation flag
    /// if any were dropped. Callers order entries by priority beforehand.
    pub fn truncate_to_cap(&mut self) {
        if self.detections.len() > MAX_ENTRIES {
            self.detections.truncate(MAX_ENTRIES);
            self.flags |= FLAG_TRUNCATED;
        }
    }

    /// Checks box ordering and action ranges against vocabulary sizes.
    pub fn validate(&self, n_primary: usize, n_secondary: usize) -> Result<(), WireError> {
        if self.detections.len() > MAX_ENTRIES {
            return Err(WireError::TooManyEntries(self.detections.len()));
        }
        for (index, e) in self.detections.iter().enumerate() {
            let reason = if e.x1 < e.x0 || e.y1 < e.y0 {
                "box corners out of order".to_string()
            } else if usize::from(e.primary_action) >= n_primary {
                format!("primary action {} outside vocabulary", e.primary_action)
            } else if usize::from(e.secondary_action) >= n_secondary {
                format!("secondary action {} outside vocabulary", e.secondary_action)
            } else {
                continue;
            };
            return Err(WireError::Entry { index, reason });
        }
        Ok(())
    }
}

pub fn encoded_len(count: usize) -> usize {
    MIN_MESSAGE_LEN + ENTRY_LEN * count
}

pub fn encode_message(msg: &ReportMessage) -> Result<Vec<u8>, WireError> {
    let n = msg.detections.len();
    if n > MAX_ENTRIES {
        return Err(WireError::TooManyEntries(n));
    }
    let mut out = Vec::with_capacity(encoded_len(n));
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.push(VERSION);
    out.push(msg.flags);
    out.extend_from_slice(&msg.frame_id.to_le_bytes());
    out.extend_from_slice(&msg.timestamp.to_le_bytes());
    out.extend_from_slice(&msg.drone_lat.to_le_bytes());
    out.extend_from_slice(&msg.drone_lon.to_le_bytes());
    out.extend_from_slice(&msg.drone_alt.to_le_bytes());
    out.push(n as u8);
    for e in &msg.detections {
        for v in [e.x0, e.y0, e.x1, e.y1] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&e.track_id.to_le_bytes());
        out.extend_from_slice(&[e.primary_action, e.secondary_action, e.confidence]);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    debug_assert_eq!(out.len(), encoded_len(n));
    Ok(out)
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes(b[i..i + 4].try_into().unwrap())
}

/// Validates magic, version, length and CRC, in that order.
pub fn decode_message(bytes: &[u8]) -> Result<ReportMessage, WireError> {
    if bytes.len() < 2 {
        return Err(WireError::LengthMismatch { expected: MIN_MESSAGE_LEN, actual: bytes.len() });
    }
    let magic = u16_at(bytes, 0);
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(WireError::LengthMismatch { expected: MIN_MESSAGE_LEN, actual: bytes.len() });
    }
    if bytes[2] != VERSION {
        return Err(WireError::BadVersion(bytes[2]));
    }
    let count = bytes[26] as usize;
    let expected = encoded_len(count);
    if count > MAX_ENTRIES || bytes.len() != expected {
        return Err(WireError::LengthMismatch { expected, actual: bytes.len() });
    }
    let body = expected - CRC_LEN;
    let stored = u32_at(bytes, body);
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(WireError::Crc { stored, computed });
    }
    let detections = (0..count)
        .map(|k| {
            let o = HEADER_LEN + k * ENTRY_LEN;
            ReportEntry {
                x0: u16_at(bytes, o),
                y0: u16_at(bytes, o + 2),
                x1: u16_at(bytes, o + 4),
                y1: u16_at(bytes, o + 6),
                track_id: u32_at(bytes, o + 8),
                primary_action: bytes[o + 12],
                secondary_action: bytes[o + 13],
                confidence: bytes[o + 14],
            }
        })
        .collect();
    Ok(ReportMessage {
        flags: bytes[3],
        frame_id: u32_at(bytes, 4),
        timestamp: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
        drone_lat: u32_at(bytes, 16) as i32,
        drone_lon: u32_at(bytes, 20) as i32,
        drone_alt: u16_at(bytes, 24),
        detections,
    })
}

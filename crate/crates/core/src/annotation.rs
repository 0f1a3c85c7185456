//! Line-oriented annotation records shared by the generator, detector,
//! pipeline and evaluator.
//!
//! One record per line, space separated:
//!
//! ```text
//! frame_id x0 y0 x1 y1 track_id primary_action secondary_action [confidence]
//! ```
//!
//! Unknown identity or action fields use the sentinel `-1`. The trailing
//! confidence column is optional; records without it read back with
//! confidence `1.0`. Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{BBox, GeometryError};

/// Sentinel for unknown track ids and actions.
pub const UNSET: i64 = -1;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("line {line}: expected 8 or 9 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: invalid {field} value {value:?}")]
    BadField { line: usize, field: &'static str, value: String },
    #[error("line {line}: {source}")]
    BadBox { line: usize, source: GeometryError },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationRecord {
    pub frame_id: u32,
    pub bbox: BBox,
    pub track_id: i64,
    pub primary_action: i64,
    pub secondary_action: i64,
    pub confidence: Option<f64>,
}

impl AnnotationRecord {
    /// Record for a bare box with all identity fields unset.
    pub fn unlabeled(frame_id: u32, bbox: BBox) -> Self {
        Self {
            frame_id,
            bbox,
            track_id: UNSET,
            primary_action: UNSET,
            secondary_action: UNSET,
            confidence: None,
        }
    }

    pub fn confidence_or_one(&self) -> f64 {
        self.confidence.unwrap_or(1.0)
    }

    /// Action index as a vocabulary slot, `None` for the sentinel.
    pub fn primary_index(&self) -> Option<usize> {
        usize::try_from(self.primary_action).ok()
    }

    pub fn secondary_index(&self) -> Option<usize> {
        usize::try_from(self.secondary_action).ok()
    }

    pub fn to_line(&self) -> String {
        let b = &self.bbox;
        let mut s = format!(
            "{} {} {} {} {} {} {} {}",
            self.frame_id,
            b.x0(),
            b.y0(),
            b.x1(),
            b.y1(),
            self.track_id,
            self.primary_action,
            self.secondary_action
        );
        if let Some(c) = self.confidence {
            let _ = write!(s, " {c:.6}");
        }
        s
    }
}

fn field<T: std::str::FromStr>(line: usize, name: &'static str, raw: &str) -> Result<T, AnnotationError> {
    raw.parse().map_err(|_| AnnotationError::BadField {
        line,
        field: name,
        value: raw.to_string(),
    })
}

pub fn parse_line(line_no: usize, line: &str) -> Result<Option<AnnotationRecord>, AnnotationError> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let parts: Vec<&str> = trimmed.split_whitespace().collect();
    if parts.len() != 8 && parts.len() != 9 {
        return Err(AnnotationError::FieldCount {
            line: line_no,
            found: parts.len(),
        });
    }
    let frame_id = field(line_no, "frame_id", parts[0])?;
    let x0 = field(line_no, "x0", parts[1])?;
    let y0 = field(line_no, "y0", parts[2])?;
    let x1 = field(line_no, "x1", parts[3])?;
    let y1 = field(line_no, "y1", parts[4])?;
    let bbox = BBox::new(x0, y0, x1, y1).map_err(|source| AnnotationError::BadBox { line: line_no, source })?;
    let confidence = match parts.get(8) {
        Some(raw) => {
            let c: f64 = field(line_no, "confidence", raw)?;
            if !(0.0..=1.0).contains(&c) {
                return Err(AnnotationError::BadField {
                    line: line_no,
                    field: "confidence",
                    value: raw.to_string(),
                });
            }
            Some(c)
        }
        None => None,
    };
    Ok(Some(AnnotationRecord {
        frame_id,
        bbox,
        track_id: field(line_no, "track_id", parts[5])?,
        primary_action: field(line_no, "primary_action", parts[6])?,
        secondary_action: field(line_no, "secondary_action", parts[7])?,
        confidence,
    }))
}

pub fn parse(text: &str) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(rec) = parse_line(i + 1, line)? {
            out.push(rec);
        }
    }
    Ok(out)
}

pub fn format(records: &[AnnotationRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

/// Groups records by frame id, ascending.
pub fn by_frame(records: &[AnnotationRecord]) -> std::collections::BTreeMap<u32, Vec<AnnotationRecord>> {
    let mut map = std::collections::BTreeMap::new();
    for r in records {
        map.entry(r.frame_id).or_insert_with(Vec::new).push(*r);
    }
    map
}

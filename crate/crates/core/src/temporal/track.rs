//! Greedy nearest-center association and the per-track recurrent store.

use ndarray::Array1;

use super::model::Prediction;
use crate::geometry::BBox;

pub const DEFAULT_MAX_DIST: f64 = 40.0;
pub const DEFAULT_MAX_AGE: u32 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u32,
    pub h: Array1<f64>,
    pub c: Array1<f64>,
    pub last_box: BBox,
    /// Frames since the last match.
    pub age: u32,
    pub prediction: Option<Prediction>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(track index, detection index)` in the order they were chosen.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Repeatedly matches the globally closest (track, detection) pair within
/// `max_dist`. Equal distances resolve by lower track index, then lower
/// detection index.
pub fn associate(track_boxes: &[BBox], detections: &[BBox], max_dist: f64) -> Association {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (t, tb) in track_boxes.iter().enumerate() {
        for (d, db) in detections.iter().enumerate() {
            let dist = center_distance(tb, db);
            if dist <= max_dist {
                pairs.push((dist, t, d));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; track_boxes.len()];
    let mut det_used = vec![false; detections.len()];
    let mut matches = Vec::new();
    for (_, t, d) in pairs {
        if !track_used[t] && !det_used[d] {
            track_used[t] = true;
            det_used[d] = true;
            matches.push((t, d));
        }
    }
    Association {
        matches,
        unmatched_tracks: (0..track_boxes.len()).filter(|&t| !track_used[t]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&d| !det_used[d]).collect(),
    }
}

/// Live tracks; frames must be fed in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackStore {
    tracks: Vec<Track>,
    next_id: u32,
    hidden: usize,
    pub max_dist: f64,
    pub max_age: u32,
}

impl TrackStore {
    pub fn new(hidden: usize, max_dist: f64, max_age: u32) -> Self {
        Self { tracks: Vec::new(), next_id: 0, hidden, max_dist, max_age }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn tracks_mut(&mut self) -> &mut [Track] {
        &mut self.tracks
    }

    pub fn get(&self, track_id: u32) -> Option<&Track> {
        self.tracks.iter().find(|t| t.track_id == track_id)
    }

    pub fn get_mut(&mut self, track_id: u32) -> Option<&mut Track> {
        self.tracks.iter_mut().find(|t| t.track_id == track_id)
    }

    /// Associates one frame of detections and returns the track id assigned
    /// to each detection. Matched tracks take the new box and reset their
    /// age; unmatched detections spawn tracks with zero state; unmatched
    /// tracks age and are retired once older than `max_age`.
    pub fn update(&mut self, detections: &[BBox]) -> Vec<u32> {
        let boxes: Vec<BBox> = self.tracks.iter().map(|t| t.last_box).collect();
        let assoc = associate(&boxes, detections, self.max_dist);
        let mut ids = vec![0u32; detections.len()];
        for &(t, d) in &assoc.matches {
            let track = &mut self.tracks[t];
            track.last_box = detections[d];
            track.age = 0;
            ids[d] = track.track_id;
        }
        for &t in &assoc.unmatched_tracks {
            self.tracks[t].age += 1;
        }
        let max_age = self.max_age;
        self.tracks.retain(|t| t.age <= max_age);
        for &d in &assoc.unmatched_detections {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track {
                track_id: id,
                h: Array1::zeros(self.hidden),
                c: Array1::zeros(self.hidden),
                last_box: detections[d],
                age: 0,
                prediction: None,
            });
            ids[d] = id;
        }
        ids
    }
}

//! Length-prefixed framing: each message is preceded by its length as a
//! u16 little-endian. After a bad frame the deframer scans forward for the
//! next offset whose payload starts with the magic and reports how many
//! bytes it skipped.

use std::collections::VecDeque;

use super::message::{decode_message, encode_message, ReportMessage, ENTRY_LEN, HEADER_LEN, MAGIC, MAX_MESSAGE_LEN, MIN_MESSAGE_LEN};
use super::WireError;

const PREFIX: usize = 2;
const MAGIC_BYTES: [u8; 2] = MAGIC.to_le_bytes();

pub fn valid_frame_len(len: usize) -> bool {
    (MIN_MESSAGE_LEN..=MAX_MESSAGE_LEN).contains(&len) && (len - MIN_MESSAGE_LEN).is_multiple_of(ENTRY_LEN)
}

pub fn frame_message(msg: &ReportMessage, out: &mut Vec<u8>) -> Result<(), WireError> {
    let bytes = encode_message(msg)?;
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(&bytes);
    Ok(())
}

pub fn frame_stream(messages: &[ReportMessage]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    for m in messages {
        frame_message(m, &mut out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeframeEvent {
    Message(ReportMessage),
    /// Bytes discarded while resynchronizing.
    Skipped(usize),
}

enum Probe {
    NeedMore,
    Bad,
    Good(usize, ReportMessage),
}

/// Incremental deframer for a byte stream arriving in arbitrary chunks.
#[derive(Debug, Default)]
pub struct Deframer {
    buf: VecDeque<u8>,
    eof: bool,
    events: VecDeque<DeframeEvent>,
    skipped_total: usize,
}

impl Deframer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend(bytes);
        self.process();
    }

    /// Marks end of stream: incomplete trailing data is treated as garbage.
    pub fn finish(&mut self) {
        self.eof = true;
        self.process();
    }

    pub fn next_event(&mut self) -> Option<DeframeEvent> {
        self.events.pop_front()
    }

    pub fn skipped_total(&self) -> usize {
        self.skipped_total
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    fn probe(&self, at: usize) -> Probe {
        let avail = self.buf.len() - at;
        let byte = |i: usize| self.buf[at + i];
        if avail < PREFIX + 2 {
            return if self.eof { Probe::Bad } else { Probe::NeedMore };
        }
        if [byte(PREFIX), byte(PREFIX + 1)] != MAGIC_BYTES {
            return Probe::Bad;
        }
        let len = u16::from_le_bytes([byte(0), byte(1)]) as usize;
        if !valid_frame_len(len) {
            return Probe::Bad;
        }
        if avail >= PREFIX + HEADER_LEN {
            let count = byte(PREFIX + HEADER_LEN - 1) as usize;
            if len != MIN_MESSAGE_LEN + ENTRY_LEN * count {
                return Probe::Bad;
            }
        }
        if avail < PREFIX + len {
            return if self.eof { Probe::Bad } else { Probe::NeedMore };
        }
        let body: Vec<u8> = self.buf.range(at + PREFIX..at + PREFIX + len).copied().collect();
        match decode_message(&body) {
            Ok(m) => Probe::Good(PREFIX + len, m),
            Err(_) => Probe::Bad,
        }
    }

    fn skip(&mut self, n: usize) {
        if n > 0 {
            self.buf.drain(..n);
            self.skipped_total += n;
            self.events.push_back(DeframeEvent::Skipped(n));
        }
    }

    fn process(&mut self) {
        loop {
            if self.buf.is_empty() {
                return;
            }
            match self.probe(0) {
                Probe::Good(n, m) => {
                    self.buf.drain(..n);
                    self.events.push_back(DeframeEvent::Message(m));
                    continue;
                }
                Probe::NeedMore => return,
                Probe::Bad => {}
            }
            // Resync: first later offset that is not known to be bad.
            let mut s = 1;
            let resume = loop {
                if s >= self.buf.len() {
                    break None;
                }
                match self.probe(s) {
                    Probe::Bad => s += 1,
                    _ => break Some(s),
                }
            };
            match resume {
                Some(s) => self.skip(s),
                None => {
                    let n = self.buf.len();
                    self.skip(n);
                    return;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Unframed {
    pub messages: Vec<ReportMessage>,
    /// Length of each skipped run, in stream order.
    pub skipped: Vec<usize>,
}

impl Unframed {
    pub fn skipped_total(&self) -> usize {
        self.skipped.iter().sum()
    }
}

pub fn unframe_stream(bytes: &[u8]) -> Unframed {
    let mut d = Deframer::new();
    d.push(bytes);
    d.finish();
    let mut out = Unframed::default();
    while let Some(e) = d.next_event() {
        match e {
            DeframeEvent::Message(m) => out.messages.push(m),
            DeframeEvent::Skipped(n) => out.skipped.push(n),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::wire::message::ReportEntry;
    use proptest::prelude::*;

    fn msg(rng: &mut SplitMix64, n: usize) -> ReportMessage {
        ReportMessage {
            frame_id: rng.next_u64() as u32,
            timestamp: rng.next_u64(),
            detections: (0..n)
                .map(|_| ReportEntry { x0: 1, y0: 2, x1: 9, y1: 20, track_id: rng.next_u64() as u32, ..Default::default() })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn three_messages_in_order() {
        let mut rng = SplitMix64::new(1);
        let ms: Vec<_> = (0..3).map(|k| msg(&mut rng, k * 2)).collect();
        let u = unframe_stream(&frame_stream(&ms).unwrap());
        assert_eq!(u.messages, ms);
        assert!(u.skipped.is_empty());
    }

    #[test]
    fn empty_stream() {
        assert_eq!(unframe_stream(&[]), Unframed::default());
    }

    #[test]
    fn garbage_prefix_reported() {
        let mut rng = SplitMix64::new(2);
        let m = msg(&mut rng, 3);
        let garbage = [0x70u8, 0xAE, 0x70, 0xAE, 0x01, 0x00, 5, 6, 7];
        let mut bytes = garbage.to_vec();
        bytes.extend(frame_stream(std::slice::from_ref(&m)).unwrap());
        let u = unframe_stream(&bytes);
        assert_eq!(u.messages, vec![m]);
        assert_eq!(u.skipped, vec![garbage.len()]);
    }

    #[test]
    fn trailing_partial_frame_is_skipped() {
        let mut rng = SplitMix64::new(3);
        let ms = vec![msg(&mut rng, 1), msg(&mut rng, 2)];
        let bytes = frame_stream(&ms).unwrap();
        let cut = bytes.len() - 5;
        let u = unframe_stream(&bytes[..cut]);
        assert_eq!(u.messages, ms[..1].to_vec());
        assert_eq!(u.skipped_total(), cut - (2 + 31 + 15));
    }

    #[test]
    fn bogus_long_candidate_does_not_hide_later_frame() {
        // a fake prefix claiming a long frame, followed closely by a real one
        let mut rng = SplitMix64::new(4);
        let m = msg(&mut rng, 0);
        let mut bytes = vec![0xf0, 0x01, 0x70, 0xAE, 1, 0];
        bytes.extend(frame_stream(std::slice::from_ref(&m)).unwrap());
        let u = unframe_stream(&bytes);
        assert_eq!(u.messages, vec![m]);
        assert_eq!(u.skipped_total(), 6);
    }

    proptest! {
        #[test]
        fn chunked_equals_whole(seed in any::<u64>(), chunk in 1usize..64) {
            let mut rng = SplitMix64::new(seed);
            let mut bytes = Vec::new();
            let mut ms = Vec::new();
            for _ in 0..4 {
                let g = rng.below(20) as usize;
                bytes.extend((0..g).map(|_| rng.next_u64() as u8));
                let n = rng.below(6) as usize;
                let m = msg(&mut rng, n);
                frame_message(&m, &mut bytes).unwrap();
                ms.push(m);
            }
            let whole = unframe_stream(&bytes);
            prop_assert_eq!(&whole.messages, &ms);

            let mut d = Deframer::new();
            let mut got = Vec::new();
            let mut skipped = 0;
            for c in bytes.chunks(chunk) {
                d.push(c);
                while let Some(e) = d.next_event() {
                    match e {
                        DeframeEvent::Message(m) => got.push(m),
                        DeframeEvent::Skipped(n) => skipped += n,
                    }
                }
            }
            d.finish();
            while let Some(e) = d.next_event() {
                if let DeframeEvent::Message(m) = e { got.push(m) } else if let DeframeEvent::Skipped(n) = e { skipped += n }
            }
            prop_assert_eq!(got, ms);
            prop_assert_eq!(skipped, whole.skipped_total());
        }
    }
}

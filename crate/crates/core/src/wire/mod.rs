//! Binary report messages, stream framing and socket endpoints.

pub mod framing;
pub mod message;
pub mod transport;

pub use framing::{frame_message, frame_stream, unframe_stream, DeframeEvent, Deframer, Unframed};
pub use message::{
    decode_message, encode_message, encoded_len, quantize_confidence, ReportEntry, ReportMessage, ENTRY_LEN,
    FLAG_TRUNCATED, HEADER_LEN, MAGIC, MAX_ENTRIES, MAX_MESSAGE_LEN, MIN_MESSAGE_LEN, VERSION,
};
pub use transport::{ReportQueue, ReportReceiver, ReportSender, SenderStats, QUEUE_CAPACITY};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("{0} entries exceed the limit of {MAX_ENTRIES}")]
    TooManyEntries(usize),
    #[error("bad magic 0x{0:04x}")]
    BadMagic(u16),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("crc mismatch: stored 0x{stored:08x}, computed 0x{computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("entry {index}: {reason}")]
    Entry { index: usize, reason: String },
    #[error("frame length {0} is not a valid message length")]
    FrameLength(usize),
    #[error("sender worker stopped")]
    Closed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

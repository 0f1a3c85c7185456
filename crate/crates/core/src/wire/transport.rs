//! Stream endpoints. The sender runs a worker thread fed through a bounded
//! queue that drops the oldest pending report on overflow, so a slow link
//! never stalls frame processing.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use super::framing::{frame_message, DeframeEvent, Deframer};
use super::message::ReportMessage;
use super::WireError;

pub const QUEUE_CAPACITY: usize = 16;

#[derive(Debug, Clone)]
pub struct ReportQueue {
    items: VecDeque<ReportMessage>,
    capacity: usize,
    dropped: u64,
}

impl ReportQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self { items: VecDeque::with_capacity(capacity), capacity, dropped: 0 }
    }

    /// Returns the report evicted to make room, if any.
    pub fn push(&mut self, msg: ReportMessage) -> Option<ReportMessage> {
        let evicted = if self.items.len() == self.capacity {
            self.dropped += 1;
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(msg);
        evicted
    }

    pub fn pop(&mut self) -> Option<ReportMessage> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SenderStats {
    pub sent: u64,
    pub dropped: u64,
    pub bytes: u64,
}

struct Shared {
    queue: ReportQueue,
    closing: bool,
    failed: bool,
    stats: SenderStats,
}

type SharedState = Arc<(Mutex<Shared>, Condvar)>;

pub struct ReportSender {
    state: SharedState,
    worker: Option<JoinHandle<Result<(), WireError>>>,
}

impl ReportSender {
    pub fn spawn<W: Write + Send + 'static>(writer: W, capacity: usize) -> Self {
        let state: SharedState = Arc::new((
            Mutex::new(Shared { queue: ReportQueue::new(capacity), closing: false, failed: false, stats: SenderStats::default() }),
            Condvar::new(),
        ));
        let worker_state = Arc::clone(&state);
        let worker = std::thread::spawn(move || run_worker(writer, worker_state));
        Self { state, worker: Some(worker) }
    }

    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, WireError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self::spawn(stream, QUEUE_CAPACITY))
    }

    /// Queues a report without blocking on the link.
    pub fn send(&self, msg: ReportMessage) -> Result<(), WireError> {
        let (lock, cv) = &*self.state;
        let mut s = lock.lock().unwrap();
        if s.failed {
            return Err(WireError::Closed);
        }
        if s.queue.push(msg).is_some() {
            log::warn!("report queue full, dropped oldest report ({} so far)", s.queue.dropped());
        }
        cv.notify_one();
        Ok(())
    }

    pub fn stats(&self) -> SenderStats {
        let s = self.state.0.lock().unwrap();
        SenderStats { dropped: s.queue.dropped(), ..s.stats }
    }

    /// Drains the queue, stops the worker and returns final counters.
    pub fn close(mut self) -> Result<SenderStats, WireError> {
        self.shutdown()?;
        Ok(self.stats())
    }

    fn shutdown(&mut self) -> Result<(), WireError> {
        {
            let (lock, cv) = &*self.state;
            lock.lock().unwrap().closing = true;
            cv.notify_one();
        }
        match self.worker.take() {
            Some(h) => h.join().map_err(|_| WireError::Closed)?,
            None => Ok(()),
        }
    }
}

impl Drop for ReportSender {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

fn run_worker<W: Write>(mut writer: W, state: SharedState) -> Result<(), WireError> {
    let (lock, cv) = &*state;
    let mut buf = Vec::with_capacity(512);
    loop {
        let msg = {
            let mut s = lock.lock().unwrap();
            loop {
                if let Some(m) = s.queue.pop() {
                    break m;
                }
                if s.closing {
                    drop(s);
                    writer.flush()?;
                    return Ok(());
                }
                s = cv.wait(s).unwrap();
            }
        };
        buf.clear();
        let result = frame_message(&msg, &mut buf).and_then(|_| Ok(writer.write_all(&buf)?));
        let mut s = lock.lock().unwrap();
        match result {
            Ok(()) => {
                s.stats.sent += 1;
                s.stats.bytes += buf.len() as u64;
            }
            Err(e) => {
                s.failed = true;
                return Err(e);
            }
        }
    }
}

/// Reads framed reports from one stream.
pub struct ReportReceiver<R> {
    reader: R,
    deframer: Deframer,
    done: bool,
}

impl<R: Read> ReportReceiver<R> {
    pub fn new(reader: R) -> Self {
        Self { reader, deframer: Deframer::new(), done: false }
    }

    /// Blocks until the next message or skip event; `None` at end of stream.
    pub fn next_event(&mut self) -> Result<Option<DeframeEvent>, WireError> {
        let mut chunk = [0u8; 1024];
        loop {
            if let Some(e) = self.deframer.next_event() {
                return Ok(Some(e));
            }
            if self.done {
                return Ok(None);
            }
            let n = self.reader.read(&mut chunk)?;
            if n == 0 {
                self.done = true;
                self.deframer.finish();
            } else {
                self.deframer.push(&chunk[..n]);
            }
        }
    }

    pub fn skipped_total(&self) -> usize {
        self.deframer.skipped_total()
    }
}

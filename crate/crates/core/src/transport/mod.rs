//! Message transport with byte and latency accounting.
//!
//! Every link meters the frames it moves and advances a simulated clock by
//! `latency + ceil(frame_bits / rate)` per frame, requests at the upload rate
//! and responses at the download rate. The TCP link applies the same model to
//! the frames it actually writes and reads, so both modes report identical
//! meters for identical conversations.

mod sim;
mod tcp;

use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::protocol::Message;

pub use sim::SimLink;
pub use tcp::{Server, ServerHandle, TcpLink};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error("prover did not answer within the deadline")]
    Timeout,
    #[error("connection closed")]
    Closed,
    #[error("undecodable frame: {0}")]
    Decode(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkConfig {
    pub latency_us: u64,
    pub down_bps: u64,
    pub up_bps: u64,
    /// Per-message deadline. Simulated links charge it to the clock on silence;
    /// TCP links also use it as the socket read timeout.
    pub timeout_us: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig { latency_us: 0, down_bps: 100_000_000, up_bps: 10_000_000, timeout_us: 2_000_000 }
    }
}

impl LinkConfig {
    pub fn with_latency_ms(mut self, ms: u64) -> Self {
        self.latency_us = ms * 1_000;
        self
    }

    pub fn upload_us(&self, frame_len: usize) -> u64 {
        self.latency_us + transfer_us(frame_len, self.up_bps)
    }

    pub fn download_us(&self, frame_len: usize) -> u64 {
        self.latency_us + transfer_us(frame_len, self.down_bps)
    }
}

/// Serialization delay of `bytes` at `rate_bps`, rounded up to whole microseconds.
pub fn transfer_us(bytes: usize, rate_bps: u64) -> u64 {
    assert!(rate_bps > 0, "link rate must be positive");
    (bytes as u128 * 8 * 1_000_000).div_ceil(rate_bps as u128) as u64
}

/// Cumulative link counters, all monotone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Meter {
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub frames_up: u64,
    pub frames_down: u64,
    pub exchanges: u64,
    pub clock_us: u64,
}

impl Meter {
    pub fn add(&mut self, other: &Meter) {
        self.bytes_up += other.bytes_up;
        self.bytes_down += other.bytes_down;
        self.frames_up += other.frames_up;
        self.frames_down += other.frames_down;
        self.exchanges += other.exchanges;
        self.clock_us += other.clock_us;
    }

    fn sent(&mut self, frame_len: usize, cfg: &LinkConfig) {
        self.bytes_up += frame_len as u64;
        self.frames_up += 1;
        self.clock_us += cfg.upload_us(frame_len);
    }

    fn received(&mut self, frame_len: usize, cfg: &LinkConfig) {
        self.bytes_down += frame_len as u64;
        self.frames_down += 1;
        self.clock_us += cfg.download_us(frame_len);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToProver,
    FromProver,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub link: u32,
    pub direction: Direction,
    pub frame: Vec<u8>,
}

/// Frame log shared by any number of links.
#[derive(Clone, Debug, Default)]
pub struct Transcript(Arc<Mutex<Vec<TranscriptEntry>>>);

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, link: u32, direction: Direction, frame: &[u8]) {
        self.0.lock().expect("transcript lock").push(TranscriptEntry { link, direction, frame: frame.to_vec() });
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.0.lock().expect("transcript lock").clone()
    }
}

/// Verifier-side handle on one prover.
pub trait ProverLink {
    /// Sends a request and waits for the single response.
    fn exchange(&mut self, request: &Message) -> Result<Message, LinkError>;

    /// One-way message; nothing is awaited.
    fn send(&mut self, message: &Message) -> Result<(), LinkError>;

    fn meter(&self) -> Meter;
}

/// Prover-side reaction to one request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reply {
    Send(Message),
    /// No answer: expected after one-way messages, a fault otherwise.
    Nothing,
    Hangup,
}

/// A prover endpoint answering requests of one connection.
pub trait Responder: Send {
    fn respond(&mut self, request: &Message) -> Reply;
}

/// Clock and meter bookkeeping shared by both link kinds.
#[derive(Debug)]
struct Accounting {
    config: LinkConfig,
    meter: Meter,
    transcript: Option<(Transcript, u32)>,
}

impl Accounting {
    fn outgoing(&mut self, frame: &[u8]) {
        self.meter.sent(frame.len(), &self.config);
        if let Some((t, id)) = &self.transcript {
            t.record(*id, Direction::ToProver, frame);
        }
    }

    fn incoming(&mut self, frame: &[u8]) {
        self.meter.received(frame.len(), &self.config);
        if let Some((t, id)) = &self.transcript {
            t.record(*id, Direction::FromProver, frame);
        }
    }

    fn waited_out(&mut self) {
        self.meter.clock_us += self.config.timeout_us;
    }
}

//! Bounded feature queue between concurrent producer sessions and the single
//! training consumer.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use splitstream_core::FeatureRecord;
use splitstream_proto::{HelloBody, IngestOutcome, ProtocolError, SessionSink};

pub const DEFAULT_CAPACITY: usize = 4096;

#[derive(Debug, Default)]
struct ClientLedger {
    admitted: BTreeSet<u64>,
    done: bool,
}

impl ClientLedger {
    /// Highest contiguous sample id + 1 (samples are locally numbered from
    /// zero).
    fn floor(&self) -> u64 {
        let mut floor = 0u64;
        while self.admitted.contains(&floor) {
            floor += 1;
        }
        floor
    }
}

#[derive(Debug, Default)]
struct QueueState {
    buf: VecDeque<FeatureRecord>,
    clients: BTreeMap<u32, ClientLedger>,
    done_count: usize,
    admitted_total: u64,
    duplicates_dropped: u64,
}

/// Bounded MPSC buffer with per-client dedup, DONE tracking and cumulative
/// acks. Producers block when full (backpressure); the consumer blocks until
/// a record arrives or every expected client has finished.
pub struct FeatureQueue {
    state: Mutex<QueueState>,
    not_full: Condvar,
    not_empty: Condvar,
    capacity: usize,
    expected_clients: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopOutcome {
    Record,
    Complete,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueStats {
    pub admitted: u64,
    pub duplicates_dropped: u64,
    pub clients_done: usize,
}

impl FeatureQueue {
    pub fn new(capacity: usize, expected_clients: usize) -> Self {
        FeatureQueue {
            state: Mutex::new(QueueState::default()),
            not_full: Condvar::new(),
            not_empty: Condvar::new(),
            capacity: capacity.max(1),
            expected_clients,
        }
    }

    /// Admits a record, blocking while the buffer is full. Duplicates are
    /// dropped idempotently; records after the client's DONE are a protocol
    /// error.
    pub fn ingest(&self, record: FeatureRecord) -> splitstream_proto::Result<IngestOutcome> {
        let mut state = self.state.lock().expect("queue poisoned");
        let ledger = state.clients.entry(record.client_id).or_default();
        if ledger.done {
            return Err(ProtocolError::RecordAfterDone);
        }
        if ledger.admitted.contains(&record.sample_id) {
            state.duplicates_dropped += 1;
            return Ok(IngestOutcome::Duplicate);
        }
        while state.buf.len() >= self.capacity {
            state = self.not_full.wait(state).expect("queue poisoned");
            // Re-check the ledger: a reconnected retry session for the same
            // client may have delivered this record, or finished the whole
            // stream, while this stale producer was blocked.
            let ledger = state.clients.entry(record.client_id).or_default();
            if ledger.done {
                return Err(ProtocolError::RecordAfterDone);
            }
            if ledger.admitted.contains(&record.sample_id) {
                state.duplicates_dropped += 1;
                return Ok(IngestOutcome::Duplicate);
            }
        }
        let ledger = state.clients.entry(record.client_id).or_default();
        ledger.admitted.insert(record.sample_id);
        state.admitted_total += 1;
        state.buf.push_back(record);
        drop(state);
        self.not_empty.notify_all();
        Ok(IngestOutcome::Admitted)
    }

    /// Marks a client finished (idempotent). Freezes its admitted count.
    pub fn mark_done(&self, client_id: u32) {
        let mut state = self.state.lock().expect("queue poisoned");
        let ledger = state.clients.entry(client_id).or_default();
        if !ledger.done {
            ledger.done = true;
            state.done_count += 1;
        }
        drop(state);
        self.not_empty.notify_all();
    }

    pub fn ack_floor(&self, client_id: u32) -> u64 {
        let state = self.state.lock().expect("queue poisoned");
        state.clients.get(&client_id).map_or(0, |l| l.floor())
    }

    fn complete_locked(&self, state: &QueueState) -> bool {
        state.done_count >= self.expected_clients && state.buf.is_empty()
    }

    /// Pops the next record in arrival order. Returns `Complete` once every
    /// expected client has sent DONE and the buffer has drained, `TimedOut`
    /// if nothing happened within the deadline.
    pub fn pop_timeout(&self, timeout: Duration) -> (PopOutcome, Option<FeatureRecord>) {
        let deadline = Instant::now() + timeout;
        let mut state = self.state.lock().expect("queue poisoned");
        loop {
            if let Some(record) = state.buf.pop_front() {
                drop(state);
                self.not_full.notify_all();
                return (PopOutcome::Record, Some(record));
            }
            if self.complete_locked(&state) {
                return (PopOutcome::Complete, None);
            }
            let now = Instant::now();
            if now >= deadline {
                return (PopOutcome::TimedOut, None);
            }
            let (s, _) = self
                .not_empty
                .wait_timeout(state, deadline - now)
                .expect("queue poisoned");
            state = s;
        }
    }

    pub fn stats(&self) -> QueueStats {
        let state = self.state.lock().expect("queue poisoned");
        QueueStats {
            admitted: state.admitted_total,
            duplicates_dropped: state.duplicates_dropped,
            clients_done: state.done_count,
        }
    }
}

impl SessionSink for FeatureQueue {
    fn on_hello(&self, client_id: u32, _hello: &HelloBody) -> splitstream_proto::Result<u64> {
        Ok(self.ack_floor(client_id))
    }

    fn on_record(&self, record: FeatureRecord) -> splitstream_proto::Result<IngestOutcome> {
        self.ingest(record)
    }

    fn on_done(&self, client_id: u32, declared: u64) -> splitstream_proto::Result<u64> {
        let floor = self.ack_floor(client_id);
        if floor != declared {
            return Err(ProtocolError::Unexpected(format!(
                "client {client_id} declared {declared} samples but {floor} were admitted"
            )));
        }
        self.mark_done(client_id);
        Ok(floor)
    }

    fn ack_floor(&self, client_id: u32) -> u64 {
        FeatureQueue::ack_floor(self, client_id)
    }
}

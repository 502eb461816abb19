use std::collections::{HashMap, VecDeque};
use std::sync::{Condvar, Mutex};

use super::{NetConfig, RankId, TimelineEvent, VirtualTimeline, VolumeLedger};
use crate::error::{Error, Result};

struct Message<T> {
    payload: Vec<T>,
    arrival: f64,
}

struct Mailbox<T> {
    queues: HashMap<(usize, usize), VecDeque<Message<T>>>,
    /// `Some(from)` while a rank is blocked receiving from `from`.
    waiting: Vec<Option<usize>>,
    done: Vec<bool>,
    deadlock: bool,
}

impl<T> Mailbox<T> {
    fn stalled(&self) -> bool {
        (0..self.done.len()).all(|r| {
            self.done[r]
                || matches!(self.waiting[r], Some(from) if self.queues.get(&(from, r)).is_none_or(VecDeque::is_empty))
        })
    }
}

struct Shared<T> {
    mailbox: Mutex<Mailbox<T>>,
    wake: Condvar,
}

impl<T> Shared<T> {
    fn finish(&self, rank: usize) {
        let mut mb = self.mailbox.lock().unwrap();
        mb.done[rank] = true;
        mb.waiting[rank] = None;
        if !mb.deadlock && mb.stalled() && mb.done.iter().any(|d| !d) {
            mb.deadlock = true;
        }
        self.wake.notify_all();
    }
}

/// Handle a rank program uses to compute and communicate in virtual time.
pub struct RankCtx<'a, T> {
    rank: usize,
    ranks: usize,
    net: NetConfig,
    shared: &'a Shared<T>,
    now: f64,
    comm_now: f64,
    channel_free: Vec<f64>,
    events: Vec<TimelineEvent>,
    ledger: VolumeLedger,
}

impl<'a, T: Clone + Send> RankCtx<'a, T> {
    pub fn rank(&self) -> RankId {
        RankId(self.rank)
    }

    pub fn index(&self) -> usize {
        self.rank
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    pub fn net(&self) -> &NetConfig {
        &self.net
    }

    /// Compute-stream clock.
    pub fn now(&self) -> f64 {
        self.now
    }

    /// Communication-stream clock.
    pub fn comm_now(&self) -> f64 {
        self.comm_now
    }

    /// Occupies the compute stream for `cost` virtual seconds.
    pub fn compute(&mut self, label: &str, cost: f64) {
        let start = self.now;
        self.now += cost.max(0.0);
        if cost > 0.0 {
            self.push_event(format!("compute:{label}"), start, self.now);
        }
    }

    /// Stream barrier: both clocks advance to the later of the two.
    pub fn join(&mut self) {
        let t = self.now.max(self.comm_now);
        self.now = t;
        self.comm_now = t;
    }

    fn comm_start(&self) -> f64 {
        self.now.max(self.comm_now)
    }

    pub(crate) fn charge_comm(&mut self, label: &str, cost: f64) {
        if cost > 0.0 {
            let start = self.comm_start();
            self.comm_now = start + cost;
            self.push_event(format!("comm:{label}"), start, self.comm_now);
        }
    }

    fn push_event(&mut self, label: String, start: f64, end: f64) {
        self.events.push(TimelineEvent { rank: self.rank, label, start, end });
    }

    fn check_peer(&self, peer: usize) -> Result<()> {
        if peer >= self.ranks || peer == self.rank {
            return Err(Error::Config(format!("rank {} cannot address peer {peer} of {}", self.rank, self.ranks)));
        }
        Ok(())
    }

    /// Eager send on the communication stream. The channel to `to` is busy
    /// for `τ(len)` starting when both it and the stream are free; the stream
    /// resumes once the message has arrived.
    pub(crate) fn send_tagged(&mut self, to: usize, payload: Vec<T>, primitive: &str) -> Result<f64> {
        self.check_peer(to)?;
        let n = payload.len();
        let start = self.comm_start().max(self.channel_free[to]);
        let arrival = start + self.net.tau(n as f64);
        self.channel_free[to] = arrival;
        self.comm_now = arrival;
        self.push_event(format!("comm:{primitive} send ->{to}"), start, arrival);
        self.ledger.record_sent(self.rank, primitive, n as u64);
        let mut mb = self.shared.mailbox.lock().unwrap();
        mb.queues.entry((self.rank, to)).or_default().push_back(Message { payload, arrival });
        self.shared.wake.notify_all();
        Ok(arrival)
    }

    /// Blocking receive; the communication stream waits until the message's
    /// arrival time.
    pub(crate) fn recv_tagged(&mut self, from: usize, primitive: &str) -> Result<Vec<T>> {
        self.check_peer(from)?;
        let msg = {
            let mut mb = self.shared.mailbox.lock().unwrap();
            loop {
                if let Some(m) = mb.queues.get_mut(&(from, self.rank)).and_then(VecDeque::pop_front) {
                    mb.waiting[self.rank] = None;
                    break m;
                }
                if mb.deadlock {
                    return Err(self.deadlock(from));
                }
                mb.waiting[self.rank] = Some(from);
                if mb.stalled() {
                    mb.deadlock = true;
                    self.shared.wake.notify_all();
                    return Err(self.deadlock(from));
                }
                mb = self.shared.wake.wait(mb).unwrap();
            }
        };
        let posted = self.comm_start();
        self.comm_now = posted.max(msg.arrival);
        self.push_event(format!("comm:{primitive} recv <-{from}"), posted, self.comm_now);
        self.ledger.record_received(self.rank, primitive, msg.payload.len() as u64);
        Ok(msg.payload)
    }

    fn deadlock(&self, from: usize) -> Error {
        Error::Deadlock(format!("rank {} waiting on rank {from}", self.rank))
    }

    /// Point-to-point send.
    pub fn send(&mut self, to: RankId, payload: Vec<T>) -> Result<f64> {
        self.send_tagged(to.0, payload, "p2p")
    }

    /// Point-to-point receive.
    pub fn recv(&mut self, from: RankId) -> Result<Vec<T>> {
        self.recv_tagged(from.0, "p2p")
    }
}

/// Per-rank results plus the ledger and timeline of a single run. Times
/// start at zero.
#[derive(Debug, Clone)]
pub struct RunRecord<R> {
    pub results: Vec<R>,
    pub ledger: VolumeLedger,
    pub timeline: VirtualTimeline,
}

/// `P` logical ranks on a linear chain, with a cumulative ledger, timeline
/// and virtual clock across runs.
#[derive(Debug, Clone)]
pub struct VirtualCluster {
    ranks: usize,
    net: NetConfig,
    ledger: VolumeLedger,
    timeline: VirtualTimeline,
    clock: f64,
}

impl VirtualCluster {
    pub fn new(ranks: usize, net: NetConfig) -> Result<Self> {
        if ranks == 0 {
            return Err(Error::Config("cluster needs at least one rank".into()));
        }
        Ok(VirtualCluster {
            ranks,
            net,
            ledger: VolumeLedger::new(ranks),
            timeline: VirtualTimeline::default(),
            clock: 0.0,
        })
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    pub fn net(&self) -> &NetConfig {
        &self.net
    }

    /// Channels `p -> p+1`.
    pub fn forward_channels(&self) -> Vec<(RankId, RankId)> {
        (1..self.ranks).map(|p| (RankId(p - 1), RankId(p))).collect()
    }

    /// Channels `p -> p-1`.
    pub fn backward_channels(&self) -> Vec<(RankId, RankId)> {
        (1..self.ranks).map(|p| (RankId(p), RankId(p - 1))).collect()
    }

    /// Cumulative ledger over every run so far.
    pub fn ledger(&self) -> &VolumeLedger {
        &self.ledger
    }

    /// Cumulative timeline; each run is offset by the clock at its start.
    pub fn timeline(&self) -> &VirtualTimeline {
        &self.timeline
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Runs `program` once per rank. The first error in rank order wins,
    /// with deadlock reports ranked after any other error.
    pub fn run<T, R, F>(&mut self, program: F) -> Result<RunRecord<R>>
    where
        T: Clone + Send,
        R: Send,
        F: Fn(&mut RankCtx<'_, T>) -> Result<R> + Sync,
    {
        let shared = Shared {
            mailbox: Mutex::new(Mailbox {
                queues: HashMap::new(),
                waiting: vec![None; self.ranks],
                done: vec![false; self.ranks],
                deadlock: false,
            }),
            wake: Condvar::new(),
        };
        let (ranks, net) = (self.ranks, self.net);
        let outcomes: Vec<(Result<R>, Vec<TimelineEvent>, VolumeLedger)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..ranks)
                .map(|rank| {
                    let shared = &shared;
                    let program = &program;
                    scope.spawn(move || {
                        let mut ctx = RankCtx {
                            rank,
                            ranks,
                            net,
                            shared,
                            now: 0.0,
                            comm_now: 0.0,
                            channel_free: vec![0.0; ranks],
                            events: Vec::new(),
                            ledger: VolumeLedger::new(ranks),
                        };
                        let out = program(&mut ctx);
                        shared.finish(rank);
                        (out, ctx.events, ctx.ledger)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("rank program panicked")).collect()
        });

        let mut results = Vec::with_capacity(ranks);
        let mut events = Vec::new();
        let mut ledger = VolumeLedger::new(ranks);
        let mut first_err: Option<Error> = None;
        for (out, ev, led) in outcomes {
            events.extend(ev);
            ledger.merge(&led);
            match out {
                Ok(r) => results.push(r),
                Err(e) => {
                    let replace = match (&first_err, &e) {
                        (None, _) => true,
                        (Some(Error::Deadlock(_)), err) => !matches!(err, Error::Deadlock(_)),
                        _ => false,
                    };
                    if replace {
                        first_err = Some(e);
                    }
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        let timeline = VirtualTimeline::new(events);
        self.ledger.merge(&ledger);
        self.timeline.append_shifted(&timeline, self.clock);
        self.clock += timeline.makespan();
        Ok(RunRecord { results, ledger, timeline })
    }
}

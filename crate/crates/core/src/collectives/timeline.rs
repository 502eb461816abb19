use serde::Serialize;

/// One interval of activity on one rank. Labels start with the stream name
/// (`compute:` or `comm:`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineEvent {
    pub rank: usize,
    pub label: String,
    pub start: f64,
    pub end: f64,
}

impl TimelineEvent {
    pub fn stream(&self) -> &str {
        self.label.split(':').next().unwrap_or("")
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Virtual-time event log of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VirtualTimeline {
    events: Vec<TimelineEvent>,
}

impl VirtualTimeline {
    pub fn new(events: Vec<TimelineEvent>) -> Self {
        VirtualTimeline { events }
    }

    pub fn events(&self) -> &[TimelineEvent] {
        &self.events
    }

    pub fn makespan(&self) -> f64 {
        self.events.iter().map(|e| e.end).fold(0.0, f64::max)
    }

    /// Latest event end on `rank`.
    pub fn rank_end(&self, rank: usize) -> f64 {
        self.events.iter().filter(|e| e.rank == rank).map(|e| e.end).fold(0.0, f64::max)
    }

    /// Total duration of events whose label starts with `prefix`, on `rank`.
    pub fn busy(&self, rank: usize, prefix: &str) -> f64 {
        self.events.iter().filter(|e| e.rank == rank && e.label.starts_with(prefix)).map(TimelineEvent::duration).sum()
    }

    pub(crate) fn append_shifted(&mut self, other: &VirtualTimeline, offset: f64) {
        self.events.extend(other.events.iter().map(|e| TimelineEvent {
            start: e.start + offset,
            end: e.end + offset,
            ..e.clone()
        }));
    }

    /// True when no two events of the same rank and stream overlap.
    pub fn streams_are_serial(&self) -> bool {
        let mut by_key: std::collections::BTreeMap<(usize, &str), Vec<(f64, f64)>> = Default::default();
        for e in &self.events {
            by_key.entry((e.rank, e.stream())).or_default().push((e.start, e.end));
        }
        by_key.values_mut().all(|iv| {
            iv.sort_by(|a, b| a.partial_cmp(b).unwrap());
            iv.windows(2).all(|w| w[0].1 <= w[1].0)
        })
    }

    /// JSON array of `{rank, label, start, end}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.events).expect("events serialize")
    }
}

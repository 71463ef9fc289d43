//! Events on disk and their conversion into model inputs.

mod event;
mod featurize;
pub mod synthetic;
mod vocab;

use std::collections::BTreeMap;

use serde::Serialize;

pub use event::{parse_events, parse_events_str, to_jsonl, write_events, EventRecord, PostNode};
pub use featurize::{featurize, featurize_unchecked, graph_view, sequence_view, Featurized};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use vocab::{build_vocabulary, Vocabulary, DEFAULT_MAX_SIZE, DEFAULT_MIN_COUNT};

/// Keeps the posts visible at `deadline_minutes` (inclusive). The source post
/// is always kept, and a post is dropped whenever its parent was dropped.
pub fn truncate_by_deadline(event: &EventRecord, deadline_minutes: f64) -> EventRecord {
    let parents = event.parent_indices();
    let mut keep = vec![false; event.nodes.len()];
    keep[0] = true;
    // Resolve ancestors first so a kept node always has a kept parent.
    let mut order: Vec<usize> = (0..event.nodes.len()).collect();
    let depths = event.depths();
    order.sort_by_key(|&i| depths[i]);
    for i in order {
        if let Some(p) = parents[i] {
            keep[i] = keep[p] && event.nodes[i].timestamp_minutes <= deadline_minutes;
        }
    }
    EventRecord {
        event_id: event.event_id.clone(),
        label: event.label,
        nodes: event
            .nodes
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(n, _)| n.clone())
            .collect(),
    }
}

/// Depth buckets 1..=5 and ">5", root at depth 1.
pub const DEPTH_BUCKETS: usize = 6;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub events: usize,
    pub posts: usize,
    pub class_counts: BTreeMap<usize, usize>,
    /// Node counts per depth bucket.
    pub depth_histogram: [usize; DEPTH_BUCKETS],
}

pub fn compute_stats(events: &[EventRecord]) -> DatasetStats {
    let mut stats = DatasetStats {
        events: events.len(),
        ..Default::default()
    };
    for e in events {
        stats.posts += e.nodes.len();
        *stats.class_counts.entry(e.label).or_default() += 1;
        for d in e.depths() {
            stats.depth_histogram[d.min(DEPTH_BUCKETS) - 1] += 1;
        }
    }
    stats
}

impl DatasetStats {
    /// `metric,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("events,{}\n", self.events));
        out.push_str(&format!("posts,{}\n", self.posts));
        let avg = if self.events == 0 {
            0.0
        } else {
            self.posts as f64 / self.events as f64
        };
        out.push_str(&format!("avg_posts_per_event,{avg:.4}\n"));
        for (c, n) in &self.class_counts {
            out.push_str(&format!("class_{c},{n}\n"));
        }
        for (i, n) in self.depth_histogram.iter().enumerate() {
            if i + 1 < DEPTH_BUCKETS {
                out.push_str(&format!("depth_{},{n}\n", i + 1));
            } else {
                out.push_str(&format!("depth_gt{},{n}\n", DEPTH_BUCKETS - 1));
            }
        }
        out
    }
}

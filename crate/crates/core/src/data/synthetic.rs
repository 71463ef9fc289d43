//! Labeled synthetic cascades.
//!
//! Each class owns a branching profile (how many direct replies the source
//! post draws and how strongly replies are themselves replied to), a pool of
//! topic tokens for source posts and a separate pool for replies. `correlation` scales both signals: at 0 every class uses
//! the same averaged profile and only background tokens; at 1 the class
//! profiles and topic rates apply in full.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use super::{EventRecord, PostNode};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_events: usize,
    pub n_classes: usize,
    pub correlation: f64,
    pub seed: u64,
    pub background_tokens: usize,
    pub topic_tokens_per_class: usize,
    /// Probability that a source-post token comes from the class topic pool
    /// at correlation 1.
    pub root_topic_rate: f64,
    /// Same for reply tokens.
    pub reply_topic_rate: f64,
    pub root_tokens: (usize, usize),
    pub reply_tokens: (usize, usize),
    /// Mean direct-reply count of the source post, lowest and highest class.
    pub root_fanout: (f64, f64),
    /// Mean reply count of a reply, lowest and highest class.
    pub reply_fanout: (f64, f64),
    pub mean_delay_minutes: f64,
    pub max_nodes: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_events: 400,
            n_classes: 4,
            correlation: 0.8,
            seed: 7,
            background_tokens: 200,
            topic_tokens_per_class: 20,
            root_topic_rate: 0.45,
            reply_topic_rate: 0.2,
            root_tokens: (6, 12),
            reply_tokens: (2, 5),
            root_fanout: (1.5, 9.0),
            reply_fanout: (0.95, 0.15),
            mean_delay_minutes: 45.0,
            max_nodes: 48,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ClassProfile {
    root_fanout: f64,
    reply_fanout: f64,
    root_topic_rate: f64,
    reply_topic_rate: f64,
}

impl SyntheticConfig {
    pub fn new(n_events: usize, n_classes: usize, correlation: f64, seed: u64) -> Self {
        Self {
            n_events,
            n_classes,
            correlation,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::Input(format!(
                "correlation must lie in [0, 1], got {}",
                self.correlation
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Input("need at least 2 classes".into()));
        }
        if self.n_events < self.n_classes {
            return Err(Error::Input(format!(
                "{} events cannot cover {} classes",
                self.n_events, self.n_classes
            )));
        }
        if self.max_nodes == 0 || self.root_tokens.0 > self.root_tokens.1 || self.reply_tokens.0 > self.reply_tokens.1 {
            return Err(Error::Input("invalid synthetic size parameters".into()));
        }
        Ok(())
    }

    fn profile(&self, class: usize) -> ClassProfile {
        let frac = class as f64 / (self.n_classes - 1) as f64;
        let lerp = |(lo, hi): (f64, f64)| lo + frac * (hi - lo);
        let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
        let c = self.correlation;
        ClassProfile {
            root_fanout: mid(self.root_fanout) + c * (lerp(self.root_fanout) - mid(self.root_fanout)),
            reply_fanout: mid(self.reply_fanout) + c * (lerp(self.reply_fanout) - mid(self.reply_fanout)),
            root_topic_rate: c * self.root_topic_rate,
            reply_topic_rate: c * self.reply_topic_rate,
        }
    }
}

fn draw_tokens<R: Rng>(
    cfg: &SyntheticConfig,
    pool: &str,
    class: usize,
    rate: f64,
    (lo, hi): (usize, usize),
    rng: &mut R,
) -> Vec<String> {
    let n = rng.random_range(lo..=hi);
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < rate {
                format!("{pool}{class}_{}", rng.random_range(0..cfg.topic_tokens_per_class))
            } else {
                format!("w{}", rng.random_range(0..cfg.background_tokens))
            }
        })
        .collect()
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map_or(0, |d| d.sample(rng) as usize)
}

/// Generates `n_events` events with labels assigned round-robin.
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<EventRecord>> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, "synthetic");
    let delay = Exp::new(1.0 / cfg.mean_delay_minutes.max(1e-9))
        .map_err(|e| Error::Input(format!("delay distribution: {e}")))?;
    let profiles: Vec<ClassProfile> = (0..cfg.n_classes).map(|k| cfg.profile(k)).collect();

    let mut events = Vec::with_capacity(cfg.n_events);
    for i in 0..cfg.n_events {
        let label = i % cfg.n_classes;
        let p = profiles[label];
        let mut nodes = vec![PostNode {
            node_id: 0,
            parent_id: None,
            timestamp_minutes: 0.0,
            tokens: draw_tokens(cfg, "c", label, p.root_topic_rate, cfg.root_tokens, &mut rng),
        }];
        // Breadth-first growth; the source post always has at least one reply.
        let mut frontier = VecDeque::from([0usize]);
        while let Some(parent) = frontier.pop_front() {
            let children = if parent == 0 {
                1 + poisson(p.root_fanout - 1.0, &mut rng)
            } else {
                poisson(p.reply_fanout, &mut rng)
            };
            for _ in 0..children {
                if nodes.len() >= cfg.max_nodes {
                    break;
                }
                let id = nodes.len();
                let t = nodes[parent].timestamp_minutes + delay.sample(&mut rng);
                nodes.push(PostNode {
                    node_id: id as i64,
                    parent_id: Some(parent as i64),
                    timestamp_minutes: t,
                    tokens: draw_tokens(cfg, "r", label, p.reply_topic_rate, cfg.reply_tokens, &mut rng),
                });
                frontier.push_back(id);
            }
        }
        events.push(EventRecord {
            event_id: format!("syn-{i:05}"),
            label,
            nodes,
        });
    }
    Ok(events)
}

/// Convenience wrapper with default shape parameters.
pub fn generate_synthetic(n_events: usize, n_classes: usize, correlation: f64, seed: u64) -> Result<Vec<EventRecord>> {
    generate(&SyntheticConfig::new(n_events, n_classes, correlation, seed))
}

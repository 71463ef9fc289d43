use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One post inside an event. Serialized with the short keys of the JSONL
/// interchange format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostNode {
    #[serde(rename = "id")]
    pub node_id: i64,
    #[serde(rename = "parent")]
    pub parent_id: Option<i64>,
    /// Minutes after the source post.
    #[serde(rename = "t")]
    pub timestamp_minutes: f64,
    pub tokens: Vec<String>,
}

/// A labeled event: the source post (always node 0 after validation) and
/// every reply in its propagation tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub label: usize,
    pub nodes: Vec<PostNode>,
}

impl EventRecord {
    /// Checks the tree invariants and moves the root to index 0.
    pub fn validate(mut self) -> Result<Self, String> {
        if self.nodes.is_empty() {
            return Err("event has no nodes".into());
        }
        let roots: Vec<usize> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.parent_id.is_none())
            .map(|(i, _)| i)
            .collect();
        match roots.len() {
            0 => return Err("no root node (every node has a parent)".into()),
            1 => {}
            n => return Err(format!("{n} root nodes; exactly one expected")),
        }
        if roots[0] != 0 {
            let root = self.nodes.remove(roots[0]);
            self.nodes.insert(0, root);
        }

        let mut index = HashMap::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            if index.insert(n.node_id, i).is_some() {
                return Err(format!("duplicate node id {}", n.node_id));
            }
            if !n.timestamp_minutes.is_finite() || n.timestamp_minutes < 0.0 {
                return Err(format!(
                    "node {} has invalid timestamp {}",
                    n.node_id, n.timestamp_minutes
                ));
            }
        }
        if self.nodes[0].timestamp_minutes != 0.0 {
            return Err("root timestamp must be 0".into());
        }
        let mut parents = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            match n.parent_id {
                None => parents.push(None),
                Some(p) if p == n.node_id => {
                    return Err(format!("cycle: node {} is its own parent", n.node_id))
                }
                Some(p) => match index.get(&p) {
                    Some(&pi) => parents.push(Some(pi)),
                    None => return Err(format!("node {} has unknown parent {p}", n.node_id)),
                },
            }
        }
        // With one root and resolvable parents, a node that cannot reach the
        // root lies on a cycle.
        for start in 0..parents.len() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parents[cur] {
                cur = p;
                steps += 1;
                if steps > parents.len() {
                    return Err(format!(
                        "cycle through node {}",
                        self.nodes[start].node_id
                    ));
                }
            }
        }
        Ok(self)
    }

    /// Parent node index for every node; `None` for the root.
    pub fn parent_indices(&self) -> Vec<Option<usize>> {
        let index: HashMap<i64, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.node_id, i))
            .collect();
        self.nodes
            .iter()
            .map(|n| n.parent_id.and_then(|p| index.get(&p).copied()))
            .collect()
    }

    /// `(child, parent)` index pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parent_indices()
            .into_iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (c, p)))
            .collect()
    }

    /// Depth of every node, with the root at depth 1.
    pub fn depths(&self) -> Vec<usize> {
        let parents = self.parent_indices();
        let mut depth = vec![0usize; parents.len()];
        fn resolve(i: usize, parents: &[Option<usize>], depth: &mut [usize]) -> usize {
            if depth[i] == 0 {
                depth[i] = match parents[i] {
                    None => 1,
                    Some(p) => resolve(p, parents, depth) + 1,
                };
            }
            depth[i]
        }
        for i in 0..parents.len() {
            resolve(i, &parents, &mut depth);
        }
        depth
    }

    /// Mean number of replies per node that has at least one reply; zero for
    /// a lone root.
    pub fn mean_fanout(&self) -> f64 {
        let parents = self.parent_indices();
        let mut children = vec![0usize; parents.len()];
        for p in parents.into_iter().flatten() {
            children[p] += 1;
        }
        let internal = children.iter().filter(|&&c| c > 0).count();
        if internal == 0 {
            0.0
        } else {
            (self.nodes.len() - 1) as f64 / internal as f64
        }
    }

    pub fn root(&self) -> &PostNode {
        &self.nodes[0]
    }
}

/// Parses JSON Lines text, one event per non-blank line.
pub fn parse_events_str(text: &str) -> Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: EventRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let record = record
            .validate()
            .map_err(|msg| Error::Parse { line: line_no, msg })?;
        out.push(record);
    }
    Ok(out)
}

pub fn parse_events(path: impl AsRef<Path>) -> Result<Vec<EventRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_events_str(&text)
}

pub fn to_jsonl(events: &[EventRecord]) -> Result<String> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_events(path: impl AsRef<Path>, events: &[EventRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(to_jsonl(events)?.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

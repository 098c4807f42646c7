//! Procedure-code grouping: a prefix tree over hierarchical codes
//! (ICD-9-CM style, e.g. "45.13") whose nodes carry log-ratio encodings of
//! their code group. A code is encoded by its deepest ancestor node with at
//! least `min_support` training cases.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::encoding::log_ratio_encoding;

pub const DEFAULT_MIN_SUPPORT: usize = 10;
pub const DEFAULT_DEPTH: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcNode {
    pub count: usize,
    pub encoding: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcedureTree {
    pub depth: usize,
    pub min_support: usize,
    /// Nodes keyed by canonical prefix (dots stripped): "45", "451", "4513".
    pub nodes: BTreeMap<String, ProcNode>,
    /// Encoding for empty/unmatched codes; neutral by construction.
    pub fallback: f64,
}

/// Canonical digit string with hierarchy separators removed.
fn canonical(code: &str) -> String {
    code.chars().filter(|c| *c != '.').collect()
}

/// Prefixes from the 2-character root down to `depth` levels: level d covers
/// the first (d + 1) characters.
fn prefixes(code: &str, depth: usize) -> Vec<String> {
    let canon = canonical(code);
    let chars: Vec<char> = canon.chars().collect();
    let mut out = Vec::new();
    for level in 1..=depth {
        let take = (level + 1).min(chars.len());
        if take == 0 {
            break;
        }
        let prefix: String = chars[..take].iter().collect();
        if out.last() == Some(&prefix) {
            break; // code exhausted; deeper levels repeat
        }
        out.push(prefix);
    }
    out
}

/// Build the tree from (code, outcome label) training pairs at the given
/// prefix depth.
pub fn encode_procedures(
    train_codes: &[(String, u8)],
    depth: usize,
    min_support: usize,
) -> ProcedureTree {
    let n_event = train_codes.iter().filter(|(_, y)| *y == 1).count();
    let n_nonevent = train_codes.len() - n_event;
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (code, label) in train_codes {
        if code.is_empty() {
            continue;
        }
        for prefix in prefixes(code, depth) {
            let entry = counts.entry(prefix).or_insert((0, 0));
            if *label == 1 {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
        }
    }
    let nodes = counts
        .into_iter()
        .map(|(prefix, (ce, cne))| {
            (
                prefix,
                ProcNode {
                    count: ce + cne,
                    encoding: log_ratio_encoding(ce, cne, n_event, n_nonevent),
                },
            )
        })
        .collect();
    ProcedureTree {
        depth,
        min_support,
        nodes,
        fallback: 0.0,
    }
}

impl ProcedureTree {
    /// Deepest supported ancestor encoding; global fallback when no ancestor
    /// reaches `min_support` (or the code is empty/unseen).
    pub fn encode(&self, code: &str) -> f64 {
        if code.is_empty() {
            return self.fallback;
        }
        for prefix in prefixes(code, self.depth).into_iter().rev() {
            if let Some(node) = self.nodes.get(&prefix) {
                if node.count >= self.min_support {
                    return node.encoding;
                }
            }
        }
        self.fallback
    }
}

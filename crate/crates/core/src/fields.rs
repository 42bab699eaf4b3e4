//! Field prediction from location vectors.
//!
//! Fields of one template node recur at a constant index offset from each
//! other in every record, while values land at irregular positions. Phrases
//! are clustered by exact offset matches, clusters are scored with a
//! field-likelihood oracle and pruned by dominance, and pruned clusters that
//! partially match a kept field are recovered.

use std::collections::BTreeSet;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::DocumentStream;
use crate::oracle::{FieldOracle, HeuristicOracle};

pub type FieldSet = BTreeSet<String>;

/// Ascending occurrence indexes of one distinct phrase text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationVector {
    pub text: String,
    pub indexes: Vec<u32>,
}

impl LocationVector {
    pub fn new(text: impl Into<String>, indexes: Vec<u32>) -> Self {
        debug_assert!(indexes.windows(2).all(|w| w[0] < w[1]));
        Self {
            text: text.into(),
            indexes,
        }
    }

    pub fn len(&self) -> usize {
        self.indexes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indexes.is_empty()
    }
}

/// Location vectors keyed by text, in order of first occurrence.
pub type LocationVectors = IndexMap<String, LocationVector>;

pub fn location_vectors(stream: &DocumentStream) -> LocationVectors {
    let mut map: LocationVectors = IndexMap::new();
    for p in &stream.phrases {
        map.entry(p.text.clone())
            .or_insert_with(|| LocationVector::new(p.text.clone(), Vec::new()))
            .indexes
            .push(p.index);
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchResult {
    pub matched: bool,
    pub delta: Option<u32>,
}

impl MatchResult {
    const NO: MatchResult = MatchResult {
        matched: false,
        delta: None,
    };
}

/// Equal lengths greater than one, and a constant absolute index difference.
pub fn perfect_match(a: &LocationVector, b: &LocationVector) -> MatchResult {
    if a.len() != b.len() || b.len() <= 1 {
        return MatchResult::NO;
    }
    let delta = a.indexes[0].abs_diff(b.indexes[0]);
    let same = a
        .indexes
        .iter()
        .zip(&b.indexes)
        .all(|(i, j)| i.abs_diff(*j) == delta);
    if !same {
        return MatchResult::NO;
    }
    let signs: BTreeSet<_> = a
        .indexes
        .iter()
        .zip(&b.indexes)
        .map(|(i, j)| i.cmp(j))
        .collect();
    if signs.len() > 1 {
        log::debug!(
            "perfect match of {:?} and {:?} flips offset sign",
            a.text,
            b.text
        );
    }
    MatchResult {
        matched: true,
        delta: Some(delta),
    }
}

/// Whether some subsequence of `long` perfectly matches `short`.
///
/// Argument order is by length, not by the order the two phrases were seen:
/// the longer vector always supplies the subsequence.
pub fn partial_perfect_match(long: &LocationVector, short: &LocationVector) -> bool {
    if short.len() <= 1 || long.len() < short.len() {
        return false;
    }
    if long.len() == short.len() {
        return perfect_match(long, short).matched;
    }
    let s0 = i64::from(short.indexes[0]);
    long.indexes.iter().enumerate().any(|(start, &anchor)| {
        let shift = i64::from(anchor) - s0;
        let mut pos = start;
        short.indexes.iter().all(|&s| {
            let target = i64::from(s) + shift;
            while pos < long.len() && i64::from(long.indexes[pos]) < target {
                pos += 1;
            }
            pos < long.len() && i64::from(long.indexes[pos]) == target
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    /// Distinct member texts in order of joining.
    pub members: Vec<String>,
    pub prob_field: Option<f64>,
    pub ci_width: Option<f64>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_singleton(&self) -> bool {
        self.members.len() == 1
    }

    /// `self` has a strictly higher field probability and a strictly narrower interval.
    pub fn dominates(&self, other: &Cluster) -> bool {
        let (p1, w1) = (self.prob_field.unwrap_or(0.0), self.ci_width.unwrap_or(0.0));
        let (p2, w2) = (other.prob_field.unwrap_or(0.0), other.ci_width.unwrap_or(0.0));
        p1 > p2 && w1 < w2
    }
}

/// Scans texts in first-occurrence order; each joins the first cluster holding
/// a perfect match, otherwise founds a new cluster.
pub fn cluster_phrases(vectors: &LocationVectors) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for v in vectors.values() {
        let home = clusters.iter_mut().find(|c| {
            c.members
                .iter()
                .any(|m| perfect_match(v, &vectors[m.as_str()]).matched)
        });
        match home {
            Some(c) => c.members.push(v.text.clone()),
            None => {
                let id = clusters.len();
                clusters.push(Cluster {
                    id,
                    members: vec![v.text.clone()],
                    prob_field: None,
                    ci_width: None,
                });
            }
        }
    }
    clusters
}

/// Width of the normal-approximation confidence interval, `2 z sqrt(p(1-p)/n)`.
pub fn ci_width(prob: f64, n: usize, z: f64) -> f64 {
    2.0 * z * (prob * (1.0 - prob) / n as f64).sqrt()
}

pub fn score_cluster(cluster: &Cluster, oracle: &dyn FieldOracle, z: f64) -> Result<Cluster> {
    let flagged = oracle
        .flag_fields(&cluster.members)
        .map_err(|e| Error::Oracle {
            cluster: cluster.id,
            message: e.0,
        })?;
    let flagged: BTreeSet<&str> = flagged.iter().map(String::as_str).collect();
    let hits = cluster
        .members
        .iter()
        .filter(|m| flagged.contains(m.as_str()))
        .count();
    let n = cluster.members.len();
    let prob = hits as f64 / n as f64;
    Ok(Cluster {
        prob_field: Some(prob),
        ci_width: Some(ci_width(prob, n, z)),
        ..cluster.clone()
    })
}

#[derive(Debug, Clone, Default)]
pub struct Pruning {
    pub kept: Vec<Cluster>,
    pub pruned: Vec<Cluster>,
}

/// Drops singletons, then keeps the clusters no other cluster dominates.
pub fn prune_clusters(clusters: &[Cluster]) -> Pruning {
    let (singletons, candidates): (Vec<_>, Vec<_>) =
        clusters.iter().cloned().partition(Cluster::is_singleton);
    let mut out = Pruning {
        kept: Vec::new(),
        pruned: singletons,
    };
    for c in &candidates {
        if candidates.iter().any(|d| d.dominates(c)) {
            out.pruned.push(c.clone());
        } else {
            out.kept.push(c.clone());
        }
    }
    out.pruned.sort_by_key(|c| c.id);
    out
}

/// Kept texts, plus every pruned cluster holding a member whose vector is a
/// partial match of a kept member's shorter-or-equal vector.
pub fn recover_clusters(kept: &[Cluster], pruned: &[Cluster], vectors: &LocationVectors) -> FieldSet {
    let mut fields: FieldSet = kept.iter().flat_map(|c| c.members.iter().cloned()).collect();
    for cj in pruned {
        let recovered = kept.iter().flat_map(|c| &c.members).any(|pi| {
            let vi = &vectors[pi.as_str()];
            cj.members.iter().any(|pj| {
                let vj = &vectors[pj.as_str()];
                vi.len() <= vj.len() && partial_perfect_match(vj, vi)
            })
        });
        if recovered {
            fields.extend(cj.members.iter().cloned());
        }
    }
    fields
}

#[derive(Debug, Clone, Copy)]
pub struct FieldPredictionOptions {
    pub z: f64,
    /// Score with the heuristic rule when the oracle fails instead of erroring.
    pub heuristic_fallback: bool,
}

impl Default for FieldPredictionOptions {
    fn default() -> Self {
        Self {
            z: 1.96,
            heuristic_fallback: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FieldPrediction {
    pub fields: FieldSet,
    pub clusters: Vec<Cluster>,
    pub pruning: Pruning,
}

pub fn predict_fields(
    stream: &DocumentStream,
    oracle: &dyn FieldOracle,
    opts: FieldPredictionOptions,
) -> Result<FieldPrediction> {
    let vectors = location_vectors(stream);
    let mut clusters = cluster_phrases(&vectors);
    for c in clusters.iter_mut().filter(|c| !c.is_singleton()) {
        *c = match score_cluster(c, oracle, opts.z) {
            Ok(scored) => scored,
            Err(e) if opts.heuristic_fallback => {
                log::warn!("{e}; falling back to the heuristic oracle");
                score_cluster(c, &HeuristicOracle, opts.z)?
            }
            Err(e) => return Err(e),
        };
    }
    let pruning = prune_clusters(&clusters);
    let fields = recover_clusters(&pruning.kept, &pruning.pruned, &vectors);
    Ok(FieldPrediction {
        fields,
        clusters,
        pruning,
    })
}

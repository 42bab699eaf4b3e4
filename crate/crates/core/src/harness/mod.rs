//! Synthetic corpora, scoring, and property checkers used by tests and the
//! `synth` / `eval` commands.

pub mod generate;
pub mod score;

use crate::extract::{separate_blocks, separate_records};
use crate::fields::{location_vectors, partial_perfect_match, perfect_match};
use crate::model::{vertically_aligned, DocumentStream};
use crate::template::{NodeType, Template};

pub use generate::{generate, prop_spec, random_spec, GeneratedDocument, GeneratorSpec, GroundTruth, Shape};
pub use score::{flatten_extraction, flatten_kv, score, DatasetReport, DocumentScore, Pair, ScoreReport};

/// Violations of the compliance conditions under the given template: table
/// values aligned with zero or several header phrases, and key-value values
/// not directly preceded by a field.
pub fn compliance_violations(doc: &DocumentStream, template: &Template) -> Vec<String> {
    let mut out = Vec::new();
    let Ok(spans) = separate_records(&doc.rows, template) else {
        out.push("template fields never appear".to_string());
        return out;
    };
    for span in &spans {
        let (blocks, _) = separate_blocks(&doc.rows, span, template);
        for b in &blocks {
            let node = template.node(b.node_id);
            match b.block_type {
                NodeType::Table => {
                    let header = &doc.rows[b.first_row()];
                    for &r in &b.rows[1..] {
                        for p in &doc.rows[r].phrases {
                            let hits = header.phrases.iter().filter(|h| vertically_aligned(h, p)).count();
                            if hits != 1 {
                                out.push(format!("phrase {} aligns with {hits} header phrases", p.index));
                            }
                        }
                    }
                }
                NodeType::KeyValue => {
                    let fields = node.field_set();
                    let mut phrases: Vec<_> = b.rows.iter().flat_map(|&r| &doc.rows[r].phrases).collect();
                    phrases.sort_by_key(|p| p.index);
                    for (i, p) in phrases.iter().enumerate() {
                        let is_value = !fields.contains(p.text.as_str());
                        let after_field = i > 0 && fields.contains(phrases[i - 1].text.as_str());
                        if is_value && !after_field {
                            out.push(format!("value phrase {} follows no field", p.index));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Pairs of fields of node `node` whose location vectors break the expected
/// match: equal lengths must perfectly match, unequal lengths must partially
/// match with the longer vector supplying the subsequence.
pub fn field_match_counterexamples(doc: &DocumentStream, template: &Template, node: usize) -> Vec<(String, String)> {
    let vectors = location_vectors(doc);
    let fields = &template.node(node).fields;
    let mut out = Vec::new();
    for (a, fa) in fields.iter().enumerate() {
        for fb in &fields[a + 1..] {
            let (Some(va), Some(vb)) = (vectors.get(fa), vectors.get(fb)) else {
                out.push((fa.clone(), fb.clone()));
                continue;
            };
            let ok = if va.len() == vb.len() {
                perfect_match(va, vb).matched
            } else if va.len() > vb.len() {
                partial_perfect_match(va, vb)
            } else {
                partial_perfect_match(vb, va)
            };
            if !ok {
                out.push((fa.clone(), fb.clone()));
            }
        }
    }
    out
}

//! Precision and recall over key-value pairs.
//!
//! Pairs are compared as multisets: a pair counts `min(predicted, truth)`
//! times, so repeated identical cells across tuples are not collapsed.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::extract::{Extraction, ExtractionObject};

/// `(key, value)`; `None` is a missing value.
pub type Pair = (String, Option<String>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub precision: f64,
    pub recall: f64,
}

/// Table cells become `(header, cell)` pairs, missing cells included; key-value
/// pairs pass through; children follow their parent.
pub fn flatten_kv(objects: &[ExtractionObject]) -> Vec<Pair> {
    let mut out = Vec::new();
    for o in objects {
        out.extend(o.pairs());
        out.extend(flatten_kv(&o.children));
    }
    out
}

pub fn flatten_extraction(ex: &Extraction) -> Vec<Pair> {
    ex.records.iter().flat_map(|r| flatten_kv(&r.objects)).collect()
}

/// Both sides empty scores (1, 1); exactly one side empty scores (0, 0).
pub fn score(predicted: &[Pair], truth: &[Pair]) -> ScoreReport {
    match (predicted.is_empty(), truth.is_empty()) {
        (true, true) => return ScoreReport { precision: 1.0, recall: 1.0 },
        (true, false) | (false, true) => return ScoreReport { precision: 0.0, recall: 0.0 },
        (false, false) => {}
    }
    let mut counts: HashMap<&Pair, usize> = HashMap::new();
    for p in truth {
        *counts.entry(p).or_default() += 1;
    }
    let mut hits = 0usize;
    for p in predicted {
        if let Some(c) = counts.get_mut(p) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    ScoreReport {
        precision: hits as f64 / predicted.len() as f64,
        recall: hits as f64 / truth.len() as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentScore {
    pub document: String,
    pub precision: f64,
    pub recall: f64,
}

/// Per-document scores and their unweighted means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub documents: Vec<DocumentScore>,
    pub precision: f64,
    pub recall: f64,
}

impl DatasetReport {
    pub fn from_documents(documents: Vec<DocumentScore>) -> Self {
        let n = documents.len().max(1) as f64;
        let precision = documents.iter().map(|d| d.precision).sum::<f64>() / n;
        let recall = documents.iter().map(|d| d.recall).sum::<f64>() / n;
        Self {
            documents,
            precision,
            recall,
        }
    }

    pub fn to_table(&self) -> String {
        let width = self
            .documents
            .iter()
            .map(|d| d.document.len())
            .chain(["document".len(), "mean".len()])
            .max()
            .unwrap_or(8);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  precision  recall", "document");
        for d in &self.documents {
            let _ = writeln!(s, "{:<width$}  {:>9.4}  {:>6.4}", d.document, d.precision, d.recall);
        }
        let _ = writeln!(s, "{:<width$}  {:>9.4}  {:>6.4}", "mean", self.precision, self.recall);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::NodeType;
    use proptest::prelude::*;

    fn pair(k: &str, v: Option<&str>) -> Pair {
        (k.to_string(), v.map(str::to_string))
    }

    #[test]
    fn nine_pairs_plus_one_extra() {
        let truth: Vec<Pair> = (0..9).map(|i| pair(&format!("k{i}"), Some(&i.to_string()))).collect();
        let mut predicted = truth.clone();
        predicted.push(pair("extra", None));
        let r = score(&predicted, &truth);
        assert_eq!(r, ScoreReport { precision: 0.9, recall: 1.0 });
    }

    #[test]
    fn identity_disjoint_and_empty() {
        let t = vec![pair("a", Some("1")), pair("b", None)];
        assert_eq!(score(&t, &t), ScoreReport { precision: 1.0, recall: 1.0 });
        let other = vec![pair("a", Some("2"))];
        assert_eq!(score(&other, &t), ScoreReport { precision: 0.0, recall: 0.0 });
        assert_eq!(score(&[], &[]), ScoreReport { precision: 1.0, recall: 1.0 });
        assert_eq!(score(&[], &t), ScoreReport { precision: 0.0, recall: 0.0 });
        assert_eq!(score(&t, &[]), ScoreReport { precision: 0.0, recall: 0.0 });
    }

    #[test]
    fn flatten_table_and_children() {
        let child = ExtractionObject {
            node_id: 1,
            obj_type: NodeType::KeyValue,
            fields: vec!["Gender".into()],
            content: vec![vec![Some("Gender".into()), Some("FEMALE".into())]],
            children: vec![],
        };
        let table = ExtractionObject {
            node_id: 0,
            obj_type: NodeType::Table,
            fields: vec!["Number".into(), "Completed".into()],
            content: vec![
                vec![Some("05-01".into()), None],
                vec![Some("05-02".into()), Some("yes 1".into())],
            ],
            children: vec![child],
        };
        let pairs = flatten_kv(&[table]);
        assert_eq!(pairs.len(), 5);
        assert_eq!(pairs[0], pair("Number", Some("05-01")));
        assert_eq!(pairs[1], pair("Completed", None));
        assert_eq!(pairs[4], pair("Gender", Some("FEMALE")));
        assert!(flatten_kv(&[]).is_empty());
    }

    #[test]
    fn dataset_mean_and_table() {
        let r = DatasetReport::from_documents(vec![
            DocumentScore { document: "a".into(), precision: 1.0, recall: 0.5 },
            DocumentScore { document: "b".into(), precision: 0.5, recall: 1.0 },
        ]);
        assert_eq!((r.precision, r.recall), (0.75, 0.75));
        assert!(r.to_table().lines().last().unwrap().starts_with("mean"));
    }

    fn arb_pairs() -> impl Strategy<Value = Vec<Pair>> {
        prop::collection::vec(
            (0u8..4, prop::option::of(0u8..3)).prop_map(|(k, v)| (format!("k{k}"), v.map(|x| x.to_string()))),
            0..12,
        )
    }

    proptest! {
        #[test]
        fn swap_exchanges_precision_and_recall(p in arb_pairs(), t in arb_pairs()) {
            let a = score(&p, &t);
            let b = score(&t, &p);
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
        }

        #[test]
        fn duplicating_everything_is_neutral(p in arb_pairs(), t in arb_pairs()) {
            let dp: Vec<Pair> = p.iter().chain(&p).cloned().collect();
            let dt: Vec<Pair> = t.iter().chain(&t).cloned().collect();
            let a = score(&p, &t);
            let b = score(&dp, &dt);
            prop_assert!((a.precision - b.precision).abs() < 1e-12);
            prop_assert!((a.recall - b.recall).abs() < 1e-12);
        }

        #[test]
        fn scores_are_bounded(p in arb_pairs(), t in arb_pairs()) {
            let a = score(&p, &t);
            prop_assert!((0.0..=1.0).contains(&a.precision) && (0.0..=1.0).contains(&a.recall));
        }
    }
}

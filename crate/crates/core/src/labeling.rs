//! Row label probabilities, the inference window and the alignment matrix.
//!
//! Every row gets a distribution over four labels: key row (K), value row
//! (V), key-value row (KV) and metadata (M). The solvers in
//! [`crate::solver`] pick one label per window row under the alignment
//! constraints.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fields::FieldSet;
use crate::model::{rows_well_aligned, Row};

pub const EPSILON: f64 = 0.0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    K,
    V,
    KV,
    M,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::K, Label::V, Label::KV, Label::M];

    /// Tie-break rank, lower wins: K, then KV, then V, then M.
    pub fn preference(self) -> u8 {
        match self {
            Label::K => 0,
            Label::KV => 1,
            Label::V => 2,
            Label::M => 3,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::K => "K",
            Label::V => "V",
            Label::KV => "KV",
            Label::M => "M",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowLabelProbs {
    pub p_k: f64,
    pub p_v: f64,
    pub p_kv: f64,
    pub p_m: f64,
}

impl RowLabelProbs {
    /// Pair-count probabilities with the metadata share, before smoothing.
    ///
    /// Counts consecutive phrase pairs (field, field), (value, value) and
    /// (field, value); (value, field) pairs are not counted. A one-phrase row
    /// counts as a single K or V observation.
    pub fn raw(row: &Row, fields: &FieldSet) -> Self {
        Self::raw_with(row, fields, EPSILON)
    }

    pub fn raw_with(row: &Row, fields: &FieldSet, epsilon: f64) -> Self {
        let is_field: Vec<bool> = row.phrases.iter().map(|p| fields.contains(&p.text)).collect();
        let (mut k, mut v, mut kv) = (0usize, 0usize, 0usize);
        if let [only] = is_field.as_slice() {
            if *only {
                k = 1;
            } else {
                v = 1;
            }
        }
        for w in is_field.windows(2) {
            match (w[0], w[1]) {
                (true, true) => k += 1,
                (false, false) => v += 1,
                (true, false) => kv += 1,
                (false, true) => {}
            }
        }
        let m = (k + v + kv) as f64;
        let share = |c: usize| if m > 0.0 { c as f64 / m } else { 0.0 };
        let norm = 1.0 + epsilon;
        Self {
            p_k: share(k) / norm,
            p_v: share(v) / norm,
            p_kv: share(kv) / norm,
            p_m: epsilon / norm,
        }
    }

    /// Adds `EPSILON` to every label and renormalizes, so no label has zero mass.
    pub fn smoothed(self) -> Self {
        self.smoothed_with(EPSILON)
    }

    pub fn smoothed_with(self, epsilon: f64) -> Self {
        let [k, v, kv, m] = [self.p_k, self.p_v, self.p_kv, self.p_m].map(|p| p + epsilon);
        let sum = k + v + kv + m;
        Self {
            p_k: k / sum,
            p_v: v / sum,
            p_kv: kv / sum,
            p_m: m / sum,
        }
    }

    pub fn get(&self, label: Label) -> f64 {
        match label {
            Label::K => self.p_k,
            Label::V => self.p_v,
            Label::KV => self.p_kv,
            Label::M => self.p_m,
        }
    }

    pub fn ln(&self, label: Label) -> f64 {
        self.get(label).ln()
    }

    /// Labels by descending probability, ties broken by [`Label::preference`].
    pub fn ranked(&self) -> [Label; 4] {
        let mut order = Label::ALL;
        order.sort_by(|a, b| {
            self.get(*b)
                .total_cmp(&self.get(*a))
                .then(a.preference().cmp(&b.preference()))
        });
        order
    }
}

/// Smoothed probabilities used by the solvers.
pub fn row_label_probabilities(row: &Row, fields: &FieldSet) -> RowLabelProbs {
    RowLabelProbs::raw(row, fields).smoothed()
}

/// A consecutive run of rows starting at the first document row.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceWindow {
    pub rows: Vec<Row>,
    pub start_row: usize,
    /// Exclusive.
    pub end_row: usize,
    /// Set when some field never occurred twice and the whole document was used.
    pub fallback: bool,
}

impl InferenceWindow {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn probabilities(&self, fields: &FieldSet) -> Vec<RowLabelProbs> {
        self.probabilities_with(fields, EPSILON)
    }

    pub fn probabilities_with(&self, fields: &FieldSet, epsilon: f64) -> Vec<RowLabelProbs> {
        self.rows
            .iter()
            .map(|r| RowLabelProbs::raw_with(r, fields, epsilon).smoothed_with(epsilon))
            .collect()
    }
}

/// Shortest row prefix in which every field text occurs at least twice.
pub fn select_window(rows: &[Row], fields: &FieldSet) -> InferenceWindow {
    let full = |fallback| InferenceWindow {
        rows: rows.to_vec(),
        start_row: 0,
        end_row: rows.len(),
        fallback,
    };
    if fields.is_empty() {
        log::warn!("no predicted fields; using the whole document as the inference window");
        return full(true);
    }
    let mut counts: indexmap::IndexMap<&str, usize> =
        fields.iter().map(|f| (f.as_str(), 0)).collect();
    let mut short = fields.len();
    for (i, row) in rows.iter().enumerate() {
        for t in row.texts() {
            if let Some(c) = counts.get_mut(t) {
                *c += 1;
                if *c == 2 {
                    short -= 1;
                }
            }
        }
        if short == 0 {
            return InferenceWindow {
                rows: rows[..=i].to_vec(),
                start_row: 0,
                end_row: i + 1,
                fallback: false,
            };
        }
    }
    log::warn!("some fields occur fewer than twice; using the whole document as the inference window");
    full(true)
}

/// Row-pair alignment `A[i][j]` over a window, with `i` the upper row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMatrix {
    n: usize,
    cells: Vec<bool>,
}

impl AlignmentMatrix {
    pub fn from_rows(rows: &[Row]) -> Self {
        let n = rows.len();
        let mut cells = Vec::with_capacity(n * n);
        for upper in rows {
            for lower in rows {
                cells.push(rows_well_aligned(upper, lower));
            }
        }
        Self { n, cells }
    }

    /// Builds from explicit rows of booleans; used for synthetic instances.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let cells = (0..n * n).map(|c| f(c / n, c % n)).collect();
        Self { n, cells }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }
}

pub fn alignment_matrix(window: &InferenceWindow) -> AlignmentMatrix {
    AlignmentMatrix::from_rows(&window.rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelAssignment {
    pub labels: Vec<Label>,
    pub objective: f64,
    /// False when the time budget ran out before the search completed.
    pub optimal: bool,
}

/// Sum of log-probabilities of the chosen labels.
pub fn objective(labels: &[Label], probs: &[RowLabelProbs]) -> f64 {
    labels.iter().zip(probs).map(|(l, p)| p.ln(*l)).sum()
}

/// First violated constraint, if any: a K row with no later aligned V row,
/// or a V row with no earlier aligned K row.
pub fn check_feasible(labels: &[Label], a: &AlignmentMatrix) -> Result<(), String> {
    for (i, l) in labels.iter().enumerate() {
        match l {
            Label::K => {
                if !(i + 1..labels.len()).any(|j| labels[j] == Label::V && a.get(i, j)) {
                    return Err(format!("key row {i} has no later aligned value row"));
                }
            }
            Label::V => {
                if !(0..i).any(|j| labels[j] == Label::K && a.get(j, i)) {
                    return Err(format!("value row {i} has no earlier aligned key row"));
                }
            }
            Label::KV | Label::M => {}
        }
    }
    Ok(())
}

/// Lexicographic tie-break between assignments of equal objective.
pub fn preferred(a: &[Label], b: &[Label]) -> bool {
    a.iter()
        .map(|l| l.preference())
        .lt(b.iter().map(|l| l.preference()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, Phrase};
    use proptest::prelude::*;

    fn row(texts: &[&str]) -> Row {
        Row {
            row_index: 0,
            phrases: texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let x = i as f64 * 50.0;
                    Phrase::new(*t, i as u32, 1, BBox::new(x, 0.0, x + 40.0, 10.0))
                })
                .collect(),
        }
    }

    fn set(items: &[&str]) -> FieldSet {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn raw_probabilities_all_fields() {
        let r = row(&["Date", "Number", "Type", "Officer"]);
        let p = RowLabelProbs::raw(&r, &set(&["Date", "Number", "Type", "Officer"]));
        assert!(close(p.p_k, 1.0 / (1.0 + EPSILON)));
        assert_eq!((p.p_v, p.p_kv), (0.0, 0.0));
        assert!(close(p.p_m, EPSILON / (1.0 + EPSILON)));
    }

    #[test]
    fn raw_probabilities_with_false_positive_fields() {
        // pairs: vv vv vv vF FF Fv vF -> V=3, K=1, KV=1; both vF pairs are skipped
        let r = row(&["a1", "a2", "a3", "a4", "Yes", "No", "a5", "Yes2"]);
        let p = RowLabelProbs::raw(&r, &set(&["Yes", "No", "Yes2"]));
        let d = 1.0 + EPSILON;
        assert!(close(p.p_v, 3.0 / (5.0 * d)));
        assert!(close(p.p_k, 1.0 / (5.0 * d)));
        assert!(close(p.p_kv, 1.0 / (5.0 * d)));
    }

    #[test]
    fn raw_probabilities_degenerate_rows() {
        let p = RowLabelProbs::raw(&row(&["5/1", "7"]), &set(&[]));
        assert!(close(p.p_v, 1.0 / (1.0 + EPSILON)));
        let p = RowLabelProbs::raw(&row(&["Date"]), &set(&["Date"]));
        assert!(close(p.p_k, 1.0 / (1.0 + EPSILON)));
        let p = RowLabelProbs::raw(&row(&["5/1"]), &set(&["Date"]));
        assert!(close(p.p_v, 1.0 / (1.0 + EPSILON)));
        // only a value-then-field pair: nothing counted
        let p = RowLabelProbs::raw(&row(&["5/1", "Date"]), &set(&["Date"]));
        assert_eq!((p.p_k, p.p_v, p.p_kv), (0.0, 0.0, 0.0));
        let s = p.smoothed();
        assert!(close(s.p_k, s.p_v) && close(s.p_v, s.p_kv));
    }

    #[test]
    fn smoothing_normalizes_and_removes_zeros() {
        let p = row_label_probabilities(&row(&["Date", "Number"]), &set(&["Date", "Number"]));
        assert!(close(p.p_k + p.p_v + p.p_kv + p.p_m, 1.0));
        assert!(Label::ALL.iter().all(|l| p.get(*l) > 0.0));
        assert_eq!(p.ranked()[0], Label::K);
    }

    #[test]
    fn ranking_breaks_ties_by_preference() {
        let p = RowLabelProbs { p_k: 0.25, p_v: 0.25, p_kv: 0.25, p_m: 0.25 };
        assert_eq!(p.ranked(), [Label::K, Label::KV, Label::V, Label::M]);
    }

    fn rows_of(texts: &[&[&str]]) -> Vec<Row> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Row { row_index: i, ..row(t) })
            .collect()
    }

    #[test]
    fn window_stops_when_every_field_seen_twice() {
        let rows = rows_of(&[
            &["Title"],
            &["Date", "Number"],
            &["1", "2"],
            &["Date", "Number"],
            &["3", "4"],
        ]);
        let w = select_window(&rows, &set(&["Date", "Number"]));
        assert_eq!((w.start_row, w.end_row, w.fallback), (0, 4, false));
        assert_eq!(w.len(), 4);

        let w = select_window(&rows, &set(&["Date", "Title"]));
        assert!(w.fallback);
        assert_eq!(w.len(), 5);

        let w = select_window(&rows, &set(&[]));
        assert!(w.fallback);

        // both occurrences within a single row
        let rows = rows_of(&[&["A", "B", "A", "B"], &["1"]]);
        assert_eq!(select_window(&rows, &set(&["A", "B"])).end_row, 1);
    }

    #[test]
    fn alignment_matrix_shapes() {
        let rows = rows_of(&[&["A", "B"], &["1", "2"]]);
        let w = select_window(&rows, &set(&[]));
        let a = alignment_matrix(&w);
        assert_eq!(a.len(), 2);
        assert!(a.get(0, 1) && a.get(1, 0));
        let one = AlignmentMatrix::from_rows(&rows[..1]);
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn feasibility_checker() {
        let a = AlignmentMatrix::from_fn(3, |_, _| true);
        use Label::*;
        assert!(check_feasible(&[K, V, M], &a).is_ok());
        assert!(check_feasible(&[K, M, M], &a).is_err());
        assert!(check_feasible(&[V, K, V], &a).is_err());
        let a = AlignmentMatrix::from_fn(3, |i, j| !(i == 0 && j == 2));
        assert!(check_feasible(&[K, M, V], &a).is_err());
        assert!(check_feasible(&[M, M, M], &a).is_ok());
    }

    #[test]
    fn lexicographic_preference() {
        use Label::*;
        assert!(preferred(&[K, V], &[KV, V]));
        assert!(preferred(&[KV, M], &[V, K]));
        assert!(!preferred(&[M], &[M]));
    }

    fn arb_probs() -> impl Strategy<Value = RowLabelProbs> {
        (0u32..20, 0u32..20, 0u32..20).prop_filter_map("need mass", |(k, v, kv)| {
            let m = f64::from(k + v + kv);
            (m > 0.0).then(|| {
                let d = 1.0 + EPSILON;
                RowLabelProbs {
                    p_k: f64::from(k) / m / d,
                    p_v: f64::from(v) / m / d,
                    p_kv: f64::from(kv) / m / d,
                    p_m: EPSILON / d,
                }
            })
        })
    }

    proptest! {
        #[test]
        fn smoothing_preserves_ranking_among_row_labels(p in arb_probs()) {
            let s = p.smoothed();
            prop_assert!((s.p_k + s.p_v + s.p_kv + s.p_m - 1.0).abs() < 1e-9);
            for a in [Label::K, Label::V, Label::KV] {
                for b in [Label::K, Label::V, Label::KV] {
                    prop_assert_eq!(p.get(a) > p.get(b), s.get(a) > s.get(b));
                }
            }
        }

        #[test]
        fn log_objective_matches_product(ps in prop::collection::vec(arb_probs(), 1..10), picks in prop::collection::vec(0usize..4, 10)) {
            let probs: Vec<RowLabelProbs> = ps.iter().map(|p| p.smoothed()).collect();
            let labels: Vec<Label> = probs.iter().zip(&picks).map(|(_, i)| Label::ALL[*i]).collect();
            let product: f64 = labels.iter().zip(&probs).map(|(l, p)| p.get(*l)).product();
            prop_assert!((objective(&labels, &probs).exp() - product).abs() < 1e-9);
        }
    }
}

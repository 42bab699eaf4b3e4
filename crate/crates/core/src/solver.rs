//! Row label assignment: an exact branch-and-bound search and a repair heuristic.
//!
//! Both maximize the sum of per-row log-probabilities subject to: every K row
//! has a later aligned V row, and every V row has an earlier aligned K row.

use std::io::Write;
use std::time::{Duration, Instant};

use crate::labeling::{check_feasible, objective, preferred, AlignmentMatrix, Label, LabelAssignment, RowLabelProbs};

pub const DEFAULT_BUDGET: Duration = Duration::from_secs(5);

const TOL: f64 = 1e-9;
const CLOCK_EVERY: u64 = 4096;

/// Per-row argmax, then repeated repair of infeasible K and V rows. Each
/// repair moves a row further down its own ranking, so the loop terminates;
/// KV and M need no support and always end it.
pub fn solve_heuristic(probs: &[RowLabelProbs], a: &AlignmentMatrix) -> LabelAssignment {
    let n = probs.len();
    let ranked: Vec<[Label; 4]> = probs.iter().map(RowLabelProbs::ranked).collect();
    let mut pos = vec![0usize; n];
    let mut labels: Vec<Label> = ranked.iter().map(|r| r[0]).collect();

    let supported = |labels: &[Label], i: usize, l: Label| match l {
        Label::K => (i + 1..n).any(|j| labels[j] == Label::V && a.get(i, j)),
        Label::V => (0..i).any(|j| labels[j] == Label::K && a.get(j, i)),
        Label::KV | Label::M => true,
    };

    loop {
        let mut changed = false;
        for i in 0..n {
            if supported(&labels, i, labels[i]) {
                continue;
            }
            let next = (pos[i] + 1..4).find(|&p| supported(&labels, i, ranked[i][p]));
            match next {
                Some(p) => {
                    pos[i] = p;
                    labels[i] = ranked[i][p];
                }
                None => {
                    pos[i] = 4;
                    labels[i] = Label::M;
                }
            }
            changed = true;
        }
        if !changed {
            break;
        }
    }
    debug_assert!(check_feasible(&labels, a).is_ok());
    LabelAssignment {
        objective: objective(&labels, probs),
        labels,
        optimal: false,
    }
}

pub fn solve_exact(probs: &[RowLabelProbs], a: &AlignmentMatrix, budget: Duration) -> LabelAssignment {
    solve_exact_traced(probs, a, budget, None)
}

/// Exact search; `trace` receives one `objective<TAB>elapsed_seconds` line per
/// new incumbent.
pub fn solve_exact_traced(
    probs: &[RowLabelProbs],
    a: &AlignmentMatrix,
    budget: Duration,
    trace: Option<&mut dyn Write>,
) -> LabelAssignment {
    assert_eq!(probs.len(), a.len(), "one probability row per matrix row");
    let mut search = Search::new(probs, a, budget, trace);
    search.run();
    LabelAssignment {
        objective: search.best_obj,
        labels: search.best,
        optimal: !search.timed_out,
    }
}

struct Frame {
    row: usize,
    order: [Label; 4],
    next: usize,
    /// Label applied at `row` before descending, plus the K rows it closed.
    applied: Option<(Label, Vec<usize>)>,
}

struct Search<'a, 't> {
    n: usize,
    lp: Vec<[f64; 4]>,
    order: Vec<[Label; 4]>,
    a: &'a AlignmentMatrix,
    /// Last later row aligned below row i, i.e. the last chance to close a K at i.
    last_support: Vec<Option<usize>>,
    /// `v_reach[k][d]`: some K-capable row in `d..k` is aligned above `k`.
    v_reach: Vec<Vec<bool>>,

    labels: Vec<Label>,
    open: Vec<bool>,
    open_rows: Vec<usize>,
    /// Number of assigned K rows aligned above each row.
    k_support: Vec<u32>,
    partial: f64,

    best: Vec<Label>,
    best_obj: f64,

    start: Instant,
    budget: Duration,
    nodes: u64,
    timed_out: bool,
    trace: Option<&'t mut dyn Write>,
}

fn slot(l: Label) -> usize {
    match l {
        Label::K => 0,
        Label::V => 1,
        Label::KV => 2,
        Label::M => 3,
    }
}

impl<'a, 't> Search<'a, 't> {
    fn new(
        probs: &[RowLabelProbs],
        a: &'a AlignmentMatrix,
        budget: Duration,
        trace: Option<&'t mut dyn Write>,
    ) -> Self {
        let n = probs.len();
        let lp: Vec<[f64; 4]> = probs.iter().map(|p| Label::ALL.map(|l| p.ln(l))).collect();
        let last_support: Vec<Option<usize>> =
            (0..n).map(|i| (i + 1..n).rev().find(|&j| a.get(i, j))).collect();
        let v_reach = (0..n)
            .map(|k| {
                let mut reach = vec![false; k + 2];
                for d in (0..k).rev() {
                    reach[d] = reach[d + 1] || (last_support[d].is_some() && a.get(d, k));
                }
                reach
            })
            .collect();

        let heuristic = solve_heuristic(probs, a);
        let all_m = vec![Label::M; n];
        let all_m_obj = objective(&all_m, probs);
        let (best, best_obj) = if all_m_obj > heuristic.objective + TOL
            || ((all_m_obj - heuristic.objective).abs() <= TOL && preferred(&all_m, &heuristic.labels))
        {
            (all_m, all_m_obj)
        } else {
            (heuristic.labels, heuristic.objective)
        };

        Self {
            n,
            lp,
            order: probs.iter().map(RowLabelProbs::ranked).collect(),
            a,
            last_support,
            v_reach,
            labels: vec![Label::M; n],
            open: vec![false; n],
            open_rows: Vec::new(),
            k_support: vec![0; n],
            partial: 0.0,
            best,
            best_obj,
            start: Instant::now(),
            budget,
            nodes: 0,
            timed_out: false,
            trace,
        }
    }

    fn feasible(&self, row: usize, l: Label) -> bool {
        match l {
            Label::K => self.last_support[row].is_some(),
            Label::V => self.k_support[row] > 0,
            Label::KV | Label::M => true,
        }
    }

    fn apply(&mut self, row: usize, l: Label) -> Vec<usize> {
        self.labels[row] = l;
        self.partial += self.lp[row][slot(l)];
        let mut closed = Vec::new();
        match l {
            Label::K => {
                self.open[row] = true;
                self.open_rows.push(row);
                for k in row + 1..self.n {
                    if self.a.get(row, k) {
                        self.k_support[k] += 1;
                    }
                }
            }
            Label::V => {
                for &i in &self.open_rows {
                    if self.open[i] && self.a.get(i, row) {
                        closed.push(i);
                    }
                }
                for &i in &closed {
                    self.open[i] = false;
                }
            }
            Label::KV | Label::M => {}
        }
        closed
    }

    fn undo(&mut self, row: usize, l: Label, closed: Vec<usize>) {
        self.partial -= self.lp[row][slot(l)];
        match l {
            Label::K => {
                self.open[row] = false;
                let popped = self.open_rows.pop();
                debug_assert_eq!(popped, Some(row));
                for k in row + 1..self.n {
                    if self.a.get(row, k) {
                        self.k_support[k] -= 1;
                    }
                }
            }
            Label::V => {
                for i in closed {
                    self.open[i] = true;
                }
            }
            Label::KV | Label::M => {}
        }
        self.labels[row] = Label::M;
    }

    /// An open K row whose last aligned row is already assigned can never close.
    fn dead_open(&self, assigned_through: usize) -> bool {
        self.open_rows
            .iter()
            .any(|&i| self.open[i] && self.last_support[i].is_none_or(|s| s <= assigned_through))
    }

    /// Upper bound on the objective of rows `from..n`.
    fn rest_bound(&self, from: usize) -> f64 {
        (from..self.n)
            .map(|k| {
                let lp = &self.lp[k];
                let mut best = lp[2].max(lp[3]);
                if self.last_support[k].is_some() {
                    best = best.max(lp[0]);
                }
                if self.k_support[k] > 0 || self.v_reach[k][from] {
                    best = best.max(lp[1]);
                }
                best
            })
            .sum()
    }

    fn offer_leaf(&mut self) {
        // Recomputed rather than read from `partial`, which drifts under add/subtract.
        let obj: f64 = self.labels.iter().zip(&self.lp).map(|(l, lp)| lp[slot(*l)]).sum();
        let better = obj > self.best_obj + TOL
            || ((obj - self.best_obj).abs() <= TOL && preferred(&self.labels, &self.best));
        if better {
            self.best_obj = obj;
            self.best.clone_from(&self.labels);
            if let Some(t) = self.trace.as_deref_mut() {
                let _ = writeln!(t, "{obj}\t{:.6}", self.start.elapsed().as_secs_f64());
            }
        }
    }

    fn run(&mut self) {
        let mut stack = vec![Frame {
            row: 0,
            order: self.order.first().copied().unwrap_or(Label::ALL),
            next: 0,
            applied: None,
        }];
        while let Some(top) = stack.last_mut() {
            let row = top.row;
            if let Some((l, closed)) = top.applied.take() {
                self.undo(row, l, closed);
            }
            if row == self.n {
                if self.open_rows.iter().all(|&i| !self.open[i]) {
                    self.offer_leaf();
                }
                stack.pop();
                continue;
            }
            if top.next == 4 {
                stack.pop();
                continue;
            }
            let l = top.order[top.next];
            top.next += 1;

            self.nodes += 1;
            if self.nodes.is_multiple_of(CLOCK_EVERY) && self.start.elapsed() > self.budget {
                self.timed_out = true;
                log::warn!(
                    "label search stopped after {} nodes; returning best feasible assignment",
                    self.nodes
                );
                break;
            }
            if !self.feasible(row, l) {
                continue;
            }
            let closed = self.apply(row, l);
            if self.dead_open(row) || self.partial + self.rest_bound(row + 1) < self.best_obj - TOL {
                self.undo(row, l, closed);
                continue;
            }
            let top = stack.last_mut().expect("frame present");
            top.applied = Some((l, closed));
            let next = row + 1;
            stack.push(Frame {
                row: next,
                order: self.order.get(next).copied().unwrap_or(Label::ALL),
                next: 0,
                applied: None,
            });
        }
        // Unwind any state left by an interrupted search.
        while let Some(mut f) = stack.pop() {
            if let Some((l, closed)) = f.applied.take() {
                self.undo(f.row, l, closed);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::EPSILON;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use Label::*;

    fn probs(k: f64, v: f64, kv: f64) -> RowLabelProbs {
        let d = 1.0 + EPSILON;
        RowLabelProbs { p_k: k / d, p_v: v / d, p_kv: kv / d, p_m: EPSILON / d }.smoothed()
    }

    /// Exhaustive optimum over all 4^n assignments.
    fn brute_force(p: &[RowLabelProbs], a: &AlignmentMatrix) -> (f64, Vec<Label>) {
        let n = p.len();
        let mut best = (f64::NEG_INFINITY, vec![]);
        for code in 0..4usize.pow(n as u32) {
            let labels: Vec<Label> = (0..n).map(|i| Label::ALL[(code >> (2 * i)) & 3]).collect();
            if check_feasible(&labels, a).is_ok() {
                let obj = objective(&labels, p);
                if obj > best.0 + TOL || ((obj - best.0).abs() <= TOL && preferred(&labels, &best.1)) {
                    best = (obj, labels);
                }
            }
        }
        best
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<RowLabelProbs>, AlignmentMatrix) {
        let p = (0..n)
            .map(|_| {
                let c: [u32; 3] = [rng.gen_range(0..5), rng.gen_range(0..5), rng.gen_range(0..5)];
                let m = f64::from(c.iter().sum::<u32>().max(1));
                probs(f64::from(c[0]) / m, f64::from(c[1]) / m, f64::from(c[2]) / m)
            })
            .collect();
        let density: f64 = rng.gen_range(0.2..1.0);
        let cells: Vec<bool> = (0..n * n).map(|_| rng.gen_bool(density)).collect();
        (p, AlignmentMatrix::from_fn(n, |i, j| cells[i * n + j]))
    }

    #[test]
    fn key_then_value() {
        let p = [probs(1.0, 0.0, 0.0), probs(0.0, 1.0, 0.0)];
        let a = AlignmentMatrix::from_fn(2, |_, _| true);
        let out = solve_exact(&p, &a, DEFAULT_BUDGET);
        assert_eq!(out.labels, [K, V]);
        assert!(out.optimal);
        assert!((out.objective - brute_force(&p, &a).0).abs() < 1e-12);
    }

    #[test]
    fn lone_kv_row() {
        let p = [probs(0.2, 0.0, 0.8)];
        let a = AlignmentMatrix::from_fn(1, |_, _| true);
        assert_eq!(solve_exact(&p, &a, DEFAULT_BUDGET).labels, [KV]);
        let p = [probs(1.0, 0.0, 0.0)];
        assert_ne!(solve_exact(&p, &a, DEFAULT_BUDGET).labels, [K]);
    }

    #[test]
    fn heuristic_repairs_unsupported_key() {
        // K row whose only later row is misaligned
        let p = [probs(0.6, 0.0, 0.4), probs(0.0, 1.0, 0.0)];
        let a = AlignmentMatrix::from_fn(2, |_, _| false);
        let h = solve_heuristic(&p, &a);
        assert!(check_feasible(&h.labels, &a).is_ok());
        assert_eq!(h.labels, [KV, M]);
        let e = solve_exact(&p, &a, DEFAULT_BUDGET);
        assert!(e.objective >= h.objective - TOL);
    }

    #[test]
    fn heuristic_matches_exact_when_argmax_feasible() {
        let p = [probs(1.0, 0.0, 0.0), probs(0.0, 1.0, 0.0), probs(0.0, 1.0, 0.0)];
        let a = AlignmentMatrix::from_fn(3, |_, _| true);
        assert_eq!(solve_heuristic(&p, &a).labels, solve_exact(&p, &a, DEFAULT_BUDGET).labels);
    }

    #[test]
    fn metadata_dominant_rows() {
        let m = RowLabelProbs { p_k: 0.01, p_v: 0.01, p_kv: 0.01, p_m: 0.97 };
        let p = [m, m, m];
        let a = AlignmentMatrix::from_fn(3, |_, _| true);
        assert_eq!(solve_heuristic(&p, &a).labels, [M, M, M]);
        assert_eq!(solve_exact(&p, &a, DEFAULT_BUDGET).labels, [M, M, M]);
    }

    #[test]
    fn empty_window() {
        let a = AlignmentMatrix::from_fn(0, |_, _| true);
        let out = solve_exact(&[], &a, DEFAULT_BUDGET);
        assert!(out.labels.is_empty() && out.optimal);
    }

    #[test]
    fn exact_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..150 {
            let n = rng.gen_range(1..=7);
            let (p, a) = random_instance(&mut rng, n);
            let exact = solve_exact(&p, &a, Duration::from_secs(60));
            let (obj, labels) = brute_force(&p, &a);
            assert!(exact.optimal);
            assert!(check_feasible(&exact.labels, &a).is_ok());
            assert!((exact.objective - obj).abs() < 1e-9, "{} vs {}", exact.objective, obj);
            assert_eq!(exact.labels, labels);
            let h = solve_heuristic(&p, &a);
            assert!(check_feasible(&h.labels, &a).is_ok());
            assert!(exact.objective >= h.objective - TOL);
        }
    }

    #[test]
    fn trace_records_incumbents() {
        let p = [probs(1.0, 0.0, 0.0), probs(0.0, 1.0, 0.0)];
        let a = AlignmentMatrix::from_fn(2, |_, _| true);
        let mut buf = Vec::new();
        solve_exact_traced(&p, &a, DEFAULT_BUDGET, Some(&mut buf));
        let text = String::from_utf8(buf).unwrap();
        for line in text.lines() {
            let mut parts = line.split('\t');
            assert!(parts.next().unwrap().parse::<f64>().is_ok());
            assert!(parts.next().unwrap().parse::<f64>().is_ok());
        }
    }

    #[test]
    fn zero_budget_still_returns_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, a) = random_instance(&mut rng, 40);
        let out = solve_exact(&p, &a, Duration::ZERO);
        assert!(check_feasible(&out.labels, &a).is_ok());
        assert!((objective(&out.labels, &p) - out.objective).abs() < 1e-9);
    }
}
